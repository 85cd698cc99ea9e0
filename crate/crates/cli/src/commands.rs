use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use offload_core::compression::human_size;
use offload_core::dataset::{class_name, class_stats, parse_labels, DatasetSplit, Frame, ImageSize};
use offload_core::eval::{evaluate, read_detections, read_ground_truth, EvalOptions};
use offload_core::network::{calibrate, CalibrationMode, Observation, UplinkSampler};
use offload_core::pipeline::{end_to_end_delay, meets_budget, DelayBreakdown, Platform};
use offload_core::presets::{tradeoff_fixture, ReferenceSetup, CLASSES};
use offload_core::tradeoff::{
    emit_report, evaluate_strategies, pareto_frontier, per_class_table, read_fixture, select_best,
    FixtureRecord, ReportFormat, StrategyInput, StrategyKey, TradeoffPoint,
};
use serde::Deserialize;

use crate::config::{ChannelFile, ConfigError, RunConfig};

fn write_file(dir: &Path, name: &str, body: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

pub struct EvalArgs {
    pub detections: PathBuf,
    pub ground_truth: PathBuf,
    pub iou_threshold: f64,
    pub min_confidence: f64,
    pub out: Option<PathBuf>,
}

pub fn eval(args: &EvalArgs) -> Result<String> {
    let dets = read_detections(open(&args.detections)?)
        .with_context(|| format!("reading {}", args.detections.display()))?;
    let gts = read_ground_truth(open(&args.ground_truth)?)
        .with_context(|| format!("reading {}", args.ground_truth.display()))?;
    let summary = evaluate(
        &dets,
        &gts,
        EvalOptions {
            iou_threshold: args.iou_threshold,
            min_confidence: args.min_confidence,
        },
    );
    let map = summary
        .map
        .ok_or_else(|| anyhow!("ground truth is empty; mAP is undefined"))?;
    let mut s = String::from("class_id,class,ground_truths,detections,true_positives,ap\n");
    for m in summary.per_class.values() {
        let ap = m.ap.map(|v| format!("{v:.6}")).unwrap_or_else(|| "undefined".into());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{ap}",
            m.class_id,
            class_name(m.class_id),
            m.ground_truths,
            m.detections,
            m.true_positives
        );
    }
    let _ = writeln!(s, "mAP,{map:.6}");
    if let Some(out) = &args.out {
        fs::write(out, &s).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(s)
}

fn rate_label(rate: f64) -> String {
    format!("meets_{rate}hz")
}

fn strategy_keys(cfg: &RunConfig) -> Vec<StrategyKey> {
    cfg.scenarios.clone().unwrap_or_else(ReferenceSetup::strategy_keys)
}

/// Per-strategy delay table with budget checks; sampled uplink columns are
/// added only when a seed and a jittered channel are both configured.
pub fn simulate(cfg: &RunConfig) -> Result<String> {
    let keys = strategy_keys(cfg);
    let stochastic = cfg.seed.filter(|_| {
        keys.iter()
            .any(|k| cfg.profile(k.platform).channel.is_some_and(|c| c.jitter.is_some()))
    });
    let mut s = String::from(
        "platform,scenario,codec,quality,payload_bytes,payload,packets,compress_ms,uplink_ms,\
         decompress_ms,inference_ms,downlink_ms,total_ms,delivery_probability",
    );
    for r in &cfg.rate_hz {
        let _ = write!(s, ",{}", rate_label(*r));
    }
    if stochastic.is_some() {
        s.push_str(",sampled_mean_ms,sampled_p95_ms");
    }
    s.push('\n');
    for (i, key) in keys.iter().enumerate() {
        let strategy = cfg.setup.strategy(*key).with_context(|| key.to_string())?;
        let b: DelayBreakdown = end_to_end_delay(&strategy, &cfg.setup.curves, &cfg.setup.options)
            .with_context(|| key.to_string())?;
        let c = &strategy.compression;
        let _ = write!(
            s,
            "{},{},{},{},{:.0},{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.5}",
            key.platform,
            key.scenario,
            c.codec,
            c.quality.map(|q| q.to_string()).unwrap_or_default(),
            b.payload_bytes,
            human_size(b.payload_bytes),
            b.packet_count,
            b.compress_ms,
            b.uplink_ms,
            b.decompress_ms,
            b.inference_ms,
            b.downlink_ms,
            b.total_ms,
            b.delivery_probability
        );
        for r in &cfg.rate_hz {
            let _ = write!(s, ",{}", meets_budget(&b, *r));
        }
        if let Some(seed) = stochastic {
            match strategy.platform.channel.filter(|c| c.jitter.is_some()) {
                Some(ch) => {
                    let mut sampler = UplinkSampler::new(ch, seed.wrapping_add(i as u64))?;
                    let mut totals: Vec<f64> = (0..cfg.samples)
                        .map(|_| b.total_ms - b.uplink_ms + sampler.sample(b.payload_bytes))
                        .collect();
                    totals.sort_by(f64::total_cmp);
                    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
                    let p95 = totals[((totals.len() as f64 * 0.95).ceil() as usize).clamp(1, totals.len()) - 1];
                    let _ = write!(s, ",{mean:.2},{p95:.2}");
                }
                None => {
                    let _ = write!(s, ",{:.2},{:.2}", b.total_ms, b.total_ms);
                }
            }
        }
        s.push('\n');
    }
    if let Some(dir) = &cfg.output_dir {
        write_file(dir, "simulate.csv", &s)?;
    }
    Ok(s)
}

fn detection_files(dir: &Path) -> Result<BTreeMap<StrategyKey, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let Some((p, l)) = stem.split_once('_') else { continue };
        let key: StrategyKey = format!("{p}/{l}")
            .parse()
            .with_context(|| format!("detection file {} is not <platform>_<scenario>.csv", path.display()))?;
        out.insert(key, path);
    }
    Ok(out)
}

pub struct TradeoffOutput {
    pub report: String,
    pub summary: String,
}

pub fn tradeoff(cfg: &RunConfig) -> Result<TradeoffOutput> {
    let records: Vec<FixtureRecord> = match &cfg.fixture {
        Some(path) => read_fixture(open(path)?).with_context(|| format!("reading {}", path.display()))?,
        None => tradeoff_fixture(),
    };
    let mut fixtures: BTreeMap<StrategyKey, FixtureRecord> = BTreeMap::new();
    for r in records {
        if fixtures.insert(r.key, r.clone()).is_some() {
            bail!("fixture lists {} more than once", r.key);
        }
    }

    let (detections, ground_truth) = match &cfg.detections_dir {
        Some(dir) => {
            let gt_path = cfg
                .ground_truth
                .as_ref()
                .ok_or_else(|| ConfigError("tradeoff.detections_dir needs tradeoff.ground_truth".into()))?;
            let gts = read_ground_truth(open(gt_path)?)
                .with_context(|| format!("reading {}", gt_path.display()))?;
            (detection_files(dir)?, gts)
        }
        None => (BTreeMap::new(), Vec::new()),
    };

    let keys: Vec<StrategyKey> = match &cfg.scenarios {
        Some(k) => k.clone(),
        None => fixtures.keys().chain(detections.keys()).copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect(),
    };
    let inputs = keys
        .iter()
        .map(|key| {
            let dets = detections
                .get(key)
                .map(|p| {
                    read_detections(open(p)?).with_context(|| format!("reading {}", p.display()))
                })
                .transpose()?;
            Ok(StrategyInput {
                key: *key,
                strategy: cfg.setup.strategy(*key).with_context(|| key.to_string())?,
                detections: dets,
                fixture: fixtures.get(key).cloned(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let points: Vec<TradeoffPoint> = evaluate_strategies(
        &inputs,
        &ground_truth,
        &cfg.setup.curves,
        &cfg.setup.options,
        EvalOptions {
            iou_threshold: cfg.iou_threshold,
            min_confidence: 0.0,
        },
    )?;
    let frontier = pareto_frontier(&points);
    let best = select_best(&points, &cfg.selection);
    let report = emit_report(&points, &frontier, best, cfg.format)?;

    let mut summary = String::from("frontier:");
    for p in &frontier {
        let _ = write!(summary, " {} ({:.4} @ {:.2} ms)", p.key, p.map_value, p.delay_ms());
    }
    summary.push('\n');
    match best {
        Some(p) => {
            let _ = writeln!(
                summary,
                "selected: {} (mAP {:.4} @ {:.2} ms, budget {:.2} ms, min mAP {:.2})",
                p.key,
                p.map_value,
                p.delay_ms(),
                cfg.selection.budget_ms,
                cfg.selection.min_map
            );
        }
        None => {
            let _ = writeln!(
                summary,
                "no feasible strategy within {:.2} ms at min mAP {:.2}",
                cfg.selection.budget_ms, cfg.selection.min_map
            );
        }
    }

    if let Some(dir) = &cfg.output_dir {
        let ext = match cfg.format {
            ReportFormat::Json => "json",
            _ => "csv",
        };
        let name = match cfg.format {
            ReportFormat::PlotData => "plot_data.csv".to_string(),
            _ => format!("tradeoff.{ext}"),
        };
        write_file(dir, &name, &report)?;
        if cfg.format != ReportFormat::PlotData {
            write_file(
                dir,
                "plot_data.csv",
                &emit_report(&points, &frontier, best, ReportFormat::PlotData)?,
            )?;
        }
        let mut f = String::from("platform,scenario,delay_ms,map\n");
        for p in &frontier {
            let _ = writeln!(f, "{},{},{:.2},{:.4}", p.key.platform, p.key.scenario, p.delay_ms(), p.map_value);
        }
        write_file(dir, "frontier.csv", &f)?;
        if points.iter().any(|p| p.per_class_ap.is_some()) {
            write_file(dir, "per_class.csv", &per_class_table(&points))?;
        }
        write_file(dir, "selection.txt", &summary)?;
    }
    Ok(TradeoffOutput { report, summary })
}

#[derive(Debug, Deserialize)]
struct ObservationRow {
    size_bytes: f64,
    measured_ms: f64,
    known_ms: Option<f64>,
}

pub struct CalibrateArgs {
    pub observations: PathBuf,
    pub platform: Platform,
    pub known_ms: Option<f64>,
    pub pin_throughput: Option<f64>,
    pub out: Option<PathBuf>,
}

pub fn calibrate_cmd(cfg: &RunConfig, args: &CalibrateArgs) -> Result<String> {
    let base = cfg
        .profile(args.platform)
        .channel
        .ok_or_else(|| anyhow!("{} has no channel to calibrate", args.platform))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(open(&args.observations)?);
    let mut obs = Vec::new();
    for (i, row) in rdr.deserialize::<ObservationRow>().enumerate() {
        let row = row.with_context(|| format!("{}: record {}", args.observations.display(), i + 1))?;
        let known_ms = row.known_ms.or(args.known_ms).ok_or_else(|| {
            anyhow!(
                "{}: record {} has no known_ms and --known-ms is not set",
                args.observations.display(),
                i + 1
            )
        })?;
        obs.push(Observation {
            size_bytes: row.size_bytes,
            measured_ms: row.measured_ms,
            known_ms,
        });
    }
    let mode = match args.pin_throughput {
        Some(mbps) => CalibrationMode::PinnedThroughput(mbps),
        None => CalibrationMode::Free,
    };
    let cal = calibrate(&obs, base.packet_payload_bytes, mode)?;

    let mut s = format!(
        "throughput_mbps,{:.6}\nper_packet_overhead_ms,{:.6}\nsize_bytes,measured_ms,residual_ms\n",
        cal.throughput_mbps, cal.per_packet_overhead_ms
    );
    for (o, r) in obs.iter().zip(&cal.residuals_ms) {
        // keep rounding noise from printing as -0.00
        let r = if r.abs() < 0.005 { 0.0 } else { *r };
        let _ = writeln!(s, "{:.0},{:.2},{r:.2}", o.size_bytes, o.measured_ms);
    }
    if let Some(out) = &args.out {
        let fitted = ChannelFile {
            throughput_mbps: Some(cal.throughput_mbps),
            per_packet_overhead_ms: Some(cal.per_packet_overhead_ms),
            ..ChannelFile::default()
        };
        let body = toml::to_string(&fitted)?;
        let text = format!("[platforms.{}.channel]\n{body}", args.platform);
        fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(s)
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    split: String,
    path: PathBuf,
}

fn label_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.extension().and_then(|e| e.to_str()) == Some("txt"));
        files.sort();
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

pub fn stats(manifest: &Path, image: ImageSize, cfg: &RunConfig) -> Result<String> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(open(manifest)?);
    let mut rows: Vec<ManifestRow> = Vec::new();
    for row in rdr.deserialize::<ManifestRow>() {
        let mut row = row.with_context(|| format!("reading {}", manifest.display()))?;
        if row.path.is_relative() {
            row.path = dir.join(&row.path);
        }
        rows.push(row);
    }
    let missing: Vec<String> = rows
        .iter()
        .filter(|r| !r.path.exists())
        .map(|r| r.path.display().to_string())
        .collect();
    if !missing.is_empty() {
        bail!("missing dataset files:\n  {}", missing.join("\n  "));
    }

    let mut order: Vec<String> = Vec::new();
    let mut frames: BTreeMap<String, Vec<Frame>> = BTreeMap::new();
    for row in &rows {
        if !order.contains(&row.split) {
            order.push(row.split.clone());
        }
        for file in label_files(&row.path)? {
            let frame_id = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let boxes = parse_labels(open(&file)?, image, &frame_id)
                .with_context(|| format!("parsing {}", file.display()))?;
            frames.entry(row.split.clone()).or_default().push(Frame { frame_id, boxes });
        }
    }
    let splits = order
        .iter()
        .map(|name| DatasetSplit::new(name.clone(), frames.remove(name).unwrap_or_default()))
        .collect::<offload_core::Result<Vec<_>>>()?;
    let table = class_stats(&splits, &CLASSES).to_csv();
    if let Some(out) = &cfg.output_dir {
        write_file(out, "stats.csv", &table)?;
    }
    Ok(table)
}
