//! Joins per-strategy delay with detection quality, filters the
//! (delay, mAP) Pareto frontier and selects a strategy under a budget.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::io::Read;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compression::{human_size, named_scenario, CurveSet, ScenarioLabel};
use crate::dataset::class_name;
use crate::error::{Error, Result};
use crate::eval::{evaluate, Detection, EvalOptions, GroundTruthBox};
use crate::pipeline::{end_to_end_delay, meets_budget, DelayBreakdown, PipelineOptions, Platform, PlatformProfile, Strategy};

/// Identifies a strategy as `platform/scenario`, e.g. `cloud/H265-M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StrategyKey {
    pub platform: Platform,
    pub scenario: ScenarioLabel,
}

impl StrategyKey {
    pub fn new(platform: Platform, scenario: ScenarioLabel) -> Self {
        Self { platform, scenario }
    }

    /// Builds the strategy for this key on the given platform profile.
    pub fn strategy(&self, profile: &PlatformProfile) -> Result<Strategy> {
        if profile.name != self.platform {
            return Err(Error::InvalidStrategy(format!(
                "profile {} used for {self}",
                profile.name
            )));
        }
        Strategy::new(
            profile.clone(),
            named_scenario(self.scenario, profile.input_resolution),
        )
    }
}

impl fmt::Display for StrategyKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.platform, self.scenario)
    }
}

impl FromStr for StrategyKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (p, l) = s
            .split_once('/')
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))?;
        Ok(Self::new(p.parse()?, l.parse()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapSource {
    Detections,
    Fixture,
}

impl fmt::Display for MapSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MapSource::Detections => "detections",
            MapSource::Fixture => "fixture",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub key: StrategyKey,
    pub strategy: Strategy,
    /// Modeled delay decomposition.
    pub breakdown: DelayBreakdown,
    /// Measured end-to-end delay that replaces the modeled total when set.
    pub delay_override_ms: Option<f64>,
    pub map_value: f64,
    pub per_class_ap: Option<BTreeMap<u32, f64>>,
    pub map_source: MapSource,
}

impl TradeoffPoint {
    pub fn delay_ms(&self) -> f64 {
        self.delay_override_ms.unwrap_or(self.breakdown.total_ms)
    }

    fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.map_value) {
            return Err(Error::InvalidPoint(format!("{}: mAP {} outside [0, 1]", self.key, self.map_value)));
        }
        if let Some(per_class) = &self.per_class_ap {
            let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
            if per_class.is_empty() || (mean - self.map_value).abs() > 1e-9 {
                return Err(Error::InvalidPoint(format!(
                    "{}: mAP {} differs from per-class mean",
                    self.key, self.map_value
                )));
            }
        }
        if let Some(d) = self.delay_override_ms {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidPoint(format!("{}: delay must be positive", self.key)));
            }
        }
        Ok(())
    }
}

/// Precomputed quality for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub key: StrategyKey,
    pub map_value: Option<f64>,
    pub per_class_ap: Option<BTreeMap<u32, f64>>,
    pub delay_ms: Option<f64>,
}

impl FixtureRecord {
    /// The mAP this record stands for: the per-class mean when per-class APs
    /// are given (a supplied mAP must agree within rounding), else the mAP.
    pub fn resolved_map(&self) -> Result<f64> {
        match (&self.per_class_ap, self.map_value) {
            (Some(pc), given) if !pc.is_empty() => {
                let mean = pc.values().sum::<f64>() / pc.len() as f64;
                match given {
                    Some(m) if (m - mean).abs() > 0.005 + 1e-12 => Err(Error::InvalidPoint(format!(
                        "{}: fixture mAP {m} disagrees with per-class mean {mean:.4}",
                        self.key
                    ))),
                    _ => Ok(mean),
                }
            }
            (_, Some(m)) => Ok(m),
            _ => Err(Error::MissingMapSource(self.key.to_string())),
        }
    }
}

/// One strategy to score, with whatever quality evidence is available.
#[derive(Debug, Clone)]
pub struct StrategyInput {
    pub key: StrategyKey,
    pub strategy: Strategy,
    pub detections: Option<Vec<(String, Detection)>>,
    pub fixture: Option<FixtureRecord>,
}

/// One point per strategy, ordered by key. Raw detections take precedence
/// over a fixture mAP; a fixture delay always overrides the modeled total.
pub fn evaluate_strategies(
    inputs: &[StrategyInput],
    ground_truth: &[GroundTruthBox],
    curves: &CurveSet,
    opts: &PipelineOptions,
    eval_opts: EvalOptions,
) -> Result<Vec<TradeoffPoint>> {
    let mut points: Vec<TradeoffPoint> = inputs
        .par_iter()
        .map(|input| {
            let breakdown = end_to_end_delay(&input.strategy, curves, opts)?;
            let delay_override_ms = input.fixture.as_ref().and_then(|f| f.delay_ms);
            let (map_value, per_class_ap, map_source) = match (&input.detections, &input.fixture) {
                (Some(dets), _) => {
                    let summary = evaluate(dets, ground_truth, eval_opts);
                    let map = summary.map.ok_or_else(|| {
                        Error::InvalidPoint(format!("{}: ground truth is empty", input.key))
                    })?;
                    (map, Some(summary.per_class_ap()), MapSource::Detections)
                }
                (None, Some(f)) => (f.resolved_map()?, f.per_class_ap.clone(), MapSource::Fixture),
                (None, None) => return Err(Error::MissingMapSource(input.key.to_string())),
            };
            let p = TradeoffPoint {
                key: input.key,
                strategy: input.strategy.clone(),
                breakdown,
                delay_override_ms,
                map_value,
                per_class_ap,
                map_source,
            };
            p.check()?;
            Ok(p)
        })
        .collect::<Result<_>>()?;
    points.sort_by_key(|p| p.key);
    Ok(points)
}

/// Indices of non-dominated (delay, quality) pairs, by ascending delay.
///
/// `q` dominates `p` when it is no slower and no worse, and strictly better
/// in one of the two. Exact duplicates therefore survive together.
pub fn pareto_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i]
            .0
            .total_cmp(&points[j].0)
            .then(points[j].1.total_cmp(&points[i].1))
            .then(i.cmp(&j))
    });
    let mut out = Vec::new();
    let mut best_faster = f64::NEG_INFINITY;
    let mut g = 0;
    while g < order.len() {
        let delay = points[order[g]].0;
        let mut end = g;
        while end < order.len() && points[order[end]].0 == delay {
            end += 1;
        }
        // group sorted by quality descending, so the head holds the group max
        let top = points[order[g]].1;
        if top > best_faster {
            out.extend(order[g..end].iter().copied().filter(|&i| points[i].1 == top));
            best_faster = top;
        }
        g = end;
    }
    out
}

pub fn pareto_frontier(points: &[TradeoffPoint]) -> Vec<TradeoffPoint> {
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.delay_ms(), p.map_value)).collect();
    pareto_indices(&pairs)
        .into_iter()
        .map(|i| points[i].clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionPolicy {
    pub budget_ms: f64,
    /// Settings whose mAP falls below this are unusable regardless of delay.
    pub min_map: f64,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        Self {
            budget_ms: 50.0,
            min_map: 0.10,
        }
    }
}

impl SelectionPolicy {
    pub fn for_rate(rate_hz: f64) -> Self {
        Self {
            budget_ms: 1000.0 / rate_hz,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget_ms > 0.0) || !(0.0..=1.0).contains(&self.min_map) {
            return Err(Error::InvalidPoint(format!(
                "policy needs budget > 0 and min_map in [0, 1], got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Highest mAP within budget and above the floor; ties go to the lower delay.
pub fn select_best<'a>(points: &'a [TradeoffPoint], policy: &SelectionPolicy) -> Option<&'a TradeoffPoint> {
    points
        .iter()
        .filter(|p| p.delay_ms() <= policy.budget_ms && p.map_value >= policy.min_map)
        .min_by(|a, b| {
            b.map_value
                .total_cmp(&a.map_value)
                .then(a.delay_ms().total_cmp(&b.delay_ms()))
                .then(a.key.cmp(&b.key))
        })
}

/// Relative change against a baseline, truncated toward zero: "+170%", "-23%", "+0%".
pub fn percent_delta(value: f64, baseline: f64) -> String {
    let pct = (value - baseline) / baseline * 100.0;
    // absorb representation error such as 169.99999999999997
    let whole = (pct + pct.signum() * 1e-6).trunc();
    if whole < 0.0 {
        format!("-{}%", -whole as i64)
    } else {
        format!("+{}%", whole as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    PlotData,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "plot" | "plot-data" => Ok(Self::PlotData),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Serialize)]
struct JsonPoint<'a> {
    key: String,
    platform: Platform,
    scenario: String,
    model_label: &'a str,
    breakdown: &'a DelayBreakdown,
    delay_ms: f64,
    delay_source: &'static str,
    map: f64,
    map_source: MapSource,
    per_class_ap: Option<BTreeMap<String, f64>>,
    on_frontier: bool,
    selected: bool,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    points: Vec<JsonPoint<'a>>,
    frontier: Vec<String>,
    selection: Option<String>,
}

fn delay_source(p: &TradeoffPoint) -> &'static str {
    if p.delay_override_ms.is_some() {
        "measured"
    } else {
        "modeled"
    }
}

/// Renders points, frontier membership and the selection. Rows are ordered
/// by platform, then codec, then quality.
pub fn emit_report(
    points: &[TradeoffPoint],
    frontier: &[TradeoffPoint],
    selection: Option<&TradeoffPoint>,
    format: ReportFormat,
) -> Result<String> {
    if points.is_empty() {
        return Err(Error::EmptyPoints);
    }
    let mut rows: Vec<&TradeoffPoint> = points.iter().collect();
    rows.sort_by_key(|p| p.key);
    let on_frontier: BTreeSet<StrategyKey> = frontier.iter().map(|p| p.key).collect();
    let selected = selection.map(|p| p.key);

    match format {
        ReportFormat::Csv => Ok(report_csv(&rows, &on_frontier, selected)),
        ReportFormat::Json => {
            let doc = JsonReport {
                points: rows
                    .iter()
                    .map(|p| JsonPoint {
                        key: p.key.to_string(),
                        platform: p.key.platform,
                        scenario: p.key.scenario.to_string(),
                        model_label: &p.strategy.platform.model_label,
                        breakdown: &p.breakdown,
                        delay_ms: p.delay_ms(),
                        delay_source: delay_source(p),
                        map: p.map_value,
                        map_source: p.map_source,
                        per_class_ap: p
                            .per_class_ap
                            .as_ref()
                            .map(|m| m.iter().map(|(c, v)| (class_name(*c), *v)).collect()),
                        on_frontier: on_frontier.contains(&p.key),
                        selected: selected == Some(p.key),
                    })
                    .collect(),
                frontier: frontier.iter().map(|p| p.key.to_string()).collect(),
                selection: selected.map(|k| k.to_string()),
            };
            let mut s = serde_json::to_string_pretty(&doc)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::PlotData => {
            let mut series: BTreeMap<(Platform, String), Vec<&TradeoffPoint>> = BTreeMap::new();
            for p in &rows {
                series
                    .entry((p.key.platform, p.key.scenario.codec().to_string()))
                    .or_default()
                    .push(p);
            }
            let mut s = String::from("series,platform,codec,scenario,delay_ms,map\n");
            for ((platform, codec), mut pts) in series {
                pts.sort_by(|a, b| a.delay_ms().total_cmp(&b.delay_ms()).then(a.key.cmp(&b.key)));
                for p in pts {
                    let _ = writeln!(
                        s,
                        "{platform}/{codec},{platform},{codec},{},{:.2},{:.4}",
                        p.key.scenario,
                        p.delay_ms(),
                        p.map_value
                    );
                }
            }
            Ok(s)
        }
    }
}

fn class_columns(rows: &[&TradeoffPoint]) -> Vec<u32> {
    rows.iter()
        .filter_map(|p| p.per_class_ap.as_ref())
        .flat_map(|m| m.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn local_baseline<'a>(rows: &[&'a TradeoffPoint]) -> Option<&'a BTreeMap<u32, f64>> {
    rows.iter()
        .find(|p| p.key.platform == Platform::Local)
        .and_then(|p| p.per_class_ap.as_ref())
}

fn report_csv(
    rows: &[&TradeoffPoint],
    on_frontier: &BTreeSet<StrategyKey>,
    selected: Option<StrategyKey>,
) -> String {
    let classes = class_columns(rows);
    let baseline = local_baseline(rows);
    let mut s = String::from(
        "platform,scenario,codec,quality,payload_bytes,payload,packets,compress_ms,uplink_ms,\
         decompress_ms,inference_ms,downlink_ms,modeled_total_ms,delay_ms,delay_source,\
         delivery_probability,map,map_source,on_frontier,selected",
    );
    for c in &classes {
        let name = class_name(*c);
        let _ = write!(s, ",ap_{name},delta_{name}");
    }
    s.push('\n');
    for p in rows {
        let b = &p.breakdown;
        let quality = p.strategy.compression.quality.map(|q| q.to_string()).unwrap_or_default();
        let _ = write!(
            s,
            "{},{},{},{},{:.0},{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{},{:.5},{:.4},{},{},{}",
            p.key.platform,
            p.key.scenario,
            p.strategy.compression.codec,
            quality,
            b.payload_bytes,
            human_size(b.payload_bytes),
            b.packet_count,
            b.compress_ms,
            b.uplink_ms,
            b.decompress_ms,
            b.inference_ms,
            b.downlink_ms,
            b.total_ms,
            p.delay_ms(),
            delay_source(p),
            b.delivery_probability,
            p.map_value,
            p.map_source,
            on_frontier.contains(&p.key),
            selected == Some(p.key),
        );
        for c in &classes {
            let ap = p.per_class_ap.as_ref().and_then(|m| m.get(c));
            let delta = match (ap, baseline.and_then(|b| b.get(c))) {
                (Some(v), Some(base)) if *base > 0.0 => percent_delta(*v, *base),
                _ => String::new(),
            };
            let ap = ap.map(|v| format!("{v:.4}")).unwrap_or_default();
            let _ = write!(s, ",{ap},{delta}");
        }
        s.push('\n');
    }
    s
}

/// Per-class AP table with changes against the local baseline, cells
/// rendered as `0.81 (+170%)`.
pub fn per_class_table(points: &[TradeoffPoint]) -> String {
    let mut rows: Vec<&TradeoffPoint> = points.iter().filter(|p| p.per_class_ap.is_some()).collect();
    rows.sort_by_key(|p| (p.key.scenario, p.key.platform));
    let classes = class_columns(&rows);
    let baseline = local_baseline(&rows);
    let mut s = String::from("scenario,platform");
    for c in &classes {
        let _ = write!(s, ",{}", class_name(*c));
    }
    s.push('\n');
    for p in rows {
        let _ = write!(s, "{},{}", p.key.scenario, p.key.platform);
        let aps = p.per_class_ap.as_ref().expect("filtered");
        for c in &classes {
            let cell = match (aps.get(c), baseline.and_then(|b| b.get(c))) {
                (Some(v), Some(base)) if *base > 0.0 => {
                    format!("{v:.2} ({})", percent_delta(*v, *base))
                }
                (Some(v), _) => format!("{v:.2}"),
                (None, _) => String::new(),
            };
            let _ = write!(s, ",{cell}");
        }
        s.push('\n');
    }
    s
}

/// Reads `platform,scenario,map,per_class_ap,delay_ms` records. Per-class APs
/// are written as `class=ap` pairs separated by `;`; empty cells are absent.
pub fn read_fixture<R: Read>(reader: R) -> Result<Vec<FixtureRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(pi), Some(si)) = (col("platform"), col("scenario")) else {
        return Err(Error::Parse {
            line: 1,
            message: "fixture needs platform and scenario columns".into(),
        });
    };
    let (mi, ci, di) = (col("map"), col("per_class_ap"), col("delay_ms"));
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let perr = |e: Error| Error::Parse {
            line,
            message: e.to_string(),
        };
        let cell = |i: Option<usize>| i.and_then(|i| record.get(i)).filter(|v| !v.is_empty());
        let num = |i: Option<usize>, name: &str| -> Result<Option<f64>> {
            cell(i)
                .map(|v| {
                    v.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("bad {name} {v:?}"),
                    })
                })
                .transpose()
        };
        let platform: Platform = record.get(pi).unwrap_or_default().parse().map_err(perr)?;
        let scenario: ScenarioLabel = record.get(si).unwrap_or_default().parse().map_err(perr)?;
        let per_class_ap = cell(ci)
            .map(|v| parse_per_class(v).map_err(perr))
            .transpose()?;
        out.push(FixtureRecord {
            key: StrategyKey::new(platform, scenario),
            map_value: num(mi, "map")?,
            per_class_ap,
            delay_ms: num(di, "delay_ms")?,
        });
    }
    Ok(out)
}

fn parse_per_class(v: &str) -> Result<BTreeMap<u32, f64>> {
    v.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let bad = || Error::UnknownLabel(pair.to_string());
            let (c, ap) = pair.split_once('=').ok_or_else(bad)?;
            Ok((c.trim().parse().map_err(|_| bad())?, ap.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

pub fn write_fixture(records: &[FixtureRecord]) -> String {
    let mut s = String::from("platform,scenario,map,per_class_ap,delay_ms\n");
    for r in records {
        let pc = r
            .per_class_ap
            .as_ref()
            .map(|m| {
                m.iter()
                    .map(|(c, v)| format!("{c}={v}"))
                    .collect::<Vec<_>>()
                    .join(";")
            })
            .unwrap_or_default();
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.key.platform,
            r.key.scenario,
            opt(r.map_value),
            pc,
            opt(r.delay_ms)
        );
    }
    s
}

/// Whether the point's delay fits a detection rate.
pub fn point_meets_rate(p: &TradeoffPoint, rate_hz: f64) -> bool {
    let b = DelayBreakdown {
        total_ms: p.delay_ms(),
        ..p.breakdown
    };
    meets_budget(&b, rate_hz)
}
