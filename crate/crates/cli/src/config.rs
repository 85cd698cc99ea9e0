//! Run configuration: a TOML document of overrides layered on the reference
//! setup. Every key is optional.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use offload_core::compression::{read_measurements, CurveSet, Resolution};
use offload_core::network::{ChannelParams, Jitter};
use offload_core::pipeline::{Platform, PlatformProfile};
use offload_core::presets::{reference_setup, ReferenceSetup};
use offload_core::tradeoff::{ReportFormat, SelectionPolicy, StrategyKey};
use serde::{Deserialize, Serialize};

/// Marks errors that come from the configuration rather than the inputs.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    /// Strategies as `platform/scenario`, e.g. `cloud/H265-M`.
    pub scenarios: Option<Vec<String>>,
    pub selection: SelectionFile,
    pub simulate: SimulateFile,
    pub tradeoff: TradeoffFile,
    pub compression: CompressionFile,
    pub platforms: PlatformsFile,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionFile {
    pub budget_ms: Option<f64>,
    pub min_map: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateFile {
    pub rate_hz: Option<Vec<f64>>,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TradeoffFile {
    pub format: Option<String>,
    pub iou_threshold: Option<f64>,
    pub fixture: Option<PathBuf>,
    pub detections_dir: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionFile {
    pub result_bytes: Option<f64>,
    /// Measurement CSV replacing the reference size curves.
    pub measurements: Option<PathBuf>,
    pub codec_times: CodecTimesFile,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecTimesFile {
    pub jpeg_compress_ms: Option<f64>,
    pub jpeg_decompress_ms: Option<f64>,
    pub h265_compress_ms: Option<f64>,
    pub h265_decompress_ms: Option<f64>,
    pub reference_resolution: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatformsFile {
    pub local: PlatformFile,
    pub edge: PlatformFile,
    pub cloud: PlatformFile,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatformFile {
    pub model_label: Option<String>,
    pub resolution: Option<String>,
    pub inference_ms: Option<f64>,
    pub channel: Option<ChannelFile>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelFile {
    pub throughput_mbps: Option<f64>,
    pub packet_payload_bytes: Option<u64>,
    pub per_packet_overhead_ms: Option<f64>,
    pub base_latency_up_ms: Option<f64>,
    pub base_latency_down_ms: Option<f64>,
    pub loss_ratio: Option<f64>,
    pub strict_downlink: Option<bool>,
    pub jitter: Option<JitterFile>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterFile {
    pub mu: f64,
    pub sigma: f64,
}

impl ChannelFile {
    pub fn from_params(ch: &ChannelParams) -> Self {
        Self {
            throughput_mbps: Some(ch.throughput_mbps),
            packet_payload_bytes: Some(ch.packet_payload_bytes),
            per_packet_overhead_ms: Some(ch.per_packet_overhead_ms),
            base_latency_up_ms: Some(ch.base_latency_up_ms),
            base_latency_down_ms: Some(ch.base_latency_down_ms),
            loss_ratio: Some(ch.loss_ratio),
            strict_downlink: Some(ch.strict_downlink),
            jitter: ch.jitter.map(|j| JitterFile {
                mu: j.mu,
                sigma: j.sigma,
            }),
        }
    }

    fn apply(&self, base: &ChannelParams) -> ChannelParams {
        ChannelParams {
            throughput_mbps: self.throughput_mbps.unwrap_or(base.throughput_mbps),
            packet_payload_bytes: self.packet_payload_bytes.unwrap_or(base.packet_payload_bytes),
            per_packet_overhead_ms: self.per_packet_overhead_ms.unwrap_or(base.per_packet_overhead_ms),
            base_latency_up_ms: self.base_latency_up_ms.unwrap_or(base.base_latency_up_ms),
            base_latency_down_ms: self.base_latency_down_ms.unwrap_or(base.base_latency_down_ms),
            loss_ratio: self.loss_ratio.unwrap_or(base.loss_ratio),
            strict_downlink: self.strict_downlink.unwrap_or(base.strict_downlink),
            jitter: self
                .jitter
                .map(|j| Jitter {
                    mu: j.mu,
                    sigma: j.sigma,
                })
                .or(base.jitter),
        }
    }
}

impl PlatformFile {
    fn from_profile(p: &PlatformProfile) -> Self {
        Self {
            model_label: Some(p.model_label.clone()),
            resolution: Some(p.input_resolution.to_string()),
            inference_ms: Some(p.inference_ms),
            channel: p.channel.as_ref().map(ChannelFile::from_params),
        }
    }

    fn apply(&self, base: &PlatformProfile) -> Result<PlatformProfile> {
        let name = base.name;
        let input_resolution = match &self.resolution {
            Some(r) => r
                .parse::<Resolution>()
                .map_err(|e| config_err(format!("platforms.{name}.resolution: {e}")))?,
            None => base.input_resolution,
        };
        let channel = match (&self.channel, &base.channel) {
            (Some(_), None) => return Err(config_err(format!("platforms.{name} takes no channel"))),
            (Some(c), Some(b)) => Some(c.apply(b)),
            (None, b) => *b,
        };
        let p = PlatformProfile {
            name,
            model_label: self.model_label.clone().unwrap_or_else(|| base.model_label.clone()),
            input_resolution,
            inference_ms: self.inference_ms.unwrap_or(base.inference_ms),
            channel,
        };
        p.validate()
            .map_err(|e| config_err(format!("platforms.{name}: {e}")))?;
        Ok(p)
    }
}

impl ConfigFile {
    /// The reference defaults written out in full.
    pub fn defaults() -> Self {
        let setup = reference_setup();
        let policy = SelectionPolicy::default();
        let ct = setup.options.codec_times;
        Self {
            seed: None,
            output_dir: None,
            scenarios: None,
            selection: SelectionFile {
                budget_ms: Some(policy.budget_ms),
                min_map: Some(policy.min_map),
            },
            simulate: SimulateFile {
                rate_hz: Some(DEFAULT_RATES.to_vec()),
                samples: Some(DEFAULT_SAMPLES),
            },
            tradeoff: TradeoffFile {
                format: Some("csv".into()),
                iou_threshold: Some(0.5),
                ..TradeoffFile::default()
            },
            compression: CompressionFile {
                result_bytes: Some(setup.options.result_bytes),
                measurements: None,
                codec_times: CodecTimesFile {
                    jpeg_compress_ms: Some(ct.jpeg_compress_ms),
                    jpeg_decompress_ms: Some(ct.jpeg_decompress_ms),
                    h265_compress_ms: Some(ct.h265_compress_ms),
                    h265_decompress_ms: Some(ct.h265_decompress_ms),
                    reference_resolution: Some(ct.reference.to_string()),
                },
            },
            platforms: PlatformsFile {
                local: PlatformFile::from_profile(&setup.local),
                edge: PlatformFile::from_profile(&setup.edge),
                cloud: PlatformFile::from_profile(&setup.cloud),
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(|e| config_err(format!("{e:#}")))?;
        let mut cfg: ConfigFile = toml::from_str(&text)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = dir.join(&*v);
                }
            }
        };
        rebase(&mut cfg.output_dir);
        rebase(&mut cfg.compression.measurements);
        rebase(&mut cfg.tradeoff.fixture);
        rebase(&mut cfg.tradeoff.detections_dir);
        rebase(&mut cfg.tradeoff.ground_truth);
        Ok(cfg)
    }
}

pub const DEFAULT_RATES: [f64; 2] = [20.0, 10.0];
pub const DEFAULT_SAMPLES: usize = 10_000;

/// Configuration with every default filled in and every value checked.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub scenarios: Option<Vec<StrategyKey>>,
    pub setup: ReferenceSetup,
    pub selection: SelectionPolicy,
    pub rate_hz: Vec<f64>,
    pub samples: usize,
    pub format: ReportFormat,
    pub iou_threshold: f64,
    pub fixture: Option<PathBuf>,
    pub detections_dir: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    /// Curve ingestion notes, e.g. repaired monotonicity violations.
    pub warnings: Vec<String>,
}

impl RunConfig {
    pub fn resolve(file: &ConfigFile) -> Result<Self> {
        let mut setup = reference_setup();
        setup.local = file.platforms.local.apply(&setup.local)?;
        setup.edge = file.platforms.edge.apply(&setup.edge)?;
        setup.cloud = file.platforms.cloud.apply(&setup.cloud)?;

        let c = &file.compression;
        if let Some(b) = c.result_bytes {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(config_err("compression.result_bytes must be >= 0"));
            }
            setup.options.result_bytes = b;
        }
        let ct = &mut setup.options.codec_times;
        for (slot, v, key) in [
            (&mut ct.jpeg_compress_ms, c.codec_times.jpeg_compress_ms, "jpeg_compress_ms"),
            (&mut ct.jpeg_decompress_ms, c.codec_times.jpeg_decompress_ms, "jpeg_decompress_ms"),
            (&mut ct.h265_compress_ms, c.codec_times.h265_compress_ms, "h265_compress_ms"),
            (&mut ct.h265_decompress_ms, c.codec_times.h265_decompress_ms, "h265_decompress_ms"),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(config_err(format!("compression.codec_times.{key} must be >= 0")));
                }
                *slot = v;
            }
        }
        if let Some(r) = &c.codec_times.reference_resolution {
            ct.reference = r
                .parse()
                .map_err(|e| config_err(format!("compression.codec_times.reference_resolution: {e}")))?;
        }

        let mut warnings = Vec::new();
        if let Some(path) = &c.measurements {
            let f = std::fs::File::open(path)
                .with_context(|| format!("opening measurements {}", path.display()))?;
            let mut curves = CurveSet::new();
            for ingested in read_measurements(f)
                .with_context(|| format!("reading measurements {}", path.display()))?
            {
                for v in &ingested.violations {
                    warnings.push(format!(
                        "{} {}: {v}; repaired",
                        ingested.curve.codec(),
                        ingested.curve.resolution()
                    ));
                }
                curves.insert(ingested.curve);
            }
            setup.curves = curves;
        }

        let scenarios = file
            .scenarios
            .as_ref()
            .map(|list| {
                list.iter()
                    .map(|s| {
                        let key: StrategyKey = s
                            .parse()
                            .map_err(|e| config_err(format!("scenarios: {s:?}: {e}")))?;
                        setup
                            .strategy(key)
                            .map_err(|e| config_err(format!("scenarios: {key}: {e}")))?;
                        Ok(key)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;

        let default_policy = SelectionPolicy::default();
        let selection = SelectionPolicy {
            budget_ms: file.selection.budget_ms.unwrap_or(default_policy.budget_ms),
            min_map: file.selection.min_map.unwrap_or(default_policy.min_map),
        };
        selection
            .validate()
            .map_err(|e| config_err(format!("selection: {e}")))?;

        let rate_hz = file.simulate.rate_hz.clone().unwrap_or_else(|| DEFAULT_RATES.to_vec());
        if rate_hz.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(config_err("simulate.rate_hz entries must be positive"));
        }
        let samples = file.simulate.samples.unwrap_or(DEFAULT_SAMPLES);
        if samples == 0 {
            return Err(config_err("simulate.samples must be positive"));
        }
        let format = file
            .tradeoff
            .format
            .as_deref()
            .unwrap_or("csv")
            .parse()
            .map_err(|e| config_err(format!("tradeoff.format: {e}")))?;
        let iou_threshold = file.tradeoff.iou_threshold.unwrap_or(0.5);
        if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
            return Err(config_err("tradeoff.iou_threshold must be in (0, 1]"));
        }

        Ok(Self {
            seed: file.seed,
            output_dir: file.output_dir.clone(),
            scenarios,
            setup,
            selection,
            rate_hz,
            samples,
            format,
            iou_threshold,
            fixture: file.tradeoff.fixture.clone(),
            detections_dir: file.tradeoff.detections_dir.clone(),
            ground_truth: file.tradeoff.ground_truth.clone(),
            warnings,
        })
    }

    pub fn profile(&self, platform: Platform) -> &PlatformProfile {
        self.setup.profile(platform)
    }
}

/// Text appended to `--help`: every key with its default value.
pub fn config_reference() -> String {
    let body = toml::to_string(&ConfigFile::defaults()).unwrap_or_default();
    format!(
        "Configuration (TOML, path from --config or OFFLOAD_CONFIG; flags override file values).\n\
         Keys with their defaults:\n\n\
         # seed = <unset>              seed for stochastic simulation\n\
         # output_dir = <unset>        directory for report files\n\
         # scenarios = <all>           e.g. [\"local/RAW\", \"cloud/H265-M\"]\n\
         # tradeoff.fixture = <built-in reference fixture>\n\
         # tradeoff.detections_dir = <unset>   files named <platform>_<scenario>.csv\n\
         # tradeoff.ground_truth = <unset>\n\
         # compression.measurements = <built-in reference curves>\n\
         # platforms.<edge|cloud>.channel.jitter = {{ mu, sigma }}  <unset>\n\n\
         {body}"
    )
}
