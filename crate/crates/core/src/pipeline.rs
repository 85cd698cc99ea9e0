//! Per-frame end-to-end delay: compress, uplink, decompress, inference and
//! result return, composed for one (platform, compression) strategy.
//!
//! Frames are handled one at a time; transmission and inference of
//! consecutive frames never overlap.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compression::{
    codec_time, expected_size, Codec, CodecRole, CodecTimeDefaults, CompressionSetting, CurveSet,
    Resolution,
};
use crate::error::{Error, Result};
use crate::network::{downlink_delay, uplink_delay, ChannelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Local,
    Edge,
    Cloud,
}

impl Platform {
    pub const ALL: [Platform; 3] = [Platform::Local, Platform::Edge, Platform::Cloud];

    pub fn is_remote(self) -> bool {
        self != Platform::Local
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Platform::Local => "local",
            Platform::Edge => "edge",
            Platform::Cloud => "cloud",
        })
    }
}

impl FromStr for Platform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "local" => Ok(Platform::Local),
            "edge" | "mec" => Ok(Platform::Edge),
            "cloud" => Ok(Platform::Cloud),
            _ => Err(Error::UnknownLabel(s.to_string())),
        }
    }
}

/// Where inference runs. `inference_ms` covers preprocessing, the forward
/// pass and NMS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformProfile {
    pub name: Platform,
    pub model_label: String,
    pub input_resolution: Resolution,
    pub inference_ms: f64,
    pub channel: Option<ChannelParams>,
}

impl PlatformProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.inference_ms > 0.0 && self.inference_ms.is_finite()) {
            return Err(Error::InvalidPlatform(format!(
                "{}: inference time must be positive",
                self.name
            )));
        }
        match (self.name.is_remote(), &self.channel) {
            (false, Some(_)) => Err(Error::InvalidPlatform("local platform has no channel".into())),
            (true, None) => Err(Error::InvalidPlatform(format!("{} needs a channel", self.name))),
            (true, Some(ch)) => ch.validate(),
            (false, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub platform: PlatformProfile,
    pub compression: CompressionSetting,
}

impl Strategy {
    pub fn new(platform: PlatformProfile, compression: CompressionSetting) -> Result<Self> {
        let s = Self {
            platform,
            compression,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.platform.validate()?;
        if self.compression.resolution != self.platform.input_resolution {
            return Err(Error::ResolutionMismatch {
                compression: self.compression.resolution.to_string(),
                platform: self.platform.input_resolution.to_string(),
            });
        }
        if !self.platform.name.is_remote() && self.compression.codec != Codec::None {
            return Err(Error::InvalidStrategy(
                "local inference runs on uncompressed frames".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    /// Size of the detection result sent back to the vehicle.
    pub result_bytes: f64,
    pub codec_times: CodecTimeDefaults,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            result_bytes: 1024.0,
            codec_times: CodecTimeDefaults::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayBreakdown {
    pub compress_ms: f64,
    pub uplink_ms: f64,
    pub decompress_ms: f64,
    pub inference_ms: f64,
    pub downlink_ms: f64,
    pub total_ms: f64,
    pub delivery_probability: f64,
    pub payload_bytes: f64,
    pub packet_count: u64,
}

struct NetworkTerms {
    compress_ms: f64,
    uplink_ms: f64,
    decompress_ms: f64,
    downlink_ms: f64,
    delivery_probability: f64,
    payload_bytes: f64,
    packet_count: u64,
}

fn network_terms(s: &Strategy, curves: &CurveSet, opts: &PipelineOptions) -> Result<NetworkTerms> {
    s.validate()?;
    let setting = &s.compression;
    let payload_bytes = expected_size(setting, curves.for_setting(setting)?)?;
    let Some(ch) = &s.platform.channel else {
        return Ok(NetworkTerms {
            compress_ms: 0.0,
            uplink_ms: 0.0,
            decompress_ms: 0.0,
            downlink_ms: 0.0,
            delivery_probability: 1.0,
            payload_bytes,
            packet_count: 0,
        });
    };
    let curve = curves.for_setting(setting)?;
    let up = uplink_delay(payload_bytes, ch);
    Ok(NetworkTerms {
        compress_ms: codec_time(setting, CodecRole::Compress, curve, &opts.codec_times)?,
        uplink_ms: up.total_ms,
        decompress_ms: codec_time(setting, CodecRole::Decompress, curve, &opts.codec_times)?,
        downlink_ms: downlink_delay(opts.result_bytes, ch),
        delivery_probability: up.delivery_probability,
        payload_bytes,
        packet_count: up.packet_count,
    })
}

pub fn end_to_end_delay(
    s: &Strategy,
    curves: &CurveSet,
    opts: &PipelineOptions,
) -> Result<DelayBreakdown> {
    let t = network_terms(s, curves, opts)?;
    let inference_ms = s.platform.inference_ms;
    Ok(DelayBreakdown {
        compress_ms: t.compress_ms,
        uplink_ms: t.uplink_ms,
        decompress_ms: t.decompress_ms,
        inference_ms,
        downlink_ms: t.downlink_ms,
        total_ms: t.compress_ms + t.uplink_ms + t.decompress_ms + inference_ms + t.downlink_ms,
        delivery_probability: t.delivery_probability,
        payload_bytes: t.payload_bytes,
        packet_count: t.packet_count,
    })
}

/// Inclusive check against the per-frame budget `1000 / rate_hz` ms.
pub fn meets_budget(b: &DelayBreakdown, rate_hz: f64) -> bool {
    assert!(rate_hz > 0.0, "rate must be positive");
    b.total_ms <= 1000.0 / rate_hz
}

/// Inference time implied by a measured total once every other term of the
/// strategy is subtracted.
pub fn derive_inference_residual(
    total_ms: f64,
    s: &Strategy,
    curves: &CurveSet,
    opts: &PipelineOptions,
) -> Result<f64> {
    let t = network_terms(s, curves, opts)?;
    let residual = total_ms - (t.compress_ms + t.uplink_ms + t.decompress_ms + t.downlink_ms);
    if residual <= 0.0 {
        return Err(Error::InconsistentMeasurement {
            excess_ms: -residual,
        });
    }
    Ok(residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::{named_scenario, ScenarioLabel, RES_1280, RES_640};

    fn local() -> PlatformProfile {
        PlatformProfile {
            name: Platform::Local,
            model_label: "small".into(),
            input_resolution: RES_640,
            inference_ms: 19.5,
            channel: None,
        }
    }

    fn edge(inference_ms: f64) -> PlatformProfile {
        PlatformProfile {
            name: Platform::Edge,
            model_label: "large".into(),
            input_resolution: RES_640,
            inference_ms,
            channel: Some(ChannelParams::default()),
        }
    }

    #[test]
    fn local_is_inference_only() {
        let s = Strategy::new(local(), CompressionSetting::raw(RES_640)).unwrap();
        let b = end_to_end_delay(&s, &CurveSet::new(), &PipelineOptions::default()).unwrap();
        assert_eq!(b.total_ms, 19.5);
        assert_eq!(
            [b.compress_ms, b.uplink_ms, b.decompress_ms, b.downlink_ms],
            [0.0; 4]
        );
        assert_eq!(b.delivery_probability, 1.0);
    }

    #[test]
    fn strategy_invariants() {
        assert!(matches!(
            Strategy::new(local(), CompressionSetting::raw(RES_1280)),
            Err(Error::ResolutionMismatch { .. })
        ));
        let jpeg = named_scenario(ScenarioLabel::JpegM, RES_640);
        assert!(matches!(Strategy::new(local(), jpeg), Err(Error::InvalidStrategy(_))));
        let mut p = edge(30.0);
        p.channel = None;
        assert!(Strategy::new(p, CompressionSetting::raw(RES_640)).is_err());
        let mut p = local();
        p.inference_ms = 0.0;
        assert!(Strategy::new(p, CompressionSetting::raw(RES_640)).is_err());
    }

    #[test]
    fn missing_curve_is_an_error() {
        let s = Strategy::new(edge(30.0), named_scenario(ScenarioLabel::JpegM, RES_640)).unwrap();
        assert!(matches!(
            end_to_end_delay(&s, &CurveSet::new(), &PipelineOptions::default()),
            Err(Error::MissingCurve { .. })
        ));
    }

    #[test]
    fn edge_raw_reconstruction() {
        let s = Strategy::new(edge(36.5), CompressionSetting::raw(RES_640)).unwrap();
        let b = end_to_end_delay(&s, &CurveSet::new(), &PipelineOptions::default()).unwrap();
        // 86.28 serialization + 0.43 up + 36.5 + 0.43 down
        assert!((b.total_ms - 123.64).abs() < 0.01);
        assert!((b.total_ms - 123.2).abs() / 123.2 < 0.05);
        let parts = b.compress_ms + b.uplink_ms + b.decompress_ms + b.inference_ms + b.downlink_ms;
        assert_eq!(parts, b.total_ms);
    }

    #[test]
    fn budget_boundaries() {
        let mk = |t| DelayBreakdown {
            compress_ms: 0.0,
            uplink_ms: 0.0,
            decompress_ms: 0.0,
            inference_ms: t,
            downlink_ms: 0.0,
            total_ms: t,
            delivery_probability: 1.0,
            payload_bytes: 0.0,
            packet_count: 0,
        };
        assert!(meets_budget(&mk(46.93), 20.0));
        assert!(!meets_budget(&mk(74.50), 20.0));
        assert!(meets_budget(&mk(74.50), 10.0));
        assert!(meets_budget(&mk(50.0), 20.0));
        assert!(!meets_budget(&mk(50.000001), 20.0));
    }

    #[test]
    fn residual_examples() {
        let s = Strategy::new(edge(1.0), CompressionSetting::raw(RES_640)).unwrap();
        let opts = PipelineOptions::default();
        let r = derive_inference_residual(123.20, &s, &CurveSet::new(), &opts).unwrap();
        // 123.20 - 86.28 - 0.43 up - 0.43 down
        assert!((r - 36.06).abs() < 0.01);
        assert!(matches!(
            derive_inference_residual(80.0, &s, &CurveSet::new(), &opts),
            Err(Error::InconsistentMeasurement { .. })
        ));
    }
}
