//! Reference measurements and the default setup reconstructed from them.
//!
//! Edge runs the large model at 640x640 and the cloud runs the high-res
//! large model at 1280x1280, both reached over the same C-V2X link.

use std::collections::BTreeMap;

use crate::compression::{
    named_scenario, Codec, CodecCurve, CodecTimeDefaults, CurveSample, CurveSet, Resolution,
    ScenarioLabel, RES_1280, RES_640,
};
use crate::dataset::{CLASS_PEDESTRIAN, CLASS_TRAFFIC_LIGHT, CLASS_VEHICLE};
use crate::error::Result;
use crate::network::{calibrate, CalibrationMode, ChannelParams, Observation};
use crate::pipeline::{
    derive_inference_residual, PipelineOptions, Platform, PlatformProfile, Strategy,
};
use crate::tradeoff::{FixtureRecord, StrategyKey};

pub const LOCAL_INFERENCE_MS: f64 = 19.5;
pub const CLOUD_BASE_LATENCY_MS: f64 = 0.45;

/// Classes in the column order used by the tables below.
pub const CLASSES: [u32; 3] = [CLASS_PEDESTRIAN, CLASS_TRAFFIC_LIGHT, CLASS_VEHICLE];

pub fn edge_channel() -> ChannelParams {
    ChannelParams::default()
}

/// Cloud link before calibration: same radio, longer one-way latency.
pub fn cloud_channel_nominal() -> ChannelParams {
    ChannelParams {
        base_latency_up_ms: CLOUD_BASE_LATENCY_MS,
        base_latency_down_ms: CLOUD_BASE_LATENCY_MS,
        ..ChannelParams::default()
    }
}

/// Measured end-to-end delay for one strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayRow {
    pub platform: Platform,
    pub scenario: ScenarioLabel,
    pub payload_bytes: f64,
    pub delay_ms: f64,
}

impl DelayRow {
    pub fn key(&self) -> StrategyKey {
        StrategyKey::new(self.platform, self.scenario)
    }
}

const MEASURED: [(ScenarioLabel, f64, f64, f64, f64); 9] = [
    // scenario, edge bytes, edge ms, cloud bytes, cloud ms
    (ScenarioLabel::Raw, 1_228_800.0, 123.20, 4_915_200.0, 521.7),
    (ScenarioLabel::JpegH, 174_120.0, 59.48, 604_380.0, 74.50),
    (ScenarioLabel::JpegM, 40_780.0, 43.59, 125_510.0, 40.71),
    (ScenarioLabel::JpegL, 17_860.0, 39.62, 53_780.0, 32.93),
    (ScenarioLabel::JpegVl, 9_480.0, 37.27, 28_600.0, 29.42),
    (ScenarioLabel::H265H, 100_000.0, 48.65, 220_000.0, 46.93),
    (ScenarioLabel::H265M, 4_200.0, 41.61, 11_200.0, 30.21),
    (ScenarioLabel::H265L, 1_800.0, 38.51, 4_690.0, 28.72),
    (ScenarioLabel::H265Vl, 260.0, 37.47, 690.0, 27.78),
];

/// Measured payloads and delays for a remote platform, in scenario order.
pub fn delay_rows(platform: Platform) -> Vec<DelayRow> {
    MEASURED
        .iter()
        .filter_map(|&(scenario, eb, ems, cb, cms)| {
            let (payload_bytes, delay_ms) = match platform {
                Platform::Edge => (eb, ems),
                Platform::Cloud => (cb, cms),
                Platform::Local => return None,
            };
            Some(DelayRow {
                platform,
                scenario,
                payload_bytes,
                delay_ms,
            })
        })
        .collect()
}

pub fn delay_row(platform: Platform, scenario: ScenarioLabel) -> Option<DelayRow> {
    delay_rows(platform).into_iter().find(|r| r.scenario == scenario)
}

fn size_curve(codec: Codec, resolution: Resolution, platform: Platform) -> CodecCurve {
    let samples = delay_rows(platform)
        .into_iter()
        .filter(|r| r.scenario.codec() == codec)
        .map(|r| CurveSample::size_only(r.scenario.quality().expect("coded"), r.payload_bytes))
        .collect();
    CodecCurve::new(codec, resolution, samples).expect("measured sizes are monotone")
}

/// Size curves for JPEG and H.265 at both model resolutions, sampled at the
/// four named quality levels.
pub fn reference_curves() -> CurveSet {
    let mut set = CurveSet::new();
    for codec in [Codec::Jpeg, Codec::H265] {
        set.insert(size_curve(codec, RES_640, Platform::Edge));
        set.insert(size_curve(codec, RES_1280, Platform::Cloud));
    }
    set
}

/// Codec times are negligible next to transfer and inference at these sizes.
pub fn reference_options() -> PipelineOptions {
    PipelineOptions {
        codec_times: CodecTimeDefaults::zero(),
        ..PipelineOptions::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSetup {
    pub local: PlatformProfile,
    pub edge: PlatformProfile,
    pub cloud: PlatformProfile,
    pub curves: CurveSet,
    pub options: PipelineOptions,
}

impl ReferenceSetup {
    pub fn profile(&self, platform: Platform) -> &PlatformProfile {
        match platform {
            Platform::Local => &self.local,
            Platform::Edge => &self.edge,
            Platform::Cloud => &self.cloud,
        }
    }

    pub fn strategy(&self, key: StrategyKey) -> Result<Strategy> {
        key.strategy(self.profile(key.platform))
    }

    /// Local RAW plus all nine scenarios on each remote platform.
    pub fn strategy_keys() -> Vec<StrategyKey> {
        std::iter::once(StrategyKey::new(Platform::Local, ScenarioLabel::Raw))
            .chain(
                [Platform::Edge, Platform::Cloud]
                    .into_iter()
                    .flat_map(|p| ScenarioLabel::ALL.map(|s| StrategyKey::new(p, s))),
            )
            .collect()
    }
}

fn remote_profile(name: Platform, resolution: Resolution, channel: ChannelParams) -> PlatformProfile {
    PlatformProfile {
        name,
        model_label: match name {
            Platform::Cloud => "YOLOv5 large (high-res)".into(),
            _ => "YOLOv5 large".into(),
        },
        input_resolution: resolution,
        inference_ms: 1.0,
        channel: Some(channel),
    }
}

/// Inference time left over from the smallest-payload measurement.
fn asymptote_inference(profile: &PlatformProfile, curves: &CurveSet, opts: &PipelineOptions) -> Result<f64> {
    let row = delay_row(profile.name, ScenarioLabel::H265Vl).expect("measured");
    let s = Strategy::new(profile.clone(), named_scenario(row.scenario, profile.input_resolution))?;
    derive_inference_residual(row.delay_ms, &s, curves, opts)
}

/// Cloud per-packet overhead and inference fitted jointly to the raw and
/// smallest-payload rows, with the throughput held at its nominal value.
pub fn calibrate_cloud(curves: &CurveSet, opts: &PipelineOptions) -> Result<PlatformProfile> {
    let nominal = cloud_channel_nominal();
    let mut profile = remote_profile(Platform::Cloud, RES_1280, nominal);
    let rows = [
        delay_row(Platform::Cloud, ScenarioLabel::Raw).expect("measured"),
        delay_row(Platform::Cloud, ScenarioLabel::H265Vl).expect("measured"),
    ];
    profile.inference_ms = asymptote_inference(&profile, curves, opts)?;
    for _ in 0..32 {
        let known = profile.inference_ms
            + nominal.base_latency_up_ms
            + crate::network::downlink_delay(opts.result_bytes, &nominal);
        let obs: Vec<Observation> = rows
            .iter()
            .map(|r| Observation {
                size_bytes: r.payload_bytes,
                measured_ms: r.delay_ms,
                known_ms: known,
            })
            .collect();
        let cal = calibrate(
            &obs,
            nominal.packet_payload_bytes,
            CalibrationMode::PinnedThroughput(nominal.throughput_mbps),
        )?;
        profile.channel = Some(cal.apply(&nominal));
        let next = asymptote_inference(&profile, curves, opts)?;
        let done = (next - profile.inference_ms).abs() < 1e-12;
        profile.inference_ms = next;
        if done {
            break;
        }
    }
    Ok(profile)
}

/// Default setup: local small model, edge over the nominal link, cloud over
/// the calibrated link, inference times recovered from the measurements.
pub fn reference_setup() -> ReferenceSetup {
    let curves = reference_curves();
    let options = reference_options();
    let local = PlatformProfile {
        name: Platform::Local,
        model_label: "YOLOv5 small".into(),
        input_resolution: RES_640,
        inference_ms: LOCAL_INFERENCE_MS,
        channel: None,
    };
    let mut edge = remote_profile(Platform::Edge, RES_640, edge_channel());
    edge.inference_ms = asymptote_inference(&edge, &curves, &options).expect("edge residual");
    let cloud = calibrate_cloud(&curves, &options).expect("cloud calibration");
    ReferenceSetup {
        local,
        edge,
        cloud,
        curves,
        options,
    }
}

/// Detection quality of each model on uncompressed frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelAccuracy {
    pub model: &'static str,
    pub reported_map: f64,
    /// Pedestrian, traffic light, vehicle.
    pub class_ap: [f64; 3],
}

pub const MODEL_ACCURACY: [ModelAccuracy; 3] = [
    ModelAccuracy {
        model: "small",
        reported_map: 0.64,
        class_ap: [0.30, 0.80, 0.79],
    },
    ModelAccuracy {
        model: "large",
        reported_map: 0.66,
        class_ap: [0.36, 0.82, 0.81],
    },
    ModelAccuracy {
        model: "large-high-res",
        reported_map: 0.85,
        class_ap: [0.81, 0.86, 0.89],
    },
];

/// Instance counts per split: pedestrian, traffic light, vehicle.
pub const SPLIT_COUNTS: [(&str, [u64; 3]); 3] = [
    ("train", [12916, 43418, 33351]),
    ("validation", [2164, 8272, 11295]),
    ("test", [1756, 11115, 7897]),
];

pub const SPLIT_TOTALS: [u64; 3] = [16836, 62805, 52576];

/// Overall mAP with measured delay for local and the H/M/L settings.
const TRADEOFF: [(Platform, ScenarioLabel, f64, f64); 13] = [
    (Platform::Local, ScenarioLabel::Raw, 0.64, 19.5),
    (Platform::Edge, ScenarioLabel::JpegH, 0.67, 59.48),
    (Platform::Edge, ScenarioLabel::JpegM, 0.66, 43.59),
    (Platform::Edge, ScenarioLabel::JpegL, 0.51, 39.62),
    (Platform::Edge, ScenarioLabel::H265H, 0.67, 48.65),
    (Platform::Edge, ScenarioLabel::H265M, 0.57, 41.61),
    (Platform::Edge, ScenarioLabel::H265L, 0.45, 38.51),
    (Platform::Cloud, ScenarioLabel::JpegH, 0.85, 74.50),
    (Platform::Cloud, ScenarioLabel::JpegM, 0.81, 40.71),
    (Platform::Cloud, ScenarioLabel::JpegL, 0.58, 32.93),
    (Platform::Cloud, ScenarioLabel::H265H, 0.82, 46.93),
    (Platform::Cloud, ScenarioLabel::H265M, 0.82, 30.21),
    (Platform::Cloud, ScenarioLabel::H265L, 0.72, 28.72),
];

pub fn tradeoff_fixture() -> Vec<FixtureRecord> {
    TRADEOFF
        .iter()
        .map(|&(platform, scenario, map, delay)| FixtureRecord {
            key: StrategyKey::new(platform, scenario),
            map_value: Some(map),
            per_class_ap: None,
            delay_ms: Some(delay),
        })
        .collect()
}

/// Per-class AP: pedestrian, traffic light, vehicle.
const PER_CLASS: [(Platform, ScenarioLabel, [f64; 3]); 19] = [
    (Platform::Local, ScenarioLabel::Raw, [0.30, 0.80, 0.79]),
    (Platform::Edge, ScenarioLabel::Raw, [0.36, 0.82, 0.81]),
    (Platform::Cloud, ScenarioLabel::Raw, [0.81, 0.86, 0.89]),
    (Platform::Edge, ScenarioLabel::JpegH, [0.36, 0.82, 0.80]),
    (Platform::Cloud, ScenarioLabel::JpegH, [0.80, 0.86, 0.89]),
    (Platform::Edge, ScenarioLabel::JpegM, [0.41, 0.78, 0.83]),
    (Platform::Cloud, ScenarioLabel::JpegM, [0.65, 0.85, 0.88]),
    (Platform::Edge, ScenarioLabel::JpegL, [0.35, 0.74, 0.77]),
    (Platform::Cloud, ScenarioLabel::JpegL, [0.43, 0.81, 0.84]),
    (Platform::Edge, ScenarioLabel::JpegVl, [0.23, 0.55, 0.73]),
    (Platform::Cloud, ScenarioLabel::JpegVl, [0.24, 0.62, 0.78]),
    (Platform::Edge, ScenarioLabel::H265H, [0.36, 0.83, 0.80]),
    (Platform::Cloud, ScenarioLabel::H265H, [0.68, 0.83, 0.83]),
    (Platform::Edge, ScenarioLabel::H265M, [0.25, 0.82, 0.78]),
    (Platform::Cloud, ScenarioLabel::H265M, [0.69, 0.82, 0.84]),
    (Platform::Edge, ScenarioLabel::H265L, [0.04, 0.72, 0.59]),
    (Platform::Cloud, ScenarioLabel::H265L, [0.51, 0.82, 0.82]),
    (Platform::Edge, ScenarioLabel::H265Vl, [0.01, 0.03, 0.02]),
    (Platform::Cloud, ScenarioLabel::H265Vl, [0.03, 0.04, 0.23]),
];

pub fn per_class_fixture() -> Vec<FixtureRecord> {
    PER_CLASS
        .iter()
        .map(|&(platform, scenario, aps)| FixtureRecord {
            key: StrategyKey::new(platform, scenario),
            map_value: None,
            per_class_ap: Some(CLASSES.iter().copied().zip(aps).collect::<BTreeMap<_, _>>()),
            delay_ms: None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::end_to_end_delay;

    #[test]
    fn curves_cover_named_levels() {
        let set = reference_curves();
        assert_eq!(set.iter().count(), 4);
        assert_eq!(set.get(Codec::Jpeg, RES_640).unwrap().span(), (10, 100));
        assert_eq!(set.get(Codec::H265, RES_1280).unwrap().span(), (0, 51));
    }

    #[test]
    fn edge_inference_is_small_payload_residual() {
        let s = reference_setup();
        // 37.47 - 0.43 - 0.43 - 260*8/113.94e3
        let oracle = 37.47 - 0.86 - 260.0 * 8.0 / 113.94e3;
        assert!((s.edge.inference_ms - oracle).abs() < 1e-9);
    }

    #[test]
    fn cloud_fit_reproduces_both_rows() {
        let s = reference_setup();
        let ch = s.cloud.channel.unwrap();
        assert!((ch.per_packet_overhead_ms - 0.124).abs() < 0.001);
        assert_eq!(ch.throughput_mbps, 113.94);
        for sc in [ScenarioLabel::Raw, ScenarioLabel::H265Vl] {
            let key = StrategyKey::new(Platform::Cloud, sc);
            let b = end_to_end_delay(&s.strategy(key).unwrap(), &s.curves, &s.options).unwrap();
            let row = delay_row(Platform::Cloud, sc).unwrap();
            assert!((b.total_ms - row.delay_ms).abs() < 1e-6, "{sc}: {}", b.total_ms);
        }
    }

    #[test]
    fn fixtures_are_consistent() {
        assert_eq!(tradeoff_fixture().len(), 13);
        assert_eq!(per_class_fixture().len(), 19);
        // the published vehicle total is 33 above its column sum
        let sums: Vec<u64> = (0..3).map(|c| SPLIT_COUNTS.iter().map(|(_, n)| n[c]).sum()).collect();
        assert_eq!(sums, [16836, 62805, 52543]);
        assert_eq!(SPLIT_TOTALS[2] - sums[2], 33);
        assert_eq!(ReferenceSetup::strategy_keys().len(), 19);
    }
}
