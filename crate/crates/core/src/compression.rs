//! Payload size and codec time model for JPEG (Q-value) and H.265 (CRF,
//! I/P frames only, no lookahead).
//!
//! Sizes are not produced by encoders here. They come from measured
//! quality→bytes curves, either the built-in reference curves or curves
//! ingested from measurement files, and are interpolated piecewise-linearly.
//! Sizes use decimal units (1 KB = 1000 B).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::ImageSize;
use crate::error::{Error, Result};

pub type Resolution = ImageSize;

pub const RES_640: Resolution = Resolution::new(640, 640);
pub const RES_1280: Resolution = Resolution::new(1280, 1280);

impl fmt::Display for ImageSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for ImageSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnknownLabel(s.to_string());
        let (w, h) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
        let width: u32 = w.trim().parse().map_err(|_| bad())?;
        let height: u32 = h.trim().parse().map_err(|_| bad())?;
        if width == 0 || height == 0 {
            return Err(bad());
        }
        Ok(Self { width, height })
    }
}

impl ImageSize {
    pub fn pixels(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    /// Uncompressed 8-bit RGB frame size.
    pub fn raw_bytes(&self) -> u64 {
        self.pixels() * 3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Codec {
    None,
    Jpeg,
    H265,
}

impl Codec {
    /// Inclusive quality parameter range, `None` for uncompressed frames.
    pub fn quality_range(self) -> Option<(u32, u32)> {
        match self {
            Codec::None => None,
            Codec::Jpeg => Some((0, 100)),
            Codec::H265 => Some((0, 51)),
        }
    }

    /// JPEG files grow with Q; H.265 payloads shrink as CRF grows.
    fn size_increases_with_quality(self) -> bool {
        matches!(self, Codec::Jpeg)
    }
}

impl fmt::Display for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Codec::None => "NONE",
            Codec::Jpeg => "JPEG",
            Codec::H265 => "H265",
        })
    }
}

impl FromStr for Codec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('.', "").as_str() {
            "NONE" | "RAW" => Ok(Codec::None),
            "JPEG" | "JPG" => Ok(Codec::Jpeg),
            "H265" | "HEVC" => Ok(Codec::H265),
            _ => Err(Error::UnknownLabel(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompressionSetting {
    pub codec: Codec,
    /// JPEG Q or H.265 CRF; always `None` for [`Codec::None`].
    pub quality: Option<u32>,
    pub resolution: Resolution,
}

impl CompressionSetting {
    pub fn raw(resolution: Resolution) -> Self {
        Self {
            codec: Codec::None,
            quality: None,
            resolution,
        }
    }

    pub fn new(codec: Codec, quality: u32, resolution: Resolution) -> Result<Self> {
        let (lo, hi) = codec.quality_range().ok_or_else(|| Error::QualityOutOfRange {
            codec: codec.to_string(),
            quality: quality as i64,
        })?;
        if quality < lo || quality > hi {
            return Err(Error::QualityOutOfRange {
                codec: codec.to_string(),
                quality: quality as i64,
            });
        }
        Ok(Self {
            codec,
            quality: Some(quality),
            resolution,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioLabel {
    Raw,
    JpegH,
    JpegM,
    JpegL,
    JpegVl,
    H265H,
    H265M,
    H265L,
    H265Vl,
}

impl ScenarioLabel {
    pub const ALL: [ScenarioLabel; 9] = [
        ScenarioLabel::Raw,
        ScenarioLabel::JpegH,
        ScenarioLabel::JpegM,
        ScenarioLabel::JpegL,
        ScenarioLabel::JpegVl,
        ScenarioLabel::H265H,
        ScenarioLabel::H265M,
        ScenarioLabel::H265L,
        ScenarioLabel::H265Vl,
    ];

    pub fn codec(self) -> Codec {
        self.parts().0
    }

    pub fn quality(self) -> Option<u32> {
        self.parts().1
    }

    fn parts(self) -> (Codec, Option<u32>) {
        use ScenarioLabel::*;
        match self {
            Raw => (Codec::None, None),
            JpegH => (Codec::Jpeg, Some(100)),
            JpegM => (Codec::Jpeg, Some(80)),
            JpegL => (Codec::Jpeg, Some(30)),
            JpegVl => (Codec::Jpeg, Some(10)),
            H265H => (Codec::H265, Some(0)),
            H265M => (Codec::H265, Some(24)),
            H265L => (Codec::H265, Some(30)),
            H265Vl => (Codec::H265, Some(51)),
        }
    }

    pub fn is_very_low(self) -> bool {
        matches!(self, ScenarioLabel::JpegVl | ScenarioLabel::H265Vl)
    }
}

impl fmt::Display for ScenarioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ScenarioLabel::*;
        f.write_str(match self {
            Raw => "RAW",
            JpegH => "JPEG-H",
            JpegM => "JPEG-M",
            JpegL => "JPEG-L",
            JpegVl => "JPEG-VL",
            H265H => "H265-H",
            H265M => "H265-M",
            H265L => "H265-L",
            H265Vl => "H265-VL",
        })
    }
}

impl FromStr for ScenarioLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('.', "");
        ScenarioLabel::ALL
            .into_iter()
            .find(|l| l.to_string() == norm)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

pub fn named_scenario(label: ScenarioLabel, resolution: Resolution) -> CompressionSetting {
    match label.quality() {
        None => CompressionSetting::raw(resolution),
        Some(q) => CompressionSetting {
            codec: label.codec(),
            quality: Some(q),
            resolution,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub quality: u32,
    pub bytes: f64,
    pub compress_ms: Option<f64>,
    pub decompress_ms: Option<f64>,
}

impl CurveSample {
    pub fn size_only(quality: u32, bytes: f64) -> Self {
        Self {
            quality,
            bytes,
            compress_ms: None,
            decompress_ms: None,
        }
    }
}

/// Measured mean payload (and optionally codec time) per quality level for
/// one codec at one resolution. Samples are kept sorted by quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecCurve {
    codec: Codec,
    resolution: Resolution,
    samples: Vec<CurveSample>,
}

impl CodecCurve {
    pub fn new(codec: Codec, resolution: Resolution, mut samples: Vec<CurveSample>) -> Result<Self> {
        let Some((lo, hi)) = codec.quality_range() else {
            return Err(Error::InvalidCurve("uncompressed frames have no curve".into()));
        };
        samples.sort_by_key(|s| s.quality);
        if samples.windows(2).any(|w| w[0].quality == w[1].quality) {
            return Err(Error::InvalidCurve("duplicate quality level".into()));
        }
        if samples.len() < 2 {
            return Err(Error::InsufficientQualityLevels(samples.len()));
        }
        for s in &samples {
            if s.quality < lo || s.quality > hi {
                return Err(Error::QualityOutOfRange {
                    codec: codec.to_string(),
                    quality: s.quality as i64,
                });
            }
            let times = [s.compress_ms, s.decompress_ms];
            if !(s.bytes.is_finite() && s.bytes >= 0.0)
                || times.iter().flatten().any(|t| !(t.is_finite() && *t >= 0.0))
            {
                return Err(Error::InvalidCurve(format!(
                    "non-finite or negative sample at quality {}",
                    s.quality
                )));
            }
        }
        if let Some(v) = monotonicity_violations(codec, &samples).first() {
            return Err(Error::InvalidCurve(v.to_string()));
        }
        Ok(Self {
            codec,
            resolution,
            samples,
        })
    }

    pub fn codec(&self) -> Codec {
        self.codec
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn samples(&self) -> &[CurveSample] {
        &self.samples
    }

    pub fn span(&self) -> (u32, u32) {
        (self.samples[0].quality, self.samples[self.samples.len() - 1].quality)
    }

    fn check(&self, setting: &CompressionSetting) -> Result<u32> {
        if setting.codec != self.codec || setting.resolution != self.resolution {
            return Err(Error::CurveMismatch {
                expected: format!("{} {}", setting.codec, setting.resolution),
                found: format!("{} {}", self.codec, self.resolution),
            });
        }
        let q = setting.quality.ok_or_else(|| Error::QualityOutOfRange {
            codec: setting.codec.to_string(),
            quality: -1,
        })?;
        let (min, max) = self.span();
        if q < min || q > max {
            return Err(Error::Extrapolation {
                quality: q,
                min,
                max,
            });
        }
        Ok(q)
    }

    fn bytes_at(&self, q: u32) -> f64 {
        interpolate(self.samples.iter().map(|s| (s.quality, s.bytes)), q)
            .expect("quality checked against span")
    }

    fn time_at(&self, q: u32, role: CodecRole) -> Option<f64> {
        let pick = |s: &CurveSample| match role {
            CodecRole::Compress => s.compress_ms,
            CodecRole::Decompress => s.decompress_ms,
        };
        interpolate(
            self.samples
                .iter()
                .filter_map(|s| pick(s).map(|t| (s.quality, t))),
            q,
        )
    }
}

/// Piecewise-linear lookup over points sorted by quality; `None` outside span.
fn interpolate(points: impl Iterator<Item = (u32, f64)>, q: u32) -> Option<f64> {
    let pts: Vec<(u32, f64)> = points.collect();
    let i = pts.partition_point(|(x, _)| *x < q);
    let &(x1, y1) = pts.get(i)?;
    if x1 == q {
        return Some(y1);
    }
    let &(x0, y0) = pts.get(i.checked_sub(1)?)?;
    let t = (q - x0) as f64 / (x1 - x0) as f64;
    Some(y0 + t * (y1 - y0))
}

/// Looks up curves by codec and resolution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    curves: BTreeMap<(Codec, Resolution), CodecCurve>,
}

impl CurveSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, curve: CodecCurve) -> Option<CodecCurve> {
        self.curves.insert((curve.codec, curve.resolution), curve)
    }

    pub fn get(&self, codec: Codec, resolution: Resolution) -> Option<&CodecCurve> {
        self.curves.get(&(codec, resolution))
    }

    /// Curve for a compressed setting; `Ok(None)` for uncompressed frames.
    pub fn for_setting(&self, setting: &CompressionSetting) -> Result<Option<&CodecCurve>> {
        if setting.codec == Codec::None {
            return Ok(None);
        }
        self.get(setting.codec, setting.resolution)
            .map(Some)
            .ok_or_else(|| Error::MissingCurve {
                codec: setting.codec.to_string(),
                resolution: setting.resolution.to_string(),
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = &CodecCurve> {
        self.curves.values()
    }
}

/// Expected mean payload in bytes. Uncompressed frames are `W·H·3`.
pub fn expected_size(setting: &CompressionSetting, curve: Option<&CodecCurve>) -> Result<f64> {
    if setting.codec == Codec::None {
        return Ok(setting.resolution.raw_bytes() as f64);
    }
    let curve = curve.ok_or_else(|| Error::MissingCurve {
        codec: setting.codec.to_string(),
        resolution: setting.resolution.to_string(),
    })?;
    let q = curve.check(setting)?;
    Ok(curve.bytes_at(q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecRole {
    Compress,
    Decompress,
}

/// Codec times used when a curve carries no timing samples. Values are for
/// [`CodecTimeDefaults::reference`] and scale with pixel count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecTimeDefaults {
    pub jpeg_compress_ms: f64,
    pub jpeg_decompress_ms: f64,
    pub h265_compress_ms: f64,
    pub h265_decompress_ms: f64,
    pub reference: Resolution,
}

impl Default for CodecTimeDefaults {
    fn default() -> Self {
        Self {
            jpeg_compress_ms: 2.0,
            jpeg_decompress_ms: 1.0,
            h265_compress_ms: 5.0,
            h265_decompress_ms: 2.0,
            reference: RES_640,
        }
    }
}

impl CodecTimeDefaults {
    pub fn zero() -> Self {
        Self {
            jpeg_compress_ms: 0.0,
            jpeg_decompress_ms: 0.0,
            h265_compress_ms: 0.0,
            h265_decompress_ms: 0.0,
            reference: RES_640,
        }
    }

    fn lookup(&self, codec: Codec, role: CodecRole, resolution: Resolution) -> f64 {
        let base = match (codec, role) {
            (Codec::None, _) => 0.0,
            (Codec::Jpeg, CodecRole::Compress) => self.jpeg_compress_ms,
            (Codec::Jpeg, CodecRole::Decompress) => self.jpeg_decompress_ms,
            (Codec::H265, CodecRole::Compress) => self.h265_compress_ms,
            (Codec::H265, CodecRole::Decompress) => self.h265_decompress_ms,
        };
        base * resolution.pixels() as f64 / self.reference.pixels() as f64
    }
}

/// Encode or decode time in milliseconds.
pub fn codec_time(
    setting: &CompressionSetting,
    role: CodecRole,
    curve: Option<&CodecCurve>,
    defaults: &CodecTimeDefaults,
) -> Result<f64> {
    if setting.codec == Codec::None {
        return Ok(0.0);
    }
    if let Some(curve) = curve {
        let q = curve.check(setting)?;
        if let Some(t) = curve.time_at(q, role) {
            return Ok(t);
        }
    }
    Ok(defaults.lookup(setting.codec, role, setting.resolution))
}

/// One observed encode of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub quality: u32,
    pub bytes: f64,
    pub compress_ms: Option<f64>,
    pub decompress_ms: Option<f64>,
}

impl Measurement {
    pub fn size_only(quality: u32, bytes: f64) -> Self {
        Self {
            quality,
            bytes,
            compress_ms: None,
            decompress_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityViolation {
    pub lower_quality: u32,
    pub upper_quality: u32,
    pub lower_bytes: f64,
    pub upper_bytes: f64,
}

impl fmt::Display for MonotonicityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "size not monotone between quality {} ({:.1} B) and {} ({:.1} B)",
            self.lower_quality, self.lower_bytes, self.upper_quality, self.upper_bytes
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestedCurve {
    pub curve: CodecCurve,
    /// Adjacent-level violations found in the raw means, before repair.
    pub violations: Vec<MonotonicityViolation>,
}

fn monotonicity_violations(codec: Codec, samples: &[CurveSample]) -> Vec<MonotonicityViolation> {
    samples
        .windows(2)
        .filter(|w| {
            if codec.size_increases_with_quality() {
                w[1].bytes < w[0].bytes
            } else {
                w[1].bytes > w[0].bytes
            }
        })
        .map(|w| MonotonicityViolation {
            lower_quality: w[0].quality,
            upper_quality: w[1].quality,
            lower_bytes: w[0].bytes,
            upper_bytes: w[1].bytes,
        })
        .collect()
}

/// Weighted pool-adjacent-violators fit of a nondecreasing sequence.
fn isotonic_nondecreasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    // (mean, weight, run length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 && blocks[blocks.len() - 2].0 > blocks[blocks.len() - 1].0 {
            let (m2, w2, n2) = blocks.pop().unwrap();
            let (m1, w1, n1) = blocks.pop().unwrap();
            let w = w1 + w2;
            blocks.push(((m1 * w1 + m2 * w2) / w, w, n1 + n2));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, n)| std::iter::repeat_n(m, n))
        .collect()
}

/// Builds a curve from raw measurements: per-quality arithmetic means, with
/// monotonicity violations reported and then repaired by isotonic regression
/// weighted by sample count.
pub fn ingest_measurements(
    codec: Codec,
    resolution: Resolution,
    records: &[Measurement],
) -> Result<IngestedCurve> {
    #[derive(Default)]
    struct Acc {
        n: usize,
        bytes: f64,
        comp: (f64, usize),
        decomp: (f64, usize),
    }
    let mut by_quality: BTreeMap<u32, Acc> = BTreeMap::new();
    for r in records {
        let a = by_quality.entry(r.quality).or_default();
        a.n += 1;
        a.bytes += r.bytes;
        if let Some(t) = r.compress_ms {
            a.comp.0 += t;
            a.comp.1 += 1;
        }
        if let Some(t) = r.decompress_ms {
            a.decomp.0 += t;
            a.decomp.1 += 1;
        }
    }
    if by_quality.len() < 2 {
        return Err(Error::InsufficientQualityLevels(by_quality.len()));
    }
    let mean = |(sum, n): (f64, usize)| (n > 0).then(|| sum / n as f64);
    let mut samples: Vec<CurveSample> = by_quality
        .iter()
        .map(|(&quality, a)| CurveSample {
            quality,
            bytes: a.bytes / a.n as f64,
            compress_ms: mean(a.comp),
            decompress_ms: mean(a.decomp),
        })
        .collect();
    let weights: Vec<f64> = by_quality.values().map(|a| a.n as f64).collect();

    let violations = monotonicity_violations(codec, &samples);
    if !violations.is_empty() {
        let increasing = codec.size_increases_with_quality();
        let signed: Vec<f64> = samples
            .iter()
            .map(|s| if increasing { s.bytes } else { -s.bytes })
            .collect();
        let fitted = isotonic_nondecreasing(&signed, &weights);
        for (s, v) in samples.iter_mut().zip(fitted) {
            s.bytes = if increasing { v } else { -v };
        }
    }
    let first = samples[0].bytes;
    if samples.iter().all(|s| s.bytes == first) {
        return Err(Error::DegenerateCurve(first));
    }
    Ok(IngestedCurve {
        curve: CodecCurve::new(codec, resolution, samples)?,
        violations,
    })
}

#[derive(Debug, Deserialize)]
struct MeasurementRow {
    codec: String,
    resolution: String,
    quality: u32,
    bytes: f64,
    compress_ms: Option<f64>,
    decompress_ms: Option<f64>,
}

/// Reads `codec,resolution,quality,bytes,compress_ms,decompress_ms` records
/// (timing columns may be empty) and ingests one curve per codec/resolution.
pub fn read_measurements<R: Read>(reader: R) -> Result<Vec<IngestedCurve>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut groups: BTreeMap<(Codec, Resolution), Vec<Measurement>> = BTreeMap::new();
    for row in rdr.deserialize::<MeasurementRow>() {
        let row = row?;
        let codec: Codec = row.codec.parse()?;
        let resolution: Resolution = row.resolution.parse()?;
        groups.entry((codec, resolution)).or_default().push(Measurement {
            quality: row.quality,
            bytes: row.bytes,
            compress_ms: row.compress_ms,
            decompress_ms: row.decompress_ms,
        });
    }
    groups
        .into_iter()
        .map(|((codec, res), recs)| ingest_measurements(codec, res, &recs))
        .collect()
}

/// Exports curves as measurement-style records, one line per sample.
pub fn write_curves<'a, W: Write>(
    writer: W,
    curves: impl IntoIterator<Item = &'a CodecCurve>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "codec",
        "resolution",
        "quality",
        "bytes",
        "compress_ms",
        "decompress_ms",
    ])?;
    let opt = |t: Option<f64>| t.map(|v| format!("{v}")).unwrap_or_default();
    for c in curves {
        for s in c.samples() {
            w.write_record([
                c.codec.to_string(),
                c.resolution.to_string(),
                s.quality.to_string(),
                format!("{}", s.bytes),
                opt(s.compress_ms),
                opt(s.decompress_ms),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Decimal human-readable size as printed in reports: "1.23 MB", "174.12 KB".
pub fn human_size(bytes: f64) -> String {
    if bytes >= 1e6 {
        format!("{:.2} MB", bytes / 1e6)
    } else {
        format!("{:.2} KB", bytes / 1e3)
    }
}
