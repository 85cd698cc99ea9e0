//! Detection scoring: IoU, per-frame greedy matching, precision-recall curves,
//! all-point interpolated AP and mAP.
//!
//! A detection is a true positive when its IoU with an unclaimed ground truth
//! of the same class is at least the threshold (0.5 for AP@50).

use std::collections::BTreeMap;
use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Axis-aligned pixel box with a class label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub class_id: u32,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(class_id: u32, x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            class_id,
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidBox(format!(
                "coordinates must be finite and non-negative: {coords:?}"
            )));
        }
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::InvalidBox(format!(
                "expected x_min < x_max and y_min < y_max: {coords:?}"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y_max - self.y_min).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidConfidence(confidence));
        }
        Ok(Self { bbox, confidence })
    }

    pub fn class_id(&self) -> u32 {
        self.bbox.class_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub bbox: BoundingBox,
    pub frame_id: String,
}

impl GroundTruthBox {
    pub fn class_id(&self) -> u32 {
        self.bbox.class_id
    }
}

/// One detection's outcome after matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredDetection {
    pub confidence: f64,
    pub true_positive: bool,
}

/// Matching outcome for one class, either within a frame or pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub class_id: u32,
    /// Detections in the order they were matched (descending confidence).
    pub detections: Vec<ScoredDetection>,
    pub false_negatives: usize,
    pub ground_truths: usize,
}

impl MatchResult {
    fn empty(class_id: u32) -> Self {
        Self {
            class_id,
            detections: Vec::new(),
            false_negatives: 0,
            ground_truths: 0,
        }
    }

    pub fn true_positives(&self) -> usize {
        self.detections.iter().filter(|d| d.true_positive).count()
    }

    pub fn false_positives(&self) -> usize {
        self.detections.len() - self.true_positives()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub ground_truths: usize,
}

/// Intersection over union; zero for disjoint or degenerate boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 || inter <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy class-restricted matching of one frame's detections.
///
/// Detections are visited by descending confidence (stable, so ties keep
/// input order). Each claims the unmatched ground truth of its class with the
/// highest IoU at or above `iou_threshold`; IoU ties go to the lowest index.
/// Every class present among detections or ground truths gets an entry.
pub fn match_frame(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    iou_threshold: f64,
) -> BTreeMap<u32, MatchResult> {
    let mut results: BTreeMap<u32, MatchResult> = BTreeMap::new();
    for gt in gts {
        results
            .entry(gt.class_id())
            .or_insert_with(|| MatchResult::empty(gt.class_id()))
            .ground_truths += 1;
    }

    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].confidence.total_cmp(&dets[i].confidence));

    let mut claimed = vec![false; gts.len()];
    for i in order {
        let det = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if claimed[g] || gt.class_id() != det.class_id() {
                continue;
            }
            let overlap = iou(&det.bbox, &gt.bbox);
            if overlap < iou_threshold {
                continue;
            }
            if best.is_none_or(|(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        if let Some((g, _)) = best {
            claimed[g] = true;
        }
        results
            .entry(det.class_id())
            .or_insert_with(|| MatchResult::empty(det.class_id()))
            .detections
            .push(ScoredDetection {
                confidence: det.confidence,
                true_positive: best.is_some(),
            });
    }

    for (g, gt) in gts.iter().enumerate() {
        if !claimed[g] {
            if let Some(r) = results.get_mut(&gt.class_id()) {
                r.false_negatives += 1;
            }
        }
    }
    results
}

/// Pools one class's matches across frames into a precision-recall curve.
/// Detections sharing a confidence form a single point.
pub fn precision_recall_curve(matches: &[MatchResult]) -> Result<PrCurve> {
    let class_id = matches.first().map(|m| m.class_id).unwrap_or_default();
    let ground_truths: usize = matches.iter().map(|m| m.ground_truths).sum();
    if ground_truths == 0 {
        return Err(Error::UndefinedAp { class_id });
    }

    let mut pooled: Vec<ScoredDetection> = matches
        .iter()
        .flat_map(|m| m.detections.iter().copied())
        .collect();
    pooled.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));

    // one operating point per distinct confidence: equal scores are
    // accepted or rejected together by any threshold
    let total = ground_truths as f64;
    let mut tp = 0usize;
    let mut points = Vec::new();
    for (i, d) in pooled.iter().enumerate() {
        if d.true_positive {
            tp += 1;
        }
        if pooled.get(i + 1).is_some_and(|n| n.confidence == d.confidence) {
            continue;
        }
        points.push(PrPoint {
            recall: tp as f64 / total,
            precision: tp as f64 / (i + 1) as f64,
        });
    }
    Ok(PrCurve {
        points,
        ground_truths,
    })
}

/// Exact area under the right-to-left maximum precision envelope.
pub fn average_precision(curve: &PrCurve) -> f64 {
    let n = curve.points.len();
    if n == 0 {
        return 0.0;
    }
    let mut envelope = vec![0.0; n];
    let mut running = 0.0f64;
    for i in (0..n).rev() {
        running = running.max(curve.points[i].precision);
        envelope[i] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in curve.points.iter().zip(envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    ap.clamp(0.0, 1.0)
}

/// Unweighted mean over the supplied per-class APs.
pub fn mean_ap(per_class: &BTreeMap<u32, f64>) -> Result<f64> {
    if per_class.is_empty() {
        return Err(Error::EmptyClassMap);
    }
    Ok(per_class.values().sum::<f64>() / per_class.len() as f64)
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    /// Detections below this confidence are dropped before matching.
    pub min_confidence: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            min_confidence: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class_id: u32,
    pub ground_truths: usize,
    pub detections: usize,
    pub true_positives: usize,
    /// `None` when the class has no ground truth.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub per_class: BTreeMap<u32, ClassMetrics>,
    /// Mean over classes with at least one ground truth; `None` if there are none.
    pub map: Option<f64>,
}

impl EvalSummary {
    pub fn per_class_ap(&self) -> BTreeMap<u32, f64> {
        self.per_class
            .iter()
            .filter_map(|(c, m)| m.ap.map(|ap| (*c, ap)))
            .collect()
    }
}

/// Scores a whole test set. Detections and ground truths are keyed by frame id.
pub fn evaluate(
    detections: &[(String, Detection)],
    ground_truths: &[GroundTruthBox],
    opts: EvalOptions,
) -> EvalSummary {
    let mut frames: BTreeMap<&str, (Vec<Detection>, Vec<GroundTruthBox>)> = BTreeMap::new();
    for (frame, det) in detections {
        if det.confidence >= opts.min_confidence {
            frames.entry(frame.as_str()).or_default().0.push(*det);
        }
    }
    for gt in ground_truths {
        frames
            .entry(gt.frame_id.as_str())
            .or_default()
            .1
            .push(gt.clone());
    }

    let per_frame: Vec<BTreeMap<u32, MatchResult>> = frames
        .par_iter()
        .map(|(_, (dets, gts))| match_frame(dets, gts, opts.iou_threshold))
        .collect();

    let mut by_class: BTreeMap<u32, Vec<MatchResult>> = BTreeMap::new();
    for frame in per_frame {
        for (class_id, m) in frame {
            by_class.entry(class_id).or_default().push(m);
        }
    }

    let per_class: BTreeMap<u32, ClassMetrics> = by_class
        .into_iter()
        .map(|(class_id, matches)| {
            let ap = precision_recall_curve(&matches)
                .ok()
                .map(|c| average_precision(&c));
            let metrics = ClassMetrics {
                class_id,
                ground_truths: matches.iter().map(|m| m.ground_truths).sum(),
                detections: matches.iter().map(|m| m.detections.len()).sum(),
                true_positives: matches.iter().map(|m| m.true_positives()).sum(),
                ap,
            };
            (class_id, metrics)
        })
        .collect();

    let aps: BTreeMap<u32, f64> = per_class
        .iter()
        .filter_map(|(c, m)| m.ap.map(|ap| (*c, ap)))
        .collect();
    EvalSummary {
        map: mean_ap(&aps).ok(),
        per_class,
    }
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader)
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column {name:?}"),
        })
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize, name: &str) -> Result<T> {
    let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
    let raw = record.get(idx).ok_or_else(|| Error::Parse {
        line,
        message: format!("missing field {name}"),
    })?;
    raw.parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {name} from {raw:?}"),
    })
}

fn with_line<T>(record: &csv::StringRecord, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { .. } => e,
        other => Error::Parse {
            line: record.position().map(|p| p.line() as usize).unwrap_or(0),
            message: other.to_string(),
        },
    })
}

/// Reads `frame_id,class_id,confidence,x_min,y_min,x_max,y_max` records.
pub fn read_detections<R: Read>(reader: R) -> Result<Vec<(String, Detection)>> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = DETECTION_COLUMNS
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let frame: String = field(&record, idx[0], "frame_id")?;
        let class_id = field(&record, idx[1], "class_id")?;
        let confidence: f64 = field(&record, idx[2], "confidence")?;
        let bbox = BoundingBox::new(
            class_id,
            field(&record, idx[3], "x_min")?,
            field(&record, idx[4], "y_min")?,
            field(&record, idx[5], "x_max")?,
            field(&record, idx[6], "y_max")?,
        );
        let det = with_line(&record, bbox.and_then(|b| Detection::new(b, confidence)))?;
        out.push((frame, det));
    }
    Ok(out)
}

/// Reads `frame_id,class_id,x_min,y_min,x_max,y_max` records.
pub fn read_ground_truth<R: Read>(reader: R) -> Result<Vec<GroundTruthBox>> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = GROUND_TRUTH_COLUMNS
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let frame_id: String = field(&record, idx[0], "frame_id")?;
        let bbox = BoundingBox::new(
            field(&record, idx[1], "class_id")?,
            field(&record, idx[2], "x_min")?,
            field(&record, idx[3], "y_min")?,
            field(&record, idx[4], "x_max")?,
            field(&record, idx[5], "y_max")?,
        );
        let bbox = with_line(&record, bbox)?;
        out.push(GroundTruthBox { bbox, frame_id });
    }
    Ok(out)
}

pub const DETECTION_COLUMNS: [&str; 7] = [
    "frame_id",
    "class_id",
    "confidence",
    "x_min",
    "y_min",
    "x_max",
    "y_max",
];

pub const GROUND_TRUTH_COLUMNS: [&str; 6] =
    ["frame_id", "class_id", "x_min", "y_min", "x_max", "y_max"];
