use std::collections::BTreeMap;

use offload_core::eval::{
    average_precision, evaluate, iou, match_frame, mean_ap, precision_recall_curve, BoundingBox,
    Detection, EvalOptions, GroundTruthBox,
};
use proptest::prelude::*;

fn bbox(class_id: u32, x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
    BoundingBox {
        class_id,
        x_min: x,
        y_min: y,
        x_max: x + w,
        y_max: y + h,
    }
}

fn arb_box(class_id: u32) -> impl Strategy<Value = BoundingBox> {
    (0.0..40.0f64, 0.0..40.0f64, 1.0..30.0f64, 1.0..30.0f64)
        .prop_map(move |(x, y, w, h)| bbox(class_id, x, y, w, h))
}

fn arb_instance() -> impl Strategy<Value = (Vec<Detection>, Vec<GroundTruthBox>)> {
    let dets = prop::collection::vec(
        (arb_box(0), prop_oneof![0.0..1.0f64, Just(0.5)]),
        0..=10,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(bbox, confidence)| Detection { bbox, confidence })
            .collect::<Vec<_>>()
    });
    let gts = prop::collection::vec(arb_box(0), 1..=5).prop_map(|v| {
        v.into_iter()
            .map(|bbox| GroundTruthBox {
                bbox,
                frame_id: "f".into(),
            })
            .collect::<Vec<_>>()
    });
    (dets, gts)
}

/// Greedy matching, restated: walk detections by descending confidence and
/// let each take the best remaining ground truth at or above 0.5 IoU.
fn oracle_tp_flags(dets: &[Detection], gts: &[GroundTruthBox]) -> Vec<(f64, bool)> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| dets[b].confidence.partial_cmp(&dets[a].confidence).unwrap());
    let mut used = vec![false; gts.len()];
    let mut out = Vec::new();
    for i in idx {
        let mut pick = None;
        let mut best = -1.0;
        for (g, gt) in gts.iter().enumerate() {
            let o = iou(&dets[i].bbox, &gt.bbox);
            if !used[g] && o >= 0.5 && o > best {
                best = o;
                pick = Some(g);
            }
        }
        if let Some(g) = pick {
            used[g] = true;
        }
        out.push((dets[i].confidence, pick.is_some()));
    }
    out
}

/// AP by enumerating every confidence threshold: each threshold yields one
/// (recall, precision) pair, and AP integrates the best precision available
/// at or beyond each recall level.
fn oracle_ap(flags: &[(f64, bool)], n_gt: usize) -> f64 {
    let mut thresholds: Vec<f64> = flags.iter().map(|f| f.0).collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    let ops: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let kept: Vec<_> = flags.iter().filter(|f| f.0 >= t).collect();
            let tp = kept.iter().filter(|f| f.1).count() as f64;
            (tp / n_gt as f64, tp / kept.len() as f64)
        })
        .collect();
    let mut levels: Vec<f64> = ops.iter().map(|o| o.0).collect();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in levels {
        let p = ops
            .iter()
            .filter(|o| o.0 >= r)
            .map(|o| o.1)
            .fold(0.0, f64::max);
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

fn ap_of(dets: &[Detection], gts: &[GroundTruthBox]) -> f64 {
    let m = match_frame(dets, gts, 0.5);
    let curve = precision_recall_curve(&[m[&0].clone()]).unwrap();
    average_precision(&curve)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn ap_matches_threshold_oracle((dets, gts) in arb_instance()) {
        let got = ap_of(&dets, &gts);
        let want = oracle_ap(&oracle_tp_flags(&dets, &gts), gts.len());
        prop_assert!((got - want).abs() < 1e-9, "got {got}, oracle {want}");
    }

    #[test]
    fn iou_symmetric_and_bounded(a in arb_box(0), b in arb_box(0)) {
        let ab = iou(&a, &b);
        prop_assert_eq!(ab, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iou_translation_and_scale_invariant(
        a in arb_box(0), b in arb_box(0),
        dx in -100.0..100.0f64, dy in -100.0..100.0f64, k in 0.1..10.0f64,
    ) {
        let shift = |x: &BoundingBox| bbox(0, x.x_min + dx, x.y_min + dy, x.width(), x.height());
        let scale = |x: &BoundingBox| bbox(0, x.x_min * k, x.y_min * k, x.width() * k, x.height() * k);
        let base = iou(&a, &b);
        prop_assert!((iou(&shift(&a), &shift(&b)) - base).abs() < 1e-9);
        prop_assert!((iou(&scale(&a), &scale(&b)) - base).abs() < 1e-9);
    }

    #[test]
    fn matches_account_for_every_ground_truth((dets, gts) in arb_instance()) {
        let m = match_frame(&dets, &gts, 0.5);
        let r = &m[&0];
        prop_assert_eq!(r.true_positives() + r.false_negatives, gts.len());
        prop_assert_eq!(r.detections.len(), dets.len());
        prop_assert!(r.true_positives() <= gts.len().min(dets.len()));
    }

    #[test]
    fn low_confidence_false_positive_never_raises_ap((dets, gts) in arb_instance()) {
        let before = ap_of(&dets, &gts);
        let mut more = dets.clone();
        // far from every ground truth, below every other score
        more.push(Detection { bbox: bbox(0, 500.0, 500.0, 5.0, 5.0), confidence: -1.0 });
        prop_assert!(ap_of(&more, &gts) <= before + 1e-12);
    }

    #[test]
    fn map_is_permutation_invariant(aps in prop::collection::vec(0.0..=1.0f64, 1..8), seed in any::<u64>()) {
        let forward: BTreeMap<u32, f64> = aps.iter().enumerate().map(|(i, a)| (i as u32, *a)).collect();
        let n = aps.len() as u32;
        let shuffled: BTreeMap<u32, f64> = aps
            .iter()
            .enumerate()
            .map(|(i, a)| (((i as u64).wrapping_mul(2654435761).wrapping_add(seed) % 1_000_003) as u32 * n + i as u32, *a))
            .collect();
        let a = mean_ap(&forward).unwrap();
        let b = mean_ap(&shuffled).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((a - aps.iter().sum::<f64>() / aps.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn evaluate_agrees_with_single_frame_path((dets, gts) in arb_instance()) {
        let tagged: Vec<(String, Detection)> = dets.iter().map(|d| ("f".to_string(), *d)).collect();
        let summary = evaluate(&tagged, &gts, EvalOptions::default());
        let map = summary.map.unwrap();
        prop_assert!((map - ap_of(&dets, &gts)).abs() < 1e-12);
    }
}

#[test]
fn perfect_and_empty_detection_sets() {
    let gts: Vec<GroundTruthBox> = (0..3)
        .map(|i| GroundTruthBox {
            bbox: bbox(0, 20.0 * i as f64, 0.0, 10.0, 10.0),
            frame_id: "f".into(),
        })
        .collect();
    let perfect: Vec<Detection> = gts
        .iter()
        .enumerate()
        .map(|(i, g)| Detection {
            bbox: g.bbox,
            confidence: 0.9 - i as f64 * 0.1,
        })
        .collect();
    assert_eq!(ap_of(&perfect, &gts), 1.0);
    assert_eq!(ap_of(&[], &gts), 0.0);
}
