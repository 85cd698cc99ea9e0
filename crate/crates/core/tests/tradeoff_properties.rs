use offload_core::compression::ScenarioLabel;
use offload_core::eval::EvalOptions;
use offload_core::pipeline::Platform;
use offload_core::presets::{per_class_fixture, reference_setup, tradeoff_fixture};
use offload_core::tradeoff::{
    emit_report, evaluate_strategies, pareto_frontier, pareto_indices, per_class_table,
    select_best, ReportFormat, SelectionPolicy, StrategyInput, StrategyKey, TradeoffPoint,
};
use offload_core::Error;
use proptest::prelude::*;

fn dominates(q: (f64, f64), p: (f64, f64)) -> bool {
    q.0 <= p.0 && q.1 >= p.1 && (q.0 < p.0 || q.1 > p.1)
}

fn brute_force_frontier(pts: &[(f64, f64)]) -> Vec<usize> {
    let mut keep: Vec<usize> = (0..pts.len())
        .filter(|&i| !pts.iter().any(|&q| dominates(q, pts[i])))
        .collect();
    keep.sort_by(|&a, &b| pts[a].0.partial_cmp(&pts[b].0).unwrap().then(a.cmp(&b)));
    keep
}

/// Coarse grid values so duplicates and ties are common.
fn arb_points(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0u32..60, 0u32..40), 0..max)
        .prop_map(|v| v.into_iter().map(|(d, m)| (d as f64 * 2.5, m as f64 / 40.0)).collect())
}

fn fixture_points(records: Vec<offload_core::tradeoff::FixtureRecord>) -> Vec<TradeoffPoint> {
    let setup = reference_setup();
    let inputs: Vec<StrategyInput> = records
        .into_iter()
        .map(|f| StrategyInput {
            key: f.key,
            strategy: setup.strategy(f.key).unwrap(),
            detections: None,
            fixture: Some(f),
        })
        .collect();
    evaluate_strategies(&inputs, &[], &setup.curves, &setup.options, EvalOptions::default()).unwrap()
}

fn synthetic(pts: &[(f64, f64)]) -> Vec<TradeoffPoint> {
    let template = fixture_points(tradeoff_fixture()).remove(0);
    pts.iter()
        .map(|&(d, m)| TradeoffPoint {
            delay_override_ms: Some(d + 1.0),
            map_value: m,
            ..template.clone()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frontier_matches_quadratic_oracle(pts in arb_points(1000)) {
        prop_assert_eq!(pareto_indices(&pts), brute_force_frontier(&pts));
    }

    #[test]
    fn every_point_is_on_or_below_frontier(pts in arb_points(200)) {
        let front = pareto_indices(&pts);
        for (i, &p) in pts.iter().enumerate() {
            prop_assert!(front.contains(&i) || front.iter().any(|&f| dominates(pts[f], p)));
        }
    }

    #[test]
    fn frontier_invariant_under_affine_delay(pts in arb_points(200), a in 0.01..100.0f64, b in -50.0..50.0f64) {
        let scaled: Vec<(f64, f64)> = pts.iter().map(|&(d, m)| (a * d + b, m)).collect();
        let mut x = pareto_indices(&pts);
        let mut y = pareto_indices(&scaled);
        x.sort_unstable();
        y.sort_unstable();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn selection_lies_on_frontier(pts in arb_points(60), budget in 0.0..160.0f64, min_map in 0.0..0.5f64) {
        let points = synthetic(&pts);
        let front = pareto_frontier(&points);
        let policy = SelectionPolicy { budget_ms: budget, min_map };
        match select_best(&points, &policy) {
            Some(best) => {
                prop_assert!(front.iter().any(|f| f.delay_ms() == best.delay_ms() && f.map_value == best.map_value));
                // brute force: nothing feasible beats it
                for p in &points {
                    if p.delay_ms() <= budget && p.map_value >= min_map {
                        prop_assert!(p.map_value < best.map_value
                            || (p.map_value == best.map_value && p.delay_ms() >= best.delay_ms()));
                    }
                }
            }
            None => prop_assert!(points.iter().all(|p| p.delay_ms() > budget || p.map_value < min_map)),
        }
    }
}

fn key(p: Platform, s: ScenarioLabel) -> StrategyKey {
    StrategyKey::new(p, s)
}

#[test]
fn fixture_frontier() {
    let points = fixture_points(tradeoff_fixture());
    let front: Vec<StrategyKey> = pareto_frontier(&points).iter().map(|p| p.key).collect();
    assert_eq!(
        front,
        vec![
            key(Platform::Local, ScenarioLabel::Raw),
            key(Platform::Cloud, ScenarioLabel::H265L),
            key(Platform::Cloud, ScenarioLabel::H265M),
            key(Platform::Cloud, ScenarioLabel::JpegH),
        ]
    );
}

#[test]
fn fixture_selections() {
    let points = fixture_points(tradeoff_fixture());
    let pick = |budget| {
        select_best(&points, &SelectionPolicy { budget_ms: budget, min_map: 0.10 }).map(|p| p.key)
    };
    assert_eq!(pick(50.0), Some(key(Platform::Cloud, ScenarioLabel::H265M)));
    assert_eq!(pick(100.0), Some(key(Platform::Cloud, ScenarioLabel::JpegH)));
    assert_eq!(pick(20.0), Some(key(Platform::Local, ScenarioLabel::Raw)));
    assert_eq!(pick(15.0), None);
}

#[test]
fn per_class_rendering() {
    let table = per_class_table(&fixture_points(per_class_fixture()));
    assert!(table.lines().any(|l| l == "RAW,cloud,0.81 (+170%),0.86 (+7%),0.89 (+12%)"), "{table}");
    assert!(table.lines().any(|l| l == "JPEG-M,edge,0.41 (+36%),0.78 (-2%),0.83 (+5%)"), "{table}");
    assert!(table.lines().any(|l| l == "RAW,local,0.30 (+0%),0.80 (+0%),0.79 (+0%)"), "{table}");
}

#[test]
fn reports_are_stable_and_ordered() {
    let points = fixture_points(tradeoff_fixture());
    let front = pareto_frontier(&points);
    let best = select_best(&points, &SelectionPolicy::default());
    for fmt in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::PlotData] {
        let a = emit_report(&points, &front, best, fmt).unwrap();
        let b = emit_report(&points, &front, best, fmt).unwrap();
        assert_eq!(a, b);
    }
    let csv = emit_report(&points, &front, best, ReportFormat::Csv).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows.first(), Some(&"local"));
    assert_eq!(rows.last(), Some(&"cloud"));
    assert!(csv.contains("cloud,H265-M,H265,24,"));
    assert!(matches!(emit_report(&[], &[], None, ReportFormat::Csv), Err(Error::EmptyPoints)));
}

#[test]
fn missing_quality_source_is_an_error() {
    let setup = reference_setup();
    let k = key(Platform::Edge, ScenarioLabel::JpegM);
    let input = StrategyInput {
        key: k,
        strategy: setup.strategy(k).unwrap(),
        detections: None,
        fixture: None,
    };
    assert!(matches!(
        evaluate_strategies(&[input], &[], &setup.curves, &setup.options, EvalOptions::default()),
        Err(Error::MissingMapSource(_))
    ));
}
