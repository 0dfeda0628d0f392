mod oracles;

use proptest::prelude::*;
use ulasan::metrics::MetricReport;

#[derive(Debug, Clone)]
struct Instance {
    classes: usize,
    truth: Vec<usize>,
    pred: Vec<usize>,
    scores: Vec<Vec<f64>>,
}

fn instance() -> impl Strategy<Value = Instance> {
    (2usize..=5, 1usize..=30).prop_flat_map(|(c, n)| {
        (
            prop::collection::vec(0..c, n),
            prop::collection::vec(0..c, n),
            // coarse grid so ties are common
            prop::collection::vec(prop::collection::vec(0u8..6, c), n),
        )
            .prop_map(move |(truth, pred, raw)| Instance {
                classes: c,
                truth,
                pred,
                scores: raw
                    .into_iter()
                    .map(|r| r.into_iter().map(|v| f64::from(v) / 5.0).collect())
                    .collect(),
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn report_matches_brute_force(inst in instance()) {
        let inst = oracles::MetricsInstance { classes: inst.classes, truth: inst.truth, pred: inst.pred, scores: inst.scores };
        oracles::metrics_case(&inst).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn joint_permutation_leaves_metrics_unchanged(inst in instance(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let labels: Vec<String> = (0..inst.classes).map(|c| c.to_string()).collect();
        let mut order: Vec<usize> = (0..inst.truth.len()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let pick = |v: &[usize]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let scores: Vec<Vec<f64>> = order.iter().map(|&i| inst.scores[i].clone()).collect();
        let a = MetricReport::compute(&inst.truth, &inst.pred, &inst.scores, &labels).unwrap();
        let b = MetricReport::compute(&pick(&inst.truth), &pick(&inst.pred), &scores, &labels).unwrap();
        prop_assert_eq!(a.confusion, b.confusion);
        prop_assert!((a.macro_avg.f1 - b.macro_avg.f1).abs() <= 1e-9 && (a.weighted.f1 - b.weighted.f1).abs() <= 1e-9);
        prop_assert_eq!(a.auc.map(|v| (v * 1e9).round()), b.auc.map(|v| (v * 1e9).round()));
    }
}
