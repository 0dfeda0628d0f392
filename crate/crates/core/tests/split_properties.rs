mod oracles;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ulasan::corpus::stratified_kfold;

/// Label vectors with 2..=5 classes of at least 5 members each, shuffled.
fn labels() -> impl Strategy<Value = Vec<usize>> {
    (prop::collection::vec(5usize..80, 2..=5), any::<u64>()).prop_map(|(sizes, seed)| {
        let mut v: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat(c).take(n)).collect();
        v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn split_partitions_and_stratifies(labels in labels(), seed in any::<u64>()) {
        oracles::split_case(&labels, seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn kfold_partitions_each_fold(labels in labels(), seed in any::<u64>(), k in 2usize..=5) {
        let folds = stratified_kfold(&labels, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0usize; labels.len()];
        for (train, val) in &folds {
            prop_assert_eq!(train.len() + val.len(), labels.len());
            let t: BTreeSet<usize> = train.iter().copied().collect();
            prop_assert!(val.iter().all(|i| !t.contains(i)));
            for &i in val {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&n| n == 1));
        prop_assert_eq!(folds, stratified_kfold(&labels, k, seed).unwrap());
    }
}
