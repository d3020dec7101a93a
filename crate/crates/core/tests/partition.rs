use proptest::prelude::*;

use progfed_core::data::{gen_blobs, partition, Dataset, PartitionKind};

fn label_entropy(ds: &Dataset, shard: &[usize], classes: usize) -> f64 {
    let labels = ds.labels();
    let mut counts = vec![0usize; classes];
    for &i in shard {
        counts[labels[i]] += 1;
    }
    let n = shard.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn mean_entropy(ds: &Dataset, shards: &[Vec<usize>], classes: usize) -> f64 {
    shards.iter().map(|s| label_entropy(ds, s, classes)).sum::<f64>() / shards.len() as f64
}

#[test]
fn label_skew_decreases_with_beta() {
    let classes = 10;
    let ds = gen_blobs(classes, 2, 200, 1.0, 3).unwrap();
    let betas = [0.01, 0.1, 0.5, 1.0, 10.0, 1000.0];
    let mut prev = -1.0;
    for beta in betas {
        let mean = (0..5u64)
            .map(|seed| {
                mean_entropy(
                    &ds,
                    &partition(&ds, PartitionKind::Dirichlet { beta }, 20, seed).unwrap(),
                    classes,
                )
            })
            .sum::<f64>()
            / 5.0;
        assert!(mean > prev, "entropy {mean} at beta {beta} not above {prev}");
        prev = mean;
    }
    // Near-uniform label mix at large beta.
    assert!(prev > 0.95 * (classes as f64).ln());
}

#[test]
fn iid_shards_are_balanced() {
    let ds = gen_blobs(3, 2, 101, 1.0, 1).unwrap();
    let shards = partition(&ds, PartitionKind::Iid, 7, 5).unwrap();
    let sizes: Vec<usize> = shards.iter().map(Vec::len).collect();
    assert_eq!(sizes.iter().sum::<usize>(), 303);
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
}

#[test]
fn rejects_impossible_requests() {
    let ds = gen_blobs(2, 2, 3, 1.0, 1).unwrap();
    assert!(partition(&ds, PartitionKind::Iid, 0, 1).is_err());
    assert!(partition(&ds, PartitionKind::Iid, 7, 1).is_err());
    assert!(partition(&ds, PartitionKind::Dirichlet { beta: 0.0 }, 2, 1).is_err());
    assert!(partition(&ds, PartitionKind::Dirichlet { beta: f64::NAN }, 2, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shards_are_a_partition(
        classes in 2usize..6,
        per_class in 1usize..40,
        clients in 1usize..12,
        beta in prop_oneof![Just(None), (0.01f64..100.0).prop_map(Some)],
        seed in 0u64..1000,
    ) {
        let ds = gen_blobs(classes, 2, per_class, 1.0, seed).unwrap();
        prop_assume!(clients <= ds.len());
        let kind = beta.map_or(PartitionKind::Iid, |beta| PartitionKind::Dirichlet { beta });
        let shards = partition(&ds, kind, clients, seed).unwrap();
        prop_assert_eq!(shards.len(), clients);
        let mut all: Vec<usize> = shards.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        for s in &shards {
            prop_assert!(!s.is_empty());
            prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
        }
        prop_assert_eq!(&shards, &partition(&ds, kind, clients, seed).unwrap());
    }
}
