use bisync_core::sync::ActionSource;
use bisync_harness::replay::{Partition, ReplayBuffer};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_square_p(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

#[test]
fn balanced_batches_and_uniform_within_partitions() {
    let mut buf = ReplayBuffer::new(1000).unwrap();
    for i in 0..20 {
        let src = if i % 2 == 0 {
            ActionSource::Expert
        } else {
            ActionSource::HumanCorrection
        };
        buf.push(src, i);
    }
    for i in 0..30 {
        buf.push(ActionSource::Policy, 100 + i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut off = [0u64; 20];
    let mut on = [0u64; 30];
    for _ in 0..1000 {
        let batch = buf.sample_symmetric(64, &mut rng).unwrap();
        let n_off = batch
            .iter()
            .filter(|r| r.partition == Partition::Offline)
            .count();
        assert_eq!((n_off, batch.len() - n_off), (32, 32));
        for r in batch {
            match r.partition {
                Partition::Offline => off[r.index] += 1,
                Partition::Online => on[r.index] += 1,
            }
        }
    }
    let (p_off, p_on) = (chi_square_p(&off), chi_square_p(&on));
    assert!(p_off > 0.01, "offline chi-square p = {p_off}");
    assert!(p_on > 0.01, "online chi-square p = {p_on}");
}

#[test]
fn chi_square_helper_flags_a_skewed_sample() {
    let mut counts = [100u64; 10];
    counts[0] = 300;
    assert!(chi_square_p(&counts) < 1e-6);
    assert!(chi_square_p(&[100; 10]) > 0.99);
}

proptest! {
    #[test]
    fn composition_follows_the_symmetric_rule(
        n_off in 0usize..20,
        n_on in 0usize..20,
        half in 1usize..40,
        seed in any::<u64>(),
    ) {
        let mut buf = ReplayBuffer::new(8).unwrap();
        for i in 0..n_off { buf.push(ActionSource::Expert, i); }
        for i in 0..n_on { buf.push(ActionSource::Policy, i); }
        prop_assert_eq!(buf.len(Partition::Offline), n_off.min(8));
        prop_assert_eq!(buf.len(Partition::Online), n_on.min(8));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = 2 * half;
        match (n_off, n_on) {
            (0, 0) => prop_assert!(buf.sample_symmetric(batch, &mut rng).is_err()),
            _ => {
                let b = buf.sample_symmetric(batch, &mut rng).unwrap();
                let k = b.iter().filter(|r| r.partition == Partition::Offline).count();
                let want = match (n_off, n_on) {
                    (_, 0) => batch,
                    (0, _) => 0,
                    _ => half,
                };
                prop_assert_eq!(k, want);
                for r in &b {
                    prop_assert!(r.index < buf.len(r.partition));
                }
            }
        }
        prop_assert!(buf.sample_symmetric(batch + 1, &mut rng).is_err());
    }
}
