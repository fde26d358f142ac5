use bisync_core::episode::{EpisodeBuilder, EpisodeRecord, Observation, Outcome, Scenario};
use bisync_core::sync::{ActionSource, ControlMode};
use bisync_core::JointVector;
use bisync_harness::policy::{train_lookup_bc, BcConfig, Policy};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn obs(q: &[f64], goal: [f64; 2]) -> Observation {
    Observation::new(&JointVector::from_q(q.to_vec()).unwrap(), goal.to_vec())
}

fn random_episode(id: u64, len: usize, rng: &mut ChaCha8Rng) -> EpisodeRecord {
    let mut b = EpisodeBuilder::new(id, "reach", 2, 10.0, Scenario::InDistribution);
    for _ in 0..len {
        let q = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let g = [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)];
        let a =
            JointVector::from_q(vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).unwrap();
        b.push(
            obs(&q, g),
            a,
            ActionSource::Expert,
            ControlMode::Autonomous,
            0,
        )
        .unwrap();
    }
    b.finalize(Outcome::Failure).unwrap()
}

/// Linear scan written out directly: weighted squared distance, first minimum wins.
fn brute_force(eps: &[EpisodeRecord], jw: f64, gw: f64, query: &Observation) -> JointVector {
    let mut sorted: Vec<&EpisodeRecord> = eps.iter().collect();
    sorted.sort_by_key(|e| e.id);
    let mut best: Option<(f64, &JointVector)> = None;
    for e in sorted {
        for s in &e.steps {
            let mut d = 0.0;
            for i in 0..2 {
                d += (jw * (s.obs.q[i] - query.q[i])).powi(2);
                d += (gw * (s.obs.extras[i] - query.extras[i])).powi(2);
            }
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, &s.action));
            }
        }
    }
    best.unwrap().1.clone()
}

#[test]
fn matches_linear_scan_on_1000_queries() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let eps: Vec<EpisodeRecord> = (0..10)
        .map(|i| random_episode(9 - i, 30, &mut rng))
        .collect();
    let cfg = BcConfig {
        joint_weight: 1.0,
        extra_weight: 20.0,
        sources: vec![ActionSource::Expert],
    };
    let mut bc = train_lookup_bc(&eps, &cfg).unwrap();
    for _ in 0..1000 {
        let q = obs(
            &[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)],
            [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)],
        );
        assert_eq!(bc.act(&q).unwrap(), brute_force(&eps, 1.0, 20.0, &q));
    }
}

#[test]
fn stored_observation_returns_its_action() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let eps: Vec<EpisodeRecord> = (0..3).map(|i| random_episode(i, 20, &mut rng)).collect();
    let mut bc = train_lookup_bc(
        &eps,
        &BcConfig {
            joint_weight: 1.0,
            extra_weight: 20.0,
            sources: vec![ActionSource::Expert],
        },
    )
    .unwrap();
    for e in &eps {
        for s in &e.steps {
            assert_eq!(bc.act(&s.obs).unwrap(), s.action);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lookup_is_a_pure_function_of_the_dataset(seed in any::<u64>(), qx in -3.0f64..3.0, qy in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps: Vec<EpisodeRecord> = (0..4).map(|i| random_episode(i, 8, &mut rng)).collect();
        let cfg = BcConfig { joint_weight: 1.0, extra_weight: 20.0, sources: vec![ActionSource::Expert] };
        let mut a = train_lookup_bc(&eps, &cfg).unwrap();
        let mut shuffled = eps.clone();
        shuffled.reverse();
        let mut b = train_lookup_bc(&shuffled, &cfg).unwrap();
        let q = obs(&[qx, qy], [0.6, 0.0]);
        prop_assert_eq!(a.act(&q).unwrap(), b.act(&q).unwrap());
        prop_assert_eq!(a.act(&q).unwrap(), brute_force(&eps, 1.0, 20.0, &q));
    }
}
