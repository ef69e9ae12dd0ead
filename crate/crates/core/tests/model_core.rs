use coalsis::model::{
    backward_transitions_pim, compositions, exact_sampling_probability, forward_simulate, forward_transitions,
    pim_conditional, pim_log_probability, ExactTable, EXACT_CAP,
};
use coalsis::{MutationModel, TypedSample};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_stochastic(d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..d)
        .map(|_| {
            let row: Vec<f64> = (0..d).map(|_| rng.random::<f64>() + 0.05).collect();
            let s: f64 = row.iter().sum();
            row.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

fn random_q(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let q: Vec<f64> = (0..d).map(|_| rng.random::<f64>() + 0.05).collect();
    let s: f64 = q.iter().sum();
    q.into_iter().map(|x| x / s).collect()
}

proptest! {
    #[test]
    fn forward_kernel_is_a_distribution(seed in any::<u64>(), d in 1usize..=5, counts in prop::collection::vec(0u32..12, 5)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = rng.random_range(0.05..5.0);
        let m = MutationModel::from_rows(theta, &random_stochastic(d, &mut rng)).unwrap();
        let mut c = counts[..d].to_vec();
        if c.iter().sum::<u32>() == 0 {
            c[0] = 1;
        }
        let n = TypedSample::from_counts(&c).unwrap();
        let t = forward_transitions(&n, &m).unwrap();
        prop_assert!(t.moves().iter().all(|(_, p)| *p >= 0.0));
        prop_assert!((t.total() - 1.0).abs() < 1e-12);
        let size = n.size() as f64;
        prop_assert!((t.coalescence_mass() - (size - 1.0) / (size - 1.0 + theta)).abs() < 1e-12);
        for (mv, _) in t.moves() {
            prop_assert!(n.forward(*mv).is_some());
        }
    }
}

#[test]
fn backward_pim_sums_to_one_for_all_small_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let q = random_q(3, &mut rng);
        let m = MutationModel::pim(rng.random_range(0.1..3.0), &q).unwrap();
        for s in 2..=6 {
            for c in compositions(s, 3) {
                let n = TypedSample::from_counts(&c).unwrap();
                let t = backward_transitions_pim(&n, &m).unwrap();
                assert!((t.total() - 1.0).abs() < 1e-12, "{c:?}");
                for (mv, p) in t.moves() {
                    assert!(*p >= 0.0);
                    assert!(n.backward(*mv).is_some(), "{mv:?} leaves the state space from {c:?}");
                }
                if c.iter().all(|&x| x <= 1) {
                    assert_eq!(t.coalescence_mass(), 0.0);
                }
            }
        }
    }
}

#[test]
fn pim_conditional_limits() {
    let m = MutationModel::pim(1e-12, &[0.3, 0.7]).unwrap();
    let n = TypedSample::from_counts(&[2, 3]).unwrap();
    assert!((pim_conditional(0, &n, &m).unwrap() - 0.4).abs() < 1e-11);
    let m = MutationModel::pim(2.0, &[0.3, 0.2, 0.5]).unwrap();
    let n = TypedSample::from_counts(&[2, 0, 1]).unwrap();
    let total: f64 = (0..3).map(|i| pim_conditional(i, &n, &m).unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-15);
}

/// Probability of a particular ordered sequence of types, built one
/// individual at a time from the conditional laws.
fn sequential_product(order: &[usize], m: &MutationModel) -> f64 {
    let d = m.dim();
    let mut counts = vec![0u32; d];
    let mut out = 1.0;
    for &i in order {
        let size: u32 = counts.iter().sum();
        let q = m.pim_q().unwrap();
        out *= (counts[i] as f64 + m.theta() * q[i]) / (size as f64 + m.theta());
        counts[i] += 1;
    }
    out
}

fn multinomial(c: &[u32]) -> f64 {
    let mut out = 1.0;
    let mut seen = 0u32;
    for &k in c {
        for t in 1..=k {
            seen += 1;
            out *= seen as f64 / t as f64;
        }
    }
    out
}

#[test]
fn exact_recursion_matches_pim_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for d in 1..=3 {
        for _ in 0..3 {
            let q = random_q(d, &mut rng);
            let m = MutationModel::pim(rng.random_range(0.1..3.0), &q).unwrap();
            let table = ExactTable::build(8, &m, EXACT_CAP).unwrap();
            for s in 1..=8 {
                for c in compositions(s, d) {
                    let n = TypedSample::from_counts(&c).unwrap();
                    let exact = table.get(&n).unwrap();
                    let mut order: Vec<usize> = c.iter().enumerate().flat_map(|(i, &k)| std::iter::repeat_n(i, k as usize)).collect();
                    let a = multinomial(&c) * sequential_product(&order, &m);
                    order.shuffle(&mut rng);
                    let b = multinomial(&c) * sequential_product(&order, &m);
                    assert!(((exact - a) / a).abs() < 1e-10, "{c:?}: {exact} vs {a}");
                    assert!(((a - b) / a).abs() < 1e-12, "order dependence at {c:?}");
                    let closed = pim_log_probability(&n, &m).unwrap().exp();
                    assert!(((closed - a) / a).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn sampling_consistency_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for d in 2..=3 {
        let m = MutationModel::from_rows(rng.random_range(0.2..2.0), &random_stochastic(d, &mut rng)).unwrap();
        let table = ExactTable::build(7, &m, EXACT_CAP).unwrap();
        for s in 1..=6 {
            for c in compositions(s, d) {
                let n = TypedSample::from_counts(&c).unwrap();
                let mut lhs = 0.0;
                for i in 0..d {
                    let mut up = c.clone();
                    up[i] += 1;
                    let p = table.get(&TypedSample::from_counts(&up).unwrap()).unwrap();
                    lhs += p * (c[i] + 1) as f64 / (s + 1) as f64;
                }
                let p = table.get(&n).unwrap();
                assert!(((lhs - p) / p).abs() < 1e-10, "{c:?}: {lhs} vs {p}");
            }
        }
    }
}

#[test]
fn singleton_probability_is_stationary() {
    let m = MutationModel::from_rows(0.7, &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let n = TypedSample::from_counts(&[0, 1]).unwrap();
    assert!((exact_sampling_probability(&n, &m).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn forward_simulation_matches_exact_law() {
    let m = MutationModel::pim(0.8, &[0.35, 0.65]).unwrap();
    let draws = 100_000u32;
    let mut hist = [0u32; 4];
    for seed in 0..draws {
        let n = forward_simulate(3, &m, seed as u64).unwrap();
        hist[n.count(0) as usize] += 1;
    }
    for (k, &h) in hist.iter().enumerate() {
        let n = TypedSample::from_counts(&[k as u32, 3 - k as u32]).unwrap();
        let p = exact_sampling_probability(&n, &m).unwrap();
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        let freq = h as f64 / draws as f64;
        assert!((freq - p).abs() < 3.0 * se, "state {k}: {freq} vs {p}");
    }
}

#[test]
fn forward_simulation_matches_exact_law_non_pim() {
    let m = MutationModel::from_rows(1.2, &[vec![0.1, 0.9], vec![0.6, 0.4]]).unwrap();
    let draws = 100_000u32;
    let mut hist = [0u32; 5];
    for seed in 0..draws {
        let n = forward_simulate(4, &m, 1_000_000 + seed as u64).unwrap();
        hist[n.count(0) as usize] += 1;
    }
    for (k, &h) in hist.iter().enumerate() {
        let n = TypedSample::from_counts(&[k as u32, 4 - k as u32]).unwrap();
        let p = exact_sampling_probability(&n, &m).unwrap();
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        let freq = h as f64 / draws as f64;
        assert!((freq - p).abs() < 3.5 * se, "state {k}: {freq} vs {p}");
    }
}
