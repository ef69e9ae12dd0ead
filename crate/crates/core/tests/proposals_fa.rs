use coalsis::model::{backward_transitions_pim, pim_conditional, recursion_coefficient};
use coalsis::proposals::{
    expansion_coefficients, gt_one_step_cost, gt_proposal, sd_one_step_cost, sd_pi_hat, sd_proposal,
};
use coalsis::{Move, MutationModel, ProposalKind, TypedSample};
use proptest::prelude::*;
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

fn random_sample(d: usize, max: u32, rng: &mut ChaCha8Rng) -> TypedSample {
    loop {
        let c: Vec<u32> = (0..d).map(|_| rng.random_range(0..=max / d as u32)).collect();
        if c.iter().sum::<u32>() >= 2 {
            return TypedSample::from_counts(&c).unwrap();
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn proposals_are_distributions_and_costs_match_ratios(seed in any::<u64>(), d in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = MutationModel::from_rows(rng.random_range(0.05..4.0), &random_stochastic(d, &mut rng)).unwrap();
        let n = random_sample(d, 1000, &mut rng);
        let gt = gt_proposal(&n, &m).unwrap();
        let sd = sd_proposal(&n, &m).unwrap();
        for q in [&gt, &sd] {
            prop_assert!((q.total() - 1.0).abs() < 1e-12);
            for (mv, p) in q.moves() {
                prop_assert!(*p >= 0.0);
                prop_assert!(n.backward(*mv).is_some());
            }
        }
        let pi = sd_pi_hat(&n, &m).unwrap();
        prop_assert!(pi.iter().all(|&x| x >= 0.0));
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for (mv, p) in gt.moves() {
            let direct = recursion_coefficient(&n, *mv, &m) / p;
            let closed = gt_one_step_cost(*mv, &n, &m).unwrap();
            prop_assert!(((direct - closed) / closed).abs() < 1e-10);
        }
        for (mv, p) in sd.moves() {
            let direct = recursion_coefficient(&n, *mv, &m) / p;
            let closed = sd_one_step_cost(*mv, &n, &m).unwrap();
            prop_assert!(((direct - closed) / closed).abs() < 1e-10);
        }
    }
}

#[test]
fn gt_cost_is_move_independent() {
    let m = MutationModel::from_rows(0.9, &[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
    let n = TypedSample::from_counts(&[5, 3]).unwrap();
    let a = gt_one_step_cost(Move::Coalesce(0), &n, &m).unwrap();
    for mv in [Move::Coalesce(1), Move::Mutate { parent: 0, child: 1 }, Move::Mutate { parent: 1, child: 0 }] {
        assert_eq!(gt_one_step_cost(mv, &n, &m).unwrap(), a);
    }
}

#[test]
fn pi_hat_exact_under_pim_and_degenerates_at_zero_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let d = rng.random_range(2..=5);
        let q: Vec<f64> = random_stochastic(d, &mut rng).remove(0);
        let m = MutationModel::pim(rng.random_range(0.1..5.0), &q).unwrap();
        let n = random_sample(d, 100, &mut rng);
        let pi = sd_pi_hat(&n, &m).unwrap();
        for (i, x) in pi.iter().enumerate() {
            assert!((x - pim_conditional(i, &n, &m).unwrap()).abs() < 1e-12);
        }
    }
    let m = MutationModel::from_rows(1e-13, &[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
    let n = TypedSample::from_counts(&[3, 7]).unwrap();
    let pi = sd_pi_hat(&n, &m).unwrap();
    assert!((pi[0] - 0.3).abs() < 1e-12 && (pi[1] - 0.7).abs() < 1e-12);
}

#[test]
fn sd_ordering_matches_optimal_under_pim() {
    let m = MutationModel::pim(0.7, &[0.1, 0.6, 0.3]).unwrap();
    let n = TypedSample::from_counts(&[4, 2, 5]).unwrap();
    let a = sd_proposal(&n, &m).unwrap();
    let b = backward_transitions_pim(&n, &m).unwrap();
    let mut ka: Vec<(Move, f64)> = a.moves().to_vec();
    let mut kb: Vec<(Move, f64)> = b.moves().to_vec();
    for (mv, p) in &kb {
        assert!((a.probability(*mv) - p).abs() < 1e-12);
    }
    ka.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
    kb.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
    assert_eq!(ka[0].0, kb[0].0);
}

#[test]
fn pi_hat_first_order_expansion() {
    let theta = 0.8;
    let rows = vec![vec![0.1, 0.6, 0.3], vec![0.5, 0.0, 0.5], vec![0.2, 0.7, 0.1]];
    let m = MutationModel::from_rows(theta, &rows).unwrap();
    let y = [0.2, 0.3, 0.5];
    let mut prev = f64::INFINITY;
    for n in [1_000u32, 10_000, 100_000] {
        let counts: Vec<u32> = y.iter().map(|v| (v * n as f64).round() as u32).collect();
        let mut err = 0.0f64;
        for j in 0..3 {
            let mut c = counts.clone();
            c[j] -= 1;
            let pi = sd_pi_hat(&TypedSample::from_counts(&c).unwrap(), &m).unwrap();
            for i in 0..3 {
                let inflow: f64 = (0..3).map(|k| y[k] * theta * rows[k][i]).sum();
                let first = y[i] * (1.0 - theta) - if i == j { 1.0 } else { 0.0 } + inflow;
                let approx = y[i] + first / n as f64;
                err = err.max(n as f64 * (pi[i] - approx).abs());
            }
        }
        assert!(err < prev, "n={n}: {err}");
        prev = err;
    }
    assert!(prev < 1e-3);
}

/// `|n (c(e_j | y) - 1) - a_j(y)|` along `y = (0.5, 0.5)`.
fn expansion_errors(kind: ProposalKind, m: &MutationModel) -> Vec<f64> {
    let coeff = expansion_coefficients(kind, m).unwrap();
    let y = [0.5, 0.5];
    [100u32, 1_000, 10_000, 100_000]
        .iter()
        .map(|&n| {
            let s = TypedSample::from_counts(&[n / 2, n / 2]).unwrap();
            (0..2)
                .map(|j| {
                    let c = match kind {
                        ProposalKind::Gt => gt_one_step_cost(Move::Coalesce(j), &s, m).unwrap(),
                        _ => sd_one_step_cost(Move::Coalesce(j), &s, m).unwrap(),
                    };
                    (n as f64 * (c - 1.0) - coeff.a(j, &y)).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

#[test]
fn cost_expansions_converge_at_rate() {
    let m = MutationModel::from_rows(0.5, &[vec![0.3, 0.7], vec![0.45, 0.55]]).unwrap();
    for kind in [ProposalKind::Gt, ProposalKind::Sd] {
        let e = expansion_errors(kind, &m);
        assert!(e.windows(2).all(|w| w[1] < w[0]), "{kind}: {e:?}");
        assert!(e[3] < e[0] / 10.0, "{kind}: {e:?}");
    }
}

#[test]
fn sd_mutation_cost_tends_to_one() {
    let m = MutationModel::from_rows(0.5, &[vec![0.3, 0.7], vec![0.45, 0.55]]).unwrap();
    let mut prev = f64::INFINITY;
    for n in [100u32, 10_000, 1_000_000] {
        let s = TypedSample::from_counts(&[n / 2, n / 2]).unwrap();
        let c = sd_one_step_cost(Move::Mutate { parent: 0, child: 1 }, &s, &m).unwrap();
        assert!((c - 1.0).abs() < prev);
        prev = (c - 1.0).abs();
    }
    assert!(prev < 1e-4);
}

#[test]
fn gt_coefficient_is_type_independent_and_sd_telescopes() {
    let m = MutationModel::from_rows(0.8, &[vec![0.1, 0.6, 0.3], vec![0.5, 0.0, 0.5], vec![0.2, 0.7, 0.1]]).unwrap();
    let gt = expansion_coefficients(ProposalKind::Gt, &m).unwrap();
    let sd = expansion_coefficients(ProposalKind::Sd, &m).unwrap();
    let y0 = [0.2, 0.3, 0.5];
    for u in [0.0, 0.3, 0.7, 0.95] {
        let y: Vec<f64> = y0.iter().map(|v| v * (1.0 - u)).collect();
        assert_eq!(gt.a(0, &y), gt.a(2, &y));
        let s: f64 = (0..3).map(|j| y0[j] * sd.a(j, &y)).sum();
        assert!((s - (1.0 - 3.0) / (1.0 - u)).abs() < 1e-12);
        assert_eq!(sd.b(0, 1, &y), 1.0);
    }
}

#[test]
fn one_lineage_is_rejected() {
    let m = MutationModel::pim(1.0, &[0.5, 0.5]).unwrap();
    let n = TypedSample::from_counts(&[1, 0]).unwrap();
    assert!(gt_proposal(&n, &m).is_err());
    assert!(sd_proposal(&n, &m).is_err());
    assert!(expansion_coefficients(ProposalKind::PimOptimal, &m).is_err());
}
