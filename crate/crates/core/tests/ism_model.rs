use std::collections::HashMap;
use std::sync::Arc;

use coalsis::ism::{
    ism_exact_probability, ism_forward_simulate, ism_gt_proposal, ism_huw_proposal, ism_sd_proposal, HuwReading,
    HuwSource, HuwTable, IsmProposal, IsmProposalKind, IsmSample, IsmState,
};
use coalsis::sis::{run_sis, ResamplingPolicy, RunOptions, Schedule};
use proptest::prelude::*;

fn permutations(r: usize) -> Vec<Vec<usize>> {
    if r == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(r - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, r - 1);
            out.push(q);
        }
    }
    out
}

/// Shape key under column relabelling, with the size of the column
/// automorphism group.
fn shape(s: &IsmSample) -> (Vec<(Vec<u8>, u32)>, usize) {
    let (rows, _) = s.dense_rows();
    let r = rows.first().map_or(0, |x| x.len());
    let key_of = |p: &[usize]| {
        let mut k: Vec<(Vec<u8>, u32)> =
            rows.iter().zip(s.counts()).map(|(row, &c)| (p.iter().map(|&w| row[w]).collect(), c)).collect();
        k.sort();
        k
    };
    let ident: Vec<usize> = (0..r).collect();
    let own = key_of(&ident);
    let mut best = own.clone();
    let mut aut = 0;
    for p in permutations(r) {
        let k = key_of(&p);
        if k == own {
            aut += 1;
        }
        best = best.min(k);
    }
    (best, aut)
}

#[test]
fn forward_shapes_match_exact_recursion() {
    let theta = 0.8;
    let draws = 200_000u64;
    let mut hist: HashMap<Vec<(Vec<u8>, u32)>, (u64, IsmSample)> = HashMap::new();
    for seed in 0..draws {
        let s = ism_forward_simulate(4, theta, seed).unwrap();
        if s.r() > 5 {
            continue;
        }
        let (key, _) = shape(&s);
        hist.entry(key).or_insert((0, s)).0 += 1;
    }
    let mut checked = 0;
    for (count, s) in hist.values() {
        let (_, aut) = shape(s);
        let p = ism_exact_probability(s, theta).unwrap() / aut as f64;
        let freq = *count as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((freq - p).abs() < 4.0 * se, "{s}: {freq} vs {p}");
        checked += 1;
    }
    assert!(checked > 10);
}

fn small_sample() -> IsmSample {
    // Seven lineages, three haplotypes, four sites.
    IsmSample::new(
        &[vec![1, 1, 0, 0], vec![1, 0, 0, 0], vec![0, 0, 1, 0], vec![0, 0, 1, 1]],
        &[2, 3, 1, 1],
        &[0.1, 0.4, 0.6, 0.9],
    )
    .unwrap()
}

#[test]
fn sis_estimators_are_unbiased() {
    let theta = 1.3;
    let s = small_sample();
    let exact = ism_exact_probability(&s, theta).unwrap();
    let table = Arc::new(HuwTable::build(7, 1.0, HuwReading::Carriers).unwrap());
    let proposals = [
        IsmProposal::new(IsmProposalKind::Gt, theta).unwrap(),
        IsmProposal::new(IsmProposalKind::Sd, theta).unwrap(),
        IsmProposal::huw(theta, HuwSource::Table(table)).unwrap(),
        IsmProposal::huw(theta, HuwSource::Direct { theta: 2.0, reading: HuwReading::Biallelic }).unwrap(),
    ];
    for (k, p) in proposals.iter().enumerate() {
        let r = run_sis(p, &IsmState::new(s.clone()), &Schedule::fixed(100_000), &ResamplingPolicy::off(), &RunOptions::new(40 + k as u64))
            .unwrap();
        let z = (r.estimate - exact) / r.standard_error;
        assert!(z.abs() < 3.0, "{}: {} vs {exact} (se {})", p.kind(), r.estimate, r.standard_error);
    }
}

#[test]
fn resampled_ism_run_is_unbiased() {
    let theta = 1.3;
    let s = small_sample();
    let exact = ism_exact_probability(&s, theta).unwrap();
    let p = IsmProposal::new(IsmProposalKind::Gt, theta).unwrap();
    let pol = ResamplingPolicy::stopping_time(0.9).unwrap();
    let r = run_sis(&p, &IsmState::new(s), &Schedule::fixed(40_000), &pol, &RunOptions::new(9)).unwrap();
    assert!(r.resample_events > 0);
    assert!(((r.estimate - exact) / r.standard_error).abs() < 3.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn proposals_cover_every_move(seed in any::<u64>(), n in 3u32..40, theta in 0.2f64..6.0) {
        let s = ism_forward_simulate(n, theta, seed).unwrap();
        let table = Arc::new(HuwTable::build(n, theta, HuwReading::Carriers).unwrap());
        let gt = ism_gt_proposal(&s, theta).unwrap();
        for q in [ism_sd_proposal(&s).unwrap(), ism_huw_proposal(&s, &HuwSource::Table(table)).unwrap()] {
            prop_assert_eq!(q.len(), gt.len());
            for ((a, x), (b, _)) in q.iter().zip(&gt) {
                prop_assert_eq!(a, b);
                prop_assert!(*x > 0.0);
            }
        }
    }
}

#[test]
fn huw_table_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.huw");
    for reading in [HuwReading::Carriers, HuwReading::Biallelic] {
        let t = HuwTable::build(80, 2.7, reading).unwrap();
        t.save(&path).unwrap();
        let back = HuwTable::load(&path).unwrap();
        assert_eq!(back.reading(), reading);
        for s in 2..=80 {
            for d in 1..s {
                let (a, b) = (t.ratio(s, d).unwrap(), back.ratio(s, d).unwrap());
                assert_eq!(a.carrier.to_bits(), b.carrier.to_bits());
                assert_eq!(a.other.to_bits(), b.other.to_bits());
            }
        }
    }
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 1);
    std::fs::write(&path, &bytes).unwrap();
    assert!(HuwTable::load(&path).is_err());
    assert!(HuwTable::load(&dir.path().join("missing")).is_err());
}
