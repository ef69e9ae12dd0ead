//! Backward proposals for infinite-sites samples.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::huw::{huw_ratio_counted, huw_u, HuwRatio, HuwReading, HuwTable};
use super::sample::IsmSample;
use crate::error::{Error, Result};
use crate::sis::{Proposal, Step, StepKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IsmMove {
    /// Merge two lineages of a row.
    Coalesce(usize),
    /// Drop a singleton column from a row of multiplicity one.
    Remove { row: usize, column: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IsmProposalKind {
    Gt,
    Sd,
    Huw,
}

impl fmt::Display for IsmProposalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IsmProposalKind::Gt => "gt",
            IsmProposalKind::Sd => "sd",
            IsmProposalKind::Huw => "huw",
        })
    }
}

impl FromStr for IsmProposalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gt" => Ok(IsmProposalKind::Gt),
            "sd" => Ok(IsmProposalKind::Sd),
            "huw" => Ok(IsmProposalKind::Huw),
            _ => Err(Error::Config(format!("unknown infinite-sites proposal '{s}'"))),
        }
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("theta must be positive, got {theta}")))
    }
}

/// Recursion coefficient of `mv`: the forward probability of reaching `s`
/// from the predecessor.
pub fn ism_coefficient(s: &IsmSample, mv: IsmMove, theta: f64) -> f64 {
    let n = s.size() as f64;
    match mv {
        IsmMove::Coalesce(j) => (s.count(j) as f64 - 1.0) / (n - 1.0 + theta),
        IsmMove::Remove { row, column } => {
            let m = s.twin_without(row, column).map_or(1.0, |k| s.count(k) as f64 + 1.0);
            theta * m / (n * (n - 1.0 + theta))
        }
    }
}

/// All backward moves with positive coefficient.
pub fn ism_moves(s: &IsmSample) -> Vec<IsmMove> {
    let mut out = Vec::new();
    for j in 0..s.h() {
        if s.count(j) >= 2 {
            out.push(IsmMove::Coalesce(j));
        } else {
            out.extend(s.singletons(j).map(|w| IsmMove::Remove { row: j, column: w }));
        }
    }
    out
}

fn normalize(mut v: Vec<(IsmMove, f64)>) -> Result<Vec<(IsmMove, f64)>> {
    let total: f64 = v.iter().map(|x| x.1).sum();
    if !(total > 0.0) {
        return Err(Error::Domain("no backward move available".into()));
    }
    for x in &mut v {
        x.1 /= total;
    }
    Ok(v)
}

fn need_two(s: &IsmSample) -> Result<()> {
    if s.size() < 2 {
        return Err(Error::Domain("proposals need at least two lineages".into()));
    }
    Ok(())
}

/// Griffiths–Tavaré proposal: proportional to the recursion coefficients.
pub fn ism_gt_proposal(s: &IsmSample, theta: f64) -> Result<Vec<(IsmMove, f64)>> {
    check_theta(theta)?;
    need_two(s)?;
    normalize(ism_moves(s).into_iter().map(|mv| (mv, ism_coefficient(s, mv, theta))).collect())
}

fn sd_mass(s: &IsmSample, mv: IsmMove) -> f64 {
    match mv {
        IsmMove::Coalesce(j) => s.count(j) as f64,
        IsmMove::Remove { .. } => 1.0,
    }
}

/// Stephens–Donnelly proposal: a lineage chosen uniformly among those that
/// can move, coalescing if it shares its haplotype, else losing a singleton.
pub fn ism_sd_proposal(s: &IsmSample) -> Result<Vec<(IsmMove, f64)>> {
    need_two(s)?;
    normalize(ism_moves(s).into_iter().map(|mv| (mv, sd_mass(s, mv))).collect())
}

/// Ratio source for the HUW weights.
#[derive(Debug, Clone)]
pub enum HuwSource {
    /// Look ratios up in a table built at the driving mutation rate.
    Table(Arc<HuwTable>),
    /// Evaluate every ratio by summation at the given driving rate.
    Direct { theta: f64, reading: HuwReading },
}

impl HuwSource {
    fn ratio(&self, size: u32, d: u32, ops: &mut u64) -> HuwRatio {
        match self {
            HuwSource::Table(t) => {
                *ops += 1;
                t.ratio_unchecked(size, d)
            }
            HuwSource::Direct { theta, reading } => {
                let (a, terms) = huw_ratio_counted(size, d, *theta, *reading);
                *ops += terms + 1;
                a
            }
        }
    }

    fn check_size(&self, size: u32) -> Result<()> {
        match self {
            HuwSource::Table(t) if size > t.s_max() => Err(Error::TableMiss { size, s_max: t.s_max() }),
            _ => Ok(()),
        }
    }
}

/// Row sums `sum_w u(j, w)` over live columns, from scratch.
pub fn huw_row_sums(s: &IsmSample, src: &HuwSource) -> Result<Vec<f64>> {
    src.check_size(s.size())?;
    Ok(counted_row_sums(s, src, &mut 0))
}

fn counted_row_sums(s: &IsmSample, src: &HuwSource, ops: &mut u64) -> Vec<f64> {
    let size = s.size();
    let mut out = vec![0.0; s.h()];
    match src {
        HuwSource::Table(_) => {
            for &w in s.live_columns() {
                let d = s.carriers(w);
                let a = src.ratio(size, d, ops);
                for (j, o) in out.iter_mut().enumerate() {
                    *ops += 1;
                    *o += huw_u(s.count(j), s.has(j, w), size, d, a);
                }
            }
        }
        HuwSource::Direct { .. } => {
            // Every weight is evaluated independently, ratio included.
            for (j, o) in out.iter_mut().enumerate() {
                for &w in s.live_columns() {
                    let d = s.carriers(w);
                    let a = src.ratio(size, d, ops);
                    *o += huw_u(s.count(j), s.has(j, w), size, d, a);
                }
            }
        }
    }
    out
}

/// True when the HUW weights cannot be used and SD masses stand in.
fn huw_falls_back(s: &IsmSample, sums: &[f64], supported: impl Fn(usize) -> bool) -> bool {
    s.size() == 2 || s.r() == 0 || (0..s.h()).any(|j| supported(j) && !(sums[j] > 0.0))
}

fn supported(s: &IsmSample, j: usize) -> bool {
    s.count(j) >= 2 || s.singletons(j).next().is_some()
}

/// Expands row masses into move probabilities.
fn huw_moves(s: &IsmSample, sums: &[f64]) -> Result<Vec<(IsmMove, f64)>> {
    let mut out = Vec::new();
    for (j, &m) in sums.iter().enumerate() {
        if s.count(j) >= 2 {
            out.push((IsmMove::Coalesce(j), m));
        } else {
            let cols: Vec<usize> = s.singletons(j).collect();
            let k = cols.len() as f64;
            out.extend(cols.into_iter().map(|w| (IsmMove::Remove { row: j, column: w }, m / k)));
        }
    }
    normalize(out)
}

/// HUW proposal computed from scratch, with the SD fallback.
pub fn ism_huw_proposal(s: &IsmSample, src: &HuwSource) -> Result<Vec<(IsmMove, f64)>> {
    need_two(s)?;
    src.check_size(s.size())?;
    let sums = counted_row_sums(s, src, &mut 0);
    if huw_falls_back(s, &sums, |j| supported(s, j)) {
        return ism_sd_proposal(s);
    }
    huw_moves(s, &sums)
}

/// Backward state carried by a replicate.
#[derive(Debug, Clone)]
pub struct IsmState {
    pub sample: IsmSample,
    /// Cached HUW row sums; empty when stale.
    sums: Vec<f64>,
    /// Singleton columns per row.
    singles: Vec<u32>,
    /// Proposal-evaluation operations so far.
    pub ops: u64,
}

impl IsmState {
    pub fn new(sample: IsmSample) -> Self {
        Self { sample, sums: Vec::new(), singles: Vec::new(), ops: 0 }
    }

    /// Cached row sums, if current.
    pub fn cached_sums(&self) -> Option<&[f64]> {
        (!self.sums.is_empty()).then_some(&self.sums[..])
    }
}

#[derive(Debug, Clone)]
pub struct IsmProposal {
    kind: IsmProposalKind,
    theta: f64,
    huw: Option<HuwSource>,
}

impl IsmProposal {
    /// GT or SD proposal for target rate `theta`.
    pub fn new(kind: IsmProposalKind, theta: f64) -> Result<Self> {
        check_theta(theta)?;
        if kind == IsmProposalKind::Huw {
            return Err(Error::Config("the HUW proposal needs a ratio source".into()));
        }
        Ok(Self { kind, theta, huw: None })
    }

    /// HUW proposal for target rate `theta`.
    pub fn huw(theta: f64, source: HuwSource) -> Result<Self> {
        check_theta(theta)?;
        if let HuwSource::Direct { theta: t, .. } = source {
            check_theta(t)?;
        }
        Ok(Self { kind: IsmProposalKind::Huw, theta, huw: Some(source) })
    }

    pub fn kind(&self) -> IsmProposalKind {
        self.kind
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Refreshes the HUW cache if stale; returns whether SD must stand in.
    fn refresh(&self, st: &mut IsmState, src: &HuwSource) -> Result<bool> {
        let s = &st.sample;
        src.check_size(s.size())?;
        if st.sums.is_empty() {
            st.sums = counted_row_sums(s, src, &mut st.ops);
            st.singles = (0..s.h()).map(|j| s.singletons(j).count() as u32).collect();
            st.ops += s.h() as u64;
        }
        st.ops += s.h() as u64;
        let singles = &st.singles;
        Ok(huw_falls_back(s, &st.sums, |j| s.count(j) >= 2 || singles[j] > 0))
    }

    fn pick(moves: &[(IsmMove, f64)], rng: &mut ChaCha8Rng) -> (IsmMove, f64) {
        let mut u = rng.random::<f64>();
        for &(mv, q) in moves {
            if u < q {
                return (mv, q);
            }
            u -= q;
        }
        *moves.iter().rev().find(|x| x.1 > 0.0).expect("non-empty proposal")
    }

    /// Samples a move, returning it with its proposal probability.
    fn choose(&self, st: &mut IsmState, rng: &mut ChaCha8Rng) -> Result<(IsmMove, f64)> {
        let s = &st.sample;
        match (self.kind, &self.huw) {
            (IsmProposalKind::Gt, _) => {
                let q = ism_gt_proposal(s, self.theta)?;
                st.ops += q.len() as u64;
                Ok(Self::pick(&q, rng))
            }
            (IsmProposalKind::Sd, _) | (IsmProposalKind::Huw, None) => {
                let q = ism_sd_proposal(s)?;
                st.ops += q.len() as u64;
                Ok(Self::pick(&q, rng))
            }
            (IsmProposalKind::Huw, Some(src @ HuwSource::Direct { .. })) => {
                st.sums.clear();
                let fallback = self.refresh(st, src)?;
                let s = &st.sample;
                let q = if fallback { ism_sd_proposal(s)? } else { huw_moves(s, &st.sums)? };
                st.sums.clear();
                Ok(Self::pick(&q, rng))
            }
            (IsmProposalKind::Huw, Some(src)) => {
                if self.refresh(st, src)? {
                    let q = ism_sd_proposal(&st.sample)?;
                    return Ok(Self::pick(&q, rng));
                }
                let s = &st.sample;
                let total: f64 = (0..s.h())
                    .filter(|&j| s.count(j) >= 2 || st.singles[j] > 0)
                    .map(|j| st.sums[j])
                    .sum();
                let mut u = rng.random::<f64>() * total;
                let mut row = None;
                for j in 0..s.h() {
                    if s.count(j) >= 2 || st.singles[j] > 0 {
                        row = Some(j);
                        if u < st.sums[j] {
                            break;
                        }
                        u -= st.sums[j];
                    }
                }
                let j = row.ok_or_else(|| Error::DeadEnd { state: s.to_string() })?;
                let q = st.sums[j] / total;
                if s.count(j) >= 2 {
                    return Ok((IsmMove::Coalesce(j), q));
                }
                let k = st.singles[j];
                let pick = rng.random_range(0..k) as usize;
                let w = s.singletons(j).nth(pick).expect("singleton count is current");
                st.ops += 1;
                Ok((IsmMove::Remove { row: j, column: w }, q / k as f64))
            }
        }
    }

    /// Applies `mv`, keeping the HUW cache current.
    fn apply(&self, st: &mut IsmState, mv: IsmMove) -> Result<()> {
        match mv {
            IsmMove::Coalesce(j) => {
                st.sample.coalesce(j)?;
                st.sums.clear();
            }
            IsmMove::Remove { row, column } => {
                let cached = !st.sums.is_empty();
                if cached {
                    let s = &st.sample;
                    let (size, d) = (s.size(), s.carriers(column));
                    let a = self.huw.as_ref().expect("cache implies HUW").ratio(size, d, &mut st.ops);
                    for k in 0..s.h() {
                        st.sums[k] -= huw_u(s.count(k), s.has(k, column), size, d, a);
                    }
                    st.ops += s.h() as u64;
                }
                let out = st.sample.remove_mutation(row, column)?;
                if cached {
                    st.singles[row] -= 1;
                    if let Some(k) = out.merged_into {
                        // `k` is already re-indexed; locate its pre-merge slot.
                        let before = if k == row { out.moved_from.expect("merge target moved") } else { k };
                        st.sums[before] += st.sums[row];
                        st.singles[before] = 0;
                        st.sums.swap_remove(row);
                        st.singles.swap_remove(row);
                        st.ops += 1;
                    }
                }
            }
        }
        Ok(())
    }
}

impl Proposal for IsmProposal {
    type State = IsmState;

    fn lineages(&self, st: &IsmState) -> u32 {
        st.sample.size()
    }

    fn step(&self, st: &mut IsmState, rng: &mut ChaCha8Rng) -> Result<Step> {
        let (mv, q) = self.choose(st, rng)?;
        let c = ism_coefficient(&st.sample, mv, self.theta);
        if !(q > 0.0) {
            return Err(Error::SupportViolation { state: st.sample.to_string() });
        }
        self.apply(st, mv)?;
        Ok(Step {
            log_cost: c.ln() - q.ln(),
            kind: match mv {
                IsmMove::Coalesce(_) => StepKind::Coalescence,
                IsmMove::Remove { .. } => StepKind::Mutation,
            },
        })
    }

    fn log_terminal(&self, _st: &IsmState) -> f64 {
        0.0
    }

    fn nominal_theta(&self) -> f64 {
        self.theta
    }
}

/// Work done by one backward replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeCost {
    pub ops: u64,
    pub steps: u64,
    pub log_weight: f64,
}

/// Runs `trees` independent replicates to one lineage, recording the
/// proposal-evaluation work of each.
pub fn ism_tree_costs(p: &IsmProposal, init: &IsmSample, trees: u64, seed: u64) -> Result<Vec<TreeCost>> {
    let mut out = Vec::with_capacity(trees as usize);
    for t in 0..trees {
        let mut rng = crate::sis::rng::stream(seed, crate::sis::rng::lane(0, 0), t);
        let mut st = IsmState::new(init.clone());
        let (mut steps, mut lw) = (0, 0.0);
        while st.sample.size() > 1 {
            lw += p.step(&mut st, &mut rng)?.log_cost;
            steps += 1;
        }
        out.push(TreeCost { ops: st.ops, steps, log_weight: lw });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ism::sample::ism_forward_simulate;
    use rand_chacha::rand_core::SeedableRng;

    fn sum_to_one(q: &[(IsmMove, f64)]) {
        let t: f64 = q.iter().map(|x| x.1).sum();
        assert!((t - 1.0).abs() < 1e-12);
        assert!(q.iter().all(|x| x.1 > 0.0));
    }

    #[test]
    fn proposals_are_distributions() {
        let table = Arc::new(HuwTable::build(40, 2.0, HuwReading::Carriers).unwrap());
        for seed in 0..30 {
            let s = ism_forward_simulate(40, 2.0, seed).unwrap();
            sum_to_one(&ism_gt_proposal(&s, 2.0).unwrap());
            sum_to_one(&ism_sd_proposal(&s).unwrap());
            let a = ism_huw_proposal(&s, &HuwSource::Table(table.clone())).unwrap();
            let b = ism_huw_proposal(&s, &HuwSource::Direct { theta: 2.0, reading: HuwReading::Carriers }).unwrap();
            sum_to_one(&a);
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.0, y.0);
                assert!((x.1 - y.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cache_matches_fresh_sums() {
        let table = Arc::new(HuwTable::build(60, 3.0, HuwReading::Carriers).unwrap());
        let src = HuwSource::Table(table);
        let p = IsmProposal::huw(3.0, src.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..20 {
            let mut st = IsmState::new(ism_forward_simulate(60, 3.0, seed).unwrap());
            while st.sample.size() > 1 {
                p.step(&mut st, &mut rng).unwrap();
                if let Some(c) = st.cached_sums() {
                    let fresh = huw_row_sums(&st.sample, &src).unwrap();
                    for (x, y) in c.iter().zip(&fresh) {
                        assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0), "{x} vs {y}");
                    }
                    let singles: Vec<u32> = (0..st.sample.h()).map(|j| st.sample.singletons(j).count() as u32).collect();
                    assert_eq!(st.singles, singles);
                }
            }
        }
    }

    #[test]
    fn huw_needs_source_and_table_size() {
        assert!(IsmProposal::new(IsmProposalKind::Huw, 1.0).is_err());
        let table = Arc::new(HuwTable::build(10, 1.0, HuwReading::Carriers).unwrap());
        let s = ism_forward_simulate(20, 1.0, 3).unwrap();
        assert!(matches!(ism_huw_proposal(&s, &HuwSource::Table(table)), Err(Error::TableMiss { .. })));
    }
}
