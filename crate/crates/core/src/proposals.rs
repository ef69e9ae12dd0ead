//! Backward proposals for the finite-alleles model.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    backward_transitions_pim, for_each_recursion_term, recursion_coefficient, Green, Move, MutationModel,
    TransitionDistribution, TypedSample,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProposalKind {
    Gt,
    Sd,
    /// True backward kernel; only available for parent-independent models.
    PimOptimal,
}

impl fmt::Display for ProposalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProposalKind::Gt => "gt",
            ProposalKind::Sd => "sd",
            ProposalKind::PimOptimal => "pim_optimal",
        })
    }
}

impl FromStr for ProposalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gt" => Ok(ProposalKind::Gt),
            "sd" => Ok(ProposalKind::Sd),
            "pim_optimal" | "optimal" => Ok(ProposalKind::PimOptimal),
            _ => Err(Error::Config(format!("unknown proposal `{s}` (expected gt, sd or pim_optimal)"))),
        }
    }
}

fn need_two(n: &TypedSample) -> Result<()> {
    if n.size() < 2 {
        Err(Error::Domain("a backward step needs at least two lineages".into()))
    } else {
        Ok(())
    }
}

pub fn gt_proposal(n: &TypedSample, m: &MutationModel) -> Result<TransitionDistribution> {
    need_two(n)?;
    let mut moves = Vec::new();
    for_each_recursion_term(n, m, |mv, c| moves.push((mv, c)));
    Ok(TransitionDistribution::normalized(moves))
}

/// One-step cost of the GT proposal from `n`. It equals the total recursion
/// mass out of `n` and so does not depend on `mv`, which only has to be a
/// valid backward move.
pub fn gt_one_step_cost(mv: Move, n: &TypedSample, m: &MutationModel) -> Result<f64> {
    need_two(n)?;
    if recursion_coefficient(n, mv, m) <= 0.0 {
        return Err(Error::Domain(format!("{mv:?} is not a backward move from {n}")));
    }
    let mut total = 0.0;
    for_each_recursion_term(n, m, |_, c| total += c);
    Ok(total)
}

/// Approximate conditional type law `π̂[· | n]`, by a linear solve.
pub fn sd_pi_hat(n: &TypedSample, m: &MutationModel) -> Result<Vec<f64>> {
    let p = m
        .matrix()
        .ok_or_else(|| Error::UnsupportedModel("full π̂ vector needs an explicit mutation matrix".into()))?;
    let d = p.nrows();
    if n.dim() != d {
        return Err(Error::Domain("sample and model dimensions differ".into()));
    }
    let size = n.size() as f64;
    let theta = m.theta();
    let lambda = theta / (size + theta);
    // π̂ᵀ (I - λP) = nᵀ / (‖n‖ + θ).
    let a = (DMatrix::<f64>::identity(d, d) - p * lambda).transpose();
    let b = DVector::from_iterator(d, n.to_dense().into_iter().map(|c| c as f64 / (size + theta)));
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("π̂ system".into()))?;
    Ok(x.iter().copied().collect())
}

/// Resolvents `(I - λ_s P)^{-1}` for every lineage count `s` up to a maximum,
/// from which `π̂` at any configuration follows by a weighted sum.
#[derive(Debug, Clone)]
pub struct GreenTable {
    greens: Vec<Green>,
}

impl GreenTable {
    pub fn build(max_size: u32, m: &MutationModel) -> Result<Self> {
        let mut greens = Vec::with_capacity(max_size as usize + 1);
        for s in 0..=max_size {
            greens.push(m.green(s.max(1))?);
        }
        Ok(Self { greens })
    }

    pub fn max_size(&self) -> u32 {
        (self.greens.len() - 1) as u32
    }

    pub fn get(&self, size: u32) -> &Green {
        &self.greens[size as usize]
    }

    /// `π̂[i | n]` by summing resolvent rows.
    pub fn pi_hat(&self, n: &TypedSample, i: usize, theta: f64) -> f64 {
        let g = self.get(n.size());
        let s: f64 = n.entries().iter().map(|&(k, c)| c as f64 * g.get(k, i)).sum();
        s / (n.size() as f64 + theta)
    }
}

/// Calls `f(move, recursion coefficient, unnormalized SD mass)` for every
/// backward move from `n` with positive recursion coefficient.
pub(crate) fn for_each_sd_term(
    n: &TypedSample,
    m: &MutationModel,
    table: &GreenTable,
    scratch: &mut Vec<f64>,
    mut f: impl FnMut(Move, f64, f64),
) {
    let size = n.size();
    let sf = size as f64;
    let theta = m.theta();
    let denom = sf - 1.0 + theta;
    let scale = sf * denom;
    // π̂[i | n - e_j] = (S_i - G(j, i)) / (‖n‖ - 1 + θ) with S = nᵀ G.
    let g = table.get(size - 1);
    match g {
        Green::Dense(gm) => {
            let d = gm.nrows();
            scratch.clear();
            scratch.resize(d, 0.0);
            for &(k, c) in n.entries() {
                let row = gm.row(k);
                for i in 0..d {
                    scratch[i] += c as f64 * row[i];
                }
            }
            for &(j, nj) in n.entries() {
                let njf = nj as f64;
                let pj = (scratch[j] - gm[(j, j)]) / denom;
                if nj >= 2 {
                    f(Move::Coalesce(j), (njf - 1.0) / denom, njf * (njf - 1.0) / scale / pj);
                }
                m.for_each_parent(j, |i, pij| {
                    let pi = (scratch[i] - gm[(j, i)]) / denom;
                    let ni = if i == j { nj } else { n.count(i) + 1 };
                    let c = theta * pij * ni as f64 / scale;
                    f(Move::Mutate { parent: i, child: j }, c, theta * pij * njf / scale * pi / pj);
                });
            }
        }
        Green::Distance(gd) => {
            let sites = m.sites().expect("distance resolvent comes from a site-flip model") as usize;
            let pij = 1.0 / sites as f64;
            let entries = n.entries();
            let mut neighbor = vec![0.0; sites];
            for &(j, nj) in entries {
                let njf = nj as f64;
                // S at j and at each neighbour j ^ (1 << l): a type k at
                // distance h from j sits at h - 1 from the neighbour when k
                // and j differ at site l, and at h + 1 otherwise.
                let mut s_j = 0.0;
                let mut base = 0.0;
                neighbor.iter_mut().for_each(|x| *x = 0.0);
                for &(k, c) in entries {
                    let diff = k ^ j;
                    let h = diff.count_ones() as usize;
                    let cf = c as f64;
                    s_j += cf * gd[h];
                    let up = if h < sites { gd[h + 1] } else { 0.0 };
                    base += cf * up;
                    if h > 0 {
                        let delta = cf * (gd[h - 1] - up);
                        let mut bits = diff;
                        while bits != 0 {
                            let l = bits.trailing_zeros() as usize;
                            neighbor[l] += delta;
                            bits &= bits - 1;
                        }
                    }
                }
                let pj = (s_j - gd[0]) / denom;
                if nj >= 2 {
                    f(Move::Coalesce(j), (njf - 1.0) / denom, njf * (njf - 1.0) / scale / pj);
                }
                for (l, extra) in neighbor.iter().enumerate() {
                    let i = j ^ (1usize << l);
                    let pi = (base + extra - gd[1]) / denom;
                    let c = theta * pij * (n.count(i) + 1) as f64 / scale;
                    f(Move::Mutate { parent: i, child: j }, c, theta * pij * njf / scale * pi / pj);
                }
            }
        }
    }
}

/// SD proposal from `n`, renormalized over its support.
pub fn sd_proposal(n: &TypedSample, m: &MutationModel) -> Result<TransitionDistribution> {
    need_two(n)?;
    let table = GreenTable::build(n.size(), m)?;
    let mut moves = Vec::new();
    for_each_sd_term(n, m, &table, &mut Vec::new(), |mv, _, q| moves.push((mv, q)));
    Ok(TransitionDistribution::normalized(moves))
}

/// Exact one-step SD cost `p(n | n - v) / q_SD(n - v | n)` using the
/// displayed closed forms, with the renormalizing constant folded in.
pub fn sd_one_step_cost(mv: Move, n: &TypedSample, m: &MutationModel) -> Result<f64> {
    need_two(n)?;
    let table = GreenTable::build(n.size(), m)?;
    let mut z = 0.0;
    for_each_sd_term(n, m, &table, &mut Vec::new(), |_, _, q| z += q);
    let theta = m.theta();
    let reduced = |j: usize| {
        let mut r = n.clone();
        r.remove(j);
        r
    };
    let size = n.size() as f64;
    match mv {
        Move::Coalesce(j) => {
            let nj = n.count(j);
            if nj < 2 {
                return Err(Error::Domain(format!("{mv:?} is not a backward move from {n}")));
            }
            let r = reduced(j);
            Ok(table.pi_hat(&r, j, theta) * size / nj as f64 * z)
        }
        Move::Mutate { parent, child } => {
            let nj = n.count(child);
            if nj < 1 || m.p(parent, child) <= 0.0 {
                return Err(Error::Domain(format!("{mv:?} is not a backward move from {n}")));
            }
            let r = reduced(child);
            let ni = n.count(parent) + if parent == child { 0 } else { 1 };
            let ratio = table.pi_hat(&r, child, theta) / table.pi_hat(&r, parent, theta);
            Ok(ratio * ni as f64 / nj as f64 * z)
        }
    }
}

/// Proposal distribution of the given kind at `n`.
pub fn proposal_distribution(kind: ProposalKind, n: &TypedSample, m: &MutationModel) -> Result<TransitionDistribution> {
    match kind {
        ProposalKind::Gt => gt_proposal(n, m),
        ProposalKind::Sd => sd_proposal(n, m),
        ProposalKind::PimOptimal => backward_transitions_pim(n, m),
    }
}

type CoeffA = dyn Fn(usize, &[f64]) -> f64 + Send + Sync;
type CoeffB = dyn Fn(usize, usize, &[f64]) -> f64 + Send + Sync;

/// First-order cost coefficients: `c(e_j | y) = 1 + a_j(y)/n + o(1/n)` for
/// coalescences and `c(e_j - e_i | y) → b_ij(y)` for mutations.
#[derive(Clone)]
pub struct CostCoefficients {
    dim: usize,
    a: Arc<CoeffA>,
    b: Arc<CoeffB>,
}

impl fmt::Debug for CostCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostCoefficients").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl CostCoefficients {
    pub fn new(
        dim: usize,
        a: impl Fn(usize, &[f64]) -> f64 + Send + Sync + 'static,
        b: impl Fn(usize, usize, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            a: Arc::new(a),
            b: Arc::new(b),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a(&self, j: usize, y: &[f64]) -> f64 {
        (self.a)(j, y)
    }

    pub fn b(&self, i: usize, j: usize, y: &[f64]) -> f64 {
        (self.b)(i, j, y)
    }
}

pub fn expansion_coefficients(kind: ProposalKind, m: &MutationModel) -> Result<CostCoefficients> {
    let d = m.dim();
    match kind {
        ProposalKind::Gt => {
            let df = d as f64;
            Ok(CostCoefficients::new(
                d,
                move |_, y| -(df - 1.0) / y.iter().sum::<f64>(),
                |_, _, _| 1.0,
            ))
        }
        ProposalKind::Sd => {
            let p = m
                .matrix()
                .ok_or_else(|| Error::UnsupportedModel("expansion needs an explicit mutation matrix".into()))?
                .clone();
            let theta = m.theta();
            Ok(CostCoefficients::new(
                d,
                move |j, y| {
                    let norm: f64 = y.iter().sum();
                    let inflow: f64 = (0..y.len()).map(|i| y[i] / norm * theta * p[(i, j)]).sum();
                    (1.0 - theta) / norm - (1.0 - inflow) / y[j]
                },
                |_, _, _| 1.0,
            ))
        }
        ProposalKind::PimOptimal => Err(Error::UnsupportedModel(
            "cost expansion is only provided for the GT and SD proposals".into(),
        )),
    }
}
