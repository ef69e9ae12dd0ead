//! Finite-alleles coalescent: typed samples, mutation kernels, forward and
//! backward block-counting kernels, and the exact sampling recursion.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default cap on the sample size accepted by the exact recursion.
pub const EXACT_CAP: u32 = 12;

const ROW_SUM_TOL: f64 = 1e-12;

/// Type-count vector `n`, stored sparsely as sorted `(type, count)` pairs
/// with strictly positive counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TypedSample {
    dim: usize,
    entries: Vec<(usize, u32)>,
    size: u32,
}

impl TypedSample {
    pub fn from_counts(counts: &[u32]) -> Result<Self> {
        let entries = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i, c))
            .collect::<Vec<_>>();
        Self::from_entries(counts.len(), entries)
    }

    /// Builds a sample from `(type, count)` pairs. Repeated types are summed
    /// and zero counts dropped.
    pub fn from_entries(dim: usize, entries: impl IntoIterator<Item = (usize, u32)>) -> Result<Self> {
        let mut v: Vec<(usize, u32)> = Vec::new();
        for (i, c) in entries {
            if i >= dim {
                return Err(Error::IndexOutOfRange { index: i, dim });
            }
            if c > 0 {
                v.push((i, c));
            }
        }
        v.sort_unstable_by_key(|e| e.0);
        let mut merged: Vec<(usize, u32)> = Vec::with_capacity(v.len());
        for (i, c) in v {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => merged.push((i, c)),
            }
        }
        let size: u32 = merged.iter().map(|e| e.1).sum();
        if size == 0 {
            return Err(Error::Domain("sample must contain at least one lineage".into()));
        }
        Ok(Self {
            dim,
            entries: merged,
            size,
        })
    }

    pub fn unit(dim: usize, i: usize) -> Result<Self> {
        Self::from_entries(dim, [(i, 1)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of lineages, `‖n‖₁`.
    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn count(&self, i: usize) -> u32 {
        match self.entries.binary_search_by_key(&i, |e| e.0) {
            Ok(k) => self.entries[k].1,
            Err(_) => 0,
        }
    }

    /// Present types with their counts, in increasing type order.
    pub fn entries(&self) -> &[(usize, u32)] {
        &self.entries
    }

    pub fn to_dense(&self) -> Vec<u32> {
        let mut out = vec![0; self.dim];
        for &(i, c) in &self.entries {
            out[i] = c;
        }
        out
    }

    pub(crate) fn add(&mut self, i: usize) {
        match self.entries.binary_search_by_key(&i, |e| e.0) {
            Ok(k) => self.entries[k].1 += 1,
            Err(k) => self.entries.insert(k, (i, 1)),
        }
        self.size += 1;
    }

    /// Removes one lineage of type `i`. Panics if none is present.
    pub(crate) fn remove(&mut self, i: usize) {
        let k = self
            .entries
            .binary_search_by_key(&i, |e| e.0)
            .expect("removing an absent type");
        if self.entries[k].1 == 1 {
            self.entries.remove(k);
        } else {
            self.entries[k].1 -= 1;
        }
        self.size -= 1;
    }

    /// Applies a move in the backward direction, or returns `None` if the
    /// result would leave the state space.
    pub fn backward(&self, mv: Move) -> Option<Self> {
        let mut out = self.clone();
        match mv {
            Move::Coalesce(j) => {
                if self.count(j) < 1 || self.size < 2 {
                    return None;
                }
                out.remove(j);
            }
            Move::Mutate { parent, child } => {
                if self.count(child) < 1 || parent >= self.dim {
                    return None;
                }
                out.remove(child);
                out.add(parent);
            }
        }
        Some(out)
    }

    /// Applies a move in the forward direction.
    pub fn forward(&self, mv: Move) -> Option<Self> {
        let mut out = self.clone();
        match mv {
            Move::Coalesce(j) => {
                if j >= self.dim {
                    return None;
                }
                out.add(j);
            }
            Move::Mutate { parent, child } => {
                if self.count(parent) < 1 || child >= self.dim {
                    return None;
                }
                out.remove(parent);
                out.add(child);
            }
        }
        Some(out)
    }
}

impl fmt::Display for TypedSample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, (i, c)) in self.entries.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{i}:{c}")?;
        }
        write!(f, "}}")
    }
}

/// A block-counting move.
///
/// `Coalesce(j)` is `n -> n - e_j` backward (a branching of a type-`j`
/// lineage forward). `Mutate { parent, child }` is `n -> n - e_child +
/// e_parent` backward (a `parent` lineage mutating into `child` forward).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Move {
    Coalesce(usize),
    Mutate { parent: usize, child: usize },
}

impl Move {
    pub fn is_coalescence(&self) -> bool {
        matches!(self, Move::Coalesce(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDistribution {
    moves: Vec<(Move, f64)>,
}

impl TransitionDistribution {
    pub(crate) fn from_raw(moves: Vec<(Move, f64)>) -> Self {
        Self { moves }
    }

    pub(crate) fn normalized(mut moves: Vec<(Move, f64)>) -> Self {
        let total: f64 = moves.iter().map(|m| m.1).sum();
        for m in moves.iter_mut() {
            m.1 /= total;
        }
        Self { moves }
    }

    pub fn moves(&self) -> &[(Move, f64)] {
        &self.moves
    }

    pub fn len(&self) -> usize {
        self.moves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.moves.iter().map(|m| m.1).sum()
    }

    pub fn probability(&self, mv: Move) -> f64 {
        self.moves
            .iter()
            .filter(|m| m.0 == mv)
            .map(|m| m.1)
            .sum()
    }

    pub fn coalescence_mass(&self) -> f64 {
        self.moves
            .iter()
            .filter(|m| m.0.is_coalescence())
            .map(|m| m.1)
            .sum()
    }

    pub fn mutation_mass(&self) -> f64 {
        self.moves
            .iter()
            .filter(|m| !m.0.is_coalescence())
            .map(|m| m.1)
            .sum()
    }
}

#[derive(Debug, Clone)]
enum Kernel {
    Dense {
        p: DMatrix<f64>,
        stationary: Vec<f64>,
        pim_q: Option<Vec<f64>>,
        /// `parents[j]` lists `(i, P_ij)` with `P_ij > 0`.
        parents: Vec<Vec<(usize, f64)>>,
    },
    /// Types are bit strings over `sites` biallelic sites; a mutation flips
    /// one uniformly chosen site.
    SiteFlip { sites: u32 },
}

/// Mutation rate `θ` together with the mutation kernel `P`.
#[derive(Debug, Clone)]
pub struct MutationModel {
    theta: f64,
    kernel: Kernel,
}

impl MutationModel {
    /// General model from a row-stochastic matrix. A matrix whose rows are
    /// all equal is recognised as parent-independent.
    pub fn new(theta: f64, p: DMatrix<f64>) -> Result<Self> {
        check_theta(theta)?;
        let d = p.nrows();
        if d == 0 || p.ncols() != d {
            return Err(Error::InvalidModel(format!(
                "mutation matrix must be square and non-empty, got {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                let x = p[(i, j)];
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::InvalidModel(format!("entry ({i}, {j}) = {x} is not a probability")));
                }
                s += x;
            }
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidModel(format!("row {i} sums to {s}, not 1")));
            }
        }
        if !irreducible(&p) {
            return Err(Error::InvalidModel("mutation matrix is not irreducible".into()));
        }
        let stationary = stationary_law(&p)?;
        let pim = (1..d).all(|i| (0..d).all(|j| (p[(i, j)] - p[(0, j)]).abs() <= ROW_SUM_TOL));
        let pim_q = pim.then(|| (0..d).map(|j| p[(0, j)]).collect());
        let parents = (0..d)
            .map(|j| (0..d).filter(|&i| p[(i, j)] > 0.0).map(|i| (i, p[(i, j)])).collect())
            .collect();
        Ok(Self {
            theta,
            kernel: Kernel::Dense {
                p,
                stationary,
                pim_q,
                parents,
            },
        })
    }

    pub fn from_rows(theta: f64, rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidModel("mutation matrix rows have unequal lengths".into()));
        }
        Self::new(theta, DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    /// Parent-independent model: every row of `P` equals `q`.
    pub fn pim(theta: f64, q: &[f64]) -> Result<Self> {
        let d = q.len();
        Self::new(theta, DMatrix::from_fn(d, d, |_, j| q[j]))
    }

    /// Site-flip kernel on `2^sites` types. `theta_per_site` is the rate per
    /// site; the total rate is `sites * theta_per_site`.
    pub fn site_flip(sites: u32, theta_per_site: f64) -> Result<Self> {
        check_theta(theta_per_site)?;
        if sites == 0 || sites > 30 {
            return Err(Error::InvalidModel(format!("site count must be in 1..=30, got {sites}")));
        }
        Ok(Self {
            theta: theta_per_site * sites as f64,
            kernel: Kernel::SiteFlip { sites },
        })
    }

    /// Total mutation rate.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// The rate as it is usually quoted: the total rate for matrix models,
    /// the per-site rate for site-flip models.
    pub fn nominal_theta(&self) -> f64 {
        match self.kernel {
            Kernel::Dense { .. } => self.theta,
            Kernel::SiteFlip { sites } => self.theta / sites as f64,
        }
    }

    /// Same kernel with a different nominal rate.
    pub fn with_nominal_theta(&self, theta: f64) -> Result<Self> {
        check_theta(theta)?;
        let total = match self.kernel {
            Kernel::Dense { .. } => theta,
            Kernel::SiteFlip { sites } => theta * sites as f64,
        };
        Ok(Self {
            theta: total,
            kernel: self.kernel.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        match &self.kernel {
            Kernel::Dense { p, .. } => p.nrows(),
            Kernel::SiteFlip { sites } => 1usize << sites,
        }
    }

    pub fn sites(&self) -> Option<u32> {
        match self.kernel {
            Kernel::SiteFlip { sites } => Some(sites),
            Kernel::Dense { .. } => None,
        }
    }

    pub fn matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.kernel {
            Kernel::Dense { p, .. } => Some(p),
            Kernel::SiteFlip { .. } => None,
        }
    }

    pub fn pim_q(&self) -> Option<&[f64]> {
        match &self.kernel {
            Kernel::Dense { pim_q, .. } => pim_q.as_deref(),
            Kernel::SiteFlip { .. } => None,
        }
    }

    pub fn p(&self, i: usize, j: usize) -> f64 {
        match &self.kernel {
            Kernel::Dense { p, .. } => p[(i, j)],
            Kernel::SiteFlip { sites } => {
                if (i ^ j).count_ones() == 1 {
                    1.0 / *sites as f64
                } else {
                    0.0
                }
            }
        }
    }

    pub fn stationary(&self, i: usize) -> f64 {
        match &self.kernel {
            Kernel::Dense { stationary, .. } => stationary[i],
            Kernel::SiteFlip { sites } => (-(*sites as f64) * std::f64::consts::LN_2).exp(),
        }
    }

    pub fn log_stationary(&self, i: usize) -> f64 {
        match &self.kernel {
            Kernel::Dense { stationary, .. } => stationary[i].ln(),
            Kernel::SiteFlip { sites } => -(*sites as f64) * std::f64::consts::LN_2,
        }
    }

    /// Calls `f(i, P_ij)` for every parent type `i` with `P_ij > 0`.
    pub fn for_each_parent(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        match &self.kernel {
            Kernel::Dense { parents, .. } => {
                for &(i, pij) in &parents[j] {
                    f(i, pij);
                }
            }
            Kernel::SiteFlip { sites } => {
                let w = 1.0 / *sites as f64;
                for l in 0..*sites {
                    f(j ^ (1usize << l), w);
                }
            }
        }
    }

    /// Calls `f(j, P_ij)` for every child type `j` with `P_ij > 0`.
    pub fn for_each_child(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        match &self.kernel {
            Kernel::Dense { p, .. } => {
                for j in 0..p.ncols() {
                    if p[(i, j)] > 0.0 {
                        f(j, p[(i, j)]);
                    }
                }
            }
            Kernel::SiteFlip { sites } => {
                let w = 1.0 / *sites as f64;
                for l in 0..*sites {
                    f(i ^ (1usize << l), w);
                }
            }
        }
    }

    pub fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.kernel {
            Kernel::Dense { stationary, .. } => sample_index(stationary, rng),
            Kernel::SiteFlip { sites } => rng.random_range(0..(1usize << sites)),
        }
    }

    pub fn sample_child<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        match &self.kernel {
            Kernel::Dense { p, .. } => {
                let row: Vec<f64> = p.row(i).iter().copied().collect();
                sample_index(&row, rng)
            }
            Kernel::SiteFlip { sites } => i ^ (1usize << rng.random_range(0..*sites)),
        }
    }

    /// Resolvent `(I - λP)^{-1}` with `λ = θ/(m + θ)`, the ingredient of the
    /// approximate conditional type law given `m` lineages.
    pub fn green(&self, m: u32) -> Result<Green> {
        let lambda = self.theta / (m as f64 + self.theta);
        match &self.kernel {
            Kernel::Dense { p, .. } => {
                let d = p.nrows();
                let a = DMatrix::<f64>::identity(d, d) - p * lambda;
                let inv = a
                    .try_inverse()
                    .ok_or_else(|| Error::Singular("resolvent of the mutation matrix".into()))?;
                Ok(Green::Dense(inv))
            }
            Kernel::SiteFlip { sites } => {
                // Hamming distance from a fixed type performs an Ehrenfest
                // walk; solve g (I - λT) = e_0 on distances 0..=L.
                let l = *sites as usize;
                let lf = l as f64;
                let mut a = DMatrix::<f64>::identity(l + 1, l + 1);
                for h in 0..=l {
                    if h > 0 {
                        a[(h - 1, h)] -= lambda * h as f64 / lf;
                    }
                    if h < l {
                        a[(h + 1, h)] -= lambda * (lf - h as f64) / lf;
                    }
                }
                let mut rhs = DVector::<f64>::zeros(l + 1);
                rhs[0] = 1.0;
                let g = a
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::Singular("Ehrenfest resolvent".into()))?;
                let by_distance = (0..=l).map(|h| g[h] / binomial(l as u64, h as u64)).collect();
                Ok(Green::Distance(by_distance))
            }
        }
    }
}

/// Resolvent of a mutation kernel, see [`MutationModel::green`].
#[derive(Debug, Clone)]
pub enum Green {
    Dense(DMatrix<f64>),
    /// Entry depends only on the Hamming distance between the two types.
    Distance(Vec<f64>),
}

impl Green {
    pub fn get(&self, k: usize, i: usize) -> f64 {
        match self {
            Green::Dense(g) => g[(k, i)],
            Green::Distance(g) => g[(k ^ i).count_ones() as usize],
        }
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta.is_finite() && theta > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("mutation rate must be positive and finite, got {theta}")))
    }
}

pub(crate) fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut out = 1.0f64;
    for t in 0..k {
        out = out * (n - t) as f64 / (t + 1) as f64;
    }
    out.round()
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return i;
            }
            u -= w;
            last = i;
        }
    }
    last
}

fn irreducible(p: &DMatrix<f64>) -> bool {
    let d = p.nrows();
    let mut reach = vec![vec![false; d]; d];
    for i in 0..d {
        reach[i][i] = true;
        for j in 0..d {
            if p[(i, j)] > 0.0 {
                reach[i][j] = true;
            }
        }
    }
    for k in 0..d {
        for i in 0..d {
            if reach[i][k] {
                for j in 0..d {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    reach.iter().all(|row| row.iter().all(|&b| b))
}

fn stationary_law(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let d = p.nrows();
    // (P^T - I) π = 0 with the last equation replaced by Σ π = 1.
    let mut a = p.transpose() - DMatrix::<f64>::identity(d, d);
    let mut b = DVector::<f64>::zeros(d);
    for j in 0..d {
        a[(d - 1, j)] = 1.0;
    }
    b[d - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("stationary law of the mutation matrix".into()))?;
    Ok(pi.iter().map(|&x| x.max(0.0)).collect())
}

/// Forward jump chain of the block-counting process from `n`.
///
/// Each returned move is read in the forward direction from `n`:
/// `Coalesce(j)` leads to `n + e_j`, `Mutate { parent, child }` to
/// `n - e_parent + e_child`.
pub fn forward_transitions(n: &TypedSample, m: &MutationModel) -> Result<TransitionDistribution> {
    check_dim(n, m)?;
    let size = n.size() as f64;
    let theta = m.theta();
    let denom = size - 1.0 + theta;
    let mut moves = Vec::new();
    if n.size() >= 2 {
        for &(j, nj) in n.entries() {
            moves.push((Move::Coalesce(j), (size - 1.0) / denom * nj as f64 / size));
        }
    }
    for &(i, ni) in n.entries() {
        m.for_each_child(i, |j, pij| {
            moves.push((
                Move::Mutate { parent: i, child: j },
                theta / denom * ni as f64 / size * pij,
            ));
        });
    }
    Ok(TransitionDistribution::from_raw(moves))
}

/// Coefficient of `p(n - v)` in the sampling recursion for `p(n)`, where `v`
/// is the backward move `mv`. Zero when the move leaves the state space.
///
/// Coalescence of type `j` contributes `(n_j - 1)/(N - 1 + θ)` and the
/// mutation `parent -> child` contributes
/// `θ P_{parent,child} (n_parent + 1 - δ)/(N (N - 1 + θ))`.
pub fn recursion_coefficient(n: &TypedSample, mv: Move, m: &MutationModel) -> f64 {
    let size = n.size() as f64;
    let denom = size - 1.0 + m.theta();
    match mv {
        Move::Coalesce(j) => {
            let nj = n.count(j);
            if nj >= 2 {
                (nj - 1) as f64 / denom
            } else {
                0.0
            }
        }
        Move::Mutate { parent, child } => {
            if n.count(child) == 0 {
                return 0.0;
            }
            let ni = n.count(parent) as f64 + if parent == child { 0.0 } else { 1.0 };
            m.theta() * m.p(parent, child) * ni / (size * denom)
        }
    }
}

/// Calls `f(move, coefficient)` for every backward move from `n` with a
/// positive recursion coefficient.
pub fn for_each_recursion_term(n: &TypedSample, m: &MutationModel, mut f: impl FnMut(Move, f64)) {
    let size = n.size() as f64;
    let theta = m.theta();
    let denom = size - 1.0 + theta;
    if n.size() < 2 {
        return;
    }
    for &(j, nj) in n.entries() {
        if nj >= 2 {
            f(Move::Coalesce(j), (nj - 1) as f64 / denom);
        }
        m.for_each_parent(j, |i, pij| {
            let ni = if i == j { nj } else { n.count(i) + 1 };
            f(
                Move::Mutate { parent: i, child: j },
                theta * pij * ni as f64 / (size * denom),
            );
        });
    }
}

/// `π[i | n] = (n_i + θ Q_i)/(‖n‖ + θ)` for a parent-independent model.
pub fn pim_conditional(i: usize, n: &TypedSample, m: &MutationModel) -> Result<f64> {
    let q = m
        .pim_q()
        .ok_or_else(|| Error::UnsupportedModel("conditional law is only explicit for parent-independent mutation".into()))?;
    if i >= q.len() {
        return Err(Error::IndexOutOfRange { index: i, dim: q.len() });
    }
    check_dim(n, m)?;
    Ok(pim_pi(i, n.count(i) as f64, n.size() as f64, m.theta(), q))
}

/// Closed-form `ln p(n)` for a parent-independent model: the multinomial
/// coefficient times the product of sequential conditional laws.
pub fn pim_log_probability(n: &TypedSample, m: &MutationModel) -> Result<f64> {
    let q = m
        .pim_q()
        .ok_or_else(|| Error::UnsupportedModel("closed form needs parent-independent mutation".into()))?;
    check_dim(n, m)?;
    let theta = m.theta();
    let mut out = ln_factorial(n.size());
    let mut seen = 0.0;
    for &(i, c) in n.entries() {
        out -= ln_factorial(c);
        for k in 0..c {
            out += ((k as f64 + theta * q[i]) / (seen + theta)).ln();
            seen += 1.0;
        }
    }
    Ok(out)
}

pub(crate) fn ln_factorial(k: u32) -> f64 {
    (2..=k).map(|x| (x as f64).ln()).sum()
}

fn pim_pi(i: usize, ni: f64, size: f64, theta: f64, q: &[f64]) -> f64 {
    (ni + theta * q[i]) / (size + theta)
}

/// True backward kernel of a parent-independent model.
pub fn backward_transitions_pim(n: &TypedSample, m: &MutationModel) -> Result<TransitionDistribution> {
    let q = m
        .pim_q()
        .ok_or_else(|| Error::UnsupportedModel("backward kernel is only explicit for parent-independent mutation".into()))?;
    check_dim(n, m)?;
    if n.size() < 2 {
        return Err(Error::Domain("backward kernel needs at least two lineages".into()));
    }
    let theta = m.theta();
    let size = n.size() as f64;
    let scale = size * (size - 1.0 + theta);
    let d = m.dim();
    let mut moves = Vec::new();
    for &(j, nj) in n.entries() {
        let njf = nj as f64;
        // Conditional laws given n - e_j.
        let cond = |i: usize| {
            let ni = n.count(i) as f64 - if i == j { 1.0 } else { 0.0 };
            pim_pi(i, ni, size - 1.0, theta, q)
        };
        let pj = cond(j);
        if nj >= 2 {
            moves.push((Move::Coalesce(j), njf * (njf - 1.0) / scale / pj));
        }
        for i in 0..d {
            if q[j] > 0.0 {
                moves.push((
                    Move::Mutate { parent: i, child: j },
                    theta * q[j] * njf / scale * cond(i) / pj,
                ));
            }
        }
    }
    Ok(TransitionDistribution::from_raw(moves))
}

fn check_dim(n: &TypedSample, m: &MutationModel) -> Result<()> {
    if n.dim() != m.dim() {
        return Err(Error::Domain(format!(
            "sample has {} types but the model has {}",
            n.dim(),
            m.dim()
        )));
    }
    Ok(())
}

/// All count vectors of the given size over `d` types, in lexicographic order.
pub fn compositions(size: u32, d: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; d];
    fn rec(pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        let d = cur.len();
        if pos == d - 1 {
            cur[pos] = left;
            out.push(cur.clone());
            return;
        }
        for c in 0..=left {
            cur[pos] = c;
            rec(pos + 1, left - c, cur, out);
        }
    }
    if d > 0 {
        rec(0, size, &mut cur, &mut out);
    }
    out
}

/// Exact sampling probabilities for every configuration up to a given size,
/// obtained by solving the recursion level by level.
#[derive(Debug, Clone)]
pub struct ExactTable {
    levels: Vec<HashMap<Vec<u32>, f64>>,
}

impl ExactTable {
    pub fn build(max_size: u32, m: &MutationModel, cap: u32) -> Result<Self> {
        if max_size == 0 {
            return Err(Error::Domain("sample size must be positive".into()));
        }
        if max_size > cap {
            return Err(Error::CapExceeded { size: max_size, cap });
        }
        if m.sites().is_some() {
            return Err(Error::UnsupportedModel(
                "exact recursion needs an explicit mutation matrix".into(),
            ));
        }
        let d = m.dim();
        let mut levels: Vec<HashMap<Vec<u32>, f64>> = vec![HashMap::new()];
        let mut first = HashMap::new();
        for i in 0..d {
            let mut e = vec![0; d];
            e[i] = 1;
            first.insert(e, m.stationary(i));
        }
        levels.push(first);
        for s in 2..=max_size {
            let states = compositions(s, d);
            let index: HashMap<&[u32], usize> =
                states.iter().enumerate().map(|(k, v)| (v.as_slice(), k)).collect();
            let k = states.len();
            let mut a = DMatrix::<f64>::identity(k, k);
            let mut b = DVector::<f64>::zeros(k);
            let prev = &levels[(s - 1) as usize];
            for (row, counts) in states.iter().enumerate() {
                let n = TypedSample::from_counts(counts)?;
                for_each_recursion_term(&n, m, |mv, c| match mv {
                    Move::Coalesce(j) => {
                        let mut pred = counts.clone();
                        pred[j] -= 1;
                        b[row] += c * prev[&pred];
                    }
                    Move::Mutate { parent, child } => {
                        let mut pred = counts.clone();
                        pred[child] -= 1;
                        pred[parent] += 1;
                        a[(row, index[pred.as_slice()])] -= c;
                    }
                });
            }
            let x = a
                .lu()
                .solve(&b)
                .ok_or_else(|| Error::Singular(format!("recursion level {s}")))?;
            levels.push(states.into_iter().zip(x.iter().copied()).collect());
        }
        Ok(Self { levels })
    }

    pub fn max_size(&self) -> u32 {
        (self.levels.len() - 1) as u32
    }

    pub fn get(&self, n: &TypedSample) -> Option<f64> {
        self.levels
            .get(n.size() as usize)
            .and_then(|l| l.get(&n.to_dense()))
            .copied()
    }

    /// All configurations of one size with their probabilities.
    pub fn level(&self, size: u32) -> Option<&HashMap<Vec<u32>, f64>> {
        self.levels.get(size as usize).filter(|_| size > 0)
    }
}

/// Exact `p(n)` for small samples, with the default size cap.
pub fn exact_sampling_probability(n: &TypedSample, m: &MutationModel) -> Result<f64> {
    exact_sampling_probability_capped(n, m, EXACT_CAP)
}

pub fn exact_sampling_probability_capped(n: &TypedSample, m: &MutationModel, cap: u32) -> Result<f64> {
    check_dim(n, m)?;
    let table = ExactTable::build(n.size(), m, cap)?;
    Ok(table.get(n).expect("every configuration is enumerated"))
}

/// Simulates a sample of `size_target` lineages by running the forward
/// block-counting chain from a single ancestor of stationary type, stopping
/// just before the first branching beyond `size_target`.
pub fn forward_simulate(size_target: u32, m: &MutationModel, seed: u64) -> Result<TypedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    forward_simulate_with(size_target, m, &mut rng)
}

pub fn forward_simulate_with<R: Rng + ?Sized>(size_target: u32, m: &MutationModel, rng: &mut R) -> Result<TypedSample> {
    if size_target == 0 {
        return Err(Error::Domain("target sample size must be positive".into()));
    }
    let d = m.dim();
    let root = m.sample_stationary(rng);
    let mut n = TypedSample::unit(d, root)?;
    if size_target == 1 {
        return Ok(n);
    }
    // A lone lineage can only mutate, which does not change its stationary
    // type law, so branch straight away.
    n.add(root);
    let theta = m.theta();
    loop {
        let size = n.size() as f64;
        let branch = rng.random::<f64>() < (size - 1.0) / (size - 1.0 + theta);
        let i = pick_lineage(&n, rng);
        if branch {
            if n.size() == size_target {
                return Ok(n);
            }
            n.add(i);
        } else {
            let j = m.sample_child(i, rng);
            n.remove(i);
            n.add(j);
        }
    }
}

fn pick_lineage<R: Rng + ?Sized>(n: &TypedSample, rng: &mut R) -> usize {
    let mut u = rng.random_range(0..n.size());
    for &(i, c) in n.entries() {
        if u < c {
            return i;
        }
        u -= c;
    }
    unreachable!("lineage index within sample size")
}

/// Uniform subsample of `size` lineages drawn without replacement.
pub fn subsample<R: Rng + ?Sized>(n: &TypedSample, size: u32, rng: &mut R) -> Result<TypedSample> {
    if size == 0 || size > n.size() {
        return Err(Error::Domain(format!(
            "cannot draw {size} lineages from a sample of {}",
            n.size()
        )));
    }
    let mut pool = n.clone();
    let mut out = Vec::with_capacity(size as usize);
    for _ in 0..size {
        let i = pick_lineage(&pool, rng);
        pool.remove(i);
        out.push((i, 1));
    }
    TypedSample::from_entries(n.dim(), out)
}
