//! Large-sample limit of cost-weighted backward simulation.
//!
//! Scaled block counts shrink deterministically, `Y(s) = y0 (1 - s)`, while
//! mutation counters `M_ij` are independent Poisson processes with intensity
//! `theta P_ij y0_i / (1 - s)`. The limiting cost is
//!
//! ```text
//! C(t) = exp( int_0^t sum_i y0_i a_i(Y(u)) du ) * prod_{jumps} b_ij(Y(T))
//! ```

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::proposals::{CostCoefficients, ProposalKind};

/// Absolute tolerance of the drift integral.
pub const QUADRATURE_TOLERANCE: f64 = 1e-10;
/// Pass threshold of [`check_proposal_condition`].
pub const CONDITION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct LimitConfig {
    pub y0: Vec<f64>,
    pub theta: f64,
    pub p: DMatrix<f64>,
    pub horizon: f64,
}

impl LimitConfig {
    pub fn new(y0: Vec<f64>, theta: f64, p: DMatrix<f64>, horizon: f64) -> Result<Self> {
        let d = y0.len();
        if d == 0 || y0.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Domain("y0 must be a non-empty, strictly positive vector".into()));
        }
        if (y0.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Domain("y0 must sum to one".into()));
        }
        if p.nrows() != d || p.ncols() != d {
            return Err(Error::Domain(format!("P is {}x{}, expected {d}x{d}", p.nrows(), p.ncols())));
        }
        if p.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Domain("P entries must be non-negative".into()));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::Domain(format!("theta must be positive, got {theta}")));
        }
        check_horizon(horizon)?;
        Ok(Self { y0, theta, p, horizon })
    }

    pub fn dim(&self) -> usize {
        self.y0.len()
    }

    /// Cumulative intensity `theta P_ij y0_i ln(1/(1-t))`.
    pub fn cumulative_intensity(&self, i: usize, j: usize, t: f64) -> f64 {
        self.rate(i, j) * -(1.0 - t).ln()
    }

    fn rate(&self, i: usize, j: usize) -> f64 {
        self.theta * self.p[(i, j)] * self.y0[i]
    }
}

fn check_horizon(t: f64) -> Result<()> {
    if (0.0..1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain(format!("time must lie in [0, 1), got {t}")))
    }
}

/// `Y(t) = y0 (1 - t)`.
pub fn limit_y(t: f64, y0: &[f64]) -> Result<Vec<f64>> {
    check_horizon(t)?;
    Ok(y0.iter().map(|v| v * (1.0 - t)).collect())
}

/// Jump times of every counter up to the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitPath {
    pub y0: Vec<f64>,
    pub horizon: f64,
    /// `jumps[i][j]` holds the increasing jump times of `M_ij`.
    pub jumps: Vec<Vec<Vec<f64>>>,
}

impl LimitPath {
    /// `M_ij(t)`.
    pub fn count(&self, i: usize, j: usize, t: f64) -> usize {
        self.jumps[i][j].partition_point(|&x| x <= t)
    }
}

/// Samples the counters by inverting the cumulative intensity at unit-rate
/// Poisson arrivals.
pub fn simulate_m(config: &LimitConfig, seed: u64) -> LimitPath {
    simulate_m_with(config, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn simulate_m_with(config: &LimitConfig, rng: &mut ChaCha8Rng) -> LimitPath {
    let d = config.dim();
    let mut jumps = vec![vec![Vec::new(); d]; d];
    for (i, row) in jumps.iter_mut().enumerate() {
        for (j, times) in row.iter_mut().enumerate() {
            let c = config.rate(i, j);
            if c <= 0.0 {
                continue;
            }
            let mut e = 0.0;
            loop {
                e += -(1.0 - rng.random::<f64>()).ln();
                let t = -(-e / c).exp_m1();
                if t > config.horizon {
                    break;
                }
                times.push(t);
            }
        }
    }
    LimitPath { y0: config.y0.clone(), horizon: config.horizon, jumps }
}

/// `int_0^t sum_i y0_i a_i(y0 (1-u)) du`.
pub fn drift_integral(y0: &[f64], coeff: &CostCoefficients, t: f64) -> Result<f64> {
    check_horizon(t)?;
    if coeff.dim() != y0.len() {
        return Err(Error::Domain(format!("coefficients have dimension {}, y0 has {}", coeff.dim(), y0.len())));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let out = quadrature::double_exponential::integrate(
        |u| {
            let y: Vec<f64> = y0.iter().map(|v| v * (1.0 - u)).collect();
            (0..y0.len()).map(|i| y0[i] * coeff.a(i, &y)).sum()
        },
        0.0,
        t,
        QUADRATURE_TOLERANCE,
    );
    if !(out.integral.is_finite() && out.error_estimate <= QUADRATURE_TOLERANCE) {
        return Err(Error::Quadrature { a: 0.0, b: t, error: out.error_estimate });
    }
    Ok(out.integral)
}

/// `C(t)` along `path`.
pub fn limit_cost(path: &LimitPath, coeff: &CostCoefficients, t: f64) -> Result<f64> {
    if t > path.horizon {
        return Err(Error::Domain(format!("path simulated to {}, cost requested at {t}", path.horizon)));
    }
    let mut log = drift_integral(&path.y0, coeff, t)?;
    for (i, row) in path.jumps.iter().enumerate() {
        for (j, times) in row.iter().enumerate() {
            for &s in times.iter().take_while(|&&s| s <= t) {
                let y = limit_y(s, &path.y0)?;
                log += coeff.b(i, j, &y).ln();
            }
        }
    }
    Ok(log.exp())
}

/// `C` on a grid of times, for export.
pub fn limit_cost_grid(path: &LimitPath, coeff: &CostCoefficients, grid: &[f64]) -> Result<Vec<f64>> {
    grid.iter().map(|&t| limit_cost(path, coeff, t)).collect()
}

/// Outcome of [`check_proposal_condition`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub pass: bool,
    pub max_residual: f64,
    /// `(u, |<Y(u), a(Y(u))> + d - 1|)` per grid point.
    pub residuals: Vec<(f64, f64)>,
}

/// Checks `-<Y(u), a(Y(u))> = d - 1` along `Y(u) = y0 (1 - u)`.
pub fn check_proposal_condition(coeff: &CostCoefficients, y0: &[f64], grid: &[f64]) -> Result<ConditionReport> {
    let d = y0.len();
    if coeff.dim() != d {
        return Err(Error::Domain(format!("coefficients have dimension {}, y0 has {d}", coeff.dim())));
    }
    let mut residuals = Vec::with_capacity(grid.len());
    for &u in grid {
        let y = limit_y(u, y0)?;
        let inner: f64 = (0..d).map(|j| y[j] * coeff.a(j, &y)).sum();
        residuals.push((u, (inner + (d as f64 - 1.0)).abs()));
    }
    let max_residual = residuals.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(ConditionReport { pass: max_residual < CONDITION_TOLERANCE, max_residual, residuals })
}

/// Which limiting quantity [`predicted_weight_limit`] returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitFactor {
    /// Normalised weight `W(t)`.
    Weight,
    /// Cost `C(t)`.
    Cost,
    /// Ratio `p(n Y(t)) / p(n y0)` in the scaling limit.
    ProbabilityRatio,
}

pub fn predicted_weight_limit(kind: ProposalKind, factor: LimitFactor, t: f64, d: usize) -> Result<f64> {
    check_horizon(t)?;
    if kind == ProposalKind::PimOptimal {
        return Err(Error::UnsupportedModel("limits are stated for the GT and SD proposals".into()));
    }
    let e = d as i32 - 1;
    Ok(match factor {
        LimitFactor::Weight => 1.0,
        LimitFactor::Cost => (1.0 - t).powi(e),
        LimitFactor::ProbabilityRatio => (1.0 - t).powi(-e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero(d: usize) -> CostCoefficients {
        CostCoefficients::new(d, |_, _| 0.0, |_, _, _| 1.0)
    }

    #[test]
    fn y_scaling() {
        assert_eq!(limit_y(0.0, &[0.3, 0.7]).unwrap(), vec![0.3, 0.7]);
        let y = limit_y(0.5, &[0.3, 0.7]).unwrap();
        assert!((y[0] - 0.15).abs() < 1e-15 && (y[1] - 0.35).abs() < 1e-15);
        assert!(limit_y(1.0, &[1.0]).is_err());
    }

    #[test]
    fn zero_coefficients_give_unit_cost() {
        let c = LimitConfig::new(vec![0.5, 0.5], 1.0, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), 0.7).unwrap();
        let path = simulate_m(&c, 3);
        assert_eq!(limit_cost(&path, &zero(2), 0.7).unwrap(), 1.0);
        assert_eq!(limit_cost(&path, &zero(2), 0.0).unwrap(), 1.0);
    }

    #[test]
    fn no_rate_no_jumps() {
        let c = LimitConfig::new(vec![0.5, 0.5], 1.0, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]), 0.9).unwrap();
        for seed in 0..100 {
            let p = simulate_m(&c, seed);
            assert!(p.jumps[0][1].is_empty() && p.jumps[1][0].is_empty());
            assert!(p.jumps[0][0].windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn condition_fails_for_zero_field() {
        let r = check_proposal_condition(&zero(3), &[0.2, 0.3, 0.5], &[0.0, 0.5]).unwrap();
        assert!(!r.pass);
        assert!((r.max_residual - 2.0).abs() < 1e-15);
    }

    #[test]
    fn factors_cancel() {
        for d in 1..5 {
            for t in [0.0, 0.3, 0.5, 0.9] {
                let a = predicted_weight_limit(ProposalKind::Gt, LimitFactor::Cost, t, d).unwrap();
                let b = predicted_weight_limit(ProposalKind::Gt, LimitFactor::ProbabilityRatio, t, d).unwrap();
                assert!((a * b - 1.0).abs() < 1e-14);
            }
        }
        assert_eq!(predicted_weight_limit(ProposalKind::Sd, LimitFactor::Cost, 0.5, 2).unwrap(), 0.5);
    }
}
