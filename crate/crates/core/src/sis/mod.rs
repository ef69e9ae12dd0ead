//! Sequential importance sampling driver.
//!
//! Replicates are propagated backward in time in parallel between
//! synchronisation levels (lineage counts at which every replicate stops).
//! All reductions run in replicate order, so results do not depend on the
//! number of worker threads.

pub mod fa;
pub mod resample;
pub mod rng;
pub mod schedule;

use std::time::{Duration, Instant};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
pub use fa::FaProposal;
pub use resample::{ess, ess_log, systematic_resample};
pub use schedule::{schedule_draw_count, switch_point, Schedule, ScheduleKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Coalescence,
    Mutation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    /// Log of the ratio of forward density to proposal mass.
    pub log_cost: f64,
    pub kind: StepKind,
}

/// A backward proposal that the engine can drive.
pub trait Proposal: Sync {
    type State: Clone + Send + Sync;

    /// Remaining lineages in `state`.
    fn lineages(&self, state: &Self::State) -> u32;

    /// Samples one backward move, updates `state` and returns its cost.
    fn step(&self, state: &mut Self::State, rng: &mut ChaCha8Rng) -> Result<Step>;

    /// Log of the factor applied on reaching a single lineage.
    fn log_terminal(&self, state: &Self::State) -> f64;

    /// Log of the exact sampling probability of `state`, where known.
    fn log_exact(&self, _state: &Self::State) -> Option<f64> {
        None
    }

    /// Mutation rate quoted for schedules.
    fn nominal_theta(&self) -> f64;
}

#[derive(Debug, Clone)]
pub struct Replicate<S> {
    pub state: S,
    pub log_weight: f64,
    pub steps: u64,
    pub coalescences: u64,
    pub mutations: u64,
    pub stopped: bool,
    pub discarded: bool,
    rng: ChaCha8Rng,
}

impl<S: Clone> Replicate<S> {
    pub fn new(state: S, rng: ChaCha8Rng) -> Self {
        Self {
            state,
            log_weight: 0.0,
            steps: 0,
            coalescences: 0,
            mutations: 0,
            stopped: false,
            discarded: false,
            rng,
        }
    }

    /// Steps until `level` lineages remain, applying the terminal factor on
    /// reaching one lineage.
    fn advance<P: Proposal<State = S>>(&mut self, p: &P, level: u32, cap: Option<u64>) -> Result<()> {
        if self.discarded || self.stopped {
            return Ok(());
        }
        while p.lineages(&self.state) > level {
            let s = p.step(&mut self.state, &mut self.rng)?;
            self.log_weight += s.log_cost;
            self.steps += 1;
            match s.kind {
                StepKind::Coalescence => self.coalescences += 1,
                StepKind::Mutation => {
                    self.mutations += 1;
                    if cap.is_some_and(|c| self.mutations > c) {
                        self.discarded = true;
                        self.log_weight = f64::NEG_INFINITY;
                        return Ok(());
                    }
                }
            }
        }
        if p.lineages(&self.state) == 1 {
            self.log_weight += p.log_terminal(&self.state);
            self.stopped = true;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResamplingPolicy {
    pub enabled: bool,
    /// Resample when the effective sample size drops below this fraction of
    /// the replicate count.
    pub ess_fraction: f64,
}

impl ResamplingPolicy {
    pub fn off() -> Self {
        Self {
            enabled: false,
            ess_fraction: 0.1,
        }
    }

    pub fn stopping_time(ess_fraction: f64) -> Result<Self> {
        if !(ess_fraction > 0.0 && ess_fraction <= 1.0) {
            return Err(Error::Config(format!("ess fraction must lie in (0, 1], got {ess_fraction}")));
        }
        Ok(Self {
            enabled: true,
            ess_fraction,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub master_seed: u64,
    pub workers: usize,
    /// Discard a replicate once its mutation count exceeds this cap.
    pub rejection_cap: Option<u64>,
    /// Independent batches used for standard errors when replicates
    /// interact (schedule `S2`, resampling).
    pub batches: u64,
    pub track_variance: bool,
}

impl RunOptions {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            workers: 1,
            rejection_cap: None,
            batches: 20,
            track_variance: false,
        }
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn rejection_cap(mut self, cap: Option<u64>) -> Self {
        self.rejection_cap = cap;
        self
    }

    pub fn batches(mut self, batches: u64) -> Self {
        self.batches = batches.max(1);
        self
    }

    pub fn track_variance(mut self, on: bool) -> Self {
        self.track_variance = on;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub estimate: f64,
    pub log_estimate: f64,
    pub standard_error: f64,
    /// `standard_error / estimate`, computed without leaving log space so it
    /// survives when the estimate underflows.
    pub relative_se: f64,
    /// Replicates alive at the end of the run, over all batches.
    pub replicates: u64,
    pub batches: u64,
    /// Coalescence-step proposal draws.
    pub draws: u64,
    /// All proposal draws, mutations included.
    pub steps: u64,
    pub discarded: u64,
    pub resample_events: u64,
    /// `(remaining lineages, variance of normalised weights)`, from the
    /// starting configuration down to one lineage. Empty unless tracked.
    pub level_variances: Vec<(u32, f64)>,
    pub wall_time: Duration,
}

impl RunResult {
    pub fn discard_fraction(&self) -> f64 {
        if self.replicates == 0 {
            0.0
        } else {
            self.discarded as f64 / self.replicates as f64
        }
    }
}

struct Plan {
    replicates: u64,
    branch: Option<(u32, u64)>,
    resample: Option<f64>,
}

struct BatchOutcome {
    log_weights: Vec<f64>,
    draws: u64,
    steps: u64,
    discarded: u64,
    resample_events: u64,
    level_variances: Vec<(u32, f64)>,
}

/// Log-mean-exp, shifted by the maximum.
pub fn log_mean_exp(logs: &[f64]) -> f64 {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if logs.is_empty() || max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    max + (s / logs.len() as f64).ln()
}

/// Population variance of `w / mean(w)` from log-weights.
pub fn normalized_variance(logs: &[f64]) -> f64 {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if logs.is_empty() || max == f64::NEG_INFINITY {
        return f64::NAN;
    }
    let a: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let mean = a.iter().sum::<f64>() / a.len() as f64;
    a.iter().map(|x| (x / mean - 1.0).powi(2)).sum::<f64>() / a.len() as f64
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn advance_all<P: Proposal>(
    pool: &rayon::ThreadPool,
    p: &P,
    reps: &mut [Replicate<P::State>],
    level: u32,
    cap: Option<u64>,
) -> Result<()> {
    let results: Vec<Result<()>> = pool.install(|| reps.par_iter_mut().map(|r| r.advance(p, level, cap)).collect());
    results.into_iter().collect()
}

fn level_logs<P: Proposal>(p: &P, reps: &[Replicate<P::State>]) -> Vec<f64> {
    reps.iter()
        .map(|r| {
            if r.stopped || r.discarded {
                r.log_weight
            } else {
                r.log_weight + p.log_exact(&r.state).unwrap_or(0.0)
            }
        })
        .collect()
}

/// Replaces the population by `count` offspring drawn by systematic
/// resampling; every offspring carries the mean weight of the parents.
#[allow(clippy::too_many_arguments)]
fn resample_population<S: Clone>(
    reps: &mut Vec<Replicate<S>>,
    count: u64,
    master: u64,
    batch: u64,
    generation: u64,
    totals: &mut (u64, u64, u64),
) -> Result<()> {
    for r in reps.iter() {
        totals.0 += r.coalescences;
        totals.1 += r.steps;
        totals.2 += r.discarded as u64;
    }
    let logs: Vec<f64> = reps.iter().map(|r| r.log_weight).collect();
    let log_mean = log_mean_exp(&logs);
    let lane = rng::lane(batch, generation);
    if log_mean == f64::NEG_INFINITY {
        // Every replicate was discarded; the estimate is zero either way.
        let template = reps[0].clone();
        *reps = (0..count)
            .map(|id| {
                let mut r = Replicate::new(template.state.clone(), rng::stream(master, lane, id));
                r.stopped = true;
                r.log_weight = f64::NEG_INFINITY;
                r
            })
            .collect();
        return Ok(());
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let mut u_rng = rng::stream(master, lane, u64::MAX);
    let u = rand::Rng::random::<f64>(&mut u_rng);
    let parents = resample::systematic_indices(&w, count as usize, u)?;
    *reps = parents
        .into_iter()
        .enumerate()
        .map(|(id, k)| {
            let parent = &reps[k];
            let mut r = Replicate::new(parent.state.clone(), rng::stream(master, lane, id as u64));
            r.log_weight = log_mean;
            r.stopped = parent.stopped;
            r
        })
        .collect();
    Ok(())
}

fn run_batch<P: Proposal>(
    p: &P,
    init: &P::State,
    plan: &Plan,
    batch: u64,
    opts: &RunOptions,
    pool: &rayon::ThreadPool,
) -> Result<BatchOutcome> {
    let n = p.lineages(init);
    let master = opts.master_seed;
    let mut generation = 0u64;
    let mut reps: Vec<Replicate<P::State>> = (0..plan.replicates)
        .map(|id| Replicate::new(init.clone(), rng::stream(master, rng::lane(batch, 0), id)))
        .collect();
    let every_level = opts.track_variance || plan.resample.is_some();
    let mut levels: Vec<u32> = if every_level {
        (1..n).rev().collect()
    } else {
        let mut v = vec![1];
        if let Some((z, _)) = plan.branch {
            v.insert(0, z);
        }
        v
    };
    levels.dedup();
    let mut totals = (0u64, 0u64, 0u64);
    let mut resample_events = 0;
    let mut level_variances = Vec::new();
    if opts.track_variance {
        level_variances.push((n, normalized_variance(&level_logs(p, &reps))));
    }
    for &level in &levels {
        advance_all(pool, p, &mut reps, level, opts.rejection_cap)?;
        if opts.track_variance {
            level_variances.push((level, normalized_variance(&level_logs(p, &reps))));
        }
        if level == 1 {
            break;
        }
        if let Some((z, count)) = plan.branch {
            if z == level {
                generation += 1;
                resample_population(&mut reps, count, master, batch, generation, &mut totals)?;
                resample_events += 1;
                continue;
            }
        }
        if let Some(frac) = plan.resample {
            let logs: Vec<f64> = reps.iter().map(|r| r.log_weight).collect();
            let e = ess_log(&logs).unwrap_or(0.0);
            if e < frac * reps.len() as f64 && e > 0.0 {
                generation += 1;
                let count = reps.len() as u64;
                resample_population(&mut reps, count, master, batch, generation, &mut totals)?;
                resample_events += 1;
            }
        }
    }
    for r in &reps {
        totals.0 += r.coalescences;
        totals.1 += r.steps;
        totals.2 += r.discarded as u64;
    }
    Ok(BatchOutcome {
        log_weights: reps.iter().map(|r| r.log_weight).collect(),
        draws: totals.0,
        steps: totals.1,
        discarded: totals.2,
        resample_events,
        level_variances,
    })
}

fn split(total: u64, parts: u64, k: u64) -> u64 {
    total / parts + u64::from(k < total % parts)
}

/// Estimates the sampling probability of `init` under the given schedule.
pub fn run_sis<P: Proposal>(
    p: &P,
    init: &P::State,
    schedule: &Schedule,
    policy: &ResamplingPolicy,
    opts: &RunOptions,
) -> Result<RunResult> {
    let start = Instant::now();
    let n = p.lineages(init);
    if n < 2 {
        return Err(Error::Domain("the data must contain at least two lineages".into()));
    }
    let theta = p.nominal_theta();
    if schedule.kind == ScheduleKind::S2 && n < 3 {
        return Err(Error::Config("schedule s2 needs at least three lineages".into()));
    }
    let initial = schedule.initial_replicates(n, theta);
    if initial == 0 {
        return Err(Error::Config("schedule yields zero replicates".into()));
    }
    let pool = pool(opts.workers)?;
    let resample = policy.enabled.then_some(policy.ess_fraction);
    let interacting = schedule.kind == ScheduleKind::S2 || resample.is_some();
    let batches = if interacting { opts.batches.min(initial).max(1) } else { 1 };
    let zeta = schedule.switch_point(n, theta);

    let mut outcomes = Vec::with_capacity(batches as usize);
    for b in 0..batches {
        let plan = Plan {
            replicates: split(initial, batches, b),
            branch: (schedule.kind == ScheduleKind::S2).then(|| (zeta, split(schedule.big_gamma, batches, b))),
            resample,
        };
        outcomes.push(run_batch(p, init, &plan, b, opts, &pool)?);
    }

    let all: Vec<f64> = outcomes.iter().flat_map(|o| o.log_weights.iter().copied()).collect();
    let log_estimate = log_mean_exp(&all);
    let estimate = log_estimate.exp();
    let relative_se = if log_estimate == f64::NEG_INFINITY {
        f64::NAN
    } else if batches > 1 {
        let ests: Vec<f64> = outcomes.iter().map(|o| (log_mean_exp(&o.log_weights) - log_estimate).exp()).collect();
        let mean = ests.iter().sum::<f64>() / ests.len() as f64;
        let var = ests.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (ests.len() - 1) as f64;
        (var / ests.len() as f64).sqrt()
    } else {
        let shifted: Vec<f64> = all.iter().map(|l| l - log_estimate).collect();
        sample_se(&shifted)
    };
    let standard_error = if log_estimate == f64::NEG_INFINITY { sample_se(&all) } else { relative_se * estimate };
    let level_variances = if opts.track_variance {
        merge_variances(&outcomes)
    } else {
        Vec::new()
    };
    Ok(RunResult {
        estimate,
        log_estimate,
        standard_error,
        relative_se,
        replicates: all.len() as u64,
        batches,
        draws: outcomes.iter().map(|o| o.draws).sum(),
        steps: outcomes.iter().map(|o| o.steps).sum(),
        discarded: outcomes.iter().map(|o| o.discarded).sum(),
        resample_events: outcomes.iter().map(|o| o.resample_events).sum(),
        level_variances,
        wall_time: start.elapsed(),
    })
}

fn merge_variances(outcomes: &[BatchOutcome]) -> Vec<(u32, f64)> {
    if outcomes.len() == 1 {
        return outcomes[0].level_variances.clone();
    }
    let levels = outcomes[0].level_variances.len();
    (0..levels)
        .map(|k| {
            let level = outcomes[0].level_variances[k].0;
            let mean = outcomes.iter().map(|o| o.level_variances[k].1).sum::<f64>() / outcomes.len() as f64;
            (level, mean)
        })
        .collect()
}

/// Standard error of the mean of `exp(logs)`.
pub fn sample_se(logs: &[f64]) -> f64 {
    let k = logs.len();
    if k < 2 {
        return f64::NAN;
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let a: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let mean = a.iter().sum::<f64>() / k as f64;
    let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (var / k as f64).sqrt() * max.exp()
}

/// Per-level variance of normalised partial weights, with replicates moving
/// in lockstep between lineage counts and no resampling.
pub fn variance_by_lineage_count<P: Proposal>(
    p: &P,
    init: &P::State,
    replicates: u64,
    opts: &RunOptions,
) -> Result<Vec<(u32, f64)>> {
    let run = run_sis(
        p,
        init,
        &Schedule::fixed(replicates),
        &ResamplingPolicy::off(),
        &opts.track_variance(true),
    )?;
    Ok(run.level_variances)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedResult {
    /// Number of backward steps taken by every retained replicate.
    pub horizon: u64,
    /// Cumulative cost of each retained replicate.
    pub costs: Vec<f64>,
    /// Replicates that reached one lineage before the horizon.
    pub excluded: u64,
}

impl TruncatedResult {
    pub fn mean(&self) -> f64 {
        self.costs.iter().sum::<f64>() / self.costs.len() as f64
    }

    pub fn standard_error(&self) -> f64 {
        let k = self.costs.len() as f64;
        let m = self.mean();
        let var = self.costs.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    }
}

/// Runs every replicate for exactly `⌊t n⌋` backward steps, recording only
/// the product of one-step costs.
pub fn truncated_run<P: Proposal>(
    p: &P,
    init: &P::State,
    t: f64,
    replicates: u64,
    opts: &RunOptions,
) -> Result<TruncatedResult> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::Domain(format!("truncation time must lie in [0, 1), got {t}")));
    }
    let n = p.lineages(init);
    let horizon = (t * n as f64).floor() as u64;
    let pool = pool(opts.workers)?;
    let master = opts.master_seed;
    let results: Vec<Result<Option<f64>>> = pool.install(|| {
        (0..replicates)
            .into_par_iter()
            .map(|id| {
                let mut rng = rng::stream(master, rng::lane(0, 0), id);
                let mut state = init.clone();
                let mut log_c = 0.0;
                for _ in 0..horizon {
                    if p.lineages(&state) <= 1 {
                        return Ok(None);
                    }
                    log_c += p.step(&mut state, &mut rng)?.log_cost;
                }
                Ok(Some(log_c.exp()))
            })
            .collect()
    });
    let mut costs = Vec::with_capacity(replicates as usize);
    let mut excluded = 0;
    for r in results {
        match r? {
            Some(c) => costs.push(c),
            None => excluded += 1,
        }
    }
    Ok(TruncatedResult {
        horizon,
        costs,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_helpers() {
        let l = [0.0f64.ln(), 1.0f64.ln(), 3.0f64.ln()];
        assert!((log_mean_exp(&l).exp() - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(normalized_variance(&[-5.0; 10]), 0.0);
        assert!((normalized_variance(&[0.0, 2.0f64.ln()]) - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(log_mean_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn split_is_exact() {
        let parts: Vec<u64> = (0..20).map(|k| split(10_007, 20, k)).collect();
        assert_eq!(parts.iter().sum::<u64>(), 10_007);
        assert!(parts.iter().all(|&x| x == 500 || x == 501));
    }
}
