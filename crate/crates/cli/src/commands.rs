//! Subcommand implementations. Each writes its CSV (and a plot) into an
//! output directory and returns the main table.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use coalsis::io::{format_finite_sample, format_ism, read_finite_sample, read_ism, read_matrix};
use coalsis::ism::{
    ism_forward_simulate, watterson, HuwReading, HuwSource, HuwTable, IsmProposal, IsmProposalKind, IsmSample, IsmState,
};
use coalsis::limit::{predicted_weight_limit, LimitFactor};
use coalsis::model::{forward_simulate, subsample};
use coalsis::sis::rng::{derive_seed, stream};
use coalsis::sis::{
    run_sis, truncated_run, variance_by_lineage_count, FaProposal, ResamplingPolicy, RunOptions, RunResult,
    Schedule, ScheduleKind,
};
use coalsis::{Error, MutationModel, ProposalKind, Result, TypedSample};

use crate::config::{check_grid, Config};
use crate::output::{line_plot, num, Series, Table};

const DATA_KEYS: &[&str] = &[
    "model", "data", "matrix", "sites", "proposal", "seed", "workers", "rejection_cap", "huw_table", "huw_theta",
    "huw_reading", "huw_direct",
];

pub const SURFACE_KEYS: &[&str] = &["theta_grid", "schedules", "gamma", "big_gamma", "chi", "resample", "batches"];
pub const VARCURVE_KEYS: &[&str] = &["theta", "replicates"];
pub const COSTCONV_KEYS: &[&str] = &["matrix", "theta", "y0", "sizes", "t", "proposal", "replicates", "seed", "workers"];
pub const MAKEDATA_KEYS: &[&str] =
    &["kind", "size", "sites", "matrix", "theta", "seed", "nested", "segregating", "name", "max_tries"];

/// Keys accepted by a subcommand.
pub fn allowed_keys(cmd: &str) -> Vec<&'static str> {
    match cmd {
        "surface" => [DATA_KEYS, SURFACE_KEYS].concat(),
        "varcurve" => [DATA_KEYS, VARCURVE_KEYS].concat(),
        "costconv" => COSTCONV_KEYS.to_vec(),
        "makedata" => MAKEDATA_KEYS.to_vec(),
        _ => Vec::new(),
    }
}

/// Loaded data set with what is needed to build proposals at any rate.
pub enum Data {
    Finite { sample: TypedSample, kernel: MutationModel },
    Ism { sample: IsmSample, huw: Option<HuwSource> },
}

impl Data {
    pub fn size(&self) -> u32 {
        match self {
            Data::Finite { sample, .. } => sample.size(),
            Data::Ism { sample, .. } => sample.size(),
        }
    }

    fn is_ism(&self) -> bool {
        matches!(self, Data::Ism { .. })
    }
}

fn require_path(cfg: &Config, key: &str) -> Result<PathBuf> {
    cfg.path(key).ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
}

fn with_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read {}: {io}", path.display())),
        other => Error::Config(format!("{}: {other}", path.display())),
    })
}

/// Finite-alleles kernel from `sites` (site flip) or `matrix`.
fn finite_kernel(cfg: &Config, theta: f64) -> Result<MutationModel> {
    match (cfg.get::<u32>("sites")?, cfg.path("matrix")) {
        (Some(sites), None) => MutationModel::site_flip(sites, theta),
        (None, Some(p)) => {
            let rows = with_file(&p, read_matrix(&p))?;
            MutationModel::from_rows(theta, &rows)
        }
        (Some(_), Some(_)) => Err(Error::Config("set either 'sites' or 'matrix', not both".into())),
        (None, None) => Err(Error::Config("finite-alleles data need 'sites' or 'matrix'".into())),
    }
}

pub fn load_data(cfg: &Config) -> Result<Data> {
    let path = require_path(cfg, "data")?;
    match cfg.get_or("model", "finite".to_string())?.as_str() {
        "finite" => {
            let d = with_file(&path, read_finite_sample(&path))?;
            let kernel = finite_kernel(cfg, d.theta)?;
            if kernel.dim() != d.sample.dim() {
                return Err(Error::Config(format!(
                    "data declare {} types but the mutation model has {}",
                    d.sample.dim(),
                    kernel.dim()
                )));
            }
            Ok(Data::Finite { sample: d.sample, kernel })
        }
        "ism" => {
            let sample = with_file(&path, read_ism(&path))?;
            let huw = huw_source(cfg, &sample)?;
            Ok(Data::Ism { sample, huw })
        }
        other => Err(Error::Config(format!("model must be 'finite' or 'ism', got '{other}'"))),
    }
}

fn huw_source(cfg: &Config, s: &IsmSample) -> Result<Option<HuwSource>> {
    let wants = cfg.raw("proposal").is_none_or(|p| p.eq_ignore_ascii_case("huw"));
    if !wants {
        return Ok(None);
    }
    let reading = match cfg.get_or("huw_reading", "carriers".to_string())?.as_str() {
        "carriers" => HuwReading::Carriers,
        "biallelic" => HuwReading::Biallelic,
        other => return Err(Error::Config(format!("huw_reading must be 'carriers' or 'biallelic', got '{other}'"))),
    };
    let driving = match cfg.get::<f64>("huw_theta")? {
        Some(t) => t,
        None if s.size() >= 2 => watterson(s.r(), s.size())?,
        None => 1.0,
    };
    if cfg.get_or("huw_direct", false)? {
        return Ok(Some(HuwSource::Direct { theta: driving, reading }));
    }
    let table = match cfg.path("huw_table") {
        Some(p) if p.exists() => {
            let t = with_file(&p, HuwTable::load(&p))?;
            if t.s_max() < s.size() {
                return Err(Error::TableMiss { size: s.size(), s_max: t.s_max() });
            }
            t
        }
        Some(p) => {
            let t = HuwTable::build(s.size().max(2), driving, reading)?;
            t.save(&p)?;
            t
        }
        None => HuwTable::build(s.size().max(2), driving, reading)?,
    };
    Ok(Some(HuwSource::Table(Arc::new(table))))
}

fn run_options(cfg: &Config, seed: u64, workers: Option<usize>) -> Result<RunOptions> {
    let mut o = RunOptions::new(seed)
        .workers(workers.unwrap_or(cfg.get_or("workers", 1)?))
        .rejection_cap(cfg.get("rejection_cap")?);
    if let Some(b) = cfg.get::<u64>("batches")? {
        o = o.batches(b);
    }
    Ok(o)
}

/// A proposal for `data` at rate `theta`, type-erased over the engine.
enum Built {
    Fa(FaProposal),
    Ism(IsmProposal),
}

fn build(data: &Data, kind: &str, theta: f64) -> Result<Built> {
    match data {
        Data::Finite { sample, kernel } => {
            let k = ProposalKind::from_str(kind)?;
            Ok(Built::Fa(FaProposal::new(k, kernel.with_nominal_theta(theta)?, sample.size())?))
        }
        Data::Ism { huw, .. } => match IsmProposalKind::from_str(kind)? {
            IsmProposalKind::Huw => Ok(Built::Ism(IsmProposal::huw(theta, huw.clone().expect("source loaded for HUW"))?)),
            k => Ok(Built::Ism(IsmProposal::new(k, theta)?)),
        },
    }
}

fn run(data: &Data, p: &Built, s: &Schedule, pol: &ResamplingPolicy, o: &RunOptions) -> Result<RunResult> {
    match (data, p) {
        (Data::Finite { sample, .. }, Built::Fa(p)) => run_sis(p, sample, s, pol, o),
        (Data::Ism { sample, .. }, Built::Ism(p)) => run_sis(p, &IsmState::new(sample.clone()), s, pol, o),
        _ => unreachable!("proposal built for its data"),
    }
}

fn varcurve_of(data: &Data, p: &Built, replicates: u64, o: &RunOptions) -> Result<Vec<(u32, f64)>> {
    match (data, p) {
        (Data::Finite { sample, .. }, Built::Fa(p)) => variance_by_lineage_count(p, sample, replicates, o),
        (Data::Ism { sample, .. }, Built::Ism(p)) => {
            variance_by_lineage_count(p, &IsmState::new(sample.clone()), replicates, o)
        }
        _ => unreachable!("proposal built for its data"),
    }
}

fn resampling(cfg: &Config) -> Result<ResamplingPolicy> {
    match cfg.raw("resample").unwrap_or("off") {
        "off" => Ok(ResamplingPolicy::off()),
        "ess" => ResamplingPolicy::stopping_time(0.1),
        v => match v.strip_prefix("ess:") {
            Some(f) => ResamplingPolicy::stopping_time(
                f.parse().map_err(|_| Error::Config(format!("resample: cannot parse fraction '{f}'")))?,
            ),
            None => Err(Error::Config(format!("resample must be 'off', 'ess' or 'ess:<fraction>', got '{v}'"))),
        },
    }
}

/// Replicate counts `(gamma, Gamma)` used when the config gives none.
pub fn default_replicates(data: &Data) -> (u64, u64) {
    match data {
        Data::Finite { .. } => (100, 10_000),
        Data::Ism { sample, .. } if sample.size() <= 55 => (1_000, 100_000),
        Data::Ism { .. } => (2_000, 200_000),
    }
}

fn default_proposal(data: &Data) -> &'static str {
    if data.is_ism() {
        "huw"
    } else {
        "sd"
    }
}

/// Estimates over a grid of rates, one independent run per rate and schedule.
pub fn surface(cfg: &Config, out: &Path, workers: Option<usize>) -> Result<Table> {
    let data = load_data(cfg)?;
    let grid: Vec<f64> = cfg.list("theta_grid")?.ok_or_else(|| Error::Config("missing required key 'theta_grid'".into()))?;
    check_grid(&grid)?;
    let kinds: Vec<ScheduleKind> = cfg.list("schedules")?.unwrap_or_else(|| vec![ScheduleKind::S1]);
    if kinds.is_empty() {
        return Err(Error::Config("schedule list is empty".into()));
    }
    let (g0, b0) = default_replicates(&data);
    let (gamma, big_gamma, chi) = (cfg.get_or("gamma", g0)?, cfg.get_or("big_gamma", b0)?, cfg.get_or("chi", 0.1)?);
    let policy = resampling(cfg)?;
    let proposal = cfg.get_or("proposal", default_proposal(&data).to_string())?;
    let seed: u64 = cfg.get_or("seed", 1)?;

    let mut table = Table::new(&[
        "theta", "schedule", "proposal", "estimate", "log_estimate", "se", "relative_se", "replicates", "draws", "steps", "discarded",
    ]);
    let mut timing = Table::new(&["theta", "schedule", "wall_seconds"]);
    let mut series: Vec<Series> =
        kinds.iter().map(|k| Series { name: k.to_string(), points: Vec::new() }).collect();
    for (i, &theta) in grid.iter().enumerate() {
        let p = build(&data, &proposal, theta)?;
        for (k, &kind) in kinds.iter().enumerate() {
            let schedule = Schedule::new(kind, gamma, big_gamma, chi)?;
            let o = run_options(cfg, derive_seed(seed, ((i as u64) << 8) | k as u64), workers)?;
            let r = run(&data, &p, &schedule, &policy, &o)?;
            table.push(vec![
                num(theta),
                kind.to_string(),
                proposal.clone(),
                num(r.estimate),
                num(r.log_estimate),
                num(r.standard_error),
                num(r.relative_se),
                r.replicates.to_string(),
                r.draws.to_string(),
                r.steps.to_string(),
                r.discarded.to_string(),
            ]);
            timing.push(vec![num(theta), kind.to_string(), num(r.wall_time.as_secs_f64())]);
            series[k].points.push((theta, r.log_estimate));
        }
    }
    std::fs::create_dir_all(out)?;
    table.write(&out.join("surface.csv"))?;
    timing.write(&out.join("surface.timing.csv"))?;
    line_plot(&out.join("surface.svg"), "Log-likelihood estimates", "theta", "log estimate", &series)?;
    Ok(table)
}

/// Variance of normalised weights by remaining lineages.
pub fn varcurve(cfg: &Config, out: &Path, workers: Option<usize>) -> Result<Table> {
    let data = load_data(cfg)?;
    let proposal = cfg.get_or("proposal", default_proposal(&data).to_string())?;
    let theta: f64 = cfg.require("theta")?;
    let replicates: u64 = cfg.get_or("replicates", 1_000)?;
    let p = build(&data, &proposal, theta)?;
    let o = run_options(cfg, cfg.get_or("seed", 1)?, workers)?;
    let v = varcurve_of(&data, &p, replicates, &o)?;
    let mut table = Table::new(&["lineages", "variance", "log_variance", "flag"]);
    for &(level, var) in &v {
        let flag = if var > 0.0 { "" } else { "zero" };
        table.push(vec![level.to_string(), num(var), num(var.ln()), flag.into()]);
    }
    std::fs::create_dir_all(out)?;
    table.write(&out.join("varcurve.csv"))?;
    let pts = v.iter().map(|&(l, x)| (l as f64, x.ln())).collect();
    line_plot(&out.join("varcurve.svg"), "Weight variance by lineages", "remaining lineages", "log variance", &[Series {
        name: proposal,
        points: pts,
    }])?;
    Ok(table)
}

/// Splits `n` lineages in proportions `y0`, largest remainders first.
pub fn counts_for(y0: &[f64], n: u32) -> Vec<u32> {
    let raw: Vec<f64> = y0.iter().map(|y| y * n as f64).collect();
    let mut c: Vec<u32> = raw.iter().map(|x| x.floor() as u32).collect();
    let mut order: Vec<usize> = (0..y0.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let short = n - c.iter().sum::<u32>();
    for &k in order.iter().take(short as usize) {
        c[k] += 1;
    }
    c
}

/// Mean truncated cost against the limit `(1 - t)^(d - 1)`.
pub fn costconv(cfg: &Config, out: &Path, workers: Option<usize>) -> Result<Table> {
    let path = require_path(cfg, "matrix")?;
    let rows = with_file(&path, read_matrix(&path))?;
    let m = MutationModel::from_rows(cfg.require("theta")?, &rows)?;
    let y0: Vec<f64> = cfg.list("y0")?.ok_or_else(|| Error::Config("missing required key 'y0'".into()))?;
    if y0.len() != m.dim() || y0.iter().any(|&y| !(y > 0.0)) || (y0.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("y0 must be {} positive proportions summing to one", m.dim())));
    }
    let sizes: Vec<u32> = cfg.list("sizes")?.ok_or_else(|| Error::Config("missing required key 'sizes'".into()))?;
    let ts: Vec<f64> = cfg.list("t")?.unwrap_or_else(|| vec![0.5]);
    let kind = ProposalKind::from_str(&cfg.get_or("proposal", "sd".to_string())?)?;
    let replicates: u64 = cfg.get_or("replicates", 10_000)?;
    let seed: u64 = cfg.get_or("seed", 1)?;
    let workers = workers.unwrap_or(cfg.get_or("workers", 1)?);

    let mut table = Table::new(&["n", "t", "proposal", "mean_cost", "se", "predicted", "retained", "excluded"]);
    let mut series: Vec<Series> = ts.iter().map(|t| Series { name: format!("t = {t}"), points: Vec::new() }).collect();
    for (i, &n) in sizes.iter().enumerate() {
        let sample = TypedSample::from_counts(&counts_for(&y0, n))?;
        let p = FaProposal::new(kind, m.clone(), n)?;
        for (k, &t) in ts.iter().enumerate() {
            let o = RunOptions::new(derive_seed(seed, ((i as u64) << 8) | k as u64)).workers(workers);
            let r = truncated_run(&p, &sample, t, replicates, &o)?;
            let predicted = predicted_weight_limit(kind, LimitFactor::Cost, t, m.dim())?;
            let mean = r.mean();
            table.push(vec![
                n.to_string(),
                num(t),
                kind.to_string(),
                num(mean),
                num(r.standard_error()),
                num(predicted),
                r.costs.len().to_string(),
                r.excluded.to_string(),
            ]);
            series[k].points.push((n as f64, mean));
        }
    }
    std::fs::create_dir_all(out)?;
    table.write(&out.join("costconv.csv"))?;
    line_plot(&out.join("costconv.svg"), "Mean truncated cost", "n", "mean cost", &series)?;
    Ok(table)
}

/// Paths of the files written by [`makedata`].
pub fn makedata(cfg: &Config, out: &Path) -> Result<Vec<PathBuf>> {
    let size: u32 = cfg.require("size")?;
    let theta: f64 = cfg.require("theta")?;
    let seed: u64 = cfg.get_or("seed", 1)?;
    let name: String = cfg.get_or("name", "sample".to_string())?;
    let mut nested: Vec<u32> = cfg.list("nested")?.unwrap_or_default();
    nested.sort_unstable_by(|a, b| b.cmp(a));
    if nested.iter().any(|&k| k == 0 || k > size) {
        return Err(Error::Config(format!("nested sizes must lie in 1..={size}")));
    }
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    match cfg.get_or("kind", "finite".to_string())?.as_str() {
        "finite" => {
            let m = finite_kernel(cfg, theta)?;
            let full = forward_simulate(size, &m, seed)?;
            let note = format!("# forward simulation: size {size}, theta {theta}, seed {seed}\n");
            let mut current = full;
            let mut files = vec![(size, current.clone(), note.clone())];
            for (k, &n) in nested.iter().enumerate() {
                let mut rng = stream(seed, 1, k as u64);
                current = subsample(&current, n, &mut rng)?;
                files.push((n, current.clone(), format!("# subsample of the {} file, seed {seed} stream {k}\n", files.last().unwrap().0)));
            }
            for (n, s, note) in files {
                let p = out.join(format!("{name}_{n}.txt"));
                std::fs::write(&p, note + &format_finite_sample(theta, &s))?;
                written.push(p);
            }
        }
        "ism" => {
            if !nested.is_empty() {
                return Err(Error::Config("nested samples are only supported for finite-alleles data".into()));
            }
            let target: Option<usize> = cfg.get("segregating")?;
            let tries: u64 = cfg.get_or("max_tries", 100_000)?;
            let mut used = None;
            for k in 0..tries {
                let s = ism_forward_simulate(size, theta, seed + k)?;
                if target.is_none_or(|r| s.r() == r) {
                    used = Some((seed + k, s));
                    break;
                }
            }
            let (used_seed, s) = used.ok_or_else(|| {
                Error::Config(format!("no sample with {} segregating sites in {tries} seeds", target.unwrap_or(0)))
            })?;
            let p = out.join(format!("{name}_{size}.txt"));
            let note = format!("# forward simulation: size {size}, theta {theta}, seed {used_seed}\n");
            std::fs::write(&p, note + &format_ism(&s))?;
            written.push(p);
        }
        other => return Err(Error::Config(format!("kind must be 'finite' or 'ism', got '{other}'"))),
    }
    Ok(written)
}

/// Builds and saves a HUW table.
pub fn huwtable(theta: f64, s_max: u32, reading: &str, out: &Path) -> Result<HuwTable> {
    let reading = match reading {
        "carriers" => HuwReading::Carriers,
        "biallelic" => HuwReading::Biallelic,
        other => return Err(Error::Config(format!("reading must be 'carriers' or 'biallelic', got '{other}'"))),
    };
    let t = HuwTable::build(s_max, theta, reading)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    t.save(out)?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_split_exactly() {
        assert_eq!(counts_for(&[0.5, 0.5], 5), vec![3, 2]);
        assert_eq!(counts_for(&[0.2, 0.3, 0.5], 10), vec![2, 3, 5]);
        assert_eq!(counts_for(&[0.4, 0.6], 5000).iter().sum::<u32>(), 5000);
    }
}
