//! Replicate schedules and their proposal-draw accounting.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleKind {
    /// `Γ` replicates throughout.
    S1,
    /// `γ` replicates down to the switch point, then branched into `Γ`.
    S2,
    /// `γ` replicates throughout.
    S3,
    /// A constant replicate count matching the draw budget of `S2`.
    S4,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::S1 => "s1",
            ScheduleKind::S2 => "s2",
            ScheduleKind::S3 => "s3",
            ScheduleKind::S4 => "s4",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" | "1" => Ok(ScheduleKind::S1),
            "s2" | "2" => Ok(ScheduleKind::S2),
            "s3" | "3" => Ok(ScheduleKind::S3),
            "s4" | "4" => Ok(ScheduleKind::S4),
            _ => Err(Error::Config(format!("unknown schedule `{s}` (expected s1..s4)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub gamma: u64,
    pub big_gamma: u64,
    pub chi: f64,
}

impl Schedule {
    pub fn new(kind: ScheduleKind, gamma: u64, big_gamma: u64, chi: f64) -> Result<Self> {
        if gamma == 0 || gamma > big_gamma {
            return Err(Error::Config(format!(
                "replicate counts need 1 <= gamma <= big_gamma, got gamma={gamma}, big_gamma={big_gamma}"
            )));
        }
        if !(chi > 0.0 && chi < 1.0) {
            return Err(Error::Config(format!("chi must lie in (0, 1), got {chi}")));
        }
        Ok(Self {
            kind,
            gamma,
            big_gamma,
            chi,
        })
    }

    /// A fixed replicate count, as schedule `S1` with `Γ = replicates`.
    pub fn fixed(replicates: u64) -> Self {
        Self {
            kind: ScheduleKind::S1,
            gamma: 1,
            big_gamma: replicates.max(1),
            chi: 0.1,
        }
    }

    pub fn switch_point(&self, n: u32, theta: f64) -> u32 {
        switch_point(n, theta, self.chi)
    }

    /// Replicates used at the start of the run.
    pub fn initial_replicates(&self, n: u32, theta: f64) -> u64 {
        match self.kind {
            ScheduleKind::S1 => self.big_gamma,
            ScheduleKind::S2 | ScheduleKind::S3 => self.gamma,
            ScheduleKind::S4 => s4_replicates(self, n, theta),
        }
    }
}

/// `ζ = ⌊n^(χ^(1/(θ ln n)))⌋`, clamped to `[2, n-1]`.
pub fn switch_point(n: u32, theta: f64, chi: f64) -> u32 {
    let nf = n as f64;
    let z = nf.powf(chi.powf(1.0 / (theta * nf.ln()))).floor();
    let hi = n.saturating_sub(1).max(2) as f64;
    z.clamp(2.0, hi) as u32
}

fn s4_replicates(s: &Schedule, n: u32, theta: f64) -> u64 {
    let zeta = switch_point(n, theta, s.chi) as u64;
    let n = n as u64;
    (s.big_gamma * zeta + s.gamma * (n - zeta)) / (n - 1)
}

/// Coalescence-step proposal draws spent by a schedule on `n` lineages.
pub fn schedule_draw_count(s: &Schedule, n: u32, theta: f64) -> u64 {
    let steps = n as u64 - 1;
    match s.kind {
        ScheduleKind::S1 => s.big_gamma * steps,
        ScheduleKind::S3 => s.gamma * steps,
        ScheduleKind::S2 => {
            let zeta = switch_point(n, theta, s.chi) as u64;
            s.gamma * (n as u64 - zeta) + s.big_gamma * (zeta - 1)
        }
        ScheduleKind::S4 => s4_replicates(s, n, theta) * steps,
    }
}
