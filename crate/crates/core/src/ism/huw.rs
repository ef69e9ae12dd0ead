//! Precomputed ratios for the HUW infinite-sites proposal.
//!
//! For `s` lineages and a column carried by `d` of them the proposal weights
//! carriers by `A(s, d) = num / den` with
//!
//! ```text
//! num = sum_{k=2}^{s-d+1} (d-1) / ((s-k)(k-1+theta)) * C(s-d-1, k-2) / C(s-1, k-1)
//! den = sum_{k=2}^{s-d+1}     1 / (k-1+theta)        * C(s-d-1, k-2) / C(s-1, k-1)
//! ```
//!
//! Non-carriers are weighted by `1 - A`, tabulated as its own non-negative
//! sum `den - num` so that it never comes out of a cancellation.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HUWT";
const VERSION: u32 = 2;

/// Which factor multiplies the numerator terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HuwReading {
    /// `d - 1`, with `d` the number of carriers.
    #[default]
    Carriers,
    /// Constant `1`, reading the factor as an allele count of two.
    Biallelic,
}

impl HuwReading {
    fn code(self) -> u32 {
        match self {
            HuwReading::Carriers => 0,
            HuwReading::Biallelic => 1,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(HuwReading::Carriers),
            1 => Some(HuwReading::Biallelic),
            _ => None,
        }
    }

    fn factor(self, d: u32) -> f64 {
        match self {
            HuwReading::Carriers => d as f64 - 1.0,
            HuwReading::Biallelic => 1.0,
        }
    }
}

fn check_args(s: u32, d: u32, theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Domain(format!("theta must be positive, got {theta}")));
    }
    if s < 2 || d < 1 || d >= s {
        return Err(Error::Domain(format!("need 1 <= d < s, got s={s}, d={d}")));
    }
    Ok(())
}

/// `(num, den, den - num)` by the binomial-ratio recurrence, and the term
/// count.
fn sums(s: u32, d: u32, theta: f64, reading: HuwReading) -> ([f64; 3], u64) {
    let m = (s - d - 1) as f64;
    let sf = s as f64;
    let f = reading.factor(d);
    let mut t = 1.0 / (sf - 1.0);
    let (mut num, mut den, mut rest) = (0.0, 0.0, 0.0);
    let last = s - d + 1;
    for k in 2..=last {
        let kf = k as f64;
        let w = t / (kf - 1.0 + theta);
        den += w;
        if k < s {
            num += f * w / (sf - kf);
            rest += w * (sf - kf - f) / (sf - kf);
        } else {
            rest += w;
        }
        if k < last {
            t *= (m - kf + 2.0) / (kf - 1.0) * kf / (sf - kf);
        }
    }
    ([num, den, rest], (last - 1) as u64)
}

/// `A(s, d)` and `1 - A(s, d)`, each a ratio of non-negative sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuwRatio {
    pub carrier: f64,
    pub other: f64,
}

impl HuwRatio {
    fn from_sums(x: [f64; 3]) -> Self {
        Self { carrier: x[0] / x[1], other: x[2] / x[1] }
    }
}

/// `A(s, d)` computed directly; costs `s - d` terms.
pub fn huw_ratio(s: u32, d: u32, theta: f64, reading: HuwReading) -> Result<HuwRatio> {
    check_args(s, d, theta)?;
    Ok(HuwRatio::from_sums(sums(s, d, theta, reading).0))
}

/// [`huw_ratio`] and the number of summation terms evaluated.
pub fn huw_ratio_counted(s: u32, d: u32, theta: f64, reading: HuwReading) -> (HuwRatio, u64) {
    let (x, terms) = sums(s, d, theta, reading);
    (HuwRatio::from_sums(x), terms)
}

/// Proposal weight of a row with multiplicity `n_j` for one column.
pub fn huw_u(n_j: u32, carries: bool, s: u32, d: u32, a: HuwRatio) -> f64 {
    if carries {
        n_j as f64 / d as f64 * a.carrier
    } else {
        n_j as f64 / (s - d) as f64 * a.other
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HuwTable {
    theta: f64,
    s_max: u32,
    reading: HuwReading,
    /// `(num, den, den - num)` per `(s, d)`.
    sums: Vec<[f64; 3]>,
}

fn index(s: u32, d: u32) -> usize {
    let s = s as usize;
    (s - 2) * (s - 1) / 2 + d as usize - 1
}

impl HuwTable {
    /// Tabulates `(num, den)` for `2 <= s <= s_max`, `1 <= d < s`.
    pub fn build(s_max: u32, theta: f64, reading: HuwReading) -> Result<Self> {
        check_args(s_max.max(2), 1, theta)?;
        if s_max < 2 {
            return Err(Error::Domain("table needs s_max >= 2".into()));
        }
        let len = index(s_max + 1, 1);
        let mut entries = Vec::with_capacity(len);
        for s in 2..=s_max {
            for d in 1..s {
                entries.push(sums(s, d, theta, reading).0);
            }
        }
        Ok(Self { theta, s_max, reading, sums: entries })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn s_max(&self) -> u32 {
        self.s_max
    }

    pub fn reading(&self) -> HuwReading {
        self.reading
    }

    /// `(num, den)` at `(s, d)`.
    pub fn entry(&self, s: u32, d: u32) -> Result<(f64, f64)> {
        if s > self.s_max {
            return Err(Error::TableMiss { size: s, s_max: self.s_max });
        }
        check_args(s, d, self.theta)?;
        let x = self.sums[index(s, d)];
        Ok((x[0], x[1]))
    }

    pub fn ratio(&self, s: u32, d: u32) -> Result<HuwRatio> {
        self.entry(s, d)?;
        Ok(self.ratio_unchecked(s, d))
    }

    /// Unchecked lookup for callers that validated `s <= s_max`, `d < s`.
    pub(crate) fn ratio_unchecked(&self, s: u32, d: u32) -> HuwRatio {
        HuwRatio::from_sums(self.sums[index(s, d)])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 24 * self.sums.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.reading.code().to_le_bytes());
        out.extend_from_slice(&self.theta.to_le_bytes());
        out.extend_from_slice(&self.s_max.to_le_bytes());
        for v in self.sums.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Domain(format!("malformed HUW table: {m}"));
        if bytes.len() < 24 || &bytes[..4] != MAGIC {
            return Err(bad("missing header"));
        }
        let u32_at = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
        let f64_at = |k: usize| f64::from_le_bytes(bytes[k..k + 8].try_into().unwrap());
        if u32_at(4) != VERSION {
            return Err(bad(&format!("unsupported version {}", u32_at(4))));
        }
        let reading = HuwReading::from_code(u32_at(8)).ok_or_else(|| bad("unknown reading"))?;
        let theta = f64_at(12);
        let s_max = u32_at(20);
        if s_max < 2 || !(theta > 0.0 && theta.is_finite()) {
            return Err(bad("bad parameters"));
        }
        let len = index(s_max + 1, 1);
        if bytes.len() != 24 + 24 * len {
            return Err(bad(&format!("expected {} bytes, found {}", 24 + 24 * len, bytes.len())));
        }
        let sums = (0..len).map(|k| [f64_at(24 + 24 * k), f64_at(32 + 24 * k), f64_at(40 + 24 * k)]).collect();
        Ok(Self { theta, s_max, reading, sums })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln_choose(n: u32, k: u32) -> f64 {
        (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
    }

    fn direct(s: u32, d: u32, theta: f64) -> (f64, f64) {
        let (mut num, mut den) = (0.0, 0.0);
        for k in 2..=s - d + 1 {
            let t = (ln_choose(s - d - 1, k - 2) - ln_choose(s - 1, k - 1)).exp();
            den += t / (k as f64 - 1.0 + theta);
            if k < s {
                num += (d as f64 - 1.0) * t / ((s - k) as f64 * (k as f64 - 1.0 + theta));
            }
        }
        (num, den)
    }

    #[test]
    fn recurrence_matches_direct_sums() {
        let t = HuwTable::build(120, 3.93, HuwReading::Carriers).unwrap();
        for s in 2..=120 {
            for d in 1..s {
                let (a, b) = t.entry(s, d).unwrap();
                let (x, y) = direct(s, d, 3.93);
                assert!((a - x).abs() <= 1e-12 * x.abs().max(1e-300) + 1e-300, "num {s} {d}");
                assert!(((b - y) / y).abs() < 1e-12, "den {s} {d}");
                let r = t.ratio(s, d).unwrap();
                assert!((0.0..=1.0 + 1e-12).contains(&r.carrier));
                assert!(r.other >= 0.0 && (r.carrier + r.other - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edge_values() {
        let r = huw_ratio(10, 1, 2.0, HuwReading::Carriers).unwrap();
        assert_eq!(r.carrier, 0.0);
        assert!((r.other - 1.0).abs() < 1e-15);
        let r = huw_ratio(10, 9, 2.0, HuwReading::Carriers).unwrap();
        assert!((r.carrier - 1.0).abs() < 1e-15);
        assert_eq!(r.other, 0.0);
        assert!(huw_ratio(10, 10, 2.0, HuwReading::Carriers).is_err());
        let t = HuwTable::build(5, 1.0, HuwReading::Carriers).unwrap();
        assert!(matches!(t.ratio(6, 2), Err(Error::TableMiss { size: 6, s_max: 5 })));
    }

    #[test]
    fn bytes_round_trip() {
        let t = HuwTable::build(30, 4.9, HuwReading::Biallelic).unwrap();
        let back = HuwTable::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(t, back);
        let mut bytes = t.to_bytes();
        bytes.pop();
        assert!(HuwTable::from_bytes(&bytes).is_err());
    }
}
