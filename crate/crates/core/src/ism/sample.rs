//! Infinite-sites samples: distinct haplotypes as bitset rows over segregating
//! columns, with multiplicities.

use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const DEAD: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct IsmSample {
    words: usize,
    columns: usize,
    bits: Vec<u64>,
    counts: Vec<u32>,
    locations: Vec<f64>,
    d: Vec<u32>,
    live: Vec<usize>,
    live_pos: Vec<usize>,
    size: u32,
}

/// Row bookkeeping after a mutation removal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Removal {
    /// Row that absorbed the edited haplotype, as indexed after the call.
    pub merged_into: Option<usize>,
    /// Former index of the row moved into the vacated slot.
    pub moved_from: Option<usize>,
}

/// Rows carrying at least one singleton column, with those columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingletonIndex {
    pub rows: Vec<(usize, Vec<usize>)>,
}

impl SingletonIndex {
    pub fn contains(&self, row: usize, column: usize) -> bool {
        self.rows.iter().any(|(j, c)| *j == row && c.contains(&column))
    }
}

fn words_for(columns: usize) -> usize {
    columns.div_ceil(64).max(1)
}

impl IsmSample {
    /// Builds a sample from 0/1 rows, multiplicities and column locations.
    ///
    /// Rows must be distinct, every column must be carried by at least one
    /// and not all lineages, and locations must lie in `[0, 1]`.
    pub fn new(rows: &[Vec<u8>], counts: &[u32], locations: &[f64]) -> Result<Self> {
        let r = locations.len();
        if rows.is_empty() || rows.len() != counts.len() {
            return Err(Error::Domain(format!("{} rows but {} multiplicities", rows.len(), counts.len())));
        }
        let words = words_for(r);
        let mut bits = vec![0u64; rows.len() * words];
        for (j, row) in rows.iter().enumerate() {
            if row.len() != r {
                return Err(Error::Domain(format!("row {j} has {} columns, expected {r}", row.len())));
            }
            for (w, &b) in row.iter().enumerate() {
                match b {
                    0 => {}
                    1 => bits[j * words + w / 64] |= 1 << (w % 64),
                    _ => return Err(Error::Domain(format!("row {j} column {w}: entry {b} is not 0 or 1"))),
                }
            }
        }
        Self::from_bits(words, r, bits, counts.to_vec(), locations.to_vec())
    }

    fn from_bits(words: usize, columns: usize, bits: Vec<u64>, counts: Vec<u32>, locations: Vec<f64>) -> Result<Self> {
        let h = counts.len();
        if let Some(j) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Domain(format!("row {j} has multiplicity zero")));
        }
        if let Some(w) = locations.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Domain(format!("location {} of column {w} lies outside [0, 1]", locations[w])));
        }
        let size: u32 = counts.iter().sum();
        let mut d = vec![0u32; columns];
        for j in 0..h {
            for (w, dw) in d.iter_mut().enumerate() {
                if bits[j * words + w / 64] >> (w % 64) & 1 == 1 {
                    *dw += counts[j];
                }
            }
        }
        for (w, &dw) in d.iter().enumerate() {
            if dw == 0 {
                return Err(Error::Domain(format!("column {w} is carried by no lineage")));
            }
            if dw == size {
                return Err(Error::Domain(format!("column {w} is carried by every lineage")));
            }
        }
        for a in 0..h {
            for b in a + 1..h {
                if bits[a * words..(a + 1) * words] == bits[b * words..(b + 1) * words] {
                    return Err(Error::Domain(format!("rows {a} and {b} are identical")));
                }
            }
        }
        Ok(Self {
            words,
            columns,
            bits,
            counts,
            locations,
            d,
            live: (0..columns).collect(),
            live_pos: (0..columns).collect(),
            size,
        })
    }

    /// Number of distinct haplotypes.
    pub fn h(&self) -> usize {
        self.counts.len()
    }

    /// Number of segregating columns still present.
    pub fn r(&self) -> usize {
        self.live.len()
    }

    /// Number of columns including removed ones; column indices are stable.
    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn count(&self, j: usize) -> u32 {
        self.counts[j]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn has(&self, j: usize, w: usize) -> bool {
        self.bits[j * self.words + w / 64] >> (w % 64) & 1 == 1
    }

    /// Number of lineages carrying column `w`; zero once removed.
    pub fn carriers(&self, w: usize) -> u32 {
        self.d[w]
    }

    pub fn location(&self, w: usize) -> f64 {
        self.locations[w]
    }

    pub fn live_columns(&self) -> &[usize] {
        &self.live
    }

    /// Columns set in row `j`.
    pub fn row_columns(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        let row = &self.bits[j * self.words..(j + 1) * self.words];
        row.iter().enumerate().flat_map(|(k, &word)| {
            let mut x = word;
            std::iter::from_fn(move || {
                if x == 0 {
                    return None;
                }
                let t = x.trailing_zeros() as usize;
                x &= x - 1;
                Some(k * 64 + t)
            })
        })
    }

    /// Singleton columns of row `j`; empty unless the row has multiplicity one.
    pub fn singletons(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        let single = self.counts[j] == 1;
        self.row_columns(j).filter(move |&w| single && self.d[w] == 1)
    }

    pub fn singleton_scan(&self) -> SingletonIndex {
        let rows = (0..self.h())
            .filter_map(|j| {
                let cols: Vec<usize> = self.singletons(j).collect();
                (!cols.is_empty()).then_some((j, cols))
            })
            .collect();
        SingletonIndex { rows }
    }

    /// Removes one lineage of row `j` by coalescence.
    pub fn coalesce(&mut self, j: usize) -> Result<()> {
        if j >= self.h() || self.counts[j] < 2 {
            return Err(Error::Domain(format!("row {j} cannot coalesce in {self}")));
        }
        self.counts[j] -= 1;
        self.size -= 1;
        for w in self.row_columns(j).collect::<Vec<_>>() {
            self.d[w] -= 1;
        }
        Ok(())
    }

    /// Removes singleton column `w` from row `j`, merging the row into an
    /// identical one if that appears.
    pub fn remove_mutation(&mut self, j: usize, w: usize) -> Result<Removal> {
        if j >= self.h() || w >= self.columns || self.counts[j] != 1 || self.d[w] != 1 || !self.has(j, w) {
            return Err(Error::Domain(format!("column {w} is not a singleton of row {j} in {self}")));
        }
        self.bits[j * self.words + w / 64] &= !(1 << (w % 64));
        self.d[w] = 0;
        let p = self.live_pos[w];
        self.live.swap_remove(p);
        if p < self.live.len() {
            self.live_pos[self.live[p]] = p;
        }
        self.live_pos[w] = DEAD;
        let row = j * self.words..(j + 1) * self.words;
        let twin = (0..self.h()).find(|&k| k != j && self.bits[k * self.words..(k + 1) * self.words] == self.bits[row.clone()]);
        let Some(k) = twin else {
            return Ok(Removal { merged_into: None, moved_from: None });
        };
        self.counts[k] += 1;
        let last = self.h() - 1;
        self.counts.swap_remove(j);
        if j != last {
            self.bits.copy_within(last * self.words..(last + 1) * self.words, j * self.words);
        }
        self.bits.truncate(last * self.words);
        Ok(Removal {
            merged_into: Some(if k == last { j } else { k }),
            moved_from: (j != last).then_some(last),
        })
    }

    /// Row that row `j` would equal once column `w` is cleared.
    pub fn twin_without(&self, j: usize, w: usize) -> Option<usize> {
        let words = self.words;
        let (k0, bit) = (w / 64, 1u64 << (w % 64));
        let row = &self.bits[j * words..(j + 1) * words];
        (0..self.h()).find(|&k| {
            k != j
                && self.bits[k * words..(k + 1) * words]
                    .iter()
                    .zip(row)
                    .enumerate()
                    .all(|(i, (&a, &b))| a == if i == k0 { b & !bit } else { b })
        })
    }

    /// Canonical key: sorted (live columns, multiplicity) rows.
    pub fn canonical_key(&self) -> Vec<(Vec<usize>, u32)> {
        let mut rows: Vec<(Vec<usize>, u32)> = (0..self.h()).map(|j| (self.row_columns(j).collect(), self.counts[j])).collect();
        rows.sort();
        rows
    }

    /// Dense 0/1 rows over live columns, in location order.
    pub fn dense_rows(&self) -> (Vec<Vec<u8>>, Vec<f64>) {
        let mut cols = self.live.clone();
        cols.sort_by(|&a, &b| self.locations[a].total_cmp(&self.locations[b]).then(a.cmp(&b)));
        let rows = (0..self.h()).map(|j| cols.iter().map(|&w| self.has(j, w) as u8).collect()).collect();
        (rows, cols.iter().map(|&w| self.locations[w]).collect())
    }

    /// Copy with removed columns dropped and indices renumbered.
    pub fn compacted(&self) -> IsmSample {
        let (rows, locs) = self.dense_rows();
        IsmSample::new(&rows, &self.counts, &locs).expect("live state is valid")
    }
}

impl fmt::Display for IsmSample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for j in 0..self.h() {
            if j > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}x{{", self.counts[j])?;
            for (k, w) in self.row_columns(j).enumerate() {
                if k > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{w}")?;
            }
            write!(f, "}}")?;
        }
        write!(f, "]")
    }
}

/// Watterson's estimate `r / H_{n-1}`.
pub fn watterson(segregating: usize, size: u32) -> Result<f64> {
    if size < 2 {
        return Err(Error::Domain("Watterson's estimate needs at least two lineages".into()));
    }
    let h: f64 = (1..size).map(|k| 1.0 / k as f64).sum();
    Ok(segregating as f64 / h)
}

/// A forward event of the infinite-sites chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IsmForwardMove {
    /// A lineage of row `i` branches.
    Branch(usize),
    /// A lineage of row `i` gains a new site.
    Mutate(usize),
}

/// Forward jump probabilities from a sample of `N` lineages.
pub fn ism_forward_transitions(s: &IsmSample, theta: f64) -> Result<Vec<(IsmForwardMove, f64)>> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Domain(format!("theta must be positive, got {theta}")));
    }
    let n = s.size() as f64;
    let branch = (n - 1.0) / (n - 1.0 + theta);
    let mut out = Vec::with_capacity(2 * s.h());
    for j in 0..s.h() {
        let share = s.count(j) as f64 / n;
        out.push((IsmForwardMove::Branch(j), branch * share));
        out.push((IsmForwardMove::Mutate(j), (1.0 - branch) * share));
    }
    Ok(out)
}

/// Growable forward state; rows are column lists.
struct Growing {
    rows: Vec<Vec<usize>>,
    counts: Vec<u32>,
    locations: Vec<f64>,
}

/// Simulates a sample of `size` lineages under the infinite-sites model.
///
/// The chain starts from one unmutated lineage, branches immediately and
/// stops just before the branch that would exceed `size`. New sites get
/// uniform locations.
pub fn ism_forward_simulate(size: u32, theta: f64, seed: u64) -> Result<IsmSample> {
    ism_forward_simulate_with(size, theta, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn ism_forward_simulate_with(size: u32, theta: f64, rng: &mut ChaCha8Rng) -> Result<IsmSample> {
    if size < 1 {
        return Err(Error::Domain("sample size must be positive".into()));
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Domain(format!("theta must be positive, got {theta}")));
    }
    let mut g = Growing { rows: vec![vec![]], counts: vec![1], locations: vec![] };
    if size == 1 {
        return IsmSample::new(&[vec![]], &[1], &[]);
    }
    g.counts[0] = 2;
    let mut n = 2u32;
    loop {
        let nf = n as f64;
        let branch = rng.random::<f64>() < (nf - 1.0) / (nf - 1.0 + theta);
        if branch && n == size {
            break;
        }
        let mut u = rng.random_range(0..n);
        let mut j = 0;
        while u >= g.counts[j] {
            u -= g.counts[j];
            j += 1;
        }
        if branch {
            g.counts[j] += 1;
            n += 1;
        } else {
            let w = g.locations.len();
            g.locations.push(rng.random::<f64>());
            let mut row = g.rows[j].clone();
            row.push(w);
            if g.counts[j] == 1 {
                g.rows[j] = row;
            } else {
                g.counts[j] -= 1;
                g.rows.push(row);
                g.counts.push(1);
            }
        }
    }
    let r = g.locations.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| g.locations[a].total_cmp(&g.locations[b]));
    let mut rank = vec![0; r];
    for (k, &w) in order.iter().enumerate() {
        rank[w] = k;
    }
    let rows: Vec<Vec<u8>> = g
        .rows
        .iter()
        .map(|cols| {
            let mut row = vec![0u8; r];
            for &w in cols {
                row[rank[w]] = 1;
            }
            row
        })
        .collect();
    let locs: Vec<f64> = order.iter().map(|&w| g.locations[w]).collect();
    IsmSample::new(&rows, &g.counts, &locs)
}
