//! Plain-text data files.
//!
//! All formats are whitespace separated, `#` starts a comment and blank lines
//! are ignored.
//!
//! Finite-alleles sample:
//!
//! ```text
//! d theta
//! i n_i        # one line per observed type, 0 <= i < d
//! ```
//!
//! Mutation matrix: one row of `P` per line.
//!
//! Infinite-sites sample:
//!
//! ```text
//! h r
//! n_1 bits_1   # h lines, each a multiplicity and r characters of 0/1
//! ...
//! x_1 ... x_r  # r locations in [0, 1], any line breaks
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ism::IsmSample;
use crate::model::TypedSample;

#[derive(Debug, Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

impl Token<'_> {
    fn parse<T: FromStr>(&self, what: &str) -> Result<T> {
        self.text
            .parse()
            .map_err(|_| Error::parse(self.line, self.column, format!("expected {what}, found '{}'", self.text)))
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::parse(self.line, self.column, message)
    }
}

/// Non-empty lines as token lists, comments stripped.
fn lines(text: &str) -> Vec<Vec<Token<'_>>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("");
        let mut toks = Vec::new();
        let mut start = None;
        for (pos, ch) in body.char_indices().chain(std::iter::once((body.len(), ' '))) {
            match (ch.is_whitespace(), start) {
                (false, None) => start = Some(pos),
                (true, Some(s)) => {
                    toks.push(Token { text: &body[s..pos], line: k + 1, column: body[..s].chars().count() + 1 });
                    start = None;
                }
                _ => {}
            }
        }
        if !toks.is_empty() {
            out.push(toks);
        }
    }
    out
}

fn end_of(text: &str) -> (usize, usize) {
    (text.lines().count().max(1), 1)
}

fn expect_width(line: &[Token<'_>], n: usize, what: &str) -> Result<()> {
    if line.len() != n {
        let t = line.get(n).unwrap_or(&line[0]);
        return Err(t.error(format!("expected {n} fields ({what}), found {}", line.len())));
    }
    Ok(())
}

/// A finite-alleles sample together with its declared rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteData {
    pub theta: f64,
    pub sample: TypedSample,
}

pub fn parse_finite_sample(text: &str) -> Result<FiniteData> {
    let ls = lines(text);
    let Some(head) = ls.first() else {
        let (l, c) = end_of(text);
        return Err(Error::parse(l, c, "empty file; expected header 'd theta'"));
    };
    expect_width(head, 2, "d theta")?;
    let d: usize = head[0].parse("type count d")?;
    let theta: f64 = head[1].parse("theta")?;
    if d == 0 {
        return Err(head[0].error("d must be positive"));
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(head[1].error("theta must be positive"));
    }
    let mut entries = Vec::with_capacity(ls.len() - 1);
    let mut seen = std::collections::HashSet::new();
    for line in &ls[1..] {
        expect_width(line, 2, "type count")?;
        let i: usize = line[0].parse("type index")?;
        if i >= d {
            return Err(line[0].error(format!("type {i} out of range for d = {d}")));
        }
        if !seen.insert(i) {
            return Err(line[0].error(format!("type {i} listed twice")));
        }
        entries.push((i, line[1].parse::<u32>("count")?));
    }
    let sample = TypedSample::from_entries(d, entries).map_err(|e| {
        let (l, c) = end_of(text);
        Error::parse(l, c, e.to_string())
    })?;
    Ok(FiniteData { theta, sample })
}

pub fn format_finite_sample(theta: f64, sample: &TypedSample) -> String {
    let mut out = format!("{} {theta}\n", sample.dim());
    for &(i, c) in sample.entries() {
        writeln!(out, "{i} {c}").unwrap();
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<Vec<Vec<f64>>> {
    let ls = lines(text);
    if ls.is_empty() {
        let (l, c) = end_of(text);
        return Err(Error::parse(l, c, "empty matrix file"));
    }
    let d = ls.len();
    ls.iter()
        .map(|line| {
            expect_width(line, d, "one entry per type")?;
            line.iter().map(|t| t.parse::<f64>("matrix entry")).collect()
        })
        .collect()
}

pub fn format_matrix(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(" ")).unwrap();
    }
    out
}

pub fn parse_ism(text: &str) -> Result<IsmSample> {
    let ls = lines(text);
    let Some(head) = ls.first() else {
        let (l, c) = end_of(text);
        return Err(Error::parse(l, c, "empty file; expected header 'h r'"));
    };
    expect_width(head, 2, "h r")?;
    let h: usize = head[0].parse("haplotype count h")?;
    let r: usize = head[1].parse("site count r")?;
    if h == 0 {
        return Err(head[0].error("h must be positive"));
    }
    if ls.len() < h + 1 {
        let (l, c) = end_of(text);
        return Err(Error::parse(l, c, format!("expected {h} haplotype lines, found {}", ls.len() - 1)));
    }
    let mut rows = Vec::with_capacity(h);
    let mut counts = Vec::with_capacity(h);
    for line in &ls[1..=h] {
        let bits: Vec<u8> = match (line.len(), r) {
            (1, 0) => Vec::new(),
            (2, _) => {
                let t = line[1];
                if t.text.chars().count() != r {
                    return Err(t.error(format!("expected {r} sites, found {}", t.text.chars().count())));
                }
                let mut v = Vec::with_capacity(r);
                for (k, ch) in t.text.chars().enumerate() {
                    match ch {
                        '0' => v.push(0),
                        '1' => v.push(1),
                        _ => return Err(Error::parse(t.line, t.column + k, format!("expected 0 or 1, found '{ch}'"))),
                    }
                }
                v
            }
            _ => return Err(line[0].error("expected a multiplicity and a 0/1 string")),
        };
        let n: u32 = line[0].parse("multiplicity")?;
        if n == 0 {
            return Err(line[0].error("multiplicity must be positive"));
        }
        counts.push(n);
        rows.push(bits);
    }
    let locs: Vec<Token<'_>> = ls[h + 1..].iter().flatten().copied().collect();
    if locs.len() != r {
        let (l, c) = locs.get(r).map_or_else(|| end_of(text), |t| (t.line, t.column));
        return Err(Error::parse(l, c, format!("expected {r} locations, found {}", locs.len())));
    }
    let mut locations = Vec::with_capacity(r);
    for t in &locs {
        let x: f64 = t.parse("location")?;
        if !(0.0..=1.0).contains(&x) {
            return Err(t.error(format!("location {x} outside [0, 1]")));
        }
        locations.push(x);
    }
    IsmSample::new(&rows, &counts, &locations).map_err(|e| {
        let (l, c) = (ls[0][0].line, ls[0][0].column);
        Error::parse(l, c, e.to_string())
    })
}

pub fn format_ism(s: &IsmSample) -> String {
    let (rows, locs) = s.dense_rows();
    let mut out = format!("{} {}\n", s.h(), locs.len());
    for (row, c) in rows.iter().zip(s.counts()) {
        let bits: String = row.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect();
        if bits.is_empty() {
            writeln!(out, "{c}").unwrap();
        } else {
            writeln!(out, "{c} {bits}").unwrap();
        }
    }
    let xs: Vec<String> = locs.iter().map(|x| x.to_string()).collect();
    if !xs.is_empty() {
        writeln!(out, "{}", xs.join(" ")).unwrap();
    }
    out
}

pub fn read_finite_sample(path: &Path) -> Result<FiniteData> {
    parse_finite_sample(&std::fs::read_to_string(path)?)
}

pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    parse_matrix(&std::fs::read_to_string(path)?)
}

pub fn read_ism(path: &Path) -> Result<IsmSample> {
    parse_ism(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(e: Error) -> (usize, usize) {
        match e {
            Error::Parse { line, column, .. } => (line, column),
            other => panic!("not a parse error: {other}"),
        }
    }

    #[test]
    fn finite_round_trip_and_errors() {
        let s = TypedSample::from_counts(&[3, 0, 2]).unwrap();
        let text = format_finite_sample(0.5, &s);
        assert_eq!(parse_finite_sample(&text).unwrap(), FiniteData { theta: 0.5, sample: s });
        assert_eq!(at(parse_finite_sample("3 0.5\n# c\n1 2\n 7 1\n").unwrap_err()), (4, 2));
        assert_eq!(at(parse_finite_sample("3 0.5\n1 x\n").unwrap_err()), (2, 3));
        assert_eq!(at(parse_finite_sample("3 0.5\n1 1\n1 2\n").unwrap_err()), (3, 1));
        assert!(parse_finite_sample("").is_err());
    }

    #[test]
    fn matrix_round_trip() {
        let m = vec![vec![0.25, 0.75], vec![1.0, 0.0]];
        assert_eq!(parse_matrix(&format_matrix(&m)).unwrap(), m);
        assert_eq!(at(parse_matrix("0.5 0.5\n1\n").unwrap_err()), (2, 1));
    }

    #[test]
    fn ism_round_trip_and_errors() {
        let text = "3 2\n1 10\n1 11\n2 00\n0.2 0.7\n";
        let s = parse_ism(text).unwrap();
        assert_eq!(format_ism(&s), text);
        assert_eq!(at(parse_ism("2 2\n1 10\n1 0a\n0.1 0.2\n").unwrap_err()), (3, 4));
        assert_eq!(at(parse_ism("2 2\n1 10\n1 011\n0.1 0.2\n").unwrap_err()), (3, 3));
        assert_eq!(at(parse_ism("2 1\n1 1\n1 0\n1.5\n").unwrap_err()), (4, 1));
        assert!(parse_ism("2 1\n1 1\n1 1\n0.5\n").is_err());
        let single = parse_ism("1 0\n1\n").unwrap();
        assert_eq!(single.size(), 1);
        assert_eq!(format_ism(&single), "1 0\n1\n");
    }
}
