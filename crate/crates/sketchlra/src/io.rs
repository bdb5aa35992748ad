//! Text formats: `.tns` tensors, dense matrices, update streams and run
//! metadata.
//!
//! Indices in files are 1-based. Lines starting with `#` and blank lines are
//! ignored. Floats are written in Rust's shortest round-trip form.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::streaming::Update;
use crate::tensor::{FactorTriple, Tensor3};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

fn parse_err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse { line, msg: msg.into() })
}

/// Non-comment lines with their 1-based line numbers.
fn content_lines<R: BufRead>(r: R) -> impl Iterator<Item = Result<(usize, String)>> {
    r.lines().enumerate().filter_map(|(n, l)| match l {
        Err(e) => Some(Err(Error::Io(e))),
        Ok(s) => {
            let t = s.trim();
            if t.is_empty() || t.starts_with('#') {
                None
            } else {
                Some(Ok((n + 1, t.to_string())))
            }
        }
    })
}

fn field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    match tok {
        None => parse_err(line, format!("missing {what}")),
        Some(t) => t.parse().or_else(|_| parse_err(line, format!("bad {what} '{t}'"))),
    }
}

fn index(tok: Option<&str>, line: usize, what: &str, dim: usize) -> Result<usize> {
    let v: usize = field(tok, line, what)?;
    if v == 0 || v > dim {
        return parse_err(line, format!("{what} {v} outside 1..={dim}"));
    }
    Ok(v - 1)
}

fn finite(tok: Option<&str>, line: usize, what: &str) -> Result<f64> {
    let v: f64 = field(tok, line, what)?;
    if !v.is_finite() {
        return parse_err(line, format!("{what} is not finite"));
    }
    Ok(v)
}

fn no_trailing<'a>(mut toks: impl Iterator<Item = &'a str>, line: usize) -> Result<()> {
    match toks.next() {
        Some(t) => parse_err(line, format!("unexpected token '{t}'")),
        None => Ok(()),
    }
}

/// Parse a `.tns` tensor: header `n1 n2 n3 nnz`, then `i j l value` lines.
pub fn read_tns<R: Read>(r: R) -> Result<Tensor3> {
    let mut lines = content_lines(BufReader::new(r));
    let Some(first) = lines.next() else { return parse_err(1, "missing header") };
    let (hl, header) = first?;
    let mut toks = header.split_whitespace();
    let dims: [usize; 3] = [field(toks.next(), hl, "n1")?, field(toks.next(), hl, "n2")?, field(toks.next(), hl, "n3")?];
    let nnz: usize = field(toks.next(), hl, "nnz")?;
    no_trailing(toks, hl)?;
    if dims.contains(&0) {
        return parse_err(hl, "dimensions must be positive");
    }
    let mut entries = Vec::with_capacity(nnz);
    let mut last = hl;
    for item in lines {
        let (ln, s) = item?;
        last = ln;
        if entries.len() == nnz {
            return parse_err(ln, format!("more than {nnz} entries"));
        }
        let mut toks = s.split_whitespace();
        let i = index(toks.next(), ln, "i", dims[0])?;
        let j = index(toks.next(), ln, "j", dims[1])?;
        let l = index(toks.next(), ln, "l", dims[2])?;
        let v = finite(toks.next(), ln, "value")?;
        no_trailing(toks, ln)?;
        entries.push((i, j, l, v));
    }
    if entries.len() != nnz {
        return parse_err(last, format!("header declares {nnz} entries, found {}", entries.len()));
    }
    Tensor3::from_entries(dims, entries)
}

pub fn read_tns_file(path: &Path) -> Result<Tensor3> {
    read_tns(std::fs::File::open(path)?)
}

/// Format a tensor's nonzeros as `.tns`.
pub fn format_tns(t: &Tensor3) -> String {
    let [n1, n2, n3] = t.dims();
    let mut out = format!("{n1} {n2} {n3} {}\n", t.nnz());
    t.for_each_nonzero(|i, j, l, v| {
        let _ = writeln!(out, "{} {} {} {}", i + 1, j + 1, l + 1, v);
    });
    out
}

pub fn write_tns_file(path: &Path, t: &Tensor3) -> Result<()> {
    std::fs::write(path, format_tns(t))?;
    Ok(())
}

/// Parse a dense matrix: header `rows cols`, then `rows·cols` values in row-major order.
pub fn read_matrix<R: Read>(r: R) -> Result<Mat> {
    let mut lines = content_lines(BufReader::new(r));
    let Some(first) = lines.next() else { return parse_err(1, "missing header") };
    let (hl, header) = first?;
    let mut toks = header.split_whitespace();
    let rows: usize = field(toks.next(), hl, "rows")?;
    let cols: usize = field(toks.next(), hl, "cols")?;
    no_trailing(toks, hl)?;
    let mut vals = Vec::with_capacity(rows * cols);
    let mut last = hl;
    for item in lines {
        let (ln, s) = item?;
        last = ln;
        for tok in s.split_whitespace() {
            if vals.len() == rows * cols {
                return parse_err(ln, format!("more than {} values", rows * cols));
            }
            vals.push(finite(Some(tok), ln, "value")?);
        }
    }
    if vals.len() != rows * cols {
        return parse_err(last, format!("expected {} values, found {}", rows * cols, vals.len()));
    }
    Ok(Mat::from_row_slice(rows, cols, &vals))
}

pub fn read_matrix_file(path: &Path) -> Result<Mat> {
    read_matrix(std::fs::File::open(path)?)
}

/// Format a matrix as header plus one text line per row.
pub fn format_matrix(m: &Mat) -> String {
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_matrix_file(path: &Path, m: &Mat) -> Result<()> {
    std::fs::write(path, format_matrix(m))?;
    Ok(())
}

/// Write `U.txt`, `V.txt`, `W.txt` into `dir`.
pub fn write_factors(dir: &Path, f: &FactorTriple) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_matrix_file(&dir.join("U.txt"), &f.u)?;
    write_matrix_file(&dir.join("V.txt"), &f.v)?;
    write_matrix_file(&dir.join("W.txt"), &f.w)
}

pub fn read_factors(dir: &Path) -> Result<FactorTriple> {
    FactorTriple::new(
        read_matrix_file(&dir.join("U.txt"))?,
        read_matrix_file(&dir.join("V.txt"))?,
        read_matrix_file(&dir.join("W.txt"))?,
    )
}

/// Streaming reader of `i j l delta` update lines. Yields each update once,
/// in file order.
pub struct UpdateReader<R: BufRead> {
    lines: std::iter::Enumerate<std::io::Lines<R>>,
    dims: [usize; 3],
}

impl<R: BufRead> UpdateReader<R> {
    pub fn new(r: R, dims: [usize; 3]) -> Self {
        UpdateReader { lines: r.lines().enumerate(), dims }
    }
}

impl<R: BufRead> Iterator for UpdateReader<R> {
    type Item = Result<Update>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let (n, line) = self.lines.next()?;
            let ln = n + 1;
            let s = match line {
                Ok(s) => s,
                Err(e) => return Some(Err(Error::Io(e))),
            };
            let t = s.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let parse = || -> Result<Update> {
                let mut toks = t.split_whitespace();
                let i = index(toks.next(), ln, "i", self.dims[0])?;
                let j = index(toks.next(), ln, "j", self.dims[1])?;
                let l = index(toks.next(), ln, "l", self.dims[2])?;
                let d = finite(toks.next(), ln, "delta")?;
                no_trailing(toks, ln)?;
                Ok(Update::new(i, j, l, d))
            };
            return Some(parse());
        }
    }
}

/// Format updates as 1-based `i j l delta` lines.
pub fn format_updates(updates: &[Update]) -> String {
    let mut out = String::new();
    for u in updates {
        let _ = writeln!(out, "{} {} {} {}", u.i + 1, u.j + 1, u.l + 1, u.delta);
    }
    out
}

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub algo: String,
    pub k: usize,
    pub eps: f64,
    pub rank: usize,
    pub cost_fro2: Option<f64>,
    pub cost_l1: Option<f64>,
    pub seed: u64,
    pub elapsed_ms: u64,
}

pub fn write_meta(dir: &Path, meta: &Meta) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::fs::File::create(dir.join("meta.json"))?;
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::Numerical(e.to_string()))?;
    writeln!(f, "{text}")?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<Meta> {
    let text = std::fs::read_to_string(dir.join("meta.json"))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })
}
