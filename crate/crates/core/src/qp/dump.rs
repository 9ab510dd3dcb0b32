//! Plain-text problem dumps for offline reproduction.
//!
//! ```text
//! qp v1
//! n <n>
//! H            (n lines of n values)
//! g            (1 line of n values)
//! eq <m_eq>    (m_eq lines: n coefficients then the right-hand side)
//! ineq <m_in>  (same layout, rows read as A x ≤ b)
//! lower        (1 line of n values, -inf allowed)
//! upper        (1 line of n values, inf allowed)
//! ```
//!
//! Values use the shortest round-trip decimal form, so a dump reloads bit
//! for bit.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use super::QpProblem;
use crate::error::{Error, Result};

fn join(it: impl Iterator<Item = f64>) -> String {
    it.map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// Writes `p` in the documented format.
pub fn write_problem<W: Write>(p: &QpProblem, mut w: W) -> Result<()> {
    let n = p.n();
    writeln!(w, "qp v1")?;
    writeln!(w, "n {n}")?;
    writeln!(w, "H")?;
    for i in 0..n {
        writeln!(w, "{}", join(p.h.row(i).iter().copied()))?;
    }
    writeln!(w, "g")?;
    writeln!(w, "{}", join(p.g.iter().copied()))?;
    for (tag, a, b) in [("eq", &p.a_eq, &p.b_eq), ("ineq", &p.a_ineq, &p.b_ineq)] {
        writeln!(w, "{tag} {}", a.nrows())?;
        for i in 0..a.nrows() {
            writeln!(w, "{}", join(a.row(i).iter().copied().chain(std::iter::once(b[i]))))?;
        }
    }
    writeln!(w, "lower")?;
    writeln!(w, "{}", join(p.lower.iter().copied()))?;
    writeln!(w, "upper")?;
    writeln!(w, "{}", join(p.upper.iter().copied()))?;
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<String> {
        self.line += 1;
        match self.inner.next() {
            Some(l) => Ok(l?),
            None => Err(Error::Parse { line: self.line, msg: "unexpected end of dump".into() }),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { line: self.line, msg: msg.into() }
    }

    fn expect(&mut self, tag: &str) -> Result<Option<usize>> {
        let l = self.next()?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some(tag) {
            return Err(self.err(format!("expected `{tag}`")));
        }
        match parts.next() {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| self.err(format!("bad count after `{tag}`"))),
        }
    }

    fn values(&mut self, count: usize) -> Result<Vec<f64>> {
        let l = self.next()?;
        let vals: std::result::Result<Vec<f64>, _> = l.split_whitespace().map(str::parse).collect();
        let vals = vals.map_err(|_| self.err("unparsable number"))?;
        if vals.len() != count {
            return Err(self.err(format!("expected {count} values, found {}", vals.len())));
        }
        Ok(vals)
    }
}

/// Reads a problem written by [`write_problem`].
pub fn read_problem<R: BufRead>(r: R) -> Result<QpProblem> {
    let mut lines = Lines { inner: r.lines(), line: 0 };
    let header = lines.next()?;
    if header.trim() != "qp v1" {
        return Err(lines.err("missing `qp v1` header"));
    }
    let n = lines.expect("n")?.ok_or_else(|| lines.err("missing dimension"))?;
    lines.expect("H")?;
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, v) in lines.values(n)?.into_iter().enumerate() {
            h[(i, j)] = v;
        }
    }
    lines.expect("g")?;
    let g = DVector::from_vec(lines.values(n)?);
    let mut blocks = Vec::new();
    for tag in ["eq", "ineq"] {
        let m = lines.expect(tag)?.ok_or_else(|| lines.err("missing row count"))?;
        let mut a = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        for i in 0..m {
            let vals = lines.values(n + 1)?;
            for j in 0..n {
                a[(i, j)] = vals[j];
            }
            b[i] = vals[n];
        }
        blocks.push((a, b));
    }
    lines.expect("lower")?;
    let lower = DVector::from_vec(lines.values(n)?);
    lines.expect("upper")?;
    let upper = DVector::from_vec(lines.values(n)?);
    let (a_in, b_in) = blocks.pop().unwrap();
    let (a_eq, b_eq) = blocks.pop().unwrap();
    let p = QpProblem { h, g, a_eq, b_eq, a_ineq: a_in, b_ineq: b_in, lower, upper };
    p.validate()?;
    Ok(p)
}
