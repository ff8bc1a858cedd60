//! Piecewise Chebyshev tables for smooth scalar functions that are evaluated
//! at many points.
//!
//! Each leaf holds the interpolant through the Chebyshev–Lobatto points of its
//! interval. A leaf is accepted when its trailing coefficients are below the
//! tolerance and the interpolant reproduces the function at two off-node
//! probes; otherwise it is halved.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};

const DEGREE: usize = 16;
const MIN_WIDTH: f64 = 1e-9;
const PROBES: [f64; 2] = [-0.377, 0.613];

#[derive(Debug, Clone)]
struct Leaf {
    lo: f64,
    hi: f64,
    coeffs: [f64; DEGREE + 1],
}

impl Leaf {
    fn eval(&self, x: f64) -> f64 {
        let t = (2.0 * x - self.lo - self.hi) / (self.hi - self.lo);
        clenshaw(&self.coeffs, t.clamp(-1.0, 1.0))
    }
}

fn clenshaw(c: &[f64], t: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &ck in c.iter().skip(1).rev() {
        let b = 2.0 * t * b1 - b2 + ck;
        b2 = b1;
        b1 = b;
    }
    t * b1 - b2 + c[0]
}

/// Chebyshev coefficients from values at `cos(πj/n)`, `j = 0..=n`.
fn coefficients(vals: &[f64; DEGREE + 1]) -> [f64; DEGREE + 1] {
    let n = DEGREE;
    let mut c = [0.0; DEGREE + 1];
    for (k, ck) in c.iter_mut().enumerate() {
        let mut s = 0.0;
        for (j, v) in vals.iter().enumerate() {
            let w = if j == 0 || j == n { 0.5 } else { 1.0 };
            s += w * v * (PI * (j * k) as f64 / n as f64).cos();
        }
        *ck = 2.0 * s / n as f64;
    }
    c[0] *= 0.5;
    c[n] *= 0.5;
    c
}

/// A piecewise Chebyshev approximation of `f` on `[lo, hi]`.
#[derive(Debug, Clone)]
pub struct ChebTable {
    leaves: Vec<Leaf>,
}

impl ChebTable {
    /// Builds the table with absolute accuracy about `tol`. `breaks` are
    /// points where `f` may lose smoothness; they start separate leaves.
    pub fn build<F>(f: F, lo: f64, hi: f64, breaks: &[f64], tol: f64) -> Result<ChebTable>
    where
        F: Fn(f64) -> Result<f64> + Sync,
    {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::invalid("interval", "needs finite lo <= hi"));
        }
        if !(tol > 0.0) {
            return Err(Error::invalid("tol", "must be positive"));
        }
        let hi = if hi - lo < MIN_WIDTH { lo + MIN_WIDTH } else { hi };
        let mut cuts = vec![lo];
        let mut inner: Vec<f64> = breaks.iter().copied().filter(|b| *b > lo && *b < hi).collect();
        inner.sort_by(f64::total_cmp);
        for b in inner {
            if b - cuts.last().copied().unwrap_or(lo) >= MIN_WIDTH && hi - b >= MIN_WIDTH {
                cuts.push(b);
            }
        }
        cuts.push(hi);
        let parts: Vec<Vec<Leaf>> = cuts
            .par_windows(2)
            .map(|w| refine(&f, w[0], w[1], tol))
            .collect::<Result<_>>()?;
        Ok(ChebTable {
            leaves: parts.into_iter().flatten().collect(),
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.leaves.partition_point(|l| l.hi < x).min(self.leaves.len() - 1);
        self.leaves[i].eval(x)
    }

    pub fn leaves(&self) -> usize {
        self.leaves.len()
    }
}

fn refine<F>(f: &F, lo: f64, hi: f64, tol: f64) -> Result<Vec<Leaf>>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    let mut out = Vec::new();
    let mut stack = vec![(lo, hi)];
    while let Some((a, b)) = stack.pop() {
        let mut vals = [0.0; DEGREE + 1];
        for (j, v) in vals.iter_mut().enumerate() {
            let t = (PI * j as f64 / DEGREE as f64).cos();
            *v = f(0.5 * (a + b) + 0.5 * (b - a) * t)?;
        }
        let leaf = Leaf {
            lo: a,
            hi: b,
            coeffs: coefficients(&vals),
        };
        let scale = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let tail = leaf.coeffs[DEGREE - 2..].iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let mut ok = tail <= tol * scale;
        if ok {
            for p in PROBES {
                let x = 0.5 * (a + b) + 0.5 * (b - a) * p;
                if (leaf.eval(x) - f(x)?).abs() > tol * scale {
                    ok = false;
                    break;
                }
            }
        }
        if ok || b - a < 2.0 * MIN_WIDTH {
            out.push(leaf);
        } else {
            let m = 0.5 * (a + b);
            stack.push((m, b));
            stack.push((a, m));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_reproduced() {
        let t = ChebTable::build(|x| Ok(3.0 * x * x * x - x + 0.5), -2.0, 3.0, &[], 1e-13).unwrap();
        assert_eq!(t.leaves(), 1);
        for i in 0..=100 {
            let x = -2.0 + 0.05 * i as f64;
            assert!((t.eval(x) - (3.0 * x * x * x - x + 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn kinks_are_resolved() {
        let f = |x: f64| Ok((x - 0.3).abs().powf(2.5) + x.abs());
        let t = ChebTable::build(f, -1.0, 1.0, &[0.0], 1e-12).unwrap();
        for i in 0..=2000 {
            let x = -1.0 + 0.001 * i as f64;
            assert!((t.eval(x) - f(x).unwrap()).abs() < 1e-10, "x={x}");
        }
    }

    #[test]
    fn degenerate_interval() {
        let t = ChebTable::build(|x| Ok(x.exp()), 0.5, 0.5, &[], 1e-12).unwrap();
        assert!((t.eval(0.5) - 0.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn errors_propagate() {
        let r = ChebTable::build(|_| Err(Error::NonFinite { context: "t" }), 0.0, 1.0, &[], 1e-12);
        assert!(r.is_err());
    }
}
