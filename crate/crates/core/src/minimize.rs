//! One-dimensional minimization and root bracketing.

use crate::error::Result;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy)]
pub struct ScalarMin {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
}

/// Golden-section search for the minimum of a unimodal `f` on `[lo, hi]`,
/// stopping once the bracket is narrower than `tol`.
pub fn golden_section<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<ScalarMin>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut evaluations = 2;
    while (b - a) > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
        evaluations += 1;
    }
    let (x, value) = if fc <= fd { (c, fc) } else { (d, fd) };
    Ok(ScalarMin {
        x,
        value,
        evaluations,
    })
}

/// Bisection for a root of a nonincreasing `g` on `[lo, hi]`, given
/// `g(lo) ≥ 0 ≥ g(hi)`. Returns `None` when the sign condition fails.
pub fn bisect_decreasing<G>(mut g: G, mut lo: f64, mut hi: f64, tol: f64) -> Result<Option<f64>>
where
    G: FnMut(f64) -> Result<f64>,
{
    let glo = g(lo)?;
    let ghi = g(hi)?;
    if glo < 0.0 || ghi > 0.0 {
        return Ok(None);
    }
    if glo == 0.0 {
        return Ok(Some(lo));
    }
    if ghi == 0.0 {
        return Ok(Some(hi));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid)?;
        if gm == 0.0 {
            return Ok(Some(mid));
        }
        if gm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_quadratic_minimum() {
        let m = golden_section(|x| Ok((x - 0.123).powi(2)), -0.5, 0.5, 1e-10).unwrap();
        assert!((m.x - 0.123).abs() < 1e-9);
        assert!(m.value < 1e-18);
    }

    #[test]
    fn golden_handles_boundary_minimum() {
        let m = golden_section(Ok, -0.5, 0.5, 1e-9).unwrap();
        assert!((m.x + 0.5).abs() < 1e-8);
    }

    #[test]
    fn golden_nonsmooth() {
        let m = golden_section(|x: f64| Ok((x + 0.3).abs()), -0.5, 0.5, 1e-9).unwrap();
        assert!((m.x + 0.3).abs() < 1e-9);
    }

    #[test]
    fn bisection() {
        let r = bisect_decreasing(|x| Ok(0.2 - x), 0.0, 1.0, 1e-14).unwrap().unwrap();
        assert!((r - 0.2).abs() < 1e-13);
        assert!(bisect_decreasing(Ok, 0.1, 1.0, 1e-14).unwrap().is_none());
    }
}
