//! Pointwise losses on a residual `u`.
//!
//! The central object is the ε-insensitive q-norm loss
//! `ψ_q^ε(u) = (|u| − ε)^q` for `|u| > ε` and `0` inside the tube. With
//! `ε = 0` it is the plain q-norm loss `|u|^q`. The pinball loss is kept here
//! as a baseline for quantile-style comparisons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent `q ≥ 1` and tube half-width `ε ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLossSpec")]
pub struct LossSpec {
    q: f64,
    eps: f64,
}

#[derive(Deserialize)]
struct RawLossSpec {
    q: f64,
    #[serde(default)]
    eps: f64,
}

impl TryFrom<RawLossSpec> for LossSpec {
    type Error = Error;

    fn try_from(raw: RawLossSpec) -> Result<Self> {
        LossSpec::new(raw.q, raw.eps)
    }
}

impl LossSpec {
    pub fn new(q: f64, eps: f64) -> Result<Self> {
        if !(q.is_finite() && q >= 1.0) {
            return Err(Error::invalid("q", format!("must be a finite value >= 1, got {q}")));
        }
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::invalid("eps", format!("must be finite and >= 0, got {eps}")));
        }
        Ok(LossSpec { q, eps })
    }

    /// The plain q-norm loss `|u|^q`.
    pub fn q_norm(q: f64) -> Result<Self> {
        LossSpec::new(q, 0.0)
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Same exponent, different tube width.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        LossSpec::new(self.q, eps)
    }

    pub fn value(&self, u: f64) -> f64 {
        psi_q_eps(u, self)
    }

    pub fn subgradient(&self, u: f64) -> Subgradient {
        psi_q_eps_subgrad(u, self)
    }

    /// Derivative of the loss for `q > 1`, where it is continuous.
    /// For `q = 1` this returns the midpoint of the subdifferential.
    pub fn derivative(&self, u: f64) -> f64 {
        let sg = self.subgradient(u);
        0.5 * (sg.lo + sg.hi)
    }

    /// Second derivative away from the tube boundary; `+inf` at the boundary
    /// when `1 < q < 2`, zero inside the tube.
    pub fn second_derivative(&self, u: f64) -> f64 {
        let excess = tube_excess(u, self.eps);
        if excess <= 0.0 {
            return 0.0;
        }
        let q = self.q;
        if q == 1.0 {
            0.0
        } else if q == 2.0 {
            2.0
        } else {
            q * (q - 1.0) * excess.powf(q - 2.0)
        }
    }
}

/// A closed interval `[lo, hi]` of subgradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subgradient {
    pub lo: f64,
    pub hi: f64,
}

impl Subgradient {
    fn point(g: f64) -> Self {
        Subgradient { lo: g, hi: g }
    }

    pub fn contains(&self, g: f64) -> bool {
        self.lo <= g && g <= self.hi
    }

    /// Element of the interval closest to `target`.
    pub fn nearest(&self, target: f64) -> f64 {
        target.clamp(self.lo, self.hi)
    }

    pub fn is_singleton(&self) -> bool {
        self.lo == self.hi
    }
}

/// `max(|u| − ε, 0)`.
#[inline]
pub(crate) fn tube_excess(u: f64, eps: f64) -> f64 {
    (u.abs() - eps).max(0.0)
}

/// `x^q` for `x ≥ 0`, with exact fast paths for the common exponents.
#[inline]
pub(crate) fn pow_q(x: f64, q: f64) -> f64 {
    if q == 1.0 {
        x
    } else if q == 2.0 {
        x * x
    } else if q == 3.0 {
        x * x * x
    } else {
        x.powf(q)
    }
}

/// The plain q-norm loss `|u|^q`.
pub fn psi_q(u: f64, q: f64) -> f64 {
    pow_q(tube_excess(u, 0.0), q)
}

/// The ε-insensitive q-norm loss.
pub fn psi_q_eps(u: f64, spec: &LossSpec) -> f64 {
    pow_q(tube_excess(u, spec.eps), spec.q)
}

/// Subdifferential of `ψ_q^ε` at `u`.
///
/// At the tube boundary the one-sided derivative vanishes for `q > 1`; for
/// `q = 1` the interval reaches from 0 to the outer slope.
pub fn psi_q_eps_subgrad(u: f64, spec: &LossSpec) -> Subgradient {
    let q = spec.q;
    let a = u.abs();
    if a > spec.eps {
        let excess = a - spec.eps;
        let slope = if q == 1.0 {
            1.0
        } else if q == 2.0 {
            2.0 * excess
        } else {
            q * excess.powf(q - 1.0)
        };
        return Subgradient::point(slope.copysign(u));
    }
    if a < spec.eps || q > 1.0 {
        return Subgradient::point(0.0);
    }
    // q = 1 on the boundary
    if u > 0.0 {
        Subgradient { lo: 0.0, hi: 1.0 }
    } else if u < 0.0 {
        Subgradient { lo: -1.0, hi: 0.0 }
    } else {
        Subgradient { lo: -1.0, hi: 1.0 }
    }
}

/// Pinball (check) loss with quantile level `tau ∈ (0, 1)`.
pub fn pinball(u: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid("tau", format!("must lie in (0, 1), got {tau}")));
    }
    Ok(if u >= 0.0 { tau * u } else { (tau - 1.0) * u })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(q: f64, eps: f64) -> LossSpec {
        LossSpec::new(q, eps).unwrap()
    }

    #[test]
    fn psi_examples() {
        assert_eq!(psi_q_eps(0.3, &spec(2.0, 0.5)), 0.0);
        assert_eq!(psi_q_eps(1.5, &spec(2.0, 0.5)), 1.0);
        assert_eq!(psi_q_eps(-2.0, &spec(1.0, 0.0)), 2.0);
    }

    #[test]
    fn zero_eps_is_bitwise_q_norm() {
        for &q in &[1.0, 1.3, 1.5, 2.0, 2.7, 3.0] {
            for i in -50..=50 {
                let u = i as f64 * 0.037;
                assert_eq!(psi_q_eps(u, &spec(q, 0.0)).to_bits(), psi_q(u, q).to_bits());
            }
        }
    }

    #[test]
    fn subgradient_examples() {
        assert_eq!(psi_q_eps_subgrad(0.2, &spec(2.0, 0.5)), Subgradient { lo: 0.0, hi: 0.0 });
        let g = psi_q_eps_subgrad(1.5, &spec(2.0, 0.5));
        assert!(g.is_singleton());
        // central difference of the loss itself
        let h = 1e-6;
        let s = spec(2.0, 0.5);
        let fd = (psi_q_eps(1.5 + h, &s) - psi_q_eps(1.5 - h, &s)) / (2.0 * h);
        assert!((fd - 2.0).abs() < 1e-8);
        assert!((g.lo - fd).abs() < 1e-8);
        assert_eq!(psi_q_eps_subgrad(0.0, &spec(1.0, 0.0)), Subgradient { lo: -1.0, hi: 1.0 });
    }

    #[test]
    fn subgradient_at_tube_boundary() {
        assert_eq!(psi_q_eps_subgrad(0.5, &spec(1.5, 0.5)), Subgradient { lo: 0.0, hi: 0.0 });
        assert_eq!(psi_q_eps_subgrad(0.5, &spec(1.0, 0.5)), Subgradient { lo: 0.0, hi: 1.0 });
        assert_eq!(psi_q_eps_subgrad(-0.5, &spec(1.0, 0.5)), Subgradient { lo: -1.0, hi: 0.0 });
        assert_eq!(psi_q_eps_subgrad(0.0, &spec(2.0, 0.0)), Subgradient { lo: 0.0, hi: 0.0 });
    }

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball(2.0, 0.5).unwrap(), 1.0);
        assert_eq!(pinball(-2.0, 0.25).unwrap(), 1.5);
        assert_eq!(pinball(0.0, 0.9).unwrap(), 0.0);
        assert!(pinball(1.0, 0.0).is_err());
        assert!(pinball(1.0, 1.0).is_err());
        assert!(pinball(1.0, f64::NAN).is_err());
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(LossSpec::new(0.5, 0.0).is_err());
        assert!(LossSpec::new(2.0, -0.1).is_err());
        assert!(LossSpec::new(f64::INFINITY, 0.0).is_err());
        assert!(serde_json::from_str::<LossSpec>(r#"{"q": 0.9}"#).is_err());
        let s: LossSpec = serde_json::from_str(r#"{"q": 1.5}"#).unwrap();
        assert_eq!(s.eps(), 0.0);
    }

    #[test]
    fn second_derivative_matches_finite_difference() {
        let s = spec(2.5, 0.1);
        let u = 0.7;
        let h = 1e-5;
        let fd = (s.derivative(u + h) - s.derivative(u - h)) / (2.0 * h);
        assert!((fd - s.second_derivative(u)).abs() < 1e-6);
        assert_eq!(s.second_derivative(0.05), 0.0);
    }
}
