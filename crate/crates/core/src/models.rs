//! Synthetic conditional distributions `ρ_x` on `[−1/2, 1/2]`.
//!
//! Every model is a location family: `y = f*(x) + v` where the offset `v` has
//! a fixed symmetric density. Three offset laws are provided:
//!
//! * `power(φ)`: density `A|v|^φ` on `|v| ≤ 1/4` with `A = 2^{2φ+1}(φ+1)`;
//! * `gaussian_truncated(σ)`: a centred normal truncated to `|v| ≤ 1/4` and
//!   renormalized;
//! * `uniform(h)`: uniform on `|v| ≤ h`.
//!
//! The center `f*` is clamped to `[−1/4, 1/4]`, which keeps every support
//! inside `[−1/2, 1/2]`. Because the offset law is symmetric, the minimizer of
//! the conditional ψ_q^ε-risk is `f*(x)` for every `q` and `ε`; [`target`]
//! nevertheless computes it numerically from the risk so the two can be
//! checked against each other.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{check_dims, KernelExpansion, KernelSpec};
use crate::loss::{pow_q, tube_excess, LossSpec};
use crate::minimize::{bisect_decreasing, golden_section};
use crate::quadrature::{integrate, QuadOptions};
use crate::util::{maybe_inf, rng_stream};

/// Half-width of the power and truncated-gaussian offset supports.
pub const OFFSET_HALFWIDTH: f64 = 0.25;
/// Bound on `|f*|`.
pub const CENTER_BOUND: f64 = 0.25;
/// Bandwidth of the Gaussian kernel used by the default center function.
pub const DEFAULT_CENTER_BANDWIDTH: f64 = 0.2;

const SUPPORT_BOUND: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    Power { phi: f64 },
    GaussianTruncated { sigma: f64 },
    Uniform { halfwidth: f64 },
}

impl NoiseKind {
    fn validate(&self) -> Result<()> {
        match *self {
            NoiseKind::Power { phi } if !(phi.is_finite() && phi > 0.0) => {
                Err(Error::invalid("phi", format!("must be > 0, got {phi}")))
            }
            NoiseKind::GaussianTruncated { sigma } if !(sigma.is_finite() && sigma > 0.0) => {
                Err(Error::invalid("sigma", format!("must be > 0, got {sigma}")))
            }
            NoiseKind::Uniform { halfwidth } if !(halfwidth > 0.0 && halfwidth <= 0.5) => Err(
                Error::invalid("halfwidth", format!("must lie in (0, 1/2], got {halfwidth}")),
            ),
            _ => Ok(()),
        }
    }

    /// Half-width of the offset support.
    pub fn halfwidth(&self) -> f64 {
        match *self {
            NoiseKind::Power { .. } | NoiseKind::GaussianTruncated { .. } => OFFSET_HALFWIDTH,
            NoiseKind::Uniform { halfwidth } => halfwidth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CenterSpec {
    Zero,
    Constant { value: f64 },
    Expansion { expansion: KernelExpansion },
    /// Three-term Gaussian-kernel expansion on `[0,1]^dim` scaled to
    /// sup-norm 1/4.
    Default { dim: usize },
}

/// Input distribution `ρ_X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Design {
    Uniform { dim: usize },
}

impl Default for Design {
    fn default() -> Self {
        Design::Uniform { dim: 1 }
    }
}

impl Design {
    pub fn dim(&self) -> usize {
        match *self {
            Design::Uniform { dim } => dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Design::Uniform { dim } if dim == 0 || dim > 64 => {
                Err(Error::invalid("design", format!("dimension must be in 1..=64, got {dim}")))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match *self {
            Design::Uniform { dim } => (0..dim).map(|_| rng.gen::<f64>()).collect(),
        }
    }

    /// `n` points drawn in fixed-size chunks, each from its own generator
    /// stream, so any chunk can be regenerated independently.
    pub fn sample_points(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        const CHUNK: usize = 4096;
        let mut out = Vec::with_capacity(n);
        for (chunk, start) in (0..n).step_by(CHUNK).enumerate() {
            let mut rng = rng_stream(seed, chunk as u64);
            let end = (start + CHUNK).min(n);
            out.extend((start..end).map(|_| self.sample(&mut rng)));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub noise: NoiseKind,
    pub center: CenterSpec,
}

#[derive(Debug, Clone, PartialEq)]
enum Center {
    Constant(f64),
    Expansion(KernelExpansion),
}

/// An immutable conditional model `{ρ_x}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct ConditionalModel {
    spec: ModelSpec,
    noise: NoiseKind,
    center: Center,
    center_sup: f64,
    gaussian_mass: f64,
}

impl TryFrom<ModelSpec> for ConditionalModel {
    type Error = Error;

    fn try_from(spec: ModelSpec) -> Result<Self> {
        ConditionalModel::new(spec)
    }
}

impl From<ConditionalModel> for ModelSpec {
    fn from(m: ConditionalModel) -> Self {
        m.spec
    }
}

/// Analytic noise-condition descriptor: `ρ_x([f_q, f_q + s]) ≥ b·s^w` and
/// the mirrored inequality for `s ∈ (0, a]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseType {
    #[serde(with = "maybe_inf")]
    pub p: f64,
    pub w: f64,
    pub a: f64,
    pub b: f64,
    /// `‖(b a^w)^{-1}‖_{L^p}`.
    pub bound_norm: f64,
    /// Mass kept by truncation (1 for untruncated kinds).
    pub truncation_mass: f64,
}

impl ConditionalModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.noise.validate()?;
        let center = match &spec.center {
            CenterSpec::Zero => Center::Constant(0.0),
            CenterSpec::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::invalid("center", "constant must be finite"));
                }
                Center::Constant(*value)
            }
            CenterSpec::Expansion { expansion } => {
                KernelExpansion::new(
                    expansion.centers.clone(),
                    expansion.coeffs.clone(),
                    expansion.kernel,
                )?;
                Center::Expansion(expansion.clone())
            }
            CenterSpec::Default { dim } => Center::Expansion(default_center(*dim)?),
        };
        let raw_sup = match &center {
            Center::Constant(v) => v.abs(),
            Center::Expansion(e) => grid_sup(e),
        };
        if matches!(spec.noise, NoiseKind::Power { .. }) && raw_sup > CENTER_BOUND + 1e-9 {
            return Err(Error::invalid(
                "center",
                format!("power model requires sup|f*| <= 1/4, got {raw_sup}"),
            ));
        }
        let center_sup = raw_sup.min(CENTER_BOUND);
        if center_sup + spec.noise.halfwidth() > SUPPORT_BOUND + 1e-12 {
            return Err(Error::invalid(
                "halfwidth",
                format!(
                    "support [f* - {h}, f* + {h}] leaves [-1/2, 1/2] for sup|f*| = {center_sup}",
                    h = spec.noise.halfwidth()
                ),
            ));
        }
        let gaussian_mass = match spec.noise {
            NoiseKind::GaussianTruncated { sigma } => {
                libm::erf(OFFSET_HALFWIDTH / sigma * FRAC_1_SQRT_2)
            }
            _ => 1.0,
        };
        Ok(ConditionalModel {
            noise: spec.noise,
            spec,
            center,
            center_sup,
            gaussian_mass,
        })
    }

    pub fn power(phi: f64, center: CenterSpec) -> Result<Self> {
        Self::new(ModelSpec {
            noise: NoiseKind::Power { phi },
            center,
        })
    }

    pub fn gaussian(sigma: f64, center: CenterSpec) -> Result<Self> {
        Self::new(ModelSpec {
            noise: NoiseKind::GaussianTruncated { sigma },
            center,
        })
    }

    pub fn uniform(halfwidth: f64, center: CenterSpec) -> Result<Self> {
        Self::new(ModelSpec {
            noise: NoiseKind::Uniform { halfwidth },
            center,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn noise(&self) -> NoiseKind {
        self.noise
    }

    /// Input dimension fixed by the center, if any.
    pub fn dim(&self) -> Option<usize> {
        match &self.center {
            Center::Constant(_) => None,
            Center::Expansion(e) => e.dim(),
        }
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        match self.dim() {
            Some(d) if d != x.len() => Err(Error::DimensionMismatch {
                expected: d,
                found: x.len(),
            }),
            _ => Ok(()),
        }
    }

    /// Conditional center `f*(x)`, clamped to `[−1/4, 1/4]`.
    pub fn center(&self, x: &[f64]) -> f64 {
        let raw = match &self.center {
            Center::Constant(v) => *v,
            Center::Expansion(e) => e.eval_unchecked(x),
        };
        raw.clamp(-CENTER_BOUND, CENTER_BOUND)
    }

    /// The center as a kernel expansion, when it is one.
    pub fn center_expansion(&self) -> Option<&KernelExpansion> {
        match &self.center {
            Center::Expansion(e) => Some(e),
            Center::Constant(_) => None,
        }
    }

    /// Estimated `‖f*‖_∞` over `[0,1]^n`.
    pub fn center_sup(&self) -> f64 {
        self.center_sup
    }

    pub fn support(&self, x: &[f64]) -> (f64, f64) {
        let c = self.center(x);
        let h = self.noise.halfwidth();
        (c - h, c + h)
    }

    /// Density of the offset `v = y − f*(x)`.
    pub fn offset_density(&self, v: f64) -> f64 {
        let a = v.abs();
        match self.noise {
            NoiseKind::Power { phi } => {
                if a > OFFSET_HALFWIDTH {
                    0.0
                } else {
                    let amp = 2f64.powf(2.0 * phi + 1.0) * (phi + 1.0);
                    amp * pow_q(a, phi)
                }
            }
            NoiseKind::GaussianTruncated { sigma } => {
                if a > OFFSET_HALFWIDTH {
                    0.0
                } else {
                    (-(v * v) / (2.0 * sigma * sigma)).exp()
                        / ((2.0 * PI).sqrt() * sigma * self.gaussian_mass)
                }
            }
            NoiseKind::Uniform { halfwidth } => {
                if a > halfwidth {
                    0.0
                } else {
                    0.5 / halfwidth
                }
            }
        }
    }

    pub fn density(&self, x: &[f64], y: f64) -> f64 {
        self.offset_density(y - self.center(x))
    }

    /// CDF of the offset.
    pub fn offset_cdf(&self, v: f64) -> f64 {
        let h = self.noise.halfwidth();
        if v <= -h {
            return 0.0;
        }
        if v >= h {
            return 1.0;
        }
        match self.noise {
            NoiseKind::Power { phi } => {
                0.5 + 0.5 * (4.0 * v.abs()).powf(phi + 1.0).copysign(v)
            }
            NoiseKind::GaussianTruncated { sigma } => {
                let scale = FRAC_1_SQRT_2 / sigma;
                0.5 * (libm::erf(v * scale) + self.gaussian_mass) / self.gaussian_mass
            }
            NoiseKind::Uniform { halfwidth } => (v + halfwidth) / (2.0 * halfwidth),
        }
    }

    /// Inverse CDF of the offset at `u ∈ [0, 1]`.
    pub fn offset_quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self.noise {
            NoiseKind::Power { phi } => {
                let w = 2.0 * u - 1.0;
                0.25 * w.abs().powf(1.0 / (phi + 1.0)).copysign(w)
            }
            NoiseKind::Uniform { halfwidth } => halfwidth * (2.0 * u - 1.0),
            NoiseKind::GaussianTruncated { .. } => {
                let (mut lo, mut hi) = (-OFFSET_HALFWIDTH, OFFSET_HALFWIDTH);
                while hi - lo > 1e-12 {
                    let mid = 0.5 * (lo + hi);
                    if self.offset_cdf(mid) < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    /// Draws `y ~ ρ_x` from a uniform variate `u`.
    pub fn sample_y(&self, x: &[f64], u: f64) -> f64 {
        self.center(x) + self.offset_quantile(u)
    }

    /// `∫ g(y) dρ_x(y)` by adaptive quadrature, splitting at the center, the
    /// support ends and any extra `breaks`.
    pub fn expect<G: FnMut(f64) -> f64>(
        &self,
        x: &[f64],
        mut g: G,
        breaks: &[f64],
        opts: &QuadOptions,
    ) -> Result<f64> {
        let c = self.center(x);
        let (lo, hi) = self.support(x);
        let mut cuts = Vec::with_capacity(breaks.len() + 1);
        cuts.push(c);
        cuts.extend_from_slice(breaks);
        let r = integrate(
            |y| {
                let d = self.offset_density(y - c);
                if d == 0.0 {
                    0.0
                } else {
                    g(y) * d
                }
            },
            lo,
            hi,
            &cuts,
            opts,
        )?;
        Ok(r.value)
    }

    /// `ρ_x([lo, hi])`.
    pub fn mass(&self, x: &[f64], lo: f64, hi: f64) -> f64 {
        let c = self.center(x);
        if hi <= lo {
            return 0.0;
        }
        self.offset_cdf(hi - c) - self.offset_cdf(lo - c)
    }

    /// `∫ g(v) dρ(v)` over the offset law, split at the origin, the support
    /// ends and `breaks`.
    fn expect_offset<G: FnMut(f64) -> f64>(&self, mut g: G, breaks: &[f64], opts: &QuadOptions) -> Result<f64> {
        let h = self.noise.halfwidth();
        let mut cuts = Vec::with_capacity(breaks.len() + 1);
        cuts.push(0.0);
        cuts.extend_from_slice(breaks);
        let r = integrate(
            |v| {
                let d = self.offset_density(v);
                if d == 0.0 {
                    0.0
                } else {
                    g(v) * d
                }
            },
            -h,
            h,
            &cuts,
            opts,
        )?;
        Ok(r.value)
    }

    /// `E v²` of the offset.
    pub fn offset_second_moment(&self) -> f64 {
        match self.noise {
            NoiseKind::Power { phi } => (phi + 1.0) / (16.0 * (phi + 3.0)),
            NoiseKind::Uniform { halfwidth } => halfwidth * halfwidth / 3.0,
            NoiseKind::GaussianTruncated { sigma } => {
                let a = OFFSET_HALFWIDTH / sigma;
                let pdf = (-0.5 * a * a).exp() / (2.0 * PI).sqrt();
                sigma * sigma * (1.0 - 2.0 * a * pdf / self.gaussian_mass)
            }
        }
    }

    /// The conditional risk as a function of the displacement `d = t − f*(x)`,
    /// which is the same at every `x`: `C_{q,x}^ε(f*(x) + d)`.
    pub fn offset_risk(&self, d: f64, spec: &LossSpec) -> Result<f64> {
        if spec.q() == 2.0 && spec.eps() == 0.0 {
            return Ok(self.offset_second_moment() + d * d);
        }
        let eps = spec.eps();
        let q = spec.q();
        self.expect_offset(|v| pow_q(tube_excess(v - d, eps), q), &[d - eps, d + eps], &QuadOptions::default())
    }

    /// `d/dd` of [`Self::offset_risk`].
    pub fn offset_risk_derivative(&self, d: f64, spec: &LossSpec) -> Result<f64> {
        let eps = spec.eps();
        if spec.q() == 1.0 {
            return Ok(self.offset_cdf(d - eps) - (1.0 - self.offset_cdf(d + eps)));
        }
        if spec.q() == 2.0 && eps == 0.0 {
            return Ok(2.0 * d);
        }
        let p = spec.q() - 1.0;
        let opts = QuadOptions::default();
        let breaks = [d - eps, d + eps];
        let upper = self.expect_offset(|v| if v > d + eps { pow_q(v - d - eps, p) } else { 0.0 }, &breaks, &opts)?;
        let lower = self.expect_offset(|v| if v < d - eps { pow_q(d - eps - v, p) } else { 0.0 }, &breaks, &opts)?;
        Ok(spec.q() * (lower - upper))
    }

    /// `E[(ψ_q(v − d) − ψ_q(v))²]`: the second moment of the loss difference
    /// between a prediction displaced by `d` and the center.
    pub fn offset_excess_square(&self, d: f64, q: f64) -> Result<f64> {
        if q == 2.0 {
            let m2 = self.offset_second_moment();
            return Ok(d * d * (d * d + 4.0 * m2));
        }
        self.expect_offset(
            |v| {
                let diff = pow_q((v - d).abs(), q) - pow_q(v.abs(), q);
                diff * diff
            },
            &[d],
            &QuadOptions::default(),
        )
    }

    /// Closed-form minimizer of the conditional risk. The offset law is
    /// symmetric, so this is the center for every `q ≥ 1` and `ε`.
    pub fn target_value(&self, x: &[f64], _spec: &LossSpec) -> f64 {
        self.center(x)
    }
}

/// Fixed three-term expansion on `[0,1]^dim`, scaled to sup-norm 1/4.
fn default_center(dim: usize) -> Result<KernelExpansion> {
    if dim == 0 {
        return Err(Error::invalid("dim", "default center needs dim >= 1"));
    }
    let kernel = KernelSpec::gaussian(DEFAULT_CENTER_BANDWIDTH)?;
    let centers: Vec<Vec<f64>> = [0.2, 0.5, 0.8].iter().map(|&t| vec![t; dim]).collect();
    let raw = KernelExpansion::new(centers.clone(), vec![1.0, -0.8, 0.9], kernel)?;
    let sup = grid_sup(&raw);
    let scale = CENTER_BOUND / sup;
    KernelExpansion::new(centers, raw.coeffs.iter().map(|c| c * scale).collect(), kernel)
}

/// Sup of `|f|` over a grid on `[0,1]^n`; in one dimension the best grid
/// point is refined by golden section.
fn grid_sup(f: &KernelExpansion) -> f64 {
    let dim = f.dim().unwrap_or(1);
    if dim == 1 {
        let m: usize = 2000;
        let (best_i, _) = (0..=m)
            .map(|i| (i, f.eval_unchecked(&[i as f64 / m as f64]).abs()))
            .fold((0, -1.0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let lo = (best_i.saturating_sub(1)) as f64 / m as f64;
        let hi = ((best_i + 1).min(m)) as f64 / m as f64;
        let refined = golden_section(|x| Ok(-f.eval_unchecked(&[x]).abs()), lo, hi, 1e-13)
            .map(|r| -r.value)
            .unwrap_or(0.0);
        let grid_best = f.eval_unchecked(&[best_i as f64 / m as f64]).abs();
        return refined.max(grid_best);
    }
    let per_axis = ((20_000f64).powf(1.0 / dim as f64).floor() as usize).max(2);
    let total = per_axis.saturating_pow(dim as u32).min(1 << 20);
    let mut point = vec![0.0; dim];
    let mut best: f64 = 0.0;
    for idx in 0..total {
        let mut rest = idx;
        for p in point.iter_mut() {
            *p = (rest % per_axis) as f64 / (per_axis - 1) as f64;
            rest /= per_axis;
        }
        best = best.max(f.eval_unchecked(&point).abs());
    }
    best
}

pub fn conditional_density(model: &ConditionalModel, x: &[f64], y: f64) -> f64 {
    model.density(x, y)
}

/// `C_{q,x}^ε(t) = ∫ ψ_q^ε(y − t) dρ_x(y)`.
pub fn conditional_risk(model: &ConditionalModel, x: &[f64], t: f64, spec: &LossSpec) -> Result<f64> {
    model.check_point(x)?;
    conditional_risk_with(model, x, t, spec, &QuadOptions::default())
}

pub(crate) fn conditional_risk_with(
    model: &ConditionalModel,
    x: &[f64],
    t: f64,
    spec: &LossSpec,
    opts: &QuadOptions,
) -> Result<f64> {
    let eps = spec.eps();
    let q = spec.q();
    let breaks = [t - eps, t + eps];
    model.expect(x, |y| pow_q(tube_excess(y - t, eps), q), &breaks, opts)
}

/// The two one-sided integrals whose equality characterizes the minimizer:
/// `(∫_{y>t+ε}(y−t−ε)^{q−1} dρ_x, ∫_{y<t−ε}(t−ε−y)^{q−1} dρ_x)`.
pub fn first_order_balance(
    model: &ConditionalModel,
    x: &[f64],
    t: f64,
    spec: &LossSpec,
) -> Result<(f64, f64)> {
    model.check_point(x)?;
    first_order_balance_with(model, x, t, spec, &QuadOptions::default())
}

fn first_order_balance_with(
    model: &ConditionalModel,
    x: &[f64],
    t: f64,
    spec: &LossSpec,
    opts: &QuadOptions,
) -> Result<(f64, f64)> {
    let eps = spec.eps();
    let p = spec.q() - 1.0;
    let breaks = [t - eps, t + eps];
    let upper = model.expect(
        x,
        |y| if y > t + eps { pow_q(y - t - eps, p) } else { 0.0 },
        &breaks,
        opts,
    )?;
    let lower = model.expect(
        x,
        |y| if y < t - eps { pow_q(t - eps - y, p) } else { 0.0 },
        &breaks,
        opts,
    )?;
    Ok((upper, lower))
}

/// Minimizer `t_x^ε` of the conditional risk over `[−1/2, 1/2]`, i.e. the
/// value of `f_q^ε(x)` (`f_q(x)` when `ε = 0`).
///
/// Golden-section search on the convex risk to 1e−9, then a bisection polish
/// on the (one-sided) derivative, which is monotone and keeps its accuracy in
/// the flat region around the minimum where risk values stop resolving `t`.
pub fn target(model: &ConditionalModel, x: &[f64], spec: &LossSpec) -> Result<f64> {
    model.check_point(x)?;
    if spec.eps() > 0.5 {
        return Err(Error::invalid("eps", format!("target needs eps <= 1/2, got {}", spec.eps())));
    }
    let opts = QuadOptions::default();
    let coarse = golden_section(
        |t| conditional_risk_with(model, x, t, spec, &opts),
        -SUPPORT_BOUND,
        SUPPORT_BOUND,
        1e-9,
    )?;
    let balance = |t: f64| -> Result<f64> {
        if spec.q() == 1.0 {
            let (lo, hi) = model.support(x);
            let eps = spec.eps();
            Ok(model.mass(x, t + eps, hi) - model.mass(x, lo, t - eps))
        } else {
            first_order_balance_with(model, x, t, spec, &opts).map(|(upper, lower)| upper - lower)
        }
    };
    let width = 1e-5;
    let polished = bisect_decreasing(
        balance,
        (coarse.x - width).max(-SUPPORT_BOUND),
        (coarse.x + width).min(SUPPORT_BOUND),
        1e-15,
    )?;
    Ok(polished.unwrap_or(coarse.x))
}

/// Analytic `(p, w, a, b)` noise descriptor of the model.
pub fn noise_type(model: &ConditionalModel) -> NoiseType {
    let (w, a, b, truncation_mass) = match model.noise {
        NoiseKind::Power { phi } => (phi + 1.0, OFFSET_HALFWIDTH, 2f64.powf(2.0 * phi + 1.0), 1.0),
        NoiseKind::GaussianTruncated { sigma } => (
            1.0,
            sigma,
            (-0.5f64).exp() / ((2.0 * PI).sqrt() * sigma),
            model.gaussian_mass,
        ),
        NoiseKind::Uniform { halfwidth } => (1.0, halfwidth, 0.5 / halfwidth, 1.0),
    };
    NoiseType {
        p: f64::INFINITY,
        w,
        a,
        b,
        bound_norm: 1.0 / (b * a.powf(w)),
        truncation_mass,
    }
}

/// A sample `z = {(x_i, y_i)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub design: Option<Design>,
}

impl Dataset {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                found: ys.len(),
            });
        }
        check_dims(&xs)?;
        Ok(Dataset {
            xs,
            ys,
            seed: None,
            model: None,
            design: None,
        })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.first().map_or(0, Vec::len)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("x_{i}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for (x, y) in self.xs.iter().zip(&self.ys) {
            let mut row: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
            row.push(format!("{y:?}"));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let n = header.len();
        let expected: Vec<String> = (0..n.saturating_sub(1))
            .map(|i| format!("x_{i}"))
            .chain(std::iter::once("y".to_string()))
            .collect();
        if n < 2 || header.iter().zip(&expected).any(|(h, e)| h.trim() != e) {
            return Err(Error::invalid(
                "csv header",
                format!("expected `{}`", expected.join(",")),
            ));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::invalid("csv value", e.to_string()))?;
            ys.push(vals[n - 1]);
            xs.push(vals[..n - 1].to_vec());
        }
        Dataset::new(xs, ys)
    }
}

/// Draws `T` i.i.d. pairs: `x` from the design, `y` from `ρ_x` by inverse
/// CDF. Regeneration from the same arguments is bit-identical.
pub fn sample_dataset(model: &ConditionalModel, design: &Design, t: usize, seed: u64) -> Result<Dataset> {
    design.validate()?;
    if t == 0 {
        return Err(Error::invalid("T", "sample size must be >= 1"));
    }
    if let Some(d) = model.dim() {
        if d != design.dim() {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: design.dim(),
            });
        }
    }
    let mut rng = rng_stream(seed, 0);
    let mut xs = Vec::with_capacity(t);
    let mut ys = Vec::with_capacity(t);
    for _ in 0..t {
        let x = design.sample(&mut rng);
        let u: f64 = rng.gen();
        ys.push(model.sample_y(&x, u));
        xs.push(x);
    }
    Ok(Dataset {
        xs,
        ys,
        seed: Some(seed),
        model: Some(model.spec().clone()),
        design: Some(*design),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_models() -> Vec<ConditionalModel> {
        vec![
            ConditionalModel::power(1.0, CenterSpec::Default { dim: 1 }).unwrap(),
            ConditionalModel::power(0.5, CenterSpec::Default { dim: 1 }).unwrap(),
            ConditionalModel::gaussian(0.1, CenterSpec::Default { dim: 1 }).unwrap(),
            ConditionalModel::uniform(0.25, CenterSpec::Default { dim: 1 }).unwrap(),
        ]
    }

    #[test]
    fn power_density_examples() {
        let m = ConditionalModel::power(1.0, CenterSpec::Default { dim: 1 }).unwrap();
        let x = [0.37];
        let c = m.center(&x);
        assert_eq!(m.density(&x, c), 0.0);
        assert!((m.density(&x, c + 0.25) - 4.0).abs() < 1e-15);
        assert!((m.density(&x, c - 0.25) - 4.0).abs() < 1e-15);
        assert_eq!(m.density(&x, c + 0.2501), 0.0);
    }

    #[test]
    fn densities_integrate_to_one() {
        for m in all_models() {
            for &x in &[0.0, 0.3, 0.9] {
                let total = m.expect(&[x], |_| 1.0, &[], &QuadOptions::default()).unwrap();
                assert!((total - 1.0).abs() < 1e-8, "{:?}", m.noise());
            }
        }
    }

    #[test]
    fn supports_stay_inside_half_interval() {
        for m in all_models() {
            for i in 0..=100 {
                let (lo, hi) = m.support(&[i as f64 / 100.0]);
                assert!(lo >= -0.5 - 1e-12 && hi <= 0.5 + 1e-12);
            }
        }
    }

    #[test]
    fn default_center_scaled_to_quarter() {
        let m = ConditionalModel::power(1.0, CenterSpec::Default { dim: 1 }).unwrap();
        assert!((m.center_sup() - 0.25).abs() < 1e-12);
        let fine = (0..=100_000)
            .map(|i| m.center_expansion().unwrap().eval_unchecked(&[i as f64 / 1e5]).abs())
            .fold(0.0, f64::max);
        assert!(fine <= 0.25 + 1e-12);
        assert!(fine > 0.25 - 1e-9);
    }

    #[test]
    fn invalid_models() {
        assert!(ConditionalModel::power(0.0, CenterSpec::Zero).is_err());
        assert!(ConditionalModel::power(1.0, CenterSpec::Constant { value: 0.3 }).is_err());
        assert!(ConditionalModel::gaussian(-1.0, CenterSpec::Zero).is_err());
        assert!(ConditionalModel::uniform(0.6, CenterSpec::Zero).is_err());
        // h = 1/2 only fits with a zero center
        assert!(ConditionalModel::uniform(0.5, CenterSpec::Zero).is_ok());
        assert!(ConditionalModel::uniform(0.5, CenterSpec::Default { dim: 1 }).is_err());
        assert!(ConditionalModel::uniform(0.25, CenterSpec::Default { dim: 0 }).is_err());
    }

    #[test]
    fn model_serde_round_trip() {
        let m = ConditionalModel::gaussian(0.1, CenterSpec::Default { dim: 2 }).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: ConditionalModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<ConditionalModel>(
            r#"{"noise":{"kind":"power","phi":-1},"center":{"kind":"zero"}}"#
        )
        .is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for m in all_models() {
            for i in 1..50 {
                let u = i as f64 / 50.0;
                let v = m.offset_quantile(u);
                assert!((m.offset_cdf(v) - u).abs() < 1e-10, "{:?} u={u}", m.noise());
            }
        }
    }

    #[test]
    fn cdf_matches_quadrature() {
        for m in all_models() {
            for &v in &[-0.2, -0.05, 0.0, 0.1, 0.2] {
                let q = integrate(|s| m.offset_density(s), -0.5, v, &[0.0], &QuadOptions::default())
                    .unwrap()
                    .value;
                assert!((q - m.offset_cdf(v)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn risk_examples() {
        let u = ConditionalModel::uniform(0.5, CenterSpec::Zero).unwrap();
        let r = conditional_risk(&u, &[0.5], 0.0, &LossSpec::new(1.0, 0.0).unwrap()).unwrap();
        assert!((r - 0.25).abs() < 1e-12);
        for &q in &[1.0, 1.5, 2.0, 3.0] {
            let r = conditional_risk(&u, &[0.5], 0.0, &LossSpec::new(q, 0.5).unwrap()).unwrap();
            assert_eq!(r, 0.0);
        }
        let p = ConditionalModel::power(1.0, CenterSpec::Default { dim: 1 }).unwrap();
        for &x in &[0.1, 0.55] {
            let c = p.center(&[x]);
            let r = conditional_risk(&p, &[x], c, &LossSpec::new(2.0, 0.0).unwrap()).unwrap();
            assert!((r - 1.0 / 32.0).abs() < 1e-12);
        }
    }

    #[test]
    fn risk_matches_power_closed_form() {
        // at t = f*(x): 2A(1/4)^{q+φ+1}/(q+φ+1) = (φ+1)2^{-2q}/(q+φ+1)
        for &phi in &[0.5, 1.0, 2.0] {
            let p = ConditionalModel::power(phi, CenterSpec::Zero).unwrap();
            for &q in &[1.0, 1.5, 2.0, 3.0] {
                let r = conditional_risk(&p, &[0.0], 0.0, &LossSpec::q_norm(q).unwrap()).unwrap();
                let exact = (phi + 1.0) * 2f64.powf(-2.0 * q) / (q + phi + 1.0);
                assert!((r - exact).abs() < 1e-11, "phi={phi} q={q}");
            }
        }
    }

    #[test]
    fn targets_of_symmetric_models() {
        for m in all_models() {
            for &x in &[0.2, 0.71] {
                let c = m.center(&[x]);
                for &q in &[1.0, 1.5, 2.0] {
                    let t = target(&m, &[x], &LossSpec::q_norm(q).unwrap()).unwrap();
                    assert!((t - c).abs() < 1e-8, "{:?} q={q}: {t} vs {c}", m.noise());
                }
            }
        }
        let p = ConditionalModel::power(1.0, CenterSpec::Default { dim: 1 }).unwrap();
        let t0 = target(&p, &[0.4], &LossSpec::q_norm(1.5).unwrap()).unwrap();
        let te = target(&p, &[0.4], &LossSpec::new(1.5, 0.1).unwrap()).unwrap();
        assert!((te - t0).abs() <= 0.1);
        assert!(target(&p, &[0.4], &LossSpec::new(1.5, 0.6).unwrap()).is_err());
    }

    #[test]
    fn noise_type_examples() {
        let p = noise_type(&ConditionalModel::power(1.0, CenterSpec::Zero).unwrap());
        assert_eq!((p.p, p.w, p.a, p.b), (f64::INFINITY, 2.0, 0.25, 8.0));
        assert!((p.bound_norm - 2.0).abs() < 1e-15);
        let sigma = 0.1;
        let g = noise_type(&ConditionalModel::gaussian(sigma, CenterSpec::Zero).unwrap());
        assert_eq!((g.w, g.a), (1.0, sigma));
        assert!((g.b - (-0.5f64).exp() / ((2.0 * PI).sqrt() * sigma)).abs() < 1e-14);
        assert!((g.bound_norm - 4.132_731_354_122_493).abs() < 1e-9);
        let u = noise_type(&ConditionalModel::uniform(0.2, CenterSpec::Zero).unwrap());
        assert_eq!((u.w, u.a), (1.0, 0.2));
        assert!((u.b - 2.5).abs() < 1e-15);
    }

    #[test]
    fn uniform_mass_is_linear() {
        let m = ConditionalModel::uniform(0.2, CenterSpec::Zero).unwrap();
        for &s in &[0.01, 0.1, 0.2] {
            let q = m
                .expect(&[0.0], |y| if (0.0..=s).contains(&y) { 1.0 } else { 0.0 }, &[s], &QuadOptions::default())
                .unwrap();
            assert!((q - s / 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let m = ConditionalModel::power(1.0, CenterSpec::Default { dim: 1 }).unwrap();
        let d = Design::Uniform { dim: 1 };
        let a = sample_dataset(&m, &d, 200, 9).unwrap();
        let b = sample_dataset(&m, &d, 200, 9).unwrap();
        assert_eq!(a, b);
        let c = sample_dataset(&m, &d, 200, 10).unwrap();
        assert_ne!(a.ys, c.ys);
        for (x, y) in a.xs.iter().zip(&a.ys) {
            assert!((y - m.center(x)).abs() <= 0.25 + 1e-15);
            assert!(y.abs() <= 0.5);
        }
        assert!(sample_dataset(&m, &d, 0, 1).is_err());
        assert!(sample_dataset(&m, &Design::Uniform { dim: 0 }, 3, 1).is_err());
        assert!(sample_dataset(&m, &Design::Uniform { dim: 2 }, 3, 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = ConditionalModel::uniform(0.2, CenterSpec::Default { dim: 2 }).unwrap();
        let d = sample_dataset(&m, &Design::Uniform { dim: 2 }, 17, 3).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_0,x_1,y\n"));
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.xs, d.xs);
        assert_eq!(back.ys, d.ys);
        assert!(Dataset::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn offset_risk_matches_conditional_quadrature() {
        let opts = QuadOptions::default();
        for m in all_models() {
            let m2 = m.expect(&[0.0], |y| (y - m.center(&[0.0])).powi(2), &[], &opts).unwrap();
            assert!((m.offset_second_moment() - m2).abs() < 1e-12, "{:?}", m.noise());
            for &(q, eps) in &[(2.0, 0.0), (1.0, 0.0), (1.5, 0.05), (3.0, 0.1), (2.0, 0.1)] {
                let spec = LossSpec::new(q, eps).unwrap();
                for &x in &[0.1, 0.6] {
                    for &d in &[-0.3, -0.05, 0.0, 0.12] {
                        let t = m.center(&[x]) + d;
                        let direct = conditional_risk(&m, &[x], t, &spec).unwrap();
                        assert!((m.offset_risk(d, &spec).unwrap() - direct).abs() < 1e-10);
                        let h = 1e-5;
                        let fd = (conditional_risk(&m, &[x], t + h, &spec).unwrap()
                            - conditional_risk(&m, &[x], t - h, &spec).unwrap())
                            / (2.0 * h);
                        assert!((m.offset_risk_derivative(d, &spec).unwrap() - fd).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn excess_square_closed_form() {
        let opts = QuadOptions::default();
        for m in all_models() {
            for &d in &[-0.4, 0.03, 0.2] {
                let c = m.center(&[0.5]);
                let direct = m
                    .expect(&[0.5], |y| ((y - c - d).powi(2) - (y - c).powi(2)).powi(2), &[], &opts)
                    .unwrap();
                assert!((m.offset_excess_square(d, 2.0).unwrap() - direct).abs() < 1e-12);
                let direct3 = m
                    .expect(&[0.5], |y| ((y - c - d).abs().powi(3) - (y - c).abs().powi(3)).powi(2), &[c + d], &opts)
                    .unwrap();
                assert!((m.offset_excess_square(d, 3.0).unwrap() - direct3).abs() < 1e-12);
            }
        }
    }
}
