//! Population quantities, theory constants and the rate-exponent calculator.
//!
//! Expectations over `x` are Monte-Carlo averages with standard errors; the
//! conditional integrals over `y` are deterministic. Every model is a
//! location family, so those integrals depend on `x` only through the
//! displacement `f(x) − f*(x)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::ChebTable;
use crate::kernel::{gram, KernelSpec};
use crate::loss::LossSpec;
use crate::models::{noise_type, ConditionalModel, Design};
use crate::solver::{solve, PopulationTerm, SolverOptions};
use crate::util::{maybe_inf, ols};

pub const DEFAULT_N_MC: usize = 200_000;
pub const DEFAULT_N_QUAD: usize = 4096;
pub const DEFAULT_XI: f64 = 1e-3;

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl McEstimate {
    fn from_samples(vals: &[f64]) -> McEstimate {
        let n = vals.len();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let std_err = if n > 1 {
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        McEstimate {
            value: mean,
            std_err,
            samples: n,
        }
    }
}

fn mc_points(design: &Design, n_mc: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n_mc == 0 {
        return Err(Error::invalid("n_mc", "must be >= 1"));
    }
    design.sample_points(n_mc, seed)
}

/// `f(x) − f*(x)` over a Monte-Carlo sample of the design.
fn displacements<F>(f: &F, model: &ConditionalModel, design: &Design, n_mc: usize, seed: u64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let points = mc_points(design, n_mc, seed)?;
    if let Some(p) = points.first() {
        model.check_point(p)?;
    }
    let d: Vec<f64> = points.par_iter().map(|x| f(x) - model.center(x)).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "function values" });
    }
    Ok(d)
}

fn map_results<G>(d: &[f64], g: G) -> Result<Vec<f64>>
where
    G: Fn(f64) -> Result<f64> + Sync,
{
    d.par_iter().map(|&v| g(v)).collect()
}

const TABLE_MIN: usize = 4096;
const TABLE_TOL: f64 = 1e-12;

/// `g` at every displacement. Large samples evaluate a Chebyshev table of
/// `g` built from direct evaluations instead of integrating once per point.
fn over_displacements<G>(d: &[f64], breaks: &[f64], g: G) -> Result<Vec<f64>>
where
    G: Fn(f64) -> Result<f64> + Sync,
{
    if d.len() < TABLE_MIN {
        return map_results(d, g);
    }
    let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let table = ChebTable::build(g, lo, hi, breaks, TABLE_TOL)?;
    Ok(d.par_iter().map(|&v| table.eval(v)).collect())
}

/// Displacements where the offset integrals may lose smoothness.
fn kinks(model: &ConditionalModel, eps: f64) -> Vec<f64> {
    let h = model.noise().halfwidth();
    let mut out = vec![0.0, -eps, eps];
    for a in [-h, h] {
        out.extend([a, a - eps, a + eps]);
    }
    out
}

/// `E^ε(f) = E_x C^ε_{q,x}(f(x))`.
pub fn generalization_error<F>(
    f: F,
    model: &ConditionalModel,
    design: &Design,
    spec: &LossSpec,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = displacements(&f, model, design, n_mc, seed)?;
    let vals = over_displacements(&d, &kinks(model, spec.eps()), |v| model.offset_risk(v, spec))?;
    Ok(McEstimate::from_samples(&vals))
}

/// `E^ε(f) − E^ε(f_q^ε)`, estimated from paired differences so the common
/// noise cancels.
pub fn excess_risk<F>(
    f: F,
    model: &ConditionalModel,
    design: &Design,
    spec: &LossSpec,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = displacements(&f, model, design, n_mc, seed)?;
    let base = model.offset_risk(0.0, spec)?;
    let vals = over_displacements(&d, &kinks(model, spec.eps()), |v| Ok(model.offset_risk(v, spec)? - base))?;
    Ok(McEstimate::from_samples(&vals))
}

/// `E|f − g|^r` for finite `r`.
pub fn lr_moment<F, G>(f: F, g: G, r: f64, design: &Design, n_mc: usize, seed: u64) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::invalid("r", format!("moment needs finite r > 0, got {r}")));
    }
    let points = mc_points(design, n_mc, seed)?;
    let vals: Vec<f64> = points.par_iter().map(|x| (f(x) - g(x)).abs().powf(r)).collect();
    Ok(McEstimate::from_samples(&vals))
}

/// `‖f − g‖_{L^r}` over the design; `r = ∞` gives the sample maximum. The
/// standard error is carried through `m ↦ m^{1/r}` by the delta method.
pub fn lr_norm<F, G>(f: F, g: G, r: f64, design: &Design, n_mc: usize, seed: u64) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    if r == f64::INFINITY {
        let points = mc_points(design, n_mc, seed)?;
        let sup = points
            .par_iter()
            .map(|x| (f(x) - g(x)).abs())
            .reduce(|| 0.0, f64::max);
        return Ok(McEstimate {
            value: sup,
            std_err: 0.0,
            samples: points.len(),
        });
    }
    let m = lr_moment(f, g, r, design, n_mc, seed)?;
    let value = m.value.powf(1.0 / r);
    let std_err = if m.value > 0.0 {
        m.std_err * m.value.powf(1.0 / r - 1.0) / r
    } else {
        0.0
    };
    Ok(McEstimate {
        value,
        std_err,
        samples: m.samples,
    })
}

/// `E[(ψ_q(f(x) − y) − ψ_q(f_q(x) − y))²]`.
pub fn loss_difference_second_moment<F>(
    f: F,
    model: &ConditionalModel,
    design: &Design,
    q: f64,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = displacements(&f, model, design, n_mc, seed)?;
    let vals = over_displacements(&d, &kinks(model, 0.0), |v| model.offset_excess_square(v, q))?;
    Ok(McEstimate::from_samples(&vals))
}

/// `C_r = 2^{(q−1)/(q+w)} q^{−1/(q+w)} (q+w)^{1/(q+w)} ‖(b a^w)^{−1}‖^{1/(q+w)}`.
/// `p` enters only through `bound_norm`.
pub fn comparison_constant(q: f64, w: f64, _p: f64, bound_norm: f64) -> f64 {
    let s = q + w;
    2f64.powf((q - 1.0) / s) * q.powf(-1.0 / s) * s.powf(1.0 / s) * bound_norm.powf(1.0 / s)
}

/// `C_θ = C_r² + 2^{2−r}(1 + ‖f_q‖_∞^{2−r}) C_r^r`, with `0^0 = 1`.
pub fn variance_constant(c_r: f64, r: f64, sup_fq: f64) -> f64 {
    c_r * c_r + 2f64.powf(2.0 - r) * (1.0 + sup_fq.powf(2.0 - r)) * c_r.powf(r)
}

/// `θ = min{2/(q+w), p/(p+1)}` and `r = p(q+w)/(p+1)`, with the `p → ∞`
/// limits `1` and `q+w`.
pub fn theta_r(q: f64, w: f64, p: f64) -> (f64, f64) {
    let s = q + w;
    if p.is_infinite() {
        ((2.0 / s).min(1.0), s)
    } else {
        ((2.0 / s).min(p / (p + 1.0)), p * s / (p + 1.0))
    }
}

fn default_beta() -> f64 {
    1.0
}

fn default_xi() -> f64 {
    DEFAULT_XI
}

fn infinity() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub q: f64,
    pub w: f64,
    #[serde(with = "maybe_inf", default = "infinity")]
    pub p: f64,
    pub alpha: f64,
    #[serde(with = "maybe_inf")]
    pub eta: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub k: f64,
    #[serde(default = "default_xi")]
    pub xi: f64,
}

impl RateParams {
    /// The schedule `λ = ε = T^{−(q+φ+1)/(2(q+φ))}` for the power model.
    pub fn power_schedule(q: f64, phi: f64) -> RateParams {
        let alpha = (q + phi + 1.0) / (2.0 * (q + phi));
        RateParams {
            q,
            w: phi + 1.0,
            p: f64::INFINITY,
            alpha,
            eta: alpha,
            beta: 1.0,
            k: 0.0,
            xi: DEFAULT_XI,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, bool, &str); 8] = [
            ("q", self.q.is_finite() && self.q >= 1.0, "must be finite and >= 1"),
            ("w", self.w.is_finite() && self.w > 0.0, "must be finite and > 0"),
            ("p", self.p > 0.0 && !self.p.is_nan(), "must be > 0 or inf"),
            ("alpha", self.alpha > 0.0 && self.alpha <= 1.0, "must lie in (0, 1]"),
            ("eta", self.eta > 0.0 && !self.eta.is_nan(), "must be > 0 or inf"),
            ("beta", self.beta > 0.0 && self.beta <= 1.0, "must lie in (0, 1]"),
            ("k", self.k.is_finite() && self.k >= 0.0, "must be finite and >= 0"),
            ("xi", self.xi.is_finite() && self.xi > 0.0, "must be finite and > 0"),
        ];
        for (name, ok, reason) in checks {
            if !ok {
                return Err(Error::invalid(name, reason));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateExponent {
    pub theta: f64,
    pub r: f64,
    pub vartheta: f64,
    pub lambda_exp: f64,
    pub constraint_ok: bool,
    pub vartheta_nonnegative: bool,
    pub lambda_positive: bool,
}

/// The learning-rate exponent Λ and its side quantities. Out-of-range
/// outcomes (`ϑ < 0`, a violated constraint, `Λ ≤ 0`) are reported as flags.
pub fn rate_exponent(params: &RateParams) -> Result<RateExponent> {
    params.validate()?;
    let RateParams {
        q,
        w,
        p,
        alpha,
        eta,
        beta,
        k,
        xi,
    } = *params;
    let (theta, r) = theta_r(q, w, p);
    let vartheta = [
        (alpha - eta) / 2.0,
        alpha * (1.0 - beta) / 2.0,
        alpha / 2.0 + q * alpha * (1.0 - beta) / 4.0 - 0.5,
        alpha / 2.0 - 1.0 / (2.0 * (2.0 - theta)),
        (alpha * (2.0 + k - theta) - 1.0) * (1.0 + k) / ((2.0 + k - theta) * (2.0 + k)) + xi,
    ]
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max);
    let inner = [
        eta,
        alpha * beta,
        1.0 - q * alpha * (1.0 - beta) / 2.0,
        1.0 / (2.0 - theta),
        1.0 / (2.0 + k - theta) - k / (1.0 + k) * vartheta,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    let lambda_exp = inner / (q + w);
    let constraint_ok = k == 0.0 || vartheta < (1.0 + k) / (k * (2.0 + k - theta));
    Ok(RateExponent {
        theta,
        r,
        vartheta,
        lambda_exp,
        constraint_ok,
        vartheta_nonnegative: vartheta >= 0.0,
        lambda_positive: lambda_exp > 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DLambdaPoint {
    pub lambda: f64,
    pub d_hat: f64,
    pub rkhs_norm_sq: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DLambdaEstimate {
    pub points: Vec<DLambdaPoint>,
    /// `D̂₀` and `β̂` from a log-log fit over the positive estimates.
    pub d0: Option<f64>,
    pub beta: Option<f64>,
}

/// Midpoint grid with about `n` nodes on `[0,1]^dim`.
fn midpoint_grid(dim: usize, n: usize) -> Vec<Vec<f64>> {
    let per_axis = ((n as f64).powf(1.0 / dim as f64).round() as usize).max(1);
    let total = per_axis.pow(dim as u32);
    (0..total)
        .map(|idx| {
            let mut rest = idx;
            (0..dim)
                .map(|_| {
                    let i = rest % per_axis;
                    rest /= per_axis;
                    (i as f64 + 0.5) / per_axis as f64
                })
                .collect()
        })
        .collect()
}

/// Estimates the regularization error `D(λ)` on a deterministic quadrature
/// design: for each λ it minimizes the discretized population objective
/// (`ε = 0`) over the RKHS and reports `Ê(f_λ) − Ê(f_q) + λ‖f_λ‖²_K`.
/// Larger λ are solved first and warm-start the smaller ones.
pub fn estimate_dlambda(
    kernel: &KernelSpec,
    model: &ConditionalModel,
    design: &Design,
    q: f64,
    lambda_grid: &[f64],
    n_quad: usize,
    opts: &SolverOptions,
) -> Result<DLambdaEstimate> {
    if lambda_grid.is_empty() {
        return Err(Error::invalid("lambda_grid", "must be nonempty"));
    }
    if let Some(bad) = lambda_grid.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(Error::invalid("lambda_grid", format!("entries must be > 0, got {bad}")));
    }
    if n_quad == 0 {
        return Err(Error::invalid("n_quad", "must be >= 1"));
    }
    design.validate()?;
    let spec = LossSpec::q_norm(q)?;
    let nodes = midpoint_grid(design.dim(), n_quad);
    model.check_point(&nodes[0])?;
    let n = nodes.len();
    let g = gram(kernel, &nodes, 0.0)?;
    let data = PopulationTerm {
        model,
        centers: nodes.iter().map(|x| model.center(x)).collect(),
        weights: vec![1.0 / n as f64; n],
        loss: spec,
    };
    let base = model.offset_risk(0.0, &spec)?;

    let mut order: Vec<usize> = (0..lambda_grid.len()).collect();
    order.sort_by(|&a, &b| lambda_grid[b].total_cmp(&lambda_grid[a]));
    let mut points = vec![None; lambda_grid.len()];
    let mut warm = vec![0.0; n];
    for i in order {
        let lambda = lambda_grid[i];
        let out = solve(&g.entries, &data, lambda, vec![warm.clone()], opts)?;
        let risk = crate::solver::DataTerm::value(&data, &out.fitted)?;
        let norm: f64 = out.coeffs.iter().zip(&out.fitted).map(|(c, z)| c * z).sum::<f64>().max(0.0);
        points[i] = Some(DLambdaPoint {
            lambda,
            d_hat: (risk - base + lambda * norm).max(0.0),
            rkhs_norm_sq: norm,
            converged: out.converged,
        });
        warm = out.coeffs;
    }
    let points: Vec<DLambdaPoint> = points.into_iter().map(|p| p.expect("every grid entry solved")).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.d_hat > 0.0)
        .map(|p| (p.lambda.ln(), p.d_hat.ln()))
        .unzip();
    let (d0, beta) = if xs.len() >= 2 && xs.iter().any(|x| *x != xs[0]) {
        let (a, b, _) = ols(&xs, &ys);
        (Some(a.exp()), Some(b))
    } else {
        (None, None)
    };
    Ok(DLambdaEstimate { points, d0, beta })
}

/// One side-by-side evaluation of an inequality `lhs ≤ rhs` whose two sides
/// are Monte-Carlo estimates; `holds` compares the sides after moving each
/// underlying mean `slack_se` standard errors in the favourable direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_lower: f64,
    pub rhs_upper: f64,
    pub holds: bool,
}

struct Excess {
    d: Vec<f64>,
    excess: McEstimate,
}

fn excess_q<F>(f: &F, model: &ConditionalModel, design: &Design, q: f64, n_mc: usize, seed: u64) -> Result<Excess>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let spec = LossSpec::q_norm(q)?;
    let d = displacements(f, model, design, n_mc, seed)?;
    let base = model.offset_risk(0.0, &spec)?;
    let vals = over_displacements(&d, &kinks(model, 0.0), |v| Ok(model.offset_risk(v, &spec)? - base))?;
    Ok(Excess {
        excess: McEstimate::from_samples(&vals),
        d,
    })
}

/// `‖f − f_q‖_{L^r} ≤ C_r (E(f) − E(f_q))^{1/(q+w)}` with the model's
/// analytic noise type.
pub fn comparison_check<F>(
    f: F,
    model: &ConditionalModel,
    design: &Design,
    q: f64,
    n_mc: usize,
    seed: u64,
    slack_se: f64,
) -> Result<InequalityCheck>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let nt = noise_type(model);
    let (_, r) = theta_r(q, nt.w, nt.p);
    let c_r = comparison_constant(q, nt.w, nt.p, nt.bound_norm);
    let ex = excess_q(&f, model, design, q, n_mc, seed)?;
    let moment: Vec<f64> = ex.d.iter().map(|v| v.abs().powf(r)).collect();
    let m = McEstimate::from_samples(&moment);
    let e = ex.excess;
    let s = 1.0 / (q + nt.w);
    let lhs = m.value.powf(1.0 / r);
    let rhs = c_r * e.value.max(0.0).powf(s);
    let lhs_lower = (m.value - slack_se * m.std_err).max(0.0).powf(1.0 / r);
    let rhs_upper = c_r * (e.value + slack_se * e.std_err).max(0.0).powf(s);
    Ok(InequalityCheck {
        lhs,
        rhs,
        lhs_lower,
        rhs_upper,
        holds: lhs_lower <= rhs_upper,
    })
}

/// `E[(ψ_q(f−y) − ψ_q(f_q−y))²] ≤ C_θ (E(f) − E(f_q))^θ`.
pub fn variance_check<F>(
    f: F,
    model: &ConditionalModel,
    design: &Design,
    q: f64,
    n_mc: usize,
    seed: u64,
    slack_se: f64,
) -> Result<InequalityCheck>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let nt = noise_type(model);
    let (theta, r) = theta_r(q, nt.w, nt.p);
    let c_r = comparison_constant(q, nt.w, nt.p, nt.bound_norm);
    let c_theta = variance_constant(c_r, r, model.center_sup());
    let ex = excess_q(&f, model, design, q, n_mc, seed)?;
    let sq = over_displacements(&ex.d, &kinks(model, 0.0), |v| model.offset_excess_square(v, q))?;
    let m = McEstimate::from_samples(&sq);
    let e = ex.excess;
    Ok(InequalityCheck {
        lhs: m.value,
        rhs: c_theta * e.value.max(0.0).powf(theta),
        lhs_lower: (m.value - slack_se * m.std_err).max(0.0),
        rhs_upper: c_theta * (e.value + slack_se * e.std_err).max(0.0).powf(theta),
        holds: m.value - slack_se * m.std_err <= c_theta * (e.value + slack_se * e.std_err).max(0.0).powf(theta),
    })
}

/// `E(f) − E(f_q) ≤ E^ε(f) − E^ε(f_q^ε) + q(‖f‖_∞^{q−1} + 1)ε`, with the sup
/// norm taken over the Monte-Carlo sample.
pub fn excess_transfer_check<F>(
    f: F,
    model: &ConditionalModel,
    design: &Design,
    spec: &LossSpec,
    n_mc: usize,
    seed: u64,
    slack_se: f64,
) -> Result<InequalityCheck>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let plain = LossSpec::q_norm(spec.q())?;
    let points = mc_points(design, n_mc, seed)?;
    model.check_point(&points[0])?;
    let vals: Vec<(f64, f64)> = points
        .par_iter()
        .map(|x| (f(x), model.center(x)))
        .collect();
    let sup = vals.iter().fold(0.0f64, |m, (fx, _)| m.max(fx.abs()));
    let base0 = model.offset_risk(0.0, &plain)?;
    let base_eps = model.offset_risk(0.0, spec)?;
    let d: Vec<f64> = vals.iter().map(|(fx, c)| fx - c).collect();
    let diffs = over_displacements(&d, &kinks(model, spec.eps()), |d| {
        Ok(model.offset_risk(d, &plain)? - base0 - (model.offset_risk(d, spec)? - base_eps))
    })?;
    let m = McEstimate::from_samples(&diffs);
    let bound = spec.q() * (sup.powf(spec.q() - 1.0) + 1.0) * spec.eps();
    let quad_slack = 1e-9;
    Ok(InequalityCheck {
        lhs: m.value,
        rhs: bound,
        lhs_lower: m.value - slack_se * m.std_err,
        rhs_upper: bound + quad_slack,
        holds: m.value - slack_se * m.std_err <= bound + quad_slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::CenterSpec;

    #[test]
    fn comparison_constant_examples() {
        assert!((comparison_constant(1.0, 1.0, f64::INFINITY, 1.0) - 2f64.sqrt()).abs() < 1e-15);
        assert!((comparison_constant(2.0, 1.0, f64::INFINITY, 1.0) - 3f64.cbrt()).abs() < 1e-15);
        let m = ConditionalModel::gaussian(0.1, CenterSpec::Zero).unwrap();
        let nt = noise_type(&m);
        assert!((nt.bound_norm - 4.132731354122493).abs() < 1e-12);
    }

    #[test]
    fn variance_constant_examples() {
        assert_eq!(variance_constant(1.0, 2.0, 1.0), 3.0);
        // 0^0 = 1
        assert_eq!(variance_constant(1.0, 2.0, 0.0), 3.0);
        assert!(variance_constant(1.2, 3.0, 0.25) > variance_constant(1.1, 3.0, 0.25));
    }

    #[test]
    fn theta_r_examples() {
        assert_eq!(theta_r(2.0, 1.0, f64::INFINITY), (2.0 / 3.0, 3.0));
        assert_eq!(theta_r(1.0, 1.0, f64::INFINITY), (1.0, 2.0));
        assert_eq!(theta_r(1.0, 1.0, 1.0), (0.5, 1.0));
    }

    #[test]
    fn power_schedule_exponent() {
        for &q in &[1.5, 2.0, 3.0] {
            for &phi in &[0.5, 1.0, 2.0] {
                let e = rate_exponent(&RateParams::power_schedule(q, phi)).unwrap();
                assert!((e.lambda_exp - 1.0 / (2.0 * (q + phi))).abs() < 1e-12);
                assert!(e.constraint_ok && e.lambda_positive);
            }
        }
    }

    #[test]
    fn flags_instead_of_errors() {
        let p = RateParams {
            q: 2.0,
            w: 1.0,
            p: f64::INFINITY,
            alpha: 0.1,
            eta: 5.0,
            beta: 1.0,
            k: 0.0,
            xi: 1e-3,
        };
        let e = rate_exponent(&p).unwrap();
        assert!(e.vartheta_nonnegative && e.lambda_positive);
        let steep = RateParams { q: 3.0, alpha: 1.0, beta: 0.2, ..p.clone() };
        let e = rate_exponent(&steep).unwrap();
        assert!(!e.lambda_positive);
        assert!((e.lambda_exp - (1.0 - 3.0 * 0.8 / 2.0) / 4.0).abs() < 1e-15);
        let bad = RateParams { alpha: 1.5, ..p.clone() };
        assert!(rate_exponent(&bad).is_err());
        let k = RateParams { k: 2.0, alpha: 1.0, ..p };
        let e = rate_exponent(&k).unwrap();
        assert_eq!(e.constraint_ok, e.vartheta < 3.0 / (2.0 * (4.0 - e.theta)));
    }

    #[test]
    fn rate_params_json() {
        let p: RateParams =
            serde_json::from_str(r#"{"q": 2, "w": 1, "alpha": 1, "eta": "inf"}"#).unwrap();
        assert_eq!(p.p, f64::INFINITY);
        assert_eq!(p.eta, f64::INFINITY);
        assert_eq!(p.beta, 1.0);
        assert_eq!(p.xi, DEFAULT_XI);
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains(r#""eta":"inf""#));
    }

    #[test]
    fn generalization_error_examples() {
        let design = Design::Uniform { dim: 1 };
        let m = ConditionalModel::power(1.0, CenterSpec::Default { dim: 1 }).unwrap();
        let e = generalization_error(|x| m.center(x), &m, &design, &LossSpec::q_norm(2.0).unwrap(), 1000, 1)
            .unwrap();
        assert!((e.value - 0.03125).abs() <= 3.0 * e.std_err + 1e-15);

        let u = ConditionalModel::uniform(0.5, CenterSpec::Zero).unwrap();
        let spec = LossSpec::new(1.5, 0.5).unwrap();
        let e = generalization_error(|x| u.center(x), &u, &design, &spec, 100, 2).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn lr_norm_examples() {
        let design = Design::Uniform { dim: 2 };
        let f = |x: &[f64]| x[0] * x[1];
        let zero = lr_norm(f, f, 2.0, &design, 500, 3).unwrap();
        assert_eq!(zero.value, 0.0);
        for &r in &[1.0, 2.5, f64::INFINITY] {
            let off = lr_norm(|x: &[f64]| f(x) + 0.2, f, r, &design, 500, 3).unwrap();
            assert!((off.value - 0.2).abs() < 1e-12);
        }
        let n1 = lr_norm(|x: &[f64]| x[0], |_: &[f64]| 0.0, 1.0, &design, 5000, 4).unwrap();
        let n3 = lr_norm(|x: &[f64]| x[0], |_: &[f64]| 0.0, 3.0, &design, 5000, 4).unwrap();
        assert!(n1.value <= n3.value + 3.0 * n3.std_err);
    }

    #[test]
    fn midpoint_grid_shape() {
        let g = midpoint_grid(2, 100);
        assert_eq!(g.len(), 100);
        assert!(g.iter().all(|p| p.iter().all(|&v| v > 0.0 && v < 1.0)));
        assert_eq!(midpoint_grid(1, 4), vec![vec![0.125], vec![0.375], vec![0.625], vec![0.875]]);
    }
}
