//! Regularized empirical risk minimization in representer coefficients.
//!
//! For a sample `(x_i, y_i)` the solver minimizes
//!
//! ```text
//! F(c) = (1/T) Σ_i ψ_q^ε((Gc)_i − y_i) + λ cᵀGc
//! ```
//!
//! over `c ∈ R^T`, where `G` is the kernel Gram matrix of the inputs. Writing
//! `f = Σ c_i K(x_i, ·)`, every element of the span-closure can be pushed onto
//! the sample points without changing the data term, so this is the full
//! problem over the RKHS.
//!
//! The main loop is an accelerated gradient method in the RKHS metric: the
//! step direction is `g̃ = ∇_z L(Gc) + 2λc`, whose image `G g̃` is the
//! Euclidean gradient. Step sizes come from backtracking, momentum restarts
//! whenever the objective would rise, and the trace is therefore monotone.
//! Small problems finish with damped Newton steps on the same objective. For
//! `q = 1` the loss is replaced by its Moreau envelope with parameter μ.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{gram, GramMatrix, KernelExpansion, KernelSpec};
use crate::loss::{tube_excess, LossSpec};
use crate::models::{ConditionalModel, Dataset};

/// Problems up to this size get a Newton polish after the first-order phase.
const NEWTON_MAX_SIZE: usize = 512;
const FIRST_ORDER_BUDGET_SMALL: usize = 500;
const STALL_LIMIT: usize = 50;
const CURVATURE_CAP: f64 = 1e12;
const CONTINUATION_START: f64 = 1e-2;
const REFRESH_PERIOD: usize = 100;

pub const DEFAULT_SUPPORT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "coeffs", rename_all = "snake_case")]
pub enum Init {
    Zeros,
    Warm(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub obj_tol: f64,
    pub q1_smoothing: f64,
    pub init: Init,
    pub support_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 5000,
            grad_tol: 1e-8,
            obj_tol: 1e-12,
            q1_smoothing: 1e-6,
            init: Init::Zeros,
            support_tol: DEFAULT_SUPPORT_TOL,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::invalid("max_iters", "must be >= 1"));
        }
        for (name, v) in [("grad_tol", self.grad_tol), ("obj_tol", self.obj_tol)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if !(self.q1_smoothing.is_finite() && self.q1_smoothing >= 0.0) {
            return Err(Error::invalid("q1_smoothing", "must be >= 0"));
        }
        if !(self.support_tol.is_finite() && self.support_tol >= 0.0) {
            return Err(Error::invalid("support_tol", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub q: f64,
    pub eps: f64,
    pub lambda: f64,
    /// Final objective under the unsmoothed loss.
    pub objective: f64,
    /// Moreau parameter when `q = 1`, otherwise zero.
    pub smoothing: f64,
    /// `‖G g̃‖_∞` at the returned coefficients.
    pub certificate: f64,
    pub kappa: f64,
    pub support_tol: f64,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub expansion: KernelExpansion,
    pub objective_trace: Vec<f64>,
    /// `f(x_i) − y_i`.
    pub residuals: Vec<f64>,
    pub support: Vec<usize>,
    pub rkhs_norm_sq: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostics: FitDiagnostics,
}

#[derive(Serialize)]
struct FitRecord<'a> {
    coeffs: &'a [f64],
    residuals: &'a [f64],
    support: &'a [usize],
    objective_trace: &'a [f64],
    converged: bool,
    iterations: usize,
    rkhs_norm_sq: f64,
    kernel: &'a KernelSpec,
    diagnostics: &'a FitDiagnostics,
}

impl FitResult {
    pub fn coeffs(&self) -> &[f64] {
        &self.expansion.coeffs
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(FitRecord {
            coeffs: &self.expansion.coeffs,
            residuals: &self.residuals,
            support: &self.support,
            objective_trace: &self.objective_trace,
            converged: self.converged,
            iterations: self.iterations,
            rkhs_norm_sq: self.rkhs_norm_sq,
            kernel: &self.expansion.kernel,
            diagnostics: &self.diagnostics,
        })?)
    }

    /// `π(f)(x)`.
    pub fn predict_projected(&self, x: &[f64]) -> f64 {
        project_value(self.expansion.eval_unchecked(x))
    }
}

/// The data term `L(z)` of the objective as a function of fitted values.
pub(crate) trait DataTerm: Sync {
    fn value(&self, z: &[f64]) -> Result<f64>;
    fn gradient(&self, z: &[f64], out: &mut [f64]) -> Result<()>;
    fn curvature(&self, z: &[f64], out: &mut [f64]) -> Result<()>;

    /// `value(zc) − value(z)`.
    fn change(&self, z: &[f64], zc: &[f64]) -> Result<f64> {
        Ok(self.value(zc)? - self.value(z)?)
    }
}

/// `(1/T) Σ h(z_i − y_i)` with `h` the loss, Moreau-smoothed when `q = 1`.
pub(crate) struct EmpiricalTerm<'a> {
    ys: &'a [f64],
    loss: LossSpec,
    smoothing: f64,
    weight: f64,
}

impl<'a> EmpiricalTerm<'a> {
    pub(crate) fn new(ys: &'a [f64], loss: LossSpec, q1_smoothing: f64) -> Self {
        EmpiricalTerm {
            ys,
            loss,
            smoothing: if loss.q() == 1.0 { q1_smoothing } else { 0.0 },
            weight: 1.0 / ys.len() as f64,
        }
    }

    fn h(&self, r: f64) -> f64 {
        if self.smoothing > 0.0 {
            let v = tube_excess(r, self.loss.eps());
            let mu = self.smoothing;
            if v <= mu {
                v * v / (2.0 * mu)
            } else {
                v - 0.5 * mu
            }
        } else {
            self.loss.value(r)
        }
    }

    fn dh(&self, r: f64) -> f64 {
        if self.smoothing > 0.0 {
            let v = tube_excess(r, self.loss.eps());
            (v / self.smoothing).min(1.0).copysign(r) * f64::from(v > 0.0)
        } else {
            self.loss.derivative(r)
        }
    }

    /// `h(r + δ) − h(r)` without cancellation when both points sit on the
    /// same smooth piece.
    fn h_change(&self, r: f64, delta: f64) -> f64 {
        let eps = self.loss.eps();
        let rc = r + delta;
        let (v, vc) = (tube_excess(r, eps), tube_excess(rc, eps));
        let dv = if v > 0.0 && vc > 0.0 && (r > 0.0) == (rc > 0.0) {
            if r > 0.0 { delta } else { -delta }
        } else {
            return self.h(rc) - self.h(r);
        };
        if self.smoothing > 0.0 {
            let mu = self.smoothing;
            match (v <= mu, vc <= mu) {
                (true, true) => (v + vc) * dv / (2.0 * mu),
                (false, false) => dv,
                _ => self.h(rc) - self.h(r),
            }
        } else {
            let q = self.loss.q();
            if q == 2.0 {
                (v + vc) * dv
            } else {
                v.powf(q) * (q * (dv / v).ln_1p()).exp_m1()
            }
        }
    }

    fn d2h(&self, r: f64) -> f64 {
        if self.smoothing > 0.0 {
            let v = tube_excess(r, self.loss.eps());
            if v > 0.0 && v < self.smoothing {
                1.0 / self.smoothing
            } else {
                0.0
            }
        } else {
            self.loss.second_derivative(r)
        }
    }
}

impl DataTerm for EmpiricalTerm<'_> {
    fn value(&self, z: &[f64]) -> Result<f64> {
        let s: f64 = z.iter().zip(self.ys).map(|(zi, yi)| self.h(zi - yi)).sum();
        Ok(s * self.weight)
    }

    fn gradient(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        for ((o, zi), yi) in out.iter_mut().zip(z).zip(self.ys) {
            *o = self.weight * self.dh(zi - yi);
        }
        Ok(())
    }

    fn curvature(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        for ((o, zi), yi) in out.iter_mut().zip(z).zip(self.ys) {
            *o = self.weight * self.d2h(zi - yi).min(CURVATURE_CAP);
        }
        Ok(())
    }

    fn change(&self, z: &[f64], zc: &[f64]) -> Result<f64> {
        let s: f64 = z
            .iter()
            .zip(zc)
            .zip(self.ys)
            .map(|((zi, ci), yi)| self.h_change(zi - yi, ci - zi))
            .sum();
        Ok(s * self.weight)
    }
}

/// `Σ_j w_j C_{x_j}(z_j)`: the population risk discretized on quadrature
/// nodes. Each conditional risk is evaluated through the displacement from
/// the node's center, `z_j − f*(x_j)`.
pub(crate) struct PopulationTerm<'a> {
    pub model: &'a ConditionalModel,
    pub centers: Vec<f64>,
    pub weights: Vec<f64>,
    pub loss: LossSpec,
}

impl PopulationTerm<'_> {
    fn map_nodes<F>(&self, z: &[f64], f: F) -> Result<Vec<f64>>
    where
        F: Fn(f64) -> Result<f64> + Sync,
    {
        z.par_iter()
            .zip(self.centers.par_iter())
            .zip(self.weights.par_iter())
            .map(|((&t, &c), &w)| f(t - c).map(|v| v * w))
            .collect()
    }
}

impl DataTerm for PopulationTerm<'_> {
    fn value(&self, z: &[f64]) -> Result<f64> {
        let vals = self.map_nodes(z, |d| self.model.offset_risk(d, &self.loss))?;
        Ok(vals.iter().sum())
    }

    fn gradient(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        let vals = self.map_nodes(z, |d| self.model.offset_risk_derivative(d, &self.loss))?;
        out.copy_from_slice(&vals);
        Ok(())
    }

    fn curvature(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        let h = 1e-6;
        let vals = self.map_nodes(z, |d| {
            let up = self.model.offset_risk_derivative(d + h, &self.loss)?;
            let down = self.model.offset_risk_derivative(d - h, &self.loss)?;
            Ok(((up - down) / (2.0 * h)).clamp(0.0, CURVATURE_CAP))
        })?;
        out.copy_from_slice(&vals);
        Ok(())
    }
}

pub(crate) struct EngineOutput {
    pub coeffs: Vec<f64>,
    pub fitted: Vec<f64>,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub certificate: f64,
    pub newton_steps: usize,
}

fn matvec(g: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let out = g * DVector::from_column_slice(v);
    out.data.into()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn axpy(base: &[f64], scale: f64, dir: &[f64]) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b + scale * d).collect()
}

struct Engine<'a, D: DataTerm> {
    g: &'a DMatrix<f64>,
    data: &'a D,
    lambda: f64,
    grad_tol: f64,
    functional_tol: f64,
}

impl<D: DataTerm> Engine<'_, D> {
    fn objective(&self, c: &[f64], z: &[f64]) -> Result<f64> {
        let f = self.data.value(z)? + self.lambda * dot(c, z);
        if !f.is_finite() {
            return Err(Error::NonFinite { context: "objective" });
        }
        Ok(f)
    }

    /// `g̃ = ∇L(z) + 2λc`.
    fn functional_gradient(&self, c: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let mut gt = vec![0.0; c.len()];
        self.data.gradient(z, &mut gt)?;
        for (g, ci) in gt.iter_mut().zip(c) {
            *g += 2.0 * self.lambda * ci;
        }
        Ok(gt)
    }

    fn stationary(&self, gt: &[f64], ggt: &[f64]) -> bool {
        max_abs(ggt) <= self.grad_tol && max_abs(gt) <= self.functional_tol
    }

    /// Objective change from `(c, z)` to `(c + s·dir, zc)` where `zc ≈ z + s·G dir`.
    fn change(&self, z: &[f64], dir: &[f64], zdir: &[f64], s: f64, zc: &[f64]) -> Result<f64> {
        let d = self.data.change(z, zc)? + self.lambda * s * (2.0 * dot(dir, z) + s * dot(dir, zdir));
        if !d.is_finite() {
            return Err(Error::NonFinite { context: "objective" });
        }
        Ok(d)
    }

    fn run(&self, c0: Vec<f64>, max_iters: usize, obj_tol: f64, newton: bool) -> Result<EngineOutput> {
        let n = c0.len();
        let mut c = c0;
        let mut z = matvec(self.g, &c);
        // objective values are carried forward by accurately computed changes
        let mut f = self.objective(&c, &z)?;
        let mut trace = vec![f];
        let mut c_prev = c.clone();
        let mut z_prev = z.clone();
        let mut momentum = 1.0f64;
        let mut beta = 0.0f64;
        let mut lip = 1.0f64;
        let mut iterations = 0;
        let mut stalls = 0;
        let mut done = false;
        let mut refreshes = 0;

        let first_order_budget = if newton {
            max_iters.min(FIRST_ORDER_BUDGET_SMALL)
        } else {
            max_iters
        };

        while iterations < first_order_budget {
            if iterations > 0 && iterations % REFRESH_PERIOD == 0 {
                z = matvec(self.g, &c);
                z_prev = matvec(self.g, &c_prev);
            }
            let (y, zy, dy) = if beta > 0.0 {
                let m: Vec<f64> = c.iter().zip(&c_prev).map(|(a, b)| a - b).collect();
                let zm: Vec<f64> = z.iter().zip(&z_prev).map(|(a, b)| a - b).collect();
                let y = axpy(&c, beta, &m);
                let zy = axpy(&z, beta, &zm);
                let dy = self.change(&z, &m, &zm, beta, &zy)?;
                (y, zy, dy)
            } else {
                (c.clone(), z.clone(), 0.0)
            };
            let gt = self.functional_gradient(&y, &zy)?;
            let ggt = matvec(self.g, &gt);
            if self.stationary(&gt, &ggt) && dy <= 0.0 {
                if beta > 0.0 {
                    c = y;
                    f += dy;
                    trace.push(f);
                }
                // confirm against exact fitted values before stopping
                z = matvec(self.g, &c);
                let gt = self.functional_gradient(&c, &z)?;
                if self.stationary(&gt, &matvec(self.g, &gt)) || refreshes >= 5 {
                    done = true;
                    break;
                }
                refreshes += 1;
                c_prev.clone_from(&c);
                z_prev.clone_from(&z);
                momentum = 1.0;
                beta = 0.0;
                continue;
            }
            let gnorm = dot(&gt, &ggt);
            if !(gnorm > 0.0) {
                break;
            }
            iterations += 1;

            let neg: Vec<f64> = gt.iter().map(|v| -v).collect();
            let zneg: Vec<f64> = ggt.iter().map(|v| -v).collect();
            let mut accepted = None;
            for _ in 0..80 {
                let step = 1.0 / lip;
                let cand = axpy(&y, step, &neg);
                let zc = axpy(&zy, step, &zneg);
                let dc = self.change(&zy, &neg, &zneg, step, &zc)?;
                if dc <= -0.5 * step * gnorm {
                    accepted = Some((cand, zc, dy + dc));
                    break;
                }
                lip *= 2.0;
            }
            let Some((cand, zc, total)) = accepted else {
                break;
            };

            if total <= 0.0 {
                // gradient-based restart test: momentum direction opposes descent
                let delta: Vec<f64> = cand.iter().zip(&c).map(|(a, b)| a - b).collect();
                let restart = dot(&ggt, &delta) > 0.0;
                c_prev = std::mem::replace(&mut c, cand);
                z_prev = std::mem::replace(&mut z, zc);
                f += total;
                trace.push(f);
                if restart {
                    momentum = 1.0;
                    beta = 0.0;
                } else {
                    let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
                    beta = (momentum - 1.0) / next;
                    momentum = next;
                }
                lip *= 0.9;
                if -total <= obj_tol * f.abs().max(f64::MIN_POSITIVE) {
                    stalls += 1;
                    if stalls >= STALL_LIMIT {
                        break;
                    }
                } else {
                    stalls = 0;
                }
            } else if beta > 0.0 {
                momentum = 1.0;
                beta = 0.0;
                c_prev.clone_from(&c);
                z_prev.clone_from(&z);
            } else {
                break;
            }
        }

        let mut newton_steps = 0;
        let mut newton_stalls = 0;
        if newton && !done {
            while iterations < max_iters {
                z = matvec(self.g, &c);
                let gt = self.functional_gradient(&c, &z)?;
                let ggt = matvec(self.g, &gt);
                if self.stationary(&gt, &ggt) {
                    break;
                }
                let Some(step) = self.newton_direction(&z, &gt)? else {
                    break;
                };
                let (dir, slope) = {
                    let slope = dot(&ggt, &step);
                    if slope < 0.0 {
                        (step, slope)
                    } else {
                        let slope = -dot(&gt, &ggt);
                        (gt.iter().map(|v| -v).collect(), slope)
                    }
                };
                if !(slope < 0.0) {
                    break;
                }
                let zdir = matvec(self.g, &dir);
                let mut s = 1.0;
                let mut accepted = None;
                for _ in 0..60 {
                    let cand = axpy(&c, s, &dir);
                    let zc = axpy(&z, s, &zdir);
                    let dc = self.change(&z, &dir, &zdir, s, &zc)?;
                    if dc <= 1e-4 * s * slope {
                        accepted = Some((cand, dc));
                        break;
                    }
                    // changes at rounding level: use the stationarity measure as the merit
                    if dc <= 4.0 * f64::EPSILON * f.abs() {
                        let gc = self.functional_gradient(&cand, &zc)?;
                        if max_abs(&matvec(self.g, &gc)) < max_abs(&ggt) {
                            accepted = Some((cand, dc.min(0.0)));
                            break;
                        }
                    }
                    s *= 0.5;
                }
                let Some((cand, dc)) = accepted else {
                    break;
                };
                iterations += 1;
                newton_steps += 1;
                c = cand;
                f += dc;
                trace.push(f);
                if -dc <= obj_tol * f.abs() {
                    newton_stalls += 1;
                    if newton_stalls >= STALL_LIMIT {
                        break;
                    }
                } else {
                    newton_stalls = 0;
                }
            }
        }

        // fitted values from scratch rather than the running updates
        let fitted = matvec(self.g, &c);
        let gt = self.functional_gradient(&c, &fitted)?;
        let certificate = max_abs(&matvec(self.g, &gt));
        debug_assert_eq!(fitted.len(), n);
        Ok(EngineOutput {
            converged: certificate <= self.grad_tol,
            coeffs: c,
            fitted,
            trace,
            iterations,
            certificate,
            newton_steps,
        })
    }

    /// Solves `(diag(d) G + 2λ I) Δ = −g̃`.
    fn newton_direction(&self, z: &[f64], gt: &[f64]) -> Result<Option<Vec<f64>>> {
        let n = gt.len();
        let mut d = vec![0.0; n];
        self.data.curvature(z, &mut d)?;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            // rows scaled by 1/(1 + d_i) to keep the pivots comparable
            let scale = 1.0 / (1.0 + d[i]);
            for j in 0..n {
                m[(i, j)] = d[i] * self.g[(i, j)] * scale;
            }
            m[(i, i)] += 2.0 * self.lambda * scale;
        }
        let rhs = DVector::from_iterator(n, gt.iter().zip(&d).map(|(g, di)| -g / (1.0 + di)));
        let sol = m.lu().solve(&rhs);
        Ok(sol
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .map(|s| s.data.into()))
    }
}

/// Runs the engine from whichever of `starts` (and zero) has the lowest objective.
pub(crate) fn solve<D: DataTerm>(
    g: &DMatrix<f64>,
    data: &D,
    lambda: f64,
    starts: Vec<Vec<f64>>,
    opts: &SolverOptions,
) -> Result<EngineOutput> {
    let engine = Engine {
        g,
        data,
        lambda,
        grad_tol: opts.grad_tol,
        functional_tol: opts.grad_tol * lambda.min(1.0),
    };
    let n = g.nrows();
    let mut best = vec![0.0; n];
    let mut best_f = engine.objective(&best, &best)?;
    for c in starts {
        if c.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: c.len() });
        }
        if c.iter().all(|&v| v == 0.0) {
            continue;
        }
        let f = engine.objective(&c, &matvec(g, &c))?;
        if f < best_f {
            best = c;
            best_f = f;
        }
    }
    engine.run(best, opts.max_iters, opts.obj_tol, n <= NEWTON_MAX_SIZE)
}

/// For `q = 1`: solves a sequence of more lightly smoothed problems and
/// returns the last solution as a candidate start for the final one.
fn smoothing_continuation(
    g: &DMatrix<f64>,
    ys: &[f64],
    spec: &LossSpec,
    lambda: f64,
    init: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, usize)> {
    let mut stages = Vec::new();
    let mut mu = CONTINUATION_START;
    while mu > 2.0 * opts.q1_smoothing {
        stages.push(mu);
        mu *= 0.1;
    }
    let budget = SolverOptions {
        max_iters: opts.max_iters / (stages.len() + 1),
        ..opts.clone()
    };
    if budget.max_iters == 0 {
        return Ok((init.to_vec(), 0));
    }
    let mut current = init.to_vec();
    let mut iterations = 0;
    for mu in stages {
        let data = EmpiricalTerm::new(ys, *spec, mu);
        let out = solve(g, &data, lambda, vec![current], &budget)?;
        iterations += out.iterations;
        current = out.coeffs;
    }
    Ok((current, iterations))
}

/// `(1/T) Σ ψ_q^ε((Gc)_i − y_i) + λ cᵀGc`.
pub fn objective(gram: &GramMatrix, ys: &[f64], coeffs: &[f64], spec: &LossSpec, lambda: f64) -> Result<f64> {
    let n = gram.len();
    for len in [ys.len(), coeffs.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, found: len });
        }
    }
    check_lambda(lambda)?;
    let z = matvec(&gram.entries, coeffs);
    let data: f64 = z.iter().zip(ys).map(|(zi, yi)| spec.value(zi - yi)).sum::<f64>() / n as f64;
    let value = data + lambda * dot(coeffs, &z);
    if !value.is_finite() {
        return Err(Error::NonFinite { context: "objective" });
    }
    Ok(value)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::invalid("lambda", format!("must be > 0, got {lambda}")));
    }
    Ok(())
}

/// Fits `f_z^ε` on a dataset.
pub fn fit(
    dataset: &Dataset,
    kernel: &KernelSpec,
    spec: &LossSpec,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<FitResult> {
    if dataset.is_empty() {
        return Err(Error::invalid("dataset", "needs at least one sample"));
    }
    let g = gram(kernel, &dataset.xs, 0.0)?;
    fit_with_gram(&g, &dataset.xs, &dataset.ys, kernel, spec, lambda, opts)
}

/// [`fit`] against a precomputed (jitter-free) Gram matrix of `xs`.
pub fn fit_with_gram(
    g: &GramMatrix,
    xs: &[Vec<f64>],
    ys: &[f64],
    kernel: &KernelSpec,
    spec: &LossSpec,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<FitResult> {
    opts.validate()?;
    check_lambda(lambda)?;
    let n = ys.len();
    if n == 0 {
        return Err(Error::invalid("dataset", "needs at least one sample"));
    }
    if xs.len() != n || g.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if xs.len() != n { xs.len() } else { g.len() },
        });
    }
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::NonFinite { context: "responses" });
    }
    let init = match &opts.init {
        Init::Zeros => vec![0.0; n],
        Init::Warm(c) if c.len() == n => c.clone(),
        Init::Warm(c) => return Err(Error::DimensionMismatch { expected: n, found: c.len() }),
    };
    let data = EmpiricalTerm::new(ys, *spec, opts.q1_smoothing);
    let mut starts = vec![init];
    let mut warmup_iters = 0;
    if data.smoothing > 0.0 {
        let (c, iters) = smoothing_continuation(&g.entries, ys, spec, lambda, &starts[0], opts)?;
        starts.push(c);
        warmup_iters = iters;
    }
    let remaining = SolverOptions {
        max_iters: opts.max_iters - warmup_iters,
        ..opts.clone()
    };
    let mut out = solve(&g.entries, &data, lambda, starts, &remaining)?;
    out.iterations += warmup_iters;

    let residuals: Vec<f64> = out.fitted.iter().zip(ys).map(|(z, y)| z - y).collect();
    let support = support_indices(&residuals, spec.eps(), opts.support_tol);
    let expansion = KernelExpansion::new(xs.to_vec(), out.coeffs, *kernel)?;
    let rkhs = dot(&expansion.coeffs, &out.fitted).max(0.0);
    let plain: f64 = residuals.iter().map(|r| spec.value(*r)).sum::<f64>() / n as f64;
    let diagnostics = FitDiagnostics {
        q: spec.q(),
        eps: spec.eps(),
        lambda,
        objective: plain + lambda * rkhs,
        smoothing: data.smoothing,
        certificate: out.certificate,
        kappa: expansion.kappa(),
        support_tol: opts.support_tol,
        newton_steps: out.newton_steps,
    };
    Ok(FitResult {
        expansion,
        objective_trace: out.trace,
        residuals,
        support,
        rkhs_norm_sq: rkhs,
        iterations: out.iterations,
        converged: out.converged,
        diagnostics,
    })
}

/// Clamp to `[−1, 1]`.
pub fn project_value(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

pub fn project(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| project_value(v)).collect()
}

fn support_indices(residuals: &[f64], eps: f64, tol: f64) -> Vec<usize> {
    residuals
        .iter()
        .enumerate()
        .filter(|(_, r)| r.abs() > eps - tol)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    pub indices: Vec<usize>,
    pub ratio: f64,
}

/// Training points outside the ε-tube (up to `support_tol`).
pub fn support_set(result: &FitResult, spec: &LossSpec, support_tol: f64) -> SupportSet {
    let indices = support_indices(&result.residuals, spec.eps(), support_tol);
    let ratio = indices.len() as f64 / result.residuals.len().max(1) as f64;
    SupportSet { indices, ratio }
}

/// Stationarity measure `‖(1/T)·G s + 2λ·G c‖_∞` at `c`, minimized over
/// subgradient selections `s_i ∈ ∂ψ_q^ε(r_i)`.
///
/// For `q = 1` residuals whose tube excess lies in `[0, smoothing]` count as
/// sitting on the tube edge, matching the resolution of the smoothed solver.
/// The search starts from the smoothed-derivative selection and refines it by
/// box-constrained coordinate descent on the Euclidean norm, keeping the best
/// max-norm seen.
pub fn optimality_certificate(
    gram: &GramMatrix,
    ys: &[f64],
    coeffs: &[f64],
    spec: &LossSpec,
    lambda: f64,
    smoothing: f64,
) -> Result<f64> {
    let n = gram.len();
    for len in [ys.len(), coeffs.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, found: len });
        }
    }
    let g = &gram.entries;
    let z = matvec(g, coeffs);
    let tn = n as f64;
    let term = EmpiricalTerm::new(ys, *spec, smoothing);
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    let mut s = vec![0.0; n];
    for i in 0..n {
        let r = z[i] - ys[i];
        let sg = spec.subgradient(r);
        let excess = r.abs() - spec.eps();
        if spec.q() == 1.0 && excess >= -1e-12 && excess <= smoothing + 1e-12 {
            if spec.eps() == 0.0 || r == 0.0 {
                lo[i] = -1.0;
                hi[i] = 1.0;
            } else if r > 0.0 {
                hi[i] = 1.0;
            } else {
                lo[i] = -1.0;
            }
        } else {
            lo[i] = sg.lo;
            hi[i] = sg.hi;
        }
        s[i] = term.dh(r).clamp(lo[i], hi[i]);
    }
    let mut v: Vec<f64> = matvec(g, &s)
        .iter()
        .zip(&z)
        .map(|(gs, zi)| gs / tn + 2.0 * lambda * zi)
        .collect();
    let mut best = max_abs(&v);
    let free: Vec<usize> = (0..n).filter(|&i| hi[i] > lo[i]).collect();
    for _ in 0..200 {
        let mut moved = 0.0f64;
        for &j in &free {
            let col = g.column(j);
            let cc: f64 = col.iter().map(|x| x * x).sum::<f64>() / (tn * tn);
            if cc == 0.0 {
                continue;
            }
            let grad: f64 = col.iter().zip(&v).map(|(gij, vi)| gij * vi).sum::<f64>() / tn;
            let new = (s[j] - grad / cc).clamp(lo[j], hi[j]);
            let delta = new - s[j];
            if delta != 0.0 {
                for (vi, gij) in v.iter_mut().zip(col.iter()) {
                    *vi += delta * gij / tn;
                }
                s[j] = new;
                moved = moved.max(delta.abs());
            }
        }
        best = best.min(max_abs(&v));
        if moved < 1e-15 {
            break;
        }
    }
    Ok(best)
}
