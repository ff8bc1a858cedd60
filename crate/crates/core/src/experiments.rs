//! Learning-rate sweeps, sparsity sweeps and the ridge baseline.

use std::fmt::Write as _;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{rate_exponent, RateExponent, RateParams, DEFAULT_XI};
use crate::error::{Error, Result};
use crate::kernel::{gram, KernelExpansion, KernelSpec, DEFAULT_JITTER};
use crate::loss::LossSpec;
use crate::models::{noise_type, sample_dataset, CenterSpec, ConditionalModel, Dataset, Design, ModelSpec, NoiseKind};
use crate::solver::{fit, fit_with_gram, project_value, support_set, Init, SolverOptions};
use crate::util::{maybe_inf, ols};

/// Evaluation points are drawn from a seed kept apart from the dataset seeds.
const EVAL_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

fn default_beta() -> f64 {
    1.0
}

fn default_xi() -> f64 {
    DEFAULT_XI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub design: Design,
    pub kernel: KernelSpec,
    pub q: f64,
    pub alpha: f64,
    /// `ε = T^{−η}`; `"inf"` means `ε = 0`.
    #[serde(with = "maybe_inf")]
    pub eta: f64,
    #[serde(rename = "T_grid")]
    pub t_grid: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    #[serde(with = "maybe_inf")]
    pub r_norm: f64,
    pub n_mc: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub k: f64,
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl ExperimentConfig {
    /// Power model with exponent `phi` under `λ = ε = T^{−(q+φ+1)/(2(q+φ))}`,
    /// errors in `L^{q+φ+1}`.
    pub fn power_schedule(q: f64, phi: f64) -> ExperimentConfig {
        let alpha = (q + phi + 1.0) / (2.0 * (q + phi));
        ExperimentConfig {
            model: ModelSpec {
                noise: NoiseKind::Power { phi },
                center: CenterSpec::Default { dim: 1 },
            },
            design: Design::Uniform { dim: 1 },
            kernel: KernelSpec::Gaussian { bandwidth: 0.2 },
            q,
            alpha,
            eta: alpha,
            t_grid: vec![64, 128, 256, 512, 1024, 2048],
            repeats: 20,
            seed: 0,
            r_norm: q + phi + 1.0,
            n_mc: 20_000,
            beta: 1.0,
            k: 0.0,
            xi: DEFAULT_XI,
            solver: SolverOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_grid.is_empty() {
            return Err(Error::invalid("T_grid", "must be nonempty"));
        }
        if self.t_grid[0] == 0 || self.t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("T_grid", "must be positive and strictly increasing"));
        }
        if self.repeats < 1 {
            return Err(Error::invalid("repeats", "must be >= 1"));
        }
        if self.n_mc < 1 {
            return Err(Error::invalid("n_mc", "must be >= 1"));
        }
        if !(self.r_norm > 0.0) {
            return Err(Error::invalid("r_norm", "must be > 0 or inf"));
        }
        LossSpec::q_norm(self.q)?;
        self.kernel.validate()?;
        self.design.validate()?;
        self.solver.validate()?;
        self.rate_params()?.validate()?;
        ConditionalModel::new(self.model.clone())?;
        Ok(())
    }

    fn rate_params(&self) -> Result<RateParams> {
        let nt = noise_type(&ConditionalModel::new(self.model.clone())?);
        Ok(RateParams {
            q: self.q,
            w: nt.w,
            p: nt.p,
            alpha: self.alpha,
            eta: self.eta,
            beta: self.beta,
            k: self.k,
            xi: self.xi,
        })
    }

    pub fn lambda_at(&self, t: usize) -> f64 {
        (t as f64).powf(-self.alpha)
    }

    pub fn eps_at(&self, t: usize) -> f64 {
        if self.eta.is_infinite() {
            0.0
        } else {
            (t as f64).powf(-self.eta)
        }
    }
}

/// Fixed evaluation sample with the target values `f_q(x)`.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub points: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl EvalSet {
    pub fn new(model: &ConditionalModel, design: &Design, q: f64, n_mc: usize, seed: u64) -> Result<EvalSet> {
        if n_mc == 0 {
            return Err(Error::invalid("n_mc", "must be >= 1"));
        }
        let spec = LossSpec::q_norm(q)?;
        let points = design.sample_points(n_mc, seed ^ EVAL_SEED_MIX)?;
        model.check_point(&points[0])?;
        let targets = points.iter().map(|x| model.target_value(x, &spec)).collect();
        Ok(EvalSet { points, targets })
    }

    /// `‖π(f) − f_q‖_{L^r}` over the sample (`r = ∞`: maximum).
    pub fn projected_error(&self, f: &KernelExpansion, r: f64) -> f64 {
        let gaps: Vec<f64> = self
            .points
            .par_iter()
            .zip(self.targets.par_iter())
            .map(|(x, t)| (project_value(f.eval_unchecked(x)) - t).abs())
            .collect();
        if r.is_infinite() {
            return gaps.iter().fold(0.0, |m, g| m.max(*g));
        }
        let mean = gaps.iter().map(|g| g.powf(r)).sum::<f64>() / gaps.len() as f64;
        mean.powf(1.0 / r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    #[serde(rename = "T")]
    pub t: usize,
    pub lambda: f64,
    pub eps: f64,
    pub mean_err: f64,
    pub std_err: f64,
    pub sparsity: f64,
    pub completed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    #[serde(rename = "T")]
    pub t: usize,
    pub repeat: usize,
    pub err: f64,
    pub sparsity: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    #[serde(rename = "T")]
    pub t: usize,
    pub repeat: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    pub scatter: Vec<ScatterPoint>,
    pub fitted_slope: f64,
    pub slope_stderr: f64,
    pub theoretical_lambda: f64,
    pub exponent: RateExponent,
    pub failures: Vec<CellFailure>,
}

impl RateReport {
    /// Rows as CSV with header `T,lambda,eps,mean_err,std_err,sparsity`.
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("T,lambda,eps,mean_err,std_err,sparsity\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.t, r.lambda, r.eps, r.mean_err, r.std_err, r.sparsity);
        }
        out
    }

    /// Per-repeat `(T, err)` pairs.
    pub fn scatter_csv(&self) -> String {
        let mut out = String::from("T,err\n");
        for p in &self.scatter {
            let _ = writeln!(out, "{},{}", p.t, p.err);
        }
        out
    }
}

fn cell(
    model: &ConditionalModel,
    cfg: &ExperimentConfig,
    eval: &EvalSet,
    t: usize,
    repeat: usize,
) -> Result<ScatterPoint> {
    let data = sample_dataset(model, &cfg.design, t, cfg.seed.wrapping_add(repeat as u64))?;
    let spec = LossSpec::new(cfg.q, cfg.eps_at(t))?;
    let r = fit(&data, &cfg.kernel, &spec, cfg.lambda_at(t), &cfg.solver)?;
    Ok(ScatterPoint {
        t,
        repeat,
        err: eval.projected_error(&r.expansion, cfg.r_norm),
        sparsity: support_set(&r, &spec, cfg.solver.support_tol).ratio,
        converged: r.converged,
        iterations: r.iterations,
    })
}

/// Runs every `(T, repeat)` cell, measures `‖π(f_z^ε) − f_q‖_{L^r}` on a
/// shared evaluation sample and fits the log-log slope of the mean error.
/// Failed cells are recorded and left out of the aggregates.
pub fn run_rate_experiment(config: &ExperimentConfig) -> Result<RateReport> {
    config.validate()?;
    let model = ConditionalModel::new(config.model.clone())?;
    let exponent = rate_exponent(&config.rate_params()?)?;
    let eval = EvalSet::new(&model, &config.design, config.q, config.n_mc, config.seed)?;

    let cells: Vec<(usize, usize)> = config
        .t_grid
        .iter()
        .flat_map(|&t| (0..config.repeats).map(move |r| (t, r)))
        .collect();
    let results: Vec<Result<ScatterPoint>> = cells
        .par_iter()
        .map(|&(t, r)| cell(&model, config, &eval, t, r))
        .collect();

    let mut scatter = Vec::new();
    let mut failures = Vec::new();
    for ((t, repeat), res) in cells.iter().zip(results) {
        match res {
            Ok(p) => scatter.push(p),
            Err(e) => failures.push(CellFailure {
                t: *t,
                repeat: *repeat,
                message: e.to_string(),
            }),
        }
    }

    let rows: Vec<RateRow> = config
        .t_grid
        .iter()
        .map(|&t| {
            let pts: Vec<&ScatterPoint> = scatter.iter().filter(|p| p.t == t).collect();
            let n = pts.len() as f64;
            let mean = pts.iter().map(|p| p.err).sum::<f64>() / n;
            let std = if pts.len() > 1 {
                (pts.iter().map(|p| (p.err - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            RateRow {
                t,
                lambda: config.lambda_at(t),
                eps: config.eps_at(t),
                mean_err: mean,
                std_err: std,
                sparsity: pts.iter().map(|p| p.sparsity).sum::<f64>() / n,
                completed: pts.len(),
            }
        })
        .collect();

    let pairs: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mean_err.is_finite() && r.mean_err > 0.0)
        .map(|r| (r.t as f64, r.mean_err))
        .collect();
    let (fitted_slope, slope_stderr) = fit_loglog_slope(&pairs).unwrap_or((f64::NAN, f64::NAN));
    Ok(RateReport {
        rows,
        scatter,
        fitted_slope,
        slope_stderr,
        theoretical_lambda: exponent.lambda_exp,
        exponent,
        failures,
    })
}

/// Least-squares slope of `log error` against `log T` and its standard error.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 3 {
        return Err(Error::invalid("points", format!("need at least 3, got {}", points.len())));
    }
    if let Some((t, e)) = points.iter().find(|(t, e)| !(*t > 0.0 && *e > 0.0 && t.is_finite() && e.is_finite())) {
        return Err(Error::invalid("points", format!("T and error must be positive, got ({t}, {e})")));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    if xs.iter().all(|x| *x == xs[0]) {
        return Err(Error::invalid("points", "need at least two distinct T"));
    }
    let (_, slope, stderr) = ols(&xs, &ys);
    Ok((slope, stderr))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityRow {
    pub eps: f64,
    pub ratio: f64,
    pub objective: f64,
    /// `‖π(f) − f_q‖_{L^r}` when an evaluation sample is supplied.
    pub lr_error: Option<f64>,
    pub converged: bool,
    #[serde(default, skip_serializing)]
    pub residuals: Vec<f64>,
}

/// Warm-started fits over an ascending ε grid.
pub fn sparsity_sweep(
    dataset: &Dataset,
    kernel: &KernelSpec,
    q: f64,
    lambda: f64,
    eps_grid: &[f64],
    opts: &SolverOptions,
    eval: Option<(&EvalSet, f64)>,
) -> Result<Vec<SparsityRow>> {
    if eps_grid.is_empty() {
        return Err(Error::invalid("eps_grid", "must be nonempty"));
    }
    if dataset.is_empty() {
        return Err(Error::invalid("dataset", "needs at least one sample"));
    }
    let mut grid = eps_grid.to_vec();
    for e in &grid {
        LossSpec::new(q, *e)?;
    }
    grid.sort_by(f64::total_cmp);
    let g = gram(kernel, &dataset.xs, 0.0)?;
    let mut warm: Option<Vec<f64>> = None;
    let mut rows = Vec::with_capacity(grid.len());
    for eps in grid {
        let spec = LossSpec::new(q, eps)?;
        let o = SolverOptions {
            init: warm.take().map(Init::Warm).unwrap_or_else(|| opts.init.clone()),
            ..opts.clone()
        };
        let r = fit_with_gram(&g, &dataset.xs, &dataset.ys, kernel, &spec, lambda, &o)?;
        rows.push(SparsityRow {
            eps,
            ratio: support_set(&r, &spec, opts.support_tol).ratio,
            objective: r.diagnostics.objective,
            lr_error: eval.map(|(set, rn)| set.projected_error(&r.expansion, rn)),
            converged: r.converged,
            residuals: r.residuals.clone(),
        });
        warm = Some(r.coeffs().to_vec());
    }
    Ok(rows)
}

/// Kernel ridge regression by a direct Cholesky solve of
/// `(G + λT·I) c = y`, with the default diagonal jitter.
pub fn ridge_fit(dataset: &Dataset, kernel: &KernelSpec, lambda: f64) -> Result<KernelExpansion> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::invalid("lambda", "must be > 0"));
    }
    let n = dataset.len();
    let mut g = gram(kernel, &dataset.xs, DEFAULT_JITTER)?.entries;
    for i in 0..n {
        g[(i, i)] += lambda * n as f64;
    }
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::LinearAlgebra("ridge system is not positive definite".into()))?;
    let c = chol.solve(&DVector::from_column_slice(&dataset.ys));
    KernelExpansion::new(dataset.xs.clone(), c.iter().copied().collect(), *kernel)
}

/// For each `(T, repeat)` cell of a `q = 2`, `ε = 0` configuration: the rate
/// pipeline's error next to the ridge baseline's on the same dataset.
pub fn ridge_concordance(config: &ExperimentConfig) -> Result<Vec<(f64, f64)>> {
    config.validate()?;
    if config.q != 2.0 || config.eta.is_finite() {
        return Err(Error::invalid("config", "ridge concordance needs q = 2 and eta = inf"));
    }
    let model = ConditionalModel::new(config.model.clone())?;
    let eval = EvalSet::new(&model, &config.design, config.q, config.n_mc, config.seed)?;
    let mut out = Vec::new();
    for &t in &config.t_grid {
        for rep in 0..config.repeats {
            let data = sample_dataset(&model, &config.design, t, config.seed.wrapping_add(rep as u64))?;
            let lambda = config.lambda_at(t);
            let r = fit(&data, &config.kernel, &LossSpec::q_norm(2.0)?, lambda, &config.solver)?;
            let ridge = ridge_fit(&data, &config.kernel, lambda)?;
            out.push((
                eval.projected_error(&r.expansion, config.r_norm),
                eval.projected_error(&ridge, config.r_norm),
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_slope_examples() {
        let pts: Vec<(f64, f64)> = [64.0, 128.0, 256.0, 512.0].iter().map(|&t: &f64| (t, 10.0 * t.powf(-0.5))).collect();
        let (s, se) = fit_loglog_slope(&pts).unwrap();
        assert!((s + 0.5).abs() < 1e-10);
        assert!(se < 1e-10);
        let flat: Vec<(f64, f64)> = [1.0, 2.0, 3.0].iter().map(|&t| (t, 0.3)).collect();
        assert_eq!(fit_loglog_slope(&flat).unwrap().0, 0.0);
        assert!(fit_loglog_slope(&pts[..2]).is_err());
        assert!(fit_loglog_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::power_schedule(2.0, 1.0);
        assert!(c.validate().is_ok());
        c.t_grid = vec![64, 64];
        assert!(c.validate().is_err());
        c.t_grid = vec![64];
        c.repeats = 0;
        assert!(c.validate().is_err());
        c.repeats = 1;
        c.alpha = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let mut c = ExperimentConfig::power_schedule(1.5, 1.0);
        c.eta = f64::INFINITY;
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains(r#""eta":"inf""#) && s.contains("T_grid"));
        let back: ExperimentConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.eps_at(100), 0.0);
    }
}
