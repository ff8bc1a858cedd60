//! Named invariant checks across the library, each reporting pass or fail.
//!
//! Every check is deterministic given [`VerifyOptions::seed`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{
    comparison_check, excess_transfer_check, rate_exponent, variance_check, RateParams, DEFAULT_N_MC, DEFAULT_XI,
};
use crate::error::Result;
use crate::experiments::{ridge_concordance, run_rate_experiment, sparsity_sweep, ExperimentConfig};
use crate::kernel::{expansion_eval, gram, kernel_eval, rkhs_norm_sq, KernelExpansion, KernelSpec};
use crate::loss::{pinball, psi_q, psi_q_eps, psi_q_eps_subgrad, LossSpec};
use crate::models::{
    first_order_balance, noise_type, sample_dataset, target, CenterSpec, ConditionalModel, Dataset, Design,
};
use crate::solver::{fit, objective, optimality_certificate, project_value, SolverOptions};

/// Outcome of one named invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub module: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(module: &'static str, name: &'static str, violations: usize, total: usize, worst: f64) -> Check {
        Check {
            module,
            name,
            passed: violations == 0,
            detail: format!("{violations} violations in {total} cases, worst margin {worst:.3e}"),
        }
    }

    fn from_result(module: &'static str, name: &'static str, r: Result<Check>) -> Check {
        r.unwrap_or_else(|e| Check {
            module,
            name,
            passed: false,
            detail: format!("error: {e}"),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random draws per loss-layer property.
    pub samples: usize,
    /// Monte-Carlo size for the population inequalities.
    pub n_mc: usize,
    /// Random clipped functions per model in the population inequalities.
    pub functions: usize,
    /// Runs the full learning-rate sweeps (about a minute).
    pub rate_sweeps: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            samples: 10_000,
            n_mc: DEFAULT_N_MC,
            functions: 25,
            rate_sweeps: true,
        }
    }
}

impl VerifyOptions {
    /// Smaller sample sizes and no rate sweeps.
    pub fn quick() -> Self {
        VerifyOptions {
            samples: 2000,
            n_mc: 20_000,
            functions: 5,
            rate_sweeps: false,
            ..Default::default()
        }
    }
}

/// Runs every check in module order.
pub fn run_all(opts: &VerifyOptions) -> Vec<Check> {
    let s = opts.seed;
    let mut out = vec![
        loss_sandwich(opts.samples, s),
        loss_convexity(opts.samples, s),
        loss_subgradient(opts.samples, s),
        loss_symmetry(opts.samples, s),
        loss_eps_monotone(opts.samples, s),
        loss_eps_zero_bitwise(opts.samples, s),
        loss_pinball_relation(opts.samples, s),
        kernel_reproducing(s),
        kernel_cauchy_schwarz(s),
        kernel_gram_psd(s),
        models_noise_type(s),
        models_perturbation(20, s),
        models_uniqueness(),
        models_first_order_balance(s),
        solver_certificate(s),
        solver_objective_dominance(s),
        solver_regularization_path(s),
        solver_gradient(s),
        analysis_comparison(opts.functions, opts.n_mc, s),
        analysis_variance(opts.functions, opts.n_mc, s),
        analysis_excess_transfer(s),
        analysis_rate_exponent(s),
        experiments_determinism(s),
        experiments_schedule(s),
        experiments_sparsity(s),
        experiments_ridge(s),
    ];
    if opts.rate_sweeps {
        out.push(experiments_rate_sweep(1.5));
        out.push(experiments_rate_sweep(2.0));
    }
    out
}

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x2545_F491_4F6C_DD1D))
}

fn random_spec(rng: &mut ChaCha8Rng) -> LossSpec {
    let q = match rng.gen_range(0..4) {
        0 => 1.0,
        1 => 2.0,
        _ => rng.gen_range(1.0..4.0),
    };
    let eps = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..0.5) };
    LossSpec::new(q, eps).expect("valid by construction")
}

/// Residual in `[−2, 2]`, landing on the tube edge or at zero now and then.
fn random_residual(rng: &mut ChaCha8Rng, eps: f64) -> f64 {
    match rng.gen_range(0..10) {
        0 => eps,
        1 => -eps,
        2 => 0.0,
        _ => rng.gen_range(-2.0..2.0),
    }
}

pub fn loss_sandwich(samples: usize, seed: u64) -> Check {
    let mut rng = rng(seed, 1);
    let (mut bad, mut worst) = (0, f64::INFINITY);
    for _ in 0..samples {
        let spec = random_spec(&mut rng);
        let u = random_residual(&mut rng, spec.eps());
        let (lo, mid) = (psi_q_eps(u, &spec), psi_q(u, spec.q()));
        let hi = lo + spec.q() * u.abs().powf(spec.q() - 1.0) * spec.eps();
        let margin = (mid - lo).min(hi - mid);
        worst = worst.min(margin);
        if margin < -1e-12 {
            bad += 1;
        }
    }
    Check::new("loss", "sandwich", bad, samples, worst)
}

pub fn loss_convexity(samples: usize, seed: u64) -> Check {
    let mut rng = rng(seed, 2);
    let (mut bad, mut worst) = (0, f64::INFINITY);
    for _ in 0..samples {
        let spec = random_spec(&mut rng);
        let (u1, u2) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let t: f64 = rng.gen();
        let margin = t * psi_q_eps(u1, &spec) + (1.0 - t) * psi_q_eps(u2, &spec) - psi_q_eps(t * u1 + (1.0 - t) * u2, &spec);
        worst = worst.min(margin);
        if margin < -1e-12 {
            bad += 1;
        }
    }
    Check::new("loss", "convexity", bad, samples, worst)
}

pub fn loss_subgradient(samples: usize, seed: u64) -> Check {
    let mut rng = rng(seed, 3);
    let (mut bad, mut worst) = (0, f64::INFINITY);
    for _ in 0..samples {
        let spec = random_spec(&mut rng);
        let u = random_residual(&mut rng, spec.eps());
        let v = rng.gen_range(-2.0..2.0);
        let sg = psi_q_eps_subgrad(u, &spec);
        for g in [sg.lo, sg.hi] {
            let margin = psi_q_eps(v, &spec) - psi_q_eps(u, &spec) - g * (v - u);
            worst = worst.min(margin);
            if margin < -1e-10 {
                bad += 1;
            }
        }
    }
    Check::new("loss", "subgradient_validity", bad, samples, worst)
}

pub fn loss_symmetry(samples: usize, seed: u64) -> Check {
    let mut rng = rng(seed, 4);
    let mut bad = 0;
    for _ in 0..samples {
        let spec = random_spec(&mut rng);
        let u = random_residual(&mut rng, spec.eps());
        if psi_q_eps(u, &spec) != psi_q_eps(-u, &spec) {
            bad += 1;
        }
    }
    Check::new("loss", "symmetry", bad, samples, 0.0)
}

pub fn loss_eps_monotone(samples: usize, seed: u64) -> Check {
    let mut rng = rng(seed, 5);
    let (mut bad, mut worst) = (0, f64::INFINITY);
    for _ in 0..samples {
        let spec = random_spec(&mut rng);
        let wider = spec.with_eps(spec.eps() + rng.gen_range(0.0..0.5)).expect("valid");
        let u = rng.gen_range(-2.0..2.0);
        let margin = psi_q_eps(u, &spec) - psi_q_eps(u, &wider);
        worst = worst.min(margin);
        if margin < 0.0 {
            bad += 1;
        }
    }
    Check::new("loss", "eps_monotonicity", bad, samples, worst)
}

pub fn loss_eps_zero_bitwise(samples: usize, seed: u64) -> Check {
    let mut rng = rng(seed, 6);
    let mut bad = 0;
    for _ in 0..samples {
        let spec = random_spec(&mut rng).with_eps(0.0).expect("valid");
        let u = rng.gen_range(-2.0..2.0);
        if psi_q_eps(u, &spec).to_bits() != psi_q(u, spec.q()).to_bits() {
            bad += 1;
        }
    }
    Check::new("loss", "eps_zero_is_q_norm", bad, samples, 0.0)
}

/// `ψ_1(u) = 2·pinball(u, 1/2)`.
pub fn loss_pinball_relation(samples: usize, seed: u64) -> Check {
    let mut rng = rng(seed, 7);
    let (mut bad, mut worst) = (0, 0.0f64);
    for _ in 0..samples {
        let u = rng.gen_range(-2.0..2.0);
        let gap = (psi_q(u, 1.0) - 2.0 * pinball(u, 0.5).expect("tau in range")).abs();
        worst = worst.max(gap);
        if gap > 1e-15 {
            bad += 1;
        }
    }
    Check::new("loss", "pinball_relation", bad, samples, worst)
}

fn kernels() -> [KernelSpec; 4] {
    [
        KernelSpec::Gaussian { bandwidth: 0.3 },
        KernelSpec::Gaussian { bandwidth: 1.0 },
        KernelSpec::Polynomial { degree: 3, offset: 1.0 },
        KernelSpec::Linear,
    ]
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect()
}

pub fn kernel_reproducing(seed: u64) -> Check {
    let mut rng = rng(seed, 10);
    let (mut bad, mut total, mut worst) = (0, 0, 0.0f64);
    for k in kernels() {
        for _ in 0..25 {
            let dim = rng.gen_range(1..=3);
            let x0: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = (|| -> Result<f64> {
                let f = KernelExpansion::new(vec![x0.clone()], vec![1.0], k)?;
                let kxx = kernel_eval(&k, &x0, &x0)?;
                let scale = kxx.abs().max(1.0);
                Ok(((expansion_eval(&f, &x0)? - kxx).abs()).max((rkhs_norm_sq(&f) - kxx).abs()) / scale)
            })();
            total += 1;
            match r {
                Ok(gap) => {
                    worst = worst.max(gap);
                    if gap > 1e-12 {
                        bad += 1;
                    }
                }
                Err(_) => bad += 1,
            }
        }
    }
    Check::new("kernel", "reproducing_consistency", bad, total, worst)
}

pub fn kernel_cauchy_schwarz(seed: u64) -> Check {
    let mut rng = rng(seed, 11);
    let (mut bad, mut total, mut worst) = (0, 0, f64::INFINITY);
    for k in kernels() {
        for _ in 0..50 {
            let dim = rng.gen_range(1..=3);
            let m = rng.gen_range(1..=8);
            let centers = random_points(&mut rng, m, dim);
            let coeffs = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let Ok(f) = KernelExpansion::new(centers, coeffs, k) else {
                bad += 1;
                continue;
            };
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let lhs = expansion_eval(&f, &x).map(f64::abs).unwrap_or(f64::INFINITY);
            let rhs = rkhs_norm_sq(&f).sqrt() * kernel_eval(&k, &x, &x).unwrap_or(0.0).sqrt();
            let margin = rhs + 1e-9 - lhs;
            worst = worst.min(margin);
            total += 1;
            if margin < 0.0 {
                bad += 1;
            }
        }
    }
    Check::new("kernel", "cauchy_schwarz", bad, total, worst)
}

pub fn kernel_gram_psd(seed: u64) -> Check {
    let mut rng = rng(seed, 12);
    let (mut bad, mut total) = (0, 0);
    for k in [KernelSpec::Gaussian { bandwidth: 0.3 }, KernelSpec::Gaussian { bandwidth: 1.0 }] {
        for &n in &[2usize, 16, 128, 512] {
            let dim = rng.gen_range(1..=3);
            let pts = random_points(&mut rng, n, dim);
            total += 1;
            let ok = gram(&k, &pts, 1e-10).map(|g| g.entries.cholesky().is_some()).unwrap_or(false);
            if !ok {
                bad += 1;
            }
        }
    }
    Check::new("kernel", "gram_psd_after_jitter", bad, total, 0.0)
}

fn all_models() -> Vec<ConditionalModel> {
    let c = CenterSpec::Default { dim: 1 };
    vec![
        ConditionalModel::power(0.5, c.clone()).expect("valid"),
        ConditionalModel::power(1.0, c.clone()).expect("valid"),
        ConditionalModel::power(2.0, c.clone()).expect("valid"),
        ConditionalModel::gaussian(0.1, c.clone()).expect("valid"),
        ConditionalModel::uniform(0.2, c.clone()).expect("valid"),
        ConditionalModel::uniform(0.25, c).expect("valid"),
    ]
}

/// `ρ_x([f_q, f_q + s]) ≥ b s^w` and the mirrored mass, for `s ∈ (0, a]`.
pub fn models_noise_type(seed: u64) -> Check {
    let mut rng = rng(seed, 20);
    let (mut bad, mut total, mut worst) = (0, 0, f64::INFINITY);
    for m in all_models() {
        let nt = noise_type(&m);
        for _ in 0..50 {
            let x = [rng.gen::<f64>()];
            let fq = m.center(&x);
            for _ in 0..50 {
                let s = nt.a * (1.0 - rng.gen::<f64>());
                let need = nt.b * s.powf(nt.w) - 1e-8;
                let margin = (m.mass(&x, fq, fq + s) - need).min(m.mass(&x, fq - s, fq) - need);
                worst = worst.min(margin);
                total += 1;
                if margin < 0.0 {
                    bad += 1;
                }
            }
        }
    }
    Check::new("models", "noise_type_certificate", bad, total, worst)
}

/// `|f_q^ε(x) − f_q(x)| ≤ ε` with both sides found numerically.
pub fn models_perturbation(points: usize, seed: u64) -> Check {
    let mut rng = rng(seed, 21);
    let (mut bad, mut total, mut worst) = (0, 0, f64::INFINITY);
    for m in all_models() {
        for &q in &[1.0, 1.5, 2.0, 3.0] {
            for _ in 0..points {
                let x = [rng.gen::<f64>()];
                let base = target(&m, &x, &LossSpec::q_norm(q).expect("valid"));
                for &eps in &[0.01, 0.05, 0.1, 0.25, 0.5] {
                    total += 1;
                    let shifted = target(&m, &x, &LossSpec::new(q, eps).expect("valid"));
                    match (&base, shifted) {
                        (Ok(b), Ok(s)) => {
                            let margin = eps + 1e-7 - (s - b).abs();
                            worst = worst.min(margin);
                            if margin < 0.0 {
                                bad += 1;
                            }
                        }
                        _ => bad += 1,
                    }
                }
            }
        }
    }
    Check::new("models", "perturbation", bad, total, worst)
}

/// The near-minimal set of `t ↦ C_{q,x}^ε(t)` on a fine grid is a single
/// grid cell wide. Checked for `ε` below the offset support half-width,
/// where the minimizer is unique.
pub fn models_uniqueness() -> Check {
    let grid = 10_000;
    let step = 1.0 / grid as f64;
    let (mut bad, mut total, mut worst) = (0, 0, f64::INFINITY);
    for m in all_models() {
        let h = m.noise().halfwidth();
        let x = [0.37];
        let c = m.center(&x);
        for &q in &[1.5, 2.0, 3.0] {
            for &eps in &[0.0, 0.05, 0.1] {
                // the 1e-9 sublevel set spans more than two grid steps once the
                // curvature at the minimum drops below 0.2
                if eps >= h || (q == 3.0 && eps > 0.05) {
                    continue;
                }
                total += 1;
                let spec = LossSpec::new(q, eps).expect("valid");
                let risks: Result<Vec<(f64, f64)>> = (0..=grid)
                    .map(|i| {
                        let t = -0.5 + i as f64 * step;
                        m.offset_risk(t - c, &spec).map(|r| (t, r))
                    })
                    .collect();
                let Ok(risks) = risks else {
                    bad += 1;
                    continue;
                };
                let min = risks.iter().fold(f64::INFINITY, |a, r| a.min(r.1));
                let level: Vec<f64> = risks.iter().filter(|r| r.1 <= min + 1e-9).map(|r| r.0).collect();
                let diameter = level.last().unwrap_or(&0.0) - level.first().unwrap_or(&0.0);
                let margin = 2.0 * step - diameter;
                worst = worst.min(margin);
                if margin < -1e-12 {
                    bad += 1;
                }
            }
        }
    }
    Check::new("models", "uniqueness", bad, total, worst)
}

/// The two one-sided moments balance at the target for `q > 1`.
pub fn models_first_order_balance(seed: u64) -> Check {
    let mut rng = rng(seed, 23);
    let (mut bad, mut total, mut worst) = (0, 0, 0.0f64);
    for m in all_models() {
        for &q in &[1.5, 2.0, 3.0] {
            for &eps in &[0.0, 0.1] {
                for _ in 0..5 {
                    let x = [rng.gen::<f64>()];
                    let spec = LossSpec::new(q, eps).expect("valid");
                    total += 1;
                    match first_order_balance(&m, &x, m.target_value(&x, &spec), &spec) {
                        Ok((up, down)) => {
                            worst = worst.max((up - down).abs());
                            if (up - down).abs() > 1e-7 {
                                bad += 1;
                            }
                        }
                        Err(_) => bad += 1,
                    }
                }
            }
        }
    }
    Check::new("models", "first_order_balance", bad, total, worst)
}

fn solver_dataset(t: usize, seed: u64) -> Dataset {
    let m = ConditionalModel::power(1.0, CenterSpec::Default { dim: 1 }).expect("valid");
    sample_dataset(&m, &Design::Uniform { dim: 1 }, t, seed).expect("valid")
}

const SOLVER_CASES: [(f64, f64); 6] = [(1.0, 0.0), (1.0, 0.05), (1.5, 0.0), (2.0, 0.0), (2.0, 0.05), (3.0, 0.02)];

pub fn solver_certificate(seed: u64) -> Check {
    let r = (|| -> Result<Check> {
        let k = KernelSpec::gaussian(0.2)?;
        let opts = SolverOptions::default();
        let (mut bad, mut total, mut worst) = (0, 0, 0.0f64);
        for rep in 0..3 {
            let d = solver_dataset(40 + 20 * rep, seed.wrapping_add(rep as u64));
            let g = gram(&k, &d.xs, 0.0)?;
            for &(q, eps) in &SOLVER_CASES {
                let spec = LossSpec::new(q, eps)?;
                let f = fit(&d, &k, &spec, 0.01, &opts)?;
                let cert = optimality_certificate(&g, &d.ys, f.coeffs(), &spec, 0.01, f.diagnostics.smoothing)?;
                worst = worst.max(cert);
                total += 1;
                if cert > opts.grad_tol {
                    bad += 1;
                }
            }
        }
        Ok(Check::new("solver", "optimality_certificate", bad, total, worst))
    })();
    Check::from_result("solver", "optimality_certificate", r)
}

pub fn solver_objective_dominance(seed: u64) -> Check {
    let r = (|| -> Result<Check> {
        let k = KernelSpec::gaussian(0.2)?;
        let d = solver_dataset(50, seed);
        let g = gram(&k, &d.xs, 0.0)?;
        let zero = vec![0.0; d.len()];
        let (mut bad, mut total, mut worst) = (0, 0, f64::INFINITY);
        for &(q, eps) in &SOLVER_CASES {
            let spec = LossSpec::new(q, eps)?;
            let f = fit(&d, &k, &spec, 0.01, &SolverOptions::default())?;
            let mut margin = objective(&g, &d.ys, &zero, &spec, 0.01)? - f.diagnostics.objective;
            if q == 2.0 && eps == 0.0 {
                let ridge = crate::experiments::ridge_fit(&d, &k, 0.01)?;
                let at_ridge = objective(&g, &d.ys, &ridge.coeffs, &spec, 0.01)?;
                margin = margin.min(at_ridge + 1e-9 - f.diagnostics.objective);
            }
            worst = worst.min(margin);
            total += 1;
            if margin < 0.0 {
                bad += 1;
            }
        }
        Ok(Check::new("solver", "objective_dominance", bad, total, worst))
    })();
    Check::from_result("solver", "objective_dominance", r)
}

/// Norms shrink along the λ path and stay below `objective(0)/λ`.
pub fn solver_regularization_path(seed: u64) -> Check {
    let r = (|| -> Result<Check> {
        let k = KernelSpec::gaussian(0.2)?;
        let d = solver_dataset(60, seed);
        let g = gram(&k, &d.xs, 0.0)?;
        let zero = vec![0.0; d.len()];
        let (mut bad, mut total, mut worst) = (0, 0, f64::INFINITY);
        for &(q, eps) in &SOLVER_CASES {
            let spec = LossSpec::new(q, eps)?;
            let f0 = objective(&g, &d.ys, &zero, &spec, 1.0)?;
            let mut prev: Option<f64> = None;
            for &lambda in &[1e-3, 3e-3, 1e-2, 3e-2, 1e-1] {
                let f = fit(&d, &k, &spec, lambda, &SolverOptions::default())?;
                let mut margin = f0 / lambda + 1e-9 - f.rkhs_norm_sq;
                if let Some(p) = prev {
                    margin = margin.min(p - f.rkhs_norm_sq + 1e-8);
                }
                prev = Some(f.rkhs_norm_sq);
                worst = worst.min(margin);
                total += 1;
                if margin < 0.0 {
                    bad += 1;
                }
            }
        }
        Ok(Check::new("solver", "regularization_path_and_norm_bound", bad, total, worst))
    })();
    Check::from_result("solver", "regularization_path_and_norm_bound", r)
}

/// The analytic gradient `G((1/T)ψ'(r) + 2λc)` against central differences.
pub fn solver_gradient(seed: u64) -> Check {
    let r = (|| -> Result<Check> {
        let mut rng = rng(seed, 30);
        let k = KernelSpec::gaussian(0.3)?;
        let d = solver_dataset(12, seed);
        let g = gram(&k, &d.xs, 0.0)?;
        let n = d.len();
        let lambda = 0.05;
        let (mut bad, mut total, mut worst) = (0, 0, 0.0f64);
        for &(q, eps) in &[(1.5, 0.02), (2.0, 0.0), (2.0, 0.02), (3.0, 0.02)] {
            let spec = LossSpec::new(q, eps)?;
            for _ in 0..10 {
                let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let z = g.apply(&c);
                let inner: Vec<f64> = z
                    .iter()
                    .zip(&d.ys)
                    .zip(&c)
                    .map(|((zi, yi), ci)| spec.derivative(zi - yi) / n as f64 + 2.0 * lambda * ci)
                    .collect();
                let grad = g.apply(&inner);
                for kx in 0..n {
                    let h = 1e-6;
                    let mut cp = c.clone();
                    cp[kx] += h;
                    let mut cm = c.clone();
                    cm[kx] -= h;
                    let fd = (objective(&g, &d.ys, &cp, &spec, lambda)? - objective(&g, &d.ys, &cm, &spec, lambda)?) / (2.0 * h);
                    let rel = (fd - grad[kx]).abs() / grad[kx].abs().max(1e-3);
                    worst = worst.max(rel);
                    total += 1;
                    if rel > 1e-5 {
                        bad += 1;
                    }
                }
            }
        }
        Ok(Check::new("solver", "gradient_finite_differences", bad, total, worst))
    })();
    Check::from_result("solver", "gradient_finite_differences", r)
}

/// A random kernel expansion of moderate size, as a perturbation of the target.
pub fn random_perturbation(rng: &mut ChaCha8Rng, dim: usize) -> KernelExpansion {
    let m = rng.gen_range(1..=5);
    let amp = 10f64.powf(rng.gen_range(-2.0..0.3));
    let bandwidth = rng.gen_range(0.1..0.5);
    let centers = random_points(rng, m, dim);
    let coeffs = (0..m).map(|_| amp * rng.gen_range(-1.0..1.0)).collect();
    KernelExpansion::new(centers, coeffs, KernelSpec::Gaussian { bandwidth }).expect("valid by construction")
}

/// Models the population inequalities are checked on.
pub fn inequality_models() -> Vec<ConditionalModel> {
    vec![
        ConditionalModel::power(1.0, CenterSpec::Default { dim: 1 }).expect("valid"),
        ConditionalModel::uniform(0.2, CenterSpec::Default { dim: 1 }).expect("valid"),
    ]
}

const INEQUALITY_QS: [f64; 3] = [1.0, 1.5, 2.0];

fn inequality_suite<C>(name: &'static str, functions: usize, seed: u64, salt: u64, check: C) -> Check
where
    C: Fn(&(dyn Fn(&[f64]) -> f64 + Sync), &ConditionalModel, f64, u64) -> Result<crate::analysis::InequalityCheck>,
{
    let mut rng = rng(seed, salt);
    let (mut bad, mut total, mut worst) = (0, 0, f64::INFINITY);
    for m in inequality_models() {
        for i in 0..functions {
            let g = random_perturbation(&mut rng, 1);
            let f = |x: &[f64]| project_value(m.center(x) + g.eval_unchecked(x));
            for &q in &INEQUALITY_QS {
                total += 1;
                match check(&f, &m, q, seed.wrapping_add(i as u64)) {
                    Ok(c) => {
                        worst = worst.min(c.rhs_upper - c.lhs_lower);
                        if !c.holds {
                            bad += 1;
                        }
                    }
                    Err(_) => bad += 1,
                }
            }
        }
    }
    Check::new("analysis", name, bad, total, worst)
}

pub fn analysis_comparison(functions: usize, n_mc: usize, seed: u64) -> Check {
    inequality_suite("comparison_inequality", functions, seed, 40, |f, m, q, s| {
        comparison_check(f, m, &Design::Uniform { dim: 1 }, q, n_mc, s, 5.0)
    })
}

pub fn analysis_variance(functions: usize, n_mc: usize, seed: u64) -> Check {
    inequality_suite("variance_expectation", functions, seed, 41, |f, m, q, s| {
        variance_check(f, m, &Design::Uniform { dim: 1 }, q, n_mc, s, 5.0)
    })
}

pub fn analysis_excess_transfer(seed: u64) -> Check {
    let mut rng = rng(seed, 42);
    let (mut bad, mut total, mut worst) = (0, 0, f64::INFINITY);
    for m in inequality_models() {
        for &q in &[1.0, 1.5, 2.0, 3.0] {
            for &eps in &[0.01, 0.05, 0.1, 0.3] {
                let g = random_perturbation(&mut rng, 1);
                let f = |x: &[f64]| project_value(m.center(x) + g.eval_unchecked(x));
                total += 1;
                let spec = LossSpec::new(q, eps).expect("valid");
                match excess_transfer_check(f, &m, &Design::Uniform { dim: 1 }, &spec, 1000, seed, 5.0) {
                    Ok(c) => {
                        worst = worst.min(c.rhs_upper - c.lhs_lower);
                        if !c.holds {
                            bad += 1;
                        }
                    }
                    Err(_) => bad += 1,
                }
            }
        }
    }
    Check::new("analysis", "excess_risk_transfer", bad, total, worst)
}

/// Purity, the closed-form regimes and monotonicity of the exponent.
pub fn analysis_rate_exponent(seed: u64) -> Check {
    let mut rng = rng(seed, 43);
    let (mut bad, mut total, mut worst) = (0, 0, 0.0f64);
    let mut record = |gap: f64, tol: f64| {
        total += 1;
        worst = worst.max(gap);
        if !(gap <= tol) {
            bad += 1;
        }
    };
    for &q in &[1.5, 2.0, 3.0] {
        for &phi in &[0.5, 1.0, 2.0] {
            let got = rate_exponent(&RateParams::power_schedule(q, phi)).map(|e| e.lambda_exp);
            record(got.map(|l| (l - 1.0 / (2.0 * (q + phi))).abs()).unwrap_or(f64::NAN), 1e-12);
        }
    }
    for &w in &[0.1, 0.5, 1.0, 2.0] {
        let p = RateParams {
            q: 2.0,
            w,
            p: f64::INFINITY,
            alpha: 1.0,
            eta: f64::INFINITY,
            beta: 1.0,
            k: 0.0,
            xi: DEFAULT_XI,
        };
        let got = rate_exponent(&p).map(|e| e.lambda_exp);
        record(got.map(|l| (l - 1.0 / (2.0 * (1.0 + w))).abs()).unwrap_or(f64::NAN), 1e-12);
    }
    for _ in 0..200 {
        let base = RateParams {
            q: rng.gen_range(1.0..3.0),
            w: rng.gen_range(0.2..3.0),
            p: f64::INFINITY,
            alpha: rng.gen_range(0.2..1.0),
            eta: rng.gen_range(0.2..2.0),
            beta: rng.gen_range(0.5..=1.0),
            k: 0.0,
            xi: DEFAULT_XI,
        };
        let (Ok(a), Ok(b)) = (rate_exponent(&base), rate_exponent(&base)) else {
            record(f64::NAN, 0.0);
            continue;
        };
        record(if a == b { 0.0 } else { f64::INFINITY }, 0.0);
        if a.lambda_positive {
            for p in [RateParams { w: base.w + 0.5, ..base.clone() }, RateParams { q: base.q + 0.5, ..base.clone() }] {
                let l = rate_exponent(&p).map(|e| e.lambda_exp).unwrap_or(f64::INFINITY);
                record((l - a.lambda_exp).max(0.0), 1e-15);
            }
        }
    }
    Check::new("analysis", "rate_exponent", bad, total, worst)
}

fn small_experiment(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::power_schedule(2.0, 1.0);
    c.t_grid = vec![64];
    c.repeats = 1;
    c.n_mc = 2000;
    c.seed = seed;
    c
}

pub fn experiments_determinism(seed: u64) -> Check {
    let r = (|| -> Result<Check> {
        let c = small_experiment(seed);
        let a = crate::util::to_json_bytes(&run_rate_experiment(&c)?)?;
        let b = crate::util::to_json_bytes(&run_rate_experiment(&c)?)?;
        Ok(Check::new("experiments", "determinism", usize::from(a != b), 1, 0.0))
    })();
    Check::from_result("experiments", "determinism", r)
}

pub fn experiments_schedule(seed: u64) -> Check {
    let r = (|| -> Result<Check> {
        let mut c = small_experiment(seed);
        c.t_grid = vec![32, 64, 128];
        let report = run_rate_experiment(&c)?;
        let bad = report.rows.iter().filter(|r| r.eps != r.lambda).count() + usize::from(report.rows.len() != 3);
        Ok(Check::new("experiments", "eps_equals_lambda_schedule", bad, report.rows.len(), 0.0))
    })();
    Check::from_result("experiments", "eps_equals_lambda_schedule", r)
}

pub fn experiments_sparsity(seed: u64) -> Check {
    let r = (|| -> Result<Check> {
        let d = solver_dataset(60, seed);
        let k = KernelSpec::gaussian(0.2)?;
        let top = d.ys.iter().fold(0.0f64, |a, y| a.max(y.abs())) + 1e-6;
        let opts = SolverOptions::default();
        let mut bad = 0;
        let mut total = 0;
        for &q in &[1.0, 1.5, 2.0] {
            let rows = sparsity_sweep(&d, &k, q, 0.01, &[0.0, 0.05, 0.2, top], &opts, None)?;
            for row in &rows {
                total += 1;
                let scanned = row.residuals.iter().filter(|r| r.abs() > row.eps - opts.support_tol).count();
                if row.ratio != scanned as f64 / d.len() as f64 {
                    bad += 1;
                }
            }
            let nonzero = rows[0].residuals.iter().filter(|r| **r != 0.0).count();
            bad += usize::from(rows[0].ratio != nonzero as f64 / d.len() as f64);
            bad += usize::from(rows.last().map(|r| r.ratio) != Some(0.0));
            let f = fit(&d, &k, &LossSpec::new(q, top)?, 0.01, &opts)?;
            bad += usize::from(f.coeffs().iter().any(|c| *c != 0.0));
            total += 3;
        }
        Ok(Check::new("experiments", "sparsity_endpoints", bad, total, 0.0))
    })();
    Check::from_result("experiments", "sparsity_endpoints", r)
}

pub fn experiments_ridge(seed: u64) -> Check {
    let r = (|| -> Result<Check> {
        let mut c = small_experiment(seed);
        c.eta = f64::INFINITY;
        c.t_grid = vec![16, 48, 96];
        c.repeats = 3;
        let pairs = ridge_concordance(&c)?;
        let gaps: Vec<f64> = pairs.iter().map(|(a, b)| (a - b).abs()).collect();
        let worst = gaps.iter().fold(0.0f64, |m, g| m.max(*g));
        Ok(Check::new(
            "experiments",
            "ridge_concordance",
            gaps.iter().filter(|g| **g > 1e-6).count(),
            gaps.len(),
            worst,
        ))
    })();
    Check::from_result("experiments", "ridge_concordance", r)
}

/// The full power-model sweep under the `λ = ε = T^{−α}` schedule; the
/// fitted slope must satisfy `slope ≤ −Λ + 0.15`.
pub fn experiments_rate_sweep(q: f64) -> Check {
    let name = if q == 2.0 { "rate_sweep_q2" } else { "rate_sweep_q1.5" };
    let r = (|| -> Result<Check> {
        let report = run_rate_experiment(&ExperimentConfig::power_schedule(q, 1.0))?;
        let bound = -report.theoretical_lambda + 0.15;
        let margin = bound - report.fitted_slope;
        let mut c = Check::new("experiments", name, usize::from(!(margin >= 0.0)), 1, margin);
        c.detail = format!(
            "slope {:.4} (se {:.4}) against bound {:.4}; {}",
            report.fitted_slope, report.slope_stderr, bound, c.detail
        );
        Ok(c)
    })();
    Check::from_result("experiments", name, r)
}
