use nalgebra::{DMatrix, DVector};
use qtube::kernel::{gram, KernelSpec};
use qtube::loss::LossSpec;
use qtube::models::{sample_dataset, CenterSpec, ConditionalModel, Dataset, Design};
use qtube::solver::{fit, objective, optimality_certificate, FitResult, SolverOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ridge(g: &DMatrix<f64>, ys: &[f64], lambda: f64) -> Vec<f64> {
    let n = ys.len();
    let a = g + DMatrix::identity(n, n) * (lambda * n as f64);
    let c = a.cholesky().expect("ridge system is positive definite").solve(&DVector::from_column_slice(ys));
    c.iter().copied().collect()
}

fn rel_max(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    diff / scale.max(f64::MIN_POSITIVE)
}

fn power_data(t: usize, dim: usize, seed: u64) -> Dataset {
    let m = ConditionalModel::power(1.0, CenterSpec::Default { dim }).unwrap();
    sample_dataset(&m, &Design::Uniform { dim }, t, seed).unwrap()
}

#[test]
fn ridge_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..8 {
        let t = rng.gen_range(2..=64);
        let dim = rng.gen_range(1..=3);
        let lambda = 10f64.powf(rng.gen_range(-3.0..-0.5));
        let d = power_data(t, dim, 100 + case);
        let k = KernelSpec::gaussian(rng.gen_range(0.2..0.6)).unwrap();
        let r = fit(&d, &k, &LossSpec::q_norm(2.0).unwrap(), lambda, &SolverOptions::default()).unwrap();
        let g = gram(&k, &d.xs, 0.0).unwrap();
        let oracle = ridge(&g.entries, &d.ys, lambda);
        assert!(rel_max(r.coeffs(), &oracle) <= 1e-6, "case {case}: {}", rel_max(r.coeffs(), &oracle));
        let fo = objective(&g, &d.ys, &oracle, &LossSpec::q_norm(2.0).unwrap(), lambda).unwrap();
        assert!(r.diagnostics.objective <= fo + 1e-9);
    }
}

#[test]
fn regularization_path_and_norm_bound() {
    let d = power_data(80, 1, 3);
    let k = KernelSpec::gaussian(0.2).unwrap();
    for &(q, eps) in &[(1.0, 0.02), (1.5, 0.0), (2.0, 0.05), (3.0, 0.0)] {
        let spec = LossSpec::new(q, eps).unwrap();
        let g = gram(&k, &d.xs, 0.0).unwrap();
        let f0 = objective(&g, &d.ys, &vec![0.0; d.len()], &spec, 1.0).unwrap();
        let mut prev: Option<FitResult> = None;
        for &lambda in &[1e-3, 3e-3, 1e-2, 3e-2, 1e-1] {
            let r = fit(&d, &k, &spec, lambda, &SolverOptions::default()).unwrap();
            assert!(r.converged, "q={q} lambda={lambda}");
            assert!(r.rkhs_norm_sq <= f0 / lambda + 1e-9);
            let at_zero = objective(&g, &d.ys, &vec![0.0; d.len()], &spec, lambda).unwrap();
            assert!(r.diagnostics.objective <= at_zero);
            if let Some(p) = &prev {
                assert!(p.rkhs_norm_sq >= r.rkhs_norm_sq - 1e-8, "q={q} lambda={lambda}");
            }
            prev = Some(r);
        }
    }
}

#[test]
fn certificate_by_minimum_norm_selection() {
    let d = power_data(50, 2, 9);
    let k = KernelSpec::gaussian(0.3).unwrap();
    let g = gram(&k, &d.xs, 0.0).unwrap();
    for &(q, eps) in &[(1.0, 0.0), (1.0, 0.1), (1.2, 0.05), (2.5, 0.1)] {
        let spec = LossSpec::new(q, eps).unwrap();
        let r = fit(&d, &k, &spec, 0.01, &SolverOptions::default()).unwrap();
        let cert = optimality_certificate(&g, &d.ys, r.coeffs(), &spec, 0.01, r.diagnostics.smoothing).unwrap();
        assert!(cert <= 1e-8, "q={q} eps={eps}: {cert}");
    }
}

#[test]
fn deterministic_and_warm_started() {
    let d = power_data(120, 1, 21);
    let k = KernelSpec::gaussian(0.2).unwrap();
    let spec = LossSpec::new(1.5, 0.05).unwrap();
    let a = fit(&d, &k, &spec, 0.01, &SolverOptions::default()).unwrap();
    let b = fit(&d, &k, &spec, 0.01, &SolverOptions::default()).unwrap();
    assert_eq!(a, b);
    let warm = SolverOptions { init: qtube::solver::Init::Warm(a.coeffs().to_vec()), ..Default::default() };
    let c = fit(&d, &k, &spec, 0.012, &warm).unwrap();
    assert!(c.converged);
    assert!(c.objective_trace.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn iteration_exhaustion_is_reported() {
    let d = power_data(600, 1, 5);
    let k = KernelSpec::gaussian(0.1).unwrap();
    let opts = SolverOptions { max_iters: 3, ..Default::default() };
    let r = fit(&d, &k, &LossSpec::new(1.0, 0.0).unwrap(), 1e-4, &opts).unwrap();
    assert!(!r.converged);
    assert!(r.iterations <= 3);
    let json = r.to_json().unwrap();
    for key in ["coeffs", "residuals", "support", "objective_trace", "converged", "iterations", "rkhs_norm_sq"] {
        assert!(json.get(key).is_some(), "{key}");
    }
}
