use qtube::experiments::{ridge_concordance, run_rate_experiment, sparsity_sweep, EvalSet, ExperimentConfig};
use qtube::kernel::KernelSpec;
use qtube::loss::LossSpec;
use qtube::models::{sample_dataset, CenterSpec, ConditionalModel, Design};
use qtube::solver::SolverOptions;

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::power_schedule(2.0, 1.0);
    c.t_grid = vec![64];
    c.repeats = 1;
    c.n_mc = 2000;
    c.seed = 17;
    c
}

#[test]
fn rerun_gives_identical_report() {
    let c = small_config();
    let a = run_rate_experiment(&c).unwrap();
    let b = run_rate_experiment(&c).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.rows_csv(), b.rows_csv());
    assert_eq!(a.rows.len(), 1);
    assert!(a.failures.is_empty());
}

#[test]
fn schedule_sets_eps_equal_to_lambda() {
    let mut c = small_config();
    c.t_grid = vec![32, 64, 128];
    let r = run_rate_experiment(&c).unwrap();
    assert_eq!(r.rows.len(), 3);
    for row in &r.rows {
        assert_eq!(row.eps, row.lambda, "T={}", row.t);
        assert_eq!(row.completed, 1);
    }
    assert!(r.fitted_slope.is_finite());
    assert!((r.theoretical_lambda - 1.0 / 6.0).abs() < 1e-3);
    assert!(r.rows_csv().starts_with("T,lambda,eps,mean_err,std_err,sparsity\n"));
}

#[test]
fn concordance_with_ridge() {
    let mut c = small_config();
    c.eta = f64::INFINITY;
    c.t_grid = vec![16, 48];
    c.repeats = 3;
    for (ours, ridge) in ridge_concordance(&c).unwrap() {
        assert!((ours - ridge).abs() <= 1e-6, "{ours} vs {ridge}");
    }
}

#[test]
fn sparsity_endpoints() {
    let m = ConditionalModel::power(1.0, CenterSpec::Default { dim: 1 }).unwrap();
    let design = Design::Uniform { dim: 1 };
    let d = sample_dataset(&m, &design, 60, 4).unwrap();
    let k = KernelSpec::gaussian(0.2).unwrap();
    let top = d.ys.iter().fold(0.0f64, |a, y| a.max(y.abs()));
    let eval = EvalSet::new(&m, &design, 1.5, 500, 4).unwrap();
    let opts = SolverOptions::default();
    let rows = sparsity_sweep(&d, &k, 1.5, 0.01, &[top + 0.01, 0.0, 0.05, 0.2], &opts, Some((&eval, 2.0))).unwrap();
    assert!(rows.windows(2).all(|w| w[0].eps < w[1].eps));
    assert_eq!(rows[0].eps, 0.0);
    assert_eq!(rows.last().unwrap().ratio, 0.0);
    assert!(rows.iter().all(|r| r.converged && r.lr_error.is_some()));

    for row in &rows {
        let scanned = row.residuals.iter().filter(|r| r.abs() > row.eps - opts.support_tol).count();
        assert_eq!(row.ratio, scanned as f64 / d.len() as f64);
    }
    let nonzero = rows[0].residuals.iter().filter(|r| **r != 0.0).count();
    assert_eq!(rows[0].ratio, nonzero as f64 / d.len() as f64);
    let spec = LossSpec::new(1.5, top + 0.01).unwrap();
    let fit = qtube::solver::fit(&d, &k, &spec, 0.01, &opts).unwrap();
    assert!(fit.coeffs().iter().all(|c| *c == 0.0));
    assert!(fit.support.is_empty());
}
