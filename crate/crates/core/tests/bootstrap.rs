use fedga::cli::experiments::{frandeff, noise_covariance};
use fedga::engine::{bootstrap_covariance, run_multiplier_bootstrap, InitialState, MultiplierLaw, RunConfig, StepSchedule};
use fedga::gauss::{sigma_asymptotic, ContractionKernel};
use fedga::graph::banded_connection;

// At n = 500 the finite-sample Sigma_n is still well above Sigma / K; the
// normalised bootstrap covariance follows Sigma_n.
#[test]
fn bootstrap_covariance_tracks_sigma_n() {
    let k = 10;
    let oracle = frandeff(k, 1.0, 11).unwrap();
    let conn = banded_connection(k, 1).unwrap();
    let sched = StepSchedule::new(0.3, 0.0, 0.75).unwrap();
    let mut run = RunConfig::new(500, 10, &conn, sched, &oracle, 11);
    run.init = InitialState::ThetaStar;
    let res = run_multiplier_bootstrap(&run, 200, MultiplierLaw::uniform(0.5, 1.5).unwrap()).unwrap();
    let boot = bootstrap_covariance(&res).unwrap();
    let v = noise_covariance(&oracle, 11).unwrap();
    let sigma_n = ContractionKernel::new(oracle.hessian(), &sched, 500).unwrap().sigma_n(&v);
    let ratio = boot.norm() / sigma_n.norm();
    assert!((0.5..2.0).contains(&ratio), "ratio {ratio}");
    let asym = sigma_asymptotic(&oracle.hessian(), &v, k).unwrap() / k as f64;
    assert!(sigma_n.norm() > 1.5 * asym.norm());
}

// Distinct chains use independent multiplier streams.
#[test]
fn bootstrap_chains_uncorrelated() {
    let k = 4;
    let oracle = frandeff(k, 1.0, 2).unwrap();
    let conn = banded_connection(k, 1).unwrap();
    let sched = StepSchedule::new(0.3, 0.0, 0.75).unwrap();
    let mut run = RunConfig::new(200, 5, &conn, sched, &oracle, 2);
    run.init = InitialState::ThetaStar;
    let reps = 400;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for r in 0..reps {
        run.replication = r;
        let res = run_multiplier_bootstrap(&run, 2, MultiplierLaw::uniform(0.5, 1.5).unwrap()).unwrap();
        let base = res.base.ybar(200)[0];
        a.push(res.endpoints[0][0] - base);
        b.push(res.endpoints[1][0] - base);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&a), mean(&b));
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / reps as f64;
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / reps as f64;
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / reps as f64;
    let corr = cov / (va * vb).sqrt();
    // 4 standard errors of a null correlation
    assert!(corr.abs() < 4.0 / (reps as f64).sqrt(), "corr {corr}");
}

/// The multiplier bootstrap draws from its own streams, so changing the law
/// never perturbs the data.
#[test]
fn bootstrap_base_independent_of_law() {
    let oracle = frandeff(4, 1.0, 5).unwrap();
    let conn = banded_connection(4, 1).unwrap();
    let run = RunConfig::new(50, 5, &conn, StepSchedule::new(0.3, 0.0, 0.75).unwrap(), &oracle, 5);
    let a = run_multiplier_bootstrap(&run, 3, MultiplierLaw::Degenerate).unwrap();
    let b = run_multiplier_bootstrap(&run, 3, MultiplierLaw::uniform(0.5, 1.5).unwrap()).unwrap();
    assert_eq!(a.base.ybars_flat(), b.base.ybars_flat());
}
