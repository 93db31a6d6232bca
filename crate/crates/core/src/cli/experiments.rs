//! Monte Carlo building blocks for the experiments, shared by the runner
//! and the acceptance suite.

use std::path::PathBuf;

use rayon::prelude::*;

use crate::engine::{run_local_sgd, InitialState, RunConfig};
use crate::error::{invalid, Result};
use crate::gauss::{
    sigma_asymptotic, simulate_aggr_ga, simulate_client_ga, simulate_fclt, ContractionKernel,
};
use crate::graph::{banded_connection, load_connection_csv, rho_mix_connection, uniform_connection, ConnectionMatrix};
use crate::linalg::Mat;
use crate::models::{sample_frandeff, CovarianceMode, ModelOracle};
use crate::rng::{substream, Stream};
use crate::stats::{
    chi_cdf, default_alpha_grid, kolmogorov_vs_reference, max_partial_sum, quantile_discrepancy, whiten,
    EmpiricalSample, QuantileReport,
};

/// Population mean of the FRand-eff experiments.
pub const BETA0: [f64; 2] = [2.0, -3.0];
/// Noise variance support of the FRand-eff experiments.
pub const SIGMA_SET: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];
/// Monte Carlo size for `V_K` when no closed form exists.
pub const MC_NOISE_DRAWS: usize = 100_000;

/// FRand-eff population with the standard `beta0` and noise set.
pub fn frandeff(k: usize, gamma: f64, seed: u64) -> Result<ModelOracle> {
    Ok(ModelOracle::FRandEff(sample_frandeff(k, 2, &BETA0, gamma, &SIGMA_SET, seed)?))
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraphSpec {
    Banded { bandwidth: usize },
    RhoMix { rho: f64 },
    Uniform,
    Csv(PathBuf),
}

impl GraphSpec {
    pub fn build(&self, k: usize) -> Result<ConnectionMatrix> {
        match self {
            Self::Banded { bandwidth } => banded_connection(k, *bandwidth),
            Self::RhoMix { rho } => rho_mix_connection(k, *rho),
            Self::Uniform => uniform_connection(k),
            Self::Csv(path) => {
                let c = load_connection_csv(path)?;
                if c.size() != k {
                    return invalid(format!("connection matrix has {} clients, experiment needs {k}", c.size()));
                }
                Ok(c)
            }
        }
    }
}

/// Banded matrix of half-width 1, or full averaging when `K < 3`.
pub fn band_or_uniform(k: usize) -> Result<ConnectionMatrix> {
    if k < 3 {
        uniform_connection(k)
    } else {
        banded_connection(k, 1)
    }
}

pub fn init_from_str(s: &str) -> Result<InitialState> {
    match s {
        "zero" => Ok(InitialState::Zero),
        "theta_star" => Ok(InitialState::ThetaStar),
        other => invalid(format!("init must be `zero` or `theta_star`, got `{other}`")),
    }
}

/// `V_K`, analytic when available.
pub fn noise_covariance(oracle: &ModelOracle, seed: u64) -> Result<Mat> {
    match oracle.noise_covariance(CovarianceMode::Analytic) {
        Ok(v) => Ok(v),
        Err(crate::Error::Unsupported(_)) => {
            oracle.noise_covariance(CovarianceMode::MonteCarlo { n_mc: MC_NOISE_DRAWS, seed })
        }
        Err(e) => Err(e),
    }
}

/// `sqrt(n) (Ybar_n - theta*)` over `reps` replications (replication ids
/// `0..reps`), computed in parallel.
pub fn endpoints(run: &RunConfig, reps: usize) -> Result<Vec<Vec<f64>>> {
    let sq = (run.n as f64).sqrt();
    let ts = run.oracle.theta_star().to_vec();
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut cfg = run.clone();
            cfg.replication = r as u64;
            let tr = run_local_sgd(&cfg, None)?;
            Ok(tr.ybar(cfg.n).iter().zip(&ts).map(|(y, t)| sq * (y - t)).collect())
        })
        .collect()
}

fn ks_against_chi(points: &[Vec<f64>], scaling: &Mat, c: f64, label: &str) -> Result<f64> {
    let s = whiten(points, scaling, label)?;
    let d = scaling.nrows();
    kolmogorov_vs_reference(&s, |x| chi_cdf(d, x), c)
}

/// `d_tilde_c`: endpoints whitened by the finite-sample `Sigma_n`.
pub fn d_tilde_c(run: &RunConfig, reps: usize, c: f64) -> Result<f64> {
    let v = noise_covariance(run.oracle, run.seed)?;
    let kernel = ContractionKernel::new(run.oracle.hessian(), &run.schedule, run.n)?;
    ks_against_chi(&endpoints(run, reps)?, &kernel.sigma_n(&v), c, "d_tilde_c")
}

/// `d_dagger_c`: endpoints whitened by the asymptotic `Sigma / K`.
pub fn d_dagger_c(run: &RunConfig, reps: usize, c: f64) -> Result<f64> {
    let v = noise_covariance(run.oracle, run.seed)?;
    let k = run.oracle.num_clients();
    let sigma = sigma_asymptotic(&run.oracle.hessian(), &v, k)? / k as f64;
    ks_against_chi(&endpoints(run, reps)?, &sigma, c, "d_dagger_c")
}

/// Partial-sum maxima of the engine and the three Gaussian processes, and
/// their quantile discrepancies against the engine.
#[derive(Debug, Clone)]
pub struct QqStudy {
    pub base: EmpiricalSample,
    pub fclt: EmpiricalSample,
    pub aggr: EmpiricalSample,
    pub client: EmpiricalSample,
    pub q_fclt: QuantileReport,
    pub q_aggr: QuantileReport,
    pub q_client: QuantileReport,
}

pub fn qq_study(run: &RunConfig, chains: usize) -> Result<QqStudy> {
    let oracle = run.oracle;
    let k = oracle.num_clients();
    let a = oracle.hessian();
    let v = noise_covariance(oracle, run.seed)?;
    let kernel = ContractionKernel::new(a.clone(), &run.schedule, run.n)?;
    let sigma = sigma_asymptotic(&a, &v, k)?;
    let client_covs = (0..k)
        .map(|c| match oracle.client_noise_covariance(c, CovarianceMode::Analytic) {
            Err(crate::Error::Unsupported(_)) => oracle.client_noise_covariance(
                c,
                CovarianceMode::MonteCarlo { n_mc: MC_NOISE_DRAWS, seed: crate::rng::derive_seed(run.seed, &[c as u64]) },
            ),
            other => other,
        })
        .collect::<Result<Vec<Mat>>>()?;
    let ts = oracle.theta_star().to_vec();
    let zero = vec![0.0; oracle.dim()];
    let rows: Vec<[f64; 4]> = (0..chains)
        .into_par_iter()
        .map(|r| {
            let mut cfg = run.clone();
            cfg.replication = r as u64;
            let base = max_partial_sum(&run_local_sgd(&cfg, None)?, &ts)?;
            let rr = r as u64;
            let fclt = max_partial_sum(&simulate_fclt(&sigma, run.n, substream(run.seed, Stream::Fclt, rr, 0))?, &zero)?;
            let aggr =
                max_partial_sum(&simulate_aggr_ga(&kernel, &v, k, substream(run.seed, Stream::GaChain, rr, 0))?, &zero)?;
            let client = max_partial_sum(
                &simulate_client_ga(
                    &kernel,
                    &client_covs,
                    oracle.weights(),
                    run.connection,
                    run.tau,
                    substream(run.seed, Stream::ClientGa, rr, 0),
                )?,
                &zero,
            )?;
            Ok([base, fclt, aggr, client])
        })
        .collect::<Result<_>>()?;
    let col = |i: usize, label: &str| EmpiricalSample::new(rows.iter().map(|r| r[i]).collect(), label);
    let base = col(0, "engine")?;
    let fclt = col(1, "f-clt")?;
    let aggr = col(2, "aggr-ga")?;
    let client = col(3, "client-ga")?;
    let grid = default_alpha_grid();
    Ok(QqStudy {
        q_fclt: quantile_discrepancy(&base, &fclt, &grid)?,
        q_aggr: quantile_discrepancy(&base, &aggr, &grid)?,
        q_client: quantile_discrepancy(&base, &client, &grid)?,
        base,
        fclt,
        aggr,
        client,
    })
}
