//! Local SGD (Algorithm 1): local gradient steps on every client, mixing
//! through `C` every `tau` steps, and the multiplier-bootstrap variant.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::graph::ConnectionMatrix;
use crate::linalg::{centered_second_moment, Mat};
use crate::models::{ModelOracle, Observation, Poison};
use crate::rng::{substream, SimRng, Stream};
use crate::trajectory::Trajectory;

/// `eta_t = eta0 * (t + k0)^(-beta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub eta0: f64,
    pub k0: f64,
    pub beta: f64,
}

impl StepSchedule {
    pub fn new(eta0: f64, k0: f64, beta: f64) -> Result<Self> {
        if !(eta0 > 0.0) {
            return invalid(format!("eta0 must be positive, got {eta0}"));
        }
        if !(k0 >= 0.0) {
            return invalid(format!("k0 must be nonnegative, got {k0}"));
        }
        if !(beta > 0.5 && beta < 1.0) {
            return invalid(format!("beta must lie in (0.5, 1), got {beta}"));
        }
        Ok(Self { eta0, k0, beta })
    }

    pub fn eta(&self, t: usize) -> f64 {
        self.eta0 * (t as f64 + self.k0).powf(-self.beta)
    }

    /// `eta_1..eta_n`.
    pub fn steps(&self, n: usize) -> Vec<f64> {
        (1..=n).map(|t| self.eta(t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recording {
    Aggregate,
    PerClient,
}

/// Starting matrix `Theta_0`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Zero,
    /// Every client starts at `theta*_K`.
    ThetaStar,
    /// Client-major `K * d` values.
    Custom(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct RunConfig<'a> {
    pub n: usize,
    pub tau: usize,
    pub connection: &'a ConnectionMatrix,
    pub schedule: StepSchedule,
    pub oracle: &'a ModelOracle,
    pub record: Recording,
    pub seed: u64,
    /// Replication index; selects independent data streams under one seed.
    pub replication: u64,
    pub init: InitialState,
}

impl<'a> RunConfig<'a> {
    pub fn new(
        n: usize,
        tau: usize,
        connection: &'a ConnectionMatrix,
        schedule: StepSchedule,
        oracle: &'a ModelOracle,
        seed: u64,
    ) -> Self {
        Self {
            n,
            tau,
            connection,
            schedule,
            oracle,
            record: Recording::Aggregate,
            seed,
            replication: 0,
            init: InitialState::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return invalid("n must be at least 1");
        }
        if self.tau == 0 {
            return invalid("tau must be at least 1");
        }
        let k = self.oracle.num_clients();
        if self.connection.size() != k {
            return Err(Error::DimensionMismatch { expected: k, got: self.connection.size() });
        }
        if let InitialState::Custom(v) = &self.init {
            let need = k * self.oracle.dim();
            if v.len() != need {
                return Err(Error::DimensionMismatch { expected: need, got: v.len() });
            }
        }
        Ok(())
    }

    fn initial_theta(&self) -> Vec<f64> {
        let k = self.oracle.num_clients();
        let d = self.oracle.dim();
        match &self.init {
            InitialState::Zero => vec![0.0; k * d],
            InitialState::ThetaStar => self.oracle.theta_star().repeat(k),
            InitialState::Custom(v) => v.clone(),
        }
    }

    /// Per-client data streams for this replication.
    pub fn data_streams(&self) -> Vec<SimRng> {
        (0..self.oracle.num_clients())
            .map(|k| substream(self.seed, Stream::Data, self.replication, k as u64))
            .collect()
    }
}

/// Poisoning of a subset of clients from step `t0` on.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub t0: usize,
    pub poisoned: Vec<usize>,
    pub kind: Poison,
}

impl AttackSpec {
    fn validate(&self, oracle: &ModelOracle) -> Result<()> {
        if self.t0 == 0 {
            return invalid("attack onset t0 must be at least 1");
        }
        if self.poisoned.is_empty() {
            return invalid("attack needs at least one poisoned client");
        }
        let k = oracle.num_clients();
        if let Some(&bad) = self.poisoned.iter().find(|&&c| c >= k) {
            return Err(Error::OutOfRange { index: bad, max: k - 1 });
        }
        oracle.check_poison(&self.kind)
    }

    fn poison_for(&self, t: usize, k: usize) -> Option<&Poison> {
        (t >= self.t0 && self.poisoned.contains(&k)).then_some(&self.kind)
    }
}

/// `Theta <- Theta C` on client-major storage.
fn mix(theta: &mut [f64], scratch: &mut [f64], c: &Mat, d: usize) {
    let k = c.nrows();
    scratch.iter_mut().for_each(|v| *v = 0.0);
    for j in 0..k {
        let out = &mut scratch[j * d..(j + 1) * d];
        for i in 0..k {
            let cij = c[(i, j)];
            if cij != 0.0 {
                let src = &theta[i * d..(i + 1) * d];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += cij * s;
                }
            }
        }
    }
    theta.copy_from_slice(scratch);
}

fn client_mean(theta: &[f64], k: usize, d: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..k {
        for i in 0..d {
            out[i] += theta[c * d + i];
        }
    }
    out.iter_mut().for_each(|v| *v /= k as f64);
}

/// Runs Algorithm 1.
pub fn run_local_sgd(cfg: &RunConfig, attack: Option<&AttackSpec>) -> Result<Trajectory> {
    cfg.validate()?;
    run_with_streams(cfg, attack, cfg.data_streams())
}

/// Algorithm 1 with caller-supplied per-client data streams.
pub fn run_with_streams(cfg: &RunConfig, attack: Option<&AttackSpec>, mut rngs: Vec<SimRng>) -> Result<Trajectory> {
    cfg.validate()?;
    if let Some(a) = attack {
        a.validate(cfg.oracle)?;
    }
    let oracle = cfg.oracle;
    let k = oracle.num_clients();
    let d = oracle.dim();
    if rngs.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: rngs.len() });
    }
    let c = cfg.connection.entries();
    let scale: Vec<f64> = oracle.weights().iter().map(|w| k as f64 * w).collect();
    let mut theta = cfg.initial_theta();
    let mut scratch = vec![0.0; k * d];
    let mut obs = Observation::new(d);
    let mut g = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut traj = Trajectory::new(oracle.theta_star().to_vec());
    if cfg.record == Recording::PerClient {
        traj = traj.with_clients(k);
    }
    for t in 1..=cfg.n {
        let eta = cfg.schedule.eta(t);
        for (ci, rng) in rngs.iter_mut().enumerate() {
            let poison = attack.and_then(|a| a.poison_for(t, ci));
            oracle.draw(ci, poison, rng, &mut obs);
            let th = &mut theta[ci * d..(ci + 1) * d];
            oracle.gradient(th, &obs, &mut g);
            let step = eta * scale[ci];
            for (v, gi) in th.iter_mut().zip(&g) {
                *v -= step * gi;
            }
        }
        if t % cfg.tau == 0 {
            mix(&mut theta, &mut scratch, c, d);
        }
        client_mean(&theta, k, d, &mut y);
        traj.push(&y)?;
        traj.push_clients(&theta);
    }
    Ok(traj)
}

/// `Ybar_t`.
pub fn polyak_ruppert(traj: &Trajectory, t: usize) -> Result<Vec<f64>> {
    Ok(traj.try_ybar(t)?.to_vec())
}

/// Law of the bootstrap multipliers `W` (mean 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MultiplierLaw {
    /// `W = 1`.
    Degenerate,
    /// Uniform on `[1 - half_width, 1 + half_width]`.
    Uniform { half_width: f64 },
}

impl MultiplierLaw {
    /// Uniform law on `[lo, hi]`; requires `lo + hi = 2` and `lo > 0`.
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0) {
            return invalid(format!("multiplier support must be bounded away from 0, got lower end {lo}"));
        }
        if !(hi > lo) || ((lo + hi) - 2.0).abs() > 1e-12 {
            return invalid(format!("multiplier law on [{lo}, {hi}] does not have mean 1"));
        }
        Ok(Self::Uniform { half_width: (hi - lo) / 2.0 })
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Self::Degenerate => 0.0,
            Self::Uniform { half_width } => half_width * half_width / 3.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::Degenerate => Ok(()),
            Self::Uniform { half_width } if half_width > 0.0 && half_width < 1.0 => Ok(()),
            Self::Uniform { half_width } => {
                invalid(format!("multiplier support must stay in (0, 2), half width {half_width}"))
            }
        }
    }

    fn sample(&self, rng: &mut SimRng) -> f64 {
        match *self {
            Self::Degenerate => 1.0,
            Self::Uniform { half_width } => 1.0 + half_width * (2.0 * rng.gen::<f64>() - 1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub base: Trajectory,
    /// `Ybar_n^(b)` for each chain.
    pub endpoints: Vec<Vec<f64>>,
    pub law: MultiplierLaw,
}

/// Runs the base chain and `b` perturbed chains that reuse its data noise.
pub fn run_multiplier_bootstrap(cfg: &RunConfig, b: usize, law: MultiplierLaw) -> Result<BootstrapResult> {
    cfg.validate()?;
    law.validate()?;
    if b == 0 {
        return invalid("bootstrap needs at least one chain");
    }
    let oracle = cfg.oracle;
    let k = oracle.num_clients();
    let d = oracle.dim();
    let c = cfg.connection.entries();
    let scale: Vec<f64> = oracle.weights().iter().map(|w| k as f64 * w).collect();
    let mut rngs = cfg.data_streams();
    let mut wrngs: Vec<SimRng> = (0..b)
        .map(|i| substream(cfg.seed, Stream::Multiplier, cfg.replication, i as u64))
        .collect();
    let mut theta = cfg.initial_theta();
    let mut chains: Vec<Vec<f64>> = vec![theta.clone(); b];
    let mut sums = vec![vec![0.0; d]; b];
    let mut scratch = vec![0.0; k * d];
    let mut obs = Observation::new(d);
    let mut g = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut base = Trajectory::new(oracle.theta_star().to_vec());
    for t in 1..=cfg.n {
        let eta = cfg.schedule.eta(t);
        for ci in 0..k {
            oracle.draw(ci, None, &mut rngs[ci], &mut obs);
            let step = eta * scale[ci];
            let th = &mut theta[ci * d..(ci + 1) * d];
            oracle.gradient(th, &obs, &mut g);
            for (v, gi) in th.iter_mut().zip(&g) {
                *v -= step * gi;
            }
            for (chain, wrng) in chains.iter_mut().zip(wrngs.iter_mut()) {
                let w = law.sample(wrng);
                let th = &mut chain[ci * d..(ci + 1) * d];
                oracle.gradient(th, &obs, &mut g);
                for (v, gi) in th.iter_mut().zip(&g) {
                    *v -= step * (w * gi);
                }
            }
        }
        if t % cfg.tau == 0 {
            mix(&mut theta, &mut scratch, c, d);
            for chain in chains.iter_mut() {
                mix(chain, &mut scratch, c, d);
            }
        }
        client_mean(&theta, k, d, &mut y);
        base.push(&y)?;
        for (chain, s) in chains.iter().zip(sums.iter_mut()) {
            client_mean(chain, k, d, &mut y);
            for i in 0..d {
                s[i] += y[i];
            }
        }
    }
    let n = cfg.n as f64;
    let endpoints = sums.into_iter().map(|s| s.into_iter().map(|v| v / n).collect()).collect();
    Ok(BootstrapResult { base, endpoints, law })
}

/// Second moment of `sqrt(n) (Ybar_n^(b) - Ybar_n)` divided by the multiplier
/// variance, an estimate of `K^-1 Sigma`. Returns the raw moment for the
/// degenerate law.
pub fn bootstrap_covariance(res: &BootstrapResult) -> Result<Mat> {
    let n = res.base.len();
    let center = res.base.ybar(n).to_vec();
    let m = centered_second_moment(res.endpoints.iter().map(Vec::as_slice), &center)?;
    let var = res.law.variance();
    let scale = if var > 0.0 { n as f64 / var } else { n as f64 };
    Ok(m * scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub t: usize,
    pub eta: f64,
    /// `E |Theta_t (I - J)|_F^2`.
    pub dispersion2: f64,
    /// `E |Y_t - theta*|^2`.
    pub err2: f64,
    /// `E |Y_t - theta*|^4`.
    pub err4: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
    pub slope_dispersion2: f64,
    pub slope_err2: f64,
    pub slope_err4: f64,
}

/// Log-spaced grid of `points` steps in `[lo, n]`.
pub fn log_grid(lo: usize, n: usize, points: usize) -> Vec<usize> {
    let lo = lo.clamp(1, n);
    let (a, b) = ((lo as f64).ln(), (n as f64).ln());
    let mut g: Vec<usize> = (0..points.max(2))
        .map(|i| (a + (b - a) * i as f64 / (points.max(2) - 1) as f64).exp().round() as usize)
        .collect();
    g.dedup();
    g
}

/// Least-squares slope of `log y` on `log x`, skipping nonpositive `y`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y > 0.0)
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// `sum_k |theta^k - mean|^2` via pairwise differences, so identical
/// columns give exactly zero.
fn dispersion(theta: &[f64], k: usize, d: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            for c in 0..d {
                let diff = theta[i * d + c] - theta[j * d + c];
                s += diff * diff;
            }
        }
    }
    s / k as f64
}

/// Empirical moments over `n_reps` replications on a log-spaced grid of `t`.
pub fn moment_scaling_report(cfg: &RunConfig, n_reps: usize, grid: &[usize]) -> Result<MomentReport> {
    if cfg.record != Recording::PerClient {
        return invalid("moment scaling needs per-client recording");
    }
    cfg.validate()?;
    if n_reps == 0 || grid.is_empty() {
        return invalid("need at least one replication and one grid point");
    }
    if let Some(&t) = grid.iter().find(|&&t| t == 0 || t > cfg.n) {
        return Err(Error::OutOfRange { index: t, max: cfg.n });
    }
    let k = cfg.oracle.num_clients();
    let d = cfg.oracle.dim();
    let ts = cfg.oracle.theta_star();
    let per_rep: Vec<Vec<[f64; 3]>> = (0..n_reps)
        .into_par_iter()
        .map(|r| {
            let mut c = cfg.clone();
            c.replication = cfg.replication.wrapping_add(r as u64);
            let tr = run_local_sgd(&c, None)?;
            let mut mat = vec![0.0; k * d];
            Ok(grid
                .iter()
                .map(|&t| {
                    for ci in 0..k {
                        mat[ci * d..(ci + 1) * d].copy_from_slice(tr.theta(t, ci).expect("recorded"));
                    }
                    let e2: f64 = tr.y(t).iter().zip(ts).map(|(a, b)| (a - b).powi(2)).sum();
                    [dispersion(&mat, k, d), e2, e2 * e2]
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let rows: Vec<MomentRow> = grid
        .iter()
        .enumerate()
        .map(|(gi, &t)| {
            let mut acc = [0.0; 3];
            for rep in &per_rep {
                for j in 0..3 {
                    acc[j] += rep[gi][j];
                }
            }
            let m = n_reps as f64;
            MomentRow { t, eta: cfg.schedule.eta(t), dispersion2: acc[0] / m, err2: acc[1] / m, err4: acc[2] / m }
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.t as f64).collect();
    let col = |f: fn(&MomentRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    Ok(MomentReport {
        slope_dispersion2: loglog_slope(&xs, &col(|r| r.dispersion2)),
        slope_err2: loglog_slope(&xs, &col(|r| r.err2)),
        slope_err4: loglog_slope(&xs, &col(|r| r.err4)),
        rows,
    })
}
