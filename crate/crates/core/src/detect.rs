//! Algorithm 2: sequential detection of an attack instance by thresholding
//! the CUSUM statistic with Gaussian-bootstrap quantiles.

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{run_local_sgd, AttackSpec, RunConfig, StepSchedule};
use crate::error::{invalid, Error, Result};
use crate::gauss::AggrGaChain;
use crate::linalg::{sample_covariance, symmetrize, Mat};
use crate::models::{Observation, Poison};
use crate::rng::{derive_seed, substream, Stream};
use crate::stats::{quantile_sorted, CusumTracker};
use crate::trajectory::Trajectory;

/// Minimum number of bootstrap chains.
pub const MIN_BOOTSTRAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestCadence {
    EveryStep,
    SyncSteps { tau: usize },
}

impl TestCadence {
    fn tests(&self, t: usize) -> bool {
        match *self {
            Self::EveryStep => true,
            Self::SyncSteps { tau } => t % tau == 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub alpha: f64,
    /// Number of bootstrap chains `B`.
    pub bootstrap: usize,
    /// `c` in the offset `c sqrt(n)`.
    pub c_thresh: f64,
    pub a: Mat,
    pub v_k: Mat,
    /// Number of clients `K`.
    pub clients: usize,
    pub schedule: StepSchedule,
    pub n: usize,
    pub cadence: TestCadence,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.bootstrap < MIN_BOOTSTRAP {
            return invalid(format!("B = {} is below the minimum {MIN_BOOTSTRAP}", self.bootstrap));
        }
        if !(self.c_thresh >= 0.0) {
            return invalid(format!("c_thresh must be nonnegative, got {}", self.c_thresh));
        }
        if self.n == 0 || self.clients == 0 {
            return invalid("n and K must be positive");
        }
        let d = self.a.nrows();
        if self.a.ncols() != d || self.v_k.nrows() != d || self.v_k.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: self.v_k.nrows() });
        }
        if let TestCadence::SyncSteps { tau: 0 } = self.cadence {
            return invalid("sync cadence needs tau >= 1");
        }
        Ok(())
    }

    pub fn offset(&self) -> f64 {
        self.c_thresh * (self.n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: usize,
    pub r_t: f64,
    pub s_t: usize,
    /// Bootstrap quantile `q_{1-alpha}` at `t`.
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub detected: bool,
    /// `T0_hat` when detected.
    pub stopping_time: Option<usize>,
    /// `s0_hat = s_{T0_hat}` when detected.
    pub attack_instance: Option<usize>,
    pub offset: f64,
    pub trace: Vec<TraceRow>,
}

impl DetectionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Streaming form of Algorithm 2.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: DetectorConfig,
    chains: Vec<AggrGaChain>,
    chain_stats: Vec<CusumTracker>,
    data: CusumTracker,
    t: usize,
    stop: Option<(usize, usize)>,
    trace: Vec<TraceRow>,
    scratch: Vec<f64>,
}

impl Detector {
    pub fn new(cfg: DetectorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.a.nrows();
        let chains = (0..cfg.bootstrap)
            .map(|b| AggrGaChain::new(&cfg.a, &cfg.v_k, cfg.clients, substream(seed, Stream::Detector, b as u64, 0)))
            .collect::<Result<Vec<_>>>()?;
        let b = cfg.bootstrap;
        Ok(Self {
            chains,
            chain_stats: vec![CusumTracker::new(d); b],
            data: CusumTracker::new(d),
            t: 0,
            stop: None,
            trace: Vec::new(),
            scratch: vec![0.0; b],
            cfg,
        })
    }

    /// Returns `true` once the threshold has been crossed.
    pub fn stopped(&self) -> bool {
        self.stop.is_some()
    }

    /// Feeds `Y_t`; returns `(t, s_t)` on the step the threshold is crossed.
    pub fn observe(&mut self, y: &[f64]) -> Option<(usize, usize)> {
        if self.stop.is_some() || self.t >= self.cfg.n {
            return None;
        }
        self.t += 1;
        let t = self.t;
        let eta = self.cfg.schedule.eta(t);
        for (chain, st) in self.chains.iter_mut().zip(self.chain_stats.iter_mut()) {
            st.push(chain.step(eta));
        }
        self.data.push(y);
        if !self.cfg.cadence.tests(t) {
            return None;
        }
        let (r_t, s_t) = self.data.current();
        for (v, st) in self.scratch.iter_mut().zip(&self.chain_stats) {
            *v = st.current().0;
        }
        self.scratch.sort_by(f64::total_cmp);
        let q = quantile_sorted(&self.scratch, 1.0 - self.cfg.alpha);
        self.trace.push(TraceRow { t, r_t, s_t, q });
        if r_t > q + self.cfg.offset() {
            self.stop = Some((t, s_t));
            return self.stop;
        }
        None
    }

    pub fn report(self) -> DetectionReport {
        let offset = self.cfg.offset();
        match self.stop {
            Some((t, s)) if t < self.cfg.n => DetectionReport {
                detected: true,
                stopping_time: Some(t),
                attack_instance: Some(s),
                offset,
                trace: self.trace,
            },
            _ => DetectionReport { detected: false, stopping_time: None, attack_instance: None, offset, trace: self.trace },
        }
    }
}

/// Runs Algorithm 2 over a recorded trajectory.
pub fn detect(stream: &Trajectory, cfg: &DetectorConfig, seed: u64) -> Result<DetectionReport> {
    if stream.len() < cfg.n {
        return invalid(format!("trajectory has {} steps, detector needs {}", stream.len(), cfg.n));
    }
    if stream.dim() != cfg.a.nrows() {
        return Err(Error::DimensionMismatch { expected: cfg.a.nrows(), got: stream.dim() });
    }
    let mut det = Detector::new(cfg.clone(), seed)?;
    for t in 1..=cfg.n {
        if det.observe(stream.y(t)).is_some() {
            break;
        }
    }
    Ok(det.report())
}

/// Attack family used by the power table; `mu` scales the mean shift, and
/// for label flips any `mu > 0` switches the attack on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackTemplate {
    MeanShift,
    LabelFlip,
}

#[derive(Debug, Clone)]
pub struct DetectionScenario<'a> {
    pub run: RunConfig<'a>,
    pub detector: DetectorConfig,
    pub t0: usize,
    pub poisoned: Vec<usize>,
    pub template: AttackTemplate,
}

impl DetectionScenario<'_> {
    pub fn attack_for(&self, mu: f64) -> Option<AttackSpec> {
        if mu == 0.0 {
            return None;
        }
        let kind = match self.template {
            AttackTemplate::MeanShift => Poison::MeanShift(vec![mu; self.run.oracle.dim()]),
            AttackTemplate::LabelFlip => Poison::LabelFlip,
        };
        Some(AttackSpec { t0: self.t0, poisoned: self.poisoned.clone(), kind })
    }

    /// One replication: data streams and bootstrap streams depend only on
    /// `(seed, rep)`, so every `mu` sees the same randomness.
    pub fn run_once(&self, mu: f64, rep: usize) -> Result<DetectionReport> {
        let mut cfg = self.run.clone();
        cfg.replication = rep as u64;
        let traj = run_local_sgd(&cfg, self.attack_for(mu).as_ref())?;
        detect(&traj, &self.detector, derive_seed(cfg.seed, &[Stream::Detector as u64, rep as u64]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRow {
    pub mu: f64,
    pub reps: usize,
    pub detect_prob: f64,
    pub s0_mean: f64,
    pub s0_lo: f64,
    pub s0_hi: f64,
    pub t0_mean: f64,
    pub t0_lo: f64,
    pub t0_hi: f64,
}

fn summarize(vals: &mut [f64]) -> (f64, f64, f64) {
    if vals.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    vals.sort_by(f64::total_cmp);
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    (mean, quantile_sorted(vals, 0.025), quantile_sorted(vals, 0.975))
}

/// Detection probability and 95% central intervals of `s0_hat`, `T0_hat`
/// among detected runs, per `mu`.
pub fn detection_power_table(scenario: &DetectionScenario, mu_grid: &[f64], reps: usize) -> Result<Vec<PowerRow>> {
    if reps < 100 {
        return invalid(format!("power table needs at least 100 replications, got {reps}"));
    }
    scenario.run.validate()?;
    scenario.detector.validate()?;
    mu_grid
        .iter()
        .map(|&mu| {
            let reports: Vec<DetectionReport> =
                (0..reps).into_par_iter().map(|r| scenario.run_once(mu, r)).collect::<Result<_>>()?;
            let hits: Vec<&DetectionReport> = reports.iter().filter(|r| r.detected).collect();
            let mut s0: Vec<f64> = hits.iter().map(|r| r.attack_instance.unwrap_or(0) as f64).collect();
            let mut t0: Vec<f64> = hits.iter().map(|r| r.stopping_time.unwrap_or(0) as f64).collect();
            let (s0_mean, s0_lo, s0_hi) = summarize(&mut s0);
            let (t0_mean, t0_lo, t0_hi) = summarize(&mut t0);
            Ok(PowerRow {
                mu,
                reps,
                detect_prob: hits.len() as f64 / reps as f64,
                s0_mean,
                s0_lo,
                s0_hi,
                t0_mean,
                t0_lo,
                t0_hi,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct WarmStart {
    pub theta_hat: Vec<f64>,
    pub a_hat: Mat,
    pub v_hat: Mat,
}

/// Finite-difference step for `A_hat`.
const FD_STEP: f64 = 1e-5;

/// Runs `cfg.n` warm-start steps, then estimates `A` by central finite
/// differences of sampled gradients (common random numbers) and `V_K` by the
/// empirical covariance of `sum_k w_k grad f_k` at the endpoint over
/// `window` fresh draws per client.
pub fn warm_start_estimates(cfg: &RunConfig, window: usize) -> Result<WarmStart> {
    let oracle = cfg.oracle;
    let d = oracle.dim();
    if window < 10 * d {
        return invalid(format!("warm-start window {window} is shorter than 10 d = {}", 10 * d));
    }
    let pre = run_local_sgd(cfg, None)?;
    let theta_hat = pre.y(pre.len()).to_vec();
    let k = oracle.num_clients();
    let w = oracle.weights();
    let mut rngs: Vec<_> = (0..k).map(|c| substream(cfg.seed, Stream::WarmStart, cfg.replication, c as u64)).collect();
    let mut obs = Observation::new(d);
    let mut g = vec![0.0; d];
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    let mut a_hat = Mat::zeros(d, d);
    let mut rows = vec![0.0; window * d];
    let mut tp = theta_hat.clone();
    let mut tm = theta_hat.clone();
    for i in 0..window {
        let row = &mut rows[i * d..(i + 1) * d];
        for (c, rng) in rngs.iter_mut().enumerate() {
            oracle.draw(c, None, rng, &mut obs);
            oracle.gradient(&theta_hat, &obs, &mut g);
            for q in 0..d {
                row[q] += w[c] * g[q];
            }
            for j in 0..d {
                tp[j] += FD_STEP;
                tm[j] -= FD_STEP;
                oracle.gradient(&tp, &obs, &mut gp);
                oracle.gradient(&tm, &obs, &mut gm);
                for q in 0..d {
                    a_hat[(q, j)] += w[c] * (gp[q] - gm[q]) / (2.0 * FD_STEP);
                }
                tp[j] = theta_hat[j];
                tm[j] = theta_hat[j];
            }
        }
    }
    let a_hat = symmetrize(&(a_hat / window as f64));
    let v_hat = sample_covariance(rows.chunks(d), d)?;
    Ok(WarmStart { theta_hat, a_hat, v_hat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::InitialState;
    use crate::graph::banded_connection;
    use crate::linalg::rel_frobenius;
    use crate::models::{sample_frandeff, CovarianceMode, ModelOracle, QuadraticPopulation};

    fn frand() -> ModelOracle {
        ModelOracle::FRandEff(sample_frandeff(10, 2, &[2.0, -3.0], 1.0, &[1.0, 2.0, 3.0, 4.0, 5.0], 42).unwrap())
    }

    fn det_cfg(o: &ModelOracle, n: usize, b: usize, cadence: TestCadence) -> DetectorConfig {
        DetectorConfig {
            alpha: 0.05,
            bootstrap: b,
            c_thresh: 0.1,
            a: o.hessian(),
            v_k: o.noise_covariance(CovarianceMode::Analytic).unwrap(),
            clients: o.num_clients(),
            schedule: StepSchedule::new(0.3, 0.0, 0.75).unwrap(),
            n,
            cadence,
        }
    }

    #[test]
    fn config_validation() {
        let o = frand();
        let mut c = det_cfg(&o, 100, 99, TestCadence::EveryStep);
        assert!(c.validate().is_err());
        c.bootstrap = 100;
        assert!(c.validate().is_ok());
        c.alpha = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn detects_constant_drift_and_reports_consistently() {
        let o = frand();
        let cfg = det_cfg(&o, 200, 100, TestCadence::EveryStep);
        let ys: Vec<Vec<f64>> = (0..200).map(|t| if t < 80 { vec![0.0, 0.0] } else { vec![5.0, 5.0] }).collect();
        let tr = Trajectory::from_ys(&ys, vec![0.0; 2]).unwrap();
        let rep = detect(&tr, &cfg, 3).unwrap();
        assert!(rep.detected);
        let t = rep.stopping_time.unwrap();
        let s = rep.attack_instance.unwrap();
        assert!(s <= t && t < 200);
        assert_eq!(s, 80);
        for row in &rep.trace {
            let (r, s) = crate::stats::cusum(&tr, row.t).unwrap();
            assert_eq!((r, s), (row.r_t, row.s_t));
        }
        let json = rep.to_json().unwrap();
        assert!(json.contains("\"stopping_time\""));
    }

    #[test]
    fn bootstrap_quantiles_ignore_data() {
        let o = frand();
        let cfg = det_cfg(&o, 60, 100, TestCadence::SyncSteps { tau: 5 });
        let a = Trajectory::from_ys(&vec![vec![0.0, 0.0]; 60], vec![0.0; 2]).unwrap();
        let b = Trajectory::from_ys(&(0..60).map(|t| vec![(t as f64).sin() * 0.01, 0.0]).collect::<Vec<_>>(), vec![0.0; 2])
            .unwrap();
        let ra = detect(&a, &cfg, 11).unwrap();
        let rb = detect(&b, &cfg, 11).unwrap();
        let qa: Vec<f64> = ra.trace.iter().map(|r| r.q).collect();
        let qb: Vec<f64> = rb.trace.iter().map(|r| r.q).collect();
        assert_eq!(qa, qb);
        assert_eq!(ra.trace.iter().map(|r| r.t).collect::<Vec<_>>(), (1..=12).map(|i| 5 * i).collect::<Vec<_>>());
    }

    #[test]
    fn larger_threshold_never_stops_earlier() {
        let o = frand();
        let c = banded_connection(10, 1).unwrap();
        let mut run = RunConfig::new(300, 20, &c, StepSchedule::new(0.3, 0.0, 0.75).unwrap(), &o, 5);
        run.init = InitialState::ThetaStar;
        let attack = AttackSpec { t0: 150, poisoned: (0..5).collect(), kind: Poison::MeanShift(vec![1.0, 1.0]) };
        let tr = run_local_sgd(&run, Some(&attack)).unwrap();
        let mut last = 0usize;
        for c_thresh in [0.0, 0.05, 0.1, 0.3, 1.0] {
            let mut cfg = det_cfg(&o, 300, 100, TestCadence::EveryStep);
            cfg.c_thresh = c_thresh;
            let rep = detect(&tr, &cfg, 9).unwrap();
            let stop = rep.stopping_time.unwrap_or(usize::MAX);
            assert!(stop >= last);
            last = stop;
        }
    }

    #[test]
    fn late_attack_equals_null() {
        let o = frand();
        let c = banded_connection(10, 1).unwrap();
        let mut run = RunConfig::new(100, 20, &c, StepSchedule::new(0.3, 0.0, 0.75).unwrap(), &o, 5);
        run.init = InitialState::ThetaStar;
        let mut sc = DetectionScenario {
            run,
            detector: det_cfg(&o, 100, 100, TestCadence::EveryStep),
            t0: 101,
            poisoned: vec![0, 1],
            template: AttackTemplate::MeanShift,
        };
        let null = sc.run_once(0.0, 3).unwrap();
        assert_eq!(sc.run_once(2.0, 3).unwrap(), null);
        sc.t0 = 40;
        assert!(sc.attack_for(2.0).is_some());
        assert!(detection_power_table(&sc, &[0.0], 50).is_err());
    }

    #[test]
    fn warm_start_recovers_model_quantities() {
        let o = frand();
        let c = banded_connection(10, 1).unwrap();
        let run = RunConfig::new(200, 20, &c, StepSchedule::new(0.3, 0.0, 0.75).unwrap(), &o, 7);
        let ws = warm_start_estimates(&run, 200).unwrap();
        assert!(rel_frobenius(&ws.a_hat, &Mat::identity(2, 2)) < 0.10, "{}", ws.a_hat);
        let v = o.noise_covariance(CovarianceMode::Analytic).unwrap();
        assert!(rel_frobenius(&ws.v_hat, &v) < 0.20, "{} vs {}", ws.v_hat, v);
        assert!(warm_start_estimates(&run, 19).is_err());
    }

    #[test]
    fn warm_start_zero_noise() {
        let q = QuadraticPopulation::homogeneous(3, vec![1.0, 2.0], 0.0).unwrap();
        let o = ModelOracle::Quadratic(q);
        let c = banded_connection(3, 1).unwrap();
        let run = RunConfig::new(50, 2, &c, StepSchedule::new(0.3, 0.0, 0.75).unwrap(), &o, 7);
        let ws = warm_start_estimates(&run, 40).unwrap();
        assert_eq!(ws.v_hat, Mat::zeros(2, 2));
        assert!(rel_frobenius(&ws.a_hat, &Mat::identity(2, 2)) < 1e-6);
    }
}
