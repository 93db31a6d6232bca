//! Client-level problems: gradient oracles, ground truth `theta*`, Hessian `A`
//! and aggregate noise covariance `V_K`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{sample_covariance, Mat};
use crate::rng::{substream, SimRng, Stream};

/// Tolerance on `sum_k w_k = 1`.
pub const WEIGHT_TOL: f64 = 1e-12;

/// One sampled data point. For the quadratic model `x` holds the noisy
/// location `z` and `y` is unused.
#[derive(Debug, Clone, Default)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Observation {
    pub fn new(dim: usize) -> Self {
        Self { x: vec![0.0; dim], y: 0.0 }
    }
}

/// How a poisoned client's data law is altered.
#[derive(Debug, Clone, PartialEq)]
pub enum Poison {
    /// Shifts the client's true parameter by a vector.
    MeanShift(Vec<f64>),
    /// Applies the label map of a classification model.
    LabelFlip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovarianceMode {
    Analytic,
    MonteCarlo { n_mc: usize, seed: u64 },
}

fn check_weights(weights: &[f64], b1: f64, b2: f64) -> Result<()> {
    let k = weights.len();
    if k == 0 {
        return invalid("at least one client is required");
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_TOL {
        return invalid(format!("weights sum to {sum}, expected 1"));
    }
    for (i, &w) in weights.iter().enumerate() {
        let kw = k as f64 * w;
        if w <= 0.0 || kw < b1 - WEIGHT_TOL || kw > b2 + WEIGHT_TOL {
            return invalid(format!("K*w_{i} = {kw} outside [{b1}, {b2}]"));
        }
    }
    Ok(())
}

fn weighted_mean(vs: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let d = vs[0].len();
    let mut m = vec![0.0; d];
    for (v, w) in vs.iter().zip(weights) {
        for i in 0..d {
            m[i] += w * v[i];
        }
    }
    m
}

fn uniform_weights(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

fn gaussian_vec(rng: &mut SimRng, mean: &[f64], scale: f64) -> Vec<f64> {
    mean.iter()
        .map(|m| m + scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Federated random-effects linear model: `y = x^T beta_k + eps`,
/// `x ~ N(0, I)`, `eps ~ N(0, sigma_k^2)`, `beta_k ~ N(beta0, gamma I)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FRandEffPopulation {
    pub dim: usize,
    pub beta0: Vec<f64>,
    pub gamma: f64,
    pub betas: Vec<Vec<f64>>,
    pub sigmas2: Vec<f64>,
    pub weights: Vec<f64>,
    pub seed: u64,
    #[serde(skip)]
    theta_star: Vec<f64>,
}

pub fn sample_frandeff(
    k: usize,
    d: usize,
    beta0: &[f64],
    gamma: f64,
    sigma_set: &[f64],
    seed: u64,
) -> Result<FRandEffPopulation> {
    if k == 0 || d == 0 {
        return invalid("K and d must be positive");
    }
    if beta0.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: beta0.len() });
    }
    if !(gamma >= 0.0) {
        return invalid(format!("gamma must be nonnegative, got {gamma}"));
    }
    if sigma_set.is_empty() {
        return invalid("sigma_set is empty");
    }
    if sigma_set.iter().any(|&s| !(s > 0.0)) {
        return invalid("sigma_set entries must be positive");
    }
    let mut rng = substream(seed, Stream::Population, k as u64, d as u64);
    let sd = gamma.sqrt();
    let betas: Vec<Vec<f64>> = (0..k).map(|_| gaussian_vec(&mut rng, beta0, sd)).collect();
    let sigmas2: Vec<f64> = (0..k)
        .map(|_| sigma_set[rng.gen_range(0..sigma_set.len())])
        .collect();
    FRandEffPopulation::new(d, beta0.to_vec(), gamma, betas, sigmas2, uniform_weights(k), seed)
}

impl FRandEffPopulation {
    pub fn new(
        dim: usize,
        beta0: Vec<f64>,
        gamma: f64,
        betas: Vec<Vec<f64>>,
        sigmas2: Vec<f64>,
        weights: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        let mut p = Self { dim, beta0, gamma, betas, sigmas2, weights, seed, theta_star: Vec::new() };
        p.finish()?;
        Ok(p)
    }

    fn finish(&mut self) -> Result<()> {
        let k = self.betas.len();
        if k == 0 {
            return invalid("population has no clients");
        }
        for b in &self.betas {
            if b.len() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: b.len() });
            }
        }
        if self.sigmas2.len() != k || self.weights.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: self.sigmas2.len().min(self.weights.len()) });
        }
        if self.sigmas2.iter().any(|&s| !(s >= 0.0)) {
            return invalid("noise variances must be nonnegative");
        }
        check_weights(&self.weights, 0.0, f64::INFINITY)?;
        self.theta_star = weighted_mean(&self.betas, &self.weights);
        Ok(())
    }

    /// Replaces the weights, enforcing `b1 <= K w_k <= b2`.
    pub fn with_weights(mut self, weights: Vec<f64>, b1: f64, b2: f64) -> Result<Self> {
        check_weights(&weights, b1, b2)?;
        if weights.len() != self.betas.len() {
            return Err(Error::DimensionMismatch { expected: self.betas.len(), got: weights.len() });
        }
        self.weights = weights;
        self.finish()?;
        Ok(self)
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut p: Self = serde_json::from_str(text)?;
        p.finish()?;
        Ok(p)
    }

    /// `Var(g_k(theta*))` in closed form.
    pub fn client_covariance(&self, k: usize) -> Mat {
        let d = self.dim;
        let delta: Vec<f64> = (0..d).map(|i| self.theta_star[i] - self.betas[k][i]).collect();
        let n2: f64 = delta.iter().map(|v| v * v).sum();
        let mut m = Mat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = delta[i] * delta[j];
            }
            m[(i, i)] += n2 + self.sigmas2[k];
        }
        m
    }
}

/// Additive-noise quadratic: `F_k(theta) = |theta - mu_k|^2 / 2` observed
/// through `z ~ N(mu_k, sigma_k^2 I)`, `grad f = theta - z`.
#[derive(Debug, Clone)]
pub struct QuadraticPopulation {
    pub dim: usize,
    pub means: Vec<Vec<f64>>,
    pub sigmas2: Vec<f64>,
    pub weights: Vec<f64>,
    theta_star: Vec<f64>,
}

impl QuadraticPopulation {
    pub fn new(means: Vec<Vec<f64>>, sigmas2: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let k = means.len();
        if k == 0 {
            return invalid("population has no clients");
        }
        let dim = means[0].len();
        if means.iter().any(|m| m.len() != dim) || dim == 0 {
            return invalid("client means must share a positive dimension");
        }
        if sigmas2.len() != k || weights.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: sigmas2.len().min(weights.len()) });
        }
        if sigmas2.iter().any(|&s| !(s >= 0.0)) {
            return invalid("noise variances must be nonnegative");
        }
        check_weights(&weights, 0.0, f64::INFINITY)?;
        let theta_star = weighted_mean(&means, &weights);
        Ok(Self { dim, means, sigmas2, weights, theta_star })
    }

    /// Homogeneous population with uniform weights.
    pub fn homogeneous(k: usize, mean: Vec<f64>, sigma2: f64) -> Result<Self> {
        Self::new(vec![mean; k], vec![sigma2; k], uniform_weights(k))
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Involutive map on a finite label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap(Vec<usize>);

impl LabelMap {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        for (i, &j) in map.iter().enumerate() {
            if j >= n || map[j] != i {
                return invalid("label map must be an involution");
            }
        }
        Ok(Self(map))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    /// Binary inversion `0 <-> 1`.
    pub fn binary_swap() -> Self {
        Self(vec![1, 0])
    }

    pub fn apply(&self, label: usize) -> usize {
        self.0[label]
    }
}

/// Number of feature draws used to evaluate expectations of the logistic model.
pub const LOGISTIC_EVAL_SIZE: usize = 4096;

/// Binary logistic classification: `x ~ N(0, I)`,
/// `y ~ Bernoulli(sigmoid(x^T w_k))`, cross-entropy loss.
#[derive(Debug, Clone)]
pub struct LogisticPopulation {
    pub dim: usize,
    pub w0: Vec<f64>,
    pub gamma: f64,
    pub true_weights: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub flip: LabelMap,
    pub seed: u64,
    eval_x: Vec<Vec<f64>>,
    theta_star: Vec<f64>,
    hessian: Mat,
}

pub fn sample_logistic(k: usize, d: usize, w0: &[f64], gamma: f64, seed: u64) -> Result<LogisticPopulation> {
    if k == 0 || d == 0 {
        return invalid("K and d must be positive");
    }
    if w0.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: w0.len() });
    }
    if !(gamma >= 0.0) {
        return invalid(format!("gamma must be nonnegative, got {gamma}"));
    }
    let mut rng = substream(seed, Stream::Population, k as u64, d as u64 + 1000);
    let true_weights: Vec<Vec<f64>> = (0..k).map(|_| gaussian_vec(&mut rng, w0, gamma.sqrt())).collect();
    let mut erng = substream(seed, Stream::Evaluation, k as u64, d as u64);
    let zero = vec![0.0; d];
    let eval_x: Vec<Vec<f64>> = (0..LOGISTIC_EVAL_SIZE).map(|_| gaussian_vec(&mut erng, &zero, 1.0)).collect();
    let mut p = LogisticPopulation {
        dim: d,
        w0: w0.to_vec(),
        gamma,
        true_weights,
        weights: uniform_weights(k),
        flip: LabelMap::binary_swap(),
        seed,
        eval_x,
        theta_star: vec![0.0; d],
        hessian: Mat::identity(d, d),
    };
    p.solve_theta_star()?;
    Ok(p)
}

impl LogisticPopulation {
    /// `grad F_k(theta) = E_x[x (sigmoid(x^T theta) - sigmoid(x^T w_k))]` on the
    /// evaluation sample.
    pub fn exact_gradient(&self, k: usize, theta: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut g = vec![0.0; d];
        for x in &self.eval_x {
            let r = sigmoid(dot(x, theta)) - sigmoid(dot(x, &self.true_weights[k]));
            for i in 0..d {
                g[i] += r * x[i];
            }
        }
        g.iter_mut().for_each(|v| *v /= self.eval_x.len() as f64);
        g
    }

    fn hessian_at(&self, theta: &[f64]) -> Mat {
        let d = self.dim;
        let mut h = Mat::zeros(d, d);
        for x in &self.eval_x {
            let s = sigmoid(dot(x, theta));
            let w = s * (1.0 - s);
            for i in 0..d {
                for j in 0..d {
                    h[(i, j)] += w * x[i] * x[j];
                }
            }
        }
        h / self.eval_x.len() as f64
    }

    fn solve_theta_star(&mut self) -> Result<()> {
        let d = self.dim;
        let mut theta = weighted_mean(&self.true_weights, &self.weights);
        for _ in 0..100 {
            let mut g = vec![0.0; d];
            for k in 0..self.true_weights.len() {
                let gk = self.exact_gradient(k, &theta);
                for i in 0..d {
                    g[i] += self.weights[k] * gk[i];
                }
            }
            let h = self.hessian_at(&theta);
            let step = h
                .lu()
                .solve(&nalgebra::DVector::from_vec(g.clone()))
                .ok_or(Error::Singular)?;
            for i in 0..d {
                theta[i] -= step[i];
            }
            if step.norm() < 1e-13 {
                break;
            }
        }
        self.hessian = self.hessian_at(&theta);
        self.theta_star = theta;
        Ok(())
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A client population together with its gradient oracle.
#[derive(Debug, Clone)]
pub enum ModelOracle {
    FRandEff(FRandEffPopulation),
    Quadratic(QuadraticPopulation),
    Logistic(LogisticPopulation),
}

impl ModelOracle {
    pub fn num_clients(&self) -> usize {
        self.weights().len()
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::FRandEff(p) => p.dim,
            Self::Quadratic(p) => p.dim,
            Self::Logistic(p) => p.dim,
        }
    }

    pub fn weights(&self) -> &[f64] {
        match self {
            Self::FRandEff(p) => &p.weights,
            Self::Quadratic(p) => &p.weights,
            Self::Logistic(p) => &p.weights,
        }
    }

    pub fn theta_star(&self) -> &[f64] {
        match self {
            Self::FRandEff(p) => p.theta_star(),
            Self::Quadratic(p) => p.theta_star(),
            Self::Logistic(p) => p.theta_star(),
        }
    }

    /// Checks that a poison kind applies to this model.
    pub fn check_poison(&self, poison: &Poison) -> Result<()> {
        match (self, poison) {
            (_, Poison::MeanShift(mu)) if mu.len() != self.dim() => {
                Err(Error::DimensionMismatch { expected: self.dim(), got: mu.len() })
            }
            (Self::Logistic(_), _) | (_, Poison::MeanShift(_)) => Ok(()),
            (_, Poison::LabelFlip) => Err(Error::Unsupported("label flip needs a classification model".into())),
        }
    }

    /// Draws `xi ~ P_k` (or the attacked law) into `obs`.
    pub fn draw(&self, k: usize, poison: Option<&Poison>, rng: &mut SimRng, obs: &mut Observation) {
        let shift = match poison {
            Some(Poison::MeanShift(mu)) => Some(mu.as_slice()),
            _ => None,
        };
        match self {
            Self::FRandEff(p) => {
                let mut y = 0.0;
                for i in 0..p.dim {
                    let xi: f64 = rng.sample(StandardNormal);
                    obs.x[i] = xi;
                    y += xi * (p.betas[k][i] + shift.map_or(0.0, |s| s[i]));
                }
                let e: f64 = rng.sample(StandardNormal);
                obs.y = y + p.sigmas2[k].sqrt() * e;
            }
            Self::Quadratic(p) => {
                let sd = p.sigmas2[k].sqrt();
                for i in 0..p.dim {
                    let e: f64 = rng.sample(StandardNormal);
                    obs.x[i] = p.means[k][i] + shift.map_or(0.0, |s| s[i]) + sd * e;
                }
            }
            Self::Logistic(p) => {
                let mut z = 0.0;
                for i in 0..p.dim {
                    let xi: f64 = rng.sample(StandardNormal);
                    obs.x[i] = xi;
                    z += xi * (p.true_weights[k][i] + shift.map_or(0.0, |s| s[i]));
                }
                let u: f64 = rng.gen();
                let mut label = usize::from(u < sigmoid(z));
                if matches!(poison, Some(Poison::LabelFlip)) {
                    label = p.flip.apply(label);
                }
                obs.y = label as f64;
            }
        }
    }

    /// `grad f_k(theta, xi)` for a drawn observation.
    pub fn gradient(&self, theta: &[f64], obs: &Observation, out: &mut [f64]) {
        match self {
            Self::FRandEff(_) => {
                let r = dot(&obs.x, theta) - obs.y;
                for (o, x) in out.iter_mut().zip(&obs.x) {
                    *o = x * r;
                }
            }
            Self::Quadratic(_) => {
                for ((o, t), z) in out.iter_mut().zip(theta).zip(&obs.x) {
                    *o = t - z;
                }
            }
            Self::Logistic(_) => {
                let r = sigmoid(dot(&obs.x, theta)) - obs.y;
                for (o, x) in out.iter_mut().zip(&obs.x) {
                    *o = x * r;
                }
            }
        }
    }

    /// Draws a fresh observation and returns `grad f_k(theta, xi)`.
    pub fn noisy_gradient(&self, k: usize, theta: &[f64], rng: &mut SimRng) -> Vec<f64> {
        let mut obs = Observation::new(self.dim());
        self.draw(k, None, rng, &mut obs);
        let mut g = vec![0.0; self.dim()];
        self.gradient(theta, &obs, &mut g);
        g
    }

    /// `grad F_k(theta)`.
    pub fn exact_gradient(&self, k: usize, theta: &[f64]) -> Vec<f64> {
        match self {
            Self::FRandEff(p) => theta.iter().zip(&p.betas[k]).map(|(t, b)| t - b).collect(),
            Self::Quadratic(p) => theta.iter().zip(&p.means[k]).map(|(t, m)| t - m).collect(),
            Self::Logistic(p) => p.exact_gradient(k, theta),
        }
    }

    /// `A = grad^2 F(theta*)`.
    pub fn hessian(&self) -> Mat {
        match self {
            Self::FRandEff(p) => Mat::identity(p.dim, p.dim),
            Self::Quadratic(p) => Mat::identity(p.dim, p.dim),
            Self::Logistic(p) => p.hessian.clone(),
        }
    }

    /// `Var(g_k(theta*, xi))` for one client.
    pub fn client_noise_covariance(&self, k: usize, mode: CovarianceMode) -> Result<Mat> {
        match (self, mode) {
            (Self::FRandEff(p), CovarianceMode::Analytic) => Ok(p.client_covariance(k)),
            (Self::Quadratic(p), CovarianceMode::Analytic) => Ok(Mat::identity(p.dim, p.dim) * p.sigmas2[k]),
            (Self::Logistic(_), CovarianceMode::Analytic) => {
                Err(Error::Unsupported("analytic noise covariance for the logistic model".into()))
            }
            (_, CovarianceMode::MonteCarlo { n_mc, seed }) => {
                let mut rng = substream(seed, Stream::Misc, k as u64, 0);
                let d = self.dim();
                let theta = self.theta_star().to_vec();
                let mut obs = Observation::new(d);
                let mut rows = vec![0.0; n_mc * d];
                for m in 0..n_mc {
                    self.draw(k, None, &mut rng, &mut obs);
                    self.gradient(&theta, &obs, &mut rows[m * d..(m + 1) * d]);
                }
                sample_covariance(rows.chunks(d), d)
            }
        }
    }

    /// `V_K = sum_k w_k^2 Var(g_k(theta*))`.
    pub fn noise_covariance(&self, mode: CovarianceMode) -> Result<Mat> {
        let d = self.dim();
        let mut v = Mat::zeros(d, d);
        for (k, w) in self.weights().iter().enumerate() {
            let mode_k = match mode {
                CovarianceMode::MonteCarlo { n_mc, seed } => {
                    CovarianceMode::MonteCarlo { n_mc, seed: crate::rng::derive_seed(seed, &[k as u64]) }
                }
                m => m,
            };
            v += self.client_noise_covariance(k, mode_k)? * (w * w);
        }
        Ok(v)
    }
}
