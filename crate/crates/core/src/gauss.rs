//! Covariance machinery for the Gaussian approximation and the three
//! comparison processes (Aggr-GA, Client-GA, f-CLT).

use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::engine::StepSchedule;
use crate::error::{invalid, Error, Result};
use crate::graph::ConnectionMatrix;
use crate::linalg::{psd_sqrt, symmetrize, Mat};
use crate::output::{fmt_g, CsvBuilder};
use crate::rng::SimRng;
use crate::trajectory::Trajectory;

/// Matrix `A` with step sizes `eta_1..eta_n`.
#[derive(Debug, Clone)]
pub struct ContractionKernel {
    a: Mat,
    steps: Vec<f64>,
    beta: f64,
}

impl ContractionKernel {
    pub fn new(a: Mat, schedule: &StepSchedule, n: usize) -> Result<Self> {
        Self::from_steps(a, schedule.steps(n), schedule.beta)
    }

    /// Kernel from explicit steps; `beta` is the exponent used by the
    /// last-iterate scaling `n^beta`.
    pub fn from_steps(a: Mat, steps: Vec<f64>, beta: f64) -> Result<Self> {
        let d = a.nrows();
        if d == 0 || a.ncols() != d {
            return Err(Error::NotSquare { rows: a.nrows(), cols: a.ncols() });
        }
        if steps.is_empty() {
            return invalid("kernel horizon must be at least 1");
        }
        if (&a - a.transpose()).norm() > 1e-10 * a.norm().max(1.0) {
            return invalid("A must be symmetric");
        }
        let eig = SymmetricEigen::new(a.clone()).eigenvalues;
        if eig.min() <= 0.0 {
            return invalid("A must be positive definite");
        }
        let lmax = eig.max();
        if let Some(t) = steps.iter().position(|&e| e * lmax >= 1.0) {
            log::warn!("eta_{} * lambda_max(A) = {} >= 1; products are not contractions", t + 1, steps[t] * lmax);
        }
        Ok(Self { a, steps, beta })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    /// `eta_t`, 1-based.
    pub fn eta(&self, t: usize) -> f64 {
        self.steps[t - 1]
    }

    /// `I - eta_t A`.
    pub fn step_matrix(&self, t: usize) -> Mat {
        Mat::identity(self.dim(), self.dim()) - &self.a * self.eta(t)
    }

    /// `prod_{j=s+1}^t (I - eta_j A)`, identity when `s == t`.
    pub fn contraction_product(&self, s: usize, t: usize) -> Result<Mat> {
        if s > t {
            return invalid(format!("contraction product needs s <= t, got s={s}, t={t}"));
        }
        if t > self.horizon() {
            return Err(Error::OutOfRange { index: t, max: self.horizon() });
        }
        let mut p = Mat::identity(self.dim(), self.dim());
        for j in (s + 1)..=t {
            p = self.step_matrix(j) * p;
        }
        Ok(p)
    }

    /// `Q_1..Q_n` with `Q_s = eta_s sum_{j=s}^n A_s^j`, by backward recurrence.
    pub fn q_matrices(&self) -> Vec<Mat> {
        let n = self.horizon();
        let d = self.dim();
        let id = Mat::identity(d, d);
        let mut out = vec![Mat::zeros(d, d); n];
        let mut b = id.clone();
        out[n - 1] = &b * self.eta(n);
        for s in (1..n).rev() {
            b = &id + self.step_matrix(s + 1) * &b;
            out[s - 1] = &b * self.eta(s);
        }
        out
    }

    pub fn q_matrix(&self, s: usize) -> Result<Mat> {
        if s == 0 || s > self.horizon() {
            return Err(Error::OutOfRange { index: s, max: self.horizon() });
        }
        Ok(self.b_matrix(s, self.horizon()))
    }

    /// `B_{s,t} = eta_s sum_{j=s}^t A_s^j` (so `Q_s = B_{s,n}`).
    pub fn b_matrix(&self, s: usize, t: usize) -> Mat {
        let d = self.dim();
        let id = Mat::identity(d, d);
        let mut b = id.clone();
        for j in (s..t).rev() {
            b = &id + self.step_matrix(j + 1) * &b;
        }
        b * self.eta(s)
    }

    /// `Sigma_n = n^-1 sum_s Q_s V Q_s^T`.
    pub fn sigma_n(&self, v: &Mat) -> Mat {
        let qs = self.q_matrices();
        let mut acc = Mat::zeros(self.dim(), self.dim());
        for q in &qs {
            acc += q * v * q.transpose();
        }
        symmetrize(&(acc / self.horizon() as f64))
    }

    /// `n^beta sum_s eta_s^2 A_s^n V (A_s^n)^T`.
    pub fn sigma_tilde_n(&self, v: &Mat) -> Mat {
        let n = self.horizon();
        let d = self.dim();
        let mut p = Mat::identity(d, d);
        let mut acc = Mat::zeros(d, d);
        for s in (1..=n).rev() {
            let e = self.eta(s);
            acc += &p * v * p.transpose() * (e * e);
            p = &p * self.step_matrix(s);
        }
        symmetrize(&(acc * (n as f64).powf(self.beta)))
    }

    /// `V_t = (I - eta_t A) V_{t-1} (I - eta_t A)^T + eta_t^2 V`, `V_0 = 0`:
    /// the exact covariance of the Aggr-GA chain, for `t = 1..n`.
    pub fn covariance_path(&self, v: &Mat) -> Vec<Mat> {
        let d = self.dim();
        let mut cur = Mat::zeros(d, d);
        (1..=self.horizon())
            .map(|t| {
                let m = self.step_matrix(t);
                let e = self.eta(t);
                cur = &m * &cur * m.transpose() + v * (e * e);
                cur.clone()
            })
            .collect()
    }

    /// `Omega_t = |B_{1,t}|_F + sum_{s=2}^t |B_{s,t} - B_{s-1,t}|_F`.
    pub fn omega_stat(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.horizon() {
            return Err(Error::OutOfRange { index: t, max: self.horizon() });
        }
        let d = self.dim();
        let id = Mat::identity(d, d);
        // unscaled sums U_{s,t} = sum_{j=s}^t A_s^j for s = t down to 1
        let mut u = id.clone();
        let mut bs = vec![Mat::zeros(d, d); t];
        bs[t - 1] = &u * self.eta(t);
        for s in (1..t).rev() {
            u = &id + self.step_matrix(s + 1) * &u;
            bs[s - 1] = &u * self.eta(s);
        }
        let mut omega = bs[0].norm();
        for s in 1..t {
            omega += (&bs[s] - &bs[s - 1]).norm();
        }
        Ok(omega)
    }

    /// `max_{t <= n} Omega_t`.
    pub fn max_omega(&self) -> f64 {
        (1..=self.horizon())
            .map(|t| self.omega_stat(t).expect("in range"))
            .fold(0.0, f64::max)
    }
}

/// `Sigma = A^-1 (K V) A^-T`.
pub fn sigma_asymptotic(a: &Mat, v: &Mat, k: usize) -> Result<Mat> {
    let inv = a.clone().try_inverse().ok_or(Error::Singular)?;
    if !inv.iter().all(|x| x.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(symmetrize(&(&inv * (v * k as f64) * inv.transpose())))
}

#[derive(Debug, Clone)]
pub struct CovariancePack {
    pub sigma_n: Mat,
    pub sigma_tilde_n: Mat,
    /// Undivided `Sigma`; the CLT scaling uses `Sigma / K`.
    pub sigma_asym: Mat,
    pub v_k: Mat,
}

impl CovariancePack {
    pub fn build(kernel: &ContractionKernel, v: &Mat, k: usize) -> Result<Self> {
        Ok(Self {
            sigma_n: kernel.sigma_n(v),
            sigma_tilde_n: kernel.sigma_tilde_n(v),
            sigma_asym: sigma_asymptotic(kernel.a(), v, k)?,
            v_k: v.clone(),
        })
    }
}

/// CSV export of a matrix, one row per line.
pub fn matrix_to_csv(m: &Mat, comments: &[String]) -> String {
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("c{j}")).collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = CsvBuilder::new(comments, &h);
    for i in 0..m.nrows() {
        csv.row(&m.row(i).iter().map(|&v| fmt_g(v)).collect::<Vec<_>>());
    }
    csv.finish()
}

fn normal_into(rng: &mut SimRng, buf: &mut [f64]) {
    for v in buf.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

fn mat_vec_add(m: &Mat, x: &[f64], scale: f64, out: &mut [f64]) {
    let d = x.len();
    for i in 0..d {
        let mut s = 0.0;
        for j in 0..d {
            s += m[(i, j)] * x[j];
        }
        out[i] += scale * s;
    }
}

fn contract(a: &Mat, eta: f64, y: &mut [f64], tmp: &mut [f64]) {
    let d = y.len();
    for i in 0..d {
        let mut s = 0.0;
        for j in 0..d {
            s += a[(i, j)] * y[j];
        }
        tmp[i] = y[i] - eta * s;
    }
    y.copy_from_slice(tmp);
}

/// One Aggr-GA chain advanced step by step.
#[derive(Debug, Clone)]
pub struct AggrGaChain {
    a: Mat,
    /// `sqrt(K V) K^-1/2`.
    noise: Mat,
    y: Vec<f64>,
    tmp: Vec<f64>,
    z: Vec<f64>,
    rng: SimRng,
}

impl AggrGaChain {
    pub fn new(a: &Mat, v: &Mat, k: usize, rng: SimRng) -> Result<Self> {
        let d = a.nrows();
        if v.nrows() != d || v.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: v.nrows() });
        }
        let noise = psd_sqrt(&(v * k as f64))? / (k as f64).sqrt();
        Ok(Self { a: a.clone(), noise, y: vec![0.0; d], tmp: vec![0.0; d], z: vec![0.0; d], rng })
    }

    /// Advances to the next step with step size `eta` and returns `Y_t^G`.
    pub fn step(&mut self, eta: f64) -> &[f64] {
        contract(&self.a, eta, &mut self.y, &mut self.tmp);
        normal_into(&mut self.rng, &mut self.z);
        mat_vec_add(&self.noise, &self.z, eta, &mut self.y);
        &self.y
    }
}

/// `Y_t^G = (I - eta_t A) Y_{t-1}^G + eta_t Z_t K^-1/2`, `Z_t ~ N(0, K V)`.
pub fn simulate_aggr_ga(kernel: &ContractionKernel, v: &Mat, k: usize, rng: SimRng) -> Result<Trajectory> {
    let mut chain = AggrGaChain::new(kernel.a(), v, k, rng)?;
    let mut tr = Trajectory::new(vec![0.0; kernel.dim()]);
    for t in 1..=kernel.horizon() {
        let y = chain.step(kernel.eta(t));
        tr.push(y)?;
    }
    Ok(tr)
}

/// Client-level recursion
/// `Theta_t = ((I - eta_t A) Theta_{t-1} + eta_t M_t) C_t`,
/// `M_t = K (w_1 Z^1, ..., w_K Z^K)`, `Z^k ~ N(0, V^k)`.
pub fn simulate_client_ga(
    kernel: &ContractionKernel,
    per_client_covs: &[Mat],
    weights: &[f64],
    connection: &ConnectionMatrix,
    tau: usize,
    mut rng: SimRng,
) -> Result<Trajectory> {
    let k = connection.size();
    let d = kernel.dim();
    if per_client_covs.len() != k || weights.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: per_client_covs.len().min(weights.len()) });
    }
    if tau == 0 {
        return invalid("tau must be at least 1");
    }
    let roots = per_client_covs.iter().map(psd_sqrt).collect::<Result<Vec<_>>>()?;
    let c = connection.entries();
    let mut theta = vec![0.0; k * d];
    let mut next = vec![0.0; k * d];
    let mut tmp = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut tr = Trajectory::new(vec![0.0; d]);
    for t in 1..=kernel.horizon() {
        let eta = kernel.eta(t);
        for ci in 0..k {
            let th = &mut theta[ci * d..(ci + 1) * d];
            contract(kernel.a(), eta, th, &mut tmp);
            normal_into(&mut rng, &mut z);
            mat_vec_add(&roots[ci], &z, eta * k as f64 * weights[ci], th);
        }
        if t % tau == 0 {
            next.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..k {
                for i in 0..k {
                    let cij = c[(i, j)];
                    if cij != 0.0 {
                        for q in 0..d {
                            next[j * d + q] += cij * theta[i * d + q];
                        }
                    }
                }
            }
            theta.copy_from_slice(&next);
        }
        y.iter_mut().for_each(|v| *v = 0.0);
        for ci in 0..k {
            for q in 0..d {
                y[q] += theta[ci * d + q];
            }
        }
        y.iter_mut().for_each(|v| *v /= k as f64);
        tr.push(&y)?;
    }
    Ok(tr)
}

/// I.i.d. `N(0, Sigma)` increments `Z_1..Z_n` (recorded as the trajectory's
/// `ys`, so partial-sum maxima come from `max_partial_sum`).
pub fn simulate_fclt(sigma: &Mat, n: usize, mut rng: SimRng) -> Result<Trajectory> {
    let d = sigma.nrows();
    let root = psd_sqrt(sigma)?;
    let mut tr = Trajectory::new(vec![0.0; d]);
    let mut z = vec![0.0; d];
    let mut y = vec![0.0; d];
    for _ in 0..n {
        normal_into(&mut rng, &mut z);
        y.iter_mut().for_each(|v| *v = 0.0);
        mat_vec_add(&root, &z, 1.0, &mut y);
        tr.push(&y)?;
    }
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::loglog_slope;
    use crate::graph::{banded_connection, uniform_connection};
    use crate::linalg::{rel_frobenius, sample_covariance};
    use crate::rng::{substream, Stream};
    use proptest::prelude::*;

    fn scalar_kernel(steps: Vec<f64>) -> ContractionKernel {
        ContractionKernel::from_steps(Mat::identity(1, 1), steps, 0.75).unwrap()
    }

    fn kernel2(n: usize) -> ContractionKernel {
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.6]);
        ContractionKernel::new(a, &StepSchedule::new(0.3, 0.0, 0.75).unwrap(), n).unwrap()
    }

    #[test]
    fn empty_product_is_identity() {
        let k = kernel2(10);
        assert_eq!(k.contraction_product(4, 4).unwrap(), Mat::identity(2, 2));
        assert!(k.contraction_product(5, 4).is_err());
    }

    #[test]
    fn scalar_product_matches_loop() {
        let s = StepSchedule::new(0.5, 2.0, 0.7).unwrap();
        let k = ContractionKernel::new(Mat::identity(1, 1), &s, 40).unwrap();
        let mut p = 1.0;
        for j in 6..=40 {
            p *= 1.0 - s.eta(j);
        }
        assert!((k.contraction_product(5, 40).unwrap()[(0, 0)] - p).abs() < 1e-15);
    }

    #[test]
    fn product_decays_like_exp_of_n_pow() {
        let s = StepSchedule::new(0.3, 0.0, 0.75).unwrap();
        let ns: Vec<usize> = (1..=10).map(|i| 50 * i).collect();
        let k = ContractionKernel::new(Mat::identity(2, 2), &s, 500).unwrap();
        let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).powf(0.25)).collect();
        let ys: Vec<f64> = ns.iter().map(|&n| k.contraction_product(0, n).unwrap().norm().ln()).collect();
        let mx = xs.iter().sum::<f64>() / 10.0;
        let my = ys.iter().sum::<f64>() / 10.0;
        let slope: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        let resid: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
        assert!(slope < 0.0);
        let tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        assert!(resid / tot < 0.01, "not linear: r2 = {}", 1.0 - resid / tot);
    }

    #[test]
    fn q_hand_oracle() {
        let k = scalar_kernel(vec![0.5, 0.4, 0.3]);
        assert!((k.q_matrix(2).unwrap()[(0, 0)] - 0.68).abs() < 1e-15);
        let qs = k.q_matrices();
        assert!((qs[1][(0, 0)] - 0.68).abs() < 1e-15);
        let q1 = 0.5 * (1.0 + 0.6 + 0.6 * 0.7);
        let q3 = 0.3;
        assert!((qs[0][(0, 0)] - q1).abs() < 1e-15);
        assert!((qs[2][(0, 0)] - q3).abs() < 1e-15);
        let sn = k.sigma_n(&Mat::identity(1, 1))[(0, 0)];
        assert!((sn - (q1 * q1 + 0.68 * 0.68 + q3 * q3) / 3.0).abs() < 1e-15);
        assert!(k.q_matrix(0).is_err() && k.q_matrix(4).is_err());
    }

    #[test]
    fn q_recurrence_matches_naive_double_sum() {
        let k = kernel2(50);
        let qs = k.q_matrices();
        for s in 1..=50 {
            let mut naive = Mat::zeros(2, 2);
            for j in s..=50 {
                naive += k.contraction_product(s, j).unwrap();
            }
            naive *= k.eta(s);
            assert!((&qs[s - 1] - &naive).norm() < 1e-10);
        }
    }

    #[test]
    fn q_approaches_inverse_hessian() {
        let k = kernel2(20_000);
        let inv = k.a().clone().try_inverse().unwrap();
        let qs = k.q_matrices();
        let errs: Vec<f64> = [100usize, 400, 1600, 6400].iter().map(|&s| (&qs[s - 1] - &inv).norm()).collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
        assert!(errs[3] < errs[0] / 10.0, "{errs:?}");
    }

    #[test]
    fn max_q_bounded_in_n() {
        let s = StepSchedule::new(0.3, 0.0, 0.75).unwrap();
        let m = |n| {
            let k = ContractionKernel::new(Mat::identity(2, 2), &s, n).unwrap();
            k.q_matrices().iter().map(|q| q.norm()).fold(0.0, f64::max)
        };
        let limit = m(20_000);
        for n in [100, 200, 300, 400, 500] {
            assert!(m(n) <= limit * (1.0 + 1e-12));
        }
    }

    #[test]
    fn sigma_tilde_scalar_oracle() {
        let k = scalar_kernel(vec![0.5, 0.4]);
        let v = Mat::identity(1, 1) * 2.0;
        let expect = 2f64.powf(0.75) * (0.25 * 0.36 * 2.0 + 0.16 * 2.0);
        assert!((k.sigma_tilde_n(&v)[(0, 0)] - expect).abs() < 1e-14);
    }

    #[test]
    fn zero_noise_gives_zero_covariances() {
        let k = kernel2(30);
        let z = Mat::zeros(2, 2);
        assert_eq!(k.sigma_n(&z), z);
        assert_eq!(k.sigma_tilde_n(&z), z);
        let tr = simulate_aggr_ga(&k, &z, 5, substream(1, Stream::GaChain, 0, 0)).unwrap();
        assert!(tr.ys_flat().iter().all(|&v| v == 0.0));
        let c = banded_connection(5, 1).unwrap();
        let tr = simulate_client_ga(&k, &vec![z.clone(); 5], &[0.2; 5], &c, 3, substream(1, Stream::ClientGa, 0, 0))
            .unwrap();
        assert!(tr.ys_flat().iter().all(|&v| v == 0.0));
        let tr = simulate_fclt(&z, 30, substream(1, Stream::Fclt, 0, 0)).unwrap();
        assert!(tr.ys_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigma_tilde_times_k_bounded() {
        let s = StepSchedule::new(0.3, 0.0, 0.75).unwrap();
        let v = Mat::from_row_slice(2, 2, &[0.6, 0.1, 0.1, 0.4]);
        let vals: Vec<f64> = [100, 200, 400, 800]
            .iter()
            .map(|&n| ContractionKernel::new(Mat::identity(2, 2), &s, n).unwrap().sigma_tilde_n(&v).norm())
            .collect();
        let (lo, hi) = vals.iter().fold((f64::MAX, 0.0f64), |a, &x| (a.0.min(x), a.1.max(x)));
        assert!(hi / lo < 1.5, "{vals:?}");
    }

    #[test]
    fn asymptotic_covariance() {
        let v = Mat::from_row_slice(2, 2, &[0.6, 0.1, 0.1, 0.4]);
        let s = sigma_asymptotic(&Mat::identity(2, 2), &v, 10).unwrap();
        assert!((s - &v * 10.0).norm() < 1e-14);
        assert!(matches!(sigma_asymptotic(&Mat::zeros(2, 2), &v, 3), Err(Error::Singular)));
        let a = Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let s = sigma_asymptotic(&a, &Mat::identity(2, 2), 1).unwrap();
        assert!((s[(0, 0)] - 0.25).abs() < 1e-15 && (s[(1, 1)] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn sigma_n_slope() {
        let s = StepSchedule::new(0.5, 0.0, 0.75).unwrap();
        let v = Mat::from_row_slice(2, 2, &[0.6, 0.1, 0.1, 0.4]);
        let sig = sigma_asymptotic(&Mat::identity(2, 2), &v, 10).unwrap();
        let ns = [100usize, 200, 400, 800, 1600];
        let errs: Vec<f64> = ns
            .iter()
            .map(|&n| {
                let k = ContractionKernel::new(Mat::identity(2, 2), &s, n).unwrap();
                (k.sigma_n(&v) * 10.0 - &sig).norm()
            })
            .collect();
        let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
        let slope = loglog_slope(&xs, &errs);
        assert!((slope + 0.25).abs() < 0.15, "slope {slope}");
    }

    #[test]
    fn omega_examples() {
        let k = kernel2(10);
        assert!((k.omega_stat(1).unwrap() - k.eta(1) * 2f64.sqrt()).abs() < 1e-15);
        let sk = scalar_kernel(vec![0.5, 0.4, 0.3]);
        // B_{s,3} = eta_s sum_{j=s}^3 A_s^j
        let b1: f64 = 0.5 * (1.0 + 0.6 + 0.6 * 0.7);
        let b2: f64 = 0.4 * (1.0 + 0.7);
        let b3: f64 = 0.3;
        let expect = b1 + (b2 - b1).abs() + (b3 - b2).abs();
        assert!((sk.omega_stat(3).unwrap() - expect).abs() < 1e-15);
        assert!(k.omega_stat(11).is_err());
    }

    #[test]
    fn omega_grows_logarithmically() {
        let s = StepSchedule::new(0.3, 0.0, 0.75).unwrap();
        let r: Vec<f64> = [100usize, 200, 400, 800]
            .iter()
            .map(|&n| ContractionKernel::new(Mat::identity(2, 2), &s, n).unwrap().max_omega() / (n as f64).ln())
            .collect();
        let (lo, hi) = r.iter().fold((f64::MAX, 0.0f64), |a, &x| (a.0.min(x), a.1.max(x)));
        assert!(hi / lo < 1.5, "{r:?}");
    }

    #[test]
    fn pack_is_psd() {
        let k = kernel2(100);
        let v = Mat::from_row_slice(2, 2, &[0.6, 0.1, 0.1, 0.4]);
        let p = CovariancePack::build(&k, &v, 10).unwrap();
        for m in [&p.sigma_n, &p.sigma_tilde_n, &p.sigma_asym, &p.v_k] {
            assert!((m - m.transpose()).norm() < 1e-10);
            assert!(SymmetricEigen::new(m.clone()).eigenvalues.min() >= -1e-10);
        }
        let csv = matrix_to_csv(&p.v_k, &[]);
        assert_eq!(csv, "c0,c1\n0.6,0.1\n0.1,0.4\n");
    }

    #[test]
    fn aggr_ga_rejects_indefinite() {
        let k = kernel2(5);
        let bad = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            simulate_aggr_ga(&k, &bad, 1, substream(1, Stream::GaChain, 0, 0)),
            Err(Error::NotPsd { .. })
        ));
    }

    fn mc_cov_at(trs: &[Trajectory], t: usize) -> Mat {
        sample_covariance(trs.iter().map(|tr| tr.y(t)), trs[0].dim()).unwrap()
    }

    #[test]
    fn client_ga_reduces_to_aggr_ga_with_full_averaging() {
        let k = kernel2(100);
        let kk = 5;
        let vc = Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let w = vec![0.2; kk];
        let c = uniform_connection(kk).unwrap();
        let vk = &vc * (kk as f64 * 0.04);
        let path = k.covariance_path(&vk);
        let trs: Vec<Trajectory> = (0..10_000)
            .map(|r| simulate_client_ga(&k, &vec![vc.clone(); kk], &w, &c, 1, substream(3, Stream::ClientGa, r, 0)).unwrap())
            .collect();
        for t in [10, 100] {
            assert!(rel_frobenius(&mc_cov_at(&trs, t), &path[t - 1]) < 0.05);
        }
    }

    #[test]
    fn client_ga_aggregate_ignores_tau() {
        let k = kernel2(60);
        let c = banded_connection(6, 1).unwrap();
        let covs: Vec<Mat> = (0..6).map(|i| Mat::identity(2, 2) * (1.0 + i as f64)).collect();
        let w = vec![1.0 / 6.0; 6];
        let a = simulate_client_ga(&k, &covs, &w, &c, 1, substream(9, Stream::ClientGa, 0, 0)).unwrap();
        let b = simulate_client_ga(&k, &covs, &w, &c, 7, substream(9, Stream::ClientGa, 0, 0)).unwrap();
        for t in 1..=60 {
            for i in 0..2 {
                assert!((a.y(t)[i] - b.y(t)[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fclt_scaling_homogeneity() {
        let sig = Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let a = simulate_fclt(&sig, 50, substream(4, Stream::Fclt, 0, 0)).unwrap();
        let b = simulate_fclt(&(&sig * 9.0), 50, substream(4, Stream::Fclt, 0, 0)).unwrap();
        for (x, y) in a.ys_flat().iter().zip(b.ys_flat()) {
            assert!((3.0 * x - y).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn cocycle(s in 0usize..20, dt in 0usize..20, du in 0usize..20) {
            let k = kernel2(60);
            let t = s + dt;
            let u = t + du;
            let lhs = k.contraction_product(s, u).unwrap();
            let rhs = k.contraction_product(t, u).unwrap() * k.contraction_product(s, t).unwrap();
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }
    }
}
