//! Distribution distances, path maxima, quantile discrepancies and CUSUM.

use statrs::function::gamma::gamma_lr;

use crate::error::{invalid, Error, Result};
use crate::linalg::{inv_sqrt, norm, Mat};
use crate::trajectory::Trajectory;

/// Number of grid points added to the sample points in the KS supremum.
pub const KS_GRID: usize = 1000;

/// Sorted realizations of a scalar statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSample {
    values: Vec<f64>,
    pub label: String,
}

impl EmpiricalSample {
    pub fn new(mut values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        let label = label.into();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(label));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values, label })
    }

    /// Sorted values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Type-7 quantile.
    pub fn quantile(&self, p: f64) -> f64 {
        quantile_sorted(&self.values, p)
    }

    /// `#{v <= x} / m`.
    pub fn ecdf(&self, x: f64) -> f64 {
        self.values.partition_point(|&v| v <= x) as f64 / self.len() as f64
    }
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = (m - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(m - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// CDF of `|Z|` for `Z ~ N(0, I_d)`.
pub fn chi_cdf(d: usize, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(d as f64 / 2.0, x * x / 2.0)
    }
}

/// `sup_{x in [0, c]} |F_m(x) - F(x)|`, evaluated at sample points (both
/// one-sided limits), the endpoints and a regular grid.
pub fn kolmogorov_vs_reference<F: Fn(f64) -> f64>(sample: &EmpiricalSample, reference_cdf: F, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return invalid(format!("KS range c must be positive, got {c}"));
    }
    let m = sample.len() as f64;
    let vals = sample.values();
    let mut sup = 0.0f64;
    let mut i = 0;
    while i < vals.len() && vals[i] <= c {
        let v = vals[i];
        let below = i as f64 / m;
        let mut j = i;
        while j < vals.len() && vals[j] == v {
            j += 1;
        }
        let at = j as f64 / m;
        let f = reference_cdf(v);
        if v >= 0.0 {
            sup = sup.max((at - f).abs()).max((below - f).abs());
        }
        i = j;
    }
    for g in 0..=KS_GRID {
        let x = c * g as f64 / KS_GRID as f64;
        sup = sup.max((sample.ecdf(x) - reference_cdf(x)).abs());
    }
    Ok(sup)
}

/// `|S^-1/2 v|` for each endpoint `v`.
pub fn whiten(endpoints: &[Vec<f64>], scaling: &Mat, label: &str) -> Result<EmpiricalSample> {
    let d = scaling.nrows();
    let r = inv_sqrt(scaling)?;
    let mut out = Vec::with_capacity(endpoints.len());
    let mut w = vec![0.0; d];
    for v in endpoints {
        if v.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: v.len() });
        }
        for i in 0..d {
            w[i] = (0..d).map(|j| r[(i, j)] * v[j]).sum();
        }
        out.push(norm(&w));
    }
    EmpiricalSample::new(out, label)
}

/// `U = max_t |sum_{s<=t} (Y_s - center)|`.
pub fn max_partial_sum(traj: &Trajectory, center: &[f64]) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::EmptySample);
    }
    let d = traj.dim();
    if center.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: center.len() });
    }
    let mut s = vec![0.0; d];
    let mut best = 0.0f64;
    for t in 1..=traj.len() {
        for (i, y) in traj.y(t).iter().enumerate() {
            s[i] += y - center[i];
        }
        best = best.max(norm(&s));
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileReport {
    pub alphas: Vec<f64>,
    /// `q_{1-alpha}` of the base sample.
    pub base: Vec<f64>,
    pub approx: Vec<f64>,
    pub q: f64,
    pub argmax_alpha: f64,
}

/// `{0.01, 0.02, ..., 0.99}`.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

/// `max_alpha |q_{1-a}(base) - q_{1-a}(approx)| / q_{1-a}(base)`.
pub fn quantile_discrepancy(base: &EmpiricalSample, approx: &EmpiricalSample, grid: &[f64]) -> Result<QuantileReport> {
    if grid.is_empty() {
        return invalid("alpha grid is empty");
    }
    if let Some(a) = grid.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return invalid(format!("alpha {a} outside (0, 1)"));
    }
    let mut rep = QuantileReport {
        alphas: grid.to_vec(),
        base: Vec::with_capacity(grid.len()),
        approx: Vec::with_capacity(grid.len()),
        q: 0.0,
        argmax_alpha: grid[0],
    };
    for &a in grid {
        let qb = base.quantile(1.0 - a);
        let qa = approx.quantile(1.0 - a);
        if qb == 0.0 {
            return invalid(format!("base quantile is zero at alpha = {a}"));
        }
        let e = (qb - qa).abs() / qb.abs();
        if e > rep.q {
            rep.q = e;
            rep.argmax_alpha = a;
        }
        rep.base.push(qb);
        rep.approx.push(qa);
    }
    Ok(rep)
}

/// `max_{1<=s<=t} s |Ybar_s - Ybar_t|` over flat running averages; ties go
/// to the smallest `s`.
pub fn cusum_ybars(ybars: &[f64], dim: usize, t: usize) -> (f64, usize) {
    let yt = &ybars[(t - 1) * dim..t * dim];
    let mut best = (0.0f64, 1usize);
    for s in 1..=t {
        let ys = &ybars[(s - 1) * dim..s * dim];
        let d2: f64 = ys.iter().zip(yt).map(|(a, b)| (a - b) * (a - b)).sum();
        let r = s as f64 * d2.sqrt();
        if r > best.0 {
            best = (r, s);
        }
    }
    best
}

/// `(R_t, s_t)` for a recorded trajectory.
pub fn cusum(traj: &Trajectory, t: usize) -> Result<(f64, usize)> {
    traj.try_ybar(t)?;
    Ok(cusum_ybars(traj.ybars_flat(), traj.dim(), t))
}

/// Streaming CUSUM over a growing sequence of iterates. No exact O(1)
/// update exists for `d > 1`, so each query is `O(t d)`.
#[derive(Debug, Clone)]
pub struct CusumTracker {
    dim: usize,
    sum: Vec<f64>,
    ybars: Vec<f64>,
}

impl CusumTracker {
    pub fn new(dim: usize) -> Self {
        Self { dim, sum: vec![0.0; dim], ybars: Vec::new() }
    }

    pub fn push(&mut self, y: &[f64]) {
        let t = (self.ybars.len() / self.dim + 1) as f64;
        for i in 0..self.dim {
            self.sum[i] += y[i];
            self.ybars.push(self.sum[i] / t);
        }
    }

    pub fn len(&self) -> usize {
        self.ybars.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.ybars.is_empty()
    }

    /// `(R_t, s_t)` at the latest step.
    pub fn current(&self) -> (f64, usize) {
        cusum_ybars(&self.ybars, self.dim, self.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn chi2_sample(m: usize, seed: u64) -> EmpiricalSample {
        let mut rng = substream(seed, Stream::Misc, 0, 0);
        let v: Vec<f64> = (0..m)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                (a * a + b * b).sqrt()
            })
            .collect();
        EmpiricalSample::new(v, "chi2").unwrap()
    }

    #[test]
    fn chi_cdf_closed_form_for_two_dims() {
        for x in [0.1, 0.5, 1.0, 2.0, 3.5] {
            assert!((chi_cdf(2, x) - (1.0 - (-x * x / 2.0f64).exp())).abs() < 1e-13);
        }
        // d = 1: P(|Z| <= 1.96) ~ 0.95
        assert!((chi_cdf(1, 1.959964) - 0.95).abs() < 1e-6);
        assert_eq!(chi_cdf(2, 0.0), 0.0);
    }

    #[test]
    fn ks_small_for_reference_draws() {
        let s = chi2_sample(100_000, 1);
        let d = kolmogorov_vs_reference(&s, |x| chi_cdf(2, x), 100.0).unwrap();
        assert!(d <= 0.01, "{d}");
        assert!(kolmogorov_vs_reference(&s, |x| chi_cdf(2, x), 0.0).is_err());
    }

    #[test]
    fn ks_exact_on_tiny_sample() {
        let s = EmpiricalSample::new(vec![0.5, 1.5], "t").unwrap();
        // F(x) = x / 2 on [0, 2]; jumps at 0.5 (0 -> 0.5) and 1.5 (0.5 -> 1)
        let d = kolmogorov_vs_reference(&s, |x| (x / 2.0).min(1.0), 2.0).unwrap();
        assert!((d - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_sample_rejected() {
        assert!(EmpiricalSample::new(vec![], "x").is_err());
        assert!(EmpiricalSample::new(vec![f64::NAN], "x").is_err());
    }

    #[test]
    fn whitening_examples() {
        let pts = vec![vec![3.0, 4.0], vec![0.0, -2.0]];
        let s = whiten(&pts, &Mat::identity(2, 2), "w").unwrap();
        assert_eq!(s.values(), &[2.0, 5.0]);
        let s = whiten(&pts, &(Mat::identity(2, 2) * 4.0), "w").unwrap();
        assert!((s.values()[0] - 1.0).abs() < 1e-15 && (s.values()[1] - 2.5).abs() < 1e-15);
        assert!(matches!(whiten(&pts, &Mat::zeros(2, 2), "w"), Err(Error::Singular)));
    }

    #[test]
    fn whitened_gaussian_passes_ks() {
        let sig = Mat::from_row_slice(2, 2, &[2.0, 0.7, 0.7, 1.0]);
        let root = crate::linalg::psd_sqrt(&sig).unwrap();
        let mut rng = substream(3, Stream::Misc, 0, 0);
        let pts: Vec<Vec<f64>> = (0..2000)
            .map(|_| {
                let z = nalgebra::DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
                (&root * z).iter().copied().collect()
            })
            .collect();
        let s = whiten(&pts, &sig, "w").unwrap();
        let d = kolmogorov_vs_reference(&s, |x| chi_cdf(2, x), 100.0).unwrap();
        // 5% critical value of the one-sample KS test: 1.358 / sqrt(m)
        assert!(d < 1.358 / (2000f64).sqrt(), "{d}");
    }

    #[test]
    fn partial_sum_examples() {
        let tr = Trajectory::from_ys(&[vec![1.0], vec![-2.0], vec![3.0]], vec![0.0]).unwrap();
        assert_eq!(max_partial_sum(&tr, &[0.0]).unwrap(), 2.0);
        let flat = Trajectory::from_ys(&vec![vec![1.0, 2.0]; 5], vec![0.0; 2]).unwrap();
        assert_eq!(max_partial_sum(&flat, &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn brownian_maximum_scale() {
        let reps = 10_000;
        let n = 10_000;
        let one = Mat::identity(1, 1);
        let dense: f64 = (0..reps)
            .map(|r| {
                let tr = crate::gauss::simulate_fclt(&one, n, substream(7, Stream::Fclt, r, 0)).unwrap();
                max_partial_sum(&tr, &[0.0]).unwrap() / (n as f64).sqrt()
            })
            .sum::<f64>()
            / reps as f64;
        // E sup_{t<=1} |B_t| = sqrt(pi / 2)
        assert!((dense - 1.2533).abs() < 0.125, "{dense}");
    }

    #[test]
    fn discrepancy_examples() {
        let base = chi2_sample(500, 2);
        let grid = default_alpha_grid();
        assert_eq!(quantile_discrepancy(&base, &base, &grid).unwrap().q, 0.0);
        let doubled = EmpiricalSample::new(base.values().iter().map(|v| 2.0 * v).collect(), "x2").unwrap();
        assert!((quantile_discrepancy(&base, &doubled, &grid).unwrap().q - 1.0).abs() < 1e-12);
        let zero = EmpiricalSample::new(vec![0.0; 10], "z").unwrap();
        assert!(quantile_discrepancy(&zero, &base, &grid).is_err());
        assert!(quantile_discrepancy(&base, &base, &[1.0]).is_err());
    }

    #[test]
    fn type7_quantile() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert!((quantile_sorted(&s, 0.9) - 3.7).abs() < 1e-12);
    }

    #[test]
    fn cusum_examples() {
        let c = Trajectory::from_ys(&vec![vec![1.0, -1.0]; 6], vec![0.0; 2]).unwrap();
        assert_eq!(cusum(&c, 6).unwrap(), (0.0, 1));
        // ybar = (0, 0, 1) from ys = (0, 0, 3)
        let tr = Trajectory::from_ys(&[vec![0.0], vec![0.0], vec![3.0]], vec![0.0]).unwrap();
        assert_eq!(cusum(&tr, 3).unwrap(), (2.0, 2));
        assert!(cusum(&tr, 4).is_err());
    }

    fn brute_force(ys: &[Vec<f64>], t: usize) -> (f64, usize) {
        let d = ys[0].len();
        let ybar = |s: usize| -> Vec<f64> {
            (0..d).map(|i| ys[..s].iter().map(|y| y[i]).sum::<f64>() / s as f64).collect()
        };
        let yt = ybar(t);
        let mut best = (0.0, 1);
        for s in 1..=t {
            let r = s as f64 * norm(&ybar(s).iter().zip(&yt).map(|(a, b)| a - b).collect::<Vec<_>>());
            if r > best.0 + 1e-12 {
                best = (r, s);
            }
        }
        best
    }

    #[test]
    fn tracker_matches_brute_force() {
        let mut rng = substream(5, Stream::Misc, 0, 0);
        let ys: Vec<Vec<f64>> = (0..200)
            .map(|t| vec![rng.sample::<f64, _>(StandardNormal) + if t > 120 { 0.8 } else { 0.0 }, rng.gen()])
            .collect();
        let mut tr = CusumTracker::new(2);
        for (t, y) in ys.iter().enumerate() {
            tr.push(y);
            let (r, s) = tr.current();
            let (rb, sb) = brute_force(&ys, t + 1);
            assert!((r - rb).abs() < 1e-10);
            assert_eq!(s, sb);
        }
    }

    proptest! {
        #[test]
        fn ks_permutation_invariant(mut v in prop::collection::vec(0.0f64..5.0, 1..60)) {
            let a = EmpiricalSample::new(v.clone(), "a").unwrap();
            v.reverse();
            let b = EmpiricalSample::new(v, "b").unwrap();
            let f = |x: f64| chi_cdf(2, x);
            prop_assert_eq!(kolmogorov_vs_reference(&a, f, 10.0).unwrap(), kolmogorov_vs_reference(&b, f, 10.0).unwrap());
        }

        #[test]
        fn discrepancy_scale_equivariance(v in prop::collection::vec(0.1f64..5.0, 2..60), eps in -0.9f64..3.0) {
            let base = EmpiricalSample::new(v.clone(), "b").unwrap();
            let scaled = EmpiricalSample::new(v.iter().map(|x| x * (1.0 + eps)).collect(), "s").unwrap();
            let q = quantile_discrepancy(&base, &scaled, &default_alpha_grid()).unwrap().q;
            prop_assert!((q - eps.abs()).abs() < 1e-9);
        }

        #[test]
        fn cusum_nonnegative_and_matches_brute(v in prop::collection::vec(-3.0f64..3.0, 1..40)) {
            let ys: Vec<Vec<f64>> = v.iter().map(|x| vec![*x]).collect();
            let tr = Trajectory::from_ys(&ys, vec![0.0]).unwrap();
            let t = ys.len();
            let (r, _) = cusum(&tr, t).unwrap();
            prop_assert!(r >= 0.0);
            prop_assert!((r - brute_force(&ys, t).0).abs() < 1e-9);
        }
    }
}
