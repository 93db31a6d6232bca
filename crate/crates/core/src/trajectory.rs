//! Recorded iterate sequences shared by the engine and the Gaussian simulators.

use crate::error::{Error, Result};
use crate::output::{fmt_g, CsvBuilder};

/// `Y_1..Y_n` with running averages and optional per-client iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    ys: Vec<f64>,
    ybars: Vec<f64>,
    sum: Vec<f64>,
    clients: usize,
    thetas: Option<Vec<f64>>,
    theta_star: Vec<f64>,
}

impl Trajectory {
    pub fn new(theta_star: Vec<f64>) -> Self {
        let dim = theta_star.len();
        Self { dim, ys: Vec::new(), ybars: Vec::new(), sum: vec![0.0; dim], clients: 0, thetas: None, theta_star }
    }

    /// Enables per-client recording for `k` clients.
    pub fn with_clients(mut self, k: usize) -> Self {
        self.clients = k;
        self.thetas = Some(Vec::new());
        self
    }

    pub fn from_ys(ys: &[Vec<f64>], theta_star: Vec<f64>) -> Result<Self> {
        let mut t = Self::new(theta_star);
        for y in ys {
            t.push(y)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: y.len() });
        }
        self.ys.extend_from_slice(y);
        let t = (self.len()) as f64;
        for i in 0..self.dim {
            self.sum[i] += y[i];
            self.ybars.push(self.sum[i] / t);
        }
        Ok(())
    }

    /// Appends the per-client matrix for the latest step (`K * d` values,
    /// client-major).
    pub fn push_clients(&mut self, theta: &[f64]) {
        if let Some(th) = self.thetas.as_mut() {
            th.extend_from_slice(theta);
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ys.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(Error::OutOfRange { index: t, max: self.len() });
        }
        Ok(())
    }

    /// `Y_t`, 1-based.
    pub fn y(&self, t: usize) -> &[f64] {
        &self.ys[(t - 1) * self.dim..t * self.dim]
    }

    /// `Ybar_t`, 1-based.
    pub fn ybar(&self, t: usize) -> &[f64] {
        &self.ybars[(t - 1) * self.dim..t * self.dim]
    }

    pub fn try_ybar(&self, t: usize) -> Result<&[f64]> {
        self.check(t)?;
        Ok(self.ybar(t))
    }

    pub fn ybars_flat(&self) -> &[f64] {
        &self.ybars
    }

    pub fn ys_flat(&self) -> &[f64] {
        &self.ys
    }

    pub fn num_clients(&self) -> usize {
        self.clients
    }

    /// Client `k` at step `t` when per-client recording is on.
    pub fn theta(&self, t: usize, k: usize) -> Option<&[f64]> {
        let th = self.thetas.as_ref()?;
        let base = ((t - 1) * self.clients + k) * self.dim;
        th.get(base..base + self.dim)
    }

    pub fn has_clients(&self) -> bool {
        self.thetas.is_some()
    }

    /// CSV with columns `t, Y_0.., Ybar_0..`.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut header = vec!["t".to_string()];
        header.extend((0..self.dim).map(|i| format!("Y{i}")));
        header.extend((0..self.dim).map(|i| format!("Ybar{i}")));
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut csv = CsvBuilder::new(comments, &h);
        for t in 1..=self.len() {
            let mut row = vec![t.to_string()];
            row.extend(self.y(t).iter().map(|&v| fmt_g(v)));
            row.extend(self.ybar(t).iter().map(|&v| fmt_g(v)));
            csv.row(&row);
        }
        csv.finish()
    }

    /// CSV with columns `t, k, theta_0..`, or `None` without per-client data.
    pub fn clients_to_csv(&self, comments: &[String]) -> Option<String> {
        self.thetas.as_ref()?;
        let mut header = vec!["t".to_string(), "k".to_string()];
        header.extend((0..self.dim).map(|i| format!("theta{i}")));
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut csv = CsvBuilder::new(comments, &h);
        for t in 1..=self.len() {
            for k in 0..self.clients {
                let mut row = vec![t.to_string(), k.to_string()];
                row.extend(self.theta(t, k)?.iter().map(|&v| fmt_g(v)));
                csv.row(&row);
            }
        }
        Some(csv.finish())
    }
}
