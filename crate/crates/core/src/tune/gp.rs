//! Exact Gaussian-process regression with an ARD Matérn-5/2 kernel.
//!
//! Observations are standardized to zero mean and unit variance before
//! fitting; the signal variance is fixed at 1. Length-scales and the noise
//! variance are chosen on a grid by log marginal likelihood: first a shared
//! length-scale, then coordinate-wise passes per dimension.

use serde::Serialize;

use crate::error::{Error, Result};

pub const LENGTH_GRID: [f64; 7] = [0.05, 0.1, 0.2, 0.35, 0.6, 1.0, 2.0];
pub const NOISE_GRID: [f64; 4] = [1e-6, 1e-4, 1e-2, 1e-1];
pub const NOISE_FLOOR: f64 = 1e-6;
const MAX_JITTER: f64 = 1e-2;

pub fn matern52(r: f64) -> f64 {
    let s = 5f64.sqrt() * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn scaled_dist(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(ls)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Lower Cholesky factor of a dense SPD matrix (row-major), or `None`.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn forward(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * x[k]).sum();
        x[i] = (b[i] - s) / l[i * n + i];
    }
    x
}

fn backward(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (b[i] - s) / l[i * n + i];
    }
    x
}

#[derive(Clone, Debug, Serialize)]
pub struct GpModel {
    pub length_scales: Vec<f64>,
    pub noise: f64,
    pub jitter: f64,
    pub y_mean: f64,
    pub y_std: f64,
    pub log_marginal_likelihood: f64,
    points: Vec<Vec<f64>>,
    #[serde(skip)]
    chol: Vec<f64>,
    #[serde(skip)]
    alpha: Vec<f64>,
}

struct Factor {
    chol: Vec<f64>,
    alpha: Vec<f64>,
    lml: f64,
    jitter: f64,
}

fn factor(points: &[Vec<f64>], y: &[f64], ls: &[f64], noise: f64) -> Result<Factor> {
    let n = points.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = matern52(scaled_dist(&points[i], &points[j], ls));
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
        k[i * n + i] += noise;
    }
    let mut jitter = 0.0;
    let chol = loop {
        let mut kj = k.clone();
        for i in 0..n {
            kj[i * n + i] += jitter;
        }
        if let Some(l) = cholesky(&kj, n) {
            break l;
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > MAX_JITTER {
            return Err(Error::Cholesky(jitter / 10.0));
        }
    };
    let alpha = backward(&chol, n, &forward(&chol, n, y));
    let fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let logdet: f64 = (0..n).map(|i| chol[i * n + i].ln()).sum();
    let lml = -0.5 * fit - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok(Factor {
        chol,
        alpha,
        lml,
        jitter,
    })
}

#[derive(Clone, Debug)]
pub struct GpOptions {
    /// Fixed noise variance; `None` searches [`NOISE_GRID`].
    pub noise: Option<f64>,
    /// Fixed length-scales; `None` searches [`LENGTH_GRID`].
    pub length_scales: Option<Vec<f64>>,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self {
            noise: None,
            length_scales: None,
        }
    }
}

pub fn gp_fit(points: &[Vec<f64>], values: &[f64]) -> Result<GpModel> {
    gp_fit_with(points, values, &GpOptions::default())
}

pub fn gp_fit_with(points: &[Vec<f64>], values: &[f64], opts: &GpOptions) -> Result<GpModel> {
    let n = points.len();
    if n < 2 || values.len() != n {
        return Err(Error::invalid("gp needs at least 2 points with one value each"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("gp values must be finite"));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::invalid("gp points differ in dimension"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    let y: Vec<f64> = values.iter().map(|v| (v - mean) / std).collect();

    let noises: Vec<f64> = match opts.noise {
        Some(v) => vec![v.max(NOISE_FLOOR)],
        None => NOISE_GRID.to_vec(),
    };
    let score = |ls: &[f64], noise: f64| factor(points, &y, ls, noise).map(|f| f.lml).unwrap_or(f64::NEG_INFINITY);

    let mut best_noise = noises[0];
    let mut best_ls = vec![LENGTH_GRID[3]; d];
    let mut best = f64::NEG_INFINITY;
    if let Some(ls) = &opts.length_scales {
        best_ls = ls.clone();
        for &nz in &noises {
            let s = score(&best_ls, nz);
            if s > best {
                best = s;
                best_noise = nz;
            }
        }
    } else {
        for &nz in &noises {
            for &l in &LENGTH_GRID {
                let ls = vec![l; d];
                let s = score(&ls, nz);
                if s > best {
                    best = s;
                    best_noise = nz;
                    best_ls = ls;
                }
            }
        }
        if d > 1 {
            for _pass in 0..2 {
                for j in 0..d {
                    for &l in &LENGTH_GRID {
                        let mut ls = best_ls.clone();
                        ls[j] = l;
                        let s = score(&ls, best_noise);
                        if s > best {
                            best = s;
                            best_ls = ls;
                        }
                    }
                }
            }
        }
    }
    let f = factor(points, &y, &best_ls, best_noise)?;
    Ok(GpModel {
        length_scales: best_ls,
        noise: best_noise,
        jitter: f.jitter,
        y_mean: mean,
        y_std: std,
        log_marginal_likelihood: f.lml,
        points: points.to_vec(),
        chol: f.chol,
        alpha: f.alpha,
    })
}

impl GpModel {
    /// Latent mean and standard deviation in standardized units.
    pub fn predict_standardized(&self, x: &[f64]) -> (f64, f64) {
        let n = self.points.len();
        let ks: Vec<f64> = self
            .points
            .iter()
            .map(|p| matern52(scaled_dist(p, x, &self.length_scales)))
            .collect();
        let mu: f64 = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = forward(&self.chol, n, &ks);
        let var = 1.0 - v.iter().map(|t| t * t).sum::<f64>();
        (mu, var.max(0.0).sqrt())
    }

    /// Mean and standard deviation in the units of the observations.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let (m, s) = self.predict_standardized(x);
        (m * self.y_std + self.y_mean, s * self.y_std)
    }
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement over `best` for maximization.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    if sigma <= 0.0 {
        return (mu - best).max(0.0);
    }
    let z = (mu - best) / sigma;
    (mu - best) * normal_cdf(z) + sigma * normal_pdf(z)
}
