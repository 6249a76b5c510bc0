//! One-vs-rest soft-margin SVMs with the RBF kernel
//! `k(a, b) = exp(−gamma · ‖a − b‖²)`, each solved by SMO with
//! second-order working-set selection.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use rayon::prelude::*;

use super::codec::{Reader, Writer};
use super::SvmParams;
use crate::error::{Error, Result};
use crate::matrix::{sq_dist, Matrix};

pub const KKT_TOL: f64 = 1e-3;
const TAU: f64 = 1e-12;
/// Above this many rows the kernel matrix is computed lazily per row.
const FULL_KERNEL_LIMIT: usize = 4096;
const CACHE_BYTES: usize = 256 << 20;

#[inline]
pub fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    (-gamma * sq_dist(a, b)).exp()
}

fn kernel_row(x: &Matrix, gamma: f64, i: usize) -> Arc<[f64]> {
    let xi = x.row(i);
    (0..x.rows()).map(|t| rbf(gamma, xi, x.row(t))).collect()
}

struct Rows<'a> {
    x: &'a Matrix,
    gamma: f64,
    full: Option<&'a [Arc<[f64]>]>,
    cache: HashMap<usize, Arc<[f64]>>,
    fifo: VecDeque<usize>,
    cap: usize,
}

impl<'a> Rows<'a> {
    fn new(x: &'a Matrix, gamma: f64, full: Option<&'a [Arc<[f64]>]>) -> Self {
        Self {
            x,
            gamma,
            full,
            cache: HashMap::new(),
            fifo: VecDeque::new(),
            cap: (CACHE_BYTES / (8 * x.rows().max(1))).max(2),
        }
    }

    fn get(&mut self, i: usize) -> Arc<[f64]> {
        if let Some(full) = self.full {
            return full[i].clone();
        }
        if let Some(r) = self.cache.get(&i) {
            return r.clone();
        }
        let r = kernel_row(self.x, self.gamma, i);
        if self.fifo.len() == self.cap {
            if let Some(old) = self.fifo.pop_front() {
                self.cache.remove(&old);
            }
        }
        self.fifo.push_back(i);
        self.cache.insert(i, r.clone());
        r
    }
}

#[derive(Clone, Debug)]
pub struct BinarySolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
}

#[derive(Debug)]
pub struct NotConverged {
    pub iterations: usize,
    pub violation: f64,
    pub dual: f64,
}

/// Solves `min ½ αᵀQα − Σα` s.t. `0 ≤ α ≤ c`, `yᵀα = 0`, with
/// `Q_ij = y_i y_j K_ij` and `y ∈ {−1, +1}`.
fn solve(rows: &mut Rows<'_>, y: &[f64], c: f64, tol: f64, max_iter: usize) -> std::result::Result<BinarySolution, NotConverged> {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut g = vec![-1.0; n];
    let mut iter = 0;
    let violation = loop {
        // i maximises −y_t G_t over I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            let up = if y[t] > 0.0 { alpha[t] < c } else { alpha[t] > 0.0 };
            if up && -y[t] * g[t] >= gmax {
                gmax = -y[t] * g[t];
                i = t;
            }
        }
        let ki = if i == usize::MAX { None } else { Some(rows.get(i)) };
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let low = if y[t] > 0.0 { alpha[t] > 0.0 } else { alpha[t] < c };
            if !low {
                continue;
            }
            let v = y[t] * g[t];
            if v >= gmax2 {
                gmax2 = v;
            }
            if let Some(ki) = &ki {
                let b = gmax + v;
                if b > 0.0 {
                    let a = (2.0 - 2.0 * ki[t]).max(TAU);
                    let obj = -(b * b) / a;
                    if obj <= best {
                        best = obj;
                        j = t;
                    }
                }
            }
        }
        let gap = gmax + gmax2;
        if i == usize::MAX || j == usize::MAX || gap < tol {
            break gap.max(0.0);
        }
        if iter >= max_iter {
            let dual = 0.5 * alpha.iter().zip(&g).map(|(a, gv)| a * (gv - 1.0)).sum::<f64>();
            return Err(NotConverged {
                iterations: iter,
                violation: gap,
                dual,
            });
        }
        iter += 1;

        let ki = ki.unwrap();
        let kj = rows.get(j);
        let (ai, aj) = (alpha[i], alpha[j]);
        let quad = (2.0 - 2.0 * ki[j]).max(TAU);
        if y[i] != y[j] {
            let delta = (-g[i] - g[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (g[i] - g[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            g[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    };
    log::trace!("smo converged after {iter} iterations (gap {violation:.2e})");

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * g[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum_free += yg;
            n_free += 1;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
    Ok(BinarySolution {
        alpha,
        rho,
        iterations: iter,
    })
}

/// Binary problem on all rows with the given ±1 targets.
pub fn solve_binary(x: &Matrix, y: &[f64], c: f64, gamma: f64, max_iter: usize) -> std::result::Result<BinarySolution, NotConverged> {
    let mut rows = Rows::new(x, gamma, None);
    solve(&mut rows, y, c, KKT_TOL, max_iter)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    pub gamma: f64,
    pub support: Matrix,
    /// `n_classes × n_support`, entries `α_t y_t`.
    pub coef: Matrix,
    pub rho: Vec<f64>,
}

pub fn default_max_iter(n: usize) -> usize {
    (100 * n).max(100_000)
}

pub fn train_svm(x: &Matrix, y: &[usize], n_classes: usize, hp: &SvmParams) -> Result<SvmModel> {
    train_svm_capped(x, y, n_classes, hp, default_max_iter(x.rows()))
}

pub fn train_svm_capped(
    x: &Matrix,
    y: &[usize],
    n_classes: usize,
    hp: &SvmParams,
    max_iter: usize,
) -> Result<SvmModel> {
    let n = x.rows();
    let mut counts = vec![0usize; n_classes];
    y.iter().for_each(|&c| counts[c] += 1);
    if counts.iter().filter(|&&k| k > 0).count() < 2 {
        return Err(Error::invalid("svm needs at least two classes"));
    }
    let full: Option<Vec<Arc<[f64]>>> = (n <= FULL_KERNEL_LIMIT)
        .then(|| (0..n).into_par_iter().map(|i| kernel_row(x, hp.gamma, i)).collect());
    let solutions: Vec<Option<BinarySolution>> = (0..n_classes)
        .into_par_iter()
        .map(|c| {
            if counts[c] == 0 {
                return Ok(None);
            }
            let target: Vec<f64> = y.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
            let mut rows = Rows::new(x, hp.gamma, full.as_deref());
            solve(&mut rows, &target, hp.c, KKT_TOL, max_iter)
                .map(Some)
                .map_err(|e| Error::SvmNotConverged {
                    class: c,
                    iterations: e.iterations,
                    violation: e.violation,
                    dual: e.dual,
                })
        })
        .collect::<Result<_>>()?;
    let sv: Vec<usize> = (0..n)
        .filter(|&t| solutions.iter().flatten().any(|s| s.alpha[t] > 0.0))
        .collect();
    let mut coef = Matrix::zeros(n_classes, sv.len());
    let mut rho = vec![1.0; n_classes];
    for (c, s) in solutions.iter().enumerate() {
        if let Some(s) = s {
            for (k, &t) in sv.iter().enumerate() {
                let yt = if y[t] == c { 1.0 } else { -1.0 };
                coef.set(c, k, s.alpha[t] * yt);
            }
            rho[c] = s.rho;
        }
    }
    Ok(SvmModel {
        gamma: hp.gamma,
        support: x.select_rows(&sv),
        coef,
        rho,
    })
}

impl SvmModel {
    /// Decision values `f_c(x)`; classes absent from training get −1.
    pub fn decision(&self, x: &[f64]) -> Vec<f64> {
        let k: Vec<f64> = (0..self.support.rows())
            .map(|t| rbf(self.gamma, x, self.support.row(t)))
            .collect();
        (0..self.coef.rows())
            .map(|c| crate::matrix::dot(self.coef.row(c), &k) - self.rho[c])
            .collect()
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.f64(self.gamma);
        w.usize(self.support.rows());
        w.usize(self.support.cols());
        w.f64s(self.support.data());
        w.usize(self.coef.rows());
        w.f64s(self.coef.data());
        w.f64s(&self.rho);
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let gamma = r.f64()?;
        let n_sv = r.usize()?;
        let dim = r.usize()?;
        let sup = r.f64s()?;
        let k = r.usize()?;
        let coef = r.f64s()?;
        let rho = r.f64s()?;
        if sup.len() != n_sv * dim || coef.len() != k * n_sv || rho.len() != k {
            return Err(Error::ModelDecode("inconsistent svm block".into()));
        }
        Ok(Self {
            gamma,
            support: Matrix::from_vec(n_sv, dim, sup),
            coef: Matrix::from_vec(k, n_sv, coef),
            rho,
        })
    }
}
