//! Multiclass gradient boosting with the softmax cross-entropy objective.
//!
//! Each round fits one squared-error tree per class to the residuals
//! `y_onehot − p` and sets leaf values by a Newton step,
//! `(K−1)/K · Σ r / Σ p(1−p)`, shrunk by the learning rate.

use rand::seq::index::sample;
use rayon::prelude::*;

use super::codec::{Reader, Writer};
use super::tree::{grow, Growth, SquaredError, Tree};
use super::GbmParams;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct GbmModel {
    pub init: Vec<f64>,
    pub learning_rate: f64,
    /// `trees[round][class]`
    pub trees: Vec<Vec<Tree>>,
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

/// Mean negative log-likelihood of raw scores `f` (rows × K).
pub fn log_loss(f: &Matrix, y: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let row = f.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[yi];
    }
    total / y.len() as f64
}

impl GbmModel {
    pub fn n_classes(&self) -> usize {
        self.init.len()
    }

    pub fn raw_scores(&self, x: &[f64]) -> Vec<f64> {
        let mut f = self.init.clone();
        for round in &self.trees {
            for (k, t) in round.iter().enumerate() {
                f[k] += self.learning_rate * t.leaf(x)[0];
            }
        }
        f
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut f = self.raw_scores(x);
        softmax_in_place(&mut f);
        f
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.f64s(&self.init);
        w.f64(self.learning_rate);
        w.usize(self.trees.len());
        for round in &self.trees {
            for t in round {
                t.write(w);
            }
        }
    }

    pub(crate) fn read(r: &mut Reader<'_>, feature_dim: usize) -> Result<Self> {
        let init = r.f64s()?;
        let learning_rate = r.f64()?;
        let rounds = r.usize()?;
        let mut trees = Vec::new();
        for _ in 0..rounds {
            let round = (0..init.len())
                .map(|_| Tree::read(r, feature_dim))
                .collect::<Result<Vec<_>>>()?;
            trees.push(round);
        }
        Ok(Self {
            init,
            learning_rate,
            trees,
        })
    }
}

/// Trains and returns the model together with the training log-loss after
/// initialization and after every round.
pub fn train_gbm_with_history(
    x: &Matrix,
    y: &[usize],
    n_classes: usize,
    hp: &GbmParams,
    seed_: u64,
) -> Result<(GbmModel, Vec<f64>)> {
    let n = x.rows();
    if n < 10 {
        return Err(Error::invalid(format!("gbm needs at least 10 rows, got {n}")));
    }
    if hp.rounds == 0 {
        return Err(Error::invalid("gbm rounds must be at least 1"));
    }
    let k = n_classes;
    let mut counts = vec![0.0; k];
    for &c in y {
        counts[c] += 1.0;
    }
    let init: Vec<f64> = counts.iter().map(|c| (c / n as f64).max(1e-12).ln()).collect();
    let mut f = Matrix::zeros(n, k);
    for i in 0..n {
        f.row_mut(i).copy_from_slice(&init);
    }
    let mut history = vec![log_loss(&f, y)];
    let growth = Growth {
        max_depth: hp.max_depth,
        min_leaf: 1,
    };
    let newton = (k as f64 - 1.0) / k as f64;
    let mut trees = Vec::with_capacity(hp.rounds);
    for round in 0..hp.rounds {
        let mut p = f.clone();
        for i in 0..n {
            softmax_in_place(p.row_mut(i));
        }
        let rows: Vec<usize> = if hp.subsample >= 1.0 {
            (0..n).collect()
        } else {
            let m = ((hp.subsample * n as f64).floor() as usize).clamp(1, n);
            let mut rng = seed::stream_rng(seed_, round as u64);
            let mut s = sample(&mut rng, n, m).into_vec();
            s.sort_unstable();
            s
        };
        let round_trees: Vec<Tree> = (0..k)
            .into_par_iter()
            .map(|c| {
                let resid: Vec<f64> = (0..n)
                    .map(|i| f64::from(u8::from(y[i] == c)) - p.get(i, c))
                    .collect();
                let hess: Vec<f64> = (0..n).map(|i| p.get(i, c) * (1.0 - p.get(i, c))).collect();
                let crit = SquaredError {
                    target: &resid,
                    leaf_fn: |idx: &[usize]| {
                        let num: f64 = idx.iter().map(|&i| resid[i]).sum();
                        let den: f64 = idx.iter().map(|&i| hess[i]).sum();
                        if den <= 1e-12 {
                            0.0
                        } else {
                            newton * num / den
                        }
                    },
                };
                grow(x, &rows, &crit, growth)
            })
            .collect();
        for i in 0..n {
            let xi = x.row(i);
            for (c, t) in round_trees.iter().enumerate() {
                let v = f.get(i, c) + hp.learning_rate * t.leaf(xi)[0];
                f.set(i, c, v);
            }
        }
        history.push(log_loss(&f, y));
        trees.push(round_trees);
    }
    Ok((
        GbmModel {
            init,
            learning_rate: hp.learning_rate,
            trees,
        },
        history,
    ))
}

pub fn train_gbm(x: &Matrix, y: &[usize], n_classes: usize, hp: &GbmParams, seed: u64) -> Result<GbmModel> {
    Ok(train_gbm_with_history(x, y, n_classes, hp, seed)?.0)
}
