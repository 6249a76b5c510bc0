//! Fully connected network: ReLU hidden layers, softmax output,
//! cross-entropy loss, mini-batch SGD with momentum.
//!
//! Parameters live in one flat vector, layer by layer, each layer stored as
//! its `out × in` weight matrix followed by its bias.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::codec::{Reader, Writer};
use super::gbm::softmax_in_place;
use super::MlpParams;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    /// Layer widths from input to output.
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn n_params(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// He-normal weights, zero biases.
    pub fn init(sizes: Vec<usize>, seed_: u64) -> Self {
        let mut rng = seed::rng(seed_);
        let mut params = Vec::with_capacity(Self::n_params(&sizes));
        for w in sizes.windows(2) {
            let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive std");
            params.extend((0..w[1] * w[0]).map(|_| normal.sample(&mut rng)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Self { sizes, params }
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, in, out)
        let mut off = 0;
        self.sizes.windows(2).map(move |w| {
            let o = off;
            off += w[1] * w[0] + w[1];
            (o, w[0], w[1])
        })
    }

    /// Activations of every layer; the last entry holds the logits.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n_layers = self.sizes.len() - 1;
        let mut acts = vec![x.to_vec()];
        for (l, (off, nin, nout)) in self.layers().enumerate() {
            let a = acts.last().unwrap();
            let w = &self.params[off..off + nin * nout];
            let b = &self.params[off + nin * nout..off + nin * nout + nout];
            let mut z: Vec<f64> = (0..nout)
                .map(|o| b[o] + crate::matrix::dot(&w[o * nin..(o + 1) * nin], a))
                .collect();
            if l + 1 < n_layers {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).pop().unwrap()
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.logits(x);
        softmax_in_place(&mut z);
        z
    }

    /// Mean cross-entropy over `rows` and its gradient with respect to
    /// `params`.
    pub fn loss_and_gradient(&self, x: &Matrix, y: &[usize], rows: &[usize]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let layers: Vec<(usize, usize, usize)> = self.layers().collect();
        for &i in rows {
            let acts = self.activations(x.row(i));
            let logits = acts.last().unwrap();
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - logits[y[i]];
            let mut delta: Vec<f64> = logits.iter().map(|v| (v - lse).exp()).collect();
            delta[y[i]] -= 1.0;
            for (l, &(off, nin, nout)) in layers.iter().enumerate().rev() {
                let a = &acts[l];
                for o in 0..nout {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let gw = &mut grad[off + o * nin..off + (o + 1) * nin];
                    for (g, &ai) in gw.iter_mut().zip(a) {
                        *g += d * ai;
                    }
                    grad[off + nin * nout + o] += d;
                }
                if l > 0 {
                    let w = &self.params[off..off + nin * nout];
                    let mut prev = vec![0.0; nin];
                    for o in 0..nout {
                        let d = delta[o];
                        if d == 0.0 {
                            continue;
                        }
                        for (p, &wv) in prev.iter_mut().zip(&w[o * nin..(o + 1) * nin]) {
                            *p += d * wv;
                        }
                    }
                    for (p, &ai) in prev.iter_mut().zip(a) {
                        if ai <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        let n = rows.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.usizes(&self.sizes);
        w.f64s(&self.params);
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let sizes = r.usizes()?;
        let params = r.f64s()?;
        if sizes.len() < 2 || sizes.contains(&0) || params.len() != Self::n_params(&sizes) {
            return Err(Error::ModelDecode("inconsistent mlp block".into()));
        }
        Ok(Self { sizes, params })
    }
}

/// Learning rate in effect during `epoch`: `lr · decay^⌊epoch / step⌋` with
/// `step = ⌈epochs / 3⌉` unless overridden.
pub fn learning_rate_at(hp: &MlpParams, epoch: usize) -> f64 {
    let step = hp.decay_every.unwrap_or_else(|| hp.epochs.div_ceil(3)).max(1);
    hp.learning_rate * hp.decay.powi((epoch / step) as i32)
}

pub fn train_mlp(x: &Matrix, y: &[usize], n_classes: usize, hp: &MlpParams, seed_: u64) -> Result<Mlp> {
    if x.rows() < hp.batch {
        return Err(Error::invalid(format!(
            "mlp batch size {} exceeds {} training rows",
            hp.batch,
            x.rows()
        )));
    }
    let mut sizes = vec![x.cols()];
    sizes.extend(std::iter::repeat_n(hp.width, hp.layers));
    sizes.push(n_classes);
    let mut net = Mlp::init(sizes, seed::derive_seed(seed_, "mlp-init"));
    let mut velocity = vec![0.0; net.params.len()];
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut rng = seed::rng(seed::derive_seed(seed_, "mlp-order"));
    for epoch in 0..hp.epochs {
        let lr = learning_rate_at(hp, epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hp.batch) {
            let (loss, grad) = net.loss_and_gradient(x, y, batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            for ((p, v), g) in net.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = hp.momentum * *v - lr * g;
                *p += *v;
            }
        }
        log::trace!("mlp epoch {epoch}: loss {:.6}", epoch_loss / x.rows() as f64);
    }
    if net.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFiniteLoss { epoch: hp.epochs });
    }
    Ok(net)
}
