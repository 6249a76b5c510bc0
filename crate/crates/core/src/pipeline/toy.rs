//! A small synthetic corpus in the class-per-directory layout.
//!
//! Class `c` is a stripe texture at roughly `36·c` degrees over a class tint,
//! with per-image jitter in angle, period, phase, tint and amplitude.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;

use crate::corpus::ClassLabel;
use crate::error::{Error, Result};
use crate::seed::{derive_index, derive_seed, rng};
use crate::tensor::ImageTensor;

const TINTS: [[f64; 3]; 5] = [
    [0.70, 0.35, 0.45],
    [0.80, 0.60, 0.70],
    [0.45, 0.30, 0.60],
    [0.85, 0.75, 0.80],
    [0.55, 0.40, 0.35],
];

/// One toy image of class `class`, fully determined by `seed`.
pub fn toy_image(class: ClassLabel, side: usize, seed: u64) -> Result<ImageTensor> {
    let mut r = rng(seed);
    let c = class.id();
    let angle = (36.0 * c as f64 + r.random_range(-6.0..6.0)).to_radians();
    let period = r.random_range(20.0..36.0);
    let phase = r.random_range(0.0..2.0 * PI);
    let amp = r.random_range(0.12..0.2);
    let tint: Vec<f64> = TINTS[c].iter().map(|t| t + r.random_range(-0.04..0.04)).collect();
    let (sa, ca) = angle.sin_cos();
    ImageTensor::from_fn(side, side, 3, |y, x, ch| {
        let u = x as f64 * ca + y as f64 * sa;
        let wave = (2.0 * PI * u / period + phase).sin();
        (tint[ch] + amp * wave).clamp(0.0, 1.0)
    })
}

/// Writes `per_class` PNGs of `side × side` pixels into `root/<class>/`.
pub fn write_toy_corpus(root: &Path, per_class: usize, side: usize, seed: u64) -> Result<()> {
    if side < 3 || per_class == 0 {
        return Err(Error::invalid("toy corpus needs side ≥ 3 and at least one image per class"));
    }
    for class in ClassLabel::ALL {
        let dir = root.join(class.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let class_seed = derive_seed(seed, class.name());
        (0..per_class).into_par_iter().try_for_each(|i| {
            let img = toy_image(class, side, derive_index(class_seed, i as u64))?;
            img.save_png(&dir.join(format!("img_{i:03}.png")))
        })?;
    }
    Ok(())
}
