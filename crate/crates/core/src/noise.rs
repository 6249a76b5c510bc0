//! Additive Gaussian noise at an exact signal-to-noise ratio.
//!
//! Signal power is the mean of squared pixel values over all pixels and
//! channels. The drawn noise is rescaled so its *empirical* power is exactly
//! `P_signal / 10^(snr_db / 10)`, which makes the realized SNR equal to the
//! target up to floating-point rounding. Nothing here clips: clipping would
//! change the realized SNR, so it is left to [`ImageTensor::to_rgb8_clipped`]
//! for viewing.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::ImageTensor;

/// The levels swept by default, in dB.
pub const DEFAULT_SNR_LEVELS: [f64; 3] = [40.0, 35.0, 30.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub snr_db: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(snr_db: f64, seed: u64) -> Self {
        Self { snr_db, seed }
    }

    /// Per-image configuration: the noise stream depends on the master seed
    /// and the sample id only, so every level reuses the same draw.
    pub fn for_sample(snr_db: f64, master_seed: u64, sample_id: &str) -> Self {
        Self {
            snr_db,
            seed: seed::derive_seed(master_seed, sample_id),
        }
    }
}

/// Returns `image + n` with `mean(n²) = mean(image²) / 10^(snr_db/10)`.
pub fn inject_noise(image: &ImageTensor, cfg: &NoiseConfig) -> Result<ImageTensor> {
    if !cfg.snr_db.is_finite() {
        return Err(Error::invalid(format!("snr must be finite, got {}", cfg.snr_db)));
    }
    let signal = image.power();
    if signal <= 0.0 {
        return Err(Error::invalid("image has zero signal power; SNR undefined"));
    }
    let target = signal / 10f64.powf(cfg.snr_db / 10.0);

    let mut rng = seed::rng(cfg.seed);
    let draw: Vec<f64> = (0..image.data().len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let drawn = draw.iter().map(|v| v * v).sum::<f64>() / draw.len() as f64;
    let scale = (target / drawn).sqrt();

    let data = image
        .data()
        .iter()
        .zip(&draw)
        .map(|(x, n)| x + scale * n)
        .collect();
    Ok(ImageTensor::from_parts_unchecked(
        image.height(),
        image.width(),
        image.channels(),
        data,
    ))
}

/// `10·log10(mean(clean²) / mean((noisy − clean)²))`; `+∞` when the images
/// are identical.
pub fn measured_snr(clean: &ImageTensor, noisy: &ImageTensor) -> Result<f64> {
    if (clean.height(), clean.width(), clean.channels())
        != (noisy.height(), noisy.width(), noisy.channels())
    {
        return Err(Error::invalid("clean and noisy images differ in shape"));
    }
    let signal = clean.power();
    if signal <= 0.0 {
        return Err(Error::invalid("clean image has zero signal power"));
    }
    let noise = clean
        .data()
        .iter()
        .zip(noisy.data())
        .map(|(c, n)| (n - c) * (n - c))
        .sum::<f64>()
        / clean.data().len() as f64;
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// Parses a comma-separated list of dB levels such as `40,35,30`.
pub fn parse_levels(s: &str) -> Result<Vec<f64>> {
    let levels = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::invalid(format!("bad SNR level `{p}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if levels.is_empty() {
        return Err(Error::invalid("no SNR levels given"));
    }
    Ok(levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_image_power_arithmetic() {
        let img = ImageTensor::filled(32, 32, 3, 0.5).unwrap();
        let noisy = inject_noise(&img, &NoiseConfig::new(20.0, 1)).unwrap();
        let power = img
            .data()
            .iter()
            .zip(noisy.data())
            .map(|(a, b)| (b - a).powi(2))
            .sum::<f64>()
            / img.data().len() as f64;
        assert!((power - 0.0025).abs() < 1e-15);
        // no clipping
        assert!(noisy.data().iter().any(|&v| v > 0.5));
    }

    #[test]
    fn measured_snr_closed_forms() {
        let clean = ImageTensor::filled(4, 4, 1, 1.0).unwrap();
        assert_eq!(measured_snr(&clean, &clean).unwrap(), f64::INFINITY);
        let noisy = ImageTensor::filled(4, 4, 1, 1.1).unwrap();
        assert!((measured_snr(&clean, &noisy).unwrap() - 20.0).abs() < 1e-9);
        let wrong = ImageTensor::filled(4, 5, 1, 1.0).unwrap();
        assert!(measured_snr(&clean, &wrong).is_err());
    }

    #[test]
    fn zero_image_rejected() {
        let img = ImageTensor::filled(4, 4, 1, 0.0).unwrap();
        assert!(inject_noise(&img, &NoiseConfig::new(30.0, 0)).is_err());
        let img = ImageTensor::filled(4, 4, 1, 0.2).unwrap();
        assert!(inject_noise(&img, &NoiseConfig::new(f64::NAN, 0)).is_err());
    }

    #[test]
    fn lower_snr_means_more_noise() {
        let img = ImageTensor::from_fn(16, 16, 3, |r, c, k| ((r + 2 * c + k) % 5) as f64 / 4.0).unwrap();
        let mean_abs = |db: f64| {
            let n = inject_noise(&img, &NoiseConfig::new(db, 9)).unwrap();
            n.data().iter().zip(img.data()).map(|(a, b)| (a - b).abs()).sum::<f64>()
        };
        assert!(mean_abs(30.0) > mean_abs(35.0));
        assert!(mean_abs(35.0) > mean_abs(40.0));
    }

    #[test]
    fn per_sample_configs_are_deterministic() {
        let img = ImageTensor::filled(8, 8, 3, 0.3).unwrap();
        let a = inject_noise(&img, &NoiseConfig::for_sample(35.0, 1, "lung_n/x.png")).unwrap();
        let b = inject_noise(&img, &NoiseConfig::for_sample(35.0, 1, "lung_n/x.png")).unwrap();
        let c = inject_noise(&img, &NoiseConfig::for_sample(35.0, 1, "lung_n/y.png")).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn level_parsing() {
        assert_eq!(parse_levels("40,35, 30").unwrap(), DEFAULT_SNR_LEVELS.to_vec());
        assert!(parse_levels("40,,30").is_err());
        assert!(parse_levels("inf").is_err());
    }

    proptest! {
        #[test]
        fn realized_snr_is_exact(seed in any::<u64>(), db in -10.0f64..80.0, h in 1usize..20, w in 1usize..20) {
            let img = ImageTensor::from_fn(h, w, 3, |r, c, k| {
                (seed.wrapping_add((r * 131 + c * 17 + k) as u64).wrapping_mul(0x9E37_79B9) % 997) as f64 / 996.0 + 1e-3
            }).unwrap();
            let noisy = inject_noise(&img, &NoiseConfig::new(db, seed)).unwrap();
            prop_assert!((measured_snr(&img, &noisy).unwrap() - db).abs() < 1e-6);
        }
    }
}
