//! Seeded inputs shared by the benches.

use histofuse::matrix::Matrix;
use histofuse::ImageTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(side: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..side * side * 3).map(|_| rng.random::<f64>()).collect();
    ImageTensor::new(side, side, 3, data).expect("valid shape")
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random::<f64>()).collect())
}

/// Scores with deliberate ties (quantised to 1/64) and balanced labels.
pub fn scored_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let pos = i % 2 == 0;
            let s = rng.random::<f64>() + if pos { 0.3 } else { 0.0 };
            ((s * 64.0).round() / 64.0, pos)
        })
        .unzip()
}
