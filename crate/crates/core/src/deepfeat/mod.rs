//! Deep features from a frozen network, the feature store, fusion with HOG,
//! and z-score standardization.

pub mod backend;
pub mod fixture;
pub mod store;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix};

pub use backend::{baseline_classify, extract, load_backend, BackendHandle, BackendMeta, BatchItem, Layout};
pub use store::{read_feature_store, write_feature_store, StoreError};

/// Row-wise concatenation `[hog | deep]`.
pub fn fuse(hog: &FeatureMatrix, deep: &FeatureMatrix) -> Result<FeatureMatrix> {
    if hog.kind() != FeatureKind::Hog || deep.kind() != FeatureKind::Deep {
        return Err(Error::invalid(format!(
            "fuse expects (hog, deep) matrices, got ({}, {})",
            hog.kind(),
            deep.kind()
        )));
    }
    if hog.rows() != deep.rows() {
        return Err(Error::invalid(format!(
            "fuse row count mismatch: {} hog rows vs {} deep rows",
            hog.rows(),
            deep.rows()
        )));
    }
    if let Some(row) = (0..hog.rows()).find(|&i| hog.sample_ids()[i] != deep.sample_ids()[i]) {
        return Err(Error::IdMismatch {
            row,
            left: hog.sample_ids()[row].clone(),
            right: deep.sample_ids()[row].clone(),
        });
    }
    let dim = hog.dim() + deep.dim();
    let mut out = FeatureMatrix::empty(FeatureKind::Fused, dim);
    let mut buf = Vec::with_capacity(dim);
    for i in 0..hog.rows() {
        if hog.labels()[i] != deep.labels()[i] {
            return Err(Error::invalid(format!(
                "label disagreement for `{}`",
                hog.sample_ids()[i]
            )));
        }
        buf.clear();
        buf.extend_from_slice(hog.row(i));
        buf.extend_from_slice(deep.row(i));
        out.push_row(hog.sample_ids()[i].clone(), hog.labels()[i], &buf)?;
    }
    Ok(out)
}

pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension z-scoring fitted on the training rows only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation per column; standard
    /// deviations are floored at [`STD_FLOOR`].
    pub fn fit(train: &FeatureMatrix) -> Result<Self> {
        if train.rows() < 2 {
            return Err(Error::invalid("standardizer needs at least 2 training rows"));
        }
        let n = train.rows() as f64;
        let d = train.dim();
        let mut mean = vec![0.0; d];
        for i in 0..train.rows() {
            for (m, &v) in mean.iter_mut().zip(train.row(i)) {
                *m += f64::from(v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..train.rows() {
            for ((s, &v), m) in var.iter_mut().zip(train.row(i)).zip(&mean) {
                *s += (f64::from(v) - m).powi(2);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        if m.dim() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: m.dim(),
            });
        }
        let values: Vec<f32> = m
            .values()
            .chunks(m.dim().max(1))
            .flat_map(|row| {
                row.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(&v, (mu, sd))| ((f64::from(v) - mu) / sd) as f32)
            })
            .collect();
        let values = if m.dim() == 0 { Vec::new() } else { values };
        FeatureMatrix::new(
            m.kind(),
            m.dim(),
            m.sample_ids().to_vec(),
            m.labels().to_vec(),
            values,
        )
    }
}

pub fn fit_standardizer(train: &FeatureMatrix) -> Result<Standardizer> {
    Standardizer::fit(train)
}
