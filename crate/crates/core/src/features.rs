//! Feature vectors and row-labelled feature matrices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::ClassLabel;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Hog = 0,
    Deep = 1,
    Fused = 2,
}

impl FeatureKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::Hog),
            1 => Some(FeatureKind::Deep),
            2 => Some(FeatureKind::Fused),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Hog => "hog",
            FeatureKind::Deep => "deep",
            FeatureKind::Fused => "fused",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hog" => Ok(FeatureKind::Hog),
            "deep" => Ok(FeatureKind::Deep),
            "fused" => Ok(FeatureKind::Fused),
            _ => Err(Error::invalid(format!("unknown feature kind `{s}`"))),
        }
    }
}

/// One sample's descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Vec<f32>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// `rows × dim` single-precision features with one sample id and label per
/// row. All values are finite.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    kind: FeatureKind,
    dim: usize,
    sample_ids: Vec<String>,
    labels: Vec<ClassLabel>,
    values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(
        kind: FeatureKind,
        dim: usize,
        sample_ids: Vec<String>,
        labels: Vec<ClassLabel>,
        values: Vec<f32>,
    ) -> Result<Self> {
        if sample_ids.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} sample ids but {} labels",
                sample_ids.len(),
                labels.len()
            )));
        }
        if values.len() != sample_ids.len() * dim {
            return Err(Error::DimMismatch {
                expected: sample_ids.len() * dim,
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature in row `{}`",
                sample_ids[i / dim.max(1)]
            )));
        }
        Ok(Self {
            kind,
            dim,
            sample_ids,
            labels,
            values,
        })
    }

    pub fn empty(kind: FeatureKind, dim: usize) -> Self {
        Self {
            kind,
            dim,
            sample_ids: Vec::new(),
            labels: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Assembles rows in the given order.
    pub fn from_rows(
        kind: FeatureKind,
        dim: usize,
        rows: impl IntoIterator<Item = (String, ClassLabel, Vec<f32>)>,
    ) -> Result<Self> {
        let mut m = Self::empty(kind, dim);
        for (id, label, v) in rows {
            m.push_row(id, label, &v)?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, id: String, label: ClassLabel, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite feature in row `{id}`")));
        }
        self.sample_ids.push(id);
        self.labels.push(label);
        self.values.extend_from_slice(row);
        Ok(())
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn label_ids(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.id()).collect()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn with_kind(mut self, kind: FeatureKind) -> Self {
        self.kind = kind;
        self
    }

    /// Widens to a double-precision matrix for training.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.rows(),
            self.dim,
            self.values.iter().map(|&v| f64::from(v)).collect(),
        )
    }
}
