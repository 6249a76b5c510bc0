//! Hyperparameter spaces and their unit-cube encoding.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classify::{Hyperparams, ModelKind};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum DimType {
    Real { low: f64, high: f64 },
    LogReal { low: f64, high: f64 },
    /// Inclusive bounds.
    Integer { low: i64, high: i64 },
    Categorical { choices: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dim {
    pub name: String,
    #[serde(flatten)]
    pub ty: DimType,
}

impl Dim {
    fn new(name: &str, ty: DimType) -> Self {
        Self {
            name: name.to_owned(),
            ty,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match &self.ty {
            DimType::Real { low, high } => low.is_finite() && high.is_finite() && low < high,
            DimType::LogReal { low, high } => *low > 0.0 && high.is_finite() && low < high,
            DimType::Integer { low, high } => low < high,
            DimType::Categorical { choices } => !choices.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("bad bounds for `{}`", self.name)))
        }
    }

    /// Maps `u ∈ [0, 1]` to a parameter value.
    pub fn decode(&self, u: f64) -> Value {
        match &self.ty {
            DimType::Real { low, high } => Value::from(low + u * (high - low)),
            DimType::LogReal { low, high } => {
                let (a, b) = (low.ln(), high.ln());
                Value::from((a + u * (b - a)).exp())
            }
            DimType::Integer { low, high } => {
                let v = (*low as f64 + u * (high - low) as f64 + 0.5).floor() as i64;
                Value::from(v.clamp(*low, *high))
            }
            DimType::Categorical { choices } => {
                let m = choices.len();
                let i = ((u * m as f64).floor() as usize).min(m - 1);
                Value::from(choices[i].clone())
            }
        }
    }

    /// Inverse of [`Dim::decode`]; categories encode to their interval centre.
    pub fn encode(&self, v: &Value) -> Result<f64> {
        let bad = || Error::invalid(format!("value {v} does not fit dimension `{}`", self.name));
        let u = match &self.ty {
            DimType::Real { low, high } => (v.as_f64().ok_or_else(bad)? - low) / (high - low),
            DimType::LogReal { low, high } => {
                let x = v.as_f64().ok_or_else(bad)?;
                if x <= 0.0 {
                    return Err(bad());
                }
                (x.ln() - low.ln()) / (high.ln() - low.ln())
            }
            DimType::Integer { low, high } => {
                (v.as_f64().ok_or_else(bad)? - *low as f64) / (high - low) as f64
            }
            DimType::Categorical { choices } => {
                let s = v.as_str().ok_or_else(bad)?;
                let i = choices.iter().position(|c| c == s).ok_or_else(bad)?;
                (i as f64 + 0.5) / choices.len() as f64
            }
        };
        if !(0.0..=1.0).contains(&u) {
            log::warn!("`{}` = {v} lies outside its bounds; clamped", self.name);
        }
        Ok(u.clamp(0.0, 1.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperparamSpace {
    pub kind: ModelKind,
    pub dims: Vec<Dim>,
}

impl HyperparamSpace {
    /// The default search space; `n_train` caps the neighbour count.
    pub fn default_for(kind: ModelKind, n_train: usize) -> Self {
        use DimType::*;
        let dims = match kind {
            ModelKind::Tree => vec![
                Dim::new("max_depth", Integer { low: 1, high: 30 }),
                Dim::new("min_leaf", Integer { low: 1, high: 20 }),
            ],
            ModelKind::Gbm => vec![
                Dim::new("rounds", Integer { low: 20, high: 300 }),
                Dim::new("learning_rate", LogReal { low: 0.01, high: 0.5 }),
                Dim::new("max_depth", Integer { low: 1, high: 6 }),
                Dim::new("subsample", Real { low: 0.5, high: 1.0 }),
            ],
            ModelKind::Knn => vec![
                Dim::new(
                    "k",
                    Integer {
                        low: 1,
                        high: (n_train as i64).clamp(2, 50),
                    },
                ),
                Dim::new(
                    "metric",
                    Categorical {
                        choices: vec!["euclidean".into(), "manhattan".into(), "cosine".into()],
                    },
                ),
                Dim::new(
                    "weighting",
                    Categorical {
                        choices: vec!["uniform".into(), "inverse-distance".into()],
                    },
                ),
            ],
            ModelKind::Mlp => vec![
                Dim::new("layers", Integer { low: 1, high: 3 }),
                Dim::new("width", Integer { low: 16, high: 512 }),
                Dim::new("learning_rate", LogReal { low: 1e-5, high: 1e-1 }),
                Dim::new("momentum", Real { low: 0.5, high: 0.99 }),
                Dim::new("epochs", Integer { low: 10, high: 100 }),
                Dim::new("batch", Integer { low: 8, high: 128 }),
            ],
            ModelKind::Svm => vec![
                Dim::new("c", LogReal { low: 1e-2, high: 1e3 }),
                Dim::new("gamma", LogReal { low: 1e-4, high: 10.0 }),
            ],
        };
        Self { kind, dims }
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// Bounds are sane, names are unique, and every name is a field of the
    /// target kind's hyperparameters.
    pub fn validate(&self) -> Result<()> {
        let template = hp_object(&self.kind.default_hyperparams())?;
        for (i, d) in self.dims.iter().enumerate() {
            d.validate()?;
            if d.name == "kind" || !template.contains_key(&d.name) {
                return Err(Error::Config(format!("{} has no hyperparameter `{}`", self.kind, d.name)));
            }
            if self.dims[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::Config(format!("`{}` appears twice in the space", d.name)));
            }
        }
        Ok(())
    }

    /// Decodes a unit-cube point onto the kind's defaults.
    pub fn decode(&self, point: &[f64]) -> Result<Hyperparams> {
        if point.len() != self.dims.len() {
            return Err(Error::DimMismatch {
                expected: self.dims.len(),
                found: point.len(),
            });
        }
        let mut obj = hp_object(&self.kind.default_hyperparams())?;
        for (d, &u) in self.dims.iter().zip(point) {
            if !(0.0..=1.0).contains(&u) {
                log::warn!("point component {u} for `{}` clamped to [0, 1]", d.name);
            }
            obj.insert(d.name.clone(), d.decode(u.clamp(0.0, 1.0)));
        }
        serde_json::from_value(Value::Object(obj)).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn encode(&self, hp: &Hyperparams) -> Result<Vec<f64>> {
        if hp.kind() != self.kind {
            return Err(Error::invalid(format!("{} hyperparameters for a {} space", hp.kind(), self.kind)));
        }
        let obj = hp_object(hp)?;
        self.dims
            .iter()
            .map(|d| d.encode(obj.get(&d.name).unwrap_or(&Value::Null)))
            .collect()
    }
}

fn hp_object(hp: &Hyperparams) -> Result<serde_json::Map<String, Value>> {
    match serde_json::to_value(hp)? {
        Value::Object(m) => Ok(m),
        _ => unreachable!("hyperparameters serialise to objects"),
    }
}
