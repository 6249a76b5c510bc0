//! Frozen-network inference over ONNX models.
//!
//! A model file `foo.onnx` may carry a sidecar `foo.meta.json` describing
//! input preprocessing and the named outputs to read.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tract_onnx::pb;
use tract_onnx::prelude::*;

use crate::corpus::ClassLabel;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix};
use crate::matrix::argmax;
use crate::tensor::ImageTensor;

pub const DEFAULT_OUTPUT: &str = "avg_pool";
pub const DEFAULT_INPUT_SIDE: usize = 299;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    #[default]
    Nchw,
    Nhwc,
}

/// Contents of the `*.meta.json` sidecar. Input pixels in `[0, 1]` are
/// mapped to `x * scale[c] + offset[c]` before inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendMeta {
    pub input_name: Option<String>,
    pub output_name: String,
    pub input_side: usize,
    pub scale: Vec<f32>,
    pub offset: Vec<f32>,
    pub class_output: Option<String>,
    pub layout: Layout,
}

impl Default for BackendMeta {
    fn default() -> Self {
        Self {
            input_name: None,
            output_name: DEFAULT_OUTPUT.to_owned(),
            input_side: DEFAULT_INPUT_SIDE,
            scale: vec![1.0],
            offset: vec![0.0],
            class_output: None,
            layout: Layout::Nchw,
        }
    }
}

impl BackendMeta {
    pub fn sidecar_path(model_path: &Path) -> PathBuf {
        model_path.with_extension("meta.json")
    }

    /// Reads the sidecar next to `model_path`, or defaults when absent.
    pub fn load_for(model_path: &Path) -> Result<Self> {
        let p = Self::sidecar_path(model_path);
        if !p.exists() {
            log::warn!("no sidecar at {}, using default preprocessing", p.display());
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let meta: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Backend(format!("sidecar {}: {e}", p.display())))?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn save_for(&self, model_path: &Path) -> Result<()> {
        let p = Self::sidecar_path(model_path);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    pub fn validate(&self) -> Result<()> {
        let ok_len = |n: usize| n == 1 || n == 3;
        if !ok_len(self.scale.len()) || !ok_len(self.offset.len()) {
            return Err(Error::Backend(
                "sidecar scale/offset must have 1 or 3 entries".into(),
            ));
        }
        if self.input_side == 0 {
            return Err(Error::Backend("sidecar input_side must be positive".into()));
        }
        if self.scale.iter().chain(&self.offset).any(|v| !v.is_finite()) {
            return Err(Error::Backend("sidecar scale/offset must be finite".into()));
        }
        Ok(())
    }

    fn scale(&self, c: usize) -> f32 {
        self.scale[c.min(self.scale.len() - 1)]
    }

    fn offset(&self, c: usize) -> f32 {
        self.offset[c.min(self.offset.len() - 1)]
    }
}

type Plan = Arc<TypedRunnableModel>;

/// A loaded, optimized model ready for single-image inference.
pub struct BackendHandle {
    model_path: PathBuf,
    meta: BackendMeta,
    output_name: String,
    feature_dim: usize,
    n_classes: Option<usize>,
    plan: Plan,
}

impl std::fmt::Debug for BackendHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendHandle")
            .field("model_path", &self.model_path)
            .field("output_name", &self.output_name)
            .field("input_side", &self.meta.input_side)
            .field("feature_dim", &self.feature_dim)
            .field("n_classes", &self.n_classes)
            .finish()
    }
}

fn backend_err(e: impl std::fmt::Display) -> Error {
    Error::Backend(e.to_string())
}

/// Graph inputs that are not initializers, with their declared rank.
fn graph_inputs(graph: &pb::GraphProto) -> Vec<(String, Option<usize>)> {
    let inits: std::collections::HashSet<&str> =
        graph.initializer.iter().map(|t| t.name.as_str()).collect();
    graph
        .input
        .iter()
        .filter(|vi| !inits.contains(vi.name.as_str()))
        .map(|vi| {
            let rank = vi.r#type.as_ref().and_then(|t| match &t.value {
                Some(pb::type_proto::Value::TensorType(tt)) => tt.shape.as_ref().map(|s| s.dim.len()),
                _ => None,
            });
            (vi.name.clone(), rank)
        })
        .collect()
}

/// Loads `model_path` and resolves the feature output. `output_name`
/// overrides the sidecar, which in turn defaults to `avg_pool`.
pub fn load_backend(model_path: &Path, output_name: Option<&str>) -> Result<BackendHandle> {
    if !model_path.is_file() {
        return Err(Error::Backend(format!(
            "model file {} does not exist",
            model_path.display()
        )));
    }
    let meta = BackendMeta::load_for(model_path)?;
    let output_name = output_name.unwrap_or(&meta.output_name).to_owned();

    let onnx = tract_onnx::onnx();
    let proto = onnx
        .proto_model_for_path(model_path)
        .map_err(|e| Error::Backend(format!("cannot parse {}: {e}", model_path.display())))?;
    let graph = proto
        .graph
        .as_ref()
        .ok_or_else(|| Error::Backend("model has no graph".into()))?;

    let inputs = graph_inputs(graph);
    let (input_name, rank) = match &meta.input_name {
        Some(n) => inputs
            .iter()
            .find(|(name, _)| name == n)
            .cloned()
            .ok_or_else(|| Error::Backend(format!("model has no input named `{n}`")))?,
        None => match inputs.as_slice() {
            [one] => one.clone(),
            _ => {
                return Err(Error::Backend(format!(
                    "model has {} inputs; name one in the sidecar",
                    inputs.len()
                )))
            }
        },
    };
    if let Some(r) = rank {
        if r != 4 {
            return Err(Error::Backend(format!(
                "input `{input_name}` has rank {r}, expected 4"
            )));
        }
    }

    let dir = model_path.parent().and_then(|p| p.to_str());
    let parsed = onnx
        .parse(&proto, dir)
        .map_err(|e| Error::Backend(format!("cannot load {}: {e}", model_path.display())))?;
    let mut model = parsed.model;
    let by_name = parsed.outlets_by_name;

    let find = |name: &str| -> Result<OutletId> {
        by_name.get(name).copied().ok_or_else(|| {
            let mut declared: Vec<&str> = graph.output.iter().map(|o| o.name.as_str()).collect();
            declared.sort_unstable();
            Error::Backend(format!(
                "model has no output named `{name}`; available outputs: {}",
                declared.join(", ")
            ))
        })
    };
    let mut outlets = vec![find(&output_name)?];
    if let Some(class_name) = &meta.class_output {
        outlets.push(find(class_name)?);
    }
    model.select_output_outlets(&outlets).map_err(backend_err)?;

    let input_idx = model
        .input_outlets()
        .map_err(backend_err)?
        .iter()
        .position(|o| model.node(o.node).name == input_name)
        .ok_or_else(|| Error::Backend(format!("input `{input_name}` not found in graph")))?;
    let s = meta.input_side;
    let shape = match meta.layout {
        Layout::Nchw => tvec![1, 3, s, s],
        Layout::Nhwc => tvec![1, s, s, 3],
    };
    model
        .set_input_fact(input_idx, InferenceFact::dt_shape(f32::datum_type(), shape))
        .map_err(backend_err)?;

    let typed = model.into_optimized().map_err(backend_err)?;
    let width = |ix: usize| -> Result<usize> {
        let fact = typed.output_fact(ix).map_err(backend_err)?;
        let dims = fact
            .shape
            .as_concrete()
            .ok_or_else(|| Error::Backend(format!("output {ix} has a symbolic shape")))?;
        Ok(dims.iter().skip(1).product())
    };
    let feature_dim = width(0)?;
    if feature_dim == 0 {
        return Err(Error::Backend(format!("output `{output_name}` is empty")));
    }
    let n_classes = if meta.class_output.is_some() {
        Some(width(1)?)
    } else {
        None
    };
    let plan = typed.into_runnable().map_err(backend_err)?;
    Ok(BackendHandle {
        model_path: model_path.to_owned(),
        meta,
        output_name,
        feature_dim,
        n_classes,
        plan,
    })
}

impl BackendHandle {
    pub fn model_path(&self) -> &Path {
        &self.model_path
    }

    pub fn output_name(&self) -> &str {
        &self.output_name
    }

    pub fn input_side(&self) -> usize {
        self.meta.input_side
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn meta(&self) -> &BackendMeta {
        &self.meta
    }

    /// Width of the classification head, when the sidecar declares one.
    pub fn class_outputs(&self) -> Option<usize> {
        self.n_classes
    }

    fn input_tensor(&self, image: &ImageTensor) -> Result<Tensor> {
        let s = self.meta.input_side;
        if image.height() != s || image.width() != s {
            return Err(Error::invalid(format!(
                "image is {}x{}, backend expects {s}x{s}",
                image.height(),
                image.width()
            )));
        }
        let ch = image.channels();
        let px = |r: usize, c: usize, k: usize| {
            let v = image.get(r, c, if ch == 1 { 0 } else { k }) as f32;
            v * self.meta.scale(k) + self.meta.offset(k)
        };
        let t = match self.meta.layout {
            Layout::Nchw => {
                tract_ndarray::Array4::from_shape_fn((1, 3, s, s), |(_, k, r, c)| px(r, c, k))
            }
            Layout::Nhwc => {
                tract_ndarray::Array4::from_shape_fn((1, s, s, 3), |(_, r, c, k)| px(r, c, k))
            }
        };
        Ok(t.into_tensor())
    }

    fn run(&self, id: &str, image: &ImageTensor) -> Result<TVec<TValue>> {
        let input = self.input_tensor(image).map_err(|e| Error::Inference {
            id: id.to_owned(),
            reason: e.to_string(),
        })?;
        self.plan
            .run(tvec![input.into()])
            .map_err(|e| Error::Inference {
                id: id.to_owned(),
                reason: e.to_string(),
            })
    }

    fn flat(id: &str, v: &TValue) -> Result<Vec<f32>> {
        let view = v.to_plain_array_view::<f32>().map_err(|e| Error::Inference {
            id: id.to_owned(),
            reason: e.to_string(),
        })?;
        Ok(view.iter().copied().collect())
    }

    fn checked_features(id: &str, v: &TValue) -> Result<Vec<f32>> {
        let v = Self::flat(id, v)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Inference {
                id: id.to_owned(),
                reason: "non-finite activation".into(),
            });
        }
        Ok(v)
    }

    /// Activation of the feature output for one image.
    pub fn features(&self, id: &str, image: &ImageTensor) -> Result<Vec<f32>> {
        let out = self.run(id, image)?;
        Self::checked_features(id, &out[0])
    }

    /// Features and head argmax from a single forward pass.
    pub fn features_and_class(&self, id: &str, image: &ImageTensor) -> Result<(Vec<f32>, Option<usize>)> {
        let out = self.run(id, image)?;
        let feats = Self::checked_features(id, &out[0])?;
        let class = match self.n_classes {
            Some(_) => {
                let s: Vec<f64> = Self::flat(id, &out[1])?.into_iter().map(f64::from).collect();
                Some(argmax(&s))
            }
            None => None,
        };
        Ok((feats, class))
    }

    /// Raw outputs of the classification head, or `None` without one.
    pub fn class_scores(&self, id: &str, image: &ImageTensor) -> Result<Option<Vec<f32>>> {
        if self.n_classes.is_none() {
            return Ok(None);
        }
        let out = self.run(id, image)?;
        Ok(Some(Self::flat(id, &out[1])?))
    }

    /// Argmax of the classification head.
    pub fn classify(&self, id: &str, image: &ImageTensor) -> Result<Option<usize>> {
        Ok(self.class_scores(id, image)?.map(|s| {
            let s: Vec<f64> = s.into_iter().map(f64::from).collect();
            argmax(&s)
        }))
    }
}

/// One image to push through the backend.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a> {
    pub id: &'a str,
    pub label: ClassLabel,
    pub image: &'a ImageTensor,
}

/// Deep features for a batch, rows in submission order.
pub fn extract(backend: &BackendHandle, batch: &[BatchItem<'_>]) -> Result<FeatureMatrix> {
    let rows: Vec<Vec<f32>> = batch
        .par_iter()
        .map(|it| backend.features(it.id, it.image))
        .collect::<Result<_>>()?;
    let mut m = FeatureMatrix::empty(FeatureKind::Deep, backend.feature_dim());
    for (it, row) in batch.iter().zip(rows) {
        m.push_row(it.id.to_owned(), it.label, &row)?;
    }
    Ok(m)
}

/// Backend-as-classifier labels, or `None` when the model has no head.
pub fn baseline_classify(
    backend: &BackendHandle,
    batch: &[BatchItem<'_>],
) -> Result<Option<Vec<usize>>> {
    if backend.class_outputs().is_none() {
        log::warn!(
            "{} declares no class_output; skipping backend-as-classifier",
            backend.model_path().display()
        );
        return Ok(None);
    }
    let labels = batch
        .par_iter()
        .map(|it| Ok(backend.classify(it.id, it.image)?.expect("head checked above")))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(labels))
}
