//! A tiny hand-built ONNX network for tests and toy runs.
//!
//! `input [N,3,S,S] -> Conv 3x3 (8 filters, valid) -> Relu ->
//! GlobalAveragePool -> Flatten -> avg_pool [N,8]`, optionally followed by a
//! `Gemm` head producing `logits [N,5]`.
//!
//! Every filter has unit sum and no bias, so an image of constant value
//! `c >= 0` yields the feature vector `[c; 8]`. Filters 0..3 copy one input
//! channel; filters 3..8 add a zero-sum texture pattern to a channel copy.

use std::path::Path;

use prost::Message;
use tract_onnx::pb;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

use super::backend::BackendMeta;

pub const FIXTURE_DIM: usize = 8;
pub const FIXTURE_CLASSES: usize = 5;
pub const FIXTURE_SIDE: usize = 32;

const PATTERNS: [[f32; 9]; 5] = [
    [0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
    [0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0],
    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0],
    [1.0, -1.0, 1.0, -1.0, 0.0, -1.0, 1.0, -1.0, 1.0],
];

/// Conv weights `[8, 3, 3, 3]`, row-major.
pub fn conv_weights() -> Vec<f32> {
    let mut w = vec![0f32; FIXTURE_DIM * 27];
    for f in 0..FIXTURE_DIM {
        let base = f * 27;
        w[base + (f % 3) * 9 + 4] = 1.0;
        if f >= 3 {
            for k in 0..3 {
                for (t, p) in PATTERNS[f - 3].iter().enumerate() {
                    w[base + k * 9 + t] += p / 3.0;
                }
            }
        }
    }
    w
}

/// Head mapping features to logits: `logits = W f + b` with `W [5, 8]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Head {
    /// `logits[i] = f[i]`.
    pub fn identity_like() -> Self {
        let mut weights = vec![0f32; FIXTURE_CLASSES * FIXTURE_DIM];
        for i in 0..FIXTURE_CLASSES {
            weights[i * FIXTURE_DIM + i] = 1.0;
        }
        Self {
            weights,
            bias: vec![0.0; FIXTURE_CLASSES],
        }
    }
}

#[derive(Clone, Debug)]
pub struct FixtureSpec {
    pub side: usize,
    pub feature_name: String,
    pub head: Option<Head>,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            side: FIXTURE_SIDE,
            feature_name: super::backend::DEFAULT_OUTPUT.to_owned(),
            head: Some(Head::identity_like()),
        }
    }
}

fn tensor(name: &str, dims: &[i64], data: Vec<f32>) -> pb::TensorProto {
    pb::TensorProto {
        name: name.to_owned(),
        dims: dims.to_vec(),
        data_type: 1,
        float_data: data,
        ..Default::default()
    }
}

fn value_info(name: &str, dims: &[Option<i64>]) -> pb::ValueInfoProto {
    use pb::tensor_shape_proto::{dimension::Value, Dimension};
    let dim = dims
        .iter()
        .map(|d| Dimension {
            value: Some(match d {
                Some(v) => Value::DimValue(*v),
                None => Value::DimParam("N".to_owned()),
            }),
            ..Default::default()
        })
        .collect();
    pb::ValueInfoProto {
        name: name.to_owned(),
        r#type: Some(pb::TypeProto {
            value: Some(pb::type_proto::Value::TensorType(pb::type_proto::Tensor {
                elem_type: 1,
                shape: Some(pb::TensorShapeProto { dim }),
            })),
            ..Default::default()
        }),
        ..Default::default()
    }
}

fn node(op: &str, inputs: &[&str], output: &str, attribute: Vec<pb::AttributeProto>) -> pb::NodeProto {
    pb::NodeProto {
        op_type: op.to_owned(),
        name: output.to_owned(),
        input: inputs.iter().map(|s| s.to_string()).collect(),
        output: vec![output.to_owned()],
        attribute,
        ..Default::default()
    }
}

fn attr_ints(name: &str, v: &[i64]) -> pb::AttributeProto {
    pb::AttributeProto {
        name: name.to_owned(),
        r#type: 7,
        ints: v.to_vec(),
        ..Default::default()
    }
}

fn attr_int(name: &str, v: i64) -> pb::AttributeProto {
    pb::AttributeProto {
        name: name.to_owned(),
        r#type: 2,
        i: v,
        ..Default::default()
    }
}

/// Serialized ONNX bytes for `spec`.
pub fn fixture_model_bytes(spec: &FixtureSpec) -> Vec<u8> {
    let s = spec.side as i64;
    let d = FIXTURE_DIM as i64;
    let feat = spec.feature_name.as_str();
    let mut nodes = vec![
        node("Conv", &["input", "conv_w"], "conv", vec![attr_ints("kernel_shape", &[3, 3])]),
        node("Relu", &["conv"], "relu", vec![]),
        node("GlobalAveragePool", &["relu"], "gap", vec![]),
        node("Flatten", &["gap"], feat, vec![attr_int("axis", 1)]),
    ];
    let mut initializer = vec![tensor("conv_w", &[d, 3, 3, 3], conv_weights())];
    let mut output = vec![value_info(feat, &[None, Some(d)])];
    if let Some(head) = &spec.head {
        let k = FIXTURE_CLASSES as i64;
        initializer.push(tensor("head_w", &[k, d], head.weights.clone()));
        initializer.push(tensor("head_b", &[k], head.bias.clone()));
        nodes.push(node("Gemm", &[feat, "head_w", "head_b"], "logits", vec![attr_int("transB", 1)]));
        output.push(value_info("logits", &[None, Some(k)]));
    }
    let graph = pb::GraphProto {
        name: "fixture".to_owned(),
        node: nodes,
        initializer,
        input: vec![value_info("input", &[None, Some(3), Some(s), Some(s)])],
        output,
        ..Default::default()
    };
    pb::ModelProto {
        ir_version: 7,
        producer_name: "histofuse-fixture".to_owned(),
        opset_import: vec![pb::OperatorSetIdProto {
            domain: String::new(),
            version: 13,
        }],
        graph: Some(graph),
        ..Default::default()
    }
    .encode_to_vec()
}

/// Writes the model and its sidecar.
pub fn write_fixture_model(path: &Path, spec: &FixtureSpec) -> Result<()> {
    std::fs::write(path, fixture_model_bytes(spec)).map_err(|e| Error::io(path, e))?;
    BackendMeta {
        input_name: Some("input".to_owned()),
        output_name: spec.feature_name.clone(),
        input_side: spec.side,
        class_output: spec.head.as_ref().map(|_| "logits".to_owned()),
        ..BackendMeta::default()
    }
    .save_for(path)
}

/// Plain-Rust evaluation of the fixture features, independent of the ONNX
/// runtime.
pub fn reference_features(image: &ImageTensor) -> Vec<f64> {
    let w = conv_weights();
    let (h, wd) = (image.height(), image.width());
    let ch = image.channels();
    let mut out = vec![0.0; FIXTURE_DIM];
    let n = ((h - 2) * (wd - 2)) as f64;
    for (f, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for r in 0..h - 2 {
            for c in 0..wd - 2 {
                let mut v = 0.0;
                for k in 0..3 {
                    for dr in 0..3 {
                        for dc in 0..3 {
                            let x = image.get(r + dr, c + dc, if ch == 1 { 0 } else { k });
                            v += f64::from(w[f * 27 + k * 9 + dr * 3 + dc]) * x;
                        }
                    }
                }
                acc += v.max(0.0);
            }
        }
        *o = acc / n;
    }
    out
}

pub fn reference_logits(head: &Head, features: &[f64]) -> Vec<f64> {
    (0..FIXTURE_CLASSES)
        .map(|i| {
            f64::from(head.bias[i])
                + (0..FIXTURE_DIM)
                    .map(|j| f64::from(head.weights[i * FIXTURE_DIM + j]) * features[j])
                    .sum::<f64>()
        })
        .collect()
}
