//! The five classifiers behind one train / predict interface.
//!
//! All training math is double precision. Labels are class indices in
//! `0..n_classes`. `predict` is the row-argmax of `predict_scores` with ties
//! going to the lowest class index.

mod codec;
pub mod gbm;
pub mod knn;
pub mod mlp;
pub mod svm;
pub mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::matrix::{argmax, Matrix};

pub use gbm::GbmModel;
pub use knn::{KnnModel, Metric, Weighting};
pub use mlp::Mlp;
pub use svm::SvmModel;
pub use tree::Tree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tree,
    Gbm,
    Knn,
    Mlp,
    Svm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Tree,
        ModelKind::Gbm,
        ModelKind::Knn,
        ModelKind::Mlp,
        ModelKind::Svm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Tree => "tree",
            ModelKind::Gbm => "gbm",
            ModelKind::Knn => "knn",
            ModelKind::Mlp => "mlp",
            ModelKind::Svm => "svm",
        }
    }

    /// Whether `predict_scores` rows are probabilities.
    pub fn is_probabilistic(self) -> bool {
        self != ModelKind::Svm
    }

    pub fn default_hyperparams(self) -> Hyperparams {
        match self {
            ModelKind::Tree => Hyperparams::Tree(TreeParams::default()),
            ModelKind::Gbm => Hyperparams::Gbm(GbmParams::default()),
            ModelKind::Knn => Hyperparams::Knn(KnnParams::default()),
            ModelKind::Mlp => Hyperparams::Mlp(MlpParams::default()),
            ModelKind::Svm => Hyperparams::Svm(SvmParams::default()),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model `{s}` (tree, gbm, knn, mlp, svm)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 12,
            min_leaf: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbmParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub subsample: f64,
}

impl Default for GbmParams {
    fn default() -> Self {
        Self {
            rounds: 100,
            learning_rate: 0.1,
            max_depth: 3,
            subsample: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnParams {
    pub k: usize,
    pub metric: Metric,
    pub weighting: Weighting,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self {
            k: 5,
            metric: Metric::Euclidean,
            weighting: Weighting::Uniform,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    /// Number of hidden layers, all of width `width`.
    pub layers: usize,
    pub width: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Multiplier applied every `decay_every` epochs.
    pub decay: f64,
    /// Defaults to `⌈epochs / 3⌉`.
    pub decay_every: Option<usize>,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            layers: 2,
            width: 256,
            learning_rate: 1e-4,
            momentum: 0.9,
            epochs: 30,
            batch: 32,
            decay: 0.1,
            decay_every: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { c: 1.0, gamma: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Hyperparams {
    Tree(TreeParams),
    Gbm(GbmParams),
    Knn(KnnParams),
    Mlp(MlpParams),
    Svm(SvmParams),
}

impl Hyperparams {
    pub fn kind(&self) -> ModelKind {
        match self {
            Hyperparams::Tree(_) => ModelKind::Tree,
            Hyperparams::Gbm(_) => ModelKind::Gbm,
            Hyperparams::Knn(_) => ModelKind::Knn,
            Hyperparams::Mlp(_) => ModelKind::Mlp,
            Hyperparams::Svm(_) => ModelKind::Svm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(format!("{} hyperparameters: {m}", self.kind())));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        match self {
            Hyperparams::Tree(p) if p.min_leaf == 0 => fail("min_leaf must be at least 1"),
            Hyperparams::Gbm(p) if p.rounds == 0 => fail("rounds must be at least 1"),
            Hyperparams::Gbm(p) if !pos(p.learning_rate) => fail("learning_rate must be positive"),
            Hyperparams::Gbm(p) if !(p.subsample > 0.0 && p.subsample <= 1.0) => fail("subsample must lie in (0, 1]"),
            Hyperparams::Knn(p) if p.k == 0 => fail("k must be at least 1"),
            Hyperparams::Mlp(p) if p.width == 0 || p.batch == 0 => fail("width and batch must be at least 1"),
            Hyperparams::Mlp(p) if !pos(p.learning_rate) => fail("learning_rate must be positive"),
            Hyperparams::Mlp(p) if !(0.0..1.0).contains(&p.momentum) => fail("momentum must lie in [0, 1)"),
            Hyperparams::Mlp(p) if !pos(p.decay) => fail("decay must be positive"),
            Hyperparams::Svm(p) if !pos(p.c) || !pos(p.gamma) => fail("c and gamma must be positive"),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelParams {
    Tree(Tree),
    Gbm(GbmModel),
    Knn(KnnModel),
    Mlp(Mlp),
    Svm(SvmModel),
}

/// A trained classifier; immutable and shareable.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub hp: Hyperparams,
    pub params: ModelParams,
}

fn check_training_set(x: &Matrix, y: &[usize], n_classes: usize) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::invalid(format!("{} rows but {} labels", x.rows(), y.len())));
    }
    if x.rows() < 2 {
        return Err(Error::invalid("training needs at least 2 rows"));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::invalid(format!("label {bad} outside 0..{n_classes}")));
    }
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite training feature"));
    }
    Ok(())
}

/// Trains the model described by `hp`. `seed` drives every random choice.
pub fn train(hp: &Hyperparams, x: &Matrix, y: &[usize], n_classes: usize, seed: u64) -> Result<TrainedModel> {
    hp.validate()?;
    check_training_set(x, y, n_classes)?;
    let params = match hp {
        Hyperparams::Tree(p) => {
            let present = {
                let mut seen = vec![false; n_classes];
                y.iter().for_each(|&c| seen[c] = true);
                seen.iter().filter(|&&s| s).count()
            };
            if present < 2 {
                log::warn!("tree trained on a single class; the model is one leaf");
            }
            ModelParams::Tree(tree::fit_classification_tree(x, y, n_classes, p.max_depth, p.min_leaf))
        }
        Hyperparams::Gbm(p) => ModelParams::Gbm(gbm::train_gbm(x, y, n_classes, p, seed)?),
        Hyperparams::Knn(p) => ModelParams::Knn(knn::train_knn(x, y, n_classes, p.k, p.metric, p.weighting)?),
        Hyperparams::Mlp(p) => ModelParams::Mlp(mlp::train_mlp(x, y, n_classes, p, seed)?),
        Hyperparams::Svm(p) => ModelParams::Svm(svm::train_svm(x, y, n_classes, p)?),
    };
    Ok(TrainedModel {
        n_classes,
        feature_dim: x.cols(),
        hp: hp.clone(),
        params,
    })
}

/// Convenience wrapper over [`train`] for labelled feature matrices.
pub fn train_on(hp: &Hyperparams, m: &FeatureMatrix, n_classes: usize, seed: u64) -> Result<TrainedModel> {
    train(hp, &m.to_matrix(), &m.label_ids(), n_classes, seed)
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    version: String,
    kind: ModelKind,
    n_classes: usize,
    feature_dim: usize,
    hp: Hyperparams,
    params: String,
}

pub const FORMAT_VERSION: &str = "1";

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.hp.kind()
    }

    fn scores_row(&self, x: &[f64]) -> Vec<f64> {
        match &self.params {
            ModelParams::Tree(t) => t.leaf(x).to_vec(),
            ModelParams::Gbm(m) => m.scores(x),
            ModelParams::Knn(m) => m.scores(x),
            ModelParams::Mlp(m) => m.scores(x),
            ModelParams::Svm(m) => m.decision(x),
        }
    }

    /// `rows × n_classes` scores: probabilities for tree, gbm, knn and mlp;
    /// one-vs-rest decision values for svm.
    pub fn predict_scores(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.feature_dim {
            return Err(Error::DimMismatch {
                expected: self.feature_dim,
                found: x.cols(),
            });
        }
        use rayon::prelude::*;
        let rows: Vec<Vec<f64>> = (0..x.rows()).into_par_iter().map(|i| self.scores_row(x.row(i))).collect();
        let mut out = Matrix::zeros(x.rows(), self.n_classes);
        for (i, r) in rows.into_iter().enumerate() {
            out.row_mut(i).copy_from_slice(&r);
        }
        Ok(out)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let s = self.predict_scores(x)?;
        Ok((0..s.rows()).map(|i| argmax(s.row(i))).collect())
    }

    fn param_block(&self) -> Vec<u8> {
        let mut w = codec::Writer::default();
        match &self.params {
            ModelParams::Tree(t) => t.write(&mut w),
            ModelParams::Gbm(m) => m.write(&mut w),
            ModelParams::Knn(m) => m.write(&mut w),
            ModelParams::Mlp(m) => m.write(&mut w),
            ModelParams::Svm(m) => m.write(&mut w),
        }
        w.buf
    }

    pub fn to_json(&self) -> Result<String> {
        let env = Envelope {
            version: FORMAT_VERSION.to_owned(),
            kind: self.kind(),
            n_classes: self.n_classes,
            feature_dim: self.feature_dim,
            hp: self.hp.clone(),
            params: base64::engine::general_purpose::STANDARD.encode(self.param_block()),
        };
        Ok(serde_json::to_string_pretty(&env)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let env: Envelope = serde_json::from_str(s).map_err(|e| Error::ModelDecode(e.to_string()))?;
        if env.version != FORMAT_VERSION {
            return Err(Error::ModelDecode(format!("unsupported model version `{}`", env.version)));
        }
        if env.hp.kind() != env.kind {
            return Err(Error::ModelDecode("kind and hyperparameters disagree".into()));
        }
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(env.params.as_bytes())
            .map_err(|e| Error::ModelDecode(e.to_string()))?;
        let mut r = codec::Reader::new(&bytes);
        let params = match env.kind {
            ModelKind::Tree => ModelParams::Tree(Tree::read(&mut r, env.feature_dim)?),
            ModelKind::Gbm => ModelParams::Gbm(GbmModel::read(&mut r, env.feature_dim)?),
            ModelKind::Knn => ModelParams::Knn(KnnModel::read(&mut r)?),
            ModelKind::Mlp => ModelParams::Mlp(Mlp::read(&mut r)?),
            ModelKind::Svm => ModelParams::Svm(SvmModel::read(&mut r)?),
        };
        r.finish()?;
        Ok(Self {
            n_classes: env.n_classes,
            feature_dim: env.feature_dim,
            hp: env.hp,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::blobs;
    use super::*;

    fn small_hp(kind: ModelKind) -> Hyperparams {
        match kind {
            ModelKind::Gbm => Hyperparams::Gbm(GbmParams { rounds: 20, ..Default::default() }),
            ModelKind::Mlp => Hyperparams::Mlp(MlpParams {
                layers: 1,
                width: 16,
                learning_rate: 0.05,
                epochs: 20,
                batch: 16,
                ..Default::default()
            }),
            ModelKind::Svm => Hyperparams::Svm(SvmParams { c: 1.0, gamma: 0.5 }),
            k => k.default_hyperparams(),
        }
    }

    #[test]
    fn predict_is_argmax_of_scores_and_rows_normalise() {
        let (x, y) = blobs(3, 150, 3.0, 1);
        let (probe, _) = blobs(3, 1000, 5.0, 99);
        for kind in ModelKind::ALL {
            let m = train(&small_hp(kind), &x, &y, 3, 4).unwrap();
            let s = m.predict_scores(&probe).unwrap();
            let p = m.predict(&probe).unwrap();
            for i in 0..probe.rows() {
                assert_eq!(p[i], argmax(s.row(i)), "{kind}");
                if kind.is_probabilistic() {
                    assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6, "{kind}");
                }
            }
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let (x, y) = blobs(3, 90, 3.0, 2);
        let (probe, _) = blobs(3, 50, 4.0, 7);
        for kind in ModelKind::ALL {
            let m = train(&small_hp(kind), &x, &y, 3, 5).unwrap();
            let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back, m);
            let a = m.predict_scores(&probe).unwrap();
            let b = back.predict_scores(&probe).unwrap();
            let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b), "{kind}");
        }
    }

    #[test]
    fn corrupted_envelopes_are_rejected() {
        let (x, y) = blobs(3, 30, 3.0, 2);
        let m = train(&small_hp(ModelKind::Tree), &x, &y, 3, 5).unwrap();
        let json = m.to_json().unwrap();
        assert!(TrainedModel::from_json(&json.replace("\"version\": \"1\"", "\"version\": \"9\"")).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["params"] = serde_json::Value::String("AAAA".into());
        assert!(TrainedModel::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn dim_mismatch_is_an_error() {
        let (x, y) = blobs(3, 30, 3.0, 2);
        let m = train(&small_hp(ModelKind::Knn), &x, &y, 3, 5).unwrap();
        assert!(matches!(
            m.predict(&Matrix::zeros(2, 3)),
            Err(Error::DimMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn knn_k1_memorises_distinct_points() {
        let (x, y) = blobs(3, 120, 0.5, 3);
        let m = train(&Hyperparams::Knn(KnnParams { k: 1, ..Default::default() }), &x, &y, 3, 0).unwrap();
        assert_eq!(m.predict(&x).unwrap(), y);
    }

    #[test]
    fn svm_argmax_ignores_a_common_shift() {
        let (x, y) = blobs(3, 90, 2.0, 3);
        let (probe, _) = blobs(3, 200, 3.0, 8);
        let m = train(&small_hp(ModelKind::Svm), &x, &y, 3, 0).unwrap();
        let s = m.predict_scores(&probe).unwrap();
        for i in 0..probe.rows() {
            let shifted: Vec<f64> = s.row(i).iter().map(|v| v + 17.5).collect();
            assert_eq!(argmax(&shifted), argmax(s.row(i)));
        }
    }

    #[test]
    fn hyperparams_validate_and_serialise_with_kind_tag() {
        let hp = Hyperparams::Knn(KnnParams { k: 3, metric: Metric::Cosine, weighting: Weighting::InverseDistance });
        let s = serde_json::to_string(&hp).unwrap();
        assert!(s.contains("\"kind\":\"knn\"") && s.contains("inverse-distance"), "{s}");
        assert_eq!(serde_json::from_str::<Hyperparams>(&s).unwrap(), hp);
        assert!(Hyperparams::Gbm(GbmParams { subsample: 0.0, ..Default::default() }).validate().is_err());
        assert!(Hyperparams::Mlp(MlpParams { momentum: 1.0, ..Default::default() }).validate().is_err());
        assert_eq!("svm".parse::<ModelKind>().unwrap(), ModelKind::Svm);
        assert!("forest".parse::<ModelKind>().is_err());
    }
}
