//! Experiment orchestration over a run directory.
//!
//! Every stage reads its inputs from and writes its outputs to the run
//! directory, so the stages can be driven one at a time or chained by
//! [`run_experiment`]:
//!
//! ```text
//! dataset.json  split.json
//! features/<kind>/{train,val,test}.hfv  features/<kind>/standardizer.json
//! hyperparams/<kind>/<model>.json  histories/<kind>/<model>.jsonl
//! models/<kind>/<model>.json  roc/<kind>/roc_<model>_<class>.csv
//! report.csv  sweep.csv  manifest.json
//! ```

pub mod config;
pub mod toy;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{self, Hyperparams, ModelKind, TrainedModel};
use crate::corpus::{self, augment, standardize_size_with, ClassLabel, Dataset, DatasetSplit, DecodePolicy, Sample, SizeMode};
use crate::deepfeat::{self, load_backend, read_feature_store, write_feature_store, BackendHandle, Standardizer};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix};
use crate::hog::hog;
use crate::metrics::{self, pct, ReportRow};
use crate::noise::{inject_noise, NoiseConfig};
use crate::seed::{derive_index, derive_seed};
use crate::tensor::ImageTensor;
use crate::tune::{self, TrialHistory};

pub use config::ExperimentConfig;

/// Sweep method name for the backend's own classification head.
pub const BASELINE_METHOD: &str = "backend-as-classifier";
/// Model column used for baseline rows.
pub const BASELINE_MODEL: &str = "backend";

pub const SWEEP_HEADER: &str = "method,model,snr_db,accuracy_pct";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Part {
    Train,
    Val,
    Test,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Train, Part::Val, Part::Test];

    pub fn name(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
            Part::Test => "test",
        }
    }

    fn ids(self, split: &DatasetSplit) -> &[String] {
        match self {
            Part::Train => &split.train,
            Part::Val => &split.val,
            Part::Test => &split.test,
        }
    }
}

/// Paths inside a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.json")
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }

    pub fn features(&self, kind: FeatureKind, part: Part) -> PathBuf {
        self.root.join("features").join(kind.name()).join(format!("{}.hfv", part.name()))
    }

    pub fn standardizer(&self, kind: FeatureKind) -> PathBuf {
        self.root.join("features").join(kind.name()).join("standardizer.json")
    }

    pub fn hyperparams(&self, kind: FeatureKind, model: ModelKind) -> PathBuf {
        self.root.join("hyperparams").join(kind.name()).join(format!("{model}.json"))
    }

    pub fn history(&self, kind: FeatureKind, model: ModelKind) -> PathBuf {
        self.root.join("histories").join(kind.name()).join(format!("{model}.jsonl"))
    }

    pub fn model(&self, kind: FeatureKind, model: ModelKind) -> PathBuf {
        self.root.join("models").join(kind.name()).join(format!("{model}.json"))
    }

    pub fn roc_dir(&self, kind: FeatureKind) -> PathBuf {
        self.root.join("roc").join(kind.name())
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.csv")
    }

    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep.csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn partial(&self) -> PathBuf {
        self.root.join(".partial")
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        None => Ok(()),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

fn pair_tag(kind: FeatureKind, model: ModelKind) -> String {
    format!("{kind}/{model}")
}

// ---------------------------------------------------------------- ingest/split

pub fn ingest_stage(cfg: &ExperimentConfig, dir: &RunDir) -> Result<Dataset> {
    let policy = if cfg.image.lenient {
        DecodePolicy::Lenient
    } else {
        DecodePolicy::Strict
    };
    let ds = corpus::ingest(&cfg.dataset, policy)?;
    log::info!("ingested {} samples {:?}", ds.len(), ds.class_counts());
    write_json(&dir.dataset(), &ds.samples())?;
    Ok(ds)
}

pub fn load_dataset(dir: &RunDir) -> Result<Dataset> {
    Dataset::from_samples(read_json::<Vec<Sample>>(&dir.dataset())?)
}

pub fn split_stage(cfg: &ExperimentConfig, dir: &RunDir) -> Result<DatasetSplit> {
    let ds = load_dataset(dir)?;
    let s = corpus::split(&ds, cfg.split.ratios, cfg.split.seed)?;
    let (a, b, c) = s.sizes();
    log::info!("split {a}/{b}/{c}");
    write_file(&dir.split(), serde_json::to_string_pretty(&s)? + "\n")?;
    Ok(s)
}

// -------------------------------------------------------------------- features

/// How images of one split are turned into variants before extraction.
#[derive(Clone, Copy, Debug, Default)]
pub struct Variants {
    /// `(copies, seed)`: originals plus `copies` augmented versions.
    pub augment: Option<(usize, u64)>,
    /// `(snr_db, master seed)`: per-variant seeded noise.
    pub noise: Option<(f64, u64)>,
}

/// Output of one extraction pass over a list of samples.
#[derive(Debug, Default)]
pub struct Extracted {
    pub matrices: BTreeMap<FeatureKind, FeatureMatrix>,
    /// Backend head labels per row, when requested and available.
    pub baseline: Option<Vec<usize>>,
    pub truth: Vec<usize>,
}

struct Row {
    id: String,
    label: ClassLabel,
    hog: Option<Vec<f32>>,
    deep: Option<Vec<f32>>,
    class: Option<usize>,
}

/// Extracts the requested kinds for `ids`, one image in memory per worker.
pub fn extract_samples(
    cfg: &ExperimentConfig,
    backend: Option<&BackendHandle>,
    ds: &Dataset,
    ids: &[String],
    kinds: &[FeatureKind],
    variants: Variants,
    with_baseline: bool,
) -> Result<Extracted> {
    let want_hog = kinds.iter().any(|k| matches!(k, FeatureKind::Hog | FeatureKind::Fused));
    let want_deep = kinds.iter().any(|k| matches!(k, FeatureKind::Deep | FeatureKind::Fused));
    let with_baseline = with_baseline && backend.is_some_and(|b| b.class_outputs().is_some());
    if (want_deep || with_baseline) && backend.is_none() {
        return Err(Error::Config("deep features need a backend model".into()));
    }

    let per_sample = |id: &String| -> Result<Vec<Row>> {
        let sample = ds
            .get(id)
            .ok_or_else(|| Error::invalid(format!("split references unknown sample `{id}`")))?;
        let base = standardize_size_with(&sample.load()?, cfg.image.side, cfg.image.mode)?;
        let mut variants_of: Vec<(String, ImageTensor)> = Vec::new();
        if let Some((copies, seed)) = variants.augment {
            let s0 = derive_seed(seed, id);
            for j in 1..=copies {
                variants_of.push((format!("{id}#aug{j}"), augment(&base, derive_index(s0, j as u64))?));
            }
        }
        variants_of.insert(0, (id.clone(), base));
        variants_of
            .into_iter()
            .map(|(vid, img)| {
                let img = match variants.noise {
                    Some((db, seed)) => inject_noise(&img, &NoiseConfig::for_sample(db, seed, &vid))?,
                    None => img,
                };
                let hog_row = if want_hog {
                    Some(hog(&img, &cfg.hog).map_err(|e| Error::invalid(format!("hog for `{vid}`: {e}")))?.values)
                } else {
                    None
                };
                let (deep_row, class) = match backend.filter(|_| want_deep || with_baseline) {
                    Some(b) => {
                        let side = b.input_side();
                        let small = if img.height() == side && img.width() == side {
                            img
                        } else {
                            standardize_size_with(&img, side, SizeMode::Resize)?
                        };
                        if with_baseline {
                            let (f, c) = b.features_and_class(&vid, &small)?;
                            (Some(f), c)
                        } else {
                            (Some(b.features(&vid, &small)?), None)
                        }
                    }
                    None => (None, None),
                };
                Ok(Row {
                    id: vid,
                    label: sample.label,
                    hog: hog_row,
                    deep: deep_row.filter(|_| want_deep),
                    class,
                })
            })
            .collect()
    };
    let rows: Vec<Row> = ids
        .par_iter()
        .map(per_sample)
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut out = Extracted {
        truth: rows.iter().map(|r| r.label.id()).collect(),
        ..Default::default()
    };
    if with_baseline {
        out.baseline = rows.iter().map(|r| r.class).collect();
    }
    let build = |kind: FeatureKind, pick: &dyn Fn(&Row) -> &[f32]| -> Result<FeatureMatrix> {
        let dim = rows.first().map(|r| pick(r).len()).unwrap_or(0);
        let mut m = FeatureMatrix::empty(kind, dim);
        for r in &rows {
            m.push_row(r.id.clone(), r.label, pick(r))?;
        }
        Ok(m)
    };
    let hog_m = if want_hog {
        Some(build(FeatureKind::Hog, &|r| r.hog.as_deref().unwrap_or_default())?)
    } else {
        None
    };
    let deep_m = if want_deep {
        Some(build(FeatureKind::Deep, &|r| r.deep.as_deref().unwrap_or_default())?)
    } else {
        None
    };
    for &kind in kinds {
        let m = match kind {
            FeatureKind::Hog => hog_m.clone().expect("computed"),
            FeatureKind::Deep => deep_m.clone().expect("computed"),
            FeatureKind::Fused => deepfeat::fuse(hog_m.as_ref().expect("computed"), deep_m.as_ref().expect("computed"))?,
        };
        out.matrices.insert(kind, m);
    }
    Ok(out)
}

fn open_backend(cfg: &ExperimentConfig) -> Result<BackendHandle> {
    load_backend(&cfg.backend.model, cfg.backend.output_name.as_deref())
}

/// Extracts `kinds` for all three parts; training images are augmented.
pub fn features_stage(cfg: &ExperimentConfig, dir: &RunDir, kinds: &[FeatureKind]) -> Result<()> {
    let ds = load_dataset(dir)?;
    let split = DatasetSplit::load(&dir.split())?;
    let needs_backend = kinds.iter().any(|k| *k != FeatureKind::Hog);
    let backend = if needs_backend { Some(open_backend(cfg)?) } else { None };
    for part in Part::ALL {
        let variants = Variants {
            augment: (part == Part::Train && cfg.augment.copies > 0).then_some((cfg.augment.copies, cfg.augment.seed)),
            noise: None,
        };
        let ex = extract_samples(cfg, backend.as_ref(), &ds, part.ids(&split), kinds, variants, false)?;
        for (kind, m) in &ex.matrices {
            let path = dir.features(*kind, part);
            ensure_parent(&path)?;
            write_feature_store(&path, m)?;
            log::info!("{kind} {}: {} rows × {}", part.name(), m.rows(), m.dim());
        }
    }
    Ok(())
}

/// Builds fused stores from existing HOG and deep stores.
pub fn fuse_stage(dir: &RunDir) -> Result<()> {
    for part in Part::ALL {
        let h = read_feature_store(&dir.features(FeatureKind::Hog, part))?;
        let d = read_feature_store(&dir.features(FeatureKind::Deep, part))?;
        let path = dir.features(FeatureKind::Fused, part);
        ensure_parent(&path)?;
        write_feature_store(&path, &deepfeat::fuse(&h, &d)?)?;
    }
    Ok(())
}

fn load_part(dir: &RunDir, kind: FeatureKind, part: Part) -> Result<FeatureMatrix> {
    let m = read_feature_store(&dir.features(kind, part))?;
    if m.kind() != kind {
        return Err(Error::invalid(format!(
            "{} holds {} features, expected {kind}",
            dir.features(kind, part).display(),
            m.kind()
        )));
    }
    Ok(m)
}

fn fit_and_save_standardizer(dir: &RunDir, kind: FeatureKind, train: &FeatureMatrix) -> Result<Standardizer> {
    let s = Standardizer::fit(train)?;
    write_json(&dir.standardizer(kind), &s)?;
    Ok(s)
}

// ------------------------------------------------------------------ tune/train

/// Tunes (or fixes) the hyperparameters of one model on standardized data.
fn choose_hyperparams(
    cfg: &ExperimentConfig,
    kind: FeatureKind,
    model: ModelKind,
    train: &FeatureMatrix,
    val: &FeatureMatrix,
) -> Result<(Hyperparams, Option<TrialHistory>)> {
    if !cfg.tune.enabled {
        return Ok((cfg.hyperparams_for(model), None));
    }
    let space = cfg.tune.space(model, train.rows());
    let tc = cfg.tune.config(derive_seed(cfg.tune.seed, &pair_tag(kind, model)));
    let (xt, yt) = (train.to_matrix(), train.label_ids());
    let (xv, yv) = (val.to_matrix(), val.label_ids());
    let (hp, hist) = tune::tune(&space, (&xt, &yt), (&xv, &yv), ClassLabel::COUNT, &tc)?;
    log::info!(
        "{} tuned: best validation {:.4} over {} trials",
        pair_tag(kind, model),
        hist.best_value().unwrap_or(f64::NAN),
        hist.trials.len()
    );
    Ok((hp, Some(hist)))
}

fn fit_model(cfg: &ExperimentConfig, kind: FeatureKind, hp: &Hyperparams, train: &FeatureMatrix) -> Result<TrainedModel> {
    let seed = derive_seed(cfg.train_seed, &pair_tag(kind, hp.kind()));
    classify::train_on(hp, train, ClassLabel::COUNT, seed)
}

pub fn tune_stage(cfg: &ExperimentConfig, dir: &RunDir) -> Result<()> {
    for &kind in &cfg.kinds {
        let raw = load_part(dir, kind, Part::Train)?;
        let st = fit_and_save_standardizer(dir, kind, &raw)?;
        let train = st.apply(&raw)?;
        let val = st.apply(&load_part(dir, kind, Part::Val)?)?;
        for &model in &cfg.models {
            let (hp, hist) = choose_hyperparams(cfg, kind, model, &train, &val)?;
            write_json(&dir.hyperparams(kind, model), &hp)?;
            if let Some(h) = hist {
                ensure_parent(&dir.history(kind, model))?;
                h.save(&dir.history(kind, model))?;
            }
        }
    }
    Ok(())
}

pub fn train_stage(cfg: &ExperimentConfig, dir: &RunDir) -> Result<()> {
    for &kind in &cfg.kinds {
        let raw = load_part(dir, kind, Part::Train)?;
        let train = fit_and_save_standardizer(dir, kind, &raw)?.apply(&raw)?;
        for &model in &cfg.models {
            let hp_path = dir.hyperparams(kind, model);
            let hp = if hp_path.is_file() {
                read_json(&hp_path)?
            } else {
                log::warn!("{} missing; training {model} with configured hyperparameters", hp_path.display());
                cfg.hyperparams_for(model)
            };
            let m = fit_model(cfg, kind, &hp, &train)?;
            ensure_parent(&dir.model(kind, model))?;
            m.save(&dir.model(kind, model))?;
        }
    }
    Ok(())
}

// ------------------------------------------------------------------ evaluation

fn merge_report(dir: &RunDir, rows: &[ReportRow], noisy: bool) -> Result<()> {
    let path = dir.report();
    let is_noisy = |line: &str| line.split(',').nth(2).is_some_and(|v| !v.is_empty());
    let kept: Vec<String> = match fs::read_to_string(&path) {
        Ok(text) => text.lines().skip(1).filter(|l| is_noisy(l) != noisy).map(str::to_owned).collect(),
        Err(_) => Vec::new(),
    };
    let fresh: Vec<String> = metrics::report_csv(rows).lines().skip(1).map(str::to_owned).collect();
    let (clean, noise) = if noisy { (kept, fresh) } else { (fresh, kept) };
    let mut text = String::from(metrics::REPORT_HEADER);
    text.push('\n');
    for l in clean.iter().chain(&noise) {
        text.push_str(l);
        text.push('\n');
    }
    write_file(&path, text)
}

fn write_rocs(cfg: &ExperimentConfig, dir: &RunDir, kind: FeatureKind, model: ModelKind, rep: &metrics::EvalReport) -> Result<()> {
    for (c, roc) in rep.roc.iter().enumerate() {
        let Some(points) = roc else { continue };
        let class = ClassLabel::ALL[c].name();
        let base = dir.roc_dir(kind).join(format!("roc_{model}_{class}"));
        write_file(&base.with_extension("csv"), metrics::roc_csv(points))?;
        if cfg.svg {
            let title = format!("{model} ({kind}) {class}");
            write_file(&base.with_extension("svg"), metrics::roc_svg(points, &title))?;
        }
    }
    Ok(())
}

/// Clean test-set evaluation of every stored model; rewrites the clean rows
/// of `report.csv`.
pub fn eval_stage(cfg: &ExperimentConfig, dir: &RunDir) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for &kind in &cfg.kinds {
        let st: Standardizer = read_json(&dir.standardizer(kind))?;
        let test = st.apply(&load_part(dir, kind, Part::Test)?)?;
        let (x, y) = (test.to_matrix(), test.label_ids());
        for &model in &cfg.models {
            let m = TrainedModel::load(&dir.model(kind, model))?;
            let rep = metrics::evaluate(&m, &x, &y)?;
            write_rocs(cfg, dir, kind, model, &rep)?;
            rows.push(ReportRow {
                model: model.name().into(),
                feature_kind: kind.name().into(),
                snr_db: None,
                auc: rep.auc_macro,
                accuracy: rep.accuracy,
            });
        }
    }
    merge_report(dir, &rows, false)?;
    Ok(rows)
}

// ----------------------------------------------------------------------- sweep

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub model: String,
    pub snr_db: f64,
    pub accuracy: f64,
}

/// Sorted by method, model, then descending SNR.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut rows: Vec<&SweepRow> = rows.iter().collect();
    rows.sort_by(|a, b| {
        (&a.method, &a.model)
            .cmp(&(&b.method, &b.model))
            .then(b.snr_db.total_cmp(&a.snr_db))
    });
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.method, r.model, r.snr_db, pct(r.accuracy));
    }
    s
}

#[derive(Debug, Default)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub report: Vec<ReportRow>,
}

/// Evaluates at every SNR level on noisy test images. By default the stored
/// clean-trained models are reused; with `retune_per_level` each level tunes
/// and trains on noisy training and validation images instead.
pub fn sweep_stage(cfg: &ExperimentConfig, dir: &RunDir, levels: &[f64]) -> Result<SweepOutcome> {
    if levels.is_empty() {
        return Err(Error::invalid("noise sweep needs at least one SNR level"));
    }
    let ds = load_dataset(dir)?;
    let split = DatasetSplit::load(&dir.split())?;
    let backend = if cfg.needs_backend() || cfg.backend.model.is_file() {
        Some(open_backend(cfg)?)
    } else {
        None
    };

    let mut clean: BTreeMap<FeatureKind, (Standardizer, Vec<(ModelKind, TrainedModel)>)> = BTreeMap::new();
    if !cfg.retune_per_level {
        for &kind in &cfg.kinds {
            let st: Standardizer = read_json(&dir.standardizer(kind))?;
            let models = cfg
                .models
                .iter()
                .map(|&m| Ok((m, TrainedModel::load(&dir.model(kind, m))?)))
                .collect::<Result<Vec<_>>>()?;
            clean.insert(kind, (st, models));
        }
    }

    let mut out = SweepOutcome::default();
    for &db in levels {
        let noisy = Variants {
            augment: None,
            noise: Some((db, cfg.snr.seed)),
        };
        let test = extract_samples(cfg, backend.as_ref(), &ds, &split.test, &cfg.kinds, noisy, true)?;
        if let Some(pred) = &test.baseline {
            out.rows.push(SweepRow {
                method: BASELINE_METHOD.into(),
                model: BASELINE_MODEL.into(),
                snr_db: db,
                accuracy: metrics::accuracy(pred, &test.truth)?,
            });
        }
        let retuned = if cfg.retune_per_level {
            Some(retune_at_level(cfg, dir, backend.as_ref(), &ds, &split, db)?)
        } else {
            None
        };
        for &kind in &cfg.kinds {
            let (st, models) = match &retuned {
                Some(r) => &r[&kind],
                None => &clean[&kind],
            };
            let x = st.apply(&test.matrices[&kind])?.to_matrix();
            for (model, m) in models {
                let rep = metrics::evaluate(m, &x, &test.truth)?;
                out.rows.push(SweepRow {
                    method: kind.name().into(),
                    model: model.name().into(),
                    snr_db: db,
                    accuracy: rep.accuracy,
                });
                out.report.push(ReportRow {
                    model: model.name().into(),
                    feature_kind: kind.name().into(),
                    snr_db: Some(db),
                    auc: rep.auc_macro,
                    accuracy: rep.accuracy,
                });
            }
        }
        log::info!("swept {db} dB");
    }
    out.report.sort_by(|a, b| {
        (&a.feature_kind, &a.model)
            .cmp(&(&b.feature_kind, &b.model))
            .then(b.snr_db.unwrap_or(0.0).total_cmp(&a.snr_db.unwrap_or(0.0)))
    });
    write_file(&dir.sweep(), sweep_csv(&out.rows))?;
    merge_report(dir, &out.report, true)?;
    Ok(out)
}

type LevelModels = BTreeMap<FeatureKind, (Standardizer, Vec<(ModelKind, TrainedModel)>)>;

fn retune_at_level(
    cfg: &ExperimentConfig,
    dir: &RunDir,
    backend: Option<&BackendHandle>,
    ds: &Dataset,
    split: &DatasetSplit,
    db: f64,
) -> Result<LevelModels> {
    let noise = Some((db, cfg.snr.seed));
    let train_variants = Variants {
        augment: (cfg.augment.copies > 0).then_some((cfg.augment.copies, cfg.augment.seed)),
        noise,
    };
    let train = extract_samples(cfg, backend, ds, &split.train, &cfg.kinds, train_variants, false)?;
    let val = extract_samples(cfg, backend, ds, &split.val, &cfg.kinds, Variants { augment: None, noise }, false)?;
    let mut out = LevelModels::new();
    for &kind in &cfg.kinds {
        let st = Standardizer::fit(&train.matrices[&kind])?;
        let t = st.apply(&train.matrices[&kind])?;
        let v = st.apply(&val.matrices[&kind])?;
        let mut models = Vec::new();
        for &model in &cfg.models {
            let (hp, hist) = choose_hyperparams(cfg, kind, model, &t, &v)?;
            if let Some(h) = hist {
                let p = dir
                    .root()
                    .join("histories")
                    .join(format!("snr_{db}"))
                    .join(kind.name())
                    .join(format!("{model}.jsonl"));
                ensure_parent(&p)?;
                h.save(&p)?;
            }
            models.push((model, fit_model(cfg, kind, &hp, &t)?));
        }
        out.insert(kind, (st, models));
    }
    Ok(out)
}

// -------------------------------------------------------------------- manifest

/// Everything needed to re-run an experiment and check its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, u64>,
    /// `clean` (models trained once on clean data) or `retuned-per-level`.
    pub training: String,
    /// sha256 of every input file.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of every output file, keyed by path relative to the run dir.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

fn list_files(root: &Path, rel: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let here = root.join(rel);
    let mut entries: Vec<_> = fs::read_dir(&here)
        .map_err(|e| Error::io(&here, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(&here, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let r = rel.join(e.file_name());
        if e.path().is_dir() {
            list_files(root, &r, out)?;
        } else {
            out.push(r);
        }
    }
    Ok(())
}

fn rel_key(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn build_manifest(cfg: &ExperimentConfig, dir: &RunDir) -> Result<Manifest> {
    let ds = load_dataset(dir)?;
    let mut inputs: BTreeMap<String, String> = ds
        .samples()
        .par_iter()
        .map(|s| Ok((format!("dataset/{}", s.id), sha256_file(&s.path)?)))
        .collect::<Result<_>>()?;
    if cfg.backend.model.is_file() {
        inputs.insert("backend/model".into(), sha256_file(&cfg.backend.model)?);
        let side = deepfeat::BackendMeta::sidecar_path(&cfg.backend.model);
        if side.is_file() {
            inputs.insert("backend/sidecar".into(), sha256_file(&side)?);
        }
    }
    let mut files = Vec::new();
    list_files(dir.root(), Path::new(""), &mut files)?;
    let outputs = files
        .par_iter()
        .filter(|p| !matches!(rel_key(p).as_str(), "manifest.json" | ".partial"))
        .map(|p| Ok((rel_key(p), sha256_file(&dir.root().join(p))?)))
        .collect::<Result<_>>()?;
    let seeds = BTreeMap::from([
        ("split".to_owned(), cfg.split.seed),
        ("augment".to_owned(), cfg.augment.seed),
        ("tune".to_owned(), cfg.tune.seed),
        ("train".to_owned(), cfg.train_seed),
        ("snr".to_owned(), cfg.snr.seed),
    ]);
    Ok(Manifest {
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        seeds,
        training: if cfg.retune_per_level { "retuned-per-level" } else { "clean" }.into(),
        inputs,
        outputs,
    })
}

// ------------------------------------------------------------------ end to end

#[derive(Debug, Default)]
pub struct RunSummary {
    pub report: Vec<ReportRow>,
    pub sweep: Vec<SweepRow>,
}

/// Runs every stage into `cfg.output`. A `.partial` marker exists while the
/// run is in progress and stays behind, holding the error, if it fails.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.check_inputs()?;
    let dir = RunDir::new(&cfg.output);
    fs::create_dir_all(dir.root()).map_err(|e| Error::io(dir.root(), e))?;
    write_file(&dir.partial(), "running\n")?;
    match run_stages(cfg, &dir) {
        Ok(summary) => {
            fs::remove_file(dir.partial()).map_err(|e| Error::io(&dir.partial(), e))?;
            Ok(summary)
        }
        Err(e) => {
            let _ = fs::write(dir.partial(), format!("{e}\n"));
            Err(e)
        }
    }
}

fn run_stages(cfg: &ExperimentConfig, dir: &RunDir) -> Result<RunSummary> {
    ingest_stage(cfg, dir).map_err(|e| e.in_stage("ingest"))?;
    split_stage(cfg, dir).map_err(|e| e.in_stage("split"))?;
    features_stage(cfg, dir, &cfg.kinds).map_err(|e| e.in_stage("features"))?;
    tune_stage(cfg, dir).map_err(|e| e.in_stage("tune"))?;
    train_stage(cfg, dir).map_err(|e| e.in_stage("train"))?;
    let mut report = eval_stage(cfg, dir).map_err(|e| e.in_stage("eval"))?;
    let mut sweep = Vec::new();
    if !cfg.snr.levels.is_empty() {
        let s = sweep_stage(cfg, dir, &cfg.snr.levels).map_err(|e| e.in_stage("sweep"))?;
        report.extend(s.report);
        sweep = s.rows;
    }
    let manifest = build_manifest(cfg, dir).map_err(|e| e.in_stage("manifest"))?;
    write_json(&dir.manifest(), &manifest)?;
    Ok(RunSummary { report, sweep })
}

/// A config suited to the toy corpus: small images, a small tuning budget
/// and narrowed spaces so a full run takes seconds.
pub fn toy_config(dataset: &Path, backend: &Path, output: &Path) -> ExperimentConfig {
    use crate::tune::{Dim, DimType};
    let mut cfg = ExperimentConfig {
        dataset: dataset.to_path_buf(),
        output: output.to_path_buf(),
        ..Default::default()
    };
    cfg.image.side = 256;
    cfg.backend.model = backend.to_path_buf();
    cfg.tune.budget = 8;
    cfg.tune.n_init = 4;
    cfg.tune.candidates = 256;
    cfg.tune.refine_steps = 16;
    let int = |name: &str, low, high| Dim {
        name: name.into(),
        ty: DimType::Integer { low, high },
    };
    let log = |name: &str, low, high| Dim {
        name: name.into(),
        ty: DimType::LogReal { low, high },
    };
    cfg.tune.spaces.insert(
        ModelKind::Gbm,
        vec![int("rounds", 10, 60), log("learning_rate", 0.05, 0.5), int("max_depth", 1, 3)],
    );
    cfg.tune.spaces.insert(
        ModelKind::Mlp,
        vec![int("layers", 1, 2), int("width", 8, 64), log("learning_rate", 1e-3, 1e-1), int("epochs", 10, 40)],
    );
    cfg
}
