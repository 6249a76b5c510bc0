//! Dataset ingestion from a class-per-directory tree, stratified splitting,
//! size standardization and geometric augmentation.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::ImageTensor;

/// The five tissue classes. The discriminant is the class id used in every
/// file format: `colon_aca=0, colon_n=1, lung_aca=2, lung_n=3, lung_scc=4`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    ColonAca = 0,
    ColonN = 1,
    LungAca = 2,
    LungN = 3,
    LungScc = 4,
}

impl ClassLabel {
    pub const COUNT: usize = 5;
    pub const ALL: [ClassLabel; 5] = [
        ClassLabel::ColonAca,
        ClassLabel::ColonN,
        ClassLabel::LungAca,
        ClassLabel::LungN,
        ClassLabel::LungScc,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::ColonAca => "colon_aca",
            ClassLabel::ColonN => "colon_n",
            ClassLabel::LungAca => "lung_aca",
            ClassLabel::LungN => "lung_n",
            ClassLabel::LungScc => "lung_scc",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    /// Case-insensitive.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|c| c.name() == lower)
            .ok_or_else(|| Error::UnknownClassDir(s.to_owned()))
    }
}

/// One image on disk. Pixels are decoded on demand with [`Sample::load`] so a
/// dataset of any size can be listed without holding images in memory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    /// Path relative to the dataset root, `/`-separated.
    pub id: String,
    pub label: ClassLabel,
    pub path: PathBuf,
}

impl Sample {
    pub fn load(&self) -> Result<ImageTensor> {
        ImageTensor::load(&self.path)
    }
}

/// Immutable list of samples sorted by id.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn from_samples(mut samples: Vec<Sample>) -> Result<Self> {
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = samples.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::invalid(format!("duplicate sample id `{}`", w[0].id)));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples
            .binary_search_by(|s| s.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.samples[i])
    }

    pub fn class_counts(&self) -> [usize; ClassLabel::COUNT] {
        let mut counts = [0; ClassLabel::COUNT];
        for s in &self.samples {
            counts[s.label.id()] += 1;
        }
        counts
    }
}

/// Controls what [`ingest`] does with files that fail to decode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DecodePolicy {
    /// Fail listing every undecodable file.
    #[default]
    Strict,
    /// Skip them with a warning.
    Lenient,
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<fs::DirEntry>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

/// Lists `root/<class>/*.{png,jpg,jpeg}`.
///
/// Every subdirectory of `root` must name one of the five classes
/// (case-insensitive). Decodability is checked by parsing each file's header.
pub fn ingest(root: &Path, policy: DecodePolicy) -> Result<Dataset> {
    let mut candidates = Vec::new();
    for entry in read_dir_sorted(root)? {
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if !path.is_dir() {
            if !name.starts_with('.') {
                log::warn!("ignoring non-directory entry `{name}` in dataset root");
            }
            continue;
        }
        let label: ClassLabel = name.parse()?;
        for file in read_dir_sorted(&path)? {
            let fpath = file.path();
            if fpath.is_file() && is_image_file(&fpath) {
                let id = format!("{}/{}", label.name(), file.file_name().to_string_lossy());
                candidates.push(Sample {
                    id,
                    label,
                    path: fpath,
                });
            }
        }
    }

    let checked: Vec<(Sample, bool)> = candidates
        .into_par_iter()
        .map(|s| {
            let ok = image::ImageReader::open(&s.path)
                .and_then(|r| r.with_guessed_format())
                .map(|r| r.into_dimensions().is_ok())
                .unwrap_or(false);
            (s, ok)
        })
        .collect();

    let bad: Vec<String> = checked
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(s, _)| s.path.display().to_string())
        .collect();
    if !bad.is_empty() {
        match policy {
            DecodePolicy::Strict => return Err(Error::Undecodable(bad)),
            DecodePolicy::Lenient => {
                for b in &bad {
                    log::warn!("skipping undecodable image {b}");
                }
            }
        }
    }
    Dataset::from_samples(checked.into_iter().filter(|(_, ok)| *ok).map(|(s, _)| s).collect())
}

/// Train / validation / test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios(pub f64, pub f64, pub f64);

impl SplitRatios {
    pub const DEFAULT: SplitRatios = SplitRatios(0.6, 0.2, 0.2);

    pub fn validate(&self) -> Result<()> {
        let SplitRatios(a, b, c) = *self;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || !(a + b + c - 1.0).abs().le(&1e-9) {
            return Err(Error::invalid(format!(
                "split ratios must be positive and sum to 1, got ({a}, {b}, {c})"
            )));
        }
        Ok(())
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl FromStr for SplitRatios {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("bad ratios `{s}`: {e}")))?;
        match parts[..] {
            [a, b, c] => {
                let r = SplitRatios(a, b, c);
                r.validate()?;
                Ok(r)
            }
            _ => Err(Error::invalid(format!("expected three ratios, got `{s}`"))),
        }
    }
}

/// Stratified split; serialized as the split manifest
/// `{seed, ratios, train, val, test}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

fn floor_eps(x: f64) -> f64 {
    (x + 1e-9).floor()
}

/// Per-class counts that are `floor(exact)` or `ceil(exact)` (never below
/// `min`), with extras going to the largest fractional remainders (ties to
/// the lowest class id) until the counts sum to `target`.
fn apportion(exact: &[f64], target: usize, min: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = exact.iter().map(|&v| (floor_eps(v) as usize).max(min)).collect();
    let mut remaining = target.saturating_sub(counts.iter().sum());
    let frac = |c: usize| (exact[c] - floor_eps(exact[c])).max(0.0);
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| frac(b).partial_cmp(&frac(a)).unwrap().then(a.cmp(&b)));
    for c in order {
        if remaining == 0 {
            break;
        }
        if (counts[c] as f64) < exact[c] - 1e-9 {
            counts[c] += 1;
            remaining -= 1;
        }
    }
    counts
}

/// Stratified split of `dataset`.
///
/// Each class's ids are shuffled by an independent stream of the generator
/// keyed by `seed` (stream = class id). Training counts per class are
/// `floor(n_c * r_train)` or one more (at least 1), apportioned so the global
/// validation and test sizes equal `round(N * r)`; each class's held-out
/// remainder is then divided between validation and test the same way.
pub fn split(dataset: &Dataset, ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    let mut by_class: Vec<Vec<&str>> = vec![Vec::new(); ClassLabel::COUNT];
    for s in dataset.samples() {
        by_class[s.label.id()].push(&s.id);
    }
    if let Some(c) = by_class.iter().position(|v| v.is_empty()) {
        return Err(Error::invalid(format!(
            "class `{}` has no samples",
            ClassLabel::ALL[c]
        )));
    }
    let n_total = dataset.len() as f64;
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();

    let global_val = (n_total * ratios.1).round() as usize;
    let global_test = (n_total * ratios.2).round() as usize;
    let global_train = dataset.len().saturating_sub(global_val + global_test);

    let exact_train: Vec<f64> = sizes.iter().map(|&n| n as f64 * ratios.0).collect();
    let train = apportion(&exact_train, global_train, 1);
    let held: Vec<usize> = sizes.iter().zip(&train).map(|(&n, &t)| n - t.min(n)).collect();
    let share = ratios.1 / (ratios.1 + ratios.2);
    let exact_val: Vec<f64> = held.iter().map(|&h| h as f64 * share).collect();
    let val = apportion(&exact_val, global_val, 0);
    let test: Vec<usize> = held.iter().zip(&val).map(|(&h, &v)| h - v).collect();

    let mut out = DatasetSplit {
        seed,
        ratios,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (c, ids) in by_class.iter().enumerate() {
        let mut ids: Vec<&str> = ids.clone();
        let mut rng = seed::stream_rng(seed, c as u64);
        ids.shuffle(&mut rng);
        let (n_val, n_test) = (val[c], test[c]);
        if n_val + n_test > ids.len() {
            return Err(Error::invalid(format!(
                "class `{}` too small for the requested ratios",
                ClassLabel::ALL[c]
            )));
        }
        out.val.extend(ids[..n_val].iter().map(|s| s.to_string()));
        out.test
            .extend(ids[n_val..n_val + n_test].iter().map(|s| s.to_string()));
        out.train
            .extend(ids[n_val + n_test..].iter().map(|s| s.to_string()));
    }
    out.train.sort();
    out.val.sort();
    out.test.sort();
    Ok(out)
}

/// How an image is brought to the working size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeMode {
    #[default]
    Resize,
    CenterCrop,
}

/// Brings `image` to `side × side` with bilinear resampling (half-pixel
/// centers, edge clamping).
pub fn standardize_size(image: &ImageTensor, side: usize) -> Result<ImageTensor> {
    standardize_size_with(image, side, SizeMode::Resize)
}

pub fn standardize_size_with(image: &ImageTensor, side: usize, mode: SizeMode) -> Result<ImageTensor> {
    if side == 0 {
        return Err(Error::invalid("target side must be positive"));
    }
    if image.height() == side && image.width() == side {
        return Ok(image.clone());
    }
    match mode {
        SizeMode::Resize => Ok(bilinear_resize(image, side, side)),
        SizeMode::CenterCrop => center_crop(image, side),
    }
}

fn center_crop(image: &ImageTensor, side: usize) -> Result<ImageTensor> {
    if image.height() < side || image.width() < side {
        return Err(Error::invalid(format!(
            "cannot center-crop {}x{} to {side}x{side}",
            image.height(),
            image.width()
        )));
    }
    let r0 = (image.height() - side) / 2;
    let c0 = (image.width() - side) / 2;
    let ch = image.channels();
    let mut data = Vec::with_capacity(side * side * ch);
    for r in 0..side {
        for c in 0..side {
            for k in 0..ch {
                data.push(image.get(r0 + r, c0 + c, k));
            }
        }
    }
    Ok(ImageTensor::from_parts_unchecked(side, side, ch, data))
}

/// Source coordinate and interpolation weight along one axis.
fn sample_axis(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let x = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let lo = x.floor() as usize;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, x - lo as f64)
}

pub(crate) fn bilinear_resize(image: &ImageTensor, out_h: usize, out_w: usize) -> ImageTensor {
    let ch = image.channels();
    let cols: Vec<_> = (0..out_w)
        .map(|c| sample_axis(c, image.width(), out_w))
        .collect();
    let mut data = Vec::with_capacity(out_h * out_w * ch);
    for r in 0..out_h {
        let (r0, r1, fy) = sample_axis(r, image.height(), out_h);
        for &(c0, c1, fx) in &cols {
            for k in 0..ch {
                let top = image.get(r0, c0, k) * (1.0 - fx) + image.get(r0, c1, k) * fx;
                let bot = image.get(r1, c0, k) * (1.0 - fx) + image.get(r1, c1, k) * fx;
                data.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    ImageTensor::from_parts_unchecked(out_h, out_w, ch, data)
}

/// A concrete geometric transform: `quarter_turns` clockwise rotations by
/// 90° followed by an integer shift of `(dx, dy)` pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augmentation {
    pub quarter_turns: u8,
    pub dx: i32,
    pub dy: i32,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        quarter_turns: 0,
        dx: 0,
        dy: 0,
    };
    pub const MAX_SHIFT: i32 = 3;

    /// Rotation uniform in {0, 90, 180, 270} degrees, shifts uniform in [-3, 3].
    pub fn draw(seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        Augmentation {
            quarter_turns: rng.random_range(0..4u8),
            dx: rng.random_range(-Self::MAX_SHIFT..=Self::MAX_SHIFT),
            dy: rng.random_range(-Self::MAX_SHIFT..=Self::MAX_SHIFT),
        }
    }

    pub fn apply(&self, image: &ImageTensor) -> Result<ImageTensor> {
        if !image.is_square() {
            return Err(Error::invalid(format!(
                "augmentation needs a square image, got {}x{}",
                image.height(),
                image.width()
            )));
        }
        let rotated = rotate_quarter_turns(image, self.quarter_turns % 4);
        Ok(translate(&rotated, self.dx, self.dy))
    }
}

/// Random rotation by a multiple of 90° then a shift in [-3, 3]² with edge
/// replication; deterministic per seed.
pub fn augment(image: &ImageTensor, seed: u64) -> Result<ImageTensor> {
    Augmentation::draw(seed).apply(image)
}

/// One clockwise quarter turn sends `(r, c)` of an `H × W` image to `(c, H-1-r)`.
pub fn rotate_quarter_turns(image: &ImageTensor, k: u8) -> ImageTensor {
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let (oh, ow) = if k % 2 == 1 { (w, h) } else { (h, w) };
    let mut data = vec![0.0; oh * ow * ch];
    for r in 0..h {
        for c in 0..w {
            let (nr, nc) = match k % 4 {
                0 => (r, c),
                1 => (c, h - 1 - r),
                2 => (h - 1 - r, w - 1 - c),
                _ => (w - 1 - c, r),
            };
            let dst = (nr * ow + nc) * ch;
            let src = (r * w + c) * ch;
            data[dst..dst + ch].copy_from_slice(&image.data()[src..src + ch]);
        }
    }
    ImageTensor::from_parts_unchecked(oh, ow, ch, data)
}

/// `out(r, c) = in(r - dy, c - dx)` with coordinates clamped to the frame.
pub fn translate(image: &ImageTensor, dx: i32, dy: i32) -> ImageTensor {
    if dx == 0 && dy == 0 {
        return image.clone();
    }
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let mut data = Vec::with_capacity(h * w * ch);
    for r in 0..h {
        let sr = (r as i64 - i64::from(dy)).clamp(0, h as i64 - 1) as usize;
        for c in 0..w {
            let sc = (c as i64 - i64::from(dx)).clamp(0, w as i64 - 1) as usize;
            let src = (sr * w + sc) * ch;
            data.extend_from_slice(&image.data()[src..src + ch]);
        }
    }
    ImageTensor::from_parts_unchecked(h, w, ch, data)
}
