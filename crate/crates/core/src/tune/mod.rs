//! Bayesian optimization of classifier hyperparameters: a Gaussian-process
//! surrogate with expected improvement over the unit cube.

pub mod gp;
pub mod space;

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classify::{self, Hyperparams, ModelKind};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

pub use gp::{expected_improvement, gp_fit, GpModel};
pub use space::{Dim, DimType, HyperparamSpace};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Validation accuracy.
    #[default]
    Accuracy,
    /// Negated validation log-loss (probabilistic models only).
    NegLogLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub budget: usize,
    pub n_init: usize,
    pub candidates: usize,
    pub refine_steps: usize,
    pub seed: u64,
    pub objective: Objective,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            budget: 30,
            n_init: 10,
            candidates: 1024,
            refine_steps: 64,
            seed: 0,
            objective: Objective::Accuracy,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 || self.budget < self.n_init {
            return Err(Error::Config(format!(
                "tuning budget {} must be at least n_init {} (and n_init ≥ 1)",
                self.budget, self.n_init
            )));
        }
        if self.candidates == 0 {
            return Err(Error::Config("tuning needs at least one candidate".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub point: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hp: Option<Hyperparams>,
    /// `None` for a failed evaluation (treated as −∞).
    pub value: Option<f64>,
    pub wall_time: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl Trial {
    pub fn score(&self) -> f64 {
        self.value.unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialHistory {
    pub trials: Vec<Trial>,
}

impl TrialHistory {
    /// Index of the first trial attaining the best value.
    pub fn incumbent(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, t) in self.trials.iter().enumerate() {
            if t.value.is_some() && best.is_none_or(|b| t.score() > self.trials[b].score()) {
                best = Some(i);
            }
        }
        best
    }

    pub fn best_value(&self) -> Option<f64> {
        self.incumbent().map(|i| self.trials[i].score())
    }

    /// Best value seen after each trial.
    pub fn incumbent_curve(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.trials
            .iter()
            .map(|t| {
                best = best.max(t.score());
                best
            })
            .collect()
    }

    /// One JSON object per line.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut s = String::new();
        for t in &self.trials {
            s.push_str(&serde_json::to_string(t)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_json_lines(s: &str) -> Result<Self> {
        let trials = s
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { trials })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_json_lines()?.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Halton points `1..=n` with seeded digit permutations (zero fixed) per
/// dimension.
pub fn scrambled_halton(n: usize, d: usize, seed_: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(seed_);
    let perms: Vec<Vec<u64>> = (0..d)
        .map(|j| {
            let b = PRIMES[j % PRIMES.len()];
            let mut p: Vec<u64> = (1..b).collect();
            rand::seq::SliceRandom::shuffle(p.as_mut_slice(), &mut rng);
            p.insert(0, 0);
            p
        })
        .collect();
    (1..=n as u64)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let b = PRIMES[j % PRIMES.len()];
                    let (mut k, mut f, mut x) = (i, 1.0 / b as f64, 0.0);
                    while k > 0 {
                        x += f * perms[j][(k % b) as usize] as f64;
                        k /= b;
                        f /= b as f64;
                    }
                    x
                })
                .collect()
        })
        .collect()
}

/// Maximizes `objective` over `[0, 1]^d`. Errors from the objective are
/// recorded as failed trials.
pub fn optimize<F>(d: usize, cfg: &TuneConfig, mut objective: F) -> Result<TrialHistory>
where
    F: FnMut(&[f64]) -> Result<(f64, Option<Hyperparams>)>,
{
    cfg.validate()?;
    let mut hist = TrialHistory::default();
    let mut evaluate = |point: Vec<f64>, hist: &mut TrialHistory| {
        let t0 = Instant::now();
        let out = objective(&point);
        let wall_time = t0.elapsed().as_secs_f64();
        let trial = match out {
            Ok((v, hp)) if v.is_finite() => Trial {
                point,
                hp,
                value: Some(v),
                wall_time,
                error: None,
            },
            Ok((v, hp)) => Trial {
                point,
                hp,
                value: None,
                wall_time,
                error: Some(format!("objective returned {v}")),
            },
            Err(e) => {
                log::warn!("trial {} failed: {e}", hist.trials.len());
                Trial {
                    point,
                    hp: None,
                    value: None,
                    wall_time,
                    error: Some(e.to_string()),
                }
            }
        };
        hist.trials.push(trial);
    };

    for p in scrambled_halton(cfg.n_init, d, seed::derive_seed(cfg.seed, "halton")) {
        evaluate(p, &mut hist);
    }
    for it in cfg.n_init..cfg.budget {
        let mut rng = seed::stream_rng(seed::derive_seed(cfg.seed, "acquisition"), it as u64);
        let next = propose(&hist, d, cfg, &mut rng)?;
        evaluate(next, &mut hist);
    }
    if hist.incumbent().is_none() {
        return Err(Error::AllTrialsFailed(hist.trials.len()));
    }
    Ok(hist)
}

fn propose(hist: &TrialHistory, d: usize, cfg: &TuneConfig, rng: &mut seed::Rng) -> Result<Vec<f64>> {
    let ok: Vec<&Trial> = hist.trials.iter().filter(|t| t.value.is_some()).collect();
    if ok.len() < 2 {
        return Ok((0..d).map(|_| rng.random::<f64>()).collect());
    }
    let pts: Vec<Vec<f64>> = ok.iter().map(|t| t.point.clone()).collect();
    let vals: Vec<f64> = ok.iter().map(|t| t.score()).collect();
    let model = match gp::gp_fit(&pts, &vals) {
        Ok(m) => m,
        Err(e) => {
            log::warn!("surrogate fit failed ({e}); sampling at random");
            return Ok((0..d).map(|_| rng.random::<f64>()).collect());
        }
    };
    let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ei = |x: &[f64]| {
        let (m, s) = model.predict(x);
        expected_improvement(m, s, best)
    };
    let mut top: Vec<f64> = Vec::new();
    let mut top_ei = f64::NEG_INFINITY;
    for _ in 0..cfg.candidates {
        let c: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let v = ei(&c);
        if v > top_ei {
            top_ei = v;
            top = c;
        }
    }
    // local refinement: shrinking Gaussian steps around the best candidate
    let mut radius = 0.1;
    for step in 0..cfg.refine_steps {
        let normal = Normal::new(0.0, radius).expect("positive radius");
        let c: Vec<f64> = top
            .iter()
            .map(|&x| (x + normal.sample(rng)).clamp(0.0, 1.0))
            .collect();
        let v = ei(&c);
        if v > top_ei {
            top_ei = v;
            top = c;
        }
        if (step + 1) % 16 == 0 {
            radius *= 0.5;
        }
    }
    Ok(top)
}

/// Tunes `space.kind` on `(x_train, y_train)`, scoring on the validation
/// rows. Every trial trains with the same derived seed.
pub fn tune(
    space: &HyperparamSpace,
    train: (&Matrix, &[usize]),
    val: (&Matrix, &[usize]),
    n_classes: usize,
    cfg: &TuneConfig,
) -> Result<(Hyperparams, TrialHistory)> {
    space.validate()?;
    if cfg.objective == Objective::NegLogLoss && !space.kind.is_probabilistic() {
        return Err(Error::Config(format!("log-loss objective needs probabilities; {} gives margins", space.kind)));
    }
    let train_seed = seed::derive_seed(cfg.seed, "train");
    let hist = optimize(space.len(), cfg, |p| {
        let hp = space.decode(p)?;
        let model = classify::train(&hp, train.0, train.1, n_classes, train_seed)?;
        let v = match cfg.objective {
            Objective::Accuracy => crate::metrics::accuracy(&model.predict(val.0)?, val.1)?,
            Objective::NegLogLoss => {
                let s = model.predict_scores(val.0)?;
                let ll: f64 = val
                    .1
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| -s.get(i, c).max(1e-15).ln())
                    .sum();
                -ll / val.1.len() as f64
            }
        };
        Ok((v, Some(hp)))
    })?;
    let best = hist.trials[hist.incumbent().expect("optimize checks for a success")]
        .hp
        .clone()
        .expect("successful trials carry hyperparameters");
    Ok((best, hist))
}

/// The kind's default space sized for `n_train` rows.
pub fn default_space(kind: ModelKind, n_train: usize) -> HyperparamSpace {
    HyperparamSpace::default_for(kind, n_train)
}

#[cfg(test)]
pub(crate) fn branin(u: &[f64]) -> f64 {
    use std::f64::consts::PI;
    let x1 = -5.0 + 15.0 * u[0];
    let x2 = 15.0 * u[1];
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}
