use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use histofuse::classify::ModelKind;
use histofuse::corpus::{SizeMode, SplitRatios};
use histofuse::deepfeat::fixture::{write_fixture_model, FixtureSpec};
use histofuse::noise::parse_levels;
use histofuse::pipeline::{self, toy, ExperimentConfig, RunDir};
use histofuse::{Error, FeatureKind};

#[derive(Parser, Debug)]
#[command(name = "histofuse", version, about = "HOG + deep-feature histopathology classification experiments")]
struct Cli {
    /// Experiment config (JSON); a run manifest is accepted too.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; derives the split, augmentation, tuning, training and noise seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Feature kinds, comma-separated (hog, deep, fused).
    #[arg(long, global = true, value_delimiter = ',')]
    kinds: Option<Vec<FeatureKind>>,
    /// Models, comma-separated (tree, gbm, knn, mlp, svm).
    #[arg(long, global = true, value_delimiter = ',')]
    models: Option<Vec<ModelKind>>,
    /// Center-crop instead of resizing to the working size.
    #[arg(long, global = true)]
    center_crop: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List the dataset (root/<class>/*.png|jpg).
    Ingest {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Skip undecodable images instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Stratified train/val/test split.
    Split {
        /// Three comma-separated fractions.
        #[arg(long)]
        ratios: Option<SplitRatios>,
    },
    /// HOG features for every split.
    Hog(HogArgs),
    /// Deep features from the backend model.
    Deep(BackendArgs),
    /// Concatenate stored HOG and deep features.
    Fuse,
    /// Bayesian hyperparameter search per model and feature kind.
    Tune {
        #[arg(long)]
        budget: Option<usize>,
        /// Use configured hyperparameters instead of searching.
        #[arg(long)]
        no_search: bool,
    },
    /// Train models with the tuned hyperparameters.
    Train,
    /// Evaluate on the clean test split.
    Eval {
        /// Also draw ROC curves as SVG.
        #[arg(long)]
        svg: bool,
    },
    /// Accuracy under additive Gaussian noise.
    Sweep(SweepArgs),
    /// Print report.csv and sweep.csv as tables.
    Report,
    /// Every stage end to end.
    Run {
        #[command(flatten)]
        sweep: SweepArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        svg: bool,
    },
    /// Write a synthetic corpus, a fixture backend and a matching config.
    Toy {
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 256)]
        side: usize,
    },
}

#[derive(Args, Debug)]
struct HogArgs {
    #[arg(long)]
    cell: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    block: Option<usize>,
    #[arg(long)]
    grayscale: bool,
    #[arg(long)]
    soft_spatial: bool,
}

#[derive(Args, Debug)]
struct BackendArgs {
    /// ONNX model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Graph output used as the feature vector.
    #[arg(long)]
    output_name: Option<String>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Comma-separated SNR levels in dB.
    #[arg(long)]
    levels: Option<String>,
    /// Re-tune and retrain on noisy data at each level.
    #[arg(long)]
    retune_per_level: bool,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.reseed(s);
    }
    if let Some(o) = &cli.out {
        cfg.output = o.clone();
    }
    if let Some(k) = &cli.kinds {
        cfg.kinds = k.clone();
    }
    if let Some(m) = &cli.models {
        cfg.models = m.clone();
    }
    if cli.center_crop {
        cfg.image.mode = SizeMode::CenterCrop;
    }
    Ok(cfg)
}

fn apply_backend(cfg: &mut ExperimentConfig, b: &BackendArgs) {
    if let Some(m) = &b.model {
        cfg.backend.model = m.clone();
    }
    if let Some(n) = &b.output_name {
        cfg.backend.output_name = Some(n.clone());
    }
}

fn apply_sweep(cfg: &mut ExperimentConfig, s: &SweepArgs) -> Result<(), Error> {
    if let Some(l) = &s.levels {
        cfg.snr.levels = parse_levels(l)?;
    }
    cfg.retune_per_level |= s.retune_per_level;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = resolve(&cli)?;
    let dir = RunDir::new(&cfg.output);
    let prepare = |cfg: &ExperimentConfig| -> Result<(), Error> {
        cfg.validate()?;
        fs::create_dir_all(&cfg.output).map_err(|e| Error::InvalidArgument(format!("{}: {e}", cfg.output.display())))
    };
    match &cli.command {
        Command::Ingest { dataset, lenient } => {
            if let Some(d) = dataset {
                cfg.dataset = d.clone();
            }
            cfg.image.lenient |= *lenient;
            prepare(&cfg)?;
            let ds = pipeline::ingest_stage(&cfg, &dir)?;
            println!("{} samples {:?}", ds.len(), ds.class_counts());
        }
        Command::Split { ratios } => {
            if let Some(r) = ratios {
                cfg.split.ratios = *r;
            }
            prepare(&cfg)?;
            let s = pipeline::split_stage(&cfg, &dir)?;
            let (a, b, c) = s.sizes();
            println!("train {a}, val {b}, test {c}");
        }
        Command::Hog(h) => {
            if let Some(v) = h.cell {
                cfg.hog.cell_size = v;
            }
            if let Some(v) = h.bins {
                cfg.hog.bins = v;
            }
            if let Some(v) = h.block {
                cfg.hog.block_size = v;
            }
            cfg.hog.grayscale |= h.grayscale;
            cfg.hog.soft_spatial |= h.soft_spatial;
            prepare(&cfg)?;
            pipeline::features_stage(&cfg, &dir, &[FeatureKind::Hog])?;
        }
        Command::Deep(b) => {
            apply_backend(&mut cfg, b);
            prepare(&cfg)?;
            pipeline::features_stage(&cfg, &dir, &[FeatureKind::Deep])?;
        }
        Command::Fuse => pipeline::fuse_stage(&dir)?,
        Command::Tune { budget, no_search } => {
            if let Some(b) = budget {
                cfg.tune.budget = *b;
                cfg.tune.n_init = cfg.tune.n_init.min(*b);
            }
            cfg.tune.enabled &= !no_search;
            prepare(&cfg)?;
            pipeline::tune_stage(&cfg, &dir)?;
        }
        Command::Train => {
            prepare(&cfg)?;
            pipeline::train_stage(&cfg, &dir)?;
        }
        Command::Eval { svg } => {
            cfg.svg |= svg;
            prepare(&cfg)?;
            pipeline::eval_stage(&cfg, &dir)?;
            print_report(&dir)?;
        }
        Command::Sweep(s) => {
            apply_sweep(&mut cfg, s)?;
            prepare(&cfg)?;
            pipeline::sweep_stage(&cfg, &dir, &cfg.snr.levels)?;
            print_report(&dir)?;
        }
        Command::Report => print_report(&dir)?,
        Command::Run {
            sweep,
            backend,
            dataset,
            svg,
        } => {
            apply_sweep(&mut cfg, sweep)?;
            apply_backend(&mut cfg, backend);
            if let Some(d) = dataset {
                cfg.dataset = d.clone();
            }
            cfg.svg |= svg;
            pipeline::run_experiment(&cfg)?;
            print_report(&dir)?;
        }
        Command::Toy { per_class, side } => {
            let root = cli.out.clone().unwrap_or_else(|| PathBuf::from("toy"));
            write_toy(&root, *per_class, *side, cli.seed.unwrap_or(0))?;
        }
    }
    Ok(())
}

fn write_toy(root: &Path, per_class: usize, side: usize, seed: u64) -> Result<(), Error> {
    let data = root.join("data");
    let model = root.join("fixture.onnx");
    toy::write_toy_corpus(&data, per_class, side, seed)?;
    write_fixture_model(&model, &FixtureSpec::default())?;
    let mut cfg = pipeline::toy_config(&data, &model, &root.join("out"));
    cfg.image.side = side;
    let path = root.join("config.json");
    cfg.save(&path)?;
    println!("wrote {} ({} images), {} and {}", data.display(), per_class * 5, model.display(), path.display());
    Ok(())
}

fn read_csv(path: &Path) -> Option<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).ok()?;
    Some(text.lines().skip(1).map(|l| l.split(',').map(str::to_owned).collect()).collect())
}

fn print_report(dir: &RunDir) -> Result<(), Error> {
    let report = read_csv(&dir.report());
    let sweep = read_csv(&dir.sweep());
    if report.is_none() && sweep.is_none() {
        return Err(Error::InvalidArgument(format!(
            "no report.csv or sweep.csv in {}",
            dir.root().display()
        )));
    }
    if let Some(rows) = report {
        let mut by_kind: BTreeMap<&str, Vec<&Vec<String>>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.len() == 5 && r[2].is_empty()) {
            by_kind.entry(r[1].as_str()).or_default().push(r);
        }
        for (kind, rows) in by_kind {
            println!("\n{kind} features");
            println!("{:<8} {:>8} {:>12}", "model", "AUC(%)", "Accuracy(%)");
            for r in rows {
                println!("{:<8} {:>8} {:>12}", r[0], r[3], r[4]);
            }
        }
    }
    if let Some(rows) = sweep {
        let mut levels: Vec<f64> = rows.iter().filter_map(|r| r.get(2)?.parse().ok()).collect();
        levels.sort_by(|a, b| b.total_cmp(a));
        levels.dedup();
        let mut table: BTreeMap<(&str, &str), BTreeMap<String, &str>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.len() == 4) {
            table.entry((r[0].as_str(), r[1].as_str())).or_default().insert(r[2].clone(), r[3].as_str());
        }
        println!("\naccuracy (%) by SNR");
        print!("{:<24} {:<8}", "method", "model");
        for l in &levels {
            print!(" {:>8}", format!("{l} dB"));
        }
        println!();
        for ((method, model), cells) in table {
            print!("{method:<24} {model:<8}");
            for l in &levels {
                print!(" {:>8}", cells.get(&l.to_string()).copied().unwrap_or("-"));
            }
            println!();
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
