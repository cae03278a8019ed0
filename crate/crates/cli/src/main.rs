use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tafnet::data::{
    generate_dataset, read_dataset, read_pgm, read_ppm, read_split, write_dataset, write_pgm, Normalization,
    SynthConfig, NORMALIZATION_FILE,
};
use tafnet::gradsuite::{run_suite_with, SuiteOptions};
use tafnet::model::{build_tafnet, checkpoint, count, ForwardOptions};
use tafnet::train::{ablate, ablation_table, evaluate, train_with, RunConfig, Sample};
use tafnet::{Exec, Tensor4};

const CHECKPOINT_FILE: &str = "model.ckpt";
const TRACE_FILE: &str = "trace.tsv";

#[derive(Parser)]
#[command(name = "tafnet", version, about = "Three-stream RGB-thermal crowd counting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic paired RGB/thermal dataset.
    GenerateData {
        /// Data config (`key = value`); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and keep the best validation checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Density map and count for a single image pair.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// 8-bit binary PPM.
        #[arg(long)]
        rgb: PathBuf,
        /// 8-bit binary PGM.
        #[arg(long)]
        thermal: PathBuf,
        /// Directory for `density.pgm` and `density.txt`.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Finite-difference check of every layer, block and the whole network.
    GradCheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train every variant from one seed and compare them on the test split.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum Failure {
    Validation(String),
    Numerical(String),
}

impl From<tafnet::Error> for Failure {
    fn from(e: tafnet::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Validation(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn run_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let mut cfg = match path {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

/// The normalization written by `generate-data`, or statistics of the
/// training split when the file is missing.
fn dataset_normalization(data: &Path, train: &[tafnet::data::ScenePair]) -> Result<Normalization, Failure> {
    let path = data.join(NORMALIZATION_FILE);
    if path.exists() {
        Ok(Normalization::read(&path)?)
    } else {
        Ok(Normalization::compute(train)?)
    }
}

fn checkpoint_normalization(checkpoint: &Path) -> Result<Normalization, Failure> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    Ok(Normalization::read(&dir.join(NORMALIZATION_FILE))?)
}

fn generate(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Outcome {
    let mut cfg = match config {
        Some(p) => SynthConfig::read(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let data = generate_dataset(&cfg, Exec::default())?;
    write_dataset(&data, out)?;
    // statistics come from the quantized files, which is what training reads
    let train = read_split(out, "train")?;
    Normalization::compute(&train)?.write(&out.join(NORMALIZATION_FILE))?;
    println!(
        "wrote {} train, {} val, {} test pairs to {}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}

fn train_cmd(config: Option<&Path>, data: &Path, out: &Path, seed: Option<u64>) -> Outcome {
    let cfg = run_config(config, seed)?;
    let ds = read_dataset(data)?;
    let norm = dataset_normalization(data, &ds.train)?;
    let train_set = Sample::prepare_all(&ds.train, &norm);
    let val = Sample::prepare_all(&ds.val, &norm);
    let model = build_tafnet(cfg.model.clone(), cfg.train.seed)?;
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let outcome = train_with(model, &train_set, &val, &cfg.train, |r| {
        let val = r.val.map_or("-".to_string(), |(g, rmse)| format!("{g:.4}\t{rmse:.4}"));
        eprintln!(
            "epoch {}\tloss {:.6}\tval {val}{}",
            r.epoch,
            r.train_loss,
            if r.best { "\tbest" } else { "" }
        );
    })?;
    checkpoint::save(&outcome.best, &out.join(CHECKPOINT_FILE))?;
    write_file(&out.join(TRACE_FILE), &outcome.trace.to_tsv())?;
    norm.write(&out.join(NORMALIZATION_FILE))?;
    match outcome.best_epoch {
        Some(e) => println!("best epoch {e}; checkpoint {}", out.join(CHECKPOINT_FILE).display()),
        None => println!("no validated epoch; checkpoint holds the initialization"),
    }
    Ok(())
}

fn eval_cmd(ckpt: &Path, data: &Path, split: &str) -> Outcome {
    let model = checkpoint::load(ckpt)?;
    let norm = checkpoint_normalization(ckpt)?;
    let pairs = read_split(data, split)?;
    let samples = Sample::prepare_all(&pairs, &norm);
    let report = evaluate(&model, &samples, ForwardOptions::default(), Exec::default())?;
    print!("{report}");
    Ok(())
}

/// Row-major values, one map row per line, shortest round-trip formatting.
fn grid_text(map: &Tensor4) -> String {
    let s = map.shape();
    let mut out = String::new();
    for row in map.data().chunks(s.w) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", cells.join(" ")).unwrap();
    }
    out
}

fn predict_cmd(ckpt: &Path, rgb: &Path, thermal: &Path, out: &Path) -> Outcome {
    let model = checkpoint::load(ckpt)?;
    let norm = checkpoint_normalization(ckpt)?;
    let (rgb, thermal) = (read_ppm(rgb)?, read_pgm(thermal)?);
    let map = model.predict(
        &norm.normalize_rgb(&rgb),
        &norm.normalize_thermal(&thermal),
        ForwardOptions::default(),
    )?;
    let peak = map.data().iter().copied().fold(0.0, f64::max);
    let scaled = if peak > 0.0 { map.map(|v| v / peak) } else { map.clone() };
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    write_pgm(&out.join("density.pgm"), &scaled)?;
    write_file(&out.join("density.txt"), &grid_text(&map))?;
    println!("{:?}", count(&map)?[0]);
    Ok(())
}

fn grad_check(config: Option<&Path>) -> Outcome {
    let cfg = run_config(config, None)?;
    let opts = SuiteOptions {
        seeds: cfg.gradcheck_seeds,
        model: cfg.model.clone(),
        loss: cfg.train.bayesian,
        exec: cfg.train.exec,
    };
    let report = run_suite_with(&opts, |c| {
        eprintln!(
            "{}\t{:.3e}\t{}",
            c.name,
            c.max_rel_error,
            if c.passed() { "ok" } else { "FAIL" }
        );
    })?;
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
        Err(Failure::Numerical(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )))
    }
}

fn ablate_cmd(config: Option<&Path>, data: &Path, seed: Option<u64>) -> Outcome {
    let cfg = run_config(config, seed)?;
    let ds = read_dataset(data)?;
    let norm = dataset_normalization(data, &ds.train)?;
    let [train_set, val, test] = [&ds.train, &ds.val, &ds.test].map(|pairs| Sample::prepare_all(pairs, &norm));
    let rows = ablate(&cfg, &train_set, &val, &test)?;
    print!("{}", ablation_table(&rows));
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::GenerateData { config, out, seed } => generate(config.as_deref(), &out, seed),
        Command::Train {
            config,
            data,
            out,
            seed,
        } => train_cmd(config.as_deref(), &data, &out, seed),
        Command::Eval {
            checkpoint,
            data,
            split,
        } => eval_cmd(&checkpoint, &data, &split),
        Command::Predict {
            checkpoint,
            rgb,
            thermal,
            out,
        } => predict_cmd(&checkpoint, &rgb, &thermal, &out),
        Command::GradCheck { config } => grad_check(config.as_deref()),
        Command::Ablate { config, data, seed } => ablate_cmd(config.as_deref(), &data, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!(
                "error: {}",
                msg.lines().next().unwrap_or("").trim_start_matches("error: ")
            );
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
