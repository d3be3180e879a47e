//! Command-line front end.
//!
//! Every command exits with 0 on success, 1 when an attack or tuning run
//! produced no usable result, and 2 on bad input. Errors are reported on
//! stderr as one JSON object per line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::attack::{median_norm, robust_accuracy, robust_accuracy_from_norms, run_batch, RunOptions};
use crate::config::{flat_inline, load_attack_config, save_attack_config};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fixtures::{linear_cases, moons_fixture};
use crate::gradcheck::{model_suite, random_suite, TOLERANCE};
use crate::hpo::{tune, SearchSpace, TunerConfig};
use crate::model::ModelSpec;
use crate::report::{curve_csv, load_results, parse_grid, parse_rational, results_csv, ResultRow};
use crate::VERSION;

#[derive(Debug, Parser)]
#[command(name = "fmnkit", version, about = "Minimum-norm l-infinity adversarial attacks and attack tuning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Attack every sample of a dataset with one configuration.
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Threshold for the reported robust accuracy, e.g. `8/255`.
        #[arg(long, default_value = "8/255")]
        epsilon: String,
    },
    /// Search for the attack configuration with the smallest median norm.
    Tune {
        #[arg(long)]
        model: PathBuf,
        /// Tuning samples.
        #[arg(long)]
        data: PathBuf,
        /// Optional search space (JSON); defaults to the built-in space.
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value_t = 30)]
        budget_min: u64,
        #[arg(long, default_value_t = 300)]
        budget_max: u64,
        #[arg(long, default_value_t = 3)]
        eta: u64,
        #[arg(long, default_value_t = 200)]
        evaluations: usize,
    },
    /// Robust accuracy over an epsilon grid from a results file.
    Curve {
        #[arg(long)]
        results: PathBuf,
        /// `start:stop:Npts` or a comma-separated list; `a/b` fractions allowed.
        #[arg(long, default_value = "0:16/255:64pts")]
        grid: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare input gradients with central finite differences.
    Gradcheck {
        /// Model to check; random models are used when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write deterministic test fixtures.
    GenFixtures {
        #[arg(long, value_enum, default_value_t = FixtureKind::All)]
        kind: FixtureKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureKind {
    /// Linear binary classifiers with their exact minimal distances.
    Linear,
    /// Adversarially trained MLP on two moons, with its data splits.
    Moons,
    All,
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NoResult,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NoValidTrial(_) => 1,
        _ => 2,
    }
}

pub fn error_line(e: &Error) -> String {
    json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(cli.command, &mut stdout) {
        Ok(Status::Ok) => 0,
        Ok(Status::NoResult) => 1,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            exit_code(&e)
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn say(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<Status> {
    match command {
        Command::Attack {
            model,
            data,
            config,
            seed,
            out: dir,
            jobs,
            epsilon,
        } => cmd_attack(&model, &data, &config, seed, &dir, jobs, &epsilon, out),
        Command::Tune {
            model,
            data,
            space,
            seed,
            out: dir,
            jobs,
            budget_min,
            budget_max,
            eta,
            evaluations,
        } => {
            let cfg = TunerConfig {
                b_min: budget_min,
                b_max: budget_max,
                eta,
                max_evaluations: evaluations,
                seed,
                ..TunerConfig::default()
            };
            cmd_tune(&model, &data, space.as_deref(), &cfg, &dir, jobs, out)
        }
        Command::Curve { results, grid, out: path } => cmd_curve(&results, &grid, &path, out),
        Command::Gradcheck { model, trials, seed } => cmd_gradcheck(model.as_deref(), trials, seed, out),
        Command::GenFixtures { kind, seed, out: dir } => cmd_gen_fixtures(kind, seed, &dir, out),
    }
}

fn load_inputs(model: &Path, data: &Path) -> Result<(ModelSpec, Dataset)> {
    let model = ModelSpec::load(model)?;
    let data = Dataset::load(data)?;
    data.check_against(model.input_dim(), model.num_classes())?;
    Ok((model, data))
}

/// Writes `results.csv` and `summary.toml` into `dir`.
#[allow(clippy::too_many_arguments)]
pub fn cmd_attack(
    model_path: &Path,
    data_path: &Path,
    config_path: &Path,
    seed: u64,
    dir: &Path,
    jobs: usize,
    epsilon: &str,
    out: &mut dyn Write,
) -> Result<Status> {
    let (model, data) = load_inputs(model_path, data_path)?;
    let cfg = load_attack_config(config_path)?;
    let eps = parse_rational(epsilon)?;
    let results = run_batch(&model, &data.samples, &cfg, jobs.max(1), RunOptions::default())?;

    let header = vec![
        format!("fmnkit {VERSION}"),
        format!("seed {seed}"),
        format!("config {}", flat_inline(&cfg)),
    ];
    let rows: Vec<ResultRow> = results
        .iter()
        .zip(&data.samples)
        .enumerate()
        .map(|(i, (r, s))| ResultRow::from_result(i, s.label, r))
        .collect();
    create_dir(dir)?;
    write_file(&dir.join("results.csv"), &results_csv(&header, &rows))?;

    let successes = results.iter().filter(|r| r.success).count();
    let median = median_norm(&results);
    let ra = robust_accuracy(&results, &[eps])?.accuracy[0];
    let mut summary = toml::Table::new();
    summary.insert("version".into(), VERSION.into());
    summary.insert("seed".into(), toml::Value::Integer(seed as i64));
    summary.insert("samples".into(), toml::Value::Integer(results.len() as i64));
    summary.insert("successes".into(), toml::Value::Integer(successes as i64));
    summary.insert(
        "success_rate".into(),
        (successes as f64 / results.len().max(1) as f64).into(),
    );
    summary.insert("median_norm".into(), median.into());
    summary.insert("epsilon".into(), epsilon.into());
    summary.insert("epsilon_value".into(), eps.into());
    summary.insert("robust_accuracy".into(), ra.into());
    summary.insert(
        "config".into(),
        toml::Value::try_from(&cfg).map_err(|e| Error::Contract(e.to_string()))?,
    );
    let text = toml::to_string(&summary).map_err(|e| Error::Contract(e.to_string()))?;
    write_file(&dir.join("summary.toml"), &text)?;

    say(
        out,
        &format!(
            "{} samples, {successes} successful, median norm {median}, robust accuracy {ra} at {epsilon}",
            results.len()
        ),
    )?;
    Ok(if successes == 0 { Status::NoResult } else { Status::Ok })
}

/// Writes `trials.jsonl` and, when a valid configuration was found,
/// `best_config.toml` into `dir`.
pub fn cmd_tune(
    model_path: &Path,
    data_path: &Path,
    space_path: Option<&Path>,
    cfg: &TunerConfig,
    dir: &Path,
    jobs: usize,
    out: &mut dyn Write,
) -> Result<Status> {
    let (model, data) = load_inputs(model_path, data_path)?;
    let horizon = cfg.ladder()?.top_budget();
    let space = match space_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
                file: p.display().to_string(),
                location: e.path().to_string(),
                message: e.inner().to_string(),
            })?
        }
        None => SearchSpace::default_for(horizon),
    };
    let outcome = tune(&model, &data.samples, &space, cfg, jobs.max(1))?;
    create_dir(dir)?;
    write_file(&dir.join("trials.jsonl"), &outcome.log_jsonl(&[]))?;
    let best = match outcome.best_record() {
        Ok(b) => b,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            return Ok(Status::NoResult);
        }
    };
    let header = vec![
        format!("fmnkit {VERSION}"),
        format!("seed {}", cfg.seed),
        format!("objective {}", best.result.score.objective),
        format!("trial {} evaluation {}", best.trial.id, best.evaluation),
    ];
    save_attack_config(&best.trial.config, &header, dir.join("best_config.toml"))?;
    say(
        out,
        &format!(
            "best {} median norm {} (trial {}, {} evaluations)",
            best.trial.config.triple(),
            best.result.score.objective,
            best.trial.id,
            outcome.log.len()
        ),
    )?;
    Ok(Status::Ok)
}

pub fn cmd_curve(results: &Path, grid: &str, path: &Path, out: &mut dyn Write) -> Result<Status> {
    let file = load_results(results)?;
    let grid = parse_grid(grid)?;
    let norms: Vec<f64> = file.rows.iter().map(|r| r.norm).collect();
    let curve = robust_accuracy_from_norms(&norms, &grid)?;
    let mut header = file.header.clone();
    header.push(format!("curve fmnkit {VERSION} over {} points", grid.len()));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(path, &curve_csv(&header, &curve))?;
    say(out, &format!("wrote {} points to {}", grid.len(), path.display()))?;
    Ok(Status::Ok)
}

pub fn cmd_gradcheck(model: Option<&Path>, trials: usize, seed: u64, out: &mut dyn Write) -> Result<Status> {
    let report = match model {
        Some(p) => model_suite(&ModelSpec::load(p)?, trials, seed)?,
        None => random_suite(trials, seed)?,
    };
    say(
        out,
        &json!({
            "cases": report.cases,
            "redrawn": report.redrawn,
            "max_rel_error": report.max_rel_error,
            "tolerance": TOLERANCE,
            "passed": report.passed(),
        })
        .to_string(),
    )?;
    Ok(if report.passed() { Status::Ok } else { Status::NoResult })
}

pub fn cmd_gen_fixtures(kind: FixtureKind, seed: u64, dir: &Path, out: &mut dyn Write) -> Result<Status> {
    create_dir(dir)?;
    if matches!(kind, FixtureKind::Linear | FixtureKind::All) {
        let cases = linear_cases(50, (10, 50), seed);
        let doc = json!({ "version": VERSION, "seed": seed, "cases": cases });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Contract(e.to_string()))?;
        write_file(&dir.join("linear_cases.json"), &text)?;
        say(out, &format!("wrote {} linear cases", cases.len()))?;
    }
    if matches!(kind, FixtureKind::Moons | FixtureKind::All) {
        let fx = moons_fixture(seed)?;
        fx.model.save(dir.join("moons_model.json"))?;
        for (name, d) in [("train", &fx.train), ("tune", &fx.tune), ("eval", &fx.eval)] {
            d.save(dir.join(format!("moons_{name}.csv")))?;
        }
        say(out, "wrote moons model and train/tune/eval splits")?;
    }
    Ok(Status::Ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flags() {
        let cli = Cli::try_parse_from([
            "fmnkit", "tune", "--model", "m.json", "--data", "d.csv", "--out", "o", "--budget-min", "3",
            "--budget-max", "27", "--eta", "3",
        ])
        .unwrap();
        match cli.command {
            Command::Tune { budget_min, budget_max, .. } => assert_eq!((budget_min, budget_max), (3, 27)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn usage_error_exits_2() {
        assert_eq!(main_with_args(["fmnkit", "attack"]), 2);
    }

    #[test]
    fn error_line_is_single_line_json() {
        let e = Error::Parse {
            file: "a".into(),
            location: "line 1".into(),
            message: "two\nlines".into(),
        };
        let line = error_line(&e);
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["error"], "parse");
        assert_eq!(exit_code(&e), 2);
        assert_eq!(exit_code(&Error::NoValidTrial("x".into())), 1);
    }
}
