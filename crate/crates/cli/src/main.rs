//! `crossattn`: train, evaluate and inspect the attention QA models.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crossattn::attention::Mechanism;
use crossattn::data::{compute_stats, make_synthetic, write_jsonl, SyntheticSpec};
use crossattn::metrics::evaluate;
use crossattn::span::DecodeMode;
use crossattn::train::{
    gradcheck_model, load_dataset, parse_grid, run_sweep, sweep_csv, train, Checkpoint, GradcheckSetup, TrainConfig, Trainer,
    GRADCHECK_FAIL,
};
use crossattn::Error;

#[derive(Parser, Debug)]
#[command(name = "crossattn", version, about = "Cross-attention models for extractive question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes metrics.csv, best.ckpt, last.ckpt and summary.json.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions (or a checkpoint's predictions) against a dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// JSON map from example id to answer text.
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        predictions: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_decode)]
        decode: Option<DecodeMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write id → answer predictions for a dataset.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_parser = parse_decode)]
        decode: Option<DecodeMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every parameter group on a tiny model.
    Gradcheck {
        /// One mechanism; all four when omitted.
        #[arg(long, value_parser = parse_mechanism)]
        attention: Option<Mechanism>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        trainable_similarity: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Length, position and question-type statistics of a dataset.
    Eda {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic key-value retrieval task as JSON lines.
    Synth {
        #[arg(long, default_value_t = 5500)]
        num_examples: usize,
        #[arg(long, default_value_t = 50)]
        num_keys: usize,
        #[arg(long, default_value_t = 50)]
        num_values: usize,
        #[arg(long, default_value_t = 8)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the last N examples to dev.jsonl and the rest to train.jsonl
        /// instead of a single synth.jsonl.
        #[arg(long)]
        dev_examples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train once per grid line and collect a summary CSV.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Training configuration: file values first, then flags.
#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_mechanism)]
    attention: Option<Mechanism>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_decode)]
    decode: Option<DecodeMode>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Any other config key, e.g. `--set h=32`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig, Error> {
        let mut c = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            c.set(k, v)?;
        }
        if let Some(m) = self.attention {
            c.mechanism = m;
        }
        if let Some(p) = &self.dataset {
            c.dataset = Some(p.clone());
        }
        if let Some(p) = &self.dev {
            c.dev = Some(p.clone());
        }
        if let Some(p) = &self.embeddings {
            c.embeddings = Some(p.clone());
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(d) = self.decode {
            c.decode = d;
        }
        if let Some(n) = self.max_steps {
            c.max_steps = n;
        }
        c.validate()?;
        Ok(c)
    }
}

fn parse_mechanism(s: &str) -> Result<Mechanism, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_decode(s: &str) -> Result<DecodeMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failed command and the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

const USAGE: u8 = 1;
const DATA: u8 = 2;
const NUMERIC: u8 = 3;

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => USAGE,
            _ if e.is_numeric_failure() => NUMERIC,
            _ => DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn create_out(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.into(), source })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, contents).map_err(|source| Error::Io { path: path.into(), source })
}

fn json_text(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("serialisable") + "\n"
}

fn require_file(path: &Path, flag: &str) -> Result<(), Error> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io {
            path: path.into(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, format!("{flag} file not found")),
        })
    }
}

fn run_train(config: &ConfigArgs, out: &Path) -> Outcome {
    let config = config.resolve()?;
    if config.dataset.is_none() {
        return Err(Error::Config("no dataset given (--dataset)".into()).into());
    }
    for (path, flag) in [
        (&config.dataset, "--dataset"),
        (&config.dev, "--dev"),
        (&config.embeddings, "--embeddings"),
    ] {
        if let Some(p) = path {
            require_file(p, flag)?;
        }
    }
    create_out(out)?;
    write(&out.join("config.txt"), config.to_text())?;
    let (_, summary) = train(&config, Some(out))?;
    let json = summary.to_json();
    write(&out.join("summary.json"), json_text(&json))?;
    println!("{json}");
    Ok(())
}

fn load_trainer(path: &Path) -> Result<Trainer, Error> {
    require_file(path, "--checkpoint")?;
    Trainer::from_checkpoint(Checkpoint::load(path)?)
}

fn predictions(trainer: &Trainer, dataset: &Path, decode: Option<DecodeMode>) -> Result<BTreeMap<String, String>, Error> {
    let c = &trainer.config;
    let (examples, _) = load_dataset(dataset, c.max_context_len, c.max_question_len)?;
    if examples.is_empty() {
        return Err(Error::Contract(format!("{} holds no usable examples", dataset.display())));
    }
    let preds = trainer
        .model
        .predict(&examples, decode.unwrap_or(c.decode), c.max_len, c.batch_size)?;
    Ok(preds.spans.into_iter().map(|(id, p)| (id, p.text)).collect())
}

fn run_predict(checkpoint: &Path, dataset: &Path, decode: Option<DecodeMode>, out: &Path) -> Outcome {
    require_file(dataset, "--dataset")?;
    let trainer = load_trainer(checkpoint)?;
    let preds = predictions(&trainer, dataset, decode)?;
    create_out(out)?;
    write(&out.join("predictions.json"), json_text(&preds))?;
    println!("wrote {} predictions to {}", preds.len(), out.join("predictions.json").display());
    Ok(())
}

fn run_eval(dataset: &Path, predictions_file: Option<&Path>, checkpoint: Option<&Path>, decode: Option<DecodeMode>, out: &Path) -> Outcome {
    require_file(dataset, "--dataset")?;
    let (preds, label, limits) = match (predictions_file, checkpoint) {
        (Some(p), _) => {
            require_file(p, "--predictions")?;
            let text = fs::read_to_string(p).map_err(|source| Error::Io { path: p.into(), source })?;
            let map: HashMap<String, String> = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.into(),
                message: e.to_string(),
            })?;
            let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let d = TrainConfig::default();
            (map, label, (d.max_context_len, d.max_question_len))
        }
        (None, Some(c)) => {
            let trainer = load_trainer(c)?;
            let map = predictions(&trainer, dataset, decode)?.into_iter().collect();
            let limits = (trainer.config.max_context_len, trainer.config.max_question_len);
            (map, trainer.config.mechanism.to_string(), limits)
        }
        (None, None) => return Err(Error::Config("eval needs --predictions or --checkpoint".into()).into()),
    };
    let (examples, _) = load_dataset(dataset, limits.0, limits.1)?;
    if examples.is_empty() {
        return Err(Error::Contract(format!("{} holds no usable examples", dataset.display())).into());
    }
    let report = evaluate(&preds, &examples)?;
    let table = report.render_table(&label);
    create_out(out)?;
    write(&out.join("report.json"), json_text(&report))?;
    write(&out.join("report.txt"), &table)?;
    if checkpoint.is_some() {
        let sorted: BTreeMap<_, _> = preds.iter().collect();
        write(&out.join("predictions.json"), json_text(&sorted))?;
    }
    print!("{table}");
    Ok(())
}

fn run_gradcheck(attention: Option<Mechanism>, seed: u64, trainable_similarity: bool, out: Option<&Path>) -> Outcome {
    let mechanisms: Vec<Mechanism> = attention.map_or_else(|| Mechanism::ATTENTION.to_vec(), |m| vec![m]);
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for mech in mechanisms {
        let setup = GradcheckSetup {
            seed,
            trainable_similarity,
            ..GradcheckSetup::new(mech)
        };
        let (reports, _) = gradcheck_model(&setup)?;
        for r in reports {
            let err = r.report.max_relative_error;
            worst = worst.max(err);
            let verdict = if err < GRADCHECK_FAIL { "ok" } else { "FAIL" };
            println!(
                "{:<12} {:<11} {:>10.3e}  ({} entries) {verdict}",
                mech.name(),
                r.group.name(),
                err,
                r.report.entries_checked
            );
            rows.push(serde_json::json!({
                "mechanism": mech.name(),
                "group": r.group.name(),
                "max_relative_error": err,
                "entries": r.report.entries_checked,
            }));
        }
    }
    if let Some(dir) = out {
        create_out(dir)?;
        write(&dir.join("gradcheck.json"), json_text(&rows))?;
    }
    if worst >= GRADCHECK_FAIL {
        return Err(Failure {
            code: NUMERIC,
            message: format!("gradient check failed: max relative error {worst:.3e} >= {GRADCHECK_FAIL:e}"),
        });
    }
    Ok(())
}

fn run_eda(dataset: &Path, out: &Path) -> Outcome {
    require_file(dataset, "--dataset")?;
    let (examples, skipped) = load_dataset(dataset, usize::MAX, usize::MAX)?;
    let stats = compute_stats(&examples)?;
    let text = stats.render_text();
    create_out(out)?;
    write(&out.join("stats.json"), json_text(&stats))?;
    write(&out.join("stats.txt"), &text)?;
    print!("{text}");
    if skipped > 0 {
        println!("skipped {skipped} questions whose answers could not be located");
    }
    Ok(())
}

fn run_synth(spec: SyntheticSpec, dev_examples: Option<usize>, out: &Path) -> Outcome {
    let mut examples = make_synthetic(&spec)?;
    create_out(out)?;
    match dev_examples {
        None => write_jsonl(&out.join("synth.jsonl"), &examples)?,
        Some(n) => {
            if n == 0 || n >= examples.len() {
                return Err(Error::Config(format!("--dev-examples must be between 1 and {}", examples.len() - 1)).into());
            }
            let dev = examples.split_off(examples.len() - n);
            write_jsonl(&out.join("train.jsonl"), &examples)?;
            write_jsonl(&out.join("dev.jsonl"), &dev)?;
        }
    }
    println!("wrote {} examples to {}", spec.num_examples, out.display());
    Ok(())
}

fn run_sweep_cmd(config: &ConfigArgs, grid: &Path, out: &Path) -> Outcome {
    let base = config.resolve()?;
    require_file(grid, "--grid")?;
    let text = fs::read_to_string(grid).map_err(|source| Error::Io { path: grid.into(), source })?;
    let cells = parse_grid(&text)?;
    if base.dataset.is_none() {
        return Err(Error::Config("no dataset given (--dataset)".into()).into());
    }
    create_out(out)?;
    let rows = run_sweep(&base, &cells, out)?;
    print!("{}", sweep_csv(&rows));
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::Train { config, out } => run_train(&config, &out),
        Command::Eval {
            dataset,
            predictions,
            checkpoint,
            decode,
            out,
        } => run_eval(&dataset, predictions.as_deref(), checkpoint.as_deref(), decode, &out),
        Command::Predict {
            checkpoint,
            dataset,
            decode,
            out,
        } => run_predict(&checkpoint, &dataset, decode, &out),
        Command::Gradcheck {
            attention,
            seed,
            trainable_similarity,
            out,
        } => run_gradcheck(attention, seed, trainable_similarity, out.as_deref()),
        Command::Eda { dataset, out } => run_eda(&dataset, &out),
        Command::Synth {
            num_examples,
            num_keys,
            num_values,
            pairs,
            seed,
            dev_examples,
            out,
        } => run_synth(
            SyntheticSpec {
                num_examples,
                num_keys,
                num_values,
                pairs_per_context: pairs,
                seed,
            },
            dev_examples,
            &out,
        ),
        Command::Sweep { config, grid, out } => run_sweep_cmd(&config, &grid, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
