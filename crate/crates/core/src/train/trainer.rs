use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{batch_in_order, load_embeddings, load_squad, read_jsonl, Example, Vocab};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{non_finite, QaModel};
use crate::rng::SeededRng;
use crate::tensor::Graph;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::optim::{clip_grad_norm, OptimizerState};

pub const METRICS_HEADER: &str = "step,train_loss,dev_loss,dev_f1,dev_em";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";

const INIT_STREAM: u64 = 0x1417;
const SHUFFLE_STREAM: u64 = 0x5_0000_0000;
const DROPOUT_SALT: u64 = 0xd20f_0a7e;

/// One evaluation point of the training curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_f1: f64,
    pub dev_em: f64,
}

impl MetricRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step, self.train_loss, self.dev_loss, self.dev_f1, self.dev_em
        )
    }
}

/// The metric log as CSV, header included.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{}", r.csv());
    }
    out
}

/// Everything beyond parameters and optimizer moments needed to resume.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    pub seed: u64,
    pub step: u64,
    pub epoch: u64,
    /// Position inside the current epoch's shuffled order.
    pub cursor: u64,
    pub best_f1: f64,
    pub best_em: f64,
    pub best_step: u64,
    /// Sum and count of step losses since the last evaluation.
    pub loss_sum: f64,
    pub loss_count: u64,
    pub log: Vec<MetricRow>,
}

impl TrainerState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            step: 0,
            epoch: 0,
            cursor: 0,
            best_f1: f64::NEG_INFINITY,
            best_em: f64::NEG_INFINITY,
            best_step: 0,
            loss_sum: 0.0,
            loss_count: 0,
            log: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub best_f1: f64,
    pub best_em: f64,
    pub best_step: u64,
    pub stopped_early: bool,
    pub log: Vec<MetricRow>,
}

impl TrainSummary {
    pub fn to_json(&self) -> serde_json::Value {
        let finite = |v: f64| {
            if v.is_finite() {
                serde_json::json!(v)
            } else {
                serde_json::Value::Null
            }
        };
        serde_json::json!({
            "steps": self.steps,
            "best_dev_f1": finite(self.best_f1),
            "best_dev_em": finite(self.best_em),
            "best_step": self.best_step,
            "stopped_early": self.stopped_early,
            "evaluations": self.log.len(),
        })
    }
}

/// Model, optimizer and loop state for one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: QaModel<f64>,
    pub optimizer: OptimizerState,
    pub state: TrainerState,
    order: Option<(u64, Vec<usize>)>,
}

impl Trainer {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: TrainConfig, vocab: Vocab<f64>) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::with_stream(config.seed, INIT_STREAM);
        let model = QaModel::new(config.model_config(), vocab, &mut rng)?;
        let optimizer = OptimizerState::new(config.optimizer, &model.params);
        let state = TrainerState::new(config.seed);
        Ok(Self {
            config,
            model,
            optimizer,
            state,
            order: None,
        })
    }

    pub(crate) fn from_parts(config: TrainConfig, model: QaModel<f64>, optimizer: OptimizerState, state: TrainerState) -> Self {
        Self {
            config,
            model,
            optimizer,
            state,
            order: None,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(self)
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.restore()
    }

    fn epoch_order(&mut self, n: usize) -> &[usize] {
        let epoch = self.state.epoch;
        if self.order.as_ref().is_none_or(|(e, o)| *e != epoch || o.len() != n) {
            let mut order: Vec<usize> = (0..n).collect();
            SeededRng::with_stream(self.state.seed, SHUFFLE_STREAM + epoch).shuffle(&mut order);
            self.order = Some((epoch, order));
        }
        &self.order.as_ref().expect("order just set").1
    }

    /// Indices of the next batch; advances the epoch cursor.
    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let bs = self.config.batch_size;
        let start = self.state.cursor as usize;
        let end = (start + bs).min(n);
        let picked = self.epoch_order(n)[start..end].to_vec();
        if end >= n {
            self.state.epoch += 1;
            self.state.cursor = 0;
        } else {
            self.state.cursor = end as u64;
        }
        picked
    }

    /// One optimisation step over the next batch; returns its mean loss.
    pub fn step(&mut self, train: &[Example]) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::Contract("training set is empty".into()));
        }
        let picked = self.next_batch(train.len());
        let batch = batch_in_order(train, &picked, &self.model.vocab, picked.len(), true)
            .pop()
            .expect("non-empty batch");
        let scale = 1.0 / batch.len() as f64;
        self.model.params.zero_grad();
        let mut total = 0.0;
        for k in 0..batch.len() {
            let mut rng = SeededRng::with_stream(
                self.state.seed ^ DROPOUT_SALT,
                self.state.step * self.config.batch_size as u64 + k as u64,
            );
            let mut g = Graph::new();
            let bound = self.model.params.bind(&mut g);
            let (loss, _) = self.model.loss(&mut g, &bound, &batch.item(k), true, &mut rng)?;
            let l = g.scalar(loss);
            if !l.is_finite() {
                return Err(non_finite(&g, &format!("training loss at step {}", self.state.step + 1)));
            }
            total += l;
            let scaled = g.scale(loss, scale);
            let grads = g.backward(scaled)?;
            self.model.params.accumulate(&grads, &bound)?;
        }
        clip_grad_norm(&mut self.model.params, self.config.clip_norm);
        if let Some(name) = self.model.params.first_non_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of {name} is not finite at step {}",
                self.state.step + 1
            )));
        }
        self.optimizer.update(&mut self.model.params, self.config.learning_rate)?;
        if let Some(name) = self.model.params.first_non_finite() {
            return Err(Error::NonFinite(format!(
                "parameter {name} is not finite after step {}",
                self.state.step + 1
            )));
        }
        let mean = total * scale;
        self.state.step += 1;
        self.state.loss_sum += mean;
        self.state.loss_count += 1;
        Ok(mean)
    }

    /// Dev loss, scores and the id → answer map used to compute them.
    pub fn evaluate(&self, dev: &[Example]) -> Result<(f64, EvalReport, HashMap<String, String>)> {
        let preds = self
            .model
            .predict(dev, self.config.decode, self.config.max_len, self.config.batch_size)?;
        let map: HashMap<String, String> = preds.spans.into_iter().map(|(id, p)| (id, p.text)).collect();
        let report = evaluate(&map, dev)?;
        Ok((preds.mean_loss, report, map))
    }

    /// Trains until `config.max_steps` (or early stop), evaluating every
    /// `eval_every` steps. With `out`, writes the metric CSV and the best and
    /// last checkpoints there.
    pub fn run(&mut self, train: &[Example], dev: &[Example], out: Option<&Path>) -> Result<TrainSummary> {
        if dev.is_empty() {
            return Err(Error::Contract("dev set is empty".into()));
        }
        if let Some(dir) = out {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut stopped_early = false;
        while self.state.step < self.config.max_steps {
            self.step(train)?;
            if self.state.step.is_multiple_of(self.config.eval_every) {
                let (dev_loss, report, _) = self.evaluate(dev)?;
                let row = MetricRow {
                    step: self.state.step,
                    train_loss: self.state.loss_sum / self.state.loss_count as f64,
                    dev_loss,
                    dev_f1: report.f1,
                    dev_em: report.em,
                };
                self.state.log.push(row);
                self.state.loss_sum = 0.0;
                self.state.loss_count = 0;
                if report.f1 > self.state.best_f1 {
                    self.state.best_f1 = report.f1;
                    self.state.best_em = report.em;
                    self.state.best_step = self.state.step;
                    if let Some(dir) = out {
                        self.checkpoint().save(&dir.join(BEST_CHECKPOINT))?;
                    }
                }
                if let Some(dir) = out {
                    write_file(&dir.join(METRICS_FILE), &metrics_csv(&self.state.log))?;
                }
                if self.config.early_stop_em.is_some_and(|t| report.em >= t) {
                    stopped_early = true;
                    break;
                }
            }
        }
        if let Some(dir) = out {
            write_file(&dir.join(METRICS_FILE), &metrics_csv(&self.state.log))?;
            self.checkpoint().save(&dir.join(LAST_CHECKPOINT))?;
        }
        Ok(TrainSummary {
            steps: self.state.step,
            best_f1: self.state.best_f1,
            best_em: self.state.best_em,
            best_step: self.state.best_step,
            stopped_early,
            log: self.state.log.clone(),
        })
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Loads examples by extension: `.jsonl` holds [`Example`] lines, anything
/// else is read as SQuAD JSON. Returns the examples and how many SQuAD
/// answers were skipped.
pub fn load_dataset(path: &Path, max_context_len: usize, max_question_len: usize) -> Result<(Vec<Example>, usize)> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        let examples: Vec<Example> = read_jsonl(path)?
            .into_iter()
            .filter(|e| e.context_tokens.len() <= max_context_len && e.question_tokens.len() <= max_question_len)
            .collect();
        Ok((examples, 0))
    } else {
        let loaded = load_squad(path, max_context_len, max_question_len)?;
        Ok((loaded.examples, loaded.skipped))
    }
}

/// Splits off the trailing `fraction` of `examples` (at least one) as dev.
pub fn split_dev(mut examples: Vec<Example>, fraction: f64) -> Result<(Vec<Example>, Vec<Example>)> {
    let n = examples.len();
    let dev_n = ((n as f64 * fraction).round() as usize).max(1);
    if n < 2 || dev_n >= n {
        return Err(Error::Config(format!("cannot hold out {dev_n} of {n} examples as dev")));
    }
    let dev = examples.split_off(n - dev_n);
    Ok((examples, dev))
}

/// Pretrained vectors when `config.embeddings` is set, otherwise random
/// vectors over the training vocabulary.
pub fn build_vocab(config: &TrainConfig, train: &[Example]) -> Result<Vocab<f64>> {
    match &config.embeddings {
        Some(path) => Ok(load_embeddings(path, config.d_word)?.vocab),
        None => {
            let mut words: Vec<&str> = train
                .iter()
                .flat_map(|e| e.context_tokens.iter().chain(&e.question_tokens))
                .map(String::as_str)
                .collect();
            words.sort_unstable();
            words.dedup();
            Vocab::random(&words, config.d_word, &mut SeededRng::with_stream(config.seed, INIT_STREAM + 1))
        }
    }
}

/// Loaded train and dev sets.
#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub skipped: usize,
}

pub fn load_datasets(config: &TrainConfig) -> Result<Datasets> {
    let path: &PathBuf = config
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset given (--dataset)".into()))?;
    let (examples, mut skipped) = load_dataset(path, config.max_context_len, config.max_question_len)?;
    let (train, dev) = match &config.dev {
        Some(dev_path) => {
            let (dev, s) = load_dataset(dev_path, config.max_context_len, config.max_question_len)?;
            skipped += s;
            (examples, dev)
        }
        None => split_dev(examples, config.dev_fraction)?,
    };
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Config("train and dev sets must both be non-empty".into()));
    }
    Ok(Datasets { train, dev, skipped })
}

/// Full pipeline: load data, build the vocabulary, train.
pub fn train(config: &TrainConfig, out: Option<&Path>) -> Result<(Trainer, TrainSummary)> {
    config.validate()?;
    let data = load_datasets(config)?;
    let vocab = build_vocab(config, &data.train)?;
    let mut trainer = Trainer::new(config.clone(), vocab)?;
    let summary = trainer.run(&data.train, &data.dev, out)?;
    Ok((trainer, summary))
}
