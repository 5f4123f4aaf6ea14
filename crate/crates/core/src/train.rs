//! Training loop: token-budget batches, Adam updates, periodic validation,
//! early stopping, and resumable state.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::checkpoint::{self, CheckpointError};
use crate::autodiff::{Adam, AdamError, ParamStore, Tensor};
use crate::data::{batch_by_tokens, Batch, BatchError, SemanticGraph, VocabError, Vocabulary, DEFAULT_MIN_COUNT, DEFAULT_TOKEN_BUDGET};
use crate::eval::{evaluate, EvalError, EvalReport};
use crate::layers::Pretrained;
use crate::model::{ConfigError, ModelConfig, ModelError, Parser};

pub const METRICS_FILE: &str = "metrics.tsv";
pub const STATE_FILE: &str = "train_state.ckpt";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("the training set has no tokens")]
    EmptyTrain,
    #[error("non-finite loss {loss} at step {step} (epoch {epoch}, batch of {sentences} sentences)")]
    Divergence {
        step: usize,
        epoch: usize,
        sentences: usize,
        loss: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Optimizer(#[from] AdamError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("vocabulary: {0}")]
    Vocab(#[from] VocabError),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("training state: {0}")]
    State(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Schedule and stopping settings. Optimizer settings live in [`ModelConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_tokens: usize,
    pub max_steps: usize,
    /// Steps without a strict dev improvement before stopping.
    pub patience: usize,
    pub validate_every: usize,
    /// Word and lemma frequency threshold for the vocabulary.
    pub min_count: usize,
    /// Stop as soon as dev LF1 reaches this value.
    pub target_lf1: Option<f64>,
    pub include_tops: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_tokens: DEFAULT_TOKEN_BUDGET,
            max_steps: 75_000,
            patience: 10_000,
            validate_every: 100,
            min_count: DEFAULT_MIN_COUNT,
            target_lf1: None,
            include_tops: true,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "batch_tokens",
        "max_steps",
        "patience",
        "validate_every",
        "min_count",
        "target_lf1",
        "include_tops",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        let count = |v: &str| v.parse::<usize>().map_err(|_| bad());
        match key {
            "batch_tokens" => self.batch_tokens = count(value)?,
            "max_steps" => self.max_steps = count(value)?,
            "patience" => self.patience = count(value)?,
            "validate_every" => self.validate_every = count(value)?,
            "min_count" => self.min_count = count(value)?,
            "target_lf1" => {
                self.target_lf1 = match value {
                    "none" => None,
                    v => Some(v.parse().map_err(|_| bad())?),
                }
            }
            "include_tops" => self.include_tops = value.parse().map_err(|_| bad())?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        for (k, v) in [
            ("batch_tokens", self.batch_tokens),
            ("max_steps", self.max_steps),
            ("validate_every", self.validate_every),
            ("min_count", self.min_count),
        ] {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{k} must be positive")));
            }
        }
        Ok(())
    }
}

/// Applies `key=value` lines to the model and training settings; each key
/// must belong to one of them.
pub fn parse_run_config(text: &str, model: &mut ModelConfig, train: &mut TrainConfig) -> std::result::Result<(), ConfigError> {
    for (k, v) in crate::model::parse_pairs(text)? {
        apply_setting(&k, &v, model, train)?;
    }
    Ok(())
}

pub fn apply_setting(key: &str, value: &str, model: &mut ModelConfig, train: &mut TrainConfig) -> std::result::Result<(), ConfigError> {
    match model.set(key, value) {
        Err(ConfigError::UnknownKey(_)) => train.set(key, value),
        other => other,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxSteps,
    Patience,
    Target,
}

/// Counters that decide batching, random streams, and termination.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub seed: u64,
    pub step: usize,
    pub epoch: usize,
    /// Next batch within the current epoch.
    pub offset: usize,
    pub best_lf1: Option<f64>,
    pub best_step: usize,
    loss_sum: f64,
    loss_count: usize,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        TrainState {
            seed,
            step: 0,
            epoch: 0,
            offset: 0,
            best_lf1: None,
            best_step: 0,
            loss_sum: 0.0,
            loss_count: 0,
        }
    }

    pub fn steps_since_improvement(&self) -> usize {
        self.step - self.best_step
    }

    /// Records a dev score; true when it strictly beats the best so far.
    pub fn observe(&mut self, lf1: f64) -> bool {
        if self.best_lf1.is_none_or(|b| lf1 > b) {
            self.best_lf1 = Some(lf1);
            self.best_step = self.step;
            true
        } else {
            false
        }
    }

    pub fn stop_reason(&self, config: &TrainConfig, early_stopping: bool) -> Option<StopReason> {
        if early_stopping {
            if let (Some(t), Some(b)) = (config.target_lf1, self.best_lf1) {
                if b >= t {
                    return Some(StopReason::Target);
                }
            }
            if self.steps_since_improvement() >= config.patience {
                return Some(StopReason::Patience);
            }
        }
        if self.step >= config.max_steps {
            return Some(StopReason::MaxSteps);
        }
        None
    }

    fn record_loss(&mut self, loss: f64) {
        self.loss_sum += loss;
        self.loss_count += 1;
    }

    fn take_mean_loss(&mut self) -> f64 {
        let mean = if self.loss_count == 0 {
            f64::NAN
        } else {
            self.loss_sum / self.loss_count as f64
        };
        self.loss_sum = 0.0;
        self.loss_count = 0;
        mean
    }
}

/// One validation line: step, mean train loss since the previous line, dev UF1 and LF1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub train_loss: f64,
    pub dev_uf1: Option<f64>,
    pub dev_lf1: Option<f64>,
}

pub fn metrics_tsv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("step\ttrain_loss\tdev_uf1\tdev_lf1\n");
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
    for r in rows {
        writeln!(out, "{}\t{:.6}\t{}\t{}", r.step, r.train_loss, opt(r.dev_uf1), opt(r.dev_lf1)).unwrap();
    }
    out
}

pub struct TrainOutcome {
    /// Parser holding the best validated parameters (the final ones without a dev set).
    pub parser: Parser,
    pub state: TrainState,
    pub log: Vec<MetricsRow>,
    pub stop: StopReason,
}

/// Inference-mode scores on `dev`; `None` for an empty dev set.
pub fn evaluate_dev(parser: &Parser, dev: &[SemanticGraph], include_tops: bool) -> Result<Option<EvalReport>> {
    if dev.is_empty() {
        return Ok(None);
    }
    let pred = parser.parse_all(dev)?;
    Ok(Some(evaluate(dev, &pred, include_tops)?))
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 << 63 | epoch as u64);
    rng.next_u64()
}

fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

pub struct Trainer<'a> {
    pub parser: Parser,
    pub config: TrainConfig,
    pub state: TrainState,
    adam: Adam,
    best: Option<ParamStore>,
    log: Vec<MetricsRow>,
    train: &'a [SemanticGraph],
    dev: &'a [SemanticGraph],
    batches: Vec<Batch>,
    out: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        parser: Parser,
        config: TrainConfig,
        seed: u64,
        train: &'a [SemanticGraph],
        dev: &'a [SemanticGraph],
    ) -> Result<Self> {
        Self::from_parts(parser, config, TrainState::new(seed), None, None, Vec::new(), train, dev)
    }

    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        parser: Parser,
        config: TrainConfig,
        state: TrainState,
        adam: Option<Adam>,
        best: Option<ParamStore>,
        log: Vec<MetricsRow>,
        train: &'a [SemanticGraph],
        dev: &'a [SemanticGraph],
    ) -> Result<Self> {
        config.validate().map_err(ModelError::from)?;
        if train.iter().all(SemanticGraph::is_empty) {
            return Err(TrainError::EmptyTrain);
        }
        let batches = batch_by_tokens(train, config.batch_tokens, epoch_seed(state.seed, state.epoch))?;
        let adam = adam.unwrap_or_else(|| Adam::new(parser.config.adam()));
        Ok(Trainer {
            parser,
            config,
            state,
            adam,
            best,
            log,
            train,
            dev,
            batches,
            out: None,
        })
    }

    /// Directory that receives the best model, the metrics log, and the resumable state.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out = Some(dir.into());
        self
    }

    pub fn log(&self) -> &[MetricsRow] {
        &self.log
    }

    fn early_stopping(&self) -> bool {
        !self.dev.is_empty()
    }

    /// One batch: forward, loss, backward, Adam update.
    pub fn step(&mut self) -> Result<f64> {
        let batch = &self.batches[self.state.offset];
        let sentences: Vec<&SemanticGraph> = batch.sentences.iter().map(|&i| &self.train[i]).collect();
        let mut rng = step_rng(self.state.seed, self.state.step);
        let (loss, grads) = self.parser.gradients(&sentences, &mut rng)?;
        if !loss.is_finite() {
            return Err(TrainError::Divergence {
                step: self.state.step + 1,
                epoch: self.state.epoch,
                sentences: sentences.len(),
                loss,
            });
        }
        self.adam.step(&mut self.parser.store, &grads)?;
        self.state.step += 1;
        self.state.record_loss(loss);
        self.state.offset += 1;
        if self.state.offset == self.batches.len() {
            self.state.epoch += 1;
            self.state.offset = 0;
            self.batches = batch_by_tokens(self.train, self.config.batch_tokens, epoch_seed(self.state.seed, self.state.epoch))?;
        }
        Ok(loss)
    }

    /// Scores the dev set, logs a metrics row, and keeps the parameters on improvement.
    pub fn validate(&mut self) -> Result<MetricsRow> {
        let report = evaluate_dev(&self.parser, self.dev, self.config.include_tops)?;
        let row = MetricsRow {
            step: self.state.step,
            train_loss: self.state.take_mean_loss(),
            dev_uf1: report.as_ref().map(EvalReport::uf),
            dev_lf1: report.as_ref().map(EvalReport::lf),
        };
        self.log.push(row);
        info!(
            "step {} loss {:.4} dev UF {:?} LF {:?}",
            row.step, row.train_loss, row.dev_uf1, row.dev_lf1
        );
        if let Some(lf) = row.dev_lf1 {
            if self.state.observe(lf) {
                self.best = Some(self.parser.store.clone());
                if let Some(dir) = &self.out {
                    self.parser.save(dir)?;
                }
            }
        }
        if let Some(dir) = &self.out {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(METRICS_FILE), metrics_tsv(&self.log))?;
            self.save_state(&dir.join(STATE_FILE))?;
        }
        Ok(row)
    }

    /// Trains until a stopping rule fires, or until `pause_at` steps when given.
    /// Returns `None` when paused.
    pub fn run(&mut self, pause_at: Option<usize>) -> Result<Option<StopReason>> {
        loop {
            if let Some(reason) = self.state.stop_reason(&self.config, self.early_stopping()) {
                debug!("stopping at step {}: {reason:?}", self.state.step);
                return Ok(Some(reason));
            }
            if pause_at.is_some_and(|p| self.state.step >= p) {
                return Ok(None);
            }
            self.step()?;
            if self.state.step.is_multiple_of(self.config.validate_every) {
                self.validate()?;
            }
        }
    }

    pub fn finish(mut self, stop: StopReason) -> Result<TrainOutcome> {
        if let Some(best) = self.best.take() {
            self.parser.store = best;
        } else if let Some(dir) = &self.out {
            self.parser.save(dir)?;
        }
        Ok(TrainOutcome {
            parser: self.parser,
            state: self.state,
            log: self.log,
            stop,
        })
    }

    /// Writes parameters, optimizer moments, counters, the best parameters, and the log.
    pub fn save_state(&self, path: &Path) -> Result<()> {
        let s = &self.state;
        let scalar = |name: &str, v: f64| (format!("state/{name}"), Tensor::scalar(v));
        let mut entries = vec![
            scalar("seed_hi", (s.seed >> 32) as f64),
            scalar("seed_lo", (s.seed & 0xffff_ffff) as f64),
            scalar("step", s.step as f64),
            scalar("epoch", s.epoch as f64),
            scalar("offset", s.offset as f64),
            scalar("best_lf1", s.best_lf1.unwrap_or(f64::NAN)),
            scalar("best_step", s.best_step as f64),
            scalar("loss_sum", s.loss_sum),
            scalar("loss_count", s.loss_count as f64),
        ];
        let mut log = Vec::with_capacity(self.log.len() * 4);
        for r in &self.log {
            log.extend([
                r.step as f64,
                r.train_loss,
                r.dev_uf1.unwrap_or(f64::NAN),
                r.dev_lf1.unwrap_or(f64::NAN),
            ]);
        }
        entries.push(("state/log".into(), Tensor::new(vec![self.log.len(), 4], log).expect("log shape")));
        for (_, p) in self.parser.store.iter() {
            entries.push((p.name.clone(), p.value.clone()));
        }
        if let Some(best) = &self.best {
            for (_, p) in best.iter() {
                entries.push((format!("best/{}", p.name), p.value.clone()));
            }
        }
        entries.extend(self.adam.export(&self.parser.store));
        let file = io::BufWriter::new(fs::File::create(path)?);
        checkpoint::write_tensors(file, entries.iter().map(|(n, t)| (n.as_str(), t)))?;
        Ok(())
    }

    /// Continues a run saved by [`Trainer::save_state`]. `parser` must have the
    /// same configuration and vocabulary; its parameters are overwritten.
    pub fn resume(
        path: &Path,
        mut parser: Parser,
        config: TrainConfig,
        train: &'a [SemanticGraph],
        dev: &'a [SemanticGraph],
    ) -> Result<Self> {
        let entries = checkpoint::read_file(path)?;
        let get = |name: &str| {
            entries
                .iter()
                .find(|(n, _)| n.strip_prefix("state/") == Some(name))
                .map(|(_, t)| t)
                .ok_or_else(|| TrainError::State(format!("missing `{name}`")))
        };
        let scalar = |name: &str| get(name).map(Tensor::item);
        let best_lf1 = scalar("best_lf1")?;
        let state = TrainState {
            seed: ((scalar("seed_hi")? as u64) << 32) | scalar("seed_lo")? as u64,
            step: scalar("step")? as usize,
            epoch: scalar("epoch")? as usize,
            offset: scalar("offset")? as usize,
            best_lf1: (!best_lf1.is_nan()).then_some(best_lf1),
            best_step: scalar("best_step")? as usize,
            loss_sum: scalar("loss_sum")?,
            loss_count: scalar("loss_count")? as usize,
        };
        let log_t = get("log")?;
        let some = |v: f64| (!v.is_nan()).then_some(v);
        let log = (0..log_t.shape()[0])
            .map(|i| {
                let r = log_t.row(i);
                MetricsRow {
                    step: r[0] as usize,
                    train_loss: r[1],
                    dev_uf1: some(r[2]),
                    dev_lf1: some(r[3]),
                }
            })
            .collect();
        checkpoint::load_into_store(&mut parser.store, &entries)?;
        let best = if entries.iter().any(|(n, _)| n.starts_with("best/")) {
            let mut store = parser.store.clone();
            let renamed: Vec<(String, Tensor)> = entries
                .iter()
                .filter_map(|(n, t)| Some((n.strip_prefix("best/")?.to_string(), t.clone())))
                .collect();
            checkpoint::load_into_store(&mut store, &renamed)?;
            Some(store)
        } else {
            None
        };
        let adam = Adam::import(parser.config.adam(), &parser.store, &entries);
        let trainer = Self::from_parts(parser, config, state, Some(adam), best, log, train, dev)?;
        if trainer.state.offset >= trainer.batches.len() {
            return Err(TrainError::State("batch offset beyond the epoch".into()));
        }
        Ok(trainer)
    }
}

/// Builds the vocabulary from `train`, initializes a parser from `seed`, and trains it.
pub fn train(
    train: &[SemanticGraph],
    dev: &[SemanticGraph],
    model: ModelConfig,
    config: TrainConfig,
    pretrained: Option<Pretrained>,
    seed: u64,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    let vocab = Vocabulary::build(train, config.min_count)?;
    let parser = Parser::new(model, vocab, pretrained, seed)?;
    let mut trainer = Trainer::new(parser, config, seed, train, dev)?;
    if let Some(dir) = out {
        trainer = trainer.with_output(dir);
    }
    let stop = trainer.run(None)?.expect("run without a pause point stops by rule");
    trainer.finish(stop)
}
