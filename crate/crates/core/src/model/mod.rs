//! The factorized biaffine semantic dependency parser.

mod config;
mod decode;
mod loss;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::checkpoint::{self, CheckpointError};
use crate::autodiff::{uniform, ParamGrads, ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use crate::data::{SemanticGraph, VocabError, Vocabulary};
use crate::layers::{
    apply_dropout, drop_decisions, BiLstm, BiaffineParams, CharDropout, CharEncoder,
    EmbeddingTable, Fnn, LayerError, Linear, Nonlinearity, Pretrained, PretrainedEmbedding,
    PretrainedWords,
};

pub use config::{parse_pairs, ClassifierKind, ConfigError, ModelConfig};
pub use decode::{arcs_to_graph, decode_factorized, decode_unfactorized, Arc};
pub use loss::{factorized_targets, unfactorized_targets, Targets};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.json";
pub const CONFIG_FILE: &str = "config.txt";
pub const PRETRAINED_WORDS_FILE: &str = "pretrained.words";
const GLOVE_TABLE: &str = "glove/table";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("vocabulary: {0}")]
    Vocab(#[from] VocabError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model files do not match: {0}")]
    Mismatch(String),
    #[error("cannot score an empty sentence")]
    EmptySentence,
    #[error("interpolation {0} outside (0,1)")]
    Interpolation(f64),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Vocabulary indices of one sentence's tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Inputs {
    pub words: Vec<usize>,
    pub pos: Vec<usize>,
    pub lemmas: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
    pub pretrained: Vec<Option<usize>>,
}

impl Inputs {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Score variables of one sentence on a tape. Both are indexed
/// `[head][dependent]` over `size = n + 1` positions, ROOT first.
#[derive(Clone, Copy, Debug)]
pub struct ScoreVars {
    /// `size × size`; absent for the unfactorized parser.
    pub edge: Option<Var>,
    /// `size × size × classes`.
    pub label: Var,
    pub size: usize,
}

/// Scores of one sentence and the graph decoded from them.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub edge_scores: Option<Tensor>,
    pub label_scores: Tensor,
    pub decoded: SemanticGraph,
}

/// Head/dependent projections feeding one pairwise classifier.
#[derive(Clone, Debug)]
struct Classifier {
    head: Option<Fnn>,
    dep: Option<Fnn>,
    scorer: BiaffineParams,
    dropout: f64,
}

impl Classifier {
    #[allow(clippy::too_many_arguments)]
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
        input: usize,
        hidden: Option<usize>,
        nonlinearity: Nonlinearity,
        classes: usize,
        diagonal: bool,
        affine: bool,
        dropout: f64,
    ) -> Self {
        let (head, dep, dim) = match hidden {
            Some(h) => (
                Some(Fnn::new(store, &format!("{name}/head"), rng, input, h, nonlinearity)),
                Some(Fnn::new(store, &format!("{name}/dep"), rng, input, h, nonlinearity)),
                h,
            ),
            None => (None, None, input),
        };
        let scorer = BiaffineParams::new(store, &format!("{name}/scorer"), dim, classes, diagonal, affine);
        Classifier {
            head,
            dep,
            scorer,
            dropout,
        }
    }

    /// `[head][dependent][class]` scores over the rows of `r`.
    fn scores<R: Rng + ?Sized>(&self, tape: &mut Tape<'_>, r: Var, training: bool, rng: &mut R) -> Result<Var> {
        let head = match &self.head {
            Some(f) => f.forward(tape, r)?,
            None => r,
        };
        let head = apply_dropout(tape, head, self.dropout, training, rng)?;
        let dep = match &self.dep {
            Some(f) => f.forward(tape, r)?,
            None => r,
        };
        let dep = apply_dropout(tape, dep, self.dropout, training, rng)?;
        let by_dep = self.scorer.forward(tape, dep, head)?;
        Ok(tape.swap_leading(by_dep)?)
    }
}

#[derive(Clone, Debug)]
pub struct Parser {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pretrained_words: Option<PretrainedWords>,
    word: EmbeddingTable,
    pos: EmbeddingTable,
    lemma: Option<EmbeddingTable>,
    chars: Option<CharEncoder>,
    glove: Option<(PretrainedEmbedding, Linear)>,
    root: ParamId,
    encoder: BiLstm,
    edge: Option<Classifier>,
    label: Classifier,
}

impl Parser {
    /// Builds a freshly initialized parser. Parameter initialization is a
    /// function of `seed` alone.
    pub fn new(config: ModelConfig, vocab: Vocabulary, pretrained: Option<Pretrained>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let word = EmbeddingTable::new(&mut store, "word", &mut rng, vocab.words.len(), c.word_dim);
        let pos = EmbeddingTable::new(&mut store, "pos", &mut rng, vocab.pos.len(), c.pos_dim);
        let lemma = c
            .use_lemma
            .then(|| EmbeddingTable::new(&mut store, "lemma", &mut rng, vocab.lemmas.len(), c.lemma_dim));
        let chars = c.use_char.then(|| {
            CharEncoder::new(
                &mut store,
                "char",
                &mut rng,
                vocab.chars.len(),
                c.char_dim,
                c.char_hidden,
                c.char_out,
            )
        });
        let (glove, pretrained_words) = match pretrained {
            Some(p) => {
                let dim = p.dim();
                let table = PretrainedEmbedding::new(&mut store, "glove", &mut rng, p.vectors, c.pretrained_unk);
                let linear = Linear::new(&mut store, "glove/linear", &mut rng, dim, c.glove_dim);
                (Some((table, linear)), Some(p.words))
            }
            None => (None, None),
        };
        let din = c.input_dim(glove.is_some());
        let root = store.add("root", uniform(&mut rng, &[1, din], (3.0 / din as f64).sqrt()), false);
        let encoder = BiLstm::new(&mut store, "lstm", &mut rng, din, c.lstm_hidden, c.lstm_layers);
        let r = encoder.output_dim();
        let affine = c.classifier_kind == ClassifierKind::Biaffine;
        let labels = vocab.labels.len();
        let edge = c.factorized.then(|| {
            Classifier::new(
                &mut store,
                "edge",
                &mut rng,
                r,
                c.edge_hidden_layer.then_some(c.edge_hidden),
                c.nonlinearity,
                1,
                c.edge_diagonal,
                affine,
                c.edge_drop,
            )
        });
        let label = Classifier::new(
            &mut store,
            "label",
            &mut rng,
            r,
            c.label_hidden_layer.then_some(c.label_hidden),
            c.nonlinearity,
            if c.factorized { labels } else { labels + 1 },
            c.label_diagonal,
            affine,
            c.label_drop,
        );
        Ok(Parser {
            config,
            vocab,
            store,
            pretrained_words,
            word,
            pos,
            lemma,
            chars,
            glove,
            root,
            encoder,
            edge,
            label,
        })
    }

    pub fn has_pretrained(&self) -> bool {
        self.glove.is_some()
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim(self.has_pretrained())
    }

    pub fn inputs(&self, sentence: &SemanticGraph) -> Inputs {
        let v = &self.vocab;
        let t = sentence.tokens();
        Inputs {
            words: t.iter().map(|t| v.words.lookup(&t.form)).collect(),
            pos: t.iter().map(|t| v.pos.lookup(&t.pos)).collect(),
            lemmas: t.iter().map(|t| v.lemmas.lookup(&t.lemma)).collect(),
            chars: t.iter().map(|t| v.char_ids(&t.form)).collect(),
            pretrained: t
                .iter()
                .map(|t| self.pretrained_words.as_ref().and_then(|p| p.lookup(&t.form)))
                .collect(),
        }
    }

    /// Per-token input vectors, `n × input_dim`. While training, word,
    /// pretrained, and character vectors are dropped together per token;
    /// tags and lemmas are dropped on their own.
    pub fn embed_sequence<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        inputs: &Inputs,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let n = inputs.len();
        if n == 0 {
            return Err(ModelError::EmptySentence);
        }
        let c = &self.config;
        let decide = |rng: &mut R, rate: f64| {
            if training {
                drop_decisions(rng, n, rate)
            } else {
                vec![false; n]
            }
        };
        let word_group = decide(rng, c.word_drop);
        let pos_drop = decide(rng, c.pos_drop);
        let lemma_drop = decide(rng, c.lemma_drop);

        let mut parts = vec![self.word.embed(tape, &inputs.words, &word_group)?];
        if let Some((table, linear)) = &self.glove {
            let g = table.embed(tape, &inputs.pretrained, &word_group)?;
            parts.push(linear.forward(tape, g)?);
        }
        if let Some(enc) = &self.chars {
            let rates = CharDropout {
                ff: c.char_ff_drop,
                recur: c.char_recur_drop,
                linear: c.char_linear_drop,
            };
            parts.push(enc.encode(tape, &inputs.chars, &word_group, rates, training, rng)?);
        }
        parts.push(self.pos.embed(tape, &inputs.pos, &pos_drop)?);
        if let Some(table) = &self.lemma {
            parts.push(table.embed(tape, &inputs.lemmas, &lemma_drop)?);
        }
        Ok(tape.concat(&parts, 1)?)
    }

    /// Prepends the learned ROOT vector and runs the BiLSTM: `(n+1) × 2h`.
    pub fn encode<R: Rng + ?Sized>(&self, tape: &mut Tape<'_>, x: Var, training: bool, rng: &mut R) -> Result<Var> {
        let root = tape.param(self.root);
        let with_root = tape.concat(&[root, x], 0)?;
        let c = &self.config;
        Ok(self
            .encoder
            .forward(tape, with_root, c.lstm_ff_drop, c.lstm_recur_drop, training, rng)?)
    }

    pub fn score<R: Rng + ?Sized>(&self, tape: &mut Tape<'_>, r: Var, training: bool, rng: &mut R) -> Result<ScoreVars> {
        let size = tape.shape(r)[0];
        let edge = match &self.edge {
            Some(cls) => {
                let s = cls.scores(tape, r, training, rng)?;
                Some(tape.reshape(s, &[size, size])?)
            }
            None => None,
        };
        let label = self.label.scores(tape, r, training, rng)?;
        Ok(ScoreVars { edge, label, size })
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        sentence: &SemanticGraph,
        training: bool,
        rng: &mut R,
    ) -> Result<ScoreVars> {
        let inputs = self.inputs(sentence);
        let x = self.embed_sequence(tape, &inputs, training, rng)?;
        let r = self.encode(tape, x, training, rng)?;
        self.score(tape, r, training, rng)
    }

    pub fn targets(&self, gold: &SemanticGraph) -> Targets {
        if self.config.factorized {
            factorized_targets(gold, &self.vocab.labels)
        } else {
            unfactorized_targets(gold, &self.vocab.labels)
        }
    }

    /// `edge_weight · mean edge loss + label_weight · mean label loss`.
    fn objective(
        &self,
        tape: &mut Tape<'_>,
        scores: &ScoreVars,
        targets: &Targets,
        edge_weight: f64,
        label_weight: f64,
    ) -> Result<Var> {
        let m = scores.size;
        let classes = tape.shape(scores.label)[2];
        let flat = tape.reshape(scores.label, &[m * m, classes])?;
        let label = tape.softmax_xent(flat, &targets.label_gold, &targets.label_mask)?;
        let label = tape.scale(label, label_weight)?;
        match scores.edge {
            Some(edge) => {
                let e = tape.sigmoid_xent(edge, &targets.edge_gold, &targets.edge_mask)?;
                let e = tape.scale(e, edge_weight)?;
                Ok(tape.add(e, label)?)
            }
            None => Ok(label),
        }
    }

    /// Interpolated loss of one sentence: `λ·label + (1−λ)·edge`, each a
    /// mean over its cells. The label term covers gold edges only; the
    /// unfactorized parser has the label term alone, over every cell.
    pub fn loss(&self, tape: &mut Tape<'_>, scores: &ScoreVars, gold: &SemanticGraph, lambda: f64) -> Result<Var> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(ModelError::Interpolation(lambda));
        }
        if gold.len() + 1 != scores.size {
            return Err(ModelError::Mismatch(format!(
                "{} scored positions for a {}-token sentence",
                scores.size,
                gold.len()
            )));
        }
        let targets = self.targets(gold);
        if self.config.factorized {
            self.objective(tape, scores, &targets, 1.0 - lambda, lambda)
        } else {
            self.objective(tape, scores, &targets, 0.0, 1.0)
        }
    }

    /// Training loss of a batch, averaging over all edge cells and all
    /// label cells of the batch rather than per sentence. Every parameter
    /// is placed on the tape so that each receives a (possibly zero) gradient.
    pub fn batch_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        batch: &[&SemanticGraph],
        rng: &mut R,
    ) -> Result<Var> {
        for id in self.store.ids() {
            tape.param(id);
        }
        let lambda = self.config.interpolation;
        let sentences: Vec<&SemanticGraph> = batch.iter().copied().filter(|g| !g.is_empty()).collect();
        let targets: Vec<Targets> = sentences.iter().map(|g| self.targets(g)).collect();
        let edge_total: usize = targets.iter().map(Targets::edge_cells).sum();
        let label_total: usize = targets.iter().map(Targets::label_cells).sum();
        let share = |cells: usize, total: usize| if total == 0 { 0.0 } else { cells as f64 / total as f64 };

        let mut total = tape.constant(Tensor::scalar(0.0));
        for (g, t) in sentences.iter().zip(&targets) {
            let scores = self.forward(tape, g, true, rng)?;
            let (we, wl) = if self.config.factorized {
                (
                    (1.0 - lambda) * share(t.edge_cells(), edge_total),
                    lambda * share(t.label_cells(), label_total),
                )
            } else {
                (0.0, share(t.label_cells(), label_total))
            };
            let term = self.objective(tape, &scores, t, we, wl)?;
            total = tape.add(total, term)?;
        }
        Ok(total)
    }

    /// Loss value and parameter gradients of one training batch.
    pub fn gradients<R: Rng + ?Sized>(&self, batch: &[&SemanticGraph], rng: &mut R) -> Result<(f64, ParamGrads)> {
        let mut tape = Tape::with_params(&self.store);
        let loss = self.batch_loss(&mut tape, batch, rng)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?.into_param_grads(&self.store);
        Ok((value, grads))
    }

    /// Inference-mode scores and decoded graph.
    pub fn score_set(&self, sentence: &SemanticGraph) -> Result<ScoreSet> {
        let mut tape = Tape::with_params(&self.store);
        // Inference draws no random numbers; the generator only satisfies the signature.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scores = self.forward(&mut tape, sentence, false, &mut rng)?;
        let edge_scores = scores.edge.map(|e| tape.value(e).clone());
        let label_scores = tape.value(scores.label).clone();
        let arcs = match &edge_scores {
            Some(e) => decode_factorized(e, &label_scores),
            None => decode_unfactorized(&label_scores),
        };
        let decoded = arcs_to_graph(sentence, &arcs, &self.vocab.labels);
        Ok(ScoreSet {
            edge_scores,
            label_scores,
            decoded,
        })
    }

    /// Predicted graph over `sentence`'s tokens; its own edges are ignored.
    pub fn parse(&self, sentence: &SemanticGraph) -> Result<SemanticGraph> {
        if sentence.is_empty() {
            return Ok(sentence.unannotated());
        }
        Ok(self.score_set(sentence)?.decoded)
    }

    /// Parses sentences in parallel; output order follows input order.
    pub fn parse_all(&self, sentences: &[SemanticGraph]) -> Result<Vec<SemanticGraph>> {
        sentences.par_iter().map(|s| self.parse(s)).collect()
    }

    /// Writes the checkpoint, vocabulary, config sidecar, and pretrained word list to `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        checkpoint::save_store(&self.store, &dir.join(CHECKPOINT_FILE))?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        fs::write(dir.join(CONFIG_FILE), self.config.to_sidecar())?;
        let words = dir.join(PRETRAINED_WORDS_FILE);
        match &self.pretrained_words {
            Some(p) => fs::write(&words, p.words().join("\n") + "\n")?,
            None if words.exists() => fs::remove_file(&words)?,
            None => {}
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config = ModelConfig::from_sidecar(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
        let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        let mut entries = checkpoint::read_file(&dir.join(CHECKPOINT_FILE))?;
        let words_path = dir.join(PRETRAINED_WORDS_FILE);
        let pretrained = if words_path.exists() {
            let words: Vec<String> = fs::read_to_string(&words_path)?.lines().map(str::to_string).collect();
            let pos = entries
                .iter()
                .position(|(n, _)| n == GLOVE_TABLE)
                .ok_or_else(|| ModelError::Mismatch("pretrained word list without a pretrained table".into()))?;
            let vectors = entries.remove(pos).1;
            Some(Pretrained::new(words, vectors).map_err(|e| ModelError::Mismatch(e.to_string()))?)
        } else {
            None
        };
        let mut parser = Parser::new(config, vocab, pretrained, 0)?;
        let expected = parser.store.len() - usize::from(parser.has_pretrained());
        if entries.len() != expected {
            return Err(ModelError::Mismatch(format!(
                "checkpoint holds {} tensors, the configured model has {expected}",
                entries.len()
            )));
        }
        if let Some((table, _)) = &parser.glove {
            let vectors = parser.store.value(table.table).clone();
            entries.push((GLOVE_TABLE.to_string(), vectors));
        }
        checkpoint::load_into_store(&mut parser.store, &entries)?;
        Ok(parser)
    }
}
