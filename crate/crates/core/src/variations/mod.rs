//! Architecture-variation study: seeded training replicas per variant,
//! compared against the baseline with rank-sum tests.

mod rank_sum;

use std::fmt::Write as _;

use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::SemanticGraph;
use crate::model::{parse_pairs, ConfigError, ModelConfig};
use crate::train::{apply_setting, evaluate_dev, train, TrainConfig};

pub use rank_sum::{format_p, midranks, rank_sum, rank_sum_with, Method, RankSum, RankSumError, Tail, EXACT_LIMIT};

pub const BASELINE: &str = "baseline";

/// Named variants and the configuration lines each applies.
pub const BUILTIN_VARIANTS: &[(&str, &[(&str, &str)])] = &[
    ("unfactorized", &[("factorized", "false")]),
    ("no-hidden-edge", &[("edge_hidden_layer", "false")]),
    ("no-hidden-label", &[("label_hidden_layer", "false")]),
    ("no-hidden-both", &[("hidden_layers", "false")]),
    ("bilinear", &[("classifier_kind", "bilinear")]),
    ("label-nondiagonal", &[("label_diagonal", "false")]),
    ("edge-diagonal", &[("edge_diagonal", "true")]),
    ("relu", &[("nonlinearity", "relu")]),
];

pub const DEFAULT_STEPS: usize = 3000;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("a study needs at least 2 replicas, got {0}")]
    TooFewReplicas(usize),
    #[error("{seeds} seeds listed for {replicas} replicas")]
    SeedCount { seeds: usize, replicas: usize },
    #[error("variant `{0}` listed twice")]
    DuplicateVariant(String),
    #[error("a study needs a non-empty dev set")]
    NoDev,
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantSpec {
    pub name: String,
    pub settings: Vec<(String, String)>,
}

impl VariantSpec {
    pub fn baseline() -> Self {
        VariantSpec {
            name: BASELINE.to_string(),
            settings: Vec::new(),
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        BUILTIN_VARIANTS.iter().find(|(n, _)| *n == name).map(|(n, s)| VariantSpec {
            name: n.to_string(),
            settings: s.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        })
    }

    pub fn apply(&self, base: &ModelConfig) -> Result<ModelConfig, ConfigError> {
        let mut c = base.clone();
        for (k, v) in &self.settings {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyPlan {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Compared variants; the baseline is always trained in addition.
    pub variants: Vec<VariantSpec>,
    /// One seed per replica, shared by every variant.
    pub seeds: Vec<u64>,
    pub tail: Tail,
    pub jobs: usize,
}

impl Default for StudyPlan {
    fn default() -> Self {
        StudyPlan {
            model: ModelConfig::default(),
            train: TrainConfig {
                max_steps: DEFAULT_STEPS,
                ..TrainConfig::default()
            },
            variants: Vec::new(),
            seeds: vec![1, 2],
            tail: Tail::TwoSided,
            jobs: 1,
        }
    }
}

impl StudyPlan {
    /// Reads a manifest of `key=value` lines:
    ///
    /// ```text
    /// replicas=20
    /// seed=1            # first of consecutive replica seeds
    /// seeds=3,5,8       # or an explicit list
    /// steps=3000
    /// jobs=4
    /// tail=two-sided
    /// variant=relu
    /// variant=wide lstm_hidden=800 edge_hidden=800
    /// config.use_char=true
    /// ```
    ///
    /// `config.<key>` lines set model or training options for every run.
    pub fn from_manifest(text: &str) -> Result<Self, StudyError> {
        let mut plan = StudyPlan::default();
        let mut replicas = None;
        let mut first_seed = 1u64;
        let mut seeds: Option<Vec<u64>> = None;
        let bad = |k: &str, v: &str| ConfigError::BadValue {
            key: k.to_string(),
            value: v.to_string(),
        };
        for (k, v) in parse_pairs(text)? {
            match k.as_str() {
                "replicas" => replicas = Some(v.parse::<usize>().map_err(|_| bad(&k, &v))?),
                "seed" => first_seed = v.parse().map_err(|_| bad(&k, &v))?,
                "seeds" => {
                    seeds = Some(
                        v.split(',')
                            .map(|s| s.trim().parse())
                            .collect::<Result<_, _>>()
                            .map_err(|_| bad(&k, &v))?,
                    )
                }
                "steps" => plan.train.max_steps = v.parse().map_err(|_| bad(&k, &v))?,
                "jobs" => plan.jobs = v.parse().map_err(|_| bad(&k, &v))?,
                "tail" => plan.tail = v.parse().map_err(|_| bad(&k, &v))?,
                "variant" => plan.variants.push(parse_variant(&v)?),
                _ => match k.strip_prefix("config.") {
                    Some(key) => apply_setting(key, &v, &mut plan.model, &mut plan.train)?,
                    None => return Err(ConfigError::UnknownKey(k).into()),
                },
            }
        }
        plan.seeds = match (seeds, replicas) {
            (Some(s), Some(r)) if s.len() != r => {
                return Err(StudyError::SeedCount {
                    seeds: s.len(),
                    replicas: r,
                })
            }
            (Some(s), _) => s,
            (None, r) => {
                let r = r.unwrap_or(2) as u64;
                (first_seed..first_seed + r).collect()
            }
        };
        plan.check()?;
        Ok(plan)
    }

    pub fn replicas(&self) -> usize {
        self.seeds.len()
    }

    pub fn check(&self) -> Result<(), StudyError> {
        if self.replicas() < 2 {
            return Err(StudyError::TooFewReplicas(self.replicas()));
        }
        let mut names = vec![BASELINE];
        for v in &self.variants {
            if names.contains(&v.name.as_str()) {
                return Err(StudyError::DuplicateVariant(v.name.clone()));
            }
            names.push(&v.name);
            v.apply(&self.model)?;
        }
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Baseline first, then the listed variants.
    pub fn all_variants(&self) -> Vec<VariantSpec> {
        std::iter::once(VariantSpec::baseline()).chain(self.variants.iter().cloned()).collect()
    }
}

/// `name` alone picks a built-in variant; `name key=value ...` defines one.
fn parse_variant(text: &str) -> Result<VariantSpec, StudyError> {
    let mut parts = text.split_whitespace();
    let name = parts.next().ok_or_else(|| StudyError::UnknownVariant(String::new()))?;
    let settings: Vec<(String, String)> = parts
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| ConfigError::Syntax {
                    line: 0,
                    text: p.to_string(),
                })
        })
        .collect::<Result<_, _>>()?;
    if settings.is_empty() {
        VariantSpec::builtin(name).ok_or_else(|| StudyError::UnknownVariant(name.to_string()))
    } else {
        Ok(VariantSpec {
            name: name.to_string(),
            settings,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaResult {
    pub variant: String,
    pub replica: usize,
    pub seed: u64,
    /// Dev LF1 of the returned parser, or the training error.
    pub lf1: Result<f64, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub variant: String,
    pub test: RankSum,
}

impl Comparison {
    /// `(W=339; p<.001)`
    pub fn summary(&self) -> String {
        format!("(W={}; {})", self.test.w, format_p(self.test.p))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyResult {
    pub replicas: Vec<ReplicaResult>,
    pub comparisons: Vec<Comparison>,
    /// Variants with fewer than two successful replicas.
    pub excluded: Vec<String>,
}

impl StudyResult {
    pub fn scores(&self, variant: &str) -> Vec<f64> {
        self.replicas
            .iter()
            .filter(|r| r.variant == variant)
            .filter_map(|r| r.lf1.as_ref().ok().copied())
            .collect()
    }

    /// `variant  replica  seed  lf1`, with `NA` for failed replicas.
    pub fn replica_table(&self) -> String {
        let mut out = String::from("variant\treplica\tseed\tlf1\n");
        for r in &self.replicas {
            let lf1 = r.lf1.as_ref().map_or_else(|_| "NA".to_string(), |x| format!("{x:.6}"));
            writeln!(out, "{}\t{}\t{}\t{}", r.variant, r.replica, r.seed, lf1).unwrap();
        }
        out
    }

    /// `variant  W  p`, one row per variant compared with the baseline.
    pub fn comparison_table(&self) -> String {
        let mut out = String::from("variant\tW\tp\n");
        for c in &self.comparisons {
            writeln!(out, "{}\t{}\t{:.6}", c.variant, c.test.w, c.test.p).unwrap();
        }
        out
    }
}

/// Trains `replicas × (variants + 1)` parsers on a pool of `plan.jobs`
/// workers and compares each variant's dev LF1 scores with the baseline's.
pub fn run_study(plan: &StudyPlan, train_set: &[SemanticGraph], dev: &[SemanticGraph]) -> Result<StudyResult, StudyError> {
    plan.check()?;
    if dev.is_empty() {
        return Err(StudyError::NoDev);
    }
    let variants = plan.all_variants();
    let mut jobs = Vec::new();
    for v in &variants {
        for (replica, &seed) in plan.seeds.iter().enumerate() {
            jobs.push((v, replica, seed));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.jobs.max(1))
        .build()
        .map_err(|e| StudyError::Pool(e.to_string()))?;
    let replicas: Vec<ReplicaResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(v, replica, seed)| {
                let lf1 = run_replica(plan, v, seed, train_set, dev);
                if let Err(e) = &lf1 {
                    warn!("{} replica {replica} (seed {seed}) failed: {e}", v.name);
                }
                ReplicaResult {
                    variant: v.name.clone(),
                    replica,
                    seed,
                    lf1,
                }
            })
            .collect()
    });

    let mut result = StudyResult {
        replicas,
        comparisons: Vec::new(),
        excluded: Vec::new(),
    };
    for v in &variants {
        if result.scores(&v.name).len() < 2 {
            warn!("excluding {}: fewer than 2 successful replicas", v.name);
            result.excluded.push(v.name.clone());
        }
    }
    if result.excluded.iter().any(|n| n == BASELINE) {
        return Ok(result);
    }
    let base = result.scores(BASELINE);
    for v in &plan.variants {
        if result.excluded.contains(&v.name) {
            continue;
        }
        let test = rank_sum_with(&result.scores(&v.name), &base, plan.tail).expect("two finite scores per side");
        result.comparisons.push(Comparison {
            variant: v.name.clone(),
            test,
        });
    }
    Ok(result)
}

fn run_replica(
    plan: &StudyPlan,
    variant: &VariantSpec,
    seed: u64,
    train_set: &[SemanticGraph],
    dev: &[SemanticGraph],
) -> Result<f64, String> {
    let model = variant.apply(&plan.model).map_err(|e| e.to_string())?;
    let outcome = train(train_set, dev, model, plan.train.clone(), None, seed, None).map_err(|e| e.to_string())?;
    let report = evaluate_dev(&outcome.parser, dev, plan.train.include_tops).map_err(|e| e.to_string())?;
    Ok(report.expect("dev set is non-empty").lf())
}
