//! `sdp`: train, run, and evaluate the semantic dependency parser.
//!
//! Exit codes: 0 success, 1 input data errors, 2 configuration or model
//! mismatch errors, 3 training divergence, 64 usage errors.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser as ClapParser, Subcommand};
use log::info;

use sdp_core::autodiff::gradcheck::DEFAULT_TOLERANCE;
use sdp_core::checks::gradient_suite;
use sdp_core::data::{read_sdp, write_sdp, SemanticGraph, Vocabulary};
use sdp_core::eval::evaluate;
use sdp_core::layers::read_pretrained;
use sdp_core::model::{ModelConfig, ModelError, Parser};
use sdp_core::train::{apply_setting, parse_run_config, TrainConfig, TrainError, Trainer, STATE_FILE};
use sdp_core::variations::{run_study, StudyError, StudyPlan};

const USAGE: u8 = 64;

#[derive(ClapParser)]
#[command(name = "sdp", version, about = "Semantic dependency graph parser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a parser and write it to --out.
    Train(TrainArgs),
    /// Parse sentences with a trained model.
    Parse(ParseArgs),
    /// Score predicted graphs against gold graphs.
    Eval(EvalArgs),
    /// Run an architecture-variation study.
    Variants(VariantsArgs),
    /// Check every gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Check that every graph in a file is acyclic.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Training data in SDP format.
    #[arg(long)]
    train: PathBuf,
    /// Development data for validation and early stopping [default: none].
    #[arg(long)]
    dev: Option<PathBuf>,
    /// key=value settings file; flags override it [default: built-in settings].
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the model, vocabulary, config sidecar, and metrics.
    #[arg(long)]
    out: PathBuf,
    /// Random seed; falls back to SDP_SEED.
    #[arg(long, env = "SDP_SEED", default_value_t = 1)]
    seed: u64,
    /// Add the character-level word encoder.
    #[arg(long)]
    use_char: bool,
    /// Add lemma embeddings.
    #[arg(long)]
    use_lemma: bool,
    /// Pretrained word vectors (text, one word and its values per line) [default: none].
    #[arg(long)]
    glove: Option<PathBuf>,
    /// Extra key=value setting; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    settings: Vec<String>,
    /// Continue from the training state saved in --out.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ParseArgs {
    /// Directory written by `sdp train`.
    #[arg(long)]
    model: PathBuf,
    /// Sentences in SDP format, annotated or with four columns (id, form, lemma, POS).
    #[arg(long)]
    input: PathBuf,
    /// Where to write predicted graphs [default: stdout].
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Score only word-to-word edges, leaving top nodes out.
    #[arg(long)]
    no_tops: bool,
}

#[derive(Args)]
struct VariantsArgs {
    /// Study manifest (key=value lines).
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// Directory for replicas.tsv and comparisons.tsv.
    #[arg(long)]
    out: PathBuf,
    /// Parallel training workers [default: manifest `jobs`, else 1].
    #[arg(long)]
    jobs: Option<usize>,
    /// Training steps per replica [default: manifest `steps`, else 3000].
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, env = "SDP_SEED", default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    input: PathBuf,
}

/// An error with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn data(message: impl ToString) -> Self {
        Failure {
            code: 1,
            message: message.to_string(),
        }
    }

    fn config(message: impl ToString) -> Self {
        Failure {
            code: 2,
            message: message.to_string(),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(_) => Failure::data(e),
            _ => Failure::config(e),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => Failure {
                code: 3,
                message: e.to_string(),
            },
            TrainError::Model(m) => m.into(),
            TrainError::Batch(_) | TrainError::Eval(_) | TrainError::EmptyTrain | TrainError::Vocab(_) | TrainError::Io(_) => {
                Failure::data(e)
            }
            _ => Failure::config(e),
        }
    }
}

type Outcome = Result<(), Failure>;

fn read_graphs(path: &Path) -> Result<Vec<SemanticGraph>, Failure> {
    let file = File::open(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    read_sdp(BufReader::new(file)).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn train(args: TrainArgs) -> Outcome {
    let mut model = ModelConfig::default();
    let mut schedule = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        parse_run_config(&text, &mut model, &mut schedule).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    }
    if args.use_char {
        model.use_char = true;
    }
    if args.use_lemma {
        model.use_lemma = true;
    }
    for s in &args.settings {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Failure::config(format!("--set expects KEY=VALUE, got `{s}`")))?;
        apply_setting(k.trim(), v.trim(), &mut model, &mut schedule).map_err(Failure::config)?;
    }
    model.validate().map_err(Failure::config)?;
    schedule.validate().map_err(Failure::config)?;

    let train_set = read_graphs(&args.train)?;
    let dev = match &args.dev {
        Some(p) => read_graphs(p)?,
        None => Vec::new(),
    };
    let pretrained = match &args.glove {
        Some(p) => {
            let file = File::open(p).map_err(|e| Failure::data(format!("{}: {e}", p.display())))?;
            Some(read_pretrained(BufReader::new(file)).map_err(|e| Failure::data(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    info!(
        "{} training and {} dev sentences, seed {}",
        train_set.len(),
        dev.len(),
        args.seed
    );
    let vocab = Vocabulary::build(&train_set, schedule.min_count).map_err(Failure::data)?;
    let parser = Parser::new(model, vocab, pretrained, args.seed)?;
    let state = args.out.join(STATE_FILE);
    let trainer = if args.resume && state.exists() {
        Trainer::resume(&state, parser, schedule, &train_set, &dev)?
    } else {
        Trainer::new(parser, schedule, args.seed, &train_set, &dev)?
    };
    let mut trainer = trainer.with_output(&args.out);
    let stop = trainer.run(None)?.expect("no pause point");
    let outcome = trainer.finish(stop)?;
    println!("stopped={:?}", outcome.stop);
    println!("steps={}", outcome.state.step);
    if let Some(best) = outcome.state.best_lf1 {
        println!("best_dev_lf1={best:.6}");
        println!("best_step={}", outcome.state.best_step);
    }
    Ok(())
}

fn parse(args: ParseArgs) -> Outcome {
    let parser = Parser::load(&args.model)?;
    let input = read_graphs(&args.input)?;
    let predicted = parser.parse_all(&input)?;
    let write = |sink: &mut dyn Write| -> io::Result<()> {
        if !predicted.is_empty() {
            write_sdp(&predicted, &mut *sink)?;
        }
        sink.flush()
    };
    let result = match &args.output {
        Some(p) => File::create(p).and_then(|f| write(&mut BufWriter::new(f))),
        None => write(&mut io::stdout().lock()),
    };
    result.map_err(|e| Failure::data(format!("writing output: {e}")))
}

fn eval(args: EvalArgs) -> Outcome {
    let gold = read_graphs(&args.gold)?;
    let pred = read_graphs(&args.pred)?;
    let report = evaluate(&gold, &pred, !args.no_tops).map_err(Failure::data)?;
    print!("{}", report.table());
    print!("{}", report.key_values());
    Ok(())
}

fn variants(args: VariantsArgs) -> Outcome {
    let text = fs::read_to_string(&args.manifest)
        .map_err(|e| Failure::config(format!("{}: {e}", args.manifest.display())))?;
    let mut plan = StudyPlan::from_manifest(&text).map_err(|e| Failure::config(format!("{}: {e}", args.manifest.display())))?;
    if let Some(j) = args.jobs {
        plan.jobs = j;
    }
    if let Some(s) = args.steps {
        plan.train.max_steps = s;
    }
    let train_set = read_graphs(&args.train)?;
    let dev = read_graphs(&args.dev)?;
    let result = run_study(&plan, &train_set, &dev).map_err(|e| match e {
        StudyError::NoDev => Failure::data(e),
        _ => Failure::config(e),
    })?;
    fs::create_dir_all(&args.out).map_err(Failure::data)?;
    fs::write(args.out.join("replicas.tsv"), result.replica_table()).map_err(Failure::data)?;
    fs::write(args.out.join("comparisons.tsv"), result.comparison_table()).map_err(Failure::data)?;
    print!("{}", result.comparison_table());
    for name in &result.excluded {
        eprintln!("excluded {name}: fewer than 2 successful replicas");
    }
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Outcome {
    let entries = gradient_suite(args.seed)?;
    let mut failed = 0;
    println!("check\tchecked\tmax_rel_error\tresult");
    for e in &entries {
        let ok = e.report.passes(DEFAULT_TOLERANCE);
        failed += usize::from(!ok);
        println!(
            "{}\t{}\t{:.3e}\t{}",
            e.name,
            e.report.checked,
            e.report.max_rel_error,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if failed > 0 {
        return Err(Failure::data(format!("{failed} gradient checks exceed {DEFAULT_TOLERANCE:e}")));
    }
    Ok(())
}

fn validate(args: ValidateArgs) -> Outcome {
    let graphs = read_graphs(&args.input)?;
    let mut bad = 0;
    for (i, g) in graphs.iter().enumerate() {
        let name = g.id.clone().unwrap_or_else(|| format!("sentence {}", i + 1));
        match g.find_cycle() {
            None => println!("{name}: valid DAG"),
            Some(cycle) => {
                bad += 1;
                let path: Vec<String> = cycle.iter().map(usize::to_string).collect();
                println!("{name}: cycle {}", path.join(" -> "));
            }
        }
    }
    if bad > 0 {
        return Err(Failure::data(format!("{bad} of {} graphs contain cycles", graphs.len())));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Parse(a) => parse(a),
        Command::Eval(a) => eval(a),
        Command::Variants(a) => variants(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("sdp: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
