use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anchorscore_core::corpus::{
    augment, generate_corpus, load_augmented, load_corpus, save_augmented, save_corpus, AugmentConfig, GenConfig,
    Severity,
};
use anchorscore_core::experiment::{run_experiment, ExperimentConfig, StageConfig};
use anchorscore_core::pipeline::{evaluate, predict, train_anchor, train_eval, write_history, LossKind};
use anchorscore_core::scorer::{load_model, save_model};
use anchorscore_core::{nmi, Error, PhoneSeq, ScoreScale};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_TRAINING: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "anchorscore", version, about = "Imbalance-robust proficiency scoring for phone sequences")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Seed overriding the one in the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration for the subcommand
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress lines on stderr
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scored corpus (JSONL)
    GenCorpus,
    /// Expand a corpus into pseudo-referenced, NMI-scored samples
    Augment(AugmentArgs),
    /// NMI between reference and hypothesis phone sequences
    Nmi(NmiArgs),
    /// Train the anchor model on augmented samples
    TrainAnchor(TrainAnchorArgs),
    /// Train an evaluation scorer against a frozen anchor
    TrainEval(TrainEvalArgs),
    /// Score a corpus with a trained model (JSONL)
    Predict(PredictArgs),
    /// RMSE, PCC and band-wise RMSE of a model on a labelled corpus
    Evaluate(EvaluateArgs),
    /// Run the end-to-end robustness experiment into a directory
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct AugmentArgs {
    /// Corpus to augment
    #[arg(long = "in")]
    input: PathBuf,
    /// Pseudo references per sample
    #[arg(long)]
    nbest: Option<usize>,
    /// Fraction of pseudo references replaced by an unrelated sentence
    #[arg(long)]
    mismatch_rate: Option<f64>,
    /// Per-phone substitution rate
    #[arg(long)]
    sub: Option<f64>,
    /// Per-phone deletion rate
    #[arg(long = "del")]
    del: Option<f64>,
    /// Per-phone insertion rate
    #[arg(long)]
    ins: Option<f64>,
    /// Scale the channel rates by a uniform draw per pseudo reference
    #[arg(long)]
    uniform_severity: bool,
}

#[derive(Args, Debug)]
struct NmiArgs {
    /// Reference phones, whitespace separated
    #[arg(long = "ref", requires = "hyp", conflicts_with = "pairs")]
    reference: Option<String>,
    /// Hypothesis phones, whitespace separated
    #[arg(long, requires = "reference")]
    hyp: Option<String>,
    /// TSV file with reference and hypothesis phones per line
    #[arg(long)]
    pairs: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainAnchorArgs {
    /// Augmented samples (JSONL)
    #[arg(long)]
    data: PathBuf,
    /// Per-epoch metrics CSV [default: next to the checkpoint]
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainEvalArgs {
    /// Scored training corpus (JSONL)
    #[arg(long)]
    data: PathBuf,
    /// Frozen anchor checkpoint
    #[arg(long)]
    anchor: PathBuf,
    /// Interpolation weight; omit to use the configured loss
    #[arg(long)]
    rho: Option<f64>,
    /// Per-epoch metrics CSV [default: next to the checkpoint]
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Model checkpoint
    #[arg(long)]
    model: PathBuf,
    /// Corpus to score (JSONL)
    #[arg(long)]
    data: PathBuf,
    /// Output scale as A,B [default: each sample's own scale]
    #[arg(long, value_parser = parse_scale)]
    scale: Option<ScoreScale>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Model checkpoint
    #[arg(long)]
    model: PathBuf,
    /// Labelled corpus (JSONL), one cohort and scale
    #[arg(long)]
    data: PathBuf,
    /// Number of equal-width score bands [default: one per integer score]
    #[arg(long)]
    bands: Option<usize>,
    /// Report JSON [default: --out, else stdout]
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write the long-format CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Model name in the report [default: checkpoint file stem]
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Built-in preset used when no --config is given
    #[arg(long, default_value = "default", value_parser = ["default", "smoke"])]
    preset: String,
}

fn parse_scale(s: &str) -> Result<ScoreScale, String> {
    let (a, b) = s.split_once(',').ok_or("expected A,B")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    ScoreScale::new(a, b).map_err(|e| e.to_string())
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    let training_stage = matches!(e, Error::Stage { stage, .. } if stage.starts_with("train-"));
    match e.root() {
        Error::Config(_) => EXIT_USAGE,
        Error::Training(_) | Error::InfiniteLoss(_) => EXIT_TRAINING,
        Error::Io { .. } => EXIT_DATA,
        _ if training_stage => EXIT_TRAINING,
        _ => EXIT_DATA,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

/// Training errors that are not about the inputs count as training failures.
fn training(e: Error) -> Failure {
    let code = match exit_code(&e) {
        EXIT_DATA if !matches!(e.root(), Error::Io { .. } | Error::Parse { .. } | Error::Validation(_)) => EXIT_TRAINING,
        c => c,
    };
    Failure {
        code,
        message: e.to_string(),
    }
}

type Outcome = Result<(), Failure>;

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })?;
    toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn required_out(global: &Global) -> Result<&Path, Failure> {
    global
        .out
        .as_deref()
        .ok_or_else(|| Failure::usage("--out is required for this subcommand"))
}

fn write_text(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure {
            code: EXIT_DATA,
            message: format!("{}: {e}", p.display()),
        }),
        None => {
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| Failure::usage(e.to_string()))
        }
    }
}

fn default_log(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("log.csv")
}

fn run(cli: Cli) -> Outcome {
    let g = &cli.global;
    let log = |msg: &str| {
        if !g.quiet {
            eprintln!("{msg}");
        }
    };
    match &cli.command {
        Command::GenCorpus => {
            let mut cfg: GenConfig = read_config(g.config.as_deref())?;
            if let Some(seed) = g.seed {
                cfg.seed = seed;
            }
            let out = required_out(g)?;
            let samples = generate_corpus(&cfg)?;
            save_corpus(&samples, out)?;
            log(&format!("wrote {} samples to {}", samples.len(), out.display()));
        }
        Command::Augment(a) => {
            let mut cfg: AugmentConfig = read_config(g.config.as_deref())?;
            if let Some(v) = a.nbest {
                cfg.nbest = v;
            }
            if let Some(v) = a.mismatch_rate {
                cfg.mismatch_rate = v;
            }
            if let Some(v) = a.sub {
                cfg.channel.sub = v;
            }
            if let Some(v) = a.del {
                cfg.channel.del = v;
            }
            if let Some(v) = a.ins {
                cfg.channel.ins = v;
            }
            if a.uniform_severity {
                cfg.severity = Severity::Uniform;
            }
            if let Some(seed) = g.seed {
                cfg.seed = seed;
            }
            let out = required_out(g)?;
            let samples = load_corpus(&a.input)?;
            let aug = augment(&samples, &cfg)?;
            save_augmented(&aug, out)?;
            log(&format!("wrote {} augmented samples to {}", aug.len(), out.display()));
        }
        Command::Nmi(a) => {
            let mut text = String::new();
            match (&a.reference, &a.hyp, &a.pairs) {
                (Some(r), Some(h), None) => {
                    let score = nmi(&r.parse::<PhoneSeq>()?, &h.parse::<PhoneSeq>()?)?;
                    text.push_str(&format!("{score}\n"));
                }
                (None, None, Some(path)) => {
                    let file = fs::File::open(path).map_err(|e| Error::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                    for (i, line) in BufReader::new(file).lines().enumerate() {
                        let line = line.map_err(|e| Error::Io {
                            path: path.clone(),
                            source: e,
                        })?;
                        if line.trim().is_empty() {
                            continue;
                        }
                        let parse_error = |message: String| Error::Parse { line: i + 1, message };
                        let (r, h) = line
                            .split_once('\t')
                            .ok_or_else(|| parse_error("expected reference TAB hypothesis".into()))?;
                        let r: PhoneSeq = r.parse().map_err(|e: Error| parse_error(e.to_string()))?;
                        let h: PhoneSeq = h.parse().map_err(|e: Error| parse_error(e.to_string()))?;
                        text.push_str(&format!("{}\n", nmi(&r, &h)?));
                    }
                }
                _ => return Err(Failure::usage("give either --ref and --hyp, or --pairs")),
            }
            write_text(g.out.as_deref(), &text)?;
        }
        Command::TrainAnchor(a) => {
            let mut stage: StageConfig = read_config(g.config.as_deref())?;
            if let Some(seed) = g.seed {
                stage.model.seed = seed;
                stage.training.seed = seed;
            }
            let out = required_out(g)?;
            let aug = load_augmented(&a.data)?;
            log(&format!("training anchor on {} augmented samples", aug.len()));
            let t = train_anchor(&aug, &stage.model, &stage.training).map_err(training)?;
            save_model(&t.model, out)?;
            write_history(&t.history, a.log.clone().unwrap_or_else(|| default_log(out)))?;
            log(&format!("best epoch {}, wrote {}", t.best_epoch, out.display()));
        }
        Command::TrainEval(a) => {
            let mut stage: StageConfig = read_config(g.config.as_deref())?;
            if let Some(seed) = g.seed {
                stage.model.seed = seed;
                stage.training.seed = seed;
            }
            if let Some(rho) = a.rho {
                stage.training.loss = LossKind::Imse { rho };
            }
            let out = required_out(g)?;
            let train = load_corpus(&a.data)?;
            let anchor = load_model(&a.anchor)?;
            log(&format!("training evaluation model on {} samples", train.len()));
            let t = train_eval(&train, &anchor, &stage.model, &stage.training).map_err(training)?;
            save_model(&t.model, out)?;
            write_history(&t.history, a.log.clone().unwrap_or_else(|| default_log(out)))?;
            log(&format!("best epoch {}, wrote {}", t.best_epoch, out.display()));
        }
        Command::Predict(a) => {
            let model = load_model(&a.model)?;
            let samples = load_corpus(&a.data)?;
            let mut text = String::new();
            for s in &samples {
                let scale = a.scale.unwrap_or(s.scale);
                for p in predict(&model, std::slice::from_ref(s), scale)? {
                    text.push_str(&serde_json::to_string(&p).expect("predictions serialize"));
                    text.push('\n');
                }
            }
            write_text(g.out.as_deref(), &text)?;
        }
        Command::Evaluate(a) => {
            let model = load_model(&a.model)?;
            let samples = load_corpus(&a.data)?;
            let name = a.name.clone().unwrap_or_else(|| {
                a.model
                    .file_stem()
                    .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
            });
            let report = evaluate(&model, &name, &samples, a.bands)?;
            match a.report.as_deref().or(g.out.as_deref()) {
                Some(path) => report.save_json(path)?,
                None => write_text(None, &(report.to_json() + "\n"))?,
            }
            if let Some(csv) = &a.csv {
                anchorscore_core::evalreport::write_reports_csv(std::slice::from_ref(&report), csv)?;
            }
        }
        Command::Experiment(a) => {
            let mut cfg = match &g.config {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|e| Failure {
                        code: EXIT_DATA,
                        message: format!("{}: {e}", path.display()),
                    })?;
                    ExperimentConfig::from_toml(&text)?
                }
                None => ExperimentConfig::preset(&a.preset)?,
            };
            if let Some(seed) = g.seed {
                cfg.seeds = vec![seed];
            }
            let out = required_out(g)?;
            let result = run_experiment(&cfg, out, &log)?;
            if let Some(summary) = &result.summary {
                let text = serde_json::to_string_pretty(summary).expect("summary serializes");
                println!("{text}");
            }
            log(&format!("experiment written to {}", out.display()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
