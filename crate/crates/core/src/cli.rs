//! Command-line front end: `train`, `predict`, `segment` and `eval`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::checkpoint;
use crate::corpus::{read_conllu, read_raw, read_segmented, write_conllu, write_segmented, AnnotatedSentence};
use crate::error::{Error, Result};
use crate::eval::{evaluate, predict};
use crate::lexicon::Lexicon;
use crate::model::Mode;
use crate::trainer::{train, TrainingConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "jointparse", version, about = "Joint word segmentation, POS tagging and dependency parsing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a key = value configuration file.
    Train(TrainArgs),
    /// Segment, tag and parse raw syllable text into CoNLL-U.
    Predict(PredictArgs),
    /// Word segmentation only, with a trained model or a lexicon alone.
    Segment(SegmentArgs),
    /// Score a system CoNLL-U file against a gold one.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Where to write the selected checkpoint (overrides the config).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Train the three components as independent networks.
    #[arg(long)]
    pipeline: bool,
    #[arg(long)]
    no_initial_bio: bool,
    #[arg(long)]
    softmax_wseg: bool,
    #[arg(long)]
    softmax_pos: bool,
    #[arg(long)]
    no_pos_embedding: bool,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// One sentence per line, syllables separated by whitespace.
    #[arg(long)]
    input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Segmented text to use instead of predicted segmentation.
    #[arg(long)]
    gold_seg: Option<PathBuf>,
    /// Lexicon replacing the one stored in the model.
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    system: PathBuf,
    /// Also write the key=value report here.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Failure classes, each with its own exit code.
enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn corpus_err(path: &Path) -> impl Fn(crate::corpus::CorpusError) -> Error + '_ {
    move |source| Error::Corpus {
        path: path.to_path_buf(),
        source,
    }
}

fn load_lexicon(path: &Path) -> Result<Lexicon> {
    Lexicon::parse(&read(path)?).map_err(corpus_err(path))
}

/// Every input must exist and no output may coincide with an input.
fn check_paths(inputs: &[&Path], outputs: &[&Path]) -> std::result::Result<(), Failure> {
    for p in inputs {
        if !p.exists() {
            return Err(Failure::Usage(format!("input {} does not exist", p.display())));
        }
    }
    for out in outputs {
        let resolved = out.canonicalize().unwrap_or_else(|_| out.to_path_buf());
        for p in inputs {
            if p.canonicalize().map_or(false, |c| c == resolved) {
                return Err(Failure::Usage(format!("output {} would overwrite an input", out.display())));
            }
        }
    }
    Ok(())
}

fn emit(output: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn run_train(a: TrainArgs) -> std::result::Result<(), Failure> {
    check_paths(&[&a.config], &[])?;
    let mut config = TrainingConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(m) = a.model {
        config.output = Some(m);
    }
    if let Some(l) = a.lexicon {
        config.lexicon = Some(l);
    }
    if a.pipeline {
        config.model.mode = Mode::Pipeline;
    }
    let f = &mut config.model.features;
    f.initial_bio &= !a.no_initial_bio;
    f.crf_wseg &= !a.softmax_wseg;
    f.crf_pos &= !a.softmax_pos;
    f.pos_embedding &= !a.no_pos_embedding;
    if config.output.is_none() {
        return Err(Failure::Usage("no model output path: set `model` in the config or pass --model".into()));
    }
    let inputs: Vec<&Path> = std::iter::once(a.config.as_path()).chain(config.inputs()).collect();
    let outputs: Vec<&Path> = [&config.output, &config.log].into_iter().flatten().map(PathBuf::as_path).collect();
    check_paths(&inputs, &outputs)?;
    let outcome = train(&config)?;
    info!("selected epoch {} of {}", outcome.best_epoch, outcome.reports.len());
    Ok(())
}

fn aligned_gold_segmentation(raw: &[AnnotatedSentence], seg: Vec<AnnotatedSentence>) -> Result<Vec<AnnotatedSentence>> {
    if raw.len() != seg.len() {
        return Err(Error::Input(format!(
            "{} input sentences but {} gold-segmented sentences",
            raw.len(),
            seg.len()
        )));
    }
    for (k, (r, s)) in raw.iter().zip(&seg).enumerate() {
        if r.syllables != s.syllables {
            return Err(Error::Input(format!("sentence {}: gold segmentation has different syllables", k + 1)));
        }
    }
    Ok(seg)
}

fn run_predict(a: PredictArgs, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    let inputs: Vec<&Path> = [Some(&a.model), Some(&a.input), a.gold_seg.as_ref(), a.lexicon.as_ref()]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect();
    check_paths(&inputs, &a.output.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let mut model = checkpoint::load(&a.model)?;
    if let Some(l) = &a.lexicon {
        model.lexicon = load_lexicon(l)?;
    }
    let raw: Vec<AnnotatedSentence> = read_raw(&read(&a.input)?);
    let (sentences, gold) = match &a.gold_seg {
        Some(p) => {
            let seg = read_segmented(&read(p)?).map_err(corpus_err(p))?;
            (aligned_gold_segmentation(&raw, seg)?, true)
        }
        None => (raw, false),
    };
    let out = predict(&model, &sentences, gold)?;
    emit(a.output.as_deref(), &write_conllu(&out), stdout)?;
    Ok(())
}

fn run_segment(a: SegmentArgs, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    let inputs: Vec<&Path> = [a.model.as_ref(), Some(&a.input), a.lexicon.as_ref()]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect();
    check_paths(&inputs, &a.output.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let raw = read_raw(&read(&a.input)?);
    let mut out = Vec::with_capacity(raw.len());
    match (&a.model, &a.lexicon) {
        (Some(m), lex) => {
            let mut model = checkpoint::load(m)?;
            if let Some(l) = lex {
                model.lexicon = load_lexicon(l)?;
            }
            for (k, s) in raw.iter().enumerate() {
                if s.is_empty() {
                    warn!("skipping empty sentence {}", k + 1);
                    continue;
                }
                out.push(model.segment(s)?.sentence);
            }
        }
        (None, Some(l)) => {
            let lexicon = load_lexicon(l)?;
            for s in raw.into_iter().filter(|s| !s.is_empty()) {
                let tags = lexicon.initial_tags(&s.syllables);
                let (spans, _) = crate::corpus::spans_from_tags(&tags);
                let mut s = s;
                s.set_words(spans);
                out.push(s);
            }
        }
        (None, None) => return Err(Failure::Usage("segment needs --model or --lexicon".into())),
    }
    emit(a.output.as_deref(), &write_segmented(&out), stdout)?;
    Ok(())
}

fn run_eval(a: EvalArgs, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    check_paths(&[&a.gold, &a.system], &a.output.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let gold = read_conllu(&read(&a.gold)?).map_err(corpus_err(&a.gold))?;
    let system = read_conllu(&read(&a.system)?).map_err(corpus_err(&a.system))?;
    let report = evaluate(&gold, &system)?;
    let kv = report.to_key_values();
    let text = format!("{report}\n{kv}");
    stdout.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
    if let Some(p) = &a.output {
        fs::write(p, kv).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

/// Runs one invocation, writing data to `stdout` and diagnostics to
/// `stderr`, and returns the process exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Predict(a) => run_predict(a, stdout),
        Command::Segment(a) => run_segment(a, stdout),
        Command::Eval(a) => run_eval(a, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Run(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_numeric() {
                EXIT_NUMERIC
            } else {
                EXIT_DATA
            }
        }
    }
}
