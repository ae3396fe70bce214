//! `g3singer`: prepare data, train singers and chord models, generate,
//! evaluate and check gradients.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod failure;
mod manifest;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use g3singer::chordgen::{GenCondition, Key, TimeSignature};
use g3singer::g3began::CondMode;
use g3singer::gradsuite::{SuiteOptions, SUITE_LENGTHS};
use g3singer::numerics::OpKind;

use commands::{chordgen, evaluate, generate, gradcheck, prepare, toy, train};
use config::RunConfig;
use failure::{CmdResult, Failure};

#[derive(Parser, Debug)]
#[command(name = "g3singer", version, about = "Score- and lyrics-free singing voice generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn WAVs (and piano-roll or lead-sheet companions) into sub-clip features and a manifest.
    Prepare(PrepareCmd),
    /// Write a synthetic corpus for smoke runs.
    Toy(ToyCmd),
    /// Train a singer into a run directory.
    Train(TrainCmd),
    /// Sample mel features, and optionally audio, from a trained singer.
    Generate(GenerateCmd),
    /// Train or sample the chord-progression models.
    #[command(subcommand)]
    Chordgen(ChordCmd),
    /// Write vocalness, average pitch and matchness of every WAV in a directory as CSV.
    Evaluate(EvaluateCmd),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckCmd),
}

fn parse_mode(s: &str) -> Result<CondMode, String> {
    CondMode::parse(s).ok_or_else(|| format!("unknown mode {s:?} (free, accompanied or solo)"))
}

fn parse_key(s: &str) -> Result<Key, String> {
    Key::parse(s).map_err(|e| e.to_string())
}

fn parse_metre(s: &str) -> Result<TimeSignature, String> {
    TimeSignature::parse(s).map_err(|e| e.to_string())
}

fn parse_op(s: &str) -> Result<OpKind, String> {
    OpKind::parse(s).ok_or_else(|| format!("unknown op {s:?}"))
}

#[derive(Args, Debug)]
struct PrepareCmd {
    /// Directory of WAV files.
    input: PathBuf,
    /// Output directory for feature files and manifest.json.
    output: PathBuf,
    /// TOML run config; its [data] table sets the defaults below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Condition stored with each clip: free, accompanied (<stem>.roll) or solo (<stem>.json).
    #[arg(long, default_value = "free", value_parser = parse_mode)]
    cond: CondMode,
    /// Sub-clip length in seconds.
    #[arg(long)]
    clip_seconds: Option<f64>,
    /// Minimum fraction of active frames for a sub-clip to be kept.
    #[arg(long)]
    vocal_ratio: Option<f64>,
    /// Fit the log-mel range on this corpus instead of the fixed default.
    #[arg(long)]
    fit_norm: bool,
}

#[derive(Args, Debug)]
struct ToyCmd {
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    clips: usize,
    #[arg(long, default_value_t = 64)]
    frames: usize,
    /// Number of harmonised lead sheets to write for harmoniser training.
    #[arg(long, default_value_t = 0)]
    harmonized: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainCmd {
    /// Run directory (created; must not hold a run unless --resume).
    #[arg(long)]
    run_dir: PathBuf,
    /// TOML run config; defaults apply to missing keys.
    #[arg(long, conflicts_with = "resume")]
    config: Option<PathBuf>,
    /// Continue from the latest checkpoint with the run's echoed config.
    #[arg(long)]
    resume: bool,
    /// Manifest to train on (overrides data.manifest).
    #[arg(long, conflicts_with = "resume")]
    manifest: Option<PathBuf>,
    #[arg(long, conflicts_with = "resume")]
    seed: Option<u64>,
    /// Total epochs (may extend a resumed run).
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct SongArgs {
    /// Key, e.g. C, Am, F#:min.
    #[arg(long, default_value = "C", value_parser = parse_key)]
    key: Key,
    /// Tempo in beats per minute.
    #[arg(long, default_value_t = 120.0)]
    tempo: f64,
    /// Time signature, e.g. 4/4, 3/4, 6/8.
    #[arg(long, default_value = "4/4", value_parser = parse_metre)]
    time_signature: TimeSignature,
}

impl SongArgs {
    fn condition(&self) -> CmdResult<GenCondition> {
        if !(self.tempo > 0.0) {
            return Err(Failure::usage("--tempo must be positive"));
        }
        Ok(GenCondition { key: self.key, tempo: self.tempo, time_signature: self.time_signature })
    }
}

#[derive(Args, Debug)]
struct GenerateCmd {
    /// Singer checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output feature file (80 x T, normalised log-mel).
    #[arg(long)]
    out: PathBuf,
    /// Expected mode; must match the checkpoint.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<CondMode>,
    /// Piano roll (accompanied) or lead sheet (solo); its length sets T.
    #[arg(long)]
    condition: Option<PathBuf>,
    /// Length when no condition sets it (default from config, 20 s).
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also render audio with Griffin-Lim.
    #[arg(long)]
    wav: Option<PathBuf>,
    /// Log-mel range JSON (default: norm.json of the checkpoint's run).
    #[arg(long)]
    norm: Option<PathBuf>,
    /// Chord generator for solo mode without a lead sheet.
    #[arg(long)]
    chord_checkpoint: Option<PathBuf>,
    #[command(flatten)]
    song: SongArgs,
    /// TOML run config; its [generate] table sets defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum ChordCmd {
    /// Train on a lead-sheet JSON file or directory.
    Train(ChordTrainCmd),
    /// Sample a progression and print it as a lead sheet.
    Sample(ChordSampleCmd),
}

#[derive(Args, Debug)]
struct ChordTrainCmd {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML run config; its [chordgen] table sets defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train the melody harmoniser instead of the generator.
    #[arg(long)]
    melody: bool,
    /// Skip the twelve-key augmentation.
    #[arg(long)]
    no_augment: bool,
}

#[derive(Args, Debug)]
struct ChordSampleCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    song: SongArgs,
    #[arg(long, default_value_t = 4)]
    bars: usize,
    /// Softmax temperature; values below 1e-6 pick the most likely chord.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the lead sheet here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateCmd {
    /// Directory of WAVs; <stem>.json lead sheets supply chords for matchness.
    dir: PathBuf,
    /// Melody-harmonisation checkpoint.
    #[arg(long)]
    mh: Option<PathBuf>,
    /// CSV destination (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckCmd {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sequence lengths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = SUITE_LENGTHS)]
    lengths: Vec<usize>,
    /// Corrupt one backward rule to demonstrate a failing check.
    #[arg(long, hide = true, value_parser = parse_op)]
    perturb: Option<OpKind>,
}

/// Writes to stdout; a reader that closed the pipe early is not an error.
fn to_stdout(write: impl FnOnce(&mut std::io::StdoutLock<'static>) -> CmdResult) -> CmdResult {
    let mut lock = std::io::stdout().lock();
    let outcome = write(&mut lock).and_then(|()| lock.flush().map_err(Failure::from));
    match outcome {
        Err(f) if is_broken_pipe(&f) => Ok(()),
        other => other,
    }
}

fn is_broken_pipe(f: &Failure) -> bool {
    f.error.chain().any(|e| {
        e.downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
            || e.downcast_ref::<csv::Error>().is_some_and(|c| {
                matches!(c.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe)
            })
    })
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Prepare(c) => {
            let mut data = RunConfig::load_or_default(c.config.as_deref())?.data;
            data.clip_seconds = c.clip_seconds.unwrap_or(data.clip_seconds);
            data.vocal_ratio_min = c.vocal_ratio.unwrap_or(data.vocal_ratio_min);
            data.fit_norm |= c.fit_norm;
            let check = RunConfig { data: data.clone(), ..RunConfig::default() };
            check.validate()?;
            let m = prepare::run(&prepare::PrepareArgs { input: c.input, output: c.output.clone(), cond: c.cond, data })?;
            for e in &m.errors {
                eprintln!("warning: skipped {}: {}", e.source, e.message);
            }
            println!(
                "{} clips kept, {} windows dropped, {} files failed; manifest in {}",
                m.clips.len(),
                m.dropped.len(),
                m.errors.len(),
                c.output.display()
            );
        }
        Command::Toy(c) => {
            let m = toy::run(&toy::ToyArgs {
                out: c.out.clone(),
                clips: c.clips,
                frames: c.frames,
                harmonized: c.harmonized,
                seed: c.seed,
            })?;
            println!("{} toy clips written to {}", m.clips.len(), c.out.display());
        }
        Command::Train(c) => {
            let mut config = if c.resume {
                RunConfig::load(&c.run_dir.join(train::CONFIG_FILE))?
            } else {
                RunConfig::load_or_default(c.config.as_deref())?
            };
            if let Some(m) = c.manifest {
                config.data.manifest = m;
            }
            if let Some(s) = c.seed {
                config.train.seed = s;
            }
            if let Some(e) = c.epochs {
                config.train.epochs = e;
            }
            let t = train::run(&train::TrainArgs { run_dir: c.run_dir.clone(), config, resume: c.resume })?;
            println!(
                "trained {} epochs ({} steps); best epoch {} in {}",
                t.state.epoch,
                t.state.step,
                t.state.best_epoch.map_or(0, |b| b + 1),
                c.run_dir.display()
            );
        }
        Command::Generate(c) => {
            let settings = RunConfig::load_or_default(c.config.as_deref())?.generate;
            let g = generate::run(&generate::GenerateArgs {
                checkpoint: c.checkpoint,
                out: c.out.clone(),
                mode: c.mode,
                condition: c.condition,
                seconds: c.seconds,
                seed: c.seed,
                wav: c.wav,
                norm: c.norm,
                chord_checkpoint: c.chord_checkpoint,
                song: c.song.condition()?,
                settings,
            })?;
            if let Some(sheet) = &g.sampled {
                let names: Vec<String> = sheet.chords().iter().map(|t| t.name()).collect();
                eprintln!("sampled progression: {}", names.join(" "));
            }
            println!("wrote {} ({}x{})", c.out.display(), g.mel.rows(), g.mel.cols());
        }
        Command::Chordgen(ChordCmd::Train(c)) => {
            let mut settings = RunConfig::load_or_default(c.config.as_deref())?.chordgen;
            settings.epochs = c.epochs.unwrap_or(settings.epochs);
            settings.train.seed = c.seed.unwrap_or(settings.train.seed);
            settings.train.model.melody |= c.melody;
            settings.augment &= !c.no_augment;
            let (_, history) = chordgen::train(&chordgen::ChordTrainArgs { corpus: c.corpus, out: c.out.clone(), settings })?;
            println!(
                "final nll {:.6}; checkpoint {}",
                history.last().copied().unwrap_or(f64::NAN),
                c.out.display()
            );
        }
        Command::Chordgen(ChordCmd::Sample(c)) => {
            let sheet = chordgen::sample(&chordgen::ChordSampleArgs {
                checkpoint: c.checkpoint,
                song: c.song.condition()?,
                bars: c.bars,
                temperature: c.temperature,
                seed: c.seed,
            })?;
            match c.out {
                Some(p) => std::fs::write(&p, sheet.to_json())?,
                None => to_stdout(|w| writeln!(w, "{}", sheet.to_json()).map_err(Failure::from))?,
            }
        }
        Command::Evaluate(c) => {
            let eval = evaluate::run(&evaluate::EvaluateArgs { dir: c.dir, mh: c.mh })?;
            for w in &eval.warnings {
                eprintln!("warning: {w}");
            }
            match c.out {
                Some(p) => evaluate::write_csv(&eval.rows, std::fs::File::create(&p)?)?,
                None => to_stdout(|w| evaluate::write_csv(&eval.rows, w))?,
            }
        }
        Command::Gradcheck(c) => {
            let opts = SuiteOptions { seed: c.seed, lengths: c.lengths, fault: c.perturb };
            gradcheck::run(&opts)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code())
        }
    }
}
