//! BEGAN training into a pinned run directory:
//!
//! ```text
//! <run>/config.toml           effective configuration
//! <run>/norm.json             log-mel range of the training corpus
//! <run>/log.csv               one row per step
//! <run>/epochs.csv            validation metric per epoch
//! <run>/best.txt              best epoch and its checkpoint
//! <run>/checkpoints/epoch-NNNN.ckpt
//! <run>/failure.txt, failure.ckpt   only after a numerical failure
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use g3singer::trainer::{split_validation, StepLog, Trainer};

use crate::config::RunConfig;
use crate::failure::{CmdResult, Context, Failure, Kind};
use crate::manifest::Manifest;

pub const CONFIG_FILE: &str = "config.toml";
pub const NORM_FILE: &str = "norm.json";
pub const LOG_FILE: &str = "log.csv";
pub const EPOCH_FILE: &str = "epochs.csv";
pub const BEST_FILE: &str = "best.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";
const EPOCH_HEADER: &str = "epoch,val_metric,best_epoch";

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:04}.ckpt")
}

/// Highest-numbered epoch checkpoint in a run directory.
pub fn latest_checkpoint(run: &Path) -> CmdResult<Option<PathBuf>> {
    let dir = run.join(CHECKPOINT_DIR);
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in fs::read_dir(&dir)? {
        let path = entry?.path();
        let epoch = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("epoch-")?.strip_suffix(".ckpt")?.parse().ok());
        if let Some(e) = epoch {
            if best.as_ref().is_none_or(|(b, _)| e > *b) {
                best = Some((e, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Keeps the header and the rows whose first column is at most `last`.
fn truncate_csv(path: &Path, last: u64) -> CmdResult {
    let text = fs::read_to_string(path).context(format!("reading {}", path.display()))?;
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        let key = line.split(',').next().and_then(|k| k.parse::<u64>().ok());
        if i == 0 || key.is_some_and(|k| k <= last) {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept)?;
    Ok(())
}

fn append(path: &Path) -> CmdResult<BufWriter<File>> {
    let f = OpenOptions::new()
        .append(true)
        .open(path)
        .context(format!("opening {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub struct TrainArgs {
    pub run_dir: PathBuf,
    pub config: RunConfig,
    pub resume: bool,
}

pub fn run(args: &TrainArgs) -> CmdResult<Trainer> {
    let config = &args.config;
    config.validate()?;
    let run = &args.run_dir;
    let manifest_path = &config.data.manifest;
    let manifest = Manifest::load(manifest_path)?;
    if manifest.cond != config.train.model.cond {
        return Err(Failure::usage(format!(
            "manifest holds {} clips but the model is configured for {}",
            manifest.cond.name(),
            config.train.model.cond.name()
        )));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let examples = manifest.examples(dir)?;
    if examples.is_empty() {
        return Err(Failure::data(format!("manifest {} lists no clips", manifest_path.display())));
    }
    let (train, val) = split_validation(examples, config.train.val_fraction, config.train.seed);

    let mut trainer = if args.resume {
        let ck = latest_checkpoint(run)?
            .ok_or_else(|| Failure::data(format!("no checkpoint to resume in {}", run.display())))?;
        let mut t = Trainer::load(&ck)?;
        if t.config.model != config.train.model {
            return Err(Failure::usage("resume cannot change the model configuration"));
        }
        t.config.epochs = config.train.epochs;
        truncate_csv(&run.join(LOG_FILE), t.state.step)?;
        truncate_csv(&run.join(EPOCH_FILE), t.state.epoch as u64)?;
        t
    } else {
        if run.join(CONFIG_FILE).exists() {
            return Err(Failure::usage(format!(
                "{} already holds a run; pass --resume to continue it",
                run.display()
            )));
        }
        fs::create_dir_all(run.join(CHECKPOINT_DIR)).context(format!("creating {}", run.display()))?;
        fs::write(run.join(LOG_FILE), format!("{}\n", StepLog::CSV_HEADER))?;
        fs::write(run.join(EPOCH_FILE), format!("{EPOCH_HEADER}\n"))?;
        Trainer::new(config.train.clone())?
    };
    let mut echo = config.clone();
    echo.data.manifest = fs::canonicalize(manifest_path)?;
    fs::write(run.join(CONFIG_FILE), echo.to_toml())?;
    fs::write(run.join(NORM_FILE), serde_json::to_string_pretty(&manifest.norm)? + "\n")?;

    let mut log = append(&run.join(LOG_FILE))?;
    let mut epochs = append(&run.join(EPOCH_FILE))?;
    while trainer.state.epoch < trainer.config.epochs {
        let mut write_error = None;
        let outcome = trainer.run_epoch(&train, &val, |s| {
            if let Err(e) = writeln!(log, "{}", s.csv_row()) {
                write_error.get_or_insert(e);
            }
        });
        log.flush()?;
        if let Some(e) = write_error {
            return Err(e.into());
        }
        let metric = match outcome {
            Ok(m) => m,
            Err(e) if e.is_numerical() => {
                let f: Failure = e.into();
                trainer.save(run.join("failure.ckpt"))?;
                fs::write(
                    run.join("failure.txt"),
                    format!("step {}\nepoch {}\n{:#}\n", trainer.state.step, trainer.state.epoch, f.error),
                )?;
                return Err(Failure { kind: Kind::Numerical, error: f.error.context(format!("training aborted; state dumped to {}", run.display())) });
            }
            Err(e) => return Err(e.into()),
        };
        let epoch = trainer.state.epoch;
        let best = trainer.state.best_epoch.expect("set after an epoch") + 1;
        trainer.save(run.join(CHECKPOINT_DIR).join(checkpoint_name(epoch)))?;
        writeln!(epochs, "{epoch},{metric},{best}")?;
        epochs.flush()?;
        fs::write(
            run.join(BEST_FILE),
            format!("{best}\n{}/{}\n", CHECKPOINT_DIR, checkpoint_name(best)),
        )?;
        eprintln!(
            "epoch {epoch}/{}: val metric {metric:.6}, tau {:.6}, best epoch {best}",
            trainer.config.epochs, trainer.state.began.tau
        );
    }
    Ok(trainer)
}
