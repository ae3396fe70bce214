//! Training and sampling the chord-progression generator and the melody
//! harmoniser.

use std::fs;
use std::path::{Path, PathBuf};

use g3singer::chordgen::{augment_rotate_keys, Beat, ChordTrainer, GenCondition, LeadSheet};

use crate::config::ChordRunConfig;
use crate::failure::{CmdResult, Context, Failure};

/// Lead sheets from one JSON file or every `*.json` in a directory.
pub fn load_corpus(path: &Path) -> CmdResult<Vec<LeadSheet>> {
    if path.is_file() {
        return Ok(vec![LeadSheet::load(path).context(format!("lead sheet {}", path.display()))?]);
    }
    let entries = fs::read_dir(path).map_err(|e| Failure::data(format!("cannot read corpus {}: {e}", path.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "json") {
            files.push(p);
        }
    }
    files.sort();
    files
        .iter()
        .map(|p| LeadSheet::load(p).context(format!("lead sheet {}", p.display())))
        .collect()
}

pub struct ChordTrainArgs {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub settings: ChordRunConfig,
}

/// Trains for the configured epochs; returns the trainer and the mean
/// training NLL of every epoch.
pub fn train(args: &ChordTrainArgs) -> CmdResult<(ChordTrainer, Vec<f64>)> {
    args.settings.train.validate()?;
    let mut corpus = load_corpus(&args.corpus)?;
    if corpus.is_empty() {
        return Err(Failure::data(format!("no lead sheets in {}", args.corpus.display())));
    }
    if args.settings.augment {
        corpus = augment_rotate_keys(&corpus);
    }
    let mut trainer = ChordTrainer::new(args.settings.train.clone())?;
    let mut history = Vec::with_capacity(args.settings.epochs);
    for epoch in 1..=args.settings.epochs {
        let nll = trainer.run_epoch(&corpus)?;
        eprintln!("epoch {epoch}/{}: nll {nll:.6}", args.settings.epochs);
        history.push(nll);
    }
    trainer.save(&args.out).context(format!("writing {}", args.out.display()))?;
    Ok((trainer, history))
}

pub struct ChordSampleArgs {
    pub checkpoint: PathBuf,
    pub song: GenCondition,
    pub bars: usize,
    pub temperature: f64,
    pub seed: u64,
}

pub fn sample(args: &ChordSampleArgs) -> CmdResult<LeadSheet> {
    let trainer = ChordTrainer::load(&args.checkpoint).context(format!("chord checkpoint {}", args.checkpoint.display()))?;
    let chords = trainer.model.sample_progression(&args.song, args.bars, args.temperature, args.seed)?;
    Ok(LeadSheet {
        condition: args.song,
        beats: chords.into_iter().map(|chord| Beat { chord, melody: None }).collect(),
    })
}
