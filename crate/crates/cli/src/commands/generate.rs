//! Sampling mel features (and optionally audio) from a trained singer.

use std::path::{Path, PathBuf};

use g3singer::chordgen::{Beat, ChordTrainer, GenCondition, LeadSheet};
use g3singer::container::{read_features, write_features};
use g3singer::features::{
    build_condition, chords_per_frame, frames_for_seconds, frames_per_beat, griffin_lim, write_wav, ConditionSource,
    MelNorm, MelSpec, PianoRoll,
};
use g3singer::g3began::CondMode;
use g3singer::numerics::{FeatureSeq, RngState};
use g3singer::trainer::Trainer;

use crate::config::GenerateConfig;
use crate::failure::{CmdResult, Context, Failure};

pub struct GenerateArgs {
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub mode: Option<CondMode>,
    /// Piano-roll feature file (accompanied) or lead sheet (solo).
    pub condition: Option<PathBuf>,
    pub seconds: Option<f64>,
    pub seed: u64,
    pub wav: Option<PathBuf>,
    /// JSON log-mel range; defaults to the run's `norm.json`.
    pub norm: Option<PathBuf>,
    /// Chord generator used in solo mode when no lead sheet is given.
    pub chord_checkpoint: Option<PathBuf>,
    pub song: GenCondition,
    pub settings: GenerateConfig,
}

pub struct Generated {
    pub mel: FeatureSeq,
    /// Progression sampled in solo mode without a lead sheet.
    pub sampled: Option<LeadSheet>,
}

/// `norm.json` beside the checkpoint or in the run directory above it.
fn find_norm(args: &GenerateArgs) -> CmdResult<MelNorm> {
    let candidates: Vec<PathBuf> = match &args.norm {
        Some(p) => vec![p.clone()],
        None => {
            let dir = args.checkpoint.parent().unwrap_or(Path::new("."));
            [Some(dir), dir.parent()]
                .into_iter()
                .flatten()
                .map(|d| d.join(super::train::NORM_FILE))
                .filter(|p| p.exists())
                .collect()
        }
    };
    match candidates.first() {
        Some(p) => {
            let text = std::fs::read(p).context(format!("reading {}", p.display()))?;
            Ok(serde_json::from_slice(&text).context(format!("norm file {}", p.display()))?)
        }
        None => Ok(MelNorm::default()),
    }
}

fn sheet_frames(sheet: &LeadSheet) -> usize {
    (sheet.beats.len() as f64 * frames_per_beat(sheet.condition.tempo)).ceil() as usize
}

pub fn run(args: &GenerateArgs) -> CmdResult<Generated> {
    let trainer = Trainer::load(&args.checkpoint).context(format!("checkpoint {}", args.checkpoint.display()))?;
    let model = &trainer.model;
    let mode = model.cond_mode();
    if let Some(requested) = args.mode {
        if requested != mode {
            return Err(Failure::usage(format!(
                "checkpoint was trained for {} mode, not {}",
                mode.name(),
                requested.name()
            )));
        }
    }
    let seconds = args.seconds.unwrap_or(args.settings.seconds);
    if !(seconds > 0.0) {
        return Err(Failure::usage("--seconds must be positive"));
    }
    let mut sampled = None;
    let (frames, source) = match (mode, &args.condition) {
        (CondMode::None, None) => (frames_for_seconds(seconds), ConditionSource::None),
        (CondMode::None, Some(_)) => {
            return Err(Failure::usage("free mode takes no condition"));
        }
        (CondMode::PianoRoll88, None) => {
            return Err(Failure::usage("accompanied mode needs --condition <piano roll>"));
        }
        (CondMode::PianoRoll88, Some(p)) => {
            let roll = PianoRoll::new(read_features(p).context(format!("piano roll {}", p.display()))?)
                .context(format!("piano roll {}", p.display()))?;
            (roll.frames(), ConditionSource::PianoRoll(roll))
        }
        (CondMode::Chord, Some(p)) => {
            let sheet = LeadSheet::load(p).context(format!("lead sheet {}", p.display()))?;
            let frames = sheet_frames(&sheet);
            let per_frame = chords_per_frame(&sheet.chords(), sheet.condition.tempo, frames)?;
            (frames, ConditionSource::Chords(per_frame))
        }
        (CondMode::Chord, None) => {
            let ck = args.chord_checkpoint.as_ref().ok_or_else(|| {
                Failure::usage("solo mode needs --condition <lead sheet> or --chord-checkpoint to sample one")
            })?;
            let chords = ChordTrainer::load(ck).context(format!("chord checkpoint {}", ck.display()))?;
            let song = args.song;
            let beats = (seconds * song.tempo / 60.0).ceil() as usize;
            let bars = beats.div_ceil(song.time_signature.beats_per_bar()).max(1);
            let progression =
                chords.model.sample_progression(&song, bars, args.settings.chord_temperature, args.seed)?;
            let sheet = LeadSheet {
                condition: song,
                beats: progression.iter().map(|&chord| Beat { chord, melody: None }).collect(),
            };
            let frames = frames_for_seconds(seconds);
            let per_frame = chords_per_frame(&progression, song.tempo, frames)?;
            sampled = Some(sheet);
            (frames, ConditionSource::Chords(per_frame))
        }
    };
    let cond = build_condition(mode, &source, frames)?;
    let mut rng = RngState::new(args.seed);
    let mel = model.sample(&mut rng, frames, cond.as_ref())?;
    write_features(&args.out, &mel).context(format!("writing {}", args.out.display()))?;
    if let Some(sheet) = &sampled {
        std::fs::write(args.out.with_extension("chords.json"), sheet.to_json())?;
    }
    if let Some(wav) = &args.wav {
        let spec = MelSpec { features: mel.clone(), norm: find_norm(args)? };
        let audio = griffin_lim(&spec, args.settings.griffin_lim_iters)?;
        write_wav(wav, &audio).context(format!("writing {}", wav.display()))?;
    }
    Ok(Generated { mel, sampled })
}
