//! WAV (plus optional piano-roll or lead-sheet companions) to normalised
//! sub-clip feature files and a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use g3singer::chordgen::LeadSheet;
use g3singer::container::{read_features, write_features};
use g3singer::features::{
    chord_condition, chords_per_frame, log_mel, read_wav, segment_all, ActivityRule, MelNorm, MelSpec, PianoRoll,
};
use g3singer::g3began::CondMode;
use g3singer::numerics::Array2;

use crate::config::DataConfig;
use crate::failure::{CmdResult, Context, Failure};
use crate::manifest::{ClipEntry, DroppedWindow, FileError, Manifest, MANIFEST_FILE};

/// Piano-roll companion of `<stem>.wav`: an 88-row feature file.
pub const ROLL_SUFFIX: &str = "roll";
/// Lead-sheet companion of `<stem>.wav`.
pub const SHEET_SUFFIX: &str = "json";

pub struct PrepareArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    pub cond: CondMode,
    pub data: DataConfig,
}

struct Track {
    stem: String,
    log_mel: Array2,
    cond: Option<Array2>,
}

/// Sorted `*.wav` files of a directory.
pub fn wav_files(dir: &Path) -> CmdResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::data(format!("cannot read {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let is_wav = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_condition(wav: &Path, cond: CondMode, frames: usize) -> g3singer::Result<Option<Array2>> {
    match cond {
        CondMode::None => Ok(None),
        CondMode::PianoRoll88 => {
            let roll = PianoRoll::new(read_features(wav.with_extension(ROLL_SUFFIX))?)?;
            if roll.frames() != frames {
                return Err(g3singer::Error::Condition(format!(
                    "piano roll has {} frames, audio has {frames}",
                    roll.frames()
                )));
            }
            Ok(Some(roll.into_array()))
        }
        CondMode::Chord => {
            let sheet = LeadSheet::load(wav.with_extension(SHEET_SUFFIX))?;
            let per_frame = chords_per_frame(&sheet.chords(), sheet.condition.tempo, frames)?;
            Ok(Some(chord_condition(&per_frame)))
        }
    }
}

fn load_track(wav: &Path, cond: CondMode) -> g3singer::Result<Track> {
    let clip = read_wav(wav)?;
    let log_mel = log_mel(&clip)?;
    let cond = load_condition(wav, cond, log_mel.cols())?;
    Ok(Track { stem: stem(wav), log_mel, cond })
}

pub fn run(args: &PrepareArgs) -> CmdResult<Manifest> {
    let files = wav_files(&args.input)?;
    let loaded: Vec<(PathBuf, g3singer::Result<Track>)> = files
        .par_iter()
        .map(|f| (f.clone(), load_track(f, args.cond)))
        .collect();

    let mut tracks = Vec::new();
    let mut errors = Vec::new();
    for (path, result) in loaded {
        match result {
            Ok(t) => tracks.push(t),
            Err(e) => errors.push(FileError {
                source: path.display().to_string(),
                message: e.to_string(),
            }),
        }
    }

    let norm = if args.data.fit_norm && !tracks.is_empty() {
        MelNorm::fit(tracks.iter().map(|t| &t.log_mel))?
    } else {
        MelNorm::default()
    };
    let rule = ActivityRule { margin: args.data.activity_margin };
    let clip_dir = args.output.join("clips");
    fs::create_dir_all(&clip_dir).context(format!("creating {}", clip_dir.display()))?;

    let mut manifest = Manifest::empty(args.cond, norm);
    manifest.clip_seconds = args.data.clip_seconds;
    manifest.vocal_ratio_min = args.data.vocal_ratio_min;
    manifest.activity_margin = args.data.activity_margin;
    manifest.errors = errors;

    for track in &tracks {
        let spec = MelSpec { features: norm.normalize(&track.log_mel), norm };
        let windows = segment_all(&spec, args.data.clip_seconds, args.data.vocal_ratio_min, &rule)?;
        for (i, w) in windows.into_iter().enumerate() {
            if !w.kept {
                manifest.dropped.push(DroppedWindow {
                    source: track.stem.clone(),
                    start_frame: w.start,
                    active_ratio: w.active_ratio,
                });
                continue;
            }
            let id = format!("{}-{i:03}", track.stem);
            let mel_path = PathBuf::from("clips").join(format!("{id}.ftns"));
            write_features(args.output.join(&mel_path), &w.mel.features)?;
            let cond_path = match &track.cond {
                Some(c) => {
                    let p = PathBuf::from("clips").join(format!("{id}.cond.ftns"));
                    write_features(args.output.join(&p), &c.slice_cols(w.start, w.mel.frames()))?;
                    Some(p)
                }
                None => None,
            };
            manifest.clips.push(ClipEntry {
                id,
                source: track.stem.clone(),
                start_frame: w.start,
                frames: w.mel.frames(),
                active_ratio: w.active_ratio,
                mel: mel_path,
                cond: cond_path,
            });
        }
    }
    manifest.save(&args.output.join(MANIFEST_FILE))?;
    Ok(manifest)
}
