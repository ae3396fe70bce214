//! Per-clip metrics over a directory of generated WAVs.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use g3singer::chordgen::{ChordGenModel, ChordTrainer, LeadSheet};
use g3singer::evalmetrics::{audio_matchness, average_pitch, nonsilent_mask, track_pitch, vocalness, EvalRow, EVAL_CSV_HEADER};
use g3singer::features::read_wav;

use super::prepare::{stem, wav_files, SHEET_SUFFIX};
use crate::failure::{CmdResult, Context, Failure};

pub struct EvaluateArgs {
    pub dir: PathBuf,
    /// Melody-harmonisation checkpoint; without it matchness stays empty.
    pub mh: Option<PathBuf>,
}

pub struct Evaluation {
    pub rows: Vec<EvalRow>,
    pub warnings: Vec<String>,
}

fn evaluate_clip(path: &Path, mh: Option<&ChordGenModel>) -> (EvalRow, Vec<String>) {
    let mut row = EvalRow { clip_id: stem(path), avg_pitch: None, vocalness: None, matchness: None };
    let mut warnings = Vec::new();
    let clip = match read_wav(path) {
        Ok(c) => c,
        Err(e) => {
            warnings.push(format!("{}: {e}", path.display()));
            return (row, warnings);
        }
    };
    let track = track_pitch(&clip);
    // A clip with no audible frame has no sung frame either.
    row.vocalness = Some(vocalness(&track, &nonsilent_mask(&clip)).unwrap_or(0.0));
    row.avg_pitch = average_pitch(&track).ok();
    if let Some(mh) = mh {
        let sheet_path = path.with_extension(SHEET_SUFFIX);
        match LeadSheet::load(&sheet_path) {
            Ok(sheet) => {
                let ts = sheet.condition.time_signature;
                match audio_matchness(&clip, &sheet.chords(), sheet.condition.tempo, ts, mh) {
                    Ok(m) => row.matchness = Some(m),
                    Err(e) => warnings.push(format!("{}: matchness: {e}", row.clip_id)),
                }
            }
            Err(e) => warnings.push(format!("{}: no lead sheet ({e}); matchness left empty", row.clip_id)),
        }
    }
    (row, warnings)
}

pub fn run(args: &EvaluateArgs) -> CmdResult<Evaluation> {
    let mh = match &args.mh {
        Some(p) => {
            let t = ChordTrainer::load(p).context(format!("MH checkpoint {}", p.display()))?;
            if !t.model.is_harmonizer() {
                return Err(Failure::usage(format!(
                    "{} holds a chord generator, not a melody harmoniser",
                    p.display()
                )));
            }
            Some(t.model)
        }
        None => None,
    };
    let files = wav_files(&args.dir)?;
    let results: Vec<(EvalRow, Vec<String>)> = files.par_iter().map(|f| evaluate_clip(f, mh.as_ref())).collect();
    let mut warnings = Vec::new();
    if mh.is_none() {
        warnings.push("no MH checkpoint given; matchness column left empty".to_string());
    }
    let rows = results
        .into_iter()
        .map(|(row, w)| {
            warnings.extend(w);
            row
        })
        .collect();
    Ok(Evaluation { rows, warnings })
}

pub fn write_csv(rows: &[EvalRow], out: impl Write) -> CmdResult {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVAL_CSV_HEADER.split(','))?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush()?;
    Ok(())
}
