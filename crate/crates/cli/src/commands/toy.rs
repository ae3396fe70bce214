//! Synthetic corpora for smoke runs: pseudo-singing mel clips with a
//! manifest, toy chord progressions and harmonised lead sheets.

use std::fs;
use std::path::{Path, PathBuf};

use g3singer::container::write_features;
use g3singer::features::MelNorm;
use g3singer::g3began::CondMode;
use g3singer::toy::{harmonized_corpus, pseudo_singing_corpus, toy_progressions};

use crate::failure::{CmdResult, Context};
use crate::manifest::{ClipEntry, Manifest, MANIFEST_FILE};

pub struct ToyArgs {
    pub out: PathBuf,
    pub clips: usize,
    pub frames: usize,
    pub harmonized: usize,
    pub seed: u64,
}

fn write_sheets(dir: &Path, sheets: &[g3singer::chordgen::LeadSheet]) -> CmdResult {
    fs::create_dir_all(dir).context(format!("creating {}", dir.display()))?;
    for (i, s) in sheets.iter().enumerate() {
        fs::write(dir.join(format!("sheet-{i:04}.json")), s.to_json())?;
    }
    Ok(())
}

pub fn run(args: &ToyArgs) -> CmdResult<Manifest> {
    let clip_dir = args.out.join("clips");
    fs::create_dir_all(&clip_dir).context(format!("creating {}", clip_dir.display()))?;
    let mut manifest = Manifest::empty(CondMode::None, MelNorm::default());
    for (i, ex) in pseudo_singing_corpus(args.clips, args.frames, args.seed).iter().enumerate() {
        let id = format!("toy-{i:03}");
        let rel = PathBuf::from("clips").join(format!("{id}.ftns"));
        write_features(args.out.join(&rel), &ex.mel)?;
        manifest.clips.push(ClipEntry {
            id,
            source: "toy".into(),
            start_frame: 0,
            frames: ex.frames(),
            active_ratio: 1.0,
            mel: rel,
            cond: None,
        });
    }
    manifest.save(&args.out.join(MANIFEST_FILE))?;
    write_sheets(&args.out.join("progressions"), &toy_progressions())?;
    if args.harmonized > 0 {
        write_sheets(&args.out.join("harmonized"), &harmonized_corpus(args.harmonized, 16, args.seed))?;
    }
    Ok(manifest)
}
