use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use g3singer::chordgen::{ChordGenConfig, ChordTrainConfig, ChordTrainer, LeadSheet};
use g3singer::container::{read_features, write_features};
use g3singer::features::{piano_roll_from_notes, write_wav, AudioClip, SAMPLE_RATE};
use g3singer::g3began::{CondMode, ModelConfig};
use g3singer::toy::{harmonized_corpus, toy_progressions};
use g3singer::trainer::{TrainConfig, Trainer};

fn g3(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_g3singer"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMOKE_CONFIG: &str = "[data]\nmanifest = \"data/manifest.json\"\n[train]\nepochs = 2\nseed = 3\n[train.model]\nwidth = 16\n";

fn toy_workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = g3(dir.path(), &["toy", "data"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    fs::write(dir.path().join("run.toml"), SMOKE_CONFIG).unwrap();
    dir
}

fn voiced(seconds: f64, f0: f64) -> AudioClip {
    let sr = SAMPLE_RATE as f64;
    let samples = (0..(seconds * sr) as usize)
        .map(|i| {
            let t = i as f64 / sr;
            (1..=4).map(|k| 0.3 / k as f64 * (2.0 * std::f64::consts::PI * f0 * k as f64 * t).sin()).sum()
        })
        .collect();
    AudioClip::new(samples, SAMPLE_RATE)
}

fn small_singer(dir: &Path, cond: CondMode) -> String {
    let trainer = Trainer::new(TrainConfig {
        model: ModelConfig { width: 8, cond, ..ModelConfig::default() },
        ..TrainConfig::default()
    })
    .unwrap();
    let name = format!("{}.ckpt", cond.name());
    trainer.save(dir.join(&name)).unwrap();
    name
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&g3(dir.path(), &["--help"])), 0);
    assert_eq!(code(&g3(dir.path(), &["train", "--bogus"])), 1);
    assert_eq!(code(&g3(dir.path(), &[])), 1);
}

#[test]
fn prepare_empty_directory_gives_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("wavs")).unwrap();
    let o = g3(dir.path(), &["prepare", "wavs", "out"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["clips"].as_array().unwrap().len(), 0);
    assert_eq!(m["errors"].as_array().unwrap().len(), 0);
}

#[test]
fn prepare_segments_voiced_audio_and_reports_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let wavs = dir.path().join("wavs");
    fs::create_dir(&wavs).unwrap();
    write_wav(wavs.join("voice.wav"), &voiced(30.0, 220.0)).unwrap();
    fs::write(wavs.join("broken.wav"), b"RIFF not really a wav").unwrap();
    let o = g3(dir.path(), &["prepare", "wavs", "out"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("broken.wav"));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    let clips = m["clips"].as_array().unwrap();
    assert_eq!(clips.len(), 3);
    assert_eq!(m["errors"].as_array().unwrap().len(), 1);
    for c in clips {
        let mel = read_features(dir.path().join("out").join(c["mel"].as_str().unwrap())).unwrap();
        assert_eq!(mel.shape(), (80, 430));
    }
}

#[test]
fn prepare_slices_piano_roll_companions() {
    let dir = tempfile::tempdir().unwrap();
    let wavs = dir.path().join("wavs");
    fs::create_dir(&wavs).unwrap();
    let clip = voiced(20.0, 330.0);
    let frames = clip.samples.len().div_ceil(512);
    write_wav(wavs.join("song.wav"), &clip).unwrap();
    let roll = piano_roll_from_notes(&[(69, 0, frames)], frames).unwrap();
    write_features(wavs.join("song.roll"), roll.as_array()).unwrap();
    write_wav(wavs.join("orphan.wav"), &clip).unwrap();
    let o = g3(dir.path(), &["prepare", "wavs", "out", "--cond", "accompanied"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["clips"].as_array().unwrap().len(), 2);
    assert!(m["errors"][0]["source"].as_str().unwrap().contains("orphan"));
    let cond = read_features(dir.path().join("out").join(m["clips"][1]["cond"].as_str().unwrap())).unwrap();
    assert_eq!(cond.shape(), (88, 430));
    assert!(cond.row(69 - 21).iter().all(|&v| v == 1.0));
}

#[test]
fn smoke_run_reproduces_committed_trace() {
    let dir = toy_workspace();
    let o = g3(dir.path(), &["train", "--config", "run.toml", "--run-dir", "run"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trace = fs::read_to_string(dir.path().join("run/log.csv")).unwrap();
    assert_eq!(trace, include_str!("fixtures/smoke_log.csv"));
    for f in ["config.toml", "norm.json", "epochs.csv", "best.txt", "checkpoints/epoch-0001.ckpt", "checkpoints/epoch-0002.ckpt"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
    let echoed = fs::read_to_string(dir.path().join("run/config.toml")).unwrap();
    assert!(echoed.contains("width = 16") && echoed.contains("vocal_ratio_min = 0.4"));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = toy_workspace();
    assert_eq!(code(&g3(dir.path(), &["train", "--config", "run.toml", "--run-dir", "full"])), 0);
    assert_eq!(code(&g3(dir.path(), &["train", "--config", "run.toml", "--run-dir", "part", "--epochs", "1"])), 0);
    let o = g3(dir.path(), &["train", "--run-dir", "part", "--resume", "--epochs", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["log.csv", "epochs.csv", "checkpoints/epoch-0002.ckpt"] {
        assert_eq!(
            fs::read(dir.path().join("full").join(f)).unwrap(),
            fs::read(dir.path().join("part").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn train_reports_missing_manifest_and_reused_run_dir() {
    let dir = toy_workspace();
    let o = g3(dir.path(), &["train", "--run-dir", "run", "--manifest", "nowhere/manifest.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nowhere/manifest.json"), "{}", stderr(&o));
    assert_eq!(code(&g3(dir.path(), &["train", "--config", "run.toml", "--run-dir", "run"])), 0);
    assert_eq!(code(&g3(dir.path(), &["train", "--config", "run.toml", "--run-dir", "run"])), 1);
}

#[test]
fn config_rejects_unknown_keys() {
    let dir = toy_workspace();
    fs::write(dir.path().join("bad.toml"), "[train]\nlearning_rate = 0.1\n").unwrap();
    let o = g3(dir.path(), &["train", "--config", "bad.toml", "--run-dir", "run"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn numerical_blow_up_exits_three_with_dump() {
    let dir = toy_workspace();
    fs::write(
        dir.path().join("hot.toml"),
        "[data]\nmanifest = \"data/manifest.json\"\n[train]\nepochs = 3\nlr = 1e300\ngrad_clip = 1e300\n[train.model]\nwidth = 16\n",
    )
    .unwrap();
    let o = g3(dir.path(), &["train", "--config", "hot.toml", "--run-dir", "run"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(dir.path().join("run/failure.txt").exists());
    assert!(dir.path().join("run/failure.ckpt").exists());
}

#[test]
fn generate_free_mode_length_follows_seconds() {
    let dir = tempfile::tempdir().unwrap();
    let ck = small_singer(dir.path(), CondMode::None);
    let o = g3(dir.path(), &["generate", "--checkpoint", &ck, "--out", "g.ftns", "--seconds", "20"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_features(dir.path().join("g.ftns")).unwrap().shape(), (80, 862));
    let o = g3(dir.path(), &["generate", "--checkpoint", &ck, "--out", "g.ftns", "--mode", "accompanied"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn generate_accompanied_length_follows_roll() {
    let dir = tempfile::tempdir().unwrap();
    let ck = small_singer(dir.path(), CondMode::PianoRoll88);
    let roll = piano_roll_from_notes(&[(60, 0, 37), (67, 10, 37)], 37).unwrap();
    write_features(dir.path().join("acc.roll"), roll.as_array()).unwrap();
    let o = g3(dir.path(), &["generate", "--checkpoint", &ck, "--out", "g.ftns", "--condition", "acc.roll", "--wav", "g.wav"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_features(dir.path().join("g.ftns")).unwrap().shape(), (80, 37));
    assert!(dir.path().join("g.wav").exists());
    assert_eq!(code(&g3(dir.path(), &["generate", "--checkpoint", &ck, "--out", "g.ftns"])), 1);
}

#[test]
fn generate_solo_mode_samples_chords_when_none_given() {
    let dir = tempfile::tempdir().unwrap();
    let ck = small_singer(dir.path(), CondMode::Chord);
    let chords = ChordTrainer::new(ChordTrainConfig {
        model: ChordGenConfig { embed_dim: 8, hidden_dim: 8, layers: 1, melody: false },
        ..ChordTrainConfig::default()
    })
    .unwrap();
    chords.save(dir.path().join("chords.ckpt")).unwrap();
    let o = g3(
        dir.path(),
        &["generate", "--checkpoint", &ck, "--out", "s.ftns", "--seconds", "4", "--chord-checkpoint", "chords.ckpt", "--tempo", "90", "--key", "Am"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_features(dir.path().join("s.ftns")).unwrap().shape(), (80, 173));
    let sheet = LeadSheet::load(dir.path().join("s.chords.json")).unwrap();
    assert_eq!(sheet.beats.len(), 8);

    let written = toy_progressions()[0].to_json();
    fs::write(dir.path().join("lead.json"), written).unwrap();
    let o = g3(dir.path(), &["generate", "--checkpoint", &ck, "--out", "l.ftns", "--condition", "lead.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_features(dir.path().join("l.ftns")).unwrap().cols(), 173);
    assert_eq!(code(&g3(dir.path(), &["generate", "--checkpoint", &ck, "--out", "x.ftns"])), 1);
}

#[test]
fn evaluate_silence_and_missing_harmoniser() {
    let dir = tempfile::tempdir().unwrap();
    let clips = dir.path().join("clips");
    fs::create_dir(&clips).unwrap();
    for i in 0..3 {
        write_wav(clips.join(format!("quiet{i}.wav")), &AudioClip::new(vec![0.0; 22050], SAMPLE_RATE)).unwrap();
    }
    let o = g3(dir.path(), &["evaluate", "clips", "--out", "m.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("matchness column left empty"));
    let mut rdr = csv::Reader::from_path(dir.path().join("m.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["clip_id", "avg_pitch", "vocalness", "matchness"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!(r[1].to_string(), "");
        assert_eq!(r[2].parse::<f64>().unwrap(), 0.0);
        assert_eq!(r[3].to_string(), "");
    }
}

#[test]
fn evaluate_scores_matchness_with_a_harmoniser() {
    let dir = tempfile::tempdir().unwrap();
    let mut mh = ChordTrainer::new(ChordTrainConfig {
        lr: 1e-2,
        model: ChordGenConfig { embed_dim: 16, hidden_dim: 16, layers: 1, melody: true },
        ..ChordTrainConfig::default()
    })
    .unwrap();
    mh.run_epoch(&harmonized_corpus(16, 8, 3)).unwrap();
    mh.save(dir.path().join("mh.ckpt")).unwrap();
    let clips = dir.path().join("clips");
    fs::create_dir(&clips).unwrap();
    write_wav(clips.join("a.wav"), &voiced(4.0, 261.63)).unwrap();
    fs::write(clips.join("a.json"), toy_progressions()[0].to_json()).unwrap();
    let o = g3(dir.path(), &["evaluate", "clips", "--mh", "mh.ckpt"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "a");
    assert!((row[1].parse::<f64>().unwrap() - 261.63).abs() < 3.0);
    assert!(row[2].parse::<f64>().unwrap() > 0.5);
    assert!(row[3].parse::<f64>().unwrap() < 0.0);

    let o = g3(dir.path(), &["evaluate", "clips", "--mh", "nothing.ckpt"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn chordgen_train_then_sample() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    fs::create_dir(&corpus).unwrap();
    for (i, s) in toy_progressions().iter().enumerate() {
        fs::write(corpus.join(format!("{i}.json")), s.to_json()).unwrap();
    }
    fs::write(
        dir.path().join("cg.toml"),
        "[chordgen]\nepochs = 2\n[chordgen.train.model]\nembed_dim = 8\nhidden_dim = 8\nlayers = 1\n",
    )
    .unwrap();
    let o = g3(dir.path(), &["chordgen", "train", "--corpus", "corpus", "--out", "cg.ckpt", "--config", "cg.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = g3(dir.path(), &["chordgen", "sample", "--checkpoint", "cg.ckpt", "--bars", "2", "--time-signature", "3/4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sheet = LeadSheet::from_json(&stdout(&o)).unwrap();
    assert_eq!(sheet.beats.len(), 6);
    assert_eq!(code(&g3(dir.path(), &["chordgen", "sample", "--checkpoint", "cg.ckpt", "--key", "H"])), 1);
}

#[test]
fn gradcheck_passes_and_catches_a_broken_rule() {
    let dir = tempfile::tempdir().unwrap();
    let o = g3(dir.path(), &["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let report = stdout(&o);
    for layer in ["gru/T=17", "group_norm/T=1", "grouped_dilated_conv/T=5", "generator/T=17", "discriminator/T=17"] {
        assert!(report.contains(layer), "{layer} missing");
    }
    let o = g3(dir.path(), &["gradcheck", "--lengths", "3", "--perturb", "gru"]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("FAIL"));
}
