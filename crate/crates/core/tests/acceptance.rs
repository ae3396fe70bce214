//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Criteria run on separate threads.

use std::time::{Duration, Instant};

use g3singer::chordgen::{
    augment_rotate_keys, matchness, ChordGenConfig, ChordTrainConfig, ChordTrainer, TimeSignature,
};
use g3singer::container::{decode_features, encode_features, Checkpoint, DType};
use g3singer::evalmetrics::{average_pitch, skyline, track_pitch, vocalness, PitchTrack};
use g3singer::features::{
    frames_for_seconds, griffin_lim, melspec, piano_roll_from_notes, segment_all, sine, ActivityRule,
    AudioClip, MelNorm, MelSpec, HOP, N_MELS, SAMPLE_RATE,
};
use g3singer::g3began::{began_losses, tau_update, BeganState, ModelConfig};
use g3singer::gradsuite::{run_suite, SuiteOptions, SUITE_TOLERANCE};
use g3singer::numerics::{Array2, RngState};
use g3singer::toy::{harmonized_corpus, harmonized_sheet, pseudo_singing_corpus, toy_progressions};
use g3singer::trainer::{Example, StepLog, TrainConfig, Trainer};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let reports = run_suite(&SuiteOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = reports
        .iter()
        .map(|r| (r.max_rel_error(), r.name.as_str()))
        .fold((0.0, ""), |a, b| if b.0 > a.0 { b } else { a });
    let failing: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passes(SUITE_TOLERANCE))
        .map(|r| r.name.as_str())
        .collect();
    ensure(failing.is_empty(), format!("failing checks: {failing:?}"))?;
    ensure(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} checks at T in {{1,5,17}}, worst rel err {:.2e} ({}), {:.1?}",
        reports.len(),
        worst.0,
        worst.1,
        elapsed
    ))
}

fn variable_length() -> Outcome {
    let corpus = pseudo_singing_corpus(5, 32, 11);
    let config = TrainConfig {
        seed: 5,
        model: ModelConfig { width: 16, ..ModelConfig::default() },
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config).map_err(|e| e.to_string())?;
    let refs: Vec<&Example> = corpus.iter().collect();
    for _ in 0..5 {
        trainer.train_step(&refs).map_err(|e| e.to_string())?;
    }
    let mut rng = RngState::new(1);
    for t in [50, 431, 862] {
        let out = trainer.model.sample(&mut rng, t, None).map_err(|e| e.to_string())?;
        ensure(out.shape() == (80, t), format!("T={t} gave {:?}", out.shape()))?;
        ensure(
            out.data().iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)),
            format!("T={t} output outside [-1, 1]"),
        )?;
    }
    Ok("trained generator emits 80x50, 80x431, 80x862".into())
}

fn began_run() -> Result<Vec<StepLog>, String> {
    let corpus = pseudo_singing_corpus(20, 64, 1);
    let config = TrainConfig {
        seed: 3,
        model: ModelConfig { width: 16, ..ModelConfig::default() },
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config).map_err(|e| e.to_string())?;
    let mut logs = Vec::with_capacity(500);
    while logs.len() < 500 {
        for batch in trainer.epoch_batches(&corpus) {
            if logs.len() == 500 {
                break;
            }
            let refs: Vec<&Example> = batch.iter().map(|&i| &corpus[i]).collect();
            logs.push(trainer.train_step(&refs).map_err(|e| e.to_string())?);
        }
    }
    Ok(logs)
}

fn began_dynamics() -> Outcome {
    let start = Instant::now();
    let (a, b) = std::thread::scope(|s| {
        let h = s.spawn(began_run);
        let b = began_run();
        (h.join().expect("training thread"), b)
    });
    let (a, b) = (a?, b?);
    let tau_ok = a.iter().all(|l| (0.0..=1.0).contains(&l.tau));
    ensure(tau_ok, "tau left [0, 1]")?;
    let at50 = a[49].conv_metric;
    let best = a.iter().map(|l| l.conv_metric).fold(f64::INFINITY, f64::min);
    let ratio = best / at50;
    ensure(ratio < 0.5, format!("best/step-50 metric ratio {ratio:.3}"))?;
    let same = a.len() == b.len()
        && a.iter().zip(&b).all(|(x, y)| {
            [x.lx, x.lg, x.loss_d, x.loss_g, x.tau, x.conv_metric]
                .iter()
                .zip([y.lx, y.lg, y.loss_d, y.loss_g, y.tau, y.conv_metric])
                .all(|(p, q)| p.to_bits() == q.to_bits())
        });
    ensure(same, "repeat run diverged")?;
    Ok(format!(
        "500 steps: tau in [0,1], metric {at50:.4} at step 50 -> best {best:.4} (ratio {ratio:.3}), bitwise repeatable, {:.1?}",
        start.elapsed()
    ))
}

fn equilibrium_algebra() -> Outcome {
    let s = BeganState { tau: 0.0, lambda: 0.001, gamma: 0.5 };
    let next = tau_update(&s, 1.0, 0.2);
    ensure(next.tau == 0.0003, format!("tau' = {}", next.tau))?;
    let half = BeganState { tau: 0.5, ..s };
    let (ld, lg) = began_losses(&half, 1.0, 0.2);
    ensure(ld == 0.9 && lg == 0.2, format!("l_D = {ld}, l_G = {lg}"))?;
    Ok("tau' = 0.0003, l_D = 0.9, l_G = 0.2 exactly".into())
}

fn chord_generator() -> Outcome {
    let corpus = toy_progressions();
    let mut trainer = ChordTrainer::new(ChordTrainConfig {
        lr: 3e-3,
        batch_size: 3,
        seed: 1,
        model: ChordGenConfig { embed_dim: 64, hidden_dim: 128, layers: 3, melody: false },
        ..ChordTrainConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let refs: Vec<_> = corpus.iter().collect();
    let uniform = 612f64.ln();
    let mut below_at = None;
    let mut nll = f64::INFINITY;
    for step in 1..=200 {
        nll = trainer.train_step(&refs).map_err(|e| e.to_string())?;
        if below_at.is_none() && nll < uniform {
            below_at = Some(step);
        }
    }
    let below_at = below_at.ok_or(format!("NLL never fell below ln 612 (last {nll:.3})"))?;
    for sheet in &corpus {
        let bars = sheet.beats.len() / sheet.condition.time_signature.beats_per_bar();
        let greedy = trainer
            .model
            .sample_progression(&sheet.condition, bars, 1e-9, 0)
            .map_err(|e| e.to_string())?;
        ensure(greedy == sheet.chords(), "greedy path differs from a memorised progression")?;
    }
    let augmented = augment_rotate_keys(&corpus);
    ensure(augmented.len() == 12 * corpus.len(), "augmentation size")?;
    ensure(
        augmented.iter().zip(corpus.iter().flat_map(|s| std::iter::repeat_n(s, 12))).all(|(a, s)| a.beats.len() == s.beats.len()),
        "augmentation changed sheet lengths",
    )?;
    Ok(format!(
        "NLL < ln 612 from step {below_at}, {nll:.4} at step 200; greedy reproduces all 3 progressions; {} -> {} sheets (x12)",
        corpus.len(),
        augmented.len()
    ))
}

fn matchness_discrimination() -> Outcome {
    let corpus = harmonized_corpus(200, 16, 1);
    let mut trainer = ChordTrainer::new(ChordTrainConfig {
        lr: 1e-2,
        batch_size: 8,
        seed: 1,
        model: ChordGenConfig { embed_dim: 32, hidden_dim: 64, layers: 1, melody: true },
        ..ChordTrainConfig::default()
    })
    .map_err(|e| e.to_string())?;
    for _ in 0..15 {
        trainer.run_epoch(&corpus).map_err(|e| e.to_string())?;
    }
    let mut rng = RngState::new(2024);
    let mut wins = 0;
    for _ in 0..100 {
        let sheet = harmonized_sheet(16, &mut rng);
        let melody = sheet.melody_chroma();
        let mut chords = sheet.chords();
        let real = matchness(&trainer.model, &melody, &chords, TimeSignature::FourFour).map_err(|e| e.to_string())?;
        rng.shuffle(&mut chords);
        let shuffled = matchness(&trainer.model, &melody, &chords, TimeSignature::FourFour).map_err(|e| e.to_string())?;
        if real > shuffled {
            wins += 1;
        }
    }
    ensure(wins >= 90, format!("true pairs won {wins}/100"))?;
    Ok(format!("true pairs beat shuffled pairs in {wins}/100 trials"))
}

fn metric_oracles() -> Outcome {
    let track = PitchTrack {
        pitch_hz: vec![200.0, 300.0, 0.0],
        confidence: vec![0.9; 3],
        activation: vec![0.6, 0.4, 0.9],
    };
    let v = vocalness(&track, &[true; 3]).map_err(|e| e.to_string())?;
    ensure(v == 1.0 / 3.0, format!("vocalness {v}"))?;
    let track = PitchTrack {
        pitch_hz: vec![220.0, 440.0],
        confidence: vec![0.9, 0.3],
        activation: vec![1.0, 1.0],
    };
    let p = average_pitch(&track).map_err(|e| e.to_string())?;
    ensure(p == 220.0, format!("average pitch {p}"))?;
    let sung = track_pitch(&sine(440.0, 0.5, 1.0, SAMPLE_RATE));
    let interior = &sung.pitch_hz[4..sung.len() - 4];
    let worst = interior.iter().map(|f| (f - 440.0).abs()).fold(0.0, f64::max);
    ensure(worst < 3.0, format!("440 Hz sine off by {worst:.3} Hz"))?;
    let roll = piano_roll_from_notes(&[(60, 0, 1), (64, 0, 1), (67, 0, 1)], 1).map_err(|e| e.to_string())?;
    let top = skyline(&roll);
    ensure(top == vec![Some(67)], format!("skyline {top:?}"))?;
    Ok(format!("vocalness 1/3, average pitch 220, 440 Hz sine within {worst:.3} Hz, skyline {{C4,E4,G4}} -> G4"))
}

fn pipeline_arithmetic() -> Outcome {
    for (secs, frames) in [(10.0, 431), (20.0, 862)] {
        let clip = AudioClip::new(vec![0.0; (secs * SAMPLE_RATE as f64) as usize], SAMPLE_RATE);
        let mel = melspec(&clip, &MelNorm::default()).map_err(|e| e.to_string())?;
        ensure(mel.frames() == frames, format!("{secs} s gave {} frames", mel.frames()))?;
        ensure(frames_for_seconds(secs) == frames, "frames_for_seconds")?;
    }
    // Two 100-frame windows holding 39 and 40 active frames.
    let norm = MelNorm::default();
    let mut raw = Array2::filled(N_MELS, 200, norm.min);
    for t in (0..39).chain(100..140) {
        for b in 0..N_MELS {
            raw[(b, t)] = norm.min + 10.0;
        }
    }
    let track = MelSpec { features: norm.normalize(&raw), norm };
    let secs = 100.0 * HOP as f64 / SAMPLE_RATE as f64;
    let segs = segment_all(&track, secs, 0.4, &ActivityRule::default()).map_err(|e| e.to_string())?;
    ensure(segs.len() == 2, "expected two windows")?;
    ensure(!segs[0].kept && segs[1].kept, "39% window kept or 40% window dropped")?;
    Ok("10 s -> 431 frames, 20 s -> 862 frames, 39% window dropped and 40% kept".into())
}

fn round_trips() -> Outcome {
    let corpus = pseudo_singing_corpus(5, 16, 2);
    let mut trainer = Trainer::new(TrainConfig {
        model: ModelConfig { width: 8, ..ModelConfig::default() },
        ..TrainConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let refs: Vec<&Example> = corpus.iter().collect();
    trainer.train_step(&refs).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("a.ckpt");
    trainer.save(&path).map_err(|e| e.to_string())?;
    let first = std::fs::read(&path).map_err(|e| e.to_string())?;
    let loaded = Trainer::load(&path).map_err(|e| e.to_string())?;
    let again = loaded.to_checkpoint().and_then(|c| c.to_bytes()).map_err(|e| e.to_string())?;
    ensure(first == again, "checkpoint save/load/save not byte-identical")?;
    ensure(Checkpoint::from_bytes(&first[..first.len() - 3]).is_err(), "truncated checkpoint accepted")?;

    let feats = corpus[0].mel.clone();
    let bytes = encode_features(&feats, DType::F64).map_err(|e| e.to_string())?;
    let back = decode_features(&bytes).map_err(|e| e.to_string())?;
    ensure(
        feats.data().iter().zip(back.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
        "feature file not bitwise identical",
    )?;

    let mel = melspec(&sine(440.0, 0.5, 1.0, SAMPLE_RATE), &MelNorm::default()).map_err(|e| e.to_string())?;
    let audio = griffin_lim(&mel, 32).map_err(|e| e.to_string())?;
    let pitch = track_pitch(&audio);
    let voiced: Vec<f64> = pitch.pitch_hz[4..pitch.len() - 4].iter().copied().filter(|&f| f > 0.0).collect();
    ensure(!voiced.is_empty(), "no pitch detected in Griffin-Lim output")?;
    let median = {
        let mut v = voiced.clone();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    ensure((median - 440.0).abs() < 5.0, format!("Griffin-Lim pitch {median:.2} Hz"))?;
    Ok(format!(
        "checkpoint and feature file bitwise identical; Griffin-Lim 440 Hz tone re-detected at {median:.2} Hz"
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "gradient suite", gradient_suite),
        (2, "variable-length generation", variable_length),
        (3, "BEGAN dynamics on toy corpus", began_dynamics),
        (4, "equilibrium algebra", equilibrium_algebra),
        (5, "chord generator", chord_generator),
        (6, "matchness discrimination", matchness_discrimination),
        (7, "metric oracles", metric_oracles),
        (8, "pipeline arithmetic", pipeline_arithmetic),
        (9, "round-trips", round_trips),
    ];
    let results: Vec<Outcome> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria.iter().map(|(_, _, f)| s.spawn(f)).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err("panicked".into())))
            .collect()
    });
    let mut failed = 0;
    for ((id, name, _), result) in criteria.iter().zip(results) {
        match result {
            Ok(detail) => println!("acceptance {id} PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("acceptance {id} FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
