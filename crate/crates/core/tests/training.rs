use g3singer::chordgen::{ChordGenConfig, ChordTrainConfig, ChordTrainer};
use g3singer::g3began::ModelConfig;
use g3singer::toy::{pseudo_singing_corpus, toy_progressions};
use g3singer::trainer::{TrainConfig, Trainer};

fn small_config() -> TrainConfig {
    TrainConfig {
        seed: 9,
        batch_size: 2,
        model: ModelConfig { width: 8, ..ModelConfig::default() },
        ..TrainConfig::default()
    }
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let corpus = pseudo_singing_corpus(6, 24, 4);
    let (train, val) = corpus.split_at(5);

    let mut straight = Trainer::new(small_config()).unwrap();
    for _ in 0..2 {
        straight.run_epoch(train, val, |_| {}).unwrap();
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    let mut first = Trainer::new(small_config()).unwrap();
    first.run_epoch(train, val, |_| {}).unwrap();
    first.save(&path).unwrap();
    drop(first);
    let mut resumed = Trainer::load(&path).unwrap();
    resumed.run_epoch(train, val, |_| {}).unwrap();

    assert_eq!(straight.state, resumed.state);
    let a = straight.to_checkpoint().unwrap().to_bytes().unwrap();
    let b = resumed.to_checkpoint().unwrap().to_bytes().unwrap();
    assert_eq!(a, b);
}

#[test]
fn best_epoch_tracks_validation_minimum() {
    let corpus = pseudo_singing_corpus(6, 24, 5);
    let (train, val) = corpus.split_at(5);
    let mut trainer = Trainer::new(small_config()).unwrap();
    for _ in 0..3 {
        trainer.run_epoch(train, val, |_| {}).unwrap();
    }
    let h = &trainer.state.history;
    let best = trainer.state.best_epoch.unwrap();
    assert!(h.iter().all(|&m| h[best] <= m));
}

#[test]
fn load_rejects_a_chord_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chord.ckpt");
    let chord = ChordTrainer::new(ChordTrainConfig {
        model: ChordGenConfig { embed_dim: 8, hidden_dim: 8, layers: 1, melody: false },
        ..ChordTrainConfig::default()
    })
    .unwrap();
    chord.save(&path).unwrap();
    assert!(Trainer::load(&path).is_err());
    assert!(ChordTrainer::load(&path).is_ok());
}

#[test]
fn chord_trainer_resume_is_deterministic() {
    let sheets = toy_progressions();
    let config = ChordTrainConfig {
        batch_size: 2,
        seed: 4,
        model: ChordGenConfig { embed_dim: 8, hidden_dim: 16, layers: 2, melody: false },
        ..ChordTrainConfig::default()
    };
    let mut straight = ChordTrainer::new(config.clone()).unwrap();
    straight.run_epoch(&sheets).unwrap();
    straight.run_epoch(&sheets).unwrap();

    let mut first = ChordTrainer::new(config).unwrap();
    first.run_epoch(&sheets).unwrap();
    let ck = first.to_checkpoint().unwrap();
    let mut resumed = ChordTrainer::from_checkpoint(&ck).unwrap();
    resumed.run_epoch(&sheets).unwrap();

    assert_eq!(
        straight.to_checkpoint().unwrap().to_bytes().unwrap(),
        resumed.to_checkpoint().unwrap().to_bytes().unwrap()
    );
}
