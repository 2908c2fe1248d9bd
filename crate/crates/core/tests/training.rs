use std::fs;

use crossattn::attention::Mechanism;
use crossattn::data::{make_synthetic, Example, SyntheticSpec};
use crossattn::train::{build_vocab, Checkpoint, TrainConfig, Trainer, FORMAT_VERSION, LAST_CHECKPOINT, METRICS_FILE, METRICS_HEADER};
use crossattn::Error;

fn data(n: usize, seed: u64) -> (Vec<Example>, Vec<Example>) {
    let spec = SyntheticSpec {
        num_examples: n,
        num_keys: 12,
        num_values: 12,
        pairs_per_context: 4,
        seed,
    };
    let mut all = make_synthetic(&spec).unwrap();
    let dev = all.split_off(n * 4 / 5);
    (all, dev)
}

fn tiny(mechanism: Mechanism) -> TrainConfig {
    TrainConfig {
        mechanism,
        d_word: 6,
        d_char: 4,
        kernel: 3,
        num_filters: 5,
        h: 3,
        batch_size: 7,
        max_steps: 12,
        eval_every: 4,
        seed: 42,
        ..TrainConfig::default()
    }
}

fn fresh(config: &TrainConfig, train: &[Example]) -> Trainer {
    Trainer::new(config.clone(), build_vocab(config, train).unwrap()).unwrap()
}

#[test]
fn identical_seeds_give_identical_metric_files() {
    let (train, dev) = data(40, 1);
    for mech in [Mechanism::Dca, Mechanism::Hybrid] {
        let config = tiny(mech);
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for dir in &dirs {
            fresh(&config, &train).run(&train, &dev, Some(dir.path())).unwrap();
        }
        let read = |i: usize, f: &str| fs::read(dirs[i].path().join(f)).unwrap();
        let csv = String::from_utf8(read(0, METRICS_FILE)).unwrap();
        assert!(csv.starts_with(METRICS_HEADER));
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(read(0, METRICS_FILE), read(1, METRICS_FILE));
        assert_eq!(read(0, LAST_CHECKPOINT), read(1, LAST_CHECKPOINT));
    }
}

#[test]
fn different_seeds_diverge() {
    let (train, dev) = data(40, 1);
    let a = fresh(&tiny(Mechanism::Dca), &train).run(&train, &dev, None).unwrap();
    let config = TrainConfig {
        seed: 43,
        ..tiny(Mechanism::Dca)
    };
    let b = fresh(&config, &train).run(&train, &dev, None).unwrap();
    assert_ne!(a.log, b.log);
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let (train, dev) = data(40, 2);
    for mech in Mechanism::ATTENTION {
        let config = tiny(mech);
        let mut whole = fresh(&config, &train);
        let whole_summary = whole.run(&train, &dev, None).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let mut first = fresh(
            &TrainConfig {
                max_steps: 6,
                ..config.clone()
            },
            &train,
        );
        first.run(&train, &dev, Some(dir.path())).unwrap();
        let mut resumed = Trainer::from_checkpoint(Checkpoint::load(&dir.path().join(LAST_CHECKPOINT)).unwrap()).unwrap();
        assert_eq!(resumed.state.step, 6);
        resumed.config.max_steps = config.max_steps;
        let resumed_summary = resumed.run(&train, &dev, None).unwrap();

        assert_eq!(resumed_summary.log, whole_summary.log, "{mech}");
        assert_eq!(resumed.checkpoint().to_bytes(), whole.checkpoint().to_bytes(), "{mech}");
    }
}

#[test]
fn save_load_save_is_byte_identical() {
    let (train, dev) = data(30, 3);
    let mut trainer = fresh(
        &TrainConfig {
            max_steps: 5,
            ..tiny(Mechanism::Coattention)
        },
        &train,
    );
    trainer.run(&train, &dev, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    trainer.checkpoint().save(&p1).unwrap();
    let restored = Trainer::from_checkpoint(Checkpoint::load(&p1).unwrap()).unwrap();
    restored.checkpoint().save(&p2).unwrap();
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    assert_eq!(restored.state, trainer.state);
    assert_eq!(restored.optimizer, trainer.optimizer);
    let names: std::collections::HashSet<_> = restored.model.params.names().iter().collect();
    assert_eq!(names.len(), restored.model.params.len());
}

#[test]
fn zero_steps_emit_the_initial_checkpoint_and_an_empty_log() {
    let (train, dev) = data(20, 4);
    let config = TrainConfig {
        max_steps: 0,
        ..tiny(Mechanism::Bidaf)
    };
    let initial = fresh(&config, &train).checkpoint().to_bytes();
    let dir = tempfile::tempdir().unwrap();
    let summary = fresh(&config, &train).run(&train, &dev, Some(dir.path())).unwrap();
    assert_eq!(summary.steps, 0);
    assert!(summary.log.is_empty());
    assert_eq!(fs::read(dir.path().join(LAST_CHECKPOINT)).unwrap(), initial);
    assert_eq!(
        fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap().trim_end(),
        METRICS_HEADER
    );
}

#[test]
fn best_checkpoint_sequence_is_monotone() {
    let (train, dev) = data(40, 5);
    let config = TrainConfig {
        max_steps: 40,
        eval_every: 2,
        ..tiny(Mechanism::Dca)
    };
    let summary = fresh(&config, &train).run(&train, &dev, None).unwrap();
    let mut best = f64::NEG_INFINITY;
    let mut best_rows = Vec::new();
    for row in &summary.log {
        if row.dev_f1 > best {
            best = row.dev_f1;
            best_rows.push(row);
        }
    }
    assert!(best_rows.windows(2).all(|w| w[1].dev_f1 > w[0].dev_f1));
    let last = best_rows.last().unwrap();
    assert_eq!(
        (summary.best_step, summary.best_f1, summary.best_em),
        (last.step, last.dev_f1, last.dev_em)
    );
}

#[test]
fn two_hundred_steps_reduce_the_training_loss() {
    let spec = SyntheticSpec {
        num_examples: 1100,
        num_keys: 50,
        num_values: 50,
        pairs_per_context: 8,
        seed: 0,
    };
    let train = make_synthetic(&spec).unwrap();
    let config = TrainConfig {
        h: 32,
        batch_size: 32,
        learning_rate: 1e-3,
        max_steps: 200,
        ..TrainConfig::default()
    };
    let mut trainer = fresh(&config, &train);
    let first = trainer.step(&train).unwrap();
    let mut last = first;
    while trainer.state.step < 200 {
        last = trainer.step(&train).unwrap();
    }
    assert!(last < first, "loss went from {first} to {last}");
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let (train, _) = data(20, 6);
    let bytes = fresh(&tiny(Mechanism::Dca), &train).checkpoint().to_bytes();

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad_magic), Err(Error::Corrupt { offset: 0, .. })));

    let mut bad_version = bytes.clone();
    bad_version[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(Checkpoint::from_bytes(&bad_version), Err(Error::Incompatible(_))));

    for cut in [4, 11, 40, bytes.len() / 2, bytes.len() - 1] {
        match Checkpoint::from_bytes(&bytes[..cut]) {
            Err(Error::Corrupt { offset, .. }) => assert!(offset <= cut, "cut {cut} offset {offset}"),
            other => panic!("cut at {cut}: {other:?}"),
        }
    }

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(Checkpoint::from_bytes(&trailing), Err(Error::Corrupt { .. })));
}

#[test]
fn restoring_into_a_different_architecture_fails() {
    let (train, _) = data(20, 7);
    let mut ckpt = fresh(&tiny(Mechanism::Dca), &train).checkpoint();
    ckpt.config.mechanism = Mechanism::Bidaf;
    assert!(matches!(Trainer::from_checkpoint(ckpt), Err(Error::Incompatible(_))));
}
