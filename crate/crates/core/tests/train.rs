use smplgait::checkpoint::Checkpoint;
use smplgait::losses::LossConfig;
use smplgait::pipeline::load_train_set;
use smplgait::preprocess::PreprocessConfig;
use smplgait::synth::{generate_dataset, SplitMode, SynthConfig};
use smplgait::train::{TrainConfig, TrainSet, Trainer, FINAL_CHECKPOINT, LOG_FILE, LOG_HEADER};
use smplgait::ModelConfig;

fn dataset(dir: &std::path::Path) -> TrainSet {
    let cfg = SynthConfig {
        num_subjects: 6,
        sequences_per_subject: 3,
        min_frames: 25,
        max_frames: 25,
        input_height: 32,
        input_width: 24,
        ..SynthConfig::default()
    };
    let m = generate_dataset(&cfg, dir, SplitMode::Standard).unwrap();
    load_train_set(&m, &PreprocessConfig::with_size(32, 24)).unwrap()
}

fn trainer(classes: Vec<u32>) -> Trainer {
    let train = TrainConfig {
        ids_per_batch: 3,
        samples_per_id: 2,
        frames: 4,
        epochs: 6,
        lr_milestones: vec![3],
        seed: 21,
        ..TrainConfig::default()
    };
    Trainer::new(ModelConfig::desk(), LossConfig::default(), train, classes).unwrap()
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let mut straight = trainer(data.classes.clone());
    let full = straight.run(&data, None).unwrap();

    let mut first = trainer(data.classes.clone());
    for _ in 0..5 {
        first.train_iteration(&data).unwrap();
    }
    let ckpt = Checkpoint::from_bytes(&first.checkpoint().to_bytes()).unwrap();
    let mut resumed = Trainer::from_checkpoint(&ckpt).unwrap();
    let tail = resumed.run(&data, None).unwrap();

    assert_eq!(full.len(), 12);
    assert_eq!(&full[5..], &tail[..]);
    assert_eq!(resumed.store, straight.store);
    assert_eq!(resumed.adam, straight.adam);
}

#[test]
fn run_writes_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(&dir.path().join("data"));
    let out = dir.path().join("run");
    let mut t = trainer(data.classes.clone());
    t.train_cfg.checkpoint_every = 2;
    let reports = t.run(&data, Some(&out)).unwrap();
    let log = std::fs::read_to_string(out.join(LOG_FILE)).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some(LOG_HEADER));
    assert_eq!(lines.count(), reports.len());
    assert!(out.join("epoch_00002.ckpt").exists() && out.join("epoch_00004.ckpt").exists());
    let last = Checkpoint::load(out.join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(last.iteration, reports.len() as u64);
    assert!(reports.iter().all(|r| r.loss.total.is_finite()));
    assert_eq!(reports.last().unwrap().lr, 1e-4);
}

#[test]
fn too_few_identities_for_batch_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let mut t = trainer(data.classes.clone());
    t.train_cfg.ids_per_batch = 4;
    assert!(t.train_iteration(&data).is_err());
}
