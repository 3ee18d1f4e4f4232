mod common;

use common::{gensteg, p, setup, stdout_json, tiny_cfg};
use gensteg::data::load_dataset;
use gensteg::training::{fit, read_metrics, Checkpoint, MetricRecord, Trainer};

#[test]
fn resumed_run_matches_an_uninterrupted_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg();
    let (_, data_dir) = setup(dir.path(), &cfg);
    let data = load_dataset(&data_dir, &cfg).unwrap();

    let mut straight = Trainer::new(&cfg).unwrap();
    fit(&mut straight, &data, 10, &dir.path().join("a")).unwrap();

    let mut first = Trainer::new(&cfg).unwrap();
    let half = fit(&mut first, &data, 4, &dir.path().join("b")).unwrap();
    let mut resumed = Trainer::load(&half.last_checkpoint).unwrap();
    fit(&mut resumed, &data, 6, &dir.path().join("b")).unwrap();

    assert_eq!(resumed.state, straight.state);
    assert_eq!(resumed.generator.params, straight.generator.params);
    assert_eq!(resumed.discriminator.params, straight.discriminator.params);
    assert_eq!(resumed.steganalyzer.params, straight.steganalyzer.params);
    assert_eq!(resumed.extractor.params, straight.extractor.params);
    assert_eq!(resumed.opt_g, straight.opt_g);

    let steps = |d: &str| -> Vec<MetricRecord> {
        read_metrics(dir.path().join(d).join("metrics.jsonl"))
            .unwrap()
            .into_iter()
            .filter(|r| matches!(r, MetricRecord::Step(_)))
            .collect()
    };
    assert_eq!(steps("a"), steps("b"));
}

#[test]
fn cli_resume_continues_the_step_count() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path(), &tiny_cfg());
    let run = dir.path().join("run");
    let common = ["--data", p(&data), "--out", p(&run), "--summary-pairs", "0", "--acc-pairs", "4"];
    let s = stdout_json(&gensteg(&[&["train", "--config", p(&cfg), "--steps", "3"], &common[..]].concat()));
    let ckpt = s["checkpoint"].as_str().unwrap().to_string();
    let s = stdout_json(&gensteg(&[&["train", "--resume", &ckpt, "--steps", "2"], &common[..]].concat()));
    assert_eq!(s["step"], 5);
    let r = gensteg(&[&["train", "--resume", &ckpt, "--config", p(&cfg)], &common[..]].concat());
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn zero_steps_checkpoints_the_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg();
    let (_, data_dir) = setup(dir.path(), &cfg);
    let data = load_dataset(&data_dir, &cfg).unwrap();
    let mut t = Trainer::new(&cfg).unwrap();
    let report = fit(&mut t, &data, 0, &dir.path().join("run")).unwrap();
    assert_eq!(report.steps_run, 0);
    let ckpt = Checkpoint::read(&report.last_checkpoint).unwrap();
    assert_eq!(ckpt.state.step, 0);
    let fresh = Trainer::new(&cfg).unwrap();
    let back = Trainer::from_checkpoint(&ckpt).unwrap();
    assert_eq!(back.generator.params, fresh.generator.params);
    assert_eq!(back.extractor.params, fresh.extractor.params);
}
