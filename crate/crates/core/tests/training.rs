use std::fs;

use wavemae::io::RunConfig;
use wavemae::model::{load_checkpoint, ModelConfig};
use wavemae::training::pretrain::{CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE};
use wavemae::training::{pretrain, read_metrics, synth_dataset, SynthSpec};
use wavemae::Error;

fn small_run(seed: u64) -> (RunConfig, Vec<wavemae::Raster<f32>>) {
    let mut run = RunConfig::default();
    run.train.levels = 2;
    run.train.epochs = 3;
    run.train.batch_size = 4;
    run.train.checkpoint_every = 1;
    run.train.seed = seed;
    let mut m = ModelConfig::tiny(2, 32, 32);
    m.levels = 2;
    m.sh_cutoff = 6;
    run.model = Some(m);
    let mut spec = SynthSpec::new(8, 2, 32, 32, 3);
    spec.levels = 2;
    (run, synth_dataset(&spec).unwrap())
}

#[test]
fn seeded_runs_are_identical() {
    let (run, data) = small_run(7);
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let a = pretrain(&run, &data, Some(d1.path())).unwrap();
    let b = pretrain(&run, &data, Some(d2.path())).unwrap();
    let strip = |m: &[wavemae::training::StepMetrics]| {
        m.iter().map(|s| (s.step, s.epoch, s.l_rec, s.l_cmp, s.l_tot)).collect::<Vec<_>>()
    };
    assert_eq!(strip(&a.metrics), strip(&b.metrics));
    assert_eq!(a.metrics.len(), 6);
    let ca = fs::read(d1.path().join(CHECKPOINT_FILE)).unwrap();
    let cb = fs::read(d2.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ca, cb);

    let logged = read_metrics(d1.path().join(METRICS_FILE)).unwrap();
    assert_eq!(strip(&logged), strip(&a.metrics));
    let echo = RunConfig::load(d1.path().join(CONFIG_FILE)).unwrap();
    assert_eq!(echo.model, run.model);
    let state = load_checkpoint(d1.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(state.step, 6);
    assert_eq!(state.model.params, a.state.model.params);

    let (other, _) = small_run(8);
    let c = pretrain(&other, &data, None).unwrap();
    assert_ne!(strip(&c.metrics), strip(&a.metrics));
}

#[test]
fn every_parameter_is_trained() {
    let (run, data) = small_run(1);
    let r = pretrain(&run, &data, None).unwrap();
    assert!(r.dead_params.is_empty(), "{:?}", r.dead_params);
    assert!(r.metrics.iter().all(|m| m.l_rec > 0.0 && m.l_cmp > 0.0));
}

#[test]
fn divergence_reports_last_checkpoint() {
    let (mut run, data) = small_run(2);
    run.train.epochs = 6;
    run.train.lr = 1e3;
    let dir = tempfile::tempdir().unwrap();
    match pretrain(&run, &data, Some(dir.path())) {
        Err(Error::Diverged { step, last_good, reason }) => {
            assert!(reason.contains("non-finite"), "{reason}");
            // two steps per epoch and a checkpoint after each epoch
            assert!(step > 2, "{step}");
            let path = last_good.unwrap();
            let state = load_checkpoint(&path).unwrap();
            assert_eq!(state.step as usize, 2 * ((step - 1) / 2));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn invalid_configs_rejected() {
    let (mut run, data) = small_run(0);
    run.train.mask_ratio = 0.0;
    assert!(matches!(pretrain(&run, &data, None), Err(Error::Config(_))));
    let (mut run, data) = small_run(0);
    run.train.levels = 3;
    assert!(matches!(pretrain(&run, &data, None), Err(Error::Config(_))));
    let (run, mut data) = small_run(0);
    data[3] = wavemae::Raster::zeros(2, 16, 16);
    assert!(matches!(pretrain(&run, &data, None), Err(Error::Config(_))));
}

#[test]
fn synth_corpus_is_fast() {
    let t = std::time::Instant::now();
    let data = synth_dataset(&SynthSpec::new(128, 4, 64, 64, 0)).unwrap();
    let elapsed = t.elapsed();
    assert_eq!(data.len(), 128);
    assert!(elapsed.as_secs_f64() < 5.0, "{elapsed:?}");
    eprintln!("128 samples of 64x64x4 in {elapsed:?}");
}
