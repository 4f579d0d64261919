use std::sync::Arc;
use std::time::{Duration, Instant};

use psmw_core::canonical;
use psmw_core::engine::{EngineConfig, EngineError, RunEngine, RunState, RunStatus};
use psmw_core::matching::Caliper;
use psmw_core::pipeline::{execute, NoProgress, TreatmentSource};
use psmw_core::synthetic::Confounded;
use psmw_core::{AnalysisDataset, RunManifest, Stage};

fn manifest(seed: u64, n_samples: usize) -> RunManifest {
    let mut m = RunManifest::new(TreatmentSource::Column("d".into()), seed);
    m.bootstrap.n_samples = n_samples;
    m
}

fn data(n: usize) -> Arc<AnalysisDataset> {
    Arc::new(Confounded { n, ..Default::default() }.generate(1))
}

fn wait_terminal(engine: &RunEngine, id: &str) -> (RunState, Vec<f64>) {
    let start = Instant::now();
    let mut seen = Vec::new();
    loop {
        let s = engine.poll(id).unwrap();
        seen.push(s.progress);
        if s.status.is_terminal() {
            return (s, seen);
        }
        assert!(start.elapsed() < Duration::from_secs(120), "run {id} did not finish");
        std::thread::sleep(Duration::from_millis(5));
    }
}

fn wait_for_stage(engine: &RunEngine, id: &str, stage: Stage) {
    let start = Instant::now();
    while engine.poll(id).unwrap().stage != Some(stage) {
        assert!(start.elapsed() < Duration::from_secs(120));
        std::thread::sleep(Duration::from_millis(1));
    }
}

#[test]
fn run_lifecycle_and_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let engine = RunEngine::start(EngineConfig::new(dir.path())).unwrap();
    let ds = data(400);
    let m = manifest(5, 15);
    let a = engine.submit(m.clone(), Arc::clone(&ds)).unwrap();
    let b = engine.submit(m.clone(), Arc::clone(&ds)).unwrap();
    assert_ne!(a, b);
    assert_eq!(a.len(), 32);
    let first = engine.poll(&a).unwrap();
    assert!(first.progress >= 0.0);

    let (state, seen) = wait_terminal(&engine, &a);
    assert_eq!(state.status, RunStatus::Succeeded, "{state:?}");
    assert_eq!(state.progress, 1.0);
    assert!(seen.windows(2).all(|w| w[0] <= w[1]));
    let bytes = engine.fetch_results(&a).unwrap();
    let expected = canonical::to_file_string(&execute(&ds, &m, &NoProgress).unwrap()).unwrap();
    assert_eq!(bytes, expected);
    wait_terminal(&engine, &b);
    assert_eq!(engine.fetch_results(&b).unwrap(), bytes);

    for file in ["manifest.json", "state.json", "results.json"] {
        assert!(dir.path().join("runs").join(&a).join(file).exists());
    }
    assert!(matches!(engine.cancel(&a), Err(EngineError::Conflict(_))));
    engine.shutdown();

    let reopened = RunEngine::start(EngineConfig::new(dir.path())).unwrap();
    assert_eq!(reopened.fetch_results(&a).unwrap(), bytes);
    assert_eq!(reopened.poll(&a).unwrap(), engine.poll(&a).unwrap());
    assert_eq!(reopened.list().len(), 2);
    reopened.shutdown();
}

#[test]
fn invalid_manifest_creates_no_run() {
    let dir = tempfile::tempdir().unwrap();
    let engine = RunEngine::start(EngineConfig::new(dir.path())).unwrap();
    let m = RunManifest::new(TreatmentSource::Expression("x >".into()), 1);
    match engine.submit(m, data(50)) {
        Err(EngineError::Invalid(e)) => assert!(e.field_errors.contains_key("treatment.expression")),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(std::fs::read_dir(dir.path().join("runs")).unwrap().count(), 0);
    assert!(matches!(engine.poll("missing"), Err(EngineError::NotFound(_))));
    engine.shutdown();
}

#[test]
fn cancel_during_bootstrap() {
    let dir = tempfile::tempdir().unwrap();
    let engine = RunEngine::start(EngineConfig { threads: Some(1), ..EngineConfig::new(dir.path()) }).unwrap();
    let id = engine.submit(manifest(3, 100_000), data(2000)).unwrap();
    wait_for_stage(&engine, &id, Stage::Bootstrapping);
    assert!(matches!(engine.fetch_results(&id), Err(EngineError::Conflict(_))));
    let s = engine.cancel(&id).unwrap();
    assert_eq!(s.status, RunStatus::Cancelled);
    assert_eq!(s.stage, Some(Stage::Bootstrapping));
    assert!(matches!(engine.cancel(&id), Err(EngineError::Conflict(_))));
    assert!(matches!(engine.fetch_results(&id), Err(EngineError::Conflict(_))));

    // the worker is released and serves the next run
    let next = engine.submit(manifest(4, 5), data(200)).unwrap();
    let (state, _) = wait_terminal(&engine, &next);
    assert_eq!(state.status, RunStatus::Succeeded);
    let frozen = engine.poll(&id).unwrap();
    assert_eq!(frozen.status, RunStatus::Cancelled);
    assert_eq!(frozen.stage, Some(Stage::Bootstrapping));
    assert!(!dir.path().join("runs").join(&id).join("results.json").exists());
    engine.shutdown();
}

#[test]
fn cancel_while_queued() {
    let dir = tempfile::tempdir().unwrap();
    let engine = RunEngine::start(EngineConfig::new(dir.path())).unwrap();
    let busy = engine.submit(manifest(3, 100_000), data(2000)).unwrap();
    let queued = engine.submit(manifest(3, 5), data(200)).unwrap();
    assert_eq!(engine.poll(&queued).unwrap().status, RunStatus::Queued);
    assert_eq!(engine.cancel(&queued).unwrap().status, RunStatus::Cancelled);
    engine.cancel(&busy).unwrap();
    engine.shutdown();
}

#[test]
fn failed_run_reports_stage() {
    let dir = tempfile::tempdir().unwrap();
    let engine = RunEngine::start(EngineConfig::new(dir.path())).unwrap();
    let mut m = manifest(3, 5);
    m.matching.caliper = Caliper::Absolute(1e-15);
    let id = engine.submit(m, data(300)).unwrap();
    let (state, _) = wait_terminal(&engine, &id);
    assert_eq!(state.status, RunStatus::Failed);
    match engine.fetch_results(&id) {
        Err(e @ EngineError::RunFailed { stage: Some(Stage::Matching), .. }) => {
            assert!(e.to_string().contains("matching"), "{e}");
        }
        other => panic!("unexpected {other:?}"),
    }
    engine.shutdown();
}
