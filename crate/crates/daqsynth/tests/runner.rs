mod common;

use std::collections::BTreeMap;

use common::{strip_timestamps, tree};
use daqsynth::render::Renderer;
use daqsynth::runner::{replay_run, run_batch, BackendChoice, RunConfig, RunError, AGGREGATE_HEADER};
use daqsynth_core::emulation::EmulationMode;
use daqsynth_core::fixture::SessionPlan;
use daqsynth_core::flow::SessionStatus;
use daqsynth_core::llm::ModelConfig;
use daqsynth_core::metrics::Metrics;
use daqsynth_core::testbench::TestbenchId;

fn read_csv(path: &std::path::Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_owned).collect()).collect()
}

fn metrics(dir: &std::path::Path) -> Metrics {
    serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

fn comparable(dir: &std::path::Path) -> BTreeMap<String, String> {
    tree(dir)
        .into_iter()
        .map(|(name, text)| {
            let stripped = strip_timestamps(&name, &text);
            (name, stripped)
        })
        .collect()
}

#[test]
fn twenty_iterations_and_column_sums() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(TestbenchId::Thermometry, EmulationMode::Direct, dir.path());
    cfg.workers = 4;
    let summary = run_batch(&cfg).unwrap();
    assert_eq!(summary.rows.len(), 20);

    let runs: Vec<_> = std::fs::read_dir(cfg.batch_dir())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("run_"))
        .collect();
    assert_eq!(runs.len(), 20);

    let rows = read_csv(&summary.aggregate);
    assert_eq!(rows[0], AGGREGATE_HEADER);
    assert_eq!(rows.len(), 22);
    let total = &rows[21];
    assert_eq!(total[0], "total");
    for col in 2..AGGREGATE_HEADER.len() {
        let sum: u64 = rows[1..21].iter().map(|r| r[col].parse::<u64>().unwrap()).sum();
        assert_eq!(total[col].parse::<u64>().unwrap(), sum, "column {}", AGGREGATE_HEADER[col]);
    }
    for (k, row) in rows[1..21].iter().enumerate() {
        assert_eq!(row[0], (k + 1).to_string());
        let m = metrics(&cfg.run_dir(k + 1));
        assert_eq!(row[1], "done");
        assert_eq!(row[2], m.block_count.to_string());
        assert_eq!(row[3], m.questions.to_string());
        assert_eq!(row[4], m.diagram_retries.to_string());
        assert_eq!(m.category_histogram.values().sum::<usize>(), m.block_count);
    }
    // Thermometry's fixture has one malformed diagram per run.
    assert_eq!(summary.totals.retries, 20);
}

#[test]
fn run_directories_hold_the_full_layout() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(TestbenchId::AngularPosition, EmulationMode::Open, dir.path());
    cfg.iterations = 1;
    run_batch(&cfg).unwrap();
    let run = cfg.run_dir(1);
    let plan = SessionPlan::for_testbench(TestbenchId::AngularPosition);
    for f in ["session.jsonl", "script.jsonl", "architecture.dot", "summary.md", "metrics.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    for b in &plan.blocks {
        assert!(run.join("blocks").join(format!("{}.md", b.id)).is_file(), "{}", b.id);
    }
    assert!(!run.join("architecture.svg").exists());
    let dot = std::fs::read_to_string(run.join("architecture.dot")).unwrap();
    let graph = daqsynth_core::diagram::parse(&daqsynth_core::diagram::extract_dot(&dot).unwrap()).unwrap();
    assert_eq!(graph.nodes().len(), plan.blocks.len());
    let m = metrics(&run);
    assert_eq!(m.session_id, "angular_position-open-001");
    assert!(m.emulator_calls > 0);
}

#[test]
fn repeated_batches_are_identical_apart_from_timestamps() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, workers) in [(&a, 1), (&b, 3)] {
        let mut cfg = RunConfig::new(TestbenchId::PressureTemperature, EmulationMode::Open, dir.path());
        cfg.iterations = 3;
        cfg.workers = workers;
        run_batch(&cfg).unwrap();
    }
    let strip_wall = |rows: Vec<Vec<String>>| -> Vec<Vec<String>> {
        rows.into_iter().map(|mut r| {
            r.pop();
            r
        }).collect()
    };
    let agg = |d: &tempfile::TempDir| d.path().join("pressure_temperature/open/aggregate.csv");
    assert_eq!(strip_wall(read_csv(&agg(&a))), strip_wall(read_csv(&agg(&b))));
    for k in 1..=3 {
        let rel = format!("pressure_temperature/open/run_{k}");
        assert_eq!(comparable(&a.path().join(&rel)), comparable(&b.path().join(&rel)));
    }
}

#[test]
fn replaying_a_run_reproduces_its_metrics_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(TestbenchId::Accelerometry, EmulationMode::Open, dir.path());
    cfg.iterations = 1;
    run_batch(&cfg).unwrap();
    let original = cfg.run_dir(1);
    let out = dir.path().join("replayed");
    let outcome = replay_run(&original, &out, None).unwrap();

    let mut expected = metrics(&original);
    expected.wall_ms = outcome.metrics.wall_ms;
    assert_eq!(outcome.metrics, expected);
    assert_eq!(comparable(&original), comparable(&out));
}

#[test]
fn replay_backend_reads_per_iteration_scripts() {
    let dir = tempfile::tempdir().unwrap();
    let mut first = RunConfig::new(TestbenchId::Accelerometry, EmulationMode::Direct, dir.path().join("a"));
    first.iterations = 2;
    run_batch(&first).unwrap();

    let mut again = RunConfig::new(TestbenchId::Accelerometry, EmulationMode::Direct, dir.path().join("b"));
    again.iterations = 2;
    again.backend = BackendChoice::Replay { path: first.batch_dir() };
    let summary = run_batch(&again).unwrap();
    assert_eq!(summary.totals.done, 2);
    for k in 1..=2 {
        assert_eq!(comparable(&first.run_dir(k)), comparable(&again.run_dir(k)));
    }
}

#[test]
fn short_script_fails_every_iteration_without_aborting() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("short.jsonl");
    let full = SessionPlan::for_testbench(TestbenchId::AngularPosition).script_jsonl(EmulationMode::Direct);
    let half: Vec<&str> = full.lines().take(4).collect();
    std::fs::write(&script, half.join("\n")).unwrap();

    let mut cfg = RunConfig::new(TestbenchId::AngularPosition, EmulationMode::Direct, dir.path().join("out"));
    cfg.iterations = 3;
    cfg.backend = BackendChoice::Scripted { script: Some(script) };
    let summary = run_batch(&cfg).unwrap();
    assert_eq!(summary.totals.failed, 3);
    for k in 1..=3 {
        let m = metrics(&cfg.run_dir(k));
        assert_eq!(m.status, SessionStatus::Failed);
        assert!(m.failure.unwrap().contains("script"));
        assert!(cfg.run_dir(k).join("architecture.dot").is_file());
    }
    let rows = read_csv(&summary.aggregate);
    assert_eq!(rows[4][1], "0/3 done");
}

#[test]
fn cli_style_script_file_cycles_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("s.jsonl");
    std::fs::write(
        &script,
        SessionPlan::for_testbench(TestbenchId::AngularPosition).script_jsonl(EmulationMode::Direct),
    )
    .unwrap();
    let mut cfg = RunConfig::new(TestbenchId::AngularPosition, EmulationMode::Direct, dir.path().join("out"));
    cfg.iterations = 5;
    cfg.backend = BackendChoice::Scripted { script: Some(script) };
    assert_eq!(run_batch(&cfg).unwrap().totals.done, 5);
}

#[test]
fn bad_configuration_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(TestbenchId::AngularPosition, EmulationMode::Direct, dir.path());
    cfg.iterations = 0;
    assert!(matches!(run_batch(&cfg), Err(RunError::NoIterations)));
    cfg.iterations = 1;
    cfg.workers = 0;
    assert!(matches!(run_batch(&cfg), Err(RunError::NoWorkers)));
    cfg.workers = 1;
    cfg.backend = BackendChoice::Scripted { script: Some(dir.path().join("missing.jsonl")) };
    assert!(matches!(run_batch(&cfg), Err(RunError::Invalid { .. })));
}

#[test]
fn live_backend_without_key_stops_the_batch() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(TestbenchId::AngularPosition, EmulationMode::Direct, dir.path());
    cfg.iterations = 2;
    cfg.backend = BackendChoice::Live;
    cfg.designer = ModelConfig::designer().with_api_key_env("DAQSYNTH_TEST_KEY_THAT_IS_NEVER_SET");
    assert!(matches!(run_batch(&cfg), Err(RunError::Backend(_))));
}

#[cfg(unix)]
#[test]
fn svg_is_written_when_a_renderer_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(TestbenchId::AngularPosition, EmulationMode::Direct, dir.path().join("out"));
    cfg.iterations = 1;
    cfg.renderer = Some(Renderer::new(common::fake_renderer(dir.path())));
    run_batch(&cfg).unwrap();
    assert_eq!(
        std::fs::read_to_string(cfg.run_dir(1).join("architecture.svg")).unwrap(),
        common::FAKE_SVG
    );

    cfg.renderer = Some(Renderer::new(dir.path().join("no-such-binary")));
    run_batch(&cfg).unwrap();
    assert!(!cfg.run_dir(1).join("architecture.svg").exists());
}

#[test]
fn every_testbench_and_mode_completes() {
    let dir = tempfile::tempdir().unwrap();
    for tb in TestbenchId::ALL {
        for mode in EmulationMode::ALL {
            let mut cfg = RunConfig::new(tb, mode, dir.path());
            cfg.iterations = 1;
            let s = run_batch(&cfg).unwrap();
            assert_eq!(s.totals.done, 1, "{tb} {mode}");
            assert_eq!(
                s.totals.blocks,
                SessionPlan::for_testbench(tb).blocks.len(),
                "{tb} {mode}"
            );
        }
    }
}
