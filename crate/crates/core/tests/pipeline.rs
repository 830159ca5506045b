use std::fs;
use std::path::Path;

use kmscope::pipeline::{self, PipelineConfig, SegmentSpec, SimulationConfig};
use kmscope::Error;

fn config(out: &Path) -> PipelineConfig {
    let seg = |theta: f64| SegmentSpec {
        drift: [0.0, -theta, 0.0],
        diffusion: [0.01, 0.0, 1.0],
        length: 3000,
    };
    let mut cfg = PipelineConfig {
        output_dir: out.to_path_buf(),
        seed: 5,
        simulate: Some(SimulationConfig {
            dt: 0.5,
            x0: 0.0,
            segments: vec![seg(1.0), seg(3.0)],
        }),
        ..PipelineConfig::default()
    };
    cfg.rolling.rolling.window_length = 1000;
    cfg.rolling.rolling.step = 50;
    cfg.breaks.n_bkps = 3;
    cfg
}

fn header(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn manifest_lists_every_stage_with_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let m = pipeline::run_full(&config(dir.path())).unwrap();
    let names: Vec<&str> = m.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, pipeline::STAGES);
    assert!(m.failed_stage.is_none() && m.error.is_none());
    assert_eq!(m.input_sha256.len(), 64);
    for f in m.stages.iter().flat_map(|s| &s.outputs).chain(&m.plot_data) {
        assert!(dir.path().join(&f.path).exists(), "{} missing", f.path);
        assert_eq!(f.sha256.len(), 64);
    }
    let on_disk: pipeline::RunManifest =
        serde_json::from_slice(&fs::read(dir.path().join(pipeline::MANIFEST_FILE)).unwrap())
            .unwrap();
    assert_eq!(on_disk, m);
}

#[test]
fn stages_rerun_in_isolation_reproduce_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = config(out);
    let m = pipeline::run_full(&cfg).unwrap();

    // Drop everything downstream of ingest and rebuild it one stage at a time.
    for s in &m.stages[1..] {
        for f in &s.outputs {
            fs::remove_file(out.join(&f.path)).unwrap();
        }
    }
    let returns = out.join(pipeline::RETURNS_FILE);
    let mut rebuilt = Vec::new();
    rebuilt.push(pipeline::stage_diagnose(&returns, &cfg.diagnostics, cfg.clip_k, out).unwrap());
    rebuilt.push(pipeline::stage_km(&returns, &cfg.km, cfg.clip_k, out).unwrap());
    rebuilt.push(pipeline::stage_rolling(&returns, &cfg.rolling, out).unwrap());
    rebuilt
        .push(pipeline::stage_breaks(&out.join(pipeline::TRACK_FILE), &cfg.breaks, out).unwrap());
    for (stage, files) in m.stages[1..].iter().zip(&rebuilt) {
        assert_eq!(stage.outputs.len(), files.len(), "{}", stage.name);
        for f in &stage.outputs {
            let hash = pipeline::io::sha256_file(&out.join(&f.path)).unwrap();
            assert_eq!(hash, f.sha256, "{} changed", f.path);
        }
    }
}

#[test]
fn plot_files_have_fixed_schemas() {
    let dir = tempfile::tempdir().unwrap();
    pipeline::run_full(&config(dir.path())).unwrap();
    let plot = dir.path().join("plot");
    for (file, cols) in [
        ("fig1_returns.csv", "date,return"),
        ("fig1_histogram.csv", "bin_center,count,density"),
        ("fig2_km.csv", "r_bin,d1,d2,d4,count"),
        ("fig3_track.csv", "date,return,alpha,beta"),
        ("fig4_density.csv", "bin_start_date,break_count"),
    ] {
        assert_eq!(header(&plot.join(file)), cols, "{file}");
    }
    let returns = fs::read_to_string(plot.join("fig1_returns.csv")).unwrap();
    let track = fs::read_to_string(plot.join("fig3_track.csv")).unwrap();
    assert_eq!(returns.lines().count(), track.lines().count());
}

#[test]
fn plot_data_needs_every_upstream_stage() {
    let dir = tempfile::tempdir().unwrap();
    pipeline::run_full(&config(dir.path())).unwrap();
    fs::remove_file(dir.path().join(pipeline::TRACK_FILE)).unwrap();
    let err = pipeline::emit_plot_data(dir.path()).unwrap_err();
    assert!(matches!(err, Error::MissingStage(_)), "{err}");
}

#[test]
fn failing_stage_leaves_a_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    // Longer than the whole series, so no window fits.
    cfg.rolling.rolling.window_length = 10_000;
    let err = pipeline::run_full(&cfg).unwrap_err();
    assert!(err.to_string().contains("`rolling`"), "{err}");
    let m: pipeline::RunManifest =
        serde_json::from_slice(&fs::read(dir.path().join(pipeline::MANIFEST_FILE)).unwrap())
            .unwrap();
    assert_eq!(m.failed_stage.as_deref(), Some("rolling"));
    let names: Vec<&str> = m.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["ingest", "diagnose", "km"]);
    assert!(m.plot_data.is_empty());
}
