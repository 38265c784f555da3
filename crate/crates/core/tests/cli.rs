use std::fs;
use std::process::Command as Process;

use tunnel_accel::cli::{execute, Command};
use tunnel_accel::config::RunConfig;
use tunnel_accel::trajectory::read_profiles_csv;
use tunnel_accel::Error;

fn config_in(dir: &std::path::Path) -> RunConfig {
    RunConfig::default().with_overrides(Some(4), Some(dir.to_path_buf()), Some(1))
}

#[test]
fn preprocess_differentiates_ingested_tracks_without_acceleration() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("vehicle_id,t,x,v\n");
    for i in 0..=40 {
        let t = i as f64 * 0.05;
        // v = 20 + 2t and x = 20t + t², so a = 2 everywhere.
        csv.push_str(&format!("veh1,{t},{},{}\n", -5.0 + 20.0 * t + t * t, 20.0 + 2.0 * t));
    }
    fs::write(dir.path().join("tracks.csv"), csv).unwrap();
    execute(Command::Preprocess, &config_in(dir.path())).unwrap();
    let profiles = read_profiles_csv(fs::File::open(dir.path().join("profiles.csv")).unwrap()).unwrap();
    assert_eq!(profiles.len(), 1);
    assert!(profiles[0].a_at.iter().all(|a| (a - 2.0).abs() < 1e-9), "{:?}", profiles[0].a_at);
}

#[test]
fn stages_name_their_missing_producer() {
    let dir = tempfile::tempdir().unwrap();
    let err = execute(Command::Train, &config_in(dir.path())).unwrap_err();
    assert!(matches!(err, Error::MissingArtifact { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("run `preprocess` first"), "{err}");
}

#[test]
fn binary_reports_config_errors_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[run]\nseed = 1\n[train]\nbatch_size = 0\n").unwrap();
    let out = Process::new(env!("CARGO_BIN_EXE_tunnel-accel"))
        .arg("generate")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3") && stderr.contains("batch_size"), "{stderr}");
}

#[test]
fn binary_generate_honours_seed_and_out() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    fs::write(&config, "[scenario]\nn_vehicles = 12\nduration = 40.0\n").unwrap();
    let run = |seed: &str, out: &std::path::Path| {
        let status = Process::new(env!("CARGO_BIN_EXE_tunnel-accel"))
            .args(["--config", config.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap(), "--jobs", "1", "generate"])
            .status()
            .unwrap();
        assert!(status.success());
        fs::read(out.join("tracks.csv")).unwrap()
    };
    let a = run("5", &dir.path().join("a"));
    let b = run("5", &dir.path().join("b"));
    let c = run("6", &dir.path().join("c"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let resolved = fs::read_to_string(dir.path().join("a/resolved_config.toml")).unwrap();
    assert!(resolved.contains("seed = 5"), "{resolved}");
}

#[test]
fn worker_count_does_not_change_results() {
    let text = "[scenario]\nn_vehicles = 90\nduration = 300.0\n\n[env]\nwindow_min = 1.0\nwarmup_min = 1.0\nmin_support = 2\n\n\
                [data]\nhistory_len = 20\nanchor_stride = 50\n\n[model]\nhidden = 4\ncnn_channels = 2\n\n\
                [train]\nmax_epochs = 1\nmax_steps = 3\nbatch_size = 16\n\n[experiment]\nhorizons = [10]\nseeds = 2\n";
    let dir = tempfile::tempdir().unwrap();
    let run = |jobs: usize| {
        let out = dir.path().join(format!("jobs{jobs}"));
        let cfg = RunConfig::from_toml(text, "jobs.toml").unwrap().with_overrides(None, Some(out.clone()), Some(jobs));
        execute(Command::Pipeline, &cfg).unwrap();
        (fs::read(out.join("runs.csv")).unwrap(), fs::read(out.join("grid.csv")).unwrap())
    };
    assert_eq!(run(1), run(3));
}
