use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn irlctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irlctl"))
        .args(args)
        .output()
        .expect("irlctl runs")
}

fn config(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn series(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir.join("series"))
        .expect("series dir")
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

/// Weight columns of a telemetry CSV, row by row.
fn weight_rows(path: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path).expect("telemetry");
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('w') && h[1..].chars().all(|c| c.is_ascii_digit()))
        .map(|(i, _)| i)
        .collect();
    assert!(!cols.is_empty(), "no weight columns in {header:?}");
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            cols.iter().map(|&c| f[c].parse().unwrap()).collect()
        })
        .collect()
}

const SHORT: &str = "sim.t_end_s=2.0";

#[test]
fn bundled_configs_validate() {
    for name in ["aerosonde.toml", "linear_benchmark.toml"] {
        let o = irlctl(&["validate", &config(name)]);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        assert!(stdout(&o).contains("valid"));
    }
}

#[test]
fn negative_saturation_names_the_field() {
    let o = irlctl(&["validate", &config("aerosonde.toml"), "--override", "saturation.u_max_deg=-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("saturation.u_max"), "{}", stderr(&o));
}

#[test]
fn interval_shorter_than_step_names_the_constraint() {
    let o = irlctl(&["validate", &config("linear_benchmark.toml"), "--override", "learner.interval_s=0.0005"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("learner.interval_s") && err.contains("at least dt"), "{err}");
}

#[test]
fn parse_errors_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[experiment]\nname = \"x\"\nlaw = [1,\n").unwrap();
    let o = irlctl(&["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn linear_run_writes_oracle_series() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = irlctl(&["run", &config("linear_benchmark.toml"), "--override", SHORT, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["telemetry.csv", "manifest.txt", "plot.py"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(series(&out).contains(&"weight_error.dat".to_string()));
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("oracle_weights"));
    assert!(manifest.contains("status = completed"));
}

#[test]
fn uav_run_writes_six_panels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("uav");
    let o = irlctl(&["run", &config("aerosonde.toml"), "--override", SHORT, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        series(&out),
        ["controls.dat", "errors.dat", "states.dat", "tracking.dat", "value.dat", "weights.dat"]
    );
    let tracking = std::fs::read_to_string(out.join("series/tracking.dat")).unwrap();
    assert!(tracking.starts_with("# phi\n"));
    assert!(tracking.contains("# psi_des\n"));
}

#[test]
fn law_flag_tags_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("base");
    let o = irlctl(&[
        "run",
        &config("linear_benchmark.toml"),
        "--override",
        SHORT,
        "--law",
        "baseline",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("law = baseline"));
    assert!(stdout(&o).contains("(baseline)"));
}

#[test]
fn numeric_fault_flushes_partial_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nf");
    let o = irlctl(&[
        "run",
        &config("linear_benchmark.toml"),
        "--override",
        "learner.alpha=1e300",
        "--override",
        SHORT,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("status = failed: numeric fault"));
    assert!(out.join("telemetry.csv").exists());
}

#[test]
fn check_suite_passes_and_detects_faults() {
    let o = irlctl(&["check"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 6);

    let o = irlctl(&["check", "--perturb-penalty", "1e-3"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("FAIL penalty identity"));

    let o = irlctl(&["check", "--gamma", "0"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("c*T"));
}

#[test]
fn sweep_emits_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = irlctl(&[
        "sweep",
        &config("linear_benchmark.toml"),
        "--grid",
        "experiment.law=novel,baseline",
        "--grid",
        "learner.q2=0.0,0.1",
        "--override",
        SHORT,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.contains(",ok,")));
    assert!(summary.starts_with("run,overrides,status,law,alpha,q2,k2,interval_s,gamma_per_s,e_hat_rms_last10"));
}

#[test]
fn sweep_echoes_uav_settings() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("uav");
    let o = irlctl(&[
        "sweep",
        &config("aerosonde.toml"),
        "--grid",
        "learner.q2=0.1",
        "--override",
        "sim.t_end_s=0.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let row = summary.lines().nth(1).unwrap();
    assert!(row.contains(",novel,16.1,0.1,0.01,0.001,0.1,"), "{row}");
}

#[test]
fn sweep_records_bad_points_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad");
    let o = irlctl(&[
        "sweep",
        &config("linear_benchmark.toml"),
        "--grid",
        "learner.alpha=-1.0,3.0",
        "--override",
        "sim.t_end_s=0.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].contains("config:"));
    assert!(rows[1].contains(",ok,"));
}

#[test]
fn reduced_novel_law_matches_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let reduce = [
        "learner.q2=0.0",
        "learner.k1=0.0",
        "learner.k2_diag=0.0",
        "learner.m_term=false",
        "learner.indicator=force_off",
        "sim.record_every=1",
        SHORT,
    ];
    let mut runs = Vec::new();
    for law in ["novel", "baseline"] {
        let out = dir.path().join(law);
        let mut args = vec!["run".to_string(), config("linear_benchmark.toml")];
        for r in reduce {
            args.push("--override".into());
            args.push(r.into());
        }
        args.extend(["--law".into(), law.into(), "--out".into(), out.to_string_lossy().into_owned()]);
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = irlctl(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        runs.push(weight_rows(&out.join("telemetry.csv")));
    }
    assert_eq!(runs[0].len(), runs[1].len());
    let diff = runs[0]
        .iter()
        .zip(&runs[1])
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0f64, f64::max);
    assert!(diff <= 1e-10, "max weight difference {diff}");
}

#[test]
fn identical_configs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("r{k}"));
        let o = irlctl(&["run", &config("aerosonde.toml"), "--override", SHORT, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        bytes.push((
            std::fs::read(out.join("telemetry.csv")).unwrap(),
            std::fs::read(out.join("manifest.txt")).unwrap(),
        ));
    }
    assert!(bytes[0] == bytes[1], "run artifacts differ between identical runs");
}
