//! End-to-end exercise of the `tdb` binary: compress a synthetic stream,
//! then describe, decompress, and analyze the resulting archive.

use std::path::Path;
use std::process::Command;

fn tdb() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tdb"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn tdb");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn count_lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn full_pipeline_on_an_exact_rank_stream() {
    let dir = tempfile::tempdir().unwrap();
    let archive = dir.path().join("run.tdbc");
    let log = dir.path().join("run.csv");
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            r#"
[stream]
kind = "exact_rank"
dims = [10, 8, 6]
ranks = [2, 3, 2]
seed = 42
dt = 1e-2

[compression]
integrator = "rk2"
derivative = "exact"
eps_th = inf
gamma_th = 99.9
initial_ranks = [2, 3, 2]
max_steps = 15

[output]
archive = "{}"
log = "{}"
"#,
            archive.display(),
            log.display()
        ),
    )
    .unwrap();

    let stdout = run_ok(tdb().arg("compress").arg("--config").arg(&config));
    assert!(stdout.contains("compressed 16 steps"), "stdout: {stdout}");
    assert!(archive.exists());
    assert_eq!(count_lines(&log), 17, "header plus one row per step");
    let meta = dir.path().join("run.meta.toml");
    let meta_text = std::fs::read_to_string(&meta).unwrap();
    let parsed: toml::Value = toml::from_str(&meta_text).unwrap();
    assert_eq!(parsed["summary"]["steps"].as_integer(), Some(16));
    assert_eq!(parsed["summary"]["reinit_count"].as_integer(), Some(0));

    let stdout = run_ok(tdb().arg("describe").arg("--archive").arg(&archive));
    assert!(stdout.contains("records: 16"), "stdout: {stdout}");
    assert!(stdout.contains("initial ranks: [2, 3, 2]"), "stdout: {stdout}");

    let snaps = dir.path().join("snaps");
    run_ok(
        tdb()
            .arg("decompress")
            .arg("--archive")
            .arg(&archive)
            .arg("--times")
            .arg("0.0,0.05,0.149")
            .arg("--out")
            .arg(&snaps),
    );
    let mut produced: Vec<_> = std::fs::read_dir(&snaps)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    produced.sort();
    assert_eq!(produced.len(), 3, "one tensor per requested time: {produced:?}");
    assert!(produced.iter().all(|f| f.ends_with(".tdbt")));

    let analysis = dir.path().join("analysis");
    run_ok(
        tdb()
            .arg("analyze")
            .arg("--archive")
            .arg(&archive)
            .arg("--out")
            .arg(&analysis),
    );
    for name in ["error.csv", "cr.csv", "gamma.csv", "spectra_mode1.csv"] {
        let p = analysis.join(name);
        assert!(p.exists(), "missing {name}");
        assert_eq!(count_lines(&p), 17, "{name} rows");
    }

    let bench = dir.path().join("bench.csv");
    run_ok(
        tdb()
            .arg("bench")
            .arg("--sizes")
            .arg("8,12")
            .arg("--rank")
            .arg("2")
            .arg("--trials")
            .arg("1")
            .arg("--out")
            .arg(&bench),
    );
    assert_eq!(count_lines(&bench), 3, "header plus one row per size");
    assert!(dir.path().join("bench.slopes.csv").exists());
}

#[test]
fn bad_config_fails_with_categorized_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[stream]\nkind = \"nope\"\n").unwrap();
    let out = tdb()
        .arg("compress")
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error["), "stderr: {stderr}");
}
