use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poisson-chaos")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn malformed_config_exits_2_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "command = \"rgg\"\n[rgg\nd = 1\n");
    let o = run(&["--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn unknown_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "command = \"besov\"\n[besov]\nbeta = 0.25\nlamdas = [10.0, 100.0]\n");
    let o = run(&["--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lamdas"));
    assert!(!out.exists());
}

#[test]
fn invalid_parameters_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "command = \"rgg\"\n[rgg]\nradius = { rule = \"power\", c = 1.0, gamma = 0.5 }\n");
    let o = run(&["--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let o = run(&["--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "no command given");
}

#[test]
fn same_seed_gives_identical_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in ["bounds", "besov", "rgg"] {
        let a = tmp.path().join(format!("{cmd}_a"));
        let b = tmp.path().join(format!("{cmd}_b"));
        for dir in [&a, &b] {
            let o = run(&[cmd, "--quick", "--seed", "11", "--reps", "2000", "--out", dir.to_str().unwrap()]);
            assert!(o.status.code().is_some_and(|c| c <= 1), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let (fa, fb) = (csv_files(&a), csv_files(&b));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{cmd}");
    }
}

#[test]
fn csvs_carry_seed_and_header() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run(&["rgg", "--quick", "--seed", "5", "--reps", "2000", "--out", out.to_str().unwrap()]);
    assert!(o.status.code().is_some_and(|c| c <= 1));
    for (name, bytes) in csv_files(&out) {
        let text = String::from_utf8(bytes).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# seed=5"), "{name}");
        assert!(lines.next().unwrap().starts_with(|c: char| c.is_ascii_lowercase()), "{name}");
        assert!(!text.contains('\r'), "{name}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["command"], "rgg");
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert!(manifest["versions"]["core"].is_string());
}

#[test]
fn config_file_values_and_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("from_config");
    let cfg = write_config(
        tmp.path(),
        &format!(
            "command = \"besov\"\nseed = 9\noutput_dir = \"{}\"\n[besov]\nlambdas = [10.0, 100.0]\nsmooth_lambda = 10.0\ndictionary = 4\n",
            out.display()
        ),
    );
    let o = run(&["--config", &cfg, "--reps", "500", "--quick"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("besov_bound.csv")).unwrap();
    assert!(text.starts_with("# seed=9\n"));
    assert_eq!(text.lines().count(), 4);

    let o = run(&["--config", &cfg, "--seed", "10", "--quick", "--reps", "500"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(std::fs::read_to_string(out.join("besov_bound.csv")).unwrap().starts_with("# seed=10\n"));
}

#[test]
fn verify_quick_passes_within_a_minute() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let start = Instant::now();
    let o = run(&["verify", "--quick", "--out", out.to_str().unwrap()]);
    let elapsed = start.elapsed();
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}\n{}", String::from_utf8_lossy(&o.stderr));
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    assert!(!stdout.contains("FAIL"));
    assert!(out.join("checks.csv").is_file());
}
