use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/worked_example")
}

fn riskvec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskvec")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Copies the two-user fixture into `dir`, keeping only posts whose user passes `keep`.
fn copy_fixture(dir: &Path, keep: impl Fn(&str) -> bool) -> PathBuf {
    for name in ["evac.geojson", "flood.geojson", "official.txt", "pipeline.toml"] {
        fs::copy(fixture_dir().join(name), dir.join(name)).unwrap();
    }
    let posts: String = fs::read_to_string(fixture_dir().join("posts.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| keep(l))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(dir.join("posts.jsonl"), posts).unwrap();
    dir.join("pipeline.toml")
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn version_prints_schema() {
    let o = riskvec(&["--version"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("config schema 1"));
}

#[test]
fn bad_config_exits_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "schema_version = 99\n").unwrap();
    let o = riskvec(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(riskvec(&["run", "--frobnicate"]).status.code(), Some(1));
}

#[test]
fn stage_without_upstream_names_missing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = copy_fixture(tmp.path(), |_| true);
    let o = riskvec(&["vectors", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run stage `ingest` first"), "{}", stderr(&o));
}

#[test]
fn vectors_stage_touches_only_its_outputs_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = copy_fixture(tmp.path(), |_| true);
    let cfg = cfg.to_str().unwrap();
    let out = tmp.path().join("out");
    assert!(riskvec(&["ingest", "--config", cfg]).status.success());
    let after_ingest = listing(&out);

    assert!(riskvec(&["vectors", "--config", cfg]).status.success());
    let mut expected = after_ingest.clone();
    expected.extend(["group_vector.geojson".to_string(), "vectors.geojson".to_string()]);
    expected.sort();
    assert_eq!(listing(&out), expected);

    let first = fs::read(out.join("vectors.geojson")).unwrap();
    assert!(riskvec(&["vectors", "--config", cfg]).status.success());
    assert_eq!(fs::read(out.join("vectors.geojson")).unwrap(), first);
}

#[test]
fn staged_run_matches_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = copy_fixture(tmp.path(), |_| true);
    let cfg = cfg.to_str().unwrap();
    for stage in ["ingest", "vectors", "risk", "classify", "features", "regress"] {
        let o = riskvec(&[stage, "--config", cfg]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let full = tmp.path().join("full");
    assert!(riskvec(&["run", "--config", cfg, "--out", full.to_str().unwrap()])
        .status
        .success());
    for name in ["rbq.csv", "users.csv", "regression.json"] {
        assert_eq!(
            fs::read(tmp.path().join("out").join(name)).unwrap(),
            fs::read(full.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn regress_with_one_user_is_sample_size_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = copy_fixture(tmp.path(), |l| l.contains("\"user\": \"u2\""));
    let o = riskvec(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sample size"), "{}", stderr(&o));
    assert_eq!(listing(&tmp.path().join("out")), vec!["error_report.json".to_string()]);
}

#[test]
fn synth_then_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("scenario");
    let o = riskvec(&["synth", "--seed", "7", "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = dir.join("pipeline.toml");
    let o = riskvec(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.join("out/run_manifest.json").exists());
}
