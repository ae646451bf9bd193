use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_offline-vcg");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn learn_body(seeds: &str) -> String {
    format!(
        r#"{{"schema_version":1,
            "instance":{{"source":"builtin","name":"m2_single_agent"}},
            "data":{{"k":[200,2000],"seeds":{seeds}}},
            "learner":{{"iterations":16}},
            "evaluation":{{"misreports":{{"kind":"scalar_line","points":3}}}},
            "output":{{"name":"run"}}}}"#
    )
}

#[test]
fn exact_writes_report_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"schema_version":1,"instance":{"source":"builtin","name":"m2_externality"},"output":{"name":"exact"}}"#,
    );
    let out_dir = dir.path().join("out");
    let o = run(&["exact", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out_dir.join("exact.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
    assert!(out_dir.join("exact.json").exists());
}

#[test]
fn config_errors_exit_with_two_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let missing_h = write_config(
        dir.path(),
        "h.json",
        r#"{"schema_version":1,"instance":{"source":"random","S":2,"A":2,"n":1}}"#,
    );
    let o = run(&["exact", "--config", &missing_h]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`H`"));

    let k0 = write_config(
        dir.path(),
        "k.json",
        r#"{"schema_version":1,"instance":{"source":"builtin","name":"m2_zero"},"data":{"k":[0]}}"#,
    );
    let o = run(&["learn", "--config", &k0]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("data.k[0]"));

    let o = run(&["exact", "--config", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_exit_codes() {
    let o = run(&["check", "--suite", "regret"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("PASS regret"));
    let o = run(&["check", "--suite", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn learn_is_byte_reproducible_and_seed_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "l.json", &learn_body("[0,1]"));
    let read = |sub: &str, extra: &[&str]| {
        let out = dir.path().join(sub);
        let mut args = vec!["learn", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", "2"];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("run.timings.json").exists());
        (fs::read(out.join("run.csv")).unwrap(), fs::read(out.join("run.json")).unwrap())
    };
    let a = read("a", &[]);
    let b = read("b", &[]);
    assert_eq!(a, b);
    let c = read("c", &["--seed", "99"]);
    assert_ne!(a.0, c.0);
}

#[test]
fn sweep_report_merges_disjoint_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut sidecars = Vec::new();
    for (tag, seeds) in [("x", "[0,1]"), ("y", "[2,3]")] {
        let cfg = write_config(dir.path(), &format!("{tag}.json"), &learn_body(seeds));
        let out = dir.path().join(tag);
        let o = run(&["learn", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        sidecars.push(out.join("run.json").to_string_lossy().into_owned());
    }
    let merged = dir.path().join("merged");
    let o = run(&["sweep-report", &sidecars[0], "--out", merged.to_str().unwrap(), "--name", "one"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        fs::read(merged.join("one.csv")).unwrap(),
        fs::read(dir.path().join("x").join("run.csv")).unwrap()
    );

    let o = run(&["sweep-report", &sidecars[0], &sidecars[1], "--out", merged.to_str().unwrap(), "--name", "both"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = fs::read_to_string(merged.join("both.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 8);
    let agg = fs::read_to_string(merged.join("both.aggregates.csv")).unwrap();
    assert!(agg.lines().any(|l| l.starts_with("PES,OPT,2000,welfare_subopt,4,")));
    assert!(merged.join("both.plot.welfare_subopt.csv").exists());

    let junk = write_config(dir.path(), "junk.json", "{}");
    let o = run(&["sweep-report", &sidecars[0], &junk, "--out", merged.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
