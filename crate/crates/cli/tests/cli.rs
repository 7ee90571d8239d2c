use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_nirbench");
const MOCK: &str = env!("CARGO_BIN_EXE_mock-adapter");

fn nirbench(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Two small synthetic datasets plus a manifest; returns the manifest path.
fn synth(dir: &Path, extra: &str) -> PathBuf {
    let data = dir.join("data");
    let o = nirbench(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--datasets",
        "2",
        "--seed",
        "7",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = data.join("manifest.toml");
    if !extra.is_empty() {
        let body = fs::read_to_string(&manifest).unwrap();
        fs::write(&manifest, format!("{body}\n{extra}")).unwrap();
    }
    manifest
}

fn run(manifest: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--workers",
        "2",
    ];
    args.extend_from_slice(extra);
    nirbench(&args)
}

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(str::to_string)
        .collect()
}

#[test]
fn list_pipelines_prints_counts() {
    let lin = text(&nirbench(&["list-pipelines", "linear"]));
    assert!(lin.contains("= 24"), "{lin}");
    assert!(lin.contains("60"), "{lin}");
    let tab = text(&nirbench(&["list-pipelines", "tabular"]));
    assert!(tab.contains("= 21"), "{tab}");
    assert!(tab.contains("30"), "{tab}");
    let bad = nirbench(&["list-pipelines", "quadratic"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn run_resume_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), "");
    let out = tmp.path().join("run");
    let o = run(&manifest, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("results.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.contains(",ok,")));
    for f in [
        "robustness.csv",
        "trials.csv",
        "ranks.csv",
        "winloss.csv",
        "friedman.json",
        "plot_data.csv",
        "cumulative.csv",
        "cd_diagram.svg",
        "manifest.toml",
        "run.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let before = fs::read(out.join("results.csv")).unwrap();

    let again = run(&manifest, &out, &["--resume"]);
    assert_eq!(again.status.code(), Some(0));
    assert!(text(&again).contains("4 resumed"), "{}", text(&again));
    assert_eq!(fs::read(out.join("results.csv")).unwrap(), before);

    let rep = nirbench(&[
        "report",
        "--run",
        out.to_str().unwrap(),
        "--reference",
        "ridge",
        "--exact-friedman",
    ]);
    assert!(rep.status.success(), "{}", String::from_utf8_lossy(&rep.stderr));
    let wl = fs::read_to_string(out.join("winloss.csv")).unwrap();
    assert!(wl.lines().any(|l| l.starts_with("regression,pls,ridge,")), "{wl}");
    let fr: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("friedman.json")).unwrap()).unwrap();
    assert!(fr.to_string().contains("exact"), "{fr}");
    let svg = fs::read_to_string(out.join("cd_diagram.svg")).unwrap();
    assert!(svg.trim_start().starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<text").count(), svg.matches("</text>").count());

    let missing = nirbench(&["report", "--run", out.to_str().unwrap(), "--reference", "nosuch"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn dataset_glob_and_model_filter() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), "");
    let out = tmp.path().join("run");
    let o = run(&manifest, &out, &["--datasets", "*_1", "--models", "ridge"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("results.csv"));
    assert_eq!(rows.len(), 1);
    assert!(
        rows[0].starts_with("synthetic_1,db1,regression,ridge,ok,"),
        "{}",
        rows[0]
    );

    assert_eq!(run(&manifest, &out, &["--models", "nosuch"]).status.code(), Some(1));
    assert_eq!(run(&manifest, &out, &["--datasets", "zzz*"]).status.code(), Some(1));
}

#[test]
fn missing_config_is_a_configuration_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&tmp.path().join("absent.toml"), &tmp.path().join("run"), &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn external_models_through_the_bridge() {
    let tmp = tempfile::tempdir().unwrap();
    let extra = format!(
        "[[external]]\nid = \"mockmean\"\ncommand = [{MOCK:?}, \"mean\"]\nfamily = \"tabular\"\n\n\
         [[external]]\nid = \"ghost\"\ncommand = [\"/nonexistent/adapter\"]\n"
    );
    let manifest = synth(tmp.path(), &extra);
    let body = fs::read_to_string(&manifest).unwrap().replace(
        "models = [\"pls\", \"ridge\"]",
        "models = [\"pls\", \"mockmean\", \"ghost\"]",
    );
    fs::write(&manifest, body).unwrap();
    let out = tmp.path().join("run");
    let o = run(&manifest, &out, &[]);
    // the unavailable model makes the run partial, not fatal
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("results.csv"));
    assert_eq!(rows.len(), 6);
    assert_eq!(rows.iter().filter(|r| r.contains(",ghost,unavailable,")).count(), 2);
    assert_eq!(rows.iter().filter(|r| r.contains(",mockmean,ok,")).count(), 2);
    let cell: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("cells/synthetic_0__mockmean.json")).unwrap()).unwrap();
    assert_eq!(cell["test_evaluations"], 1);
    assert_eq!(cell["counts"]["nominal_fits"], 90);
    assert_eq!(cell["counts"]["phase1_pipelines"], 21);
}
