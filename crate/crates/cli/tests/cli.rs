use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use optlab::harness::{parse_csv, CSV_HEADER};

const MINIMAL: &str = "steps = 100\n[optimizer]\nname = adamw\nlr = 0.01\n";

fn optlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optlab"))
        .current_dir(dir)
        .env_remove("OPTLAB_OUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn only_subdir(root: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

#[test]
fn minimal_run_writes_hundred_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.txt", MINIMAL);
    let o = optlab(tmp.path(), &["run", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = only_subdir(&tmp.path().join("runs"));
    assert!(run.file_name().unwrap().to_string_lossy().ends_with("-s1"));
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(csv.starts_with(CSV_HEADER));
    assert_eq!(parse_csv(&csv).unwrap().len(), 100);
}

#[test]
fn unknown_optimizer_exits_two_and_lists_names() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.txt", "steps = 10\n[optimizer]\nname = adamx\n");
    let o = optlab(tmp.path(), &["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("c.txt:3"), "{err}");
    for name in ["adamw", "soap", "mars-shampoo", "sf-adamw"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn set_overrides_file_and_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.txt", MINIMAL);
    let o = optlab(tmp.path(), &["run", "--config", &cfg, "--set", "lr=2e-3", "--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = only_subdir(&tmp.path().join("runs"));
    assert!(run.to_string_lossy().ends_with("-s9"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["hyper"]["lr"], 2e-3);
    assert_eq!(summary["config"]["seed"], 9);
    assert_eq!(summary["provenance"]["overrides"][0], "lr=2e-3");
    let rows = parse_csv(&fs::read_to_string(run.join("metrics.csv")).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r.lr == 2e-3));
}

#[test]
fn replay_from_summary_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.txt",
        "steps = 50\noptimizer = soap\nproblem.kind = mlp\nschedule.kind = cosine\nschedule.warmup = 5\n",
    );
    assert!(optlab(tmp.path(), &["run", "--config", &cfg, "--out", "a"]).status.success());
    let first = only_subdir(&tmp.path().join("a"));
    let summary = first.join("summary.json");
    let o = optlab(tmp.path(), &["run", "--config", summary.to_str().unwrap(), "--out", "b"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let second = only_subdir(&tmp.path().join("b"));
    assert_eq!(first.file_name(), second.file_name());
    assert_eq!(
        fs::read(first.join("metrics.csv")).unwrap(),
        fs::read(second.join("metrics.csv")).unwrap()
    );
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_optlab"))
        .current_dir(tmp.path())
        .env("OPTLAB_OUT", "elsewhere")
        .args(["run", "--set", "optimizer=lion", "--set", "steps=5"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("elsewhere").is_dir());
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn sweep_writes_one_directory_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.txt", MINIMAL);
    let o = optlab(
        tmp.path(),
        &["run", "--config", &cfg, "--sweep", "lr=1e-3,1e-2,1e-1", "--sweep", "weight_decay=0,0.1", "--jobs", "2"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_dir(tmp.path().join("runs")).unwrap().count(), 6);
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("lr=")).count(), 6);
    assert!(text.contains("best: lr=1e-1"), "{text}");
}

#[test]
fn plotdata_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.txt",
        "steps = 100\noptimizer = adamw\nlr = 0.01\nschedule.kind = cosine\nschedule.warmup = 10\nclip = 0.5\n",
    );
    assert!(optlab(tmp.path(), &["run", "--config", &cfg]).status.success());
    let run = only_subdir(&tmp.path().join("runs"));
    let run = run.to_str().unwrap();

    let lr = stdout(&optlab(tmp.path(), &["plotdata", run, "--kind", "lr"]));
    let points: Vec<(u64, f64)> = lr
        .lines()
        .skip(1)
        .map(|l| {
            let (s, v) = l.split_once(',').unwrap();
            (s.parse().unwrap(), v.parse().unwrap())
        })
        .collect();
    assert_eq!(points[9], (10, 0.01));
    assert!((points[99].1 - 1e-4).abs() <= 1e-15);

    let rows = parse_csv(&fs::read_to_string(Path::new(run).join("metrics.csv")).unwrap()).unwrap();
    let g = stdout(&optlab(tmp.path(), &["plotdata", run, "--kind", "gradnorm", "--window", "1"]));
    let logged: Vec<f64> = g.lines().skip(1).map(|l| l.split_once(',').unwrap().1.parse().unwrap()).collect();
    assert_eq!(logged, rows.iter().map(|r| r.grad_norm).collect::<Vec<_>>());
    assert!(logged.iter().any(|n| *n > 0.5), "pre-clip norms are logged");

    let smooth = stdout(&optlab(tmp.path(), &["plotdata", run, "--kind", "loss", "--window", "10"]));
    assert_eq!(smooth.lines().count(), 101);

    let d = optlab(tmp.path(), &["plotdata", run, "--kind", "dt"]);
    assert!(d.status.success());
    assert_eq!(stdout(&d), "step,d_t\n");
    assert!(stderr(&d).contains("warning"));
}

#[test]
fn bench_ranks_and_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = write(
        tmp.path(),
        "pair.txt",
        "optimizers = adamw, signum\nbudgets = 50, 100\nseeds = 1, 2\n[base]\nproblem.noise = 1.0\nlr = 1e-2\n",
    );
    let o = optlab(tmp.path(), &["bench", &suite, "--jobs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = only_subdir(&tmp.path().join("runs"));
    for f in ["report.csv", "report.txt", "report.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_dir(dir.join("cells")).unwrap().count(), 8);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    for budget in [50, 100] {
        let mut ranks: Vec<u64> = report["rows"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|r| r["budget"] == budget)
            .map(|r| r["rank"].as_u64().unwrap())
            .collect();
        ranks.sort();
        assert_eq!(ranks, vec![1, 2]);
    }
}

#[test]
fn verify_passes_and_names_injected_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = optlab(tmp.path(), &["verify"]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert!(!stdout(&ok).contains("FAIL"));

    let bad = optlab(tmp.path(), &["verify", "--inject-fault", "adamw-eps"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("FAIL  scalar-oracle/adamw "));
    assert!(stderr(&bad).contains("scalar-oracle/adamw"));
}

#[test]
fn presets_cover_every_optimizer() {
    let tmp = tempfile::tempdir().unwrap();
    let o = optlab(tmp.path(), &["presets"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for kind in optlab::OptimizerKind::ALL {
        assert!(text.contains(&format!("{}.124m_small", kind.name())), "{kind}");
        assert!(text.contains(&format!("{}.124m_large", kind.name())), "{kind}");
    }
    let bad = optlab(tmp.path(), &["presets", "--optimizer", "nope"]);
    assert_eq!(bad.status.code(), Some(2));
}
