use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use optlab::harness::bench::{run_suite, Suite};
use optlab::harness::{resolve, sweep, RunConfig, RunRecord};
use optlab::numerics::label_id;
use optlab::optim::presets;
use optlab::optim::OptimizerKind;
use optlab::verify::{self, Fault};
use optlab::Error;

use crate::args::{BenchArgs, Common, PresetArgs, RunArgs, VerifyArgs};

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    /// Input problems exit 2, everything else 1. `source` names the file
    /// that parse errors refer to.
    pub fn from_error(e: Error, source: Option<&Path>) -> Self {
        let code = match e {
            Error::Config(_) | Error::Parse { .. } | Error::UnsupportedEstimator(_) => 2,
            _ => 1,
        };
        let message = match (&e, source) {
            (Error::Parse { line, message }, Some(p)) => format!("{}:{line}: {message}", p.display()),
            _ => e.to_string(),
        };
        Self { code, message }
    }
}

pub type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

fn io(e: impl std::fmt::Display) -> Failure {
    Failure::runtime(e.to_string())
}

fn is_json(path: &Path, text: &str) -> bool {
    path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{')
}

/// Resolves the config file (key-value or JSON) with the command-line
/// overrides on top.
pub fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let overrides = common.overrides();
    let Some(path) = &common.config else {
        return resolve(None, &overrides)
            .map(|r| r.config)
            .map_err(|e| Failure::from_error(e, None));
    };
    let text = read(path)?;
    let fail = |e| Failure::from_error(e, Some(path));
    if is_json(path, &text) {
        RunConfig::from_json(&text).and_then(|c| c.with_overrides(&overrides)).map_err(fail)
    } else {
        resolve(Some(&text), &overrides).map(|r| r.config).map_err(fail)
    }
}

fn provenance(command: &str, common: &Common) -> serde_json::Value {
    serde_json::json!({
        "tool": "optlab",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config_file": common.config.as_ref().map(|p| p.display().to_string()),
        "overrides": common.overrides(),
    })
}

pub fn run_dir(root: &Path, config: &RunConfig) -> PathBuf {
    root.join(format!("{}-s{}", config.hash(), config.seed))
}

fn describe(record: &RunRecord) -> String {
    let s = &record.summary;
    match (s.diverged, s.final_loss) {
        (false, Some(f)) => format!(
            "{} on {}: loss {:.6e} -> {:.6e} in {} steps",
            s.optimizer, s.problem, s.initial_loss, f, s.steps_completed
        ),
        _ => format!(
            "{} on {}: diverged at step {}",
            s.optimizer,
            s.problem,
            s.divergence_step.map_or("?".into(), |d| d.to_string())
        ),
    }
}

fn parse_axis(spec: &str) -> Result<(String, Vec<String>), Failure> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| Failure::usage(format!("--sweep expects KEY=V1,V2,..., got '{spec}'")))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
    Ok((key.trim().to_string(), values))
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Outcome {
    let config = load_config(&args.common)?;
    let root = args.common.out_root();
    let prov = provenance("run", &args.common);
    if args.sweep.is_empty() {
        let record = optlab::run(&config).map_err(|e| Failure::from_error(e, None))?;
        let dir = run_dir(&root, &config);
        record.write(&dir, &config, prov).map_err(io)?;
        writeln!(out, "{}", describe(&record)).map_err(io)?;
        writeln!(out, "wrote {}", dir.display()).map_err(io)?;
        return Ok(());
    }

    let grid = args.sweep.iter().map(|s| parse_axis(s)).collect::<Result<Vec<_>, _>>()?;
    let cells = sweep(&config, &grid, args.common.jobs).map_err(|e| Failure::from_error(e, None))?;
    let mut best: Option<(f64, String)> = None;
    writeln!(out, "assignment,final_loss,reduction,dir").map_err(io)?;
    for cell in &cells {
        let dir = run_dir(&root, &cell.config);
        let mut p = prov.clone();
        p["sweep_assignment"] = serde_json::json!(cell.assignment);
        cell.record.write(&dir, &cell.config, p).map_err(io)?;
        let label = cell
            .assignment
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ");
        let s = &cell.record.summary;
        let (loss, ratio) = match s.final_loss {
            Some(f) => (format!("{f:e}"), format!("{:e}", s.initial_loss / f)),
            None => ("diverged".into(), String::new()),
        };
        writeln!(out, "{label},{loss},{ratio},{}", dir.display()).map_err(io)?;
        if let Some(f) = s.final_loss {
            if best.as_ref().is_none_or(|b| f < b.0) {
                best = Some((f, label));
            }
        }
    }
    match best {
        Some((f, label)) => writeln!(out, "best: {label} (final loss {f:e})"),
        None => writeln!(out, "best: none, every cell diverged"),
    }
    .map_err(io)
}

pub fn cmd_bench(args: &BenchArgs, out: &mut dyn Write) -> Outcome {
    let path = args
        .suite
        .as_ref()
        .or(args.common.config.as_ref())
        .ok_or_else(|| Failure::usage("bench needs a suite file"))?;
    let text = read(path)?;
    let suite = Suite::parse(&text).map_err(|e| Failure::from_error(e, Some(path)))?;
    let overrides = args.common.overrides();
    let result = run_suite(&suite, &overrides, args.common.jobs).map_err(|e| Failure::from_error(e, Some(path)))?;

    let stem = path.file_stem().map_or("suite".into(), |s| s.to_string_lossy().into_owned());
    let digest = label_id(&format!("{text}\n{}", overrides.join("\n")));
    let dir = args.common.out_root().join(format!("bench-{stem}-{:012x}", digest & 0xFFFF_FFFF_FFFF));
    fs::create_dir_all(&dir).map_err(io)?;
    let mut prov = provenance("bench", &args.common);
    prov["suite_file"] = serde_json::json!(path.display().to_string());
    for cell in &result.cells {
        let cell_dir = dir.join("cells").join(cell.label());
        cell.record.write(&cell_dir, &cell.config, prov.clone()).map_err(io)?;
    }
    let report = &result.report;
    fs::write(dir.join("report.csv"), report.to_csv()).map_err(io)?;
    fs::write(dir.join("report.txt"), report.to_text()).map_err(io)?;
    let json = serde_json::to_string_pretty(report).map_err(io)?;
    fs::write(dir.join("report.json"), json + "\n").map_err(io)?;
    write!(out, "{}", report.to_text()).map_err(io)?;
    writeln!(out, "wrote {}", dir.display()).map_err(io)
}

pub fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> Outcome {
    let fault = args
        .inject_fault
        .as_deref()
        .map(str::parse::<Fault>)
        .transpose()
        .map_err(|e| Failure::from_error(e, None))?;
    let report = verify::run_all(fault);
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report).map_err(io)?).map_err(io)?;
    } else {
        write!(out, "{}", report.to_text()).map_err(io)?;
    }
    if report.all_passed() {
        Ok(())
    } else {
        let names: Vec<String> = report.failures().map(|c| format!("{}/{}", c.group, c.name)).collect();
        Err(Failure::runtime(format!("failed: {}", names.join(", "))))
    }
}

pub fn cmd_presets(args: &PresetArgs, out: &mut dyn Write) -> Outcome {
    let filter = args
        .optimizer
        .as_deref()
        .map(str::parse::<OptimizerKind>)
        .transpose()
        .map_err(|e| Failure::from_error(e, None))?;
    for p in presets::all() {
        if filter.is_some_and(|k| k != p.optimizer) {
            continue;
        }
        writeln!(out, "{}.{}", p.optimizer.name(), p.tag).map_err(io)?;
        for (k, v) in &p.entries {
            writeln!(out, "  {k} = {v}").map_err(io)?;
        }
    }
    Ok(())
}
