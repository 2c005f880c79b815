use std::fmt::Write as _;
use std::fs;
use std::io::Write;

use optlab::harness::{parse_csv, Row};

use crate::args::{PlotArgs, PlotKind};
use crate::commands::{Failure, Outcome};

impl PlotKind {
    pub fn column(self) -> &'static str {
        match self {
            PlotKind::Loss => "loss",
            PlotKind::Gradnorm => "grad_norm",
            PlotKind::Lr => "lr",
            PlotKind::Normgrowth => "param_norm",
            PlotKind::EffectiveLr => "effective_lr",
            PlotKind::Dt => "d_t",
            PlotKind::UpdateNorm => "update_norm",
        }
    }

    fn value(self, r: &Row) -> Option<f64> {
        match self {
            PlotKind::Loss => Some(r.loss),
            PlotKind::Gradnorm => Some(r.grad_norm),
            PlotKind::Lr => Some(r.lr),
            PlotKind::Normgrowth => Some(r.param_norm),
            PlotKind::EffectiveLr => Some(r.effective_lr),
            PlotKind::Dt => r.d_t,
            PlotKind::UpdateNorm => Some(r.update_norm),
        }
    }
}

/// EMA with `α = 2/(window + 1)` seeded by the first value; window 1 is the
/// identity.
pub fn ema(values: &[f64], window: usize) -> Vec<f64> {
    let alpha = 2.0 / (window.max(1) as f64 + 1.0);
    let mut out = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        out.push(if i == 0 { v } else { alpha * v + (1.0 - alpha) * out[i - 1] });
    }
    out
}

/// Two-column CSV of `kind` over the logged steps. Returns the text and
/// whether the column held any values.
pub fn plot_csv(rows: &[Row], kind: PlotKind, window: usize) -> (String, bool) {
    let points: Vec<(u64, f64)> = rows.iter().filter_map(|r| kind.value(r).map(|v| (r.step, v))).collect();
    let values: Vec<f64> = points.iter().map(|p| p.1).collect();
    let smoothed = ema(&values, window);
    let mut s = format!("step,{}\n", kind.column());
    for ((step, _), v) in points.iter().zip(&smoothed) {
        let _ = writeln!(s, "{step},{v:?}");
    }
    (s, !points.is_empty())
}

pub fn cmd_plotdata(args: &PlotArgs, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    if args.window == 0 {
        return Err(Failure::usage("--window must be at least 1"));
    }
    let path = args.run_dir.join("metrics.csv");
    let text = fs::read_to_string(&path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    let rows = parse_csv(&text).map_err(|e| Failure::from_error(e, Some(&path)))?;
    let (csv, populated) = plot_csv(&rows, args.kind, args.window);
    if !populated {
        let _ = writeln!(
            err,
            "warning: column {} is empty in {}; output has a header only",
            args.kind.column(),
            path.display()
        );
    }
    match &args.out {
        Some(file) => fs::write(file, csv).map_err(|e| Failure::runtime(e.to_string())),
        None => out.write_all(csv.as_bytes()).map_err(|e| Failure::runtime(e.to_string())),
    }
}
