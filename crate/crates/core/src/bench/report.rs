//! CSV output of a benchmark run.
//!
//! * `rows.csv`: one line per rollout; no timing, so identical configs give identical bytes.
//! * `summary.csv`: per method × controller, pose-error quartiles and per-parameter
//!   mean/std/improvement over the rows that did not diverge.
//! * `trajectories.csv`: sampled references of every method.
//! * `methods.csv`: objective value and information trace of every reference.
//! * `timings.csv`: wall time of every planning step and rollout.

use std::fs;
use std::path::Path;

use crate::dynamics::BODY_PARAMS;
use crate::error::{Error, Result};
use crate::reference::Reference;
use crate::simloop::ControllerKind;

use super::{ExperimentConfig, ExperimentResults, Method, ResultRow};

pub const PARAM_NAMES: [&str; BODY_PARAMS] = ["m", "cx", "cy", "i"];

fn rows_header() -> Vec<String> {
    let mut h: Vec<String> = ["method", "controller", "sample", "final_pose_error"].map(String::from).to_vec();
    for prefix in ["err0", "err", "imp"] {
        h.extend(PARAM_NAMES.iter().map(|p| format!("{prefix}_{p}")));
    }
    h.push("diverged".into());
    h
}

/// Linear-interpolation quantile (type 7) of finite or infinite values.
pub(crate) fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi || v[lo] == v[hi] {
        v[lo]
    } else {
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub controller: ControllerKind,
    pub n: usize,
    pub n_diverged: usize,
    pub pose_q1: f64,
    pub pose_median: f64,
    pub pose_q3: f64,
    pub pose_mean: f64,
    pub error_mean: [f64; BODY_PARAMS],
    pub error_std: [f64; BODY_PARAMS],
    pub improvement_mean: [f64; BODY_PARAMS],
}

/// Aggregates rows per (method, controller) in the order they first appear.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Method, ControllerKind)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.method, r.controller)) {
            keys.push((r.method, r.controller));
        }
    }
    keys.into_iter()
        .map(|(method, controller)| {
            let group: Vec<&ResultRow> = rows.iter().filter(|r| r.method == method && r.controller == controller).collect();
            let pose: Vec<f64> = group.iter().map(|r| r.final_pose_error).collect();
            let ok: Vec<&&ResultRow> = group.iter().filter(|r| !r.diverged).collect();
            let mut error_mean = [f64::NAN; BODY_PARAMS];
            let mut error_std = [f64::NAN; BODY_PARAMS];
            let mut improvement_mean = [f64::NAN; BODY_PARAMS];
            for j in 0..BODY_PARAMS {
                let e: Vec<f64> = ok.iter().map(|r| r.final_error[j]).collect();
                (error_mean[j], error_std[j]) = mean_std(&e);
                let imp: Vec<f64> = ok.iter().map(|r| r.improvement[j]).collect();
                improvement_mean[j] = mean_std(&imp).0;
            }
            SummaryRow {
                method,
                controller,
                n: group.len(),
                n_diverged: group.len() - ok.len(),
                pose_q1: quantile(&pose, 0.25),
                pose_median: quantile(&pose, 0.5),
                pose_q3: quantile(&pose, 0.75),
                pose_mean: pose.iter().sum::<f64>() / pose.len() as f64,
                error_mean,
                error_std,
                improvement_mean,
            }
        })
        .collect()
}

fn write_rows(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(rows_header())?;
    for r in rows {
        let mut rec = vec![
            r.method.to_string(),
            r.controller.to_string(),
            r.sample.to_string(),
            r.final_pose_error.to_string(),
        ];
        for block in [&r.initial_error, &r.final_error, &r.improvement] {
            rec.extend(block.iter().map(f64::to_string));
        }
        rec.push(u8::from(r.diverged).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a `rows.csv` written by [`write_results`]; timings are not stored there and read as 0.
pub fn read_rows_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != rows_header() {
        return Err(Error::Config(format!("{} is not a rows file", path.display())));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Config(format!("bad number '{s}': {e}")));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let block = |offset: usize| -> Result<[f64; BODY_PARAMS]> {
            let mut out = [0.0; BODY_PARAMS];
            for (j, v) in out.iter_mut().enumerate() {
                *v = num(&rec[offset + j])?;
            }
            Ok(out)
        };
        rows.push(ResultRow {
            method: rec[0].parse()?,
            controller: rec[1].parse()?,
            sample: rec[2].parse().map_err(|e| Error::Config(format!("bad sample id: {e}")))?,
            final_pose_error: num(&rec[3])?,
            initial_error: block(4)?,
            final_error: block(8)?,
            improvement: block(12)?,
            diverged: &rec[16] == "1",
            wall_time: 0.0,
        });
    }
    Ok(rows)
}

fn write_summary(summary: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut h: Vec<String> = [
        "method",
        "controller",
        "n",
        "n_diverged",
        "pose_q1",
        "pose_median",
        "pose_q3",
        "pose_mean",
    ]
    .map(String::from)
    .to_vec();
    for p in PARAM_NAMES {
        h.extend([format!("{p}_mu"), format!("{p}_sigma"), format!("{p}_improvement")]);
    }
    w.write_record(&h)?;
    for s in summary {
        let mut rec = vec![
            s.method.to_string(),
            s.controller.to_string(),
            s.n.to_string(),
            s.n_diverged.to_string(),
            s.pose_q1.to_string(),
            s.pose_median.to_string(),
            s.pose_q3.to_string(),
            s.pose_mean.to_string(),
        ];
        for j in 0..BODY_PARAMS {
            rec.extend([
                s.error_mean[j].to_string(),
                s.error_std[j].to_string(),
                s.improvement_mean[j].to_string(),
            ]);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn controller_label(c: Option<ControllerKind>) -> &'static str {
    c.map_or("all", ControllerKind::label)
}

fn write_trajectories(cfg: &ExperimentConfig, results: &ExperimentResults, path: &Path) -> Result<()> {
    let ctx = cfg.context(ControllerKind::CtcFixed, false)?;
    let n = ctx.model.n_links();
    let mut w = csv::Writer::from_path(path)?;
    let mut h: Vec<String> = vec!["method".into(), "controller".into(), "t".into()];
    for prefix in ["q", "dq", "ddq"] {
        h.extend((0..n).map(|j| format!("{prefix}{j}")));
    }
    w.write_record(&h)?;
    let steps = ctx.sim.n_steps()?;
    for d in &results.designs {
        let traj = ctx.trajectory(&d.design)?;
        for k in 0..=steps {
            let t = (k as f64 * ctx.sim.step).min(ctx.sim.duration);
            let s = traj.sample(t)?;
            let mut rec = vec![d.method.to_string(), controller_label(d.controller).to_string(), t.to_string()];
            for v in [&s.q, &s.dq, &s.ddq] {
                rec.extend(v.iter().map(f64::to_string));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_methods(results: &ExperimentResults, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = results.designs.first().map_or(0, |d| d.design.len());
    let mut h: Vec<String> = ["method", "controller", "objective", "fisher_trace", "iterations", "converged"]
        .map(String::from)
        .to_vec();
    h.extend((0..n).map(|i| format!("d{i}")));
    w.write_record(&h)?;
    for d in &results.designs {
        let mut rec = vec![
            d.method.to_string(),
            controller_label(d.controller).to_string(),
            d.objective.to_string(),
            d.fisher_trace.to_string(),
            d.iterations.to_string(),
            u8::from(d.converged).to_string(),
        ];
        rec.extend(d.design.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_timings(results: &ExperimentResults, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["stage", "method", "controller", "sample", "wall_time"])?;
    for d in &results.designs {
        w.write_record([
            "plan",
            d.method.label(),
            controller_label(d.controller),
            "",
            &d.wall_time.to_string(),
        ])?;
    }
    for r in &results.rows {
        w.write_record([
            "rollout",
            r.method.label(),
            r.controller.label(),
            &r.sample.to_string(),
            &r.wall_time.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes all result files into `out_dir`, creating it if needed.
pub fn write_results(cfg: &ExperimentConfig, results: &ExperimentResults, out_dir: &Path) -> Result<()> {
    if results.rows.is_empty() {
        return Err(Error::Config("no result rows to write".into()));
    }
    fs::create_dir_all(out_dir)?;
    write_rows(&results.rows, &out_dir.join("rows.csv"))?;
    write_summary(&summarize(&results.rows), &out_dir.join("summary.csv"))?;
    write_trajectories(cfg, results, &out_dir.join("trajectories.csv"))?;
    write_methods(results, &out_dir.join("methods.csv"))?;
    write_timings(results, &out_dir.join("timings.csv"))?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}
