//! Benchmark grid bookkeeping and CSV outputs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use dualref::bench::{read_rows_csv, run_experiment, write_results, ExperimentConfig, Method, ResultRow};
use dualref::simloop::ControllerKind;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dualref-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.payload.n_samples = 3;
    cfg.optimizer.max_iters = 3;
    cfg.methods.methods = vec![Method::Nominal, Method::Fim];
    cfg
}

#[test]
fn no_mismatch_reaches_the_target() {
    let mut cfg = ExperimentConfig::default();
    cfg.payload.n_samples = 1;
    cfg.payload.relative_std = 1e-12;
    cfg.methods.methods = vec![Method::Nominal];
    cfg.methods.controllers = vec![ControllerKind::CtcFixed];
    let res = run_experiment(&cfg).unwrap();
    assert_eq!(res.rows.len(), 1);
    let row = &res.rows[0];
    assert!(!row.diverged);
    assert!(row.final_pose_error < 1e-3, "{}", row.final_pose_error);
}

fn quantile7(v: &mut [f64], p: f64) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * p;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    if lo == hi {
        v[lo]
    } else {
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    }
}

#[test]
fn grid_files_and_reaggregation() {
    let cfg = small_config();
    let res = run_experiment(&cfg).unwrap();
    assert_eq!(res.rows.len(), 2 * 3 * 3);
    let out = scratch("grid");
    write_results(&cfg, &res, &out).unwrap();

    let rows_text = std::fs::read_to_string(out.join("rows.csv")).unwrap();
    assert_eq!(rows_text.lines().count(), 1 + res.rows.len());
    for name in ["summary.csv", "trajectories.csv", "methods.csv", "timings.csv", "config.toml"] {
        assert!(out.join(name).exists(), "{name}");
    }

    // independent re-aggregation straight from the CSV text
    let mut reader = csv::Reader::from_path(out.join("rows.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let mut groups: BTreeMap<(String, String), Vec<csv::StringRecord>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.unwrap();
        groups.entry((rec[0].to_string(), rec[1].to_string())).or_default().push(rec);
    }
    let mut summary = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let sh: Vec<String> = summary.headers().unwrap().iter().map(String::from).collect();
    let scol = |name: &str| sh.iter().position(|h| h == name).unwrap();
    let mut seen = 0;
    for rec in summary.records() {
        let rec = rec.unwrap();
        let g = &groups[&(rec[0].to_string(), rec[1].to_string())];
        let num = |r: &csv::StringRecord, c: usize| r[c].parse::<f64>().unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0) || (a.is_nan() && b.is_nan());
        let mut pose: Vec<f64> = g.iter().map(|r| num(r, col("final_pose_error"))).collect();
        assert!(close(num(&rec, scol("pose_median")), quantile7(&mut pose, 0.5)));
        assert!(close(num(&rec, scol("pose_q1")), quantile7(&mut pose, 0.25)));
        assert!(close(num(&rec, scol("pose_q3")), quantile7(&mut pose, 0.75)));
        let ok: Vec<_> = g.iter().filter(|r| &r[col("diverged")] == "0").collect();
        for p in ["m", "cx", "cy", "i"] {
            let e: Vec<f64> = ok.iter().map(|r| num(r, col(&format!("err_{p}")))).collect();
            let n = e.len() as f64;
            let mean = e.iter().sum::<f64>() / n;
            let sd = if e.len() > 1 {
                (e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let imp = ok.iter().map(|r| num(r, col(&format!("imp_{p}")))).sum::<f64>() / n;
            assert!(close(num(&rec, scol(&format!("{p}_mu"))), mean), "{p} mean");
            assert!(close(num(&rec, scol(&format!("{p}_sigma"))), sd), "{p} sigma");
            assert!(close(num(&rec, scol(&format!("{p}_improvement"))), imp), "{p} improvement");
        }
        seen += 1;
    }
    assert_eq!(seen, groups.len());

    let back = read_rows_csv(&out.join("rows.csv")).unwrap();
    assert_eq!(back.len(), res.rows.len());
    for (a, b) in back.iter().zip(&res.rows) {
        assert_eq!((a.method, a.controller, a.sample), (b.method, b.controller, b.sample));
        assert_eq!(a.final_pose_error, b.final_pose_error);
        assert!(a.final_error.iter().all(|e| *e >= 0.0 || e.is_nan()));
    }
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn single_row_file_has_two_lines() {
    let cfg = small_config();
    let mut res = run_experiment(&ExperimentConfig {
        methods: dualref::bench::MethodSection {
            methods: vec![Method::Nominal],
            controllers: vec![ControllerKind::CtcFixed],
            ..cfg.methods.clone()
        },
        ..cfg.clone()
    })
    .unwrap();
    res.rows.truncate(1);
    let out = scratch("single");
    write_results(&cfg, &res, &out).unwrap();
    assert_eq!(std::fs::read_to_string(out.join("rows.csv")).unwrap().lines().count(), 2);
    let _ = std::fs::remove_dir_all(&out);

    let empty = dualref::bench::ExperimentResults { rows: Vec::<ResultRow>::new(), ..res };
    assert!(write_results(&cfg, &empty, &scratch("empty")).is_err());
}
