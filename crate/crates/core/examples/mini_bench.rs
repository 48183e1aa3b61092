//! A reduced benchmark grid written as CSV files.

use dualref::bench::{run_experiment_with, summarize, write_results, ExperimentConfig, Method};

fn main() -> dualref::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.payload.n_samples = 6;
    cfg.methods.methods = vec![Method::Nominal, Method::Fim];
    let results = run_experiment_with(&cfg, &mut |line| println!("{line}"))?;
    let out = std::env::temp_dir().join("dualref-mini-bench");
    write_results(&cfg, &results, &out)?;
    for s in summarize(&results.rows) {
        println!("{:>8} {:>10}: median pose error {:.3e} m", s.method, s.controller, s.pose_median);
    }
    println!("wrote {}", out.display());
    Ok(())
}
