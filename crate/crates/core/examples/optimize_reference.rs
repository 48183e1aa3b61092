//! Nominal and robust references for the benchmark task.

use dualref::bench::{plan_method, ExperimentConfig, Method};
use dualref::simloop::ControllerKind;

fn main() -> dualref::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.optimizer.dual_max_iters = 5;
    let ctx = cfg.context(ControllerKind::CtcFixed, false)?;
    let straight = ctx.initial_design();
    println!("straight line: J = {:.6e}", ctx.cost(straight.as_slice(), &cfg.payload())?);

    let nominal = plan_method(&cfg, Method::Nominal, None, None)?;
    println!(
        "nominal: J = {:.6e} after {} iterations ({:.1} s)",
        nominal.objective, nominal.iterations, nominal.wall_time
    );
    let robust = plan_method(&cfg, Method::Ro, Some(ControllerKind::Nac), Some(&nominal.design))?;
    println!(
        "robust (nac): J = {:.6e} after {} iterations ({:.1} s)",
        robust.objective, robust.iterations, robust.wall_time
    );
    Ok(())
}
