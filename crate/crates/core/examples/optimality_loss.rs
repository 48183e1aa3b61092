//! Second-order optimality loss on a quadratic toy and on the arm.

use dualref::bench::{plan_method, ExperimentConfig, Method};
use dualref::objective::{optimality_loss, optimality_loss_model_at, optimality_loss_model_with, LossModelConfig};
use dualref::simloop::ControllerKind;

fn main() -> dualref::Result<()> {
    // J(d, theta) = (d - 2 theta)^2 + theta^2: planning with theta_bar costs 4 (theta - theta_bar)^2
    let f = |d: &[f64], t: &[f64]| (d[0] - 2.0 * t[0]).powi(2) + t[0] * t[0];
    let model = optimality_loss_model_with(f, &[1.0], &[0.0], &LossModelConfig::default())?;
    for theta in [0.5, 1.3, 2.0] {
        let measured = optimality_loss(f, &[1.0], &[theta], &[0.0], &LossModelConfig::default().optimizer)?;
        println!("theta {theta}: predicted {:.6}, measured {:.6}", model.predicted_loss(&[theta]), measured);
    }

    let mut cfg = ExperimentConfig::default();
    cfg.optimizer.max_iters = 60;
    let nominal = plan_method(&cfg, Method::Nominal, None, None)?;
    let ctx = cfg.context(ControllerKind::CtcFixed, false)?;
    let olm = optimality_loss_model_at(&nominal.design, &cfg.payload(), &ctx, 1e-4)?;
    println!("arm D matrix (m, h_x, h_y, I):\n{}", olm.d_matrix);
    Ok(())
}
