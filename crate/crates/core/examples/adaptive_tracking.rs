//! The three benchmark controllers tracking one reference with a mismatched payload.

use dualref::control::ControllerGains;
use dualref::dynamics::{two_link_ik, InertialParams, ManipulatorModel};
use dualref::reference::{make_spline, straight_line_design, Boundary, SplineConfig};
use dualref::simloop::{rollout, ControllerKind, SimConfig};
use nalgebra::DMatrix;

fn main() -> dualref::Result<()> {
    let model = ManipulatorModel::two_link_default();
    let boundary = Boundary::new(two_link_ik(&model, [0.6, -0.4], false)?, two_link_ik(&model, [0.3, 0.6], false)?)?;
    let cfg = SplineConfig { n_control: 8, ..SplineConfig::default() };
    let traj = make_spline(&boundary, &straight_line_design(&boundary, &cfg), &cfg)?;

    let truth = InertialParams::from_com(3.1, [0.07, 0.01], 0.005);
    let prior = InertialParams::from_com(2.0, [0.04, 0.04], 0.00333);
    let mut gains = ControllerGains::default_for(2);
    gains.rls_prior_covariance = DMatrix::from_diagonal(&prior.to_vector().map(|v| (0.5 * v).powi(2)));

    for kind in ControllerKind::BENCH {
        let mut sim = SimConfig::new(2.0, 2e-3, kind);
        sim.adaptation = kind != ControllerKind::CtcFixed;
        let log = rollout(&model, &gains, &traj, &sim, &truth, &prior)?;
        let last = log.len() - 1;
        println!(
            "{kind:>9}: max tracking error {:.3e} rad, final estimate {:.4?}",
            log.max_tracking_error(),
            log.theta_hat(last)
        );
    }
    println!("  true payload: {:.4?}", truth.to_array());
    Ok(())
}
