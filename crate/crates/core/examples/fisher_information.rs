//! Fisher information of the payload along two references and the classical design criteria.

use dualref::control::ControllerGains;
use dualref::dynamics::{two_link_ik, InertialParams, ManipulatorModel};
use dualref::objective::{fisher_information, oed_criterion, OedKind};
use dualref::reference::{make_spline, straight_line_design, Boundary, SplineConfig};
use dualref::simloop::{rollout, ControllerKind, SimConfig};
use nalgebra::DMatrix;

fn main() -> dualref::Result<()> {
    let model = ManipulatorModel::two_link_default();
    let boundary = Boundary::new(two_link_ik(&model, [0.6, -0.4], false)?, two_link_ik(&model, [0.3, 0.6], false)?)?;
    let cfg = SplineConfig { n_control: 8, ..SplineConfig::default() };
    let straight = straight_line_design(&boundary, &cfg);
    let mut wavy = straight.clone();
    for (i, v) in wavy.0.iter_mut().enumerate() {
        *v += if i % 4 < 2 { 0.6 } else { -0.6 };
    }
    let payload = InertialParams::from_com(2.0, [0.04, 0.04], 0.00333);
    let gains = ControllerGains::default_for(2);
    let mut sim = SimConfig::new(2.0, 5e-3, ControllerKind::CtcFixed);
    sim.record_regressor = true;
    let noise = DMatrix::identity(2, 2) * 1e-2;

    for (name, d) in [("straight", &straight), ("wavy", &wavy)] {
        let traj = make_spline(&boundary, d, &cfg)?;
        let log = rollout(&model, &gains, &traj, &sim, &payload, &payload)?;
        let info = fisher_information(&log, &noise)?;
        print!("{name:>8}:");
        for kind in [OedKind::T, OedKind::D, OedKind::A, OedKind::E] {
            print!("  {kind:?} {:.4e}", oed_criterion(&info.matrix, kind).unwrap_or(f64::NAN));
        }
        println!();
    }
    Ok(())
}
