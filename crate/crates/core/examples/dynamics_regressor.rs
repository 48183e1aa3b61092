//! Equations of motion of the two-link arm and their linear-in-parameters form.

use dualref::dynamics::{dynamics_terms, inverse_dynamics, regressor, InertialParams, JointState, ManipulatorModel};
use nalgebra::DVector;

fn main() -> dualref::Result<()> {
    let model = ManipulatorModel::two_link_default();
    let payload = InertialParams::from_com(2.0, [0.04, 0.04], 0.00333);
    let state = JointState::new(DVector::from_vec(vec![0.3, -0.7]), DVector::from_vec(vec![1.0, 0.5]));
    let ddq = DVector::from_vec(vec![-0.4, 2.0]);

    let terms = dynamics_terms(&model, &payload, &state)?;
    println!("M =\n{}C =\n{}g = {}", terms.mass, terms.coriolis, terms.gravity.transpose());

    let tau = inverse_dynamics(&model, &payload, &state, &ddq)?;
    let y = regressor(&model, &state, &ddq, &state.dq)?;
    let tau_y = &y * model.full_params(&payload);
    println!("tau (Newton-Euler form) = {}", tau.transpose());
    println!("tau (regressor form)    = {}", tau_y.transpose());
    println!("payload block Y_l =\n{}", y.columns(model.payload_offset(), 4));
    Ok(())
}
