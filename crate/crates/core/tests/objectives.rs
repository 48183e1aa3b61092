//! Objective compositions and Fisher-information properties on the arm.

use nalgebra::{DMatrix, DVector};

use dualref::bench::ExperimentConfig;
use dualref::control::ControllerGains;
use dualref::dynamics::{regressor, two_link_ik, InertialParams, JointState, ManipulatorModel};
use dualref::objective::{
    fisher_information, fisher_information_until, j_dual1, j_dual1_terms, j_dual2_terms, j_fim, j_nominal,
    OptimalityLossModel, PlanningContext,
};
use dualref::reference::{RefSample, Reference};
use dualref::simloop::{rollout, task_cost, ControllerKind, CostConfig, SimConfig};
use dualref::uq::{GaussianMixture, MixtureComponent};

struct Hold(DVector<f64>, f64);

impl Reference for Hold {
    fn duration(&self) -> f64 {
        self.1
    }
    fn n_joints(&self) -> usize {
        self.0.len()
    }
    fn sample(&self, _t: f64) -> dualref::Result<RefSample> {
        let z = DVector::zeros(self.0.len());
        Ok(RefSample { q: self.0.clone(), dq: z.clone(), ddq: z })
    }
}

fn context(controller: ControllerKind) -> PlanningContext {
    let cfg = ExperimentConfig::default();
    cfg.context(controller, controller != ControllerKind::CtcFixed).unwrap()
}

fn bent_design(ctx: &PlanningContext) -> Vec<f64> {
    let mut d = ctx.initial_design().as_slice().to_vec();
    for (i, v) in d.iter_mut().enumerate() {
        *v += 0.15 * ((i as f64) * 1.3).sin();
    }
    d
}

#[test]
fn static_posture_information_is_constant_integrand() {
    let model = ManipulatorModel::two_link_default();
    let q = two_link_ik(&model, [0.5, 0.3], false).unwrap();
    let payload = InertialParams::from_com(2.0, [0.04, 0.04], 0.00333);
    let gains = ControllerGains::default_for(2);
    let mut sim = SimConfig::new(1.5, 1e-2, ControllerKind::CtcFixed);
    sim.record_regressor = true;
    let log = rollout(&model, &gains, &Hold(q.clone(), 1.5), &sim, &payload, &payload).unwrap();
    let r = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.2]);
    let info = fisher_information(&log, &r).unwrap();

    let st = JointState::at_rest(q);
    let y = regressor(&model, &st, &DVector::zeros(2), &DVector::zeros(2)).unwrap();
    let yl = y.columns(model.payload_offset(), 4).into_owned();
    let oracle = yl.transpose() * r.clone().try_inverse().unwrap() * &yl * 1.5;
    assert!((&info.matrix - &oracle).amax() < 1e-9 * oracle.amax());

    let doubled = fisher_information(&log, &(r * 2.0)).unwrap();
    assert!((&doubled.matrix * 2.0 - &info.matrix).amax() < 1e-12 * info.matrix.amax());
}

#[test]
fn information_grows_with_the_window() {
    let ctx = context(ControllerKind::CtcFixed);
    let log = ctx.rollout(&bent_design(&ctx), &ctx.prior_mean).unwrap();
    let mut prev = DMatrix::zeros(4, 4);
    for t in [0.25, 0.5, 1.0, 1.5, 2.0] {
        let info = fisher_information_until(&log, &ctx.fisher_noise, t).unwrap().matrix;
        let gain = &info - &prev;
        assert!(gain.symmetric_eigenvalues().min() >= -1e-9 * info.amax(), "window {t}");
        prev = info;
    }
}

#[test]
fn fisher_objective_composition() {
    let ctx = context(ControllerKind::CtcFixed);
    let d = bent_design(&ctx);
    let theta = ctx.prior_mean;
    let base = j_fim(&d, &theta, 0.0, &ctx).unwrap();
    assert_eq!(base, j_nominal(&d, &ctx).unwrap());

    let log = ctx.rollout(&d, &theta).unwrap();
    let tr = fisher_information(&log, &ctx.fisher_noise).unwrap().trace();
    let w = 1e-7;
    let manual = task_cost(&ctx.model, &log, &ctx.cost) - w * tr;
    let value = j_fim(&d, &theta, w, &ctx).unwrap();
    assert!((value - manual).abs() <= 1e-10 * manual.abs().max(1.0));
    let doubled = j_fim(&d, &theta, 2.0 * w, &ctx).unwrap();
    assert!(((value - doubled) - w * tr).abs() <= 1e-10 * (w * tr).max(1.0));
}

fn two_point_mixture(spread: f64) -> GaussianMixture {
    let a = InertialParams::from_com(1.6, [0.03, 0.05], 0.003).to_vector();
    let b = InertialParams::from_com(2.5, [0.05, 0.02], 0.004).to_vector();
    let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![0.04, 1e-5, 1e-5, 1e-7])) * spread;
    GaussianMixture::new(vec![
        MixtureComponent { weight: 0.3, mean: a, covariance: cov.clone() },
        MixtureComponent { weight: 0.7, mean: b, covariance: cov },
    ])
    .unwrap()
}

#[test]
fn robust_objective_without_spread_is_weighted_cost() {
    let ctx = context(ControllerKind::Nac);
    let d = bent_design(&ctx);
    let gmm = two_point_mixture(0.0);
    let expected: f64 = gmm
        .components
        .iter()
        .map(|c| c.weight * ctx.cost(&d, &InertialParams::from_slice(c.mean.as_slice()).unwrap()).unwrap())
        .sum();
    let value = j_dual1(&d, &gmm, &ctx).unwrap();
    assert!((value - expected).abs() <= 1e-10 * expected);
}

#[test]
fn robust_objective_spread_terms_are_nonnegative() {
    let ctx = context(ControllerKind::CtcRls);
    let d = bent_design(&ctx);
    let b = j_dual1_terms(&d, &two_point_mixture(1.0), &ctx).unwrap();
    for c in &b.components {
        assert!(c.uncertainty >= 0.0);
    }
}

fn loss_model(d_matrix: DMatrix<f64>, theta: &InertialParams) -> OptimalityLossModel {
    OptimalityLossModel {
        d_matrix,
        anchor_design: DVector::zeros(1),
        anchor_params: theta.to_vector(),
        damping: 0.0,
        hessian_dd: DMatrix::zeros(1, 1),
        hessian_dp: DMatrix::zeros(1, 4),
        anchor_converged: true,
    }
}

#[test]
fn loss_objective_composition() {
    let ctx = context(ControllerKind::Nac);
    let d = bent_design(&ctx);
    let gmm = two_point_mixture(1.0);
    let zero = loss_model(DMatrix::zeros(4, 4), &ctx.prior_mean);
    let b = j_dual2_terms(&d, &gmm, &zero, &ctx).unwrap();
    let weighted: f64 = gmm
        .components
        .iter()
        .map(|c| c.weight * ctx.cost(&d, &InertialParams::from_slice(c.mean.as_slice()).unwrap()).unwrap())
        .sum();
    assert!((b.total - weighted).abs() <= 1e-10 * weighted);

    let dm = DMatrix::from_fn(4, 4, |i, j| if i == j { 10.0 / (1.0 + i as f64) } else { 0.5 });
    let olm = loss_model(dm.clone(), &ctx.prior_mean);
    let b = j_dual2_terms(&d, &gmm, &olm, &ctx).unwrap();
    let mut manual = 0.0;
    for c in &gmm.components {
        let truth = InertialParams::from_slice(c.mean.as_slice()).unwrap();
        let log = ctx.rollout(&d, &truth).unwrap();
        let info = fisher_information(&log, &ctx.fisher_noise).unwrap().matrix;
        let post = (info + c.covariance.clone().try_inverse().unwrap()).try_inverse().unwrap();
        manual += c.weight * (task_cost(&ctx.model, &log, &ctx.cost) + 0.5 * (&dm * post).trace());
    }
    assert!((b.total - manual).abs() <= 1e-10 * manual);
}

#[test]
fn loss_term_vanishes_with_unlimited_information() {
    let mut ctx = context(ControllerKind::Nac);
    let d = bent_design(&ctx);
    let gmm = two_point_mixture(1.0);
    let olm = loss_model(DMatrix::identity(4, 4) * 100.0, &ctx.prior_mean);
    let mut prev = f64::INFINITY;
    for scale in [1.0, 1e-4, 1e-8, 1e-12] {
        ctx.fisher_noise = DMatrix::identity(2, 2) * scale;
        let b = j_dual2_terms(&d, &gmm, &olm, &ctx).unwrap();
        let oed: f64 = b.components.iter().map(|c| c.weight * c.uncertainty).sum();
        assert!(oed <= prev);
        prev = oed;
    }
    assert!(prev < 1e-8, "{prev}");
}

#[test]
fn task_cost_basic_properties() {
    let model = ManipulatorModel::two_link_default();
    let target = [0.5, 0.3];
    let q = two_link_ik(&model, target, false).unwrap();
    let payload = InertialParams::from_com(2.0, [0.04, 0.04], 0.00333);
    let gains = ControllerGains::default_for(2);
    let sim = SimConfig::new(1.0, 1e-2, ControllerKind::CtcFixed);
    let log = rollout(&model, &gains, &Hold(q, 1.0), &sim, &payload, &payload).unwrap();
    let mut cost = CostConfig {
        target,
        w_position: [10.0, 10.0],
        w_velocity: vec![1.0, 1.0],
        w_torque: vec![0.0, 0.0],
        joint_lower: vec![],
        joint_upper: vec![],
        w_limit: 0.0,
        divergence_cost: 1e6,
    };
    assert!(task_cost(&model, &log, &cost).abs() < 1e-20);

    cost.target = [0.45, 0.35];
    let one = task_cost(&model, &log, &cost);
    cost.w_position = [20.0, 20.0];
    let two = task_cost(&model, &log, &cost);
    assert!((two - 2.0 * one).abs() <= 1e-12 * two);
}
