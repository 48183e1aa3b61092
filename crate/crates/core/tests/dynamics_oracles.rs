//! Dynamics, kinematics and tracking checked against independently written oracles.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dualref::control::ControllerGains;
use dualref::dynamics::{
    dynamics_terms, ee_position, forward_dynamics, inverse_dynamics, regressor, two_link_ik, InertialParams, JointState,
    ManipulatorModel,
};
use dualref::reference::{make_spline, straight_line_design, Boundary, SplineConfig};
use dualref::simloop::{rollout, ControllerKind, SimConfig};

/// Body `i` of a two-link arm: origin, absolute angle, and their joint Jacobians.
struct Body {
    origin: [f64; 2],
    angle: f64,
    /// d origin / d q_j
    jv: [[f64; 2]; 2],
    /// d angle / d q_j
    jw: [f64; 2],
}

fn bodies(l: [f64; 2], q: [f64; 2]) -> [Body; 3] {
    let a1 = q[0];
    let a2 = q[0] + q[1];
    let p1 = [l[0] * a1.cos(), l[0] * a1.sin()];
    let tip = [p1[0] + l[1] * a2.cos(), p1[1] + l[1] * a2.sin()];
    let j1 = [[-l[0] * a1.sin(), l[0] * a1.cos()], [0.0, 0.0]];
    let jt = [
        [-l[0] * a1.sin() - l[1] * a2.sin(), l[0] * a1.cos() + l[1] * a2.cos()],
        [-l[1] * a2.sin(), l[1] * a2.cos()],
    ];
    [
        Body { origin: [0.0, 0.0], angle: a1, jv: [[0.0; 2]; 2], jw: [1.0, 0.0] },
        Body { origin: p1, angle: a2, jv: j1, jw: [1.0, 1.0] },
        Body { origin: tip, angle: a2, jv: jt, jw: [1.0, 1.0] },
    ]
}

/// Kinetic energy `½ m |v_o|² + ω (v_o × R h)_z + ½ I_o ω²` summed over bodies.
fn kinetic(l: [f64; 2], p: &[[f64; 4]; 3], q: [f64; 2], dq: [f64; 2]) -> f64 {
    bodies(l, q)
        .iter()
        .zip(p)
        .map(|(b, &[m, hx, hy, io])| {
            let v = [
                b.jv[0][0] * dq[0] + b.jv[1][0] * dq[1],
                b.jv[0][1] * dq[0] + b.jv[1][1] * dq[1],
            ];
            let w = b.jw[0] * dq[0] + b.jw[1] * dq[1];
            let (s, c) = b.angle.sin_cos();
            let rh = [c * hx - s * hy, s * hx + c * hy];
            // v · (ω ẑ × r) = ω (r × v)_z
            0.5 * m * (v[0] * v[0] + v[1] * v[1]) + w * (rh[0] * v[1] - rh[1] * v[0]) + 0.5 * io * w * w
        })
        .sum()
}

fn potential(l: [f64; 2], p: &[[f64; 4]; 3], gravity: [f64; 2], q: [f64; 2]) -> f64 {
    bodies(l, q)
        .iter()
        .zip(p)
        .map(|(b, &[m, hx, hy, _])| {
            let (s, c) = b.angle.sin_cos();
            let moment = [m * b.origin[0] + c * hx - s * hy, m * b.origin[1] + s * hx + c * hy];
            -(gravity[0] * moment[0] + gravity[1] * moment[1])
        })
        .sum()
}

/// `M_ij` by polarization of the quadratic form `T(dq)`.
fn oracle_mass(l: [f64; 2], p: &[[f64; 4]; 3], q: [f64; 2]) -> DMatrix<f64> {
    let e = |i: usize| {
        let mut v = [0.0; 2];
        v[i] = 1.0;
        v
    };
    DMatrix::from_fn(2, 2, |i, j| {
        if i == j {
            2.0 * kinetic(l, p, q, e(i))
        } else {
            kinetic(l, p, q, [1.0, 1.0]) - kinetic(l, p, q, e(0)) - kinetic(l, p, q, e(1))
        }
    })
}

/// Five-point derivative of `f` along coordinate `k` of `q`.
fn d5<F: Fn([f64; 2]) -> f64>(f: F, q: [f64; 2], k: usize) -> f64 {
    let h = 1e-3;
    let at = |s: f64| {
        let mut x = q;
        x[k] += s * h;
        f(x)
    };
    (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
}

/// `C(q, dq) dq` from the Euler-Lagrange equations: `d/dt(M) dq - ∂T/∂q`.
fn oracle_coriolis_times_dq(l: [f64; 2], p: &[[f64; 4]; 3], q: [f64; 2], dq: [f64; 2]) -> DVector<f64> {
    let mut mdot = DMatrix::<f64>::zeros(2, 2);
    for k in 0..2 {
        for r in 0..2 {
            for c in 0..2 {
                mdot[(r, c)] += dq[k] * d5(|x| oracle_mass(l, p, x)[(r, c)], q, k);
            }
        }
    }
    let dtdq = DVector::from_fn(2, |k, _| d5(|x| kinetic(l, p, x, dq), q, k));
    mdot * DVector::from_column_slice(&dq) - dtdq
}

fn random_case(rng: &mut ChaCha8Rng) -> (ManipulatorModel, InertialParams, [[f64; 4]; 3]) {
    let l = [rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0)];
    let mut blocks = Vec::new();
    let mut raw = [[0.0; 4]; 3];
    for b in raw.iter_mut() {
        let p = InertialParams::from_com(
            rng.gen_range(0.5..4.0),
            [rng.gen_range(-0.2..0.5), rng.gen_range(-0.1..0.1)],
            rng.gen_range(1e-3..0.1),
        );
        *b = p.to_array();
        blocks.push(p);
    }
    let payload = blocks.pop().unwrap();
    let model = ManipulatorModel::new(l.to_vec(), [0.3, -9.81], blocks, vec![0.0, 0.0]).unwrap();
    (model, payload, raw)
}

#[test]
fn equations_of_motion_match_lagrangian_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let (model, payload, raw) = random_case(&mut rng);
        let l = [model.link_lengths[0], model.link_lengths[1]];
        let q = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let dq = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let st = JointState::new(DVector::from_column_slice(&q), DVector::from_column_slice(&dq));
        let terms = dynamics_terms(&model, &payload, &st).unwrap();

        let m = oracle_mass(l, &raw, q);
        assert!((&terms.mass - &m).amax() < 1e-8, "M\n{}\n{}", terms.mass, m);

        let g = DVector::from_fn(2, |k, _| d5(|x| potential(l, &raw, model.gravity, x), q, k));
        assert!((&terms.gravity - &g).amax() < 1e-8, "g {} vs {}", terms.gravity, g);

        let cdq = oracle_coriolis_times_dq(l, &raw, q, dq);
        let got = &terms.coriolis * DVector::from_column_slice(&dq);
        assert!((&got - &cdq).amax() < 1e-8, "C dq {} vs {}", got, cdq);
    }
}

#[test]
fn forward_dynamics_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..50 {
        let (mut model, payload, _) = random_case(&mut rng);
        model.joint_damping = vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let st = JointState::new(
            DVector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0)),
            DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0)),
        );
        let tau = DVector::from_fn(2, |_, _| rng.gen_range(-20.0..20.0));
        let t = dynamics_terms(&model, &payload, &st).unwrap();
        let damping = DVector::from_column_slice(&model.joint_damping).component_mul(&st.dq);
        let rhs = &tau - &t.coriolis * &st.dq - &t.gravity - damping;
        let oracle = t.mass.clone().lu().solve(&rhs).unwrap();
        let ddq = forward_dynamics(&model, &payload, &st, &tau).unwrap();
        assert!((&ddq - &oracle).amax() < 1e-10);
        let back = inverse_dynamics(&model, &payload, &st, &ddq).unwrap();
        assert!((&back - &tau).amax() < 1e-10);
    }
}

#[test]
fn regressor_reproduces_inverse_dynamics() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let (model, payload, _) = random_case(&mut rng);
        let st = JointState::new(
            DVector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0)),
            DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0)),
        );
        let ddq = DVector::from_fn(2, |_, _| rng.gen_range(-5.0..5.0));
        let y = regressor(&model, &st, &ddq, &st.dq).unwrap();
        let tau = inverse_dynamics(&model, &payload, &st, &ddq).unwrap();
        assert!((y * model.full_params(&payload) - tau).amax() < 1e-10);
    }
}

#[test]
fn tip_position_matches_trigonometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let model = ManipulatorModel::two_link_default();
    for _ in 0..100 {
        let q = DVector::<f64>::from_fn(2, |_, _| rng.gen_range(-4.0..4.0));
        let (l1, l2) = (model.link_lengths[0], model.link_lengths[1]);
        let x = l1 * q[0].cos() + l2 * (q[0] + q[1]).cos();
        let y = l1 * q[0].sin() + l2 * (q[0] + q[1]).sin();
        let p = ee_position(&model, &q).unwrap();
        assert!((p[0] - x).abs() < 1e-12 && (p[1] - y).abs() < 1e-12);
    }
}

#[test]
fn true_parameters_give_near_perfect_nac_tracking() {
    let model = ManipulatorModel::two_link_default();
    let b = Boundary::new(
        two_link_ik(&model, [0.6, -0.4], false).unwrap(),
        two_link_ik(&model, [0.3, 0.6], false).unwrap(),
    )
    .unwrap();
    let cfg = SplineConfig { n_control: 8, ..SplineConfig::default() };
    let traj = make_spline(&b, &straight_line_design(&b, &cfg), &cfg).unwrap();
    let payload = InertialParams::from_com(2.0, [0.04, 0.04], 0.00333);
    let gains = ControllerGains::default_for(2);
    for kind in [ControllerKind::Nac, ControllerKind::CtcRls] {
        let sim = SimConfig::new(2.0, 5e-3, kind);
        let log = rollout(&model, &gains, &traj, &sim, &payload, &payload).unwrap();
        assert!(log.max_tracking_error() < 1e-4, "{kind}: {}", log.max_tracking_error());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mass_matrix_is_symmetric_positive_definite(q0 in -4.0f64..4.0, q1 in -4.0f64..4.0, m in 0.05f64..5.0, cx in -0.2f64..0.2) {
        let model = ManipulatorModel::two_link_default();
        let payload = InertialParams::from_com(m, [cx, 0.02], 1e-3);
        let st = JointState::at_rest(DVector::from_vec(vec![q0, q1]));
        let mass = dynamics_terms(&model, &payload, &st).unwrap().mass;
        prop_assert!((&mass - mass.transpose()).amax() < 1e-12);
        prop_assert!(mass.clone().cholesky().is_some());
    }

    #[test]
    fn statics_give_gravity_torque(q0 in -4.0f64..4.0, q1 in -4.0f64..4.0) {
        let model = ManipulatorModel::two_link_default();
        let payload = InertialParams::from_com(2.0, [0.04, 0.04], 0.00333);
        let st = JointState::at_rest(DVector::from_vec(vec![q0, q1]));
        let tau = inverse_dynamics(&model, &payload, &st, &DVector::zeros(2)).unwrap();
        let g = dynamics_terms(&model, &payload, &st).unwrap().gravity;
        prop_assert!((&tau - &g).amax() < 1e-12);
        let ddq = forward_dynamics(&model, &payload, &st, &g).unwrap();
        prop_assert!(ddq.amax() < 1e-9);
    }

    #[test]
    fn inverse_kinematics_reaches_reachable_points(r in 0.15f64..1.05, a in -3.1f64..3.1, up in any::<bool>()) {
        let model = ManipulatorModel::two_link_default();
        let target = [r * a.cos(), r * a.sin()];
        let q = two_link_ik(&model, target, up).unwrap();
        let p = ee_position(&model, &q).unwrap();
        prop_assert!((p[0] - target[0]).abs() < 1e-9 && (p[1] - target[1]).abs() < 1e-9);
    }
}
