//! Rigid-body dynamics of a planar revolute chain carrying a payload.
//!
//! Every body (each link, plus the payload rigidly attached at the tip of the
//! last link) is described by a 4-parameter block `(m, h_x, h_y, I_zz)` in its
//! own frame, where `h = m·c` is the first moment and `I_zz` the rotational
//! inertia about the frame origin. The equations of motion
//!
//! ```text
//! tau = M(q) ddq + C(q, dq) dq + g(q) = Y(q, dq, ddq) theta
//! ```
//!
//! are linear in the stacked parameter vector `theta = [theta_r | theta_l]`.
//! [`ChainBasis`] exploits this: it evaluates, at a fixed configuration, the
//! contribution of every unit parameter to `M`, `dM/dq` and `g`, after which
//! any parameter vector can be assembled cheaply.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};

/// Number of inertial parameters per planar rigid body.
pub const BODY_PARAMS: usize = 4;

/// Inertial parameter block of one planar rigid body.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InertialParams {
    /// Mass [kg].
    pub mass: f64,
    /// First moment `m·c` [kg·m] in the body frame.
    pub first_moment: [f64; 2],
    /// Rotational inertia about the body-frame origin [kg·m²].
    pub inertia: f64,
}

impl InertialParams {
    pub fn new(mass: f64, first_moment: [f64; 2], inertia: f64) -> Self {
        Self {
            mass,
            first_moment,
            inertia,
        }
    }

    /// Builds the block from a centre of mass and the inertia about that centre.
    pub fn from_com(mass: f64, com: [f64; 2], inertia_about_com: f64) -> Self {
        let first_moment = [mass * com[0], mass * com[1]];
        let inertia = inertia_about_com + mass * (com[0] * com[0] + com[1] * com[1]);
        Self::new(mass, first_moment, inertia)
    }

    /// Uniform slender rod of the given length lying along the body x-axis.
    pub fn rod(mass: f64, length: f64) -> Self {
        Self::from_com(mass, [0.5 * length, 0.0], mass * length * length / 12.0)
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        check_dim("inertial parameter block", BODY_PARAMS, values.len())?;
        Ok(Self::new(values[0], [values[1], values[2]], values[3]))
    }

    pub fn to_array(&self) -> [f64; BODY_PARAMS] {
        [
            self.mass,
            self.first_moment[0],
            self.first_moment[1],
            self.inertia,
        ]
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.to_array())
    }

    /// Centre of mass `h / m`.
    pub fn com(&self) -> [f64; 2] {
        [
            self.first_moment[0] / self.mass,
            self.first_moment[1] / self.mass,
        ]
    }

    /// Inertia about the centre of mass.
    pub fn inertia_about_com(&self) -> f64 {
        let h2 = self.first_moment[0].powi(2) + self.first_moment[1].powi(2);
        self.inertia - h2 / self.mass
    }

    /// Planar physical consistency: `m > 0` and `I_zz >= |h|²/m`.
    pub fn is_consistent(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
            && self.mass > 0.0
            && self.inertia > 0.0
            && self.inertia_about_com() >= -1e-12 * self.inertia.abs().max(1.0)
    }
}

/// Joint positions and velocities, `x = (q, dq)`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub dq: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, dq: DVector<f64>) -> Self {
        Self { q, dq }
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            dq: DVector::zeros(n),
        }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }
}

/// Planar serial chain of revolute joints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManipulatorModel {
    pub link_lengths: Vec<f64>,
    /// Gravitational acceleration in the base frame [m/s²].
    pub gravity: [f64; 2],
    pub robot_params: Vec<InertialParams>,
    /// Viscous joint damping [N·m·s/rad].
    #[serde(default)]
    pub joint_damping: Vec<f64>,
}

impl ManipulatorModel {
    pub fn new(
        link_lengths: Vec<f64>,
        gravity: [f64; 2],
        robot_params: Vec<InertialParams>,
        joint_damping: Vec<f64>,
    ) -> Result<Self> {
        let model = Self {
            link_lengths,
            gravity,
            robot_params,
            joint_damping,
        };
        model.validate()?;
        Ok(model)
    }

    /// Two uniform rods in a vertical plane with standard gravity.
    pub fn two_link_default() -> Self {
        Self {
            link_lengths: vec![0.6, 0.5],
            gravity: [0.0, -9.81],
            robot_params: vec![InertialParams::rod(3.0, 0.6), InertialParams::rod(2.0, 0.5)],
            joint_damping: vec![0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.link_lengths.len();
        if n == 0 {
            return Err(Error::Config("a manipulator needs at least one link".into()));
        }
        if self.link_lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::Config("link lengths must be positive".into()));
        }
        check_dim("robot parameter blocks", n, self.robot_params.len())?;
        if !self.joint_damping.is_empty() {
            check_dim("joint damping", n, self.joint_damping.len())?;
        }
        check_finite("gravity", &self.gravity)?;
        for (i, p) in self.robot_params.iter().enumerate() {
            if !p.is_consistent() {
                return Err(Error::Inconsistent(format!("link {i}: {p:?}")));
            }
        }
        Ok(())
    }

    pub fn n_links(&self) -> usize {
        self.link_lengths.len()
    }

    /// Length of the stacked parameter vector `[theta_r | theta_l]`.
    pub fn n_params(&self) -> usize {
        BODY_PARAMS * (self.n_links() + 1)
    }

    /// Index of the first payload parameter in the stacked vector.
    pub fn payload_offset(&self) -> usize {
        BODY_PARAMS * self.n_links()
    }

    /// Stacks the known robot parameters with a payload block.
    pub fn full_params(&self, payload: &InertialParams) -> DVector<f64> {
        self.full_params_from(&payload.to_array())
    }

    pub fn full_params_from(&self, payload: &[f64]) -> DVector<f64> {
        let mut theta = DVector::zeros(self.n_params());
        for (i, p) in self.robot_params.iter().enumerate() {
            theta
                .rows_mut(BODY_PARAMS * i, BODY_PARAMS)
                .copy_from_slice(&p.to_array());
        }
        theta
            .rows_mut(self.payload_offset(), BODY_PARAMS)
            .copy_from_slice(payload);
        theta
    }

    pub(crate) fn damping(&self, i: usize) -> f64 {
        self.joint_damping.get(i).copied().unwrap_or(0.0)
    }

    /// Workspace radius (sum of link lengths).
    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    fn check_state(&self, state: &JointState) -> Result<()> {
        let n = self.n_links();
        check_dim("joint positions", n, state.q.len())?;
        check_dim("joint velocities", n, state.dq.len())?;
        check_finite("joint state", state.q.as_slice())?;
        check_finite("joint state", state.dq.as_slice())
    }
}

/// Positions of every joint and of the tip, plus absolute link angles.
#[derive(Clone, Debug)]
pub struct ChainGeometry {
    /// `n + 1` points: joint `i` for `i < n`, the tip at index `n`.
    pub points: Vec<[f64; 2]>,
    pub angles: Vec<f64>,
}

impl ChainGeometry {
    pub fn new(model: &ManipulatorModel, q: &[f64]) -> Self {
        let n = model.n_links();
        let mut points = Vec::with_capacity(n + 1);
        let mut angles = Vec::with_capacity(n);
        let mut p = [0.0, 0.0];
        let mut phi = 0.0;
        points.push(p);
        for i in 0..n {
            phi += q[i];
            angles.push(phi);
            p = [
                p[0] + model.link_lengths[i] * phi.cos(),
                p[1] + model.link_lengths[i] * phi.sin(),
            ];
            points.push(p);
        }
        Self { points, angles }
    }

    pub fn tip(&self) -> [f64; 2] {
        *self.points.last().expect("chain has at least one point")
    }
}

/// Per-unit-parameter contributions to `M`, `dM/dq` and `g` at one configuration.
///
/// Layouts (row-major, `n` joints, `k` parameter index):
/// `mass[k][r][c]`, `dmass[k][i][r][c]` (derivative w.r.t. `q_i`), `grav[k][r]`.
#[derive(Clone, Debug)]
pub struct ChainBasis {
    n: usize,
    n_params: usize,
    mass: Vec<f64>,
    dmass: Vec<f64>,
    grav: Vec<f64>,
}

impl ChainBasis {
    pub fn new(model: &ManipulatorModel, q: &[f64]) -> Self {
        let n = model.n_links();
        let n_params = model.n_params();
        let geo = ChainGeometry::new(model, q);
        let nn = n * n;
        let mut mass = vec![0.0; n_params * nn];
        let mut dmass = vec![0.0; n_params * n * nn];
        let mut grav = vec![0.0; n_params * n];
        let gv = model.gravity;

        let mut jp = vec![[0.0f64; 2]; n];
        let mut djp = vec![[0.0f64; 2]; nn];
        let mut jphi = vec![0.0f64; n];

        for body in 0..=n {
            let origin = geo.points[body];
            let angle_idx = body.min(n - 1);
            let phi = geo.angles[angle_idx];
            let (s, c) = phi.sin_cos();

            // Translational Jacobian of the body origin and its q-derivatives.
            for j in 0..n {
                jp[j] = if j < body {
                    let d = sub(origin, geo.points[j]);
                    [-d[1], d[0]]
                } else {
                    [0.0, 0.0]
                };
                jphi[j] = if j <= angle_idx { 1.0 } else { 0.0 };
            }
            for i in 0..n {
                for j in 0..n {
                    let k = i.max(j);
                    djp[i * n + j] = if j < body && k < body {
                        let d = sub(origin, geo.points[k]);
                        [-d[0], -d[1]]
                    } else {
                        [0.0, 0.0]
                    };
                }
            }

            let base = BODY_PARAMS * body;

            // Mass.
            {
                let k = base;
                for r in 0..n {
                    for cc in 0..n {
                        mass[k * nn + r * n + cc] = dot(jp[r], jp[cc]);
                    }
                    grav[k * n + r] = -dot(jp[r], gv);
                }
                for i in 0..n {
                    for r in 0..n {
                        for cc in 0..n {
                            dmass[(k * n + i) * nn + r * n + cc] =
                                dot(djp[i * n + r], jp[cc]) + dot(jp[r], djp[i * n + cc]);
                        }
                    }
                }
            }

            // First moments: w = R(phi) S e_x and R(phi) S e_y.
            let ws = [[-s, c], [-c, -s]];
            for (axis, w) in ws.iter().enumerate() {
                let k = base + 1 + axis;
                let u: Vec<f64> = (0..n).map(|r| dot(jp[r], *w)).collect();
                let gw = dot(gv, *w);
                let dw = [-w[1], w[0]];
                for r in 0..n {
                    for cc in 0..n {
                        mass[k * nn + r * n + cc] = u[r] * jphi[cc] + jphi[r] * u[cc];
                    }
                    grav[k * n + r] = -jphi[r] * gw;
                }
                for i in 0..n {
                    let rot = jphi[i];
                    for r in 0..n {
                        let du_r = dot(djp[i * n + r], *w) + rot * dot(jp[r], dw);
                        for cc in 0..n {
                            let du_c = dot(djp[i * n + cc], *w) + rot * dot(jp[cc], dw);
                            dmass[(k * n + i) * nn + r * n + cc] = du_r * jphi[cc] + jphi[r] * du_c;
                        }
                    }
                }
            }

            // Rotational inertia.
            {
                let k = base + 3;
                for r in 0..n {
                    for cc in 0..n {
                        mass[k * nn + r * n + cc] = jphi[r] * jphi[cc];
                    }
                }
            }
        }

        Self {
            n,
            n_params,
            mass,
            dmass,
            grav,
        }
    }

    pub fn n_joints(&self) -> usize {
        self.n
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// `M(theta)`.
    pub fn mass_matrix(&self, theta: &[f64]) -> DMatrix<f64> {
        let nn = self.n * self.n;
        let mut out = vec![0.0; nn];
        for (k, &t) in theta.iter().enumerate() {
            if t != 0.0 {
                for (o, m) in out.iter_mut().zip(&self.mass[k * nn..(k + 1) * nn]) {
                    *o += t * m;
                }
            }
        }
        DMatrix::from_row_slice(self.n, self.n, &out)
    }

    /// `dM/dq_i` for every `i`, flattened as `[i][r][c]`.
    pub fn mass_derivatives(&self, theta: &[f64]) -> Vec<f64> {
        let len = self.n * self.n * self.n;
        let mut out = vec![0.0; len];
        for (k, &t) in theta.iter().enumerate() {
            if t != 0.0 {
                for (o, m) in out.iter_mut().zip(&self.dmass[k * len..(k + 1) * len]) {
                    *o += t * m;
                }
            }
        }
        out
    }

    /// `g(theta)`.
    pub fn gravity(&self, theta: &[f64]) -> DVector<f64> {
        let n = self.n;
        let mut out = DVector::zeros(n);
        for (k, &t) in theta.iter().enumerate() {
            for r in 0..n {
                out[r] += t * self.grav[k * n + r];
            }
        }
        out
    }

    /// Coriolis matrix from Christoffel symbols of the first kind.
    pub fn coriolis_matrix(&self, theta: &[f64], dq: &[f64]) -> DMatrix<f64> {
        let dm = self.mass_derivatives(theta);
        christoffel_matrix(self.n, &dm, dq)
    }

    /// `M a + C(dq) v + g` for the parameter vector `theta`.
    pub fn torque(&self, theta: &[f64], dq: &[f64], a: &[f64], v: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (k, &t) in theta.iter().enumerate() {
            if t == 0.0 {
                continue;
            }
            for (o, c) in out.iter_mut().zip(self.column(k, dq, a, v)) {
                *o += t * c;
            }
        }
        out
    }

    /// Regressor column of parameter `k`: `M_k a + C_k(dq) v + g_k`.
    pub fn column(&self, k: usize, dq: &[f64], a: &[f64], v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let nn = n * n;
        let m = &self.mass[k * nn..(k + 1) * nn];
        let dm = &self.dmass[k * n * nn..(k + 1) * n * nn];
        let mut col = vec![0.0; n];
        for r in 0..n {
            let mut acc = self.grav[k * n + r];
            for c in 0..n {
                acc += m[r * n + c] * a[c];
            }
            // (C v)_r = sum_ij 1/2 (dM_i[r][j] + dM_j[r][i] - dM_r[i][j]) dq_i v_j
            for i in 0..n {
                if dq[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let gamma =
                        0.5 * (dm[i * nn + r * n + j] + dm[j * nn + r * n + i] - dm[r * nn + i * n + j]);
                    acc += gamma * dq[i] * v[j];
                }
            }
            col[r] = acc;
        }
        col
    }

    /// Regressor columns `range` as an `n × len` matrix.
    pub fn regressor_block(
        &self,
        range: std::ops::Range<usize>,
        dq: &[f64],
        a: &[f64],
        v: &[f64],
    ) -> DMatrix<f64> {
        let n = self.n;
        let mut y = DMatrix::zeros(n, range.len());
        for (c, k) in range.enumerate() {
            let col = self.column(k, dq, a, v);
            for r in 0..n {
                y[(r, c)] = col[r];
            }
        }
        y
    }
}

pub(crate) fn christoffel_matrix(n: usize, dm: &[f64], dq: &[f64]) -> DMatrix<f64> {
    let nn = n * n;
    let mut c = DMatrix::zeros(n, n);
    for r in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += 0.5 * (dm[i * nn + r * n + j] + dm[j * nn + r * n + i] - dm[r * nn + i * n + j]) * dq[i];
            }
            c[(r, j)] = acc;
        }
    }
    c
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Inertia, Coriolis and gravity terms of the equations of motion.
#[derive(Clone, Debug)]
pub struct DynamicsTerms {
    pub mass: DMatrix<f64>,
    pub coriolis: DMatrix<f64>,
    pub gravity: DVector<f64>,
}

pub fn dynamics_terms(
    model: &ManipulatorModel,
    payload: &InertialParams,
    state: &JointState,
) -> Result<DynamicsTerms> {
    model.check_state(state)?;
    let theta = model.full_params(payload);
    let basis = ChainBasis::new(model, state.q.as_slice());
    Ok(DynamicsTerms {
        mass: basis.mass_matrix(theta.as_slice()),
        coriolis: basis.coriolis_matrix(theta.as_slice(), state.dq.as_slice()),
        gravity: basis.gravity(theta.as_slice()),
    })
}

/// `tau = M ddq + C dq + g + D dq`.
pub fn inverse_dynamics(
    model: &ManipulatorModel,
    payload: &InertialParams,
    state: &JointState,
    ddq: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("joint accelerations", model.n_links(), ddq.len())?;
    check_finite("joint accelerations", ddq.as_slice())?;
    let terms = dynamics_terms(model, payload, state)?;
    let mut tau = &terms.mass * ddq + &terms.coriolis * &state.dq + &terms.gravity;
    for i in 0..model.n_links() {
        tau[i] += model.damping(i) * state.dq[i];
    }
    Ok(tau)
}

/// `ddq = M^{-1} (tau - C dq - g - D dq)`.
pub fn forward_dynamics(
    model: &ManipulatorModel,
    payload: &InertialParams,
    state: &JointState,
    tau: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("joint torques", model.n_links(), tau.len())?;
    check_finite("joint torques", tau.as_slice())?;
    model.check_state(state)?;
    let theta = model.full_params(payload);
    let basis = ChainBasis::new(model, state.q.as_slice());
    forward_dynamics_with(model, &basis, theta.as_slice(), state.dq.as_slice(), tau)
}

pub(crate) fn forward_dynamics_with(
    model: &ManipulatorModel,
    basis: &ChainBasis,
    theta: &[f64],
    dq: &[f64],
    tau: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = model.n_links();
    let zeros = vec![0.0; n];
    let bias = basis.torque(theta, dq, &zeros, dq);
    let mut rhs = tau - bias;
    for i in 0..n {
        rhs[i] -= model.damping(i) * dq[i];
    }
    let chol = basis
        .mass_matrix(theta)
        .cholesky()
        .ok_or(Error::SingularInertia)?;
    Ok(chol.solve(&rhs))
}

/// Regressor `Y(q, dq, a, v)` with `Y theta = M a + C(q, dq) v + g`.
///
/// Columns are ordered body by body; the last [`BODY_PARAMS`] columns form the
/// payload block `Y_l`.
pub fn regressor(
    model: &ManipulatorModel,
    state: &JointState,
    a: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    model.check_state(state)?;
    check_dim("regressor acceleration argument", model.n_links(), a.len())?;
    check_dim("regressor velocity argument", model.n_links(), v.len())?;
    check_finite("regressor arguments", a.as_slice())?;
    check_finite("regressor arguments", v.as_slice())?;
    let basis = ChainBasis::new(model, state.q.as_slice());
    Ok(basis.regressor_block(
        0..model.n_params(),
        state.dq.as_slice(),
        a.as_slice(),
        v.as_slice(),
    ))
}

/// Position of the last link's tip.
pub fn ee_position(model: &ManipulatorModel, q: &DVector<f64>) -> Result<Vector2<f64>> {
    check_dim("joint positions", model.n_links(), q.len())?;
    let tip = ChainGeometry::new(model, q.as_slice()).tip();
    Ok(Vector2::new(tip[0], tip[1]))
}

/// Tip Jacobian (2 × n).
pub fn ee_jacobian(model: &ManipulatorModel, q: &[f64]) -> DMatrix<f64> {
    let geo = ChainGeometry::new(model, q);
    let n = model.n_links();
    let tip = geo.tip();
    DMatrix::from_fn(2, n, |r, j| {
        let d = sub(tip, geo.points[j]);
        if r == 0 {
            -d[1]
        } else {
            d[0]
        }
    })
}

/// Second derivatives of the tip position: `[x, y]`, each n × n.
pub fn ee_hessians(model: &ManipulatorModel, q: &[f64]) -> [DMatrix<f64>; 2] {
    let geo = ChainGeometry::new(model, q);
    let n = model.n_links();
    let tip = geo.tip();
    let hx = DMatrix::from_fn(n, n, |i, j| -(tip[0] - geo.points[i.max(j)][0]));
    let hy = DMatrix::from_fn(n, n, |i, j| -(tip[1] - geo.points[i.max(j)][1]));
    [hx, hy]
}

/// Elbow solution of planar two-link inverse kinematics.
pub fn two_link_ik(model: &ManipulatorModel, target: [f64; 2], elbow_up: bool) -> Result<DVector<f64>> {
    if model.n_links() != 2 {
        return Err(Error::Config("closed-form IK is only available for two links".into()));
    }
    let (l1, l2) = (model.link_lengths[0], model.link_lengths[1]);
    let r2 = target[0] * target[0] + target[1] * target[1];
    let c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if !(-1.0..=1.0).contains(&c2) {
        return Err(Error::Config(format!("target {target:?} is outside the workspace")));
    }
    let s2 = if elbow_up { -(1.0 - c2 * c2).sqrt() } else { (1.0 - c2 * c2).sqrt() };
    let q2 = s2.atan2(c2);
    let q1 = target[1].atan2(target[0]) - (l2 * s2).atan2(l1 + l2 * c2);
    Ok(DVector::from_vec(vec![q1, q2]))
}

/// Total kinetic energy `½ dqᵀ M dq`.
pub fn kinetic_energy(model: &ManipulatorModel, payload: &InertialParams, state: &JointState) -> Result<f64> {
    let terms = dynamics_terms(model, payload, state)?;
    Ok(0.5 * state.dq.dot(&(&terms.mass * &state.dq)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point_mass_model(m: f64, l: f64) -> (ManipulatorModel, InertialParams) {
        // A massless-looking link: tiny rod, all mass in the payload at the tip.
        let model = ManipulatorModel::new(
            vec![l],
            [0.0, -9.81],
            vec![InertialParams::new(1e-12, [0.0, 0.0], 1e-12)],
            vec![0.0],
        )
        .unwrap();
        (model, InertialParams::new(m, [0.0, 0.0], 1e-12))
    }

    #[test]
    fn point_mass_pendulum_inertia() {
        let (model, payload) = point_mass_model(2.0, 0.7);
        for q in [-1.0, 0.0, 0.3, 2.5] {
            let st = JointState::at_rest(DVector::from_vec(vec![q]));
            let t = dynamics_terms(&model, &payload, &st).unwrap();
            assert_relative_eq!(t.mass[(0, 0)], 2.0 * 0.49, epsilon = 1e-10);
            assert_relative_eq!(t.gravity[0], 2.0 * 9.81 * 0.7 * q.cos(), epsilon = 1e-10);
        }
    }

    #[test]
    fn statics_and_equilibrium() {
        let model = ManipulatorModel::two_link_default();
        let payload = InertialParams::from_com(2.0, [0.04, 0.04], 0.0033);
        let st = JointState::at_rest(DVector::from_vec(vec![0.3, -0.8]));
        let tau = inverse_dynamics(&model, &payload, &st, &DVector::zeros(2)).unwrap();
        let terms = dynamics_terms(&model, &payload, &st).unwrap();
        assert_relative_eq!(tau, terms.gravity, epsilon = 1e-12);
        let ddq = forward_dynamics(&model, &payload, &st, &terms.gravity).unwrap();
        assert!(ddq.amax() < 1e-12);
    }

    #[test]
    fn mass_derivative_matches_finite_difference() {
        let model = ManipulatorModel::two_link_default();
        let payload = InertialParams::from_com(1.5, [0.03, -0.02], 0.004);
        let theta = model.full_params(&payload);
        let q = [0.4, 1.1];
        let basis = ChainBasis::new(&model, &q);
        let dm = basis.mass_derivatives(theta.as_slice());
        let eps = 1e-6;
        for i in 0..2 {
            let mut qp = q;
            let mut qm = q;
            qp[i] += eps;
            qm[i] -= eps;
            let mp = ChainBasis::new(&model, &qp).mass_matrix(theta.as_slice());
            let mm = ChainBasis::new(&model, &qm).mass_matrix(theta.as_slice());
            let fd = (mp - mm) / (2.0 * eps);
            for r in 0..2 {
                for c in 0..2 {
                    assert_relative_eq!(dm[i * 4 + r * 2 + c], fd[(r, c)], epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn dimension_and_finiteness_errors() {
        let model = ManipulatorModel::two_link_default();
        let payload = InertialParams::from_com(2.0, [0.0, 0.0], 0.01);
        let bad = JointState::at_rest(DVector::zeros(3));
        assert!(matches!(
            dynamics_terms(&model, &payload, &bad),
            Err(Error::Dimension { .. })
        ));
        let nan = JointState::at_rest(DVector::from_vec(vec![f64::NAN, 0.0]));
        assert!(matches!(
            dynamics_terms(&model, &payload, &nan),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn singular_mass_matrix_is_reported() {
        let model = ManipulatorModel::two_link_default();
        // Strongly negative payload inertia makes M indefinite.
        let payload = InertialParams::new(2.0, [0.0, 0.0], -50.0);
        let st = JointState::at_rest(DVector::from_vec(vec![0.0, 0.0]));
        let r = forward_dynamics(&model, &payload, &st, &DVector::zeros(2));
        assert!(matches!(r, Err(Error::SingularInertia)));
    }

    #[test]
    fn end_effector_positions() {
        let model = ManipulatorModel::new(
            vec![1.0, 1.0],
            [0.0, 0.0],
            vec![InertialParams::rod(1.0, 1.0); 2],
            vec![],
        )
        .unwrap();
        let p = ee_position(&model, &DVector::from_vec(vec![0.0, 0.0])).unwrap();
        assert_relative_eq!(p, Vector2::new(2.0, 0.0), epsilon = 1e-15);
        let p = ee_position(&model, &DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 0.0])).unwrap();
        assert_relative_eq!(p, Vector2::new(0.0, 2.0), epsilon = 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model3 = ManipulatorModel::new(
            vec![0.4, 0.7, 0.3],
            [0.0, -9.81],
            vec![InertialParams::rod(1.0, 0.5); 3],
            vec![],
        )
        .unwrap();
        for _ in 0..50 {
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let p = ee_position(&model3, &DVector::from_vec(q.clone())).unwrap();
            // cumulative-angle oracle
            let (mut x, mut y, mut a) = (0.0, 0.0, 0.0);
            for (qi, li) in q.iter().zip(&model3.link_lengths) {
                a += qi;
                x += li * a.cos();
                y += li * a.sin();
            }
            assert!((p[0] - x).abs() < 1e-12 && (p[1] - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tip_jacobian_and_hessian_match_finite_differences() {
        let model = ManipulatorModel::two_link_default();
        let q = [0.7, -0.4];
        let j = ee_jacobian(&model, &q);
        let h = ee_hessians(&model, &q);
        let eps = 1e-5;
        for i in 0..2 {
            let mut qp = q;
            let mut qm = q;
            qp[i] += eps;
            qm[i] -= eps;
            let jp = ee_jacobian(&model, &qp);
            let jm = ee_jacobian(&model, &qm);
            let pp = ChainGeometry::new(&model, &qp).tip();
            let pm = ChainGeometry::new(&model, &qm).tip();
            for r in 0..2 {
                assert_relative_eq!(j[(r, i)], (pp[r] - pm[r]) / (2.0 * eps), epsilon = 1e-8);
                for c in 0..2 {
                    let fd = (jp[(r, c)] - jm[(r, c)]) / (2.0 * eps);
                    assert_relative_eq!(h[r][(c, i)], fd, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn inverse_kinematics_roundtrip() {
        let model = ManipulatorModel::two_link_default();
        for up in [false, true] {
            let q = two_link_ik(&model, [0.5, 0.4], up).unwrap();
            let p = ee_position(&model, &q).unwrap();
            assert_relative_eq!(p, Vector2::new(0.5, 0.4), epsilon = 1e-12);
        }
        assert!(two_link_ik(&model, [2.0, 0.0], false).is_err());
    }

    #[test]
    fn consistency_predicate() {
        assert!(InertialParams::from_com(2.0, [0.04, 0.04], 0.003).is_consistent());
        assert!(!InertialParams::new(-1.0, [0.0, 0.0], 1.0).is_consistent());
        assert!(!InertialParams::new(1.0, [1.0, 0.0], 0.5).is_consistent());
        let p = InertialParams::from_com(2.0, [0.1, -0.3], 0.05);
        assert_relative_eq!(p.inertia_about_com(), 0.05, epsilon = 1e-14);
        assert_relative_eq!(p.com()[1], -0.3, epsilon = 1e-14);
    }
}
