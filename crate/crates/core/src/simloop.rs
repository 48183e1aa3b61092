//! Closed-loop rollouts: plant, policy and estimator integrated together.
//!
//! The augmented state is `xi = [q, dq, estimator]`, where the estimator part
//! depends on the controller:
//!
//! | controller                 | estimator part            | length |
//! |----------------------------|---------------------------|--------|
//! | frozen (CTC-fixed, or any controller with adaptation off) | `theta_hat` | 4 |
//! | Slotine–Li, gradient law   | `theta_hat`               | 4      |
//! | NAC                        | `vech(Theta_hat)`         | 6      |
//! | CTC-RLS                    | `theta_hat`, `vech(P)`    | 14     |
//!
//! Continuous parts are integrated with classical RK4 at a fixed step. The RLS
//! estimator is discrete: at every `rls_every`-th grid point after the first, it
//! measures the torque and acceleration produced by the current policy at the
//! current state and updates before the next step is integrated.

use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::control::{
    ctc_with, nac_rate, project_consistent, pseudo_inertia, pseudo_inertia_inverse, rls_fixed_gain_update,
    rls_update, slotine_li_with, sliding_terms, ControllerGains, EstimatorState,
};
use crate::dynamics::{
    ee_hessians, ee_jacobian, forward_dynamics_with, ChainBasis, ChainGeometry, InertialParams, JointState,
    ManipulatorModel, BODY_PARAMS,
};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{unvech, vech};
use crate::reference::{RefSample, Reference};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    /// Slotine–Li control with natural adaptation on the pseudo-inertia.
    Nac,
    /// Computed torque with recursive least squares.
    CtcRls,
    /// Computed torque with the prior mean frozen.
    CtcFixed,
    /// Slotine–Li control with the classical gradient law.
    SlotineLi,
}

impl ControllerKind {
    pub const BENCH: [ControllerKind; 3] = [ControllerKind::Nac, ControllerKind::CtcRls, ControllerKind::CtcFixed];

    pub fn label(self) -> &'static str {
        match self {
            ControllerKind::Nac => "nac",
            ControllerKind::CtcRls => "ctc-rls",
            ControllerKind::CtcFixed => "ctc-fixed",
            ControllerKind::SlotineLi => "slotine-li",
        }
    }

    fn uses_sliding_policy(self) -> bool {
        matches!(self, ControllerKind::Nac | ControllerKind::SlotineLi)
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nac" => Ok(ControllerKind::Nac),
            "ctc-rls" | "rls" => Ok(ControllerKind::CtcRls),
            "ctc-fixed" | "fixed" => Ok(ControllerKind::CtcFixed),
            "slotine-li" | "gradient" => Ok(ControllerKind::SlotineLi),
            other => Err(Error::Config(format!("unknown controller '{other}'"))),
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub duration: f64,
    pub step: f64,
    pub controller: ControllerKind,
    /// With adaptation off every controller keeps its prior estimate.
    pub adaptation: bool,
    /// RLS update period in integration steps.
    pub rls_every: usize,
    /// Covariance of the torque noise added to RLS residuals.
    pub measurement_noise: Option<DMatrix<f64>>,
    pub seed: u64,
    /// Record the payload regressor `Y_l(q, dq, ddq)` at every sample.
    pub record_regressor: bool,
    /// Initial joint offset from the reference start.
    pub initial_offset: Option<DVector<f64>>,
    /// Any state component beyond this magnitude counts as divergence.
    pub divergence_bound: f64,
}

impl SimConfig {
    pub fn new(duration: f64, step: f64, controller: ControllerKind) -> Self {
        Self {
            duration,
            step,
            controller,
            adaptation: true,
            rls_every: 1,
            measurement_noise: None,
            seed: 0,
            record_regressor: false,
            initial_offset: None,
            divergence_bound: 1e6,
        }
    }

    /// Number of integration steps `T / h`.
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.duration.is_finite() && self.duration > 0.0 && self.step.is_finite() && self.step > 0.0) {
            return Err(Error::Config("duration and step must be positive".into()));
        }
        let n = (self.duration / self.step).round();
        if n < 1.0 || (n * self.step - self.duration).abs() > 1e-9 * self.duration {
            return Err(Error::Config(format!(
                "step {} does not divide the duration {}",
                self.step, self.duration
            )));
        }
        Ok(n as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Layout {
    Frozen,
    Gradient,
    Natural,
    Rls,
}

impl Layout {
    fn len(self) -> usize {
        match self {
            Layout::Frozen | Layout::Gradient => BODY_PARAMS,
            Layout::Natural => 6,
            Layout::Rls => BODY_PARAMS + 10,
        }
    }
}

/// Policy outputs and plant response at one state.
#[derive(Clone, Debug)]
pub struct StageInfo {
    pub tau: DVector<f64>,
    pub ddq: DVector<f64>,
    pub s: DVector<f64>,
}

/// One controller tracking one reference on one model.
pub struct ClosedLoop<'a> {
    pub model: &'a ManipulatorModel,
    pub gains: &'a ControllerGains,
    pub reference: &'a dyn Reference,
    pub cfg: &'a SimConfig,
    layout: Layout,
    n_steps: usize,
    noise_chol: Option<DMatrix<f64>>,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(
        model: &'a ManipulatorModel,
        gains: &'a ControllerGains,
        reference: &'a dyn Reference,
        cfg: &'a SimConfig,
    ) -> Result<Self> {
        let n = model.n_links();
        check_dim("reference joints", n, reference.n_joints())?;
        gains.validate(n)?;
        let n_steps = cfg.n_steps()?;
        if (reference.duration() - cfg.duration).abs() > 1e-9 * cfg.duration {
            return Err(Error::Config(format!(
                "reference lasts {} s but the simulation {} s",
                reference.duration(),
                cfg.duration
            )));
        }
        if cfg.rls_every == 0 {
            return Err(Error::Config("rls_every must be at least 1".into()));
        }
        if let Some(off) = &cfg.initial_offset {
            check_dim("initial offset", n, off.len())?;
        }
        let noise_chol = match &cfg.measurement_noise {
            Some(r) => {
                check_dim("measurement noise", n, r.nrows())?;
                Some(r.clone().cholesky().ok_or(Error::NotPositiveDefinite("measurement noise"))?.l())
            }
            None => None,
        };
        let layout = match (cfg.controller, cfg.adaptation) {
            (_, false) | (ControllerKind::CtcFixed, _) => Layout::Frozen,
            (ControllerKind::SlotineLi, true) => Layout::Gradient,
            (ControllerKind::Nac, true) => Layout::Natural,
            (ControllerKind::CtcRls, true) => Layout::Rls,
        };
        Ok(Self {
            model,
            gains,
            reference,
            cfg,
            layout,
            n_steps,
            noise_chol,
        })
    }

    pub fn n_joints(&self) -> usize {
        self.model.n_links()
    }

    pub fn n_state(&self) -> usize {
        2 * self.n_joints() + self.layout.len()
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.cfg.duration
        } else {
            k as f64 * self.cfg.step
        }
    }

    /// Whether a discrete estimator update happens at grid point `k`.
    pub fn jumps_at(&self, k: usize) -> bool {
        self.layout == Layout::Rls && k > 0 && k < self.n_steps && k % self.cfg.rls_every == 0
    }

    pub fn has_jumps(&self) -> bool {
        self.layout == Layout::Rls
    }

    /// Augmented initial state for the prior payload estimate.
    pub fn initial_state(&self, prior: &InertialParams) -> Result<DVector<f64>> {
        let n = self.n_joints();
        let r0 = self.reference.sample(0.0)?;
        let mut xi = DVector::zeros(self.n_state());
        let q0 = match &self.cfg.initial_offset {
            Some(off) => &r0.q + off,
            None => r0.q.clone(),
        };
        xi.rows_mut(0, n).copy_from(&q0);
        xi.rows_mut(n, n).copy_from(&r0.dq);
        let est = &mut xi.as_mut_slice()[2 * n..];
        let th = prior.to_array();
        match self.layout {
            Layout::Frozen | Layout::Gradient => est.copy_from_slice(&th),
            Layout::Natural => est.copy_from_slice(&vech(&pseudo_inertia(&th)?)),
            Layout::Rls => {
                est[..BODY_PARAMS].copy_from_slice(&th);
                est[BODY_PARAMS..].copy_from_slice(&vech(&self.gains.rls_prior_covariance));
            }
        }
        Ok(xi)
    }

    /// Payload estimate encoded in an augmented state.
    pub fn theta_hat(&self, xi: &[f64]) -> [f64; BODY_PARAMS] {
        let est = &xi[2 * self.n_joints()..];
        match self.layout {
            Layout::Natural => pseudo_inertia_inverse(&unvech(est, 3)),
            _ => [est[0], est[1], est[2], est[3]],
        }
    }

    /// Linear map from the augmented state to the payload estimate.
    pub fn estimate_map(&self) -> DMatrix<f64> {
        let off = 2 * self.n_joints();
        let mut m = DMatrix::zeros(BODY_PARAMS, self.n_state());
        if self.layout == Layout::Natural {
            // vech order of a 3 × 3 matrix: (0,0) (1,0) (2,0) (1,1) (2,1) (2,2)
            for (row, col) in [(0, 0), (1, 1), (2, 2), (3, 3), (3, 5)] {
                m[(row, off + col)] = 1.0;
            }
        } else {
            for i in 0..BODY_PARAMS {
                m[(i, off + i)] = 1.0;
            }
        }
        m
    }

    fn joint_state(&self, xi: &[f64]) -> JointState {
        let n = self.n_joints();
        JointState::new(
            DVector::from_column_slice(&xi[..n]),
            DVector::from_column_slice(&xi[n..2 * n]),
        )
    }

    fn policy_with(&self, basis: &ChainBasis, st: &JointState, r: &RefSample, theta_hat: &[f64]) -> DVector<f64> {
        if self.cfg.controller.uses_sliding_policy() {
            let terms = sliding_terms(self.gains, st, r);
            slotine_li_with(self.model, basis, self.gains, st, &terms, theta_hat)
        } else {
            ctc_with(self.model, basis, self.gains, st, r, theta_hat)
        }
    }

    /// Control torque at `(t, xi)`.
    pub fn policy(&self, t: f64, xi: &[f64]) -> Result<DVector<f64>> {
        let st = self.joint_state(xi);
        let r = self.reference.sample(t)?;
        let basis = ChainBasis::new(self.model, st.q.as_slice());
        Ok(self.policy_with(&basis, &st, &r, &self.theta_hat(xi)))
    }

    /// Time derivative of the augmented state; `out` receives `d xi / dt`.
    pub fn derivative(&self, t: f64, xi: &[f64], theta_true: &[f64], out: &mut [f64]) -> Result<StageInfo> {
        let n = self.n_joints();
        let st = self.joint_state(xi);
        let r = self.reference.sample(t)?;
        let basis = ChainBasis::new(self.model, st.q.as_slice());
        let theta_hat = self.theta_hat(xi);
        let terms = sliding_terms(self.gains, &st, &r);
        let tau = if self.cfg.controller.uses_sliding_policy() {
            slotine_li_with(self.model, &basis, self.gains, &st, &terms, &theta_hat)
        } else {
            ctc_with(self.model, &basis, self.gains, &st, &r, &theta_hat)
        };
        let full = self.model.full_params_from(theta_true);
        let ddq = forward_dynamics_with(self.model, &basis, full.as_slice(), st.dq.as_slice(), &tau)?;
        out[..n].copy_from_slice(st.dq.as_slice());
        out[n..2 * n].copy_from_slice(ddq.as_slice());
        let est_rate = &mut out[2 * n..];
        match self.layout {
            Layout::Frozen | Layout::Rls => est_rate.iter_mut().for_each(|x| *x = 0.0),
            Layout::Gradient | Layout::Natural => {
                let y_l = basis.regressor_block(
                    self.model.payload_offset()..self.model.n_params(),
                    st.dq.as_slice(),
                    terms.a.as_slice(),
                    terms.v.as_slice(),
                );
                let l = y_l.transpose() * &terms.s;
                if self.layout == Layout::Gradient {
                    let rate = -(&self.gains.adaptation_gain * l);
                    est_rate.copy_from_slice(rate.as_slice());
                } else {
                    let big = unvech(&xi[2 * n..], 3);
                    est_rate.copy_from_slice(&vech(&nac_rate(self.gains.gamma, &big, l.as_slice())));
                }
            }
        }
        Ok(StageInfo { tau, ddq, s: terms.s })
    }

    /// Discrete RLS update at `(t, xi)`; `noise` perturbs the measured torque.
    pub fn jump(&self, t: f64, xi: &mut [f64], theta_true: &[f64], noise: Option<&[f64]>) -> Result<()> {
        if self.layout != Layout::Rls {
            return Ok(());
        }
        let n = self.n_joints();
        let st = self.joint_state(xi);
        let r = self.reference.sample(t)?;
        let basis = ChainBasis::new(self.model, st.q.as_slice());
        let theta_hat = self.theta_hat(xi);
        let tau = self.policy_with(&basis, &st, &r, &theta_hat);
        let full = self.model.full_params_from(theta_true);
        let ddq = forward_dynamics_with(self.model, &basis, full.as_slice(), st.dq.as_slice(), &tau)?;
        // residual torque attributed to the payload: tau - D dq - Y_r theta_r
        let robot_only = self.model.full_params_from(&[0.0; BODY_PARAMS]);
        let mut residual = &tau - basis.torque(robot_only.as_slice(), st.dq.as_slice(), ddq.as_slice(), st.dq.as_slice());
        for i in 0..n {
            residual[i] -= self.model.damping(i) * st.dq[i];
            if let Some(w) = noise {
                residual[i] += w[i];
            }
        }
        let y_l = basis.regressor_block(
            self.model.payload_offset()..self.model.n_params(),
            st.dq.as_slice(),
            ddq.as_slice(),
            st.dq.as_slice(),
        );
        let est = &mut xi[2 * n..];
        let th = DVector::from_column_slice(&est[..BODY_PARAMS]);
        let mut next = if let Some(k) = &self.gains.rls_fixed_gain {
            let mut v = rls_fixed_gain_update(&th, k, &y_l, &residual).as_slice().to_vec();
            v.extend_from_slice(&est[BODY_PARAMS..]);
            v
        } else {
            let state = EstimatorState::rls(th, unvech(&est[BODY_PARAMS..], BODY_PARAMS));
            let upd = rls_update(&state, &y_l, &residual, &self.gains.rls_noise_covariance)?;
            let mut v = upd.theta_hat.as_slice().to_vec();
            v.extend(vech(upd.covariance.as_ref().expect("RLS keeps a covariance")));
            v
        };
        if self.gains.rls_project {
            project_consistent(&mut next[..BODY_PARAMS]);
        }
        est.copy_from_slice(&next);
        Ok(())
    }

    /// One RK4 step from grid point `k`; returns the next state and the stage-one info.
    pub fn step(&self, k: usize, xi: &DVector<f64>, theta_true: &[f64]) -> Result<(DVector<f64>, StageInfo)> {
        let t = self.time(k);
        let h = self.time(k + 1) - t;
        let len = xi.len();
        let mut k1 = DVector::zeros(len);
        let mut k2 = DVector::zeros(len);
        let mut k3 = DVector::zeros(len);
        let mut k4 = DVector::zeros(len);
        let info = self.derivative(t, xi.as_slice(), theta_true, k1.as_mut_slice())?;
        let x2 = xi + &k1 * (0.5 * h);
        self.derivative(t + 0.5 * h, x2.as_slice(), theta_true, k2.as_mut_slice())?;
        let x3 = xi + &k2 * (0.5 * h);
        self.derivative(t + 0.5 * h, x3.as_slice(), theta_true, k3.as_mut_slice())?;
        let x4 = xi + &k3 * h;
        self.derivative(t + h, x4.as_slice(), theta_true, k4.as_mut_slice())?;
        let next = xi + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        Ok((next, info))
    }

    fn is_diverged(&self, xi: &DVector<f64>) -> bool {
        xi.iter().any(|x| !x.is_finite() || x.abs() > self.cfg.divergence_bound)
    }

    /// Simulates the whole horizon for the true payload `theta_true`.
    pub fn rollout(&self, theta_true: &InertialParams, prior: &InertialParams) -> Result<RolloutLog> {
        let truth = theta_true.to_array();
        let n = self.n_joints();
        let mut log = RolloutLog::new(n, self.n_state(), self.cfg.duration, self.n_steps + 1, self.cfg.record_regressor);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut xi = self.initial_state(prior)?;
        for k in 0..=self.n_steps {
            let t = self.time(k);
            if self.jumps_at(k) {
                let noise = self.noise_chol.as_ref().map(|l| {
                    let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                    (l * z).as_slice().to_vec()
                });
                if let Err(e) = self.jump(t, xi.as_mut_slice(), &truth, noise.as_deref()) {
                    return divergence_or(e, log, t);
                }
            }
            let (next, info) = if k < self.n_steps {
                match self.step(k, &xi, &truth) {
                    Ok((next, info)) => (Some(next), info),
                    Err(e) => return divergence_or(e, log, t),
                }
            } else {
                let mut scratch = vec![0.0; xi.len()];
                match self.derivative(t, xi.as_slice(), &truth, &mut scratch) {
                    Ok(info) => (None, info),
                    Err(e) => return divergence_or(e, log, t),
                }
            };
            let r = self.reference.sample(t)?;
            let y_l = if self.cfg.record_regressor {
                let basis = ChainBasis::new(self.model, &xi.as_slice()[..n]);
                Some(basis.regressor_block(
                    self.model.payload_offset()..self.model.n_params(),
                    &xi.as_slice()[n..2 * n],
                    info.ddq.as_slice(),
                    &xi.as_slice()[n..2 * n],
                ))
            } else {
                None
            };
            log.push(t, xi.as_slice(), &info, &r, &self.theta_hat(xi.as_slice()), y_l.as_ref());
            if let Some(next) = next {
                if self.is_diverged(&next) {
                    log.divergence = Some(self.time(k + 1));
                    return Ok(log);
                }
                xi = next;
            }
        }
        Ok(log)
    }
}

/// Numerical failures that count as divergence of a rollout rather than as errors.
pub(crate) fn is_divergence(e: &Error) -> bool {
    matches!(
        e,
        Error::SingularInertia | Error::NonFinite(_) | Error::Singular(_) | Error::NotPositiveDefinite(_)
    )
}

fn divergence_or(e: Error, mut log: RolloutLog, t: f64) -> Result<RolloutLog> {
    if is_divergence(&e) {
        log.divergence = Some(t);
        Ok(log)
    } else {
        Err(e)
    }
}

/// Convenience wrapper around [`ClosedLoop::rollout`].
pub fn rollout(
    model: &ManipulatorModel,
    gains: &ControllerGains,
    reference: &dyn Reference,
    cfg: &SimConfig,
    payload_true: &InertialParams,
    estimator_init: &InertialParams,
) -> Result<RolloutLog> {
    ClosedLoop::new(model, gains, reference, cfg)?.rollout(payload_true, estimator_init)
}

/// Sampled signals of one rollout, stored sample-major.
#[derive(Clone, Debug)]
pub struct RolloutLog {
    pub n_joints: usize,
    pub n_state: usize,
    pub duration: f64,
    pub times: Vec<f64>,
    states: Vec<f64>,
    torques: Vec<f64>,
    accelerations: Vec<f64>,
    sliding: Vec<f64>,
    references: Vec<f64>,
    estimates: Vec<f64>,
    regressors: Option<Vec<f64>>,
    /// Time at which the rollout left the admissible region.
    pub divergence: Option<f64>,
}

impl RolloutLog {
    fn new(n: usize, n_state: usize, duration: f64, capacity: usize, regressors: bool) -> Self {
        Self {
            n_joints: n,
            n_state,
            duration,
            times: Vec::with_capacity(capacity),
            states: Vec::with_capacity(capacity * n_state),
            torques: Vec::with_capacity(capacity * n),
            accelerations: Vec::with_capacity(capacity * n),
            sliding: Vec::with_capacity(capacity * n),
            references: Vec::with_capacity(capacity * 3 * n),
            estimates: Vec::with_capacity(capacity * BODY_PARAMS),
            regressors: regressors.then(|| Vec::with_capacity(capacity * n * BODY_PARAMS)),
            divergence: None,
        }
    }

    fn push(&mut self, t: f64, xi: &[f64], info: &StageInfo, r: &RefSample, theta_hat: &[f64], y_l: Option<&DMatrix<f64>>) {
        self.times.push(t);
        self.states.extend_from_slice(xi);
        self.torques.extend_from_slice(info.tau.as_slice());
        self.accelerations.extend_from_slice(info.ddq.as_slice());
        self.sliding.extend_from_slice(info.s.as_slice());
        self.references.extend_from_slice(r.q.as_slice());
        self.references.extend_from_slice(r.dq.as_slice());
        self.references.extend_from_slice(r.ddq.as_slice());
        self.estimates.extend_from_slice(theta_hat);
        if let (Some(store), Some(y)) = (self.regressors.as_mut(), y_l) {
            for r in 0..y.nrows() {
                for c in 0..y.ncols() {
                    store.push(y[(r, c)]);
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn is_diverged(&self) -> bool {
        self.divergence.is_some()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.n_state..(k + 1) * self.n_state]
    }

    pub fn q(&self, k: usize) -> &[f64] {
        &self.state(k)[..self.n_joints]
    }

    pub fn dq(&self, k: usize) -> &[f64] {
        &self.state(k)[self.n_joints..2 * self.n_joints]
    }

    pub fn tau(&self, k: usize) -> &[f64] {
        &self.torques[k * self.n_joints..(k + 1) * self.n_joints]
    }

    pub fn ddq(&self, k: usize) -> &[f64] {
        &self.accelerations[k * self.n_joints..(k + 1) * self.n_joints]
    }

    pub fn s(&self, k: usize) -> &[f64] {
        &self.sliding[k * self.n_joints..(k + 1) * self.n_joints]
    }

    pub fn q_ref(&self, k: usize) -> &[f64] {
        let n = self.n_joints;
        &self.references[k * 3 * n..k * 3 * n + n]
    }

    pub fn dq_ref(&self, k: usize) -> &[f64] {
        let n = self.n_joints;
        &self.references[k * 3 * n + n..k * 3 * n + 2 * n]
    }

    pub fn theta_hat(&self, k: usize) -> &[f64] {
        &self.estimates[k * BODY_PARAMS..(k + 1) * BODY_PARAMS]
    }

    /// Payload regressor `Y_l(q, dq, ddq)` (when recorded).
    pub fn payload_regressor(&self, k: usize) -> Option<DMatrix<f64>> {
        let n = self.n_joints;
        self.regressors.as_ref().map(|store| {
            DMatrix::from_row_slice(n, BODY_PARAMS, &store[k * n * BODY_PARAMS..(k + 1) * n * BODY_PARAMS])
        })
    }

    /// Sup-norm joint tracking error over the rollout.
    pub fn max_tracking_error(&self) -> f64 {
        (0..self.len())
            .flat_map(|k| self.q(k).iter().zip(self.q_ref(k)).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let n = self.n_joints;
        let mut header = vec!["t".to_string()];
        for prefix in ["q", "dq", "q_ref", "tau"] {
            header.extend((0..n).map(|i| format!("{prefix}{i}")));
        }
        header.extend(["m_hat", "hx_hat", "hy_hat", "izz_hat"].map(String::from));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![self.times[k].to_string()];
            for v in [self.q(k), self.dq(k), self.q_ref(k), self.tau(k), self.theta_hat(k)] {
                row.extend(v.iter().map(|x| x.to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Weights of the task cost `m(x_T) + ∫ l(q, tau) dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    /// Goal position of the tip.
    pub target: [f64; 2],
    pub w_position: [f64; 2],
    pub w_velocity: Vec<f64>,
    pub w_torque: Vec<f64>,
    #[serde(default)]
    pub joint_lower: Vec<f64>,
    #[serde(default)]
    pub joint_upper: Vec<f64>,
    #[serde(default)]
    pub w_limit: f64,
    /// Cost `J_max` of a rollout that fails at `t = T`; earlier failures cost up to `2 J_max`.
    #[serde(default = "default_divergence_cost")]
    pub divergence_cost: f64,
}

fn default_divergence_cost() -> f64 {
    1e6
}

impl CostConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        check_dim("velocity weights", n, self.w_velocity.len())?;
        check_dim("torque weights", n, self.w_torque.len())?;
        if !self.joint_lower.is_empty() || !self.joint_upper.is_empty() {
            check_dim("lower joint limits", n, self.joint_lower.len())?;
            check_dim("upper joint limits", n, self.joint_upper.len())?;
        }
        Ok(())
    }

    /// `‖p(q) - p_T‖²_Wp + ‖dq‖²_Wv`.
    pub fn terminal(&self, model: &ManipulatorModel, q: &[f64], dq: &[f64]) -> f64 {
        let tip = ChainGeometry::new(model, q).tip();
        let e = [tip[0] - self.target[0], tip[1] - self.target[1]];
        let pos = self.w_position[0] * e[0] * e[0] + self.w_position[1] * e[1] * e[1];
        pos + dq.iter().zip(&self.w_velocity).map(|(v, w)| w * v * v).sum::<f64>()
    }

    /// Hessian of [`Self::terminal`] with respect to `(q, dq)`.
    pub fn terminal_hessian(&self, model: &ManipulatorModel, q: &[f64]) -> DMatrix<f64> {
        let n = model.n_links();
        let tip = ChainGeometry::new(model, q).tip();
        let we = [
            self.w_position[0] * (tip[0] - self.target[0]),
            self.w_position[1] * (tip[1] - self.target[1]),
        ];
        let j = ee_jacobian(model, q);
        let [hx, hy] = ee_hessians(model, q);
        let wp = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.w_position));
        let hqq = (j.transpose() * wp * &j + hx * we[0] + hy * we[1]) * 2.0;
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        h.view_mut((0, 0), (n, n)).copy_from(&hqq);
        for i in 0..n {
            h[(n + i, n + i)] = 2.0 * self.w_velocity[i];
        }
        h
    }

    fn limit_excess(&self, i: usize, q: f64) -> f64 {
        if self.joint_lower.is_empty() {
            return 0.0;
        }
        if q > self.joint_upper[i] {
            q - self.joint_upper[i]
        } else if q < self.joint_lower[i] {
            q - self.joint_lower[i]
        } else {
            0.0
        }
    }

    /// `tau^T W_u tau` plus a quadratic penalty outside the joint limits.
    pub fn running(&self, q: &[f64], tau: &[f64]) -> f64 {
        let effort: f64 = tau.iter().zip(&self.w_torque).map(|(u, w)| w * u * u).sum();
        let limit: f64 = q.iter().enumerate().map(|(i, &qi)| self.limit_excess(i, qi).powi(2)).sum();
        effort + self.w_limit * limit
    }

    /// Diagonal of the Hessian of [`Self::running`] with respect to `(q, dq, tau)`.
    pub fn running_hessian_diag(&self, q: &[f64]) -> Vec<f64> {
        let n = q.len();
        let mut d = vec![0.0; 3 * n];
        for i in 0..n {
            if self.limit_excess(i, q[i]) != 0.0 {
                d[i] = 2.0 * self.w_limit;
            }
            d[2 * n + i] = 2.0 * self.w_torque[i];
        }
        d
    }

    /// Capped cost of a rollout that failed at `t_fail`.
    pub fn divergence_penalty(&self, t_fail: f64, duration: f64) -> f64 {
        self.divergence_cost * (2.0 - (t_fail / duration).clamp(0.0, 1.0))
    }
}

/// Task cost of a logged rollout; running cost by the trapezoidal rule.
pub fn task_cost(model: &ManipulatorModel, log: &RolloutLog, cost: &CostConfig) -> f64 {
    if let Some(t) = log.divergence {
        return cost.divergence_penalty(t, log.duration);
    }
    let last = log.len() - 1;
    let mut running = 0.0;
    let mut prev = cost.running(log.q(0), log.tau(0));
    for k in 1..=last {
        let cur = cost.running(log.q(k), log.tau(k));
        running += 0.5 * (log.times[k] - log.times[k - 1]) * (prev + cur);
        prev = cur;
    }
    cost.terminal(model, log.q(last), log.dq(last)) + running
}
