//! Scalar objectives over reference designs.
//!
//! * [`j_nominal`]: task cost of the closed loop when the payload equals the prior mean;
//! * [`j_fim`]: nominal cost minus a weighted trace of the Fisher information;
//! * [`j_dual1`]: mixture-weighted second-order expectation of the task cost;
//! * [`j_dual2`]: mixture-weighted task cost plus an optimality-loss weighted
//!   posterior covariance term.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::ControllerGains;
use crate::dynamics::{InertialParams, ManipulatorModel, BODY_PARAMS};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{max_eigenvalue, spd_inverse, symmetrize};
use crate::reference::{make_spline, straight_line_design, BSplineTrajectory, Boundary, DesignVector, SplineConfig};
use crate::simloop::{task_cost, ClosedLoop, CostConfig, RolloutLog, SimConfig};
use crate::trajopt::{fd_hessian_block, optimize, HessianBlock, OptimizerConfig};
use crate::uq::{propagate_moments, GaussianMixture, MomentConfig, MomentTrajectory, PayloadLoop};

/// Fisher information of the payload parameters over a window.
#[derive(Clone, Debug)]
pub struct FisherInfo {
    pub matrix: DMatrix<f64>,
    pub window: (f64, f64),
    pub noise: DMatrix<f64>,
}

impl FisherInfo {
    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }
}

/// `I = ∫ Y_l^T R^{-1} Y_l dt` over the whole log.
pub fn fisher_information(log: &RolloutLog, noise: &DMatrix<f64>) -> Result<FisherInfo> {
    let end = log.times.last().copied().unwrap_or(0.0);
    fisher_information_until(log, noise, end)
}

/// Fisher information over `[0, t_end]` (trapezoidal rule on the log grid).
pub fn fisher_information_until(log: &RolloutLog, noise: &DMatrix<f64>, t_end: f64) -> Result<FisherInfo> {
    check_dim("noise covariance", log.n_joints, noise.nrows())?;
    let rinv = spd_inverse(noise, "noise covariance").map_err(|_| Error::Singular("noise covariance"))?;
    if log.is_empty() || log.payload_regressor(0).is_none() {
        return Err(Error::Config("the log carries no regressor snapshots".into()));
    }
    let term = |k: usize| {
        let y = log.payload_regressor(k).expect("checked above");
        y.transpose() * &rinv * y
    };
    let mut info = DMatrix::zeros(BODY_PARAMS, BODY_PARAMS);
    let mut prev = term(0);
    for k in 1..log.len() {
        if log.times[k] > t_end + 1e-12 {
            break;
        }
        let cur = term(k);
        info += (&prev + &cur) * (0.5 * (log.times[k] - log.times[k - 1]));
        prev = cur;
    }
    Ok(FisherInfo {
        matrix: symmetrize(&info),
        window: (log.times[0], t_end.min(*log.times.last().expect("non-empty"))),
        noise: noise.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OedKind {
    A,
    D,
    E,
    T,
}

/// Classical design criteria; `T` is to be maximized, the others minimized.
pub fn oed_criterion(info: &DMatrix<f64>, kind: OedKind) -> Result<f64> {
    if kind == OedKind::T {
        return Ok(info.trace());
    }
    let inv = spd_inverse(info, "Fisher information").map_err(|_| Error::RankDeficient)?;
    Ok(match kind {
        OedKind::A => inv.trace(),
        OedKind::D => inv.determinant(),
        OedKind::E => max_eigenvalue(&inv),
        OedKind::T => unreachable!(),
    })
}

/// Costs with closed-form Hessians, over plant state `x` and input `u`.
pub trait QuadraticCost {
    fn terminal(&self, x: &[f64]) -> f64;
    fn terminal_hessian(&self, x: &[f64]) -> DMatrix<f64>;
    fn running(&self, x: &[f64], u: &[f64]) -> f64;
    /// Hessian over `(x, u)`.
    fn running_hessian(&self, x: &[f64], u: &[f64]) -> DMatrix<f64>;
}

/// The manipulator task cost in [`QuadraticCost`] form.
pub struct TaskCost<'a> {
    pub model: &'a ManipulatorModel,
    pub cost: &'a CostConfig,
}

impl QuadraticCost for TaskCost<'_> {
    fn terminal(&self, x: &[f64]) -> f64 {
        let n = self.model.n_links();
        self.cost.terminal(self.model, &x[..n], &x[n..2 * n])
    }
    fn terminal_hessian(&self, x: &[f64]) -> DMatrix<f64> {
        self.cost.terminal_hessian(self.model, &x[..self.model.n_links()])
    }
    fn running(&self, x: &[f64], u: &[f64]) -> f64 {
        self.cost.running(&x[..self.model.n_links()], u)
    }
    fn running_hessian(&self, x: &[f64], _u: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(
            self.cost.running_hessian_diag(&x[..self.model.n_links()]),
        ))
    }
}

/// Split of a second-order expected cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpectedCost {
    /// Cost along the mean trajectory.
    pub mean: f64,
    /// `½ tr(Sigma_xx(T) M) + ½ ∫ tr(Sigma_xu L) dt`.
    pub spread: f64,
}

impl ExpectedCost {
    pub fn total(&self) -> f64 {
        self.mean + self.spread
    }
}

/// Second-order expectation of a quadratic cost from propagated moments.
pub fn expected_cost(m: &MomentTrajectory, cost: &dyn QuadraticCost) -> ExpectedCost {
    let np = m.n_plant;
    let last = m.len() - 1;
    let x_t = &m.mean_state(last)[..np];
    let terminal = cost.terminal(x_t);
    let terminal_spread = 0.5 * (m.sigma_plant(last) * cost.terminal_hessian(x_t)).trace();
    let stage = |k: usize| {
        let x = &m.mean_state(k)[..np];
        let u = m.mean_input(k);
        let spread = 0.5 * (m.sigma_plant_input(k) * cost.running_hessian(x, u)).trace();
        (cost.running(x, u), spread)
    };
    let (mut run, mut run_spread) = (0.0, 0.0);
    let mut prev = stage(0);
    for k in 1..=last {
        let cur = stage(k);
        let dt = m.times[k] - m.times[k - 1];
        run += 0.5 * dt * (prev.0 + cur.0);
        run_spread += 0.5 * dt * (prev.1 + cur.1);
        prev = cur;
    }
    ExpectedCost {
        mean: terminal + run,
        spread: terminal_spread + run_spread,
    }
}

/// Which covariance stands for the post-experiment parameter uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosteriorMode {
    /// `(I + Q^{-1})^{-1}`.
    CramerRao,
    /// Covariance of `theta_hat(T) - theta` from moment propagation.
    Propagated,
}

/// Everything needed to turn a design vector into closed-loop costs.
#[derive(Clone, Debug)]
pub struct PlanningContext {
    pub model: ManipulatorModel,
    pub boundary: Boundary,
    pub spline: SplineConfig,
    pub gains: ControllerGains,
    pub sim: SimConfig,
    pub cost: CostConfig,
    /// Initial estimate of every controller (the global prior mean).
    pub prior_mean: InertialParams,
    /// Continuous-time torque noise covariance used for Fisher information.
    pub fisher_noise: DMatrix<f64>,
    pub moments: MomentConfig,
    pub posterior: PosteriorMode,
}

impl PlanningContext {
    pub fn validate(&self) -> Result<()> {
        let n = self.model.n_links();
        self.model.validate()?;
        check_dim("boundary", n, self.boundary.n_joints())?;
        self.spline.validate()?;
        self.gains.validate(n)?;
        self.cost.validate(n)?;
        check_dim("Fisher noise", n, self.fisher_noise.nrows())?;
        if (self.spline.duration - self.sim.duration).abs() > 1e-12 {
            return Err(Error::Config("spline and simulation durations differ".into()));
        }
        self.sim.n_steps().map(|_| ())
    }

    pub fn design_len(&self) -> usize {
        self.spline.design_len(self.model.n_links())
    }

    pub fn initial_design(&self) -> DesignVector {
        straight_line_design(&self.boundary, &self.spline)
    }

    pub fn trajectory(&self, d: &[f64]) -> Result<BSplineTrajectory> {
        make_spline(&self.boundary, &DesignVector::from_slice(d), &self.spline)
    }

    /// Rollout with regressor snapshots for the true payload `truth`.
    pub fn rollout(&self, d: &[f64], truth: &InertialParams) -> Result<RolloutLog> {
        let traj = self.trajectory(d)?;
        let mut sim = self.sim.clone();
        sim.record_regressor = true;
        ClosedLoop::new(&self.model, &self.gains, &traj, &sim)?.rollout(truth, &self.prior_mean)
    }

    /// Task cost `J(d; theta)` (divergence-capped).
    pub fn cost(&self, d: &[f64], truth: &InertialParams) -> Result<f64> {
        let traj = self.trajectory(d)?;
        let log = ClosedLoop::new(&self.model, &self.gains, &traj, &self.sim)?.rollout(truth, &self.prior_mean)?;
        Ok(task_cost(&self.model, &log, &self.cost))
    }

    /// Like [`Self::cost`] for a raw parameter slice; failures become `NaN`.
    pub fn cost_or_nan(&self, d: &[f64], theta: &[f64]) -> f64 {
        InertialParams::from_slice(theta)
            .and_then(|truth| self.cost(d, &truth))
            .unwrap_or(f64::NAN)
    }

    pub fn moments(&self, d: &[f64], mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<MomentTrajectory> {
        let traj = self.trajectory(d)?;
        let system = PayloadLoop {
            closed_loop: ClosedLoop::new(&self.model, &self.gains, &traj, &self.sim)?,
            prior: self.prior_mean.clone(),
        };
        propagate_moments(&system, mean, cov, &self.moments)
    }

    fn divergence_cost(&self, t: f64) -> f64 {
        self.cost.divergence_penalty(t, self.sim.duration)
    }
}

pub fn j_nominal(d: &[f64], ctx: &PlanningContext) -> Result<f64> {
    ctx.cost(d, &ctx.prior_mean)
}

/// `J(d; theta_bar) - w tr(I(theta_bar; d))`.
pub fn j_fim(d: &[f64], theta_bar: &InertialParams, weight: f64, ctx: &PlanningContext) -> Result<f64> {
    let log = ctx.rollout(d, theta_bar)?;
    let j = task_cost(&ctx.model, &log, &ctx.cost);
    if log.is_diverged() {
        return Ok(j);
    }
    Ok(j - weight * fisher_information(&log, &ctx.fisher_noise)?.trace())
}

/// Per-component terms of a mixture objective.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentValue {
    pub weight: f64,
    pub task: f64,
    pub uncertainty: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualBreakdown {
    pub total: f64,
    pub components: Vec<ComponentValue>,
}

fn combine(components: Vec<ComponentValue>) -> DualBreakdown {
    let total = components.iter().map(|c| c.weight * (c.task + c.uncertainty)).sum();
    DualBreakdown { total, components }
}

fn component_params(mean: &DVector<f64>) -> Result<InertialParams> {
    check_dim("mixture dimension", BODY_PARAMS, mean.len())?;
    InertialParams::from_slice(mean.as_slice())
}

/// Mixture expectation of the task cost, second order per component.
pub fn j_dual1_terms(d: &[f64], gmm: &GaussianMixture, ctx: &PlanningContext) -> Result<DualBreakdown> {
    let cost = TaskCost {
        model: &ctx.model,
        cost: &ctx.cost,
    };
    let mut parts = Vec::with_capacity(gmm.len());
    for c in &gmm.components {
        component_params(&c.mean)?;
        let m = ctx.moments(d, &c.mean, &c.covariance)?;
        let (task, uncertainty) = match m.divergence {
            Some(t) => (ctx.divergence_cost(t), 0.0),
            None => {
                let e = expected_cost(&m, &cost);
                (e.mean, e.spread)
            }
        };
        parts.push(ComponentValue {
            weight: c.weight,
            task,
            uncertainty,
        });
    }
    Ok(combine(parts))
}

pub fn j_dual1(d: &[f64], gmm: &GaussianMixture, ctx: &PlanningContext) -> Result<f64> {
    j_dual1_terms(d, gmm, ctx).map(|b| b.total)
}

/// Second-order model of the excess cost of planning with wrong parameters.
#[derive(Clone, Debug)]
pub struct OptimalityLossModel {
    pub d_matrix: DMatrix<f64>,
    pub anchor_design: DVector<f64>,
    pub anchor_params: DVector<f64>,
    pub damping: f64,
    pub hessian_dd: DMatrix<f64>,
    pub hessian_dp: DMatrix<f64>,
    /// Whether the inner optimization met its tolerance.
    pub anchor_converged: bool,
}

impl OptimalityLossModel {
    /// `D = B^T (H + lambda I)^{-1} B` with `lambda = 1e-6 tr(H) / n_d`.
    pub fn from_hessians(
        hessian_dd: DMatrix<f64>,
        hessian_dp: DMatrix<f64>,
        anchor_design: DVector<f64>,
        anchor_params: DVector<f64>,
    ) -> Result<Self> {
        let nd = hessian_dd.nrows();
        check_dim("design Hessian", nd, hessian_dd.ncols())?;
        check_dim("mixed Hessian", nd, hessian_dp.nrows())?;
        let damping = 1e-6 * hessian_dd.trace() / nd as f64;
        let damped = symmetrize(&hessian_dd) + DMatrix::identity(nd, nd) * damping.max(0.0);
        let chol = damped
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("design Hessian after damping"))?;
        let d_matrix = symmetrize(&(hessian_dp.transpose() * chol.solve(&hessian_dp)));
        Ok(Self {
            d_matrix,
            anchor_design,
            anchor_params,
            damping,
            hessian_dd,
            hessian_dp,
            anchor_converged: true,
        })
    }

    /// `½ (theta - theta_bar)^T D (theta - theta_bar)`.
    pub fn predicted_loss(&self, theta: &[f64]) -> f64 {
        let e = DVector::from_column_slice(theta) - &self.anchor_params;
        0.5 * e.dot(&(&self.d_matrix * &e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossModelConfig {
    pub optimizer: OptimizerConfig,
    /// Relative step of the Hessian stencils.
    pub hessian_step: f64,
}

impl Default for LossModelConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            hessian_step: 1e-4,
        }
    }
}

/// Builds the model for any `J(d, theta)` by optimizing `d` at `theta_bar` from `d0`.
pub fn optimality_loss_model_with<F: FnMut(&[f64], &[f64]) -> f64>(
    mut f: F,
    theta_bar: &[f64],
    d0: &[f64],
    cfg: &LossModelConfig,
) -> Result<OptimalityLossModel> {
    let res = optimize(|d: &[f64]| f(d, theta_bar), d0, &cfg.optimizer)?;
    let mut model = loss_model_at(&mut f, res.design.as_slice(), theta_bar, cfg.hessian_step)?;
    model.anchor_converged = res.converged;
    Ok(model)
}

fn loss_model_at<F: FnMut(&[f64], &[f64]) -> f64>(f: &mut F, d_star: &[f64], theta_bar: &[f64], step: f64) -> Result<OptimalityLossModel> {
    let hdd = fd_hessian_block(f, d_star, theta_bar, HessianBlock::DesignDesign, step);
    let hdp = fd_hessian_block(f, d_star, theta_bar, HessianBlock::DesignParams, step);
    if !hdd.flagged.is_empty() || !hdp.flagged.is_empty() {
        return Err(Error::NonFinite("Hessian stencil at the anchor"));
    }
    OptimalityLossModel::from_hessians(
        hdd.matrix,
        hdp.matrix,
        DVector::from_column_slice(d_star),
        DVector::from_column_slice(theta_bar),
    )
}

/// Measured `J(d*(theta_bar), theta) - J(d*(theta), theta)` for any `J(d, theta)`.
pub fn optimality_loss<F: FnMut(&[f64], &[f64]) -> f64>(
    mut f: F,
    theta_bar: &[f64],
    theta: &[f64],
    d0: &[f64],
    opt: &OptimizerConfig,
) -> Result<f64> {
    let planned = optimize(|d: &[f64]| f(d, theta_bar), d0, opt)?.design;
    let ideal = optimize(|d: &[f64]| f(d, theta), d0, opt)?.design;
    Ok(f(planned.as_slice(), theta) - f(ideal.as_slice(), theta))
}

/// Optimality-loss model of the task cost at the prior mean, optimizing from the straight line.
pub fn optimality_loss_model(theta_bar: &InertialParams, ctx: &PlanningContext, cfg: &LossModelConfig) -> Result<OptimalityLossModel> {
    let mut ctx = ctx.clone();
    ctx.prior_mean = theta_bar.clone();
    let d0 = ctx.initial_design();
    optimality_loss_model_with(
        |d: &[f64], th: &[f64]| ctx.cost_or_nan(d, th),
        &theta_bar.to_array(),
        d0.as_slice(),
        cfg,
    )
}

/// Optimality-loss model at a known nominal optimum `d_star`.
pub fn optimality_loss_model_at(d_star: &[f64], theta_bar: &InertialParams, ctx: &PlanningContext, step: f64) -> Result<OptimalityLossModel> {
    let mut ctx = ctx.clone();
    ctx.prior_mean = theta_bar.clone();
    loss_model_at(
        &mut |d: &[f64], th: &[f64]| ctx.cost_or_nan(d, th),
        d_star,
        &theta_bar.to_array(),
        step,
    )
}

/// Mixture-weighted task cost plus `½ tr(D Sigma_theta(T))` per component.
pub fn j_dual2_terms(d: &[f64], gmm: &GaussianMixture, olm: &OptimalityLossModel, ctx: &PlanningContext) -> Result<DualBreakdown> {
    check_dim("optimality-loss matrix", gmm.dim(), olm.d_matrix.nrows())?;
    let mut parts = Vec::with_capacity(gmm.len());
    for c in &gmm.components {
        let truth = component_params(&c.mean)?;
        let log = ctx.rollout(d, &truth)?;
        let task = task_cost(&ctx.model, &log, &ctx.cost);
        let uncertainty = if log.is_diverged() {
            0.0
        } else {
            let posterior = match ctx.posterior {
                PosteriorMode::CramerRao => {
                    let info = fisher_information(&log, &ctx.fisher_noise)?;
                    let qinv = spd_inverse(&c.covariance, "component covariance")?;
                    spd_inverse(&(info.matrix + qinv), "posterior information")?
                }
                PosteriorMode::Propagated => estimation_error_covariance(d, &c.mean, &c.covariance, ctx)?,
            };
            0.5 * (&olm.d_matrix * posterior).trace()
        };
        parts.push(ComponentValue {
            weight: c.weight,
            task,
            uncertainty,
        });
    }
    Ok(combine(parts))
}

pub fn j_dual2(d: &[f64], gmm: &GaussianMixture, olm: &OptimalityLossModel, ctx: &PlanningContext) -> Result<f64> {
    j_dual2_terms(d, gmm, olm, ctx).map(|b| b.total)
}

/// First-order covariance of `theta_hat(T) - theta` for `theta ~ N(mean, cov)`.
fn estimation_error_covariance(d: &[f64], mean: &DVector<f64>, cov: &DMatrix<f64>, ctx: &PlanningContext) -> Result<DMatrix<f64>> {
    let traj = ctx.trajectory(d)?;
    let cl = ClosedLoop::new(&ctx.model, &ctx.gains, &traj, &ctx.sim)?;
    let map = cl.estimate_map();
    let m = ctx.moments(d, mean, cov)?;
    let last = m.len() - 1;
    let (nx, nu, p) = (m.n_state, m.n_input, m.n_params);
    // e = E [xi; u; theta] with E = [map, 0, -I]
    let mut e = DMatrix::zeros(p, nx + nu + p);
    e.view_mut((0, 0), (p, nx)).copy_from(&map);
    for i in 0..p {
        e[(i, nx + nu + i)] = -1.0;
    }
    Ok(symmetrize(&(&e * m.covariance(last) * e.transpose())))
}
