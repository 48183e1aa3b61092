//! TOML schema of a benchmark run. Every section and key is optional; missing
//! entries take the values of [`ExperimentConfig::default`].

use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::ControllerGains;
use crate::dynamics::{two_link_ik, InertialParams, ManipulatorModel, BODY_PARAMS};
use crate::error::{check_dim, Error, Result};
use crate::linalg::diag;
use crate::objective::{PlanningContext, PosteriorMode};
use crate::reference::{Boundary, SplineConfig};
use crate::simloop::{ControllerKind, CostConfig, SimConfig};
use crate::trajopt::{OptimizerConfig, OptimizerMethod};
use crate::uq::{GmmStrategy, MomentConfig, MomentMethod};

/// Reference generation methods compared by the benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Task cost at the prior mean only.
    Nominal,
    /// Task cost minus weighted Fisher-information trace.
    Fim,
    /// Robust expected cost.
    Ro,
    /// Task cost plus optimality-loss weighted posterior covariance.
    Ol,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Nominal, Method::Fim, Method::Ro, Method::Ol];

    pub fn label(self) -> &'static str {
        match self {
            Method::Nominal => "nominal",
            Method::Fim => "fim",
            Method::Ro => "ro",
            Method::Ol => "ol",
        }
    }

    /// Whether the generated reference depends on the controller.
    pub fn per_controller(self) -> bool {
        matches!(self, Method::Ro | Method::Ol)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nominal" => Ok(Method::Nominal),
            "fim" => Ok(Method::Fim),
            "ro" => Ok(Method::Ro),
            "ol" => Ok(Method::Ol),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub link_lengths: Vec<f64>,
    /// Uniform rods of these masses.
    pub link_masses: Vec<f64>,
    pub gravity: [f64; 2],
    pub joint_damping: Vec<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            link_lengths: vec![0.6, 0.5],
            link_masses: vec![3.0, 2.0],
            gravity: [0.0, -9.81],
            joint_damping: vec![0.0, 0.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    /// Tip position at `t = 0` [m].
    pub start: [f64; 2],
    /// Tip goal at `t = T` [m].
    pub target: [f64; 2],
    pub elbow_up: bool,
    pub duration: f64,
    pub step: f64,
    pub n_control: usize,
    pub degree: usize,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            start: [0.6, -0.4],
            target: [0.3, 0.6],
            elbow_up: false,
            duration: 2.0,
            step: 5e-3,
            n_control: 8,
            degree: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PayloadSection {
    pub mass: f64,
    /// Centre of mass in the last link's frame [m].
    pub com: [f64; 2],
    /// Rotational inertia about the centre of mass [kg·m²].
    pub inertia_about_com: f64,
    /// Prior standard deviation as a fraction of each nominal parameter.
    pub relative_std: f64,
    pub n_samples: usize,
}

impl Default for PayloadSection {
    fn default() -> Self {
        Self {
            mass: 2.0,
            com: [0.04, 0.04],
            // solid 0.1 m cube of 2 kg
            inertia_about_com: 2.0 * (0.1f64 * 0.1 + 0.1 * 0.1) / 12.0,
            relative_std: 0.5,
            n_samples: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub k: Vec<f64>,
    pub lambda: Vec<f64>,
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    pub gamma: f64,
    /// Diagonal of the classical adaptation gain.
    pub adaptation_gain: Vec<f64>,
    /// Standard deviation of the torque noise on the estimator's residual [N·m].
    pub noise_std: f64,
    pub rls_every: usize,
    pub rls_project: bool,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            k: vec![20.0, 20.0],
            lambda: vec![5.0, 5.0],
            kp: vec![25.0, 25.0],
            kd: vec![10.0, 10.0],
            gamma: 1.0,
            adaptation_gain: vec![1.0; BODY_PARAMS],
            noise_std: 1.0,
            rls_every: 2,
            rls_project: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub w_position: [f64; 2],
    pub w_velocity: Vec<f64>,
    pub w_torque: Vec<f64>,
    pub joint_lower: Vec<f64>,
    pub joint_upper: Vec<f64>,
    pub w_limit: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            w_position: [1000.0, 1000.0],
            w_velocity: vec![10.0, 10.0],
            w_torque: vec![1e-4, 1e-4],
            joint_lower: vec![-3.0, -3.0],
            joint_upper: vec![3.0, 3.0],
            w_limit: 100.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSection {
    pub methods: Vec<Method>,
    pub controllers: Vec<ControllerKind>,
    /// Weight of the information trace in the Fisher objective.
    pub fim_weight: f64,
    pub gmm_components: usize,
    pub gmm_strategy: GmmStrategy,
    pub moment_method: MomentMethod,
    pub moment_fd_step: f64,
    pub posterior: PosteriorMode,
    pub hessian_step: f64,
}

impl Default for MethodSection {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            controllers: ControllerKind::BENCH.to_vec(),
            fim_weight: 1e-8,
            gmm_components: 3,
            gmm_strategy: GmmStrategy::Sigma,
            moment_method: MomentMethod::Sensitivity,
            moment_fd_step: 1e-3,
            posterior: PosteriorMode::CramerRao,
            hessian_step: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub method: OptimizerMethod,
    /// Iteration cap for the nominal and Fisher objectives.
    pub max_iters: usize,
    /// Iteration cap for the robust and optimality-loss objectives.
    pub dual_max_iters: usize,
    pub tolerance: f64,
    pub fd_step: f64,
    pub initial_step: f64,
    pub population: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            method: OptimizerMethod::QuasiNewton,
            max_iters: 100,
            dual_max_iters: 25,
            tolerance: 1e-5,
            fd_step: 1e-5,
            initial_step: 0.1,
            population: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub task: TaskSection,
    pub payload: PayloadSection,
    pub controller: ControllerSection,
    pub cost: CostSection,
    pub methods: MethodSection,
    pub optimizer: OptimizerSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            model: ModelSection::default(),
            task: TaskSection::default(),
            payload: PayloadSection::default(),
            controller: ControllerSection::default(),
            cost: CostSection::default(),
            methods: MethodSection::default(),
            optimizer: OptimizerSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("the configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model()?;
        let n = model.n_links();
        if self.payload.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        if !(self.payload.relative_std.is_finite() && self.payload.relative_std > 0.0) {
            return Err(Error::Config("relative_std must be positive".into()));
        }
        if !self.payload().is_consistent() {
            return Err(Error::Inconsistent("nominal payload".into()));
        }
        for (what, p) in [("start", self.task.start), ("target", self.task.target)] {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            if r >= model.reach() {
                return Err(Error::Config(format!("{what} {p:?} is outside the workspace")));
            }
        }
        if self.methods.methods.is_empty() || self.methods.controllers.is_empty() {
            return Err(Error::Config("method and controller sets must be non-empty".into()));
        }
        if self.controller.rls_every == 0 {
            return Err(Error::Config("rls_every must be at least 1".into()));
        }
        if !(self.controller.noise_std.is_finite() && self.controller.noise_std > 0.0) {
            return Err(Error::Config("noise_std must be positive".into()));
        }
        check_dim("adaptation gain", BODY_PARAMS, self.controller.adaptation_gain.len())?;
        self.gains()?.validate(n)?;
        self.cost_config().validate(n)?;
        self.spline().validate()?;
        self.boundary()?;
        self.sim(ControllerKind::CtcFixed, false).n_steps()?;
        Ok(())
    }

    pub fn model(&self) -> Result<ManipulatorModel> {
        let m = &self.model;
        check_dim("link masses", m.link_lengths.len(), m.link_masses.len())?;
        let links = m
            .link_masses
            .iter()
            .zip(&m.link_lengths)
            .map(|(&mass, &l)| InertialParams::rod(mass, l))
            .collect();
        ManipulatorModel::new(m.link_lengths.clone(), m.gravity, links, m.joint_damping.clone())
    }

    /// Nominal payload, which is also every controller's initial estimate.
    pub fn payload(&self) -> InertialParams {
        InertialParams::from_com(self.payload.mass, self.payload.com, self.payload.inertia_about_com)
    }

    /// Diagonal prior with standard deviation `relative_std · |nominal|`.
    pub fn prior_covariance(&self) -> DMatrix<f64> {
        let s = self.payload.relative_std;
        diag(&self.payload().to_array().map(|v| (s * v).powi(2)))
    }

    pub fn boundary(&self) -> Result<Boundary> {
        let model = self.model()?;
        let q0 = two_link_ik(&model, self.task.start, self.task.elbow_up)?;
        let q1 = two_link_ik(&model, self.task.target, self.task.elbow_up)?;
        Boundary::new(q0, q1)
    }

    pub fn spline(&self) -> SplineConfig {
        SplineConfig {
            degree: self.task.degree,
            n_control: self.task.n_control,
            duration: self.task.duration,
            optimize_knots: false,
        }
    }

    pub fn gains(&self) -> Result<ControllerGains> {
        let c = &self.controller;
        let v = |x: &Vec<f64>| DVector::from_column_slice(x);
        let n = c.k.len();
        Ok(ControllerGains {
            k: v(&c.k),
            lambda: v(&c.lambda),
            kp: v(&c.kp),
            kd: v(&c.kd),
            gamma: c.gamma,
            adaptation_gain: diag(&c.adaptation_gain),
            rls_prior_covariance: self.prior_covariance(),
            rls_noise_covariance: DMatrix::identity(n, n) * c.noise_std.powi(2),
            rls_fixed_gain: None,
            rls_project: c.rls_project,
        })
    }

    pub fn cost_config(&self) -> CostConfig {
        let c = &self.cost;
        CostConfig {
            target: self.task.target,
            w_position: c.w_position,
            w_velocity: c.w_velocity.clone(),
            w_torque: c.w_torque.clone(),
            joint_lower: c.joint_lower.clone(),
            joint_upper: c.joint_upper.clone(),
            w_limit: c.w_limit,
            divergence_cost: 1e6,
        }
    }

    /// Noiseless simulation settings used for planning.
    pub fn sim(&self, controller: ControllerKind, adaptation: bool) -> SimConfig {
        let mut sim = SimConfig::new(self.task.duration, self.task.step, controller);
        sim.adaptation = adaptation;
        sim.rls_every = self.controller.rls_every;
        sim
    }

    /// Continuous-time noise covariance matching the discrete estimator's update rate.
    pub fn fisher_noise(&self) -> DMatrix<f64> {
        let n = self.model.link_lengths.len();
        let dt = self.task.step * self.controller.rls_every as f64;
        DMatrix::identity(n, n) * (self.controller.noise_std.powi(2) * dt)
    }

    pub fn optimizer(&self, method: Method, n_design: usize) -> OptimizerConfig {
        let o = &self.optimizer;
        let lo = self.cost.joint_lower.clone();
        let hi = self.cost.joint_upper.clone();
        let n = lo.len().max(1);
        let (lower, upper) = if lo.is_empty() {
            (None, None)
        } else {
            (
                Some((0..n_design).map(|i| lo[i % n]).collect()),
                Some((0..n_design).map(|i| hi[i % n]).collect()),
            )
        };
        OptimizerConfig {
            method: o.method,
            max_iters: if method.per_controller() { o.dual_max_iters } else { o.max_iters },
            tolerance: o.tolerance,
            gradient_tolerance: 1e-8,
            fd_step: o.fd_step,
            initial_step: o.initial_step,
            seed: self.seed,
            lower,
            upper,
            population: o.population,
        }
    }

    /// Planning context for one controller.
    pub fn context(&self, controller: ControllerKind, adaptation: bool) -> Result<PlanningContext> {
        let ctx = PlanningContext {
            model: self.model()?,
            boundary: self.boundary()?,
            spline: self.spline(),
            gains: self.gains()?,
            sim: self.sim(controller, adaptation),
            cost: self.cost_config(),
            prior_mean: self.payload(),
            fisher_noise: self.fisher_noise(),
            moments: MomentConfig {
                method: self.methods.moment_method,
                fd_step: self.methods.moment_fd_step,
            },
            posterior: self.methods.posterior,
        };
        ctx.validate()?;
        Ok(ctx)
    }
}
