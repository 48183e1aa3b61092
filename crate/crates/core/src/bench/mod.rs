//! Seeded method × controller benchmark over sampled payloads.
//!
//! Nominal and Fisher references are planned once with the frozen computed-torque
//! loop, since both only look at the prior mean. Robust and optimality-loss
//! references depend on the closed loop and are planned per controller, starting
//! from the nominal optimum.

mod config;
mod report;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use config::{
    ControllerSection, CostSection, ExperimentConfig, Method, MethodSection, ModelSection, OptimizerSection,
    PayloadSection, TaskSection,
};
pub use report::{read_rows_csv, summarize, write_results, SummaryRow, PARAM_NAMES};

use crate::dynamics::{ee_position, InertialParams, BODY_PARAMS};
use crate::error::{Error, Result};
use crate::objective::{fisher_information, j_dual1, j_dual2, j_fim, j_nominal, optimality_loss_model_at, PlanningContext};
use crate::reference::BSplineTrajectory;
use crate::simloop::{ClosedLoop, ControllerKind};
use crate::trajopt::optimize;
use crate::uq::{build_gmm, psd_root};

/// Gaussian draws around `nominal`, redrawn until physically consistent.
pub fn sample_payloads(nominal: &InertialParams, cov: &DMatrix<f64>, n: usize, seed: u64) -> Result<Vec<InertialParams>> {
    if cov.nrows() != BODY_PARAMS || cov.ncols() != BODY_PARAMS {
        return Err(Error::Dimension {
            what: "payload covariance",
            expected: BODY_PARAMS,
            got: cov.nrows(),
        });
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("payload covariance"));
    }
    let root = psd_root(cov);
    let mean = nominal.to_vector();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut draws = 0usize;
    while out.len() < n {
        draws += 1;
        let z = DVector::from_fn(BODY_PARAMS, |_, _| StandardNormal.sample(&mut rng));
        let theta = InertialParams::from_slice((&mean + &root * z).as_slice())?;
        if theta.is_consistent() {
            out.push(theta);
        } else if draws >= 100 && out.len() * 100 < draws {
            return Err(Error::Config(format!(
                "payload prior rejects {} of {draws} draws; check the covariance",
                draws - out.len()
            )));
        }
    }
    Ok(out)
}

/// Metrics of one rollout of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub controller: ControllerKind,
    pub sample: usize,
    /// Tip distance to the target at `t = T` [m]; infinite when diverged.
    pub final_pose_error: f64,
    /// Relative error of (m, c_x, c_y, I) of the initial guess.
    pub initial_error: [f64; BODY_PARAMS],
    /// Relative error of (m, c_x, c_y, I) of the final estimate.
    pub final_error: [f64; BODY_PARAMS],
    /// `100 (1 - final/initial)` per parameter, 0 where the initial error is 0.
    pub improvement: [f64; BODY_PARAMS],
    pub diverged: bool,
    /// Seconds spent in the rollout.
    pub wall_time: f64,
}

/// Reference produced by one method (and controller, for closed-loop methods).
#[derive(Clone, Debug)]
pub struct MethodDesign {
    pub method: Method,
    /// `None` for references shared by all controllers.
    pub controller: Option<ControllerKind>,
    pub design: Vec<f64>,
    pub objective: f64,
    /// `tr(I)` at the prior mean with the frozen loop.
    pub fisher_trace: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentResults {
    pub rows: Vec<ResultRow>,
    pub designs: Vec<MethodDesign>,
    pub payloads: Vec<InertialParams>,
}

impl ExperimentResults {
    pub fn design_for(&self, method: Method, controller: ControllerKind) -> Option<&MethodDesign> {
        self.designs
            .iter()
            .find(|d| d.method == method && d.controller.map_or(true, |c| c == controller))
    }

    /// Median final pose error of one grid column.
    pub fn median_pose_error(&self, method: Method, controller: ControllerKind) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.controller == controller)
            .map(|r| r.final_pose_error)
            .collect();
        (!v.is_empty()).then(|| report::quantile(&v, 0.5))
    }
}

/// Relative errors of (m, c_x, c_y, I_com) of `estimate` with respect to `truth`.
pub fn relative_errors(estimate: &[f64], truth: &InertialParams) -> [f64; BODY_PARAMS] {
    let describe = |p: &[f64]| -> [f64; BODY_PARAMS] {
        let m = p[0];
        let c = [p[1] / m, p[2] / m];
        [m, c[0], c[1], p[3] - m * (c[0] * c[0] + c[1] * c[1])]
    };
    let est = describe(estimate);
    let tru = describe(&truth.to_array());
    let mut out = [0.0; BODY_PARAMS];
    for i in 0..BODY_PARAMS {
        let d = (est[i] - tru[i]).abs();
        out[i] = if tru[i] == 0.0 { d } else { d / tru[i].abs() };
    }
    out
}

pub fn improvement(initial: f64, last: f64) -> f64 {
    if initial == 0.0 {
        0.0
    } else {
        100.0 * (1.0 - last / initial)
    }
}

fn noise_seed(seed: u64, sample: usize, controller: ControllerKind) -> u64 {
    let tag = ControllerKind::BENCH.iter().position(|&c| c == controller).unwrap_or(3) as u64;
    let mut z = seed ^ (sample as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (tag + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Planning context of a controller as the benchmark runs it.
pub fn controller_context(cfg: &ExperimentConfig, controller: ControllerKind) -> Result<PlanningContext> {
    cfg.context(controller, controller != ControllerKind::CtcFixed)
}

fn fisher_trace(ctx: &PlanningContext, d: &[f64]) -> Result<f64> {
    let log = ctx.rollout(d, &ctx.prior_mean)?;
    if log.is_diverged() {
        return Ok(f64::NAN);
    }
    Ok(fisher_information(&log, &ctx.fisher_noise)?.trace())
}

/// Generates one reference with `method`; `nominal` seeds the closed-loop methods.
pub fn plan_method(
    cfg: &ExperimentConfig,
    method: Method,
    controller: Option<ControllerKind>,
    nominal: Option<&[f64]>,
) -> Result<MethodDesign> {
    let start = Instant::now();
    let plan_ctx = cfg.context(ControllerKind::CtcFixed, false)?;
    let ctx = match controller {
        Some(c) if method.per_controller() => controller_context(cfg, c)?,
        _ => plan_ctx.clone(),
    };
    let theta_bar = cfg.payload();
    let n_design = ctx.design_len();
    let opt = cfg.optimizer(method, n_design);
    let straight = ctx.initial_design().as_slice().to_vec();
    let warm = match nominal {
        Some(d) => d.to_vec(),
        None if method.per_controller() => plan_method(cfg, Method::Nominal, None, None)?.design,
        None => straight.clone(),
    };
    let finite = |v: Result<f64>| v.ok().filter(|x| x.is_finite()).unwrap_or(f64::NAN);
    let res = match method {
        Method::Nominal => optimize(|d: &[f64]| finite(j_nominal(d, &ctx)), &straight, &opt)?,
        Method::Fim => {
            let w = cfg.methods.fim_weight;
            optimize(|d: &[f64]| finite(j_fim(d, &theta_bar, w, &ctx)), &straight, &opt)?
        }
        Method::Ro => {
            let gmm = build_gmm(
                &theta_bar.to_vector(),
                &cfg.prior_covariance(),
                cfg.methods.gmm_components,
                cfg.methods.gmm_strategy,
            )?;
            optimize(|d: &[f64]| finite(j_dual1(d, &gmm, &ctx)), &warm, &opt)?
        }
        Method::Ol => {
            let gmm = build_gmm(
                &theta_bar.to_vector(),
                &cfg.prior_covariance(),
                cfg.methods.gmm_components,
                cfg.methods.gmm_strategy,
            )?;
            let olm = optimality_loss_model_at(&warm, &theta_bar, &ctx, cfg.methods.hessian_step)?;
            optimize(|d: &[f64]| finite(j_dual2(d, &gmm, &olm, &ctx)), &warm, &opt)?
        }
    };
    let design = res.design.as_slice().to_vec();
    Ok(MethodDesign {
        method,
        controller: controller.filter(|_| method.per_controller()),
        fisher_trace: fisher_trace(&plan_ctx, &design)?,
        design,
        objective: res.value,
        iterations: res.iterations,
        converged: res.converged,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Runs one grid cell: a noisy rollout of `design` on the true `payload`.
pub fn evaluate(
    cfg: &ExperimentConfig,
    method: Method,
    controller: ControllerKind,
    sample: usize,
    payload: &InertialParams,
    design: &[f64],
) -> Result<ResultRow> {
    let start = Instant::now();
    let ctx = controller_context(cfg, controller)?;
    let traj: BSplineTrajectory = ctx.trajectory(design)?;
    let mut sim = ctx.sim.clone();
    if controller == ControllerKind::CtcRls {
        let n = ctx.model.n_links();
        sim.measurement_noise = Some(DMatrix::identity(n, n) * cfg.controller.noise_std.powi(2));
    }
    sim.seed = noise_seed(cfg.seed, sample, controller);
    let log = ClosedLoop::new(&ctx.model, &ctx.gains, &traj, &sim)?.rollout(payload, &ctx.prior_mean)?;
    let prior = ctx.prior_mean.to_array();
    let initial_error = relative_errors(&prior, payload);
    let last = log.len() - 1;
    let diverged = log.is_diverged();
    let (final_pose_error, final_error) = if diverged {
        (f64::INFINITY, [f64::NAN; BODY_PARAMS])
    } else {
        let q = DVector::from_column_slice(log.q(last));
        let tip = ee_position(&ctx.model, &q)?;
        let err = ((tip[0] - cfg.task.target[0]).powi(2) + (tip[1] - cfg.task.target[1]).powi(2)).sqrt();
        (err, relative_errors(log.theta_hat(last), payload))
    };
    let mut imp = [0.0; BODY_PARAMS];
    for i in 0..BODY_PARAMS {
        imp[i] = improvement(initial_error[i], final_error[i]);
    }
    Ok(ResultRow {
        method,
        controller,
        sample,
        final_pose_error,
        initial_error,
        final_error,
        improvement: imp,
        diverged,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Full benchmark; `progress` receives one line per finished stage.
pub fn run_experiment_with(cfg: &ExperimentConfig, progress: &mut dyn FnMut(&str)) -> Result<ExperimentResults> {
    cfg.validate()?;
    let payloads = sample_payloads(&cfg.payload(), &cfg.prior_covariance(), cfg.payload.n_samples, cfg.seed)?;
    let mut methods = cfg.methods.methods.clone();
    methods.sort();
    methods.dedup();
    let mut controllers = cfg.methods.controllers.clone();
    controllers.sort_by_key(|c| c.label());
    controllers.dedup();

    let mut designs: Vec<MethodDesign> = Vec::new();
    let mut failed: Vec<(Method, Option<ControllerKind>)> = Vec::new();
    let mut record = |planned: Result<MethodDesign>, method: Method, controller: Option<ControllerKind>, designs: &mut Vec<MethodDesign>| {
        let who = match controller {
            Some(c) => format!("{method}/{c}"),
            None => method.to_string(),
        };
        match planned {
            Ok(d) => {
                progress(&format!(
                    "{who}: objective {:.6e}, tr(I) {:.6e}, {} iterations ({:.1} s)",
                    d.objective, d.fisher_trace, d.iterations, d.wall_time
                ));
                designs.push(d);
            }
            Err(e) => {
                progress(&format!("{who}: planning failed ({e}); its rows are marked diverged"));
                failed.push((method, controller));
            }
        }
    };
    let needs_nominal = methods.iter().any(|m| m.per_controller());
    let nominal = if methods.contains(&Method::Nominal) || needs_nominal {
        plan_method(cfg, Method::Nominal, None, None).ok()
    } else {
        None
    };
    for &method in &methods {
        match method {
            Method::Nominal => {
                let planned = nominal
                    .clone()
                    .ok_or_else(|| Error::Optimization("nominal planning failed".into()));
                record(planned, method, None, &mut designs);
            }
            Method::Fim => record(plan_method(cfg, method, None, None), method, None, &mut designs),
            Method::Ro | Method::Ol => {
                let Some(warm) = nominal.as_ref() else {
                    for &c in &controllers {
                        record(Err(Error::Optimization("no nominal warm start".into())), method, Some(c), &mut designs);
                    }
                    continue;
                };
                for &c in &controllers {
                    record(plan_method(cfg, method, Some(c), Some(&warm.design)), method, Some(c), &mut designs);
                }
            }
        }
    }

    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    for &method in &methods {
        for &c in &controllers {
            let design = designs
                .iter()
                .find(|d| d.method == method && d.controller.map_or(true, |k| k == c));
            for (i, p) in payloads.iter().enumerate() {
                match design {
                    Some(d) => cells.push((method, c, i, p, d.design.as_slice())),
                    None => skipped.push(unplanned_row(cfg, method, c, i, p)),
                }
            }
        }
    }
    let mut rows = run_cells(cfg, &cells)?;
    progress(&format!("evaluated {} rollouts", rows.len()));
    rows.extend(skipped);
    sort_rows(&mut rows);
    Ok(ExperimentResults { rows, designs, payloads })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    run_experiment_with(cfg, &mut |_| {})
}

type Cell<'a> = (Method, ControllerKind, usize, &'a InertialParams, &'a [f64]);

/// Evaluates grid cells on all available cores and sorts the rows.
fn run_cells(cfg: &ExperimentConfig, cells: &[Cell<'_>]) -> Result<Vec<ResultRow>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(cells.len()).max(1);
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Result<ResultRow>>> = Mutex::new(Vec::with_capacity(cells.len()));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(m, c, s, p, d)) = cells.get(i) else { break };
                let row = evaluate(cfg, m, c, s, p, d);
                out.lock().expect("no worker panics").push(row);
            });
        }
    });
    let mut rows = out.into_inner().expect("no worker panics").into_iter().collect::<Result<Vec<_>>>()?;
    sort_rows(&mut rows);
    Ok(rows)
}

fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| (a.method, a.controller.label(), a.sample).cmp(&(b.method, b.controller.label(), b.sample)));
}

/// Row of a grid cell whose reference could not be generated.
fn unplanned_row(cfg: &ExperimentConfig, method: Method, controller: ControllerKind, sample: usize, payload: &InertialParams) -> ResultRow {
    let initial_error = relative_errors(&cfg.payload().to_array(), payload);
    ResultRow {
        method,
        controller,
        sample,
        final_pose_error: f64::INFINITY,
        initial_error,
        final_error: [f64::NAN; BODY_PARAMS],
        improvement: [f64::NAN; BODY_PARAMS],
        diverged: true,
        wall_time: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_covariance_returns_nominal() {
        let p = ExperimentConfig::default().payload();
        let s = sample_payloads(&p, &DMatrix::zeros(4, 4), 5, 1).unwrap();
        assert!(s.iter().all(|x| *x == p));
    }

    #[test]
    fn samples_are_consistent_and_centred() {
        let cfg = ExperimentConfig::default();
        let cov = cfg.prior_covariance() * 0.04;
        let n = 400;
        let s = sample_payloads(&cfg.payload(), &cov, n, 11).unwrap();
        assert!(s.iter().all(InertialParams::is_consistent));
        let nominal = cfg.payload().to_array();
        for j in 0..BODY_PARAMS {
            let mean = s.iter().map(|p| p.to_array()[j]).sum::<f64>() / n as f64;
            let sd = cov[(j, j)].sqrt();
            assert!((mean - nominal[j]).abs() < 3.0 * sd / (n as f64).sqrt(), "coordinate {j}");
        }
    }

    #[test]
    fn hopeless_prior_is_reported() {
        // mass centred at -1 kg is almost never consistent
        let p = InertialParams::new(-1.0, [0.0, 0.0], 0.1);
        let cov = DMatrix::identity(4, 4) * 1e-4;
        assert!(matches!(sample_payloads(&p, &cov, 3, 0), Err(Error::Config(_))));
    }

    #[test]
    fn relative_errors_of_truth_vanish() {
        let p = ExperimentConfig::default().payload();
        assert!(relative_errors(&p.to_array(), &p).iter().all(|&e| e.abs() < 1e-12));
        assert_eq!(improvement(0.0, 0.3), 0.0);
        assert_eq!(improvement(0.2, 0.1), 50.0);
        assert!(improvement(0.1, 0.2) < 0.0);
    }

    #[test]
    fn noise_seeds_differ_by_cell() {
        let a = noise_seed(1, 0, ControllerKind::CtcRls);
        assert_ne!(a, noise_seed(1, 1, ControllerKind::CtcRls));
        assert_ne!(a, noise_seed(1, 0, ControllerKind::Nac));
        assert_ne!(a, noise_seed(2, 0, ControllerKind::CtcRls));
    }
}
