//! Parameter priors as Gaussian mixtures and first-order moment propagation
//! through a closed loop.
//!
//! A [`MomentSystem`] is any fixed-step closed loop `d xi/dt = g(t, xi, theta)`
//! with optional discrete estimator jumps and a policy output `u = pi(t, xi)`.
//! [`propagate_moments`] returns the mean of `xi` at the prior mean and the
//! first-order joint covariance of `(xi, u, theta)` at every grid point.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::InertialParams;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{min_eigenvalue, symmetrize};
use crate::simloop::{is_divergence, ClosedLoop};

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    pub components: Vec<MixtureComponent>,
}

impl GaussianMixture {
    /// Validates weights and shapes; component covariances may be singular.
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or(Error::Config("a mixture needs at least one component".into()))?;
        let dim = first.mean.len();
        let mut total = 0.0;
        for c in &components {
            check_dim("component mean", dim, c.mean.len())?;
            check_dim("component covariance", dim, c.covariance.nrows())?;
            check_dim("component covariance", dim, c.covariance.ncols())?;
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(Error::Config("mixture weights must be positive".into()));
            }
            if (&c.covariance - c.covariance.transpose()).amax() > 1e-12 * (1.0 + c.covariance.amax()) {
                return Err(Error::Config("component covariance is not symmetric".into()));
            }
            if min_eigenvalue(&c.covariance) < -1e-12 * (1.0 + c.covariance.amax()) {
                return Err(Error::NotPositiveDefinite("component covariance"));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("mixture weights sum to {total}")));
        }
        Ok(Self { components })
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.components
            .iter()
            .fold(DVector::zeros(self.dim()), |acc, c| acc + &c.mean * c.weight)
    }

    /// Law of total covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let cov = self.components.iter().fold(DMatrix::zeros(self.dim(), self.dim()), |acc, c| {
            let d = &c.mean - &mu;
            acc + (&c.covariance + &d * d.transpose()) * c.weight
        });
        symmetrize(&cov)
    }

    /// `E[x^T A x + b^T x + c]` as the weighted sum of per-component expectations.
    pub fn expect_quadratic(&self, a: &DMatrix<f64>, b: &DVector<f64>, c: f64) -> f64 {
        self.components
            .iter()
            .map(|k| k.weight * ((a * &k.covariance).trace() + k.mean.dot(&(a * &k.mean)) + b.dot(&k.mean) + c))
            .sum()
    }

    /// Draws one sample.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = &self.components[self.len() - 1];
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        let root = psd_root(&chosen.covariance);
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &chosen.mean + root * z
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GmmStrategy {
    Single,
    Sigma,
}

/// Splits `N(mean, cov)` into a mixture of narrower Gaussians.
///
/// The sigma strategy takes `n_components = 2k + 1` (`k <= dim`): one component
/// at the mean and pairs at `mean ± sqrt(k) L_j` for the `k` Cholesky columns of
/// largest norm, all with weight `1/n_components`. Component covariances are
/// `cov - (1 - 1/n_components) sum_j L_j L_j^T`, which reduces to
/// `cov / n_components` when all columns are used. Mean and covariance of the
/// mixture match the target exactly for every `k`.
pub fn build_gmm(mean: &DVector<f64>, cov: &DMatrix<f64>, n_components: usize, strategy: GmmStrategy) -> Result<GaussianMixture> {
    let dim = mean.len();
    check_dim("prior covariance", dim, cov.nrows())?;
    check_dim("prior covariance", dim, cov.ncols())?;
    if n_components == 0 {
        return Err(Error::Config("n_components must be at least 1".into()));
    }
    let chol = symmetrize(cov)
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("prior covariance"))?;
    if n_components == 1 {
        return GaussianMixture::new(vec![MixtureComponent {
            weight: 1.0,
            mean: mean.clone(),
            covariance: cov.clone(),
        }]);
    }
    match strategy {
        GmmStrategy::Single => Err(Error::Config("the single strategy has exactly one component".into())),
        GmmStrategy::Sigma => {
            if n_components % 2 == 0 || (n_components - 1) / 2 > dim {
                return Err(Error::Config(format!(
                    "sigma mixtures need 2k+1 components with k <= {dim}, got {n_components}"
                )));
            }
            let k = (n_components - 1) / 2;
            let l = chol.l();
            let mut order: Vec<usize> = (0..dim).collect();
            order.sort_by(|&a, &b| l.column(b).norm().total_cmp(&l.column(a).norm()).then(a.cmp(&b)));
            let kappa = n_components as f64;
            let mut used = DMatrix::zeros(dim, dim);
            for &j in &order[..k] {
                used += l.column(j) * l.column(j).transpose();
            }
            let comp_cov = symmetrize(&(cov - used * (1.0 - 1.0 / kappa)));
            let scale = (k as f64).sqrt();
            let weight = 1.0 / kappa;
            let mut components = vec![MixtureComponent {
                weight,
                mean: mean.clone(),
                covariance: comp_cov.clone(),
            }];
            for &j in &order[..k] {
                for sign in [1.0, -1.0] {
                    components.push(MixtureComponent {
                        weight,
                        mean: mean + l.column(j) * (sign * scale),
                        covariance: comp_cov.clone(),
                    });
                }
            }
            // Equal weights of 1/kappa need not sum to 1 bit-exactly.
            let total: f64 = components.iter().map(|c| c.weight).sum();
            if let Some(c) = components.first_mut() {
                c.weight += 1.0 - total;
            }
            GaussianMixture::new(components)
        }
    }
}

/// Symmetric square root factor `V sqrt(max(Lambda, 0))` of a PSD matrix.
pub(crate) fn psd_root(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut v = eig.eigenvectors;
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        v.column_mut(j).scale_mut(s);
    }
    v
}

/// A fixed-step closed loop suitable for moment propagation.
pub trait MomentSystem {
    /// Length of the augmented state `xi`.
    fn n_state(&self) -> usize;
    /// Leading entries of `xi` that form the plant state `x`.
    fn n_plant(&self) -> usize;
    fn n_input(&self) -> usize;
    fn n_params(&self) -> usize;
    fn n_steps(&self) -> usize;
    fn time(&self, k: usize) -> f64;
    fn initial_state(&self) -> Result<DVector<f64>>;
    fn derivative(&self, t: f64, xi: &[f64], theta: &[f64], out: &mut [f64]) -> Result<()>;
    fn input(&self, t: f64, xi: &[f64]) -> Result<DVector<f64>>;
    fn jumps_at(&self, _k: usize) -> bool {
        false
    }
    fn jump(&self, _t: f64, _xi: &mut [f64], _theta: &[f64]) -> Result<()> {
        Ok(())
    }
    fn divergence_bound(&self) -> f64 {
        1e6
    }

    /// RK4 step from grid point `k`; also returns the input at the start of the step.
    fn step(&self, k: usize, xi: &DVector<f64>, theta: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        let t = self.time(k);
        let h = self.time(k + 1) - t;
        let rate = |t: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
            let mut out = DVector::zeros(x.len());
            self.derivative(t, x.as_slice(), theta, out.as_mut_slice())?;
            Ok(out)
        };
        let k1 = rate(t, xi)?;
        let k2 = rate(t + 0.5 * h, &(xi + &k1 * (0.5 * h)))?;
        let k3 = rate(t + 0.5 * h, &(xi + &k2 * (0.5 * h)))?;
        let k4 = rate(t + h, &(xi + &k3 * h))?;
        let next = xi + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        Ok((next, self.input(t, xi.as_slice())?))
    }
}

/// A payload closed loop started from a fixed prior estimate.
pub struct PayloadLoop<'a> {
    pub closed_loop: ClosedLoop<'a>,
    pub prior: InertialParams,
}

impl MomentSystem for PayloadLoop<'_> {
    fn n_state(&self) -> usize {
        self.closed_loop.n_state()
    }
    fn n_plant(&self) -> usize {
        2 * self.closed_loop.n_joints()
    }
    fn n_input(&self) -> usize {
        self.closed_loop.n_joints()
    }
    fn n_params(&self) -> usize {
        crate::dynamics::BODY_PARAMS
    }
    fn n_steps(&self) -> usize {
        self.closed_loop.n_steps()
    }
    fn time(&self, k: usize) -> f64 {
        self.closed_loop.time(k)
    }
    fn initial_state(&self) -> Result<DVector<f64>> {
        self.closed_loop.initial_state(&self.prior)
    }
    fn derivative(&self, t: f64, xi: &[f64], theta: &[f64], out: &mut [f64]) -> Result<()> {
        self.closed_loop.derivative(t, xi, theta, out).map(|_| ())
    }
    fn input(&self, t: f64, xi: &[f64]) -> Result<DVector<f64>> {
        self.closed_loop.policy(t, xi)
    }
    fn jumps_at(&self, k: usize) -> bool {
        self.closed_loop.jumps_at(k)
    }
    fn jump(&self, t: f64, xi: &mut [f64], theta: &[f64]) -> Result<()> {
        self.closed_loop.jump(t, xi, theta, None)
    }
    fn divergence_bound(&self) -> f64 {
        self.closed_loop.cfg.divergence_bound
    }
    fn step(&self, k: usize, xi: &DVector<f64>, theta: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        self.closed_loop.step(k, xi, theta).map(|(next, info)| (next, info.tau))
    }
}

/// States and inputs of one deterministic simulation of a [`MomentSystem`].
#[derive(Clone, Debug)]
pub struct SampledPath {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub inputs: Vec<f64>,
    pub divergence: Option<f64>,
}

fn diverged(x: &DVector<f64>, bound: f64) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > bound)
}

/// Simulates `system` for the parameter value `theta`.
pub fn simulate(system: &dyn MomentSystem, theta: &[f64]) -> Result<SampledPath> {
    let n_steps = system.n_steps();
    let mut path = SampledPath {
        times: Vec::with_capacity(n_steps + 1),
        states: Vec::with_capacity((n_steps + 1) * system.n_state()),
        inputs: Vec::with_capacity((n_steps + 1) * system.n_input()),
        divergence: None,
    };
    let mut xi = system.initial_state()?;
    for k in 0..=n_steps {
        let t = system.time(k);
        let fail = |e: Error, mut path: SampledPath| {
            if is_divergence(&e) {
                path.divergence = Some(t);
                Ok(path)
            } else {
                Err(e)
            }
        };
        if system.jumps_at(k) {
            if let Err(e) = system.jump(t, xi.as_mut_slice(), theta) {
                return fail(e, path);
            }
        }
        let (next, u) = if k < n_steps {
            match system.step(k, &xi, theta) {
                Ok((next, u)) => (Some(next), u),
                Err(e) => return fail(e, path),
            }
        } else {
            match system.input(t, xi.as_slice()) {
                Ok(u) => (None, u),
                Err(e) => return fail(e, path),
            }
        };
        path.times.push(t);
        path.states.extend_from_slice(xi.as_slice());
        path.inputs.extend_from_slice(u.as_slice());
        if let Some(next) = next {
            if diverged(&next, system.divergence_bound()) {
                path.divergence = Some(system.time(k + 1));
                return Ok(path);
            }
            xi = next;
        }
    }
    Ok(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentMethod {
    /// Covariance ODE with finite-difference Jacobians along the mean, plus
    /// discrete jump maps for estimator updates.
    Linearized,
    /// Finite differences of whole rollouts along the principal directions of `Q`.
    Sensitivity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentConfig {
    pub method: MomentMethod,
    /// Relative finite-difference step (Jacobians) or step in prior standard
    /// deviations (sensitivities).
    pub fd_step: f64,
}

impl Default for MomentConfig {
    fn default() -> Self {
        Self {
            method: MomentMethod::Sensitivity,
            fd_step: 1e-3,
        }
    }
}

impl MomentConfig {
    pub fn linearized() -> Self {
        Self {
            method: MomentMethod::Linearized,
            fd_step: 1e-6,
        }
    }
}

/// Mean and joint covariance of `(xi, u, theta)` on the rollout grid.
#[derive(Clone, Debug)]
pub struct MomentTrajectory {
    pub n_state: usize,
    pub n_plant: usize,
    pub n_input: usize,
    pub n_params: usize,
    pub times: Vec<f64>,
    mean_state: Vec<f64>,
    mean_input: Vec<f64>,
    covariance: Vec<DMatrix<f64>>,
    pub divergence: Option<f64>,
    pub duration: f64,
}

impl MomentTrajectory {
    fn new(system: &dyn MomentSystem) -> Self {
        Self {
            n_state: system.n_state(),
            n_plant: system.n_plant(),
            n_input: system.n_input(),
            n_params: system.n_params(),
            times: Vec::new(),
            mean_state: Vec::new(),
            mean_input: Vec::new(),
            covariance: Vec::new(),
            divergence: None,
            duration: system.time(system.n_steps()),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn mean_state(&self, k: usize) -> &[f64] {
        &self.mean_state[k * self.n_state..(k + 1) * self.n_state]
    }

    pub fn mean_input(&self, k: usize) -> &[f64] {
        &self.mean_input[k * self.n_input..(k + 1) * self.n_input]
    }

    /// Full covariance of `(xi, u, theta)` at sample `k`.
    pub fn covariance(&self, k: usize) -> &DMatrix<f64> {
        &self.covariance[k]
    }

    pub fn sigma_state(&self, k: usize) -> DMatrix<f64> {
        self.covariance[k].view((0, 0), (self.n_state, self.n_state)).into_owned()
    }

    pub fn sigma_plant(&self, k: usize) -> DMatrix<f64> {
        self.covariance[k].view((0, 0), (self.n_plant, self.n_plant)).into_owned()
    }

    /// Covariance of `(x, u)`.
    pub fn sigma_plant_input(&self, k: usize) -> DMatrix<f64> {
        let (np, nx, nu) = (self.n_plant, self.n_state, self.n_input);
        let c = &self.covariance[k];
        DMatrix::from_fn(np + nu, np + nu, |i, j| {
            let ri = if i < np { i } else { nx + i - np };
            let rj = if j < np { j } else { nx + j - np };
            c[(ri, rj)]
        })
    }

    pub fn sigma_state_params(&self, k: usize) -> DMatrix<f64> {
        let off = self.n_state + self.n_input;
        self.covariance[k].view((0, off), (self.n_state, self.n_params)).into_owned()
    }

    pub fn sigma_params(&self, k: usize) -> DMatrix<f64> {
        let off = self.n_state + self.n_input;
        self.covariance[k].view((off, off), (self.n_params, self.n_params)).into_owned()
    }

    fn push(&mut self, t: f64, xi: &[f64], u: &[f64], cov: DMatrix<f64>) {
        self.times.push(t);
        self.mean_state.extend_from_slice(xi);
        self.mean_input.extend_from_slice(u);
        self.covariance.push(cov);
    }

    /// Mean state and per-coordinate standard deviation of `xi`, one row per sample.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        header.extend((0..self.n_state).map(|i| format!("mean{i}")));
        header.extend((0..self.n_state).map(|i| format!("std{i}")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![self.times[k].to_string()];
            row.extend(self.mean_state(k).iter().map(|v| v.to_string()));
            row.extend((0..self.n_state).map(|i| self.covariance[k][(i, i)].max(0.0).sqrt().to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// First-order moments of the closed loop for `theta ~ N(theta_mean, q)`.
pub fn propagate_moments(
    system: &dyn MomentSystem,
    theta_mean: &DVector<f64>,
    q: &DMatrix<f64>,
    cfg: &MomentConfig,
) -> Result<MomentTrajectory> {
    let p = system.n_params();
    check_dim("parameter mean", p, theta_mean.len())?;
    check_dim("parameter covariance", p, q.nrows())?;
    check_dim("parameter covariance", p, q.ncols())?;
    if min_eigenvalue(q) < -1e-12 * (1.0 + q.amax()) {
        return Err(Error::NotPositiveDefinite("parameter covariance"));
    }
    if !(cfg.fd_step.is_finite() && cfg.fd_step > 0.0) {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    match cfg.method {
        MomentMethod::Linearized => propagate_linearized(system, theta_mean, q, cfg.fd_step),
        MomentMethod::Sensitivity => propagate_sensitivity(system, theta_mean, q, cfg.fd_step),
    }
}

/// `G = [[d g/d xi, d g/d theta], [0, 0]]` by central differences.
fn closed_loop_jacobian(
    system: &dyn MomentSystem,
    t: f64,
    xi: &DVector<f64>,
    theta: &DVector<f64>,
    rel: f64,
) -> Result<DMatrix<f64>> {
    let (nx, p) = (xi.len(), theta.len());
    let mut g = DMatrix::zeros(nx + p, nx + p);
    let mut fp = vec![0.0; nx];
    let mut fm = vec![0.0; nx];
    let mut xp = xi.clone();
    let mut tp = theta.clone();
    for j in 0..nx + p {
        let (value, delta) = if j < nx {
            (xi[j], rel * (1.0 + xi[j].abs()))
        } else {
            (theta[j - nx], rel * (1.0 + theta[j - nx].abs()))
        };
        let set = |xp: &mut DVector<f64>, tp: &mut DVector<f64>, v: f64| {
            if j < nx {
                xp[j] = v;
            } else {
                tp[j - nx] = v;
            }
        };
        set(&mut xp, &mut tp, value + delta);
        system.derivative(t, xp.as_slice(), tp.as_slice(), &mut fp)?;
        set(&mut xp, &mut tp, value - delta);
        system.derivative(t, xp.as_slice(), tp.as_slice(), &mut fm)?;
        set(&mut xp, &mut tp, value);
        for i in 0..nx {
            g[(i, j)] = (fp[i] - fm[i]) / (2.0 * delta);
        }
    }
    Ok(g)
}

/// Jacobian of the jump map in `(xi, theta)` coordinates, padded with identity rows for `theta`.
fn jump_jacobian(system: &dyn MomentSystem, t: f64, xi: &DVector<f64>, theta: &DVector<f64>, rel: f64) -> Result<DMatrix<f64>> {
    let (nx, p) = (xi.len(), theta.len());
    let mut jac = DMatrix::identity(nx + p, nx + p);
    for j in 0..nx + p {
        let mut xp = xi.clone();
        let mut xm = xi.clone();
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        let delta;
        if j < nx {
            delta = rel * (1.0 + xi[j].abs());
            xp[j] += delta;
            xm[j] -= delta;
        } else {
            delta = rel * (1.0 + theta[j - nx].abs());
            tp[j - nx] += delta;
            tm[j - nx] -= delta;
        }
        system.jump(t, xp.as_mut_slice(), tp.as_slice())?;
        system.jump(t, xm.as_mut_slice(), tm.as_slice())?;
        for i in 0..nx {
            jac[(i, j)] = (xp[i] - xm[i]) / (2.0 * delta);
        }
    }
    Ok(jac)
}

/// Maps the covariance of `(xi, theta)` to that of `(xi, u, theta)` with `u = pi(t, xi)`.
fn with_input(system: &dyn MomentSystem, t: f64, xi: &DVector<f64>, sigma: &DMatrix<f64>, rel: f64) -> Result<DMatrix<f64>> {
    let (nx, nu) = (xi.len(), system.n_input());
    let nz = sigma.nrows();
    let p = nz - nx;
    let mut w = DMatrix::zeros(nx + nu + p, nz);
    for i in 0..nx {
        w[(i, i)] = 1.0;
    }
    for i in 0..p {
        w[(nx + nu + i, nx + i)] = 1.0;
    }
    let mut xp = xi.clone();
    for j in 0..nx {
        let delta = rel * (1.0 + xi[j].abs());
        xp[j] = xi[j] + delta;
        let up = system.input(t, xp.as_slice())?;
        xp[j] = xi[j] - delta;
        let um = system.input(t, xp.as_slice())?;
        xp[j] = xi[j];
        for i in 0..nu {
            w[(nx + i, j)] = (up[i] - um[i]) / (2.0 * delta);
        }
    }
    Ok(symmetrize(&(&w * sigma * w.transpose())))
}

fn propagate_linearized(system: &dyn MomentSystem, theta: &DVector<f64>, q: &DMatrix<f64>, rel: f64) -> Result<MomentTrajectory> {
    let nx = system.n_state();
    let p = theta.len();
    let nz = nx + p;
    let n_steps = system.n_steps();
    let mut out = MomentTrajectory::new(system);
    let mut mu = system.initial_state()?;
    let mut sigma = DMatrix::zeros(nz, nz);
    sigma.view_mut((nx, nx), (p, p)).copy_from(&symmetrize(q));
    let th = theta.as_slice();

    let run = |out: &mut MomentTrajectory, mu: &mut DVector<f64>, sigma: &mut DMatrix<f64>| -> Result<()> {
        let stage = |t: f64, m: &DVector<f64>, s: &DMatrix<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
            let mut f = DVector::zeros(nx);
            system.derivative(t, m.as_slice(), th, f.as_mut_slice())?;
            let g = closed_loop_jacobian(system, t, m, theta, rel)?;
            let gs = &g * s;
            Ok((f, &gs + gs.transpose()))
        };
        for k in 0..=n_steps {
            let t = system.time(k);
            if system.jumps_at(k) {
                let jac = jump_jacobian(system, t, mu, theta, rel)?;
                system.jump(t, mu.as_mut_slice(), th)?;
                *sigma = symmetrize(&(&jac * &*sigma * jac.transpose()));
            }
            let u = system.input(t, mu.as_slice())?;
            out.push(t, mu.as_slice(), u.as_slice(), with_input(system, t, mu, sigma, rel)?);
            if k == n_steps {
                break;
            }
            let h = system.time(k + 1) - t;
            let (f1, s1) = stage(t, mu, sigma)?;
            let (f2, s2) = stage(t + 0.5 * h, &(&*mu + &f1 * (0.5 * h)), &(&*sigma + &s1 * (0.5 * h)))?;
            let (f3, s3) = stage(t + 0.5 * h, &(&*mu + &f2 * (0.5 * h)), &(&*sigma + &s2 * (0.5 * h)))?;
            let (f4, s4) = stage(t + h, &(&*mu + &f3 * h), &(&*sigma + &s3 * h))?;
            let next = &*mu + (f1 + f2 * 2.0 + f3 * 2.0 + f4) * (h / 6.0);
            *sigma = symmetrize(&(&*sigma + (s1 + s2 * 2.0 + s3 * 2.0 + s4) * (h / 6.0)));
            if diverged(&next, system.divergence_bound()) {
                out.divergence = Some(system.time(k + 1));
                return Ok(());
            }
            *mu = next;
        }
        Ok(())
    };
    match run(&mut out, &mut mu, &mut sigma) {
        Ok(()) => Ok(out),
        Err(e) if is_divergence(&e) => {
            out.divergence = Some(out.times.last().copied().unwrap_or(0.0));
            Ok(out)
        }
        Err(e) => Err(e),
    }
}

fn propagate_sensitivity(system: &dyn MomentSystem, theta: &DVector<f64>, q: &DMatrix<f64>, eps: f64) -> Result<MomentTrajectory> {
    let (nx, nu, p) = (system.n_state(), system.n_input(), theta.len());
    let mut out = MomentTrajectory::new(system);
    let base = simulate(system, theta.as_slice())?;
    let eig = SymmetricEigen::new(symmetrize(q));
    let scale = eig.eigenvalues.amax();
    let mut directions = Vec::new();
    for j in 0..p {
        let lam = eig.eigenvalues[j];
        if lam > 1e-14 * scale && lam > 0.0 {
            directions.push(eig.eigenvectors.column(j) * lam.sqrt());
        }
    }
    let mut paths = Vec::with_capacity(directions.len());
    let mut divergence = base.divergence;
    for dir in &directions {
        let plus = simulate(system, (theta + dir * eps).as_slice())?;
        let minus = simulate(system, (theta - dir * eps).as_slice())?;
        for d in [plus.divergence, minus.divergence].into_iter().flatten() {
            divergence = Some(divergence.map_or(d, |b: f64| b.min(d)));
        }
        paths.push((plus, minus));
    }
    let n = paths
        .iter()
        .map(|(a, b)| a.times.len().min(b.times.len()))
        .fold(base.times.len(), usize::min);
    let nw = nx + nu + p;
    for k in 0..n {
        let mut cov = DMatrix::zeros(nw, nw);
        for (dir, (plus, minus)) in directions.iter().zip(&paths) {
            let mut col = DVector::zeros(nw);
            for i in 0..nx {
                col[i] = (plus.states[k * nx + i] - minus.states[k * nx + i]) / (2.0 * eps);
            }
            for i in 0..nu {
                col[nx + i] = (plus.inputs[k * nu + i] - minus.inputs[k * nu + i]) / (2.0 * eps);
            }
            col.rows_mut(nx + nu, p).copy_from(dir);
            cov += &col * col.transpose();
        }
        out.push(
            base.times[k],
            &base.states[k * nx..(k + 1) * nx],
            &base.inputs[k * nu..(k + 1) * nu],
            cov,
        );
    }
    out.divergence = divergence;
    Ok(out)
}
