//! Box-constrained minimization of scalar objectives over design vectors, and
//! the finite-difference derivatives the objectives need.
//!
//! Objectives are plain closures returning `f64`. Non-finite values mark
//! rejected points: line searches shrink past them and gradient stencils fall
//! back to one-sided differences.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::symmetrize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerMethod {
    GradientDescent,
    QuasiNewton,
    Evolutionary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub method: OptimizerMethod,
    pub max_iters: usize,
    /// Stop once an accepted step decreases the objective by less than this fraction.
    pub tolerance: f64,
    /// Stop once the projected gradient falls below this sup-norm.
    pub gradient_tolerance: f64,
    /// Finite-difference step relative to `1 + |d_j|`.
    pub fd_step: f64,
    /// Length (sup-norm) of the first trial step.
    pub initial_step: f64,
    pub seed: u64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// Offspring per generation of the evolutionary method.
    pub population: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: OptimizerMethod::QuasiNewton,
            max_iters: 200,
            tolerance: 1e-6,
            gradient_tolerance: 1e-8,
            fd_step: 1e-6,
            initial_step: 0.1,
            seed: 0,
            lower: None,
            upper: None,
            population: 12,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        for (what, v) in [
            ("tolerance", self.tolerance),
            ("gradient tolerance", self.gradient_tolerance),
            ("finite-difference step", self.fd_step),
            ("initial step", self.initial_step),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{what} must be positive")));
            }
        }
        if let (Some(lo), Some(hi)) = (&self.lower, &self.upper) {
            check_dim("lower bounds", n, lo.len())?;
            check_dim("upper bounds", n, hi.len())?;
            if lo.iter().zip(hi).any(|(a, b)| !(a <= b)) {
                return Err(Error::Config("bounds are not ordered".into()));
            }
        } else if self.lower.is_some() || self.upper.is_some() {
            return Err(Error::Config("bounds need both lower and upper vectors".into()));
        }
        if self.method == OptimizerMethod::Evolutionary && self.population < 2 {
            return Err(Error::Config("population must be at least 2".into()));
        }
        Ok(())
    }

    fn project(&self, x: &mut DVector<f64>) {
        if let (Some(lo), Some(hi)) = (&self.lower, &self.upper) {
            for i in 0..x.len() {
                x[i] = x[i].clamp(lo[i], hi[i]);
            }
        }
    }
}

/// One row of the optimization trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub iter: usize,
    /// Best objective value so far.
    pub value: f64,
    pub step_norm: f64,
    pub evaluations: usize,
    pub wall_time: f64,
    pub design: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub design: DVector<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub trace: Vec<TraceEntry>,
}

pub fn write_trace_csv(trace: &[TraceEntry], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "objective", "step_norm", "evaluations", "wall_time"])?;
    for e in trace {
        w.write_record([
            e.iter.to_string(),
            e.value.to_string(),
            e.step_norm.to_string(),
            e.evaluations.to_string(),
            e.wall_time.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Memoizes an objective on the exact bit pattern of its argument.
pub struct CachedObjective<F> {
    f: F,
    cache: HashMap<Vec<u64>, f64>,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> f64> CachedObjective<F> {
    pub fn new(f: F) -> Self {
        Self {
            f,
            cache: HashMap::new(),
            evaluations: 0,
        }
    }

    pub fn eval(&mut self, x: &[f64]) -> f64 {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(&v) = self.cache.get(&key) {
            return v;
        }
        self.evaluations += 1;
        let v = (self.f)(x);
        self.cache.insert(key, v);
        v
    }

    /// Number of distinct points evaluated.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }
}

#[derive(Clone, Debug)]
pub struct FdGradient {
    pub values: DVector<f64>,
    /// Coordinates where a non-finite neighbor forced a one-sided difference.
    pub one_sided: Vec<usize>,
}

/// Central-difference gradient with steps `rel · (1 + |d_j|)`.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, d: &[f64], rel: f64) -> Result<FdGradient> {
    let mut x = d.to_vec();
    let mut center = None;
    let mut values = DVector::zeros(d.len());
    let mut one_sided = Vec::new();
    for j in 0..d.len() {
        let h = rel * (1.0 + d[j].abs());
        x[j] = d[j] + h;
        let fp = f(&x);
        x[j] = d[j] - h;
        let fm = f(&x);
        x[j] = d[j];
        values[j] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * h),
            (a, b) if a || b => {
                let f0 = *center.get_or_insert_with(|| f(d));
                if !f64::is_finite(f0) {
                    return Err(Error::NonFinite("objective at the gradient point"));
                }
                one_sided.push(j);
                if a {
                    (fp - f0) / h
                } else {
                    (f0 - fm) / h
                }
            }
            _ => return Err(Error::NonFinite("objective on both sides of a gradient stencil")),
        };
    }
    Ok(FdGradient { values, one_sided })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HessianBlock {
    /// `d²J/dd²`.
    DesignDesign,
    /// `d²J/dd dtheta`.
    DesignParams,
}

#[derive(Clone, Debug)]
pub struct HessianEstimate {
    pub matrix: DMatrix<f64>,
    /// Entries whose stencil hit a non-finite value; they are set to zero.
    pub flagged: Vec<(usize, usize)>,
}

/// Second-order central stencils of `f(d, theta)` at the anchor, steps `rel · (1 + |value|)`.
///
/// The design block uses the symmetric four-point stencil for mixed entries, so
/// it is symmetric by construction.
pub fn fd_hessian_block<F: FnMut(&[f64], &[f64]) -> f64>(
    f: &mut F,
    d: &[f64],
    theta: &[f64],
    which: HessianBlock,
    rel: f64,
) -> HessianEstimate {
    let nd = d.len();
    let step = |v: f64| rel * (1.0 + v.abs());
    let mut flagged = Vec::new();
    let mut xd = d.to_vec();
    let mut xt = theta.to_vec();
    match which {
        HessianBlock::DesignDesign => {
            let mut h = DMatrix::zeros(nd, nd);
            let f0 = f(d, theta);
            for i in 0..nd {
                let hi = step(d[i]);
                xd[i] = d[i] + hi;
                let fp = f(&xd, theta);
                xd[i] = d[i] - hi;
                let fm = f(&xd, theta);
                xd[i] = d[i];
                h[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
                for j in 0..i {
                    let hj = step(d[j]);
                    let mut corner = |si: f64, sj: f64| {
                        xd[i] = d[i] + si * hi;
                        xd[j] = d[j] + sj * hj;
                        let v = f(&xd, theta);
                        xd[i] = d[i];
                        xd[j] = d[j];
                        v
                    };
                    let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * hi * hj);
                    h[(i, j)] = v;
                    h[(j, i)] = v;
                }
            }
            for i in 0..nd {
                for j in 0..=i {
                    if !h[(i, j)].is_finite() {
                        flagged.push((i, j));
                        h[(i, j)] = 0.0;
                        h[(j, i)] = 0.0;
                    }
                }
            }
            HessianEstimate {
                matrix: symmetrize(&h),
                flagged,
            }
        }
        HessianBlock::DesignParams => {
            let np = theta.len();
            let mut b = DMatrix::zeros(nd, np);
            for i in 0..nd {
                let hi = step(d[i]);
                for j in 0..np {
                    let hj = step(theta[j]);
                    let mut corner = |si: f64, sj: f64| {
                        xd[i] = d[i] + si * hi;
                        xt[j] = theta[j] + sj * hj;
                        let v = f(&xd, &xt);
                        xd[i] = d[i];
                        xt[j] = theta[j];
                        v
                    };
                    let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * hi * hj);
                    if v.is_finite() {
                        b[(i, j)] = v;
                    } else {
                        flagged.push((i, j));
                    }
                }
            }
            HessianEstimate { matrix: b, flagged }
        }
    }
}

/// Minimizes `objective` from `d0`; returns the best point found.
pub fn optimize<F: FnMut(&[f64]) -> f64>(objective: F, d0: &[f64], cfg: &OptimizerConfig) -> Result<OptimizeResult> {
    cfg.validate(d0.len())?;
    let mut f = CachedObjective::new(objective);
    let mut x = DVector::from_column_slice(d0);
    cfg.project(&mut x);
    let fx = f.eval(x.as_slice());
    if !fx.is_finite() {
        return Err(Error::Optimization("objective is not finite at the initial design".into()));
    }
    match cfg.method {
        OptimizerMethod::Evolutionary => evolutionary(&mut f, x, fx, cfg),
        _ => descent(&mut f, x, fx, cfg),
    }
}

struct Tracer {
    start: Instant,
    trace: Vec<TraceEntry>,
}

impl Tracer {
    fn push(&mut self, iter: usize, value: f64, step_norm: f64, evaluations: usize, x: &DVector<f64>) {
        self.trace.push(TraceEntry {
            iter,
            value,
            step_norm,
            evaluations,
            wall_time: self.start.elapsed().as_secs_f64(),
            design: x.as_slice().to_vec(),
        });
    }
}

fn projected_gradient_norm(g: &DVector<f64>, x: &DVector<f64>, cfg: &OptimizerConfig) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..g.len() {
        let blocked = match (&cfg.lower, &cfg.upper) {
            (Some(lo), Some(hi)) => (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0),
            _ => false,
        };
        if !blocked {
            m = m.max(g[i].abs());
        }
    }
    m
}

fn descent<F: FnMut(&[f64]) -> f64>(
    f: &mut CachedObjective<F>,
    mut x: DVector<f64>,
    mut fx: f64,
    cfg: &OptimizerConfig,
) -> Result<OptimizeResult> {
    let n = x.len();
    let quasi_newton = cfg.method == OptimizerMethod::QuasiNewton;
    let mut tracer = Tracer {
        start: Instant::now(),
        trace: Vec::new(),
    };
    tracer.push(0, fx, 0.0, f.evaluations(), &x);
    let mut hinv: Option<DMatrix<f64>> = None;
    let mut g = fd_gradient(&mut |d: &[f64]| f.eval(d), x.as_slice(), cfg.fd_step)?.values;
    let mut converged = false;
    let mut iterations = 0;
    let mut gd_scale = cfg.initial_step / g.amax().max(f64::MIN_POSITIVE);
    for iter in 1..=cfg.max_iters {
        iterations = iter;
        if projected_gradient_norm(&g, &x, cfg) <= cfg.gradient_tolerance {
            converged = true;
            break;
        }
        let mut accepted = None;
        for attempt in 0..2 {
            let p = match (&hinv, quasi_newton) {
                (Some(h), true) if attempt == 0 => -(h * &g),
                (_, true) => -&g * (cfg.initial_step / g.amax()),
                (_, false) => -&g * gd_scale,
            };
            if g.dot(&p) >= 0.0 {
                hinv = None;
                continue;
            }
            let mut alpha = 1.0;
            for _ in 0..40 {
                let mut trial = &x + &p * alpha;
                cfg.project(&mut trial);
                let ft = f.eval(trial.as_slice());
                if ft.is_finite() && ft <= fx + 1e-4 * g.dot(&(&trial - &x)) && trial != x {
                    accepted = Some((trial, ft, alpha));
                    break;
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
            if hinv.is_none() || !quasi_newton {
                break;
            }
            hinv = None;
        }
        let Some((x_new, f_new, alpha)) = accepted else {
            // no descent along the (finite-difference) gradient: stationary to working accuracy
            converged = true;
            break;
        };
        if !quasi_newton {
            gd_scale *= if alpha == 1.0 { 2.0 } else { alpha };
        }
        let g_new = fd_gradient(&mut |d: &[f64]| f.eval(d), x_new.as_slice(), cfg.fd_step)?.values;
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if quasi_newton && sy > 1e-12 * s.norm() * y.norm() {
            let h = hinv.take().unwrap_or_else(|| DMatrix::identity(n, n) * (sy / y.dot(&y)));
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            hinv = Some(symmetrize(&(left * h * right + &s * s.transpose() * rho)));
        }
        let decrease = (fx - f_new) / fx.abs().max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
        tracer.push(iter, fx, s.amax(), f.evaluations(), &x);
        if decrease < cfg.tolerance {
            converged = true;
            break;
        }
    }
    Ok(OptimizeResult {
        design: x,
        value: fx,
        converged,
        iterations,
        evaluations: f.evaluations(),
        trace: tracer.trace,
    })
}

/// Weighted-recombination evolution strategy with a success-based step size.
fn evolutionary<F: FnMut(&[f64]) -> f64>(
    f: &mut CachedObjective<F>,
    x0: DVector<f64>,
    f0: f64,
    cfg: &OptimizerConfig,
) -> Result<OptimizeResult> {
    let n = x0.len();
    let lambda = cfg.population;
    let mu = (lambda / 2).max(1);
    let raw: Vec<f64> = (0..mu).map(|i| ((mu as f64 + 0.5).ln() - ((i + 1) as f64).ln()).max(1e-12)).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tracer = Tracer {
        start: Instant::now(),
        trace: Vec::new(),
    };
    tracer.push(0, f0, 0.0, f.evaluations(), &x0);
    let (mut best, mut f_best) = (x0.clone(), f0);
    let mut mean = x0;
    let mut sigma = cfg.initial_step;
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=cfg.max_iters {
        iterations = iter;
        let mut offspring: Vec<(f64, DVector<f64>)> = (0..lambda)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                let mut x = &mean + z * sigma;
                cfg.project(&mut x);
                let v = f.eval(x.as_slice());
                (if v.is_finite() { v } else { f64::INFINITY }, x)
            })
            .collect();
        offspring.sort_by(|a, b| a.0.total_cmp(&b.0));
        let old_mean = mean.clone();
        mean = offspring[..mu]
            .iter()
            .zip(&weights)
            .fold(DVector::zeros(n), |acc, ((_, x), w)| acc + x * *w);
        let improved = offspring[0].0 < f_best;
        let previous = f_best;
        if improved {
            f_best = offspring[0].0;
            best = offspring[0].1.clone();
        }
        sigma *= if improved { 1.25 } else { 0.82 };
        tracer.push(iter, f_best, (&mean - &old_mean).amax(), f.evaluations(), &best);
        let rel = (previous - f_best) / previous.abs().max(1.0);
        if sigma < cfg.tolerance * cfg.initial_step || (improved && rel > 0.0 && rel < cfg.tolerance * 1e-3) {
            converged = true;
            break;
        }
    }
    Ok(OptimizeResult {
        design: best,
        value: f_best,
        converged,
        iterations,
        evaluations: f.evaluations(),
        trace: tracer.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n)
    }

    #[test]
    fn linear_and_constant_gradients() {
        let a = [1.5, -2.0, 0.25];
        let mut lin = |d: &[f64]| d.iter().zip(&a).map(|(x, y)| x * y).sum::<f64>();
        let g = fd_gradient(&mut lin, &[0.3, -1.0, 2.0], 1e-6).unwrap();
        for i in 0..3 {
            assert_relative_eq!(g.values[i], a[i], epsilon = 1e-9);
        }
        let mut c = |_: &[f64]| 4.2;
        assert_eq!(fd_gradient(&mut c, &[1.0, 2.0], 1e-6).unwrap().values.amax(), 0.0);
    }

    #[test]
    fn quadratic_gradient_is_hd() {
        let h = spd(5, 1);
        let d = DVector::from_vec(vec![0.3, -0.7, 1.1, 0.0, 2.0]);
        let mut f = |x: &[f64]| {
            let v = DVector::from_column_slice(x);
            0.5 * v.dot(&(&h * &v))
        };
        let g = fd_gradient(&mut f, d.as_slice(), 1e-5).unwrap();
        let exact = &h * &d;
        assert!((g.values - &exact).norm() <= 1e-8 * exact.norm());
    }

    #[test]
    fn one_sided_fallback_is_flagged() {
        let mut f = |x: &[f64]| if x[0] < 1.0 { f64::NAN } else { x[0] * x[0] + x[1] };
        let g = fd_gradient(&mut f, &[1.0, 3.0], 1e-7).unwrap();
        assert_eq!(g.one_sided, vec![0]);
        assert_relative_eq!(g.values[0], 2.0, epsilon = 1e-5);
        assert_relative_eq!(g.values[1], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn hessian_blocks_exact_on_quadratic_and_bilinear() {
        let h = spd(4, 2);
        let mut quad = |d: &[f64], _: &[f64]| {
            let v = DVector::from_column_slice(d);
            0.5 * v.dot(&(&h * &v))
        };
        let est = fd_hessian_block(&mut quad, &[0.2, -0.4, 1.0, 0.5], &[], HessianBlock::DesignDesign, 1e-4);
        assert!((&est.matrix - &h).amax() <= 1e-6 * h.amax());
        assert_eq!(est.matrix, est.matrix.transpose());

        let b = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 3.0, -1.5, 0.25]);
        let mut bil = |d: &[f64], t: &[f64]| (DVector::from_column_slice(d).transpose() * &b * DVector::from_column_slice(t))[0];
        let est = fd_hessian_block(&mut bil, &[0.1, 0.2, -0.3], &[2.0, -1.0], HessianBlock::DesignParams, 1e-4);
        assert!((&est.matrix - &b).amax() <= 1e-6);
    }

    #[test]
    fn cubic_hessian_matches_symbolic() {
        // f = x³ y + 2 x y² θ + θ² x
        let mut f = |d: &[f64], t: &[f64]| d[0].powi(3) * d[1] + 2.0 * d[0] * d[1] * d[1] * t[0] + t[0] * t[0] * d[0];
        let (x, y, th) = (0.7, -1.3, 0.4);
        let dd = fd_hessian_block(&mut f, &[x, y], &[th], HessianBlock::DesignDesign, 1e-4).matrix;
        let exact = DMatrix::from_row_slice(2, 2, &[6.0 * x * y, 3.0 * x * x + 4.0 * y * th, 3.0 * x * x + 4.0 * y * th, 4.0 * x * th]);
        assert!((&dd - &exact).amax() < 1e-4);
        let dt = fd_hessian_block(&mut f, &[x, y], &[th], HessianBlock::DesignParams, 1e-4).matrix;
        let exact = DMatrix::from_row_slice(2, 1, &[2.0 * y * y + 2.0 * th, 4.0 * x * y]);
        assert!((&dt - &exact).amax() < 1e-4);
    }

    #[test]
    fn quasi_newton_and_gradient_descent_find_quadratic_minimizer() {
        let target = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0]);
        let w = spd(6, 4);
        let obj = |d: &[f64]| {
            let e = DVector::from_column_slice(d) - &target;
            e.dot(&(&w * &e))
        };
        for method in [OptimizerMethod::QuasiNewton, OptimizerMethod::GradientDescent] {
            let cfg = OptimizerConfig {
                method,
                max_iters: 200,
                tolerance: 1e-14,
                ..OptimizerConfig::default()
            };
            let res = optimize(obj, &[0.0; 6], &cfg).unwrap();
            if method == OptimizerMethod::QuasiNewton {
                assert!((&res.design - &target).amax() < 1e-6, "{method:?}");
                assert!(res.iterations <= 200);
            }
            for w in res.trace.windows(2) {
                assert!(w[1].value <= w[0].value);
            }
        }
    }

    #[test]
    fn optimal_start_is_returned_unchanged() {
        let obj = |d: &[f64]| d.iter().map(|x| (x - 1.0).powi(2)).sum::<f64>();
        let res = optimize(obj, &[1.0, 1.0, 1.0], &OptimizerConfig::default()).unwrap();
        assert!(res.converged);
        assert!((res.design - DVector::from_element(3, 1.0)).amax() < 1e-12);
    }

    #[test]
    fn box_bounds_are_respected() {
        let obj = |d: &[f64]| (d[0] - 5.0).powi(2) + (d[1] + 5.0).powi(2);
        let cfg = OptimizerConfig {
            lower: Some(vec![-1.0, -1.0]),
            upper: Some(vec![1.0, 1.0]),
            ..OptimizerConfig::default()
        };
        let res = optimize(obj, &[0.0, 0.0], &cfg).unwrap();
        assert_relative_eq!(res.design[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(res.design[1], -1.0, epsilon = 1e-9);
        assert!(cfg.validate(3).is_err());
        let bad = OptimizerConfig {
            lower: Some(vec![1.0]),
            upper: Some(vec![0.0]),
            ..OptimizerConfig::default()
        };
        assert!(bad.validate(1).is_err());
    }

    #[test]
    fn evolutionary_is_seeded_and_improves() {
        let obj = |d: &[f64]| d.iter().map(|x| (x - 0.3).powi(2)).sum::<f64>() + 1.0;
        let cfg = OptimizerConfig {
            method: OptimizerMethod::Evolutionary,
            max_iters: 150,
            seed: 9,
            ..OptimizerConfig::default()
        };
        let a = optimize(obj, &[1.0; 4], &cfg).unwrap();
        let b = optimize(obj, &[1.0; 4], &cfg).unwrap();
        assert_eq!(
            a.trace.iter().map(|e| e.design.clone()).collect::<Vec<_>>(),
            b.trace.iter().map(|e| e.design.clone()).collect::<Vec<_>>()
        );
        assert!(a.value < 1.0 + 1e-4);
        for w in a.trace.windows(2) {
            assert!(w[1].value <= w[0].value);
        }
    }

    #[test]
    fn cache_skips_repeated_points() {
        let mut calls = 0;
        let mut c = CachedObjective::new(|x: &[f64]| {
            calls += 1;
            x[0]
        });
        c.eval(&[1.0]);
        c.eval(&[1.0]);
        c.eval(&[2.0]);
        assert_eq!(c.evaluations(), 2);
        drop(c);
        assert_eq!(calls, 2);
    }
}
