//! B-spline joint references with fixed end configurations.
//!
//! A reference is `q_d(t) = sum_i B_i(s(t)) C_i` over a clamped knot vector, where
//! `s(t)` is a quintic time scaling with zero first and second derivatives at
//! both ends. Pinning the first and last control points to the start and goal
//! configurations therefore yields a reference that starts and stops at rest.
//! The free interior control points (and optionally the interior knots) form
//! the [`DesignVector`] seen by the optimizer.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};

/// Desired position, velocity and acceleration at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct RefSample {
    pub q: DVector<f64>,
    pub dq: DVector<f64>,
    pub ddq: DVector<f64>,
}

/// Anything that can be tracked by the closed loop.
pub trait Reference: Send + Sync {
    fn duration(&self) -> f64;
    fn n_joints(&self) -> usize;
    /// Samples the reference; times within rounding of the window ends are clamped.
    fn sample(&self, t: f64) -> Result<RefSample>;
}

/// Start and goal configurations; end velocities and accelerations are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Boundary {
    pub q_start: DVector<f64>,
    pub q_goal: DVector<f64>,
}

impl Boundary {
    pub fn new(q_start: DVector<f64>, q_goal: DVector<f64>) -> Result<Self> {
        check_dim("goal configuration", q_start.len(), q_goal.len())?;
        check_finite("boundary configuration", q_start.as_slice())?;
        check_finite("boundary configuration", q_goal.as_slice())?;
        Ok(Self { q_start, q_goal })
    }

    pub fn n_joints(&self) -> usize {
        self.q_start.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineConfig {
    pub degree: usize,
    /// Control points per joint, including the two fixed end points.
    pub n_control: usize,
    /// Duration `T` [s].
    pub duration: f64,
    /// Append the interior knots to the design vector.
    #[serde(default)]
    pub optimize_knots: bool,
}

impl Default for SplineConfig {
    fn default() -> Self {
        Self {
            degree: 5,
            n_control: 10,
            duration: 2.0,
            optimize_knots: false,
        }
    }
}

impl SplineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.degree < 3 {
            return Err(Error::Config("spline degree must be at least 3".into()));
        }
        if self.n_control < self.degree + 1 {
            return Err(Error::Config(format!(
                "{} control points cannot carry a degree-{} spline",
                self.n_control, self.degree
            )));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::Config("duration must be positive".into()));
        }
        Ok(())
    }

    pub fn n_interior_knots(&self) -> usize {
        self.n_control - self.degree - 1
    }

    pub fn design_len(&self, n_joints: usize) -> usize {
        let knots = if self.optimize_knots {
            self.n_interior_knots()
        } else {
            0
        };
        (self.n_control - 2) * n_joints + knots
    }
}

/// Flat vector of free design parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignVector(pub DVector<f64>);

impl DesignVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Self(DVector::from_row_slice(values))
    }
}

/// Clamped knot vector with uniformly spaced interior knots.
pub fn uniform_clamped_knots(n_control: usize, degree: usize) -> Vec<f64> {
    let n_interior = n_control - degree - 1;
    let mut knots = vec![0.0; degree + 1];
    knots.extend((1..=n_interior).map(|i| i as f64 / (n_interior + 1) as f64));
    knots.extend(std::iter::repeat(1.0).take(degree + 1));
    knots
}

/// Quintic time scaling `s(t)` with its first two time derivatives.
pub fn time_scaling(t: f64, duration: f64) -> (f64, f64, f64) {
    let tau = (t / duration).clamp(0.0, 1.0);
    let t2 = tau * tau;
    let t3 = t2 * tau;
    let s = t3 * (10.0 - 15.0 * tau + 6.0 * t2);
    let ds = 30.0 * t2 * (1.0 - 2.0 * tau + t2) / duration;
    let dds = 60.0 * tau * (1.0 - 3.0 * tau + 2.0 * t2) / (duration * duration);
    (s, ds, dds)
}

/// Clamped B-spline reference in joint space.
#[derive(Clone, Debug, PartialEq)]
pub struct BSplineTrajectory {
    degree: usize,
    knots: Vec<f64>,
    /// `N × n_joints`, one control point per row.
    control: DMatrix<f64>,
    duration: f64,
    d1: (Vec<f64>, DMatrix<f64>),
    d2: (Vec<f64>, DMatrix<f64>),
}

impl BSplineTrajectory {
    pub fn new(degree: usize, knots: Vec<f64>, control: DMatrix<f64>, duration: f64) -> Result<Self> {
        let n_ctrl = control.nrows();
        if degree < 3 {
            return Err(Error::Config("spline degree must be at least 3".into()));
        }
        if n_ctrl < degree + 1 {
            return Err(Error::Config("too few control points for the degree".into()));
        }
        check_dim("knot vector", n_ctrl + degree + 1, knots.len())?;
        check_finite("knot vector", &knots)?;
        check_finite("control points", control.as_slice())?;
        let clamped = knots[..=degree].iter().all(|&k| k == 0.0)
            && knots[n_ctrl..].iter().all(|&k| k == 1.0);
        if !clamped {
            return Err(Error::Config("knot vector must be clamped on [0, 1]".into()));
        }
        let interior = &knots[degree..=n_ctrl];
        if interior.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(
                "interior knots must be strictly increasing inside (0, 1)".into(),
            ));
        }
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::Config("duration must be positive".into()));
        }
        let d1 = derivative_spline(degree, &knots, &control);
        let d2 = derivative_spline(degree - 1, &d1.0, &d1.1);
        Ok(Self {
            degree,
            knots,
            control,
            duration,
            d1,
            d2,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn control_points(&self) -> &DMatrix<f64> {
        &self.control
    }

    /// Packs the free parameters; the inverse of [`make_spline`].
    pub fn design_vector(&self, optimize_knots: bool) -> DesignVector {
        let n_ctrl = self.control.nrows();
        let n = self.control.ncols();
        let mut d = Vec::with_capacity((n_ctrl - 2) * n);
        for i in 1..n_ctrl - 1 {
            d.extend(self.control.row(i).iter());
        }
        if optimize_knots {
            d.extend_from_slice(&self.knots[self.degree + 1..n_ctrl]);
        }
        DesignVector::from_slice(&d)
    }

    pub fn config(&self, optimize_knots: bool) -> SplineConfig {
        SplineConfig {
            degree: self.degree,
            n_control: self.control.nrows(),
            duration: self.duration,
            optimize_knots,
        }
    }

    /// Spline value and its first two derivatives with respect to `s`.
    pub fn eval_path(&self, s: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        (
            de_boor(self.degree, &self.knots, &self.control, s),
            de_boor(self.degree - 1, &self.d1.0, &self.d1.1, s),
            de_boor(self.degree - 2, &self.d2.0, &self.d2.1, s),
        )
    }

    /// Desired `(q_d, dq_d, ddq_d)` at time `t`.
    pub fn eval(&self, t: f64) -> Result<RefSample> {
        let tol = 1e-9 * self.duration;
        if !(t >= -tol && t <= self.duration + tol) {
            return Err(Error::TimeOutOfRange {
                t,
                duration: self.duration,
            });
        }
        let (s, ds, dds) = time_scaling(t, self.duration);
        let (p, dp, ddp) = self.eval_path(s);
        let dq = &dp * ds;
        let ddq = &ddp * (ds * ds) + &dp * dds;
        Ok(RefSample { q: p, dq, ddq })
    }

    /// Writes `t, q_d.., dq_d.., ddq_d..` rows sampled every `dt` seconds.
    pub fn write_csv(&self, path: &Path, dt: f64) -> Result<()> {
        write_reference_csv(self, path, dt)
    }

    /// Serializable description (degree, knots, control points, duration).
    pub fn to_spec(&self) -> SplineSpec {
        SplineSpec {
            degree: self.degree,
            duration: self.duration,
            knots: self.knots.clone(),
            control_points: self
                .control
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
    }
}

impl Reference for BSplineTrajectory {
    fn duration(&self) -> f64 {
        self.duration
    }

    fn n_joints(&self) -> usize {
        self.control.ncols()
    }

    fn sample(&self, t: f64) -> Result<RefSample> {
        self.eval(t)
    }
}

/// On-disk form of a spline reference (TOML).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub degree: usize,
    pub duration: f64,
    pub knots: Vec<f64>,
    pub control_points: Vec<Vec<f64>>,
}

impl SplineSpec {
    pub fn build(&self) -> Result<BSplineTrajectory> {
        let rows = self.control_points.len();
        let cols = self.control_points.first().map_or(0, Vec::len);
        if self.control_points.iter().any(|r| r.len() != cols) || cols == 0 {
            return Err(Error::Config("ragged or empty control point table".into()));
        }
        let flat: Vec<f64> = self.control_points.iter().flatten().copied().collect();
        BSplineTrajectory::new(
            self.degree,
            self.knots.clone(),
            DMatrix::from_row_slice(rows, cols, &flat),
            self.duration,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Builds the reference from boundary data and free parameters.
pub fn make_spline(boundary: &Boundary, d: &DesignVector, config: &SplineConfig) -> Result<BSplineTrajectory> {
    config.validate()?;
    let n = boundary.n_joints();
    check_dim("design vector", config.design_len(n), d.len())?;
    check_finite("design vector", d.as_slice())?;
    let n_ctrl = config.n_control;
    let mut control = DMatrix::zeros(n_ctrl, n);
    control.row_mut(0).copy_from(&boundary.q_start.transpose());
    control
        .row_mut(n_ctrl - 1)
        .copy_from(&boundary.q_goal.transpose());
    let values = d.as_slice();
    for i in 1..n_ctrl - 1 {
        for j in 0..n {
            control[(i, j)] = values[(i - 1) * n + j];
        }
    }
    let knots = if config.optimize_knots {
        let mut k = vec![0.0; config.degree + 1];
        k.extend_from_slice(&values[(n_ctrl - 2) * n..]);
        k.extend(std::iter::repeat(1.0).take(config.degree + 1));
        k
    } else {
        uniform_clamped_knots(n_ctrl, config.degree)
    };
    BSplineTrajectory::new(config.degree, knots, control, config.duration)
}

/// Interior control points evenly spaced on the segment between the end configurations.
pub fn straight_line_design(boundary: &Boundary, config: &SplineConfig) -> DesignVector {
    let n = boundary.n_joints();
    let n_ctrl = config.n_control;
    let mut d = Vec::with_capacity(config.design_len(n));
    for i in 1..n_ctrl - 1 {
        let a = i as f64 / (n_ctrl - 1) as f64;
        for j in 0..n {
            d.push((1.0 - a) * boundary.q_start[j] + a * boundary.q_goal[j]);
        }
    }
    if config.optimize_knots {
        d.extend_from_slice(
            &uniform_clamped_knots(n_ctrl, config.degree)[config.degree + 1..n_ctrl],
        );
    }
    DesignVector::from_slice(&d)
}

fn derivative_spline(degree: usize, knots: &[f64], control: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n_ctrl = control.nrows();
    let mut out = DMatrix::zeros(n_ctrl - 1, control.ncols());
    for i in 0..n_ctrl - 1 {
        let span = knots[i + degree + 1] - knots[i + 1];
        if span > 0.0 {
            let scale = degree as f64 / span;
            for j in 0..control.ncols() {
                out[(i, j)] = scale * (control[(i + 1, j)] - control[(i, j)]);
            }
        }
    }
    (knots[1..knots.len() - 1].to_vec(), out)
}

fn find_span(degree: usize, knots: &[f64], n_ctrl: usize, s: f64) -> usize {
    if s >= knots[n_ctrl] {
        return n_ctrl - 1;
    }
    if s <= knots[degree] {
        return degree;
    }
    // knots[degree..=n_ctrl] is nondecreasing; find k with knots[k] <= s < knots[k+1]
    let upper = knots[degree..=n_ctrl].partition_point(|&k| k <= s);
    degree + upper - 1
}

/// De Boor's triangular scheme for one point of a clamped spline.
fn de_boor(degree: usize, knots: &[f64], control: &DMatrix<f64>, s: f64) -> DVector<f64> {
    let n_ctrl = control.nrows();
    let cols = control.ncols();
    let s = s.clamp(0.0, 1.0);
    let k = find_span(degree, knots, n_ctrl, s);
    let mut d: Vec<f64> = Vec::with_capacity((degree + 1) * cols);
    for j in 0..=degree {
        d.extend(control.row(j + k - degree).iter());
    }
    for r in 1..=degree {
        for j in (r..=degree).rev() {
            let lo = knots[j + k - degree];
            let hi = knots[j + 1 + k - r];
            let alpha = if hi > lo { (s - lo) / (hi - lo) } else { 0.0 };
            for c in 0..cols {
                d[j * cols + c] = (1.0 - alpha) * d[(j - 1) * cols + c] + alpha * d[j * cols + c];
            }
        }
    }
    DVector::from_row_slice(&d[degree * cols..(degree + 1) * cols])
}

/// Reference reconstructed from tabulated samples (e.g. an imported CSV).
///
/// Positions and velocities use cubic Hermite interpolation on `(q, dq)` and
/// `(dq, ddq)` respectively; accelerations are interpolated linearly.
#[derive(Clone, Debug)]
pub struct SampledTrajectory {
    times: Vec<f64>,
    q: Vec<DVector<f64>>,
    dq: Vec<DVector<f64>>,
    ddq: Vec<DVector<f64>>,
}

impl SampledTrajectory {
    pub fn new(
        times: Vec<f64>,
        q: Vec<DVector<f64>>,
        dq: Vec<DVector<f64>>,
        ddq: Vec<DVector<f64>>,
    ) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Config("a sampled reference needs at least two rows".into()));
        }
        check_dim("sampled positions", times.len(), q.len())?;
        check_dim("sampled velocities", times.len(), dq.len())?;
        check_dim("sampled accelerations", times.len(), ddq.len())?;
        if times[0].abs() > 1e-12 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("sample times must start at 0 and increase".into()));
        }
        Ok(Self { times, q, dq, ddq })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let n = (headers.len() - 1) / 3;
        if headers.len() != 3 * n + 1 || n == 0 {
            return Err(Error::Config("trajectory CSV must have t plus 3·n columns".into()));
        }
        let (mut times, mut q, mut dq, mut ddq) = (vec![], vec![], vec![], vec![]);
        for record in reader.records() {
            let record = record?;
            let row: Vec<f64> = record
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("bad number in trajectory CSV: {e}")))?;
            times.push(row[0]);
            q.push(DVector::from_row_slice(&row[1..1 + n]));
            dq.push(DVector::from_row_slice(&row[1 + n..1 + 2 * n]));
            ddq.push(DVector::from_row_slice(&row[1 + 2 * n..1 + 3 * n]));
        }
        Self::new(times, q, dq, ddq)
    }
}

impl Reference for SampledTrajectory {
    fn duration(&self) -> f64 {
        *self.times.last().expect("at least two samples")
    }

    fn n_joints(&self) -> usize {
        self.q[0].len()
    }

    fn sample(&self, t: f64) -> Result<RefSample> {
        let duration = self.duration();
        let tol = 1e-9 * duration;
        if !(t >= -tol && t <= duration + tol) {
            return Err(Error::TimeOutOfRange { t, duration });
        }
        let t = t.clamp(0.0, duration);
        let k = self.times.partition_point(|&x| x <= t).clamp(1, self.times.len() - 1) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let u = (t - t0) / h;
        let hermite = |p0: &DVector<f64>, m0: &DVector<f64>, p1: &DVector<f64>, m1: &DVector<f64>| {
            let u2 = u * u;
            let u3 = u2 * u;
            let (h00, h10, h01, h11) = (
                2.0 * u3 - 3.0 * u2 + 1.0,
                u3 - 2.0 * u2 + u,
                -2.0 * u3 + 3.0 * u2,
                u3 - u2,
            );
            let (d00, d10, d01, d11) = (
                (6.0 * u2 - 6.0 * u) / h,
                3.0 * u2 - 4.0 * u + 1.0,
                (-6.0 * u2 + 6.0 * u) / h,
                3.0 * u2 - 2.0 * u,
            );
            let value = p0 * h00 + m0 * (h10 * h) + p1 * h01 + m1 * (h11 * h);
            let slope = p0 * d00 + m0 * d10 + p1 * d01 + m1 * d11;
            (value, slope)
        };
        let (q, _) = hermite(&self.q[k], &self.dq[k], &self.q[k + 1], &self.dq[k + 1]);
        let (dq, _) = hermite(&self.dq[k], &self.ddq[k], &self.dq[k + 1], &self.ddq[k + 1]);
        let ddq = &self.ddq[k] * (1.0 - u) + &self.ddq[k + 1] * u;
        Ok(RefSample { q, dq, ddq })
    }
}

/// Tabulates any reference as CSV with header `t,q0..,dq0..,ddq0..`.
pub fn write_reference_csv(reference: &dyn Reference, path: &Path, dt: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::Config("sampling step must be positive".into()));
    }
    let n = reference.n_joints();
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    for prefix in ["q", "dq", "ddq"] {
        header.extend((0..n).map(|j| format!("{prefix}{j}")));
    }
    writer.write_record(&header)?;
    let steps = (reference.duration() / dt).round() as usize;
    for k in 0..=steps {
        let t = (k as f64 * dt).min(reference.duration());
        let s = reference.sample(t)?;
        let mut row = vec![format!("{t}")];
        for v in s.q.iter().chain(s.dq.iter()).chain(s.ddq.iter()) {
            row.push(format!("{v:e}"));
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
