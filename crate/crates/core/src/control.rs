//! Feedback policies and payload adaptation laws.
//!
//! Two tracking policies are provided, each paired with its own estimator:
//!
//! * Slotine–Li sliding control `tau = Y(q, dq, a, v) theta_hat - K s`, adapted
//!   either with the natural law on the pseudo-inertia manifold or with the
//!   classical gradient law `d theta_hat/dt = -Gamma Y_l^T s`;
//! * computed-torque control with a recursive least-squares (MAP) estimator, or
//!   with frozen parameters.
//!
//! Only the payload block `theta_l` is estimated; the robot links are known.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{ChainBasis, InertialParams, JointState, ManipulatorModel, BODY_PARAMS};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{is_positive_definite, symmetrize};
use crate::reference::RefSample;

/// Gains of all supported policies and estimators.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerGains {
    /// Sliding-variable feedback `K` (diagonal).
    pub k: DVector<f64>,
    /// Sliding-surface slope `Lambda` (diagonal).
    pub lambda: DVector<f64>,
    /// Computed-torque position gain (diagonal).
    pub kp: DVector<f64>,
    /// Computed-torque velocity gain (diagonal).
    pub kd: DVector<f64>,
    /// Natural adaptation gain `gamma`.
    pub gamma: f64,
    /// Classical adaptation gain `Gamma` (4 × 4).
    pub adaptation_gain: DMatrix<f64>,
    pub rls_prior_covariance: DMatrix<f64>,
    pub rls_noise_covariance: DMatrix<f64>,
    /// When set, the estimator uses `theta += K_fixed (r - Y_l theta)` instead of
    /// the covariance-form update.
    pub rls_fixed_gain: Option<DMatrix<f64>>,
    /// Project RLS estimates back onto the physically consistent set.
    pub rls_project: bool,
}

impl ControllerGains {
    pub fn default_for(n: usize) -> Self {
        Self {
            k: DVector::from_element(n, 20.0),
            lambda: DVector::from_element(n, 5.0),
            kp: DVector::from_element(n, 25.0),
            kd: DVector::from_element(n, 10.0),
            gamma: 1.0,
            adaptation_gain: DMatrix::identity(BODY_PARAMS, BODY_PARAMS),
            rls_prior_covariance: DMatrix::identity(BODY_PARAMS, BODY_PARAMS),
            rls_noise_covariance: DMatrix::identity(n, n),
            rls_fixed_gain: None,
            rls_project: false,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for (name, v) in [("K", &self.k), ("Lambda", &self.lambda), ("Kp", &self.kp), ("Kd", &self.kd)] {
            check_dim(name, n, v.len())?;
            if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::Config(format!("gain {name} must be positive")));
            }
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Config("gamma must be positive".into()));
        }
        check_dim("adaptation gain", BODY_PARAMS, self.adaptation_gain.nrows())?;
        check_dim("RLS prior covariance", BODY_PARAMS, self.rls_prior_covariance.nrows())?;
        check_dim("RLS noise covariance", n, self.rls_noise_covariance.nrows())?;
        if !is_positive_definite(&self.adaptation_gain) {
            return Err(Error::NotPositiveDefinite("adaptation gain"));
        }
        if !is_positive_definite(&self.rls_prior_covariance) {
            return Err(Error::NotPositiveDefinite("RLS prior covariance"));
        }
        if !is_positive_definite(&self.rls_noise_covariance) {
            return Err(Error::NotPositiveDefinite("RLS noise covariance"));
        }
        Ok(())
    }
}

/// Estimator state of one rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorState {
    pub theta_hat: DVector<f64>,
    /// Estimate covariance (RLS only).
    pub covariance: Option<DMatrix<f64>>,
    /// Planar pseudo-inertia (natural adaptation only).
    pub pseudo_inertia: Option<DMatrix<f64>>,
}

impl EstimatorState {
    pub fn rls(theta_hat: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        Self {
            theta_hat,
            covariance: Some(covariance),
            pseudo_inertia: None,
        }
    }

    pub fn natural(theta: &InertialParams) -> Result<Self> {
        Ok(Self {
            theta_hat: theta.to_vector(),
            covariance: None,
            pseudo_inertia: Some(pseudo_inertia(&theta.to_array())?),
        })
    }
}

/// Tracking errors of the sliding-mode family.
#[derive(Clone, Debug)]
pub struct SlidingTerms {
    /// `ddq_d - Lambda (dq - dq_d)`.
    pub a: DVector<f64>,
    /// `dq_d - Lambda (q - q_d)`.
    pub v: DVector<f64>,
    /// `s = (dq - dq_d) + Lambda (q - q_d)`.
    pub s: DVector<f64>,
}

pub fn sliding_terms(gains: &ControllerGains, state: &JointState, reference: &RefSample) -> SlidingTerms {
    let e = &state.q - &reference.q;
    let de = &state.dq - &reference.dq;
    let a = &reference.ddq - gains.lambda.component_mul(&de);
    let v = &reference.dq - gains.lambda.component_mul(&e);
    let s = de + gains.lambda.component_mul(&e);
    SlidingTerms { a, v, s }
}

fn check_policy_inputs(model: &ManipulatorModel, gains: &ControllerGains, state: &JointState, reference: &RefSample, theta_hat: &[f64]) -> Result<()> {
    let n = model.n_links();
    check_dim("joint positions", n, state.q.len())?;
    check_dim("joint velocities", n, state.dq.len())?;
    check_dim("reference", n, reference.q.len())?;
    check_dim("reference velocity", n, reference.dq.len())?;
    check_dim("reference acceleration", n, reference.ddq.len())?;
    check_dim("payload estimate", BODY_PARAMS, theta_hat.len())?;
    check_dim("gain K", n, gains.k.len())?;
    check_dim("gain Lambda", n, gains.lambda.len())?;
    check_finite("policy state", state.q.as_slice())?;
    check_finite("policy state", state.dq.as_slice())?;
    check_finite("payload estimate", theta_hat)
}

/// Slotine–Li adaptive tracking torque with the payload estimate `theta_hat`.
pub fn slotine_li_torque(
    model: &ManipulatorModel,
    gains: &ControllerGains,
    state: &JointState,
    reference: &RefSample,
    theta_hat: &[f64],
) -> Result<DVector<f64>> {
    check_policy_inputs(model, gains, state, reference, theta_hat)?;
    let basis = ChainBasis::new(model, state.q.as_slice());
    let terms = sliding_terms(gains, state, reference);
    Ok(slotine_li_with(model, &basis, gains, state, &terms, theta_hat))
}

pub(crate) fn slotine_li_with(
    model: &ManipulatorModel,
    basis: &ChainBasis,
    gains: &ControllerGains,
    state: &JointState,
    terms: &SlidingTerms,
    theta_hat: &[f64],
) -> DVector<f64> {
    let theta = model.full_params_from(theta_hat);
    let ff = basis.torque(
        theta.as_slice(),
        state.dq.as_slice(),
        terms.a.as_slice(),
        terms.v.as_slice(),
    );
    ff - gains.k.component_mul(&terms.s)
}

/// Computed-torque law `M_hat (ddq_d - Kd de - Kp e) + C_hat dq + g_hat`.
pub fn ctc_torque(
    model: &ManipulatorModel,
    gains: &ControllerGains,
    state: &JointState,
    reference: &RefSample,
    theta_hat: &[f64],
) -> Result<DVector<f64>> {
    check_policy_inputs(model, gains, state, reference, theta_hat)?;
    let basis = ChainBasis::new(model, state.q.as_slice());
    let theta = model.full_params_from(theta_hat);
    if basis.mass_matrix(theta.as_slice()).cholesky().is_none() {
        return Err(Error::SingularInertia);
    }
    Ok(ctc_with(model, &basis, gains, state, reference, theta_hat))
}

pub(crate) fn ctc_with(
    model: &ManipulatorModel,
    basis: &ChainBasis,
    gains: &ControllerGains,
    state: &JointState,
    reference: &RefSample,
    theta_hat: &[f64],
) -> DVector<f64> {
    let theta = model.full_params_from(theta_hat);
    let e = &state.q - &reference.q;
    let de = &state.dq - &reference.dq;
    let acc = &reference.ddq - gains.kd.component_mul(&de) - gains.kp.component_mul(&e);
    basis.torque(
        theta.as_slice(),
        state.dq.as_slice(),
        acc.as_slice(),
        state.dq.as_slice(),
    )
}

/// Planar pseudo-inertia `[[m, h^T], [h, Sigma]]` of a parameter block.
///
/// The planar block only fixes `tr(Sigma) = I_zz`; the remaining freedom is
/// resolved by making the second moment about the centre of mass isotropic,
/// `Sigma = h h^T / m + (I_zz - |h|²/m)/2 · Id`, so that the matrix is
/// positive semidefinite exactly on the consistent set.
pub fn pseudo_inertia(theta: &[f64]) -> Result<DMatrix<f64>> {
    check_dim("payload parameters", BODY_PARAMS, theta.len())?;
    let p = InertialParams::from_slice(theta)?;
    if !p.is_consistent() {
        return Err(Error::Inconsistent(format!("{p:?}")));
    }
    let (m, hx, hy) = (p.mass, p.first_moment[0], p.first_moment[1]);
    let iso = 0.5 * p.inertia_about_com().max(0.0);
    Ok(DMatrix::from_row_slice(
        3,
        3,
        &[
            m,
            hx,
            hy,
            hx,
            hx * hx / m + iso,
            hx * hy / m,
            hy,
            hx * hy / m,
            hy * hy / m + iso,
        ],
    ))
}

/// Linear read-out `(m, h_x, h_y, tr Sigma)` of a pseudo-inertia matrix.
pub fn pseudo_inertia_inverse(theta_mat: &DMatrix<f64>) -> [f64; BODY_PARAMS] {
    [
        theta_mat[(0, 0)],
        theta_mat[(0, 1)],
        theta_mat[(0, 2)],
        theta_mat[(1, 1)] + theta_mat[(2, 2)],
    ]
}

/// Matrix multiplier `L` with `tr(Theta L) = theta^T l` for every symmetric `Theta`.
pub fn natural_multiplier(l: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        3,
        3,
        &[
            l[0],
            0.5 * l[1],
            0.5 * l[2],
            0.5 * l[1],
            l[3],
            0.0,
            0.5 * l[2],
            0.0,
            l[3],
        ],
    )
}

/// Natural adaptation law `dTheta/dt = -(1/gamma) Theta L Theta`, `l = Y_l^T s`.
pub fn nac_update(
    gains: &ControllerGains,
    theta_mat: &DMatrix<f64>,
    y_l: &DMatrix<f64>,
    s: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_dim("pseudo-inertia", 3, theta_mat.nrows())?;
    check_dim("pseudo-inertia", 3, theta_mat.ncols())?;
    check_dim("payload regressor columns", BODY_PARAMS, y_l.ncols())?;
    check_dim("sliding variable", y_l.nrows(), s.len())?;
    if !is_positive_definite(theta_mat) {
        return Err(Error::NotPositiveDefinite("pseudo-inertia estimate"));
    }
    let l = y_l.transpose() * s;
    Ok(nac_rate(gains.gamma, theta_mat, l.as_slice()))
}

pub(crate) fn nac_rate(gamma: f64, theta_mat: &DMatrix<f64>, l: &[f64]) -> DMatrix<f64> {
    let lm = natural_multiplier(l);
    symmetrize(&(theta_mat * lm * theta_mat)) * (-1.0 / gamma)
}

/// Classical gradient adaptation `-Gamma Y_l^T s`.
pub fn gradient_update(gains: &ControllerGains, y_l: &DMatrix<f64>, s: &DVector<f64>) -> DVector<f64> {
    -(&gains.adaptation_gain * (y_l.transpose() * s))
}

/// Covariance-form recursive least squares with a Gaussian prior.
pub fn rls_update(
    est: &EstimatorState,
    y_l: &DMatrix<f64>,
    residual: &DVector<f64>,
    noise_cov: &DMatrix<f64>,
) -> Result<EstimatorState> {
    let p_dim = est.theta_hat.len();
    check_dim("regressor columns", p_dim, y_l.ncols())?;
    check_dim("residual", y_l.nrows(), residual.len())?;
    check_dim("noise covariance", y_l.nrows(), noise_cov.nrows())?;
    let p = est
        .covariance
        .as_ref()
        .ok_or(Error::Config("RLS update needs an estimate covariance".into()))?;
    check_dim("estimate covariance", p_dim, p.nrows())?;
    let py = p * y_l.transpose();
    let innovation_cov = symmetrize(&(y_l * &py + noise_cov));
    let chol = innovation_cov
        .cholesky()
        .ok_or(Error::Singular("innovation covariance"))?;
    let gain = chol.solve(&py.transpose()).transpose();
    let innovation = residual - y_l * &est.theta_hat;
    let theta_hat = &est.theta_hat + &gain * innovation;
    // Joseph form keeps the covariance symmetric positive definite.
    let ikh = DMatrix::identity(p_dim, p_dim) - &gain * y_l;
    let cov = symmetrize(&(&ikh * p * ikh.transpose() + &gain * noise_cov * gain.transpose()));
    Ok(EstimatorState {
        theta_hat,
        covariance: Some(cov),
        pseudo_inertia: None,
    })
}

/// Fixed-gain variant `theta += K (r - Y_l theta)`.
pub fn rls_fixed_gain_update(theta_hat: &DVector<f64>, gain: &DMatrix<f64>, y_l: &DMatrix<f64>, residual: &DVector<f64>) -> DVector<f64> {
    theta_hat + gain * (residual - y_l * theta_hat)
}

/// Moves a payload block onto the consistent set with minimal changes to `m` and `I_zz`.
pub fn project_consistent(theta: &mut [f64]) {
    const MIN_MASS: f64 = 1e-3;
    if !(theta[0] > MIN_MASS) {
        theta[0] = MIN_MASS;
    }
    let floor = (theta[1] * theta[1] + theta[2] * theta[2]) / theta[0];
    if theta[3] < floor + 1e-9 {
        theta[3] = floor + 1e-9;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{inverse_dynamics, regressor};
    use crate::linalg::min_eigenvalue;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_consistent(rng: &mut ChaCha8Rng) -> [f64; 4] {
        let m = rng.gen_range(0.2..4.0);
        let c = [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)];
        InertialParams::from_com(m, c, rng.gen_range(1e-4..0.05)).to_array()
    }

    fn sample_ref(n: usize, rng: &mut ChaCha8Rng) -> RefSample {
        let v = |rng: &mut ChaCha8Rng| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        RefSample { q: v(rng), dq: v(rng), ddq: v(rng) }
    }

    #[test]
    fn on_reference_torque_is_inverse_dynamics() {
        let model = ManipulatorModel::two_link_default();
        let gains = ControllerGains::default_for(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let payload = InertialParams::from_slice(&random_consistent(&mut rng)).unwrap();
        let r = sample_ref(2, &mut rng);
        let st = JointState::new(r.q.clone(), r.dq.clone());
        let expected = inverse_dynamics(&model, &payload, &st, &r.ddq).unwrap();
        let sl = slotine_li_torque(&model, &gains, &st, &r, &payload.to_array()).unwrap();
        let ctc = ctc_torque(&model, &gains, &st, &r, &payload.to_array()).unwrap();
        assert_relative_eq!(sl, expected, epsilon = 1e-10);
        assert_relative_eq!(ctc, expected, epsilon = 1e-10);
    }

    #[test]
    fn zero_sliding_variable_removes_feedback() {
        let model = ManipulatorModel::two_link_default();
        let gains = ControllerGains::default_for(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = sample_ref(2, &mut rng);
        // q - q_d = e, dq - dq_d = -Lambda e  =>  s = 0
        let e = DVector::from_vec(vec![0.1, -0.05]);
        let st = JointState::new(&r.q + &e, &r.dq - gains.lambda.component_mul(&e));
        let terms = sliding_terms(&gains, &st, &r);
        assert!(terms.s.amax() < 1e-15);
        let tau = slotine_li_torque(&model, &gains, &st, &r, &[0.0; 4]).unwrap();
        let y = regressor(&model, &st, &terms.a, &terms.v).unwrap();
        let ff = y * model.full_params_from(&[0.0; 4]);
        assert_relative_eq!(tau, ff, epsilon = 1e-12);
    }

    #[test]
    fn torques_match_term_by_term_oracle() {
        let model = ManipulatorModel::two_link_default();
        let gains = ControllerGains::default_for(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let est = random_consistent(&mut rng);
            let r = sample_ref(2, &mut rng);
            let st = JointState::new(
                DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0)),
                DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0)),
            );
            let payload = InertialParams::from_slice(&est).unwrap();
            let terms = crate::dynamics::dynamics_terms(&model, &payload, &st).unwrap();
            let e = &st.q - &r.q;
            let de = &st.dq - &r.dq;
            let a = &r.ddq - gains.lambda.component_mul(&de);
            let v = &r.dq - gains.lambda.component_mul(&e);
            let s = &de + gains.lambda.component_mul(&e);
            let oracle = &terms.mass * a + &terms.coriolis * v + &terms.gravity - gains.k.component_mul(&s);
            let tau = slotine_li_torque(&model, &gains, &st, &r, &est).unwrap();
            assert_relative_eq!(tau, oracle, epsilon = 1e-10);

            let acc = &r.ddq - gains.kd.component_mul(&de) - gains.kp.component_mul(&e);
            let oracle = &terms.mass * acc + &terms.coriolis * &st.dq + &terms.gravity;
            let tau = ctc_torque(&model, &gains, &st, &r, &est).unwrap();
            assert_relative_eq!(tau, oracle, epsilon = 1e-10);
        }
    }

    #[test]
    fn ctc_statics() {
        let model = ManipulatorModel::two_link_default();
        let gains = ControllerGains::default_for(2);
        let payload = InertialParams::from_com(1.0, [0.02, 0.0], 0.002);
        let q = DVector::from_vec(vec![0.4, 0.9]);
        let r = RefSample { q: q.clone(), dq: DVector::zeros(2), ddq: DVector::zeros(2) };
        let st = JointState::at_rest(q);
        let tau = ctc_torque(&model, &gains, &st, &r, &payload.to_array()).unwrap();
        let g = crate::dynamics::dynamics_terms(&model, &payload, &st).unwrap().gravity;
        assert_relative_eq!(tau, g, epsilon = 1e-12);
        // an estimate with a hugely negative inertia makes M_hat singular
        assert!(matches!(
            ctc_torque(&model, &gains, &st, &r, &[1.0, 0.0, 0.0, -100.0]),
            Err(Error::SingularInertia)
        ));
    }

    #[test]
    fn pseudo_inertia_properties() {
        let theta = [2.0, 0.0, 0.0, 0.01];
        let m = pseudo_inertia(&theta).unwrap();
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(0, 2)], 0.0);
        assert_eq!(m[(1, 2)], 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let th = random_consistent(&mut rng);
            let back = pseudo_inertia_inverse(&pseudo_inertia(&th).unwrap());
            for k in 0..4 {
                assert_relative_eq!(back[k], th[k], epsilon = 1e-13);
            }
            // trace identity tr(Theta L) = theta^T l
            let l: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lhs = (pseudo_inertia(&th).unwrap() * natural_multiplier(&l)).trace();
            let rhs: f64 = th.iter().zip(&l).map(|(a, b)| a * b).sum();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        }

        // consistency boundary: I = |h|²/m gives a singular pseudo-inertia
        let (mass, h) = (1.5, [0.12, -0.3]);
        let boundary = [mass, h[0], h[1], (h[0] * h[0] + h[1] * h[1]) / mass];
        assert!(min_eigenvalue(&pseudo_inertia(&boundary).unwrap()).abs() < 1e-12);
        assert!(pseudo_inertia(&[1.0, 0.5, 0.0, 0.1]).is_err());
    }

    #[test]
    fn natural_update_properties() {
        let gains = ControllerGains::default_for(2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let th = random_consistent(&mut rng);
        let big = pseudo_inertia(&th).unwrap();
        let zero = nac_update(&gains, &big, &DMatrix::zeros(2, 4), &DVector::zeros(2)).unwrap();
        assert_eq!(zero.amax(), 0.0);

        for _ in 0..200 {
            let th = random_consistent(&mut rng);
            let mut big = pseudo_inertia(&th).unwrap();
            let y = DMatrix::from_fn(2, 4, |_, _| rng.gen_range(-10.0..10.0));
            let s = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let rate = nac_update(&gains, &big, &y, &s).unwrap();
            assert_eq!(rate, rate.transpose());
            big += rate * 1e-3;
            assert!(min_eigenvalue(&big) > 0.0);
        }

        let indefinite = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(nac_update(&gains, &indefinite, &DMatrix::zeros(2, 4), &DVector::zeros(2)).is_err());
    }

    #[test]
    fn rls_zero_innovation_keeps_estimate() {
        let est = EstimatorState::rls(DVector::from_vec(vec![1.0, 0.1, 0.0, 0.02]), DMatrix::identity(4, 4));
        let y = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, 1.0, 0.5, 0.0, 1.0, 3.0]);
        let r = &y * &est.theta_hat;
        let next = rls_update(&est, &y, &r, &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(next.theta_hat, est.theta_hat, epsilon = 1e-14);
        let p = next.covariance.unwrap();
        assert!(p.trace() <= 4.0);
        assert!(min_eigenvalue(&p) > 0.0);
        assert_eq!(p, p.transpose());
    }

    #[test]
    fn rls_scalar_matches_batch_least_squares() {
        // y_k = x + noise with prior N(0, p0): posterior mean = sum(y)/(n + r/p0)
        let (p0, r) = (4.0, 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ys: Vec<f64> = (0..50).map(|_| 1.3 + rng.gen_range(-0.5..0.5)).collect();
        let mut est = EstimatorState::rls(DVector::from_vec(vec![0.0]), DMatrix::from_element(1, 1, p0));
        for &yk in &ys {
            est = rls_update(&est, &DMatrix::from_element(1, 1, 1.0), &DVector::from_vec(vec![yk]), &DMatrix::from_element(1, 1, r)).unwrap();
        }
        let batch = ys.iter().sum::<f64>() / (ys.len() as f64 + r / p0);
        assert_relative_eq!(est.theta_hat[0], batch, epsilon = 1e-12);
        assert_relative_eq!(est.covariance.unwrap()[(0, 0)], 1.0 / (1.0 / p0 + ys.len() as f64 / r), epsilon = 1e-12);
    }

    #[test]
    fn rls_no_information_limit() {
        let est = EstimatorState::rls(DVector::from_vec(vec![1.0, 0.0, 0.0, 0.1]), DMatrix::identity(4, 4));
        let y = DMatrix::from_fn(2, 4, |i, j| (i + j) as f64);
        let r = DVector::from_vec(vec![50.0, -20.0]);
        let next = rls_update(&est, &y, &r, &(DMatrix::identity(2, 2) * 1e14)).unwrap();
        assert!((next.theta_hat - est.theta_hat).amax() < 1e-8);
    }

    #[test]
    fn projection_restores_consistency() {
        let mut th = [-0.5, 0.2, 0.1, 0.0];
        project_consistent(&mut th);
        assert!(InertialParams::from_slice(&th).unwrap().is_consistent());
    }
}
