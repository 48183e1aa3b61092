//! Mean and covariance of the closed loop under payload uncertainty, checked by sampling.

use dualref::control::ControllerGains;
use dualref::dynamics::{two_link_ik, InertialParams, ManipulatorModel};
use dualref::reference::{make_spline, straight_line_design, Boundary, SplineConfig};
use dualref::simloop::{ClosedLoop, ControllerKind, SimConfig};
use dualref::uq::{propagate_moments, simulate, MomentConfig, MomentMethod, PayloadLoop};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> dualref::Result<()> {
    let model = ManipulatorModel::two_link_default();
    let boundary = Boundary::new(two_link_ik(&model, [0.6, -0.4], false)?, two_link_ik(&model, [0.3, 0.6], false)?)?;
    let cfg = SplineConfig { n_control: 8, ..SplineConfig::default() };
    let traj = make_spline(&boundary, &straight_line_design(&boundary, &cfg), &cfg)?;
    let gains = ControllerGains::default_for(2);
    let sim = SimConfig::new(2.0, 5e-3, ControllerKind::Nac);
    let prior = InertialParams::from_com(2.0, [0.04, 0.04], 0.00333);
    let system = PayloadLoop { closed_loop: ClosedLoop::new(&model, &gains, &traj, &sim)?, prior };

    let mean = prior.to_vector();
    let sd = mean.map(|v| 0.1 * v.abs());
    let q = DMatrix::from_diagonal(&sd.component_mul(&sd));
    for method in [MomentMethod::Sensitivity, MomentMethod::Linearized] {
        let mcfg = MomentConfig { method, ..MomentConfig::default() };
        let mcfg = if method == MomentMethod::Linearized { MomentConfig::linearized() } else { mcfg };
        let start = std::time::Instant::now();
        let m = propagate_moments(&system, &mean, &q, &mcfg)?;
        println!("{method:?} ({:.2} s): Sigma_qq(T) =\n{}", start.elapsed().as_secs_f64(), m.sigma_plant(m.len() - 1).view((0, 0), (2, 2)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 300;
    let mut ends = Vec::new();
    for _ in 0..n {
        let z = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
        let path = simulate(&system, (&mean + sd.component_mul(&z)).as_slice())?;
        let k = path.states.len() - system.closed_loop.n_state();
        ends.push(DVector::from_column_slice(&path.states[k..k + 2]));
    }
    let mu = ends.iter().fold(DVector::zeros(2), |a, x| a + x) / n as f64;
    let cov = ends.iter().fold(DMatrix::zeros(2, 2), |a, x| a + (x - &mu) * (x - &mu).transpose()) / (n - 1) as f64;
    println!("Monte Carlo ({n} samples): Sigma_qq(T) =\n{cov}");
    Ok(())
}
