//! Clamped quintic B-spline reference between two tip positions.

use dualref::dynamics::{two_link_ik, ManipulatorModel};
use dualref::reference::{make_spline, straight_line_design, Boundary, Reference, SplineConfig};

fn main() -> dualref::Result<()> {
    let model = ManipulatorModel::two_link_default();
    let q0 = two_link_ik(&model, [0.6, -0.4], false)?;
    let q1 = two_link_ik(&model, [0.3, 0.6], false)?;
    let boundary = Boundary::new(q0, q1)?;
    let cfg = SplineConfig { n_control: 8, ..SplineConfig::default() };

    let mut d = straight_line_design(&boundary, &cfg);
    // bend the middle of the path
    for v in d.0.iter_mut().skip(4).take(4) {
        *v += 0.3;
    }
    let traj = make_spline(&boundary, &d, &cfg)?;
    for t in [0.0, 0.5, 1.0, 1.5, 2.0] {
        let s = traj.sample(t)?;
        println!("t = {t:.1}  q = {:.4}  dq = {:.4}", s.q.transpose(), s.dq.transpose());
    }

    let dir = std::env::temp_dir().join("dualref-spline");
    std::fs::create_dir_all(&dir)?;
    traj.to_spec().save(&dir.join("trajectory.toml"))?;
    traj.write_csv(&dir.join("reference.csv"), 0.01)?;
    println!("wrote {}", dir.display());
    Ok(())
}
