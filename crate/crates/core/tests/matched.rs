use leadsync::linalg::spectral_abscissa;
use leadsync::network::Topology;
use leadsync::sim::{run_matched, Mode, ScenarioConfig, Simulation};
use leadsync::tuners::TunerKind;
use nalgebra::DVector;

fn matched(topology: Topology, m: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::benchmark(topology, m, TunerKind::Gradient).unwrap();
    cfg.mode = Mode::Matched;
    cfg
}

#[test]
fn zero_initial_conditions_track_exactly() {
    for (topology, m) in [(Topology::StarLike, 3), (Topology::Path, 5), (Topology::CyclicLike, 7)] {
        let traj = run_matched(&matched(topology, m)).unwrap();
        assert!(traj.max_error() <= 1e-8, "{topology} m={m}: {:e}", traj.max_error());
        assert!(traj.theta_err.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn plant_offset_decays_at_closed_loop_rate() {
    let mut cfg = matched(Topology::StarLike, 3);
    let sim = Simulation::new(&cfg).unwrap();
    let rate = -spectral_abscissa(&sim.augmented().unwrap().a_a);
    assert!(rate > 0.0);
    let settle = 20.0 / rate;
    cfg.horizon = (settle + 1.0).ceil();
    cfg.stride = 1;
    cfg.initial.plant = vec![1.0; cfg.leader.order() * 3];
    let traj = run_matched(&cfg).unwrap();
    assert!(traj.e[0].norm() > 1e-2);
    for (t, e) in traj.times.iter().zip(&traj.e) {
        if *t >= settle {
            assert!(e.norm() < 1e-6, "||e({t})|| = {:e}", e.norm());
        }
    }
}

// d^2 f + 5 d f + 6 f, the leader denominator applied by central differences.
fn leader_den_operator(f: &[f64], dt: f64, k: usize) -> f64 {
    let d1 = (f[k + 1] - f[k - 1]) / (2.0 * dt);
    let d2 = (f[k + 1] - 2.0 * f[k] + f[k - 1]) / (dt * dt);
    d2 + 5.0 * d1 + 6.0 * f[k]
}

#[test]
fn inverse_leader_identity_along_matched_run() {
    let mut cfg = matched(Topology::Path, 3);
    cfg.horizon = 18.0;
    cfg.stride = 1;
    cfg.initial.plant = vec![0.5, -0.5, 0.2, 0.1, -0.3, 0.4];
    let sim = Simulation::new(&cfg).unwrap();
    let k_star: Vec<f64> = sim.theta_star().unwrap().iter().map(|v| v[0]).collect();
    let l_m = sim.network().l_m.clone();
    let a_ell = sim.network().a_ell.clone();
    let traj = sim.run().unwrap();
    let dt = traj.dt();
    let m = 3;
    let cols: Vec<Vec<f64>> = (0..m).map(|i| traj.y.iter().map(|y| y[i]).collect()).collect();
    // the square wave switches at t = 20, so [0, 18] is smooth; skip the
    // initial transient
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for k in (5_000..traj.len() - 1).step_by(97) {
        let dy = DVector::from_iterator(m, (0..m).map(|i| leader_den_operator(&cols[i], dt, k)));
        let dyl = leader_den_operator(&traj.y_leader, dt, k);
        let lhs = &l_m * &dy;
        let rhs = &a_ell * DVector::from_element(m, dyl);
        let diff = DVector::from_iterator(m, (0..m).map(|i| k_star[i] * (lhs[i] - rhs[i])));
        worst = worst.max(diff.amax());
        scale = scale.max(rhs.amax());
    }
    assert!(scale > 1.0);
    assert!(worst <= 1e-5 * scale, "identity residual {worst:e} against scale {scale:e}");
}
