use leadsync::network::Topology;
use leadsync::sim::{integrate, benchmark_leader, Mode, ReferenceSpec, ScenarioConfig};
use leadsync::tuners::TunerKind;

const KP: f64 = 2.0;
const KL: f64 = 3.0;

fn reference(t: f64) -> f64 {
    2.0 * t.sin() + (3.0 * t).sin()
}

fn config(horizon: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::benchmark(Topology::StarLike, 1, TunerKind::Gradient).unwrap();
    cfg.plants = vec![benchmark_leader().with_gain(KP).unwrap()];
    cfg.mode = Mode::GainOnly;
    cfg.reference = ReferenceSpec::SineSum { terms: vec![(2.0, 1.0), (1.0, 3.0)] };
    cfg.horizon = horizon;
    cfg.stride = 1;
    cfg
}

/// Scalar MRAC with unknown gain only: `u = k r`, `k' = -sgn(k_p) e r`,
/// plant `k_p (s+1)/(s^2+5s+6)`, model `k_l (s+1)/(s^2+5s+6)`.
/// State `[x1, x2, xm1, xm2, k]`.
fn oracle_rhs(t: f64, s: &[f64; 5]) -> [f64; 5] {
    let r = reference(t);
    let y = KP * (s[0] + s[1]);
    let ym = KL * (s[2] + s[3]);
    let e = y - ym;
    let u = s[4] * r;
    [s[1], -6.0 * s[0] - 5.0 * s[1] + u, s[3], -6.0 * s[2] - 5.0 * s[3] + r, -KP.signum() * e * r]
}

fn oracle(h: f64, steps: usize) -> Vec<f64> {
    let mut s = [0.0; 5];
    let err = |s: &[f64; 5]| KP * (s[0] + s[1]) - KL * (s[2] + s[3]);
    let mut out = vec![err(&s)];
    let axpy = |x: &[f64; 5], k: &[f64; 5], a: f64| -> [f64; 5] { std::array::from_fn(|i| x[i] + a * k[i]) };
    for n in 0..steps {
        let t = n as f64 * h;
        let k1 = oracle_rhs(t, &s);
        let k2 = oracle_rhs(t + 0.5 * h, &axpy(&s, &k1, 0.5 * h));
        let k3 = oracle_rhs(t + 0.5 * h, &axpy(&s, &k2, 0.5 * h));
        let k4 = oracle_rhs(t + h, &axpy(&s, &k3, h));
        s = std::array::from_fn(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        out.push(err(&s));
    }
    out
}

#[test]
fn single_agent_gain_only_matches_scalar_mrac() {
    let cfg = config(20.0);
    let traj = integrate(&cfg).unwrap();
    let expected = oracle(cfg.step, cfg.steps());
    assert_eq!(traj.len(), expected.len());
    let worst = traj.e.iter().zip(&expected).map(|(e, o)| (e[0] - o).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-9, "largest deviation from the scalar oracle {worst:e}");
    // the adaptation actually did something
    assert!(expected.iter().fold(0.0f64, |a, v| a.max(v.abs())) > 1e-1);
}

#[test]
fn ideal_initial_gain_gives_exact_tracking() {
    let mut cfg = config(10.0);
    cfg.initial.theta = vec![KL / KP];
    let traj = integrate(&cfg).unwrap();
    assert!(traj.max_error() <= 1e-12, "{:e}", traj.max_error());
    for (u, t) in traj.u.iter().zip(&traj.times) {
        assert!((u[0] - KL / KP * reference(*t)).abs() < 1e-12);
    }
}

#[test]
fn gain_only_rejects_other_plants() {
    let mut cfg = config(1.0);
    cfg.plants = leadsync::sim::benchmark_plants(1).unwrap();
    assert!(integrate(&cfg).is_err());
}
