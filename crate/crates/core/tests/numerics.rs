use leadsync::metrics::{l2_norm, linf_norm, MetricsRecord};
use leadsync::network::Topology;
use leadsync::sim::{integrate, rk4_integrate, run_matched, Mode, ScenarioConfig};
use leadsync::tuners::TunerKind;

fn decay_error(h: f64) -> f64 {
    let steps = (1.0 / h).round() as usize;
    let x = rk4_integrate(|_, x, dx| dx[0] = -x[0], &[1.0], h, steps);
    (x[0] - (-1.0f64).exp()).abs()
}

#[test]
fn rk4_on_exponential_decay() {
    let steps = 10;
    let x = rk4_integrate(|_, x, dx| dx[0] = -x[0], &[1.0], 0.1, steps);
    assert!((x[0] - 0.3678794).abs() <= 1e-6);
    for h in [0.2, 0.1, 0.05] {
        let ratio = decay_error(h) / decay_error(h / 2.0);
        assert!(ratio >= 14.0, "h = {h}: ratio {ratio}");
    }
}

#[test]
fn runs_are_bit_identical() {
    let mut cfg = ScenarioConfig::benchmark(Topology::Random, 5, TunerKind::Ht1).unwrap();
    cfg.horizon = 20.0;
    let a = integrate(&cfg).unwrap();
    let b = integrate(&cfg).unwrap();
    let bits = |t: &leadsync::sim::Trajectory| -> Vec<u64> {
        t.e.iter().chain(&t.y).chain(&t.u).flat_map(|v| v.iter().map(|x| x.to_bits())).collect()
    };
    assert_eq!(bits(&a), bits(&b));
}

fn star3(kind: TunerKind, horizon: f64, stride: usize) -> leadsync::sim::Trajectory {
    let mut cfg = ScenarioConfig::benchmark(Topology::StarLike, 3, kind).unwrap();
    cfg.horizon = horizon;
    cfg.stride = stride;
    integrate(&cfg).unwrap()
}

#[test]
fn quadrature_converges_with_stride() {
    // the reference is discontinuous at t = 20, so stay inside the first half period
    for kind in TunerKind::ALL {
        let coarse = l2_norm(&star3(kind, 19.0, 10)).unwrap().squared;
        let fine = l2_norm(&star3(kind, 19.0, 5)).unwrap().squared;
        assert!(((coarse - fine) / fine).abs() < 1e-3, "{kind}: {coarse} vs {fine}");
    }
}

#[test]
fn norms_grow_with_horizon() {
    let short = star3(TunerKind::Gradient, 100.0, 10);
    let long = star3(TunerKind::Gradient, 200.0, 10);
    assert!(l2_norm(&long).unwrap().squared >= l2_norm(&short).unwrap().squared);
    assert!(linf_norm(&long).unwrap() >= linf_norm(&short).unwrap());
    let rec = MetricsRecord::from_trajectory("star", TunerKind::Gradient, 7, &long).unwrap();
    let sum: f64 = rec.per_agent_l2_squared.iter().sum();
    assert!((sum - rec.l2_squared).abs() <= 1e-12 * rec.l2_squared);
    assert_eq!(rec.horizon, 200.0);
}

#[test]
fn matched_run_has_negligible_linf() {
    let mut cfg = ScenarioConfig::benchmark(Topology::StarLike, 3, TunerKind::Gradient).unwrap();
    cfg.mode = Mode::Matched;
    let traj = run_matched(&cfg).unwrap();
    assert!(linf_norm(&traj).unwrap() <= 1e-8);
}
