//! Closed-loop simulation of the leader, the followers, their filters and
//! the adaptive laws with a fixed-step classical Runge-Kutta integrator.
//!
//! The flat state is laid out as
//! `[x (n m) | z (q m) | w (q m) | x_leader (n_l) | tuner | monitor]`
//! where `q = n - 1` is the filter order and each group stores agents
//! contiguously. The optional monitor block holds, per agent, the state of
//! the leader error model driven by `k_pi (u_i - theta*_i^T eta_i)`; it is
//! only read by the Lyapunov monitor and never feeds back.

use std::fmt;
use std::io::{self, Write};
use std::ops::Range;
use std::str::FromStr;

use nalgebra::DVector;
use thiserror::Error;

use crate::lti::{self, realize_ccf, LtiError, Polynomial, TransferFunction};
use crate::matching::{self, AugmentedSystem, FilterSpec, MatchingError};
use crate::network::{
    assemble_matrices, build_topology, NetworkError, NetworkMatrices, NetworkSpec, Topology,
    WeightPolicy,
};
use crate::tuners::{
    self, AgentGains, BlockParams, MonitorSetup, MuSetting, TunerConfig, TunerError, TunerKind,
    TunerState, DEFAULT_MU,
};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_HORIZON: f64 = 200.0;
pub const DEFAULT_STRIDE: usize = 10;
/// Agent counts of the benchmark family.
pub const BENCHMARK_M: [usize; 7] = [1, 3, 5, 7, 9, 11, 13];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("agent {agent}: {reason}")]
    PlantInvalid { agent: usize, reason: String },
    #[error("state became non-finite; last finite time t = {time}")]
    NonFinite { time: f64 },
    #[error("agent {agent}: {source}")]
    Matching { agent: usize, source: MatchingError },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error(transparent)]
    Tuner(#[from] TunerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Full,
    /// Regressor reduced to `[r]`; requires plants proportional to the leader.
    GainOnly,
    /// Parameters frozen at the ideal gains.
    Matched,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::GainOnly => "gain_only",
            Mode::Matched => "matched",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "full" => Ok(Mode::Full),
            "gain_only" => Ok(Mode::GainOnly),
            "matched" => Ok(Mode::Matched),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSpec {
    Step { amplitude: f64 },
    /// `+amplitude` on `[kP, kP + P/2)`, `-amplitude` on `[kP + P/2, (k+1)P)`.
    Square { amplitude: f64, period: f64 },
    /// `sum_k a_k sin(w_k t)` as `(a_k, w_k)` pairs.
    SineSum { terms: Vec<(f64, f64)> },
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        ReferenceSpec::Square { amplitude: 10.0, period: 40.0 }
    }
}

impl ReferenceSpec {
    /// Upper bound on `|r(t)|`.
    pub fn bound(&self) -> f64 {
        match self {
            ReferenceSpec::Step { amplitude } | ReferenceSpec::Square { amplitude, .. } => amplitude.abs(),
            ReferenceSpec::SineSum { terms } => terms.iter().map(|(a, _)| a.abs()).sum(),
        }
    }
}

pub fn reference_signal(t: f64, spec: &ReferenceSpec) -> f64 {
    match spec {
        ReferenceSpec::Step { amplitude } => *amplitude,
        ReferenceSpec::Square { amplitude, period } => {
            let k = (t / (0.5 * period)).floor() as i64;
            if k.rem_euclid(2) == 0 {
                *amplitude
            } else {
                -*amplitude
            }
        }
        ReferenceSpec::SineSum { terms } => terms.iter().map(|(a, w)| a * (w * t).sin()).sum(),
    }
}

/// Left limit `r(t-)`. Differs from [`reference_signal`] only on the
/// square-wave switching instants.
pub fn reference_left_limit(t: f64, spec: &ReferenceSpec) -> f64 {
    match spec {
        ReferenceSpec::Square { amplitude, period } if t > 0.0 => {
            let k = (t / (0.5 * period)).ceil() as i64 - 1;
            if k.rem_euclid(2) == 0 {
                *amplitude
            } else {
                -*amplitude
            }
        }
        _ => reference_signal(t, spec),
    }
}

/// Constant input and output disturbances per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSpec {
    pub nu_u: Vec<f64>,
    pub nu_y: Vec<f64>,
}

impl DisturbanceSpec {
    pub fn none(m: usize) -> Self {
        Self::uniform(m, 0.0, 0.0)
    }

    pub fn uniform(m: usize, nu_u: f64, nu_y: f64) -> Self {
        DisturbanceSpec { nu_u: vec![nu_u; m], nu_y: vec![nu_y; m] }
    }

    pub fn sup(&self) -> f64 {
        self.nu_u.iter().chain(&self.nu_y).fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// Empty vectors mean zero initial state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InitialConditions {
    /// Stacked plant states, `n m` entries.
    pub plant: Vec<f64>,
    /// Leader state, `n_l` entries.
    pub leader: Vec<f64>,
    /// Stacked per-agent parameters, `p m` entries (ignored in matched mode).
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub network: NetworkSpec,
    pub plants: Vec<TransferFunction>,
    pub leader: TransferFunction,
    pub filter: FilterSpec,
    pub tuner: TunerConfig,
    pub reference: ReferenceSpec,
    pub disturbance: DisturbanceSpec,
    pub horizon: f64,
    pub step: f64,
    pub stride: usize,
    pub initial: InitialConditions,
    pub mode: Mode,
    /// Carry the error-model states used by the Lyapunov monitor.
    pub monitor: bool,
    /// Keep full state snapshots at every recorded sample.
    pub record_states: bool,
}

/// Leader `3 (s + 1) / (s^2 + 5 s + 6)`.
pub fn benchmark_leader() -> TransferFunction {
    TransferFunction::new(
        3.0,
        Polynomial::from_descending(&[1.0, 1.0]),
        Polynomial::from_descending(&[1.0, 5.0, 6.0]),
    )
    .expect("leader is well formed")
}

/// Family parameter of agent `i` (one-based) in the `m`-agent benchmark.
pub fn benchmark_k(m: usize, i: usize) -> Result<f64, SimError> {
    let i = i as f64;
    Ok(match m {
        1 => 9.0 * i,
        3 => 4.0 * i - 3.0,
        5 => 2.0 * i - 1.0,
        7 => (4.0 * i - 1.0) / 3.0,
        9 => i,
        11 => (4.0 * i + 1.0) / 5.0,
        13 => (2.0 * i + 1.0) / 3.0,
        _ => {
            return Err(SimError::ConfigInvalid(format!(
                "the benchmark family is defined for m in {BENCHMARK_M:?}, got {m}"
            )))
        }
    })
}

/// Plant `(s + k + 4) / ((s - 1 - k)(s - 2 - k))`.
pub fn benchmark_plant(k: f64) -> TransferFunction {
    TransferFunction::new(
        1.0,
        Polynomial::from_descending(&[1.0, k + 4.0]),
        Polynomial::from_roots(&[1.0 + k, 2.0 + k]),
    )
    .expect("family plant is well formed")
}

pub fn benchmark_plants(m: usize) -> Result<Vec<TransferFunction>, SimError> {
    (1..=m).map(|i| benchmark_k(m, i).map(benchmark_plant)).collect()
}

impl ScenarioConfig {
    /// Benchmark scenario with every default.
    pub fn benchmark(topology: Topology, m: usize, kind: TunerKind) -> Result<Self, SimError> {
        let network = build_topology(topology, m, &WeightPolicy::default())?;
        let leader = benchmark_leader();
        let filter = FilterSpec::for_leader(&leader).map_err(|source| SimError::Matching { agent: 0, source })?;
        Ok(ScenarioConfig {
            network,
            plants: benchmark_plants(m)?,
            leader,
            filter,
            tuner: TunerConfig::with_kind(kind),
            reference: ReferenceSpec::default(),
            disturbance: DisturbanceSpec::none(m),
            horizon: DEFAULT_HORIZON,
            step: DEFAULT_STEP,
            stride: DEFAULT_STRIDE,
            initial: InitialConditions::default(),
            mode: Mode::Full,
            monitor: false,
            record_states: false,
        })
    }

    pub fn m(&self) -> usize {
        self.network.m
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let m = self.m();
        let bad = |s: String| Err(SimError::ConfigInvalid(s));
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("step h = {} must be positive", self.step));
        }
        if !(self.horizon >= self.step && self.horizon.is_finite()) {
            return bad(format!("horizon T = {} must be at least h", self.horizon));
        }
        let steps = self.steps();
        if (steps as f64 * self.step - self.horizon).abs() > 1e-9 * self.horizon {
            return bad(format!("horizon {} is not a multiple of the step {}", self.horizon, self.step));
        }
        if self.stride == 0 || steps % self.stride != 0 {
            return bad(format!("record stride {} must divide the step count {steps}", self.stride));
        }
        if self.plants.len() != m {
            return bad(format!("{} plants supplied for {m} agents", self.plants.len()));
        }
        self.network.validate()?;
        self.tuner.validate()?;
        if self.disturbance.nu_u.len() != m || self.disturbance.nu_y.len() != m {
            return bad(format!("disturbance vectors must have {m} entries"));
        }
        if self.disturbance.sup() >= self.reference.bound() {
            return bad(format!(
                "reference bound {} must exceed the disturbance magnitude {}",
                self.reference.bound(),
                self.disturbance.sup()
            ));
        }
        if let ReferenceSpec::Square { period, .. } = self.reference {
            if !(period > 0.0) {
                return bad(format!("square-wave period {period} must be positive"));
            }
        }
        if !lti::is_hurwitz(self.leader.den())? {
            return bad("leader denominator is not Hurwitz".into());
        }
        let n = self.leader.order();
        for (i, plant) in self.plants.iter().enumerate() {
            let agent = i + 1;
            let reason = if plant.relative_degree() != 1 {
                Some(format!("relative degree {} (must be 1)", plant.relative_degree()))
            } else if plant.order() != n {
                Some(format!("order {} differs from the leader order {n}", plant.order()))
            } else if n > 1 && !lti::is_hurwitz(plant.num())? {
                Some(format!("zeros {:?} are not Hurwitz", plant.num().roots()))
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(SimError::PlantInvalid { agent, reason });
            }
        }
        if self.filter.order() + 1 != n {
            return bad(format!("filter order {} must be {}", self.filter.order(), n - 1));
        }
        Ok(())
    }
}

/// Offsets of every block of the flat state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    pub m: usize,
    pub n: usize,
    pub q: usize,
    pub nl: usize,
    /// Parameters per agent.
    pub p: usize,
    pub kind: TunerKind,
    pub x: Range<usize>,
    pub z: Range<usize>,
    pub w: Range<usize>,
    pub leader: Range<usize>,
    pub tuner: Range<usize>,
    pub monitor: Range<usize>,
    pub len: usize,
}

impl StateLayout {
    fn new(m: usize, n: usize, nl: usize, p: usize, kind: TunerKind, monitor: bool) -> Self {
        let q = n - 1;
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let x = take(n * m);
        let z = take(q * m);
        let w = take(q * m);
        let leader = take(nl);
        let tuner = take(TunerState::flat_len(kind, p, m));
        let monitor = take(if monitor { nl * m } else { 0 });
        StateLayout { m, n, q, nl, p, kind, x, z, w, leader, tuner, monitor, len: at }
    }
}

/// Small dense SISO model stored row-major.
#[derive(Debug, Clone)]
struct Siso {
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    gain: f64,
}

impl Siso {
    fn from_tf(tf: &TransferFunction) -> Result<Self, LtiError> {
        let ss = realize_ccf(tf)?;
        let n = ss.order();
        Ok(Siso {
            n,
            a: (0..n * n).map(|k| ss.a[(k / n, k % n)]).collect(),
            b: ss.b.iter().copied().collect(),
            c: ss.c.iter().copied().collect(),
            gain: ss.gain,
        })
    }

    fn output(&self, x: &[f64]) -> f64 {
        self.gain * dot(&self.c, x)
    }

    /// `dx = A x + b u`.
    fn deriv(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        linear_deriv(self.n, &self.a, &self.b, x, u, dx);
    }
}

fn linear_deriv(n: usize, a: &[f64], b: &[f64], x: &[f64], u: f64, dx: &mut [f64]) {
    for r in 0..n {
        dx[r] = dot(&a[r * n..(r + 1) * n], x) + b[r] * u;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Default)]
struct Scratch {
    y: Vec<f64>,
    e: Vec<f64>,
    le: Vec<f64>,
    eta: Vec<f64>,
    u: Vec<f64>,
}

/// Outputs of one evaluation of the loop at a given state.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopSignals {
    pub r: f64,
    pub y: DVector<f64>,
    pub y_leader: f64,
    pub e: DVector<f64>,
    pub u: DVector<f64>,
    pub eta: DVector<f64>,
}

/// A validated scenario with every derived quantity precomputed.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: ScenarioConfig,
    layout: StateLayout,
    mats: NetworkMatrices,
    l_dense: Vec<f64>,
    a_ell: Vec<f64>,
    plants: Vec<Siso>,
    leader: Siso,
    /// Normalized leader `W_l / k_l`, the common error model.
    error_model: Siso,
    lam: Vec<f64>,
    th: Vec<f64>,
    kp: Vec<f64>,
    gains: AgentGains,
    theta_star: Option<Vec<DVector<f64>>>,
    augmented: Option<AugmentedSystem>,
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let cfg = cfg.clone();
        let m = cfg.m();
        let mats = assemble_matrices(&cfg.network)?;
        let n = cfg.leader.order();
        let plants = cfg.plants.iter().map(Siso::from_tf).collect::<Result<Vec<_>, _>>()?;
        let leader = Siso::from_tf(&cfg.leader)?;
        let error_model = Siso { gain: 1.0, ..leader.clone() };
        let kp: Vec<f64> = cfg.plants.iter().map(|p| p.gain()).collect();

        let (p, theta_star, ideal) = match cfg.mode {
            Mode::GainOnly => {
                for (i, plant) in cfg.plants.iter().enumerate() {
                    let same = |a: &Polynomial, b: &Polynomial| (a - b).max_abs_coeff() <= 1e-12;
                    if !same(plant.num(), cfg.leader.num()) || !same(plant.den(), cfg.leader.den()) {
                        return Err(SimError::PlantInvalid {
                            agent: i + 1,
                            reason: "gain-only mode needs plants proportional to the leader".into(),
                        });
                    }
                }
                let star = kp.iter().map(|k| DVector::from_element(1, cfg.leader.gain() / k)).collect();
                (1, Some(star), None)
            }
            Mode::Full | Mode::Matched => {
                let solved: Result<Vec<_>, SimError> = cfg
                    .plants
                    .iter()
                    .enumerate()
                    .map(|(i, plant)| {
                        matching::solve_ideal_gains(plant, &cfg.leader, &cfg.filter)
                            .map_err(|source| SimError::Matching { agent: i + 1, source })
                    })
                    .collect();
                match solved {
                    Ok(g) => (2 * n, Some(g.iter().map(|g| g.theta_star()).collect()), Some(g)),
                    Err(e) if cfg.mode == Mode::Matched => return Err(e),
                    Err(_) => (2 * n, None, None),
                }
            }
        };

        let augmented = match &ideal {
            Some(g) => {
                let ss: Vec<_> = cfg.plants.iter().map(realize_ccf).collect::<Result<_, _>>()?;
                matching::assemble_augmented(&ss, g, &cfg.filter, &mats).ok()
            }
            None => None,
        };
        let sign: Vec<f64> = kp.iter().map(|k| k.signum()).collect();
        let mut gains = AgentGains::resolve(&cfg.tuner, &mats.q_level, &sign, DEFAULT_MU)?;
        gains.mu = match cfg.tuner.mu {
            MuSetting::Fixed(mu) => mu,
            MuSetting::Auto => augmented
                .as_ref()
                .and_then(|aug| {
                    tuners::mu_lower_bound(&aug.a_a, &aug.b_a, &aug.l_hat, gains.gamma_beta_ratio(), 1.0)
                        .ok()
                })
                .unwrap_or(DEFAULT_MU),
        };
        if cfg.monitor && theta_star.is_none() {
            return Err(SimError::ConfigInvalid("the monitor needs solvable ideal gains".into()));
        }

        let layout = StateLayout::new(m, n, leader.n, p, cfg.tuner.kind, cfg.monitor);
        let q = n - 1;
        let lam_m = cfg.filter.lambda();
        Ok(Simulation {
            l_dense: (0..m * m).map(|k| mats.l_m[(k / m, k % m)]).collect(),
            a_ell: (0..m).map(|i| mats.a_ell[(i, i)]).collect(),
            lam: (0..q * q).map(|k| lam_m[(k / q, k % q)]).collect(),
            th: cfg.filter.theta().iter().copied().collect(),
            cfg,
            layout,
            mats,
            plants,
            leader,
            error_model,
            kp,
            gains,
            theta_star,
            augmented,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn network(&self) -> &NetworkMatrices {
        &self.mats
    }

    pub fn gains(&self) -> &AgentGains {
        &self.gains
    }

    pub fn theta_star(&self) -> Option<&[DVector<f64>]> {
        self.theta_star.as_deref()
    }

    /// Matched closed-loop matrices (full and matched modes with solvable
    /// gains).
    pub fn augmented(&self) -> Option<&AugmentedSystem> {
        self.augmented.as_ref()
    }

    /// Lyapunov monitor ingredients for this scenario's tuner.
    pub fn monitor_setup(&self) -> Result<MonitorSetup, SimError> {
        let star = self.theta_star.clone().ok_or(TunerError::MissingIdealGains)?;
        Ok(MonitorSetup::new(
            self.cfg.tuner.kind,
            &self.cfg.leader,
            &self.mats.l_m,
            &self.kp,
            &self.gains,
            star,
        )?)
    }

    pub fn initial_state(&self) -> Result<Vec<f64>, SimError> {
        let l = &self.layout;
        let mut x = vec![0.0; l.len];
        let ic = &self.cfg.initial;
        let mut fill = |range: Range<usize>, src: &[f64], what: &str| -> Result<(), SimError> {
            if src.is_empty() {
                return Ok(());
            }
            if src.len() != range.len() {
                return Err(SimError::ConfigInvalid(format!(
                    "initial {what} needs {} entries, got {}",
                    range.len(),
                    src.len()
                )));
            }
            x[range].copy_from_slice(src);
            Ok(())
        };
        fill(l.x.clone(), &ic.plant, "plant state")?;
        fill(l.leader.clone(), &ic.leader, "leader state")?;
        let pm = l.p * l.m;
        let theta0 = if self.cfg.mode == Mode::Matched {
            let star = self.theta_star.as_ref().expect("matched mode has ideal gains");
            star.iter().flat_map(|v| v.iter().copied()).collect()
        } else if ic.theta.is_empty() {
            vec![0.0; pm]
        } else if ic.theta.len() == pm {
            ic.theta.clone()
        } else {
            return Err(SimError::ConfigInvalid(format!(
                "initial parameters need {pm} entries, got {}",
                ic.theta.len()
            )));
        };
        let state = TunerState::from_initial(l.kind, BlockParams::from_slice(l.p, l.m, &theta0)?);
        x[l.tuner.clone()].copy_from_slice(&state.to_flat());
        Ok(x)
    }

    /// Measurements and controls for reference value `r`; fills `s.y`, `s.e`, `s.le`,
    /// `s.eta`, `s.u` and returns `y_leader`.
    fn signals(&self, r: f64, x: &[f64], s: &mut Scratch) -> f64 {
        let l = &self.layout;
        let (m, n, q, p) = (l.m, l.n, l.q, l.p);
        let yl = self.leader.output(&x[l.leader.clone()]);
        s.y.resize(m, 0.0);
        s.e.resize(m, 0.0);
        s.le.resize(m, 0.0);
        s.eta.resize(p * m, 0.0);
        s.u.resize(m, 0.0);
        for i in 0..m {
            let xi = &x[l.x.start + i * n..l.x.start + (i + 1) * n];
            s.y[i] = self.plants[i].output(xi) + self.cfg.disturbance.nu_y[i];
        }
        for i in 0..m {
            s.e[i] = dot(&self.l_dense[i * m..(i + 1) * m], &s.y) - self.a_ell[i] * yl;
        }
        for j in 0..m {
            s.le[j] = (0..m).map(|i| self.l_dense[i * m + j] * s.e[i]).sum();
        }
        for i in 0..m {
            let eta = &mut s.eta[i * p..(i + 1) * p];
            eta[0] = r;
            if p > 1 {
                eta[1..1 + q].copy_from_slice(&x[l.z.start + i * q..l.z.start + (i + 1) * q]);
                eta[1 + q..1 + 2 * q].copy_from_slice(&x[l.w.start + i * q..l.w.start + (i + 1) * q]);
                eta[p - 1] = s.y[i];
            }
        }
        let theta = &x[l.tuner.start..l.tuner.start + p * m];
        for i in 0..m {
            s.u[i] = dot(&theta[i * p..(i + 1) * p], &s.eta[i * p..(i + 1) * p]);
        }
        yl
    }

    fn rhs(&self, r: f64, x: &[f64], dx: &mut [f64], s: &mut Scratch) {
        let l = &self.layout;
        let (m, n, q, p) = (l.m, l.n, l.q, l.p);
        self.signals(r, x, s);
        let dist = &self.cfg.disturbance;
        for i in 0..m {
            let range = l.x.start + i * n..l.x.start + (i + 1) * n;
            self.plants[i].deriv(&x[range.clone()], s.u[i] + dist.nu_u[i], &mut dx[range]);
            let zr = l.z.start + i * q..l.z.start + (i + 1) * q;
            linear_deriv(q, &self.lam, &self.th, &x[zr.clone()], s.u[i], &mut dx[zr]);
            let wr = l.w.start + i * q..l.w.start + (i + 1) * q;
            linear_deriv(q, &self.lam, &self.th, &x[wr.clone()], s.y[i], &mut dx[wr]);
        }
        self.leader.deriv(&x[l.leader.clone()], r, &mut dx[l.leader.clone()]);
        let tuner_out = &mut dx[l.tuner.clone()];
        if self.cfg.mode == Mode::Matched {
            tuner_out.fill(0.0);
        } else {
            tuners::tuner_derivative(l.kind, p, &x[l.tuner.clone()], &s.le, &s.eta, &self.gains, tuner_out);
        }
        if !l.monitor.is_empty() {
            let star = self.theta_star.as_ref().expect("monitor has ideal gains");
            let nl = l.nl;
            for i in 0..m {
                let v = s.u[i] - dot(star[i].as_slice(), &s.eta[i * p..(i + 1) * p]);
                let range = l.monitor.start + i * nl..l.monitor.start + (i + 1) * nl;
                self.error_model.deriv(&x[range.clone()], self.kp[i] * v, &mut dx[range]);
            }
        }
    }

    /// Evaluates the closed-loop vector field.
    pub fn derivative(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, SimError> {
        if x.len() != self.layout.len {
            return Err(SimError::ConfigInvalid(format!(
                "state has {} entries, layout needs {}",
                x.len(),
                self.layout.len
            )));
        }
        let mut dx = vec![0.0; x.len()];
        self.rhs(reference_signal(t, &self.cfg.reference), x, &mut dx, &mut Scratch::default());
        if dx.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { time: t });
        }
        Ok(dx)
    }

    pub fn loop_signals(&self, t: f64, x: &[f64]) -> LoopSignals {
        let mut s = Scratch::default();
        let r = reference_signal(t, &self.cfg.reference);
        let y_leader = self.signals(r, x, &mut s);
        LoopSignals {
            r,
            y: DVector::from_vec(s.y),
            y_leader,
            e: DVector::from_vec(s.e),
            u: DVector::from_vec(s.u),
            eta: DVector::from_vec(s.eta),
        }
    }

    fn theta_error(&self, x: &[f64]) -> f64 {
        let l = &self.layout;
        match &self.theta_star {
            Some(star) => {
                let theta = &x[l.tuner.start..l.tuner.start + l.p * l.m];
                star.iter()
                    .enumerate()
                    .flat_map(|(i, s)| s.iter().enumerate().map(move |(k, v)| (theta[i * l.p + k] - v).powi(2)))
                    .sum::<f64>()
                    .sqrt()
            }
            None => f64::NAN,
        }
    }

    pub fn run(&self) -> Result<Trajectory, SimError> {
        let mut x = self.initial_state()?;
        let h = self.cfg.step;
        let steps = self.cfg.steps();
        let stride = self.cfg.stride;
        let m = self.layout.m;
        let samples = steps / stride + 1;
        let mut traj = Trajectory {
            times: Vec::with_capacity(samples),
            y: Vec::with_capacity(samples),
            y_leader: Vec::with_capacity(samples),
            e: Vec::with_capacity(samples),
            u: Vec::with_capacity(samples),
            theta_err: Vec::with_capacity(samples),
            states: self.cfg.record_states.then(|| Vec::with_capacity(samples)),
            layout: self.layout.clone(),
            step: h,
            stride,
        };
        let mut scratch = Scratch::default();
        let mut rk = Rk4::new(x.len());
        for k in 0..=steps {
            let t = k as f64 * h;
            if k % stride == 0 {
                let yl = self.signals(reference_signal(t, &self.cfg.reference), &x, &mut scratch);
                traj.times.push(t);
                traj.y.push(DVector::from_column_slice(&scratch.y[..m]));
                traj.y_leader.push(yl);
                traj.e.push(DVector::from_column_slice(&scratch.e[..m]));
                traj.u.push(DVector::from_column_slice(&scratch.u[..m]));
                traj.theta_err.push(self.theta_error(&x));
                if let Some(states) = traj.states.as_mut() {
                    states.push(DVector::from_column_slice(&x));
                }
            }
            if k == steps {
                break;
            }
            // stages inside (t, t + h] see r(t'-), so a switch on a grid
            // point takes effect at the start of the following step
            let reference = &self.cfg.reference;
            let r_at = |tt: f64| {
                if tt > t {
                    reference_left_limit(tt, reference)
                } else {
                    reference_signal(tt, reference)
                }
            };
            rk.step(|tt, xx, dd| self.rhs(r_at(tt), xx, dd, &mut scratch), t, h, &mut x);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonFinite { time: t });
            }
        }
        Ok(traj)
    }
}

/// Validates, prepares and integrates a scenario.
pub fn integrate(cfg: &ScenarioConfig) -> Result<Trajectory, SimError> {
    Simulation::new(cfg)?.run()
}

/// Integrates with parameters frozen at the ideal gains.
pub fn run_matched(cfg: &ScenarioConfig) -> Result<Trajectory, SimError> {
    let mut cfg = cfg.clone();
    cfg.mode = Mode::Matched;
    integrate(&cfg)
}

/// Classical fourth-order Runge-Kutta stepper with reusable buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Rk4 { k1: vec![0.0; dim], k2: vec![0.0; dim], k3: vec![0.0; dim], k4: vec![0.0; dim], tmp: vec![0.0; dim] }
    }

    /// Advances `x` from `t` to `t + h`.
    pub fn step<F>(&mut self, mut f: F, t: f64, h: f64, x: &mut [f64])
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let half = 0.5 * h;
        f(t, x, &mut self.k1);
        for j in 0..x.len() {
            self.tmp[j] = x[j] + half * self.k1[j];
        }
        f(t + half, &self.tmp, &mut self.k2);
        for j in 0..x.len() {
            self.tmp[j] = x[j] + half * self.k2[j];
        }
        f(t + half, &self.tmp, &mut self.k3);
        for j in 0..x.len() {
            self.tmp[j] = x[j] + h * self.k3[j];
        }
        f(t + h, &self.tmp, &mut self.k4);
        for j in 0..x.len() {
            x[j] += h / 6.0 * (self.k1[j] + 2.0 * self.k2[j] + 2.0 * self.k3[j] + self.k4[j]);
        }
    }
}

/// Integrates `x' = f(t, x)` over `steps` fixed steps of size `h` from `t = 0`.
pub fn rk4_integrate<F>(mut f: F, x0: &[f64], h: f64, steps: usize) -> Vec<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut x = x0.to_vec();
    let mut rk = Rk4::new(x.len());
    for k in 0..steps {
        rk.step(&mut f, k as f64 * h, h, &mut x);
    }
    x
}

/// Recorded samples of a run on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub y: Vec<DVector<f64>>,
    pub y_leader: Vec<f64>,
    pub e: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    /// `||theta - theta*||_F`, NaN when the ideal gains are unknown.
    pub theta_err: Vec<f64>,
    pub states: Option<Vec<DVector<f64>>>,
    pub layout: StateLayout,
    pub step: f64,
    pub stride: usize,
}

impl Trajectory {
    pub fn m(&self) -> usize {
        self.layout.m
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Sample spacing.
    pub fn dt(&self) -> f64 {
        self.step * self.stride as f64
    }

    /// `max_t ||e(t)||_inf`.
    pub fn max_error(&self) -> f64 {
        self.e.iter().map(|e| e.amax()).fold(0.0, f64::max)
    }

    /// `||e(T)||_inf`.
    pub fn final_error(&self) -> f64 {
        self.e.last().map_or(f64::NAN, |e| e.amax())
    }

    /// Mean of `||e||_2` over the samples with `t >= from`.
    pub fn window_mean_error(&self, from: f64) -> f64 {
        let vals: Vec<f64> =
            self.times.iter().zip(&self.e).filter(|(t, _)| **t >= from).map(|(_, e)| e.norm()).collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }

    /// `(monitor state, tuner state)` pairs for the Lyapunov monitor.
    pub fn monitor_samples(&self) -> Result<Vec<(DVector<f64>, TunerState)>, SimError> {
        let states = self
            .states
            .as_ref()
            .ok_or_else(|| SimError::ConfigInvalid("state snapshots were not recorded".into()))?;
        let l = &self.layout;
        if l.monitor.is_empty() {
            return Err(SimError::ConfigInvalid("monitor states were not carried".into()));
        }
        states
            .iter()
            .map(|x| {
                let xi = DVector::from_column_slice(&x.as_slice()[l.monitor.clone()]);
                let st = TunerState::from_flat(l.kind, l.p, l.m, &x.as_slice()[l.tuner.clone()])?;
                Ok((xi, st))
            })
            .collect()
    }

    /// Writes the trace as CSV with nine significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let m = self.m();
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|i| format!("y_{i}")));
        header.push("y_leader".into());
        header.extend((1..=m).map(|i| format!("e_{i}")));
        header.extend((1..=m).map(|i| format!("u_{i}")));
        header.push("theta_err_norm".into());
        writeln!(w, "{}", header.join(","))?;
        let mut line = String::new();
        for k in 0..self.len() {
            line.clear();
            let mut push = |v: f64| {
                if !line.is_empty() {
                    line.push(',');
                }
                line.push_str(&format!("{v:.8e}"));
            };
            push(self.times[k]);
            self.y[k].iter().for_each(|v| push(*v));
            push(self.y_leader[k]);
            self.e[k].iter().for_each(|v| push(*v));
            self.u[k].iter().for_each(|v| push(*v));
            push(self.theta_err[k]);
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}
