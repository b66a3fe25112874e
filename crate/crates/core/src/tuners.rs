//! Adaptive parameter laws: the distributed gradient law and the two
//! high-order tuners, plus the regressor, normalization and stability
//! diagnostics.
//!
//! Parameters are stored per agent: agent `i` owns a `p`-vector `theta_i`
//! (the `i`-th diagonal block of the global `(p m) x m` parameter matrix).
//! Off-block entries of the global matrix are structurally zero.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg;
use crate::lti::{realize_ccf, TransferFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TunerError {
    #[error("invalid tuner configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("matrix is not Hurwitz (spectral abscissa {0:.3e})")]
    NotHurwitz(f64),
    #[error("ideal gains are required for the Lyapunov monitor")]
    MissingIdealGains,
    #[error("{0}")]
    Unsupported(&'static str),
    #[error("no positive-real storage certificate found for the leader error model")]
    NotSpr,
}

fn dim_check(what: &'static str, expected: usize, found: usize) -> Result<(), TunerError> {
    if expected == found {
        Ok(())
    } else {
        Err(TunerError::DimensionMismatch { what, expected, found })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TunerKind {
    Gradient,
    Ht1,
    Ht2,
}

impl TunerKind {
    pub const ALL: [TunerKind; 3] = [TunerKind::Gradient, TunerKind::Ht1, TunerKind::Ht2];

    pub fn name(self) -> &'static str {
        match self {
            TunerKind::Gradient => "gradient",
            TunerKind::Ht1 => "ht1",
            TunerKind::Ht2 => "ht2",
        }
    }

    /// Number of parameter blocks carried in the state.
    pub fn blocks(self) -> usize {
        match self {
            TunerKind::Gradient => 1,
            TunerKind::Ht1 | TunerKind::Ht2 => 2,
        }
    }
}

impl fmt::Display for TunerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TunerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "gradient" => Ok(TunerKind::Gradient),
            "ht1" => Ok(TunerKind::Ht1),
            "ht2" => Ok(TunerKind::Ht2),
            other => Err(format!("unknown tuner `{other}`")),
        }
    }
}

/// Per-level multiplier applied to both gamma and beta.
#[derive(Debug, Clone, PartialEq)]
pub enum QScaling {
    /// `base^(q - 1)`.
    Geometric { base: f64 },
    /// Explicit multipliers for q = 1, 2, ...; the last entry repeats.
    Table(Vec<f64>),
}

impl Default for QScaling {
    fn default() -> Self {
        QScaling::Geometric { base: 2.0 }
    }
}

impl QScaling {
    pub fn factor(&self, q: usize) -> f64 {
        let idx = q.max(1) - 1;
        match self {
            QScaling::Geometric { base } => base.powi(idx as i32),
            QScaling::Table(t) => t[idx.min(t.len() - 1)],
        }
    }

    fn validate(&self) -> Result<(), TunerError> {
        match self {
            QScaling::Geometric { base } if !(*base >= 1.0 && base.is_finite()) => Err(
                TunerError::InvalidConfig(format!("q-scaling base {base} must be >= 1")),
            ),
            QScaling::Table(t) if t.is_empty() || t.iter().any(|v| !(*v > 0.0 && v.is_finite())) => {
                Err(TunerError::InvalidConfig("q-scaling table needs positive entries".into()))
            }
            QScaling::Table(t) if t.windows(2).any(|w| w[1] < w[0]) => Err(
                TunerError::InvalidConfig("q-scaling table must be non-decreasing in q".into()),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuSetting {
    /// Use the Lyapunov lower bound when ideal gains are available, else
    /// [`DEFAULT_MU`].
    Auto,
    Fixed(f64),
}

/// The Lyapunov bound is usually in the 1e5..1e7 range for unstable plants,
/// which makes the Θ₁ relaxation far too stiff for RK4 at the default step.
pub const DEFAULT_MU: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct TunerConfig {
    pub kind: TunerKind,
    pub gamma: f64,
    pub beta: f64,
    pub mu: MuSetting,
    pub q_scaling: QScaling,
}

impl Default for TunerConfig {
    fn default() -> Self {
        TunerConfig {
            kind: TunerKind::Gradient,
            gamma: 1.0,
            beta: 1.0,
            mu: MuSetting::Fixed(DEFAULT_MU),
            q_scaling: QScaling::default(),
        }
    }
}

impl TunerConfig {
    pub fn with_kind(kind: TunerKind) -> Self {
        TunerConfig { kind, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), TunerError> {
        for (name, v) in [("gamma", self.gamma), ("beta", self.beta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TunerError::InvalidConfig(format!("{name} = {v} must be positive")));
            }
        }
        if let MuSetting::Fixed(mu) = self.mu {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(TunerError::InvalidConfig(format!("mu = {mu} must be non-negative")));
            }
        }
        self.q_scaling.validate()
    }
}

/// Gains resolved per agent from a [`TunerConfig`] and the q-levels.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentGains {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub sign_kp: Vec<f64>,
    pub mu: f64,
}

impl AgentGains {
    pub fn resolve(
        cfg: &TunerConfig,
        q_level: &[usize],
        sign_kp: &[f64],
        mu: f64,
    ) -> Result<Self, TunerError> {
        cfg.validate()?;
        dim_check("sign vector", q_level.len(), sign_kp.len())?;
        Ok(AgentGains {
            gamma: q_level.iter().map(|&q| cfg.gamma * cfg.q_scaling.factor(q)).collect(),
            beta: q_level.iter().map(|&q| cfg.beta * cfg.q_scaling.factor(q)).collect(),
            sign_kp: sign_kp.iter().map(|s| s.signum()).collect(),
            mu,
        })
    }

    pub fn uniform(m: usize, gamma: f64, beta: f64, sign: f64, mu: f64) -> Self {
        AgentGains { gamma: vec![gamma; m], beta: vec![beta; m], sign_kp: vec![sign; m], mu }
    }

    pub fn m(&self) -> usize {
        self.gamma.len()
    }

    /// `max_i gamma_i / beta_i`.
    pub fn gamma_beta_ratio(&self) -> f64 {
        self.gamma.iter().zip(&self.beta).map(|(g, b)| g / b).fold(0.0, f64::max)
    }
}

/// Per-agent parameter blocks of length `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    p: usize,
    m: usize,
    data: Vec<f64>,
}

impl BlockParams {
    pub fn zeros(p: usize, m: usize) -> Self {
        BlockParams { p, m, data: vec![0.0; p * m] }
    }

    pub fn from_blocks(blocks: &[DVector<f64>]) -> Result<Self, TunerError> {
        let p = blocks.first().map_or(0, |b| b.len());
        for b in blocks {
            dim_check("parameter block", p, b.len())?;
        }
        Ok(BlockParams { p, m: blocks.len(), data: blocks.iter().flat_map(|b| b.iter().copied()).collect() })
    }

    pub fn from_slice(p: usize, m: usize, data: &[f64]) -> Result<Self, TunerError> {
        dim_check("parameter storage", p * m, data.len())?;
        Ok(BlockParams { p, m, data: data.to_vec() })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Global `(p m) x m` matrix with agent `i`'s block in column `i`.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.p * self.m, self.m);
        for i in 0..self.m {
            for k in 0..self.p {
                out[(i * self.p + k, i)] = self.data[i * self.p + k];
            }
        }
        out
    }

    /// Control inputs `u_i = theta_i^T eta_i`.
    pub fn control(&self, eta_bar: &DVector<f64>) -> Result<DVector<f64>, TunerError> {
        dim_check("regressor", self.p * self.m, eta_bar.len())?;
        Ok(DVector::from_fn(self.m, |i, _| dot(self.block(i), &eta_bar.as_slice()[i * self.p..(i + 1) * self.p])))
    }

    /// Frobenius distance to per-agent targets.
    pub fn distance(&self, targets: &[DVector<f64>]) -> f64 {
        (0..self.m)
            .map(|i| self.block(i).iter().zip(targets[i].iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TunerState {
    Gradient { theta: BlockParams },
    Ht1 { theta1: BlockParams, xi1: BlockParams },
    Ht2 { theta2: BlockParams, theta2_dot: BlockParams },
}

impl TunerState {
    /// Starts every parameter block at `theta0` (velocities at zero).
    pub fn from_initial(kind: TunerKind, theta0: BlockParams) -> Self {
        match kind {
            TunerKind::Gradient => TunerState::Gradient { theta: theta0 },
            TunerKind::Ht1 => TunerState::Ht1 { xi1: theta0.clone(), theta1: theta0 },
            TunerKind::Ht2 => {
                let dot = BlockParams::zeros(theta0.p, theta0.m);
                TunerState::Ht2 { theta2: theta0, theta2_dot: dot }
            }
        }
    }

    pub fn kind(&self) -> TunerKind {
        match self {
            TunerState::Gradient { .. } => TunerKind::Gradient,
            TunerState::Ht1 { .. } => TunerKind::Ht1,
            TunerState::Ht2 { .. } => TunerKind::Ht2,
        }
    }

    /// Parameters used in the control law.
    pub fn control_params(&self) -> &BlockParams {
        match self {
            TunerState::Gradient { theta } => theta,
            TunerState::Ht1 { theta1, .. } => theta1,
            TunerState::Ht2 { theta2, .. } => theta2,
        }
    }

    pub fn flat_len(kind: TunerKind, p: usize, m: usize) -> usize {
        kind.blocks() * p * m
    }

    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            TunerState::Gradient { theta } => theta.data.clone(),
            TunerState::Ht1 { theta1: a, xi1: b } | TunerState::Ht2 { theta2: a, theta2_dot: b } => {
                a.data.iter().chain(&b.data).copied().collect()
            }
        }
    }

    pub fn from_flat(kind: TunerKind, p: usize, m: usize, flat: &[f64]) -> Result<Self, TunerError> {
        dim_check("tuner state", Self::flat_len(kind, p, m), flat.len())?;
        let part = |k: usize| BlockParams::from_slice(p, m, &flat[k * p * m..(k + 1) * p * m]);
        Ok(match kind {
            TunerKind::Gradient => TunerState::Gradient { theta: part(0)? },
            TunerKind::Ht1 => TunerState::Ht1 { theta1: part(0)?, xi1: part(1)? },
            TunerKind::Ht2 => TunerState::Ht2 { theta2: part(0)?, theta2_dot: part(1)? },
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Stacks `[r, z_i, w_i, y_i]` for every agent.
pub fn regressor(
    r: f64,
    z: &[DVector<f64>],
    omega: &[DVector<f64>],
    y: &DVector<f64>,
) -> Result<DVector<f64>, TunerError> {
    let m = y.len();
    dim_check("z blocks", m, z.len())?;
    dim_check("omega blocks", m, omega.len())?;
    let q = z.first().map_or(0, |v| v.len());
    let mut out = Vec::with_capacity(m * (2 * q + 2));
    for i in 0..m {
        dim_check("z block", q, z[i].len())?;
        dim_check("omega block", q, omega[i].len())?;
        out.push(r);
        out.extend(z[i].iter());
        out.extend(omega[i].iter());
        out.push(y[i]);
    }
    Ok(DVector::from_vec(out))
}

/// `1 + mu ||eta||^2`.
pub fn normalization(eta_bar: &DVector<f64>, mu: f64) -> f64 {
    normalization_slice(eta_bar.as_slice(), mu)
}

pub(crate) fn normalization_slice(eta: &[f64], mu: f64) -> f64 {
    1.0 + mu * eta.iter().map(|v| v * v).sum::<f64>()
}

fn check_rhs_dims(
    params: &BlockParams,
    e_bar: &DVector<f64>,
    eta_bar: &DVector<f64>,
    gains: &AgentGains,
    l_m: &DMatrix<f64>,
) -> Result<DVector<f64>, TunerError> {
    let m = params.m;
    dim_check("error vector", m, e_bar.len())?;
    dim_check("regressor", params.p * m, eta_bar.len())?;
    dim_check("agent gains", m, gains.m())?;
    dim_check("Laplacian", m, l_m.nrows())?;
    dim_check("Laplacian", m, l_m.ncols())?;
    Ok(l_m.transpose() * e_bar)
}

/// Writes the derivative of a flat tuner state. `le = L_m^T e`.
pub(crate) fn tuner_derivative(
    kind: TunerKind,
    p: usize,
    state: &[f64],
    le: &[f64],
    eta: &[f64],
    gains: &AgentGains,
    out: &mut [f64],
) {
    let m = le.len();
    let pm = p * m;
    match kind {
        TunerKind::Gradient => gradient_into(p, le, eta, gains, 1.0, &mut out[..pm]),
        TunerKind::Ht1 => {
            let norm = normalization_slice(eta, gains.mu);
            let (theta1, xi1) = state.split_at(pm);
            for i in 0..m {
                let b = gains.beta[i] * norm;
                for k in i * p..(i + 1) * p {
                    out[k] = -b * (theta1[k] - xi1[k]);
                }
            }
            gradient_into(p, le, eta, gains, 1.0, &mut out[pm..2 * pm]);
        }
        TunerKind::Ht2 => {
            let norm = normalization_slice(eta, gains.mu);
            let dot_part = &state[pm..2 * pm];
            out[..pm].copy_from_slice(dot_part);
            gradient_into(p, le, eta, gains, 1.0 / norm, &mut out[pm..2 * pm]);
            for i in 0..m {
                let b = gains.beta[i];
                for k in i * p..(i + 1) * p {
                    out[pm + k] = b * (out[pm + k] - dot_part[k]);
                }
            }
        }
    }
}

/// `out_i = -scale * sign_i * gamma_i * le_i * eta_i`.
fn gradient_into(p: usize, le: &[f64], eta: &[f64], gains: &AgentGains, scale: f64, out: &mut [f64]) {
    for (i, &lei) in le.iter().enumerate() {
        let c = -scale * gains.sign_kp[i] * gains.gamma[i] * lei;
        for k in i * p..(i + 1) * p {
            out[k] = c * eta[k];
        }
    }
}

fn run_rhs(
    kind: TunerKind,
    state: &TunerState,
    e_bar: &DVector<f64>,
    eta_bar: &DVector<f64>,
    gains: &AgentGains,
    l_m: &DMatrix<f64>,
) -> Result<TunerState, TunerError> {
    let params = state.control_params();
    let le = check_rhs_dims(params, e_bar, eta_bar, gains, l_m)?;
    let flat = state.to_flat();
    let mut out = vec![0.0; flat.len()];
    tuner_derivative(kind, params.p, &flat, le.as_slice(), eta_bar.as_slice(), gains, &mut out);
    TunerState::from_flat(kind, params.p, params.m, &out)
}

/// Distributed gradient law `theta_i' = -sign(k_pi) gamma_i (L_m^T e)_i eta_i`.
pub fn gradient_rhs(
    theta: &BlockParams,
    e_bar: &DVector<f64>,
    eta_bar: &DVector<f64>,
    gains: &AgentGains,
    l_m: &DMatrix<f64>,
) -> Result<BlockParams, TunerError> {
    let state = TunerState::Gradient { theta: theta.clone() };
    match run_rhs(TunerKind::Gradient, &state, e_bar, eta_bar, gains, l_m)? {
        TunerState::Gradient { theta } => Ok(theta),
        _ => unreachable!(),
    }
}

/// First high-order tuner; returns `(theta1', xi1')`.
pub fn ht1_rhs(
    theta1: &BlockParams,
    xi1: &BlockParams,
    e_bar: &DVector<f64>,
    eta_bar: &DVector<f64>,
    gains: &AgentGains,
    l_m: &DMatrix<f64>,
) -> Result<(BlockParams, BlockParams), TunerError> {
    dim_check("xi1 storage", theta1.data.len(), xi1.data.len())?;
    let state = TunerState::Ht1 { theta1: theta1.clone(), xi1: xi1.clone() };
    match run_rhs(TunerKind::Ht1, &state, e_bar, eta_bar, gains, l_m)? {
        TunerState::Ht1 { theta1, xi1 } => Ok((theta1, xi1)),
        _ => unreachable!(),
    }
}

/// Second high-order tuner; returns `(theta2', theta2'')`.
pub fn ht2_rhs(
    theta2: &BlockParams,
    theta2_dot: &BlockParams,
    e_bar: &DVector<f64>,
    eta_bar: &DVector<f64>,
    gains: &AgentGains,
    l_m: &DMatrix<f64>,
) -> Result<(BlockParams, BlockParams), TunerError> {
    dim_check("velocity storage", theta2.data.len(), theta2_dot.data.len())?;
    let state = TunerState::Ht2 { theta2: theta2.clone(), theta2_dot: theta2_dot.clone() };
    match run_rhs(TunerKind::Ht2, &state, e_bar, eta_bar, gains, l_m)? {
        TunerState::Ht2 { theta2, theta2_dot } => Ok((theta2, theta2_dot)),
        _ => unreachable!(),
    }
}

/// `2 (gamma_m / beta_m) ||B_a^T L_hat P_a||_F^2` with `P_a` solving
/// `A_a^T P_a + P_a A_a = -2 I`.
pub fn mu_lower_bound(
    a_a: &DMatrix<f64>,
    b_a: &DMatrix<f64>,
    l_hat: &DMatrix<f64>,
    gamma_m: f64,
    beta_m: f64,
) -> Result<f64, TunerError> {
    let n = a_a.nrows();
    dim_check("B_a rows", n, b_a.nrows())?;
    dim_check("L_hat", n, l_hat.nrows())?;
    let abscissa = linalg::spectral_abscissa(a_a);
    if abscissa >= 0.0 {
        return Err(TunerError::NotHurwitz(abscissa));
    }
    let q = DMatrix::identity(n, n) * 2.0;
    let p = linalg::solve_lyapunov(a_a, &q).ok_or(TunerError::NotHurwitz(abscissa))?;
    let prod = b_a.transpose() * l_hat * p;
    Ok(2.0 * gamma_m / beta_m * prod.norm_squared())
}

/// Ingredients of the Lyapunov function used to monitor adaptive runs.
///
/// Every agent's tracking error `y_i - y_l` is the output of the common
/// model `W_l / k_l = c (sI - A)^-1 b` driven by `k_pi (theta_i - theta*_i)^T eta_i`.
/// With `xi` the stacked states of those models, `M = L_m^T L_m` and a
/// storage matrix `P` (`P b = c^T`, `A^T P + P A = -Q < 0`),
///
/// ```text
/// V = xi^T (M (x) P) xi + sum_i |k_pi| / gamma_i * (parameter terms)_i
/// ```
///
/// where the parameter terms are `|theta_i - theta*_i|^2` for the gradient
/// law and `|theta1_i - xi1_i|^2 + |xi1_i - theta*_i|^2` for the first
/// high-order tuner.
#[derive(Debug, Clone)]
pub struct MonitorSetup {
    kind: TunerKind,
    pub storage: DMatrix<f64>,
    pub dissipation: DMatrix<f64>,
    weighted_storage: DMatrix<f64>,
    weights: Vec<f64>,
    theta_star: Vec<DVector<f64>>,
    certified_mu: f64,
}

impl MonitorSetup {
    pub fn new(
        kind: TunerKind,
        leader: &TransferFunction,
        l_m: &DMatrix<f64>,
        kp: &[f64],
        gains: &AgentGains,
        theta_star: Vec<DVector<f64>>,
    ) -> Result<Self, TunerError> {
        if kind == TunerKind::Ht2 {
            return Err(TunerError::Unsupported(
                "the Lyapunov monitor covers the gradient law and the first high-order tuner",
            ));
        }
        let m = kp.len();
        if theta_star.len() != m {
            return Err(TunerError::MissingIdealGains);
        }
        dim_check("agent gains", m, gains.m())?;
        dim_check("Laplacian", m, l_m.nrows())?;
        let model = realize_ccf(leader).map_err(|_| TunerError::NotSpr)?;
        let c = model.c.transpose();
        let cert = linalg::kyp_certificate(&model.a, &model.b, &c).ok_or(TunerError::NotSpr)?;
        let mm = l_m.transpose() * l_m;
        let weighted_storage = linalg::kron(&mm, &cert.p);
        let weights: Vec<f64> = (0..m).map(|i| kp[i].abs() / gains.gamma[i]).collect();

        // smallest mu making the cross term of the first high-order tuner
        // dominated: 2 K^2 / min_i(w_i beta_i) with K = ||G R^-T||_2
        let nl = model.a.nrows();
        let ic = linalg::kron(&DMatrix::identity(m, m), &DMatrix::from_row_slice(1, nl, c.as_slice()));
        let g = DMatrix::from_diagonal(&DVector::from_column_slice(kp)) * &mm * ic;
        let mq = linalg::kron(&mm, &cert.q);
        let k2 = match mq.cholesky() {
            Some(ch) => {
                let x = ch.l().solve_lower_triangular(&g.transpose()).unwrap_or_else(|| g.transpose());
                let s = x.singular_values().max();
                s * s
            }
            None => f64::INFINITY,
        };
        let wb = (0..m).map(|i| weights[i] * gains.beta[i]).fold(f64::INFINITY, f64::min);
        Ok(MonitorSetup {
            kind,
            storage: cert.p,
            dissipation: cert.q,
            weighted_storage,
            weights,
            theta_star,
            certified_mu: 2.0 * k2 / wb,
        })
    }

    pub fn kind(&self) -> TunerKind {
        self.kind
    }

    /// Normalization weight above which `V` is non-increasing for the first
    /// high-order tuner (zero for the gradient law).
    pub fn certified_mu(&self) -> f64 {
        match self.kind {
            TunerKind::Ht1 => self.certified_mu,
            _ => 0.0,
        }
    }

    pub fn value(&self, xi: &DVector<f64>, state: &TunerState) -> Result<f64, TunerError> {
        dim_check("monitor state", self.weighted_storage.nrows(), xi.len())?;
        if state.kind() != self.kind {
            return Err(TunerError::InvalidConfig("tuner kind differs from monitor".into()));
        }
        let plant_part = xi.dot(&(&self.weighted_storage * xi));
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let mut param_part = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            let star = self.theta_star[i].as_slice();
            param_part += w * match state {
                TunerState::Gradient { theta } => sq(theta.block(i), star),
                TunerState::Ht1 { theta1, xi1 } => {
                    sq(theta1.block(i), xi1.block(i)) + sq(xi1.block(i), star)
                }
                TunerState::Ht2 { .. } => unreachable!(),
            };
        }
        Ok(plant_part + param_part)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorReport {
    pub values: Vec<f64>,
    pub max_value: f64,
    /// Largest positive step-to-step increase of `V` (0 if none).
    pub max_increment: f64,
    pub worst_sample: usize,
}

impl MonitorReport {
    pub fn non_increasing(&self, rel_tol: f64) -> bool {
        self.max_increment <= rel_tol * self.max_value
    }
}

/// Evaluates `V` along sampled `(xi, tuner state)` pairs.
pub fn lyapunov_monitor<'a, I>(samples: I, setup: &MonitorSetup) -> Result<MonitorReport, TunerError>
where
    I: IntoIterator<Item = (&'a DVector<f64>, TunerState)>,
{
    let values = samples
        .into_iter()
        .map(|(xi, st)| setup.value(xi, &st))
        .collect::<Result<Vec<_>, _>>()?;
    let max_value = values.iter().copied().fold(0.0, f64::max);
    let (worst_sample, max_increment) = values
        .windows(2)
        .enumerate()
        .map(|(k, w)| (k + 1, (w[1] - w[0]).max(0.0)))
        .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    Ok(MonitorReport { values, max_value, max_increment, worst_sample })
}
