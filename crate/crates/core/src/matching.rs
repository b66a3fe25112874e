//! Ideal controller gains from the polynomial matching condition, and the
//! matched closed-loop (augmented) matrices.
//!
//! For a plant `k_p n(s)/d(s)` of order `n` and relative degree one, the
//! controller `u = k* r + psi^T z + phi^T w + tau y` with filters
//! `z = (sI - Lambda)^-1 theta u`, `w = (sI - Lambda)^-1 theta y` matches
//! the leader `k_l n_l(s)/d_l(s)` when
//!
//! ```text
//! psi(s) d(s) + (phi(s) + tau d_lambda(s)) k_p n(s)
//!     = d_lambda(s) d(s) - d_lambda(s) d_l(s) n(s) / n_l(s)
//! ```
//!
//! and `k* k_p = k_l`. Here `psi(s) = sum_k psi_k s^k` (the filter is in
//! controllable canonical form, so its input-to-state map is
//! `[1, s, ..., s^(n-2)]^T / d_lambda(s)`).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::linalg;
use crate::lti::{self, companion, LtiError, Polynomial, StateSpaceModel, TransferFunction};
use crate::network::NetworkMatrices;

/// Singular-value threshold (relative) below which the matching system is
/// declared singular.
pub const RANK_TOL: f64 = 1e-10;
/// Remainder tolerance when dividing by the leader numerator.
pub const DIVISION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchingError {
    #[error("{what}: expected degree {expected}, found {found}")]
    DegreeMismatch { what: &'static str, expected: usize, found: usize },
    #[error("plant relative degree must be 1, found {0}")]
    RelativeDegree(usize),
    #[error("plant zeros are not Hurwitz: {0:?}")]
    NonHurwitzZeros(Vec<Complex64>),
    #[error("matching system is singular (sigma_min / sigma_max = {0:.3e}); numerator and denominator share a factor")]
    RankDeficient(f64),
    #[error("filter polynomial {0} is not Hurwitz")]
    FilterNotHurwitz(String),
    #[error("filter polynomial must be monic")]
    FilterNotMonic,
    #[error("leader numerator {n_l} does not divide d_lambda * d_l * n; choose d_lambda = {n_l}")]
    FilterIncompatible { n_l: String },
    #[error("matrix is not Hurwitz (spectral abscissa {0:.3e})")]
    NotHurwitz(f64),
    #[error("dimension mismatch in {0}")]
    DimensionMismatch(&'static str),
    #[error(transparent)]
    Lti(#[from] LtiError),
}

/// Controller filter `(Lambda, theta)` in controllable canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    lambda: DMatrix<f64>,
    theta: DVector<f64>,
    d_lambda: Polynomial,
}

impl FilterSpec {
    /// Companion realization of a monic Hurwitz `d_lambda`. A constant
    /// `d_lambda = 1` gives the empty filter used by first-order plants.
    pub fn from_polynomial(d_lambda: &Polynomial) -> Result<Self, MatchingError> {
        let deg = d_lambda.degree().ok_or(MatchingError::FilterNotMonic)?;
        if !d_lambda.is_monic() {
            return Err(MatchingError::FilterNotMonic);
        }
        if deg > 0 && !lti::is_hurwitz(d_lambda)? {
            return Err(MatchingError::FilterNotHurwitz(d_lambda.to_string()));
        }
        let lambda = if deg == 0 { DMatrix::zeros(0, 0) } else { companion(d_lambda) };
        let mut theta = DVector::zeros(deg);
        if deg > 0 {
            theta[deg - 1] = 1.0;
        }
        Ok(FilterSpec { lambda, theta, d_lambda: d_lambda.clone() })
    }

    /// The filter that always satisfies the divisibility requirement:
    /// `d_lambda` equal to the leader numerator.
    pub fn for_leader(leader: &TransferFunction) -> Result<Self, MatchingError> {
        Self::from_polynomial(leader.num())
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn d_lambda(&self) -> &Polynomial {
        &self.d_lambda
    }

    pub fn order(&self) -> usize {
        self.theta.len()
    }
}

/// Ideal gains of one agent, ordered like the regressor `[r, z, w, y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealGains {
    pub k_star: f64,
    pub psi: DVector<f64>,
    pub phi: DVector<f64>,
    pub tau: f64,
}

impl IdealGains {
    /// Stacked `[k*, psi, phi, tau]`.
    pub fn theta_star(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(2 + self.psi.len() + self.phi.len());
        v.push(self.k_star);
        v.extend(self.psi.iter());
        v.extend(self.phi.iter());
        v.push(self.tau);
        DVector::from_vec(v)
    }

    /// Inverse of [`IdealGains::theta_star`].
    pub fn from_theta(theta: &DVector<f64>) -> Result<Self, MatchingError> {
        let len = theta.len();
        if len < 2 || len % 2 != 0 {
            return Err(MatchingError::DimensionMismatch("theta length must be even and >= 2"));
        }
        let q = (len - 2) / 2;
        Ok(IdealGains {
            k_star: theta[0],
            psi: theta.rows(1, q).into_owned(),
            phi: theta.rows(1 + q, q).into_owned(),
            tau: theta[len - 1],
        })
    }
}

/// Coefficient-matching system `S theta_s = Pi` of one agent. Unknowns are
/// `[psi_0 .. psi_(n-2), c_0 .. c_(n-1)]` with `c(s) = phi(s) + tau d_lambda(s)`;
/// row `k` matches the coefficient of `s^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingSystem {
    pub s_bar: DMatrix<f64>,
    pub pi_bar: DVector<f64>,
    pub k_star: f64,
}

fn check_plant(plant: &TransferFunction, leader: &TransferFunction) -> Result<usize, MatchingError> {
    let n = plant.order();
    if leader.order() != n {
        return Err(MatchingError::DegreeMismatch { what: "leader order", expected: n, found: leader.order() });
    }
    if plant.relative_degree() != 1 {
        return Err(MatchingError::RelativeDegree(plant.relative_degree()));
    }
    if leader.relative_degree() != 1 {
        return Err(MatchingError::RelativeDegree(leader.relative_degree()));
    }
    if n > 1 && !lti::is_hurwitz(plant.num())? {
        return Err(MatchingError::NonHurwitzZeros(plant.num().roots()));
    }
    Ok(n)
}

/// Right-hand side `d_lambda d - d_lambda d_l n / n_l`.
fn target_polynomial(
    plant: &TransferFunction,
    leader: &TransferFunction,
    filter: &FilterSpec,
) -> Result<Polynomial, MatchingError> {
    let dl = filter.d_lambda();
    let (quot, rem) = (&(dl * leader.den()) * plant.num()).div_rem(leader.num());
    let scale = quot.max_abs_coeff().max(1.0);
    if rem.max_abs_coeff() > DIVISION_TOL * scale {
        return Err(MatchingError::FilterIncompatible { n_l: leader.num().to_string() });
    }
    Ok(&(dl * plant.den()) - &quot)
}

pub fn build_matching_system(
    plant: &TransferFunction,
    leader: &TransferFunction,
    filter: &FilterSpec,
) -> Result<MatchingSystem, MatchingError> {
    let n = check_plant(plant, leader)?;
    if filter.order() + 1 != n {
        return Err(MatchingError::DegreeMismatch {
            what: "filter order",
            expected: n - 1,
            found: filter.order(),
        });
    }
    let pi = target_polynomial(plant, leader, filter)?;
    let dim = 2 * n - 1;
    if pi.degree().is_some_and(|d| d >= dim) {
        return Err(MatchingError::DegreeMismatch {
            what: "matching target",
            expected: dim - 1,
            found: pi.degree().unwrap_or(0),
        });
    }
    let kp = plant.gain();
    let mut s_bar = DMatrix::zeros(dim, dim);
    for j in 0..n - 1 {
        for (k, &dk) in plant.den().coeffs().iter().enumerate() {
            s_bar[(j + k, j)] = dk;
        }
    }
    for j in 0..n {
        for (k, &nk) in plant.num().coeffs().iter().enumerate() {
            s_bar[(j + k, n - 1 + j)] = kp * nk;
        }
    }
    let pi_bar = DVector::from_fn(dim, |k, _| pi.coeff(k));
    Ok(MatchingSystem { s_bar, pi_bar, k_star: leader.gain() / kp })
}

pub fn solve_ideal_gains(
    plant: &TransferFunction,
    leader: &TransferFunction,
    filter: &FilterSpec,
) -> Result<IdealGains, MatchingError> {
    let sys = build_matching_system(plant, leader, filter)?;
    let n = plant.order();
    let svd = sys.s_bar.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if ratio <= RANK_TOL {
        return Err(MatchingError::RankDeficient(ratio));
    }
    let sol = sys
        .s_bar
        .clone()
        .lu()
        .solve(&sys.pi_bar)
        .ok_or(MatchingError::RankDeficient(ratio))?;
    let psi = sol.rows(0, n - 1).into_owned();
    let c = sol.rows(n - 1, n).into_owned();
    // d_lambda is monic of degree n-1, so tau is the leading coefficient of c(s)
    let tau = c[n - 1];
    let dl = filter.d_lambda();
    let phi = DVector::from_fn(n - 1, |k, _| c[k] - tau * dl.coeff(k));
    Ok(IdealGains { k_star: sys.k_star, psi, phi, tau })
}

/// Largest absolute coefficient mismatch of the matching identity (and of
/// `k* k_p = k_l`) for the supplied gains.
pub fn verify_matching(
    gains: &IdealGains,
    plant: &TransferFunction,
    leader: &TransferFunction,
    filter: &FilterSpec,
) -> Result<f64, MatchingError> {
    let pi = target_polynomial(plant, leader, filter)?;
    let psi = Polynomial::new(gains.psi.iter().copied().collect());
    let phi = Polynomial::new(gains.phi.iter().copied().collect());
    let c = &phi + &filter.d_lambda().scale(gains.tau);
    let lhs = &lti::poly_convolve(&psi, plant.den())
        + &lti::poly_convolve(&c, plant.num()).scale(plant.gain());
    let gain_gap = (gains.k_star * plant.gain() - leader.gain()).abs();
    Ok((&lhs - &pi).max_abs_coeff().max(gain_gap))
}

/// Matched closed loop of all agents, states ordered `[x | z | w]` with
/// agent blocks contiguous inside each group.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem {
    pub a_a: DMatrix<f64>,
    /// Reference input matrix, one column per agent (multiplies `k* r`).
    pub b_a: DMatrix<f64>,
    /// Output matrix, one row per agent.
    pub c_a: DMatrix<f64>,
    /// `diag(L_m (x) I_n, I, I)`.
    pub l_hat: DMatrix<f64>,
    /// `diag(A_l (x) I_n, I, I)`.
    pub a_hat_ell: DMatrix<f64>,
}

pub fn assemble_augmented(
    plants: &[StateSpaceModel],
    gains: &[IdealGains],
    filter: &FilterSpec,
    mats: &NetworkMatrices,
) -> Result<AugmentedSystem, MatchingError> {
    let m = plants.len();
    if m == 0 || gains.len() != m || mats.m() != m {
        return Err(MatchingError::DimensionMismatch("agent count"));
    }
    let n = plants[0].order();
    let q = filter.order();
    if plants.iter().any(|p| p.order() != n) || q + 1 != n {
        return Err(MatchingError::DimensionMismatch("plant or filter order"));
    }
    if gains.iter().any(|g| g.psi.len() != q || g.phi.len() != q) {
        return Err(MatchingError::DimensionMismatch("gain vector length"));
    }
    let dim = m * (n + 2 * q);
    let zo = m * n;
    let wo = zo + m * q;
    let mut a_a = DMatrix::zeros(dim, dim);
    let mut b_a = DMatrix::zeros(dim, m);
    let mut c_a = DMatrix::zeros(m, dim);
    let lam = filter.lambda();
    let th = filter.theta();
    for (i, (p, g)) in plants.iter().zip(gains).enumerate() {
        let (xi, zi, wi) = (i * n, zo + i * q, wo + i * q);
        let kc = &p.c * p.gain;
        a_a.view_mut((xi, xi), (n, n)).copy_from(&(&p.a + &p.b * &kc * g.tau));
        a_a.view_mut((xi, zi), (n, q)).copy_from(&(&p.b * g.psi.transpose()));
        a_a.view_mut((xi, wi), (n, q)).copy_from(&(&p.b * g.phi.transpose()));
        a_a.view_mut((zi, xi), (q, n)).copy_from(&(th * &kc * g.tau));
        a_a.view_mut((zi, zi), (q, q)).copy_from(&(lam + th * g.psi.transpose()));
        a_a.view_mut((zi, wi), (q, q)).copy_from(&(th * g.phi.transpose()));
        a_a.view_mut((wi, xi), (q, n)).copy_from(&(th * &kc));
        a_a.view_mut((wi, wi), (q, q)).copy_from(lam);
        b_a.view_mut((xi, i), (n, 1)).copy_from(&p.b);
        b_a.view_mut((zi, i), (q, 1)).copy_from(th);
        c_a.view_mut((i, xi), (1, n)).copy_from(&kc);
    }
    let lift = |net: &DMatrix<f64>| {
        let mut out = DMatrix::identity(dim, dim);
        out.view_mut((0, 0), (zo, zo))
            .copy_from(&linalg::kron(net, &DMatrix::identity(n, n)));
        out
    };
    Ok(AugmentedSystem {
        a_a,
        b_a,
        c_a,
        l_hat: lift(&mats.l_m),
        a_hat_ell: lift(&mats.a_ell),
    })
}

/// Solves `A^T P + P A = -Q` and reports `||P B - C^T||_max`.
pub fn lyapunov_diagnostics(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, f64), MatchingError> {
    if b.nrows() != a.nrows() || c.ncols() != a.nrows() || q.shape() != a.shape() {
        return Err(MatchingError::DimensionMismatch("lyapunov operands"));
    }
    let abscissa = linalg::spectral_abscissa(a);
    if abscissa >= 0.0 {
        return Err(MatchingError::NotHurwitz(abscissa));
    }
    let p = linalg::solve_lyapunov(a, q).ok_or(MatchingError::NotHurwitz(abscissa))?;
    let residual = (&p * b - c.transpose()).amax();
    Ok((p, residual))
}
