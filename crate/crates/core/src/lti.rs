//! Polynomial and rational-function algebra for SISO agent and leader
//! models, controllable canonical realization, and stability / positive-real
//! checks.
//!
//! Polynomials store coefficients in ascending powers: `coeffs[k]`
//! multiplies `s^k`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::linalg;

/// Real-part tolerance used when deciding whether a root lies in the open
/// left half plane.
pub const ROOT_TOL: f64 = 1e-9;
/// Margin for the frequency-domain positive-real test.
pub const SPR_MARGIN: f64 = 1e-9;
/// Default number of log-spaced samples for [`is_spr`].
pub const SPR_GRID_POINTS: usize = 4000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LtiError {
    #[error("transfer function is not strictly proper")]
    NotStrictlyProper,
    #[error("transfer function is improper (numerator degree exceeds denominator degree)")]
    Improper,
    #[error("relative degree must be 1, found {0}")]
    WrongRelativeDegree(usize),
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("{0} polynomial is not monic")]
    NotMonic(&'static str),
    #[error("high-frequency gain must be nonzero")]
    ZeroGain,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// Builds a polynomial from ascending coefficients, trimming exact
    /// trailing zeros.
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Polynomial { coeffs }
    }

    /// Builds from descending coefficients (`[1, 5, 6]` is `s^2 + 5s + 6`).
    pub fn from_descending(coeffs: &[f64]) -> Self {
        Self::new(coeffs.iter().rev().copied().collect())
    }

    pub fn zero() -> Self {
        Polynomial { coeffs: Vec::new() }
    }

    pub fn one() -> Self {
        Polynomial { coeffs: vec![1.0] }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    /// Monic polynomial with the given real roots.
    pub fn from_roots(roots: &[f64]) -> Self {
        roots
            .iter()
            .fold(Self::one(), |acc, r| poly_convolve(&acc, &Self::new(vec![-r, 1.0])))
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of `s^k` (zero beyond the degree).
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn leading(&self) -> f64 {
        self.coeffs.last().copied().unwrap_or(0.0)
    }

    pub fn is_monic(&self) -> bool {
        self.leading() == 1.0
    }

    /// Divides through by the leading coefficient.
    pub fn monic(&self) -> Self {
        let lead = self.leading();
        if lead == 0.0 {
            return self.clone();
        }
        Self::new(self.coeffs.iter().map(|c| c / lead).collect())
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * k).collect())
    }

    /// Multiplies by `s^k`.
    pub fn shift(&self, k: usize) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        let mut c = vec![0.0; k];
        c.extend_from_slice(&self.coeffs);
        Self::new(c)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn eval_complex(&self, z: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c)
    }

    /// Polynomial long division: `self = q * divisor + r`, `deg r < deg divisor`.
    pub fn div_rem(&self, divisor: &Polynomial) -> (Polynomial, Polynomial) {
        let dd = divisor.degree().expect("division by the zero polynomial");
        let Some(nd) = self.degree() else {
            return (Self::zero(), Self::zero());
        };
        if nd < dd {
            return (Self::zero(), self.clone());
        }
        let mut rem = self.coeffs.clone();
        let mut quot = vec![0.0; nd - dd + 1];
        let lead = divisor.leading();
        for k in (0..=nd - dd).rev() {
            let f = rem[k + dd] / lead;
            quot[k] = f;
            for (j, dc) in divisor.coeffs.iter().enumerate() {
                rem[k + j] -= f * dc;
            }
            rem[k + dd] = 0.0;
        }
        rem.truncate(dd);
        (Self::new(quot), Self::new(rem))
    }

    /// Largest absolute coefficient; zero for the zero polynomial.
    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Roots via the eigenvalues of the companion matrix.
    pub fn roots(&self) -> Vec<Complex64> {
        match self.degree() {
            None | Some(0) => Vec::new(),
            Some(_) => linalg::eigenvalues(&companion(&self.monic())),
        }
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (k, c) in self.coeffs.iter().enumerate().rev() {
            if *c == 0.0 {
                continue;
            }
            let sign = if *c < 0.0 { "-" } else { "+" };
            if first {
                if *c < 0.0 {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            first = false;
            let a = c.abs();
            match k {
                0 => write!(f, "{a}")?,
                _ => {
                    if a != 1.0 {
                        write!(f, "{a}")?;
                    }
                    if k == 1 {
                        write!(f, "s")?;
                    } else {
                        write!(f, "s^{k}")?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Product of two polynomials.
pub fn poly_convolve(a: &Polynomial, b: &Polynomial) -> Polynomial {
    if a.is_zero() || b.is_zero() {
        return Polynomial::zero();
    }
    let mut out = vec![0.0; a.coeffs.len() + b.coeffs.len() - 1];
    for (i, x) in a.coeffs.iter().enumerate() {
        for (j, y) in b.coeffs.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    Polynomial::new(out)
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        poly_convolve(self, rhs)
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        Polynomial::new((0..n).map(|k| self.coeff(k) + rhs.coeff(k)).collect())
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        Polynomial::new((0..n).map(|k| self.coeff(k) - rhs.coeff(k)).collect())
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

/// Companion matrix of a monic polynomial (controllable canonical layout:
/// ones on the superdiagonal, negated coefficients on the last row).
pub fn companion(p: &Polynomial) -> DMatrix<f64> {
    let n = p.degree().unwrap_or(0);
    let lead = p.leading();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = -p.coeff(j) / lead;
    }
    a
}

/// SISO rational model `gain * num(s) / den(s)` with monic `num` and `den`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    num: Polynomial,
    den: Polynomial,
    gain: f64,
}

impl TransferFunction {
    pub fn new(gain: f64, num: Polynomial, den: Polynomial) -> Result<Self, LtiError> {
        if num.is_zero() || den.is_zero() {
            return Err(LtiError::DegenerateInput("zero numerator or denominator"));
        }
        if !num.is_monic() {
            return Err(LtiError::NotMonic("numerator"));
        }
        if !den.is_monic() {
            return Err(LtiError::NotMonic("denominator"));
        }
        if gain == 0.0 || !gain.is_finite() {
            return Err(LtiError::ZeroGain);
        }
        if num.degree() > den.degree() {
            return Err(LtiError::Improper);
        }
        Ok(TransferFunction { num, den, gain })
    }

    /// Normalizes arbitrary numerator/denominator into the monic-plus-gain
    /// convention.
    pub fn from_polys(num: &Polynomial, den: &Polynomial) -> Result<Self, LtiError> {
        if num.is_zero() || den.is_zero() {
            return Err(LtiError::DegenerateInput("zero numerator or denominator"));
        }
        let gain = num.leading() / den.leading();
        Self::new(gain, num.monic(), den.monic())
    }

    pub fn num(&self) -> &Polynomial {
        &self.num
    }

    pub fn den(&self) -> &Polynomial {
        &self.den
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// Order of the denominator.
    pub fn order(&self) -> usize {
        self.den.degree().unwrap_or(0)
    }

    pub fn relative_degree(&self) -> usize {
        self.order() - self.num.degree().unwrap_or(0)
    }

    /// Same model with the gain replaced.
    pub fn with_gain(&self, gain: f64) -> Result<Self, LtiError> {
        Self::new(gain, self.num.clone(), self.den.clone())
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.num.eval_complex(s) / self.den.eval_complex(s) * self.gain
    }
}

impl fmt::Display for TransferFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} * ({}) / ({})", self.gain, self.num, self.den)
    }
}

/// `x' = A x + B u`, `y = gain * C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: RowDVector<f64>,
    pub gain: f64,
}

impl StateSpaceModel {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// Recovers `gain * C (sI - A)^-1 B` as a transfer function through the
    /// Faddeev-LeVerrier expansion. Independent of how the model was built.
    pub fn to_transfer_function(&self) -> Result<TransferFunction, LtiError> {
        let n = self.order();
        let (char_poly, adj) = linalg::faddeev_leverrier(&self.a);
        // numerator coefficient of s^(n-1-k) is C N_k B
        let mut num = vec![0.0; n];
        for (k, nk) in adj.iter().enumerate() {
            num[n - 1 - k] = (&self.c * nk * &self.b)[(0, 0)];
        }
        let num = Polynomial::new(num).scale(self.gain);
        TransferFunction::from_polys(&num, &Polynomial::new(char_poly))
    }
}

/// Controllable canonical realization of a strictly proper model.
pub fn realize_ccf(tf: &TransferFunction) -> Result<StateSpaceModel, LtiError> {
    if tf.relative_degree() == 0 {
        return Err(LtiError::NotStrictlyProper);
    }
    let n = tf.order();
    let a = companion(tf.den());
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let c = RowDVector::from_fn(n, |_, j| tf.num().coeff(j));
    Ok(StateSpaceModel { a, b, c, gain: tf.gain() })
}

/// All roots strictly inside the open left half plane (real parts below
/// `-ROOT_TOL`).
pub fn is_hurwitz(p: &Polynomial) -> Result<bool, LtiError> {
    match p.degree() {
        None => Err(LtiError::DegenerateInput("zero polynomial")),
        Some(0) => Err(LtiError::DegenerateInput("constant polynomial has no roots")),
        Some(_) => Ok(p.roots().iter().all(|r| r.re < -ROOT_TOL)),
    }
}

/// Strict positive realness decided on a logarithmic frequency grid over
/// `[1e-3, 1e6]` rad/s: Hurwitz denominator, relative degree 0 or 1, and
/// `Re W(jw) > SPR_MARGIN / (1 + w^2)` at every grid point.
pub fn is_spr(tf: &TransferFunction) -> bool {
    is_spr_with_grid(tf, SPR_GRID_POINTS)
}

pub fn is_spr_with_grid(tf: &TransferFunction, points: usize) -> bool {
    if tf.relative_degree() > 1 {
        return false;
    }
    if !matches!(is_hurwitz(tf.den()), Ok(true)) {
        return false;
    }
    let points = points.max(2000);
    let (lo, hi) = (-3.0f64, 6.0f64);
    (0..points).all(|k| {
        let w = 10f64.powf(lo + (hi - lo) * k as f64 / (points - 1) as f64);
        tf.eval(Complex64::new(0.0, w)).re > SPR_MARGIN / (1.0 + w * w)
    })
}

/// High-frequency gain of a relative-degree-one model.
pub fn high_freq_gain(tf: &TransferFunction) -> Result<f64, LtiError> {
    match tf.relative_degree() {
        1 => Ok(tf.gain()),
        r => Err(LtiError::WrongRelativeDegree(r)),
    }
}
