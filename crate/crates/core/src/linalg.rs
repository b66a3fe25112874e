//! Dense linear-algebra helpers shared by the control modules.
//!
//! Everything here works on small dense `nalgebra` matrices: companion
//! matrices, spectra, Kronecker products, the continuous Lyapunov equation
//! and a KYP (positive-real lemma) certificate search.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex64;

/// Eigenvalues of a square matrix.
///
/// The matrix is split into the connected components of its sparsity
/// pattern (block-diagonal up to permutation) and each block goes through a
/// bounded real Schur iteration. Blocks where the iteration stalls fall back
/// to the roots of their characteristic polynomial.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(a.nrows());
    for idx in components(a, None) {
        let k = idx.len();
        let block = DMatrix::from_fn(k, k, |r, c| a[(idx[r], idx[c])]);
        match Schur::try_new(block.clone(), f64::EPSILON, 10_000) {
            Some(schur) => out.extend(schur.complex_eigenvalues().iter().copied()),
            None => {
                let (char_poly, _) = faddeev_leverrier(&block);
                out.extend(durand_kerner(&char_poly));
            }
        }
    }
    out
}

/// Roots of a monic polynomial (ascending coefficients) by simultaneous
/// Weierstrass iteration.
pub fn durand_kerner(coeffs: &[f64]) -> Vec<Complex64> {
    let n = coeffs.len().saturating_sub(1);
    if n == 0 {
        return Vec::new();
    }
    let eval = |z: Complex64| coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c);
    let radius = 1.0 + coeffs[..n].iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let seed = Complex64::new(0.4, 0.9);
    let mut z: Vec<Complex64> = (0..n).map(|k| seed.powu(k as u32) * radius.min(10.0)).collect();
    for _ in 0..2000 {
        let mut delta = 0.0f64;
        for i in 0..n {
            let denom = (0..n)
                .filter(|&j| j != i)
                .fold(Complex64::new(1.0, 0.0), |acc, j| acc * (z[i] - z[j]));
            if denom.norm() == 0.0 {
                z[i] += Complex64::new(1e-8, 1e-8);
                continue;
            }
            let step = eval(z[i]) / denom;
            z[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta <= 1e-14 * radius {
            break;
        }
    }
    z
}

/// Connected components of the undirected sparsity graph of `a` (and `b`).
fn components(a: &DMatrix<f64>, b: Option<&DMatrix<f64>>) -> Vec<Vec<usize>> {
    let n = a.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in 0..n {
            let linked = a[(i, j)] != 0.0 || b.is_some_and(|b| b[(i, j)] != 0.0);
            if i != j && linked {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_slot[r] == usize::MAX {
            root_slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_slot[r]].push(i);
    }
    groups
}

/// Largest real part over the spectrum of `a`; `-inf` for an empty matrix.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a)
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz_matrix(a: &DMatrix<f64>, tol: f64) -> bool {
    spectral_abscissa(a) < -tol
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_sym_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Coefficients (ascending powers, monic) of `det(sI - A)` by the
/// Faddeev-LeVerrier recursion. Also returns the adjugate coefficient
/// matrices `N_k` with `adj(sI - A) = sum_k N_k s^(n-1-k)`.
pub fn faddeev_leverrier(a: &DMatrix<f64>) -> (Vec<f64>, Vec<DMatrix<f64>>) {
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    // descending: c[0] = 1 multiplies s^n
    let mut desc = vec![1.0];
    let mut adj = Vec::with_capacity(n);
    let mut m_k = ident.clone();
    for k in 1..=n {
        adj.push(m_k.clone());
        let am = a * &m_k;
        let c_k = -am.trace() / k as f64;
        desc.push(c_k);
        m_k = am + &ident * c_k;
    }
    desc.reverse();
    (desc, adj)
}

/// Solves `A^T P + P A = -Q` for `P`.
///
/// The index set is first split into the connected components of the joint
/// sparsity pattern of `A` and `Q`; each component is solved independently
/// through its Kronecker form. Returns `None` if a block system is singular.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(q.shape(), (n, n));

    let groups = components(a, Some(q));

    let mut p = DMatrix::<f64>::zeros(n, n);
    for idx in &groups {
        let k = idx.len();
        let ak = DMatrix::from_fn(k, k, |r, c| a[(idx[r], idx[c])]);
        let qk = DMatrix::from_fn(k, k, |r, c| q[(idx[r], idx[c])]);
        let ident = DMatrix::<f64>::identity(k, k);
        let akt = ak.transpose();
        let lhs = ident.kronecker(&akt) + akt.kronecker(&ident);
        let rhs = DVector::from_iterator(k * k, qk.iter().map(|v| -v));
        let sol = lhs.lu().solve(&rhs)?;
        for c in 0..k {
            for r in 0..k {
                p[(idx[r], idx[c])] = sol[c * k + r];
            }
        }
    }
    let sym = (&p + p.transpose()) * 0.5;
    Some(sym)
}

/// Storage function certificate for a strictly positive real triple
/// `(A, b, c)`: `P = P^T > 0` with `P b = c^T` and
/// `Q = -(A^T P + P A) > 0`.
#[derive(Debug, Clone)]
pub struct KypCertificate {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// `min(lambda_min(P), lambda_min(Q))` achieved by the search.
    pub margin: f64,
}

/// Searches the affine family `{P : P b = c^T}` for the point maximizing
/// `min(lambda_min(P), lambda_min(-(A^T P + P A)))`. The objective is
/// concave, so a derivative-free simplex search is adequate at the
/// dimensions used here. Returns `None` when no strictly feasible point is
/// found.
pub fn kyp_certificate(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
) -> Option<KypCertificate> {
    let n = a.nrows();
    // symmetric basis E_(i,j), i <= j
    let basis: Vec<DMatrix<f64>> = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .map(|(i, j)| {
            let mut e = DMatrix::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            e
        })
        .collect();
    let nv = basis.len();
    // linear map vech(P) -> P b
    let mut map = DMatrix::<f64>::zeros(n, nv);
    for (k, e) in basis.iter().enumerate() {
        map.set_column(k, &(e * b));
    }
    let gram = map.transpose() * &map;
    let eig = SymmetricEigen::new(gram);
    let p0_vec = map.clone().svd(true, true).solve(c, 1e-12).ok()?;
    if (&map * &p0_vec - c).amax() > 1e-9 * (1.0 + c.amax()) {
        return None;
    }
    let tol = 1e-10 * eig.eigenvalues.amax().max(1.0);
    let null: Vec<DVector<f64>> = (0..nv)
        .filter(|&i| eig.eigenvalues[i] <= tol)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();

    let build = |t: &[f64]| -> DMatrix<f64> {
        let mut v = p0_vec.clone();
        for (tk, dir) in t.iter().zip(&null) {
            v += dir * *tk;
        }
        basis
            .iter()
            .zip(v.iter())
            .fold(DMatrix::zeros(n, n), |acc, (e, vk)| acc + e * *vk)
    };
    let objective = |t: &[f64]| -> f64 {
        let p = build(t);
        let q = -(a.transpose() * &p + &p * a);
        min_sym_eigenvalue(&p).min(min_sym_eigenvalue(&q))
    };
    let best = if null.is_empty() {
        Vec::new()
    } else {
        nelder_mead_max(&objective, &vec![0.0; null.len()], p0_vec.amax().max(1.0), 4000)
    };
    let p = build(&best);
    let q = -(a.transpose() * &p + &p * a);
    let margin = min_sym_eigenvalue(&p).min(min_sym_eigenvalue(&q));
    (margin > 0.0).then_some(KypCertificate { p, q, margin })
}

/// Plain Nelder-Mead maximization.
pub fn nelder_mead_max<F: Fn(&[f64]) -> f64>(
    f: &F,
    start: &[f64],
    step: f64,
    max_iter: usize,
) -> Vec<f64> {
    let d = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((start.to_vec(), f(start)));
    for i in 0..d {
        let mut x = start.to_vec();
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        let spread = simplex[0].1 - simplex[d].1;
        if spread.abs() < 1e-13 * (1.0 + simplex[0].1.abs()) {
            let size = simplex[1..]
                .iter()
                .map(|(x, _)| dist(x, &simplex[0].0))
                .fold(0.0, f64::max);
            if size < 1e-10 * (1.0 + step) {
                break;
            }
        }
        let centroid: Vec<f64> = (0..d)
            .map(|k| simplex[..d].iter().map(|(x, _)| x[k]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].clone();
        let along = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = f(&xr);
        if fr > simplex[0].1 {
            let xe = along(2.0);
            let fe = f(&xe);
            simplex[d] = if fe > fr { (xe, fe) } else { (xr, fr) };
        } else if fr > simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let xc = along(if fr > worst.1 { 0.5 } else { -0.5 });
            let fc = f(&xc);
            if fc > worst.1.max(fr) {
                simplex[d] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = item
                        .0
                        .iter()
                        .zip(&best)
                        .map(|(xi, bi)| bi + 0.5 * (xi - bi))
                        .collect();
                    let fx = f(&x);
                    *item = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
    simplex.swap_remove(0).0
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
