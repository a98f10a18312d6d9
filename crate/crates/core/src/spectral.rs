//! Bottom of the spectrum of `A = −Δ_h + V` and the norm-equivalence
//! constants that follow from it.
//!
//! The smallest eigenpair comes from inverse iteration with shift zero. Each
//! step solves `A y = x` (direct in 1D, conjugate gradients in 2D); a failed
//! solve means `A` is not positive definite, and the eigenpair is then taken
//! from a fully reorthogonalized Lanczos run instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2};
use crate::mesh::{Operator, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralOptions {
    /// Residual target, relative to `max(1, |λ|)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            tol: 1e-9,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralMethod {
    InverseIteration,
    Lanczos,
}

#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub min_eig: f64,
    /// Unit (Euclidean) eigenvector.
    pub eigvec: ScalarField,
    pub iterations: usize,
    /// `‖A x − λ x‖₂ / ‖x‖₂`.
    pub residual: f64,
    pub converged: bool,
    pub method: SpectralMethod,
}

fn residual_of(op: &Operator, x: &[f64], lambda: f64) -> f64 {
    let mut ax = vec![0.0; x.len()];
    op.apply_slice(x, &mut ax);
    axpy(-lambda, x, &mut ax);
    norm2(&ax) / norm2(x)
}

fn rayleigh(op: &Operator, x: &[f64]) -> f64 {
    let mut ax = vec![0.0; x.len()];
    op.apply_slice(x, &mut ax);
    dot(&ax, x) / dot(x, x)
}

/// Smallest eigenpair of `−Δ_h + V`. Non-convergence is reported through
/// [`SpectralResult::converged`], not as an error.
pub fn smallest_eigenvalue(v: &ScalarField, opts: &SpectralOptions) -> Result<SpectralResult> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("spectral tolerance must be positive".into()));
    }
    let op = Operator::new(v.clone());
    match inverse_iteration(&op, opts) {
        Some(r) => Ok(r),
        None => Ok(lanczos_smallest(&op, opts)),
    }
}

/// Returns `None` when a linear solve breaks down (indefinite operator).
fn inverse_iteration(op: &Operator, opts: &SpectralOptions) -> Option<SpectralResult> {
    let n = op.grid().len();
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = rayleigh(op, &x);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let guess: Vec<f64> = if lambda > 0.0 {
            x.iter().map(|xi| xi / lambda).collect()
        } else {
            vec![0.0; n]
        };
        let y = op.solve(&x, Some(&guess), 1e-13).ok()?;
        let ny = norm2(&y);
        if !ny.is_finite() || ny == 0.0 {
            return None;
        }
        x = y.into_iter().map(|yi| yi / ny).collect();
        lambda = rayleigh(op, &x);
        if lambda <= 0.0 {
            // positive definite solves cannot produce this; defer to Lanczos
            return None;
        }
        residual = residual_of(op, &x, lambda);
        iterations += 1;
        if residual <= opts.tol * lambda.abs().max(1.0) {
            break;
        }
    }
    let converged = residual <= opts.tol * lambda.abs().max(1.0);
    Some(SpectralResult {
        min_eig: lambda,
        eigvec: ScalarField::new(op.grid().clone(), x).ok()?,
        iterations,
        residual,
        converged,
        method: SpectralMethod::InverseIteration,
    })
}

/// Number of eigenvalues of the symmetric tridiagonal `(alpha, beta)` below `x`.
fn sturm_count(alpha: &[f64], beta: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for i in 0..alpha.len() {
        let b2 = if i > 0 { beta[i - 1] * beta[i - 1] } else { 0.0 };
        d = alpha[i] - x - if i > 0 { b2 / d } else { 0.0 };
        if d == 0.0 {
            d = -f64::EPSILON * (alpha[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

fn smallest_tridiagonal_eig(alpha: &[f64], beta: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..alpha.len() {
        let r = if i > 0 { beta[i - 1].abs() } else { 0.0 } + beta.get(i).map_or(0.0, |b| b.abs());
        lo = lo.min(alpha[i] - r);
        hi = hi.max(alpha[i] + r);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(alpha, beta, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Eigenvector of the tridiagonal for its smallest eigenvalue `theta`, by two
/// steps of inverse iteration at a shift just below `theta` (where the
/// shifted matrix is positive definite and LDLᵀ needs no pivoting).
fn tridiagonal_ground_vector(alpha: &[f64], beta: &[f64], theta: f64) -> Vec<f64> {
    let m = alpha.len();
    let scale = alpha.iter().map(|a| a.abs()).fold(1.0, f64::max);
    let shift = theta - 1e-10 * scale;
    let mut z = vec![1.0; m];
    for _ in 0..3 {
        let mut d = vec![0.0; m];
        let mut y = vec![0.0; m];
        for i in 0..m {
            if i == 0 {
                d[0] = alpha[0] - shift;
                y[0] = z[0];
            } else {
                let l = beta[i - 1] / d[i - 1];
                d[i] = alpha[i] - shift - l * beta[i - 1];
                y[i] = z[i] - l * y[i - 1];
            }
        }
        for i in (0..m).rev() {
            let upper = if i + 1 < m { beta[i] * z[i + 1] } else { 0.0 };
            z[i] = (y[i] - upper) / d[i];
        }
        let nz = norm2(&z);
        z.iter_mut().for_each(|zi| *zi /= nz);
    }
    z
}

fn lanczos_smallest(op: &Operator, opts: &SpectralOptions) -> SpectralResult {
    let n = op.grid().len();
    let m_max = n.min(opts.max_iter.max(2));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m_max);
    let mut alpha = Vec::with_capacity(m_max);
    let mut beta: Vec<f64> = Vec::with_capacity(m_max);
    // deterministic, non-symmetric start so no eigenspace is missed by symmetry
    let mut q: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.618_033_988_75).fract()).collect();
    let nq = norm2(&q);
    q.iter_mut().for_each(|x| *x /= nq);
    let mut w = vec![0.0; n];
    let mut best = (f64::NAN, vec![0.0; n], f64::INFINITY);
    let mut iterations = 0;
    for j in 0..m_max {
        basis.push(q.clone());
        op.apply_slice(&q, &mut w);
        let a = dot(&w, &q);
        alpha.push(a);
        // full reorthogonalization, twice
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&w, b);
                axpy(-c, b, &mut w);
            }
        }
        let bnorm = norm2(&w);
        iterations = j + 1;
        let check = j + 1 == m_max || bnorm <= 1e-14 * a.abs().max(1.0) || (j + 1) % 10 == 0;
        if check {
            let theta = smallest_tridiagonal_eig(&alpha, &beta);
            let z = tridiagonal_ground_vector(&alpha, &beta, theta);
            let mut x = vec![0.0; n];
            for (zi, b) in z.iter().zip(&basis) {
                axpy(*zi, b, &mut x);
            }
            let nx = norm2(&x);
            x.iter_mut().for_each(|xi| *xi /= nx);
            let lambda = rayleigh(op, &x);
            let res = residual_of(op, &x, lambda);
            best = (lambda, x, res);
            if res <= opts.tol * lambda.abs().max(1.0) {
                break;
            }
        }
        if bnorm <= 1e-14 * a.abs().max(1.0) {
            break;
        }
        beta.push(bnorm);
        q = w.iter().map(|x| x / bnorm).collect();
    }
    let (lambda, x, residual) = best;
    let mut x = x;
    // fix sign: largest entry positive
    if let Some(imax) = (0..n).max_by(|a, b| x[*a].abs().total_cmp(&x[*b].abs())) {
        if x[imax] < 0.0 {
            x.iter_mut().for_each(|xi| *xi = -*xi);
        }
    }
    SpectralResult {
        min_eig: lambda,
        eigvec: ScalarField::new(op.grid().clone(), x).expect("finite Ritz vector"),
        iterations,
        residual,
        converged: residual <= opts.tol * lambda.abs().max(1.0),
        method: SpectralMethod::Lanczos,
    }
}

/// Constants with `c1 ‖u‖ ≤ ‖u‖_n ≤ c2 ‖u‖`, where `‖·‖` uses `V` and `‖·‖_n` uses `V + K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub c1: f64,
    pub c2: f64,
    pub min_eig: f64,
    /// `c1 = 0`: the lower bound carries no information.
    pub degenerate: bool,
}

/// `c1 = √max(0, 1 − ‖K⁻‖∞/λ₁)`, `c2 = √(1 + ‖K⁺‖∞/λ₁)` with `λ₁` the smallest
/// eigenvalue of `−Δ_h + V`.
pub fn norm_equivalence_bounds(v: &ScalarField, k: &ScalarField, opts: &SpectralOptions) -> Result<NormBounds> {
    v.check_same(k)?;
    let spec = smallest_eigenvalue(v, opts)?;
    bounds_from_min_eig(spec.min_eig, k)
}

pub fn bounds_from_min_eig(min_eig: f64, k: &ScalarField) -> Result<NormBounds> {
    if !(min_eig > 0.0) {
        return Err(Error::SpectrumNotPositive { min_eig });
    }
    let k_minus = k.values().iter().fold(0.0f64, |m, x| m.max(-x));
    let k_plus = k.values().iter().fold(0.0f64, |m, x| m.max(*x));
    let c1 = (1.0 - k_minus / min_eig).max(0.0).sqrt();
    let c2 = (1.0 + k_plus / min_eig).sqrt();
    Ok(NormBounds {
        c1,
        c2,
        min_eig,
        degenerate: c1 == 0.0,
    })
}
