//! Small dense-vector kernels shared by the spectral and solver modules.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    /// Final `‖b − A x‖₂ / ‖b‖₂`.
    pub relative_residual: f64,
    pub converged: bool,
    /// Set when a search direction with `pᵀAp ≤ 0` was met, i.e. `A` is not
    /// positive definite.
    pub breakdown: bool,
}

/// Unpreconditioned conjugate gradients for a symmetric operator given as a
/// matrix-free product. `x` holds the initial guess and receives the result.
pub fn conjugate_gradient<F>(apply: F, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> CgOutcome
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|xi| *xi = 0.0);
        return CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
            breakdown: false,
        };
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    while iterations < max_iter {
        if rr.sqrt() <= tol * b_norm {
            break;
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return CgOutcome {
                iterations,
                relative_residual: rr.sqrt() / b_norm,
                converged: false,
                breakdown: true,
            };
        }
        let alpha = rr / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        iterations += 1;
    }
    let relative_residual = rr.sqrt() / b_norm;
    CgOutcome {
        iterations,
        relative_residual,
        converged: relative_residual <= tol,
        breakdown: false,
    }
}

/// Solves the symmetric tridiagonal system with diagonal `diag` and constant
/// off-diagonal `off` by an LDLᵀ sweep. Returns `None` when a pivot is not
/// positive (the matrix is not positive definite).
pub fn solve_sym_tridiagonal(diag: &[f64], off: f64, rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut d = vec![0.0; n];
    let mut y = vec![0.0; n];
    for i in 0..n {
        let (pivot, carried) = if i == 0 {
            (diag[0], rhs[0])
        } else {
            let l = off / d[i - 1];
            (diag[i] - l * off, rhs[i] - l * y[i - 1])
        };
        if pivot <= 0.0 || !pivot.is_finite() {
            return None;
        }
        d[i] = pivot;
        y[i] = carried;
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let upper = if i + 1 < n { off * x[i + 1] } else { 0.0 };
        x[i] = (y[i] - upper) / d[i];
    }
    Some(x)
}
