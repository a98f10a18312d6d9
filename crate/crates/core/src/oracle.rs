//! Independent validators: an even-profile shooting solver for 1D
//! instances, a dense Jacobi eigensolver, and a randomized probe of local
//! minimality. None of them share code paths with the grid solver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Grid, ScalarField};
use crate::problem::ProblemInstance;
use crate::solver;

/// One constant piece of an even 1D instance on `[start, end)` (start is the
/// previous piece's end, or 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub end: f64,
    pub v: f64,
    pub q: f64,
}

/// `−u'' + V(|x|) u = Q(|x|) |u|^{p−2} u` on `(−L, L)` with piecewise constant
/// even coefficients and `u(±L) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvenInstance1d {
    pub half_width: f64,
    pub p: f64,
    pub pieces: Vec<Piece>,
}

impl EvenInstance1d {
    pub fn new(half_width: f64, p: f64, pieces: Vec<Piece>) -> Result<Self> {
        if !(p > 2.0) || !(half_width > 0.0) || pieces.is_empty() {
            return Err(Error::InvalidArgument("need p > 2, L > 0 and at least one piece".into()));
        }
        if pieces.windows(2).any(|w| w[1].end <= w[0].end) || pieces[0].end <= 0.0 {
            return Err(Error::InvalidArgument("piece ends must increase".into()));
        }
        if (pieces.last().unwrap().end - half_width).abs() > 1e-12 * half_width {
            return Err(Error::InvalidArgument("last piece must end at the half width".into()));
        }
        Ok(EvenInstance1d { half_width, p, pieces })
    }

    /// `Q = q_plus` on `|x| < eps`, `q_minus` outside; `V ≡ v`.
    pub fn ball(half_width: f64, p: f64, eps: f64, q_plus: f64, q_minus: f64, v: f64) -> Result<Self> {
        Self::new(
            half_width,
            p,
            vec![
                Piece { end: eps, v, q: q_plus },
                Piece {
                    end: half_width,
                    v,
                    q: q_minus,
                },
            ],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub x: f64,
    pub u: f64,
    pub du: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingResult {
    pub u0: f64,
    /// Samples on `[0, L]`, including both ends and every breakpoint.
    pub profile: Vec<ProfileSample>,
    /// Rayleigh value of the even extension (Simpson quadrature per piece).
    pub s_value: f64,
    /// `|u(L)|`.
    pub match_norm: f64,
}

const BLOWUP: f64 = 1e12;

enum Shot {
    Finished(Vec<ProfileSample>),
    /// Diverged with the given sign at `x`.
    Diverged(f64, f64),
}

impl EvenInstance1d {
    fn rhs(&self, piece: usize, u: f64) -> f64 {
        let pc = &self.pieces[piece];
        (pc.v - pc.q * u.abs().powf(self.p - 2.0)) * u
    }

    /// Classical RK4 from `x = 0` with `u(0) = u0`, `u'(0) = 0`, an even number
    /// of equal steps of at most `rk_step` per piece.
    fn shoot(&self, u0: f64, rk_step: f64) -> Shot {
        let mut out = Vec::new();
        let (mut u, mut du) = (u0, 0.0);
        let mut start = 0.0;
        out.push(ProfileSample { x: 0.0, u, du });
        for (k, piece) in self.pieces.iter().enumerate() {
            let len = piece.end - start;
            let mut steps = (len / rk_step).ceil() as usize;
            steps += steps % 2;
            let h = len / steps as f64;
            for i in 0..steps {
                let f = |uu: f64| self.rhs(k, uu);
                let k1u = du;
                let k1v = f(u);
                let k2u = du + 0.5 * h * k1v;
                let k2v = f(u + 0.5 * h * k1u);
                let k3u = du + 0.5 * h * k2v;
                let k3v = f(u + 0.5 * h * k2u);
                let k4u = du + h * k3v;
                let k4v = f(u + h * k3u);
                u += h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
                du += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
                let x = if i + 1 == steps { piece.end } else { start + (i + 1) as f64 * h };
                if !u.is_finite() || u.abs() > BLOWUP * u0.abs().max(1.0) {
                    let sign = if u.is_nan() { 1.0 } else { u.signum() };
                    return Shot::Diverged(sign, x);
                }
                out.push(ProfileSample { x, u, du });
            }
            start = piece.end;
        }
        Shot::Finished(out)
    }

    /// Boundary mismatch `u(L; u0)`; a blow-up counts as `±∞`.
    fn mismatch(&self, u0: f64, rk_step: f64) -> f64 {
        match self.shoot(u0, rk_step) {
            Shot::Finished(samples) => samples.last().expect("nonempty").u,
            Shot::Diverged(sign, _) => sign * f64::INFINITY,
        }
    }

    /// Scans `u0` upwards from `u0_max / samples` and returns the first
    /// interval on which the mismatch changes sign.
    pub fn find_bracket(&self, u0_max: f64, samples: usize, rk_step: f64) -> Option<(f64, f64)> {
        let mut prev: Option<(f64, f64)> = None;
        for i in 1..=samples {
            let u0 = u0_max * i as f64 / samples as f64;
            let m = self.mismatch(u0, rk_step);
            if let Some((a, ma)) = prev {
                if ma.signum() != m.signum() {
                    return Some((a, u0));
                }
            }
            prev = Some((u0, m));
        }
        None
    }
}

/// Shoots from the center with `u'(0) = 0` and bisects on `u(0)` until the
/// boundary mismatch drops below `1e-10`.
pub fn shoot_1d(inst: &EvenInstance1d, u0_bracket: (f64, f64), rk_step: f64) -> Result<ShootingResult> {
    let (mut lo, mut hi) = u0_bracket;
    if !(rk_step > 0.0) || !(lo < hi) {
        return Err(Error::InvalidArgument("need rk_step > 0 and lo < hi".into()));
    }
    let mut m_lo = inst.mismatch(lo, rk_step);
    let m_hi = inst.mismatch(hi, rk_step);
    if m_lo.signum() == m_hi.signum() || m_lo == 0.0 && m_hi == 0.0 {
        return Err(Error::NoBracket { lo, hi });
    }
    let mut u0 = 0.5 * (lo + hi);
    for _ in 0..200 {
        u0 = 0.5 * (lo + hi);
        let m = inst.mismatch(u0, rk_step);
        if m.abs() < 1e-10 || hi - lo <= 4.0 * f64::EPSILON * u0.abs() {
            break;
        }
        if m.signum() == m_lo.signum() {
            lo = u0;
            m_lo = m;
        } else {
            hi = u0;
        }
    }
    let profile = match inst.shoot(u0, rk_step) {
        Shot::Finished(s) => s,
        Shot::Diverged(_, x) => return Err(Error::BlowUp { u0, x }),
    };
    let match_norm = profile.last().expect("nonempty").u.abs();
    let s_value = even_rayleigh(inst, &profile);
    Ok(ShootingResult {
        u0,
        profile,
        s_value,
        match_norm,
    })
}

/// `2∫₀ᴸ(u'² + V u²) / (2∫₀ᴸ Q|u|^p)^{2/p}` by composite Simpson on each piece.
fn even_rayleigh(inst: &EvenInstance1d, profile: &[ProfileSample]) -> f64 {
    let mut energy = 0.0;
    let mut mass = 0.0;
    let mut i = 0;
    for piece in &inst.pieces {
        let j = profile.iter().rposition(|s| s.x <= piece.end * (1.0 + 1e-15)).expect("piece end sampled");
        let seg = &profile[i..=j];
        let h = (seg[seg.len() - 1].x - seg[0].x) / (seg.len() - 1) as f64;
        let simpson = |f: &dyn Fn(&ProfileSample) -> f64| {
            let m = seg.len() - 1;
            let mut acc = f(&seg[0]) + f(&seg[m]);
            for (k, s) in seg.iter().enumerate().take(m).skip(1) {
                acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(s);
            }
            acc * h / 3.0
        };
        energy += simpson(&|s| s.du * s.du + piece.v * s.u * s.u);
        mass += simpson(&|s| piece.q * s.u.abs().powf(inst.p));
        i = j;
    }
    (2.0 * energy) / (2.0 * mass).powf(2.0 / inst.p)
}

impl ShootingResult {
    /// Cubic Hermite interpolation of the even extension at `x`.
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.abs();
        let prof = &self.profile;
        if x >= prof.last().expect("nonempty").x {
            return prof.last().expect("nonempty").u;
        }
        let k = prof.partition_point(|s| s.x <= x).max(1) - 1;
        let (a, b) = (&prof[k], &prof[k + 1]);
        let h = b.x - a.x;
        let t = (x - a.x) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * a.u
            + (t3 - 2.0 * t2 + t) * h * a.du
            + (-2.0 * t3 + 3.0 * t2) * b.u
            + (t3 - t2) * h * b.du
    }

    /// Samples the profile at the nodes of a 1D grid centered at the origin.
    pub fn to_field(&self, grid: &std::sync::Arc<Grid>) -> Result<ScalarField> {
        if grid.dim() != 1 {
            return Err(Error::InvalidArgument("shooting profiles are 1D".into()));
        }
        Ok(ScalarField::from_fn(grid.clone(), |p| self.eval(p[0])))
    }

    pub fn min_value(&self) -> f64 {
        self.profile.iter().map(|s| s.u).fold(f64::INFINITY, f64::min)
    }
}

/// Largest grid the dense eigensolver accepts.
pub const DENSE_LIMIT: usize = 200;

/// Smallest eigenvalue of `−Δ_h + V` by cyclic Jacobi rotations on the dense matrix.
pub fn dense_min_eig(v: &ScalarField) -> Result<f64> {
    let g = v.grid();
    let n = g.len();
    if n > DENSE_LIMIT {
        return Err(Error::GridTooLarge {
            nodes: n,
            limit: DENSE_LIMIT,
        });
    }
    let mut a = vec![vec![0.0; n]; n];
    let dims: Vec<usize> = g.n_nodes().to_vec();
    let strides: Vec<usize> = if g.dim() == 1 { vec![1] } else { vec![dims[1], 1] };
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = v.values()[i];
        let mut rem = i;
        for axis in 0..g.dim() {
            let idx = rem / strides[axis];
            rem %= strides[axis];
            let w = 1.0 / (g.spacing()[axis] * g.spacing()[axis]);
            row[i] += 2.0 * w;
            if idx > 0 {
                row[i - strides[axis]] = -w;
            }
            if idx + 1 < dims[axis] {
                row[i + strides[axis]] = -w;
            }
        }
    }
    Ok(jacobi_eigenvalues(a).into_iter().fold(f64::INFINITY, f64::min))
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi sweeps.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// `max_δ (R(v*) − R(v* + t δ))` over `trials` random directions with
/// `‖δ‖_n = 1`. Perturbations that leave `{J_n > 0}` are skipped.
pub fn minimality_probe(instance: &ProblemInstance, v_star: &ScalarField, trials: usize, t: f64, seed: u64) -> Result<f64> {
    let base = solver::rayleigh(instance, v_star)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let raw: Vec<f64> = (0..v_star.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let delta = ScalarField::new(v_star.grid().clone(), raw)?;
        let nd = crate::mesh::norm_n(&delta, &instance.v_n)?;
        let delta = delta.scaled(1.0 / nd);
        let trial = v_star.add(&delta.scaled(t))?;
        if let Ok(r) = solver::rayleigh(instance, &trial) {
            worst = worst.max(base - r);
        }
    }
    Ok(if worst.is_finite() { worst } else { 0.0 })
}
