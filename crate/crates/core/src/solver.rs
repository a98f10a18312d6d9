//! Ground states by constrained minimization of the Rayleigh quotient
//!
//! ```text
//! s_n = inf { ‖v‖_n² / J_n(v)^{2/p} : J_n(v) > 0 },   J_n(v) = ∫ Q_n |v|^p.
//! ```
//!
//! Iterates stay on the level set `J_n = 1`. Each step moves along the
//! negative gradient of `‖v‖_n²` projected against `∇J_n` (the Lagrange
//! residual `A v − s Q_n |v|^{p−2} v`), measured either in the Euclidean or
//! in the `‖·‖_n` inner product, and retracts by `v ← v / J_n(v)^{1/p}`,
//! which is exact because `J_n` is p-homogeneous. Step lengths come from a
//! Barzilai–Borwein guess safeguarded by Armijo backtracking, so the
//! accepted energies never increase (once the predicted decrease drops below
//! the rounding resolution of `s`, steps are judged by the gradient instead). A minimizer `v` rescales to the
//! solution `u = s^{1/(p−2)} v`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2};
use crate::mesh::{self, integrate_all, Operator, ScalarField};
use crate::problem::ProblemInstance;

/// Inner product in which the descent direction is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMetric {
    /// Plain `L²` gradient.
    Euclidean,
    /// `‖·‖_n` (Sobolev) gradient: the residual is preconditioned by `A⁻¹`.
    Sobolev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Initializer {
    /// Gaussian `exp(−|x − c|²/w²)` at `centers[center]`, `w = width_factor · scale`.
    Bump {
        center: usize,
        #[serde(default = "one")]
        width_factor: f64,
    },
    /// Sum of equal bumps at every center. With two centers, and a grid and
    /// coefficients invariant under the point reflection that swaps them,
    /// the run is confined to fields with the same invariance.
    Symmetric {
        #[serde(default = "one")]
        width_factor: f64,
    },
    /// Seeded uniform noise on `[0, 1)`.
    Random { stream: u64 },
}

fn one() -> f64 {
    1.0
}

impl Initializer {
    pub fn label(&self) -> String {
        match self {
            Initializer::Bump { center, .. } => format!("bump:{center}"),
            Initializer::Symmetric { .. } => "symmetric".into(),
            Initializer::Random { stream } => format!("random:{stream}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Bound on the relative projected gradient `‖A v − s Q|v|^{p−2}v‖₂ / ‖A v‖₂`.
    pub grad_tol: f64,
    /// Bound on the relative energy decrease of the last accepted step.
    pub energy_tol: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    pub metric: GradientMetric,
    /// Empty means the default set (see [`default_initializers`]).
    pub initializers: Vec<Initializer>,
    pub abs_retraction: bool,
    pub seed: u64,
    /// Attempts at repairing an inadmissible start before giving up.
    pub max_restarts: usize,
    /// Relative window in which two Rayleigh values count as tied.
    pub tie_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 5000,
            grad_tol: 1e-8,
            energy_tol: 1e-12,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
            metric: GradientMetric::Sobolev,
            initializers: Vec::new(),
            abs_retraction: true,
            seed: 0,
            max_restarts: 8,
            tie_tol: 1e-9,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0 && self.energy_tol > 0.0) {
            return Err(Error::InvalidArgument("solver tolerances must be positive".into()));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(Error::InvalidArgument("Armijo parameter must lie in (0, 1)".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidArgument("shrink factor must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Bumps at each center, their sum when there are several centers, and one random start.
pub fn default_initializers(instance: &ProblemInstance) -> Vec<Initializer> {
    let mut out: Vec<Initializer> = (0..instance.centers.len())
        .map(|c| Initializer::Bump {
            center: c,
            width_factor: 1.0,
        })
        .collect();
    if instance.centers.len() > 1 {
        out.push(Initializer::Symmetric { width_factor: 1.0 });
    }
    out.push(Initializer::Random { stream: 0 });
    out
}

// ---------------------------------------------------------------------------
// Functionals

/// `J_n(v) = ∫ Q_n |v|^p`.
pub fn j_n(instance: &ProblemInstance, v: &ScalarField) -> Result<f64> {
    instance.q.check_same(v)?;
    Ok(j_raw(instance.q.values(), v.values(), instance.p) * instance.grid.cell_volume())
}

fn j_raw(q: &[f64], v: &[f64], p: f64) -> f64 {
    q.iter().zip(v).map(|(qi, vi)| qi * vi.abs().powf(p)).sum()
}

/// `‖v‖_n² / J_n(v)^{2/p}`.
pub fn rayleigh(instance: &ProblemInstance, v: &ScalarField) -> Result<f64> {
    let j = j_n(instance, v)?;
    if !(j > 0.0) {
        return Err(Error::InadmissibleDirection { value: j });
    }
    let e = mesh::quadratic_form(v, &instance.v_n)?;
    Ok(e / j.powf(2.0 / instance.p))
}

/// `u = s^{1/(p−2)} v`: for `J_n(v) = 1` and `s = ‖v‖_n²` this solves the
/// equation, as testing the Euler–Lagrange equation against `v` shows.
pub fn rescale_to_solution(instance: &ProblemInstance, v: &ScalarField, s: f64) -> Result<ScalarField> {
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("Rayleigh value must be positive, got {s}")));
    }
    Ok(v.scaled(s.powf(1.0 / (instance.p - 2.0))))
}

/// Relative discrete residual `‖A u − Q_n |u|^{p−2} u‖₂ / ‖A u‖₂`.
pub fn residual_norm(instance: &ProblemInstance, u: &ScalarField) -> Result<f64> {
    instance.q.check_same(u)?;
    let au = mesh::apply_operator(&instance.v_n, u)?;
    let p = instance.p;
    let r: Vec<f64> = au
        .values()
        .iter()
        .zip(instance.q.values())
        .zip(u.values())
        .map(|((a, q), x)| a - q * x.abs().powf(p - 2.0) * x)
        .collect();
    Ok(norm2(&r) / norm2(au.values()).max(1e-300))
}

// ---------------------------------------------------------------------------
// Minimization

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub s: f64,
    pub grad: f64,
    pub step: f64,
    pub backtracks: usize,
}

#[derive(Debug, Clone)]
pub struct Minimization {
    /// Final iterate, `J_n(v) = 1`.
    pub v: ScalarField,
    pub s: f64,
    pub grad: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterRecord>,
}

/// Relative size of the window in which computed values of `s` are
/// indistinguishable from rounding noise.
pub const ROUNDING_WINDOW: f64 = 16.0 * f64::EPSILON;

struct State {
    v: Vec<f64>,
    s: f64,
    r: Vec<f64>,
    grad: f64,
    // search direction −P⁻¹r, when already computed
    d: Option<Vec<f64>>,
}

impl State {
    fn at(op: &Operator, q: &[f64], p: f64, v: Vec<f64>, h_vol: f64) -> State {
        let mut av = vec![0.0; v.len()];
        op.apply_slice(&v, &mut av);
        let s = op.form_slice(&v) * h_vol;
        let r: Vec<f64> = av
            .iter()
            .zip(q)
            .zip(&v)
            .map(|((a, qi), x)| a - s * qi * x.abs().powf(p - 2.0) * x)
            .collect();
        let grad = norm2(&r) / norm2(&av).max(1e-300);
        State { v, s, r, grad, d: None }
    }
}

fn direction(op: &Operator, metric: GradientMetric, r: &[f64]) -> Option<Vec<f64>> {
    match metric {
        GradientMetric::Sobolev => op.solve(r, None, 1e-12).ok().map(|x| x.into_iter().map(|xi| -xi).collect()),
        GradientMetric::Euclidean => Some(r.iter().map(|x| -x).collect()),
    }
}

/// Normalizes `v` to `J_n = 1`; `None` when `J_n(v) ≤ 0`.
fn retract(q: &[f64], v: &mut [f64], p: f64, h_vol: f64, abs: bool) -> Option<()> {
    let j = j_raw(q, v, p) * h_vol;
    if !(j > 0.0) || !j.is_finite() {
        return None;
    }
    let c = j.powf(-1.0 / p);
    for x in v.iter_mut() {
        *x *= c;
        if abs {
            *x = x.abs();
        }
    }
    Some(())
}

/// Minimizes the Rayleigh quotient from `v0`. An inadmissible `v0` is an
/// error here; [`solve_ground_state`] repairs starts before calling this.
pub fn minimize_rayleigh(instance: &ProblemInstance, config: &SolverConfig, v0: &ScalarField) -> Result<Minimization> {
    minimize_within(instance, config, v0, None)
}

/// Node permutation of the point reflection through the midpoint of two
/// centers, when the grid, `V_n` and `Q_n` are all invariant under it.
pub fn center_reflection(instance: &ProblemInstance) -> Option<Vec<usize>> {
    let [a, b] = instance.centers.as_slice() else {
        return None;
    };
    let g = &instance.grid;
    for axis in 0..g.dim() {
        let mid = a[axis] + b[axis];
        let span = g.hi()[axis] - g.lo()[axis];
        if (g.lo()[axis] + g.hi()[axis] - mid).abs() > 1e-12 * span {
            return None;
        }
    }
    let perm: Vec<usize> = match g.dim() {
        1 => (0..g.len()).rev().collect(),
        _ => {
            let (n0, n1) = (g.n_nodes()[0], g.n_nodes()[1]);
            (0..g.len()).map(|k| (n0 - 1 - k / n1) * n1 + (n1 - 1 - k % n1)).collect()
        }
    };
    let invariant = |f: &ScalarField| {
        let v = f.values();
        perm.iter().enumerate().all(|(i, j)| (v[i] - v[*j]).abs() <= 1e-12 * (1.0 + v[i].abs()))
    };
    (invariant(&instance.v_n) && invariant(&instance.q)).then_some(perm)
}

fn symmetrize(v: &mut [f64], perm: &[usize]) {
    let src = v.to_vec();
    for (i, j) in perm.iter().enumerate() {
        v[i] = 0.5 * (src[i] + src[*j]);
    }
}

fn minimize_within(
    instance: &ProblemInstance,
    config: &SolverConfig,
    v0: &ScalarField,
    mirror: Option<&[usize]>,
) -> Result<Minimization> {
    config.validate()?;
    instance.q.check_same(v0)?;
    let p = instance.p;
    let h_vol = instance.grid.cell_volume();
    let q = instance.q.values();
    let op = instance.operator();
    let mut v = v0.values().to_vec();
    if let Some(perm) = mirror {
        symmetrize(&mut v, perm);
    }
    if retract(q, &mut v, p, h_vol, config.abs_retraction).is_none() {
        return Err(Error::InadmissibleDirection {
            value: j_n(instance, v0)?,
        });
    }
    let mut metric = config.metric;
    let mut state = State::at(&op, q, p, v, h_vol);
    // Euclidean steps scale like h²; start from the inverse of the stencil's norm bound.
    let euclid_step0 = 1.0 / (4.0 * instance.grid.spacing().iter().map(|h| 1.0 / (h * h)).sum::<f64>() + instance.v_n.max_abs());
    let mut step = match metric {
        GradientMetric::Sobolev => 1.0,
        GradientMetric::Euclidean => euclid_step0,
    };
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut trace = Vec::new();
    let mut rel_change = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        if state.grad <= config.grad_tol && rel_change <= config.energy_tol {
            converged = true;
            break;
        }
        // direction d = −P⁻¹ r
        let d = match state.d.take().or_else(|| direction(&op, metric, &state.r)) {
            Some(d) => d,
            None => {
                metric = GradientMetric::Euclidean;
                step = euclid_step0;
                prev = None;
                continue;
            }
        };
        // −dR/dτ at τ = 0, up to the common factor 2·h_vol
        let slope = -dot(&state.r, &d);
        if !(slope > 0.0) {
            converged = state.grad <= config.grad_tol;
            break;
        }
        if let Some((dv, dr)) = &prev {
            let pdv: f64 = match metric {
                GradientMetric::Sobolev => {
                    let mut a = vec![0.0; dv.len()];
                    op.apply_slice(dv, &mut a);
                    dot(dv, &a)
                }
                GradientMetric::Euclidean => dot(dv, dv),
            };
            let curv = dot(dv, dr);
            let base = match metric {
                GradientMetric::Sobolev => 1.0,
                GradientMetric::Euclidean => euclid_step0,
            };
            step = if curv > 0.0 && pdv > 0.0 {
                (pdv / curv).clamp(1e-8 * base, 1e8 * base)
            } else {
                base
            };
        }
        let mut tau = step;
        let mut backtracks = 0;
        let accepted = loop {
            let mut w: Vec<f64> = state.v.iter().zip(&d).map(|(x, di)| x + tau * di).collect();
            if let Some(perm) = mirror {
                symmetrize(&mut w, perm);
            }
            if retract(q, &mut w, p, h_vol, config.abs_retraction).is_some() {
                let mut trial = State::at(&op, q, p, w, h_vol);
                let predicted = config.armijo * tau * 2.0 * h_vol * slope;
                if trial.s <= state.s - predicted {
                    break Some(trial);
                }
                // Below the rounding resolution of s the Armijo test is noise;
                // accept a step that shrinks the dual gradient norm without
                // raising s beyond that resolution.
                let resolution = ROUNDING_WINDOW * state.s;
                if predicted < resolution && trial.s <= state.s + resolution {
                    if let Some(dt) = direction(&op, metric, &trial.r) {
                        if -dot(&trial.r, &dt) < slope {
                            trial.d = Some(dt);
                            break Some(trial);
                        }
                    }
                }
            }
            backtracks += 1;
            if backtracks > config.max_backtracks {
                break None;
            }
            tau *= config.shrink;
        };
        iterations += 1;
        let Some(next) = accepted else {
            // no decrease is representable any more
            trace.push(IterRecord {
                iter: iterations,
                s: state.s,
                grad: state.grad,
                step: 0.0,
                backtracks,
            });
            converged = state.grad <= config.grad_tol;
            break;
        };
        rel_change = (state.s - next.s).abs() / state.s;
        let dv: Vec<f64> = next.v.iter().zip(&state.v).map(|(a, b)| a - b).collect();
        let dr: Vec<f64> = next.r.iter().zip(&state.r).map(|(a, b)| a - b).collect();
        prev = Some((dv, dr));
        state = next;
        trace.push(IterRecord {
            iter: iterations,
            s: state.s,
            grad: state.grad,
            step: tau,
            backtracks,
        });
    }
    if !converged && state.grad <= config.grad_tol && rel_change <= config.energy_tol {
        converged = true;
    }
    Ok(Minimization {
        v: ScalarField::new(instance.grid.clone(), state.v)?,
        s: state.s,
        grad: state.grad,
        iterations,
        converged,
        trace,
    })
}

// ---------------------------------------------------------------------------
// Initial guesses

fn bump(instance: &ProblemInstance, center: &[f64], width: f64) -> ScalarField {
    let dim = instance.dim();
    ScalarField::from_fn(instance.grid.clone(), |x| {
        let r = mesh::distance(dim, x, center);
        (-(r * r) / (width * width)).exp()
    })
}

fn positive_indicator(instance: &ProblemInstance) -> Vec<f64> {
    instance.q.values().iter().map(|q| if *q > 0.0 { 1.0 } else { 0.0 }).collect()
}

/// Builds the start for `init`, repairing it (narrower bumps, noise damped
/// off `{Q_n > 0}`) until `J_n > 0` or `max_restarts` is used up.
pub fn initial_guess(instance: &ProblemInstance, init: &Initializer, config: &SolverConfig) -> Result<ScalarField> {
    if !instance.q.values().iter().any(|q| *q > 0.0) {
        return Err(Error::NoAdmissibleStart);
    }
    let admissible = |f: &ScalarField| j_n(instance, f).map(|j| j > 0.0).unwrap_or(false);
    let width0 = instance.scale.max(instance.grid.max_spacing());
    match init {
        Initializer::Bump { center, width_factor } => {
            let c = instance
                .centers
                .get(*center)
                .ok_or_else(|| Error::InvalidArgument(format!("no center with index {center}")))?;
            let mut w = width0 * width_factor;
            for _ in 0..=config.max_restarts {
                let f = bump(instance, c, w);
                if admissible(&f) {
                    return Ok(f);
                }
                w *= 0.5;
            }
        }
        Initializer::Symmetric { width_factor } => {
            let mut w = width0 * width_factor;
            for _ in 0..=config.max_restarts {
                let mut acc = ScalarField::zeros(instance.grid.clone());
                for c in &instance.centers {
                    acc = acc.add(&bump(instance, c, w))?;
                }
                if admissible(&acc) {
                    return Ok(acc);
                }
                w *= 0.5;
            }
        }
        Initializer::Random { stream } => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(*stream);
            let noise: Vec<f64> = (0..instance.grid.len()).map(|_| rng.gen::<f64>()).collect();
            let ind = positive_indicator(instance);
            let mut theta = 1.0;
            for attempt in 0..=config.max_restarts {
                if attempt == config.max_restarts {
                    theta = 0.0;
                }
                let vals: Vec<f64> = noise.iter().zip(&ind).map(|(n, i)| n * (i + theta)).collect();
                let f = ScalarField::new(instance.grid.clone(), vals)?;
                if admissible(&f) {
                    return Ok(f);
                }
                theta *= 0.5;
            }
        }
    }
    Err(Error::NoAdmissibleStart)
}

// ---------------------------------------------------------------------------
// Ground states

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    /// `None` when no admissible start could be built.
    pub s: Option<f64>,
    pub grad: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct GroundState {
    pub instance: Arc<ProblemInstance>,
    /// Normalized minimizer, `J_n(v) = 1`.
    pub v: ScalarField,
    /// `s_n = ‖v‖_n²`.
    pub s: f64,
    /// Solution `u_n = s^{1/(p−2)} v`.
    pub u: ScalarField,
    pub residual: f64,
    /// `‖u‖_n² − ∫ Q_n |u|^p`.
    pub alpha_check: f64,
    pub iterations: usize,
    pub start_label: String,
    /// Every start, in initializer order.
    pub runs: Vec<RunSummary>,
    /// Iteration log of the winning run.
    pub trace: Vec<IterRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundStateSidecar {
    pub n: usize,
    pub s: f64,
    pub residual: f64,
    pub alpha_check: f64,
    pub iterations: usize,
    pub start_label: String,
    pub config_hash: String,
    pub runs: Vec<RunSummary>,
}

impl GroundState {
    pub fn sidecar(&self, config_hash: &str) -> GroundStateSidecar {
        GroundStateSidecar {
            n: self.instance.n,
            s: self.s,
            residual: self.residual,
            alpha_check: self.alpha_check,
            iterations: self.iterations,
            start_label: self.start_label.clone(),
            config_hash: config_hash.to_string(),
            runs: self.runs.clone(),
        }
    }

    /// `‖u_n‖_n`.
    pub fn norm(&self) -> f64 {
        mesh::norm_n(&self.u, &self.instance.v_n).unwrap_or(f64::NAN)
    }

    /// Smallest Rayleigh value among converged runs whose label matches `pred`.
    pub fn best_s_where(&self, pred: impl Fn(&str) -> bool) -> Option<f64> {
        self.runs
            .iter()
            .filter(|r| r.converged && pred(&r.label))
            .filter_map(|r| r.s)
            .min_by(f64::total_cmp)
    }
}

/// Multistart minimization; keeps the converged run with the smallest `s`
/// (ties within `tie_tol` go to the earlier initializer).
pub fn solve_ground_state(instance: Arc<ProblemInstance>, config: &SolverConfig) -> Result<GroundState> {
    config.validate()?;
    if !instance.q.values().iter().any(|q| *q > 0.0) {
        return Err(Error::NoAdmissibleStart);
    }
    let inits = if config.initializers.is_empty() {
        default_initializers(&instance)
    } else {
        config.initializers.clone()
    };
    let mirror = center_reflection(&instance);
    let results: Vec<(String, Result<Minimization>)> = inits
        .par_iter()
        .map(|init| {
            let sub = match init {
                Initializer::Symmetric { .. } => mirror.as_deref(),
                _ => None,
            };
            let run = initial_guess(&instance, init, config).and_then(|v0| minimize_within(&instance, config, &v0, sub));
            (init.label(), run)
        })
        .collect();

    let mut runs = Vec::with_capacity(results.len());
    let mut best: Option<(usize, &Minimization)> = None;
    for (i, (label, res)) in results.iter().enumerate() {
        match res {
            Ok(m) => {
                runs.push(RunSummary {
                    label: label.clone(),
                    s: Some(m.s),
                    grad: m.grad,
                    iterations: m.iterations,
                    converged: m.converged,
                });
                if m.converged {
                    let better = match best {
                        None => true,
                        Some((_, b)) => m.s < b.s && (b.s - m.s) > config.tie_tol * b.s,
                    };
                    if better {
                        best = Some((i, m));
                    }
                }
            }
            Err(_) => runs.push(RunSummary {
                label: label.clone(),
                s: None,
                grad: f64::NAN,
                iterations: 0,
                converged: false,
            }),
        }
    }
    let Some((idx, m)) = best else {
        if results.iter().all(|(_, r)| r.is_err()) {
            return Err(Error::NoAdmissibleStart);
        }
        let best_gradient = results
            .iter()
            .filter_map(|(_, r)| r.as_ref().ok())
            .map(|m| m.grad)
            .fold(f64::INFINITY, f64::min);
        return Err(Error::NotConverged { best_gradient });
    };
    let u = rescale_to_solution(&instance, &m.v, m.s)?;
    let residual = residual_norm(&instance, &u)?;
    let energy = mesh::quadratic_form(&u, &instance.v_n)?;
    let alpha_check = energy - j_n(&instance, &u)?;
    Ok(GroundState {
        v: m.v.clone(),
        s: m.s,
        u,
        residual,
        alpha_check,
        iterations: m.iterations,
        start_label: results[idx].0.clone(),
        runs,
        trace: m.trace.clone(),
        instance,
    })
}

/// `∫ Q_n |u|^p` over the whole grid, for callers holding only a field.
pub fn nonlinear_mass(instance: &ProblemInstance, u: &ScalarField) -> Result<f64> {
    let f = instance.q.zip_with(u, |q, x| q * x.abs().powf(instance.p))?;
    Ok(integrate_all(&f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{kerr_shrinking_ball, ProblemInstance};
    use proptest::prelude::*;
    use rand::Rng;

    fn reference(n: usize) -> Arc<ProblemInstance> {
        let g = mesh::Grid::new(1, &[-1.0], &[1.0], &[n]).unwrap();
        Arc::new(kerr_shrinking_ball(&g, &[0.25], &[0.0], 1).unwrap().remove(0))
    }

    #[test]
    fn j_of_sine() {
        let g = mesh::Grid::new(1, &[0.0], &[1.0], &[999]).unwrap();
        let inst = ProblemInstance::new(
            ScalarField::zeros(g.clone()),
            ScalarField::zeros(g.clone()),
            ScalarField::constant(g.clone(), 1.0),
            4.0,
            1,
            vec![vec![0.5]],
            0.5,
            true,
        )
        .unwrap();
        let v = ScalarField::from_fn(g.clone(), |x| (std::f64::consts::PI * x[0]).sin());
        assert!((j_n(&inst, &v).unwrap() - 0.375).abs() < 1e-3);
        assert_eq!(j_n(&inst, &ScalarField::zeros(g)).unwrap(), 0.0);
        let c: f64 = -1.7;
        assert!((j_n(&inst, &v.scaled(c)).unwrap() - c.abs().powi(4) * j_n(&inst, &v).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rescale_examples() {
        let inst = reference(9);
        let v = ScalarField::constant(inst.grid.clone(), 1.5);
        assert_eq!(rescale_to_solution(&inst, &v, 4.0).unwrap().values()[0], 3.0);
        assert_eq!(rescale_to_solution(&inst, &v, 1.0).unwrap(), v);
        let mut cubic = (*inst).clone();
        cubic.p = 3.0;
        assert!((rescale_to_solution(&cubic, &v, 9.0).unwrap().values()[0] - 13.5).abs() < 1e-12);
        assert!(rescale_to_solution(&inst, &v, 0.0).is_err());
    }

    #[test]
    fn nonpositive_q_has_no_admissible_start() {
        let g = mesh::Grid::new(1, &[-1.0], &[1.0], &[50]).unwrap();
        let inst = Arc::new(
            ProblemInstance::new(
                ScalarField::zeros(g.clone()),
                ScalarField::zeros(g.clone()),
                ScalarField::constant(g.clone(), -1.0),
                4.0,
                1,
                vec![vec![0.0]],
                0.2,
                false,
            )
            .unwrap(),
        );
        let v = ScalarField::constant(g, 1.0);
        assert!(matches!(rayleigh(&inst, &v), Err(Error::InadmissibleDirection { .. })));
        assert!(matches!(
            solve_ground_state(inst.clone(), &SolverConfig::default()),
            Err(Error::NoAdmissibleStart)
        ));
        assert!(matches!(
            initial_guess(&inst, &Initializer::Random { stream: 0 }, &SolverConfig::default()),
            Err(Error::NoAdmissibleStart)
        ));
    }

    #[test]
    fn residual_discriminates() {
        let inst = reference(200);
        assert_eq!(residual_norm(&inst, &ScalarField::zeros(inst.grid.clone())).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = ScalarField::new(inst.grid.clone(), (0..200).map(|_| rng.gen::<f64>()).collect()).unwrap();
        assert!(residual_norm(&inst, &noise).unwrap() > 0.1);
    }

    #[test]
    fn descent_is_monotone_and_identities_hold() {
        let inst = reference(400);
        let gs = solve_ground_state(inst.clone(), &SolverConfig::default()).unwrap();
        assert!((j_n(&inst, &gs.v).unwrap() - 1.0).abs() <= 1e-10);
        assert!(gs.s > 0.0);
        assert!(gs.alpha_check.abs() / gs.norm().powi(2) <= 1e-8);
        assert!(gs.residual <= 1e-7, "residual {}", gs.residual);
        assert!(gs.u.min() >= 0.0);
        for w in gs.trace.windows(2) {
            assert!(w[1].s <= w[0].s * (1.0 + ROUNDING_WINDOW));
        }
        assert!(gs.runs.iter().all(|r| r.converged));
    }

    #[test]
    fn euclidean_metric_agrees_on_coarse_grid() {
        let inst = reference(120);
        let sob = solve_ground_state(inst.clone(), &SolverConfig::default()).unwrap();
        let cfg = SolverConfig {
            metric: GradientMetric::Euclidean,
            max_iter: 200_000,
            grad_tol: 1e-7,
            energy_tol: 1e-13,
            ..SolverConfig::default()
        };
        let euc = solve_ground_state(inst, &cfg).unwrap();
        assert!((sob.s - euc.s).abs() / sob.s < 1e-9, "{} vs {}", sob.s, euc.s);
    }

    #[test]
    fn solves_in_two_dimensions() {
        let g = mesh::Grid::new(2, &[-1.0, -1.0], &[1.0, 1.0], &[31, 31]).unwrap();
        let inst = Arc::new(kerr_shrinking_ball(&g, &[0.4], &[0.0, 0.0], 1).unwrap().remove(0));
        let gs = solve_ground_state(inst.clone(), &SolverConfig::default()).unwrap();
        assert!(gs.residual < 1e-7);
        assert!(gs.alpha_check.abs() / gs.norm().powi(2) < 1e-8);
        // the ground state is symmetric under x ↔ y on this grid
        let n = 31;
        let u = gs.u.values();
        let scale = gs.u.max_abs();
        for i in 0..n {
            for j in 0..n {
                assert!((u[i * n + j] - u[j * n + i]).abs() < 1e-6 * scale);
            }
        }
    }

    /// Random positive values concentrated on the self-focusing core, so `J_n > 0`.
    fn weighted(inst: &ProblemInstance, vals: &[f64]) -> ScalarField {
        ScalarField::from_fn(inst.grid.clone(), |x| (-x[0] * x[0] / 0.01).exp())
            .zip_with(&ScalarField::new(inst.grid.clone(), vals.to_vec()).unwrap(), |a, b| a * b)
            .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn retraction_is_exact(vals in proptest::collection::vec(0.01f64..3.0, 60), c in 0.1f64..50.0) {
            let inst = reference(60);
            let v = weighted(&inst, &vals).scaled(c);
            let mut w = v.values().to_vec();
            retract(inst.q.values(), &mut w, inst.p, inst.grid.cell_volume(), false).unwrap();
            let w = ScalarField::new(inst.grid.clone(), w).unwrap();
            prop_assert!((j_n(&inst, &w).unwrap() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn rayleigh_is_scale_invariant(vals in proptest::collection::vec(0.01f64..3.0, 60)) {
            let inst = reference(60);
            let v = weighted(&inst, &vals);
            let a = rayleigh(&inst, &v).unwrap();
            let b = rayleigh(&inst, &v.scaled(7.0)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a);
        }

        #[test]
        fn abs_never_increases_energy(vals in proptest::collection::vec(-3.0f64..3.0, 60)) {
            let inst = reference(60);
            let v = ScalarField::new(inst.grid.clone(), vals).unwrap();
            let a = v.abs();
            let ev = mesh::norm_n(&v, &inst.v_n).unwrap();
            let ea = mesh::norm_n(&a, &inst.v_n).unwrap();
            prop_assert!(ea <= ev * (1.0 + 1e-14));
            prop_assert!((j_n(&inst, &a).unwrap() - j_n(&inst, &v).unwrap()).abs() <= 1e-12 * j_n(&inst, &v).unwrap().abs().max(1.0));
        }
    }
}
