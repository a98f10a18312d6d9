//! Concentration diagnostics over solved families: exterior-to-total ratios,
//! Lebesgue tails, the exponential decay envelope, two-point mass splits and
//! the singular comparison constant.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mesh::{self, RegionMask, ScalarField};
use crate::problem::{InstanceStatus, ProblemInstance};
use crate::solver::{self, GroundState, SolverConfig};

/// A Lebesgue exponent `q ∈ [1, ∞]`. Serialized as a number, or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Exponent(pub f64);

impl Exponent {
    pub const INFINITY: Exponent = Exponent(f64::INFINITY);

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Exponent(x)),
            Raw::Text(t) if matches!(t.as_str(), "inf" | "infinity" | "∞") => Ok(Exponent::INFINITY),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("not an exponent: {t}"))),
        }
    }
}

/// `q* = N(p−2)/2`.
pub fn q_star(dim: usize, p: f64) -> f64 {
    dim as f64 * (p - 2.0) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub q_star: f64,
    /// `2N/(N−2)`, only for `N ≥ 3`.
    pub critical: Option<f64>,
    /// `(2N−2)/(N−2)`, only for `N ≥ 3`.
    pub lower: Option<f64>,
    /// Whether `N ≥ 3` and `p ∈ [(2N−2)/(N−2), 2N/(N−2))`, so that tails
    /// vanish for every `q`.
    pub uniform_vanishing: bool,
}

pub fn thresholds(dim: usize, p: f64) -> Thresholds {
    let (critical, lower) = if dim >= 3 {
        let n = dim as f64;
        (Some(2.0 * n / (n - 2.0)), Some((2.0 * n - 2.0) / (n - 2.0)))
    } else {
        (None, None)
    };
    let uniform_vanishing = matches!((critical, lower), (Some(c), Some(l)) if p >= l && p < c);
    Thresholds {
        q_star: q_star(dim, p),
        critical,
        lower,
        uniform_vanishing,
    }
}

fn exclusion_mask(gs: &GroundState, eps: f64) -> Result<(RegionMask, bool)> {
    let inner = mesh::union_of_balls(&gs.instance.grid, &gs.instance.centers, eps)?;
    let empty = inner.count() == 0;
    Ok((inner.complement(), empty))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub eps: f64,
    pub h1_ratio: f64,
    pub lp_ratio: f64,
    /// The excluded balls contain no node.
    pub empty_mask: bool,
}

/// Exterior shares of `∫ |∇u|² + V_n u²` and `∫ |u|^p` outside the balls of
/// radius `ε` about the instance centers.
pub fn h1_lp_ratios(gs: &GroundState, eps_list: &[f64]) -> Result<Vec<RatioRow>> {
    let inst = &gs.instance;
    let dens = mesh::energy_density(&gs.u, &inst.v_n)?;
    let pow = gs.u.map(|x| x.abs().powf(inst.p));
    let dens_total = mesh::integrate_all(&dens);
    let pow_total = mesh::integrate_all(&pow);
    eps_list
        .iter()
        .map(|&eps| {
            let (outside, empty) = exclusion_mask(gs, eps)?;
            Ok(RatioRow {
                eps,
                h1_ratio: mesh::integrate(&dens, &outside)? / dens_total,
                lp_ratio: mesh::integrate(&pow, &outside)? / pow_total,
                empty_mask: empty,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqRow {
    pub q: Exponent,
    pub eps: f64,
    pub tail: f64,
    pub total: f64,
    pub ratio: f64,
}

/// Adds `q*` to `q_list` when `q* ≥ 1` and it is missing; sorted, infinity last.
pub fn with_q_star(q_list: &[Exponent], dim: usize, p: f64) -> Vec<Exponent> {
    let mut qs = q_list.to_vec();
    let qs_star = q_star(dim, p);
    if qs_star >= 1.0 && !qs.iter().any(|q| q.0 == qs_star) {
        qs.push(Exponent(qs_star));
    }
    qs.sort_by(|a, b| a.0.total_cmp(&b.0));
    qs
}

/// `|u|_{q, Ω∖B_ε}`, `|u|_q` and their ratio for every pair, `q*` included.
pub fn lq_tail_scan(gs: &GroundState, q_list: &[Exponent], eps_list: &[f64]) -> Result<Vec<LqRow>> {
    let inst = &gs.instance;
    let full = RegionMask::full(inst.grid.clone());
    let mut rows = Vec::new();
    for q in with_q_star(q_list, inst.dim(), inst.p) {
        let total = mesh::lq_norm(&gs.u, q.0, &full)?;
        for &eps in eps_list {
            let (outside, _) = exclusion_mask(gs, eps)?;
            let tail = mesh::lq_norm(&gs.u, q.0, &outside)?;
            rows.push(LqRow {
                q,
                eps,
                tail,
                total,
                ratio: if total > 0.0 { tail / total } else { 0.0 },
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCheck {
    pub margin: f64,
    /// Envelope amplitude.
    pub m: f64,
    /// `α_decay = √λ`.
    pub alpha_decay: f64,
    /// Node where the margin is attained.
    pub worst_radius: f64,
}

/// Minimum over nodes with `|x| > R` of `M e^{−(1−slack)√λ(|x|−R)} − |u(x)|`,
/// where `M` is the largest `|u|` on the shell `R − h ≤ |x| ≤ R + h`.
pub fn decay_envelope_check(gs: &GroundState, r: f64, lambda: f64, rate_slack: f64) -> Result<DecayCheck> {
    if !(lambda > 0.0) || !(r >= 0.0) || !(0.0..1.0).contains(&rate_slack) {
        return Err(Error::InvalidArgument("need λ > 0, R ≥ 0 and slack in [0, 1)".into()));
    }
    let inst = &gs.instance;
    let g = &inst.grid;
    let origin = [0.0; 2];
    let h = g.max_spacing();
    let radii: Vec<f64> = g.points().map(|x| mesh::distance(g.dim(), &x, &origin)).collect();
    if let Some(i) = (0..radii.len()).find(|&i| radii[i] > r && inst.v_n.values()[i] < lambda) {
        return Err(Error::InvalidArgument(format!(
            "V_n = {} < λ at |x| = {}",
            inst.v_n.values()[i],
            radii[i]
        )));
    }
    let u = gs.u.values();
    let m = radii
        .iter()
        .zip(u)
        .filter(|(rad, _)| **rad >= r - h && **rad <= r + h)
        .map(|(_, x)| x.abs())
        .fold(0.0, f64::max);
    let alpha = lambda.sqrt();
    let rate = (1.0 - rate_slack) * alpha;
    let mut margin = f64::INFINITY;
    let mut worst_radius = f64::NAN;
    for (rad, x) in radii.iter().zip(u) {
        if *rad > r {
            let gap = m * (-rate * (rad - r)).exp() - x.abs();
            if gap < margin {
                margin = gap;
                worst_radius = *rad;
            }
        }
    }
    if margin.is_infinite() {
        return Err(Error::InvalidArgument(format!("no nodes beyond R = {r}")));
    }
    Ok(DecayCheck {
        margin,
        m,
        alpha_decay: alpha,
        worst_radius,
    })
}

/// `c_p |x|^{−β}`, `β = 2/(p−2)`, solving `−Δw = ∓δ|w|^{p−2}w` away from 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum SingularConstant {
    /// `−Δw = −δ w^{p−1}`.
    Regular { c_p: f64, beta: f64 },
    /// `p > (2N−2)/(N−2)`: `w` solves the equation with `δ` replaced by `−δ`.
    SignFlipped { c_p: f64, beta: f64 },
    /// `p = (2N−2)/(N−2)`: `r^{−β}` is harmonic, no power solution.
    Degenerate { beta: f64 },
}

impl SingularConstant {
    pub fn value(&self) -> Option<f64> {
        match self {
            SingularConstant::Regular { c_p, .. } | SingularConstant::SignFlipped { c_p, .. } => Some(*c_p),
            SingularConstant::Degenerate { .. } => None,
        }
    }
}

pub fn singular_constant(dim: usize, p: f64, delta: f64) -> Result<SingularConstant> {
    if dim < 3 || !(p > 2.0) || !(delta > 0.0) {
        return Err(Error::InvalidArgument("need N ≥ 3, p > 2 and δ > 0".into()));
    }
    let beta = 2.0 / (p - 2.0);
    let k = beta * (beta + 2.0 - dim as f64);
    let e = 1.0 / (p - 2.0);
    Ok(if k > 0.0 {
        SingularConstant::Regular {
            c_p: (k / delta).powf(e),
            beta,
        }
    } else if k < 0.0 {
        SingularConstant::SignFlipped {
            c_p: (-k / delta).powf(e),
            beta,
        }
    } else {
        SingularConstant::Degenerate { beta }
    })
}

/// `−(w'' + (N−1)w'/r) ± δ|w|^{p−2}w` for `w = c r^{−β}` at radius `r`, with
/// `+` for the regular case and `−` when sign flipped.
pub fn singular_residual(dim: usize, p: f64, delta: f64, sc: &SingularConstant, r: f64) -> f64 {
    let (c, beta, sign) = match *sc {
        SingularConstant::Regular { c_p, beta } => (c_p, beta, 1.0),
        SingularConstant::SignFlipped { c_p, beta } => (c_p, beta, -1.0),
        SingularConstant::Degenerate { beta } => (0.0, beta, 1.0),
    };
    let w = c * r.powf(-beta);
    let dw = -beta * c * r.powf(-beta - 1.0);
    let d2w = beta * (beta + 1.0) * c * r.powf(-beta - 2.0);
    let lap = d2w + (dim as f64 - 1.0) / r * dw;
    -lap + sign * delta * w.abs().powf(p - 2.0) * w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassSplit {
    pub eps: f64,
    pub m1: f64,
    pub m2: f64,
    /// `∫_{Ω∖B_ε(x_j)} Q_n|u|^p / ∫ Q_n|u|^p`.
    pub j_outside: [f64; 2],
    /// 1 or 2; `None` on a tie.
    pub selected: Option<usize>,
}

/// Relative spread below which `m₁` and `m₂` count as equal.
pub const SPLIT_TIE: f64 = 1e-9;

pub fn two_point_mass_split(gs: &GroundState, eps: f64) -> Result<MassSplit> {
    let inst = &gs.instance;
    if inst.centers.len() != 2 {
        return Err(Error::InvalidArgument("mass split needs exactly two centers".into()));
    }
    let b1 = mesh::ball_mask(&inst.grid, &inst.centers[0], eps, false)?;
    let b2 = mesh::ball_mask(&inst.grid, &inst.centers[1], eps, false)?;
    if b1.overlaps(&b2)? {
        return Err(Error::InvalidArgument(format!("balls of radius {eps} overlap")));
    }
    let dens = mesh::energy_density(&gs.u, &inst.v_n)?;
    let total = mesh::integrate_all(&dens);
    let m1 = mesh::integrate(&dens, &b1)? / total;
    let m2 = mesh::integrate(&dens, &b2)? / total;
    let jd = inst.q.zip_with(&gs.u, |q, x| q * x.abs().powf(inst.p))?;
    let jt = mesh::integrate_all(&jd);
    let j_outside = [
        mesh::integrate(&jd, &b1.complement())? / jt,
        mesh::integrate(&jd, &b2.complement())? / jt,
    ];
    let selected = if (m1 - m2).abs() <= SPLIT_TIE * (m1 + m2) {
        None
    } else if m1 > m2 {
        Some(1)
    } else {
        Some(2)
    };
    Ok(MassSplit {
        eps,
        m1,
        m2,
        j_outside,
        selected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaNorm {
    /// `max Q_n⁺`.
    pub c: f64,
    /// Measured `max |v|_p / ‖v‖_n`.
    pub c_s: f64,
    /// `(C·C_S^p)^{−1/(p−2)}`.
    pub bound: f64,
    pub norm: f64,
    pub holds: bool,
}

/// Realized lower bound on `‖u_n‖_n`. `C_S` is the best of `trials` random
/// fields, each refined by ascent `v ← A⁻¹(|v|^{p−2}v)`, and of `u_n` itself.
pub fn alpha_norm(gs: &GroundState, trials: usize, ascent_steps: usize, seed: u64) -> Result<AlphaNorm> {
    let inst = &gs.instance;
    let p = inst.p;
    let op = inst.operator();
    let full = RegionMask::full(inst.grid.clone());
    let quotient = |v: &ScalarField| -> Result<f64> {
        let nn = mesh::norm_n(v, &inst.v_n)?;
        Ok(if nn > 0.0 { mesh::lq_norm(v, p, &full)? / nn } else { 0.0 })
    };
    let mut c_s = quotient(&gs.u)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, ScalarField)> = None;
    for _ in 0..trials {
        let v = ScalarField::new(inst.grid.clone(), (0..inst.grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let qv = quotient(&v)?;
        if best.as_ref().is_none_or(|(b, _)| qv > *b) {
            best = Some((qv, v));
        }
    }
    if let Some((qv, mut v)) = best {
        c_s = c_s.max(qv);
        for _ in 0..ascent_steps {
            let rhs: Vec<f64> = v.values().iter().map(|x| x.abs().powf(p - 2.0) * x).collect();
            let Ok(next) = op.solve(&rhs, None, 1e-12) else { break };
            let scale = next.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if !(scale > 0.0) || !scale.is_finite() {
                break;
            }
            v = ScalarField::new(inst.grid.clone(), next.into_iter().map(|x| x / scale).collect())?;
            c_s = c_s.max(quotient(&v)?);
        }
    }
    let c = inst.q.max().max(0.0);
    let bound = (c * c_s.powf(p)).powf(-1.0 / (p - 2.0));
    let norm = gs.norm();
    Ok(AlphaNorm {
        c,
        c_s,
        bound,
        norm,
        holds: norm >= bound * (1.0 - 1e-12),
    })
}

/// `{ε₁·2^{−k}}` restricted to `ε > 3h`.
pub fn default_eps_list(eps1: f64, h: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut e = eps1;
    while e > 3.0 * h && out.len() < 64 {
        out.push(e);
        e *= 0.5;
    }
    out
}

// ---------------------------------------------------------------------------
// Studies

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySettings {
    #[serde(rename = "R")]
    pub r: f64,
    pub lambda: f64,
    pub rate_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySettings {
    pub eps_list: Vec<f64>,
    pub q_list: Vec<Exponent>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecaySettings>,
    /// Ball radius for two-point mass splits; defaults to the smallest
    /// entry of `eps_list`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_eps: Option<f64>,
    /// `max(m₁, m₂)` needed at the last member for single-point selection.
    pub split_threshold: f64,
    /// `total_{q*}(n) ≥ fraction · total_{q*}(first)` counts as bounded below.
    pub bounded_fraction: f64,
    pub alpha_trials: usize,
}

impl Default for StudySettings {
    fn default() -> Self {
        StudySettings {
            eps_list: Vec::new(),
            q_list: vec![Exponent(2.0), Exponent(4.0), Exponent::INFINITY],
            decay: None,
            split_eps: None,
            split_threshold: 0.9,
            bounded_fraction: 0.5,
            alpha_trials: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RowStatus {
    Solved,
    Unresolved,
    Infeasible,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    pub n: usize,
    #[serde(flatten)]
    pub status: RowStatus,
    pub s: Option<f64>,
    pub norm_n: Option<f64>,
    /// `‖u_n/‖u_n‖_n‖_n`.
    pub w_norm: Option<f64>,
    pub residual: Option<f64>,
    pub alpha_check: Option<f64>,
    pub start_label: Option<String>,
    pub ratios: Vec<RatioRow>,
    pub lq: Vec<LqRow>,
    pub decay: Option<DecayCheck>,
    pub split: Option<MassSplit>,
    pub alpha_norm: Option<AlphaNorm>,
}

impl MemberReport {
    fn unsolved(n: usize, status: RowStatus) -> Self {
        MemberReport {
            n,
            status,
            s: None,
            norm_n: None,
            w_norm: None,
            residual: None,
            alpha_check: None,
            start_label: None,
            ratios: Vec::new(),
            lq: Vec::new(),
            decay: None,
            split: None,
            alpha_norm: None,
        }
    }

    pub fn solved(&self) -> bool {
        self.status == RowStatus::Solved
    }
}

/// Trend verdicts; `None` where the check does not apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub norm_increasing: Option<bool>,
    pub ratios_decreasing: Option<bool>,
    /// `total_q` increasing for every listed `q > q*`.
    pub total_q_increasing: Option<bool>,
    /// `tail_q/total_q` decreasing for every listed `q > q*`.
    pub tail_ratio_decreasing: Option<bool>,
    pub q_star_bounded_below: Option<bool>,
    /// Tail ratio trend at `q = q*`, judged only where tails are known to
    /// vanish for every `q`; otherwise it is reported without a verdict.
    pub q_star_tail_decreasing: Option<bool>,
    pub decay_envelope: Option<bool>,
    pub single_point: Option<bool>,
    pub alpha_norm: Option<bool>,
    pub insufficient_n: bool,
}

impl Verdicts {
    pub fn all_pass(&self) -> bool {
        !self.insufficient_n
            && [
                self.norm_increasing,
                self.ratios_decreasing,
                self.total_q_increasing,
                self.tail_ratio_decreasing,
                self.q_star_bounded_below,
                self.q_star_tail_decreasing,
                self.decay_envelope,
                self.single_point,
                self.alpha_norm,
            ]
            .iter()
            .all(|v| v.unwrap_or(true))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub dim: usize,
    pub p: f64,
    pub thresholds: Thresholds,
    pub eps_list: Vec<f64>,
    pub q_list: Vec<Exponent>,
    pub members: Vec<MemberReport>,
    pub verdicts: Verdicts,
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] > w[0])
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn member_report(gs: &GroundState, settings: &StudySettings, eps_list: &[f64], seed: u64) -> Result<MemberReport> {
    let norm = gs.norm();
    let w = gs.u.scaled(1.0 / norm);
    let w_norm = mesh::norm_n(&w, &gs.instance.v_n)?;
    let decay = match &settings.decay {
        Some(d) => Some(decay_envelope_check(gs, d.r, d.lambda, d.rate_slack)?),
        None => None,
    };
    let split = if gs.instance.centers.len() == 2 {
        let eps = settings
            .split_eps
            .or_else(|| eps_list.iter().copied().reduce(f64::min))
            .unwrap_or(gs.instance.scale);
        Some(two_point_mass_split(gs, eps)?)
    } else {
        None
    };
    let alpha = if settings.alpha_trials > 0 {
        Some(alpha_norm(gs, settings.alpha_trials, 30, seed)?)
    } else {
        None
    };
    Ok(MemberReport {
        n: gs.instance.n,
        status: RowStatus::Solved,
        s: Some(gs.s),
        norm_n: Some(norm),
        w_norm: Some(w_norm),
        residual: Some(gs.residual),
        alpha_check: Some(gs.alpha_check),
        start_label: Some(gs.start_label.clone()),
        ratios: h1_lp_ratios(gs, eps_list)?,
        lq: lq_tail_scan(gs, &settings.q_list, eps_list)?,
        decay,
        split,
        alpha_norm: alpha,
    })
}

/// Solves every member and assembles diagnostics and verdicts. Members run
/// in parallel on the current rayon pool; output stays in family order.
pub fn run_concentration_study(
    family: &[Arc<ProblemInstance>],
    config: &SolverConfig,
    settings: &StudySettings,
) -> Result<(ConcentrationReport, Vec<Option<GroundState>>)> {
    let first = family
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty family".into()))?;
    let (dim, p) = (first.dim(), first.p);
    let eps_list = if settings.eps_list.is_empty() {
        default_eps_list(first.scale, first.grid.max_spacing())
    } else {
        settings.eps_list.clone()
    };
    let solved: Vec<(MemberReport, Option<GroundState>)> = family
        .par_iter()
        .map(|inst| match inst.status {
            InstanceStatus::Infeasible => (MemberReport::unsolved(inst.n, RowStatus::Infeasible), None),
            InstanceStatus::Unresolved => (MemberReport::unsolved(inst.n, RowStatus::Unresolved), None),
            InstanceStatus::Feasible => {
                let outcome = solver::solve_ground_state(inst.clone(), config)
                    .and_then(|gs| member_report(&gs, settings, &eps_list, config.seed).map(|r| (r, gs)));
                match outcome {
                    Ok((r, gs)) => (r, Some(gs)),
                    Err(e) => (MemberReport::unsolved(inst.n, RowStatus::Failed { error: e.to_string() }), None),
                }
            }
        })
        .collect();
    let (members, states): (Vec<_>, Vec<_>) = solved.into_iter().unzip();
    let thresholds = thresholds(dim, p);
    let q_list = with_q_star(&settings.q_list, dim, p);
    let verdicts = verdicts(&members, &eps_list, &q_list, &thresholds, settings);
    Ok((
        ConcentrationReport {
            dim,
            p,
            thresholds,
            eps_list,
            q_list,
            members,
            verdicts,
        },
        states,
    ))
}

fn verdicts(members: &[MemberReport], eps_list: &[f64], q_list: &[Exponent], th: &Thresholds, settings: &StudySettings) -> Verdicts {
    let ok: Vec<&MemberReport> = members.iter().filter(|m| m.solved()).collect();
    let insufficient_n = ok.len() < 2;
    let trend = |f: &dyn Fn() -> bool| if insufficient_n { None } else { Some(f()) };
    let lq_series = |q: Exponent, eps: f64, pick: fn(&LqRow) -> f64| -> Vec<f64> {
        ok.iter()
            .filter_map(|m| m.lq.iter().find(|r| r.q == q && r.eps == eps).map(pick))
            .collect()
    };
    let above: Vec<Exponent> = q_list.iter().copied().filter(|q| q.0 > th.q_star).collect();
    let star = q_list.iter().copied().find(|q| q.0 == th.q_star);

    let norm_increasing = trend(&|| strictly_increasing(&ok.iter().filter_map(|m| m.norm_n).collect::<Vec<_>>()));
    let ratios_decreasing = trend(&|| {
        eps_list.iter().enumerate().all(|(k, _)| {
            let h1: Vec<f64> = ok.iter().map(|m| m.ratios[k].h1_ratio).collect();
            let lp: Vec<f64> = ok.iter().map(|m| m.ratios[k].lp_ratio).collect();
            strictly_decreasing(&h1) && strictly_decreasing(&lp)
        })
    });
    let (total_q_increasing, tail_ratio_decreasing) = if above.is_empty() || eps_list.is_empty() {
        (None, None)
    } else {
        (
            trend(&|| above.iter().all(|q| strictly_increasing(&lq_series(*q, eps_list[0], |r| r.total)))),
            trend(&|| {
                above
                    .iter()
                    .all(|q| eps_list.iter().all(|e| strictly_decreasing(&lq_series(*q, *e, |r| r.ratio))))
            }),
        )
    };
    let (q_star_bounded_below, q_star_tail_decreasing) = match (star, eps_list.first()) {
        (Some(q), Some(e0)) => {
            let totals = lq_series(q, *e0, |r| r.total);
            let bounded = trend(&|| totals.iter().all(|t| *t >= settings.bounded_fraction * totals[0]));
            let tail = if th.uniform_vanishing {
                trend(&|| eps_list.iter().all(|e| strictly_decreasing(&lq_series(q, *e, |r| r.ratio))))
            } else {
                None
            };
            (bounded, tail)
        }
        _ => (None, None),
    };
    let decay_envelope = settings
        .decay
        .as_ref()
        .filter(|_| !ok.is_empty())
        .map(|_| ok.iter().all(|m| m.decay.as_ref().is_some_and(|d| d.margin >= 0.0)));
    let single_point = ok
        .last()
        .and_then(|m| m.split.as_ref())
        .map(|s| s.selected.is_some() && s.m1.max(s.m2) >= settings.split_threshold);
    let alpha_norm = if settings.alpha_trials > 0 && !ok.is_empty() {
        Some(ok.iter().all(|m| m.alpha_norm.as_ref().is_some_and(|a| a.holds)))
    } else {
        None
    };
    Verdicts {
        norm_increasing,
        ratios_decreasing,
        total_q_increasing,
        tail_ratio_decreasing,
        q_star_bounded_below,
        q_star_tail_decreasing,
        decay_envelope,
        single_point,
        alpha_norm,
        insufficient_n,
    }
}

pub const CSV_HEADER: &str = "n,eps,q,h1_ratio,lp_ratio,tail_q,total_q,norm_n,m1,m2,selected,margin";

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "NA".into())
}

impl ConcentrationReport {
    /// One row per `(n, ε, q)`; members without a solution get a single row
    /// of `NA` cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for m in &self.members {
            if !m.solved() {
                out.push_str(&format!("{}{}\n", m.n, ",NA".repeat(11)));
                continue;
            }
            let (m1, m2, sel) = match &m.split {
                Some(s) => (
                    Some(s.m1),
                    Some(s.m2),
                    s.selected.map(|k| k.to_string()).unwrap_or_else(|| "tie".into()),
                ),
                None => (None, None, "NA".into()),
            };
            let margin = m.decay.as_ref().map(|d| d.margin);
            for (k, ratio) in m.ratios.iter().enumerate() {
                for row in m.lq.iter().filter(|r| r.eps == self.eps_list[k]) {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                        m.n,
                        ratio.eps,
                        row.q,
                        ratio.h1_ratio,
                        ratio.lp_ratio,
                        row.tail,
                        row.total,
                        cell(m.norm_n),
                        cell(m1),
                        cell(m2),
                        sel,
                        cell(margin),
                    ));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Grid;
    use crate::problem::{kerr_shrinking_ball, make_two_point_family};

    fn fake_state(inst: ProblemInstance, u: ScalarField) -> GroundState {
        let inst = Arc::new(inst);
        GroundState {
            v: u.clone(),
            s: 1.0,
            u,
            residual: 0.0,
            alpha_check: 0.0,
            iterations: 0,
            start_label: "test".into(),
            runs: Vec::new(),
            trace: Vec::new(),
            instance: inst,
        }
    }

    fn kerr(n: usize, eps: f64) -> ProblemInstance {
        let g = Grid::new(1, &[-1.0], &[1.0], &[n]).unwrap();
        kerr_shrinking_ball(&g, &[eps], &[0.0], 1).unwrap().remove(0)
    }

    #[test]
    fn q_star_values() {
        assert_eq!(q_star(1, 4.0), 1.0);
        assert_eq!(q_star(2, 4.0), 2.0);
        assert_eq!(q_star(3, 3.0), 1.5);
        let th = thresholds(3, 3.0);
        assert_eq!(th.lower, Some(4.0));
        assert_eq!(th.critical, Some(6.0));
        assert!(!th.uniform_vanishing);
        assert!(thresholds(3, 5.0).uniform_vanishing);
    }

    #[test]
    fn ratios_for_localized_and_spread_fields() {
        let inst = kerr(199, 0.25);
        let g = inst.grid.clone();
        let inside = ScalarField::from_fn(g.clone(), |x| if x[0].abs() < 0.1 { (1.0 - (x[0] / 0.1).powi(2)).powi(2) } else { 0.0 });
        let gs = fake_state(inst.clone(), inside);
        let r = h1_lp_ratios(&gs, &[0.25]).unwrap();
        assert!(r[0].h1_ratio < 1e-12 && r[0].lp_ratio < 1e-12);
        let spread = ScalarField::from_fn(g, |x| (std::f64::consts::FRAC_PI_2 * x[0]).cos());
        let gs = fake_state(inst, spread);
        let r = h1_lp_ratios(&gs, &[0.01, 0.1, 0.3, 0.6]).unwrap();
        assert!(r[0].h1_ratio > 0.95);
        assert!(r.windows(2).all(|w| w[1].h1_ratio <= w[0].h1_ratio));
        assert!(!h1_lp_ratios(&gs, &[0.001]).unwrap()[0].empty_mask);
        let even = kerr(200, 0.25);
        let u = ScalarField::constant(even.grid.clone(), 1.0);
        assert!(h1_lp_ratios(&fake_state(even, u), &[0.001]).unwrap()[0].empty_mask);
    }

    #[test]
    fn tail_scan_adds_q_star() {
        let inst = kerr(99, 0.25);
        let u = ScalarField::constant(inst.grid.clone(), 1.0);
        let gs = fake_state(inst, u);
        let rows = lq_tail_scan(&gs, &[Exponent(2.0), Exponent::INFINITY], &[0.5]).unwrap();
        let qs: Vec<Exponent> = rows.iter().map(|r| r.q).collect();
        assert_eq!(qs, vec![Exponent(1.0), Exponent(2.0), Exponent::INFINITY]);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.ratio)));
        assert_eq!(rows[2].total, 1.0);
    }

    #[test]
    fn envelope_on_exact_exponential() {
        let g = Grid::new(1, &[-6.0], &[6.0], &[1199]).unwrap();
        let v = ScalarField::constant(g.clone(), 1.0);
        let q = ScalarField::from_fn(g.clone(), |x| if x[0].abs() < 0.5 { 1.0 } else { -1.0 });
        let inst = ProblemInstance::new(v, ScalarField::zeros(g.clone()), q, 4.0, 1, vec![vec![0.0]], 0.5, true).unwrap();
        let u = ScalarField::from_fn(g.clone(), |x| (-x[0].abs()).exp());
        let gs = fake_state(inst.clone(), u);
        let d = decay_envelope_check(&gs, 1.0, 1.0, 0.0).unwrap();
        assert!(d.margin >= 0.0);
        let gs0 = fake_state(inst.clone(), ScalarField::zeros(g));
        assert_eq!(decay_envelope_check(&gs0, 1.0, 1.0, 0.1).unwrap().margin, 0.0);
        assert!(decay_envelope_check(&gs, 7.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn singular_constants() {
        let sc = singular_constant(3, 3.0, 1.0).unwrap();
        assert_eq!(sc, SingularConstant::Regular { c_p: 2.0, beta: 2.0 });
        let sc4 = singular_constant(3, 3.0, 4.0).unwrap();
        assert_eq!(sc4.value(), Some(0.5));
        for r in [0.5, 1.0, 2.0] {
            assert!(singular_residual(3, 3.0, 1.0, &sc, r).abs() < 1e-10);
            assert!(singular_residual(3, 3.0, 4.0, &sc4, r).abs() < 1e-10);
        }
        let flipped = singular_constant(3, 5.0, 1.0).unwrap();
        assert!(matches!(flipped, SingularConstant::SignFlipped { .. }));
        assert!(singular_residual(3, 5.0, 1.0, &flipped, 1.3).abs() < 1e-10);
        assert!(matches!(singular_constant(3, 4.0, 1.0).unwrap(), SingularConstant::Degenerate { .. }));
        assert!(singular_constant(2, 3.0, 1.0).is_err());
    }

    #[test]
    fn mass_split_cases() {
        let g = Grid::new(1, &[-1.0], &[1.0], &[199]).unwrap();
        let v = ScalarField::zeros(g.clone());
        let inst = make_two_point_family(&g, &[0.1], [1.0, 1.0], -1.0, &v, 4.0, &[-0.5], &[0.5], 1)
            .unwrap()
            .remove(0);
        let bump = |c: f64| move |x: &mesh::Point| (-(x[0] - c).powi(2) / 0.001).exp();
        let one = fake_state(inst.clone(), ScalarField::from_fn(g.clone(), bump(-0.5)));
        let s = two_point_mass_split(&one, 0.2).unwrap();
        assert!(s.m1 > 0.99 && s.m2 < 1e-6 && s.selected == Some(1));
        let sym = ScalarField::from_fn(g.clone(), |x| bump(-0.5)(x) + bump(0.5)(x));
        let s = two_point_mass_split(&fake_state(inst.clone(), sym), 0.2).unwrap();
        assert_eq!(s.selected, None);
        assert!(s.m1 + s.m2 <= 1.0 + 1e-12);
        assert!(two_point_mass_split(&one, 0.6).is_err());
    }

    #[test]
    fn exponent_serde() {
        let qs: Vec<Exponent> = serde_json::from_str(r#"[1, 2.5, "inf"]"#).unwrap();
        assert_eq!(qs[2], Exponent::INFINITY);
        assert_eq!(serde_json::to_string(&qs).unwrap(), r#"[1.0,2.5,"inf"]"#);
    }

    #[test]
    fn default_eps_respects_mesh() {
        assert_eq!(default_eps_list(0.5, 0.03), vec![0.5, 0.25, 0.125]);
    }
}
