//! Coefficient families `{V_n, Q_n}` and the discrete assumption checks.
//!
//! A family is an ordered list of [`ProblemInstance`]s indexed by `n`. The
//! builders here cover a shrinking self-focusing ball, a level shift of a
//! fixed profile, and two separated self-focusing islands; arbitrary
//! coefficients can be loaded from field dumps.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dump;
use crate::error::{Error, Result};
use crate::mesh::{self, Grid, Operator, RegionMask, ScalarField};
use crate::spectral::{self, SpectralOptions};

/// The cubic (Kerr) exponent.
pub const KERR_EXPONENT: f64 = 4.0;

/// Whether an instance admits a nontrivial solution at this resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceStatus {
    Feasible,
    /// `Q_n ≤ 0` at every node although the construction asked for a
    /// positive region: the region is thinner than the mesh.
    Unresolved,
    /// `Q_n ≤ 0` everywhere by construction.
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub grid: Arc<Grid>,
    pub v: ScalarField,
    pub k: ScalarField,
    pub q: ScalarField,
    /// `V + K`, cached.
    pub v_n: ScalarField,
    pub p: f64,
    pub n: usize,
    pub centers: Vec<Vec<f64>>,
    /// Width of the self-focusing region around each center (`ε_n` for ball
    /// families); sizes the default initial bumps.
    pub scale: f64,
    pub status: InstanceStatus,
    pub label: Option<String>,
}

impl ProblemInstance {
    /// Assembles an instance from node fields. `wanted_positive` tells whether
    /// the construction intended some positive `Q_n`, which separates
    /// [`InstanceStatus::Unresolved`] from [`InstanceStatus::Infeasible`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        v: ScalarField,
        k: ScalarField,
        q: ScalarField,
        p: f64,
        n: usize,
        centers: Vec<Vec<f64>>,
        scale: f64,
        wanted_positive: bool,
    ) -> Result<Self> {
        check_exponent(v.grid().dim(), p)?;
        let v_n = v.add(&k)?;
        q.check_same(&v)?;
        let grid = v.grid().clone();
        let status = if q.values().iter().any(|x| *x > 0.0) {
            InstanceStatus::Feasible
        } else if wanted_positive {
            InstanceStatus::Unresolved
        } else {
            InstanceStatus::Infeasible
        };
        Ok(ProblemInstance {
            grid,
            v,
            k,
            q,
            v_n,
            p,
            n,
            centers,
            scale,
            status,
            label: None,
        })
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = Some(label.to_string());
        self
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// `A = −Δ_h + V_n`.
    pub fn operator(&self) -> Operator {
        Operator::new(self.v_n.clone())
    }

    pub fn is_feasible(&self) -> bool {
        self.status == InstanceStatus::Feasible
    }
}

/// `2 < p`, and `p < 2N/(N−2)` when `N ≥ 3`.
pub fn check_exponent(dim: usize, p: f64) -> Result<()> {
    if !(p > 2.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!("exponent p must satisfy 2 < p < inf, got {p}")));
    }
    if dim >= 3 {
        let crit = 2.0 * dim as f64 / (dim as f64 - 2.0);
        if p >= crit {
            return Err(Error::InvalidArgument(format!("p = {p} is not below 2* = {crit}")));
        }
    }
    Ok(())
}

/// Perturbation `K_n` of a ball family: `amplitude` on `B_{radius_factor·ε_n}(center)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KSpec {
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "default_radius_factor")]
    pub radius_factor: f64,
}

fn default_radius_factor() -> f64 {
    1.0
}

impl KSpec {
    pub const ZERO: KSpec = KSpec {
        amplitude: 0.0,
        radius_factor: 1.0,
    };
}

impl Default for KSpec {
    fn default() -> Self {
        KSpec::ZERO
    }
}

fn check_center(grid: &Grid, center: &[f64]) -> Result<()> {
    if center.len() != grid.dim() || !grid.contains(center) {
        return Err(Error::InvalidArgument(format!("center {center:?} is not inside the grid")));
    }
    Ok(())
}

fn check_decreasing_to_zero(eps: &[f64], what: &str) -> Result<()> {
    if eps.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} sequence is empty")));
    }
    if eps.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} entries must be positive")));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(format!("{what} sequence must be strictly decreasing")));
    }
    Ok(())
}

/// Example (a) style family: `Q_n = q_plus` on `B_{ε_n}(center)` and
/// `q_minus` elsewhere, `K_n` supported in the same ball.
#[allow(clippy::too_many_arguments)]
pub fn make_family_shrinking_ball(
    grid: &Arc<Grid>,
    eps: &[f64],
    q_plus: f64,
    q_minus: f64,
    v: &ScalarField,
    k_spec: KSpec,
    p: f64,
    center: &[f64],
    first_index: usize,
) -> Result<Vec<ProblemInstance>> {
    if !(q_plus > 0.0) || !(q_minus < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need q_plus > 0 > q_minus, got {q_plus}, {q_minus}"
        )));
    }
    if !(k_spec.radius_factor > 0.0 && k_spec.radius_factor <= 1.0) {
        return Err(Error::InvalidArgument("K radius_factor must lie in (0, 1]".into()));
    }
    check_decreasing_to_zero(eps, "epsilon")?;
    check_center(grid, center)?;
    if eps[0] >= grid.distance_to_boundary(center) {
        return Err(Error::InvalidArgument(format!(
            "eps_1 = {} does not fit inside the domain around {center:?}",
            eps[0]
        )));
    }
    let dim = grid.dim();
    eps.iter()
        .enumerate()
        .map(|(i, &e)| {
            let q = ScalarField::from_fn(grid.clone(), |x| {
                if mesh::distance(dim, x, center) < e {
                    q_plus
                } else {
                    q_minus
                }
            });
            let kr = k_spec.radius_factor * e;
            let k = ScalarField::from_fn(grid.clone(), |x| {
                if mesh::distance(dim, x, center) < kr {
                    k_spec.amplitude
                } else {
                    0.0
                }
            });
            ProblemInstance::new(v.clone(), k, q, p, first_index + i, vec![center.to_vec()], e, true)
        })
        .collect()
}

/// Kerr preset of Example (a): `p = 4`, `V ≡ 0`, `q± = ±1`, no `K_n`.
pub fn kerr_shrinking_ball(grid: &Arc<Grid>, eps: &[f64], center: &[f64], first_index: usize) -> Result<Vec<ProblemInstance>> {
    let v = ScalarField::zeros(grid.clone());
    Ok(make_family_shrinking_ball(grid, eps, 1.0, -1.0, &v, KSpec::ZERO, KERR_EXPONENT, center, first_index)?
        .into_iter()
        .map(|inst| inst.with_label("kerr"))
        .collect())
}

/// Example (b) style family: `Q_n = Q − λ_n` for a profile with a unique
/// strict maximum at `center` and `λ_n` increasing towards that maximum.
pub fn make_family_level_shift(
    grid: &Arc<Grid>,
    q_profile: &ScalarField,
    lambdas: &[f64],
    v: &ScalarField,
    p: f64,
    center: &[f64],
    first_index: usize,
) -> Result<Vec<ProblemInstance>> {
    check_center(grid, center)?;
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("lambda sequence is empty".into()));
    }
    if lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("lambda sequence must be strictly increasing".into()));
    }
    let vals = q_profile.values();
    let top = q_profile.max();
    let argmax: Vec<usize> = (0..vals.len())
        .filter(|i| (vals[*i] - top).abs() <= 1e-14 * top.abs().max(1.0))
        .collect();
    if argmax.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "profile maximum is attained at {} nodes; a unique maximum is required",
            argmax.len()
        )));
    }
    let dim = grid.dim();
    let nearest = (0..vals.len())
        .min_by(|a, b| {
            let da = mesh::distance(dim, &grid.point(*a), center);
            let db = mesh::distance(dim, &grid.point(*b), center);
            da.total_cmp(&db)
        })
        .expect("grid is nonempty");
    if argmax[0] != nearest {
        return Err(Error::InvalidArgument("profile maximum is not at the center node".into()));
    }
    if let Some(l) = lambdas.iter().find(|l| **l >= top) {
        return Err(Error::InvalidArgument(format!("lambda {l} is not below the profile maximum {top}")));
    }
    lambdas
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let q = q_profile.map(|x| x - lambda);
            let scale = positive_set_radius(&q, center);
            let k = ScalarField::zeros(grid.clone());
            ProblemInstance::new(v.clone(), k, q, p, first_index + i, vec![center.to_vec()], scale, true)
        })
        .collect()
}

/// Largest distance from `center` of a node with `Q > 0`, at least one mesh width.
fn positive_set_radius(q: &ScalarField, center: &[f64]) -> f64 {
    let g = q.grid();
    let r = q
        .values()
        .iter()
        .enumerate()
        .filter(|(_, x)| **x > 0.0)
        .map(|(i, _)| mesh::distance(g.dim(), &g.point(i), center))
        .fold(0.0, f64::max);
    r.max(g.max_spacing())
}

/// §4 style family: `Q_n = q_plus[j]` on `B_{ε_n}(x_j)` for `j = 1, 2`, `q_minus` elsewhere.
#[allow(clippy::too_many_arguments)]
pub fn make_two_point_family(
    grid: &Arc<Grid>,
    eps: &[f64],
    q_plus: [f64; 2],
    q_minus: f64,
    v: &ScalarField,
    p: f64,
    x1: &[f64],
    x2: &[f64],
    first_index: usize,
) -> Result<Vec<ProblemInstance>> {
    if !(q_plus[0] > 0.0 && q_plus[1] > 0.0) || !(q_minus < 0.0) {
        return Err(Error::InvalidArgument("need q_plus > 0 > q_minus".into()));
    }
    check_decreasing_to_zero(eps, "epsilon")?;
    check_center(grid, x1)?;
    check_center(grid, x2)?;
    let dim = grid.dim();
    let sep = mesh::distance(dim, &to_point(x1), x2);
    if sep <= 2.0 * eps[0] {
        return Err(Error::InvalidArgument(format!(
            "balls of radius {} around {x1:?} and {x2:?} overlap",
            eps[0]
        )));
    }
    for c in [x1, x2] {
        if eps[0] >= grid.distance_to_boundary(c) {
            return Err(Error::InvalidArgument(format!("ball around {c:?} leaves the domain")));
        }
    }
    eps.iter()
        .enumerate()
        .map(|(i, &e)| {
            let q = ScalarField::from_fn(grid.clone(), |x| {
                if mesh::distance(dim, x, x1) < e {
                    q_plus[0]
                } else if mesh::distance(dim, x, x2) < e {
                    q_plus[1]
                } else {
                    q_minus
                }
            });
            let k = ScalarField::zeros(grid.clone());
            ProblemInstance::new(
                v.clone(),
                k,
                q,
                p,
                first_index + i,
                vec![x1.to_vec(), x2.to_vec()],
                e,
                true,
            )
        })
        .collect()
}

fn to_point(x: &[f64]) -> mesh::Point {
    [x[0], x.get(1).copied().unwrap_or(0.0)]
}

// ---------------------------------------------------------------------------
// Assumption checks

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub eps: f64,
    /// Least family index from which on `Q_m < 0` and `K_m = 0` outside the balls.
    pub n_eps: Option<usize>,
    /// `min_{m ≥ N_ε} (−max_{outside} Q_m)`.
    pub delta_eps: Option<f64>,
    /// Number of nodes outside the balls; zero makes the probe vacuous.
    pub outside_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRegion {
    pub lambda: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub n: usize,
    pub status: InstanceStatus,
    /// Node-set diameter of `{Q_n ≥ 0}`.
    pub nonneg_diameter: f64,
    pub sup_k: f64,
    pub sup_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionFlags {
    pub v_nonnegative: bool,
    pub spectrum_positive: bool,
    pub k_support_shrinks: bool,
    pub q_negative_outside: bool,
    pub q_positive_somewhere: bool,
    pub centers_distinct: bool,
}

impl AssumptionFlags {
    pub fn all(&self) -> bool {
        self.v_nonnegative
            && self.spectrum_positive
            && self.k_support_shrinks
            && self.q_negative_outside
            && self.q_positive_somewhere
            && self.centers_distinct
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// `sup_n ‖K_n‖_∞`
    pub b: f64,
    /// `sup_n ‖Q_n‖_∞`
    pub c: f64,
    pub probes: Vec<ProbeRow>,
    /// Common `δ` when every probe reports the same `δ_ε`.
    pub uniform_delta: Option<f64>,
    /// `(λ, R)` with `V ≥ λ > 0` at every node outside `B_R(0)`; `None` on a
    /// bounded domain whose `V` has no positive tail (the condition is then
    /// vacuous for `R` beyond the box).
    pub lambda_r: Option<DecayRegion>,
    pub min_eig: f64,
    pub min_eig_converged: bool,
    pub spacing: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub instances: Vec<InstanceRow>,
    pub flags: AssumptionFlags,
}

impl AssumptionReport {
    pub fn passes(&self) -> bool {
        self.flags.all()
    }
}

fn outside_mask(inst: &ProblemInstance, eps: f64) -> Result<RegionMask> {
    Ok(mesh::union_of_balls(&inst.grid, &inst.centers, eps)?.complement())
}

fn nonneg_diameter(q: &ScalarField) -> f64 {
    let g = q.grid();
    let pts: Vec<mesh::Point> = q
        .values()
        .iter()
        .enumerate()
        .filter(|(_, x)| **x >= 0.0)
        .map(|(i, _)| g.point(i))
        .collect();
    let mut d: f64 = 0.0;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            d = d.max(mesh::distance(g.dim(), a, b));
        }
    }
    d
}

/// Scans a family for the discrete forms of the standing assumptions.
pub fn validate_assumptions(
    family: &[ProblemInstance],
    eps_probes: &[f64],
    spectral_opts: &SpectralOptions,
) -> Result<AssumptionReport> {
    let first = family
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty family".into()))?;
    let grid = first.grid.clone();

    let b = family.iter().map(|i| i.k.max_abs()).fold(0.0, f64::max);
    let c = family.iter().map(|i| i.q.max_abs()).fold(0.0, f64::max);

    let mut probes = Vec::with_capacity(eps_probes.len());
    for &eps in eps_probes {
        // per instance: (K vanishes outside, max Q outside)
        let mut rows = Vec::with_capacity(family.len());
        let mut outside_nodes = 0;
        for inst in family {
            let outside = outside_mask(inst, eps)?;
            outside_nodes = outside.count();
            let mut k_ok = true;
            let mut q_max = f64::NEG_INFINITY;
            for (idx, m) in outside.members().iter().enumerate() {
                if *m {
                    k_ok &= inst.k.values()[idx] == 0.0;
                    q_max = q_max.max(inst.q.values()[idx]);
                }
            }
            rows.push((k_ok && q_max < 0.0, q_max));
        }
        let start = (0..=rows.len()).rev().take_while(|s| *s == rows.len() || rows[*s].0).last();
        let (n_eps, delta_eps) = match start {
            Some(s) if s < rows.len() => {
                let delta = rows[s..].iter().map(|r| -r.1).fold(f64::INFINITY, f64::min);
                (Some(family[s].n), if outside_nodes == 0 { None } else { Some(delta) })
            }
            _ => (None, None),
        };
        probes.push(ProbeRow {
            eps,
            n_eps,
            delta_eps,
            outside_nodes,
        });
    }

    let deltas: Vec<f64> = probes.iter().filter_map(|p| p.delta_eps).collect();
    let uniform_delta = if !deltas.is_empty() && deltas.len() == probes.len() {
        let lo = deltas.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = deltas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        ((hi - lo).abs() <= 1e-12 * hi.abs().max(1.0)).then_some(lo)
    } else {
        None
    };

    let lambda_r = decay_region(&first.v);
    let spec = spectral::smallest_eigenvalue(&first.v, spectral_opts)?;

    let instances: Vec<InstanceRow> = family
        .iter()
        .map(|i| InstanceRow {
            n: i.n,
            status: i.status,
            nonneg_diameter: nonneg_diameter(&i.q),
            sup_k: i.k.max_abs(),
            sup_q: i.q.max_abs(),
        })
        .collect();

    let centers_distinct = first.centers.iter().enumerate().all(|(i, a)| {
        first.centers[i + 1..]
            .iter()
            .all(|b| mesh::distance(grid.dim(), &to_point(a), b) > 0.0)
    });
    let probes_all = |f: &dyn Fn(&ProbeRow) -> bool| probes.iter().all(f);
    let flags = AssumptionFlags {
        v_nonnegative: family.iter().all(|i| i.v.min() >= 0.0),
        spectrum_positive: spec.min_eig > 0.0,
        k_support_shrinks: probes_all(&|p| p.n_eps.is_some() || p.outside_nodes == 0),
        q_negative_outside: probes_all(&|p| p.delta_eps.is_some_and(|d| d > 0.0) || p.outside_nodes == 0),
        q_positive_somewhere: family.iter().all(|i| i.is_feasible()),
        centers_distinct,
    };

    Ok(AssumptionReport {
        b,
        c,
        probes,
        uniform_delta,
        lambda_r,
        min_eig: spec.min_eig,
        min_eig_converged: spec.converged,
        spacing: grid.spacing().to_vec(),
        lo: grid.lo().to_vec(),
        hi: grid.hi().to_vec(),
        instances,
        flags,
    })
}

/// Smallest node radius `R` (about the origin) with `min_{|x| ≥ R} V > 0`, and that minimum.
pub fn decay_region(v: &ScalarField) -> Option<DecayRegion> {
    let g = v.grid();
    let mut nodes: Vec<(f64, f64)> = (0..g.len())
        .map(|i| (mesh::distance(g.dim(), &g.point(i), &[0.0, 0.0]), v.values()[i]))
        .collect();
    nodes.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = None;
    let mut running_min = f64::INFINITY;
    let mut k = 0;
    while k < nodes.len() {
        // treat nodes at equal radius together
        let r = nodes[k].0;
        while k < nodes.len() && nodes[k].0 == r {
            running_min = running_min.min(nodes[k].1);
            k += 1;
        }
        if running_min > 0.0 {
            best = Some(DecayRegion {
                lambda: running_min,
                radius: r,
            });
        } else {
            break;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Declarative family specs

/// An explicit list or a geometric descriptor `start · ratio^k`, `k < count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sequence {
    List(Vec<f64>),
    Geometric { start: f64, ratio: f64, count: usize },
}

impl Sequence {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Sequence::List(v) => v.clone(),
            Sequence::Geometric { start, ratio, count } => {
                let mut out = Vec::with_capacity(*count);
                let mut x = *start;
                for _ in 0..*count {
                    out.push(x);
                    x *= ratio;
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PotentialSpec {
    Constant {
        value: f64,
    },
    /// `inner` on `B_radius(center)`, `outer` elsewhere.
    Well {
        inner: f64,
        outer: f64,
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
    CustomDump {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProfileSpec {
    /// `peak − curvature · |x − center|²`
    Quadratic { peak: f64, curvature: f64 },
    /// `peak · exp(−|x − center|² / width²)`
    Gaussian { peak: f64, width: f64 },
    CustomDump { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Amplitudes {
    Same(f64),
    PerBall([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomMember {
    pub q: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyKind {
    ShrinkingBall {
        q_plus: f64,
        q_minus: f64,
        eps: Sequence,
        #[serde(default, rename = "K")]
        k: KSpec,
        center: Vec<f64>,
    },
    LevelShift {
        profile: ProfileSpec,
        lambda: Sequence,
        center: Vec<f64>,
    },
    TwoPoint {
        q_plus: Amplitudes,
        q_minus: f64,
        eps: Sequence,
        x1: Vec<f64>,
        x2: Vec<f64>,
    },
    Custom {
        members: Vec<CustomMember>,
        centers: Vec<Vec<f64>>,
        scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub p: f64,
    #[serde(rename = "V")]
    pub v: PotentialSpec,
    #[serde(default = "default_first_index")]
    pub first_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub kind: FamilyKind,
}

fn default_first_index() -> usize {
    1
}

fn load_field(grid: &Arc<Grid>, base_dir: &Path, path: &Path) -> Result<ScalarField> {
    let full = base_dir.join(path);
    let (_, field) = dump::read_dump(&full)?;
    if **field.grid() != **grid {
        return Err(Error::Config(format!("{} was dumped on a different grid", full.display())));
    }
    Ok(ScalarField::new(grid.clone(), field.into_values())?)
}

impl PotentialSpec {
    pub fn build(&self, grid: &Arc<Grid>, base_dir: &Path) -> Result<ScalarField> {
        match self {
            PotentialSpec::Constant { value } => Ok(ScalarField::constant(grid.clone(), *value)),
            PotentialSpec::Well {
                inner,
                outer,
                radius,
                center,
            } => {
                let c = center.clone().unwrap_or_else(|| vec![0.0; grid.dim()]);
                let dim = grid.dim();
                Ok(ScalarField::from_fn(grid.clone(), |x| {
                    if mesh::distance(dim, x, &c) < *radius {
                        *inner
                    } else {
                        *outer
                    }
                }))
            }
            PotentialSpec::CustomDump { path } => load_field(grid, base_dir, path),
        }
    }
}

impl ProfileSpec {
    pub fn build(&self, grid: &Arc<Grid>, center: &[f64], base_dir: &Path) -> Result<ScalarField> {
        let dim = grid.dim();
        match self {
            ProfileSpec::Quadratic { peak, curvature } => Ok(ScalarField::from_fn(grid.clone(), |x| {
                let r = mesh::distance(dim, x, center);
                peak - curvature * r * r
            })),
            ProfileSpec::Gaussian { peak, width } => Ok(ScalarField::from_fn(grid.clone(), |x| {
                let r = mesh::distance(dim, x, center);
                peak * (-(r * r) / (width * width)).exp()
            })),
            ProfileSpec::CustomDump { path } => load_field(grid, base_dir, path),
        }
    }
}

impl FamilySpec {
    /// Builds the family on `grid`; relative dump paths resolve against `base_dir`.
    pub fn build(&self, grid: &Arc<Grid>, base_dir: &Path) -> Result<Vec<ProblemInstance>> {
        let v = self.v.build(grid, base_dir)?;
        let family = match &self.kind {
            FamilyKind::ShrinkingBall {
                q_plus,
                q_minus,
                eps,
                k,
                center,
            } => make_family_shrinking_ball(grid, &eps.values(), *q_plus, *q_minus, &v, *k, self.p, center, self.first_index)?,
            FamilyKind::LevelShift { profile, lambda, center } => {
                let q = profile.build(grid, center, base_dir)?;
                make_family_level_shift(grid, &q, &lambda.values(), &v, self.p, center, self.first_index)?
            }
            FamilyKind::TwoPoint {
                q_plus,
                q_minus,
                eps,
                x1,
                x2,
            } => {
                let amps = match q_plus {
                    Amplitudes::Same(a) => [*a, *a],
                    Amplitudes::PerBall(a) => *a,
                };
                make_two_point_family(grid, &eps.values(), amps, *q_minus, &v, self.p, x1, x2, self.first_index)?
            }
            FamilyKind::Custom { members, centers, scale } => members
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let q = load_field(grid, base_dir, &m.q)?;
                    let k = match &m.k {
                        Some(path) => load_field(grid, base_dir, path)?,
                        None => ScalarField::zeros(grid.clone()),
                    };
                    ProblemInstance::new(v.clone(), k, q, self.p, self.first_index + i, centers.clone(), *scale, false)
                })
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(match &self.label {
            Some(l) => family.into_iter().map(|i| i.with_label(l)).collect(),
            None => family,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Arc<Grid> {
        Grid::new(1, &[-1.0], &[1.0], &[n]).unwrap()
    }

    fn opts() -> SpectralOptions {
        SpectralOptions::default()
    }

    #[test]
    fn shrinking_ball_positive_region() {
        let g = line(199);
        let v = ScalarField::zeros(g.clone());
        let fam = make_family_shrinking_ball(&g, &[0.5, 0.25], 1.0, -1.0, &v, KSpec::ZERO, 4.0, &[0.0], 1).unwrap();
        assert_eq!(fam.len(), 2);
        for (inst, e) in fam.iter().zip([0.5, 0.25]) {
            for (i, q) in inst.q.values().iter().enumerate() {
                let x = g.point(i)[0];
                assert_eq!(*q > 0.0, x.abs() < e);
            }
            assert_eq!(inst.v_n, v);
        }
        assert!(make_family_shrinking_ball(&g, &[0.5, 0.25], 1.0, 1.0, &v, KSpec::ZERO, 4.0, &[0.0], 1).is_err());
        assert!(make_family_shrinking_ball(&g, &[0.25, 0.5], 1.0, -1.0, &v, KSpec::ZERO, 4.0, &[0.0], 1).is_err());
        assert!(make_family_shrinking_ball(&g, &[0.5], 1.0, -1.0, &v, KSpec::ZERO, 4.0, &[3.0], 1).is_err());
        assert!(make_family_shrinking_ball(&g, &[0.5], 1.0, -1.0, &v, KSpec::ZERO, 2.0, &[0.0], 1).is_err());
    }

    #[test]
    fn k_supported_in_ball() {
        let g = line(199);
        let v = ScalarField::zeros(g.clone());
        let k = KSpec {
            amplitude: 0.5,
            radius_factor: 0.5,
        };
        let fam = make_family_shrinking_ball(&g, &[0.4], 1.0, -1.0, &v, k, 4.0, &[0.0], 1).unwrap();
        for (i, kv) in fam[0].k.values().iter().enumerate() {
            let x = g.point(i)[0];
            assert_eq!(*kv, if x.abs() < 0.2 { 0.5 } else { 0.0 });
        }
    }

    #[test]
    fn level_shift_positive_sets() {
        let g = line(201);
        let q = ScalarField::from_fn(g.clone(), |x| 1.0 - x[0] * x[0]);
        let v = ScalarField::zeros(g.clone());
        let fam = make_family_level_shift(&g, &q, &[0.5, 0.75], &v, 4.0, &[0.0], 1).unwrap();
        for (inst, r) in fam.iter().zip([0.5f64.sqrt(), 0.5]) {
            for (i, qv) in inst.q.values().iter().enumerate() {
                let x = g.point(i)[0];
                if (x.abs() - r).abs() > 1e-9 {
                    assert_eq!(*qv > 0.0, x.abs() < r, "x = {x}");
                }
            }
        }
        assert!(make_family_level_shift(&g, &q, &[1.5], &v, 4.0, &[0.0], 1).is_err());
        assert!(make_family_level_shift(&g, &q, &[0.75, 0.5], &v, 4.0, &[0.0], 1).is_err());
        let twin = ScalarField::from_fn(g.clone(), |x| 1.0 - (x[0] * x[0] - 0.25).powi(2));
        assert!(make_family_level_shift(&g, &twin, &[0.5], &v, 4.0, &[0.0], 1).is_err());
    }

    #[test]
    fn two_point_construction() {
        let g = line(399);
        let v = ScalarField::zeros(g.clone());
        let fam = make_two_point_family(&g, &[0.2, 0.1], [1.0, 2.0], -1.0, &v, 4.0, &[-0.5], &[0.5], 1).unwrap();
        let inst = &fam[0];
        assert_eq!(inst.centers, vec![vec![-0.5], vec![0.5]]);
        for (i, qv) in inst.q.values().iter().enumerate() {
            let x = g.point(i)[0];
            let expect = if (x + 0.5).abs() < 0.2 {
                1.0
            } else if (x - 0.5).abs() < 0.2 {
                2.0
            } else {
                -1.0
            };
            assert_eq!(*qv, expect);
        }
        assert!(make_two_point_family(&g, &[0.2], [1.0, 1.0], -1.0, &v, 4.0, &[0.5], &[0.5], 1).is_err());
        assert!(make_two_point_family(&g, &[0.6], [1.0, 1.0], -1.0, &v, 4.0, &[-0.5], &[0.5], 1).is_err());
    }

    #[test]
    fn validate_example_a() {
        let g = line(999);
        let eps: Vec<f64> = (1..=5).map(|n| 0.5f64.powi(n)).collect();
        let fam = kerr_shrinking_ball(&g, &eps, &[0.0], 1).unwrap();
        let r = validate_assumptions(&fam, &[0.5, 0.2, 0.05], &opts()).unwrap();
        assert_eq!(r.uniform_delta, Some(1.0));
        for p in &r.probes {
            assert_eq!(p.delta_eps, Some(1.0));
        }
        // N_eps is nondecreasing as eps decreases
        let ns: Vec<usize> = r.probes.iter().map(|p| p.n_eps.unwrap()).collect();
        assert!(ns.windows(2).all(|w| w[0] <= w[1]), "{ns:?}");
        assert_eq!(r.b, 0.0);
        assert_eq!(r.c, 1.0);
        assert!(r.passes());
        assert!(r.lambda_r.is_none());
    }

    #[test]
    fn validate_example_b_against_scan() {
        let g = line(400);
        let q = ScalarField::from_fn(g.clone(), |x| 1.0 - x[0] * x[0]);
        let v = ScalarField::zeros(g.clone());
        let lambdas = [0.5, 0.8, 0.9, 0.95, 0.99];
        let fam = make_family_level_shift(&g, &q, &lambdas, &v, 4.0, &[g.point(200)[0]], 1);
        // even node count has twin maxima: rejected
        assert!(fam.is_err());
        let g = line(401);
        let q = ScalarField::from_fn(g.clone(), |x| 1.0 - x[0] * x[0]);
        let v = ScalarField::zeros(g.clone());
        let fam = make_family_level_shift(&g, &q, &lambdas, &v, 4.0, &[0.0], 1).unwrap();
        let r = validate_assumptions(&fam, &[0.5], &opts()).unwrap();
        // direct scan: outside |x| >= 0.5 the max of Q is at the node nearest 0.5 from outside
        let qmax_out = g
            .points()
            .filter(|p| p[0].abs() >= 0.5)
            .map(|p| 1.0 - p[0] * p[0])
            .fold(f64::NEG_INFINITY, f64::max);
        let delta = lambdas.iter().filter(|l| **l > qmax_out).map(|l| l - qmax_out).fold(f64::INFINITY, f64::min);
        let row = &r.probes[0];
        assert_eq!(row.n_eps, Some(2));
        assert!((row.delta_eps.unwrap() - delta).abs() < 1e-14);
        assert!((delta - 0.05).abs() < 1e-2);
        assert!(r.uniform_delta.is_none() || r.probes.len() == 1);
        // the nonnegative set shrinks
        let d: Vec<f64> = r.instances.iter().map(|i| i.nonneg_diameter).collect();
        assert!(d.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn infeasible_member_flagged() {
        let g = line(99);
        let v = ScalarField::zeros(g.clone());
        let ok = kerr_shrinking_ball(&g, &[0.5], &[0.0], 1).unwrap().remove(0);
        let bad = ProblemInstance::new(
            v.clone(),
            ScalarField::zeros(g.clone()),
            ScalarField::constant(g.clone(), -1.0),
            4.0,
            2,
            vec![vec![0.0]],
            0.1,
            false,
        )
        .unwrap();
        assert_eq!(bad.status, InstanceStatus::Infeasible);
        let r = validate_assumptions(&[ok, bad], &[0.5], &opts()).unwrap();
        assert!(!r.flags.q_positive_somewhere);
        assert_eq!(r.instances[1].status, InstanceStatus::Infeasible);
    }

    #[test]
    fn tiny_ball_is_unresolved() {
        let g = line(9); // h = 0.2, node at 0
        let v = ScalarField::zeros(g.clone());
        let fam = make_family_shrinking_ball(&g, &[0.5, 0.05], 1.0, -1.0, &v, KSpec::ZERO, 4.0, &[0.1], 1).unwrap();
        assert_eq!(fam[0].status, InstanceStatus::Feasible);
        assert_eq!(fam[1].status, InstanceStatus::Unresolved);
    }

    #[test]
    fn negative_potential_fails_flag() {
        let g = line(99);
        let spec: FamilySpec = serde_json::from_str(
            r#"{"kind":"shrinking_ball","p":4,"V":{"kind":"constant","value":-0.5},
                "q_plus":1,"q_minus":-1,"eps":[0.5,0.25],"center":[0.0]}"#,
        )
        .unwrap();
        let fam = spec.build(&g, Path::new(".")).unwrap();
        let r = validate_assumptions(&fam, &[0.5], &opts()).unwrap();
        assert!(!r.flags.v_nonnegative);
        assert!(!r.passes());
    }

    #[test]
    fn decay_region_scan() {
        let g = Grid::new(1, &[-5.0], &[5.0], &[99]).unwrap();
        let v = ScalarField::from_fn(g.clone(), |x| if x[0].abs() < 0.5 { 0.0 } else { 1.0 });
        let d = decay_region(&v).unwrap();
        assert_eq!(d.lambda, 1.0);
        assert!(d.radius >= 0.5 && d.radius < 0.5 + 0.11);
    }

    #[test]
    fn spec_round_trip_and_geometric() {
        let text = r#"{"kind":"shrinking_ball","p":4.0,"V":{"kind":"well","inner":0.0,"outer":1.0,"radius":0.5},
                       "first_index":2,"q_plus":1.0,"q_minus":-1.0,
                       "eps":{"start":0.25,"ratio":0.5,"count":5},"center":[0.0]}"#;
        let spec: FamilySpec = serde_json::from_str(text).unwrap();
        let again: FamilySpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(spec, again);
        match &spec.kind {
            FamilyKind::ShrinkingBall { eps, .. } => {
                assert_eq!(eps.values(), vec![0.25, 0.125, 0.0625, 0.03125, 0.015625]);
            }
            _ => panic!("wrong kind"),
        }
        let fam = spec.build(&line(99), Path::new(".")).unwrap();
        assert_eq!(fam.iter().map(|i| i.n).collect::<Vec<_>>(), vec![2, 3, 4, 5, 6]);
    }
}
