//! Uniform-grid discretization of a box in one or two dimensions.
//!
//! Unknowns live on interior nodes only; homogeneous Dirichlet values sit on
//! ghost nodes just outside. The operator `−Δ_h + c` uses the 3-point (1D)
//! or 5-point (2D) stencil, and the discrete H¹-type form is assembled from
//! squared forward differences over every cell edge, ghost edges included.
//! With the node-value rectangle rule for integrals the two agree exactly:
//!
//! ```text
//! Σ_edges |D v|² · h^N + Σ_i c_i v_i² · h^N  =  ⟨(−Δ_h + c) v, v⟩ · h^N
//! ```

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// A node coordinate. The second entry is zero in 1D.
pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    n_nodes: Vec<usize>,
    h: Vec<f64>,
    /// Whether this box stands in for an unbounded domain.
    unbounded_truncation: bool,
}

impl Grid {
    /// Builds a grid with `n_nodes[axis]` interior nodes per axis.
    pub fn new(dim: usize, lo: &[f64], hi: &[f64], n_nodes: &[usize]) -> Result<Arc<Grid>> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if lo.len() != dim || hi.len() != dim || n_nodes.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} entries for lo, hi and n_nodes"
            )));
        }
        let mut h = Vec::with_capacity(dim);
        for axis in 0..dim {
            let (a, b, n) = (lo[axis], hi[axis], n_nodes[axis]);
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::InvalidGrid(format!("non-finite bounds on axis {axis}")));
            }
            if a >= b {
                return Err(Error::InvalidGrid(format!("lo >= hi on axis {axis} ({a} >= {b})")));
            }
            if n < 3 {
                return Err(Error::InvalidGrid(format!(
                    "need at least 3 nodes on axis {axis}, got {n}"
                )));
            }
            h.push((b - a) / (n + 1) as f64);
        }
        Ok(Arc::new(Grid {
            dim,
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            n_nodes: n_nodes.to_vec(),
            h,
            unbounded_truncation: false,
        }))
    }

    /// Same grid, flagged as a truncation of an unbounded domain.
    pub fn truncating(mut self) -> Self {
        self.unbounded_truncation = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn n_nodes(&self) -> &[usize] {
        &self.n_nodes
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h
    }

    pub fn is_truncated(&self) -> bool {
        self.unbounded_truncation
    }

    /// Total number of interior nodes.
    pub fn len(&self) -> usize {
        self.n_nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight of a single node, `Π h`.
    pub fn cell_volume(&self) -> f64 {
        self.h.iter().product()
    }

    /// Largest spacing over all axes.
    pub fn max_spacing(&self) -> f64 {
        self.h.iter().cloned().fold(0.0, f64::max)
    }

    /// Coordinate of interior index `i` along `axis`.
    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        self.lo[axis] + (i + 1) as f64 * self.h[axis]
    }

    /// Coordinates of the node with flat (row-major) index `idx`.
    pub fn point(&self, idx: usize) -> Point {
        match self.dim {
            1 => [self.axis_coord(0, idx), 0.0],
            _ => {
                let n1 = self.n_nodes[1];
                [self.axis_coord(0, idx / n1), self.axis_coord(1, idx % n1)]
            }
        }
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// Whether `p` lies strictly inside the box.
    pub fn contains(&self, p: &[f64]) -> bool {
        (0..self.dim).all(|a| p.get(a).is_some_and(|x| *x > self.lo[a] && *x < self.hi[a]))
    }

    /// Distance from `p` to the boundary of the box (assumes `p` inside).
    pub fn distance_to_boundary(&self, p: &[f64]) -> f64 {
        (0..self.dim)
            .map(|a| (p[a] - self.lo[a]).min(self.hi[a] - p[a]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Radius of the smallest ball about `center` containing the whole box.
    pub fn circumradius_about(&self, center: &[f64]) -> f64 {
        let mut s = 0.0;
        for a in 0..self.dim {
            let d = (center[a] - self.lo[a]).abs().max((self.hi[a] - center[a]).abs());
            s += d * d;
        }
        s.sqrt()
    }
}

/// Free-function form of [`Grid::new`].
pub fn build_grid(dim: usize, lo: &[f64], hi: &[f64], n_nodes: &[usize]) -> Result<Arc<Grid>> {
    Grid::new(dim, lo, hi, n_nodes)
}

/// Euclidean distance between a node and a center given with `dim` entries.
pub fn distance(dim: usize, p: &Point, center: &[f64]) -> f64 {
    let mut s = 0.0;
    for a in 0..dim {
        let d = p[a] - center.get(a).copied().unwrap_or(0.0);
        s += d * d;
    }
    s.sqrt()
}

fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// Node values on a grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        ScalarField {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Self {
        let n = grid.len();
        ScalarField {
            grid,
            values: vec![value; n],
        }
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&Point) -> f64) -> Self {
        let values = grid.points().map(|p| f(&p)).collect();
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> ScalarField {
        self.map(|v| c * v)
    }

    pub fn abs(&self) -> ScalarField {
        self.map(f64::abs)
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        self.check_same(other)?;
        Ok(ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Plain Euclidean inner product of node values (no quadrature weight).
    pub fn dot(&self, other: &ScalarField) -> Result<f64> {
        self.check_same(other)?;
        Ok(linalg::dot(&self.values, &other.values))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn check_same(&self, other: &ScalarField) -> Result<()> {
        if same_grid(&self.grid, &other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// A set of nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    grid: Arc<Grid>,
    member: Vec<bool>,
}

impl RegionMask {
    pub fn full(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        RegionMask {
            grid,
            member: vec![true; n],
        }
    }

    pub fn empty(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        RegionMask {
            grid,
            member: vec![false; n],
        }
    }

    pub fn from_predicate(grid: Arc<Grid>, pred: impl Fn(&Point) -> bool) -> Self {
        let member = grid.points().map(|p| pred(&p)).collect();
        RegionMask { grid, member }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn members(&self) -> &[bool] {
        &self.member
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.member[idx]
    }

    pub fn count(&self) -> usize {
        self.member.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn complement(&self) -> RegionMask {
        RegionMask {
            grid: self.grid.clone(),
            member: self.member.iter().map(|m| !m).collect(),
        }
    }

    pub fn union(&self, other: &RegionMask) -> Result<RegionMask> {
        self.combine(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &RegionMask) -> Result<RegionMask> {
        self.combine(other, |a, b| a && b)
    }

    /// Whether `self` and `other` share a node.
    pub fn overlaps(&self, other: &RegionMask) -> Result<bool> {
        Ok(!self.intersection(other)?.is_empty())
    }

    fn combine(&self, other: &RegionMask, f: impl Fn(bool, bool) -> bool) -> Result<RegionMask> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(Error::GridMismatch);
        }
        Ok(RegionMask {
            grid: self.grid.clone(),
            member: self.member.iter().zip(&other.member).map(|(a, b)| f(*a, *b)).collect(),
        })
    }
}

/// Nodes with `|x − center| < radius`, or `≥ radius` when `complement` is set.
pub fn ball_mask(grid: &Arc<Grid>, center: &[f64], radius: f64, complement: bool) -> Result<RegionMask> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("ball radius must be positive, got {radius}")));
    }
    if center.len() < grid.dim() {
        return Err(Error::InvalidArgument(format!(
            "center has {} coordinates, grid is {}D",
            center.len(),
            grid.dim()
        )));
    }
    let dim = grid.dim();
    Ok(RegionMask::from_predicate(grid.clone(), |p| {
        (distance(dim, p, center) < radius) != complement
    }))
}

/// Union of the balls `B_radius(c)` over `centers`.
pub fn union_of_balls(grid: &Arc<Grid>, centers: &[Vec<f64>], radius: f64) -> Result<RegionMask> {
    let mut mask = RegionMask::empty(grid.clone());
    for c in centers {
        mask = mask.union(&ball_mask(grid, c, radius, false)?)?;
    }
    Ok(mask)
}

/// `(−Δ_h + coeff) v` with homogeneous Dirichlet ghost values.
pub fn apply_operator(coeff: &ScalarField, v: &ScalarField) -> Result<ScalarField> {
    coeff.check_same(v)?;
    let mut out = vec![0.0; v.len()];
    apply_raw(&coeff.grid, &coeff.values, &v.values, &mut out);
    Ok(ScalarField {
        grid: v.grid.clone(),
        values: out,
    })
}

pub(crate) fn apply_raw(grid: &Grid, coeff: &[f64], v: &[f64], out: &mut [f64]) {
    match grid.dim {
        1 => {
            let n = grid.n_nodes[0];
            let inv = 1.0 / (grid.h[0] * grid.h[0]);
            for i in 0..n {
                let left = if i > 0 { v[i - 1] } else { 0.0 };
                let right = if i + 1 < n { v[i + 1] } else { 0.0 };
                out[i] = (2.0 * v[i] - left - right) * inv + coeff[i] * v[i];
            }
        }
        _ => {
            let (n0, n1) = (grid.n_nodes[0], grid.n_nodes[1]);
            let inv0 = 1.0 / (grid.h[0] * grid.h[0]);
            let inv1 = 1.0 / (grid.h[1] * grid.h[1]);
            for i in 0..n0 {
                for j in 0..n1 {
                    let k = i * n1 + j;
                    let west = if i > 0 { v[k - n1] } else { 0.0 };
                    let east = if i + 1 < n0 { v[k + n1] } else { 0.0 };
                    let south = if j > 0 { v[k - 1] } else { 0.0 };
                    let north = if j + 1 < n1 { v[k + 1] } else { 0.0 };
                    out[k] = (2.0 * v[k] - west - east) * inv0
                        + (2.0 * v[k] - south - north) * inv1
                        + coeff[k] * v[k];
                }
            }
        }
    }
}

/// Pointwise density of the quadratic form: each edge's squared difference
/// quotient is split evenly between its two end nodes (ghost edges go wholly
/// to their interior node), plus `coeff · v²`. Integrating it with
/// [`integrate`] over the full grid reproduces `norm_n(v, coeff)²` exactly.
pub fn energy_density(v: &ScalarField, coeff: &ScalarField) -> Result<ScalarField> {
    v.check_same(coeff)?;
    let dens = density_raw(&v.grid, &coeff.values, &v.values);
    Ok(ScalarField {
        grid: v.grid.clone(),
        values: dens,
    })
}

fn density_raw(grid: &Grid, coeff: &[f64], vals: &[f64]) -> Vec<f64> {
    let mut dens: Vec<f64> = vals.iter().zip(coeff).map(|(u, c)| c * u * u).collect();
    match grid.dim {
        1 => {
            let n = grid.n_nodes[0];
            let inv = 1.0 / (grid.h[0] * grid.h[0]);
            add_axis_edges(&mut dens, vals, n, 1, 0, inv);
        }
        _ => {
            let (n0, n1) = (grid.n_nodes[0], grid.n_nodes[1]);
            let inv0 = 1.0 / (grid.h[0] * grid.h[0]);
            let inv1 = 1.0 / (grid.h[1] * grid.h[1]);
            for j in 0..n1 {
                add_axis_edges(&mut dens, vals, n0, n1, j, inv0);
            }
            for i in 0..n0 {
                add_axis_edges(&mut dens, vals, n1, 1, i * n1, inv1);
            }
        }
    }
    dens
}

/// Adds the edge energies of one grid line (`n` nodes at `offset + k·stride`).
fn add_axis_edges(dens: &mut [f64], v: &[f64], n: usize, stride: usize, offset: usize, inv_h2: f64) {
    let at = |k: usize| offset + k * stride;
    // ghost edges
    dens[at(0)] += v[at(0)] * v[at(0)] * inv_h2;
    dens[at(n - 1)] += v[at(n - 1)] * v[at(n - 1)] * inv_h2;
    for k in 0..n - 1 {
        let d = v[at(k + 1)] - v[at(k)];
        let e = 0.5 * d * d * inv_h2;
        dens[at(k)] += e;
        dens[at(k + 1)] += e;
    }
}

/// Rectangle-rule integral of `f` over the nodes of `region`.
pub fn integrate(f: &ScalarField, region: &RegionMask) -> Result<f64> {
    if !same_grid(&f.grid, &region.grid) {
        return Err(Error::GridMismatch);
    }
    let s: f64 = f
        .values
        .iter()
        .zip(&region.member)
        .filter(|(_, m)| **m)
        .map(|(v, _)| *v)
        .sum();
    Ok(s * f.grid.cell_volume())
}

/// Integral over the whole grid.
pub fn integrate_all(f: &ScalarField) -> f64 {
    f.values.iter().sum::<f64>() * f.grid.cell_volume()
}

/// `∫ (|∇v|² + coeff·v²)`, the discrete quadratic form.
pub fn quadratic_form(v: &ScalarField, coeff: &ScalarField) -> Result<f64> {
    Ok(integrate_all(&energy_density(v, coeff)?))
}

/// `‖v‖_n = (∫ |∇v|² + V_n v²)^{1/2}`.
pub fn norm_n(v: &ScalarField, v_n: &ScalarField) -> Result<f64> {
    let q = quadratic_form(v, v_n)?;
    if q < 0.0 {
        return Err(Error::IndefiniteForm { value: q });
    }
    Ok(q.sqrt())
}

/// `(∫_region |v|^q)^{1/q}`, or the max of `|v|` over `region` for `q = ∞`.
pub fn lq_norm(v: &ScalarField, q: f64, region: &RegionMask) -> Result<f64> {
    if q.is_nan() || q < 1.0 {
        return Err(Error::InvalidArgument(format!("Lebesgue exponent must be >= 1, got {q}")));
    }
    if !same_grid(&v.grid, &region.grid) {
        return Err(Error::GridMismatch);
    }
    let members = v.values.iter().zip(&region.member).filter(|(_, m)| **m).map(|(x, _)| x.abs());
    if q.is_infinite() {
        return Ok(members.fold(0.0, f64::max));
    }
    let s: f64 = members.map(|a| a.powf(q)).sum();
    Ok((s * v.grid.cell_volume()).powf(1.0 / q))
}

/// The operator `A = −Δ_h + coeff` together with a linear solver.
#[derive(Debug, Clone)]
pub struct Operator {
    coeff: ScalarField,
}

impl Operator {
    pub fn new(coeff: ScalarField) -> Self {
        Operator { coeff }
    }

    pub fn coeff(&self) -> &ScalarField {
        &self.coeff
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.coeff.grid
    }

    pub fn apply(&self, v: &ScalarField) -> Result<ScalarField> {
        apply_operator(&self.coeff, v)
    }

    pub fn apply_slice(&self, v: &[f64], out: &mut [f64]) {
        apply_raw(&self.coeff.grid, &self.coeff.values, v, out);
    }

    /// `⟨A v, v⟩` summed from edge differences, without the cell volume.
    pub fn form_slice(&self, v: &[f64]) -> f64 {
        density_raw(&self.coeff.grid, &self.coeff.values, v).iter().sum()
    }

    /// Solves `A x = rhs`. 1D systems use a direct tridiagonal sweep, 2D
    /// systems conjugate gradients started from `guess` (or zero). Fails with
    /// [`Error::IndefiniteForm`] when `A` is not positive definite.
    pub fn solve(&self, rhs: &[f64], guess: Option<&[f64]>, tol: f64) -> Result<Vec<f64>> {
        let grid = &self.coeff.grid;
        match grid.dim {
            1 => {
                let inv = 1.0 / (grid.h[0] * grid.h[0]);
                let diag: Vec<f64> = self.coeff.values.iter().map(|c| 2.0 * inv + c).collect();
                linalg::solve_sym_tridiagonal(&diag, -inv, rhs).ok_or(Error::IndefiniteForm { value: f64::NAN })
            }
            _ => {
                let mut x = guess.map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; rhs.len()]);
                let max_iter = 20 * rhs.len().max(100);
                let out = linalg::conjugate_gradient(|v, o| self.apply_slice(v, o), rhs, &mut x, tol, max_iter);
                if out.breakdown {
                    return Err(Error::IndefiniteForm { value: f64::NAN });
                }
                Ok(x)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_1d(n: usize) -> Arc<Grid> {
        Grid::new(1, &[0.0], &[1.0], &[n]).unwrap()
    }

    fn sine(grid: &Arc<Grid>) -> ScalarField {
        ScalarField::from_fn(grid.clone(), |p| (std::f64::consts::PI * p[0]).sin())
    }

    #[test]
    fn build_grid_examples() {
        let g = build_grid(1, &[-1.0], &[1.0], &[3]).unwrap();
        assert_eq!(g.spacing(), &[0.5]);
        let xs: Vec<f64> = g.points().map(|p| p[0]).collect();
        assert_eq!(xs, vec![-0.5, 0.0, 0.5]);

        let g = build_grid(2, &[0.0, 0.0], &[1.0, 1.0], &[9, 9]).unwrap();
        assert!((g.spacing()[0] - 0.1).abs() < 1e-15 && (g.spacing()[1] - 0.1).abs() < 1e-15);
        assert_eq!(g.len(), 81);

        assert!(build_grid(1, &[1.0], &[-1.0], &[9]).is_err());
        assert!(build_grid(1, &[0.0], &[1.0], &[2]).is_err());
        assert!(build_grid(1, &[f64::NEG_INFINITY], &[1.0], &[5]).is_err());
        assert!(build_grid(3, &[0.0; 3], &[1.0; 3], &[5; 3]).is_err());
    }

    #[test]
    fn no_node_on_boundary() {
        let g = build_grid(2, &[-1.0, 0.0], &[1.0, 2.0], &[7, 5]).unwrap();
        for p in g.points() {
            assert!(g.contains(&p));
        }
    }

    #[test]
    fn ball_mask_examples() {
        let g = build_grid(1, &[-1.0], &[1.0], &[3]).unwrap();
        let m = ball_mask(&g, &[0.0], 0.4, false).unwrap();
        assert_eq!(m.members(), &[false, true, false]);
        let m = ball_mask(&g, &[0.0], 0.4, true).unwrap();
        assert_eq!(m.members(), &[true, false, true]);
        let m = ball_mask(&g, &[0.0], 10.0, false).unwrap();
        assert_eq!(m.count(), 3);
        assert!(ball_mask(&g, &[0.0], 0.0, false).is_err());
        assert!(ball_mask(&g, &[0.0], -1.0, false).is_err());
    }

    #[test]
    fn stencil_example() {
        let g = build_grid(1, &[-1.0], &[1.0], &[3]).unwrap();
        let v = ScalarField::new(g.clone(), vec![0.0, 1.0, 0.0]).unwrap();
        let c = ScalarField::zeros(g.clone());
        let av = apply_operator(&c, &v).unwrap();
        assert_eq!(av.values(), &[-4.0, 8.0, -4.0]);
        let z = apply_operator(&c, &ScalarField::zeros(g)).unwrap();
        assert!(z.values().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn stencil_on_sine_is_second_order() {
        let pi2 = std::f64::consts::PI.powi(2);
        let mut prev = None;
        for n in [49, 99, 199] {
            let g = unit_1d(n);
            let v = sine(&g);
            let av = apply_operator(&ScalarField::zeros(g.clone()), &v).unwrap();
            let err = av
                .values()
                .iter()
                .zip(v.values())
                .map(|(a, b)| (a - pi2 * b).abs())
                .fold(0.0, f64::max);
            let h = g.spacing()[0];
            // Taylor remainder: |D²v − v''| ≤ h²/12 · max|v''''| = h² π⁴/12
            assert!(err <= h * h * pi2 * pi2 / 12.0 * 1.0001, "n={n} err={err}");
            if let Some(e) = prev {
                let ratio: f64 = e / err;
                assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
            }
            prev = Some(err);
        }
    }

    #[test]
    fn integrate_examples() {
        let g = unit_1d(999);
        let one = ScalarField::constant(g.clone(), 1.0);
        let full = RegionMask::full(g.clone());
        assert!((integrate(&one, &full).unwrap() - 0.999).abs() < 1e-12);
        let s2 = sine(&g).map(|v| v * v);
        assert!((integrate(&s2, &full).unwrap() - 0.5).abs() < 1e-4);
        assert_eq!(integrate(&one, &RegionMask::empty(g)).unwrap(), 0.0);
    }

    #[test]
    fn norm_examples() {
        let g = unit_1d(999);
        let v = sine(&g);
        let pi2 = std::f64::consts::PI.powi(2);
        let zero = ScalarField::zeros(g.clone());
        assert!((norm_n(&v, &zero).unwrap() - (pi2 / 2.0).sqrt()).abs() < 1e-3);
        assert_eq!(norm_n(&zero, &zero).unwrap(), 0.0);
        let one = ScalarField::constant(g, 1.0);
        assert!((norm_n(&v, &one).unwrap() - (pi2 / 2.0 + 0.5).sqrt()).abs() < 1e-3);
    }

    #[test]
    fn lq_examples() {
        let g = unit_1d(999);
        let full = RegionMask::full(g.clone());
        let two = ScalarField::constant(g.clone(), 2.0);
        assert_eq!(lq_norm(&two, f64::INFINITY, &full).unwrap(), 2.0);
        let v = sine(&g);
        assert!((lq_norm(&v, 4.0, &full).unwrap() - 0.375f64.powf(0.25)).abs() < 1e-3);
        assert!((lq_norm(&v, 1.0, &full).unwrap() - integrate(&v, &full).unwrap()).abs() < 1e-14);
        assert!(lq_norm(&v, 0.5, &full).is_err());
        assert_eq!(lq_norm(&v, f64::INFINITY, &RegionMask::empty(g)).unwrap(), 0.0);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let a = unit_1d(5);
        let b = unit_1d(7);
        let va = ScalarField::zeros(a);
        let vb = ScalarField::zeros(b.clone());
        assert!(matches!(apply_operator(&va, &vb), Err(Error::GridMismatch)));
        assert!(matches!(integrate(&va, &RegionMask::full(b)), Err(Error::GridMismatch)));
    }

    #[test]
    fn nonfinite_values_rejected() {
        let g = unit_1d(3);
        assert!(matches!(
            ScalarField::new(g, vec![0.0, f64::NAN, 1.0]),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn solve_inverts_apply_2d() {
        let g = build_grid(2, &[0.0, 0.0], &[1.0, 2.0], &[11, 17]).unwrap();
        let c = ScalarField::from_fn(g.clone(), |p| 1.0 + p[0] * p[1]);
        let op = Operator::new(c);
        let x = ScalarField::from_fn(g.clone(), |p| (p[0] * 3.0).sin() + p[1]);
        let b = op.apply(&x).unwrap();
        let y = op.solve(b.values(), None, 1e-13).unwrap();
        for (a, b) in x.values().iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
