//! Global maximizers of the perceptron potential, hence of the energy (the
//! maximizing measures are single Diracs). For ReLU without biases the
//! potential is `x^T B_I x` on each sign cell `I`, so the maximum is a finite
//! comparison of constrained quadratic programs. Smooth activations fall back
//! to grid search plus ascent.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perceptron::{ActivationKind, PerceptronParams};
use crate::sphere::{dot, geodesic_distance, norm, wrap_angle, Ensemble, UnitVector};

/// Random samples used to discover cells when d >= 3.
pub const CELL_SAMPLES: usize = 100_000;
const CELL_SEED: u64 = 0x5eed_ce11;
const TIE_TOL: f64 = 1e-9;
const DEDUP_TOL: f64 = 1e-6;
const FEAS_TOL: f64 = 1e-10;
const MIN_MARGIN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feasibility {
    /// Interval arithmetic on the circle.
    Exact,
    /// A strictly interior witness was found; missing cells are possible.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// `true` where `a_j . x > 0` on the cell.
    pub sign_pattern: Vec<bool>,
    pub active_set: Vec<usize>,
    pub representative: UnitVector,
    pub feasibility: Feasibility,
    /// Open arc `(start, end)` with `end > start`, circle only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub arc: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMax {
    pub cell: Cell,
    pub value: f64,
    pub argmax: Vec<UnitVector>,
    pub continuum_suspected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxMethod {
    Cells,
    GridAscent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxReport {
    pub value: f64,
    pub maximizers: Vec<UnitVector>,
    pub per_cell: Vec<CellMax>,
    pub continuum_suspected: bool,
    pub method: MaxMethod,
}

impl MaxReport {
    /// Energy of the maximizing Dirac, `e^beta/(2 beta) + value/2`.
    pub fn max_energy(&self, beta: f64) -> f64 {
        beta.exp() / (2.0 * beta) + 0.5 * self.value
    }
}

fn require_relu_cells(params: &PerceptronParams) -> Result<()> {
    params.validate()?;
    if params.activation != ActivationKind::Relu {
        return Err(Error::Inapplicable("sign cells need the ReLU activation".into()));
    }
    if params.has_bias() {
        return Err(Error::Inapplicable("sign cells need zero biases".into()));
    }
    Ok(())
}

fn signs_at(params: &PerceptronParams, x: &[f64]) -> Vec<bool> {
    params.neurons.iter().map(|n| dot(&n.a, x) > 0.0).collect()
}

fn cell_from_pattern(pattern: Vec<bool>, rep: Vec<f64>, feasibility: Feasibility, arc: Option<(f64, f64)>) -> Cell {
    let active_set = pattern.iter().enumerate().filter(|(_, &s)| s).map(|(j, _)| j).collect();
    Cell {
        sign_pattern: pattern,
        active_set,
        representative: UnitVector::from_raw(rep),
        feasibility,
        arc,
    }
}

/// All nonempty sign cells of the hyperplane arrangement `{a_j . x = 0}`.
pub fn enumerate_cells(params: &PerceptronParams) -> Result<Vec<Cell>> {
    require_relu_cells(params)?;
    if params.dim() == 2 {
        Ok(circle_cells(params))
    } else {
        Ok(sampled_cells(params))
    }
}

fn circle_cells(params: &PerceptronParams) -> Vec<Cell> {
    let mut cuts: Vec<f64> = Vec::new();
    for n in &params.neurons {
        if norm(&n.a) == 0.0 {
            continue;
        }
        let phi = n.a[1].atan2(n.a[0]);
        cuts.push(wrap_angle(phi + std::f64::consts::FRAC_PI_2));
        cuts.push(wrap_angle(phi - std::f64::consts::FRAC_PI_2));
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|b, a| (*b - *a).abs() < 1e-12);
    if cuts.len() > 1 && cuts[0] + std::f64::consts::TAU - cuts[cuts.len() - 1] < 1e-12 {
        cuts.pop();
    }
    if cuts.is_empty() {
        let x = vec![1.0, 0.0];
        return vec![cell_from_pattern(signs_at(params, &x), x, Feasibility::Exact, Some((0.0, std::f64::consts::TAU)))];
    }
    let k = cuts.len();
    (0..k)
        .map(|i| {
            let start = cuts[i];
            let end = if i + 1 < k { cuts[i + 1] } else { cuts[0] + std::f64::consts::TAU };
            let mid = 0.5 * (start + end);
            let x = vec![mid.cos(), mid.sin()];
            cell_from_pattern(signs_at(params, &x), x, Feasibility::Exact, Some((start, end)))
        })
        .collect()
}

// signed unit normals of the closed cell: s_j a_j . x >= 0
fn cell_normals(params: &PerceptronParams, pattern: &[bool]) -> Vec<Vec<f64>> {
    params
        .neurons
        .iter()
        .zip(pattern)
        .filter_map(|(n, &s)| {
            let l = norm(&n.a);
            (l > 0.0).then(|| n.a.iter().map(|v| if s { v / l } else { -v / l }).collect())
        })
        .collect()
}

fn min_margin(normals: &[Vec<f64>], x: &[f64]) -> (f64, usize) {
    normals
        .iter()
        .enumerate()
        .map(|(k, a)| (dot(a, x), k))
        .fold((f64::INFINITY, 0), |acc, v| if v.0 < acc.0 { v } else { acc })
}

fn normalize_in_place(x: &mut [f64]) {
    let l = norm(x);
    x.iter_mut().for_each(|v| *v /= l);
}

// subgradient ascent on min_j s_j a_j . x over the sphere
fn maximize_margin(normals: &[Vec<f64>], start: &[f64]) -> (f64, Vec<f64>) {
    let mut x = start.to_vec();
    let (mut best, _) = min_margin(normals, &x);
    let mut best_x = x.clone();
    if normals.is_empty() {
        return (f64::INFINITY, x);
    }
    for t in 0..3000 {
        let (_, k) = min_margin(normals, &x);
        let eta = 0.5 / (1.0 + t as f64).sqrt();
        x.iter_mut().zip(&normals[k]).for_each(|(v, a)| *v += eta * a);
        normalize_in_place(&mut x);
        let (m, _) = min_margin(normals, &x);
        if m > best {
            best = m;
            best_x.clone_from(&x);
        }
    }
    (best, best_x)
}

fn sampled_cells(params: &PerceptronParams) -> Vec<Cell> {
    let d = params.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(CELL_SEED);
    let mut found: HashMap<Vec<bool>, (f64, Vec<f64>)> = HashMap::new();
    for _ in 0..CELL_SAMPLES {
        let mut x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let l = norm(&x);
        if l == 0.0 {
            continue;
        }
        x.iter_mut().for_each(|v| *v /= l);
        let pattern = signs_at(params, &x);
        let (m, _) = min_margin(&cell_normals(params, &pattern), &x);
        if m <= 0.0 {
            continue;
        }
        let e = found.entry(pattern).or_insert((m, x.clone()));
        if m > e.0 {
            *e = (m, x);
        }
    }

    // walk single-hyperplane flips to pick up thin cells the samples missed
    let mut queue: VecDeque<Vec<bool>> = found.keys().cloned().collect::<Vec<_>>().into_iter().collect();
    let mut tried: std::collections::HashSet<Vec<bool>> = found.keys().cloned().collect();
    while let Some(p) = queue.pop_front() {
        let start = found[&p].1.clone();
        for j in 0..p.len() {
            if norm(&params.neurons[j].a) == 0.0 {
                continue;
            }
            let mut q = p.clone();
            q[j] = !q[j];
            if !tried.insert(q.clone()) {
                continue;
            }
            let (m, x) = maximize_margin(&cell_normals(params, &q), &start);
            if m > MIN_MARGIN && signs_at(params, &x) == q {
                found.insert(q.clone(), (m, x));
                queue.push_back(q);
            }
        }
    }

    let mut cells: Vec<Cell> = found
        .into_iter()
        .map(|(p, (_, x))| {
            let (_, x) = {
                let normals = cell_normals(params, &p);
                let (m, y) = maximize_margin(&normals, &x);
                if signs_at(params, &y) == p && m > 0.0 {
                    (m, y)
                } else {
                    (0.0, x)
                }
            };
            cell_from_pattern(p, x, Feasibility::Sampled, None)
        })
        .collect();
    cells.sort_by(|a, b| a.sign_pattern.cmp(&b.sign_pattern).reverse());
    cells
}

fn cell_matrix(params: &PerceptronParams, cell: &Cell) -> DMatrix<f64> {
    let d = params.dim();
    let mut b = DMatrix::zeros(d, d);
    for &j in &cell.active_set {
        let n = &params.neurons[j];
        let a = DVector::from_column_slice(&n.a);
        b += n.omega * &a * a.transpose();
    }
    b
}

fn quad(b: &DMatrix<f64>, x: &[f64]) -> f64 {
    let v = DVector::from_column_slice(x);
    (v.transpose() * b * &v)[(0, 0)]
}

/// Maximum of `x^T B_I x` over the closed cell.
pub fn cell_max(cell: &Cell, params: &PerceptronParams) -> Result<CellMax> {
    require_relu_cells(params)?;
    if cell.sign_pattern.len() != params.neurons.len() {
        return Err(Error::DimensionMismatch { expected: params.neurons.len(), got: cell.sign_pattern.len() });
    }
    let b = cell_matrix(params, cell);
    let (candidates, continuum) = match cell.arc {
        Some(arc) => arc_candidates(&b, arc),
        None => face_candidates(&b, &cell_normals(params, &cell.sign_pattern)),
    };
    let scored: Vec<(f64, Vec<f64>)> = candidates.into_iter().map(|x| (quad(&b, &x), x)).collect();
    let value = scored.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    if !value.is_finite() {
        return Err(Error::Inapplicable("no feasible point found in the cell closure".into()));
    }
    let argmax = dedup(scored.into_iter().filter(|s| s.0 >= value - TIE_TOL).map(|s| s.1));
    Ok(CellMax { cell: cell.clone(), value, argmax, continuum_suspected: continuum })
}

// x(t)^T B x(t) = p + q cos 2t + r sin 2t
fn arc_candidates(b: &DMatrix<f64>, (start, end): (f64, f64)) -> (Vec<Vec<f64>>, bool) {
    let at = |t: f64| vec![t.cos(), t.sin()];
    let q = 0.5 * (b[(0, 0)] - b[(1, 1)]);
    let r = b[(0, 1)];
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut out = vec![at(start), at(end)];
    if q.hypot(r) <= 1e-14 * (1.0 + scale) {
        out.push(at(0.5 * (start + end)));
        return (out, true);
    }
    let peak = 0.5 * r.atan2(q);
    for k in 0..4 {
        // shift the peak into [start, start + 2 pi)
        let t = start + wrap_angle(peak + k as f64 * std::f64::consts::PI - start);
        if t <= end {
            out.push(at(t));
        }
    }
    (out, false)
}

fn feasible(normals: &[Vec<f64>], x: &[f64]) -> bool {
    normals.iter().all(|a| dot(a, x) >= -FEAS_TOL)
}

fn subsets_up_to(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        f(cur);
        if cur.len() == k {
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::new(), &mut f);
}

// orthonormal basis of span{rows}^perp, or None if some row is dependent
fn complement_basis(d: usize, rows: &[&Vec<f64>]) -> Option<DMatrix<f64>> {
    let mut p = DMatrix::<f64>::identity(d, d);
    if !rows.is_empty() {
        let a = DMatrix::from_fn(d, rows.len(), |i, j| rows[j][i]);
        let svd = a.clone().svd(true, false);
        let smax = svd.singular_values.max();
        if svd.singular_values.iter().any(|&s| s <= 1e-10 * smax) {
            return None;
        }
        let u = svd.u?;
        p -= &u * u.transpose();
    }
    let eig = SymmetricEigen::new(p);
    let cols: Vec<DVector<f64>> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .filter(|(&l, _)| l > 0.5)
        .map(|(_, c)| c.into_owned())
        .collect();
    (!cols.is_empty()).then(|| DMatrix::from_columns(&cols))
}

// top eigenvectors of B restricted to every face subspace
fn face_candidates(b: &DMatrix<f64>, normals: &[Vec<f64>]) -> (Vec<Vec<f64>>, bool) {
    let d = b.nrows();
    let mut out = Vec::new();
    let mut degenerate = false;
    subsets_up_to(normals.len(), d - 1, |s| {
        let rows: Vec<&Vec<f64>> = s.iter().map(|&i| &normals[i]).collect();
        let Some(q) = complement_basis(d, &rows) else { return };
        let m = q.transpose() * b * &q;
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let top = eig.eigenvalues[order[0]];
        let tied = order.len() > 1 && eig.eigenvalues[order[1]] >= top - 1e-10 * (1.0 + top.abs());
        let y = eig.eigenvectors.column(order[0]);
        let mut x: Vec<f64> = (&q * y).iter().copied().collect();
        normalize_in_place(&mut x);
        for sign in [1.0, -1.0] {
            let cand: Vec<f64> = x.iter().map(|v| sign * v).collect();
            if feasible(normals, &cand) {
                degenerate |= tied;
                out.push(cand);
            }
        }
    });
    (out, degenerate)
}

fn dedup(points: impl IntoIterator<Item = Vec<f64>>) -> Vec<UnitVector> {
    let mut out: Vec<UnitVector> = Vec::new();
    for p in points {
        let mut p = p;
        normalize_in_place(&mut p);
        let u = UnitVector::from_raw(p);
        if out.iter().all(|q| geodesic_distance(q, &u) > DEDUP_TOL) {
            out.push(u);
        }
    }
    out
}

/// Global maximum of the perceptron potential on the sphere.
pub fn global_max(params: &PerceptronParams) -> Result<MaxReport> {
    params.validate()?;
    if params.activation == ActivationKind::Relu && !params.has_bias() {
        let per_cell = enumerate_cells(params)?
            .iter()
            .map(|c| cell_max(c, params))
            .collect::<Result<Vec<_>>>()?;
        let value = per_cell.iter().map(|c| c.value).fold(f64::NEG_INFINITY, f64::max);
        let best: Vec<&CellMax> = per_cell.iter().filter(|c| c.value >= value - TIE_TOL).collect();
        let continuum_suspected = best.iter().any(|c| c.continuum_suspected);
        let maximizers = dedup(best.iter().flat_map(|c| c.argmax.iter().map(|u| u.coords().to_vec())));
        Ok(MaxReport { value, maximizers, per_cell, continuum_suspected, method: MaxMethod::Cells })
    } else {
        grid_ascent(params)
    }
}

// Riemannian gradient of v is twice the drift
fn ascend(params: &PerceptronParams, start: &[f64]) -> Vec<f64> {
    let d = start.len();
    let mut x = start.to_vec();
    let mut val = params.potential_raw(&x);
    let mut step = 0.1;
    for _ in 0..2000 {
        let mut g = vec![0.0; d];
        params.add_raw_drift(&x, 2.0, &mut g);
        let xg = dot(&x, &g);
        g.iter_mut().zip(&x).for_each(|(gi, xi)| *gi -= xg * xi);
        if norm(&g) < 1e-13 {
            break;
        }
        loop {
            let mut y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + step * b).collect();
            normalize_in_place(&mut y);
            let v = params.potential_raw(&y);
            if v >= val {
                x = y;
                val = v;
                step *= 1.5;
                break;
            }
            step *= 0.5;
            if step < 1e-16 {
                return x;
            }
        }
    }
    x
}

fn grid_ascent(params: &PerceptronParams) -> Result<MaxReport> {
    let d = params.dim();
    let grid: Vec<Vec<f64>> = match d {
        2 => (0..100_000)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / 100_000.0;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => fibonacci_sphere(200_000),
        _ => return Err(Error::Inapplicable(format!("grid search supports d <= 3, got d = {d}"))),
    };
    let vals: Vec<f64> = grid.iter().map(|x| params.potential_raw(x)).collect();
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]));
    let refined: Vec<(f64, Vec<f64>)> = order
        .iter()
        .take(64)
        .map(|&i| {
            let x = ascend(params, &grid[i]);
            (params.potential_raw(&x), x)
        })
        .collect();
    let value = refined.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let maximizers = dedup(refined.into_iter().filter(|r| r.0 >= value - TIE_TOL).map(|r| r.1));
    let continuum_suspected = maximizers.len() > 4;
    Ok(MaxReport { value, maximizers, per_cell: Vec::new(), continuum_suspected, method: MaxMethod::GridAscent })
}

pub(crate) fn fibonacci_sphere(n: usize) -> Vec<Vec<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * k as f64;
            vec![r * t.cos(), r * t.sin(), z]
        })
        .collect()
}

/// `a_j = alpha_j a` for a common `a`: `|a|^2 max{sum_{alpha>0} w alpha^2, sum_{alpha<0} w alpha^2, 0}`.
/// `None` when the directions are not collinear.
pub fn collinear_max(params: &PerceptronParams) -> Option<f64> {
    let dir = params.neurons.iter().map(|n| &n.a).find(|a| norm(a) > 0.0)?;
    let l = norm(dir);
    let unit: Vec<f64> = dir.iter().map(|v| v / l).collect();
    let (mut pos, mut neg) = (0.0, 0.0);
    for n in &params.neurons {
        let alpha = dot(&n.a, &unit);
        let resid: f64 = n.a.iter().zip(&unit).map(|(a, u)| (a - alpha * u).powi(2)).sum::<f64>().sqrt();
        if resid > 1e-12 * (1.0 + norm(&n.a)) {
            return None;
        }
        if alpha > 0.0 {
            pos += n.omega * alpha * alpha;
        } else if alpha < 0.0 {
            neg += n.omega * alpha * alpha;
        }
    }
    Some(pos.max(neg).max(0.0))
}

/// `a_j = alpha_j e_j`, `omega_j = 1`: `max_j alpha_j^2`.
pub fn diagonal_max(params: &PerceptronParams) -> Option<f64> {
    let d = params.dim();
    if params.neurons.len() > d {
        return None;
    }
    let mut best: f64 = 0.0;
    for (j, n) in params.neurons.iter().enumerate() {
        if n.omega != 1.0 || n.a.iter().enumerate().any(|(i, &v)| i != j && v != 0.0) {
            return None;
        }
        best = best.max(n.a[j] * n.a[j]);
    }
    Some(best)
}

/// Entrywise nonnegative `a_j`, `omega_j = 1`: the top eigenpair of `A^T A`
/// with a nonnegative eigenvector.
pub fn nonnegative_max(params: &PerceptronParams) -> Option<(f64, UnitVector)> {
    if params.neurons.iter().any(|n| n.omega != 1.0 || n.a.iter().any(|&v| v < 0.0)) {
        return None;
    }
    let d = params.dim();
    let a = DMatrix::from_fn(params.neurons.len(), d, |i, j| params.neurons[i].a[j]);
    let eig = SymmetricEigen::new(a.transpose() * &a);
    let k = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(k);
    let s = if v.sum() < 0.0 { -1.0 } else { 1.0 };
    let mut x: Vec<f64> = v.iter().map(|c| (s * c).max(0.0)).collect();
    normalize_in_place(&mut x);
    Some((eig.eigenvalues[k], UnitVector::from_raw(x)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub axis: Vec<f64>,
    pub discrepancy: f64,
    pub tol: f64,
    pub pass: bool,
}

const SYMMETRY_PROJECTIONS: usize = 64;
const SYMMETRY_ROTATIONS: usize = 16;
const SYMMETRY_SEED: u64 = 0x5133_7e77;

fn rotate_about(axis: &[f64], angle: f64, x: &[f64]) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    let kx = dot(axis, x);
    let cross = [
        axis[1] * x[2] - axis[2] * x[1],
        axis[2] * x[0] - axis[0] * x[2],
        axis[0] * x[1] - axis[1] * x[0],
    ];
    (0..3).map(|i| x[i] * c + cross[i] * s + axis[i] * kx * (1.0 - c)).collect()
}

// W1 between two weighted samples on the line
fn w1_line(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = a.iter().copied().chain(b.iter().map(|&(v, m)| (v, -m))).collect();
    pts.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut cum = 0.0;
    let mut total = 0.0;
    for w in pts.windows(2) {
        cum += w[0].1;
        total += cum.abs() * (w[1].0 - w[0].0);
    }
    total
}

/// Sliced W1 distance between `ens` and its rotations about the common axis of
/// the active neurons. Only meaningful for d = 3 with collinear directions.
pub fn minimizer_symmetry_check(ens: &Ensemble, params: &PerceptronParams, tol: f64) -> Result<SymmetryReport> {
    if ens.dim() != 3 || params.dim() != 3 {
        return Err(Error::Inapplicable("symmetry check is implemented for d = 3".into()));
    }
    let dirs: Vec<&Vec<f64>> = params.neurons.iter().filter(|n| n.omega != 0.0 && norm(&n.a) > 0.0).map(|n| &n.a).collect();
    let axis: Vec<f64> = match dirs.first() {
        Some(a) => {
            let l = norm(a);
            a.iter().map(|v| v / l).collect()
        }
        None => vec![0.0, 0.0, 1.0],
    };
    for a in &dirs {
        let along = dot(a, &axis);
        let resid: f64 = a.iter().zip(&axis).map(|(v, k)| (v - along * k).powi(2)).sum::<f64>().sqrt();
        if resid > 1e-9 * norm(a) {
            return Err(Error::Inapplicable("active neuron directions are not collinear; no rotation fixes them".into()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(SYMMETRY_SEED);
    let projections: Vec<Vec<f64>> = (0..SYMMETRY_PROJECTIONS)
        .map(|_| {
            let mut u: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            normalize_in_place(&mut u);
            u
        })
        .collect();
    let angles: Vec<f64> = (0..SYMMETRY_ROTATIONS)
        .map(|_| rand::Rng::gen_range(&mut rng, 0.0..std::f64::consts::TAU))
        .collect();

    let pts: Vec<&[f64]> = ens.positions().iter().map(|p| p.coords()).collect();
    let mut discrepancy: f64 = 0.0;
    for &phi in &angles {
        let rotated: Vec<Vec<f64>> = pts.iter().map(|x| rotate_about(&axis, phi, x)).collect();
        let mut sliced = 0.0;
        for u in &projections {
            let a: Vec<(f64, f64)> = pts.iter().zip(ens.masses()).map(|(x, &m)| (dot(u, x), m)).collect();
            let b: Vec<(f64, f64)> = rotated.iter().zip(ens.masses()).map(|(x, &m)| (dot(u, x), m)).collect();
            sliced += w1_line(&a, &b);
        }
        discrepancy = discrepancy.max(sliced / projections.len() as f64);
    }
    Ok(SymmetryReport { axis, discrepancy, tol, pass: discrepancy <= tol })
}
