//! Geometry of the unit sphere S^{d-1} and the weighted point-cloud container.
//!
//! Points are stored as plain coordinate vectors. The tangent projection is
//! `P_x v = v - (x.v) x`, the Euler step is retracted back to the sphere by
//! normalization, and distances are great-circle angles.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_TOL: f64 = 1e-12;
const MASS_TOL: f64 = 1e-12;
const MIN_RETRACT_NORM: f64 = 1e-8;

/// A point of S^{d-1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(Vec<f64>);

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(u: UnitVector) -> Self {
        u.0
    }
}

impl UnitVector {
    /// Wraps coordinates that already have unit norm (within 1e-12).
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidInput("unit vector needs at least one coordinate".into()));
        }
        let norm = norm(&coords);
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidInput(format!("vector norm {norm} is not 1")));
        }
        Ok(Self(coords))
    }

    /// Rescales a nonzero vector onto the sphere.
    pub fn normalize(mut coords: Vec<f64>) -> Result<Self> {
        let n = norm(&coords);
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidInput(format!("cannot normalize vector of norm {n}")));
        }
        coords.iter_mut().for_each(|c| *c /= n);
        Ok(Self(coords))
    }

    /// Point `(cos theta, sin theta)` of the circle.
    pub fn from_angle(theta: f64) -> Self {
        Self(vec![theta.cos(), theta.sin()])
    }

    /// Standard basis vector `e_i` in dimension `d`.
    pub fn basis(d: usize, i: usize) -> Self {
        assert!(i < d, "basis index {i} out of range for dimension {d}");
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        Self(v)
    }

    pub(crate) fn from_raw(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    /// Polar angle in `[0, 2pi)`; only meaningful for d = 2.
    pub fn angle(&self) -> f64 {
        wrap_angle(self.0[1].atan2(self.0[0]))
    }

    pub fn neg(&self) -> Self {
        Self(self.0.iter().map(|c| -c).collect())
    }
}

/// A vector in the tangent space at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: UnitVector,
    pub vec: Vec<f64>,
}

impl TangentVector {
    pub fn zero(base: UnitVector) -> Self {
        let d = base.dim();
        Self { base, vec: vec![0.0; d] }
    }

    pub fn norm(&self) -> f64 {
        norm(&self.vec)
    }
}

/// Orthogonal projection of `v` onto the tangent space at `x`.
pub fn project_tangent(x: &UnitVector, v: &[f64]) -> TangentVector {
    let mut out = v.to_vec();
    project_in_place(x.coords(), &mut out);
    TangentVector { base: x.clone(), vec: out }
}

/// Euler step followed by normalization: `(x + dt v) / |x + dt v|`.
pub fn retract(x: &UnitVector, v: &TangentVector, dt: f64) -> Result<UnitVector> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    let mut out = x.coords().to_vec();
    retract_in_place(&mut out, &v.vec, dt)?;
    Ok(UnitVector(out))
}

/// Great-circle distance `arccos(x.y)` with the inner product clamped to [-1, 1].
pub fn geodesic_distance(x: &UnitVector, y: &UnitVector) -> f64 {
    dot(x.coords(), y.coords()).clamp(-1.0, 1.0).acos()
}

pub(crate) fn project_in_place(x: &[f64], v: &mut [f64]) {
    let c = dot(x, v);
    v.iter_mut().zip(x).for_each(|(vi, xi)| *vi -= c * xi);
}

pub(crate) fn retract_in_place(x: &mut [f64], v: &[f64], dt: f64) -> Result<()> {
    x.iter_mut().zip(v).for_each(|(xi, vi)| *xi += dt * vi);
    let n = norm(x);
    if !(n >= MIN_RETRACT_NORM) {
        return Err(Error::StepTooLarge { norm: n });
    }
    x.iter_mut().for_each(|xi| *xi /= n);
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Maps an angle to `[0, 2pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let r = theta.rem_euclid(tau);
    if r >= tau {
        0.0
    } else {
        r
    }
}

/// Atomic probability measure `sum_i m_i delta_{x_i}` on S^{d-1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    positions: Vec<UnitVector>,
    masses: Vec<f64>,
}

impl Ensemble {
    pub fn new(positions: Vec<UnitVector>, masses: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidInput("ensemble must contain at least one atom".into()));
        }
        if positions.len() != masses.len() {
            return Err(Error::InvalidInput(format!(
                "{} positions but {} masses",
                positions.len(),
                masses.len()
            )));
        }
        let d = positions[0].dim();
        if let Some(p) = positions.iter().find(|p| p.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: p.dim() });
        }
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidInput("masses must be finite and nonnegative".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidInput(format!("masses sum to {total}, expected 1")));
        }
        Ok(Self { positions, masses })
    }

    /// Equal masses `1/N`.
    pub fn uniform(positions: Vec<UnitVector>) -> Result<Self> {
        let n = positions.len();
        Self::new(positions, vec![1.0 / n.max(1) as f64; n])
    }

    /// Atoms on the circle at the given angles.
    pub fn from_angles(angles: &[f64], masses: Vec<f64>) -> Result<Self> {
        Self::new(angles.iter().map(|&t| UnitVector::from_angle(t)).collect(), masses)
    }

    pub fn uniform_angles(angles: &[f64]) -> Result<Self> {
        Self::uniform(angles.iter().map(|&t| UnitVector::from_angle(t)).collect())
    }

    pub(crate) fn from_parts_unchecked(positions: Vec<UnitVector>, masses: Vec<f64>) -> Self {
        Self { positions, masses }
    }

    pub fn positions(&self) -> &[UnitVector] {
        &self.positions
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions[0].dim()
    }

    /// Polar angles of the atoms (d = 2).
    pub fn angles(&self) -> Vec<f64> {
        self.positions.iter().map(UnitVector::angle).collect()
    }

    /// Row-major `N x d` coordinate buffer.
    pub fn flat_coords(&self) -> Vec<f64> {
        self.positions.iter().flat_map(|p| p.coords().iter().copied()).collect()
    }

    /// Merges atoms closer than `tol` (geodesic) into their first representative,
    /// summing masses. Returns the merged ensemble and, for each original atom,
    /// the index of the atom it was merged into.
    pub fn merge_coincident(&self, tol: f64) -> (Ensemble, Vec<usize>) {
        let mut reps: Vec<usize> = Vec::new();
        let mut assign = vec![0usize; self.len()];
        let mut masses: Vec<f64> = Vec::new();
        for (i, p) in self.positions.iter().enumerate() {
            let hit = reps
                .iter()
                .position(|&r| geodesic_distance(&self.positions[r], p) <= tol);
            match hit {
                Some(k) => {
                    masses[k] += self.masses[i];
                    assign[i] = k;
                }
                None => {
                    assign[i] = reps.len();
                    reps.push(i);
                    masses.push(self.masses[i]);
                }
            }
        }
        let positions = reps.iter().map(|&r| self.positions[r].clone()).collect();
        (Ensemble { positions, masses }, assign)
    }

    /// Writes `idx,mass,x0,...,x{d-1}` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let d = self.dim();
        let mut header = vec!["idx".to_string(), "mass".to_string()];
        header.extend((0..d).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        for (i, (p, m)) in self.positions.iter().zip(&self.masses).enumerate() {
            let mut row = vec![i.to_string(), m.to_string()];
            row.extend(p.coords().iter().map(|c| c.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.len() < 3 || &headers[0] != "idx" || &headers[1] != "mass" {
            return Err(Error::InvalidInput("ensemble CSV must start with idx,mass,x0".into()));
        }
        let d = headers.len() - 2;
        let mut positions = Vec::new();
        let mut masses = Vec::new();
        for record in r.records() {
            let record = record?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("bad number {s:?}: {e}")))
            };
            masses.push(parse(&record[1])?);
            let coords = (0..d).map(|k| parse(&record[k + 2])).collect::<Result<Vec<_>>>()?;
            positions.push(UnitVector::new(coords)?);
        }
        Self::new(positions, masses)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}
