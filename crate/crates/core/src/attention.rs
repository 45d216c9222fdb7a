//! Interaction kernel `e^{beta x.y}`, energies, attention fields, the angular
//! Hessian of atomic configurations on the circle, and concavity diagnostics
//! of `K(theta) = e^{beta cos theta}`.
//!
//! Energy: `E[mu] = 1/(2 beta) sum_ij m_i m_j e^{beta x_i.x_j} + 1/2 sum_i m_i v(x_i)`.
//! Unnormalized field: `P_x sum_j m_j e^{beta x.x_j} x_j`. The normalized field
//! divides it by the first-variation weight `w(x) = 1/beta sum_j m_j e^{beta x.x_j}`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perceptron::PerceptronParams;
use crate::sphere::{dot, geodesic_distance, project_in_place, Ensemble, TangentVector, UnitVector};

/// Largest exponent `beta x.y` evaluated without error.
pub const EXPONENT_GUARD: f64 = 700.0;

/// Atoms closer than this (geodesic) are treated as coincident by [`hessian_d2`].
pub const COINCIDENT_TOL: f64 = 1e-9;

const KINK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Unnormalized,
    Softmax,
    /// Whole energy gradient, drift included, divided by the first-variation
    /// weight. Same stationary points as the unnormalized flow, softmax-like stiffness.
    Conformal,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unnormalized" | "usa" => Ok(Self::Unnormalized),
            "softmax" | "normalized" | "sa" => Ok(Self::Softmax),
            "conformal" => Ok(Self::Conformal),
            other => Err(Error::InvalidInput(format!("unknown normalization {other:?}"))),
        }
    }
}

/// Inverse temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub beta: f64,
}

impl KernelParams {
    pub fn new(beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self { beta })
    }
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("beta must be positive and finite, got {beta}")))
    }
}

#[inline]
pub(crate) fn guarded_exp(exponent: f64) -> Result<f64> {
    if exponent > EXPONENT_GUARD {
        Err(Error::Overflow { exponent })
    } else {
        Ok(exponent.exp())
    }
}

/// `(K, K', K'')` of `K(theta) = e^{beta cos theta}`.
pub fn kernel_derivs(beta: f64, theta: f64) -> Result<(f64, f64, f64)> {
    check_beta(beta)?;
    let (s, c) = theta.sin_cos();
    let k = guarded_exp(beta * c)?;
    Ok((k, -beta * s * k, k * (beta * beta * s * s - beta * c)))
}

/// Positive root of `K''` on `(0, pi)`: `arccos((sqrt(1 + 4 beta^2) - 1) / (2 beta))`.
pub fn theta_c(beta: f64) -> Result<f64> {
    check_beta(beta)?;
    // (sqrt(1+4b^2)-1)/(2b) rewritten as 2b/(sqrt(1+4b^2)+1) to avoid cancellation.
    let c = 2.0 * beta / ((1.0 + 4.0 * beta * beta).sqrt() + 1.0);
    Ok(c.clamp(-1.0, 1.0).acos())
}

/// Right-hand sides of the two kernel-curvature bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvatureBounds {
    /// Upper bound on `sup K''` over `|theta| <= lambda theta_c`.
    pub concave_bound: f64,
    /// Upper bound on `max K''` over `[theta_c, pi]`.
    pub max_tail_bound: f64,
}

pub fn curvature_bounds(beta: f64, lambda: f64) -> Result<CurvatureBounds> {
    check_beta(beta)?;
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Range(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    let l2 = lambda * lambda;
    Ok(CurvatureBounds {
        concave_bound: -(-l2 / 2.0).exp() * (1.0 - l2) / 2.0 * beta * beta.exp(),
        max_tail_bound: 2.0 * beta * (beta - 1.5).exp(),
    })
}

fn check_dims(ens: &Ensemble, x: &UnitVector) -> Result<()> {
    if ens.dim() != x.dim() {
        return Err(Error::DimensionMismatch { expected: ens.dim(), got: x.dim() });
    }
    Ok(())
}

/// Returns `(sum_j m_j e^{beta x.x_j} x_j, sum_j m_j e^{beta x.x_j})`.
fn kernel_moments(ens: &Ensemble, x: &UnitVector, beta: f64) -> Result<(Vec<f64>, f64)> {
    check_beta(beta)?;
    check_dims(ens, x)?;
    let mut v = vec![0.0; x.dim()];
    let mut total = 0.0;
    for (p, &m) in ens.positions().iter().zip(ens.masses()) {
        let k = m * guarded_exp(beta * x.dot(p.coords()))?;
        total += k;
        v.iter_mut().zip(p.coords()).for_each(|(vi, pi)| *vi += k * pi);
    }
    Ok((v, total))
}

/// First variation `w(x) = 1/beta sum_j m_j e^{beta x.x_j}`.
pub fn first_variation_weight(ens: &Ensemble, x: &UnitVector, beta: f64) -> Result<f64> {
    Ok(kernel_moments(ens, x, beta)?.1 / beta)
}

/// Attention field at `x`, unnormalized or divided by the first-variation weight.
pub fn attention_field(
    ens: &Ensemble,
    x: &UnitVector,
    beta: f64,
    normalization: Normalization,
) -> Result<TangentVector> {
    let (mut v, total) = kernel_moments(ens, x, beta)?;
    project_in_place(x.coords(), &mut v);
    if normalization != Normalization::Unnormalized {
        let w = total / beta;
        v.iter_mut().for_each(|c| *c /= w);
    }
    Ok(TangentVector { base: x.clone(), vec: v })
}

/// Projected softmax average `P_x sum_j softmax_j x_j`, i.e. the softmax field
/// with the factor `beta` divided out.
pub fn practical_softmax_field(ens: &Ensemble, x: &UnitVector, beta: f64) -> Result<TangentVector> {
    let mut t = attention_field(ens, x, beta, Normalization::Softmax)?;
    t.vec.iter_mut().for_each(|c| *c /= beta);
    Ok(t)
}

/// Full energy, interaction part plus half the perceptron potential.
pub fn total_energy(ens: &Ensemble, beta: f64, params: Option<&PerceptronParams>) -> Result<f64> {
    check_beta(beta)?;
    interaction_energy_flat(&ens.flat_coords(), ens.masses(), ens.dim(), beta).map(|e| {
        e + params.map_or(0.0, |p| {
            0.5 * ens
                .positions()
                .iter()
                .zip(ens.masses())
                .map(|(x, m)| m * p.potential_raw(x.coords()))
                .sum::<f64>()
        })
    })
}

pub(crate) fn interaction_energy_flat(coords: &[f64], masses: &[f64], d: usize, beta: f64) -> Result<f64> {
    let n = masses.len();
    let self_k = guarded_exp(beta)?;
    let mut total = 0.0;
    for i in 0..n {
        let xi = &coords[i * d..(i + 1) * d];
        let mut row = 0.0;
        for j in (i + 1)..n {
            row += masses[j] * guarded_exp(beta * dot(xi, &coords[j * d..(j + 1) * d]))?;
        }
        total += masses[i] * (2.0 * row + masses[i] * self_k);
    }
    Ok(total / (2.0 * beta))
}

/// Attention fields for every atom of a flat `N x d` buffer, using the pair
/// symmetry of the kernel. `fields` receives the projected unnormalized field,
/// `weights` the first-variation weight `w(x_i)`.
pub(crate) fn attention_fields_flat(
    coords: &[f64],
    masses: &[f64],
    d: usize,
    beta: f64,
    fields: &mut [f64],
    weights: &mut [f64],
) -> Result<()> {
    let n = masses.len();
    fields.iter_mut().for_each(|f| *f = 0.0);
    let self_k = guarded_exp(beta)?;
    for i in 0..n {
        weights[i] = masses[i] * self_k;
    }
    for i in 0..n {
        let (head, tail) = fields.split_at_mut((i + 1) * d);
        let fi = &mut head[i * d..];
        let xi = &coords[i * d..(i + 1) * d];
        for j in (i + 1)..n {
            let xj = &coords[j * d..(j + 1) * d];
            let k = guarded_exp(beta * dot(xi, xj))?;
            let (ki, kj) = (masses[j] * k, masses[i] * k);
            weights[i] += ki;
            weights[j] += kj;
            let fj = &mut tail[(j - i - 1) * d..(j - i) * d];
            for c in 0..d {
                fi[c] += ki * xj[c];
                fj[c] += kj * xi[c];
            }
        }
    }
    for i in 0..n {
        project_in_place(&coords[i * d..(i + 1) * d], &mut fields[i * d..(i + 1) * d]);
        weights[i] /= beta;
    }
    Ok(())
}

/// Symmetric Hessian of the energy in the angular coordinates of a circle configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianMatrix {
    pub entries: DMatrix<f64>,
    /// Atoms whose ReLU pre-activation sits on a kink (one-sided value used).
    pub kink_atoms: Vec<usize>,
}

impl HessianMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("Hessian must be square".into()));
        }
        Ok(Self {
            entries: DMatrix::from_fn(n, n, |i, j| rows[i][j]),
            kink_atoms: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..i).all(|j| (self.entries[(i, j)] - self.entries[(j, i)]).abs() <= tol))
    }

    /// Row-major CSV with a `n=<N>` header line.
    pub fn to_csv(&self) -> String {
        let n = self.dim();
        let mut out = format!("n={n}\n");
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| self.entries[(i, j)].to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let n: usize = header
            .strip_prefix("n=")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::InvalidInput(format!("bad Hessian header {header:?}")))?;
        let rows = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|e| Error::InvalidInput(e.to_string())))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.len() != n {
            return Err(Error::InvalidInput(format!("expected {n} rows, got {}", rows.len())));
        }
        Self::from_rows(&rows)
    }
}

/// Angular Hessian of `E` at an atomic measure on the circle:
/// off-diagonal `-(1/beta) m_i m_j K''(theta_i - theta_j)`, diagonal
/// `(1/beta) m_i sum_{k != i} m_k K''(theta_i - theta_k) + 1/2 m_i (v o x)''(theta_i)`.
pub fn hessian_d2(ens: &Ensemble, beta: f64, params: Option<&PerceptronParams>) -> Result<HessianMatrix> {
    check_beta(beta)?;
    if ens.dim() != 2 {
        return Err(Error::Inapplicable(format!(
            "the angular Hessian is defined for d = 2, got d = {}",
            ens.dim()
        )));
    }
    if let Some(p) = params {
        if p.dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: p.dim() });
        }
    }
    let n = ens.len();
    let pos = ens.positions();
    let m = ens.masses();
    let theta = ens.angles();
    let mut h = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = geodesic_distance(&pos[i], &pos[j]);
            if dist <= COINCIDENT_TOL {
                return Err(Error::CoincidentAtoms { first: i, second: j, distance: dist });
            }
            let (_, _, k2) = kernel_derivs(beta, theta[i] - theta[j])?;
            let off = -m[i] * m[j] * k2 / beta;
            h[(i, j)] = off;
            h[(j, i)] = off;
            h[(i, i)] -= off;
            h[(j, j)] -= off;
        }
    }
    let mut kink_atoms = Vec::new();
    if let Some(p) = params {
        for i in 0..n {
            if p.near_kink(pos[i].coords(), KINK_TOL) {
                kink_atoms.push(i);
            }
            h[(i, i)] += 0.5 * m[i] * p.angular_derivatives(theta[i]).1;
        }
    }
    Ok(HessianMatrix { entries: h, kink_atoms })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SopdResult {
    pub pass: bool,
    pub min_eigenvalue: f64,
    pub spectral_radius: f64,
}

/// Second-order test: smallest eigenvalue `>= -tol (1 + spectral radius)`.
pub fn sopd_check(h: &HessianMatrix, tol: f64) -> SopdResult {
    if h.dim() == 0 {
        return SopdResult { pass: true, min_eigenvalue: 0.0, spectral_radius: 0.0 };
    }
    let eig = SymmetricEigen::new(h.entries.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let radius = eig.eigenvalues.iter().map(|e| e.abs()).fold(0.0, f64::max);
    SopdResult {
        pass: min >= -tol * (1.0 + radius),
        min_eigenvalue: min,
        spectral_radius: radius,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perceptron::{ActivationKind, PerceptronParams};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use std::f64::consts::{E, FRAC_PI_2, PI};

    #[test]
    fn kernel_derivative_examples() {
        let (k, k1, k2) = kernel_derivs(1.0, 0.0).unwrap();
        assert_abs_diff_eq!(k, E, epsilon = 1e-15);
        assert_eq!(k1, 0.0);
        assert_abs_diff_eq!(k2, -E, epsilon = 1e-15);

        let (k, k1, k2) = kernel_derivs(1.0, PI).unwrap();
        assert_abs_diff_eq!(k, 1.0 / E, epsilon = 1e-15);
        assert_abs_diff_eq!(k1, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k2, 0.36788, epsilon = 1e-5);

        let (k, k1, k2) = kernel_derivs(2.0, FRAC_PI_2).unwrap();
        assert_abs_diff_eq!(k, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k1, -2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k2, 4.0, epsilon = 1e-14);

        assert!(matches!(kernel_derivs(800.0, 0.0), Err(Error::Overflow { .. })));
        assert!(kernel_derivs(0.0, 0.0).is_err());
    }

    #[test]
    fn theta_c_examples() {
        assert_abs_diff_eq!(theta_c(1.0).unwrap(), 0.904_556_894_302_381, epsilon = 1e-14);
        let t = theta_c(10.0).unwrap();
        assert_abs_diff_eq!(t, 0.313_535_064_345_701, epsilon = 1e-14);
        assert_abs_diff_eq!(10f64.sqrt() * t, 0.991_484_929_659_867, epsilon = 1e-13);
        assert_abs_diff_eq!(theta_c(1e-9).unwrap(), FRAC_PI_2, epsilon = 1e-8);
    }

    #[test]
    fn theta_c_is_a_root_of_the_curvature_by_bisection() {
        for beta in [0.1, 1.0, 10.0, 100.0] {
            // Independent bisection on K'' over (0, pi/2].
            let f = |t: f64| kernel_derivs(beta, t).unwrap().2;
            let (mut lo, mut hi) = (0.0f64, FRAC_PI_2);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let tc = theta_c(beta).unwrap();
            assert_abs_diff_eq!(tc, 0.5 * (lo + hi), epsilon = 1e-12);
            assert!(f(tc).abs() <= 1e-10 * beta * beta.exp());
        }
    }

    #[test]
    fn first_variation_weight_examples() {
        let e1 = UnitVector::basis(2, 0);
        let e2 = UnitVector::basis(2, 1);
        let dirac = Ensemble::uniform(vec![e1.clone()]).unwrap();
        assert_abs_diff_eq!(first_variation_weight(&dirac, &e1, 1.0).unwrap(), E, epsilon = 1e-15);
        let two = Ensemble::uniform(vec![e1.clone(), e2.clone()]).unwrap();
        assert_abs_diff_eq!(
            first_variation_weight(&two, &e1, 1.0).unwrap(),
            (E + 1.0) / 2.0,
            epsilon = 1e-15
        );
        let four = Ensemble::uniform(vec![e1.clone(), e1.neg(), e2.clone(), e2.neg()]).unwrap();
        assert_abs_diff_eq!(first_variation_weight(&four, &e1, 1.0).unwrap(), 1.27154, epsilon = 1e-5);
    }

    #[test]
    fn attention_field_examples() {
        let e1 = UnitVector::basis(2, 0);
        let e2 = UnitVector::basis(2, 1);
        let dirac = Ensemble::uniform(vec![e1.clone()]).unwrap();
        for mode in [Normalization::Unnormalized, Normalization::Softmax] {
            assert_eq!(attention_field(&dirac, &e1, 1.0, mode).unwrap().vec, vec![0.0, 0.0]);
        }
        let two = Ensemble::uniform(vec![e1.clone(), e2]).unwrap();
        let u = attention_field(&two, &e1, 1.0, Normalization::Unnormalized).unwrap();
        assert_abs_diff_eq!(u.vec[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u.vec[1], 0.5, epsilon = 1e-15);
        let s = attention_field(&two, &e1, 1.0, Normalization::Softmax).unwrap();
        assert_abs_diff_eq!(s.vec[1], 0.26895, epsilon = 1e-5);
        let p = practical_softmax_field(&two, &e1, 2.0).unwrap();
        let s2 = attention_field(&two, &e1, 2.0, Normalization::Softmax).unwrap();
        assert_relative_eq!(p.vec[1] * 2.0, s2.vec[1], max_relative = 1e-15);
    }

    #[test]
    fn normalized_times_weight_is_unnormalized() {
        let ens = Ensemble::uniform_angles(&[0.1, 0.9, 2.0, 4.0]).unwrap();
        let x = UnitVector::from_angle(1.3);
        for beta in [0.5, 3.0, 40.0] {
            let u = attention_field(&ens, &x, beta, Normalization::Unnormalized).unwrap();
            let s = attention_field(&ens, &x, beta, Normalization::Softmax).unwrap();
            let w = first_variation_weight(&ens, &x, beta).unwrap();
            for (a, b) in u.vec.iter().zip(&s.vec) {
                assert_relative_eq!(*a, b * w, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn flat_fields_agree_with_pointwise_fields() {
        let ens = Ensemble::uniform_angles(&[0.1, 0.9, 2.0, 4.0, 5.5]).unwrap();
        let (mut f, mut w) = (vec![0.0; 10], vec![0.0; 5]);
        attention_fields_flat(&ens.flat_coords(), ens.masses(), 2, 2.5, &mut f, &mut w).unwrap();
        for (i, x) in ens.positions().iter().enumerate() {
            let u = attention_field(&ens, x, 2.5, Normalization::Unnormalized).unwrap();
            assert_abs_diff_eq!(u.vec[0], f[2 * i], epsilon = 1e-13);
            assert_abs_diff_eq!(u.vec[1], f[2 * i + 1], epsilon = 1e-13);
            assert_relative_eq!(first_variation_weight(&ens, x, 2.5).unwrap(), w[i], max_relative = 1e-14);
        }
    }

    #[test]
    fn total_energy_examples() {
        let e1 = UnitVector::basis(2, 0);
        let dirac = Ensemble::uniform(vec![e1.clone()]).unwrap();
        assert_abs_diff_eq!(total_energy(&dirac, 1.0, None).unwrap(), E / 2.0, epsilon = 1e-15);
        let anti = Ensemble::uniform(vec![e1.clone(), e1.neg()]).unwrap();
        assert_abs_diff_eq!(total_energy(&anti, 1.0, None).unwrap(), 1f64.cosh() / 2.0, epsilon = 1e-15);
        let p = PerceptronParams::from_weights(ActivationKind::Relu, &[(vec![1.0, 0.0], 2.0)]).unwrap();
        assert_abs_diff_eq!(total_energy(&dirac, 1.0, Some(&p)).unwrap(), E / 2.0 + 1.0, epsilon = 1e-15);
    }

    #[test]
    fn hessian_two_antipodal_atoms() {
        let ens = Ensemble::from_angles(&[0.0, PI], vec![0.5, 0.5]).unwrap();
        let h = hessian_d2(&ens, 1.0, None).unwrap();
        let a = (-1f64).exp() / 4.0;
        assert_abs_diff_eq!(h.entries[(0, 0)], a, epsilon = 1e-15);
        assert_abs_diff_eq!(h.entries[(0, 1)], -a, epsilon = 1e-15);
        let r = sopd_check(&h, 0.0);
        assert_abs_diff_eq!(r.min_eigenvalue, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.spectral_radius, 2.0 * a, epsilon = 1e-15);

        let zero = PerceptronParams::from_weights(
            ActivationKind::Gelu,
            &[(vec![1.0, 0.3], 0.0), (vec![-0.2, 1.0], 0.0)],
        )
        .unwrap();
        assert_eq!(hessian_d2(&ens, 1.0, Some(&zero)).unwrap().entries, h.entries);
    }

    #[test]
    fn hessian_single_atom_is_potential_curvature() {
        let p = PerceptronParams::sample_standard_normal(ActivationKind::Gelu, 2, 2, 3);
        let ens = Ensemble::from_angles(&[0.7], vec![1.0]).unwrap();
        let h = hessian_d2(&ens, 3.0, Some(&p)).unwrap();
        assert_eq!(h.dim(), 1);
        assert_abs_diff_eq!(h.entries[(0, 0)], 0.5 * p.angular_derivatives(0.7).1, epsilon = 1e-15);
    }

    #[test]
    fn hessian_rejects_coincident_atoms_and_flags_kinks() {
        let ens = Ensemble::from_angles(&[1.0, 1.0 + 1e-12], vec![0.5, 0.5]).unwrap();
        assert!(matches!(hessian_d2(&ens, 1.0, None), Err(Error::CoincidentAtoms { .. })));
        let ens = Ensemble::from_angles(&[FRAC_PI_2, 3.0], vec![0.5, 0.5]).unwrap();
        let p = PerceptronParams::from_weights(ActivationKind::Relu, &[(vec![1.0, 0.0], 1.0)]).unwrap();
        assert_eq!(hessian_d2(&ens, 1.0, Some(&p)).unwrap().kink_atoms, vec![0]);
        let ens3 = Ensemble::uniform(vec![UnitVector::basis(3, 0)]).unwrap();
        assert!(matches!(hessian_d2(&ens3, 1.0, None), Err(Error::Inapplicable(_))));
    }

    #[test]
    fn sopd_examples() {
        let r = sopd_check(&HessianMatrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, 1.0]]).unwrap(), 1e-6);
        assert!(!r.pass);
        assert_abs_diff_eq!(r.min_eigenvalue, -1.0, epsilon = 1e-15);
        let r = sopd_check(&HessianMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap(), 0.0);
        assert!(r.pass);
        assert_eq!(r.min_eigenvalue, 0.0);
    }

    #[test]
    fn hessian_csv_round_trip() {
        let ens = Ensemble::from_angles(&[0.0, 1.0, 2.5], vec![0.2, 0.3, 0.5]).unwrap();
        let h = hessian_d2(&ens, 2.0, None).unwrap();
        let text = h.to_csv();
        assert!(text.starts_with("n=3\n"));
        assert_eq!(HessianMatrix::from_csv(&text).unwrap().entries, h.entries);
        assert!(h.is_symmetric(1e-10));
    }

    #[test]
    fn curvature_bound_examples() {
        let b = curvature_bounds(10.0, 0.5).unwrap();
        assert_relative_eq!(
            b.concave_bound,
            -(-0.125f64).exp() * 0.375 * 10.0 * 10f64.exp(),
            max_relative = 1e-15
        );
        assert_relative_eq!(b.max_tail_bound, 20.0 * 8.5f64.exp(), max_relative = 1e-15);
        let near_one = curvature_bounds(10.0, 1.0 - 1e-12).unwrap();
        assert!(near_one.concave_bound.abs() < 1e-6);
        assert!(curvature_bounds(10.0, 1.0).is_err());
    }

    #[test]
    fn concave_bound_dominates_kernel_curvature_for_large_beta() {
        for beta in [50.0, 100.0, 300.0] {
            let bound = curvature_bounds(beta, 0.5).unwrap().concave_bound;
            let reach = 0.5 * theta_c(beta).unwrap();
            for k in 0..=1000 {
                let t = -reach + 2.0 * reach * k as f64 / 1000.0;
                assert!(kernel_derivs(beta, t).unwrap().2 <= bound, "beta {beta} theta {t}");
            }
        }
    }

    #[test]
    fn tail_bound_dominates_kernel_curvature_beyond_theta_c() {
        for beta in [10.0, 50.0, 100.0] {
            let bound = curvature_bounds(beta, 0.5).unwrap().max_tail_bound;
            let tc = theta_c(beta).unwrap();
            for k in 0..=2000 {
                let t = tc + (PI - tc) * k as f64 / 2000.0;
                assert!(kernel_derivs(beta, t).unwrap().2 <= bound);
            }
        }
    }
}
