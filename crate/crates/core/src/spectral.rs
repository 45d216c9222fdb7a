//! Circle Fourier analysis of the attention kernel.
//!
//! Convention: `g_n = (1/2pi) int g(theta) e^{-i n theta} dtheta`. With it the
//! kernel transform of a measure reads `f_n = I_|n|(beta) m_n`, where
//! `f(x) = int e^{beta x.y} dmu(y)` and `m_n = sum_i m_i e^{-i n theta_i}`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::attention::{check_beta, guarded_exp};
use crate::error::{Error, Result};
use crate::sphere::Ensemble;

pub const MAX_ORDER: usize = 200;
pub const MAX_BETA: f64 = 700.0;
/// Trapezoid grid for the kernel transform.
pub const QUADRATURE_POINTS: usize = 4096;
pub const MAX_CONV_ORDER: usize = 64;
/// Below this `I_n` the reconstruction is flagged as amplified.
pub const AMPLIFICATION_FLOOR: f64 = 1e-280;
const SERIES_CUTOFF: f64 = 20.0;

fn check_bessel_args(n: usize, beta: f64) -> Result<()> {
    if n > MAX_ORDER {
        return Err(Error::Range(format!("Bessel order {n} exceeds {MAX_ORDER}")));
    }
    if !(beta.is_finite() && (0.0..=MAX_BETA).contains(&beta)) {
        return Err(Error::Range(format!("Bessel argument {beta} outside [0, {MAX_BETA}]")));
    }
    Ok(())
}

/// Modified Bessel function of the first kind `I_n(beta)`.
pub fn bessel_i(n: usize, beta: f64) -> Result<f64> {
    check_bessel_args(n, beta)?;
    if beta <= SERIES_CUTOFF {
        Ok(bessel_i_series(n, beta))
    } else {
        Ok(bessel_i_miller(n, beta)[n])
    }
}

/// `I_0(beta), ..., I_{n_max}(beta)` in one pass.
pub fn bessel_i_all(n_max: usize, beta: f64) -> Result<Vec<f64>> {
    check_bessel_args(n_max, beta)?;
    if beta <= SERIES_CUTOFF {
        Ok((0..=n_max).map(|n| bessel_i_series(n, beta)).collect())
    } else {
        Ok(bessel_i_miller(n_max, beta))
    }
}

/// Power series `sum_m (beta/2)^{2m+n} / (m! (m+n)!)`. All terms positive, so
/// this is accurate wherever the leading term is representable.
pub(crate) fn bessel_i_series(n: usize, beta: f64) -> f64 {
    if beta == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let half = 0.5 * beta;
    let log_lead = n as f64 * half.ln() - libm::lgamma(n as f64 + 1.0);
    let mut term = log_lead.exp();
    if term == 0.0 {
        return 0.0;
    }
    let q = half * half;
    let mut sum = term;
    let mut m = 1.0;
    loop {
        term *= q / (m * (m + n as f64));
        sum += term;
        if term <= 1e-17 * sum {
            break;
        }
        m += 1.0;
    }
    sum
}

/// Downward recurrence `I_{k-1} = I_{k+1} + (2k/beta) I_k` from a zero tail,
/// normalized with `e^beta = I_0 + 2 sum_k I_k`. Values are kept as
/// (mantissa, rescale count) so high orders survive the repeated rescaling.
pub(crate) fn bessel_i_miller(n_max: usize, beta: f64) -> Vec<f64> {
    const BIG: f64 = 1e250;
    let extra = (100.0 * (beta + 1.0)).sqrt().ceil() as usize;
    let start = n_max.max(beta.ceil() as usize) + 2 * extra + 60;

    let mut stored = vec![(0.0_f64, 0_i32); n_max + 1];
    let mut rescales = 0_i32;
    let mut next = 0.0_f64;
    let mut cur = 1e-30_f64;
    let mut sum = 0.0_f64;
    for k in (1..=start).rev() {
        if k <= n_max {
            stored[k] = (cur, rescales);
        }
        sum += 2.0 * cur;
        let prev = next + (2.0 * k as f64 / beta) * cur;
        next = cur;
        cur = prev;
        if cur > BIG {
            cur /= BIG;
            next /= BIG;
            sum /= BIG;
            rescales += 1;
        }
    }
    stored[0] = (cur, rescales);
    sum += cur;

    // I_k = stored_k * BIG^{-(R - r_k)} * e^beta / sum
    let log_norm = beta - sum.ln();
    let log_big = BIG.ln();
    stored
        .into_iter()
        .map(|(v, r)| {
            if v == 0.0 {
                0.0
            } else {
                (v.ln() - f64::from(rescales - r) * log_big + log_norm).exp()
            }
        })
        .collect()
}

/// Fourier coefficients for `n` in `-n_max..=n_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierSeries {
    pub n_max: usize,
    /// `coefficients[k]` holds index `k - n_max`.
    pub coefficients: Vec<Complex64>,
}

impl FourierSeries {
    pub fn zeros(n_max: usize) -> Self {
        Self { n_max, coefficients: vec![Complex64::new(0.0, 0.0); 2 * n_max + 1] }
    }

    pub fn get(&self, n: i64) -> Complex64 {
        assert!(n.unsigned_abs() as usize <= self.n_max, "index {n} out of range");
        self.coefficients[(n + self.n_max as i64) as usize]
    }

    fn set(&mut self, n: i64, value: Complex64) {
        let k = (n + self.n_max as i64) as usize;
        self.coefficients[k] = value;
    }

    pub fn indices(&self) -> impl Iterator<Item = i64> {
        let m = self.n_max as i64;
        -m..=m
    }

    /// Largest `|c_{-n} - conj(c_n)|`.
    pub fn conjugate_asymmetry(&self) -> f64 {
        (0..=self.n_max as i64)
            .map(|n| (self.get(-n) - self.get(n).conj()).norm())
            .fold(0.0, f64::max)
    }
}

fn require_circle(ens: &Ensemble) -> Result<()> {
    if ens.dim() != 2 {
        return Err(Error::Inapplicable(format!("circle Fourier analysis needs d = 2, got d = {}", ens.dim())));
    }
    Ok(())
}

/// `m_n = sum_i m_i e^{-i n theta_i}`.
pub fn moments(ens: &Ensemble, n_max: usize) -> Result<FourierSeries> {
    require_circle(ens)?;
    let mut out = FourierSeries::zeros(n_max);
    let angles = ens.angles();
    for n in out.indices().collect::<Vec<_>>() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (&th, &m) in angles.iter().zip(ens.masses()) {
            acc += m * Complex64::from_polar(1.0, -(n as f64) * th);
        }
        out.set(n, acc);
    }
    Ok(out)
}

/// Kernel transform coefficients with the Bessel residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convolution {
    pub coeffs: FourierSeries,
    /// `|f_n - I_|n|(beta) m_n|` by index.
    pub residuals: Vec<f64>,
    pub residual_max: f64,
}

/// Coefficients of `f(theta) = sum_i m_i e^{beta cos(theta - theta_i)}` by
/// trapezoid quadrature on the uniform grid.
pub fn convolution_coeffs(ens: &Ensemble, beta: f64, n_max: usize) -> Result<Convolution> {
    require_circle(ens)?;
    check_beta(beta)?;
    if n_max > MAX_CONV_ORDER {
        return Err(Error::Range(format!("n_max {n_max} exceeds {MAX_CONV_ORDER}")));
    }
    guarded_exp(beta)?;
    let m = QUADRATURE_POINTS;
    let step = std::f64::consts::TAU / m as f64;
    let roots: Vec<Complex64> = (0..m).map(|k| Complex64::from_polar(1.0, -(k as f64) * step)).collect();
    let pos = ens.flat_coords();
    let values: Vec<f64> = (0..m)
        .map(|k| {
            let (s, c) = (k as f64 * step).sin_cos();
            pos.chunks_exact(2)
                .zip(ens.masses())
                .map(|(x, &w)| w * (beta * (c * x[0] + s * x[1])).exp())
                .sum()
        })
        .collect();

    let mut coeffs = FourierSeries::zeros(n_max);
    for n in coeffs.indices().collect::<Vec<_>>() {
        let shift = n.rem_euclid(m as i64) as usize;
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, &f) in values.iter().enumerate() {
            acc += f * roots[(k * shift) % m];
        }
        coeffs.set(n, acc / m as f64);
    }

    let mom = moments(ens, n_max)?;
    let bessel = bessel_i_all(n_max, beta)?;
    let residuals: Vec<f64> = coeffs
        .indices()
        .map(|n| (coeffs.get(n) - bessel[n.unsigned_abs() as usize] * mom.get(n)).norm())
        .collect();
    let residual_max = residuals.iter().copied().fold(0.0, f64::max);
    Ok(Convolution { coeffs, residuals, residual_max })
}

/// Density coefficients together with the indices whose divisor fell below
/// [`AMPLIFICATION_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub density: FourierSeries,
    pub amplified: Vec<i64>,
}

/// `rho_n = f_n / I_|n|(beta)`, the density against normalized arc length.
pub fn reconstruct_density(coeffs: &FourierSeries, beta: f64) -> Result<Reconstruction> {
    check_beta(beta)?;
    let bessel = bessel_i_all(coeffs.n_max, beta)?;
    let mut density = FourierSeries::zeros(coeffs.n_max);
    let mut amplified = Vec::new();
    for n in coeffs.indices().collect::<Vec<_>>() {
        let i = bessel[n.unsigned_abs() as usize];
        if i < AMPLIFICATION_FLOOR {
            amplified.push(n);
        }
        density.set(n, coeffs.get(n) / i);
    }
    Ok(Reconstruction { density, amplified })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub beta: f64,
    pub n_max: usize,
    pub moments: FourierSeries,
    pub conv_coeffs: FourierSeries,
    pub residual_max: f64,
}

pub fn spectral_report(ens: &Ensemble, beta: f64, n_max: usize) -> Result<SpectralReport> {
    let conv = convolution_coeffs(ens, beta, n_max)?;
    Ok(SpectralReport {
        beta,
        n_max,
        moments: moments(ens, n_max)?,
        conv_coeffs: conv.coeffs,
        residual_max: conv.residual_max,
    })
}
