//! Perceptron drift `u(x) = P_x sum_j w_j sigma(a_j.x + b_j) a_j` and its
//! scalar potential `v(x) = sum_j w_j phi(a_j.x + b_j)` with `phi' = 2 sigma`,
//! so that `grad v / 2 = u` on the sphere.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{dot, project_in_place, TangentVector, UnitVector};

/// `sup_s |GeLU'(s)|`, attained at `s = sqrt(2)`.
pub const GELU_LIPSCHITZ: f64 = 1.128_904_145_185_155;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    #[serde(alias = "ReLU", alias = "RELU")]
    Relu,
    #[serde(alias = "GeLU", alias = "GELU")]
    Gelu,
}

impl ActivationKind {
    /// Global Lipschitz constant of the activation.
    pub fn lipschitz(self) -> f64 {
        match self {
            ActivationKind::Relu => 1.0,
            ActivationKind::Gelu => GELU_LIPSCHITZ,
        }
    }
}

impl std::str::FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Self::Relu),
            "gelu" => Ok(Self::Gelu),
            other => Err(Error::InvalidInput(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neuron {
    pub a: Vec<f64>,
    pub omega: f64,
    #[serde(default)]
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptronParams {
    pub activation: ActivationKind,
    pub neurons: Vec<Neuron>,
}

fn std_normal_cdf(s: f64) -> f64 {
    0.5 * (1.0 + libm::erf(s * FRAC_1_SQRT_2))
}

fn std_normal_pdf(s: f64) -> f64 {
    (-0.5 * s * s).exp() / (2.0 * PI).sqrt()
}

/// `(sigma(s), sigma'(s))`. The ReLU derivative at 0 is taken to be 0.
pub fn activation(kind: ActivationKind, s: f64) -> (f64, f64) {
    match kind {
        ActivationKind::Relu => {
            if s > 0.0 {
                (s, 1.0)
            } else {
                (0.0, 0.0)
            }
        }
        ActivationKind::Gelu => {
            let cdf = std_normal_cdf(s);
            let pdf = std_normal_pdf(s);
            (s * cdf, cdf + s * pdf)
        }
    }
}

/// `sigma''(s)`; zero for ReLU away from the kink.
pub fn activation_second(kind: ActivationKind, s: f64) -> f64 {
    match kind {
        ActivationKind::Relu => 0.0,
        ActivationKind::Gelu => std_normal_pdf(s) * (2.0 - s * s),
    }
}

/// Primitive `phi` with `phi' = 2 sigma` and `phi(0) = 0`.
pub fn primitive(kind: ActivationKind, s: f64) -> f64 {
    match kind {
        ActivationKind::Relu => {
            let p = s.max(0.0);
            p * p
        }
        // d/ds [(s^2 - 1) Phi + s pdf] = 2 s Phi
        ActivationKind::Gelu => (s * s - 1.0) * std_normal_cdf(s) + s * std_normal_pdf(s) + 0.5,
    }
}

impl PerceptronParams {
    pub fn new(activation: ActivationKind, neurons: Vec<Neuron>) -> Result<Self> {
        let p = Self { activation, neurons };
        p.validate()?;
        Ok(p)
    }

    /// Neurons with zero bias.
    pub fn from_weights(activation: ActivationKind, weights: &[(Vec<f64>, f64)]) -> Result<Self> {
        Self::new(
            activation,
            weights
                .iter()
                .map(|(a, omega)| Neuron { a: a.clone(), omega: *omega, b: 0.0 })
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .neurons
            .first()
            .ok_or_else(|| Error::InvalidInput("perceptron needs at least one neuron".into()))?;
        let d = first.a.len();
        for n in &self.neurons {
            if n.a.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: n.a.len() });
            }
            if n.a.iter().chain([&n.omega, &n.b]).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("perceptron weights must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.neurons[0].a.len()
    }

    pub fn has_bias(&self) -> bool {
        self.neurons.iter().any(|n| n.b != 0.0)
    }

    /// Samples `a_j`, `omega_j` i.i.d. standard normal with zero biases.
    pub fn sample_standard_normal(
        activation: ActivationKind,
        d: usize,
        n_neurons: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let neurons = (0..n_neurons)
            .map(|_| {
                let a = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let omega = StandardNormal.sample(&mut rng);
                Neuron { a, omega, b: 0.0 }
            })
            .collect();
        Self { activation, neurons }
    }

    /// Copy with every `omega_j` multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.neurons.iter_mut().for_each(|n| n.omega *= c);
        out
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let p: Self = serde_json::from_reader(std::fs::File::open(path)?)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Unprojected drift `sum_j w_j sigma(a_j.x + b_j) a_j` accumulated into `out`.
    pub(crate) fn add_raw_drift(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        for n in &self.neurons {
            if n.omega == 0.0 {
                continue;
            }
            let (s, _) = activation(self.activation, dot(&n.a, x) + n.b);
            let c = scale * n.omega * s;
            if c != 0.0 {
                out.iter_mut().zip(&n.a).for_each(|(o, a)| *o += c * a);
            }
        }
    }

    pub(crate) fn potential_raw(&self, x: &[f64]) -> f64 {
        self.neurons
            .iter()
            .map(|n| n.omega * primitive(self.activation, dot(&n.a, x) + n.b))
            .sum()
    }

    /// First and second derivatives of `theta -> v(cos theta, sin theta)` (d = 2).
    pub fn angular_derivatives(&self, theta: f64) -> (f64, f64) {
        let (c, s) = (theta.cos(), theta.sin());
        let mut first = 0.0;
        let mut second = 0.0;
        for n in &self.neurons {
            let ax = n.a[0] * c + n.a[1] * s;
            let axp = -n.a[0] * s + n.a[1] * c;
            let (sig, dsig) = activation(self.activation, ax + n.b);
            first += 2.0 * n.omega * sig * axp;
            // x'' = -x
            second += 2.0 * n.omega * (dsig * axp * axp - sig * ax);
        }
        (first, second)
    }

    /// Whether some ReLU pre-activation at `x` lies within `tol` of the kink.
    pub fn near_kink(&self, x: &[f64], tol: f64) -> bool {
        self.activation == ActivationKind::Relu
            && self
                .neurons
                .iter()
                .any(|n| n.omega != 0.0 && (dot(&n.a, x) + n.b).abs() < tol)
    }
}

/// Tangent drift at `x`.
pub fn drift(params: &PerceptronParams, x: &UnitVector) -> TangentVector {
    let mut v = vec![0.0; x.dim()];
    params.add_raw_drift(x.coords(), 1.0, &mut v);
    project_in_place(x.coords(), &mut v);
    TangentVector { base: x.clone(), vec: v }
}

pub fn potential(params: &PerceptronParams, x: &UnitVector) -> f64 {
    params.potential_raw(x.coords())
}
