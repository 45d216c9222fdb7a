//! Mean-field dynamics of token embeddings on the unit sphere under
//! self-attention and a perceptron drift, with diagnostics for the stationary
//! states: cluster detection and mass bounds, angular Hessians, circle Fourier
//! analysis of the attention kernel, and perceptron-potential maximizers.

pub mod attention;
pub mod cli;
pub mod clusters;
pub mod dynamics;
pub mod error;
pub mod extrema;
pub mod perceptron;
pub mod spectral;
pub mod sphere;

pub use error::{Error, Result};
