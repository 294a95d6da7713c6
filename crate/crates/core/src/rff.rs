//! Random Fourier Features approximating the RBF kernel.
//!
//! A map samples `D` frequency rows `ω_i` from a zero-mean normal and `D`
//! phases `β_i` from `U[0, 2π)`, then sends an embedding `x` to
//! `z(x) = sqrt(2/D) · cos(Ω x + β)`. Inner products `z(x)ᵀz(y)` are unbiased
//! estimates of `exp(-‖x - y‖² / (2σ²))` under the bandwidth convention.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const OMEGA_STREAM: u64 = 0;
const PHASE_STREAM: u64 = 1;

/// How `sigma` maps to the frequency standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FrequencyConvention {
    /// `ω ~ N(0, σ⁻² I)`: `sigma` is the kernel bandwidth.
    #[default]
    Bandwidth,
    /// `ω ~ N(0, σ² I)`: `sigma` is the frequency spread.
    FrequencyScale,
}

impl FrequencyConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            FrequencyConvention::Bandwidth => "bandwidth",
            FrequencyConvention::FrequencyScale => "frequency_scale",
        }
    }
}

impl std::str::FromStr for FrequencyConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bandwidth" => Ok(FrequencyConvention::Bandwidth),
            "frequency_scale" => Ok(FrequencyConvention::FrequencyScale),
            other => Err(Error::invalid(format!("unknown frequency convention `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RffParams {
    pub feature_dim: usize,
    pub sigma: f64,
    pub convention: FrequencyConvention,
    pub seed: u64,
}

impl RffParams {
    pub fn new(feature_dim: usize, sigma: f64) -> Self {
        RffParams {
            feature_dim,
            sigma,
            convention: FrequencyConvention::Bandwidth,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_convention(mut self, convention: FrequencyConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be at least 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Per-coordinate standard deviation of the sampled frequencies.
    pub fn frequency_std(&self) -> f64 {
        match self.convention {
            FrequencyConvention::Bandwidth => 1.0 / self.sigma,
            FrequencyConvention::FrequencyScale => self.sigma,
        }
    }
}

/// Random feature vector `z(x)` of length `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelFeatures(Array1<f64>);

impl KernelFeatures {
    pub fn new(z: Array1<f64>) -> Self {
        KernelFeatures(z)
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &KernelFeatures) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }
}

/// Frozen random projection. Immutable once sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct RffMap {
    omega: Array2<f64>,
    phase: Array1<f64>,
    params: RffParams,
    input_dim: usize,
}

impl RffMap {
    /// Samples `Ω` (row-major, stream 0) and `β` (stream 1) from `params.seed`.
    pub fn sample(params: RffParams, input_dim: usize) -> Result<Self> {
        params.validate()?;
        if input_dim == 0 {
            return Err(Error::invalid("input_dim must be at least 1"));
        }
        let d_rff = params.feature_dim;
        let normal = Normal::new(0.0, params.frequency_std())
            .map_err(|e| Error::invalid(format!("frequency distribution: {e}")))?;
        let mut omega_rng = rng::stream(params.seed, OMEGA_STREAM);
        let omega = Array2::from_shape_simple_fn((d_rff, input_dim), || {
            normal.sample(&mut omega_rng)
        });
        let uniform = Uniform::new(0.0, 2.0 * PI);
        let mut phase_rng = rng::stream(params.seed, PHASE_STREAM);
        let phase = Array1::from_shape_simple_fn(d_rff, || uniform.sample(&mut phase_rng));
        Ok(RffMap {
            omega,
            phase,
            params,
            input_dim,
        })
    }

    pub fn params(&self) -> &RffParams {
        &self.params
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.params.feature_dim
    }

    /// Frequency matrix, `D × d`.
    pub fn omega(&self) -> ArrayView2<'_, f64> {
        self.omega.view()
    }

    pub fn phase(&self) -> ArrayView1<'_, f64> {
        self.phase.view()
    }

    fn scale(&self) -> f64 {
        (2.0 / self.params.feature_dim as f64).sqrt()
    }

    pub fn map(&self, x: ArrayView1<'_, f64>) -> Result<KernelFeatures> {
        if x.len() != self.input_dim {
            return Err(Error::shape(
                format!("input of length {}", self.input_dim),
                format!("length {}", x.len()),
            ));
        }
        let scale = self.scale();
        let mut z = self.omega.dot(&x);
        z.zip_mut_with(&self.phase, |v, &b| *v = scale * (*v + b).cos());
        Ok(KernelFeatures(z))
    }

    /// Maps each row of `x` (`n × d`) to a row of the result (`n × D`).
    pub fn map_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim {
            return Err(Error::shape(
                format!("{} columns", self.input_dim),
                format!("{} columns", x.ncols()),
            ));
        }
        let scale = self.scale();
        let mut z = x.dot(&self.omega.t());
        for mut row in z.axis_iter_mut(Axis(0)) {
            row.zip_mut_with(&self.phase, |v, &b| *v = scale * (*v + b).cos());
        }
        Ok(z)
    }
}

/// Exact RBF kernel `exp(-‖x - y‖² / (2σ²))`.
pub fn kernel_oracle(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>, sigma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(
            format!("length {}", x.len()),
            format!("length {}", y.len()),
        ));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let sq: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-sq / (2.0 * sigma * sigma)).exp())
}
