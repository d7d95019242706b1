//! A single Kolmogorov-Arnold layer: a `d_out × d_in` grid of learnable
//! univariate functions, each a weighted sum of basis functions,
//!
//! ```text
//! out[i, q] = Σ_p Σ_r γ[q, p, r] · P_r(squash(x[i, p]))
//! ```
//!
//! Inputs are squashed onto the basis domain with `tanh` and an affine map.
//! The basis values for an input element are computed once and shared by all
//! `d_out` outputs, so the layer is a basis expansion followed by one matmul.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::poly::Basis;
use crate::tensor::{Tape, Tensor, Var};

/// Maps the real line onto the open interval `(lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainMap {
    lo: f64,
    hi: f64,
}

impl DomainMap {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("invalid squash interval ({lo}, {hi})")));
        }
        Ok(DomainMap { lo, hi })
    }

    pub fn for_basis(basis: &Basis) -> Self {
        let (lo, hi) = basis.domain();
        DomainMap { lo, hi }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn squash(&self, x: f64) -> f64 {
        self.lo + (self.hi - self.lo) * (x.tanh() + 1.0) * 0.5
    }

    pub fn squash_deriv(&self, x: f64) -> f64 {
        let t = x.tanh();
        (self.hi - self.lo) * 0.5 * (1.0 - t * t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerMode {
    /// Learnable polynomial edge functions.
    Kan,
    /// Bias-free fully connected layer, used for the MLP comparison.
    Linear,
}

impl fmt::Display for LayerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerMode::Kan => "kan",
            LayerMode::Linear => "linear",
        })
    }
}

impl FromStr for LayerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kan" => Ok(LayerMode::Kan),
            "linear" | "mlp" => Ok(LayerMode::Linear),
            other => Err(Error::Config(format!(
                "unknown layer mode `{other}` (expected kan or linear)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KanLayer {
    d_in: usize,
    d_out: usize,
    mode: LayerMode,
    basis: Basis,
    squash: DomainMap,
    /// `[d_out, d_in, width]` coefficients, or `[d_out, d_in]` in linear mode.
    weights: Tensor,
}

impl KanLayer {
    /// Layer with all-zero weights.
    pub fn zeros(d_in: usize, d_out: usize, basis: Basis, mode: LayerMode) -> Self {
        let shape = match mode {
            LayerMode::Kan => vec![d_out, d_in, basis.width()],
            LayerMode::Linear => vec![d_out, d_in],
        };
        KanLayer {
            d_in,
            d_out,
            mode,
            squash: DomainMap::for_basis(&basis),
            basis,
            weights: Tensor::zeros(&shape),
        }
    }

    /// Random initialization: coefficients ~ N(0, scale / d_in) in KAN mode,
    /// weights ~ U(-k, k) with k = sqrt(1 / d_in) in linear mode.
    pub fn init<R: Rng + ?Sized>(
        d_in: usize,
        d_out: usize,
        basis: Basis,
        mode: LayerMode,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut layer = KanLayer::zeros(d_in, d_out, basis, mode);
        match mode {
            LayerMode::Kan => {
                let normal = Normal::new(0.0, (scale / d_in as f64).sqrt()).expect("finite std");
                for w in layer.weights.data_mut() {
                    *w = normal.sample(rng);
                }
            }
            LayerMode::Linear => {
                let k = (1.0 / d_in as f64).sqrt();
                let uniform = Uniform::new(-k, k).expect("non-empty range");
                for w in layer.weights.data_mut() {
                    *w = uniform.sample(rng);
                }
            }
        }
        layer
    }

    pub fn with_weights(mut self, weights: Tensor) -> Result<Self> {
        if weights.shape() != self.weights.shape() {
            return Err(Error::Dimension(format!(
                "layer weights must have shape {:?}, got {:?}",
                self.weights.shape(),
                weights.shape()
            )));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn mode(&self) -> LayerMode {
        self.mode
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn squash_map(&self) -> DomainMap {
        self.squash
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    /// Records the layer on `tape`, reading weights from `w` (this layer's
    /// weights registered as a leaf).
    pub fn forward_on(&self, tape: &mut Tape, x: Var, w: Var) -> Result<Var> {
        match tape.shape(x) {
            &[_, cols] if cols == self.d_in => {}
            other => {
                return Err(Error::Dimension(format!(
                    "layer expects [rows, {}] input, got {other:?}",
                    self.d_in
                )))
            }
        }
        match self.mode {
            LayerMode::Linear => tape.matmul_nt(x, w),
            LayerMode::Kan => {
                let width = self.basis.width();
                let basis = &self.basis;
                let squash = self.squash;
                let expanded = tape.expand(x, width, |x, vals, ders| {
                    basis.eval_with_deriv_into(squash.squash(x), vals, ders);
                    let s = squash.squash_deriv(x);
                    ders.iter_mut().for_each(|d| *d *= s);
                })?;
                let flat = tape.reshape(w, &[self.d_out, self.d_in * width])?;
                tape.matmul_nt(expanded, flat)
            }
        }
    }

    /// Tape-free evaluation in whatever mode the layer is in.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(self.weights.clone());
        let out = self.forward_on(&mut tape, xv, wv)?;
        Ok(tape.value(out).clone())
    }

    pub fn kan_forward(&self, x: &Tensor) -> Result<Tensor> {
        if self.mode != LayerMode::Kan {
            return Err(Error::Contract("kan_forward on a linear-mode layer".into()));
        }
        self.forward(x)
    }

    /// `x · Wᵀ`, no bias, no activation.
    pub fn linear_forward(&self, x: &Tensor) -> Result<Tensor> {
        if self.mode != LayerMode::Linear {
            return Err(Error::Contract("linear_forward on a KAN-mode layer".into()));
        }
        self.forward(x)
    }
}
