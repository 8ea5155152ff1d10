//! Multilayer perceptrons with analytic forward and backward passes.
//!
//! The backward pass starts from a feature-space gradient `G = ∂ℓ/∂Z`
//! supplied by the caller rather than from a loss, so a gradient adjuster can
//! substitute its own `G` before the chain rule is applied to the weights.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GalError, Result};
use crate::linalg::{Matrix, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    Relu,
}

/// Layer widths of an MLP.
///
/// Written in the `(#1-#2-...-#N)` notation, which lists only the hidden
/// widths; the input and output sizes come from the data (or, for an
/// adjuster, from the feature dimension).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub hidden_activation: Activation,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, output_dim: usize) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_widths,
            output_dim,
            hidden_activation: Activation::Relu,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(GalError::InvalidArchitecture(format!(
                "all dimensions must be at least 1: {} -> {:?} -> {}",
                self.input_dim, self.hidden_widths, self.output_dim
            )));
        }
        Ok(())
    }

    /// Parses `(100-50)` style notation, attaching the given input and output sizes.
    pub fn parse(notation: &str, input_dim: usize, output_dim: usize) -> Result<Self> {
        let hidden = HiddenWidths::from_str(notation)?;
        Self::new(input_dim, hidden.0, output_dim)
    }

    pub fn notation(&self) -> String {
        HiddenWidths(self.hidden_widths.clone()).to_string()
    }

    /// `[input, hidden..., output]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_widths);
        dims.push(self.output_dim);
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_widths.len() + 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Hidden widths in `(#1-#2-...-#N)` form; `()` is the empty list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HiddenWidths(pub Vec<usize>);

impl fmt::Display for HiddenWidths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|w| w.to_string()).collect();
        write!(f, "({})", parts.join("-"))
    }
}

impl FromStr for HiddenWidths {
    type Err = GalError;

    fn from_str(s: &str) -> Result<Self> {
        let inner = s
            .trim()
            .strip_prefix('(')
            .and_then(|t| t.strip_suffix(')'))
            .ok_or_else(|| {
                GalError::InvalidArchitecture(format!("expected (#1-#2-...), got {s:?}"))
            })?
            .trim();
        if inner.is_empty() {
            return Ok(Self(Vec::new()));
        }
        let widths = inner
            .split('-')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| GalError::InvalidArchitecture(format!("bad width {p:?} in {s:?}")))
                    .and_then(|w| {
                        if w == 0 {
                            Err(GalError::InvalidArchitecture(format!(
                                "zero width in {s:?}"
                            )))
                        } else {
                            Ok(w)
                        }
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self(widths))
    }
}

/// An MLP whose layer `k` maps `dims[k] -> dims[k+1]` with weight matrix of
/// shape `dims[k] × dims[k+1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub architecture: MlpArchitecture,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Activations recorded by [`MlpModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `layer_inputs[0]` is the batch itself.
    layer_inputs: Vec<Matrix>,
    /// Pre-activation output of each hidden layer.
    hidden_pre: Vec<Matrix>,
    layer_shapes: Vec<(usize, usize)>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.layer_inputs[0].rows()
    }
}

/// Per-layer parameter gradients, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGradients {
    /// Flattened in the same order as [`MlpModel::flat_params`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            flat.extend_from_slice(w.as_slice());
            flat.extend_from_slice(b);
        }
        flat
    }
}

impl MlpModel {
    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
    pub fn init(architecture: &MlpArchitecture, rng: &mut SeededRng) -> Result<Self> {
        architecture.validate()?;
        let dims = architecture.layer_dims();
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.uniform(-limit, limit))
                .collect();
            weights.push(Matrix::new(fan_in, fan_out, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            architecture: architecture.clone(),
            weights,
            biases,
        })
    }

    pub fn zeros(architecture: &MlpArchitecture) -> Result<Self> {
        architecture.validate()?;
        let dims = architecture.layer_dims();
        Ok(Self {
            architecture: architecture.clone(),
            weights: dims.windows(2).map(|w| Matrix::zeros(w[0], w[1])).collect(),
            biases: dims.windows(2).map(|w| vec![0.0; w[1]]).collect(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.as_slice().len() + b.len())
            .sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            flat.extend_from_slice(w.as_slice());
            flat.extend_from_slice(b);
        }
        flat
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if flat.len() != expected {
            return Err(GalError::LengthMismatch {
                expected,
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
            let m = b.len();
            b.copy_from_slice(&flat[offset..offset + m]);
            offset += m;
        }
        Ok(())
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.0)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if x.cols() != self.architecture.input_dim {
            return Err(GalError::ShapeMismatch(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.architecture.input_dim
            )));
        }
        let last = self.weights.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.weights.len());
        let mut hidden_pre = Vec::with_capacity(last);
        let mut current = x.clone();
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut pre = current.matmul(w)?;
            pre.add_row_vector(b)?;
            layer_inputs.push(current);
            if k == last {
                current = pre;
            } else {
                current = pre.map(relu);
                hidden_pre.push(pre);
            }
        }
        let cache = ForwardCache {
            layer_inputs,
            hidden_pre,
            layer_shapes: self.weights.iter().map(Matrix::shape).collect(),
        };
        Ok((current, cache))
    }

    /// Parameter gradients given the gradient `g` of the loss with respect to
    /// the model output. Linear in `g`.
    pub fn backprop(&self, cache: &ForwardCache, g: &Matrix) -> Result<MlpGradients> {
        let shapes: Vec<_> = self.weights.iter().map(Matrix::shape).collect();
        if shapes != cache.layer_shapes {
            return Err(GalError::StaleCache(format!(
                "cache layers {:?}, model layers {:?}",
                cache.layer_shapes, shapes
            )));
        }
        if g.rows() != cache.batch_size() || g.cols() != self.architecture.output_dim {
            return Err(GalError::StaleCache(format!(
                "feature gradient is {}x{}, forward pass produced {}x{}",
                g.rows(),
                g.cols(),
                cache.batch_size(),
                self.architecture.output_dim
            )));
        }
        let n_layers = self.weights.len();
        let mut grad_w = vec![Matrix::zeros(0, 0); n_layers];
        let mut grad_b = vec![Vec::new(); n_layers];
        let mut delta = g.clone();
        for k in (0..n_layers).rev() {
            grad_w[k] = cache.layer_inputs[k].t_matmul(&delta)?;
            grad_b[k] = delta.column_sums();
            if k > 0 {
                let mut upstream = delta.matmul_t(&self.weights[k])?;
                let pre = &cache.hidden_pre[k - 1];
                for (u, &p) in upstream.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    if p <= 0.0 {
                        *u = 0.0;
                    }
                }
                delta = upstream;
            }
        }
        Ok(MlpGradients {
            weights: grad_w,
            biases: grad_b,
        })
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}
