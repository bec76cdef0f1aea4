//! A small dense embedding network: one or two linear layers with ReLU
//! between. Deliberately tiny; it exists so the loss kernels have a real
//! parameterized function to differentiate through end to end.

use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    fn random(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Self {
        // He-uniform: U(-limit, limit) with limit = sqrt(6 / fan_in).
        let limit = (6.0 / inp as f64).sqrt();
        let weight = Array2::from_shape_fn((out, inp), |_| {
            (rng.random::<f64>() * 2.0 - 1.0) * limit
        });
        Self {
            weight,
            bias: Array1::zeros(out),
        }
    }

    pub fn from_parts(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.nrows() != bias.len() || weight.nrows() == 0 || weight.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "layer weight {:?} with bias of {}",
                weight.dim(),
                bias.len()
            )));
        }
        Ok(Self { weight, bias })
    }
}

#[derive(Debug, Clone)]
pub struct ToyEmbedder {
    layers: Vec<DenseLayer>,
}

/// Values the backward pass needs: the input fed to each layer and the
/// pre-activation of every hidden layer.
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    preacts: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct EmbedderGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl EmbedderGrads {
    /// Elementwise sum, for losses that reach the embedder through
    /// several paths.
    pub fn add(&mut self, other: &EmbedderGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }
}

impl ToyEmbedder {
    pub fn new(
        in_dim: usize,
        hidden: Option<usize>,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 || hidden == Some(0) {
            return Err(Error::InvalidParam("layer widths must be positive".into()));
        }
        let layers = match hidden {
            Some(h) => vec![
                DenseLayer::random(h, in_dim, rng),
                DenseLayer::random(out_dim, h, rng),
            ],
            None => vec![DenseLayer::random(out_dim, in_dim, rng)],
        };
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("embedder with no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].weight.ncols() != pair[0].weight.nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "layer of {} outputs feeds layer expecting {} inputs",
                    pair[0].weight.nrows(),
                    pair[1].weight.ncols()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Optimizer access; callers must preserve the layer shapes.
    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if x.ncols() != self.in_dim() {
            return Err(Error::DimMismatch {
                expected: self.in_dim(),
                got: x.ncols(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(cur.clone());
            let mut y = cur.dot(&layer.weight.t());
            y += &layer.bias;
            if i + 1 < self.layers.len() {
                preacts.push(y.clone());
                y.mapv_inplace(|v| v.max(0.0));
            }
            cur = y;
        }
        Ok((cur, ForwardCache { inputs, preacts }))
    }

    /// Forward without keeping the cache.
    pub fn embed(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x)?.0)
    }

    /// Backpropagate `grad_out` (d loss / d output) to parameter space.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Array2<f64>) -> EmbedderGrads {
        let n = self.layers.len();
        let mut weights = vec![Array2::zeros((0, 0)); n];
        let mut biases = vec![Array1::zeros(0); n];
        let mut g = grad_out.clone();
        for i in (0..n).rev() {
            weights[i] = g.t().dot(&cache.inputs[i]);
            biases[i] = g.sum_axis(Axis(0));
            if i > 0 {
                g = g.dot(&self.layers[i].weight);
                // ReLU gate from the hidden pre-activation.
                g.zip_mut_with(&cache.preacts[i - 1], |gv, &p| {
                    if p <= 0.0 {
                        *gv = 0.0;
                    }
                });
            }
        }
        EmbedderGrads { weights, biases }
    }
}
