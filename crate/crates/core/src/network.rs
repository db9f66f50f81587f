//! Dense feed-forward regression network with tanh hidden layers.
//!
//! `F(x) = W_L σ(W_{L-1} σ(... σ_1(W_1 x + b_1) ...) + b_{L-1}) + b_L`, where
//! `σ = tanh` and `σ_1` is either tanh or the identity. Weight matrix `ℓ` has
//! shape `dims[ℓ] × dims[ℓ-1]`, so column `j` of `W_1` collects every weight
//! fed by input `j`.
//!
//! Batch gradients are computed over fixed row chunks and summed in chunk
//! order, which makes them bit-identical whether the chunks run in parallel
//! or not.

use std::collections::BTreeSet;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Scales;
use crate::par::{self, Execution};
use crate::rng;
use crate::{Error, Result};

/// Rows per gradient chunk. Changing it changes rounding, not results.
pub const CHUNK_ROWS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    fn apply_inplace(self, z: &mut Array2<f64>) {
        if self == Activation::Tanh {
            crate::fastmath::tanh_slice(z.as_slice_mut().expect("fresh product is contiguous"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// `[d, H_1, ..., H_{L-1}, 1]`
    pub layer_dims: Vec<usize>,
    /// Activation after the first weight layer (tanh, or identity for the
    /// linear-combination variant).
    pub first_activation: Activation,
}

impl Architecture {
    /// `d` inputs, `hidden_layers` layers of `width` tanh units, scalar output.
    pub fn new(inputs: usize, width: usize, hidden_layers: usize, first_activation: Activation) -> Self {
        let mut layer_dims = vec![inputs];
        layer_dims.extend(std::iter::repeat_n(width, hidden_layers));
        layer_dims.push(1);
        Architecture { layer_dims, first_activation }
    }

    /// Number of weight matrices `L`.
    pub fn depth(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn inputs(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::InvalidConfig("an architecture needs at least one weight layer".into()));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        if *self.layer_dims.last().unwrap() != 1 {
            return Err(Error::InvalidConfig("the output layer must have width 1".into()));
        }
        Ok(())
    }

    /// Activation applied after weight layer `layer` (1-based).
    pub fn activation(&self, layer: usize) -> Activation {
        if layer == self.depth() {
            Activation::Identity
        } else if layer == 1 {
            self.first_activation
        } else {
            Activation::Tanh
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Gradients share the parameter layout.
pub type Gradients = MlpParams;

impl MlpParams {
    pub fn zeros(arch: &Architecture) -> Self {
        let weights = arch.layer_dims.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect();
        let biases = arch.layer_dims[1..].iter().map(|&n| Array1::zeros(n)).collect();
        MlpParams { weights, biases }
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    /// Weight matrix of layer `layer` (1-based).
    pub fn layer(&self, layer: usize) -> &Array2<f64> {
        &self.weights[layer - 1]
    }

    pub fn check(&self, arch: &Architecture) -> Result<()> {
        arch.validate()?;
        if self.weights.len() != arch.depth() || self.biases.len() != arch.depth() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} layers, params have {} weights / {} biases",
                arch.depth(),
                self.weights.len(),
                self.biases.len()
            )));
        }
        for (l, w) in arch.layer_dims.windows(2).enumerate() {
            if self.weights[l].dim() != (w[1], w[0]) || self.biases[l].len() != w[1] {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} expected {}x{} weights",
                    l + 1,
                    w[1],
                    w[0]
                )));
            }
        }
        Ok(())
    }

    /// All tensors as flat mutable slices, weights first then biases.
    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .map(|w| w.as_slice_mut().expect("standard layout"))
            .chain(self.biases.iter_mut().map(|b| b.as_slice_mut().expect("standard layout")))
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .map(|w| w.as_slice().expect("standard layout"))
            .chain(self.biases.iter().map(|b| b.as_slice().expect("standard layout")))
    }

    /// All tensors concatenated, weights first.
    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().flat_map(|s| s.iter().copied()).collect()
    }

    /// Overwrite every tensor from a vector laid out as [`MlpParams::to_flat`].
    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.slices_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        debug_assert_eq!(offset, flat.len());
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, scale: f64, other: &MlpParams) {
        for (a, b) in self.slices_mut().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    /// Zero every weight whose magnitude is below `threshold`. Biases are kept.
    pub fn truncate_weights(&mut self, threshold: f64) {
        for w in &mut self.weights {
            w.mapv_inplace(|v| if v.abs() < threshold { 0.0 } else { v });
        }
    }
}

/// Uniform fan-in/fan-out initialization with zero biases.
pub fn init_params(arch: &Architecture, seed: u64) -> MlpParams {
    let mut rng = rng::stream(seed, 0);
    let mut params = MlpParams::zeros(arch);
    for w in &mut params.weights {
        let (fan_out, fan_in) = w.dim();
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        w.mapv_inplace(|_| rng.random_range(-bound..=bound));
    }
    params
}

fn check_batch(params: &MlpParams, arch: &Architecture, x: ArrayView2<f64>, y: Option<ArrayView1<f64>>) -> Result<()> {
    params.check(arch)?;
    if x.ncols() != arch.inputs() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} columns, network expects {}",
            x.ncols(),
            arch.inputs()
        )));
    }
    if let Some(y) = y {
        if y.len() != x.nrows() {
            return Err(Error::ShapeMismatch(format!("{} rows but {} targets", x.nrows(), y.len())));
        }
    }
    Ok(())
}

/// Activations of every layer for one chunk; `acts[0]` is the input.
fn forward_chunk(params: &MlpParams, arch: &Architecture, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
    let mut acts: Vec<Array2<f64>> = Vec::with_capacity(arch.depth());
    for l in 0..arch.depth() {
        let input = if l == 0 { x } else { acts[l - 1].view() };
        let mut z = input.dot(&params.weights[l].t());
        z += &params.biases[l];
        arch.activation(l + 1).apply_inplace(&mut z);
        acts.push(z);
    }
    acts
}

fn chunk_bounds(m: usize) -> Vec<(usize, usize)> {
    (0..m).step_by(CHUNK_ROWS).map(|a| (a, (a + CHUNK_ROWS).min(m))).collect()
}

/// Network output for every row of `x`.
pub fn forward(params: &MlpParams, arch: &Architecture, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    forward_with(Execution::default(), params, arch, x)
}

pub fn forward_with(
    exec: Execution,
    params: &MlpParams,
    arch: &Architecture,
    x: ArrayView2<f64>,
) -> Result<Array1<f64>> {
    check_batch(params, arch, x, None)?;
    let chunks = chunk_bounds(x.nrows());
    let parts = par::map(exec, &chunks, |&(a, b)| {
        let mut acts = forward_chunk(params, arch, x.slice(s![a..b, ..]));
        acts.pop().expect("at least one layer").column(0).to_owned()
    });
    Ok(Array1::from_iter(parts.into_iter().flatten()))
}

/// Mean squared residual `(1/m) Σ (y_i - F(x_i))²`.
pub fn loss_mse(params: &MlpParams, arch: &Architecture, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::InvalidConfig("loss of an empty dataset".into()));
    }
    check_batch(params, arch, x, Some(y))?;
    let pred = forward(params, arch, x)?;
    Ok(pred.iter().zip(y).map(|(p, t)| (t - p) * (t - p)).sum::<f64>() / y.len() as f64)
}

/// Unscaled chunk contribution: `Σ r_i ∂F_i/∂θ` and `Σ r_i²`.
fn backward_chunk(
    params: &MlpParams,
    arch: &Architecture,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> (Gradients, f64) {
    let depth = arch.depth();
    let acts = forward_chunk(params, arch, x);
    let out = acts[depth - 1].column(0);
    let resid = Array1::from_iter(out.iter().zip(y).map(|(p, t)| p - t));
    let sse = resid.iter().map(|r| r * r).sum();

    let mut grads = params.zeros_like();
    let mut delta = resid.insert_axis(Axis(1));
    for l in (0..depth).rev() {
        let input = if l == 0 { x } else { acts[l - 1].view() };
        grads.weights[l] = delta.t().dot(&input);
        grads.biases[l] = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut next = delta.dot(&params.weights[l]);
            if arch.activation(l) == Activation::Tanh {
                ndarray::Zip::from(&mut next)
                    .and(&acts[l - 1])
                    .for_each(|d, &a| *d *= 1.0 - a * a);
            }
            delta = next;
        }
    }
    (grads, sse)
}

/// Gradient of [`loss_mse`] and the loss itself.
pub fn loss_and_grad(
    exec: Execution,
    params: &MlpParams,
    arch: &Architecture,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> Result<(f64, Gradients)> {
    if y.is_empty() {
        return Err(Error::InvalidConfig("gradient of an empty dataset".into()));
    }
    check_batch(params, arch, x, Some(y))?;
    let m = y.len();
    let chunks = chunk_bounds(m);
    let parts = par::map(exec, &chunks, |&(a, b)| {
        backward_chunk(params, arch, x.slice(s![a..b, ..]), y.slice(s![a..b]))
    });
    let mut parts = parts.into_iter();
    let (mut total, mut sse) = parts.next().expect("nonempty batch");
    for (g, e) in parts {
        total.add_scaled(1.0, &g);
        sse += e;
    }
    let scale = 2.0 / m as f64;
    for t in total.slices_mut() {
        t.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((sse / m as f64, total))
}

/// Exact gradient of the mean squared loss by reverse accumulation.
pub fn backward(params: &MlpParams, arch: &Architecture, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Gradients> {
    loss_and_grad(Execution::default(), params, arch, x, y).map(|(_, g)| g)
}

/// Euclidean norm of every column of `w`.
pub fn column_norms(w: &Array2<f64>) -> Vec<f64> {
    w.axis_iter(Axis(1)).map(|c| c.dot(&c).sqrt()).collect()
}

/// 1-based columns of weight layer `layer` with positive norm after zeroing
/// entries below `threshold`.
pub fn extract_support(params: &MlpParams, layer: usize, threshold: f64) -> BTreeSet<usize> {
    params
        .layer(layer)
        .axis_iter(Axis(1))
        .enumerate()
        .filter(|(_, col)| col.iter().any(|v| v.abs() >= threshold && *v != 0.0))
        .map(|(j, _)| j + 1)
        .collect()
}

/// On-disk form of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub architecture: Architecture,
    /// Row-major weights, one array per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    /// Training scales needed to map predictions back to original units.
    pub scales: Scales,
    pub penalized_layer: usize,
}

impl SavedModel {
    pub fn new(arch: &Architecture, params: &MlpParams, scales: &Scales, penalized_layer: usize) -> Self {
        SavedModel {
            architecture: arch.clone(),
            weights: params.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            biases: params.biases.iter().map(|b| b.to_vec()).collect(),
            scales: scales.clone(),
            penalized_layer,
        }
    }

    pub fn params(&self) -> Result<MlpParams> {
        let arch = &self.architecture;
        arch.validate()?;
        if self.weights.len() != arch.depth() || self.biases.len() != arch.depth() {
            return Err(Error::ShapeMismatch("layer count does not match architecture".into()));
        }
        let weights = arch
            .layer_dims
            .windows(2)
            .zip(&self.weights)
            .map(|(d, w)| {
                Array2::from_shape_vec((d[1], d[0]), w.clone()).map_err(|e| Error::ShapeMismatch(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let biases = self.biases.iter().map(|b| Array1::from(b.clone())).collect();
        let params = MlpParams { weights, biases };
        params.check(arch)?;
        Ok(params)
    }
}
