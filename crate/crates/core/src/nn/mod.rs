//! Small trainable networks for `NN(·)`: a dense feedforward net, a residual
//! net with four residual blocks, a sine-activated network, and an embedding
//! table for tile cells. Hand-written reverse mode, f64 throughout.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod loss;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, Rng as SeededRng};

pub use adam::{adam_step, Adam};
pub use gradcheck::{finite_diff_check, Target};
pub use loss::{log_softmax, loss_mse, loss_softmax_ce, softmax};

/// First-layer frequency of sine networks.
pub const SIREN_OMEGA0: f64 = 30.0;
pub const LEAKY_RELU_SLOPE: f64 = 0.01;
/// Number of residual blocks in [`Arch::Residual4`].
pub const RESIDUAL_BLOCKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Ffn,
    Residual4,
    Siren,
    /// Embedding-table lookup for tile cell indices.
    Table,
}

impl Arch {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Arch::Ffn => 0,
            Arch::Residual4 => 1,
            Arch::Siren => 2,
            Arch::Table => 3,
        }
    }

    pub(crate) fn from_tag(t: u8) -> Option<Self> {
        Some(match t {
            0 => Arch::Ffn,
            1 => Arch::Residual4,
            2 => Arch::Siren,
            3 => Arch::Table,
            _ => return None,
        })
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Ffn => "ffn",
            Arch::Residual4 => "residual4",
            Arch::Siren => "siren",
            Arch::Table => "table",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Sigmoid,
    Sine,
}

impl Activation {
    pub const ALL: [Activation; 4] = [Activation::Relu, Activation::LeakyRelu, Activation::Sigmoid, Activation::Sine];

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::LeakyRelu => 1,
            Activation::Sigmoid => 2,
            Activation::Sine => 3,
        }
    }

    pub(crate) fn from_tag(t: u8) -> Option<Self> {
        Activation::ALL.into_iter().find(|a| a.tag() == t)
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_RELU_SLOPE * z
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Sine => z.sin(),
        }
    }

    /// Derivative at pre-activation `z`.
    #[inline]
    fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_RELU_SLOPE
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
            Activation::Sine => z.cos(),
        }
    }
}

/// A row-major parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Weights of one network. Tensors are stored in declaration order: for each
/// linear layer its weight (`out × in`) then its bias (`1 × out`); a table
/// network holds a single `rows × out_dim` tensor whose last row is the
/// shared out-of-vocabulary row.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub arch: Arch,
    pub activation: Activation,
    pub in_dim: usize,
    /// Hidden width `k`.
    pub hidden: usize,
    /// Hidden depth `h` (ffn/siren); residual nets always have four blocks.
    pub depth: usize,
    /// Output width `d`.
    pub out_dim: usize,
    /// Sorted tile cell ids, one per non-OOV table row.
    pub vocab: Vec<u32>,
    pub tensors: Vec<Tensor>,
}

/// Gradients with the same layout as [`MlpParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(p: &MlpParams) -> Self {
        Grads {
            tensors: p.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Optimizer and loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub dropout_p: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 30,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            seed: 0,
            dropout_p: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Domain(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs < 1 {
            return Err(Error::Domain("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Domain("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Domain("adam betas must lie in [0, 1) and eps be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Domain("weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Domain(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p)));
        }
        Ok(())
    }
}

/// Training-time behaviour of a forward pass.
pub enum Mode<'a> {
    Eval,
    /// Inverted dropout inside residual blocks.
    Train { dropout_p: f64, rng: &'a mut SeededRng },
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    /// Input to every linear layer, in layer order.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of every activated layer, in layer order.
    preacts: Vec<Vec<f64>>,
    /// Dropout multipliers per residual block (empty when inactive).
    masks: Vec<Vec<f64>>,
    /// Activated block outputs after dropout.
    block_acts: Vec<Vec<f64>>,
    table_row: usize,
}

fn uniform_tensor(rng: &mut SeededRng, rows: usize, cols: usize, limit: f64) -> Tensor {
    Tensor {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect(),
    }
}

fn xavier(rng: &mut SeededRng, fan_in: usize, fan_out: usize) -> Tensor {
    uniform_tensor(rng, fan_out, fan_in, (6.0 / (fan_in + fan_out) as f64).sqrt())
}

#[inline]
fn affine(w: &Tensor, b: &Tensor, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let n_in = w.cols;
    for (o, row) in w.data.chunks_exact(n_in).enumerate() {
        let mut acc = b.data[o];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        out.push(acc);
    }
}

/// `dW += g ⊗ x`, `db += g`, returns `Wᵀ g`.
#[inline]
fn affine_backward(w: &Tensor, x: &[f64], g: &[f64], dw: &mut [f64], db: &mut [f64], want_dx: bool) -> Vec<f64> {
    let n_in = w.cols;
    let mut dx = if want_dx { vec![0.0; n_in] } else { Vec::new() };
    for (o, &go) in g.iter().enumerate() {
        db[o] += go;
        if go == 0.0 {
            continue;
        }
        let row = &w.data[o * n_in..(o + 1) * n_in];
        let drow = &mut dw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            drow[i] += go * x[i];
        }
        if want_dx {
            for i in 0..n_in {
                dx[i] += row[i] * go;
            }
        }
    }
    dx
}

impl MlpParams {
    /// Initializes a feature network. ffn/residual4 use Glorot-uniform weights
    /// and zero biases; siren uses the sine-network scheme with first-layer
    /// frequency [`SIREN_OMEGA0`].
    pub fn init(
        arch: Arch,
        activation: Activation,
        in_dim: usize,
        hidden: usize,
        depth: usize,
        out_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 || hidden == 0 {
            return Err(Error::Domain(format!(
                "network dimensions must be positive (in={in_dim}, k={hidden}, d={out_dim})"
            )));
        }
        let mut rng = seeded(seed);
        let mut tensors = Vec::new();
        match arch {
            Arch::Ffn => {
                let mut fan_in = in_dim;
                for _ in 0..depth {
                    tensors.push(xavier(&mut rng, fan_in, hidden));
                    tensors.push(Tensor::zeros(1, hidden));
                    fan_in = hidden;
                }
                tensors.push(xavier(&mut rng, fan_in, out_dim));
                tensors.push(Tensor::zeros(1, out_dim));
            }
            Arch::Residual4 => {
                tensors.push(xavier(&mut rng, in_dim, hidden));
                tensors.push(Tensor::zeros(1, hidden));
                for _ in 0..2 * RESIDUAL_BLOCKS {
                    tensors.push(xavier(&mut rng, hidden, hidden));
                    tensors.push(Tensor::zeros(1, hidden));
                }
                tensors.push(xavier(&mut rng, hidden, out_dim));
                tensors.push(Tensor::zeros(1, out_dim));
            }
            Arch::Siren => {
                let mut fan_in = in_dim;
                for layer in 0..=depth {
                    let fan_out = if layer == depth { out_dim } else { hidden };
                    let limit = if layer == 0 {
                        1.0 / fan_in as f64
                    } else {
                        (6.0 / fan_in as f64).sqrt() / SIREN_OMEGA0
                    };
                    tensors.push(uniform_tensor(&mut rng, fan_out, fan_in, limit));
                    tensors.push(uniform_tensor(&mut rng, 1, fan_out, limit));
                    fan_in = hidden;
                }
            }
            Arch::Table => {
                return Err(Error::Domain("use MlpParams::init_table for tile embedding tables".into()));
            }
        }
        let activation = if arch == Arch::Siren { Activation::Sine } else { activation };
        let depth = if arch == Arch::Residual4 { RESIDUAL_BLOCKS } else { depth };
        Ok(MlpParams {
            arch,
            activation,
            in_dim,
            hidden,
            depth,
            out_dim,
            vocab: Vec::new(),
            tensors,
        })
    }

    /// Embedding table over the tile cells in `vocab`, plus a zero OOV row.
    pub fn init_table(mut vocab: Vec<u32>, out_dim: usize, seed: u64) -> Result<Self> {
        if out_dim == 0 {
            return Err(Error::Domain("output dimension must be positive".into()));
        }
        vocab.sort_unstable();
        vocab.dedup();
        let rows = vocab.len() + 1;
        let mut rng = seeded(seed);
        let mut t = uniform_tensor(&mut rng, rows, out_dim, (6.0 / (rows + out_dim) as f64).sqrt());
        let oov = (rows - 1) * out_dim;
        t.data[oov..].fill(0.0);
        Ok(MlpParams {
            arch: Arch::Table,
            activation: Activation::Relu,
            in_dim: 1,
            hidden: out_dim,
            depth: 0,
            out_dim,
            vocab,
            tensors: vec![t],
        })
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Table row for a tile cell; unseen cells share the last row.
    pub fn table_row(&self, cell: usize) -> usize {
        match self.vocab.binary_search(&(cell as u32)) {
            Ok(i) => i,
            Err(_) => self.vocab.len(),
        }
    }

    fn n_linear(&self) -> usize {
        self.tensors.len() / 2
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim {
            return Err(Error::Shape(format!("input has length {}, network expects {}", x.len(), self.in_dim)));
        }
        if self.arch == Arch::Table {
            let c = x[0];
            if !(c >= 0.0 && c.fract() == 0.0 && c <= u32::MAX as f64) {
                return Err(Error::Shape(format!("tile input must be a cell index, got {c}")));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x, Mode::Eval)?.0)
    }

    /// Forward pass keeping what [`MlpParams::backward`] needs.
    pub fn forward_cached(&self, x: &[f64], mode: Mode<'_>) -> Result<(Vec<f64>, Cache)> {
        self.check_input(x)?;
        let mut cache = Cache::default();
        let t = &self.tensors;
        let out = match self.arch {
            Arch::Table => {
                let row = self.table_row(x[0] as usize);
                cache.table_row = row;
                let d = self.out_dim;
                t[0].data[row * d..(row + 1) * d].to_vec()
            }
            Arch::Ffn | Arch::Siren => {
                let omega = if self.arch == Arch::Siren { SIREN_OMEGA0 } else { 1.0 };
                let mut a = x.to_vec();
                let mut z = Vec::new();
                for l in 0..self.n_linear() - 1 {
                    affine(&t[2 * l], &t[2 * l + 1], &a, &mut z);
                    let next: Vec<f64> = z.iter().map(|&v| self.activation.apply(omega * v)).collect();
                    cache.inputs.push(std::mem::replace(&mut a, next));
                    cache.preacts.push(z.clone());
                }
                let l = self.n_linear() - 1;
                affine(&t[2 * l], &t[2 * l + 1], &a, &mut z);
                cache.inputs.push(a);
                z
            }
            Arch::Residual4 => {
                let (dropout_p, mut rng) = match mode {
                    Mode::Train { dropout_p, rng } if dropout_p > 0.0 => (dropout_p, Some(rng)),
                    _ => (0.0, None),
                };
                let act = self.activation;
                let mut z = Vec::new();
                affine(&t[0], &t[1], x, &mut z);
                cache.inputs.push(x.to_vec());
                let mut y: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
                cache.preacts.push(z.clone());
                for blk in 0..RESIDUAL_BLOCKS {
                    let l1 = 1 + 2 * blk;
                    affine(&t[2 * l1], &t[2 * l1 + 1], &y, &mut z);
                    let mut v: Vec<f64> = z.iter().map(|&u| act.apply(u)).collect();
                    let mut mask = Vec::new();
                    if let Some(rng) = rng.as_deref_mut() {
                        let keep = 1.0 / (1.0 - dropout_p);
                        mask = (0..v.len())
                            .map(|_| if rng.random::<f64>() < dropout_p { 0.0 } else { keep })
                            .collect();
                        for (vi, m) in v.iter_mut().zip(&mask) {
                            *vi *= m;
                        }
                    }
                    cache.inputs.push(y.clone());
                    cache.preacts.push(z.clone());
                    cache.masks.push(mask);
                    let l2 = l1 + 1;
                    let mut r = Vec::new();
                    affine(&t[2 * l2], &t[2 * l2 + 1], &v, &mut r);
                    cache.block_acts.push(v);
                    for (yi, ri) in y.iter_mut().zip(&r) {
                        *yi += ri;
                    }
                }
                let lo = 1 + 2 * RESIDUAL_BLOCKS;
                affine(&t[2 * lo], &t[2 * lo + 1], &y, &mut z);
                cache.inputs.push(y);
                z
            }
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients of `dy · out` into `grads` and returns
    /// the gradient with respect to the input (empty for tables).
    pub fn backward(&self, cache: &Cache, dy: &[f64], grads: &mut Grads) -> Result<Vec<f64>> {
        if dy.len() != self.out_dim {
            return Err(Error::Shape(format!("upstream gradient has length {}, expected {}", dy.len(), self.out_dim)));
        }
        if grads.tensors.len() != self.tensors.len() {
            return Err(Error::Shape("gradient buffer does not match parameters".into()));
        }
        let t = &self.tensors;
        let g = &mut grads.tensors;
        match self.arch {
            Arch::Table => {
                let d = self.out_dim;
                let row = cache.table_row;
                for (a, b) in g[0][row * d..(row + 1) * d].iter_mut().zip(dy) {
                    *a += b;
                }
                Ok(Vec::new())
            }
            Arch::Ffn | Arch::Siren => {
                let omega = if self.arch == Arch::Siren { SIREN_OMEGA0 } else { 1.0 };
                let n = self.n_linear();
                let mut up = dy.to_vec();
                for l in (0..n).rev() {
                    if l < n - 1 {
                        for (u, &z) in up.iter_mut().zip(&cache.preacts[l]) {
                            *u *= omega * self.activation.grad(omega * z);
                        }
                    }
                    let (gw, gb) = split_pair(g, l);
                    up = affine_backward(&t[2 * l], &cache.inputs[l], &up, gw, gb, true);
                }
                Ok(up)
            }
            Arch::Residual4 => {
                let act = self.activation;
                let lo = 1 + 2 * RESIDUAL_BLOCKS;
                let (gw, gb) = split_pair(g, lo);
                let mut gy = affine_backward(&t[2 * lo], &cache.inputs[1 + RESIDUAL_BLOCKS], dy, gw, gb, true);
                for blk in (0..RESIDUAL_BLOCKS).rev() {
                    let l1 = 1 + 2 * blk;
                    let l2 = l1 + 1;
                    let (gw, gb) = split_pair(g, l2);
                    let mut gv = affine_backward(&t[2 * l2], &cache.block_acts[blk], &gy, gw, gb, true);
                    let mask = &cache.masks[blk];
                    for (i, (gvi, &u)) in gv.iter_mut().zip(&cache.preacts[1 + blk]).enumerate() {
                        let m = if mask.is_empty() { 1.0 } else { mask[i] };
                        *gvi *= m * act.grad(u);
                    }
                    let (gw, gb) = split_pair(g, l1);
                    let gin = affine_backward(&t[2 * l1], &cache.inputs[1 + blk], &gv, gw, gb, true);
                    for (a, b) in gy.iter_mut().zip(&gin) {
                        *a += b;
                    }
                }
                for (u, &z) in gy.iter_mut().zip(&cache.preacts[0]) {
                    *u *= act.grad(z);
                }
                let (gw, gb) = split_pair(g, 0);
                Ok(affine_backward(&t[0], &cache.inputs[0], &gy, gw, gb, true))
            }
        }
    }
}

fn split_pair(g: &mut [Vec<f64>], layer: usize) -> (&mut [f64], &mut [f64]) {
    let (w, b) = g[2 * layer..2 * layer + 2].split_at_mut(1);
    (&mut w[0], &mut b[0])
}

/// Parameter gradients for a single example; see [`MlpParams::backward`].
pub fn backprop(params: &MlpParams, x: &[f64], dy: &[f64]) -> Result<Grads> {
    let (_, cache) = params.forward_cached(x, Mode::Eval)?;
    let mut grads = Grads::zeros_like(params);
    params.backward(&cache, dy, &mut grads)?;
    Ok(grads)
}
