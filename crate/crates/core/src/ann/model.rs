//! Batch-normalized multilayer perceptron.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{gemm, Scalar, View};
use crate::collective::NUM_FEATURES;
use crate::correlations::NUM_CLASSES;
use crate::error::{Error, Result};

pub const HIDDEN_WIDTH: usize = 512;
pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// The output layer starts with this fraction of the He bound so the initial
/// predictions are close to uniform.
const OUTPUT_INIT_SCALE: f64 = 0.1;

const INIT_STREAM: u64 = 0x1417;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub feature_indices: Vec<usize>,
    pub hidden: Vec<usize>,
    /// Normalize the raw inputs as well as the hidden activations.
    pub bn_input: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(feature_indices: Vec<usize>, seed: u64) -> Self {
        Self {
            feature_indices,
            hidden: vec![HIDDEN_WIDTH, HIDDEN_WIDTH],
            bn_input: true,
            seed,
        }
    }
}

/// Fully connected layer; `weight` is `inputs × outputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    fn new(dim: usize) -> Self {
        Self {
            gamma: vec![T::one(); dim],
            beta: vec![T::zero(); dim],
            running_mean: vec![T::zero(); dim],
            running_var: vec![T::one(); dim],
        }
    }
}

/// Optional batch normalization followed by a dense map.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub norm: Option<BatchNorm<T>>,
    pub dense: Dense<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub(crate) layers: Vec<Layer<T>>,
    feature_indices: Vec<usize>,
    bn_input: bool,
    seed: u64,
    training: bool,
}

pub type MlpModel = Mlp<f32>;

/// Per-layer gradients, laid out like [`Layer`].
#[derive(Clone, Debug)]
pub struct LayerGrads<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct Grads<T> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(model: &Mlp<T>) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|l| {
                let bn = l.norm.as_ref().map_or(0, |n| n.gamma.len());
                LayerGrads {
                    gamma: vec![T::zero(); bn],
                    beta: vec![T::zero(); bn],
                    weight: vec![T::zero(); l.dense.weight.len()],
                    bias: vec![T::zero(); l.dense.bias.len()],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            for v in [&mut l.gamma, &mut l.beta, &mut l.weight, &mut l.bias] {
                v.iter_mut().for_each(|g| *g = T::zero());
            }
        }
    }

    /// Same order as [`Mlp::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [&l.gamma[..], &l.beta[..], &l.weight[..], &l.bias[..]])
            .filter(|s| !s.is_empty())
            .collect()
    }
}

#[derive(Clone, Debug, Default)]
struct LayerBuf<T> {
    /// Layer input.
    h: Vec<T>,
    xhat: Vec<T>,
    /// Normalized input fed to the dense map.
    y: Vec<T>,
    mean: Vec<f64>,
    var: Vec<f64>,
    inv_std: Vec<T>,
    /// Dense output.
    z: Vec<T>,
}

/// Activations and scratch space reused across forward and backward passes.
#[derive(Clone, Debug, Default)]
pub struct Workspace<T> {
    rows: usize,
    bufs: Vec<LayerBuf<T>>,
    probs: Vec<T>,
    grad_a: Vec<T>,
    grad_b: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new() -> Self {
        Self {
            rows: 0,
            bufs: Vec::new(),
            probs: Vec::new(),
            grad_a: Vec::new(),
            grad_b: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Softmax output of the last forward pass, `rows × 5`.
    pub fn probabilities(&self) -> &[T] {
        &self.probs[..self.rows * NUM_CLASSES]
    }

    /// Normalized (pre-affine) inputs of layer `l`.
    pub fn normalized(&self, l: usize) -> &[T] {
        &self.bufs[l].xhat
    }

    /// ReLU activity pattern of all hidden layers.
    pub fn relu_mask(&self) -> Vec<bool> {
        self.bufs[1..].iter().flat_map(|b| b.h.iter().map(|v| *v > T::zero())).collect()
    }

    fn prepare(&mut self, model: &Mlp<T>, rows: usize) {
        self.rows = rows;
        self.bufs.resize_with(model.layers.len(), LayerBuf::default);
        for (buf, layer) in self.bufs.iter_mut().zip(&model.layers) {
            let (i, o) = (layer.dense.inputs, layer.dense.outputs);
            buf.h.resize(rows * i, T::zero());
            buf.z.resize(rows * o, T::zero());
            if layer.norm.is_some() {
                buf.xhat.resize(rows * i, T::zero());
                buf.y.resize(rows * i, T::zero());
                buf.mean.resize(i, 0.0);
                buf.var.resize(i, 0.0);
                buf.inv_std.resize(i, T::zero());
            }
        }
        self.probs.resize(rows * NUM_CLASSES, T::zero());
    }
}

fn he_uniform<T: Scalar>(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize, scale: f64) -> Vec<T> {
    if inputs == 0 {
        return Vec::new();
    }
    let bound = scale * (6.0 / inputs as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    (0..inputs * outputs).map(|_| T::from_f64_lossy(dist.sample(rng))).collect()
}

impl<T: Scalar> Mlp<T> {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let mut seen = [false; NUM_FEATURES];
        for &i in &cfg.feature_indices {
            if i >= NUM_FEATURES || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Config(format!("invalid feature selection {:?}", cfg.feature_indices)));
            }
        }
        if cfg.hidden.contains(&0) {
            return Err(Error::Config("hidden layers must be non-empty".into()));
        }
        let mut widths = vec![cfg.feature_indices.len()];
        widths.extend(&cfg.hidden);
        widths.push(NUM_CLASSES);

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(INIT_STREAM);
        let depth = widths.len() - 1;
        let layers = (0..depth)
            .map(|l| {
                let (i, o) = (widths[l], widths[l + 1]);
                let scale = if l + 1 == depth { OUTPUT_INIT_SCALE } else { 1.0 };
                Layer {
                    norm: (l > 0 || cfg.bn_input).then(|| BatchNorm::new(i)),
                    dense: Dense {
                        inputs: i,
                        outputs: o,
                        weight: he_uniform(&mut rng, i, o, scale),
                        bias: vec![T::zero(); o],
                    },
                }
            })
            .collect();
        Ok(Self {
            layers,
            feature_indices: cfg.feature_indices.clone(),
            bn_input: cfg.bn_input,
            seed: cfg.seed,
            training: false,
        })
    }

    pub(crate) fn from_parts(layers: Vec<Layer<T>>, feature_indices: Vec<usize>, bn_input: bool, seed: u64) -> Self {
        Self {
            layers,
            feature_indices,
            bn_input,
            seed,
            training: false,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.feature_indices.len()
    }

    /// Indices into the canonical feature order, in input-column order.
    pub fn feature_indices(&self) -> &[usize] {
        &self.feature_indices
    }

    pub fn bn_input(&self) -> bool {
        self.bn_input
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Input width followed by every layer's output width.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.n_inputs()];
        w.extend(self.layers.iter().map(|l| l.dense.outputs));
        w
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn num_parameters(&self) -> usize {
        Grads::zeros_like(self).slices().iter().map(|s| s.len()).sum()
    }

    /// Trainable parameters: per layer γ, β (when normalized), weight, bias.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for l in &mut self.layers {
            if let Some(n) = &mut l.norm {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
            out.push(&mut l.dense.weight);
            out.push(&mut l.dense.bias);
        }
        out.retain(|s| !s.is_empty());
        out
    }

    /// Names matching [`Mlp::param_slices_mut`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if let Some(n) = &l.norm {
                if !n.gamma.is_empty() {
                    out.push(format!("bn{i}.gamma"));
                    out.push(format!("bn{i}.beta"));
                }
            }
            if !l.dense.weight.is_empty() {
                out.push(format!("dense{i}.weight"));
            }
            out.push(format!("dense{i}.bias"));
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            let norm_ok = l.norm.as_ref().map_or(true, |n| {
                [&n.gamma, &n.beta, &n.running_mean, &n.running_var]
                    .iter()
                    .all(|v| v.iter().all(|x| x.is_finite()))
                    && n.running_var.iter().all(|v| *v >= T::zero())
            });
            norm_ok && l.dense.weight.iter().chain(&l.dense.bias).all(|x| x.is_finite())
        })
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::from_f64_lossy(x.to_f64().unwrap_or(f64::NAN))).collect();
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                norm: l.norm.as_ref().map(|n| BatchNorm {
                    gamma: conv(&n.gamma),
                    beta: conv(&n.beta),
                    running_mean: conv(&n.running_mean),
                    running_var: conv(&n.running_var),
                }),
                dense: Dense {
                    inputs: l.dense.inputs,
                    outputs: l.dense.outputs,
                    weight: conv(&l.dense.weight),
                    bias: conv(&l.dense.bias),
                },
            })
            .collect();
        Mlp {
            layers,
            feature_indices: self.feature_indices.clone(),
            bn_input: self.bn_input,
            seed: self.seed,
            training: self.training,
        }
    }

    /// Runs the network on `rows` row-major inputs. Batch statistics are used
    /// in training mode, running statistics otherwise.
    pub fn forward(&self, x: &[T], rows: usize, ws: &mut Workspace<T>) -> Result<()> {
        let n = self.n_inputs();
        if x.len() != rows * n {
            return Err(Error::DimensionMismatch {
                expected: rows * n,
                got: x.len(),
            });
        }
        if self.training && rows < 2 {
            return Err(Error::Config("training-mode batches need at least two rows".into()));
        }
        ws.prepare(self, rows);
        ws.bufs[0].h.copy_from_slice(x);
        let depth = self.layers.len();
        for l in 0..depth {
            let (cur, next) = ws.bufs.split_at_mut(l + 1);
            let buf = &mut cur[l];
            let layer = &self.layers[l];
            let width = layer.dense.inputs;
            if let Some(bn) = &layer.norm {
                normalize(bn, buf, rows, width, self.training);
            }
            let input = if layer.norm.is_some() { &buf.y } else { &buf.h };
            let out = layer.dense.outputs;
            gemm(
                View::rm(input, rows, width),
                View::rm(&layer.dense.weight, width, out),
                T::zero(),
                &mut buf.z,
            );
            for row in buf.z.chunks_exact_mut(out) {
                row.iter_mut().zip(&layer.dense.bias).for_each(|(v, b)| *v = *v + *b);
            }
            if l + 1 < depth {
                let h = &mut next[0].h;
                h.iter_mut().zip(&buf.z).for_each(|(h, z)| *h = z.max(T::zero()));
            }
        }
        let logits = &ws.bufs[depth - 1].z;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                epoch: 0,
                what: "non-finite activations".into(),
            });
        }
        for (p, z) in ws.probs.chunks_exact_mut(NUM_CLASSES).zip(logits.chunks_exact(NUM_CLASSES)) {
            let z: [f64; NUM_CLASSES] = std::array::from_fn(|k| z[k].to_f64().unwrap_or(f64::NAN));
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e = z.map(|v| (v - m).exp());
            let s: f64 = e.iter().sum();
            p.iter_mut().zip(e).for_each(|(p, e)| *p = T::from_f64_lossy(e / s));
        }
        Ok(())
    }

    /// Mean cross-entropy of the last forward pass.
    pub fn loss(&self, ws: &Workspace<T>, labels: &[u8]) -> f64 {
        let logits = &ws.bufs[self.layers.len() - 1].z;
        let total: f64 = logits
            .chunks_exact(NUM_CLASSES)
            .zip(labels)
            .map(|(z, &y)| {
                let z: [f64; NUM_CLASSES] = std::array::from_fn(|k| z[k].to_f64().unwrap_or(f64::NAN));
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                lse - z[y as usize]
            })
            .sum();
        total / labels.len() as f64
    }

    /// Accumulates `scale ·` gradients of the summed cross-entropy of the last
    /// training-mode forward pass into `grads`.
    pub fn backward(&self, ws: &mut Workspace<T>, labels: &[u8], scale: T, grads: &mut Grads<T>) {
        let rows = ws.rows;
        assert_eq!(labels.len(), rows, "label count differs from batch");
        let mut dz = std::mem::take(&mut ws.grad_a);
        let mut dy = std::mem::take(&mut ws.grad_b);
        dz.clear();
        dz.extend_from_slice(ws.probabilities());
        for (row, &y) in dz.chunks_exact_mut(NUM_CLASSES).zip(labels) {
            row[y as usize] = row[y as usize] - T::one();
            row.iter_mut().for_each(|v| *v = *v * scale);
        }

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let buf = &ws.bufs[l];
            let g = &mut grads.layers[l];
            let (width, out) = (layer.dense.inputs, layer.dense.outputs);
            let input = if layer.norm.is_some() { &buf.y } else { &buf.h };

            gemm(View::rm_t(input, width, rows), View::rm(&dz, rows, out), T::one(), &mut g.weight);
            for row in dz.chunks_exact(out) {
                g.bias.iter_mut().zip(row).for_each(|(b, d)| *b = *b + *d);
            }
            if l == 0 && (layer.norm.is_none() || width == 0) {
                break;
            }

            dy.resize(rows * width, T::zero());
            gemm(View::rm(&dz, rows, out), View::rm_t(&layer.dense.weight, out, width), T::zero(), &mut dy);

            if let Some(bn) = &layer.norm {
                let mut sum_dy = vec![0.0f64; width];
                let mut sum_dy_xhat = vec![0.0f64; width];
                for (d, x) in dy.chunks_exact(width).zip(buf.xhat.chunks_exact(width)) {
                    for c in 0..width {
                        let d = d[c].to_f64().unwrap_or(f64::NAN);
                        sum_dy[c] += d;
                        sum_dy_xhat[c] += d * x[c].to_f64().unwrap_or(f64::NAN);
                    }
                }
                for c in 0..width {
                    g.gamma[c] = g.gamma[c] + T::from_f64_lossy(sum_dy_xhat[c]);
                    g.beta[c] = g.beta[c] + T::from_f64_lossy(sum_dy[c]);
                }
                if l == 0 {
                    break;
                }
                let m = rows as f64;
                let coef: Vec<T> = (0..width)
                    .map(|c| bn.gamma[c] * buf.inv_std[c] * T::from_f64_lossy(1.0 / m))
                    .collect();
                let mean_dy: Vec<T> = sum_dy.iter().map(|s| T::from_f64_lossy(*s)).collect();
                let mean_dyx: Vec<T> = sum_dy_xhat.iter().map(|s| T::from_f64_lossy(*s)).collect();
                let mt = T::from_f64_lossy(m);
                for (d, x) in dy.chunks_exact_mut(width).zip(buf.xhat.chunks_exact(width)) {
                    for c in 0..width {
                        d[c] = coef[c] * (mt * d[c] - mean_dy[c] - x[c] * mean_dyx[c]);
                    }
                }
            }

            // ReLU of the previous layer: its output is this layer's input
            dy.iter_mut().zip(&buf.h).for_each(|(d, h)| {
                if *h <= T::zero() {
                    *d = T::zero();
                }
            });
            std::mem::swap(&mut dz, &mut dy);
        }
        ws.grad_a = dz;
        ws.grad_b = dy;
    }

    /// Folds the batch statistics of the last training-mode forward pass into
    /// the running estimates.
    pub fn update_running_stats(&mut self, ws: &Workspace<T>) {
        let m = ws.rows as f64;
        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        for (layer, buf) in self.layers.iter_mut().zip(&ws.bufs) {
            if let Some(bn) = &mut layer.norm {
                for c in 0..bn.gamma.len() {
                    let rm = bn.running_mean[c].to_f64().unwrap_or(f64::NAN);
                    let rv = bn.running_var[c].to_f64().unwrap_or(f64::NAN);
                    bn.running_mean[c] = T::from_f64_lossy((1.0 - BN_MOMENTUM) * rm + BN_MOMENTUM * buf.mean[c]);
                    bn.running_var[c] =
                        T::from_f64_lossy((1.0 - BN_MOMENTUM) * rv + BN_MOMENTUM * buf.var[c] * unbias);
                }
            }
        }
    }

    /// Inference-mode class probabilities, `rows × 5`.
    pub fn predict_proba(&self, x: &[T], rows: usize) -> Result<Vec<T>> {
        const CHUNK: usize = 4096;
        let n = self.n_inputs();
        if x.len() != rows * n {
            return Err(Error::DimensionMismatch {
                expected: rows * n,
                got: x.len(),
            });
        }
        let mut model = std::borrow::Cow::Borrowed(self);
        if self.training {
            model.to_mut().training = false;
        }
        let mut ws = Workspace::new();
        let mut out = Vec::with_capacity(rows * NUM_CLASSES);
        let mut start = 0;
        while start < rows {
            let take = CHUNK.min(rows - start);
            model.forward(&x[start * n..(start + take) * n], take, &mut ws)?;
            out.extend_from_slice(ws.probabilities());
            start += take;
        }
        Ok(out)
    }
}

fn normalize<T: Scalar>(bn: &BatchNorm<T>, buf: &mut LayerBuf<T>, rows: usize, width: usize, batch_stats: bool) {
    if width == 0 {
        return;
    }
    if batch_stats {
        buf.mean.iter_mut().for_each(|v| *v = 0.0);
        buf.var.iter_mut().for_each(|v| *v = 0.0);
        for row in buf.h.chunks_exact(width) {
            buf.mean.iter_mut().zip(row).for_each(|(m, x)| *m += x.to_f64().unwrap_or(f64::NAN));
        }
        buf.mean.iter_mut().for_each(|m| *m /= rows as f64);
        for row in buf.h.chunks_exact(width) {
            for c in 0..width {
                let d = row[c].to_f64().unwrap_or(f64::NAN) - buf.mean[c];
                buf.var[c] += d * d;
            }
        }
        buf.var.iter_mut().for_each(|v| *v /= rows as f64);
    } else {
        for c in 0..width {
            buf.mean[c] = bn.running_mean[c].to_f64().unwrap_or(f64::NAN);
            buf.var[c] = bn.running_var[c].to_f64().unwrap_or(f64::NAN);
        }
    }
    for c in 0..width {
        buf.inv_std[c] = T::from_f64_lossy(1.0 / (buf.var[c] + BN_EPSILON).sqrt());
    }
    let mean: Vec<T> = buf.mean.iter().map(|m| T::from_f64_lossy(*m)).collect();
    for ((h, xh), y) in buf
        .h
        .chunks_exact(width)
        .zip(buf.xhat.chunks_exact_mut(width))
        .zip(buf.y.chunks_exact_mut(width))
    {
        for c in 0..width {
            xh[c] = (h[c] - mean[c]) * buf.inv_std[c];
            y[c] = bn.gamma[c] * xh[c] + bn.beta[c];
        }
    }
}
