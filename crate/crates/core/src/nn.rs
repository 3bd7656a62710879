//! Small fully-connected network engine with hand-written backpropagation.
//!
//! Each layer is `affine → [batch norm] → activation`. Batch norm uses batch
//! statistics in [`Mode::Train`] and running statistics in [`Mode::Eval`].
//! Gradients are produced by [`Network::backward`] from the cache of the
//! matching forward pass and applied with Adam.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::tabular::Schema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        Self {
            width,
            activation,
            batch_norm: false,
        }
    }

    pub fn with_batch_norm(mut self, on: bool) -> Self {
        self.batch_norm = on;
        self
    }
}

pub const BATCH_NORM_MOMENTUM: f64 = 0.9;
pub const BATCH_NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: BATCH_NORM_MOMENTUM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub spec: LayerSpec,
    /// `fan_in × width`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub batch_norm: Option<BatchNorm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    input_width: usize,
    layers: Vec<Dense>,
    mode: Mode,
    /// Bumped on every parameter update so stale caches can be detected.
    #[serde(skip)]
    version: u64,
}

/// Equality over architecture, parameters and mode; the cache version is
/// bookkeeping and does not participate.
impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input_width == other.input_width && self.layers == other.layers && self.mode == other.mode
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Matrix,
    affine: Matrix,
    normalized: Option<Matrix>,
    /// Per-unit `1 / sqrt(var + eps)` used for the normalization.
    inv_std: Option<Vec<f64>>,
    pre_activation: Matrix,
    output: Matrix,
}

/// Intermediates of one forward pass, consumed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    mode: Mode,
    version: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    /// Gradient with respect to the network input.
    pub input: Matrix,
}

impl Gradients {
    /// Flattened view in the same order as [`Network::parameters_mut`].
    pub fn flat(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weights.as_slice());
            out.push(l.bias.as_slice());
            if let (Some(g), Some(b)) = (&l.gamma, &l.beta) {
                out.push(g.as_slice());
                out.push(b.as_slice());
            }
        }
        out
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.as_mut_slice().iter_mut().zip(b.weights.as_slice()) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
            for (ga, gb) in [(&mut a.gamma, &b.gamma), (&mut a.beta, &b.beta)] {
                if let (Some(x), Some(y)) = (ga.as_mut(), gb.as_ref()) {
                    for (p, q) in x.iter_mut().zip(y) {
                        *p += q;
                    }
                }
            }
        }
    }
}

impl Network {
    /// Builds a network with Glorot-uniform weights drawn from `seed`.
    pub fn new(input_width: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if input_width == 0 || specs.is_empty() {
            return Err(Error::Config("network needs an input and at least one layer".into()));
        }
        let mut r = rng::seeded(seed);
        let mut fan_in = input_width;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            if spec.width == 0 {
                return Err(Error::Config("layer width must be at least 1".into()));
            }
            let limit = (6.0 / (fan_in + spec.width) as f64).sqrt();
            let data = (0..fan_in * spec.width)
                .map(|_| r.random_range(-limit..=limit))
                .collect();
            layers.push(Dense {
                spec: *spec,
                weights: Matrix::from_vec(fan_in, spec.width, data)?,
                bias: vec![0.0; spec.width],
                batch_norm: spec.batch_norm.then(|| BatchNorm::new(spec.width)),
            });
            fan_in = spec.width;
        }
        Ok(Self {
            input_width,
            layers,
            mode: Mode::Train,
            version: 0,
        })
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.width)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.version += 1;
        &mut self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| l.batch_norm.is_some())
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_width {
            return Err(Error::Dimension(format!(
                "network expects {} inputs, batch has {}",
                self.input_width,
                batch.cols()
            )));
        }
        Ok(())
    }

    /// Forward pass honoring the current mode. In `Train` mode batch-norm
    /// layers use (and fold into their running averages) batch statistics.
    pub fn forward(&mut self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(batch)?;
        let train = self.mode == Mode::Train;
        if train && self.has_batch_norm() && batch.rows() < 2 {
            return Err(Error::Precondition(
                "batch normalization in training mode needs at least 2 rows".into(),
            ));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for layer in &mut self.layers {
            let cache = layer_forward(layer, x, train)?;
            x = cache.output.clone();
            caches.push(cache);
        }
        Ok((
            x,
            ForwardCache {
                layers: caches,
                mode: self.mode,
                version: self.version,
            },
        ))
    }

    /// Eval-mode forward pass; never mutates the network.
    pub fn infer(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            let mut z = affine(&x, layer);
            if let Some(bn) = &layer.batch_norm {
                for i in 0..z.rows() {
                    for (u, v) in z.row_mut(i).iter_mut().enumerate() {
                        let inv = 1.0 / (bn.running_var[u] + BATCH_NORM_EPS).sqrt();
                        *v = bn.gamma[u] * (*v - bn.running_mean[u]) * inv + bn.beta[u];
                    }
                }
            }
            let act = layer.spec.activation;
            x = z.map(|v| act.apply(v));
        }
        Ok(x)
    }

    /// Backpropagates `loss_grad` (∂L/∂output) through the cached pass.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: &Matrix) -> Result<Gradients> {
        if cache.version != self.version || cache.layers.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        let out = &cache.layers.last().expect("nonempty").output;
        if loss_grad.shape() != out.shape() {
            return Err(Error::Dimension(format!(
                "loss gradient is {:?}, output is {:?}",
                loss_grad.shape(),
                out.shape()
            )));
        }
        let mut grad = loss_grad.clone();
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            let act = layer.spec.activation;
            // ∂L/∂(pre-activation)
            let mut d = Matrix::zeros(grad.rows(), grad.cols());
            for ((dv, &x), (&y, &g)) in d
                .as_mut_slice()
                .iter_mut()
                .zip(lc.pre_activation.as_slice())
                .zip(lc.output.as_slice().iter().zip(grad.as_slice()))
            {
                *dv = g * act.derivative(x, y);
            }

            let (d_affine, gamma, beta) = match &layer.batch_norm {
                None => (d, None, None),
                Some(bn) => {
                    let xhat = lc.normalized.as_ref().expect("batch-norm cache");
                    let inv_std = lc.inv_std.as_ref().expect("batch-norm cache");
                    let (n, w) = d.shape();
                    let mut dgamma = vec![0.0; w];
                    let mut dbeta = vec![0.0; w];
                    for i in 0..n {
                        for u in 0..w {
                            dgamma[u] += d[(i, u)] * xhat[(i, u)];
                            dbeta[u] += d[(i, u)];
                        }
                    }
                    let mut dz = Matrix::zeros(n, w);
                    match cache.mode {
                        Mode::Train => {
                            let nf = n as f64;
                            for u in 0..w {
                                // dx̂ = dy·γ; dz = (inv_std/n)(n·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂))
                                let mut sum = 0.0;
                                let mut sum_x = 0.0;
                                for i in 0..n {
                                    let dxh = d[(i, u)] * bn.gamma[u];
                                    sum += dxh;
                                    sum_x += dxh * xhat[(i, u)];
                                }
                                for i in 0..n {
                                    let dxh = d[(i, u)] * bn.gamma[u];
                                    dz[(i, u)] = inv_std[u] / nf * (nf * dxh - sum - xhat[(i, u)] * sum_x);
                                }
                            }
                        }
                        Mode::Eval => {
                            for i in 0..n {
                                for u in 0..w {
                                    dz[(i, u)] = d[(i, u)] * bn.gamma[u] * inv_std[u];
                                }
                            }
                        }
                    }
                    (dz, Some(dgamma), Some(dbeta))
                }
            };

            let weights = lc.input.t_matmul(&d_affine);
            let mut bias = vec![0.0; d_affine.cols()];
            for i in 0..d_affine.rows() {
                for (b, v) in bias.iter_mut().zip(d_affine.row(i)) {
                    *b += v;
                }
            }
            grad = d_affine.matmul_t(&layer.weights);
            layer_grads.push(LayerGrads {
                weights,
                bias,
                gamma,
                beta,
            });
        }
        layer_grads.reverse();
        Ok(Gradients {
            layers: layer_grads,
            input: grad,
        })
    }

    /// Mutable parameter slices: per layer weights, bias, then γ and β if present.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weights.as_mut_slice());
            out.push(l.bias.as_mut_slice());
            if let Some(bn) = &mut l.batch_norm {
                out.push(bn.gamma.as_mut_slice());
                out.push(bn.beta.as_mut_slice());
            }
        }
        out
    }

    pub fn parameter_shapes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weights.as_slice().len());
            out.push(l.bias.len());
            if let Some(bn) = &l.batch_norm {
                out.push(bn.gamma.len());
                out.push(bn.beta.len());
            }
        }
        out
    }

    /// Writes a versioned JSON dump that reloads to a bit-identical network.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_versioned(path, NETWORK_FORMAT, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_versioned(path, NETWORK_FORMAT)
    }
}

const NETWORK_FORMAT: &str = "tabimpute-network";
pub(crate) const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    format: String,
    version: u32,
    payload: T,
}

pub(crate) fn save_versioned<T: Serialize>(path: impl AsRef<Path>, format: &str, payload: &T) -> Result<()> {
    let path = path.as_ref();
    let doc = Versioned {
        format: format.to_owned(),
        version: FORMAT_VERSION,
        payload,
    };
    let text = serde_json::to_string(&doc).map_err(|e| Error::Serialization(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn load_versioned<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>, format: &str) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Versioned<T> = serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
    if doc.format != format || doc.version != FORMAT_VERSION {
        return Err(Error::Serialization(format!(
            "expected {format} v{FORMAT_VERSION}, found {} v{}",
            doc.format, doc.version
        )));
    }
    Ok(doc.payload)
}

fn affine(x: &Matrix, layer: &Dense) -> Matrix {
    let mut z = x.matmul(&layer.weights);
    for i in 0..z.rows() {
        for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    z
}

fn layer_forward(layer: &mut Dense, input: Matrix, train: bool) -> Result<LayerCache> {
    let z = affine(&input, layer);
    let (n, w) = z.shape();
    let (normalized, inv_std, pre) = match &mut layer.batch_norm {
        None => (None, None, z.clone()),
        Some(bn) => {
            let (mean, var) = if train {
                let mut mean = vec![0.0; w];
                let mut var = vec![0.0; w];
                for i in 0..n {
                    for (m, v) in mean.iter_mut().zip(z.row(i)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                for i in 0..n {
                    for u in 0..w {
                        let d = z[(i, u)] - mean[u];
                        var[u] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                for u in 0..w {
                    bn.running_mean[u] = bn.momentum * bn.running_mean[u] + (1.0 - bn.momentum) * mean[u];
                    bn.running_var[u] = bn.momentum * bn.running_var[u] + (1.0 - bn.momentum) * var[u];
                }
                (mean, var)
            } else {
                (bn.running_mean.clone(), bn.running_var.clone())
            };
            let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
            let mut xhat = Matrix::zeros(n, w);
            let mut y = Matrix::zeros(n, w);
            for i in 0..n {
                for u in 0..w {
                    let h = (z[(i, u)] - mean[u]) * inv[u];
                    xhat[(i, u)] = h;
                    y[(i, u)] = bn.gamma[u] * h + bn.beta[u];
                }
            }
            (Some(xhat), Some(inv), y)
        }
    };
    let act = layer.spec.activation;
    let output = pre.map(|v| act.apply(v));
    Ok(LayerCache {
        input,
        affine: z,
        normalized,
        inv_std,
        pre_activation: pre,
        output,
    })
}

impl ForwardCache {
    /// Pre-normalization affine outputs of layer `l` (for diagnostics and tests).
    pub fn affine_output(&self, l: usize) -> &Matrix {
        &self.layers[l].affine
    }

    /// Normalized (pre-γ/β) batch-norm activations of layer `l`, if any.
    pub fn normalized(&self, l: usize) -> Option<&Matrix> {
        self.layers[l].normalized.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    /// Zeroed moments for parameter tensors of the given lengths.
    pub fn new(shapes: &[usize], config: AdamConfig) -> Self {
        Self {
            config,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn for_network(net: &Network, config: AdamConfig) -> Self {
        Self::new(&net.parameter_shapes(), config)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of every tensor in `params`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Dimension(format!(
                "Adam tracks {} tensors, got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first[k].len() || g.len() != self.first[k].len() {
                return Err(Error::Dimension(format!("tensor {k} changed shape")));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one Adam step to every parameter of `net`.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    let g = grads.flat();
    let mut params = net.parameters_mut();
    state.step(&mut params, &g)
}

pub const BCE_EPS: f64 = 1e-7;

/// Column roles and optional per-cell weights for [`mixed_loss`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedLossSpec {
    pub numerical: Vec<usize>,
    pub categorical: Vec<usize>,
    #[serde(skip)]
    pub weights: Option<Matrix>,
}

impl MixedLossSpec {
    pub fn for_schema(schema: &Schema) -> Self {
        Self {
            numerical: schema.numerical_indices(),
            categorical: schema.categorical_indices(),
            weights: None,
        }
    }

    pub fn with_weights(&self, weights: Matrix) -> Self {
        Self {
            numerical: self.numerical.clone(),
            categorical: self.categorical.clone(),
            weights: Some(weights),
        }
    }

    fn validate(&self, width: usize) -> Result<()> {
        let mut seen = vec![false; width];
        for &j in self.numerical.iter().chain(&self.categorical) {
            if j >= width {
                return Err(Error::Dimension(format!("loss column {j} outside width {width}")));
            }
            if seen[j] {
                return Err(Error::Config(format!("loss column {j} listed twice")));
            }
            seen[j] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("loss spec does not cover every column".into()));
        }
        Ok(())
    }
}

/// `sqrt(weighted MSE over numerical cells) + weighted mean BCE over categorical cells`,
/// and its gradient with respect to `pred`.
///
/// Categorical predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]`; the
/// gradient passes straight through the clamp so saturated units still learn.
pub fn mixed_loss(pred: &Matrix, target: &Matrix, spec: &MixedLossSpec) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if let Some(w) = &spec.weights {
        if w.shape() != pred.shape() {
            return Err(Error::Dimension("loss weights do not match prediction".into()));
        }
    }
    spec.validate(pred.cols())?;
    let weight = |i: usize, j: usize| spec.weights.as_ref().map_or(1.0, |w| w[(i, j)]);
    let n = pred.rows();
    let mut grad = Matrix::zeros(n, pred.cols());
    let mut loss = 0.0;

    if !spec.numerical.is_empty() {
        let mut sq = 0.0;
        let mut total_w = 0.0;
        for i in 0..n {
            for &j in &spec.numerical {
                let w = weight(i, j);
                let d = pred[(i, j)] - target[(i, j)];
                sq += w * d * d;
                total_w += w;
            }
        }
        if total_w > 0.0 {
            let rmse = (sq / total_w).sqrt();
            loss += rmse;
            let denom = total_w * rmse.max(1e-12);
            for i in 0..n {
                for &j in &spec.numerical {
                    grad[(i, j)] = weight(i, j) * (pred[(i, j)] - target[(i, j)]) / denom;
                }
            }
        } else {
            log::warn!("numerical loss branch has zero total weight; contributing 0");
        }
    }

    if !spec.categorical.is_empty() {
        let mut bce = 0.0;
        let mut total_w = 0.0;
        for i in 0..n {
            for &j in &spec.categorical {
                let w = weight(i, j);
                let p = pred[(i, j)].clamp(BCE_EPS, 1.0 - BCE_EPS);
                let t = target[(i, j)];
                bce -= w * (t * p.ln() + (1.0 - t) * (1.0 - p).ln());
                total_w += w;
            }
        }
        if total_w > 0.0 {
            loss += bce / total_w;
            for i in 0..n {
                for &j in &spec.categorical {
                    let p = pred[(i, j)].clamp(BCE_EPS, 1.0 - BCE_EPS);
                    let t = target[(i, j)];
                    grad[(i, j)] = weight(i, j) * (p - t) / (p * (1.0 - p)) / total_w;
                }
            }
        } else {
            log::warn!("categorical loss branch has zero total weight; contributing 0");
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(r: &mut rng::Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let mut net = Network::new(3, &[LayerSpec::new(3, Activation::Linear)], 0).unwrap();
        net.layers_mut()[0].weights = Matrix::identity(3);
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        assert_eq!(net.forward(&x).unwrap().0, x);
        assert_eq!(net.infer(&x).unwrap(), x);
    }

    #[test]
    fn zero_weight_sigmoid_unit_outputs_half() {
        let mut net = Network::new(2, &[LayerSpec::new(1, Activation::Sigmoid)], 0).unwrap();
        net.layers_mut()[0].weights = Matrix::zeros(2, 1);
        let out = net.infer(&Matrix::filled(4, 2, 3.0)).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.5));
    }

    /// Straightforward per-row re-implementation of a BN-free network.
    fn reference_forward(net: &Network, x: &Matrix) -> Matrix {
        let mut rows: Vec<Vec<f64>> = (0..x.rows()).map(|i| x.row(i).to_vec()).collect();
        for layer in net.layers() {
            rows = rows
                .iter()
                .map(|inp| {
                    (0..layer.spec.width)
                        .map(|u| {
                            let mut s = layer.bias[u];
                            for (k, v) in inp.iter().enumerate() {
                                s += v * layer.weights[(k, u)];
                            }
                            match layer.spec.activation {
                                Activation::Relu => s.max(0.0),
                                Activation::Sigmoid => 1.0 / (1.0 + (-s).exp()),
                                Activation::Tanh => s.tanh(),
                                Activation::Linear => s,
                            }
                        })
                        .collect()
                })
                .collect();
        }
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn forward_matches_reference_implementation() {
        let mut r = rng::seeded(3);
        let specs = [
            LayerSpec::new(5, Activation::Relu),
            LayerSpec::new(4, Activation::Tanh),
            LayerSpec::new(2, Activation::Sigmoid),
        ];
        let mut net = Network::new(3, &specs, 11).unwrap();
        for l in net.layers_mut() {
            l.bias.iter_mut().for_each(|b| *b = r.random_range(-0.5..0.5));
        }
        let x = random_matrix(&mut r, 6, 3, -1.0, 1.0);
        let expected = reference_forward(&net, &x);
        let got = net.forward(&x).unwrap().0;
        for (a, b) in got.as_slice().iter().zip(expected.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn width_and_batch_size_errors() {
        let mut net = Network::new(3, &[LayerSpec::new(2, Activation::Relu).with_batch_norm(true)], 0).unwrap();
        assert!(matches!(net.forward(&Matrix::zeros(4, 2)), Err(Error::Dimension(_))));
        assert!(matches!(net.forward(&Matrix::zeros(1, 3)), Err(Error::Precondition(_))));
        net.set_mode(Mode::Eval);
        assert!(net.forward(&Matrix::zeros(1, 3)).is_ok());
    }

    #[test]
    fn zero_loss_gradient_gives_zero_gradients() {
        let mut net = Network::new(3, &[LayerSpec::new(4, Activation::Tanh).with_batch_norm(true), LayerSpec::new(2, Activation::Sigmoid)], 1).unwrap();
        let x = random_matrix(&mut rng::seeded(1), 5, 3, -1.0, 1.0);
        let (out, cache) = net.forward(&x).unwrap();
        let g = net.backward(&cache, &Matrix::zeros(out.rows(), out.cols())).unwrap();
        for t in g.flat() {
            assert!(t.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_linear_unit_squared_loss_gradient() {
        let mut net = Network::new(2, &[LayerSpec::new(1, Activation::Linear)], 0).unwrap();
        net.layers_mut()[0].weights = Matrix::from_vec(2, 1, vec![0.5, -1.0]).unwrap();
        let x = Matrix::from_vec(1, 2, vec![2.0, 3.0]).unwrap();
        let target = 1.0;
        let (out, cache) = net.forward(&x).unwrap();
        let pred = out[(0, 0)];
        let g = net.backward(&cache, &Matrix::filled(1, 1, 2.0 * (pred - target))).unwrap();
        assert_eq!(g.layers[0].weights.as_slice(), &[2.0 * (pred - target) * 2.0, 2.0 * (pred - target) * 3.0]);
        assert_eq!(g.layers[0].bias, vec![2.0 * (pred - target)]);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = Network::new(2, &[LayerSpec::new(2, Activation::Linear)], 0).unwrap();
        let (out, cache) = net.forward(&Matrix::filled(3, 2, 1.0)).unwrap();
        let g = net.backward(&cache, &out).unwrap();
        let mut adam = AdamState::for_network(&net, AdamConfig::default());
        adam_step(&mut net, &g, &mut adam).unwrap();
        assert!(matches!(net.backward(&cache, &out), Err(Error::StaleCache)));
    }

    #[test]
    fn batch_norm_train_outputs_are_standardized() {
        let mut net = Network::new(4, &[LayerSpec::new(6, Activation::Linear).with_batch_norm(true)], 5).unwrap();
        let x = random_matrix(&mut rng::seeded(9), 32, 4, -3.0, 3.0);
        let (_, cache) = net.forward(&x).unwrap();
        let xhat = cache.normalized(0).unwrap();
        for u in 0..6 {
            let col = xhat.column(u);
            let mean = col.iter().sum::<f64>() / 32.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6, "variance {var}");
        }
    }

    #[test]
    fn eval_mode_is_pure() {
        let mut net = Network::new(3, &[LayerSpec::new(4, Activation::Relu).with_batch_norm(true), LayerSpec::new(3, Activation::Sigmoid)], 2).unwrap();
        let x = random_matrix(&mut rng::seeded(2), 8, 3, 0.0, 1.0);
        net.forward(&x).unwrap();
        net.set_mode(Mode::Eval);
        let before = net.clone();
        let a = net.forward(&x).unwrap().0;
        let b = net.infer(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(net, before);
    }

    #[test]
    fn adam_zero_gradient_and_first_step() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(&[2], AdamConfig::default());
        st.step(&mut [&mut p[..]], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(st.steps(), 1);

        let mut p = vec![0.0, 0.0, 0.0];
        let mut st = AdamState::new(&[3], AdamConfig::default());
        st.step(&mut [&mut p[..]], &[&[0.5, -4.0, 1e-3]]).unwrap();
        // With bias correction the first update is lr · g / (|g| + ε).
        for (v, g) in p.iter().zip([0.5f64, -4.0, 1e-3]) {
            let expected = -1e-3 * g / (g.abs() + 1e-8);
            assert!((v - expected).abs() < 1e-12);
        }
        assert!(st.step(&mut [&mut p[..2]], &[&[0.0, 0.0]]).is_err());
    }

    #[test]
    fn adam_minimizes_scalar_quadratic() {
        let mut x = vec![0.0];
        let mut st = AdamState::new(&[1], AdamConfig { learning_rate: 0.1, ..AdamConfig::default() });
        for _ in 0..100 {
            let g = 2.0 * (x[0] - 3.0);
            st.step(&mut [&mut x[..]], &[&[g]]).unwrap();
        }
        assert!((x[0] - 3.0).abs() < 0.05, "x = {}", x[0]);
    }

    #[test]
    fn mixed_loss_examples() {
        let spec = MixedLossSpec { numerical: vec![0], categorical: vec![], weights: None };
        let (l, g) = mixed_loss(&Matrix::filled(1, 1, 0.7), &Matrix::filled(1, 1, 0.4), &spec).unwrap();
        assert!((l - 0.3).abs() < 1e-12);
        assert!((g[(0, 0)] - 1.0).abs() < 1e-9);

        let spec = MixedLossSpec { numerical: vec![0], categorical: vec![1], weights: None };
        let t = Matrix::from_vec(2, 2, vec![0.3, 1.0, 0.8, 0.0]).unwrap();
        let (l, _) = mixed_loss(&t, &t, &spec).unwrap();
        assert!(l > 0.0 && l < 1e-6, "loss {l}");

        let bad = MixedLossSpec { numerical: vec![0], categorical: vec![0], weights: None };
        assert!(mixed_loss(&t, &t, &bad).is_err());
        let partial = MixedLossSpec { numerical: vec![0], categorical: vec![], weights: None };
        assert!(mixed_loss(&t, &t, &partial).is_err());

        let zero_w = spec.with_weights(Matrix::zeros(2, 2));
        let (l, g) = mixed_loss(&t, &Matrix::zeros(2, 2), &zero_w).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
    }

    /// Scalar objective `Σ c ⊙ f(x)` in train mode, evaluated on a clone so
    /// running statistics do not drift between probes.
    fn objective(net: &Network, x: &Matrix, c: &Matrix) -> f64 {
        let mut probe = net.clone();
        let out = probe.forward(x).unwrap().0;
        out.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum()
    }

    fn check_gradients(batch_norm: bool, mode: Mode, seed: u64) {
        let mut r = rng::seeded(seed);
        let specs = [
            LayerSpec::new(5, Activation::Tanh).with_batch_norm(batch_norm),
            LayerSpec::new(4, Activation::Sigmoid).with_batch_norm(batch_norm),
            LayerSpec::new(3, Activation::Linear),
        ];
        let mut net = Network::new(3, &specs, seed).unwrap();
        for l in net.layers_mut() {
            l.bias.iter_mut().for_each(|b| *b = r.random_range(-0.3..0.3));
            if let Some(bn) = &mut l.batch_norm {
                bn.gamma.iter_mut().for_each(|g| *g = r.random_range(0.5..1.5));
                bn.beta.iter_mut().for_each(|b| *b = r.random_range(-0.3..0.3));
                bn.running_var.iter_mut().for_each(|v| *v = r.random_range(0.5..2.0));
            }
        }
        net.set_mode(mode);
        let x = random_matrix(&mut r, 7, 3, -1.0, 1.0);
        let c = random_matrix(&mut r, 7, 3, -1.0, 1.0);
        let (_, cache) = net.clone().forward(&x).unwrap();
        let grads = net.backward(&cache, &c).unwrap();
        let h = 1e-5;

        let analytic: Vec<Vec<f64>> = grads.flat().iter().map(|t| t.to_vec()).collect();
        let n_tensors = analytic.len();
        for t in 0..n_tensors {
            for k in 0..analytic[t].len() {
                let mut plus = net.clone();
                plus.parameters_mut()[t][k] += h;
                let mut minus = net.clone();
                minus.parameters_mut()[t][k] -= h;
                let numeric = (objective(&plus, &x, &c) - objective(&minus, &x, &c)) / (2.0 * h);
                let e = rel_err(analytic[t][k], numeric);
                assert!(e < 1e-4, "tensor {t} entry {k}: {} vs {numeric}", analytic[t][k]);
            }
        }
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                let mut xp = x.clone();
                xp[(i, j)] += h;
                let mut xm = x.clone();
                xm[(i, j)] -= h;
                let numeric = (objective(&net, &xp, &c) - objective(&net, &xm, &c)) / (2.0 * h);
                assert!(rel_err(grads.input[(i, j)], numeric) < 1e-4);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            check_gradients(false, Mode::Train, seed);
            check_gradients(true, Mode::Train, seed);
            check_gradients(true, Mode::Eval, seed);
        }
    }

    #[test]
    fn mixed_loss_gradient_matches_finite_differences() {
        let mut r = rng::seeded(12);
        let pred = random_matrix(&mut r, 5, 3, 0.05, 0.95);
        let mut target = random_matrix(&mut r, 5, 3, 0.0, 1.0);
        for i in 0..5 {
            target[(i, 2)] = target[(i, 2)].round();
        }
        let w = Matrix::from_vec(5, 3, (0..15).map(|k| (k % 3 != 1 || k > 6) as u8 as f64).collect()).unwrap();
        let spec = MixedLossSpec { numerical: vec![0, 1], categorical: vec![2], weights: None }.with_weights(w);
        let (_, g) = mixed_loss(&pred, &target, &spec).unwrap();
        let h = 1e-6;
        for i in 0..5 {
            for j in 0..3 {
                let mut p = pred.clone();
                p[(i, j)] += h;
                let mut m = pred.clone();
                m[(i, j)] -= h;
                let numeric = (mixed_loss(&p, &target, &spec).unwrap().0 - mixed_loss(&m, &target, &spec).unwrap().0) / (2.0 * h);
                assert!(rel_err(g[(i, j)], numeric) < 1e-4, "({i},{j}) {} vs {numeric}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn save_and_load_reproduce_inference_bit_for_bit() {
        let mut net = Network::new(3, &[LayerSpec::new(5, Activation::Relu).with_batch_norm(true), LayerSpec::new(3, Activation::Sigmoid)], 4).unwrap();
        let x = random_matrix(&mut rng::seeded(4), 10, 3, 0.0, 1.0);
        net.forward(&x).unwrap();
        net.set_mode(Mode::Eval);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        net.save(&path).unwrap();
        let back = Network::load(&path).unwrap();
        assert_eq!(back.infer(&x).unwrap(), net.infer(&x).unwrap());
        assert_eq!(back.layers(), net.layers());
        std::fs::write(&path, "{\"format\":\"other\",\"version\":1,\"payload\":null}").unwrap();
        assert!(Network::load(&path).is_err());
    }
}
