//! Small dense-network engine: multi-input MLPs, reverse-mode gradients of
//! MSE, minibatch SGD/Adam training with early stopping, and a versioned
//! JSON model format.
//!
//! A network takes one or more named input blocks. Each block optionally
//! passes through its own dense layer; the block outputs are concatenated
//! and fed through the trunk and the output layer. Batches are row-major:
//! one sample per row.

use std::path::Path;
use std::time::Instant;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
            Activation::Linear => {}
        }
    }

    /// Multiplies `grad` by the activation derivative, expressed through the
    /// activation output `a`.
    fn backprop(self, a: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Relu => grad.zip_mut_with(a, |g, &v| {
                if v <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Sigmoid => grad.zip_mut_with(a, |g, &v| *g *= v * (1.0 - v)),
            Activation::Linear => {}
        }
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        Self { width, activation }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputBlock {
    pub name: String,
    pub width: usize,
    /// Dense layer applied to this block alone before concatenation.
    pub first_layer: Option<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub blocks: Vec<InputBlock>,
    pub trunk: Vec<LayerSpec>,
    pub output: LayerSpec,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidConfig(
                "network needs at least one input block".into(),
            ));
        }
        let zero_width = self
            .blocks
            .iter()
            .any(|b| b.width == 0 || b.first_layer.is_some_and(|l| l.width == 0))
            || self.trunk.iter().any(|l| l.width == 0)
            || self.output.width == 0;
        if zero_width {
            return Err(Error::InvalidConfig(
                "layer widths must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Concatenated width entering the trunk.
    pub fn concat_width(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.first_layer.map_or(b.width, |l| l.width))
            .sum()
    }

    /// `(name, fan_in, layer)` for every dense layer in parameter order:
    /// block layers, trunk, output.
    fn layer_plan(&self) -> Vec<(String, usize, LayerSpec)> {
        let mut plan = Vec::new();
        for b in &self.blocks {
            if let Some(l) = b.first_layer {
                plan.push((format!("block '{}'", b.name), b.width, l));
            }
        }
        let mut fan_in = self.concat_width();
        for (k, l) in self.trunk.iter().enumerate() {
            plan.push((format!("trunk[{k}]"), fan_in, *l));
            fan_in = l.width;
        }
        plan.push(("output".into(), fan_in, self.output));
        plan
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_plan()
            .iter()
            .map(|(_, i, l)| (i + 1) * l.width)
            .sum()
    }
}

/// `y = act(x W + b)` with `W` of shape `(fan_in, width)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    /// Inference product. Every row accumulates the weight rows in the same
    /// order starting from the bias, so a sample's output does not depend on
    /// the batch it is evaluated in (top-k comparisons rely on this).
    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        const CHUNK: usize = 32;
        let (rows, width) = (x.nrows(), self.bias.len());
        let bias = self.bias.as_slice().expect("standard layout");
        let weight = self.weight.as_slice().expect("standard layout");
        let mut out = vec![0.0; rows * width];
        for start in (0..rows).step_by(CHUNK) {
            let end = (start + CHUNK).min(rows);
            let block = &mut out[start * width..end * width];
            for r in block.chunks_exact_mut(width) {
                r.copy_from_slice(bias);
            }
            for (i, w) in weight.chunks_exact(width).enumerate() {
                for (b, r) in (start..end).zip(block.chunks_exact_mut(width)) {
                    let xi = x[[b, i]];
                    if xi != 0.0 {
                        for (zj, wj) in r.iter_mut().zip(w) {
                            *zj += xi * wj;
                        }
                    }
                }
            }
        }
        let mut z = Array2::from_shape_vec((rows, width), out).expect("shape");
        self.activation.apply(&mut z);
        z
    }

    /// Training product: a general matrix multiply.
    fn forward_train(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight) + &self.bias;
        self.activation.apply(&mut z);
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub spec: MlpSpec,
    pub layers: Vec<Dense>,
    pub init_seed: u64,
}

/// Gradient (or optimizer moment) with the same shapes as the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weight.raw_dim()))
                .collect(),
            biases: model
                .layers
                .iter()
                .map(|l| Array1::zeros(l.bias.raw_dim()))
                .collect(),
        }
    }
}

struct ForwardCache {
    /// Input to each layer, in parameter order.
    inputs: Vec<Array2<f64>>,
    /// Activation output of each layer.
    outputs: Vec<Array2<f64>>,
}

impl MlpModel {
    /// He-style uniform initialization, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`,
    /// with zero biases.
    pub fn new(spec: MlpSpec, init_seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let layers = spec
            .layer_plan()
            .into_iter()
            .map(|(_, fan_in, l)| {
                let bound = (6.0 / fan_in as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((fan_in, l.width), || {
                    rng.random_range(-bound..bound)
                });
                Dense {
                    weight,
                    bias: Array1::zeros(l.width),
                    activation: l.activation,
                }
            })
            .collect();
        Ok(Self {
            spec,
            layers,
            init_seed,
        })
    }

    /// All parameters zero.
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        let mut m = Self::new(spec, 0)?;
        for l in &mut m.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        Ok(m)
    }

    /// Checks layer shapes and activations against the spec and that every
    /// parameter is finite.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let plan = self.spec.layer_plan();
        if plan.len() != self.layers.len() {
            return Err(Error::ModelFormat(format!(
                "spec has {} dense layers, parameters have {}",
                plan.len(),
                self.layers.len()
            )));
        }
        for ((name, fan_in, l), d) in plan.iter().zip(&self.layers) {
            if d.weight.dim() != (*fan_in, l.width) || d.bias.len() != l.width {
                return Err(Error::ModelFormat(format!(
                    "layer {name}: expected weight {}x{}, found {}x{}",
                    fan_in,
                    l.width,
                    d.weight.nrows(),
                    d.weight.ncols()
                )));
            }
            if d.activation != l.activation {
                return Err(Error::ModelFormat(format!(
                    "layer {name}: activation mismatch"
                )));
            }
            if d.weight.iter().chain(d.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameters of layer {name}")));
            }
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        self.spec.output.width
    }

    fn check_inputs(&self, blocks: &[ArrayView2<f64>]) -> Result<usize> {
        if blocks.len() != self.spec.blocks.len() {
            return Err(Error::Shape {
                what: "number of input blocks".into(),
                expected: self.spec.blocks.len(),
                got: blocks.len(),
            });
        }
        let batch = blocks[0].nrows();
        for (b, x) in self.spec.blocks.iter().zip(blocks) {
            if x.ncols() != b.width {
                return Err(Error::Shape {
                    what: format!("input block '{}'", b.name),
                    expected: b.width,
                    got: x.ncols(),
                });
            }
            if x.nrows() != batch {
                return Err(Error::Shape {
                    what: format!("batch size of block '{}'", b.name),
                    expected: batch,
                    got: x.nrows(),
                });
            }
        }
        Ok(batch)
    }

    fn forward_cached(&self, blocks: &[ArrayView2<f64>]) -> Result<ForwardCache> {
        self.check_inputs(blocks)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut layer = 0;
        let mut parts: Vec<Array2<f64>> = Vec::with_capacity(blocks.len());
        for (b, x) in self.spec.blocks.iter().zip(blocks) {
            if b.first_layer.is_some() {
                let y = self.layers[layer].forward_train(x);
                inputs.push(x.to_owned());
                outputs.push(y.clone());
                parts.push(y);
                layer += 1;
            } else {
                parts.push(x.to_owned());
            }
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| p.view()).collect();
        let mut h = concatenate(Axis(1), &views).expect("blocks share batch size");
        for d in &self.layers[layer..] {
            let y = d.forward_train(&h.view());
            inputs.push(h);
            outputs.push(y.clone());
            h = y;
        }
        Ok(ForwardCache { inputs, outputs })
    }

    /// Batched forward pass; `blocks[k]` is `(batch, width_k)`.
    pub fn forward(&self, blocks: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
        self.check_inputs(blocks)?;
        let mut parts: Vec<Array2<f64>> = Vec::with_capacity(blocks.len());
        let mut layer = 0;
        for (b, x) in self.spec.blocks.iter().zip(blocks) {
            if b.first_layer.is_some() {
                parts.push(self.layers[layer].forward(x));
                layer += 1;
            } else {
                parts.push(x.to_owned());
            }
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| p.view()).collect();
        let mut h = concatenate(Axis(1), &views).expect("blocks share batch size");
        for d in &self.layers[layer..] {
            h = d.forward(&h.view());
        }
        Ok(h)
    }

    /// Forward pass for a single sample given one slice per block.
    pub fn forward_one(&self, blocks: &[&[f64]]) -> Result<Vec<f64>> {
        let views: Vec<ArrayView2<f64>> = blocks
            .iter()
            .map(|b| ArrayView2::from_shape((1, b.len()), b).expect("row view"))
            .collect();
        Ok(self.forward(&views)?.row(0).to_vec())
    }

    /// MSE on the batch and its gradient with respect to every parameter.
    pub fn backward(
        &self,
        blocks: &[ArrayView2<f64>],
        target: &ArrayView2<f64>,
    ) -> Result<(f64, Gradients)> {
        let cache = self.forward_cached(blocks)?;
        let pred = cache.outputs.last().expect("output layer");
        let loss = mse(&pred.view(), target)?;
        let count = (pred.len()).max(1) as f64;
        let mut delta = (pred - target) * (2.0 / count);

        let mut grads = Gradients::zeros_like(self);
        let n_block_layers = self
            .spec
            .blocks
            .iter()
            .filter(|b| b.first_layer.is_some())
            .count();
        for li in (n_block_layers..self.layers.len()).rev() {
            let d = &self.layers[li];
            d.activation.backprop(&cache.outputs[li], &mut delta);
            grads.weights[li] = cache.inputs[li].t().dot(&delta);
            grads.biases[li] = delta.sum_axis(Axis(0));
            delta = delta.dot(&d.weight.t());
        }

        // `delta` is now the gradient w.r.t. the concatenated trunk input.
        let mut offset = 0;
        let mut li = 0;
        for b in &self.spec.blocks {
            let w = b.first_layer.map_or(b.width, |l| l.width);
            if b.first_layer.is_some() {
                let mut d_block = delta.slice(s![.., offset..offset + w]).to_owned();
                let d = &self.layers[li];
                d.activation.backprop(&cache.outputs[li], &mut d_block);
                grads.weights[li] = cache.inputs[li].t().dot(&d_block);
                grads.biases[li] = d_block.sum_axis(Axis(0));
                li += 1;
            }
            offset += w;
        }
        Ok((loss, grads))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_model_file(path, "mlp", self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: MlpModel = read_model_file(path, "mlp")?;
        m.validate()?;
        Ok(m)
    }

    /// Loads a model and requires its spec to equal `expected`.
    pub fn load_expecting(path: &Path, expected: &MlpSpec) -> Result<Self> {
        let m = Self::load(path)?;
        m.check_spec(expected)?;
        Ok(m)
    }

    /// Names the first block or layer where the model's spec differs.
    pub fn check_spec(&self, expected: &MlpSpec) -> Result<()> {
        let got = &self.spec;
        if got.blocks.len() != expected.blocks.len() {
            return Err(Error::ModelFormat(format!(
                "expected {} input blocks, model has {}",
                expected.blocks.len(),
                got.blocks.len()
            )));
        }
        for (a, b) in got.blocks.iter().zip(&expected.blocks) {
            if a != b {
                return Err(Error::ModelFormat(format!(
                    "input block '{}' differs from expected '{}'",
                    a.name, b.name
                )));
            }
        }
        for (k, (a, b)) in got.trunk.iter().zip(&expected.trunk).enumerate() {
            if a != b {
                return Err(Error::ModelFormat(format!(
                    "layer trunk[{k}] differs from expected"
                )));
            }
        }
        if got.trunk.len() != expected.trunk.len() {
            return Err(Error::ModelFormat(format!(
                "expected {} trunk layers, model has {}",
                expected.trunk.len(),
                got.trunk.len()
            )));
        }
        if got.output != expected.output {
            return Err(Error::ModelFormat(
                "output layer differs from expected".into(),
            ));
        }
        Ok(())
    }
}

pub fn mse(predicted: &ArrayView2<f64>, target: &ArrayView2<f64>) -> Result<f64> {
    if predicted.dim() != target.dim() {
        return Err(Error::Shape {
            what: "mse operands".into(),
            expected: target.len(),
            got: predicted.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::Empty("mse over an empty batch"));
    }
    let sum: f64 = predicted
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t).powi(2))
        .sum();
    Ok(sum / predicted.len() as f64)
}

const FORMAT: &str = "dnnsched-model";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    format: &'a str,
    version: u32,
    kind: &'a str,
    body: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    format: String,
    version: u32,
    kind: String,
    body: T,
}

/// Writes `body` inside a versioned JSON envelope tagged with `kind`.
pub fn write_model_file<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<()> {
    let env = EnvelopeOut {
        format: FORMAT,
        version: FORMAT_VERSION,
        kind,
        body,
    };
    std::fs::write(path, serde_json::to_vec(&env)?)?;
    Ok(())
}

pub fn read_model_file<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let bytes = std::fs::read(path)?;
    let header: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| Error::ModelFormat(format!("{}: {e}", path.display())))?;
    let field = |k: &str| header.get(k).cloned().unwrap_or(serde_json::Value::Null);
    if field("format") != FORMAT {
        return Err(Error::ModelFormat(format!(
            "{} is not a {FORMAT} file",
            path.display()
        )));
    }
    if field("version") != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported version {} (expected {FORMAT_VERSION})",
            field("version")
        )));
    }
    if field("kind") != kind {
        return Err(Error::ModelFormat(format!(
            "expected a '{kind}' model, found {}",
            field("kind")
        )));
    }
    let env: EnvelopeIn<T> = serde_json::from_value(header)
        .map_err(|e| Error::ModelFormat(format!("{}: {e}", path.display())))?;
    debug_assert!(env.format == FORMAT && env.version == FORMAT_VERSION && env.kind == kind);
    Ok(env.body)
}

/// Row-aligned inputs (one matrix per block) and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Array2<f64>>,
    pub targets: Array2<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn views(&self) -> Vec<ArrayView2<'_, f64>> {
        self.inputs.iter().map(|a| a.view()).collect()
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            inputs: self
                .inputs
                .iter()
                .map(|a| a.select(Axis(0), rows))
                .collect(),
            targets: self.targets.select(Axis(0), rows),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub shuffle_seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            epochs: 50,
            shuffle_seed: 0,
            early_stop_patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the untrained checkpoint.
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub elapsed_s: f64,
    /// Caller-supplied validation metric (e.g. mean WSR), when a monitor is given.
    pub metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters the model holds after training.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn initial(&self) -> &EpochRecord {
        &self.epochs[0]
    }

    pub fn last(&self) -> &EpochRecord {
        self.epochs.last().expect("at least the initial checkpoint")
    }

    /// Epoch with the lowest validation MSE (first on ties).
    pub fn argmin_val_epoch(&self) -> usize {
        let mut best = &self.epochs[0];
        for r in &self.epochs[1..] {
            if r.val_mse < best.val_mse {
                best = r;
            }
        }
        best.epoch
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_mse", "val_mse", "elapsed_s", "metric"])?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.train_mse.to_string(),
                r.val_mse.to_string(),
                r.elapsed_s.to_string(),
                r.metric.map(|m| m.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct OptimizerState {
    m: Gradients,
    v: Gradients,
    t: i32,
}

fn apply_update(
    model: &mut MlpModel,
    grads: &Gradients,
    cfg: &TrainConfig,
    state: &mut OptimizerState,
) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (l, (gw, gb)) in model
                .layers
                .iter_mut()
                .zip(grads.weights.iter().zip(&grads.biases))
            {
                l.weight.scaled_add(-lr, gw);
                l.bias.scaled_add(-lr, gb);
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            state.t += 1;
            let c1 = 1.0 - beta1.powi(state.t);
            let c2 = 1.0 - beta2.powi(state.t);
            let step = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            };
            for li in 0..model.layers.len() {
                let l = &mut model.layers[li];
                ndarray::Zip::from(&mut l.weight)
                    .and(&grads.weights[li])
                    .and(&mut state.m.weights[li])
                    .and(&mut state.v.weights[li])
                    .for_each(|p, &g, m, v| step(p, g, m, v));
                ndarray::Zip::from(&mut l.bias)
                    .and(&grads.biases[li])
                    .and(&mut state.m.biases[li])
                    .and(&mut state.v.biases[li])
                    .for_each(|p, &g, m, v| step(p, g, m, v));
            }
        }
    }
}

/// MSE of the model over a whole dataset, evaluated in chunks.
pub fn dataset_mse(model: &MlpModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    const CHUNK: usize = 4096;
    let mut sum = 0.0;
    let n = data.len();
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let views: Vec<ArrayView2<f64>> = data
            .inputs
            .iter()
            .map(|a| a.slice(s![start..end, ..]))
            .collect();
        let pred = model.forward(&views)?;
        let t = data.targets.slice(s![start..end, ..]);
        sum += pred
            .iter()
            .zip(t.iter())
            .map(|(p, y)| (p - y).powi(2))
            .sum::<f64>();
        start = end;
    }
    Ok(sum / data.targets.len() as f64)
}

/// Minibatch training. Epoch 0 in the report is the untrained checkpoint.
/// The model ends up holding the parameters of the epoch with the lowest
/// validation MSE (training MSE when `validation` is empty). `monitor`, when
/// given, is evaluated at every checkpoint and recorded as `metric`.
pub fn train(
    model: &mut MlpModel,
    data: &Dataset,
    validation: &Dataset,
    cfg: &TrainConfig,
    mut monitor: Option<&mut dyn FnMut(&MlpModel) -> f64>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let started = Instant::now();
    let selection_mse = |m: &MlpModel, train_mse: f64| -> Result<f64> {
        if validation.is_empty() {
            Ok(train_mse)
        } else {
            dataset_mse(m, validation)
        }
    };

    let train0 = dataset_mse(model, data)?;
    let val0 = selection_mse(model, train0)?;
    let mut records = vec![EpochRecord {
        epoch: 0,
        train_mse: train0,
        val_mse: val0,
        elapsed_s: started.elapsed().as_secs_f64(),
        metric: monitor.as_mut().map(|f| f(model)),
    }];
    let mut best = (val0, 0usize, model.layers.clone());

    let mut state = OptimizerState {
        m: Gradients::zeros_like(model),
        v: Gradients::zeros_like(model),
        t: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (batch_no, rows) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.select(rows);
            let (loss, grads) = model.backward(&batch.views(), &batch.targets.view())?;
            if !loss.is_finite() {
                return Err(Error::NanLoss {
                    epoch,
                    batch: batch_no,
                });
            }
            apply_update(model, &grads, cfg, &mut state);
        }
        let train_mse = dataset_mse(model, data)?;
        let val_mse = selection_mse(model, train_mse)?;
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(Error::NanLoss {
                epoch,
                batch: usize::MAX,
            });
        }
        records.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            elapsed_s: started.elapsed().as_secs_f64(),
            metric: monitor.as_mut().map(|f| f(model)),
        });
        if val_mse < best.0 {
            best = (val_mse, epoch, model.layers.clone());
        } else if cfg.early_stop_patience > 0 && epoch - best.1 >= cfg.early_stop_patience {
            stopped_early = true;
            break;
        }
    }

    model.layers = best.2;
    Ok(TrainReport {
        epochs: records,
        best_epoch: best.1,
        stopped_early,
    })
}
