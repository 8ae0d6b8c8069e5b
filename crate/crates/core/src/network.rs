//! Layer stacks, softmax cross-entropy, and backpropagation through them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GcnError, Result};
use crate::gof::GofLayer;
use crate::optim::{Optimizer, ParamState};
use crate::tensor::{self, correlate2d, correlate2d_backward, Filter4, Tensor4};

/// Plain (unmodulated) convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    weights: Filter4,
    bias: Vec<f64>,
    pad: usize,
    stride: usize,
    weight_state: ParamState,
    bias_state: ParamState,
}

impl ConvLayer {
    /// Glorot-uniform initialized `out x in x k x k` filters.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        pad: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let area = (kernel * kernel) as f64;
        let bound = (6.0 / ((in_channels + out_channels) as f64 * area)).sqrt();
        let len = out_channels * in_channels * kernel * kernel;
        let data = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
        Self::from_parts(
            Filter4::from_vec([out_channels, in_channels, kernel, kernel], data)?,
            pad,
            stride,
        )
    }

    pub fn from_parts(weights: Filter4, pad: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(GcnError::Config("stride must be positive".into()));
        }
        Ok(ConvLayer {
            bias: vec![0.0; weights.shape()[0]],
            weights,
            pad,
            stride,
            weight_state: ParamState::default(),
            bias_state: ParamState::default(),
        })
    }

    pub fn weights(&self) -> &Filter4 {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        let mut out = correlate2d(input, &self.weights, self.pad, self.stride)?;
        add_channel_bias(&mut out, &self.bias);
        Ok(out)
    }
}

/// Fully connected layer over the flattened `c * h * w` features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    weight_state: ParamState,
    bias_state: ParamState,
}

impl LinearLayer {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        LinearLayer {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
            weight_state: ParamState::default(),
            bias_state: ParamState::default(),
        }
    }

    pub fn from_parts(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(GcnError::Shape(format!(
                "linear {inputs}->{outputs} given {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(LinearLayer {
            inputs,
            outputs,
            weights,
            bias,
            weight_state: ParamState::default(),
            bias_state: ParamState::default(),
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// Row-major `outputs x inputs`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        let n = input.batch();
        if input.sample_len() != self.inputs {
            return Err(GcnError::Shape(format!(
                "linear layer expects {} features, input {:?} has {}",
                self.inputs,
                input.shape(),
                input.sample_len()
            )));
        }
        let mut out = vec![0.0; n * self.outputs];
        tensor::gemm_nt(n, self.inputs, self.outputs, input.data(), &self.weights, &mut out);
        for row in out.chunks_mut(self.outputs) {
            row.iter_mut().zip(&self.bias).for_each(|(o, b)| *o += b);
        }
        Tensor4::from_vec([n, self.outputs, 1, 1], out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Gof(GofLayer),
    Conv(ConvLayer),
    Relu,
    /// 2x2 max pooling with stride 2; odd trailing rows and columns are dropped.
    MaxPool2,
    /// Inverted dropout with drop probability `p`; identity outside training.
    Dropout(f64),
    Linear(LinearLayer),
}

/// Per-sample feature shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub orient_groups: Option<usize>,
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Gof(_) => "gof",
            Layer::Conv(_) => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool2 => "maxpool2",
            Layer::Dropout(_) => "dropout",
            Layer::Linear(_) => "linear",
        }
    }

    fn output_shape(&self, s: FeatureShape) -> Result<FeatureShape> {
        Ok(match self {
            Layer::Gof(g) => {
                if s.channels != g.in_depth() || s.orient_groups.unwrap_or(1) != g.in_orient_groups() {
                    return Err(GcnError::Shape(format!(
                        "GoF layer expects {} channels in {} orientation groups, got {s:?}",
                        g.in_depth(),
                        g.in_orient_groups()
                    )));
                }
                let w = g.bank().kernel_size();
                FeatureShape {
                    channels: g.out_channels(),
                    height: tensor::output_extent(s.height, w, g.pad(), g.stride())?,
                    width: tensor::output_extent(s.width, w, g.pad(), g.stride())?,
                    orient_groups: Some(g.num_orientations()),
                }
            }
            Layer::Conv(c) => {
                let [m, d, kh, kw] = c.weights.shape();
                if s.channels != d {
                    return Err(GcnError::Shape(format!("conv layer expects {d} channels, got {s:?}")));
                }
                FeatureShape {
                    channels: m,
                    height: tensor::output_extent(s.height, kh, c.pad, c.stride)?,
                    width: tensor::output_extent(s.width, kw, c.pad, c.stride)?,
                    orient_groups: None,
                }
            }
            Layer::Relu | Layer::Dropout(_) => s,
            Layer::MaxPool2 => {
                if s.height < 2 || s.width < 2 {
                    return Err(GcnError::Shape(format!("cannot 2x2-pool {s:?}")));
                }
                FeatureShape {
                    height: s.height / 2,
                    width: s.width / 2,
                    ..s
                }
            }
            Layer::Linear(l) => {
                if s.channels * s.height * s.width != l.inputs {
                    return Err(GcnError::Shape(format!(
                        "linear layer expects {} features, got {s:?}",
                        l.inputs
                    )));
                }
                FeatureShape {
                    channels: l.outputs,
                    height: 1,
                    width: 1,
                    orient_groups: None,
                }
            }
        })
    }
}

fn add_channel_bias(out: &mut Tensor4, bias: &[f64]) {
    let area = out.height() * out.width();
    let channels = out.channels();
    for (idx, plane) in out.data_mut().chunks_mut(area).enumerate() {
        let b = bias[idx % channels];
        plane.iter_mut().for_each(|v| *v += b);
    }
}

fn channel_sums(grad: &Tensor4) -> Vec<f64> {
    let area = grad.height() * grad.width();
    let channels = grad.channels();
    let mut sums = vec![0.0; channels];
    for (idx, plane) in grad.data().chunks(area).enumerate() {
        sums[idx % channels] += plane.iter().sum::<f64>();
    }
    sums
}

fn relu(input: &Tensor4) -> Tensor4 {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Returns the pooled tensor and, per output element, the flat input index of its maximum.
fn max_pool2(input: &Tensor4) -> (Tensor4, Vec<usize>) {
    let [n, c, h, w] = input.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if data[i] > data[best] {
                        best = i;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    let out = Tensor4::from_vec([n, c, oh, ow], out)
        .and_then(|t| t.with_orient_groups(input.orient_groups()))
        .expect("pool shape");
    (out, argmax)
}

/// Values saved by the training forward pass for backpropagation.
#[derive(Debug, Clone)]
enum Cache {
    Input(Tensor4),
    Mask(Vec<f64>),
    Pool {
        argmax: Vec<usize>,
        input_shape: [usize; 4],
        groups: Option<usize>,
    },
    Identity,
}

/// Gradient of one layer's trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad {
    None,
    Params { weights: Vec<f64>, bias: Vec<f64> },
}

/// Mean softmax cross-entropy over the batch, its gradient with respect to
/// the logits, and the per-sample class probabilities.
pub fn softmax_cross_entropy(logits: &Tensor4, labels: &[usize]) -> Result<(f64, Tensor4, Vec<f64>)> {
    let n = logits.batch();
    let k = logits.sample_len();
    if labels.len() != n {
        return Err(GcnError::Shape(format!("{} labels for {n} samples", labels.len())));
    }
    if n == 0 {
        return Err(GcnError::EmptyDataset);
    }
    let mut probs = Vec::with_capacity(n * k);
    let mut loss = 0.0;
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        if label >= k {
            return Err(GcnError::Shape(format!("label {label} outside 0..{k}")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - row[label];
        probs.extend(row.iter().map(|v| (v - log_sum).exp()));
    }
    let mut grad = probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        grad[i * k + label] -= 1.0;
    }
    grad.iter_mut().for_each(|g| *g /= n as f64);
    Ok((loss / n as f64, Tensor4::from_vec(logits.shape(), grad)?, probs))
}

/// Persisted and effective parameter counts of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerParams {
    pub index: usize,
    pub kind: &'static str,
    /// Stored filter or weight values.
    pub persisted: usize,
    /// Filter or weight values used at compute time.
    pub effective: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub layers: Vec<LayerParams>,
    pub conv_persisted: usize,
    pub conv_effective: usize,
    pub fc_weights: usize,
    pub biases: usize,
    pub total_persisted: usize,
}

/// An ordered layer stack ending in class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input: FeatureShape,
    num_classes: usize,
}

impl Network {
    /// Validates that consecutive layer shapes are compatible and that the
    /// stack ends in `num_classes` logits.
    pub fn new(layers: Vec<Layer>, input: FeatureShape, num_classes: usize) -> Result<Self> {
        let mut s = input;
        for (i, layer) in layers.iter().enumerate() {
            if let Layer::Dropout(p) = layer {
                if !(0.0..1.0).contains(p) {
                    return Err(GcnError::Config(format!("dropout probability {p} outside [0, 1)")));
                }
            }
            s = layer
                .output_shape(s)
                .map_err(|e| GcnError::Shape(format!("layer {i} ({}): {e}", layer.name())))?;
        }
        if s.channels * s.height * s.width != num_classes || s.height * s.width != 1 {
            return Err(GcnError::Shape(format!(
                "network ends in {s:?}, expected {num_classes} logits"
            )));
        }
        Ok(Network {
            layers,
            input,
            num_classes,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> FeatureShape {
        self.input
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Feature shape after every layer.
    pub fn shapes(&self) -> Vec<FeatureShape> {
        let mut s = self.input;
        self.layers
            .iter()
            .map(|l| {
                s = l.output_shape(s).expect("validated at construction");
                s
            })
            .collect()
    }

    fn check_batch(&self, batch: &Tensor4) -> Result<()> {
        let [_, c, h, w] = batch.shape();
        if [c, h, w] != [self.input.channels, self.input.height, self.input.width] {
            return Err(GcnError::Shape(format!(
                "batch {:?} does not match network input {:?}",
                batch.shape(),
                self.input
            )));
        }
        Ok(())
    }

    /// Evaluation-mode forward pass (dropout disabled).
    pub fn forward_pass(&self, batch: &Tensor4) -> Result<Tensor4> {
        self.check_batch(batch)?;
        let mut x = batch.clone().with_orient_groups(self.input.orient_groups)?;
        for layer in &self.layers {
            x = self.layer_eval(layer, x)?;
        }
        Ok(x)
    }

    /// Evaluation-mode output of every layer.
    pub fn activations(&self, batch: &Tensor4) -> Result<Vec<Tensor4>> {
        self.check_batch(batch)?;
        let mut x = batch.clone().with_orient_groups(self.input.orient_groups)?;
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            x = self.layer_eval(layer, x)?;
            outs.push(x.clone());
        }
        Ok(outs)
    }

    fn layer_eval(&self, layer: &Layer, x: Tensor4) -> Result<Tensor4> {
        Ok(match layer {
            Layer::Gof(g) => g.forward(&x)?,
            Layer::Conv(c) => c.forward(&x)?,
            Layer::Relu => relu(&x),
            Layer::MaxPool2 => max_pool2(&x).0,
            Layer::Dropout(_) => x,
            Layer::Linear(l) => l.forward(&x)?,
        })
    }

    /// Training forward pass. Dropout draws masks from `rng` when one is given
    /// and is the identity otherwise.
    fn forward_train<R: Rng>(&self, batch: &Tensor4, mut rng: Option<&mut R>) -> Result<(Tensor4, Vec<Cache>)> {
        self.check_batch(batch)?;
        let mut x = batch.clone().with_orient_groups(self.input.orient_groups)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = match layer {
                Layer::Gof(g) => (g.forward(&x)?, Cache::Input(x)),
                Layer::Conv(c) => (c.forward(&x)?, Cache::Input(x)),
                Layer::Linear(l) => (l.forward(&x)?, Cache::Input(x)),
                Layer::Relu => {
                    let mask = x.data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
                    (relu(&x), Cache::Mask(mask))
                }
                Layer::MaxPool2 => {
                    let (out, argmax) = max_pool2(&x);
                    let cache = Cache::Pool {
                        argmax,
                        input_shape: x.shape(),
                        groups: x.orient_groups(),
                    };
                    (out, cache)
                }
                Layer::Dropout(p) => match rng.as_deref_mut() {
                    Some(r) if *p > 0.0 => {
                        let keep = 1.0 - p;
                        let mask: Vec<f64> = (0..x.len())
                            .map(|_| if r.random::<f64>() < *p { 0.0 } else { 1.0 / keep })
                            .collect();
                        let mut out = x;
                        out.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                        (out, Cache::Mask(mask))
                    }
                    _ => (x, Cache::Identity),
                },
            };
            caches.push(cache);
            x = next;
        }
        Ok((x, caches))
    }

    fn backward(&self, caches: Vec<Cache>, grad_logits: Tensor4) -> Result<Vec<LayerGrad>> {
        let mut grads = vec![LayerGrad::None; self.layers.len()];
        let mut g = grad_logits;
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let want_input = i > 0;
            g = match (layer, cache) {
                (Layer::Gof(gof), Cache::Input(x)) => {
                    let r = gof.backward_impl(&x, &g, want_input)?;
                    grads[i] = LayerGrad::Params {
                        weights: r.learned.into_data(),
                        bias: r.bias,
                    };
                    r.input.unwrap_or_else(|| Tensor4::zeros([0, 0, 0, 0]))
                }
                (Layer::Conv(c), Cache::Input(x)) => {
                    let (gi, gw) = correlate2d_backward(&x, &c.weights, &g, c.pad, c.stride, want_input)?;
                    grads[i] = LayerGrad::Params {
                        weights: gw.into_data(),
                        bias: channel_sums(&g),
                    };
                    gi.unwrap_or_else(|| Tensor4::zeros([0, 0, 0, 0]))
                }
                (Layer::Linear(l), Cache::Input(x)) => {
                    let n = x.batch();
                    let mut gw = vec![0.0; l.outputs * l.inputs];
                    tensor::gemm_tn(l.outputs, n, l.inputs, g.data(), x.data(), &mut gw);
                    let mut gb = vec![0.0; l.outputs];
                    for row in g.data().chunks(l.outputs) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    let mut gx = vec![0.0; n * l.inputs];
                    if want_input {
                        tensor::gemm(n, l.outputs, l.inputs, g.data(), &l.weights, &mut gx);
                    }
                    grads[i] = LayerGrad::Params { weights: gw, bias: gb };
                    Tensor4::from_vec(x.shape(), gx)?.with_orient_groups(x.orient_groups())?
                }
                (Layer::Relu | Layer::Dropout(_), Cache::Mask(mask)) => {
                    let mut out = g;
                    out.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    out
                }
                (Layer::Dropout(_), Cache::Identity) => g,
                (
                    Layer::MaxPool2,
                    Cache::Pool {
                        argmax,
                        input_shape,
                        groups,
                    },
                ) => {
                    let mut out = Tensor4::zeros(input_shape);
                    let dst = out.data_mut();
                    for (&idx, &v) in argmax.iter().zip(g.data()) {
                        dst[idx] += v;
                    }
                    out.with_orient_groups(groups)?
                }
                _ => unreachable!("cache kind always matches its layer"),
            };
        }
        Ok(grads)
    }

    /// Mean cross-entropy of the batch and the gradient of every layer's
    /// parameters. Pass `None` for `dropout_rng` to disable dropout.
    pub fn loss_and_grad<R: Rng>(
        &self,
        batch: &Tensor4,
        labels: &[usize],
        dropout_rng: Option<&mut R>,
    ) -> Result<(f64, Vec<LayerGrad>)> {
        let (logits, caches) = self.forward_train(batch, dropout_rng)?;
        let (loss, grad, _) = softmax_cross_entropy(&logits, labels)?;
        Ok((loss, self.backward(caches, grad)?))
    }

    /// Applies one optimizer step. Weight decay applies to weights, never to biases.
    pub fn apply_grads(
        &mut self,
        grads: &[LayerGrad],
        optimizer: &Optimizer,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if grads.len() != self.layers.len() {
            return Err(GcnError::Shape(format!(
                "{} layer gradients for {} layers",
                grads.len(),
                self.layers.len()
            )));
        }
        for (layer, grad) in self.layers.iter_mut().zip(grads) {
            let LayerGrad::Params { weights, bias } = grad else {
                continue;
            };
            match layer {
                Layer::Gof(g) => {
                    let gw = Filter4::from_vec(g.learned().shape(), weights.clone())?;
                    g.apply_update(&gw, bias, optimizer, lr, weight_decay)?;
                }
                Layer::Conv(c) => {
                    optimizer.step(c.weights.data_mut(), weights, &mut c.weight_state, lr, weight_decay)?;
                    optimizer.step(&mut c.bias, bias, &mut c.bias_state, lr, 0.0)?;
                }
                Layer::Linear(l) => {
                    optimizer.step(&mut l.weights, weights, &mut l.weight_state, lr, weight_decay)?;
                    optimizer.step(&mut l.bias, bias, &mut l.bias_state, lr, 0.0)?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Predicted class per sample (first maximum wins).
    pub fn predict(&self, batch: &Tensor4) -> Result<Vec<usize>> {
        let logits = self.forward_pass(batch)?;
        Ok(logits
            .data()
            .chunks(self.num_classes)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                    )
                    .0
            })
            .collect())
    }

    /// All trainable values, layer by layer, weights before biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Gof(g) => {
                    out.extend_from_slice(g.learned().data());
                    out.extend_from_slice(g.bias());
                }
                Layer::Conv(c) => {
                    out.extend_from_slice(c.weights.data());
                    out.extend_from_slice(&c.bias);
                }
                Layer::Linear(l) => {
                    out.extend_from_slice(&l.weights);
                    out.extend_from_slice(&l.bias);
                }
                _ => {}
            }
        }
        out
    }

    /// Inverse of [`Network::params_flat`].
    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params_flat().len() {
            return Err(GcnError::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.params_flat().len()
            )));
        }
        let mut rest = values;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for layer in &mut self.layers {
            match layer {
                Layer::Gof(g) => {
                    take(g.learned_mut().data_mut());
                    take(g.bias_mut());
                }
                Layer::Conv(c) => {
                    take(c.weights.data_mut());
                    take(&mut c.bias);
                }
                Layer::Linear(l) => {
                    take(&mut l.weights);
                    take(&mut l.bias);
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Flattens layer gradients in [`Network::params_flat`] order.
    pub fn grads_flat(grads: &[LayerGrad]) -> Vec<f64> {
        let mut out = Vec::new();
        for g in grads {
            if let LayerGrad::Params { weights, bias } = g {
                out.extend_from_slice(weights);
                out.extend_from_slice(bias);
            }
        }
        out
    }

    pub fn param_report(&self) -> ParamReport {
        let mut layers = Vec::new();
        for (index, layer) in self.layers.iter().enumerate() {
            let (persisted, effective, bias) = match layer {
                Layer::Gof(g) => (g.persisted_weights(), g.effective_weights(), g.bias().len()),
                Layer::Conv(c) => (c.weights.len(), c.weights.len(), c.bias.len()),
                Layer::Linear(l) => (l.weights.len(), l.weights.len(), l.bias.len()),
                _ => continue,
            };
            layers.push(LayerParams {
                index,
                kind: layer.name(),
                persisted,
                effective,
                bias,
            });
        }
        let is_conv = |p: &&LayerParams| p.kind == "gof" || p.kind == "conv";
        let conv_persisted = layers.iter().filter(is_conv).map(|p| p.persisted).sum();
        let conv_effective = layers.iter().filter(is_conv).map(|p| p.effective).sum();
        let fc_weights = layers.iter().filter(|p| p.kind == "linear").map(|p| p.persisted).sum();
        let biases = layers.iter().map(|p| p.bias).sum();
        ParamReport {
            conv_persisted,
            conv_effective,
            fc_weights,
            biases,
            total_persisted: conv_persisted + fc_weights + biases,
            layers,
        }
    }
}
