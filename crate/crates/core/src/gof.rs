//! Gabor orientation filter (GoF) convolution layer.
//!
//! The layer stores `M` learned filters of shape `D x W x W`. At compute time
//! each learned filter is modulated by the `U` Gabor kernels of the layer's
//! scale, giving `M * U` effective filters: every `W x W` slice of learned
//! filter `i` is multiplied element by element with the kernel of orientation
//! `u`. Output channel `i * U + u` is the response of filter `i` modulated by
//! orientation `u`, so outputs carry `U` orientation groups.
//!
//! Backpropagation computes the gradient of each modulated filter with the
//! usual correlation calculus and folds it back onto the learned filter by
//! summing, over orientations, its element-wise product with the Gabor kernel.
//! Gabor kernels are fixed and receive no gradient.

use std::io::{Read, Write};

use rand::Rng;

use crate::binio::*;
use crate::error::{GcnError, Result};
use crate::gabor::{build_bank, GaborBank, GaborParams};
use crate::optim::{Optimizer, ParamState};
use crate::tensor::{correlate2d, correlate2d_backward, Filter4, Tensor4};

pub const GOF_MAGIC: &[u8; 4] = b"GOF1";
pub const GOF_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GofLayer {
    learned: Filter4,
    bias: Vec<f64>,
    bank: GaborBank,
    scale: usize,
    in_orient_groups: usize,
    pad: usize,
    stride: usize,
    weight_state: ParamState,
    bias_state: ParamState,
    update_unit: f64,
}

/// Learned filters expanded over orientations, shape `(M, U, D, W, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulatedFilters {
    shape: [usize; 5],
    data: Vec<f64>,
}

impl ModulatedFilters {
    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// The `D x W x W` filter for learned filter `i` at orientation `u`.
    pub fn slice(&self, i: usize, u: usize) -> &[f64] {
        let [_, nu, d, w, _] = self.shape;
        let len = d * w * w;
        let start = (i * nu + u) * len;
        &self.data[start..start + len]
    }

    /// Flattens to `(M * U, D, W, W)`; filter `i * U + u` is orientation `u` of filter `i`.
    pub fn into_filter4(self) -> Filter4 {
        let [m, u, d, w, _] = self.shape;
        Filter4::from_vec([m * u, d, w, w], self.data).expect("modulated filter length")
    }
}

/// Gradients produced by [`GofLayer::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct GofGrads {
    pub input: Option<Tensor4>,
    pub learned: Filter4,
    pub bias: Vec<f64>,
}

/// Fan-based uniform initialization bound for a GoF layer.
pub fn init_bound(in_depth: usize, kernel: usize, orientations: usize) -> f64 {
    let area = (kernel * kernel) as f64;
    (6.0 / (in_depth as f64 * area + orientations as f64 * area)).sqrt()
}

/// Scale index for GCN layer `layer` (0-based) out of `num_layers`, for a bank
/// with `num_scales` scales. Rises monotonically from 1 to at most `num_scales`.
pub fn scale_for_layer(layer: usize, num_layers: usize, num_scales: usize) -> usize {
    (1 + layer * num_scales / num_layers.max(1)).min(num_scales)
}

/// Reciprocal RMS of the bank's kernels at scale `v`, taken over all
/// orientations and grid points.
pub fn modulation_gain(bank: &GaborBank, v: usize) -> f64 {
    let (mut sq, mut count) = (0.0, 0usize);
    for u in 0..bank.num_orientations() {
        for g in bank.kernel(u, v) {
            sq += g * g;
            count += 1;
        }
    }
    let rms = (sq / count as f64).sqrt();
    if rms > 0.0 {
        1.0 / rms
    } else {
        1.0
    }
}

impl GofLayer {
    /// A layer with `filters` learned filters over `in_channels` input channels
    /// (which carry `in_orient_groups` orientation groups), initialized
    /// uniformly in `[-b, b]` with `b = init_bound(in_channels, W, U)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        in_orient_groups: usize,
        filters: usize,
        bank: GaborBank,
        scale: usize,
        pad: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = bank.kernel_size();
        let bound = init_bound(in_channels, w, bank.num_orientations());
        let len = filters * in_channels * w * w;
        let data = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
        let learned = Filter4::from_vec([filters, in_channels, w, w], data)?;
        Self::from_parts(learned, bank, scale, in_orient_groups, pad, stride)
    }

    /// Wraps explicit learned filters (shape `(M, D, W, W)`); biases start at zero.
    pub fn from_parts(
        learned: Filter4,
        bank: GaborBank,
        scale: usize,
        in_orient_groups: usize,
        pad: usize,
        stride: usize,
    ) -> Result<Self> {
        let [m, d, kh, kw] = learned.shape();
        if kh != bank.kernel_size() || kw != bank.kernel_size() {
            return Err(GcnError::Config(format!(
                "learned filters are {kh}x{kw} but the Gabor bank is {0}x{0}",
                bank.kernel_size()
            )));
        }
        if !(1..=bank.num_scales()).contains(&scale) {
            return Err(GcnError::Config(format!(
                "scale {scale} outside 1..={}",
                bank.num_scales()
            )));
        }
        if in_orient_groups == 0 || d % in_orient_groups != 0 {
            return Err(GcnError::Config(format!(
                "input depth {d} is not a multiple of {in_orient_groups} orientation groups"
            )));
        }
        if stride == 0 {
            return Err(GcnError::Config("stride must be positive".into()));
        }
        let bias = vec![0.0; m * bank.num_orientations()];
        Ok(GofLayer {
            learned,
            bias,
            bank,
            scale,
            in_orient_groups,
            pad,
            stride,
            weight_state: ParamState::default(),
            bias_state: ParamState::default(),
            update_unit: 1.0,
        })
    }

    pub fn learned(&self) -> &Filter4 {
        &self.learned
    }

    pub fn learned_mut(&mut self) -> &mut Filter4 {
        &mut self.learned
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn bank(&self) -> &GaborBank {
        &self.bank
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn num_filters(&self) -> usize {
        self.learned.shape()[0]
    }

    pub fn in_depth(&self) -> usize {
        self.learned.shape()[1]
    }

    pub fn num_orientations(&self) -> usize {
        self.bank.num_orientations()
    }

    pub fn in_orient_groups(&self) -> usize {
        self.in_orient_groups
    }

    pub fn out_channels(&self) -> usize {
        self.num_filters() * self.num_orientations()
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Stored filter weights: `M * D * W * W`.
    pub fn persisted_weights(&self) -> usize {
        self.learned.len()
    }

    /// Filter weights used at compute time: `M * U * D * W * W`.
    pub fn effective_weights(&self) -> usize {
        self.learned.len() * self.num_orientations()
    }

    /// Expands learned filters into their orientation-modulated copies.
    pub fn modulate(&self) -> Result<ModulatedFilters> {
        let [m, d, w, _] = self.learned.shape();
        if w != self.bank.kernel_size() {
            return Err(GcnError::Config(format!(
                "learned filter size {w} does not match bank kernel size {}",
                self.bank.kernel_size()
            )));
        }
        let nu = self.num_orientations();
        let ww = w * w;
        let mut data = Vec::with_capacity(m * nu * d * ww);
        for i in 0..m {
            for u in 0..nu {
                let g = self.bank.kernel(u, self.scale);
                for ch in 0..d {
                    let c = &self.learned.data()[(i * d + ch) * ww..(i * d + ch + 1) * ww];
                    data.extend(c.iter().zip(g).map(|(a, b)| a * b));
                }
            }
        }
        Ok(ModulatedFilters {
            shape: [m, nu, d, w, w],
            data,
        })
    }

    fn check_input(&self, input: &Tensor4) -> Result<()> {
        if input.channels() != self.in_depth() {
            return Err(GcnError::Shape(format!(
                "GoF layer expects {} input channels, got shape {:?}",
                self.in_depth(),
                input.shape()
            )));
        }
        let groups = input.orient_groups().unwrap_or(1);
        if groups != self.in_orient_groups {
            return Err(GcnError::Shape(format!(
                "GoF layer expects {} input orientation groups, input carries {groups}",
                self.in_orient_groups
            )));
        }
        Ok(())
    }

    /// GCN convolution. Output has `M * U` channels with `U` orientation groups.
    pub fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        self.check_input(input)?;
        let filters = self.modulate()?.into_filter4();
        let mut out = correlate2d(input, &filters, self.pad, self.stride)?;
        let area = out.height() * out.width();
        let channels = out.channels();
        for (idx, plane) in out.data_mut().chunks_mut(area).enumerate() {
            let b = self.bias[idx % channels];
            plane.iter_mut().for_each(|v| *v += b);
        }
        out.with_orient_groups(Some(self.num_orientations()))
    }

    /// Gradients with respect to the input, the learned filters and the biases.
    pub fn backward(&self, input: &Tensor4, grad_out: &Tensor4) -> Result<GofGrads> {
        self.backward_impl(input, grad_out, true)
    }

    /// As [`GofLayer::backward`], optionally skipping the input gradient.
    pub fn backward_impl(&self, input: &Tensor4, grad_out: &Tensor4, want_input_grad: bool) -> Result<GofGrads> {
        self.check_input(input)?;
        let modulated = self.modulate()?.into_filter4();
        let (grad_input, grad_modulated) =
            correlate2d_backward(input, &modulated, grad_out, self.pad, self.stride, want_input_grad)?;
        let learned = self.fold_modulated_grad(&grad_modulated);

        let channels = grad_out.channels();
        let area = grad_out.height() * grad_out.width();
        let mut bias = vec![0.0; channels];
        for (idx, plane) in grad_out.data().chunks(area).enumerate() {
            bias[idx % channels] += plane.iter().sum::<f64>();
        }
        let input = match grad_input {
            Some(g) => Some(g.with_orient_groups(input.orient_groups())?),
            None => None,
        };
        Ok(GofGrads { input, learned, bias })
    }

    /// `dL/dC[i] = sum_u dL/dC[i, u] * G(u, v)`, element by element.
    fn fold_modulated_grad(&self, grad_modulated: &Filter4) -> Filter4 {
        let [m, d, w, _] = self.learned.shape();
        let nu = self.num_orientations();
        let ww = w * w;
        let mut out = Filter4::zeros(self.learned.shape());
        let gm = grad_modulated.data();
        let dst = out.data_mut();
        for i in 0..m {
            for u in 0..nu {
                let g = self.bank.kernel(u, self.scale);
                for ch in 0..d {
                    let src = &gm[((i * nu + u) * d + ch) * ww..][..ww];
                    let acc = &mut dst[(i * d + ch) * ww..][..ww];
                    for ((a, s), k) in acc.iter_mut().zip(src).zip(g) {
                        *a += s * k;
                    }
                }
            }
        }
        out
    }

    /// Unit in which the optimizer measures the learned filters (1 by default).
    /// Training state only; not part of the serialized record.
    pub fn update_unit(&self) -> f64 {
        self.update_unit
    }

    pub fn set_update_unit(&mut self, unit: f64) -> Result<()> {
        if !(unit > 0.0 && unit.is_finite()) {
            return Err(GcnError::Config(format!("update unit {unit} must be positive")));
        }
        self.update_unit = unit;
        Ok(())
    }

    /// Updates learned filters and biases. Weight decay applies to filters only.
    pub fn apply_update(
        &mut self,
        grad_learned: &Filter4,
        grad_bias: &[f64],
        optimizer: &Optimizer,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if grad_learned.shape() != self.learned.shape() {
            return Err(GcnError::Shape(format!(
                "learned gradient shape {:?} does not match filters {:?}",
                grad_learned.shape(),
                self.learned.shape()
            )));
        }
        optimizer.step_in_units(
            self.learned.data_mut(),
            grad_learned.data(),
            &mut self.weight_state,
            lr,
            weight_decay,
            self.update_unit,
        )?;
        optimizer.step(&mut self.bias, grad_bias, &mut self.bias_state, lr, 0.0)
    }

    /// Serializes as a little-endian `GOF1` record. The bank is not stored.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let p = self.bank.params();
        w.write_all(GOF_MAGIC)
            .map_err(|e| GcnError::Format(format!("write failed: {e}")))?;
        put_u32(w, GOF_VERSION)?;
        put_usize(w, p.num_orientations)?;
        put_usize(w, p.num_scales)?;
        put_usize(w, p.kernel_size)?;
        put_f64(w, p.sigma)?;
        put_usize(w, self.scale)?;
        put_usize(w, self.in_orient_groups)?;
        put_usize(w, self.num_filters())?;
        put_usize(w, self.in_depth())?;
        put_usize(w, self.pad)?;
        put_usize(w, self.stride)?;
        put_f64s(w, self.learned.data())?;
        put_f64s(w, &self.bias)
    }

    /// Reads a `GOF1` record, regenerating the Gabor bank from its parameters.
    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        expect_magic(r, GOF_MAGIC)?;
        let version = get_u32(r)?;
        if version != GOF_VERSION {
            return Err(GcnError::Format(format!("unsupported GOF1 version {version}")));
        }
        let params = GaborParams {
            num_orientations: get_usize(r)?,
            num_scales: get_usize(r)?,
            kernel_size: get_usize(r)?,
            sigma: get_f64(r)?,
        };
        let scale = get_usize(r)?;
        let in_orient_groups = get_usize(r)?;
        let m = get_usize(r)?;
        let d = get_usize(r)?;
        let pad = get_usize(r)?;
        let stride = get_usize(r)?;
        let w = params.kernel_size;
        let learned = Filter4::from_vec([m, d, w, w], get_f64s(r, m * d * w * w)?)?;
        let bias = get_f64s(r, m * params.num_orientations)?;
        let bank = build_bank(params)?;
        let mut layer = Self::from_parts(learned, bank, scale, in_orient_groups, pad, stride)?;
        layer.bias = bias;
        Ok(layer)
    }
}
