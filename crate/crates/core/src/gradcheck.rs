//! Finite-difference checks of GoF layer and whole-network gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GcnError, Result};
use crate::gabor::{build_bank, GaborParams};
use crate::gof::GofLayer;
use crate::network::{softmax_cross_entropy, FeatureShape, Layer, LinearLayer, Network};
use crate::tensor::Tensor4;
use crate::verify::{fd_gradient, max_relative_error, FD_STEP};

fn default_cases() -> usize {
    20
}

fn default_tolerance() -> f64 {
    1e-5
}

fn default_step() -> f64 {
    FD_STEP
}

fn default_orientations() -> Vec<usize> {
    vec![2, 4]
}

fn default_kernels() -> Vec<usize> {
    vec![3, 5]
}

fn default_max_size() -> usize {
    4
}

fn default_net_filters() -> usize {
    4
}

fn default_net_input() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    #[serde(default = "default_cases")]
    pub cases: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    /// Orientation counts drawn from per case.
    #[serde(default = "default_orientations")]
    pub orientations: Vec<usize>,
    #[serde(default = "default_kernels")]
    pub kernels: Vec<usize>,
    /// Upper bound for the learned filter count and depth of single-layer cases.
    #[serde(default = "default_max_size")]
    pub max_filters: usize,
    #[serde(default = "default_max_size")]
    pub max_depth: usize,
    /// GoFs per layer of the two-layer network.
    #[serde(default = "default_net_filters")]
    pub net_filters: usize,
    #[serde(default = "default_net_input")]
    pub net_input: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.orientations.is_empty() || self.kernels.is_empty() {
            return Err(GcnError::Config("gradcheck needs orientations and kernels".into()));
        }
        if self.max_filters == 0 || self.max_depth == 0 || self.net_filters == 0 {
            return Err(GcnError::Config("gradcheck sizes must be positive".into()));
        }
        for &w in &self.kernels {
            GaborParams::new(1, 1, w).validate()?;
            if w > self.net_input {
                return Err(GcnError::Config(format!(
                    "kernel {w} larger than the {0}x{0} network input",
                    self.net_input
                )));
            }
        }
        for &u in &self.orientations {
            GaborParams::new(u, 1, 3).validate()?;
        }
        if !(self.step > 0.0 && self.tolerance > 0.0) {
            return Err(GcnError::Config("step and tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseReport {
    pub case: usize,
    /// `layer` or `network`.
    pub kind: &'static str,
    pub orientations: usize,
    pub kernel: usize,
    pub filters: usize,
    pub depth: usize,
    pub params: usize,
    /// Coordinates differenced with a smaller step to stay clear of a kink.
    pub reduced_steps: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub cases: Vec<CaseReport>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Perturbation applied to analytic gradients, used to confirm that the
/// check can fail.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Corruption(pub f64);

fn random_tensor(shape: [usize; 4], rng: &mut impl Rng) -> Tensor4 {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor4::from_vec(shape, data).expect("shape matches data")
}

fn pick<T: Copy>(items: &[T], rng: &mut impl Rng) -> T {
    items[rng.random_range(0..items.len())]
}

/// Single GoF layer, loss `sum(output^2)`, checked for learned filters, biases and input.
fn layer_case(cfg: &GradcheckConfig, case: usize, corrupt: Corruption) -> Result<CaseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(case as u64));
    let u = pick(&cfg.orientations, &mut rng);
    let w = pick(&cfg.kernels, &mut rng);
    let m = rng.random_range(1..=cfg.max_filters);
    let d = rng.random_range(1..=cfg.max_depth);
    let pad = rng.random_range(0..=w / 2);
    let stride = rng.random_range(1..=2);
    let side = w + rng.random_range(1..=3);
    let bank = build_bank(GaborParams::new(u, 2, w))?;
    let scale = rng.random_range(1..=2);
    let mut layer = GofLayer::new(d, 1, m, bank, scale, pad, stride, &mut rng)?;
    layer
        .bias_mut()
        .iter_mut()
        .for_each(|b| *b = rng.random_range(-0.5..0.5));
    let input = random_tensor([2, d, side, side], &mut rng);

    let out = layer.forward(&input)?;
    let mut grad_out = out.clone();
    grad_out.data_mut().iter_mut().for_each(|g| *g *= 2.0);
    let grads = layer.backward(&input, &grad_out)?;

    let sum_sq = |t: &Tensor4| t.data().iter().map(|v| v * v).sum::<f64>();
    let learned0 = layer.learned().clone();
    let fd_learned = fd_gradient(
        |p| {
            let mut l = layer.clone();
            l.learned_mut().data_mut().copy_from_slice(p);
            sum_sq(&l.forward(&input).expect("forward"))
        },
        learned0.data(),
        cfg.step,
    );
    let bias0 = layer.bias().to_vec();
    let fd_bias = fd_gradient(
        |p| {
            let mut l = layer.clone();
            l.bias_mut().copy_from_slice(p);
            sum_sq(&l.forward(&input).expect("forward"))
        },
        &bias0,
        cfg.step,
    );
    let fd_input = fd_gradient(
        |p| {
            let x = Tensor4::from_vec(input.shape(), p.to_vec()).expect("shape");
            sum_sq(&layer.forward(&x).expect("forward"))
        },
        input.data(),
        cfg.step,
    );

    let shift = |v: &[f64]| v.iter().map(|g| g + corrupt.0).collect::<Vec<_>>();
    let err = max_relative_error(&shift(grads.learned.data()), &fd_learned)
        .max(max_relative_error(&shift(&grads.bias), &fd_bias))
        .max(max_relative_error(
            grads.input.as_ref().map(|t| t.data()).unwrap_or(&[]),
            &fd_input,
        ));
    Ok(CaseReport {
        case,
        kind: "layer",
        orientations: u,
        kernel: w,
        filters: m,
        depth: d,
        params: learned0.len() + bias0.len(),
        reduced_steps: 0,
        max_rel_error: err,
        passed: err <= cfg.tolerance,
    })
}

/// Two GoF layers with ReLU and pooling under a linear classifier and
/// softmax cross-entropy; every trainable value is checked.
pub fn micro_net(
    u: usize,
    w: usize,
    filters: usize,
    input: usize,
    scales: usize,
    rng: &mut impl Rng,
) -> Result<Network> {
    let pad = w / 2;
    let bank = build_bank(GaborParams::new(u, scales, w))?;
    let first = GofLayer::new(1, 1, filters, bank.clone(), 1, pad, 1, rng)?;
    let second = GofLayer::new(filters * u, u, filters, bank, scales, pad, 1, rng)?;
    let side = input / 2;
    let layers = vec![
        Layer::Gof(first),
        Layer::Relu,
        Layer::MaxPool2,
        Layer::Gof(second),
        Layer::Relu,
        Layer::Linear(LinearLayer::new(filters * u * side * side, 10, rng)),
    ];
    let shape = FeatureShape {
        channels: 1,
        height: input,
        width: input,
        orient_groups: None,
    };
    Network::new(layers, shape, 10)
}

/// Step reductions tried when a central difference straddles a kink.
const STEP_REDUCTIONS: usize = 4;

/// Which side of every ReLU kink each unit sits on and which element wins
/// every pooling window. Central differences are only valid while this
/// pattern stays fixed over the stencil.
pub fn kink_pattern(net: &Network, x: &Tensor4) -> Result<Vec<usize>> {
    let acts = net.activations(x)?;
    let mut pattern = Vec::new();
    for (i, layer) in net.layers().iter().enumerate().skip(1) {
        let input = &acts[i - 1];
        match layer {
            Layer::Relu => pattern.extend(input.data().iter().map(|&v| usize::from(v > 0.0))),
            Layer::MaxPool2 => {
                let [n, c, h, w] = input.shape();
                let data = input.data();
                for plane in 0..n * c {
                    for oy in 0..h / 2 {
                        for ox in 0..w / 2 {
                            let at = |dy: usize, dx: usize| plane * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                            let mut best = at(0, 0);
                            for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                if data[at(dy, dx)] > data[best] {
                                    best = at(dy, dx);
                                }
                            }
                            pattern.push(best);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    Ok(pattern)
}

/// Central differences of the network loss. A coordinate whose stencil
/// changes the kink pattern is retried with a step ten times smaller, up to
/// [`STEP_REDUCTIONS`] times. Returns the gradient and the number of
/// coordinates that needed a smaller step.
fn network_fd(net: &Network, x: &Tensor4, labels: &[usize], step: f64) -> Result<(Vec<f64>, usize)> {
    let base = net.params_flat();
    let reference = kink_pattern(net, x)?;
    let mut probe = net.clone();
    let mut eval = |p: &[f64]| -> Result<(f64, bool)> {
        probe.set_params_flat(p)?;
        let loss = softmax_cross_entropy(&probe.forward_pass(x)?, labels)?.0;
        Ok((loss, kink_pattern(&probe, x)? == reference))
    };
    let mut grad = Vec::with_capacity(base.len());
    let mut reduced = 0;
    let mut p = base.clone();
    for i in 0..base.len() {
        let mut h = step;
        let mut value = 0.0;
        for attempt in 0..=STEP_REDUCTIONS {
            p[i] = base[i] + h;
            let (up, same_up) = eval(&p)?;
            p[i] = base[i] - h;
            let (down, same_down) = eval(&p)?;
            value = (up - down) / (2.0 * h);
            if same_up && same_down {
                if attempt > 0 {
                    reduced += 1;
                }
                break;
            }
            h /= 10.0;
        }
        p[i] = base[i];
        grad.push(value);
    }
    Ok((grad, reduced))
}

fn network_case(cfg: &GradcheckConfig, case: usize, corrupt: Corruption) -> Result<CaseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1000 + case as u64));
    let u = pick(&cfg.orientations, &mut rng);
    let w = pick(&cfg.kernels, &mut rng);
    let mut net = micro_net(u, w, cfg.net_filters, cfg.net_input, 2, &mut rng)?;
    let flat0 = net.params_flat();
    // nonzero biases so no unit sits exactly at a ReLU kink
    let flat: Vec<f64> = flat0
        .iter()
        .map(|&v| if v == 0.0 { rng.random_range(-0.1..0.1) } else { v })
        .collect();
    net.set_params_flat(&flat)?;
    let x = random_tensor([2, 1, cfg.net_input, cfg.net_input], &mut rng);
    let labels = vec![rng.random_range(0..10), rng.random_range(0..10)];

    let (_, grads) = net.loss_and_grad::<ChaCha8Rng>(&x, &labels, None)?;
    let analytic: Vec<f64> = Network::grads_flat(&grads).iter().map(|g| g + corrupt.0).collect();
    let (fd, reduced_steps) = network_fd(&net, &x, &labels, cfg.step)?;
    let err = max_relative_error(&analytic, &fd);
    Ok(CaseReport {
        case,
        kind: "network",
        orientations: u,
        kernel: w,
        filters: cfg.net_filters,
        depth: 1,
        params: flat.len(),
        reduced_steps,
        max_rel_error: err,
        passed: err <= cfg.tolerance,
    })
}

/// Runs `cfg.cases` layer-level and `cfg.cases` network-level checks.
pub fn run_gradcheck(cfg: &GradcheckConfig, corrupt: Corruption) -> Result<GradcheckReport> {
    cfg.validate()?;
    let mut cases = Vec::with_capacity(2 * cfg.cases);
    for case in 0..cfg.cases {
        cases.push(layer_case(cfg, case, corrupt)?);
        cases.push(network_case(cfg, case, corrupt)?);
    }
    let max_rel_error = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        tolerance: cfg.tolerance,
        step: cfg.step,
        passed: cases.iter().all(|c| c.passed),
        max_rel_error,
        cases,
    })
}
