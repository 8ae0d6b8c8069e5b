//! Discrete Gabor filter banks.
//!
//! A bank holds the real part of the Gabor wavelet
//!
//! ```text
//! psi(z) = |k|^2 / s^2 * exp(-|k|^2 |z|^2 / (2 s^2)) * (exp(i k.z) - exp(-s^2 / 2))
//! ```
//!
//! sampled on a centered `W x W` integer grid for `U` orientations and `V`
//! scales. The wave vector of orientation `u` and scale `v` has length
//! `(pi/2) / sqrt(2)^(v-1)` and angle `u * pi / U`.
//!
//! Kernel matrices are row-major with rows indexed by `y` and columns by `x`,
//! both running from `-(W-1)/2` to `(W-1)/2`.

use std::f64::consts::{PI, SQRT_2};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GcnError, Result};

pub const DEFAULT_SIGMA: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    pub num_orientations: usize,
    pub num_scales: usize,
    pub kernel_size: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}

impl GaborParams {
    pub fn new(num_orientations: usize, num_scales: usize, kernel_size: usize) -> Self {
        GaborParams {
            num_orientations,
            num_scales,
            kernel_size,
            sigma: DEFAULT_SIGMA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_orientations == 0 {
            return Err(GcnError::Config("number of orientations must be >= 1".into()));
        }
        if self.num_scales == 0 {
            return Err(GcnError::Config("number of scales must be >= 1".into()));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(GcnError::Config(format!(
                "kernel size must be odd and positive, got {}",
                self.kernel_size
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(GcnError::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Radial frequency of scale `v` (1-based).
    pub fn frequency(&self, v: usize) -> f64 {
        (PI / 2.0) / SQRT_2.powi(v as i32 - 1)
    }

    /// Orientation angle of index `u` (0-based), in `[0, pi)`.
    pub fn angle(&self, u: usize) -> f64 {
        u as f64 * PI / self.num_orientations as f64
    }

    pub fn radius(&self) -> i64 {
        (self.kernel_size as i64 - 1) / 2
    }
}

/// `U x V` grid of real `W x W` Gabor kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct GaborBank {
    params: GaborParams,
    kernels: Vec<f64>,
}

/// Builds the bank described by `params`.
pub fn build_bank(params: GaborParams) -> Result<GaborBank> {
    params.validate()?;
    let w = params.kernel_size;
    let r = params.radius();
    let s2 = params.sigma * params.sigma;
    let dc = (-s2 / 2.0).exp();
    let mut kernels = Vec::with_capacity(params.num_orientations * params.num_scales * w * w);
    for u in 0..params.num_orientations {
        let theta = params.angle(u);
        for v in 1..=params.num_scales {
            let k = params.frequency(v);
            let (kx, ky) = (k * theta.cos(), k * theta.sin());
            let k2 = k * k;
            for y in -r..=r {
                for x in -r..=r {
                    let (xf, yf) = (x as f64, y as f64);
                    let envelope = (k2 / s2) * (-k2 * (xf * xf + yf * yf) / (2.0 * s2)).exp();
                    kernels.push(envelope * ((kx * xf + ky * yf).cos() - dc));
                }
            }
        }
    }
    Ok(GaborBank { params, kernels })
}

impl GaborBank {
    /// A bank whose every kernel is the constant `value`. With `value = 1`
    /// modulation becomes the identity and a Gabor layer degenerates into a
    /// plain convolution with its filters replicated over orientations.
    pub fn constant(params: GaborParams, value: f64) -> Result<GaborBank> {
        params.validate()?;
        let len = params.num_orientations * params.num_scales * params.kernel_size.pow(2);
        Ok(GaborBank {
            params,
            kernels: vec![value; len],
        })
    }

    pub fn params(&self) -> &GaborParams {
        &self.params
    }

    pub fn num_orientations(&self) -> usize {
        self.params.num_orientations
    }

    pub fn num_scales(&self) -> usize {
        self.params.num_scales
    }

    pub fn kernel_size(&self) -> usize {
        self.params.kernel_size
    }

    /// Row-major `W x W` kernel for orientation `u` (0-based) and scale `v` (1-based).
    pub fn kernel(&self, u: usize, v: usize) -> &[f64] {
        assert!(u < self.params.num_orientations, "orientation {u} out of range");
        assert!((1..=self.params.num_scales).contains(&v), "scale {v} out of range");
        let ww = self.params.kernel_size.pow(2);
        let idx = u * self.params.num_scales + (v - 1);
        &self.kernels[idx * ww..(idx + 1) * ww]
    }

    /// Value at grid offset `(x, y)` relative to the kernel center.
    pub fn value(&self, u: usize, v: usize, x: i64, y: i64) -> f64 {
        let r = self.params.radius();
        let w = self.params.kernel_size as i64;
        self.kernel(u, v)[((y + r) * w + (x + r)) as usize]
    }

    pub fn summary(&self) -> Vec<KernelSummary> {
        let mut out = Vec::new();
        for u in 0..self.num_orientations() {
            for v in 1..=self.num_scales() {
                let k = self.kernel(u, v);
                out.push(KernelSummary {
                    u,
                    v,
                    min: k.iter().copied().fold(f64::INFINITY, f64::min),
                    max: k.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    energy: k.iter().map(|a| a * a).sum(),
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelSummary {
    pub u: usize,
    pub v: usize,
    pub min: f64,
    pub max: f64,
    pub energy: f64,
}

pub const BANK_CSV: &str = "bank.csv";

pub fn kernel_image_name(u: usize, v: usize) -> String {
    format!("gabor_u{u}_v{v}.png")
}

/// Writes one min-max normalized 8-bit grayscale PNG per kernel plus a CSV
/// dump (`u,v,x,y,value`) of the raw values into `dir`, creating it if needed.
pub fn render_bank(bank: &GaborBank, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GcnError::io(dir, e))?;
    let w = bank.kernel_size();
    let r = bank.params().radius();
    for u in 0..bank.num_orientations() {
        for v in 1..=bank.num_scales() {
            let kernel = bank.kernel(u, v);
            let lo = kernel.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = kernel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            let pixels: Vec<u8> = kernel
                .iter()
                .map(|&a| {
                    if span > 0.0 {
                        ((a - lo) / span * 255.0).round() as u8
                    } else {
                        0
                    }
                })
                .collect();
            let path = dir.join(kernel_image_name(u, v));
            image::save_buffer(&path, &pixels, w as u32, w as u32, image::ExtendedColorType::L8)
                .map_err(|e| GcnError::io(&path, std::io::Error::other(e)))?;
        }
    }

    let path = dir.join(BANK_CSV);
    let mut writer = csv::Writer::from_path(&path).map_err(|e| GcnError::io(&path, std::io::Error::other(e)))?;
    let io_err = |e: csv::Error| GcnError::io(&path, std::io::Error::other(e));
    writer.write_record(["u", "v", "x", "y", "value"]).map_err(io_err)?;
    for u in 0..bank.num_orientations() {
        for v in 1..=bank.num_scales() {
            for y in -r..=r {
                for x in -r..=r {
                    writer
                        .write_record(&[
                            u.to_string(),
                            v.to_string(),
                            x.to_string(),
                            y.to_string(),
                            bank.value(u, v, x, y).to_string(),
                        ])
                        .map_err(io_err)?;
                }
            }
        }
    }
    writer.flush().map_err(|e| GcnError::io(&path, e))?;
    Ok(())
}
