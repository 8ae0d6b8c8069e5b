//! Reference implementations used to check the production paths.
//!
//! Nothing here calls into [`crate::gabor`], the im2col correlation, or the
//! optimizer code. Each oracle is a direct, slow transcription of the
//! underlying definition:
//!
//! * [`oracle_gabor`] evaluates the complex Gabor wavelet with complex arithmetic.
//! * [`oracle_correlate`] is a nested-loop cross-correlation.
//! * [`fd_gradient`] is a central finite-difference gradient.
//! * [`adadelta_scalar_step`] is a per-scalar Adadelta recurrence.
//!
//! Review checklist for changes to this file: no `use` of `crate::gabor`,
//! `crate::tensor::correlate2d*`, `crate::optim`, or `crate::gof`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::tensor::{Filter4, Tensor4};

pub const FD_STEP: f64 = 1e-5;

/// Relative error `|a - b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "compared arrays differ in length");
    a.iter().zip(b).map(|(&x, &y)| relative_error(x, y)).fold(0.0, f64::max)
}

/// Full complex Gabor wavelet at grid point `(x, y)` for orientation `u`
/// (0-based, of `num_orientations`) and scale `v` (1-based).
pub fn oracle_gabor_complex(num_orientations: usize, sigma: f64, u: usize, v: usize, x: f64, y: f64) -> Complex64 {
    let k_v = (PI / 2.0) / 2f64.sqrt().powf(v as f64 - 1.0);
    let k_u = u as f64 * PI / num_orientations as f64;
    let k = Complex64::from_polar(k_v, k_u);
    let z = Complex64::new(x, y);
    let k_norm2 = k.norm_sqr();
    let z_norm2 = z.norm_sqr();
    let s2 = sigma * sigma;
    // the inner product of k and z viewed as plane vectors
    let kz = (k.conj() * z).re;
    let carrier = (Complex64::i() * kz).exp() - Complex64::new((-s2 / 2.0).exp(), 0.0);
    Complex64::new(k_norm2 / s2 * (-k_norm2 * z_norm2 / (2.0 * s2)).exp(), 0.0) * carrier
}

/// Real part of [`oracle_gabor_complex`].
pub fn oracle_gabor(num_orientations: usize, sigma: f64, u: usize, v: usize, x: i64, y: i64) -> f64 {
    oracle_gabor_complex(num_orientations, sigma, u, v, x as f64, y as f64).re
}

/// Nested-loop zero-padded cross-correlation.
pub fn oracle_correlate(input: &Tensor4, filters: &Filter4, pad: usize, stride: usize) -> Tensor4 {
    let [n, c, h, w] = input.shape();
    let [m, d, kh, kw] = filters.shape();
    assert_eq!(c, d, "oracle_correlate: channel mismatch");
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor4::zeros([n, m, oh, ow]);
    for b in 0..n {
        for f in 0..m {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as i64 - pad as i64;
                                let ix = (ox * stride + kx) as i64 - pad as i64;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += input.get(b, ch, iy as usize, ix as usize) * filters.get(f, ch, ky, kx);
                                }
                            }
                        }
                    }
                    out.set(b, f, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Central differences `(L(p + h e_i) - L(p - h e_i)) / 2h` for every coordinate.
pub fn fd_gradient<F>(mut loss: F, params: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let plus = loss(&p);
            p[i] = orig - step;
            let minus = loss(&p);
            p[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Accumulator pair carried by one scalar parameter under Adadelta.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScalarAdadelta {
    pub sq_grad: f64,
    pub sq_delta: f64,
}

/// One Adadelta step on a single scalar, with L2 weight decay folded into the
/// gradient and `lr` scaling the final step. Returns the new parameter value.
pub fn adadelta_scalar_step(
    param: f64,
    grad: f64,
    state: &mut ScalarAdadelta,
    rho: f64,
    eps: f64,
    lr: f64,
    weight_decay: f64,
) -> f64 {
    let g = grad + weight_decay * param;
    state.sq_grad = rho * state.sq_grad + (1.0 - rho) * g * g;
    let rms_delta = (state.sq_delta + eps).sqrt();
    let rms_grad = (state.sq_grad + eps).sqrt();
    let delta = rms_delta / rms_grad * g;
    state.sq_delta = rho * state.sq_delta + (1.0 - rho) * delta * delta;
    param - lr * delta
}
