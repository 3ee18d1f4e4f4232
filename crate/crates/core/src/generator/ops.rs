//! Generator-specific differentiable operations.

use crate::error::{Error, Result};
use crate::substrate::{layers, Graph, PadMode, Padding, Real, Tensor, Var};

pub const DEMOD_EPS: f64 = 1e-8;
const NORM_EPS: f64 = 1e-8;

/// Separable `[1,3,3,1]` binomial kernel, normalised to unit sum.
pub fn low_pass_kernel<T: Real>() -> Tensor<T> {
    let taps = [1.0, 3.0, 3.0, 1.0];
    Tensor::from_fn(&[1, 1, 4, 4], |i| T::of(taps[i / 4] * taps[i % 4] / 64.0))
}

/// Scale each row of `z [n, d]` to unit root-mean-square.
pub fn rms_normalize<T: Real>(g: &mut Graph<T>, z: Var) -> Result<Var> {
    let s = g.shape(z).to_vec();
    if s.len() != 2 {
        return Err(Error::InvalidArgument(format!("rms_normalize expects [n, d], got {s:?}")));
    }
    let sq = g.square(z)?;
    let ms = g.sum_to(sq, &[s[0], 1])?;
    let ms = g.scale(ms, T::one() / T::of(s[1] as f64));
    let ms = g.add_scalar(ms, T::of(NORM_EPS));
    let inv = g.powf(ms, T::of(-0.5));
    g.mul(z, inv)
}

/// Convolution whose weights are scaled per input channel by `styles [n, i]`
/// and, if `demodulate`, renormalised per output channel:
/// `w''[o,i,k] = s[i]·w[o,i,k] / sqrt(Σ_{i,k} (s[i]·w[o,i,k])² + ε)`.
///
/// Evaluated as `conv(x ⊙ s, w) ⊙ demod[n, o]`, which equals convolving with
/// the per-sample weight `w''`.
pub fn modulated_conv<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    w: Var,
    styles: Var,
    demodulate: bool,
    padding: Padding,
) -> Result<Var> {
    let (xs, ws, ss) = (g.shape(x).to_vec(), g.shape(w).to_vec(), g.shape(styles).to_vec());
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
        return Err(Error::shape("modulated_conv", &xs, &ws));
    }
    if ss != [xs[0], ws[1]] {
        return Err(Error::shape("modulated_conv styles", &ss, &[xs[0], ws[1]]));
    }
    let (n, o, i) = (xs[0], ws[0], ws[1]);
    let s4 = g.reshape(styles, &[n, i, 1, 1])?;
    let xm = g.mul(x, s4)?;
    let y = layers::conv2d(g, xm, w, 1, padding)?;
    if !demodulate {
        return Ok(y);
    }
    let w2 = g.square(w)?;
    let w2 = g.sum_to(w2, &[o, i, 1, 1])?;
    let w2 = g.reshape(w2, &[o, i])?;
    let s2 = g.square(styles)?;
    let norm = g.matmul(s2, w2, false, true)?;
    let norm = g.add_scalar(norm, T::of(DEMOD_EPS));
    let demod = g.powf(norm, T::of(-0.5));
    let demod = g.reshape(demod, &[n, o, 1, 1])?;
    g.mul(y, demod)
}

/// `f'_i = f_i + p · payload_{i mod P}` for a payload with `P` channels; a
/// single-channel noise payload is thus added to every channel.
pub fn merge_data<T: Real>(g: &mut Graph<T>, features: Var, payload: Var, strength: Var) -> Result<Var> {
    let (fs, ps) = (g.shape(features).to_vec(), g.shape(payload).to_vec());
    if fs.len() != 4 || ps.len() != 4 || fs[0] != ps[0] || fs[2..] != ps[2..] {
        return Err(Error::shape("merge_data", &fs, &ps));
    }
    if g.shape(strength).iter().product::<usize>() != 1 {
        return Err(Error::shape("merge_data strength", g.shape(strength), &[1]));
    }
    let routed = g.channel_cycle(payload, fs[1])?;
    let p = g.reshape(strength, &[1, 1, 1, 1])?;
    let scaled = g.mul(routed, p)?;
    g.add(features, scaled)
}

/// Depthwise 4×4 binomial blur with reflect padding (1 top/left, 2 bottom/right).
pub fn low_pass<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::InvalidArgument(format!("low_pass expects a feature map, got {s:?}")));
    }
    let flat = g.reshape(x, &[s[0] * s[1], 1, s[2], s[3]])?;
    let padded = layers::pad(g, flat, PadMode::Reflect, (1, 2, 1, 2))?;
    let k = g.leaf(low_pass_kernel());
    let y = g.conv2d_valid(padded, k, 1)?;
    g.reshape(y, &s)
}
