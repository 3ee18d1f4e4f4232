//! Differentiable layer primitives shared by every network.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::kernels::{PadMode, PlaneMap};
use super::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Keep the spatial size (stride 1) by padding `k-1` pixels, the extra
    /// one on the bottom/right for even kernels.
    Same(PadMode),
}

pub fn pad<T: Real>(g: &mut Graph<T>, x: Var, mode: PadMode, pads: (usize, usize, usize, usize)) -> Result<Var> {
    let s = g.shape(x);
    if s.len() != 4 {
        return Err(Error::InvalidArgument(format!("pad expects a feature map, got {s:?}")));
    }
    let map = PlaneMap::pad(mode, (s[2], s[3]), pads)?;
    g.plane_gather(x, Arc::new(map))
}

/// 2-D convolution of `x [n,c,h,w]` with `w [o,c,kh,kw]`.
pub fn conv2d<T: Real>(g: &mut Graph<T>, x: Var, w: Var, stride: usize, padding: Padding) -> Result<Var> {
    let (xs, ws) = (g.shape(x).to_vec(), g.shape(w).to_vec());
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
        return Err(Error::shape("conv2d", &xs, &ws));
    }
    let x = match padding {
        Padding::Valid => x,
        Padding::Same(mode) => {
            let (kh, kw) = (ws[2], ws[3]);
            if kh == 1 && kw == 1 {
                x
            } else {
                let (top, left) = ((kh - 1) / 2, (kw - 1) / 2);
                pad(g, x, mode, (top, kh - 1 - top, left, kw - 1 - left))?
            }
        }
    };
    g.conv2d_valid(x, w, stride)
}

/// Nearest-neighbour upsampling by two.
pub fn upsample2x<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let s = g.shape(x);
    if s.len() != 4 {
        return Err(Error::InvalidArgument(format!("upsample2x expects a feature map, got {s:?}")));
    }
    let map = PlaneMap::upsample2x((s[2], s[3]));
    g.plane_gather(x, Arc::new(map))
}

/// 2×2 mean pooling.
pub fn mean_pool2x<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "mean_pool2x expects a feature map with even extents, got {s:?}"
        )));
    }
    let map = PlaneMap::upsample2x((s[2] / 2, s[3] / 2));
    let summed = g.plane_scatter(x, Arc::new(map))?;
    Ok(g.scale(summed, T::of(0.25)))
}

/// Mean over the spatial axes: `[n,c,h,w]` → `[n,c]`.
pub fn global_avg_pool<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::InvalidArgument(format!("global_avg_pool expects a feature map, got {s:?}")));
    }
    let summed = g.sum_to(x, &[s[0], s[1], 1, 1])?;
    let mean = g.scale(summed, T::one() / T::of((s[2] * s[3]) as f64));
    g.reshape(mean, &[s[0], s[1]])
}

/// `x·w + b` with `x [n,in]`, `w [in,out]`, `b [out]`.
pub fn fully_connected<T: Real>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let (xs, ws, bs) = (g.shape(x).to_vec(), g.shape(w).to_vec(), g.shape(b).to_vec());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
        return Err(Error::shape("fully_connected", &xs, &ws));
    }
    let y = g.matmul(x, w, false, false)?;
    let b = g.reshape(b, &[1, ws[1]])?;
    g.add(y, b)
}

/// Per-channel bias `b [c]` added to a feature map.
pub fn add_channel_bias<T: Real>(g: &mut Graph<T>, x: Var, b: Var) -> Result<Var> {
    let c = g.shape(b)[0];
    let b = g.reshape(b, &[1, c, 1, 1])?;
    g.add(x, b)
}
