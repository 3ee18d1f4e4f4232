//! Raw numeric kernels behind the graph ops. No gradient bookkeeping here.

use crate::error::{Error, Result};

use super::tensor::{numel, Real, Tensor};

/// Output extent of a valid (unpadded) convolution along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if input < kernel || stride == 0 {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn p(&self) -> usize {
        self.oh * self.ow
    }
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }
}

fn conv_geom(x_shape: &[usize], w_shape: &[usize], stride: usize) -> Result<ConvGeom> {
    let (n, c, h, w) = match *x_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::shape("conv2d", x_shape, w_shape)),
    };
    let (o, wc, kh, kw) = match *w_shape {
        [o, wc, kh, kw] => (o, wc, kh, kw),
        _ => return Err(Error::shape("conv2d", x_shape, w_shape)),
    };
    if wc != c {
        return Err(Error::shape("conv2d", x_shape, w_shape));
    }
    let oh = conv_out_extent(h, kh, stride).ok_or_else(|| Error::shape("conv2d", x_shape, w_shape))?;
    let ow = conv_out_extent(w, kw, stride).ok_or_else(|| Error::shape("conv2d", x_shape, w_shape))?;
    Ok(ConvGeom {
        n,
        c,
        h,
        w,
        o,
        kh,
        kw,
        oh,
        ow,
        stride,
    })
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let p = g.p();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * p;
                for oy in 0..g.oh {
                    let src = (oy * g.stride + ky) * g.w + kx;
                    let dst = row + oy * g.ow;
                    if g.stride == 1 {
                        cols[dst..dst + g.ow].copy_from_slice(&plane[src..src + g.ow]);
                    } else {
                        for ox in 0..g.ow {
                            cols[dst + ox] = plane[src + ox * g.stride];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &ConvGeom, cols: &[T], x: &mut [T]) {
    let p = g.p();
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * p;
                for oy in 0..g.oh {
                    let base = (oy * g.stride + ky) * g.w + kx;
                    let src = &cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    if g.stride == 1 {
                        for (d, &s) in plane[base..base + g.ow].iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    } else {
                        for (ox, &s) in src.iter().enumerate() {
                            plane[base + ox * g.stride] = plane[base + ox * g.stride] + s;
                        }
                    }
                }
            }
        }
    }
}

/// Valid cross-correlation: x `[n,c,h,w]`, w `[o,c,kh,kw]` → `[n,o,oh,ow]`.
pub fn conv2d_valid<T: Real>(x: &Tensor<T>, w: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let g = conv_geom(x.shape(), w.shape(), stride)?;
    let (k, p) = (g.k(), g.p());
    let mut out = Tensor::zeros(&[g.n, g.o, g.oh, g.ow]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    let in_item = g.c * g.h * g.w;
    for n in 0..g.n {
        let xn = &x.data()[n * in_item..(n + 1) * in_item];
        let b: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(&g, xn, &mut cols);
            &cols
        };
        let yn = &mut out.data_mut()[n * g.o * p..(n + 1) * g.o * p];
        T::gemm(g.o, k, p, w.data(), (k as isize, 1), b, (p as isize, 1), yn, false);
    }
    Ok(out)
}

/// Adjoint of [`conv2d_valid`] with respect to its input.
pub fn conv2d_input_grad<T: Real>(
    gy: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    in_hw: (usize, usize),
) -> Result<Tensor<T>> {
    let (n, o, oh, ow) = gy.dims4()?;
    let (wo, c, _, _) = w.dims4()?;
    if wo != o {
        return Err(Error::shape("conv2d_input_grad", gy.shape(), w.shape()));
    }
    let x_shape = [n, c, in_hw.0, in_hw.1];
    let g = conv_geom(&x_shape, w.shape(), stride)?;
    if g.oh != oh || g.ow != ow {
        return Err(Error::shape("conv2d_input_grad", gy.shape(), &x_shape));
    }
    let (k, p) = (g.k(), g.p());
    let mut out = Tensor::zeros(&x_shape);
    let mut cols = vec![T::zero(); k * p];
    let in_item = c * g.h * g.w;
    for i in 0..n {
        let gyn = &gy.data()[i * o * p..(i + 1) * o * p];
        let xn = &mut out.data_mut()[i * in_item..(i + 1) * in_item];
        if g.is_pointwise() {
            T::gemm(k, o, p, w.data(), (1, k as isize), gyn, (p as isize, 1), xn, false);
        } else {
            T::gemm(k, o, p, w.data(), (1, k as isize), gyn, (p as isize, 1), &mut cols, false);
            col2im_add(&g, &cols, xn);
        }
    }
    Ok(out)
}

/// Gradient of [`conv2d_valid`] with respect to its weight.
pub fn conv2d_weight_grad<T: Real>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    kernel: (usize, usize),
) -> Result<Tensor<T>> {
    let (n, c, _, _) = x.dims4()?;
    let (gn, o, oh, ow) = gy.dims4()?;
    if gn != n {
        return Err(Error::shape("conv2d_weight_grad", x.shape(), gy.shape()));
    }
    let w_shape = [o, c, kernel.0, kernel.1];
    let g = conv_geom(x.shape(), &w_shape, stride)?;
    if g.oh != oh || g.ow != ow {
        return Err(Error::shape("conv2d_weight_grad", x.shape(), gy.shape()));
    }
    let (k, p) = (g.k(), g.p());
    let mut out = Tensor::zeros(&w_shape);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    let in_item = c * g.h * g.w;
    for i in 0..n {
        let xn = &x.data()[i * in_item..(i + 1) * in_item];
        let b: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(&g, xn, &mut cols);
            &cols
        };
        let gyn = &gy.data()[i * o * p..(i + 1) * o * p];
        T::gemm(o, p, k, gyn, (p as isize, 1), b, (1, p as isize), out.data_mut(), true);
    }
    Ok(out)
}

/// `op(a)·op(b)` for rank-2 tensors, `op` optionally transposing.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
    let (ar, ac) = match *a.shape() {
        [r, c] => (r, c),
        _ => return Err(Error::shape("matmul", a.shape(), b.shape())),
    };
    let (br, bc) = match *b.shape() {
        [r, c] => (r, c),
        _ => return Err(Error::shape("matmul", a.shape(), b.shape())),
    };
    let (m, k, a_strides) = if ta {
        (ac, ar, (1, ac as isize))
    } else {
        (ar, ac, (ac as isize, 1))
    };
    let (kb, n, b_strides) = if tb {
        (bc, br, (1, bc as isize))
    } else {
        (br, bc, (bc as isize, 1))
    };
    if k != kb {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = Tensor::zeros(&[m, n]);
    T::gemm(m, k, n, a.data(), a_strides, b.data(), b_strides, out.data_mut(), false);
    Ok(out)
}

/// Per-plane index map: output pixel `o` reads input pixel `src[o]`, or zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneMap {
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
    src: Vec<u32>,
}

const NO_SOURCE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Reflect,
    Replicate,
}

impl PlaneMap {
    /// Pad by (top, bottom, left, right).
    pub fn pad(mode: PadMode, in_hw: (usize, usize), pads: (usize, usize, usize, usize)) -> Result<Self> {
        let (h, w) = in_hw;
        let (top, bottom, left, right) = pads;
        if mode == PadMode::Reflect && (top.max(bottom) >= h || left.max(right) >= w) {
            return Err(Error::InvalidArgument(format!(
                "reflect padding {pads:?} needs a plane larger than {in_hw:?}"
            )));
        }
        let resolve = |i: isize, n: usize| -> Option<usize> {
            let n = n as isize;
            if (0..n).contains(&i) {
                return Some(i as usize);
            }
            match mode {
                PadMode::Zero => None,
                PadMode::Replicate => Some(i.clamp(0, n - 1) as usize),
                PadMode::Reflect => Some(if i < 0 { -i } else { 2 * (n - 1) - i } as usize),
            }
        };
        let (oh, ow) = (h + top + bottom, w + left + right);
        let mut src = Vec::with_capacity(oh * ow);
        for oy in 0..oh {
            for ox in 0..ow {
                let sy = resolve(oy as isize - top as isize, h);
                let sx = resolve(ox as isize - left as isize, w);
                src.push(match (sy, sx) {
                    (Some(y), Some(x)) => (y * w + x) as u32,
                    _ => NO_SOURCE,
                });
            }
        }
        Ok(Self {
            in_hw,
            out_hw: (oh, ow),
            src,
        })
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2x(in_hw: (usize, usize)) -> Self {
        let (h, w) = in_hw;
        let mut src = Vec::with_capacity(4 * h * w);
        for oy in 0..2 * h {
            for ox in 0..2 * w {
                src.push(((oy / 2) * w + ox / 2) as u32);
            }
        }
        Self {
            in_hw,
            out_hw: (2 * h, 2 * w),
            src,
        }
    }

    fn planes<T: Real>(&self, shape: &[usize], hw: (usize, usize), op: &'static str) -> Result<usize> {
        match *shape {
            [n, c, h, w] if (h, w) == hw => Ok(n * c),
            _ => Err(Error::shape(op, shape, &[hw.0, hw.1])),
        }
    }

    pub fn gather<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let planes = self.planes::<T>(x.shape(), self.in_hw, "plane_gather")?;
        let (ih, iw) = self.in_hw;
        let (oh, ow) = self.out_hw;
        let s = x.shape();
        let mut out = Tensor::zeros(&[s[0], s[1], oh, ow]);
        for p in 0..planes {
            let xp = &x.data()[p * ih * iw..(p + 1) * ih * iw];
            let yp = &mut out.data_mut()[p * oh * ow..(p + 1) * oh * ow];
            for (y, &src) in yp.iter_mut().zip(&self.src) {
                if src != NO_SOURCE {
                    *y = xp[src as usize];
                }
            }
        }
        Ok(out)
    }

    /// Adjoint of [`PlaneMap::gather`]: scatter-add back onto the input plane.
    pub fn scatter<T: Real>(&self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let planes = self.planes::<T>(g.shape(), self.out_hw, "plane_scatter")?;
        let (ih, iw) = self.in_hw;
        let (oh, ow) = self.out_hw;
        let s = g.shape();
        let mut out = Tensor::zeros(&[s[0], s[1], ih, iw]);
        for p in 0..planes {
            let gp = &g.data()[p * oh * ow..(p + 1) * oh * ow];
            let xp = &mut out.data_mut()[p * ih * iw..(p + 1) * ih * iw];
            for (&gv, &src) in gp.iter().zip(&self.src) {
                if src != NO_SOURCE {
                    xp[src as usize] = xp[src as usize] + gv;
                }
            }
        }
        Ok(out)
    }
}

/// Channel routing: output channel `i` copies input channel `i mod B`.
pub fn channel_cycle<T: Real>(x: &Tensor<T>, out_channels: usize) -> Result<Tensor<T>> {
    let (n, b, h, w) = x.dims4()?;
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, out_channels, h, w]);
    for i in 0..n {
        for c in 0..out_channels {
            let src = &x.data()[(i * b + c % b) * plane..(i * b + c % b + 1) * plane];
            out.data_mut()[(i * out_channels + c) * plane..(i * out_channels + c + 1) * plane]
                .copy_from_slice(src);
        }
    }
    Ok(out)
}

/// Adjoint of [`channel_cycle`].
pub fn channel_fold<T: Real>(g: &Tensor<T>, in_channels: usize) -> Result<Tensor<T>> {
    let (n, c_out, h, w) = g.dims4()?;
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, in_channels, h, w]);
    for i in 0..n {
        for c in 0..c_out {
            let dst = (i * in_channels + c % in_channels) * plane;
            let src = (i * c_out + c) * plane;
            for k in 0..plane {
                out.data_mut()[dst + k] = out.data()[dst + k] + g.data()[src + k];
            }
        }
    }
    Ok(out)
}

fn broadcast_strides(from: &[usize], to: &[usize]) -> Result<Vec<usize>> {
    if from.len() != to.len() {
        return Err(Error::shape("broadcast", from, to));
    }
    let mut strides = vec![0; from.len()];
    let mut acc = 1;
    for d in (0..from.len()).rev() {
        if from[d] == to[d] {
            strides[d] = acc;
        } else if from[d] == 1 {
            strides[d] = 0;
        } else {
            return Err(Error::shape("broadcast", from, to));
        }
        acc *= from[d];
    }
    Ok(strides)
}

/// Visit (output offset, input offset) pairs of a same-rank broadcast.
fn for_each_broadcast(strides: &[usize], to: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = to.len();
    let inner = to[rank - 1];
    let inner_stride = strides[rank - 1];
    let outer = numel(to) / inner;
    let mut idx = vec![0usize; rank];
    let mut out = 0;
    for _ in 0..outer {
        let base: usize = idx.iter().zip(strides).map(|(i, s)| i * s).sum();
        for j in 0..inner {
            f(out + j, base + j * inner_stride);
        }
        out += inner;
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            if idx[d] < to[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

pub fn broadcast_to<T: Real>(x: &Tensor<T>, to: &[usize]) -> Result<Tensor<T>> {
    let strides = broadcast_strides(x.shape(), to)?;
    let mut out = Tensor::zeros(to);
    let src = x.data();
    let dst = out.data_mut();
    for_each_broadcast(&strides, to, |o, i| dst[o] = src[i]);
    Ok(out)
}

/// Adjoint of [`broadcast_to`]: sum `g` down to `to`.
pub fn sum_to<T: Real>(g: &Tensor<T>, to: &[usize]) -> Result<Tensor<T>> {
    let strides = broadcast_strides(to, g.shape())?;
    let mut out = Tensor::zeros(to);
    let src = g.data();
    let dst = out.data_mut();
    for_each_broadcast(&strides, g.shape(), |o, i| dst[i] = dst[i] + src[o]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_pad_indices() {
        let m = PlaneMap::pad(PadMode::Reflect, (1, 4), (0, 0, 2, 2)).unwrap();
        let x = Tensor::new(vec![1, 1, 1, 4], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let y = m.gather(&x).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]);
    }

    #[test]
    fn reflect_pad_rejects_small_planes() {
        assert!(PlaneMap::pad(PadMode::Reflect, (2, 2), (2, 2, 2, 2)).is_err());
    }

    #[test]
    fn broadcast_and_sum_to_are_adjoint() {
        let x = Tensor::from_fn(&[2, 1, 3], |i| i as f64 + 1.0);
        let y = broadcast_to(&x, &[2, 4, 3]).unwrap();
        assert_eq!(y.data()[3..6], [1.0, 2.0, 3.0]);
        let back = sum_to(&y, &[2, 1, 3]).unwrap();
        assert_eq!(back.data(), x.map(|v| 4.0 * v).data());
    }

    #[test]
    fn strided_conv_matches_loop() {
        let x = Tensor::from_fn(&[1, 2, 5, 5], |i| ((i * 7) % 11) as f64 - 5.0);
        let w = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 5) % 7) as f64 - 3.0);
        let y = conv2d_valid(&x, &w, 2).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2, 2]);
        for o in 0..3 {
            for oy in 0..2 {
                for ox in 0..2 {
                    let mut acc = 0.0;
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                acc += x.data()[(c * 5 + oy * 2 + ky) * 5 + ox * 2 + kx]
                                    * w.data()[((o * 2 + c) * 3 + ky) * 3 + kx];
                            }
                        }
                    }
                    assert_eq!(y.data()[(o * 2 + oy) * 2 + ox], acc);
                }
            }
        }
    }
}
