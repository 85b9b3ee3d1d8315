//! Forward and backward kernels for every layer kind.
//!
//! Convolutions are "same"-padded cross-correlations with stride 1. All
//! reductions run in a fixed sequential order so results are bit-stable.

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

fn shape_err<T>(msg: String) -> Result<T> {
    Err(NnError::Shape(msg))
}

/// Gradients of a layer with weights and bias.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

fn kernel_dims(weights: &Tensor) -> Result<(usize, usize, usize)> {
    let (cout, cin, kh, kw) = weights.nchw()?;
    if kh != kw || kh % 2 == 0 {
        return shape_err(format!("kernel must be square and odd, got {kh}x{kw}"));
    }
    Ok((cout, cin, kh))
}

/// Adds `w * src` shifted by `(dy, dx)` into `dst` over the overlap of two
/// `h x w` planes: `dst[y][x] += w * src[y+dy][x+dx]`.
#[inline]
fn shifted_axpy(dst: &mut [f64], src: &[f64], w: f64, h: usize, width: usize, dy: isize, dx: isize) {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (width as isize - dx).min(width as isize).max(0) as usize;
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let d = &mut dst[y * width + x0..y * width + x1];
        let sx0 = (x0 as isize + dx) as usize;
        let s = &src[sy * width + sx0..sy * width + sx0 + (x1 - x0)];
        for (a, b) in d.iter_mut().zip(s) {
            *a += w * b;
        }
    }
}

/// `sum_{y,x} a[y][x] * b[y+dy][x+dx]` over the overlap.
#[inline]
fn shifted_dot(a: &[f64], b: &[f64], h: usize, width: usize, dy: isize, dx: isize) -> f64 {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (width as isize - dx).min(width as isize).max(0) as usize;
    let mut acc = 0.0;
    if x0 >= x1 {
        return acc;
    }
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let sx0 = (x0 as isize + dx) as usize;
        let ra = &a[y * width + x0..y * width + x1];
        let rb = &b[sy * width + sx0..sy * width + sx0 + (x1 - x0)];
        acc += ra.iter().zip(rb).map(|(p, q)| p * q).sum::<f64>();
    }
    acc
}

/// Standard convolution. `weights` is `(C_out, C_in, K, K)`, `bias` is `(C_out)`.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, cin, h, w) = input.nchw()?;
    let (cout, wcin, k) = kernel_dims(weights)?;
    if wcin != cin || bias.len() != cout {
        return shape_err(format!(
            "conv2d: input {:?}, weights {:?}, bias {:?}",
            input.dims(),
            weights.dims(),
            bias.dims()
        ));
    }
    let plane = h * w;
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros(&[n, cout, h, w]);
    let x = input.data();
    let wt = weights.data();
    let od = out.data_mut();
    for b in 0..n {
        for o in 0..cout {
            let dst = &mut od[(b * cout + o) * plane..(b * cout + o + 1) * plane];
            dst.fill(bias.data()[o]);
            for i in 0..cin {
                let src = &x[(b * cin + i) * plane..(b * cin + i + 1) * plane];
                let taps = &wt[(o * cin + i) * k * k..(o * cin + i + 1) * k * k];
                if k == 1 {
                    let wv = taps[0];
                    for (a, s) in dst.iter_mut().zip(src) {
                        *a += wv * s;
                    }
                    continue;
                }
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = taps[ky * k + kx];
                        shifted_axpy(dst, src, wv, h, w, ky as isize - pad, kx as isize - pad);
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d_backward(input: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<ParamGrads> {
    let (n, cin, h, w) = input.nchw()?;
    let (cout, _, k) = kernel_dims(weights)?;
    if grad_out.dims() != [n, cout, h, w] {
        return shape_err(format!("conv2d backward: grad {:?}", grad_out.dims()));
    }
    let plane = h * w;
    let pad = (k / 2) as isize;
    let mut gx = Tensor::zeros(input.dims());
    let mut gw = Tensor::zeros(weights.dims());
    let mut gb = Tensor::zeros(&[cout]);
    let x = input.data();
    let wt = weights.data();
    let g = grad_out.data();
    for b in 0..n {
        for o in 0..cout {
            let go = &g[(b * cout + o) * plane..(b * cout + o + 1) * plane];
            gb.data_mut()[o] += go.iter().sum::<f64>();
            for i in 0..cin {
                let src = &x[(b * cin + i) * plane..(b * cin + i + 1) * plane];
                let base = (o * cin + i) * k * k;
                let gxi = &mut gx.data_mut()[(b * cin + i) * plane..(b * cin + i + 1) * plane];
                if k == 1 {
                    let wv = wt[base];
                    let mut acc = 0.0;
                    for ((d, s), q) in gxi.iter_mut().zip(src).zip(go) {
                        *d += wv * q;
                        acc += q * s;
                    }
                    gw.data_mut()[base] += acc;
                    continue;
                }
                for ky in 0..k {
                    for kx in 0..k {
                        let dy = ky as isize - pad;
                        let dx = kx as isize - pad;
                        let wv = wt[base + ky * k + kx];
                        // out[y][x] used in[y+dy][x+dx]; route gradient back.
                        shifted_axpy(gxi, go, wv, h, w, -dy, -dx);
                        gw.data_mut()[base + ky * k + kx] += shifted_dot(go, src, h, w, dy, dx);
                    }
                }
            }
        }
    }
    Ok(ParamGrads {
        input: gx,
        weights: gw,
        bias: gb,
    })
}

/// Depthwise convolution: one `K x K` filter per channel, weights `(C, 1, K, K)`.
pub fn depthwise_conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.nchw()?;
    let (wc, one, k) = kernel_dims(weights)?;
    if wc != c || one != 1 || bias.len() != c {
        return shape_err(format!(
            "depthwise: input {:?}, weights {:?}, bias {:?}",
            input.dims(),
            weights.dims(),
            bias.dims()
        ));
    }
    let plane = h * w;
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros(input.dims());
    let x = input.data();
    let od = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let idx = (b * c + ch) * plane;
            let dst = &mut od[idx..idx + plane];
            dst.fill(bias.data()[ch]);
            let src = &x[idx..idx + plane];
            let taps = &weights.data()[ch * k * k..(ch + 1) * k * k];
            for ky in 0..k {
                for kx in 0..k {
                    shifted_axpy(dst, src, taps[ky * k + kx], h, w, ky as isize - pad, kx as isize - pad);
                }
            }
        }
    }
    Ok(out)
}

pub fn depthwise_conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<ParamGrads> {
    let (n, c, h, w) = input.nchw()?;
    let (_, _, k) = kernel_dims(weights)?;
    if grad_out.dims() != input.dims() {
        return shape_err(format!("depthwise backward: grad {:?}", grad_out.dims()));
    }
    let plane = h * w;
    let pad = (k / 2) as isize;
    let mut gx = Tensor::zeros(input.dims());
    let mut gw = Tensor::zeros(weights.dims());
    let mut gb = Tensor::zeros(&[c]);
    for b in 0..n {
        for ch in 0..c {
            let idx = (b * c + ch) * plane;
            let go = &grad_out.data()[idx..idx + plane];
            let src = &input.data()[idx..idx + plane];
            gb.data_mut()[ch] += go.iter().sum::<f64>();
            let gxi = &mut gx.data_mut()[idx..idx + plane];
            for ky in 0..k {
                for kx in 0..k {
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    let t = ch * k * k + ky * k + kx;
                    shifted_axpy(gxi, go, weights.data()[t], h, w, -dy, -dx);
                    gw.data_mut()[t] += shifted_dot(go, src, h, w, dy, dx);
                }
            }
        }
    }
    Ok(ParamGrads {
        input: gx,
        weights: gw,
        bias: gb,
    })
}

/// Output extent of a ceil-mode 2x2/stride-2 pool.
pub fn pooled_extent(len: usize) -> usize {
    len.div_ceil(2)
}

/// 2x2 max pooling with stride 2. Odd extents are padded with negative
/// infinity (ceil mode).
pub fn maxpool2(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.nchw()?;
    let (oh, ow) = (pooled_extent(h), pooled_extent(w));
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let x = input.data();
    let od = out.data_mut();
    for p in 0..n * c {
        let src = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let (_, v) = pool_argmax(src, h, w, oy, ox);
                od[p * oh * ow + oy * ow + ox] = v;
            }
        }
    }
    Ok(out)
}

/// First maximum of a pooling window in row-major order.
#[inline]
fn pool_argmax(src: &[f64], h: usize, w: usize, oy: usize, ox: usize) -> (usize, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for y in 2 * oy..(2 * oy + 2).min(h) {
        for x in 2 * ox..(2 * ox + 2).min(w) {
            let v = src[y * w + x];
            if best.0 == usize::MAX || v > best.1 {
                best = (y * w + x, v);
            }
        }
    }
    best
}

pub fn maxpool2_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.nchw()?;
    let (oh, ow) = (pooled_extent(h), pooled_extent(w));
    if grad_out.dims() != [n, c, oh, ow] {
        return shape_err(format!("maxpool backward: grad {:?}", grad_out.dims()));
    }
    let mut gx = Tensor::zeros(input.dims());
    for p in 0..n * c {
        let src = &input.data()[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let (idx, _) = pool_argmax(src, h, w, oy, ox);
                gx.data_mut()[p * h * w + idx] += grad_out.data()[p * oh * ow + oy * ow + ox];
            }
        }
    }
    Ok(gx)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.nchw()?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let x = input.data();
    let od = out.data_mut();
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                od[p * oh * ow + oy * ow + ox] = x[p * h * w + (oy / 2) * w + ox / 2];
            }
        }
    }
    Ok(out)
}

pub fn upsample2_backward(input_dims: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let mut gx = Tensor::zeros(input_dims);
    let (n, c, h, w) = gx.nchw()?;
    if grad_out.dims() != [n, c, 2 * h, 2 * w] {
        return shape_err(format!("upsample backward: grad {:?}", grad_out.dims()));
    }
    let ow = 2 * w;
    for p in 0..n * c {
        for oy in 0..2 * h {
            for ox in 0..ow {
                gx.data_mut()[p * h * w + (oy / 2) * w + ox / 2] +=
                    grad_out.data()[p * 4 * h * w + oy * ow + ox];
            }
        }
    }
    Ok(gx)
}

/// Affine layer on `(N, F_in)` (any trailing dims are flattened).
/// `weights` is `(F_out, F_in)`, output `(N, F_out)`.
pub fn fully_connected(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, fin) = input.batch_split()?;
    let [fout, wfin] = *weights.dims() else {
        return shape_err(format!("dense weights must be 2-d, got {:?}", weights.dims()));
    };
    if wfin != fin || bias.len() != fout {
        return shape_err(format!(
            "dense: input {:?}, weights {:?}, bias {:?}",
            input.dims(),
            weights.dims(),
            bias.dims()
        ));
    }
    let mut out = Tensor::zeros(&[n, fout]);
    for b in 0..n {
        let x = &input.data()[b * fin..(b + 1) * fin];
        for o in 0..fout {
            let row = &weights.data()[o * fin..(o + 1) * fin];
            out.data_mut()[b * fout + o] =
                bias.data()[o] + row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
        }
    }
    Ok(out)
}

pub fn fully_connected_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<ParamGrads> {
    let (n, fin) = input.batch_split()?;
    let fout = weights.dims()[0];
    if grad_out.dims() != [n, fout] {
        return shape_err(format!("dense backward: grad {:?}", grad_out.dims()));
    }
    let mut gx = Tensor::zeros(input.dims());
    let mut gw = Tensor::zeros(weights.dims());
    let mut gb = Tensor::zeros(&[fout]);
    for b in 0..n {
        let x = &input.data()[b * fin..(b + 1) * fin];
        for o in 0..fout {
            let g = grad_out.data()[b * fout + o];
            gb.data_mut()[o] += g;
            let row = &weights.data()[o * fin..(o + 1) * fin];
            let gxb = &mut gx.data_mut()[b * fin..(b + 1) * fin];
            for (d, wv) in gxb.iter_mut().zip(row) {
                *d += g * wv;
            }
            let gwr = &mut gw.data_mut()[o * fin..(o + 1) * fin];
            for (d, xv) in gwr.iter_mut().zip(x) {
                *d += g * xv;
            }
        }
    }
    Ok(ParamGrads {
        input: gx,
        weights: gw,
        bias: gb,
    })
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn map(input: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = input.data().iter().map(|&v| f(v)).collect();
    Tensor::from_vec(input.dims(), data).expect("same dims")
}

/// Gradient of an elementwise op given its input, output and upstream grad.
pub fn map_backward(
    input: &Tensor,
    output: &Tensor,
    grad_out: &Tensor,
    df: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if grad_out.dims() != input.dims() {
        return shape_err(format!("elementwise backward: grad {:?}", grad_out.dims()));
    }
    let data = input
        .data()
        .iter()
        .zip(output.data())
        .zip(grad_out.data())
        .map(|((&x, &y), &g)| g * df(x, y))
        .collect();
    Tensor::from_vec(input.dims(), data)
}

/// Softmax across the channel axis of an `(N, C, H, W)` tensor, per pixel.
pub fn softmax_channels(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.nchw()?;
    let plane = h * w;
    let mut out = Tensor::zeros(input.dims());
    let x = input.data();
    let od = out.data_mut();
    for b in 0..n {
        for p in 0..plane {
            let at = |ch: usize| (b * c + ch) * plane + p;
            let m = (0..c).map(|ch| x[at(ch)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for ch in 0..c {
                let e = (x[at(ch)] - m).exp();
                od[at(ch)] = e;
                sum += e;
            }
            for ch in 0..c {
                od[at(ch)] /= sum;
            }
        }
    }
    Ok(out)
}

pub fn softmax_channels_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = output.nchw()?;
    if grad_out.dims() != output.dims() {
        return shape_err(format!("softmax backward: grad {:?}", grad_out.dims()));
    }
    let plane = h * w;
    let mut gx = Tensor::zeros(output.dims());
    let y = output.data();
    let g = grad_out.data();
    for b in 0..n {
        for p in 0..plane {
            let at = |ch: usize| (b * c + ch) * plane + p;
            let dot: f64 = (0..c).map(|ch| y[at(ch)] * g[at(ch)]).sum();
            for ch in 0..c {
                gx.data_mut()[at(ch)] = y[at(ch)] * (g[at(ch)] - dot);
            }
        }
    }
    Ok(gx)
}

fn axis1_split(t: &Tensor) -> Result<(usize, usize, usize)> {
    let dims = t.dims();
    if dims.len() < 2 {
        return shape_err(format!("need at least 2 dims, got {dims:?}"));
    }
    Ok((dims[0], dims[1], dims[2..].iter().product()))
}

/// Concatenates along axis 1 (channels, or features for `(N, F)` tensors).
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (na, ca, inner_a) = axis1_split(a)?;
    let (nb, cb, inner_b) = axis1_split(b)?;
    if na != nb || inner_a != inner_b || a.dims()[2..] != b.dims()[2..] {
        return shape_err(format!("concat: {:?} vs {:?}", a.dims(), b.dims()));
    }
    let mut dims = a.dims().to_vec();
    dims[1] = ca + cb;
    let mut data = Vec::with_capacity(na * (ca + cb) * inner_a);
    for n in 0..na {
        data.extend_from_slice(&a.data()[n * ca * inner_a..(n + 1) * ca * inner_a]);
        data.extend_from_slice(&b.data()[n * cb * inner_b..(n + 1) * cb * inner_b]);
    }
    Tensor::from_vec(&dims, data)
}

pub fn concat_channels_backward(
    a_dims: &[usize],
    b_dims: &[usize],
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (n, ca, inner) = (a_dims[0], a_dims[1], a_dims[2..].iter().product::<usize>());
    let cb = b_dims[1];
    if grad_out.len() != n * (ca + cb) * inner {
        return shape_err(format!("concat backward: grad {:?}", grad_out.dims()));
    }
    let mut ga = Vec::with_capacity(n * ca * inner);
    let mut gb = Vec::with_capacity(n * cb * inner);
    let g = grad_out.data();
    for b in 0..n {
        let base = b * (ca + cb) * inner;
        ga.extend_from_slice(&g[base..base + ca * inner]);
        gb.extend_from_slice(&g[base + ca * inner..base + (ca + cb) * inner]);
    }
    Ok((Tensor::from_vec(a_dims, ga)?, Tensor::from_vec(b_dims, gb)?))
}

/// Elementwise sum for residual connections.
pub fn add_skip(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_vec(dims, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_1x1_conv() {
        let x = t(&[1, 1, 2, 3], &[1., 2., 3., 4., 5., 6.]);
        let y = conv2d(&x, &t(&[1, 1, 1, 1], &[1.0]), &t(&[1], &[0.0])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_on_one_hot() {
        let mut x = Tensor::zeros(&[1, 1, 5, 5]);
        x.data_mut()[2 * 5 + 2] = 1.0;
        let y = conv2d(&x, &Tensor::filled(&[1, 1, 3, 3], 1.0), &t(&[1], &[0.0])).unwrap();
        for yy in 0..5 {
            for xx in 0..5 {
                let inside = (1..=3).contains(&yy) && (1..=3).contains(&xx);
                assert_eq!(y.data()[yy * 5 + xx], if inside { 1.0 } else { 0.0 });
            }
        }
        // At a corner the zero padding clips the block.
        let mut x = Tensor::zeros(&[1, 1, 3, 3]);
        x.data_mut()[0] = 1.0;
        let y = conv2d(&x, &Tensor::filled(&[1, 1, 3, 3], 1.0), &t(&[1], &[0.0])).unwrap();
        assert_eq!(y.data(), &[1., 1., 0., 1., 1., 0., 0., 0., 0.]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let err = conv2d(&x, &Tensor::zeros(&[3, 1, 3, 3]), &Tensor::zeros(&[3]));
        assert!(matches!(err, Err(NnError::Shape(_))));
    }

    #[test]
    fn depthwise_center_kernel_is_identity() {
        let x = t(&[1, 2, 2, 2], &[1., 2., 3., 4., 5., 6., 7., 8.]);
        let mut k = Tensor::zeros(&[2, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        k.data_mut()[9 + 4] = 1.0;
        let y = depthwise_conv2d(&x, &k, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn depthwise_channels_are_independent() {
        let x = t(&[1, 2, 3, 3], &(0..18).map(|v| v as f64).collect::<Vec<_>>());
        let k = t(
            &[2, 1, 3, 3],
            &(0..18).map(|v| (v as f64 - 7.0) * 0.3).collect::<Vec<_>>(),
        );
        let full = depthwise_conv2d(&x, &k, &Tensor::zeros(&[2])).unwrap();
        let mut zeroed = x.clone();
        zeroed.data_mut()[9..].fill(0.0);
        let part = depthwise_conv2d(&zeroed, &k, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(&full.data()[..9], &part.data()[..9]);
        assert!(part.data()[9..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pooling_cases() {
        let y = maxpool2(&t(&[1, 1, 2, 2], &[1., 2., 3., 4.])).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let c = maxpool2(&Tensor::filled(&[1, 1, 4, 6], 2.5)).unwrap();
        assert_eq!(c.dims(), &[1, 1, 2, 3]);
        assert!(c.data().iter().all(|&v| v == 2.5));
        let x = t(&[1, 1, 5, 5], &(0..25).map(|v| v as f64).collect::<Vec<_>>());
        let y = maxpool2(&x).unwrap();
        assert_eq!(y.dims(), &[1, 1, 3, 3]);
        // Windowed max: bottom-right 1x1 window holds only element 24.
        assert_eq!(y.data(), &[6., 8., 9., 16., 18., 19., 21., 23., 24.]);
    }

    #[test]
    fn upsample_replicates() {
        let y = upsample2(&t(&[1, 1, 1, 2], &[1., 2.])).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 4]);
        assert_eq!(y.data(), &[1., 1., 2., 2., 1., 1., 2., 2.]);
    }

    #[test]
    fn dense_identity_and_zero() {
        let x = t(&[1, 3], &[0.5, -1.0, 2.0]);
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        assert_eq!(fully_connected(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);
        let b = t(&[2], &[0.25, -4.0]);
        let y = fully_connected(&x, &Tensor::zeros(&[2, 3]), &b).unwrap();
        assert_eq!(y.data(), b.data());
    }

    #[test]
    fn dense_matches_double_loop() {
        let x = t(&[2, 3], &[1., 2., 3., -1., 0.5, 4.]);
        let w = t(&[2, 3], &[0.1, 0.2, -0.3, 1.5, -2.0, 0.25]);
        let b = t(&[2], &[0.5, -0.5]);
        let y = fully_connected(&x, &w, &b).unwrap();
        for n in 0..2 {
            for o in 0..2 {
                let mut acc = b.data()[o];
                for i in 0..3 {
                    acc += w.data()[o * 3 + i] * x.data()[n * 3 + i];
                }
                assert!((y.data()[n * 2 + o] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn activation_values() {
        assert_eq!(relu(-1.0), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(leaky_relu(-2.0, 0.01), -0.02);
        let s = softmax_channels(&Tensor::filled(&[1, 4, 2, 2], 3.0)).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn concat_and_skip_shapes() {
        let a = Tensor::filled(&[2, 1, 2, 2], 1.0);
        let b = Tensor::filled(&[2, 3, 2, 2], 2.0);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.dims(), &[2, 4, 2, 2]);
        assert_eq!(&c.data()[..4], &[1.0; 4]);
        assert_eq!(&c.data()[4..16], &[2.0; 12]);
        assert!(concat_channels(&a, &Tensor::zeros(&[2, 1, 3, 2])).is_err());
        assert!(add_skip(&a, &b).is_err());
        assert_eq!(add_skip(&a, &a).unwrap().data(), &[2.0; 8]);
    }
}
