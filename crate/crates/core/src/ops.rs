//! Forward and backward kernels for the operators the networks are built from.
//!
//! All image kernels assume `[batch, channel, row, column]` layout and stride 1
//! convolutions; resolution changes happen only in the pooling and upsampling
//! kernels.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn acc<T: Scalar>(v: T) -> f64 {
    v.to_f64_lossy()
}

fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64_lossy(v)
}

/// Checks conv operand shapes and returns `(cout, cin, k)`.
pub fn check_conv(x_shape: &[usize], w_shape: &[usize], dilation: usize) -> Result<(usize, usize, usize)> {
    let &[cout, cin, kh, kw] = w_shape else {
        return Err(Error::config(format!("conv2d weight must be rank 4, got {w_shape:?}")));
    };
    if kh != kw || !(kh == 1 || kh == 3) {
        return Err(Error::config(format!("conv2d kernel must be 1x1 or 3x3, got {kh}x{kw}")));
    }
    if dilation == 0 {
        return Err(Error::config("conv2d dilation must be at least 1"));
    }
    let &[_, xc, _, _] = x_shape else {
        return Err(Error::config(format!("conv2d input must be rank 4, got {x_shape:?}")));
    };
    if xc != cin {
        return Err(Error::config(format!("conv2d expects {cin} input channels, got {xc}")));
    }
    Ok((cout, cin, kh))
}

/// Lays out the dilated, zero-padded taps of one image as a `(cin*k*k) x (h*w)` matrix.
fn im2col<T: Scalar>(x: &[T], cin: usize, h: usize, w: usize, k: usize, dilation: usize, col: &mut [T]) {
    let hw = h * w;
    let r = (k / 2) as isize;
    for c in 0..cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for i in 0..k {
            let dy = (i as isize - r) * dilation as isize;
            for j in 0..k {
                let dx = (j as isize - r) * dilation as isize;
                let row = &mut col[((c * k + i) * k + j) * hw..][..hw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).clamp(0, w as isize) as usize;
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    dst[..x_lo].iter_mut().for_each(|v| *v = T::zero());
                    dst[x_hi..].iter_mut().for_each(|v| *v = T::zero());
                    let s0 = (x_lo as isize + dx) as usize;
                    dst[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im<T: Scalar>(col: &[T], cin: usize, h: usize, w: usize, k: usize, dilation: usize, gx: &mut [T]) {
    let hw = h * w;
    let r = (k / 2) as isize;
    for c in 0..cin {
        let plane = &mut gx[c * hw..(c + 1) * hw];
        for i in 0..k {
            let dy = (i as isize - r) * dilation as isize;
            for j in 0..k {
                let dx = (j as isize - r) * dilation as isize;
                let row = &col[((c * k + i) * k + j) * hw..][..hw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).clamp(0, w as isize) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (x_lo as isize + dx) as usize;
                    let dst = &mut plane[sy as usize * w + s0..][..x_hi - x_lo];
                    for (d, &v) in dst.iter_mut().zip(&row[y * w + x_lo..y * w + x_hi]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Same-size convolution: zero padding of `dilation * (k - 1) / 2`, stride 1.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    dilation: usize,
) -> Result<Tensor<T>> {
    let (cout, cin, k) = check_conv(x.shape(), weight.shape(), dilation)?;
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::config(format!("conv2d bias must have shape [{cout}], got {:?}", b.shape())));
        }
    }
    let (batch, _, h, w) = x.dims4()?;
    let hw = h * w;
    let kk = cin * k * k;
    let mut out = vec![T::zero(); batch * cout * hw];
    let mut col = if k == 1 { Vec::new() } else { vec![T::zero(); kk * hw] };
    for b in 0..batch {
        let xb = &x.data()[b * cin * hw..(b + 1) * cin * hw];
        let ob = &mut out[b * cout * hw..(b + 1) * cout * hw];
        if let Some(bias) = bias {
            for (o, &bv) in bias.data().iter().enumerate() {
                ob[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        let lhs: &[T] = if k == 1 {
            xb
        } else {
            im2col(xb, cin, h, w, k, dilation, &mut col);
            &col
        };
        T::gemm(cout, kk, hw, T::one(), weight.data(), false, lhs, false, beta, ob);
    }
    Tensor::new(&[batch, cout, h, w], out)
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dilation: usize,
    grad_out: &[T],
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (cout, cin, k) = check_conv(x.shape(), weight.shape(), dilation)?;
    let (batch, _, h, w) = x.dims4()?;
    let hw = h * w;
    let kk = cin * k * k;
    let mut gw = vec![T::zero(); cout * kk];
    let mut gb = vec![T::zero(); cout];
    let mut gx = if need_input { Some(vec![T::zero(); batch * cin * hw]) } else { None };
    let mut col = if k == 1 { Vec::new() } else { vec![T::zero(); kk * hw] };
    let mut gcol = if k == 1 || !need_input { Vec::new() } else { vec![T::zero(); kk * hw] };
    for b in 0..batch {
        let xb = &x.data()[b * cin * hw..(b + 1) * cin * hw];
        let gy = &grad_out[b * cout * hw..(b + 1) * cout * hw];
        for (o, g) in gb.iter_mut().enumerate() {
            *g += cast::<T>(gy[o * hw..(o + 1) * hw].iter().map(|&v| acc(v)).sum::<f64>());
        }
        let lhs: &[T] = if k == 1 {
            xb
        } else {
            im2col(xb, cin, h, w, k, dilation, &mut col);
            &col
        };
        T::gemm(cout, hw, kk, T::one(), gy, false, lhs, true, T::one(), &mut gw);
        if let Some(gx) = gx.as_mut() {
            let gxb = &mut gx[b * cin * hw..(b + 1) * cin * hw];
            if k == 1 {
                T::gemm(kk, cout, hw, T::one(), weight.data(), true, gy, false, T::zero(), gxb);
            } else {
                T::gemm(kk, cout, hw, T::one(), weight.data(), true, gy, false, T::zero(), &mut gcol);
                col2im(&gcol, cin, h, w, k, dilation, gxb);
            }
        }
    }
    Ok(ConvGrads { input: gx, weight: gw, bias: gb })
}

/// Per-channel statistics saved by a training-mode batch-norm pass.
#[derive(Clone, Debug)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

fn bn_check<T: Scalar>(x: &Tensor<T>, scale: &Tensor<T>, shift: &Tensor<T>, eps: f64) -> Result<(usize, usize, usize)> {
    let (b, c, h, w) = x.dims4()?;
    if scale.shape() != [c] || shift.shape() != [c] {
        return Err(Error::config(format!("batch_norm parameters must have shape [{c}]")));
    }
    if eps <= 0.0 {
        return Err(Error::config("batch_norm epsilon must be positive"));
    }
    Ok((b, c, h * w))
}

/// Batch normalisation with statistics over batch, rows and columns.
pub fn batch_norm_train<T: Scalar>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BnStats)> {
    let (batch, ch, hw) = bn_check(x, scale, shift, eps)?;
    let n = (batch * hw) as f64;
    let xd = x.data();
    let mut stats = BnStats { mean: vec![0.0; ch], var: vec![0.0; ch], inv_std: vec![0.0; ch] };
    for c in 0..ch {
        let mut s = 0.0;
        for b in 0..batch {
            s += xd[(b * ch + c) * hw..][..hw].iter().map(|&v| acc(v)).sum::<f64>();
        }
        let mean = s / n;
        let mut ss = 0.0;
        for b in 0..batch {
            ss += xd[(b * ch + c) * hw..][..hw].iter().map(|&v| (acc(v) - mean).powi(2)).sum::<f64>();
        }
        let var = ss / n;
        stats.mean[c] = mean;
        stats.var[c] = var;
        stats.inv_std[c] = 1.0 / (var + eps).sqrt();
    }
    let out = bn_apply(x, scale, shift, batch, ch, hw, &stats.mean, &stats.inv_std);
    Ok((out, stats))
}

pub fn batch_norm_infer<T: Scalar>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let (batch, ch, hw) = bn_check(x, scale, shift, eps)?;
    let mean: Vec<f64> = running_mean.data().iter().map(|&v| acc(v)).collect();
    let inv: Vec<f64> = running_var.data().iter().map(|&v| 1.0 / (acc(v) + eps).sqrt()).collect();
    Ok(bn_apply(x, scale, shift, batch, ch, hw, &mean, &inv))
}

#[allow(clippy::too_many_arguments)]
fn bn_apply<T: Scalar>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    batch: usize,
    ch: usize,
    hw: usize,
    mean: &[f64],
    inv_std: &[f64],
) -> Tensor<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for c in 0..ch {
            let a = acc(scale.data()[c]) * inv_std[c];
            let off = acc(shift.data()[c]) - a * mean[c];
            let (a, off) = (cast::<T>(a), cast::<T>(off));
            let base = (b * ch + c) * hw;
            for (o, &v) in out[base..base + hw].iter_mut().zip(&x.data()[base..base + hw]) {
                *o = a * v + off;
            }
        }
    }
    Tensor::new(x.shape(), out).expect("same shape")
}

pub struct BnGrads<T> {
    pub input: Vec<T>,
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

/// Backward pass of batch norm. `batch_stats` selects the training-mode
/// formula (statistics depend on the input); `None` treats mean and
/// `inv_std` as constants.
pub fn batch_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    mean: &[f64],
    inv_std: &[f64],
    batch_stats: bool,
    grad_out: &[T],
) -> Result<BnGrads<T>> {
    let (batch, ch, h, w) = x.dims4()?;
    let hw = h * w;
    let n = (batch * hw) as f64;
    let xd = x.data();
    let mut gx = vec![T::zero(); x.len()];
    let mut gscale = vec![T::zero(); ch];
    let mut gshift = vec![T::zero(); ch];
    for c in 0..ch {
        let (mu, is) = (mean[c], inv_std[c]);
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for b in 0..batch {
            let base = (b * ch + c) * hw;
            for (&g, &v) in grad_out[base..base + hw].iter().zip(&xd[base..base + hw]) {
                let g = acc(g);
                sum_g += g;
                sum_gx += g * (acc(v) - mu) * is;
            }
        }
        gshift[c] = cast(sum_g);
        gscale[c] = cast(sum_gx);
        let gamma = acc(scale.data()[c]);
        for b in 0..batch {
            let base = (b * ch + c) * hw;
            for i in base..base + hw {
                let g = acc(grad_out[i]);
                let v = if batch_stats {
                    let xhat = (acc(xd[i]) - mu) * is;
                    gamma * is * (g - sum_g / n - xhat * sum_gx / n)
                } else {
                    gamma * is * g
                };
                gx[i] = cast(v);
            }
        }
    }
    Ok(BnGrads { input: gx, scale: gscale, shift: gshift })
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of relu given its output.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, grad_out: &[T]) -> Vec<T> {
    y.data().iter().zip(grad_out).map(|(&v, &g)| if v > T::zero() { g } else { T::zero() }).collect()
}

/// 2x2 max pooling. Returns the output and, per output element, the flat
/// input index that won (first in row-major window order on ties).
pub fn max_pool2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (b, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::config(format!("max_pool2 needs even extents, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(b * c * oh * ow);
    let xd = x.data();
    for p in 0..b * c {
        let base = p * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let i0 = base + 2 * y * w + 2 * xx;
                let mut best = i0;
                for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                    if xd[cand] > xd[best] {
                        best = cand;
                    }
                }
                out.push(xd[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::new(&[b, c, oh, ow], out)?, arg))
}

pub fn max_pool2_backward<T: Scalar>(input_len: usize, argmax: &[u32], grad_out: &[T]) -> Vec<T> {
    let mut gx = vec![T::zero(); input_len];
    for (&i, &g) in argmax.iter().zip(grad_out) {
        gx[i as usize] += g;
    }
    gx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); b * c * oh * ow];
    for p in 0..b * c {
        let src = &x.data()[p * h * w..][..h * w];
        let dst = &mut out[p * oh * ow..][..oh * ow];
        for y in 0..oh {
            let srow = &src[(y / 2) * w..][..w];
            for (xx, d) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                *d = srow[xx / 2];
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], out)
}

pub fn upsample2_backward<T: Scalar>(in_shape: &[usize], grad_out: &[T]) -> Vec<T> {
    let (b, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let ow = 2 * w;
    let mut gx = vec![T::zero(); b * c * h * w];
    for p in 0..b * c {
        let g = &grad_out[p * 4 * h * w..][..4 * h * w];
        for y in 0..h {
            for xx in 0..w {
                let r0 = 2 * y * ow + 2 * xx;
                gx[p * h * w + y * w + xx] = g[r0] + g[r0 + 1] + g[r0 + ow] + g[r0 + ow + 1];
            }
        }
    }
    gx
}

/// Average pooling over non-overlapping `factor x factor` windows.
pub fn downscale_avg<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::config(format!("cannot downscale {h}x{w} by {factor}")));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let (oh, ow) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = vec![T::zero(); b * c * oh * ow];
    for p in 0..b * c {
        let src = &x.data()[p * h * w..][..h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let mut s = 0.0;
                for dy in 0..factor {
                    let row = &src[(y * factor + dy) * w + xx * factor..][..factor];
                    s += row.iter().map(|&v| acc(v)).sum::<f64>();
                }
                out[p * oh * ow + y * ow + xx] = cast(s * norm);
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], out)
}

pub fn downscale_avg_backward<T: Scalar>(in_shape: &[usize], factor: usize, grad_out: &[T]) -> Vec<T> {
    let (b, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (oh, ow) = (h / factor, w / factor);
    let norm = T::from_f64_lossy(1.0 / (factor * factor) as f64);
    let mut gx = vec![T::zero(); b * c * h * w];
    for p in 0..b * c {
        for y in 0..h {
            for xx in 0..w {
                gx[p * h * w + y * w + xx] = grad_out[p * oh * ow + (y / factor) * ow + xx / factor] * norm;
            }
        }
    }
    gx
}

/// One piece of a channel concatenation: either a real input or a block of
/// zero channels standing in for an absent input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConcatPart {
    Input,
    Zeros(usize),
}

/// Channel concatenation. `parts` consumes `inputs` in order for every
/// [`ConcatPart::Input`].
pub fn concat<T: Scalar>(inputs: &[&Tensor<T>], parts: &[ConcatPart]) -> Result<Tensor<T>> {
    let first = inputs.first().ok_or_else(|| Error::config("concat needs at least one real input"))?;
    let (b, _, h, w) = first.dims4()?;
    let mut chans = Vec::with_capacity(parts.len());
    let mut it = inputs.iter();
    for part in parts {
        match part {
            ConcatPart::Input => {
                let t = it.next().ok_or_else(|| Error::config("concat: fewer inputs than parts"))?;
                let (tb, tc, th, tw) = t.dims4()?;
                if (tb, th, tw) != (b, h, w) {
                    return Err(Error::config(format!(
                        "concat inputs differ outside the channel axis: {:?} vs {:?}",
                        first.shape(),
                        t.shape()
                    )));
                }
                chans.push((Some(*t), tc));
            }
            ConcatPart::Zeros(c) => chans.push((None, *c)),
        }
    }
    if it.next().is_some() {
        return Err(Error::config("concat: more inputs than parts"));
    }
    let total: usize = chans.iter().map(|(_, c)| c).sum();
    let hw = h * w;
    let mut out = vec![T::zero(); b * total * hw];
    for bi in 0..b {
        let mut off = 0;
        for (t, c) in &chans {
            if let Some(t) = t {
                out[(bi * total + off) * hw..][..c * hw].copy_from_slice(&t.data()[bi * c * hw..][..c * hw]);
            }
            off += c;
        }
    }
    Tensor::new(&[b, total, h, w], out)
}

/// Splits a concat gradient back into per-input gradients (zero parts dropped).
pub fn concat_backward<T: Scalar>(
    in_channels: &[usize],
    parts: &[ConcatPart],
    out_shape: &[usize],
    grad_out: &[T],
) -> Vec<Vec<T>> {
    let (b, total, h, w) = (out_shape[0], out_shape[1], out_shape[2], out_shape[3]);
    let hw = h * w;
    let mut grads: Vec<Vec<T>> = in_channels.iter().map(|c| Vec::with_capacity(b * c * hw)).collect();
    for bi in 0..b {
        let mut off = 0;
        let mut k = 0;
        for part in parts {
            match part {
                ConcatPart::Input => {
                    let c = in_channels[k];
                    grads[k].extend_from_slice(&grad_out[(bi * total + off) * hw..][..c * hw]);
                    off += c;
                    k += 1;
                }
                ConcatPart::Zeros(c) => off += c,
            }
        }
    }
    grads
}

/// Element-wise sum of equally shaped tensors.
pub fn add<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs.first().ok_or_else(|| Error::config("add needs at least one input"))?;
    let mut out = first.data().to_vec();
    for t in &inputs[1..] {
        if t.shape() != first.shape() {
            return Err(Error::config(format!("add: shape {:?} differs from {:?}", t.shape(), first.shape())));
        }
        for (o, &v) in out.iter_mut().zip(t.data()) {
            *o += v;
        }
    }
    Tensor::new(first.shape(), out)
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Vec<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::config(format!(
            "mse_loss: prediction {:?} and target {:?} differ",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let scale = 2.0 / n;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = acc(p) - acc(t);
            loss += d * d;
            cast(scale * d)
        })
        .collect();
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn conv_center_sum_is_45() {
        let x = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, Some(&Tensor::zeros(&[1])), 1).unwrap();
        assert_eq!(y.at4(0, 0, 1, 1), 45.0);
        // corner sees 1+2+4+5
        assert_eq!(y.at4(0, 0, 0, 0), 12.0);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::<f64>::from_fn(&[2, 1, 4, 4], |i| i as f64 * 0.5 - 3.0);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        let y = conv2d(&x, &w, Some(&Tensor::zeros(&[1])), 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dilated_conv_counts_in_bounds_taps() {
        let x = Tensor::<f64>::full(&[1, 1, 5, 5], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, 2).unwrap();
        assert_eq!(y.at4(0, 0, 2, 2), 9.0);
        assert_eq!(y.at4(0, 0, 0, 0), 4.0);
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn conv_rejects_bad_configs() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        assert!(conv2d(&x, &Tensor::zeros(&[1, 3, 3, 3]), None, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 5, 5]), None, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 3, 3]), None, 0).is_err());
    }

    #[test]
    fn max_pool_windows() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        assert_eq!(max_pool2(&x).unwrap().0.data(), &[4.0]);
        let ramp = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| i as f64);
        assert_eq!(max_pool2(&ramp).unwrap().0.data(), &[5., 7., 13., 15.]);
        assert!(max_pool2(&Tensor::<f64>::zeros(&[1, 1, 3, 4])).is_err());
    }

    #[test]
    fn max_pool_ties_route_to_first() {
        let x = Tensor::<f64>::full(&[1, 1, 2, 2], 3.0);
        let (y, arg) = max_pool2(&x).unwrap();
        assert_eq!(y.data(), &[3.0]);
        assert_eq!(arg, vec![0]);
        assert_eq!(max_pool2_backward(4, &arg, &[1.0]), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn upsample_replicates_and_sums_back() {
        let x = t(&[1, 1, 1, 1], &[5.0]);
        assert_eq!(upsample2(&x).unwrap().data(), &[5.0; 4]);
        let c = Tensor::<f64>::full(&[1, 2, 4, 4], 2.5);
        let round = upsample2(&max_pool2(&c).unwrap().0).unwrap();
        assert_eq!(round, c);
        assert_eq!(upsample2_backward(&[1, 1, 2, 2], &[1.0; 16]), vec![4.0; 4]);
    }

    #[test]
    fn batch_norm_hand_values() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let (y, _) = batch_norm_train(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), 1e-5).unwrap();
        let expect = [-1.3416, -0.4472, 0.4472, 1.3416];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn batch_norm_zero_scale_gives_shift() {
        let x = Tensor::<f64>::from_fn(&[2, 2, 3, 3], |i| (i as f64).sin());
        let shift = t(&[2], &[0.25, -1.5]);
        let (y, _) = batch_norm_train(&x, &Tensor::zeros(&[2]), &shift, 1e-5).unwrap();
        for b in 0..2 {
            for yy in 0..3 {
                assert_eq!(y.at4(b, 0, yy, 1), 0.25);
                assert_eq!(y.at4(b, 1, yy, 2), -1.5);
            }
        }
        // zero variance channel is fine
        let flat = Tensor::<f64>::full(&[1, 1, 2, 2], 7.0);
        let (y, _) = batch_norm_train(&flat, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), 1e-5).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));
        assert!(batch_norm_train(&flat, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), 0.0).is_err());
    }

    #[test]
    fn batch_norm_standardised_input_passes_through() {
        let x = t(&[1, 1, 2, 2], &[-1., 1., -1., 1.]);
        let (y, _) = batch_norm_train(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), 1e-5).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-5);
    }

    #[test]
    fn mse_values() {
        let p = t(&[2], &[0., 2.]);
        let q = t(&[2], &[1., 0.]);
        assert_eq!(mse_loss(&p, &q).unwrap().0, 2.5);
        assert_eq!(mse_loss(&p, &p).unwrap().0, 0.0);
        let six = Tensor::<f64>::full(&[4], 6.0);
        let one = Tensor::<f64>::full(&[4], 1.0);
        let zero = Tensor::<f64>::zeros(&[4]);
        assert_eq!(mse_loss(&six, &zero).unwrap().0, 36.0);
        assert_eq!(mse_loss(&one, &zero).unwrap().0, 1.0);
        assert!(mse_loss(&p, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn concat_with_zero_slot() {
        let a = Tensor::<f64>::full(&[1, 1, 1, 2], 1.0);
        let b = Tensor::<f64>::full(&[1, 2, 1, 2], 2.0);
        let parts = [ConcatPart::Input, ConcatPart::Zeros(1), ConcatPart::Input];
        let y = concat(&[&a, &b], &parts).unwrap();
        assert_eq!(y.shape(), &[1, 4, 1, 2]);
        assert_eq!(y.data(), &[1., 1., 0., 0., 2., 2., 2., 2.]);
        let g: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let gs = concat_backward(&[1, 2], &parts, y.shape(), &g);
        assert_eq!(gs[0], vec![0., 1.]);
        assert_eq!(gs[1], vec![4., 5., 6., 7.]);
    }

    #[test]
    fn downscale_average() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 2, 2], |i| i as f64);
        assert_eq!(downscale_avg(&x, 2).unwrap().data(), &[1.5]);
        assert!(downscale_avg(&x, 3).is_err());
    }
}
