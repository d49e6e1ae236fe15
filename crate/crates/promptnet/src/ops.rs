//! Forward and backward kernels for the layer primitives.
//!
//! Every function here is a pure, single-threaded computation on [`Tensor`]
//! values; the tape in [`crate::tape`] records which kernel produced which
//! node and replays the matching backward kernel during the reverse sweep.
//! Inner loops are written against contiguous rows so the compiler can
//! vectorize them; summation orders are fixed, which keeps repeated runs
//! bitwise identical.

use std::fmt;

use crate::tensor::Tensor;

/// Structured errors for the layer primitives.
#[derive(Clone, Debug, PartialEq)]
pub enum OpError {
    /// Two operands disagree on the extent of the named axis.
    AxisMismatch { op: &'static str, axis: &'static str, left: usize, right: usize },
    /// An operand has the wrong rank for the operation.
    RankMismatch { op: &'static str, expected: usize, got: usize },
    /// The kernel does not fit the padded input along the named axis.
    KernelDoesNotFit { axis: &'static str, input: usize, padding: usize, kernel: usize },
    /// Stride must be a positive integer.
    ZeroStride,
    /// Group count must divide the channel count.
    GroupsDontDivide { channels: usize, groups: usize },
    /// Normalization epsilon must be positive.
    NonPositiveEps { eps: f64 },
    /// A label row is not one-hot.
    NotOneHot { row: usize },
    /// A row that must be a probability distribution does not sum to 1.
    NotAProbabilityRow { row: usize, sum: f64 },
    /// Backward was asked to start from a non-scalar node.
    NonScalarLoss { numel: usize },
}

impl fmt::Display for OpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpError::AxisMismatch { op, axis, left, right } => {
                write!(f, "{op}: axis `{axis}` mismatch ({left} vs {right})")
            }
            OpError::RankMismatch { op, expected, got } => {
                write!(f, "{op}: expected a rank-{expected} operand, got rank {got}")
            }
            OpError::KernelDoesNotFit { axis, input, padding, kernel } => {
                write!(
                    f,
                    "kernel of extent {kernel} does not fit axis `{axis}` \
                     of extent {input} with padding {padding}"
                )
            }
            OpError::ZeroStride => write!(f, "stride must be >= 1"),
            OpError::GroupsDontDivide { channels, groups } => {
                write!(f, "group count {groups} does not divide channel count {channels}")
            }
            OpError::NonPositiveEps { eps } => write!(f, "eps must be positive, got {eps}"),
            OpError::NotOneHot { row } => write!(f, "label row {row} is not one-hot"),
            OpError::NotAProbabilityRow { row, sum } => {
                write!(f, "row {row} is not a probability distribution (sums to {sum})")
            }
            OpError::NonScalarLoss { numel } => {
                write!(f, "backward requires a scalar loss node, got {numel} elements")
            }
        }
    }
}

impl std::error::Error for OpError {}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

// Fused three-tap row update for the k=3, stride=1, padding=1 fast path:
// dst[j] += w0*src[j-1] + w1*src[j] + w2*src[j+1], src and dst of equal
// length, out-of-range taps dropped.
#[inline]
fn row3_corr(w0: f64, w1: f64, w2: f64, src: &[f64], dst: &mut [f64]) {
    let n = dst.len();
    if n == 1 {
        dst[0] += w1 * src[0];
        return;
    }
    dst[0] += w1 * src[0] + w2 * src[1];
    let (left, tail) = (&src[..n - 2], &src[2..]);
    for (((d, a), b), c) in dst[1..n - 1].iter_mut().zip(left).zip(&src[1..]).zip(tail) {
        *d += w0 * a + w1 * b + w2 * c;
    }
    dst[n - 1] += w0 * src[n - 2] + w1 * src[n - 1];
}

// Stride-2 variant of row3_corr: dst[j] += w0*src[2j-1] + w1*src[2j] +
// w2*src[2j+1], out-of-range taps dropped.
#[inline]
fn row3_corr_s2(w0: f64, w1: f64, w2: f64, src: &[f64], dst: &mut [f64]) {
    let n = dst.len();
    let m = src.len();
    let mut acc = w1 * src[0];
    if m > 1 {
        acc += w2 * src[1];
    }
    dst[0] += acc;
    // Interior: both neighbor taps in range when 2j+1 <= m-1.
    let hi = if m >= 2 { ((m - 2) / 2 + 1).min(n) } else { 1 };
    for j in 1..hi {
        let i = 2 * j;
        dst[j] += w0 * src[i - 1] + w1 * src[i] + w2 * src[i + 1];
    }
    for j in hi.max(1)..n {
        let i = 2 * j;
        let mut acc = w0 * src[i - 1];
        if i < m {
            acc += w1 * src[i];
        }
        if i + 1 < m {
            acc += w2 * src[i + 1];
        }
        dst[j] += acc;
    }
}

// Backward-input counterpart of row3_corr_s2: scatters g through the
// transposed taps, d_in[2j-1+kw] += w_kw * g[j].
#[inline]
fn row3_scatter_s2(w0: f64, w1: f64, w2: f64, g: &[f64], d_in: &mut [f64]) {
    let m = d_in.len();
    for (j, gv) in g.iter().enumerate() {
        let i = 2 * j;
        if i >= 1 {
            d_in[i - 1] += w0 * gv;
        }
        if i < m {
            d_in[i] += w1 * gv;
        }
        if i + 1 < m {
            d_in[i + 1] += w2 * gv;
        }
    }
}

// Weight-gradient dots for the stride-2 path: (sum g[j]*src[2j-1],
// sum g[j]*src[2j], sum g[j]*src[2j+1]) with out-of-range taps dropped.
#[inline]
fn row3_dots_s2(g: &[f64], src: &[f64]) -> (f64, f64, f64) {
    let m = src.len();
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for (j, gv) in g.iter().enumerate() {
        let i = 2 * j;
        if i >= 1 {
            d0 += gv * src[i - 1];
        }
        if i < m {
            d1 += gv * src[i];
        }
        if i + 1 < m {
            d2 += gv * src[i + 1];
        }
    }
    (d0, d1, d2)
}

// Companion of row3_corr for the weight gradient: returns the three dot
// products (sum g[j]*src[j-1], sum g[j]*src[j], sum g[j]*src[j+1]) with
// out-of-range taps dropped.
#[inline]
fn row3_dots(g: &[f64], src: &[f64]) -> (f64, f64, f64) {
    let n = g.len();
    if n == 1 {
        return (0.0, g[0] * src[0], 0.0);
    }
    let mut d0 = 0.0;
    let mut d1 = g[0] * src[0];
    let mut d2 = g[0] * src[1];
    let (left, tail) = (&src[..n - 2], &src[2..]);
    for (((gv, a), b), c) in g[1..n - 1].iter().zip(left).zip(&src[1..]).zip(tail) {
        d0 += gv * a;
        d1 += gv * b;
        d2 += gv * c;
    }
    d0 += g[n - 1] * src[n - 2];
    d1 += g[n - 1] * src[n - 1];
    (d0, d1, d2)
}

// Four fixed-order accumulators: vectorizes without changing results
// between runs.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let rest_a = chunks_a.remainder();
    let rest_b = chunks_b.remainder();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for lane in 0..4 {
            acc[lane] += ca[lane] * cb[lane];
        }
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in rest_a.iter().zip(rest_b) {
        sum += x * y;
    }
    sum
}

// ---------------------------------------------------------------------------
// conv3d
// ---------------------------------------------------------------------------

/// Output extent of a convolved axis: floor((in + 2*padding - k) / stride) + 1.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Range `[lo, hi)` of output indices o with 0 <= o*stride + k_off - padding < in_extent.
#[inline]
fn valid_out_range(
    in_extent: usize,
    out_extent: usize,
    k_off: usize,
    stride: usize,
    padding: usize,
) -> (usize, usize) {
    let off = k_off as isize - padding as isize;
    let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(stride) };
    let max_in = in_extent as isize - 1 - off;
    if max_in < 0 {
        return (0, 0);
    }
    let hi = (max_in as usize / stride + 1).min(out_extent);
    (lo.min(hi), hi)
}

struct ConvGeom {
    n: usize,
    ci: usize,
    d: usize,
    h: usize,
    w: usize,
    co: usize,
    k: usize,
    stride: usize,
    padding: usize,
    od: usize,
    oh: usize,
    ow: usize,
}

fn conv_geom(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<ConvGeom, OpError> {
    let (n, ci, d, h, w) =
        input.dims5().map_err(|_| OpError::RankMismatch {
            op: "conv3d",
            expected: 5,
            got: input.rank(),
        })?;
    let (co, wci, kd, kh, kw) =
        weight.dims5().map_err(|_| OpError::RankMismatch {
            op: "conv3d",
            expected: 5,
            got: weight.rank(),
        })?;
    if stride == 0 {
        return Err(OpError::ZeroStride);
    }
    if kd != kh || kh != kw {
        return Err(OpError::AxisMismatch { op: "conv3d", axis: "kernel", left: kd, right: kw });
    }
    if wci != ci {
        return Err(OpError::AxisMismatch {
            op: "conv3d",
            axis: "in_channels",
            left: ci,
            right: wci,
        });
    }
    if bias.shape() != [co] {
        return Err(OpError::AxisMismatch {
            op: "conv3d",
            axis: "out_channels",
            left: co,
            right: bias.numel(),
        });
    }
    let k = kd;
    let od = conv_out_extent(d, k, stride, padding)
        .ok_or(OpError::KernelDoesNotFit { axis: "depth", input: d, padding, kernel: k })?;
    let oh = conv_out_extent(h, k, stride, padding)
        .ok_or(OpError::KernelDoesNotFit { axis: "height", input: h, padding, kernel: k })?;
    let ow = conv_out_extent(w, k, stride, padding)
        .ok_or(OpError::KernelDoesNotFit { axis: "width", input: w, padding, kernel: k })?;
    Ok(ConvGeom { n, ci, d, h, w, co, k, stride, padding, od, oh, ow })
}

/// Zero-padded 3D cross-correlation over [N,Ci,D,H,W] with an
/// [Co,Ci,k,k,k] kernel.
pub fn conv3d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, OpError> {
    let g = conv_geom(input, weight, bias, stride, padding)?;
    let mut out = Tensor::zeros(&[g.n, g.co, g.od, g.oh, g.ow]);
    let inp = input.data();
    let wgt = weight.data();
    let b = bias.data();
    let out_data = out.data_mut();

    let in_chan = g.d * g.h * g.w;
    let out_chan = g.od * g.oh * g.ow;
    let ksz = g.k * g.k * g.k;
    let (d_ranges, h_ranges, w_ranges) = tap_ranges(&g);

    let fast3 = g.k == 3 && g.stride == 1 && g.padding == 1;
    let fast3_s2 = g.k == 3 && g.stride == 2 && g.padding == 1;

    for n in 0..g.n {
        for co in 0..g.co {
            let out_base = (n * g.co + co) * out_chan;
            out_data[out_base..out_base + out_chan].fill(b[co]);
            for ci in 0..g.ci {
                let in_base = (n * g.ci + ci) * in_chan;
                let w_base = (co * g.ci + ci) * ksz;
                if fast3 {
                    // Output extents equal input extents; the three width
                    // taps are fused into one pass per row.
                    for kd in 0..3 {
                        let (dlo, dhi) = d_ranges[kd];
                        for kh in 0..3 {
                            let (hlo, hhi) = h_ranges[kh];
                            let t = w_base + (kd * 3 + kh) * 3;
                            let (w0, w1, w2) = (wgt[t], wgt[t + 1], wgt[t + 2]);
                            for o_d in dlo..dhi {
                                let id = o_d + kd - 1;
                                for o_h in hlo..hhi {
                                    let ih = o_h + kh - 1;
                                    let out_row = out_base + (o_d * g.oh + o_h) * g.ow;
                                    let in_row = in_base + (id * g.h + ih) * g.w;
                                    row3_corr(
                                        w0,
                                        w1,
                                        w2,
                                        &inp[in_row..in_row + g.w],
                                        &mut out_data[out_row..out_row + g.ow],
                                    );
                                }
                            }
                        }
                    }
                    continue;
                }
                if fast3_s2 {
                    for kd in 0..3 {
                        let (dlo, dhi) = d_ranges[kd];
                        for kh in 0..3 {
                            let (hlo, hhi) = h_ranges[kh];
                            let t = w_base + (kd * 3 + kh) * 3;
                            let (w0, w1, w2) = (wgt[t], wgt[t + 1], wgt[t + 2]);
                            for o_d in dlo..dhi {
                                let id = 2 * o_d + kd - 1;
                                for o_h in hlo..hhi {
                                    let ih = 2 * o_h + kh - 1;
                                    let out_row = out_base + (o_d * g.oh + o_h) * g.ow;
                                    let in_row = in_base + (id * g.h + ih) * g.w;
                                    row3_corr_s2(
                                        w0,
                                        w1,
                                        w2,
                                        &inp[in_row..in_row + g.w],
                                        &mut out_data[out_row..out_row + g.ow],
                                    );
                                }
                            }
                        }
                    }
                    continue;
                }
                for kd in 0..g.k {
                    let (dlo, dhi) = d_ranges[kd];
                    for kh in 0..g.k {
                        let (hlo, hhi) = h_ranges[kh];
                        for kw in 0..g.k {
                            let (wlo, whi) = w_ranges[kw];
                            if wlo >= whi || dlo >= dhi || hlo >= hhi {
                                continue;
                            }
                            let wv = wgt[w_base + (kd * g.k + kh) * g.k + kw];
                            let off_w = kw as isize - g.padding as isize;
                            for o_d in dlo..dhi {
                                let id = (o_d * g.stride) as isize + kd as isize
                                    - g.padding as isize;
                                for o_h in hlo..hhi {
                                    let ih = (o_h * g.stride) as isize + kh as isize
                                        - g.padding as isize;
                                    let out_row =
                                        out_base + (o_d * g.oh + o_h) * g.ow;
                                    let in_row =
                                        in_base + (id as usize * g.h + ih as usize) * g.w;
                                    if g.stride == 1 {
                                        let iw0 = (wlo as isize + off_w) as usize;
                                        let len = whi - wlo;
                                        let dst = &mut out_data
                                            [out_row + wlo..out_row + whi];
                                        let src = &inp[in_row + iw0..in_row + iw0 + len];
                                        axpy(wv, src, dst);
                                    } else {
                                        for o_w in wlo..whi {
                                            let iw = (o_w * g.stride) as isize + off_w;
                                            out_data[out_row + o_w] +=
                                                wv * inp[in_row + iw as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn tap_ranges(g: &ConvGeom) -> (Vec<(usize, usize)>, Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let d_ranges: Vec<_> = (0..g.k)
        .map(|kd| valid_out_range(g.d, g.od, kd, g.stride, g.padding))
        .collect();
    let h_ranges: Vec<_> = (0..g.k)
        .map(|kh| valid_out_range(g.h, g.oh, kh, g.stride, g.padding))
        .collect();
    let w_ranges: Vec<_> = (0..g.k)
        .map(|kw| valid_out_range(g.w, g.ow, kw, g.stride, g.padding))
        .collect();
    (d_ranges, h_ranges, w_ranges)
}

/// Gradients of [`conv3d_forward`] w.r.t. input, weight and bias.
pub fn conv3d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> (Tensor, Tensor, Tensor) {
    let bias = Tensor::zeros(&[weight.shape()[0]]);
    let g = conv_geom(input, weight, &bias, stride, padding)
        .expect("conv3d_backward called with shapes the forward pass accepted");
    debug_assert_eq!(grad_out.shape(), &[g.n, g.co, g.od, g.oh, g.ow]);

    let mut d_input = Tensor::zeros(input.shape());
    let mut d_weight = Tensor::zeros(weight.shape());
    let mut d_bias = Tensor::zeros(&[g.co]);

    let inp = input.data();
    let wgt = weight.data();
    let gout = grad_out.data();
    let din = d_input.data_mut();
    let dwgt = d_weight.data_mut();
    let dbias = d_bias.data_mut();

    let in_chan = g.d * g.h * g.w;
    let out_chan = g.od * g.oh * g.ow;
    let ksz = g.k * g.k * g.k;
    let (d_ranges, h_ranges, w_ranges) = tap_ranges(&g);

    let fast3 = g.k == 3 && g.stride == 1 && g.padding == 1;
    let fast3_s2 = g.k == 3 && g.stride == 2 && g.padding == 1;

    for n in 0..g.n {
        for co in 0..g.co {
            let g_base = (n * g.co + co) * out_chan;
            let mut bias_acc = 0.0;
            for v in &gout[g_base..g_base + out_chan] {
                bias_acc += v;
            }
            dbias[co] += bias_acc;
            for ci in 0..g.ci {
                let in_base = (n * g.ci + ci) * in_chan;
                let w_base = (co * g.ci + ci) * ksz;
                if fast3 {
                    for kd in 0..3 {
                        let (dlo, dhi) = d_ranges[kd];
                        for kh in 0..3 {
                            let (hlo, hhi) = h_ranges[kh];
                            let t = w_base + (kd * 3 + kh) * 3;
                            let (w0, w1, w2) = (wgt[t], wgt[t + 1], wgt[t + 2]);
                            let (mut a0, mut a1, mut a2) = (0.0, 0.0, 0.0);
                            for o_d in dlo..dhi {
                                let id = o_d + kd - 1;
                                for o_h in hlo..hhi {
                                    let ih = o_h + kh - 1;
                                    let g_row = g_base + (o_d * g.oh + o_h) * g.ow;
                                    let in_row = in_base + (id * g.h + ih) * g.w;
                                    let grad_row = &gout[g_row..g_row + g.ow];
                                    // d_in[i] += w0*g[i+1] + w1*g[i] + w2*g[i-1]
                                    row3_corr(
                                        w2,
                                        w1,
                                        w0,
                                        grad_row,
                                        &mut din[in_row..in_row + g.w],
                                    );
                                    let (d0, d1, d2) =
                                        row3_dots(grad_row, &inp[in_row..in_row + g.w]);
                                    a0 += d0;
                                    a1 += d1;
                                    a2 += d2;
                                }
                            }
                            dwgt[t] += a0;
                            dwgt[t + 1] += a1;
                            dwgt[t + 2] += a2;
                        }
                    }
                    continue;
                }
                if fast3_s2 {
                    for kd in 0..3 {
                        let (dlo, dhi) = d_ranges[kd];
                        for kh in 0..3 {
                            let (hlo, hhi) = h_ranges[kh];
                            let t = w_base + (kd * 3 + kh) * 3;
                            let (w0, w1, w2) = (wgt[t], wgt[t + 1], wgt[t + 2]);
                            let (mut a0, mut a1, mut a2) = (0.0, 0.0, 0.0);
                            for o_d in dlo..dhi {
                                let id = 2 * o_d + kd - 1;
                                for o_h in hlo..hhi {
                                    let ih = 2 * o_h + kh - 1;
                                    let g_row = g_base + (o_d * g.oh + o_h) * g.ow;
                                    let in_row = in_base + (id * g.h + ih) * g.w;
                                    let grad_row = &gout[g_row..g_row + g.ow];
                                    row3_scatter_s2(
                                        w0,
                                        w1,
                                        w2,
                                        grad_row,
                                        &mut din[in_row..in_row + g.w],
                                    );
                                    let (d0, d1, d2) =
                                        row3_dots_s2(grad_row, &inp[in_row..in_row + g.w]);
                                    a0 += d0;
                                    a1 += d1;
                                    a2 += d2;
                                }
                            }
                            dwgt[t] += a0;
                            dwgt[t + 1] += a1;
                            dwgt[t + 2] += a2;
                        }
                    }
                    continue;
                }
                for kd in 0..g.k {
                    let (dlo, dhi) = d_ranges[kd];
                    for kh in 0..g.k {
                        let (hlo, hhi) = h_ranges[kh];
                        for kw in 0..g.k {
                            let (wlo, whi) = w_ranges[kw];
                            if wlo >= whi || dlo >= dhi || hlo >= hhi {
                                continue;
                            }
                            let w_idx = w_base + (kd * g.k + kh) * g.k + kw;
                            let wv = wgt[w_idx];
                            let off_w = kw as isize - g.padding as isize;
                            let mut w_acc = 0.0;
                            for o_d in dlo..dhi {
                                let id = (o_d * g.stride) as isize + kd as isize
                                    - g.padding as isize;
                                for o_h in hlo..hhi {
                                    let ih = (o_h * g.stride) as isize + kh as isize
                                        - g.padding as isize;
                                    let g_row = g_base + (o_d * g.oh + o_h) * g.ow;
                                    let in_row =
                                        in_base + (id as usize * g.h + ih as usize) * g.w;
                                    if g.stride == 1 {
                                        let iw0 = (wlo as isize + off_w) as usize;
                                        let len = whi - wlo;
                                        let grad_row = &gout[g_row + wlo..g_row + whi];
                                        axpy(
                                            wv,
                                            grad_row,
                                            &mut din[in_row + iw0..in_row + iw0 + len],
                                        );
                                        w_acc += dot(
                                            grad_row,
                                            &inp[in_row + iw0..in_row + iw0 + len],
                                        );
                                    } else {
                                        for o_w in wlo..whi {
                                            let iw = ((o_w * g.stride) as isize + off_w)
                                                as usize;
                                            let gv = gout[g_row + o_w];
                                            din[in_row + iw] += wv * gv;
                                            w_acc += gv * inp[in_row + iw];
                                        }
                                    }
                                }
                            }
                            dwgt[w_idx] += w_acc;
                        }
                    }
                }
            }
        }
    }
    (d_input, d_weight, d_bias)
}

// ---------------------------------------------------------------------------
// group normalization
// ---------------------------------------------------------------------------

/// Per-(sample, group) statistics saved for the backward pass.
#[derive(Clone, Debug)]
pub struct GroupNormStats {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Normalizes each group of channels over (channels-in-group, D, H, W) per
/// sample, then applies the per-channel affine transform.
pub fn group_norm_forward(
    input: &Tensor,
    groups: usize,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, GroupNormStats), OpError> {
    let (n, c, d, h, w) = input.dims5().map_err(|_| OpError::RankMismatch {
        op: "group_norm",
        expected: 5,
        got: input.rank(),
    })?;
    if groups == 0 || c % groups != 0 {
        return Err(OpError::GroupsDontDivide { channels: c, groups });
    }
    if eps <= 0.0 {
        return Err(OpError::NonPositiveEps { eps });
    }
    if gamma.shape() != [c] {
        return Err(OpError::AxisMismatch {
            op: "group_norm",
            axis: "channels",
            left: c,
            right: gamma.numel(),
        });
    }
    if beta.shape() != [c] {
        return Err(OpError::AxisMismatch {
            op: "group_norm",
            axis: "channels",
            left: c,
            right: beta.numel(),
        });
    }

    let spatial = d * h * w;
    let cpg = c / groups;
    let m = cpg * spatial;
    let mut out = Tensor::zeros(input.shape());
    let mut stats =
        GroupNormStats { mean: vec![0.0; n * groups], inv_std: vec![0.0; n * groups] };
    let x = input.data();
    let gam = gamma.data();
    let bet = beta.data();
    let y = out.data_mut();

    for ni in 0..n {
        for gi in 0..groups {
            let start = (ni * c + gi * cpg) * spatial;
            let chunk = &x[start..start + m];
            let mut sum = 0.0;
            for v in chunk {
                sum += v;
            }
            let mean = sum / m as f64;
            let mut var_sum = 0.0;
            for v in chunk {
                let t = v - mean;
                var_sum += t * t;
            }
            let var = var_sum / m as f64;
            let inv = 1.0 / (var + eps).sqrt();
            stats.mean[ni * groups + gi] = mean;
            stats.inv_std[ni * groups + gi] = inv;
            for cc in 0..cpg {
                let ch = gi * cpg + cc;
                let row = (ni * c + ch) * spatial;
                let (gch, bch) = (gam[ch], bet[ch]);
                for j in 0..spatial {
                    y[row + j] = gch * (x[row + j] - mean) * inv + bch;
                }
            }
        }
    }
    Ok((out, stats))
}

/// Gradients of [`group_norm_forward`] w.r.t. input, gamma and beta.
pub fn group_norm_backward(
    input: &Tensor,
    groups: usize,
    gamma: &Tensor,
    stats: &GroupNormStats,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (n, c, d, h, w) = input.dims5().expect("group_norm_backward on validated shapes");
    let spatial = d * h * w;
    let cpg = c / groups;
    let m = cpg * spatial;
    let mf = m as f64;

    let mut d_input = Tensor::zeros(input.shape());
    let mut d_gamma = Tensor::zeros(&[c]);
    let mut d_beta = Tensor::zeros(&[c]);

    let x = input.data();
    let gam = gamma.data();
    let go = grad_out.data();
    let dx = d_input.data_mut();
    let dgam = d_gamma.data_mut();
    let dbet = d_beta.data_mut();

    for ni in 0..n {
        for gi in 0..groups {
            let mean = stats.mean[ni * groups + gi];
            let inv = stats.inv_std[ni * groups + gi];
            // First pass: affine-parameter gradients and the two group sums.
            let mut sum_u = 0.0; // sum of dL/dxhat
            let mut sum_ux = 0.0; // sum of (dL/dxhat * xhat)
            for cc in 0..cpg {
                let ch = gi * cpg + cc;
                let row = (ni * c + ch) * spatial;
                let gch = gam[ch];
                let mut dg = 0.0;
                let mut db = 0.0;
                for j in 0..spatial {
                    let xhat = (x[row + j] - mean) * inv;
                    let g = go[row + j];
                    dg += g * xhat;
                    db += g;
                    let u = g * gch;
                    sum_u += u;
                    sum_ux += u * xhat;
                }
                dgam[ch] += dg;
                dbet[ch] += db;
            }
            let mean_u = sum_u / mf;
            let mean_ux = sum_ux / mf;
            // Second pass: dx = inv * (u - mean(u) - xhat * mean(u*xhat)).
            for cc in 0..cpg {
                let ch = gi * cpg + cc;
                let row = (ni * c + ch) * spatial;
                let gch = gam[ch];
                for j in 0..spatial {
                    let xhat = (x[row + j] - mean) * inv;
                    let u = go[row + j] * gch;
                    dx[row + j] = inv * (u - mean_u - xhat * mean_ux);
                }
            }
        }
    }
    (d_input, d_gamma, d_beta)
}

// ---------------------------------------------------------------------------
// GELU
// ---------------------------------------------------------------------------

/// Standard normal CDF via the exact erf form.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Elementwise x * Phi(x) with the exact (erf-based) normal CDF.
pub fn gelu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v *= std_normal_cdf(*v);
    }
    out
}

/// Gradient of GELU: Phi(x) + x * phi(x).
pub fn gelu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    let mut d = Tensor::zeros(input.shape());
    let x = input.data();
    let go = grad_out.data();
    let dx = d.data_mut();
    for i in 0..x.len() {
        let xi = x[i];
        let pdf = INV_SQRT_2PI * (-0.5 * xi * xi).exp();
        dx[i] = go[i] * (std_normal_cdf(xi) + xi * pdf);
    }
    d
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

/// Affine map input[N,F] . weight[F,G] + bias[G].
pub fn linear_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, OpError> {
    let (n, f) = input.dims2().map_err(|_| OpError::RankMismatch {
        op: "linear",
        expected: 2,
        got: input.rank(),
    })?;
    let (wf, g) = weight.dims2().map_err(|_| OpError::RankMismatch {
        op: "linear",
        expected: 2,
        got: weight.rank(),
    })?;
    if wf != f {
        return Err(OpError::AxisMismatch { op: "linear", axis: "features", left: f, right: wf });
    }
    if bias.shape() != [g] {
        return Err(OpError::AxisMismatch {
            op: "linear",
            axis: "outputs",
            left: g,
            right: bias.numel(),
        });
    }
    let mut out = Tensor::zeros(&[n, g]);
    let x = input.data();
    let w = weight.data();
    let b = bias.data();
    let y = out.data_mut();
    for ni in 0..n {
        let row = ni * g;
        y[row..row + g].copy_from_slice(b);
        for fi in 0..f {
            axpy(x[ni * f + fi], &w[fi * g..fi * g + g], &mut y[row..row + g]);
        }
    }
    Ok(out)
}

/// Gradients of [`linear_forward`] w.r.t. input, weight and bias.
pub fn linear_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (n, f) = input.dims2().expect("linear_backward on validated shapes");
    let (_, g) = weight.dims2().expect("linear_backward on validated shapes");
    let mut d_input = Tensor::zeros(&[n, f]);
    let mut d_weight = Tensor::zeros(&[f, g]);
    let mut d_bias = Tensor::zeros(&[g]);
    let x = input.data();
    let w = weight.data();
    let go = grad_out.data();
    let dx = d_input.data_mut();
    let dw = d_weight.data_mut();
    let db = d_bias.data_mut();
    for ni in 0..n {
        let grow = &go[ni * g..ni * g + g];
        for fi in 0..f {
            dx[ni * f + fi] = dot(grow, &w[fi * g..fi * g + g]);
            axpy(x[ni * f + fi], grow, &mut dw[fi * g..fi * g + g]);
        }
        axpy(1.0, grow, db);
    }
    (d_input, d_weight, d_bias)
}

// ---------------------------------------------------------------------------
// global average pooling
// ---------------------------------------------------------------------------

/// Mean over all spatial positions per sample and channel: [N,C,D,H,W] -> [N,C].
pub fn global_avg_pool_forward(input: &Tensor) -> Result<Tensor, OpError> {
    let (n, c, d, h, w) = input.dims5().map_err(|_| OpError::RankMismatch {
        op: "global_avg_pool",
        expected: 5,
        got: input.rank(),
    })?;
    let spatial = d * h * w;
    let mut out = Tensor::zeros(&[n, c]);
    let x = input.data();
    let y = out.data_mut();
    for i in 0..n * c {
        let chunk = &x[i * spatial..(i + 1) * spatial];
        let mut sum = 0.0;
        for v in chunk {
            sum += v;
        }
        y[i] = sum / spatial as f64;
    }
    Ok(out)
}

/// Gradient of [`global_avg_pool_forward`].
pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let spatial: usize = input_shape[2..].iter().product();
    let mut d = Tensor::zeros(input_shape);
    let go = grad_out.data();
    let dx = d.data_mut();
    for (i, g) in go.iter().enumerate() {
        let v = g / spatial as f64;
        dx[i * spatial..(i + 1) * spatial].fill(v);
    }
    d
}

// ---------------------------------------------------------------------------
// softmax cross-entropy
// ---------------------------------------------------------------------------

/// Max-subtracted softmax plus mean negative log-likelihood against one-hot
/// labels. Returns (scalar loss, probabilities).
pub fn softmax_cross_entropy_forward(
    logits: &Tensor,
    labels: &Tensor,
) -> Result<(Tensor, Tensor), OpError> {
    let (n, k) = logits.dims2().map_err(|_| OpError::RankMismatch {
        op: "softmax_cross_entropy",
        expected: 2,
        got: logits.rank(),
    })?;
    if labels.shape() != logits.shape() {
        return Err(OpError::AxisMismatch {
            op: "softmax_cross_entropy",
            axis: "labels",
            left: logits.numel(),
            right: labels.numel(),
        });
    }
    let lab = labels.data();
    for row in 0..n {
        let r = &lab[row * k..(row + 1) * k];
        let ones = r.iter().filter(|&&v| v == 1.0).count();
        let zeros = r.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != k {
            return Err(OpError::NotOneHot { row });
        }
    }

    let mut probs = Tensor::zeros(&[n, k]);
    let x = logits.data();
    let p = probs.data_mut();
    let mut loss = 0.0;
    for row in 0..n {
        let r = &x[row * k..(row + 1) * k];
        let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in 0..k {
            let e = (r[j] - max).exp();
            p[row * k + j] = e;
            denom += e;
        }
        for j in 0..k {
            p[row * k + j] /= denom;
        }
        for j in 0..k {
            if lab[row * k + j] == 1.0 {
                loss -= p[row * k + j].ln();
            }
        }
    }
    loss /= n as f64;
    Ok((Tensor::scalar(loss), probs))
}

/// Row-wise max-subtracted softmax for inference paths that need
/// probabilities without a loss.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor, OpError> {
    let (n, k) = logits.dims2().map_err(|_| OpError::RankMismatch {
        op: "softmax_rows",
        expected: 2,
        got: logits.rank(),
    })?;
    let mut probs = Tensor::zeros(&[n, k]);
    let x = logits.data();
    let p = probs.data_mut();
    for row in 0..n {
        let r = &x[row * k..(row + 1) * k];
        let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in 0..k {
            let e = (r[j] - max).exp();
            p[row * k + j] = e;
            denom += e;
        }
        for j in 0..k {
            p[row * k + j] /= denom;
        }
    }
    Ok(probs)
}

/// Gradient of the loss w.r.t. the logits: (p - y) / N, scaled by the
/// upstream scalar gradient.
pub fn softmax_cross_entropy_backward(probs: &Tensor, labels: &Tensor, grad: f64) -> Tensor {
    let (n, k) = probs.dims2().expect("probs are rank 2");
    let mut d = Tensor::zeros(&[n, k]);
    let p = probs.data();
    let y = labels.data();
    let dx = d.data_mut();
    let scale = grad / n as f64;
    for i in 0..n * k {
        dx[i] = (p[i] - y[i]) * scale;
    }
    d
}

// ---------------------------------------------------------------------------
// L1 distances
// ---------------------------------------------------------------------------

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), OpError> {
    if a.shape() != b.shape() {
        return Err(OpError::AxisMismatch {
            op,
            axis: "shape",
            left: a.numel(),
            right: b.numel(),
        });
    }
    Ok(())
}

/// Mean absolute difference over all elements.
pub fn l1_mean_forward(a: &Tensor, b: &Tensor) -> Result<Tensor, OpError> {
    check_same_shape("l1_mean_distance", a, b)?;
    let mut sum = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        sum += (x - y).abs();
    }
    Ok(Tensor::scalar(sum / a.numel() as f64))
}

/// Subgradient of [`l1_mean_forward`] w.r.t. `a` (the gradient w.r.t. `b`
/// is its negation). Exact ties contribute zero.
pub fn l1_mean_backward(a: &Tensor, b: &Tensor, grad: f64) -> Tensor {
    let mut d = Tensor::zeros(a.shape());
    let scale = grad / a.numel() as f64;
    let dx = d.data_mut();
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        dx[i] = scale * sign_or_zero(x - y);
    }
    d
}

/// Per-row mean absolute difference for rank-2 operands: [N,d] x [N,d] -> [N].
pub fn row_l1_mean_forward(a: &Tensor, b: &Tensor) -> Result<Tensor, OpError> {
    check_same_shape("row_l1_mean", a, b)?;
    let (n, d) = a.dims2().map_err(|_| OpError::RankMismatch {
        op: "row_l1_mean",
        expected: 2,
        got: a.rank(),
    })?;
    let mut out = Tensor::zeros(&[n]);
    let av = a.data();
    let bv = b.data();
    let y = out.data_mut();
    for row in 0..n {
        let mut sum = 0.0;
        for j in 0..d {
            sum += (av[row * d + j] - bv[row * d + j]).abs();
        }
        y[row] = sum / d as f64;
    }
    Ok(out)
}

/// Subgradient of [`row_l1_mean_forward`] w.r.t. `a`.
pub fn row_l1_mean_backward(a: &Tensor, b: &Tensor, grad_rows: &Tensor) -> Tensor {
    let (n, d) = a.dims2().expect("row_l1_mean operands are rank 2");
    let mut out = Tensor::zeros(&[n, d]);
    let av = a.data();
    let bv = b.data();
    let g = grad_rows.data();
    let dx = out.data_mut();
    for row in 0..n {
        let scale = g[row] / d as f64;
        for j in 0..d {
            dx[row * d + j] = scale * sign_or_zero(av[row * d + j] - bv[row * d + j]);
        }
    }
    out
}

#[inline]
fn sign_or_zero(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Seven nested loops straight from the cross-correlation definition.
    fn naive_conv3d(
        input: &Tensor,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Tensor {
        let (n, ci, d, h, w) = input.dims5().unwrap();
        let (co, _, k, _, _) = weight.dims5().unwrap();
        let od = (d + 2 * padding - k) / stride + 1;
        let oh = (h + 2 * padding - k) / stride + 1;
        let ow = (w + 2 * padding - k) / stride + 1;
        let mut out = Tensor::zeros(&[n, co, od, oh, ow]);
        let get = |t: &Tensor, idx: &[usize]| -> f64 {
            let sh = t.shape();
            let mut flat = 0;
            for (i, &x) in idx.iter().enumerate() {
                flat = flat * sh[i] + x;
            }
            t.data()[flat]
        };
        for ni in 0..n {
            for coi in 0..co {
                for odi in 0..od {
                    for ohi in 0..oh {
                        for owi in 0..ow {
                            let mut acc = bias.data()[coi];
                            for cii in 0..ci {
                                for kd in 0..k {
                                    for kh in 0..k {
                                        for kw in 0..k {
                                            let id = (odi * stride + kd) as isize
                                                - padding as isize;
                                            let ih = (ohi * stride + kh) as isize
                                                - padding as isize;
                                            let iw = (owi * stride + kw) as isize
                                                - padding as isize;
                                            if id < 0
                                                || ih < 0
                                                || iw < 0
                                                || id >= d as isize
                                                || ih >= h as isize
                                                || iw >= w as isize
                                            {
                                                continue;
                                            }
                                            acc += get(
                                                input,
                                                &[
                                                    ni,
                                                    cii,
                                                    id as usize,
                                                    ih as usize,
                                                    iw as usize,
                                                ],
                                            ) * get(weight, &[coi, cii, kd, kh, kw]);
                                        }
                                    }
                                }
                            }
                            let flat = (((ni * co + coi) * od + odi) * oh + ohi) * ow + owi;
                            out.data_mut()[flat] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv3d_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, &[2, 1, 3, 3, 3]);
        let w = Tensor::filled(&[1, 1, 1, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv3d_forward(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv3d_all_ones_sums_eight() {
        let x = Tensor::filled(&[1, 1, 2, 2, 2], 1.0);
        let w = Tensor::filled(&[1, 1, 2, 2, 2], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv3d_forward(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1, 1]);
        assert_eq!(y.data()[0], 8.0);
    }

    #[test]
    fn conv3d_matches_naive_oracle_over_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for k in [1usize, 2, 3] {
            for stride in [1usize, 2] {
                for padding in [0usize, 1] {
                    for extent in [3usize, 4, 5] {
                        if extent + 2 * padding < k {
                            continue;
                        }
                        let x = random_tensor(&mut rng, &[2, 2, extent, extent, extent]);
                        let w = random_tensor(&mut rng, &[3, 2, k, k, k]);
                        let b = random_tensor(&mut rng, &[3]);
                        let fast = conv3d_forward(&x, &w, &b, stride, padding).unwrap();
                        let slow = naive_conv3d(&x, &w, &b, stride, padding);
                        assert_eq!(fast.shape(), slow.shape());
                        assert!(
                            fast.max_abs_diff(&slow) <= 1e-9,
                            "k={k} stride={stride} padding={padding} extent={extent}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn conv3d_shape_errors_name_the_axis() {
        let x = Tensor::zeros(&[1, 2, 4, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3, 3]);
        let b = Tensor::zeros(&[1]);
        match conv3d_forward(&x, &w, &b, 1, 1) {
            Err(OpError::AxisMismatch { axis: "in_channels", left: 2, right: 3, .. }) => {}
            other => panic!("unexpected: {other:?}"),
        }
        let w = Tensor::zeros(&[1, 2, 5, 5, 5]);
        match conv3d_forward(&x, &w, &b, 1, 0) {
            Err(OpError::KernelDoesNotFit { axis: "depth", input: 4, padding: 0, kernel: 5 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn group_norm_constant_input_is_zero() {
        let x = Tensor::filled(&[2, 4, 2, 2, 2], 3.7);
        let gamma = Tensor::filled(&[4], 1.0);
        let beta = Tensor::zeros(&[4]);
        let (y, _) = group_norm_forward(&x, 2, &gamma, &beta, 1e-5).unwrap();
        for v in y.data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn group_norm_normalizes_each_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, &[2, 6, 3, 3, 3]);
        let gamma = Tensor::filled(&[6], 1.0);
        let beta = Tensor::zeros(&[6]);
        let groups = 3;
        let (y, _) = group_norm_forward(&x, groups, &gamma, &beta, 1e-10).unwrap();
        let spatial = 27;
        let cpg = 2;
        let m = cpg * spatial;
        for n in 0..2 {
            for g in 0..groups {
                let start = (n * 6 + g * cpg) * spatial;
                let chunk = &y.data()[start..start + m];
                let mean: f64 = chunk.iter().sum::<f64>() / m as f64;
                let var: f64 =
                    chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
                assert!(mean.abs() < 1e-9, "group mean {mean}");
                assert!((var - 1.0).abs() < 1e-6, "group var {var}");
            }
        }
    }

    #[test]
    fn group_norm_single_group_matches_whole_feature_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&mut rng, &[2, 3, 2, 2, 2]);
        let gamma = random_tensor(&mut rng, &[3]);
        let beta = random_tensor(&mut rng, &[3]);
        let eps = 1e-5;
        let (y, _) = group_norm_forward(&x, 1, &gamma, &beta, eps).unwrap();

        // Straight-line oracle: normalize all channels of a sample at once.
        let spatial = 8;
        let m = 3 * spatial;
        for n in 0..2 {
            let chunk = &x.data()[n * m..(n + 1) * m];
            let mean: f64 = chunk.iter().sum::<f64>() / m as f64;
            let var: f64 = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..3 {
                for j in 0..spatial {
                    let idx = n * m + c * spatial + j;
                    let expect = gamma.data()[c] * (x.data()[idx] - mean) * inv + beta.data()[c];
                    assert!((y.data()[idx] - expect).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn group_norm_rejects_bad_groups() {
        let x = Tensor::zeros(&[1, 5, 2, 2, 2]);
        let gamma = Tensor::filled(&[5], 1.0);
        let beta = Tensor::zeros(&[5]);
        match group_norm_forward(&x, 2, &gamma, &beta, 1e-5) {
            Err(OpError::GroupsDontDivide { channels: 5, groups: 2 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn gelu_reference_points() {
        let x = Tensor::from_vec(&[3], vec![0.0, 10.0, 1.0]).unwrap();
        let y = gelu_forward(&x);
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 10.0).abs() < 1e-6);
        // 1 * 0.5 * (1 + erf(1/sqrt(2)))
        assert!((y.data()[2] - 0.841345).abs() < 1e-5);
    }

    #[test]
    fn linear_identity_and_bias() {
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let zero_b = Tensor::zeros(&[2]);
        let y = linear_forward(&x, &eye, &zero_b).unwrap();
        assert_eq!(y.data(), x.data());

        let zeros = Tensor::zeros(&[3, 2]);
        let w = Tensor::from_vec(&[2, 2], vec![0.5, -0.5, 1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![7.0, -3.0]).unwrap();
        let y = linear_forward(&zeros, &w, &b).unwrap();
        for row in 0..3 {
            assert_eq!(&y.data()[row * 2..row * 2 + 2], &[7.0, -3.0]);
        }
    }

    #[test]
    fn linear_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_tensor(&mut rng, &[4, 7]);
        let w = random_tensor(&mut rng, &[7, 5]);
        let b = random_tensor(&mut rng, &[5]);
        let y = linear_forward(&x, &w, &b).unwrap();
        for n in 0..4 {
            for g in 0..5 {
                let mut acc = b.data()[g];
                for f in 0..7 {
                    acc += x.data()[n * 7 + f] * w.data()[f * 5 + g];
                }
                assert!((y.data()[n * 5 + g] - acc).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn global_avg_pool_constant_and_single_voxel() {
        let x = Tensor::filled(&[2, 3, 2, 2, 2], 4.25);
        let y = global_avg_pool_forward(&x).unwrap();
        for v in y.data() {
            assert_eq!(*v, 4.25);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&mut rng, &[2, 3, 1, 1, 1]);
        let y = global_avg_pool_forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn global_avg_pool_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor(&mut rng, &[2, 4, 3, 2, 3]);
        let y = global_avg_pool_forward(&x).unwrap();
        let spatial = 18;
        for i in 0..8 {
            let sum: f64 = x.data()[i * spatial..(i + 1) * spatial].iter().sum();
            assert!((y.data()[i] - sum / spatial as f64).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_cross_entropy_symmetry_and_saturation() {
        let logits = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        let labels = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let (loss, probs) = softmax_cross_entropy_forward(&logits, &labels).unwrap();
        assert!((loss.item() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((probs.data()[0] - 0.5).abs() < 1e-12);
        assert!((probs.data()[1] - 0.5).abs() < 1e-12);

        let logits = Tensor::from_vec(&[1, 2], vec![100.0, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy_forward(&logits, &labels).unwrap();
        assert!(loss.item() < 1e-6);
    }

    #[test]
    fn softmax_cross_entropy_rejects_bad_labels() {
        let logits = Tensor::zeros(&[2, 2]);
        let labels = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.5, 0.5]).unwrap();
        match softmax_cross_entropy_forward(&logits, &labels) {
            Err(OpError::NotOneHot { row: 1 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn l1_mean_examples() {
        let a = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap();
        assert_eq!(l1_mean_forward(&a, &a).unwrap().item(), 0.0);
        assert_eq!(l1_mean_forward(&a, &b).unwrap().item(), 1.0);
        let a = Tensor::from_vec(&[2], vec![0.9, 0.1]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.6, 0.4]).unwrap();
        assert!((l1_mean_forward(&a, &b).unwrap().item() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn l1_tie_subgradient_is_zero() {
        let a = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let d = l1_mean_backward(&a, &a, 1.0);
        assert_eq!(d.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_out_extent_floor_formula() {
        for input in 1..8usize {
            for k in 1..4usize {
                for stride in 1..3usize {
                    for padding in 0..3usize {
                        let expect = if input + 2 * padding >= k {
                            Some((input + 2 * padding - k) / stride + 1)
                        } else {
                            None
                        };
                        assert_eq!(conv_out_extent(input, k, stride, padding), expect);
                    }
                }
            }
        }
    }
}
