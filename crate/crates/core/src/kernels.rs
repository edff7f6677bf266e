//! Pure forward/backward kernels shared by the tape and the oracles.
//!
//! All buffers are flat row-major: images are [C, H, W], conv weights are
//! [O, C, KH, KW], dense weights are [OUT, IN]. Backward kernels accumulate
//! into their output buffer so a caller can fold several contributions.

use crate::error::{Error, Result};

/// Resolved convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDims {
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn conv_dims(
    context: &str,
    in_ch: usize,
    in_h: usize,
    in_w: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Result<ConvDims> {
    if stride == 0 || kh == 0 || kw == 0 || out_ch == 0 {
        return Err(Error::InvalidConfig(format!(
            "{context}: kernel, stride and filter count must be positive"
        )));
    }
    if in_h + 2 * padding < kh || in_w + 2 * padding < kw {
        return Err(Error::ShapeMismatch {
            context: context.to_string(),
            expected: format!("spatial extents of at least {kh}x{kw} (with padding {padding})"),
            actual: format!("input {in_ch}x{in_h}x{in_w}"),
        });
    }
    Ok(ConvDims {
        in_ch,
        in_h,
        in_w,
        out_ch,
        kh,
        kw,
        stride,
        padding,
        out_h: (in_h + 2 * padding - kh) / stride + 1,
        out_w: (in_w + 2 * padding - kw) / stride + 1,
    })
}

pub fn conv_forward(d: &ConvDims, input: &[f32], weight: &[f32], bias: &[f32], out: &mut [f32]) {
    for o in 0..d.out_ch {
        for oy in 0..d.out_h {
            for ox in 0..d.out_w {
                let mut acc = bias[o];
                for c in 0..d.in_ch {
                    for i in 0..d.kh {
                        let iy = (oy * d.stride + i) as isize - d.padding as isize;
                        if iy < 0 || iy >= d.in_h as isize {
                            continue;
                        }
                        for j in 0..d.kw {
                            let ix = (ox * d.stride + j) as isize - d.padding as isize;
                            if ix < 0 || ix >= d.in_w as isize {
                                continue;
                            }
                            let iv = input[(c * d.in_h + iy as usize) * d.in_w + ix as usize];
                            let wv = weight[((o * d.in_ch + c) * d.kh + i) * d.kw + j];
                            acc += iv * wv;
                        }
                    }
                }
                out[(o * d.out_h + oy) * d.out_w + ox] = acc;
            }
        }
    }
}

pub fn conv_backward_input(d: &ConvDims, weight: &[f32], gout: &[f32], ginput: &mut [f32]) {
    for o in 0..d.out_ch {
        for oy in 0..d.out_h {
            for ox in 0..d.out_w {
                let g = gout[(o * d.out_h + oy) * d.out_w + ox];
                if g == 0.0 {
                    continue;
                }
                for c in 0..d.in_ch {
                    for i in 0..d.kh {
                        let iy = (oy * d.stride + i) as isize - d.padding as isize;
                        if iy < 0 || iy >= d.in_h as isize {
                            continue;
                        }
                        for j in 0..d.kw {
                            let ix = (ox * d.stride + j) as isize - d.padding as isize;
                            if ix < 0 || ix >= d.in_w as isize {
                                continue;
                            }
                            let wv = weight[((o * d.in_ch + c) * d.kh + i) * d.kw + j];
                            ginput[(c * d.in_h + iy as usize) * d.in_w + ix as usize] += g * wv;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_backward_weight(d: &ConvDims, input: &[f32], gout: &[f32], gweight: &mut [f32]) {
    for o in 0..d.out_ch {
        for oy in 0..d.out_h {
            for ox in 0..d.out_w {
                let g = gout[(o * d.out_h + oy) * d.out_w + ox];
                if g == 0.0 {
                    continue;
                }
                for c in 0..d.in_ch {
                    for i in 0..d.kh {
                        let iy = (oy * d.stride + i) as isize - d.padding as isize;
                        if iy < 0 || iy >= d.in_h as isize {
                            continue;
                        }
                        for j in 0..d.kw {
                            let ix = (ox * d.stride + j) as isize - d.padding as isize;
                            if ix < 0 || ix >= d.in_w as isize {
                                continue;
                            }
                            let iv = input[(c * d.in_h + iy as usize) * d.in_w + ix as usize];
                            gweight[((o * d.in_ch + c) * d.kh + i) * d.kw + j] += g * iv;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_backward_bias(d: &ConvDims, gout: &[f32], gbias: &mut [f32]) {
    for o in 0..d.out_ch {
        let mut acc = 0.0;
        for oy in 0..d.out_h {
            for ox in 0..d.out_w {
                acc += gout[(o * d.out_h + oy) * d.out_w + ox];
            }
        }
        gbias[o] += acc;
    }
}

pub fn relu_forward(input: &[f32], out: &mut [f32]) {
    for (o, &v) in out.iter_mut().zip(input.iter()) {
        *o = if v > 0.0 { v } else { 0.0 };
    }
}

pub fn relu_backward(input: &[f32], gout: &[f32], ginput: &mut [f32]) {
    for i in 0..input.len() {
        if input[i] > 0.0 {
            ginput[i] += gout[i];
        }
    }
}

/// Imputed backward rule used by guided backpropagation: the gradient passes
/// only where the forward input was positive AND the incoming gradient is
/// positive.
pub fn relu_backward_guided(input: &[f32], gout: &[f32], ginput: &mut [f32]) {
    for i in 0..input.len() {
        if input[i] > 0.0 && gout[i] > 0.0 {
            ginput[i] += gout[i];
        }
    }
}

/// Non-overlapping 2x2 max pooling with floor division; odd trailing rows and
/// columns are dropped. `switches` records the flat argmax index per output
/// cell, ties resolved to the first maximal element in row-major order.
pub fn maxpool2_forward(
    ch: usize,
    h: usize,
    w: usize,
    input: &[f32],
    out: &mut [f32],
    switches: &mut Vec<usize>,
) {
    let oh = h / 2;
    let ow = w / 2;
    switches.clear();
    switches.reserve(ch * oh * ow);
    for c in 0..ch {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = (c * h + oy * 2) * w + ox * 2;
                let mut best = input[best_idx];
                for i in 0..2 {
                    for j in 0..2 {
                        let idx = (c * h + oy * 2 + i) * w + ox * 2 + j;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                out[(c * oh + oy) * ow + ox] = best;
                switches.push(best_idx);
            }
        }
    }
}

pub fn maxpool2_backward(switches: &[usize], gout: &[f32], ginput: &mut [f32]) {
    for (cell, &src) in switches.iter().enumerate() {
        ginput[src] += gout[cell];
    }
}

pub fn gap_forward(ch: usize, h: usize, w: usize, input: &[f32], out: &mut [f32]) {
    let n = (h * w) as f32;
    for c in 0..ch {
        let mut acc = 0.0;
        for i in 0..h * w {
            acc += input[c * h * w + i];
        }
        out[c] = acc / n;
    }
}

pub fn gap_backward(ch: usize, h: usize, w: usize, gout: &[f32], ginput: &mut [f32]) {
    let n = (h * w) as f32;
    for c in 0..ch {
        let g = gout[c] / n;
        for i in 0..h * w {
            ginput[c * h * w + i] += g;
        }
    }
}

pub fn dense_forward(in_f: usize, out_f: usize, input: &[f32], weight: &[f32], bias: &[f32], out: &mut [f32]) {
    for o in 0..out_f {
        let mut acc = bias[o];
        for i in 0..in_f {
            acc += weight[o * in_f + i] * input[i];
        }
        out[o] = acc;
    }
}

pub fn dense_backward_input(in_f: usize, out_f: usize, weight: &[f32], gout: &[f32], ginput: &mut [f32]) {
    for o in 0..out_f {
        let g = gout[o];
        if g == 0.0 {
            continue;
        }
        for i in 0..in_f {
            ginput[i] += weight[o * in_f + i] * g;
        }
    }
}

pub fn dense_backward_weight(in_f: usize, out_f: usize, input: &[f32], gout: &[f32], gweight: &mut [f32]) {
    for o in 0..out_f {
        let g = gout[o];
        if g == 0.0 {
            continue;
        }
        for i in 0..in_f {
            gweight[o * in_f + i] += g * input[i];
        }
    }
}

pub fn dense_backward_bias(out_f: usize, gout: &[f32], gbias: &mut [f32]) {
    for o in 0..out_f {
        gbias[o] += gout[o];
    }
}

/// Numerically stable softmax over a flat vector.
pub fn softmax_forward(input: &[f32], out: &mut [f32]) {
    let max = input.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(input.iter()) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn softmax_backward(probs: &[f32], gout: &[f32], ginput: &mut [f32]) {
    let dot: f32 = probs.iter().zip(gout.iter()).map(|(p, g)| p * g).sum();
    for i in 0..probs.len() {
        ginput[i] += probs[i] * (gout[i] - dot);
    }
}

/// Nearest-neighbour upsampling: target pixel (i, j) copies source pixel
/// (floor(i*sh/th), floor(j*sw/tw)).
pub fn upsample_nearest_forward(sh: usize, sw: usize, th: usize, tw: usize, input: &[f32], out: &mut [f32]) {
    for i in 0..th {
        let sy = i * sh / th;
        for j in 0..tw {
            let sx = j * sw / tw;
            out[i * tw + j] = input[sy * sw + sx];
        }
    }
}

pub fn upsample_nearest_backward(sh: usize, sw: usize, th: usize, tw: usize, gout: &[f32], ginput: &mut [f32]) {
    for i in 0..th {
        let sy = i * sh / th;
        for j in 0..tw {
            let sx = j * sw / tw;
            ginput[sy * sw + sx] += gout[i * tw + j];
        }
    }
}

/// out[y][x] = sum_k weights[k] * input[k][y][x]
pub fn weighted_channel_sum_forward(k: usize, hw: usize, input: &[f32], weights: &[f32], out: &mut [f32]) {
    for o in out.iter_mut() {
        *o = 0.0;
    }
    for c in 0..k {
        let w = weights[c];
        for i in 0..hw {
            out[i] += w * input[c * hw + i];
        }
    }
}

pub fn weighted_channel_sum_backward(k: usize, hw: usize, weights: &[f32], gout: &[f32], ginput: &mut [f32]) {
    for c in 0..k {
        let w = weights[c];
        for i in 0..hw {
            ginput[c * hw + i] += w * gout[i];
        }
    }
}

/// Index of the first minimal and first maximal element in row-major order.
pub fn argminmax(values: &[f32]) -> (usize, usize) {
    let mut min_idx = 0;
    let mut max_idx = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[min_idx] {
            min_idx = i;
        }
        if v > values[max_idx] {
            max_idx = i;
        }
    }
    (min_idx, max_idx)
}
