//! Minimal reverse-mode differentiable network stack: a time-conditioned
//! U-Net used both as the diffusion denoiser and (with the time input held
//! at zero) as the supervised corrector.

mod adam;
mod ops;
mod train;

pub use adam::{adam_step, AdamState};
pub use train::{batch_step, mse_loss_and_upstream, EarlyStopping, TrainSample};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ImageTensor, Rng};

/// Architecture hyperparameters. Depth is the number of 2x downsampling
/// stages, so spatial extents must be divisible by 2^depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { in_channels: 1, base_channels: 16, depth: 2, time_embed_dim: 32, seed: 0 }
    }
}

/// One parameterized layer, in flat-parameter order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv3x3 { in_ch: usize, out_ch: usize },
    ChannelNorm { ch: usize },
    TimeProj { embed_dim: usize, ch: usize },
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv3x3 { in_ch, out_ch } => out_ch * in_ch * 9 + out_ch,
            LayerSpec::ChannelNorm { ch } => 2 * ch,
            LayerSpec::TimeProj { embed_dim, ch } => ch * embed_dim + ch,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Seg {
    start: usize,
    len: usize,
}

impl Seg {
    fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockLayout {
    in_ch: usize,
    out_ch: usize,
    conv1_w: Seg,
    conv1_b: Seg,
    norm1_g: Seg,
    norm1_b: Seg,
    time_w: Seg,
    time_b: Seg,
    conv2_w: Seg,
    conv2_b: Seg,
    norm2_g: Seg,
    norm2_b: Seg,
}

#[derive(Debug, Clone)]
struct UNetLayout {
    enc: Vec<BlockLayout>,
    mid: BlockLayout,
    dec: Vec<BlockLayout>,
    out_w: Seg,
    out_b: Seg,
    out_in_ch: usize,
    total: usize,
}

/// Gradient aligned index-for-index with the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub values: Vec<f64>,
}

/// The denoiser: a depth-`d` U-Net with reflect-padded 3x3 convs, channel
/// normalization, SiLU, and an additive learned time projection per block.
#[derive(Debug, Clone)]
pub struct UNet {
    config: UNetConfig,
    specs: Vec<LayerSpec>,
    layout: UNetLayout,
    params: Vec<f64>,
}

fn push_block(
    specs: &mut Vec<LayerSpec>,
    cursor: &mut usize,
    in_ch: usize,
    out_ch: usize,
    embed_dim: usize,
) -> BlockLayout {
    let mut seg = |len: usize| {
        let s = Seg { start: *cursor, len };
        *cursor += len;
        s
    };
    specs.push(LayerSpec::Conv3x3 { in_ch, out_ch });
    let conv1_w = seg(out_ch * in_ch * 9);
    let conv1_b = seg(out_ch);
    specs.push(LayerSpec::ChannelNorm { ch: out_ch });
    let norm1_g = seg(out_ch);
    let norm1_b = seg(out_ch);
    specs.push(LayerSpec::TimeProj { embed_dim, ch: out_ch });
    let time_w = seg(out_ch * embed_dim);
    let time_b = seg(out_ch);
    specs.push(LayerSpec::Conv3x3 { in_ch: out_ch, out_ch });
    let conv2_w = seg(out_ch * out_ch * 9);
    let conv2_b = seg(out_ch);
    specs.push(LayerSpec::ChannelNorm { ch: out_ch });
    let norm2_g = seg(out_ch);
    let norm2_b = seg(out_ch);
    BlockLayout {
        in_ch,
        out_ch,
        conv1_w,
        conv1_b,
        norm1_g,
        norm1_b,
        time_w,
        time_b,
        conv2_w,
        conv2_b,
        norm2_g,
        norm2_b,
    }
}

fn build_layout(config: &UNetConfig) -> (Vec<LayerSpec>, UNetLayout) {
    let mut specs = Vec::new();
    let mut cursor = 0usize;
    let d = config.depth;
    let level_ch = |i: usize| config.base_channels << i;

    let mut enc = Vec::new();
    for i in 0..d {
        let in_ch = if i == 0 { config.in_channels } else { level_ch(i - 1) };
        enc.push(push_block(&mut specs, &mut cursor, in_ch, level_ch(i), config.time_embed_dim));
    }
    let mid = push_block(
        &mut specs,
        &mut cursor,
        level_ch(d - 1),
        level_ch(d - 1),
        config.time_embed_dim,
    );
    let mut dec = Vec::new();
    let mut up_ch = level_ch(d - 1);
    for k in 0..d {
        let i = d - 1 - k;
        let in_ch = up_ch + level_ch(i);
        let out_ch = if i > 0 { level_ch(i - 1) } else { config.base_channels };
        dec.push(push_block(&mut specs, &mut cursor, in_ch, out_ch, config.time_embed_dim));
        up_ch = out_ch;
    }
    specs.push(LayerSpec::Conv3x3 { in_ch: up_ch, out_ch: config.in_channels });
    let out_w = Seg { start: cursor, len: config.in_channels * up_ch * 9 };
    cursor += out_w.len;
    let out_b = Seg { start: cursor, len: config.in_channels };
    cursor += out_b.len;

    (specs, UNetLayout { enc, mid, dec, out_w, out_b, out_in_ch: up_ch, total: cursor })
}

/// Sinusoidal timestep embedding: dim/2 sines then dim/2 cosines, angular
/// frequencies log-spaced from 1 down to 1/10000.
pub fn time_embedding(t: usize, dim: usize) -> Result<ImageTensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!("embedding dim {dim} must be even")));
    }
    let half = dim / 2;
    let mut data = vec![0.0; dim];
    for k in 0..half {
        let exponent = if half == 1 { 0.0 } else { k as f64 / (half - 1) as f64 };
        let omega = 10000f64.powf(-exponent);
        let angle = t as f64 * omega;
        data[k] = angle.sin();
        data[half + k] = angle.cos();
    }
    ImageTensor::from_vec(vec![dim], data)
}

/// He-initialized U-Net, deterministic per seed.
pub fn build_unet(config: UNetConfig) -> Result<UNet> {
    if config.depth == 0 {
        return Err(Error::InvalidArgument("depth must be >= 1".into()));
    }
    if config.base_channels == 0 || config.in_channels == 0 {
        return Err(Error::InvalidArgument("channel counts must be positive".into()));
    }
    if config.time_embed_dim == 0 || config.time_embed_dim % 2 != 0 {
        return Err(Error::InvalidArgument("time_embed_dim must be even".into()));
    }
    let (specs, layout) = build_layout(&config);
    let mut params = vec![0.0; layout.total];
    let mut rng = Rng::new(config.seed);
    let mut init_block = |bl: &BlockLayout, params: &mut Vec<f64>| {
        let conv_std1 = (2.0 / (bl.in_ch * 9) as f64).sqrt();
        for i in bl.conv1_w.range() {
            params[i] = conv_std1 * rng.next_gaussian();
        }
        params[bl.norm1_g.range()].fill(1.0);
        let time_std = (2.0 / config.time_embed_dim as f64).sqrt();
        for i in bl.time_w.range() {
            params[i] = time_std * rng.next_gaussian();
        }
        let conv_std2 = (2.0 / (bl.out_ch * 9) as f64).sqrt();
        for i in bl.conv2_w.range() {
            params[i] = conv_std2 * rng.next_gaussian();
        }
        params[bl.norm2_g.range()].fill(1.0);
    };
    let blocks: Vec<BlockLayout> = layout
        .enc
        .iter()
        .chain(std::iter::once(&layout.mid))
        .chain(layout.dec.iter())
        .copied()
        .collect();
    for bl in &blocks {
        init_block(bl, &mut params);
    }
    let out_std = (2.0 / (layout.out_in_ch * 9) as f64).sqrt();
    for i in layout.out_w.range() {
        params[i] = out_std * rng.next_gaussian();
    }
    Ok(UNet { config, specs, layout, params })
}

struct BlockCache {
    x_in: Vec<f64>,
    xhat1: Vec<f64>,
    inv_std1: Vec<f64>,
    a1: Vec<f64>,
    s1t: Vec<f64>,
    xhat2: Vec<f64>,
    inv_std2: Vec<f64>,
    a2: Vec<f64>,
}

struct UNetCache {
    temb: Vec<f64>,
    enc: Vec<BlockCache>,
    mid: BlockCache,
    dec: Vec<BlockCache>,
    out_in: Vec<f64>,
    h: usize,
    w: usize,
}

impl UNet {
    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.layout.total,
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    fn check_input(&self, x: &ImageTensor) -> Result<(usize, usize, usize)> {
        let (c, h, w) = x.chw()?;
        if c != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "expected {} channels, got {c}",
                self.config.in_channels
            )));
        }
        let div = 1usize << self.config.depth;
        if h % div != 0 || w % div != 0 || h / div < 2 || w / div < 2 {
            let pad = |v: usize| ((v / div + 1).max(2)) * div;
            return Err(Error::InvalidArgument(format!(
                "extents {h}x{w} not divisible by {div} (with quotient >= 2); \
                 pad to {}x{}",
                if h % div == 0 && h / div >= 2 { h } else { pad(h) },
                if w % div == 0 && w / div >= 2 { w } else { pad(w) },
            )));
        }
        Ok((c, h, w))
    }

    fn block_forward(
        &self,
        bl: &BlockLayout,
        x: Vec<f64>,
        h: usize,
        w: usize,
        temb: &[f64],
    ) -> (Vec<f64>, BlockCache) {
        let hw = h * w;
        let p = &self.params;
        let mut h1 = vec![0.0; bl.out_ch * hw];
        ops::conv3x3_forward(
            &x,
            bl.in_ch,
            h,
            w,
            &p[bl.conv1_w.range()],
            &p[bl.conv1_b.range()],
            bl.out_ch,
            &mut h1,
        );
        let mut a1 = vec![0.0; bl.out_ch * hw];
        let mut xhat1 = vec![0.0; bl.out_ch * hw];
        let mut inv_std1 = vec![0.0; bl.out_ch];
        ops::channel_norm_forward(
            &h1,
            bl.out_ch,
            hw,
            &p[bl.norm1_g.range()],
            &p[bl.norm1_b.range()],
            &mut a1,
            &mut xhat1,
            &mut inv_std1,
        );
        drop(h1);
        let mut s1 = vec![0.0; bl.out_ch * hw];
        ops::silu_forward(&a1, &mut s1);
        let mut s1t = vec![0.0; bl.out_ch * hw];
        ops::time_proj_forward(
            &s1,
            bl.out_ch,
            hw,
            temb,
            &p[bl.time_w.range()],
            &p[bl.time_b.range()],
            &mut s1t,
        );
        drop(s1);
        let mut h2 = vec![0.0; bl.out_ch * hw];
        ops::conv3x3_forward(
            &s1t,
            bl.out_ch,
            h,
            w,
            &p[bl.conv2_w.range()],
            &p[bl.conv2_b.range()],
            bl.out_ch,
            &mut h2,
        );
        let mut a2 = vec![0.0; bl.out_ch * hw];
        let mut xhat2 = vec![0.0; bl.out_ch * hw];
        let mut inv_std2 = vec![0.0; bl.out_ch];
        ops::channel_norm_forward(
            &h2,
            bl.out_ch,
            hw,
            &p[bl.norm2_g.range()],
            &p[bl.norm2_b.range()],
            &mut a2,
            &mut xhat2,
            &mut inv_std2,
        );
        drop(h2);
        let mut out = vec![0.0; bl.out_ch * hw];
        ops::silu_forward(&a2, &mut out);
        (out, BlockCache { x_in: x, xhat1, inv_std1, a1, s1t, xhat2, inv_std2, a2 })
    }

    fn run_forward(&self, x: &ImageTensor, t: usize) -> Result<(ImageTensor, UNetCache)> {
        let (_, h, w) = self.check_input(x)?;
        let temb = time_embedding(t, self.config.time_embed_dim)?.into_data();
        let d = self.config.depth;

        let mut cur = x.data().to_vec();
        let (mut hh, mut ww) = (h, w);
        let mut skips: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut skip_dims = Vec::with_capacity(d);
        let mut enc_caches = Vec::with_capacity(d);
        for bl in &self.layout.enc {
            let (out, cache) = self.block_forward(bl, cur, hh, ww, &temb);
            enc_caches.push(cache);
            skips.push(out.clone());
            skip_dims.push((bl.out_ch, hh, ww));
            let mut pooled = vec![0.0; bl.out_ch * (hh / 2) * (ww / 2)];
            ops::avgpool2_forward(&out, bl.out_ch, hh, ww, &mut pooled);
            cur = pooled;
            hh /= 2;
            ww /= 2;
        }
        let mut ch;
        let (mid_out, mid_cache) = self.block_forward(&self.layout.mid, cur, hh, ww, &temb);
        cur = mid_out;
        ch = self.layout.mid.out_ch;

        let mut dec_caches = Vec::with_capacity(d);
        for (k, bl) in self.layout.dec.iter().enumerate() {
            let i = d - 1 - k;
            let (sch, sh, sw) = skip_dims[i];
            let mut up = vec![0.0; ch * sh * sw];
            ops::upsample2_forward(&cur, ch, hh, ww, &mut up);
            hh = sh;
            ww = sw;
            let mut cat = Vec::with_capacity((ch + sch) * sh * sw);
            cat.extend_from_slice(&up);
            cat.extend_from_slice(&skips[i]);
            let (out, cache) = self.block_forward(bl, cat, hh, ww, &temb);
            dec_caches.push(cache);
            cur = out;
            ch = bl.out_ch;
        }

        let mut out = vec![0.0; self.config.in_channels * h * w];
        ops::conv3x3_forward(
            &cur,
            self.layout.out_in_ch,
            h,
            w,
            &self.params[self.layout.out_w.range()],
            &self.params[self.layout.out_b.range()],
            self.config.in_channels,
            &mut out,
        );
        let out_t = ImageTensor::from_vec(vec![self.config.in_channels, h, w], out)?;
        let cache =
            UNetCache { temb, enc: enc_caches, mid: mid_cache, dec: dec_caches, out_in: cur, h, w };
        Ok((out_t, cache))
    }

    /// Shape-preserving forward pass; deterministic given (params, x, t).
    pub fn forward(&self, x: &ImageTensor, t: usize) -> Result<ImageTensor> {
        Ok(self.run_forward(x, t)?.0)
    }

    fn block_backward(
        &self,
        bl: &BlockLayout,
        cache: &BlockCache,
        h: usize,
        w: usize,
        temb: &[f64],
        g_out: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let hw = h * w;
        let p = &self.params;

        let mut g_a2 = vec![0.0; bl.out_ch * hw];
        ops::silu_backward(&cache.a2, g_out, &mut g_a2);

        let mut g_h2 = vec![0.0; bl.out_ch * hw];
        {
            let (dg, db) = pair_mut(grad, bl.norm2_g, bl.norm2_b);
            ops::channel_norm_backward(
                &cache.xhat2,
                &cache.inv_std2,
                bl.out_ch,
                hw,
                &p[bl.norm2_g.range()],
                &g_a2,
                dg,
                db,
                &mut g_h2,
            );
        }

        let mut g_s1t = vec![0.0; bl.out_ch * hw];
        {
            let (dw, db) = pair_mut(grad, bl.conv2_w, bl.conv2_b);
            ops::conv3x3_backward(
                &cache.s1t,
                bl.out_ch,
                h,
                w,
                &p[bl.conv2_w.range()],
                bl.out_ch,
                &g_h2,
                dw,
                db,
                &mut g_s1t,
            );
        }

        {
            let (dw, db) = pair_mut(grad, bl.time_w, bl.time_b);
            ops::time_proj_backward(&g_s1t, bl.out_ch, hw, temb, dw, db);
        }

        let mut g_a1 = vec![0.0; bl.out_ch * hw];
        ops::silu_backward(&cache.a1, &g_s1t, &mut g_a1);

        let mut g_h1 = vec![0.0; bl.out_ch * hw];
        {
            let (dg, db) = pair_mut(grad, bl.norm1_g, bl.norm1_b);
            ops::channel_norm_backward(
                &cache.xhat1,
                &cache.inv_std1,
                bl.out_ch,
                hw,
                &p[bl.norm1_g.range()],
                &g_a1,
                dg,
                db,
                &mut g_h1,
            );
        }

        let mut g_x = vec![0.0; bl.in_ch * hw];
        {
            let (dw, db) = pair_mut(grad, bl.conv1_w, bl.conv1_b);
            ops::conv3x3_backward(
                &cache.x_in,
                bl.in_ch,
                h,
                w,
                &p[bl.conv1_w.range()],
                bl.out_ch,
                &g_h1,
                dw,
                db,
                &mut g_x,
            );
        }
        g_x
    }

    /// Exact reverse-mode gradient of <forward(x, t), upstream> with respect
    /// to the flat parameter vector.
    pub fn backward(&self, x: &ImageTensor, t: usize, upstream: &ImageTensor) -> Result<Gradient> {
        let (out, cache) = self.run_forward(x, t)?;
        if upstream.shape() != out.shape() {
            return Err(Error::ShapeMismatch(format!(
                "upstream {:?} vs output {:?}",
                upstream.shape(),
                out.shape()
            )));
        }
        Ok(self.backprop(&cache, upstream.data()))
    }

    /// Forward pass plus gradient of a caller-supplied loss: `loss_grad`
    /// maps the output to (loss, dLoss/dOutput).
    pub fn forward_with_grad(
        &self,
        x: &ImageTensor,
        t: usize,
        loss_grad: impl FnOnce(&ImageTensor) -> (f64, ImageTensor),
    ) -> Result<(f64, Gradient)> {
        let (out, cache) = self.run_forward(x, t)?;
        let (loss, upstream) = loss_grad(&out);
        if upstream.shape() != out.shape() {
            return Err(Error::ShapeMismatch("loss gradient shape".into()));
        }
        Ok((loss, self.backprop(&cache, upstream.data())))
    }

    fn backprop(&self, cache: &UNetCache, upstream: &[f64]) -> Gradient {
        let d = self.config.depth;
        let (h, w) = (cache.h, cache.w);
        let mut grad = vec![0.0; self.layout.total];

        // Final conv.
        let mut g_cur = vec![0.0; self.layout.out_in_ch * h * w];
        {
            let (dw, db) = pair_mut(&mut grad, self.layout.out_w, self.layout.out_b);
            ops::conv3x3_backward(
                &cache.out_in,
                self.layout.out_in_ch,
                h,
                w,
                &self.params[self.layout.out_w.range()],
                self.config.in_channels,
                upstream,
                dw,
                db,
                &mut g_cur,
            );
        }

        // Decoder blocks in reverse, splitting concat gradients.
        let mut skip_grads: Vec<Option<Vec<f64>>> = (0..d).map(|_| None).collect();
        let level_dims = |i: usize| (h >> i, w >> i);
        for k in (0..d).rev() {
            let i = d - 1 - k;
            let bl = &self.layout.dec[k];
            let (lh, lw) = level_dims(i);
            let g_cat = self.block_backward(bl, &self.layout_dec_cache(cache, k), lh, lw, &cache.temb, &g_cur, &mut grad);
            let up_ch = bl.in_ch - skip_ch(&self.config, i);
            let split = up_ch * lh * lw;
            let (g_up, g_skip) = g_cat.split_at(split);
            skip_grads[i] = Some(g_skip.to_vec());
            let mut g_below = vec![0.0; up_ch * (lh / 2) * (lw / 2)];
            ops::upsample2_backward(g_up, up_ch, lh / 2, lw / 2, &mut g_below);
            g_cur = g_below;
        }

        // Mid block.
        let (mh, mw) = level_dims(d);
        g_cur = self.block_backward(&self.layout.mid, &cache.mid, mh, mw, &cache.temb, &g_cur, &mut grad);

        // Encoder blocks in reverse. Pool gradient plus the skip branch.
        for i in (0..d).rev() {
            let bl = &self.layout.enc[i];
            let (lh, lw) = level_dims(i);
            let mut g_out = vec![0.0; bl.out_ch * lh * lw];
            ops::avgpool2_backward(&g_cur, bl.out_ch, lh, lw, &mut g_out);
            if let Some(gs) = skip_grads[i].take() {
                for (a, b) in g_out.iter_mut().zip(&gs) {
                    *a += b;
                }
            }
            g_cur = self.block_backward(bl, &cache.enc[i], lh, lw, &cache.temb, &g_out, &mut grad);
        }

        Gradient { values: grad }
    }

    fn layout_dec_cache<'c>(&self, cache: &'c UNetCache, k: usize) -> &'c BlockCache {
        &cache.dec[k]
    }
}

fn skip_ch(config: &UNetConfig, level: usize) -> usize {
    config.base_channels << level
}

/// Two adjacent mutable segments of the flat gradient vector.
fn pair_mut(grad: &mut [f64], a: Seg, b: Seg) -> (&mut [f64], &mut [f64]) {
    debug_assert_eq!(a.start + a.len, b.start);
    let (left, right) = grad[a.start..b.start + b.len].split_at_mut(a.len);
    (left, right)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gaussian;

    fn tiny_config(seed: u64) -> UNetConfig {
        UNetConfig { in_channels: 1, base_channels: 4, depth: 2, time_embed_dim: 8, seed }
    }

    #[test]
    fn time_embedding_examples() {
        let e = time_embedding(0, 4).unwrap();
        assert_eq!(e.data(), &[0.0, 0.0, 1.0, 1.0]);
        let e0 = time_embedding(0, 32).unwrap();
        let e1 = time_embedding(1, 32).unwrap();
        assert!(e0.max_abs_diff(&e1) > 1e-4);
        assert!(time_embedding(1, 3).is_err());
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let a = build_unet(tiny_config(9)).unwrap();
        let b = build_unet(tiny_config(9)).unwrap();
        let c = build_unet(tiny_config(10)).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn parameter_count_matches_independent_enumeration() {
        // Closed-form sum over the desk-scale layer specs, written out by hand:
        // block(i,o,d) = (o*i*9+o) + 2o + (o*d+o) + (o*o*9+o) + 2o
        let block = |i: usize, o: usize, d: usize| {
            (o * i * 9 + o) + 2 * o + (o * d + o) + (o * o * 9 + o) + 2 * o
        };
        let expected = block(1, 16, 32)   // enc0
            + block(16, 32, 32)           // enc1
            + block(32, 32, 32)           // mid
            + block(64, 16, 32)           // dec level 1 (32 up + 32 skip)
            + block(32, 16, 32)           // dec level 0 (16 up + 16 skip)
            + (16 * 9 + 1);               // out conv
        let model = build_unet(UNetConfig { seed: 1, ..UNetConfig::default() }).unwrap();
        assert_eq!(model.param_count(), expected);
        let from_specs: usize = model.specs().iter().map(|s| s.param_count()).sum();
        assert_eq!(model.param_count(), from_specs);
    }

    #[test]
    fn initialization_std_tracks_fan_in() {
        let model = build_unet(UNetConfig { seed: 3, ..UNetConfig::default() }).unwrap();
        // Check each conv with >= 1000 weights.
        let mut cursor = 0usize;
        for spec in model.specs() {
            let len = spec.param_count();
            if let LayerSpec::Conv3x3 { in_ch, out_ch } = *spec {
                let wlen = out_ch * in_ch * 9;
                if wlen >= 1000 {
                    let ws = &model.params()[cursor..cursor + wlen];
                    let mean = ws.iter().sum::<f64>() / wlen as f64;
                    let std = (ws.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                        / wlen as f64)
                        .sqrt();
                    let target = (2.0 / (in_ch * 9) as f64).sqrt();
                    assert!(
                        (std - target).abs() / target < 0.2,
                        "std {std} vs target {target} for {in_ch}->{out_ch}"
                    );
                }
            }
            cursor += len;
        }
    }

    #[test]
    fn forward_preserves_shape_and_is_deterministic() {
        let model = build_unet(tiny_config(4)).unwrap();
        let mut rng = Rng::new(0);
        let x = gaussian(&mut rng, &[1, 8, 12]).unwrap();
        let y1 = model.forward(&x, 3).unwrap();
        let y2 = model.forward(&x, 3).unwrap();
        assert_eq!(y1.shape(), x.shape());
        assert_eq!(y1.data(), y2.data());
    }

    #[test]
    fn forward_rejects_indivisible_extents_naming_padding() {
        let model = build_unet(tiny_config(4)).unwrap();
        let x = ImageTensor::zeros(&[1, 7, 8]);
        let err = model.forward(&x, 0).unwrap_err().to_string();
        assert!(err.contains("pad to 8x8"), "message: {err}");
    }

    #[test]
    fn fresh_model_output_is_bounded_on_zeros() {
        let model = build_unet(UNetConfig { seed: 11, ..UNetConfig::default() }).unwrap();
        let x = ImageTensor::zeros(&[1, 16, 16]);
        let y = model.forward(&x, 0).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 10.0));
    }

    #[test]
    fn backward_gradient_length_and_zero_upstream() {
        let model = build_unet(tiny_config(5)).unwrap();
        let mut rng = Rng::new(1);
        let x = gaussian(&mut rng, &[1, 8, 8]).unwrap();
        let zero_up = ImageTensor::zeros(&[1, 8, 8]);
        let g = model.backward(&x, 2, &zero_up).unwrap();
        assert_eq!(g.values.len(), model.param_count());
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn composed_unet_gradient_matches_finite_differences() {
        let mut model = build_unet(tiny_config(6)).unwrap();
        let mut rng = Rng::new(2);
        let x = gaussian(&mut rng, &[1, 8, 8]).unwrap();
        let upstream = gaussian(&mut rng, &[1, 8, 8]).unwrap();
        let t = 3usize;

        let analytic = model.backward(&x, t, &upstream).unwrap().values;
        let h = 1e-4;
        let mut worst = 0.0f64;
        for i in 0..model.param_count() {
            let orig = model.params()[i];
            model.params_mut()[i] = orig + h;
            let fp: f64 = model
                .forward(&x, t)
                .unwrap()
                .data()
                .iter()
                .zip(upstream.data())
                .map(|(a, b)| a * b)
                .sum();
            model.params_mut()[i] = orig - h;
            let fm: f64 = model
                .forward(&x, t)
                .unwrap()
                .data()
                .iter()
                .zip(upstream.data())
                .map(|(a, b)| a * b)
                .sum();
            model.params_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-3);
            worst = worst.max((fd - analytic[i]).abs() / denom);
        }
        assert!(worst < 1e-3, "max relative error {worst}");
    }
}
