//! Windowed multi-head self-attention and the Swin transformer layer/block.
//!
//! Attention is restricted to non-overlapping `w x w` windows. Every second
//! layer shifts the window grid by `w/2` through a cyclic roll; an additive
//! mask keeps tokens that wrapped around from attending across their
//! original image regions.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ops::{
    self, gather, LayerNormParams, LinearParams,
};
use crate::rng::Rng;
use crate::tensor::{Element, Parameter, Tape, Tensor};

/// Mask fill value: large enough to zero out softmax weight, finite enough
/// to never produce NaN.
pub const MASK_FILL: f64 = -1e9;

/// Hyperparameters of one Swin transformer layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StlConfig {
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
    /// 0 for W-MSA, `window / 2` for SW-MSA.
    pub shift: usize,
    pub mlp_ratio: f64,
}

impl StlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::config("window size must be >= 1"));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::config(format!(
                "dim {} must be divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.shift != 0 && self.shift != self.window / 2 {
            return Err(Error::config(format!(
                "shift {} must be 0 or window/2 = {}",
                self.shift,
                self.window / 2
            )));
        }
        if self.mlp_ratio <= 0.0 {
            return Err(Error::config("mlp_ratio must be positive"));
        }
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        (self.dim as f64 * self.mlp_ratio).round() as usize
    }
}

/// Weights of one windowed attention: fused qkv projection, output
/// projection, and the learnable relative position bias table indexed by
/// `(dy + w - 1, dx + w - 1)`.
pub struct WindowAttentionParams<T: Element> {
    pub qkv: LinearParams<T>,
    pub proj: LinearParams<T>,
    pub rel_bias: Parameter<T>,
}

impl<T: Element> WindowAttentionParams<T> {
    pub fn zeros(prefix: &str, dim: usize, heads: usize, window: usize) -> Self {
        let side = 2 * window - 1;
        WindowAttentionParams {
            qkv: LinearParams::from_tensors(
                &format!("{prefix}.qkv"),
                Tensor::zeros(&[dim, 3 * dim]),
                Some(Tensor::zeros(&[3 * dim])),
            )
            .expect("consistent shapes"),
            proj: LinearParams::from_tensors(
                &format!("{prefix}.proj"),
                Tensor::zeros(&[dim, dim]),
                Some(Tensor::zeros(&[dim])),
            )
            .expect("consistent shapes"),
            rel_bias: Parameter::new(
                format!("{prefix}.rel_bias"),
                Tensor::zeros(&[side * side, heads]),
            ),
        }
    }

    pub fn init(prefix: &str, dim: usize, heads: usize, window: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(prefix, dim, heads, window);
        fill_trunc_normal(&mut p.qkv.weight, rng);
        fill_trunc_normal(&mut p.proj.weight, rng);
        fill_trunc_normal(&mut p.rel_bias, rng);
        p
    }

    fn validate(&self, dim: usize, heads: usize, window: usize) -> Result<()> {
        let side = 2 * window - 1;
        if self.qkv.weight.shape() != [dim, 3 * dim] {
            return Err(Error::shape(format!(
                "qkv weight {:?} != [{dim}, {}]",
                self.qkv.weight.shape(),
                3 * dim
            )));
        }
        if self.proj.weight.shape() != [dim, dim] {
            return Err(Error::shape(format!(
                "proj weight {:?} != [{dim}, {dim}]",
                self.proj.weight.shape()
            )));
        }
        if self.rel_bias.shape() != [side * side, heads] {
            return Err(Error::shape(format!(
                "relative bias {:?} != [{}, {heads}]",
                self.rel_bias.shape(),
                side * side
            )));
        }
        Ok(())
    }
}

/// Weights of one Swin transformer layer: pre-norm attention residual
/// followed by a pre-norm MLP residual.
pub struct StlParams<T: Element> {
    pub norm1: LayerNormParams<T>,
    pub attn: WindowAttentionParams<T>,
    pub norm2: LayerNormParams<T>,
    pub mlp_fc1: LinearParams<T>,
    pub mlp_fc2: LinearParams<T>,
}

impl<T: Element> StlParams<T> {
    /// All-zero parameters (including the norm affines); with these the
    /// layer is an exact identity, which the tests rely on.
    pub fn zeros(prefix: &str, cfg: &StlConfig) -> Self {
        let hidden = cfg.hidden_dim();
        StlParams {
            norm1: LayerNormParams::from_tensors(
                &format!("{prefix}.norm1"),
                Tensor::zeros(&[cfg.dim]),
                Tensor::zeros(&[cfg.dim]),
            )
            .expect("consistent shapes"),
            attn: WindowAttentionParams::zeros(
                &format!("{prefix}.attn"),
                cfg.dim,
                cfg.heads,
                cfg.window,
            ),
            norm2: LayerNormParams::from_tensors(
                &format!("{prefix}.norm2"),
                Tensor::zeros(&[cfg.dim]),
                Tensor::zeros(&[cfg.dim]),
            )
            .expect("consistent shapes"),
            mlp_fc1: LinearParams::from_tensors(
                &format!("{prefix}.mlp.fc1"),
                Tensor::zeros(&[cfg.dim, hidden]),
                Some(Tensor::zeros(&[hidden])),
            )
            .expect("consistent shapes"),
            mlp_fc2: LinearParams::from_tensors(
                &format!("{prefix}.mlp.fc2"),
                Tensor::zeros(&[hidden, cfg.dim]),
                Some(Tensor::zeros(&[cfg.dim])),
            )
            .expect("consistent shapes"),
        }
    }

    pub fn init(prefix: &str, cfg: &StlConfig, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(prefix, cfg);
        fill_ones(&mut p.norm1.gamma);
        fill_ones(&mut p.norm2.gamma);
        p.attn = WindowAttentionParams::init(
            &format!("{prefix}.attn"),
            cfg.dim,
            cfg.heads,
            cfg.window,
            rng,
        );
        fill_trunc_normal(&mut p.mlp_fc1.weight, rng);
        fill_trunc_normal(&mut p.mlp_fc2.weight, rng);
        p
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        f(&self.norm1.gamma);
        f(&self.norm1.beta);
        f(&self.attn.qkv.weight);
        if let Some(b) = &self.attn.qkv.bias {
            f(b);
        }
        f(&self.attn.proj.weight);
        if let Some(b) = &self.attn.proj.bias {
            f(b);
        }
        f(&self.attn.rel_bias);
        f(&self.norm2.gamma);
        f(&self.norm2.beta);
        f(&self.mlp_fc1.weight);
        if let Some(b) = &self.mlp_fc1.bias {
            f(b);
        }
        f(&self.mlp_fc2.weight);
        if let Some(b) = &self.mlp_fc2.bias {
            f(b);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.norm1.gamma);
        f(&mut self.norm1.beta);
        f(&mut self.attn.qkv.weight);
        if let Some(b) = &mut self.attn.qkv.bias {
            f(b);
        }
        f(&mut self.attn.proj.weight);
        if let Some(b) = &mut self.attn.proj.bias {
            f(b);
        }
        f(&mut self.attn.rel_bias);
        f(&mut self.norm2.gamma);
        f(&mut self.norm2.beta);
        f(&mut self.mlp_fc1.weight);
        if let Some(b) = &mut self.mlp_fc1.bias {
            f(b);
        }
        f(&mut self.mlp_fc2.weight);
        if let Some(b) = &mut self.mlp_fc2.bias {
            f(b);
        }
    }
}

pub(crate) fn fill_trunc_normal<T: Element>(p: &mut Parameter<T>, rng: &mut Rng) {
    for v in p.value_mut() {
        *v = T::from_f64(rng.trunc_normal(0.02));
    }
}

pub(crate) fn fill_ones<T: Element>(p: &mut Parameter<T>) {
    for v in p.value_mut() {
        *v = T::one();
    }
}

/// Stack of layers forming one Swin transformer block.
pub struct StbParams<T: Element> {
    pub layers: Vec<StlParams<T>>,
}

/// Block-level hyperparameters (per-layer shift is derived from position).
#[derive(Debug, Clone, Copy)]
pub struct StbConfig {
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
    pub mlp_ratio: f64,
}

impl StbConfig {
    fn layer_cfg(&self, index: usize) -> StlConfig {
        StlConfig {
            dim: self.dim,
            heads: self.heads,
            window: self.window,
            shift: if index % 2 == 0 { 0 } else { self.window / 2 },
            mlp_ratio: self.mlp_ratio,
        }
    }
}

impl<T: Element> StbParams<T> {
    pub fn zeros(prefix: &str, cfg: &StbConfig, depth: usize) -> Self {
        StbParams {
            layers: (0..depth)
                .map(|i| StlParams::zeros(&format!("{prefix}.{i}"), &cfg.layer_cfg(i)))
                .collect(),
        }
    }

    pub fn init(prefix: &str, cfg: &StbConfig, depth: usize, rng: &mut Rng) -> Self {
        StbParams {
            layers: (0..depth)
                .map(|i| StlParams::init(&format!("{prefix}.{i}"), &cfg.layer_cfg(i), rng))
                .collect(),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        for layer in &self.layers {
            layer.visit(f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        for layer in &mut self.layers {
            layer.visit_mut(f);
        }
    }
}

/// Splits `[B, H, W, C]` into non-overlapping `w x w` tiles flattened
/// row-major: `[B * (H/w) * (W/w), w^2, C]`.
pub fn window_partition<T: Element>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    w: usize,
) -> Result<Tensor<T>> {
    let [b, h, wid, c] = image_dims("window_partition", x)?;
    if w == 0 || h % w != 0 || wid % w != 0 {
        return Err(Error::shape(format!(
            "window_partition: {h}x{wid} not divisible by window {w}"
        )));
    }
    let (nh, nw) = (h / w, wid / w);
    let mut map = Vec::with_capacity(x.numel());
    for bi in 0..b {
        for wy in 0..nh {
            for wx in 0..nw {
                for ty in 0..w {
                    for tx in 0..w {
                        let base = ((bi * h + wy * w + ty) * wid + wx * w + tx) * c;
                        for ci in 0..c {
                            map.push(base + ci);
                        }
                    }
                }
            }
        }
    }
    gather(tape, x, Arc::new(map), &[b * nh * nw, w * w, c])
}

/// Inverse of [`window_partition`].
pub fn window_reverse<T: Element>(
    tape: &Tape<T>,
    windows: &Tensor<T>,
    w: usize,
    h: usize,
    wid: usize,
) -> Result<Tensor<T>> {
    if windows.shape().len() != 3 || windows.shape()[1] != w * w {
        return Err(Error::shape(format!(
            "window_reverse: expected [nW, {}, C], got {:?}",
            w * w,
            windows.shape()
        )));
    }
    let c = windows.shape()[2];
    let (nh, nw) = (h / w, wid / w);
    if w == 0 || h % w != 0 || wid % w != 0 || windows.shape()[0] % (nh * nw) != 0 {
        return Err(Error::shape(format!(
            "window_reverse: window count {} incompatible with {h}x{wid}/{w}",
            windows.shape()[0]
        )));
    }
    let b = windows.shape()[0] / (nh * nw);
    let mut map = Vec::with_capacity(windows.numel());
    for bi in 0..b {
        for y in 0..h {
            for x in 0..wid {
                let win = bi * nh * nw + (y / w) * nw + (x / w);
                let t = (y % w) * w + (x % w);
                let base = (win * w * w + t) * c;
                for ci in 0..c {
                    map.push(base + ci);
                }
            }
        }
    }
    gather(tape, windows, Arc::new(map), &[b, h, wid, c])
}

/// Toroidal roll: `out(y, x) = in((y - dy) mod H, (x - dx) mod W)`.
pub fn cyclic_shift<T: Element>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    dy: i64,
    dx: i64,
) -> Result<Tensor<T>> {
    let [b, h, w, c] = image_dims("cyclic_shift", x)?;
    let mut map = Vec::with_capacity(x.numel());
    for bi in 0..b {
        for y in 0..h {
            let iy = (y as i64 - dy).rem_euclid(h as i64) as usize;
            for xx in 0..w {
                let ix = (xx as i64 - dx).rem_euclid(w as i64) as usize;
                let base = ((bi * h + iy) * w + ix) * c;
                for ci in 0..c {
                    map.push(base + ci);
                }
            }
        }
    }
    gather(tape, x, Arc::new(map), &[b, h, w, c])
}

/// Attention mask for shifted windows: `[num_windows, w^2, w^2]` with 0 where
/// two tokens come from the same pre-shift region and [`MASK_FILL`] where the
/// cyclic roll glued unrelated regions together. All zeros when `s == 0`.
pub fn build_shift_mask<T: Element>(
    h: usize,
    wid: usize,
    w: usize,
    s: usize,
) -> Result<Tensor<T>> {
    if w == 0 || h % w != 0 || wid % w != 0 {
        return Err(Error::shape(format!(
            "build_shift_mask: {h}x{wid} not divisible by window {w}"
        )));
    }
    if s != 0 && s != w / 2 {
        return Err(Error::config(format!("shift {s} must be 0 or {}", w / 2)));
    }
    let (nh, nw) = (h / w, wid / w);
    let n = w * w;
    if s == 0 {
        return Ok(Tensor::zeros(&[nh * nw, n, n]));
    }
    // Region label per pixel of the rolled grid, by pre-shift membership.
    let segment = |coord: usize, extent: usize| -> usize {
        if coord < extent - w {
            0
        } else if coord < extent - s {
            1
        } else {
            2
        }
    };
    let labels: Vec<usize> = (0..h * wid)
        .map(|i| segment(i / wid, h) * 3 + segment(i % wid, wid))
        .collect();
    let mut data = vec![T::zero(); nh * nw * n * n];
    for wy in 0..nh {
        for wx in 0..nw {
            let win = wy * nw + wx;
            // labels of the tokens inside this window, row-major
            let token_label = |t: usize| -> usize {
                let (ty, tx) = (t / w, t % w);
                labels[(wy * w + ty) * wid + wx * w + tx]
            };
            for q in 0..n {
                for k in 0..n {
                    if token_label(q) != token_label(k) {
                        data[(win * n + q) * n + k] = T::from_f64(MASK_FILL);
                    }
                }
            }
        }
    }
    Ok(Tensor::raw(vec![nh * nw, n, n], data))
}

/// `[nW, n, C] -> [nW, heads, n, C/heads]`
fn to_heads<T: Element>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    heads: usize,
) -> Result<Tensor<T>> {
    let (nw, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let hd = c / heads;
    let mut map = Vec::with_capacity(x.numel());
    for wi in 0..nw {
        for hi in 0..heads {
            for t in 0..n {
                let base = (wi * n + t) * c + hi * hd;
                for d in 0..hd {
                    map.push(base + d);
                }
            }
        }
    }
    gather(tape, x, Arc::new(map), &[nw, heads, n, hd])
}

/// `[nW, heads, n, C/heads] -> [nW, n, C]`
fn from_heads<T: Element>(tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (nw, heads, n, hd) = (
        x.shape()[0],
        x.shape()[1],
        x.shape()[2],
        x.shape()[3],
    );
    let mut map = Vec::with_capacity(x.numel());
    for wi in 0..nw {
        for t in 0..n {
            for hi in 0..heads {
                let base = ((wi * heads + hi) * n + t) * hd;
                for d in 0..hd {
                    map.push(base + d);
                }
            }
        }
    }
    gather(tape, x, Arc::new(map), &[nw, n, heads * hd])
}

/// Relative position bias expanded from the `[(2w-1)^2, heads]` table to
/// `[heads, n, n]`, indexed by the query-minus-key offset.
fn expand_rel_bias<T: Element>(
    tape: &Tape<T>,
    table: &Tensor<T>,
    w: usize,
    heads: usize,
) -> Result<Tensor<T>> {
    let n = w * w;
    let side = 2 * w - 1;
    let mut map = Vec::with_capacity(heads * n * n);
    for hi in 0..heads {
        for q in 0..n {
            let (qy, qx) = (q / w, q % w);
            for k in 0..n {
                let (ky, kx) = (k / w, k % w);
                let rel = (qy + w - 1 - ky) * side + (qx + w - 1 - kx);
                map.push(rel * heads + hi);
            }
        }
    }
    gather(tape, table, Arc::new(map), &[heads, n, n])
}

fn attention_inner<T: Element>(
    tape: &Tape<T>,
    tokens: &Tensor<T>,
    p: &WindowAttentionParams<T>,
    heads: usize,
    mask: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if tokens.shape().len() != 3 {
        return Err(Error::shape(format!(
            "window_attention: expected [nW, w^2, C], got {:?}",
            tokens.shape()
        )));
    }
    let (nw, n, c) = (tokens.shape()[0], tokens.shape()[1], tokens.shape()[2]);
    if heads == 0 || c % heads != 0 {
        return Err(Error::shape(format!(
            "window_attention: C = {c} not divisible by heads = {heads}"
        )));
    }
    let w = (n as f64).sqrt().round() as usize;
    if w * w != n {
        return Err(Error::shape(format!(
            "window_attention: token count {n} is not a square window"
        )));
    }
    p.validate(c, heads, w)?;
    let head_dim = c / heads;

    let qkv = ops::linear(tape, tokens, &p.qkv)?;
    let q = ops::slice_last(tape, &qkv, 0, c)?;
    let k = ops::slice_last(tape, &qkv, c, c)?;
    let v = ops::slice_last(tape, &qkv, 2 * c, c)?;
    let qh = to_heads(tape, &q, heads)?;
    let kh = to_heads(tape, &k, heads)?;
    let vh = to_heads(tape, &v, heads)?;

    let scores = ops::bmm_nt(tape, &qh, &kh)?;
    let scores = ops::scale(tape, &scores, 1.0 / (head_dim as f64).sqrt())?;

    let bias = {
        let table = tape.parameter(&p.rel_bias);
        expand_rel_bias(tape, &table, w, heads)?
    };
    let scores = ops::add_broadcast(tape, &scores, &bias)?;

    let scores = match mask {
        Some(m) => {
            if m.shape().len() != 3 || m.shape()[1] != n || m.shape()[2] != n || nw % m.shape()[0] != 0
            {
                return Err(Error::shape(format!(
                    "window_attention: mask {:?} incompatible with scores [{nw}, {heads}, {n}, {n}]",
                    m.shape()
                )));
            }
            // Constant: tile the per-window mask over batch and heads.
            let nm = m.shape()[0];
            let md = m.data();
            let mut tiled = vec![T::zero(); nw * heads * n * n];
            for wi in 0..nw {
                let src = &md[(wi % nm) * n * n..(wi % nm + 1) * n * n];
                for hi in 0..heads {
                    let off = ((wi * heads) + hi) * n * n;
                    tiled[off..off + n * n].copy_from_slice(src);
                }
            }
            let mask_full = Tensor::raw(vec![nw, heads, n, n], tiled);
            ops::add(tape, &scores, &mask_full)?
        }
        None => scores,
    };

    let probs = ops::softmax_last(tape, &scores)?;
    let ctx = ops::bmm(tape, &probs, &vh)?;
    let merged = from_heads(tape, &ctx)?;
    let out = ops::linear(tape, &merged, &p.proj)?;
    Ok((probs, out))
}

/// Multi-head self-attention within each window:
/// `softmax(Q K^T / sqrt(d) + rel_bias + mask) V`, projected back to `C`.
/// No information crosses window boundaries.
pub fn window_attention<T: Element>(
    tape: &Tape<T>,
    tokens: &Tensor<T>,
    p: &WindowAttentionParams<T>,
    heads: usize,
    mask: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    attention_inner(tape, tokens, p, heads, mask).map(|(_, out)| out)
}

/// The post-softmax attention weights `[nW, heads, w^2, w^2]`; exposed for
/// verification of the probability-row and masking invariants.
pub fn window_attention_probs<T: Element>(
    tokens: &Tensor<T>,
    p: &WindowAttentionParams<T>,
    heads: usize,
    mask: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let tape = Tape::inference();
    attention_inner(&tape, tokens, p, heads, mask).map(|(probs, _)| probs)
}

/// One Swin transformer layer over `[B, H*W, C]` tokens:
/// pre-norm (shifted-)window attention residual, then pre-norm MLP residual.
pub fn stl_forward<T: Element>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    cfg: &StlConfig,
    p: &StlParams<T>,
    h: usize,
    wid: usize,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    if x.shape().len() != 3 || x.shape()[1] != h * wid || x.shape()[2] != cfg.dim {
        return Err(Error::shape(format!(
            "stl_forward: expected [B, {}, {}], got {:?}",
            h * wid,
            cfg.dim,
            x.shape()
        )));
    }
    if h % cfg.window != 0 || wid % cfg.window != 0 {
        return Err(Error::shape(format!(
            "stl_forward: {h}x{wid} not divisible by window {}",
            cfg.window
        )));
    }
    let b = x.shape()[0];
    let (w, s) = (cfg.window, cfg.shift);

    // Attention branch.
    let y = ops::layer_norm(tape, x, &p.norm1)?;
    let y = ops::reshape(tape, &y, &[b, h, wid, cfg.dim])?;
    let y = if s > 0 {
        cyclic_shift(tape, &y, -(s as i64), -(s as i64))?
    } else {
        y
    };
    let windows = window_partition(tape, &y, w)?;
    let mask = if s > 0 {
        Some(build_shift_mask::<T>(h, wid, w, s)?)
    } else {
        None
    };
    let attn = window_attention(tape, &windows, &p.attn, cfg.heads, mask.as_ref())?;
    let y = window_reverse(tape, &attn, w, h, wid)?;
    let y = if s > 0 {
        cyclic_shift(tape, &y, s as i64, s as i64)?
    } else {
        y
    };
    let y = ops::reshape(tape, &y, &[b, h * wid, cfg.dim])?;
    let x = ops::add(tape, x, &y)?;

    // MLP branch.
    let z = ops::layer_norm(tape, &x, &p.norm2)?;
    let z = ops::linear(tape, &z, &p.mlp_fc1)?;
    let z = ops::gelu(tape, &z)?;
    let z = ops::linear(tape, &z, &p.mlp_fc2)?;
    ops::add(tape, &x, &z)
}

/// A Swin transformer block: an even stack of layers alternating plain and
/// shifted window attention.
pub fn stb_forward<T: Element>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    cfg: &StbConfig,
    p: &StbParams<T>,
    h: usize,
    wid: usize,
) -> Result<Tensor<T>> {
    if p.layers.len() % 2 != 0 || p.layers.is_empty() {
        return Err(Error::config(format!(
            "stb_forward: depth {} must be even and positive",
            p.layers.len()
        )));
    }
    let mut y = x.clone();
    for (i, layer) in p.layers.iter().enumerate() {
        y = stl_forward(tape, &y, &cfg.layer_cfg(i), layer, h, wid)?;
    }
    Ok(y)
}

fn image_dims<T: Element>(op: &str, x: &Tensor<T>) -> Result<[usize; 4]> {
    if x.shape().len() != 4 {
        return Err(Error::shape(format!(
            "{op}: expected [B, H, W, C], got {:?}",
            x.shape()
        )));
    }
    Ok([x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]])
}
