//! Compact vision transformer over stacked channel scaleograms.
//!
//! Every channel image is cut into `patch_size²` patches; all channels'
//! patches form one token sequence (channel-major, then row-major patches).
//! Each token gets a linear patch embedding plus a learned channel embedding
//! and a learned patch-position embedding shared across channels. A learned
//! class token is prepended, so the sequence length is
//! `T = 1 + n_channels * patches_per_channel`.
//!
//! Encoder blocks are pre-norm:
//!
//! ```text
//! h  = x + Dropout(Attn(LN1(x)))
//! x' = h + Dropout(W2 · GELU(W1 · LN2(h)))
//! ```
//!
//! where `Attn` is Linformer attention: keys and values are projected along
//! the sequence axis by learned `[k x T]` matrices `E` and `F` (shared by all
//! heads of a layer), then `softmax(Q (E K)^T / sqrt(d_head)) (F V)` per head.
//! The final class-token state goes through a layer norm and a linear head.
//!
//! Gradients are computed analytically by [`backward`].

mod ops;
pub mod checkpoint;

use ndarray::{s, Array1, Array2, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng;

pub use ops::{gelu, gelu_grad, layer_norm, softmax_rows};
use ops::{layer_norm_backward, softmax_rows_backward, LnCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    /// Four quadrant logits.
    Classify4,
    /// Unbounded (valence, arousal) estimates.
    Regress2,
}

impl HeadKind {
    pub fn out_dim(self) -> usize {
        match self {
            HeadKind::Classify4 => 4,
            HeadKind::Regress2 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub n_heads: usize,
    pub linformer_k: usize,
    pub mlp_dim: usize,
    pub n_channels: usize,
    pub head: HeadKind,
    pub dropout_rate: f64,
}

impl ModelConfig {
    /// 224×224 input, patch 16, width 128, 4 layers of 4 heads, k = 64.
    pub fn default_for(n_channels: usize, head: HeadKind) -> Self {
        Self {
            image_height: 224,
            image_width: 224,
            patch_size: 16,
            embed_dim: 128,
            depth: 4,
            n_heads: 4,
            linformer_k: 64,
            mlp_dim: 256,
            n_channels,
            head,
            dropout_rate: 0.1,
        }
    }

    /// Desk-scale preset: 224×224 input, patch 28, width 32, 2 layers.
    pub fn small(n_channels: usize, head: HeadKind) -> Self {
        Self {
            image_height: 224,
            image_width: 224,
            patch_size: 28,
            embed_dim: 32,
            depth: 2,
            n_heads: 2,
            linformer_k: 32,
            mlp_dim: 64,
            n_channels,
            head,
            dropout_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        if self.patch_size == 0
            || !self.image_height.is_multiple_of(self.patch_size)
            || !self.image_width.is_multiple_of(self.patch_size)
            || self.image_height == 0
            || self.image_width == 0
        {
            return bad(format!(
                "image {}x{} not divisible by patch {}",
                self.image_height, self.image_width, self.patch_size
            ));
        }
        if self.n_heads == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.n_heads) {
            return bad(format!(
                "embed_dim {} not divisible by {} heads",
                self.embed_dim, self.n_heads
            ));
        }
        if self.linformer_k == 0 || self.linformer_k > self.n_tokens() {
            return bad(format!(
                "linformer_k {} must be in 1..={}",
                self.linformer_k,
                self.n_tokens()
            ));
        }
        if self.n_channels == 0 || self.mlp_dim == 0 || self.depth == 0 {
            return bad("n_channels, mlp_dim and depth must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} not in [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    pub fn patches_per_channel(&self) -> usize {
        (self.image_height / self.patch_size) * (self.image_width / self.patch_size)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// Sequence length including the class token.
    pub fn n_tokens(&self) -> usize {
        1 + self.n_channels * self.patches_per_channel()
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    /// Closed-form number of learnable scalars:
    ///
    /// ```text
    /// patch:   p²·D + D        cls: D      channel: C·D     position: P·D
    /// layer:   4·(D² + D) + 2·k·T + 4·D + D·M + M + M·D + D
    /// final:   2·D + D·O + O
    /// ```
    pub fn param_count(&self) -> usize {
        let (d, m, k, t) = (self.embed_dim, self.mlp_dim, self.linformer_k, self.n_tokens());
        let o = self.head.out_dim();
        let stem = self.patch_dim() * d + d + d + self.n_channels * d + self.patches_per_channel() * d;
        let layer = 4 * (d * d + d) + 2 * k * t + 4 * d + d * m + m + m * d + d;
        stem + self.depth * layer + 2 * d + d * o + o
    }
}

/// Splits `[C x H x W]` images into `[C·P x p²]` tokens, channel-major then
/// row-major patches, pixels row-major within a patch.
pub fn patchify(images: ArrayView3<f32>, patch_size: usize) -> Result<Array2<f64>> {
    let (c, h, w) = images.dim();
    if patch_size == 0 || h % patch_size != 0 || w % patch_size != 0 {
        return Err(Error::BadShape(format!(
            "{h}x{w} image not divisible by patch {patch_size}"
        )));
    }
    let (ph, pw) = (h / patch_size, w / patch_size);
    let mut out = Array2::zeros((c * ph * pw, patch_size * patch_size));
    for ch in 0..c {
        for pr in 0..ph {
            for pc in 0..pw {
                let mut row = out.row_mut(ch * ph * pw + pr * pw + pc);
                for y in 0..patch_size {
                    for x in 0..patch_size {
                        row[y * patch_size + x] =
                            images[[ch, pr * patch_size + y, pc * patch_size + x]] as f64;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Learnable tensors of one encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    /// Key projection along the sequence, `[k x T]`.
    pub e_proj: Array2<f64>,
    /// Value projection along the sequence, `[k x T]`.
    pub f_proj: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// All learnable tensors. Gradients use the same structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub patch_w: Array2<f64>,
    pub patch_b: Array1<f64>,
    pub cls_token: Array1<f64>,
    pub channel_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub ln_f_g: Array1<f64>,
    pub ln_f_b: Array1<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

/// Read-only view of one tensor, as listed by [`ModelParams::tensors`].
#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, e_proj, f_proj, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2)
    };
}

impl ModelParams {
    /// Truncated-normal (std 0.02) weights and embeddings, zero biases,
    /// unit layer-norm scales. The sequence projections `E`/`F` use std
    /// `1/sqrt(T)` so that projected keys keep the scale of a single token.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::rng_from(seed, &[0x1417]);
        let (d, m, k, t) = (config.embed_dim, config.mlp_dim, config.linformer_k, config.n_tokens());
        let mut tn = |rows: usize, cols: usize, std: f64| {
            Array2::from_shape_simple_fn((rows, cols), || rng::truncated_normal(&mut r, std))
        };
        let w = 0.02;
        let patch_w = tn(config.patch_dim(), d, w);
        let cls_token = tn(1, d, w).into_shape_with_order(d).unwrap();
        let channel_emb = tn(config.n_channels, d, w);
        let pos_emb = tn(config.patches_per_channel(), d, w);
        let proj_std = (t as f64).sqrt().recip();
        let layers = (0..config.depth)
            .map(|_| LayerParams {
                ln1_g: Array1::ones(d),
                ln1_b: Array1::zeros(d),
                wq: tn(d, d, w),
                bq: Array1::zeros(d),
                wk: tn(d, d, w),
                bk: Array1::zeros(d),
                wv: tn(d, d, w),
                bv: Array1::zeros(d),
                e_proj: tn(k, t, proj_std),
                f_proj: tn(k, t, proj_std),
                wo: tn(d, d, w),
                bo: Array1::zeros(d),
                ln2_g: Array1::ones(d),
                ln2_b: Array1::zeros(d),
                w1: tn(d, m, w),
                b1: Array1::zeros(m),
                w2: tn(m, d, w),
                b2: Array1::zeros(d),
            })
            .collect();
        let head_w = tn(d, config.head.out_dim(), w);
        Ok(Self {
            patch_w,
            patch_b: Array1::zeros(d),
            cls_token,
            channel_emb,
            pos_emb,
            layers,
            ln_f_g: Array1::ones(d),
            ln_f_b: Array1::zeros(d),
            head_w,
            head_b: Array1::zeros(config.head.out_dim()),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|x| x.fill(0.0));
        z
    }

    /// Tensors in canonical order: patch_w, patch_b, cls_token, channel_emb,
    /// pos_emb, then per layer ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, e_proj,
    /// f_proj, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2, then ln_f_g, ln_f_b,
    /// head_w, head_b.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        macro_rules! push {
            ($name:expr, $t:expr) => {
                out.push(TensorRef {
                    name: $name.to_string(),
                    shape: $t.shape().to_vec(),
                    data: $t.as_slice().expect("standard layout"),
                })
            };
        }
        push!("patch_w", self.patch_w);
        push!("patch_b", self.patch_b);
        push!("cls_token", self.cls_token);
        push!("channel_emb", self.channel_emb);
        push!("pos_emb", self.pos_emb);
        for (i, l) in self.layers.iter().enumerate() {
            macro_rules! each {
                ($($f:ident),*) => { $( push!(format!("layers.{i}.{}", stringify!($f)), l.$f); )* };
            }
            layer_fields!(each);
        }
        push!("ln_f_g", self.ln_f_g);
        push!("ln_f_b", self.ln_f_b);
        push!("head_w", self.head_w);
        push!("head_b", self.head_b);
        out
    }

    /// Mutable slices in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        macro_rules! push {
            ($t:expr) => {
                out.push($t.as_slice_mut().expect("standard layout"))
            };
        }
        push!(self.patch_w);
        push!(self.patch_b);
        push!(self.cls_token);
        push!(self.channel_emb);
        push!(self.pos_emb);
        for l in self.layers.iter_mut() {
            macro_rules! each {
                ($($f:ident),*) => { $( push!(l.$f); )* };
            }
            layer_fields!(each);
        }
        push!(self.ln_f_g);
        push!(self.ln_f_b);
        push!(self.head_w);
        push!(self.head_b);
        out
    }

    /// Forces row-major storage everywhere (matrix products may return
    /// column-major results).
    fn make_standard(&mut self) {
        fn fix<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) {
            if !a.is_standard_layout() {
                *a = a.as_standard_layout().into_owned();
            }
        }
        fix(&mut self.patch_w);
        fix(&mut self.patch_b);
        fix(&mut self.cls_token);
        fix(&mut self.channel_emb);
        fix(&mut self.pos_emb);
        for l in self.layers.iter_mut() {
            macro_rules! each {
                ($($f:ident),*) => { $( fix(&mut l.$f); )* };
            }
            layer_fields!(each);
        }
        fix(&mut self.ln_f_g);
        fix(&mut self.ln_f_b);
        fix(&mut self.head_w);
        fix(&mut self.head_b);
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for t in self.tensors_mut() {
            f(t);
        }
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let src = other.tensors();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            dst.iter_mut().zip(s.data).for_each(|(d, v)| *d += scale * v);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.for_each_mut(|t| t.iter_mut().for_each(|v| *v *= factor));
    }

    /// Checks every tensor shape against `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let reference = ModelParams::shapes(config);
        let actual: Vec<Vec<usize>> = self.tensors().into_iter().map(|t| t.shape).collect();
        if actual != reference {
            return Err(Error::BadShape("parameters do not match model config".into()));
        }
        Ok(())
    }

    /// Tensor shapes in canonical order for `config`.
    pub fn shapes(config: &ModelConfig) -> Vec<Vec<usize>> {
        let (d, m, k, t) = (config.embed_dim, config.mlp_dim, config.linformer_k, config.n_tokens());
        let o = config.head.out_dim();
        let mut v = vec![
            vec![config.patch_dim(), d],
            vec![d],
            vec![d],
            vec![config.n_channels, d],
            vec![config.patches_per_channel(), d],
        ];
        for _ in 0..config.depth {
            v.extend([
                vec![d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![k, t],
                vec![k, t],
                vec![d, d],
                vec![d],
                vec![d],
                vec![d],
                vec![d, m],
                vec![m],
                vec![m, d],
                vec![d],
            ]);
        }
        v.extend([vec![d], vec![d], vec![d, o], vec![o]]);
        v
    }
}

/// Dropout on or off; the seed fixes every mask of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

#[derive(Debug, Clone)]
struct AttnCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    kp: Array2<f64>,
    vp: Array2<f64>,
    /// Post-softmax probabilities per head, `[T x k]`.
    probs: Vec<Array2<f64>>,
    heads_out: Array2<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    ln1_out: Array2<f64>,
    ln1: LnCache,
    attn: AttnCache,
    drop1: Option<Array2<f64>>,
    ln2_out: Array2<f64>,
    ln2: LnCache,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    drop2: Option<Array2<f64>>,
}

/// Activations of one sample, needed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    patches: Array2<f64>,
    layers: Vec<LayerCache>,
    final_ln: LnCache,
    pooled: Array1<f64>,
}

/// Output of [`linformer_attention`].
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub output: Array2<f64>,
    /// Per-head `[T x k]` probability matrices.
    pub probs: Vec<Array2<f64>>,
}

fn attention_forward(x: ArrayView2<f64>, layer: &LayerParams, n_heads: usize) -> Result<(Array2<f64>, AttnCache)> {
    let (t, d) = x.dim();
    if layer.wq.dim() != (d, d) || layer.e_proj.ncols() != t || layer.f_proj.dim() != layer.e_proj.dim() {
        return Err(Error::BadShape(format!(
            "attention input {t}x{d} vs projections {:?}/{:?}",
            layer.wq.dim(),
            layer.e_proj.dim()
        )));
    }
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::BadShape(format!("{d} not divisible into {n_heads} heads")));
    }
    let dh = d / n_heads;
    let scale = (dh as f64).sqrt().recip();
    let q = x.dot(&layer.wq) + &layer.bq;
    let k = x.dot(&layer.wk) + &layer.bk;
    let v = x.dot(&layer.wv) + &layer.bv;
    let kp = layer.e_proj.dot(&k);
    let vp = layer.f_proj.dot(&v);
    let mut heads_out = Array2::zeros((t, d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut a = q.slice(cols).dot(&kp.slice(cols).t()) * scale;
        softmax_rows(&mut a);
        heads_out.slice_mut(cols).assign(&a.dot(&vp.slice(cols)));
        probs.push(a);
    }
    let output = heads_out.dot(&layer.wo) + &layer.bo;
    Ok((
        output,
        AttnCache {
            q,
            k,
            v,
            kp,
            vp,
            probs,
            heads_out,
        },
    ))
}

/// Linformer multi-head attention over `tokens [T x D]`; output has the same
/// shape.
pub fn linformer_attention(tokens: ArrayView2<f64>, layer: &LayerParams, n_heads: usize) -> Result<AttentionOutput> {
    let (output, cache) = attention_forward(tokens, layer, n_heads)?;
    Ok(AttentionOutput {
        output,
        probs: cache.probs,
    })
}

fn dropout_mask(rng: &mut rng::Rng, shape: (usize, usize), rate: f64) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_simple_fn(shape, || {
        if rng::unit_f64(rng) < keep {
            keep.recip()
        } else {
            0.0
        }
    })
}

/// Forward pass of one `[C x H x W]` sample. `sample_seed` drives dropout
/// when `Some` and the rate is positive.
pub fn forward_sample(
    params: &ModelParams,
    config: &ModelConfig,
    image: ArrayView3<f32>,
    sample_seed: Option<u64>,
) -> Result<(Array1<f64>, ForwardCache)> {
    let expected = (config.n_channels, config.image_height, config.image_width);
    if image.dim() != expected {
        return Err(Error::BadShape(format!(
            "input {:?}, model expects {:?}",
            image.dim(),
            expected
        )));
    }
    let patches = patchify(image, config.patch_size)?;
    let per_channel = config.patches_per_channel();
    let t = config.n_tokens();
    let d = config.embed_dim;

    let embedded = patches.dot(&params.patch_w) + &params.patch_b;
    let mut x = Array2::zeros((t, d));
    x.row_mut(0).assign(&params.cls_token);
    for (i, row) in embedded.rows().into_iter().enumerate() {
        let (ch, pos) = (i / per_channel, i % per_channel);
        let mut dst = x.row_mut(i + 1);
        dst.assign(&row);
        dst += &params.channel_emb.row(ch);
        dst += &params.pos_emb.row(pos);
    }

    let mut dropout_rng = match sample_seed {
        Some(seed) if config.dropout_rate > 0.0 => Some(rng::rng_from(seed, &[0xD20F])),
        _ => None,
    };
    let mut layers = Vec::with_capacity(config.depth);
    for layer in &params.layers {
        let (ln1_out, ln1) = layer_norm(x.view(), layer.ln1_g.view(), layer.ln1_b.view());
        let (mut attn_out, attn) = attention_forward(ln1_out.view(), layer, config.n_heads)?;
        let drop1 = dropout_rng
            .as_mut()
            .map(|r| dropout_mask(r, attn_out.dim(), config.dropout_rate));
        if let Some(mask) = &drop1 {
            attn_out *= mask;
        }
        x += &attn_out;

        let (ln2_out, ln2) = layer_norm(x.view(), layer.ln2_g.view(), layer.ln2_b.view());
        let pre_act = ln2_out.dot(&layer.w1) + &layer.b1;
        let act = pre_act.mapv(gelu);
        let mut mlp_out = act.dot(&layer.w2) + &layer.b2;
        let drop2 = dropout_rng
            .as_mut()
            .map(|r| dropout_mask(r, mlp_out.dim(), config.dropout_rate));
        if let Some(mask) = &drop2 {
            mlp_out *= mask;
        }
        x += &mlp_out;

        layers.push(LayerCache {
            ln1_out,
            ln1,
            attn,
            drop1,
            ln2_out,
            ln2,
            pre_act,
            act,
            drop2,
        });
    }

    let cls = x.slice(s![0..1, ..]);
    let (pooled, final_ln) = layer_norm(cls, params.ln_f_g.view(), params.ln_f_b.view());
    let pooled = pooled.row(0).to_owned();
    let output = pooled.dot(&params.head_w) + &params.head_b;
    if output.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model output"));
    }
    Ok((
        output,
        ForwardCache {
            patches,
            layers,
            final_ln,
            pooled,
        },
    ))
}

/// Batched forward. Row `i` of the result is sample `i`'s output; in train
/// mode sample `i` draws dropout masks from stream `(seed, i)`.
pub fn forward(
    inputs: &[ArrayView3<f32>],
    params: &ModelParams,
    config: &ModelConfig,
    mode: Mode,
    exec: Exec,
) -> Result<(Array2<f64>, Vec<ForwardCache>)> {
    if inputs.is_empty() {
        return Err(Error::EmptyData);
    }
    let results = exec.try_map(inputs.len(), |i| {
        let seed = match mode {
            Mode::Eval => None,
            Mode::Train { seed } => Some(rng::derive_seed(seed, &[i as u64])),
        };
        forward_sample(params, config, inputs[i], seed)
    })?;
    let mut out = Array2::zeros((inputs.len(), config.head.out_dim()));
    let mut caches = Vec::with_capacity(inputs.len());
    for (mut row, (o, c)) in out.rows_mut().into_iter().zip(results) {
        row.assign(&o);
        caches.push(c);
    }
    Ok((out, caches))
}

fn outer(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Gradient of `d_output · output` with respect to every parameter, for one
/// cached sample.
pub fn backward_sample(
    params: &ModelParams,
    config: &ModelConfig,
    cache: &ForwardCache,
    d_output: ndarray::ArrayView1<f64>,
) -> Result<ModelParams> {
    if d_output.len() != config.head.out_dim() {
        return Err(Error::BadShape("output gradient length".into()));
    }
    let mut g = params.zeros_like();
    let t = config.n_tokens();
    let d = config.embed_dim;
    let dh = config.head_dim();
    let scale = (dh as f64).sqrt().recip();

    g.head_w = outer(cache.pooled.view(), d_output);
    g.head_b = d_output.to_owned();
    let d_pooled = params.head_w.dot(&d_output).insert_axis(Axis(0));
    let d_cls = layer_norm_backward(
        d_pooled.view(),
        &cache.final_ln,
        params.ln_f_g.view(),
        &mut g.ln_f_g,
        &mut g.ln_f_b,
    );
    let mut dx = Array2::<f64>::zeros((t, d));
    dx.row_mut(0).assign(&d_cls.row(0));

    for (li, (layer, lc)) in params.layers.iter().zip(&cache.layers).enumerate().rev() {
        let gl = &mut g.layers[li];

        // MLP branch.
        let mut d_mlp = dx.clone();
        if let Some(mask) = &lc.drop2 {
            d_mlp *= mask;
        }
        gl.w2 = lc.act.t().dot(&d_mlp);
        gl.b2 = d_mlp.sum_axis(Axis(0));
        let mut d_pre = d_mlp.dot(&layer.w2.t());
        ndarray::Zip::from(&mut d_pre)
            .and(&lc.pre_act)
            .for_each(|g, &u| *g *= gelu_grad(u));
        gl.w1 = lc.ln2_out.t().dot(&d_pre);
        gl.b1 = d_pre.sum_axis(Axis(0));
        let d_ln2 = d_pre.dot(&layer.w1.t());
        dx += &layer_norm_backward(d_ln2.view(), &lc.ln2, layer.ln2_g.view(), &mut gl.ln2_g, &mut gl.ln2_b);

        // Attention branch.
        let mut d_attn = dx.clone();
        if let Some(mask) = &lc.drop1 {
            d_attn *= mask;
        }
        let ac = &lc.attn;
        gl.wo = ac.heads_out.t().dot(&d_attn);
        gl.bo = d_attn.sum_axis(Axis(0));
        let d_heads = d_attn.dot(&layer.wo.t());
        let mut dq = Array2::<f64>::zeros((t, d));
        let mut dkp = Array2::<f64>::zeros(ac.kp.dim());
        let mut dvp = Array2::<f64>::zeros(ac.vp.dim());
        for (h, probs) in ac.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let d_oh = d_heads.slice(cols);
            let d_probs = d_oh.dot(&ac.vp.slice(cols).t());
            dvp.slice_mut(cols).assign(&probs.t().dot(&d_oh));
            let d_scores = softmax_rows_backward(probs.view(), d_probs.view()) * scale;
            dq.slice_mut(cols).assign(&d_scores.dot(&ac.kp.slice(cols)));
            dkp.slice_mut(cols).assign(&d_scores.t().dot(&ac.q.slice(cols)));
        }
        gl.e_proj = dkp.dot(&ac.k.t());
        gl.f_proj = dvp.dot(&ac.v.t());
        let dk = layer.e_proj.t().dot(&dkp);
        let dv = layer.f_proj.t().dot(&dvp);
        let ln1_t = lc.ln1_out.t();
        gl.wq = ln1_t.dot(&dq);
        gl.bq = dq.sum_axis(Axis(0));
        gl.wk = ln1_t.dot(&dk);
        gl.bk = dk.sum_axis(Axis(0));
        gl.wv = ln1_t.dot(&dv);
        gl.bv = dv.sum_axis(Axis(0));
        let d_ln1 = dq.dot(&layer.wq.t()) + dk.dot(&layer.wk.t()) + dv.dot(&layer.wv.t());
        dx += &layer_norm_backward(d_ln1.view(), &lc.ln1, layer.ln1_g.view(), &mut gl.ln1_g, &mut gl.ln1_b);
    }

    g.cls_token = dx.row(0).to_owned();
    let d_tokens = dx.slice(s![1.., ..]);
    g.patch_w = cache.patches.t().dot(&d_tokens);
    g.patch_b = d_tokens.sum_axis(Axis(0));
    let per_channel = config.patches_per_channel();
    for (i, row) in d_tokens.rows().into_iter().enumerate() {
        let (ch, pos) = (i / per_channel, i % per_channel);
        let mut ce = g.channel_emb.row_mut(ch);
        ce += &row;
        let mut pe = g.pos_emb.row_mut(pos);
        pe += &row;
    }
    g.make_standard();
    if !g.is_finite() {
        return Err(Error::NonFinite("gradients"));
    }
    Ok(g)
}

/// Sum over samples of per-sample gradients, reduced in sample order.
pub fn backward(
    params: &ModelParams,
    config: &ModelConfig,
    caches: &[ForwardCache],
    d_outputs: ArrayView2<f64>,
    exec: Exec,
) -> Result<ModelParams> {
    if caches.len() != d_outputs.nrows() || caches.is_empty() {
        return Err(Error::BadShape("one output gradient per cached sample".into()));
    }
    let grads = exec.try_map(caches.len(), |i| {
        backward_sample(params, config, &caches[i], d_outputs.row(i))
    })?;
    let mut iter = grads.into_iter();
    let mut total = iter.next().expect("non-empty");
    for g in iter {
        total.add_scaled(&g, 1.0);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    pub(crate) fn tiny(n_channels: usize, head: HeadKind) -> ModelConfig {
        ModelConfig {
            image_height: 8,
            image_width: 8,
            patch_size: 4,
            embed_dim: 16,
            depth: 1,
            n_heads: 1,
            linformer_k: 4,
            mlp_dim: 24,
            n_channels,
            head,
            dropout_rate: 0.0,
        }
    }

    fn random_images(seed: u64, c: usize, h: usize, w: usize) -> Array3<f32> {
        let mut r = rng::rng_from(seed, &[]);
        Array3::from_shape_simple_fn((c, h, w), || rng::unit_f64(&mut r) as f32)
    }

    #[test]
    fn patchify_shapes() {
        let img = Array3::<f32>::zeros((1, 224, 224));
        let p = patchify(img.view(), 16).unwrap();
        assert_eq!(p.dim(), (196, 256));
        let img = Array3::<f32>::zeros((12, 224, 224));
        assert_eq!(patchify(img.view(), 16).unwrap().nrows(), 2352);
        let img = Array3::<f32>::from_elem((2, 32, 32), 0.5);
        assert!(patchify(img.view(), 16).unwrap().iter().all(|&v| v == 0.5));
        assert!(matches!(patchify(img.view(), 5), Err(Error::BadShape(_))));
    }

    #[test]
    fn patchify_order() {
        let img = Array3::from_shape_fn((2, 4, 4), |(c, y, x)| (c * 100 + y * 10 + x) as f32);
        let p = patchify(img.view(), 2).unwrap();
        // token 1 = channel 0, patch row 0, patch col 1
        assert_eq!(p.row(1).to_vec(), vec![2.0, 3.0, 12.0, 13.0]);
        // token 6 = channel 1, patch row 1, patch col 0
        assert_eq!(p.row(6).to_vec(), vec![120.0, 121.0, 130.0, 131.0]);
    }

    #[test]
    fn param_count_matches_closed_form() {
        for cfg in [
            ModelConfig::default_for(4, HeadKind::Classify4),
            ModelConfig::small(12, HeadKind::Regress2),
            tiny(2, HeadKind::Classify4),
        ] {
            let p = ModelParams::init(&cfg, 0).unwrap();
            assert_eq!(p.count(), cfg.param_count());
            p.check_shapes(&cfg).unwrap();
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny(1, HeadKind::Classify4);
        c.patch_size = 3;
        assert!(c.validate().is_err());
        let mut c = tiny(1, HeadKind::Classify4);
        c.n_heads = 3;
        assert!(c.validate().is_err());
        let mut c = tiny(1, HeadKind::Classify4);
        c.linformer_k = 6;
        assert!(c.validate().is_err());
        let mut c = tiny(1, HeadKind::Classify4);
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn output_shape_and_zero_head() {
        let cfg = tiny(2, HeadKind::Classify4);
        let mut p = ModelParams::init(&cfg, 3).unwrap();
        let imgs: Vec<Array3<f32>> = (0..3).map(|i| random_images(i, 2, 8, 8)).collect();
        let views: Vec<_> = imgs.iter().map(|a| a.view()).collect();
        let (out, _) = forward(&views, &p, &cfg, Mode::Eval, Exec::Sequential).unwrap();
        assert_eq!(out.dim(), (3, 4));
        p.head_w.fill(0.0);
        p.head_b.fill(0.0);
        let (out, _) = forward(&views, &p, &cfg, Mode::Eval, Exec::Sequential).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_deterministic_and_batch_equivariant() {
        let mut cfg = tiny(2, HeadKind::Regress2);
        cfg.dropout_rate = 0.3;
        let p = ModelParams::init(&cfg, 4).unwrap();
        let imgs: Vec<Array3<f32>> = (0..4).map(|i| random_images(10 + i, 2, 8, 8)).collect();
        let views: Vec<_> = imgs.iter().map(|a| a.view()).collect();
        let (a, _) = forward(&views, &p, &cfg, Mode::Eval, Exec::Sequential).unwrap();
        let (b, _) = forward(&views, &p, &cfg, Mode::Eval, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        let rev: Vec<_> = views.iter().rev().cloned().collect();
        let (c, _) = forward(&rev, &p, &cfg, Mode::Eval, Exec::Sequential).unwrap();
        for i in 0..4 {
            assert_eq!(a.row(i), c.row(3 - i));
        }
        let (t1, _) = forward(&views, &p, &cfg, Mode::Train { seed: 1 }, Exec::Parallel).unwrap();
        let (t2, _) = forward(&views, &p, &cfg, Mode::Train { seed: 1 }, Exec::Sequential).unwrap();
        assert_eq!(t1, t2);
        assert_ne!(t1, a);
    }

    #[test]
    fn wrong_input_shape() {
        let cfg = tiny(2, HeadKind::Classify4);
        let p = ModelParams::init(&cfg, 0).unwrap();
        let img = random_images(0, 3, 8, 8);
        assert!(matches!(
            forward_sample(&p, &cfg, img.view(), None),
            Err(Error::BadShape(_))
        ));
    }

    #[test]
    fn attention_rows_are_distributions_and_symmetric() {
        let cfg = tiny(2, HeadKind::Classify4);
        let p = ModelParams::init(&cfg, 8).unwrap();
        let mut r = rng::rng_from(2, &[]);
        let x = Array2::from_shape_simple_fn((cfg.n_tokens(), 16), || rng::normal(&mut r));
        let out = linformer_attention(x.view(), &p.layers[0], 1).unwrap();
        assert_eq!(out.output.dim(), x.dim());
        for probs in &out.probs {
            for row in probs.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
        let row = x.row(0).to_owned();
        let same = Array2::from_shape_fn(x.dim(), |(_, j)| row[j]);
        let out = linformer_attention(same.view(), &p.layers[0], 1).unwrap();
        for r in out.output.rows() {
            for (a, b) in r.iter().zip(out.output.row(0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_input_gives_zero_patch_weight_gradient() {
        let cfg = tiny(1, HeadKind::Classify4);
        let p = ModelParams::init(&cfg, 1).unwrap();
        let img = Array3::<f32>::zeros((1, 8, 8));
        let (_, cache) = forward_sample(&p, &cfg, img.view(), None).unwrap();
        let d = ndarray::arr1(&[0.3, -0.1, 0.5, 0.2]);
        let g = backward_sample(&p, &cfg, &cache, d.view()).unwrap();
        assert!(g.patch_w.iter().all(|&v| v == 0.0));
        assert!(g.patch_b.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn gradient_linear_in_upstream() {
        let cfg = tiny(2, HeadKind::Regress2);
        let p = ModelParams::init(&cfg, 5).unwrap();
        let img = random_images(3, 2, 8, 8);
        let (_, cache) = forward_sample(&p, &cfg, img.view(), None).unwrap();
        let d = ndarray::arr1(&[0.7, -1.3]);
        let g1 = backward_sample(&p, &cfg, &cache, d.view()).unwrap();
        let g2 = backward_sample(&p, &cfg, &cache, (&d * 2.0).view()).unwrap();
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.data.iter().zip(b.data) {
                assert!((2.0 * x - y).abs() <= 1e-9 * y.abs().max(1e-12));
            }
        }
    }
}
