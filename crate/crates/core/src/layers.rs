//! Neural building blocks: linear, LSTM/BLSTM, layer norm, multi-head
//! attention, the convolution module, positional encoding, and the mask-head
//! activations.
//!
//! Layers own [`Param`] handles registered in a [`ParamSet`]; a forward pass
//! views them through a [`Binder`] (taped for training, constant for
//! evaluation). Sequences are `[T x dim]` tensors, one row per frame.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Binder, Param, ParamSet, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Uniform init in `[-scale, scale]`.
pub fn uniform_init<S: Scalar>(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<S> {
    (0..n).map(|_| S::of_f64(rng.gen_range(-scale..scale))).collect()
}

/// Glorot-uniform init for a `[rows x cols]` weight.
pub fn glorot_init<S: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<S> {
    let scale = (6.0 / (rows + cols) as f64).sqrt();
    uniform_init(rng, rows * cols, scale)
}

/// `x W + b` with `W` stored `[in x out]`.
pub struct Linear<S: Scalar> {
    pub w: Arc<Param<S>>,
    pub b: Option<Arc<Param<S>>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(
        params: &mut ParamSet<S>,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = params.register(
            format!("{prefix}.w"),
            in_dim,
            out_dim,
            glorot_init(rng, in_dim, out_dim),
        );
        let b = bias.then(|| {
            params.register(format!("{prefix}.b"), 1, out_dim, vec![S::zero(); out_dim])
        });
        Linear { w, b }
    }

    pub fn forward(&self, x: &Tensor<S>, binder: &Binder<S>) -> Tensor<S> {
        let y = x.matmul(&binder.get(&self.w));
        match &self.b {
            Some(b) => y.add_row(&binder.get(b)),
            None => y,
        }
    }
}

/// Learned per-column affine normalization over each frame.
pub struct LayerNorm<S: Scalar> {
    pub g: Arc<Param<S>>,
    pub b: Arc<Param<S>>,
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(params: &mut ParamSet<S>, prefix: &str, dim: usize) -> Self {
        let g = params.register(format!("{prefix}.g"), 1, dim, vec![S::one(); dim]);
        let b = params.register(format!("{prefix}.b"), 1, dim, vec![S::zero(); dim]);
        LayerNorm { g, b }
    }

    pub fn forward(&self, x: &Tensor<S>, binder: &Binder<S>) -> Tensor<S> {
        x.layer_norm(
            &binder.get(&self.g),
            &binder.get(&self.b),
            S::of_f64(LAYER_NORM_EPS),
        )
    }
}

/// One LSTM direction. Gates are ordered i, f, g, o in the fused weights;
/// the forget-gate bias starts at 1.
pub struct LstmCell<S: Scalar> {
    pub w_ih: Arc<Param<S>>, // [in x 4h]
    pub w_hh: Arc<Param<S>>, // [h x 4h]
    pub b: Arc<Param<S>>,    // [1 x 4h]
    pub hidden: usize,
}

impl<S: Scalar> LstmCell<S> {
    pub fn new(
        params: &mut ParamSet<S>,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let scale = 1.0 / (hidden as f64).sqrt();
        let w_ih = params.register(
            format!("{prefix}.w_ih"),
            in_dim,
            4 * hidden,
            uniform_init(rng, in_dim * 4 * hidden, scale),
        );
        let w_hh = params.register(
            format!("{prefix}.w_hh"),
            hidden,
            4 * hidden,
            uniform_init(rng, hidden * 4 * hidden, scale),
        );
        let mut bias = vec![S::zero(); 4 * hidden];
        for v in bias.iter_mut().take(2 * hidden).skip(hidden) {
            *v = S::one();
        }
        let b = params.register(format!("{prefix}.b"), 1, 4 * hidden, bias);
        LstmCell {
            w_ih,
            w_hh,
            b,
            hidden,
        }
    }

    fn gates_to_state(
        &self,
        gates: &Tensor<S>,
        c_prev: &Tensor<S>,
    ) -> (Tensor<S>, Tensor<S>) {
        let h = self.hidden;
        let i = gates.slice_cols(0, h).sigmoid();
        let f = gates.slice_cols(h, 2 * h).sigmoid();
        let g = gates.slice_cols(2 * h, 3 * h).tanh();
        let o = gates.slice_cols(3 * h, 4 * h).sigmoid();
        let c = f.mul(c_prev).add(&i.mul(&g));
        let hidden = o.mul(&c.tanh());
        (hidden, c)
    }

    /// Single step on a `[1 x in]` frame.
    pub fn step(
        &self,
        x_t: &Tensor<S>,
        h_prev: &Tensor<S>,
        c_prev: &Tensor<S>,
        binder: &Binder<S>,
    ) -> (Tensor<S>, Tensor<S>) {
        let gates = x_t
            .matmul(&binder.get(&self.w_ih))
            .add(&h_prev.matmul(&binder.get(&self.w_hh)))
            .add_row(&binder.get(&self.b));
        self.gates_to_state(&gates, c_prev)
    }

    /// Full sequence `[T x in] -> [T x h]`, zero initial state. The input
    /// projection for all steps is batched into one matmul.
    pub fn run(&self, x: &Tensor<S>, binder: &Binder<S>) -> Tensor<S> {
        let t = x.rows();
        let h = self.hidden;
        let gates_x = x
            .matmul(&binder.get(&self.w_ih))
            .add_row(&binder.get(&self.b));
        let w_hh = binder.get(&self.w_hh);
        let mut h_prev = Tensor::zeros(1, h);
        let mut c_prev = Tensor::zeros(1, h);
        let mut outputs = Vec::with_capacity(t);
        for step in 0..t {
            let gates = gates_x
                .slice_rows(step, step + 1)
                .add(&h_prev.matmul(&w_hh));
            let (h_t, c_t) = self.gates_to_state(&gates, &c_prev);
            outputs.push(h_t.clone());
            h_prev = h_t;
            c_prev = c_t;
        }
        let refs: Vec<&Tensor<S>> = outputs.iter().collect();
        Tensor::concat_rows(&refs)
    }
}

/// Bidirectional LSTM layer: forward and time-reversed passes concatenated
/// per frame, `[T x in] -> [T x 2h]`.
pub struct Blstm<S: Scalar> {
    pub fwd: LstmCell<S>,
    pub bwd: LstmCell<S>,
}

impl<S: Scalar> Blstm<S> {
    pub fn new(
        params: &mut ParamSet<S>,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Blstm {
            fwd: LstmCell::new(params, &format!("{prefix}.fwd"), in_dim, hidden, rng),
            bwd: LstmCell::new(params, &format!("{prefix}.bwd"), in_dim, hidden, rng),
        }
    }

    pub fn run(&self, x: &Tensor<S>, binder: &Binder<S>) -> Tensor<S> {
        let forward = self.fwd.run(x, binder);
        let backward = self.bwd.run(&x.reverse_rows(), binder).reverse_rows();
        Tensor::concat_cols(&[&forward, &backward])
    }
}

/// Scaled dot-product multi-head attention with an optional additive-style
/// boolean mask (`true` blocks the position).
pub struct MultiHeadAttention<S: Scalar> {
    pub wq: Linear<S>,
    pub wk: Linear<S>,
    pub wv: Linear<S>,
    pub wo: Linear<S>,
    pub n_heads: usize,
    pub d_model: usize,
}

const ATTENTION_MASK_VALUE: f64 = -1e30;

impl<S: Scalar> MultiHeadAttention<S> {
    pub fn new(
        params: &mut ParamSet<S>,
        prefix: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(
            d_model % n_heads == 0,
            "invalid input: d_model {d_model} not divisible by {n_heads} heads"
        );
        MultiHeadAttention {
            wq: Linear::new(params, &format!("{prefix}.wq"), d_model, d_model, true, rng),
            wk: Linear::new(params, &format!("{prefix}.wk"), d_model, d_model, true, rng),
            wv: Linear::new(params, &format!("{prefix}.wv"), d_model, d_model, true, rng),
            wo: Linear::new(params, &format!("{prefix}.wo"), d_model, d_model, true, rng),
            n_heads,
            d_model,
        }
    }

    /// `query` is `[Tq x d]`, `key_value` is `[Tk x d]`; `mask` is a
    /// `[Tq x Tk]` row-major blocking mask.
    pub fn forward(
        &self,
        query: &Tensor<S>,
        key_value: &Tensor<S>,
        mask: Option<&Arc<Vec<bool>>>,
        binder: &Binder<S>,
    ) -> Tensor<S> {
        let q = self.wq.forward(query, binder);
        let k = self.wk.forward(key_value, binder);
        let v = self.wv.forward(key_value, binder);
        let dh = self.d_model / self.n_heads;
        let scale = S::of_f64(1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(self.n_heads);
        for hidx in 0..self.n_heads {
            let (c0, c1) = (hidx * dh, (hidx + 1) * dh);
            let qh = q.slice_cols(c0, c1);
            let kh = k.slice_cols(c0, c1);
            let vh = v.slice_cols(c0, c1);
            let mut scores = qh.matmul(&kh.transpose()).scale(scale);
            if let Some(m) = mask {
                scores = scores.masked_fill(m, S::of_f64(ATTENTION_MASK_VALUE));
            }
            heads.push(scores.softmax_rows().matmul(&vh));
        }
        let refs: Vec<&Tensor<S>> = heads.iter().collect();
        self.wo.forward(&Tensor::concat_cols(&refs), binder)
    }
}

/// Strictly-causal self-attention mask for a length-`t` sequence.
pub fn causal_mask(t: usize) -> Arc<Vec<bool>> {
    let mut m = vec![false; t * t];
    for i in 0..t {
        for j in i + 1..t {
            m[i * t + j] = true;
        }
    }
    Arc::new(m)
}

/// Two-layer position-wise feed-forward with a swish nonlinearity.
pub struct FeedForward<S: Scalar> {
    pub w1: Linear<S>,
    pub w2: Linear<S>,
}

impl<S: Scalar> FeedForward<S> {
    pub fn new(
        params: &mut ParamSet<S>,
        prefix: &str,
        d_model: usize,
        d_ff: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        FeedForward {
            w1: Linear::new(params, &format!("{prefix}.w1"), d_model, d_ff, true, rng),
            w2: Linear::new(params, &format!("{prefix}.w2"), d_ff, d_model, true, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<S>, binder: &Binder<S>) -> Tensor<S> {
        self.w2.forward(&swish(&self.w1.forward(x, binder)), binder)
    }
}

/// Convolution module: layernorm, pointwise expansion to 2d, GLU, depthwise
/// conv (same padding), layernorm, swish, pointwise projection. The caller
/// adds the residual.
pub struct ConvModule<S: Scalar> {
    pub ln_in: LayerNorm<S>,
    pub pw1: Linear<S>,
    pub dw: Arc<Param<S>>,   // [d x kernel]
    pub dw_b: Arc<Param<S>>, // [1 x d]
    pub ln_mid: LayerNorm<S>,
    pub pw2: Linear<S>,
}

impl<S: Scalar> ConvModule<S> {
    pub fn new(
        params: &mut ParamSet<S>,
        prefix: &str,
        d_model: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(kernel % 2 == 1, "invalid input: depthwise kernel must be odd");
        let ln_in = LayerNorm::new(params, &format!("{prefix}.ln_in"), d_model);
        let pw1 = Linear::new(params, &format!("{prefix}.pw1"), d_model, 2 * d_model, true, rng);
        let scale = 1.0 / (kernel as f64).sqrt();
        let dw = params.register(
            format!("{prefix}.dw"),
            d_model,
            kernel,
            uniform_init(rng, d_model * kernel, scale),
        );
        let dw_b = params.register(format!("{prefix}.dw_b"), 1, d_model, vec![S::zero(); d_model]);
        let ln_mid = LayerNorm::new(params, &format!("{prefix}.ln_mid"), d_model);
        let pw2 = Linear::new(params, &format!("{prefix}.pw2"), d_model, d_model, true, rng);
        ConvModule {
            ln_in,
            pw1,
            dw,
            dw_b,
            ln_mid,
            pw2,
        }
    }

    pub fn forward(&self, x: &Tensor<S>, binder: &Binder<S>) -> Tensor<S> {
        let d = x.cols();
        let h = self.pw1.forward(&self.ln_in.forward(x, binder), binder);
        let gated = h.slice_cols(0, d).mul(&h.slice_cols(d, 2 * d).sigmoid());
        let conv = gated.depthwise_conv1d(&binder.get(&self.dw), Some(&binder.get(&self.dw_b)));
        let normed = self.ln_mid.forward(&conv, binder);
        self.pw2.forward(&swish(&normed), binder)
    }
}

/// Sinusoidal absolute positional encoding, `[t x d]`, values in `[-1, 1]`.
pub fn positional_encoding<S: Scalar>(t: usize, d: usize) -> Tensor<S> {
    assert!(t > 0 && d > 0, "invalid input: positional encoding dims");
    let mut data = vec![S::zero(); t * d];
    for pos in 0..t {
        for i in 0..d {
            let exponent = 2.0 * (i / 2) as f64 / d as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            data[pos * d + i] = S::of_f64(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::constant(data, t, d)
}

/// Inverted dropout; identity when `rng` is `None` (evaluation) or `rate` is 0.
pub fn dropout<S: Scalar>(x: &Tensor<S>, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Tensor<S> {
    let rng = match rng {
        Some(r) if rate > 0.0 => r,
        _ => return x.clone(),
    };
    let keep = 1.0 - rate;
    let mask: Vec<S> = (0..x.numel())
        .map(|_| {
            if rng.gen_range(0.0..1.0) < keep {
                S::of_f64(1.0 / keep)
            } else {
                S::zero()
            }
        })
        .collect();
    x.mul(&Tensor::constant(mask, x.rows(), x.cols()))
}

pub fn swish<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.mul(&x.sigmoid())
}

pub fn mish<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.mul(&x.softplus().tanh())
}

/// Mask-head activation choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
    Mish,
    MetaAcon,
    Swish,
    Sigmoid,
}

impl ActivationKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(ActivationKind::Relu),
            "mish" => Ok(ActivationKind::Mish),
            "metaacon" | "meta-acon" | "meta_acon" => Ok(ActivationKind::MetaAcon),
            "swish" => Ok(ActivationKind::Swish),
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            other => Err(Error::invalid_input(format!("unknown activation {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Mish => "mish",
            ActivationKind::MetaAcon => "metaacon",
            ActivationKind::Swish => "swish",
            ActivationKind::Sigmoid => "sigmoid",
        }
    }
}

/// Channel-adaptive activation for sequences. The switching statistic is the
/// per-channel mean over time, squeezed through a bottleneck:
/// `beta = sigmoid(W2 W1 mean_t(x))`, then
/// `y = (p1-p2) . x . sigmoid(beta (p1-p2) x) + p2 . x` per channel.
pub struct MetaAcon<S: Scalar> {
    pub p1: Arc<Param<S>>, // [1 x C], init 1
    pub p2: Arc<Param<S>>, // [1 x C], init 0
    pub w1: Linear<S>,     // C -> C/r
    pub w2: Linear<S>,     // C/r -> C
}

impl<S: Scalar> MetaAcon<S> {
    pub fn new(
        params: &mut ParamSet<S>,
        prefix: &str,
        channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bottleneck = (channels / 16).max(1);
        let p1 = params.register(format!("{prefix}.p1"), 1, channels, vec![S::one(); channels]);
        let p2 = params.register(format!("{prefix}.p2"), 1, channels, vec![S::zero(); channels]);
        let w1 = Linear::new(params, &format!("{prefix}.w1"), channels, bottleneck, false, rng);
        let w2 = Linear::new(params, &format!("{prefix}.w2"), bottleneck, channels, false, rng);
        MetaAcon { p1, p2, w1, w2 }
    }

    pub fn forward(&self, x: &Tensor<S>, binder: &Binder<S>) -> Tensor<S> {
        let stat = x.mean_rows();
        let beta = self.w2.forward(&self.w1.forward(&stat, binder), binder).sigmoid();
        self.forward_with_beta(x, &beta, binder)
    }

    /// Forward with an explicit switching vector (`beta` is `[1 x C]`).
    pub fn forward_with_beta(
        &self,
        x: &Tensor<S>,
        beta: &Tensor<S>,
        binder: &Binder<S>,
    ) -> Tensor<S> {
        let p1 = binder.get(&self.p1);
        let p2 = binder.get(&self.p2);
        let dp = p1.sub(&p2);
        let gate = x.mul_row(&beta.mul(&dp)).sigmoid();
        x.mul_row(&dp).mul(&gate).add(&x.mul_row(&p2))
    }
}

/// A configured mask-head activation, with learnable state when needed.
pub enum MaskActivation<S: Scalar> {
    Relu,
    Mish,
    Swish,
    Sigmoid,
    MetaAcon(MetaAcon<S>),
}

impl<S: Scalar> MaskActivation<S> {
    pub fn new(
        kind: ActivationKind,
        params: &mut ParamSet<S>,
        prefix: &str,
        channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        match kind {
            ActivationKind::Relu => MaskActivation::Relu,
            ActivationKind::Mish => MaskActivation::Mish,
            ActivationKind::Swish => MaskActivation::Swish,
            ActivationKind::Sigmoid => MaskActivation::Sigmoid,
            ActivationKind::MetaAcon => {
                MaskActivation::MetaAcon(MetaAcon::new(params, prefix, channels, rng))
            }
        }
    }

    pub fn apply(&self, x: &Tensor<S>, binder: &Binder<S>) -> Tensor<S> {
        match self {
            MaskActivation::Relu => x.relu(),
            MaskActivation::Mish => mish(x),
            MaskActivation::Swish => swish(x),
            MaskActivation::Sigmoid => x.sigmoid(),
            MaskActivation::MetaAcon(m) => m.forward(x, binder),
        }
    }
}
