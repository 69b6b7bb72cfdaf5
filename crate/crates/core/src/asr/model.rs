//! Conformer encoder, transformer decoder, combined loss, greedy decoding.

use super::{ctc_nll, AsrConfig, TokenSequence, BLANK_ID, SOS_EOS_ID};
use crate::error::{Error, Result};
use crate::layers::{
    causal_mask, glorot_init, positional_encoding, ConvModule, FeedForward, LayerNorm, Linear,
    MultiHeadAttention,
};
use crate::scalar::Scalar;
use crate::tensor::{Binder, Param, ParamSet, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// One Conformer block: macaron half-FFNs around self-attention and a
/// convolution module, all residual, closed by a layer norm.
pub struct ConformerBlock<S: Scalar> {
    ln_ffn1: LayerNorm<S>,
    ffn1: FeedForward<S>,
    ln_mhsa: LayerNorm<S>,
    mhsa: MultiHeadAttention<S>,
    conv: ConvModule<S>,
    ln_ffn2: LayerNorm<S>,
    ffn2: FeedForward<S>,
    ln_out: LayerNorm<S>,
}

impl<S: Scalar> ConformerBlock<S> {
    fn new(
        params: &mut ParamSet<S>,
        prefix: &str,
        cfg: &AsrConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = cfg.d_model;
        ConformerBlock {
            ln_ffn1: LayerNorm::new(params, &format!("{prefix}.ln_ffn1"), d),
            ffn1: FeedForward::new(params, &format!("{prefix}.ffn1"), d, cfg.d_ff, rng),
            ln_mhsa: LayerNorm::new(params, &format!("{prefix}.ln_mhsa"), d),
            mhsa: MultiHeadAttention::new(params, &format!("{prefix}.mhsa"), d, cfg.n_heads, rng),
            conv: ConvModule::new(params, &format!("{prefix}.conv"), d, cfg.conv_kernel, rng),
            ln_ffn2: LayerNorm::new(params, &format!("{prefix}.ln_ffn2"), d),
            ffn2: FeedForward::new(params, &format!("{prefix}.ffn2"), d, cfg.d_ff, rng),
            ln_out: LayerNorm::new(params, &format!("{prefix}.ln_out"), d),
        }
    }

    pub fn forward(&self, x: &Tensor<S>, binder: &Binder<S>) -> Tensor<S> {
        let half = S::of_f64(0.5);
        let x = x.add(
            &self
                .ffn1
                .forward(&self.ln_ffn1.forward(x, binder), binder)
                .scale(half),
        );
        let normed = self.ln_mhsa.forward(&x, binder);
        let x = x.add(&self.mhsa.forward(&normed, &normed, None, binder));
        let x = x.add(&self.conv.forward(&x, binder));
        let x = x.add(
            &self
                .ffn2
                .forward(&self.ln_ffn2.forward(&x, binder), binder)
                .scale(half),
        );
        self.ln_out.forward(&x, binder)
    }
}

/// Pre-norm transformer decoder layer: causal self-attention, cross-attention
/// to the encoder frames, feed-forward.
pub struct DecoderLayer<S: Scalar> {
    ln_self: LayerNorm<S>,
    self_attn: MultiHeadAttention<S>,
    ln_cross: LayerNorm<S>,
    cross_attn: MultiHeadAttention<S>,
    ln_ffn: LayerNorm<S>,
    ffn: FeedForward<S>,
}

impl<S: Scalar> DecoderLayer<S> {
    fn new(
        params: &mut ParamSet<S>,
        prefix: &str,
        cfg: &AsrConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = cfg.d_model;
        DecoderLayer {
            ln_self: LayerNorm::new(params, &format!("{prefix}.ln_self"), d),
            self_attn: MultiHeadAttention::new(params, &format!("{prefix}.self"), d, cfg.n_heads, rng),
            ln_cross: LayerNorm::new(params, &format!("{prefix}.ln_cross"), d),
            cross_attn: MultiHeadAttention::new(
                params,
                &format!("{prefix}.cross"),
                d,
                cfg.n_heads,
                rng,
            ),
            ln_ffn: LayerNorm::new(params, &format!("{prefix}.ln_ffn"), d),
            ffn: FeedForward::new(params, &format!("{prefix}.ffn"), d, cfg.d_ff, rng),
        }
    }

    fn forward(
        &self,
        x: &Tensor<S>,
        enc: &Tensor<S>,
        mask: &Arc<Vec<bool>>,
        binder: &Binder<S>,
    ) -> Tensor<S> {
        let normed = self.ln_self.forward(x, binder);
        let x = x.add(&self.self_attn.forward(&normed, &normed, Some(mask), binder));
        let normed = self.ln_cross.forward(&x, binder);
        let x = x.add(&self.cross_attn.forward(&normed, enc, None, binder));
        let normed = self.ln_ffn.forward(&x, binder);
        x.add(&self.ffn.forward(&normed, binder))
    }
}

/// The recognizer: strided-conv subsampling, Conformer encoder, CTC head,
/// and an autoregressive transformer decoder over the same encoder output.
pub struct AsrModel<S: Scalar> {
    pub params: ParamSet<S>,
    pub cfg: AsrConfig,
    pub vocab_size: usize,
    sub1_w: Arc<Param<S>>,
    sub1_b: Arc<Param<S>>,
    sub2_w: Arc<Param<S>>,
    sub2_b: Arc<Param<S>>,
    blocks: Vec<ConformerBlock<S>>,
    ctc_head: Linear<S>,
    embed: Arc<Param<S>>,
    dec_layers: Vec<DecoderLayer<S>>,
    dec_ln: LayerNorm<S>,
    out_proj: Linear<S>,
}

impl<S: Scalar> AsrModel<S> {
    pub fn new(cfg: AsrConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if vocab_size < 4 {
            return Err(Error::invalid_input("vocabulary too small for a recognizer"));
        }
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;

        let sub1_w = params.register(
            "asr.enc.sub1.w",
            d,
            cfg.n_mels * 3,
            glorot_init(&mut rng, d, cfg.n_mels * 3),
        );
        let sub1_b = params.register("asr.enc.sub1.b", 1, d, vec![S::zero(); d]);
        let sub2_w = params.register(
            "asr.enc.sub2.w",
            d,
            d * 3,
            glorot_init(&mut rng, d, d * 3),
        );
        let sub2_b = params.register("asr.enc.sub2.b", 1, d, vec![S::zero(); d]);

        let blocks = (0..cfg.n_encoder_layers)
            .map(|i| ConformerBlock::new(&mut params, &format!("asr.enc.block{i}"), &cfg, &mut rng))
            .collect();
        let ctc_head = Linear::new(&mut params, "asr.ctc", d, vocab_size, true, &mut rng);

        let embed = params.register(
            "asr.dec.embed",
            vocab_size,
            d,
            glorot_init(&mut rng, vocab_size, d),
        );
        let dec_layers = (0..cfg.n_decoder_layers)
            .map(|i| DecoderLayer::new(&mut params, &format!("asr.dec.layer{i}"), &cfg, &mut rng))
            .collect();
        let dec_ln = LayerNorm::new(&mut params, "asr.dec.ln", d);
        let out_proj = Linear::new(&mut params, "asr.dec.out", d, vocab_size, true, &mut rng);

        Ok(AsrModel {
            params,
            cfg,
            vocab_size,
            sub1_w,
            sub1_b,
            sub2_w,
            sub2_b,
            blocks,
            ctc_head,
            embed,
            dec_layers,
            dec_ln,
            out_proj,
        })
    }

    /// Encode `[T x n_mels]` features into `[ceil(T/4) x d_model]` frames.
    pub fn encode_t(&self, features: &Tensor<S>, binder: &Binder<S>) -> Result<Tensor<S>> {
        if features.rows() == 0 {
            return Err(Error::invalid_input("empty feature input"));
        }
        if features.cols() != self.cfg.n_mels {
            return Err(Error::invalid_input(format!(
                "feature dim {} does not match n_mels {}",
                features.cols(),
                self.cfg.n_mels
            )));
        }
        let x = features
            .conv1d(
                &binder.get(&self.sub1_w),
                Some(&binder.get(&self.sub1_b)),
                3,
                2,
                1,
            )
            .relu()
            .conv1d(
                &binder.get(&self.sub2_w),
                Some(&binder.get(&self.sub2_b)),
                3,
                2,
                1,
            )
            .relu();
        let mut x = x.add(&positional_encoding(x.rows(), self.cfg.d_model));
        for block in &self.blocks {
            x = block.forward(&x, binder);
        }
        Ok(x)
    }

    fn decoder_logits(
        &self,
        enc: &Tensor<S>,
        input_ids: &[usize],
        binder: &Binder<S>,
    ) -> Tensor<S> {
        let d = self.cfg.d_model;
        let emb = binder.get(&self.embed).gather_rows(input_ids);
        let mut x = emb.add(&positional_encoding(input_ids.len(), d));
        let mask = causal_mask(input_ids.len());
        for layer in &self.dec_layers {
            x = layer.forward(&x, enc, &mask, binder);
        }
        self.out_proj.forward(&self.dec_ln.forward(&x, binder), binder)
    }

    /// Teacher-forced attention loss: mean token cross-entropy of
    /// `[sos, y...] -> [y..., eos]` with no label smoothing.
    pub fn att_loss_t(
        &self,
        enc: &Tensor<S>,
        targets: &[usize],
        binder: &Binder<S>,
    ) -> Result<Tensor<S>> {
        self.validate_targets(targets)?;
        let mut input_ids = Vec::with_capacity(targets.len() + 1);
        input_ids.push(SOS_EOS_ID);
        input_ids.extend_from_slice(targets);
        let mut out_ids = targets.to_vec();
        out_ids.push(SOS_EOS_ID);

        let logits = self.decoder_logits(enc, &input_ids, binder);
        let log_probs = logits.log_softmax_rows();
        let steps = out_ids.len();
        let mut one_hot = vec![S::zero(); steps * self.vocab_size];
        for (t, &y) in out_ids.iter().enumerate() {
            one_hot[t * self.vocab_size + y] = S::one();
        }
        let picked = log_probs.mul(&Tensor::constant(one_hot, steps, self.vocab_size));
        Ok(picked.sum().scale(-S::one() / S::of_usize(steps)))
    }

    /// CTC loss of the blank-augmented alignment DP over the CTC head.
    pub fn ctc_loss_t(
        &self,
        enc: &Tensor<S>,
        targets: &[usize],
        binder: &Binder<S>,
    ) -> Result<Tensor<S>> {
        self.validate_targets(targets)?;
        let log_probs = self.ctc_head.forward(enc, binder).log_softmax_rows();
        ctc_nll(&log_probs, targets)
    }

    /// Combined loss `(1 - w) * att + w * ctc` with the configured CTC weight.
    pub fn asr_loss_t(
        &self,
        enc: &Tensor<S>,
        targets: &[usize],
        binder: &Binder<S>,
    ) -> Result<Tensor<S>> {
        self.asr_loss_with_weight_t(enc, targets, binder, self.cfg.ctc_weight)
    }

    pub fn asr_loss_with_weight_t(
        &self,
        enc: &Tensor<S>,
        targets: &[usize],
        binder: &Binder<S>,
        ctc_weight: f64,
    ) -> Result<Tensor<S>> {
        if !(0.0..=1.0).contains(&ctc_weight) {
            return Err(Error::invalid_input("ctc weight must be in [0, 1]"));
        }
        let att = self.att_loss_t(enc, targets, binder)?;
        let ctc = self.ctc_loss_t(enc, targets, binder)?;
        let w = S::of_f64(ctc_weight);
        Ok(att.scale(S::one() - w).add(&ctc.scale(w)))
    }

    fn validate_targets(&self, targets: &[usize]) -> Result<()> {
        if targets.is_empty() {
            return Err(Error::invalid_input("empty target sequence"));
        }
        for &y in targets {
            if y >= self.vocab_size {
                return Err(Error::invalid_input(format!(
                    "target id {y} outside vocabulary"
                )));
            }
            if y < super::FIRST_SYMBOL_ID {
                return Err(Error::invalid_input(
                    "targets must not contain blank/sos/pad ids",
                ));
            }
        }
        Ok(())
    }

    /// Per-frame argmax, collapse repeats, drop blanks.
    pub fn greedy_ctc(&self, enc: &Tensor<S>) -> Vec<usize> {
        let logits = self.ctc_head.forward(enc, &Binder::Eval);
        let v = self.vocab_size;
        let mut out = Vec::new();
        let mut prev = usize::MAX;
        for t in 0..logits.rows() {
            let row = &logits.data()[t * v..(t + 1) * v];
            let mut best = 0;
            for (k, &val) in row.iter().enumerate() {
                if val > row[best] {
                    best = k;
                }
            }
            if best != prev && best != BLANK_ID {
                out.push(best);
            }
            prev = best;
        }
        out
    }

    /// Autoregressive argmax decoding until eos or `2 * T'` tokens.
    pub fn greedy_attention(&self, enc: &Tensor<S>) -> Vec<usize> {
        let max_len = 2 * enc.rows();
        let mut ids = vec![SOS_EOS_ID];
        for _ in 0..max_len {
            let logits = self.decoder_logits(enc, &ids, &Binder::Eval);
            let v = self.vocab_size;
            let last = &logits.data()[(logits.rows() - 1) * v..];
            let mut best = 0;
            for (k, &val) in last.iter().enumerate() {
                if val > last[best] {
                    best = k;
                }
            }
            if best == SOS_EOS_ID {
                break;
            }
            ids.push(best);
        }
        ids.remove(0);
        ids
    }

    /// Convenience wrapper: greedy decode into a [`TokenSequence`].
    pub fn decode(
        &self,
        enc: &Tensor<S>,
        mode: DecodeMode,
        vocab: &super::Vocab,
    ) -> TokenSequence {
        let ids = match mode {
            DecodeMode::Ctc => self.greedy_ctc(enc),
            DecodeMode::Attention => self.greedy_attention(enc),
        };
        TokenSequence::from_ids(ids, vocab)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Ctc,
    Attention,
}

impl DecodeMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ctc" => Ok(DecodeMode::Ctc),
            "attention" | "att" => Ok(DecodeMode::Attention),
            other => Err(Error::invalid_input(format!("unknown decode mode {other}"))),
        }
    }
}
