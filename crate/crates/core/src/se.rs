//! Mask-estimating enhancement front-end and its feature paths.
//!
//! The network is a BLSTM stack with a linear mask head. Enhancement applies
//! the estimated per-bin gains to the noisy complex spectrum. Features for
//! the recognizer are produced either directly from the masked magnitudes
//! (phase-discarding) or by resynthesizing a waveform and re-analyzing it
//! (phase-preserving); the whole chain, including synthesis and re-analysis,
//! is differentiable because those stages are linear operators on the tape.

use crate::error::{Error, Result};
use crate::layers::{dropout, ActivationKind, Blstm, Linear, MaskActivation};
use crate::scalar::Scalar;
use crate::signal::{
    self, ComplexSpectrogram, DftBasis, MagnitudeSpectrogram, Mask, MelBank, MelFeatures,
    MvnStats, StftParams, Waveform, LOG_FLOOR,
};
use crate::tensor::{Binder, ParamSet, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use crate::signal::Mask as SpectralMask;

/// Whether recognizer features come from masked magnitudes directly or from
/// a resynthesized waveform that keeps the noisy phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseMode {
    Discard,
    Preserve,
}

impl PhaseMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "discard" => Ok(PhaseMode::Discard),
            "preserve" => Ok(PhaseMode::Preserve),
            other => Err(Error::invalid_input(format!("unknown phase mode {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PhaseMode::Discard => "discard",
            PhaseMode::Preserve => "preserve",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeConfig {
    pub n_blstm_layers: usize,
    pub hidden_units: usize,
    pub mask_activation: ActivationKind,
    pub phase_mode: PhaseMode,
    pub dropout: f64,
    pub stft: StftParams,
}

impl Default for SeConfig {
    fn default() -> Self {
        SeConfig {
            n_blstm_layers: 2,
            hidden_units: 128,
            mask_activation: ActivationKind::Relu,
            phase_mode: PhaseMode::Preserve,
            dropout: 0.1,
            stft: StftParams::default(),
        }
    }
}

impl SeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blstm_layers < 1 {
            return Err(Error::invalid_input("SE needs at least one BLSTM layer"));
        }
        if self.hidden_units < 8 {
            return Err(Error::invalid_input("SE hidden units must be >= 8"));
        }
        self.stft.validate()
    }
}

/// The mask estimator: BLSTM stack, dropout (training only), linear head to
/// one gain per bin, mask activation, and a clamp at zero.
pub struct SeNetwork<S: Scalar> {
    pub params: ParamSet<S>,
    pub cfg: SeConfig,
    blstm: Vec<Blstm<S>>,
    head: Linear<S>,
    activation: MaskActivation<S>,
}

impl<S: Scalar> SeNetwork<S> {
    pub fn new(cfg: SeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bins = cfg.stft.bins();
        let mut blstm = Vec::new();
        let mut in_dim = bins;
        for layer in 0..cfg.n_blstm_layers {
            blstm.push(Blstm::new(
                &mut params,
                &format!("se.blstm{layer}"),
                in_dim,
                cfg.hidden_units,
                &mut rng,
            ));
            in_dim = 2 * cfg.hidden_units;
        }
        let head = Linear::new(&mut params, "se.head", in_dim, bins, true, &mut rng);
        let activation =
            MaskActivation::new(cfg.mask_activation, &mut params, "se.act", bins, &mut rng);
        Ok(SeNetwork {
            params,
            cfg,
            blstm,
            head,
            activation,
        })
    }

    /// Tape-side mask estimation from a `[T x bins]` magnitude tensor.
    /// Non-negative by construction: the head activation is clamped at zero
    /// (a no-op for the ReLU head).
    pub fn estimate_mask_t(
        &self,
        noisy_mag: &Tensor<S>,
        binder: &Binder<S>,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Tensor<S> {
        assert_eq!(
            noisy_mag.cols(),
            self.cfg.stft.bins(),
            "invalid input: magnitude bins do not match SE input"
        );
        let mut x = noisy_mag.clone();
        for layer in &self.blstm {
            x = layer.run(&x, binder);
        }
        let x = dropout(&x, self.cfg.dropout, dropout_rng);
        let pre = self.head.forward(&x, binder);
        self.activation.apply(&pre, binder).relu()
    }

    /// Evaluation-mode mask estimation on plain spectra.
    pub fn estimate_mask(&self, noisy_mag: &MagnitudeSpectrogram<S>) -> Result<Mask<S>> {
        let x = Tensor::constant(noisy_mag.mag.clone(), noisy_mag.frames, noisy_mag.bins);
        let m = self.estimate_mask_t(&x, &Binder::Eval, None);
        Mask::new(m.data().to_vec(), noisy_mag.frames, noisy_mag.bins)
    }
}

/// Constant spectral views of one utterance, shared across training steps.
pub struct CachedSpectra<S: Scalar> {
    pub real: Tensor<S>,
    pub imag: Tensor<S>,
    pub mag: Tensor<S>,
    pub frames: usize,
    pub bins: usize,
}

impl<S: Scalar> CachedSpectra<S> {
    pub fn from_spectrogram(s: &ComplexSpectrogram<S>) -> Self {
        let mag = signal::magnitude(s);
        CachedSpectra {
            real: Tensor::constant(s.real.clone(), s.frames, s.bins),
            imag: Tensor::constant(s.imag.clone(), s.frames, s.bins),
            mag: Tensor::constant(mag.mag, s.frames, s.bins),
            frames: s.frames,
            bins: s.bins,
        }
    }
}

/// Precomputed constant operators for the differentiable spectral chain:
/// DFT bases, window, mel projection.
pub struct SpectralPipeline<S: Scalar> {
    pub basis: DftBasis<S>,
    pub mel: MelBank<S>,
    pub sample_rate: u32,
    fwd_re: Tensor<S>,
    fwd_im: Tensor<S>,
    inv_re: Tensor<S>,
    inv_im: Tensor<S>,
    window_row: Tensor<S>,
    mel_weights: Tensor<S>,
}

impl<S: Scalar> SpectralPipeline<S> {
    pub fn new(params: StftParams, n_mels: usize, sample_rate: u32) -> Self {
        let basis = DftBasis::new(params);
        let mel = MelBank::new(n_mels, params.n_fft, sample_rate);
        let bins = params.bins();
        let n = params.n_fft;
        let fwd_re = Tensor::constant(basis.fwd_re().to_vec(), n, bins);
        let fwd_im = Tensor::constant(basis.fwd_im().to_vec(), n, bins);
        let inv_re = Tensor::constant(basis.inv_re().to_vec(), bins, n);
        let inv_im = Tensor::constant(basis.inv_im().to_vec(), bins, n);
        let window_row = Tensor::constant(basis.window.clone(), 1, n);
        let mel_weights = Tensor::constant(mel.weights.clone(), bins, n_mels);
        SpectralPipeline {
            basis,
            mel,
            sample_rate,
            fwd_re,
            fwd_im,
            inv_re,
            inv_im,
            window_row,
            mel_weights,
        }
    }

    pub fn params(&self) -> StftParams {
        self.basis.params
    }

    pub fn cache(&self, w: &Waveform<S>) -> Result<CachedSpectra<S>> {
        let s = signal::stft_with(w, &self.basis)?;
        Ok(CachedSpectra::from_spectrogram(&s))
    }

    /// Log-mel features from a complex spectrum on the tape.
    pub fn logmel_from_spec_t(&self, real: &Tensor<S>, imag: &Tensor<S>) -> Tensor<S> {
        let power = real.mul(real).add(&imag.mul(imag));
        power
            .matmul(&self.mel_weights)
            .ln_floor(S::of_f64(LOG_FLOOR))
    }

    /// Differentiable synthesis: masked spectra to a `[L x 1]` waveform.
    pub fn istft_t(&self, real: &Tensor<S>, imag: &Tensor<S>) -> Result<Tensor<S>> {
        let frames = real.rows();
        let time_frames = real.matmul(&self.inv_re).add(&imag.matmul(&self.inv_im));
        let windowed = time_frames.mul_row(&self.window_row);
        let summed = windowed.overlap_add(self.params().hop);
        let inv_env = self.basis.inverse_envelope(frames)?;
        let len = inv_env.len();
        Ok(summed.mul(&Tensor::constant(inv_env, len, 1)))
    }

    /// Differentiable analysis: `[L x 1]` waveform to (real, imag) spectra.
    pub fn stft_t(&self, wave: &Tensor<S>) -> (Tensor<S>, Tensor<S>) {
        let p = self.params();
        let framed = wave
            .frame_signal(p.n_fft, p.hop)
            .mul_row(&self.window_row);
        (framed.matmul(&self.fwd_re), framed.matmul(&self.fwd_im))
    }

    /// Tape-side global MVN.
    pub fn apply_mvn_t(&self, feats: &Tensor<S>, stats: &MvnStats<S>) -> Tensor<S> {
        let neg_mean: Vec<S> = stats.mean.iter().map(|&m| -m).collect();
        let inv_std: Vec<S> = stats.std.iter().map(|&s| S::one() / s).collect();
        let d = stats.mean.len();
        feats
            .add_row(&Tensor::constant(neg_mean, 1, d))
            .mul_row(&Tensor::constant(inv_std, 1, d))
    }
}

/// Result of enhancing one utterance on the tape.
pub struct EnhancedOutput<S: Scalar> {
    pub mask: Tensor<S>,
    pub masked_real: Tensor<S>,
    pub masked_imag: Tensor<S>,
    /// Present only in phase-preserving mode.
    pub enhanced_wave: Option<Tensor<S>>,
    /// Log-mel recognizer input (MVN applied when stats are supplied).
    pub features: Tensor<S>,
}

/// Run the enhancement chain on cached noisy spectra. In discard mode the
/// features come from the masked magnitudes; in preserve mode the masked
/// spectrum is resynthesized (keeping the noisy phase) and re-analyzed.
pub fn enhance_t<S: Scalar>(
    net: &SeNetwork<S>,
    pipeline: &SpectralPipeline<S>,
    noisy: &CachedSpectra<S>,
    mvn: Option<&MvnStats<S>>,
    binder: &Binder<S>,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<EnhancedOutput<S>> {
    let mask = net.estimate_mask_t(&noisy.mag, binder, dropout_rng);
    let masked_real = noisy.real.mul(&mask);
    let masked_imag = noisy.imag.mul(&mask);
    let (enhanced_wave, features) = match net.cfg.phase_mode {
        PhaseMode::Discard => {
            let feats = pipeline.logmel_from_spec_t(&masked_real, &masked_imag);
            (None, feats)
        }
        PhaseMode::Preserve => {
            let wave = pipeline.istft_t(&masked_real, &masked_imag)?;
            let (re2, im2) = pipeline.stft_t(&wave);
            let feats = pipeline.logmel_from_spec_t(&re2, &im2);
            (Some(wave), feats)
        }
    };
    let features = match mvn {
        Some(stats) => pipeline.apply_mvn_t(&features, stats),
        None => features,
    };
    Ok(EnhancedOutput {
        mask,
        masked_real,
        masked_imag,
        enhanced_wave,
        features,
    })
}

/// Evaluation-mode enhancement of a plain waveform; returns the estimated
/// mask, the enhanced waveform (preserve mode), and recognizer features.
pub struct Enhanced<S: Scalar> {
    pub mask: Mask<S>,
    pub enhanced_wave: Option<Waveform<S>>,
    pub features: MelFeatures<S>,
}

pub fn enhance<S: Scalar>(
    net: &SeNetwork<S>,
    pipeline: &SpectralPipeline<S>,
    noisy: &Waveform<S>,
    mvn: Option<&MvnStats<S>>,
) -> Result<Enhanced<S>> {
    let cached = pipeline.cache(noisy)?;
    let out = enhance_t(net, pipeline, &cached, mvn, &Binder::Eval, None)?;
    let frames = out.features.rows();
    let n_mels = out.features.cols();
    Ok(Enhanced {
        mask: Mask::new(out.mask.data().to_vec(), cached.frames, cached.bins)?,
        enhanced_wave: out
            .enhanced_wave
            .map(|w| Waveform::new(w.data().to_vec(), pipeline.sample_rate))
            .transpose()?,
        features: MelFeatures {
            feats: out.features.data().to_vec(),
            frames,
            n_mels,
        },
    })
}

/// Spectral-magnitude MSE between the masked and clean magnitudes, on tape.
/// The masked magnitude is `mask * |X|` exactly, because the gains are
/// non-negative reals.
pub fn se_loss_t<S: Scalar>(
    mask: &Tensor<S>,
    noisy_mag: &Tensor<S>,
    clean_mag: &Tensor<S>,
) -> Tensor<S> {
    let masked = mask.mul(noisy_mag);
    let diff = masked.sub(clean_mag);
    diff.mul(&diff).mean()
}

/// Plain spectral-magnitude MSE.
pub fn se_loss<S: Scalar>(
    masked: &MagnitudeSpectrogram<S>,
    clean: &MagnitudeSpectrogram<S>,
) -> Result<S> {
    if masked.frames != clean.frames || masked.bins != clean.bins {
        return Err(Error::invalid_input("magnitude shapes differ in se_loss"));
    }
    let mut acc = 0.0f64;
    for (&a, &b) in masked.mag.iter().zip(&clean.mag) {
        let d = a.as_f64() - b.as_f64();
        acc += d * d;
    }
    Ok(S::of_f64(acc / masked.mag.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn small_cfg(phase_mode: PhaseMode) -> SeConfig {
        SeConfig {
            n_blstm_layers: 1,
            hidden_units: 8,
            mask_activation: ActivationKind::Relu,
            phase_mode,
            dropout: 0.0,
            stft: StftParams::default(),
        }
    }

    fn noise_wave(len: usize, seed: u64) -> Waveform<f64> {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        let samples = (0..len)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                (((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5) * 0.6
            })
            .collect();
        Waveform::new(samples, 16000).unwrap()
    }

    #[test]
    fn zero_weight_relu_network_gives_zero_mask() {
        let net = SeNetwork::<f64>::new(small_cfg(PhaseMode::Preserve), 3).unwrap();
        for p in net.params.iter() {
            p.set_value(vec![0.0; p.numel()]);
        }
        let x = Tensor::constant(vec![0.5; 4 * 257], 4, 257);
        let m = net.estimate_mask_t(&x, &Binder::Eval, None);
        assert_eq!(m.shape(), [4, 257]);
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mask_shape_follows_input_frames() {
        let net = SeNetwork::<f64>::new(small_cfg(PhaseMode::Preserve), 4).unwrap();
        for t in [1usize, 3, 9] {
            let x = Tensor::constant(vec![0.1; t * 257], t, 257);
            let m = net.estimate_mask_t(&x, &Binder::Eval, None);
            assert_eq!(m.shape(), [t, 257]);
            assert!(m.data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn se_loss_reaches_the_first_blstm_weights() {
        let pipeline = SpectralPipeline::<f64>::new(StftParams::default(), 80, 16000);
        let net = SeNetwork::<f64>::new(small_cfg(PhaseMode::Discard), 5).unwrap();
        let noisy = pipeline.cache(&noise_wave(1024, 1)).unwrap();
        let clean = pipeline.cache(&noise_wave(1024, 2)).unwrap();
        let tape = Tape::new();
        let binder = Binder::Train(&tape);
        let mask = net.estimate_mask_t(&noisy.mag, &binder, None);
        let loss = se_loss_t(&mask, &noisy.mag, &clean.mag);
        let grads = loss.backward().unwrap();
        let g = grads.of_param(&net.blstm[0].fwd.w_ih);
        assert!(g.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn unit_mask_makes_preserve_and_discard_features_agree() {
        let pipeline = SpectralPipeline::<f64>::new(StftParams::default(), 80, 16000);
        let noisy = pipeline.cache(&noise_wave(4096, 7)).unwrap();
        let unit = Tensor::constant(vec![1.0; noisy.frames * noisy.bins], noisy.frames, noisy.bins);

        let discard = pipeline.logmel_from_spec_t(
            &noisy.real.mul(&unit),
            &noisy.imag.mul(&unit),
        );
        let wave = pipeline
            .istft_t(&noisy.real.mul(&unit), &noisy.imag.mul(&unit))
            .unwrap();
        let (re2, im2) = pipeline.stft_t(&wave);
        let preserve = pipeline.logmel_from_spec_t(&re2, &im2);

        assert_eq!(discard.shape(), preserve.shape());
        for (a, b) in discard.data().iter().zip(preserve.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn non_uniform_mask_separates_the_two_feature_paths() {
        let pipeline = SpectralPipeline::<f64>::new(StftParams::default(), 80, 16000);
        let noisy = pipeline.cache(&noise_wave(4096, 8)).unwrap();
        // deterministic pseudo-random gains in [0, 1.5]
        let gains: Vec<f64> = (0..noisy.frames * noisy.bins)
            .map(|i| ((i * 2654435761) % 1000) as f64 / 666.0)
            .collect();
        let mask = Tensor::constant(gains, noisy.frames, noisy.bins);
        let mr = noisy.real.mul(&mask);
        let mi = noisy.imag.mul(&mask);

        let discard = pipeline.logmel_from_spec_t(&mr, &mi);
        let wave = pipeline.istft_t(&mr, &mi).unwrap();
        let (re2, im2) = pipeline.stft_t(&wave);
        let preserve = pipeline.logmel_from_spec_t(&re2, &im2);

        let rms: f64 = (discard
            .data()
            .iter()
            .zip(preserve.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / discard.numel() as f64)
            .sqrt();
        assert!(rms > 1e-3, "paths should differ, rms = {rms}");
    }

    #[test]
    fn zero_mask_silences_and_floors_features() {
        let cfg = small_cfg(PhaseMode::Preserve);
        let pipeline = SpectralPipeline::<f64>::new(cfg.stft, 80, 16000);
        let net = SeNetwork::<f64>::new(cfg, 11).unwrap();
        for p in net.params.iter() {
            p.set_value(vec![0.0; p.numel()]);
        }
        let noisy = pipeline.cache(&noise_wave(2048, 3)).unwrap();
        let out = enhance_t(&net, &pipeline, &noisy, None, &Binder::Eval, None).unwrap();
        let wave = out.enhanced_wave.expect("preserve mode yields a waveform");
        assert!(wave.data().iter().all(|&v| v == 0.0));
        for &v in out.features.data() {
            assert!((v - LOG_FLOOR.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn phase_is_preserved_under_any_nonnegative_mask() {
        let pipeline = SpectralPipeline::<f64>::new(StftParams::default(), 80, 16000);
        let w = noise_wave(2048, 21);
        let spec = signal::stft_with(&w, &pipeline.basis).unwrap();
        let gains: Vec<f64> = (0..spec.numel())
            .map(|i| ((i * 48271) % 997) as f64 / 500.0)
            .collect();
        let mask = Mask::new(gains, spec.frames, spec.bins).unwrap();
        let masked = signal::apply_mask(&spec, &mask).unwrap();
        let mags = signal::magnitude(&masked);
        for t in 0..spec.frames {
            for k in 0..spec.bins {
                if mags.mag[t * spec.bins + k] > 1e-9 {
                    let d = (spec.phase_at(t, k) - masked.phase_at(t, k)).abs();
                    assert!(d < 1e-12, "phase changed at {t},{k}");
                }
            }
        }
    }

    #[test]
    fn se_loss_values() {
        let a = MagnitudeSpectrogram {
            mag: vec![1.0f64, 2.0, 3.0, 4.0],
            frames: 2,
            bins: 2,
        };
        assert_eq!(se_loss(&a, &a).unwrap(), 0.0);
        let b = MagnitudeSpectrogram {
            mag: a.mag.iter().map(|&v| v + 0.5).collect(),
            frames: 2,
            bins: 2,
        };
        assert!((se_loss(&b, &a).unwrap() - 0.25).abs() < 1e-12);

        // random pair matches the elementwise oracle
        let c = MagnitudeSpectrogram {
            mag: vec![0.3f64, 1.7, 0.01, 2.2],
            frames: 2,
            bins: 2,
        };
        let want: f64 = c
            .mag
            .iter()
            .zip(&a.mag)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            / 4.0;
        assert!((se_loss(&c, &a).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn se_loss_shape_mismatch_errors() {
        let a = MagnitudeSpectrogram {
            mag: vec![1.0f64; 4],
            frames: 2,
            bins: 2,
        };
        let b = MagnitudeSpectrogram {
            mag: vec![1.0f64; 6],
            frames: 3,
            bins: 2,
        };
        assert!(se_loss(&a, &b).is_err());
    }
}
