//! Deterministic DSP kernels: STFT/ISTFT, complex masking, log-mel features,
//! global mean-variance normalization, speed perturbation, and WAV I/O.
//!
//! The DFT is evaluated as a plain matrix product against precomputed
//! cosine/sine bases ([`DftBasis`]). That keeps the analysis/synthesis pair
//! bit-identical between the plain functions here and the differentiable
//! spectral chain built on the tape, which reuses the same matrices.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::kernels::mm_acc;

/// Natural-log floor applied to mel powers.
pub const LOG_FLOOR: f64 = 1e-10;
/// Lower clamp for MVN standard deviations.
pub const MVN_STD_FLOOR: f64 = 1e-8;
/// Window-sum threshold below which synthesis outputs silence.
const ENVELOPE_FLOOR: f64 = 1e-12;

/// Mono audio signal with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<S: Scalar> {
    pub samples: Vec<S>,
    pub sample_rate: u32,
}

impl<S: Scalar> Waveform<S> {
    pub fn new(samples: Vec<S>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid_input("empty waveform"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid_input("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::numeric("non-finite sample in waveform"));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> S {
        self.samples.iter().fold(S::zero(), |a, &b| a.max(b.abs()))
    }

    pub fn power(&self) -> f64 {
        let e: f64 = self.samples.iter().map(|&s| s.as_f64() * s.as_f64()).sum();
        e / self.samples.len() as f64
    }
}

/// Analysis parameters: FFT length, hop, and an implied periodic Hann window.
/// The defaults give a 257-bin one-sided spectrum with 4x overlap, which
/// satisfies the constant-overlap-add condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftParams {
    pub n_fft: usize,
    pub hop: usize,
}

impl Default for StftParams {
    fn default() -> Self {
        StftParams {
            n_fft: 512,
            hop: 128,
        }
    }
}

impl StftParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 4 || self.n_fft % 2 != 0 {
            return Err(Error::invalid_input("n_fft must be even and >= 4"));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::invalid_input("hop must satisfy 0 < hop <= n_fft"));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn num_frames(&self, signal_len: usize) -> Result<usize> {
        if signal_len < self.n_fft {
            return Err(Error::invalid_input(format!(
                "signal of {signal_len} samples is shorter than one {}-sample window",
                self.n_fft
            )));
        }
        Ok(1 + (signal_len - self.n_fft) / self.hop)
    }

    /// Length of the synthesis output for a given frame count.
    pub fn synthesis_len(&self, frames: usize) -> usize {
        (frames - 1) * self.hop + self.n_fft
    }

    /// Periodic Hann window of length `n_fft`.
    pub fn window<S: Scalar>(&self) -> Vec<S> {
        let n = self.n_fft;
        (0..n)
            .map(|i| {
                let x = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                S::of_f64(0.5 * (1.0 - x.cos()))
            })
            .collect()
    }
}

/// Precomputed one-sided DFT bases and window for a given [`StftParams`].
///
/// `fwd_*` are `[n_fft x bins]`; multiplying windowed frames by them yields
/// the real/imaginary spectra. `inv_*` are `[bins x n_fft]` and include the
/// 1/N scaling and the factor 2 on interior bins, so
/// `real * inv_re + imag * inv_im` recovers the windowed time frames.
pub struct DftBasis<S: Scalar> {
    pub params: StftParams,
    pub window: Vec<S>,
    fwd_re: Vec<S>,
    fwd_im: Vec<S>,
    inv_re: Vec<S>,
    inv_im: Vec<S>,
}

impl<S: Scalar> DftBasis<S> {
    pub fn new(params: StftParams) -> Self {
        let n = params.n_fft;
        let bins = params.bins();
        let mut fwd_re = vec![S::zero(); n * bins];
        let mut fwd_im = vec![S::zero(); n * bins];
        let mut inv_re = vec![S::zero(); bins * n];
        let mut inv_im = vec![S::zero(); bins * n];
        for k in 0..bins {
            let coeff = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
            for i in 0..n {
                let ang = 2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                fwd_re[i * bins + k] = S::of_f64(ang.cos());
                fwd_im[i * bins + k] = S::of_f64(-ang.sin());
                inv_re[k * n + i] = S::of_f64(coeff * ang.cos() / n as f64);
                inv_im[k * n + i] = S::of_f64(-coeff * ang.sin() / n as f64);
            }
        }
        DftBasis {
            params,
            window: params.window(),
            fwd_re,
            fwd_im,
            inv_re,
            inv_im,
        }
    }

    pub fn fwd_re(&self) -> &[S] {
        &self.fwd_re
    }

    pub fn fwd_im(&self) -> &[S] {
        &self.fwd_im
    }

    pub fn inv_re(&self) -> &[S] {
        &self.inv_re
    }

    pub fn inv_im(&self) -> &[S] {
        &self.inv_im
    }

    /// Sum of squared synthesis windows at every output sample.
    pub fn envelope(&self, frames: usize) -> Vec<S> {
        let p = self.params;
        let mut env = vec![S::zero(); p.synthesis_len(frames)];
        for f in 0..frames {
            for (i, &w) in self.window.iter().enumerate() {
                env[f * p.hop + i] = env[f * p.hop + i] + w * w;
            }
        }
        env
    }

    /// Elementwise `1 / envelope`, zero where the window sum vanishes at the
    /// signal edges. A vanishing sum in the interior indicates broken
    /// overlap-add parameters and is reported as a numeric error.
    pub fn inverse_envelope(&self, frames: usize) -> Result<Vec<S>> {
        let p = self.params;
        let env = self.envelope(frames);
        let len = env.len();
        let floor = S::of_f64(ENVELOPE_FLOOR);
        let mut out = vec![S::zero(); len];
        for (i, &e) in env.iter().enumerate() {
            if e > floor {
                out[i] = S::one() / e;
            } else if i >= p.n_fft && i + p.n_fft < len {
                return Err(Error::numeric(format!(
                    "window sum vanished at interior sample {i}"
                )));
            }
        }
        Ok(out)
    }
}

/// One-sided complex spectrogram, `[frames x bins]` row-major.
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram<S: Scalar> {
    pub real: Vec<S>,
    pub imag: Vec<S>,
    pub frames: usize,
    pub bins: usize,
    pub params: StftParams,
}

impl<S: Scalar> ComplexSpectrogram<S> {
    pub fn numel(&self) -> usize {
        self.frames * self.bins
    }

    pub fn phase_at(&self, t: usize, k: usize) -> f64 {
        let i = t * self.bins + k;
        self.imag[i].as_f64().atan2(self.real[i].as_f64())
    }
}

/// Non-negative spectral magnitudes, `[frames x bins]`.
#[derive(Debug, Clone)]
pub struct MagnitudeSpectrogram<S: Scalar> {
    pub mag: Vec<S>,
    pub frames: usize,
    pub bins: usize,
}

/// Log-mel feature matrix, `[frames x n_mels]`.
#[derive(Debug, Clone)]
pub struct MelFeatures<S: Scalar> {
    pub feats: Vec<S>,
    pub frames: usize,
    pub n_mels: usize,
}

/// Per-frame, per-bin gains estimated by the enhancement network.
#[derive(Debug, Clone)]
pub struct Mask<S: Scalar> {
    pub values: Vec<S>,
    pub frames: usize,
    pub bins: usize,
}

impl<S: Scalar> Mask<S> {
    pub fn new(values: Vec<S>, frames: usize, bins: usize) -> Result<Self> {
        if values.len() != frames * bins {
            return Err(Error::invalid_input("mask data does not match shape"));
        }
        if values.iter().any(|&v| v < S::zero() || !v.is_finite()) {
            return Err(Error::invalid_input("mask entries must be finite and >= 0"));
        }
        Ok(Mask {
            values,
            frames,
            bins,
        })
    }

    pub fn unit(frames: usize, bins: usize) -> Self {
        Mask {
            values: vec![S::one(); frames * bins],
            frames,
            bins,
        }
    }
}

/// Extract hop-strided windowed frames as a `[frames x n_fft]` buffer.
fn windowed_frames<S: Scalar>(samples: &[S], basis: &DftBasis<S>) -> Result<(Vec<S>, usize)> {
    let p = basis.params;
    let frames = p.num_frames(samples.len())?;
    let mut out = vec![S::zero(); frames * p.n_fft];
    for f in 0..frames {
        let seg = &samples[f * p.hop..f * p.hop + p.n_fft];
        let dst = &mut out[f * p.n_fft..(f + 1) * p.n_fft];
        for ((d, &x), &w) in dst.iter_mut().zip(seg).zip(&basis.window) {
            *d = x * w;
        }
    }
    Ok((out, frames))
}

/// Short-time Fourier transform with the basis built on the fly.
pub fn stft<S: Scalar>(w: &Waveform<S>, params: StftParams) -> Result<ComplexSpectrogram<S>> {
    params.validate()?;
    stft_with(w, &DftBasis::new(params))
}

pub fn stft_with<S: Scalar>(w: &Waveform<S>, basis: &DftBasis<S>) -> Result<ComplexSpectrogram<S>> {
    let p = basis.params;
    let bins = p.bins();
    let (framed, frames) = windowed_frames(&w.samples, basis)?;
    let mut real = vec![S::zero(); frames * bins];
    let mut imag = vec![S::zero(); frames * bins];
    mm_acc(&mut real, &framed, basis.fwd_re(), frames, p.n_fft, bins);
    mm_acc(&mut imag, &framed, basis.fwd_im(), frames, p.n_fft, bins);
    Ok(ComplexSpectrogram {
        real,
        imag,
        frames,
        bins,
        params: p,
    })
}

/// Inverse STFT: weighted overlap-add with window-sum normalization.
/// Output length is `(frames - 1) * hop + n_fft`.
pub fn istft<S: Scalar>(s: &ComplexSpectrogram<S>, sample_rate: u32) -> Result<Waveform<S>> {
    istft_with(s, &DftBasis::new(s.params), sample_rate)
}

pub fn istft_with<S: Scalar>(
    s: &ComplexSpectrogram<S>,
    basis: &DftBasis<S>,
    sample_rate: u32,
) -> Result<Waveform<S>> {
    let p = basis.params;
    if s.bins != p.bins() || s.params != p || s.real.len() != s.numel() || s.imag.len() != s.numel()
    {
        return Err(Error::invalid_input(
            "spectrogram dims inconsistent with params",
        ));
    }
    let n = p.n_fft;
    let mut time_frames = vec![S::zero(); s.frames * n];
    mm_acc(&mut time_frames, &s.real, basis.inv_re(), s.frames, s.bins, n);
    mm_acc(&mut time_frames, &s.imag, basis.inv_im(), s.frames, s.bins, n);

    let mut out = vec![S::zero(); p.synthesis_len(s.frames)];
    for f in 0..s.frames {
        let seg = &time_frames[f * n..(f + 1) * n];
        for (i, (&x, &w)) in seg.iter().zip(&basis.window).enumerate() {
            out[f * p.hop + i] = out[f * p.hop + i] + x * w;
        }
    }
    let inv_env = basis.inverse_envelope(s.frames)?;
    for (o, &e) in out.iter_mut().zip(&inv_env) {
        *o = *o * e;
    }
    Waveform::new(out, sample_rate)
}

/// Elementwise complex masking: scales magnitudes, leaves phases untouched.
pub fn apply_mask<S: Scalar>(
    s: &ComplexSpectrogram<S>,
    m: &Mask<S>,
) -> Result<ComplexSpectrogram<S>> {
    if m.frames != s.frames || m.bins != s.bins {
        return Err(Error::invalid_input(format!(
            "mask {}x{} does not match spectrogram {}x{}",
            m.frames, m.bins, s.frames, s.bins
        )));
    }
    let mut out = s.clone();
    for ((r, i), &g) in out.real.iter_mut().zip(out.imag.iter_mut()).zip(&m.values) {
        *r = *r * g;
        *i = *i * g;
    }
    Ok(out)
}

pub fn magnitude<S: Scalar>(s: &ComplexSpectrogram<S>) -> MagnitudeSpectrogram<S> {
    let mag = s
        .real
        .iter()
        .zip(&s.imag)
        .map(|(&r, &i)| (r * r + i * i).sqrt())
        .collect();
    MagnitudeSpectrogram {
        mag,
        frames: s.frames,
        bins: s.bins,
    }
}

/// Triangular mel filterbank on the HTK scale, flattened `[bins x n_mels]`.
pub struct MelBank<S: Scalar> {
    pub weights: Vec<S>,
    pub bins: usize,
    pub n_mels: usize,
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl<S: Scalar> MelBank<S> {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32) -> Self {
        let bins = n_fft / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let centers: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut weights = vec![S::zero(); bins * n_mels];
        for m in 0..n_mels {
            let (lo, mid, hi) = (centers[m], centers[m + 1], centers[m + 2]);
            for k in 0..bins {
                let f = k as f64 * sample_rate as f64 / n_fft as f64;
                let rising = (f - lo) / (mid - lo);
                let falling = (hi - f) / (hi - mid);
                let w = rising.min(falling).max(0.0);
                weights[k * n_mels + m] = S::of_f64(w);
            }
        }
        MelBank {
            weights,
            bins,
            n_mels,
        }
    }
}

/// Log-mel features: mel projection of the power spectrum, then natural log
/// with an absolute floor.
pub fn logmel<S: Scalar>(m: &MagnitudeSpectrogram<S>, bank: &MelBank<S>) -> MelFeatures<S> {
    assert_eq!(
        m.bins, bank.bins,
        "invalid input: magnitude bins do not match bank"
    );
    let power: Vec<S> = m.mag.iter().map(|&x| x * x).collect();
    let mut feats = vec![S::zero(); m.frames * bank.n_mels];
    mm_acc(&mut feats, &power, &bank.weights, m.frames, m.bins, bank.n_mels);
    let floor = S::of_f64(LOG_FLOOR);
    for v in feats.iter_mut() {
        *v = v.max(floor).ln();
    }
    MelFeatures {
        feats,
        frames: m.frames,
        n_mels: bank.n_mels,
    }
}

/// Per-dimension global mean/std statistics.
#[derive(Debug, Clone)]
pub struct MvnStats<S: Scalar> {
    pub mean: Vec<S>,
    pub std: Vec<S>,
}

/// Global statistics over every frame of the corpus.
pub fn compute_mvn<S: Scalar>(corpus: &[MelFeatures<S>]) -> Result<MvnStats<S>> {
    let n_mels = corpus
        .first()
        .ok_or_else(|| Error::invalid_input("empty corpus for MVN"))?
        .n_mels;
    let mut mean = vec![0.0f64; n_mels];
    let mut count = 0usize;
    for f in corpus {
        for row in f.feats.chunks(n_mels) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v.as_f64();
            }
            count += 1;
        }
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut var = vec![0.0f64; n_mels];
    for f in corpus {
        for row in f.feats.chunks(n_mels) {
            for ((v, &x), &mu) in var.iter_mut().zip(row).zip(&mean) {
                let d = x.as_f64() - mu;
                *v += d * d;
            }
        }
    }
    let std = var
        .iter()
        .map(|&v| S::of_f64((v / count as f64).sqrt().max(MVN_STD_FLOOR)))
        .collect();
    Ok(MvnStats {
        mean: mean.into_iter().map(S::of_f64).collect(),
        std,
    })
}

pub fn apply_mvn<S: Scalar>(f: &MelFeatures<S>, stats: &MvnStats<S>) -> MelFeatures<S> {
    assert_eq!(f.n_mels, stats.mean.len(), "invalid input: MVN dims mismatch");
    let mut out = f.clone();
    for row in out.feats.chunks_mut(f.n_mels) {
        for ((v, &mu), &sd) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = (*v - mu) / sd;
        }
    }
    out
}

/// Linear-interpolation resampling by `factor`; output length is
/// `round(len / factor)`.
pub fn speed_perturb<S: Scalar>(w: &Waveform<S>, factor: f64) -> Result<Waveform<S>> {
    if !(0.8..=1.25).contains(&factor) {
        return Err(Error::invalid_input(format!(
            "speed factor {factor} outside [0.8, 1.25]"
        )));
    }
    let src = &w.samples;
    let out_len = (src.len() as f64 / factor).round() as usize;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let pos = n as f64 * factor;
        let i0 = pos.floor() as usize;
        if i0 + 1 >= src.len() {
            out.push(src[src.len() - 1]);
            continue;
        }
        let frac = S::of_f64(pos - i0 as f64);
        out.push(src[i0] * (S::one() - frac) + src[i0 + 1] * frac);
    }
    Waveform::new(out, w.sample_rate)
}

/// The 3x augmentation factor set.
pub const SPEED_FACTORS: [f64; 3] = [0.9, 1.0, 1.1];

// ---- WAV I/O: RIFF PCM, 16-bit signed little-endian, mono ----

pub fn write_wav<S: Scalar>(path: &std::path::Path, w: &Waveform<S>) -> Result<()> {
    use std::io::Write;
    let n = w.samples.len() as u32;
    let byte_rate = w.sample_rate * 2;
    let data_len = n * 2;
    let mut buf = Vec::with_capacity(44 + data_len as usize);
    buf.extend_from_slice(b"RIFF");
    buf.extend_from_slice(&(36 + data_len).to_le_bytes());
    buf.extend_from_slice(b"WAVE");
    buf.extend_from_slice(b"fmt ");
    buf.extend_from_slice(&16u32.to_le_bytes());
    buf.extend_from_slice(&1u16.to_le_bytes()); // PCM
    buf.extend_from_slice(&1u16.to_le_bytes()); // mono
    buf.extend_from_slice(&w.sample_rate.to_le_bytes());
    buf.extend_from_slice(&byte_rate.to_le_bytes());
    buf.extend_from_slice(&2u16.to_le_bytes()); // block align
    buf.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    buf.extend_from_slice(b"data");
    buf.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        let v = (s.as_f64() * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_wav<S: Scalar>(path: &std::path::Path) -> Result<Waveform<S>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 44 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::invalid_input(format!(
            "{} is not a RIFF/WAVE file",
            path.display()
        )));
    }
    let mut pos = 12;
    let mut sample_rate = 0u32;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = (pos + 8 + size).min(bytes.len());
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::invalid_input("truncated fmt chunk"));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                sample_rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if format != 1 || channels != 1 || bits != 16 {
                    return Err(Error::invalid_input(
                        "only 16-bit PCM mono WAV files are supported",
                    ));
                }
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos += 8 + size + (size % 2); // chunks are word-aligned
    }
    let data = data.ok_or_else(|| Error::invalid_input("WAV file has no data chunk"))?;
    if sample_rate == 0 {
        return Err(Error::invalid_input("WAV file has no fmt chunk"));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| S::of_f64(i16::from_le_bytes(c.try_into().unwrap()) as f64 / 32768.0))
        .collect();
    Waveform::new(samples, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive per-bin DFT of one windowed frame; the independent oracle.
    fn naive_dft_frame(seg: &[f64], window: &[f64], bins: usize) -> (Vec<f64>, Vec<f64>) {
        let n = seg.len();
        let mut re = vec![0.0; bins];
        let mut im = vec![0.0; bins];
        for (k, (r, i)) in re.iter_mut().zip(im.iter_mut()).enumerate() {
            for (t, (&x, &w)) in seg.iter().zip(window).enumerate() {
                let ang = 2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                *r += x * w * ang.cos();
                *i -= x * w * ang.sin();
            }
        }
        (re, im)
    }

    fn rng_wave(len: usize, seed: u64, rate: u32) -> Waveform<f64> {
        // small LCG keeps the oracle free of external state
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let samples = (0..len)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect();
        Waveform::new(samples, rate).unwrap()
    }

    #[test]
    fn stft_of_zeros_is_zero() {
        let w = Waveform::new(vec![0.0f64; 1024], 16000).unwrap();
        let s = stft(&w, StftParams { n_fft: 512, hop: 128 }).unwrap();
        assert_eq!(s.frames, 1 + (1024 - 512) / 128);
        assert_eq!(s.bins, 257);
        assert!(s.real.iter().chain(&s.imag).all(|&v| v == 0.0));
    }

    #[test]
    fn stft_too_short_errors() {
        let w = Waveform::new(vec![0.1f64; 100], 16000).unwrap();
        match stft(&w, StftParams::default()) {
            Err(Error::InvalidInput(_)) => {}
            other => panic!("expected invalid input, got {other:?}"),
        }
    }

    #[test]
    fn cosine_concentrates_in_its_bin_and_matches_naive_dft() {
        let p = StftParams { n_fft: 512, hop: 128 };
        let k0 = 37usize;
        let samples: Vec<f64> = (0..p.n_fft)
            .map(|n| (2.0 * std::f64::consts::PI * (k0 * n) as f64 / p.n_fft as f64).cos())
            .collect();
        let w = Waveform::new(samples.clone(), 16000).unwrap();
        let s = stft(&w, p).unwrap();
        assert_eq!(s.frames, 1);

        let (re, im) = naive_dft_frame(&samples, &p.window::<f64>(), p.bins());
        for k in 0..p.bins() {
            assert!((s.real[k] - re[k]).abs() < 1e-9, "re bin {k}");
            assert!((s.imag[k] - im[k]).abs() < 1e-9, "im bin {k}");
        }
        // energy concentrated at k0 (the Hann window spreads over +-1 bin)
        let mag: Vec<f64> = (0..p.bins())
            .map(|k| (s.real[k].powi(2) + s.imag[k].powi(2)).sqrt())
            .collect();
        let peak = mag[k0];
        for (k, &m) in mag.iter().enumerate() {
            if k + 2 < k0 || k > k0 + 2 {
                assert!(m < peak * 1e-9, "leak at bin {k}: {m} vs peak {peak}");
            }
        }
    }

    #[test]
    fn perfect_reconstruction_on_interior_samples() {
        let p = StftParams::default();
        let w = rng_wave(16000, 7, 16000);
        let rec = istft(&stft(&w, p).unwrap(), w.sample_rate).unwrap();
        let max_in = w.samples.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        for i in p.n_fft..w.len() - p.n_fft {
            let err = (rec.samples[i] - w.samples[i]).abs() / max_in.max(1e-9);
            assert!(err < 1e-6, "sample {i}: rel err {err}");
        }
    }

    #[test]
    fn istft_of_zeros_is_zero() {
        let p = StftParams::default();
        let s = ComplexSpectrogram {
            real: vec![0.0f64; 5 * p.bins()],
            imag: vec![0.0f64; 5 * p.bins()],
            frames: 5,
            bins: p.bins(),
            params: p,
        };
        let w = istft(&s, 16000).unwrap();
        assert_eq!(w.len(), p.synthesis_len(5));
        assert!(w.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stft_istft_stft_is_idempotent_on_interior_frames() {
        let p = StftParams::default();
        let w = rng_wave(8192, 3, 16000);
        let s1 = stft(&w, p).unwrap();
        let rec = istft(&s1, 16000).unwrap();
        let s2 = stft(&rec, p).unwrap();
        assert_eq!(s2.frames, s1.frames);
        // skip edge frames, where synthesis normalization differs
        let edge = p.n_fft / p.hop;
        for t in edge..s1.frames - edge {
            for k in 0..s1.bins {
                let i = t * s1.bins + k;
                assert!((s1.real[i] - s2.real[i]).abs() < 1e-5, "re frame {t} bin {k}");
                assert!((s1.imag[i] - s2.imag[i]).abs() < 1e-5, "im frame {t} bin {k}");
            }
        }
    }

    #[test]
    fn known_cosine_reconstructs_analytically() {
        let p = StftParams::default();
        let freq = 440.0;
        let rate = 16000u32;
        let samples: Vec<f64> = (0..8000)
            .map(|n| 0.5 * (2.0 * std::f64::consts::PI * freq * n as f64 / rate as f64).sin())
            .collect();
        let w = Waveform::new(samples, rate).unwrap();
        let rec = istft(&stft(&w, p).unwrap(), rate).unwrap();
        for i in p.n_fft..w.len() - p.n_fft {
            assert!(
                (rec.samples[i] - w.samples[i]).abs() < 1e-6,
                "sample {i}: {} vs {}",
                rec.samples[i],
                w.samples[i]
            );
        }
    }

    #[test]
    fn unit_mask_is_identity_and_zero_mask_silences() {
        let p = StftParams::default();
        let w = rng_wave(2048, 11, 16000);
        let s = stft(&w, p).unwrap();
        let unit = Mask::unit(s.frames, s.bins);
        let masked = apply_mask(&s, &unit).unwrap();
        assert_eq!(masked.real, s.real);
        assert_eq!(masked.imag, s.imag);

        let zero = Mask::new(vec![0.0; s.numel()], s.frames, s.bins).unwrap();
        let silenced = apply_mask(&s, &zero).unwrap();
        assert!(silenced.real.iter().chain(&silenced.imag).all(|&v| v == 0.0));
    }

    #[test]
    fn constant_half_mask_halves_magnitude_and_keeps_phase() {
        let p = StftParams::default();
        let w = rng_wave(2048, 13, 16000);
        let s = stft(&w, p).unwrap();
        let half = Mask::new(vec![0.5; s.numel()], s.frames, s.bins).unwrap();
        let masked = apply_mask(&s, &half).unwrap();
        let m0 = magnitude(&s);
        let m1 = magnitude(&masked);
        for (a, b) in m0.mag.iter().zip(&m1.mag) {
            assert!((b - 0.5 * a).abs() < 1e-12);
        }
        for t in 0..s.frames {
            for k in 0..s.bins {
                if m0.mag[t * s.bins + k] > 1e-9 {
                    let d = (s.phase_at(t, k) - masked.phase_at(t, k)).abs();
                    assert!(d < 1e-12, "phase moved at {t},{k} by {d}");
                }
            }
        }
    }

    #[test]
    fn mask_dim_mismatch_errors() {
        let p = StftParams::default();
        let w = rng_wave(2048, 1, 16000);
        let s = stft(&w, p).unwrap();
        let bad = Mask::unit(s.frames + 1, s.bins);
        assert!(apply_mask(&s, &bad).is_err());
    }

    #[test]
    fn magnitude_of_three_four_is_five() {
        let p = StftParams { n_fft: 4, hop: 2 };
        let s = ComplexSpectrogram {
            real: vec![3.0, 0.0, 0.0],
            imag: vec![4.0, 0.0, 0.0],
            frames: 1,
            bins: 3,
            params: p,
        };
        let m = magnitude(&s);
        assert_eq!(m.mag[0], 5.0);
        assert_eq!(m.mag[1], 0.0);
    }

    #[test]
    fn magnitude_matches_elementwise_oracle() {
        let p = StftParams::default();
        let w = rng_wave(2048, 23, 16000);
        let s = stft(&w, p).unwrap();
        let m = magnitude(&s);
        for i in 0..s.numel() {
            let want = (s.real[i] * s.real[i] + s.imag[i] * s.imag[i]).sqrt();
            assert!((m.mag[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn logmel_floor_on_silence() {
        let bank = MelBank::<f64>::new(80, 512, 16000);
        let m = MagnitudeSpectrogram {
            mag: vec![0.0; 3 * 257],
            frames: 3,
            bins: 257,
        };
        let f = logmel(&m, &bank);
        for &v in &f.feats {
            assert!((v - LOG_FLOOR.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn filterbank_rows_are_positive_and_bins_are_covered() {
        let bank = MelBank::<f64>::new(80, 512, 16000);
        // every filter collects energy from at least one bin
        for m in 0..bank.n_mels {
            let sum: f64 = (0..bank.bins)
                .map(|k| bank.weights[k * bank.n_mels + m])
                .sum();
            assert!(sum > 0.0, "filter {m} is empty");
        }
        // every bin except possibly the outermost edges feeds some filter
        for k in 1..bank.bins - 1 {
            let sum: f64 = (0..bank.n_mels)
                .map(|m| bank.weights[k * bank.n_mels + m])
                .sum();
            assert!(sum > 0.0, "bin {k} feeds no filter");
        }
    }

    #[test]
    fn doubling_magnitude_adds_log_four() {
        let bank = MelBank::<f64>::new(80, 512, 16000);
        let w = rng_wave(2048, 5, 16000);
        let s = stft(&w, StftParams::default()).unwrap();
        let m1 = magnitude(&s);
        let m2 = MagnitudeSpectrogram {
            mag: m1.mag.iter().map(|&v| 2.0 * v).collect(),
            frames: m1.frames,
            bins: m1.bins,
        };
        let f1 = logmel(&m1, &bank);
        let f2 = logmel(&m2, &bank);
        for (&a, &b) in f1.feats.iter().zip(&f2.feats) {
            if a > LOG_FLOOR.ln() + 1e-9 {
                assert!((b - a - 4f64.ln()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mvn_self_normalization() {
        let bank = MelBank::<f64>::new(80, 512, 16000);
        let feats: Vec<MelFeatures<f64>> = (0..4)
            .map(|i| {
                let w = rng_wave(4096, 100 + i, 16000);
                logmel(&magnitude(&stft(&w, StftParams::default()).unwrap()), &bank)
            })
            .collect();
        let stats = compute_mvn(&feats).unwrap();
        let normed: Vec<MelFeatures<f64>> = feats.iter().map(|f| apply_mvn(f, &stats)).collect();
        let check = compute_mvn(&normed).unwrap();
        for &m in &check.mean {
            assert!(m.abs() < 1e-10, "residual mean {m}");
        }
        for &s in &check.std {
            assert!((s - 1.0).abs() < 1e-6, "residual std {s}");
        }
    }

    #[test]
    fn mvn_of_constant_corpus_clamps_std() {
        let f = MelFeatures {
            feats: vec![2.5f64; 10 * 4],
            frames: 10,
            n_mels: 4,
        };
        let stats = compute_mvn(std::slice::from_ref(&f)).unwrap();
        for &s in &stats.std {
            assert_eq!(s, MVN_STD_FLOOR);
        }
        let normed = apply_mvn(&f, &stats);
        assert!(normed.feats.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mvn_two_utterance_hand_check() {
        let a = MelFeatures {
            feats: vec![1.0f64, 3.0],
            frames: 2,
            n_mels: 1,
        };
        let b = MelFeatures {
            feats: vec![5.0f64, 7.0],
            frames: 2,
            n_mels: 1,
        };
        let stats = compute_mvn(&[a, b]).unwrap();
        // frames: 1, 3, 5, 7 -> mean 4, var 5
        assert!((stats.mean[0] - 4.0).abs() < 1e-12);
        assert!((stats.std[0] - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn speed_perturb_identity_and_lengths() {
        let w = rng_wave(9000, 77, 16000);
        let same = speed_perturb(&w, 1.0).unwrap();
        assert_eq!(same.samples, w.samples);
        let slower = speed_perturb(&w, 0.9).unwrap();
        assert_eq!(slower.len(), 10000);
        assert!(speed_perturb(&w, 0.5).is_err());
        assert_eq!(SPEED_FACTORS, [0.9, 1.0, 1.1]);
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let w = rng_wave(1234, 9, 16000);
        write_wav(&path, &w).unwrap();
        let r: Waveform<f64> = read_wav(&path).unwrap();
        assert_eq!(r.sample_rate, 16000);
        assert_eq!(r.len(), w.len());
        for (a, b) in r.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0, "{a} vs {b}");
        }
    }
}
