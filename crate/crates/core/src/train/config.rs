//! Flat `section.key = value` run configuration.
//!
//! Values from a config file are overridden by CLI flags; the fully resolved
//! configuration is echoed into the run directory and the metrics log.

use crate::error::{Error, Result};
use crate::layers::ActivationKind;
use crate::se::PhaseMode;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Scalar weights of the combined losses: `lambda` balances CTC against
/// attention, `beta` balances the enhancement loss, `gamma` weights the
/// clean channel in dual-channel training.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.3,
            beta: 0.3,
            gamma: 0.7,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid_input(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Which system to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingMode {
    /// Recognizer on globally normalized noisy features; no enhancement.
    Baseline,
    /// Enhancement trained alone, then the recognizer on frozen enhanced
    /// features.
    Disjoint,
    /// Whole pipeline from the recognition loss only.
    Joint,
    /// Multitask joint training: `(1-beta) * asr + beta * se`.
    Mtjl,
    /// Dual-channel multitask training with clean/enhanced mixing and
    /// per-component gradient routing.
    DcMtjl,
}

impl TrainingMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(TrainingMode::Baseline),
            "disjoint" => Ok(TrainingMode::Disjoint),
            "joint" => Ok(TrainingMode::Joint),
            "mtjl" => Ok(TrainingMode::Mtjl),
            "dc-mtjl" | "dc_mtjl" | "dcmtjl" => Ok(TrainingMode::DcMtjl),
            other => Err(Error::invalid_input(format!("unknown training mode {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrainingMode::Baseline => "baseline",
            TrainingMode::Disjoint => "disjoint",
            TrainingMode::Joint => "joint",
            TrainingMode::Mtjl => "mtjl",
            TrainingMode::DcMtjl => "dc-mtjl",
        }
    }

    pub fn uses_se(&self) -> bool {
        !matches!(self, TrainingMode::Baseline)
    }
}

/// Fully resolved training configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: TrainingMode,
    pub steps: u64,
    pub se_steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub workers: usize,
    pub val_interval: u64,
    pub grad_clip: f64,
    pub speed_perturb: bool,
    pub noam_warmup: u64,
    pub weights: LossWeights,
    pub se_layers: usize,
    pub se_units: usize,
    pub se_mask_activation: ActivationKind,
    pub se_phase_mode: PhaseMode,
    pub se_dropout: f64,
    pub asr_encoder_layers: usize,
    pub asr_decoder_layers: usize,
    pub asr_d_model: usize,
    pub asr_heads: usize,
    pub asr_d_ff: usize,
    pub asr_kernel: usize,
    pub n_mels: usize,
    pub corpus_dir: PathBuf,
    pub run_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainingMode::Mtjl,
            steps: 1000,
            se_steps: 0,
            batch_size: 32,
            seed: 17,
            lr: 0.002,
            workers: 0,
            val_interval: 200,
            grad_clip: 5.0,
            speed_perturb: false,
            noam_warmup: 0,
            weights: LossWeights::default(),
            se_layers: 2,
            se_units: 128,
            se_mask_activation: ActivationKind::Relu,
            se_phase_mode: PhaseMode::Preserve,
            se_dropout: 0.1,
            asr_encoder_layers: 2,
            asr_decoder_layers: 2,
            asr_d_model: 64,
            asr_heads: 4,
            asr_d_ff: 128,
            asr_kernel: 15,
            n_mels: 80,
            corpus_dir: PathBuf::from("runs/corpus"),
            run_dir: PathBuf::from("runs/exp"),
        }
    }
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Parse(format!("line {}: expected key = value", lineno + 1))
        })?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

impl TrainConfig {
    /// Parse config text over the defaults; unknown keys are an error.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply(parse_kv(text)?)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid_input(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Apply key/value overrides (CLI flags or file contents).
    pub fn apply(&mut self, kv: BTreeMap<String, String>) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Parse(format!("bad value for {key}: {v}")))
        }
        for (key, v) in kv {
            match key.as_str() {
                "train.mode" => self.mode = TrainingMode::parse(&v)?,
                "train.steps" => self.steps = num(&key, &v)?,
                "train.se_steps" => self.se_steps = num(&key, &v)?,
                "train.batch_size" => self.batch_size = num(&key, &v)?,
                "train.seed" => self.seed = num(&key, &v)?,
                "train.lr" => self.lr = num(&key, &v)?,
                "train.workers" => self.workers = num(&key, &v)?,
                "train.val_interval" => self.val_interval = num(&key, &v)?,
                "train.grad_clip" => self.grad_clip = num(&key, &v)?,
                "train.speed_perturb" => self.speed_perturb = num(&key, &v)?,
                "train.noam_warmup" => self.noam_warmup = num(&key, &v)?,
                "loss.lambda" => self.weights.lambda = num(&key, &v)?,
                "loss.beta" => self.weights.beta = num(&key, &v)?,
                "loss.gamma" => self.weights.gamma = num(&key, &v)?,
                "se.layers" => self.se_layers = num(&key, &v)?,
                "se.units" => self.se_units = num(&key, &v)?,
                "se.mask_activation" => self.se_mask_activation = ActivationKind::parse(&v)?,
                "se.phase_mode" => self.se_phase_mode = PhaseMode::parse(&v)?,
                "se.dropout" => self.se_dropout = num(&key, &v)?,
                "asr.encoder_layers" => self.asr_encoder_layers = num(&key, &v)?,
                "asr.decoder_layers" => self.asr_decoder_layers = num(&key, &v)?,
                "asr.d_model" => self.asr_d_model = num(&key, &v)?,
                "asr.heads" => self.asr_heads = num(&key, &v)?,
                "asr.ff_dim" => self.asr_d_ff = num(&key, &v)?,
                "asr.kernel" => self.asr_kernel = num(&key, &v)?,
                "asr.n_mels" => self.n_mels = num(&key, &v)?,
                "corpus.dir" => self.corpus_dir = PathBuf::from(v),
                "run.dir" => self.run_dir = PathBuf::from(v),
                other => return Err(Error::Parse(format!("unknown config key {other}"))),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::invalid_input("steps and batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.se_dropout) {
            return Err(Error::invalid_input("dropout must be in [0, 1)"));
        }
        Ok(())
    }

    /// Canonical text form; parsing it back reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "train.mode = {}", self.mode.name());
        let _ = writeln!(s, "train.steps = {}", self.steps);
        let _ = writeln!(s, "train.se_steps = {}", self.se_steps);
        let _ = writeln!(s, "train.batch_size = {}", self.batch_size);
        let _ = writeln!(s, "train.seed = {}", self.seed);
        let _ = writeln!(s, "train.lr = {}", self.lr);
        let _ = writeln!(s, "train.workers = {}", self.workers);
        let _ = writeln!(s, "train.val_interval = {}", self.val_interval);
        let _ = writeln!(s, "train.grad_clip = {}", self.grad_clip);
        let _ = writeln!(s, "train.speed_perturb = {}", self.speed_perturb);
        let _ = writeln!(s, "train.noam_warmup = {}", self.noam_warmup);
        let _ = writeln!(s, "loss.lambda = {}", self.weights.lambda);
        let _ = writeln!(s, "loss.beta = {}", self.weights.beta);
        let _ = writeln!(s, "loss.gamma = {}", self.weights.gamma);
        let _ = writeln!(s, "se.layers = {}", self.se_layers);
        let _ = writeln!(s, "se.units = {}", self.se_units);
        let _ = writeln!(s, "se.mask_activation = {}", self.se_mask_activation.name());
        let _ = writeln!(s, "se.phase_mode = {}", self.se_phase_mode.name());
        let _ = writeln!(s, "se.dropout = {}", self.se_dropout);
        let _ = writeln!(s, "asr.encoder_layers = {}", self.asr_encoder_layers);
        let _ = writeln!(s, "asr.decoder_layers = {}", self.asr_decoder_layers);
        let _ = writeln!(s, "asr.d_model = {}", self.asr_d_model);
        let _ = writeln!(s, "asr.heads = {}", self.asr_heads);
        let _ = writeln!(s, "asr.ff_dim = {}", self.asr_d_ff);
        let _ = writeln!(s, "asr.kernel = {}", self.asr_kernel);
        let _ = writeln!(s, "asr.n_mels = {}", self.n_mels);
        let _ = writeln!(s, "corpus.dir = {}", self.corpus_dir.display());
        let _ = writeln!(s, "run.dir = {}", self.run_dir.display());
        s
    }
}
