//! Training modes, the step loop, gradient routing, checkpoints, metrics.
//!
//! Every utterance in a batch runs forward/backward on its own tape, so
//! batch items can be processed by parallel workers; per-utterance gradients
//! are reduced in index order, which keeps results identical for any worker
//! count. Dual-channel training computes the three losses on one tape and
//! runs three backward sweeps, then combines the per-parameter-group
//! gradients with the configured clean/enhancement weights before the shared
//! Adam step.

pub mod compare;
mod config;

pub use config::{LossWeights, TrainConfig, TrainingMode};

use crate::asr::{AsrConfig, AsrModel, Vocab};
use crate::corpus::{self, ManifestRecord, TrainItem as _Unused};
use crate::error::{Error, Result};
use crate::eval::{aggregate_wer, si_snr, wer, WerResult};
use crate::scalar::Scalar;
use crate::se::{enhance_t, se_loss_t, CachedSpectra, PhaseMode, SeConfig, SeNetwork, SpectralPipeline};
use crate::signal::{self, MvnStats, Waveform};
use crate::tensor::{
    load_checkpoint, save_checkpoint, Adam, AdamConfig, Binder, ParamSet, Tape, Tensor,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;
