//! Recognition back-end: Conformer encoder, transformer decoder, CTC and
//! attention losses, and greedy decoding.

mod ctc;
mod model;

pub use ctc::{ctc_nll, min_alignment_frames};
pub use model::{AsrModel, ConformerBlock, DecoderLayer};

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::path::Path;

/// CTC blank token id.
pub const BLANK_ID: usize = 0;
/// Shared start/end-of-sequence id.
pub const SOS_EOS_ID: usize = 1;
/// Padding id.
pub const PAD_ID: usize = 2;
/// First id available for real symbols.
pub const FIRST_SYMBOL_ID: usize = 3;

/// Token inventory. Line `i` of the vocabulary file is the token with id `i`;
/// lines 0..2 are reserved for blank, sos/eos, and pad.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < FIRST_SYMBOL_ID + 1 {
            return Err(Error::invalid_input(
                "vocabulary needs blank, sos/eos, pad and at least one symbol",
            ));
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid_input(format!("duplicate token {t}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Character vocabulary over the given alphabet, reserved ids first.
    pub fn from_alphabet(alphabet: &str) -> Result<Self> {
        let mut tokens = vec![
            "<blank>".to_string(),
            "<sos/eos>".to_string(),
            "<pad>".to_string(),
        ];
        tokens.extend(alphabet.chars().map(|c| c.to_string()));
        Vocab::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Character-level encoding; every char must be a vocabulary symbol.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        if text.is_empty() {
            return Err(Error::invalid_input("cannot tokenize an empty string"));
        }
        text.chars()
            .map(|c| {
                let s = c.to_string();
                match self.index.get(&s) {
                    Some(&id) if id >= FIRST_SYMBOL_ID => Ok(id),
                    _ => Err(Error::invalid_input(format!(
                        "character {c:?} is not in the vocabulary"
                    ))),
                }
            })
            .collect()
    }

    /// Inverse of [`Vocab::encode`]; reserved ids are skipped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| id >= FIRST_SYMBOL_ID)
            .filter_map(|&id| self.token(id))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, self.tokens.join("\n") + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        Vocab::new(tokens)
    }
}

/// Token ids paired with the original text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub text: String,
}

impl TokenSequence {
    pub fn from_text(text: &str, vocab: &Vocab) -> Result<Self> {
        Ok(TokenSequence {
            ids: vocab.encode(text)?,
            text: text.to_string(),
        })
    }

    pub fn from_ids(ids: Vec<usize>, vocab: &Vocab) -> Self {
        let text = vocab.decode(&ids);
        TokenSequence { ids, text }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Recognizer hyperparameters. The defaults are the desk-scale configuration;
/// full-scale settings (12 encoder layers, 6 decoder layers) remain available
/// through the config file.
#[derive(Debug, Clone)]
pub struct AsrConfig {
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub conv_kernel: usize,
    pub n_mels: usize,
    /// CTC weight in the combined loss, in `[0, 1]`.
    pub ctc_weight: f64,
}

impl Default for AsrConfig {
    fn default() -> Self {
        AsrConfig {
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            conv_kernel: 15,
            n_mels: 80,
            ctc_weight: 0.3,
        }
    }
}

impl AsrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ctc_weight) {
            return Err(Error::invalid_input("ctc weight must be in [0, 1]"));
        }
        if self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::invalid_input(
                "d_model must be positive and divisible by the head count",
            ));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::invalid_input("conv kernel must be odd"));
        }
        if self.n_encoder_layers == 0 || self.n_decoder_layers == 0 {
            return Err(Error::invalid_input("layer counts must be positive"));
        }
        Ok(())
    }

    /// Output frame count of the 4x convolutional subsampling front-end.
    pub fn subsampled_len(&self, t: usize) -> usize {
        t.div_ceil(2).div_ceil(2)
    }
}
