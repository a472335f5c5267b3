use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::PositionalMode;
use crate::config::{parse_value, KvConfig};
use crate::error::{Error, Result};
use crate::positional::{RotationSchedule, DEFAULT_BASE, DEFAULT_PSEUDO_LENGTH};

/// Positional treatment of one model component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionEncoding {
    None,
    /// Absolute sinusoids added to the input embeddings.
    Sinusoidal,
    Rope,
    PmRope,
}

impl PositionEncoding {
    /// Rotation applied inside attention.
    pub fn attention_mode(self) -> PositionalMode {
        match self {
            PositionEncoding::None | PositionEncoding::Sinusoidal => PositionalMode::None,
            PositionEncoding::Rope => PositionalMode::Rope,
            PositionEncoding::PmRope => PositionalMode::PmRope,
        }
    }
}

impl fmt::Display for PositionEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PositionEncoding::None => "none",
            PositionEncoding::Sinusoidal => "sinusoidal",
            PositionEncoding::Rope => "rope",
            PositionEncoding::PmRope => "pmrope",
        })
    }
}

impl FromStr for PositionEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "sinusoidal" => Ok(Self::Sinusoidal),
            "rope" => Ok(Self::Rope),
            "pmrope" => Ok(Self::PmRope),
            other => Err(Error::Config(format!("unknown position encoding {other:?}"))),
        }
    }
}

/// Token ids on the codec side: data tokens `0..V`, then specials.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodecVocab {
    pub data: usize,
}

impl CodecVocab {
    pub fn sep(self) -> usize {
        self.data
    }
    pub fn eos(self) -> usize {
        self.data + 1
    }
    pub fn empty(self) -> usize {
        self.data + 2
    }
    pub fn bos(self) -> usize {
        self.data + 3
    }
    pub fn pad(self) -> usize {
        self.data + 4
    }
    /// Embedding rows and output classes per codebook.
    pub fn size(self) -> usize {
        self.data + 5
    }
}

/// Token ids on the phoneme side: symbols `0..P`, then specials.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhonemeVocab {
    pub data: usize,
}

impl PhonemeVocab {
    pub fn sep(self) -> usize {
        self.data
    }
    pub fn pad(self) -> usize {
        self.data + 1
    }
    pub fn size(self) -> usize {
        self.data + 2
    }
}

/// Architecture of the encoder-decoder codec language model.
///
/// The toy defaults are sized for CPU training. The full-scale reference
/// configuration is 12 encoder / 40 decoder layers, width 1024, 16 heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub codebooks: usize,
    pub phoneme_vocab: usize,
    pub codec_vocab: usize,
    pub encoder_pos: PositionEncoding,
    pub decoder_pos: PositionEncoding,
    pub cross_pos: PositionEncoding,
    pub rope_base: f64,
    pub pseudo_length: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            enc_layers: 2,
            dec_layers: 4,
            model_dim: 128,
            ff_dim: 512,
            heads: 4,
            codebooks: 4,
            phoneme_vocab: 6,
            codec_vocab: 192,
            encoder_pos: PositionEncoding::PmRope,
            decoder_pos: PositionEncoding::PmRope,
            cross_pos: PositionEncoding::PmRope,
            rope_base: DEFAULT_BASE,
            pseudo_length: DEFAULT_PSEUDO_LENGTH,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.codebooks == 0 {
            return bad("codebooks must be >= 1".into());
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return bad(format!(
                "model_dim {} is not divisible into {} heads",
                self.model_dim, self.heads
            ));
        }
        if self.dec_layers == 0 {
            return bad("dec_layers must be >= 1".into());
        }
        if self.phoneme_vocab == 0 || self.codec_vocab == 0 {
            return bad("vocabularies must be non-empty".into());
        }
        let rotary = [self.encoder_pos, self.decoder_pos, self.cross_pos]
            .iter()
            .any(|p| p.attention_mode().is_rotary());
        if rotary && self.head_dim() % 2 != 0 {
            return bad(format!("rotary attention needs an even head_dim, got {}", self.head_dim()));
        }
        if self.enc_layers > 0 && self.cross_pos == PositionEncoding::Sinusoidal {
            return bad("cross attention cannot use sinusoidal positions".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn is_decoder_only(&self) -> bool {
        self.enc_layers == 0
    }

    pub fn codec(&self) -> CodecVocab {
        CodecVocab {
            data: self.codec_vocab,
        }
    }

    pub fn phonemes(&self) -> PhonemeVocab {
        PhonemeVocab {
            data: self.phoneme_vocab,
        }
    }

    pub fn schedule(&self) -> Result<RotationSchedule> {
        let d = self.head_dim();
        RotationSchedule::new(if d % 2 == 0 { d } else { 2 }, self.rope_base, self.pseudo_length)
    }

    /// Same positional treatment for every component.
    pub fn with_positions(mut self, p: PositionEncoding) -> Self {
        self.encoder_pos = p;
        self.decoder_pos = p;
        self.cross_pos = p;
        self
    }
}

impl KvConfig for ModelConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "enc_layers" => self.enc_layers = parse_value(key, value)?,
            "dec_layers" => self.dec_layers = parse_value(key, value)?,
            "model_dim" => self.model_dim = parse_value(key, value)?,
            "ff_dim" => self.ff_dim = parse_value(key, value)?,
            "heads" => self.heads = parse_value(key, value)?,
            "codebooks" => self.codebooks = parse_value(key, value)?,
            "phoneme_vocab" => self.phoneme_vocab = parse_value(key, value)?,
            "codec_vocab" => self.codec_vocab = parse_value(key, value)?,
            "encoder_pos" => self.encoder_pos = value.parse()?,
            "decoder_pos" => self.decoder_pos = value.parse()?,
            "cross_pos" => self.cross_pos = value.parse()?,
            "rope_base" => self.rope_base = parse_value(key, value)?,
            "pseudo_length" => self.pseudo_length = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("enc_layers".into(), self.enc_layers.to_string()),
            ("dec_layers".into(), self.dec_layers.to_string()),
            ("model_dim".into(), self.model_dim.to_string()),
            ("ff_dim".into(), self.ff_dim.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("codebooks".into(), self.codebooks.to_string()),
            ("phoneme_vocab".into(), self.phoneme_vocab.to_string()),
            ("codec_vocab".into(), self.codec_vocab.to_string()),
            ("encoder_pos".into(), self.encoder_pos.to_string()),
            ("decoder_pos".into(), self.decoder_pos.to_string()),
            ("cross_pos".into(), self.cross_pos.to_string()),
            ("rope_base".into(), format!("{:?}", self.rope_base)),
            ("pseudo_length".into(), format!("{:?}", self.pseudo_length)),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_are_distinct_and_outside_data_range() {
        let c = CodecVocab { data: 10 };
        let ids = [c.sep(), c.eos(), c.empty(), c.bos(), c.pad()];
        for (i, a) in ids.iter().enumerate() {
            assert!(*a >= 10 && *a < c.size());
            assert!(ids[i + 1..].iter().all(|b| b != a));
        }
        let p = PhonemeVocab { data: 6 };
        assert!(p.sep() >= 6 && p.pad() >= 6 && p.sep() != p.pad());
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = ModelConfig::default().with_positions(PositionEncoding::Rope);
        cfg.heads = 2;
        let mut back = ModelConfig::default();
        for (k, v) in cfg.to_kv() {
            assert!(back.set(&k, &v).unwrap());
        }
        assert_eq!(back, cfg);
        assert!(!back.set("nope", "1").unwrap());
    }

    #[test]
    fn validation() {
        let mut cfg = ModelConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        cfg.heads = 4;
        cfg.codebooks = 0;
        assert!(cfg.validate().is_err());
    }
}
