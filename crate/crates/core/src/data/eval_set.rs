//! Held-out prompt/target pairs from speakers never seen in training.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::{CorpusSpec, SpeakerStyle, Utterance};
use crate::error::{Error, Result};

/// First speaker id used for evaluation; training ids stay below it.
pub const EVAL_SPEAKER_BASE: u64 = 1 << 24;
const MAX_TRIES: usize = 2000;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalItem {
    pub id: usize,
    pub speaker: SpeakerStyle,
    pub prompt: Utterance,
    /// Reference target; its phonemes are the model's text input.
    pub target: Utterance,
    pub requested_frames: usize,
    /// Rate the prompt was spoken at.
    pub prompt_rate: f64,
}

/// Named evaluation sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSetKind {
    /// Targets inside the training length range.
    Short,
    /// Targets near 1.5 times the training context.
    Extrap1_5x,
    /// Short targets whose prompt is spoken at the opposite rate regime.
    Mismatch,
}

impl EvalSetKind {
    pub fn target_frames(self) -> RangeInclusive<usize> {
        match self {
            EvalSetKind::Short | EvalSetKind::Mismatch => 16..=36,
            EvalSetKind::Extrap1_5x => 94..=98,
        }
    }

    pub fn mismatch(self) -> bool {
        self == EvalSetKind::Mismatch
    }

    /// Speaker-id block so distinct sets never share speakers.
    fn speaker_block(self) -> u64 {
        match self {
            EvalSetKind::Short => 0,
            EvalSetKind::Extrap1_5x => 1 << 16,
            EvalSetKind::Mismatch => 2 << 16,
        }
    }
}

impl fmt::Display for EvalSetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalSetKind::Short => "short",
            EvalSetKind::Extrap1_5x => "extrap_1_5x",
            EvalSetKind::Mismatch => "mismatch",
        })
    }
}

impl FromStr for EvalSetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "short" => Ok(Self::Short),
            "extrap_1_5x" => Ok(Self::Extrap1_5x),
            "mismatch" => Ok(Self::Mismatch),
            other => Err(Error::Config(format!("unknown eval set {other:?}"))),
        }
    }
}

/// Builds `count` deterministic pairs with target length in `target_frames`.
///
/// Each pair uses its own speaker. The prompt has 3 to 5 phonemes; with
/// `mismatch` it is spoken at a rate from the opposite regime of the target
/// speaker (`[0.8, 0.9]` against `[1.1, 1.2]`).
pub fn build_eval_set(
    spec: &CorpusSpec,
    count: usize,
    target_frames: RangeInclusive<usize>,
    mismatch: bool,
    speaker_base: u64,
) -> Result<Vec<EvalItem>> {
    let (lo, hi) = (*target_frames.start(), *target_frames.end());
    if lo == 0 || lo > hi {
        return Err(Error::contract(format!("target range {lo}..={hi} is empty")));
    }
    let max_run = spec.run_slots;
    let mut items = Vec::with_capacity(count);
    for id in 0..count {
        let speaker_id = EVAL_SPEAKER_BASE + speaker_base + id as u64;
        let speaker = spec.speaker(speaker_id);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ speaker_id);
        let prompt_rate = if mismatch {
            if speaker.rate_bias < 1.0 {
                rng.gen_range(1.1..=1.2)
            } else {
                rng.gen_range(0.8..=0.9)
            }
        } else {
            speaker.rate_bias
        };
        let prompt = spec.gen_utterance_at_rate(speaker_id, 0, rng.gen_range(3..=5), Some(prompt_rate))?;
        let per_phoneme = 3.5 * speaker.rate_bias;
        let mut target = None;
        for attempt in 0..MAX_TRIES {
            let mid = rng.gen_range(lo..=hi) as f64;
            let n = ((mid / per_phoneme).round() as usize).max(1);
            if n * max_run < lo {
                continue;
            }
            let u = spec.gen_utterance(speaker_id, 1 + attempt as u64, n)?;
            if target_frames.contains(&u.duration_frames()) {
                target = Some(u);
                break;
            }
        }
        let target = target.ok_or_else(|| {
            Error::contract(format!(
                "speaker {speaker_id}: no target of {lo}..={hi} frames after {MAX_TRIES} tries"
            ))
        })?;
        items.push(EvalItem {
            id,
            speaker,
            requested_frames: target.duration_frames(),
            prompt_rate,
            prompt,
            target,
        });
    }
    Ok(items)
}

/// The standard set of a given kind.
pub fn standard_eval_set(spec: &CorpusSpec, kind: EvalSetKind, count: usize) -> Result<Vec<EvalItem>> {
    build_eval_set(spec, count, kind.target_frames(), kind.mismatch(), kind.speaker_block())
}
