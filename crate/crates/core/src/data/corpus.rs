//! Synthetic phoneme-to-codec corpus with speaker styles.
//!
//! Each phoneme symbol `v` has a base run length `r(v)` in `{2,3,4,5}`. A
//! speaker realizes it as `max(1, round(r(v)·rate_bias))` frames. Frame `j`
//! of a run of `v` carries codebook-0 token `(v·J + j + style_offset) mod V`,
//! where the style offset is one of `B` block offsets `C·b` with `C = P·J`.
//! Codebooks `1..K` carry a seeded lookup of `(codebook, v, j)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CodecGrid;

const STYLE_STREAM: u64 = 0x5157_1e00;
const UTTER_STREAM: u64 = 0x07e2_0000;
const TABLE_STREAM: u64 = 0x7ab1_e000;

/// Shape of the synthetic token space.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub seed: u64,
    /// Phoneme alphabet size `P`.
    pub phonemes: usize,
    pub codebooks: usize,
    /// Style blocks `B`.
    pub style_blocks: usize,
    /// Token slots per phoneme `J`, bounding the within-run position.
    pub run_slots: usize,
    base_runs: Vec<usize>,
    /// `[codebook-1][v][j]` tokens for codebooks `1..K`.
    residual: Vec<Vec<Vec<usize>>>,
}

impl CorpusSpec {
    pub fn new(seed: u64, phonemes: usize, codebooks: usize, style_blocks: usize, run_slots: usize) -> Result<Self> {
        if phonemes == 0 || codebooks == 0 || style_blocks == 0 || run_slots == 0 {
            return Err(Error::contract("corpus dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(TABLE_STREAM);
        // balanced multiset so the mean base run is 3.5 for any seed
        let mut base_runs: Vec<usize> = (0..phonemes).map(|i| 2 + i % 4).collect();
        base_runs.shuffle(&mut rng);
        let vocab = phonemes * run_slots * style_blocks;
        let residual = (1..codebooks)
            .map(|_| {
                (0..phonemes)
                    .map(|_| (0..run_slots).map(|_| rng.gen_range(0..vocab)).collect())
                    .collect()
            })
            .collect();
        Ok(Self {
            seed,
            phonemes,
            codebooks,
            style_blocks,
            run_slots,
            base_runs,
            residual,
        })
    }

    /// Six phonemes, four codebooks, four style blocks, eight run slots.
    pub fn toy(seed: u64) -> Self {
        Self::new(seed, 6, 4, 4, 8).expect("valid toy dimensions")
    }

    /// Codebook data vocabulary `V = B·P·J`.
    pub fn codec_vocab(&self) -> usize {
        self.style_blocks * self.block_size()
    }

    /// Tokens per style block, `C = P·J`.
    pub fn block_size(&self) -> usize {
        self.phonemes * self.run_slots
    }

    pub fn base_run(&self, v: usize) -> usize {
        self.base_runs[v]
    }

    pub fn speaker(&self, speaker_id: u64) -> SpeakerStyle {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(STYLE_STREAM ^ (speaker_id << 20));
        let block = rng.gen_range(0..self.style_blocks);
        SpeakerStyle {
            speaker_id,
            style_offset: block * self.block_size(),
            rate_bias: rng.gen_range(0.8..=1.2),
        }
    }

    /// Realized run length of phoneme `v` at the given rate.
    pub fn run_length(&self, v: usize, rate_bias: f64) -> usize {
        ((self.base_runs[v] as f64 * rate_bias).round() as usize).max(1)
    }

    /// Builds the grid for explicit phonemes and run lengths.
    pub fn render(&self, phonemes: &[usize], runs: &[usize], style_offset: usize) -> Result<CodecGrid> {
        if phonemes.len() != runs.len() {
            return Err(Error::dim(format!(
                "{} phonemes with {} run lengths",
                phonemes.len(),
                runs.len()
            )));
        }
        let vocab = self.codec_vocab();
        let mut rows = vec![Vec::new(); self.codebooks];
        for (&v, &run) in phonemes.iter().zip(runs) {
            if v >= self.phonemes {
                return Err(Error::index(format!("phoneme {v} >= alphabet {}", self.phonemes)));
            }
            if run == 0 || run > self.run_slots {
                return Err(Error::contract(format!(
                    "run of {run} frames outside 1..={}",
                    self.run_slots
                )));
            }
            for j in 0..run {
                rows[0].push((v * self.run_slots + j + style_offset) % vocab);
                for c in 1..self.codebooks {
                    rows[c].push(self.residual[c - 1][v][j]);
                }
            }
        }
        if rows[0].is_empty() {
            return Err(Error::contract("utterance needs at least one phoneme"));
        }
        CodecGrid::new(rows)
    }

    /// Utterance of `phonemes` spoken by `style` at `rate_bias`.
    pub fn realize(&self, phonemes: Vec<usize>, style: SpeakerStyle, rate_bias: f64, id: u64) -> Result<Utterance> {
        let runs: Vec<usize> = phonemes.iter().map(|&v| self.run_length(v, rate_bias)).collect();
        let grid = self.render(&phonemes, &runs, style.style_offset)?;
        Ok(Utterance {
            id,
            speaker: style,
            phonemes,
            runs,
            grid,
        })
    }

    /// Deterministic utterance `index` of a speaker.
    pub fn gen_utterance(&self, speaker_id: u64, index: u64, phoneme_count: usize) -> Result<Utterance> {
        self.gen_utterance_at_rate(speaker_id, index, phoneme_count, None)
    }

    /// As [`gen_utterance`](Self::gen_utterance) with the speaker's rate
    /// optionally replaced.
    pub fn gen_utterance_at_rate(
        &self,
        speaker_id: u64,
        index: u64,
        phoneme_count: usize,
        rate_bias: Option<f64>,
    ) -> Result<Utterance> {
        if phoneme_count == 0 {
            return Err(Error::contract("phoneme_count must be >= 1"));
        }
        let style = self.speaker(speaker_id);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ speaker_id.rotate_left(32));
        rng.set_stream(UTTER_STREAM ^ (index << 24) ^ phoneme_count as u64);
        let mut phonemes = Vec::with_capacity(phoneme_count);
        while phonemes.len() < phoneme_count {
            let v = rng.gen_range(0..self.phonemes);
            // no immediate repeats, so run boundaries stay visible
            if self.phonemes > 1 && phonemes.last() == Some(&v) {
                continue;
            }
            phonemes.push(v);
        }
        let id = (speaker_id << 32) | index;
        self.realize(phonemes, style, rate_bias.unwrap_or(style.rate_bias), id)
    }

    /// Re-times `u` as if played `factor` times faster.
    pub fn speed_perturb(&self, u: &Utterance, factor: f64, delta: f64) -> Result<Utterance> {
        if !(1.0 - delta..=1.0 + delta).contains(&factor) {
            return Err(Error::contract(format!(
                "speed factor {factor} outside [{}, {}]",
                1.0 - delta,
                1.0 + delta
            )));
        }
        let runs: Vec<usize> = u
            .runs
            .iter()
            .map(|&r| ((r as f64 / factor).round() as usize).max(1))
            .collect();
        let grid = self.render(&u.phonemes, &runs, u.speaker.style_offset)?;
        Ok(Utterance {
            id: u.id,
            speaker: u.speaker,
            phonemes: u.phonemes.clone(),
            runs,
            grid,
        })
    }
}

/// Per-speaker style, a deterministic function of corpus seed and id.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerStyle {
    pub speaker_id: u64,
    pub style_offset: usize,
    pub rate_bias: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: u64,
    pub speaker: SpeakerStyle,
    pub phonemes: Vec<usize>,
    /// Realized frames per phoneme.
    pub runs: Vec<usize>,
    pub grid: CodecGrid,
}

impl Utterance {
    pub fn duration_frames(&self) -> usize {
        self.grid.len()
    }

    /// Frame index where phoneme `k` starts (`k = phonemes.len()` gives `L`).
    pub fn phoneme_start(&self, k: usize) -> usize {
        self.runs[..k].iter().sum()
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub utterance_id: u64,
    pub speaker_id: u64,
    pub phonemes: Vec<usize>,
    pub frames: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_phoneme_expansion() {
        let spec = CorpusSpec::toy(1);
        let v = (0..6).find(|&v| spec.base_run(v) == 3).unwrap();
        let style = SpeakerStyle {
            speaker_id: 0,
            style_offset: 0,
            rate_bias: 1.0,
        };
        let u = spec.realize(vec![v], style, 1.0, 0).unwrap();
        assert_eq!(u.duration_frames(), 3);
    }

    #[test]
    fn deterministic() {
        let spec = CorpusSpec::toy(7);
        let a = spec.gen_utterance(3, 2, 9).unwrap();
        let b = CorpusSpec::toy(7).gen_utterance(3, 2, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, spec.gen_utterance(3, 3, 9).unwrap());
    }

    #[test]
    fn mean_frames_per_phoneme() {
        let spec = CorpusSpec::toy(5);
        let (mut frames, mut phonemes) = (0, 0);
        for i in 0..1000u64 {
            let u = spec.gen_utterance(i % 50, i, 1 + (i as usize % 9)).unwrap();
            frames += u.duration_frames();
            phonemes += u.phonemes.len();
        }
        let mean = frames as f64 / phonemes as f64;
        assert!((2.8..=4.2).contains(&mean), "{mean}");
    }

    #[test]
    fn speed_perturbation() {
        let spec = CorpusSpec::toy(2);
        let u = spec.gen_utterance(1, 1, 12).unwrap();
        assert_eq!(spec.speed_perturb(&u, 1.0, 0.25).unwrap(), u);
        assert!(spec.speed_perturb(&u, 1.3, 0.25).is_err());

        let v = (0..6).find(|&v| spec.base_run(v) == 5).unwrap();
        let style = SpeakerStyle {
            speaker_id: 0,
            style_offset: 0,
            rate_bias: 1.0,
        };
        let fives = spec.realize(vec![v; 4], style, 1.0, 0).unwrap();
        let fast = spec.speed_perturb(&fives, 1.25, 0.25).unwrap();
        assert_eq!(fast.runs, vec![4; 4]);

        let slow = spec.speed_perturb(&u, 0.75, 0.25).unwrap();
        assert_eq!(slow.phonemes, u.phonemes);
        let (l, l2) = (u.duration_frames() as f64, slow.duration_frames() as f64);
        assert!((l2 * 0.75 - l).abs() <= u.phonemes.len() as f64);
    }

    #[test]
    fn style_offsets_are_block_multiples() {
        let spec = CorpusSpec::toy(9);
        for id in 0..100 {
            let s = spec.speaker(id);
            assert_eq!(s.style_offset % spec.block_size(), 0);
            assert!(s.style_offset < spec.codec_vocab());
            assert!((0.8..=1.2).contains(&s.rate_bias));
        }
    }
}
