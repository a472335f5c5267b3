//! Training corpus and the continuation/prompt mixed sampler.

use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{CorpusSpec, ManifestRecord, Utterance};
use crate::error::{Error, Result};
use crate::model::{assemble_decoder, assemble_text, total_frames, DecoderSequence, PhonemeVocab};

const MAX_DRAWS: usize = 200;

/// Pre-generated utterances of the training speakers.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub utterances: Vec<Utterance>,
    /// Utterance indices per speaker, in speaker order.
    pub by_speaker: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub speakers: u64,
    pub utterances_per_speaker: u64,
    pub min_phonemes: usize,
    pub max_phonemes: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            speakers: 64,
            utterances_per_speaker: 16,
            min_phonemes: 3,
            max_phonemes: 16,
        }
    }
}

impl Corpus {
    /// Training speakers are ids `0..speakers`.
    pub fn build(spec: CorpusSpec, cfg: &CorpusConfig) -> Result<Self> {
        if cfg.min_phonemes == 0 || cfg.min_phonemes > cfg.max_phonemes {
            return Err(Error::Config(format!(
                "phoneme range {}..={} is empty",
                cfg.min_phonemes, cfg.max_phonemes
            )));
        }
        let span = (cfg.max_phonemes - cfg.min_phonemes + 1) as u64;
        let mut utterances = Vec::new();
        let mut by_speaker = Vec::new();
        for s in 0..cfg.speakers {
            let mut ids = Vec::new();
            for i in 0..cfg.utterances_per_speaker {
                let n = cfg.min_phonemes + ((s * 7 + i * 13 + i / 3) % span) as usize;
                ids.push(utterances.len());
                utterances.push(spec.gen_utterance(s, i, n)?);
            }
            by_speaker.push(ids);
        }
        Ok(Self {
            spec,
            utterances,
            by_speaker,
        })
    }

    pub fn from_utterances(spec: CorpusSpec, utterances: Vec<Utterance>) -> Self {
        let mut speakers: Vec<u64> = utterances.iter().map(|u| u.speaker.speaker_id).collect();
        speakers.sort_unstable();
        speakers.dedup();
        let by_speaker = speakers
            .iter()
            .map(|s| {
                (0..utterances.len())
                    .filter(|&i| utterances[i].speaker.speaker_id == *s)
                    .collect()
            })
            .collect();
        Self {
            spec,
            utterances,
            by_speaker,
        }
    }

    pub fn speaker_ids(&self) -> Vec<u64> {
        self.by_speaker
            .iter()
            .map(|ids| self.utterances[ids[0]].speaker.speaker_id)
            .collect()
    }

    /// One JSON record per utterance.
    pub fn write_manifest<W: Write>(&self, mut w: W) -> Result<()> {
        for u in &self.utterances {
            let rec = ManifestRecord {
                utterance_id: u.id,
                speaker_id: u.speaker.speaker_id,
                phonemes: u.phonemes.clone(),
                frames: u.duration_frames(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CpmConfig {
    /// Probability of a two-utterance prompt.
    pub p: f64,
    /// Probability of speed-perturbing the prompt utterance.
    pub p_speed: f64,
    pub delta: f64,
    pub max_context_frames: usize,
}

impl Default for CpmConfig {
    fn default() -> Self {
        Self {
            p: 0.5,
            p_speed: 0.5,
            delta: 0.25,
            max_context_frames: 64,
        }
    }
}

impl CpmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) || !(0.0..=1.0).contains(&self.p_speed) {
            return Err(Error::Config("p and p_speed must lie in [0, 1]".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta {} outside (0, 1)", self.delta)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CpmMode {
    Prompt,
    Continuation,
}

/// Encoder ids, delayed decoder stream and loss mask for one example.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub text: Vec<usize>,
    pub sequence: DecoderSequence,
    pub mode: CpmMode,
    pub speaker_id: u64,
}

impl TrainingExample {
    /// Progress totals `(S, T_total)`.
    pub fn totals(&self) -> (usize, usize) {
        (self.text.len(), self.sequence.total())
    }

    /// Builds an example from prompt and target parts.
    pub fn assemble(
        prompt: &Utterance,
        target_phonemes: &[usize],
        target: &crate::model::CodecGrid,
        phonemes: PhonemeVocab,
        codec: crate::model::CodecVocab,
        mode: CpmMode,
    ) -> Result<Self> {
        Ok(Self {
            text: assemble_text(Some(&prompt.phonemes), target_phonemes, phonemes),
            sequence: assemble_decoder(Some(&prompt.grid), target, codec)?,
            mode,
            speaker_id: prompt.speaker.speaker_id,
        })
    }
}

fn fits(prefix: usize, target: usize, k: usize, cap: usize) -> bool {
    total_frames(prefix + 1, target, k) <= cap
}

fn vocabs(corpus: &Corpus) -> (PhonemeVocab, crate::model::CodecVocab) {
    (
        PhonemeVocab {
            data: corpus.spec.phonemes,
        },
        crate::model::CodecVocab {
            data: corpus.spec.codec_vocab(),
        },
    )
}

fn sample_prompt<R: Rng>(corpus: &Corpus, rng: &mut R, cfg: &CpmConfig) -> Result<Option<TrainingExample>> {
    let eligible: Vec<&Vec<usize>> = corpus.by_speaker.iter().filter(|ids| ids.len() >= 2).collect();
    if eligible.is_empty() {
        return Ok(None);
    }
    let (pv, cv) = vocabs(corpus);
    let k = corpus.spec.codebooks;
    for _ in 0..MAX_DRAWS {
        let ids = eligible.choose(rng).expect("non-empty");
        let pair: Vec<&usize> = ids.choose_multiple(rng, 2).collect();
        let target = &corpus.utterances[*pair[1]];
        let mut prompt = corpus.utterances[*pair[0]].clone();
        if rng.gen_bool(cfg.p_speed) {
            let factor = rng.gen_range(1.0 - cfg.delta..=1.0 + cfg.delta);
            prompt = corpus.spec.speed_perturb(&prompt, factor, cfg.delta)?;
        }
        if !fits(prompt.duration_frames(), target.duration_frames(), k, cfg.max_context_frames) {
            continue;
        }
        return TrainingExample::assemble(&prompt, &target.phonemes, &target.grid, pv, cv, CpmMode::Prompt).map(Some);
    }
    Ok(None)
}

/// Splits `u` at the phoneme boundary nearest a uniform frame in the middle half.
pub fn continuation_split<R: Rng>(u: &Utterance, rng: &mut R) -> Option<usize> {
    let n = u.phonemes.len();
    if n < 2 {
        return None;
    }
    let l = u.duration_frames() as f64;
    let point = rng.gen_range(0.25 * l..=0.75 * l);
    (1..n).min_by(|&a, &b| {
        let da = (u.phoneme_start(a) as f64 - point).abs();
        let db = (u.phoneme_start(b) as f64 - point).abs();
        da.total_cmp(&db)
    })
}

fn sample_continuation<R: Rng>(corpus: &Corpus, rng: &mut R, cfg: &CpmConfig) -> Result<TrainingExample> {
    let (pv, cv) = vocabs(corpus);
    let k = corpus.spec.codebooks;
    for _ in 0..MAX_DRAWS {
        let u = corpus
            .utterances
            .choose(rng)
            .ok_or_else(|| Error::contract("empty corpus"))?;
        let Some(split) = continuation_split(u, rng) else {
            continue;
        };
        let f = u.phoneme_start(split);
        let l = u.duration_frames();
        if !fits(f, l - f, k, cfg.max_context_frames) {
            continue;
        }
        let prefix = Utterance {
            id: u.id,
            speaker: u.speaker,
            phonemes: u.phonemes[..split].to_vec(),
            runs: u.runs[..split].to_vec(),
            grid: u.grid.slice(0, f),
        };
        return TrainingExample::assemble(
            &prefix,
            &u.phonemes[split..],
            &u.grid.slice(f, l),
            pv,
            cv,
            CpmMode::Continuation,
        );
    }
    Err(Error::contract(format!(
        "no utterance fits a {}-frame context after {MAX_DRAWS} draws",
        cfg.max_context_frames
    )))
}

/// Draws one training example.
pub fn cpm_sample<R: Rng>(corpus: &Corpus, rng: &mut R, cfg: &CpmConfig) -> Result<TrainingExample> {
    if rng.gen_bool(cfg.p) {
        if let Some(ex) = sample_prompt(corpus, rng, cfg)? {
            return Ok(ex);
        }
        warn!("no speaker pair fits the context in prompt mode; using continuation");
    }
    sample_continuation(corpus, rng, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corpus() -> Corpus {
        Corpus::build(
            CorpusSpec::toy(4),
            &CorpusConfig {
                speakers: 8,
                utterances_per_speaker: 4,
                ..CorpusConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn continuation_only_at_p_zero() {
        let c = corpus();
        let cfg = CpmConfig {
            p: 0.0,
            ..CpmConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sep = c.spec.phonemes;
        for _ in 0..50 {
            let ex = cpm_sample(&c, &mut rng, &cfg).unwrap();
            assert_eq!(ex.mode, CpmMode::Continuation);
            assert_eq!(ex.text.iter().filter(|&&t| t == sep).count(), 1);
            assert!(ex.sequence.total() <= 64);
        }
    }

    #[test]
    fn prompt_frequency_and_speaker_sharing() {
        let c = corpus();
        let cfg = CpmConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut prompts = 0;
        for _ in 0..10_000 {
            let ex = cpm_sample(&c, &mut rng, &cfg).unwrap();
            if ex.mode == CpmMode::Prompt {
                prompts += 1;
            }
            let lp = ex.sequence.prefix_frames;
            for row in &ex.sequence.loss_mask {
                assert!(row[..lp].iter().all(|&m| m == 0.0));
            }
        }
        let freq = prompts as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&freq), "{freq}");
    }

    #[test]
    fn small_corpus_falls_back() {
        let spec = CorpusSpec::toy(3);
        let u = spec.gen_utterance(0, 0, 6).unwrap();
        let c = Corpus::from_utterances(spec, vec![u]);
        let cfg = CpmConfig {
            p: 1.0,
            ..CpmConfig::default()
        };
        let ex = cpm_sample(&c, &mut ChaCha8Rng::seed_from_u64(0), &cfg).unwrap();
        assert_eq!(ex.mode, CpmMode::Continuation);
    }

    #[test]
    fn manifest_lines() {
        let c = corpus();
        let mut buf = Vec::new();
        c.write_manifest(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), c.utterances.len());
        let rec: ManifestRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(rec.frames, c.utterances[0].duration_frames());
    }
}
