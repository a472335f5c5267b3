//! Duration-controlled autoregressive generation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::model::sequence::{cell_role, decoder_inputs, decoder_prefix, CellRole};
use crate::model::{assemble_text, total_frames, CodecGrid, IncrementalDecoder, Model};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopPolicy {
    /// EOS is masked and exactly `T_req` frames are produced.
    ForceStopAtT,
    /// Codebook 0 may emit EOS early; EOS is forced at `T_req`.
    EosOrT,
}

impl FromStr for StopPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "force" => Ok(Self::ForceStopAtT),
            "eos" => Ok(Self::EosOrT),
            other => Err(Error::Config(format!("unknown stop policy {other:?} (force|eos)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Repetition {
    Count(usize),
    /// As many copies as fit the context cap.
    FillToMax,
}

impl fmt::Display for Repetition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Repetition::Count(n) => write!(f, "{n}"),
            Repetition::FillToMax => f.write_str("max"),
        }
    }
}

impl FromStr for Repetition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "max" {
            return Ok(Self::FillToMax);
        }
        s.parse()
            .map(Self::Count)
            .map_err(|_| Error::Config(format!("repetition must be a count or `max`, got {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeConfig {
    pub top_k: usize,
    pub requested_frames: usize,
    pub repetition: Repetition,
    pub stop: StopPolicy,
    pub seed: u64,
    /// Context length that `FillToMax` fills up to.
    pub max_context_frames: usize,
    /// Generation refuses contexts longer than this.
    pub hard_cap_frames: usize,
}

impl DecodeConfig {
    pub fn new(requested_frames: usize, seed: u64) -> Self {
        Self {
            top_k: 10,
            requested_frames,
            repetition: Repetition::Count(1),
            stop: StopPolicy::ForceStopAtT,
            seed,
            max_context_frames: 64,
            hard_cap_frames: 512,
        }
    }
}

/// Prompt transcript and tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Prompt {
    pub phonemes: Vec<usize>,
    pub grid: CodecGrid,
}

impl From<&Utterance> for Prompt {
    fn from(u: &Utterance) -> Self {
        Self {
            phonemes: u.phonemes.clone(),
            grid: u.grid.clone(),
        }
    }
}

/// Copies that `mode` asks for given the context budget.
///
/// The repeated prompt occupies `n·L + (n−1)` frames and is followed by a sep
/// frame, `T_req` target frames and `K−1` delay frames.
pub fn repetition_count(
    prompt_frames: usize,
    mode: Repetition,
    max_context_frames: usize,
    requested_frames: usize,
    codebooks: usize,
) -> Result<usize> {
    if prompt_frames == 0 {
        return Err(Error::contract("cannot repeat an empty prompt"));
    }
    let context = |n: usize| total_frames(n * prompt_frames + n - 1 + 1, requested_frames, codebooks);
    match mode {
        Repetition::Count(n) => Ok(n),
        Repetition::FillToMax => {
            if context(1) > max_context_frames {
                return Err(Error::contract(format!(
                    "one {prompt_frames}-frame prompt with {requested_frames} target frames needs {} frames, cap is {max_context_frames}",
                    context(1)
                )));
            }
            let mut n = 1;
            while context(n + 1) <= max_context_frames {
                n += 1;
            }
            Ok(n)
        }
    }
}

/// `n` sep-joined copies of the prompt on both the text and token side.
pub fn repeat_prompt(prompt: &Prompt, n: usize, phoneme_sep: usize, codec_sep: usize) -> Result<Prompt> {
    if prompt.grid.is_empty() || prompt.phonemes.is_empty() {
        return Err(Error::contract("cannot repeat an empty prompt"));
    }
    if n == 0 {
        return Err(Error::contract("repetition count must be >= 1"));
    }
    let mut phonemes = Vec::new();
    let sep = CodecGrid::filled(prompt.grid.codebooks(), 1, codec_sep);
    let mut parts: Vec<&CodecGrid> = Vec::new();
    for i in 0..n {
        if i > 0 {
            phonemes.push(phoneme_sep);
            parts.push(&sep);
        }
        phonemes.extend_from_slice(&prompt.phonemes);
        parts.push(&prompt.grid);
    }
    Ok(Prompt {
        phonemes,
        grid: CodecGrid::concat(&parts)?,
    })
}

/// What happened at one sampled decoder step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// Delayed frame index.
    pub frame: usize,
    pub tokens: Vec<usize>,
    /// Entropy (nats) of each sampled codebook's top-k distribution.
    pub entropy: Vec<f64>,
    /// Head-averaged argmax over encoder positions in the last cross-attention layer.
    pub attention_argmax: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Generation {
    /// Undelayed target grid.
    pub grid: CodecGrid,
    /// Whole delayed decoder stream, prefix included.
    pub delayed: CodecGrid,
    pub text: Vec<usize>,
    pub prefix_frames: usize,
    /// Total the progress indices were measured against.
    pub planned_total: usize,
    pub repetitions: usize,
    pub stopped_by_eos: bool,
    pub steps: Vec<StepDiagnostics>,
    /// Logits per sampled step, only with `keep_logits`.
    pub logits: Vec<(usize, Vec<Vec<f64>>)>,
}

/// Top-k sample among `allowed` classes; returns the class and the entropy.
fn sample_top_k<R: Rng>(logits: &[f64], allowed: usize, extra: Option<usize>, k: usize, rng: &mut R) -> (usize, f64) {
    let mut cand: Vec<usize> = (0..allowed).chain(extra).collect();
    cand.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    cand.truncate(k.max(1));
    let max = logits[cand[0]];
    let weights: Vec<f64> = cand.iter().map(|&c| (logits[c] - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    let entropy = -weights
        .iter()
        .map(|w| w / sum)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>();
    if cand.len() == 1 {
        return (cand[0], entropy);
    }
    let mut u = rng.gen::<f64>() * sum;
    for (c, w) in cand.iter().zip(&weights) {
        if u < *w {
            return (*c, entropy);
        }
        u -= w;
    }
    (*cand.last().expect("non-empty"), entropy)
}

/// Generates `cfg.requested_frames` target frames for `target_phonemes`.
pub fn generate(
    model: &Model,
    prompt: Option<&Prompt>,
    target_phonemes: &[usize],
    cfg: &DecodeConfig,
    keep_logits: bool,
) -> Result<Generation> {
    let mc = &model.config;
    let (pv, cv) = (mc.phonemes(), mc.codec());
    let k = mc.codebooks;
    if cfg.top_k == 0 || cfg.requested_frames == 0 {
        return Err(Error::contract("top_k and requested frames must be >= 1"));
    }
    if target_phonemes.is_empty() {
        return Err(Error::contract("target transcript is empty"));
    }
    let (repeated, repetitions) = match prompt {
        Some(p) => {
            let n = repetition_count(
                p.grid.len(),
                cfg.repetition,
                cfg.max_context_frames,
                cfg.requested_frames,
                k,
            )?;
            (Some(repeat_prompt(p, n, pv.sep(), cv.sep())?), n)
        }
        None => (None, 0),
    };
    let text = assemble_text(repeated.as_ref().map(|p| p.phonemes.as_slice()), target_phonemes, pv);
    let prefix = decoder_prefix(repeated.as_ref().map(|p| &p.grid), k, cv)?;
    let lp = prefix.len();
    let t_req = cfg.requested_frames;
    let planned = total_frames(lp, t_req, k);
    if planned > cfg.hard_cap_frames {
        return Err(Error::contract(format!(
            "context of {planned} frames ({repetitions} prompt copies, {lp} prefix frames, {t_req} target frames) exceeds the {} cap",
            cfg.hard_cap_frames
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dec = IncrementalDecoder::new(model, &text, planned)?;
    let mut delayed = CodecGrid::filled(k, 0, 0);
    let mut pending = CodecGrid::filled(k, 1, cv.bos());
    let mut target_len: Option<usize> = None;
    let mut steps = Vec::new();
    let mut kept = Vec::new();
    let mut i = 0;
    while i < total_frames(lp, target_len.unwrap_or(t_req), k) {
        let lt = target_len.unwrap_or(t_req);
        let sampled = (0..k).any(|c| matches!(cell_role(c, i, lp, lt), CellRole::Target(_)));
        let out = if sampled {
            let out = dec.feed(&pending)?;
            pending = CodecGrid::filled(k, 0, 0);
            Some(out)
        } else {
            None
        };
        let mut frame = vec![0; k];
        let mut entropy = Vec::new();
        for c in 0..k {
            let lt = target_len.unwrap_or(t_req);
            frame[c] = match cell_role(c, i, lp, lt) {
                CellRole::Filler => cv.empty(),
                CellRole::Prefix(f) => prefix.get(c, f),
                CellRole::Eos => cv.eos(),
                CellRole::Target(f) => {
                    let logits = &out.as_ref().expect("sampled step has logits").logits.last().expect("one row")[c];
                    let eos = (c == 0 && cfg.stop == StopPolicy::EosOrT).then_some(cv.eos());
                    let (tok, h) = sample_top_k(logits, cv.data, eos, cfg.top_k, &mut rng);
                    entropy.push(h);
                    if tok == cv.eos() {
                        target_len = Some(f);
                    }
                    tok
                }
            };
        }
        if let Some(out) = &out {
            let attention_argmax = out.cross_weights.last().map(|w| {
                let s = text.len();
                let heads = w.len() / s;
                let mut avg = vec![0.0; s];
                for h in 0..heads {
                    for (a, x) in avg.iter_mut().zip(&w[h * s..(h + 1) * s]) {
                        *a += x;
                    }
                }
                (0..s).fold(0, |best, j| if avg[j] > avg[best] { j } else { best })
            });
            steps.push(StepDiagnostics {
                frame: i,
                tokens: frame.clone(),
                entropy,
                attention_argmax,
            });
            if keep_logits {
                kept.push((i, out.logits.last().expect("one row").clone()));
            }
        }
        delayed.push_frame(&frame)?;
        pending.push_frame(&frame)?;
        i += 1;
    }
    let lt = target_len.unwrap_or(t_req);
    let rows = (0..k)
        .map(|c| (0..lt).map(|f| delayed.get(c, lp + f + c)).collect())
        .collect();
    Ok(Generation {
        grid: CodecGrid::new(rows)?,
        delayed,
        text,
        prefix_frames: lp,
        planned_total: planned,
        repetitions,
        stopped_by_eos: target_len.is_some_and(|l| l < t_req),
        steps,
        logits: kept,
    })
}

/// Decoder inputs that reproduce a generation under teacher forcing.
pub fn replay_inputs(g: &Generation, model: &Model) -> CodecGrid {
    decoder_inputs(&g.delayed.slice(0, g.delayed.len() - 1), model.config.codec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> Model {
        let cfg = ModelConfig {
            enc_layers: 1,
            dec_layers: 1,
            model_dim: 16,
            ff_dim: 16,
            heads: 2,
            codebooks: 4,
            phoneme_vocab: 4,
            codec_vocab: 12,
            ..ModelConfig::default()
        };
        Model::new(cfg, 5).unwrap()
    }

    fn prompt() -> Prompt {
        Prompt {
            phonemes: vec![1, 2],
            grid: CodecGrid::new(vec![vec![1, 2, 3]; 4]).unwrap(),
        }
    }

    #[test]
    fn repetition_arithmetic() {
        let p = Prompt {
            phonemes: vec![0; 3],
            grid: CodecGrid::filled(4, 10, 1),
        };
        let r = repeat_prompt(&p, 3, 9, 99).unwrap();
        assert_eq!(r.grid.len(), 32);
        assert_eq!(r.phonemes.len(), 3 * 3 + 2);
        assert_eq!(repeat_prompt(&p, 1, 9, 99).unwrap(), p);
        assert_eq!(repetition_count(10, Repetition::FillToMax, 100, 40, 4).unwrap(), 5);
        assert!(repetition_count(60, Repetition::FillToMax, 100, 40, 4).is_err());
        assert_eq!("max".parse::<Repetition>().unwrap(), Repetition::FillToMax);
        assert_eq!("3".parse::<Repetition>().unwrap(), Repetition::Count(3));
    }

    #[test]
    fn force_stop_length_is_exact() {
        let m = tiny();
        for t in [1, 5, 13] {
            let mut cfg = DecodeConfig::new(t, 3);
            cfg.top_k = 4;
            let g = generate(&m, Some(&prompt()), &[0, 3, 1], &cfg, false).unwrap();
            assert_eq!(g.grid.len(), t);
            assert!(!g.stopped_by_eos);
            assert!(g.grid.rows().iter().flatten().all(|&x| x < 12));
        }
    }

    #[test]
    fn greedy_is_deterministic_and_matches_replay() {
        let m = tiny();
        let mut cfg = DecodeConfig::new(6, 0);
        cfg.top_k = 1;
        cfg.stop = StopPolicy::EosOrT;
        let a = generate(&m, Some(&prompt()), &[0, 3], &cfg, true).unwrap();
        cfg.seed = 99;
        let b = generate(&m, Some(&prompt()), &[0, 3], &cfg, true).unwrap();
        assert_eq!(a.grid, b.grid);
        let inputs = replay_inputs(&a, &m);
        for (i, logits) in &a.logits {
            let want = m
                .decode_step(&a.text, &a.delayed.slice(0, *i), a.planned_total)
                .unwrap();
            for (x, y) in logits.iter().flatten().zip(want.iter().flatten()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        assert_eq!(inputs.len(), a.delayed.len());
    }

    #[test]
    fn hard_cap_enforced() {
        let m = tiny();
        let mut cfg = DecodeConfig::new(10, 0);
        cfg.repetition = Repetition::Count(4);
        cfg.hard_cap_frames = 20;
        let err = generate(&m, Some(&prompt()), &[1], &cfg, false).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
