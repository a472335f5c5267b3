//! Training loop, optimizer and run configuration.

use std::time::Instant;

use log::{error, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{parse_floats, parse_kv, parse_value, render_floats, render_kv, KvConfig};
use crate::data::{cpm_sample, Corpus, CorpusConfig, CorpusSpec, CpmConfig, TrainingExample};
use crate::error::{Error, Result};
use crate::model::forward::{forward, weighted_codebook_loss};
use crate::model::{Model, ModelConfig};
use crate::numeric::Tape;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Peak learning rate reached at the end of warmup.
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub codebook_weights: Vec<f64>,
    /// Weights switched in at `second_stage_step`, if both are set.
    pub second_stage_weights: Option<Vec<f64>>,
    pub second_stage_step: Option<u64>,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub cpm: CpmConfig,
    pub corpus_seed: u64,
    pub corpus: CorpusConfig,
    pub style_blocks: usize,
    pub run_slots: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 16,
            learning_rate: 2e-3,
            warmup_steps: 200,
            codebook_weights: vec![5.0, 1.0, 0.5, 0.1],
            second_stage_weights: None,
            second_stage_step: None,
            grad_clip: 1.0,
            seed: 0,
            checkpoint_every: 0,
            cpm: CpmConfig::default(),
            corpus_seed: 1,
            corpus: CorpusConfig::default(),
            style_blocks: 4,
            run_slots: 8,
        }
    }
}

/// Weights of the optional second training stage.
pub const SECOND_STAGE_WEIGHTS: [f64; 4] = [2.5, 2.0, 1.5, 0.6];

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.codebook_weights.len() != model.codebooks {
            return bad(format!(
                "{} codebook weights for {} codebooks",
                self.codebook_weights.len(),
                model.codebooks
            ));
        }
        if let Some(w) = &self.second_stage_weights {
            if w.len() != model.codebooks {
                return bad(format!("{} second-stage weights for {} codebooks", w.len(), model.codebooks));
            }
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        self.cpm.validate()
    }

    /// Learning rate at `step`: linear warmup, then inverse-sqrt decay.
    pub fn lr_at(&self, step: u64) -> f64 {
        let s = (step + 1) as f64;
        let w = self.warmup_steps.max(1) as f64;
        self.learning_rate * (s / w).min((w / s).sqrt())
    }

    pub fn weights_at(&self, step: u64) -> &[f64] {
        match (&self.second_stage_weights, self.second_stage_step) {
            (Some(w), Some(at)) if step >= at => w,
            _ => &self.codebook_weights,
        }
    }

    pub fn corpus_spec(&self, model: &ModelConfig) -> Result<CorpusSpec> {
        let spec = CorpusSpec::new(
            self.corpus_seed,
            model.phoneme_vocab,
            model.codebooks,
            self.style_blocks,
            self.run_slots,
        )?;
        if spec.codec_vocab() != model.codec_vocab {
            return Err(Error::Config(format!(
                "codec_vocab {} does not match the corpus token space {} (style_blocks·phonemes·run_slots)",
                model.codec_vocab,
                spec.codec_vocab()
            )));
        }
        Ok(spec)
    }
}

impl KvConfig for TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "steps" => self.steps = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "warmup_steps" => self.warmup_steps = parse_value(key, value)?,
            "codebook_weights" => self.codebook_weights = parse_floats(key, value)?,
            "second_stage_weights" => {
                self.second_stage_weights = match value {
                    "none" => None,
                    _ => Some(parse_floats(key, value)?),
                }
            }
            "second_stage_step" => {
                self.second_stage_step = match value {
                    "none" => None,
                    _ => Some(parse_value(key, value)?),
                }
            }
            "grad_clip" => self.grad_clip = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "prompt_prob" => self.cpm.p = parse_value(key, value)?,
            "speed_prob" => self.cpm.p_speed = parse_value(key, value)?,
            "speed_delta" => self.cpm.delta = parse_value(key, value)?,
            "max_context_frames" => self.cpm.max_context_frames = parse_value(key, value)?,
            "corpus_seed" => self.corpus_seed = parse_value(key, value)?,
            "speakers" => self.corpus.speakers = parse_value(key, value)?,
            "utterances_per_speaker" => self.corpus.utterances_per_speaker = parse_value(key, value)?,
            "min_phonemes" => self.corpus.min_phonemes = parse_value(key, value)?,
            "max_phonemes" => self.corpus.max_phonemes = parse_value(key, value)?,
            "style_blocks" => self.style_blocks = parse_value(key, value)?,
            "run_slots" => self.run_slots = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_kv(&self) -> Vec<(String, String)> {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        vec![
            ("steps".into(), self.steps.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("learning_rate".into(), format!("{:?}", self.learning_rate)),
            ("warmup_steps".into(), self.warmup_steps.to_string()),
            ("codebook_weights".into(), render_floats(&self.codebook_weights)),
            (
                "second_stage_weights".into(),
                opt(self.second_stage_weights.as_deref().map(render_floats)),
            ),
            (
                "second_stage_step".into(),
                opt(self.second_stage_step.map(|s| s.to_string())),
            ),
            ("grad_clip".into(), format!("{:?}", self.grad_clip)),
            ("seed".into(), self.seed.to_string()),
            ("checkpoint_every".into(), self.checkpoint_every.to_string()),
            ("prompt_prob".into(), format!("{:?}", self.cpm.p)),
            ("speed_prob".into(), format!("{:?}", self.cpm.p_speed)),
            ("speed_delta".into(), format!("{:?}", self.cpm.delta)),
            ("max_context_frames".into(), self.cpm.max_context_frames.to_string()),
            ("corpus_seed".into(), self.corpus_seed.to_string()),
            ("speakers".into(), self.corpus.speakers.to_string()),
            (
                "utterances_per_speaker".into(),
                self.corpus.utterances_per_speaker.to_string(),
            ),
            ("min_phonemes".into(), self.corpus.min_phonemes.to_string()),
            ("max_phonemes".into(), self.corpus.max_phonemes.to_string()),
            ("style_blocks".into(), self.style_blocks.to_string()),
            ("run_slots".into(), self.run_slots.to_string()),
        ]
    }
}

/// Model and training settings read from one config file.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Parses `key = value` text; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text)? {
            if !cfg.model.set(&k, &v)? && !cfg.train.set(&k, &v)? {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate(&self.model)?;
        self.train.corpus_spec(&self.model).map(|_| ())
    }

    pub fn render(&self) -> String {
        let mut kv = self.model.to_kv();
        kv.extend(self.train.to_kv());
        render_kv(&kv)
    }
}

/// Adam moments for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model.params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update from the gradients stored in `model.params`.
    pub fn step(&mut self, model: &mut Model, lr: f64, grad_scale: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in model.params.tensors_mut().iter_mut().enumerate() {
            let Some(g) = p.grad().map(|g| g.to_vec()) else {
                continue;
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.values_mut().iter_mut().enumerate() {
                let g = g[j] * grad_scale;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *w -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// One metrics line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub per_codebook_loss: Vec<f64>,
    pub lr: f64,
    pub wall_ms: f64,
}

/// Loss and gradients of one example, gradients added into the model.
pub fn example_loss(model: &mut Model, ex: &TrainingExample, weights: &[f64], scale: f64) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let vars = model.params.to_tape(&mut tape);
    let inputs = ex.sequence.inputs(model.config.codec());
    let out = forward(model, &mut tape, &vars, &ex.text, &inputs, ex.sequence.total())?;
    let loss = weighted_codebook_loss(
        &mut tape,
        &out.logits,
        &ex.sequence.grid,
        &ex.sequence.loss_mask,
        weights,
        model.config.codec(),
    )?;
    let value = tape.value(loss.total)[0];
    let per: Vec<f64> = loss.per_codebook.iter().map(|&v| tape.value(v)[0]).collect();
    if scale != 0.0 {
        let root = tape.scale(loss.total, scale);
        tape.backward(root)?;
        model.params.accumulate_from(&tape, &vars)?;
    }
    Ok((value, per))
}

/// Model, corpus and optimizer state of a training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: RunConfig,
    pub model: Model,
    pub corpus: Corpus,
    pub adam: Adam,
    pub step: u64,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model.clone(), config.train.seed)?;
        Self::from_parts(config, model, None, 0)
    }

    /// Rebuilds a trainer from saved state.
    pub fn from_parts(config: RunConfig, model: Model, adam: Option<Adam>, step: u64) -> Result<Self> {
        let spec = config.train.corpus_spec(&config.model)?;
        let corpus = Corpus::build(spec, &config.train.corpus)?;
        let adam = adam.unwrap_or_else(|| Adam::new(&model));
        Ok(Self {
            config,
            model,
            corpus,
            adam,
            step,
        })
    }

    /// Examples of the batch at `step`; a pure function of seed and step.
    pub fn batch(&self, step: u64) -> Result<Vec<TrainingExample>> {
        let t = &self.config.train;
        (0..t.batch_size)
            .map(|i| {
                let mut rng = batch_rng(t.seed, step, i);
                cpm_sample(&self.corpus, &mut rng, &t.cpm)
            })
            .collect()
    }

    /// Mean weighted loss over a batch without touching parameters.
    pub fn evaluate_batch(&mut self, batch: &[TrainingExample], step: u64) -> Result<f64> {
        let weights = self.config.train.weights_at(step).to_vec();
        let mut total = 0.0;
        for ex in batch {
            total += example_loss(&mut self.model, ex, &weights, 0.0)?.0;
        }
        Ok(total / batch.len() as f64)
    }

    /// Runs one optimizer step and returns its metrics.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let start = Instant::now();
        let step = self.step;
        let batch = self.batch(step)?;
        let weights = self.config.train.weights_at(step).to_vec();
        let n = batch.len() as f64;
        self.model.params.zero_grads();
        let mut loss = 0.0;
        let mut per = vec![0.0; weights.len()];
        for ex in &batch {
            let (l, p) = example_loss(&mut self.model, ex, &weights, 1.0 / n)?;
            loss += l / n;
            for (a, b) in per.iter_mut().zip(&p) {
                *a += b / n;
            }
        }
        if !loss.is_finite() {
            let msg = format!(
                "loss {loss} at step {step}; batch drawn with seed {} stream {}",
                self.config.train.seed, step
            );
            error!("{msg}");
            return Err(Error::NonFinite(msg));
        }
        let norm: f64 = self
            .model
            .params
            .iter()
            .filter_map(|(_, t)| t.grad())
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        let clip = self.config.train.grad_clip;
        let scale = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
        let lr = self.config.train.lr_at(step);
        self.adam.step(&mut self.model, lr, scale);
        self.step += 1;
        Ok(StepRecord {
            step,
            loss,
            per_codebook_loss: per,
            lr,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Trains up to `config.train.steps`, handing each record to `sink` and
    /// calling `checkpoint` at the configured interval.
    pub fn run(
        &mut self,
        mut sink: impl FnMut(&StepRecord) -> Result<()>,
        mut checkpoint: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<()> {
        let total = self.config.train.steps;
        let every = self.config.train.checkpoint_every;
        while self.step < total {
            let rec = self.train_step()?;
            if rec.step % 100 == 0 {
                info!("step {} loss {:.4} lr {:.2e}", rec.step, rec.loss, rec.lr);
            }
            sink(&rec)?;
            if every > 0 && self.step % every == 0 {
                checkpoint(self)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn batch_rng(seed: u64, step: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((step << 20) | index as u64);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_run() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.model.enc_layers = 1;
        cfg.model.dec_layers = 1;
        cfg.model.model_dim = 16;
        cfg.model.ff_dim = 32;
        cfg.model.heads = 2;
        cfg.train.batch_size = 2;
        cfg.train.steps = 3;
        cfg.train.corpus.speakers = 4;
        cfg.train.corpus.utterances_per_speaker = 3;
        cfg
    }

    #[test]
    fn config_text_round_trip_and_unknown_keys() {
        let mut cfg = tiny_run();
        cfg.train.second_stage_weights = Some(SECOND_STAGE_WEIGHTS.to_vec());
        cfg.train.second_stage_step = Some(2);
        let back = RunConfig::parse(&cfg.render()).unwrap();
        assert_eq!(back, cfg);
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("codebook_weights = 1,2").is_err());
    }

    #[test]
    fn schedule_shape() {
        let t = TrainConfig {
            warmup_steps: 10,
            learning_rate: 1.0,
            ..TrainConfig::default()
        };
        assert!((t.lr_at(9) - 1.0).abs() < 1e-12);
        assert!(t.lr_at(0) < t.lr_at(5));
        assert!((t.lr_at(39) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn second_stage_switch() {
        let t = TrainConfig {
            second_stage_weights: Some(SECOND_STAGE_WEIGHTS.to_vec()),
            second_stage_step: Some(5),
            ..TrainConfig::default()
        };
        assert_eq!(t.weights_at(4), &[5.0, 1.0, 0.5, 0.1]);
        assert_eq!(t.weights_at(5), &SECOND_STAGE_WEIGHTS);
    }

    #[test]
    fn zero_steps_leave_parameters() {
        let mut cfg = tiny_run();
        cfg.train.steps = 0;
        let mut t = Trainer::new(cfg).unwrap();
        let before = t.model.params.clone();
        let mut log = Vec::new();
        t.run(|r| Ok(log.push(r.clone())), |_| Ok(())).unwrap();
        assert!(log.is_empty());
        assert_eq!(t.model.params, before);
    }

    #[test]
    fn deterministic_steps() {
        let run = |cfg: RunConfig| {
            let mut t = Trainer::new(cfg).unwrap();
            t.run(|_| Ok(()), |_| Ok(())).unwrap();
            t.model.params
        };
        assert_eq!(run(tiny_run()), run(tiny_run()));
    }
}
