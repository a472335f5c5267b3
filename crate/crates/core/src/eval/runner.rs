//! Generation over an evaluation set.

use std::collections::BTreeMap;

use super::metrics::{duration_diff, style_match, token_error_rate, FRAME_SECONDS};
use super::report::{length_bucket, ExampleRecord, MetricsReport};
use crate::data::EvalItem;
use crate::engine::{generate, DecodeConfig, Prompt, Repetition, StopPolicy};
use crate::error::Result;
use crate::model::Model;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub stop: StopPolicy,
    pub repetition: Repetition,
    pub top_k: usize,
    pub seed: u64,
    pub max_context_frames: usize,
    /// Requested duration relative to the reference length.
    pub duration_scale: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            stop: StopPolicy::ForceStopAtT,
            repetition: Repetition::Count(1),
            top_k: 10,
            seed: 0,
            max_context_frames: 64,
            duration_scale: 1.0,
        }
    }
}

impl EvalOptions {
    pub fn echo(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("stop".to_string(), format!("{:?}", self.stop)),
            ("repetition".to_string(), self.repetition.to_string()),
            ("top_k".to_string(), self.top_k.to_string()),
            ("max_context_frames".to_string(), self.max_context_frames.to_string()),
            ("duration_scale".to_string(), self.duration_scale.to_string()),
        ])
    }
}

/// Codec layout needed by the style metric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StyleSpace {
    pub codec_vocab: usize,
    pub block_size: usize,
}

/// Scores one item; each item samples with its own seed derived from `opts.seed`.
pub fn evaluate_item(model: &Model, item: &EvalItem, opts: &EvalOptions, space: StyleSpace) -> Result<ExampleRecord> {
    let requested = ((item.requested_frames as f64 * opts.duration_scale).round() as usize).max(1);
    let mut cfg = DecodeConfig::new(requested, opts.seed.wrapping_mul(1_000_003).wrapping_add(item.id as u64));
    cfg.top_k = opts.top_k;
    cfg.stop = opts.stop;
    cfg.repetition = opts.repetition;
    cfg.max_context_frames = opts.max_context_frames;
    let prompt = Prompt::from(&item.prompt);
    let g = generate(model, Some(&prompt), &item.target.phonemes, &cfg, false)?;
    let generated = g.grid.len();
    let ter = token_error_rate(&g.grid, &item.target.grid)?;
    let frames = duration_diff(generated, requested, 1.0) as usize;
    Ok(ExampleRecord {
        example_id: item.id,
        ter,
        requested_frames: requested,
        generated_frames: generated,
        dur_diff_frames: frames,
        style_match: style_match(&g.grid, &item.speaker, space.codec_vocab, space.block_size),
        length_bucket: length_bucket(item.target.duration_frames()),
        stopped_by_eos: g.stopped_by_eos,
    })
}

pub fn evaluate(model: &Model, items: &[EvalItem], opts: &EvalOptions, space: StyleSpace) -> Result<MetricsReport> {
    let records = items
        .iter()
        .map(|it| evaluate_item(model, it, opts, space))
        .collect::<Result<Vec<_>>>()?;
    let mut config = opts.echo();
    for (k, v) in crate::config::KvConfig::to_kv(&model.config) {
        config.insert(k, v);
    }
    Ok(MetricsReport::new(records, config, opts.seed, FRAME_SECONDS))
}
