//! Experiment drivers: model variants, budgets and the four trend studies.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::Serialize;

use super::alignment::eval_item_map;
use super::export::write_map;
use super::metrics::alignment_diagonality;
use super::report::MetricsReport;
use super::runner::{evaluate, EvalOptions, StyleSpace};
use crate::data::{standard_eval_set, CorpusSpec, EvalItem, EvalSetKind};
use crate::engine::{load_checkpoint, save_checkpoint, Checkpoint, Repetition, RunConfig, StopPolicy, Trainer};
use crate::error::{Error, Result};
use crate::model::{Model, PositionEncoding};

/// Model variants compared by the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Variant {
    /// Encoder-decoder, progress rotation everywhere, mixed prompt training.
    PmRopeCpm,
    /// Encoder-decoder, position rotation everywhere, mixed prompt training.
    RopeCpm,
    /// Position rotation in the encoder, progress rotation in the decoder.
    MixedCpm,
    /// As `PmRopeCpm` but continuation-only training.
    PmRopeContinuation,
    /// Decoder-only with absolute sinusoids, mixed prompt training.
    DecoderOnlySinusoidal,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::PmRopeCpm => "pmrope_cpm",
            Variant::RopeCpm => "rope_cpm",
            Variant::MixedCpm => "mixed_cpm",
            Variant::PmRopeContinuation => "pmrope_continuation",
            Variant::DecoderOnlySinusoidal => "decoder_only_sinusoidal",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Model size, training length and evaluation size shared by all variants.
#[derive(Clone, Debug, PartialEq)]
pub struct Budget {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub eval_count: usize,
    pub seed: u64,
    pub corpus_seed: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 16,
            learning_rate: 2e-3,
            warmup_steps: 200,
            model_dim: 128,
            ff_dim: 512,
            heads: 4,
            enc_layers: 2,
            dec_layers: 4,
            eval_count: 100,
            seed: 0,
            corpus_seed: 1,
        }
    }
}

impl Budget {
    /// Reduced budget that trains in minutes on one core.
    pub fn small() -> Self {
        Self {
            steps: 6000,
            batch_size: 8,
            learning_rate: 3e-3,
            warmup_steps: 200,
            model_dim: 64,
            ff_dim: 192,
            heads: 2,
            enc_layers: 2,
            dec_layers: 2,
            ..Self::default()
        }
    }

    pub fn run_config(&self, variant: Variant) -> RunConfig {
        let mut cfg = RunConfig::default();
        let m = &mut cfg.model;
        m.model_dim = self.model_dim;
        m.ff_dim = self.ff_dim;
        m.heads = self.heads;
        m.enc_layers = self.enc_layers;
        m.dec_layers = self.dec_layers;
        let t = &mut cfg.train;
        t.steps = self.steps;
        t.batch_size = self.batch_size;
        t.learning_rate = self.learning_rate;
        t.warmup_steps = self.warmup_steps;
        t.seed = self.seed;
        t.corpus_seed = self.corpus_seed;
        match variant {
            Variant::PmRopeCpm => cfg.model = cfg.model.with_positions(PositionEncoding::PmRope),
            Variant::RopeCpm => cfg.model = cfg.model.with_positions(PositionEncoding::Rope),
            Variant::MixedCpm => {
                cfg.model.encoder_pos = PositionEncoding::Rope;
                cfg.model.decoder_pos = PositionEncoding::PmRope;
                cfg.model.cross_pos = PositionEncoding::PmRope;
            }
            Variant::PmRopeContinuation => {
                cfg.model = cfg.model.with_positions(PositionEncoding::PmRope);
                cfg.train.cpm.p = 0.0;
            }
            Variant::DecoderOnlySinusoidal => {
                cfg.model.dec_layers += cfg.model.enc_layers;
                cfg.model.enc_layers = 0;
                cfg.model = cfg.model.with_positions(PositionEncoding::None);
                cfg.model.decoder_pos = PositionEncoding::Sinusoidal;
            }
        }
        cfg
    }

    pub fn corpus_spec(&self) -> Result<CorpusSpec> {
        let cfg = self.run_config(Variant::PmRopeCpm);
        cfg.train.corpus_spec(&cfg.model)
    }

    pub fn eval_set(&self, kind: EvalSetKind) -> Result<Vec<EvalItem>> {
        standard_eval_set(&self.corpus_spec()?, kind, self.eval_count)
    }

    pub fn style_space(&self) -> Result<StyleSpace> {
        let spec = self.corpus_spec()?;
        Ok(StyleSpace {
            codec_vocab: spec.codec_vocab(),
            block_size: spec.block_size(),
        })
    }
}

/// Trains `variant`, or loads it from `cache/<variant>.ckpt` when present.
pub fn train_variant(variant: Variant, budget: &Budget, cache: Option<&Path>) -> Result<Model> {
    let path = cache.map(|d| d.join(format!("{variant}.ckpt")));
    if let Some(p) = &path {
        if p.exists() {
            let ck = load_checkpoint(p)?;
            if ck.config == budget.run_config(variant) && ck.step == budget.steps {
                info!("loaded {variant} from {}", p.display());
                return Ok(ck.model);
            }
        }
    }
    let mut trainer = Trainer::new(budget.run_config(variant))?;
    info!("training {variant}: {} parameters", trainer.model.numel());
    trainer.run(|_| Ok(()), |_| Ok(()))?;
    if let Some(p) = &path {
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        save_checkpoint(p, &Checkpoint::from_trainer(&trainer))?;
    }
    Ok(trainer.model)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentName {
    AblationComponents,
    Extrapolation,
    PromptRepetition,
    DurationSweep,
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ablation_components" => Ok(Self::AblationComponents),
            "extrapolation" => Ok(Self::Extrapolation),
            "prompt_repetition" => Ok(Self::PromptRepetition),
            "duration_sweep" => Ok(Self::DurationSweep),
            other => Err(Error::Config(format!(
                "unknown experiment {other:?} (ablation_components|extrapolation|prompt_repetition|duration_sweep)"
            ))),
        }
    }
}

/// One evaluation written by an experiment.
#[derive(Clone, Debug)]
pub struct ReportEntry {
    pub label: String,
    pub path: PathBuf,
    pub report: MetricsReport,
}

fn write_report(out: &Path, label: &str, report: MetricsReport) -> Result<ReportEntry> {
    fs::create_dir_all(out)?;
    let path = out.join(format!("{label}.jsonl"));
    report.write_jsonl(fs::File::create(&path)?)?;
    info!(
        "{label}: TER {:.4}, DurDiff {:.3} frames, style {:.3}",
        report.aggregate.mean_ter, report.aggregate.mean_dur_diff_frames, report.aggregate.style_accuracy
    );
    Ok(ReportEntry {
        label: label.to_string(),
        path,
        report,
    })
}

fn write_maps(out: &Path, label: &str, model: &Model, items: &[EvalItem]) -> Result<()> {
    if model.config.is_decoder_only() {
        return Ok(());
    }
    for item in items.iter().take(2) {
        let map = eval_item_map(model, item, 0)?;
        info!("{label} example {}: diagonality {:.3}", item.id, alignment_diagonality(&map));
        write_map(&out.join(format!("{label}_example{}.pgm", item.id)), &map)?;
    }
    Ok(())
}

/// Runs a named experiment, writing reports and maps under `out`.
pub fn run_experiment(name: ExperimentName, out: &Path, budget: &Budget) -> Result<Vec<ReportEntry>> {
    let cache = out.join("checkpoints");
    let space = budget.style_space()?;
    let opts = EvalOptions {
        seed: budget.seed,
        ..EvalOptions::default()
    };
    let mut entries = Vec::new();
    match name {
        ExperimentName::AblationComponents => {
            let items = budget.eval_set(EvalSetKind::Short)?;
            for v in [
                Variant::DecoderOnlySinusoidal,
                Variant::RopeCpm,
                Variant::PmRopeContinuation,
                Variant::PmRopeCpm,
            ] {
                let model = train_variant(v, budget, Some(&cache))?;
                let label = format!("{v}_short");
                entries.push(write_report(out, &label, evaluate(&model, &items, &opts, space)?)?);
                write_maps(out, &label, &model, &items)?;
            }
        }
        ExperimentName::Extrapolation => {
            let items = budget.eval_set(EvalSetKind::Extrap1_5x)?;
            for v in [Variant::RopeCpm, Variant::MixedCpm, Variant::PmRopeCpm] {
                let model = train_variant(v, budget, Some(&cache))?;
                let label = format!("{v}_extrap_1_5x");
                entries.push(write_report(out, &label, evaluate(&model, &items, &opts, space)?)?);
                write_maps(out, &label, &model, &items)?;
            }
        }
        ExperimentName::PromptRepetition => {
            for (v, kind) in [
                (Variant::PmRopeCpm, EvalSetKind::Short),
                (Variant::PmRopeContinuation, EvalSetKind::Short),
                (Variant::PmRopeCpm, EvalSetKind::Mismatch),
                (Variant::PmRopeContinuation, EvalSetKind::Mismatch),
            ] {
                let items = budget.eval_set(kind)?;
                let model = train_variant(v, budget, Some(&cache))?;
                for rep in [
                    Repetition::Count(1),
                    Repetition::Count(2),
                    Repetition::Count(3),
                    Repetition::Count(4),
                    Repetition::FillToMax,
                ] {
                    let o = EvalOptions {
                        repetition: rep,
                        ..opts.clone()
                    };
                    let label = format!("{v}_{kind}_rep{rep}");
                    match evaluate(&model, &items, &o, space) {
                        Ok(r) => entries.push(write_report(out, &label, r)?),
                        Err(e) => info!("{label}: skipped ({e})"),
                    }
                }
            }
        }
        ExperimentName::DurationSweep => {
            let items = budget.eval_set(EvalSetKind::Short)?;
            let model = train_variant(Variant::PmRopeCpm, budget, Some(&cache))?;
            for stop in [StopPolicy::ForceStopAtT, StopPolicy::EosOrT] {
                for scale in [0.8, 0.9, 1.0, 1.1, 1.2] {
                    let o = EvalOptions {
                        stop,
                        duration_scale: scale,
                        ..opts.clone()
                    };
                    let policy = if stop == StopPolicy::ForceStopAtT { "force" } else { "eos" };
                    let label = format!("pmrope_cpm_{policy}_x{scale}");
                    entries.push(write_report(out, &label, evaluate(&model, &items, &o, space)?)?);
                }
            }
        }
    }
    Ok(entries)
}
