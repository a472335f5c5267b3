//! `prlab` command-line interface.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use prlab::data::{standard_eval_set, EvalSetKind};
use prlab::engine::{
    generate, load_checkpoint, save_checkpoint, Checkpoint, DecodeConfig, Prompt, Repetition, RunConfig, StopPolicy,
    Trainer,
};
use prlab::eval::{
    eval_item_map, evaluate, export::write_map, run_experiment, token_error_rate, Budget, EvalOptions, ExperimentName,
    StyleSpace,
};

#[derive(Parser)]
#[command(name = "prlab", version, about = "Toy codec language model with progress-monitoring rotary positions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the invariant and exactness checks; exit code 0 when all pass.
    Selftest,
    /// Train a model from a `key = value` config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a saved checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate target tokens for a corpus transcript given a corpus prompt.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        prompt_id: u64,
        #[arg(long)]
        text_id: u64,
        #[arg(long)]
        duration_frames: usize,
        #[arg(long, default_value_t = 10)]
        topk: usize,
        /// Prompt copies: a count or `max`.
        #[arg(long, default_value = "1")]
        repeat_prompt: Repetition,
        /// `force` stops exactly at the requested length; `eos` may stop early.
        #[arg(long, default_value = "force")]
        stop: StopPolicy,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a standard evaluation set.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        set: EvalSetKind,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value = "force")]
        stop: StopPolicy,
        #[arg(long, default_value = "1")]
        repeat_prompt: Repetition,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the needed variants and write reports and attention maps.
    Experiment {
        #[arg(long)]
        name: ExperimentName,
        #[arg(long)]
        out: PathBuf,
        /// `small` trains the reduced models, `full` the default-sized ones.
        #[arg(long, default_value = "small")]
        budget: String,
    },
    /// Export a cross-attention map for one evaluation example.
    Attn {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        example: usize,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "short")]
        set: EvalSetKind,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Selftest => {
            let results = prlab::selftest::run_all();
            for r in &results {
                println!("{r}");
            }
            Ok(if results.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Train { config, out, resume } => {
            train(&config, &out, resume.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Generate {
            ckpt,
            prompt_id,
            text_id,
            duration_frames,
            topk,
            repeat_prompt,
            stop,
            seed,
            out,
        } => {
            let ck = load_checkpoint(&ckpt)?;
            let trainer = ck.into_trainer()?;
            let corpus = &trainer.corpus;
            let find = |id: u64| {
                corpus
                    .utterances
                    .iter()
                    .find(|u| u.id == id)
                    .with_context(|| format!("no utterance with id {id}"))
            };
            let prompt = Prompt::from(find(prompt_id)?);
            let text = find(text_id)?;
            let mut cfg = DecodeConfig::new(duration_frames, seed);
            cfg.top_k = topk;
            cfg.repetition = repeat_prompt;
            cfg.stop = stop;
            cfg.max_context_frames = trainer.config.train.cpm.max_context_frames;
            let g = generate(&trainer.model, Some(&prompt), &text.phonemes, &cfg, false)?;
            let record = serde_json::json!({
                "prompt_id": prompt_id,
                "text_id": text_id,
                "requested_frames": duration_frames,
                "generated_frames": g.grid.len(),
                "stopped_by_eos": g.stopped_by_eos,
                "repetitions": g.repetitions,
                "ter_vs_reference": token_error_rate(&g.grid, &text.grid)?,
                "seed": seed,
                "tokens": (0..g.grid.codebooks()).map(|c| g.grid.row(c).to_vec()).collect::<Vec<_>>(),
            });
            write_file(&out, format!("{record}\n").as_bytes())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            ckpt,
            set,
            report,
            count,
            stop,
            repeat_prompt,
            seed,
        } => {
            let ck = load_checkpoint(&ckpt)?;
            let spec = ck.config.train.corpus_spec(&ck.config.model)?;
            let items = standard_eval_set(&spec, set, count)?;
            let opts = EvalOptions {
                stop,
                repetition: repeat_prompt,
                seed,
                max_context_frames: ck.config.train.cpm.max_context_frames,
                ..EvalOptions::default()
            };
            let space = StyleSpace {
                codec_vocab: spec.codec_vocab(),
                block_size: spec.block_size(),
            };
            let rep = evaluate(&ck.model, &items, &opts, space)?;
            let a = &rep.aggregate;
            println!(
                "{set}: n={} TER={:.4} DurDiff={:.3}s style={:.3} within2={:.3}",
                a.count, a.mean_ter, a.mean_dur_diff_seconds, a.style_accuracy, a.within_two_frames
            );
            let mut buf = Vec::new();
            rep.write_jsonl(&mut buf)?;
            write_file(&report, &buf)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Experiment { name, out, budget } => {
            let budget = match budget.as_str() {
                "small" => Budget::small(),
                "full" => Budget::default(),
                other => bail!("unknown budget {other:?} (small|full)"),
            };
            for e in run_experiment(name, &out, &budget)? {
                let a = &e.report.aggregate;
                println!(
                    "{}: TER={:.4} DurDiff={:.3}s style={:.3}",
                    e.label, a.mean_ter, a.mean_dur_diff_seconds, a.style_accuracy
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Attn {
            ckpt,
            example,
            layer,
            out,
            set,
        } => {
            let ck = load_checkpoint(&ckpt)?;
            let spec = ck.config.train.corpus_spec(&ck.config.model)?;
            let items = standard_eval_set(&spec, set, example + 1)?;
            let map = eval_item_map(&ck.model, &items[example], layer)?;
            write_map(&out, &map)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn train(config: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg = RunConfig::parse(&text)?;
    let mut trainer = match resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            if ck.config.model != cfg.model {
                bail!("checkpoint model settings differ from {}", config.display());
            }
            let step = ck.step;
            let mut t = ck.into_trainer()?;
            t.config = cfg;
            info!("resuming at step {step}");
            t
        }
        None => Trainer::new(cfg)?,
    };
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), trainer.config.render())?;
    trainer.corpus.write_manifest(BufWriter::new(File::create(out.join("manifest.jsonl"))?))?;
    let mut metrics = BufWriter::new(
        fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(out.join("metrics.jsonl"))?,
    );
    info!("{} parameters", trainer.model.numel());
    trainer.run(
        |rec| {
            serde_json::to_writer(&mut metrics, rec)?;
            metrics.write_all(b"\n")?;
            Ok(())
        },
        |t| save_checkpoint(&out.join(format!("step{}.ckpt", t.step)), &Checkpoint::from_trainer(t)),
    )?;
    metrics.flush()?;
    save_checkpoint(&out.join("final.ckpt"), &Checkpoint::from_trainer(&trainer))?;
    info!("wrote {}", out.join("final.ckpt").display());
    Ok(())
}
