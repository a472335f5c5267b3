//! End-to-end: config text, a few training steps, checkpoints, generation
//! and evaluation reports.

use prlab::data::{standard_eval_set, EvalSetKind};
use prlab::engine::{
    generate, load_checkpoint, save_checkpoint, Checkpoint, DecodeConfig, Prompt, RunConfig, StopPolicy, Trainer,
};
use prlab::eval::{evaluate, EvalOptions, MetricsReport, StyleSpace};

const TINY: &str = "
# tiny run
model_dim = 16
ff_dim = 32
heads = 2
enc_layers = 1
dec_layers = 1
steps = 4
batch_size = 2
speakers = 4
utterances_per_speaker = 3
";

fn trainer() -> Trainer {
    Trainer::new(RunConfig::parse(TINY).unwrap()).unwrap()
}

#[test]
fn config_text_round_trips() {
    let cfg = RunConfig::parse(TINY).unwrap();
    assert_eq!(cfg.model.model_dim, 16);
    assert_eq!(RunConfig::parse(&cfg.render()).unwrap(), cfg);
    assert!(RunConfig::parse("model_dimension = 3").is_err());
}

#[test]
fn training_is_reproducible_and_resumable() {
    let mut a = trainer();
    a.run(|_| Ok(()), |_| Ok(())).unwrap();

    let mut b = trainer();
    let mut losses = Vec::new();
    b.run(|r| Ok(losses.push(r.loss)), |_| Ok(())).unwrap();
    assert!(losses.iter().all(|l| l.is_finite()));
    for ((_, x), (_, y)) in a.model.params.iter().zip(b.model.params.iter()) {
        assert_eq!(x.values(), y.values());
    }

    // stop at step 2, save, reload, finish: same weights as straight through
    let dir = tempfile::tempdir().unwrap();
    let mut c = trainer();
    c.config.train.steps = 2;
    c.run(|_| Ok(()), |_| Ok(())).unwrap();
    let path = dir.path().join("half.ckpt");
    save_checkpoint(&path, &Checkpoint::from_trainer(&c)).unwrap();
    let mut d = load_checkpoint(&path).unwrap().into_trainer().unwrap();
    assert_eq!(d.step, 2);
    d.config.train.steps = 4;
    d.run(|_| Ok(()), |_| Ok(())).unwrap();
    for ((_, x), (_, y)) in a.model.params.iter().zip(d.model.params.iter()) {
        assert_eq!(x.values(), y.values());
    }
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn generation_honours_stop_policy() {
    let t = trainer();
    let prompt = Prompt::from(&t.corpus.utterances[0]);
    let text = &t.corpus.utterances[1].phonemes;
    let cfg = DecodeConfig::new(9, 5);
    let g = generate(&t.model, Some(&prompt), text, &cfg, false).unwrap();
    assert_eq!(g.grid.len(), 9);
    assert_eq!(g.grid.codebooks(), t.model.config.codebooks);
    let again = generate(&t.model, Some(&prompt), text, &cfg, false).unwrap();
    assert_eq!(g.grid, again.grid);

    let eos = DecodeConfig {
        stop: StopPolicy::EosOrT,
        ..DecodeConfig::new(9, 5)
    };
    let g = generate(&t.model, None, text, &eos, false).unwrap();
    assert!(g.grid.len() <= 9);
}

#[test]
fn evaluation_report_round_trips() {
    let t = trainer();
    let spec = t.config.train.corpus_spec(&t.config.model).unwrap();
    let items = standard_eval_set(&spec, EvalSetKind::Short, 3).unwrap();
    let space = StyleSpace {
        codec_vocab: spec.codec_vocab(),
        block_size: spec.block_size(),
    };
    let report = evaluate(&t.model, &items, &EvalOptions::default(), space).unwrap();
    assert_eq!(report.records.len(), 3);
    assert!(report.records.iter().all(|r| r.dur_diff_frames == 0));
    let mut buf = Vec::new();
    report.write_jsonl(&mut buf).unwrap();
    assert_eq!(MetricsReport::read_jsonl(&buf[..]).unwrap(), report);
}
