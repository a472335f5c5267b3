//! Synthetic corpus, the mixed prompt sampler and evaluation sets.

pub mod corpus;
pub mod cpm;
pub mod eval_set;

pub use corpus::{CorpusSpec, ManifestRecord, SpeakerStyle, Utterance};
pub use cpm::{cpm_sample, Corpus, CorpusConfig, CpmConfig, CpmMode, TrainingExample};
pub use eval_set::{build_eval_set, standard_eval_set, EvalItem, EvalSetKind, EVAL_SPEAKER_BASE};
