//! Fact-checking toolkit for AI-generated radiology reports.
//!
//! The pipeline has two phases. Training: ingest a report corpus, extract
//! per-sentence findings, synthesize controlled fake reports (add / exchange
//! / reverse perturbations), pair images with real and fake sentences, encode
//! both sides into a joint 512-d space, and train a linear Real/Fake examiner
//! on the concatenated 1024-d features. Inference: split a generated report
//! into sentences, score each against the study image, drop the fakes, and
//! measure the quality gain with the cosine-based QI score.
//!
//! Every capability has a runnable example under `examples/`:
//!
//! ```bash
//! cargo run --example end_to_end
//! ```
//!
//! The `radcheck` binary (crate `radcheck-cli`) exposes the same pipeline as
//! file-to-file subcommands.

pub mod corpus;
pub mod embed;
pub mod error;
pub mod examiner;
pub mod extract;
pub mod pairs;
pub mod quality;
pub mod synth;
pub mod synthetic;
pub mod verify;

mod hash;
mod jsonl;

pub use corpus::{
    ingest_indiana, read_corpus_jsonl, split_by_patient, write_corpus_jsonl, Corpus, Finding,
    ImageRef, IndianaOptions, Polarity, Provenance, Report, Sentence, Split, SplitAssignment,
    View,
};
pub use embed::{
    build_cache_entries, cache_read, cache_write, featurize_pairs, image_key, make_feature,
    text_key, CacheProvider, EmbeddingProvider, EmbeddingVector, FeatureVector,
    ReferenceEmbedder, EMBED_DIM, FEATURE_DIM,
};
pub use error::{Error, Result};
pub use examiner::{
    cross_validate, evaluate, load as load_model, predict, roc_auc, save as save_model, train,
    CvParams, CvReport, EvalMetrics, ExaminerModel, Prediction, TrainParams,
};
pub use extract::{split_sentences, Extractor, FindingLexicon, FindingPool, SentencePool};
pub use pairs::{build_pairs, pair_stats, Label, LabeledPair, PairStats};
pub use quality::{
    encode_report, evaluate_verifier, qi_aggregate, qi_score, QiAggregate, QiTriple,
    QiTripleResult, QualityReport, ReportEncoding,
};
pub use synth::{
    reconstruct_base, synthesize_add, synthesize_corpus, synthesize_exchange, synthesize_reverse,
    FakeRecord, FakeReport, PerturbationType, SkipReason, SynthesisSkip,
};
pub use synthetic::SyntheticConfig;
pub use verify::{verify_batch, verify_report, BatchItem, VerificationResult};
