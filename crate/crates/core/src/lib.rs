//! Corpus curation and tokenizer extension for low-resource languages.
//!
//! The stages mirror a typical pretraining-data pipeline:
//!
//! 1. [`corpus`]: JSONL documents, NFC normalization, word/line/sentence segmentation.
//! 2. [`rules`] and [`filter`]: eighteen heuristic quality metrics, thresholds,
//!    nearest-rank calibration and a streaming filter pass.
//! 3. [`dedup`]: MinHash signatures, LSH banding and union-find clustering.
//! 4. [`lm`]: interpolated Kneser-Ney word n-gram model for rank filtering noisy text.
//! 5. [`ocr`]: per-book page statistics, lexicon coverage and confidence counts.
//! 6. [`tokenizer`]: byte-level BPE training, vocabulary extension and tokens-per-word.
//! 7. [`pipeline`]: multi-stage plans with per-stage manifests.

pub mod corpus;
pub mod dedup;
pub mod error;
pub mod filter;
pub mod io;
pub mod lm;
pub mod ocr;
pub mod pipeline;
pub mod resources;
pub mod rules;
pub mod tokenizer;

pub use corpus::{normalize, read_corpus, segment_sentences, write_corpus, Document, NormalizedView, Page};
pub use error::{Error, Result};
pub use filter::{apply, calibrate, run_pipeline, Decision, FilterConfig, FilterReport, Side, Threshold};
pub use resources::Resources;
pub use rules::{doc_metrics, Metric, RuleMetrics, Rules};
pub use pipeline::{run_plan, Manifest, PipelinePlan, StageKind};
pub use tokenizer::{merge_tokenizers, AnyTokenizer, ByteBpeModel, MergedTokenizer, Tokenize, TpwReport};

use std::path::Path;

/// Loads a base or merged tokenizer file; merged files find their base
/// beside them as `<file>.base`.
pub fn load_tokenizer(path: impl AsRef<Path>) -> Result<AnyTokenizer> {
    AnyTokenizer::load(path, None)
}

/// Tokens-per-word of a tokenizer over a JSONL corpus.
pub fn tpw(tokenizer: &AnyTokenizer, corpus: impl AsRef<Path>) -> Result<TpwReport> {
    pipeline::tpw_file(tokenizer, corpus.as_ref(), false)
}

/// Filters a JSONL corpus with a TOML config and the bundled word lists.
pub fn run_filter(config: impl AsRef<Path>, input: impl AsRef<Path>, output: impl AsRef<Path>) -> Result<FilterReport> {
    let config = FilterConfig::load(config)?;
    filter::run_filter_files(&Rules::default(), &config, input.as_ref(), output.as_ref(), None)
}
