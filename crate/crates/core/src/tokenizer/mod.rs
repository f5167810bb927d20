//! Byte-level BPE: training, base/extension merging, encode/decode and
//! tokens-per-word evaluation.

mod merge;
mod model;
mod pretokenize;
mod table;
mod tpw;
mod train;

use std::path::Path;

pub use merge::{merge_tokenizers, MergedTokenizer, MERGED_HEADER};
pub use model::{ByteBpeModel, SPECIAL_PREFIX};
pub use pretokenize::{PreTokenizer, WhitespacePreTokenizer};
pub use tpw::{tokens_per_word, SourceTpw, TpwReport};
pub use train::{count_chunks, train_bpe, train_from_counts, TrainerConfig};

use crate::error::{Error, Result};

pub trait Tokenize: Sync {
    fn encode(&self, text: &str) -> Vec<u32>;
    fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>>;
    /// The chunker whose pieces `encode_chunk` expects.
    fn chunker(&self) -> &dyn PreTokenizer;
    fn encode_chunk(&self, chunk: &str, out: &mut Vec<u32>);

    fn decode(&self, ids: &[u32]) -> Result<String> {
        String::from_utf8(self.decode_bytes(ids)?).map_err(|e| Error::Decode(format!("invalid UTF-8: {e}")))
    }

    fn count_tokens(&self, text: &str) -> usize {
        self.encode(text).len()
    }
}

/// Either kind of tokenizer file, as found on disk.
#[derive(Debug, Clone)]
pub enum AnyTokenizer {
    Base(ByteBpeModel),
    Merged(MergedTokenizer),
}

impl AnyTokenizer {
    /// Loads a model file. Merged files need their base model: passed
    /// explicitly, or else looked up as `<file>.base` next to it.
    pub fn load(path: impl AsRef<Path>, base: Option<&Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Path { path: path.into(), source })?;
        if text.starts_with(MERGED_HEADER) {
            let base_path = match base {
                Some(p) => p.to_path_buf(),
                None => base_sidecar(path),
            };
            let base = ByteBpeModel::load(&base_path)?;
            Ok(AnyTokenizer::Merged(MergedTokenizer::from_file_str(&text, base)?))
        } else {
            Ok(AnyTokenizer::Base(ByteBpeModel::from_file_str(&text)?))
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            AnyTokenizer::Base(m) => m.vocab_size(),
            AnyTokenizer::Merged(m) => m.vocab_size(),
        }
    }

    fn inner(&self) -> &dyn Tokenize {
        match self {
            AnyTokenizer::Base(m) => m,
            AnyTokenizer::Merged(m) => m,
        }
    }
}

/// Where a merged model's base is stored by default.
pub fn base_sidecar(merged: &Path) -> std::path::PathBuf {
    let mut name = merged.as_os_str().to_owned();
    name.push(".base");
    name.into()
}

impl Tokenize for AnyTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        self.inner().encode(text)
    }
    fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        self.inner().decode_bytes(ids)
    }
    fn chunker(&self) -> &dyn PreTokenizer {
        self.inner().chunker()
    }
    fn encode_chunk(&self, chunk: &str, out: &mut Vec<u32>) {
        self.inner().encode_chunk(chunk, out)
    }
}
