use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use super::model::{parse_entries, ByteBpeModel};
use super::pretokenize::PreTokenizer;
use super::table::MergeTable;
use super::Tokenize;
use crate::error::{Error, PathContext, Result};

pub const MERGED_HEADER: &str = "#merged";

/// A base model extended with tokens learned elsewhere. Base ids, bytes and
/// merge ranks are untouched; extension tokens take ids from the base vocab
/// size upward and rank after every base merge.
#[derive(Debug, Clone)]
pub struct MergedTokenizer {
    base: ByteBpeModel,
    extension_merges: Vec<(u32, u32)>,
    table: MergeTable,
}

impl MergedTokenizer {
    pub fn base(&self) -> &ByteBpeModel {
        &self.base
    }

    pub fn extension_merges(&self) -> &[(u32, u32)] {
        &self.extension_merges
    }

    pub fn extension_len(&self) -> usize {
        self.extension_merges.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.table.vocab.len()
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.table.vocab.get(id as usize).map(Vec::as_slice)
    }

    fn first_extension_id(&self) -> usize {
        self.base.vocab_size()
    }

    fn empty(base: ByteBpeModel) -> Self {
        let table = base.table.clone();
        MergedTokenizer { base, extension_merges: Vec::new(), table }
    }

    fn push(&mut self, left: u32, right: u32) -> Result<u32> {
        let rank = (self.base.merges().len() + self.extension_merges.len()) as u32;
        let id = self.table.push_merge(left, right, rank)?;
        self.extension_merges.push((left, right));
        Ok(id)
    }

    /// Header line naming the base fingerprint, then the extension entries
    /// in the base model's line format with continuing ranks.
    pub fn to_file_string(&self) -> String {
        let mut out = format!("{MERGED_HEADER} {} {}\n", self.base.fingerprint(), self.base.vocab_size());
        let first_rank = self.base.merges().len();
        for i in 0..self.extension_merges.len() {
            let bytes = &self.table.vocab[self.first_extension_id() + i];
            let _ = writeln!(out, "{} {}", B64.encode(bytes), first_rank + i);
        }
        out
    }

    pub fn from_file_str(text: &str, base: ByteBpeModel) -> Result<Self> {
        let (header, body) = text.split_once('\n').unwrap_or((text, ""));
        let mut parts = header.split(' ');
        if parts.next() != Some(MERGED_HEADER) {
            return Err(Error::Format("missing #merged header".into()));
        }
        let (Some(hash), Some(size), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Format("malformed #merged header".into()));
        };
        if hash != base.fingerprint() {
            return Err(Error::Format("base model fingerprint does not match merged file".into()));
        }
        if size.parse::<usize>().ok() != Some(base.vocab_size()) {
            return Err(Error::Format("base vocab size does not match merged file".into()));
        }
        let entries = parse_entries(body, base.merges().len())?;
        if !entries.specials.is_empty() {
            return Err(Error::Format("merged files carry no specials".into()));
        }
        let mut merged = MergedTokenizer::empty(base);
        let mut lookup = merged.byte_lookup();
        for bytes in entries.tokens {
            if lookup.contains_key(&bytes) {
                return Err(Error::Format("extension token duplicates an existing token".into()));
            }
            let (l, r) = merged
                .table
                .infer_pair(&bytes, &lookup)
                .ok_or_else(|| Error::Format("extension token is not a merge of known tokens".into()))?;
            let id = merged.push(l, r)?;
            lookup.insert(bytes, id);
        }
        Ok(merged)
    }

    fn byte_lookup(&self) -> HashMap<Vec<u8>, u32> {
        let mut lookup = HashMap::new();
        for (i, b) in self.table.vocab.iter().enumerate() {
            if !self.table.is_special(i as u32) {
                lookup.entry(b.clone()).or_insert(i as u32);
            }
        }
        lookup
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()).at_path(path)
    }

    pub fn load(path: impl AsRef<Path>, base: ByteBpeModel) -> Result<Self> {
        let path = path.as_ref();
        Self::from_file_str(&fs::read_to_string(path).at_path(path)?, base)
    }
}

/// Appends the extension's merges after the base's, dropping any whose
/// token bytes the result already contains. Base specials are kept and
/// extension specials dropped.
pub fn merge_tokenizers(base: &ByteBpeModel, extension: &ByteBpeModel) -> MergedTokenizer {
    let mut merged = MergedTokenizer::empty(base.clone());
    let mut lookup = merged.byte_lookup();
    // extension id → merged id, for every non-special extension token
    let mut remap: Vec<u32> = (0..256).collect();
    for (rank, &(l, r)) in extension.merges().iter().enumerate() {
        let bytes = extension.token_bytes(256 + rank as u32).expect("merge token exists");
        if let Some(&existing) = lookup.get(bytes) {
            remap.push(existing);
            continue;
        }
        let id = merged
            .push(remap[l as usize], remap[r as usize])
            .expect("remapped operands precede the new token and produce unseen bytes");
        lookup.insert(bytes.to_vec(), id);
        remap.push(id);
    }
    merged
}

impl Tokenize for MergedTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in self.base.pretokenizer().chunks(text) {
            self.table.encode_bytes(chunk.as_bytes(), &mut out);
        }
        out
    }

    fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        self.table.decode_bytes(ids)
    }

    fn chunker(&self) -> &dyn PreTokenizer {
        self.base.pretokenizer()
    }

    fn encode_chunk(&self, chunk: &str, out: &mut Vec<u32>) {
        self.table.encode_bytes(chunk.as_bytes(), out);
    }
}
