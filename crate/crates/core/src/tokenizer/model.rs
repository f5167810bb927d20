use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use super::pretokenize::{PreTokenizer, WhitespacePreTokenizer};
use super::table::MergeTable;
use super::Tokenize;
use crate::error::{Error, PathContext, Result};

pub const SPECIAL_PREFIX: &str = "#special ";

/// Byte-level BPE model. Ids 0–255 are the single bytes, merge `r` produces
/// id `256 + r`, and special tokens follow the merges.
#[derive(Clone)]
pub struct ByteBpeModel {
    merges: Vec<(u32, u32)>,
    specials: BTreeMap<String, u32>,
    pub(crate) table: MergeTable,
    pretokenizer: Arc<dyn PreTokenizer>,
}

impl std::fmt::Debug for ByteBpeModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ByteBpeModel")
            .field("merges", &self.merges.len())
            .field("specials", &self.specials)
            .finish()
    }
}

impl PartialEq for ByteBpeModel {
    fn eq(&self, other: &Self) -> bool {
        self.merges == other.merges && self.specials == other.specials
    }
}

impl ByteBpeModel {
    /// 256 byte tokens, no merges.
    pub fn byte_identity() -> Self {
        ByteBpeModel {
            merges: Vec::new(),
            specials: BTreeMap::new(),
            table: MergeTable::bytes_only(),
            pretokenizer: Arc::new(WhitespacePreTokenizer),
        }
    }

    pub fn from_merges(merges: Vec<(u32, u32)>, specials: &[String]) -> Result<Self> {
        let mut table = MergeTable::bytes_only();
        for (rank, &(l, r)) in merges.iter().enumerate() {
            table.push_merge(l, r, rank as u32)?;
        }
        let mut model = ByteBpeModel { merges, specials: BTreeMap::new(), table, pretokenizer: Arc::new(WhitespacePreTokenizer) };
        for name in specials {
            model.add_special(name)?;
        }
        Ok(model)
    }

    fn add_special(&mut self, name: &str) -> Result<u32> {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Config(format!("invalid special token name {name:?}")));
        }
        if self.specials.contains_key(name) {
            return Err(Error::Config(format!("duplicate special token {name:?}")));
        }
        let id = self.table.push_special(name);
        self.specials.insert(name.to_owned(), id);
        Ok(id)
    }

    pub fn with_pretokenizer(mut self, p: Arc<dyn PreTokenizer>) -> Self {
        self.pretokenizer = p;
        self
    }

    pub fn pretokenizer(&self) -> &dyn PreTokenizer {
        self.pretokenizer.as_ref()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn specials(&self) -> &BTreeMap<String, u32> {
        &self.specials
    }

    pub fn vocab_size(&self) -> usize {
        self.table.vocab.len()
    }

    /// Bytes of a token; special tokens return their name.
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.table.vocab.get(id as usize).map(Vec::as_slice)
    }

    pub fn id_of(&self, bytes: &[u8]) -> Option<u32> {
        (0..256 + self.merges.len()).map(|i| i as u32).find(|&i| self.table.vocab[i as usize] == bytes)
    }

    /// Canonical file text: one `base64(bytes) rank` line per merge, then
    /// `#special name id` lines.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for rank in 0..self.merges.len() {
            let _ = writeln!(out, "{} {rank}", B64.encode(&self.table.vocab[256 + rank]));
        }
        for (name, id) in &self.specials {
            let _ = writeln!(out, "{SPECIAL_PREFIX}{name} {id}");
        }
        out
    }

    pub fn from_file_str(text: &str) -> Result<Self> {
        let entries = parse_entries(text, 0)?;
        let mut table = MergeTable::bytes_only();
        let mut lookup: HashMap<Vec<u8>, u32> = table.vocab.iter().enumerate().map(|(i, b)| (b.clone(), i as u32)).collect();
        let mut merges = Vec::with_capacity(entries.tokens.len());
        for (rank, bytes) in entries.tokens.iter().enumerate() {
            let (l, r) = table
                .infer_pair(bytes, &lookup)
                .ok_or_else(|| Error::Format(format!("rank {rank}: token is not a merge of known tokens")))?;
            let id = table.push_merge(l, r, rank as u32)?;
            lookup.entry(bytes.clone()).or_insert(id);
            merges.push((l, r));
        }
        let mut model = ByteBpeModel { merges, specials: BTreeMap::new(), table, pretokenizer: Arc::new(WhitespacePreTokenizer) };
        let mut specials = entries.specials;
        specials.sort_by_key(|(_, id)| *id);
        for (name, id) in specials {
            let got = model.add_special(&name)?;
            if got != id {
                return Err(Error::Format(format!("special {name:?} has id {id}, expected {got}")));
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()).at_path(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_file_str(&fs::read_to_string(path).at_path(path)?)
    }

    /// SHA-256 of the canonical file text.
    pub fn fingerprint(&self) -> String {
        crate::io::sha256_hex(self.to_file_string().as_bytes())
    }
}

pub(crate) struct Entries {
    pub tokens: Vec<Vec<u8>>,
    pub specials: Vec<(String, u32)>,
}

/// Parses `base64 rank` lines (ranks must run densely from `first_rank`)
/// and trailing `#special` lines.
pub(crate) fn parse_entries(text: &str, first_rank: usize) -> Result<Entries> {
    let mut tokens = Vec::new();
    let mut specials = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |m: &str| Error::Format(format!("line {}: {m}", i + 1));
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(SPECIAL_PREFIX) {
            let (name, id) = rest.rsplit_once(' ').ok_or_else(|| bad("special needs a name and an id"))?;
            specials.push((name.to_owned(), id.parse().map_err(|_| bad("bad special id"))?));
            continue;
        }
        if line.starts_with('#') {
            return Err(bad("unexpected directive"));
        }
        if !specials.is_empty() {
            return Err(bad("vocabulary entry after specials"));
        }
        let (b64, rank) = line.split_once(' ').ok_or_else(|| bad("expected `base64 rank`"))?;
        let rank: usize = rank.parse().map_err(|_| bad("bad rank"))?;
        if rank != first_rank + tokens.len() {
            return Err(bad(&format!("rank {rank} out of order")));
        }
        let bytes = B64.decode(b64).map_err(|_| bad("bad base64"))?;
        if bytes.len() < 2 {
            return Err(bad("merged token shorter than two bytes"));
        }
        tokens.push(bytes);
    }
    Ok(Entries { tokens, specials })
}

impl Tokenize for ByteBpeModel {
    fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in self.pretokenizer.chunks(text) {
            self.table.encode_bytes(chunk.as_bytes(), &mut out);
        }
        out
    }

    fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        self.table.decode_bytes(ids)
    }

    fn chunker(&self) -> &dyn PreTokenizer {
        self.pretokenizer.as_ref()
    }

    fn encode_chunk(&self, chunk: &str, out: &mut Vec<u32>) {
        self.table.encode_bytes(chunk.as_bytes(), out);
    }
}
