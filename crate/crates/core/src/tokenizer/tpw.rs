use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Tokenize;
use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceTpw {
    pub words: u64,
    pub tokens: u64,
    pub tpw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpwReport {
    pub corpus: String,
    pub documents: u64,
    pub words: u64,
    pub tokens: u64,
    pub tpw: f64,
    pub by_source: BTreeMap<String, SourceTpw>,
}

const BATCH: usize = 4096;

/// Tokens emitted per whitespace word, over the whole corpus and per
/// `source`. Repeated chunks are encoded once per batch.
pub fn tokens_per_word<T, I>(tokenizer: &T, corpus: &str, docs: I) -> Result<TpwReport>
where
    T: Tokenize + ?Sized,
    I: IntoIterator<Item = Result<Document>>,
{
    let mut docs = docs.into_iter();
    let mut by_source: BTreeMap<String, SourceTpw> = BTreeMap::new();
    let mut documents = 0u64;
    loop {
        let batch: Vec<Document> = docs.by_ref().take(BATCH).collect::<Result<_>>()?;
        if batch.is_empty() {
            break;
        }
        documents += batch.len() as u64;
        let counts: Vec<(u64, u64)> = batch
            .par_chunks(256)
            .flat_map_iter(|docs| {
                let mut cache: HashMap<&str, usize> = HashMap::new();
                let mut buf = Vec::new();
                docs.iter()
                    .map(|d| {
                        let words = d.text.split_whitespace().count() as u64;
                        let mut tokens = 0;
                        for chunk in tokenizer.chunker().chunks(&d.text) {
                            tokens += *cache.entry(chunk).or_insert_with(|| {
                                buf.clear();
                                tokenizer.encode_chunk(chunk, &mut buf);
                                buf.len()
                            });
                        }
                        (words, tokens as u64)
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        for (d, (w, t)) in batch.iter().zip(counts) {
            let s = by_source.entry(d.source.clone()).or_default();
            s.words += w;
            s.tokens += t;
        }
    }
    let words: u64 = by_source.values().map(|s| s.words).sum();
    let tokens: u64 = by_source.values().map(|s| s.tokens).sum();
    if words == 0 {
        return Err(Error::EmptyCorpus);
    }
    for s in by_source.values_mut() {
        s.tpw = if s.words == 0 { 0.0 } else { s.tokens as f64 / s.words as f64 };
    }
    Ok(TpwReport { corpus: corpus.to_owned(), documents, words, tokens, tpw: tokens as f64 / words as f64, by_source })
}
