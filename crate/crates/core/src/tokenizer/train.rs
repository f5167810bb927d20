use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::sync::Arc;

use rayon::prelude::*;

use super::model::ByteBpeModel;
use super::pretokenize::{PreTokenizer, WhitespacePreTokenizer};
use crate::corpus::Document;
use crate::error::{Error, Result};

type Pair = (u32, u32);

#[derive(Clone)]
pub struct TrainerConfig {
    /// Final vocabulary size including the 256 byte tokens and specials.
    pub vocab_size: usize,
    pub specials: Vec<String>,
    pub pretokenizer: Arc<dyn PreTokenizer>,
}

impl TrainerConfig {
    pub fn new(vocab_size: usize) -> Self {
        TrainerConfig { vocab_size, specials: Vec::new(), pretokenizer: Arc::new(WhitespacePreTokenizer) }
    }
}

const BATCH: usize = 4096;

/// Counts pretokenized chunks over the corpus, in parallel per batch.
pub fn count_chunks<I>(docs: I, pretokenizer: &dyn PreTokenizer) -> Result<HashMap<String, u64>>
where
    I: IntoIterator<Item = Result<Document>>,
{
    let mut docs = docs.into_iter();
    let mut total: HashMap<String, u64> = HashMap::new();
    loop {
        let batch: Vec<Document> = docs.by_ref().take(BATCH).collect::<Result<_>>()?;
        if batch.is_empty() {
            break;
        }
        let counts = batch
            .par_iter()
            .fold(HashMap::new, |mut acc: HashMap<String, u64>, d| {
                for c in pretokenizer.chunks(&d.text) {
                    match acc.get_mut(c) {
                        Some(n) => *n += 1,
                        None => {
                            acc.insert(c.to_owned(), 1);
                        }
                    }
                }
                acc
            })
            .reduce(HashMap::new, merge_counts);
        total = merge_counts(total, counts);
    }
    Ok(total)
}

fn merge_counts(mut a: HashMap<String, u64>, b: HashMap<String, u64>) -> HashMap<String, u64> {
    if a.len() < b.len() {
        return merge_counts(b, a);
    }
    for (k, v) in b {
        *a.entry(k).or_default() += v;
    }
    a
}

fn merge_word(word: &[u32], pair: Pair, id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && word[i] == pair.0 && word[i + 1] == pair.1 {
            out.push(id);
            i += 2;
        } else {
            out.push(word[i]);
            i += 1;
        }
    }
    out
}

/// Learns merges from chunk frequencies. Each step merges the most frequent
/// adjacent pair (ties to the smaller `(left, right)`) until the target is
/// reached or no pair occurs at least twice.
pub fn train_from_counts(counts: &HashMap<String, u64>, config: &TrainerConfig) -> Result<ByteBpeModel> {
    let floor = 256 + config.specials.len();
    if config.vocab_size < floor.max(257) {
        return Err(Error::Config(format!("vocab size {} below minimum {}", config.vocab_size, floor.max(257))));
    }
    if counts.is_empty() {
        return Err(Error::Train("training corpus is empty".into()));
    }
    let target = config.vocab_size - floor;

    let mut chunks: Vec<(&String, &u64)> = counts.iter().collect();
    chunks.sort_unstable();
    let mut words: Vec<Vec<u32>> = chunks.iter().map(|(c, _)| c.bytes().map(u32::from).collect()).collect();
    let freqs: Vec<i64> = chunks.iter().map(|(_, &n)| n as i64).collect();

    let mut pair_counts: HashMap<Pair, i64> = HashMap::new();
    let mut where_: HashMap<Pair, Vec<u32>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in w.windows(2) {
            let pair = (p[0], p[1]);
            *pair_counts.entry(pair).or_default() += freqs[wi];
            where_.entry(pair).or_default().push(wi as u32);
        }
    }
    let mut heap: BinaryHeap<(i64, Reverse<Pair>)> = pair_counts.iter().map(|(&p, &c)| (c, Reverse(p))).collect();

    let mut merges: Vec<Pair> = Vec::with_capacity(target);
    while merges.len() < target {
        let Some((count, Reverse(pair))) = heap.pop() else { break };
        if pair_counts.get(&pair).copied() != Some(count) {
            continue;
        }
        if count < 2 {
            break;
        }
        let id = 256 + merges.len() as u32;
        merges.push(pair);

        let mut touched = where_.remove(&pair).unwrap_or_default();
        touched.sort_unstable();
        touched.dedup();
        let mut changed: HashMap<Pair, ()> = HashMap::new();
        for wi in touched {
            let wi = wi as usize;
            let old = &words[wi];
            if !old.windows(2).any(|p| (p[0], p[1]) == pair) {
                continue;
            }
            let new = merge_word(old, pair, id);
            let f = freqs[wi];
            for p in old.windows(2) {
                let key = (p[0], p[1]);
                *pair_counts.get_mut(&key).expect("pair counted") -= f;
                changed.insert(key, ());
            }
            for p in new.windows(2) {
                let key = (p[0], p[1]);
                *pair_counts.entry(key).or_default() += f;
                changed.insert(key, ());
                where_.entry(key).or_default().push(wi as u32);
            }
            words[wi] = new;
        }
        for (p, ()) in changed {
            match pair_counts.get(&p).copied() {
                Some(c) if c > 0 => heap.push((c, Reverse(p))),
                _ => {
                    pair_counts.remove(&p);
                }
            }
        }
    }
    log::info!("learned {} merges (target {target})", merges.len());
    Ok(ByteBpeModel::from_merges(merges, &config.specials)?.with_pretokenizer(config.pretokenizer.clone()))
}

/// Trains a byte-level BPE model over the documents' text.
pub fn train_bpe<I>(docs: I, config: &TrainerConfig) -> Result<ByteBpeModel>
where
    I: IntoIterator<Item = Result<Document>>,
{
    if config.vocab_size < 257 {
        return Err(Error::Config(format!("vocab size {} below minimum 257", config.vocab_size)));
    }
    let counts = count_chunks(docs, config.pretokenizer.as_ref())?;
    train_from_counts(&counts, config)
}
