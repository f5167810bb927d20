//! Word n-gram language model with interpolated Kneser-Ney smoothing, used
//! to rank documents by how fluent they look and drop the noisiest tail.
//!
//! The highest order uses raw counts; lower orders use continuation counts
//! (number of distinct left extensions). A single absolute discount applies
//! at every order and the recursion bottoms out in a uniform distribution
//! over the vocabulary, so every word, including `<unk>`, has non-zero
//! probability.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Normalizer};
use crate::error::{Error, PathContext, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
const BOS_ID: u32 = 0;
const EOS_ID: u32 = 1;
const UNK_ID: u32 = 2;

const MAGIC: &[u8; 4] = b"CKLM";
const FORMAT_VERSION: u32 = 1;
const BATCH: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub order: usize,
    pub discount: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig { order: 3, discount: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct ContextStats {
    total: u64,
    types: u64,
}

#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    discount: f64,
    words: Vec<String>,
    ids: HashMap<String, u32>,
    /// `counts[m - 1]` holds m-gram counts: raw at the top order,
    /// continuation counts below it.
    counts: Vec<HashMap<Vec<u32>, u64>>,
    contexts: Vec<HashMap<Vec<u32>, ContextStats>>,
}

/// Splits a document into sentences of words, as used for training and scoring.
pub fn sentences(text: &str, normalizer: &Normalizer) -> Vec<Vec<String>> {
    let view = normalizer.view(text);
    view.sentences
        .iter()
        .map(|s| s.split_whitespace().map(str::to_owned).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect()
}

impl NGramModel {
    fn empty(config: LmConfig) -> Self {
        let words: Vec<String> = [BOS, EOS, UNK].map(String::from).to_vec();
        let ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        NGramModel {
            order: config.order,
            discount: config.discount,
            words,
            ids,
            counts: vec![HashMap::new(); config.order],
            contexts: Vec::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Vocabulary including the reserved `<s>`, `</s>` and `<unk>`.
    pub fn vocabulary(&self) -> &[String] {
        &self.words
    }

    /// Words that can be predicted: everything except `<s>`.
    pub fn predictable(&self) -> impl Iterator<Item = &str> {
        self.words.iter().skip(1).map(String::as_str)
    }

    fn intern(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.ids.get(w) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(w.to_owned());
        self.ids.insert(w.to_owned(), id);
        id
    }

    fn id(&self, w: &str) -> u32 {
        match w {
            BOS => BOS_ID,
            _ => self.ids.get(w).copied().filter(|&i| i != BOS_ID).unwrap_or(UNK_ID),
        }
    }

    fn padded(&self, words: &[u32]) -> Vec<u32> {
        let mut seq = vec![BOS_ID; self.order - 1];
        seq.extend_from_slice(words);
        seq.push(EOS_ID);
        seq
    }

    /// Interpolated KN estimate. `context` holds at most `order − 1` ids.
    fn prob_ids(&self, context: &[u32], w: u32) -> f64 {
        let m = context.len().min(self.order - 1) + 1;
        self.prob_at(m, &context[context.len() + 1 - m..], w)
    }

    fn prob_at(&self, m: usize, ctx: &[u32], w: u32) -> f64 {
        if m == 0 {
            return 1.0 / (self.words.len() - 1) as f64;
        }
        let lower = self.prob_at(m - 1, &ctx[1.min(ctx.len())..], w);
        let Some(stats) = self.contexts[m - 1].get(ctx).filter(|s| s.total > 0) else {
            return lower;
        };
        let mut key = Vec::with_capacity(m);
        key.extend_from_slice(ctx);
        key.push(w);
        let c = self.counts[m - 1].get(&key).copied().unwrap_or(0) as f64;
        let d = self.discount;
        ((c - d).max(0.0) + d * stats.types as f64 * lower) / stats.total as f64
    }

    /// Interpolation weight given to the lower order after `ctx`.
    fn backoff_weight(&self, ctx: &[u32]) -> Option<f64> {
        let m = ctx.len() + 1;
        let s = self.contexts.get(m - 1)?.get(ctx).filter(|s| s.total > 0)?;
        Some(self.discount * s.types as f64 / s.total as f64)
    }

    /// Conditional probability of `word` after `context` (oldest word first).
    /// Unknown words map to `<unk>`; `<s>` may appear in the context.
    pub fn prob(&self, context: &[&str], word: &str) -> f64 {
        let ctx: Vec<u32> = context.iter().map(|w| self.id(w)).collect();
        self.prob_ids(&ctx, self.id(word))
    }

    /// Natural-log probability of one sentence including `</s>`, and the
    /// number of predicted tokens.
    pub fn sentence_log_prob<S: AsRef<str>>(&self, words: &[S]) -> (f64, usize) {
        let ids: Vec<u32> = words.iter().map(|w| self.id(w.as_ref())).collect();
        let seq = self.padded(&ids);
        let n = self.order - 1;
        let mut lp = 0.0;
        for i in n..seq.len() {
            lp += self.prob_ids(&seq[i - n..i], seq[i]).ln();
        }
        (lp, seq.len() - n)
    }

    fn finalize(&mut self, raw: Vec<HashMap<Vec<u32>, u64>>) {
        let mut counts = raw;
        for m in (1..self.order).rev() {
            let mut cont: HashMap<Vec<u32>, u64> = HashMap::new();
            for key in counts[m].keys() {
                *cont.entry(key[1..].to_vec()).or_default() += 1;
            }
            counts[m - 1] = cont;
        }
        self.counts = counts;
        self.rebuild_contexts();
    }

    fn rebuild_contexts(&mut self) {
        self.contexts = self
            .counts
            .iter()
            .map(|table| {
                let mut ctx: HashMap<Vec<u32>, ContextStats> = HashMap::new();
                for (key, &c) in table {
                    let s = ctx.entry(key[..key.len() - 1].to_vec()).or_default();
                    s.total += c;
                    s.types += 1;
                }
                ctx
            })
            .collect();
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).at_path(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Binary layout (little endian): magic `CKLM`, version, order, discount,
    /// vocabulary (length-prefixed UTF-8), then per order a sorted list of
    /// (ids, count) entries.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u32::<LittleEndian>(self.order as u32)?;
        w.write_f64::<LittleEndian>(self.discount)?;
        w.write_u32::<LittleEndian>(self.words.len() as u32)?;
        for word in &self.words {
            w.write_u32::<LittleEndian>(word.len() as u32)?;
            w.write_all(word.as_bytes())?;
        }
        for table in &self.counts {
            let mut entries: Vec<(&Vec<u32>, &u64)> = table.iter().collect();
            entries.sort_unstable();
            w.write_u64::<LittleEndian>(entries.len() as u64)?;
            for (key, &c) in entries {
                for &id in key {
                    w.write_u32::<LittleEndian>(id)?;
                }
                w.write_u64::<LittleEndian>(c)?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_from(&mut BufReader::new(File::open(path).at_path(path)?))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let fmt = |m: &str| Error::Format(m.to_owned());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(fmt("not an n-gram model file"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let order = r.read_u32::<LittleEndian>()? as usize;
        let discount = r.read_f64::<LittleEndian>()?;
        if order == 0 || !(discount > 0.0 && discount <= 1.0) {
            return Err(fmt("corrupt header"));
        }
        let n_words = r.read_u32::<LittleEndian>()? as usize;
        let mut words = Vec::with_capacity(n_words);
        for _ in 0..n_words {
            let len = r.read_u32::<LittleEndian>()? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            words.push(String::from_utf8(buf).map_err(|_| fmt("vocabulary is not UTF-8"))?);
        }
        if words.len() < 3 || words[..3] != [BOS, EOS, UNK] {
            return Err(fmt("reserved tokens missing"));
        }
        let mut counts = Vec::with_capacity(order);
        for m in 1..=order {
            let n = r.read_u64::<LittleEndian>()?;
            let mut table = HashMap::with_capacity(n as usize);
            for _ in 0..n {
                let mut key = Vec::with_capacity(m);
                for _ in 0..m {
                    let id = r.read_u32::<LittleEndian>()?;
                    if id as usize >= words.len() {
                        return Err(fmt("word id out of range"));
                    }
                    key.push(id);
                }
                table.insert(key, r.read_u64::<LittleEndian>()?);
            }
            counts.push(table);
        }
        let ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let mut model = NGramModel { order, discount, words, ids, counts, contexts: Vec::new() };
        model.rebuild_contexts();
        Ok(model)
    }

    /// ARPA-style text export: log10 probabilities and log10 interpolation
    /// weights for every stored n-gram.
    pub fn write_arpa<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut sections: Vec<Vec<(String, f64, Option<f64>)>> = Vec::new();
        for m in 1..=self.order {
            let mut keys: Vec<&Vec<u32>> = self.counts[m - 1].keys().collect();
            if m == 1 {
                let present: HashSet<&[u32]> = keys.iter().map(|k| k.as_slice()).collect();
                let missing: Vec<u32> = (0..self.words.len() as u32).filter(|i| !present.contains(&[*i][..])).collect();
                let mut all: Vec<Vec<u32>> = keys.iter().map(|k| (*k).clone()).collect();
                all.extend(missing.into_iter().map(|i| vec![i]));
                all.sort_unstable();
                sections.push(self.arpa_lines(m, &all.iter().collect::<Vec<_>>()));
                continue;
            }
            keys.sort_unstable();
            sections.push(self.arpa_lines(m, &keys));
        }
        writeln!(w, "\\data\\")?;
        for (i, s) in sections.iter().enumerate() {
            writeln!(w, "ngram {}={}", i + 1, s.len())?;
        }
        for (i, s) in sections.iter().enumerate() {
            writeln!(w, "\n\\{}-grams:", i + 1)?;
            for (gram, lp, bo) in s {
                match bo {
                    Some(b) => writeln!(w, "{lp:.7}\t{gram}\t{b:.7}")?,
                    None => writeln!(w, "{lp:.7}\t{gram}")?,
                }
            }
        }
        writeln!(w, "\n\\end\\")?;
        Ok(())
    }

    fn arpa_lines(&self, m: usize, keys: &[&Vec<u32>]) -> Vec<(String, f64, Option<f64>)> {
        keys.iter()
            .map(|key| {
                let gram = key.iter().map(|&i| self.words[i as usize].as_str()).collect::<Vec<_>>().join(" ");
                let (ctx, w) = key.split_at(m - 1);
                let lp = if w[0] == BOS_ID { -99.0 } else { self.prob_at(m, ctx, w[0]).log10() };
                let bo = (m < self.order).then(|| self.backoff_weight(key).map_or(0.0, f64::log10));
                (gram, lp, bo)
            })
            .collect()
    }
}

/// Trains an interpolated Kneser-Ney model over the sentences of `docs`.
pub fn train<I>(docs: I, config: LmConfig) -> Result<NGramModel>
where
    I: IntoIterator<Item = Result<Document>>,
{
    if config.order == 0 {
        return Err(Error::Train("order must be at least 1".into()));
    }
    if !(config.discount > 0.0 && config.discount <= 1.0) {
        return Err(Error::Train(format!("discount {} outside (0, 1]", config.discount)));
    }
    let normalizer = Normalizer::default();
    let mut model = NGramModel::empty(config);
    let mut raw: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); config.order];
    let mut docs = docs.into_iter();
    let mut any = false;
    loop {
        let batch: Vec<Document> = docs.by_ref().take(BATCH).collect::<Result<_>>()?;
        if batch.is_empty() {
            break;
        }
        let split: Vec<Vec<Vec<String>>> = batch.par_iter().map(|d| sentences(&d.text, &normalizer)).collect();
        for sentence in split.iter().flatten() {
            any = true;
            let ids: Vec<u32> = sentence.iter().map(|w| model.intern(w)).collect();
            let seq = model.padded(&ids);
            let start = config.order - 1;
            for i in start..seq.len() {
                for m in 1..=config.order {
                    *raw[m - 1].entry(seq[i + 1 - m..=i].to_vec()).or_default() += 1;
                }
            }
        }
    }
    if !any {
        return Err(Error::Train("training corpus has no sentences".into()));
    }
    model.finalize(raw);
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDocument {
    pub id: String,
    pub log_prob: f64,
    pub tokens: usize,
    pub per_word_log_prob: f64,
    pub perplexity: f64,
}

pub fn perplexity(model: &NGramModel, doc: &Document) -> Result<ScoredDocument> {
    score_text(model, &doc.id, &doc.text, &Normalizer::default())
}

fn score_text(model: &NGramModel, id: &str, text: &str, normalizer: &Normalizer) -> Result<ScoredDocument> {
    let sents = sentences(text, normalizer);
    if sents.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let (mut lp, mut tokens) = (0.0, 0);
    for s in &sents {
        let (l, t) = model.sentence_log_prob(s);
        lp += l;
        tokens += t;
    }
    let per = lp / tokens as f64;
    Ok(ScoredDocument { id: id.to_owned(), log_prob: lp, tokens, per_word_log_prob: per, perplexity: (-per).exp() })
}

/// Scores documents in parallel, preserving order. Documents without
/// sentences get `None`.
pub fn score_all(model: &NGramModel, docs: &[Document]) -> Vec<Option<ScoredDocument>> {
    let normalizer = Normalizer::default();
    docs.par_iter().map(|d| score_text(model, &d.id, &d.text, &normalizer).ok()).collect()
}

#[derive(Debug, Clone)]
pub struct RankFiltered {
    pub kept: Vec<Document>,
    /// Lowest per-word log-prob among kept documents (minimum over groups).
    pub threshold: f64,
    pub group_thresholds: BTreeMap<String, f64>,
}

/// Keeps the best `ceil(retain_fraction · N)` documents by per-word log-prob
/// (ties broken by id), in input order. With `group_by`, the cut is applied
/// separately within each value of that metadata key.
pub fn rank_filter(
    docs: Vec<Document>,
    model: &NGramModel,
    retain_fraction: f64,
    group_by: Option<&str>,
) -> Result<RankFiltered> {
    if !(retain_fraction > 0.0 && retain_fraction <= 1.0) {
        return Err(Error::Config(format!("retain fraction {retain_fraction} outside (0, 1]")));
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let scores: Vec<f64> = score_all(model, &docs)
        .into_iter()
        .map(|s| s.map_or(f64::NEG_INFINITY, |s| s.per_word_log_prob))
        .collect();
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, d) in docs.iter().enumerate() {
        let key = group_by.map(|k| d.meta.get(k).cloned().unwrap_or_default()).unwrap_or_default();
        groups.entry(key).or_default().push(i);
    }
    let mut keep = vec![false; docs.len()];
    let mut group_thresholds = BTreeMap::new();
    for (key, mut members) in groups {
        members.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| docs[a].id.cmp(&docs[b].id)));
        let n = crate::filter::nearest_rank(retain_fraction * 100.0, members.len());
        for &i in &members[..n] {
            keep[i] = true;
        }
        group_thresholds.insert(key, scores[members[n - 1]]);
    }
    let threshold = group_thresholds.values().copied().fold(f64::INFINITY, f64::min);
    let kept = docs.into_iter().zip(keep).filter(|(_, k)| *k).map(|(d, _)| d).collect();
    Ok(RankFiltered { kept, threshold, group_thresholds })
}
