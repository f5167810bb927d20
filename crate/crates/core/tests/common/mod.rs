//! Shared fixture generators for the integration tests.
#![allow(dead_code)]

use std::collections::HashSet;

use corpuskit::Document;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const CONSONANTS: &[char] = &[
    'ক', 'খ', 'গ', 'ঘ', 'চ', 'ছ', 'জ', 'ঝ', 'ট', 'ঠ', 'ড', 'ঢ', 'ণ', 'ত', 'থ', 'দ', 'ধ', 'ন', 'প', 'ফ', 'ব', 'ভ', 'ম',
    'য', 'র', 'ল', 'শ', 'ষ', 'স', 'হ',
];
const VOWEL_SIGNS: &[&str] = &["", "", "া", "ি", "ী", "ু", "ূ", "ে", "ৈ", "ো", "ৌ"];
const CODAS: &[&str] = &["", "", "", "", "", "ং", "ঃ", "্র", "্য", "ঁ"];

/// Zipf-distributed words over a vocabulary of synthetic Bangla syllable
/// strings. Stands in for natural Bangla text in the tokenizer tests.
pub struct BanglaGen {
    words: Vec<String>,
    cdf: Vec<f64>,
}

impl BanglaGen {
    pub fn new(vocab: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        let mut seen = HashSet::new();
        let mut words = Vec::with_capacity(vocab);
        while words.len() < vocab {
            let syllables = 1 + (0..3).filter(|_| r.random_bool(0.55)).count();
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(CONSONANTS[r.random_range(0..CONSONANTS.len())]);
                w.push_str(VOWEL_SIGNS[r.random_range(0..VOWEL_SIGNS.len())]);
                w.push_str(CODAS[r.random_range(0..CODAS.len())]);
            }
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (0..vocab)
            .map(|i| {
                acc += 1.0 / (i as f64 + 1.0).powf(1.07);
                acc
            })
            .collect();
        for c in &mut cdf {
            *c /= acc;
        }
        BanglaGen { words, cdf }
    }

    pub fn word(&self, r: &mut impl Rng) -> &str {
        let u: f64 = r.random();
        let i = self.cdf.partition_point(|&c| c < u).min(self.words.len() - 1);
        &self.words[i]
    }

    pub fn sentence(&self, r: &mut impl Rng) -> String {
        let n = r.random_range(4..16);
        let mut s: Vec<&str> = (0..n).map(|_| self.word(r)).collect();
        let last = s.pop().unwrap().to_owned() + "।";
        s.push(&last);
        s.join(" ")
    }

    pub fn document(&self, r: &mut impl Rng) -> String {
        let n = r.random_range(3..12);
        let mut text = String::new();
        for i in 0..n {
            if i > 0 {
                text.push(if r.random_bool(0.2) { '\n' } else { ' ' });
            }
            text.push_str(&self.sentence(r));
        }
        text
    }

    /// Documents totalling at least `bytes` bytes of text.
    pub fn corpus(&self, r: &mut impl Rng, bytes: usize, prefix: &str) -> Vec<Document> {
        let mut docs = Vec::new();
        let mut total = 0;
        while total < bytes {
            let text = self.document(r);
            total += text.len();
            docs.push(Document::new(format!("{prefix}{:07}", docs.len()), "synthetic-bn", text));
        }
        docs
    }
}

/// Sentences from a sparse first-order Markov chain, so word order carries
/// information an n-gram model can learn.
pub struct MarkovGen {
    words: Vec<String>,
    next: Vec<Vec<usize>>,
}

impl MarkovGen {
    pub fn new(vocab: usize, fanout: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        let base = BanglaGen::new(vocab, seed ^ 0x5eed);
        let words = base.words.clone();
        let next = (0..vocab).map(|_| (0..fanout).map(|_| r.random_range(0..vocab)).collect()).collect();
        MarkovGen { words, next }
    }

    pub fn sentence(&self, r: &mut impl Rng) -> String {
        let n = r.random_range(6..14);
        let mut w = r.random_range(0..self.words.len());
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.words[w].clone());
            let succ = &self.next[w];
            w = succ[r.random_range(0..succ.len())];
        }
        out.join(" ") + "।"
    }

    pub fn document(&self, r: &mut impl Rng, sentences: usize) -> String {
        (0..sentences).map(|_| self.sentence(r)).collect::<Vec<_>>().join(" ")
    }
}

/// Shuffles a document's words, keeping one danda at the end.
pub fn scramble(text: &str, r: &mut impl Rng) -> String {
    let mut words: Vec<String> = text.split_whitespace().map(|w| w.trim_end_matches('।').to_owned()).collect();
    words.shuffle(r);
    words.join(" ") + "।"
}

const SCRIPT_RANGES: &[(u32, u32, u32)] = &[
    // (weight, first, last)
    (40, 0x0980, 0x09FE), // Bengali block, assigned or not
    (15, 0x0020, 0x007E),
    (5, 0x00A0, 0x024F),
    (5, 0x0900, 0x097F),
    (5, 0x4E00, 0x4FFF),
    (5, 0x1F300, 0x1FAFF),
    (5, 0x0300, 0x036F),
    (3, 0x0600, 0x06FF),
    (2, 0x10000, 0x10FFFF),
];

/// A random string, mostly Bangla, with ASCII, combining marks, emoji, CJK,
/// whitespace and the odd supplementary-plane scalar.
pub fn random_text(r: &mut impl Rng, max_chars: usize) -> String {
    let total: u32 = SCRIPT_RANGES.iter().map(|s| s.0).sum();
    let n = r.random_range(0..=max_chars);
    let mut s = String::with_capacity(n * 3);
    while s.chars().count() < n {
        if r.random_bool(0.12) {
            s.push([' ', ' ', '\n', '\t', '\u{a0}', '\u{3000}'][r.random_range(0..6)]);
            continue;
        }
        let mut pick = r.random_range(0..total);
        let &(_, lo, hi) = SCRIPT_RANGES
            .iter()
            .find(|(w, _, _)| {
                if pick < *w {
                    true
                } else {
                    pick -= w;
                    false
                }
            })
            .unwrap();
        if let Some(c) = char::from_u32(r.random_range(lo..=hi)) {
            s.push(c);
        }
    }
    s
}

/// Two sets of random elements with the given intersection and exclusive
/// sizes, so their Jaccard similarity is known exactly.
pub fn set_pair(r: &mut impl Rng, both: usize, only_a: usize, only_b: usize) -> (HashSet<u64>, HashSet<u64>) {
    let mut pool = HashSet::new();
    while pool.len() < both + only_a + only_b {
        pool.insert(r.random::<u64>());
    }
    let mut pool: Vec<u64> = pool.into_iter().collect();
    pool.sort_unstable();
    pool.shuffle(r);
    let common = &pool[..both];
    let a: HashSet<u64> = common.iter().chain(&pool[both..both + only_a]).copied().collect();
    let b: HashSet<u64> = common.iter().chain(&pool[both + only_a..]).copied().collect();
    (a, b)
}

/// Plain −Σ p ln p over word frequencies, computed independently of the crate.
pub fn brute_entropy<S: AsRef<str>>(words: &[S]) -> f64 {
    let mut sorted: Vec<&str> = words.iter().map(|w| w.as_ref()).collect();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mut h = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = i + sorted[i..].iter().take_while(|w| **w == sorted[i]).count();
        let p = (j - i) as f64 / n;
        h -= p * p.ln();
        i = j;
    }
    h
}
