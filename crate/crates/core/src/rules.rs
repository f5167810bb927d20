//! Document and line quality metrics.
//!
//! All functions here are pure: the same document and [`Rules`] always yield
//! the same [`RuleMetrics`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_properties::{GeneralCategory, UnicodeGeneralCategory};

use crate::corpus::{Document, NormalizedView, Normalizer};
use crate::error::{Error, Result};
use crate::resources::Resources;

/// Word n-gram sizes reported by `top_ngram_char_fraction`.
pub const TOP_NGRAM_SIZES: [usize; 3] = [2, 3, 4];

/// Configurable character sets used by the line and document rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleSettings {
    pub line_terminals: Vec<char>,
    /// Bullet glyphs matched as the first non-whitespace code point.
    pub bullets: Vec<char>,
    /// ASCII markers that only count as bullets when followed by a space.
    pub spaced_bullets: Vec<char>,
    pub symbols: Vec<String>,
    pub brackets: Vec<char>,
    pub top_ngram_k: usize,
}

impl Default for RuleSettings {
    fn default() -> Self {
        RuleSettings {
            line_terminals: vec!['.', '!', '?', '”', '।'],
            bullets: vec!['\u{2022}', '\u{2023}', '\u{25B6}', '\u{2043}', '\u{2219}'],
            spaced_bullets: vec!['-', '*'],
            symbols: vec!["#".into(), "...".into(), "…".into()],
            brackets: vec!['(', ')', '[', ']', '{', '}'],
            top_ngram_k: 1,
        }
    }
}

/// Settings plus loaded resource tables; read-only and shareable.
#[derive(Clone)]
pub struct Rules {
    pub settings: RuleSettings,
    pub resources: Resources,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineMetrics {
    pub ends_terminal: bool,
    pub word_count: usize,
    pub starts_bullet: bool,
    pub numeric_fraction: f64,
}

/// Fields that divide by a word, line or character count are `None` when
/// that count is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleMetrics {
    pub terminal_punct_fraction: Option<f64>,
    pub mean_line_word_count: Option<f64>,
    pub bullet_line_fraction: Option<f64>,
    pub mean_line_numeric_fraction: Option<f64>,
    pub is_adult_url: bool,
    pub language_fractions: BTreeMap<String, f64>,
    pub sentence_count: usize,
    pub word_count: usize,
    pub mean_word_length: Option<f64>,
    pub symbol_to_word_ratio: Option<f64>,
    pub ellipsis_line_fraction: Option<f64>,
    pub unique_word_fraction: Option<f64>,
    pub unigram_entropy: Option<f64>,
    pub stopword_fraction: Option<f64>,
    /// Indexed like [`TOP_NGRAM_SIZES`].
    pub top_ngram_char_fraction: [Option<f64>; 3],
    pub content_flag_score: Option<f64>,
    pub bad_word_count: usize,
    pub bracket_ratio: Option<f64>,
    /// Set when the document has no words.
    pub empty: bool,
}

/// Numeric metric names usable in thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    TerminalPunctFraction,
    MeanLineWordCount,
    BulletLineFraction,
    MeanLineNumericFraction,
    SentenceCount,
    WordCount,
    MeanWordLength,
    SymbolToWordRatio,
    EllipsisLineFraction,
    UniqueWordFraction,
    UnigramEntropy,
    StopwordFraction,
    Top2gramCharFraction,
    Top3gramCharFraction,
    Top4gramCharFraction,
    ContentFlagScore,
    BadWordCount,
    BracketRatio,
}

impl Metric {
    pub const ALL: [Metric; 18] = [
        Metric::TerminalPunctFraction,
        Metric::MeanLineWordCount,
        Metric::BulletLineFraction,
        Metric::MeanLineNumericFraction,
        Metric::SentenceCount,
        Metric::WordCount,
        Metric::MeanWordLength,
        Metric::SymbolToWordRatio,
        Metric::EllipsisLineFraction,
        Metric::UniqueWordFraction,
        Metric::UnigramEntropy,
        Metric::StopwordFraction,
        Metric::Top2gramCharFraction,
        Metric::Top3gramCharFraction,
        Metric::Top4gramCharFraction,
        Metric::ContentFlagScore,
        Metric::BadWordCount,
        Metric::BracketRatio,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::TerminalPunctFraction => "terminal_punct_fraction",
            Metric::MeanLineWordCount => "mean_line_word_count",
            Metric::BulletLineFraction => "bullet_line_fraction",
            Metric::MeanLineNumericFraction => "mean_line_numeric_fraction",
            Metric::SentenceCount => "sentence_count",
            Metric::WordCount => "word_count",
            Metric::MeanWordLength => "mean_word_length",
            Metric::SymbolToWordRatio => "symbol_to_word_ratio",
            Metric::EllipsisLineFraction => "ellipsis_line_fraction",
            Metric::UniqueWordFraction => "unique_word_fraction",
            Metric::UnigramEntropy => "unigram_entropy",
            Metric::StopwordFraction => "stopword_fraction",
            Metric::Top2gramCharFraction => "top_2gram_char_fraction",
            Metric::Top3gramCharFraction => "top_3gram_char_fraction",
            Metric::Top4gramCharFraction => "top_4gram_char_fraction",
            Metric::ContentFlagScore => "content_flag_score",
            Metric::BadWordCount => "bad_word_count",
            Metric::BracketRatio => "bracket_ratio",
        }
    }

    pub fn value(self, m: &RuleMetrics) -> Option<f64> {
        match self {
            Metric::TerminalPunctFraction => m.terminal_punct_fraction,
            Metric::MeanLineWordCount => m.mean_line_word_count,
            Metric::BulletLineFraction => m.bullet_line_fraction,
            Metric::MeanLineNumericFraction => m.mean_line_numeric_fraction,
            Metric::SentenceCount => Some(m.sentence_count as f64),
            Metric::WordCount => Some(m.word_count as f64),
            Metric::MeanWordLength => m.mean_word_length,
            Metric::SymbolToWordRatio => m.symbol_to_word_ratio,
            Metric::EllipsisLineFraction => m.ellipsis_line_fraction,
            Metric::UniqueWordFraction => m.unique_word_fraction,
            Metric::UnigramEntropy => m.unigram_entropy,
            Metric::StopwordFraction => m.stopword_fraction,
            Metric::Top2gramCharFraction => m.top_ngram_char_fraction[0],
            Metric::Top3gramCharFraction => m.top_ngram_char_fraction[1],
            Metric::Top4gramCharFraction => m.top_ngram_char_fraction[2],
            Metric::ContentFlagScore => m.content_flag_score,
            Metric::BadWordCount => Some(m.bad_word_count as f64),
            Metric::BracketRatio => m.bracket_ratio,
        }
    }

    /// Histogram range for reports. Values outside are clamped to the edge bins.
    pub fn histogram_range(self) -> (f64, f64) {
        match self {
            Metric::MeanLineWordCount => (0.0, 64.0),
            Metric::SentenceCount => (0.0, 512.0),
            Metric::WordCount => (0.0, 8192.0),
            Metric::MeanWordLength => (0.0, 32.0),
            Metric::SymbolToWordRatio => (0.0, 1.0),
            Metric::UnigramEntropy => (0.0, 10.0),
            Metric::BadWordCount => (0.0, 64.0),
            _ => (0.0, 1.0),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))
    }
}

fn is_decimal_digit(c: char) -> bool {
    c.general_category() == GeneralCategory::DecimalNumber
}

impl RuleSettings {
    pub fn line_metrics(&self, line: &str) -> LineMetrics {
        let trimmed = line.trim();
        let ends_terminal = trimmed.chars().last().is_some_and(|c| self.line_terminals.contains(&c));
        let mut chars = trimmed.chars();
        let starts_bullet = match chars.next() {
            Some(c) if self.bullets.contains(&c) => true,
            Some(c) if self.spaced_bullets.contains(&c) => chars.next().is_some_and(char::is_whitespace),
            _ => false,
        };
        let (mut digits, mut visible) = (0usize, 0usize);
        for c in line.chars().filter(|c| !c.is_whitespace()) {
            visible += 1;
            if is_decimal_digit(c) {
                digits += 1;
            }
        }
        LineMetrics {
            ends_terminal,
            word_count: line.split_whitespace().count(),
            starts_bullet,
            numeric_fraction: if visible == 0 { 0.0 } else { digits as f64 / visible as f64 },
        }
    }
}

/// Per-line measurements with the default character sets.
pub fn line_metrics(line: &str) -> LineMetrics {
    RuleSettings::default().line_metrics(line)
}

/// Shannon entropy (nats) of the word frequency distribution.
pub fn unigram_entropy<S: AsRef<str>>(words: &[S]) -> Result<f64> {
    if words.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for w in words {
        *counts.entry(w.as_ref()).or_default() += 1;
    }
    let total = words.len() as f64;
    // Sorted so the floating-point sum is independent of hash order.
    let mut cs: Vec<usize> = counts.into_values().collect();
    cs.sort_unstable();
    Ok(cs
        .into_iter()
        .map(|c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum())
}

pub fn stopword_fraction<S: AsRef<str>>(words: &[S], stoplist: &HashSet<String>) -> Result<f64> {
    if words.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let hits = words.iter().filter(|w| stoplist.contains(w.as_ref())).count();
    Ok(hits as f64 / words.len() as f64)
}

/// Fraction of word characters covered by occurrences of the `k` most
/// frequent word `n`-grams. Ties in frequency go to the lexicographically
/// smaller n-gram.
pub fn top_ngram_char_fraction<S: AsRef<str>>(words: &[S], n: usize, k: usize) -> f64 {
    assert!(n >= 2 && k >= 1, "top_ngram_char_fraction needs n >= 2 and k >= 1");
    if words.len() < n {
        return 0.0;
    }
    let words: Vec<&str> = words.iter().map(AsRef::as_ref).collect();
    let mut counts: HashMap<&[&str], usize> = HashMap::new();
    for gram in words.windows(n) {
        *counts.entry(gram).or_default() += 1;
    }
    let mut ranked: Vec<(&[&str], usize)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let top: HashSet<&[&str]> = ranked.into_iter().take(k).map(|(g, _)| g).collect();

    let mut covered = vec![false; words.len()];
    for (i, gram) in words.windows(n).enumerate() {
        if top.contains(gram) {
            covered[i..i + n].iter_mut().for_each(|c| *c = true);
        }
    }
    let lens: Vec<usize> = words.iter().map(|w| w.chars().count()).collect();
    let total: usize = lens.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let hit: usize = lens.iter().zip(&covered).filter(|(_, c)| **c).map(|(l, _)| l).sum();
    hit as f64 / total as f64
}

fn count_symbols(text: &str, symbols: &[String]) -> usize {
    symbols.iter().filter(|s| !s.is_empty()).map(|s| text.matches(s.as_str()).count()).sum()
}

fn ratio(num: f64, den: usize) -> Option<f64> {
    (den > 0).then(|| num / den as f64)
}

/// Fills every metric for one normalized document.
pub fn doc_metrics(view: &NormalizedView, url: Option<&str>, rules: &Rules) -> Result<RuleMetrics> {
    let settings = &rules.settings;
    let res = &rules.resources;
    let words = &view.words;
    let word_count = words.len();

    let mut lines = 0usize;
    let (mut terminal, mut bullets, mut ellipsis) = (0usize, 0usize, 0usize);
    let mut numeric_sum = 0.0;
    for line in view.lines.iter().filter(|l| !l.trim().is_empty()) {
        lines += 1;
        let lm = settings.line_metrics(line);
        terminal += lm.ends_terminal as usize;
        bullets += lm.starts_bullet as usize;
        numeric_sum += lm.numeric_fraction;
        let t = line.trim_end();
        if t.ends_with("...") || t.ends_with('…') {
            ellipsis += 1;
        }
    }

    let (mut brackets, mut visible) = (0usize, 0usize);
    for c in view.text.chars().filter(|c| !c.is_whitespace()) {
        visible += 1;
        if settings.brackets.contains(&c) {
            brackets += 1;
        }
    }

    let bad_word_count = words.iter().filter(|w| res.bad_words.contains(w.as_str())).count();
    let total_chars: usize = words.iter().map(|w| w.chars().count()).sum();
    let unique = words.iter().map(String::as_str).collect::<HashSet<_>>().len();
    let empty = word_count == 0;

    let mut top = [None; 3];
    if !empty {
        for (slot, n) in top.iter_mut().zip(TOP_NGRAM_SIZES) {
            *slot = Some(top_ngram_char_fraction(words, n, settings.top_ngram_k.max(1)));
        }
    }

    Ok(RuleMetrics {
        terminal_punct_fraction: ratio(terminal as f64, lines),
        mean_line_word_count: ratio(word_count as f64, lines),
        bullet_line_fraction: ratio(bullets as f64, lines),
        mean_line_numeric_fraction: ratio(numeric_sum, lines),
        is_adult_url: url.is_some_and(|u| res.is_adult_url(u)),
        language_fractions: language_fractions(view, res)?,
        sentence_count: view.sentences.len(),
        word_count,
        mean_word_length: ratio(total_chars as f64, word_count),
        symbol_to_word_ratio: ratio(count_symbols(&view.text, &settings.symbols) as f64, word_count),
        ellipsis_line_fraction: ratio(ellipsis as f64, lines),
        unique_word_fraction: ratio(unique as f64, word_count),
        unigram_entropy: if empty { None } else { Some(unigram_entropy(words)?) },
        stopword_fraction: if empty { None } else { Some(stopword_fraction(words, &res.stopwords)?) },
        top_ngram_char_fraction: top,
        content_flag_score: if empty { None } else { Some(res.content.score(words, bad_word_count)) },
        bad_word_count,
        bracket_ratio: ratio(brackets as f64, visible),
        empty,
    })
}

/// Default settings with the bundled word lists and language seeds.
impl Default for Rules {
    fn default() -> Self {
        Rules::new(RuleSettings::default(), Resources::builtin())
    }
}

impl Rules {
    pub fn new(settings: RuleSettings, resources: Resources) -> Self {
        Rules { settings, resources }
    }

    /// Normalizes and measures a document.
    pub fn measure(&self, doc: &Document, normalizer: &Normalizer) -> Result<RuleMetrics> {
        let view = normalizer.view(&doc.text);
        doc_metrics(&view, doc.url.as_deref(), self)
    }
}

/// Character-weighted language shares over the document's lines.
pub fn language_fractions(view: &NormalizedView, res: &Resources) -> Result<BTreeMap<String, f64>> {
    let classifier = res
        .classifier
        .as_ref()
        .ok_or_else(|| Error::Resource("no language classifier loaded".into()))?;
    let mut weights: BTreeMap<String, f64> = BTreeMap::new();
    let mut total = 0.0;
    for line in &view.lines {
        let weight = line.chars().filter(|c| !c.is_whitespace()).count() as f64;
        if weight == 0.0 {
            continue;
        }
        if let Some(tag) = classifier.classify(line) {
            *weights.entry(tag.to_owned()).or_default() += weight;
            total += weight;
        }
    }
    if total > 0.0 {
        weights.values_mut().for_each(|w| *w /= total);
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::normalize;
    use approx::assert_abs_diff_eq;

    fn rules() -> Rules {
        Rules::new(RuleSettings::default(), Resources::builtin())
    }

    #[test]
    fn line_terminal_and_counts() {
        let m = line_metrics("Hello.");
        assert!(m.ends_terminal);
        assert_eq!(m.word_count, 1);
        assert!(!m.starts_bullet);
        assert_eq!(m.numeric_fraction, 0.0);
        assert!(line_metrics("বাংলা।").ends_terminal);
        assert!(line_metrics("quoted.”  ").ends_terminal);
        assert!(!line_metrics("no end").ends_terminal);
    }

    #[test]
    fn bullet_line() {
        let m = line_metrics("• item 12");
        assert!(m.starts_bullet);
        assert_eq!(m.word_count, 3);
        // non-whitespace code points: • i t e m 1 2
        assert_abs_diff_eq!(m.numeric_fraction, 2.0 / 7.0, epsilon = 1e-12);
        assert!(line_metrics("  - dash item").starts_bullet);
        assert!(!line_metrics("-5 degrees").starts_bullet);
        assert!(line_metrics("▶ play").starts_bullet);
    }

    #[test]
    fn bangla_digits_are_numeric() {
        assert_eq!(line_metrics("১২৩").numeric_fraction, 1.0);
        assert_eq!(line_metrics("   ").numeric_fraction, 0.0);
    }

    #[test]
    fn entropy_values() {
        assert_eq!(unigram_entropy(&["a", "a", "a"]).unwrap(), 0.0);
        assert_abs_diff_eq!(unigram_entropy(&["a", "a", "b", "b"]).unwrap(), 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(unigram_entropy(&["a", "a", "a", "b"]).unwrap(), 0.562335, epsilon = 1e-6);
        assert!(matches!(unigram_entropy::<&str>(&[]), Err(Error::EmptyDocument)));
    }

    #[test]
    fn stopwords() {
        let stop: HashSet<String> = ["the".to_string()].into();
        assert_abs_diff_eq!(stopword_fraction(&["the", "cat", "sat"], &stop).unwrap(), 1.0 / 3.0);
        assert_eq!(stopword_fraction(&["x"], &HashSet::new()).unwrap(), 0.0);
        assert!(stopword_fraction::<&str>(&[], &stop).is_err());
    }

    #[test]
    fn top_ngram_examples() {
        assert_eq!(top_ngram_char_fraction(&["x", "y", "x", "y"], 2, 1), 1.0);
        assert_eq!(top_ngram_char_fraction(&["a"], 2, 1), 0.0);
        assert_abs_diff_eq!(top_ngram_char_fraction(&["a", "b", "c"], 2, 1), 2.0 / 3.0);
        assert_eq!(top_ngram_char_fraction(&["a", "b", "c"], 2, 2), 1.0);
    }

    #[test]
    fn document_examples() {
        let r = rules();
        let m = doc_metrics(&normalize("ab abcd"), None, &r).unwrap();
        assert_eq!(m.mean_word_length, Some(3.0));
        assert_eq!(m.unique_word_fraction, Some(1.0));

        let m = doc_metrics(&normalize("a...\nb"), None, &r).unwrap();
        assert_eq!(m.ellipsis_line_fraction, Some(0.5));
        assert_eq!(m.symbol_to_word_ratio, Some(0.5));

        let m = doc_metrics(&normalize("(a)"), None, &r).unwrap();
        assert_abs_diff_eq!(m.bracket_ratio.unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn empty_document_is_flagged() {
        let m = doc_metrics(&normalize("  \n "), None, &rules()).unwrap();
        assert!(m.empty);
        assert_eq!(m.word_count, 0);
        assert!(m.unigram_entropy.is_none() && m.stopword_fraction.is_none());
        assert!(m.language_fractions.is_empty());
    }

    #[test]
    fn adult_url_and_bad_words() {
        let mut r = rules();
        r.resources.adult_domains.insert("badsite.example".into());
        r.resources.bad_words.insert("darn".into());
        let m = doc_metrics(&normalize("darn it darn"), Some("https://www.cdn.badsite.example/x?y=1"), &r).unwrap();
        assert!(m.is_adult_url);
        assert_eq!(m.bad_word_count, 2);
        assert_abs_diff_eq!(m.content_flag_score.unwrap(), 2.0 / 3.0);
        let m = doc_metrics(&normalize("fine"), Some("https://goodsite.example/"), &r).unwrap();
        assert!(!m.is_adult_url);
    }

    #[test]
    fn missing_classifier_is_resource_error() {
        let mut r = rules();
        r.resources.classifier = None;
        assert!(matches!(doc_metrics(&normalize("x"), None, &r), Err(Error::Resource(_))));
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert!("nope".parse::<Metric>().is_err());
    }
}
