//! Statistics and filters for OCR-extracted books: words and sentences per
//! page, lexicon coverage, and counts of high-confidence words.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Normalizer};
use crate::error::{Error, Result};
use crate::filter::{calibrate_values, Side, Threshold};

pub const DEFAULT_CONFIDENCE_CUTOFF: f64 = 0.8;
pub const HIGH_CONFIDENCE_WORDS: &str = "high_confidence_words";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookStats {
    pub pages: usize,
    pub avg_words_per_page: f64,
    pub avg_sentences_per_page: f64,
    pub lexicon_coverage: f64,
    /// Words with confidence strictly above the cutoff; −1 when the book
    /// carries no confidence data.
    pub high_confidence_words: i64,
}

impl BookStats {
    pub fn has_confidences(&self) -> bool {
        self.high_confidence_words >= 0
    }
}

pub fn book_stats(doc: &Document, lexicon: &HashSet<String>, confidence_cutoff: f64) -> Result<BookStats> {
    book_stats_with(doc, lexicon, confidence_cutoff, &Normalizer::default())
}

fn book_stats_with(
    doc: &Document,
    lexicon: &HashSet<String>,
    cutoff: f64,
    normalizer: &Normalizer,
) -> Result<BookStats> {
    let pages = match &doc.pages {
        Some(p) if !p.is_empty() => p,
        _ => return Err(Error::NotPaginated(doc.id.clone())),
    };
    let (mut words, mut sentences, mut known) = (0usize, 0usize, 0usize);
    let mut confident: Option<i64> = None;
    for page in pages {
        let view = normalizer.view(&page.text);
        words += view.words.len();
        sentences += view.sentences.len();
        known += view.words.iter().filter(|w| lexicon.contains(w.as_str())).count();
        if let Some(confs) = &page.word_confidences {
            *confident.get_or_insert(0) += confs.iter().filter(|(_, c)| *c > cutoff).count() as i64;
        }
    }
    let n = pages.len() as f64;
    Ok(BookStats {
        pages: pages.len(),
        avg_words_per_page: words as f64 / n,
        avg_sentences_per_page: sentences as f64 / n,
        lexicon_coverage: if words == 0 { 0.0 } else { known as f64 / words as f64 },
        high_confidence_words: confident.unwrap_or(-1),
    })
}

/// Stats for every book, in input order.
pub fn all_book_stats(docs: &[Document], lexicon: &HashSet<String>, cutoff: f64) -> Result<Vec<BookStats>> {
    let normalizer = Normalizer::default();
    docs.par_iter().map(|d| book_stats_with(d, lexicon, cutoff, &normalizer)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcrFilterConfig {
    pub min_words_per_page: f64,
    pub min_sentences_per_page: f64,
    pub min_coverage: f64,
    pub confidence_cutoff: f64,
    /// Calibrate a bound on `high_confidence_words` at this percentile.
    pub confidence_percentile: Option<f64>,
    /// `Lower` drops the books with the fewest confident words.
    pub confidence_side: Side,
}

impl Default for OcrFilterConfig {
    fn default() -> Self {
        OcrFilterConfig {
            min_words_per_page: 0.0,
            min_sentences_per_page: 0.0,
            min_coverage: 0.0,
            confidence_cutoff: DEFAULT_CONFIDENCE_CUTOFF,
            confidence_percentile: None,
            confidence_side: Side::Lower,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OcrFiltered {
    pub kept: Vec<Document>,
    pub stats: Vec<BookStats>,
    pub confidence_threshold: Option<Threshold>,
}

/// Applies the minimum bounds and, when configured, a percentile rule on
/// confident-word counts calibrated over this corpus. Books without
/// confidence data are not subject to the percentile rule.
pub fn ocr_filter(docs: Vec<Document>, lexicon: &HashSet<String>, config: &OcrFilterConfig) -> Result<OcrFiltered> {
    let stats = all_book_stats(&docs, lexicon, config.confidence_cutoff)?;
    let confidence_threshold = match config.confidence_percentile {
        Some(p) => Some(calibrate_values(
            HIGH_CONFIDENCE_WORDS,
            stats.iter().filter(|s| s.has_confidences()).map(|s| Some(s.high_confidence_words as f64)),
            p,
            config.confidence_side,
        )?),
        None => None,
    };
    let keep: Vec<bool> = stats
        .iter()
        .map(|s| {
            s.avg_words_per_page >= config.min_words_per_page
                && s.avg_sentences_per_page >= config.min_sentences_per_page
                && s.lexicon_coverage >= config.min_coverage
                && match &confidence_threshold {
                    Some(t) if s.has_confidences() => t.accepts(Some(s.high_confidence_words as f64)),
                    _ => true,
                }
        })
        .collect();
    let kept = docs.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(d, _)| d).collect();
    Ok(OcrFiltered { kept, stats, confidence_threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Page;

    fn page(i: usize, text: &str, confs: Option<Vec<f64>>) -> Page {
        Page {
            index: i,
            text: text.into(),
            word_confidences: confs.map(|cs| cs.into_iter().map(|c| ("w".to_string(), c)).collect()),
        }
    }

    #[test]
    fn averages_per_page() {
        let ten = "w w w w w w w w w w.";
        let doc = Document::paginated("b", "book", vec![page(0, ten, None), page(1, ten, None)]);
        let s = book_stats(&doc, &HashSet::new(), 0.8).unwrap();
        assert_eq!(s.avg_words_per_page, 10.0);
        assert_eq!(s.avg_sentences_per_page, 1.0);
        assert_eq!(s.high_confidence_words, -1);
    }

    #[test]
    fn coverage_and_strict_confidence() {
        let lex: HashSet<String> = ["আমি".to_string()].into();
        let doc = Document::paginated("b", "book", vec![page(0, "আমি xyz", Some(vec![0.9, 0.8, 0.7]))]);
        let s = book_stats(&doc, &lex, 0.8).unwrap();
        assert_eq!(s.lexicon_coverage, 0.5);
        assert_eq!(s.high_confidence_words, 1);
    }

    #[test]
    fn unpaginated_is_an_error() {
        let doc = Document::new("plain", "web", "text");
        assert!(matches!(book_stats(&doc, &HashSet::new(), 0.8), Err(Error::NotPaginated(_))));
    }

    #[test]
    fn zero_thresholds_keep_everything() {
        let docs: Vec<Document> =
            (0..5).map(|i| Document::paginated(format!("b{i}"), "book", vec![page(0, "", None)])).collect();
        let out = ocr_filter(docs.clone(), &HashSet::new(), &OcrFilterConfig::default()).unwrap();
        assert_eq!(out.kept, docs);
    }
}
