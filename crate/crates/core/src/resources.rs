//! Runtime resource tables: stopwords, bad-word lexicon, adult-domain
//! blocklist and the baseline language / content classifiers.
//!
//! A resource directory holds `stopwords.txt`, `badwords.txt`,
//! `adult_domains.txt` and `lang/<tag>.txt` seed texts. Missing list files
//! load as empty lists; a missing `lang/` directory leaves the classifier
//! unset.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, PathContext, Result};

const BUILTIN_SEEDS: &[(&str, &str)] = &[
    ("bn", include_str!("../resources/lang/bn.txt")),
    ("en", include_str!("../resources/lang/en.txt")),
];
const BUILTIN_STOPWORDS: &str = include_str!("../resources/stopwords.txt");

/// Assigns a language tag to a line of text, or `None` when undecidable.
pub trait LanguageClassifier: Send + Sync {
    fn classify(&self, line: &str) -> Option<&str>;
}

/// Scores a document for profanity or toxicity.
pub trait ContentClassifier: Send + Sync {
    fn score(&self, words: &[String], bad_word_count: usize) -> f64;
}

/// Bad words per word.
#[derive(Debug, Default, Clone, Copy)]
pub struct LexiconRatio;

impl ContentClassifier for LexiconRatio {
    fn score(&self, words: &[String], bad_word_count: usize) -> f64 {
        if words.is_empty() {
            0.0
        } else {
            bad_word_count as f64 / words.len() as f64
        }
    }
}

type Trigram = [char; 3];

fn trigrams(text: &str) -> HashMap<Trigram, f64> {
    let mut counts = HashMap::new();
    for word in text.split_whitespace() {
        let padded: Vec<char> = std::iter::once(' ')
            .chain(word.chars().flat_map(char::to_lowercase))
            .chain(std::iter::once(' '))
            .collect();
        for w in padded.windows(3) {
            *counts.entry([w[0], w[1], w[2]]).or_insert(0.0) += 1.0;
        }
    }
    counts
}

fn unit(mut v: HashMap<Trigram, f64>) -> HashMap<Trigram, f64> {
    let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.values_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Cosine similarity between a line's character-trigram counts and a
/// per-language profile built from seed text.
#[derive(Clone)]
pub struct TrigramClassifier {
    profiles: Vec<(String, HashMap<Trigram, f64>)>,
}

impl TrigramClassifier {
    pub const PROFILE_SIZE: usize = 2000;

    pub fn train<'a>(seeds: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut profiles: Vec<(String, HashMap<Trigram, f64>)> = seeds
            .into_iter()
            .map(|(tag, text)| {
                let mut grams: Vec<(Trigram, f64)> = trigrams(text).into_iter().collect();
                grams.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                grams.truncate(Self::PROFILE_SIZE);
                (tag.to_owned(), unit(grams.into_iter().collect()))
            })
            .collect();
        profiles.sort_by(|a, b| a.0.cmp(&b.0));
        TrigramClassifier { profiles }
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.profiles.iter().map(|(t, _)| t.as_str())
    }
}

impl LanguageClassifier for TrigramClassifier {
    fn classify(&self, line: &str) -> Option<&str> {
        let grams = trigrams(line);
        let mut best: Option<(&str, f64)> = None;
        for (tag, profile) in &self.profiles {
            let score: f64 = grams.iter().filter_map(|(g, c)| profile.get(g).map(|w| w * c)).sum();
            if score > 0.0 && best.is_none_or(|(_, s)| score > s) {
                best = Some((tag, score));
            }
        }
        best.map(|(t, _)| t)
    }
}

impl fmt::Debug for TrigramClassifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrigramClassifier").field("languages", &self.languages().collect::<Vec<_>>()).finish()
    }
}

#[derive(Clone)]
pub struct Resources {
    pub stopwords: HashSet<String>,
    pub bad_words: HashSet<String>,
    pub adult_domains: HashSet<String>,
    pub classifier: Option<Arc<dyn LanguageClassifier>>,
    pub content: Arc<dyn ContentClassifier>,
}

impl Default for Resources {
    fn default() -> Self {
        Resources {
            stopwords: HashSet::new(),
            bad_words: HashSet::new(),
            adult_domains: HashSet::new(),
            classifier: None,
            content: Arc::new(LexiconRatio),
        }
    }
}

impl fmt::Debug for Resources {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Resources")
            .field("stopwords", &self.stopwords.len())
            .field("bad_words", &self.bad_words.len())
            .field("adult_domains", &self.adult_domains.len())
            .field("classifier", &self.classifier.is_some())
            .finish()
    }
}

/// One entry per line; blank lines and `#` comments skipped.
pub fn parse_word_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

pub fn load_word_list(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    Ok(parse_word_list(&fs::read_to_string(path).at_path(path)?))
}

impl Resources {
    /// Bundled seed texts and stoplist; empty bad-word and domain lists.
    pub fn builtin() -> Self {
        Resources {
            stopwords: parse_word_list(BUILTIN_STOPWORDS),
            classifier: Some(Arc::new(TrigramClassifier::train(BUILTIN_SEEDS.iter().copied()))),
            ..Resources::default()
        }
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::Resource(format!("{} is not a directory", dir.display())));
        }
        let list = |name: &str| -> Result<HashSet<String>> {
            let p = dir.join(name);
            if p.exists() {
                load_word_list(p)
            } else {
                Ok(HashSet::new())
            }
        };
        let mut res = Resources {
            stopwords: list("stopwords.txt")?,
            bad_words: list("badwords.txt")?,
            adult_domains: list("adult_domains.txt")?.into_iter().map(|d| d.to_lowercase()).collect(),
            ..Resources::default()
        };
        let lang_dir = dir.join("lang");
        if lang_dir.is_dir() {
            let mut seeds = BTreeMap::new();
            for entry in fs::read_dir(&lang_dir).at_path(&lang_dir)? {
                let path = entry.at_path(&lang_dir)?.path();
                if path.extension().is_some_and(|e| e == "txt") {
                    let tag = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                    seeds.insert(tag, fs::read_to_string(&path).at_path(&path)?);
                }
            }
            if seeds.is_empty() {
                return Err(Error::Resource(format!("no seed texts in {}", lang_dir.display())));
            }
            res.classifier = Some(Arc::new(TrigramClassifier::train(
                seeds.iter().map(|(t, s)| (t.as_str(), s.as_str())),
            )));
        }
        Ok(res)
    }

    /// True when the URL's host, or any parent domain of it, is blocklisted.
    pub fn is_adult_url(&self, url: &str) -> bool {
        if self.adult_domains.is_empty() {
            return false;
        }
        let Some(host) = url::Url::parse(url).ok().and_then(|u| u.host_str().map(str::to_lowercase)) else {
            return false;
        };
        let mut rest = host.as_str();
        loop {
            if self.adult_domains.contains(rest) {
                return true;
            }
            match rest.split_once('.') {
                Some((_, parent)) if parent.contains('.') => rest = parent,
                _ => return false,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifies_seed_scripts() {
        let c = TrigramClassifier::train(BUILTIN_SEEDS.iter().copied());
        assert_eq!(c.classify("আমরা নদীর তীরে বসে গান শুনছিলাম"), Some("bn"));
        assert_eq!(c.classify("we were sitting by the river listening to songs"), Some("en"));
        assert_eq!(c.classify("12345 ###"), None);
    }

    #[test]
    fn domain_suffix_matching() {
        let mut r = Resources::default();
        r.adult_domains.insert("example.com".into());
        assert!(r.is_adult_url("http://a.b.example.com/path"));
        assert!(r.is_adult_url("https://EXAMPLE.com"));
        assert!(!r.is_adult_url("https://notexample.com"));
        assert!(!r.is_adult_url("not a url"));
    }

    #[test]
    fn word_list_skips_comments() {
        let l = parse_word_list("# header\nfoo\n\n  bar  \n");
        assert_eq!(l.len(), 2);
        assert!(l.contains("bar"));
    }
}
