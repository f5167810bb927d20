//! Document model, text normalization and JSONL corpus I/O.
//!
//! Every other stage consumes [`Document`]s read through [`CorpusReader`] and
//! measures them through a [`NormalizedView`].

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, PathContext, Result};

/// Joins page texts into a document text.
pub const PAGE_SEPARATOR: char = '\u{000C}';

/// Default sentence terminators, including the Bangla danda.
pub const DEFAULT_TERMINALS: &[char] = &['.', '!', '?', '।'];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub index: usize,
    pub text: String,
    pub word_confidences: Option<Vec<(String, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source: String,
    pub url: Option<String>,
    pub text: String,
    pub pages: Option<Vec<Page>>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, source: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            source: source.into(),
            url: None,
            text: text.into(),
            pages: None,
            meta: BTreeMap::new(),
        }
    }

    /// Builds a paginated document; `text` is derived from the pages.
    pub fn paginated(id: impl Into<String>, source: impl Into<String>, pages: Vec<Page>) -> Self {
        let text = join_pages(&pages);
        Document {
            id: id.into(),
            source: source.into(),
            url: None,
            text,
            pages: Some(pages),
            meta: BTreeMap::new(),
        }
    }

    pub fn with_url(mut self, url: impl Into<String>) -> Self {
        self.url = Some(url.into());
        self
    }

    /// Checks the per-document invariants (corpus-level id uniqueness is
    /// checked by the reader).
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if let Some(pages) = &self.pages {
            for (expected, page) in pages.iter().enumerate() {
                if page.index != expected {
                    return Err(format!("page index {} out of sequence (expected {expected})", page.index));
                }
                if let Some(confs) = &page.word_confidences {
                    if let Some((w, c)) = confs.iter().find(|(_, c)| !(0.0..=1.0).contains(c)) {
                        return Err(format!("confidence {c} for {w:?} outside [0,1]"));
                    }
                }
            }
            if join_pages(pages) != self.text {
                return Err("text does not match joined pages".into());
            }
        }
        Ok(())
    }
}

pub fn join_pages(pages: &[Page]) -> String {
    let mut out = String::new();
    for (i, p) in pages.iter().enumerate() {
        if i > 0 {
            out.push(PAGE_SEPARATOR);
        }
        out.push_str(&p.text);
    }
    out
}

/// Splits text into word tokens.
pub trait WordSegmenter: Send + Sync {
    fn words<'a>(&self, text: &'a str) -> Vec<&'a str>;
}

/// Maximal runs of non-whitespace code points.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceSegmenter;

impl WordSegmenter for WhitespaceSegmenter {
    fn words<'a>(&self, text: &'a str) -> Vec<&'a str> {
        text.split_whitespace().collect()
    }
}

#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    terminals: Vec<char>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        SentenceSplitter { terminals: DEFAULT_TERMINALS.to_vec() }
    }
}

impl SentenceSplitter {
    pub fn new(terminals: impl IntoIterator<Item = char>) -> Self {
        SentenceSplitter { terminals: terminals.into_iter().collect() }
    }

    fn is_terminal(&self, c: char) -> bool {
        self.terminals.contains(&c)
    }

    /// Splits after each run of terminators, keeping the run attached to the
    /// preceding text. Surrounding whitespace is trimmed and empty pieces are
    /// dropped.
    pub fn split<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let mut out = Vec::new();
        let mut start = 0;
        let mut chars = text.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            if !self.is_terminal(c) {
                continue;
            }
            let mut end = i + c.len_utf8();
            while let Some(&(j, d)) = chars.peek() {
                if !self.is_terminal(d) {
                    break;
                }
                end = j + d.len_utf8();
                chars.next();
            }
            push_trimmed(&mut out, &text[start..end]);
            start = end;
        }
        push_trimmed(&mut out, &text[start..]);
        out
    }
}

fn push_trimmed<'a>(out: &mut Vec<&'a str>, piece: &'a str) {
    let t = piece.trim();
    if !t.is_empty() && t.chars().any(|c| !c.is_whitespace()) {
        out.push(t);
    }
}

/// Sentence segmentation with the default terminal set.
pub fn segment_sentences(text: &str) -> Vec<String> {
    SentenceSplitter::default().split(text).into_iter().map(str::to_owned).collect()
}

/// NFC-normalized text with its line, word and sentence segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedView {
    pub text: String,
    pub lines: Vec<String>,
    pub words: Vec<String>,
    pub sentences: Vec<String>,
}

impl NormalizedView {
    pub fn word_count(&self) -> usize {
        self.words.len()
    }
}

/// Normalization with pluggable word and sentence segmentation.
pub struct Normalizer {
    segmenter: Box<dyn WordSegmenter>,
    splitter: SentenceSplitter,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer { segmenter: Box::new(WhitespaceSegmenter), splitter: SentenceSplitter::default() }
    }
}

impl Normalizer {
    pub fn new(segmenter: Box<dyn WordSegmenter>, splitter: SentenceSplitter) -> Self {
        Normalizer { segmenter, splitter }
    }

    pub fn view(&self, text: &str) -> NormalizedView {
        let text: String = text.nfc().collect();
        let lines = text.split('\n').map(str::to_owned).collect();
        let words = self.segmenter.words(&text).into_iter().map(str::to_owned).collect();
        let sentences = self.splitter.split(&text).into_iter().map(str::to_owned).collect();
        NormalizedView { text, lines, words, sentences }
    }

    pub fn view_bytes(&self, bytes: &[u8]) -> Result<NormalizedView> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Ingest { offset: e.valid_up_to() })?;
        Ok(self.view(text))
    }

    pub fn words<'a>(&self, text: &'a str) -> Vec<&'a str> {
        self.segmenter.words(text)
    }

    pub fn sentences<'a>(&self, text: &'a str) -> Vec<&'a str> {
        self.splitter.split(text)
    }
}

/// Normalizes with the default segmenters.
pub fn normalize(text: &str) -> NormalizedView {
    Normalizer::default().view(text)
}

/// Normalizes raw bytes, rejecting invalid UTF-8.
pub fn normalize_bytes(bytes: &[u8]) -> Result<NormalizedView> {
    Normalizer::default().view_bytes(bytes)
}

/// Streaming JSONL reader. In lenient mode malformed lines are skipped and
/// counted instead of ending the stream.
pub struct CorpusReader<R> {
    input: R,
    path: Option<PathBuf>,
    line_no: usize,
    offset: usize,
    lenient: bool,
    skipped: usize,
    seen: HashSet<String>,
    buf: Vec<u8>,
    failed: bool,
}

impl CorpusReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, lenient: bool) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).at_path(path)?;
        let mut reader = CorpusReader::new(BufReader::with_capacity(1 << 20, file), lenient);
        reader.path = Some(path.to_path_buf());
        Ok(reader)
    }
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(input: R, lenient: bool) -> Self {
        CorpusReader {
            input,
            path: None,
            line_no: 0,
            offset: 0,
            lenient,
            skipped: 0,
            seen: HashSet::new(),
            buf: Vec::new(),
            failed: false,
        }
    }

    /// Number of malformed lines skipped so far (lenient mode only).
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    fn parse_line(&mut self) -> Result<Option<Document>> {
        let mut line: &[u8] = &self.buf;
        if line.last() == Some(&b'\n') {
            line = &line[..line.len() - 1];
        }
        if line.iter().all(u8::is_ascii_whitespace) {
            return Ok(None);
        }
        let text = std::str::from_utf8(line).map_err(|e| Error::Ingest { offset: self.offset + e.valid_up_to() })?;
        let doc: Document = serde_json::from_str(text)
            .map_err(|e| Error::Record { line: self.line_no, message: e.to_string() })?;
        doc.validate().map_err(|message| Error::Record { line: self.line_no, message })?;
        if !self.seen.insert(doc.id.clone()) {
            return Err(Error::Record { line: self.line_no, message: format!("duplicate id {:?}", doc.id) });
        }
        Ok(Some(doc))
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.buf.clear();
            let n = match self.input.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(n) => n,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(match &self.path {
                        Some(p) => Error::Path { path: p.clone(), source: e },
                        None => Error::Io(e),
                    }));
                }
            };
            self.line_no += 1;
            let parsed = self.parse_line();
            self.offset += n;
            match parsed {
                Ok(Some(doc)) => return Some(Ok(doc)),
                Ok(None) => continue,
                Err(e @ (Error::Record { .. } | Error::Ingest { .. })) if self.lenient => {
                    log::warn!("skipping line {}: {e}", self.line_no);
                    self.skipped += 1;
                }
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

/// Opens a corpus file for streaming.
pub fn read_corpus(path: impl AsRef<Path>, lenient: bool) -> Result<CorpusReader<BufReader<File>>> {
    CorpusReader::open(path, lenient)
}

/// JSONL writer, one compact object per line.
pub struct CorpusWriter<W: Write> {
    out: W,
    count: usize,
}

impl CorpusWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::create(path).at_path(path)?;
        Ok(CorpusWriter::new(BufWriter::with_capacity(1 << 20, file)))
    }
}

impl<W: Write> CorpusWriter<W> {
    pub fn new(out: W) -> Self {
        CorpusWriter { out, count: 0 }
    }

    pub fn write(&mut self, doc: &Document) -> Result<()> {
        write_json_line(&mut self.out, doc)?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(mut self) -> Result<usize> {
        self.out.flush()?;
        Ok(self.count)
    }
}

pub(crate) fn write_json_line<W: Write, T: Serialize + ?Sized>(out: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Writes every document in `docs` to `path`, returning the count written.
pub fn write_corpus<'a>(path: impl AsRef<Path>, docs: impl IntoIterator<Item = &'a Document>) -> Result<usize> {
    let mut w = CorpusWriter::create(path)?;
    for d in docs {
        w.write(d)?;
    }
    w.finish()
}

/// Reads a whole corpus into memory.
pub fn load_corpus(path: impl AsRef<Path>, lenient: bool) -> Result<Vec<Document>> {
    read_corpus(path, lenient)?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_words_and_lines() {
        let v = normalize("ab  cd\nef");
        assert_eq!(v.lines, vec!["ab  cd", "ef"]);
        assert_eq!(v.words, vec!["ab", "cd", "ef"]);
    }

    #[test]
    fn empty_text() {
        let v = normalize("");
        assert_eq!(v.lines, vec![""]);
        assert!(v.words.is_empty());
        assert!(v.sentences.is_empty());
    }

    #[test]
    fn invalid_utf8_names_offset() {
        let err = normalize_bytes(b"abc\xffdef").unwrap_err();
        assert!(matches!(err, Error::Ingest { offset: 3 }));
    }

    #[test]
    fn sentences_with_danda() {
        assert_eq!(segment_sentences("ক খ। গ ঘ?"), vec!["ক খ।", "গ ঘ?"]);
        assert_eq!(segment_sentences("abc"), vec!["abc"]);
        assert_eq!(segment_sentences("a. b. c.").len(), 3);
        assert_eq!(segment_sentences("Wait!!! What?"), vec!["Wait!!!", "What?"]);
        assert!(segment_sentences("  ").is_empty());
    }

    #[test]
    fn custom_terminal_set() {
        let s = SentenceSplitter::new([';']);
        assert_eq!(s.split("a; b. c"), vec!["a;", "b. c"]);
    }

    #[test]
    fn decomposed_vowel_sign_is_composed() {
        // BENGALI LETTER KA + VOWEL SIGN E + AU LENGTH MARK composes to VOWEL SIGN AU
        let decomposed = "\u{0995}\u{09C7}\u{09D7} খ";
        let v = normalize(decomposed);
        assert_eq!(v.text, "\u{0995}\u{09CC} খ");
        assert_ne!(v.text.len(), decomposed.len());
        assert_eq!(v.words.len(), 2);
    }

    #[test]
    fn paginated_text_joins_with_form_feed() {
        let pages = vec![
            Page { index: 0, text: "one".into(), word_confidences: None },
            Page { index: 1, text: "two".into(), word_confidences: Some(vec![("two".into(), 0.5)]) },
        ];
        let d = Document::paginated("b1", "book", pages);
        assert_eq!(d.text, "one\u{000C}two");
        assert!(d.validate().is_ok());

        let mut bad = d.clone();
        bad.pages.as_mut().unwrap()[1].index = 3;
        assert!(bad.validate().is_err());
        let mut bad = d;
        bad.pages.as_mut().unwrap()[1].word_confidences = Some(vec![("x".into(), 1.5)]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn strict_reader_reports_line_number() {
        let data = "{\"id\":\"a\",\"source\":\"web\",\"url\":null,\"text\":\"x\",\"pages\":null,\"meta\":{}}\n{oops\n";
        let mut r = CorpusReader::new(data.as_bytes(), false);
        assert!(r.next().unwrap().is_ok());
        match r.next().unwrap() {
            Err(Error::Record { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(r.next().is_none());
    }

    #[test]
    fn lenient_reader_skips_and_counts() {
        let good = |id: &str| format!("{{\"id\":\"{id}\",\"source\":\"web\",\"url\":null,\"text\":\"x\",\"pages\":null,\"meta\":{{}}}}\n");
        let data = format!("{}not json\n{}{}", good("a"), good("b"), good("a"));
        let mut r = CorpusReader::new(data.as_bytes(), true);
        let ids: Vec<String> = r.by_ref().map(|d| d.unwrap().id).collect();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(r.skipped(), 2);
    }
}
