mod common;

use std::collections::{HashMap, HashSet};

use corpuskit::corpus::{normalize, CorpusReader, CorpusWriter, Document, Page};
use corpuskit::dedup::{deduplicate, find_clusters, shingles, DedupParams};
use corpuskit::filter::{calibrate, run_pipeline, FilterConfig, Side, Threshold};
use corpuskit::lm::{self, perplexity, rank_filter, LmConfig};
use corpuskit::ocr::{ocr_filter, OcrFilterConfig};
use corpuskit::rules::{language_fractions, Metric, Rules};
use corpuskit::Resources;
use rand::seq::SliceRandom;
use rand::Rng;

fn to_jsonl(docs: &[Document]) -> Vec<u8> {
    let mut buf = Vec::new();
    for d in docs {
        buf.extend(serde_json::to_vec(d).unwrap());
        buf.push(b'\n');
    }
    buf
}

fn jaccard(a: &HashSet<u64>, b: &HashSet<u64>) -> f64 {
    a.intersection(b).count() as f64 / a.union(b).count() as f64
}

#[test]
fn calibrated_bound_retains_nearest_rank_count() {
    let rules = Rules::default();
    let mut r = common::rng(21);
    for n in [1usize, 2, 7, 20, 99, 250] {
        let mut lengths: Vec<usize> = (1..=n).collect();
        lengths.shuffle(&mut r);
        let docs: Vec<Document> =
            lengths.iter().enumerate().map(|(i, &k)| Document::new(format!("d{i}"), "web", vec!["w"; k].join(" "))).collect();
        for p in [50.0, 90.0, 95.0, 99.0] {
            let expected = (p / 100.0 * n as f64).ceil() as usize;
            for side in [Side::Upper, Side::Lower] {
                let t = calibrate(docs.iter().cloned().map(Ok), &rules, Metric::WordCount, p, side).unwrap();
                let kept = lengths.iter().filter(|&&k| t.accepts(Some(k as f64))).count();
                assert_eq!(kept, expected, "n={n} p={p} side={side:?}");
            }
        }
    }
}

#[test]
fn engineered_half_of_corpus_fails() {
    let gen = common::BanglaGen::new(2000, 5);
    let mut r = common::rng(6);
    let mut docs = Vec::new();
    for i in 0..40 {
        let text = if i % 2 == 0 {
            gen.document(&mut r)
        } else {
            // bullet-heavy, unterminated lines
            (0..6).map(|_| format!("• {}", gen.word(&mut r))).collect::<Vec<_>>().join("\n")
        };
        docs.push(Document::new(format!("d{i:02}"), "web", text));
    }
    let config = FilterConfig::from_toml(
        "[thresholds]\nbullet_line_fraction = { max = 0.9 }\nterminal_punct_fraction = { min = 0.1 }\n",
    )
    .unwrap();
    let input = to_jsonl(&docs);
    let mut writer = CorpusWriter::new(Vec::new());
    let report = run_pipeline::<_, _, std::io::Sink>(
        CorpusReader::new(&input[..], false),
        &Rules::default(),
        &config,
        &mut writer,
        None,
    )
    .unwrap();
    assert_eq!(report.input_count, 40);
    assert_eq!(report.pass_count, 20);
    assert_eq!(report.rejections["bullet_line_fraction"], 20);
}

#[test]
fn hundred_docs_with_ten_duplicate_pairs_keep_ninety() {
    let gen = common::BanglaGen::new(3000, 7);
    let mut r = common::rng(8);
    let mut docs: Vec<Document> =
        (0..90).map(|i| Document::new(format!("d{i:03}"), "web", gen.document(&mut r) + " " + &gen.document(&mut r))).collect();
    let mut pairs = Vec::new();
    for j in 0..10 {
        let src = j * 9;
        // near-duplicate: one word replaced
        let mut words: Vec<&str> = docs[src].text.split(' ').collect();
        let k = words.len() / 2;
        words[k] = "পরিবর্তন";
        let id = format!("e{j:03}");
        pairs.push((docs[src].id.clone(), id.clone()));
        docs.push(Document::new(id, "web", words.join(" ")));
    }
    docs.shuffle(&mut r);

    // exact-Jaccard oracle: only the constructed pairs are above threshold
    let params = DedupParams::default();
    let sets: Vec<HashSet<u64>> = docs.iter().map(|d| shingles(&normalize(&d.text), params.shingle_n)).collect();
    let index: HashMap<&str, usize> = docs.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
    let mut above = 0;
    for i in 0..docs.len() {
        for j in i + 1..docs.len() {
            if jaccard(&sets[i], &sets[j]) >= params.threshold {
                above += 1;
            }
        }
    }
    assert_eq!(above, 10);
    for (a, b) in &pairs {
        assert!(jaccard(&sets[index[a.as_str()]], &sets[index[b.as_str()]]) >= 0.8);
    }

    let clusters = find_clusters(docs.iter().cloned().map(Ok), &params).unwrap();
    assert_eq!(clusters.len(), 10);
    let mut writer = CorpusWriter::new(Vec::new());
    let kept = deduplicate(docs.iter().cloned().map(Ok), &clusters, &mut writer).unwrap();
    assert_eq!(kept, 90);
    // "d…" sorts before "e…", so every original survives
    let dropped = clusters.dropped();
    assert!(pairs.iter().all(|(a, b)| !dropped.contains(a.as_str()) && dropped.contains(b.as_str())));
}

#[test]
fn distinct_documents_form_no_clusters() {
    let gen = common::BanglaGen::new(3000, 9);
    let mut r = common::rng(10);
    let docs: Vec<Document> = (0..200).map(|i| Document::new(format!("d{i}"), "web", gen.document(&mut r))).collect();
    let clusters = find_clusters(docs.into_iter().map(Ok), &DedupParams::default()).unwrap();
    assert!(clusters.is_empty());
}

fn markov_docs(gen: &common::MarkovGen, r: &mut impl Rng, n: usize, prefix: &str) -> Vec<Document> {
    (0..n).map(|i| Document::new(format!("{prefix}{i:04}"), "web", gen.document(r, 4))).collect()
}

#[test]
fn shuffled_text_scores_worse() {
    let gen = common::MarkovGen::new(400, 3, 12);
    let mut r = common::rng(13);
    let train_docs = markov_docs(&gen, &mut r, 600, "t");
    let model = lm::train(train_docs.iter().cloned().map(Ok), LmConfig::default()).unwrap();
    let mut wins = 0;
    for doc in train_docs.iter().take(20) {
        let shuffled = Document::new("s", "web", common::scramble(&doc.text, &mut r));
        let a = perplexity(&model, doc).unwrap();
        let b = perplexity(&model, &shuffled).unwrap();
        wins += (a.perplexity < b.perplexity) as usize;
    }
    assert!(wins >= 19, "only {wins}/20");
}

#[test]
fn perplexity_equals_forward_product() {
    let gen = common::MarkovGen::new(100, 3, 14);
    let mut r = common::rng(15);
    let train_docs = markov_docs(&gen, &mut r, 50, "t");
    let model = lm::train(train_docs.iter().cloned().map(Ok), LmConfig::default()).unwrap();
    let sentence = gen.sentence(&mut r);
    let words: Vec<&str> = sentence.split(' ').collect();
    let mut seq = vec!["<s>", "<s>"];
    seq.extend(&words);
    seq.push("</s>");
    let mut product = 1.0f64;
    for i in 2..seq.len() {
        product *= model.prob(&seq[i - 2..i], seq[i]);
    }
    let n = (seq.len() - 2) as f64;
    let expected = product.powf(-1.0 / n);
    let got = perplexity(&model, &Document::new("x", "web", sentence.clone())).unwrap();
    assert!((got.perplexity - expected).abs() < 1e-9 * expected, "{} vs {}", got.perplexity, expected);
    // a duplicated document has the same per-word score
    let twice = perplexity(&model, &Document::new("y", "web", format!("{sentence} {sentence}"))).unwrap();
    assert!((twice.per_word_log_prob - got.per_word_log_prob).abs() < 1e-12);
}

/// Interpolated Kneser-Ney written out directly from n-gram type counts.
struct OracleKn {
    order: usize,
    d: f64,
    vocab: usize,
    grams: Vec<HashMap<Vec<String>, u64>>,
}

impl OracleKn {
    fn new(sentences: &[Vec<String>], order: usize, d: f64) -> Self {
        let mut words: HashSet<&str> = HashSet::new();
        let mut top: HashMap<Vec<String>, u64> = HashMap::new();
        for s in sentences {
            words.extend(s.iter().map(String::as_str));
            let mut seq: Vec<String> = vec!["<s>".into(); order - 1];
            seq.extend(s.iter().cloned());
            seq.push("</s>".into());
            for w in seq.windows(order) {
                *top.entry(w.to_vec()).or_default() += 1;
            }
        }
        let mut grams = vec![HashMap::new(); order];
        grams[order - 1] = top;
        for m in (1..order).rev() {
            let mut left: HashMap<Vec<String>, HashSet<String>> = HashMap::new();
            for g in grams[m].keys() {
                left.entry(g[1..].to_vec()).or_default().insert(g[0].clone());
            }
            grams[m - 1] = left.into_iter().map(|(k, v)| (k, v.len() as u64)).collect();
        }
        // vocabulary: seen words plus <s>, </s>, <unk>
        OracleKn { order, d, vocab: words.len() + 3, grams }
    }

    fn p(&self, ctx: &[&str], w: &str) -> f64 {
        let ctx = &ctx[ctx.len().saturating_sub(self.order - 1)..];
        self.p_at(ctx, w)
    }

    fn p_at(&self, ctx: &[&str], w: &str) -> f64 {
        let base = 1.0 / (self.vocab - 1) as f64;
        let lower = if ctx.is_empty() { base } else { self.p_at(&ctx[1..], w) };
        let table = &self.grams[ctx.len()];
        let (mut total, mut types, mut c) = (0u64, 0u64, 0u64);
        for (g, &n) in table {
            if g[..ctx.len()].iter().map(String::as_str).eq(ctx.iter().copied()) {
                total += n;
                types += 1;
                if g[ctx.len()] == w {
                    c = n;
                }
            }
        }
        if total == 0 {
            return lower;
        }
        ((c as f64 - self.d).max(0.0) + self.d * types as f64 * lower) / total as f64
    }
}

#[test]
fn kneser_ney_matches_oracle() {
    let texts = ["a b c a b.", "b c d.", "a b d e a.", "c c b a."];
    let docs: Vec<Document> = texts.iter().enumerate().map(|(i, t)| Document::new(format!("d{i}"), "w", *t)).collect();
    let sentences: Vec<Vec<String>> = texts
        .iter()
        .map(|t| t.trim_end_matches('.').split(' ').map(|w| w.to_owned()).collect::<Vec<_>>())
        .map(|mut s: Vec<String>| {
            // the model keeps the terminator on the last word
            let last = s.pop().unwrap() + ".";
            s.push(last);
            s
        })
        .collect();
    for order in 1..=3 {
        let model = lm::train(docs.iter().cloned().map(Ok), LmConfig { order, discount: 0.75 }).unwrap();
        let oracle = OracleKn::new(&sentences, order, 0.75);
        let vocab: Vec<&str> = model.vocabulary().iter().map(String::as_str).collect();
        let mut contexts: Vec<Vec<&str>> = vec![vec![]];
        for _ in 1..order {
            contexts = contexts.iter().flat_map(|c| vocab.iter().map(move |w| [c.clone(), vec![*w]].concat())).collect();
        }
        for ctx in &contexts {
            for w in model.predictable() {
                let (a, b) = (model.prob(ctx, w), oracle.p(ctx, w));
                assert!((a - b).abs() < 1e-12, "order {order} p({w}|{ctx:?}): {a} vs {b}");
            }
        }
    }
}

fn char_scramble(text: &str, r: &mut impl Rng) -> String {
    text.split(' ')
        .map(|w| {
            let mut cs: Vec<char> = w.chars().collect();
            cs.shuffle(r);
            cs.into_iter().collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn rank_filter_prefers_clean_documents() {
    let gen = common::MarkovGen::new(300, 3, 16);
    let mut r = common::rng(17);
    let train_docs = markov_docs(&gen, &mut r, 400, "t");
    let model = lm::train(train_docs.into_iter().map(Ok), LmConfig::default()).unwrap();
    let mut docs = markov_docs(&gen, &mut r, 50, "clean");
    for i in 0..50 {
        let text = char_scramble(&gen.document(&mut r, 4), &mut r);
        docs.push(Document::new(format!("noisy{i:04}"), "web", text));
    }
    docs.shuffle(&mut r);
    let kept = rank_filter(docs.clone(), &model, 0.5, None).unwrap().kept;
    assert_eq!(kept.len(), 50);
    let clean = kept.iter().filter(|d| d.id.starts_with("clean")).count();
    assert!(clean >= 45, "{clean} clean of 50 kept");
    let all = rank_filter(docs.clone(), &model, 1.0, None).unwrap().kept;
    assert_eq!(all, docs);
}

#[test]
fn per_group_ranking_keeps_fraction_of_each_group() {
    let gen = common::MarkovGen::new(200, 3, 18);
    let mut r = common::rng(19);
    let model = lm::train(markov_docs(&gen, &mut r, 200, "t").into_iter().map(Ok), LmConfig::default()).unwrap();
    let mut docs = markov_docs(&gen, &mut r, 30, "a");
    for d in docs.iter_mut().take(10) {
        d.meta.insert("source_book".into(), "x".into());
    }
    for d in docs.iter_mut().skip(10) {
        d.meta.insert("source_book".into(), "y".into());
    }
    let out = rank_filter(docs, &model, 0.5, Some("source_book")).unwrap();
    assert_eq!(out.kept.iter().filter(|d| d.meta["source_book"] == "x").count(), 5);
    assert_eq!(out.kept.iter().filter(|d| d.meta["source_book"] == "y").count(), 10);
    assert_eq!(out.group_thresholds.len(), 2);
}

fn book(id: &str, confident: usize, total: usize) -> Document {
    let words: Vec<(String, f64)> =
        (0..total).map(|i| (format!("w{i}"), if i < confident { 0.95 } else { 0.5 })).collect();
    let text = words.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" ") + ".";
    Document::paginated(id, "book", vec![Page { index: 0, text, word_confidences: Some(words) }])
}

#[test]
fn ocr_percentile_rule_removes_bottom_five_percent() {
    let mut r = common::rng(20);
    let mut counts: Vec<usize> = (1..=100).collect();
    counts.shuffle(&mut r);
    let mut docs: Vec<Document> = counts.iter().enumerate().map(|(i, &c)| book(&format!("b{i:03}"), c, 120)).collect();
    // a book without confidence data is exempt from the rule
    docs.push(Document::paginated("plain", "book", vec![Page { index: 0, text: "আমি ভাত খাই।".into(), word_confidences: None }]));
    let config = OcrFilterConfig { confidence_percentile: Some(95.0), ..Default::default() };
    let out = ocr_filter(docs, &HashSet::new(), &config).unwrap();
    assert_eq!(out.kept.len(), 96);
    assert_eq!(out.confidence_threshold, Some(Threshold::new("high_confidence_words", Some(6.0), None).unwrap()));
    let kept: HashSet<&str> = out.kept.iter().map(|d| d.id.as_str()).collect();
    for (i, &c) in counts.iter().enumerate() {
        assert_eq!(kept.contains(format!("b{i:03}").as_str()), c > 5, "book with {c} confident words");
    }
    assert!(kept.contains("plain"));
}

#[test]
fn ocr_joint_filter_removes_about_half() {
    let lexicon: HashSet<String> = ["আমি", "ভাত", "খাই", "বই", "পড়ি"].iter().map(|s| s.to_string()).collect();
    let mut docs = Vec::new();
    for i in 0..20 {
        let good = i % 2 == 0;
        let text = if good { "আমি ভাত খাই। আমি বই পড়ি।" } else { "ঞ্চ ৠৡ ঃঃ" };
        let pages = (0..3).map(|p| Page { index: p, text: text.into(), word_confidences: None }).collect();
        docs.push(Document::paginated(format!("b{i:02}"), "book", pages));
    }
    let config = OcrFilterConfig { min_coverage: 0.5, min_sentences_per_page: 1.0, ..Default::default() };
    let out = ocr_filter(docs, &lexicon, &config).unwrap();
    assert_eq!(out.kept.len(), 10);
}

#[test]
fn language_fractions_of_pure_and_mixed_text() {
    let res = Resources::builtin();
    let bn = "বাংলা ভাষা দক্ষিণ এশিয়ার একটি সমৃদ্ধ ভাষা। এই ভাষায় অনেক কবিতা গান ও গল্প লেখা হয়েছে।";
    let en = "The river flows slowly past the old mill, and children play along its banks each summer.";
    let pure = language_fractions(&normalize(bn), &res).unwrap();
    assert_eq!(pure.get("bn").copied(), Some(1.0));
    // equal non-whitespace character counts on separate lines
    let bn_chars = bn.chars().filter(|c| !c.is_whitespace()).count();
    let en_line: String = en.chars().cycle().take(bn.chars().count() * 2).collect::<String>();
    let mut en_trim = String::new();
    let mut n = 0;
    for c in en_line.chars() {
        if n == bn_chars {
            break;
        }
        if !c.is_whitespace() {
            n += 1;
        }
        en_trim.push(c);
    }
    let mixed = language_fractions(&normalize(&format!("{bn}\n{en_trim}")), &res).unwrap();
    let share = mixed.get("bn").copied().unwrap_or(0.0);
    assert!((share - 0.5).abs() <= 0.1, "bn share {share}");
    assert!(language_fractions(&normalize(""), &res).unwrap().is_empty());
}
