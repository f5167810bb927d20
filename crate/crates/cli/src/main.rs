use std::collections::HashSet;
use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use corpuskit::corpus::CorpusReader;
use corpuskit::dedup::DedupParams;
use corpuskit::filter::{calibrate, run_filter_files, FilterConfig, Side};
use corpuskit::lm::{self, LmConfig, NGramModel};
use corpuskit::ocr::{all_book_stats, OcrFilterConfig, DEFAULT_CONFIDENCE_CUTOFF};
use corpuskit::pipeline::{dedup_file, lm_filter_file, ocr_filter_file, run_plan, tpw_file, PipelinePlan};
use corpuskit::resources::{load_word_list, Resources};
use corpuskit::rules::{Metric, RuleSettings, Rules};
use corpuskit::tokenizer::{base_sidecar, merge_tokenizers, train_bpe, AnyTokenizer, ByteBpeModel, Tokenize, TrainerConfig};

#[derive(Parser)]
#[command(name = "corpuskit", version, about = "Corpus filtering, deduplication, LM ranking and BPE tokenizer extension")]
struct Cli {
    /// Seed for randomized stages (MinHash); overrides a plan's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Skip malformed input records instead of failing.
    #[arg(long, global = true)]
    lenient: bool,
    /// Directory with stopwords.txt, badwords.txt, adult_domains.txt and lang/*.txt.
    #[arg(long, global = true)]
    resources: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply quality-rule thresholds to a JSONL corpus.
    Filter {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also write rejected documents with their failing rule.
        #[arg(long)]
        rejected: Option<PathBuf>,
        #[command(flatten)]
        report: ReportArg,
    },
    /// Derive a threshold from a percentile of a metric over a corpus.
    Calibrate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        metric: Metric,
        #[arg(long)]
        percentile: f64,
        #[arg(long, default_value = "upper")]
        side: Side,
        /// Add the threshold to this filter config...
        #[arg(long)]
        config: Option<PathBuf>,
        /// ...and write the result here (default: stdout).
        #[arg(long, requires = "config")]
        output: Option<PathBuf>,
    },
    /// Remove near-duplicates with MinHash LSH.
    Dedup {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// TOML file with k, bands, rows, threshold, shingle_n, memory_budget.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        clusters: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        report: ReportArg,
    },
    /// Train a Kneser-Ney word n-gram model.
    LmTrain {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 0.75)]
        discount: f64,
        /// Also export the model in ARPA format.
        #[arg(long)]
        arpa: Option<PathBuf>,
    },
    /// Score documents: per-word log-probability and perplexity as JSONL.
    LmScore {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Keep the best-scoring fraction of documents.
    LmFilter {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        retain: f64,
        /// Rank separately within each value of this metadata key.
        #[arg(long)]
        per_group: Option<String>,
        #[command(flatten)]
        report: ReportArg,
    },
    /// Per-book page statistics for paginated OCR documents.
    OcrStats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_CONFIDENCE_CUTOFF)]
        cutoff: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Filter OCR books by page statistics and confident-word counts.
    OcrFilter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// TOML with min_words_per_page, min_sentences_per_page, min_coverage,
        /// confidence_cutoff, confidence_percentile, confidence_side.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        stats: Option<PathBuf>,
        #[command(flatten)]
        report: ReportArg,
    },
    /// Train a byte-level BPE model.
    TokTrain {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        vocab_size: usize,
        #[arg(long = "special")]
        specials: Vec<String>,
    },
    /// Extend a base model with an extension's new tokens.
    TokMerge {
        /// Base model (default: the 256 byte tokens).
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        extension: PathBuf,
        /// Merged model; the base is stored beside it as `<output>.base`.
        #[arg(long)]
        output: PathBuf,
    },
    /// Print token ids for text given as an argument or on stdin.
    TokEncode {
        #[command(flatten)]
        tok: TokArg,
        #[arg(long)]
        text: Option<String>,
    },
    /// Print the text for whitespace-separated ids given as an argument or on stdin.
    TokDecode {
        #[command(flatten)]
        tok: TokArg,
        #[arg(long)]
        ids: Option<String>,
    },
    /// Tokens per whitespace word over a corpus.
    TokEval {
        #[command(flatten)]
        tok: TokArg,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        report: ReportArg,
    },
    /// Execute a multi-stage TOML plan.
    Run {
        #[arg(long)]
        plan: PathBuf,
    },
}

#[derive(Args)]
struct ReportArg {
    /// Write the JSON report here instead of stdout.
    #[arg(long = "report")]
    path: Option<PathBuf>,
}

#[derive(Args)]
struct TokArg {
    #[arg(long)]
    tokenizer: PathBuf,
    /// Base model of a merged tokenizer (default: `<tokenizer>.base`).
    #[arg(long)]
    base: Option<PathBuf>,
}

impl TokArg {
    fn load(&self) -> Result<AnyTokenizer> {
        AnyTokenizer::load(&self.tokenizer, self.base.as_deref())
            .with_context(|| format!("loading tokenizer {}", self.tokenizer.display()))
    }
}

fn emit<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn output_stream(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn lexicon(path: Option<&Path>) -> Result<HashSet<String>> {
    Ok(match path {
        Some(p) => load_word_list(p)?,
        None => HashSet::new(),
    })
}

fn stdin_string() -> Result<String> {
    let mut s = String::new();
    io::stdin().read_to_string(&mut s)?;
    Ok(s)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let rules = || -> Result<Rules> {
        let resources = match &cli.resources {
            Some(dir) => Resources::load_dir(dir)?,
            None => Resources::builtin(),
        };
        Ok(Rules::new(RuleSettings::default(), resources))
    };
    let lenient = cli.lenient;
    match cli.command {
        Command::Filter { config, input, output, rejected, report } => {
            let mut config = FilterConfig::load(&config)?;
            config.lenient |= lenient;
            let r = run_filter_files(&rules()?, &config, &input, &output, rejected.as_deref())?;
            log::info!("kept {} of {} documents", r.pass_count, r.input_count);
            emit(&r, report.path.as_deref())
        }
        Command::Calibrate { input, metric, percentile, side, config, output } => {
            let t = calibrate(CorpusReader::open(&input, lenient)?, &rules()?, metric, percentile, side)?;
            match config {
                Some(path) => {
                    let mut cfg = FilterConfig::load(&path)?;
                    cfg.add_threshold(t)?;
                    let text = cfg.to_toml();
                    match output {
                        Some(o) => fs::write(&o, text).with_context(|| format!("writing {}", o.display()))?,
                        None => print!("{text}"),
                    }
                    Ok(())
                }
                None => emit(&t, None),
            }
        }
        Command::Dedup { input, output, config, clusters, threshold, report } => {
            let mut params: DedupParams = match &config {
                Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => DedupParams::default(),
            };
            if let Some(s) = cli.seed {
                params.seed = s;
            }
            if let Some(t) = threshold {
                params.threshold = t;
            }
            let s = dedup_file(&params, &input, &output, clusters.as_deref(), lenient)?;
            log::info!("kept {} of {} documents in {} clusters", s.kept, s.input_count, s.clusters);
            emit(&s, report.path.as_deref())
        }
        Command::LmTrain { input, output, order, discount, arpa } => {
            let model = lm::train(CorpusReader::open(&input, lenient)?, LmConfig { order, discount })?;
            model.save(&output)?;
            if let Some(p) = arpa {
                let mut w = BufWriter::new(fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?);
                model.write_arpa(&mut w)?;
                w.flush()?;
            }
            log::info!("trained order-{order} model over {} words", model.vocabulary().len());
            Ok(())
        }
        Command::LmScore { model, input, output } => {
            let model = NGramModel::load(&model)?;
            let docs = corpuskit::corpus::load_corpus(&input, lenient)?;
            let mut out = output_stream(output.as_deref())?;
            for (doc, score) in docs.iter().zip(lm::score_all(&model, &docs)) {
                match score {
                    Some(s) => serde_json::to_writer(&mut out, &s)?,
                    None => serde_json::to_writer(&mut out, &serde_json::json!({ "id": doc.id, "per_word_log_prob": null }))?,
                }
                out.write_all(b"\n")?;
            }
            out.flush()?;
            Ok(())
        }
        Command::LmFilter { model, input, output, retain, per_group, report } => {
            let model = NGramModel::load(&model)?;
            let s = lm_filter_file(&model, &input, &output, retain, per_group.as_deref(), lenient)?;
            log::info!("kept {} of {} documents", s.kept, s.input_count);
            emit(&s, report.path.as_deref())
        }
        Command::OcrStats { input, lexicon: lex, cutoff, output } => {
            let docs = corpuskit::corpus::load_corpus(&input, lenient)?;
            let stats = all_book_stats(&docs, &lexicon(lex.as_deref())?, cutoff)?;
            let mut out = output_stream(output.as_deref())?;
            for (doc, s) in docs.iter().zip(&stats) {
                let mut v = serde_json::to_value(s)?;
                v["id"] = serde_json::Value::String(doc.id.clone());
                serde_json::to_writer(&mut out, &v)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
            Ok(())
        }
        Command::OcrFilter { input, output, config, lexicon: lex, stats, report } => {
            let cfg: OcrFilterConfig = match &config {
                Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => OcrFilterConfig::default(),
            };
            let s = ocr_filter_file(&cfg, &lexicon(lex.as_deref())?, &input, &output, stats.as_deref(), lenient)?;
            log::info!("kept {} of {} books", s.kept, s.input_count);
            emit(&s, report.path.as_deref())
        }
        Command::TokTrain { input, output, vocab_size, specials } => {
            let cfg = TrainerConfig { specials, ..TrainerConfig::new(vocab_size) };
            let model = train_bpe(CorpusReader::open(&input, lenient)?, &cfg)?;
            model.save(&output)?;
            log::info!("learned {} merges", model.merges().len());
            Ok(())
        }
        Command::TokMerge { base, extension, output } => {
            let base = match base {
                Some(p) => ByteBpeModel::load(&p)?,
                None => ByteBpeModel::byte_identity(),
            };
            let merged = merge_tokenizers(&base, &ByteBpeModel::load(&extension)?);
            merged.save(&output)?;
            base.save(base_sidecar(&output))?;
            log::info!("added {} tokens; vocabulary {}", merged.extension_len(), merged.vocab_size());
            Ok(())
        }
        Command::TokEncode { tok, text } => {
            let tok = tok.load()?;
            let text = match text {
                Some(t) => t,
                None => stdin_string()?,
            };
            let ids: Vec<String> = tok.encode(&text).iter().map(u32::to_string).collect();
            println!("{}", ids.join(" "));
            Ok(())
        }
        Command::TokDecode { tok, ids } => {
            let tok = tok.load()?;
            let ids = match ids {
                Some(s) => s,
                None => stdin_string()?,
            };
            let ids: Vec<u32> = ids
                .split_whitespace()
                .map(|s| s.parse().with_context(|| format!("bad token id {s:?}")))
                .collect::<Result<_>>()?;
            io::stdout().lock().write_all(tok.decode(&ids)?.as_bytes())?;
            Ok(())
        }
        Command::TokEval { tok, corpus, report } => {
            let tok = tok.load()?;
            let r = tpw_file(&tok, &corpus, lenient)?;
            log::info!("{:.4} tokens per word over {} words", r.tpw, r.words);
            emit(&r, report.path.as_deref())
        }
        Command::Run { plan } => {
            let mut plan = PipelinePlan::load(&plan)?;
            if let Some(s) = cli.seed {
                plan.seed = s;
            }
            if lenient {
                plan.lenient = true;
            }
            let manifests = run_plan(&plan)?;
            if manifests.is_empty() {
                log::info!("plan has no stages");
            }
            for m in &manifests {
                log::info!("stage {} ({}) done: {:?}", m.stage, m.kind.name(), m.counts);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.downcast_ref::<corpuskit::Error>() {
                Some(k) => eprintln!("error [{}]: {e:#}", k.kind()),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}
