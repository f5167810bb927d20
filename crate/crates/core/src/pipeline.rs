//! Multi-stage plans. Each stage reads the previous corpus, writes its own
//! outputs under the plan's output directory, and leaves a manifest listing
//! input and config hashes, the seed and record counts.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, CorpusReader, CorpusWriter};
use crate::dedup::{deduplicate, find_clusters, DedupParams};
use crate::error::{Error, PathContext, Result};
use crate::filter::{run_filter_files, FilterConfig};
use crate::io::{commit_outputs, sha256_file};
use crate::lm::{rank_filter, train, LmConfig, NGramModel};
use crate::ocr::{ocr_filter, OcrFilterConfig};
use crate::resources::{load_word_list, Resources};
use crate::rules::{RuleSettings, Rules};
use crate::tokenizer::{
    base_sidecar, merge_tokenizers, tokens_per_word, train_bpe, AnyTokenizer, ByteBpeModel, TrainerConfig, TpwReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    Filter,
    Dedup,
    LmFilter,
    OcrFilter,
    TokTrain,
    TokMerge,
    TokEval,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::Filter => "filter",
            StageKind::Dedup => "dedup",
            StageKind::LmFilter => "lm-filter",
            StageKind::OcrFilter => "ocr-filter",
            StageKind::TokTrain => "tok-train",
            StageKind::TokMerge => "tok-merge",
            StageKind::TokEval => "tok-eval",
        }
    }

    /// Whether the stage produces a new corpus for the stages after it.
    pub fn transforms_corpus(self) -> bool {
        matches!(self, StageKind::Filter | StageKind::Dedup | StageKind::LmFilter | StageKind::OcrFilter)
    }

    fn needs_config(self) -> bool {
        matches!(self, StageKind::Filter | StageKind::LmFilter | StageKind::TokTrain)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub kind: StageKind,
    #[serde(default)]
    pub config: Option<PathBuf>,
    /// Overrides the corpus produced by the previous stage.
    #[serde(default)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelinePlan {
    #[serde(default)]
    pub seed: u64,
    pub input: PathBuf,
    pub output_dir: PathBuf,
    /// Directory with stopwords.txt, badwords.txt, adult_domains.txt and
    /// lang/*.txt; the bundled lists are used when absent.
    #[serde(default)]
    pub resources: Option<PathBuf>,
    #[serde(default)]
    pub lenient: bool,
    #[serde(default, rename = "stage")]
    pub stages: Vec<StageSpec>,
}

impl PipelinePlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a plan, resolving relative paths against the plan's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut plan = Self::from_toml(&fs::read_to_string(path).at_path(path)?)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut plan.input);
        fix(&mut plan.output_dir);
        if let Some(r) = plan.resources.as_mut() {
            fix(r);
        }
        for s in &mut plan.stages {
            if let Some(c) = s.config.as_mut() {
                fix(c);
            }
            if let Some(i) = s.input.as_mut() {
                fix(i);
            }
        }
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.stages.iter().enumerate() {
            let label = format!("{} ({})", i + 1, s.kind.name());
            match &s.config {
                Some(c) if !c.is_file() => {
                    return Err(Error::Config(format!("stage {label}: config {} does not exist", c.display())))
                }
                None if s.kind.needs_config() => {
                    return Err(Error::Config(format!("stage {label}: a config file is required")))
                }
                _ => {}
            }
        }
        if let Some(r) = &self.resources {
            if !r.is_dir() {
                return Err(Error::Config(format!("resource directory {} does not exist", r.display())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce one stage's outputs. Contains no timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: usize,
    pub kind: StageKind,
    pub seed: u64,
    pub inputs: Vec<FileRef>,
    pub config: Option<FileRef>,
    pub outputs: Vec<FileRef>,
    pub counts: BTreeMap<String, u64>,
}

struct Paths<'a> {
    out_dir: &'a Path,
}

impl Paths<'_> {
    fn file(&self, stage: usize, kind: StageKind, ext: &str) -> PathBuf {
        self.out_dir.join(format!("{stage:02}-{}.{ext}", kind.name()))
    }

    /// Stage outputs are named relative to the output directory so that a
    /// plan rerun elsewhere yields the same manifests.
    fn file_ref(&self, path: &Path) -> Result<FileRef> {
        let shown = path.strip_prefix(self.out_dir).unwrap_or(path);
        Ok(FileRef { path: shown.display().to_string(), sha256: sha256_file(path)? })
    }
}

/// Result of a stage before its manifest is written.
struct StageOutput {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    counts: BTreeMap<String, u64>,
    corpus: Option<PathBuf>,
    tokenizer: Option<PathBuf>,
}

struct Ctx<'a> {
    plan: &'a PipelinePlan,
    rules: &'a Rules,
    paths: Paths<'a>,
    corpus: PathBuf,
    tokenizer: Option<PathBuf>,
    tok_train: Option<PathBuf>,
}

/// Runs every stage in order. A failing stage's partial outputs are removed;
/// earlier stages' outputs stay in place.
pub fn run_plan(plan: &PipelinePlan) -> Result<Vec<Manifest>> {
    plan.validate()?;
    if plan.stages.is_empty() {
        return Ok(Vec::new());
    }
    fs::create_dir_all(&plan.output_dir).at_path(&plan.output_dir)?;
    let resources = match &plan.resources {
        Some(dir) => Resources::load_dir(dir)?,
        None => Resources::builtin(),
    };
    let rules = Rules::new(RuleSettings::default(), resources);
    let mut ctx = Ctx {
        plan,
        rules: &rules,
        paths: Paths { out_dir: &plan.output_dir },
        corpus: plan.input.clone(),
        tokenizer: None,
        tok_train: None,
    };
    let mut manifests = Vec::new();
    for (i, spec) in plan.stages.iter().enumerate() {
        let n = i + 1;
        log::info!("stage {n}: {}", spec.kind.name());
        let wrap = |e: Error| Error::Stage { stage: format!("{n} ({})", spec.kind.name()), source: Box::new(e) };
        match run_stage(&mut ctx, n, spec) {
            Ok(m) => manifests.push(m),
            Err(e) => {
                remove_stage_files(&plan.output_dir, n, spec.kind);
                return Err(wrap(e));
            }
        }
    }
    Ok(manifests)
}

/// Deletes whatever a failed stage managed to commit before failing.
fn remove_stage_files(out_dir: &Path, n: usize, kind: StageKind) {
    let prefix = format!("{n:02}-{}.", kind.name());
    if let Ok(entries) = fs::read_dir(out_dir) {
        for e in entries.flatten() {
            if e.file_name().to_string_lossy().starts_with(&prefix) {
                let _ = fs::remove_file(e.path());
            }
        }
    }
}

fn run_stage(ctx: &mut Ctx, n: usize, spec: &StageSpec) -> Result<Manifest> {
    let input = spec.input.clone().unwrap_or_else(|| ctx.corpus.clone());
    let out = match spec.kind {
        StageKind::Filter => stage_filter(ctx, n, spec, &input)?,
        StageKind::Dedup => stage_dedup(ctx, n, spec, &input)?,
        StageKind::LmFilter => stage_lm_filter(ctx, n, spec, &input)?,
        StageKind::OcrFilter => stage_ocr_filter(ctx, n, spec, &input)?,
        StageKind::TokTrain => stage_tok_train(ctx, n, spec, &input)?,
        StageKind::TokMerge => stage_tok_merge(ctx, n, spec)?,
        StageKind::TokEval => stage_tok_eval(ctx, n, spec, &input)?,
    };
    if let Some(c) = &out.corpus {
        ctx.corpus = c.clone();
    }
    if let Some(t) = &out.tokenizer {
        ctx.tokenizer = Some(t.clone());
        if spec.kind == StageKind::TokTrain {
            ctx.tok_train = Some(t.clone());
        }
    }
    let manifest = Manifest {
        stage: n,
        kind: spec.kind,
        seed: ctx.plan.seed,
        inputs: out.inputs.iter().map(|p| ctx.paths.file_ref(p)).collect::<Result<_>>()?,
        config: spec.config.as_deref().map(|p| ctx.paths.file_ref(p)).transpose()?,
        outputs: out.outputs.iter().map(|p| ctx.paths.file_ref(p)).collect::<Result<_>>()?,
        counts: out.counts,
    };
    let path = ctx.paths.file(n, spec.kind, "manifest.json");
    commit_outputs(&[&path], |p| write_json(&p[0], &manifest))?;
    Ok(manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).at_path(path)
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).at_path(p)?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
        None => Ok(T::default()),
    }
}

/// Resolves a path found inside a stage config against that config's directory.
fn relative_to(config: Option<&Path>, p: &Path) -> PathBuf {
    match config.and_then(Path::parent) {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

fn counts<const N: usize>(pairs: [(&str, u64); N]) -> BTreeMap<String, u64> {
    pairs.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
}

fn stage_filter(ctx: &Ctx, n: usize, spec: &StageSpec, input: &Path) -> Result<StageOutput> {
    let mut config = FilterConfig::load(spec.config.as_deref().expect("validated"))?;
    config.lenient |= ctx.plan.lenient;
    let output = ctx.paths.file(n, spec.kind, "jsonl");
    let rejected = ctx.paths.file(n, spec.kind, "rejected.jsonl");
    let report = run_filter_files(ctx.rules, &config, input, &output, Some(&rejected))?;
    let mut c = counts([
        ("input", report.input_count),
        ("output", report.pass_count),
        ("skipped", report.skipped_records),
    ]);
    for (rule, k) in &report.rejections {
        c.insert(format!("rejected:{rule}"), *k);
    }
    Ok(StageOutput {
        inputs: vec![input.to_path_buf()],
        outputs: vec![output.clone(), rejected],
        counts: c,
        corpus: Some(output),
        tokenizer: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupSummary {
    pub input_count: u64,
    pub kept: u64,
    pub clusters: u64,
    pub dropped: u64,
    pub skipped_records: u64,
}

/// Clusters `input` and writes the survivors to `output`, plus the cluster
/// list when `clusters_out` is given.
pub fn dedup_file(
    params: &DedupParams,
    input: &Path,
    output: &Path,
    clusters_out: Option<&Path>,
    lenient: bool,
) -> Result<DedupSummary> {
    let mut outputs = vec![output];
    outputs.extend(clusters_out);
    commit_outputs(&outputs, |partials| {
        let mut reader = CorpusReader::open(input, lenient)?;
        let clusters = find_clusters(reader.by_ref(), params)?;
        let skipped_records = reader.skipped() as u64;
        if let Some(p) = partials.get(1) {
            clusters.write(p)?;
        }
        let mut writer = CorpusWriter::create(&partials[0])?;
        let kept = deduplicate(CorpusReader::open(input, lenient)?, &clusters, &mut writer)? as u64;
        writer.finish()?;
        let dropped = clusters.dropped().len() as u64;
        Ok(DedupSummary { input_count: kept + dropped, kept, clusters: clusters.len() as u64, dropped, skipped_records })
    })
}

/// The dedup stage config is a `DedupParams` table; the plan seed applies
/// unless the table sets its own.
fn stage_dedup(ctx: &Ctx, n: usize, spec: &StageSpec, input: &Path) -> Result<StageOutput> {
    let table: toml::Table = read_config(spec.config.as_deref())?;
    let has_seed = table.contains_key("seed");
    let mut params: DedupParams = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    if !has_seed {
        params.seed = ctx.plan.seed;
    }
    let output = ctx.paths.file(n, spec.kind, "jsonl");
    let clusters = ctx.paths.file(n, spec.kind, "clusters.jsonl");
    let s = dedup_file(&params, input, &output, Some(&clusters), ctx.plan.lenient)?;
    Ok(StageOutput {
        inputs: vec![input.to_path_buf()],
        outputs: vec![output.clone(), clusters],
        counts: counts([
            ("input", s.input_count),
            ("output", s.kept),
            ("clusters", s.clusters),
            ("dropped", s.dropped),
            ("skipped", s.skipped_records),
        ]),
        corpus: Some(output),
        tokenizer: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmFilterStageConfig {
    pub order: usize,
    pub discount: f64,
    pub retain: f64,
    pub group_by: Option<String>,
    /// Corpus to train on; defaults to the stage input.
    pub train: Option<PathBuf>,
    /// A trained model to use instead of training one.
    pub model: Option<PathBuf>,
}

impl Default for LmFilterStageConfig {
    fn default() -> Self {
        let lm = LmConfig::default();
        LmFilterStageConfig { order: lm.order, discount: lm.discount, retain: 0.95, group_by: None, train: None, model: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub input_count: u64,
    pub kept: u64,
    pub threshold: f64,
    pub group_thresholds: BTreeMap<String, f64>,
}

/// Rank-filters `input` with `model`, writing kept documents in input order.
pub fn lm_filter_file(
    model: &NGramModel,
    input: &Path,
    output: &Path,
    retain: f64,
    group_by: Option<&str>,
    lenient: bool,
) -> Result<RankSummary> {
    commit_outputs(&[output], |partials| {
        let docs = load_corpus(input, lenient)?;
        let input_count = docs.len() as u64;
        let r = rank_filter(docs, model, retain, group_by)?;
        let mut writer = CorpusWriter::create(&partials[0])?;
        for d in &r.kept {
            writer.write(d)?;
        }
        writer.finish()?;
        Ok(RankSummary {
            input_count,
            kept: r.kept.len() as u64,
            threshold: r.threshold,
            group_thresholds: r.group_thresholds,
        })
    })
}

fn stage_lm_filter(ctx: &Ctx, n: usize, spec: &StageSpec, input: &Path) -> Result<StageOutput> {
    let cfg_path = spec.config.as_deref();
    let cfg: LmFilterStageConfig = read_config(cfg_path)?;
    let mut inputs = vec![input.to_path_buf()];
    let model_path = ctx.paths.file(n, spec.kind, "cklm");
    let model = match &cfg.model {
        Some(m) => {
            let m = relative_to(cfg_path, m);
            inputs.push(m.clone());
            NGramModel::load(&m)?
        }
        None => {
            let corpus = cfg.train.as_ref().map_or_else(|| input.to_path_buf(), |t| relative_to(cfg_path, t));
            if corpus != input {
                inputs.push(corpus.clone());
            }
            let model = train(
                CorpusReader::open(&corpus, ctx.plan.lenient)?,
                LmConfig { order: cfg.order, discount: cfg.discount },
            )?;
            commit_outputs(&[&model_path], |p| model.save(&p[0]))?;
            model
        }
    };
    let output = ctx.paths.file(n, spec.kind, "jsonl");
    let s = lm_filter_file(&model, input, &output, cfg.retain, cfg.group_by.as_deref(), ctx.plan.lenient)?;
    let mut outputs = vec![output.clone()];
    if cfg.model.is_none() {
        outputs.push(model_path);
    }
    Ok(StageOutput {
        inputs,
        outputs,
        counts: counts([("input", s.input_count), ("output", s.kept)]),
        corpus: Some(output),
        tokenizer: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrSummary {
    pub input_count: u64,
    pub kept: u64,
    pub confidence_min: Option<f64>,
    pub confidence_max: Option<f64>,
}

/// Filters paginated books in `input`; `stats_out` receives one stats line
/// per book.
pub fn ocr_filter_file(
    config: &OcrFilterConfig,
    lexicon: &HashSet<String>,
    input: &Path,
    output: &Path,
    stats_out: Option<&Path>,
    lenient: bool,
) -> Result<OcrSummary> {
    let mut outputs = vec![output];
    outputs.extend(stats_out);
    commit_outputs(&outputs, |partials| {
        let docs = load_corpus(input, lenient)?;
        let ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
        let input_count = docs.len() as u64;
        let r = ocr_filter(docs, lexicon, config)?;
        if let Some(p) = partials.get(1) {
            let mut w = std::io::BufWriter::new(fs::File::create(p).at_path(p)?);
            for (id, s) in ids.iter().zip(&r.stats) {
                #[derive(Serialize)]
                struct Line<'a> {
                    id: &'a str,
                    #[serde(flatten)]
                    stats: &'a crate::ocr::BookStats,
                }
                crate::corpus::write_json_line(&mut w, &Line { id, stats: s })?;
            }
            std::io::Write::flush(&mut w)?;
        }
        let mut writer = CorpusWriter::create(&partials[0])?;
        for d in &r.kept {
            writer.write(d)?;
        }
        writer.finish()?;
        Ok(OcrSummary {
            input_count,
            kept: r.kept.len() as u64,
            confidence_min: r.confidence_threshold.as_ref().and_then(|t| t.min),
            confidence_max: r.confidence_threshold.as_ref().and_then(|t| t.max),
        })
    })
}

/// The OCR stage config is an `OcrFilterConfig` table plus an optional
/// `lexicon` word-list path.
fn stage_ocr_filter(ctx: &Ctx, n: usize, spec: &StageSpec, input: &Path) -> Result<StageOutput> {
    let cfg_path = spec.config.as_deref();
    let mut table: toml::Table = read_config(cfg_path)?;
    let lexicon_path = match table.remove("lexicon") {
        Some(toml::Value::String(p)) => Some(relative_to(cfg_path, Path::new(&p))),
        Some(_) => return Err(Error::Config("lexicon must be a path".into())),
        None => None,
    };
    let config: OcrFilterConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let lexicon = match &lexicon_path {
        Some(p) => load_word_list(p)?,
        None => HashSet::new(),
    };
    let output = ctx.paths.file(n, spec.kind, "jsonl");
    let stats = ctx.paths.file(n, spec.kind, "stats.jsonl");
    let s = ocr_filter_file(&config, &lexicon, input, &output, Some(&stats), ctx.plan.lenient)?;
    let mut inputs = vec![input.to_path_buf()];
    inputs.extend(lexicon_path);
    Ok(StageOutput {
        inputs,
        outputs: vec![output.clone(), stats],
        counts: counts([("input", s.input_count), ("output", s.kept)]),
        corpus: Some(output),
        tokenizer: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokTrainStageConfig {
    vocab_size: usize,
    #[serde(default)]
    specials: Vec<String>,
}

fn stage_tok_train(ctx: &Ctx, n: usize, spec: &StageSpec, input: &Path) -> Result<StageOutput> {
    let path = spec.config.as_deref().expect("validated");
    let text = fs::read_to_string(path).at_path(path)?;
    let cfg: TokTrainStageConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let trainer = TrainerConfig { specials: cfg.specials, ..TrainerConfig::new(cfg.vocab_size) };
    let model = train_bpe(CorpusReader::open(input, ctx.plan.lenient)?, &trainer)?;
    let output = ctx.paths.file(n, spec.kind, "bpe");
    commit_outputs(&[&output], |p| model.save(&p[0]))?;
    Ok(StageOutput {
        inputs: vec![input.to_path_buf()],
        outputs: vec![output.clone()],
        counts: counts([("merges", model.merges().len() as u64), ("vocab_size", model.vocab_size() as u64)]),
        corpus: None,
        tokenizer: Some(output),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TokMergeStageConfig {
    /// Base model file; the byte-identity model when absent.
    base: Option<PathBuf>,
    /// Extension model file; the latest tok-train output when absent.
    extension: Option<PathBuf>,
}

fn stage_tok_merge(ctx: &Ctx, n: usize, spec: &StageSpec) -> Result<StageOutput> {
    let cfg_path = spec.config.as_deref();
    let cfg: TokMergeStageConfig = read_config(cfg_path)?;
    let mut inputs = Vec::new();
    let base = match &cfg.base {
        Some(p) => {
            let p = relative_to(cfg_path, p);
            inputs.push(p.clone());
            ByteBpeModel::load(&p)?
        }
        None => ByteBpeModel::byte_identity(),
    };
    let ext_path = match &cfg.extension {
        Some(p) => relative_to(cfg_path, p),
        None => ctx
            .tok_train
            .clone()
            .ok_or_else(|| Error::Config("tok-merge needs an extension or an earlier tok-train stage".into()))?,
    };
    inputs.push(ext_path.clone());
    let extension = ByteBpeModel::load(&ext_path)?;
    let merged = merge_tokenizers(&base, &extension);
    let output = ctx.paths.file(n, spec.kind, "bpe");
    let sidecar = base_sidecar(&output);
    commit_outputs(&[&output, &sidecar], |p| {
        merged.save(&p[0])?;
        base.save(&p[1])
    })?;
    Ok(StageOutput {
        inputs,
        outputs: vec![output.clone(), sidecar],
        counts: counts([
            ("base_vocab_size", base.vocab_size() as u64),
            ("extension_merges", extension.merges().len() as u64),
            ("added", merged.extension_len() as u64),
            ("vocab_size", merged.vocab_size() as u64),
        ]),
        corpus: None,
        tokenizer: Some(output),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TokEvalStageConfig {
    /// Tokenizer file; the latest tokenizer stage output when absent.
    tokenizer: Option<PathBuf>,
    /// Base model of a merged tokenizer, if not stored beside it.
    base: Option<PathBuf>,
}

/// Tokens-per-word of `tokenizer` over a corpus file.
pub fn tpw_file(tokenizer: &AnyTokenizer, input: &Path, lenient: bool) -> Result<TpwReport> {
    let name = input.file_name().map_or_else(|| input.display().to_string(), |n| n.to_string_lossy().into_owned());
    tokens_per_word(tokenizer, &name, CorpusReader::open(input, lenient)?)
}

fn stage_tok_eval(ctx: &Ctx, n: usize, spec: &StageSpec, input: &Path) -> Result<StageOutput> {
    let cfg_path = spec.config.as_deref();
    let cfg: TokEvalStageConfig = read_config(cfg_path)?;
    let tok_path = match &cfg.tokenizer {
        Some(p) => relative_to(cfg_path, p),
        None => ctx
            .tokenizer
            .clone()
            .ok_or_else(|| Error::Config("tok-eval needs a tokenizer or an earlier tokenizer stage".into()))?,
    };
    let base = cfg.base.as_ref().map(|p| relative_to(cfg_path, p));
    let tokenizer = AnyTokenizer::load(&tok_path, base.as_deref())?;
    let report = tpw_file(&tokenizer, input, ctx.plan.lenient)?;
    let output = ctx.paths.file(n, spec.kind, "report.json");
    commit_outputs(&[&output], |p| write_json(&p[0], &report))?;
    Ok(StageOutput {
        inputs: vec![input.to_path_buf(), tok_path],
        outputs: vec![output],
        counts: counts([("documents", report.documents), ("words", report.words), ("tokens", report.tokens)]),
        corpus: None,
        tokenizer: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{write_corpus, Document};

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn fixture(dir: &Path) -> PathBuf {
        let long = "the quick brown fox jumps over the lazy dog near the river bank today.";
        let docs = vec![
            Document::new("a", "web", long),
            Document::new("b", "web", long),
            Document::new("c", "web", "x"),
        ];
        let p = dir.join("in.jsonl");
        write_corpus(&p, &docs).unwrap();
        p
    }

    #[test]
    fn empty_plan_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let plan = PipelinePlan::from_toml(&format!(
            "input = {:?}\noutput_dir = {:?}\n",
            dir.path().join("in.jsonl"),
            dir.path().join("out")
        ))
        .unwrap();
        assert!(run_plan(&plan).unwrap().is_empty());
        assert!(!dir.path().join("out").exists());
    }

    #[test]
    fn filter_then_dedup() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        write(dir.path(), "filter.toml", "[thresholds]\nword_count = { min = 3 }\n");
        write(dir.path(), "dedup.toml", "threshold = 0.5\n");
        let plan_path = write(
            dir.path(),
            "plan.toml",
            "seed = 7\ninput = \"in.jsonl\"\noutput_dir = \"out\"\n\
             [[stage]]\nkind = \"filter\"\nconfig = \"filter.toml\"\n\
             [[stage]]\nkind = \"dedup\"\nconfig = \"dedup.toml\"\n",
        );
        let plan = PipelinePlan::load(&plan_path).unwrap();
        let manifests = run_plan(&plan).unwrap();
        assert_eq!(manifests.len(), 2);
        assert_eq!(manifests[0].counts["output"], 2);
        assert_eq!(manifests[0].counts["rejected:word_count"], 1);
        assert_eq!(manifests[1].counts["output"], 1);
        assert_eq!(manifests[1].seed, 7);
        let out = load_corpus(dir.path().join("out/02-dedup.jsonl"), false).unwrap();
        assert_eq!(out.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), ["a"]);
        assert!(dir.path().join("out/01-filter.manifest.json").is_file());
        assert!(dir.path().join("out/02-dedup.manifest.json").is_file());
    }

    #[test]
    fn failed_stage_keeps_earlier_outputs() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        write(dir.path(), "filter.toml", "[thresholds]\nword_count = { min = 1000 }\n");
        write(dir.path(), "lm.toml", "retain = 0.5\n");
        let plan_path = write(
            dir.path(),
            "plan.toml",
            "input = \"in.jsonl\"\noutput_dir = \"out\"\n\
             [[stage]]\nkind = \"filter\"\nconfig = \"filter.toml\"\n\
             [[stage]]\nkind = \"lm-filter\"\nconfig = \"lm.toml\"\n",
        );
        let err = run_plan(&PipelinePlan::load(&plan_path).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Stage { ref stage, .. } if stage.starts_with("2")), "{err}");
        let names: Vec<String> = fs::read_dir(dir.path().join("out"))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert!(names.contains(&"01-filter.jsonl".to_owned()));
        assert!(!names.iter().any(|n| n.starts_with("02-")), "{names:?}");
    }

    #[test]
    fn missing_config_fails_validation() {
        let plan = PipelinePlan::from_toml(
            "input = \"in.jsonl\"\noutput_dir = \"out\"\n[[stage]]\nkind = \"filter\"\nconfig = \"/nonexistent.toml\"\n",
        )
        .unwrap();
        assert!(matches!(run_plan(&plan), Err(Error::Config(_))));
        assert!(PipelinePlan::from_toml("input = \"a\"\noutput_dir = \"b\"\n[[stage]]\nkind = \"sort\"\n").is_err());
    }
}
