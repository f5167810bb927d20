//! Threshold configuration, percentile calibration and the filtering pass.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_json_line, CorpusReader, CorpusWriter, Document, Normalizer};
use crate::error::{Error, PathContext, Result};
use crate::rules::{Metric, RuleMetrics, Rules};

pub const HISTOGRAM_BINS: usize = 64;
/// Rule name reported for documents without words.
pub const EMPTY_DOCUMENT_RULE: &str = "empty_document";
const BATCH: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub metric: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Threshold {
    pub fn new(metric: impl Into<String>, min: Option<f64>, max: Option<f64>) -> Result<Self> {
        let t = Threshold { metric: metric.into(), min, max };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        match (self.min, self.max) {
            (None, None) => Err(Error::Config(format!("threshold for {} has no bound", self.metric))),
            (Some(lo), Some(hi)) if lo > hi => {
                Err(Error::Config(format!("threshold for {}: min {lo} > max {hi}", self.metric)))
            }
            _ => Ok(()),
        }
    }

    /// Inclusive on both sides. `None` (undefined metric) never satisfies.
    pub fn accepts(&self, value: Option<f64>) -> bool {
        let Some(v) = value else { return false };
        self.min.is_none_or(|lo| v >= lo) && self.max.is_none_or(|hi| v <= hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Emit a `min` bound that keeps the top of the distribution.
    Lower,
    /// Emit a `max` bound that keeps the bottom of the distribution.
    Upper,
}

impl std::str::FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lower" => Ok(Side::Lower),
            "upper" => Ok(Side::Upper),
            _ => Err(Error::Config(format!("side must be lower or upper, got {s:?}"))),
        }
    }
}

/// Count kept by a nearest-rank cut at `percentile` over `n` values.
pub fn nearest_rank(percentile: f64, n: usize) -> usize {
    // The epsilon absorbs representation error in p·N/100 for exact products.
    ((percentile * n as f64 / 100.0) - 1e-9).ceil().max(1.0) as usize
}

/// Nearest-rank threshold over `values`. Undefined values are ignored.
///
/// `Upper` returns `max = sorted[ceil(p/100·N) − 1]`; `Lower` returns
/// `min = sorted[N − ceil(p/100·N)]`, so either side retains exactly
/// `ceil(p/100·N)` values when the sample has no ties.
pub fn calibrate_values(
    metric: &str,
    values: impl IntoIterator<Item = Option<f64>>,
    percentile: f64,
    side: Side,
) -> Result<Threshold> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::Calibration(format!("percentile {percentile} outside (0, 100]")));
    }
    let mut sorted: Vec<f64> = values.into_iter().flatten().filter(|v| !v.is_nan()).collect();
    if sorted.is_empty() {
        return Err(Error::Calibration(format!("no defined values for {metric}")));
    }
    sorted.sort_by(f64::total_cmp);
    let keep = nearest_rank(percentile, sorted.len());
    Ok(match side {
        Side::Upper => Threshold { metric: metric.into(), min: None, max: Some(sorted[keep - 1]) },
        Side::Lower => Threshold { metric: metric.into(), min: Some(sorted[sorted.len() - keep]), max: None },
    })
}

/// Measures every document in `docs` and calibrates one metric.
pub fn calibrate<I>(docs: I, rules: &Rules, metric: Metric, percentile: f64, side: Side) -> Result<Threshold>
where
    I: IntoIterator<Item = Result<Document>>,
{
    let normalizer = Normalizer::default();
    let mut values = Vec::new();
    for doc in docs {
        values.push(metric.value(&rules.measure(&doc?, &normalizer)?));
    }
    calibrate_values(metric.name(), values, percentile, side)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoolRule {
    IsAdultUrl,
}

impl BoolRule {
    pub fn name(self) -> &'static str {
        match self {
            BoolRule::IsAdultUrl => "is_adult_url",
        }
    }

    fn value(self, m: &RuleMetrics) -> bool {
        match self {
            BoolRule::IsAdultUrl => m.is_adult_url,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageRule {
    pub tag: String,
    pub min_fraction: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBound {
    min: Option<f64>,
    max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    lenient: bool,
    #[serde(default)]
    allow_empty: bool,
    #[serde(default)]
    thresholds: IndexMap<String, RawBound>,
    #[serde(default)]
    boolean_rules: IndexMap<String, bool>,
    language: Option<LanguageRule>,
}

/// Validated filter configuration. Rules are checked in declaration order.
#[derive(Debug, Clone, Default)]
pub struct FilterConfig {
    thresholds: Vec<(Metric, Threshold)>,
    boolean_rules: Vec<(BoolRule, bool)>,
    pub language: Option<LanguageRule>,
    pub lenient: bool,
    /// Zero-word documents are rejected unless this is set.
    pub allow_empty: bool,
}

impl FilterConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = FilterConfig { lenient: raw.lenient, allow_empty: raw.allow_empty, ..Default::default() };
        for (name, b) in raw.thresholds {
            cfg.add_threshold(Threshold::new(name, b.min, b.max)?)?;
        }
        for (name, required) in raw.boolean_rules {
            let rule = match name.as_str() {
                "is_adult_url" => BoolRule::IsAdultUrl,
                _ => return Err(Error::Config(format!("unknown boolean rule {name:?}"))),
            };
            cfg.boolean_rules.push((rule, required));
        }
        if let Some(lang) = raw.language {
            if !(0.0..=1.0).contains(&lang.min_fraction) {
                return Err(Error::Config(format!("language min_fraction {} outside [0,1]", lang.min_fraction)));
            }
            cfg.language = Some(lang);
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&fs::read_to_string(path).at_path(path)?)
    }

    pub fn add_threshold(&mut self, t: Threshold) -> Result<()> {
        t.validate()?;
        let metric: Metric = t.metric.parse()?;
        if self.thresholds.iter().any(|(m, _)| *m == metric) {
            return Err(Error::Config(format!("metric {metric} appears twice")));
        }
        self.thresholds.push((metric, t));
        Ok(())
    }

    pub fn require(&mut self, rule: BoolRule, value: bool) {
        self.boolean_rules.retain(|(r, _)| *r != rule);
        self.boolean_rules.push((rule, value));
    }

    pub fn thresholds(&self) -> impl Iterator<Item = &Threshold> {
        self.thresholds.iter().map(|(_, t)| t)
    }

    /// Renders back to the TOML accepted by [`FilterConfig::from_toml`].
    pub fn to_toml(&self) -> String {
        let mut out = format!("lenient = {}\nallow_empty = {}\n", self.lenient, self.allow_empty);
        if !self.thresholds.is_empty() {
            out.push_str("\n[thresholds]\n");
            for (_, t) in &self.thresholds {
                let mut parts = Vec::new();
                if let Some(v) = t.min {
                    parts.push(format!("min = {v:?}"));
                }
                if let Some(v) = t.max {
                    parts.push(format!("max = {v:?}"));
                }
                out.push_str(&format!("{} = {{ {} }}\n", t.metric, parts.join(", ")));
            }
        }
        if !self.boolean_rules.is_empty() {
            out.push_str("\n[boolean_rules]\n");
            for (r, v) in &self.boolean_rules {
                out.push_str(&format!("{} = {v}\n", r.name()));
            }
        }
        if let Some(l) = &self.language {
            out.push_str(&format!("\n[language]\ntag = {:?}\nmin_fraction = {:?}\n", l.tag, l.min_fraction));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub pass: bool,
    pub failed_rules: Vec<String>,
}

pub fn apply(metrics: &RuleMetrics, config: &FilterConfig) -> Decision {
    let mut failed = Vec::new();
    if metrics.empty && !config.allow_empty {
        failed.push(EMPTY_DOCUMENT_RULE.to_owned());
    }
    for (metric, t) in &config.thresholds {
        if !t.accepts(metric.value(metrics)) {
            failed.push(metric.name().to_owned());
        }
    }
    for (rule, required) in &config.boolean_rules {
        if rule.value(metrics) != *required {
            failed.push(rule.name().to_owned());
        }
    }
    if let Some(lang) = &config.language {
        let share = metrics.language_fractions.get(&lang.tag).copied().unwrap_or(0.0);
        if share < lang.min_fraction {
            failed.push(format!("language:{}", lang.tag));
        }
    }
    Decision { pass: failed.is_empty(), failed_rules: failed }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub bins: Vec<u64>,
    /// Documents for which the metric is undefined.
    pub nulls: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64) -> Self {
        Histogram { lo, hi, bins: vec![0; HISTOGRAM_BINS], nulls: 0 }
    }

    pub fn add(&mut self, value: Option<f64>) {
        match value {
            Some(v) if !v.is_nan() => {
                let t = (v - self.lo) / (self.hi - self.lo) * HISTOGRAM_BINS as f64;
                let idx = (t.floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
                self.bins[idx] += 1;
            }
            _ => self.nulls += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().sum::<u64>() + self.nulls
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            *a += b;
        }
        self.nulls += other.nulls;
    }
}

/// Accounting for one filtering pass. Rejections are attributed to the first
/// failing rule so that `pass_count + Σ rejections = input_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_count: u64,
    pub pass_count: u64,
    pub skipped_records: u64,
    pub rejections: BTreeMap<String, u64>,
    pub histograms: BTreeMap<String, Histogram>,
    pub elapsed_ms: u64,
}

impl Default for FilterReport {
    fn default() -> Self {
        FilterReport {
            input_count: 0,
            pass_count: 0,
            skipped_records: 0,
            rejections: BTreeMap::new(),
            histograms: Metric::ALL
                .iter()
                .map(|m| {
                    let (lo, hi) = m.histogram_range();
                    (m.name().to_owned(), Histogram::new(lo, hi))
                })
                .collect(),
            elapsed_ms: 0,
        }
    }
}

impl FilterReport {
    pub fn record(&mut self, metrics: &RuleMetrics, decision: &Decision) {
        self.input_count += 1;
        match decision.failed_rules.first() {
            None => self.pass_count += 1,
            Some(rule) => *self.rejections.entry(rule.clone()).or_default() += 1,
        }
        for m in Metric::ALL {
            if let Some(h) = self.histograms.get_mut(m.name()) {
                h.add(m.value(metrics));
            }
        }
    }

    /// Associative, commutative combination of shard reports.
    pub fn merge(&mut self, other: &FilterReport) {
        self.input_count += other.input_count;
        self.pass_count += other.pass_count;
        self.skipped_records += other.skipped_records;
        for (k, v) in &other.rejections {
            *self.rejections.entry(k.clone()).or_default() += v;
        }
        for (k, h) in &other.histograms {
            match self.histograms.get_mut(k) {
                Some(mine) => mine.merge(h),
                None => {
                    self.histograms.insert(k.clone(), h.clone());
                }
            }
        }
        self.elapsed_ms = self.elapsed_ms.max(other.elapsed_ms);
    }

    pub fn rejected_count(&self) -> u64 {
        self.rejections.values().sum()
    }
}

#[derive(Serialize)]
struct RejectedRecord<'a> {
    #[serde(flatten)]
    doc: &'a Document,
    decision: &'a Decision,
}

/// Streams `reader` through the rules, writing passing documents to `writer`
/// in input order and, optionally, rejected ones with their decision.
pub fn run_pipeline<R: BufRead, W: Write, X: Write>(
    mut reader: CorpusReader<R>,
    rules: &Rules,
    config: &FilterConfig,
    writer: &mut CorpusWriter<W>,
    mut rejected: Option<&mut X>,
) -> Result<FilterReport> {
    let start = Instant::now();
    let normalizer = Normalizer::default();
    let mut report = FilterReport::default();
    let mut batch = Vec::with_capacity(BATCH);
    loop {
        batch.clear();
        for doc in reader.by_ref().take(BATCH) {
            batch.push(doc?);
        }
        if batch.is_empty() {
            break;
        }
        let evaluated: Vec<(RuleMetrics, Decision)> = batch
            .par_iter()
            .map(|doc| {
                let metrics = rules.measure(doc, &normalizer)?;
                let decision = apply(&metrics, config);
                Ok((metrics, decision))
            })
            .collect::<Result<_>>()?;
        for (doc, (metrics, decision)) in batch.iter().zip(&evaluated) {
            report.record(metrics, decision);
            if decision.pass {
                writer.write(doc)?;
            } else if let Some(out) = rejected.as_deref_mut() {
                write_json_line(out, &RejectedRecord { doc, decision })?;
            }
        }
    }
    report.skipped_records = reader.skipped() as u64;
    report.elapsed_ms = start.elapsed().as_millis() as u64;
    Ok(report)
}

/// File-to-file filtering. Outputs are written under a `.partial` name and
/// renamed on success; on failure the partial files are removed.
pub fn run_filter_files(
    rules: &Rules,
    config: &FilterConfig,
    input: &Path,
    output: &Path,
    rejected: Option<&Path>,
) -> Result<FilterReport> {
    let mut outputs = vec![output];
    outputs.extend(rejected);
    crate::io::commit_outputs(&outputs, |partials| {
        let reader = CorpusReader::open(input, config.lenient)?;
        let mut writer = CorpusWriter::create(&partials[0])?;
        let report = match partials.get(1) {
            Some(p) => {
                let file = fs::File::create(p).at_path(p)?;
                let mut rej = std::io::BufWriter::new(file);
                let report = run_pipeline(reader, rules, config, &mut writer, Some(&mut rej))?;
                rej.flush()?;
                report
            }
            None => run_pipeline::<_, _, std::io::Sink>(reader, rules, config, &mut writer, None)?,
        };
        writer.finish()?;
        Ok(report)
    })
}
