//! MinHash / LSH near-duplicate detection.
//!
//! Documents are shingled into word n-grams, sketched with `k` universal
//! hash permutations modulo the Mersenne prime 2^61 − 1, and bucketed by
//! `bands × rows` LSH. Candidate pairs whose estimated Jaccard similarity
//! clears the threshold are joined with a disjoint-set union; each connected
//! component becomes one [`DupCluster`] whose lexicographically smallest id
//! survives.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::{xxh3_64, xxh3_64_with_seed};

use crate::corpus::{write_json_line, CorpusWriter, Document, NormalizedView, Normalizer};
use crate::error::{Error, PathContext, Result};

pub const MERSENNE_61: u64 = (1 << 61) - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupParams {
    pub k: usize,
    pub bands: usize,
    pub rows: usize,
    pub threshold: f64,
    pub seed: u64,
    pub shingle_n: usize,
    /// Band tables spill to temporary files once they would exceed this many bytes.
    pub memory_budget: usize,
}

impl Default for DedupParams {
    fn default() -> Self {
        DedupParams {
            k: 128,
            bands: 16,
            rows: 8,
            threshold: 0.7,
            seed: 0,
            shingle_n: 5,
            memory_budget: 1 << 30,
        }
    }
}

impl DedupParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.bands * self.rows != self.k {
            return Err(Error::Config(format!(
                "bands ({}) × rows ({}) must equal k ({})",
                self.bands, self.rows, self.k
            )));
        }
        if self.shingle_n == 0 {
            return Err(Error::Config("shingle size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0,1]", self.threshold)));
        }
        Ok(())
    }

    /// Probability that a pair with Jaccard `j` shares at least one band.
    pub fn detection_probability(&self, j: f64) -> f64 {
        1.0 - (1.0 - j.powi(self.rows as i32)).powi(self.bands as i32)
    }
}

/// Hashes of consecutive word `n`-grams (words joined by one space).
/// Documents shorter than `n` words yield a single hash of all their words;
/// documents without words yield the empty set.
pub fn shingles(view: &NormalizedView, n: usize) -> HashSet<u64> {
    shingle_words(&view.words, n)
}

pub fn shingle_words<S: AsRef<str>>(words: &[S], n: usize) -> HashSet<u64> {
    let join = |ws: &[S]| -> u64 {
        let joined = ws.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
        xxh3_64(joined.as_bytes())
    };
    match words.len() {
        0 => HashSet::new(),
        len if len < n => HashSet::from([join(words)]),
        _ => words.windows(n).map(join).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub values: Vec<u64>,
    pub seed: u64,
}

/// Precomputed permutation coefficients for one `(k, seed)`.
#[derive(Debug, Clone)]
pub struct MinHasher {
    seed: u64,
    coeffs: Vec<(u64, u64)>,
}

impl MinHasher {
    pub fn new(k: usize, seed: u64) -> Self {
        let coeffs = (0..k as u64)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i);
                (rng.random_range(1..MERSENNE_61), rng.random_range(0..MERSENNE_61))
            })
            .collect();
        MinHasher { seed, coeffs }
    }

    pub fn k(&self) -> usize {
        self.coeffs.len()
    }

    pub fn signature<'a>(&self, shingles: impl IntoIterator<Item = &'a u64>) -> Result<MinHashSignature> {
        let mut values = vec![u64::MAX; self.coeffs.len()];
        let mut any = false;
        for &s in shingles {
            any = true;
            let x = (s % MERSENNE_61) as u128;
            for (v, &(a, b)) in values.iter_mut().zip(&self.coeffs) {
                let h = ((a as u128 * x + b as u128) % MERSENNE_61 as u128) as u64;
                if h < *v {
                    *v = h;
                }
            }
        }
        if !any {
            return Err(Error::EmptyDocument);
        }
        Ok(MinHashSignature { values, seed: self.seed })
    }
}

pub fn signature(shingles: &HashSet<u64>, k: usize, seed: u64) -> Result<MinHashSignature> {
    MinHasher::new(k, seed).signature(shingles)
}

pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64> {
    if a.values.len() != b.values.len() || a.seed != b.seed {
        return Err(Error::SignatureMismatch(format!(
            "k {} / seed {} vs k {} / seed {}",
            a.values.len(),
            a.seed,
            b.values.len(),
            b.seed
        )));
    }
    Ok(agreement(&a.values, &b.values))
}

fn agreement(a: &[u64], b: &[u64]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

/// Hash of one band's rows; the band index salts the hash.
pub fn band_key(values: &[u64], band: usize, rows: usize) -> u64 {
    let mut bytes = Vec::with_capacity(rows * 8);
    for v in &values[band * rows..(band + 1) * rows] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    xxh3_64_with_seed(&bytes, band as u64)
}

/// Whether two signatures share at least one full band.
pub fn share_band(a: &MinHashSignature, b: &MinHashSignature, rows: usize) -> bool {
    a.values.chunks(rows).zip(b.values.chunks(rows)).any(|(x, y)| x == y)
}

#[derive(Debug, Default)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), rank: vec![0; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Per-band `(bucket key, document index)` tables, in memory or spilled.
enum BandStore {
    Memory(Vec<Vec<(u64, u32)>>),
    Disk(Vec<BufWriter<File>>),
}

impl BandStore {
    fn new(bands: usize) -> Self {
        BandStore::Memory(vec![Vec::new(); bands])
    }

    fn bytes(&self) -> usize {
        match self {
            BandStore::Memory(v) => v.iter().map(|b| b.len() * 12).sum(),
            BandStore::Disk(_) => 0,
        }
    }

    fn spill(&mut self) -> Result<()> {
        if let BandStore::Memory(tables) = self {
            log::info!("band tables exceed memory budget; spilling to temporary files");
            let mut files = Vec::with_capacity(tables.len());
            for table in tables.iter() {
                let mut w = BufWriter::new(tempfile::tempfile()?);
                for &(k, d) in table {
                    w.write_u64::<LittleEndian>(k)?;
                    w.write_u32::<LittleEndian>(d)?;
                }
                files.push(w);
            }
            *self = BandStore::Disk(files);
        }
        Ok(())
    }

    fn push(&mut self, band: usize, key: u64, doc: u32) -> Result<()> {
        match self {
            BandStore::Memory(t) => t[band].push((key, doc)),
            BandStore::Disk(f) => {
                f[band].write_u64::<LittleEndian>(key)?;
                f[band].write_u32::<LittleEndian>(doc)?;
            }
        }
        Ok(())
    }

    fn into_bands(self) -> Box<dyn Iterator<Item = Result<Vec<(u64, u32)>>>> {
        match self {
            BandStore::Memory(t) => Box::new(t.into_iter().map(Ok)),
            BandStore::Disk(files) => Box::new(files.into_iter().map(|w| {
                let mut file = w.into_inner().map_err(|e| e.into_error())?;
                let len = file.seek(SeekFrom::End(0))? as usize / 12;
                file.seek(SeekFrom::Start(0))?;
                let mut r = BufReader::new(file);
                let mut out = Vec::with_capacity(len);
                for _ in 0..len {
                    out.push((r.read_u64::<LittleEndian>()?, r.read_u32::<LittleEndian>()?));
                }
                Ok(out)
            })),
        }
    }
}

/// Banded LSH index over signatures.
pub struct LshIndex {
    bands: usize,
    rows: usize,
    memory_budget: usize,
    store: BandStore,
    ids: Vec<String>,
    signatures: Vec<Vec<u64>>,
}

impl LshIndex {
    pub fn new(params: &DedupParams) -> Result<Self> {
        params.validate()?;
        Ok(LshIndex {
            bands: params.bands,
            rows: params.rows,
            memory_budget: params.memory_budget,
            store: BandStore::new(params.bands),
            ids: Vec::new(),
            signatures: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn spilled(&self) -> bool {
        matches!(self.store, BandStore::Disk(_))
    }

    pub fn insert(&mut self, id: String, sig: MinHashSignature) -> Result<()> {
        if sig.values.len() != self.bands * self.rows {
            return Err(Error::SignatureMismatch(format!(
                "signature length {} does not match index k {}",
                sig.values.len(),
                self.bands * self.rows
            )));
        }
        let doc = u32::try_from(self.ids.len()).map_err(|_| Error::Config("too many documents".into()))?;
        for band in 0..self.bands {
            self.store.push(band, band_key(&sig.values, band, self.rows), doc)?;
        }
        if self.store.bytes() > self.memory_budget {
            self.store.spill()?;
        }
        self.ids.push(id);
        self.signatures.push(sig.values);
        Ok(())
    }

    /// Connected components of candidate pairs whose estimate is at least `threshold`.
    pub fn clusters(self, threshold: f64) -> Result<DupClusters> {
        let n = self.ids.len();
        let mut uf = UnionFind::new(n);
        for band in self.store.into_bands() {
            let mut band = band?;
            band.sort_unstable();
            for bucket in band.chunk_by(|a, b| a.0 == b.0).filter(|b| b.len() > 1) {
                for (i, &(_, a)) in bucket.iter().enumerate() {
                    for &(_, b) in &bucket[..i] {
                        let (a, b) = (a as usize, b as usize);
                        if uf.find(a) != uf.find(b) && agreement(&self.signatures[a], &self.signatures[b]) >= threshold
                        {
                            uf.union(a, b);
                        }
                    }
                }
            }
        }
        let mut groups: HashMap<usize, Vec<String>> = HashMap::new();
        for (i, id) in self.ids.into_iter().enumerate() {
            groups.entry(uf.find(i)).or_default().push(id);
        }
        let mut clusters: Vec<DupCluster> = groups
            .into_values()
            .filter(|m| m.len() > 1)
            .map(|mut members| {
                members.sort();
                DupCluster { cluster_id: 0, kept: members[0].clone(), members }
            })
            .collect();
        clusters.sort_by(|a, b| a.kept.cmp(&b.kept));
        for (i, c) in clusters.iter_mut().enumerate() {
            c.cluster_id = i as u64;
        }
        Ok(DupClusters { clusters })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DupCluster {
    pub cluster_id: u64,
    pub members: Vec<String>,
    pub kept: String,
}

/// Disjoint duplicate clusters; singletons are omitted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DupClusters {
    pub clusters: Vec<DupCluster>,
}

impl DupClusters {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Ids that are cluster members but not the kept survivor.
    pub fn dropped(&self) -> HashSet<&str> {
        self.clusters
            .iter()
            .flat_map(|c| c.members.iter().filter(move |m| **m != c.kept).map(String::as_str))
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).at_path(path)?);
        for c in &self.clusters {
            write_json_line(&mut w, c)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut text = String::new();
        File::open(path).at_path(path)?.read_to_string(&mut text).at_path(path)?;
        Self::parse(text.as_bytes())
    }

    pub fn parse(input: impl BufRead) -> Result<Self> {
        let mut clusters = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let c: DupCluster =
                serde_json::from_str(&line).map_err(|e| Error::Record { line: i + 1, message: e.to_string() })?;
            if !c.members.contains(&c.kept) {
                return Err(Error::Consistency(format!("cluster {} keeps a non-member", c.cluster_id)));
            }
            clusters.push(c);
        }
        Ok(DupClusters { clusters })
    }
}

const SIGNATURE_BATCH: usize = 4096;

/// Signs and indexes every document, then resolves clusters.
pub fn find_clusters<I>(docs: I, params: &DedupParams) -> Result<DupClusters>
where
    I: IntoIterator<Item = Result<Document>>,
{
    let mut index = LshIndex::new(params)?;
    let hasher = MinHasher::new(params.k, params.seed);
    let normalizer = Normalizer::default();
    let mut docs = docs.into_iter();
    loop {
        let batch: Vec<Document> = docs.by_ref().take(SIGNATURE_BATCH).collect::<Result<_>>()?;
        if batch.is_empty() {
            break;
        }
        let signed: Vec<Option<MinHashSignature>> = batch
            .par_iter()
            .map(|d| {
                let view = normalizer.view(&d.text);
                hasher.signature(&shingles(&view, params.shingle_n)).ok()
            })
            .collect();
        for (doc, sig) in batch.into_iter().zip(signed) {
            match sig {
                Some(sig) => index.insert(doc.id, sig)?,
                None => log::debug!("document {} has no words; not indexed", doc.id),
            }
        }
    }
    index.clusters(params.threshold)
}

/// Streams `docs` to `writer`, skipping every non-kept cluster member.
pub fn deduplicate<I, W>(docs: I, clusters: &DupClusters, writer: &mut CorpusWriter<W>) -> Result<usize>
where
    I: IntoIterator<Item = Result<Document>>,
    W: Write,
{
    let dropped = clusters.dropped();
    let mut referenced: HashSet<&str> =
        clusters.clusters.iter().flat_map(|c| c.members.iter().map(String::as_str)).collect();
    let mut kept = 0;
    for doc in docs {
        let doc = doc?;
        referenced.remove(doc.id.as_str());
        if !dropped.contains(doc.id.as_str()) {
            writer.write(&doc)?;
            kept += 1;
        }
    }
    if let Some(missing) = referenced.iter().min() {
        return Err(Error::Consistency(format!("cluster member {missing:?} not found in corpus")));
    }
    Ok(kept)
}
