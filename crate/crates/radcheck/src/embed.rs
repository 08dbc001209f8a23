//! Image and sentence encoders over a common 512-d space, feature
//! concatenation, and a binary embedding cache.
//!
//! The real joint encoder is pluggable behind [`EmbeddingProvider`]; the
//! shipped [`ReferenceEmbedder`] is a deterministic synthetic encoder that
//! maps each (finding, polarity) to a fixed pseudo-random unit direction, so
//! the whole pipeline runs and can be tested offline. Externally computed
//! embeddings can be served from a cache file via [`CacheProvider`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Finding};
use crate::error::{Error, Result};
use crate::extract::Extractor;
use crate::pairs::{Label, LabeledPair};

/// Encoder output dimension for both images and sentences.
pub const EMBED_DIM: usize = 512;
/// Concatenated feature dimension (image block then text block).
pub const FEATURE_DIM: usize = 2 * EMBED_DIM;
/// Leading dimensions whose sign encodes finding polarity in the reference
/// embedder. Half the space, so opposite polarities of one finding are
/// orthogonal; with a smaller subspace a reversed sentence stays closer to
/// the original than dropping it, and removal could never improve a report.
pub const POLARITY_DIMS: usize = 256;

/// Noise magnitude added by the reference embedder per image/text.
const REFERENCE_NOISE: f32 = 0.05;

/// A finite 512-d encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<EmbeddingVector> {
        if values.len() != EMBED_DIM {
            return Err(Error::Dimension {
                expected: EMBED_DIM,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("embedding contains non-finite value".into()));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn zeros() -> EmbeddingVector {
        EmbeddingVector(vec![0.0; EMBED_DIM])
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }
}

/// A 1024-d concatenated feature: image block first, text block second, each
/// block L2-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f32>);

impl FeatureVector {
    pub fn new(values: Vec<f32>) -> Result<FeatureVector> {
        if values.len() != FEATURE_DIM {
            return Err(Error::Dimension {
                expected: FEATURE_DIM,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("feature contains non-finite value".into()));
        }
        Ok(FeatureVector(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }
}

fn l2_normalize(block: &mut [f32]) {
    let norm = block
        .iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        log::debug!("normalizing zero-norm block to all-zeros");
        return;
    }
    for v in block.iter_mut() {
        *v = (f64::from(*v) / norm) as f32;
    }
}

/// Concatenate image and text encodings into the classifier feature.
/// Zero-norm blocks stay all-zero.
pub fn make_feature(image: &EmbeddingVector, text: &EmbeddingVector) -> FeatureVector {
    let mut values = Vec::with_capacity(FEATURE_DIM);
    values.extend_from_slice(image.values());
    values.extend_from_slice(text.values());
    l2_normalize(&mut values[..EMBED_DIM]);
    l2_normalize(&mut values[EMBED_DIM..]);
    FeatureVector(values)
}

/// A deterministic encoder of images and sentences into the shared space.
pub trait EmbeddingProvider {
    /// Stable identifier; cache entries are keyed by it.
    fn provider_id(&self) -> &str;

    fn dim(&self) -> usize {
        EMBED_DIM
    }

    fn encode_image(&self, image_id: &str) -> Result<EmbeddingVector>;

    fn encode_sentence(&self, text: &str) -> Result<EmbeddingVector>;
}

fn unit_gaussian(seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<f32> = (0..EMBED_DIM)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    l2_normalize(&mut values);
    values
}

/// Synthetic joint encoder.
///
/// Each canonical finding name maps to a seeded pseudo-random unit direction;
/// polarity flips the sign of the first [`POLARITY_DIMS`] components. An image
/// encodes as the normalized sum of its ground-truth report's finding
/// directions plus small per-image noise; a sentence as the normalized sum of
/// its extracted findings plus per-text noise. Finding-free inputs map to a
/// reserved neutral direction.
pub struct ReferenceEmbedder {
    provider_id: String,
    seed: u64,
    extractor: Extractor,
    image_findings: BTreeMap<String, Vec<Finding>>,
    directions: BTreeMap<Finding, Vec<f32>>,
    neutral: Vec<f32>,
}

impl ReferenceEmbedder {
    /// Build an embedder that resolves image ids against the corpus: each
    /// image carries the findings extracted from its report's sentences.
    pub fn from_corpus(corpus: &Corpus, extractor: Extractor, seed: u64) -> ReferenceEmbedder {
        let mut image_findings = BTreeMap::new();
        for report in &corpus.reports {
            let mut findings: Vec<Finding> = Vec::new();
            for sentence in &report.sentences {
                for f in extractor.extract_findings(&sentence.text) {
                    if !findings.contains(&f) {
                        findings.push(f);
                    }
                }
            }
            for image_id in &report.image_ids {
                image_findings.insert(image_id.clone(), findings.clone());
            }
        }
        ReferenceEmbedder::with_image_findings(extractor, image_findings, seed)
    }

    /// Text-side-only embedder (no images resolvable), e.g. for report
    /// quality scoring.
    pub fn text_only(extractor: Extractor, seed: u64) -> ReferenceEmbedder {
        ReferenceEmbedder::with_image_findings(extractor, BTreeMap::new(), seed)
    }

    pub fn with_image_findings(
        extractor: Extractor,
        image_findings: BTreeMap<String, Vec<Finding>>,
        seed: u64,
    ) -> ReferenceEmbedder {
        let mut directions = BTreeMap::new();
        for name in extractor.lexicon().canonicals() {
            let base = unit_gaussian(crate::hash::child_seed(seed, &format!("dir:{name}")));
            let mut negative = base.clone();
            for v in negative.iter_mut().take(POLARITY_DIMS) {
                *v = -*v;
            }
            directions.insert(Finding::positive(name), base);
            directions.insert(Finding::negative(name), negative);
        }
        let neutral = unit_gaussian(crate::hash::child_seed(seed, "dir:<neutral>"));
        ReferenceEmbedder {
            provider_id: format!("reference:{seed}"),
            seed,
            extractor,
            image_findings,
            directions,
            neutral,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Direction assigned to a finding channel, when it is in the lexicon.
    pub fn direction(&self, finding: &Finding) -> Option<&[f32]> {
        self.directions.get(finding).map(Vec::as_slice)
    }

    fn encode_findings(&self, findings: &[Finding], noise_label: &str) -> EmbeddingVector {
        let mut sum = vec![0.0f64; EMBED_DIM];
        let mut any = false;
        for finding in findings {
            if let Some(direction) = self.directions.get(finding) {
                for (acc, &v) in sum.iter_mut().zip(direction) {
                    *acc += f64::from(v);
                }
                any = true;
            }
        }
        if !any {
            for (acc, &v) in sum.iter_mut().zip(&self.neutral) {
                *acc += f64::from(v);
            }
        }
        let noise = unit_gaussian(crate::hash::child_seed(self.seed, noise_label));
        for (acc, &n) in sum.iter_mut().zip(&noise) {
            *acc += f64::from(n) * f64::from(REFERENCE_NOISE);
        }
        let mut values: Vec<f32> = sum.into_iter().map(|v| v as f32).collect();
        l2_normalize(&mut values);
        EmbeddingVector(values)
    }
}

impl EmbeddingProvider for ReferenceEmbedder {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn encode_image(&self, image_id: &str) -> Result<EmbeddingVector> {
        let findings = self
            .image_findings
            .get(image_id)
            .ok_or_else(|| Error::Lookup(format!("unknown image '{image_id}'")))?;
        Ok(self.encode_findings(findings, &format!("img:{image_id}")))
    }

    fn encode_sentence(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(Error::Validation("cannot encode empty text".into()));
        }
        let findings = self.extractor.extract_findings(text);
        Ok(self.encode_findings(&findings, &format!("txt:{text}")))
    }
}

// Cache file layout (little-endian): magic "EMB1", u32 version, u32 dim,
// u32 count, then count records of [u16 id-length, id bytes, dim f32].
const CACHE_MAGIC: &[u8; 4] = b"EMB1";
const CACHE_VERSION: u32 = 1;

const KEY_SEPARATOR: char = '\u{1f}';

/// Cache key for an image embedding, namespaced by provider.
pub fn image_key(provider_id: &str, image_id: &str) -> String {
    format!("{provider_id}{KEY_SEPARATOR}img{KEY_SEPARATOR}{image_id}")
}

/// Cache key for a sentence embedding, namespaced by provider.
pub fn text_key(provider_id: &str, text: &str) -> String {
    format!("{provider_id}{KEY_SEPARATOR}txt{KEY_SEPARATOR}{text}")
}

/// Write embeddings to the binary cache format; bit-exact on read-back.
pub fn cache_write(path: &Path, entries: &BTreeMap<String, EmbeddingVector>) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    writer.write_all(CACHE_MAGIC)?;
    writer.write_all(&CACHE_VERSION.to_le_bytes())?;
    writer.write_all(&(EMBED_DIM as u32).to_le_bytes())?;
    writer.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (id, vector) in entries {
        let bytes = id.as_bytes();
        if bytes.len() > usize::from(u16::MAX) {
            return Err(Error::Format(format!("cache id too long ({} bytes)", bytes.len())));
        }
        writer.write_all(&(bytes.len() as u16).to_le_bytes())?;
        writer.write_all(bytes)?;
        for &v in vector.values() {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn read_exact_or_corrupt(reader: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    reader
        .read_exact(buf)
        .map_err(|_| Error::Format("cache file truncated".into()))
}

/// Read a cache file written by [`cache_write`].
pub fn cache_read(path: &Path) -> Result<BTreeMap<String, EmbeddingVector>> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact_or_corrupt(&mut reader, &mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Format("bad cache magic".into()));
    }
    let mut word = [0u8; 4];
    read_exact_or_corrupt(&mut reader, &mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    read_exact_or_corrupt(&mut reader, &mut word)?;
    let dim = u32::from_le_bytes(word) as usize;
    if dim != EMBED_DIM {
        return Err(Error::Format(format!(
            "cache dimension {dim}, expected {EMBED_DIM}"
        )));
    }
    read_exact_or_corrupt(&mut reader, &mut word)?;
    let count = u32::from_le_bytes(word) as usize;

    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let mut len_bytes = [0u8; 2];
        read_exact_or_corrupt(&mut reader, &mut len_bytes)?;
        let id_len = u16::from_le_bytes(len_bytes) as usize;
        let mut id_bytes = vec![0u8; id_len];
        read_exact_or_corrupt(&mut reader, &mut id_bytes)?;
        let id = String::from_utf8(id_bytes)
            .map_err(|_| Error::Format("cache id is not UTF-8".into()))?;
        let mut values = Vec::with_capacity(dim);
        let mut scalar = [0u8; 4];
        for _ in 0..dim {
            read_exact_or_corrupt(&mut reader, &mut scalar)?;
            values.push(f32::from_le_bytes(scalar));
        }
        entries.insert(id, EmbeddingVector(values));
    }
    Ok(entries)
}

/// Serves embeddings from a cache file produced elsewhere (for example by a
/// real joint-encoder checkpoint run offline). The file must contain entries
/// for exactly one provider id.
pub struct CacheProvider {
    provider_id: String,
    images: BTreeMap<String, EmbeddingVector>,
    texts: BTreeMap<String, EmbeddingVector>,
}

impl CacheProvider {
    pub fn open(path: &Path) -> Result<CacheProvider> {
        let entries = cache_read(path)?;
        let mut provider_id: Option<String> = None;
        let mut images = BTreeMap::new();
        let mut texts = BTreeMap::new();
        for (key, vector) in entries {
            let mut parts = key.splitn(3, KEY_SEPARATOR);
            let (pid, kind, id) = match (parts.next(), parts.next(), parts.next()) {
                (Some(p), Some(k), Some(i)) => (p, k, i),
                _ => return Err(Error::Format(format!("malformed cache key '{key}'"))),
            };
            match &provider_id {
                Some(existing) if existing != pid => {
                    return Err(Error::Format(format!(
                        "cache mixes providers '{existing}' and '{pid}'"
                    )));
                }
                None => provider_id = Some(pid.to_string()),
                _ => {}
            }
            match kind {
                "img" => {
                    images.insert(id.to_string(), vector);
                }
                "txt" => {
                    texts.insert(id.to_string(), vector);
                }
                other => {
                    return Err(Error::Format(format!("unknown cache entry kind '{other}'")));
                }
            }
        }
        let provider_id =
            provider_id.ok_or_else(|| Error::Format("cache file has no entries".into()))?;
        Ok(CacheProvider {
            provider_id,
            images,
            texts,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len() + self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty() && self.texts.is_empty()
    }
}

impl EmbeddingProvider for CacheProvider {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn encode_image(&self, image_id: &str) -> Result<EmbeddingVector> {
        self.images
            .get(image_id)
            .cloned()
            .ok_or_else(|| Error::Lookup(format!("image '{image_id}' not in cache")))
    }

    fn encode_sentence(&self, text: &str) -> Result<EmbeddingVector> {
        self.texts
            .get(text)
            .cloned()
            .ok_or_else(|| Error::Lookup(format!("sentence not in cache: '{text}'")))
    }
}

/// Compute cache entries for a set of images and sentence texts.
pub fn build_cache_entries(
    provider: &dyn EmbeddingProvider,
    image_ids: &[String],
    texts: &[String],
) -> Result<BTreeMap<String, EmbeddingVector>> {
    let pid = provider.provider_id();
    let mut entries = BTreeMap::new();
    for image_id in image_ids {
        entries.insert(image_key(pid, image_id), provider.encode_image(image_id)?);
    }
    for text in texts {
        entries.insert(text_key(pid, text), provider.encode_sentence(text)?);
    }
    Ok(entries)
}

/// Encode every pair, memoizing per unique image and sentence; returns
/// features aligned with labels.
pub fn featurize_pairs(
    pairs: &[LabeledPair],
    provider: &dyn EmbeddingProvider,
) -> Result<(Vec<FeatureVector>, Vec<Label>)> {
    let mut image_cache: BTreeMap<&str, EmbeddingVector> = BTreeMap::new();
    let mut text_cache: BTreeMap<&str, EmbeddingVector> = BTreeMap::new();
    let mut features = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    for pair in pairs {
        if !image_cache.contains_key(pair.image_id.as_str()) {
            image_cache.insert(&pair.image_id, provider.encode_image(&pair.image_id)?);
        }
        if !text_cache.contains_key(pair.sentence_text.as_str()) {
            text_cache.insert(&pair.sentence_text, provider.encode_sentence(&pair.sentence_text)?);
        }
        let image = &image_cache[pair.image_id.as_str()];
        let text = &text_cache[pair.sentence_text.as_str()];
        features.push(make_feature(image, text));
        labels.push(pair.label);
    }
    Ok((features, labels))
}
