//! Labeled image-sentence pairs for examiner training and evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split, SplitAssignment};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::synth::FakeRecord;

/// Examiner class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Real => write!(f, "real"),
            Label::Fake => write!(f, "fake"),
        }
    }
}

/// One training/eval unit: an image paired with a sentence and its label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub image_id: String,
    #[serde(rename = "sentence")]
    pub sentence_text: String,
    pub label: Label,
    pub split: Split,
    pub source: String,
}

/// Build the pair dataset: per report, one Real pair per original sentence
/// against the report's primary image, and one Fake pair per fake built on
/// that report using exactly the fake's injected sentence. Splits are
/// inherited from the report's patient. Duplicate (image, sentence, label)
/// triples collapse to the first occurrence; output is canonically ordered by
/// (image_id, label, sentence).
pub fn build_pairs(
    corpus: &Corpus,
    fakes: &[FakeRecord],
    splits: &SplitAssignment,
) -> Result<Vec<LabeledPair>> {
    let mut pairs = Vec::new();

    for report in &corpus.reports {
        let split = splits.split_of(&report.patient_id).ok_or_else(|| {
            Error::Validation(format!("patient '{}' has no split", report.patient_id))
        })?;
        let image_id = report.primary_image();
        for sentence in &report.sentences {
            pairs.push(LabeledPair {
                image_id: image_id.to_string(),
                sentence_text: sentence.text.clone(),
                label: Label::Real,
                split,
                source: report.report_id.clone(),
            });
        }
    }

    for fake in fakes {
        let report = corpus.report(&fake.base_report_id).ok_or_else(|| {
            Error::Validation(format!(
                "fake '{}' references unknown report '{}'",
                fake.fake_id, fake.base_report_id
            ))
        })?;
        let injected = fake.injected.as_ref().ok_or_else(|| {
            Error::Validation(format!("fake '{}' has no injected sentence", fake.fake_id))
        })?;
        let split = splits.split_of(&report.patient_id).ok_or_else(|| {
            Error::Validation(format!("patient '{}' has no split", report.patient_id))
        })?;
        pairs.push(LabeledPair {
            image_id: report.primary_image().to_string(),
            sentence_text: injected.text.clone(),
            label: Label::Fake,
            split,
            source: fake.fake_id.clone(),
        });
    }

    pairs.sort_by(|a, b| {
        (a.image_id.as_str(), a.label, a.sentence_text.as_str()).cmp(&(
            b.image_id.as_str(),
            b.label,
            b.sentence_text.as_str(),
        ))
    });
    pairs.dedup_by(|a, b| {
        a.image_id == b.image_id && a.label == b.label && a.sentence_text == b.sentence_text
    });
    Ok(pairs)
}

/// Per-split label counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub real: usize,
    pub fake: usize,
}

impl LabelCounts {
    pub fn total(&self) -> usize {
        self.real + self.fake
    }
}

/// Exact pair counts per label and split, plus the Real:Fake class ratio.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub total: usize,
    pub real: usize,
    pub fake: usize,
    pub per_split: BTreeMap<Split, LabelCounts>,
    /// Real / Fake, when both classes are present.
    pub ratio: Option<f64>,
}

pub fn pair_stats(pairs: &[LabeledPair]) -> PairStats {
    let mut stats = PairStats {
        total: pairs.len(),
        ..PairStats::default()
    };
    for pair in pairs {
        let counts = stats.per_split.entry(pair.split).or_default();
        match pair.label {
            Label::Real => {
                counts.real += 1;
                stats.real += 1;
            }
            Label::Fake => {
                counts.fake += 1;
                stats.fake += 1;
            }
        }
    }
    if stats.real > 0 && stats.fake > 0 {
        stats.ratio = Some(stats.real as f64 / stats.fake as f64);
    }
    stats
}

pub fn write_pairs_jsonl(pairs: &[LabeledPair], path: &Path) -> Result<()> {
    jsonl::write_jsonl(path, pairs)
}

pub fn read_pairs_jsonl(path: &Path) -> Result<Vec<LabeledPair>> {
    jsonl::read_jsonl(path)
}
