//! Domain types for reports and images, the normalized JSONL interchange
//! format, and patient-level corpus splitting.

mod indiana;

pub use indiana::{ingest_indiana, IndianaOptions};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

/// Whether a finding is asserted present or absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn flipped(self) -> Polarity {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarity::Positive => write!(f, "positive"),
            Polarity::Negative => write!(f, "negative"),
        }
    }
}

/// A canonical clinical observation with polarity. Equality is
/// (name, polarity); the reversed counterpart differs only in polarity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Finding {
    pub name: String,
    pub polarity: Polarity,
}

impl Finding {
    pub fn positive(name: impl Into<String>) -> Finding {
        Finding {
            name: name.into(),
            polarity: Polarity::Positive,
        }
    }

    pub fn negative(name: impl Into<String>) -> Finding {
        Finding {
            name: name.into(),
            polarity: Polarity::Negative,
        }
    }

    /// The same finding with opposite polarity.
    pub fn flipped(&self) -> Finding {
        Finding {
            name: self.name.clone(),
            polarity: self.polarity.flipped(),
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = match self.polarity {
            Polarity::Positive => '+',
            Polarity::Negative => '-',
        };
        write!(f, "{}{}", self.name, sign)
    }
}

/// One report sentence with the findings detected in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub sentence_id: String,
    pub text: String,
    pub findings: Vec<Finding>,
}

impl Sentence {
    /// Normalizes whitespace (no newlines, single internal spaces, trimmed)
    /// and deduplicates findings.
    pub fn new(sentence_id: impl Into<String>, text: &str, findings: Vec<Finding>) -> Sentence {
        let mut deduped: Vec<Finding> = Vec::new();
        for f in findings {
            if !deduped.contains(&f) {
                deduped.push(f);
            }
        }
        Sentence {
            sentence_id: sentence_id.into(),
            text: normalize_whitespace(text),
            findings: deduped,
        }
    }
}

/// Collapse whitespace runs to single spaces and trim the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Chest X-ray projection of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Frontal,
    Lateral,
    Unknown,
}

impl View {
    pub fn parse(label: &str) -> View {
        match label.trim().to_ascii_lowercase().as_str() {
            "frontal" => View::Frontal,
            "lateral" => View::Lateral,
            _ => View::Unknown,
        }
    }
}

/// An image known to the corpus; pixels are resolved elsewhere via `uri`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_id: String,
    pub view: View,
    pub uri: String,
}

/// A ground-truth report: ordered sentences plus the images of its study.
/// The first image id is the designated primary image for pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub report_id: String,
    pub patient_id: String,
    pub image_ids: Vec<String>,
    pub sentences: Vec<Sentence>,
}

impl Report {
    /// Union of sentence findings, deduplicated, in first-seen order.
    pub fn findings(&self) -> Vec<Finding> {
        let mut out: Vec<Finding> = Vec::new();
        for s in &self.sentences {
            for f in &s.findings {
                if !out.contains(f) {
                    out.push(f.clone());
                }
            }
        }
        out
    }

    /// Set view of the findings, for eligibility arithmetic.
    pub fn finding_set(&self) -> BTreeSet<Finding> {
        self.findings().into_iter().collect()
    }

    /// Full report text: sentences joined with single spaces.
    pub fn text(&self) -> String {
        let parts: Vec<&str> = self.sentences.iter().map(|s| s.text.as_str()).collect();
        parts.join(" ")
    }

    /// Image paired with this report's sentences.
    pub fn primary_image(&self) -> &str {
        &self.image_ids[0]
    }
}

/// Counts of what ingestion kept and dropped, so that
/// `reports + dropped = source records` always holds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub source_records: usize,
    pub dropped_empty: usize,
    pub dropped_duplicate: usize,
    pub dropped_no_image: usize,
}

impl Provenance {
    pub fn dropped_total(&self) -> usize {
        self.dropped_empty + self.dropped_duplicate + self.dropped_no_image
    }
}

/// An immutable collection of reports and their images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub reports: Vec<Report>,
    pub images: Vec<ImageRef>,
    pub provenance: Provenance,
}

impl Corpus {
    /// Validates the corpus invariants: unique report and image ids, every
    /// referenced image present, every report non-degenerate.
    pub fn validate(&self) -> Result<()> {
        let mut report_ids = BTreeSet::new();
        let mut image_ids = BTreeSet::new();
        for img in &self.images {
            if !image_ids.insert(img.image_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate image_id '{}'",
                    img.image_id
                )));
            }
        }
        for report in &self.reports {
            if !report_ids.insert(report.report_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate report_id '{}'",
                    report.report_id
                )));
            }
            if report.patient_id.is_empty() {
                return Err(Error::Validation(format!(
                    "report '{}' has empty patient_id",
                    report.report_id
                )));
            }
            if report.image_ids.is_empty() {
                return Err(Error::Validation(format!(
                    "report '{}' has no images",
                    report.report_id
                )));
            }
            if report.sentences.is_empty() {
                return Err(Error::Validation(format!(
                    "report '{}' has no sentences",
                    report.report_id
                )));
            }
            for id in &report.image_ids {
                if !image_ids.contains(id.as_str()) {
                    return Err(Error::Validation(format!(
                        "report '{}' references unknown image '{}'",
                        report.report_id, id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn patient_ids(&self) -> BTreeSet<&str> {
        self.reports.iter().map(|r| r.patient_id.as_str()).collect()
    }

    pub fn report(&self, report_id: &str) -> Option<&Report> {
        self.reports.iter().find(|r| r.report_id == report_id)
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageRef> {
        self.images.iter().find(|i| i.image_id == image_id)
    }
}

/// Partition a patient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
            Split::Eval => write!(f, "eval"),
        }
    }
}

/// Patient-level split assignment; every patient is in exactly one split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub by_patient: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn split_of(&self, patient_id: &str) -> Option<Split> {
        self.by_patient.get(patient_id).copied()
    }

    pub fn patients_in(&self, split: Split) -> Vec<&str> {
        self.by_patient
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for split in self.by_patient.values() {
            match split {
                Split::Train => counts.0 += 1,
                Split::Test => counts.1 += 1,
                Split::Eval => counts.2 += 1,
            }
        }
        counts
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.by_patient)
            .map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SplitAssignment> {
        let text = std::fs::read_to_string(path)?;
        let by_patient =
            serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        Ok(SplitAssignment { by_patient })
    }
}

/// Assign every patient to train/test/eval by shuffling patient ids with a
/// seeded RNG and cutting at the ratio boundaries. Test and eval take
/// `floor(n * ratio)` patients each; the remainder goes to train, so realized
/// counts are within one patient of the targets.
pub fn split_by_patient(
    corpus: &Corpus,
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    for r in ratios {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Validation(format!("ratio {r} outside [0, 1]")));
        }
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("ratios sum to {sum}, expected 1")));
    }

    let mut patients: Vec<String> = corpus
        .patient_ids()
        .into_iter()
        .map(str::to_owned)
        .collect();
    if patients.is_empty() {
        return Err(Error::Validation("corpus has no patients".into()));
    }

    // Sorted before shuffling so the assignment depends only on the patient
    // set and the seed, not on incoming report order.
    patients.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);

    let n = patients.len();
    let n_test = (n as f64 * ratios[1]).floor() as usize;
    let n_eval = (n as f64 * ratios[2]).floor() as usize;
    let n_train = n - n_test - n_eval;

    let mut by_patient = BTreeMap::new();
    for (idx, patient) in patients.into_iter().enumerate() {
        let split = if idx < n_train {
            Split::Train
        } else if idx < n_train + n_test {
            Split::Test
        } else {
            Split::Eval
        };
        by_patient.insert(patient, split);
    }
    Ok(SplitAssignment { by_patient })
}

/// One line of the corpus interchange format.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CorpusRecord {
    report_id: String,
    patient_id: String,
    image_ids: Vec<String>,
    views: Vec<View>,
    text: String,
}

/// Read a corpus from the normalized JSONL interchange format. Sentences are
/// re-split from the record text; findings are left empty until annotation.
pub fn read_corpus_jsonl(path: &Path) -> Result<Corpus> {
    let records: Vec<CorpusRecord> = jsonl::read_jsonl(path)?;
    corpus_from_records(records, path.display().to_string())
}

fn corpus_from_records(records: Vec<CorpusRecord>, source: String) -> Result<Corpus> {
    let mut reports = Vec::new();
    let mut images = Vec::new();
    let mut seen_reports = BTreeSet::new();
    let mut seen_images = BTreeSet::new();

    for (idx, record) in records.iter().enumerate() {
        let line = idx + 1;
        if record.report_id.is_empty() {
            return Err(Error::jsonl(line, "empty report_id"));
        }
        if !seen_reports.insert(record.report_id.clone()) {
            return Err(Error::jsonl(
                line,
                format!("duplicate report_id '{}'", record.report_id),
            ));
        }
        if record.patient_id.is_empty() {
            return Err(Error::jsonl(line, "empty patient_id"));
        }
        if record.image_ids.is_empty() {
            return Err(Error::jsonl(line, "record has no image_ids"));
        }
        if record.image_ids.len() != record.views.len() {
            return Err(Error::jsonl(
                line,
                format!(
                    "{} image_ids but {} views",
                    record.image_ids.len(),
                    record.views.len()
                ),
            ));
        }
        let texts = crate::extract::split_sentences(&record.text);
        if texts.is_empty() {
            return Err(Error::jsonl(line, "record text has no sentences"));
        }
        for (image_id, view) in record.image_ids.iter().zip(&record.views) {
            if !seen_images.insert(image_id.clone()) {
                return Err(Error::jsonl(
                    line,
                    format!("duplicate image_id '{image_id}'"),
                ));
            }
            images.push(ImageRef {
                image_id: image_id.clone(),
                view: *view,
                uri: image_id.clone(),
            });
        }
        let sentences = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Sentence::new(format!("{}:{i}", record.report_id), t, Vec::new()))
            .collect();
        reports.push(Report {
            report_id: record.report_id.clone(),
            patient_id: record.patient_id.clone(),
            image_ids: record.image_ids.clone(),
            sentences,
        });
    }

    let corpus = Corpus {
        reports,
        images,
        provenance: Provenance {
            source,
            source_records: records.len(),
            ..Provenance::default()
        },
    };
    corpus.validate()?;
    Ok(corpus)
}

/// Write a corpus in the normalized JSONL interchange format.
pub fn write_corpus_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    let views: BTreeMap<&str, View> = corpus
        .images
        .iter()
        .map(|i| (i.image_id.as_str(), i.view))
        .collect();
    let mut records = Vec::with_capacity(corpus.reports.len());
    for report in &corpus.reports {
        let record = CorpusRecord {
            report_id: report.report_id.clone(),
            patient_id: report.patient_id.clone(),
            image_ids: report.image_ids.clone(),
            views: report
                .image_ids
                .iter()
                .map(|id| views.get(id.as_str()).copied().unwrap_or(View::Unknown))
                .collect(),
            text: report.text(),
        };
        records.push(record);
    }
    jsonl::write_jsonl(path, &records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toy_corpus(patients: &[&str]) -> Corpus {
        let mut reports = Vec::new();
        let mut images = Vec::new();
        for (i, patient) in patients.iter().enumerate() {
            let report_id = format!("r{i}");
            let image_id = format!("img{i}");
            images.push(ImageRef {
                image_id: image_id.clone(),
                view: View::Frontal,
                uri: image_id.clone(),
            });
            reports.push(Report {
                report_id: report_id.clone(),
                patient_id: patient.to_string(),
                image_ids: vec![image_id],
                sentences: vec![Sentence::new(format!("{report_id}:0"), "No pneumothorax.", vec![])],
            });
        }
        Corpus {
            reports,
            images,
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn sentence_normalizes_whitespace_and_dedups_findings() {
        let f = Finding::positive("effusion");
        let s = Sentence::new("s0", "  There is\teffusion.\n", vec![f.clone(), f.clone()]);
        assert_eq!(s.text, "There is effusion.");
        assert_eq!(s.findings.len(), 1);
    }

    #[test]
    fn finding_flip_changes_only_polarity() {
        let f = Finding::positive("edema");
        let g = f.flipped();
        assert_eq!(g.name, "edema");
        assert_eq!(g.polarity, Polarity::Negative);
        assert_eq!(g.flipped(), f);
    }

    #[test]
    fn split_counts_match_floor_rule() {
        let patients: Vec<String> = (0..1786).map(|i| format!("p{i}")).collect();
        let refs: Vec<&str> = patients.iter().map(String::as_str).collect();
        let corpus = toy_corpus(&refs);
        let assignment = split_by_patient(&corpus, [0.6, 0.2, 0.2], 17).unwrap();
        assert_eq!(assignment.counts(), (1072, 357, 357));
    }

    #[test]
    fn split_single_patient_goes_to_train() {
        let corpus = toy_corpus(&["only"]);
        let assignment = split_by_patient(&corpus, [1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(assignment.split_of("only"), Some(Split::Train));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let patients: Vec<String> = (0..57).map(|i| format!("p{i}")).collect();
        let refs: Vec<&str> = patients.iter().map(String::as_str).collect();
        let corpus = toy_corpus(&refs);
        let a = split_by_patient(&corpus, [0.5, 0.25, 0.25], 9).unwrap();
        let b = split_by_patient(&corpus, [0.5, 0.25, 0.25], 9).unwrap();
        assert_eq!(a, b);
        let (tr, te, ev) = a.counts();
        assert_eq!(tr + te + ev, 57);
    }

    #[test]
    fn split_rejects_bad_ratios_and_empty_corpus() {
        let corpus = toy_corpus(&["p"]);
        assert!(split_by_patient(&corpus, [0.5, 0.2, 0.2], 0).is_err());
        let empty = Corpus {
            reports: vec![],
            images: vec![],
            provenance: Provenance::default(),
        };
        assert!(split_by_patient(&empty, [0.6, 0.2, 0.2], 0).is_err());
    }

    #[test]
    fn jsonl_reads_two_valid_lines() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            file,
            r#"{{"report_id":"r1","patient_id":"p1","image_ids":["i1"],"views":["frontal"],"text":"No pneumothorax. Heart size normal."}}"#
        )
        .unwrap();
        writeln!(
            file,
            r#"{{"report_id":"r2","patient_id":"p2","image_ids":["i2"],"views":["lateral"],"text":"There is effusion."}}"#
        )
        .unwrap();
        let corpus = read_corpus_jsonl(file.path()).unwrap();
        assert_eq!(corpus.reports.len(), 2);
        assert_eq!(corpus.reports[0].sentences.len(), 2);
        assert_eq!(corpus.images[1].view, View::Lateral);
    }

    #[test]
    fn jsonl_reports_line_number_for_missing_field() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            file,
            r#"{{"report_id":"r1","patient_id":"p1","image_ids":["i1"],"views":["frontal"],"text":"Ok."}}"#
        )
        .unwrap();
        writeln!(
            file,
            r#"{{"report_id":"r2","image_ids":["i2"],"views":["frontal"],"text":"Missing patient."}}"#
        )
        .unwrap();
        let err = read_corpus_jsonl(file.path()).unwrap_err();
        match err {
            Error::Jsonl { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn jsonl_rejects_duplicate_report_id() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for _ in 0..2 {
            writeln!(
                file,
                r#"{{"report_id":"r1","patient_id":"p1","image_ids":["i1"],"views":["frontal"],"text":"Ok."}}"#
            )
            .unwrap();
        }
        let err = read_corpus_jsonl(file.path()).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }
}
