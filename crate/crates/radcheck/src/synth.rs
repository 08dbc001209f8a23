//! Fake report synthesis: add, exchange and reverse perturbations over real
//! reports, with full provenance and exact skip accounting.
//!
//! Callers must pass an annotated corpus (findings attached to sentences) and
//! pools built from that same corpus. Each (report, perturbation) attempt is
//! driven by its own child seed, so any single fake is reproducible without
//! re-running the whole corpus.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_whitespace, Corpus, Finding, Report, Sentence};
use crate::error::{Error, Result};
use crate::extract::{FindingPool, SentencePool};
use crate::hash::child_seed;
use crate::jsonl;

/// The three perturbation operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationType {
    Add,
    Exchange,
    Reverse,
}

impl PerturbationType {
    pub const ALL: [PerturbationType; 3] = [
        PerturbationType::Add,
        PerturbationType::Exchange,
        PerturbationType::Reverse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbationType::Add => "add",
            PerturbationType::Exchange => "exchange",
            PerturbationType::Reverse => "reverse",
        }
    }
}

impl fmt::Display for PerturbationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A perturbed report with provenance sufficient to reconstruct its base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FakeReport {
    pub fake_id: String,
    pub base_report_id: String,
    pub ptype: PerturbationType,
    pub sentences: Vec<Sentence>,
    pub injected: Option<Sentence>,
    pub removed: Option<Sentence>,
    pub injected_finding: Option<Finding>,
    pub removed_finding: Option<Finding>,
    pub seed: u64,
}

impl FakeReport {
    pub fn text(&self) -> String {
        let parts: Vec<&str> = self.sentences.iter().map(|s| s.text.as_str()).collect();
        parts.join(" ")
    }
}

/// Why a (report, perturbation) attempt produced no fake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// No pool finding outside the report is indexed by a sentence.
    NoEligibleFinding,
    /// The report carries no findings at all.
    NoFindings,
    /// No finding in the report has an opposite-polarity pool sentence.
    NoReversibleFinding,
    /// Every drawn replacement matched an existing base sentence.
    NoDistinctReplacement,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            SkipReason::NoEligibleFinding => "no eligible finding outside the report",
            SkipReason::NoFindings => "report has no findings",
            SkipReason::NoReversibleFinding => "no finding with an opposite-polarity pool sentence",
            SkipReason::NoDistinctReplacement => "no replacement sentence distinct from the base",
        };
        f.write_str(text)
    }
}

/// A recorded skip; skips are data, not failures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisSkip {
    pub report_id: String,
    pub ptype: PerturbationType,
    pub reason: SkipReason,
}

const MAX_REDRAWS: usize = 10;

fn comparable(text: &str) -> String {
    normalize_whitespace(text).to_lowercase()
}

/// Draw a pool sentence for `finding`, redrawing when the candidate equals an
/// existing base sentence (case-insensitive, whitespace-normalized).
fn draw_replacement(
    report: &Report,
    spool: &SentencePool,
    finding: &Finding,
    rng: &mut ChaCha8Rng,
) -> Option<Sentence> {
    let candidates = spool.sentences_with(finding);
    if candidates.is_empty() {
        return None;
    }
    let base: Vec<String> = report.sentences.iter().map(|s| comparable(&s.text)).collect();
    for _ in 0..MAX_REDRAWS {
        let id = &candidates[rng.random_range(0..candidates.len())];
        let sentence = spool.get(id).expect("index entries resolve");
        if !base.contains(&comparable(&sentence.text)) {
            return Some(sentence.clone());
        }
    }
    None
}

/// Findings present in the pool but not in the report, restricted to those
/// with at least one pool sentence.
fn eligible_foreign_findings(
    report: &Report,
    fpool: &FindingPool,
    spool: &SentencePool,
) -> Vec<Finding> {
    let present = report.finding_set();
    fpool
        .findings
        .iter()
        .filter(|f| !present.contains(*f) && spool.contains_finding(f))
        .cloned()
        .collect()
}

/// Indices of sentences carrying the finding.
fn carrier_indices(report: &Report, finding: &Finding) -> Vec<usize> {
    report
        .sentences
        .iter()
        .enumerate()
        .filter(|(_, s)| s.findings.contains(finding))
        .map(|(i, _)| i)
        .collect()
}

fn fake_id(report: &Report, ptype: PerturbationType) -> String {
    format!("{}:{}", report.report_id, ptype.as_str())
}

/// Append a pool sentence describing a finding absent from the report, at a
/// uniformly random position.
pub fn synthesize_add(
    report: &Report,
    fpool: &FindingPool,
    spool: &SentencePool,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> std::result::Result<FakeReport, SkipReason> {
    let eligible = eligible_foreign_findings(report, fpool, spool);
    if eligible.is_empty() {
        return Err(SkipReason::NoEligibleFinding);
    }
    let finding = eligible[rng.random_range(0..eligible.len())].clone();
    let injected =
        draw_replacement(report, spool, &finding, rng).ok_or(SkipReason::NoDistinctReplacement)?;
    let position = rng.random_range(0..=report.sentences.len());

    let mut sentences = report.sentences.clone();
    sentences.insert(position, injected.clone());
    Ok(FakeReport {
        fake_id: fake_id(report, PerturbationType::Add),
        base_report_id: report.report_id.clone(),
        ptype: PerturbationType::Add,
        sentences,
        injected: Some(injected),
        removed: None,
        injected_finding: Some(finding),
        removed_finding: None,
        seed,
    })
}

/// Remove a sentence carrying one of the report's findings and insert, at the
/// removed position, a pool sentence carrying a foreign finding.
pub fn synthesize_exchange(
    report: &Report,
    fpool: &FindingPool,
    spool: &SentencePool,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> std::result::Result<FakeReport, SkipReason> {
    let own = report.findings();
    if own.is_empty() {
        return Err(SkipReason::NoFindings);
    }
    let removed_finding = own[rng.random_range(0..own.len())].clone();
    let carriers = carrier_indices(report, &removed_finding);
    let removed_idx = carriers[rng.random_range(0..carriers.len())];

    let eligible = eligible_foreign_findings(report, fpool, spool);
    if eligible.is_empty() {
        return Err(SkipReason::NoEligibleFinding);
    }
    let injected_finding = eligible[rng.random_range(0..eligible.len())].clone();
    let injected = draw_replacement(report, spool, &injected_finding, rng)
        .ok_or(SkipReason::NoDistinctReplacement)?;

    let mut sentences = report.sentences.clone();
    let removed = std::mem::replace(&mut sentences[removed_idx], injected.clone());
    Ok(FakeReport {
        fake_id: fake_id(report, PerturbationType::Exchange),
        base_report_id: report.report_id.clone(),
        ptype: PerturbationType::Exchange,
        sentences,
        injected: Some(injected),
        removed: Some(removed),
        injected_finding: Some(injected_finding),
        removed_finding: Some(removed_finding),
        seed,
    })
}

/// Replace a sentence carrying a finding with a pool sentence carrying the
/// same finding at opposite polarity.
pub fn synthesize_reverse(
    report: &Report,
    spool: &SentencePool,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> std::result::Result<FakeReport, SkipReason> {
    let own = report.findings();
    if own.is_empty() {
        return Err(SkipReason::NoFindings);
    }
    let reversible: Vec<Finding> = own
        .iter()
        .filter(|f| spool.contains_finding(&f.flipped()))
        .cloned()
        .collect();
    if reversible.is_empty() {
        return Err(SkipReason::NoReversibleFinding);
    }
    let removed_finding = reversible[rng.random_range(0..reversible.len())].clone();
    let carriers = carrier_indices(report, &removed_finding);
    let removed_idx = carriers[rng.random_range(0..carriers.len())];
    let injected_finding = removed_finding.flipped();
    let injected = draw_replacement(report, spool, &injected_finding, rng)
        .ok_or(SkipReason::NoDistinctReplacement)?;

    let mut sentences = report.sentences.clone();
    let removed = std::mem::replace(&mut sentences[removed_idx], injected.clone());
    Ok(FakeReport {
        fake_id: fake_id(report, PerturbationType::Reverse),
        base_report_id: report.report_id.clone(),
        ptype: PerturbationType::Reverse,
        sentences,
        injected: Some(injected),
        removed: Some(removed),
        injected_finding: Some(injected_finding),
        removed_finding: Some(removed_finding),
        seed,
    })
}

/// Attempt all three perturbations for every report. Always:
/// `fakes.len() + skips.len() == 3 * corpus.reports.len()`.
///
/// Output is canonically ordered by (report_id, perturbation); each attempt
/// runs under the child seed `hash(seed, report_id, ptype)`.
pub fn synthesize_corpus(
    corpus: &Corpus,
    fpool: &FindingPool,
    spool: &SentencePool,
    seed: u64,
) -> (Vec<FakeReport>, Vec<SynthesisSkip>) {
    let mut fakes = Vec::new();
    let mut skips = Vec::new();
    for report in &corpus.reports {
        for ptype in PerturbationType::ALL {
            let attempt_seed = child_seed(seed, &format!("{}:{}", report.report_id, ptype));
            let mut rng = ChaCha8Rng::seed_from_u64(attempt_seed);
            let outcome = match ptype {
                PerturbationType::Add => {
                    synthesize_add(report, fpool, spool, &mut rng, attempt_seed)
                }
                PerturbationType::Exchange => {
                    synthesize_exchange(report, fpool, spool, &mut rng, attempt_seed)
                }
                PerturbationType::Reverse => {
                    synthesize_reverse(report, spool, &mut rng, attempt_seed)
                }
            };
            match outcome {
                Ok(fake) => fakes.push(fake),
                Err(reason) => skips.push(SynthesisSkip {
                    report_id: report.report_id.clone(),
                    ptype,
                    reason,
                }),
            }
        }
    }
    fakes.sort_by(|a, b| {
        (a.base_report_id.as_str(), a.ptype).cmp(&(b.base_report_id.as_str(), b.ptype))
    });
    skips.sort_by(|a, b| {
        (a.report_id.as_str(), a.ptype).cmp(&(b.report_id.as_str(), b.ptype))
    });
    (fakes, skips)
}

/// Rebuild the base report's sentences from a fake and its provenance.
pub fn reconstruct_base(fake: &FakeReport) -> Result<Vec<Sentence>> {
    let injected = fake
        .injected
        .as_ref()
        .ok_or_else(|| Error::Validation(format!("fake '{}' has no injected sentence", fake.fake_id)))?;
    let position = fake
        .sentences
        .iter()
        .position(|s| s.sentence_id == injected.sentence_id && s.text == injected.text)
        .ok_or_else(|| {
            Error::Validation(format!(
                "fake '{}' does not contain its injected sentence",
                fake.fake_id
            ))
        })?;
    let mut sentences = fake.sentences.clone();
    match fake.ptype {
        PerturbationType::Add => {
            sentences.remove(position);
        }
        PerturbationType::Exchange | PerturbationType::Reverse => {
            let removed = fake.removed.as_ref().ok_or_else(|| {
                Error::Validation(format!("fake '{}' has no removed sentence", fake.fake_id))
            })?;
            sentences[position] = removed.clone();
        }
    }
    Ok(sentences)
}

/// Provenance half of the fakes interchange record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceSentence {
    pub sentence_id: String,
    pub text: String,
    pub finding: Option<Finding>,
}

/// One line of the fakes JSONL interchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FakeRecord {
    pub fake_id: String,
    pub base_report_id: String,
    pub ptype: PerturbationType,
    pub text: String,
    pub injected: Option<ProvenanceSentence>,
    pub removed: Option<ProvenanceSentence>,
    pub seed: u64,
}

impl From<&FakeReport> for FakeRecord {
    fn from(fake: &FakeReport) -> FakeRecord {
        let provenance = |sentence: &Option<Sentence>, finding: &Option<Finding>| {
            sentence.as_ref().map(|s| ProvenanceSentence {
                sentence_id: s.sentence_id.clone(),
                text: s.text.clone(),
                finding: finding.clone(),
            })
        };
        FakeRecord {
            fake_id: fake.fake_id.clone(),
            base_report_id: fake.base_report_id.clone(),
            ptype: fake.ptype,
            text: fake.text(),
            injected: provenance(&fake.injected, &fake.injected_finding),
            removed: provenance(&fake.removed, &fake.removed_finding),
            seed: fake.seed,
        }
    }
}

pub fn to_records(fakes: &[FakeReport]) -> Vec<FakeRecord> {
    fakes.iter().map(FakeRecord::from).collect()
}

pub fn write_fakes_jsonl(fakes: &[FakeRecord], path: &Path) -> Result<()> {
    jsonl::write_jsonl(path, fakes)
}

pub fn read_fakes_jsonl(path: &Path) -> Result<Vec<FakeRecord>> {
    jsonl::read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Polarity;
    use crate::extract::{Extractor, FindingLexicon};

    fn setup() -> (Corpus, FindingPool, SentencePool) {
        let extractor = Extractor::new(FindingLexicon::default_chest_xray());
        let corpus = crate::synthetic::corpus(&crate::synthetic::SyntheticConfig {
            n_reports: 30,
            seed: 11,
            ..Default::default()
        });
        let (fpool, spool) = extractor.build_pools(&corpus);
        (corpus, fpool, spool)
    }

    #[test]
    fn add_injects_foreign_finding_and_grows_by_one() {
        let (corpus, fpool, spool) = setup();
        for report in &corpus.reports {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let fake = synthesize_add(report, &fpool, &spool, &mut rng, 1).unwrap();
            assert_eq!(fake.sentences.len(), report.sentences.len() + 1);
            let injected = fake.injected_finding.clone().unwrap();
            assert!(!report.finding_set().contains(&injected));
            assert!(fake.removed.is_none());
        }
    }

    #[test]
    fn exchange_preserves_length_and_swaps_findings() {
        let (corpus, fpool, spool) = setup();
        let report = &corpus.reports[0];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fake = synthesize_exchange(report, &fpool, &spool, &mut rng, 7).unwrap();
        assert_eq!(fake.sentences.len(), report.sentences.len());
        let removed = fake.removed_finding.clone().unwrap();
        let injected = fake.injected_finding.clone().unwrap();
        assert!(report.finding_set().contains(&removed));
        assert!(!report.finding_set().contains(&injected));
    }

    #[test]
    fn reverse_flips_polarity() {
        let (corpus, _, spool) = setup();
        for report in corpus.reports.iter().take(10) {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let fake = synthesize_reverse(report, &spool, &mut rng, 3).unwrap();
            let removed = fake.removed_finding.clone().unwrap();
            let injected = fake.injected_finding.clone().unwrap();
            assert_eq!(injected, removed.flipped());
            assert_eq!(fake.sentences.len(), report.sentences.len());
        }
    }

    #[test]
    fn reverse_without_opposite_pool_sentence_skips() {
        let extractor = Extractor::new(FindingLexicon::default_chest_xray());
        // Single report: its only finding has no opposite-polarity sentence.
        let sentences = extractor.parse_report("There is effusion.");
        let report = Report {
            report_id: "r0".into(),
            patient_id: "p0".into(),
            image_ids: vec!["x0".into()],
            sentences,
        };
        let corpus = Corpus {
            reports: vec![report.clone()],
            images: vec![crate::corpus::ImageRef {
                image_id: "x0".into(),
                view: crate::corpus::View::Frontal,
                uri: "x0".into(),
            }],
            provenance: Default::default(),
        };
        let (_, spool) = extractor.build_pools(&corpus);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = synthesize_reverse(&report, &spool, &mut rng, 0).unwrap_err();
        assert_eq!(err, SkipReason::NoReversibleFinding);
    }

    #[test]
    fn corpus_accounting_is_exact() {
        let (corpus, fpool, spool) = setup();
        let (fakes, skips) = synthesize_corpus(&corpus, &fpool, &spool, 17);
        assert_eq!(fakes.len() + skips.len(), 3 * corpus.reports.len());
    }

    #[test]
    fn corpus_synthesis_is_deterministic() {
        let (corpus, fpool, spool) = setup();
        let (a, _) = synthesize_corpus(&corpus, &fpool, &spool, 99);
        let (b, _) = synthesize_corpus(&corpus, &fpool, &spool, 99);
        assert_eq!(a, b);
        let (c, _) = synthesize_corpus(&corpus, &fpool, &spool, 100);
        assert_ne!(a, c);
    }

    #[test]
    fn fakes_always_change_the_finding_multiset() {
        let (corpus, fpool, spool) = setup();
        let (fakes, _) = synthesize_corpus(&corpus, &fpool, &spool, 23);
        for fake in &fakes {
            let base = corpus.report(&fake.base_report_id).unwrap();
            let mut base_findings: Vec<Finding> =
                base.sentences.iter().flat_map(|s| s.findings.clone()).collect();
            let mut fake_findings: Vec<Finding> =
                fake.sentences.iter().flat_map(|s| s.findings.clone()).collect();
            base_findings.sort();
            fake_findings.sort();
            assert_ne!(base_findings, fake_findings, "fake {}", fake.fake_id);
        }
    }

    #[test]
    fn provenance_reconstructs_base() {
        let (corpus, fpool, spool) = setup();
        let (fakes, _) = synthesize_corpus(&corpus, &fpool, &spool, 5);
        for fake in &fakes {
            let base = corpus.report(&fake.base_report_id).unwrap();
            let rebuilt = reconstruct_base(fake).unwrap();
            assert_eq!(rebuilt, base.sentences, "fake {}", fake.fake_id);
        }
    }

    #[test]
    fn injected_sentences_come_from_the_pool() {
        let (corpus, fpool, spool) = setup();
        let (fakes, _) = synthesize_corpus(&corpus, &fpool, &spool, 41);
        for fake in &fakes {
            let injected = fake.injected.as_ref().unwrap();
            let pooled = spool.get(&injected.sentence_id).unwrap();
            assert_eq!(pooled.text, injected.text);
        }
    }

    #[test]
    fn records_round_trip_through_jsonl() {
        let (corpus, fpool, spool) = setup();
        let (fakes, _) = synthesize_corpus(&corpus, &fpool, &spool, 2);
        let records = to_records(&fakes);
        let file = tempfile::NamedTempFile::new().unwrap();
        write_fakes_jsonl(&records, file.path()).unwrap();
        let back = read_fakes_jsonl(file.path()).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn paper_style_reverse_example() {
        // "There is pneumothorax." with an opposite-polarity pool sentence.
        let extractor = Extractor::new(FindingLexicon::default_chest_xray());
        let mk = |id: &str, patient: &str, text: &str| Report {
            report_id: id.into(),
            patient_id: patient.into(),
            image_ids: vec![format!("x-{id}")],
            sentences: extractor
                .parse_report(text)
                .into_iter()
                .enumerate()
                .map(|(i, s)| Sentence::new(format!("{id}:{i}"), &s.text, s.findings))
                .collect(),
        };
        let reports = vec![
            mk("r0", "p0", "There is pneumothorax."),
            mk("r1", "p1", "There is no pneumothorax."),
        ];
        let images = reports
            .iter()
            .map(|r| crate::corpus::ImageRef {
                image_id: r.image_ids[0].clone(),
                view: crate::corpus::View::Frontal,
                uri: r.image_ids[0].clone(),
            })
            .collect();
        let corpus = Corpus {
            reports,
            images,
            provenance: Default::default(),
        };
        let (_, spool) = extractor.build_pools(&corpus);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fake = synthesize_reverse(&corpus.reports[0], &spool, &mut rng, 4).unwrap();
        assert_eq!(fake.sentences[0].text, "There is no pneumothorax.");
        assert_eq!(
            fake.injected_finding.unwrap(),
            Finding {
                name: "pneumothorax".into(),
                polarity: Polarity::Negative
            }
        );
    }
}
