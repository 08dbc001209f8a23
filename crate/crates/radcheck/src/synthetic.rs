//! Deterministic synthetic report corpus for offline runs, examples and
//! tests.
//!
//! Generated studies mimic the structure of screening chest X-ray reports:
//! every report comments on a fixed set of findings (pertinent negatives),
//! most studies are normal, and an abnormal study asserts exactly one
//! positive finding. That composition keeps real and fake image-sentence
//! pairs linearly separable in the reference embedding space, so a linear
//! examiner trained on this corpus has headroom to be accurate.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, ImageRef, Provenance, Report, Sentence, View};
use crate::extract::{Extractor, FindingLexicon};
use crate::hash::child_seed;

/// Findings every synthetic report comments on.
const VOCABULARY: &[&str] = &[
    "pneumothorax",
    "atelectasis",
    "edema",
    "cardiomegaly",
    "pneumonia",
    "fracture",
    "nodule",
    "emphysema",
];

const POSITIVE_TEMPLATES: &[&str] = &[
    "There is {}.",
    "There appears to be {}.",
    "Findings are consistent with {}.",
    "Interval development of {}.",
];

const NEGATIVE_TEMPLATES: &[&str] = &[
    "No {}.",
    "No evidence of {}.",
    "There is no {}.",
    "The study is without {}.",
];

const FILLER_SENTENCES: &[&str] = &[
    "The heart size is within normal limits.",
    "Mediastinal contours are unremarkable.",
    "Osseous structures are intact.",
    "Visualized soft tissues are unremarkable.",
    "The lungs are well expanded.",
];

/// Corpus generation knobs.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n_reports: usize,
    pub seed: u64,
    /// Fraction of reports carrying one positive finding.
    pub abnormal_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_reports: 500,
            seed: 0,
            abnormal_rate: 0.2,
        }
    }
}

/// The finding names used by the generator.
pub fn vocabulary() -> &'static [&'static str] {
    VOCABULARY
}

/// Generate an annotated corpus. Deterministic per (config), and each report
/// depends only on its own child seed.
pub fn corpus(config: &SyntheticConfig) -> Corpus {
    let extractor = Extractor::new(FindingLexicon::default_chest_xray());
    let mut reports = Vec::with_capacity(config.n_reports);
    let mut images = Vec::new();
    let mut patient_counter = 0usize;

    for idx in 0..config.n_reports {
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(config.seed, &format!("report:{idx}")));
        let report_id = format!("r{idx:04}");

        // Roughly every fifth report is a follow-up study of the previous
        // report's patient.
        if idx == 0 || idx % 5 != 4 {
            patient_counter += 1;
        }
        let patient_id = format!("p{:04}", patient_counter - 1);

        let abnormal = rng.random_bool(config.abnormal_rate);
        let abnormal_name = VOCABULARY[rng.random_range(0..VOCABULARY.len())];

        let mut texts: Vec<String> = Vec::new();
        for &name in VOCABULARY {
            let template = if abnormal && name == abnormal_name {
                POSITIVE_TEMPLATES[rng.random_range(0..POSITIVE_TEMPLATES.len())]
            } else {
                NEGATIVE_TEMPLATES[rng.random_range(0..NEGATIVE_TEMPLATES.len())]
            };
            texts.push(template.replace("{}", name));
        }
        let mut filler_order: Vec<usize> = (0..FILLER_SENTENCES.len()).collect();
        filler_order.shuffle(&mut rng);
        let n_fillers = rng.random_range(1..=2);
        for &f in filler_order.iter().take(n_fillers) {
            texts.push(FILLER_SENTENCES[f].to_string());
        }
        texts.shuffle(&mut rng);

        let frontal = ImageRef {
            image_id: format!("x{idx:04}-f"),
            view: View::Frontal,
            uri: format!("x{idx:04}-f"),
        };
        let mut image_ids = vec![frontal.image_id.clone()];
        images.push(frontal);
        if idx % 3 == 0 {
            let lateral = ImageRef {
                image_id: format!("x{idx:04}-l"),
                view: View::Lateral,
                uri: format!("x{idx:04}-l"),
            };
            image_ids.push(lateral.image_id.clone());
            images.push(lateral);
        }

        let sentences = texts
            .iter()
            .enumerate()
            .map(|(i, text)| {
                Sentence::new(
                    format!("{report_id}:{i}"),
                    text,
                    extractor.extract_findings(text),
                )
            })
            .collect();
        reports.push(Report {
            report_id,
            patient_id,
            image_ids,
            sentences,
        });
    }

    let n_reports = reports.len();
    Corpus {
        reports,
        images,
        provenance: Provenance {
            source: format!("synthetic:seed={}", config.seed),
            source_records: n_reports,
            ..Provenance::default()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Polarity;

    #[test]
    fn generation_is_deterministic() {
        let config = SyntheticConfig {
            n_reports: 25,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(corpus(&config), corpus(&config));
        let other = SyntheticConfig {
            seed: 10,
            ..config
        };
        assert_ne!(corpus(&config), corpus(&other));
    }

    #[test]
    fn corpus_is_valid_and_annotated() {
        let c = corpus(&SyntheticConfig {
            n_reports: 40,
            seed: 1,
            ..Default::default()
        });
        c.validate().unwrap();
        for report in &c.reports {
            // All vocabulary names present exactly once each.
            let findings = report.findings();
            assert_eq!(findings.len(), VOCABULARY.len());
            let positives = findings
                .iter()
                .filter(|f| f.polarity == Polarity::Positive)
                .count();
            assert!(positives <= 1);
        }
    }

    #[test]
    fn sentences_extract_their_intended_channel() {
        let extractor = Extractor::new(FindingLexicon::default_chest_xray());
        for &name in VOCABULARY {
            for template in POSITIVE_TEMPLATES {
                let found = extractor.extract_findings(&template.replace("{}", name));
                assert_eq!(found.len(), 1, "{template} / {name}");
                assert_eq!(found[0].name, name);
                assert_eq!(found[0].polarity, Polarity::Positive);
            }
            for template in NEGATIVE_TEMPLATES {
                let found = extractor.extract_findings(&template.replace("{}", name));
                assert_eq!(found.len(), 1, "{template} / {name}");
                assert_eq!(found[0].polarity, Polarity::Negative);
            }
        }
        for filler in FILLER_SENTENCES {
            assert!(extractor.extract_findings(filler).is_empty(), "{filler}");
        }
    }

    #[test]
    fn some_patients_have_multiple_reports() {
        let c = corpus(&SyntheticConfig {
            n_reports: 30,
            seed: 2,
            ..Default::default()
        });
        let patients = c.patient_ids();
        assert!(patients.len() < c.reports.len());
        assert!(patients.len() > c.reports.len() / 2);
    }
}
