//! Report quality improvement scoring.
//!
//! A report encodes as the arithmetic mean of its sentence encodings. For a
//! triple (original, automated, corrected), the per-report quality
//! improvement is the cosine gain toward the original:
//! `qi = cos(E_original, E_corrected) - cos(E_original, E_automated)`.
//! The aggregate QI is the fraction of triples with strictly positive gain.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::extract::split_sentences;
use crate::jsonl;

/// Mean sentence encoding of a report; the zero vector iff no sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEncoding {
    pub vector: Vec<f32>,
    pub n_sentences: usize,
}

/// Encode a report as the mean of its sentence encodings. Empty text maps to
/// the zero vector with `n_sentences == 0`.
pub fn encode_report(
    encoder: &dyn EmbeddingProvider,
    report_text: &str,
) -> Result<ReportEncoding> {
    let texts = split_sentences(report_text);
    if texts.is_empty() {
        return Ok(ReportEncoding {
            vector: vec![0.0; encoder.dim()],
            n_sentences: 0,
        });
    }
    let mut sum = vec![0.0f64; encoder.dim()];
    for text in &texts {
        let encoding = encoder.encode_sentence(text)?;
        for (acc, &v) in sum.iter_mut().zip(encoding.values()) {
            *acc += f64::from(v);
        }
    }
    let n = texts.len() as f64;
    Ok(ReportEncoding {
        vector: sum.into_iter().map(|v| (v / n) as f32).collect(),
        n_sentences: texts.len(),
    })
}

/// Cosine similarity; zero whenever either operand has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += f64::from(x) * f64::from(y);
        na += f64::from(x) * f64::from(x);
        nb += f64::from(y) * f64::from(y);
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Per-triple quality improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QiTripleResult {
    pub d_corrected: f64,
    pub d_auto: f64,
    pub qi: f64,
    pub improved: bool,
}

/// Quality improvement of one (original, automated, corrected) triple.
pub fn qi_score(
    original: &ReportEncoding,
    auto: &ReportEncoding,
    corrected: &ReportEncoding,
) -> Result<QiTripleResult> {
    let d_corrected = cosine(&original.vector, &corrected.vector)?;
    let d_auto = cosine(&original.vector, &auto.vector)?;
    let qi = d_corrected - d_auto;
    Ok(QiTripleResult {
        d_corrected,
        d_auto,
        qi,
        improved: qi > 0.0,
    })
}

/// Aggregate over triples: `QI = n_positive / n_R` with strict positivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QiAggregate {
    pub qi: f64,
    pub n_positive: usize,
    pub n_r: usize,
    pub mean_qi: f64,
}

pub fn qi_aggregate(triples: &[QiTripleResult]) -> Result<QiAggregate> {
    if triples.is_empty() {
        return Err(Error::Validation("no triples to aggregate".into()));
    }
    let n_positive = triples.iter().filter(|t| t.improved).count();
    let mean_qi = triples.iter().map(|t| t.qi).sum::<f64>() / triples.len() as f64;
    Ok(QiAggregate {
        qi: n_positive as f64 / triples.len() as f64,
        n_positive,
        n_r: triples.len(),
        mean_qi,
    })
}

/// One evaluation triple of report texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QiTriple {
    pub original: String,
    pub auto: String,
    pub corrected: String,
}

/// Full quality report over a triple set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub per_triple: Vec<QiTripleResult>,
    pub aggregate: QiAggregate,
}

/// Encode and score every triple with the given sentence encoder.
pub fn evaluate_verifier(
    triples: &[QiTriple],
    encoder: &dyn EmbeddingProvider,
) -> Result<QualityReport> {
    let mut per_triple = Vec::with_capacity(triples.len());
    for triple in triples {
        let original = encode_report(encoder, &triple.original)?;
        let auto = encode_report(encoder, &triple.auto)?;
        let corrected = encode_report(encoder, &triple.corrected)?;
        per_triple.push(qi_score(&original, &auto, &corrected)?);
    }
    let aggregate = qi_aggregate(&per_triple)?;
    Ok(QualityReport {
        per_triple,
        aggregate,
    })
}

#[derive(Serialize, Deserialize)]
struct QiReportFile {
    #[serde(rename = "n_R")]
    n_r: usize,
    n_positive: usize,
    #[serde(rename = "QI")]
    qi: f64,
    mean_qi: f64,
    per_triple: Vec<QiTripleResult>,
}

/// Write the QI report JSON artifact.
pub fn write_qi_report(report: &QualityReport, path: &Path) -> Result<()> {
    let file = QiReportFile {
        n_r: report.aggregate.n_r,
        n_positive: report.aggregate.n_positive,
        qi: report.aggregate.qi,
        mean_qi: report.aggregate.mean_qi,
        per_triple: report.per_triple.clone(),
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_triples_jsonl(path: &Path) -> Result<Vec<QiTriple>> {
    jsonl::read_jsonl(path)
}

pub fn write_triples_jsonl(triples: &[QiTriple], path: &Path) -> Result<()> {
    jsonl::write_jsonl(path, triples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{EmbeddingVector, ReferenceEmbedder, EMBED_DIM};
    use crate::extract::{Extractor, FindingLexicon};

    fn encoder() -> ReferenceEmbedder {
        ReferenceEmbedder::text_only(
            Extractor::new(FindingLexicon::default_chest_xray()),
            7,
        )
    }

    fn enc(vector: Vec<f32>) -> ReportEncoding {
        ReportEncoding {
            n_sentences: 1,
            vector,
        }
    }

    fn basis(index: usize) -> Vec<f32> {
        let mut v = vec![0.0f32; 4];
        v[index] = 1.0;
        v
    }

    #[test]
    fn single_sentence_report_encodes_to_that_sentence() {
        let e = encoder();
        let report = encode_report(&e, "There is effusion.").unwrap();
        let sentence = e.encode_sentence("There is effusion.").unwrap();
        assert_eq!(report.vector, sentence.values());
        assert_eq!(report.n_sentences, 1);
    }

    #[test]
    fn duplicate_sentences_average_to_the_same_encoding() {
        let e = encoder();
        let one = encode_report(&e, "No effusion.").unwrap();
        let two = encode_report(&e, "No effusion. No effusion.").unwrap();
        assert_eq!(two.n_sentences, 2);
        for (a, b) in one.vector.iter().zip(&two.vector) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_text_encodes_to_zero() {
        let e = encoder();
        let report = encode_report(&e, "  ").unwrap();
        assert_eq!(report.n_sentences, 0);
        assert!(report.vector.iter().all(|&v| v == 0.0));
        assert_eq!(report.vector.len(), EMBED_DIM);
    }

    #[test]
    fn qi_at_cosine_extremes() {
        let original = enc(basis(0));
        let corrected = enc(basis(0));
        let auto = enc(basis(1));
        let result = qi_score(&original, &auto, &corrected).unwrap();
        assert!((result.qi - 1.0).abs() < 1e-12);
        assert!(result.improved);
    }

    #[test]
    fn identical_auto_and_corrected_score_zero() {
        let original = enc(basis(0));
        let auto = enc(basis(1));
        let result = qi_score(&original, &auto, &auto).unwrap();
        assert_eq!(result.qi, 0.0);
        assert!(!result.improved);
    }

    #[test]
    fn zero_vector_operands_stay_finite() {
        let zero = ReportEncoding {
            vector: vec![0.0; 4],
            n_sentences: 0,
        };
        let original = enc(basis(0));
        let result = qi_score(&original, &zero, &zero).unwrap();
        assert_eq!(result.d_auto, 0.0);
        assert_eq!(result.d_corrected, 0.0);
        assert_eq!(result.qi, 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = enc(basis(0));
        let b = ReportEncoding {
            vector: vec![0.0; 8],
            n_sentences: 1,
        };
        assert!(qi_score(&a, &b, &a).is_err());
    }

    #[test]
    fn aggregate_counts_strict_improvements() {
        let mk = |qi: f64| QiTripleResult {
            d_corrected: 0.0,
            d_auto: 0.0,
            qi,
            improved: qi > 0.0,
        };
        let triples = vec![mk(0.2), mk(-0.1), mk(0.0)];
        let agg = qi_aggregate(&triples).unwrap();
        assert!((agg.qi - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(agg.n_positive, 1);
        assert_eq!(agg.n_r, 3);

        let all = vec![mk(0.5), mk(0.1)];
        assert_eq!(qi_aggregate(&all).unwrap().qi, 1.0);
        assert!(qi_aggregate(&[]).is_err());
    }

    #[test]
    fn evaluate_verifier_scores_text_triples() {
        let e = encoder();
        let triples = vec![QiTriple {
            original: "No pneumothorax. Heart size normal.".into(),
            auto: "No pneumothorax. There is effusion. Heart size normal.".into(),
            corrected: "No pneumothorax. Heart size normal.".into(),
        }];
        let report = evaluate_verifier(&triples, &e).unwrap();
        assert_eq!(report.aggregate.n_r, 1);
        assert!(report.per_triple[0].improved);
    }

    #[test]
    fn sentence_encoder_requires_valid_embedding() {
        // Guards the EmbeddingVector contract used throughout this module.
        assert!(EmbeddingVector::new(vec![0.0; 3]).is_err());
        assert!(EmbeddingVector::new(vec![f32::NAN; EMBED_DIM]).is_err());
    }
}
