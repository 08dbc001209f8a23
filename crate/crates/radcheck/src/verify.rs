//! Apply a trained examiner to an (image, generated report) pair: flag fake
//! sentences and assemble the corrected report.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{make_feature, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::examiner::{predict, ExaminerModel};
use crate::extract::split_sentences;
use crate::jsonl;
use crate::pairs::Label;

/// Per-sentence verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceVerdict {
    pub text: String,
    pub label: Label,
    pub score: f64,
}

/// Outcome of verifying one report against its image.
///
/// `corrected_text` is the surviving sentences joined with single spaces, in
/// the original order; it is empty (with `all_removed` set) when every
/// sentence was flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub image_id: String,
    pub sentences: Vec<SentenceVerdict>,
    pub corrected_text: String,
    pub removed_count: usize,
    pub all_removed: bool,
}

/// Verify one report: every sentence is paired with the image and encoded
/// exactly as during training, then fake-labeled sentences are removed.
pub fn verify_report(
    model: &ExaminerModel,
    provider: &dyn EmbeddingProvider,
    image_id: &str,
    report_text: &str,
) -> Result<VerificationResult> {
    let texts = split_sentences(report_text);
    if texts.is_empty() {
        return Err(Error::Validation("report text has no sentences".into()));
    }
    let image = provider.encode_image(image_id)?;

    let mut sentences = Vec::with_capacity(texts.len());
    let mut surviving: Vec<&str> = Vec::new();
    for text in &texts {
        let sentence = provider.encode_sentence(text)?;
        let feature = make_feature(&image, &sentence);
        let prediction = predict(model, &feature)?;
        if prediction.label == Label::Real {
            surviving.push(text);
        }
        sentences.push(SentenceVerdict {
            text: text.clone(),
            label: prediction.label,
            score: prediction.score,
        });
    }

    let removed_count = sentences.len() - surviving.len();
    Ok(VerificationResult {
        image_id: image_id.to_string(),
        corrected_text: surviving.join(" "),
        removed_count,
        all_removed: removed_count == sentences.len(),
        sentences,
    })
}

/// One verification work item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub image_id: String,
    pub text: String,
}

/// Per-item failure kept alongside successful results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchError {
    pub index: usize,
    pub image_id: String,
    pub message: String,
}

/// Verify every item, collecting per-item errors without aborting the batch.
/// Result order follows input order.
pub fn verify_batch(
    model: &ExaminerModel,
    provider: &dyn EmbeddingProvider,
    items: &[BatchItem],
) -> (Vec<VerificationResult>, Vec<BatchError>) {
    let mut results = Vec::new();
    let mut errors = Vec::new();
    for (index, item) in items.iter().enumerate() {
        match verify_report(model, provider, &item.image_id, &item.text) {
            Ok(result) => results.push(result),
            Err(e) => errors.push(BatchError {
                index,
                image_id: item.image_id.clone(),
                message: e.to_string(),
            }),
        }
    }
    (results, errors)
}

pub fn write_verification_jsonl(results: &[VerificationResult], path: &Path) -> Result<()> {
    jsonl::write_jsonl(path, results)
}

pub fn read_batch_items_jsonl(path: &Path) -> Result<Vec<BatchItem>> {
    jsonl::read_jsonl(path)
}
