//! Adapter for the Indiana University chest X-ray tables as distributed on
//! Kaggle: a reports CSV keyed by study uid and a projections CSV with one
//! row per image.

use std::collections::BTreeMap;
use std::path::Path;

use crate::corpus::{Corpus, ImageRef, Provenance, Report, Sentence, View};
use crate::error::{Error, Result};
use crate::extract::split_sentences;

/// Ingestion switches for the Indiana tables.
#[derive(Debug, Clone)]
pub struct IndianaOptions {
    /// Drop reports whose findings text duplicates an earlier report.
    pub dedup: bool,
    /// Keep only frontal projections; reports without one are dropped.
    pub frontal_only: bool,
}

impl Default for IndianaOptions {
    fn default() -> Self {
        IndianaOptions {
            dedup: true,
            frontal_only: true,
        }
    }
}

fn column_index(headers: &csv::StringRecord, name: &str, table: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Ingest(format!("{table} table missing column '{name}'")))
}

/// Ingest the two Indiana CSVs into a normalized corpus.
///
/// The reports table must have `uid` and `findings` columns (an optional
/// `patient` column overrides the default patient_id = uid). The projections
/// table must have `uid`, `filename` and `projection` columns. Images of a
/// report are ordered by filename with the first frontal view placed first as
/// the primary image.
pub fn ingest_indiana(
    reports_path: &Path,
    projections_path: &Path,
    options: &IndianaOptions,
) -> Result<Corpus> {
    let mut projections = csv::Reader::from_path(projections_path)?;
    let headers = projections.headers()?.clone();
    let uid_col = column_index(&headers, "uid", "projections")?;
    let file_col = column_index(&headers, "filename", "projections")?;
    let proj_col = column_index(&headers, "projection", "projections")?;

    let mut images_by_uid: BTreeMap<String, Vec<ImageRef>> = BTreeMap::new();
    for record in projections.records() {
        let record = record?;
        let uid = record.get(uid_col).unwrap_or("").trim().to_string();
        let filename = record.get(file_col).unwrap_or("").trim().to_string();
        if uid.is_empty() || filename.is_empty() {
            continue;
        }
        let view = View::parse(record.get(proj_col).unwrap_or(""));
        images_by_uid.entry(uid).or_default().push(ImageRef {
            uri: filename.clone(),
            image_id: filename,
            view,
        });
    }
    for images in images_by_uid.values_mut() {
        images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    }

    let mut reports_reader = csv::Reader::from_path(reports_path)?;
    let headers = reports_reader.headers()?.clone();
    let uid_col = column_index(&headers, "uid", "reports")?;
    let findings_col = column_index(&headers, "findings", "reports")?;
    let patient_col = headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case("patient"));

    let mut provenance = Provenance {
        source: format!("indiana:{}", reports_path.display()),
        ..Provenance::default()
    };
    let mut seen_texts: BTreeMap<String, ()> = BTreeMap::new();
    let mut reports = Vec::new();
    let mut images = Vec::new();

    for record in reports_reader.records() {
        let record = record?;
        provenance.source_records += 1;
        let uid = record.get(uid_col).unwrap_or("").trim().to_string();
        let findings_text = record.get(findings_col).unwrap_or("").trim().to_string();
        if findings_text.is_empty() {
            provenance.dropped_empty += 1;
            continue;
        }
        let normalized = crate::corpus::normalize_whitespace(&findings_text).to_lowercase();
        if options.dedup && seen_texts.contains_key(&normalized) {
            provenance.dropped_duplicate += 1;
            continue;
        }

        let mut report_images: Vec<ImageRef> = images_by_uid.get(&uid).cloned().unwrap_or_default();
        if options.frontal_only {
            report_images.retain(|img| img.view == View::Frontal);
        } else if let Some(pos) = report_images.iter().position(|i| i.view == View::Frontal) {
            // Keep all views but promote the first frontal to primary.
            let frontal = report_images.remove(pos);
            report_images.insert(0, frontal);
        }
        if report_images.is_empty() {
            provenance.dropped_no_image += 1;
            continue;
        }

        let texts = split_sentences(&findings_text);
        if texts.is_empty() {
            provenance.dropped_empty += 1;
            continue;
        }
        seen_texts.insert(normalized, ());

        let patient_id = patient_col
            .and_then(|c| record.get(c))
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .unwrap_or_else(|| uid.clone());

        let sentences = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Sentence::new(format!("{uid}:{i}"), t, Vec::new()))
            .collect();
        reports.push(Report {
            report_id: uid.clone(),
            patient_id,
            image_ids: report_images.iter().map(|i| i.image_id.clone()).collect(),
            sentences,
        });
        images.extend(report_images);
    }

    if reports.is_empty() {
        return Err(Error::Ingest("no reports found".into()));
    }

    let corpus = Corpus {
        reports,
        images,
        provenance,
    };
    corpus.validate()?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(content.as_bytes()).unwrap();
        file
    }

    const PROJECTIONS: &str = "uid,filename,projection\n\
        CXR1,1_IM-0001-3001.png,Frontal\n\
        CXR1,1_IM-0001-4001.png,Lateral\n\
        CXR2,2_IM-0002-3001.png,Frontal\n\
        CXR3,3_IM-0003-3001.png,Frontal\n";

    #[test]
    fn ingests_and_filters_frontal() {
        let reports = write_temp(
            "uid,findings\n\
             CXR1,No pneumothorax. Heart size normal.\n\
             CXR2,There is effusion.\n\
             CXR3,There is effusion.\n",
        );
        let projections = write_temp(PROJECTIONS);
        let corpus =
            ingest_indiana(reports.path(), projections.path(), &IndianaOptions::default())
                .unwrap();
        // CXR3 duplicates CXR2's text and is dropped by dedup.
        assert_eq!(corpus.reports.len(), 2);
        assert_eq!(corpus.provenance.dropped_duplicate, 1);
        assert_eq!(
            corpus.reports.len() + corpus.provenance.dropped_total(),
            corpus.provenance.source_records
        );
        // Lateral view filtered out.
        assert_eq!(corpus.reports[0].image_ids, vec!["1_IM-0001-3001.png"]);
    }

    #[test]
    fn dedup_disabled_keeps_duplicates() {
        let reports = write_temp(
            "uid,findings\n\
             CXR2,There is effusion.\n\
             CXR3,There is effusion.\n",
        );
        let projections = write_temp(PROJECTIONS);
        let options = IndianaOptions {
            dedup: false,
            ..IndianaOptions::default()
        };
        let corpus = ingest_indiana(reports.path(), projections.path(), &options).unwrap();
        assert_eq!(corpus.reports.len(), 2);
    }

    #[test]
    fn empty_findings_are_dropped_and_counted() {
        let reports = write_temp(
            "uid,findings\n\
             CXR1,\n\
             CXR2,There is effusion.\n",
        );
        let projections = write_temp(PROJECTIONS);
        let corpus =
            ingest_indiana(reports.path(), projections.path(), &IndianaOptions::default())
                .unwrap();
        assert_eq!(corpus.reports.len(), 1);
        assert_eq!(corpus.provenance.dropped_empty, 1);
    }

    #[test]
    fn missing_column_is_named() {
        let reports = write_temp("uid,text\nCXR1,whatever\n");
        let projections = write_temp(PROJECTIONS);
        let err =
            ingest_indiana(reports.path(), projections.path(), &IndianaOptions::default())
                .unwrap_err();
        assert!(err.to_string().contains("'findings'"), "{err}");
    }

    #[test]
    fn empty_reports_table_is_an_error() {
        let reports = write_temp("uid,findings\n");
        let projections = write_temp(PROJECTIONS);
        let err =
            ingest_indiana(reports.path(), projections.path(), &IndianaOptions::default())
                .unwrap_err();
        assert!(err.to_string().contains("no reports found"));
    }

    #[test]
    fn patient_column_overrides_uid() {
        let reports = write_temp(
            "uid,patient,findings\n\
             CXR1,P9,No pneumothorax.\n",
        );
        let projections = write_temp(PROJECTIONS);
        let corpus =
            ingest_indiana(reports.path(), projections.path(), &IndianaOptions::default())
                .unwrap();
        assert_eq!(corpus.reports[0].patient_id, "P9");
    }
}
