//! Full offline pipeline on the synthetic corpus: synthesize fakes, build
//! pairs, train the examiner, verify the held-out fakes and score the
//! quality improvement.
//!
//! ```bash
//! cargo run --example end_to_end
//! ```

use radcheck::corpus::Split;
use radcheck::extract::{Extractor, FindingLexicon};
use radcheck::quality::QiTriple;
use radcheck::synth::to_records;
use radcheck::{EmbeddingProvider, Result, SyntheticConfig};

fn main() -> Result<()> {
    let corpus = radcheck::synthetic::corpus(&SyntheticConfig {
        n_reports: 500,
        seed: 42,
        ..Default::default()
    });
    println!(
        "corpus: {} reports, {} patients, {} images",
        corpus.reports.len(),
        corpus.patient_ids().len(),
        corpus.images.len()
    );

    let extractor = Extractor::new(FindingLexicon::default_chest_xray());
    let (fpool, spool) = extractor.build_pools(&corpus);
    println!(
        "pools: {} findings, {} indexed sentences, {} finding-free",
        fpool.len(),
        spool.len(),
        spool.residue().len()
    );

    let (fakes, skips) = radcheck::synthesize_corpus(&corpus, &fpool, &spool, 17);
    println!(
        "fakes: {} synthesized, {} skipped ({} attempts)",
        fakes.len(),
        skips.len(),
        3 * corpus.reports.len()
    );

    let splits = radcheck::split_by_patient(&corpus, [0.6, 0.2, 0.2], 17)?;
    let records = to_records(&fakes);
    let pairs = radcheck::build_pairs(&corpus, &records, &splits)?;
    let stats = radcheck::pair_stats(&pairs);
    println!(
        "pairs: {} total ({} real / {} fake, ratio {:.2})",
        stats.total,
        stats.real,
        stats.fake,
        stats.ratio.unwrap_or(f64::NAN)
    );

    let provider = radcheck::ReferenceEmbedder::from_corpus(&corpus, extractor.clone(), 7);
    let train_pairs: Vec<_> = pairs.iter().filter(|p| p.split == Split::Train).cloned().collect();
    let test_pairs: Vec<_> = pairs.iter().filter(|p| p.split == Split::Test).cloned().collect();
    let (train_x, train_y) = radcheck::featurize_pairs(&train_pairs, &provider)?;
    let (test_x, test_y) = radcheck::featurize_pairs(&test_pairs, &provider)?;

    let params = radcheck::TrainParams {
        seed: 17,
        ..Default::default()
    };
    let model = radcheck::train(&train_x, &train_y, &params, provider.provider_id())?;
    let metrics = radcheck::evaluate(&model, &test_x, &test_y)?;
    println!(
        "examiner: accuracy {:.3}, auc {:.3} on {} held-out pairs",
        metrics.accuracy,
        metrics.auc.unwrap_or(f64::NAN),
        metrics.n
    );

    // Verify the fakes of the eval partition and score the improvement.
    let mut triples = Vec::new();
    for fake in &fakes {
        let base = corpus.report(&fake.base_report_id).expect("base exists");
        if splits.split_of(&base.patient_id) != Some(Split::Eval) {
            continue;
        }
        let verified =
            radcheck::verify_report(&model, &provider, base.primary_image(), &fake.text())?;
        triples.push(QiTriple {
            original: base.text(),
            auto: fake.text(),
            corrected: verified.corrected_text,
        });
    }
    let quality = radcheck::evaluate_verifier(&triples, &provider)?;
    println!(
        "verification: QI {:.3} ({} of {} improved), mean qi {:.4}",
        quality.aggregate.qi,
        quality.aggregate.n_positive,
        quality.aggregate.n_r,
        quality.aggregate.mean_qi
    );
    Ok(())
}
