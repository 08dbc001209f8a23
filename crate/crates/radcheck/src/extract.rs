//! Sentence splitting and rule-based, negation-aware finding extraction.
//!
//! The extractor is deterministic: alias phrases from a [`FindingLexicon`]
//! are matched longest-first on word boundaries, and a match is negative iff
//! it falls inside the scope of a negation cue. A cue's scope runs to the end
//! of the sentence but is cut short at contrastive conjunctions and
//! semicolons, which is enough to reproduce the usual clinical phrasings
//! ("no X, Y, but there is Z").

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Finding, Polarity, Sentence};
use crate::error::{Error, Result};

/// Words that keep a trailing period from ending a sentence.
const PROTECTED_ABBREVIATIONS: &[&str] = &[
    "vs.", "dr.", "mr.", "mrs.", "e.g.", "i.e.", "a.m.", "p.m.", "no.", "approx.",
];

/// Default negation cues; overridable per extractor.
pub const DEFAULT_NEGATION_CUES: &[&str] = &[
    "no",
    "not",
    "without",
    "free of",
    "negative for",
    "no evidence of",
    "absence of",
    "clear of",
    "resolved",
];

/// Conjunctions that end a negation scope.
const CONTRASTIVE_CONJUNCTIONS: &[&str] = &["but", "however", "although", "yet"];

/// Split report text into sentences on `.`, `!`, `?` followed by whitespace
/// and a capital letter (or end of text), protecting common abbreviations and
/// single-letter initials. Whitespace-only input yields an empty list.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0;

    for (pos, &(idx, ch)) in chars.iter().enumerate() {
        if ch != '.' && ch != '!' && ch != '?' {
            continue;
        }
        let rest = &chars[pos + 1..];
        let next_non_ws = rest.iter().find(|(_, c)| !c.is_whitespace());
        let at_end = next_non_ws.is_none();
        let capital_follows = match next_non_ws {
            Some(&(_, c)) => rest[0].1.is_whitespace() && c.is_uppercase(),
            None => false,
        };
        if !at_end && !capital_follows {
            continue;
        }
        if ch == '.' && is_protected_word(text, &chars, pos) {
            continue;
        }
        let end = idx + ch.len_utf8();
        let piece = text[start..end].trim();
        if !piece.is_empty() {
            sentences.push(piece.to_string());
        }
        start = end;
    }

    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

/// Whether the word ending at the period at `chars[pos]` is a protected
/// abbreviation or a single-letter initial.
fn is_protected_word(text: &str, chars: &[(usize, char)], pos: usize) -> bool {
    let mut word_start = pos;
    while word_start > 0 && !chars[word_start - 1].1.is_whitespace() {
        word_start -= 1;
    }
    let start_idx = chars[word_start].0;
    let end_idx = chars[pos].0 + 1;
    let word = text[start_idx..end_idx].to_lowercase();
    if PROTECTED_ABBREVIATIONS.contains(&word.as_str()) {
        return true;
    }
    // Single-letter initial such as "J." in a name.
    let mut letters = word.chars();
    matches!(
        (letters.next(), letters.next(), letters.next()),
        (Some(c), Some('.'), None) if c.is_alphabetic()
    )
}

/// Maps canonical finding names to the alias phrases that detect them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FindingLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl FindingLexicon {
    /// Build and validate a lexicon. The canonical name always counts as one
    /// of its own aliases; no alias may map to two canonicals.
    pub fn new(entries: BTreeMap<String, Vec<String>>) -> Result<FindingLexicon> {
        if entries.is_empty() {
            return Err(Error::Validation("lexicon has no entries".into()));
        }
        let mut alias_owner: BTreeMap<String, String> = BTreeMap::new();
        let mut normalized = BTreeMap::new();
        for (canonical, aliases) in entries {
            let canonical = canonical.trim().to_lowercase();
            if canonical.is_empty() {
                return Err(Error::Validation("empty canonical name".into()));
            }
            let mut list = vec![canonical.clone()];
            for alias in aliases {
                let alias = alias.trim().to_lowercase();
                if alias.is_empty() {
                    return Err(Error::Validation(format!(
                        "empty alias under '{canonical}'"
                    )));
                }
                if !list.contains(&alias) {
                    list.push(alias);
                }
            }
            for alias in &list {
                if let Some(other) = alias_owner.get(alias) {
                    if *other != canonical {
                        return Err(Error::Validation(format!(
                            "alias '{alias}' maps to both '{other}' and '{canonical}'"
                        )));
                    }
                }
                alias_owner.insert(alias.clone(), canonical.clone());
            }
            normalized.insert(canonical, list);
        }
        Ok(FindingLexicon {
            entries: normalized,
        })
    }

    /// The lexicon shipped with the toolkit: common chest X-ray findings.
    pub fn default_chest_xray() -> FindingLexicon {
        let raw: &[(&str, &[&str])] = &[
            ("effusion", &["effusions"]),
            ("pleural effusion", &["pleural effusions", "pleural fluid"]),
            ("pneumothorax", &["pneumothoraces"]),
            (
                "consolidation",
                &[
                    "air space consolidation",
                    "airspace consolidation",
                    "air space disease",
                ],
            ),
            ("focal consolidation", &[]),
            ("alveolar consolidation", &["focal alveolar consolidation"]),
            ("atelectasis", &["atelectatic change", "atelectatic changes"]),
            ("edema", &["pulmonary edema", "vascular congestion"]),
            (
                "cardiomegaly",
                &[
                    "enlarged heart",
                    "cardiac enlargement",
                    "enlarged cardiac silhouette",
                ],
            ),
            ("opacity", &["opacities", "opacification"]),
            ("pneumonia", &["infectious process"]),
            ("fracture", &["fractures", "rib fracture", "rib fractures"]),
            ("nodule", &["nodules", "nodular density", "nodular opacity"]),
            ("mass", &["masses"]),
            ("emphysema", &["hyperinflation", "hyperexpansion"]),
            ("fibrosis", &["fibrotic changes", "scarring"]),
            ("hernia", &["hiatal hernia"]),
        ];
        let entries = raw
            .iter()
            .map(|(c, a)| (c.to_string(), a.iter().map(|s| s.to_string()).collect()))
            .collect();
        FindingLexicon::new(entries).expect("default lexicon is valid")
    }

    /// Parse a lexicon from its JSON file format `{canonical: [alias, ...]}`.
    pub fn from_json_str(json: &str) -> Result<FindingLexicon> {
        let entries: BTreeMap<String, Vec<String>> =
            serde_json::from_str(json).map_err(|e| Error::Format(format!("lexicon: {e}")))?;
        FindingLexicon::new(entries)
    }

    pub fn from_json_file(path: &Path) -> Result<FindingLexicon> {
        let text = std::fs::read_to_string(path)?;
        FindingLexicon::from_json_str(&text)
    }

    pub fn canonicals(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, canonical: &str) -> bool {
        self.entries.contains_key(canonical)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All (alias, canonical) pairs, longest alias first.
    fn alias_table(&self) -> Vec<(&str, &str)> {
        let mut table: Vec<(&str, &str)> = self
            .entries
            .iter()
            .flat_map(|(canonical, aliases)| {
                aliases.iter().map(move |a| (a.as_str(), canonical.as_str()))
            })
            .collect();
        table.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(b.0)));
        table
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Byte ranges where `needle` occurs in `haystack` on word boundaries.
/// Both strings must already be lowercase.
fn word_matches(haystack: &str, needle: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (start, _) in haystack.match_indices(needle) {
        let end = start + needle.len();
        let before_ok = haystack[..start].chars().next_back().map_or(true, |c| !is_word_char(c));
        let after_ok = haystack[end..].chars().next().map_or(true, |c| !is_word_char(c));
        if before_ok && after_ok {
            out.push((start, end));
        }
    }
    out
}

/// Negation-aware finding extractor over a lexicon and cue list.
#[derive(Debug, Clone)]
pub struct Extractor {
    lexicon: FindingLexicon,
    cues: Vec<String>,
}

impl Extractor {
    pub fn new(lexicon: FindingLexicon) -> Extractor {
        Extractor {
            lexicon,
            cues: DEFAULT_NEGATION_CUES.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Replace the default negation cues, e.g. from an override file
    /// (a JSON list of strings).
    pub fn with_cues(lexicon: FindingLexicon, cues: Vec<String>) -> Result<Extractor> {
        if cues.is_empty() {
            return Err(Error::Validation("negation cue list is empty".into()));
        }
        let cues = cues
            .into_iter()
            .map(|c| c.trim().to_lowercase())
            .filter(|c| !c.is_empty())
            .collect::<Vec<_>>();
        if cues.is_empty() {
            return Err(Error::Validation("negation cue list is empty".into()));
        }
        Ok(Extractor { lexicon, cues })
    }

    pub fn lexicon(&self) -> &FindingLexicon {
        &self.lexicon
    }

    /// Negation scopes as byte ranges of the lowercased sentence.
    fn negation_scopes(&self, lower: &str) -> Vec<(usize, usize)> {
        let mut terminators: Vec<usize> = lower
            .match_indices(';')
            .map(|(i, _)| i)
            .collect();
        for conj in CONTRASTIVE_CONJUNCTIONS {
            terminators.extend(word_matches(lower, conj).into_iter().map(|(s, _)| s));
        }
        terminators.sort_unstable();

        let mut scopes = Vec::new();
        for cue in &self.cues {
            for (_, cue_end) in word_matches(lower, cue) {
                let scope_end = terminators
                    .iter()
                    .copied()
                    .find(|&t| t >= cue_end)
                    .unwrap_or(lower.len());
                scopes.push((cue_end, scope_end));
            }
        }
        scopes
    }

    /// Extract positive and negative findings from one sentence.
    ///
    /// Alias matching is case-insensitive, longest-match-first on word
    /// boundaries; overlapping shorter aliases are suppressed. A match is
    /// negative iff it starts inside an active negation scope. Results are
    /// in document order, deduplicated by (name, polarity).
    pub fn extract_findings(&self, sentence_text: &str) -> Vec<Finding> {
        let lower = sentence_text.to_lowercase();
        let scopes = self.negation_scopes(&lower);

        // Candidates from the longest-first alias table, dropping overlaps.
        let mut accepted: Vec<(usize, usize, &str)> = Vec::new();
        for (alias, canonical) in self.lexicon.alias_table() {
            for (start, end) in word_matches(&lower, alias) {
                let overlaps = accepted
                    .iter()
                    .any(|&(s, e, _)| start < e && s < end);
                if !overlaps {
                    accepted.push((start, end, canonical));
                }
            }
        }
        accepted.sort_by_key(|&(start, _, _)| start);

        let mut findings = Vec::new();
        for (start, _, canonical) in accepted {
            let negated = scopes.iter().any(|&(s, e)| start >= s && start < e);
            let finding = Finding {
                name: canonical.to_string(),
                polarity: if negated {
                    Polarity::Negative
                } else {
                    Polarity::Positive
                },
            };
            if !findings.contains(&finding) {
                findings.push(finding);
            }
        }
        findings
    }

    /// Split raw report text and attach findings; sentence ids are positional.
    pub fn parse_report(&self, raw_text: &str) -> Vec<Sentence> {
        split_sentences(raw_text)
            .iter()
            .enumerate()
            .map(|(i, text)| Sentence::new(format!("s{i}"), text, self.extract_findings(text)))
            .collect()
    }

    /// A copy of the corpus with findings re-extracted for every sentence.
    pub fn annotate_corpus(&self, corpus: &Corpus) -> Corpus {
        let mut annotated = corpus.clone();
        for report in &mut annotated.reports {
            for sentence in &mut report.sentences {
                *sentence = Sentence::new(
                    sentence.sentence_id.clone(),
                    &sentence.text,
                    self.extract_findings(&sentence.text),
                );
            }
        }
        annotated
    }

    /// Aggregate the corpus-wide finding pool and the unique-sentence pool.
    pub fn build_pools(&self, corpus: &Corpus) -> (FindingPool, SentencePool) {
        let mut findings = BTreeSet::new();
        let mut indexed: Vec<Sentence> = Vec::new();
        let mut residue: Vec<Sentence> = Vec::new();
        let mut seen: BTreeSet<String> = BTreeSet::new();

        for report in &corpus.reports {
            for sentence in &report.sentences {
                let extracted = self.extract_findings(&sentence.text);
                for f in &extracted {
                    findings.insert(f.clone());
                }
                if !seen.insert(sentence.text.clone()) {
                    continue;
                }
                let entry =
                    Sentence::new(sentence.sentence_id.clone(), &sentence.text, extracted);
                if entry.findings.is_empty() {
                    residue.push(entry);
                } else {
                    indexed.push(entry);
                }
            }
        }
        (
            FindingPool { findings },
            SentencePool::from_sentences(indexed, residue),
        )
    }
}

/// Every distinct (name, polarity) observed in a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingPool {
    pub findings: BTreeSet<Finding>,
}

impl FindingPool {
    pub fn len(&self) -> usize {
        self.findings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn contains(&self, finding: &Finding) -> bool {
        self.findings.contains(finding)
    }

    /// (positive, negative) counts.
    pub fn counts_by_polarity(&self) -> (usize, usize) {
        let pos = self
            .findings
            .iter()
            .filter(|f| f.polarity == Polarity::Positive)
            .count();
        (pos, self.findings.len() - pos)
    }
}

/// Unique corpus sentences indexed by the findings they contain, plus the
/// finding-free residue (kept out of the index).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SentencePool {
    sentences: Vec<Sentence>,
    residue: Vec<Sentence>,
    #[serde(skip)]
    by_id: BTreeMap<String, usize>,
    #[serde(skip)]
    index: BTreeMap<Finding, Vec<String>>,
}

impl SentencePool {
    pub fn from_sentences(sentences: Vec<Sentence>, residue: Vec<Sentence>) -> SentencePool {
        let mut pool = SentencePool {
            sentences,
            residue,
            by_id: BTreeMap::new(),
            index: BTreeMap::new(),
        };
        pool.rebuild_index();
        pool
    }

    fn rebuild_index(&mut self) {
        self.by_id = self
            .sentences
            .iter()
            .enumerate()
            .map(|(i, s)| (s.sentence_id.clone(), i))
            .collect();
        self.index.clear();
        for sentence in &self.sentences {
            for finding in &sentence.findings {
                self.index
                    .entry(finding.clone())
                    .or_default()
                    .push(sentence.sentence_id.clone());
            }
        }
    }

    pub fn get(&self, sentence_id: &str) -> Option<&Sentence> {
        self.by_id.get(sentence_id).map(|&i| &self.sentences[i])
    }

    /// Pool ids of sentences containing the finding, in corpus order.
    pub fn sentences_with(&self, finding: &Finding) -> &[String] {
        self.index.get(finding).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains_finding(&self, finding: &Finding) -> bool {
        !self.sentences_with(finding).is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sentence> {
        self.sentences.iter()
    }

    pub fn residue(&self) -> &[Sentence] {
        &self.residue
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Restore the skipped index after deserialization.
    pub fn reindex(mut self) -> SentencePool {
        self.rebuild_index();
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn extractor() -> Extractor {
        Extractor::new(FindingLexicon::default_chest_xray())
    }

    fn named(findings: &[Finding]) -> Vec<(String, Polarity)> {
        findings
            .iter()
            .map(|f| (f.name.clone(), f.polarity))
            .collect()
    }

    #[test]
    fn splits_on_period_before_capital() {
        assert_eq!(
            split_sentences("No pneumothorax. Heart size normal."),
            vec!["No pneumothorax.", "Heart size normal."]
        );
    }

    #[test]
    fn single_sentence_stays_whole() {
        assert_eq!(
            split_sentences("There is effusion and pneumothorax."),
            vec!["There is effusion and pneumothorax."]
        );
    }

    #[test]
    fn protects_abbreviations() {
        assert_eq!(
            split_sentences("Stable appearance vs. Prior exam. No effusion."),
            vec!["Stable appearance vs. Prior exam.", "No effusion."]
        );
        assert_eq!(
            split_sentences("Read by Dr. Smith. No change."),
            vec!["Read by Dr. Smith.", "No change."]
        );
        assert_eq!(
            split_sentences("Seen by J. Smith. Unchanged."),
            vec!["Seen by J. Smith.", "Unchanged."]
        );
    }

    #[test]
    fn whitespace_only_input_yields_nothing() {
        assert!(split_sentences("   \n\t ").is_empty());
    }

    #[test]
    fn trailing_text_without_punctuation_is_kept() {
        assert_eq!(
            split_sentences("No effusion. Heart normal"),
            vec!["No effusion.", "Heart normal"]
        );
    }

    #[test]
    fn decimal_numbers_do_not_split() {
        assert_eq!(
            split_sentences("Nodule measures 1.5 cm. Unchanged."),
            vec!["Nodule measures 1.5 cm.", "Unchanged."]
        );
    }

    #[test]
    fn positive_findings_extracted() {
        let got = extractor().extract_findings("There is effusion and pneumothorax.");
        assert_eq!(
            named(&got),
            vec![
                ("effusion".into(), Polarity::Positive),
                ("pneumothorax".into(), Polarity::Positive)
            ]
        );
    }

    #[test]
    fn negation_scope_covers_listed_findings() {
        let got = extractor().extract_findings("No visible pneumothorax or large pleural effusion.");
        assert_eq!(
            named(&got),
            vec![
                ("pneumothorax".into(), Polarity::Negative),
                ("pleural effusion".into(), Polarity::Negative)
            ]
        );
    }

    #[test]
    fn contrastive_conjunction_resets_scope() {
        let got = extractor().extract_findings(
            "No pneumothorax, pleural effusion, but there is lobar air space consolidation.",
        );
        assert_eq!(
            named(&got),
            vec![
                ("pneumothorax".into(), Polarity::Negative),
                ("pleural effusion".into(), Polarity::Negative),
                ("consolidation".into(), Polarity::Positive)
            ]
        );
    }

    #[test]
    fn longest_alias_wins() {
        let got = extractor().extract_findings("Small pleural effusion on the left.");
        assert_eq!(named(&got), vec![("pleural effusion".into(), Polarity::Positive)]);
    }

    #[test]
    fn semicolon_ends_scope() {
        let got = extractor().extract_findings("No effusion; there is edema.");
        assert_eq!(
            named(&got),
            vec![
                ("effusion".into(), Polarity::Negative),
                ("edema".into(), Polarity::Positive)
            ]
        );
    }

    #[test]
    fn mixed_polarity_requires_conjunction() {
        let got = extractor().extract_findings("No effusion, but effusion has increased.");
        assert_eq!(
            named(&got),
            vec![
                ("effusion".into(), Polarity::Negative),
                ("effusion".into(), Polarity::Positive)
            ]
        );
    }

    #[test]
    fn no_matches_gives_empty_list() {
        assert!(extractor().extract_findings("The lungs are clear.").is_empty());
    }

    #[test]
    fn parse_report_assigns_positional_ids() {
        let sentences = extractor().parse_report("No effusion. There is edema.");
        assert_eq!(sentences.len(), 2);
        assert_eq!(sentences[0].sentence_id, "s0");
        assert_eq!(sentences[1].sentence_id, "s1");
        assert_eq!(sentences[1].findings, vec![Finding::positive("edema")]);
    }

    #[test]
    fn lexicon_rejects_conflicting_alias() {
        let mut entries = BTreeMap::new();
        entries.insert("effusion".to_string(), vec!["fluid".to_string()]);
        entries.insert("edema".to_string(), vec!["fluid".to_string()]);
        assert!(FindingLexicon::new(entries).is_err());
    }

    #[test]
    fn lexicon_json_round_trip() {
        let json = r#"{"effusion": ["pleural fluid"], "edema": []}"#;
        let lexicon = FindingLexicon::from_json_str(json).unwrap();
        assert_eq!(lexicon.len(), 2);
        let got = Extractor::new(lexicon).extract_findings("There is pleural fluid.");
        assert_eq!(named(&got), vec![("effusion".into(), Polarity::Positive)]);
    }

    #[test]
    fn custom_cues_replace_defaults() {
        let lexicon = FindingLexicon::default_chest_xray();
        let ex = Extractor::with_cues(lexicon, vec!["denies".to_string()]).unwrap();
        let got = ex.extract_findings("Denies effusion.");
        assert_eq!(named(&got), vec![("effusion".into(), Polarity::Negative)]);
        // "no" is not a cue for this extractor, so edema stays positive.
        let got = ex.extract_findings("No edema.");
        assert_eq!(named(&got), vec![("edema".into(), Polarity::Positive)]);
    }

    #[test]
    fn pools_count_distinct_findings_and_sentences() {
        let ex = extractor();
        let corpus = crate::synthetic::corpus(&crate::synthetic::SyntheticConfig {
            n_reports: 12,
            seed: 5,
            ..Default::default()
        });
        let (fpool, spool) = ex.build_pools(&corpus);
        assert!(!fpool.is_empty());
        assert!(!spool.is_empty());
        for sentence in spool.iter() {
            assert!(!sentence.findings.is_empty());
            for f in &sentence.findings {
                assert!(spool.sentences_with(f).contains(&sentence.sentence_id));
            }
        }
        for s in spool.residue() {
            assert!(s.findings.is_empty());
        }
    }
}
