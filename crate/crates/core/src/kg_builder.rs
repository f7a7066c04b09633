//! Association-KG construction: extraction prompts, output parsing, batch
//! extraction over a corpus, pre-extracted triplet files and statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{Chunk, Corpus, CorpusError};
use crate::generation::{LlmProvider, LlmRequest};
use crate::kg_store::{AssociationKg, KgError};
use crate::parallel::par_map;
use crate::provider::RetryPolicy;

pub const EXTRACTION_PROMPT_VERSION: &str = "triplets-v1";
const EXTRACTION_TEMPLATE: &str = include_str!("../assets/extraction_prompt.txt");
const PASSAGE_SLOT: &str = "{{PASSAGE}}";

/// NFC, trimmed, internal whitespace collapsed. Used for stored surface forms.
pub fn normalize_surface(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Case-folded surface form; two entities are the same node iff their keys match.
pub fn entity_key(s: &str) -> String {
    normalize_surface(s).to_lowercase().nfc().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub head: String,
    pub relation: String,
    pub tail: String,
    #[serde(rename = "chunk_id")]
    pub source_chunk: String,
}

impl Triplet {
    /// Normalizes all fields; `None` if any of them ends up empty.
    pub fn new(head: &str, relation: &str, tail: &str, source_chunk: &str) -> Option<Self> {
        let t = Triplet {
            head: normalize_surface(head),
            relation: normalize_surface(relation),
            tail: normalize_surface(tail),
            source_chunk: source_chunk.trim().to_string(),
        };
        t.is_valid().then_some(t)
    }

    pub fn normalized(&self) -> Option<Self> {
        Self::new(&self.head, &self.relation, &self.tail, &self.source_chunk)
    }

    pub fn is_valid(&self) -> bool {
        !(self.head.is_empty()
            || self.relation.is_empty()
            || self.tail.is_empty()
            || self.source_chunk.is_empty())
    }

    pub fn head_key(&self) -> String {
        entity_key(&self.head)
    }

    pub fn tail_key(&self) -> String {
        entity_key(&self.tail)
    }

    pub fn is_self_loop(&self) -> bool {
        self.head_key() == self.tail_key()
    }
}

pub fn build_extraction_prompt(chunk: &Chunk) -> String {
    let encoded = serde_json::to_string(&chunk.text).expect("strings always serialize");
    EXTRACTION_TEMPLATE.replace(PASSAGE_SLOT, &encoded)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedExtraction {
    pub triplets: Vec<Triplet>,
    pub skipped_lines: usize,
}

#[derive(Deserialize)]
struct RawTriplet {
    head: serde_json::Value,
    relation: serde_json::Value,
    tail: serde_json::Value,
}

fn value_text(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn raw_to_triplet(raw: &RawTriplet, chunk_id: &str) -> Option<Triplet> {
    Triplet::new(
        &value_text(&raw.head)?,
        &value_text(&raw.relation)?,
        &value_text(&raw.tail)?,
        chunk_id,
    )
}

/// Parses JSON-lines model output. Blank lines and code fences are ignored;
/// any other line that does not yield a complete triplet counts as skipped.
pub fn parse_extraction_output(raw: &str, chunk_id: &str) -> ParsedExtraction {
    let mut out = ParsedExtraction::default();
    for line in raw.lines() {
        let line = line.trim().trim_end_matches(',');
        if line.is_empty() || line.starts_with("```") {
            continue;
        }
        let parsed: Option<Vec<Triplet>> = if line.starts_with('[') {
            serde_json::from_str::<Vec<RawTriplet>>(line)
                .ok()
                .map(|items| items.iter().filter_map(|r| raw_to_triplet(r, chunk_id)).collect())
                .filter(|v: &Vec<Triplet>| !v.is_empty())
        } else {
            serde_json::from_str::<RawTriplet>(line)
                .ok()
                .and_then(|r| raw_to_triplet(&r, chunk_id))
                .map(|t| vec![t])
        };
        match parsed {
            Some(ts) => out.triplets.extend(ts),
            None => out.skipped_lines += 1,
        }
    }
    out
}

/// Reads a pre-extracted triplet file (JSONL: head, relation, tail, chunk_id).
/// Returns the valid triplets and the number of rejected records.
pub fn read_triplets_jsonl<R: BufRead>(input: R) -> Result<(Vec<Triplet>, usize), CorpusError> {
    let raw: Vec<Triplet> = crate::corpus::read_jsonl(input)?;
    let total = raw.len();
    let valid: Vec<Triplet> = raw.iter().filter_map(Triplet::normalized).collect();
    let rejected = total - valid.len();
    Ok((valid, rejected))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub parallelism: usize,
    /// Extra attempts per chunk after the first failure.
    pub retry_limit: u32,
    pub max_output_units: u32,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self { parallelism: 4, retry_limit: 2, max_output_units: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FailedChunk {
    pub chunk_id: String,
    pub attempts: u32,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExtractionReport {
    pub processed: usize,
    pub already_done: usize,
    pub inserted: usize,
    pub skipped_lines: usize,
    pub failed: Vec<FailedChunk>,
}

/// Runs extraction for every corpus chunk not yet in `done`, inserting the
/// parsed triplets into `kg`. Chunks that succeed (even with zero triplets)
/// are added to `done`, so a second run over the same corpus is a no-op.
pub fn extract_corpus(
    corpus: &Corpus,
    llm: &dyn LlmProvider,
    cfg: &ExtractionConfig,
    kg: &mut AssociationKg,
    done: &mut BTreeSet<String>,
) -> Result<ExtractionReport, KgError> {
    let pending: Vec<&Chunk> = corpus.chunks().filter(|c| !done.contains(&c.chunk_id)).collect();
    let mut report = ExtractionReport {
        already_done: corpus.chunk_count() - pending.len(),
        ..Default::default()
    };
    let retry = RetryPolicy { max_retries: cfg.retry_limit, backoff_ms: 0 };
    let results = par_map(&pending, cfg.parallelism, |chunk| {
        let request = LlmRequest {
            system: None,
            prompt: build_extraction_prompt(chunk),
            max_output_units: cfg.max_output_units,
        };
        retry
            .run(|| llm.complete(&request))
            .map(|resp| parse_extraction_output(&resp.text, &chunk.chunk_id))
    });

    // single writer, chunk order
    for (chunk, result) in pending.iter().zip(results) {
        match result {
            Ok(parsed) => {
                report.processed += 1;
                report.skipped_lines += parsed.skipped_lines;
                report.inserted += kg.insert_triplets(parsed.triplets, corpus)?;
                done.insert(chunk.chunk_id.clone());
            }
            Err(e) => report.failed.push(FailedChunk {
                chunk_id: chunk.chunk_id.clone(),
                attempts: e.attempts,
                error: e.last.to_string(),
            }),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExtractionStats {
    /// triplet count -> number of chunks with that many triplets
    pub triplets_per_chunk: BTreeMap<usize, usize>,
    /// triplet count -> number of documents with that many triplets
    pub triplets_per_document: BTreeMap<usize, usize>,
    pub entity_count: usize,
    pub relation_count: usize,
    pub triplet_count: usize,
}

pub fn triplet_stats(kg: &AssociationKg, corpus: &Corpus) -> ExtractionStats {
    let mut per_chunk: BTreeMap<&str, usize> =
        corpus.chunks().map(|c| (c.chunk_id.as_str(), 0)).collect();
    let mut per_doc: BTreeMap<&str, usize> =
        corpus.documents().map(|d| (d.doc_id.as_str(), 0)).collect();
    let mut entities = BTreeSet::new();
    let mut relations = BTreeSet::new();
    for (_, t) in kg.triplets() {
        *per_chunk.entry(t.source_chunk.as_str()).or_default() += 1;
        if let Some(doc) = kg.doc_of_chunk(&t.source_chunk) {
            *per_doc.entry(doc).or_default() += 1;
        }
        entities.insert(t.head_key());
        entities.insert(t.tail_key());
        relations.insert(entity_key(&t.relation));
    }
    let histogram = |counts: BTreeMap<&str, usize>| {
        let mut h = BTreeMap::new();
        for n in counts.into_values() {
            *h.entry(n).or_default() += 1;
        }
        h
    };
    ExtractionStats {
        triplets_per_chunk: histogram(per_chunk),
        triplets_per_document: histogram(per_doc),
        entity_count: entities.len(),
        relation_count: relations.len(),
        triplet_count: kg.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ChunkingConfig, Document};
    use crate::generation::{FnLlm, LlmResponse};
    use crate::provider::ProviderError;
    use proptest::prelude::*;

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk { chunk_id: id.into(), doc_id: "d".into(), seq: 0, text: text.into() }
    }

    fn passage_line(prompt: &str) -> String {
        let line = prompt
            .lines()
            .find(|l| l.starts_with("{\"text\": "))
            .expect("prompt carries the passage line");
        let v: serde_json::Value = serde_json::from_str(line).expect("passage line is valid JSON");
        v["text"].as_str().unwrap().to_string()
    }

    #[test]
    fn prompt_embeds_chunk_verbatim() {
        let p = build_extraction_prompt(&chunk("c", "Paris is the capital of France."));
        assert!(p.contains("Paris is the capital of France."));
        assert!(p.contains(r#"{"head": "<entity>", "relation": "<relation>", "tail": "<entity>"}"#));
        assert!(!p.contains(PASSAGE_SLOT));
    }

    #[test]
    fn prompt_escapes_quotes() {
        let text = "He said \"hello\" and left \\ twice.\nNew line.";
        let p = build_extraction_prompt(&chunk("c", text));
        assert_eq!(passage_line(&p), text);
    }

    #[test]
    fn prompts_differ_only_in_passage() {
        let a = build_extraction_prompt(&chunk("c1", "Alpha."));
        let b = build_extraction_prompt(&chunk("c2", "Beta."));
        assert_ne!(a, b);
        assert_eq!(a.replace("\"Alpha.\"", "X"), b.replace("\"Beta.\"", "X"));
    }

    #[test]
    fn parse_single_line() {
        let out = parse_extraction_output(
            r#"{"head":"Paris","relation":"capital of","tail":"France"}"#,
            "c1",
        );
        assert_eq!(out.skipped_lines, 0);
        assert_eq!(
            out.triplets,
            vec![Triplet::new("Paris", "capital of", "France", "c1").unwrap()]
        );
    }

    #[test]
    fn parse_empty() {
        assert_eq!(parse_extraction_output("", "c"), ParsedExtraction::default());
    }

    #[test]
    fn parse_skips_prose_lines() {
        let raw = "{\"head\":\"A\",\"relation\":\"r\",\"tail\":\"B\"}\n\
                   Here are some more facts:\n\
                   {\"head\":\"B\",\"relation\":\"s\",\"tail\":\"C\"}";
        let out = parse_extraction_output(raw, "c");
        assert_eq!(out.triplets.len(), 2);
        assert_eq!(out.skipped_lines, 1);
    }

    #[test]
    fn parse_rejects_blank_fields_and_tolerates_fences() {
        let raw = "```json\n{\"head\":\"  \",\"relation\":\"r\",\"tail\":\"B\"}\n[{\"head\":\"X\",\"relation\":\"r\",\"tail\":\"Y\"}]\n```";
        let out = parse_extraction_output(raw, "c");
        assert_eq!(out.triplets.len(), 1);
        assert_eq!(out.skipped_lines, 1);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_surface("  Barack \t Obama "), "Barack Obama");
        assert_eq!(entity_key("BARACK  obama"), "barack obama");
        // decomposed e + combining acute composes under NFC
        assert_eq!(normalize_surface("Caf\u{65}\u{301}"), "Caf\u{e9}");
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in "\\PC{0,24}") {
            let once = normalize_surface(&s);
            prop_assert_eq!(normalize_surface(&once), once.clone());
            let key = entity_key(&s);
            prop_assert_eq!(entity_key(&key), key);
        }
    }

    fn corpus_with(n: usize) -> Corpus {
        let mut corpus = Corpus::new();
        let cfg = ChunkingConfig::with_max_units(3).unwrap();
        let text: Vec<String> = (0..n).map(|i| format!("Sentence number {i}.")).collect();
        corpus
            .add_document(Document { doc_id: "d".into(), title: "D".into(), text: text.join(" ") }, &cfg)
            .unwrap();
        corpus
    }

    fn seq_of(prompt: &str) -> usize {
        let passage = passage_line(prompt);
        passage.trim_end_matches('.').rsplit(' ').next().unwrap().parse().unwrap()
    }

    #[test]
    fn extract_one_triplet_per_chunk() {
        let corpus = corpus_with(5);
        let llm = FnLlm::new("mock", |req: &LlmRequest| {
            let i = seq_of(&req.prompt);
            Ok(LlmResponse::text(format!(
                "{{\"head\":\"E{i}\",\"relation\":\"next\",\"tail\":\"E{}\"}}",
                i + 1
            )))
        });
        let mut kg = AssociationKg::default();
        let mut done = BTreeSet::new();
        let report =
            extract_corpus(&corpus, &llm, &ExtractionConfig::default(), &mut kg, &mut done).unwrap();
        assert_eq!(report.inserted, 5);
        assert_eq!(kg.len(), 5);
        let sources: BTreeSet<_> = kg.triplets().map(|(_, t)| t.source_chunk.clone()).collect();
        assert_eq!(sources.len(), 5);
        assert_eq!(triplet_stats(&kg, &corpus).triplet_count, 5);

        // resumable: nothing left to do, identical KG
        let snapshot = kg.clone();
        let again =
            extract_corpus(&corpus, &llm, &ExtractionConfig::default(), &mut kg, &mut done).unwrap();
        assert_eq!(again.processed, 0);
        assert_eq!(again.already_done, 5);
        assert_eq!(kg, snapshot);
    }

    #[test]
    fn extract_empty_output() {
        let corpus = corpus_with(3);
        let llm = FnLlm::new("mock", |_: &LlmRequest| Ok(LlmResponse::text("")));
        let mut kg = AssociationKg::default();
        let report = extract_corpus(&corpus, &llm, &ExtractionConfig::default(), &mut kg, &mut BTreeSet::new())
            .unwrap();
        assert_eq!(kg.len(), 0);
        assert!(report.failed.is_empty());
        assert_eq!(report.processed, 3);
    }

    #[test]
    fn extract_with_failing_chunk() {
        let corpus = corpus_with(5);
        let llm = FnLlm::new("mock", |req: &LlmRequest| {
            let i = seq_of(&req.prompt);
            if i == 3 {
                return Err(ProviderError::Timeout);
            }
            Ok(LlmResponse::text(format!("{{\"head\":\"E{i}\",\"relation\":\"r\",\"tail\":\"F\"}}")))
        });
        let cfg = ExtractionConfig { parallelism: 3, retry_limit: 0, max_output_units: 64 };
        let mut kg = AssociationKg::default();
        let mut done = BTreeSet::new();
        let report = extract_corpus(&corpus, &llm, &cfg, &mut kg, &mut done).unwrap();
        assert_eq!(kg.len(), 4);
        assert_eq!(report.failed.len(), 1);
        assert_eq!(report.failed[0].chunk_id, "d#3");
        assert_eq!(report.failed[0].attempts, 1);
        assert!(!done.contains("d#3"));
    }

    #[test]
    fn stats_histograms() {
        let mut corpus = Corpus::new();
        let cfg = ChunkingConfig::with_max_units(1).unwrap();
        corpus
            .add_document(Document { doc_id: "d".into(), title: "".into(), text: "a. b. c. d.".into() }, &cfg)
            .unwrap();
        assert_eq!(triplet_stats(&AssociationKg::default(), &Corpus::new()), ExtractionStats::default());

        // per-chunk counts [0, 1, 1, 3]
        let mut kg = AssociationKg::default();
        let ts = vec![
            Triplet::new("A", "r", "B", "d#1").unwrap(),
            Triplet::new("A", "r", "C", "d#2").unwrap(),
            Triplet::new("A", "r", "D", "d#3").unwrap(),
            Triplet::new("B", "r", "D", "d#3").unwrap(),
            Triplet::new("C", "s", "D", "d#3").unwrap(),
        ];
        kg.insert_triplets(ts, &corpus).unwrap();
        let stats = triplet_stats(&kg, &corpus);
        assert_eq!(stats.triplets_per_chunk, BTreeMap::from([(0, 1), (1, 2), (3, 1)]));
        assert_eq!(stats.triplets_per_document, BTreeMap::from([(5, 1)]));
        assert_eq!(stats.entity_count, 4);
        assert_eq!(stats.relation_count, 2);
        assert_eq!(stats.triplet_count, 5);
    }
}
