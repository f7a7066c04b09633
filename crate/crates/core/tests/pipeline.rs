mod common;

use std::collections::BTreeSet;

use kgctx_core::corpus::read_jsonl;
use kgctx_core::embedding_index::{HashEmbedder, SimilarityCache, VectorIndex};
use kgctx_core::eval_harness::{run_eval, EvalConfig, EvalDataset, Setting};
use kgctx_core::generation::{ExtractiveLlm, MockLlm};
use kgctx_core::kg_store::AssociationKg;
use kgctx_core::organizer::{ChunkOrigin, EmbeddingReranker};
use kgctx_core::pipeline::{answer_query, retrieve, PipelineConfig, PipelineError, Providers};
use kgctx_core::provider::RetryPolicy;

fn providers<'a>(embedder: &'a HashEmbedder, reranker: &'a EmbeddingReranker<HashEmbedder>, llm: &'a ExtractiveLlm) -> Providers<'a> {
    Providers { embedder, reranker, llm, retry: RetryPolicy::none() }
}

#[test]
fn fixture_loads_with_expected_shape() {
    let f = common::load();
    assert_eq!(f.corpus.document_count(), 20);
    assert_eq!(f.corpus.chunk_count(), 20);
    assert_eq!(f.index.len(), 20);
    assert_eq!(f.kg.len(), 46);
    assert_eq!(f.qa.len(), 5);
    for ex in &f.qa {
        for c in &ex.gold_support {
            assert!(f.corpus.chunk(c).is_some(), "{c} missing");
        }
    }
}

#[test]
fn answers_come_from_the_bundle() {
    let f = common::load();
    let reranker = EmbeddingReranker::new(f.embedder.clone());
    let llm = ExtractiveLlm;
    let p = providers(&f.embedder, &reranker, &llm);
    for ex in &f.qa {
        let out = answer_query(&ex.question, f.kb(), &p, &PipelineConfig::default(), &SimilarityCache::new()).unwrap();
        assert!(!out.trace.bundle.is_empty());
        if !out.answer.text.is_empty() {
            let found = out
                .trace
                .bundle
                .chunk_ids()
                .any(|c| f.corpus.chunk(c).unwrap().text.contains(out.answer.text.trim()));
            assert!(found, "answer {:?} not in context", out.answer.text);
        }
    }
}

#[test]
fn zero_hops_stays_on_seed_entities() {
    let f = common::load();
    let reranker = EmbeddingReranker::new(f.embedder.clone());
    let llm = ExtractiveLlm;
    let p = providers(&f.embedder, &reranker, &llm);
    let q = &f.qa[0].question;
    let cfg = PipelineConfig { seed_k: 3, hops: 0, ..PipelineConfig::default() };
    let trace = retrieve(q, f.kb(), &p, &cfg, &SimilarityCache::new()).unwrap();
    // no hop taken: every entity already appears in a seed chunk's triplets
    let seeds: BTreeSet<&str> = trace.seeds.iter().map(|s| s.chunk_id.as_str()).collect();
    let seed_entities: BTreeSet<&str> = seeds
        .iter()
        .flat_map(|c| f.kg.triplets_of_chunk(c))
        .flat_map(|&id| [f.kg.head_key(id), f.kg.tail_key(id)])
        .collect();
    for e in &trace.expansion.entities {
        assert!(seed_entities.contains(e.as_str()), "{e} reached without a hop");
    }
    let off = retrieve(q, f.kb(), &p, &PipelineConfig { expansion: false, ..cfg }, &SimilarityCache::new()).unwrap();
    // seeds only drops triplets that join seed entities from other chunks
    assert!(off.expansion.triplet_ids.is_subset(&trace.expansion.triplet_ids));
    for id in &off.expansion.triplet_ids {
        assert!(seeds.contains(f.kg.triplet(*id).source_chunk.as_str()));
    }
}

#[test]
fn more_hops_never_shrink_the_subgraph() {
    let f = common::load();
    let reranker = EmbeddingReranker::new(f.embedder.clone());
    let llm = ExtractiveLlm;
    let p = providers(&f.embedder, &reranker, &llm);
    for ex in &f.qa {
        let mut prev: Option<BTreeSet<usize>> = None;
        for hops in 0..4 {
            let cfg = PipelineConfig { seed_k: 2, hops, ..PipelineConfig::default() };
            let t = retrieve(&ex.question, f.kb(), &p, &cfg, &SimilarityCache::new()).unwrap();
            if let Some(prev) = &prev {
                assert!(prev.is_subset(&t.expansion.triplet_ids));
            }
            prev = Some(t.expansion.triplet_ids);
        }
    }
}

#[test]
fn unorganized_bundle_is_the_whole_readout() {
    let f = common::load();
    let reranker = EmbeddingReranker::new(f.embedder.clone());
    let llm = ExtractiveLlm;
    let p = providers(&f.embedder, &reranker, &llm);
    let cfg = PipelineConfig { seed_k: 2, budget_k: 2, organization: false, ..PipelineConfig::default() };
    let t = retrieve(&f.qa[1].question, f.kb(), &p, &cfg, &SimilarityCache::new()).unwrap();
    let bundle: BTreeSet<&str> = t.bundle.chunk_ids().collect();
    let readout: BTreeSet<&str> = t.expansion.chunks.iter().map(String::as_str).collect();
    assert_eq!(bundle, readout);
    assert!(t.bundle.entries.iter().all(|e| e.origin == ChunkOrigin::Expanded));
    assert!(t.trees.is_empty());
}

#[test]
fn zero_budget_is_rejected() {
    let f = common::load();
    let reranker = EmbeddingReranker::new(f.embedder.clone());
    let llm = ExtractiveLlm;
    let p = providers(&f.embedder, &reranker, &llm);
    let cfg = PipelineConfig { budget_k: 0, ..PipelineConfig::default() };
    let err = retrieve("anything", f.kb(), &p, &cfg, &SimilarityCache::new()).unwrap_err();
    assert!(matches!(err, PipelineError::Config(_)));
}

#[test]
fn empty_index_gives_empty_bundle() {
    let f = common::load();
    let reranker = EmbeddingReranker::new(f.embedder.clone());
    let llm = MockLlm::with_fallback("unknown");
    let p = Providers { embedder: &f.embedder, reranker: &reranker, llm: &llm, retry: RetryPolicy::none() };
    let index = VectorIndex::for_provider(&f.embedder);
    let kg = AssociationKg::new(common::CREATED_AT);
    let kb = kgctx_core::pipeline::KnowledgeBase { corpus: &f.corpus, kg: &kg, index: &index };
    let out = answer_query("Who founded Glass Harbor?", kb, &p, &PipelineConfig::default(), &SimilarityCache::new()).unwrap();
    assert!(out.trace.bundle.is_empty());
    assert_eq!(out.answer.text, "unknown");
}

#[test]
fn snapshot_round_trip_preserves_retrieval() {
    let f = common::load();
    let bytes = f.kg.snapshot_bytes();
    let back = AssociationKg::read_snapshot(&bytes[..], &f.corpus).unwrap();
    assert_eq!(back.snapshot_bytes(), bytes);

    let mut buf = Vec::new();
    f.index.write_jsonl(&mut buf).unwrap();
    let index = VectorIndex::read_jsonl(&buf[..]).unwrap();
    assert_eq!(index, f.index);

    let reranker = EmbeddingReranker::new(f.embedder.clone());
    let llm = ExtractiveLlm;
    let p = providers(&f.embedder, &reranker, &llm);
    let kb = kgctx_core::pipeline::KnowledgeBase { corpus: &f.corpus, kg: &back, index: &index };
    for ex in &f.qa {
        let a = retrieve(&ex.question, f.kb(), &p, &PipelineConfig::default(), &SimilarityCache::new()).unwrap();
        let b = retrieve(&ex.question, kb, &p, &PipelineConfig::default(), &SimilarityCache::new()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn distractor_setting_stays_inside_context_docs() {
    let f = common::load();
    let reranker = EmbeddingReranker::new(f.embedder.clone());
    let llm = ExtractiveLlm;
    let p = providers(&f.embedder, &reranker, &llm);
    let data = EvalDataset { corpus: &f.corpus, kg: &f.kg, index: &f.index, examples: &f.qa };
    let report = run_eval(&data, &EvalConfig { setting: Setting::Distractor, ..EvalConfig::default() }, &p);
    assert_eq!(report.aggregate.failed, 0);
    for (ex, res) in f.qa.iter().zip(&report.examples) {
        for c in &res.retrieved {
            let doc = c.split('#').next().unwrap();
            assert!(ex.context_docs.iter().any(|d| d == doc), "{c} outside context docs");
        }
    }
}

#[test]
fn qa_file_parses_gold_support_as_set() {
    let raw = r#"{"query_id":"x","question":"q?","gold_answer":"a","gold_support":["b#0","a#0","a#0"],"context_docs":[]}"#;
    let parsed: Vec<kgctx_core::corpus::QaExample> = read_jsonl(raw.as_bytes()).unwrap();
    assert_eq!(parsed[0].gold_support.len(), 2);
}
