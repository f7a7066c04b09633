use std::collections::BTreeSet;

use kgctx_core::corpus::{ChunkingConfig, Corpus, Document};
use kgctx_core::embedding_index::{HashEmbedder, SimilarityCache, VectorIndex};
use kgctx_core::generation::ExtractiveLlm;
use kgctx_core::kg_builder::Triplet;
use kgctx_core::kg_store::AssociationKg;
use kgctx_core::organizer::{ChunkOrigin, EmbeddingReranker};
use kgctx_core::pipeline::{retrieve, KnowledgeBase, PipelineConfig, Providers};
use kgctx_core::provider::RetryPolicy;
use proptest::prelude::*;

const WORDS: &[&str] = &["amber", "birch", "cobalt", "dune", "ember", "fjord", "granite", "heron", "iris", "jade"];

fn build(texts: &[Vec<usize>], edges: &[(usize, usize, usize)]) -> (Corpus, AssociationKg, VectorIndex, HashEmbedder) {
    let mut corpus = Corpus::new();
    for (i, words) in texts.iter().enumerate() {
        let text = words.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" ") + ".";
        let doc = Document { doc_id: format!("d{i}"), title: String::new(), text };
        corpus.add_document(doc, &ChunkingConfig::default()).unwrap();
    }
    let triplets: Vec<Triplet> = edges
        .iter()
        .map(|&(h, t, c)| Triplet::new(WORDS[h], "near", WORDS[t], &format!("d{}#0", c % texts.len())).unwrap())
        .collect();
    let mut kg = AssociationKg::new("t");
    kg.insert_triplets(triplets, &corpus).unwrap();
    let embedder = HashEmbedder::new(16);
    let mut index = VectorIndex::for_provider(&embedder);
    let items: Vec<(String, String)> = corpus.chunks().map(|c| (c.chunk_id.clone(), c.text.clone())).collect();
    index.add_texts(&embedder, &items, 8, &RetryPolicy::none()).unwrap();
    (corpus, kg, index, embedder)
}

proptest! {
    #[test]
    fn bundle_respects_budget_and_provenance(
        texts in prop::collection::vec(prop::collection::vec(0..10usize, 1..6), 1..10),
        edges in prop::collection::vec((0..10usize, 0..10usize, 0..10usize), 0..25),
        query in prop::collection::vec(0..10usize, 1..4),
        k in 1..8usize,
        hops in 0..3usize,
        keep in any::<bool>(),
    ) {
        let (corpus, kg, index, embedder) = build(&texts, &edges);
        let reranker = EmbeddingReranker::new(embedder.clone());
        let p = Providers { embedder: &embedder, reranker: &reranker, llm: &ExtractiveLlm, retry: RetryPolicy::none() };
        let kb = KnowledgeBase { corpus: &corpus, kg: &kg, index: &index };
        let q = query.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" ");
        let cfg = PipelineConfig { seed_k: k, budget_k: k, hops, keep_unlinked_seeds: keep, ..PipelineConfig::default() };
        let trace = retrieve(&q, kb, &p, &cfg, &SimilarityCache::new()).unwrap();

        let ids: Vec<&str> = trace.bundle.chunk_ids().collect();
        prop_assert!(ids.len() <= k);
        let distinct: BTreeSet<&str> = ids.iter().copied().collect();
        prop_assert_eq!(distinct.len(), ids.len());
        let seeds: BTreeSet<&str> = trace.seeds.iter().map(|s| s.chunk_id.as_str()).collect();
        for e in &trace.bundle.entries {
            match e.origin {
                ChunkOrigin::Tree => {
                    let tree = &trace.trees[e.tree_rank.unwrap()];
                    prop_assert!(tree.edges.iter().any(|x| x.source_chunk == e.chunk_id));
                }
                ChunkOrigin::UnlinkedSeed => prop_assert!(keep && seeds.contains(e.chunk_id.as_str())),
                ChunkOrigin::Expanded => prop_assert!(false, "unorganized entry"),
            }
        }
        // tree scores never increase down the ranking
        for w in trace.trees.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }

        let again = retrieve(&q, kb, &p, &cfg, &SimilarityCache::new()).unwrap();
        prop_assert_eq!(again, trace);
    }
}
