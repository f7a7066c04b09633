//! KG-enhanced chunk retrieval: semantic seeds, m-hop entity expansion over
//! the association KG, and readout of the expanded chunks.

use std::collections::{BTreeSet, HashSet};

use serde::Serialize;

use crate::embedding_index::{
    embed_texts, select_top_k, EmbeddingError, EmbeddingProvider, EmbeddingVector, ScoredChunk,
    SimilarityCache, VectorIndex,
};
use crate::kg_store::{AssociationKg, Subgraph, TripletId};
use crate::provider::RetryPolicy;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSet {
    pub query: String,
    /// Seed chunks, best first.
    pub scored: Vec<ScoredChunk>,
    #[serde(skip)]
    pub query_vector: EmbeddingVector,
}

impl SeedSet {
    pub fn chunk_ids(&self) -> impl Iterator<Item = &str> {
        self.scored.iter().map(|s| s.chunk_id.as_str())
    }
}

/// Embeds the query, scores every indexed chunk (caching all scores) and keeps
/// the best `seed_k`.
pub fn seed_retrieve(
    query: &str,
    index: &VectorIndex,
    provider: &dyn EmbeddingProvider,
    seed_k: usize,
    cache: &SimilarityCache,
    retry: &RetryPolicy,
) -> Result<SeedSet, EmbeddingError> {
    if seed_k == 0 {
        return Err(EmbeddingError::InvalidK);
    }
    index.check_provider(provider)?;
    let query_vector = embed_texts(provider, &[query.to_string()], 1, retry)?
        .pop()
        .expect("one vector per text");
    let scores = if index.is_empty() { Vec::new() } else { index.score_all(&query_vector)? };
    cache.insert_all(query, &scores);
    Ok(SeedSet { query: query.to_string(), scored: select_top_k(scores, seed_k), query_vector })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpandedResult {
    pub subgraph: Subgraph,
    /// Readout order, then unlinked seeds when they are kept.
    pub chunks: Vec<String>,
    pub hops_used: usize,
    /// Seed chunks with no triplet in the KG, in seed score order.
    pub unlinked_seeds: Vec<String>,
}

/// Distinct source chunks in order of first appearance over ascending triplet ids.
pub fn readout_chunks(subgraph: &Subgraph, kg: &AssociationKg) -> Vec<String> {
    let mut seen = HashSet::new();
    subgraph
        .triplet_ids
        .iter()
        .map(|&id| &kg.triplet(id).source_chunk)
        .filter(|c| seen.insert(c.as_str()))
        .cloned()
        .collect()
}

/// Entities reachable from `start` within `hops` steps over undirected,
/// non-self-loop adjacency.
pub fn reachable_entities(kg: &AssociationKg, start: BTreeSet<String>, hops: usize) -> BTreeSet<String> {
    let mut visited = start.clone();
    let mut frontier = start;
    for _ in 0..hops {
        let (adjacent, _) = kg.entity_neighborhood(&frontier);
        let next: BTreeSet<String> = adjacent.difference(&visited).cloned().collect();
        if next.is_empty() {
            break;
        }
        visited.extend(next.iter().cloned());
        frontier = next;
    }
    visited
}

pub fn expand(kg: &AssociationKg, seeds: &SeedSet, hops: usize, keep_unlinked_seeds: bool) -> ExpandedResult {
    let seed_graph = kg.subgraph_for_chunks(seeds.chunk_ids());
    let entities = reachable_entities(kg, seed_graph.entities.clone(), hops);

    let mut ids: BTreeSet<TripletId> = seed_graph.triplet_ids.clone();
    for e in &entities {
        for &id in kg.triplets_of_entity(e) {
            if !kg.is_self_loop(id) && entities.contains(kg.head_key(id)) && entities.contains(kg.tail_key(id)) {
                ids.insert(id);
            }
        }
    }
    let subgraph = Subgraph::from_ids(kg, ids);
    let mut chunks = readout_chunks(&subgraph, kg);

    let unlinked_seeds: Vec<String> = seeds
        .chunk_ids()
        .filter(|c| kg.triplets_of_chunk(c).is_empty())
        .map(str::to_string)
        .collect();
    if keep_unlinked_seeds {
        chunks.extend(unlinked_seeds.iter().cloned());
    }
    ExpandedResult { subgraph, chunks, hops_used: hops, unlinked_seeds }
}

/// The no-expansion path: seed subgraph only, every seed kept in score order.
pub fn seeds_only(kg: &AssociationKg, seeds: &SeedSet) -> ExpandedResult {
    let subgraph = kg.subgraph_for_chunks(seeds.chunk_ids());
    let unlinked_seeds = seeds
        .chunk_ids()
        .filter(|c| kg.triplets_of_chunk(c).is_empty())
        .map(str::to_string)
        .collect();
    ExpandedResult {
        subgraph,
        chunks: seeds.chunk_ids().map(str::to_string).collect(),
        hops_used: 0,
        unlinked_seeds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ChunkingConfig, Corpus, Document};
    use crate::embedding_index::{cosine, HashEmbedder};
    use crate::kg_builder::Triplet;

    fn chain_corpus() -> Corpus {
        let mut c = Corpus::new();
        let cfg = ChunkingConfig::with_max_units(1).unwrap();
        c.add_document(Document { doc_id: "d".into(), title: String::new(), text: "a. b. c. d. e.".into() }, &cfg)
            .unwrap();
        c
    }

    /// A–B@d#0, B–C@d#1, C–D@d#2; d#3 has no triplets.
    fn chain() -> (Corpus, AssociationKg) {
        let c = chain_corpus();
        let mut kg = AssociationKg::default();
        kg.insert_triplets(
            vec![
                Triplet::new("A", "r", "B", "d#0").unwrap(),
                Triplet::new("B", "r", "C", "d#1").unwrap(),
                Triplet::new("C", "r", "D", "d#2").unwrap(),
            ],
            &c,
        )
        .unwrap();
        (c, kg)
    }

    fn seeds(ids: &[&str]) -> SeedSet {
        SeedSet {
            query: "q".into(),
            scored: ids.iter().map(|c| ScoredChunk { chunk_id: c.to_string(), score: 0.5 }).collect(),
            query_vector: EmbeddingVector(vec![1.0]),
        }
    }

    fn keys(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn zero_hops_is_seed_subgraph() {
        let (_, kg) = chain();
        let r = expand(&kg, &seeds(&["d#1", "d#3"]), 0, true);
        assert_eq!(r.subgraph, kg.subgraph_for_chunks(["d#1"]));
        assert_eq!(r.chunks, ["d#1", "d#3"]);
        assert_eq!(r.unlinked_seeds, ["d#3"]);
        let literal = expand(&kg, &seeds(&["d#1", "d#3"]), 0, false);
        assert_eq!(literal.chunks, ["d#1"]);
    }

    #[test]
    fn one_hop_on_chain() {
        let (_, kg) = chain();
        let r = expand(&kg, &seeds(&["d#0"]), 1, true);
        assert_eq!(r.subgraph.entities, keys(&["a", "b", "c"]));
        assert_eq!(r.subgraph.triplet_ids, BTreeSet::from([0, 1]));
        assert_eq!(r.chunks, ["d#0", "d#1"]);
    }

    #[test]
    fn three_hops_cover_chain() {
        let (_, kg) = chain();
        let r = expand(&kg, &seeds(&["d#0"]), 3, true);
        assert_eq!(r.subgraph.entities, keys(&["a", "b", "c", "d"]));
        assert_eq!(r.chunks, ["d#0", "d#1", "d#2"]);
    }

    #[test]
    fn readout_fixtures() {
        let c = chain_corpus();
        let mut kg = AssociationKg::default();
        assert!(readout_chunks(&Subgraph::default(), &kg).is_empty());
        kg.insert_triplets(
            vec![
                Triplet::new("A", "r", "B", "d#2").unwrap(),
                Triplet::new("B", "r", "C", "d#1").unwrap(),
                Triplet::new("C", "r", "D", "d#2").unwrap(),
            ],
            &c,
        )
        .unwrap();
        let all = Subgraph::from_ids(&kg, BTreeSet::from([0, 1, 2]));
        assert_eq!(readout_chunks(&all, &kg), ["d#2", "d#1"]);
        let same_chunk = Subgraph::from_ids(&kg, BTreeSet::from([0, 2]));
        assert_eq!(readout_chunks(&same_chunk, &kg), ["d#2"]);
    }

    #[test]
    fn self_loops_do_not_carry_expansion() {
        let c = chain_corpus();
        let mut kg = AssociationKg::default();
        kg.insert_triplets(
            vec![Triplet::new("A", "is", "a", "d#0").unwrap(), Triplet::new("A", "r", "B", "d#1").unwrap()],
            &c,
        )
        .unwrap();
        let r = expand(&kg, &seeds(&["d#1"]), 2, true);
        assert_eq!(r.subgraph.triplet_ids, BTreeSet::from([1]));
    }

    #[test]
    fn seed_retrieval_fixtures() {
        let texts = [
            ("c0", "rivers flow into the sea"),
            ("c1", "the capital city of france is paris"),
            ("c2", "paris hosts the louvre museum"),
            ("c3", "mountains rise above valleys"),
            ("c4", "what is the capital city of france"),
        ];
        let e = HashEmbedder::default();
        let mut index = VectorIndex::for_provider(&e);
        for (id, t) in texts {
            index.insert(id, e.embed_one(t)).unwrap();
        }
        let cache = SimilarityCache::new();
        let retry = RetryPolicy::none();

        let s = seed_retrieve("what is the capital city of france", &index, &e, 2, &cache, &retry).unwrap();
        assert_eq!(s.scored[0].chunk_id, "c4");
        assert!((s.scored[0].score - 1.0).abs() < 1e-12);
        assert_eq!(cache.len(), 5);

        // exhaustive oracle: rank by cosine computed independently
        let q = "capital city of france";
        let qv = e.embed_one(q);
        let mut oracle: Vec<(f64, &str)> =
            texts.iter().map(|(id, t)| (cosine(&qv, &e.embed_one(t)).unwrap(), *id)).collect();
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let got = seed_retrieve(q, &index, &e, 2, &cache, &retry).unwrap();
        let ids: Vec<_> = got.chunk_ids().collect();
        assert_eq!(ids, [oracle[0].1, oracle[1].1]);
        assert_eq!(ids, ["c1", "c4"]);

        assert!(matches!(seed_retrieve(q, &index, &e, 0, &cache, &retry), Err(EmbeddingError::InvalidK)));
    }
}
