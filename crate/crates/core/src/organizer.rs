//! KG-based context organization.
//!
//! The expanded subgraph becomes an undirected multigraph whose edges carry
//! the query similarity of their source chunk. Each connected component is
//! reduced to its maximum spanning tree, which drops redundant parallel and
//! cyclic edges. Trees are then ranked by a cross-encoder over their triplet
//! text, and their chunks are emitted in DFS order until the chunk budget is
//! spent.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::embedding_index::{cosine, EmbeddingProvider, SimilarityCache};
use crate::kg_store::{AssociationKg, Subgraph, TripletId};
use crate::provider::{ProviderError, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextEdge {
    pub triplet_id: TripletId,
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub head_key: String,
    pub tail_key: String,
    pub source_chunk: String,
    pub weight: f64,
}

impl ContextEdge {
    pub fn other_end(&self, node: &str) -> &str {
        if self.head_key == node {
            &self.tail_key
        } else {
            &self.head_key
        }
    }

    pub fn touches(&self, node: &str) -> bool {
        self.head_key == node || self.tail_key == node
    }
}

/// Total edge order used for tree construction, root choice and DFS:
/// weight descending, source chunk, endpoints, relation, then triplet id.
pub fn edge_order(a: &ContextEdge, b: &ContextEdge) -> Ordering {
    b.weight
        .total_cmp(&a.weight)
        .then_with(|| a.source_chunk.cmp(&b.source_chunk))
        .then_with(|| (&a.head_key, &a.tail_key, &a.relation).cmp(&(&b.head_key, &b.tail_key, &b.relation)))
        .then_with(|| a.triplet_id.cmp(&b.triplet_id))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WeightedContextGraph {
    pub nodes: BTreeSet<String>,
    pub edges: Vec<ContextEdge>,
}

/// One undirected edge per non-self-loop triplet, weighted by s(q, source chunk).
/// Weights come from `cache`; misses go to `on_miss` and are cached.
pub fn build_weighted_graph<E>(
    kg: &AssociationKg,
    subgraph: &Subgraph,
    query: &str,
    cache: &SimilarityCache,
    mut on_miss: impl FnMut(&str) -> Result<f64, E>,
) -> Result<WeightedContextGraph, E> {
    let mut graph = WeightedContextGraph::default();
    for &id in &subgraph.triplet_ids {
        if kg.is_self_loop(id) {
            continue;
        }
        let t = kg.triplet(id);
        let weight = match cache.get(query, &t.source_chunk) {
            Some(w) => w,
            None => {
                let w = on_miss(&t.source_chunk)?;
                cache.insert(query, &t.source_chunk, w);
                w
            }
        };
        let edge = ContextEdge {
            triplet_id: id,
            head: t.head.clone(),
            relation: t.relation.clone(),
            tail: t.tail.clone(),
            head_key: kg.head_key(id).to_string(),
            tail_key: kg.tail_key(id).to_string(),
            source_chunk: t.source_chunk.clone(),
            weight,
        };
        graph.nodes.insert(edge.head_key.clone());
        graph.nodes.insert(edge.tail_key.clone());
        graph.edges.push(edge);
    }
    Ok(graph)
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// False if already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            Ordering::Less => self.parent[ra] = rb,
            Ordering::Greater => self.parent[rb] = ra,
            Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Component {
    pub nodes: BTreeSet<String>,
    pub edges: Vec<ContextEdge>,
}

impl Component {
    pub fn entity_key(&self) -> &str {
        self.nodes.first().map(String::as_str).unwrap_or("")
    }
}

/// Maximal connected components, ordered by their smallest entity key.
pub fn connected_components(graph: &WeightedContextGraph) -> Vec<Component> {
    let index: HashMap<&str, usize> = graph.nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut sets = DisjointSet::new(graph.nodes.len());
    for e in &graph.edges {
        sets.union(index[e.head_key.as_str()], index[e.tail_key.as_str()]);
    }
    let mut slot_of_root: HashMap<usize, usize> = HashMap::new();
    let mut components: Vec<Component> = Vec::new();
    // nodes iterate in key order, so slot order follows each component's smallest key
    for (i, node) in graph.nodes.iter().enumerate() {
        let root = sets.find(i);
        let slot = *slot_of_root.entry(root).or_insert_with(|| {
            components.push(Component::default());
            components.len() - 1
        });
        components[slot].nodes.insert(node.clone());
    }
    for e in &graph.edges {
        let root = sets.find(index[e.head_key.as_str()]);
        components[slot_of_root[&root]].edges.push(e.clone());
    }
    components
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SpanningTree {
    pub nodes: BTreeSet<String>,
    /// Tree edges in edge order; the first one is the root edge.
    pub edges: Vec<ContextEdge>,
}

impl SpanningTree {
    pub fn root_edge(&self) -> Option<&ContextEdge> {
        self.edges.first()
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    pub fn max_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn entity_key(&self) -> &str {
        self.nodes.first().map(String::as_str).unwrap_or("")
    }
}

/// Kruskal over edges sorted by [`edge_order`]. Parallel edges are handled
/// like any other cycle-closing edge.
pub fn max_spanning_tree(component: &Component) -> SpanningTree {
    let index: HashMap<&str, usize> =
        component.nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut sorted: Vec<&ContextEdge> = component.edges.iter().collect();
    sorted.sort_by(|a, b| edge_order(a, b));
    let mut sets = DisjointSet::new(component.nodes.len());
    let target = component.nodes.len().saturating_sub(1);
    let mut edges = Vec::with_capacity(target);
    for e in sorted {
        if edges.len() == target {
            break;
        }
        if sets.union(index[e.head_key.as_str()], index[e.tail_key.as_str()]) {
            edges.push(e.clone());
        }
    }
    SpanningTree { nodes: component.nodes.clone(), edges }
}

/// Tree edge indices in DFS order. The walk starts at the root edge, moves to
/// whichever of its endpoints has the better remaining edge, and at every node
/// takes unvisited edges in [`edge_order`].
pub fn dfs_edge_order(tree: &SpanningTree) -> Vec<usize> {
    if tree.edges.is_empty() {
        return Vec::new();
    }
    let mut adjacency: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, e) in tree.edges.iter().enumerate() {
        adjacency.entry(&e.head_key).or_default().push(i);
        adjacency.entry(&e.tail_key).or_default().push(i);
    }
    for list in adjacency.values_mut() {
        list.sort_by(|&a, &b| edge_order(&tree.edges[a], &tree.edges[b]));
    }
    let mut used = vec![false; tree.edges.len()];
    used[0] = true;
    let mut order = vec![0];

    let best_remaining = |node: &str, used: &[bool]| -> Option<usize> {
        adjacency[node].iter().copied().find(|&i| !used[i])
    };
    let root = &tree.edges[0];
    let (a, b) = (root.head_key.as_str(), root.tail_key.as_str());
    let a_first = match (best_remaining(a, &used), best_remaining(b, &used)) {
        (Some(x), Some(y)) => edge_order(&tree.edges[x], &tree.edges[y]) != Ordering::Greater,
        (None, Some(_)) => false,
        _ => true,
    };
    let starts = if a_first { [a, b] } else { [b, a] };

    for start in starts {
        let mut stack: Vec<(&str, usize)> = vec![(start, 0)];
        while let Some((node, pos)) = stack.last_mut() {
            let list = &adjacency[*node];
            match list[*pos..].iter().position(|&i| !used[i]) {
                Some(offset) => {
                    let edge = list[*pos + offset];
                    *pos += offset + 1;
                    used[edge] = true;
                    order.push(edge);
                    let next = tree.edges[edge].other_end(node);
                    stack.push((next, 0));
                }
                None => {
                    stack.pop();
                }
            }
        }
    }
    order
}

/// Source chunks in DFS order, each kept at its first occurrence.
pub fn text_representation(tree: &SpanningTree) -> Vec<String> {
    let mut seen = HashSet::new();
    dfs_edge_order(tree)
        .into_iter()
        .map(|i| &tree.edges[i].source_chunk)
        .filter(|c| seen.insert(c.as_str()))
        .cloned()
        .collect()
}

/// `<head, relation, tail>` lines in DFS order, original triplet direction.
pub fn triplet_representation(tree: &SpanningTree) -> String {
    dfs_edge_order(tree)
        .into_iter()
        .map(|i| {
            let e = &tree.edges[i];
            format!("<{}, {}, {}>", e.head, e.relation, e.tail)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub trait Reranker: Send + Sync {
    fn name(&self) -> String;
    /// One relevance score per document, in input order.
    fn score(&self, query: &str, documents: &[String]) -> Result<Vec<f64>, ProviderError>;
}

/// Cosine between the query and each document under an embedding provider.
/// With [`crate::embedding_index::HashEmbedder`] this is the deterministic
/// stand-in for a cross-encoder.
pub struct EmbeddingReranker<P> {
    provider: P,
}

impl<P: EmbeddingProvider> EmbeddingReranker<P> {
    pub fn new(provider: P) -> Self {
        Self { provider }
    }
}

impl<P: EmbeddingProvider> Reranker for EmbeddingReranker<P> {
    fn name(&self) -> String {
        format!("embedding-cosine/{}", self.provider.fingerprint())
    }

    fn score(&self, query: &str, documents: &[String]) -> Result<Vec<f64>, ProviderError> {
        let mut texts = Vec::with_capacity(documents.len() + 1);
        texts.push(query.to_string());
        texts.extend(documents.iter().cloned());
        let vectors = self.provider.embed(&texts)?;
        if vectors.len() != texts.len() {
            return Err(ProviderError::Malformed("vector count mismatch".into()));
        }
        vectors[1..]
            .iter()
            .map(|d| cosine(&vectors[0], d).map_err(|e| ProviderError::Other(e.to_string())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredTree {
    pub tree: SpanningTree,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RerankOutcome {
    pub trees: Vec<ScoredTree>,
    /// Set when the reranker failed and max edge weight was used instead.
    pub fallback_reason: Option<String>,
}

/// Sorts trees by reranker score descending, ties by smallest entity key.
pub fn rerank_trees(
    query: &str,
    trees: Vec<SpanningTree>,
    reranker: &dyn Reranker,
    retry: &RetryPolicy,
) -> RerankOutcome {
    if trees.is_empty() {
        return RerankOutcome::default();
    }
    let documents: Vec<String> = trees.iter().map(triplet_representation).collect();
    let (scores, fallback_reason) = match retry.run(|| reranker.score(query, &documents)) {
        Ok(s) if s.len() == trees.len() && s.iter().all(|x| x.is_finite()) => (s, None),
        Ok(s) => (
            trees.iter().map(SpanningTree::max_weight).collect(),
            Some(format!("reranker returned {} usable scores for {} trees", s.len(), trees.len())),
        ),
        Err(e) => (trees.iter().map(SpanningTree::max_weight).collect(), Some(e.to_string())),
    };
    let mut scored: Vec<ScoredTree> =
        trees.into_iter().zip(scores).map(|(tree, score)| ScoredTree { tree, score }).collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tree.entity_key().cmp(b.tree.entity_key())));
    RerankOutcome { trees: scored, fallback_reason }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkOrigin {
    Tree,
    UnlinkedSeed,
    /// Organization disabled: expanded chunk passed through by similarity.
    Expanded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub chunk_id: String,
    pub tree_rank: Option<usize>,
    pub tree_score: Option<f64>,
    pub origin: ChunkOrigin,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub entries: Vec<BundleEntry>,
}

impl ContextBundle {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn chunk_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.chunk_id.as_str())
    }
}

/// Fills up to `budget_k` distinct chunks from the ranked trees, a partial
/// DFS prefix from the tree that crosses the budget, then unlinked seeds.
pub fn select_context(sorted_trees: &[ScoredTree], budget_k: usize, unlinked_seeds: &[String]) -> ContextBundle {
    let mut bundle = ContextBundle::default();
    let mut taken: HashSet<String> = HashSet::new();
    'trees: for (rank, scored) in sorted_trees.iter().enumerate() {
        for chunk in text_representation(&scored.tree) {
            if bundle.len() >= budget_k {
                break 'trees;
            }
            if taken.insert(chunk.clone()) {
                bundle.entries.push(BundleEntry {
                    chunk_id: chunk,
                    tree_rank: Some(rank),
                    tree_score: Some(scored.score),
                    origin: ChunkOrigin::Tree,
                });
            }
        }
    }
    for chunk in unlinked_seeds {
        if bundle.len() >= budget_k {
            break;
        }
        if taken.insert(chunk.clone()) {
            bundle.entries.push(BundleEntry {
                chunk_id: chunk.clone(),
                tree_rank: None,
                tree_score: None,
                origin: ChunkOrigin::UnlinkedSeed,
            });
        }
    }
    bundle
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OrganizedContext {
    pub graph_nodes: usize,
    pub graph_edges: usize,
    pub trees: Vec<ScoredTree>,
    pub rerank_fallback: Option<String>,
    pub bundle: ContextBundle,
}

/// Graph, components, spanning trees, rerank and selection in one call.
pub fn organize(
    query: &str,
    graph: &WeightedContextGraph,
    reranker: &dyn Reranker,
    retry: &RetryPolicy,
    budget_k: usize,
    unlinked_seeds: &[String],
) -> OrganizedContext {
    let trees: Vec<SpanningTree> = connected_components(graph).iter().map(max_spanning_tree).collect();
    let outcome = rerank_trees(query, trees, reranker, retry);
    let bundle = select_context(&outcome.trees, budget_k, unlinked_seeds);
    OrganizedContext {
        graph_nodes: graph.nodes.len(),
        graph_edges: graph.edges.len(),
        trees: outcome.trees,
        rerank_fallback: outcome.fallback_reason,
        bundle,
    }
}

/// Per-chunk weight lookup used when organization is disabled.
pub fn order_by_similarity(chunks: &[String], weights: &BTreeMap<String, f64>) -> Vec<String> {
    let mut out = chunks.to_vec();
    out.sort_by(|a, b| {
        let (wa, wb) = (weights.get(a).copied().unwrap_or(f64::NEG_INFINITY), weights.get(b).copied().unwrap_or(f64::NEG_INFINITY));
        wb.total_cmp(&wa).then_with(|| a.cmp(b))
    });
    out
}
