//! The association KG: triplet records tied to their source chunks, with
//! entity, chunk and document indexes.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ChunkCatalog;
use crate::kg_builder::{entity_key, Triplet};

pub const SNAPSHOT_VERSION: u32 = 1;

/// Position of a triplet in the record set. Ids are dense and are reassigned
/// when documents are removed, so they are only meaningful for one snapshot.
pub type TripletId = usize;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("triplet cites unknown chunk `{0}`")]
    DanglingChunk(String),
    #[error("triplet has an empty field: {0:?}")]
    InvalidTriplet(Triplet),
    #[error("snapshot header missing or malformed: {0}")]
    BadHeader(String),
    #[error("unsupported snapshot version {0}")]
    Version(u32),
    #[error("snapshot line {line}: {message}")]
    BadLine { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub version: u32,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct RecordKey {
    head: String,
    relation: String,
    tail: String,
    chunk: String,
}

impl RecordKey {
    fn of(t: &Triplet) -> Self {
        Self {
            head: entity_key(&t.head),
            relation: entity_key(&t.relation),
            tail: entity_key(&t.tail),
            chunk: t.source_chunk.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssociationKg {
    created_at: String,
    triplets: Vec<Triplet>,
    /// doc id of each triplet's source chunk, parallel to `triplets`
    docs: Vec<String>,
    head_keys: Vec<String>,
    tail_keys: Vec<String>,
    entity_index: BTreeMap<String, Vec<TripletId>>,
    chunk_index: BTreeMap<String, Vec<TripletId>>,
    doc_index: BTreeMap<String, Vec<TripletId>>,
    seen: HashSet<RecordKey>,
}

impl Default for AssociationKg {
    fn default() -> Self {
        Self::new("1970-01-01T00:00:00Z")
    }
}

/// A set of triplets and exactly the entities they touch.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Subgraph {
    pub triplet_ids: BTreeSet<TripletId>,
    pub entities: BTreeSet<String>,
}

impl Subgraph {
    pub fn from_ids(kg: &AssociationKg, triplet_ids: BTreeSet<TripletId>) -> Self {
        let mut entities = BTreeSet::new();
        for &id in &triplet_ids {
            entities.insert(kg.head_keys[id].clone());
            entities.insert(kg.tail_keys[id].clone());
        }
        Self { triplet_ids, entities }
    }

    pub fn is_empty(&self) -> bool {
        self.triplet_ids.is_empty()
    }

    pub fn union(&self, other: &Subgraph) -> Subgraph {
        Subgraph {
            triplet_ids: self.triplet_ids.union(&other.triplet_ids).copied().collect(),
            entities: self.entities.union(&other.entities).cloned().collect(),
        }
    }
}

impl AssociationKg {
    pub fn new(created_at: impl Into<String>) -> Self {
        Self {
            created_at: created_at.into(),
            triplets: Vec::new(),
            docs: Vec::new(),
            head_keys: Vec::new(),
            tail_keys: Vec::new(),
            entity_index: BTreeMap::new(),
            chunk_index: BTreeMap::new(),
            doc_index: BTreeMap::new(),
            seen: HashSet::new(),
        }
    }

    pub fn created_at(&self) -> &str {
        &self.created_at
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn triplet(&self, id: TripletId) -> &Triplet {
        &self.triplets[id]
    }

    pub fn triplets(&self) -> impl Iterator<Item = (TripletId, &Triplet)> {
        self.triplets.iter().enumerate()
    }

    pub fn head_key(&self, id: TripletId) -> &str {
        &self.head_keys[id]
    }

    pub fn tail_key(&self, id: TripletId) -> &str {
        &self.tail_keys[id]
    }

    pub fn is_self_loop(&self, id: TripletId) -> bool {
        self.head_keys[id] == self.tail_keys[id]
    }

    pub fn doc_of_chunk(&self, chunk_id: &str) -> Option<&str> {
        let first = *self.chunk_index.get(chunk_id)?.first()?;
        Some(&self.docs[first])
    }

    pub fn triplets_of_chunk(&self, chunk_id: &str) -> &[TripletId] {
        self.chunk_index.get(chunk_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn triplets_of_entity(&self, key: &str) -> &[TripletId] {
        self.entity_index.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn entity_count(&self) -> usize {
        self.entity_index.len()
    }

    fn push(&mut self, t: Triplet, doc: String) {
        let id = self.triplets.len();
        let head = entity_key(&t.head);
        let tail = entity_key(&t.tail);
        self.entity_index.entry(head.clone()).or_default().push(id);
        if tail != head {
            self.entity_index.entry(tail.clone()).or_default().push(id);
        }
        self.chunk_index.entry(t.source_chunk.clone()).or_default().push(id);
        self.doc_index.entry(doc.clone()).or_default().push(id);
        self.seen.insert(RecordKey::of(&t));
        self.head_keys.push(head);
        self.tail_keys.push(tail);
        self.docs.push(doc);
        self.triplets.push(t);
    }

    /// Inserts a batch, skipping exact duplicates. The whole batch is rejected
    /// if any triplet is invalid or cites a chunk unknown to `catalog`.
    pub fn insert_triplets(
        &mut self,
        batch: Vec<Triplet>,
        catalog: &impl ChunkCatalog,
    ) -> Result<usize, KgError> {
        let mut prepared = Vec::with_capacity(batch.len());
        for t in batch {
            let normalized = t.normalized().ok_or_else(|| KgError::InvalidTriplet(t.clone()))?;
            let doc = catalog
                .doc_of(&normalized.source_chunk)
                .ok_or_else(|| KgError::DanglingChunk(normalized.source_chunk.clone()))?
                .to_string();
            prepared.push((normalized, doc));
        }
        let mut inserted = 0;
        for (t, doc) in prepared {
            if self.seen.contains(&RecordKey::of(&t)) {
                continue;
            }
            self.push(t, doc);
            inserted += 1;
        }
        Ok(inserted)
    }

    /// Triplets whose source chunk is in `chunk_ids`. Unknown ids contribute nothing.
    pub fn subgraph_for_chunks<'a>(&self, chunk_ids: impl IntoIterator<Item = &'a str>) -> Subgraph {
        let ids = chunk_ids
            .into_iter()
            .flat_map(|c| self.triplets_of_chunk(c).iter().copied())
            .collect();
        Subgraph::from_ids(self, ids)
    }

    /// Entities sharing a non-self-loop triplet with any of `entities`, minus
    /// the inputs, together with the ids of those incident triplets.
    pub fn entity_neighborhood(
        &self,
        entities: &BTreeSet<String>,
    ) -> (BTreeSet<String>, BTreeSet<TripletId>) {
        let mut adjacent = BTreeSet::new();
        let mut incident = BTreeSet::new();
        for e in entities {
            for &id in self.triplets_of_entity(e) {
                if self.is_self_loop(id) {
                    continue;
                }
                incident.insert(id);
                let other = if self.head_keys[id] == *e { &self.tail_keys[id] } else { &self.head_keys[id] };
                if !entities.contains(other) {
                    adjacent.insert(other.clone());
                }
            }
        }
        (adjacent, incident)
    }

    fn rebuild_from(&self, keep: impl Fn(TripletId) -> bool) -> AssociationKg {
        let mut out = AssociationKg::new(self.created_at.clone());
        for id in 0..self.triplets.len() {
            if keep(id) {
                out.push(self.triplets[id].clone(), self.docs[id].clone());
            }
        }
        out
    }

    /// Drops every triplet derived from `doc_id` and compacts ids and indexes.
    pub fn remove_document(&mut self, doc_id: &str) -> usize {
        let Some(ids) = self.doc_index.get(doc_id) else {
            return 0;
        };
        let removed = ids.len();
        let doomed: HashSet<TripletId> = ids.iter().copied().collect();
        *self = self.rebuild_from(|id| !doomed.contains(&id));
        removed
    }

    /// A copy holding only triplets whose source document is in `doc_ids`.
    pub fn restricted_to_docs<'a>(&self, doc_ids: impl IntoIterator<Item = &'a str>) -> AssociationKg {
        let keep: HashSet<TripletId> = doc_ids
            .into_iter()
            .flat_map(|d| self.doc_index.get(d).into_iter().flatten().copied())
            .collect();
        self.rebuild_from(|id| keep.contains(&id))
    }

    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<(), KgError> {
        let header = SnapshotHeader { version: SNAPSHOT_VERSION, created_at: self.created_at.clone() };
        serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        crate::corpus::write_jsonl(out, &self.triplets)?;
        Ok(())
    }

    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_snapshot(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn read_snapshot<R: BufRead>(input: R, catalog: &impl ChunkCatalog) -> Result<Self, KgError> {
        let mut lines = input.lines();
        let header_line = lines.next().ok_or_else(|| KgError::BadHeader("empty file".into()))??;
        let header: SnapshotHeader =
            serde_json::from_str(&header_line).map_err(|e| KgError::BadHeader(e.to_string()))?;
        if header.version != SNAPSHOT_VERSION {
            return Err(KgError::Version(header.version));
        }
        let mut triplets = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Triplet = serde_json::from_str(&line)
                .map_err(|e| KgError::BadLine { line: i + 2, message: e.to_string() })?;
            triplets.push(t);
        }
        let mut kg = AssociationKg::new(header.created_at);
        kg.insert_triplets(triplets, catalog)?;
        Ok(kg)
    }

    #[cfg(test)]
    pub(crate) fn check_consistency(&self) {
        let fresh = self.rebuild_from(|_| true);
        assert_eq!(self.entity_index, fresh.entity_index);
        assert_eq!(self.chunk_index, fresh.chunk_index);
        assert_eq!(self.doc_index, fresh.doc_index);
        for (id, t) in self.triplets() {
            assert!(self.entity_index[&entity_key(&t.head)].contains(&id));
            assert!(self.entity_index[&entity_key(&t.tail)].contains(&id));
            assert!(self.chunk_index[&t.source_chunk].contains(&id));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ChunkingConfig, Corpus, Document};
    use proptest::prelude::*;

    /// Documents d0..d3, each sentence its own chunk.
    fn corpus() -> Corpus {
        let mut c = Corpus::new();
        let cfg = ChunkingConfig::with_max_units(1).unwrap();
        for d in 0..4 {
            let doc = Document { doc_id: format!("d{d}"), title: String::new(), text: "a. b. c. d. e.".into() };
            c.add_document(doc, &cfg).unwrap();
        }
        c
    }

    fn t(h: &str, r: &str, tl: &str, c: &str) -> Triplet {
        Triplet::new(h, r, tl, c).unwrap()
    }

    #[test]
    fn dedup_on_insert() {
        let c = corpus();
        let mut kg = AssociationKg::default();
        assert_eq!(kg.insert_triplets(vec![t("A", "r", "B", "d0#0")], &c).unwrap(), 1);
        assert_eq!(kg.insert_triplets(vec![t("A", "r", "B", "d0#0")], &c).unwrap(), 0);
        assert_eq!(kg.len(), 1);
        // case and spacing variants are the same record
        assert_eq!(kg.insert_triplets(vec![t("a ", "R", "b", "d0#0")], &c).unwrap(), 0);
        // same fact from another chunk is a distinct record
        assert_eq!(kg.insert_triplets(vec![t("A", "r", "B", "d0#1")], &c).unwrap(), 1);
    }

    #[test]
    fn batch_of_three() {
        let c = corpus();
        let mut kg = AssociationKg::default();
        let batch = vec![t("A", "r", "B", "d0#0"), t("B", "r", "C", "d0#1"), t("C", "r", "D", "d1#0")];
        assert_eq!(kg.insert_triplets(batch, &c).unwrap(), 3);
        kg.check_consistency();
    }

    #[test]
    fn dangling_batch_is_rejected_whole() {
        let c = corpus();
        let mut kg = AssociationKg::default();
        kg.insert_triplets(vec![t("A", "r", "B", "d0#0")], &c).unwrap();
        let before = kg.clone();
        let err = kg
            .insert_triplets(vec![t("X", "r", "Y", "d1#0"), t("Z", "r", "W", "nope#0")], &c)
            .unwrap_err();
        assert!(matches!(err, KgError::DanglingChunk(ref id) if id == "nope#0"));
        assert_eq!(kg, before);
    }

    #[test]
    fn subgraph_queries() {
        let c = corpus();
        let mut kg = AssociationKg::default();
        kg.insert_triplets(vec![t("A", "r", "B", "d0#0"), t("B", "r", "C", "d0#1")], &c).unwrap();
        assert!(kg.subgraph_for_chunks(std::iter::empty()).is_empty());
        let s = kg.subgraph_for_chunks(["d0#0", "unknown"]);
        assert_eq!(s.triplet_ids, BTreeSet::from([0]));
        assert_eq!(s.entities, BTreeSet::from(["a".to_string(), "b".to_string()]));
        let all = kg.subgraph_for_chunks(c.chunks().map(|c| c.chunk_id.as_str()));
        assert_eq!(all.triplet_ids, (0..kg.len()).collect());
    }

    #[test]
    fn neighborhoods() {
        let c = corpus();
        let mut kg = AssociationKg::default();
        let keys = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(kg.entity_neighborhood(&keys(&["a"])), (BTreeSet::new(), BTreeSet::new()));

        kg.insert_triplets(vec![t("A", "r", "B", "d0#0")], &c).unwrap();
        assert_eq!(kg.entity_neighborhood(&keys(&["a"])), (keys(&["b"]), BTreeSet::from([0])));

        // triangle plus a self-loop on A, which is never traversed
        kg.insert_triplets(vec![t("A", "r", "C", "d0#1"), t("B", "r", "C", "d0#2"), t("A", "is", "A", "d0#3")], &c)
            .unwrap();
        let (adj, inc) = kg.entity_neighborhood(&keys(&["a"]));
        assert_eq!(adj, keys(&["b", "c"]));
        assert_eq!(inc, BTreeSet::from([0, 1]));
    }

    #[test]
    fn remove_document_counts_and_orphans() {
        let c = corpus();
        let mut kg = AssociationKg::default();
        assert_eq!(kg.remove_document("zzz"), 0);
        kg.insert_triplets(vec![t("Keep", "r", "Shared", "d0#0")], &c).unwrap();
        let only_d1 = vec![
            t("Orphan", "r", "Shared", "d1#0"),
            t("Orphan", "s", "Other", "d1#1"),
            t("Other", "r", "Shared", "d1#2"),
            t("X", "r", "Y", "d1#3"),
        ];
        kg.insert_triplets(only_d1, &c).unwrap();
        assert_eq!(kg.remove_document("d1"), 4);
        assert!(kg.triplets_of_entity("orphan").is_empty());
        assert_eq!(kg.entity_count(), 2);
        let mut fresh = AssociationKg::default();
        fresh.insert_triplets(vec![t("Keep", "r", "Shared", "d0#0")], &c).unwrap();
        assert_eq!(kg, fresh);
        kg.check_consistency();
    }

    #[test]
    fn insert_then_remove_is_identity() {
        let c = corpus();
        let mut kg = AssociationKg::new("2026-01-01T00:00:00Z");
        kg.insert_triplets(vec![t("A", "r", "B", "d0#0"), t("B", "r", "C", "d1#0")], &c).unwrap();
        let before = kg.snapshot_bytes();
        kg.insert_triplets(vec![t("C", "r", "D", "d2#0"), t("D", "r", "A", "d2#1")], &c).unwrap();
        kg.remove_document("d2");
        assert_eq!(kg.snapshot_bytes(), before);
    }

    #[test]
    fn snapshot_round_trip() {
        let c = corpus();
        let mut kg = AssociationKg::new("2026-01-01T00:00:00Z");
        kg.insert_triplets(vec![t("A", "r \"q\"", "B", "d0#0"), t("B", "r", "C", "d1#0")], &c).unwrap();
        let bytes = kg.snapshot_bytes();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("{\"version\":1,\"created_at\":\"2026-01-01T00:00:00Z\"}\n"));
        let back = AssociationKg::read_snapshot(bytes.as_slice(), &c).unwrap();
        assert_eq!(back, kg);
        assert!(matches!(
            AssociationKg::read_snapshot("{\"version\":9,\"created_at\":\"x\"}\n".as_bytes(), &c),
            Err(KgError::Version(9))
        ));
    }

    fn arb_triplets() -> impl Strategy<Value = Vec<(u8, u8, u8, u8)>> {
        // (head, relation, tail, chunk) drawn from small alphabets
        prop::collection::vec((0u8..6, 0u8..2, 0u8..6, 0u8..20), 0..30)
    }

    fn build(raw: &[(u8, u8, u8, u8)], c: &Corpus) -> AssociationKg {
        let batch = raw
            .iter()
            .map(|&(h, r, tl, ch)| t(&format!("E{h}"), &format!("r{r}"), &format!("E{tl}"), &format!("d{}#{}", ch / 5, ch % 5)))
            .collect();
        let mut kg = AssociationKg::default();
        kg.insert_triplets(batch, c).unwrap();
        kg
    }

    proptest! {
        #[test]
        fn indexes_stay_consistent(raw in arb_triplets(), drop in 0u8..4) {
            let c = corpus();
            let mut kg = build(&raw, &c);
            kg.check_consistency();
            let gone = format!("d{drop}");
            kg.remove_document(&gone);
            kg.check_consistency();
            prop_assert!(kg.triplets().all(|(_, t)| t.source_chunk.split('#').next() != Some(gone.as_str())));
        }

        #[test]
        fn subgraph_union_distributes(raw in arb_triplets(), a in prop::collection::btree_set(0u8..20, 0..8), b in prop::collection::btree_set(0u8..20, 0..8)) {
            let c = corpus();
            let kg = build(&raw, &c);
            let ids = |s: &BTreeSet<u8>| s.iter().map(|ch| format!("d{}#{}", ch / 5, ch % 5)).collect::<Vec<_>>();
            let (ia, ib) = (ids(&a), ids(&b));
            let both: Vec<&str> = ia.iter().chain(ib.iter()).map(String::as_str).collect();
            let lhs = kg.subgraph_for_chunks(both);
            let rhs = kg.subgraph_for_chunks(ia.iter().map(String::as_str))
                .union(&kg.subgraph_for_chunks(ib.iter().map(String::as_str)));
            prop_assert_eq!(lhs, rhs);
        }
    }
}
