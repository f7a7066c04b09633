//! On-disk state: documents, chunks, KG snapshot, vector index and the set
//! of chunks already sent through extraction.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kgctx_core::corpus::{
    corpus_from_parts, read_jsonl, split_document, write_jsonl, Chunk, ChunkingConfig, Corpus, Document,
};
use kgctx_core::embedding_index::{EmbeddingProvider, VectorIndex};
use kgctx_core::kg_builder::Triplet;
use kgctx_core::kg_store::AssociationKg;
use kgctx_core::pipeline::KnowledgeBase;
use kgctx_core::provider::RetryPolicy;
use serde::Serialize;

pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const KG_FILE: &str = "kg.jsonl";
pub const INDEX_FILE: &str = "index.jsonl";
pub const EXTRACTED_FILE: &str = "extracted.json";

#[derive(Debug, Clone)]
pub struct Workspace {
    pub corpus: Corpus,
    pub kg: AssociationKg,
    pub index: VectorIndex,
    /// Chunks whose extraction finished, so re-runs skip them.
    pub extracted: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub added_documents: usize,
    pub replaced_documents: usize,
    pub unchanged_documents: usize,
    pub new_chunks: usize,
    pub triplets_inserted: usize,
    /// Supplied triplets citing chunks outside the ingested documents.
    pub triplets_skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RemoveReport {
    pub chunks: usize,
    pub triplets: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub documents: usize,
    pub chunks: usize,
    pub triplets: usize,
    pub entities: usize,
    pub indexed: usize,
}

/// A required input path does not exist; the CLI maps this to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{path}: {reason}", path = .0.display(), reason = .1)]
pub struct MissingPath(pub PathBuf, pub &'static str);

#[derive(Debug, thiserror::Error)]
#[error("unknown document `{0}`")]
pub struct UnknownDocument(pub String);

fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?);
        write(&mut out)?;
        out.flush()?;
    }
    std::fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

impl Workspace {
    pub fn empty(embedder: &dyn EmbeddingProvider, created_at: &str) -> Self {
        Self {
            corpus: Corpus::new(),
            kg: AssociationKg::new(created_at),
            index: VectorIndex::for_provider(embedder),
            extracted: BTreeSet::new(),
        }
    }

    pub fn exists(dir: &Path) -> bool {
        dir.join(KG_FILE).is_file()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if !Self::exists(dir) {
            return Err(MissingPath(dir.to_path_buf(), "no workspace here; run `kgctx ingest` first").into());
        }
        let documents: Vec<Document> = read_jsonl(open(&dir.join(DOCUMENTS_FILE))?)?;
        let chunks: Vec<Chunk> = read_jsonl(open(&dir.join(CHUNKS_FILE))?)?;
        let corpus = corpus_from_parts(documents, chunks)?;
        let kg = AssociationKg::read_snapshot(open(&dir.join(KG_FILE))?, &corpus)
            .with_context(|| format!("reading {}", dir.join(KG_FILE).display()))?;
        let index = VectorIndex::read_jsonl(open(&dir.join(INDEX_FILE))?)
            .with_context(|| format!("reading {}", dir.join(INDEX_FILE).display()))?;
        let extracted_path = dir.join(EXTRACTED_FILE);
        let extracted = if extracted_path.is_file() {
            serde_json::from_reader(open(&extracted_path)?)?
        } else {
            BTreeSet::new()
        };
        Ok(Self { corpus, kg, index, extracted })
    }

    pub fn load_or_empty(dir: &Path, embedder: &dyn EmbeddingProvider) -> Result<Self> {
        if Self::exists(dir) {
            Self::load(dir)
        } else {
            Ok(Self::empty(embedder, &now()))
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_atomic(&dir.join(DOCUMENTS_FILE), |w| Ok(write_jsonl(w, self.corpus.documents())?))?;
        write_atomic(&dir.join(CHUNKS_FILE), |w| Ok(write_jsonl(w, self.corpus.chunks())?))?;
        write_atomic(&dir.join(INDEX_FILE), |w| Ok(self.index.write_jsonl(w)?))?;
        write_atomic(&dir.join(EXTRACTED_FILE), |w| Ok(serde_json::to_writer(w, &self.extracted)?))?;
        // the snapshot goes last: its presence marks a complete workspace
        write_atomic(&dir.join(KG_FILE), |w| Ok(self.kg.write_snapshot(w)?))
    }

    pub fn kb(&self) -> KnowledgeBase<'_> {
        KnowledgeBase { corpus: &self.corpus, kg: &self.kg, index: &self.index }
    }

    pub fn counts(&self) -> Counts {
        Counts {
            documents: self.corpus.document_count(),
            chunks: self.corpus.chunk_count(),
            triplets: self.kg.len(),
            entities: self.kg.entity_count(),
            indexed: self.index.len(),
        }
    }

    /// Chunks and embeds new or changed documents, then inserts those of
    /// `triplets` that cite a chunk of a document added in this call.
    /// Unchanged documents are skipped entirely.
    pub fn ingest(
        &mut self,
        documents: Vec<Document>,
        triplets: &[Triplet],
        chunking: &ChunkingConfig,
        embedder: &dyn EmbeddingProvider,
        batch_size: usize,
        retry: &RetryPolicy,
    ) -> Result<IngestReport> {
        let chunked = documents
            .into_iter()
            .map(|d| {
                let chunks = split_document(&d, chunking);
                (d, chunks)
            })
            .collect();
        self.ingest_chunked(chunked, triplets, embedder, batch_size, retry)
    }

    /// Like [`Workspace::ingest`] for documents that arrive already chunked.
    pub fn ingest_chunked(
        &mut self,
        documents: Vec<(Document, Vec<Chunk>)>,
        triplets: &[Triplet],
        embedder: &dyn EmbeddingProvider,
        batch_size: usize,
        retry: &RetryPolicy,
    ) -> Result<IngestReport> {
        let mut report = IngestReport::default();
        let mut touched: BTreeSet<String> = BTreeSet::new();
        let mut new_chunks: Vec<(String, String)> = Vec::new();
        for (doc, chunks) in documents {
            if let Some(existing) = self.corpus.document(&doc.doc_id) {
                let same_chunks = chunks
                    .iter()
                    .map(|c| self.corpus.chunk(&c.chunk_id).map(|old| old.text == c.text))
                    .all(|same| same == Some(true))
                    && self.corpus.chunk_ids_of(&doc.doc_id).len() == chunks.len();
                if existing.title == doc.title && existing.text == doc.text && same_chunks {
                    report.unchanged_documents += 1;
                    continue;
                }
                self.remove_document(&doc.doc_id)?;
                report.replaced_documents += 1;
            } else {
                report.added_documents += 1;
            }
            touched.insert(doc.doc_id.clone());
            new_chunks.extend(chunks.iter().map(|c| (c.chunk_id.clone(), c.text.clone())));
            self.corpus.add_chunked(doc, chunks)?;
        }
        report.new_chunks = new_chunks.len();
        self.index.add_texts(embedder, &new_chunks, batch_size, retry)?;

        let (mine, other): (Vec<&Triplet>, Vec<&Triplet>) = triplets.iter().partition(|t| {
            self.corpus.chunk(&t.source_chunk).is_some_and(|c| touched.contains(&c.doc_id))
        });
        report.triplets_skipped = other.len();
        report.triplets_inserted = self.kg.insert_triplets(mine.into_iter().cloned().collect(), &self.corpus)?;
        Ok(report)
    }

    /// Inserts triplets for chunks already in the corpus; returns how many were new.
    pub fn import_triplets(&mut self, triplets: Vec<Triplet>) -> Result<usize> {
        Ok(self.kg.insert_triplets(triplets, &self.corpus)?)
    }

    pub fn remove_document(&mut self, doc_id: &str) -> Result<RemoveReport, UnknownDocument> {
        let Some((_, chunks)) = self.corpus.remove_document(doc_id) else {
            return Err(UnknownDocument(doc_id.to_string()));
        };
        for c in &chunks {
            self.index.remove(&c.chunk_id);
            self.extracted.remove(&c.chunk_id);
        }
        let triplets = self.kg.remove_document(doc_id);
        Ok(RemoveReport { chunks: chunks.len(), triplets })
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use kgctx_core::embedding_index::HashEmbedder;

    fn doc(id: &str, text: &str) -> Document {
        Document { doc_id: id.into(), title: id.into(), text: text.into() }
    }

    fn setup() -> (Workspace, HashEmbedder) {
        let e = HashEmbedder::new(16);
        (Workspace::empty(&e, "2024-01-01T00:00:00Z"), e)
    }

    #[test]
    fn ingest_is_idempotent() {
        let (mut ws, e) = setup();
        let cfg = ChunkingConfig::default();
        let t = [Triplet::new("A", "r", "B", "a#0").unwrap()];
        let first = ws.ingest(vec![doc("a", "A met B."), doc("b", "C.")], &t, &cfg, &e, 8, &RetryPolicy::none()).unwrap();
        assert_eq!((first.added_documents, first.new_chunks, first.triplets_inserted), (2, 2, 1));
        let again = ws.ingest(vec![doc("a", "A met B."), doc("b", "C.")], &t, &cfg, &e, 8, &RetryPolicy::none()).unwrap();
        assert_eq!((again.unchanged_documents, again.new_chunks, again.triplets_inserted), (2, 0, 0));
        assert_eq!(again.triplets_skipped, 1);
    }

    #[test]
    fn changed_document_is_replaced() {
        let (mut ws, e) = setup();
        let cfg = ChunkingConfig::default();
        let t = [Triplet::new("A", "r", "B", "a#0").unwrap()];
        ws.ingest(vec![doc("a", "A met B.")], &t, &cfg, &e, 8, &RetryPolicy::none()).unwrap();
        let r = ws.ingest(vec![doc("a", "A saw B.")], &[], &cfg, &e, 8, &RetryPolicy::none()).unwrap();
        assert_eq!(r.replaced_documents, 1);
        assert_eq!(ws.kg.len(), 0);
        assert_eq!(ws.corpus.chunk("a#0").unwrap().text, "A saw B.");
    }

    #[test]
    fn save_and_load() {
        let (mut ws, e) = setup();
        let t = [Triplet::new("A", "r", "B", "a#0").unwrap()];
        ws.ingest(vec![doc("a", "A met B.")], &t, &ChunkingConfig::default(), &e, 8, &RetryPolicy::none()).unwrap();
        ws.extracted.insert("a#0".into());
        let dir = tempfile::tempdir().unwrap();
        ws.save(dir.path()).unwrap();
        let back = Workspace::load(dir.path()).unwrap();
        assert_eq!(back.corpus, ws.corpus);
        assert_eq!(back.kg.snapshot_bytes(), ws.kg.snapshot_bytes());
        assert_eq!(back.index, ws.index);
        assert_eq!(back.extracted, ws.extracted);
    }

    #[test]
    fn remove_unknown_document() {
        let (mut ws, _) = setup();
        assert!(ws.remove_document("nope").is_err());
    }

    #[test]
    fn load_missing_workspace() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Workspace::load(dir.path()).is_err());
    }
}
