#![allow(dead_code)]

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use kgctx_core::corpus::{read_jsonl, ChunkingConfig, Corpus, Document, QaExample};
use kgctx_core::embedding_index::{HashEmbedder, VectorIndex};
use kgctx_core::kg_builder::read_triplets_jsonl;
use kgctx_core::kg_store::AssociationKg;
use kgctx_core::pipeline::KnowledgeBase;
use kgctx_core::provider::RetryPolicy;

pub const CREATED_AT: &str = "2024-01-01T00:00:00Z";

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn open(name: &str) -> BufReader<File> {
    BufReader::new(File::open(fixture_path(name)).unwrap())
}

pub struct Fixture {
    pub corpus: Corpus,
    pub kg: AssociationKg,
    pub index: VectorIndex,
    pub qa: Vec<QaExample>,
    pub embedder: HashEmbedder,
}

pub fn documents() -> Vec<Document> {
    read_jsonl(open("documents.jsonl")).unwrap()
}

pub fn load() -> Fixture {
    let cfg = ChunkingConfig::default();
    let mut corpus = Corpus::new();
    for doc in documents() {
        corpus.add_document(doc, &cfg).unwrap();
    }
    let (triplets, rejected) = read_triplets_jsonl(open("triplets.jsonl")).unwrap();
    assert_eq!(rejected, 0);
    let mut kg = AssociationKg::new(CREATED_AT);
    kg.insert_triplets(triplets, &corpus).unwrap();
    let embedder = HashEmbedder::new(HashEmbedder::DEFAULT_DIM);
    let mut index = VectorIndex::for_provider(&embedder);
    let items: Vec<(String, String)> = corpus.chunks().map(|c| (c.chunk_id.clone(), c.text.clone())).collect();
    index.add_texts(&embedder, &items, 16, &RetryPolicy::none()).unwrap();
    let qa = read_jsonl(open("qa.jsonl")).unwrap();
    Fixture { corpus, kg, index, qa, embedder }
}

impl Fixture {
    pub fn kb(&self) -> KnowledgeBase<'_> {
        KnowledgeBase { corpus: &self.corpus, kg: &self.kg, index: &self.index }
    }
}
