#![allow(dead_code)]

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use kgctx::providers::ProviderSet;
use kgctx::workspace::Workspace;
use kgctx_core::corpus::{read_jsonl, ChunkingConfig, Document, QaExample};
use kgctx_core::kg_builder::{read_triplets_jsonl, Triplet};

pub const CREATED_AT: &str = "2024-01-01T00:00:00Z";

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn open(name: &str) -> BufReader<File> {
    BufReader::new(File::open(fixture_path(name)).unwrap())
}

pub fn documents() -> Vec<Document> {
    read_jsonl(open("documents.jsonl")).unwrap()
}

pub fn triplets() -> Vec<Triplet> {
    let (t, rejected) = read_triplets_jsonl(open("triplets.jsonl")).unwrap();
    assert_eq!(rejected, 0);
    t
}

pub fn qa() -> Vec<QaExample> {
    read_jsonl(open("qa.jsonl")).unwrap()
}

/// The fixture corpus ingested with the offline providers.
pub fn workspace(providers: &ProviderSet) -> Workspace {
    let mut ws = Workspace::empty(providers.embedder.as_ref(), CREATED_AT);
    ws.ingest(
        documents(),
        &triplets(),
        &ChunkingConfig::default(),
        providers.embedder.as_ref(),
        providers.batch_size,
        &providers.retry,
    )
    .unwrap();
    ws
}
