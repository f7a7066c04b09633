//! Documents, sentence-bounded chunking and HotpotQA-shaped dataset loading.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::num::NonZeroUsize;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Words that end in a period without ending the sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "ft", "vs", "etc", "e.g", "i.e",
    "no", "vol", "inc", "ltd", "co", "corp", "jan", "feb", "mar", "apr", "jun", "jul", "aug",
    "sep", "sept", "oct", "nov", "dec", "u.s", "u.k", "a.m", "p.m", "approx", "dept", "gen",
    "gov", "col", "lt", "sgt", "capt", "rev", "fig", "al",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document id must not be empty")]
    EmptyDocId,
    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json parse error at byte {offset}: {message}")]
    Json { offset: usize, message: String },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub seq: usize,
    pub text: String,
}

/// Chunk ids are `"{doc_id}#{seq}"`.
pub fn chunk_id(doc_id: &str, seq: usize) -> String {
    format!("{doc_id}#{seq}")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceSplitter {
    /// `.`, `!` or `?` followed by whitespace or end of text, with an
    /// abbreviation and initial guard. Blank lines always end a sentence.
    #[default]
    Punctuation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    /// Cap per chunk, in whitespace-delimited tokens.
    pub max_units: NonZeroUsize,
    #[serde(default)]
    pub sentence_splitter: SentenceSplitter,
}

impl ChunkingConfig {
    pub fn with_max_units(max_units: usize) -> Option<Self> {
        NonZeroUsize::new(max_units).map(|max_units| Self {
            max_units,
            sentence_splitter: SentenceSplitter::Punctuation,
        })
    }
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self::with_max_units(100).unwrap()
    }
}

pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn count_units(text: &str) -> usize {
    text.split_whitespace().count()
}

fn is_guarded(sentence_so_far: &str) -> bool {
    let Some(last) = sentence_so_far.split_whitespace().last() else {
        return false;
    };
    let word = last
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .trim_end_matches('.');
    if word.chars().count() == 1 && word.chars().all(char::is_uppercase) {
        // initials such as "J. R. R. Tolkien"
        return true;
    }
    ABBREVIATIONS.contains(&word.to_lowercase().as_str())
}

/// Splits text into trimmed, non-empty sentences that jointly cover every
/// non-whitespace character of `text` in order.
pub fn split_sentences(text: &str, splitter: SentenceSplitter) -> Vec<&str> {
    let SentenceSplitter::Punctuation = splitter;
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    fn push<'a>(text: &'a str, from: usize, to: usize, out: &mut Vec<&'a str>) {
        let s = text[from..to].trim();
        if !s.is_empty() {
            out.push(s);
        }
    }
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        match c {
            '.' | '!' | '?' => {
                // absorb runs of terminators and closing quotes/brackets
                let mut end = i + c.len_utf8();
                while let Some(&(j, n)) = iter.peek() {
                    if matches!(n, '.' | '!' | '?' | '"' | '\'' | ')' | ']' | '”' | '’') {
                        end = j + n.len_utf8();
                        iter.next();
                    } else {
                        break;
                    }
                }
                let at_boundary = match iter.peek() {
                    None => true,
                    Some(&(_, n)) => n.is_whitespace(),
                };
                if !at_boundary {
                    continue;
                }
                if c == '.' && end == i + 1 && is_guarded(&text[start..i]) {
                    continue;
                }
                push(text, start, end, &mut out);
                start = end;
            }
            '\n' => {
                // paragraph break: newline, optional horizontal space, newline
                let mut j = i + 1;
                while j < bytes.len() && (bytes[j] == b' ' || bytes[j] == b'\t' || bytes[j] == b'\r') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j] == b'\n' {
                    push(text, start, i, &mut out);
                    start = i;
                }
            }
            _ => {}
        }
    }
    push(text, start, text.len(), &mut out);
    out
}

/// Greedy sentence packing under `cfg.max_units`. A sentence longer than the
/// cap becomes its own chunk.
pub fn pack_sentences<S: AsRef<str>>(sentences: &[S], cfg: &ChunkingConfig) -> Vec<Vec<usize>> {
    let cap = cfg.max_units.get();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut used = 0;
    for (i, sentence) in sentences.iter().enumerate() {
        let units = count_units(sentence.as_ref());
        if units == 0 {
            continue;
        }
        if !current.is_empty() && used + units > cap {
            groups.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(i);
        used += units;
    }
    if !current.is_empty() {
        groups.push(current);
    }
    groups
}

fn join_sentences<S: AsRef<str>>(sentences: &[S], group: &[usize]) -> String {
    group
        .iter()
        .map(|&i| sentences[i].as_ref().trim())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn split_document(doc: &Document, cfg: &ChunkingConfig) -> Vec<Chunk> {
    let sentences = split_sentences(&doc.text, cfg.sentence_splitter);
    pack_sentences(&sentences, cfg)
        .iter()
        .enumerate()
        .map(|(seq, group)| Chunk {
            chunk_id: chunk_id(&doc.doc_id, seq),
            doc_id: doc.doc_id.clone(),
            seq,
            text: join_sentences(&sentences, group),
        })
        .collect()
}

/// Resolves a chunk id to the document that owns it.
pub trait ChunkCatalog {
    fn doc_of(&self, chunk_id: &str) -> Option<&str>;
}

/// An in-memory document pool with its chunks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    documents: BTreeMap<String, Document>,
    chunks: BTreeMap<String, Chunk>,
    by_doc: BTreeMap<String, Vec<String>>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Chunks and adds `doc`, returning the new chunk ids in seq order.
    pub fn add_document(
        &mut self,
        doc: Document,
        cfg: &ChunkingConfig,
    ) -> Result<Vec<String>, CorpusError> {
        let chunks = split_document(&doc, cfg);
        self.add_chunked(doc, chunks)
    }

    /// Adds a document together with chunks produced elsewhere.
    pub fn add_chunked(
        &mut self,
        doc: Document,
        chunks: Vec<Chunk>,
    ) -> Result<Vec<String>, CorpusError> {
        if doc.doc_id.is_empty() {
            return Err(CorpusError::EmptyDocId);
        }
        if self.documents.contains_key(&doc.doc_id) {
            return Err(CorpusError::DuplicateDocument(doc.doc_id));
        }
        let ids: Vec<String> = chunks.iter().map(|c| c.chunk_id.clone()).collect();
        for chunk in chunks {
            debug_assert_eq!(chunk.doc_id, doc.doc_id);
            self.chunks.insert(chunk.chunk_id.clone(), chunk);
        }
        self.by_doc.insert(doc.doc_id.clone(), ids.clone());
        self.documents.insert(doc.doc_id.clone(), doc);
        Ok(ids)
    }

    pub fn remove_document(&mut self, doc_id: &str) -> Option<(Document, Vec<Chunk>)> {
        let doc = self.documents.remove(doc_id)?;
        let ids = self.by_doc.remove(doc_id).unwrap_or_default();
        let chunks = ids.iter().filter_map(|id| self.chunks.remove(id)).collect();
        Some((doc, chunks))
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.get(doc_id)
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.chunks.get(chunk_id)
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.documents.values()
    }

    /// All chunks ordered by document id, then seq.
    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.by_doc
            .values()
            .flat_map(move |ids| ids.iter().map(move |id| &self.chunks[id]))
    }

    pub fn chunk_ids_of(&self, doc_id: &str) -> &[String] {
        self.by_doc.get(doc_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn document_count(&self) -> usize {
        self.documents.len()
    }

    pub fn chunk_count(&self) -> usize {
        self.chunks.len()
    }

    pub fn documents_mut(&mut self) -> impl Iterator<Item = &mut Document> {
        self.documents.values_mut()
    }

    pub fn chunks_mut(&mut self) -> impl Iterator<Item = &mut Chunk> {
        self.chunks.values_mut()
    }
}

impl ChunkCatalog for Corpus {
    fn doc_of(&self, chunk_id: &str) -> Option<&str> {
        self.chunks.get(chunk_id).map(|c| c.doc_id.as_str())
    }
}

// ---------------------------------------------------------------------------
// JSONL

pub fn write_jsonl<T: Serialize, W: Write>(
    mut out: W,
    items: impl IntoIterator<Item = T>,
) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(input: R) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| CorpusError::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Rebuilds a corpus from persisted documents and chunks.
pub fn corpus_from_parts(documents: Vec<Document>, chunks: Vec<Chunk>) -> Result<Corpus, CorpusError> {
    let mut grouped: HashMap<String, Vec<Chunk>> = HashMap::new();
    for chunk in chunks {
        grouped.entry(chunk.doc_id.clone()).or_default().push(chunk);
    }
    let mut corpus = Corpus::new();
    for doc in documents {
        let mut chunks = grouped.remove(&doc.doc_id).unwrap_or_default();
        chunks.sort_by_key(|c| c.seq);
        corpus.add_chunked(doc, chunks)?;
    }
    if let Some(orphan) = grouped.keys().min() {
        return Err(CorpusError::Line {
            line: 0,
            message: format!("chunks reference unknown document `{orphan}`"),
        });
    }
    Ok(corpus)
}

// ---------------------------------------------------------------------------
// HotpotQA

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub query_id: String,
    pub question: String,
    pub gold_answer: String,
    pub gold_support: BTreeSet<String>,
    /// Documents provided with the question (the distractor setting pool).
    #[serde(default)]
    pub context_docs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum LoadWarning {
    MalformedRecord { index: usize, message: String },
    UnresolvedSupport { index: usize, title: String, sentence: i64 },
    ConflictingDocument { index: usize, title: String },
}

impl fmt::Display for LoadWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadWarning::MalformedRecord { index, message } => {
                write!(f, "record {index}: malformed ({message})")
            }
            LoadWarning::UnresolvedSupport { index, title, sentence } => {
                write!(f, "record {index}: supporting fact ({title:?}, {sentence}) not found")
            }
            LoadWarning::ConflictingDocument { index, title } => {
                write!(f, "record {index}: title {title:?} reused with different text; kept first")
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct HotpotDataset {
    pub corpus: Corpus,
    pub examples: Vec<QaExample>,
    pub warnings: Vec<LoadWarning>,
}

#[derive(Deserialize)]
struct HotpotRecord {
    #[serde(default, alias = "id")]
    _id: Option<String>,
    question: String,
    answer: String,
    context: Vec<(String, Vec<String>)>,
    #[serde(default)]
    supporting_facts: Vec<(String, i64)>,
}

fn byte_offset(src: &str, line: usize, column: usize) -> usize {
    let before: usize = src.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (before + column.saturating_sub(1)).min(src.len())
}

pub fn load_hotpot_corpus(path: &Path, cfg: &ChunkingConfig) -> Result<HotpotDataset, CorpusError> {
    let src = match std::fs::read_to_string(path) {
        Ok(s) => s,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CorpusError::NotFound(path.display().to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    parse_hotpot_json(&src, cfg)
}

pub fn parse_hotpot_json(src: &str, cfg: &ChunkingConfig) -> Result<HotpotDataset, CorpusError> {
    let records: Vec<serde_json::Value> = serde_json::from_str(src).map_err(|e| CorpusError::Json {
        offset: byte_offset(src, e.line(), e.column()),
        message: e.to_string(),
    })?;

    let mut data = HotpotDataset::default();
    // (title, sentence index) -> chunk id
    let mut sentence_chunk: HashMap<(String, usize), String> = HashMap::new();
    let mut doc_sentences: HashMap<String, Vec<String>> = HashMap::new();

    for (index, value) in records.into_iter().enumerate() {
        let record: HotpotRecord = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => {
                data.warnings.push(LoadWarning::MalformedRecord { index, message: e.to_string() });
                continue;
            }
        };
        let mut context_docs = Vec::with_capacity(record.context.len());
        for (title, sentences) in record.context {
            if let Some(existing) = doc_sentences.get(&title) {
                if *existing != sentences {
                    data.warnings.push(LoadWarning::ConflictingDocument { index, title: title.clone() });
                }
                if !context_docs.contains(&title) {
                    context_docs.push(title);
                }
                continue;
            }
            if title.is_empty() {
                data.warnings.push(LoadWarning::MalformedRecord {
                    index,
                    message: "empty context title".into(),
                });
                continue;
            }
            let groups = pack_sentences(&sentences, cfg);
            let mut chunks = Vec::with_capacity(groups.len());
            for (seq, group) in groups.iter().enumerate() {
                let id = chunk_id(&title, seq);
                for &s in group {
                    sentence_chunk.insert((title.clone(), s), id.clone());
                }
                chunks.push(Chunk {
                    chunk_id: id,
                    doc_id: title.clone(),
                    seq,
                    text: join_sentences(&sentences, group),
                });
            }
            let text = sentences
                .iter()
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .collect::<Vec<_>>()
                .join(" ");
            let doc = Document { doc_id: title.clone(), title: title.clone(), text };
            data.corpus.add_chunked(doc, chunks)?;
            doc_sentences.insert(title.clone(), sentences);
            context_docs.push(title);
        }

        let mut gold_support = BTreeSet::new();
        for (title, sentence) in record.supporting_facts {
            let resolved = usize::try_from(sentence)
                .ok()
                .and_then(|s| sentence_chunk.get(&(title.clone(), s)));
            match resolved {
                Some(id) => {
                    gold_support.insert(id.clone());
                }
                None => data.warnings.push(LoadWarning::UnresolvedSupport { index, title, sentence }),
            }
        }
        data.examples.push(QaExample {
            query_id: record._id.unwrap_or_else(|| format!("q{index}")),
            question: record.question,
            gold_answer: record.answer,
            gold_support,
            context_docs,
        });
    }
    Ok(data)
}
