use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kgctx_core::corpus::{load_hotpot_corpus, read_jsonl, Chunk, Document, QaExample};
use kgctx_core::embedding_index::{SimilarityCache, VectorIndex};
use kgctx_core::eval_harness::{read_category_map, run_eval, shuffle_entities, EvalConfig, EvalDataset, Setting};
use kgctx_core::generation::GenerationError;
use kgctx_core::kg_builder::{extract_corpus, read_triplets_jsonl, triplet_stats, Triplet};
use kgctx_core::pipeline::{answer_query, PipelineConfig, PipelineError};
use kgctx_core::embedding_index::EmbeddingError;
use kgctx_core::provider::RetryError;
use serde_json::json;

use crate::config::AppConfig;
use crate::providers::ProviderSet;
use crate::server::{self, AppState};
use crate::workspace::{MissingPath, Workspace};

#[derive(Debug, Parser)]
#[command(name = "kgctx", version, about = "Knowledge-graph guided retrieval and context organization")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Workspace directory; overrides the configured one.
    #[arg(long, short = 'w', global = true)]
    pub workspace: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// One `{"doc_id", "title", "text"}` object per line.
    Jsonl,
    /// HotpotQA JSON array; context paragraphs become documents.
    Hotpot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SettingArg {
    Distractor,
    Fullwiki,
}

#[derive(Debug, Args)]
pub struct RetrievalArgs {
    /// Seed count and final chunk budget.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Seed count alone, when it should differ from the budget.
    #[arg(long)]
    pub seed_k: Option<usize>,
    #[arg(long)]
    pub hops: Option<usize>,
    #[arg(long)]
    pub no_expansion: bool,
    #[arg(long)]
    pub no_organization: bool,
    /// Append seed chunks that no tree covers (on unless set to false).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub keep_unlinked_seeds: Option<bool>,
}

impl RetrievalArgs {
    pub fn apply(&self, base: &PipelineConfig) -> PipelineConfig {
        let mut cfg = *base;
        if let Some(k) = self.top_k {
            cfg.seed_k = k;
            cfg.budget_k = k;
        }
        if let Some(k) = self.seed_k {
            cfg.seed_k = k;
        }
        if let Some(m) = self.hops {
            cfg.hops = m;
        }
        if self.no_expansion {
            cfg.expansion = false;
        }
        if self.no_organization {
            cfg.organization = false;
        }
        if let Some(keep) = self.keep_unlinked_seeds {
            cfg.keep_unlinked_seeds = keep;
        }
        cfg
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chunk and embed documents; optionally attach triplets or run extraction.
    Ingest {
        path: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: InputFormat,
        /// Triplet JSONL (`head`, `relation`, `tail`, `chunk_id`) for the ingested documents.
        #[arg(long)]
        triplets: Option<PathBuf>,
        /// Run LLM extraction over new chunks after ingesting.
        #[arg(long)]
        extract: bool,
    },
    /// Build the association KG with the configured LLM, or import triplets.
    ExtractKg {
        /// Import triplets from this JSONL file instead of calling the LLM.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Answer a question over the workspace.
    Query {
        question: String,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        /// Print seeds, expansion, trees, the final bundle and the answer as JSON.
        #[arg(long)]
        explain: bool,
    },
    /// Score answers and retrieval against gold data.
    Eval {
        /// QA examples: JSONL of `{query_id, question, gold_answer, gold_support, context_docs}` or HotpotQA JSON.
        #[arg(long)]
        qa: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: InputFormat,
        #[arg(long, value_enum, default_value = "distractor")]
        setting: SettingArg,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        /// Entity category map (JSONL `{entity, category}`) for the shuffled variant.
        #[arg(long)]
        shuffle: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the full JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        addr: Option<String>,
    },
    /// Remove a document with its chunks, vectors and triplets.
    RemoveDoc { doc_id: String },
    /// Print workspace counts and triplet histograms.
    Stats,
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(MissingPath(path.to_path_buf(), "no such file").into())
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    require(path)?;
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn read_triplets(path: &Path) -> Result<Vec<Triplet>> {
    let (triplets, rejected) = read_triplets_jsonl(open(path)?)?;
    if rejected > 0 {
        eprintln!("warning: {rejected} triplet(s) with empty fields ignored");
    }
    Ok(triplets)
}

fn retry_error(e: &PipelineError) -> Option<&RetryError> {
    match e {
        PipelineError::Embedding(EmbeddingError::Provider(r)) => Some(r),
        PipelineError::Generation(GenerationError::Provider(r)) => Some(r),
        _ => None,
    }
}

/// Runs one command, writing normal output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    if let Some(p) = &cli.config {
        require(p)?;
    }
    let mut cfg = AppConfig::load(cli.config.as_deref())?;
    if let Some(dir) = cli.workspace {
        cfg.workspace = dir;
    }
    let dir = cfg.workspace.clone();
    match cli.command {
        Command::Ingest { path, format, triplets, extract } => {
            require(&path)?;
            let providers = ProviderSet::from_config(&cfg)?;
            let chunking = cfg.chunking()?;
            let documents: Vec<(Document, Vec<Chunk>)> = match format {
                InputFormat::Jsonl => read_jsonl::<Document, _>(open(&path)?)?
                    .into_iter()
                    .map(|d| {
                        let chunks = kgctx_core::corpus::split_document(&d, &chunking);
                        (d, chunks)
                    })
                    .collect(),
                InputFormat::Hotpot => {
                    let data = load_hotpot_corpus(&path, &chunking)?;
                    for w in &data.warnings {
                        eprintln!("warning: {w}");
                    }
                    data.corpus
                        .documents()
                        .map(|d| {
                            let chunks = data.corpus.chunk_ids_of(&d.doc_id).iter().map(|c| data.corpus.chunk(c).unwrap().clone()).collect();
                            (d.clone(), chunks)
                        })
                        .collect()
                }
            };
            let triplets = match &triplets {
                Some(p) => read_triplets(p)?,
                None => Vec::new(),
            };
            let mut ws = Workspace::load_or_empty(&dir, providers.embedder.as_ref())?;
            let report = ws.ingest_chunked(documents, &triplets, providers.embedder.as_ref(), providers.batch_size, &providers.retry)?;
            writeln!(
                out,
                "documents: {} added, {} replaced, {} unchanged",
                report.added_documents, report.replaced_documents, report.unchanged_documents
            )?;
            writeln!(out, "new chunks: {}", report.new_chunks)?;
            if !triplets.is_empty() {
                writeln!(out, "triplets: {} inserted, {} outside ingested documents", report.triplets_inserted, report.triplets_skipped)?;
            }
            if extract {
                extract_into(&mut ws, &providers, &cfg, out)?;
            }
            ws.save(&dir)?;
            let c = ws.counts();
            writeln!(out, "workspace: {} documents, {} chunks, {} triplets", c.documents, c.chunks, c.triplets)?;
        }
        Command::ExtractKg { from } => {
            let mut ws = Workspace::load(&dir)?;
            match from {
                Some(p) => {
                    let inserted = ws.import_triplets(read_triplets(&p)?)?;
                    writeln!(out, "triplets inserted: {inserted}")?;
                }
                None => {
                    let providers = ProviderSet::from_config(&cfg)?;
                    extract_into(&mut ws, &providers, &cfg, out)?;
                }
            }
            ws.save(&dir)?;
        }
        Command::Query { question, retrieval, explain } => {
            let ws = Workspace::load(&dir)?;
            let providers = ProviderSet::from_config(&cfg)?;
            let pcfg = retrieval.apply(&cfg.pipeline);
            let result = answer_query(&question, ws.kb(), &providers.providers(), &pcfg, &SimilarityCache::new());
            let outcome = match result {
                Ok(o) => o,
                Err(e) => {
                    if let Some(r) = retry_error(&e) {
                        for line in &r.trace {
                            eprintln!("  {line}");
                        }
                    }
                    return Err(e.into());
                }
            };
            if explain {
                let a = &outcome.answer;
                let doc = json!({
                    "question": question,
                    "trace": outcome.trace,
                    "prompt": outcome.prompt,
                    "answer": {"text": a.text, "model_id": a.model_id, "attempts": a.attempts, "empty": a.empty},
                });
                writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
            } else {
                writeln!(out, "{}", outcome.answer.text)?;
            }
        }
        Command::Eval { qa, format, setting, parallelism, retrieval, shuffle, seed, json: json_out } => {
            require(&qa)?;
            let ws = Workspace::load(&dir)?;
            let providers = ProviderSet::from_config(&cfg)?;
            let examples: Vec<QaExample> = match format {
                InputFormat::Jsonl => read_jsonl(open(&qa)?)?,
                InputFormat::Hotpot => load_hotpot_corpus(&qa, &cfg.chunking()?)?.examples,
            };
            let eval_cfg = EvalConfig {
                pipeline: retrieval.apply(&cfg.pipeline),
                setting: match setting {
                    SettingArg::Distractor => Setting::Distractor,
                    SettingArg::Fullwiki => Setting::Fullwiki,
                },
                parallelism,
            };
            let report = match shuffle {
                None => run_eval(
                    &EvalDataset { corpus: &ws.corpus, kg: &ws.kg, index: &ws.index, examples: &examples },
                    &eval_cfg,
                    &providers.providers(),
                ),
                Some(path) => {
                    let categories = read_category_map(open(&path)?)?;
                    let shuffled = shuffle_entities(&ws.corpus, &ws.kg, &examples, &categories, seed)?;
                    for c in &shuffled.identity_categories {
                        eprintln!("warning: category {c:?} has one member; left unchanged");
                    }
                    let mut index = VectorIndex::for_provider(providers.embedder.as_ref());
                    let items: Vec<(String, String)> =
                        shuffled.corpus.chunks().map(|c| (c.chunk_id.clone(), c.text.clone())).collect();
                    index.add_texts(providers.embedder.as_ref(), &items, providers.batch_size, &providers.retry)?;
                    run_eval(
                        &EvalDataset { corpus: &shuffled.corpus, kg: &shuffled.kg, index: &index, examples: &shuffled.examples },
                        &eval_cfg,
                        &providers.providers(),
                    )
                }
            };
            write!(out, "{}", report.render_table())?;
            for r in report.examples.iter().filter(|r| r.failed()) {
                writeln!(out, "failed {}: {}", r.query_id, r.error.as_deref().unwrap_or(""))?;
            }
            if let Some(p) = json_out {
                std::fs::write(&p, report.to_json()).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Serve { addr } => {
            let ws = Workspace::load(&dir)?;
            let providers = ProviderSet::from_config(&cfg)?;
            let addr = addr.unwrap_or_else(|| cfg.server.addr.clone());
            let state = Arc::new(AppState::new(ws, providers, cfg.pipeline, cfg.chunking()?, Some(dir)));
            let handle = server::spawn(state, &addr)?;
            writeln!(out, "listening on http://{}", handle.addr)?;
            out.flush()?;
            handle.wait();
        }
        Command::RemoveDoc { doc_id } => {
            let mut ws = Workspace::load(&dir)?;
            let r = ws.remove_document(&doc_id)?;
            ws.save(&dir)?;
            writeln!(out, "removed {doc_id}: {} chunks, {} triplets", r.chunks, r.triplets)?;
        }
        Command::Stats => {
            let ws = Workspace::load(&dir)?;
            let doc = json!({
                "counts": ws.counts(),
                "created_at": ws.kg.created_at(),
                "fingerprint": ws.index.fingerprint(),
                "triplets": triplet_stats(&ws.kg, &ws.corpus),
            });
            writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
        }
    }
    Ok(())
}

fn extract_into(ws: &mut Workspace, providers: &ProviderSet, cfg: &AppConfig, out: &mut dyn Write) -> Result<()> {
    let report = extract_corpus(&ws.corpus, providers.llm.as_ref(), &cfg.extraction(), &mut ws.kg, &mut ws.extracted)?;
    writeln!(
        out,
        "extraction: {} chunks processed, {} already done, {} triplets inserted, {} unparsable lines",
        report.processed, report.already_done, report.inserted, report.skipped_lines
    )?;
    for f in &report.failed {
        writeln!(out, "extraction failed for {} after {} attempt(s): {}", f.chunk_id, f.attempts, f.error)?;
    }
    Ok(())
}

/// Exit status for an error: 2 for missing inputs, 1 otherwise.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    let missing = e.chain().any(|c| {
        c.downcast_ref::<MissingPath>().is_some()
            || matches!(c.downcast_ref::<kgctx_core::corpus::CorpusError>(), Some(kgctx_core::corpus::CorpusError::NotFound(_)))
    });
    if missing {
        2
    } else {
        1
    }
}
