use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{answer_metrics, retrieval_metrics, Metrics};
use crate::corpus::{Corpus, QaExample};
use crate::embedding_index::{SimilarityCache, VectorIndex};
use crate::generation::{assemble_prompt, generate_answer};
use crate::kg_store::AssociationKg;
use crate::parallel::par_map;
use crate::pipeline::{retrieve, KnowledgeBase, PipelineConfig, PipelineError, Providers};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Retrieval restricted to the documents supplied with each question.
    #[default]
    Distractor,
    /// Retrieval over the whole document pool.
    Fullwiki,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub pipeline: PipelineConfig,
    pub setting: Setting,
    pub parallelism: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { pipeline: PipelineConfig::default(), setting: Setting::Distractor, parallelism: 1 }
    }
}

#[derive(Clone, Copy)]
pub struct EvalDataset<'a> {
    pub corpus: &'a Corpus,
    pub kg: &'a AssociationKg,
    pub index: &'a VectorIndex,
    pub examples: &'a [QaExample],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigSnapshot {
    pub setting: Setting,
    pub seed_k: usize,
    pub budget_k: usize,
    pub hops: usize,
    pub keep_unlinked_seeds: bool,
    pub expansion: bool,
    pub organization: bool,
    pub embedder: String,
    pub reranker: String,
    pub llm: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleResult {
    pub query_id: String,
    pub error: Option<String>,
    pub prediction: Option<String>,
    pub answer: Option<Metrics>,
    pub retrieval: Option<Metrics>,
    pub retrieved: Vec<String>,
    pub rerank_fallback: bool,
}

impl ExampleResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Aggregate {
    pub examples: usize,
    pub evaluated: usize,
    pub failed: usize,
    /// Means over evaluated (non-failed) examples.
    pub answer: Metrics,
    pub retrieval: Metrics,
    pub avg_retrieved_chunks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config: ConfigSnapshot,
    pub aggregate: Aggregate,
    pub examples: Vec<ExampleResult>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_table(&self) -> String {
        let c = &self.config;
        let a = &self.aggregate;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "setting={:?} seed_k={} k={} m={} expansion={} organization={} unlinked_seeds={}",
            c.setting, c.seed_k, c.budget_k, c.hops, c.expansion, c.organization, c.keep_unlinked_seeds
        );
        let _ = writeln!(out, "examples={} evaluated={} failed={}", a.examples, a.evaluated, a.failed);
        let _ = writeln!(out, "{:<10} {:>8} {:>10} {:>8}", "", "F1", "Precision", "Recall");
        for (name, m) in [("response", a.answer), ("retrieval", a.retrieval)] {
            let _ = writeln!(out, "{:<10} {:>8.3} {:>10.3} {:>8.3}", name, m.f1, m.precision, m.recall);
        }
        let _ = writeln!(out, "avg retrieved chunks: {:.2}", a.avg_retrieved_chunks);
        out
    }
}

fn evaluate_one(
    example: &QaExample,
    data: &EvalDataset<'_>,
    cfg: &EvalConfig,
    providers: &Providers<'_>,
) -> Result<ExampleResult, PipelineError> {
    let restricted;
    let kb = match cfg.setting {
        Setting::Fullwiki => KnowledgeBase { corpus: data.corpus, kg: data.kg, index: data.index },
        Setting::Distractor => {
            let docs = example.context_docs.iter().map(String::as_str);
            let chunk_ids: Vec<&str> = example
                .context_docs
                .iter()
                .flat_map(|d| data.corpus.chunk_ids_of(d))
                .map(String::as_str)
                .collect();
            restricted = (data.kg.restricted_to_docs(docs), data.index.restricted(chunk_ids));
            KnowledgeBase { corpus: data.corpus, kg: &restricted.0, index: &restricted.1 }
        }
    };
    let cache = SimilarityCache::new();
    let trace = retrieve(&example.question, kb, providers, &cfg.pipeline, &cache)?;
    let prompt = assemble_prompt(&trace.bundle, data.corpus, &example.question, cfg.pipeline.char_ceiling)?;
    let answer = generate_answer(providers.llm, &prompt, &providers.retry, cfg.pipeline.max_output_units)?;
    let retrieved: Vec<String> = trace.bundle.chunk_ids().map(str::to_string).collect();
    let retrieved_set: BTreeSet<String> = retrieved.iter().cloned().collect();
    Ok(ExampleResult {
        query_id: example.query_id.clone(),
        error: None,
        answer: Some(answer_metrics(&answer.text, &example.gold_answer)),
        prediction: Some(answer.text),
        retrieval: Some(retrieval_metrics(&retrieved_set, &example.gold_support)),
        retrieved,
        rerank_fallback: trace.rerank_fallback.is_some(),
    })
}

/// Evaluates every example, up to `cfg.parallelism` at a time. Results keep
/// dataset order regardless of scheduling; failed examples are reported and
/// excluded from the means.
pub fn run_eval(data: &EvalDataset<'_>, cfg: &EvalConfig, providers: &Providers<'_>) -> EvalReport {
    let results = par_map(data.examples, cfg.parallelism, |example| {
        evaluate_one(example, data, cfg, providers).unwrap_or_else(|e| ExampleResult {
            query_id: example.query_id.clone(),
            error: Some(e.to_string()),
            prediction: None,
            answer: None,
            retrieval: None,
            retrieved: Vec::new(),
            rerank_fallback: false,
        })
    });

    let ok: Vec<&ExampleResult> = results.iter().filter(|r| !r.failed()).collect();
    let avg_retrieved_chunks = if ok.is_empty() {
        0.0
    } else {
        ok.iter().map(|r| r.retrieved.len() as f64).sum::<f64>() / ok.len() as f64
    };
    let aggregate = Aggregate {
        examples: results.len(),
        evaluated: ok.len(),
        failed: results.len() - ok.len(),
        answer: Metrics::mean(ok.iter().filter_map(|r| r.answer.as_ref())),
        retrieval: Metrics::mean(ok.iter().filter_map(|r| r.retrieval.as_ref())),
        avg_retrieved_chunks,
    };
    let p = &cfg.pipeline;
    EvalReport {
        config: ConfigSnapshot {
            setting: cfg.setting,
            seed_k: p.seed_k,
            budget_k: p.budget_k,
            hops: p.hops,
            keep_unlinked_seeds: p.keep_unlinked_seeds,
            expansion: p.expansion,
            organization: p.organization,
            embedder: providers.embedder.fingerprint(),
            reranker: providers.reranker.name(),
            llm: providers.llm.model_id(),
        },
        aggregate,
        examples: results,
    }
}
