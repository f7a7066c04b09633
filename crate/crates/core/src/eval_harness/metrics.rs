use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

impl Metrics {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { f1, precision, recall }
    }

    pub fn mean<'a>(items: impl IntoIterator<Item = &'a Metrics>) -> Metrics {
        let mut n = 0usize;
        let mut sum = Metrics::default();
        for m in items {
            n += 1;
            sum.f1 += m.f1;
            sum.precision += m.precision;
            sum.recall += m.recall;
        }
        if n == 0 {
            return Metrics::default();
        }
        let n = n as f64;
        Metrics { f1: sum.f1 / n, precision: sum.precision / n, recall: sum.recall / n }
    }
}

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Token-level overlap in the HotpotQA/SQuAD style.
pub fn answer_metrics(prediction: &str, gold: &str) -> Metrics {
    let pred = normalize_answer(prediction);
    let gold = normalize_answer(gold);
    let pred_tokens: Vec<&str> = pred.split_whitespace().collect();
    let gold_tokens: Vec<&str> = gold.split_whitespace().collect();
    match (pred_tokens.is_empty(), gold_tokens.is_empty()) {
        (true, true) => return Metrics { f1: 1.0, precision: 1.0, recall: 1.0 },
        (true, false) | (false, true) => return Metrics::default(),
        _ => {}
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_tokens {
        *gold_counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred_tokens {
        if let Some(n) = gold_counts.get_mut(t) {
            if *n > 0 {
                *n -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return Metrics::default();
    }
    Metrics::from_pr(common as f64 / pred_tokens.len() as f64, common as f64 / gold_tokens.len() as f64)
}

/// Set overlap between retrieved chunk ids and gold support chunk ids.
/// Empty retrieved gives P = 0; empty gold gives R = 1.
pub fn retrieval_metrics(retrieved: &BTreeSet<String>, gold: &BTreeSet<String>) -> Metrics {
    let hit = retrieved.intersection(gold).count() as f64;
    let precision = if retrieved.is_empty() { 0.0 } else { hit / retrieved.len() as f64 };
    let recall = if gold.is_empty() { 1.0 } else { hit / gold.len() as f64 };
    Metrics::from_pr(precision, recall)
}
