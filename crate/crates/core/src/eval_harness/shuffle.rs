use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, QaExample};
use crate::kg_builder::Triplet;
use crate::kg_store::{AssociationKg, KgError};

#[derive(Debug, Error)]
pub enum ShuffleError {
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Io(#[from] CorpusError),
    #[error("entity `{0}` is listed under more than one category")]
    ConflictingCategory(String),
}

/// One line of the category map file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub entity: String,
    pub category: String,
}

pub fn read_category_map<R: BufRead>(input: R) -> Result<BTreeMap<String, String>, ShuffleError> {
    let entries: Vec<CategoryEntry> = crate::corpus::read_jsonl(input)?;
    let mut map = BTreeMap::new();
    for e in entries {
        if let Some(prev) = map.insert(e.entity.clone(), e.category.clone()) {
            if prev != e.category {
                return Err(ShuffleError::ConflictingCategory(e.entity));
            }
        }
    }
    Ok(map)
}

#[derive(Debug, Clone)]
pub struct ShuffleOutcome {
    pub corpus: Corpus,
    pub kg: AssociationKg,
    pub examples: Vec<QaExample>,
    /// entity -> replacement; a bijection within each category
    pub mapping: BTreeMap<String, String>,
    /// Categories with a single member, left unchanged.
    pub identity_categories: Vec<String>,
}

/// A uniformly drawn derangement of `members` (no entity maps to itself).
fn draw_derangement(members: &[String], rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut perm = members.to_vec();
    loop {
        perm.shuffle(rng);
        if perm.iter().zip(members).all(|(a, b)| a != b) {
            return perm;
        }
    }
}

struct Replacer {
    pattern: Option<Regex>,
    mapping: BTreeMap<String, String>,
}

impl Replacer {
    fn new(mapping: BTreeMap<String, String>) -> Self {
        let mut keys: Vec<&String> = mapping.iter().filter(|(k, v)| k != v).map(|(k, _)| k).collect();
        // longest first so "New York City" wins over "New York"
        keys.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        let alternatives: Vec<String> = keys
            .iter()
            .map(|k| {
                let word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
                let lead = if word(k.chars().next()) { r"\b" } else { "" };
                let trail = if word(k.chars().last()) { r"\b" } else { "" };
                format!("{lead}{}{trail}", regex::escape(k))
            })
            .collect();
        let pattern = (!alternatives.is_empty())
            .then(|| Regex::new(&alternatives.join("|")).expect("escaped alternation is a valid regex"));
        Self { pattern, mapping }
    }

    fn apply(&self, text: &str) -> String {
        match &self.pattern {
            None => text.to_string(),
            Some(re) => re.replace_all(text, |caps: &regex::Captures| self.mapping[&caps[0]].clone()).into_owned(),
        }
    }
}

/// Replaces every occurrence of each categorized entity with another member
/// of its category, consistently across documents, chunks, questions,
/// answers and triplet endpoints. All rewrites happen in one pass, so swaps
/// do not chain. Document, chunk, triplet and example counts are unchanged.
pub fn shuffle_entities(
    corpus: &Corpus,
    kg: &AssociationKg,
    examples: &[QaExample],
    category_map: &BTreeMap<String, String>,
    seed: u64,
) -> Result<ShuffleOutcome, ShuffleError> {
    let mut categories: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for (entity, category) in category_map {
        categories.entry(category.as_str()).or_default().insert(entity.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mapping = BTreeMap::new();
    let mut identity_categories = Vec::new();
    for (category, members) in &categories {
        let members: Vec<String> = members.iter().cloned().collect();
        if members.len() < 2 {
            identity_categories.push(category.to_string());
            mapping.extend(members.iter().map(|m| (m.clone(), m.clone())));
            continue;
        }
        let images = draw_derangement(&members, &mut rng);
        mapping.extend(members.into_iter().zip(images));
    }

    let replacer = Replacer::new(mapping.clone());

    let mut new_corpus = corpus.clone();
    for doc in new_corpus.documents_mut() {
        doc.title = replacer.apply(&doc.title);
        doc.text = replacer.apply(&doc.text);
    }
    for chunk in new_corpus.chunks_mut() {
        chunk.text = replacer.apply(&chunk.text);
    }

    let new_examples = examples
        .iter()
        .map(|ex| QaExample {
            question: replacer.apply(&ex.question),
            gold_answer: replacer.apply(&ex.gold_answer),
            ..ex.clone()
        })
        .collect();

    let triplets: Vec<Triplet> = kg
        .triplets()
        .map(|(_, t)| Triplet {
            head: replacer.apply(&t.head),
            relation: t.relation.clone(),
            tail: replacer.apply(&t.tail),
            source_chunk: t.source_chunk.clone(),
        })
        .collect();
    let mut new_kg = AssociationKg::new(kg.created_at());
    new_kg.insert_triplets(triplets, &new_corpus)?;

    Ok(ShuffleOutcome { corpus: new_corpus, kg: new_kg, examples: new_examples, mapping, identity_categories })
}
