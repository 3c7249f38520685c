//! Tokenization and a closed vocabulary built from world content.
//!
//! Everything the engine can ever print is generated from a fixed grammar,
//! so a vocabulary assembled up front from the world file covers all runtime
//! text. Unknown tokens still map to a reserved id rather than failing, which
//! keeps encoders total.

use std::collections::{BTreeMap, BTreeSet};

use crate::world::WorldSpec;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SEP: usize = 2;
const SPECIALS: [&str; 3] = ["<pad>", "<unk>", "<sep>"];

/// Lowercase, whitespace-split, with punctuation stripped from token edges.
/// Apostrophes and hyphens survive, so "can't" and "-10" stay whole.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.to_lowercase())
        .map(|w| w.trim_matches(|c: char| ".,:;!?\"()".contains(c)).to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    /// Specials first, then the distinct corpus tokens in sorted order.
    pub fn build<I, S>(corpus: I) -> Vocab
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut words = BTreeSet::new();
        for text in corpus {
            for token in tokenize(text.as_ref()) {
                words.insert(token);
            }
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.into_iter().filter(|w| !SPECIALS.contains(&w.as_str())));
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    pub fn for_world(spec: &WorldSpec) -> Vocab {
        Self::for_world_with_extras(spec, std::iter::empty::<&str>())
    }

    /// World text plus caller-supplied strings (knowledge sources, question
    /// templates, and so on).
    pub fn for_world_with_extras<I, S>(spec: &WorldSpec, extras: I) -> Vocab
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut corpus: Vec<String> =
            WorldSpec::grammar_lexicon().iter().map(|w| w.to_string()).collect();
        for loc in &spec.locations {
            corpus.push(loc.name.clone());
        }
        for obj in &spec.objects {
            corpus.push(obj.name.clone());
            if let Some(material) = &obj.material {
                corpus.push(material.clone());
            }
            if let Some(t) = obj.temperature {
                corpus.push(format!("{}", t));
            }
            if let Some(l) = obj.lifespan {
                corpus.push(format!("{}", l));
            }
            if let Some(text) = &obj.text {
                corpus.push(text.clone());
            }
        }
        for task in &spec.tasks {
            for variation in &task.variations {
                corpus.push(variation.description.clone());
                for action in &variation.golden {
                    corpus.push(action.clone());
                }
            }
        }
        corpus.extend(extras.into_iter().map(|s| s.as_ref().to_string()));
        Self::build(corpus)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    /// `state <sep> action`, the pairing used by text rankers.
    pub fn encode_pair(&self, state: &str, action: &str) -> Vec<usize> {
        let mut ids = self.encode(state);
        ids.push(SEP);
        ids.extend(self.encode(action));
        ids
    }

    pub fn has_unknown(&self, text: &str) -> bool {
        self.encode(text).contains(&UNK)
    }
}
