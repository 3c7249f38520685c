//! Knowledge representation: triples, the growing per-episode graph, the
//! affordance store, and the rules that turn observation text back into
//! triples.
//!
//! Triple extraction is the inverse of the observation generator: each
//! sentence form the engine can emit maps to a fixed rule, and sentences that
//! match no rule are skipped.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {detail}")]
    Format { path: String, line: usize, detail: String },
    #[error("steps must increase: last recorded {last}, got {given}")]
    Step { last: u32, given: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    HasA,
    In,
    CapableOf,
    UsedFor,
    ConnectedTo,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::HasA => "hasA",
            Relation::In => "in",
            Relation::CapableOf => "capableOf",
            Relation::UsedFor => "usedFor",
            Relation::ConnectedTo => "connectedTo",
        }
    }

    pub fn parse(s: &str) -> Option<Relation> {
        match s {
            "hasA" => Some(Relation::HasA),
            "in" => Some(Relation::In),
            "capableOf" => Some(Relation::CapableOf),
            "usedFor" => Some(Relation::UsedFor),
            "connectedTo" => Some(Relation::ConnectedTo),
            _ => None,
        }
    }

    /// Natural-language rendering used when knowledge is fed back as text.
    pub fn phrase(self) -> &'static str {
        match self {
            Relation::HasA => "has",
            Relation::In => "in",
            Relation::CapableOf => "capable of",
            Relation::UsedFor => "used for",
            Relation::ConnectedTo => "connected to",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: String,
    pub relation: Relation,
    pub object: String,
}

impl Triple {
    pub fn new(subject: impl Into<String>, relation: Relation, object: impl Into<String>) -> Triple {
        Triple { subject: subject.into(), relation, object: object.into() }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject, self.relation.as_str(), self.object)
    }
}

/// The graph an agent accumulates over one episode. Insertion only; `reset`
/// clears it between episodes.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    triples: BTreeSet<Triple>,
}

impl KnowledgeGraph {
    pub fn new() -> KnowledgeGraph {
        KnowledgeGraph::default()
    }

    pub fn insert(&mut self, triple: Triple) -> bool {
        self.triples.insert(triple)
    }

    /// Extract triples from observation text and add them all.
    pub fn absorb(&mut self, text: &str) -> usize {
        extract_triples(text).into_iter().filter(|t| self.insert(t.clone())).count()
    }

    pub fn reset(&mut self) {
        self.triples.clear();
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triples.contains(triple)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    /// Every name appearing as subject or object, sorted and distinct.
    pub fn entities(&self) -> Vec<String> {
        let mut names = BTreeSet::new();
        for t in &self.triples {
            names.insert(t.subject.clone());
            names.insert(t.object.clone());
        }
        names.into_iter().collect()
    }
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

fn strip_article(chunk: &str) -> &str {
    chunk
        .strip_prefix("the ")
        .or_else(|| chunk.strip_prefix("an "))
        .or_else(|| chunk.strip_prefix("a "))
        .unwrap_or(chunk)
}

/// Split a generated list ("a red box, which is open, an apple") into bare
/// names, dropping state clauses.
fn parse_list(list: &str) -> Vec<&str> {
    list.split(", ")
        .filter(|chunk| !chunk.starts_with("which is"))
        .map(strip_article)
        .filter(|name| !name.is_empty())
        .collect()
}

/// One rule per sentence form the engine emits; anything else is skipped.
/// Room-relative sentences use the most recent "This room is called the ..."
/// seen in the same text.
pub fn extract_triples(text: &str) -> Vec<Triple> {
    let mut out = Vec::new();
    let mut room: Option<String> = None;
    for sentence in text.split(". ").map(|s| s.trim_end_matches('.').trim()) {
        if sentence.is_empty() {
            continue;
        }
        if let Some(name) = sentence.strip_prefix("This room is called the ") {
            room = Some(name.to_string());
        } else if let Some(list) = sentence.strip_prefix("In it, you see: ") {
            if let Some(room) = &room {
                for item in parse_list(list) {
                    if item != "agent" {
                        out.push(Triple::new(room.clone(), Relation::HasA, item));
                    }
                }
            }
        } else if let Some(list) = sentence.strip_prefix("In your inventory, you see: ") {
            if list != "nothing" {
                for item in parse_list(list) {
                    out.push(Triple::new(item, Relation::In, "inventory"));
                }
            }
        } else if let Some(list) = sentence.strip_prefix("You also see: ") {
            if let Some(room) = &room {
                for item in parse_list(list) {
                    if let Some(neighbor) = item.strip_prefix("door to the ") {
                        out.push(Triple::new(room.clone(), Relation::ConnectedTo, neighbor));
                    }
                }
            }
        } else if let Some((subject, list)) = sentence
            .strip_prefix("On the ")
            .or_else(|| sentence.strip_prefix("In the "))
            .and_then(|rest| rest.split_once(" is: "))
        {
            for item in parse_list(list) {
                out.push(Triple::new(subject, Relation::HasA, item));
            }
        } else if let Some((subject, list)) = sentence
            .strip_prefix("The ")
            .and_then(|rest| rest.split_once(" is connected to: "))
        {
            for item in parse_list(list) {
                out.push(Triple::new(subject, Relation::ConnectedTo, item));
            }
        } else if let Some(name) = sentence.strip_prefix("You take the ") {
            out.push(Triple::new(name, Relation::In, "inventory"));
        } else if let Some(rest) = sentence.strip_prefix("You move the ") {
            if let Some((x, y)) = rest.split_once(" to the ") {
                out.push(Triple::new(y, Relation::HasA, x));
            }
        } else if let Some(rest) = sentence.strip_prefix("You put the ") {
            if let Some((x, y)) = rest.split_once(" in the ") {
                out.push(Triple::new(y, Relation::HasA, x));
            }
        } else if let Some(rest) = sentence.strip_prefix("You connect the ") {
            if let Some((x, y)) = rest.split_once(" to the ") {
                out.push(Triple::new(x, Relation::ConnectedTo, y));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Affordances
// ---------------------------------------------------------------------------

/// Background knowledge about what objects are for, loaded from a
/// tab-separated file of `subject<TAB>relation<TAB>object` rows restricted to
/// the capableOf and usedFor relations.
#[derive(Debug, Clone, Default)]
pub struct AffordanceStore {
    triples: Vec<Triple>,
}

impl AffordanceStore {
    pub fn parse(text: &str, display_name: &str) -> Result<AffordanceStore, KnowledgeError> {
        let mut seen = BTreeSet::new();
        let mut triples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(subject), Some(relation), Some(object), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(KnowledgeError::Format {
                    path: display_name.to_string(),
                    line: line_no,
                    detail: "expected three tab-separated fields".to_string(),
                });
            };
            let Some(relation) = Relation::parse(relation) else {
                return Err(KnowledgeError::Format {
                    path: display_name.to_string(),
                    line: line_no,
                    detail: format!("unknown relation '{}'", relation),
                });
            };
            if !matches!(relation, Relation::CapableOf | Relation::UsedFor) {
                return Err(KnowledgeError::Format {
                    path: display_name.to_string(),
                    line: line_no,
                    detail: format!("affordances use capableOf or usedFor, not {}", relation.as_str()),
                });
            }
            let triple = Triple::new(subject, relation, object);
            if seen.insert(triple.clone()) {
                triples.push(triple);
            }
        }
        Ok(AffordanceStore { triples })
    }

    pub fn load(path: &Path) -> Result<AffordanceStore, KnowledgeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KnowledgeError::Io { path: path.display().to_string(), source: e })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// The affordance file shipped with the crate, covering the bundled
    /// worlds plus common household objects.
    pub fn bundled() -> AffordanceStore {
        Self::parse(include_str!("../data/affordances.tsv"), "affordances.tsv")
            .expect("bundled affordance file is well formed")
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    pub fn for_subject<'a>(&'a self, subject: &'a str) -> impl Iterator<Item = &'a Triple> {
        self.triples.iter().filter(move |t| t.subject == subject)
    }

    pub fn subjects(&self) -> Vec<String> {
        let names: BTreeSet<String> = self.triples.iter().map(|t| t.subject.clone()).collect();
        names.into_iter().collect()
    }

    /// Rendered one sentence per triple, usable both as encoder input and as
    /// vocabulary corpus.
    pub fn corpus(&self) -> Vec<String> {
        self.triples.iter().map(render_triple).collect()
    }
}

pub fn render_triple(t: &Triple) -> String {
    format!("{} {} {}.", t.subject, t.relation.phrase(), t.object)
}

/// Render the affordances whose subjects appear in `mentioned`, in store
/// order, as one text block.
pub fn render_affordances_for(store: &AffordanceStore, mentioned: &BTreeSet<String>) -> String {
    store
        .iter()
        .filter(|t| mentioned.contains(&t.subject))
        .map(render_triple)
        .collect::<Vec<_>>()
        .join(" ")
}

// ---------------------------------------------------------------------------
// Correct-action memory
// ---------------------------------------------------------------------------

/// Sliding window over actions that earned reward, newest last. Steps must
/// strictly increase between recorded entries.
#[derive(Debug, Clone)]
pub struct McaBuffer {
    window: usize,
    entries: Vec<(u32, String)>,
}

impl McaBuffer {
    pub fn new(window: usize) -> McaBuffer {
        McaBuffer { window, entries: Vec::new() }
    }

    /// Records only when the reward is positive; returns whether it recorded.
    pub fn record(&mut self, step: u32, action: &str, reward: f64) -> Result<bool, KnowledgeError> {
        if reward <= 0.0 {
            return Ok(false);
        }
        if let Some(&(last, _)) = self.entries.last() {
            if step <= last {
                return Err(KnowledgeError::Step { last, given: step });
            }
        }
        self.entries.push((step, action.to_string()));
        Ok(true)
    }

    pub fn reset(&mut self) {
        self.entries.clear();
    }

    /// The most recent recorded actions, oldest first, at most the window.
    pub fn recent(&self) -> Vec<&str> {
        let skip = self.entries.len().saturating_sub(self.window);
        self.entries[skip..].iter().map(|(_, a)| a.as_str()).collect()
    }

    /// Window contents as one text block for encoders.
    pub fn render(&self) -> String {
        self.recent().iter().map(|a| format!("{}.", a)).collect::<Vec<_>>().join(" ")
    }

    /// Window contents as graph facts about the agent.
    pub fn triples(&self) -> Vec<Triple> {
        self.recent()
            .iter()
            .map(|a| Triple::new("agent", Relation::CapableOf, *a))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{enumerate_reachable, fixtures};

    #[test]
    fn relations_roundtrip() {
        for r in [Relation::HasA, Relation::In, Relation::CapableOf, Relation::UsedFor, Relation::ConnectedTo] {
            assert_eq!(Relation::parse(r.as_str()), Some(r));
        }
        assert_eq!(Relation::parse("locatedAt"), None);
    }

    #[test]
    fn extraction_reads_room_contents_doors_and_inventory() {
        let text = "This room is called the kitchen. In it, you see: the agent, a table, \
                    a fridge, which is closed. On the table is: a thermometer. \
                    You also see: a door to the hallway. In your inventory, you see: an apple.";
        let got = extract_triples(text);
        let want = vec![
            Triple::new("kitchen", Relation::HasA, "table"),
            Triple::new("kitchen", Relation::HasA, "fridge"),
            Triple::new("table", Relation::HasA, "thermometer"),
            Triple::new("kitchen", Relation::ConnectedTo, "hallway"),
            Triple::new("apple", Relation::In, "inventory"),
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn extraction_reads_action_responses() {
        assert_eq!(
            extract_triples("You move the apple to the blue box."),
            vec![Triple::new("blue box", Relation::HasA, "apple")]
        );
        assert_eq!(
            extract_triples("You put the pear in the box."),
            vec![Triple::new("box", Relation::HasA, "pear")]
        );
        assert_eq!(
            extract_triples("You connect the red wire to the solar panel."),
            vec![Triple::new("red wire", Relation::ConnectedTo, "solar panel")]
        );
        assert_eq!(
            extract_triples("You take the almanac."),
            vec![Triple::new("almanac", Relation::In, "inventory")]
        );
        assert_eq!(
            extract_triples("The red wire is connected to: a battery, a switch."),
            vec![
                Triple::new("red wire", Relation::ConnectedTo, "battery"),
                Triple::new("red wire", Relation::ConnectedTo, "switch"),
            ]
        );
    }

    #[test]
    fn unrecognized_sentences_are_skipped() {
        assert!(extract_triples("You can't do that.").is_empty());
        assert!(extract_triples("turtles live about 100 years.").is_empty());
        assert!(extract_triples("Your task is to walk to the study.").is_empty());
        // Room-relative sentences without a room sentence stay silent.
        assert!(extract_triples("In it, you see: the agent, a lamp.").is_empty());
    }

    /// Whatever the engine says it shows must equal what extraction recovers,
    /// state by state.
    fn assert_fidelity(spec: &std::sync::Arc<crate::world::WorldSpec>, task: &str, cap: usize) {
        let states = enumerate_reachable(spec, task, 0, cap).unwrap();
        assert!(!states.is_empty());
        for state in &states {
            let text = format!("{} {}", state.freelook(), state.inventory_text());
            let got: BTreeSet<Triple> = extract_triples(&text).into_iter().collect();
            let want: BTreeSet<Triple> = state
                .visible_relations()
                .into_iter()
                .map(|(s, r, o)| Triple::new(s, Relation::parse(&r).unwrap(), o))
                .collect();
            assert_eq!(got, want, "state {}", state.layout_key());
        }
    }

    #[test]
    fn extraction_matches_visible_relations_on_chain_exhaustively() {
        let spec = fixtures::chain().unwrap();
        assert_fidelity(&spec, "reach", usize::MAX);
    }

    #[test]
    fn extraction_matches_visible_relations_on_mini_science_sample() {
        let spec = fixtures::mini_science().unwrap();
        for task in ["classify", "electricity"] {
            assert_fidelity(&spec, task, 250);
        }
    }

    #[test]
    fn graph_accumulates_and_resets() {
        let mut kg = KnowledgeGraph::new();
        assert_eq!(kg.absorb("You take the almanac."), 1);
        assert_eq!(kg.absorb("You take the almanac."), 0);
        kg.absorb("This room is called the garden. In it, you see: the agent, a turtle.");
        assert_eq!(kg.len(), 2);
        assert_eq!(kg.entities(), vec!["almanac", "garden", "inventory", "turtle"]);
        kg.reset();
        assert!(kg.is_empty());
    }

    #[test]
    fn affordance_parsing_validates_relations_and_shape() {
        let store = AffordanceStore::parse("apple\tusedFor\teating\napple\tusedFor\teating\n", "t").unwrap();
        assert_eq!(store.len(), 1);

        let err = AffordanceStore::parse("apple\thasA\tseed\n", "t").unwrap_err();
        assert!(err.to_string().contains("t:1"));
        assert!(err.to_string().contains("capableOf or usedFor"));

        let err = AffordanceStore::parse("apple usedFor eating\n", "t").unwrap_err();
        assert!(err.to_string().contains("three tab-separated fields"));

        let err = AffordanceStore::parse("apple\tconsumes\tsun\n", "t").unwrap_err();
        assert!(err.to_string().contains("unknown relation"));
    }

    #[test]
    fn bundled_affordances_cover_world_objects() {
        let store = AffordanceStore::bundled();
        assert!(store.len() >= 40);
        assert!(store
            .iter()
            .any(|t| t.subject == "apple" && t.relation == Relation::UsedFor && t.object == "eating"));
        for name in ["thermometer", "red wire", "solar panel", "fridge", "turtle"] {
            assert!(store.for_subject(name).count() >= 1, "no affordances for {}", name);
        }
    }

    #[test]
    fn mca_buffer_keeps_a_window_of_rewarded_actions() {
        let mut mca = McaBuffer::new(3);
        assert!(!mca.record(1, "look around", 0.0).unwrap());
        for (step, action) in [(2, "a"), (5, "b"), (7, "c"), (9, "d")] {
            assert!(mca.record(step, action, 16.6).unwrap());
        }
        assert_eq!(mca.recent(), vec!["b", "c", "d"]);
        assert_eq!(mca.render(), "b. c. d.");
        assert!(matches!(mca.record(9, "e", 1.0), Err(KnowledgeError::Step { last: 9, given: 9 })));
        assert!(mca.triples().iter().all(|t| t.subject == "agent" && t.relation == Relation::CapableOf));
        mca.reset();
        assert!(mca.recent().is_empty());
    }
}
