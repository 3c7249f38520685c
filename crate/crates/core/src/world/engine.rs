//! Episode mechanics: action parsing, effects, scoring, and text generation.

use std::collections::BTreeSet;
use std::sync::Arc;

use super::file::{
    add_fractions, Fraction, Placement, PowerKind, Predicate, State, Template, Verb, WorldSpec,
};
use super::WorldError;

/// Hard cap on episode length; the episode ends when it is reached.
pub const STEP_LIMIT: u32 = 100;

/// Observation for unparseable or inapplicable actions. Such a step changes
/// nothing but still consumes one step of the budget.
pub const REFUSAL_TEXT: &str = "You can't do that.";

/// Scores are rendered with two decimals, truncated (two thirds of the full
/// score prints as 66.66).
pub fn format_score(points: f64) -> String {
    let truncated = (points * 100.0).floor() / 100.0;
    format!("{:.2}", truncated)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Place {
    Room(usize),
    Inside(usize),
    Inventory,
}

/// Everything an agent receives after reset or one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: String,
    pub inventory: String,
    pub description: String,
    pub reward: f64,
    pub score: f64,
    pub done: bool,
    pub valid_actions: Vec<String>,
    pub golden_next: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EpisodeState {
    spec: Arc<WorldSpec>,
    task: usize,
    variation: usize,
    seed: u64,
    agent_loc: usize,
    places: Vec<Place>,
    states: Vec<Option<State>>,
    /// Circuit links, stored with the smaller object id first.
    connections: BTreeSet<(usize, usize)>,
    focused: Option<usize>,
    step: u32,
    fired: usize,
    score: Fraction,
    done: bool,
    golden_idx: usize,
}

#[derive(Debug, Clone, Copy)]
enum Parsed {
    Look,
    LookAt(usize),
    Take(usize),
    Open(usize),
    Close(usize),
    Activate(usize),
    Deactivate(usize),
    GoTo(usize),
    FocusOn(usize),
    MoveTo(usize, usize),
    PutIn(usize, usize),
    ConnectTo(usize, usize),
    Read(usize),
}

impl EpisodeState {
    pub fn reset(
        spec: &Arc<WorldSpec>,
        task_id: &str,
        variation: usize,
        seed: u64,
    ) -> Result<(EpisodeState, StepResult), WorldError> {
        let task_idx = spec
            .task_id(task_id)
            .ok_or_else(|| WorldError::UnknownTask { id: task_id.to_string() })?;
        let task = &spec.tasks[task_idx];
        if variation >= task.variations.len() {
            return Err(WorldError::UnknownVariation {
                task: task_id.to_string(),
                variation,
                count: task.variations.len(),
            });
        }
        let places = spec
            .objects
            .iter()
            .map(|o| match o.start {
                Placement::Room(l) => Place::Room(l),
                Placement::Inside(h) => Place::Inside(h),
            })
            .collect();
        let states = spec.objects.iter().map(|o| o.start_state).collect();
        let state = EpisodeState {
            spec: Arc::clone(spec),
            task: task_idx,
            variation,
            seed,
            agent_loc: task.start,
            places,
            states,
            connections: BTreeSet::new(),
            focused: None,
            step: 0,
            fired: 0,
            score: Fraction { num: 0, den: 1 },
            done: false,
            golden_idx: 0,
        };
        let result = state.snapshot(None, 0.0);
        Ok((state, result))
    }

    pub fn spec(&self) -> &Arc<WorldSpec> {
        &self.spec
    }

    pub fn task_id(&self) -> &str {
        &self.spec.tasks[self.task].id
    }

    pub fn variation(&self) -> usize {
        self.variation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step_count(&self) -> u32 {
        self.step
    }

    pub fn done(&self) -> bool {
        self.done
    }

    /// All subgoals fired; distinguishes success from running out of steps.
    pub fn task_complete(&self) -> bool {
        self.fired == self.current_variation().subgoals.len()
    }

    pub fn score_points(&self) -> f64 {
        self.score.points()
    }

    pub fn agent_location(&self) -> &str {
        &self.spec.locations[self.agent_loc].name
    }

    pub fn focused_object(&self) -> Option<&str> {
        self.focused.map(|o| self.spec.objects[o].name.as_str())
    }

    fn current_variation(&self) -> &super::file::Variation {
        &self.spec.tasks[self.task].variations[self.variation]
    }

    pub fn description(&self) -> String {
        self.current_variation().description.clone()
    }

    pub fn golden_next(&self) -> Option<String> {
        if self.done {
            return None;
        }
        self.current_variation().golden.get(self.golden_idx).cloned()
    }

    /// Stable fingerprint of the world configuration (ignores step counters
    /// and bookkeeping), used to deduplicate states during search.
    pub fn layout_key(&self) -> String {
        format!(
            "{}|{:?}|{:?}|{:?}|{:?}",
            self.agent_loc, self.places, self.states, self.connections, self.focused
        )
    }

    // -- visibility ---------------------------------------------------------

    fn contents_visible(&self, id: usize) -> bool {
        self.spec.objects[id].holds_things() && self.states[id] != Some(State::Closed)
    }

    fn children_of(&self, id: usize) -> Vec<usize> {
        (0..self.spec.objects.len()).filter(|&c| self.places[c] == Place::Inside(id)).collect()
    }

    fn top_level_in_room(&self) -> Vec<usize> {
        (0..self.spec.objects.len())
            .filter(|&o| self.places[o] == Place::Room(self.agent_loc))
            .collect()
    }

    /// Objects visible in the current room, breadth-first from the top level
    /// through open containers and surfaces.
    fn visible_in_room(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut queue = self.top_level_in_room();
        let mut cursor = 0;
        out.extend(queue.iter().copied());
        while cursor < queue.len() {
            let id = queue[cursor];
            cursor += 1;
            if self.contents_visible(id) {
                for child in self.children_of(id) {
                    out.push(child);
                    queue.push(child);
                }
            }
        }
        out
    }

    fn inventory_ids(&self) -> Vec<usize> {
        (0..self.spec.objects.len()).filter(|&o| self.places[o] == Place::Inventory).collect()
    }

    fn in_scope(&self) -> Vec<usize> {
        let mut out = self.visible_in_room();
        out.extend(self.inventory_ids());
        out
    }

    // -- text generation ----------------------------------------------------

    fn article(name: &str) -> &'static str {
        match name.chars().next() {
            Some('a') | Some('e') | Some('i') | Some('o') | Some('u') => "an",
            _ => "a",
        }
    }

    fn item_phrase(&self, id: usize) -> String {
        let obj = &self.spec.objects[id];
        match self.states[id] {
            Some(state) => {
                format!("{} {}, which is {}", Self::article(&obj.name), obj.name, state.word())
            }
            None => format!("{} {}", Self::article(&obj.name), obj.name),
        }
    }

    fn item_list(&self, ids: &[usize]) -> String {
        ids.iter().map(|&id| self.item_phrase(id)).collect::<Vec<_>>().join(", ")
    }

    /// Full room description, regenerated from the current state.
    pub fn freelook(&self) -> String {
        let loc = &self.spec.locations[self.agent_loc];
        let mut s = format!("This room is called the {}.", loc.name);
        let top = self.top_level_in_room();
        if top.is_empty() {
            s.push_str(" In it, you see: the agent.");
        } else {
            s.push_str(&format!(" In it, you see: the agent, {}.", self.item_list(&top)));
        }
        for id in self.visible_in_room() {
            if self.contents_visible(id) {
                let children = self.children_of(id);
                if !children.is_empty() {
                    let holder = &self.spec.objects[id];
                    let preposition = if holder.surface { "On" } else { "In" };
                    s.push_str(&format!(
                        " {} the {} is: {}.",
                        preposition,
                        holder.name,
                        self.item_list(&children)
                    ));
                }
            }
        }
        if !loc.connects.is_empty() {
            let doors: Vec<String> = loc
                .connects
                .iter()
                .map(|&n| format!("a door to the {}", self.spec.locations[n].name))
                .collect();
            s.push_str(&format!(" You also see: {}.", doors.join(", ")));
        }
        s
    }

    pub fn inventory_text(&self) -> String {
        let ids = self.inventory_ids();
        if ids.is_empty() {
            "In your inventory, you see: nothing.".to_string()
        } else {
            let list: Vec<String> = ids
                .iter()
                .map(|&id| {
                    let name = &self.spec.objects[id].name;
                    format!("{} {}", Self::article(name), name)
                })
                .collect();
            format!("In your inventory, you see: {}.", list.join(", "))
        }
    }

    fn describe(&self, id: usize) -> String {
        let obj = &self.spec.objects[id];
        let mut s = format!("You look at the {}.", obj.name);
        if let Some(state) = self.states[id] {
            s.push_str(&format!(" The {} is {}.", obj.name, state.word()));
        }
        if self.contents_visible(id) {
            let children = self.children_of(id);
            if !children.is_empty() {
                let preposition = if obj.surface { "On" } else { "In" };
                s.push_str(&format!(" {} the {} is: {}.", preposition, obj.name, self.item_list(&children)));
            }
        }
        if let Some(material) = &obj.material {
            s.push_str(&format!(" It is made of {}.", material));
        }
        if let Some(t) = obj.temperature {
            s.push_str(&format!(" It is at {} degrees.", t));
        }
        let links: Vec<String> = self
            .connections
            .iter()
            .filter_map(|&(a, b)| {
                let other = if a == id {
                    Some(b)
                } else if b == id {
                    Some(a)
                } else {
                    None
                }?;
                let name = &self.spec.objects[other].name;
                Some(format!("{} {}", Self::article(name), name))
            })
            .collect();
        if !links.is_empty() {
            s.push_str(&format!(" The {} is connected to: {}.", obj.name, links.join(", ")));
        }
        s
    }

    /// The containment and adjacency facts currently visible to the agent:
    /// room contents, contents of open containers, doors, and inventory.
    pub fn visible_relations(&self) -> Vec<(String, String, String)> {
        let mut out = Vec::new();
        let loc = &self.spec.locations[self.agent_loc];
        for id in self.top_level_in_room() {
            out.push((loc.name.clone(), "hasA".into(), self.spec.objects[id].name.clone()));
        }
        for id in self.visible_in_room() {
            if self.contents_visible(id) {
                for child in self.children_of(id) {
                    out.push((
                        self.spec.objects[id].name.clone(),
                        "hasA".into(),
                        self.spec.objects[child].name.clone(),
                    ));
                }
            }
        }
        for &n in &loc.connects {
            out.push((loc.name.clone(), "connectedTo".into(), self.spec.locations[n].name.clone()));
        }
        for id in self.inventory_ids() {
            out.push((self.spec.objects[id].name.clone(), "in".into(), "inventory".into()));
        }
        out
    }

    // -- actions ------------------------------------------------------------

    fn templates(&self) -> &[Template] {
        &self.spec.templates
    }

    fn object_named(&self, name: &str) -> Option<usize> {
        self.spec.object_id(name)
    }

    fn parse(&self, action: &str) -> Option<Parsed> {
        if action == "look around" {
            return Some(Parsed::Look);
        }
        for template in self.templates() {
            let parsed = match template.verb {
                Verb::LookAround => continue,
                Verb::LookAt => action
                    .strip_prefix("look at ")
                    .and_then(|n| self.object_named(n))
                    .map(Parsed::LookAt),
                Verb::Take => action
                    .strip_prefix("take ")
                    .and_then(|n| self.object_named(n))
                    .map(Parsed::Take),
                Verb::Open => action
                    .strip_prefix("open ")
                    .and_then(|n| self.object_named(n))
                    .map(Parsed::Open),
                Verb::Close => action
                    .strip_prefix("close ")
                    .and_then(|n| self.object_named(n))
                    .map(Parsed::Close),
                Verb::Activate => action
                    .strip_prefix("activate ")
                    .and_then(|n| self.object_named(n))
                    .map(Parsed::Activate),
                Verb::Deactivate => action
                    .strip_prefix("deactivate ")
                    .and_then(|n| self.object_named(n))
                    .map(Parsed::Deactivate),
                Verb::GoTo => action
                    .strip_prefix("go to ")
                    .and_then(|n| self.spec.location_id(n))
                    .map(Parsed::GoTo),
                Verb::FocusOn => action
                    .strip_prefix("focus on ")
                    .and_then(|n| self.object_named(n))
                    .map(Parsed::FocusOn),
                Verb::Read => action
                    .strip_prefix("read ")
                    .and_then(|n| self.object_named(n))
                    .map(Parsed::Read),
                Verb::MoveTo => action.strip_prefix("move ").and_then(|rest| {
                    let (a, b) = rest.split_once(" to ")?;
                    Some(Parsed::MoveTo(self.object_named(a)?, self.object_named(b)?))
                }),
                Verb::PutIn => action.strip_prefix("put ").and_then(|rest| {
                    let (a, b) = rest.split_once(" in ")?;
                    Some(Parsed::PutIn(self.object_named(a)?, self.object_named(b)?))
                }),
                Verb::ConnectTo => action.strip_prefix("connect ").and_then(|rest| {
                    let (a, b) = rest.split_once(" to ")?;
                    Some(Parsed::ConnectTo(self.object_named(a)?, self.object_named(b)?))
                }),
            };
            if parsed.is_some() {
                return parsed;
            }
        }
        None
    }

    /// True when moving `moved` into `target` would close a containment loop.
    fn would_cycle(&self, moved: usize, target: usize) -> bool {
        let mut cursor = target;
        loop {
            if cursor == moved {
                return true;
            }
            match self.places[cursor] {
                Place::Inside(holder) => cursor = holder,
                _ => return false,
            }
        }
    }

    fn connection_key(a: usize, b: usize) -> (usize, usize) {
        (a.min(b), a.max(b))
    }

    fn applicable(&self, parsed: &Parsed) -> bool {
        let scope = self.in_scope();
        let in_scope = |id: &usize| scope.contains(id);
        let objects = &self.spec.objects;
        match *parsed {
            Parsed::Look => true,
            Parsed::LookAt(x) => in_scope(&x),
            Parsed::Take(x) => {
                objects[x].portable
                    && self.places[x] != Place::Inventory
                    && self.visible_in_room().contains(&x)
            }
            Parsed::Open(x) => in_scope(&x) && self.states[x] == Some(State::Closed),
            Parsed::Close(x) => in_scope(&x) && self.states[x] == Some(State::Open),
            Parsed::Activate(x) => in_scope(&x) && self.states[x] == Some(State::Off),
            Parsed::Deactivate(x) => in_scope(&x) && self.states[x] == Some(State::On),
            Parsed::GoTo(l) => self.spec.locations[self.agent_loc].connects.contains(&l),
            Parsed::FocusOn(x) => in_scope(&x),
            Parsed::MoveTo(x, y) | Parsed::PutIn(x, y) => {
                x != y
                    && objects[x].portable
                    && objects[y].holds_things()
                    && in_scope(&x)
                    && in_scope(&y)
                    && !self.would_cycle(x, y)
                    && (matches!(*parsed, Parsed::MoveTo(..)) || objects[y].container)
            }
            Parsed::ConnectTo(x, y) => {
                x != y
                    && objects[x].electrical
                    && objects[y].electrical
                    && in_scope(&x)
                    && in_scope(&y)
                    && !self.connections.contains(&Self::connection_key(x, y))
            }
            Parsed::Read(x) => in_scope(&x) && objects[x].text.is_some(),
        }
    }

    /// Every action currently applicable, rendered as strings, in
    /// lexicographic order. "look around" is always present; the list is
    /// empty once the episode is done.
    pub fn valid_actions(&self) -> Vec<String> {
        if self.done {
            return Vec::new();
        }
        self.enumerate_actions()
    }

    /// Action enumeration without the end-of-episode cutoff. Learners use it
    /// to bootstrap values at the step limit, where the episode stops but the
    /// world state itself is not terminal.
    pub(crate) fn actions_even_if_done(&self) -> Vec<String> {
        self.enumerate_actions()
    }

    fn enumerate_actions(&self) -> Vec<String> {
        let scope = self.in_scope();
        let mut out = vec!["look around".to_string()];
        let name = |id: usize| self.spec.objects[id].name.as_str();
        for template in self.templates() {
            match template.verb {
                Verb::LookAround => {}
                Verb::GoTo => {
                    for &l in &self.spec.locations[self.agent_loc].connects {
                        out.push(format!("go to {}", self.spec.locations[l].name));
                    }
                }
                Verb::LookAt | Verb::Take | Verb::Open | Verb::Close | Verb::Activate
                | Verb::Deactivate | Verb::FocusOn | Verb::Read => {
                    for &x in &scope {
                        let parsed = match template.verb {
                            Verb::LookAt => Parsed::LookAt(x),
                            Verb::Take => Parsed::Take(x),
                            Verb::Open => Parsed::Open(x),
                            Verb::Close => Parsed::Close(x),
                            Verb::Activate => Parsed::Activate(x),
                            Verb::Deactivate => Parsed::Deactivate(x),
                            Verb::FocusOn => Parsed::FocusOn(x),
                            _ => Parsed::Read(x),
                        };
                        if self.applicable(&parsed) {
                            let verb_text = template.pattern.trim_end_matches("OBJ").trim_end();
                            out.push(format!("{} {}", verb_text, name(x)));
                        }
                    }
                }
                Verb::MoveTo | Verb::PutIn | Verb::ConnectTo => {
                    for &x in &scope {
                        for &y in &scope {
                            let parsed = match template.verb {
                                Verb::MoveTo => Parsed::MoveTo(x, y),
                                Verb::PutIn => Parsed::PutIn(x, y),
                                _ => Parsed::ConnectTo(x, y),
                            };
                            if self.applicable(&parsed) {
                                let rendered = match template.verb {
                                    Verb::MoveTo => format!("move {} to {}", name(x), name(y)),
                                    Verb::PutIn => format!("put {} in {}", name(x), name(y)),
                                    _ => format!("connect {} to {}", name(x), name(y)),
                                };
                                out.push(rendered);
                            }
                        }
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    fn apply(&mut self, parsed: Parsed) -> Option<String> {
        let name = |id: usize, spec: &WorldSpec| spec.objects[id].name.clone();
        let spec = Arc::clone(&self.spec);
        match parsed {
            Parsed::Look => None,
            Parsed::LookAt(x) => Some(self.describe(x)),
            Parsed::Take(x) => {
                self.places[x] = Place::Inventory;
                Some(format!("You take the {}.", name(x, &spec)))
            }
            Parsed::Open(x) => {
                self.states[x] = Some(State::Open);
                Some(format!("You open the {}.", name(x, &spec)))
            }
            Parsed::Close(x) => {
                self.states[x] = Some(State::Closed);
                Some(format!("You close the {}.", name(x, &spec)))
            }
            Parsed::Activate(x) => {
                self.states[x] = Some(State::On);
                Some(format!("You activate the {}.", name(x, &spec)))
            }
            Parsed::Deactivate(x) => {
                self.states[x] = Some(State::Off);
                Some(format!("You deactivate the {}.", name(x, &spec)))
            }
            Parsed::GoTo(l) => {
                self.agent_loc = l;
                Some(format!("You go to the {}.", spec.locations[l].name))
            }
            Parsed::FocusOn(x) => {
                self.focused = Some(x);
                Some(format!("You focus on the {}.", name(x, &spec)))
            }
            Parsed::MoveTo(x, y) => {
                self.places[x] = Place::Inside(y);
                Some(format!("You move the {} to the {}.", name(x, &spec), name(y, &spec)))
            }
            Parsed::PutIn(x, y) => {
                self.places[x] = Place::Inside(y);
                Some(format!("You put the {} in the {}.", name(x, &spec), name(y, &spec)))
            }
            Parsed::ConnectTo(x, y) => {
                self.connections.insert(Self::connection_key(x, y));
                Some(format!("You connect the {} to the {}.", name(x, &spec), name(y, &spec)))
            }
            Parsed::Read(x) => {
                let text = spec.objects[x].text.clone().unwrap_or_default();
                Some(format!("You read the {}. {}", name(x, &spec), text))
            }
        }
    }

    // -- scoring ------------------------------------------------------------

    fn eval_predicate(&self, pred: &Predicate) -> bool {
        match *pred {
            Predicate::At(l) => self.agent_loc == l,
            Predicate::FocusNonliving => {
                self.focused.is_some_and(|o| !self.spec.objects[o].living)
            }
            Predicate::FocusLiving => self.focused.is_some_and(|o| self.spec.objects[o].living),
            Predicate::Focus(x) => self.focused == Some(x),
            Predicate::FocusedIn(c) => self.focused.is_some_and(|o| self.places[o] == Place::Inside(c)),
            Predicate::Connected(a, b) => self.connections.contains(&Self::connection_key(a, b)),
            Predicate::Powered(x) => self.is_powered(x),
        }
    }

    /// Breadth-first over circuit links: is the object connected to an
    /// activated renewable power source.
    fn is_powered(&self, from: usize) -> bool {
        let mut seen = BTreeSet::new();
        let mut queue = vec![from];
        seen.insert(from);
        while let Some(id) = queue.pop() {
            let obj = &self.spec.objects[id];
            if obj.power == Some(PowerKind::Renewable) && self.states[id] == Some(State::On) {
                return true;
            }
            for &(a, b) in &self.connections {
                let next = if a == id {
                    b
                } else if b == id {
                    a
                } else {
                    continue;
                };
                if seen.insert(next) {
                    queue.push(next);
                }
            }
        }
        false
    }

    /// Fire every pending subgoal whose predicate now holds, in order.
    /// Returns the score fraction gained.
    fn fire_subgoals(&mut self) -> Fraction {
        let subgoals = self.current_variation().subgoals.clone();
        let mut gained = Fraction { num: 0, den: 1 };
        while self.fired < subgoals.len() && self.eval_predicate(&subgoals[self.fired].0) {
            gained = add_fractions(gained, subgoals[self.fired].1);
            self.fired += 1;
        }
        if gained.num > 0 {
            self.score = add_fractions(self.score, gained);
        }
        gained
    }

    fn snapshot(&self, response: Option<&str>, reward: f64) -> StepResult {
        let observation = match response {
            None => self.freelook(),
            Some(REFUSAL_TEXT) => REFUSAL_TEXT.to_string(),
            Some(text) => format!("{} {}", text, self.freelook()),
        };
        StepResult {
            observation,
            inventory: self.inventory_text(),
            description: self.description(),
            reward,
            score: self.score_points(),
            done: self.done,
            valid_actions: self.valid_actions(),
            golden_next: self.golden_next(),
        }
    }

    /// Execute one action. Unparseable or inapplicable actions leave the
    /// world unchanged, return zero reward, and observe [`REFUSAL_TEXT`].
    pub fn step(&mut self, action: &str) -> Result<StepResult, WorldError> {
        if self.done {
            return Err(WorldError::EpisodeDone);
        }
        self.step += 1;
        let parsed = self.parse(action);
        let response = match parsed {
            Some(p) if self.applicable(&p) => {
                let golden = self.golden_next();
                if golden.as_deref() == Some(action) {
                    self.golden_idx += 1;
                }
                self.apply(p)
            }
            _ => Some(REFUSAL_TEXT.to_string()),
        };
        let gained = self.fire_subgoals();
        if self.task_complete() || self.step >= STEP_LIMIT {
            self.done = true;
        }
        let refused = response.as_deref() == Some(REFUSAL_TEXT);
        let response_for_snapshot = if refused {
            Some(REFUSAL_TEXT)
        } else {
            response.as_deref()
        };
        Ok(self.snapshot(response_for_snapshot, gained.points()))
    }

    /// The same fields a fresh `step` would report, without acting.
    pub fn current_result(&self) -> StepResult {
        self.snapshot(None, 0.0)
    }
}

/// Breadth-first enumeration of distinct reachable world configurations,
/// deduplicated by [`EpisodeState::layout_key`], in a deterministic order.
/// Stops after `cap` states; small worlds are exhausted well before that.
pub fn enumerate_reachable(
    spec: &Arc<WorldSpec>,
    task_id: &str,
    variation: usize,
    cap: usize,
) -> Result<Vec<EpisodeState>, WorldError> {
    let (start, _) = EpisodeState::reset(spec, task_id, variation, 0)?;
    let mut seen = BTreeSet::new();
    seen.insert(start.layout_key());
    let mut queue = std::collections::VecDeque::from([start]);
    let mut out = Vec::new();
    while let Some(state) = queue.pop_front() {
        out.push(state.clone());
        if out.len() >= cap {
            break;
        }
        if state.done() {
            continue;
        }
        for action in state.valid_actions() {
            let mut next = state.clone();
            next.step(&action)?;
            if seen.insert(next.layout_key()) {
                queue.push_back(next);
            }
        }
    }
    Ok(out)
}
