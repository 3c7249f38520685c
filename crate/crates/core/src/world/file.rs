//! World file schema, loading, and validation.
//!
//! The on-disk format is TOML with a `worldfile_version = 1` header and four
//! sections: `locations`, `objects`, `templates`, and `tasks`. Parse failures
//! carry the line/column reported by the TOML parser; semantic problems are
//! reported with the name of the offending location, object, task, or
//! variation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use super::engine::{EpisodeState, STEP_LIMIT};
use super::WorldError;

// ---------------------------------------------------------------------------
// Raw on-disk schema
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorld {
    worldfile_version: u32,
    name: String,
    #[serde(default)]
    locations: Vec<RawLocation>,
    #[serde(default)]
    objects: Vec<RawObject>,
    #[serde(default)]
    templates: Vec<RawTemplate>,
    #[serde(default)]
    tasks: Vec<RawTask>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLocation {
    name: String,
    #[serde(default)]
    connects: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObject {
    name: String,
    /// Either a location name (the object sits in the room) or the name of a
    /// container or surface object.
    at: String,
    #[serde(default)]
    living: bool,
    #[serde(default = "default_true")]
    portable: bool,
    #[serde(default)]
    surface: bool,
    #[serde(default)]
    container: bool,
    /// Initial state; "open"/"closed" makes the object openable, "on"/"off"
    /// makes it a device.
    #[serde(default)]
    state: Option<String>,
    #[serde(default)]
    material: Option<String>,
    #[serde(default)]
    temperature: Option<f64>,
    #[serde(default)]
    lifespan: Option<f64>,
    #[serde(default)]
    electrical: bool,
    /// "renewable" or "stored".
    #[serde(default)]
    power: Option<String>,
    /// Contents shown by the `read` action.
    #[serde(default)]
    text: Option<String>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTemplate {
    pattern: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    id: String,
    start: String,
    description: String,
    subgoals: Vec<RawSubgoal>,
    variations: Vec<RawVariation>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSubgoal {
    when: String,
    /// A fraction of the full score, written "numerator/denominator".
    reward: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVariation {
    #[serde(default)]
    subs: BTreeMap<String, String>,
    golden: Vec<String>,
}

// ---------------------------------------------------------------------------
// Validated in-memory model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum State {
    Open,
    Closed,
    On,
    Off,
}

impl State {
    pub fn word(self) -> &'static str {
        match self {
            State::Open => "open",
            State::Closed => "closed",
            State::On => "on",
            State::Off => "off",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerKind {
    Renewable,
    Stored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Room(usize),
    Inside(usize),
}

#[derive(Debug, Clone)]
pub struct Location {
    pub name: String,
    pub connects: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ObjectDef {
    pub name: String,
    pub start: Placement,
    pub living: bool,
    pub portable: bool,
    pub surface: bool,
    pub container: bool,
    pub start_state: Option<State>,
    pub material: Option<String>,
    pub temperature: Option<f64>,
    pub lifespan: Option<f64>,
    pub electrical: bool,
    pub power: Option<PowerKind>,
    pub text: Option<String>,
}

impl ObjectDef {
    pub fn openable(&self) -> bool {
        matches!(self.start_state, Some(State::Open) | Some(State::Closed))
    }

    pub fn device(&self) -> bool {
        matches!(self.start_state, Some(State::On) | Some(State::Off))
    }

    /// Can other objects be placed in or on it.
    pub fn holds_things(&self) -> bool {
        self.container || self.surface
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    LookAround,
    LookAt,
    Take,
    Open,
    Close,
    Activate,
    Deactivate,
    GoTo,
    FocusOn,
    MoveTo,
    PutIn,
    ConnectTo,
    Read,
}

#[derive(Debug, Clone)]
pub struct Template {
    pub pattern: String,
    pub verb: Verb,
    pub arity: usize,
}

/// The closed set of verb patterns the engine can execute.
pub const KNOWN_PATTERNS: [(&str, Verb, usize); 13] = [
    ("look around", Verb::LookAround, 0),
    ("look at OBJ", Verb::LookAt, 1),
    ("take OBJ", Verb::Take, 1),
    ("open OBJ", Verb::Open, 1),
    ("close OBJ", Verb::Close, 1),
    ("activate OBJ", Verb::Activate, 1),
    ("deactivate OBJ", Verb::Deactivate, 1),
    ("go to OBJ", Verb::GoTo, 1),
    ("focus on OBJ", Verb::FocusOn, 1),
    ("move OBJ to OBJ", Verb::MoveTo, 2),
    ("put OBJ in OBJ", Verb::PutIn, 2),
    ("connect OBJ to OBJ", Verb::ConnectTo, 2),
    ("read OBJ", Verb::Read, 1),
];

/// An exact fraction of the full task score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn parse(s: &str) -> Option<Fraction> {
        let (n, d) = s.split_once('/')?;
        let num: u64 = n.trim().parse().ok()?;
        let den: u64 = d.trim().parse().ok()?;
        if den == 0 {
            return None;
        }
        Some(Fraction { num, den })
    }

    pub fn points(self) -> f64 {
        self.num as f64 * 100.0 / self.den as f64
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Sum of fractions, kept exact and reduced.
pub fn add_fractions(a: Fraction, b: Fraction) -> Fraction {
    let den = a.den / gcd(a.den, b.den) * b.den;
    let num = a.num * (den / a.den) + b.num * (den / b.den);
    let g = gcd(num.max(1), den);
    Fraction { num: num / g, den: den / g }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    /// Agent stands in the location.
    At(usize),
    /// The focused object is non-living.
    FocusNonliving,
    /// The focused object is living.
    FocusLiving,
    /// Focus is exactly this object.
    Focus(usize),
    /// The focused object sits directly in or on this object.
    FocusedIn(usize),
    /// A circuit link exists between the two objects.
    Connected(usize, usize),
    /// The object is wired (transitively) to an activated renewable power
    /// source.
    Powered(usize),
}

#[derive(Debug, Clone)]
pub struct Subgoal {
    pub when: String,
    pub reward: Fraction,
}

#[derive(Debug, Clone)]
pub struct Variation {
    pub subs: BTreeMap<String, String>,
    pub golden: Vec<String>,
    /// Task description with this variation's substitutions applied.
    pub description: String,
    /// Subgoal predicates with substitutions applied, in firing order.
    pub subgoals: Vec<(Predicate, Fraction)>,
}

#[derive(Debug, Clone)]
pub struct TaskDef {
    pub id: String,
    pub start: usize,
    pub description: String,
    pub subgoals: Vec<Subgoal>,
    pub variations: Vec<Variation>,
}

#[derive(Debug)]
pub struct WorldSpec {
    pub name: String,
    pub locations: Vec<Location>,
    pub objects: Vec<ObjectDef>,
    pub templates: Vec<Template>,
    pub tasks: Vec<TaskDef>,
    location_index: BTreeMap<String, usize>,
    object_index: BTreeMap<String, usize>,
    task_index: BTreeMap<String, usize>,
}

impl WorldSpec {
    pub fn location_id(&self, name: &str) -> Option<usize> {
        self.location_index.get(name).copied()
    }

    pub fn object_id(&self, name: &str) -> Option<usize> {
        self.object_index.get(name).copied()
    }

    pub fn task_id(&self, id: &str) -> Option<usize> {
        self.task_index.get(id).copied()
    }

    pub fn task(&self, id: &str) -> Result<&TaskDef, WorldError> {
        self.task_id(id)
            .map(|i| &self.tasks[i])
            .ok_or_else(|| WorldError::UnknownTask { id: id.to_string() })
    }

    /// Split an action string into (template index, argument names) by
    /// syntax alone; arguments are not checked against any name table.
    pub fn split_action<'a>(&self, action: &'a str) -> Option<(usize, Vec<&'a str>)> {
        for (i, template) in self.templates.iter().enumerate() {
            match template.arity {
                0 => {
                    if action == template.pattern {
                        return Some((i, Vec::new()));
                    }
                }
                1 => {
                    let head = template.pattern.trim_end_matches("OBJ").trim_end();
                    if let Some(rest) = action.strip_prefix(head).and_then(|r| r.strip_prefix(' ')) {
                        if !rest.is_empty() {
                            return Some((i, vec![rest]));
                        }
                    }
                }
                _ => {
                    let mut pieces = template.pattern.splitn(3, "OBJ");
                    let head = pieces.next().unwrap_or_default();
                    let mid = pieces.next().unwrap_or_default();
                    if let Some(rest) = action.strip_prefix(head) {
                        if let Some((a, b)) = rest.split_once(mid) {
                            if !a.is_empty() && !b.is_empty() {
                                return Some((i, vec![a, b]));
                            }
                        }
                    }
                }
            }
        }
        None
    }

    /// Every fixed word the observation generator, the refusal message, and
    /// the action patterns can emit. Task descriptions and entity names are
    /// collected separately by vocabulary builders.
    pub fn grammar_lexicon() -> &'static [&'static str] {
        &[
            "a", "activate", "agent", "also", "an", "around", "at", "called", "can't", "close",
            "closed", "connect", "connected", "deactivate", "degrees", "do", "door", "focus",
            "go", "in", "inventory", "is", "it", "look", "made", "move", "nothing", "of", "off",
            "on", "open", "put", "read", "room", "see", "take", "that", "the", "this", "to",
            "which", "you", "your",
        ]
    }
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

pub fn load_world(path: &Path) -> Result<Arc<WorldSpec>, WorldError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| WorldError::Io { path: path.display().to_string(), source: e })?;
    load_world_str(&text, &path.display().to_string())
}

pub fn load_world_str(text: &str, display_name: &str) -> Result<Arc<WorldSpec>, WorldError> {
    let raw: RawWorld = toml::from_str(text)
        .map_err(|e| WorldError::Parse { path: display_name.to_string(), detail: e.to_string() })?;
    validate(raw, display_name)
}

fn err(context: impl Into<String>, detail: impl Into<String>) -> WorldError {
    WorldError::Validate { context: context.into(), detail: detail.into() }
}

fn check_name(kind: &str, name: &str) -> Result<(), WorldError> {
    let context = format!("{} '{}'", kind, name);
    if name.is_empty() {
        return Err(err(context, "empty name"));
    }
    if !name.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == ' ') {
        return Err(err(context, "names use lowercase letters, digits, and spaces"));
    }
    for reserved in [" to ", " in ", " on ", " at "] {
        if name.contains(reserved) {
            return Err(err(context, format!("name contains reserved phrase '{}'", reserved.trim())));
        }
    }
    Ok(())
}

fn validate(raw: RawWorld, file: &str) -> Result<Arc<WorldSpec>, WorldError> {
    if raw.worldfile_version != 1 {
        return Err(err(file, format!("unsupported worldfile_version {}", raw.worldfile_version)));
    }
    if raw.locations.is_empty() {
        return Err(err(file, "a world needs at least one location"));
    }

    // Names first: unique across locations and objects.
    let mut location_index = BTreeMap::new();
    for (i, loc) in raw.locations.iter().enumerate() {
        check_name("location", &loc.name)?;
        if location_index.insert(loc.name.clone(), i).is_some() {
            return Err(err(format!("location '{}'", loc.name), "duplicate name"));
        }
    }
    let mut object_index = BTreeMap::new();
    for (i, obj) in raw.objects.iter().enumerate() {
        check_name("object", &obj.name)?;
        if location_index.contains_key(&obj.name) {
            return Err(err(format!("object '{}'", obj.name), "name collides with a location"));
        }
        if object_index.insert(obj.name.clone(), i).is_some() {
            return Err(err(format!("object '{}'", obj.name), "duplicate name"));
        }
    }

    // Locations and symmetric connectivity.
    let mut locations = Vec::with_capacity(raw.locations.len());
    for loc in &raw.locations {
        let context = format!("location '{}'", loc.name);
        let mut connects = Vec::new();
        for other in &loc.connects {
            if other == &loc.name {
                return Err(err(context.clone(), "connects to itself"));
            }
            let Some(&id) = location_index.get(other) else {
                return Err(err(context.clone(), format!("connects to unknown location '{}'", other)));
            };
            if connects.contains(&id) {
                return Err(err(context.clone(), format!("duplicate connection to '{}'", other)));
            }
            connects.push(id);
        }
        locations.push(Location { name: loc.name.clone(), connects });
    }
    for (i, loc) in locations.iter().enumerate() {
        for &j in &loc.connects {
            if !locations[j].connects.contains(&i) {
                return Err(err(
                    format!("location '{}'", loc.name),
                    format!("connects to '{}' but not the other way round", locations[j].name),
                ));
            }
        }
    }

    // Objects.
    let mut objects = Vec::with_capacity(raw.objects.len());
    for obj in &raw.objects {
        let context = format!("object '{}'", obj.name);
        let start = if let Some(&loc) = location_index.get(&obj.at) {
            Placement::Room(loc)
        } else if let Some(&holder) = object_index.get(&obj.at) {
            Placement::Inside(holder)
        } else {
            return Err(err(context, format!("placed at unknown '{}'", obj.at)));
        };
        if obj.surface && obj.container {
            return Err(err(context, "cannot be both a surface and a container"));
        }
        let start_state = match obj.state.as_deref() {
            None => None,
            Some("open") => Some(State::Open),
            Some("closed") => Some(State::Closed),
            Some("on") => Some(State::On),
            Some("off") => Some(State::Off),
            Some(other) => {
                return Err(err(context, format!("unknown state '{}'", other)));
            }
        };
        let power = match obj.power.as_deref() {
            None => None,
            Some("renewable") => Some(PowerKind::Renewable),
            Some("stored") => Some(PowerKind::Stored),
            Some(other) => return Err(err(context, format!("unknown power kind '{}'", other))),
        };
        objects.push(ObjectDef {
            name: obj.name.clone(),
            start,
            living: obj.living,
            portable: obj.portable,
            surface: obj.surface,
            container: obj.container,
            start_state,
            material: obj.material.clone(),
            temperature: obj.temperature,
            lifespan: obj.lifespan,
            electrical: obj.electrical,
            power,
            text: obj.text.clone(),
        });
    }

    // Containment chains must end in a room, without cycles, and only pass
    // through containers or surfaces.
    for (i, obj) in objects.iter().enumerate() {
        let context = format!("object '{}'", obj.name);
        let mut seen = BTreeSet::new();
        let mut cursor = i;
        loop {
            match objects[cursor].start {
                Placement::Room(_) => break,
                Placement::Inside(holder) => {
                    if !objects[holder].holds_things() {
                        return Err(err(
                            context,
                            format!("placed inside '{}', which holds nothing", objects[holder].name),
                        ));
                    }
                    if !seen.insert(holder) {
                        return Err(err(context, "containment cycle"));
                    }
                    cursor = holder;
                }
            }
        }
    }

    // Templates.
    let mut templates = Vec::new();
    let mut seen_patterns = BTreeSet::new();
    for t in &raw.templates {
        let context = format!("template '{}'", t.pattern);
        let Some(&(_, verb, arity)) =
            KNOWN_PATTERNS.iter().find(|(p, _, _)| *p == t.pattern.as_str())
        else {
            return Err(err(context, "unknown action pattern"));
        };
        if !seen_patterns.insert(t.pattern.clone()) {
            return Err(err(context, "duplicate template"));
        }
        templates.push(Template { pattern: t.pattern.clone(), verb, arity });
    }

    // Tasks: resolve subgoal fractions and per-variation substitutions.
    let mut task_index = BTreeMap::new();
    let mut tasks = Vec::new();
    for task in &raw.tasks {
        let context = format!("task '{}'", task.id);
        if task_index.insert(task.id.clone(), tasks.len()).is_some() {
            return Err(err(context, "duplicate task id"));
        }
        let Some(&start) = location_index.get(&task.start) else {
            return Err(err(context, format!("unknown start location '{}'", task.start)));
        };
        if task.subgoals.is_empty() {
            return Err(err(context, "a task needs at least one subgoal"));
        }
        if task.variations.is_empty() {
            return Err(err(context, "a task needs at least one variation"));
        }
        let mut subgoals = Vec::new();
        let mut total = Fraction { num: 0, den: 1 };
        for sg in &task.subgoals {
            let Some(reward) = Fraction::parse(&sg.reward) else {
                return Err(err(context.clone(), format!("bad reward fraction '{}'", sg.reward)));
            };
            total = add_fractions(total, reward);
            subgoals.push(Subgoal { when: sg.when.clone(), reward });
        }
        if total.num != total.den {
            return Err(err(
                context,
                format!("subgoal fractions sum to {}/{}, expected 1", total.num, total.den),
            ));
        }

        let mut variations = Vec::new();
        for (v, var) in task.variations.iter().enumerate() {
            let vctx = format!("task '{}' variation {}", task.id, v);
            let description = substitute(&task.description, &var.subs)
                .map_err(|d| err(vctx.clone(), d))?;
            let mut resolved = Vec::new();
            for sg in &subgoals {
                let when = substitute(&sg.when, &var.subs).map_err(|d| err(vctx.clone(), d))?;
                let pred = parse_predicate(&when, &location_index, &object_index)
                    .map_err(|d| err(vctx.clone(), d))?;
                resolved.push((pred, sg.reward));
            }
            if var.golden.is_empty() {
                return Err(err(vctx, "empty golden sequence"));
            }
            if var.golden.len() > STEP_LIMIT as usize {
                return Err(err(vctx, format!("golden sequence longer than {} steps", STEP_LIMIT)));
            }
            let mut golden = Vec::new();
            for action in &var.golden {
                golden.push(substitute(action, &var.subs).map_err(|d| err(vctx.clone(), d))?);
            }
            variations.push(Variation { subs: var.subs.clone(), golden, description, subgoals: resolved });
        }
        tasks.push(TaskDef {
            id: task.id.clone(),
            start,
            description: task.description.clone(),
            subgoals,
            variations,
        });
    }

    let spec = Arc::new(WorldSpec {
        name: raw.name,
        locations,
        objects,
        templates,
        tasks,
        location_index,
        object_index,
        task_index,
    });

    // Golden sequences must stay valid when replayed step by step.
    for task in &spec.tasks {
        for (v, var) in task.variations.iter().enumerate() {
            let vctx = format!("task '{}' variation {}", task.id, v);
            let (mut episode, _) = EpisodeState::reset(&spec, &task.id, v, 0)
                .map_err(|e| err(vctx.clone(), e.to_string()))?;
            for (i, action) in var.golden.iter().enumerate() {
                if !episode.valid_actions().contains(action) {
                    return Err(err(
                        vctx,
                        format!("golden action {} '{}' is not valid at its step", i, action),
                    ));
                }
                episode
                    .step(action)
                    .map_err(|e| err(vctx.clone(), format!("golden action {} '{}': {}", i, action, e)))?;
            }
        }
    }

    Ok(spec)
}

/// Replace `{key}` placeholders; unknown or unused placeholders are errors.
fn substitute(text: &str, subs: &BTreeMap<String, String>) -> Result<String, String> {
    let mut out = text.to_string();
    for (key, value) in subs {
        out = out.replace(&format!("{{{}}}", key), value);
    }
    if let Some(start) = out.find('{') {
        let rest = &out[start..];
        let end = rest.find('}').map(|e| start + e + 1).unwrap_or(out.len());
        return Err(format!("unresolved placeholder {}", &out[start..end]));
    }
    Ok(out)
}

fn parse_predicate(
    when: &str,
    locations: &BTreeMap<String, usize>,
    objects: &BTreeMap<String, usize>,
) -> Result<Predicate, String> {
    let need_object = |name: &str| -> Result<usize, String> {
        objects.get(name).copied().ok_or_else(|| format!("predicate names unknown object '{}'", name))
    };
    if let Some(name) = when.strip_prefix("at ") {
        return locations
            .get(name)
            .map(|&l| Predicate::At(l))
            .ok_or_else(|| format!("predicate names unknown location '{}'", name));
    }
    if when == "focus nonliving" {
        return Ok(Predicate::FocusNonliving);
    }
    if when == "focus living" {
        return Ok(Predicate::FocusLiving);
    }
    if let Some(name) = when.strip_prefix("focused-in ") {
        return Ok(Predicate::FocusedIn(need_object(name)?));
    }
    if let Some(name) = when.strip_prefix("focus ") {
        return Ok(Predicate::Focus(need_object(name)?));
    }
    if let Some(rest) = when.strip_prefix("connected ") {
        let (a, b) = rest
            .split_once('|')
            .ok_or_else(|| format!("'connected' needs two names separated by '|': '{}'", rest))?;
        return Ok(Predicate::Connected(need_object(a.trim())?, need_object(b.trim())?));
    }
    if let Some(name) = when.strip_prefix("powered ") {
        return Ok(Predicate::Powered(need_object(name)?));
    }
    Err(format!("unknown predicate '{}'", when))
}
