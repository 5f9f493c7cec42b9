//! Reward machines: finite Mealy-style machines that consume high-level events
//! and emit rewards.
//!
//! A machine is built once (programmatically or with [`RewardMachine::parse`])
//! and is immutable afterwards. State ids are strings in files and dense
//! indices everywhere else.
//!
//! Pairs `(u, event)` without an explicit transition are completed by an
//! implicit zero-reward self-loop, so [`RewardMachine::step`] is total over the
//! machine's alphabet.

mod formula;
mod parse;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use thiserror::Error;

pub use parse::ParseError;

/// Index of a reward-machine state inside its machine.
pub type RmState = usize;

/// Maximum number of propositions a machine may declare.
pub const MAX_PROPS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RmError {
    #[error("unknown reward machine state `{0}`")]
    UnknownStateName(String),
    #[error("reward machine state index {0} out of range")]
    UnknownState(RmState),
    #[error("unknown proposition `{0}`")]
    UnknownProposition(String),
    #[error("event {0:#x} uses propositions outside the alphabet")]
    EventOutsideAlphabet(u64),
    #[error("duplicate state id `{0}`")]
    DuplicateState(String),
    #[error("duplicate proposition `{0}`")]
    DuplicateProposition(String),
    #[error("empty identifier")]
    EmptyIdentifier,
    #[error("too many propositions ({0}, max {MAX_PROPS})")]
    TooManyPropositions(usize),
    #[error("state `{0}` is both a sink and a goal")]
    SinkGoalOverlap(String),
    #[error("duplicate transition from `{state}` on event {event}")]
    DuplicateTransition { state: String, event: String },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// A concrete event: a subset of the machine's propositions, stored as a
/// bitmask over the ordered proposition list (bit `k` is proposition `k`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Event(pub u64);

impl Event {
    pub const EMPTY: Event = Event(0);

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, prop: usize) -> bool {
        prop < 64 && self.0 & (1 << prop) != 0
    }

    pub fn with(self, prop: usize) -> Event {
        Event(self.0 | (1 << prop))
    }
}

/// The ordered, duplicate-free set of proposition identifiers of a machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSet {
    props: Vec<String>,
}

impl EventSet {
    pub fn new<S: AsRef<str>>(props: &[S]) -> Result<Self, RmError> {
        if props.len() > MAX_PROPS {
            return Err(RmError::TooManyPropositions(props.len()));
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(props.len());
        for p in props {
            let p = p.as_ref();
            if p.is_empty() {
                return Err(RmError::EmptyIdentifier);
            }
            if !seen.insert(p.to_string()) {
                return Err(RmError::DuplicateProposition(p.to_string()));
            }
            out.push(p.to_string());
        }
        Ok(Self { props: out })
    }

    pub fn props(&self) -> &[String] {
        &self.props
    }

    pub fn len(&self) -> usize {
        self.props.len()
    }

    pub fn is_empty(&self) -> bool {
        self.props.is_empty()
    }

    pub fn index_of(&self, prop: &str) -> Option<usize> {
        self.props.iter().position(|p| p == prop)
    }

    /// Builds the event containing exactly the named propositions.
    pub fn event<S: AsRef<str>>(&self, names: &[S]) -> Result<Event, RmError> {
        names.iter().try_fold(Event::EMPTY, |ev, name| {
            let name = name.as_ref();
            self.index_of(name)
                .map(|k| ev.with(k))
                .ok_or_else(|| RmError::UnknownProposition(name.to_string()))
        })
    }

    fn full_mask(&self) -> u64 {
        if self.props.len() == 64 {
            u64::MAX
        } else {
            (1u64 << self.props.len()) - 1
        }
    }

    pub fn contains_event(&self, ev: Event) -> bool {
        ev.0 & !self.full_mask() == 0
    }

    /// Renders an event in the file syntax: `{}` or `A&P`.
    pub fn format_event(&self, ev: Event) -> String {
        if ev.is_empty() {
            return "{}".to_string();
        }
        let names: Vec<&str> = (0..self.props.len())
            .filter(|&k| ev.contains(k))
            .map(|k| self.props[k].as_str())
            .collect();
        names.join("&")
    }
}

/// Target and reward of one explicit transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub to: RmState,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardMachine {
    states: Vec<String>,
    index: HashMap<String, RmState>,
    initial: RmState,
    events: EventSet,
    transitions: BTreeMap<(RmState, Event), Edge>,
    sinks: BTreeSet<RmState>,
    goals: BTreeSet<RmState>,
}

/// A run of a machine over a label sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct RmRun {
    pub visited: Vec<RmState>,
    pub rewards: Vec<f64>,
}

/// A structural finding reported by [`RewardMachine::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    Unreachable { state: String },
    SinkEscape { from: String, event: String, to: String },
    SinkGoalOverlap { state: String },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::Unreachable { state } => {
                write!(f, "state `{state}` is unreachable from the initial state")
            }
            Diagnostic::SinkEscape { from, event, to } => {
                write!(f, "sink `{from}` escapes to non-sink `{to}` on {event}")
            }
            Diagnostic::SinkGoalOverlap { state } => {
                write!(f, "state `{state}` is both a sink and a goal")
            }
        }
    }
}

impl RewardMachine {
    /// Creates a machine without transitions.
    pub fn new<S: AsRef<str>>(
        states: &[S],
        initial: &str,
        props: &[S],
        sinks: &[S],
        goals: &[S],
    ) -> Result<Self, RmError> {
        let mut index = HashMap::new();
        let mut names = Vec::with_capacity(states.len());
        for s in states {
            let s = s.as_ref();
            if s.is_empty() {
                return Err(RmError::EmptyIdentifier);
            }
            if index.insert(s.to_string(), names.len()).is_some() {
                return Err(RmError::DuplicateState(s.to_string()));
            }
            names.push(s.to_string());
        }
        let lookup = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| RmError::UnknownStateName(s.to_string()))
        };
        let initial = lookup(initial)?;
        let sinks = sinks
            .iter()
            .map(|s| lookup(s.as_ref()))
            .collect::<Result<BTreeSet<_>, _>>()?;
        let goals = goals
            .iter()
            .map(|s| lookup(s.as_ref()))
            .collect::<Result<BTreeSet<_>, _>>()?;
        if let Some(&both) = sinks.intersection(&goals).next() {
            return Err(RmError::SinkGoalOverlap(names[both].clone()));
        }
        Ok(Self {
            states: names,
            index,
            initial,
            events: EventSet::new(props)?,
            transitions: BTreeMap::new(),
            sinks,
            goals,
        })
    }

    /// Adds `from --event-> to : reward`. Fails on a second transition for
    /// the same `(from, event)`.
    pub fn add_transition(
        &mut self,
        from: &str,
        event: Event,
        to: &str,
        reward: f64,
    ) -> Result<(), RmError> {
        let f = self.state_index(from)?;
        let t = self.state_index(to)?;
        if !self.events.contains_event(event) {
            return Err(RmError::EventOutsideAlphabet(event.0));
        }
        if self.transitions.contains_key(&(f, event)) {
            return Err(RmError::DuplicateTransition {
                state: from.to_string(),
                event: self.events.format_event(event),
            });
        }
        self.transitions.insert((f, event), Edge { to: t, reward });
        Ok(())
    }

    /// Convenience for [`add_transition`](Self::add_transition) with the
    /// event given by proposition names.
    pub fn add<S: AsRef<str>>(
        &mut self,
        from: &str,
        props: &[S],
        to: &str,
        reward: f64,
    ) -> Result<(), RmError> {
        let ev = self.events.event(props)?;
        self.add_transition(from, ev, to, reward)
    }

    pub fn state_index(&self, name: &str) -> Result<RmState, RmError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| RmError::UnknownStateName(name.to_string()))
    }

    pub fn state_name(&self, u: RmState) -> &str {
        &self.states[u]
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn initial(&self) -> RmState {
        self.initial
    }

    pub fn events(&self) -> &EventSet {
        &self.events
    }

    /// Shorthand for `self.events().event(names)`.
    pub fn event<S: AsRef<str>>(&self, names: &[S]) -> Result<Event, RmError> {
        self.events.event(names)
    }

    pub fn sinks(&self) -> &BTreeSet<RmState> {
        &self.sinks
    }

    pub fn goals(&self) -> &BTreeSet<RmState> {
        &self.goals
    }

    pub fn is_sink(&self, u: RmState) -> bool {
        self.sinks.contains(&u)
    }

    pub fn is_goal(&self, u: RmState) -> bool {
        self.goals.contains(&u)
    }

    /// Goal or sink: the agent's task is over.
    pub fn is_terminal(&self, u: RmState) -> bool {
        self.is_sink(u) || self.is_goal(u)
    }

    pub fn transitions(&self) -> impl Iterator<Item = (RmState, Event, Edge)> + '_ {
        self.transitions.iter().map(|(&(u, ev), &e)| (u, ev, e))
    }

    pub fn num_transitions(&self) -> usize {
        self.transitions.len()
    }

    /// One machine step. Undefined `(u, ev)` pairs self-loop with reward 0.
    pub fn step(&self, u: RmState, ev: Event) -> Result<(RmState, f64), RmError> {
        if u >= self.states.len() {
            return Err(RmError::UnknownState(u));
        }
        if !self.events.contains_event(ev) {
            return Err(RmError::EventOutsideAlphabet(ev.0));
        }
        Ok(match self.transitions.get(&(u, ev)) {
            Some(e) => (e.to, e.reward),
            None => (u, 0.0),
        })
    }

    /// Folds [`step`](Self::step) over `labels` starting from the initial state.
    pub fn run(&self, labels: &[Event]) -> Result<RmRun, RmError> {
        let mut visited = Vec::with_capacity(labels.len() + 1);
        let mut rewards = Vec::with_capacity(labels.len());
        let mut u = self.initial;
        visited.push(u);
        for &ev in labels {
            let (next, r) = self.step(u, ev)?;
            visited.push(next);
            rewards.push(r);
            u = next;
        }
        Ok(RmRun { visited, rewards })
    }

    /// Structural diagnostics; empty iff the machine is well formed and every
    /// state is reachable from the initial state.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        for &u in self.sinks.intersection(&self.goals) {
            out.push(Diagnostic::SinkGoalOverlap {
                state: self.states[u].clone(),
            });
        }
        for (&(u, ev), e) in &self.transitions {
            if self.sinks.contains(&u) && !self.sinks.contains(&e.to) {
                out.push(Diagnostic::SinkEscape {
                    from: self.states[u].clone(),
                    event: self.events.format_event(ev),
                    to: self.states[e.to].clone(),
                });
            }
        }
        let mut seen = vec![false; self.states.len()];
        let mut queue = VecDeque::from([self.initial]);
        seen[self.initial] = true;
        while let Some(u) = queue.pop_front() {
            for (_, e) in self.transitions.range((u, Event(0))..=(u, Event(u64::MAX))) {
                if !seen[e.to] {
                    seen[e.to] = true;
                    queue.push_back(e.to);
                }
            }
        }
        for (u, reached) in seen.iter().enumerate() {
            if !reached {
                out.push(Diagnostic::Unreachable {
                    state: self.states[u].clone(),
                });
            }
        }
        out
    }

    /// Parses the line-oriented text format.
    ///
    /// ```text
    /// # comment
    /// states: u0 u1 u2
    /// initial: u0
    /// props: A P L
    /// sinks: u2
    /// goals: u1
    /// u0 --A&P-> u1 : 5.0
    /// u0 --L-> u2 : -1
    /// ```
    ///
    /// Edge labels are one or more alternatives separated by `|`. Each
    /// alternative is `{}` (the empty event), propositions joined by `&`
    /// (that exact set), or a bracketed formula such as `[A & !L]` which is
    /// expanded into every event over the alphabet that satisfies it.
    pub fn parse(text: &str) -> Result<Self, RmError> {
        parse::parse(text)
    }

    /// Renders the machine in the text format accepted by [`parse`](Self::parse).
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let join = |set: &BTreeSet<RmState>| {
            set.iter()
                .map(|&u| self.states[u].as_str())
                .collect::<Vec<_>>()
                .join(" ")
        };
        out.push_str(&format!("states: {}\n", self.states.join(" ")));
        out.push_str(&format!("initial: {}\n", self.states[self.initial]));
        out.push_str(&format!("props: {}\n", self.events.props().join(" ")));
        if !self.sinks.is_empty() {
            out.push_str(&format!("sinks: {}\n", join(&self.sinks)));
        }
        if !self.goals.is_empty() {
            out.push_str(&format!("goals: {}\n", join(&self.goals)));
        }
        for (&(u, ev), e) in &self.transitions {
            out.push_str(&format!(
                "{} --{}-> {} : {:?}\n",
                self.states[u],
                self.events.format_event(ev),
                self.states[e.to],
                e.reward
            ));
        }
        out
    }
}
