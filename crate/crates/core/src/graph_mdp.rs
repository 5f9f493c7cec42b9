//! Labeled graph-based multi-agent MDPs and their product with per-agent
//! reward machines.
//!
//! Agent `i`'s next local state is drawn from a distribution that sees only the
//! states and actions of its closed neighborhood `N(i)`; the label of the local
//! transition drives agent `i`'s reward machine, and the machine's output is
//! the agent's reward. All agents advance synchronously from the same
//! pre-step snapshot.

use std::collections::VecDeque;
use std::fmt::Debug;

use thiserror::Error;

use crate::reward_machine::{Event, RewardMachine, RmError, RmState};
use crate::rng::{sample_index, EpisodeRng, Purpose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("agent {agent}: action {action} out of range (0..{num_actions})")]
    ActionOutOfRange {
        agent: usize,
        action: usize,
        num_actions: usize,
    },
    #[error("agent {agent}: action {action} is illegal in state {state}")]
    IllegalAction {
        agent: usize,
        action: usize,
        state: String,
    },
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error(transparent)]
    Rm(#[from] RmError),
}

/// Undirected interaction graph over agents `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentGraph {
    adj: Vec<Vec<usize>>,
}

impl AgentGraph {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self, EnvError> {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(EnvError::Graph(format!("edge ({a}, {b}) outside 0..{n}")));
            }
            if a == b {
                return Err(EnvError::Graph(format!("self-edge at {a}")));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { adj })
    }

    /// Path graph `0 - 1 - ... - n-1`.
    pub fn chain(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::new(n, &edges).expect("chain edges are valid")
    }

    pub fn complete(n: usize) -> Self {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        Self::new(n, &edges).expect("clique edges are valid")
    }

    pub fn num_agents(&self) -> usize {
        self.adj.len()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.adj.len())
            .flat_map(|i| self.adj[i].iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    /// Direct neighbors of `i`, excluding `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    /// Shortest-path hop counts from `i`; `None` for unreachable agents.
    pub fn distances(&self, i: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.adj.len()];
        dist[i] = Some(0);
        let mut queue = VecDeque::from([i]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].unwrap();
            for &w in &self.adj[v] {
                if dist[w].is_none() {
                    dist[w] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// All agents within `kappa` hops of `i` (including `i`), ascending.
    pub fn neighborhood(&self, i: usize, kappa: usize) -> Vec<usize> {
        self.distances(i)
            .into_iter()
            .enumerate()
            .filter_map(|(j, d)| d.filter(|&d| d <= kappa).map(|_| j))
            .collect()
    }

    /// Longest finite shortest path; 0 for graphs without edges.
    pub fn diameter(&self) -> usize {
        (0..self.adj.len())
            .flat_map(|i| self.distances(i).into_iter().flatten())
            .max()
            .unwrap_or(0)
    }
}

/// Precomputed `N_i^kappa` for every agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhoods {
    pub kappa: usize,
    sets: Vec<Vec<usize>>,
}

impl Neighborhoods {
    pub fn new(graph: &AgentGraph, kappa: usize) -> Self {
        let sets = (0..graph.num_agents())
            .map(|i| graph.neighborhood(i, kappa))
            .collect();
        Self { kappa, sets }
    }

    pub fn of(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// A local MDP state that can be written to and read back from logs and
/// checkpoints. Encodings must not contain `,;|=` or whitespace.
pub trait LocalState: Clone + Debug + PartialEq + Send + Sync {
    fn encode(&self) -> String;
    fn decode(text: &str) -> Option<Self>;
}

impl LocalState for u8 {
    fn encode(&self) -> String {
        self.to_string()
    }

    fn decode(text: &str) -> Option<Self> {
        text.parse().ok()
    }
}

/// Agent `i`'s local MDP state and reward-machine state.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalObservation<'a, S> {
    pub state: &'a S,
    pub rm_state: RmState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState<S> {
    pub mdp_states: Vec<S>,
    pub rm_states: Vec<RmState>,
    pub t: usize,
}

impl<S> GlobalState<S> {
    pub fn num_agents(&self) -> usize {
        self.mdp_states.len()
    }

    pub fn observation(&self, i: usize) -> LocalObservation<'_, S> {
        LocalObservation {
            state: &self.mdp_states[i],
            rm_state: self.rm_states[i],
        }
    }
}

/// The closed-neighborhood slice of a pre-step snapshot handed to a local
/// transition kernel. `agents` is ascending and contains the owner at
/// position `me`.
#[derive(Debug, Clone)]
pub struct LocalView<'a, S> {
    pub agents: &'a [usize],
    pub me: usize,
    pub states: Vec<&'a S>,
    pub actions: Vec<usize>,
}

impl<'a, S> LocalView<'a, S> {
    pub fn owner(&self) -> usize {
        self.agents[self.me]
    }

    pub fn own_state(&self) -> &'a S {
        self.states[self.me]
    }

    pub fn own_action(&self) -> usize {
        self.actions[self.me]
    }

    /// `(agent, state, action)` of every neighbor other than the owner.
    pub fn others(&self) -> impl Iterator<Item = (usize, &'a S, usize)> + '_ {
        (0..self.agents.len())
            .filter(move |&k| k != self.me)
            .map(move |k| (self.agents[k], self.states[k], self.actions[k]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<S> {
    pub next: GlobalState<S>,
    pub rewards: Vec<f64>,
    pub labels: Vec<Event>,
    /// Agent reached a goal or sink reward-machine state.
    pub done: Vec<bool>,
}

/// Environment contract for a labeled graph-based multi-agent MDP.
pub trait GraphMdpEnv: Sync {
    type State: LocalState;

    fn graph(&self) -> &AgentGraph;

    fn num_actions(&self, agent: usize) -> usize;

    /// Actions available to `agent` in `state`; all actions by default.
    fn legal_actions(&self, agent: usize, state: &Self::State) -> Vec<bool> {
        let _ = state;
        vec![true; self.num_actions(agent)]
    }

    fn machine(&self, agent: usize) -> &RewardMachine;

    fn initial_state(&self, agent: usize) -> Self::State;

    /// Distribution over agent `view.owner()`'s next local state. Outcomes
    /// with equal states may repeat; probabilities sum to one.
    fn transition(
        &self,
        view: &LocalView<'_, Self::State>,
    ) -> Result<Vec<(Self::State, f64)>, EnvError>;

    /// `L_i(s_i, a_i, s_i')`.
    fn label(&self, agent: usize, s: &Self::State, a: usize, s_next: &Self::State) -> Event;

    fn num_agents(&self) -> usize {
        self.graph().num_agents()
    }

    fn reset(&self) -> GlobalState<Self::State> {
        let n = self.num_agents();
        GlobalState {
            mdp_states: (0..n).map(|i| self.initial_state(i)).collect(),
            rm_states: (0..n).map(|i| self.machine(i).initial()).collect(),
            t: 0,
        }
    }

    fn is_done(&self, agent: usize, u: RmState) -> bool {
        self.machine(agent).is_terminal(u)
    }
}

/// Environments whose local state spaces can be listed (tabular and oracle use).
pub trait Enumerable: GraphMdpEnv {
    fn local_states(&self, agent: usize) -> Vec<Self::State>;
}

/// Environments that expose a real feature vector per local state.
pub trait Featurized: GraphMdpEnv {
    fn features(&self, agent: usize, state: &Self::State) -> Vec<f64>;

    /// `(min, max)` per feature, used for normalization to `[-1, 1]`.
    fn feature_bounds(&self, agent: usize) -> Vec<(f64, f64)>;
}

/// Checks `action` against range and legality for an active agent.
pub fn check_action<E: GraphMdpEnv + ?Sized>(
    env: &E,
    agent: usize,
    state: &E::State,
    action: usize,
) -> Result<(), EnvError> {
    let num_actions = env.num_actions(agent);
    if action >= num_actions {
        return Err(EnvError::ActionOutOfRange {
            agent,
            action,
            num_actions,
        });
    }
    if !env.legal_actions(agent, state)[action] {
        return Err(EnvError::IllegalAction {
            agent,
            action,
            state: state.encode(),
        });
    }
    Ok(())
}

/// One synchronous step of the product MDP.
///
/// Agents whose machine is already in a goal or sink state are frozen: their
/// state is unchanged, they emit reward 0 and the empty label, and their
/// action is ignored.
pub fn global_step<E: GraphMdpEnv + ?Sized>(
    env: &E,
    state: &GlobalState<E::State>,
    actions: &[usize],
    rng: &EpisodeRng,
) -> Result<StepOutcome<E::State>, EnvError> {
    let order: Vec<usize> = (0..env.num_agents()).collect();
    global_step_ordered(env, state, actions, rng, &order)
}

/// [`global_step`] processing agents in the given order. The outcome does not
/// depend on `order`; this entry point exists to test exactly that.
pub fn global_step_ordered<E: GraphMdpEnv + ?Sized>(
    env: &E,
    state: &GlobalState<E::State>,
    actions: &[usize],
    rng: &EpisodeRng,
    order: &[usize],
) -> Result<StepOutcome<E::State>, EnvError> {
    let n = env.num_agents();
    if actions.len() != n {
        return Err(EnvError::ActionCount {
            expected: n,
            got: actions.len(),
        });
    }
    let graph = env.graph();
    let hoods: Vec<Vec<usize>> = (0..n).map(|i| graph.neighborhood(i, 1)).collect();

    let mut next_states: Vec<Option<E::State>> = vec![None; n];
    let mut rewards = vec![0.0; n];
    let mut labels = vec![Event::EMPTY; n];
    let mut next_rm = state.rm_states.clone();
    let mut done = vec![false; n];

    for &i in order {
        let u = state.rm_states[i];
        let s = &state.mdp_states[i];
        if env.is_done(i, u) {
            next_states[i] = Some(s.clone());
            done[i] = true;
            continue;
        }
        check_action(env, i, s, actions[i])?;
        let agents = &hoods[i];
        let view = LocalView {
            agents,
            me: agents.iter().position(|&j| j == i).expect("i in N(i)"),
            states: agents.iter().map(|&j| &state.mdp_states[j]).collect(),
            actions: agents.iter().map(|&j| actions[j]).collect(),
        };
        let dist = env.transition(&view)?;
        let probs: Vec<f64> = dist.iter().map(|(_, p)| *p).collect();
        let k = sample_index(&probs, rng.uniform(state.t as u64, i, Purpose::Transition));
        let s_next = dist[k].0.clone();
        let label = env.label(i, s, actions[i], &s_next);
        let (u_next, r) = env.machine(i).step(u, label)?;
        next_states[i] = Some(s_next);
        rewards[i] = r;
        labels[i] = label;
        next_rm[i] = u_next;
        done[i] = env.is_done(i, u_next);
    }

    Ok(StepOutcome {
        next: GlobalState {
            mdp_states: next_states
                .into_iter()
                .map(|s| s.expect("order covers all agents"))
                .collect(),
            rm_states: next_rm,
            t: state.t + 1,
        },
        rewards,
        labels,
        done,
    })
}

/// `R = (1/n) sum_i R_i`.
pub fn global_reward(rewards: &[f64]) -> f64 {
    assert!(!rewards.is_empty(), "global reward of zero agents");
    rewards.iter().sum::<f64>() / rewards.len() as f64
}

/// `sum_t gamma^t r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut acc = 0.0;
    let mut disc = 1.0;
    for &r in rewards {
        acc += disc * r;
        disc *= gamma;
    }
    acc
}

/// A recorded episode. `states[t]` precedes `actions[t]`; `active[t][i]` is
/// false once agent `i` is frozen, in which case `actions[t][i]` is 0 and
/// was never sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub states: Vec<GlobalState<S>>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<Vec<f64>>,
    pub labels: Vec<Vec<Event>>,
    pub active: Vec<Vec<bool>>,
    /// Per agent: machine in a goal or sink state after the last step.
    pub done: Vec<bool>,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn global_rewards(&self) -> Vec<f64> {
        self.rewards.iter().map(|r| global_reward(r)).collect()
    }

    pub fn global_return(&self, gamma: f64) -> f64 {
        discounted_return(&self.global_rewards(), gamma)
    }

    pub fn agent_return(&self, agent: usize, gamma: f64) -> f64 {
        let seq: Vec<f64> = self.rewards.iter().map(|r| r[agent]).collect();
        discounted_return(&seq, gamma)
    }

    pub fn final_state(&self) -> &GlobalState<S> {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// Agent ended in a goal state of its machine.
    pub fn reached_goal<E>(&self, env: &E, agent: usize) -> bool
    where
        E: GraphMdpEnv<State = S> + ?Sized,
    {
        env.machine(agent).is_goal(self.final_state().rm_states[agent])
    }
}

/// Rolls out one episode of at most `horizon` steps. `policy(state, agent)`
/// is called only for active agents; frozen agents get action 0. Stops
/// early once every agent is frozen.
pub fn run_episode<E, P>(
    env: &E,
    rng: &EpisodeRng,
    horizon: usize,
    mut policy: P,
) -> Result<Trajectory<E::State>, EnvError>
where
    E: GraphMdpEnv + ?Sized,
    P: FnMut(&GlobalState<E::State>, usize) -> usize,
{
    let n = env.num_agents();
    let mut state = env.reset();
    let mut done: Vec<bool> = (0..n).map(|i| env.is_done(i, state.rm_states[i])).collect();
    let mut traj = Trajectory {
        states: vec![state.clone()],
        actions: Vec::new(),
        rewards: Vec::new(),
        labels: Vec::new(),
        active: Vec::new(),
        done: done.clone(),
    };
    for _ in 0..horizon {
        if done.iter().all(|&d| d) {
            break;
        }
        let active: Vec<bool> = done.iter().map(|&d| !d).collect();
        let actions: Vec<usize> = (0..n)
            .map(|i| if active[i] { policy(&state, i) } else { 0 })
            .collect();
        let out = global_step(env, &state, &actions, rng)?;
        state = out.next;
        done = out.done;
        traj.states.push(state.clone());
        traj.actions.push(actions);
        traj.rewards.push(out.rewards);
        traj.labels.push(out.labels);
        traj.active.push(active);
    }
    traj.done = done;
    Ok(traj)
}
