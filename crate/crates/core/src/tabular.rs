//! Tabular learner: truncated Q-tables over κ-hop joint keys, trained by
//! on-policy TD at every step, and softmax localized policies trained once
//! per episode with the truncated policy gradient.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use crate::graph_mdp::{
    run_episode, AgentGraph, GlobalState, GraphMdpEnv, LocalState, Neighborhoods, Trajectory,
};
use crate::reward_machine::RmState;
use crate::rng::{sample_index, EpisodeRng, Purpose, StreamRng};
use crate::train::{EpisodeMetrics, TrainConfig, TrainError};

/// Local states usable as table keys.
pub trait TabularState: LocalState + Hash + Eq {}
impl<T: LocalState + Hash + Eq> TabularState for T {}

/// `(s_j, u_j, a_j)` for every `j` in the owner's κ-hop neighborhood, ascending by agent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointKey<S>(pub Vec<(S, RmState, usize)>);

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedQTable<S: TabularState> {
    owner: usize,
    kappa: usize,
    members: Vec<usize>,
    default: f64,
    table: HashMap<JointKey<S>, f64>,
}

impl<S: TabularState> TruncatedQTable<S> {
    pub fn new(graph: &AgentGraph, owner: usize, kappa: usize, default: f64) -> Self {
        Self {
            owner,
            kappa,
            members: graph.neighborhood(owner, kappa),
            default,
            table: HashMap::new(),
        }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    /// `N_owner^κ`, ascending.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// Key for the owner's neighborhood, reading nothing outside it.
    pub fn key(&self, state: &GlobalState<S>, actions: &[usize]) -> JointKey<S> {
        JointKey(
            self.members
                .iter()
                .map(|&j| (state.mdp_states[j].clone(), state.rm_states[j], actions[j]))
                .collect(),
        )
    }

    /// Key from explicit `(agent, s, u, a)` entries, which must list exactly
    /// the owner's neighborhood in ascending order.
    pub fn key_from(&self, entries: Vec<(usize, S, RmState, usize)>) -> JointKey<S> {
        assert!(
            entries.iter().map(|e| e.0).eq(self.members.iter().copied()),
            "key for agent {} must cover exactly {:?}",
            self.owner,
            self.members
        );
        JointKey(entries.into_iter().map(|(_, s, u, a)| (s, u, a)).collect())
    }

    pub fn get(&self, key: &JointKey<S>) -> f64 {
        debug_assert_eq!(key.0.len(), self.members.len());
        self.table.get(key).copied().unwrap_or(self.default)
    }

    pub fn set(&mut self, key: JointKey<S>, value: f64) {
        debug_assert_eq!(key.0.len(), self.members.len());
        self.table.insert(key, value);
    }

    /// `td = r_prev + γ q[next] - q[prev]`, then `q[prev] += α td`. A missing
    /// `next` is a terminal transition and contributes 0.
    pub fn td_update(
        &mut self,
        prev: &JointKey<S>,
        r_prev: f64,
        next: Option<&JointKey<S>>,
        gamma: f64,
        alpha: f64,
    ) -> f64 {
        let next_value = next.map_or(0.0, |k| self.get(k));
        let old = self.get(prev);
        let td = r_prev + gamma * next_value - old;
        self.table.insert(prev.clone(), old + alpha * td);
        td
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&JointKey<S>, f64)> {
        self.table.iter().map(|(k, &v)| (k, v))
    }
}

/// Softmax of `prefs` restricted to `legal`; max-subtracted. Illegal entries
/// get probability 0.
pub fn softmax_masked(prefs: &[f64], legal: &[bool]) -> Vec<f64> {
    debug_assert_eq!(prefs.len(), legal.len());
    let max = prefs
        .iter()
        .zip(legal)
        .filter(|(_, &ok)| ok)
        .map(|(&p, _)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(max > f64::NEG_INFINITY, "no legal action");
    let mut out: Vec<f64> = prefs
        .iter()
        .zip(legal)
        .map(|(&p, &ok)| if ok { (p - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    out
}

/// Index of the largest legal entry, lowest index on ties.
pub fn argmax_legal(values: &[f64], legal: &[bool]) -> usize {
    let mut best = None;
    for (k, (&v, &ok)) in values.iter().zip(legal).enumerate() {
        if ok && best.map_or(true, |(_, bv)| v > bv) {
            best = Some((k, v));
        }
    }
    best.expect("no legal action").0
}

/// Gradient rows keyed by `(s_i, u_i)`.
pub type PolicyGradient<S> = HashMap<(S, RmState), Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicyTable<S: TabularState> {
    owner: usize,
    num_actions: usize,
    theta: HashMap<(S, RmState), Vec<f64>>,
}

impl<S: TabularState> SoftmaxPolicyTable<S> {
    pub fn new(owner: usize, num_actions: usize) -> Self {
        Self {
            owner,
            num_actions,
            theta: HashMap::new(),
        }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Preference row; unseen rows are all zero.
    pub fn row(&self, s: &S, u: RmState) -> Vec<f64> {
        self.theta
            .get(&(s.clone(), u))
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.num_actions])
    }

    pub fn set_row(&mut self, s: S, u: RmState, prefs: Vec<f64>) {
        assert_eq!(prefs.len(), self.num_actions);
        self.theta.insert((s, u), prefs);
    }

    pub fn probs(&self, s: &S, u: RmState, legal: &[bool]) -> Vec<f64> {
        softmax_masked(&self.row(s, u), legal)
    }

    /// `1{b = a} - π(b)` for every action `b` of the `(s, u)` row.
    pub fn score(&self, s: &S, u: RmState, a: usize, legal: &[bool]) -> Vec<f64> {
        let mut g: Vec<f64> = self.probs(s, u, legal).into_iter().map(|p| -p).collect();
        g[a] += 1.0;
        g
    }

    pub fn sample(&self, s: &S, u: RmState, legal: &[bool], x: f64) -> usize {
        sample_index(&self.probs(s, u, legal), x)
    }

    pub fn greedy(&self, s: &S, u: RmState, legal: &[bool]) -> usize {
        argmax_legal(&self.row(s, u), legal)
    }

    /// `θ += α g`.
    pub fn apply(&mut self, grad: &PolicyGradient<S>, alpha: f64) {
        for (key, g) in grad {
            let row = self
                .theta
                .entry(key.clone())
                .or_insert_with(|| vec![0.0; self.num_actions]);
            for (t, d) in row.iter_mut().zip(g) {
                *t += alpha * d;
            }
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(S, RmState), &[f64])> {
        self.theta.iter().map(|(k, v)| (k, v.as_slice()))
    }
}

/// `g_i = Σ_t γ^t [(1/n) Σ_{j ∈ N_i^κ} Q̃_j(own key of j at t)] · score_i(t)`.
///
/// Steps where agent `i` was frozen contribute nothing; a frozen `j`
/// contributes `Q̃_j = 0`.
pub fn episode_gradient<E>(
    env: &E,
    traj: &Trajectory<E::State>,
    q_tables: &[TruncatedQTable<E::State>],
    policy: &SoftmaxPolicyTable<E::State>,
    neighborhood: &[usize],
    gamma: f64,
) -> PolicyGradient<E::State>
where
    E: GraphMdpEnv + ?Sized,
    E::State: TabularState,
{
    let i = policy.owner();
    let n = env.num_agents() as f64;
    let mut grad: PolicyGradient<E::State> = HashMap::new();
    let mut disc = 1.0;
    for t in 0..traj.len() {
        let state = &traj.states[t];
        let actions = &traj.actions[t];
        if traj.active[t][i] {
            let q_sum: f64 = neighborhood
                .iter()
                .filter(|&&j| traj.active[t][j])
                .map(|&j| q_tables[j].get(&q_tables[j].key(state, actions)))
                .sum();
            let weight = disc * q_sum / n;
            let s = &state.mdp_states[i];
            let u = state.rm_states[i];
            let legal = env.legal_actions(i, s);
            let score = policy.score(s, u, actions[i], &legal);
            let row = grad
                .entry((s.clone(), u))
                .or_insert_with(|| vec![0.0; policy.num_actions()]);
            for (g, sc) in row.iter_mut().zip(&score) {
                *g += weight * sc;
            }
        }
        disc *= gamma;
    }
    grad
}

/// Tabular learner state. Episodes can be run one at a time and the whole
/// learner saved and restored between episodes.
pub struct TabularLearner<'e, E: GraphMdpEnv>
where
    E::State: TabularState,
{
    env: &'e E,
    cfg: TrainConfig,
    hoods: Neighborhoods,
    streams: StreamRng,
    pub q: Vec<TruncatedQTable<E::State>>,
    pub policies: Vec<SoftmaxPolicyTable<E::State>>,
    next_episode: usize,
    critic_updates: usize,
    actor_updates: usize,
}

impl<'e, E: GraphMdpEnv> TabularLearner<'e, E>
where
    E::State: TabularState,
{
    pub fn new(env: &'e E, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let n = env.num_agents();
        let graph = env.graph();
        Ok(Self {
            env,
            hoods: Neighborhoods::new(graph, cfg.kappa),
            streams: StreamRng::new(cfg.seed),
            q: (0..n)
                .map(|i| TruncatedQTable::new(graph, i, cfg.kappa, 0.0))
                .collect(),
            policies: (0..n)
                .map(|i| SoftmaxPolicyTable::new(i, env.num_actions(i)))
                .collect(),
            cfg,
            next_episode: 0,
            critic_updates: 0,
            actor_updates: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn next_episode(&self) -> usize {
        self.next_episode
    }

    pub fn critic_updates(&self) -> usize {
        self.critic_updates
    }

    pub fn actor_updates(&self) -> usize {
        self.actor_updates
    }

    pub fn is_finished(&self) -> bool {
        self.next_episode >= self.cfg.episodes
    }

    /// Samples agent `i`'s action from its localized policy.
    pub fn act(&self, state: &GlobalState<E::State>, i: usize, rng: &EpisodeRng, greedy: bool) -> usize {
        let s = &state.mdp_states[i];
        let u = state.rm_states[i];
        let legal = self.env.legal_actions(i, s);
        if greedy {
            self.policies[i].greedy(s, u, &legal)
        } else {
            let x = rng.uniform(state.t as u64, i, Purpose::Action);
            self.policies[i].sample(s, u, &legal, x)
        }
    }

    /// Runs the next training episode.
    pub fn train_episode(&mut self) -> Result<EpisodeMetrics, TrainError> {
        let e = self.next_episode;
        let env = self.env;
        let gamma = self.cfg.gamma;
        let n = env.num_agents();
        let rng = self.streams.episode(e as u64);
        let traj = run_episode(env, &rng, self.cfg.horizon, |s, i| self.act(s, i, &rng, false))?;

        // The policy is fixed within an episode, so replaying the TD updates
        // after the rollout is identical to applying them online.
        let alpha_q = self.cfg.alpha_q.at(e);
        let last = traj.final_state();
        let tail_actions: Vec<usize> = (0..n)
            .map(|i| if traj.done[i] { 0 } else { self.act(last, i, &rng, false) })
            .collect();
        let mut critic_updates = 0;
        for t in 0..traj.len() {
            let (next_actions, next_active) = if t + 1 < traj.len() {
                (&traj.actions[t + 1], traj.active[t + 1].clone())
            } else {
                (&tail_actions, traj.done.iter().map(|&d| !d).collect())
            };
            for i in 0..n {
                if !traj.active[t][i] {
                    continue;
                }
                let q = &mut self.q[i];
                let prev = q.key(&traj.states[t], &traj.actions[t]);
                let next = next_active[i].then(|| q.key(&traj.states[t + 1], next_actions));
                let td = q.td_update(&prev, traj.rewards[t][i], next.as_ref(), gamma, alpha_q);
                if !td.is_finite() {
                    return Err(TrainError::Diverged {
                        episode: e,
                        agent: i,
                        what: "TD error",
                    });
                }
                critic_updates += 1;
            }
        }

        let alpha_pi = self.cfg.alpha_pi.at(e);
        let grads: Vec<_> = (0..n)
            .map(|i| episode_gradient(env, &traj, &self.q, &self.policies[i], self.hoods.of(i), gamma))
            .collect();
        for (i, g) in grads.iter().enumerate() {
            if g.values().flatten().any(|x| !x.is_finite()) {
                return Err(TrainError::Diverged {
                    episode: e,
                    agent: i,
                    what: "policy gradient",
                });
            }
            self.policies[i].apply(g, alpha_pi);
        }

        self.critic_updates += critic_updates;
        self.actor_updates += n;
        self.next_episode += 1;
        Ok(EpisodeMetrics {
            episode: e,
            global_return: traj.global_return(gamma),
            agent_returns: (0..n).map(|i| traj.agent_return(i, gamma)).collect(),
            steps: traj.len(),
            critic_updates,
            actor_updates: n,
        })
    }

    /// Rolls out the current policies on evaluation streams that never
    /// overlap training draws.
    pub fn evaluate(&self, episodes: usize, greedy: bool) -> Result<Vec<Trajectory<E::State>>, TrainError> {
        let streams = self.streams.derive(Purpose::Evaluation);
        (0..episodes)
            .map(|k| {
                let rng = streams.episode(k as u64);
                Ok(run_episode(self.env, &rng, self.cfg.horizon, |s, i| {
                    self.act(s, i, &rng, greedy)
                })?)
            })
            .collect()
    }

    /// Text dump of all tables and counters, one `key=value` per line.
    pub fn checkpoint(&self) -> String {
        let mut out = String::new();
        writeln!(out, "format=dgrm-tabular-v1").unwrap();
        writeln!(out, "agents={}", self.q.len()).unwrap();
        writeln!(out, "kappa={}", self.cfg.kappa).unwrap();
        writeln!(out, "seed={}", self.cfg.seed).unwrap();
        writeln!(out, "next_episode={}", self.next_episode).unwrap();
        writeln!(out, "critic_updates={}", self.critic_updates).unwrap();
        writeln!(out, "actor_updates={}", self.actor_updates).unwrap();
        let mut lines = Vec::new();
        for q in &self.q {
            for (key, v) in q.entries() {
                let k: Vec<String> = key
                    .0
                    .iter()
                    .map(|(s, u, a)| format!("{},{},{}", s.encode(), u, a))
                    .collect();
                lines.push(format!("q.{}.{}={:?}", q.owner(), k.join(";"), v));
            }
        }
        for p in &self.policies {
            for ((s, u), row) in p.entries() {
                let vals: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
                lines.push(format!("pi.{}.{},{}={}", p.owner(), s.encode(), u, vals.join(" ")));
            }
        }
        lines.sort();
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
        out
    }

    /// Rebuilds a learner from [`checkpoint`](Self::checkpoint) output.
    pub fn restore(env: &'e E, cfg: TrainConfig, text: &str) -> Result<Self, TrainError> {
        let bad = |line: &str| TrainError::Checkpoint(format!("malformed line `{line}`"));
        let mut learner = Self::new(env, cfg)?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line.split_once('=').ok_or_else(|| bad(line))?;
            let int = || value.parse::<usize>().map_err(|_| bad(line));
            match key {
                "format" if value == "dgrm-tabular-v1" => {}
                "agents" if int()? == env.num_agents() => {}
                "kappa" if int()? == learner.cfg.kappa => {}
                "seed" if value.parse::<u64>().ok() == Some(learner.cfg.seed) => {}
                "next_episode" => learner.next_episode = int()?,
                "critic_updates" => learner.critic_updates = int()?,
                "actor_updates" => learner.actor_updates = int()?,
                _ => {
                    let mut parts = key.splitn(3, '.');
                    let kind = parts.next().unwrap();
                    let agent: usize = parts
                        .next()
                        .and_then(|a| a.parse().ok())
                        .filter(|&a| a < env.num_agents())
                        .ok_or_else(|| bad(line))?;
                    let rest = parts.next().ok_or_else(|| bad(line))?;
                    match kind {
                        "q" => {
                            let mut entries = Vec::new();
                            for triple in rest.split(';') {
                                let f: Vec<&str> = triple.split(',').collect();
                                if f.len() != 3 {
                                    return Err(bad(line));
                                }
                                let s = E::State::decode(f[0]).ok_or_else(|| bad(line))?;
                                let u = f[1].parse().map_err(|_| bad(line))?;
                                let a = f[2].parse().map_err(|_| bad(line))?;
                                entries.push((s, u, a));
                            }
                            let q = &mut learner.q[agent];
                            if entries.len() != q.members().len() {
                                return Err(bad(line));
                            }
                            let v: f64 = value.parse().map_err(|_| bad(line))?;
                            q.set(JointKey(entries), v);
                        }
                        "pi" => {
                            let (s, u) = rest.rsplit_once(',').ok_or_else(|| bad(line))?;
                            let s = E::State::decode(s).ok_or_else(|| bad(line))?;
                            let u = u.parse().map_err(|_| bad(line))?;
                            let row = value
                                .split(' ')
                                .map(|x| x.parse::<f64>())
                                .collect::<Result<Vec<_>, _>>()
                                .map_err(|_| bad(line))?;
                            if row.len() != env.num_actions(agent) {
                                return Err(bad(line));
                            }
                            learner.policies[agent].set_row(s, u, row);
                        }
                        _ => return Err(bad(line)),
                    }
                }
            }
        }
        Ok(learner)
    }
}

pub struct TrainResult<S: TabularState> {
    pub metrics: Vec<EpisodeMetrics>,
    pub q: Vec<TruncatedQTable<S>>,
    pub policies: Vec<SoftmaxPolicyTable<S>>,
    pub critic_updates: usize,
    pub actor_updates: usize,
}

/// Runs `cfg.episodes` training episodes from zero-initialized tables.
pub fn train<E: GraphMdpEnv>(env: &E, cfg: TrainConfig) -> Result<TrainResult<E::State>, TrainError>
where
    E::State: TabularState,
{
    let mut learner = TabularLearner::new(env, cfg)?;
    let mut metrics = Vec::with_capacity(learner.cfg.episodes);
    while !learner.is_finished() {
        metrics.push(learner.train_episode()?);
    }
    Ok(TrainResult {
        metrics,
        critic_updates: learner.critic_updates,
        actor_updates: learner.actor_updates,
        q: learner.q,
        policies: learner.policies,
    })
}
