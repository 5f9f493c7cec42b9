//! Exact computations on small product MDPs: per-agent Q-functions of a fixed
//! joint policy, the exponential-decay gap, best truncation error, and exact
//! versus truncated policy gradients.
//!
//! Global product states are mixed-radix indices over agents' local product
//! states `(s_i, u_i)`, agent 0 least significant; joint actions likewise.
//! All maxima range over every product state, reachable or not.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph_mdp::{AgentGraph, Enumerable, EnvError, LocalState, LocalView};
use crate::reward_machine::RmState;
use crate::tabular::softmax_masked;

pub const DEFAULT_CAP: usize = 2_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("explicit product too large: {states} states x {actions} joint actions x {states} = {entries} entries exceeds cap {cap}")]
    TooLarge {
        states: usize,
        actions: usize,
        entries: u128,
        cap: usize,
    },
    #[error("value iteration did not converge in {0} sweeps")]
    NoConvergence(usize),
    #[error("discount must lie in (0, 1), got {0}")]
    Discount(f64),
    #[error("local state {state} of agent {agent} not in its enumeration")]
    UnknownState { agent: usize, state: String },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Enumerated product MDP with sparse transition rows.
#[derive(Debug, Clone)]
pub struct ExplicitProductMdp {
    pub gamma: f64,
    graph: AgentGraph,
    /// Number of local MDP states per agent.
    mdp_sizes: Vec<usize>,
    rm_sizes: Vec<usize>,
    action_sizes: Vec<usize>,
    num_states: usize,
    num_actions: usize,
    /// `rows[x * A + a]`: `(next state, probability)`, sorted, no duplicates.
    rows: Vec<Vec<(usize, f64)>>,
    /// `rewards[i][x * A + a]`: expected reward of agent `i`.
    rewards: Vec<Vec<f64>>,
    /// `legal[i][local][a]`.
    legal: Vec<Vec<Vec<bool>>>,
    initial: usize,
    r_bar: f64,
}

fn mixed_radix_decode(mut x: usize, radices: &[usize]) -> Vec<usize> {
    radices
        .iter()
        .map(|&r| {
            let d = x % r;
            x /= r;
            d
        })
        .collect()
}

fn mixed_radix_encode(digits: &[usize], radices: &[usize]) -> usize {
    digits
        .iter()
        .zip(radices)
        .rev()
        .fold(0, |acc, (&d, &r)| acc * r + d)
}

impl ExplicitProductMdp {
    pub fn num_agents(&self) -> usize {
        self.mdp_sizes.len()
    }

    pub fn graph(&self) -> &AgentGraph {
        &self.graph
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Local product states `(s_i, u_i)` of agent `i`.
    pub fn local_size(&self, i: usize) -> usize {
        self.mdp_sizes[i] * self.rm_sizes[i]
    }

    pub fn local_sizes(&self) -> Vec<usize> {
        (0..self.num_agents()).map(|i| self.local_size(i)).collect()
    }

    pub fn action_sizes(&self) -> &[usize] {
        &self.action_sizes
    }

    /// Index of `(s, u)` within agent `i`'s local product space.
    pub fn local_index(&self, i: usize, s: usize, u: RmState) -> usize {
        s * self.rm_sizes[i] + u
    }

    /// `(s index, u)` of a local product index.
    pub fn local_parts(&self, i: usize, local: usize) -> (usize, RmState) {
        (local / self.rm_sizes[i], local % self.rm_sizes[i])
    }

    pub fn decode_state(&self, x: usize) -> Vec<usize> {
        mixed_radix_decode(x, &self.local_sizes())
    }

    pub fn encode_state(&self, locals: &[usize]) -> usize {
        mixed_radix_encode(locals, &self.local_sizes())
    }

    pub fn decode_action(&self, a: usize) -> Vec<usize> {
        mixed_radix_decode(a, &self.action_sizes)
    }

    pub fn encode_action(&self, actions: &[usize]) -> usize {
        mixed_radix_encode(actions, &self.action_sizes)
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn row(&self, x: usize, a: usize) -> &[(usize, f64)] {
        &self.rows[x * self.num_actions + a]
    }

    pub fn prob(&self, x: usize, a: usize, y: usize) -> f64 {
        self.row(x, a)
            .iter()
            .find(|&&(z, _)| z == y)
            .map_or(0.0, |&(_, p)| p)
    }

    pub fn reward(&self, i: usize, x: usize, a: usize) -> f64 {
        self.rewards[i][x * self.num_actions + a]
    }

    pub fn legal(&self, i: usize, local: usize) -> &[bool] {
        &self.legal[i][local]
    }

    /// Largest absolute reward over all realizable transitions.
    pub fn r_bar(&self) -> f64 {
        self.r_bar
    }
}

/// Builds the explicit product MDP of `env`, refusing if `X * A * X` exceeds `cap`.
pub fn build_explicit<E: Enumerable>(
    env: &E,
    gamma: f64,
    cap: usize,
) -> Result<ExplicitProductMdp, OracleError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(OracleError::Discount(gamma));
    }
    let n = env.num_agents();
    let states: Vec<Vec<E::State>> = (0..n).map(|i| env.local_states(i)).collect();
    let lookup: Vec<HashMap<String, usize>> = states
        .iter()
        .map(|list| list.iter().enumerate().map(|(k, s)| (s.encode(), k)).collect())
        .collect();
    let mdp_sizes: Vec<usize> = states.iter().map(Vec::len).collect();
    let rm_sizes: Vec<usize> = (0..n).map(|i| env.machine(i).num_states()).collect();
    let action_sizes: Vec<usize> = (0..n).map(|i| env.num_actions(i)).collect();
    let local_sizes: Vec<usize> = (0..n).map(|i| mdp_sizes[i] * rm_sizes[i]).collect();
    let num_states = local_sizes.iter().product::<usize>();
    let num_actions = action_sizes.iter().product::<usize>();
    let entries = num_states as u128 * num_actions as u128 * num_states as u128;
    if entries > cap as u128 {
        return Err(OracleError::TooLarge {
            states: num_states,
            actions: num_actions,
            entries,
            cap,
        });
    }
    let find = |i: usize, s: &E::State| {
        lookup[i]
            .get(&s.encode())
            .copied()
            .ok_or_else(|| OracleError::UnknownState {
                agent: i,
                state: s.encode(),
            })
    };

    let legal: Vec<Vec<Vec<bool>>> = (0..n)
        .map(|i| {
            (0..local_sizes[i])
                .map(|l| env.legal_actions(i, &states[i][l / rm_sizes[i]]))
                .collect()
        })
        .collect();
    let hoods: Vec<Vec<usize>> = (0..n).map(|i| env.graph().neighborhood(i, 1)).collect();

    let mut rows = Vec::with_capacity(num_states * num_actions);
    let mut rewards = vec![vec![0.0; num_states * num_actions]; n];
    let mut r_bar: f64 = 0.0;
    for x in 0..num_states {
        let locals = mixed_radix_decode(x, &local_sizes);
        let parts: Vec<(usize, RmState)> = (0..n)
            .map(|i| (locals[i] / rm_sizes[i], locals[i] % rm_sizes[i]))
            .collect();
        let frozen: Vec<bool> = (0..n).map(|i| env.is_done(i, parts[i].1)).collect();
        for a in 0..num_actions {
            let acts = mixed_radix_decode(a, &action_sizes);
            let illegal = (0..n).any(|i| !frozen[i] && !legal[i][locals[i]][acts[i]]);
            if illegal {
                rows.push(vec![(x, 1.0)]);
                continue;
            }
            // per agent: (next local index, probability)
            let mut factors: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
            for i in 0..n {
                if frozen[i] {
                    factors.push(vec![(locals[i], 1.0)]);
                    continue;
                }
                let agents = &hoods[i];
                let view = LocalView {
                    agents,
                    me: agents.iter().position(|&j| j == i).unwrap(),
                    states: agents.iter().map(|&j| &states[j][parts[j].0]).collect(),
                    actions: agents.iter().map(|&j| acts[j]).collect(),
                };
                let s = &states[i][parts[i].0];
                let mut out: Vec<(usize, f64)> = Vec::new();
                let mut expected = 0.0;
                for (s_next, p) in env.transition(&view)? {
                    if p <= 0.0 {
                        continue;
                    }
                    let ev = env.label(i, s, acts[i], &s_next);
                    let (u_next, r) = env.machine(i).step(parts[i].1, ev).map_err(EnvError::from)?;
                    r_bar = r_bar.max(r.abs());
                    expected += p * r;
                    out.push((find(i, &s_next)? * rm_sizes[i] + u_next, p));
                }
                rewards[i][x * num_actions + a] = expected;
                factors.push(out);
            }
            let mut row: Vec<(usize, f64)> = vec![(0, 1.0)];
            let mut stride = 1;
            for (i, f) in factors.iter().enumerate() {
                row = row
                    .iter()
                    .flat_map(|&(y, p)| f.iter().map(move |&(l, q)| (y + l * stride, p * q)))
                    .collect();
                stride *= local_sizes[i];
            }
            row.sort_by_key(|&(y, _)| y);
            row.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
            rows.push(row);
        }
    }
    let reset = env.reset();
    let initial_locals: Vec<usize> = (0..n)
        .map(|i| Ok(find(i, &reset.mdp_states[i])? * rm_sizes[i] + reset.rm_states[i]))
        .collect::<Result<_, OracleError>>()?;
    Ok(ExplicitProductMdp {
        gamma,
        graph: env.graph().clone(),
        initial: mixed_radix_encode(&initial_locals, &local_sizes),
        mdp_sizes,
        rm_sizes,
        action_sizes,
        num_states,
        num_actions,
        rows,
        rewards,
        legal,
        r_bar,
    })
}

/// Softmax preferences `theta[i][local][a]` for every agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxParams {
    pub theta: Vec<Vec<Vec<f64>>>,
}

impl SoftmaxParams {
    pub fn zeros(mdp: &ExplicitProductMdp) -> Self {
        Self {
            theta: (0..mdp.num_agents())
                .map(|i| vec![vec![0.0; mdp.action_sizes[i]]; mdp.local_size(i)])
                .collect(),
        }
    }

    /// Preferences drawn uniformly from `[-scale, scale]`.
    pub fn random<R: rand::Rng>(mdp: &ExplicitProductMdp, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(mdp);
        for row in p.theta.iter_mut().flatten() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-scale..=scale);
            }
        }
        p
    }

    pub fn policy(&self, mdp: &ExplicitProductMdp) -> JointPolicy {
        JointPolicy {
            probs: (0..mdp.num_agents())
                .map(|i| {
                    (0..mdp.local_size(i))
                        .map(|l| softmax_masked(&self.theta[i][l], mdp.legal(i, l)))
                        .collect()
                })
                .collect(),
        }
    }

    /// Flat view of agent `i`'s parameters, row-major over `(local, action)`.
    pub fn flat(&self, i: usize) -> Vec<f64> {
        self.theta[i].iter().flatten().copied().collect()
    }

    pub fn set_flat(&mut self, i: usize, values: &[f64]) {
        let mut it = values.iter();
        for v in self.theta[i].iter_mut().flatten() {
            *v = *it.next().expect("flat vector too short");
        }
        assert!(it.next().is_none(), "flat vector too long");
    }

    /// `B_i = max ||e_a - π_i(·|x_i)||` over local states and legal actions.
    pub fn score_bound(&self, mdp: &ExplicitProductMdp, i: usize) -> f64 {
        let policy = self.policy(mdp);
        let mut best: f64 = 0.0;
        for l in 0..mdp.local_size(i) {
            let pi = &policy.probs[i][l];
            for a in (0..pi.len()).filter(|&a| mdp.legal(i, l)[a]) {
                let norm2: f64 = pi
                    .iter()
                    .enumerate()
                    .map(|(b, &p)| {
                        let d = if a == b { 1.0 - p } else { -p };
                        d * d
                    })
                    .sum();
                best = best.max(norm2.sqrt());
            }
        }
        best
    }
}

/// Product of localized policies, `probs[i][local][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPolicy {
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl JointPolicy {
    pub fn prob(&self, locals: &[usize], actions: &[usize]) -> f64 {
        locals
            .iter()
            .zip(actions)
            .enumerate()
            .map(|(i, (&l, &a))| self.probs[i][l][a])
            .product()
    }

    /// `π(·|x)` over joint actions.
    pub fn distribution(&self, mdp: &ExplicitProductMdp, x: usize) -> Vec<f64> {
        let locals = mdp.decode_state(x);
        (0..mdp.num_actions())
            .map(|a| self.prob(&locals, &mdp.decode_action(a)))
            .collect()
    }
}

/// Per-agent `Q_i(x, a)` and `V_i(x)` of a fixed joint policy.
#[derive(Debug, Clone)]
pub struct ExactQ {
    num_actions: usize,
    pub q: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl ExactQ {
    pub fn agent(&self, i: usize, x: usize, a: usize) -> f64 {
        self.q[i][x * self.num_actions + a]
    }

    /// `Q = (1/n) Σ_i Q_i`.
    pub fn global(&self, x: usize, a: usize) -> f64 {
        let n = self.q.len() as f64;
        self.q.iter().map(|q| q[x * self.num_actions + a]).sum::<f64>() / n
    }

    pub fn global_value(&self, x: usize) -> f64 {
        let n = self.v.len() as f64;
        self.v.iter().map(|v| v[x]).sum::<f64>() / n
    }
}

const MAX_SWEEPS: usize = 1_000_000;

/// Policy-induced chain: `P_π` rows and, per agent, `r_π`.
fn induced_chain(
    mdp: &ExplicitProductMdp,
    policy: &JointPolicy,
) -> (Vec<Vec<(usize, f64)>>, Vec<Vec<f64>>) {
    let n = mdp.num_agents();
    let nx = mdp.num_states();
    let na = mdp.num_actions();
    let mut p_pi = Vec::with_capacity(nx);
    let mut r_pi = vec![vec![0.0; nx]; n];
    for x in 0..nx {
        let pi = policy.distribution(mdp, x);
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for a in (0..na).filter(|&a| pi[a] > 0.0) {
            for &(y, p) in mdp.row(x, a) {
                *acc.entry(y).or_default() += pi[a] * p;
            }
            for (i, r) in r_pi.iter_mut().enumerate() {
                r[x] += pi[a] * mdp.reward(i, x, a);
            }
        }
        let mut row: Vec<(usize, f64)> = acc.into_iter().collect();
        row.sort_by_key(|&(y, _)| y);
        p_pi.push(row);
    }
    (p_pi, r_pi)
}

/// Solves `V_i = r_π,i + γ P_π V_i` by iteration until successive sweeps
/// differ by less than `tol (1 - γ)` in sup norm, then `Q_i = r_i + γ P V_i`.
pub fn exact_q_policy(
    mdp: &ExplicitProductMdp,
    policy: &JointPolicy,
    tol: f64,
) -> Result<ExactQ, OracleError> {
    let gamma = mdp.gamma;
    let (p_pi, r_pi) = induced_chain(mdp, policy);
    let nx = mdp.num_states();
    let na = mdp.num_actions();
    let mut vs = Vec::with_capacity(r_pi.len());
    for r in &r_pi {
        let mut v = vec![0.0; nx];
        let mut sweeps = 0;
        loop {
            let next: Vec<f64> = (0..nx)
                .map(|x| r[x] + gamma * p_pi[x].iter().map(|&(y, p)| p * v[y]).sum::<f64>())
                .collect();
            let diff = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            v = next;
            sweeps += 1;
            if diff <= tol * (1.0 - gamma) {
                break;
            }
            if sweeps >= MAX_SWEEPS {
                return Err(OracleError::NoConvergence(sweeps));
            }
        }
        vs.push(v);
    }
    let q = (0..mdp.num_agents())
        .map(|i| {
            (0..nx * na)
                .map(|k| {
                    let (x, a) = (k / na, k % na);
                    mdp.reward(i, x, a)
                        + gamma * mdp.row(x, a).iter().map(|&(y, p)| p * vs[i][y]).sum::<f64>()
                })
                .collect()
        })
        .collect();
    Ok(ExactQ {
        num_actions: na,
        q,
        v: vs,
    })
}

/// Midrange truncation of one Q-tensor onto a κ-hop key.
#[derive(Debug, Clone)]
pub struct TruncatedQ {
    pub members: Vec<usize>,
    ranges: HashMap<usize, (f64, f64)>,
}

impl TruncatedQ {
    /// Key of `(x, a)`: mixed radix over members' `(local, action)` pairs.
    pub fn key(mdp: &ExplicitProductMdp, members: &[usize], locals: &[usize], actions: &[usize]) -> usize {
        let mut key = 0;
        for &j in members.iter().rev() {
            key = (key * mdp.local_size(j) + locals[j]) * mdp.action_sizes[j] + actions[j];
        }
        key
    }

    pub fn new(mdp: &ExplicitProductMdp, q: &[f64], members: Vec<usize>) -> Self {
        let na = mdp.num_actions();
        let mut ranges: HashMap<usize, (f64, f64)> = HashMap::new();
        for x in 0..mdp.num_states() {
            let locals = mdp.decode_state(x);
            for a in 0..na {
                let key = Self::key(mdp, &members, &locals, &mdp.decode_action(a));
                let v = q[x * na + a];
                let e = ranges.entry(key).or_insert((v, v));
                e.0 = e.0.min(v);
                e.1 = e.1.max(v);
            }
        }
        Self { members, ranges }
    }

    /// `(max + min) / 2` over completions of the key.
    pub fn value(&self, key: usize) -> f64 {
        let (lo, hi) = self.ranges[&key];
        0.5 * (lo + hi)
    }

    pub fn value_at(&self, mdp: &ExplicitProductMdp, locals: &[usize], actions: &[usize]) -> f64 {
        self.value(Self::key(mdp, &self.members, locals, actions))
    }

    /// Largest spread `max - min` over keys.
    pub fn gap(&self) -> f64 {
        self.ranges.values().map(|(lo, hi)| hi - lo).fold(0.0, f64::max)
    }
}

pub fn truncate(mdp: &ExplicitProductMdp, exact: &ExactQ, i: usize, kappa: usize) -> TruncatedQ {
    TruncatedQ::new(mdp, &exact.q[i], mdp.graph().neighborhood(i, kappa))
}

/// Largest `|Q_i(x, a) - Q_i(x', a')|` over pairs agreeing on `N_i^κ`.
pub fn decay_gap(mdp: &ExplicitProductMdp, exact: &ExactQ, i: usize, kappa: usize) -> f64 {
    truncate(mdp, exact, i, kappa).gap()
}

/// Sup-norm error of the midrange truncation.
pub fn best_truncation_error(mdp: &ExplicitProductMdp, exact: &ExactQ, i: usize, kappa: usize) -> f64 {
    let t = truncate(mdp, exact, i, kappa);
    let na = mdp.num_actions();
    let mut err: f64 = 0.0;
    for x in 0..mdp.num_states() {
        let locals = mdp.decode_state(x);
        for a in 0..na {
            let v = t.value_at(mdp, &locals, &mdp.decode_action(a));
            err = err.max((exact.q[i][x * na + a] - v).abs());
        }
    }
    err
}

/// `D = Σ_t γ^t d_t` from the initial state, summed until the remaining tail
/// mass `γ^t / (1 - γ)` falls below `1e-10`.
pub fn discounted_visitation(mdp: &ExplicitProductMdp, policy: &JointPolicy) -> Vec<f64> {
    let (p_pi, _) = induced_chain(mdp, policy);
    let gamma = mdp.gamma;
    let nx = mdp.num_states();
    let mut d = vec![0.0; nx];
    d[mdp.initial()] = 1.0;
    let mut acc = vec![0.0; nx];
    let mut disc = 1.0;
    while disc / (1.0 - gamma) >= 1e-10 {
        for (a, &p) in acc.iter_mut().zip(&d) {
            *a += disc * p;
        }
        let mut next = vec![0.0; nx];
        for (x, row) in p_pi.iter().enumerate() {
            if d[x] == 0.0 {
                continue;
            }
            for &(y, p) in row {
                next[y] += d[x] * p;
            }
        }
        d = next;
        disc *= gamma;
    }
    acc
}

/// `J(θ) = V(x_0)` for the global mean reward.
pub fn objective(mdp: &ExplicitProductMdp, params: &SoftmaxParams, tol: f64) -> Result<f64, OracleError> {
    let exact = exact_q_policy(mdp, &params.policy(mdp), tol)?;
    Ok(exact.global_value(mdp.initial()))
}

/// `Σ_x D(x) Σ_a π(a|x) w(x, a) ∇_{θ_i} log π_i(a_i|x_i)`, flattened like
/// [`SoftmaxParams::flat`].
fn weighted_score_sum<W: Fn(usize, &[usize], &[usize], usize) -> f64>(
    mdp: &ExplicitProductMdp,
    policy: &JointPolicy,
    visitation: &[f64],
    i: usize,
    weight: W,
) -> Vec<f64> {
    let ai = mdp.action_sizes[i];
    let mut grad = vec![0.0; mdp.local_size(i) * ai];
    for (x, &dx) in visitation.iter().enumerate() {
        if dx == 0.0 {
            continue;
        }
        let locals = mdp.decode_state(x);
        let li = locals[i];
        let pi_i = &policy.probs[i][li];
        for a in 0..mdp.num_actions() {
            let acts = mdp.decode_action(a);
            let pa = policy.prob(&locals, &acts);
            if pa == 0.0 {
                continue;
            }
            let w = dx * pa * weight(x, &locals, &acts, a);
            for b in 0..ai {
                let score = if b == acts[i] { 1.0 } else { 0.0 } - pi_i[b];
                grad[li * ai + b] += w * score;
            }
        }
    }
    grad
}

/// Exact `∇_{θ_i} J`.
pub fn exact_policy_gradient(
    mdp: &ExplicitProductMdp,
    params: &SoftmaxParams,
    i: usize,
    tol: f64,
) -> Result<Vec<f64>, OracleError> {
    let policy = params.policy(mdp);
    let exact = exact_q_policy(mdp, &policy, tol)?;
    let d = discounted_visitation(mdp, &policy);
    Ok(weighted_score_sum(mdp, &policy, &d, i, |x, _, _, a| exact.global(x, a)))
}

/// Exact and truncated gradients for agent `i` at radius `κ`, the latter
/// using midrange `Q̃_j` for `j ∈ N_i^κ` scaled by `1/n`.
#[derive(Debug, Clone)]
pub struct GradientPair {
    pub exact: Vec<f64>,
    pub truncated: Vec<f64>,
}

impl GradientPair {
    pub fn distance(&self) -> f64 {
        self.exact
            .iter()
            .zip(&self.truncated)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn gradient_pair(
    mdp: &ExplicitProductMdp,
    params: &SoftmaxParams,
    exact: &ExactQ,
    visitation: &[f64],
    i: usize,
    kappa: usize,
) -> GradientPair {
    let policy = params.policy(mdp);
    let n = mdp.num_agents() as f64;
    let hood = mdp.graph().neighborhood(i, kappa);
    let truncs: Vec<TruncatedQ> = hood.iter().map(|&j| truncate(mdp, exact, j, kappa)).collect();
    GradientPair {
        exact: weighted_score_sum(mdp, &policy, visitation, i, |x, _, _, a| exact.global(x, a)),
        truncated: weighted_score_sum(mdp, &policy, visitation, i, |_, locals, acts, _| {
            truncs.iter().map(|t| t.value_at(mdp, locals, acts)).sum::<f64>() / n
        }),
    }
}

/// One `(agent, κ)` row of a bound report. Margins are `bound - value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    pub agent: usize,
    pub kappa: usize,
    pub decay_gap: f64,
    pub decay_bound: f64,
    pub decay_margin: f64,
    pub truncation_error: f64,
    pub truncation_bound: f64,
    pub truncation_margin: f64,
    pub score_bound: f64,
    pub gradient_distance: f64,
    pub gradient_bound: f64,
    pub gradient_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub gamma: f64,
    pub r_bar: f64,
    pub lambda: f64,
    pub entries: Vec<BoundEntry>,
}

impl BoundReport {
    /// Entries where any value exceeds its bound by more than `slack`.
    pub fn violations(&self, slack: f64) -> Vec<&BoundEntry> {
        self.entries
            .iter()
            .filter(|e| e.decay_margin < -slack || e.truncation_margin < -slack || e.gradient_margin < -slack)
            .collect()
    }
}

/// Checks the decay, truncation and gradient bounds with `λ = R̄/(1-γ)`,
/// `ρ = γ` for every agent and every `κ` in `kappas`.
pub fn bound_report(
    mdp: &ExplicitProductMdp,
    params: &SoftmaxParams,
    kappas: &[usize],
    tol: f64,
) -> Result<BoundReport, OracleError> {
    let gamma = mdp.gamma;
    let lambda = mdp.r_bar() / (1.0 - gamma);
    let policy = params.policy(mdp);
    let exact = exact_q_policy(mdp, &policy, tol)?;
    let d = discounted_visitation(mdp, &policy);
    let mut entries = Vec::new();
    for i in 0..mdp.num_agents() {
        let b_i = params.score_bound(mdp, i);
        for &kappa in kappas {
            let bound = lambda * gamma.powi(kappa as i32 + 1);
            let gap = decay_gap(mdp, &exact, i, kappa);
            let err = best_truncation_error(mdp, &exact, i, kappa);
            let dist = gradient_pair(mdp, params, &exact, &d, i, kappa).distance();
            let grad_bound = bound * b_i / (1.0 - gamma);
            entries.push(BoundEntry {
                agent: i,
                kappa,
                decay_gap: gap,
                decay_bound: bound,
                decay_margin: bound - gap,
                truncation_error: err,
                truncation_bound: bound,
                truncation_margin: bound - err,
                score_bound: b_i,
                gradient_distance: dist,
                gradient_bound: grad_bound,
                gradient_margin: grad_bound - dist,
            });
        }
    }
    Ok(BoundReport {
        gamma,
        r_bar: mdp.r_bar(),
        lambda,
        entries,
    })
}
