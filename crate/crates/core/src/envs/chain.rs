//! Synthetic chain of binary agents, small enough for the exact oracle.
//!
//! Each agent has local states {0, 1}, actions {0, 1} and a two-state reward
//! machine over the single proposition `one`, which holds while the agent's
//! current state is 1. Rewards are nonnegative and drawn from the seed.
//! Agent `i` moves to state 1 with probability
//! `(1 - c) base_i[s_i][a_i] + c * mean_{j in N(i), j != i} (s_j + a_j) / 2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph_mdp::{AgentGraph, Enumerable, EnvError, Featurized, GraphMdpEnv, LocalView};
use crate::reward_machine::{Event, RewardMachine};

#[derive(Debug, Clone)]
pub struct ChainEnv {
    graph: AgentGraph,
    coupling: f64,
    /// `base[i][s][a]`: own-dynamics probability of moving to 1.
    base: Vec<[[f64; 2]; 2]>,
    machines: Vec<RewardMachine>,
}

fn chain_machine(rewards: [f64; 4]) -> RewardMachine {
    let mut rm = RewardMachine::new(&["u0", "u1"], "u0", &["one"], &[], &[]).expect("valid machine");
    let none: [&str; 0] = [];
    rm.add("u0", &none, "u0", rewards[0]).unwrap();
    rm.add("u0", &["one"], "u1", rewards[1]).unwrap();
    rm.add("u1", &none, "u0", rewards[2]).unwrap();
    rm.add("u1", &["one"], "u1", rewards[3]).unwrap();
    rm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainEnvConfig {
    pub agents: usize,
    pub coupling: f64,
    /// Draws the per-agent dynamics and machine rewards.
    pub seed: u64,
}

impl Default for ChainEnvConfig {
    fn default() -> Self {
        Self {
            agents: 3,
            coupling: 0.3,
            seed: 1,
        }
    }
}

impl ChainEnvConfig {
    pub fn build(&self) -> Result<ChainEnv, EnvError> {
        make_chain_env(self.agents, self.coupling, self.seed)
    }
}

/// `n`-agent path graph with coupling strength `coupling` in `[0, 1]`.
pub fn make_chain_env(n: usize, coupling: f64, seed: u64) -> Result<ChainEnv, EnvError> {
    make_env_on(AgentGraph::chain(n), coupling, seed)
}

/// Same dynamics on an arbitrary graph.
pub fn make_env_on(graph: AgentGraph, coupling: f64, seed: u64) -> Result<ChainEnv, EnvError> {
    if !(0.0..=1.0).contains(&coupling) {
        return Err(EnvError::Config(format!("coupling {coupling} outside [0, 1]")));
    }
    let n = graph.num_agents();
    if n == 0 {
        return Err(EnvError::Config("need at least one agent".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base = Vec::with_capacity(n);
    let mut machines = Vec::with_capacity(n);
    for _ in 0..n {
        let mut b = [[0.0; 2]; 2];
        for row in &mut b {
            for p in row.iter_mut() {
                *p = rng.gen_range(0.1..0.9);
            }
        }
        base.push(b);
        machines.push(chain_machine([
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
        ]));
    }
    Ok(ChainEnv {
        graph,
        coupling,
        base,
        machines,
    })
}

impl ChainEnv {
    pub fn coupling(&self) -> f64 {
        self.coupling
    }
}

impl GraphMdpEnv for ChainEnv {
    type State = u8;

    fn graph(&self) -> &AgentGraph {
        &self.graph
    }

    fn num_actions(&self, _agent: usize) -> usize {
        2
    }

    fn machine(&self, agent: usize) -> &RewardMachine {
        &self.machines[agent]
    }

    fn initial_state(&self, _agent: usize) -> u8 {
        0
    }

    fn transition(&self, view: &LocalView<'_, u8>) -> Result<Vec<(u8, f64)>, EnvError> {
        let i = view.owner();
        let s = *view.own_state() as usize;
        let a = view.own_action();
        let own = self.base[i][s][a];
        let others: Vec<f64> = view
            .others()
            .map(|(_, &sj, aj)| (sj as f64 + aj as f64) / 2.0)
            .collect();
        let p = if others.is_empty() {
            own
        } else {
            let mean = others.iter().sum::<f64>() / others.len() as f64;
            (1.0 - self.coupling) * own + self.coupling * mean
        };
        Ok(vec![(0, 1.0 - p), (1, p)])
    }

    fn label(&self, _agent: usize, s: &u8, _a: usize, _s_next: &u8) -> Event {
        if *s == 1 {
            Event(1)
        } else {
            Event::EMPTY
        }
    }
}

impl Enumerable for ChainEnv {
    fn local_states(&self, _agent: usize) -> Vec<u8> {
        vec![0, 1]
    }
}

impl Featurized for ChainEnv {
    fn features(&self, _agent: usize, s: &u8) -> Vec<f64> {
        vec![*s as f64]
    }

    fn feature_bounds(&self, _agent: usize) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{build_explicit, decay_gap, exact_q_policy, SoftmaxParams, DEFAULT_CAP};

    #[test]
    fn three_agents_give_sixty_four_product_states() {
        let env = make_chain_env(3, 0.3, 1).unwrap();
        let mdp = build_explicit(&env, 0.9, DEFAULT_CAP).unwrap();
        assert_eq!(mdp.num_states(), 64);
    }

    #[test]
    fn same_seed_same_tensors() {
        let a = build_explicit(&make_chain_env(3, 0.3, 7).unwrap(), 0.9, DEFAULT_CAP).unwrap();
        let b = build_explicit(&make_chain_env(3, 0.3, 7).unwrap(), 0.9, DEFAULT_CAP).unwrap();
        for x in 0..a.num_states() {
            for u in 0..a.num_actions() {
                assert_eq!(a.row(x, u), b.row(x, u));
                assert_eq!(a.reward(1, x, u), b.reward(1, x, u));
            }
        }
    }

    #[test]
    fn zero_coupling_decouples_agents() {
        let env = make_chain_env(3, 0.0, 2).unwrap();
        let mdp = build_explicit(&env, 0.9, DEFAULT_CAP).unwrap();
        let params = SoftmaxParams::zeros(&mdp);
        let q = exact_q_policy(&mdp, &params.policy(&mdp), 1e-12).unwrap();
        for i in 0..3 {
            assert!(decay_gap(&mdp, &q, i, 0) < 1e-9);
        }
    }

    #[test]
    fn coupling_outside_unit_interval_is_rejected() {
        assert!(make_chain_env(3, 1.5, 0).is_err());
        assert!(make_chain_env(0, 0.5, 0).is_err());
    }

    #[test]
    fn rewards_are_nonnegative() {
        let env = make_chain_env(4, 0.5, 3).unwrap();
        for i in 0..4 {
            assert!(env.machine(i).transitions().all(|(_, _, e)| e.reward >= 0.0));
            assert!(env.machine(i).validate().is_empty());
        }
    }
}
