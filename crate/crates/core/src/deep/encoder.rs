//! Network inputs: continuous features min-max scaled to `[-1, 1]`, reward
//! machine states and actions one-hot.

use crate::graph_mdp::{Featurized, GlobalState};
use crate::reward_machine::RmState;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEncoder {
    bounds: Vec<Vec<(f64, f64)>>,
    rm_sizes: Vec<usize>,
    action_sizes: Vec<usize>,
}

fn one_hot(out: &mut Vec<f64>, index: usize, size: usize) {
    out.extend((0..size).map(|k| (k == index) as u8 as f64));
}

impl FeatureEncoder {
    pub fn new<E: Featurized>(env: &E) -> Self {
        let n = env.num_agents();
        Self {
            bounds: (0..n).map(|i| env.feature_bounds(i)).collect(),
            rm_sizes: (0..n).map(|i| env.machine(i).num_states()).collect(),
            action_sizes: (0..n).map(|i| env.num_actions(i)).collect(),
        }
    }

    pub fn scale(&self, agent: usize, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.bounds[agent])
            .map(|(&x, &(lo, hi))| if hi > lo { 2.0 * (x - lo) / (hi - lo) - 1.0 } else { 0.0 })
            .collect()
    }

    fn push_local<E: Featurized>(&self, out: &mut Vec<f64>, env: &E, i: usize, s: &E::State, u: RmState) {
        let raw = env.features(i, s);
        debug_assert_eq!(raw.len(), self.bounds[i].len());
        out.extend(self.scale(i, &raw));
        one_hot(out, u, self.rm_sizes[i]);
    }

    pub fn actor_dim(&self, agent: usize) -> usize {
        self.bounds[agent].len() + self.rm_sizes[agent]
    }

    pub fn critic_dim(&self, members: &[usize]) -> usize {
        members
            .iter()
            .map(|&j| self.actor_dim(j) + self.action_sizes[j])
            .sum()
    }

    /// Agent `i`'s own state and machine state; all the policy sees.
    pub fn actor_input<E: Featurized>(&self, env: &E, i: usize, s: &E::State, u: RmState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.actor_dim(i));
        self.push_local(&mut out, env, i, s, u);
        out
    }

    /// States, machine states and actions of `members`, in order.
    pub fn critic_input<E: Featurized>(
        &self,
        env: &E,
        members: &[usize],
        state: &GlobalState<E::State>,
        actions: &[usize],
    ) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.critic_dim(members));
        for &j in members {
            self.push_local(&mut out, env, j, &state.mdp_states[j], state.rm_states[j]);
            one_hot(&mut out, actions[j], self.action_sizes[j]);
        }
        out
    }
}
