//! Network actor-critic: one critic per agent over its κ-hop neighborhood and
//! one localized actor per agent over its own state and machine state.
//!
//! Each episode is rolled out with fixed networks. Every critic then takes a
//! step along the episode-averaged TD error, and every actor takes a
//! score-function step weighted by the mean TD error of its neighborhood.
//! TD errors come from the critics as they were before the update.

mod encoder;
mod mlp;

pub use encoder::FeatureEncoder;
pub use mlp::{clip_global_norm, Activation, Forward, Gradients, Mlp, MlpError};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph_mdp::{run_episode, Featurized, GlobalState, Neighborhoods, Trajectory};
use crate::rng::{sample_index, EpisodeRng, Purpose, StreamRng};
use crate::tabular::{argmax_legal, softmax_masked};
use crate::train::{EpisodeMetrics, TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Cap on the Euclidean norm of each update direction.
    pub clip_norm: Option<f64>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            actor_hidden: vec![64, 32],
            critic_hidden: vec![64, 32],
            clip_norm: Some(10.0),
        }
    }
}

/// One critic transition; `next` is `None` when the agent's task ended.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticStep {
    pub prev: Vec<f64>,
    pub reward: f64,
    pub next: Option<Vec<f64>>,
}

/// One decision of an agent: actor input, chosen action and legal mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorStep {
    pub input: Vec<f64>,
    pub action: usize,
    pub legal: Vec<bool>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeBuffer {
    pub critic: Vec<CriticStep>,
    pub actor: Vec<ActorStep>,
}

pub fn critic_value(critic: &Mlp, input: &[f64]) -> Result<f64, MlpError> {
    Ok(critic.forward(input)?[0])
}

pub fn actor_probs(actor: &Mlp, input: &[f64], legal: &[bool]) -> Result<Vec<f64>, MlpError> {
    Ok(softmax_masked(&actor.forward(input)?, legal))
}

/// Mean over the episode of `r + gamma Q(next) - Q(prev)`.
pub fn episode_td(critic: &Mlp, steps: &[CriticStep], gamma: f64) -> Result<f64, TrainError> {
    if steps.is_empty() {
        return Err(TrainError::Dimension("empty episode buffer".into()));
    }
    let mut sum = 0.0;
    for s in steps {
        let next = match &s.next {
            Some(x) => critic_value(critic, x).map_err(dim)?,
            None => 0.0,
        };
        sum += s.reward + gamma * next - critic_value(critic, &s.prev).map_err(dim)?;
    }
    Ok(sum / steps.len() as f64)
}

fn dim(e: MlpError) -> TrainError {
    TrainError::Dimension(e.to_string())
}

fn clipped(mut g: Vec<f64>, clip: Option<f64>) -> Vec<f64> {
    if let Some(c) = clip {
        clip_global_norm(&mut g, c);
    }
    g
}

/// `beta += alpha * clip(td * sum_t grad Q(prev_t))`.
pub fn update_critic(
    critic: &mut Mlp,
    steps: &[CriticStep],
    td: f64,
    alpha: f64,
    clip: Option<f64>,
) -> Result<(), TrainError> {
    if td == 0.0 {
        return Ok(());
    }
    let mut grad = vec![0.0; critic.num_params()];
    for s in steps {
        let fwd = critic.forward_cached(&s.prev).map_err(dim)?;
        let g = critic.backward(&fwd, &[td]).map_err(dim)?;
        grad.iter_mut().zip(&g.params).for_each(|(a, b)| *a += b);
    }
    let step = clipped(grad, clip);
    if step.iter().any(|x| !x.is_finite()) {
        return Err(TrainError::Dimension("non-finite critic gradient".into()));
    }
    critic.add_scaled(&step, alpha).map_err(dim)
}

/// Mean of `tds` over `neighborhood`; errors if an index is missing.
pub fn neighborhood_td(tds: &[f64], neighborhood: &[usize]) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    for &j in neighborhood {
        sum += tds
            .get(j)
            .ok_or_else(|| TrainError::Dimension(format!("no TD error for agent {j}")))?;
    }
    Ok(sum / neighborhood.len() as f64)
}

/// `theta += alpha * clip(mean_td * sum_t grad log pi(a_t | x_t))`.
pub fn update_actor(
    actor: &mut Mlp,
    steps: &[ActorStep],
    mean_td: f64,
    alpha: f64,
    clip: Option<f64>,
) -> Result<(), TrainError> {
    if mean_td == 0.0 {
        return Ok(());
    }
    let mut grad = vec![0.0; actor.num_params()];
    for s in steps {
        let fwd = actor.forward_cached(&s.input).map_err(dim)?;
        let probs = softmax_masked(&fwd.output, &s.legal);
        let upstream: Vec<f64> = (0..probs.len())
            .map(|b| {
                if s.legal[b] {
                    mean_td * ((b == s.action) as u8 as f64 - probs[b])
                } else {
                    0.0
                }
            })
            .collect();
        let g = actor.backward(&fwd, &upstream).map_err(dim)?;
        grad.iter_mut().zip(&g.params).for_each(|(a, b)| *a += b);
    }
    let step = clipped(grad, clip);
    if step.iter().any(|x| !x.is_finite()) {
        return Err(TrainError::Dimension("non-finite actor gradient".into()));
    }
    actor.add_scaled(&step, alpha).map_err(dim)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    agents: usize,
    kappa: usize,
    seed: u64,
    next_episode: usize,
    critic_updates: usize,
    actor_updates: usize,
    critics: Vec<Mlp>,
    actors: Vec<Mlp>,
}

const CHECKPOINT_FORMAT: &str = "dgrm-deep-v1";

pub struct DeepLearner<'e, E: Featurized> {
    env: &'e E,
    cfg: TrainConfig,
    net: NetConfig,
    hoods: Neighborhoods,
    streams: StreamRng,
    encoder: FeatureEncoder,
    pub critics: Vec<Mlp>,
    pub actors: Vec<Mlp>,
    next_episode: usize,
    critic_updates: usize,
    actor_updates: usize,
}

impl<'e, E: Featurized> DeepLearner<'e, E> {
    pub fn new(env: &'e E, cfg: TrainConfig, net: NetConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        if let Some(c) = net.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(TrainError::Config("clip_norm must be positive".into()));
            }
        }
        let n = env.num_agents();
        let hoods = Neighborhoods::new(env.graph(), cfg.kappa);
        let encoder = FeatureEncoder::new(env);
        let streams = StreamRng::new(cfg.seed);
        let init = streams.derive(Purpose::Init);
        let mut critics = Vec::with_capacity(n);
        let mut actors = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = init.stream(0, 0, i, Purpose::Init);
            critics.push(
                Mlp::with_hidden(encoder.critic_dim(hoods.of(i)), &net.critic_hidden, 1, Activation::Tanh, &mut rng)
                    .map_err(|e| TrainError::Config(e.to_string()))?,
            );
            let mut rng = init.stream(1, 0, i, Purpose::Init);
            actors.push(
                Mlp::with_hidden(encoder.actor_dim(i), &net.actor_hidden, env.num_actions(i), Activation::Relu, &mut rng)
                    .map_err(|e| TrainError::Config(e.to_string()))?,
            );
        }
        Ok(Self {
            env,
            cfg,
            net,
            hoods,
            streams,
            encoder,
            critics,
            actors,
            next_episode: 0,
            critic_updates: 0,
            actor_updates: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn encoder(&self) -> &FeatureEncoder {
        &self.encoder
    }

    pub fn next_episode(&self) -> usize {
        self.next_episode
    }

    pub fn is_finished(&self) -> bool {
        self.next_episode >= self.cfg.episodes
    }

    pub fn critic_updates(&self) -> usize {
        self.critic_updates
    }

    pub fn actor_updates(&self) -> usize {
        self.actor_updates
    }

    /// Action distribution of agent `i` given only its own state pair.
    pub fn policy(&self, i: usize, s: &E::State, u: usize) -> Vec<f64> {
        let x = self.encoder.actor_input(self.env, i, s, u);
        let legal = self.env.legal_actions(i, s);
        actor_probs(&self.actors[i], &x, &legal).expect("encoder matches actor")
    }

    pub fn act(&self, state: &GlobalState<E::State>, i: usize, rng: &EpisodeRng, greedy: bool) -> usize {
        let s = &state.mdp_states[i];
        let probs = self.policy(i, s, state.rm_states[i]);
        if greedy {
            let legal = self.env.legal_actions(i, s);
            argmax_legal(&probs, &legal)
        } else {
            sample_index(&probs, rng.uniform(state.t as u64, i, Purpose::Action))
        }
    }

    /// Transitions of agent `i` in `traj`, with `tail` the actions sampled
    /// at the final state for bootstrapping.
    pub fn buffer(&self, traj: &Trajectory<E::State>, tail: &[usize], i: usize) -> EpisodeBuffer {
        let env = self.env;
        let members = self.hoods.of(i);
        let mut buf = EpisodeBuffer::default();
        for t in 0..traj.len() {
            if !traj.active[t][i] {
                continue;
            }
            let state = &traj.states[t];
            let (next_actions, next_active) = if t + 1 < traj.len() {
                (&traj.actions[t + 1][..], traj.active[t + 1][i])
            } else {
                (tail, !traj.done[i])
            };
            buf.critic.push(CriticStep {
                prev: self.encoder.critic_input(env, members, state, &traj.actions[t]),
                reward: traj.rewards[t][i],
                next: next_active.then(|| self.encoder.critic_input(env, members, &traj.states[t + 1], next_actions)),
            });
            let s = &state.mdp_states[i];
            buf.actor.push(ActorStep {
                input: self.encoder.actor_input(env, i, s, state.rm_states[i]),
                action: traj.actions[t][i],
                legal: env.legal_actions(i, s),
            });
        }
        buf
    }

    pub fn train_episode(&mut self) -> Result<EpisodeMetrics, TrainError> {
        let e = self.next_episode;
        let env = self.env;
        let gamma = self.cfg.gamma;
        let n = env.num_agents();
        let rng = self.streams.episode(e as u64);
        let traj = run_episode(env, &rng, self.cfg.horizon, |s, i| self.act(s, i, &rng, false))?;
        let last = traj.final_state();
        let tail: Vec<usize> = (0..n)
            .map(|i| if traj.done[i] { 0 } else { self.act(last, i, &rng, false) })
            .collect();

        let buffers: Vec<EpisodeBuffer> = (0..n).into_par_iter().map(|i| self.buffer(&traj, &tail, i)).collect();
        let tds: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                if buffers[i].critic.is_empty() {
                    Ok(0.0)
                } else {
                    episode_td(&self.critics[i], &buffers[i].critic, gamma)
                }
            })
            .collect::<Result<_, _>>()?;
        if let Some(i) = tds.iter().position(|x| !x.is_finite()) {
            return Err(TrainError::Diverged {
                episode: e,
                agent: i,
                what: "TD error",
            });
        }

        let alpha_q = self.cfg.alpha_q.at(e);
        let alpha_pi = self.cfg.alpha_pi.at(e);
        let clip = self.net.clip_norm;
        let diverged = |i: usize, what| TrainError::Diverged { episode: e, agent: i, what };
        self.critics
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(i, c)| {
                update_critic(c, &buffers[i].critic, tds[i], alpha_q, clip).map_err(|_| diverged(i, "critic gradient"))
            })?;
        let hoods = &self.hoods;
        self.actors
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(i, a)| {
                let mean = neighborhood_td(&tds, hoods.of(i))?;
                update_actor(a, &buffers[i].actor, mean, alpha_pi, clip).map_err(|_| diverged(i, "actor gradient"))
            })?;

        let critic_updates = buffers.iter().filter(|b| !b.critic.is_empty()).count();
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

    pub fn evaluate(&self, episodes: usize, greedy: bool) -> Result<Vec<Trajectory<E::State>>, TrainError> {
        let streams = self.streams.derive(Purpose::Evaluation);
        (0..episodes)
            .map(|k| {
                let rng = streams.episode(k as u64);
                Ok(run_episode(self.env, &rng, self.cfg.horizon, |s, i| self.act(s, i, &rng, greedy))?)
            })
            .collect()
    }

    /// JSON with counters and every network as shape plus flat parameters.
    pub fn checkpoint(&self) -> String {
        serde_json::to_string(&Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            agents: self.actors.len(),
            kappa: self.cfg.kappa,
            seed: self.cfg.seed,
            next_episode: self.next_episode,
            critic_updates: self.critic_updates,
            actor_updates: self.actor_updates,
            critics: self.critics.clone(),
            actors: self.actors.clone(),
        })
        .expect("checkpoint serializes")
    }

    pub fn restore(env: &'e E, cfg: TrainConfig, net: NetConfig, text: &str) -> Result<Self, TrainError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        let mut learner = Self::new(env, cfg, net)?;
        let mismatch = |what: &str| Err(TrainError::Checkpoint(format!("{what} does not match")));
        if ck.format != CHECKPOINT_FORMAT {
            return mismatch("format");
        }
        if ck.agents != env.num_agents() || ck.critics.len() != ck.agents || ck.actors.len() != ck.agents {
            return mismatch("agent count");
        }
        if ck.kappa != learner.cfg.kappa {
            return mismatch("kappa");
        }
        if ck.seed != learner.cfg.seed {
            return mismatch("seed");
        }
        for (old, new) in learner.critics.iter().zip(&ck.critics).chain(learner.actors.iter().zip(&ck.actors)) {
            if old.sizes() != new.sizes() || old.activations() != new.activations() || new.params().len() != old.num_params() {
                return mismatch("network shape");
            }
        }
        learner.critics = ck.critics;
        learner.actors = ck.actors;
        learner.next_episode = ck.next_episode;
        learner.critic_updates = ck.critic_updates;
        learner.actor_updates = ck.actor_updates;
        Ok(learner)
    }
}

pub struct DeepTrainResult {
    pub metrics: Vec<EpisodeMetrics>,
    pub critics: Vec<Mlp>,
    pub actors: Vec<Mlp>,
}

pub fn train_deep<E: Featurized>(env: &E, cfg: TrainConfig, net: NetConfig) -> Result<DeepTrainResult, TrainError> {
    let mut learner = DeepLearner::new(env, cfg, net)?;
    let mut metrics = Vec::with_capacity(learner.cfg.episodes);
    while !learner.is_finished() {
        metrics.push(learner.train_episode()?);
    }
    Ok(DeepTrainResult {
        metrics,
        critics: learner.critics,
        actors: learner.actors,
    })
}
