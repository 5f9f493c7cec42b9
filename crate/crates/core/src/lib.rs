//! Decentralized actor-critic learning for graph-coupled multi-agent MDPs whose
//! per-agent tasks are given by reward machines.
//!
//! * [`reward_machine`]: machines, their text format and validation.
//! * [`graph_mdp`]: the environment contract, neighborhoods and the synchronous
//!   product step.
//! * [`tabular`]: truncated Q-tables with softmax localized policies.
//! * [`deep`]: the network-based variant with a small dense MLP.
//! * [`oracle`]: exact computations on small product MDPs.
//! * [`envs`]: UAV delivery, networked pandemic and synthetic chain fixtures.
//! * [`experiment`]: seeded experiment runner and bound verification.

pub mod deep;
pub mod envs;
pub mod experiment;
pub mod graph_mdp;
pub mod metrics;
pub mod oracle;
pub mod reward_machine;
pub mod rng;
pub mod stats;
pub mod tabular;
pub mod train;
