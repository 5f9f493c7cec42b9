//! Networked epidemic control over a graph of regions.
//!
//! Each region is a discrete-day compartment model (susceptible, infected,
//! quarantined, hospitalized, recovered, deceased) stored as population
//! fractions. Infection in region `i` mixes with its neighbors through a flux
//! matrix:
//!
//! ```text
//! lambda_i = beta_i * rho_i * sum_j phi_ij * rho_j * I_j
//! ```
//!
//! where `rho` is the social-distancing level chosen by each region and the
//! off-diagonal `phi_ij` are baseline fluxes, cut to 70% when either endpoint
//! restricts movement. `phi_ii = 1 - sum_{j != i} phi_ij`.
//!
//! The reward machine sees one event per Monday summarizing the past week's
//! severe days and lockdown days, and a final event on the last day.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph_mdp::{AgentGraph, EnvError, Featurized, GraphMdpEnv, LocalState, LocalView};
use crate::reward_machine::{Event, RewardMachine, RmState};

pub const COVID_RM: &str = include_str!("../../machines/covid.rm");

pub const NO_RESTRICTIONS: usize = 0;
pub const DISTANCING: usize = 1;
pub const FLUX_CONTROL: usize = 2;
pub const LOCKDOWN: usize = 3;
pub const NUM_ACTIONS: usize = 4;

/// Share of baseline flux kept while an endpoint restricts movement.
pub const FLUX_CUT: f64 = 0.7;

/// A value shared by every region or one value per region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerRegion {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerRegion {
    pub fn get(&self, i: usize) -> f64 {
        match self {
            PerRegion::Uniform(v) => *v,
            PerRegion::Each(v) => v[i],
        }
    }

    fn check(&self, n: usize, name: &str, lo: f64, hi: f64) -> Result<(), EnvError> {
        let vals: Vec<f64> = match self {
            PerRegion::Uniform(v) => vec![*v],
            PerRegion::Each(v) if v.len() == n => v.clone(),
            PerRegion::Each(v) => {
                return Err(EnvError::Config(format!("{name}: {} values for {n} regions", v.len())))
            }
        };
        if vals.iter().any(|v| !(lo..=hi).contains(v)) {
            return Err(EnvError::Config(format!("{name} outside [{lo}, {hi}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxEdge {
    pub a: usize,
    pub b: usize,
    /// Baseline share of `a`'s population mixing with `b`.
    pub flux: f64,
    /// Share of `b`'s population mixing with `a`; defaults to `flux`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flux_back: Option<f64>,
}

/// Layout and baseline fluxes of the region graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Network {
    /// `hubs` metropolitan regions on a ring, each serving `leaves` outlying
    /// regions. Hubs are regions `0..hubs`; hub `h` serves regions
    /// `hubs + h * leaves ..`. A hub sends `hub_to_leaf` of its population to
    /// each leaf and a leaf sends `leaf_to_hub` to its hub.
    Metro {
        hubs: usize,
        leaves: usize,
        hub_link: f64,
        hub_to_leaf: f64,
        leaf_to_hub: f64,
    },
    /// Ring plus `extra_edges` random chords, symmetric fluxes drawn from `flux_range`.
    Random {
        regions: usize,
        seed: u64,
        extra_edges: usize,
        flux_range: (f64, f64),
    },
    Explicit { regions: usize, edges: Vec<FluxEdge> },
}

impl Network {
    pub fn num_regions(&self) -> usize {
        match self {
            Network::Metro { hubs, leaves, .. } => hubs * (1 + leaves),
            Network::Random { regions, .. } | Network::Explicit { regions, .. } => *regions,
        }
    }

    pub fn random(regions: usize, seed: u64, extra_edges: usize) -> Self {
        Network::Random {
            regions,
            seed,
            extra_edges,
            flux_range: (0.03, 0.08),
        }
    }

    pub fn edges(&self) -> Vec<FluxEdge> {
        match self {
            Network::Metro {
                hubs,
                leaves,
                hub_link,
                hub_to_leaf,
                leaf_to_hub,
            } => {
                let mut edges = Vec::new();
                for h in 0..*hubs {
                    if *hubs == 2 && h == 0 || *hubs > 2 {
                        edges.push(FluxEdge {
                            a: h,
                            b: (h + 1) % hubs,
                            flux: *hub_link,
                            flux_back: None,
                        });
                    }
                    for k in 0..*leaves {
                        edges.push(FluxEdge {
                            a: h,
                            b: hubs + h * leaves + k,
                            flux: *hub_to_leaf,
                            flux_back: Some(*leaf_to_hub),
                        });
                    }
                }
                edges
            }
            Network::Random {
                regions,
                seed,
                extra_edges,
                flux_range,
            } => random_edges(*regions, *seed, *extra_edges, *flux_range),
            Network::Explicit { edges, .. } => edges.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PandemicEnvConfig {
    pub network: Network,
    /// ICU beds as a population fraction.
    pub icu_capacity: PerRegion,
    /// Distancing level under restrictions; relaxed level is `min(1, 3 rho)`.
    pub rho_floor: PerRegion,
    /// Contact rate of each region's susceptible population.
    pub infection_rate: PerRegion,
    pub quarantine_rate: f64,
    pub hospitalization_rate: f64,
    pub quarantine_hospitalization_rate: f64,
    pub recovery_rate: f64,
    pub quarantine_recovery_rate: f64,
    pub hospital_recovery_rate: f64,
    pub death_rate: f64,
    pub initial_infected: PerRegion,
    pub initial_quarantined: PerRegion,
    /// Initial hospitalized as a multiple of ICU capacity.
    pub initial_hospital_load: f64,
    /// `0.1 H / capacity` at or above this marks a severe day.
    pub severe_ratio: f64,
    pub horizon: u16,
}

/// Twenty regions: four dense hubs with large hospitals and effective
/// distancing, each serving four commuter towns with small hospitals whose
/// own distancing does little. The towns' outcome hinges on their hub.
impl Default for PandemicEnvConfig {
    fn default() -> Self {
        let (hubs, leaves) = (4, 4);
        let n = hubs * (1 + leaves);
        let split = |hub: f64, leaf: f64| PerRegion::Each((0..n).map(|i| if i < hubs { hub } else { leaf }).collect());
        Self {
            network: Network::Metro {
                hubs,
                leaves,
                hub_link: 0.05,
                hub_to_leaf: 0.03,
                leaf_to_hub: 0.4,
            },
            icu_capacity: split(0.02, 0.001),
            rho_floor: split(0.2, 0.8),
            infection_rate: split(1.5, 0.4),
            initial_infected: split(0.05, 0.002),
            initial_quarantined: PerRegion::Uniform(0.0),
            ..Self::homogeneous(Network::random(20, 7, 10))
        }
    }
}

impl PandemicEnvConfig {
    /// Identical coefficients in every region of `network`.
    pub fn homogeneous(network: Network) -> Self {
        Self {
            network,
            icu_capacity: PerRegion::Uniform(0.002),
            rho_floor: PerRegion::Uniform(0.3),
            infection_rate: PerRegion::Uniform(0.6),
            quarantine_rate: 0.1,
            hospitalization_rate: 0.02,
            quarantine_hospitalization_rate: 0.02,
            recovery_rate: 0.1,
            quarantine_recovery_rate: 0.1,
            hospital_recovery_rate: 0.12,
            death_rate: 0.01,
            initial_infected: PerRegion::Uniform(0.01),
            initial_quarantined: PerRegion::Uniform(0.005),
            initial_hospital_load: 6.0,
            severe_ratio: 0.5,
            horizon: 28,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionState {
    pub susceptible: f64,
    pub infected: f64,
    pub quarantined: f64,
    pub hospitalized: f64,
    pub recovered: f64,
    pub deceased: f64,
    /// Severe days since Monday.
    pub severe_days: u8,
    /// Lockdown days since Monday.
    pub lockdown_days: u8,
    pub day: u16,
}

impl RegionState {
    pub fn compartments(&self) -> [f64; 6] {
        [
            self.susceptible,
            self.infected,
            self.quarantined,
            self.hospitalized,
            self.recovered,
            self.deceased,
        ]
    }
}

impl LocalState for RegionState {
    fn encode(&self) -> String {
        let c = self.compartments();
        format!(
            "{}:{}:{}:{}:{}:{}:{}:{}:{}",
            c[0], c[1], c[2], c[3], c[4], c[5], self.severe_days, self.lockdown_days, self.day
        )
    }

    fn decode(text: &str) -> Option<Self> {
        let f: Vec<&str> = text.split(':').collect();
        if f.len() != 9 {
            return None;
        }
        let c: Vec<f64> = f[..6].iter().map(|x| x.parse().ok()).collect::<Option<_>>()?;
        Some(Self {
            susceptible: c[0],
            infected: c[1],
            quarantined: c[2],
            hospitalized: c[3],
            recovered: c[4],
            deceased: c[5],
            severe_days: f[6].parse().ok().filter(|&v| v <= 7)?,
            lockdown_days: f[7].parse().ok().filter(|&v| v <= 7)?,
            day: f[8].parse().ok()?,
        })
    }
}

/// Weekly level of a day count: 0 days, all 7, or in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    None,
    Some,
    All,
}

impl Level {
    pub fn of(days: u8) -> Self {
        match days {
            0 => Level::None,
            7.. => Level::All,
            _ => Level::Some,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PandemicEnv {
    cfg: PandemicEnvConfig,
    graph: AgentGraph,
    /// Baseline flux per neighbor, aligned with `graph.neighbors(i)`.
    flux: Vec<Vec<f64>>,
    machine: RewardMachine,
    /// Proposition indices `[v0, v05, v1]`, `[l0, l05, l1]` and `e1`.
    v_props: [usize; 3],
    l_props: [usize; 3],
    end_prop: usize,
}

fn random_edges(n: usize, seed: u64, extra_edges: usize, (lo, hi): (f64, f64)) -> Vec<FluxEdge> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    if n == 2 {
        pairs.push((0, 1));
    } else if n > 2 {
        pairs.extend((0..n).map(|i| (i.min((i + 1) % n), i.max((i + 1) % n))));
    }
    let max_edges = n * n.saturating_sub(1) / 2;
    let mut attempts = 0;
    while pairs.len() < (n + extra_edges).min(max_edges) && attempts < 100 * (extra_edges + 1) {
        attempts += 1;
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        let p = (a.min(b), a.max(b));
        if a != b && !pairs.contains(&p) {
            pairs.push(p);
        }
    }
    pairs
        .into_iter()
        .map(|(a, b)| FluxEdge { a, b, flux: draw(&mut rng), flux_back: None })
        .collect()
}

impl PandemicEnv {
    pub fn new(cfg: PandemicEnvConfig) -> Result<Self, EnvError> {
        let n = cfg.network.num_regions();
        if n == 0 {
            return Err(EnvError::Config("need at least one region".into()));
        }
        if cfg.horizon == 0 {
            return Err(EnvError::Config("horizon must be positive".into()));
        }
        cfg.icu_capacity.check(n, "icu_capacity", f64::MIN_POSITIVE, 1.0)?;
        cfg.rho_floor.check(n, "rho_floor", 0.0, 1.0)?;
        cfg.initial_infected.check(n, "initial_infected", 0.0, 1.0)?;
        cfg.initial_quarantined.check(n, "initial_quarantined", 0.0, 1.0)?;
        cfg.infection_rate.check(n, "infection_rate", 0.0, f64::MAX)?;
        let rates = [
            ("quarantine_rate", cfg.quarantine_rate),
            ("hospitalization_rate", cfg.hospitalization_rate),
            ("quarantine_hospitalization_rate", cfg.quarantine_hospitalization_rate),
            ("recovery_rate", cfg.recovery_rate),
            ("quarantine_recovery_rate", cfg.quarantine_recovery_rate),
            ("hospital_recovery_rate", cfg.hospital_recovery_rate),
            ("death_rate", cfg.death_rate),
        ];
        if let Some((name, _)) = rates.iter().find(|(_, r)| !(r.is_finite() && *r >= 0.0)) {
            return Err(EnvError::Config(format!("{name} must be a nonnegative number")));
        }
        let outflows = [
            cfg.quarantine_rate + cfg.hospitalization_rate + cfg.recovery_rate,
            cfg.quarantine_hospitalization_rate + cfg.quarantine_recovery_rate,
            cfg.hospital_recovery_rate + cfg.death_rate,
        ];
        if outflows.iter().any(|&o| o > 1.0) {
            return Err(EnvError::Config("daily outflow of a compartment exceeds 1".into()));
        }
        let edges = cfg.network.edges();
        let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.a, e.b)).collect();
        let graph = AgentGraph::new(n, &pairs)?;
        let mut flux = vec![Vec::new(); n];
        for i in 0..n {
            for &j in graph.neighbors(i) {
                let e = edges
                    .iter()
                    .find(|e| (e.a == i && e.b == j) || (e.a == j && e.b == i))
                    .expect("edge listed");
                let f = if e.a == i { e.flux } else { e.flux_back.unwrap_or(e.flux) };
                if !(0.0..=1.0).contains(&f) {
                    return Err(EnvError::Config(format!("flux {f} outside [0, 1]")));
                }
                flux[i].push(f);
            }
            if flux[i].iter().sum::<f64>() > 1.0 {
                return Err(EnvError::Config(format!("outgoing flux of region {i} exceeds 1")));
            }
        }
        for i in 0..n {
            let start = cfg.initial_infected.get(i)
                + cfg.initial_quarantined.get(i)
                + cfg.initial_hospital_load * cfg.icu_capacity.get(i);
            if start > 1.0 {
                return Err(EnvError::Config(format!("initial compartments of region {i} exceed 1")));
            }
        }
        let machine = RewardMachine::parse(COVID_RM)?;
        let ev = machine.events();
        let idx = |p: &str| ev.index_of(p).expect("shipped machine alphabet");
        Ok(Self {
            v_props: [idx("v0"), idx("v05"), idx("v1")],
            l_props: [idx("l0"), idx("l05"), idx("l1")],
            end_prop: idx("e1"),
            machine,
            graph,
            flux,
            cfg,
        })
    }

    pub fn config(&self) -> &PandemicEnvConfig {
        &self.cfg
    }

    /// `0.1 H / capacity`: estimated ICU demand over ICU beds.
    pub fn saturation(&self, agent: usize, s: &RegionState) -> f64 {
        0.1 * s.hospitalized / self.cfg.icu_capacity.get(agent)
    }

    pub fn is_severe(&self, agent: usize, s: &RegionState) -> bool {
        self.saturation(agent, s) >= self.cfg.severe_ratio
    }

    pub fn distancing(&self, agent: usize, action: usize) -> f64 {
        let floor = self.cfg.rho_floor.get(agent);
        match action {
            DISTANCING | LOCKDOWN => floor,
            _ => (3.0 * floor).min(1.0),
        }
    }

    pub fn restricts_flux(action: usize) -> bool {
        action == FLUX_CONTROL || action == LOCKDOWN
    }

    /// Effective flux from region `i` to its `k`-th neighbor given both actions.
    pub fn effective_flux(&self, i: usize, k: usize, a_i: usize, a_j: usize) -> f64 {
        let base = self.flux[i][k];
        if Self::restricts_flux(a_i) || Self::restricts_flux(a_j) {
            FLUX_CUT * base
        } else {
            base
        }
    }

    /// Baseline flux between neighbors `i` and `j`, if they are neighbors.
    pub fn baseline_flux(&self, i: usize, j: usize) -> Option<f64> {
        let k = self.graph.neighbors(i).iter().position(|&x| x == j)?;
        Some(self.flux[i][k])
    }

    /// Severe and lockdown day counts of the week including day `s.day`.
    fn week_counts(&self, agent: usize, s: &RegionState, a: usize) -> (u8, u8) {
        (
            (s.severe_days + self.is_severe(agent, s) as u8).min(7),
            (s.lockdown_days + (a == LOCKDOWN) as u8).min(7),
        )
    }

    pub fn weekly_event(&self, severe_days: u8, lockdown_days: u8) -> Event {
        let pick = |l: Level| match l {
            Level::None => 0,
            Level::Some => 1,
            Level::All => 2,
        };
        Event::EMPTY
            .with(self.v_props[pick(Level::of(severe_days))])
            .with(self.l_props[pick(Level::of(lockdown_days))])
    }
}

impl GraphMdpEnv for PandemicEnv {
    type State = RegionState;

    fn graph(&self) -> &AgentGraph {
        &self.graph
    }

    fn num_actions(&self, _agent: usize) -> usize {
        NUM_ACTIONS
    }

    fn machine(&self, _agent: usize) -> &RewardMachine {
        &self.machine
    }

    fn initial_state(&self, i: usize) -> RegionState {
        let infected = self.cfg.initial_infected.get(i);
        let quarantined = self.cfg.initial_quarantined.get(i);
        let hospitalized = self.cfg.initial_hospital_load * self.cfg.icu_capacity.get(i);
        RegionState {
            susceptible: 1.0 - infected - quarantined - hospitalized,
            infected,
            quarantined,
            hospitalized,
            recovered: 0.0,
            deceased: 0.0,
            severe_days: 0,
            lockdown_days: 0,
            day: 0,
        }
    }

    fn transition(&self, view: &LocalView<'_, RegionState>) -> Result<Vec<(RegionState, f64)>, EnvError> {
        let c = &self.cfg;
        let i = view.owner();
        let s = view.own_state();
        let a = view.own_action();
        if s.day >= c.horizon {
            return Err(EnvError::Config(format!("region {i} stepped past day {}", c.horizon)));
        }
        let rho_i = self.distancing(i, a);
        let mut outgoing = 0.0;
        let mut mixing = 0.0;
        for (j, sj, aj) in view.others() {
            let k = self.graph.neighbors(i).iter().position(|&x| x == j).expect("neighbor");
            let phi = self.effective_flux(i, k, a, aj);
            outgoing += phi;
            mixing += phi * self.distancing(j, aj) * sj.infected;
        }
        mixing += (1.0 - outgoing) * rho_i * s.infected;
        let force = c.infection_rate.get(i) * rho_i * mixing;
        let new_infections = s.susceptible * (1.0 - (-force).exp());

        let from_i = [
            c.quarantine_rate * s.infected,
            c.hospitalization_rate * s.infected,
            c.recovery_rate * s.infected,
        ];
        let from_q = [
            c.quarantine_hospitalization_rate * s.quarantined,
            c.quarantine_recovery_rate * s.quarantined,
        ];
        let from_h = [c.hospital_recovery_rate * s.hospitalized, c.death_rate * s.hospitalized];

        let (severe_days, lockdown_days) = self.week_counts(i, s, a);
        let day = s.day + 1;
        let monday = day % 7 == 0;
        let next = RegionState {
            susceptible: s.susceptible - new_infections,
            infected: s.infected + new_infections - from_i.iter().sum::<f64>(),
            quarantined: s.quarantined + from_i[0] - from_q.iter().sum::<f64>(),
            hospitalized: s.hospitalized + from_i[1] + from_q[0] - from_h.iter().sum::<f64>(),
            recovered: s.recovered + from_i[2] + from_q[1] + from_h[0],
            deceased: s.deceased + from_h[1],
            severe_days: if monday { 0 } else { severe_days },
            lockdown_days: if monday { 0 } else { lockdown_days },
            day,
        };
        Ok(vec![(next, 1.0)])
    }

    /// Empty except on Mondays, where the past week's severity and lockdown
    /// levels are reported; the last day also carries the end marker.
    fn label(&self, agent: usize, s: &RegionState, a: usize, s_next: &RegionState) -> Event {
        let last = s_next.day >= self.cfg.horizon;
        if s_next.day % 7 != 0 && !last {
            return Event::EMPTY;
        }
        let (v, l) = self.week_counts(agent, s, a);
        let ev = self.weekly_event(v, l);
        if last {
            ev.with(self.end_prop)
        } else {
            ev
        }
    }

    /// Regions keep evolving in a sink; only the goal ends their episode.
    fn is_done(&self, agent: usize, u: RmState) -> bool {
        self.machine(agent).is_goal(u)
    }
}

impl Featurized for PandemicEnv {
    fn features(&self, agent: usize, s: &RegionState) -> Vec<f64> {
        vec![
            s.susceptible,
            s.infected,
            s.quarantined,
            self.saturation(agent, s),
            s.recovered,
            s.deceased,
            s.severe_days as f64,
            s.lockdown_days as f64,
            s.day as f64,
            (s.day % 7) as f64,
        ]
    }

    fn feature_bounds(&self, _agent: usize) -> Vec<(f64, f64)> {
        let h = self.cfg.horizon as f64;
        vec![
            (0.0, 1.0),
            (0.0, 0.1),
            (0.0, 0.1),
            (0.0, 1.5),
            (0.0, 1.0),
            (0.0, 0.05),
            (0.0, 7.0),
            (0.0, 7.0),
            (0.0, h),
            (0.0, 6.0),
        ]
    }
}

/// Threshold controller with hysteresis: lock down when saturation reaches
/// `high`, lift all restrictions when it falls to `low`, otherwise keep the
/// current mode.
#[derive(Debug, Clone)]
pub struct BangBang {
    pub high: f64,
    pub low: f64,
    locked: Vec<bool>,
}

impl BangBang {
    pub fn new(regions: usize) -> Self {
        Self::with_thresholds(regions, 0.5, 0.2)
    }

    pub fn with_thresholds(regions: usize, high: f64, low: f64) -> Self {
        Self {
            high,
            low,
            locked: vec![false; regions],
        }
    }

    pub fn reset(&mut self) {
        self.locked.iter_mut().for_each(|l| *l = false);
    }

    pub fn act(&mut self, env: &PandemicEnv, agent: usize, s: &RegionState) -> usize {
        let r = env.saturation(agent, s);
        if r >= self.high {
            self.locked[agent] = true;
        } else if r <= self.low {
            self.locked[agent] = false;
        }
        if self.locked[agent] {
            LOCKDOWN
        } else {
            NO_RESTRICTIONS
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_mdp::{global_step, run_episode, GlobalState};
    use crate::rng::StreamRng;
    use proptest::prelude::*;

    fn small(regions: usize) -> PandemicEnv {
        PandemicEnv::new(PandemicEnvConfig::homogeneous(Network::random(regions, 7, 1))).unwrap()
    }

    fn step(env: &PandemicEnv, state: &GlobalState<RegionState>, actions: &[usize]) -> GlobalState<RegionState> {
        let rng = StreamRng::new(0).episode(0);
        global_step(env, state, actions, &rng).unwrap().next
    }

    #[test]
    fn disease_free_state_only_advances_the_day() {
        let env = small(4);
        let mut state = env.reset();
        for s in &mut state.mdp_states {
            *s = RegionState {
                susceptible: 0.9,
                infected: 0.0,
                quarantined: 0.0,
                hospitalized: 0.0,
                recovered: 0.1,
                deceased: 0.0,
                severe_days: 0,
                lockdown_days: 0,
                day: 3,
            };
        }
        let next = step(&env, &state, &[0, 1, 2, 3]);
        for (a, b) in state.mdp_states.iter().zip(&next.mdp_states) {
            assert_eq!(a.compartments(), b.compartments());
            assert_eq!(b.day, 4);
        }
    }

    #[test]
    fn lockdown_cuts_flux_to_seventy_percent() {
        let env = small(4);
        let j = env.graph().neighbors(0)[0];
        let base = env.baseline_flux(0, j).unwrap();
        assert_eq!(env.effective_flux(0, 0, LOCKDOWN, NO_RESTRICTIONS), 0.7 * base);
        assert_eq!(env.effective_flux(0, 0, NO_RESTRICTIONS, FLUX_CONTROL), 0.7 * base);
        assert_eq!(env.effective_flux(0, 0, DISTANCING, NO_RESTRICTIONS), base);
    }

    #[test]
    fn distancing_levels() {
        let env = small(3);
        assert_eq!(env.distancing(0, DISTANCING), 0.3);
        assert_eq!(env.distancing(0, LOCKDOWN), 0.3);
        assert!((env.distancing(0, NO_RESTRICTIONS) - 0.9).abs() < 1e-12);
        assert!((env.distancing(0, FLUX_CONTROL) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn first_day_counts_as_severe() {
        let env = small(3);
        let state = env.reset();
        assert!((env.saturation(0, &state.mdp_states[0]) - 0.6).abs() < 1e-12);
        let next = step(&env, &state, &[0, 0, 0]);
        assert_eq!(next.mdp_states[0].severe_days, 1);
        assert_eq!(next.mdp_states[0].lockdown_days, 0);
    }

    #[test]
    fn weekly_events() {
        let env = small(3);
        let rm = env.machine(0);
        let ev = |n: &[&str]| rm.event(n).unwrap();
        let mut s = env.initial_state(0);
        s.day = 1;
        let mut t = s;
        t.day = 2;
        assert_eq!(env.label(0, &s, LOCKDOWN, &t), Event::EMPTY);

        // Sunday into Monday after a fully severe, fully locked week
        let mut sun = env.initial_state(0);
        sun.day = 6;
        sun.severe_days = 6;
        sun.lockdown_days = 6;
        let mut mon = sun;
        mon.day = 7;
        assert_eq!(env.label(0, &sun, LOCKDOWN, &mon), ev(&["v1", "l1"]));

        // three severe days, no lockdown
        sun.hospitalized = 0.0;
        sun.severe_days = 3;
        sun.lockdown_days = 0;
        assert_eq!(env.label(0, &sun, DISTANCING, &mon), ev(&["v05", "l0"]));

        let mut last = sun;
        last.day = 27;
        let mut end = last;
        end.day = 28;
        assert_eq!(env.label(0, &last, DISTANCING, &end), ev(&["e1", "v05", "l0"]));
    }

    #[test]
    fn counters_reset_on_mondays() {
        let env = small(3);
        let rng = StreamRng::new(0).episode(0);
        let traj = run_episode(&env, &rng, 28, |_, _| LOCKDOWN).unwrap();
        for s in &traj.states {
            for r in &s.mdp_states {
                if r.day % 7 == 0 {
                    assert_eq!((r.severe_days, r.lockdown_days), (0, 0));
                } else {
                    assert_eq!(r.lockdown_days as u16, r.day % 7);
                }
            }
        }
        assert_eq!(traj.len(), 28);
        // two fully locked-down weeks end in a sink
        let rm = env.machine(0);
        assert!((0..3).all(|i| rm.is_sink(traj.states[14].rm_states[i])));
    }

    #[test]
    fn bang_bang_hysteresis() {
        let env = small(1);
        let mut ctl = BangBang::new(1);
        let mut s = env.initial_state(0);
        let at = |s: &mut RegionState, r: f64| s.hospitalized = r * 0.002 / 0.1;
        at(&mut s, 0.6);
        assert_eq!(ctl.act(&env, 0, &s), LOCKDOWN);
        at(&mut s, 0.35);
        assert_eq!(ctl.act(&env, 0, &s), LOCKDOWN);
        at(&mut s, 0.1);
        assert_eq!(ctl.act(&env, 0, &s), NO_RESTRICTIONS);
        at(&mut s, 0.35);
        assert_eq!(ctl.act(&env, 0, &s), NO_RESTRICTIONS);
    }

    #[test]
    fn sink_regions_keep_paying() {
        let env = small(2);
        let rng = StreamRng::new(0).episode(0);
        // no restrictions: severity persists, two fully severe weeks sink
        let traj = run_episode(&env, &rng, 28, |_, _| NO_RESTRICTIONS).unwrap();
        let rm = env.machine(0);
        let sunk = traj.states.iter().position(|s| rm.is_sink(s.rm_states[0]));
        if let Some(t) = sunk {
            assert!(traj.rewards[t..].iter().all(|r| r[0] == -600.0));
        }
        assert_eq!(traj.len(), 28);
    }

    #[test]
    fn encoding_round_trips() {
        let env = small(2);
        let s = env.initial_state(1);
        assert_eq!(RegionState::decode(&s.encode()), Some(s));
        assert_eq!(RegionState::decode("1:2:3"), None);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut c = PandemicEnvConfig::default();
        c.rho_floor = PerRegion::Each(vec![0.3; 3]);
        assert!(PandemicEnv::new(c).is_err());
        let mut c = PandemicEnvConfig::default();
        c.network = Network::random(5, 0, 1);
        assert!(PandemicEnv::new(c).is_err());
        let c = PandemicEnvConfig {
            recovery_rate: 0.95,
            ..Default::default()
        };
        assert!(PandemicEnv::new(c).is_err());
        let edge = |b| FluxEdge {
            a: 0,
            b,
            flux: 0.6,
            flux_back: None,
        };
        let c = PandemicEnvConfig::homogeneous(Network::Explicit {
            regions: 3,
            edges: vec![edge(1), edge(2)],
        });
        assert!(PandemicEnv::new(c).is_err());
    }

    #[test]
    fn default_graph_is_connected() {
        let env = PandemicEnv::new(PandemicEnvConfig::default()).unwrap();
        assert_eq!(env.num_agents(), 20);
        assert_eq!(env.graph().neighborhood(0, 20).len(), 20);
    }

    fn leaf_return(env: &PandemicEnv, hub: usize, leaf: usize) -> f64 {
        let rng = StreamRng::new(0).episode(0);
        let traj = run_episode(env, &rng, 28, |_, i| if i < 4 { hub } else { leaf }).unwrap();
        (4..20).map(|i| traj.agent_return(i, 0.9)).sum::<f64>() / 16.0
    }

    #[test]
    fn default_towns_depend_on_their_hub() {
        let env = PandemicEnv::new(PandemicEnvConfig::default()).unwrap();
        let protected = leaf_return(&env, DISTANCING, NO_RESTRICTIONS);
        let exposed = leaf_return(&env, NO_RESTRICTIONS, DISTANCING);
        assert!(protected > exposed + 100.0, "{protected} vs {exposed}");
    }

    #[test]
    fn bang_bang_oscillates_on_default_network() {
        let env = PandemicEnv::new(PandemicEnvConfig::default()).unwrap();
        let mut bb = BangBang::new(20);
        let rng = StreamRng::new(0).episode(0);
        let traj = run_episode(&env, &rng, 28, |s, i| bb.act(&env, i, &s.mdp_states[i])).unwrap();
        let oscillating = (0..20).any(|i| {
            let sat: Vec<f64> = traj.states.iter().map(|s| env.saturation(i, &s.mdp_states[i])).collect();
            let fell = sat.windows(2).position(|w| w[1] < w[0]);
            fell.is_some_and(|k| sat[k..].windows(2).any(|w| w[1] > w[0]))
                && traj.actions.windows(2).any(|w| w[0][i] == LOCKDOWN && w[1][i] != LOCKDOWN)
        });
        assert!(oscillating);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn compartments_stay_nonnegative_and_conserved(
            seed in 0u64..1000,
            actions in proptest::collection::vec(0usize..4, 28 * 5),
        ) {
            let env = PandemicEnv::new(PandemicEnvConfig::homogeneous(Network::random(5, seed, 3))).unwrap();
            let rng = StreamRng::new(seed).episode(0);
            let traj = run_episode(&env, &rng, 28, |s, i| actions[s.t * 5 + i]).unwrap();
            for s in &traj.states {
                for r in &s.mdp_states {
                    let c = r.compartments();
                    prop_assert!(c.iter().all(|&x| x >= 0.0));
                    prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    prop_assert!(r.severe_days <= 7 && r.lockdown_days <= 7);
                }
            }
        }
    }
}
