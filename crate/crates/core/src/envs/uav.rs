//! Multi-UAV package delivery on a small grid.
//!
//! Each UAV flies to a warehouse it has access to, picks up a package and
//! delivers it to the destination paired with that warehouse. Two UAVs are
//! neighbors when they share a warehouse. A pick-up succeeds with a fixed
//! probability unless a neighbor picks up at the same warehouse in the same
//! step, in which case both fail.

use serde::{Deserialize, Serialize};

use crate::graph_mdp::{AgentGraph, EnvError, Featurized, GraphMdpEnv, LocalState, LocalView};
use crate::reward_machine::{Event, RewardMachine};

pub const SINGLE_ROUTE_RM: &str = include_str!("../../machines/uav_single.rm");
pub const DUAL_ROUTE_RM: &str = include_str!("../../machines/uav_dual.rm");

pub const NORTH: usize = 0;
pub const SOUTH: usize = 1;
pub const EAST: usize = 2;
pub const WEST: usize = 3;
pub const WAIT: usize = 4;
pub const PICKUP: usize = 5;
pub const NUM_ACTIONS: usize = 6;

/// Battery is tracked in hundredths of a percent.
pub const FULL_BATTERY: u16 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: u8,
    pub col: u8,
}

impl Cell {
    pub const fn new(row: u8, col: u8) -> Self {
        Self { row, col }
    }

    pub fn manhattan(self, other: Cell) -> usize {
        (self.row.abs_diff(other.row) + self.col.abs_diff(other.col)) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UavEnvConfig {
    pub rows: u8,
    pub cols: u8,
    pub warehouses: Vec<Cell>,
    /// `destinations[k]` receives packages from `warehouses[k]`.
    pub destinations: Vec<Cell>,
    pub starts: Vec<Cell>,
    /// Warehouse indices each UAV may use, in route order.
    pub access: Vec<Vec<usize>>,
    pub pickup_success: f64,
    /// Battery percent per move.
    pub move_cost: f64,
    /// Battery percent per wait or pick-up.
    pub wait_cost: f64,
    /// Below this battery percent the UAV has run out.
    pub low_battery: f64,
}

impl Default for UavEnvConfig {
    /// Six UAVs on a 4x5 grid, warehouses A and B on the top corners and
    /// their destinations C and D below them.
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 5,
            warehouses: vec![Cell::new(0, 0), Cell::new(0, 4)],
            destinations: vec![Cell::new(3, 0), Cell::new(3, 4)],
            starts: vec![
                Cell::new(1, 0),
                Cell::new(2, 1),
                Cell::new(2, 2),
                Cell::new(3, 2),
                Cell::new(1, 4),
                Cell::new(2, 3),
            ],
            access: vec![vec![0], vec![0], vec![0, 1], vec![0, 1], vec![1], vec![1]],
            pickup_success: 0.9,
            move_cost: 2.0,
            wait_cost: 0.01,
            low_battery: 7.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UavState {
    pub pos: Cell,
    /// Hundredths of a percent.
    pub battery: u16,
    pub has_package: bool,
}

impl UavState {
    pub fn battery_percent(&self) -> f64 {
        self.battery as f64 / 100.0
    }
}

impl LocalState for UavState {
    fn encode(&self) -> String {
        format!(
            "{}-{}-{}-{}",
            self.pos.row, self.pos.col, self.battery, self.has_package as u8
        )
    }

    fn decode(text: &str) -> Option<Self> {
        let f: Vec<&str> = text.split('-').collect();
        if f.len() != 4 {
            return None;
        }
        let has_package = match f[3] {
            "0" => false,
            "1" => true,
            _ => return None,
        };
        Some(Self {
            pos: Cell::new(f[0].parse().ok()?, f[1].parse().ok()?),
            battery: f[2].parse().ok().filter(|&b| b <= FULL_BATTERY)?,
            has_package,
        })
    }
}

/// Proposition indices within an agent's machine alphabet.
#[derive(Debug, Clone)]
struct Props {
    arrive: Vec<usize>,
    picked: Vec<usize>,
    delivered: Vec<usize>,
    low: usize,
}

#[derive(Debug, Clone)]
pub struct UavEnv {
    cfg: UavEnvConfig,
    graph: AgentGraph,
    machines: Vec<RewardMachine>,
    props: Vec<Props>,
    move_cost: u16,
    wait_cost: u16,
    low_battery: u16,
}

fn hundredths(percent: f64) -> u16 {
    (percent * 100.0).round() as u16
}

impl UavEnv {
    pub fn new(cfg: UavEnvConfig) -> Result<Self, EnvError> {
        let bad = |m: String| Err(EnvError::Config(m));
        let n = cfg.starts.len();
        let inside = |c: &Cell| c.row < cfg.rows && c.col < cfg.cols;
        if cfg.warehouses.len() != cfg.destinations.len() {
            return bad("each warehouse needs one destination".into());
        }
        if cfg.access.len() != n {
            return bad(format!("{} access sets for {} UAVs", cfg.access.len(), n));
        }
        if !cfg.warehouses.iter().chain(&cfg.destinations).chain(&cfg.starts).all(inside) {
            return bad("cell outside the grid".into());
        }
        if cfg.starts.iter().any(|s| cfg.warehouses.contains(s)) {
            return bad("a UAV may not start on a warehouse".into());
        }
        if !(0.0..=1.0).contains(&cfg.pickup_success) {
            return bad("pickup_success outside [0, 1]".into());
        }
        for (c, v) in [("move_cost", cfg.move_cost), ("wait_cost", cfg.wait_cost), ("low_battery", cfg.low_battery)] {
            if !(0.0..=100.0).contains(&v) {
                return bad(format!("{c} outside [0, 100]"));
            }
        }
        let mut edges = Vec::new();
        for i in 0..n {
            let acc = &cfg.access[i];
            if acc.is_empty() || acc.len() > 2 || acc.iter().any(|&w| w >= cfg.warehouses.len()) {
                return bad(format!("UAV {i}: access set must name one or two warehouses"));
            }
            for j in i + 1..n {
                if acc.iter().any(|w| cfg.access[j].contains(w)) {
                    edges.push((i, j));
                }
            }
        }
        let single = RewardMachine::parse(SINGLE_ROUTE_RM)?;
        let dual = RewardMachine::parse(DUAL_ROUTE_RM)?;
        let mut machines = Vec::with_capacity(n);
        let mut props = Vec::with_capacity(n);
        for acc in &cfg.access {
            let rm = if acc.len() == 1 { single.clone() } else { dual.clone() };
            let ev = rm.events();
            let idx = |name: &str| ev.index_of(name).expect("shipped machine alphabet");
            props.push(if acc.len() == 1 {
                Props {
                    arrive: vec![idx("A")],
                    picked: vec![idx("P")],
                    delivered: vec![idx("G")],
                    low: idx("L"),
                }
            } else {
                Props {
                    arrive: vec![idx("A1"), idx("A2")],
                    picked: vec![idx("P1"), idx("P2")],
                    delivered: vec![idx("G1"), idx("G2")],
                    low: idx("L"),
                }
            });
            machines.push(rm);
        }
        Ok(Self {
            graph: AgentGraph::new(n, &edges)?,
            machines,
            props,
            move_cost: hundredths(cfg.move_cost),
            wait_cost: hundredths(cfg.wait_cost),
            low_battery: hundredths(cfg.low_battery),
            cfg,
        })
    }

    pub fn config(&self) -> &UavEnvConfig {
        &self.cfg
    }

    /// Route index of warehouse cell `pos` for `agent`, if accessible.
    fn route_at(&self, agent: usize, pos: Cell) -> Option<usize> {
        self.cfg.access[agent]
            .iter()
            .position(|&w| self.cfg.warehouses[w] == pos)
    }

    fn moved(&self, pos: Cell, action: usize) -> Cell {
        let mut p = pos;
        match action {
            NORTH if p.row > 0 => p.row -= 1,
            SOUTH if p.row + 1 < self.cfg.rows => p.row += 1,
            EAST if p.col + 1 < self.cfg.cols => p.col += 1,
            WEST if p.col > 0 => p.col -= 1,
            _ => {}
        }
        p
    }
}

impl GraphMdpEnv for UavEnv {
    type State = UavState;

    fn graph(&self) -> &AgentGraph {
        &self.graph
    }

    fn num_actions(&self, _agent: usize) -> usize {
        NUM_ACTIONS
    }

    /// Moves are always available (blocked moves stay in place); wait and
    /// pick-up only on warehouse cells.
    fn legal_actions(&self, _agent: usize, state: &UavState) -> Vec<bool> {
        let at_warehouse = self.cfg.warehouses.contains(&state.pos);
        vec![true, true, true, true, at_warehouse, at_warehouse]
    }

    fn machine(&self, agent: usize) -> &RewardMachine {
        &self.machines[agent]
    }

    fn initial_state(&self, agent: usize) -> UavState {
        UavState {
            pos: self.cfg.starts[agent],
            battery: FULL_BATTERY,
            has_package: false,
        }
    }

    fn transition(&self, view: &LocalView<'_, UavState>) -> Result<Vec<(UavState, f64)>, EnvError> {
        let i = view.owner();
        let s = *view.own_state();
        let a = view.own_action();
        let stationary = a == WAIT || a == PICKUP;
        if stationary && !self.cfg.warehouses.contains(&s.pos) {
            return Err(EnvError::IllegalAction {
                agent: i,
                action: a,
                state: s.encode(),
            });
        }
        let cost = if stationary { self.wait_cost } else { self.move_cost };
        let next = UavState {
            pos: if stationary { s.pos } else { self.moved(s.pos, a) },
            battery: s.battery.saturating_sub(cost),
            has_package: s.has_package,
        };
        if a == PICKUP && !s.has_package && self.route_at(i, s.pos).is_some() {
            let contested = view
                .others()
                .any(|(_, sj, aj)| aj == PICKUP && sj.pos == s.pos);
            let p = if contested { 0.0 } else { self.cfg.pickup_success };
            let got = UavState {
                has_package: true,
                ..next
            };
            return Ok(vec![(next, 1.0 - p), (got, p)]);
        }
        Ok(vec![(next, 1.0)])
    }

    /// One proposition per step, by priority: low battery, pick-up,
    /// delivery, warehouse arrival.
    fn label(&self, agent: usize, s: &UavState, _a: usize, s_next: &UavState) -> Event {
        let props = &self.props[agent];
        if s_next.battery < self.low_battery {
            return Event::EMPTY.with(props.low);
        }
        if !s.has_package && s_next.has_package {
            if let Some(k) = self.route_at(agent, s.pos) {
                return Event::EMPTY.with(props.picked[k]);
            }
        }
        if s_next.has_package {
            for (k, &w) in self.cfg.access[agent].iter().enumerate() {
                if s_next.pos == self.cfg.destinations[w] {
                    return Event::EMPTY.with(props.delivered[k]);
                }
            }
        }
        if s.pos != s_next.pos {
            if let Some(k) = self.route_at(agent, s_next.pos) {
                return Event::EMPTY.with(props.arrive[k]);
            }
        }
        Event::EMPTY
    }
}

impl Featurized for UavEnv {
    fn features(&self, _agent: usize, s: &UavState) -> Vec<f64> {
        vec![
            s.pos.row as f64,
            s.pos.col as f64,
            s.battery_percent(),
            s.has_package as u8 as f64,
        ]
    }

    fn feature_bounds(&self, _agent: usize) -> Vec<(f64, f64)> {
        vec![
            (0.0, (self.cfg.rows - 1) as f64),
            (0.0, (self.cfg.cols - 1) as f64),
            (0.0, 100.0),
            (0.0, 1.0),
        ]
    }
}

/// Best single-agent plan for one UAV: fly straight to a warehouse, retry
/// pick-up until it succeeds, fly straight to the destination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePlan {
    pub agent: usize,
    pub warehouse: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavOptimum {
    pub plans: Vec<RoutePlan>,
    /// Mean of the per-agent plan values; an upper bound on any joint
    /// policy's expected global discounted return.
    pub global: f64,
}

/// Expected discounted return of the plan through warehouse `w` for `agent`,
/// counting only rewards earned within `horizon` steps. Rewards are read from
/// the agent's machine.
pub fn plan_value(env: &UavEnv, agent: usize, route: usize, gamma: f64, horizon: usize) -> f64 {
    let cfg = env.config();
    let w = cfg.access[agent][route];
    let to_warehouse = cfg.starts[agent].manhattan(cfg.warehouses[w]);
    let to_destination = cfg.warehouses[w].manhattan(cfg.destinations[w]);
    let battery_needed = (to_warehouse + to_destination) as u32 * env.move_cost as u32;
    // low battery before delivery makes the plan worthless beyond this sketch
    assert!(
        FULL_BATTERY as u32 - battery_needed.min(FULL_BATTERY as u32) >= env.low_battery as u32,
        "plan exceeds battery"
    );
    let rm = env.machine(agent);
    let props = &env.props[agent];
    let u0 = rm.initial();
    let (u1, r_arrive) = rm.step(u0, Event::EMPTY.with(props.arrive[route])).unwrap();
    let (u2, r_pick) = rm.step(u1, Event::EMPTY.with(props.picked[route])).unwrap();
    let (_, r_deliver) = rm.step(u2, Event::EMPTY.with(props.delivered[route])).unwrap();

    // the step index at which each reward is paid
    let within = |t: usize| t < horizon;
    let disc = |t: usize| gamma.powi(t as i32);
    let arrive_t = to_warehouse - 1;
    let mut value = 0.0;
    if within(arrive_t) {
        value += r_arrive * disc(arrive_t);
    }
    let q = cfg.pickup_success;
    let mut attempt_mass = q;
    for k in 1.. {
        let pick_t = arrive_t + k;
        if !within(pick_t) || attempt_mass < 1e-300 {
            break;
        }
        value += attempt_mass * r_pick * disc(pick_t);
        let deliver_t = pick_t + to_destination;
        if within(deliver_t) {
            value += attempt_mass * r_deliver * disc(deliver_t);
        }
        attempt_mass *= 1.0 - q;
    }
    value
}

/// Per-agent best plans and their mean.
pub fn closed_form_optimum(env: &UavEnv, gamma: f64, horizon: usize) -> UavOptimum {
    let plans: Vec<RoutePlan> = (0..env.num_agents())
        .map(|i| {
            (0..env.config().access[i].len())
                .map(|r| RoutePlan {
                    agent: i,
                    warehouse: env.config().access[i][r],
                    value: plan_value(env, i, r, gamma, horizon),
                })
                .fold(None::<RoutePlan>, |best, p| match best {
                    Some(b) if b.value >= p.value => Some(b),
                    _ => Some(p),
                })
                .expect("nonempty access set")
        })
        .collect();
    let global = plans.iter().map(|p| p.value).sum::<f64>() / plans.len() as f64;
    UavOptimum { plans, global }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_mdp::{global_step, run_episode, GlobalState};
    use crate::rng::StreamRng;

    fn env() -> UavEnv {
        UavEnv::new(UavEnvConfig::default()).unwrap()
    }

    fn view_one<'a>(agents: &'a [usize], states: Vec<&'a UavState>, actions: Vec<usize>, me: usize) -> LocalView<'a, UavState> {
        LocalView {
            agents,
            me,
            states,
            actions,
        }
    }

    #[test]
    fn neighbors_share_a_warehouse() {
        let e = env();
        let g = e.graph();
        assert_eq!(g.neighbors(0), &[1, 2, 3]);
        assert_eq!(g.neighbors(2), &[0, 1, 3, 4, 5]);
        assert_eq!(g.neighbors(5), &[2, 3, 4]);
    }

    #[test]
    fn blocked_move_stays_and_pays() {
        let e = env();
        let s = UavState {
            pos: Cell::new(1, 4),
            battery: FULL_BATTERY,
            has_package: false,
        };
        let agents = [4];
        let out = e.transition(&view_one(&agents, vec![&s], vec![EAST], 0)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0.pos, s.pos);
        assert_eq!(out[0].0.battery, FULL_BATTERY - 200);
    }

    #[test]
    fn waiting_costs_a_hundredth() {
        let e = env();
        let s = UavState {
            pos: Cell::new(0, 0),
            battery: FULL_BATTERY,
            has_package: false,
        };
        let agents = [0];
        let out = e.transition(&view_one(&agents, vec![&s], vec![WAIT], 0)).unwrap();
        assert_eq!(out[0].0.battery_percent(), 99.99);
    }

    #[test]
    fn simultaneous_pickups_both_fail() {
        let e = env();
        let at_a = UavState {
            pos: Cell::new(0, 0),
            battery: 9000,
            has_package: false,
        };
        let state = GlobalState {
            mdp_states: vec![at_a, at_a, e.initial_state(2), e.initial_state(3), e.initial_state(4), e.initial_state(5)],
            rm_states: vec![1, 1, 0, 0, 0, 0],
            t: 3,
        };
        for seed in 0..50 {
            let rng = StreamRng::new(seed).episode(0);
            let out = global_step(&e, &state, &[PICKUP, PICKUP, 0, 0, 0, 0], &rng).unwrap();
            assert!(!out.next.mdp_states[0].has_package);
            assert!(!out.next.mdp_states[1].has_package);
        }
        // alone, success has probability 0.9
        let agents = [0, 1];
        let out = e
            .transition(&view_one(&agents, vec![&at_a, &at_a], vec![PICKUP, WAIT], 0))
            .unwrap();
        assert!(out.iter().any(|(s, p)| s.has_package && (*p - 0.9).abs() < 1e-12));
    }

    #[test]
    fn labels_follow_priority() {
        let e = env();
        let rm = e.machine(0);
        let ev = |names: &[&str]| rm.event(names).unwrap();
        let at = |r, c, b, p| UavState {
            pos: Cell::new(r, c),
            battery: b,
            has_package: p,
        };
        // crossing below 7.5%
        assert_eq!(e.label(0, &at(1, 0, 900, false), NORTH, &at(0, 0, 700, false)), ev(&["L"]));
        assert_eq!(e.label(0, &at(0, 0, 9000, false), PICKUP, &at(0, 0, 8999, true)), ev(&["P"]));
        assert_eq!(e.label(0, &at(2, 0, 9000, true), SOUTH, &at(3, 0, 8800, true)), ev(&["G"]));
        assert_eq!(e.label(0, &at(1, 0, 9000, false), NORTH, &at(0, 0, 8800, false)), ev(&["A"]));
        assert_eq!(e.label(0, &at(2, 2, 9000, false), NORTH, &at(1, 2, 8800, false)), Event::EMPTY);
        // a destination without a package is an ordinary cell
        assert_eq!(e.label(0, &at(2, 0, 9000, false), SOUTH, &at(3, 0, 8800, false)), Event::EMPTY);
    }

    #[test]
    fn dual_route_labels_name_the_warehouse() {
        let e = env();
        let rm = e.machine(2);
        let at = |r, c, p| UavState {
            pos: Cell::new(r, c),
            battery: 9000,
            has_package: p,
        };
        assert_eq!(e.label(2, &at(1, 4, false), NORTH, &at(0, 4, false)), rm.event(&["A2"]).unwrap());
        assert_eq!(e.label(2, &at(0, 0, false), PICKUP, &at(0, 0, true)), rm.event(&["P1"]).unwrap());
        assert_eq!(e.label(2, &at(2, 4, true), SOUTH, &at(3, 4, true)), rm.event(&["G2"]).unwrap());
    }

    #[test]
    fn inaccessible_warehouse_never_yields_a_package() {
        let e = env();
        let s = UavState {
            pos: Cell::new(0, 4),
            battery: 9000,
            has_package: false,
        };
        let agents = [0];
        let out = e.transition(&view_one(&agents, vec![&s], vec![PICKUP], 0)).unwrap();
        assert_eq!(out.len(), 1);
        assert!(!out[0].0.has_package);
    }

    #[test]
    fn stationary_actions_off_warehouse_are_illegal() {
        let e = env();
        let s = e.initial_state(0);
        assert_eq!(e.legal_actions(0, &s), vec![true, true, true, true, false, false]);
        let state = e.reset();
        let rng = StreamRng::new(0).episode(0);
        assert!(global_step(&e, &state, &[WAIT, 0, 0, 0, 0, 0], &rng).is_err());
    }

    #[test]
    fn state_encoding_round_trips() {
        let s = UavState {
            pos: Cell::new(3, 2),
            battery: 4321,
            has_package: true,
        };
        assert_eq!(UavState::decode(&s.encode()), Some(s));
        assert_eq!(UavState::decode("1-2-99999-0"), None);
        assert_eq!(UavState::decode("1-2-3"), None);
    }

    #[test]
    fn scripted_plan_matches_closed_form_when_pickups_succeed() {
        // UAV 1 (index 0): north to A, pick up, south three times to C
        let e = env();
        let gamma = 0.9;
        let mut hits = 0;
        let mut total = 0.0;
        let runs = 2000;
        for seed in 0..runs {
            let rng = StreamRng::new(seed).episode(0);
            let traj = run_episode(&e, &rng, 20, |s, i| {
                let st = &s.mdp_states[i];
                if i != 0 {
                    // everyone else stays out of the way
                    return if e.legal_actions(i, st)[WAIT] { WAIT } else { SOUTH };
                }
                match (st.has_package, st.pos == Cell::new(0, 0)) {
                    (true, _) => SOUTH,
                    (false, true) => PICKUP,
                    (false, false) => NORTH,
                }
            })
            .unwrap();
            total += traj.agent_return(0, gamma);
            hits += traj.reached_goal(&e, 0) as usize;
        }
        // with retries the plan always completes in 20 steps at these odds
        assert!(hits as f64 / runs as f64 > 0.99);
        let mean = total / runs as f64;
        let exact = plan_value(&e, 0, 0, gamma, 20);
        assert!((mean - exact).abs() < 0.5, "{mean} vs {exact}");
    }

    #[test]
    fn closed_form_single_attempt_arithmetic() {
        // certain pick-up: rewards at steps d1 - 1, d1, d1 + d2
        let mut cfg = UavEnvConfig::default();
        cfg.pickup_success = 1.0;
        let e = UavEnv::new(cfg).unwrap();
        let g: f64 = 0.9;
        // UAV 2 (index 1): 3 moves to A, 3 moves to C
        let expect = 5.0 * g.powi(2) + 5.0 * g.powi(3) + 20.0 * g.powi(6);
        assert!((plan_value(&e, 1, 0, g, 20) - expect).abs() < 1e-12);
        // horizon cutting off the delivery
        let cut = 5.0 * g.powi(2) + 5.0 * g.powi(3);
        assert!((plan_value(&e, 1, 0, g, 6) - cut).abs() < 1e-12);
    }

    #[test]
    fn optimum_picks_the_better_route() {
        let e = env();
        let opt = closed_form_optimum(&e, 0.9, 20);
        assert_eq!(opt.plans.len(), 6);
        for p in &opt.plans {
            let acc = &e.config().access[p.agent];
            for r in 0..acc.len() {
                assert!(p.value >= plan_value(&e, p.agent, r, 0.9, 20) - 1e-12);
            }
        }
        assert!(opt.global > 0.0);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = UavEnvConfig::default();
        cfg.starts[0] = Cell::new(0, 0);
        assert!(UavEnv::new(cfg).is_err());
        let mut cfg = UavEnvConfig::default();
        cfg.access[1] = vec![];
        assert!(UavEnv::new(cfg).is_err());
        let mut cfg = UavEnvConfig::default();
        cfg.destinations.pop();
        assert!(UavEnv::new(cfg).is_err());
    }
}
