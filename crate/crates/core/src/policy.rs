//! Robot strategies, the action-slot encoding shared with the learned
//! policy, and a small tabular value-iteration solver.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effects::{impact_rank, EffectModel};
use crate::engine::{allowed_moves, RobotPolicy, WorldState};
use crate::graph::RegionGraph;
use crate::rng::SimRng;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("no valid action in mask")]
    NoValidAction,
    #[error("value and mask lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("impact strategies need a fitted effect model")]
    MissingEffects,
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
}

/// Per-robot action slots: slot 0 stays, slots `1..` are the allowed hops
/// in ascending region-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    /// Slots per robot (`max_out_degree + 1`).
    pub width: usize,
    /// Destination of each slot per robot; `None` for masked slots.
    pub slots: Vec<Vec<Option<usize>>>,
}

impl ActionSet {
    pub fn width_for(graph: &RegionGraph) -> usize {
        graph.max_out_degree() + 1
    }

    pub fn new(graph: &RegionGraph, state: &WorldState) -> Self {
        let width = Self::width_for(graph);
        let slots = state
            .robots
            .iter()
            .map(|r| {
                let mut moves = allowed_moves(graph, r.region, r.floor_lock);
                moves[1..].sort_by_key(|&j| graph.id_of(j));
                let mut s: Vec<Option<usize>> = moves.into_iter().map(Some).collect();
                s.resize(width, None);
                s
            })
            .collect();
        ActionSet { width, slots }
    }

    pub fn mask(&self, robot: usize) -> Vec<bool> {
        self.slots[robot].iter().map(Option::is_some).collect()
    }

    /// Mask over joint actions `a1 * width + a2` (two robots).
    pub fn joint_mask(&self) -> Vec<bool> {
        let (m1, m2) = (self.mask(0), self.mask(1));
        let mut out = Vec::with_capacity(self.width * self.width);
        for a in &m1 {
            for b in &m2 {
                out.push(*a && *b);
            }
        }
        out
    }

    pub fn split(&self, joint: usize) -> (usize, usize) {
        (joint / self.width, joint % self.width)
    }

    /// Destinations of a joint action; masked slots fall back to staying.
    pub fn destinations(&self, joint: usize, state: &WorldState) -> Vec<usize> {
        let (a, b) = self.split(joint);
        vec![
            self.slots[0][a].unwrap_or(state.robots[0].region),
            self.slots[1][b].unwrap_or(state.robots[1].region),
        ]
    }
}

fn capped(d: f64, diameter: f64) -> f64 {
    if d.is_finite() {
        d.min(diameter)
    } else {
        diameter
    }
}

/// For each robot and slot, the hop distance from the slot's destination to
/// the adversary divided by the diameter; masked slots read 1.0.
pub fn obs_vector(graph: &RegionGraph, state: &WorldState, actions: &ActionSet) -> Vec<f64> {
    let d = graph.hop_matrix_full();
    let diam = d.diameter().max(1.0);
    let adv = state.adversary.current;
    actions
        .slots
        .iter()
        .flat_map(|slots| slots.iter().map(move |s| s.map_or(1.0, |dest| capped(d.get(dest, adv), diam) / diam)))
        .collect()
}

/// Index of the largest valid entry; lowest index on ties.
pub fn masked_argmax(q: &[f64], mask: &[bool]) -> Result<usize, PolicyError> {
    if q.len() != mask.len() {
        return Err(PolicyError::LengthMismatch(q.len(), mask.len()));
    }
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in q.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|b| v > q[b]) {
            best = Some(i);
        }
    }
    best.ok_or(PolicyError::NoValidAction)
}

/// `-alpha * (d1 + d2)` with unreachable distances capped at the diameter.
pub fn reward(graph: &RegionGraph, state: &WorldState, alpha: f64) -> f64 {
    let d = graph.hop_matrix_full();
    let diam = d.diameter();
    let total: f64 = state
        .robots
        .iter()
        .map(|r| capped(d.get(r.region, state.adversary.current), diam))
        .sum();
    -alpha * total
}

/// Reward scale that maps the worst per-robot distance to 1.
pub fn default_alpha(graph: &RegionGraph) -> f64 {
    let diam = graph.hop_matrix_full().diameter();
    if diam > 0.0 {
        1.0 / diam
    } else {
        log::warn!("graph diameter is zero; reward scale set to 0");
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    NoRobots,
    Stay,
    LowImpact,
    HighImpact,
    Pursue,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::NoRobots, Strategy::Stay, Strategy::LowImpact, Strategy::HighImpact, Strategy::Pursue];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::NoRobots => "no-robots",
            Strategy::Stay => "stay",
            Strategy::LowImpact => "low-impact",
            Strategy::HighImpact => "high-impact",
            Strategy::Pursue => "pursue",
        }
    }

    /// Row label of the strategy table.
    pub fn label(self) -> &'static str {
        match self {
            Strategy::NoRobots => "Not present",
            Strategy::Stay => "Stay in initial position",
            Strategy::LowImpact => "Move to low-impact region",
            Strategy::HighImpact => "Move to high-impact region",
            Strategy::Pursue => "Move to shooter region",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| PolicyError::UnknownStrategy(s.to_string()))
    }
}

/// Closed-form robot policies.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicPolicy {
    pub strategy: Strategy,
    /// Impact ranking (region ids, best first) for the impact strategies.
    ranking: Vec<u32>,
}

impl HeuristicPolicy {
    pub fn new(strategy: Strategy, effects: Option<&EffectModel>) -> Result<Self, PolicyError> {
        let ranking = match strategy {
            Strategy::HighImpact => impact_rank(effects.ok_or(PolicyError::MissingEffects)?, false),
            Strategy::LowImpact => {
                let mut r = impact_rank(effects.ok_or(PolicyError::MissingEffects)?, false);
                r.reverse();
                r
            }
            _ => Vec::new(),
        };
        Ok(HeuristicPolicy { strategy, ranking })
    }

    /// Goal region of each robot: the k-th best ranked region it can reach
    /// (restricted to its floor when locked), skipping goals already taken.
    pub fn goals(&self, graph: &RegionGraph, state: &WorldState) -> Vec<usize> {
        let mut taken: Vec<usize> = Vec::new();
        let mut out = Vec::new();
        for r in &state.robots {
            let dist = graph.bfs_from(r.region, |j| r.floor_lock.is_none_or(|f| graph.region(j).floor == f));
            let goal = self
                .ranking
                .iter()
                .filter_map(|&id| graph.index_of(id).ok())
                .find(|&j| dist[j].is_finite() && !taken.contains(&j))
                .unwrap_or(r.region);
            taken.push(goal);
            out.push(goal);
        }
        out
    }
}

/// The allowed move minimising `dist`; staying wins ties, then lowest id.
fn step_toward(graph: &RegionGraph, region: usize, floor: Option<i32>, dist: impl Fn(usize) -> f64) -> usize {
    let mut moves = allowed_moves(graph, region, floor);
    moves[1..].sort_by_key(|&j| graph.id_of(j));
    let mut best = moves[0];
    for &m in &moves[1..] {
        if dist(m) < dist(best) {
            best = m;
        }
    }
    best
}

impl RobotPolicy for HeuristicPolicy {
    fn name(&self) -> String {
        self.strategy.name().into()
    }

    fn decide(&self, graph: &RegionGraph, state: &WorldState, _: &mut SimRng) -> Vec<usize> {
        match self.strategy {
            Strategy::NoRobots | Strategy::Stay => state.robot_regions(),
            Strategy::Pursue => {
                let d = graph.hop_matrix_full();
                let adv = state.adversary.current;
                state
                    .robots
                    .iter()
                    .map(|r| step_toward(graph, r.region, r.floor_lock, |m| d.get(m, adv)))
                    .collect()
            }
            Strategy::HighImpact | Strategy::LowImpact => {
                let goals = self.goals(graph, state);
                state
                    .robots
                    .iter()
                    .zip(goals)
                    .map(|(r, goal)| {
                        let allow = |j: usize| r.floor_lock.is_none_or(|f| graph.region(j).floor == f);
                        step_toward(graph, r.region, r.floor_lock, |m| graph.bfs_from(m, allow)[goal])
                    })
                    .collect()
            }
        }
    }
}

/// Finite MDP with deterministic or stochastic transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    /// `transitions[s][a]` = list of (probability, next state, reward).
    pub transitions: Vec<Vec<Vec<(f64, usize, f64)>>>,
    pub gamma: f64,
}

impl TabularMdp {
    /// Optimal values and greedy policy (lowest action index on ties).
    pub fn value_iteration(&self, tol: f64, max_iter: usize) -> (Vec<f64>, Vec<usize>) {
        let n = self.transitions.len();
        let mut v = vec![0.0; n];
        let q = |v: &[f64], s: usize, a: usize| -> f64 {
            self.transitions[s][a].iter().map(|&(p, s2, r)| p * (r + self.gamma * v[s2])).sum()
        };
        for _ in 0..max_iter {
            let mut delta: f64 = 0.0;
            let next: Vec<f64> = (0..n)
                .map(|s| (0..self.transitions[s].len()).map(|a| q(&v, s, a)).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            for (a, b) in v.iter().zip(&next) {
                delta = delta.max((a - b).abs());
            }
            v = next;
            if delta < tol {
                break;
            }
        }
        let policy = (0..n)
            .map(|s| {
                let qs: Vec<f64> = (0..self.transitions[s].len()).map(|a| q(&v, s, a)).collect();
                masked_argmax(&qs, &vec![true; qs.len()]).unwrap_or(0)
            })
            .collect();
        (v, policy)
    }

    pub fn scaled(&self, c: f64) -> Self {
        TabularMdp {
            transitions: self
                .transitions
                .iter()
                .map(|acts| acts.iter().map(|outs| outs.iter().map(|&(p, s, r)| (p, s, r * c)).collect()).collect())
                .collect(),
            gamma: self.gamma,
        }
    }
}
