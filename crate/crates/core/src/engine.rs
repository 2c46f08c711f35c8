//! Event-driven rollout loop. Time jumps from one adversary visit to the
//! next; robots move and drop smoke in between.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effects::{influence_at, modulate, EffectModel, SmokeField, DEFAULT_LAMBDA};
use crate::events::{self, EventError, EventModel, Outcome, OutcomeCaps};
use crate::features::TransitionContext;
use crate::graph::RegionGraph;
use crate::par;
use crate::rng::{derive_seed, stream_rng, SimRng};
use crate::stats::MeanSd;
use crate::trace::{Episode, SmokeDeposit, VisitEvent, TICK_SECONDS};
use crate::transition::{Predictor, TransitionError, TransitionModel};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{what} covers {got} regions but the graph has {expected}")]
    Mismatch { what: &'static str, expected: usize, got: usize },
    #[error("robot {robot} cannot move from region {from} to {to}")]
    InvalidMove { robot: usize, from: u32, to: u32 },
    #[error("expected {expected} robot moves, got {got}")]
    MoveCount { expected: usize, got: usize },
    #[error("unknown region id {0}")]
    UnknownRegion(u32),
    #[error("layout has no entrance region")]
    NoEntrance,
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Event(#[from] EventError),
}

/// Source of raw (unmodulated) visit outcomes.
pub trait OutcomeSource: Sync {
    /// Number of regions the source covers.
    fn regions(&self) -> usize;
    fn outcome(&self, region: usize, caps: OutcomeCaps, rng: &mut SimRng) -> Result<Outcome, EngineError>;
    /// Victims available in a region over a whole episode.
    fn victim_budget(&self, region: usize) -> f64;
    /// Largest victim count of a single visit.
    fn victim_cap(&self, region: usize) -> f64;
}

impl OutcomeSource for EventModel {
    fn regions(&self) -> usize {
        self.table.region.len()
    }

    fn outcome(&self, region: usize, caps: OutcomeCaps, rng: &mut SimRng) -> Result<Outcome, EngineError> {
        Ok(self.generate(region, caps, rng)?.outcome)
    }

    fn victim_budget(&self, region: usize) -> f64 {
        events::victim_budget(&self.table, region)
    }

    fn victim_cap(&self, region: usize) -> f64 {
        events::victim_cap(&self.table, region)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "region")]
pub enum StartRule {
    /// Lowest-id entrance.
    #[default]
    Entrance,
    /// Uniform over entrances.
    RandomEntrance,
    Fixed(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum Termination {
    /// Stop once the clock reaches `t_max`.
    #[default]
    TimeBudget,
    /// Exactly this many visits; dwell is capped by `t_max` only.
    VisitCount(usize),
    /// Replay this region-id sequence; only outcomes are generated.
    Sequence(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub t_max: f64,
    pub start: StartRule,
    pub robots: usize,
    /// Robot start region ids; empty places robots on the most central regions.
    pub robot_starts: Vec<u32>,
    /// Regions traversed per second.
    pub robot_speed: f64,
    pub multi_floor: bool,
    pub termination: Termination,
    /// Follow the most likely transition instead of sampling.
    pub greedy_transitions: bool,
    /// Decay constant for R when no effect model is loaded.
    pub lambda: f64,
    pub smoke_per_arrival: f64,
    /// Round dwell to ticks and counts to integers, as a logger would.
    pub quantize: bool,
    /// Keep the smoke field and robot regions on every visit.
    pub record_fields: bool,
    /// Hard stop against zero-dwell loops.
    pub max_visits: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            t_max: 300.0,
            start: StartRule::Entrance,
            robots: 2,
            robot_starts: Vec::new(),
            robot_speed: 0.5,
            multi_floor: true,
            termination: Termination::TimeBudget,
            greedy_transitions: false,
            lambda: DEFAULT_LAMBDA,
            smoke_per_arrival: 1.0,
            quantize: false,
            record_fields: false,
            max_visits: 5000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.t_max > 0.0) {
            return Err(EngineError::Config(format!("t_max must be positive (got {})", self.t_max)));
        }
        if !(self.robot_speed > 0.0) {
            return Err(EngineError::Config(format!("robot_speed must be positive (got {})", self.robot_speed)));
        }
        if !self.robot_starts.is_empty() && self.robot_starts.len() != self.robots {
            return Err(EngineError::Config(format!(
                "{} robot start regions for {} robots",
                self.robot_starts.len(),
                self.robots
            )));
        }
        Ok(())
    }
}

/// Read-only inputs shared by every rollout.
pub struct World<'a> {
    pub graph: &'a RegionGraph,
    pub transition: &'a TransitionModel,
    pub outcomes: &'a dyn OutcomeSource,
    pub effects: Option<&'a EffectModel>,
    pub config: SimConfig,
}

impl World<'_> {
    pub fn check(&self) -> Result<(), EngineError> {
        self.config.validate()?;
        let n = self.graph.len();
        if self.outcomes.regions() != n {
            return Err(EngineError::Mismatch { what: "outcome model", expected: n, got: self.outcomes.regions() });
        }
        if let Some(e) = self.effects {
            if e.regions.len() != n {
                return Err(EngineError::Mismatch { what: "effect model", expected: n, got: e.regions.len() });
            }
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.effects.map_or(self.config.lambda, |e| e.lambda)
    }

    /// Robot start regions (indices).
    pub fn robot_starts(&self) -> Result<Vec<usize>, EngineError> {
        if !self.config.robot_starts.is_empty() {
            return self
                .config
                .robot_starts
                .iter()
                .map(|&id| self.graph.index_of(id).map_err(|_| EngineError::UnknownRegion(id)))
                .collect();
        }
        Ok(central_regions(self.graph, self.config.robots))
    }
}

/// The `k` regions of highest betweenness, lowest id first on ties.
pub fn central_regions(graph: &RegionGraph, k: usize) -> Vec<usize> {
    let b = graph.betweenness();
    let mut idx: Vec<usize> = (0..graph.len()).collect();
    idx.sort_by(|&x, &y| b[y].total_cmp(&b[x]).then(graph.id_of(x).cmp(&graph.id_of(y))));
    idx.truncate(k);
    idx
}

/// Moves open to a robot at `region`: staying plus one hop along an edge,
/// on `floor` only when given.
pub fn allowed_moves(graph: &RegionGraph, region: usize, floor: Option<i32>) -> Vec<usize> {
    let mut v = vec![region];
    v.extend(
        graph
            .out_neighbors(region)
            .iter()
            .copied()
            .filter(|&j| floor.is_none_or(|f| graph.region(j).floor == f)),
    );
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Robot {
    pub region: usize,
    /// Hop in progress.
    pub target: Option<usize>,
    /// Fraction of the hop covered.
    pub progress: f64,
    /// Floor the robot is confined to in single-floor mode.
    pub floor_lock: Option<i32>,
}

impl Robot {
    pub fn idle(&self) -> bool {
        self.target.is_none()
    }
}

/// Mutable state of one rollout.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub clock: f64,
    pub adversary: TransitionContext,
    pub robots: Vec<Robot>,
    pub smoke: SmokeField,
    pub visits: usize,
    pub dwell: f64,
    pub shots: f64,
    pub victims: f64,
    pub remaining_budget: Vec<f64>,
}

impl WorldState {
    pub fn robot_regions(&self) -> Vec<usize> {
        self.robots.iter().map(|r| r.region).collect()
    }
}

/// Full-graph hop distance from a robot to the adversary (infinite when
/// unreachable).
pub fn robot_distance(graph: &RegionGraph, state: &WorldState, robot: usize) -> f64 {
    graph.hop_matrix_full().get(state.robots[robot].region, state.adversary.current)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimVisit {
    pub seq: usize,
    pub region_id: u32,
    pub dwell: f64,
    pub shots: f64,
    pub victims: f64,
    /// Robot influence at visit start.
    pub r: f64,
    /// Clock at the end of the visit.
    pub clock: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub robot_regions: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub smoke: Vec<SmokeDeposit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotMove {
    pub robot: usize,
    pub depart: f64,
    pub arrive: f64,
    pub from: u32,
    pub to: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    TimeBudget,
    VisitCount,
    SequenceEnd,
    DeadEnd,
    VisitLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub nodes: usize,
    pub time: f64,
    pub shots: f64,
    pub victims: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutLog {
    pub episode: usize,
    pub seed: u64,
    pub visits: Vec<SimVisit>,
    pub moves: Vec<RobotMove>,
    pub termination: TerminationReason,
    pub summary: Summary,
}

impl RolloutLog {
    /// `episode,seq,region,dwell_s,shots,victims,R,clock_s` rows (no header).
    pub fn csv_rows(&self, out: &mut String) {
        for v in &self.visits {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                self.episode, v.seq, v.region_id, v.dwell, v.shots, v.victims, v.r, v.clock
            ));
        }
    }

    pub fn to_episode(&self, id: &str) -> Episode {
        Episode {
            id: id.to_string(),
            outcomes_known: true,
            visits: self
                .visits
                .iter()
                .map(|v| VisitEvent {
                    episode_id: id.to_string(),
                    seq: v.seq,
                    region_id: v.region_id,
                    dwell_s: v.dwell,
                    shots: v.shots,
                    victims: v.victims,
                    robot_influence: v.r,
                    smoke: v.smoke.clone(),
                    robot_regions: v.robot_regions.clone(),
                })
                .collect(),
        }
    }
}

pub const VISIT_CSV_HEADER: &str = "episode,seq,region,dwell_s,shots,victims,R,clock_s\n";

pub fn visits_csv(logs: &[RolloutLog]) -> String {
    let mut s = String::from(VISIT_CSV_HEADER);
    for l in logs {
        l.csv_rows(&mut s);
    }
    s
}

/// Chooses robot moves whenever every robot is idle.
pub trait RobotPolicy: Sync {
    fn name(&self) -> String;
    /// One destination per robot: its current region or an allowed hop.
    fn decide(&self, graph: &RegionGraph, state: &WorldState, rng: &mut SimRng) -> Vec<usize>;
}

/// Robots never move.
pub struct StayPolicy;

impl RobotPolicy for StayPolicy {
    fn name(&self) -> String {
        "stay".into()
    }

    fn decide(&self, _: &RegionGraph, state: &WorldState, _: &mut SimRng) -> Vec<usize> {
        state.robot_regions()
    }
}

fn round_half_up(x: f64) -> f64 {
    events::render_count(x) as f64
}

/// One rollout driven step by step.
pub struct Sim<'w, 'a> {
    world: &'w World<'a>,
    predictor: Predictor<'a>,
    pub state: WorldState,
    sequence: Option<Vec<usize>>,
    trans_rng: SimRng,
    out_rng: SimRng,
    pub policy_rng: SimRng,
    log: RolloutLog,
    done: Option<TerminationReason>,
}

impl<'w, 'a> Sim<'w, 'a> {
    pub fn new(world: &'w World<'a>, episode: usize, seed: u64) -> Result<Self, EngineError> {
        world.check()?;
        let g = world.graph;
        let n = g.len();
        let predictor = world.transition.prepare(g)?;
        let mut trans_rng = stream_rng(seed, "transition", 0);
        let sequence = match &world.config.termination {
            Termination::Sequence(ids) => Some(
                ids.iter()
                    .map(|&id| g.index_of(id).map_err(|_| EngineError::UnknownRegion(id)))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            _ => None,
        };
        let start = match (&sequence, &world.config.start) {
            (Some(s), _) if !s.is_empty() => s[0],
            (_, StartRule::Fixed(id)) => g.index_of(*id).map_err(|_| EngineError::UnknownRegion(*id))?,
            (_, rule) => {
                let ents = g.entrances();
                if ents.is_empty() {
                    return Err(EngineError::NoEntrance);
                }
                if *rule == StartRule::RandomEntrance {
                    ents[trans_rng.random_range(0..ents.len())]
                } else {
                    ents[0]
                }
            }
        };
        let remaining_budget: Vec<f64> = (0..n).map(|r| world.outcomes.victim_budget(r)).collect();
        let mut adversary = TransitionContext::new(n, start);
        adversary.has_target = remaining_budget.iter().map(|&b| b > 0.0).collect();
        let mut smoke = SmokeField::new(n);
        let mut robots = Vec::new();
        let mut moves = Vec::new();
        for (k, r) in world.robot_starts()?.into_iter().enumerate() {
            let floor_lock = (!world.config.multi_floor).then(|| g.region(r).floor);
            robots.push(Robot { region: r, target: None, progress: 0.0, floor_lock });
            smoke.deposit(r, 0.0, world.config.smoke_per_arrival);
            moves.push(RobotMove { robot: k, depart: 0.0, arrive: 0.0, from: g.id_of(r), to: g.id_of(r) });
        }
        let state = WorldState {
            clock: 0.0,
            adversary,
            robots,
            smoke,
            visits: 0,
            dwell: 0.0,
            shots: 0.0,
            victims: 0.0,
            remaining_budget,
        };
        Ok(Sim {
            world,
            predictor,
            state,
            sequence,
            trans_rng,
            out_rng: stream_rng(seed, "outcome", 0),
            policy_rng: stream_rng(seed, "policy", 0),
            log: RolloutLog {
                episode,
                seed,
                visits: Vec::new(),
                moves,
                termination: TerminationReason::TimeBudget,
                summary: Summary::default(),
            },
            done: None,
        })
    }

    pub fn graph(&self) -> &RegionGraph {
        self.world.graph
    }

    pub fn is_done(&self) -> bool {
        self.done.is_some()
    }

    pub fn termination(&self) -> Option<TerminationReason> {
        self.done
    }

    /// True when robots exist and none is mid-hop.
    pub fn robots_idle(&self) -> bool {
        !self.state.robots.is_empty() && self.state.robots.iter().all(Robot::idle)
    }

    /// Commit one destination per robot (current region = stay).
    pub fn set_moves(&mut self, dests: &[usize]) -> Result<(), EngineError> {
        let g = self.world.graph;
        if dests.len() != self.state.robots.len() {
            return Err(EngineError::MoveCount { expected: self.state.robots.len(), got: dests.len() });
        }
        for (k, (&d, rob)) in dests.iter().zip(&self.state.robots).enumerate() {
            if !allowed_moves(g, rob.region, rob.floor_lock).contains(&d) {
                return Err(EngineError::InvalidMove { robot: k, from: g.id_of(rob.region), to: g.id_of(d) });
            }
        }
        for (rob, &d) in self.state.robots.iter_mut().zip(dests) {
            if rob.idle() && d != rob.region {
                rob.target = Some(d);
                rob.progress = 0.0;
            }
        }
        Ok(())
    }

    fn next_region(&mut self) -> Result<Option<usize>, EngineError> {
        let k = self.state.visits;
        if let Some(seq) = &self.sequence {
            return Ok(seq.get(k).copied());
        }
        if k == 0 {
            return Ok(Some(self.state.adversary.current));
        }
        let ctx = &self.state.adversary;
        let g = self.world.graph;
        if g.out_neighbors(ctx.current).is_empty() && !matches!(self.world.transition, TransitionModel::Scripted { .. }) {
            return Ok(None);
        }
        let next = if self.world.config.greedy_transitions {
            self.predictor.predict(ctx, &mut self.trans_rng)?
        } else {
            self.predictor.sample(ctx, &mut self.trans_rng)?
        };
        Ok(Some(next))
    }

    fn advance_robots(&mut self, t0: f64, dt: f64) {
        let g = self.world.graph;
        let speed = self.world.config.robot_speed;
        let amount = self.world.config.smoke_per_arrival;
        self.state.smoke.advance(dt);
        for (k, rob) in self.state.robots.iter_mut().enumerate() {
            let Some(to) = rob.target else { continue };
            let need = (1.0 - rob.progress) / speed;
            if need <= dt {
                let arrive = t0 + need;
                let from = rob.region;
                rob.region = to;
                rob.target = None;
                rob.progress = 0.0;
                let decay = self.state.smoke.decay_rate.map_or(1.0, |r| (-r * (dt - need)).exp());
                self.state.smoke.deposit(to, arrive, amount * decay);
                self.log.moves.push(RobotMove {
                    robot: k,
                    depart: arrive - 1.0 / speed,
                    arrive,
                    from: g.id_of(from),
                    to: g.id_of(to),
                });
            } else {
                rob.progress += speed * dt;
            }
        }
    }

    /// Run one adversary visit. Returns true once the episode has ended.
    pub fn step(&mut self) -> Result<bool, EngineError> {
        if self.done.is_some() {
            return Ok(true);
        }
        let cfg = &self.world.config;
        if self.state.visits >= cfg.max_visits {
            self.done = Some(TerminationReason::VisitLimit);
            return Ok(true);
        }
        let Some(region) = self.next_region()? else {
            self.done = Some(if self.sequence.is_some() { TerminationReason::SequenceEnd } else { TerminationReason::DeadEnd });
            return Ok(true);
        };
        if self.state.visits > 0 {
            self.state.adversary.move_to(region);
        }
        let g = self.world.graph;
        let r = if self.state.robots.is_empty() {
            0.0
        } else {
            influence_at(&self.state.smoke.intensity, g.shortest_path_matrix(), self.world.lambda(), region)
        };
        let time_cap = match cfg.termination {
            Termination::TimeBudget => (cfg.t_max - self.state.clock).max(f64::MIN_POSITIVE),
            _ => cfg.t_max,
        };
        let budget_left = self.state.remaining_budget[region].max(0.0);
        let vcap = self.world.outcomes.victim_cap(region).min(budget_left);
        let caps = OutcomeCaps { time: time_cap, victims: Some(vcap) };
        let raw = self.world.outcomes.outcome(region, caps, &mut self.out_rng)?;
        let mut out = match self.world.effects {
            Some(e) if r != 0.0 => modulate(raw, r, e, region, Some(vcap)),
            _ => raw,
        };
        out.dwell = out.dwell.clamp(0.0, time_cap);
        if cfg.quantize {
            out.dwell = (out.dwell / TICK_SECONDS).round() * TICK_SECONDS;
            out.shots = round_half_up(out.shots);
            out.victims = round_half_up(out.victims).min(vcap.floor());
        }
        out.victims = out.victims.clamp(0.0, vcap);
        self.state.remaining_budget[region] = budget_left - out.victims;
        self.state.adversary.has_target[region] = self.state.remaining_budget[region] > 1e-9;

        let (robot_regions, smoke) = if cfg.record_fields {
            (self.state.robots.iter().map(|rb| g.id_of(rb.region)).collect(), self.state.smoke.to_deposits(g))
        } else {
            (Vec::new(), Vec::new())
        };
        let t0 = self.state.clock;
        self.state.clock += out.dwell;
        self.state.adversary.stay(out.dwell);
        self.state.visits += 1;
        self.state.dwell += out.dwell;
        self.state.shots += out.shots;
        self.state.victims += out.victims;
        self.advance_robots(t0, out.dwell);
        self.log.visits.push(SimVisit {
            seq: self.state.visits - 1,
            region_id: g.id_of(region),
            dwell: out.dwell,
            shots: out.shots,
            victims: out.victims,
            r,
            clock: self.state.clock,
            robot_regions,
            smoke,
        });
        self.done = match &cfg.termination {
            Termination::TimeBudget if self.state.clock >= cfg.t_max - 1e-9 => Some(TerminationReason::TimeBudget),
            Termination::VisitCount(n) if self.state.visits >= *n => Some(TerminationReason::VisitCount),
            Termination::Sequence(s) if self.state.visits >= s.len() => Some(TerminationReason::SequenceEnd),
            _ => None,
        };
        Ok(self.done.is_some())
    }

    pub fn finish(mut self) -> RolloutLog {
        self.log.termination = self.done.unwrap_or(TerminationReason::VisitLimit);
        self.log.summary = Summary {
            nodes: self.log.visits.len(),
            time: self.log.visits.iter().map(|v| v.dwell).sum(),
            shots: self.log.visits.iter().map(|v| v.shots).sum(),
            victims: self.log.visits.iter().map(|v| v.victims).sum(),
        };
        self.log
    }
}

/// Run a full episode under `policy`.
pub fn run_episode(world: &World, policy: &dyn RobotPolicy, episode: usize, seed: u64) -> Result<RolloutLog, EngineError> {
    let mut sim = Sim::new(world, episode, seed)?;
    if sim.robots_idle() {
        let d = policy.decide(world.graph, &sim.state, &mut sim.policy_rng);
        sim.set_moves(&d)?;
    }
    while !sim.step()? {
        if sim.robots_idle() {
            let d = policy.decide(world.graph, &sim.state, &mut sim.policy_rng);
            sim.set_moves(&d)?;
        }
    }
    Ok(sim.finish())
}

/// Per-episode seed of a batch.
pub fn episode_seed(base: u64, i: usize) -> u64 {
    derive_seed(base, "rollout", i as u64)
}

/// `n` independent rollouts; episode `i` uses a stream derived from
/// `(base_seed, i)`, so results do not depend on `workers`.
pub fn batch_rollout(
    world: &World,
    policy: &dyn RobotPolicy,
    n: usize,
    base_seed: u64,
    workers: usize,
) -> Result<Vec<RolloutLog>, EngineError> {
    if n == 0 {
        return Err(EngineError::Config("batch size must be at least 1".into()));
    }
    world.check()?;
    par::map_indexed(n, workers, |i| run_episode(world, policy, i, episode_seed(base_seed, i))).into_iter().collect()
}

/// One rollout per termination rule (e.g. held-out visit counts).
pub fn batch_rollout_with(
    world: &World,
    policy: &dyn RobotPolicy,
    terminations: &[Termination],
    base_seed: u64,
    workers: usize,
) -> Result<Vec<RolloutLog>, EngineError> {
    world.check()?;
    par::map_indexed(terminations.len(), workers, |i| {
        let w = World {
            graph: world.graph,
            transition: world.transition,
            outcomes: world.outcomes,
            effects: world.effects,
            config: SimConfig { termination: terminations[i].clone(), ..world.config.clone() },
        };
        run_episode(&w, policy, i, episode_seed(base_seed, i))
    })
    .into_iter()
    .collect()
}

/// Mean ± sd of the summary columns over a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub label: String,
    pub episodes: usize,
    pub nodes: MeanSd,
    pub time: MeanSd,
    pub shots: MeanSd,
    pub victims: MeanSd,
}

impl BatchSummary {
    pub fn of(label: &str, logs: &[RolloutLog]) -> Self {
        let col = |f: fn(&Summary) -> f64| -> MeanSd { MeanSd::of(&logs.iter().map(|l| f(&l.summary)).collect::<Vec<_>>()) };
        BatchSummary {
            label: label.to_string(),
            episodes: logs.len(),
            nodes: col(|s| s.nodes as f64),
            time: col(|s| s.time),
            shots: col(|s| s.shots),
            victims: col(|s| s.victims),
        }
    }
}

pub fn batch_summary_csv(rows: &[BatchSummary]) -> String {
    let mut s = String::from("label,episodes,nodes,time,shots,victims\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.label,
            r.episodes,
            r.nodes.render(1),
            r.time.render(1),
            r.shots.render(1),
            r.victims.render(1)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{test_tables, VariantKind, Generation};
    use crate::features::Heuristic;
    use crate::graph::test_layouts::{path, region};
    use crate::graph::{EdgeSpec, LayoutDoc, RegionGroup};
    use crate::trace::Level;

    /// Path graph with region 0 as the entrance.
    fn hall(n: u32) -> RegionGraph {
        let regions = (0..n)
            .map(|i| {
                let mut r = region(i, if i == 0 { RegionGroup::Entrance } else { RegionGroup::Hallway }, 0, 10.0 * i as f64, 0.0, 20.0);
                r.is_entrance = i == 0;
                r
            })
            .collect();
        let edges = (0..n - 1).map(|i| EdgeSpec::Pair([i, i + 1])).collect();
        RegionGraph::from_doc(LayoutDoc { regions, edges, distance_mode: Default::default() }).unwrap()
    }

    fn model(n: usize, gen: Generation) -> EventModel {
        let cells: Vec<(usize, f64)> = (0..n).map(|i| (20, 5.0 + i as f64)).collect();
        let t = test_tables::table(&cells, test_tables::cell(100, 6.0, 4.0), test_tables::cell(100, 6.0, 4.0));
        EventModel::new(t, 8, VariantKind { level: Level::Region, generation: gen })
    }

    fn world<'a>(g: &'a RegionGraph, tm: &'a TransitionModel, em: &'a EventModel, cfg: SimConfig) -> World<'a> {
        World { graph: g, transition: tm, outcomes: em, effects: None, config: cfg }
    }

    #[test]
    fn deterministic_configuration_ignores_seed() {
        let g = hall(5);
        let tm = TransitionModel::Heuristic { kind: Heuristic::LA };
        let em = model(5, Generation::Means);
        let w = world(&g, &tm, &em, SimConfig { robots: 0, greedy_transitions: true, ..Default::default() });
        let a = run_episode(&w, &StayPolicy, 0, 1).unwrap();
        let b = run_episode(&w, &StayPolicy, 0, 999).unwrap();
        assert_eq!(a.visits, b.visits);
        assert!(a.visits.iter().all(|v| v.r == 0.0));
    }

    #[test]
    fn time_budget_prefix_rule() {
        let g = hall(5);
        let tm = TransitionModel::Heuristic { kind: Heuristic::RA };
        let em = model(5, Generation::Sampling);
        let w = world(&g, &tm, &em, SimConfig { robots: 0, ..Default::default() });
        for s in 0..20 {
            let log = run_episode(&w, &StayPolicy, 0, s).unwrap();
            assert_eq!(log.termination, TerminationReason::TimeBudget);
            let mut acc = 0.0;
            for (i, v) in log.visits.iter().enumerate() {
                acc += v.dwell;
                assert_eq!(acc, v.clock);
                if i + 1 < log.visits.len() {
                    assert!(acc < 300.0);
                }
            }
            assert!(acc >= 300.0 - 1e-9);
            assert_eq!(log.summary.time, acc);
        }
    }

    #[test]
    fn visit_count_mode_is_exact() {
        let g = hall(5);
        let tm = TransitionModel::Heuristic { kind: Heuristic::RA };
        let em = model(5, Generation::Sampling);
        let w = world(&g, &tm, &em, SimConfig { robots: 0, termination: Termination::VisitCount(38), ..Default::default() });
        let log = run_episode(&w, &StayPolicy, 0, 4).unwrap();
        assert_eq!(log.visits.len(), 38);
        assert_eq!(log.summary.nodes, 38);
        let seq = Termination::Sequence(vec![0, 1, 2, 1]);
        let w = world(&g, &tm, &em, SimConfig { robots: 0, termination: seq, ..Default::default() });
        let ids: Vec<u32> = run_episode(&w, &StayPolicy, 0, 4).unwrap().visits.iter().map(|v| v.region_id).collect();
        assert_eq!(ids, vec![0, 1, 2, 1]);
    }

    #[test]
    fn batches_do_not_depend_on_workers() {
        let g = hall(6);
        let tm = TransitionModel::Heuristic { kind: Heuristic::RA };
        let em = model(6, Generation::Sampling);
        let w = world(&g, &tm, &em, SimConfig { robots: 1, ..Default::default() });
        let a = batch_rollout(&w, &StayPolicy, 40, 7, 1).unwrap();
        let b = batch_rollout(&w, &StayPolicy, 40, 7, 4).unwrap();
        assert_eq!(a, b);
        let one = batch_rollout(&w, &StayPolicy, 1, 7, 1).unwrap();
        assert_eq!(one[0], run_episode(&w, &StayPolicy, 0, episode_seed(7, 0)).unwrap());
        assert!(batch_rollout(&w, &StayPolicy, 0, 7, 1).is_err());
    }

    #[test]
    fn victims_respect_budgets() {
        let g = hall(4);
        let tm = TransitionModel::Heuristic { kind: Heuristic::RA };
        let mut em = model(4, Generation::Sampling);
        for (i, c) in em.table.region.iter_mut().enumerate() {
            c.stats.victims = test_tables::moments(20, 1.0, 1.0);
            c.stats.victims.max = 2.0;
            c.stats.victim_budget = 1.0 + i as f64;
        }
        let w = world(&g, &tm, &em, SimConfig { robots: 0, ..Default::default() });
        for s in 0..30 {
            let log = run_episode(&w, &StayPolicy, 0, s).unwrap();
            let mut per = [0.0; 4];
            for v in &log.visits {
                assert!(v.victims <= 2.0);
                per[g.index_of(v.region_id).unwrap()] += v.victims;
            }
            for (i, p) in per.iter().enumerate() {
                assert!(*p <= 1.0 + i as f64 + 1e-9);
            }
        }
    }

    #[test]
    fn single_floor_robots_stay_on_their_floor() {
        let mut doc = path(4).to_doc();
        doc.regions[2].floor = 1;
        doc.regions[3].floor = 1;
        doc.regions[0].is_entrance = true;
        doc.regions[0].group = RegionGroup::Entrance;
        let g = RegionGraph::from_doc(doc).unwrap();
        let tm = TransitionModel::Heuristic { kind: Heuristic::RA };
        let em = model(4, Generation::Sampling);
        let cfg = SimConfig { robots: 1, robot_starts: vec![1], multi_floor: false, ..Default::default() };
        let w = world(&g, &tm, &em, cfg.clone());
        let mut sim = Sim::new(&w, 0, 0).unwrap();
        assert!(matches!(sim.set_moves(&[2]), Err(EngineError::InvalidMove { .. })));
        sim.set_moves(&[0]).unwrap();
        let w2 = world(&g, &tm, &em, SimConfig { multi_floor: true, ..cfg });
        let mut sim2 = Sim::new(&w2, 0, 0).unwrap();
        sim2.set_moves(&[2]).unwrap();
    }

    #[test]
    fn robots_move_at_speed_and_drop_smoke() {
        let g = hall(4);
        let tm = TransitionModel::stationary(&g);
        let em = model(4, Generation::Means);
        let cfg = SimConfig { robots: 1, robot_starts: vec![3], termination: Termination::VisitCount(3), ..Default::default() };
        let w = world(&g, &tm, &em, cfg);
        let mut sim = Sim::new(&w, 0, 0).unwrap();
        assert_eq!(sim.state.smoke.intensity, vec![0.0, 0.0, 0.0, 1.0]);
        sim.set_moves(&[2]).unwrap();
        sim.step().unwrap();
        // the 10 s dwell covers the 2 s hop
        assert_eq!(sim.state.robots[0].region, 2);
        assert_eq!(sim.state.smoke.intensity, vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(robot_distance(&g, &sim.state, 0), 2.0);
        let log = sim.finish();
        assert_eq!(log.moves.last().unwrap().arrive, 2.0);
    }

    #[test]
    fn robot_distance_on_a_path() {
        let g = hall(3);
        let tm = TransitionModel::stationary(&g);
        let em = model(3, Generation::Means);
        let cfg = SimConfig { robots: 1, robot_starts: vec![2], ..Default::default() };
        let w = world(&g, &tm, &em, cfg);
        let sim = Sim::new(&w, 0, 0).unwrap();
        assert_eq!(robot_distance(&g, &sim.state, 0), 2.0);
    }

    #[test]
    fn mismatched_models_are_rejected() {
        let g = hall(4);
        let tm = TransitionModel::Heuristic { kind: Heuristic::RA };
        let em = model(3, Generation::Means);
        let w = world(&g, &tm, &em, SimConfig::default());
        assert!(matches!(Sim::new(&w, 0, 0), Err(EngineError::Mismatch { .. })));
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let g = hall(3);
        let tm = TransitionModel::Heuristic { kind: Heuristic::RA };
        let em = model(3, Generation::Means);
        let w = world(&g, &tm, &em, SimConfig { robots: 0, termination: Termination::VisitCount(2), ..Default::default() });
        let logs = batch_rollout(&w, &StayPolicy, 2, 0, 1).unwrap();
        let csv = visits_csv(&logs);
        assert!(csv.starts_with(VISIT_CSV_HEADER));
        assert_eq!(csv.lines().count(), 5);
        let s = batch_summary_csv(&[BatchSummary::of("x", &logs)]);
        assert!(s.contains("x,2,2.0 ± 0.0"));
    }
}
