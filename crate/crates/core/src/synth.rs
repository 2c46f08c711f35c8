//! Synthetic worlds with planted parameters: a two-floor school layout, a
//! softmax movement policy, per-region outcome distributions and effect
//! slopes. Corpora are produced by running the engine itself.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effects::{EffectModel, RegionCoeffs, SmokeField, DEFAULT_LAMBDA, DEFAULT_TAU, FORMAT_VERSION};
use crate::engine::{
    allowed_moves, batch_rollout, EngineError, OutcomeSource, RobotPolicy, SimConfig, StartRule, World, WorldState,
};
use crate::events::{Outcome, OutcomeCaps};
use crate::features::Feature;
use crate::graph::{DistanceMode, EdgeSpec, LayoutDoc, Region, RegionGraph, RegionGroup};
use crate::rng::{derive_seed, stream_rng, SimRng};
use crate::trace::{Condition, Corpus, Episode, Provenance, VisitEvent, TICK_SECONDS};
use crate::transition::TransitionModel;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid planted parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Outcome distributions of one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRegion {
    pub region_id: u32,
    /// Gamma dwell time with this mean and shape.
    pub dwell_mean: f64,
    pub dwell_shape: f64,
    pub shot_trials: u64,
    pub shot_p: f64,
    pub victim_trials: u64,
    pub victim_p: f64,
    /// Victims available over a whole episode.
    pub victim_budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedOutcomes {
    pub regions: Vec<PlantedRegion>,
}

impl PlantedOutcomes {
    /// Same near-constant dwell everywhere, no shots or victims.
    pub fn uniform(graph: &RegionGraph, dwell_mean: f64) -> Self {
        PlantedOutcomes {
            regions: graph
                .regions()
                .iter()
                .map(|r| PlantedRegion {
                    region_id: r.id,
                    dwell_mean,
                    dwell_shape: 400.0,
                    shot_trials: 0,
                    shot_p: 0.0,
                    victim_trials: 0,
                    victim_p: 0.0,
                    victim_budget: 0.0,
                })
                .collect(),
        }
    }

    pub fn validate(&self, graph: &RegionGraph) -> Result<(), SynthError> {
        if self.regions.len() != graph.len() {
            return Err(SynthError::Invalid(format!("{} outcome entries for {} regions", self.regions.len(), graph.len())));
        }
        for (i, p) in self.regions.iter().enumerate() {
            if p.region_id != graph.id_of(i) {
                return Err(SynthError::Invalid(format!("outcome entry {i} is for region {}", p.region_id)));
            }
            if !(p.dwell_mean > 0.0 && p.dwell_shape > 0.0) {
                return Err(SynthError::Invalid(format!("region {}: dwell mean and shape must be positive", p.region_id)));
            }
            if !(0.0..=1.0).contains(&p.shot_p) || !(0.0..=1.0).contains(&p.victim_p) {
                return Err(SynthError::Invalid(format!("region {}: probabilities must lie in [0, 1]", p.region_id)));
            }
            if p.victim_budget < 0.0 {
                return Err(SynthError::Invalid(format!("region {}: negative victim budget", p.region_id)));
            }
        }
        Ok(())
    }
}

fn binomial(n: u64, p: f64, rng: &mut SimRng) -> f64 {
    if n == 0 || p == 0.0 {
        return 0.0;
    }
    Binomial::new(n, p).expect("validated").sample(rng) as f64
}

impl OutcomeSource for PlantedOutcomes {
    fn regions(&self) -> usize {
        self.regions.len()
    }

    fn outcome(&self, region: usize, caps: OutcomeCaps, rng: &mut SimRng) -> Result<Outcome, EngineError> {
        let p = &self.regions[region];
        let dwell = Gamma::new(p.dwell_shape, p.dwell_mean / p.dwell_shape)
            .map_err(|e| EngineError::Config(format!("planted dwell for region {}: {e}", p.region_id)))?
            .sample(rng);
        let shots = binomial(p.shot_trials, p.shot_p, rng);
        let victims = binomial(p.victim_trials, p.victim_p, rng);
        Ok(Outcome {
            dwell: dwell.max(TICK_SECONDS).min(caps.time),
            shots,
            victims: caps.victims.map_or(victims, |c| victims.min(c.floor())),
        })
    }

    fn victim_budget(&self, region: usize) -> f64 {
        self.regions[region].victim_budget
    }

    fn victim_cap(&self, region: usize) -> f64 {
        self.regions[region].victim_trials as f64
    }
}

/// Everything needed to generate a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedWorld {
    pub transition: TransitionModel,
    pub outcomes: PlantedOutcomes,
    /// Slopes applied when robots are present.
    pub effects: Option<EffectModel>,
    pub config: SimConfig,
}

impl PlantedWorld {
    pub fn validate(&self, graph: &RegionGraph) -> Result<(), SynthError> {
        self.outcomes.validate(graph)?;
        if let TransitionModel::Softmax { features, weights } = &self.transition {
            if features.len() != weights.len() || weights.iter().any(|w| !w.is_finite()) {
                return Err(SynthError::Invalid("softmax weights must be finite, one per feature".into()));
            }
        }
        if let Some(e) = &self.effects {
            if e.regions.len() != graph.len() {
                return Err(SynthError::Invalid("effect model does not cover the layout".into()));
            }
        }
        self.config.validate()?;
        Ok(())
    }

    /// Engine view of this world; `robots` selects the robot-present setup.
    pub fn world<'a>(&'a self, graph: &'a RegionGraph, robots: bool) -> World<'a> {
        let mut config = self.config.clone();
        if !robots {
            config.robots = 0;
            config.robot_starts.clear();
        }
        World {
            graph,
            transition: &self.transition,
            outcomes: &self.outcomes,
            effects: if robots { self.effects.as_ref() } else { None },
            config,
        }
    }
}

fn reg(id: u32, name: &str, group: RegionGroup, floor: i32, centroid: [f64; 2], area: f64) -> Region {
    Region {
        id,
        name: name.to_string(),
        group,
        floor,
        centroid,
        area,
        is_entrance: group == RegionGroup::Entrance,
        is_outside: group == RegionGroup::Outdoor,
    }
}

/// Two-floor school: courtyard, two entrances, lobby, halls, common rooms,
/// classrooms and two stairwells linking the floors.
pub fn school_layout() -> LayoutDoc {
    use RegionGroup::*;
    let regions = vec![
        reg(0, "courtyard", Outdoor, 0, [0.0, -30.0], 400.0),
        reg(1, "main_entrance", Entrance, 0, [0.0, -10.0], 15.0),
        reg(2, "lobby", Common, 0, [0.0, 0.0], 120.0),
        reg(3, "hall_west", Hallway, 0, [-25.0, 0.0], 80.0),
        reg(4, "hall_east", Hallway, 0, [25.0, 0.0], 80.0),
        reg(5, "cafeteria", Common, 0, [0.0, 20.0], 200.0),
        reg(6, "gym", Common, 0, [50.0, 15.0], 300.0),
        reg(7, "room_101", Classroom, 0, [-20.0, 12.0], 60.0),
        reg(8, "room_102", Classroom, 0, [-35.0, 12.0], 60.0),
        reg(9, "room_103", Classroom, 0, [30.0, -12.0], 60.0),
        reg(10, "stair_west", Stairwell, 0, [-45.0, 0.0], 20.0),
        reg(11, "side_entrance", Entrance, 0, [45.0, -10.0], 15.0),
        reg(12, "stair_east", Stairwell, 0, [45.0, 5.0], 20.0),
        reg(13, "hall_west_2", Hallway, 1, [-25.0, 0.0], 80.0),
        reg(14, "hall_east_2", Hallway, 1, [25.0, 0.0], 80.0),
        reg(15, "library", Common, 1, [0.0, 10.0], 150.0),
        reg(16, "room_201", Classroom, 1, [-20.0, 12.0], 60.0),
        reg(17, "room_202", Classroom, 1, [-35.0, -12.0], 60.0),
        reg(18, "room_203", Classroom, 1, [20.0, 12.0], 60.0),
        reg(19, "room_204", Classroom, 1, [35.0, -12.0], 60.0),
    ];
    let pairs: [[u32; 2]; 23] = [
        [0, 1], [0, 11], [1, 2], [2, 3], [2, 4], [2, 5], [3, 7], [3, 8], [3, 10], [4, 9], [4, 6], [4, 11],
        [4, 12], [5, 6], [10, 13], [12, 14], [13, 14], [13, 15], [13, 16], [13, 17], [14, 18], [14, 19], [14, 15],
    ];
    LayoutDoc { regions, edges: pairs.iter().map(|&p| EdgeSpec::Pair(p)).collect(), distance_mode: DistanceMode::Hops }
}

pub fn school_graph() -> RegionGraph {
    RegionGraph::from_doc(school_layout()).expect("built-in layout is valid")
}

/// Undirected corridor of `n` hallway regions; region 0 is the entrance.
pub fn path_graph(n: u32) -> RegionGraph {
    let regions = (0..n)
        .map(|i| {
            let group = if i == 0 { RegionGroup::Entrance } else { RegionGroup::Hallway };
            reg(i, &format!("seg{i}"), group, 0, [i as f64 * 10.0, 0.0], 20.0)
        })
        .collect();
    let edges = (1..n).map(|i| EdgeSpec::Pair([i - 1, i])).collect();
    RegionGraph::from_doc(LayoutDoc { regions, edges, distance_mode: DistanceMode::Hops }).expect("path layout is valid")
}

/// Default planted movement weights, in `Feature::SELECTED` order.
/// Direction similarity carries the largest weight.
pub const PLANTED_WEIGHTS: [f64; 6] = [2.5, -1.5, 1.0, 1.5, -1.0, -2.5];

pub fn planted_softmax() -> TransitionModel {
    TransitionModel::Softmax { features: Feature::SELECTED.to_vec(), weights: PLANTED_WEIGHTS.to_vec() }
}

fn school_outcomes(graph: &RegionGraph) -> PlantedOutcomes {
    let class_budgets = [10.0, 12.0, 8.0, 14.0, 11.0, 9.0, 13.0];
    let mut ci = 0;
    let regions = graph
        .regions()
        .iter()
        .map(|r| {
            let (dwell_mean, dwell_shape, shot_trials, shot_p, victim_trials, victim_p, budget) = match r.group {
                RegionGroup::Classroom => {
                    let b = class_budgets[ci % class_budgets.len()];
                    ci += 1;
                    (30.0, 3.0, 12, 0.5, 4, 0.5, b)
                }
                RegionGroup::Common => {
                    let b = match r.name.as_str() {
                        "lobby" => 6.0,
                        "cafeteria" => 14.0,
                        "gym" => 10.0,
                        _ => 12.0,
                    };
                    (25.0, 2.5, 12, 0.4, 4, 0.4, b)
                }
                RegionGroup::Hallway => (8.0, 4.0, 6, 0.3, 2, 0.3, 3.0),
                RegionGroup::Stairwell => (6.0, 4.0, 3, 0.2, 0, 0.0, 0.0),
                RegionGroup::Entrance => (5.0, 4.0, 3, 0.2, 0, 0.0, 0.0),
                RegionGroup::Outdoor => (10.0, 2.0, 4, 0.2, 0, 0.0, 0.0),
            };
            PlantedRegion {
                region_id: r.id,
                dwell_mean,
                dwell_shape,
                shot_trials,
                shot_p,
                victim_trials,
                victim_p,
                victim_budget: budget,
            }
        })
        .collect();
    PlantedOutcomes { regions }
}

/// Negative shot and victim slopes, strongest in classrooms.
fn school_effects(graph: &RegionGraph, outcomes: &PlantedOutcomes) -> EffectModel {
    let regions = graph
        .regions()
        .iter()
        .zip(&outcomes.regions)
        .map(|(r, p)| {
            let k = match r.group {
                RegionGroup::Classroom => [0.0, -0.8, -0.35],
                RegionGroup::Common => [0.0, -0.8, -0.25],
                RegionGroup::Hallway => [0.0, -0.3, -0.1],
                _ => [0.0, -0.3, 0.0],
            };
            RegionCoeffs {
                region_id: r.id,
                n: 0,
                k,
                k_raw: k,
                suppressed: [false; 3],
                mean_dwell: p.dwell_mean,
                victim_cap: p.victim_trials as f64,
            }
        })
        .collect();
    EffectModel { format_version: FORMAT_VERSION, lambda: DEFAULT_LAMBDA, tau: DEFAULT_TAU, n_min: 0, regions }
}

/// The default synthetic world on the school layout.
pub fn school_world(graph: &RegionGraph) -> PlantedWorld {
    let outcomes = school_outcomes(graph);
    let effects = school_effects(graph, &outcomes);
    PlantedWorld {
        transition: planted_softmax(),
        outcomes,
        effects: Some(effects),
        config: SimConfig {
            start: StartRule::RandomEntrance,
            robot_starts: vec![2, 4],
            ..SimConfig::default()
        },
    }
}

/// Stationary adversary at the entrance of a corridor.
pub fn corridor_world(graph: &RegionGraph, t_max: f64) -> PlantedWorld {
    PlantedWorld {
        transition: TransitionModel::stationary(graph),
        outcomes: PlantedOutcomes::uniform(graph, 4.0),
        effects: None,
        config: SimConfig { t_max, ..SimConfig::default() },
    }
}

/// Robots that hop to a random neighbour half of the time.
pub struct WanderPolicy;

impl RobotPolicy for WanderPolicy {
    fn name(&self) -> String {
        "wander".into()
    }

    fn decide(&self, graph: &RegionGraph, state: &WorldState, rng: &mut SimRng) -> Vec<usize> {
        state
            .robots
            .iter()
            .map(|r| {
                let moves = allowed_moves(graph, r.region, r.floor_lock);
                if moves.len() > 1 && rng.random::<f64>() < 0.5 {
                    moves[rng.random_range(1..moves.len())]
                } else {
                    r.region
                }
            })
            .collect()
    }
}

/// Run the engine to produce a corpus, with outcomes quantized the way a
/// 2 Hz logger would see them. Robot-present corpora use wandering robots
/// and record the smoke field on every visit.
pub fn synth_corpus(
    graph: &RegionGraph,
    planted: &PlantedWorld,
    seed: u64,
    episodes: usize,
    condition: Condition,
) -> Result<Corpus, SynthError> {
    planted.validate(graph)?;
    if episodes == 0 {
        return Err(SynthError::Invalid("episode count must be positive".into()));
    }
    let robots = condition == Condition::RobotPresent;
    let mut world = planted.world(graph, robots);
    world.config.record_fields = robots;
    world.config.quantize = true;
    let logs = batch_rollout(&world, &WanderPolicy, episodes, derive_seed(seed, "corpus", 0), 0)?;
    let mut corpus = Corpus::new(Provenance::Synthetic, condition);
    corpus.episodes = logs.iter().map(|l| l.to_episode(&format!("syn{:05}", l.episode))).collect();
    Ok(corpus)
}

/// Baseline and robot-present visit sets for slope and decay recovery.
/// Every region gets `per_region` visits in each condition; episode `e`
/// holds the `e`-th visit of every region. Outcomes are normal around
/// fixed region means with unit noise; robot-present visits add
/// `k * R` to all three outcomes, where `R` comes from one to three random
/// smoke deposits decayed with `lambda`.
pub fn planted_effect_corpora(
    graph: &RegionGraph,
    k: f64,
    lambda: f64,
    per_region: usize,
    seed: u64,
) -> Result<(Corpus, Corpus), SynthError> {
    if !(lambda > 0.0) || per_region == 0 {
        return Err(SynthError::Invalid("lambda and per_region must be positive".into()));
    }
    let n = graph.len();
    let d = graph.shortest_path_matrix();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let means = |i: usize| [30.0 + i as f64, 15.0 + 0.5 * i as f64, 8.0 + 0.2 * i as f64];
    let mut rng = stream_rng(seed, "planted-effects", 0);
    let mut base = Corpus::new(Provenance::Synthetic, Condition::Baseline);
    let mut robot = Corpus::new(Provenance::Synthetic, Condition::RobotPresent);
    for e in 0..per_region {
        let mut bv = Vec::with_capacity(n);
        let mut rv = Vec::with_capacity(n);
        for i in 0..n {
            let m = means(i);
            let id = graph.id_of(i);
            let draw = |rng: &mut SimRng, shift: f64| -> [f64; 3] { m.map(|x| x + shift + noise.sample(rng)) };
            let [dwell_s, shots, victims] = draw(&mut rng, 0.0);
            bv.push(VisitEvent {
                episode_id: format!("b{e:04}"),
                seq: i,
                region_id: id,
                dwell_s,
                shots,
                victims,
                robot_influence: 0.0,
                smoke: Vec::new(),
                robot_regions: Vec::new(),
            });
            let mut field = SmokeField::new(n);
            for _ in 0..rng.random_range(1..=3) {
                let j = rng.random_range(0..n);
                field.deposit(j, 0.0, rng.random_range(0.5..4.0));
            }
            let r: f64 = (0..n)
                .filter(|&j| d.get(i, j).is_finite())
                .map(|j| field.intensity[j] * (-lambda * d.get(i, j)).exp())
                .sum();
            let [dwell_s, shots, victims] = draw(&mut rng, k * r);
            rv.push(VisitEvent {
                episode_id: format!("r{e:04}"),
                seq: i,
                region_id: id,
                dwell_s,
                shots,
                victims,
                robot_influence: r,
                smoke: field.to_deposits(graph),
                robot_regions: Vec::new(),
            });
        }
        base.episodes.push(Episode { id: format!("b{e:04}"), outcomes_known: true, visits: bv });
        robot.episodes.push(Episode { id: format!("r{e:04}"), outcomes_known: true, visits: rv });
    }
    Ok((base, robot))
}
