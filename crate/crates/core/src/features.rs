//! Transition context, candidate features, and the heuristic movement rules.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::RegionGraph;
use crate::trace::Episode;

/// Time constant of the recency feature (seconds).
pub const RECENCY_TAU: f64 = 60.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("candidate region {candidate} is not adjacent to {current}")]
    NotAdjacent { current: u32, candidate: u32 },
    #[error("region {0} has no neighbors")]
    NoNeighbors(u32),
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("duplicate feature {0}")]
    Duplicate(String),
    #[error("unknown heuristic {0:?}")]
    UnknownHeuristic(String),
}

/// Movement state of the adversary.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionContext {
    pub current: usize,
    pub previous: Option<usize>,
    /// Clock at which each region was last left.
    pub last_visit: Vec<Option<f64>>,
    pub elapsed: f64,
    pub has_target: Vec<bool>,
    /// Transitions made so far.
    pub steps: usize,
}

impl TransitionContext {
    pub fn new(n: usize, start: usize) -> Self {
        TransitionContext {
            current: start,
            previous: None,
            last_visit: vec![None; n],
            elapsed: 0.0,
            has_target: vec![true; n],
            steps: 0,
        }
    }

    /// Spend `dwell` seconds in the current region.
    pub fn stay(&mut self, dwell: f64) {
        self.elapsed += dwell;
    }

    /// Leave the current region for `next`.
    pub fn move_to(&mut self, next: usize) {
        self.last_visit[self.current] = Some(self.elapsed);
        self.previous = Some(self.current);
        self.current = next;
        self.steps += 1;
    }
}

/// One observed transition with the context it was made from.
#[derive(Debug, Clone)]
pub struct Transition {
    pub ctx: TransitionContext,
    pub target: usize,
}

/// Replay an episode into (context, next region) pairs. `budgets` gives the
/// per-region victim budget used to track target presence; `None` marks every
/// region as holding targets.
pub fn replay(episode: &Episode, graph: &RegionGraph, budgets: Option<&[f64]>) -> Vec<Transition> {
    let idx: Vec<usize> = episode
        .visits
        .iter()
        .filter_map(|v| graph.index_of(v.region_id).ok())
        .collect();
    if idx.len() < 2 || idx.len() != episode.visits.len() {
        return Vec::new();
    }
    let mut remaining: Option<Vec<f64>> = budgets.map(<[f64]>::to_vec);
    let mut ctx = TransitionContext::new(graph.len(), idx[0]);
    if let Some(rem) = &remaining {
        ctx.has_target = rem.iter().map(|&b| b > 0.0).collect();
    }
    let mut out = Vec::with_capacity(idx.len() - 1);
    for (k, v) in episode.visits.iter().enumerate().take(idx.len() - 1) {
        ctx.stay(v.dwell_s);
        if let Some(rem) = &mut remaining {
            rem[idx[k]] -= v.victims;
            ctx.has_target[idx[k]] = rem[idx[k]] > 1e-9;
        }
        out.push(Transition { ctx: ctx.clone(), target: idx[k + 1] });
        ctx.move_to(idx[k + 1]);
    }
    out
}

/// Candidate features. Static ones depend only on the candidate region and
/// feed the message-passing layers; dynamic ones enter at the scoring head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    DirectionSimilarity,
    Recency,
    HasTarget,
    Betweenness,
    IsEntrance,
    IsOutside,
    Degree,
    Closeness,
    AreaNorm,
    SameFloor,
}

impl Feature {
    /// Registry order.
    pub const ALL: [Feature; 10] = [
        Feature::DirectionSimilarity,
        Feature::Recency,
        Feature::HasTarget,
        Feature::Betweenness,
        Feature::IsEntrance,
        Feature::IsOutside,
        Feature::Degree,
        Feature::Closeness,
        Feature::AreaNorm,
        Feature::SameFloor,
    ];

    /// The six features used by the default scorer.
    pub const SELECTED: [Feature; 6] = [
        Feature::DirectionSimilarity,
        Feature::Recency,
        Feature::HasTarget,
        Feature::Betweenness,
        Feature::IsEntrance,
        Feature::IsOutside,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::DirectionSimilarity => "direction_similarity",
            Feature::Recency => "recency",
            Feature::HasTarget => "has_target",
            Feature::Betweenness => "betweenness",
            Feature::IsEntrance => "is_entrance",
            Feature::IsOutside => "is_outside",
            Feature::Degree => "degree",
            Feature::Closeness => "closeness",
            Feature::AreaNorm => "area_norm",
            Feature::SameFloor => "same_floor",
        }
    }

    pub fn is_static(self) -> bool {
        matches!(
            self,
            Feature::Betweenness
                | Feature::IsEntrance
                | Feature::IsOutside
                | Feature::Degree
                | Feature::Closeness
                | Feature::AreaNorm
        )
    }

    /// Static value of a region (0 for dynamic features).
    pub fn static_value(self, graph: &RegionGraph, r: usize) -> f64 {
        let reg = graph.region(r);
        match self {
            Feature::Betweenness => graph.betweenness()[r],
            Feature::IsEntrance => f64::from(u8::from(reg.is_entrance)),
            Feature::IsOutside => f64::from(u8::from(reg.is_outside)),
            Feature::Degree => {
                let m = graph.max_out_degree();
                if m == 0 {
                    0.0
                } else {
                    graph.out_neighbors(r).len() as f64 / m as f64
                }
            }
            Feature::Closeness => graph.closeness()[r],
            Feature::AreaNorm => reg.area / graph.max_area(),
            _ => 0.0,
        }
    }

    /// Value for `candidate` in context `ctx` (no adjacency check).
    pub fn value(self, ctx: &TransitionContext, candidate: usize, graph: &RegionGraph) -> f64 {
        match self {
            Feature::DirectionSimilarity => direction_similarity(ctx, candidate, graph),
            Feature::Recency => match ctx.last_visit[candidate] {
                None => 0.0,
                Some(t) => (-(ctx.elapsed - t).max(0.0) / RECENCY_TAU).exp(),
            },
            Feature::HasTarget => f64::from(u8::from(ctx.has_target[candidate])),
            Feature::SameFloor => {
                f64::from(u8::from(graph.region(candidate).floor == graph.region(ctx.current).floor))
            }
            f => f.static_value(graph, candidate),
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| FeatureError::UnknownFeature(s.to_string()))
    }
}

/// Ordered set of named features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRegistry {
    features: Vec<Feature>,
}

impl FeatureRegistry {
    pub fn new(features: Vec<Feature>) -> Result<Self, FeatureError> {
        for (i, f) in features.iter().enumerate() {
            if features[..i].contains(f) {
                return Err(FeatureError::Duplicate(f.name().into()));
            }
        }
        Ok(FeatureRegistry { features })
    }

    pub fn full() -> Self {
        FeatureRegistry { features: Feature::ALL.to_vec() }
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.features.iter().map(|f| f.name()).collect()
    }
}

/// Cosine between the previous move and the move to `candidate`; 0 when
/// there is no previous region or either vector has zero length.
pub fn direction_similarity(ctx: &TransitionContext, candidate: usize, graph: &RegionGraph) -> f64 {
    let Some(prev) = ctx.previous else { return 0.0 };
    let c = |i: usize| graph.region(i).centroid;
    let (p, cur, cand) = (c(prev), c(ctx.current), c(candidate));
    let a = [cur[0] - p[0], cur[1] - p[1]];
    let b = [cand[0] - cur[0], cand[1] - cur[1]];
    let (na, nb) = (a[0].hypot(a[1]), b[0].hypot(b[1]));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    ((a[0] * b[0] + a[1] * b[1]) / (na * nb)).clamp(-1.0, 1.0)
}

/// One scalar per registered feature for an adjacent candidate.
pub fn compute_features(
    ctx: &TransitionContext,
    candidate: usize,
    graph: &RegionGraph,
    registry: &FeatureRegistry,
) -> Result<Vec<f64>, FeatureError> {
    if !graph.has_edge(ctx.current, candidate) {
        return Err(FeatureError::NotAdjacent {
            current: graph.id_of(ctx.current),
            candidate: graph.id_of(candidate),
        });
    }
    Ok(registry.features().iter().map(|f| f.value(ctx, candidate, graph)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heuristic {
    /// Uniform over neighbors.
    RA,
    /// Toward the nearest region holding targets.
    CT,
    /// Keep the current heading.
    CV,
    /// Toward the nearest entrance.
    CE,
    /// Away from the nearest entrance.
    FE,
    /// Toward the largest area.
    LA,
}

impl Heuristic {
    pub const ALL: [Heuristic; 6] = [Heuristic::RA, Heuristic::CT, Heuristic::CV, Heuristic::CE, Heuristic::FE, Heuristic::LA];

    pub fn name(self) -> &'static str {
        match self {
            Heuristic::RA => "RA",
            Heuristic::CT => "CT",
            Heuristic::CV => "CV",
            Heuristic::CE => "CE",
            Heuristic::FE => "FE",
            Heuristic::LA => "LA",
        }
    }
}

impl FromStr for Heuristic {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Heuristic::ALL
            .into_iter()
            .find(|h| h.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| FeatureError::UnknownHeuristic(s.to_string()))
    }
}

/// First index of the minimum (ties go to the earliest, i.e. lowest id).
fn argmin_by(cands: &[usize], key: impl Fn(usize) -> f64) -> usize {
    let mut best = cands[0];
    let mut best_key = key(best);
    for &c in &cands[1..] {
        let k = key(c);
        if k < best_key {
            best = c;
            best_key = k;
        }
    }
    best
}

fn nearest(graph: &RegionGraph, from: usize, targets: &[usize]) -> f64 {
    let d = graph.hop_matrix_full();
    targets.iter().map(|&t| d.get(from, t)).fold(f64::INFINITY, f64::min)
}

/// Deterministic choice of a heuristic, or `None` when it defers to a
/// uniform draw (RA itself, or a fallback).
pub fn heuristic_choice(kind: Heuristic, ctx: &TransitionContext, graph: &RegionGraph) -> Option<usize> {
    let cands = graph.out_neighbors(ctx.current);
    if cands.is_empty() {
        return None;
    }
    match kind {
        Heuristic::RA => None,
        Heuristic::CT => {
            let targets: Vec<usize> = (0..graph.len()).filter(|&r| ctx.has_target[r]).collect();
            let dist: Vec<f64> = cands.iter().map(|&c| nearest(graph, c, &targets)).collect();
            if dist.iter().all(|d| d.is_infinite()) {
                return None;
            }
            Some(argmin_by(cands, |c| nearest(graph, c, &targets)))
        }
        Heuristic::CV => {
            ctx.previous?;
            Some(argmin_by(cands, |c| -direction_similarity(ctx, c, graph)))
        }
        Heuristic::CE | Heuristic::FE => {
            let ents = graph.entrances();
            if cands.iter().all(|&c| nearest(graph, c, &ents).is_infinite()) {
                return None;
            }
            let sign = if kind == Heuristic::CE { 1.0 } else { -1.0 };
            // unreachable candidates are never preferred by either rule
            Some(argmin_by(cands, |c| {
                let d = nearest(graph, c, &ents);
                if d.is_finite() {
                    sign * d
                } else {
                    f64::INFINITY
                }
            }))
        }
        Heuristic::LA => Some(argmin_by(cands, |c| -graph.region(c).area)),
    }
}

/// Next region under a heuristic; uniform draws use `rng`.
pub fn heuristic_next<R: Rng + ?Sized>(
    kind: Heuristic,
    ctx: &TransitionContext,
    graph: &RegionGraph,
    rng: &mut R,
) -> Result<usize, FeatureError> {
    let cands = graph.out_neighbors(ctx.current);
    if cands.is_empty() {
        return Err(FeatureError::NoNeighbors(graph.id_of(ctx.current)));
    }
    Ok(heuristic_choice(kind, ctx, graph).unwrap_or_else(|| cands[rng.random_range(0..cands.len())]))
}
