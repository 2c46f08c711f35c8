//! Next-region prediction: heuristic, learned (GraphSAGE scorer), linear
//! softmax, and scripted movement models, plus training, cross-validated
//! accuracy evaluation and greedy forward feature selection.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{heuristic_choice, replay, Feature, FeatureError, FeatureRegistry, Heuristic, TransitionContext};
use crate::graph::RegionGraph;
use crate::par;
use crate::rng::stream_rng;
use crate::sage::{self, EpochLog, HeadCache, Sample, ScorerConfig, ScorerWeights, SageError};
use crate::stats::{self, MeanCi, TestResult};
use crate::trace::{fold_assignment, pool_moments, Corpus, SplitError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TransitionError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Sage(#[from] SageError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("episode {episode}: transition {from} -> {to} is not an edge")]
    NotAdjacent { episode: String, from: u32, to: u32 },
    #[error("corpus has no usable transitions")]
    EmptyCorpus,
    #[error("asked for {k} features but the registry holds {available}")]
    TooManyFeatures { k: usize, available: usize },
    #[error("scripted model has no successor for region {0}")]
    NoSuccessor(u32),
    #[error("softmax model has {features} features but {weights} weights")]
    WeightMismatch { features: usize, weights: usize },
}

/// A movement model for the adversary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum TransitionModel {
    Heuristic { kind: Heuristic },
    Gnn { weights: ScorerWeights },
    /// Linear-logit softmax over candidate features.
    Softmax { features: Vec<Feature>, weights: Vec<f64> },
    /// Fixed successor per region id (may map a region to itself).
    Scripted { next: BTreeMap<u32, u32> },
}

impl TransitionModel {
    pub fn name(&self) -> String {
        match self {
            TransitionModel::Heuristic { kind } => kind.name().to_string(),
            TransitionModel::Gnn { .. } => "GNN".into(),
            TransitionModel::Softmax { .. } => "softmax".into(),
            TransitionModel::Scripted { .. } => "scripted".into(),
        }
    }

    /// A model that never leaves its start region.
    pub fn stationary(graph: &RegionGraph) -> Self {
        let next = graph.regions().iter().map(|r| (r.id, r.id)).collect();
        TransitionModel::Scripted { next }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            format_version: u32,
            #[serde(flatten)]
            model: &'a TransitionModel,
        }
        serde_json::to_string_pretty(&Doc { format_version: FORMAT_VERSION, model: self })
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    /// Bind the model to a graph, precomputing embeddings where needed.
    pub fn prepare<'a>(&'a self, graph: &'a RegionGraph) -> Result<Predictor<'a>, TransitionError> {
        let cache = match self {
            TransitionModel::Gnn { weights } => Some(HeadCache::new(graph, weights)?),
            TransitionModel::Softmax { features, weights } if features.len() != weights.len() => {
                return Err(TransitionError::WeightMismatch { features: features.len(), weights: weights.len() })
            }
            _ => None,
        };
        Ok(Predictor { model: self, graph, cache })
    }
}

/// A model bound to its graph.
pub struct Predictor<'a> {
    model: &'a TransitionModel,
    graph: &'a RegionGraph,
    cache: Option<HeadCache>,
}

fn dynamic_row(features: &[Feature], ctx: &TransitionContext, cand: usize, graph: &RegionGraph) -> Vec<f64> {
    features.iter().map(|f| f.value(ctx, cand, graph)).collect()
}

impl Predictor<'_> {
    pub fn model(&self) -> &TransitionModel {
        self.model
    }

    /// Probability of each next region, as (region index, probability).
    pub fn distribution(&self, ctx: &TransitionContext) -> Result<Vec<(usize, f64)>, TransitionError> {
        let g = self.graph;
        if let TransitionModel::Scripted { next } = self.model {
            let id = g.id_of(ctx.current);
            let to = next.get(&id).ok_or(TransitionError::NoSuccessor(id))?;
            let idx = g.index_of(*to).map_err(|_| TransitionError::NoSuccessor(id))?;
            return Ok(vec![(idx, 1.0)]);
        }
        let cands = g.out_neighbors(ctx.current);
        if cands.is_empty() {
            return Err(FeatureError::NoNeighbors(g.id_of(ctx.current)).into());
        }
        let probs = match self.model {
            TransitionModel::Heuristic { kind } => match heuristic_choice(*kind, ctx, g) {
                Some(c) => cands.iter().map(|&x| f64::from(u8::from(x == c))).collect(),
                None => vec![1.0 / cands.len() as f64; cands.len()],
            },
            TransitionModel::Gnn { weights } => {
                let cache = self.cache.as_ref().expect("prepared");
                let logits: Vec<f64> = cands
                    .iter()
                    .map(|&c| cache.logit(weights, ctx.current, c, &dynamic_row(&weights.dynamic_features, ctx, c, g)))
                    .collect();
                sage::softmax(&logits)
            }
            TransitionModel::Softmax { features, weights } => {
                let logits: Vec<f64> = cands
                    .iter()
                    .map(|&c| dynamic_row(features, ctx, c, g).iter().zip(weights).map(|(x, w)| x * w).sum())
                    .collect();
                sage::softmax(&logits)
            }
            TransitionModel::Scripted { .. } => unreachable!(),
        };
        Ok(cands.iter().copied().zip(probs).collect())
    }

    /// Most likely next region, lowest index on ties. Models that defer to a
    /// uniform draw (RA and heuristic fallbacks) draw from `rng`.
    pub fn predict<R: Rng + ?Sized>(&self, ctx: &TransitionContext, rng: &mut R) -> Result<usize, TransitionError> {
        let dist = self.distribution(ctx)?;
        let top = dist.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let best: Vec<usize> = dist.iter().filter(|p| p.1 == top).map(|p| p.0).collect();
        if best.len() > 1 && matches!(self.model, TransitionModel::Heuristic { .. }) {
            return Ok(best[rng.random_range(0..best.len())]);
        }
        Ok(best[0])
    }

    /// Draw the next region from the model's distribution.
    pub fn sample<R: Rng + ?Sized>(&self, ctx: &TransitionContext, rng: &mut R) -> Result<usize, TransitionError> {
        let dist = self.distribution(ctx)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(r, p) in &dist {
            acc += p;
            if u < acc {
                return Ok(r);
            }
        }
        Ok(dist.last().map(|p| p.0).unwrap_or(ctx.current))
    }
}

/// Victim budget of every region from a training corpus.
pub fn corpus_budgets(corpus: &Corpus, graph: &RegionGraph) -> Vec<f64> {
    let table = pool_moments(corpus, graph);
    (0..graph.len()).map(|r| crate::events::victim_budget(&table, r)).collect()
}

fn check_adjacency(corpus: &Corpus, graph: &RegionGraph) -> Result<(), TransitionError> {
    for e in &corpus.episodes {
        for w in e.visits.windows(2) {
            let (a, b) = (graph.index_of(w[0].region_id), graph.index_of(w[1].region_id));
            if let (Ok(a), Ok(b)) = (a, b) {
                if !graph.has_edge(a, b) {
                    return Err(TransitionError::NotAdjacent {
                        episode: e.id.clone(),
                        from: w[0].region_id,
                        to: w[1].region_id,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Training examples from every transition of the corpus.
pub fn build_samples(
    corpus: &Corpus,
    graph: &RegionGraph,
    budgets: &[f64],
    dynamic: &[Feature],
) -> Result<Vec<Sample>, TransitionError> {
    check_adjacency(corpus, graph)?;
    let mut out = Vec::new();
    for e in &corpus.episodes {
        let b = e.outcomes_known.then_some(budgets);
        for t in replay(e, graph, b) {
            let candidates = graph.out_neighbors(t.ctx.current).to_vec();
            let mut dyn_x = Vec::with_capacity(candidates.len() * dynamic.len());
            for &c in &candidates {
                dyn_x.extend(dynamic_row(dynamic, &t.ctx, c, graph));
            }
            let target = candidates.iter().position(|&c| c == t.target).expect("adjacency checked");
            out.push(Sample { current: t.ctx.current, candidates, dynamic: dyn_x, target });
        }
    }
    Ok(out)
}

/// Split feature names into the static (message-passing) and dynamic
/// (scoring head) pathways, preserving order.
pub fn split_features(features: &[Feature]) -> (Vec<Feature>, Vec<Feature>) {
    features.iter().partition(|f| f.is_static())
}

/// Fraction of training episodes held out for early stopping when no
/// validation corpus is given.
pub const INNER_VAL_FRACTION: f64 = 0.2;

/// Train the neighbor scorer. Without `val`, a seeded 20% of the training
/// episodes is held out for early stopping.
pub fn train_scorer(
    train: &Corpus,
    val: Option<&Corpus>,
    graph: &RegionGraph,
    features: &[Feature],
    cfg: &ScorerConfig,
) -> Result<(TransitionModel, Vec<EpochLog>), TransitionError> {
    if train.is_empty() {
        return Err(TransitionError::EmptyCorpus);
    }
    let (fit_set, val_set) = match val {
        Some(v) => (train.clone(), v.clone()),
        None if train.len() >= 5 => {
            let folds = fold_assignment(train.len(), 5, cfg.seed ^ 0x5eed);
            let held = &folds[0];
            let rest: Vec<usize> = (0..train.len()).filter(|i| !held.contains(i)).collect();
            (train.subset(&rest), train.subset(held))
        }
        None => (train.clone(), Corpus::new(train.provenance, train.condition)),
    };
    let budgets = corpus_budgets(&fit_set, graph);
    let (stat, dynf) = split_features(features);
    let tr = build_samples(&fit_set, graph, &budgets, &dynf)?;
    let va = build_samples(&val_set, graph, &budgets, &dynf)?;
    if tr.is_empty() {
        return Err(TransitionError::EmptyCorpus);
    }
    let (weights, log) = sage::fit(graph, stat, dynf, &tr, &va, cfg)?;
    Ok((TransitionModel::Gnn { weights }, log))
}

/// Episode-level top-1 accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub model: String,
    pub per_episode: Vec<f64>,
    pub summary: MeanCi,
    pub skipped: usize,
}

/// Per-episode fraction of transitions predicted correctly. `budgets`
/// drives the target-presence flag during replay.
pub fn eval_accuracy(
    model: &TransitionModel,
    corpus: &Corpus,
    graph: &RegionGraph,
    budgets: &[f64],
    seed: u64,
) -> Result<AccuracyReport, TransitionError> {
    if corpus.is_empty() {
        return Err(TransitionError::EmptyCorpus);
    }
    let pred = model.prepare(graph)?;
    let mut rng = stream_rng(seed, "eval-accuracy", 0);
    let mut per_episode = Vec::new();
    let mut skipped = 0;
    for e in &corpus.episodes {
        let ts = replay(e, graph, e.outcomes_known.then_some(budgets));
        if ts.is_empty() {
            log::warn!("episode {} has fewer than 2 usable visits; skipped", e.id);
            skipped += 1;
            continue;
        }
        let mut hit = 0usize;
        for t in &ts {
            if pred.predict(&t.ctx, &mut rng)? == t.target {
                hit += 1;
            }
        }
        per_episode.push(hit as f64 / ts.len() as f64);
    }
    Ok(AccuracyReport { model: model.name(), summary: stats::mean_ci(&per_episode), per_episode, skipped })
}

/// Cross-validated comparison of the scorer against the heuristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub models: Vec<AccuracyReport>,
    pub pairwise: Vec<(String, String, TestResult)>,
}

impl Comparison {
    pub fn get(&self, name: &str) -> Option<&AccuracyReport> {
        self.models.iter().find(|m| m.model == name)
    }

    /// `model,mean,ci_low,ci_high,stars` with stars from Welch tests against
    /// the scorer.
    pub fn plot_csv(&self) -> String {
        let rows: Vec<(String, Vec<f64>)> = self.models.iter().map(|m| (m.model.clone(), m.per_episode.clone())).collect();
        stats::accuracy_plot_csv(&rows, "GNN")
    }

    pub fn pairwise_csv(&self) -> String {
        let mut s = String::from("model_a,model_b,t,df,p,stars\n");
        for (a, b, t) in &self.pairwise {
            s.push_str(&format!("{a},{b},{:.4},{:.2},{:.3e},{}\n", t.statistic, t.df, t.p, t.stars));
        }
        s
    }
}

/// K-fold comparison: each fold trains the scorer on the remaining folds
/// and scores every model on the held-out episodes.
pub fn compare_models(
    corpus: &Corpus,
    graph: &RegionGraph,
    features: &[Feature],
    heuristics: &[Heuristic],
    folds: usize,
    cfg: &ScorerConfig,
) -> Result<Comparison, TransitionError> {
    if folds < 2 {
        return Err(SplitError::TooFewFolds(folds).into());
    }
    if folds > corpus.len() {
        return Err(SplitError::TooManyFolds { k: folds, episodes: corpus.len() }.into());
    }
    let assign = fold_assignment(corpus.len(), folds, cfg.seed);
    let per_fold = par::map_indexed(folds, 0, |f| -> Result<Vec<AccuracyReport>, TransitionError> {
        let test = corpus.subset(&assign[f]);
        let rest: Vec<usize> = (0..corpus.len()).filter(|i| !assign[f].contains(i)).collect();
        let train = corpus.subset(&rest);
        let budgets = corpus_budgets(&train, graph);
        let fcfg = ScorerConfig { seed: cfg.seed.wrapping_add(f as u64), ..*cfg };
        let (gnn, _) = train_scorer(&train, None, graph, features, &fcfg)?;
        let mut out = vec![eval_accuracy(&gnn, &test, graph, &budgets, fcfg.seed)?];
        for &h in heuristics {
            out.push(eval_accuracy(&TransitionModel::Heuristic { kind: h }, &test, graph, &budgets, fcfg.seed)?);
        }
        Ok(out)
    });
    let mut merged: Vec<(String, Vec<f64>, usize)> = Vec::new();
    for fold in per_fold {
        for (i, r) in fold?.into_iter().enumerate() {
            if merged.len() <= i {
                merged.push((r.model.clone(), Vec::new(), 0));
            }
            merged[i].1.extend(r.per_episode);
            merged[i].2 += r.skipped;
        }
    }
    let models: Vec<AccuracyReport> = merged
        .into_iter()
        .map(|(model, per_episode, skipped)| AccuracyReport { model, summary: stats::mean_ci(&per_episode), per_episode, skipped })
        .collect();
    let rows: Vec<(String, Vec<f64>)> = models.iter().map(|m| (m.model.clone(), m.per_episode.clone())).collect();
    Ok(Comparison { pairwise: stats::pairwise_welch(&rows), models })
}

/// Mean and spread of fold accuracies for one feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComboScore {
    pub stage: usize,
    pub features: Vec<Feature>,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Winning combination of each stage.
    pub stages: Vec<ComboScore>,
    /// Every combination evaluated.
    pub combos: Vec<ComboScore>,
}

impl Selection {
    pub fn selected(&self) -> Vec<Feature> {
        self.stages.last().map(|s| s.features.clone()).unwrap_or_default()
    }

    /// `stage,feature,mean_acc,sd`
    pub fn stages_csv(&self) -> String {
        let mut s = String::from("stage,feature,mean_acc,sd\n");
        for c in &self.stages {
            let f = c.features.last().map(|f| f.name()).unwrap_or("");
            s.push_str(&format!("{},{f},{:.4},{:.4}\n", c.stage, c.mean, c.sd));
        }
        s
    }

    /// `stage,features,mean_acc,sd` for every combination tried.
    pub fn combos_csv(&self) -> String {
        let mut s = String::from("stage,features,mean_acc,sd\n");
        for c in &self.combos {
            let names: Vec<&str> = c.features.iter().map(|f| f.name()).collect();
            s.push_str(&format!("{},{},{:.4},{:.4}\n", c.stage, names.join(";"), c.mean, c.sd));
        }
        s
    }
}

/// Cross-validated accuracy of a scorer trained on `features`.
pub fn cv_accuracy(
    corpus: &Corpus,
    graph: &RegionGraph,
    features: &[Feature],
    assign: &[Vec<usize>],
    cfg: &ScorerConfig,
) -> Result<Vec<f64>, TransitionError> {
    let mut accs = Vec::with_capacity(assign.len());
    for (f, test_idx) in assign.iter().enumerate() {
        let rest: Vec<usize> = (0..corpus.len()).filter(|i| !test_idx.contains(i)).collect();
        let train = corpus.subset(&rest);
        let test = corpus.subset(test_idx);
        let fcfg = ScorerConfig { seed: cfg.seed.wrapping_add(f as u64), ..*cfg };
        let (m, _) = train_scorer(&train, None, graph, features, &fcfg)?;
        let budgets = corpus_budgets(&train, graph);
        accs.push(eval_accuracy(&m, &test, graph, &budgets, fcfg.seed)?.summary.mean);
    }
    Ok(accs)
}

/// Greedy forward selection: each stage adds the candidate that maximises
/// mean cross-validated top-1 accuracy.
pub fn greedy_select(
    corpus: &Corpus,
    registry: &FeatureRegistry,
    graph: &RegionGraph,
    k: usize,
    folds: usize,
    cfg: &ScorerConfig,
) -> Result<Selection, TransitionError> {
    if k > registry.len() {
        return Err(TransitionError::TooManyFeatures { k, available: registry.len() });
    }
    if folds < 2 {
        return Err(SplitError::TooFewFolds(folds).into());
    }
    if folds > corpus.len() {
        return Err(SplitError::TooManyFolds { k: folds, episodes: corpus.len() }.into());
    }
    let assign = fold_assignment(corpus.len(), folds, cfg.seed);
    let mut selected: Vec<Feature> = Vec::new();
    let mut sel = Selection { stages: Vec::new(), combos: Vec::new() };
    for stage in 1..=k {
        let cands: Vec<Feature> = registry.features().iter().copied().filter(|f| !selected.contains(f)).collect();
        let scores = par::map_slice(&cands, 0, |&c| {
            let mut set = selected.clone();
            set.push(c);
            cv_accuracy(corpus, graph, &set, &assign, cfg).map(|a| (set, a))
        });
        let mut best: Option<ComboScore> = None;
        for r in scores {
            let (features, accs) = r?;
            let mean = stats::mean(&accs);
            let sd = if accs.len() > 1 { stats::var(&accs).sqrt() } else { 0.0 };
            let combo = ComboScore { stage, features, mean, sd };
            log::info!("stage {stage}: {:?} -> {mean:.4}", combo.features);
            if best.as_ref().is_none_or(|b| mean > b.mean) {
                best = Some(combo.clone());
            }
            sel.combos.push(combo);
        }
        let best = best.expect("at least one candidate");
        selected = best.features.clone();
        sel.stages.push(best);
    }
    Ok(sel)
}
