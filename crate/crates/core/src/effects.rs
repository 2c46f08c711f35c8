//! Responder-robot effects: smoke field, distance-decayed influence,
//! additive outcome modulation, shrinkage slope fitting, decay calibration,
//! and region impact ranking.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{resolve_level, victim_cap, EventError, Outcome};
use crate::graph::{DistanceMatrix, RegionGraph};
use crate::rng::stream_rng;
use crate::trace::{Corpus, Metric, MomentTable, SmokeDeposit, VisitEvent};

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_TAU: f64 = 10.0;
pub const VAR_EPS: f64 = 1e-9;
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum EffectError {
    #[error("decay parameter must be positive (got {0})")]
    BadLambda(f64),
    #[error("robot-present corpus is empty")]
    EmptyCorpus,
    #[error("calibration grid is empty")]
    EmptyGrid,
    #[error("intensity vector has {got} entries, graph has {want}")]
    WidthMismatch { got: usize, want: usize },
    #[error(transparent)]
    Event(#[from] EventError),
}

/// Default calibration grid: 0.05 to 2.0 in steps of 0.05.
pub fn default_grid() -> Vec<f64> {
    (1..=40).map(|i| i as f64 * 0.05).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub region: usize,
    pub time: f64,
    pub amount: f64,
}

/// Per-region smoke intensity of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmokeField {
    pub intensity: Vec<f64>,
    pub history: Vec<Deployment>,
    /// Optional exponential time decay rate (1/s); `None` accumulates forever.
    pub decay_rate: Option<f64>,
}

impl SmokeField {
    pub fn new(n: usize) -> Self {
        SmokeField {
            intensity: vec![0.0; n],
            history: Vec::new(),
            decay_rate: None,
        }
    }

    pub fn deposit(&mut self, region: usize, time: f64, amount: f64) {
        self.intensity[region] += amount;
        self.history.push(Deployment { region, time, amount });
    }

    /// Let `dt` seconds pass (only matters when decay is enabled).
    pub fn advance(&mut self, dt: f64) {
        if let Some(rate) = self.decay_rate {
            let f = (-rate * dt).exp();
            self.intensity.iter_mut().for_each(|x| *x *= f);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.intensity.iter().all(|&x| x == 0.0)
    }

    /// Nonzero cells as id-tagged deposits.
    pub fn to_deposits(&self, graph: &RegionGraph) -> Vec<SmokeDeposit> {
        self.intensity
            .iter()
            .enumerate()
            .filter(|(_, &x)| x > 0.0)
            .map(|(i, &x)| SmokeDeposit { region_id: graph.id_of(i), intensity: x })
            .collect()
    }

    pub fn from_deposits(deposits: &[SmokeDeposit], graph: &RegionGraph) -> Self {
        let mut f = SmokeField::new(graph.len());
        for d in deposits {
            if let Ok(i) = graph.index_of(d.region_id) {
                f.intensity[i] += d.intensity;
            }
        }
        f
    }
}

/// `R_i = sum_j intensity_j * exp(-lambda * D_ij)`; unreachable pairs add 0.
pub fn influence(intensity: &[f64], d: &DistanceMatrix, lambda: f64) -> Result<Vec<f64>, EffectError> {
    if !(lambda > 0.0) {
        return Err(EffectError::BadLambda(lambda));
    }
    if intensity.len() != d.len() {
        return Err(EffectError::WidthMismatch { got: intensity.len(), want: d.len() });
    }
    let sources: Vec<(usize, f64)> = intensity
        .iter()
        .enumerate()
        .filter(|(_, &x)| x != 0.0)
        .map(|(j, &x)| (j, x))
        .collect();
    Ok((0..d.len())
        .map(|i| {
            let row = d.row(i);
            sources
                .iter()
                .filter(|(j, _)| row[*j].is_finite())
                .map(|&(j, x)| x * (-lambda * row[j]).exp())
                .sum()
        })
        .collect())
}

/// Influence on a single region.
pub fn influence_at(intensity: &[f64], d: &DistanceMatrix, lambda: f64, region: usize) -> f64 {
    let row = d.row(region);
    intensity
        .iter()
        .zip(row)
        .filter(|(&x, dij)| x != 0.0 && dij.is_finite())
        .map(|(&x, &dij)| x * (-lambda * dij).exp())
        .sum()
}

/// Influence at a visit's region from its recorded smoke field.
pub fn visit_influence(v: &VisitEvent, graph: &RegionGraph, lambda: f64) -> f64 {
    let Ok(i) = graph.index_of(v.region_id) else { return 0.0 };
    let d = graph.shortest_path_matrix();
    v.smoke
        .iter()
        .filter_map(|s| graph.index_of(s.region_id).ok().map(|j| (j, s.intensity)))
        .filter(|(j, _)| d.get(i, *j).is_finite())
        .map(|(j, x)| x * (-lambda * d.get(i, j)).exp())
        .sum()
}

/// Recompute every visit's `robot_influence` from its smoke field.
pub fn assign_influence(corpus: &mut Corpus, graph: &RegionGraph, lambda: f64) {
    for e in &mut corpus.episodes {
        for v in &mut e.visits {
            v.robot_influence = visit_influence(v, graph, lambda);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCoeffs {
    pub region_id: u32,
    pub n: usize,
    /// Shrunk slopes, indexed time, shots, victims.
    pub k: [f64; 3],
    /// Unshrunk slopes (0 when suppressed).
    pub k_raw: [f64; 3],
    pub suppressed: [bool; 3],
    /// Baseline mean dwell used for rate-based ranking.
    pub mean_dwell: f64,
    /// Baseline victim cap used when clamping.
    pub victim_cap: f64,
}

/// Fitted effect model artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectModel {
    pub format_version: u32,
    pub lambda: f64,
    pub tau: f64,
    pub n_min: usize,
    pub regions: Vec<RegionCoeffs>,
}

impl EffectModel {
    /// A model with every coefficient zero.
    pub fn zero(table: &MomentTable, lambda: f64) -> Self {
        EffectModel {
            format_version: FORMAT_VERSION,
            lambda,
            tau: DEFAULT_TAU,
            n_min: 0,
            regions: (0..table.region.len())
                .map(|i| RegionCoeffs {
                    region_id: table.region[i].id,
                    n: 0,
                    k: [0.0; 3],
                    k_raw: [0.0; 3],
                    suppressed: [true; 3],
                    mean_dwell: table.cell(i, crate::trace::Level::Global).time.mean,
                    victim_cap: victim_cap(table, i),
                })
                .collect(),
        }
    }

    pub fn k(&self, region: usize, metric: Metric) -> f64 {
        self.regions[region].k[metric.index()]
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

/// `X + R * k` per outcome, clamped to `>= 0` and the victim cap.
pub fn modulate(outcome: Outcome, r: f64, model: &EffectModel, region: usize, victim_cap: Option<f64>) -> Outcome {
    let c = &model.regions[region];
    let cap = victim_cap.unwrap_or(f64::INFINITY);
    Outcome {
        dwell: (outcome.dwell + r * c.k[0]).max(0.0),
        shots: (outcome.shots + r * c.k[1]).max(0.0),
        victims: (outcome.victims + r * c.k[2]).max(0.0).min(cap),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Slope of `e` on `r` as `Cov / Var`, with the variance guards.
pub fn ols_slope(r: &[f64], e: &[f64], eps: f64) -> Option<f64> {
    let n = r.len();
    if n < 2 {
        return None;
    }
    let (mr, me) = (mean(r), mean(e));
    let var_r = r.iter().map(|x| (x - mr).powi(2)).sum::<f64>() / (n - 1) as f64;
    let var_e = e.iter().map(|x| (x - me).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var_r < eps || var_e < eps {
        return None;
    }
    let cov = r.iter().zip(e).map(|(a, b)| (a - mr) * (b - me)).sum::<f64>() / (n - 1) as f64;
    Some(cov / var_r)
}

/// Baseline expectation of a visit outcome (region-first resolved mean).
fn baseline_means(table: &MomentTable, region: usize, n_min: usize) -> Result<[f64; 3], EffectError> {
    let mut out = [0.0; 3];
    for m in Metric::ALL {
        out[m.index()] = resolve_level(region, m, table, n_min)?.moments.mean;
    }
    Ok(out)
}

/// Fit per-region slopes of baseline residuals on `robot_influence`, shrunk
/// by `n / (n + tau)`. Visits must already carry their influence values.
pub fn fit_coeffs(
    baseline: &MomentTable,
    robot: &Corpus,
    graph: &RegionGraph,
    lambda: f64,
    tau: f64,
    n_min: usize,
) -> Result<EffectModel, EffectError> {
    if robot.visit_count() == 0 {
        return Err(EffectError::EmptyCorpus);
    }
    let n = graph.len();
    let mut rs: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut es: Vec<[Vec<f64>; 3]> = vec![Default::default(); n];
    let mut base = Vec::with_capacity(n);
    for i in 0..n {
        base.push(baseline_means(baseline, i, n_min)?);
    }
    for v in robot.episodes.iter().filter(|e| e.outcomes_known).flat_map(|e| &e.visits) {
        let Ok(i) = graph.index_of(v.region_id) else { continue };
        rs[i].push(v.robot_influence);
        for m in Metric::ALL {
            es[i][m.index()].push(m.of(v) - base[i][m.index()]);
        }
    }
    let regions = (0..n)
        .map(|i| {
            let cnt = rs[i].len();
            let mut c = RegionCoeffs {
                region_id: graph.id_of(i),
                n: cnt,
                k: [0.0; 3],
                k_raw: [0.0; 3],
                suppressed: [true; 3],
                mean_dwell: base[i][0],
                victim_cap: victim_cap(baseline, i),
            };
            if cnt >= n_min {
                for m in 0..3 {
                    if let Some(k) = ols_slope(&rs[i], &es[i][m], VAR_EPS) {
                        c.k_raw[m] = k;
                        c.k[m] = k * cnt as f64 / (cnt as f64 + tau);
                        c.suppressed[m] = false;
                    }
                }
            }
            c
        })
        .collect();
    Ok(EffectModel {
        format_version: FORMAT_VERSION,
        lambda,
        tau,
        n_min,
        regions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub lambda: f64,
    /// (lambda, held-out score) for every grid point.
    pub scores: Vec<(f64, f64)>,
    /// Held-out score of the all-zero model.
    pub null_score: f64,
    /// No grid value improved on the all-zero model.
    pub degenerate: bool,
}

/// Choose the decay parameter by held-out prediction error. Episodes are
/// split in half (seeded); for each grid value the slopes are fitted on one
/// half and scored on the other by variance-normalised squared residuals of
/// the modulated predictions. Ties go to the smaller value.
pub fn calibrate_lambda(
    baseline: &MomentTable,
    robot: &Corpus,
    graph: &RegionGraph,
    grid: &[f64],
    tau: f64,
    n_min: usize,
    seed: u64,
) -> Result<Calibration, EffectError> {
    if grid.is_empty() {
        return Err(EffectError::EmptyGrid);
    }
    if robot.visit_count() == 0 {
        return Err(EffectError::EmptyCorpus);
    }
    let mut idx: Vec<usize> = (0..robot.len()).collect();
    idx.shuffle(&mut stream_rng(seed, "lambda-split", 0));
    let half = idx.len().div_ceil(2);
    let (mut a, mut b) = (idx[..half].to_vec(), idx[half..].to_vec());
    a.sort_unstable();
    b.sort_unstable();
    let (train0, test0) = if b.is_empty() { (robot.subset(&a), robot.subset(&a)) } else { (robot.subset(&a), robot.subset(&b)) };

    let scale: [f64; 3] = Metric::ALL.map(|m| baseline.global.metric(m).var.max(VAR_EPS));
    let mut base = Vec::with_capacity(graph.len());
    for i in 0..graph.len() {
        base.push(baseline_means(baseline, i, n_min)?);
    }
    let score = |test: &Corpus, model: Option<&EffectModel>| -> f64 {
        let mut s = 0.0;
        for v in test.visits() {
            let Ok(i) = graph.index_of(v.region_id) else { continue };
            for m in Metric::ALL {
                let k = model.map_or(0.0, |md| md.k(i, m));
                let pred = base[i][m.index()] + v.robot_influence * k;
                s += (m.of(v) - pred).powi(2) / scale[m.index()];
            }
        }
        s
    };
    let null_score = score(&test0, None);
    let mut scores = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let (mut train, mut test) = (train0.clone(), test0.clone());
        assign_influence(&mut train, graph, lambda);
        assign_influence(&mut test, graph, lambda);
        let model = fit_coeffs(baseline, &train, graph, lambda, tau, n_min)?;
        scores.push((lambda, score(&test, Some(&model))));
    }
    let mut best = scores[0];
    for &(l, s) in &scores[1..] {
        if s < best.1 || (s == best.1 && l < best.0) {
            best = (l, s);
        }
    }
    let degenerate = best.1 >= null_score * (1.0 - 1e-3);
    let lambda = if degenerate {
        let smallest = grid.iter().copied().fold(f64::INFINITY, f64::min);
        log::warn!("no decay value improves on the zero-effect model; returning {smallest}");
        smallest
    } else {
        best.0
    };
    Ok(Calibration { lambda, scores, null_score, degenerate })
}

/// Regions ordered from highest impact (most negative victim sensitivity) to
/// lowest. `raw` ranks by the per-visit victim slope instead of the slope
/// divided by mean dwell. Ties keep ascending id order.
pub fn impact_rank(model: &EffectModel, raw: bool) -> Vec<u32> {
    let key = |c: &RegionCoeffs| {
        if raw || c.mean_dwell <= 0.0 {
            c.k[2]
        } else {
            c.k[2] / c.mean_dwell
        }
    };
    if model.regions.iter().all(|c| c.k[2] == 0.0) {
        log::warn!("all victim coefficients are zero; impact ranking falls back to id order");
    }
    let mut order: Vec<&RegionCoeffs> = model.regions.iter().collect();
    order.sort_by(|a, b| key(a).total_cmp(&key(b)).then(a.region_id.cmp(&b.region_id)));
    order.into_iter().map(|c| c.region_id).collect()
}

pub fn high_impact(model: &EffectModel) -> Option<u32> {
    impact_rank(model, false).first().copied()
}

pub fn low_impact(model: &EffectModel) -> Option<u32> {
    impact_rank(model, false).last().copied()
}
