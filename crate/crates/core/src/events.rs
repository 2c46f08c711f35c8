//! In-region outcome generation: hierarchical moment resolution with
//! region, group, global fallback, and the three generation variants.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tnorm::{match_moments, sample, Bounds, TruncError};
use crate::trace::{CellStats, Level, Metric, MomentTable, Moments};

pub const DEFAULT_N_MIN: usize = 8;
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum EventError {
    #[error("moment table has no global samples")]
    EmptyGlobal,
    #[error("region index {0} outside the moment table")]
    UnknownRegion(usize),
    #[error(transparent)]
    Trunc(#[from] TruncError),
    #[error("unknown variant {0:?} (expected <region|group|global>-<means|sampling|coupling>)")]
    BadVariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generation {
    Means,
    Sampling,
    Coupling,
}

impl Generation {
    pub const ALL: [Generation; 3] = [Generation::Means, Generation::Sampling, Generation::Coupling];

    pub fn name(self) -> &'static str {
        match self {
            Generation::Means => "means",
            Generation::Sampling => "sampling",
            Generation::Coupling => "coupling",
        }
    }
}

/// One of the nine (pooling level, generation) combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariantKind {
    pub level: Level,
    pub generation: Generation,
}

impl VariantKind {
    pub const fn new(level: Level, generation: Generation) -> Self {
        VariantKind { level, generation }
    }

    pub fn all() -> Vec<VariantKind> {
        Level::ALL
            .iter()
            .flat_map(|&l| Generation::ALL.iter().map(move |&g| VariantKind::new(l, g)))
            .collect()
    }
}

impl Default for VariantKind {
    fn default() -> Self {
        VariantKind::new(Level::Region, Generation::Sampling)
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.level.name(), self.generation.name())
    }
}

impl FromStr for VariantKind {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VariantKind::all()
            .into_iter()
            .find(|v| v.to_string() == s.trim())
            .ok_or_else(|| EventError::BadVariant(s.to_string()))
    }
}

/// Moments chosen for one (region, metric) plus where they came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub moments: Moments,
    pub level: Level,
    /// Global variance was zero: sample the mean deterministically.
    pub deterministic: bool,
}

fn usable(m: &Moments, n_min: usize) -> bool {
    m.n >= n_min && m.var > 0.0
}

/// Resolve starting at region level.
pub fn resolve_level(
    region: usize,
    metric: Metric,
    table: &MomentTable,
    n_min: usize,
) -> Result<Resolved, EventError> {
    resolve_from(region, metric, table, n_min, Level::Region)
}

/// Resolve starting at `start`: a level is used when it holds at least
/// `n_min` samples with positive variance; otherwise the next coarser level
/// is tried. Global is always accepted (deterministic if its variance is 0).
pub fn resolve_from(
    region: usize,
    metric: Metric,
    table: &MomentTable,
    n_min: usize,
    start: Level,
) -> Result<Resolved, EventError> {
    if region >= table.region.len() {
        return Err(EventError::UnknownRegion(region));
    }
    let global = *table.global.metric(metric);
    if global.n == 0 {
        return Err(EventError::EmptyGlobal);
    }
    for level in Level::ALL.into_iter().filter(|l| *l >= start) {
        if level == Level::Global {
            break;
        }
        let m = *table.cell(region, level).metric(metric);
        if usable(&m, n_min) {
            return Ok(Resolved { moments: m, level, deterministic: false });
        }
    }
    Ok(Resolved {
        moments: global,
        level: Level::Global,
        deterministic: global.var <= 0.0,
    })
}

/// Victim cap of a region: its observed per-visit max, or the group/global
/// max when the region itself was never observed.
pub fn victim_cap(table: &MomentTable, region: usize) -> f64 {
    let r = table.region_stats(region).victims;
    if r.n > 0 {
        return r.max;
    }
    let g = table.group_stats(table.region[region].group).victims;
    if g.n > 0 {
        g.max
    } else {
        table.global.victims.max
    }
}

/// Per-episode victim budget of a region: the largest episode total seen in
/// it, or the group/global value when the region was never observed.
pub fn victim_budget(table: &MomentTable, region: usize) -> f64 {
    let r = table.region_stats(region);
    if r.n() > 0 {
        return r.victim_budget;
    }
    let g = table.group_stats(table.region[region].group);
    if g.n() > 0 {
        g.victim_budget
    } else {
        table.global.victim_budget
    }
}

/// Upper limits for one draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeCaps {
    /// Dwell cap (remaining budget or the episode cap).
    pub time: f64,
    /// Victim cap (`None` for unbounded).
    pub victims: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Outcome {
    pub dwell: f64,
    pub shots: f64,
    pub victims: f64,
}

/// An outcome with the diagnostics of how it was produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Generated {
    pub outcome: Outcome,
    pub levels: [Level; 3],
    pub clamped: [bool; 3],
}

fn draw<R: Rng + ?Sized>(
    res: &Resolved,
    bounds: Bounds,
    rng: &mut R,
) -> Result<(f64, bool), EventError> {
    let m = res.moments.mean;
    if res.deterministic || res.moments.var <= 0.0 || !bounds.contains_open(m) {
        return Ok((bounds.clamp(m), false));
    }
    let matched = match_moments(m, res.moments.var, &bounds)?;
    Ok((sample(&matched.spec, rng), matched.clamped))
}

fn rate(cell: &CellStats, metric: Metric) -> f64 {
    match metric {
        Metric::Shots => cell.shot_rate,
        Metric::Victims => cell.victim_rate,
        Metric::Time => 1.0,
    }
}

/// Generate one visit outcome for `region` under `variant`.
pub fn gen_outcome<R: Rng + ?Sized>(
    region: usize,
    variant: VariantKind,
    table: &MomentTable,
    n_min: usize,
    caps: OutcomeCaps,
    rng: &mut R,
) -> Result<Generated, EventError> {
    let res = |m: Metric| resolve_from(region, m, table, n_min, variant.level);
    let victim_bounds = Bounds {
        lower: 0.0,
        upper: caps.victims,
    };
    let victim_clamp = |v: f64| v.max(0.0).min(caps.victims.unwrap_or(f64::INFINITY));
    let rt = res(Metric::Time)?;
    match variant.generation {
        Generation::Means => {
            let (rs, rv) = (res(Metric::Shots)?, res(Metric::Victims)?);
            Ok(Generated {
                outcome: Outcome {
                    dwell: rt.moments.mean,
                    shots: rs.moments.mean,
                    victims: victim_clamp(rv.moments.mean),
                },
                levels: [rt.level, rs.level, rv.level],
                clamped: [false; 3],
            })
        }
        Generation::Sampling => {
            let (rs, rv) = (res(Metric::Shots)?, res(Metric::Victims)?);
            let (dwell, ct) = draw(&rt, Bounds { lower: 0.0, upper: Some(caps.time) }, rng)?;
            let (shots, cs) = draw(&rs, Bounds::lower_only(0.0), rng)?;
            let (victims, cv) = if caps.victims.is_some_and(|c| c <= 0.0) {
                (0.0, false)
            } else {
                draw(&rv, victim_bounds, rng)?
            };
            Ok(Generated {
                outcome: Outcome { dwell, shots, victims },
                levels: [rt.level, rs.level, rv.level],
                clamped: [ct, cs, cv],
            })
        }
        Generation::Coupling => {
            let (dwell, ct) = draw(&rt, Bounds { lower: 0.0, upper: Some(caps.time) }, rng)?;
            let cell = table.cell(region, rt.level);
            Ok(Generated {
                outcome: Outcome {
                    dwell,
                    shots: dwell * rate(&cell, Metric::Shots),
                    victims: victim_clamp(dwell * rate(&cell, Metric::Victims)),
                },
                levels: [rt.level; 3],
                clamped: [ct, false, false],
            })
        }
    }
}

/// Fitted event-model artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventModel {
    pub format_version: u32,
    pub n_min: usize,
    pub variant: VariantKind,
    pub table: MomentTable,
}

impl EventModel {
    pub fn new(table: MomentTable, n_min: usize, variant: VariantKind) -> Self {
        EventModel {
            format_version: FORMAT_VERSION,
            n_min,
            variant,
            table,
        }
    }

    pub fn generate<R: Rng + ?Sized>(
        &self,
        region: usize,
        caps: OutcomeCaps,
        rng: &mut R,
    ) -> Result<Generated, EventError> {
        gen_outcome(region, self.variant, &self.table, self.n_min, caps, rng)
    }

    /// Per-region, per-metric diagnostic rows; `t_max` bounds dwell.
    pub fn diagnostics(&self, t_max: f64) -> Result<Vec<DiagRow>, EventError> {
        let mut rows = Vec::new();
        for (i, cell) in self.table.region.iter().enumerate() {
            for metric in Metric::ALL {
                let own = *cell.stats.metric(metric);
                let res = resolve_from(i, metric, &self.table, self.n_min, self.variant.level)?;
                let upper = match metric {
                    Metric::Time => Some(t_max),
                    Metric::Shots => None,
                    Metric::Victims => Some(victim_cap(&self.table, i)),
                };
                let b = Bounds { lower: 0.0, upper };
                let clamped = !res.deterministic
                    && res.moments.var > 0.0
                    && b.contains_open(res.moments.mean)
                    && match_moments(res.moments.mean, res.moments.var, &b)?.clamped;
                rows.push(DiagRow {
                    region_id: cell.id,
                    metric,
                    n: own.n,
                    mean: own.mean,
                    var: own.var,
                    max: own.max,
                    level_used: res.level,
                    clamped,
                });
            }
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagRow {
    pub region_id: u32,
    pub metric: Metric,
    pub n: usize,
    pub mean: f64,
    pub var: f64,
    pub max: f64,
    pub level_used: Level,
    pub clamped: bool,
}

pub fn diagnostics_csv(rows: &[DiagRow]) -> String {
    let mut s = String::from("region_id,metric,n,mean,var,max,level_used,clamped\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.region_id,
            r.metric.name(),
            r.n,
            r.mean,
            r.var,
            r.max,
            r.level_used.name(),
            r.clamped
        ));
    }
    s
}

/// Round half up, used only when rendering counts.
pub fn render_count(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

#[cfg(test)]
pub(crate) mod test_tables {
    use super::*;
    use crate::graph::RegionGroup;
    use crate::trace::RegionCell;
    use std::collections::BTreeMap;

    pub fn moments(n: usize, mean: f64, var: f64) -> Moments {
        Moments { n, mean, var, max: mean + 3.0 * var.sqrt() }
    }

    pub fn cell(n: usize, mean: f64, var: f64) -> CellStats {
        CellStats {
            time: moments(n, mean, var),
            shots: moments(n, mean / 10.0, var / 100.0),
            victims: moments(n, mean / 20.0, var / 400.0),
            shot_rate: 0.1,
            victim_rate: 0.05,
            victim_budget: mean / 5.0,
        }
    }

    /// Regions in one group with the given (n, var) time cells.
    pub fn table(cells: &[(usize, f64)], group: CellStats, global: CellStats) -> MomentTable {
        MomentTable {
            region: cells
                .iter()
                .enumerate()
                .map(|(i, &(n, var))| RegionCell {
                    id: i as u32,
                    group: RegionGroup::Classroom,
                    stats: cell(n, 10.0 + i as f64, var),
                })
                .collect(),
            group: BTreeMap::from([(RegionGroup::Classroom, group)]),
            global,
        }
    }
}
