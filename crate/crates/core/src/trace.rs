//! Trace ingestion: 2 Hz tick logs, visit segmentation, hierarchical outcome
//! pooling, and episode-level cross-validation splits.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{RegionGraph, RegionGroup};
use crate::rng::stream_rng;

/// Seconds per logged tick (2 Hz).
pub const TICK_SECONDS: f64 = 0.5;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("row {row}: {msg}")]
    Malformed { row: usize, msg: String },
    #[error("row {row}: unknown region id {id}")]
    UnknownRegion { row: usize, id: u32 },
    #[error("row {row}: {column} decreased from {prev} to {now} in episode {episode}")]
    DecreasingCounter {
        row: usize,
        episode: String,
        column: &'static str,
        prev: f64,
        now: f64,
    },
    #[error("row {row}: duplicate tick {tick} in episode {episode}")]
    DuplicateTick { row: usize, episode: String, tick: u64 },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0}")]
    MissingColumn(&'static str),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SplitError {
    #[error("k must be at least 2 (got {0})")]
    TooFewFolds(usize),
    #[error("k = {k} exceeds the episode count {episodes}")]
    TooManyFolds { k: usize, episodes: usize },
}

/// Smoke present in one region at a point in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmokeDeposit {
    pub region_id: u32,
    pub intensity: f64,
}

/// One 0.5 s log record.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub episode_id: String,
    pub tick: u64,
    pub region_id: u32,
    pub shots_cum: f64,
    pub victims_cum: f64,
    pub robot_regions: Vec<u32>,
    pub smoke: Vec<SmokeDeposit>,
}

/// One contiguous stay in a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitEvent {
    pub episode_id: String,
    pub seq: usize,
    pub region_id: u32,
    pub dwell_s: f64,
    pub shots: f64,
    pub victims: f64,
    /// Robot influence at visit start; 0 when no robots are present.
    #[serde(default)]
    pub robot_influence: f64,
    /// Smoke field at visit start.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub smoke: Vec<SmokeDeposit>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub robot_regions: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Ingested,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Baseline,
    RobotPresent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    /// False for externally annotated region sequences without dwell data;
    /// such episodes feed transition evaluation only.
    #[serde(default = "yes")]
    pub outcomes_known: bool,
    pub visits: Vec<VisitEvent>,
}

fn yes() -> bool {
    true
}

impl Episode {
    pub fn total_dwell(&self) -> f64 {
        self.visits.iter().map(|v| v.dwell_s).sum()
    }

    pub fn total_shots(&self) -> f64 {
        self.visits.iter().map(|v| v.shots).sum()
    }

    pub fn total_victims(&self) -> f64 {
        self.visits.iter().map(|v| v.victims).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub provenance: Provenance,
    pub condition: Condition,
    pub episodes: Vec<Episode>,
}

impl Corpus {
    pub fn new(provenance: Provenance, condition: Condition) -> Self {
        Corpus {
            provenance,
            condition,
            episodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn visits(&self) -> impl Iterator<Item = &VisitEvent> {
        self.episodes.iter().flat_map(|e| e.visits.iter())
    }

    pub fn visit_count(&self) -> usize {
        self.episodes.iter().map(|e| e.visits.len()).sum()
    }

    /// Same tags, selected episodes (cloned).
    pub fn subset(&self, idx: &[usize]) -> Corpus {
        Corpus {
            provenance: self.provenance,
            condition: self.condition,
            episodes: idx.iter().map(|&i| self.episodes[i].clone()).collect(),
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(bytes: &[u8]) -> serde_json::Result<Self> {
        serde_json::from_slice(bytes)
    }

    /// Visit-level CSV: `episode_id,seq,region_id,dwell_s,shots,victims,R`.
    pub fn to_visits_csv(&self) -> String {
        let mut out = String::from("episode_id,seq,region_id,dwell_s,shots,victims,R\n");
        for e in &self.episodes {
            for v in &e.visits {
                if e.outcomes_known {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        v.episode_id, v.seq, v.region_id, v.dwell_s, v.shots, v.victims, v.robot_influence
                    ));
                } else {
                    out.push_str(&format!("{},{},{},,,,\n", v.episode_id, v.seq, v.region_id));
                }
            }
        }
        out
    }

    /// Render the corpus back into 2 Hz tick rows, one row per tick. Dwell
    /// times are rounded to the tick grid. Counters restart per episode.
    pub fn to_ticks(&self) -> Vec<TickRecord> {
        let mut rows = Vec::new();
        for e in &self.episodes {
            let (mut tick, mut shots, mut victims) = (0u64, 0.0, 0.0);
            for v in &e.visits {
                let n = ((v.dwell_s / TICK_SECONDS).round() as u64).max(1);
                for k in 0..n {
                    if k + 1 == n {
                        shots += v.shots;
                        victims += v.victims;
                    }
                    rows.push(TickRecord {
                        episode_id: e.id.clone(),
                        tick,
                        region_id: v.region_id,
                        shots_cum: shots,
                        victims_cum: victims,
                        robot_regions: v.robot_regions.clone(),
                        smoke: if k == 0 { v.smoke.clone() } else { Vec::new() },
                    });
                    tick += 1;
                }
            }
        }
        rows
    }
}

/// Write tick rows in the trace CSV format.
pub fn ticks_to_csv(ticks: &[TickRecord]) -> String {
    let mut out = String::from(
        "episode_id,tick,region_id,shots_cum,victims_cum,robot1_region,robot2_region,smoke_region,smoke_intensity\n",
    );
    for t in ticks {
        let robot = |i: usize| t.robot_regions.get(i).map(|r| r.to_string()).unwrap_or_default();
        let smoke_r: Vec<String> = t.smoke.iter().map(|s| s.region_id.to_string()).collect();
        let smoke_i: Vec<String> = t.smoke.iter().map(|s| s.intensity.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            t.episode_id,
            t.tick,
            t.region_id,
            t.shots_cum,
            t.victims_cum,
            robot(0),
            robot(1),
            smoke_r.join(";"),
            smoke_i.join(";")
        ));
    }
    out
}

struct Columns {
    episode: usize,
    tick: usize,
    region: Option<usize>,
    xyf: Option<(usize, usize, usize)>,
    shots: usize,
    victims: usize,
    robots: Vec<usize>,
    smoke_region: Option<usize>,
    smoke_intensity: Option<usize>,
}

impl Columns {
    fn from_headers(h: &csv::StringRecord) -> Result<Self, TraceError> {
        let find = |name: &str| h.iter().position(|c| c.trim() == name);
        let need = |name: &'static str| find(name).ok_or(TraceError::MissingColumn(name));
        let region = find("region_id");
        let xyf = match (find("x"), find("y"), find("floor")) {
            (Some(x), Some(y), Some(f)) => Some((x, y, f)),
            _ => None,
        };
        if region.is_none() && xyf.is_none() {
            return Err(TraceError::MissingColumn("region_id"));
        }
        let robots = (1..=8)
            .map_while(|i| find(&format!("robot{i}_region")))
            .collect();
        Ok(Columns {
            episode: need("episode_id")?,
            tick: need("tick")?,
            region,
            xyf,
            shots: need("shots_cum")?,
            victims: need("victims_cum")?,
            robots,
            smoke_region: find("smoke_region"),
            smoke_intensity: find("smoke_intensity"),
        })
    }
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize) -> &'a str {
    rec.get(i).unwrap_or("").trim()
}

fn parse_num<T: std::str::FromStr>(s: &str, row: usize, what: &str) -> Result<T, TraceError>
where
    T::Err: fmt::Display,
{
    s.parse::<T>().map_err(|e| TraceError::Malformed {
        row,
        msg: format!("bad {what} {s:?}: {e}"),
    })
}

fn nearest_region(graph: &RegionGraph, x: f64, y: f64, floor: i32) -> Option<u32> {
    graph
        .regions()
        .iter()
        .filter(|r| r.floor == floor)
        .map(|r| ((r.centroid[0] - x).hypot(r.centroid[1] - y), r.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

/// Parse a trace CSV. Row numbers in errors are 1-based data rows (the header
/// is row 0). Records come back grouped by episode (first-appearance order)
/// and sorted by tick.
pub fn parse_trace(bytes: &[u8], graph: &RegionGraph) -> Result<Vec<TickRecord>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let headers = match rdr.headers() {
        Ok(h) if !h.is_empty() => h.clone(),
        _ => {
            log::warn!("empty trace document");
            return Ok(Vec::new());
        }
    };
    let cols = Columns::from_headers(&headers)?;
    let mut order: Vec<String> = Vec::new();
    let mut by_episode: BTreeMap<String, Vec<(usize, TickRecord)>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let episode_id = field(&rec, cols.episode).to_string();
        if episode_id.is_empty() {
            return Err(TraceError::Malformed { row, msg: "empty episode_id".into() });
        }
        let tick: u64 = parse_num(field(&rec, cols.tick), row, "tick")?;
        let region_id = match cols.region.map(|c| field(&rec, c)).filter(|s| !s.is_empty()) {
            Some(s) => {
                let id: u32 = parse_num(s, row, "region_id")?;
                graph.index_of(id).map_err(|_| TraceError::UnknownRegion { row, id })?;
                id
            }
            None => {
                let (xc, yc, fc) = cols.xyf.ok_or(TraceError::Malformed {
                    row,
                    msg: "no region_id and no position".into(),
                })?;
                let x: f64 = parse_num(field(&rec, xc), row, "x")?;
                let y: f64 = parse_num(field(&rec, yc), row, "y")?;
                let f: i32 = parse_num(field(&rec, fc), row, "floor")?;
                nearest_region(graph, x, y, f).ok_or(TraceError::Malformed {
                    row,
                    msg: format!("no region on floor {f}"),
                })?
            }
        };
        let shots_cum: f64 = parse_num(field(&rec, cols.shots), row, "shots_cum")?;
        let victims_cum: f64 = parse_num(field(&rec, cols.victims), row, "victims_cum")?;
        if shots_cum < 0.0 || victims_cum < 0.0 {
            return Err(TraceError::Malformed { row, msg: "negative counter".into() });
        }
        let mut robot_regions = Vec::new();
        for &c in &cols.robots {
            let s = field(&rec, c);
            if !s.is_empty() {
                let id: u32 = parse_num(s, row, "robot region")?;
                graph.index_of(id).map_err(|_| TraceError::UnknownRegion { row, id })?;
                robot_regions.push(id);
            }
        }
        let mut smoke = Vec::new();
        if let (Some(rc), Some(ic)) = (cols.smoke_region, cols.smoke_intensity) {
            let (rs, is) = (field(&rec, rc), field(&rec, ic));
            if !rs.is_empty() {
                let regions: Vec<&str> = rs.split(';').collect();
                let intens: Vec<&str> = is.split(';').collect();
                if regions.len() != intens.len() {
                    return Err(TraceError::Malformed {
                        row,
                        msg: "smoke_region and smoke_intensity lists differ in length".into(),
                    });
                }
                for (r, v) in regions.iter().zip(&intens) {
                    let id: u32 = parse_num(r.trim(), row, "smoke region")?;
                    graph.index_of(id).map_err(|_| TraceError::UnknownRegion { row, id })?;
                    let intensity: f64 = parse_num(v.trim(), row, "smoke intensity")?;
                    if intensity < 0.0 {
                        return Err(TraceError::Malformed { row, msg: "negative smoke intensity".into() });
                    }
                    smoke.push(SmokeDeposit { region_id: id, intensity });
                }
            }
        }
        if !by_episode.contains_key(&episode_id) {
            order.push(episode_id.clone());
        }
        by_episode.entry(episode_id.clone()).or_default().push((
            row,
            TickRecord {
                episode_id,
                tick,
                region_id,
                shots_cum,
                victims_cum,
                robot_regions,
                smoke,
            },
        ));
    }
    let mut out = Vec::new();
    for ep in order {
        let mut rows = by_episode.remove(&ep).unwrap_or_default();
        rows.sort_by_key(|(_, t)| t.tick);
        for w in rows.windows(2) {
            let ((_, a), (row, b)) = (&w[0], &w[1]);
            if a.tick == b.tick {
                return Err(TraceError::DuplicateTick { row: *row, episode: ep.clone(), tick: b.tick });
            }
            for (column, prev, now) in [
                ("shots_cum", a.shots_cum, b.shots_cum),
                ("victims_cum", a.victims_cum, b.victims_cum),
            ] {
                if now < prev {
                    return Err(TraceError::DecreasingCounter {
                        row: *row,
                        episode: ep.clone(),
                        column,
                        prev,
                        now,
                    });
                }
            }
        }
        out.extend(rows.into_iter().map(|(_, t)| t));
    }
    Ok(out)
}

/// Collapse consecutive same-region ticks into visits. The final run of each
/// episode is closed at the last tick.
pub fn extract_visits(ticks: &[TickRecord]) -> Corpus {
    let mut corpus = Corpus::new(Provenance::Ingested, Condition::Baseline);
    let mut robots_seen = false;
    let mut start = 0;
    while start < ticks.len() {
        let ep = &ticks[start].episode_id;
        let mut end = start;
        while end < ticks.len() && &ticks[end].episode_id == ep {
            end += 1;
        }
        let rows = &ticks[start..end];
        let mut visits = Vec::new();
        let (mut prev_shots, mut prev_victims) = (0.0, 0.0);
        let mut i = 0;
        while i < rows.len() {
            let mut j = i;
            while j < rows.len() && rows[j].region_id == rows[i].region_id {
                j += 1;
            }
            let last = &rows[j - 1];
            robots_seen |= !rows[i].robot_regions.is_empty() || !rows[i].smoke.is_empty();
            visits.push(VisitEvent {
                episode_id: ep.clone(),
                seq: visits.len(),
                region_id: rows[i].region_id,
                dwell_s: (j - i) as f64 * TICK_SECONDS,
                shots: last.shots_cum - prev_shots,
                victims: last.victims_cum - prev_victims,
                robot_influence: 0.0,
                smoke: rows[i].smoke.clone(),
                robot_regions: rows[i].robot_regions.clone(),
            });
            prev_shots = last.shots_cum;
            prev_victims = last.victims_cum;
            i = j;
        }
        corpus.episodes.push(Episode {
            id: ep.clone(),
            outcomes_known: true,
            visits,
        });
        start = end;
    }
    if robots_seen {
        corpus.condition = Condition::RobotPresent;
    }
    corpus
}

/// Parse the visit-level CSV (`episode_id,seq,region_id,dwell_s,shots,victims`
/// plus an optional `R` column). Rows with an empty `dwell_s` mark their
/// episode as a pure region sequence (`outcomes_known = false`).
pub fn parse_visits(bytes: &[u8], graph: &RegionGraph) -> Result<Corpus, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(bytes);
    let h = rdr.headers()?.clone();
    let find = |name: &str| h.iter().position(|c| c.trim() == name);
    let need = |name: &'static str| find(name).ok_or(TraceError::MissingColumn(name));
    let (ce, cs, cr) = (need("episode_id")?, need("seq")?, need("region_id")?);
    let (cd, csh, cv) = (find("dwell_s"), find("shots"), find("victims"));
    let c_r = find("R");
    let mut order = Vec::new();
    let mut eps: BTreeMap<String, Episode> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let id = field(&rec, ce).to_string();
        let seq: usize = parse_num(field(&rec, cs), row, "seq")?;
        let region_id: u32 = parse_num(field(&rec, cr), row, "region_id")?;
        graph
            .index_of(region_id)
            .map_err(|_| TraceError::UnknownRegion { row, id: region_id })?;
        let opt = |c: Option<usize>, what: &str| -> Result<Option<f64>, TraceError> {
            match c.map(|c| field(&rec, c)).filter(|s| !s.is_empty() && *s != "null") {
                Some(s) => parse_num(s, row, what).map(Some),
                None => Ok(None),
            }
        };
        let dwell = opt(cd, "dwell_s")?;
        let shots = opt(csh, "shots")?.unwrap_or(0.0);
        let victims = opt(cv, "victims")?.unwrap_or(0.0);
        let r = opt(c_r, "R")?.unwrap_or(0.0);
        if dwell.is_some_and(|d| d <= 0.0) || shots < 0.0 || victims < 0.0 || r < 0.0 {
            return Err(TraceError::Malformed { row, msg: "outcomes must be non-negative and dwell positive".into() });
        }
        let ep = eps.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Episode {
                id: id.clone(),
                outcomes_known: true,
                visits: Vec::new(),
            }
        });
        if seq != ep.visits.len() {
            return Err(TraceError::Malformed {
                row,
                msg: format!("seq {seq} out of order (expected {})", ep.visits.len()),
            });
        }
        ep.outcomes_known &= dwell.is_some();
        ep.visits.push(VisitEvent {
            episode_id: id,
            seq,
            region_id,
            dwell_s: dwell.unwrap_or(0.0),
            shots,
            victims,
            robot_influence: r,
            smoke: Vec::new(),
            robot_regions: Vec::new(),
        });
    }
    let mut corpus = Corpus::new(Provenance::Ingested, Condition::Baseline);
    corpus.episodes = order.into_iter().filter_map(|id| eps.remove(&id)).collect();
    if corpus.visits().any(|v| v.robot_influence > 0.0) {
        corpus.condition = Condition::RobotPresent;
    }
    Ok(corpus)
}

/// Outcome metric of a visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Time,
    Shots,
    Victims,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Time, Metric::Shots, Metric::Victims];

    pub fn of(self, v: &VisitEvent) -> f64 {
        match self {
            Metric::Time => v.dwell_s,
            Metric::Shots => v.shots,
            Metric::Victims => v.victims,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Time => "time",
            Metric::Shots => "shots",
            Metric::Victims => "victims",
        }
    }
}

/// Pooling level for outcome moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Region,
    Group,
    Global,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Region, Level::Group, Level::Global];

    pub fn name(self) -> &'static str {
        match self {
            Level::Region => "region",
            Level::Group => "group",
            Level::Global => "global",
        }
    }
}

/// Count, mean, sample variance (n-1 denominator), and max of one outcome.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
    pub max: f64,
}

impl Moments {
    /// Order-independent: samples are sorted before summation.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Moments::default();
        }
        let mut xs = samples.to_vec();
        xs.sort_by(f64::total_cmp);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            let mut dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
            dev.sort_by(f64::total_cmp);
            dev.iter().sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Moments {
            n,
            mean,
            var,
            max: xs[n - 1],
        }
    }
}

/// Pooled statistics of one cell (a region, a group, or everything).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CellStats {
    pub time: Moments,
    pub shots: Moments,
    pub victims: Moments,
    /// Total shots / total dwell (shots per second).
    pub shot_rate: f64,
    /// Total victims / total dwell.
    pub victim_rate: f64,
    /// Largest per-episode victim total observed in one region of the cell.
    #[serde(default)]
    pub victim_budget: f64,
}

impl CellStats {
    fn from_visits(visits: &[&VisitEvent]) -> Self {
        let col = |m: Metric| -> Vec<f64> { visits.iter().map(|v| m.of(v)).collect() };
        let (t, s, v) = (col(Metric::Time), col(Metric::Shots), col(Metric::Victims));
        let sorted_sum = |xs: &[f64]| {
            let mut y = xs.to_vec();
            y.sort_by(f64::total_cmp);
            y.iter().sum::<f64>()
        };
        let total_t = sorted_sum(&t);
        let rate = |xs: &[f64]| if total_t > 0.0 { sorted_sum(xs) / total_t } else { 0.0 };
        CellStats {
            time: Moments::from_samples(&t),
            shots: Moments::from_samples(&s),
            victims: Moments::from_samples(&v),
            shot_rate: rate(&s),
            victim_rate: rate(&v),
            victim_budget: 0.0,
        }
    }

    pub fn metric(&self, m: Metric) -> &Moments {
        match m {
            Metric::Time => &self.time,
            Metric::Shots => &self.shots,
            Metric::Victims => &self.victims,
        }
    }

    pub fn n(&self) -> usize {
        self.time.n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCell {
    pub id: u32,
    pub group: RegionGroup,
    #[serde(flatten)]
    pub stats: CellStats,
}

/// Region-, group-, and global-level outcome moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    /// Indexed like the graph's regions (ascending id).
    pub region: Vec<RegionCell>,
    pub group: BTreeMap<RegionGroup, CellStats>,
    pub global: CellStats,
}

impl MomentTable {
    pub fn region_stats(&self, idx: usize) -> &CellStats {
        &self.region[idx].stats
    }

    pub fn group_stats(&self, g: RegionGroup) -> CellStats {
        self.group.get(&g).copied().unwrap_or_default()
    }

    pub fn cell(&self, idx: usize, level: Level) -> CellStats {
        match level {
            Level::Region => self.region[idx].stats,
            Level::Group => self.group_stats(self.region[idx].group),
            Level::Global => self.global,
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

/// Pool visit outcomes at region, group, and global level. Episodes without
/// known outcomes are skipped.
pub fn pool_moments(corpus: &Corpus, graph: &RegionGraph) -> MomentTable {
    let n = graph.len();
    let mut per_region: Vec<Vec<&VisitEvent>> = vec![Vec::new(); n];
    let mut budget = vec![0.0f64; n];
    for e in corpus.episodes.iter().filter(|e| e.outcomes_known) {
        let mut totals = vec![0.0f64; n];
        for v in &e.visits {
            if let Ok(i) = graph.index_of(v.region_id) {
                per_region[i].push(v);
                totals[i] += v.victims;
            }
        }
        for (b, t) in budget.iter_mut().zip(totals) {
            *b = b.max(t);
        }
    }
    let mut per_group: BTreeMap<RegionGroup, Vec<&VisitEvent>> = BTreeMap::new();
    let mut group_budget: BTreeMap<RegionGroup, f64> = BTreeMap::new();
    let mut all = Vec::new();
    for (i, vs) in per_region.iter().enumerate() {
        let g = graph.region(i).group;
        per_group.entry(g).or_default().extend(vs);
        let gb = group_budget.entry(g).or_insert(0.0);
        *gb = gb.max(budget[i]);
        all.extend(vs);
    }
    let with_budget = |mut c: CellStats, b: f64| {
        c.victim_budget = b;
        c
    };
    MomentTable {
        region: per_region
            .iter()
            .enumerate()
            .map(|(i, vs)| RegionCell {
                id: graph.id_of(i),
                group: graph.region(i).group,
                stats: with_budget(CellStats::from_visits(vs), budget[i]),
            })
            .collect(),
        group: RegionGroup::ALL
            .iter()
            .map(|g| {
                let cell = CellStats::from_visits(per_group.get(g).map_or(&[][..], |v| v));
                (*g, with_budget(cell, group_budget.get(g).copied().unwrap_or(0.0)))
            })
            .collect(),
        global: with_budget(CellStats::from_visits(&all), budget.iter().copied().fold(0.0, f64::max)),
    }
}

/// Episode-level k-fold split. Each episode lands in exactly one test fold;
/// fold sizes differ by at most one.
pub fn kfold_split(corpus: &Corpus, k: usize, seed: u64) -> Result<Vec<(Corpus, Corpus)>, SplitError> {
    if k < 2 {
        return Err(SplitError::TooFewFolds(k));
    }
    let n = corpus.len();
    if k > n {
        return Err(SplitError::TooManyFolds { k, episodes: n });
    }
    let folds = fold_assignment(n, k, seed);
    Ok(folds
        .iter()
        .map(|test| {
            let mut train: Vec<usize> = (0..n).filter(|i| !test.contains(i)).collect();
            train.sort_unstable();
            let mut test = test.clone();
            test.sort_unstable();
            (corpus.subset(&train), corpus.subset(&test))
        })
        .collect())
}

/// Shuffled partition of `0..n` into `k` nearly equal folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, "kfold", 0));
    let (base, extra) = (n / k, n % k);
    let mut out = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        out.push(idx[at..at + size].to_vec());
        at += size;
    }
    out
}
