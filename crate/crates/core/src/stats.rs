//! Statistical comparison tools: Welch and Levene tests, Jensen-Shannon
//! divergence, Spearman correlation, KDE diagnostics, and the fidelity
//! tables that compare generated with observed episodes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::RegionGraph;
use crate::special::{f_sf, student_t_ppf, student_t_two_sided};
use crate::trace::{Corpus, Metric};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} observations per sample (got {got})")]
    TooFew { need: usize, got: usize },
    #[error("histograms differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("negative or non-finite mass in histogram")]
    NegativeMass,
    #[error("histogram has zero total mass")]
    EmptyHistogram,
    #[error("constant input: correlation undefined")]
    Constant,
}

/// Significance stars for thresholds 0.05, 0.01, 0.001.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    /// Degrees of freedom (numerator df for Levene).
    pub df: f64,
    /// Denominator df for Levene.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df2: Option<f64>,
    pub p: f64,
    pub stars: String,
    /// Both samples had zero variance; an exact-equality check was used.
    #[serde(default)]
    pub degenerate: bool,
}

impl TestResult {
    fn new(statistic: f64, df: f64, df2: Option<f64>, p: f64) -> Self {
        let p = p.clamp(0.0, 1.0);
        TestResult { statistic, df, df2, p, stars: stars(p).to_string(), degenerate: false }
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance (n - 1 denominator).
pub fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn need2(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    let got = x.len().min(y.len());
    if got < 2 {
        Err(StatsError::TooFew { need: 2, got })
    } else {
        Ok(())
    }
}

/// Welch's unequal-variance t-test with Satterthwaite degrees of freedom.
pub fn welch_t(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    need2(x, y)?;
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let (m1, m2) = (mean(x), mean(y));
    let (v1, v2) = (var(x), var(y));
    let (a, b) = (v1 / n1, v2 / n2);
    if a + b == 0.0 {
        log::warn!("welch test on two constant samples; falling back to exact equality");
        let equal = m1 == m2;
        let mut r = TestResult::new(
            if equal { 0.0 } else { (m1 - m2).signum() * f64::INFINITY },
            n1 + n2 - 2.0,
            None,
            if equal { 1.0 } else { 0.0 },
        );
        r.degenerate = true;
        return Ok(r);
    }
    let t = (m1 - m2) / (a + b).sqrt();
    let df = (a + b).powi(2) / (a * a / (n1 - 1.0) + b * b / (n2 - 1.0));
    Ok(TestResult::new(t, df, None, student_t_two_sided(t, df)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Center {
    #[default]
    Mean,
    Median,
}

/// Levene's test for equal variances of two samples.
pub fn levene(x: &[f64], y: &[f64], center: Center) -> Result<TestResult, StatsError> {
    need2(x, y)?;
    let c = |s: &[f64]| match center {
        Center::Mean => mean(s),
        Center::Median => median(s),
    };
    let zx: Vec<f64> = {
        let cx = c(x);
        x.iter().map(|v| (v - cx).abs()).collect()
    };
    let zy: Vec<f64> = {
        let cy = c(y);
        y.iter().map(|v| (v - cy).abs()).collect()
    };
    let (n1, n2) = (zx.len() as f64, zy.len() as f64);
    let n = n1 + n2;
    let (mx, my) = (mean(&zx), mean(&zy));
    let grand = (zx.iter().sum::<f64>() + zy.iter().sum::<f64>()) / n;
    let between = n1 * (mx - grand).powi(2) + n2 * (my - grand).powi(2);
    let within = zx.iter().map(|z| (z - mx).powi(2)).sum::<f64>() + zy.iter().map(|z| (z - my).powi(2)).sum::<f64>();
    let (d1, d2) = (1.0, n - 2.0);
    if within == 0.0 {
        log::warn!("levene test with zero within-group spread; falling back to exact equality");
        let equal = between == 0.0;
        let mut r = TestResult::new(if equal { 0.0 } else { f64::INFINITY }, d1, Some(d2), if equal { 1.0 } else { 0.0 });
        r.degenerate = true;
        return Ok(r);
    }
    let w = (d2 / d1) * between / within;
    Ok(TestResult::new(w, d1, Some(d2), f_sf(w, d1, d2)))
}

fn normalize(p: &[f64]) -> Result<Vec<f64>, StatsError> {
    if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(StatsError::NegativeMass);
    }
    let s: f64 = p.iter().sum();
    if s <= 0.0 {
        return Err(StatsError::EmptyHistogram);
    }
    Ok(p.iter().map(|x| x / s).collect())
}

/// Jensen-Shannon divergence in bits. Inputs are renormalised.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64, StatsError> {
    if p.len() != q.len() {
        return Err(StatsError::LengthMismatch(p.len(), q.len()));
    }
    let (p, q) = (normalize(p)?, normalize(q)?);
    let mut d = 0.0;
    for (&a, &b) in p.iter().zip(&q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            d += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            d += 0.5 * b * (b / m).log2();
        }
    }
    Ok(d.clamp(0.0, 1.0))
}

/// Equal-width histogram over `[lo, hi]`; values outside are clamped to
/// the end bins.
pub fn histogram(x: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in x {
        let k = if width > 0.0 { ((v - lo) / width).floor() } else { 0.0 };
        h[(k.max(0.0) as usize).min(bins - 1)] += 1.0;
    }
    h
}

/// JSD between two samples binned into `bins` equal-width bins over the
/// range of `reference`.
pub fn jsd_binned(sample: &[f64], reference: &[f64], bins: usize) -> Result<f64, StatsError> {
    if sample.is_empty() || reference.is_empty() {
        return Err(StatsError::EmptyHistogram);
    }
    let lo = reference.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = reference.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    jsd(&histogram(sample, bins, lo, hi), &histogram(reference, bins, lo, hi))
}

/// Average ranks (1-based), ties share their mean rank.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Constant);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation (Pearson on mid-ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let got = x.len().min(y.len());
    if got < 3 || x.len() != y.len() {
        return Err(StatsError::TooFew { need: 3, got });
    }
    pearson(&midranks(x), &midranks(y))
}

/// Adjusted Fisher-Pearson sample skewness.
pub fn skewness(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = mean(x);
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    if m2 == 0.0 {
        return 0.0;
    }
    let g1 = m3 / m2.powf(1.5);
    g1 * (n * (n - 1.0)).sqrt() / (n - 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeDiag {
    pub peaks: usize,
    pub skewness: f64,
    pub bandwidth: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's normal-reference rule, `1.06 * min(sd, IQR / 1.34) * n^(-1/5)`.
pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let sd = var(x).sqrt();
    let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    1.06 * spread * (x.len() as f64).powf(-0.2)
}

/// Local maxima below this fraction of the highest density are tail
/// ripples from isolated samples and are not counted.
pub const PEAK_FLOOR: f64 = 0.02;

/// Gaussian KDE peak count on a 512-point grid and sample skewness.
/// Returns `None` for fewer than 5 samples.
pub fn kde_diag(x: &[f64]) -> Option<KdeDiag> {
    if x.len() < 5 {
        return None;
    }
    let bw = silverman_bandwidth(x);
    if !(bw > 0.0) {
        return Some(KdeDiag { peaks: 1, skewness: 0.0, bandwidth: 0.0 });
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * bw;
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * bw;
    let grid = 512;
    let dens: Vec<f64> = (0..grid)
        .map(|i| {
            let g = lo + (hi - lo) * i as f64 / (grid - 1) as f64;
            x.iter().map(|v| (-0.5 * ((g - v) / bw).powi(2)).exp()).sum::<f64>()
        })
        .collect();
    let top = dens.iter().copied().fold(0.0, f64::max);
    let peaks = (1..grid - 1)
        .filter(|&i| dens[i] > dens[i - 1] && dens[i] > dens[i + 1] && dens[i] >= PEAK_FLOOR * top)
        .count();
    Some(KdeDiag { peaks, skewness: skewness(x), bandwidth: bw })
}

/// Mean with a t-based 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

pub fn mean_ci(x: &[f64]) -> MeanCi {
    let n = x.len();
    if n == 0 {
        return MeanCi { mean: f64::NAN, sd: f64::NAN, lo: f64::NAN, hi: f64::NAN, n };
    }
    let m = mean(x);
    if n < 2 {
        return MeanCi { mean: m, sd: 0.0, lo: m, hi: m, n };
    }
    let sd = var(x).sqrt();
    let half = student_t_ppf(0.975, (n - 1) as f64) * sd / (n as f64).sqrt();
    MeanCi { mean: m, sd, lo: m - half, hi: m + half, n }
}

/// `M ± SD` of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(x: &[f64]) -> Self {
        MeanSd {
            mean: mean(x),
            sd: if x.len() > 1 { var(x).sqrt() } else { 0.0 },
        }
    }

    pub fn render(&self, decimals: usize) -> String {
        format!("{:.*} ± {:.*}", decimals, self.mean, decimals, self.sd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchColor {
    Green,
    Yellow,
    Red,
}

impl MatchColor {
    pub fn from_tests(mean_ok: bool, var_ok: bool) -> Self {
        match (mean_ok, var_ok) {
            (true, true) => MatchColor::Green,
            (false, false) => MatchColor::Red,
            _ => MatchColor::Yellow,
        }
    }
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "✓"
    } else {
        "✗"
    }
}

/// Per-episode totals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub nodes: f64,
    pub time: f64,
    pub shots: f64,
    pub victims: f64,
}

impl EpisodeSummary {
    pub fn column(rows: &[EpisodeSummary], k: usize) -> Vec<f64> {
        rows.iter()
            .map(|r| match k {
                0 => r.nodes,
                1 => r.time,
                2 => r.shots,
                _ => r.victims,
            })
            .collect()
    }
}

pub const OUTCOME_COLUMNS: [&str; 4] = ["nodes", "time", "shots", "victims"];

/// Everything the fidelity report needs from one side of the comparison.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FidelityInput {
    pub episodes: Vec<EpisodeSummary>,
    /// Per-region totals of time, shots, victims (indexed `[metric][region]`).
    pub spatial: [Vec<f64>; 3],
    /// Visit-level (dwell, shots, victims).
    pub visits: Vec<[f64; 3]>,
}

impl FidelityInput {
    pub fn from_corpus(corpus: &Corpus, graph: &RegionGraph) -> Self {
        let n = graph.len();
        let mut spatial = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut visits = Vec::new();
        let mut episodes = Vec::new();
        for e in corpus.episodes.iter().filter(|e| e.outcomes_known) {
            for v in &e.visits {
                if let Ok(i) = graph.index_of(v.region_id) {
                    for m in Metric::ALL {
                        spatial[m.index()][i] += m.of(v);
                    }
                }
                visits.push([v.dwell_s, v.shots, v.victims]);
            }
            episodes.push(EpisodeSummary {
                nodes: e.visits.len() as f64,
                time: e.total_dwell(),
                shots: e.total_shots(),
                victims: e.total_victims(),
            });
        }
        FidelityInput { episodes, spatial, visits }
    }

    /// Spearman correlations of dwell with shots and with victims.
    pub fn rho(&self) -> (Option<f64>, Option<f64>) {
        let t: Vec<f64> = self.visits.iter().map(|v| v[0]).collect();
        let s: Vec<f64> = self.visits.iter().map(|v| v[1]).collect();
        let v: Vec<f64> = self.visits.iter().map(|v| v[2]).collect();
        (spearman(&t, &s).ok(), spearman(&t, &v).ok())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub outcome: String,
    pub observed: MeanSd,
    pub generated: MeanSd,
    pub welch: TestResult,
    pub levene: TestResult,
    pub mean_match: bool,
    pub var_match: bool,
    pub color: MatchColor,
}

impl OutcomeRow {
    /// Table cell: `M ± SD` plus mean/variance marks.
    pub fn cell(&self) -> String {
        format!("{} {}{}", self.generated.render(1), mark(self.mean_match), mark(self.var_match))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub rows: Vec<OutcomeRow>,
    /// Spatial JSD for time, shots, victims.
    pub jsd: [f64; 3],
    pub rho_emp: [Option<f64>; 2],
    pub rho_model: [Option<f64>; 2],
    /// `rho_model - rho_emp` for (t, s) and (t, v).
    pub delta_rho: [Option<f64>; 2],
    pub n_generated: usize,
    pub n_observed: usize,
    pub spatial_method: String,
}

impl FidelityReport {
    pub fn row(&self, outcome: &str) -> Option<&OutcomeRow> {
        self.rows.iter().find(|r| r.outcome == outcome)
    }
}

const ALPHA: f64 = 0.05;

/// Compare generated and observed episodes: Welch and Levene per outcome
/// column, spatial JSD of per-region outcome shares, and Spearman
/// correlations of dwell with shots and victims.
pub fn fidelity_report(generated: &FidelityInput, observed: &FidelityInput) -> Result<FidelityReport, StatsError> {
    let mut rows = Vec::new();
    for (k, name) in OUTCOME_COLUMNS.iter().enumerate() {
        let g = EpisodeSummary::column(&generated.episodes, k);
        let o = EpisodeSummary::column(&observed.episodes, k);
        let welch = welch_t(&g, &o)?;
        let lev = levene(&g, &o, Center::Mean)?;
        let (mean_match, var_match) = (welch.p > ALPHA, lev.p > ALPHA);
        rows.push(OutcomeRow {
            outcome: (*name).to_string(),
            observed: MeanSd::of(&o),
            generated: MeanSd::of(&g),
            welch,
            levene: lev,
            mean_match,
            var_match,
            color: MatchColor::from_tests(mean_match, var_match),
        });
    }
    let mut js = [0.0; 3];
    for (m, slot) in js.iter_mut().enumerate() {
        *slot = match jsd(&generated.spatial[m], &observed.spatial[m]) {
            Ok(v) => v,
            Err(StatsError::EmptyHistogram) => {
                let ge = generated.spatial[m].iter().all(|&x| x == 0.0);
                let oe = observed.spatial[m].iter().all(|&x| x == 0.0);
                if ge && oe {
                    0.0
                } else {
                    1.0
                }
            }
            Err(e) => return Err(e),
        };
    }
    let (et, ev) = observed.rho();
    let (mt, mv) = generated.rho();
    let delta = |a: Option<f64>, b: Option<f64>| Some(a? - b?);
    Ok(FidelityReport {
        rows,
        jsd: js,
        rho_emp: [et, ev],
        rho_model: [mt, mv],
        delta_rho: [delta(mt, et), delta(mv, ev)],
        n_generated: generated.episodes.len(),
        n_observed: observed.episodes.len(),
        spatial_method: "per-region total-outcome share".into(),
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "NA".into())
}

/// Episode-outcome table rows: `pooling,variant,nodes,time,shots,victims`
/// with marks, then one color column per outcome. A leading reference row
/// holds the observed values.
pub fn outcome_table_csv(entries: &[(String, String, &FidelityReport)]) -> String {
    let mut s = String::from("pooling,variant,nodes,time,shots,victims,nodes_color,time_color,shots_color,victims_color\n");
    if let Some((_, _, first)) = entries.first() {
        let cells: Vec<String> = first.rows.iter().map(|r| r.observed.render(1)).collect();
        s.push_str(&format!("---,Participants,{},,,,\n", cells.join(",")));
    }
    for (pooling, variant, r) in entries {
        let cells: Vec<String> = r.rows.iter().map(|row| row.cell()).collect();
        let colors: Vec<String> = r
            .rows
            .iter()
            .map(|row| serde_json::to_value(row.color).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
            .collect();
        s.push_str(&format!("{pooling},{variant},{},{}\n", cells.join(","), colors.join(",")));
    }
    s
}

/// Spatial/temporal fidelity rows:
/// `pooling,variant,jsd_time,jsd_shots,jsd_victims,rho_ts,delta_rho_ts,rho_tv,delta_rho_tv`.
pub fn fidelity_table_csv(entries: &[(String, String, &FidelityReport)]) -> String {
    let mut s = String::from("pooling,variant,jsd_time,jsd_shots,jsd_victims,rho_ts,delta_rho_ts,rho_tv,delta_rho_tv\n");
    if let Some((_, _, first)) = entries.first() {
        s.push_str(&format!("---,Participants,,,,{},,{},\n", opt(first.rho_emp[0]), opt(first.rho_emp[1])));
    }
    for (pooling, variant, r) in entries {
        s.push_str(&format!(
            "{pooling},{variant},{:.3},{:.3},{:.3},{},{},{},{}\n",
            r.jsd[0],
            r.jsd[1],
            r.jsd[2],
            opt(r.rho_model[0]),
            opt(r.delta_rho[0]),
            opt(r.rho_model[1]),
            opt(r.delta_rho[1])
        ));
    }
    s
}

/// Bar-chart ready rows: `model,mean,ci_low,ci_high,stars` where stars mark
/// the Welch test of each model against `reference`.
pub fn accuracy_plot_csv(models: &[(String, Vec<f64>)], reference: &str) -> String {
    let refv = models.iter().find(|(n, _)| n == reference).map(|(_, v)| v.clone());
    let mut s = String::from("model,mean,ci_low,ci_high,stars\n");
    for (name, acc) in models {
        let ci = mean_ci(acc);
        let st = match &refv {
            Some(r) if name != reference => welch_t(acc, r).map(|t| t.stars).unwrap_or_default(),
            _ => String::new(),
        };
        s.push_str(&format!("{name},{:.4},{:.4},{:.4},{st}\n", ci.mean, ci.lo, ci.hi));
    }
    s
}

/// Pairwise Welch tests between every pair of models.
pub fn pairwise_welch(models: &[(String, Vec<f64>)]) -> Vec<(String, String, TestResult)> {
    let mut out = Vec::new();
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            if let Ok(t) = welch_t(&models[i].1, &models[j].1) {
                out.push((models[i].0.clone(), models[j].0.clone(), t));
            }
        }
    }
    out
}

/// One strategy row of the policy table: mean ± sd victims and the percent
/// change from the no-robot baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: String,
    pub victims: MeanSd,
    pub delta_pct: Option<f64>,
}

pub fn strategy_row(strategy: &str, victims: &[f64], baseline_mean: Option<f64>) -> StrategyRow {
    let v = MeanSd::of(victims);
    StrategyRow {
        strategy: strategy.to_string(),
        victims: v,
        delta_pct: baseline_mean.filter(|b| *b != 0.0).map(|b| 100.0 * (v.mean - b) / b),
    }
}

pub fn strategy_table_csv(rows: &[StrategyRow]) -> String {
    let mut s = String::from("strategy,victims,delta\n");
    for r in rows {
        let d = r.delta_pct.map(|d| format!("{d:.1}%")).unwrap_or_else(|| "--".into());
        s.push_str(&format!("{},{},{}\n", r.strategy, r.victims.render(2), d));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn welch_examples() {
        let r = welch_t(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.statistic, r.p), (0.0, 1.0));
        let r = welch_t(&[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!((r.statistic + 2.190_890_230_020_664_6).abs() < 1e-12);
        assert!((r.df - 6.0).abs() < 1e-12);
        let far: Vec<f64> = [1.0, 2.0, 3.0, 4.0].iter().map(|x| x + 1000.0).collect();
        assert!(welch_t(&[1.0, 2.0, 3.0, 4.0], &far).unwrap().p < 0.001);
        assert!(welch_t(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn constant_samples_fall_back() {
        let r = welch_t(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!(r.degenerate && r.p == 1.0);
        let r = welch_t(&[2.0, 2.0], &[3.0, 3.0]).unwrap();
        assert!(r.degenerate && r.p == 0.0);
        let r = levene(&[2.0, 2.0], &[3.0, 3.0], Center::Mean).unwrap();
        assert!(r.degenerate && r.p == 1.0);
    }

    #[test]
    fn levene_examples() {
        let x = [1.0, 2.0, 3.0];
        let r = levene(&x, &x, Center::Mean).unwrap();
        assert_eq!((r.statistic, r.p), (0.0, 1.0));
        let big: Vec<f64> = x.iter().map(|v| v * 10.0).collect();
        let a = levene(&big, &x, Center::Mean).unwrap();
        let b = levene(&x, &big, Center::Mean).unwrap();
        assert_eq!(a, b);
        // |z| groups {10,0,10} and {1,0,1}: between = 54, within = 202/3
        assert!((a.statistic - 648.0 / 202.0).abs() < 1e-12);
    }

    #[test]
    fn jsd_examples() {
        assert_eq!(jsd(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        let v = jsd(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        let hand = 0.5 * (1.0f64 / 0.75).log2() + 0.5 * (0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2());
        assert!((v - hand).abs() < 1e-15);
        assert!((v - 0.3113).abs() < 1e-4);
        assert_eq!(jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(jsd(&[1.0, -0.1], &[0.5, 0.5]), Err(StatsError::NegativeMass));
        assert!(jsd(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[2.0, 8.0, 9.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap() + 0.5).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(StatsError::Constant));
        assert_eq!(midranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn kde_examples() {
        assert_eq!(skewness(&[-2.0, -1.0, 0.0, 1.0, 2.0]), 0.0);
        assert!(kde_diag(&[1.0, 2.0, 3.0, 4.0]).is_none());
        let mut rng = crate::rng::stream_rng(1, "kde", 0);
        use rand_distr::{Distribution, Normal};
        let a: Vec<f64> = Normal::new(0.0, 1.0).unwrap().sample_iter(&mut rng).take(500).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 10.0).collect();
        let mix: Vec<f64> = a.iter().chain(&b).copied().collect();
        assert_eq!(kde_diag(&mix).unwrap().peaks, 2);
    }

    #[test]
    fn single_normal_has_one_peak_in_most_seeds() {
        use rand_distr::{Distribution, Normal};
        let ok = (0..100)
            .filter(|&s| {
                let mut rng = crate::rng::stream_rng(s, "kde1", 0);
                let x: Vec<f64> = Normal::new(5.0, 2.0).unwrap().sample_iter(&mut rng).take(1000).collect();
                kde_diag(&x).unwrap().peaks == 1
            })
            .count();
        assert!(ok as f64 >= 0.95 * 100.0, "{ok}/100");
    }

    #[test]
    fn rendering_and_delta_sign() {
        assert_eq!(MeanSd { mean: 93.7, sd: 42.3 }.render(1), "93.7 ± 42.3");
        let d: f64 = 0.490 - 0.515;
        assert!((d + 0.025).abs() < 1e-12);
        assert_eq!(stars(0.0005), "***");
        assert_eq!(stars(0.005), "**");
        assert_eq!(stars(0.03), "*");
        assert_eq!(stars(0.2), "");
        assert_eq!(MatchColor::from_tests(true, false), MatchColor::Yellow);
        let row = strategy_row("stay", &[20.0, 30.0], Some(31.15));
        assert!(row.delta_pct.unwrap() < 0.0);
    }

    #[test]
    fn ci_uses_t_quantile() {
        let ci = mean_ci(&[1.0, 2.0, 3.0, 4.0]);
        // t_{0.975,3} = 3.182446305284263
        let half = 3.182_446_305_284_263 * (5.0f64 / 3.0).sqrt() / 2.0;
        assert!((ci.hi - 2.5 - half).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn jsd_symmetric_and_bounded(p in proptest::collection::vec(0.0f64..1.0, 6), q in proptest::collection::vec(0.0f64..1.0, 6)) {
            prop_assume!(p.iter().sum::<f64>() > 0.0 && q.iter().sum::<f64>() > 0.0);
            let a = jsd(&p, &q).unwrap();
            let b = jsd(&q, &p).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(jsd(&p, &p).unwrap().abs() < 1e-12);
        }

        #[test]
        fn tests_ignore_order(x in proptest::collection::vec(-50.0f64..50.0, 3..20), y in proptest::collection::vec(-50.0f64..50.0, 3..20), rot in 0usize..20) {
            let mut xr = x.clone();
            let len = xr.len();
            xr.rotate_left(rot % len);
            xr.reverse();
            let (a, b) = (welch_t(&x, &y).unwrap(), welch_t(&xr, &y).unwrap());
            prop_assert!((a.p - b.p).abs() < 1e-9);
            let (a, b) = (levene(&x, &y, Center::Mean).unwrap(), levene(&xr, &y, Center::Mean).unwrap());
            prop_assert!((a.p - b.p).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&a.p));
        }

        #[test]
        fn spearman_monotone_invariance(x in proptest::collection::vec(-5.0f64..5.0, 4..30), y in proptest::collection::vec(-5.0f64..5.0, 30)) {
            let y = &y[..x.len()];
            if let Ok(r) = spearman(&x, y) {
                let tx: Vec<f64> = x.iter().map(|v| v.exp()).collect();
                let ty: Vec<f64> = y.iter().map(|v| v * 3.0 + v.powi(3)).collect();
                prop_assert!((spearman(&tx, &ty).unwrap() - r).abs() < 1e-12);
            }
        }
    }
}
