//! One function per subcommand. Each reads its prerequisites through a
//! [`Run`], writes artifacts under the output directory and returns a short
//! human summary for stdout.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use regionsim::ddqn::{self, curve_csv, DdqnPolicy};
use regionsim::effects::{assign_influence, calibrate_lambda, fit_coeffs, EffectModel};
use regionsim::engine::{batch_rollout, RobotPolicy, RolloutLog, StayPolicy, World, VISIT_CSV_HEADER};
use regionsim::events::{diagnostics_csv, EventModel, VariantKind};
use regionsim::features::{Feature, FeatureRegistry, Heuristic};
use regionsim::graph::RegionGraph;
use regionsim::policy::{HeuristicPolicy, Strategy};
use regionsim::rng::derive_seed;
use regionsim::sage::ScorerConfig;
use regionsim::stats::{self, fidelity_report, FidelityInput, FidelityReport, StrategyRow};
use regionsim::synth::{school_graph, school_world, synth_corpus};
use regionsim::trace::{extract_visits, parse_trace, parse_visits, pool_moments, Condition, Corpus, Provenance};
use regionsim::transition::{compare_models, greedy_select, train_scorer, TransitionModel};

use crate::artifacts::{Artifact, Run};
use crate::config::RunConfig;
use crate::error::CliError;

fn load_graph(run: &mut Run, cfg: &RunConfig) -> Result<RegionGraph, CliError> {
    let p = run.require(Artifact::Layout, cfg.paths.layout.as_deref())?;
    let bytes = run.read_bytes(&p)?;
    Ok(RegionGraph::load_layout(&bytes)?)
}

fn load_corpus(run: &mut Run, a: Artifact, over: Option<&Path>) -> Result<Corpus, CliError> {
    run.load(a, over)
}

fn parse_features(names: &[String]) -> Result<Vec<Feature>, CliError> {
    names.iter().map(|n| Feature::from_str(n).map_err(CliError::from)).collect()
}

fn parse_condition(s: &str) -> Result<Condition, CliError> {
    match s.trim() {
        "" | "baseline" => Ok(Condition::Baseline),
        "robot" | "robot-present" => Ok(Condition::RobotPresent),
        other => Err(CliError::Invalid(format!("unknown condition {other:?} (baseline or robot)"))),
    }
}

fn corpus_artifact(c: Condition) -> Artifact {
    match c {
        Condition::Baseline => Artifact::Baseline,
        Condition::RobotPresent => Artifact::Robot,
    }
}

fn corpus_stem(c: Condition) -> &'static str {
    match c {
        Condition::Baseline => "baseline",
        Condition::RobotPresent => "robot",
    }
}

fn write_corpus(run: &mut Run, corpus: &Corpus) -> Result<(), CliError> {
    let stem = corpus_stem(corpus.condition);
    run.write_json(corpus_artifact(corpus.condition).rel_path(), corpus)?;
    run.write_text(&format!("corpus/{stem}_visits.csv"), &corpus.to_visits_csv())?;
    Ok(())
}

/// Selected feature names written by `select-features`.
#[derive(Debug, Serialize, Deserialize)]
struct FeatureChoice {
    features: Vec<Feature>,
    selection: regionsim::transition::Selection,
}

pub fn ingest(run: &mut Run, cfg: &RunConfig) -> Result<String, CliError> {
    let layout = cfg
        .paths
        .layout
        .as_deref()
        .ok_or_else(|| CliError::Config("ingest needs a layout (--layout or [paths] layout)".into()))?;
    if !layout.is_file() {
        return Err(CliError::Invalid(format!("layout {} does not exist", layout.display())));
    }
    let bytes = run.read_bytes(layout)?;
    let graph = RegionGraph::load_layout(&bytes)?;
    let condition = parse_condition(&cfg.ingest.condition)?;
    let ing = &cfg.ingest;
    if ing.ticks.is_empty() == ing.visits.is_empty() {
        return Err(CliError::Config("give either tick traces or visit files, not both or neither".into()));
    }
    let mut corpus = Corpus::new(Provenance::Ingested, condition);
    if !ing.ticks.is_empty() {
        let mut ticks = Vec::new();
        for p in &ing.ticks {
            let b = run.read_bytes(p)?;
            ticks.extend(parse_trace(&b, &graph)?);
        }
        corpus.episodes = extract_visits(&ticks).episodes;
    } else {
        for p in &ing.visits {
            let b = run.read_bytes(p)?;
            corpus.episodes.extend(parse_visits(&b, &graph)?.episodes);
        }
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = corpus.episodes.iter().find(|e| !seen.insert(e.id.clone())) {
        return Err(CliError::Invalid(format!("episode {:?} appears in more than one input", dup.id)));
    }
    run.write_json(Artifact::Layout.rel_path(), &graph.to_doc())?;
    write_corpus(run, &corpus)?;
    Ok(format!(
        "ingested {} episodes ({} visits) as {} corpus",
        corpus.len(),
        corpus.visit_count(),
        corpus_stem(condition)
    ))
}

pub fn synth(run: &mut Run, cfg: &RunConfig) -> Result<String, CliError> {
    let seed = cfg.require_seed("synth")?;
    let g = school_graph();
    let planted = school_world(&g);
    run.write_json(Artifact::Layout.rel_path(), &g.to_doc())?;
    run.write_json("synth/planted_transition.json", &planted.transition)?;
    let base = synth_corpus(&g, &planted, derive_seed(seed, "corpus", 0), cfg.synth.episodes, Condition::Baseline)?;
    write_corpus(run, &base)?;
    let mut msg = format!("synthesised {} baseline episodes", base.len());
    if cfg.synth.robot_episodes > 0 {
        let robot =
            synth_corpus(&g, &planted, derive_seed(seed, "corpus", 1), cfg.synth.robot_episodes, Condition::RobotPresent)?;
        write_corpus(run, &robot)?;
        msg.push_str(&format!(" and {} robot-present episodes", robot.len()));
    }
    Ok(msg)
}

fn transition_features(run: &mut Run, cfg: &RunConfig) -> Result<Vec<Feature>, CliError> {
    if !cfg.transition.features.is_empty() {
        return parse_features(&cfg.transition.features);
    }
    let p = run.path(Artifact::Features);
    if p.is_file() {
        let choice: FeatureChoice = run.read_json(&p)?;
        run.note(format!("features taken from {}", p.display()));
        return Ok(choice.features);
    }
    Ok(Feature::SELECTED.to_vec())
}

fn scorer_config(cfg: &RunConfig, seed: u64, stream: &str) -> ScorerConfig {
    ScorerConfig { seed: derive_seed(seed, stream, 0), ..cfg.transition.scorer }
}

pub fn train_transition(run: &mut Run, cfg: &RunConfig) -> Result<String, CliError> {
    let seed = cfg.require_seed("train-transition")?;
    let g = load_graph(run, cfg)?;
    let corpus = load_corpus(run, Artifact::Baseline, cfg.paths.baseline.as_deref())?;
    let features = transition_features(run, cfg)?;
    let (model, log) = train_scorer(&corpus, None, &g, &features, &scorer_config(cfg, seed, "training"))?;
    let mut csv = String::from("epoch,train_loss,val_loss,lr\n");
    for e in &log {
        csv.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.lr));
    }
    run.write_text(Artifact::Transition.rel_path(), &model.to_json().map_err(|e| CliError::json(Path::new("transition"), e))?)?;
    run.write_text("models/transition_log.csv", &csv)?;
    let names: Vec<&str> = features.iter().map(|f| f.name()).collect();
    Ok(format!("trained scorer on {} episodes, {} epochs, features {}", corpus.len(), log.len(), names.join(", ")))
}

pub fn select_features(run: &mut Run, cfg: &RunConfig) -> Result<String, CliError> {
    let seed = cfg.require_seed("select-features")?;
    let g = load_graph(run, cfg)?;
    let corpus = load_corpus(run, Artifact::Baseline, cfg.paths.baseline.as_deref())?;
    let sc = if cfg.transition.select_reduced {
        ScorerConfig::reduced(derive_seed(seed, "selection", 0))
    } else {
        scorer_config(cfg, seed, "selection")
    };
    let sel = greedy_select(&corpus, &FeatureRegistry::full(), &g, cfg.transition.select_k, cfg.transition.folds, &sc)?;
    let features = sel.selected();
    run.write_text("models/selection_stages.csv", &sel.stages_csv())?;
    run.write_text("models/selection_combos.csv", &sel.combos_csv())?;
    let names: Vec<&str> = features.iter().map(|f| f.name()).collect();
    run.write_json(Artifact::Features.rel_path(), &FeatureChoice { features: features.clone(), selection: sel })?;
    Ok(format!("selected {}", names.join(", ")))
}

pub fn fit_events(run: &mut Run, cfg: &RunConfig) -> Result<String, CliError> {
    let g = load_graph(run, cfg)?;
    let corpus = load_corpus(run, Artifact::Baseline, cfg.paths.baseline.as_deref())?;
    let variant = VariantKind::from_str(&cfg.events.variant)?;
    let model = EventModel::new(pool_moments(&corpus, &g), cfg.events.n_min, variant);
    let diag = model.diagnostics(cfg.sim.engine.t_max)?;
    run.write_json(Artifact::Events.rel_path(), &model)?;
    run.write_text("models/events_diagnostics.csv", &diagnostics_csv(&diag))?;
    Ok(format!("fitted {variant} event model on {} visits", corpus.visit_count()))
}

pub fn fit_effects(run: &mut Run, cfg: &RunConfig) -> Result<String, CliError> {
    let g = load_graph(run, cfg)?;
    let events: EventModel = run.load(Artifact::Events, None)?;
    let mut robot = load_corpus(run, Artifact::Robot, cfg.paths.robot.as_deref())?;
    let e = &cfg.effects;
    let lambda = match e.lambda {
        Some(l) => l,
        None => {
            let seed = cfg.require_seed("fit-effects")?;
            let cal = calibrate_lambda(&events.table, &robot, &g, &e.grid, e.tau, events.n_min, derive_seed(seed, "calibration", 0))?;
            let mut csv = String::from("lambda,score\n");
            for (l, s) in &cal.scores {
                csv.push_str(&format!("{l},{s}\n"));
            }
            csv.push_str(&format!("null,{}\n", cal.null_score));
            run.write_text("models/lambda_calibration.csv", &csv)?;
            if cal.degenerate {
                run.note("lambda calibration degenerate: no grid value beat the zero-effect model");
            }
            cal.lambda
        }
    };
    assign_influence(&mut robot, &g, lambda);
    let model = fit_coeffs(&events.table, &robot, &g, lambda, e.tau, events.n_min)?;
    run.write_json(Artifact::Effects.rel_path(), &model)?;
    let mut csv = String::from("region,n,k_time,k_shots,k_victims,suppressed_time,suppressed_shots,suppressed_victims\n");
    for r in &model.regions {
        let [st, ss, sv] = r.suppressed;
        csv.push_str(&format!("{},{},{},{},{},{st},{ss},{sv}\n", r.region_id, r.n, r.k[0], r.k[1], r.k[2]));
    }
    run.write_text("models/effects_coeffs.csv", &csv)?;
    Ok(format!("fitted robot effects at lambda = {lambda} over {} visits", robot.visit_count()))
}

/// Per-episode totals for one simulated condition.
#[derive(Debug, Serialize, Deserialize)]
pub struct SimResult {
    pub policy: String,
    pub label: String,
    pub multi_floor: bool,
    pub episodes: usize,
    pub seed: u64,
    pub row: StrategyRow,
    pub baseline: StrategyRow,
    pub victims: Vec<f64>,
    pub shots: Vec<f64>,
    pub nodes: Vec<usize>,
}

fn visits_csv(logs: &[RolloutLog]) -> String {
    let mut s = String::from(VISIT_CSV_HEADER);
    for l in logs {
        l.csv_rows(&mut s);
    }
    s
}

fn victims(logs: &[RolloutLog]) -> Vec<f64> {
    logs.iter().map(|l| l.summary.victims).collect()
}

pub fn simulate(run: &mut Run, cfg: &RunConfig) -> Result<String, CliError> {
    let seed = cfg.require_seed("simulate")?;
    let g = load_graph(run, cfg)?;
    let transition: TransitionModel = run.load(Artifact::Transition, None)?;
    let mut events: EventModel = run.load(Artifact::Events, None)?;
    if let Some(v) = &cfg.sim.variant {
        events.variant = VariantKind::from_str(v)?;
        run.note(format!("event-model variant overridden to {v}"));
    }
    let policy_name = cfg.sim.policy.trim().to_string();
    let robots_wanted = policy_name != Strategy::NoRobots.name();
    let effects: Option<EffectModel> = if robots_wanted { Some(run.load(Artifact::Effects, None)?) } else { None };
    let policy: Box<dyn RobotPolicy> = match policy_name.as_str() {
        "ddqn" => Box::new(run.load::<DdqnPolicy>(Artifact::Ddqn, None)?),
        other => Box::new(HeuristicPolicy::new(Strategy::from_str(other)?, effects.as_ref())?),
    };
    let n = cfg.sim.episodes;
    let rollout_seed = derive_seed(seed, "rollout", 0);
    let mut none_cfg = cfg.sim.engine.clone();
    none_cfg.robots = 0;
    none_cfg.robot_starts.clear();
    let none_world = World { graph: &g, transition: &transition, outcomes: &events, effects: None, config: none_cfg };
    let base_logs = batch_rollout(&none_world, &StayPolicy, n, rollout_seed, cfg.workers)?;
    let base_v = victims(&base_logs);
    let baseline = stats::strategy_row(Strategy::NoRobots.label(), &base_v, None);

    let engine = cfg.sim.engine.clone();
    let multi = engine.multi_floor;
    let logs = if robots_wanted {
        let world = World { graph: &g, transition: &transition, outcomes: &events, effects: effects.as_ref(), config: engine };
        batch_rollout(&world, policy.as_ref(), n, rollout_seed, cfg.workers)?
    } else {
        base_logs.clone()
    };
    let v = victims(&logs);
    let label = match Strategy::from_str(&policy_name) {
        Ok(s) => s.label().to_string(),
        Err(_) => "Learned policy (DDQN)".to_string(),
    };
    let floor_tag = if multi { "multi-floor" } else { "single-floor" };
    let label = if robots_wanted { format!("{label} ({floor_tag})") } else { label };
    let row = stats::strategy_row(&label, &v, Some(baseline.victims.mean));
    let stem = if robots_wanted { format!("{policy_name}-{floor_tag}") } else { policy_name.clone() };
    let mut rows = vec![baseline.clone()];
    if robots_wanted {
        rows.push(row.clone());
    }
    run.write_text(&format!("sim/{stem}.csv"), &stats::strategy_table_csv(&rows))?;
    run.write_text(&format!("sim/{stem}_visits.csv"), &visits_csv(&logs))?;
    let result = SimResult {
        policy: policy_name,
        label,
        multi_floor: multi,
        episodes: n,
        seed: rollout_seed,
        row: row.clone(),
        baseline,
        shots: logs.iter().map(|l| l.summary.shots).collect(),
        nodes: logs.iter().map(|l| l.summary.nodes).collect(),
        victims: v,
    };
    run.write_json(&format!("sim/{stem}.json"), &result)?;
    let delta = row.delta_pct.map(|d| format!("{d:+.1}%")).unwrap_or_else(|| "--".into());
    Ok(format!("{},{},{}", row.strategy, row.victims.render(2), delta))
}

fn generated_input(logs: &[RolloutLog], g: &RegionGraph) -> FidelityInput {
    let mut c = Corpus::new(Provenance::Synthetic, Condition::Baseline);
    c.episodes = logs.iter().map(|l| l.to_episode(&format!("gen{:05}", l.episode))).collect();
    FidelityInput::from_corpus(&c, g)
}

fn capitalise(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

pub fn evaluate(run: &mut Run, cfg: &RunConfig) -> Result<String, CliError> {
    let seed = cfg.require_seed("evaluate")?;
    let g = load_graph(run, cfg)?;
    let corpus = load_corpus(run, Artifact::Baseline, cfg.paths.baseline.as_deref())?;
    let transition: TransitionModel = run.load(Artifact::Transition, None)?;
    let events: EventModel = run.load(Artifact::Events, None)?;
    let variants: Vec<VariantKind> = if cfg.evaluate.variants.is_empty() || cfg.evaluate.variants.iter().any(|v| v == "all") {
        VariantKind::all()
    } else {
        cfg.evaluate.variants.iter().map(|v| VariantKind::from_str(v)).collect::<Result<_, _>>()?
    };
    let observed = FidelityInput::from_corpus(&corpus, &g);
    let mut engine = cfg.sim.engine.clone();
    engine.robots = 0;
    engine.robot_starts.clear();
    let mut reports: Vec<(String, String, FidelityReport)> = Vec::new();
    for (i, v) in variants.iter().enumerate() {
        let model = EventModel::new(events.table.clone(), events.n_min, *v);
        let world = World { graph: &g, transition: &transition, outcomes: &model, effects: None, config: engine.clone() };
        let logs = batch_rollout(&world, &StayPolicy, cfg.evaluate.episodes, derive_seed(seed, "rollout", i as u64), cfg.workers)?;
        let rep = fidelity_report(&generated_input(&logs, &g), &observed)?;
        reports.push((capitalise(v.level.name()), capitalise(v.generation.name()), rep));
    }
    let entries: Vec<(String, String, &FidelityReport)> = reports.iter().map(|(a, b, r)| (a.clone(), b.clone(), r)).collect();
    run.write_text("eval/outcome_table.csv", &stats::outcome_table_csv(&entries))?;
    run.write_text("eval/fidelity_table.csv", &stats::fidelity_table_csv(&entries))?;
    let json: Vec<serde_json::Value> = reports
        .iter()
        .map(|(p, v, r)| serde_json::json!({ "pooling": p, "variant": v, "report": r }))
        .collect();
    run.write_json("eval/fidelity.json", &json)?;
    run.note("observed episodes are the corpus the event model was fitted on");
    let mut msg = format!("evaluated {} variant(s) against {} observed episodes", variants.len(), corpus.len());
    if cfg.evaluate.models {
        let heur: Vec<Heuristic> =
            cfg.transition.heuristics.iter().map(|h| Heuristic::from_str(h)).collect::<Result<_, _>>()?;
        let features = transition_features(run, cfg)?;
        let cmp = compare_models(&corpus, &g, &features, &heur, cfg.transition.folds, &scorer_config(cfg, seed, "training"))?;
        run.write_text("eval/accuracy_plot.csv", &cmp.plot_csv())?;
        run.write_text("eval/accuracy_pairwise.csv", &cmp.pairwise_csv())?;
        run.write_json("eval/accuracy.json", &cmp)?;
        msg.push_str(&format!("; compared {} transition models", cmp.models.len()));
    }
    Ok(msg)
}

pub fn train_policy(run: &mut Run, cfg: &RunConfig) -> Result<String, CliError> {
    let seed = cfg.require_seed("train-policy")?;
    let g = load_graph(run, cfg)?;
    let transition: TransitionModel = run.load(Artifact::Transition, None)?;
    let events: EventModel = run.load(Artifact::Events, None)?;
    let effects: EffectModel = run.load(Artifact::Effects, None)?;
    let world = World { graph: &g, transition: &transition, outcomes: &events, effects: Some(&effects), config: cfg.sim.engine.clone() };
    let tc = ddqn::TrainConfig { seed: derive_seed(seed, "training", 1), ..cfg.policy.clone() };
    let (policy, curve) = ddqn::train(&world, &tc)?;
    run.write_text(Artifact::Ddqn.rel_path(), &policy.to_json().map_err(|e| CliError::json(Path::new("ddqn"), e))?)?;
    run.write_text("models/ddqn_curve.csv", &curve_csv(&curve))?;
    let last = curve.last().map(|c| c.victims).unwrap_or(f64::NAN);
    Ok(format!("trained DDQN for {} episodes (last logged victims {last:.2})", tc.episodes))
}

pub fn report(run: &mut Run, _cfg: &RunConfig) -> Result<String, CliError> {
    let mut md = String::from("# regionsim report\n");
    let mut sections = 0;
    let sim_dir = run.out.join("sim");
    let mut results: Vec<SimResult> = Vec::new();
    if let Ok(rd) = std::fs::read_dir(&sim_dir) {
        let mut paths: Vec<_> = rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "json")).collect();
        paths.sort();
        for p in paths {
            results.push(run.read_json(&p)?);
        }
    }
    if !results.is_empty() {
        // each row keeps the change against its own no-robot run
        let mut rows = vec![results[0].baseline.clone()];
        rows.extend(results.iter().filter(|r| r.policy != Strategy::NoRobots.name()).map(|r| r.row.clone()));
        let table = stats::strategy_table_csv(&rows);
        run.write_text("report/strategy_table.csv", &table)?;
        md.push_str("\n## Robot strategies (victims, change vs no robots)\n\n");
        md.push_str(&csv_to_markdown(&table));
        sections += 1;
    }
    for (rel, title) in [
        ("eval/outcome_table.csv", "Episode outcomes by event-model variant"),
        ("eval/fidelity_table.csv", "Spatial and temporal fidelity"),
        ("eval/accuracy_plot.csv", "Transition accuracy"),
        ("models/selection_stages.csv", "Greedy feature selection"),
    ] {
        let p = run.out.join(rel);
        if p.is_file() {
            let text = String::from_utf8_lossy(&run.read_bytes(&p)?).into_owned();
            md.push_str(&format!("\n## {title}\n\n"));
            md.push_str(&csv_to_markdown(&text));
            sections += 1;
        }
    }
    if sections == 0 {
        return Err(CliError::MissingArtifact { artifact: run.out.join("sim"), producer: "simulate" });
    }
    run.write_text("report/report.md", &md)?;
    Ok(format!("report with {sections} section(s)"))
}

fn csv_to_markdown(csv: &str) -> String {
    let mut lines = csv.lines();
    let Some(head) = lines.next() else { return String::new() };
    let cols = head.split(',').count();
    let mut s = format!("| {} |\n|{}\n", head.replace(',', " | "), "---|".repeat(cols));
    for l in lines {
        s.push_str(&format!("| {} |\n", l.replace(',', " | ")));
    }
    s
}
