//! Double DQN over the joint action slots of two robots.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineError, RobotPolicy, Sim, TerminationReason, World, WorldState};
use crate::graph::RegionGraph;
use crate::policy::{default_alpha, masked_argmax, obs_vector, reward, ActionSet, PolicyError};
use crate::rng::{derive_seed, stream_rng, SimRng};
use crate::sage::{Adam, Dense};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DdqnError {
    #[error("learned policy needs exactly 2 robots (got {0})")]
    RobotCount(usize),
    #[error("training diverged at episode {episode}, step {step}: loss {loss}, max |q| {max_q}")]
    Diverged { episode: usize, step: usize, loss: f64, max_q: f64 },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Two-layer perceptron: `q = W2 relu(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNet {
    pub w1: Dense,
    pub b1: Vec<f64>,
    pub w2: Dense,
    pub b2: Vec<f64>,
}

/// Activations kept for the backward pass.
pub struct Forward {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    pub q: Vec<f64>,
}

impl QNet {
    pub fn init(inputs: usize, hidden: usize, outputs: usize, rng: &mut SimRng) -> Self {
        QNet {
            w1: Dense::glorot(hidden, inputs, rng),
            b1: vec![0.0; hidden],
            w2: Dense::glorot(outputs, hidden, rng),
            b2: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.w1.cols
    }

    pub fn outputs(&self) -> usize {
        self.w2.rows
    }

    pub fn forward(&self, x: &[f64]) -> Forward {
        let (h, d) = (self.w1.rows, self.w1.cols);
        let mut pre = self.b1.clone();
        for (o, p) in pre.iter_mut().enumerate() {
            let row = &self.w1.data[o * d..(o + 1) * d];
            *p += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        let hidden: Vec<f64> = pre.iter().map(|&u| u.max(0.0)).collect();
        let mut q = self.b2.clone();
        for (k, qk) in q.iter_mut().enumerate() {
            let row = &self.w2.data[k * h..(k + 1) * h];
            *qk += row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>();
        }
        Forward { pre, hidden, q }
    }

    pub fn q(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).q
    }

    fn zeros_like(&self) -> QNet {
        QNet {
            w1: Dense::zeros(self.w1.rows, self.w1.cols),
            b1: vec![0.0; self.b1.len()],
            w2: Dense::zeros(self.w2.rows, self.w2.cols),
            b2: vec![0.0; self.b2.len()],
        }
    }

    /// Add `scale * d loss / d params` for a loss whose derivative with
    /// respect to `q[action]` is `dq`.
    fn backward(&self, x: &[f64], f: &Forward, action: usize, dq: f64, g: &mut QNet) {
        let (h, d) = (self.w1.rows, self.w1.cols);
        g.b2[action] += dq;
        let w2row = &self.w2.data[action * h..(action + 1) * h];
        for j in 0..h {
            g.w2.data[action * h + j] += dq * f.hidden[j];
            if f.pre[j] > 0.0 {
                let dh = dq * w2row[j];
                g.b1[j] += dh;
                for (gi, xi) in g.w1.data[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *gi += dh * xi;
                }
            }
        }
    }

    /// Parameter tensors in the order w1, b1, w2, b2.
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        vec![&mut self.w1.data, &mut self.b1, &mut self.w2.data, &mut self.b2]
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.w1.data, &self.b1, &self.w2.data, &self.b2]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Huber loss with unit threshold and its derivative.
pub fn huber(err: f64) -> (f64, f64) {
    if err.abs() <= 1.0 {
        (0.5 * err * err, err)
    } else {
        (err.abs() - 0.5, err.signum())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub next_mask: Vec<bool>,
    pub terminal: bool,
}

/// Fixed-capacity ring of experiences.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { capacity: capacity.max(1), items: Vec::new(), next: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Distinct uniformly chosen entries.
    pub fn sample<'a>(&'a self, n: usize, rng: &mut SimRng) -> Vec<&'a Experience> {
        let n = n.min(self.items.len());
        sample_indices(rng, self.items.len(), n).into_iter().map(|i| &self.items[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Episodes over which epsilon decays linearly.
    pub eps_decay_episodes: usize,
    pub lr: f64,
    pub batch: usize,
    pub capacity: usize,
    /// Gradient steps between target syncs.
    pub sync_every: usize,
    pub hidden: usize,
    /// Reward scale; `None` uses one over the graph diameter.
    pub alpha: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 15_000,
            gamma: 0.99,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_episodes: 10_000,
            lr: 1e-3,
            batch: 64,
            capacity: 50_000,
            sync_every: 1000,
            hidden: 128,
            alpha: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DdqnError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(DdqnError::Config(format!("gamma must lie in (0, 1] (got {})", self.gamma)));
        }
        for (name, e) in [("eps_start", self.eps_start), ("eps_end", self.eps_end)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(DdqnError::Config(format!("{name} must lie in [0, 1] (got {e})")));
            }
        }
        if self.batch == 0 || self.sync_every == 0 || self.hidden == 0 {
            return Err(DdqnError::Config("batch, sync_every and hidden must be positive".into()));
        }
        Ok(())
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        if self.eps_decay_episodes == 0 {
            return self.eps_end;
        }
        let f = (episode as f64 / self.eps_decay_episodes as f64).min(1.0);
        self.eps_start + (self.eps_end - self.eps_start) * f
    }
}

/// Double-Q regression targets for a batch.
pub fn double_q_targets(online: &QNet, target: &QNet, batch: &[&Experience], gamma: f64) -> Vec<f64> {
    batch
        .iter()
        .map(|e| {
            if e.terminal {
                return e.reward;
            }
            let a = masked_argmax(&online.q(&e.next_obs), &e.next_mask).unwrap_or(0);
            e.reward + gamma * target.q(&e.next_obs)[a]
        })
        .collect()
}

/// Mean Huber loss of `net` on a batch and its gradient.
pub fn batch_loss(net: &QNet, batch: &[&Experience], targets: &[f64]) -> (f64, QNet) {
    let mut g = net.zeros_like();
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for (e, &y) in batch.iter().zip(targets) {
        let f = net.forward(&e.obs);
        let (l, dl) = huber(f.q[e.action] - y);
        loss += l * scale;
        net.backward(&e.obs, &f, e.action, dl * scale, &mut g);
    }
    (loss, g)
}

/// Greedy policy from a trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdqnPolicy {
    pub format_version: u32,
    pub width: usize,
    pub net: QNet,
    pub config: TrainConfig,
}

impl DdqnPolicy {
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }

    fn joint_action(&self, graph: &RegionGraph, state: &WorldState) -> (ActionSet, usize) {
        let acts = ActionSet::new(graph, state);
        let q = self.net.q(&obs_vector(graph, state, &acts));
        let a = masked_argmax(&q, &acts.joint_mask()).unwrap_or(0);
        (acts, a)
    }
}

impl RobotPolicy for DdqnPolicy {
    fn name(&self) -> String {
        "ddqn".into()
    }

    fn decide(&self, graph: &RegionGraph, state: &WorldState, _: &mut SimRng) -> Vec<usize> {
        if state.robots.len() != 2 {
            return state.robot_regions();
        }
        let (acts, a) = self.joint_action(graph, state);
        acts.destinations(a, state)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub epsilon: f64,
    pub mean_reward: f64,
    pub victims: f64,
    /// `d1 + d2` when the episode ended.
    pub final_distance: f64,
    pub loss: f64,
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("episode,epsilon,mean_reward,victims,final_distance,loss\n");
    for c in curve {
        s.push_str(&format!(
            "{},{:.4},{:.5},{},{},{:.6}\n",
            c.episode, c.epsilon, c.mean_reward, c.victims, c.final_distance, c.loss
        ));
    }
    s
}

fn total_distance(graph: &RegionGraph, state: &WorldState) -> f64 {
    let d = graph.hop_matrix_full();
    state.robots.iter().map(|r| d.get(r.region, state.adversary.current)).sum()
}

struct Learner {
    online: QNet,
    target: QNet,
    adam: Adam,
    buffer: ReplayBuffer,
    steps: usize,
    rng: SimRng,
}

impl Learner {
    fn learn(&mut self, cfg: &TrainConfig, episode: usize) -> Result<Option<f64>, DdqnError> {
        if self.buffer.len() < cfg.batch {
            return Ok(None);
        }
        let batch = self.buffer.sample(cfg.batch, &mut self.rng);
        let ys = double_q_targets(&self.online, &self.target, &batch, cfg.gamma);
        let (loss, g) = batch_loss(&self.online, &batch, &ys);
        let max_q = ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
        if !loss.is_finite() || !(max_q < 1e6) {
            return Err(DdqnError::Diverged { episode, step: self.steps, loss, max_q });
        }
        let grads: Vec<Vec<f64>> = g.tensors().into_iter().map(<[f64]>::to_vec).collect();
        self.adam.step(self.online.tensors_mut(), grads.iter().map(Vec::as_slice).collect());
        self.steps += 1;
        if self.steps % cfg.sync_every == 0 {
            self.target = self.online.clone();
        }
        Ok(Some(loss))
    }
}

/// Train a joint two-robot policy by interacting with the simulator.
/// A transition is stored each time both robots have completed their
/// actions, with reward `-alpha (d1 + d2)` at that moment.
pub fn train(world: &World, cfg: &TrainConfig) -> Result<(DdqnPolicy, Vec<CurvePoint>), DdqnError> {
    cfg.validate()?;
    world.check()?;
    let robots = world.robot_starts()?.len();
    if robots != 2 {
        return Err(DdqnError::RobotCount(robots));
    }
    let graph = world.graph;
    let width = ActionSet::width_for(graph);
    let alpha = cfg.alpha.unwrap_or_else(|| default_alpha(graph));
    let mut init_rng = stream_rng(cfg.seed, "ddqn-init", 0);
    let online = QNet::init(2 * width, cfg.hidden, width * width, &mut init_rng);
    let shapes: Vec<usize> = online.tensors().iter().map(|t| t.len()).collect();
    let mut ln = Learner {
        target: online.clone(),
        online,
        adam: Adam::new(&shapes, cfg.lr),
        buffer: ReplayBuffer::new(cfg.capacity),
        steps: 0,
        rng: stream_rng(cfg.seed, "ddqn-replay", 0),
    };
    let mut explore = stream_rng(cfg.seed, "ddqn-explore", 0);
    let mut curve = Vec::with_capacity(cfg.episodes);
    for ep in 0..cfg.episodes {
        let eps = cfg.epsilon(ep);
        let mut sim = Sim::new(world, ep, derive_seed(cfg.seed, "ddqn-episode", ep as u64))?;
        let choose = |sim: &Sim, online: &QNet, rng: &mut SimRng| -> (Vec<f64>, usize, Vec<usize>) {
            let acts = ActionSet::new(graph, &sim.state);
            let obs = obs_vector(graph, &sim.state, &acts);
            let mask = acts.joint_mask();
            let a = if rng.random::<f64>() < eps {
                let valid: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
                valid[rng.random_range(0..valid.len())]
            } else {
                masked_argmax(&online.q(&obs), &mask).unwrap_or(0)
            };
            let dests = acts.destinations(a, &sim.state);
            (obs, a, dests)
        };
        let (mut obs, mut action, dests) = choose(&sim, &ln.online, &mut explore);
        sim.set_moves(&dests)?;
        let (mut rewards, mut n_rewards, mut loss_sum, mut n_loss) = (0.0, 0usize, 0.0, 0usize);
        loop {
            let done = sim.step()?;
            if !(done || sim.robots_idle()) {
                continue;
            }
            let r = reward(graph, &sim.state, alpha);
            rewards += r;
            n_rewards += 1;
            let acts = ActionSet::new(graph, &sim.state);
            ln.buffer.push(Experience {
                obs: obs.clone(),
                action,
                reward: r,
                next_obs: obs_vector(graph, &sim.state, &acts),
                next_mask: acts.joint_mask(),
                terminal: sim.termination() == Some(TerminationReason::DeadEnd),
            });
            if let Some(l) = ln.learn(cfg, ep)? {
                loss_sum += l;
                n_loss += 1;
            }
            if done {
                break;
            }
            let (o, a, d) = choose(&sim, &ln.online, &mut explore);
            sim.set_moves(&d)?;
            obs = o;
            action = a;
        }
        let final_distance = total_distance(graph, &sim.state);
        let victims = sim.state.victims;
        curve.push(CurvePoint {
            episode: ep,
            epsilon: eps,
            mean_reward: if n_rewards > 0 { rewards / n_rewards as f64 } else { 0.0 },
            victims,
            final_distance,
            loss: if n_loss > 0 { loss_sum / n_loss as f64 } else { f64::NAN },
        });
        if ep % 500 == 0 {
            log::info!("ddqn episode {ep}: eps {eps:.3}, final distance {final_distance}, victims {victims}");
        }
    }
    Ok((DdqnPolicy { format_version: FORMAT_VERSION, width, net: ln.online, config: cfg.clone() }, curve))
}
