//! GraphSAGE-style neighbor scorer: three mean-aggregation layers over
//! static region features, a two-layer head over
//! `[embedding(current) | embedding(candidate) | dynamic features]`, softmax
//! over candidates. Gradients are written out by hand; training uses Adam.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Feature;
use crate::graph::RegionGraph;
use crate::rng::{stream_rng, SimRng};

pub const FORMAT_VERSION: u32 = 1;
pub const SAGE_LAYERS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum SageError {
    #[error("static feature width {got} does not match the weights ({want})")]
    DimensionMismatch { got: usize, want: usize },
    #[error("no training transitions")]
    EmptyData,
    #[error("non-finite loss at epoch {0}")]
    Diverged(usize),
}

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn glorot(rows: usize, cols: usize, rng: &mut SimRng) -> Self {
        let a = (6.0 / (rows + cols).max(1) as f64).sqrt();
        Dense {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.random_range(-a..a)).collect(),
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageLayer {
    pub w_self: Dense,
    pub w_neigh: Dense,
    pub bias: Vec<f64>,
}

/// Scorer parameters plus the feature routing they were trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerWeights {
    pub format_version: u32,
    pub static_features: Vec<Feature>,
    pub dynamic_features: Vec<Feature>,
    pub hidden: usize,
    pub dropout: f64,
    pub l2: f64,
    pub layers: Vec<SageLayer>,
    /// `hidden x (2 * hidden + dynamic)`.
    pub head1: Dense,
    pub head1_bias: Vec<f64>,
    /// `1 x hidden`.
    pub head2: Dense,
    pub head2_bias: Vec<f64>,
}

impl ScorerWeights {
    pub fn init(static_features: Vec<Feature>, dynamic_features: Vec<Feature>, hidden: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, "sage-init", 0);
        let d0 = static_features.len();
        let dd = dynamic_features.len();
        let layers = (0..SAGE_LAYERS)
            .map(|l| {
                let din = if l == 0 { d0 } else { hidden };
                SageLayer {
                    w_self: Dense::glorot(hidden, din, &mut rng),
                    w_neigh: Dense::glorot(hidden, din, &mut rng),
                    bias: vec![0.0; hidden],
                }
            })
            .collect();
        ScorerWeights {
            format_version: FORMAT_VERSION,
            static_features,
            dynamic_features,
            hidden,
            dropout: 0.1,
            l2: 1e-4,
            layers,
            head1: Dense::glorot(hidden, 2 * hidden + dd, &mut rng),
            head1_bias: vec![0.0; hidden],
            head2: Dense::glorot(1, hidden, &mut rng),
            head2_bias: vec![0.0],
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
        z
    }

    /// Parameter tensors in a fixed order; the flag marks L2-penalised ones.
    pub fn tensors(&self) -> Vec<(&[f64], bool)> {
        let mut v: Vec<(&[f64], bool)> = Vec::new();
        for l in &self.layers {
            v.push((&l.w_self.data, true));
            v.push((&l.w_neigh.data, true));
            v.push((&l.bias, false));
        }
        v.push((&self.head1.data, true));
        v.push((&self.head1_bias, false));
        v.push((&self.head2.data, true));
        v.push((&self.head2_bias, false));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v: Vec<&mut Vec<f64>> = Vec::new();
        for l in &mut self.layers {
            v.push(&mut l.w_self.data);
            v.push(&mut l.w_neigh.data);
            v.push(&mut l.bias);
        }
        v.push(&mut self.head1.data);
        v.push(&mut self.head1_bias);
        v.push(&mut self.head2.data);
        v.push(&mut self.head2_bias);
        v
    }

    pub fn penalty(&self) -> f64 {
        0.5 * self.l2
            * self
                .tensors()
                .iter()
                .filter(|(_, w)| *w)
                .map(|(t, _)| t.iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(t, _)| t.iter().all(|x| x.is_finite()))
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }
}

/// Static feature matrix (`n x d`, row-major) for the graph.
pub fn static_matrix(graph: &RegionGraph, features: &[Feature]) -> Vec<f64> {
    let mut x = Vec::with_capacity(graph.len() * features.len());
    for r in 0..graph.len() {
        x.extend(features.iter().map(|f| f.static_value(graph, r)));
    }
    x
}

struct LayerCache {
    input: Vec<f64>,
    agg: Vec<f64>,
    pre: Vec<f64>,
    mask: Option<Vec<f64>>,
}

struct Embedding {
    caches: Vec<LayerCache>,
    out: Vec<f64>,
}

fn mean_aggregate(graph: &RegionGraph, x: &[f64], d: usize) -> Vec<f64> {
    let n = graph.len();
    let mut agg = vec![0.0; n * d];
    for v in 0..n {
        let nb = graph.in_neighbors(v);
        if nb.is_empty() {
            continue;
        }
        let inv = 1.0 / nb.len() as f64;
        let row = &mut agg[v * d..(v + 1) * d];
        for &j in nb {
            for (a, b) in row.iter_mut().zip(&x[j * d..(j + 1) * d]) {
                *a += b * inv;
            }
        }
    }
    agg
}

/// One message-passing layer without dropout: `ELU(W_s x + W_n mean(x_in) + b)`.
pub fn sage_layer_forward(graph: &RegionGraph, layer: &SageLayer, x: &[f64]) -> Vec<f64> {
    let din = layer.w_self.cols;
    let agg = mean_aggregate(graph, x, din);
    affine_pre(layer, x, &agg, graph.len()).into_iter().map(elu).collect()
}

fn affine_pre(layer: &SageLayer, x: &[f64], agg: &[f64], n: usize) -> Vec<f64> {
    let (h, din) = (layer.w_self.rows, layer.w_self.cols);
    let mut pre = vec![0.0; n * h];
    for v in 0..n {
        let xv = &x[v * din..(v + 1) * din];
        let av = &agg[v * din..(v + 1) * din];
        for o in 0..h {
            let ws = &layer.w_self.data[o * din..(o + 1) * din];
            let wn = &layer.w_neigh.data[o * din..(o + 1) * din];
            let mut s = layer.bias[o];
            for i in 0..din {
                s += ws[i] * xv[i] + wn[i] * av[i];
            }
            pre[v * h + o] = s;
        }
    }
    pre
}

fn dropout_mask(len: usize, p: f64, rng: &mut SimRng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect()
}

fn embed_inner(
    graph: &RegionGraph,
    w: &ScorerWeights,
    x0: &[f64],
    mut drop: Option<&mut SimRng>,
) -> Embedding {
    let n = graph.len();
    let mut x = x0.to_vec();
    let mut caches = Vec::with_capacity(w.layers.len());
    for layer in &w.layers {
        let din = layer.w_self.cols;
        let agg = mean_aggregate(graph, &x, din);
        let pre = affine_pre(layer, &x, &agg, n);
        let mut out: Vec<f64> = pre.iter().map(|&p| elu(p)).collect();
        let mask = match drop.as_deref_mut() {
            Some(rng) if w.dropout > 0.0 => {
                let m = dropout_mask(out.len(), w.dropout, rng);
                out.iter_mut().zip(&m).for_each(|(o, k)| *o *= k);
                Some(m)
            }
            _ => None,
        };
        caches.push(LayerCache { input: x, agg, pre, mask });
        x = out;
    }
    Embedding { caches, out: x }
}

/// Per-region embeddings in inference mode (`n x hidden`, row-major).
pub fn sage_embed(graph: &RegionGraph, static_x: &[f64], w: &ScorerWeights) -> Result<Vec<f64>, SageError> {
    let want = graph.len() * w.static_features.len();
    if static_x.len() != want {
        return Err(SageError::DimensionMismatch { got: static_x.len(), want });
    }
    Ok(embed_inner(graph, w, static_x, None).out)
}

/// Inference-time cache: the head's first layer applied to every embedding.
#[derive(Debug, Clone)]
pub struct HeadCache {
    hidden: usize,
    /// `W1[:, :H] e_v` per region.
    from_current: Vec<f64>,
    /// `W1[:, H:2H] e_v` per region.
    from_candidate: Vec<f64>,
}

fn head_projections(w: &ScorerWeights, emb: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = w.hidden;
    let cols = w.head1.cols;
    let mut a = vec![0.0; n * h];
    let mut b = vec![0.0; n * h];
    for v in 0..n {
        let e = &emb[v * h..(v + 1) * h];
        for o in 0..h {
            let row = &w.head1.data[o * cols..(o + 1) * cols];
            let (mut sa, mut sb) = (0.0, 0.0);
            for i in 0..h {
                sa += row[i] * e[i];
                sb += row[h + i] * e[i];
            }
            a[v * h + o] = sa;
            b[v * h + o] = sb;
        }
    }
    (a, b)
}

impl HeadCache {
    pub fn new(graph: &RegionGraph, w: &ScorerWeights) -> Result<Self, SageError> {
        let x0 = static_matrix(graph, &w.static_features);
        let emb = sage_embed(graph, &x0, w)?;
        let (from_current, from_candidate) = head_projections(w, &emb, graph.len());
        Ok(HeadCache { hidden: w.hidden, from_current, from_candidate })
    }

    /// Logit of one candidate given its dynamic features.
    pub fn logit(&self, w: &ScorerWeights, cur: usize, cand: usize, dynamic: &[f64]) -> f64 {
        let h = self.hidden;
        let cols = w.head1.cols;
        let mut s = w.head2_bias[0];
        for o in 0..h {
            let row = &w.head1.data[o * cols + 2 * h..(o + 1) * cols];
            let mut u = w.head1_bias[o] + self.from_current[cur * h + o] + self.from_candidate[cand * h + o];
            for (wi, d) in row.iter().zip(dynamic) {
                u += wi * d;
            }
            s += w.head2.data[o] * elu(u);
        }
        s
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// One training example: candidates of a transition, their dynamic features
/// (`cands x dynamic`, row-major), and the observed choice.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub current: usize,
    pub candidates: Vec<usize>,
    pub dynamic: Vec<f64>,
    /// Position of the observed choice within `candidates`.
    pub target: usize,
}

/// Mean cross-entropy (plus L2 when `with_penalty`) and its gradient.
/// `drop` enables dropout with the given stream.
pub fn loss_and_grad(
    graph: &RegionGraph,
    w: &ScorerWeights,
    x0: &[f64],
    batch: &[&Sample],
    drop: Option<&mut SimRng>,
    with_penalty: bool,
) -> (f64, ScorerWeights) {
    let n = graph.len();
    let h = w.hidden;
    let dd = w.dynamic_features.len();
    let cols = w.head1.cols;
    let mut drop = drop;
    let emb = embed_inner(graph, w, x0, drop.as_deref_mut());
    let e = &emb.out;
    let (pa, pb) = head_projections(w, e, n);
    let mut g = w.zeros_like();
    let mut d_pa = vec![0.0; n * h];
    let mut d_pb = vec![0.0; n * h];
    let mut loss = 0.0;
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut u = vec![0.0; h];
    for s in batch {
        let k = s.candidates.len();
        let mut us = Vec::with_capacity(k);
        let mut acts = Vec::with_capacity(k);
        let mut logits = Vec::with_capacity(k);
        for (ci, &c) in s.candidates.iter().enumerate() {
            let dynv = &s.dynamic[ci * dd..(ci + 1) * dd];
            for o in 0..h {
                let row = &w.head1.data[o * cols + 2 * h..(o + 1) * cols];
                let mut x = w.head1_bias[o] + pa[s.current * h + o] + pb[c * h + o];
                for (wi, d) in row.iter().zip(dynv) {
                    x += wi * d;
                }
                u[o] = x;
            }
            let mut a: Vec<f64> = u.iter().map(|&x| elu(x)).collect();
            let mask = match drop.as_deref_mut() {
                Some(rng) if w.dropout > 0.0 => {
                    let m = dropout_mask(h, w.dropout, rng);
                    a.iter_mut().zip(&m).for_each(|(x, k)| *x *= k);
                    Some(m)
                }
                _ => None,
            };
            let logit = w.head2_bias[0] + a.iter().zip(&w.head2.data).map(|(x, y)| x * y).sum::<f64>();
            us.push((u.clone(), mask));
            acts.push(a);
            logits.push(logit);
        }
        let p = softmax(&logits);
        loss -= p[s.target].max(f64::MIN_POSITIVE).ln() * scale;
        for (ci, &c) in s.candidates.iter().enumerate() {
            let dl = (p[ci] - f64::from(u8::from(ci == s.target))) * scale;
            if dl == 0.0 {
                continue;
            }
            g.head2_bias[0] += dl;
            let (uc, mask) = &us[ci];
            let dynv = &s.dynamic[ci * dd..(ci + 1) * dd];
            for o in 0..h {
                g.head2.data[o] += dl * acts[ci][o];
                let mut du = dl * w.head2.data[o] * elu_grad(uc[o]);
                if let Some(m) = mask {
                    du *= m[o];
                }
                if du == 0.0 {
                    continue;
                }
                g.head1_bias[o] += du;
                d_pa[s.current * h + o] += du;
                d_pb[c * h + o] += du;
                let grow = &mut g.head1.data[o * cols + 2 * h..(o + 1) * cols];
                for (gi, d) in grow.iter_mut().zip(dynv) {
                    *gi += du * d;
                }
            }
        }
    }
    // head projections back to the embedding and the first head layer
    let mut d_e = vec![0.0; n * h];
    for v in 0..n {
        let ev = &e[v * h..(v + 1) * h];
        for o in 0..h {
            let (da, db) = (d_pa[v * h + o], d_pb[v * h + o]);
            if da == 0.0 && db == 0.0 {
                continue;
            }
            let row = &w.head1.data[o * cols..(o + 1) * cols];
            let grow = &mut g.head1.data[o * cols..(o + 1) * cols];
            for i in 0..h {
                grow[i] += da * ev[i];
                grow[h + i] += db * ev[i];
                d_e[v * h + i] += da * row[i] + db * row[h + i];
            }
        }
    }
    // message-passing layers, last to first
    let mut d_out = d_e;
    for (li, layer) in w.layers.iter().enumerate().rev() {
        let c = &emb.caches[li];
        let din = layer.w_self.cols;
        let mut d_pre = vec![0.0; n * h];
        for i in 0..n * h {
            let mut d = d_out[i] * elu_grad(c.pre[i]);
            if let Some(m) = &c.mask {
                d *= m[i];
            }
            d_pre[i] = d;
        }
        let gl = &mut g.layers[li];
        let mut d_in = vec![0.0; n * din];
        let mut d_agg = vec![0.0; n * din];
        for v in 0..n {
            let xv = &c.input[v * din..(v + 1) * din];
            let av = &c.agg[v * din..(v + 1) * din];
            for o in 0..h {
                let d = d_pre[v * h + o];
                if d == 0.0 {
                    continue;
                }
                gl.bias[o] += d;
                let ws = &layer.w_self.data[o * din..(o + 1) * din];
                let wn = &layer.w_neigh.data[o * din..(o + 1) * din];
                for i in 0..din {
                    gl.w_self.data[o * din + i] += d * xv[i];
                    gl.w_neigh.data[o * din + i] += d * av[i];
                    d_in[v * din + i] += d * ws[i];
                    d_agg[v * din + i] += d * wn[i];
                }
            }
        }
        if li > 0 {
            for v in 0..n {
                let nb = graph.in_neighbors(v);
                if nb.is_empty() {
                    continue;
                }
                let inv = 1.0 / nb.len() as f64;
                for &j in nb {
                    for i in 0..din {
                        d_in[j * din + i] += d_agg[v * din + i] * inv;
                    }
                }
            }
            d_out = d_in;
        }
    }
    if with_penalty {
        loss += w.penalty();
        let l2 = w.l2;
        let params: Vec<(Vec<f64>, bool)> = w.tensors().into_iter().map(|(t, f)| (t.to_vec(), f)).collect();
        for (gt, (pt, penalised)) in g.tensors_mut().into_iter().zip(params) {
            if penalised {
                gt.iter_mut().zip(&pt).for_each(|(a, b)| *a += l2 * b);
            }
        }
    }
    (loss, g)
}

/// Adam state over the flattened parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(shapes: &[usize], lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&s| vec![0.0; s]).collect(),
            v: shapes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Vec<f64>>, grads: Vec<&[f64]>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
    }
}

/// Optimisation settings of the scorer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub hidden: usize,
    pub max_epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub l2: f64,
    pub dropout: f64,
    pub patience: usize,
    pub plateau: usize,
    pub lr_floor: f64,
    pub seed: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            hidden: 64,
            max_epochs: 200,
            batch: 32,
            lr: 1e-3,
            l2: 1e-4,
            dropout: 0.1,
            patience: 15,
            plateau: 5,
            lr_floor: 1e-5,
            seed: 0,
        }
    }
}

impl ScorerConfig {
    /// Smaller network and epoch budget used inside feature selection.
    pub fn reduced(seed: u64) -> Self {
        ScorerConfig { hidden: 16, max_epochs: 30, seed, ..Default::default() }
    }
}

/// Per-epoch record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Mean validation cross-entropy (no dropout, no penalty).
pub fn eval_loss(graph: &RegionGraph, w: &ScorerWeights, x0: &[f64], data: &[Sample]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let refs: Vec<&Sample> = data.iter().collect();
    let mut total = 0.0;
    for chunk in refs.chunks(256) {
        let (l, _) = loss_and_grad(graph, w, x0, chunk, None, false);
        total += l * chunk.len() as f64;
    }
    total / data.len() as f64
}

/// Train with Adam, early stopping on validation loss, and learning-rate
/// halving on plateaus. Returns the best-validation weights.
pub fn fit(
    graph: &RegionGraph,
    static_features: Vec<Feature>,
    dynamic_features: Vec<Feature>,
    train: &[Sample],
    val: &[Sample],
    cfg: &ScorerConfig,
) -> Result<(ScorerWeights, Vec<EpochLog>), SageError> {
    if train.is_empty() {
        return Err(SageError::EmptyData);
    }
    let mut w = ScorerWeights::init(static_features, dynamic_features, cfg.hidden, cfg.seed);
    w.l2 = cfg.l2;
    w.dropout = cfg.dropout;
    let x0 = static_matrix(graph, &w.static_features);
    let shapes: Vec<usize> = w.tensors().iter().map(|(t, _)| t.len()).collect();
    let mut adam = Adam::new(&shapes, cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = stream_rng(cfg.seed, "sage-shuffle", 0);
    let mut drop_rng = stream_rng(cfg.seed, "sage-dropout", 0);
    let val_set = if val.is_empty() { train } else { val };
    let mut best = (eval_loss(graph, &w, &x0, val_set), w.clone());
    let (mut since_best, mut since_cut) = (0usize, 0usize);
    let mut log = Vec::new();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut train_loss = 0.0;
        for chunk in order.chunks(cfg.batch.max(1)) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let (l, g) = loss_and_grad(graph, &w, &x0, &batch, Some(&mut drop_rng), true);
            if !l.is_finite() {
                return Err(SageError::Diverged(epoch));
            }
            train_loss += l * batch.len() as f64;
            let grads: Vec<Vec<f64>> = g.tensors().into_iter().map(|(t, _)| t.to_vec()).collect();
            adam.step(w.tensors_mut(), grads.iter().map(Vec::as_slice).collect());
        }
        let val_loss = eval_loss(graph, &w, &x0, val_set);
        if !val_loss.is_finite() {
            return Err(SageError::Diverged(epoch));
        }
        log.push(EpochLog { epoch, train_loss: train_loss / train.len() as f64, val_loss, lr: adam.lr });
        if val_loss < best.0 - 1e-12 {
            best = (val_loss, w.clone());
            since_best = 0;
            since_cut = 0;
        } else {
            since_best += 1;
            since_cut += 1;
            if since_best >= cfg.patience {
                break;
            }
            if since_cut >= cfg.plateau && adam.lr > cfg.lr_floor {
                adam.lr = (adam.lr * 0.5).max(cfg.lr_floor);
                since_cut = 0;
            }
        }
    }
    Ok((best.1, log))
}
