//! Parameter layout, forward pass and reverse-mode gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::netmodel::ActionKind;
use crate::routing::ACTION_FEATURES;
use crate::{rng, Error, Result};

pub const NODE_FEATURES: usize = 8;
pub const EDGE_FEATURES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnConfig {
    pub hidden: usize,
    pub layers: usize,
    pub message_width: usize,
    pub scorer_width: usize,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 4,
            message_width: 64,
            scorer_width: 64,
            aggregation: Aggregation::Sum,
            seed: 0,
        }
    }
}

/// Fully connected layer stored inside a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Offset of the row-major `outputs × inputs` weight block.
    pub w: usize,
    /// Offset of the bias block.
    pub b: usize,
}

impl Dense {
    fn alloc(next: &mut usize, inputs: usize, outputs: usize) -> Self {
        let w = *next;
        let b = w + inputs * outputs;
        *next = b + outputs;
        Self { inputs, outputs, w, b }
    }

    pub fn size(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    pub fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        for (o, yo) in y.iter_mut().enumerate().take(self.outputs) {
            let row = &p[self.w + o * self.inputs..self.w + (o + 1) * self.inputs];
            *yo = p[self.b + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulate parameter gradients into `g` and input gradients into `dx`.
    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], g: &mut [f64], dx: Option<&mut [f64]>) {
        for o in 0..self.outputs {
            let d = dy[o];
            if d == 0.0 {
                continue;
            }
            g[self.b + o] += d;
            let gw = &mut g[self.w + o * self.inputs..self.w + (o + 1) * self.inputs];
            for (gi, xi) in gw.iter_mut().zip(x) {
                *gi += d * xi;
            }
        }
        if let Some(dx) = dx {
            for o in 0..self.outputs {
                let d = dy[o];
                if d == 0.0 {
                    continue;
                }
                let row = &p[self.w + o * self.inputs..self.w + (o + 1) * self.inputs];
                for (di, wi) in dx.iter_mut().zip(row) {
                    *di += d * wi;
                }
            }
        }
    }
}

/// Three-layer perceptron: tanh, tanh, linear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub l1: Dense,
    pub l2: Dense,
    pub l3: Dense,
}

#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    pub x: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub y: Vec<f64>,
}

impl Mlp {
    pub(crate) fn alloc(next: &mut usize, inputs: usize, width: usize, outputs: usize) -> Self {
        Self {
            l1: Dense::alloc(next, inputs, width),
            l2: Dense::alloc(next, width, width),
            l3: Dense::alloc(next, width, outputs),
        }
    }

    pub(crate) fn layers(&self) -> [Dense; 3] {
        [self.l1, self.l2, self.l3]
    }

    pub fn forward(&self, p: &[f64], x: Vec<f64>) -> MlpCache {
        let mut a1 = vec![0.0; self.l1.outputs];
        self.l1.forward(p, &x, &mut a1);
        a1.iter_mut().for_each(|v| *v = v.tanh());
        let mut a2 = vec![0.0; self.l2.outputs];
        self.l2.forward(p, &a1, &mut a2);
        a2.iter_mut().for_each(|v| *v = v.tanh());
        let mut y = vec![0.0; self.l3.outputs];
        self.l3.forward(p, &a2, &mut y);
        MlpCache { x, a1, a2, y }
    }

    /// Returns the gradient with respect to the input.
    pub fn backward(&self, p: &[f64], c: &MlpCache, dy: &[f64], g: &mut [f64]) -> Vec<f64> {
        let mut d2 = vec![0.0; self.l2.outputs];
        self.l3.backward(p, &c.a2, dy, g, Some(&mut d2));
        for (d, a) in d2.iter_mut().zip(&c.a2) {
            *d *= 1.0 - a * a;
        }
        let mut d1 = vec![0.0; self.l1.outputs];
        self.l2.backward(p, &c.a1, &d2, g, Some(&mut d1));
        for (d, a) in d1.iter_mut().zip(&c.a1) {
            *d *= 1.0 - a * a;
        }
        let mut dx = vec![0.0; self.l1.inputs];
        self.l1.backward(p, &c.x, &d1, g, Some(&mut dx));
        dx
    }
}

/// Gated recurrent update from aggregated message `m` and state `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gru {
    pub update: Dense,
    pub reset: Dense,
    pub candidate: Dense,
}

#[derive(Debug, Clone, Default)]
pub struct GruCache {
    pub mh: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub mrh: Vec<f64>,
    pub c: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Gru {
    fn alloc(next: &mut usize, d: usize) -> Self {
        Self {
            update: Dense::alloc(next, 2 * d, d),
            reset: Dense::alloc(next, 2 * d, d),
            candidate: Dense::alloc(next, 2 * d, d),
        }
    }

    /// `z = σ(W_z[m,h])`, `r = σ(W_r[m,h])`, `c = tanh(W_c[m, r⊙h])`,
    /// `h′ = (1−z)⊙h + z⊙c`.
    pub fn forward(&self, p: &[f64], m: &[f64], h: &[f64]) -> (Vec<f64>, GruCache) {
        let d = h.len();
        let mh: Vec<f64> = m.iter().chain(h).copied().collect();
        let mut z = vec![0.0; d];
        self.update.forward(p, &mh, &mut z);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));
        let mut r = vec![0.0; d];
        self.reset.forward(p, &mh, &mut r);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));
        let mrh: Vec<f64> = m.iter().copied().chain(r.iter().zip(h).map(|(a, b)| a * b)).collect();
        let mut c = vec![0.0; d];
        self.candidate.forward(p, &mrh, &mut c);
        c.iter_mut().for_each(|v| *v = v.tanh());
        let out = (0..d).map(|i| (1.0 - z[i]) * h[i] + z[i] * c[i]).collect();
        (out, GruCache { mh, z, r, mrh, c })
    }

    /// Returns (d m, d h).
    pub fn backward(&self, p: &[f64], h: &[f64], cache: &GruCache, dout: &[f64], g: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
        let d = h.len();
        let GruCache { mh, z, r, mrh, c } = cache;
        let mut dh: Vec<f64> = (0..d).map(|i| dout[i] * (1.0 - z[i])).collect();
        let dz: Vec<f64> = (0..d)
            .map(|i| dout[i] * (c[i] - h[i]) * z[i] * (1.0 - z[i]))
            .collect();
        let dc: Vec<f64> = (0..d).map(|i| dout[i] * z[i] * (1.0 - c[i] * c[i])).collect();
        let mut dmrh = vec![0.0; 2 * d];
        self.candidate.backward(p, mrh, &dc, g, Some(&mut dmrh));
        let mut dm = dmrh[..d].to_vec();
        let mut dr = vec![0.0; d];
        for i in 0..d {
            dh[i] += dmrh[d + i] * r[i];
            dr[i] = dmrh[d + i] * h[i] * r[i] * (1.0 - r[i]);
        }
        let mut dmh = vec![0.0; 2 * d];
        self.update.backward(p, mh, &dz, g, Some(&mut dmh));
        self.reset.backward(p, mh, &dr, g, Some(&mut dmh));
        for i in 0..d {
            dm[i] += dmh[i];
            dh[i] += dmh[d + i];
        }
        (dm, dh)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub message: Mlp,
    pub gru: Gru,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub encoder: Dense,
    pub layers: Vec<Layer>,
    pub scorer: Mlp,
    pub theta_len: usize,
    pub critic: Mlp,
    pub psi_len: usize,
}

pub fn scorer_inputs(d: usize) -> usize {
    2 * d + ActionKind::COUNT + ACTION_FEATURES
}

pub fn critic_inputs(d: usize) -> usize {
    3 * d + ActionKind::COUNT + ACTION_FEATURES
}

impl Layout {
    pub fn new(cfg: &GnnConfig) -> Self {
        let d = cfg.hidden;
        let mut next = 0;
        let encoder = Dense::alloc(&mut next, NODE_FEATURES, d);
        let layers = (0..cfg.layers)
            .map(|_| Layer {
                message: Mlp::alloc(&mut next, 2 * d + EDGE_FEATURES, cfg.message_width, d),
                gru: Gru::alloc(&mut next, d),
            })
            .collect();
        let scorer = Mlp::alloc(&mut next, scorer_inputs(d), cfg.scorer_width, 1);
        let theta_len = next;
        let mut next = 0;
        let critic = Mlp::alloc(&mut next, critic_inputs(d), cfg.scorer_width, 1);
        Self {
            encoder,
            layers,
            scorer,
            theta_len,
            critic,
            psi_len: next,
        }
    }

    fn theta_blocks(&self) -> Vec<Dense> {
        let mut out = vec![self.encoder];
        for l in &self.layers {
            out.extend(l.message.layers());
            out.extend([l.gru.update, l.gru.reset, l.gru.candidate]);
        }
        out.extend(self.scorer.layers());
        out
    }

    /// (name, rows, cols) for every weight and bias block, in storage order.
    pub fn describe(&self) -> Vec<(String, usize, usize)> {
        let mut names = vec!["encoder".to_string()];
        for i in 0..self.layers.len() {
            for part in ["msg1", "msg2", "msg3", "gru_update", "gru_reset", "gru_candidate"] {
                names.push(format!("layer{i}.{part}"));
            }
        }
        names.extend(["scorer1", "scorer2", "scorer3"].map(String::from));
        let mut out = Vec::new();
        for (name, blk) in names.iter().zip(self.theta_blocks()) {
            out.push((format!("theta.{name}.w"), blk.outputs, blk.inputs));
            out.push((format!("theta.{name}.b"), blk.outputs, 1));
        }
        for (i, blk) in self.critic.layers().iter().enumerate() {
            out.push((format!("psi.critic{}.w", i + 1), blk.outputs, blk.inputs));
            out.push((format!("psi.critic{}.b", i + 1), blk.outputs, 1));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnParams {
    pub config: GnnConfig,
    pub layout: Layout,
    /// Encoder, message-passing and policy-head weights.
    pub theta: Vec<f64>,
    /// Critic weights.
    pub psi: Vec<f64>,
    pub psi_target: Vec<f64>,
}

pub(crate) fn init_blocks(blocks: &[Dense], len: usize, r: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for blk in blocks {
        let bound = 1.0 / (blk.inputs as f64).sqrt();
        for v in &mut out[blk.w..blk.b + blk.outputs] {
            *v = r.random_range(-bound..bound);
        }
    }
    out
}

impl GnnParams {
    /// Uniform ±1/√fan_in initialisation.
    pub fn new(config: GnnConfig) -> Result<Self> {
        if config.hidden == 0 || config.message_width == 0 || config.scorer_width == 0 {
            return Err(Error::InvalidParam("network widths must be positive".into()));
        }
        let layout = Layout::new(&config);
        let mut r = rng::stream(config.seed, "gnn-init");
        let theta = init_blocks(&layout.theta_blocks(), layout.theta_len, &mut r);
        let psi = init_blocks(&layout.critic.layers(), layout.psi_len, &mut r);
        Ok(Self {
            config,
            psi_target: psi.clone(),
            layout,
            theta,
            psi,
        })
    }

    pub fn zeros(config: GnnConfig) -> Result<Self> {
        let mut p = Self::new(config)?;
        p.theta.iter_mut().for_each(|x| *x = 0.0);
        p.psi.iter_mut().for_each(|x| *x = 0.0);
        p.psi_target.iter_mut().for_each(|x| *x = 0.0);
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.theta
            .iter()
            .chain(&self.psi)
            .chain(&self.psi_target)
            .all(|x| x.is_finite())
    }

    pub fn check_shapes(&self) -> Result<()> {
        let want = Layout::new(&self.config);
        if want != self.layout
            || self.theta.len() != want.theta_len
            || self.psi.len() != want.psi_len
            || self.psi_target.len() != want.psi_len
        {
            return Err(Error::ShapeMismatch("parameter vectors do not match layout".into()));
        }
        Ok(())
    }
}

/// Directed graph with node and edge features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphInput {
    pub nodes: usize,
    /// Row-major `nodes × NODE_FEATURES`.
    pub node_features: Vec<f64>,
    /// (from, to); every undirected link appears once per direction.
    pub edges: Vec<(usize, usize)>,
    /// Row-major `edges × EDGE_FEATURES`.
    pub edge_features: Vec<f64>,
}

impl GraphInput {
    pub fn validate(&self) -> Result<()> {
        if self.node_features.len() != self.nodes * NODE_FEATURES {
            return Err(Error::ShapeMismatch(format!(
                "{} node features for {} nodes",
                self.node_features.len(),
                self.nodes
            )));
        }
        if self.edge_features.len() != self.edges.len() * EDGE_FEATURES {
            return Err(Error::ShapeMismatch(format!(
                "{} edge features for {} edges",
                self.edge_features.len(),
                self.edges.len()
            )));
        }
        if let Some(&(u, v)) = self.edges.iter().find(|&&(u, v)| u >= self.nodes || v >= self.nodes) {
            return Err(Error::ShapeMismatch(format!("edge ({u},{v}) outside {} nodes", self.nodes)));
        }
        Ok(())
    }

    pub fn node(&self, v: usize) -> &[f64] {
        &self.node_features[v * NODE_FEATURES..(v + 1) * NODE_FEATURES]
    }

    pub fn edge(&self, e: usize) -> &[f64] {
        &self.edge_features[e * EDGE_FEATURES..(e + 1) * EDGE_FEATURES]
    }
}

/// One scorable action: the node pair it acts between, its kind and its
/// feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionQuery {
    pub u: usize,
    pub v: usize,
    pub kind: usize,
    pub features: [f64; ACTION_FEATURES],
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    pub h_in: Vec<f64>,
    pub messages: Vec<MlpCache>,
    pub gru: Vec<GruCache>,
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub dim: usize,
    pub h0: Vec<f64>,
    pub layers: Vec<LayerCache>,
    /// Final node states, row-major `nodes × dim`.
    pub h: Vec<f64>,
    pub in_degree: Vec<usize>,
}

impl Embedding {
    pub fn node(&self, v: usize) -> &[f64] {
        &self.h[v * self.dim..(v + 1) * self.dim]
    }

    pub fn mean_pool(&self) -> Vec<f64> {
        let n = self.h.len() / self.dim.max(1);
        let mut out = vec![0.0; self.dim];
        for v in 0..n {
            for (o, x) in out.iter_mut().zip(self.node(v)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|x| *x /= n.max(1) as f64);
        out
    }
}

pub fn embed(p: &GnnParams, g: &GraphInput) -> Result<Embedding> {
    g.validate()?;
    let d = p.config.hidden;
    let n = g.nodes;
    let mut h0 = vec![0.0; n * d];
    for v in 0..n {
        p.layout.encoder.forward(&p.theta, g.node(v), &mut h0[v * d..(v + 1) * d]);
    }
    h0.iter_mut().for_each(|x| *x = x.tanh());
    let mut in_degree = vec![0; n];
    for &(_, v) in &g.edges {
        in_degree[v] += 1;
    }
    let mut h = h0.clone();
    let mut layers = Vec::with_capacity(p.layout.layers.len());
    for layer in &p.layout.layers {
        let mut agg = vec![0.0; n * d];
        let mut messages = Vec::with_capacity(g.edges.len());
        for (e, &(u, v)) in g.edges.iter().enumerate() {
            let x: Vec<f64> = h[u * d..(u + 1) * d]
                .iter()
                .chain(&h[v * d..(v + 1) * d])
                .chain(g.edge(e))
                .copied()
                .collect();
            let c = layer.message.forward(&p.theta, x);
            let scale = match p.config.aggregation {
                Aggregation::Sum => 1.0,
                Aggregation::Mean => 1.0 / in_degree[v] as f64,
            };
            for (a, m) in agg[v * d..(v + 1) * d].iter_mut().zip(&c.y) {
                *a += scale * m;
            }
            messages.push(c);
        }
        let mut next = vec![0.0; n * d];
        let mut grus = Vec::with_capacity(n);
        for v in 0..n {
            let (out, c) = layer
                .gru
                .forward(&p.theta, &agg[v * d..(v + 1) * d], &h[v * d..(v + 1) * d]);
            next[v * d..(v + 1) * d].copy_from_slice(&out);
            grus.push(c);
        }
        layers.push(LayerCache {
            h_in: std::mem::replace(&mut h, next),
            messages,
            gru: grus,
        });
    }
    Ok(Embedding {
        dim: d,
        h0,
        layers,
        h,
        in_degree,
    })
}

fn pair_input(emb: &Embedding, q: &ActionQuery, prefix: Option<&[f64]>) -> Vec<f64> {
    let (hu, hv) = (emb.node(q.u), emb.node(q.v));
    let mut x: Vec<f64> = prefix.map(<[f64]>::to_vec).unwrap_or_default();
    x.extend(hu.iter().zip(hv).map(|(a, b)| a + b));
    x.extend(hu.iter().zip(hv).map(|(a, b)| a * b));
    x.extend((0..ActionKind::COUNT).map(|k| f64::from(u8::from(k == q.kind))));
    x.extend_from_slice(&q.features);
    x
}

fn check_queries(emb: &Embedding, queries: &[ActionQuery]) -> Result<()> {
    let n = emb.h.len() / emb.dim.max(1);
    for q in queries {
        if q.u >= n || q.v >= n || q.kind >= ActionKind::COUNT {
            return Err(Error::ShapeMismatch(format!(
                "query ({}, {}, kind {}) outside graph of {n} nodes",
                q.u, q.v, q.kind
            )));
        }
    }
    Ok(())
}

pub fn score(p: &GnnParams, emb: &Embedding, queries: &[ActionQuery]) -> Result<(Vec<f64>, Vec<MlpCache>)> {
    check_queries(emb, queries)?;
    let caches: Vec<MlpCache> = queries
        .iter()
        .map(|q| p.layout.scorer.forward(&p.theta, pair_input(emb, q, None)))
        .collect();
    Ok((caches.iter().map(|c| c.y[0]).collect(), caches))
}

/// Embeddings and one logit per query.
pub fn forward(p: &GnnParams, g: &GraphInput, queries: &[ActionQuery]) -> Result<(Embedding, Vec<f64>)> {
    let emb = embed(p, g)?;
    let (logits, _) = score(p, &emb, queries)?;
    Ok((emb, logits))
}

/// Gradient of a scalar loss with respect to θ, given its gradient with
/// respect to the logits.
pub fn backward(
    p: &GnnParams,
    g: &GraphInput,
    emb: &Embedding,
    queries: &[ActionQuery],
    dlogits: &[f64],
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; p.theta.len()];
    backward_into(p, g, emb, queries, dlogits, &mut grad)?;
    Ok(grad)
}

pub fn backward_into(
    p: &GnnParams,
    g: &GraphInput,
    emb: &Embedding,
    queries: &[ActionQuery],
    dlogits: &[f64],
    grad: &mut [f64],
) -> Result<()> {
    if dlogits.len() != queries.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit gradients for {} queries",
            dlogits.len(),
            queries.len()
        )));
    }
    let (_, caches) = score(p, emb, queries)?;
    let d = emb.dim;
    let n = g.nodes;
    let mut dh = vec![0.0; n * d];
    for ((q, c), &dl) in queries.iter().zip(&caches).zip(dlogits) {
        if dl == 0.0 {
            continue;
        }
        let dx = p.layout.scorer.backward(&p.theta, c, &[dl], grad);
        let (hu, hv) = (emb.node(q.u).to_vec(), emb.node(q.v).to_vec());
        for i in 0..d {
            let dsum = dx[i];
            let dprod = dx[d + i];
            dh[q.u * d + i] += dsum + dprod * hv[i];
            dh[q.v * d + i] += dsum + dprod * hu[i];
        }
    }
    for (layer, cache) in p.layout.layers.iter().zip(&emb.layers).rev() {
        let mut dprev = vec![0.0; n * d];
        let mut dagg = vec![0.0; n * d];
        for v in 0..n {
            let hv = &cache.h_in[v * d..(v + 1) * d];
            let (dm, dhv) = layer
                .gru
                .backward(&p.theta, hv, &cache.gru[v], &dh[v * d..(v + 1) * d], grad);
            dagg[v * d..(v + 1) * d].copy_from_slice(&dm);
            for (a, b) in dprev[v * d..(v + 1) * d].iter_mut().zip(dhv) {
                *a += b;
            }
        }
        for (e, &(u, v)) in g.edges.iter().enumerate() {
            let scale = match p.config.aggregation {
                Aggregation::Sum => 1.0,
                Aggregation::Mean => 1.0 / emb.in_degree[v] as f64,
            };
            let dy: Vec<f64> = dagg[v * d..(v + 1) * d].iter().map(|x| x * scale).collect();
            let dx = layer.message.backward(&p.theta, &cache.messages[e], &dy, grad);
            for i in 0..d {
                dprev[u * d + i] += dx[i];
                dprev[v * d + i] += dx[d + i];
            }
        }
        dh = dprev;
    }
    for v in 0..n {
        let dy: Vec<f64> = (0..d)
            .map(|i| dh[v * d + i] * (1.0 - emb.h0[v * d + i].powi(2)))
            .collect();
        p.layout.encoder.backward(&p.theta, g.node(v), &dy, grad, None);
    }
    Ok(())
}

/// Critic estimates `Q_ψ(b, a)` from detached embeddings.
pub fn critic_values(
    layout: &Layout,
    psi: &[f64],
    emb: &Embedding,
    queries: &[ActionQuery],
) -> Result<(Vec<f64>, Vec<MlpCache>)> {
    check_queries(emb, queries)?;
    let pool = emb.mean_pool();
    let caches: Vec<MlpCache> = queries
        .iter()
        .map(|q| layout.critic.forward(psi, pair_input(emb, q, Some(&pool))))
        .collect();
    Ok((caches.iter().map(|c| c.y[0]).collect(), caches))
}

/// Accumulate `dq · ∂Q/∂ψ` into `grad`.
pub fn critic_backward(layout: &Layout, psi: &[f64], cache: &MlpCache, dq: f64, grad: &mut [f64]) {
    layout.critic.backward(psi, cache, &[dq], grad);
}
