//! Relation representation model and margin-loss training.
//!
//! An instance is encoded by wrapping the head mention in `[E1] .. [/E1]` and
//! the tail mention in `[E2] .. [/E2]`, mean-pooling token embeddings over
//! three disjoint pools (head tokens, tail tokens, everything else including
//! the four span markers), concatenating the pools and applying one affine
//! layer followed by `tanh`.
//!
//! Distances are squared Euclidean. Hyber groups are scored with a rank
//! margin loss over (sibling, cousin, other) replacements, Gcc groups with a
//! pairwise contrastive margin loss. Gradients are derived by hand; hinges use
//! a zero subgradient at the kink.

use crate::intervene::{GccSet, Group, HyberSet};
use crate::instance::RelationInstance;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use thiserror::Error;

pub const UNK: &str = "[UNK]";
pub const MARKERS: [&str; 8] = ["[E1]", "[/E1]", "[E2]", "[/E2]", "[H]", "[R]", "[T]", UNK];
const HEAD_OPEN: usize = 0;
const HEAD_CLOSE: usize = 1;
const TAIL_OPEN: usize = 2;
const TAIL_CLOSE: usize = 3;
const UNK_ID: usize = 7;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncoderError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training data has no groups")]
    EmptyData,
    #[error("model file: {0}")]
    Model(String),
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, EncoderError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(EncoderError::Model("ragged matrix".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Markers first (fixed ids), then the given tokens sorted and deduplicated.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let rest: BTreeSet<&str> = tokens
            .into_iter()
            .filter(|t| !MARKERS.contains(t))
            .collect();
        let list: Vec<String> = MARKERS
            .iter()
            .copied()
            .chain(rest)
            .map(str::to_string)
            .collect();
        Self::from_list(list).expect("markers are unique")
    }

    /// Keeps the given order; the first eight entries must be the markers.
    pub fn from_list(tokens: Vec<String>) -> Result<Self, EncoderError> {
        if tokens.len() < MARKERS.len() || tokens.iter().zip(MARKERS).any(|(a, b)| a != b) {
            return Err(EncoderError::Model("vocab must start with the marker tokens".into()));
        }
        let index: HashMap<String, usize> = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        if index.len() != tokens.len() {
            return Err(EncoderError::Model("duplicate vocab entry".into()));
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Hyperparameters. Defaults suit the small pooled encoder; with a large
/// pretrained encoder one would use learning rate 1e-5 and dropout 0.6,
/// keeping batch 32, weight decay 3e-6 and the 0.85 decay per 1000 batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Token embedding width.
    pub d_e: usize,
    /// Representation width.
    pub d: usize,
    /// Margin of the entity ranking loss.
    pub margin_entity: f64,
    /// Margin of the context contrastive loss.
    pub margin_context: f64,
    pub weight_entity: f64,
    pub weight_context: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub decay_factor: f64,
    /// Mini-batches between learning-rate decays.
    pub decay_interval: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Standard deviation of the initial token embeddings.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d_e: 32,
            d: 32,
            margin_entity: 0.2,
            margin_context: 0.2,
            weight_entity: 1.0,
            weight_context: 1.0,
            learning_rate: 1e-3,
            weight_decay: 3e-6,
            batch_size: 32,
            epochs: 20,
            decay_factor: 0.85,
            decay_interval: 1000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::InvalidConfig(m.to_string()));
        if self.d_e == 0 || self.d == 0 {
            return bad("dimensions must be positive");
        }
        if !(self.margin_entity > 0.0 && self.margin_context > 0.0) {
            return bad("margins must be > 0");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay factor must be in (0, 1]");
        }
        if self.batch_size == 0 || self.decay_interval == 0 {
            return bad("batch size and decay interval must be positive");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.weight_decay < 0.0 {
            return bad("learning rate must be > 0 and weight decay >= 0");
        }
        if self.weight_entity < 0.0 || self.weight_context < 0.0 {
            return bad("loss weights must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub vocab: Vocab,
    /// V × d_e
    pub tok_emb: Matrix,
    /// d × 3·d_e
    pub proj_w: Matrix,
    pub proj_b: Vec<f64>,
    pub optimizer: AdamState,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Representation(pub Vec<f64>);

impl Representation {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Token ids of the three pools.
#[derive(Debug, Clone)]
struct Pools {
    head: Vec<usize>,
    tail: Vec<usize>,
    ctx: Vec<usize>,
}

impl Pools {
    fn of(inst: &RelationInstance, vocab: &Vocab) -> Self {
        let mut ctx = vec![HEAD_OPEN, HEAD_CLOSE, TAIL_OPEN, TAIL_CLOSE];
        let (mut head, mut tail) = (Vec::new(), Vec::new());
        for (i, tok) in inst.tokens.iter().enumerate() {
            let id = vocab.id(tok);
            if inst.head.contains(i) {
                head.push(id);
            } else if inst.tail.contains(i) {
                tail.push(id);
            } else {
                ctx.push(id);
            }
        }
        Pools { head, tail, ctx }
    }

    fn blocks(&self) -> [&[usize]; 3] {
        [&self.head, &self.tail, &self.ctx]
    }
}

/// Forward pass state kept for backprop.
struct Forward {
    pools: Pools,
    pooled: Vec<f64>,
    out: Vec<f64>,
}

impl EncoderParams {
    /// Random initialization: embeddings ~ N(0, init_scale²), projection
    /// ~ N(0, 1/(3·d_e)), zero bias.
    pub fn init(vocab: Vocab, config: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d_e, d) = (config.d_e, config.d);
        let emb_dist = Normal::new(0.0, config.init_scale).expect("finite scale");
        let w_dist = Normal::new(0.0, (1.0 / (3 * d_e) as f64).sqrt()).expect("finite scale");
        let mut tok_emb = Matrix::zeros(vocab.len(), d_e);
        tok_emb.data.iter_mut().for_each(|x| *x = emb_dist.sample(&mut rng));
        let mut proj_w = Matrix::zeros(d, 3 * d_e);
        proj_w.data.iter_mut().for_each(|x| *x = w_dist.sample(&mut rng));
        let n = tok_emb.data.len() + proj_w.data.len() + d;
        EncoderParams {
            vocab,
            tok_emb,
            proj_w,
            proj_b: vec![0.0; d],
            optimizer: AdamState {
                m: vec![0.0; n],
                v: vec![0.0; n],
                step: 0,
            },
            config: config.clone(),
        }
    }

    pub fn d_e(&self) -> usize {
        self.tok_emb.cols
    }

    pub fn d(&self) -> usize {
        self.proj_b.len()
    }

    pub fn n_params(&self) -> usize {
        self.tok_emb.data.len() + self.proj_w.data.len() + self.proj_b.len()
    }

    pub fn is_finite(&self) -> bool {
        self.tok_emb
            .data
            .iter()
            .chain(&self.proj_w.data)
            .chain(&self.proj_b)
            .all(|x| x.is_finite())
    }

    fn forward(&self, inst: &RelationInstance) -> Forward {
        let pools = Pools::of(inst, &self.vocab);
        let d_e = self.d_e();
        let mut pooled = vec![0.0; 3 * d_e];
        for (b, ids) in pools.blocks().iter().enumerate() {
            let slot = &mut pooled[b * d_e..(b + 1) * d_e];
            for &id in ids.iter() {
                for (s, e) in slot.iter_mut().zip(self.tok_emb.row(id)) {
                    *s += e;
                }
            }
            let n = ids.len() as f64;
            slot.iter_mut().for_each(|s| *s /= n);
        }
        let out = (0..self.d())
            .map(|k| {
                let z: f64 = self
                    .proj_w
                    .row(k)
                    .iter()
                    .zip(&pooled)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
                    + self.proj_b[k];
                z.tanh()
            })
            .collect();
        Forward { pools, pooled, out }
    }

    /// Accumulates the gradient of a scalar whose derivative w.r.t. this
    /// forward's output is `g_out`.
    fn backward(&self, f: &Forward, g_out: &[f64], grad: &mut SparseGrad) {
        let d_e = self.d_e();
        let g_z: Vec<f64> = g_out
            .iter()
            .zip(&f.out)
            .map(|(g, r)| g * (1.0 - r * r))
            .collect();
        let mut g_x = vec![0.0; 3 * d_e];
        for (k, &gz) in g_z.iter().enumerate() {
            if gz == 0.0 {
                continue;
            }
            grad.proj_b[k] += gz;
            let w = self.proj_w.row(k);
            let gw = &mut grad.proj_w[k * 3 * d_e..(k + 1) * 3 * d_e];
            for j in 0..3 * d_e {
                gw[j] += gz * f.pooled[j];
                g_x[j] += gz * w[j];
            }
        }
        for (b, ids) in f.pools.blocks().iter().enumerate() {
            let n = ids.len() as f64;
            let g = &g_x[b * d_e..(b + 1) * d_e];
            for &id in ids.iter() {
                let row = grad.emb_row(id, d_e);
                for (r, gv) in row.iter_mut().zip(g) {
                    *r += gv / n;
                }
            }
        }
    }
}

pub fn encode(inst: &RelationInstance, p: &EncoderParams) -> Representation {
    Representation(p.forward(inst).out)
}

pub fn encode_all(insts: &[RelationInstance], p: &EncoderParams) -> Vec<Representation> {
    insts.par_iter().map(|x| encode(x, p)).collect()
}

/// Squared Euclidean distance.
pub fn distance(a: &Representation, b: &Representation) -> Result<f64, EncoderError> {
    if a.dim() != b.dim() {
        return Err(EncoderError::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(sq_dist(&a.0, &b.0))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Hinge argument `(closer + margin) - farther`; zero or negative means the
/// margin constraint holds.
#[inline]
fn margin_arg(closer: f64, farther: f64, margin: f64) -> f64 {
    (closer + margin) - farther
}

/// `Σ_i max(0, D(P,X_i) − D(P,X_{i+1}) + m)` over the sibling/cousin/other ranking.
pub fn ranking_loss(d_ranked: &[f64; 3], margin: f64) -> f64 {
    d_ranked
        .windows(2)
        .map(|w| margin_arg(w[0], w[1], margin).max(0.0))
        .sum()
}

/// `Σ_p Σ_n max(0, D(P,X_p) − D(P,X_n) + m)`.
pub fn contrastive_loss(d_pos: &[f64], d_neg: &[f64], margin: f64) -> f64 {
    d_pos
        .iter()
        .flat_map(|&p| d_neg.iter().map(move |&n| margin_arg(p, n, margin).max(0.0)))
        .sum()
}

fn hyber_distances(h: &HyberSet, p: &EncoderParams) -> [f64; 3] {
    let proto = p.forward(&h.prototype).out;
    std::array::from_fn(|i| sq_dist(&proto, &p.forward(&h.ranked[i]).out))
}

fn gcc_distances(g: &GccSet, p: &EncoderParams) -> (Vec<f64>, Vec<f64>) {
    let proto = p.forward(&g.prototype).out;
    let ds = |xs: &[RelationInstance]| xs.iter().map(|x| sq_dist(&proto, &p.forward(x).out)).collect();
    (ds(&g.positives), ds(&g.negatives))
}

/// Weighted loss of one group.
pub fn group_loss(group: &Group, p: &EncoderParams, cfg: &TrainConfig) -> f64 {
    match group {
        Group::Hyber(h) => cfg.weight_entity * ranking_loss(&hyber_distances(h, p), cfg.margin_entity),
        Group::Gcc(g) => {
            let (dp, dn) = gcc_distances(g, p);
            cfg.weight_context * contrastive_loss(&dp, &dn, cfg.margin_context)
        }
    }
}

/// `L_E` over the Hyber set plus `L_C` over the Gcc set, each against its own
/// prototype and scaled by its configured weight.
pub fn combined_loss(hyber: &HyberSet, gcc: &GccSet, p: &EncoderParams, cfg: &TrainConfig) -> f64 {
    group_loss(&Group::Hyber(hyber.clone()), p, cfg) + group_loss(&Group::Gcc(gcc.clone()), p, cfg)
}

/// Mean group loss over a batch.
pub fn batch_loss(batch: &[Group], p: &EncoderParams, cfg: &TrainConfig) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.iter().map(|g| group_loss(g, p, cfg)).sum::<f64>() / batch.len() as f64
}

/// Every hinge argument of a group, for kink checks.
pub fn hinge_arguments(group: &Group, p: &EncoderParams, cfg: &TrainConfig) -> Vec<f64> {
    match group {
        Group::Hyber(h) => {
            let d = hyber_distances(h, p);
            d.windows(2).map(|w| margin_arg(w[0], w[1], cfg.margin_entity)).collect()
        }
        Group::Gcc(g) => {
            let (dp, dn) = gcc_distances(g, p);
            dp.iter()
                .flat_map(|&a| dn.iter().map(move |&b| margin_arg(a, b, cfg.margin_context)))
                .collect()
        }
    }
}

/// Gradient with the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tok_emb: Matrix,
    pub proj_w: Matrix,
    pub proj_b: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(p: &EncoderParams) -> Self {
        Gradients {
            tok_emb: Matrix::zeros(p.tok_emb.rows, p.tok_emb.cols),
            proj_w: Matrix::zeros(p.proj_w.rows, p.proj_w.cols),
            proj_b: vec![0.0; p.proj_b.len()],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.tok_emb.data.iter().chain(&self.proj_w.data).chain(&self.proj_b)
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|&x| x == 0.0)
    }

    fn check_finite(&self) -> Result<(), EncoderError> {
        if !self.tok_emb.data.iter().all(|x| x.is_finite()) {
            return Err(EncoderError::NonFiniteGradient("tok_emb"));
        }
        if !self.proj_w.data.iter().all(|x| x.is_finite()) {
            return Err(EncoderError::NonFiniteGradient("proj_w"));
        }
        if !self.proj_b.iter().all(|x| x.is_finite()) {
            return Err(EncoderError::NonFiniteGradient("proj_b"));
        }
        Ok(())
    }
}

/// Per-group gradient with sparse embedding rows.
struct SparseGrad {
    emb_rows: HashMap<usize, Vec<f64>>,
    proj_w: Vec<f64>,
    proj_b: Vec<f64>,
    loss: f64,
}

impl SparseGrad {
    fn new(p: &EncoderParams) -> Self {
        SparseGrad {
            emb_rows: HashMap::new(),
            proj_w: vec![0.0; p.proj_w.data.len()],
            proj_b: vec![0.0; p.d()],
            loss: 0.0,
        }
    }

    fn emb_row(&mut self, id: usize, d_e: usize) -> &mut Vec<f64> {
        self.emb_rows.entry(id).or_insert_with(|| vec![0.0; d_e])
    }
}

/// Pushes `∂L/∂D` for a distance `D = |a − b|²` back into both outputs.
fn add_distance_grad(coef: f64, a: &[f64], b: &[f64], ga: &mut [f64], gb: &mut [f64]) {
    for k in 0..a.len() {
        let g = 2.0 * coef * (a[k] - b[k]);
        ga[k] += g;
        gb[k] -= g;
    }
}

fn group_grad(group: &Group, p: &EncoderParams, cfg: &TrainConfig, scale: f64) -> SparseGrad {
    let mut grad = SparseGrad::new(p);
    let insts = group.instances();
    let fwd: Vec<Forward> = insts.iter().map(|x| p.forward(x)).collect();
    let d = p.d();
    // output gradients, index 0 is the prototype
    let mut g_out = vec![vec![0.0; d]; fwd.len()];
    let proto = &fwd[0].out;
    let (head, rest) = g_out.split_at_mut(1);
    let g_proto = &mut head[0];
    match group {
        Group::Hyber(_) => {
            let dist: Vec<f64> = fwd[1..].iter().map(|f| sq_dist(proto, &f.out)).collect();
            for i in 0..2 {
                let arg = margin_arg(dist[i], dist[i + 1], cfg.margin_entity);
                if arg > 0.0 {
                    let w = scale * cfg.weight_entity;
                    grad.loss += w * arg;
                    add_distance_grad(w, proto, &fwd[1 + i].out, g_proto, &mut rest[i]);
                    add_distance_grad(-w, proto, &fwd[2 + i].out, g_proto, &mut rest[i + 1]);
                }
            }
        }
        Group::Gcc(g) => {
            let n_pos = g.positives.len();
            let dist: Vec<f64> = fwd[1..].iter().map(|f| sq_dist(proto, &f.out)).collect();
            for ip in 0..n_pos {
                for ineg in n_pos..dist.len() {
                    let arg = margin_arg(dist[ip], dist[ineg], cfg.margin_context);
                    if arg > 0.0 {
                        let w = scale * cfg.weight_context;
                        grad.loss += w * arg;
                        add_distance_grad(w, proto, &fwd[1 + ip].out, g_proto, &mut rest[ip]);
                        add_distance_grad(-w, proto, &fwd[1 + ineg].out, g_proto, &mut rest[ineg]);
                    }
                }
            }
        }
    }
    for (f, g) in fwd.iter().zip(&g_out) {
        if g.iter().any(|&x| x != 0.0) {
            p.backward(f, g, &mut grad);
        }
    }
    grad
}

/// Loss and analytic gradient of the mean group loss over `batch`.
///
/// Groups are evaluated in parallel and reduced in batch order, so the
/// result does not depend on the thread count.
pub fn loss_and_gradient(
    batch: &[Group],
    p: &EncoderParams,
    cfg: &TrainConfig,
) -> Result<(f64, Gradients), EncoderError> {
    if batch.is_empty() {
        return Err(EncoderError::EmptyData);
    }
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<SparseGrad> = batch.par_iter().map(|g| group_grad(g, p, cfg, scale)).collect();
    let mut out = Gradients::zeros_like(p);
    let mut loss = 0.0;
    for part in parts {
        loss += part.loss;
        for (a, b) in out.proj_w.data.iter_mut().zip(&part.proj_w) {
            *a += b;
        }
        for (a, b) in out.proj_b.iter_mut().zip(&part.proj_b) {
            *a += b;
        }
        let mut rows: Vec<(usize, Vec<f64>)> = part.emb_rows.into_iter().collect();
        rows.sort_unstable_by_key(|(id, _)| *id);
        for (id, row) in rows {
            for (a, b) in out.tok_emb.row_mut(id).iter_mut().zip(&row) {
                *a += b;
            }
        }
    }
    out.check_finite()?;
    Ok((loss, out))
}

pub fn gradient(batch: &[Group], p: &EncoderParams, cfg: &TrainConfig) -> Result<Gradients, EncoderError> {
    loss_and_gradient(batch, p, cfg).map(|(_, g)| g)
}

impl EncoderParams {
    /// One AdamW step with decoupled weight decay.
    pub fn apply(&mut self, g: &Gradients, lr: f64) {
        let cfg = &self.config;
        let (b1, b2, eps, wd) = (cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
        let st = &mut self.optimizer;
        st.step += 1;
        let bc1 = 1.0 - b1.powi(st.step as i32);
        let bc2 = 1.0 - b2.powi(st.step as i32);
        let params = self
            .tok_emb
            .data
            .iter_mut()
            .chain(self.proj_w.data.iter_mut())
            .chain(self.proj_b.iter_mut());
        for (((x, gi), m), v) in params.zip(g.iter()).zip(st.m.iter_mut()).zip(st.v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * gi;
            *v = b2 * *v + (1.0 - b2) * gi * gi;
            let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
            *x -= lr * (update + wd * *x);
        }
    }
}

/// Supplies training groups per epoch.
pub trait GroupSource {
    /// Every token that may appear in any epoch.
    fn vocabulary(&self) -> BTreeSet<String>;
    fn groups(&self, epoch: usize) -> Result<Vec<Group>, String>;
}

/// Precomputed sampling rounds; epoch `e` uses round `e mod n`.
impl GroupSource for Vec<Vec<Group>> {
    fn vocabulary(&self) -> BTreeSet<String> {
        self.iter()
            .flatten()
            .flat_map(|g| g.instances())
            .flat_map(|x| x.tokens.iter().cloned())
            .collect()
    }

    fn groups(&self, epoch: usize) -> Result<Vec<Group>, String> {
        if self.is_empty() {
            return Err("no sampling rounds".into());
        }
        Ok(self[epoch % self.len()].clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub batches: usize,
    pub learning_rate: f64,
}

/// Initial parameters for a training run over `source`.
pub fn init_for<S: GroupSource + ?Sized>(source: &S, cfg: &TrainConfig) -> EncoderParams {
    let vocab_tokens = source.vocabulary();
    EncoderParams::init(Vocab::build(vocab_tokens.iter().map(String::as_str)), cfg)
}

/// Mini-batch AdamW over shuffled groups, learning rate multiplied by
/// `decay_factor` every `decay_interval` batches.
pub fn train<S: GroupSource + ?Sized>(
    source: &S,
    cfg: &TrainConfig,
) -> Result<(EncoderParams, Vec<EpochLog>), String> {
    cfg.validate().map_err(|e| e.to_string())?;
    let params = init_for(source, cfg);
    train_from(params, source, cfg)
}

pub fn train_from<S: GroupSource + ?Sized>(
    mut params: EncoderParams,
    source: &S,
    cfg: &TrainConfig,
) -> Result<(EncoderParams, Vec<EpochLog>), String> {
    cfg.validate().map_err(|e| e.to_string())?;
    params.config = cfg.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut batch_no = 0usize;
    for epoch in 0..cfg.epochs {
        let mut groups = source.groups(epoch)?;
        if groups.is_empty() {
            return Err(EncoderError::EmptyData.to_string());
        }
        groups.shuffle(&mut rng);
        let mut total = 0.0;
        let mut n_batches = 0;
        let mut lr = cfg.learning_rate;
        for (b, batch) in groups.chunks(cfg.batch_size).enumerate() {
            lr = cfg.learning_rate * cfg.decay_factor.powi((batch_no / cfg.decay_interval) as i32);
            let (loss, grad) = loss_and_gradient(batch, &params, cfg).map_err(|e| e.to_string())?;
            if !loss.is_finite() {
                return Err(EncoderError::NonFiniteLoss { epoch, batch: b }.to_string());
            }
            total += loss * batch.len() as f64;
            params.apply(&grad, lr);
            batch_no += 1;
            n_batches += 1;
        }
        let log = EpochLog {
            epoch,
            mean_loss: total / groups.len() as f64,
            batches: n_batches,
            learning_rate: lr,
        };
        log::info!(
            "epoch {} loss {:.6} lr {:.3e} ({} batches)",
            log.epoch,
            log.mean_loss,
            log.learning_rate,
            log.batches
        );
        logs.push(log);
    }
    Ok((params, logs))
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    config: TrainConfig,
    vocab: Vec<String>,
    tok_emb: Vec<Vec<f64>>,
    proj_w: Vec<Vec<f64>>,
    proj_b: Vec<f64>,
}

impl EncoderParams {
    /// Versioned JSON model document. Optimizer state is not stored.
    pub fn to_json(&self) -> String {
        let doc = ModelFile {
            version: MODEL_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.tokens().to_vec(),
            tok_emb: self.tok_emb.to_rows(),
            proj_w: self.proj_w.to_rows(),
            proj_b: self.proj_b.clone(),
        };
        serde_json::to_string(&doc).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, EncoderError> {
        let doc: ModelFile = serde_json::from_str(s).map_err(|e| EncoderError::Model(e.to_string()))?;
        if doc.version != MODEL_VERSION {
            return Err(EncoderError::Model(format!("unsupported version {}", doc.version)));
        }
        let vocab = Vocab::from_list(doc.vocab)?;
        let tok_emb = Matrix::from_rows(&doc.tok_emb)?;
        let proj_w = Matrix::from_rows(&doc.proj_w)?;
        let d = doc.proj_b.len();
        if tok_emb.rows != vocab.len() || proj_w.rows != d || proj_w.cols != 3 * tok_emb.cols {
            return Err(EncoderError::Model("inconsistent dimensions".into()));
        }
        let n = tok_emb.data.len() + proj_w.data.len() + d;
        let p = EncoderParams {
            vocab,
            tok_emb,
            proj_w,
            proj_b: doc.proj_b,
            optimizer: AdamState {
                m: vec![0.0; n],
                v: vec![0.0; n],
                step: 0,
            },
            config: doc.config,
        };
        if !p.is_finite() {
            return Err(EncoderError::Model("non-finite parameter".into()));
        }
        Ok(p)
    }
}
