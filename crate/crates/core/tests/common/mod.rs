//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

use openre::encoder::{EncoderParams, TrainConfig, Vocab};
use openre::intervene::{GccSet, Group, HyberSet, Side};
use openre::{RelationInstance, Span};
use rand::Rng;
use std::collections::HashMap;

/// Brute-force B³ by looping over ordered item pairs.
pub fn oracle_b3(pred: &[usize], gold: &[usize]) -> (f64, f64, f64) {
    let n = pred.len();
    let (mut p, mut r) = (0.0, 0.0);
    for i in 0..n {
        let (mut same_c, mut same_g, mut both) = (0.0, 0.0, 0.0);
        for j in 0..n {
            let c = pred[i] == pred[j];
            let g = gold[i] == gold[j];
            same_c += c as u8 as f64;
            same_g += g as u8 as f64;
            both += (c && g) as u8 as f64;
        }
        p += both / same_c;
        r += both / same_g;
    }
    let (p, r) = (p / n as f64, r / n as f64);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

fn entropy_of<K: std::hash::Hash + Eq>(counts: &HashMap<K, usize>, n: usize, log: fn(f64) -> f64) -> f64 {
    counts
        .values()
        .map(|&c| {
            let q = c as f64 / n as f64;
            -q * log(q)
        })
        .sum()
}

/// V-measure from joint and marginal entropies: `H(A|B) = H(A,B) − H(B)`.
pub fn oracle_v_with(pred: &[usize], gold: &[usize], log: fn(f64) -> f64) -> (f64, f64, f64) {
    let n = pred.len();
    let mut joint = HashMap::new();
    let mut pc = HashMap::new();
    let mut gc = HashMap::new();
    for (&c, &g) in pred.iter().zip(gold) {
        *joint.entry((c, g)).or_insert(0) += 1;
        *pc.entry(c).or_insert(0) += 1;
        *gc.entry(g).or_insert(0) += 1;
    }
    let h_joint = entropy_of(&joint, n, log);
    let h_pred = entropy_of(&pc, n, log);
    let h_gold = entropy_of(&gc, n, log);
    let homo = if gc.len() == 1 { 1.0 } else { 1.0 - (h_joint - h_pred) / h_gold };
    let comp = if pc.len() == 1 { 1.0 } else { 1.0 - (h_joint - h_gold) / h_pred };
    let v = if homo + comp == 0.0 { 0.0 } else { 2.0 * homo * comp / (homo + comp) };
    (homo, comp, v)
}

pub fn oracle_v(pred: &[usize], gold: &[usize]) -> (f64, f64, f64) {
    oracle_v_with(pred, gold, f64::ln)
}

/// Adjusted Rand index by counting agreements over unordered pairs.
pub fn oracle_ari(pred: &[usize], gold: &[usize]) -> f64 {
    let n = pred.len();
    let (mut both, mut only_c, mut only_g, mut total) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let c = pred[i] == pred[j];
            let g = gold[i] == gold[j];
            total += 1;
            match (c, g) {
                (true, true) => both += 1,
                (true, false) => only_c += 1,
                (false, true) => only_g += 1,
                _ => {}
            }
        }
    }
    let a = (both + only_c) as f64;
    let b = (both + only_g) as f64;
    let t = total as f64;
    let expected = if t == 0.0 { 0.0 } else { a * b / t };
    let max = (a + b) / 2.0;
    if max == expected {
        return if only_c == 0 && only_g == 0 { 1.0 } else { 0.0 };
    }
    (both as f64 - expected) / (max - expected)
}

pub fn random_labels<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

pub fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|s| s.to_string()).collect()
}

pub fn inst(id: &str, tokens: &[&str], head: [usize; 2], tail: [usize; 2]) -> RelationInstance {
    let tk = words(tokens);
    RelationInstance {
        id: id.into(),
        head_entity: tk[head[0]..=head[1]].join("_"),
        tail_entity: tk[tail[0]..=tail[1]].join("_"),
        tokens: tk,
        head: Span::from(head),
        tail: Span::from(tail),
        gold_relation: None,
    }
}

/// Twelve ordinary words; with the eight markers this gives V = 20.
pub const TINY_WORDS: [&str; 12] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet", "kilo", "lima",
];

pub fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        d_e: 4,
        d: 4,
        seed,
        ..Default::default()
    }
}

pub fn tiny_params(seed: u64) -> EncoderParams {
    let vocab = Vocab::build(TINY_WORDS.iter().copied());
    assert_eq!(vocab.len(), 20);
    EncoderParams::init(vocab, &tiny_config(seed))
}

/// Random instance over the tiny vocabulary: `len` tokens, 1-2 token spans.
pub fn random_tiny_instance<R: Rng>(rng: &mut R, id: &str) -> RelationInstance {
    let len = rng.random_range(5..10);
    let tokens: Vec<&str> = (0..len).map(|_| TINY_WORDS[rng.random_range(0..12)]).collect();
    let hw = rng.random_range(1..=2);
    let hs = rng.random_range(0..=len - hw - 2);
    let tw = rng.random_range(1..=2.min(len - hs - hw));
    let ts = rng.random_range(hs + hw..=len - tw);
    inst(id, &tokens, [hs, hs + hw - 1], [ts, ts + tw - 1])
}

pub fn random_hyber<R: Rng>(rng: &mut R) -> HyberSet {
    HyberSet {
        prototype: random_tiny_instance(rng, "p"),
        ranked: [
            random_tiny_instance(rng, "s"),
            random_tiny_instance(rng, "c"),
            random_tiny_instance(rng, "o"),
        ],
        replaced_side: Side::Head,
    }
}

pub fn random_gcc<R: Rng>(rng: &mut R, k_pos: usize, k_neg: usize) -> GccSet {
    GccSet {
        prototype: random_tiny_instance(rng, "p"),
        positives: (0..k_pos).map(|i| random_tiny_instance(rng, &format!("pos{i}"))).collect(),
        negatives: (0..k_neg).map(|i| random_tiny_instance(rng, &format!("neg{i}"))).collect(),
    }
}

/// All parameters in gradient order.
pub fn flat_params(p: &EncoderParams) -> Vec<f64> {
    p.tok_emb
        .data
        .iter()
        .chain(&p.proj_w.data)
        .chain(&p.proj_b)
        .copied()
        .collect()
}

pub fn param_mut(p: &mut EncoderParams, mut i: usize) -> &mut f64 {
    if i < p.tok_emb.data.len() {
        return &mut p.tok_emb.data[i];
    }
    i -= p.tok_emb.data.len();
    if i < p.proj_w.data.len() {
        return &mut p.proj_w.data[i];
    }
    i -= p.proj_w.data.len();
    &mut p.proj_b[i]
}

/// Central-difference gradient of `f` with respect to every parameter.
pub fn numeric_gradient(p: &EncoderParams, h: f64, f: impl Fn(&EncoderParams) -> f64) -> Vec<f64> {
    let mut q = p.clone();
    (0..p.n_params())
        .map(|i| {
            let x0 = *param_mut(&mut q, i);
            *param_mut(&mut q, i) = x0 + h;
            let up = f(&q);
            *param_mut(&mut q, i) = x0 - h;
            let down = f(&q);
            *param_mut(&mut q, i) = x0;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, tiny)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()) + norm(&mut b.iter().copied());
    diff / scale.max(1e-300)
}

pub fn groups_of(h: &HyberSet, g: &GccSet) -> Vec<Group> {
    vec![Group::Hyber(h.clone()), Group::Gcc(g.clone())]
}

/// Largest per-coordinate relative error. Coordinates whose gradient is
/// essentially zero on both sides are compared absolutely, since central
/// differences leave O(h²) noise there.
pub fn max_coordinate_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let scale = x.abs().max(y.abs());
            if scale < 1e-7 {
                (x - y).abs()
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}
