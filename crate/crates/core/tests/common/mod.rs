//! Plain-arithmetic reference implementations shared by the integration
//! tests and the acceptance harness. Nothing here touches the autodiff graph.
#![allow(dead_code)]

use crossattn::attention::{BidafParams, CoattentionParams, DcaParams};
use crossattn::params::{ParamId, ParamStore};
use crossattn::rnn::{BiLstm, Lstm};
use crossattn::SeededRng;

pub type Mat = Vec<Vec<f64>>;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Softmax over the entries with `keep[j]`; others are 0.
pub fn masked_softmax(scores: &[f64], keep: &[bool]) -> Vec<f64> {
    let max = scores
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores
        .iter()
        .zip(keep)
        .map(|(&s, &k)| if k { (s - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `Σ_k w_k v_k`.
pub fn weighted_sum(weights: &[f64], vectors: &Mat) -> Vec<f64> {
    let d = vectors[0].len();
    (0..d).map(|c| weights.iter().zip(vectors).map(|(w, v)| w * v[c]).sum()).collect()
}

fn param(store: &ParamStore<f64>, id: ParamId) -> Mat {
    let t = store.get(id);
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Row vector times matrix.
fn vecmat(x: &[f64], w: &Mat) -> Vec<f64> {
    (0..w[0].len())
        .map(|j| x.iter().zip(w).map(|(xi, row)| xi * row[j]).sum())
        .collect()
}

/// One LSTM direction, gate order `[i | f | g | o]`, masked steps skipped.
pub fn lstm(store: &ParamStore<f64>, cell: &Lstm, xs: &Mat, mask: &[bool], reverse: bool) -> Mat {
    let h = cell.hidden;
    let w = param(store, cell.w_input);
    let u = param(store, cell.u_hidden);
    let b = store.get(cell.bias).values().to_vec();
    let mut out = vec![vec![0.0; h]; xs.len()];
    let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
    let order: Vec<usize> = if reverse {
        (0..xs.len()).rev().collect()
    } else {
        (0..xs.len()).collect()
    };
    for t in order {
        if !mask[t] {
            continue;
        }
        let xw = vecmat(&xs[t], &w);
        let hu = vecmat(&hs, &u);
        let pre: Vec<f64> = (0..4 * h).map(|k| xw[k] + hu[k] + b[k]).collect();
        for k in 0..h {
            let i = sigmoid(pre[k]);
            let f = sigmoid(pre[h + k]);
            let g = pre[2 * h + k].tanh();
            let o = sigmoid(pre[3 * h + k]);
            cs[k] = f * cs[k] + i * g;
            hs[k] = o * cs[k].tanh();
        }
        out[t] = hs.clone();
    }
    out
}

pub fn bilstm(store: &ParamStore<f64>, cell: &BiLstm, xs: &Mat, mask: &[bool]) -> Mat {
    let f = lstm(store, &cell.forward, xs, mask, false);
    let b = lstm(store, &cell.backward, xs, mask, true);
    f.into_iter()
        .zip(b)
        .map(|(mut a, b)| {
            a.extend(b);
            a
        })
        .collect()
}

pub fn concat(parts: &[&Mat]) -> Mat {
    (0..parts[0].len())
        .map(|i| parts.iter().flat_map(|p| p[i].iter().copied()).collect())
        .collect()
}

/// Reference outputs of one attention layer.
#[derive(Debug, Clone)]
pub struct OracleOut {
    pub states: Mat,
    pub s: Mat,
    pub alpha: Mat,
    pub beta: Mat,
    pub gamma: Option<Mat>,
    /// DCA's `d`, co-attention's second-level `s_i`, or BiDAF's tiled summary.
    pub second: Mat,
}

struct FirstLevel {
    s: Mat,
    alpha: Mat,
    a: Mat,
    beta: Mat,
    b: Mat,
}

fn first_level(c: &Mat, q: &Mat, cmask: &[bool], qmask: &[bool]) -> FirstLevel {
    let (n, m) = (c.len(), q.len());
    let s: Mat = c.iter().map(|ci| q.iter().map(|qj| dot(ci, qj)).collect()).collect();
    let alpha: Mat = (0..n)
        .map(|i| if cmask[i] { masked_softmax(&s[i], qmask) } else { vec![0.0; m] })
        .collect();
    let a: Mat = alpha.iter().map(|w| weighted_sum(w, q)).collect();
    let mut beta = vec![vec![0.0; m]; n];
    let mut b = vec![vec![0.0; c[0].len()]; m];
    for j in 0..m {
        if !qmask[j] {
            continue;
        }
        let col: Vec<f64> = (0..n).map(|i| s[i][j]).collect();
        let w = masked_softmax(&col, cmask);
        for i in 0..n {
            beta[i][j] = w[i];
        }
        b[j] = weighted_sum(&w, c);
    }
    FirstLevel { s, alpha, a, beta, b }
}

/// DCA step by step: C2Q, Q2C, `R = A Bᵀ`, `gamma`, `d`, then the biLSTM.
pub fn dca(store: &ParamStore<f64>, p: &DcaParams, c: &Mat, q: &Mat, cmask: &[bool], qmask: &[bool]) -> OracleOut {
    assert!(p.similarity.is_none(), "oracle covers the parameter-free similarity");
    let f = first_level(c, q, cmask, qmask);
    let n = c.len();
    let m = q.len();
    let r: Mat = f.a.iter().map(|ai| f.b.iter().map(|bj| dot(ai, bj)).collect()).collect();
    let gamma: Mat = (0..n)
        .map(|i| if cmask[i] { masked_softmax(&r[i], qmask) } else { vec![0.0; m] })
        .collect();
    let d: Mat = gamma.iter().map(|w| weighted_sum(w, &f.b)).collect();
    let states = bilstm(store, &p.lstm, &concat(&[c, &f.a, &d]), cmask);
    OracleOut {
        states,
        s: f.s,
        alpha: f.alpha,
        beta: f.beta,
        gamma: Some(gamma),
        second: d,
    }
}

/// BiDAF `[c; a; c⊙a; c⊙c̃]` with `c̃` from max-then-softmax weights.
pub fn bidaf(_store: &ParamStore<f64>, p: &BidafParams, c: &Mat, q: &Mat, cmask: &[bool], qmask: &[bool]) -> OracleOut {
    assert!(p.similarity.is_none());
    let f = first_level(c, q, cmask, qmask);
    let n = c.len();
    let row_max: Vec<f64> =
        f.s.iter()
            .map(|row| {
                row.iter()
                    .zip(qmask)
                    .filter(|(_, &k)| k)
                    .map(|(&v, _)| v)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
    let w = masked_softmax(&row_max, cmask);
    let summary = weighted_sum(&w, c);
    let states: Mat = (0..n)
        .map(|i| {
            if !cmask[i] {
                return vec![0.0; 4 * c[0].len()];
            }
            let ci = &c[i];
            let ai = &f.a[i];
            ci.iter()
                .copied()
                .chain(ai.iter().copied())
                .chain(ci.iter().zip(ai).map(|(x, y)| x * y))
                .chain(ci.iter().zip(&summary).map(|(x, y)| x * y))
                .collect()
        })
        .collect();
    OracleOut {
        states,
        s: f.s,
        alpha: f.alpha,
        beta: f.beta,
        gamma: None,
        second: vec![summary; n],
    }
}

/// Co-attention: projected question, first level over it, `s_i = Σ alpha_ij b_j`.
pub fn coattention(store: &ParamStore<f64>, p: &CoattentionParams, c: &Mat, q: &Mat, cmask: &[bool], qmask: &[bool]) -> OracleOut {
    assert!(p.similarity.is_none());
    let w = param(store, p.w_q);
    let bias = store.get(p.b_q).values().to_vec();
    let qp: Mat = q
        .iter()
        .zip(qmask)
        .map(|(qj, &keep)| {
            if keep {
                vecmat(qj, &w).iter().zip(&bias).map(|(x, b)| (x + b).tanh()).collect()
            } else {
                vec![0.0; qj.len()]
            }
        })
        .collect();
    let f = first_level(c, &qp, cmask, qmask);
    let second: Mat = f.alpha.iter().map(|a| weighted_sum(a, &f.b)).collect();
    let states = bilstm(store, &p.lstm, &concat(&[c, &f.a, &second]), cmask);
    OracleOut {
        states,
        s: f.s,
        alpha: f.alpha,
        beta: f.beta,
        gamma: None,
        second,
    }
}

/// `rows × cols` uniform entries in `[-a, a]`, with rows where `mask` is
/// false set to zero (padded encoder states).
pub fn random_states(rng: &mut SeededRng, mask: &[bool], cols: usize, a: f64) -> Mat {
    mask.iter()
        .map(|&keep| (0..cols).map(|_| if keep { rng.uniform_range(-a, a) } else { 0.0 }).collect())
        .collect()
}

pub fn flatten(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

/// Largest absolute difference between a graph value and a reference.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Shifts every parameter by `U(-a, a)` so biases are nonzero too.
pub fn perturb(store: &mut ParamStore<f64>, rng: &mut SeededRng, a: f64) {
    for t in store.tensors_mut() {
        let cols = t.cols();
        let frozen = t.frozen_rows().to_vec();
        for (k, v) in t.values_mut().iter_mut().enumerate() {
            if !frozen.contains(&(k / cols)) {
                *v += rng.uniform_range(-a, a);
            }
        }
    }
}
