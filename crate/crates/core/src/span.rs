//! Start/end distributions over context positions, the span loss and span
//! decoding.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::{xavier_uniform, ParamGroup, ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::scalar::Real;
use crate::tensor::{Graph, Tensor, Var};

pub const DEFAULT_MAX_SPAN_LEN: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DecodeMode {
    /// Separate argmaxes; an end before the start yields no answer.
    #[default]
    Independent,
    /// Best-scoring pair with `start ≤ end < start + max_len`.
    Constrained,
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Independent => "independent",
            Self::Constrained => "constrained",
        })
    }
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(Self::Independent),
            "constrained" => Ok(Self::Constrained),
            other => Err(Error::Config(format!(
                "unknown decode mode '{other}' (expected independent or constrained)"
            ))),
        }
    }
}

/// Two independent linear scorers over the attended states.
#[derive(Clone, Debug)]
pub struct SpanHead {
    pub input_width: usize,
    pub start_w: ParamId,
    pub start_b: ParamId,
    pub end_w: ParamId,
    pub end_b: ParamId,
}

impl SpanHead {
    pub fn new<T: Real>(store: &mut ParamStore<T>, input_width: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            input_width,
            start_w: store.add("head.start_w", ParamGroup::Head, xavier_uniform(input_width, 1, rng).with_grad())?,
            start_b: store.add("head.start_b", ParamGroup::Head, Tensor::zeros(&[1, 1]).with_grad())?,
            end_w: store.add("head.end_w", ParamGroup::Head, xavier_uniform(input_width, 1, rng).with_grad())?,
            end_b: store.add("head.end_b", ParamGroup::Head, Tensor::zeros(&[1, 1]).with_grad())?,
        })
    }

    /// `states [N × d]` to `(p_start, p_end)`, each `1 × N` and a
    /// distribution over the unmasked positions.
    pub fn span_logits<T: Real>(&self, g: &mut Graph<T>, bound: &[Var], states: Var, mask: &[bool]) -> Result<(Var, Var)> {
        let (_, d) = g.shape(states);
        if d != self.input_width {
            return Err(Error::dims("span_logits", &[d], &[self.input_width]));
        }
        let start = self.project(g, bound, states, mask, self.start_w, self.start_b)?;
        let end = self.project(g, bound, states, mask, self.end_w, self.end_b)?;
        Ok((start, end))
    }

    fn project<T: Real>(&self, g: &mut Graph<T>, bound: &[Var], states: Var, mask: &[bool], w: ParamId, b: ParamId) -> Result<Var> {
        let scores = g.matmul(states, w.var(bound))?;
        let scores = g.add_row(scores, b.var(bound))?;
        let row = g.transpose(scores);
        g.masked_row_softmax(row, mask)
    }
}

/// `-ln p_start[s] - ln p_end[e]` for one example.
pub fn span_loss<T: Real>(g: &mut Graph<T>, p_start: Var, p_end: Var, answer_start: usize, answer_end: usize) -> Result<Var> {
    let a = g.cross_entropy(p_start, answer_start)?;
    let b = g.cross_entropy(p_end, answer_end)?;
    g.add(a, b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    /// `p_start[start] · p_end[end]`, or 0 when no span was emitted.
    pub score: f64,
    /// Context tokens `start..=end` joined by single spaces; empty for no answer.
    pub text: String,
}

impl SpanPrediction {
    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }
}

fn argmax<T: Real>(p: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Best `(start, end, score)` with `start ≤ end ≤ start + max_len − 1`,
/// ties resolved towards the smallest start, then the smallest end.
pub fn best_constrained_span<T: Real>(p_start: &[T], p_end: &[T], max_len: usize) -> (usize, usize, f64) {
    let n = p_start.len().min(p_end.len());
    let width = max_len.max(1);
    let mut best = (0, 0, f64::NEG_INFINITY);
    for (s, ps) in p_start[..n].iter().enumerate() {
        let ps = ps.as_f64();
        for (e, pe) in p_end.iter().enumerate().take(n.min(s + width)).skip(s) {
            let score = ps * pe.as_f64();
            if score > best.2 {
                best = (s, e, score);
            }
        }
    }
    best
}

/// Decodes a span and its text from the context tokens.
pub fn decode<T: Real, S: AsRef<str>>(p_start: &[T], p_end: &[T], mode: DecodeMode, max_len: usize, tokens: &[S]) -> SpanPrediction {
    let (start, end, score) = match mode {
        DecodeMode::Independent => {
            let (s, e) = (argmax(p_start), argmax(p_end));
            if e < s {
                return SpanPrediction {
                    start: s,
                    end: e,
                    score: 0.0,
                    text: String::new(),
                };
            }
            (s, e, p_start[s].as_f64() * p_end[e].as_f64())
        }
        DecodeMode::Constrained => best_constrained_span(p_start, p_end, max_len),
    };
    let text = tokens
        .get(start..=end.min(tokens.len().saturating_sub(1)))
        .unwrap_or_default()
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(" ");
    SpanPrediction { start, end, score, text }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use proptest::prelude::*;

    fn head(d: usize, seed: u64) -> (ParamStore<f64>, SpanHead) {
        let mut store = ParamStore::new();
        let h = SpanHead::new(&mut store, d, &mut SeededRng::new(seed)).unwrap();
        (store, h)
    }

    fn tokens(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    #[test]
    fn zero_head_is_uniform_over_unmasked() {
        let (mut store, h) = head(3, 1);
        for t in store.tensors_mut() {
            t.values_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let states = g.constant(4, 3, (0..12).map(f64::from).collect()).unwrap();
        let (ps, pe) = h.span_logits(&mut g, &bound, states, &[true, true, true, false]).unwrap();
        for p in [ps, pe] {
            assert_eq!(g.shape(p), (1, 4));
            for (a, b) in g.value(p).iter().zip([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn distributions_sum_to_one_and_head_grad_checks() {
        let (mut store, h) = head(4, 2);
        let mut rng = SeededRng::new(3);
        let states: Vec<f64> = (0..20).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let mask = [true, true, false, true, true];
        {
            let mut g = Graph::new();
            let bound = store.bind(&mut g);
            let s = g.constant(5, 4, states.clone()).unwrap();
            let (ps, pe) = h.span_logits(&mut g, &bound, s, &mask).unwrap();
            for p in [ps, pe] {
                assert!((g.value(p).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        let report = grad_check(store.tensors_mut(), 1e-5, |g, bound| {
            let s = g.constant(5, 4, states.clone())?;
            let (ps, pe) = h.span_logits(g, bound, s, &mask)?;
            span_loss(g, ps, pe, 1, 3)
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn loss_examples() {
        let mut g = Graph::<f64>::new();
        let sharp = g.constant(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        let loss = span_loss(&mut g, sharp, sharp, 1, 1).unwrap();
        assert!(g.scalar(loss).abs() < 1e-11);
        let logits = g.constant(1, 10, vec![0.0; 10]).unwrap();
        let uniform = g.masked_row_softmax(logits, &[true; 10]).unwrap();
        let loss = span_loss(&mut g, uniform, uniform, 0, 9).unwrap();
        assert!((g.scalar(loss) - 2.0 * 10f64.ln()).abs() < 1e-9);
        assert!(matches!(span_loss(&mut g, uniform, uniform, 0, 10), Err(Error::Index { .. })));
    }

    #[test]
    fn independent_end_before_start_is_empty() {
        let mut ps = vec![0.01; 6];
        ps[3] = 0.95;
        let mut pe = vec![0.01; 6];
        pe[1] = 0.95;
        let pred = decode(&ps, &pe, DecodeMode::Independent, 15, &tokens(6));
        assert!(pred.is_empty());
        assert_eq!(pred.score, 0.0);
        let pred = decode(&ps, &pe, DecodeMode::Constrained, 15, &tokens(6));
        assert!(!pred.is_empty());
        assert!(pred.start <= pred.end);
    }

    #[test]
    fn agreeing_one_hots_decode_identically() {
        let ps = [0.0, 0.0, 1.0, 0.0, 0.0];
        let pe = [0.0, 0.0, 0.0, 0.0, 1.0];
        for mode in [DecodeMode::Independent, DecodeMode::Constrained] {
            let pred = decode(&ps, &pe, mode, 15, &tokens(5));
            assert_eq!((pred.start, pred.end, pred.score), (2, 4, 1.0));
            assert_eq!(pred.text, "t2 t3 t4");
        }
    }

    #[test]
    fn constrained_ties_prefer_earliest() {
        let p = [0.25; 4];
        assert_eq!(best_constrained_span(&p, &p, 3), (0, 0, 0.0625));
    }

    fn brute_force(ps: &[f64], pe: &[f64], max_len: usize) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for s in 0..ps.len() {
            for e in 0..pe.len() {
                if s <= e && e - s < max_len && ps[s] * pe[e] > best.2 {
                    best = (s, e, ps[s] * pe[e]);
                }
            }
        }
        best
    }

    fn normalised(v: Vec<f64>) -> Vec<f64> {
        let z: f64 = v.iter().sum();
        v.into_iter().map(|x| x / z).collect()
    }

    #[test]
    fn constrained_matches_brute_force_n12() {
        let mut rng = SeededRng::new(4);
        for _ in 0..200 {
            let ps = normalised((0..12).map(|_| rng.uniform()).collect());
            let pe = normalised((0..12).map(|_| rng.uniform()).collect());
            assert_eq!(best_constrained_span(&ps, &pe, 5), brute_force(&ps, &pe, 5));
        }
    }

    proptest! {
        #[test]
        fn constrained_dominates_every_valid_pair(
            raw in (1usize..=20).prop_flat_map(|n| (prop::collection::vec(0.001f64..1.0, n), prop::collection::vec(0.001f64..1.0, n), 1usize..=20)),
        ) {
            let (ps, pe, max_len) = raw;
            let (ps, pe) = (normalised(ps), normalised(pe));
            let (s, e, score) = best_constrained_span(&ps, &pe, max_len);
            prop_assert!(s <= e && e - s < max_len);
            for a in 0..ps.len() {
                for b in a..pe.len().min(a + max_len) {
                    prop_assert!(score >= ps[a] * pe[b]);
                }
            }
        }

        #[test]
        fn independent_agrees_with_full_width_constrained(
            raw in (2usize..=15).prop_flat_map(|n| (prop::collection::vec(0.001f64..1.0, n), prop::collection::vec(0.001f64..1.0, n))),
        ) {
            let (ps, pe) = (normalised(raw.0), normalised(raw.1));
            let n = ps.len();
            let toks = tokens(n);
            let ind = decode(&ps, &pe, DecodeMode::Independent, n, &toks);
            if !ind.is_empty() {
                let con = decode(&ps, &pe, DecodeMode::Constrained, n, &toks);
                prop_assert_eq!(ind, con);
            }
        }
    }

    #[test]
    fn decode_mode_parse() {
        assert_eq!("constrained".parse::<DecodeMode>().unwrap(), DecodeMode::Constrained);
        assert_eq!(DecodeMode::default().to_string(), "independent");
        assert!("greedy".parse::<DecodeMode>().is_err());
    }
}
