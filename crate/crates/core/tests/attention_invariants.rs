mod common;

use common::{max_abs_diff, perturb, random_states, Mat};
use crossattn::attention::{AttentionConfig, AttentionLayer, AttentionOutput, AttentionParams, Mechanism};
use crossattn::encoder::EncodedPair;
use crossattn::params::ParamStore;
use crossattn::{Graph, SeededRng, Tensor};
use proptest::prelude::*;

const SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Shape {
    h: usize,
    cmask: Vec<bool>,
    qmask: Vec<bool>,
    seed: u64,
}

fn mask(max_len: usize) -> impl Strategy<Value = Vec<bool>> {
    (1..=max_len)
        .prop_flat_map(|n| (prop::collection::vec(any::<bool>(), n), 0..n))
        .prop_map(|(mut m, keep)| {
            m[keep] = true;
            m
        })
}

fn shape() -> impl Strategy<Value = Shape> {
    (1usize..=3, mask(7), mask(5), any::<u64>()).prop_map(|(h, cmask, qmask, seed)| Shape { h, cmask, qmask, seed })
}

fn build(mech: Mechanism, h: usize, seed: u64) -> (ParamStore<f64>, AttentionLayer) {
    let mut store = ParamStore::new();
    let mut rng = SeededRng::with_stream(seed, 1);
    let layer = AttentionLayer::new(&mut store, AttentionConfig::new(mech, h), &mut rng).unwrap();
    perturb(&mut store, &mut rng, 0.3);
    (store, layer)
}

fn forward(store: &ParamStore<f64>, layer: &AttentionLayer, c: &Mat, q: &Mat, cmask: &[bool], qmask: &[bool]) -> (Graph, AttentionOutput) {
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let context = g.leaf(&Tensor::from_rows(c).unwrap());
    let question = g.leaf(&Tensor::from_rows(q).unwrap());
    let enc = EncodedPair {
        context,
        question,
        context_mask: cmask.to_vec(),
        question_mask: qmask.to_vec(),
    };
    let out = layer.forward(&mut g, &bound, &enc).unwrap();
    (g, out)
}

/// Rows of `x` (an `n × m` row-major matrix) whose index is in `rows` must
/// be distributions over the `true` entries of `keep` and zero elsewhere;
/// all other rows must be zero.
fn check_rows(x: &[f64], n: usize, m: usize, rows: &[bool], keep: &[bool], what: &str) -> Result<(), TestCaseError> {
    for i in 0..n {
        let row = &x[i * m..(i + 1) * m];
        if !rows[i] {
            prop_assert!(row.iter().all(|&v| v == 0.0), "{what} row {i} should be zero: {row:?}");
            continue;
        }
        let sum: f64 = row.iter().sum();
        prop_assert!((sum - 1.0).abs() <= SUM_TOL, "{what} row {i} sums to {sum}");
        for (j, &v) in row.iter().enumerate() {
            if keep[j] {
                prop_assert!((0.0..=1.0).contains(&v));
            } else {
                prop_assert_eq!(v, 0.0, "{} row {} masked entry {}", what, i, j);
            }
        }
    }
    Ok(())
}

fn transpose(x: &[f64], n: usize, m: usize) -> Vec<f64> {
    (0..m).flat_map(|j| (0..n).map(move |i| x[i * m + j])).collect()
}

fn check_distributions(mech: Mechanism, s: &Shape) -> Result<(), TestCaseError> {
    let (n, m) = (s.cmask.len(), s.qmask.len());
    let mut rng = SeededRng::new(s.seed);
    let c = random_states(&mut rng, &s.cmask, 2 * s.h, 2.0);
    let q = random_states(&mut rng, &s.qmask, 2 * s.h, 2.0);
    let (store, layer) = build(mech, s.h, s.seed);
    let (g, out) = forward(&store, &layer, &c, &q, &s.cmask, &s.qmask);
    check_rows(g.value(out.alpha), n, m, &s.cmask, &s.qmask, "alpha")?;
    check_rows(&transpose(g.value(out.beta), n, m), m, n, &s.qmask, &s.cmask, "beta column")?;
    prop_assert_eq!(out.gamma.is_some(), mech == Mechanism::Dca);
    if let Some(gamma) = out.gamma {
        check_rows(g.value(gamma), n, m, &s.cmask, &s.qmask, "gamma")?;
    }
    prop_assert_eq!(g.shape(out.states), (n, layer.output_width()));
    let states = g.value(out.states);
    prop_assert!(states.iter().all(|v| v.is_finite()));
    let width = layer.output_width();
    for i in (0..n).filter(|&i| !s.cmask[i]) {
        prop_assert!(states[i * width..(i + 1) * width].iter().all(|&v| v == 0.0));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn bidaf_distributions_are_valid(s in shape()) {
        check_distributions(Mechanism::Bidaf, &s)?;
    }

    #[test]
    fn coattention_distributions_are_valid(s in shape()) {
        check_distributions(Mechanism::Coattention, &s)?;
    }

    #[test]
    fn hybrid_distributions_are_valid(s in shape()) {
        check_distributions(Mechanism::Hybrid, &s)?;
    }

    #[test]
    fn dca_distributions_are_valid(s in shape()) {
        check_distributions(Mechanism::Dca, &s)?;
    }

    #[test]
    fn question_permutation_leaves_states_unchanged(s in shape(), perm_seed in any::<u64>()) {
        let mut rng = SeededRng::new(s.seed);
        let c = random_states(&mut rng, &s.cmask, 2 * s.h, 2.0);
        let q = random_states(&mut rng, &s.qmask, 2 * s.h, 2.0);
        let mut order: Vec<usize> = (0..q.len()).collect();
        SeededRng::new(perm_seed).shuffle(&mut order);
        let q_perm: Mat = order.iter().map(|&j| q[j].clone()).collect();
        let qmask_perm: Vec<bool> = order.iter().map(|&j| s.qmask[j]).collect();
        for mech in Mechanism::ATTENTION {
            let (store, layer) = build(mech, s.h, s.seed);
            let (g0, out0) = forward(&store, &layer, &c, &q, &s.cmask, &s.qmask);
            let (g1, out1) = forward(&store, &layer, &c, &q_perm, &s.cmask, &qmask_perm);
            let err = max_abs_diff(g0.value(out0.states), g1.value(out1.states));
            prop_assert!(err <= 1e-12, "{} moved by {:e}", mech, err);
            let m = q.len();
            let (a0, a1) = (g0.value(out0.alpha), g1.value(out1.alpha));
            for i in 0..c.len() {
                for (k, &j) in order.iter().enumerate() {
                    prop_assert!((a0[i * m + j] - a1[i * m + k]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn scaled_questions_keep_valid_alpha(s in shape(), scale in 0.05f64..20.0) {
        let mut rng = SeededRng::new(s.seed);
        let c = random_states(&mut rng, &s.cmask, 2 * s.h, 2.0);
        let q = random_states(&mut rng, &s.qmask, 2 * s.h, 2.0);
        let q_scaled: Mat = q.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
        let (n, m) = (c.len(), q.len());
        for mech in Mechanism::ATTENTION {
            let (store, layer) = build(mech, s.h, s.seed);
            let (g, out) = forward(&store, &layer, &c, &q_scaled, &s.cmask, &s.qmask);
            check_rows(g.value(out.alpha), n, m, &s.cmask, &s.qmask, "scaled alpha")?;
        }
        let (store, layer) = build(Mechanism::Bidaf, s.h, s.seed);
        let (g0, out0) = forward(&store, &layer, &c, &q, &s.cmask, &s.qmask);
        let (g1, out1) = forward(&store, &layer, &c, &q_scaled, &s.cmask, &s.qmask);
        let (s0, s1) = (g0.value(out0.s), g1.value(out1.s));
        for (x, y) in s0.iter().zip(s1) {
            prop_assert!((x * scale - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn dca_single_question_token_gives_one_d(h in 1usize..=3, cmask in mask(7), seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let c = random_states(&mut rng, &cmask, 2 * h, 2.0);
        let q = random_states(&mut rng, &[true], 2 * h, 2.0);
        let (store, layer) = build(Mechanism::Dca, h, seed);
        let (g, out) = forward(&store, &layer, &c, &q, &cmask, &[true]);
        let gamma = g.value(out.gamma.unwrap());
        for (i, &keep) in cmask.iter().enumerate() {
            prop_assert_eq!(gamma[i], if keep { 1.0 } else { 0.0 });
        }
        let AttentionParams::Dca(p) = &layer.params else { unreachable!() };
        let want = common::dca(&store, p, &c, &q, &cmask, &[true]);
        let first = cmask.iter().position(|&k| k).unwrap();
        for i in (0..c.len()).filter(|&i| cmask[i]) {
            prop_assert_eq!(&want.second[i], &want.second[first]);
        }
        prop_assert!(max_abs_diff(g.value(out.states), &common::flatten(&want.states)) <= 1e-12);
    }
}

#[test]
fn output_widths_follow_the_mechanism() {
    for h in [1, 2, 5] {
        for (mech, width) in [
            (Mechanism::Bidaf, 8 * h),
            (Mechanism::Hybrid, 10 * h),
            (Mechanism::Dca, 2 * h),
            (Mechanism::Coattention, 2 * h),
        ] {
            let (store, layer) = build(mech, h, 0);
            let cmask = vec![true, true, false];
            let mut rng = SeededRng::new(9);
            let c = random_states(&mut rng, &cmask, 2 * h, 1.0);
            let q = random_states(&mut rng, &[true, true], 2 * h, 1.0);
            let (g, out) = forward(&store, &layer, &c, &q, &cmask, &[true, true]);
            assert_eq!(g.shape(out.states), (3, width), "{mech} h={h}");
        }
    }
}
