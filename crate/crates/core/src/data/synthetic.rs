use super::example::Example;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Parameters of the key–value retrieval task.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub num_examples: usize,
    pub num_keys: usize,
    pub num_values: usize,
    pub pairs_per_context: usize,
    pub seed: u64,
}

/// The task vocabulary: `k0..k{K-1}` then `v0..v{V-1}`.
pub fn synthetic_tokens(num_keys: usize, num_values: usize) -> Vec<String> {
    (0..num_keys)
        .map(|k| format!("k{k}"))
        .chain((0..num_values).map(|v| format!("v{v}")))
        .collect()
}

/// Generates contexts `k_a v_x k_b v_y …` with distinct keys; the question is
/// one key from the context and the answer is the value token right after it.
/// A pure function of `spec`.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Vec<Example>> {
    if spec.pairs_per_context < 2 {
        return Err(Error::Config("pairs_per_context must be at least 2".into()));
    }
    if spec.num_keys < spec.pairs_per_context {
        return Err(Error::Config(format!(
            "num_keys ({}) must be at least pairs_per_context ({}) to draw distinct keys",
            spec.num_keys, spec.pairs_per_context
        )));
    }
    if spec.num_values == 0 {
        return Err(Error::Config("num_values must be positive".into()));
    }
    let mut rng = SeededRng::with_stream(spec.seed, 0x5_7e7);
    let mut keys: Vec<usize> = (0..spec.num_keys).collect();
    let mut out = Vec::with_capacity(spec.num_examples);
    for i in 0..spec.num_examples {
        // partial Fisher–Yates: the first pairs_per_context entries become distinct keys
        for j in 0..spec.pairs_per_context {
            let k = j + rng.below(spec.num_keys - j);
            keys.swap(j, k);
        }
        let mut context = Vec::with_capacity(2 * spec.pairs_per_context);
        for &k in &keys[..spec.pairs_per_context] {
            context.push(format!("k{k}"));
            context.push(format!("v{}", rng.below(spec.num_values)));
        }
        let asked = rng.below(spec.pairs_per_context);
        let question = vec![context[2 * asked].clone()];
        let answer = context[2 * asked + 1].clone();
        out.push(Example::new(
            format!("synth-{}-{i}", spec.seed),
            context,
            question,
            2 * asked + 1,
            2 * asked + 1,
            vec![answer],
        )?);
    }
    Ok(out)
}
