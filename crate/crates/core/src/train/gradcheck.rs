use crate::attention::Mechanism;
use crate::data::chars::{pad_word, word_char_ids};
use crate::data::{ItemView, SequenceView, Vocab, PAD_ID};
use crate::encoder::DropoutSites;
use crate::error::Result;
use crate::model::{ModelConfig, QaModel};
use crate::params::{ParamGroup, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::{grad_check_selected, GradCheckReport};

/// A group whose error reaches this is a failure.
pub const GRADCHECK_FAIL: f64 = 1e-3;

/// Tiny full-model configuration for finite-difference checks.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSetup {
    pub mechanism: Mechanism,
    pub seed: u64,
    pub eps: f64,
    /// Should be 0; anything else makes the forward pass random and the
    /// check fails with a non-determinism contract error.
    pub dropout: f64,
    pub trainable_similarity: bool,
    pub h: usize,
    pub d_word: usize,
}

impl GradcheckSetup {
    pub fn new(mechanism: Mechanism) -> Self {
        Self {
            mechanism,
            seed: 0,
            eps: 1e-5,
            dropout: 0.0,
            trainable_similarity: false,
            h: 2,
            d_word: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub group: ParamGroup,
    pub report: GradCheckReport,
}

const CONTEXT: [&str; 4] = ["alpha", "beta", "gamma", ""];
const QUESTION: [&str; 3] = ["delta", "alpha", "eps"];

/// Builds the full model at N = 4 (one padded position), M = 3 with random
/// parameters and checks every parameter group against central differences.
/// Returns one report per group; the model's gradient buffers are left
/// holding the autodiff gradients of the last group checked.
pub fn gradcheck_model(setup: &GradcheckSetup) -> Result<(Vec<GroupReport>, QaModel<f64>)> {
    let mut rng = SeededRng::with_stream(setup.seed, 0x9c);
    let words: Vec<&str> = CONTEXT.iter().chain(&QUESTION).copied().filter(|w| !w.is_empty()).collect();
    let vocab = Vocab::random(&words, setup.d_word, &mut rng)?;
    let config = ModelConfig {
        mechanism: setup.mechanism,
        hidden: setup.h,
        d_char: 3,
        kernel: 3,
        num_filters: 3,
        char_cnn: true,
        train_embeddings: true,
        dropout: setup.dropout,
        dropout_sites: DropoutSites::EmbeddingsAndOutputs,
        trainable_similarity: setup.trainable_similarity,
    };
    let mut model = QaModel::new(config, vocab, &mut rng)?;
    for t in model.params.tensors_mut() {
        let cols = t.cols();
        let frozen = t.frozen_rows().to_vec();
        for (k, v) in t.values_mut().iter_mut().enumerate() {
            if !frozen.contains(&(k / cols)) {
                *v = rng.uniform_range(-0.8, 0.8);
            }
        }
    }

    let ids = |ws: &[&str]| -> Vec<usize> { ws.iter().map(|w| if w.is_empty() { PAD_ID } else { model.vocab.id(w) }).collect() };
    let chars = |ws: &[&str]| -> Vec<Vec<usize>> {
        ws.iter()
            .map(|w| if w.is_empty() { pad_word() } else { word_char_ids(w) })
            .collect()
    };
    let (c_ids, c_chars, c_mask) = (ids(&CONTEXT), chars(&CONTEXT), vec![true, true, true, false]);
    let (q_ids, q_chars, q_mask) = (ids(&QUESTION), chars(&QUESTION), vec![true; 3]);
    let item = ItemView {
        context: SequenceView {
            token_ids: &c_ids,
            char_ids: &c_chars,
            mask: &c_mask,
        },
        question: SequenceView {
            token_ids: &q_ids,
            char_ids: &q_chars,
            mask: &q_mask,
        },
        answer_start: 1,
        answer_end: 2,
    };

    let training = setup.dropout > 0.0;
    let mut params = std::mem::replace(&mut model.params, ParamStore::new());
    let mut reports = Vec::with_capacity(ParamGroup::ALL.len());
    let mut dropout_rng = SeededRng::with_stream(setup.seed, 0x9d);
    let result = (|| {
        for group in ParamGroup::ALL {
            let selected = params.group_indices(group);
            let report = grad_check_selected(params.tensors_mut(), &selected, setup.eps, |g, bound| {
                model.loss(g, bound, &item, training, &mut dropout_rng).map(|(loss, _)| loss)
            })?;
            reports.push(GroupReport { group, report });
        }
        Ok(())
    })();
    model.params = params;
    result.map(|()| (reports, model))
}
