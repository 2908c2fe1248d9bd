//! The full reader: encoder, attention layer and span head over one
//! parameter store.

use crate::attention::{AttentionConfig, AttentionLayer, AttentionOutput, Mechanism};
use crate::data::{batch, Example, ItemView, Vocab};
use crate::encoder::{DropoutSites, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::SeededRng;
use crate::scalar::Real;
use crate::span::{decode, span_loss, DecodeMode, SpanHead, SpanPrediction};
use crate::tensor::{Graph, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub mechanism: Mechanism,
    pub hidden: usize,
    pub d_char: usize,
    pub kernel: usize,
    pub num_filters: usize,
    pub char_cnn: bool,
    pub train_embeddings: bool,
    pub dropout: f64,
    pub dropout_sites: DropoutSites,
    pub trainable_similarity: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        Self {
            mechanism: Mechanism::Dca,
            hidden: enc.hidden,
            d_char: enc.d_char,
            kernel: enc.kernel,
            num_filters: enc.num_filters,
            char_cnn: enc.char_cnn,
            train_embeddings: enc.train_embeddings,
            dropout: enc.dropout,
            dropout_sites: enc.dropout_sites,
            trainable_similarity: false,
        }
    }
}

impl ModelConfig {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            d_char: self.d_char,
            kernel: self.kernel,
            num_filters: self.num_filters,
            hidden: self.hidden,
            char_cnn: self.char_cnn,
            train_embeddings: self.train_embeddings,
            dropout: self.dropout,
            dropout_sites: self.dropout_sites,
        }
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            mechanism: self.mechanism,
            hidden: self.hidden,
            trainable_similarity: self.trainable_similarity,
        }
    }
}

/// Everything one forward pass produces for a single example.
#[derive(Clone, Debug)]
pub struct Forward {
    pub attention: AttentionOutput,
    /// `1 × N` start and end distributions.
    pub p_start: Var,
    pub p_end: Var,
}

/// Dev-set predictions together with the mean span loss.
#[derive(Clone, Debug)]
pub struct Predictions {
    pub spans: Vec<(String, SpanPrediction)>,
    pub mean_loss: f64,
}

#[derive(Clone, Debug)]
pub struct QaModel<T> {
    pub config: ModelConfig,
    /// Token lookup; the live word-embedding table is the parameter
    /// `embeddings.word` in `params`.
    pub vocab: Vocab<T>,
    pub params: ParamStore<T>,
    pub encoder: Encoder,
    pub attention: AttentionLayer,
    pub head: SpanHead,
}

impl<T: Real> QaModel<T> {
    pub fn new(config: ModelConfig, vocab: Vocab<T>, rng: &mut SeededRng) -> Result<Self> {
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, config.encoder(), vocab.embeddings().clone(), rng)?;
        let attention = AttentionLayer::new(&mut params, config.attention(), rng)?;
        let head = SpanHead::new(&mut params, attention.output_width(), rng)?;
        Ok(Self {
            config,
            vocab,
            params,
            encoder,
            attention,
            head,
        })
    }

    pub fn d_word(&self) -> usize {
        self.encoder.d_word
    }

    /// Runs encoder, attention and head for one padded example.
    pub fn forward(&self, g: &mut Graph<T>, bound: &[Var], item: &ItemView<'_>, training: bool, rng: &mut SeededRng) -> Result<Forward> {
        let enc = self.encoder.encode_pair(g, bound, &item.context, &item.question, training, rng)?;
        let attention = self.attention.forward(g, bound, &enc)?;
        let (p_start, p_end) = self.head.span_logits(g, bound, attention.states, item.context.mask)?;
        Ok(Forward { attention, p_start, p_end })
    }

    /// Forward pass plus the span loss against the example's gold span.
    pub fn loss(
        &self,
        g: &mut Graph<T>,
        bound: &[Var],
        item: &ItemView<'_>,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<(Var, Forward)> {
        let fwd = self.forward(g, bound, item, training, rng)?;
        let loss = span_loss(g, fwd.p_start, fwd.p_end, item.answer_start, item.answer_end)?;
        Ok((loss, fwd))
    }

    /// Inference over `examples`: decoded spans keyed by example id and the
    /// mean span loss.
    pub fn predict(&self, examples: &[Example], mode: DecodeMode, max_len: usize, batch_size: usize) -> Result<Predictions> {
        if examples.is_empty() {
            return Err(Error::Contract("predict on an empty example list".into()));
        }
        let mut spans = Vec::with_capacity(examples.len());
        let mut total = 0.0;
        let mut rng = SeededRng::new(0);
        for b in batch(examples, &self.vocab, batch_size, true) {
            for k in 0..b.len() {
                let item = b.item(k);
                let mut g = Graph::new();
                let bound = self.params.bind(&mut g);
                let (loss, fwd) = self.loss(&mut g, &bound, &item, false, &mut rng)?;
                let l = g.scalar(loss).as_f64();
                if !l.is_finite() {
                    return Err(non_finite(&g, "evaluation loss"));
                }
                total += l;
                let ex = &examples[b.indices[k]];
                let pred = decode(g.value(fwd.p_start), g.value(fwd.p_end), mode, max_len, &ex.context_tokens);
                spans.push((ex.id.clone(), pred));
            }
        }
        Ok(Predictions {
            spans,
            mean_loss: total / examples.len() as f64,
        })
    }
}

/// A diagnostic naming the first graph node holding a NaN or infinity.
pub(crate) fn non_finite<T: Real>(g: &Graph<T>, what: &str) -> Error {
    match g.first_non_finite() {
        Some((node, op)) => Error::NonFinite(format!("{what} is not finite; first non-finite tensor is node {node} ({op})")),
        None => Error::NonFinite(format!("{what} is not finite")),
    }
}
