//! Word + character embedding and the shared bidirectional GRU encoder.

use std::fmt;
use std::str::FromStr;

use crate::data::chars::{CHAR_VOCAB_SIZE, MAX_WORD_LEN, PAD_CHAR};
use crate::data::SequenceView;
use crate::error::{Error, Result};
use crate::params::{uniform, ParamGroup, ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::rnn::BiGru;
use crate::scalar::Real;
use crate::tensor::{Graph, Tensor, Var};

/// Where encoder dropout is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DropoutSites {
    #[default]
    EmbeddingsAndOutputs,
    Embeddings,
    Outputs,
}

impl DropoutSites {
    fn embeddings(self) -> bool {
        matches!(self, Self::EmbeddingsAndOutputs | Self::Embeddings)
    }

    fn outputs(self) -> bool {
        matches!(self, Self::EmbeddingsAndOutputs | Self::Outputs)
    }
}

impl fmt::Display for DropoutSites {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::EmbeddingsAndOutputs => "embeddings+outputs",
            Self::Embeddings => "embeddings",
            Self::Outputs => "outputs",
        })
    }
}

impl FromStr for DropoutSites {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embeddings+outputs" | "outputs+embeddings" => Ok(Self::EmbeddingsAndOutputs),
            "embeddings" => Ok(Self::Embeddings),
            "outputs" => Ok(Self::Outputs),
            other => Err(Error::Config(format!(
                "unknown dropout_sites '{other}' (expected embeddings+outputs, embeddings or outputs)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub d_char: usize,
    pub kernel: usize,
    pub num_filters: usize,
    pub hidden: usize,
    pub char_cnn: bool,
    pub train_embeddings: bool,
    pub dropout: f64,
    pub dropout_sites: DropoutSites,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_char: 20,
            kernel: 5,
            num_filters: 100,
            hidden: 200,
            char_cnn: true,
            train_embeddings: false,
            dropout: 0.15,
            dropout_sites: DropoutSites::default(),
        }
    }
}

/// Character embeddings followed by a same-length 1-D convolution, ReLU and
/// max-over-time pooling.
#[derive(Clone, Debug)]
pub struct CharCnn {
    pub d_char: usize,
    pub kernel: usize,
    pub num_filters: usize,
    /// `[CHAR_VOCAB_SIZE × d_char]`, PAD row frozen at zero.
    pub table: ParamId,
    /// `[num_filters × kernel × d_char]`.
    pub filters: ParamId,
    pub bias: ParamId,
}

impl CharCnn {
    pub fn new<T: Real>(store: &mut ParamStore<T>, d_char: usize, kernel: usize, num_filters: usize, rng: &mut SeededRng) -> Result<Self> {
        if d_char == 0 || kernel == 0 || num_filters == 0 {
            return Err(Error::Config("char-CNN sizes must be positive".into()));
        }
        let mut table: Tensor<T> = uniform(&[CHAR_VOCAB_SIZE, d_char], (3.0 / d_char as f64).sqrt(), rng);
        table.values_mut()[PAD_CHAR * d_char..(PAD_CHAR + 1) * d_char].fill(T::zero());
        let table = table.with_grad().with_frozen_rows(vec![PAD_CHAR]);
        let fan_in = kernel * d_char;
        let a = (6.0 / (fan_in + num_filters) as f64).sqrt();
        let filters = uniform(&[num_filters, kernel, d_char], a, rng).with_grad();
        Ok(Self {
            d_char,
            kernel,
            num_filters,
            table: store.add("char_cnn.table", ParamGroup::CharCnn, table)?,
            filters: store.add("char_cnn.filters", ParamGroup::CharCnn, filters)?,
            bias: store.add("char_cnn.bias", ParamGroup::CharCnn, Tensor::zeros(&[1, num_filters]).with_grad())?,
        })
    }

    /// `[T words] -> [T × num_filters]`. Each word is at most
    /// [`MAX_WORD_LEN`] char ids; missing trailing positions act as PAD.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, bound: &[Var], words: &[Vec<usize>]) -> Result<Var> {
        if words.is_empty() {
            return Err(Error::Contract("char_cnn on an empty sequence".into()));
        }
        let k = self.kernel;
        let left = (k - 1) / 2;
        let mut idx = Vec::with_capacity(words.len() * MAX_WORD_LEN * k);
        for word in words {
            if word.len() > MAX_WORD_LEN {
                return Err(Error::Index {
                    what: "word length",
                    index: word.len(),
                    size: MAX_WORD_LEN,
                });
            }
            for p in 0..MAX_WORD_LEN {
                for j in 0..k {
                    let pos = (p + j).checked_sub(left).filter(|&q| q < MAX_WORD_LEN);
                    idx.push(pos.map(|q| word.get(q).copied().unwrap_or(PAD_CHAR)));
                }
            }
        }
        let chars = g.gather_rows(self.table.var(bound), &idx)?;
        let windows = g.reshape(chars, words.len() * MAX_WORD_LEN, k * self.d_char)?;
        let filters_t = g.transpose(self.filters.var(bound));
        let conv = g.matmul(windows, filters_t)?;
        let conv = g.add_row(conv, self.bias.var(bound))?;
        let act = g.relu(conv);
        g.segment_max_rows(act, MAX_WORD_LEN)
    }
}

/// Context and question states produced by one shared encoder.
#[derive(Clone, Debug)]
pub struct EncodedPair {
    /// `[N × 2h]`
    pub context: Var,
    /// `[M × 2h]`
    pub question: Var,
    pub context_mask: Vec<bool>,
    pub question_mask: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub d_word: usize,
    pub word_embeddings: ParamId,
    pub char_cnn: Option<CharCnn>,
    pub gru: BiGru,
}

impl Encoder {
    /// Registers the encoder parameters. `embeddings` is the `[V × d_word]`
    /// table from the vocabulary; its frozen rows are kept.
    pub fn new<T: Real>(store: &mut ParamStore<T>, config: EncoderConfig, embeddings: Tensor<T>, rng: &mut SeededRng) -> Result<Self> {
        if config.hidden == 0 {
            return Err(Error::Config("hidden size must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", config.dropout)));
        }
        if embeddings.shape().len() != 2 {
            return Err(Error::dims("word embeddings", embeddings.shape(), &[0, 0]));
        }
        let d_word = embeddings.cols();
        let embeddings = if config.train_embeddings {
            embeddings.with_grad()
        } else {
            embeddings
        };
        let word_embeddings = store.add("embeddings.word", ParamGroup::Embeddings, embeddings)?;
        let char_cnn = if config.char_cnn {
            Some(CharCnn::new(store, config.d_char, config.kernel, config.num_filters, rng)?)
        } else {
            None
        };
        let input = d_word + char_cnn.as_ref().map_or(0, |c| c.num_filters);
        let gru = BiGru::new(store, "encoder.gru", ParamGroup::Gru, input, config.hidden, rng)?;
        Ok(Self {
            config,
            d_word,
            word_embeddings,
            char_cnn,
            gru,
        })
    }

    pub fn input_width(&self) -> usize {
        self.gru.forward.input_size
    }

    pub fn output_width(&self) -> usize {
        2 * self.config.hidden
    }

    /// Word vectors concatenated with char-CNN features: `[T × (d_word + F)]`.
    pub fn embed<T: Real>(&self, g: &mut Graph<T>, bound: &[Var], seq: &SequenceView<'_>) -> Result<Var> {
        if seq.token_ids.len() != seq.mask.len() || seq.char_ids.len() != seq.mask.len() {
            return Err(Error::dims("embed", &[seq.token_ids.len(), seq.char_ids.len()], &[seq.mask.len()]));
        }
        let ids: Vec<Option<usize>> = seq.token_ids.iter().map(|&i| Some(i)).collect();
        let words = g.gather_rows(self.word_embeddings.var(bound), &ids)?;
        match &self.char_cnn {
            Some(cnn) => {
                let chars = cnn.forward(g, bound, seq.char_ids)?;
                g.concat_cols(&[words, chars])
            }
            None => Ok(words),
        }
    }

    /// `embed` then the BiGRU, with dropout at the configured sites.
    pub fn encode<T: Real>(
        &self,
        g: &mut Graph<T>,
        bound: &[Var],
        seq: &SequenceView<'_>,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        let sites = self.config.dropout_sites;
        let mut x = self.embed(g, bound, seq)?;
        if sites.embeddings() {
            x = g.dropout(x, self.config.dropout, training, rng)?;
        }
        let mut h = self.gru.run(g, bound, x, seq.mask)?;
        if sites.outputs() {
            h = g.dropout(h, self.config.dropout, training, rng)?;
        }
        Ok(h)
    }

    pub fn encode_pair<T: Real>(
        &self,
        g: &mut Graph<T>,
        bound: &[Var],
        context: &SequenceView<'_>,
        question: &SequenceView<'_>,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<EncodedPair> {
        for (what, seq) in [("context", context), ("question", question)] {
            if !seq.mask.iter().any(|&m| m) {
                return Err(Error::Contract(format!("{what} has no unmasked positions")));
            }
        }
        Ok(EncodedPair {
            context: self.encode(g, bound, context, training, rng)?,
            question: self.encode(g, bound, question, training, rng)?,
            context_mask: context.mask.to_vec(),
            question_mask: question.mask.to_vec(),
        })
    }
}
