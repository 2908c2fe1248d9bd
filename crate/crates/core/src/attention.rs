//! Attention layers mapping encoded context/question states to per-context
//! attended states: BiDAF, co-attention, their hybrid and double cross
//! attention (DCA), plus an encoder-only ablation that passes the context
//! states through untouched.

use std::fmt;
use std::str::FromStr;

use crate::encoder::EncodedPair;
use crate::error::{Error, Result};
use crate::params::{xavier_uniform, ParamGroup, ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::rnn::BiLstm;
use crate::scalar::Real;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mechanism {
    Bidaf,
    Coattention,
    Hybrid,
    Dca,
    EncoderOnly,
}

impl Mechanism {
    /// The four attention mechanisms (the ablation excluded).
    pub const ATTENTION: [Mechanism; 4] = [Self::Bidaf, Self::Coattention, Self::Hybrid, Self::Dca];

    pub fn name(self) -> &'static str {
        match self {
            Self::Bidaf => "bidaf",
            Self::Coattention => "coattention",
            Self::Hybrid => "hybrid",
            Self::Dca => "dca",
            Self::EncoderOnly => "encoder-only",
        }
    }

    /// Whether a biLSTM runs over the attended features.
    pub fn uses_output_bilstm(self) -> bool {
        matches!(self, Self::Coattention | Self::Dca | Self::Hybrid)
    }

    /// Width of the attended states for encoder hidden size `h`.
    pub fn output_width(self, h: usize) -> usize {
        match self {
            Self::Bidaf => 8 * h,
            Self::Hybrid => 10 * h,
            Self::Coattention | Self::Dca | Self::EncoderOnly => 2 * h,
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bidaf" => Ok(Self::Bidaf),
            "coattention" => Ok(Self::Coattention),
            "hybrid" => Ok(Self::Hybrid),
            "dca" => Ok(Self::Dca),
            "encoder-only" => Ok(Self::EncoderOnly),
            _ => Err(Error::Config(format!(
                "unknown attention mechanism '{s}' (expected one of: bidaf, coattention, hybrid, dca)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionConfig {
    pub mechanism: Mechanism,
    /// Encoder hidden size per direction; states are `2h` wide.
    pub hidden: usize,
    /// Use `S = C W Qᵀ` (and `R = A W Bᵀ` for DCA) with a learned `W`.
    pub trainable_similarity: bool,
}

impl AttentionConfig {
    pub fn new(mechanism: Mechanism, hidden: usize) -> Self {
        Self {
            mechanism,
            hidden,
            trainable_similarity: false,
        }
    }

    pub fn output_width(&self) -> usize {
        self.mechanism.output_width(self.hidden)
    }
}

/// Attended states plus the attention distributions behind them.
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub mechanism: Mechanism,
    /// `[N × d_out]`, zero at masked context rows.
    pub states: Var,
    /// `[N × M]` similarity scores.
    pub s: Var,
    /// `[N × M]`, row `i` a distribution over unmasked question positions.
    pub alpha: Var,
    /// `[N × M]`, column `j` a distribution over unmasked context positions.
    pub beta: Var,
    /// `[N × M]` second-level distribution, DCA only.
    pub gamma: Option<Var>,
}

/// `S_ij = c_iᵀ q_j`, or `c_iᵀ W q_j` when `w` is given.
pub fn similarity<T: Real>(g: &mut Graph<T>, c: Var, q: Var, w: Option<Var>) -> Result<Var> {
    let (_, dc) = g.shape(c);
    let (_, dq) = g.shape(q);
    if dc != dq {
        return Err(Error::dims("similarity", &[dc], &[dq]));
    }
    let left = match w {
        Some(w) => g.matmul(c, w)?,
        None => c,
    };
    let qt = g.transpose(q);
    g.matmul(left, qt)
}

/// Context-to-question attention: `alpha = softmax_j(S)`, `a_i = Σ_j alpha_ij q_j`.
/// Returns `(a, alpha)`; rows at masked context positions are zero.
pub fn c2q<T: Real>(g: &mut Graph<T>, s: Var, q: Var, cmask: &[bool], qmask: &[bool]) -> Result<(Var, Var)> {
    let alpha = g.masked_row_softmax(s, qmask)?;
    let alpha = g.mask_rows(alpha, cmask)?;
    let a = g.matmul(alpha, q)?;
    Ok((a, alpha))
}

/// Question-to-context attention: `beta_{:,j} = softmax_i(S_{:,j})`,
/// `b_j = Σ_i beta_ij c_i`. Returns `(b [M × 2h], beta [N × M])`.
pub fn q2c<T: Real>(g: &mut Graph<T>, s: Var, c: Var, cmask: &[bool], qmask: &[bool]) -> Result<(Var, Var)> {
    let st = g.transpose(s);
    let beta_t = g.masked_row_softmax(st, cmask)?;
    let beta_t = g.mask_rows(beta_t, qmask)?;
    let b = g.matmul(beta_t, c)?;
    let beta = g.transpose(beta_t);
    Ok((b, beta))
}

/// Optional shared bilinear similarity weight, `2h × 2h`, identity-initialised.
fn similarity_weight<T: Real>(store: &mut ParamStore<T>, prefix: &str, config: &AttentionConfig) -> Result<Option<ParamId>> {
    if !config.trainable_similarity {
        return Ok(None);
    }
    let d = 2 * config.hidden;
    let mut w = Tensor::zeros(&[d, d]);
    for i in 0..d {
        w.values_mut()[i * d + i] = T::one();
    }
    Ok(Some(store.add(
        format!("{prefix}.similarity"),
        ParamGroup::Attention,
        w.with_grad(),
    )?))
}

fn bound_opt(id: Option<ParamId>, bound: &[Var]) -> Option<Var> {
    id.map(|p| p.var(bound))
}

#[derive(Clone, Debug)]
pub struct DcaParams {
    pub similarity: Option<ParamId>,
    /// Input `6h`, hidden `h` per direction.
    pub lstm: BiLstm,
}

impl DcaParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, config: &AttentionConfig, rng: &mut SeededRng) -> Result<Self> {
        let h = config.hidden;
        Ok(Self {
            similarity: similarity_weight(store, "dca", config)?,
            lstm: BiLstm::new(store, "dca.lstm", ParamGroup::Attention, 6 * h, h, rng)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct CoattentionParams {
    pub similarity: Option<ParamId>,
    /// Question projection `[2h × 2h]` and bias `[1 × 2h]`.
    pub w_q: ParamId,
    pub b_q: ParamId,
    pub lstm: BiLstm,
}

impl CoattentionParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, config: &AttentionConfig, rng: &mut SeededRng) -> Result<Self> {
        let h = config.hidden;
        Ok(Self {
            similarity: similarity_weight(store, "coattention", config)?,
            w_q: store.add(
                "coattention.w_q",
                ParamGroup::Attention,
                xavier_uniform(2 * h, 2 * h, rng).with_grad(),
            )?,
            b_q: store.add("coattention.b_q", ParamGroup::Attention, Tensor::zeros(&[1, 2 * h]).with_grad())?,
            lstm: BiLstm::new(store, "coattention.lstm", ParamGroup::Attention, 6 * h, h, rng)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BidafParams {
    pub similarity: Option<ParamId>,
}

impl BidafParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, config: &AttentionConfig) -> Result<Self> {
        Ok(Self {
            similarity: similarity_weight(store, "bidaf", config)?,
        })
    }
}

/// DCA: first-level C2Q/Q2C, second-level `R = A Bᵀ`, `gamma = softmax_j(R)`,
/// `d_i = Σ_j gamma_ij b_j`, then a biLSTM over `[c; a; d]`.
pub fn dca<T: Real>(g: &mut Graph<T>, bound: &[Var], enc: &EncodedPair, params: &DcaParams) -> Result<AttentionOutput> {
    let (cm, qm) = (&enc.context_mask[..], &enc.question_mask[..]);
    let w = bound_opt(params.similarity, bound);
    let s = similarity(g, enc.context, enc.question, w)?;
    let (a, alpha) = c2q(g, s, enc.question, cm, qm)?;
    let (b, beta) = q2c(g, s, enc.context, cm, qm)?;
    let r = similarity(g, a, b, w)?;
    let gamma = g.masked_row_softmax(r, qm)?;
    let gamma = g.mask_rows(gamma, cm)?;
    let d = g.matmul(gamma, b)?;
    let features = g.concat_cols(&[enc.context, a, d])?;
    let states = params.lstm.run(g, bound, features, cm)?;
    Ok(AttentionOutput {
        mechanism: Mechanism::Dca,
        states,
        s,
        alpha,
        beta,
        gamma: Some(gamma),
    })
}

/// BiDAF: `[c; a; c⊙a; c⊙c̃]` where `c̃` is the context summary weighted by
/// `softmax_i(max_j S_ij)`. No recurrent layer follows.
pub fn bidaf<T: Real>(g: &mut Graph<T>, bound: &[Var], enc: &EncodedPair, params: &BidafParams) -> Result<AttentionOutput> {
    let (cm, qm) = (&enc.context_mask[..], &enc.question_mask[..]);
    let c = enc.context;
    let s = similarity(g, c, enc.question, bound_opt(params.similarity, bound))?;
    let (a, alpha) = c2q(g, s, enc.question, cm, qm)?;
    let (_, beta) = q2c(g, s, c, cm, qm)?;
    let m = g.masked_row_max(s, qm)?;
    let mt = g.transpose(m);
    let weights = g.masked_row_softmax(mt, cm)?;
    let summary = g.matmul(weights, c)?;
    let tiled = g.repeat_rows(summary, cm.len())?;
    let ca = g.mul(c, a)?;
    let cs = g.mul(c, tiled)?;
    let states = g.concat_cols(&[c, a, ca, cs])?;
    let states = g.mask_rows(states, cm)?;
    Ok(AttentionOutput {
        mechanism: Mechanism::Bidaf,
        states,
        s,
        alpha,
        beta,
        gamma: None,
    })
}

/// Co-attention without sentinels: projected question `q' = tanh(Q W_q + b_q)`,
/// C2Q/Q2C over `S = C q'ᵀ`, second level `s_i = Σ_j alpha_ij b_j`, then a
/// biLSTM over `[c; a; s]`.
pub fn coattention<T: Real>(g: &mut Graph<T>, bound: &[Var], enc: &EncodedPair, params: &CoattentionParams) -> Result<AttentionOutput> {
    let (cm, qm) = (&enc.context_mask[..], &enc.question_mask[..]);
    let qw = g.matmul(enc.question, params.w_q.var(bound))?;
    let qw = g.add_row(qw, params.b_q.var(bound))?;
    let qp = g.tanh(qw);
    let qp = g.mask_rows(qp, qm)?;
    let s = similarity(g, enc.context, qp, bound_opt(params.similarity, bound))?;
    let (a, alpha) = c2q(g, s, qp, cm, qm)?;
    let (b, beta) = q2c(g, s, enc.context, cm, qm)?;
    let second = g.matmul(alpha, b)?;
    let features = g.concat_cols(&[enc.context, a, second])?;
    let states = params.lstm.run(g, bound, features, cm)?;
    Ok(AttentionOutput {
        mechanism: Mechanism::Coattention,
        states,
        s,
        alpha,
        beta,
        gamma: None,
    })
}

/// `[bidaf states; co-attention states]`, each block with its own parameters.
/// The distributions reported are those of the BiDAF block.
pub fn hybrid<T: Real>(
    g: &mut Graph<T>,
    bound: &[Var],
    enc: &EncodedPair,
    bidaf_params: &BidafParams,
    coatt_params: &CoattentionParams,
) -> Result<AttentionOutput> {
    let left = bidaf(g, bound, enc, bidaf_params)?;
    let right = coattention(g, bound, enc, coatt_params)?;
    let states = g.concat_cols(&[left.states, right.states])?;
    Ok(AttentionOutput {
        mechanism: Mechanism::Hybrid,
        states,
        ..left
    })
}

/// Context states passed through; distributions are still computed for
/// inspection but do not feed the output.
pub fn encoder_only<T: Real>(g: &mut Graph<T>, enc: &EncodedPair) -> Result<AttentionOutput> {
    let (cm, qm) = (&enc.context_mask[..], &enc.question_mask[..]);
    let s = similarity(g, enc.context, enc.question, None)?;
    let (_, alpha) = c2q(g, s, enc.question, cm, qm)?;
    let (_, beta) = q2c(g, s, enc.context, cm, qm)?;
    Ok(AttentionOutput {
        mechanism: Mechanism::EncoderOnly,
        states: enc.context,
        s,
        alpha,
        beta,
        gamma: None,
    })
}

#[derive(Clone, Debug)]
pub enum AttentionParams {
    Bidaf(BidafParams),
    Coattention(CoattentionParams),
    Hybrid(BidafParams, CoattentionParams),
    Dca(DcaParams),
    EncoderOnly,
}

/// A configured attention layer owning its parameter handles.
#[derive(Clone, Debug)]
pub struct AttentionLayer {
    pub config: AttentionConfig,
    pub params: AttentionParams,
}

impl AttentionLayer {
    pub fn new<T: Real>(store: &mut ParamStore<T>, config: AttentionConfig, rng: &mut SeededRng) -> Result<Self> {
        if config.hidden == 0 {
            return Err(Error::Config("attention hidden size must be positive".into()));
        }
        let params = match config.mechanism {
            Mechanism::Bidaf => AttentionParams::Bidaf(BidafParams::new(store, &config)?),
            Mechanism::Coattention => AttentionParams::Coattention(CoattentionParams::new(store, &config, rng)?),
            Mechanism::Hybrid => AttentionParams::Hybrid(BidafParams::new(store, &config)?, CoattentionParams::new(store, &config, rng)?),
            Mechanism::Dca => AttentionParams::Dca(DcaParams::new(store, &config, rng)?),
            Mechanism::EncoderOnly => AttentionParams::EncoderOnly,
        };
        Ok(Self { config, params })
    }

    pub fn output_width(&self) -> usize {
        self.config.output_width()
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, bound: &[Var], enc: &EncodedPair) -> Result<AttentionOutput> {
        let (_, width) = g.shape(enc.context);
        if width != 2 * self.config.hidden {
            return Err(Error::dims("attention input", &[width], &[2 * self.config.hidden]));
        }
        match &self.params {
            AttentionParams::Bidaf(p) => bidaf(g, bound, enc, p),
            AttentionParams::Coattention(p) => coattention(g, bound, enc, p),
            AttentionParams::Hybrid(b, c) => hybrid(g, bound, enc, b, c),
            AttentionParams::Dca(p) => dca(g, bound, enc, p),
            AttentionParams::EncoderOnly => encoder_only(g, enc),
        }
    }
}
