//! Gated recurrent layers built from graph ops: GRU (encoder) and LSTM
//! (attention output layers), each with a bidirectional wrapper.
//!
//! Masked time steps are skipped: the state is carried forward unchanged and
//! the output row is zero. Both directions start from a zero state.

use crate::error::{Error, Result};
use crate::params::{xavier_uniform, ParamGroup, ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::scalar::Real;
use crate::tensor::{Graph, Tensor, Var};

/// GRU with the reset gate applied to the previous state before the candidate
/// matmul:
///
/// ```text
/// z = σ(x W_z + h U_z + b_z)
/// r = σ(x W_r + h U_r + b_r)
/// ñ = tanh(x W_n + (r ⊙ h) U_n + b_n)
/// h' = (1 − z) ⊙ h + z ⊙ ñ
/// ```
///
/// `W` is stored as one `d_in × 3h` matrix with column blocks `[z | r | n]`.
#[derive(Clone, Debug)]
pub struct Gru {
    pub input_size: usize,
    pub hidden: usize,
    pub w_input: ParamId,
    pub bias: ParamId,
    pub u_gates: ParamId,
    pub u_candidate: ParamId,
}

impl Gru {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        group: ParamGroup,
        input_size: usize,
        hidden: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Self {
            input_size,
            hidden,
            w_input: store.add(
                format!("{prefix}.w_input"),
                group,
                xavier_uniform(input_size, 3 * hidden, rng).with_grad(),
            )?,
            bias: store.add(format!("{prefix}.bias"), group, Tensor::zeros(&[1, 3 * hidden]).with_grad())?,
            u_gates: store.add(
                format!("{prefix}.u_gates"),
                group,
                xavier_uniform(hidden, 2 * hidden, rng).with_grad(),
            )?,
            u_candidate: store.add(
                format!("{prefix}.u_candidate"),
                group,
                xavier_uniform(hidden, hidden, rng).with_grad(),
            )?,
        })
    }

    /// `X W + b` for every time step at once: `[T × d_in] -> [T × 3h]`.
    pub fn project<T: Real>(&self, g: &mut Graph<T>, bound: &[Var], x: Var) -> Result<Var> {
        let xw = g.matmul(x, self.w_input.var(bound))?;
        g.add_row(xw, self.bias.var(bound))
    }

    /// One recurrence step from a projected input row `[1 × 3h]`.
    pub fn step<T: Real>(&self, g: &mut Graph<T>, bound: &[Var], x_proj: Var, h_prev: Var) -> Result<Var> {
        let h = self.hidden;
        let x_zr = g.slice_cols(x_proj, 0, 2 * h)?;
        let x_n = g.slice_cols(x_proj, 2 * h, h)?;
        let h_zr = g.matmul(h_prev, self.u_gates.var(bound))?;
        let pre = g.add(x_zr, h_zr)?;
        let zr = g.sigmoid(pre);
        let z = g.slice_cols(zr, 0, h)?;
        let r = g.slice_cols(zr, h, h)?;
        let rh = g.mul(r, h_prev)?;
        let rh_u = g.matmul(rh, self.u_candidate.var(bound))?;
        let n_pre = g.add(x_n, rh_u)?;
        let n = g.tanh(n_pre);
        let diff = g.sub(n, h_prev)?;
        let delta = g.mul(z, diff)?;
        g.add(h_prev, delta)
    }

    /// Runs over `x [T × d_in]`, returning `[T × h]`.
    pub fn run<T: Real>(&self, g: &mut Graph<T>, bound: &[Var], x: Var, mask: &[bool], reverse: bool) -> Result<Var> {
        check_input(g, x, self.input_size, mask)?;
        let proj = self.project(g, bound, x)?;
        let mut state = g.zeros(1, self.hidden);
        scan(g, mask, reverse, self.hidden, |g, t| {
            let row = g.slice_rows(proj, t, 1)?;
            state = self.step(g, bound, row, state)?;
            Ok(state)
        })
    }
}

/// Standard LSTM without peepholes; gate column blocks `[i | f | g | o]`.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub input_size: usize,
    pub hidden: usize,
    pub w_input: ParamId,
    pub bias: ParamId,
    pub u_hidden: ParamId,
}

impl Lstm {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        group: ParamGroup,
        input_size: usize,
        hidden: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Self {
            input_size,
            hidden,
            w_input: store.add(
                format!("{prefix}.w_input"),
                group,
                xavier_uniform(input_size, 4 * hidden, rng).with_grad(),
            )?,
            bias: store.add(format!("{prefix}.bias"), group, Tensor::zeros(&[1, 4 * hidden]).with_grad())?,
            u_hidden: store.add(
                format!("{prefix}.u_hidden"),
                group,
                xavier_uniform(hidden, 4 * hidden, rng).with_grad(),
            )?,
        })
    }

    /// One step from a projected input row; returns `(h, c)`.
    pub fn step<T: Real>(&self, g: &mut Graph<T>, bound: &[Var], x_proj: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
        let h = self.hidden;
        let hu = g.matmul(h_prev, self.u_hidden.var(bound))?;
        let pre = g.add(x_proj, hu)?;
        let if_pre = g.slice_cols(pre, 0, 2 * h)?;
        let gates = g.sigmoid(if_pre);
        let i = g.slice_cols(gates, 0, h)?;
        let f = g.slice_cols(gates, h, h)?;
        let cand_pre = g.slice_cols(pre, 2 * h, h)?;
        let cand = g.tanh(cand_pre);
        let o_pre = g.slice_cols(pre, 3 * h, h)?;
        let o = g.sigmoid(o_pre);
        let keep = g.mul(f, c_prev)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h_new = g.mul(o, tc)?;
        Ok((h_new, c))
    }

    pub fn run<T: Real>(&self, g: &mut Graph<T>, bound: &[Var], x: Var, mask: &[bool], reverse: bool) -> Result<Var> {
        check_input(g, x, self.input_size, mask)?;
        let xw = g.matmul(x, self.w_input.var(bound))?;
        let proj = g.add_row(xw, self.bias.var(bound))?;
        let mut h = g.zeros(1, self.hidden);
        let mut c = h;
        scan(g, mask, reverse, self.hidden, |g, t| {
            let row = g.slice_rows(proj, t, 1)?;
            (h, c) = self.step(g, bound, row, h, c)?;
            Ok(h)
        })
    }
}

/// Independent forward and backward GRUs, outputs concatenated `[fwd | bwd]`.
#[derive(Clone, Debug)]
pub struct BiGru {
    pub forward: Gru,
    pub backward: Gru,
}

impl BiGru {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        group: ParamGroup,
        input_size: usize,
        hidden: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Self {
            forward: Gru::new(store, &format!("{prefix}.fwd"), group, input_size, hidden, rng)?,
            backward: Gru::new(store, &format!("{prefix}.bwd"), group, input_size, hidden, rng)?,
        })
    }

    /// `[T × d_in] -> [T × 2h]`.
    pub fn run<T: Real>(&self, g: &mut Graph<T>, bound: &[Var], x: Var, mask: &[bool]) -> Result<Var> {
        let f = self.forward.run(g, bound, x, mask, false)?;
        let b = self.backward.run(g, bound, x, mask, true)?;
        g.concat_cols(&[f, b])
    }
}

#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        group: ParamGroup,
        input_size: usize,
        hidden: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Self {
            forward: Lstm::new(store, &format!("{prefix}.fwd"), group, input_size, hidden, rng)?,
            backward: Lstm::new(store, &format!("{prefix}.bwd"), group, input_size, hidden, rng)?,
        })
    }

    pub fn run<T: Real>(&self, g: &mut Graph<T>, bound: &[Var], x: Var, mask: &[bool]) -> Result<Var> {
        let f = self.forward.run(g, bound, x, mask, false)?;
        let b = self.backward.run(g, bound, x, mask, true)?;
        g.concat_cols(&[f, b])
    }
}

fn check_input<T: Real>(g: &Graph<T>, x: Var, input_size: usize, mask: &[bool]) -> Result<()> {
    let (t, d) = g.shape(x);
    if d != input_size || t != mask.len() {
        return Err(Error::dims("recurrent input", &[t, d], &[mask.len(), input_size]));
    }
    Ok(())
}

/// Visits unmasked steps in order (or reverse), stacking the produced rows and
/// zero rows for masked steps.
fn scan<T: Real>(
    g: &mut Graph<T>,
    mask: &[bool],
    reverse: bool,
    hidden: usize,
    mut step: impl FnMut(&mut Graph<T>, usize) -> Result<Var>,
) -> Result<Var> {
    let len = mask.len();
    let mut rows: Vec<Option<Var>> = vec![None; len];
    let order: Box<dyn Iterator<Item = usize>> = if reverse { Box::new((0..len).rev()) } else { Box::new(0..len) };
    for t in order {
        if mask[t] {
            rows[t] = Some(step(g, t)?);
        }
    }
    let zero = rows.iter().any(Option::is_none).then(|| g.zeros(1, hidden));
    let rows: Vec<Var> = rows.into_iter().map(|r| r.or(zero).expect("zero row exists")).collect();
    g.concat_rows(&rows)
}
