use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Denominator floor of the relative error. Entries whose true gradient is
/// zero then pass only when both estimates agree to about `1e-10` absolute.
pub const REL_FLOOR: f64 = 1e-6;

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|g_ad − g_fd| / max(REL_FLOOR, |g_ad| + |g_fd|)` over checked entries.
    pub max_relative_error: f64,
    /// `(tensor index, flat entry)` where the maximum occurred.
    pub worst: Option<(usize, usize)>,
    pub entries_checked: usize,
}

/// Compares autodiff gradients with central differences for every trainable,
/// non-frozen entry of `params`.
///
/// `f` builds the loss on a fresh graph from leaves bound to `params` (one
/// [`Var`] per tensor, in order). It must be deterministic: the loss is
/// evaluated twice at the unperturbed point and any difference is reported as
/// a contract error. On return each tensor's `grad` holds the autodiff gradient.
pub fn grad_check<T, F>(params: &mut [Tensor<T>], eps: T, f: F) -> Result<GradCheckReport>
where
    T: Real,
    F: FnMut(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let all: Vec<usize> = (0..params.len()).collect();
    grad_check_selected(params, &all, eps, f)
}

/// [`grad_check`] restricted to the tensors at `selected`.
pub fn grad_check_selected<T, F>(params: &mut [Tensor<T>], selected: &[usize], eps: T, mut f: F) -> Result<GradCheckReport>
where
    T: Real,
    F: FnMut(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    fn eval<T: Real, F>(params: &[Tensor<T>], f: &mut F) -> Result<(Graph<T>, Var, Vec<Var>)>
    where
        F: FnMut(&mut Graph<T>, &[Var]) -> Result<Var>,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.leaf(p)).collect();
        let loss = f(&mut g, &vars)?;
        if g.shape(loss) != (1, 1) {
            return Err(Error::Contract("grad_check loss must be scalar".into()));
        }
        Ok((g, loss, vars))
    }

    let (g, loss, vars) = eval(params, &mut f)?;
    let base = g.scalar(loss);
    let grads = g.backward(loss)?;
    for (p, v) in params.iter_mut().zip(&vars) {
        p.zero_grad();
        if let Some(d) = grads.get(*v) {
            p.accumulate_grad(d)?;
        }
    }
    drop(g);

    let (g2, loss2, _) = eval(params, &mut f)?;
    let again = g2.scalar(loss2);
    if base.as_f64().to_bits() != again.as_f64().to_bits() {
        return Err(Error::Contract(format!("non-deterministic forward pass: loss {base} then {again}")));
    }
    drop(g2);

    let two_eps = eps + eps;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for &ti in selected {
        if !params[ti].requires_grad() {
            continue;
        }
        let cols = params[ti].cols();
        for e in 0..params[ti].len() {
            if params[ti].is_frozen_row(e / cols) {
                continue;
            }
            let original = params[ti].values()[e];
            params[ti].values_mut()[e] = original + eps;
            let plus = {
                let (g, l, _) = eval(params, &mut f)?;
                g.scalar(l)
            };
            params[ti].values_mut()[e] = original - eps;
            let minus = {
                let (g, l, _) = eval(params, &mut f)?;
                g.scalar(l)
            };
            params[ti].values_mut()[e] = original;

            let fd = ((plus - minus) / two_eps).as_f64();
            let ad = params[ti].grad().map_or(0.0, |g| g[e].as_f64());
            let rel = (ad - fd).abs() / f64::max(REL_FLOOR, ad.abs() + fd.abs());
            report.entries_checked += 1;
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = rel;
                report.worst = Some((ti, e));
            }
        }
    }
    Ok(report)
}
