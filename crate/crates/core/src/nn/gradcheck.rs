use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Tensor, Var};
use crate::error::Result;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Comparison of one parameter tensor's tape gradient against central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub abs_err: f64,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` in L2 norm over the tensor.
    pub rel_err: f64,
}

impl GradCheck {
    /// Relative error within `tol`, or an absolute error at round-off level
    /// (for gradients that are zero up to finite-difference noise).
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_err <= tol || self.abs_err <= 1e-9
    }
}

fn loss_value<F>(store: &ParamStore, loss: &F) -> Result<f64>
where
    F: Fn(&Tape, &ParamStore) -> Result<Var>,
{
    let tape = Tape::new();
    let l = loss(&tape, store)?;
    Ok(tape.scalar(l))
}

/// Central differences of the loss with respect to every entry of `id`.
pub fn finite_difference<F>(store: &ParamStore, id: ParamId, loss: &F, step: f64) -> Result<Tensor>
where
    F: Fn(&Tape, &ParamStore) -> Result<Var>,
{
    let mut work = store.clone();
    let shape = store.value(id).dim();
    let mut out = Tensor::zeros(shape);
    for r in 0..shape.0 {
        for c in 0..shape.1 {
            let orig = store.value(id)[[r, c]];
            work.value_mut(id)[[r, c]] = orig + step;
            let plus = loss_value(&work, loss)?;
            work.value_mut(id)[[r, c]] = orig - step;
            let minus = loss_value(&work, loss)?;
            work.value_mut(id)[[r, c]] = orig;
            out[[r, c]] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(out)
}

/// Checks every parameter in `store`.
pub fn check_gradients<F>(store: &ParamStore, loss: F, step: f64) -> Result<Vec<GradCheck>>
where
    F: Fn(&Tape, &ParamStore) -> Result<Var>,
{
    let tape = Tape::new();
    let l = loss(&tape, store)?;
    let mut analytic = store.clone();
    analytic.zero_grads();
    tape.backward(l, &mut analytic)?;

    let mut out = Vec::with_capacity(store.len());
    for id in store.ids() {
        let numeric = finite_difference(store, id, &loss, step)?;
        let a = analytic.grad(id);
        let norm = |t: &Tensor| t.iter().map(|x| x * x).sum::<f64>().sqrt();
        let abs_err = norm(&(a - &numeric));
        let (an, nn) = (norm(a), norm(&numeric));
        let denom = an.max(nn);
        out.push(GradCheck {
            name: store.name(id).to_string(),
            analytic_norm: an,
            numeric_norm: nn,
            abs_err,
            rel_err: if denom > 0.0 { abs_err / denom } else { 0.0 },
        });
    }
    Ok(out)
}
