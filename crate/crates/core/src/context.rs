//! Context encoder and Bayesian aggregation into the latent task posterior.
//!
//! Each context transition `(o, a, o')` is encoded independently into a
//! latent observation `r_n` with variance `s_n`. With a diagonal Gaussian
//! prior `N(mu0, diag(var0))` and observation model `r_n ~ N(l, diag(s_n))`,
//! the posterior over the task variable `l` is
//!
//! ```text
//! var_l = 1 / (1 / var0 + sum_n 1 / s_n)
//! mu_l  = mu0 + var_l * sum_n (r_n - mu0) / s_n
//! ```
//!
//! elementwise. The sums make the posterior invariant to the order of the
//! context set, and an empty set returns the prior.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::DiagGaussian;
use crate::nn::{GaussianHead, ParamStore, Tape, Tensor, Var};

/// One observed transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub next_obs: Vec<f64>,
}

/// The transitions preceding a target window.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSet {
    obs_dim: usize,
    action_dim: usize,
    tuples: Vec<Transition>,
}

impl ContextSet {
    pub fn new(obs_dim: usize, action_dim: usize, tuples: Vec<Transition>) -> Result<Self> {
        for (i, t) in tuples.iter().enumerate() {
            if t.obs.len() != obs_dim || t.next_obs.len() != obs_dim || t.action.len() != action_dim {
                return Err(Error::DimensionMismatch(format!(
                    "context tuple {i} has dims ({}, {}, {}), expected ({obs_dim}, {action_dim}, {obs_dim})",
                    t.obs.len(),
                    t.action.len(),
                    t.next_obs.len()
                )));
            }
        }
        Ok(Self { obs_dim, action_dim, tuples })
    }

    pub fn empty(obs_dim: usize, action_dim: usize) -> Self {
        Self { obs_dim, action_dim, tuples: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuples(&self) -> &[Transition] {
        &self.tuples
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        let mut probe = Self::new(self.obs_dim, self.action_dim, vec![t])?;
        self.tuples.append(&mut probe.tuples);
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Width of a flattened tuple `[o, a, o']`.
    pub fn feature_dim(&self) -> usize {
        2 * self.obs_dim + self.action_dim
    }

    /// One row per tuple, laid out as `[o, a, o']`.
    pub fn to_tensor(&self) -> Tensor {
        let d = self.feature_dim();
        let mut out = Array2::zeros((self.len(), d));
        for (mut row, t) in out.rows_mut().into_iter().zip(&self.tuples) {
            let vals = t.obs.iter().chain(&t.action).chain(&t.next_obs);
            for (dst, src) in row.iter_mut().zip(vals) {
                *dst = *src;
            }
        }
        out
    }
}

/// Prior `p0(l) = N(mu0, diag(var0))` over the latent task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskPrior {
    mu0: Vec<f64>,
    var0: Vec<f64>,
}

impl TaskPrior {
    pub fn new(mu0: Vec<f64>, var0: Vec<f64>) -> Result<Self> {
        let g = DiagGaussian::new(mu0, var0)?;
        Ok(Self { mu0: g.mean().to_vec(), var0: g.var().to_vec() })
    }

    /// Fixed standard normal prior.
    pub fn standard(dim: usize) -> Self {
        Self { mu0: vec![0.0; dim], var0: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mu0
    }

    pub fn var(&self) -> &[f64] {
        &self.var0
    }

    pub fn as_gaussian(&self) -> DiagGaussian {
        DiagGaussian::new(self.mu0.clone(), self.var0.clone()).expect("validated on construction")
    }

    fn rows(&self, values: &[f64], rows: usize) -> Tensor {
        Array2::from_shape_fn((rows, values.len()), |(_, c)| values[c])
    }
}

/// Shared per-tuple encoder: hidden ReLU layer, a mean head and an
/// elu + 1 variance head.
#[derive(Debug, Clone)]
pub struct ContextEncoder {
    pub net: GaussianHead,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub task_dim: usize,
}

impl ContextEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        obs_dim: usize,
        action_dim: usize,
        hidden: usize,
        task_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let net = GaussianHead::new(store, name, 2 * obs_dim + action_dim, hidden, task_dim, rng)?;
        Ok(Self { net, obs_dim, action_dim, task_dim })
    }

    /// Encodes flattened tuples (one per row) into `(r_n, s_n)`.
    pub fn forward(&self, tape: &Tape, store: &ParamStore, tuples: Var) -> Result<(Var, Var)> {
        let (_, cols) = tape.shape(tuples);
        if cols != 2 * self.obs_dim + self.action_dim {
            return Err(Error::DimensionMismatch(format!(
                "context rows have {cols} features, encoder expects {}",
                2 * self.obs_dim + self.action_dim
            )));
        }
        self.net.forward(tape, store, tuples)
    }

    /// Encodes each tuple of `cs` into a diagonal Gaussian, in input order.
    pub fn encode(&self, store: &ParamStore, cs: &ContextSet) -> Result<Vec<DiagGaussian>> {
        if cs.is_empty() {
            return Err(Error::InvalidValue("cannot encode an empty context set".into()));
        }
        let tape = Tape::new();
        let (r, s) = self.forward(&tape, store, tape.constant(cs.to_tensor()))?;
        let (r, s) = (tape.value(r), tape.value(s));
        r.rows()
            .into_iter()
            .zip(s.rows())
            .map(|(m, v)| DiagGaussian::new(m.to_vec(), v.to_vec()))
            .collect()
    }

    /// Posterior task belief for a single context set.
    pub fn task_posterior(&self, store: &ParamStore, prior: &TaskPrior, cs: &ContextSet) -> Result<DiagGaussian> {
        if prior.dim() != self.task_dim {
            return Err(Error::DimensionMismatch(format!(
                "prior has {} dims, encoder emits {}",
                prior.dim(),
                self.task_dim
            )));
        }
        if cs.is_empty() {
            return Ok(prior.as_gaussian());
        }
        let tape = Tape::new();
        let (mean, var) = self.task_posterior_vars(&tape, store, prior, tape.constant(cs.to_tensor()), 1, cs.len())?;
        let (m, v) = (tape.value(mean), tape.value(var));
        DiagGaussian::new(m.row(0).to_vec(), v.row(0).to_vec())
    }

    /// Batched posterior: `tuples` holds `batch` consecutive groups of
    /// `len` rows, one group per batch element.
    pub fn task_posterior_vars(
        &self,
        tape: &Tape,
        store: &ParamStore,
        prior: &TaskPrior,
        tuples: Var,
        batch: usize,
        len: usize,
    ) -> Result<(Var, Var)> {
        if len == 0 {
            return Ok(aggregate_vars(tape, prior, None, batch));
        }
        let (r, s) = self.forward(tape, store, tuples)?;
        Ok(aggregate_vars(tape, prior, Some((r, s, len)), batch))
    }
}

/// Tape version of the aggregation. `encodings` is `(r, s, len)` with
/// `batch * len` rows; `None` means an empty context set.
pub fn aggregate_vars(tape: &Tape, prior: &TaskPrior, encodings: Option<(Var, Var, usize)>, batch: usize) -> (Var, Var) {
    let prior_mean = tape.constant(prior.rows(&prior.mu0, batch));
    let Some((r, s, len)) = encodings else {
        return (prior_mean, tape.constant(prior.rows(&prior.var0, batch)));
    };
    let inv0: Vec<f64> = prior.var0.iter().map(|v| 1.0 / v).collect();
    let precision = tape.recip(s);
    let post_var = tape.recip(tape.add(tape.segment_sum(precision, len), tape.constant(prior.rows(&inv0, batch))));
    let resid = tape.sub(r, tape.constant(prior.rows(&prior.mu0, batch * len)));
    let weighted = tape.segment_sum(tape.mul(resid, precision), len);
    let post_mean = tape.add(prior_mean, tape.mul(post_var, weighted));
    (post_mean, post_var)
}

/// Closed-form posterior of the task variable given encoded context points.
pub fn aggregate(prior: &TaskPrior, encodings: &[DiagGaussian]) -> Result<DiagGaussian> {
    if encodings.is_empty() {
        return Ok(prior.as_gaussian());
    }
    let d = prior.dim();
    if let Some(e) = encodings.iter().find(|e| e.dim() != d) {
        return Err(Error::DimensionMismatch(format!("encoding of dim {} against prior of dim {d}", e.dim())));
    }
    let n = encodings.len();
    let stack = |f: fn(&DiagGaussian) -> &[f64]| {
        Array2::from_shape_fn((n, d), |(i, j)| f(&encodings[i])[j])
    };
    let tape = Tape::new();
    let r = tape.constant(stack(DiagGaussian::mean));
    let s = tape.constant(stack(DiagGaussian::var));
    let (mean, var) = aggregate_vars(&tape, prior, Some((r, s, n)), 1);
    let (m, v) = (tape.value(mean), tape.value(var));
    DiagGaussian::new(m.row(0).to_vec(), v.row(0).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_context_returns_prior() {
        let prior = TaskPrior::new(vec![0.5, -1.0], vec![2.0, 0.3]).unwrap();
        let post = aggregate(&prior, &[]).unwrap();
        assert_eq!(post.mean(), prior.mean());
        assert_eq!(post.var(), prior.var());
    }

    #[test]
    fn single_conjugate_update() {
        let prior = TaskPrior::standard(1);
        let enc = DiagGaussian::new(vec![1.0], vec![1.0]).unwrap();
        let post = aggregate(&prior, &[enc]).unwrap();
        assert!((post.mean()[0] - 0.5).abs() < 1e-15);
        assert!((post.var()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let prior = TaskPrior::standard(2);
        let enc = DiagGaussian::new(vec![1.0], vec![1.0]).unwrap();
        assert!(matches!(aggregate(&prior, &[enc]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn identical_tuples_encode_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let enc = ContextEncoder::new(&mut store, "ctx", 2, 1, 16, 4, &mut rng).unwrap();
        let t = Transition { obs: vec![0.1, 0.2], action: vec![-1.0], next_obs: vec![0.3, 0.1] };
        let cs = ContextSet::new(2, 1, vec![t.clone(), t]).unwrap();
        let e = enc.encode(&store, &cs).unwrap();
        assert_eq!(e[0], e[1]);
        assert!(e[0].var().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn rejects_mixed_dimensions() {
        let a = Transition { obs: vec![0.0], action: vec![0.0], next_obs: vec![0.0] };
        let b = Transition { obs: vec![0.0, 1.0], action: vec![0.0], next_obs: vec![0.0] };
        assert!(ContextSet::new(1, 1, vec![a, b]).is_err());
    }
}
