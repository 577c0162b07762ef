//! The recurrent cell: task-conditioned time update and factorized Kalman
//! observation update.
//!
//! The latent state `z = [p; q]` has an observed upper half `p` and a memory
//! half `q`, each of size `m`, with observation model `H = [I_m 0]`. The
//! covariance is kept as three diagonal vectors `(var_u, var_l, cov_s)`.
//! Transition matrices use the same layout (four diagonal `m`-blocks), which
//! keeps `A Sigma A^T` in factorized form, so every update is a handful of
//! elementwise vector operations.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{DiagGaussian, FactorizedBelief, VAR_FLOOR};
use crate::nn::{Activation, Linear, Mlp, ParamId, ParamStore, Tape, Tensor, Var};

/// Variance of the broad belief every window starts from.
pub const INITIAL_VAR: f64 = 10.0;

/// Latent observation size for a latent state of size `n` (`H = [I_m 0]`, `m = n / 2`).
pub fn observation_model_dims(n: usize) -> Result<usize> {
    if !n.is_multiple_of(2) {
        return Err(Error::OddLatentDim(n));
    }
    Ok(n / 2)
}

fn row_tensor(values: &[f64], rows: usize) -> Tensor {
    Array2::from_shape_fn((rows, values.len()), |(_, c)| values[c])
}

/// Batched belief on a tape; every field is `batch x m`.
#[derive(Debug, Clone, Copy)]
pub struct BeliefVars {
    pub upper: Var,
    pub lower: Var,
    pub var_u: Var,
    pub var_l: Var,
    pub cov_s: Var,
}

impl BeliefVars {
    /// `belief` repeated over `batch` rows, as constants.
    pub fn constant(tape: &Tape, belief: &FactorizedBelief, batch: usize) -> Self {
        Self {
            upper: tape.constant(row_tensor(belief.upper_mean(), batch)),
            lower: tape.constant(row_tensor(belief.lower_mean(), batch)),
            var_u: tape.constant(row_tensor(belief.var_u(), batch)),
            var_l: tape.constant(row_tensor(belief.var_l(), batch)),
            cov_s: tape.constant(row_tensor(belief.cov_s(), batch)),
        }
    }

    /// Full mean `[p, q]`, `batch x 2m`.
    pub fn mean(&self, tape: &Tape) -> Var {
        tape.concat_cols(&[self.upper, self.lower])
    }

    /// Covariance diagonals `[var_u, var_l, cov_s]`, `batch x 3m`.
    pub fn covariance(&self, tape: &Tape) -> Var {
        tape.concat_cols(&[self.var_u, self.var_l, self.cov_s])
    }

    /// Row-wise choice between two beliefs.
    pub fn select(tape: &Tape, mask: &[bool], on_true: &Self, on_false: &Self) -> Self {
        Self {
            upper: tape.select_rows(mask, on_true.upper, on_false.upper),
            lower: tape.select_rows(mask, on_true.lower, on_false.lower),
            var_u: tape.select_rows(mask, on_true.var_u, on_false.var_u),
            var_l: tape.select_rows(mask, on_true.var_l, on_false.var_l),
            cov_s: tape.select_rows(mask, on_true.cov_s, on_false.cov_s),
        }
    }

    /// Reads batch row `row` back into a validated belief.
    pub fn read(&self, tape: &Tape, row: usize) -> Result<FactorizedBelief> {
        let r = |v: Var| tape.value(v).row(row).to_vec();
        let mut mean = r(self.upper);
        mean.extend(r(self.lower));
        FactorizedBelief::new(mean, r(self.var_u), r(self.var_l), r(self.cov_s))
    }
}

/// Diagonal blocks of a `2m x 2m` matrix `[[a11, a12], [a21, a22]]`, each `batch x m`.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub a11: Var,
    pub a12: Var,
    pub a21: Var,
    pub a22: Var,
}

/// Additive task contribution to the time update; each field `batch x m`.
#[derive(Debug, Clone, Copy)]
pub struct TaskEffect {
    pub mean_u: Var,
    pub mean_l: Var,
    pub cov_u: Var,
    pub cov_l: Var,
    pub cov_s: Option<Var>,
}

/// Factorized Kalman update with `H = [I_m 0]` and diagonal observation noise.
pub fn observation_update_vars(tape: &Tape, prior: &BeliefVars, w: Var, obs_var: Var) -> BeliefVars {
    let denom = tape.add(prior.var_u, obs_var);
    let q_u = tape.div(prior.var_u, denom);
    let q_l = tape.div(prior.cov_s, denom);
    let resid = tape.sub(w, prior.upper);
    let keep = tape.affine(q_u, -1.0, 1.0);
    BeliefVars {
        upper: tape.add(prior.upper, tape.mul(q_u, resid)),
        lower: tape.add(prior.lower, tape.mul(q_l, resid)),
        var_u: tape.floor(tape.mul(keep, prior.var_u), VAR_FLOOR),
        var_l: tape.floor(tape.sub(prior.var_l, tape.mul(q_l, prior.cov_s)), VAR_FLOOR),
        cov_s: tape.mul(keep, prior.cov_s),
    }
}

/// `[a11 a12; a21 a22]` applied to `(x_u, x_l)` blockwise.
fn apply_blocks(tape: &Tape, b: &BlockVars, x_u: Var, x_l: Var) -> (Var, Var) {
    (
        tape.add(tape.mul(b.a11, x_u), tape.mul(b.a12, x_l)),
        tape.add(tape.mul(b.a21, x_u), tape.mul(b.a22, x_l)),
    )
}

/// `A Sigma A^T` for block-diagonal `A` and factorized `Sigma`.
fn propagate_covariance(tape: &Tape, b: &BlockVars, var_u: Var, var_l: Var, cov_s: Var) -> (Var, Var, Var) {
    let sq = |x: Var| tape.square(x);
    let m = |x: Var, y: Var| tape.mul(x, y);
    let upper = tape.add(
        tape.add(m(sq(b.a11), var_u), tape.scale(m(m(b.a11, b.a12), cov_s), 2.0)),
        m(sq(b.a12), var_l),
    );
    let lower = tape.add(
        tape.add(m(sq(b.a21), var_u), tape.scale(m(m(b.a21, b.a22), cov_s), 2.0)),
        m(sq(b.a22), var_l),
    );
    let cross = tape.add(
        tape.add(m(m(b.a11, b.a21), var_u), m(tape.add(m(b.a11, b.a22), m(b.a12, b.a21)), cov_s)),
        m(m(b.a12, b.a22), var_l),
    );
    (upper, lower, cross)
}

/// Time update: `z- = A z+ + b(a) + task mean`,
/// `Sigma- = A Sigma+ A^T + task covariance + Sigma_trans`.
pub fn time_update_vars(
    tape: &Tape,
    post: &BeliefVars,
    blocks: &BlockVars,
    control: Option<(Var, Var)>,
    task: Option<&TaskEffect>,
    trans_noise: Option<(Var, Var)>,
) -> BeliefVars {
    let (mut upper, mut lower) = apply_blocks(tape, blocks, post.upper, post.lower);
    let (mut var_u, mut var_l, mut cov_s) = propagate_covariance(tape, blocks, post.var_u, post.var_l, post.cov_s);
    if let Some((cu, cl)) = control {
        upper = tape.add(upper, cu);
        lower = tape.add(lower, cl);
    }
    if let Some(t) = task {
        upper = tape.add(upper, t.mean_u);
        lower = tape.add(lower, t.mean_l);
        var_u = tape.add(var_u, t.cov_u);
        var_l = tape.add(var_l, t.cov_l);
        if let Some(s) = t.cov_s {
            cov_s = tape.add(cov_s, s);
        }
    }
    if let Some((nu, nl)) = trans_noise {
        var_u = tape.add(var_u, nu);
        var_l = tape.add(var_l, nl);
    }
    BeliefVars {
        upper,
        lower,
        var_u: tape.floor(var_u, VAR_FLOOR),
        var_l: tape.floor(var_l, VAR_FLOOR),
        cov_s,
    }
}

/// Observation update on a single belief.
pub fn observation_update(prior: &FactorizedBelief, w: &[f64], obs_var: &[f64]) -> Result<FactorizedBelief> {
    let m = prior.m();
    if w.len() != m || obs_var.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "observation of size {} / variance of size {} for m = {m}",
            w.len(),
            obs_var.len()
        )));
    }
    if let Some(i) = obs_var.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::InvalidValue(format!("obs_var[{i}] = {} is not positive", obs_var[i])));
    }
    let tape = Tape::new();
    let b = BeliefVars::constant(&tape, prior, 1);
    let post = observation_update_vars(&tape, &b, tape.constant(row_tensor(w, 1)), tape.constant(row_tensor(obs_var, 1)));
    post.read(&tape, 0)
}

/// Block-diagonal transition matrix in value form.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBlocks {
    pub a11: Vec<f64>,
    pub a12: Vec<f64>,
    pub a21: Vec<f64>,
    pub a22: Vec<f64>,
}

impl TransitionBlocks {
    pub fn identity(m: usize) -> Self {
        Self { a11: vec![1.0; m], a12: vec![0.0; m], a21: vec![0.0; m], a22: vec![1.0; m] }
    }

    pub fn m(&self) -> usize {
        self.a11.len()
    }

    fn vars(&self, tape: &Tape) -> BlockVars {
        BlockVars {
            a11: tape.constant(row_tensor(&self.a11, 1)),
            a12: tape.constant(row_tensor(&self.a12, 1)),
            a21: tape.constant(row_tensor(&self.a21, 1)),
            a22: tape.constant(row_tensor(&self.a22, 1)),
        }
    }
}

/// Additive task terms in value form: a mean of size `2m` and the three
/// covariance diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTerms {
    pub mean: Vec<f64>,
    pub cov_u: Vec<f64>,
    pub cov_l: Vec<f64>,
    pub cov_s: Vec<f64>,
}

impl TaskTerms {
    pub fn zero(m: usize) -> Self {
        Self { mean: vec![0.0; 2 * m], cov_u: vec![0.0; m], cov_l: vec![0.0; m], cov_s: vec![0.0; m] }
    }
}

/// Time update on a single belief with explicitly supplied blocks, control
/// offset (size `2m`), task terms and transition noise diagonal (size `2m`).
pub fn time_update_factorized(
    belief: &FactorizedBelief,
    blocks: &TransitionBlocks,
    control: &[f64],
    task: &TaskTerms,
    trans_noise: &[f64],
) -> Result<FactorizedBelief> {
    let m = belief.m();
    let ok = blocks.m() == m
        && [&blocks.a12, &blocks.a21, &blocks.a22].iter().all(|b| b.len() == m)
        && control.len() == 2 * m
        && task.mean.len() == 2 * m
        && [&task.cov_u, &task.cov_l, &task.cov_s].iter().all(|c| c.len() == m)
        && trans_noise.len() == 2 * m;
    if !ok {
        return Err(Error::DimensionMismatch(format!("time update operands inconsistent with m = {m}")));
    }
    let tape = Tape::new();
    let c = |xs: &[f64]| tape.constant(row_tensor(xs, 1));
    let post = BeliefVars::constant(&tape, belief, 1);
    let effect = TaskEffect {
        mean_u: c(&task.mean[..m]),
        mean_l: c(&task.mean[m..]),
        cov_u: c(&task.cov_u),
        cov_l: c(&task.cov_l),
        cov_s: Some(c(&task.cov_s)),
    };
    let prior = time_update_vars(
        &tape,
        &post,
        &blocks.vars(&tape),
        Some((c(&control[..m]), c(&control[m..]))),
        Some(&effect),
        Some((c(&trans_noise[..m]), c(&trans_noise[m..]))),
    );
    prior.read(&tape, 0)
}

/// Locally linear transition: `K` block-diagonal bases mixed by a softmax
/// over a linear function of the posterior mean, a control network for
/// `b(a)`, and a learned diagonal transition noise.
#[derive(Debug, Clone)]
pub struct TransitionModel {
    pub m: usize,
    pub num_basis: usize,
    /// `K x m` parameters for the blocks a11, a12, a21, a22.
    pub basis: [ParamId; 4],
    pub coefficients: Linear,
    pub control: Mlp,
    /// Free `1 x 2m` vector; `Sigma_trans = elu(x) + 1`.
    pub trans_noise: ParamId,
}

/// Initial value of the free transition-noise vector (`elu + 1` of it is 0.1).
pub const INITIAL_TRANS_NOISE_FREE: f64 = -std::f64::consts::LN_10;

impl TransitionModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        m: usize,
        num_basis: usize,
        action_dim: usize,
        control_hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if num_basis == 0 {
            return Err(Error::InvalidValue("transition model needs at least one basis".into()));
        }
        let mut init = |center: f64| Tensor::from_shape_fn((num_basis, m), |_| center + rng.random_range(-0.05..0.05));
        let centers = [1.0, 0.2, -0.2, 1.0];
        let labels = ["a11", "a12", "a21", "a22"];
        let mut ids = Vec::with_capacity(4);
        for (label, center) in labels.iter().zip(centers) {
            ids.push(store.add(format!("{name}.basis.{label}"), init(center))?);
        }
        let basis = [ids[0], ids[1], ids[2], ids[3]];
        let coefficients = Linear::new(store, &format!("{name}.coefficients"), 2 * m, num_basis, rng)?;
        let control = Mlp::new(store, &format!("{name}.control"), action_dim, control_hidden, 2 * m, None, rng)?;
        let trans_noise =
            store.add(format!("{name}.trans_noise"), Tensor::from_elem((1, 2 * m), INITIAL_TRANS_NOISE_FREE))?;
        Ok(Self { m, num_basis, basis, coefficients, control, trans_noise })
    }

    /// Softmax mixing weights, `batch x K`.
    pub fn coefficients(&self, tape: &Tape, store: &ParamStore, z_post: Var) -> Result<Var> {
        Ok(tape.softmax(self.coefficients.forward(tape, store, z_post)?))
    }

    /// Convex combination of the bases for each batch row of `z_post`.
    pub fn blocks(&self, tape: &Tape, store: &ParamStore, z_post: Var) -> Result<BlockVars> {
        let alpha = self.coefficients(tape, store, z_post)?;
        let mix = |id: ParamId| tape.matmul(alpha, tape.param(store, id));
        Ok(BlockVars {
            a11: mix(self.basis[0])?,
            a12: mix(self.basis[1])?,
            a21: mix(self.basis[2])?,
            a22: mix(self.basis[3])?,
        })
    }

    /// `b(a)` split into upper and lower halves; `actions` is `rows x d_a`.
    pub fn control(&self, tape: &Tape, store: &ParamStore, actions: Var) -> Result<(Var, Var)> {
        let b = self.control.forward(tape, store, actions)?;
        Ok((tape.slice_cols(b, 0, self.m), tape.slice_cols(b, self.m, self.m)))
    }

    /// Positive transition noise diagonal repeated over `batch` rows.
    pub fn trans_noise(&self, tape: &Tape, store: &ParamStore, batch: usize) -> (Var, Var) {
        let noise = tape.broadcast_rows(tape.elu_plus_one(tape.param(store, self.trans_noise)), batch);
        (tape.slice_cols(noise, 0, self.m), tape.slice_cols(noise, self.m, self.m))
    }

    /// Block values at a single posterior mean.
    pub fn blocks_at(&self, store: &ParamStore, z_post: &[f64]) -> Result<TransitionBlocks> {
        if z_post.len() != 2 * self.m {
            return Err(Error::DimensionMismatch(format!("posterior mean of size {}, expected {}", z_post.len(), 2 * self.m)));
        }
        let tape = Tape::new();
        let b = self.blocks(&tape, store, tape.constant(row_tensor(z_post, 1)))?;
        let r = |v: Var| tape.value(v).row(0).to_vec();
        Ok(TransitionBlocks { a11: r(b.a11), a12: r(b.a12), a21: r(b.a21), a22: r(b.a22) })
    }
}

/// How the latent task enters the time update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskVariant {
    /// One block-diagonal matrix `C`.
    Linear,
    /// Softmax mixture of block-diagonal matrices, weighted by the posterior mean.
    LocallyLinear,
    /// Networks `f_mu(mu_l)` and `f_sigma(var_l)` added to mean and variances.
    Nonlinear,
}

impl TaskVariant {
    pub fn requires_square(self) -> bool {
        !matches!(self, TaskVariant::Nonlinear)
    }
}

/// Task transformation parameters for the chosen [`TaskVariant`].
#[derive(Debug, Clone)]
pub enum TaskTransform {
    Linear { c: [ParamId; 4] },
    LocallyLinear { bases: [ParamId; 4], coefficients: Linear },
    Nonlinear { mean_net: Mlp, var_net: Mlp },
}

impl TaskTransform {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        variant: TaskVariant,
        store: &mut ParamStore,
        name: &str,
        m: usize,
        task_dim: usize,
        hidden: usize,
        num_basis: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if variant.requires_square() && task_dim != 2 * m {
            return Err(Error::DimensionMismatch(format!(
                "{variant:?} task transform needs task dim = latent state dim ({}), got {task_dim}",
                2 * m
            )));
        }
        let labels = ["c11", "c12", "c21", "c22"];
        Ok(match variant {
            TaskVariant::Linear => {
                let mut ids = Vec::new();
                for label in labels {
                    let init = Tensor::from_shape_fn((1, m), |_| rng.random_range(-0.1..0.1));
                    ids.push(store.add(format!("{name}.{label}"), init)?);
                }
                TaskTransform::Linear { c: [ids[0], ids[1], ids[2], ids[3]] }
            }
            TaskVariant::LocallyLinear => {
                if num_basis == 0 {
                    return Err(Error::InvalidValue("locally linear task transform needs at least one basis".into()));
                }
                let mut ids = Vec::new();
                for label in labels {
                    let init = Tensor::from_shape_fn((num_basis, m), |_| rng.random_range(-0.1..0.1));
                    ids.push(store.add(format!("{name}.basis.{label}"), init)?);
                }
                let coefficients = Linear::new(store, &format!("{name}.coefficients"), 2 * m, num_basis, rng)?;
                TaskTransform::LocallyLinear { bases: [ids[0], ids[1], ids[2], ids[3]], coefficients }
            }
            TaskVariant::Nonlinear => TaskTransform::Nonlinear {
                mean_net: Mlp::new(store, &format!("{name}.mean"), task_dim, &[hidden], 2 * m, None, rng)?,
                var_net: Mlp::new(
                    store,
                    &format!("{name}.var"),
                    task_dim,
                    &[hidden],
                    2 * m,
                    Some(Activation::EluPlusOne),
                    rng,
                )?,
            },
        })
    }

    pub fn variant(&self) -> TaskVariant {
        match self {
            TaskTransform::Linear { .. } => TaskVariant::Linear,
            TaskTransform::LocallyLinear { .. } => TaskVariant::LocallyLinear,
            TaskTransform::Nonlinear { .. } => TaskVariant::Nonlinear,
        }
    }

    /// Whether the effect depends on the current posterior mean (and so has
    /// to be recomputed every step).
    pub fn state_dependent(&self) -> bool {
        matches!(self, TaskTransform::LocallyLinear { .. })
    }

    /// Task contribution for a batch of task beliefs (`batch x d_l` mean and
    /// variance). `z_post` is required for the locally linear variant.
    pub fn effect(
        &self,
        tape: &Tape,
        store: &ParamStore,
        m: usize,
        task_mean: Var,
        task_var: Var,
        z_post: Option<Var>,
    ) -> Result<TaskEffect> {
        let batch = tape.shape(task_mean).0;
        match self {
            TaskTransform::Nonlinear { mean_net, var_net } => {
                let mu = mean_net.forward(tape, store, task_mean)?;
                let var = var_net.forward(tape, store, task_var)?;
                Ok(TaskEffect {
                    mean_u: tape.slice_cols(mu, 0, m),
                    mean_l: tape.slice_cols(mu, m, m),
                    cov_u: tape.slice_cols(var, 0, m),
                    cov_l: tape.slice_cols(var, m, m),
                    cov_s: None,
                })
            }
            TaskTransform::Linear { c } => {
                let b = |id: ParamId| tape.broadcast_rows(tape.param(store, id), batch);
                let blocks = BlockVars { a11: b(c[0]), a12: b(c[1]), a21: b(c[2]), a22: b(c[3]) };
                Ok(block_task_effect(tape, &blocks, m, task_mean, task_var))
            }
            TaskTransform::LocallyLinear { bases, coefficients } => {
                let z = z_post.ok_or_else(|| {
                    Error::InvalidValue("locally linear task transform needs the posterior mean".into())
                })?;
                let beta = tape.softmax(coefficients.forward(tape, store, z)?);
                let mix = |id: ParamId| tape.matmul(beta, tape.param(store, id));
                let blocks =
                    BlockVars { a11: mix(bases[0])?, a12: mix(bases[1])?, a21: mix(bases[2])?, a22: mix(bases[3])? };
                Ok(block_task_effect(tape, &blocks, m, task_mean, task_var))
            }
        }
    }
}

/// `C mu_l` and `C diag(var_l) C^T` for block-diagonal `C`.
fn block_task_effect(tape: &Tape, c: &BlockVars, m: usize, task_mean: Var, task_var: Var) -> TaskEffect {
    let (mu_u, mu_l) = (tape.slice_cols(task_mean, 0, m), tape.slice_cols(task_mean, m, m));
    let (var_u, var_l) = (tape.slice_cols(task_var, 0, m), tape.slice_cols(task_var, m, m));
    let (mean_u, mean_l) = apply_blocks(tape, c, mu_u, mu_l);
    let zero = tape.filled(tape.shape(var_u).0, m, 0.0);
    let (cov_u, cov_l, cov_s) = propagate_covariance(tape, c, var_u, var_l, zero);
    TaskEffect { mean_u, mean_l, cov_u, cov_l, cov_s: Some(cov_s) }
}

/// Task terms in value form for a single task belief.
pub fn task_terms(
    tt: &TaskTransform,
    store: &ParamStore,
    m: usize,
    task: &DiagGaussian,
    z_post: &[f64],
) -> Result<TaskTerms> {
    let tape = Tape::new();
    let e = tt.effect(
        &tape,
        store,
        m,
        tape.constant(row_tensor(task.mean(), 1)),
        tape.constant(row_tensor(task.var(), 1)),
        Some(tape.constant(row_tensor(z_post, 1))),
    )?;
    let r = |v: Var| tape.value(v).row(0).to_vec();
    let mut mean = r(e.mean_u);
    mean.extend(r(e.mean_l));
    Ok(TaskTerms { mean, cov_u: r(e.cov_u), cov_l: r(e.cov_l), cov_s: e.cov_s.map_or(vec![0.0; m], r) })
}

/// Full time update on a single belief through the learned transition
/// model, control network and (optional) task transform.
pub fn time_update(
    store: &ParamStore,
    tm: &TransitionModel,
    tt: Option<&TaskTransform>,
    belief: &FactorizedBelief,
    action: &[f64],
    task: &DiagGaussian,
) -> Result<FactorizedBelief> {
    if belief.m() != tm.m {
        return Err(Error::DimensionMismatch(format!("belief m = {}, model m = {}", belief.m(), tm.m)));
    }
    let tape = Tape::new();
    let post = BeliefVars::constant(&tape, belief, 1);
    let z = post.mean(&tape);
    let blocks = tm.blocks(&tape, store, z)?;
    let control = tm.control(&tape, store, tape.constant(row_tensor(action, 1)))?;
    let effect = match tt {
        Some(tt) => Some(tt.effect(
            &tape,
            store,
            tm.m,
            tape.constant(row_tensor(task.mean(), 1)),
            tape.constant(row_tensor(task.var(), 1)),
            Some(z),
        )?),
        None => None,
    };
    let noise = tm.trans_noise(&tape, store, 1);
    let prior = time_update_vars(&tape, &post, &blocks, Some(control), effect.as_ref(), Some(noise));
    prior.read(&tape, 0)
}
