//! Full model: observation encoder, task posterior, unrolled cell, decoder,
//! plus the two training losses and the baselines that share this code path.
//!
//! Batched tensors are time-major: step `t` of batch element `b` lives in row
//! `t * batch + b`. Encoders, control network and decoder run once over all
//! `T * B` rows; only the cell itself is applied step by step.

use std::f64::consts::PI;

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::{
    observation_model_dims, observation_update_vars, time_update_vars, BeliefVars, TaskTransform, TaskVariant,
    TransitionModel, INITIAL_VAR,
};
use crate::context::{ContextEncoder, ContextSet, TaskPrior};
use crate::error::{Error, Result};
use crate::gaussian::{DiagGaussian, FactorizedBelief};
use crate::nn::{Activation, GaussianHead, Mlp, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Rmse,
    Nll,
}

/// Which wiring to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Full model.
    #[default]
    None,
    /// Recurrent cell without the task path.
    ContextFree,
    /// Context posterior feeding a feedforward predictor, no recurrence.
    Np,
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Baseline::None),
            "context_free" => Ok(Baseline::ContextFree),
            "np" => Ok(Baseline::Np),
            other => Err(Error::Config(format!("unknown baseline '{other}' (none | context_free | np)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    /// `m`, size of the observed half of the latent state.
    pub latent_obs_dim: usize,
    /// `n = 2m`.
    pub latent_state_dim: usize,
    pub task_dim: usize,
    pub num_basis: usize,
    pub task_variant: TaskVariant,
    /// Bases of the locally linear task transform.
    pub task_bases: usize,
    pub obs_encoder_hidden: usize,
    pub context_encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub control_hidden: Vec<usize>,
    pub task_hidden: usize,
    pub np_hidden: Vec<usize>,
    /// Context set size and window length `N`.
    pub context_size: usize,
    pub loss: LossMode,
    pub baseline: Baseline,
    pub initial_var: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            obs_dim: 1,
            action_dim: 1,
            latent_obs_dim: 15,
            latent_state_dim: 30,
            task_dim: 30,
            num_basis: 15,
            task_variant: TaskVariant::Nonlinear,
            task_bases: 15,
            obs_encoder_hidden: 120,
            context_encoder_hidden: 240,
            decoder_hidden: 120,
            control_hidden: vec![120, 120, 120],
            task_hidden: 120,
            np_hidden: vec![120, 120],
            context_size: 150,
            loss: LossMode::Rmse,
            baseline: Baseline::None,
            initial_var: INITIAL_VAR,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("model.obs_dim", self.obs_dim),
            ("model.action_dim", self.action_dim),
            ("model.task_dim", self.task_dim),
            ("model.num_basis", self.num_basis),
            ("model.task_bases", self.task_bases),
            ("model.obs_encoder_hidden", self.obs_encoder_hidden),
            ("model.context_encoder_hidden", self.context_encoder_hidden),
            ("model.decoder_hidden", self.decoder_hidden),
            ("model.task_hidden", self.task_hidden),
            ("model.context_size", self.context_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        let m = observation_model_dims(self.latent_state_dim)
            .map_err(|_| Error::Config(format!("model.latent_state_dim = {} must be even", self.latent_state_dim)))?;
        if m != self.latent_obs_dim || m == 0 {
            return bad(format!(
                "model.latent_state_dim ({}) must equal 2 * model.latent_obs_dim ({})",
                self.latent_state_dim, self.latent_obs_dim
            ));
        }
        if self.baseline == Baseline::None && self.task_variant.requires_square() && self.task_dim != self.latent_state_dim {
            return bad(format!(
                "model.task_dim ({}) must equal model.latent_state_dim ({}) for the {:?} task transform",
                self.task_dim, self.latent_state_dim, self.task_variant
            ));
        }
        if !(self.initial_var > 0.0) || !self.initial_var.is_finite() {
            return bad(format!("model.initial_var = {} must be positive", self.initial_var));
        }
        Ok(())
    }
}

/// One minibatch in time-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch: usize,
    pub steps: usize,
    /// Tuples per context set.
    pub context_len: usize,
    /// `(batch * context_len) x (2 d_o + d_a)`, grouped by batch element.
    pub context: Tensor,
    /// `(steps * batch) x d_o`.
    pub obs: Tensor,
    /// `(steps * batch) x d_a`; row `t` holds the action applied between `t` and `t + 1`.
    pub actions: Tensor,
    /// Normalized `o_{t+1} - o_t`, `(steps * batch) x d_o`.
    pub targets: Tensor,
    pub obs_mask: Vec<bool>,
    pub pred_mask: Vec<bool>,
}

impl Batch {
    /// Single window with an all-true prediction mask and zero targets.
    pub fn single(context: &ContextSet, obs: &Tensor, actions: &Tensor, obs_mask: &[bool]) -> Result<Self> {
        let steps = obs.nrows();
        if steps == 0 || actions.nrows() != steps || obs_mask.len() != steps {
            return Err(Error::DimensionMismatch(format!(
                "window has {steps} observations, {} actions, {} mask entries",
                actions.nrows(),
                obs_mask.len()
            )));
        }
        Ok(Self {
            batch: 1,
            steps,
            context_len: context.len(),
            context: context.to_tensor(),
            obs: obs.clone(),
            actions: actions.clone(),
            targets: Tensor::zeros(obs.raw_dim()),
            obs_mask: obs_mask.to_vec(),
            pred_mask: vec![true; steps],
        })
    }

    pub fn rows(&self) -> usize {
        self.steps * self.batch
    }

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let rows = self.rows();
        let ok = rows > 0
            && self.obs.dim() == (rows, cfg.obs_dim)
            && self.actions.dim() == (rows, cfg.action_dim)
            && self.targets.dim() == (rows, cfg.obs_dim)
            && self.obs_mask.len() == rows
            && self.pred_mask.len() == rows
            && self.context.dim() == (self.batch * self.context_len, 2 * cfg.obs_dim + cfg.action_dim);
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "batch of {} x {} steps does not match obs_dim {} / action_dim {}",
                self.batch, self.steps, cfg.obs_dim, cfg.action_dim
            )))
        }
    }
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub pred_mean: Var,
    pub pred_var: Option<Var>,
    pub task_mean: Var,
    pub task_var: Var,
    /// Per step, the posterior after the observation update (empty for the NP baseline).
    pub posteriors: Vec<BeliefVars>,
    /// Per step, the prior for the next step that was decoded.
    pub priors: Vec<BeliefVars>,
}

/// Plain-value forward results.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub batch: usize,
    pub steps: usize,
    /// Predicted normalized deltas, `(steps * batch) x d_o`.
    pub pred_mean: Tensor,
    pub pred_var: Option<Tensor>,
    /// Task posterior, `batch x d_l` (prior for the context-free baseline).
    pub task_mean: Tensor,
    pub task_var: Tensor,
    pub posteriors: Vec<Vec<FactorizedBelief>>,
    pub priors: Vec<Vec<FactorizedBelief>>,
}

impl ForwardOutput {
    pub fn task_posterior(&self, b: usize) -> Result<DiagGaussian> {
        DiagGaussian::new(self.task_mean.row(b).to_vec(), self.task_var.row(b).to_vec())
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Architecture {
    Recurrent {
        obs_encoder: GaussianHead,
        context_encoder: Option<ContextEncoder>,
        transition: TransitionModel,
        task: Option<TaskTransform>,
        decoder: Mlp,
        var_decoder: Option<Mlp>,
    },
    Np {
        context_encoder: ContextEncoder,
        /// `(o_t, a_t, mu_l) -> delta` (and a pre-activation variance in nll mode).
        net: Mlp,
    },
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub prior: TaskPrior,
    pub params: ParamStore,
    pub arch: Architecture,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let m = c.latent_obs_dim;
        let context_encoder = |store: &mut ParamStore, rng: &mut ChaCha8Rng| {
            ContextEncoder::new(store, "context_encoder", c.obs_dim, c.action_dim, c.context_encoder_hidden, c.task_dim, rng)
        };
        let arch = match c.baseline {
            Baseline::Np => {
                let encoder = context_encoder(&mut store, &mut rng)?;
                let out = if c.loss == LossMode::Nll { 2 * c.obs_dim } else { c.obs_dim };
                let net = Mlp::new(&mut store, "np", c.obs_dim + c.action_dim + c.task_dim, &c.np_hidden, out, None, &mut rng)?;
                Architecture::Np { context_encoder: encoder, net }
            }
            Baseline::None | Baseline::ContextFree => {
                let obs_encoder = GaussianHead::new(&mut store, "obs_encoder", c.obs_dim, c.obs_encoder_hidden, m, &mut rng)?;
                let with_task = c.baseline == Baseline::None;
                let context_encoder = if with_task { Some(context_encoder(&mut store, &mut rng)?) } else { None };
                let transition =
                    TransitionModel::new(&mut store, "transition", m, c.num_basis, c.action_dim, &c.control_hidden, &mut rng)?;
                let task = if with_task {
                    Some(TaskTransform::new(
                        c.task_variant,
                        &mut store,
                        "task",
                        m,
                        c.task_dim,
                        c.task_hidden,
                        c.task_bases,
                        &mut rng,
                    )?)
                } else {
                    None
                };
                let decoder = Mlp::new(&mut store, "decoder", 2 * m, &[c.decoder_hidden], c.obs_dim, None, &mut rng)?;
                let var_decoder = if c.loss == LossMode::Nll {
                    Some(Mlp::new(
                        &mut store,
                        "var_decoder",
                        3 * m,
                        &[c.decoder_hidden],
                        c.obs_dim,
                        Some(Activation::EluPlusOne),
                        &mut rng,
                    )?)
                } else {
                    None
                };
                Architecture::Recurrent { obs_encoder, context_encoder, transition, task, decoder, var_decoder }
            }
        };
        Ok(Self { prior: TaskPrior::standard(config.task_dim), config, params: store, arch })
    }

    pub fn m(&self) -> usize {
        self.config.latent_obs_dim
    }

    /// Records the forward pass on `tape`, reading parameters from `store`.
    pub fn forward_vars(&self, tape: &Tape, store: &ParamStore, batch: &Batch) -> Result<ForwardVars> {
        batch.check(&self.config)?;
        match &self.arch {
            Architecture::Np { context_encoder, net } => self.forward_np(tape, store, batch, context_encoder, net),
            Architecture::Recurrent { obs_encoder, context_encoder, transition, task, decoder, var_decoder } => {
                let b = batch.batch;
                let m = self.m();
                let (task_mean, task_var) = match context_encoder {
                    Some(enc) => enc.task_posterior_vars(
                        tape,
                        store,
                        &self.prior,
                        tape.constant(batch.context.clone()),
                        b,
                        batch.context_len,
                    )?,
                    None => crate::context::aggregate_vars(tape, &self.prior, None, b),
                };
                let (w, obs_var) = obs_encoder.forward(tape, store, tape.constant(batch.obs.clone()))?;
                let (ctrl_u, ctrl_l) = transition.control(tape, store, tape.constant(batch.actions.clone()))?;
                let noise = transition.trans_noise(tape, store, b);
                let static_effect = match task {
                    Some(tt) if !tt.state_dependent() => Some(tt.effect(tape, store, m, task_mean, task_var, None)?),
                    _ => None,
                };
                let init = FactorizedBelief::initial(m, self.config.initial_var);
                let mut prior = BeliefVars::constant(tape, &init, b);
                let mut posteriors = Vec::with_capacity(batch.steps);
                let mut priors = Vec::with_capacity(batch.steps);
                for t in 0..batch.steps {
                    let mask = &batch.obs_mask[t * b..(t + 1) * b];
                    let post = if mask.iter().any(|&x| x) {
                        let updated = observation_update_vars(
                            tape,
                            &prior,
                            tape.slice_rows(w, t * b, b),
                            tape.slice_rows(obs_var, t * b, b),
                        );
                        if mask.iter().all(|&x| x) {
                            updated
                        } else {
                            BeliefVars::select(tape, mask, &updated, &prior)
                        }
                    } else {
                        prior
                    };
                    let z = post.mean(tape);
                    let blocks = transition.blocks(tape, store, z)?;
                    let effect = match (task, static_effect) {
                        (_, Some(e)) => Some(e),
                        (Some(tt), None) => Some(tt.effect(tape, store, m, task_mean, task_var, Some(z))?),
                        (None, None) => None,
                    };
                    let control = (tape.slice_rows(ctrl_u, t * b, b), tape.slice_rows(ctrl_l, t * b, b));
                    prior = time_update_vars(tape, &post, &blocks, Some(control), effect.as_ref(), Some(noise));
                    posteriors.push(post);
                    priors.push(prior);
                }
                let means: Vec<Var> = priors.iter().map(|p| p.mean(tape)).collect();
                let pred_mean = decoder.forward(tape, store, tape.concat_rows(&means))?;
                let pred_var = match var_decoder {
                    Some(vd) => {
                        let covs: Vec<Var> = priors.iter().map(|p| p.covariance(tape)).collect();
                        Some(vd.forward(tape, store, tape.concat_rows(&covs))?)
                    }
                    None => None,
                };
                Ok(ForwardVars { pred_mean, pred_var, task_mean, task_var, posteriors, priors })
            }
        }
    }

    fn forward_np(
        &self,
        tape: &Tape,
        store: &ParamStore,
        batch: &Batch,
        encoder: &ContextEncoder,
        net: &Mlp,
    ) -> Result<ForwardVars> {
        let b = batch.batch;
        let d_o = self.config.obs_dim;
        let (task_mean, task_var) = encoder.task_posterior_vars(
            tape,
            store,
            &self.prior,
            tape.constant(batch.context.clone()),
            b,
            batch.context_len,
        )?;
        // Masked steps see the most recent observed value (zeros before any).
        let mut held = Array2::zeros((batch.rows(), d_o));
        for bi in 0..b {
            let mut last = ndarray::Array1::zeros(d_o);
            for t in 0..batch.steps {
                let r = t * b + bi;
                if batch.obs_mask[r] {
                    last.assign(&batch.obs.row(r));
                }
                held.row_mut(r).assign(&last);
            }
        }
        let task_rows: Vec<Var> = (0..batch.steps).map(|_| task_mean).collect();
        let input = tape.concat_cols(&[
            tape.constant(held),
            tape.constant(batch.actions.clone()),
            tape.concat_rows(&task_rows),
        ]);
        let out = net.forward(tape, store, input)?;
        let (pred_mean, pred_var) = if self.config.loss == LossMode::Nll {
            (tape.slice_cols(out, 0, d_o), Some(tape.elu_plus_one(tape.slice_cols(out, d_o, d_o))))
        } else {
            (out, None)
        };
        Ok(ForwardVars { pred_mean, pred_var, task_mean, task_var, posteriors: Vec::new(), priors: Vec::new() })
    }

    /// Forward pass returning plain values; beliefs are read back when `keep_beliefs`.
    pub fn forward(&self, batch: &Batch, keep_beliefs: bool) -> Result<ForwardOutput> {
        let tape = Tape::new();
        let v = self.forward_vars(&tape, &self.params, batch)?;
        let read = |beliefs: &[BeliefVars]| -> Result<Vec<Vec<FactorizedBelief>>> {
            if !keep_beliefs {
                return Ok(Vec::new());
            }
            beliefs.iter().map(|bv| (0..batch.batch).map(|r| bv.read(&tape, r)).collect()).collect()
        };
        let out = ForwardOutput {
            batch: batch.batch,
            steps: batch.steps,
            pred_mean: tape.value(v.pred_mean).clone(),
            pred_var: v.pred_var.map(|p| tape.value(p).clone()),
            task_mean: tape.value(v.task_mean).clone(),
            task_var: tape.value(v.task_var).clone(),
            posteriors: read(&v.posteriors)?,
            priors: read(&v.priors)?,
        };
        Ok(out)
    }

    /// Forward pass for one window.
    pub fn forward_window(
        &self,
        context: &ContextSet,
        obs: &Tensor,
        actions: &Tensor,
        obs_mask: &[bool],
    ) -> Result<ForwardOutput> {
        self.forward(&Batch::single(context, obs, actions, obs_mask)?, true)
    }

    /// Records forward and loss; returns the scalar loss variable.
    pub fn loss_vars(&self, tape: &Tape, store: &ParamStore, batch: &Batch) -> Result<Var> {
        let out = self.forward_vars(tape, store, batch)?;
        loss_vars(tape, self.config.loss, out.pred_mean, out.pred_var, &batch.targets, &batch.pred_mask)
    }
}

/// Masked loss on a tape. `rmse`: root of the mean squared error over
/// unmasked rows and all dimensions. `nll`: mean Gaussian negative
/// log-likelihood (requires `pred_var`).
pub fn loss_vars(
    tape: &Tape,
    mode: LossMode,
    pred_mean: Var,
    pred_var: Option<Var>,
    targets: &Tensor,
    mask: &[bool],
) -> Result<Var> {
    let (rows, cols) = tape.shape(pred_mean);
    if targets.dim() != (rows, cols) || mask.len() != rows {
        return Err(Error::DimensionMismatch(format!(
            "predictions {rows}x{cols}, targets {}x{}, mask {}",
            targets.nrows(),
            targets.ncols(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&x| x).count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let zeros = tape.filled(rows, cols, 0.0);
    let err2 = tape.square(tape.sub(pred_mean, tape.constant(targets.clone())));
    let denom = 1.0 / (count * cols) as f64;
    match mode {
        LossMode::Rmse => {
            let masked = tape.select_rows(mask, err2, zeros);
            Ok(tape.sqrt(tape.scale(tape.sum(masked), denom)))
        }
        LossMode::Nll => {
            let var = pred_var.ok_or_else(|| Error::InvalidValue("nll loss needs a predicted variance".into()))?;
            let per = tape.affine(tape.add(tape.ln(var), tape.div(err2, var)), 0.5, 0.5 * (2.0 * PI).ln());
            let masked = tape.select_rows(mask, per, zeros);
            Ok(tape.scale(tape.sum(masked), denom))
        }
    }
}

/// Value-level loss.
pub fn loss(mode: LossMode, pred_mean: &Tensor, pred_var: Option<&Tensor>, targets: &Tensor, mask: &[bool]) -> Result<f64> {
    let tape = Tape::new();
    let mean = tape.constant(pred_mean.clone());
    let var = pred_var.map(|v| tape.constant(v.clone()));
    let l = loss_vars(&tape, mode, mean, var, targets, mask)?;
    Ok(tape.scalar(l))
}

/// Rows `t * batch + b` for a fixed `b`, as a `steps x cols` matrix.
pub fn batch_element(x: &Tensor, batch: usize, b: usize) -> Tensor {
    x.slice(s![b..;batch, ..]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::Transition;
    use ndarray::array;

    fn small(baseline: Baseline, variant: TaskVariant, loss: LossMode) -> ModelConfig {
        ModelConfig {
            obs_dim: 2,
            action_dim: 1,
            latent_obs_dim: 2,
            latent_state_dim: 4,
            task_dim: 4,
            num_basis: 3,
            task_variant: variant,
            task_bases: 2,
            obs_encoder_hidden: 5,
            context_encoder_hidden: 6,
            decoder_hidden: 5,
            control_hidden: vec![4],
            task_hidden: 5,
            np_hidden: vec![6],
            context_size: 3,
            loss,
            baseline,
            initial_var: 10.0,
        }
    }

    fn context(seed: f64) -> ContextSet {
        let t = |k: f64| Transition { obs: vec![k, -k], action: vec![0.5 * k], next_obs: vec![k + 0.1, seed] };
        ContextSet::new(2, 1, vec![t(0.1), t(-0.4), t(1.2)]).unwrap()
    }

    fn window() -> (Tensor, Tensor) {
        (array![[0.1, 0.2], [0.0, -0.3], [0.5, 0.4]], array![[0.3], [-1.0], [0.2]])
    }

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        let mut c = ModelConfig { latent_state_dim: 31, ..ModelConfig::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.latent_state_dim = 20;
        assert!(c.validate().is_err());
        let mut c = ModelConfig { task_variant: TaskVariant::Linear, task_dim: 8, ..ModelConfig::default() };
        assert!(c.validate().is_err());
        c.baseline = Baseline::ContextFree;
        c.validate().unwrap();
    }

    #[test]
    fn all_false_mask_is_open_loop() {
        let model = Model::new(small(Baseline::None, TaskVariant::Nonlinear, LossMode::Rmse), 0).unwrap();
        let (o, a) = window();
        let out = model.forward_window(&context(0.0), &o, &a, &[false; 3]).unwrap();
        let init = FactorizedBelief::initial(2, 10.0);
        assert_eq!(out.posteriors[0][0], init);
        for t in 1..3 {
            assert_eq!(out.posteriors[t][0], out.priors[t - 1][0]);
        }
    }

    #[test]
    fn context_free_ignores_context() {
        let model = Model::new(small(Baseline::ContextFree, TaskVariant::Nonlinear, LossMode::Nll), 1).unwrap();
        let (o, a) = window();
        let x = model.forward_window(&context(0.0), &o, &a, &[true, false, true]).unwrap();
        let y = model.forward_window(&context(9.0), &o, &a, &[true, false, true]).unwrap();
        assert_eq!(x.pred_mean, y.pred_mean);
        assert_eq!(x.pred_var, y.pred_var);
    }

    #[test]
    fn context_matters_with_task_path() {
        let model = Model::new(small(Baseline::None, TaskVariant::Linear, LossMode::Rmse), 2).unwrap();
        let (o, a) = window();
        let x = model.forward_window(&context(0.0), &o, &a, &[true; 3]).unwrap();
        let y = model.forward_window(&context(9.0), &o, &a, &[true; 3]).unwrap();
        assert_ne!(x.pred_mean, y.pred_mean);
    }

    #[test]
    fn rmse_and_nll_values() {
        let t = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(loss(LossMode::Rmse, &t, None, &t, &[true, true]).unwrap(), 0.0);
        let shifted = &t + 0.25;
        assert!((loss(LossMode::Rmse, &shifted, None, &t, &[true, true]).unwrap() - 0.25).abs() < 1e-15);
        let z = Tensor::zeros((1, 3));
        let one = Tensor::ones((1, 3));
        let nll = loss(LossMode::Nll, &z, Some(&one), &z, &[true]).unwrap();
        assert!((nll - 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        assert!(matches!(loss(LossMode::Rmse, &t, None, &t, &[false, false]), Err(Error::EmptyMask)));
    }

    #[test]
    fn np_baseline_runs() {
        let model = Model::new(small(Baseline::Np, TaskVariant::Nonlinear, LossMode::Nll), 3).unwrap();
        let (o, a) = window();
        let out = model.forward_window(&context(0.0), &o, &a, &[true, false, true]).unwrap();
        assert_eq!(out.pred_mean.dim(), (3, 2));
        assert!(out.pred_var.unwrap().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn batch_element_rows() {
        let x = array![[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]];
        assert_eq!(batch_element(&x, 2, 1), array![[1.0], [3.0], [5.0]]);
    }
}
