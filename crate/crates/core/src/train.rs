//! Training loop, evaluation protocols, sliding-window inference and
//! latent-task embedding export.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{trajectory_windows, NormalizedData, Trajectory, Window, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{batch_element, Model};
use crate::nn::{clip_gradients, Adam, Tape, DEFAULT_CLIP_NORM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Probability of hiding each observation during training.
    pub imputation_rate: f64,
    /// Evaluate on the test split every this many epochs (0 disables).
    pub eval_every: usize,
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            epochs: 20,
            clip_norm: DEFAULT_CLIP_NORM,
            seed: 0,
            imputation_rate: 0.5,
            eval_every: 1,
            eval_seed: 1234,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("train.lr = {} must be positive", self.lr));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("train.batch_size and train.epochs must be positive".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("train.clip_norm = {} must be positive", self.clip_norm));
        }
        if !(0.0..1.0).contains(&self.imputation_rate) {
            return bad(format!("train.imputation_rate = {} must be in [0, 1)", self.imputation_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// One-step test RMSE in observation units, when evaluated.
    pub eval_rmse: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,eval_rmse";

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let eval = r.eval_rmse.map(|v| format!("{v:.10e}")).unwrap_or_default();
        let _ = writeln!(s, "{},{:.10e},{}", r.epoch, r.train_loss, eval);
    }
    s
}

/// Per-epoch RNG so that resuming at epoch `e` replays the same shuffles and masks.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Runs epochs `start_epoch + 1 ..= cfg.epochs`. `on_epoch` sees each
/// epoch's metrics as soon as they are known.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &mut Model,
    adam: &mut Adam,
    data: &NormalizedData,
    train_windows: &WindowedDataset,
    eval_windows: Option<&WindowedDataset>,
    cfg: &TrainConfig,
    start_epoch: usize,
    mut on_epoch: impl FnMut(&EpochMetrics, &Model, &Adam) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if train_windows.is_empty() {
        return Err(Error::InvalidValue("no training windows".into()));
    }
    let mut history = Vec::new();
    for epoch in start_epoch + 1..=cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..train_windows.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let windows: Vec<&Window> = chunk.iter().map(|&i| &train_windows.windows[i]).collect();
            let masks: Vec<bool> = (0..windows.len() * train_windows.window_len)
                .map(|_| rng.random::<f64>() >= cfg.imputation_rate)
                .collect();
            let steps = train_windows.window_len;
            let batch = data.batch(&windows, |b, t| masks[b * steps + t])?;
            let tape = Tape::new();
            let loss = model.loss_vars(&tape, &model.params, &batch)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            model.params.zero_grads();
            tape.backward(loss, &mut model.params)?;
            clip_gradients(&mut model.params, cfg.clip_norm);
            adam.step(&mut model.params);
            total += value;
            batches += 1;
        }
        let eval_rmse = match eval_windows {
            Some(w) if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 && !w.is_empty() => {
                Some(evaluate(model, data, w, Protocol::Full, cfg.eval_seed, cfg.batch_size)?.rmse[0])
            }
            _ => None,
        };
        let m = EpochMetrics { epoch, train_loss: total / batches as f64, eval_rmse };
        on_epoch(&m, model, adam)?;
        history.push(m);
    }
    Ok(history)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Every observation visible; one-step-ahead RMSE.
    Full,
    /// Half the observations hidden at random (fixed eval seed).
    Imputed50,
    /// Burn-in of `N/2` observed steps, then an open-loop rollout of `H` steps.
    MultiStep(usize),
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Full => "full",
            Protocol::Imputed50 => "imputed_50",
            Protocol::MultiStep(_) => "multi_step",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Protocol::Full),
            "imputed_50" => Ok(Protocol::Imputed50),
            other => match other.strip_prefix("multi_step") {
                Some("") => Ok(Protocol::MultiStep(50)),
                Some(rest) => rest
                    .trim_start_matches([':', '='])
                    .parse()
                    .ok()
                    .filter(|h| *h > 0)
                    .map(Protocol::MultiStep)
                    .ok_or_else(|| Error::Config(format!("bad horizon in protocol '{s}'"))),
                None => Err(Error::Config(format!("unknown protocol '{s}' (full | imputed_50 | multi_step[:H])"))),
            },
        }
    }
}

/// Result of one protocol. `rmse[h - 1]` is the RMSE at horizon `h`
/// (a single entry for the one-step protocols), in observation units.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolResult {
    pub protocol: Protocol,
    pub rmse: Vec<f64>,
    /// Per window: (trajectory, window index, task posterior mean).
    pub task_means: Vec<(usize, usize, Vec<f64>)>,
}

/// Burn-in length used by the multi-step protocol.
pub fn burn_in(window_len: usize) -> usize {
    window_len / 2
}

/// Visibility of step `t` of window `w` under `protocol`. The imputation
/// mask depends only on the window identity and the eval seed.
pub fn eval_mask(protocol: Protocol, w: &Window, eval_seed: u64) -> Vec<bool> {
    match protocol {
        Protocol::Full => vec![true; w.len],
        Protocol::Imputed50 => {
            let mut rng = ChaCha8Rng::seed_from_u64(eval_seed);
            rng.set_stream(((w.traj as u64) << 32) | w.index as u64);
            (0..w.len).map(|_| rng.random::<f64>() >= 0.5).collect()
        }
        Protocol::MultiStep(_) => (0..w.len).map(|t| t <= burn_in(w.len)).collect(),
    }
}

pub fn evaluate(
    model: &Model,
    data: &NormalizedData,
    windows: &WindowedDataset,
    protocol: Protocol,
    eval_seed: u64,
    batch_size: usize,
) -> Result<ProtocolResult> {
    if windows.is_empty() {
        return Err(Error::InvalidValue("no evaluation windows".into()));
    }
    let std = &data.stats.delta_std;
    let d_o = std.len();
    let horizons = match protocol {
        Protocol::MultiStep(h) => h,
        _ => 1,
    };
    let mut sse = vec![0.0; horizons];
    let mut count = vec![0usize; horizons];
    let mut task_means = Vec::with_capacity(windows.len());
    for chunk in windows.windows.chunks(batch_size.max(1)) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let masks: Vec<Vec<bool>> = refs.iter().map(|w| eval_mask(protocol, w, eval_seed)).collect();
        let batch = data.batch(&refs, |b, t| masks[b][t])?;
        let out = model.forward(&batch, false)?;
        for (bi, w) in refs.iter().enumerate() {
            task_means.push((w.traj, w.index, out.task_mean.row(bi).to_vec()));
            let pred = batch_element(&out.pred_mean, batch.batch, bi);
            let target = batch_element(&batch.targets, batch.batch, bi);
            let valid: Vec<bool> = (0..batch.steps).map(|t| batch.pred_mask[t * batch.batch + bi]).collect();
            match protocol {
                Protocol::Full | Protocol::Imputed50 => {
                    for t in (0..batch.steps).filter(|&t| valid[t]) {
                        for j in 0..d_o {
                            let e = (pred[[t, j]] - target[[t, j]]) * std[j];
                            sse[0] += e * e;
                        }
                        count[0] += d_o;
                    }
                }
                Protocol::MultiStep(h_max) => {
                    let b0 = burn_in(batch.steps);
                    let mut acc = vec![0.0; d_o];
                    for h in 1..=h_max {
                        let t = b0 + h - 1;
                        if t >= batch.steps || !valid[t] {
                            break;
                        }
                        for j in 0..d_o {
                            acc[j] += (pred[[t, j]] - target[[t, j]]) * std[j];
                            sse[h - 1] += acc[j] * acc[j];
                        }
                        count[h - 1] += d_o;
                    }
                }
            }
        }
    }
    let rmse = sse.iter().zip(&count).map(|(s, &c)| if c > 0 { (s / c as f64).sqrt() } else { f64::NAN }).collect();
    Ok(ProtocolResult { protocol, rmse, task_means })
}

/// Aggregate of several protocols.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub results: Vec<ProtocolResult>,
    pub wall_clock_s: f64,
}

impl EvalReport {
    pub fn run(
        model: &Model,
        data: &NormalizedData,
        windows: &WindowedDataset,
        protocols: &[Protocol],
        eval_seed: u64,
        batch_size: usize,
    ) -> Result<Self> {
        let start = Instant::now();
        let results = protocols
            .iter()
            .map(|&p| evaluate(model, data, windows, p, eval_seed, batch_size))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { results, wall_clock_s: start.elapsed().as_secs_f64() })
    }

    pub fn get(&self, p: Protocol) -> Option<&ProtocolResult> {
        self.results.iter().find(|r| r.protocol == p)
    }

    pub fn one_step_rmse(&self) -> Option<f64> {
        self.get(Protocol::Full).map(|r| r.rmse[0])
    }

    pub fn imputed_rmse(&self) -> Option<f64> {
        self.get(Protocol::Imputed50).map(|r| r.rmse[0])
    }

    /// CSV with header `protocol,horizon,rmse`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("protocol,horizon,rmse\n");
        for r in &self.results {
            for (h, v) in r.rmse.iter().enumerate() {
                let _ = writeln!(s, "{},{},{:.10e}", r.protocol.name(), h + 1, v);
            }
        }
        s
    }
}

/// One window of sliding inference.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowInference {
    pub index: usize,
    pub start: usize,
    pub hidden: Vec<f64>,
    pub task_mean: Vec<f64>,
    pub task_var: Vec<f64>,
    /// Predicted next observations `o_t + delta_t` in observation units, `N x d_o`.
    pub predictions: ndarray::Array2<f64>,
    /// One-step RMSE over the window's valid steps.
    pub rmse: f64,
}

/// Splits `traj` into windows of the model's context size and filters each
/// one with the preceding window as context. The belief is reset at every
/// window start.
pub fn sliding_inference(model: &Model, traj: &Trajectory, data: &NormalizedData) -> Result<Vec<WindowInference>> {
    let n = model.config.context_size;
    let windows = trajectory_windows(traj, n)?;
    let st = &data.stats;
    let d_o = st.delta_std.len();
    let mut out = Vec::with_capacity(windows.len());
    for w in &windows.windows {
        let batch = data.batch(&[w], |_, _| true)?;
        let f = model.forward(&batch, false)?;
        let mut predictions = ndarray::Array2::zeros((w.len, d_o));
        let (mut sse, mut cnt) = (0.0, 0usize);
        for t in 0..w.len {
            for j in 0..d_o {
                let delta = f.pred_mean[[t, j]] * st.delta_std[j] + st.delta_mean[j];
                predictions[[t, j]] = traj.obs[[w.start + t, j]] + delta;
                if batch.pred_mask[t] {
                    let e = predictions[[t, j]] - traj.obs[[w.start + t + 1, j]];
                    sse += e * e;
                    cnt += 1;
                }
            }
        }
        out.push(WindowInference {
            index: w.index,
            start: w.start,
            hidden: w.hidden.clone(),
            task_mean: f.task_mean.row(0).to_vec(),
            task_var: f.task_var.row(0).to_vec(),
            predictions,
            rmse: if cnt > 0 { (sse / cnt as f64).sqrt() } else { f64::NAN },
        });
    }
    Ok(out)
}

pub fn inference_csv(rows: &[WindowInference]) -> String {
    let d = rows.first().map_or(0, |r| r.task_mean.len());
    let h = rows.first().map_or(0, |r| r.hidden.len());
    let mut s = String::from("window,start");
    (0..h).for_each(|i| s.push_str(&format!(",hidden_{i}")));
    s.push_str(",rmse");
    (0..d).for_each(|i| s.push_str(&format!(",mu_{i}")));
    (0..d).for_each(|i| s.push_str(&format!(",var_{i}")));
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{}", r.index, r.start);
        r.hidden.iter().for_each(|v| s.push_str(&format!(",{v}")));
        let _ = write!(s, ",{:.10e}", r.rmse);
        r.task_mean.iter().chain(&r.task_var).for_each(|v| s.push_str(&format!(",{v:.10e}")));
        s.push('\n');
    }
    s
}

/// One latent-task embedding with its ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub traj: usize,
    pub window: usize,
    pub hidden: f64,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub rows: Vec<EmbeddingRow>,
    /// `(pc1, pc2)` per row.
    pub projection: Vec<[f64; 2]>,
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
}

const POWER_ITERS: usize = 500;

/// Leading eigenvector of a symmetric PSD matrix by power iteration.
fn power_iteration(cov: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let d = cov.len();
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.01 * i as f64).collect();
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let n0 = norm(&v);
    v.iter_mut().for_each(|a| *a /= n0);
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERS {
        let w: Vec<f64> = cov.iter().map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        let n = norm(&w);
        if n < 1e-300 {
            return (vec![0.0; d], 0.0);
        }
        lambda = n;
        v = w.into_iter().map(|a| a / n).collect();
    }
    // Sign convention: largest-magnitude coordinate positive.
    if let Some(i) = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())) {
        if v[i] < 0.0 {
            v.iter_mut().for_each(|a| *a = -*a);
        }
    }
    (v, lambda)
}

/// Two-component PCA of the embedding means.
pub fn export_embeddings(rows: Vec<EmbeddingRow>) -> Embeddings {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.mean.len());
    let mut mu = vec![0.0; d];
    for r in &rows {
        mu.iter_mut().zip(&r.mean).for_each(|(m, x)| *m += x / n as f64);
    }
    let centered: Vec<Vec<f64>> = rows.iter().map(|r| r.mean.iter().zip(&mu).map(|(x, m)| x - m).collect()).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for c in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += c[i] * c[j] / n.max(1) as f64;
            }
        }
    }
    let (v1, l1) = power_iteration(&cov);
    for i in 0..d {
        for j in 0..d {
            cov[i][j] -= l1 * v1[i] * v1[j];
        }
    }
    let (v2, l2) = power_iteration(&cov);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let projection = centered.iter().map(|c| [dot(c, &v1), dot(c, &v2)]).collect();
    Embeddings { rows, projection, components: [v1, v2], explained_variance: [l1, l2] }
}

impl Embeddings {
    /// CSV with header `traj,window,hidden,mu_0..mu_{d-1},pc1,pc2`.
    pub fn to_csv(&self) -> String {
        let d = self.rows.first().map_or(0, |r| r.mean.len());
        let mut s = String::from("traj,window,hidden");
        (0..d).for_each(|i| s.push_str(&format!(",mu_{i}")));
        s.push_str(",pc1,pc2\n");
        for (r, p) in self.rows.iter().zip(&self.projection) {
            let _ = write!(s, "{},{},{}", r.traj, r.window, r.hidden);
            r.mean.iter().for_each(|v| s.push_str(&format!(",{v:.10e}")));
            let _ = writeln!(s, ",{:.10e},{:.10e}", p[0], p[1]);
        }
        s
    }
}
