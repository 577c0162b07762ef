//! Changing-dynamics simulators, normalization, windowing and the on-disk
//! dataset format.
//!
//! Every trajectory is split into segments of `segment_len` steps; each
//! segment draws fresh hidden parameters (train or test distribution,
//! depending on which split the trajectory belongs to) and keeps them fixed.
//! Windows of length `N` are paired with the `N` transitions right before
//! them as context.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::binio::{read_f64s, write_f64s};
use crate::context::{ContextSet, Transition};
use crate::error::{Error, Result};
use crate::model::Batch;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const STD_FLOOR: f64 = 1e-6;
pub const DIVERGENCE_BOUND: f64 = 1e6;
const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    /// `x'' = (u - k x - c x') / mass`, observing the position.
    SpringMass,
    /// `th'' = (u - c th' - mass g L sin th) / (mass L^2)`, observing `(sin th, cos th)`.
    Pendulum,
}

impl System {
    /// Hidden parameter names, in storage order.
    pub fn param_names(self) -> [&'static str; 3] {
        match self {
            System::SpringMass => ["stiffness", "damping", "mass"],
            System::Pendulum => ["length", "mass", "damping"],
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            System::SpringMass => 1,
            System::Pendulum => 2,
        }
    }

    pub fn action_dim(self) -> usize {
        1
    }

    fn accel(self, p: &[f64], pos: f64, vel: f64, u: f64) -> f64 {
        match self {
            System::SpringMass => (u - p[0] * pos - p[1] * vel) / p[2],
            System::Pendulum => {
                let (len, mass, damping) = (p[0], p[1], p[2]);
                (u - damping * vel - mass * GRAVITY * len * pos.sin()) / (mass * len * len)
            }
        }
    }

    pub fn observe(self, state: [f64; 2]) -> Vec<f64> {
        match self {
            System::SpringMass => vec![state[0]],
            System::Pendulum => vec![state[0].sin(), state[0].cos()],
        }
    }

    /// Mechanical energy (spring or pendulum), used for dissipation checks.
    pub fn energy(self, p: &[f64], state: [f64; 2]) -> f64 {
        match self {
            System::SpringMass => 0.5 * p[2] * state[1] * state[1] + 0.5 * p[0] * state[0] * state[0],
            System::Pendulum => {
                let (len, mass) = (p[0], p[1]);
                0.5 * mass * len * len * state[1] * state[1] + mass * GRAVITY * len * (1.0 - state[0].cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionPolicy {
    /// Low-pass filtered Gaussian noise, cutoff about 1 Hz.
    RandomSmooth,
    /// Sum of three sinusoids with random frequency and phase.
    SinusoidMix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamDist {
    Uniform { low: f64, high: f64 },
    Choice { values: Vec<f64> },
    Fixed { value: f64 },
}

impl ParamDist {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            ParamDist::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
            ParamDist::Choice { values } => !values.is_empty() && values.iter().all(|v| v.is_finite()),
            ParamDist::Fixed { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("sim.params.{name}: empty or non-finite range")))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ParamDist::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            ParamDist::Choice { values } => values[rng.random_range(0..values.len())],
            ParamDist::Fixed { value } => *value,
        }
    }

    /// Whether `v` could be drawn from this distribution.
    pub fn contains(&self, v: f64) -> bool {
        match self {
            ParamDist::Uniform { low, high } => *low <= v && v <= *high,
            ParamDist::Choice { values } => values.contains(&v),
            ParamDist::Fixed { value } => *value == v,
        }
    }

    fn min_value(&self) -> f64 {
        match self {
            ParamDist::Uniform { low, .. } => *low,
            ParamDist::Choice { values } => values.iter().copied().fold(f64::INFINITY, f64::min),
            ParamDist::Fixed { value } => *value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRange {
    pub train: ParamDist,
    pub test: ParamDist,
}

impl ParamRange {
    pub fn same(d: ParamDist) -> Self {
        Self { train: d.clone(), test: d }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSpec {
    pub system: System,
    pub dt: f64,
    /// RK4 substeps per sample.
    pub substeps: usize,
    pub traj_len: usize,
    pub n_traj: usize,
    /// The first `n_train` trajectories form the training split.
    pub n_train: usize,
    pub segment_len: usize,
    pub obs_noise_std: f64,
    pub action_policy: ActionPolicy,
    /// Standard deviation of the excitation signal.
    pub action_scale: f64,
    pub seed: u64,
    pub params: BTreeMap<String, ParamRange>,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self::spring_mass_discrete()
    }
}

impl SimSpec {
    /// Spring-mass with stiffness from {2,4,6,8} for training and {3,7} for test.
    pub fn spring_mass_discrete() -> Self {
        let mut params = BTreeMap::new();
        params.insert(
            "stiffness".to_string(),
            ParamRange {
                train: ParamDist::Choice { values: vec![2.0, 4.0, 6.0, 8.0] },
                test: ParamDist::Choice { values: vec![3.0, 7.0] },
            },
        );
        params.insert("damping".to_string(), ParamRange::same(ParamDist::Fixed { value: 0.5 }));
        params.insert("mass".to_string(), ParamRange::same(ParamDist::Fixed { value: 1.0 }));
        Self {
            system: System::SpringMass,
            dt: 0.01,
            substeps: 1,
            traj_len: 900,
            n_traj: 50,
            n_train: 40,
            segment_len: 450,
            obs_noise_std: 0.01,
            action_policy: ActionPolicy::RandomSmooth,
            action_scale: 1.0,
            seed: 0,
            params,
        }
    }

    /// Pendulum with continuous length and mass ranges.
    pub fn pendulum() -> Self {
        let mut params = BTreeMap::new();
        params.insert("length".to_string(), ParamRange::same(ParamDist::Uniform { low: 0.5, high: 2.0 }));
        params.insert("mass".to_string(), ParamRange::same(ParamDist::Uniform { low: 0.5, high: 3.0 }));
        params.insert("damping".to_string(), ParamRange::same(ParamDist::Fixed { value: 0.2 }));
        Self { system: System::Pendulum, action_scale: 2.0, params, ..Self::spring_mass_discrete() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("sim.dt = {} must be positive", self.dt));
        }
        if self.substeps == 0 {
            return bad("sim.substeps must be at least 1".into());
        }
        if self.traj_len < 2 {
            return bad(format!("sim.traj_len = {} must be at least 2", self.traj_len));
        }
        if self.segment_len == 0 || self.segment_len > self.traj_len {
            return bad(format!("sim.segment_len = {} must be in 1..=traj_len ({})", self.segment_len, self.traj_len));
        }
        if self.n_traj == 0 || self.n_train == 0 || self.n_train > self.n_traj {
            return bad(format!("sim.n_train = {} must be in 1..=n_traj ({})", self.n_train, self.n_traj));
        }
        if !(self.obs_noise_std >= 0.0) || !(self.action_scale >= 0.0) {
            return bad("sim.obs_noise_std and sim.action_scale must be non-negative".into());
        }
        for name in self.params.keys() {
            if !self.system.param_names().contains(&name.as_str()) {
                return bad(format!("sim.params.{name} is not a parameter of {:?}", self.system));
            }
        }
        for name in self.system.param_names() {
            let range = self.params.get(name).ok_or_else(|| Error::Config(format!("sim.params.{name} is missing")))?;
            range.train.validate(name)?;
            range.test.validate(name)?;
            let positive = match (self.system, name) {
                (System::SpringMass, "damping") | (System::Pendulum, "damping") => None,
                _ => Some(()),
            };
            if positive.is_some() && (range.train.min_value() <= 0.0 || range.test.min_value() <= 0.0) {
                return bad(format!("sim.params.{name} must be strictly positive"));
            }
        }
        Ok(())
    }

    fn range(&self, name: &str, train: bool) -> &ParamDist {
        let r = &self.params[name];
        if train {
            &r.train
        } else {
            &r.test
        }
    }
}

/// One RK4 step with the action held constant.
fn rk4(system: System, p: &[f64], s: [f64; 2], u: f64, h: f64) -> [f64; 2] {
    let f = |x: [f64; 2]| [x[1], system.accel(p, x[0], x[1], u)];
    let k1 = f(s);
    let k2 = f([s[0] + 0.5 * h * k1[0], s[1] + 0.5 * h * k1[1]]);
    let k3 = f([s[0] + 0.5 * h * k2[0], s[1] + 0.5 * h * k2[1]]);
    let k4 = f([s[0] + h * k3[0], s[1] + h * k3[1]]);
    [
        s[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        s[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Integrates from `state0` applying `actions[t]` over `[t, t+1)` with
/// per-step parameters `params[t]`. Returns `actions.len() + 1` states.
pub fn integrate(
    system: System,
    params: &[Vec<f64>],
    state0: [f64; 2],
    actions: &[f64],
    dt: f64,
    substeps: usize,
) -> Result<Vec<[f64; 2]>> {
    if params.len() != actions.len() {
        return Err(Error::DimensionMismatch(format!("{} parameter rows for {} actions", params.len(), actions.len())));
    }
    let h = dt / substeps.max(1) as f64;
    let mut states = Vec::with_capacity(actions.len() + 1);
    let mut s = state0;
    states.push(s);
    for (t, (&u, p)) in actions.iter().zip(params).enumerate() {
        for _ in 0..substeps.max(1) {
            s = rk4(system, p, s, u, h);
        }
        if !(s[0].abs() <= DIVERGENCE_BOUND && s[1].abs() <= DIVERGENCE_BOUND) {
            return Err(Error::IntegrationDiverged { trajectory: 0, step: t + 1 });
        }
        states.push(s);
    }
    Ok(states)
}

fn excitation<R: Rng + ?Sized>(spec: &SimSpec, rng: &mut R) -> Vec<f64> {
    let n = spec.traj_len;
    match spec.action_policy {
        ActionPolicy::RandomSmooth => {
            let alpha = (-2.0 * std::f64::consts::PI * spec.dt).exp();
            // Rescale so the stationary standard deviation is `action_scale`.
            let gain = spec.action_scale * ((1.0 + alpha) / (1.0 - alpha)).sqrt();
            let mut u = spec.action_scale * rng.sample::<f64, _>(StandardNormal);
            (0..n)
                .map(|_| {
                    let e: f64 = rng.sample(StandardNormal);
                    u = alpha * u + (1.0 - alpha) * gain * e;
                    u
                })
                .collect()
        }
        ActionPolicy::SinusoidMix => {
            let waves: Vec<(f64, f64)> = (0..3)
                .map(|_| (0.1 + 0.9 * rng.random::<f64>(), 2.0 * std::f64::consts::PI * rng.random::<f64>()))
                .collect();
            let amp = spec.action_scale * (2.0f64 / 3.0).sqrt();
            (0..n)
                .map(|t| {
                    let time = t as f64 * spec.dt;
                    waves.iter().map(|(f, ph)| amp * (2.0 * std::f64::consts::PI * f * time + ph).sin()).sum()
                })
                .collect()
        }
    }
}

/// Raw simulator output. Arrays are `[n_traj, traj_len, dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub spec: SimSpec,
    pub obs: Array3<f64>,
    pub actions: Array3<f64>,
    pub hidden: Array3<f64>,
    pub stats: NormStats,
}

/// Per-dimension mean and standard deviation of observations, actions and
/// one-step deltas, computed on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
    pub action_mean: Vec<f64>,
    pub action_std: Vec<f64>,
    pub delta_mean: Vec<f64>,
    pub delta_std: Vec<f64>,
}

fn mean_std<'a>(rows: impl Iterator<Item = ndarray::ArrayView1<'a, f64>>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let rows: Vec<_> = rows.collect();
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in &rows {
        for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

impl NormStats {
    /// Statistics over the first `n_train` trajectories.
    pub fn compute(obs: &Array3<f64>, actions: &Array3<f64>, n_train: usize) -> Self {
        let (d_o, d_a) = (obs.dim().2, actions.dim().2);
        let train_obs = obs.slice(ndarray::s![..n_train, .., ..]);
        let train_act = actions.slice(ndarray::s![..n_train, .., ..]);
        let (obs_mean, obs_std) = mean_std(train_obs.lanes(Axis(2)).into_iter(), d_o);
        let (action_mean, action_std) = mean_std(train_act.lanes(Axis(2)).into_iter(), d_a);
        let deltas = &train_obs.slice(ndarray::s![.., 1.., ..]) - &train_obs.slice(ndarray::s![.., ..-1, ..]);
        let (delta_mean, delta_std) = mean_std(deltas.lanes(Axis(2)).into_iter(), d_o);
        Self { obs_mean, obs_std, action_mean, action_std, delta_mean, delta_std }
    }
}

fn standardize(x: &mut Array3<f64>, mean: &[f64], std: &[f64]) {
    for mut lane in x.lanes_mut(Axis(2)) {
        for ((v, m), s) in lane.iter_mut().zip(mean).zip(std) {
            *v = (*v - m) / s;
        }
    }
}

/// Hidden-parameter schedule for one trajectory: one row per step,
/// resampled at every multiple of `segment_len`.
fn sample_schedule<R: Rng + ?Sized>(spec: &SimSpec, train: bool, rng: &mut R) -> Vec<Vec<f64>> {
    let names = spec.system.param_names();
    let mut rows = Vec::with_capacity(spec.traj_len);
    let mut current = Vec::new();
    for t in 0..spec.traj_len {
        if t % spec.segment_len == 0 {
            current = names.iter().map(|n| spec.range(n, train).sample(rng)).collect();
        }
        rows.push(current.clone());
    }
    rows
}

/// One simulated trajectory: `obs` and `actions` are `traj_len x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub hidden: Array2<f64>,
}

/// Simulates one trajectory with an explicit per-step parameter schedule,
/// drawing initial state, excitation and noise from stream `stream` of the
/// spec seed.
pub fn simulate_with_schedule(spec: &SimSpec, stream: u64, schedule: &[Vec<f64>]) -> Result<Trajectory> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    simulate_inner(spec, stream as usize, schedule, &mut rng)
}

fn simulate_inner(spec: &SimSpec, index: usize, schedule: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Result<Trajectory> {
    let t_len = spec.traj_len;
    if schedule.len() != t_len || schedule.iter().any(|r| r.len() != 3) {
        return Err(Error::DimensionMismatch(format!("schedule needs {t_len} rows of 3 parameters")));
    }
    let state0 = match spec.system {
        System::SpringMass => [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        System::Pendulum => [rng.random_range(-std::f64::consts::PI..std::f64::consts::PI), rng.random_range(-1.0..1.0)],
    };
    let u = excitation(spec, rng);
    // The last action has no successor state; integrate only the first t_len - 1.
    let states = integrate(spec.system, &schedule[..t_len - 1], state0, &u[..t_len - 1], spec.dt, spec.substeps)
        .map_err(|e| match e {
            Error::IntegrationDiverged { step, .. } => Error::IntegrationDiverged { trajectory: index, step },
            other => other,
        })?;
    let d_o = spec.system.obs_dim();
    let mut obs = Array2::zeros((t_len, d_o));
    for (t, s) in states.iter().enumerate() {
        for (j, v) in spec.system.observe(*s).into_iter().enumerate() {
            let noise: f64 = rng.sample(StandardNormal);
            obs[[t, j]] = v + spec.obs_noise_std * noise;
        }
    }
    let actions = Array2::from_shape_vec((t_len, 1), u).expect("action length");
    let hidden = Array2::from_shape_fn((t_len, 3), |(t, j)| schedule[t][j]);
    Ok(Trajectory { obs, actions, hidden })
}

/// Generates the full dataset; trajectory `i` uses stream `i` of the seed.
pub fn simulate(spec: &SimSpec) -> Result<TrajectoryDataset> {
    spec.validate()?;
    let (n, t_len, d_o, d_a) = (spec.n_traj, spec.traj_len, spec.system.obs_dim(), spec.system.action_dim());
    let mut obs = Array3::zeros((n, t_len, d_o));
    let mut actions = Array3::zeros((n, t_len, d_a));
    let mut hidden = Array3::zeros((n, t_len, 3));
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        let schedule = sample_schedule(spec, i < spec.n_train, &mut rng);
        let tr = simulate_inner(spec, i, &schedule, &mut rng)?;
        obs.index_axis_mut(Axis(0), i).assign(&tr.obs);
        actions.index_axis_mut(Axis(0), i).assign(&tr.actions);
        hidden.index_axis_mut(Axis(0), i).assign(&tr.hidden);
    }
    let stats = NormStats::compute(&obs, &actions, spec.n_train);
    Ok(TrajectoryDataset { spec: spec.clone(), obs, actions, hidden, stats })
}

impl TrajectoryDataset {
    /// Trajectory `i` as a standalone value.
    pub fn trajectory(&self, i: usize) -> Trajectory {
        Trajectory {
            obs: self.obs.index_axis(Axis(0), i).to_owned(),
            actions: self.actions.index_axis(Axis(0), i).to_owned(),
            hidden: self.hidden.index_axis(Axis(0), i).to_owned(),
        }
    }

    pub fn n_traj(&self) -> usize {
        self.obs.dim().0
    }

    pub fn traj_len(&self) -> usize {
        self.obs.dim().1
    }

    pub fn obs_dim(&self) -> usize {
        self.obs.dim().2
    }

    pub fn action_dim(&self) -> usize {
        self.actions.dim().2
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.dim().2
    }

    pub fn is_train(&self, traj: usize) -> bool {
        traj < self.spec.n_train
    }

    /// Standardized copy: observations and actions with their own stats,
    /// deltas `o_{t+1} - o_t` (length `traj_len - 1`) with delta stats.
    pub fn normalized(&self) -> NormalizedData {
        let st = &self.stats;
        let deltas = &self.obs.slice(ndarray::s![.., 1.., ..]) - &self.obs.slice(ndarray::s![.., ..-1, ..]);
        let mut deltas = deltas.to_owned();
        let mut obs = self.obs.clone();
        let mut actions = self.actions.clone();
        standardize(&mut obs, &st.obs_mean, &st.obs_std);
        standardize(&mut actions, &st.action_mean, &st.action_std);
        standardize(&mut deltas, &st.delta_mean, &st.delta_std);
        NormalizedData { obs, actions, deltas, stats: st.clone() }
    }
}

impl Trajectory {
    /// Standardizes one trajectory with existing statistics.
    pub fn normalized(&self, stats: &NormStats) -> NormalizedData {
        let lift = |a: &Array2<f64>| a.clone().insert_axis(Axis(0));
        let obs = lift(&self.obs);
        let deltas = (&obs.slice(ndarray::s![.., 1.., ..]) - &obs.slice(ndarray::s![.., ..-1, ..])).to_owned();
        let (mut obs, mut actions, mut deltas) = (obs, lift(&self.actions), deltas);
        standardize(&mut obs, &stats.obs_mean, &stats.obs_std);
        standardize(&mut actions, &stats.action_mean, &stats.action_std);
        standardize(&mut deltas, &stats.delta_mean, &stats.delta_std);
        NormalizedData { obs, actions, deltas, stats: stats.clone() }
    }
}

/// Standardized arrays ready for batching.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedData {
    pub obs: Array3<f64>,
    pub actions: Array3<f64>,
    /// `[n_traj, traj_len - 1, d_o]`.
    pub deltas: Array3<f64>,
    pub stats: NormStats,
}

/// A target window `[start, start + len)` of trajectory `traj`, paired with
/// the `context_len` transitions immediately before it.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub traj: usize,
    pub index: usize,
    pub start: usize,
    pub len: usize,
    pub context_len: usize,
    /// Hidden parameters at the first target step.
    pub hidden: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub window_len: usize,
    pub windows: Vec<Window>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Windows whose trajectory satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> Self {
        Self { window_len: self.window_len, windows: self.windows.iter().filter(|w| keep(w.traj)).cloned().collect() }
    }
}

/// Non-overlapping windows per trajectory; the first window of each
/// trajectory has no preceding context and is dropped.
pub fn build_windows(ds: &TrajectoryDataset, n: usize) -> Result<WindowedDataset> {
    windows_for(ds.n_traj(), ds.traj_len(), n, |traj, t| ds.hidden.slice(ndarray::s![traj, t, ..]).to_vec())
}

fn windows_for(
    n_traj: usize,
    traj_len: usize,
    n: usize,
    hidden: impl Fn(usize, usize) -> Vec<f64>,
) -> Result<WindowedDataset> {
    if n == 0 || traj_len < 2 * n {
        return Err(Error::TrajectoryTooShort { len: traj_len, window: n, needed: 2 * n });
    }
    let per = traj_len / n;
    let mut windows = Vec::with_capacity(n_traj * (per - 1));
    for traj in 0..n_traj {
        for index in 1..per {
            let start = index * n;
            windows.push(Window { traj, index, start, len: n, context_len: n, hidden: hidden(traj, start) });
        }
    }
    Ok(WindowedDataset { window_len: n, windows })
}

/// Windows of a single trajectory.
pub fn trajectory_windows(traj: &Trajectory, n: usize) -> Result<WindowedDataset> {
    windows_for(1, traj.obs.nrows(), n, |_, t| traj.hidden.row(t).to_vec())
}

impl NormalizedData {
    pub fn obs_dim(&self) -> usize {
        self.obs.dim().2
    }

    pub fn action_dim(&self) -> usize {
        self.actions.dim().2
    }

    pub fn traj_len(&self) -> usize {
        self.obs.dim().1
    }

    /// Normalized context set of a window.
    pub fn context(&self, w: &Window) -> ContextSet {
        let tuples = (w.start - w.context_len..w.start)
            .map(|t| Transition {
                obs: self.obs.slice(ndarray::s![w.traj, t, ..]).to_vec(),
                action: self.actions.slice(ndarray::s![w.traj, t, ..]).to_vec(),
                next_obs: self.obs.slice(ndarray::s![w.traj, t + 1, ..]).to_vec(),
            })
            .collect();
        ContextSet::new(self.obs_dim(), self.action_dim(), tuples).expect("dataset dims are consistent")
    }

    /// Assembles a time-major batch. `obs_mask(b, t)` decides which
    /// observations are visible. Steps without a successor observation are
    /// excluded from the prediction mask.
    pub fn batch(&self, windows: &[&Window], obs_mask: impl Fn(usize, usize) -> bool) -> Result<Batch> {
        let b = windows.len();
        let steps = windows.first().map_or(0, |w| w.len);
        let ctx_len = windows.first().map_or(0, |w| w.context_len);
        if b == 0 || windows.iter().any(|w| w.len != steps || w.context_len != ctx_len) {
            return Err(Error::DimensionMismatch("batch windows must be non-empty with equal lengths".into()));
        }
        let (d_o, d_a) = (self.obs_dim(), self.action_dim());
        let t_len = self.traj_len();
        let mut context = Array2::zeros((b * ctx_len, 2 * d_o + d_a));
        let mut obs = Array2::zeros((steps * b, d_o));
        let mut actions = Array2::zeros((steps * b, d_a));
        let mut targets = Array2::zeros((steps * b, d_o));
        let mut mask = vec![false; steps * b];
        let mut pred_mask = vec![false; steps * b];
        for (bi, w) in windows.iter().enumerate() {
            for (k, t) in (w.start - ctx_len..w.start).enumerate() {
                let mut row = context.row_mut(bi * ctx_len + k);
                row.slice_mut(ndarray::s![..d_o]).assign(&self.obs.slice(ndarray::s![w.traj, t, ..]));
                row.slice_mut(ndarray::s![d_o..d_o + d_a]).assign(&self.actions.slice(ndarray::s![w.traj, t, ..]));
                row.slice_mut(ndarray::s![d_o + d_a..]).assign(&self.obs.slice(ndarray::s![w.traj, t + 1, ..]));
            }
            for k in 0..steps {
                let t = w.start + k;
                let r = k * b + bi;
                obs.row_mut(r).assign(&self.obs.slice(ndarray::s![w.traj, t, ..]));
                actions.row_mut(r).assign(&self.actions.slice(ndarray::s![w.traj, t, ..]));
                if t + 1 < t_len {
                    targets.row_mut(r).assign(&self.deltas.slice(ndarray::s![w.traj, t, ..]));
                    pred_mask[r] = true;
                }
                mask[r] = obs_mask(bi, k);
            }
        }
        Ok(Batch { batch: b, steps, context_len: ctx_len, context, obs, actions, targets, obs_mask: mask, pred_mask })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub dtype: String,
    pub spec: SimSpec,
    pub n_traj: usize,
    pub n_train: usize,
    pub traj_len: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden_dim: usize,
    pub hidden_names: Vec<String>,
    pub stats: NormStats,
}

pub fn write_dataset(ds: &TrajectoryDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        dtype: "f64le".into(),
        spec: ds.spec.clone(),
        n_traj: ds.n_traj(),
        n_train: ds.spec.n_train,
        traj_len: ds.traj_len(),
        obs_dim: ds.obs_dim(),
        action_dim: ds.action_dim(),
        hidden_dim: ds.hidden_dim(),
        hidden_names: ds.spec.system.param_names().iter().map(|s| s.to_string()).collect(),
        stats: ds.stats.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    let path = dir.join("manifest.json");
    fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    let flat = |a: &Array3<f64>| a.iter().copied().collect::<Vec<_>>();
    write_f64s(&dir.join("obs.bin"), &flat(&ds.obs))?;
    write_f64s(&dir.join("actions.bin"), &flat(&ds.actions))?;
    write_f64s(&dir.join("hidden.bin"), &flat(&ds.hidden))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let m: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::ManifestMismatch(format!("{}: {e}", path.display())))?;
    if m.format_version != DATASET_FORMAT_VERSION || m.dtype != "f64le" {
        return Err(Error::ManifestMismatch(format!(
            "format version {} / dtype {} (expected {DATASET_FORMAT_VERSION} / f64le)",
            m.format_version, m.dtype
        )));
    }
    let consistent = m.obs_dim == m.spec.system.obs_dim()
        && m.action_dim == m.spec.system.action_dim()
        && m.hidden_dim == 3
        && m.n_traj == m.spec.n_traj
        && m.n_train == m.spec.n_train
        && m.traj_len == m.spec.traj_len
        && m.stats.obs_mean.len() == m.obs_dim
        && m.stats.obs_std.len() == m.obs_dim
        && m.stats.delta_mean.len() == m.obs_dim
        && m.stats.delta_std.len() == m.obs_dim
        && m.stats.action_mean.len() == m.action_dim
        && m.stats.action_std.len() == m.action_dim;
    if !consistent {
        return Err(Error::ManifestMismatch("dims, counts or stats disagree with the embedded spec".into()));
    }
    Ok(m)
}

pub fn read_dataset(dir: &Path) -> Result<TrajectoryDataset> {
    let m = read_manifest(dir)?;
    let load = |name: &str, d: usize| -> Result<Array3<f64>> {
        let v = read_f64s(&dir.join(name), m.n_traj * m.traj_len * d)?;
        Ok(Array3::from_shape_vec((m.n_traj, m.traj_len, d), v).expect("length checked"))
    };
    Ok(TrajectoryDataset {
        obs: load("obs.bin", m.obs_dim)?,
        actions: load("actions.bin", m.action_dim)?,
        hidden: load("hidden.bin", m.hidden_dim)?,
        spec: m.spec,
        stats: m.stats,
    })
}
