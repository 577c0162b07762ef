use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Activation, Tape, Tensor, Var};
use crate::error::Result;

/// Uniform Glorot initialization, `U(-s, s)` with `s = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_out: usize, fan_in: usize) -> Tensor {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-s..s))
}

/// Dense layer `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), glorot(rng, output, input))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros((1, output)))?;
        Ok(Self { weight, bias, input, output })
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var> {
        tape.linear(x, tape.param(store, self.weight), tape.param(store, self.bias))
    }

    /// Sets weights and bias to zero.
    pub fn zero(&self, store: &mut ParamStore) {
        store.value_mut(self.weight).fill(0.0);
        store.value_mut(self.bias).fill(0.0);
    }
}

/// Fully connected ReLU network with a linear (or activated) output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub output_activation: Option<Activation>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: &[usize],
        output: usize,
        output_activation: Option<Activation>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Linear::new(store, &format!("{name}.fc{i}"), fan_in, h, rng)?);
            fan_in = h;
        }
        layers.push(Linear::new(store, &format!("{name}.out"), fan_in, output, rng)?);
        Ok(Self { layers, output_activation })
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (last, hidden) = self.layers.split_last().expect("mlp has an output layer");
        let mut h = x;
        for layer in hidden {
            h = tape.relu(layer.forward(tape, store, h)?);
        }
        let y = last.forward(tape, store, h)?;
        Ok(match self.output_activation {
            Some(act) => tape.activation(act, y),
            None => y,
        })
    }

    pub fn output_layer(&self) -> &Linear {
        self.layers.last().expect("mlp has an output layer")
    }
}

/// Shared trunk with a mean head and a positive variance head.
#[derive(Debug, Clone)]
pub struct GaussianHead {
    pub hidden: Linear,
    pub mean: Linear,
    pub var: Linear,
}

impl GaussianHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), input, hidden, rng)?,
            mean: Linear::new(store, &format!("{name}.mean"), hidden, output, rng)?,
            var: Linear::new(store, &format!("{name}.var"), hidden, output, rng)?,
        })
    }

    /// Returns `(mean, var)`, variance through elu + 1.
    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let h = tape.relu(self.hidden.forward(tape, store, x)?);
        let mean = self.mean.forward(tape, store, h)?;
        let var = tape.elu_plus_one(self.var.forward(tape, store, h)?);
        Ok((mean, var))
    }
}
