//! Dense reference implementations shared by the integration tests. Nothing
//! here calls into the library's inference code; parameters are read from
//! the store and pushed through plain nalgebra arithmetic.
#![allow(dead_code)]

use hiprssm::cell::{TaskTransform, TransitionModel};
use hiprssm::gaussian::FactorizedBelief;
use hiprssm::nn::{Activation, Linear, Mlp, ParamStore};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `||a - b|| / ||b||` (absolute when `b` is zero).
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nb = norm(b);
    if nb == 0.0 {
        norm(&diff)
    } else {
        norm(&diff) / nb
    }
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    rel_err(a.as_slice(), b.as_slice())
}

pub fn uniform_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Random valid factorized belief (per-pair correlation below 0.9).
pub fn random_belief<R: Rng>(rng: &mut R, m: usize) -> FactorizedBelief {
    let mean = uniform_vec(rng, 2 * m, -2.0, 2.0);
    let var_u = uniform_vec(rng, m, 0.1, 3.0);
    let var_l = uniform_vec(rng, m, 0.1, 3.0);
    let cov_s = (0..m).map(|i| rng.random_range(-0.9..0.9) * (var_u[i] * var_l[i]).sqrt()).collect();
    FactorizedBelief::new(mean, var_u, var_l, cov_s).unwrap()
}

/// Dense covariance of a factorized belief, built entry by entry.
pub fn dense_cov(b: &FactorizedBelief) -> DMatrix<f64> {
    let m = b.m();
    let mut c = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        c[(i, i)] = b.var_u()[i];
        c[(m + i, m + i)] = b.var_l()[i];
        c[(i, m + i)] = b.cov_s()[i];
        c[(m + i, i)] = b.cov_s()[i];
    }
    c
}

/// `[diag(a11) diag(a12); diag(a21) diag(a22)]`.
pub fn block_matrix(a11: &[f64], a12: &[f64], a21: &[f64], a22: &[f64]) -> DMatrix<f64> {
    let m = a11.len();
    let mut a = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        a[(i, i)] = a11[i];
        a[(i, m + i)] = a12[i];
        a[(m + i, i)] = a21[i];
        a[(m + i, m + i)] = a22[i];
    }
    a
}

pub fn h_matrix(m: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(m, 2 * m);
    for i in 0..m {
        h[(i, i)] = 1.0;
    }
    h
}

/// Textbook Kalman correction, innovation solved through Cholesky.
pub fn kalman_update(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let s = h * cov * h.transpose() + r;
    let chol = s.cholesky().expect("innovation covariance is positive definite");
    // K = P H^T S^{-1}  <=>  S K^T = H P
    let k = chol.solve(&(h * cov)).transpose();
    let mean = mean + &k * (y - h * mean);
    let n = cov.nrows();
    let cov = (DMatrix::identity(n, n) - &k * h) * cov;
    let cov = (&cov + cov.transpose()) * 0.5;
    (mean, cov)
}

pub fn elu1(x: f64) -> f64 {
    if x >= 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn row(store: &ParamStore, id: hiprssm::nn::ParamId) -> Vec<f64> {
    store.value(id).iter().copied().collect()
}

pub fn linear_forward(store: &ParamStore, l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = store.value(l.weight);
    let b = store.value(l.bias);
    (0..l.output).map(|o| b[[0, o]] + (0..l.input).map(|i| w[[o, i]] * x[i]).sum::<f64>()).collect()
}

pub fn mlp_forward(store: &ParamStore, mlp: &Mlp, x: &[f64]) -> Vec<f64> {
    let (last, hidden) = mlp.layers.split_last().unwrap();
    let mut h = x.to_vec();
    for l in hidden {
        h = linear_forward(store, l, &h).into_iter().map(|v| v.max(0.0)).collect();
    }
    let y = linear_forward(store, last, &h);
    match mlp.output_activation {
        None => y,
        Some(Activation::EluPlusOne) => y.into_iter().map(elu1).collect(),
        Some(other) => panic!("unexpected output activation {other:?}"),
    }
}

/// Convex combination of `K x m` bases under weights `beta`.
fn mix(store: &ParamStore, id: hiprssm::nn::ParamId, beta: &[f64]) -> Vec<f64> {
    let b = store.value(id);
    (0..b.ncols()).map(|j| (0..b.nrows()).map(|k| beta[k] * b[[k, j]]).sum()).collect()
}

/// Dense transition matrix at posterior mean `z`.
pub fn transition_matrix(store: &ParamStore, tm: &TransitionModel, z: &[f64]) -> DMatrix<f64> {
    let beta = softmax(&linear_forward(store, &tm.coefficients, z));
    let [a11, a12, a21, a22] = tm.basis.map(|id| mix(store, id, &beta));
    block_matrix(&a11, &a12, &a21, &a22)
}

/// Task mean and covariance contributions, dense.
pub fn task_contribution(
    store: &ParamStore,
    tt: &TaskTransform,
    task_mean: &[f64],
    task_var: &[f64],
    z: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let c = match tt {
        TaskTransform::Nonlinear { mean_net, var_net } => {
            let mu = mlp_forward(store, mean_net, task_mean);
            let var = mlp_forward(store, var_net, task_var);
            return (DVector::from_vec(mu), DMatrix::from_diagonal(&DVector::from_vec(var)));
        }
        TaskTransform::Linear { c } => {
            let [c11, c12, c21, c22] = c.map(|id| row(store, id));
            block_matrix(&c11, &c12, &c21, &c22)
        }
        TaskTransform::LocallyLinear { bases, coefficients } => {
            let beta = softmax(&linear_forward(store, coefficients, z));
            let [c11, c12, c21, c22] = bases.map(|id| mix(store, id, &beta));
            block_matrix(&c11, &c12, &c21, &c22)
        }
    };
    let mean = &c * DVector::from_column_slice(task_mean);
    let cov = &c * DMatrix::from_diagonal(&DVector::from_column_slice(task_var)) * c.transpose();
    (mean, cov)
}

/// Dense prior `(A mu + b(a) + task mean, A Sigma A^T + task cov + Sigma_trans)`.
pub fn dense_time_update(
    store: &ParamStore,
    tm: &TransitionModel,
    tt: Option<&TaskTransform>,
    belief: &FactorizedBelief,
    action: &[f64],
    task_mean: &[f64],
    task_var: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let z = belief.mean();
    let a = transition_matrix(store, tm, z);
    let b = DVector::from_vec(mlp_forward(store, &tm.control, action));
    let noise: Vec<f64> = row(store, tm.trans_noise).into_iter().map(elu1).collect();
    let mut mean = &a * DVector::from_column_slice(z) + b;
    let mut cov = &a * dense_cov(belief) * a.transpose() + DMatrix::from_diagonal(&DVector::from_vec(noise));
    if let Some(tt) = tt {
        let (tm_, tc) = task_contribution(store, tt, task_mean, task_var, z);
        mean += tm_;
        cov += tc;
    }
    (mean, cov)
}

/// Perturbs every parameter by `U(-s, s)`.
pub fn jitter<R: Rng>(store: &mut ParamStore, rng: &mut R, s: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.value_mut(id).mapv_inplace(|v| v + rng.random_range(-s..s));
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
