mod common;

use common::*;
use hiprssm::cell::{observation_update, time_update_factorized, TaskTerms, TransitionBlocks};
use hiprssm::context::{aggregate, TaskPrior};
use hiprssm::gaussian::{dense_condition, DenseGaussian, DiagGaussian, FactorizedBelief};
use hiprssm::nn::{check_gradients, clip_gradients, global_grad_norm, Activation, Adam, ParamStore, Tape, Tensor};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn belief_from_seed(seed: u64, m: usize) -> FactorizedBelief {
    random_belief(&mut ChaCha8Rng::seed_from_u64(seed), m)
}

fn encodings(seed: u64, n: usize, d: usize) -> Vec<DiagGaussian> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| DiagGaussian::new(uniform_vec(&mut rng, d, -3.0, 3.0), uniform_vec(&mut rng, d, 0.01, 10.0)).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn factorized_dense_roundtrip_and_psd(seed in any::<u64>(), m in 1usize..6) {
        let b = belief_from_seed(seed, m);
        let d = b.to_dense();
        prop_assert!(d.cov.clone().symmetric_eigen().eigenvalues.min() >= 0.0);
        prop_assert_eq!(&d.cov, &d.cov.transpose());
        prop_assert_eq!(FactorizedBelief::from_dense(&d).unwrap(), b);
    }

    #[test]
    fn aggregation_is_order_free(seed in any::<u64>(), n in 1usize..20, d in 1usize..8, rot in 0usize..20) {
        let prior = TaskPrior::standard(d);
        let enc = encodings(seed, n, d);
        let mut shuffled = enc.clone();
        shuffled.reverse();
        shuffled.rotate_left(rot % n);
        let (a, b) = (aggregate(&prior, &enc).unwrap(), aggregate(&prior, &shuffled).unwrap());
        for (x, y) in a.mean().iter().chain(a.var()).zip(b.mean().iter().chain(b.var())) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn appending_context_never_increases_variance(seed in any::<u64>(), n in 0usize..12, d in 1usize..6) {
        let prior = TaskPrior::new(vec![0.3; d], vec![2.0; d]).unwrap();
        let enc = encodings(seed, n + 1, d);
        let before = aggregate(&prior, &enc[..n]).unwrap();
        let after = aggregate(&prior, &enc).unwrap();
        prop_assert!(after.var().iter().zip(before.var()).all(|(a, b)| a <= b));
    }

    #[test]
    fn aggregation_equals_stacked_dense_condition(seed in any::<u64>()) {
        let (n, d) = (8, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = TaskPrior::new(uniform_vec(&mut rng, d, -1.0, 1.0), uniform_vec(&mut rng, d, 0.2, 3.0)).unwrap();
        let enc = encodings(seed ^ 0x5eed, n, d);
        let post = aggregate(&prior, &enc).unwrap();
        let h = DMatrix::from_fn(n * d, d, |r, c| if r % d == c { 1.0 } else { 0.0 });
        let y: Vec<f64> = enc.iter().flat_map(|e| e.mean().to_vec()).collect();
        let r: Vec<f64> = enc.iter().flat_map(|e| e.var().to_vec()).collect();
        let dense = dense_condition(&prior.as_gaussian().to_dense(), &y, &r, &h).unwrap();
        prop_assert!(rel_err(post.mean(), dense.mean.as_slice()) <= 1e-10);
        let ours = DMatrix::from_diagonal(&DVector::from_column_slice(post.var()));
        prop_assert!(rel_err_mat(&ours, &dense.cov) <= 1e-10);
    }

    #[test]
    fn dense_condition_equals_sequential_scalar_updates(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = DMatrix::from_fn(3, 3, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let cov = &l * l.transpose() + DMatrix::identity(3, 3) * 0.3;
        let prior = DenseGaussian::new(DVector::from_vec(uniform_vec(&mut rng, 3, -1.0, 1.0)), cov).unwrap();
        let h = DMatrix::from_fn(3, 3, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let y = uniform_vec(&mut rng, 3, -2.0, 2.0);
        let r = uniform_vec(&mut rng, 3, 0.1, 2.0);
        let joint = dense_condition(&prior, &y, &r, &h).unwrap();
        let mut seq = prior;
        for i in 0..3 {
            seq = dense_condition(&seq, &y[i..=i], &r[i..=i], &h.rows(i, 1).into_owned()).unwrap();
        }
        prop_assert!(rel_err(joint.mean.as_slice(), seq.mean.as_slice()) <= 1e-10);
        prop_assert!(rel_err_mat(&joint.cov, &seq.cov) <= 1e-10);
    }

    #[test]
    fn observation_update_shrinks_and_stays_psd(seed in any::<u64>(), m in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = random_belief(&mut rng, m);
        let w = uniform_vec(&mut rng, m, -3.0, 3.0);
        let r = uniform_vec(&mut rng, m, 1e-3, 10.0);
        let post = observation_update(&prior, &w, &r).unwrap();
        prop_assert!(post.var_u().iter().zip(prior.var_u()).all(|(a, b)| a <= b));
        prop_assert!(post.var_l().iter().zip(prior.var_l()).all(|(a, b)| a <= b));
        prop_assert!(dense_cov(&post).symmetric_eigen().eigenvalues.min() >= 0.0);
    }

    #[test]
    fn uninformative_observation_keeps_prior(seed in any::<u64>(), m in 1usize..6) {
        let prior = belief_from_seed(seed, m);
        let post = observation_update(&prior, &vec![100.0; m], &vec![1e12; m]).unwrap();
        prop_assert!(rel_err(post.mean(), prior.mean()) <= 1e-6);
        prop_assert!(rel_err_mat(&dense_cov(&post), &dense_cov(&prior)) <= 1e-6);
    }

    #[test]
    fn identity_dynamics_leave_belief_unchanged(seed in any::<u64>(), m in 1usize..6) {
        let b = belief_from_seed(seed, m);
        let out = time_update_factorized(&b, &TransitionBlocks::identity(m), &vec![0.0; 2 * m], &TaskTerms::zero(m), &vec![0.0; 2 * m]).unwrap();
        prop_assert_eq!(out, b);
    }

    #[test]
    fn smooth_networks_match_finite_differences(seed in any::<u64>(), rows in 1usize..5, fan_in in 1usize..5, fan_out in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_shape_fn((fan_out, fan_in), |_| rand::Rng::random_range(&mut rng, -1.0..1.0))).unwrap();
        let b = store.add("b", Tensor::from_shape_fn((1, fan_out), |_| rand::Rng::random_range(&mut rng, -1.0..1.0))).unwrap();
        let x = Tensor::from_shape_fn((rows, fan_in), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let c = Tensor::from_shape_fn((rows, fan_out), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let checks = check_gradients(&store, |tape: &Tape, store: &ParamStore| {
            let y = tape.linear(tape.constant(x.clone()), tape.param(store, w), tape.param(store, b))?;
            let a = tape.activation(Activation::Tanh, y);
            let s = tape.softmax(y);
            let e = tape.elu_plus_one(tape.mul(a, s));
            Ok(tape.sum(tape.mul(tape.add(e, tape.square(a)), tape.constant(c.clone()))))
        }, 1e-6).unwrap();
        for ch in checks {
            prop_assert!(ch.passes(1e-6), "{} rel {:e}", ch.name, ch.rel_err);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), spread in 0.0f64..700.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tape = Tape::new();
        let x = Tensor::from_shape_fn((4, 7), |_| rand::Rng::random_range(&mut rng, -1.0..1.0) * spread);
        let s = tape.softmax(tape.constant(x));
        for row in tape.value(s).rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn elu_plus_one_is_positive(x in proptest::num::f64::NORMAL | proptest::num::f64::ZERO) {
        prop_assert!(hiprssm::nn::elu_plus_one(x) > 0.0);
    }

    #[test]
    fn clipping_bounds_norm_and_keeps_direction(seed in any::<u64>(), max in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (i, n) in [3usize, 1, 5].iter().enumerate() {
            let id = store.add(format!("p{i}"), Tensor::zeros((1, *n))).unwrap();
            *store.grad_mut(id) = Tensor::from_shape_fn((1, *n), |_| rand::Rng::random_range(&mut rng, -4.0..4.0));
        }
        let before = store.flat_grads();
        let pre = clip_gradients(&mut store, max);
        let after = store.flat_grads();
        prop_assert!((pre - norm(&before)).abs() <= 1e-12 * pre.max(1.0));
        prop_assert!(global_grad_norm(&store) <= max * (1.0 + 1e-12) || pre <= max);
        let k = if pre > max { max / pre } else { 1.0 };
        for (a, b) in after.iter().zip(&before) {
            prop_assert!((a - k * b).abs() <= 1e-12);
        }
    }

    #[test]
    fn adam_matches_scalar_reference(seed in any::<u64>(), lr in 1e-4f64..1e-1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_shape_fn((1, 3), |_| rand::Rng::random_range(&mut rng, -1.0..1.0))).unwrap();
        let mut adam = Adam::new(lr);
        let mut w: Vec<f64> = store.flat_values();
        let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
        for t in 1..=50 {
            let g: Vec<f64> = uniform_vec(&mut rng, 3, -2.0, 2.0);
            *store.grad_mut(id) = Tensor::from_shape_vec((1, 3), g.clone()).unwrap();
            adam.step(&mut store);
            for i in 0..3 {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                w[i] -= lr * mh / (vh.sqrt() + 1e-8);
            }
        }
        prop_assert!(rel_err(&store.flat_values(), &w) <= 1e-12);
    }
}
