mod common;

use hiprssm::config::RunConfig;
use hiprssm::data::{build_windows, simulate};
use hiprssm::model::Model;
use hiprssm::nn::Adam;
use hiprssm::train::{export_embeddings, sliding_inference, train, EmbeddingRow, EpochMetrics};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> RunConfig {
    let mut c = RunConfig::smoke();
    c.sim.n_traj = 6;
    c.sim.n_train = 4;
    c.model.latent_obs_dim = 2;
    c.model.latent_state_dim = 4;
    c.model.task_dim = 4;
    c.model.obs_encoder_hidden = 16;
    c.model.context_encoder_hidden = 16;
    c.model.decoder_hidden = 16;
    c.model.control_hidden = vec![16];
    c.model.task_hidden = 16;
    c.train.epochs = 8;
    c.train.batch_size = 4;
    c.train.eval_every = 1;
    c.resolve().unwrap();
    c
}

fn run(cfg: &RunConfig) -> (Vec<EpochMetrics>, Model) {
    let ds = simulate(&cfg.sim).unwrap();
    let norm = ds.normalized();
    let windows = build_windows(&ds, cfg.model.context_size).unwrap();
    let train_w = windows.filter(|t| ds.is_train(t));
    let test_w = windows.filter(|t| !ds.is_train(t));
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed).unwrap();
    let mut adam = Adam::new(cfg.train.lr);
    let h = train(&mut model, &mut adam, &norm, &train_w, Some(&test_w), &cfg.train, 0, |_, _, _| Ok(())).unwrap();
    (h, model)
}

#[test]
fn loss_drops_and_runs_are_reproducible() {
    let cfg = tiny();
    let (a, ma) = run(&cfg);
    assert_eq!(a.len(), cfg.train.epochs);
    assert!(a.iter().all(|m| m.train_loss.is_finite() && m.eval_rmse.is_some()));
    assert!(a[a.len() - 1].train_loss < a[0].train_loss, "{a:?}");
    let (b, mb) = run(&cfg);
    assert_eq!(a, b);
    assert_eq!(ma.params.flat_values(), mb.params.flat_values());
    let mut other = cfg.clone();
    other.train.seed = 1;
    let (c, _) = run(&other);
    assert_ne!(a, c);
}

#[test]
fn sliding_inference_covers_every_window() {
    let cfg = tiny();
    let ds = simulate(&cfg.sim).unwrap();
    let model = Model::new(cfg.model.clone(), 0).unwrap();
    let traj = ds.trajectory(5);
    let rows = sliding_inference(&model, &traj, &traj.normalized(&ds.stats)).unwrap();
    let n = cfg.model.context_size;
    assert_eq!(rows.len(), cfg.sim.traj_len / n - 1);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.start, (i + 1) * n);
        assert_eq!(r.predictions.nrows(), n);
        assert!(r.rmse.is_finite() && r.task_var.iter().all(|v| *v > 0.0));
        assert_eq!(r.hidden, traj.hidden.row(r.start).to_vec());
    }
}

#[test]
fn pca_matches_dense_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (n, d) = (60, 5);
    let scales = [3.0, 1.5, 0.7, 0.3, 0.1];
    let rows: Vec<EmbeddingRow> = (0..n)
        .map(|i| EmbeddingRow {
            traj: i,
            window: 1,
            hidden: i as f64,
            mean: (0..d).map(|j| scales[j] * rng.random_range(-1.0..1.0) + 0.2 * j as f64).collect(),
        })
        .collect();
    let x = DMatrix::from_fn(n, d, |i, j| rows[i].mean[j]);
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - x.column(j).mean());
    let cov = centered.transpose() * &centered / n as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let e = export_embeddings(rows);
    for (k, &idx) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[idx];
        assert!((e.explained_variance[k] - lambda).abs() <= 1e-9 * lambda);
        let v = eig.eigenvectors.column(idx);
        let dot: f64 = e.components[k].iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        assert!((dot.abs() - 1.0).abs() <= 1e-9, "component {k}: |cos| {}", dot.abs());
        for i in 0..n {
            let p: f64 = centered.row(i).iter().zip(&e.components[k]).map(|(a, b)| a * b).sum();
            assert!((e.projection[i][k] - p).abs() <= 1e-12);
        }
    }
}
