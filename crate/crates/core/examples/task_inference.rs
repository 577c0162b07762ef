//! Trains a small model, then slides over a trajectory whose stiffness
//! jumps mid-way and prints the task posterior per window. Also writes the
//! PCA embedding CSV of the test windows.
//!
//! cargo run --release --example task_inference -- [embeddings.csv]

use hiprssm::config::RunConfig;
use hiprssm::data::{build_windows, simulate, simulate_with_schedule};
use hiprssm::model::Model;
use hiprssm::nn::Adam;
use hiprssm::train::{export_embeddings, sliding_inference, train, EmbeddingRow};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::smoke();
    cfg.model.task_dim = 1;
    cfg.train.epochs = 30;
    cfg.resolve()?;
    let ds = simulate(&cfg.sim)?;
    let norm = ds.normalized();
    let windows = build_windows(&ds, cfg.model.context_size)?;
    let train_w = windows.filter(|t| ds.is_train(t));
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    let mut adam = Adam::new(cfg.train.lr);
    train(&mut model, &mut adam, &norm, &train_w, None, &cfg.train, 0, |m, _, _| {
        if m.epoch % 10 == 0 {
            println!("epoch {:>3} loss {:.4}", m.epoch, m.train_loss);
        }
        Ok(())
    })?;

    let change = cfg.sim.traj_len / 2;
    let schedule: Vec<Vec<f64>> =
        (0..cfg.sim.traj_len).map(|t| vec![if t < change { 2.0 } else { 8.0 }, 0.5, 1.0]).collect();
    let traj = simulate_with_schedule(&cfg.sim, 777, &schedule)?;
    println!("stiffness 2 -> 8 at step {change}");
    println!("{:>6} {:>9} {:>10} {:>10} {:>9}", "start", "stiffness", "task mean", "task var", "rmse");
    for w in sliding_inference(&model, &traj, &traj.normalized(&norm.stats))? {
        println!("{:>6} {:>9} {:>10.4} {:>10.5} {:>9.5}", w.start, w.hidden[0], w.task_mean[0], w.task_var[0], w.rmse);
    }

    let test_w = windows.filter(|t| !ds.is_train(t));
    let mut rows = Vec::new();
    for t in (0..ds.n_traj()).filter(|&t| !ds.is_train(t)) {
        let tr = ds.trajectory(t);
        for w in sliding_inference(&model, &tr, &tr.normalized(&norm.stats))? {
            rows.push(EmbeddingRow { traj: t, window: w.index, hidden: w.hidden[0], mean: w.task_mean });
        }
    }
    assert_eq!(rows.len(), test_w.len());
    let emb = export_embeddings(rows);
    let path = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("embeddings.csv").display().to_string());
    std::fs::write(&path, emb.to_csv())?;
    println!("{} embedding rows written to {path}", emb.rows.len());
    Ok(())
}
