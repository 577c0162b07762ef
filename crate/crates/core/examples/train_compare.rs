//! Trains the full model and the context-free ablation on the same data and
//! compares them under the three evaluation protocols.
//!
//! cargo run --release --example train_compare -- [smoke|benchmark]

use std::time::Instant;

use hiprssm::config::RunConfig;
use hiprssm::data::{build_windows, simulate};
use hiprssm::model::{Baseline, Model};
use hiprssm::nn::Adam;
use hiprssm::train::{train, EvalReport, Protocol};

fn main() -> hiprssm::Result<()> {
    let preset = std::env::args().nth(1).unwrap_or_else(|| "smoke".into());
    let mut cfg = RunConfig::preset(&preset)?;
    cfg.resolve()?;
    let ds = simulate(&cfg.sim)?;
    let norm = ds.normalized();
    let windows = build_windows(&ds, cfg.model.context_size)?;
    let train_w = windows.filter(|t| ds.is_train(t));
    let test_w = windows.filter(|t| !ds.is_train(t));
    let horizon = cfg.model.context_size / 2;
    let protocols = [Protocol::Full, Protocol::Imputed50, Protocol::MultiStep(horizon)];

    println!("{preset}: {} train / {} test windows", train_w.len(), test_w.len());
    for baseline in [Baseline::None, Baseline::ContextFree] {
        let mut mc = cfg.model.clone();
        mc.baseline = baseline;
        let mut model = Model::new(mc, cfg.train.seed)?;
        let mut adam = Adam::new(cfg.train.lr);
        let t0 = Instant::now();
        let history = train(&mut model, &mut adam, &norm, &train_w, None, &cfg.train, 0, |_, _, _| Ok(()))?;
        let report = EvalReport::run(&model, &norm, &test_w, &protocols, cfg.train.eval_seed, cfg.eval.batch_size)?;
        let rollout = &report.get(Protocol::MultiStep(horizon)).expect("evaluated").rmse;
        println!(
            "{baseline:?}: final loss {:.4}  one-step {:.5}  imputed {:.5}  rollout@{horizon} {:.4}  ({:.0}s)",
            history.last().map_or(f64::NAN, |m| m.train_loss),
            report.one_step_rmse().unwrap_or(f64::NAN),
            report.imputed_rmse().unwrap_or(f64::NAN),
            rollout[horizon - 1],
            t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
