//! End-to-end runs of the `hiprssm` binary on a tiny configuration.

use std::path::Path;
use std::process::{Command, Output};

use hiprssm::config::RunConfig;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiprssm")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn tiny() -> RunConfig {
    let mut c = RunConfig::smoke();
    c.sim.n_traj = 5;
    c.sim.n_train = 3;
    c.model.latent_obs_dim = 2;
    c.model.latent_state_dim = 4;
    c.model.task_dim = 4;
    c.model.obs_encoder_hidden = 8;
    c.model.context_encoder_hidden = 8;
    c.model.decoder_hidden = 8;
    c.model.control_hidden = vec![8];
    c.model.task_hidden = 8;
    c.model.np_hidden = vec![8];
    c.train.epochs = 4;
    c.train.batch_size = 4;
    c.train.eval_every = 1;
    c
}

fn write_config(dir: &Path, cfg: &RunConfig) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, cfg.to_json()).unwrap();
    p.display().to_string()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

/// Generates data and trains `epochs` epochs into `out`.
fn prepare(dir: &Path, epochs: &str) -> (String, String, String) {
    let cfg = write_config(dir, &tiny());
    let data = s(&dir.join("data"));
    let out = s(&dir.join("run"));
    assert_eq!(code(&bin(&["generate-data", "--config", &cfg, "--out", &data])), 0);
    let o = bin(&["train", "--config", &cfg, "--data", &data, "--out", &out, "--epochs", epochs]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (cfg, data, out)
}

#[test]
fn print_config_roundtrips_through_json() {
    for preset in ["default", "benchmark", "smoke"] {
        let o = bin(&["print-config", "--preset", preset]);
        assert_eq!(code(&o), 0);
        let parsed = RunConfig::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
        parsed.validate().unwrap();
    }
    assert_eq!(code(&bin(&["print-config", "--preset", "huge"])), 2);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.sim.segment_len = cfg.sim.traj_len + 1;
    let path = write_config(dir.path(), &cfg);
    let o = bin(&["generate-data", "--config", &path, "--out", &s(&dir.path().join("d"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("segment_len"));
    std::fs::write(dir.path().join("bad.json"), "{\"sim\": 3}").unwrap();
    let o = bin(&["generate-data", "--config", &s(&dir.path().join("bad.json")), "--out", "x"]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&bin(&["train", "--bogus"])), 2);
}

#[test]
fn missing_dataset_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["train", "--data", &s(&dir.path().join("nope")), "--out", &s(dir.path())]);
    assert_eq!(code(&o), 3);
}

#[test]
fn generate_data_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&bin(&["generate-data", "--config", &cfg, "--out", &s(&a), "--seed", "7"])), 0);
    assert_eq!(code(&bin(&["generate-data", "--config", &cfg, "--out", &s(&b)])), 0);
    let (da, db) = (hiprssm::data::read_dataset(&a).unwrap(), hiprssm::data::read_dataset(&b).unwrap());
    assert_eq!(da.spec.seed, 7);
    assert_ne!(da.obs, db.obs);
}

#[test]
fn train_eval_infer_embed() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data, out) = prepare(dir.path(), "2");
    let run = Path::new(&out);
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,eval_rmse");
    assert_eq!(lines.len(), 3);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 3 && !l.ends_with(',')));

    let ckpt = s(&run.join("checkpoint"));
    let eval_csv = s(&run.join("eval.csv"));
    let o = bin(&["eval", "--checkpoint", &ckpt, "--data", &data, "--out", &eval_csv]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&eval_csv).unwrap();
    assert!(text.lines().any(|l| l.starts_with("full,")));
    assert!(text.lines().any(|l| l.starts_with("imputed_50,")));
    let o = bin(&["eval", "--checkpoint", &ckpt, "--data", &data, "--protocol", "multi_step:5"]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("multi_step")).count(), 5);

    let o = bin(&["infer", "--checkpoint", &ckpt, "--data", &data, "--trajectory", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = String::from_utf8(o.stdout).unwrap().lines().count() - 1;
    let cfg = tiny();
    assert_eq!(rows, cfg.sim.traj_len / cfg.model.context_size - 1);
    let o = bin(&["infer", "--checkpoint", &ckpt, "--data", &data, "--trajectory", "99"]);
    assert_ne!(code(&o), 0);

    let emb = s(&run.join("emb.csv"));
    let o = bin(&["export-embeddings", "--checkpoint", &ckpt, "--data", &data, "--out", &emb]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&emb).unwrap();
    let test_windows = (cfg.sim.n_traj - cfg.sim.n_train) * (rows);
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), test_windows + 1);
}

#[test]
fn resume_continues_bit_for_bit() {
    let one = tempfile::tempdir().unwrap();
    let two = tempfile::tempdir().unwrap();
    let (_, _, straight) = prepare(one.path(), "4");
    let (_, data, split) = prepare(two.path(), "2");
    let ckpt = s(&Path::new(&split).join("checkpoint"));
    let o = bin(&["train", "--data", &data, "--out", &split, "--checkpoint", &ckpt, "--epochs", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let read = |d: &str, f: &str| std::fs::read(Path::new(d).join(f)).unwrap();
    assert_eq!(read(&straight, "checkpoint/params.bin"), read(&split, "checkpoint/params.bin"));
    assert_eq!(read(&straight, "checkpoint/optimizer.bin"), read(&split, "checkpoint/optimizer.bin"));
    assert_eq!(read(&straight, "metrics.csv"), read(&split, "metrics.csv"));
}

#[test]
fn mismatched_checkpoint_exits_with_5() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data, out) = prepare(dir.path(), "1");
    let ckpt = s(&Path::new(&out).join("checkpoint"));
    let o = bin(&["train", "--data", &data, "--out", &out, "--checkpoint", &ckpt, "--baseline", "np"]);
    assert_eq!(code(&o), 5);
    let mut pend = tiny();
    pend.sim = hiprssm::data::SimSpec { n_traj: 3, n_train: 2, traj_len: 200, segment_len: 100, ..hiprssm::data::SimSpec::pendulum() };
    pend.resolve().unwrap();
    let cfg = write_config(dir.path(), &pend);
    let pdata = s(&dir.path().join("pend"));
    assert_eq!(code(&bin(&["generate-data", "--config", &cfg, "--out", &pdata])), 0);
    let o = bin(&["eval", "--checkpoint", &ckpt, "--data", &pdata]);
    assert_eq!(code(&o), 5);
    std::fs::write(Path::new(&ckpt).join("params.bin"), [0u8; 16]).unwrap();
    let o = bin(&["eval", "--checkpoint", &ckpt, "--data", &data]);
    assert_ne!(code(&o), 0);
}

#[test]
fn baselines_train() {
    for baseline in ["context_free", "np"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), &tiny());
        let data = s(&dir.path().join("data"));
        assert_eq!(code(&bin(&["generate-data", "--config", &cfg, "--out", &data])), 0);
        let out = s(&dir.path().join("run"));
        let o = bin(&["train", "--config", &cfg, "--data", &data, "--out", &out, "--epochs", "1", "--baseline", baseline]);
        assert_eq!(code(&o), 0, "{baseline}: {}", String::from_utf8_lossy(&o.stderr));
        let o = bin(&["eval", "--checkpoint", &s(&Path::new(&out).join("checkpoint")), "--data", &data]);
        assert_eq!(code(&o), 0, "{baseline}");
    }
}
