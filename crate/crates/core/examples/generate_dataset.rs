//! Simulates the spring-mass changing-dynamics dataset, writes it to disk,
//! reads it back and windows it into (context, target) pairs.
//!
//! cargo run --release --example generate_dataset -- [out_dir]

use std::path::PathBuf;

use hiprssm::data::{build_windows, read_dataset, simulate, write_dataset, SimSpec};

fn main() -> hiprssm::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("hiprssm-data"));
    let spec = SimSpec { n_traj: 10, n_train: 8, ..SimSpec::default() };
    let ds = simulate(&spec)?;
    write_dataset(&ds, &out)?;
    let back = read_dataset(&out)?;
    assert_eq!(back, ds);
    println!("wrote {} trajectories x {} steps to {}", ds.n_traj(), ds.traj_len(), out.display());

    let st = &ds.stats;
    println!("obs mean {:.4} std {:.4}", st.obs_mean[0], st.obs_std[0]);
    println!("delta mean {:.2e} std {:.4}", st.delta_mean[0], st.delta_std[0]);

    for traj in [0, 9] {
        let k: Vec<String> = (0..ds.traj_len()).step_by(spec.segment_len).map(|t| ds.hidden[[traj, t, 0]].to_string()).collect();
        let split = if ds.is_train(traj) { "train" } else { "test" };
        println!("trajectory {traj} ({split}) stiffness per segment: {}", k.join(", "));
    }

    let windows = build_windows(&ds, 150)?;
    println!("{} windows of 150 steps", windows.len());
    for w in windows.windows.iter().take(3) {
        println!(
            "  traj {} window {}: context [{}, {}) target [{}, {}) stiffness {}",
            w.traj,
            w.index,
            w.start - w.context_len,
            w.start,
            w.start,
            w.start + w.len,
            w.hidden[0]
        );
    }
    Ok(())
}
