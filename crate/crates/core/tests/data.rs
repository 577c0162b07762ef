use hiprssm::data::{
    build_windows, integrate, read_dataset, read_manifest, simulate, ParamDist, ParamRange, SimSpec, System,
    STD_FLOOR,
};
use hiprssm::Error;
use ndarray::Axis;

fn small(seed: u64) -> SimSpec {
    SimSpec { traj_len: 300, n_traj: 5, n_train: 4, segment_len: 150, seed, ..SimSpec::default() }
}

#[test]
fn undamped_spring_follows_cosine() {
    let (k, dt, steps) = (4.0, 0.01, 1000);
    let p = vec![vec![k, 0.0, 1.0]; steps];
    let states = integrate(System::SpringMass, &p, [1.0, 0.0], &vec![0.0; steps], dt, 1).unwrap();
    let w = f64::sqrt(k);
    let worst = states.iter().enumerate().map(|(t, s)| (s[0] - (w * t as f64 * dt).cos()).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-6, "max deviation {worst:e}");
}

#[test]
fn damped_unforced_energy_never_grows() {
    for (system, p, s0) in [
        (System::SpringMass, vec![6.0, 0.5, 1.0], [1.0, -0.5]),
        (System::Pendulum, vec![1.2, 0.8, 0.2], [2.5, 0.0]),
    ] {
        let rows = vec![p.clone(); 2000];
        let states = integrate(system, &rows, s0, &[0.0; 2000], 0.01, 2).unwrap();
        let e: Vec<f64> = states.iter().map(|s| system.energy(&p, *s)).collect();
        assert!(e.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{system:?}");
        assert!(e[e.len() - 1] < 0.5 * e[0]);
    }
}

#[test]
fn same_seed_same_data_other_seed_differs() {
    let a = simulate(&small(3)).unwrap();
    let b = simulate(&small(3)).unwrap();
    let c = simulate(&small(4)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.obs, c.obs);
}

#[test]
fn trajectory_is_independent_of_dataset_size() {
    let a = simulate(&small(9)).unwrap();
    let b = simulate(&SimSpec { n_traj: 8, ..small(9) }).unwrap();
    assert_eq!(a.trajectory(2), b.trajectory(2));
}

#[test]
fn dataset_roundtrip_is_bitwise() {
    let ds = simulate(&SimSpec::pendulum()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    hiprssm::data::write_dataset(&ds, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);
    assert_eq!(read_manifest(dir.path()).unwrap().hidden_names, ["length", "mass", "damping"]);
}

#[test]
fn tampered_manifest_is_rejected() {
    let ds = simulate(&small(0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    hiprssm::data::write_dataset(&ds, dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&path).unwrap().replace("\"obs_dim\": 1", "\"obs_dim\": 2");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::ManifestMismatch(_))));
}

#[test]
fn truncated_binary_is_rejected() {
    let ds = simulate(&small(0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    hiprssm::data::write_dataset(&ds, dir.path()).unwrap();
    let path = dir.path().join("obs.bin");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(read_dataset(dir.path()).is_err());
}

#[test]
fn normalized_training_split_is_standard() {
    let ds = simulate(&small(1)).unwrap();
    let norm = ds.normalized();
    let n_train = ds.spec.n_train;
    for x in [&norm.obs, &norm.actions] {
        let train = x.slice(ndarray::s![..n_train, .., ..]);
        let flat: Vec<f64> = train.iter().copied().collect();
        let n = flat.len() as f64;
        let mean = flat.iter().sum::<f64>() / n;
        let std = (flat.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() <= 1e-10, "mean {mean:e}");
        assert!((std - 1.0).abs() <= 1e-10, "std {std}");
    }
    let deltas = norm.deltas.slice(ndarray::s![..n_train, .., ..]);
    let mean = deltas.mean().unwrap();
    assert!(mean.abs() <= 1e-10);
}

#[test]
fn constant_action_gets_the_std_floor() {
    let spec = SimSpec { action_scale: 0.0, ..small(0) };
    let ds = simulate(&spec).unwrap();
    assert_eq!(ds.stats.action_std, vec![STD_FLOOR]);
    assert!(ds.normalized().actions.iter().all(|v| v.is_finite()));
}

#[test]
fn test_split_uses_test_range() {
    let mut spec = small(2);
    spec.params.insert(
        "stiffness".into(),
        ParamRange { train: ParamDist::Fixed { value: 2.0 }, test: ParamDist::Fixed { value: 7.0 } },
    );
    let ds = simulate(&spec).unwrap();
    for i in 0..ds.n_traj() {
        let want = if ds.is_train(i) { 2.0 } else { 7.0 };
        assert!(ds.hidden.index_axis(Axis(0), i).column(0).iter().all(|&k| k == want));
    }
}

#[test]
fn windows_tile_each_trajectory() {
    let ds = simulate(&SimSpec { traj_len: 900, segment_len: 450, ..small(0) }).unwrap();
    let w = build_windows(&ds, 150).unwrap();
    assert_eq!(w.len(), 5 * ds.n_traj());
    for pair in w.windows.windows(2) {
        if pair[0].traj == pair[1].traj {
            assert_eq!(pair[0].start + pair[0].len, pair[1].start);
            assert_eq!(pair[1].start - pair[1].context_len, pair[0].start);
        }
    }
    assert!(w.windows.iter().all(|x| x.hidden[0] == ds.hidden[[x.traj, x.start, 0]]));
    let one = simulate(&small(0)).unwrap();
    assert_eq!(build_windows(&one, 150).unwrap().len(), one.n_traj());
}
