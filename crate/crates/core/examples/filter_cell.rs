//! Tracks a noisy damped oscillator with the factorized filter cell, using
//! hand-set transition blocks instead of learned ones.
//!
//! cargo run --release --example filter_cell

use hiprssm::cell::{observation_update, time_update_factorized, TaskTerms, TransitionBlocks};
use hiprssm::gaussian::FactorizedBelief;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> hiprssm::Result<()> {
    let (dt, k, c) = (0.05, 4.0, 0.3);
    let r = 0.05f64.powi(2);
    // Euler discretization of x'' = -k x - c x'
    let blocks = TransitionBlocks { a11: vec![1.0], a12: vec![dt], a21: vec![-k * dt], a22: vec![1.0 - c * dt] };
    let noise = [1e-5, 1e-4];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let obs_noise = Normal::new(0.0, r.sqrt()).unwrap();

    let mut truth = [1.0f64, 0.0];
    let mut belief = FactorizedBelief::initial(1, 1.0);
    println!("{:>5} {:>9} {:>9} {:>9} {:>9}", "step", "true x", "obs", "est x", "est sd");
    for step in 0..120 {
        let y = truth[0] + obs_noise.sample(&mut rng);
        // hide every other observation after step 60
        if step < 60 || step % 2 == 0 {
            belief = observation_update(&belief, &[y], &[r])?;
        }
        if step % 10 == 0 {
            println!(
                "{step:>5} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                truth[0],
                y,
                belief.upper_mean()[0],
                belief.var_u()[0].sqrt()
            );
        }
        belief = time_update_factorized(&belief, &blocks, &[0.0, 0.0], &TaskTerms::zero(1), &noise)?;
        truth = [truth[0] + dt * truth[1], truth[1] + dt * (-k * truth[0] - c * truth[1])];
    }
    Ok(())
}
