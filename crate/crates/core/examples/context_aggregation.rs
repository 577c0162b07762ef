//! Bayesian aggregation of per-transition encodings into a task posterior.
//! The posterior tightens as the context grows and does not depend on the
//! order of the set.
//!
//! cargo run --release --example context_aggregation

use hiprssm::context::{aggregate, TaskPrior};
use hiprssm::gaussian::DiagGaussian;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hiprssm::Result<()> {
    let truth = [0.8, -1.5];
    let prior = TaskPrior::standard(2);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let encodings: Vec<DiagGaussian> = (0..64)
        .map(|_| {
            let var: Vec<f64> = vec![rng.random_range(0.5..4.0), rng.random_range(0.5..4.0)];
            let mean = truth.iter().zip(&var).map(|(t, v)| t + v.sqrt() * rng.random_range(-1.7..1.7)).collect();
            DiagGaussian::new(mean, var)
        })
        .collect::<hiprssm::Result<_>>()?;

    println!("{:>4} {:>18} {:>18}", "N", "mean", "variance");
    for n in [0, 1, 4, 16, 64] {
        let post = aggregate(&prior, &encodings[..n])?;
        println!(
            "{n:>4} {:>8.4} {:>8.4}  {:>8.5} {:>8.5}",
            post.mean()[0],
            post.mean()[1],
            post.var()[0],
            post.var()[1]
        );
    }

    let mut shuffled = encodings.clone();
    shuffled.reverse();
    let (a, b) = (aggregate(&prior, &encodings)?, aggregate(&prior, &shuffled)?);
    let diff = a.mean().iter().zip(b.mean()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    println!("max mean difference after reversing the set: {diff:e}");
    Ok(())
}
