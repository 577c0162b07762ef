//! Fits a linear regression with Adam and global-norm gradient clipping.
//!
//! cargo run --release --example optimizer

use hiprssm::nn::{clip_gradients, Adam, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hiprssm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let true_w = [2.0, -3.0, 0.5];
    let x = Tensor::from_shape_fn((64, 3), |_| rng.random_range(-1.0..1.0));
    let y = Tensor::from_shape_fn((64, 1), |(i, _)| {
        (0..3).map(|j| true_w[j] * x[[i, j]]).sum::<f64>() + 1.0 + 0.01 * rng.random_range(-1.0..1.0)
    });

    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::zeros((1, 3)))?;
    let b = store.add("b", Tensor::zeros((1, 1)))?;
    let mut adam = Adam::new(0.05);
    for step in 1..=400 {
        let tape = Tape::new();
        let pred = tape.linear(tape.constant(x.clone()), tape.param(&store, w), tape.param(&store, b))?;
        let err = tape.sub(pred, tape.constant(y.clone()));
        let loss = tape.scale(tape.sum(tape.square(err)), 1.0 / 64.0);
        store.zero_grads();
        tape.backward(loss, &mut store)?;
        let norm = clip_gradients(&mut store, 1.0);
        adam.step(&mut store);
        if step % 50 == 0 || step == 1 {
            println!("step {step:>3}  mse {:.6}  grad norm {norm:.4}", tape.scalar(loss));
        }
    }
    println!("w = {:.3}  b = {:.3}", store.value(w), store.value(b)[[0, 0]]);
    Ok(())
}
