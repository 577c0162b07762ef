//! Records a small network on the tape, runs reverse mode, and compares
//! every parameter gradient against central finite differences.
//!
//! cargo run --release --example autodiff

use hiprssm::nn::{check_gradients, Activation, Mlp, ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hiprssm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "net", 3, &[8, 8], 2, Some(Activation::EluPlusOne), &mut rng)?;
    let x = Tensor::from_shape_fn((5, 3), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);
    let target = Tensor::from_shape_fn((5, 2), |(i, j)| 0.5 + 0.1 * (i + j) as f64);

    let loss = |tape: &Tape, store: &ParamStore| {
        let y = mlp.forward(tape, store, tape.constant(x.clone()))?;
        let err = tape.sub(y, tape.constant(target.clone()));
        Ok(tape.scale(tape.sum(tape.square(err)), 0.1))
    };

    let tape = Tape::new();
    let l = loss(&tape, &store)?;
    println!("loss {:.6}", tape.scalar(l));
    store.zero_grads();
    tape.backward(l, &mut store)?;
    for p in store.iter() {
        let g = p.grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("  |grad {}| = {g:.6}", p.name);
    }

    for c in check_gradients(&store, loss, 1e-6)? {
        println!("{:<16} rel err {:.2e}  {}", c.name, c.rel_err, if c.passes(1e-6) { "ok" } else { "MISMATCH" });
    }
    Ok(())
}
