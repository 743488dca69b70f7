//! Builds a two-layer network on the tape, runs the backward pass and
//! compares it with central finite differences. Also shows the boundary:
//! the gradient at a marked intermediate is captured, edited and resumed.

use kspace::autodiff::{Tape, Tensor2};
use kspace::gradcheck;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut random = |r, c| Tensor2::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
    let (x, w1, b1, w2, b2) = (random(5, 3), random(3, 4), random(1, 4), random(4, 1), random(1, 1));
    let y = vec![1.0, 0.0, 1.0, 1.0, 0.0];

    let check = gradcheck::check(&[w1.clone(), b1.clone(), w2.clone(), b2.clone()], 1e-6, |tape, v| {
        let xv = tape.constant(x.clone())?;
        let h = tape.linear(xv, v[0], v[1])?;
        let h = tape.silu(h)?;
        let z = tape.linear(h, v[2], v[3])?;
        let l = tape.bce_with_logits(z, y.clone())?;
        tape.mean_all(l)
    })?;
    for (name, err) in ["w1", "b1", "w2", "b2"].iter().zip(&check.relative_errors) {
        println!("{name}: relative error {err:.2e}");
    }

    let mut tape = Tape::new();
    let xv = tape.constant(x)?;
    let (w1v, b1v) = (tape.param(w1)?, tape.param(b1)?);
    let pre = tape.linear(xv, w1v, b1v)?;
    let h = tape.silu(pre)?;
    let handle = tape.mark_boundary(h)?;
    let (w2v, b2v) = (tape.param(w2)?, tape.param(b2)?);
    let z = tape.linear(h, w2v, b2v)?;
    let l = tape.bce_with_logits(z, y)?;
    let loss = tape.mean_all(l)?;
    let above = tape.backward_from(loss, 1.0)?;
    println!("w2 gradient norm {:.4}", above.get(w2v).map_or(0.0, |g| g.norm()));
    let captured = tape.boundary_grad()?.clone();
    println!("boundary gradient {:?}, norm {:.4}", captured.shape(), captured.norm());
    let halved = captured.scaled(0.5);
    let below = tape.resume_backward(&handle, &halved)?;
    println!("w1 gradient norm with the boundary gradient halved {:.4}", below.get(w1v).map_or(0.0, |g| g.norm()));
    Ok(())
}
