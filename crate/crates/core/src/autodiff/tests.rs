use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck;

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2 {
    Tensor2::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Contracts an arbitrary output against fixed random weights so every
/// entry of the output influences the scalar loss.
fn contract(tape: &mut Tape, y: Var, seed: u64) -> Result<Var, AutodiffError> {
    let (r, c) = tape.shape(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(rand_tensor(&mut rng, r, c))?;
    let p = tape.mul(y, w)?;
    tape.sum_all(p)
}

const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-5;

fn assert_fd<F>(inputs: &[Tensor2], f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let check = gradcheck::check(inputs, FD_STEP, f).unwrap();
    assert!(
        check.max_relative_error() < FD_TOL,
        "relative errors {:?}\nanalytic {:?}\nnumeric {:?}",
        check.relative_errors,
        check.analytic,
        check.numeric
    );
}

#[test]
fn silu_of_zero_is_zero() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor2::zeros(1, 3)).unwrap();
    let y = tape.silu(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn layer_norm_of_constant_row_is_zero_before_affine() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor2::filled(2, 4, 3.7)).unwrap();
    let g = tape.constant(Tensor2::filled(1, 4, 1.0)).unwrap();
    let b = tape.constant(Tensor2::zeros(1, 4)).unwrap();
    let y = tape.layer_norm(x, g, b).unwrap();
    assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn identity_matmul_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = rand_tensor(&mut rng, 3, 5);
    let mut tape = Tape::new();
    let i = tape.constant(Tensor2::identity(3)).unwrap();
    let mv = tape.constant(m.clone()).unwrap();
    let y = tape.matmul(i, mv).unwrap();
    assert_eq!(tape.value(y), &m);
}

#[test]
fn linear_map_gradient_is_broadcast_input() {
    // loss = sum(x · W) with x a single row: dloss/dW[i][j] = x[i].
    let mut tape = Tape::new();
    let x = tape.constant(Tensor2::row_vector(vec![0.5, -2.0, 3.0])).unwrap();
    let w = tape.param(Tensor2::filled(3, 2, 0.25)).unwrap();
    let y = tape.matmul(x, w).unwrap();
    let loss = tape.sum_all(y).unwrap();
    let grads = tape.backward_from(loss, 1.0).unwrap();
    assert_eq!(grads.get(w).unwrap().data(), &[0.5, 0.5, -2.0, -2.0, 3.0, 3.0]);
    assert!(grads.get(x).is_none());
}

#[test]
fn sigmoid_bce_gradient_at_zero_logit() {
    let mut tape = Tape::new();
    let z = tape.param(Tensor2::scalar(0.0)).unwrap();
    let l = tape.bce_with_logits(z, vec![1.0]).unwrap();
    let loss = tape.sum_all(l).unwrap();
    assert!((tape.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-15);
    let grads = tape.backward_from(loss, 1.0).unwrap();
    assert_eq!(grads.get(z).unwrap().item(), -0.5);
}

#[test]
fn small_mlp_matches_finite_differences() {
    // 2 -> 1 hidden SiLU unit -> 1 output: five scalar parameters.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, 4, 2);
    let params = vec![rand_tensor(&mut rng, 2, 1), rand_tensor(&mut rng, 1, 1), rand_tensor(&mut rng, 1, 1), rand_tensor(&mut rng, 1, 1)];
    assert_eq!(params.iter().map(Tensor2::len).sum::<usize>(), 5);
    assert_fd(&params, |t, p| {
        let xv = t.constant(x.clone())?;
        let h = t.linear(xv, p[0], p[1])?;
        let h = t.silu(h)?;
        let o = t.linear(h, p[2], p[3])?;
        let l = t.bce_with_logits(o, vec![1.0, 0.0, 1.0, 0.0])?;
        t.mean_all(l)
    });
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = rand_tensor(&mut rng, 4, 6);
    let b = rand_tensor(&mut rng, 6, 3);
    let c = rand_tensor(&mut rng, 4, 6);
    let row = rand_tensor(&mut rng, 1, 6);
    let col = rand_tensor(&mut rng, 4, 1);
    let s = rand_tensor(&mut rng, 1, 1);
    let pos = Tensor2::from_fn(4, 6, |_, _| rng.gen_range(0.2..2.0));

    assert_fd(&[a.clone(), b.clone()], |t, p| {
        let y = t.matmul(p[0], p[1])?;
        contract(t, y, 1)
    });
    assert_fd(&[a.clone()], |t, p| {
        let y = t.transpose(p[0])?;
        contract(t, y, 2)
    });
    assert_fd(&[a.clone(), c.clone()], |t, p| {
        let y = t.add(p[0], p[1])?;
        let z = t.mul(y, p[1])?;
        contract(t, z, 3)
    });
    assert_fd(&[a.clone(), row.clone()], |t, p| {
        let y = t.add_row(p[0], p[1])?;
        contract(t, y, 4)
    });
    assert_fd(&[a.clone(), col.clone()], |t, p| {
        let y = t.mul_col(p[0], p[1])?;
        contract(t, y, 5)
    });
    assert_fd(&[a.clone(), s.clone()], |t, p| {
        let y = t.scale_by(p[0], p[1])?;
        let y = t.scale(y, -1.7)?;
        let y = t.scale_rows(y, vec![0.5, 1.0, -2.0, 3.0])?;
        contract(t, y, 6)
    });
    assert_fd(&[a.clone()], |t, p| {
        let y = t.silu(p[0])?;
        let z = t.sigmoid(p[0])?;
        let w = t.neg(p[0])?;
        let y = t.add(y, z)?;
        let y = t.add(y, w)?;
        contract(t, y, 7)
    });
    assert_fd(&[pos.clone()], |t, p| {
        let y = t.log(p[0])?;
        contract(t, y, 8)
    });
    assert_fd(&[a.clone()], |t, p| {
        // Entries are in (-1, 1); the interior of the clamp window passes
        // gradient and the exterior blocks it.
        let y = t.clamp(p[0], -0.5, 0.5)?;
        contract(t, y, 9)
    });
    assert_fd(&[a.clone(), row.clone(), rand_tensor(&mut rng, 1, 6)], |t, p| {
        let y = t.layer_norm(p[0], p[1], p[2])?;
        contract(t, y, 10)
    });
    assert_fd(&[a.clone()], |t, p| {
        let y = t.softmax_rows(p[0])?;
        contract(t, y, 11)
    });
    assert_fd(&[a.clone()], |t, p| {
        let y = t.segment_softmax(p[0], vec![1, 0, 1, 1], 3)?;
        contract(t, y, 12)
    });
    assert_fd(&[a.clone(), col.clone()], |t, p| {
        let y = t.concat_cols(&[p[1], p[0], p[1]])?;
        let z = t.slice_cols(y, 2, 4)?;
        contract(t, z, 13)
    });
    assert_fd(&[a.clone()], |t, p| {
        let y = t.gather_rows(p[0], vec![3, 0, 3, 1, 1])?;
        contract(t, y, 14)
    });
    assert_fd(&[a.clone()], |t, p| {
        let y = t.scatter_rows(p[0], vec![2, 0, 2, 2], 4, Reduce::Mean)?;
        let z = t.scatter_rows(p[0], vec![1, 1, 0, 2], 3, Reduce::Sum)?;
        let y = contract(t, y, 15)?;
        let z = contract(t, z, 16)?;
        t.add(y, z)
    });
    assert_fd(&[a.clone()], |t, p| {
        let y = t.rope(p[0], vec![0.0, 1.0, 2.0, 5.0], 10000.0)?;
        contract(t, y, 17)
    });
    assert_fd(&[col.clone()], |t, p| {
        let l = t.bce_with_logits(p[0], vec![1.0, 0.0, 0.0, 1.0])?;
        contract(t, l, 18)
    });
}

#[test]
fn reverse_mode_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut tape = Tape::new();
        let w = tape.param(rand_tensor(&mut rng, 5, 5)).unwrap();
        let x = tape.constant(rand_tensor(&mut rng, 7, 5)).unwrap();
        let h = tape.matmul(x, w).unwrap();
        let h = tape.softmax_rows(h).unwrap();
        let l = tape.sum_all(h).unwrap();
        let l = tape.log(l).unwrap();
        tape.backward_from(l, 1.0).unwrap().get(w).unwrap().clone()
    };
    assert_eq!(run().data(), run().data());
}

/// Two-layer toy with a boundary in the middle and a head above it.
struct Toy {
    tape: Tape,
    w1: Var,
    w2: Var,
    loss: Var,
    h: Var,
}

fn toy(hooked: bool) -> (Toy, Option<BoundaryHandle>) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::new();
    let x = tape.constant(rand_tensor(&mut rng, 6, 4)).unwrap();
    let w1 = tape.param(rand_tensor(&mut rng, 4, 3)).unwrap();
    let w2 = tape.param(rand_tensor(&mut rng, 3, 1)).unwrap();
    let h = tape.matmul(x, w1).unwrap();
    let h = tape.silu(h).unwrap();
    let handle = if hooked { Some(tape.mark_boundary(h).unwrap()) } else { None };
    let z = tape.matmul(h, w2).unwrap();
    let l = tape.bce_with_logits(z, vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
    let loss = tape.mean_all(l).unwrap();
    (Toy { tape, w1, w2, loss, h }, handle)
}

#[test]
fn identity_injection_reproduces_unhooked_backward_bitwise() {
    let (mut plain, _) = toy(false);
    let reference = plain.tape.backward_from(plain.loss, 1.0).unwrap();

    let (mut hooked, handle) = toy(true);
    let handle = handle.unwrap();
    let first = hooked.tape.backward_from(hooked.loss, 1.0).unwrap();
    // Above-boundary parameters are complete after the first half.
    assert_eq!(first.get(hooked.w2).unwrap().data(), reference.get(plain.w2).unwrap().data());
    assert!(first.get(hooked.w1).unwrap().data().iter().all(|&v| v == 0.0));
    assert_eq!(handle.var(), hooked.h);

    let captured = hooked.tape.boundary_grad().unwrap().clone();
    let resumed = hooked.tape.resume_backward(&handle, &captured).unwrap();
    assert_eq!(resumed.get(hooked.w1).unwrap().data(), reference.get(plain.w1).unwrap().data());
    assert_eq!(resumed.get(hooked.w2).unwrap().data(), reference.get(plain.w2).unwrap().data());
}

#[test]
fn zero_injection_silences_below_boundary() {
    let (mut t, handle) = toy(true);
    let handle = handle.unwrap();
    t.tape.backward_from(t.loss, 1.0).unwrap();
    let zero = Tensor2::zeros(6, 3);
    let g = t.tape.resume_backward(&handle, &zero).unwrap();
    assert!(g.get(t.w1).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn doubled_injection_doubles_gradients_exactly() {
    let (mut a, ha) = toy(true);
    a.tape.backward_from(a.loss, 1.0).unwrap();
    let captured = a.tape.boundary_grad().unwrap().clone();
    let once = a.tape.resume_backward(&ha.unwrap(), &captured).unwrap();

    let (mut b, hb) = toy(true);
    b.tape.backward_from(b.loss, 1.0).unwrap();
    let twice = b.tape.resume_backward(&hb.unwrap(), &captured.scaled(2.0)).unwrap();
    let expect: Vec<f64> = once.get(a.w1).unwrap().data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(twice.get(b.w1).unwrap().data(), expect.as_slice());
}

#[test]
fn contract_and_shape_errors() {
    let (mut t, handle) = toy(true);
    let handle = handle.unwrap();
    assert!(matches!(t.tape.resume_backward(&handle, &Tensor2::zeros(6, 3)), Err(AutodiffError::Contract(_))));
    assert!(matches!(t.tape.backward_from(t.h, 1.0), Err(AutodiffError::Contract(_))));
    t.tape.backward_from(t.loss, 1.0).unwrap();
    assert!(matches!(t.tape.resume_backward(&handle, &Tensor2::zeros(3, 6)), Err(AutodiffError::Dimension(_))));
    assert!(matches!(t.tape.mark_boundary(t.h), Err(AutodiffError::Contract(_))));

    let mut tape = Tape::new();
    let a = tape.constant(Tensor2::zeros(2, 3)).unwrap();
    let b = tape.constant(Tensor2::zeros(2, 3)).unwrap();
    assert!(matches!(tape.matmul(a, b), Err(AutodiffError::Dimension(_))));
    assert!(matches!(tape.rope(a, vec![1.0, 1.0], 10000.0), Err(AutodiffError::Dimension(_))));
}

#[test]
fn checked_mode_rejects_non_finite_results() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor2::scalar(-1.0)).unwrap();
    assert!(matches!(tape.log(x), Err(AutodiffError::Numeric(_))));
    let mut loose = Tape::unchecked();
    let x = loose.constant(Tensor2::scalar(-1.0)).unwrap();
    let y = loose.log(x).unwrap();
    assert!(loose.value(y).item().is_nan());
}
