use kspace::autodiff::{sigmoid, AutodiffError, ParamStore, Tape, Tensor2};
use kspace::gradcheck;
use kspace::heads::{adv_forward_loss, icl_predict, main_loss, AdversarialHead, EpisodeBatch, FrozenIclHead, ICL_EPS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor2 {
    Tensor2::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn batch(zs: Tensor2, ys: Vec<f64>, zq: Tensor2) -> EpisodeBatch {
    let yq = vec![0.0; zq.rows()];
    EpisodeBatch { z_support: zs, y_support: ys, z_query: zq, y_query: yq }
}

#[test]
fn query_matching_a_positive_support_point_saturates() {
    let head = FrozenIclHead { tau: 1e-3, eps: ICL_EPS };
    let zs = Tensor2::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0]);
    let zq = Tensor2::from_vec(1, 2, vec![1.0, 0.0]);
    let p = icl_predict(&head, &batch(zs, vec![1.0, 0.0, 0.0], zq)).unwrap();
    assert_eq!(p, vec![1.0 - ICL_EPS]);
}

#[test]
fn equidistant_balanced_support_gives_one_half() {
    let head = FrozenIclHead::new(2);
    let zs = Tensor2::from_vec(4, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
    let zq = Tensor2::zeros(1, 2);
    let p = icl_predict(&head, &batch(zs, vec![1.0, 0.0, 1.0, 0.0], zq)).unwrap();
    assert!((p[0] - 0.5).abs() < 1e-15);
}

#[test]
fn three_point_support_by_hand() {
    let head = FrozenIclHead::new(2);
    let zs = Tensor2::from_vec(3, 2, vec![1.0, 2.0, -1.0, 0.5, 0.0, -2.0]);
    let zq = Tensor2::from_vec(1, 2, vec![0.5, 1.0]);
    let tau = 2f64.sqrt();
    let s = [(0.5 + 2.0) / tau, (-0.5 + 0.5) / tau, (-2.0) / tau];
    let e: Vec<f64> = s.iter().map(|v| v.exp()).collect();
    let want = (e[0] + e[2]) / (e[0] + e[1] + e[2]);
    let p = icl_predict(&head, &batch(zs, vec![1.0, 0.0, 1.0], zq)).unwrap();
    assert!((p[0] - want).abs() < 1e-14, "{} vs {want}", p[0]);
}

#[test]
fn single_class_support_is_rejected() {
    let head = FrozenIclHead::new(2);
    let zs = Tensor2::zeros(3, 2);
    let err = icl_predict(&head, &batch(zs, vec![1.0, 1.0, 1.0], Tensor2::zeros(1, 2))).unwrap_err();
    assert!(matches!(err, AutodiffError::Contract(_)));
    let err = icl_predict(&head, &batch(Tensor2::zeros(1, 2), vec![1.0], Tensor2::zeros(1, 2))).unwrap_err();
    assert!(matches!(err, AutodiffError::Contract(_)));
}

#[test]
fn tape_and_tape_free_predictions_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let head = FrozenIclHead::new(5);
    let zs = random(&mut rng, 7, 5);
    let zq = random(&mut rng, 4, 5);
    let ys = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0];
    let mut tape = Tape::new();
    let q = tape.constant(zq.clone()).unwrap();
    let s = tape.constant(zs.clone()).unwrap();
    let p = head.predict(&mut tape, q, s, &ys).unwrap();
    let direct = head.predict_values(&zq, &zs, &ys).unwrap();
    for (a, b) in tape.value(p).data().iter().zip(&direct) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn icl_gradients_reach_query_and_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let head = FrozenIclHead::new(3);
    let zs = random(&mut rng, 5, 3);
    let zq = random(&mut rng, 3, 3);
    let ys = vec![1.0, 0.0, 1.0, 0.0, 0.0];
    let yq = vec![1.0, 0.0, 1.0];
    let check = gradcheck::check(&[zq, zs], 1e-6, |tape, v| {
        let p = head.predict(tape, v[0], v[1], &ys)?;
        main_loss(tape, p, &yq)
    })
    .unwrap();
    assert!(check.max_relative_error() < 1e-6, "{check:?}");
    assert!(check.analytic.iter().all(|g| g.data().iter().any(|x| *x != 0.0)));
}

fn loss_of(p: &[f64], y: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let pv = tape.constant(Tensor2::column(p.to_vec())).unwrap();
    let l = main_loss(&mut tape, pv, y).unwrap();
    tape.value(l).item()
}

#[test]
fn main_loss_examples() {
    assert!((loss_of(&[1.0 - ICL_EPS], &[1.0]) - 0.010050335853501).abs() < 1e-12);
    assert!((loss_of(&[0.5, 0.5], &[1.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn main_loss_matches_scalar_bce() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.gen_range(1..30);
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
        let want = -p.iter().zip(&y).map(|(p, y)| y * p.ln() + (1.0 - y) * (1.0 - p).ln()).sum::<f64>() / n as f64;
        assert!((loss_of(&p, &y) - want).abs() < 1e-12);
    }
}

fn adversary(d: usize, seed: u64) -> (ParamStore, AdversarialHead) {
    let mut store = ParamStore::new();
    let head = AdversarialHead::init(&mut store, "adv.", d, seed);
    (store, head)
}

#[test]
fn adversary_shapes() {
    let (store, head) = adversary(6, 0);
    assert_eq!(store.get(head.w1).shape(), (6, 3));
    assert_eq!(store.get(head.b1).shape(), (1, 3));
    assert_eq!(store.get(head.w2).shape(), (3, 1));
    assert_eq!(store.get(head.b2).shape(), (1, 1));
}

#[test]
fn zero_second_layer_gives_log_two_and_first_layer_direction() {
    let (mut store, head) = adversary(4, 1);
    *store.get_mut(head.w2) = Tensor2::zeros(2, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = random(&mut rng, 3, 4);
    let out = adv_forward_loss(&head, &store, &h, &[1.0, 0.0, 1.0]).unwrap();
    assert!((out.loss - 2f64.ln()).abs() < 1e-15);
    assert!(out.row_grads.data().iter().all(|g| *g == 0.0));

    // At h = 0 the hidden pre-activation is zero, silu'(0) = 1/2, so the
    // gradient is (σ(0) − y) · W1 w2 / 2.
    let (store, head) = adversary(4, 2);
    let y = [1.0, 0.0, 1.0];
    let out = adv_forward_loss(&head, &store, &Tensor2::zeros(3, 4), &y).unwrap();
    assert!((out.loss - 2f64.ln()).abs() < 1e-15);
    let w1w2 = store.get(head.w1).matmul(store.get(head.w2));
    for (i, yi) in y.iter().enumerate() {
        for j in 0..4 {
            let want = (0.5 - yi) * 0.5 * w1w2.get(j, 0);
            assert!((out.row_grads.get(i, j) - want).abs() < 1e-15);
        }
    }
}

#[test]
fn per_row_gradient_is_own_loss_derivative() {
    let (store, head) = adversary(5, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = random(&mut rng, 4, 5);
    let y = [1.0, 0.0, 0.0, 1.0];
    let out = adv_forward_loss(&head, &store, &h, &y).unwrap();
    let eps = 1e-6;
    for i in 0..4 {
        for j in 0..5 {
            let loss_i = |delta: f64| {
                let mut hp = h.clone();
                hp.row_mut(i)[j] += delta;
                let z = head.predict_logits(&store, &hp).unwrap()[i];
                let p = sigmoid(z);
                -(y[i] * p.ln() + (1.0 - y[i]) * (1.0 - p).ln())
            };
            let fd = (loss_i(eps) - loss_i(-eps)) / (2.0 * eps);
            let g = out.row_grads.row(i)[j];
            assert!((g - fd).abs() <= 1e-7 * (1.0 + fd.abs()), "row {i} col {j}: {g} vs {fd}");
        }
    }
}

#[test]
fn adversary_parameter_gradients_match_finite_differences() {
    let (store, head) = adversary(4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = random(&mut rng, 6, 4);
    let y = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
    let out = adv_forward_loss(&head, &store, &h, &y).unwrap();
    let params: Vec<Tensor2> = head.ids().iter().map(|&id| store.get(id).clone()).collect();
    let check = gradcheck::check(&params, 1e-6, |tape, v| {
        let hv = tape.constant(h.clone())?;
        let a = tape.linear(hv, v[0], v[1])?;
        let a = tape.silu(a)?;
        let z = tape.linear(a, v[2], v[3])?;
        let l = tape.bce_with_logits(z, y.clone())?;
        tape.mean_all(l)
    })
    .unwrap();
    assert!(check.max_relative_error() < 1e-6, "{check:?}");
    for ((_, g), want) in out.param_grads.iter().zip(&check.analytic) {
        assert!(gradcheck::relative_error(g, want) < 1e-12);
    }
}

#[test]
fn duplicated_row_duplicates_its_gradient() {
    let (store, head) = adversary(4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = random(&mut rng, 3, 4);
    let y = [1.0, 0.0, 1.0];
    let out = adv_forward_loss(&head, &store, &h, &y).unwrap();
    let h2 = h.gather_rows(&[0, 1, 2, 1]);
    let out2 = adv_forward_loss(&head, &store, &h2, &[1.0, 0.0, 1.0, 0.0]).unwrap();
    assert_eq!(out2.row_grads.row(3), out2.row_grads.row(1));
    assert_eq!(out2.row_grads.row(1), out.row_grads.row(1));
}

#[test]
fn mismatched_labels_are_rejected() {
    let (store, head) = adversary(4, 6);
    assert!(adv_forward_loss(&head, &store, &Tensor2::zeros(2, 4), &[1.0]).is_err());
    assert!(adv_forward_loss(&head, &store, &Tensor2::zeros(0, 4), &[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn icl_probabilities_stay_clamped(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.gen_range(1..8);
        let ns = rng.gen_range(2..12);
        let mut ys: Vec<f64> = (0..ns).map(|_| rng.gen_range(0..2) as f64).collect();
        ys[0] = 0.0;
        ys[1] = 1.0;
        let zs = random(&mut rng, ns, d).scaled(scale);
        let zq = random(&mut rng, 5, d).scaled(scale);
        let head = FrozenIclHead::new(d);
        for p in head.predict_values(&zq, &zs, &ys).unwrap() {
            prop_assert!((ICL_EPS..=1.0 - ICL_EPS).contains(&p));
        }
    }
}
