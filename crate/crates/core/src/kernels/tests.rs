use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Real> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn param(shape: &[usize], data: Vec<Real>) -> Parameter {
    Parameter::new(Tensor::new(shape.to_vec(), data).unwrap())
}

fn dot(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn dense_identity() {
    let w = param(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
    let b = param(&[2], vec![0.0, 0.0]);
    let y = dense_forward(&Tensor::vector(vec![3.0, 4.0]), &w, &b).unwrap();
    assert_eq!(y.data(), &[3.0, 4.0]);
}

#[test]
fn dense_sum_row_plus_bias() {
    let w = param(&[1, 2], vec![1.0, 1.0]);
    let b = param(&[1], vec![1.0]);
    let y = dense_forward(&Tensor::vector(vec![2.0, 3.0]), &w, &b).unwrap();
    assert_eq!(y.data(), &[6.0]);
}

#[test]
fn dense_shape_mismatch_names_shapes() {
    let w = param(&[2, 3], vec![0.0; 6]);
    let b = param(&[2], vec![0.0; 2]);
    let err = dense_forward(&Tensor::vector(vec![1.0, 2.0]), &w, &b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
}

// Packs (x, W, b) into one point so every input is checked at once.
fn dense_objective(point: &[Real], n_out: usize, n_in: usize, probe: &[Real]) -> Real {
    let x = Tensor::vector(point[..n_in].to_vec());
    let w = param(&[n_out, n_in], point[n_in..n_in + n_out * n_in].to_vec());
    let b = param(&[n_out], point[n_in + n_out * n_in..].to_vec());
    dot(dense_forward(&x, &w, &b).unwrap().data(), probe)
}

#[test]
fn dense_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n_out, n_in) = (4, 3);
    let point = random_vec(&mut rng, n_in + n_out * n_in + n_out);
    let probe = random_vec(&mut rng, n_out);

    let x = Tensor::vector(point[..n_in].to_vec());
    let mut w = param(&[n_out, n_in], point[n_in..n_in + 12].to_vec());
    let mut b = param(&[n_out], point[n_in + 12..].to_vec());
    let gx = dense_backward(&x, &Tensor::vector(probe.clone()), &mut w, &mut b).unwrap();
    let analytic: Vec<Real> = gx.data().iter().chain(w.grad.data()).chain(b.grad.data()).copied().collect();

    let report =
        GradientCheck::with_tolerance(1e-6).run(|p| dense_objective(p, n_out, n_in, &probe), &point, &analytic);
    assert!(report.passed(), "max rel error {}", report.max_rel_error);
}

#[test]
fn sparse_dense_matches_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut xs = random_vec(&mut rng, 7);
    xs[1] = 0.0;
    xs[4] = 0.0;
    let mut w = param(&[5, 7], random_vec(&mut rng, 35));
    let mut b = param(&[5], random_vec(&mut rng, 5));
    let dense = dense_forward(&Tensor::vector(xs.clone()), &w, &b).unwrap();
    let sparse_x = SparseVector::from_dense(&xs);
    let sparse = sparse_dense_forward(&sparse_x, &w, &b).unwrap();
    for (a, c) in dense.data().iter().zip(sparse.data()) {
        assert!((a - c).abs() < 1e-14);
    }

    let g = Tensor::vector(random_vec(&mut rng, 5));
    let mut w2 = w.clone();
    let mut b2 = b.clone();
    dense_backward(&Tensor::vector(xs), &g, &mut w, &mut b).unwrap();
    sparse_dense_backward(&sparse_x, &g, &mut w2, &mut b2).unwrap();
    assert_eq!(w.grad, w2.grad);
    assert_eq!(b.grad, b2.grad);
}

#[test]
fn relu_forward_and_backward_examples() {
    let x = Tensor::vector(vec![-1.0, 2.0, 0.0]);
    assert_eq!(relu(&x).data(), &[0.0, 2.0, 0.0]);
    let g = relu_backward(&Tensor::vector(vec![1.0, 1.0, 1.0]), &x).unwrap();
    assert_eq!(g.data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn relu_gradients_match_finite_differences_away_from_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut point = random_vec(&mut rng, 12);
    point[3] = 0.0;
    let probe = random_vec(&mut rng, 12);
    let x = Tensor::vector(point.clone());
    let analytic = relu_backward(&Tensor::vector(probe.clone()), &x).unwrap();
    let check = GradientCheck::with_tolerance(1e-6);
    let report = check.run_excluding(
        |p| dot(relu(&Tensor::vector(p.to_vec())).data(), &probe),
        &point,
        analytic.data(),
        |i| point[i].abs() < 10.0 * check.step,
    );
    assert_eq!(report.skipped, 1);
    assert!(report.passed(), "max rel error {}", report.max_rel_error);
}

#[test]
fn conv_hand_example() {
    let f = Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let k = param(&[1, 1, 1, 2], vec![1.0, 1.0]);
    let y = conv_seq_forward(&f, &k, None, 1, Padding::Valid).unwrap();
    assert_eq!(y.shape(), &[1, 1, 2]);
    assert_eq!(y.data(), &[3.0, 5.0]);
}

#[test]
fn conv_delta_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let f = Tensor::new(vec![1, 1, 9], random_vec(&mut rng, 9)).unwrap();
    let k = param(&[1, 1, 1, 1], vec![1.0]);
    let y = conv_seq_forward(&f, &k, None, 1, Padding::Valid).unwrap();
    assert_eq!(y.data(), f.data());

    // Centered delta in a width-3 same-padded kernel.
    let k3 = param(&[1, 1, 1, 3], vec![0.0, 1.0, 0.0]);
    let y3 = conv_seq_forward(&f, &k3, None, 1, Padding::Same).unwrap();
    assert_eq!(y3.data(), f.data());
}

#[test]
fn conv_first_layer_collapses_height() {
    // A kernel spanning the full word-vector axis leaves height 1.
    let f = Tensor::new(vec![1, 4, 6], vec![0.5; 24]).unwrap();
    let k = param(&[3, 1, 4, 1], vec![1.0; 12]);
    let y = conv_seq_forward(&f, &k, None, 1, Padding::Valid).unwrap();
    assert_eq!(y.shape(), &[3, 1, 6]);
    assert!(y.data().iter().all(|&v| (v - 2.0).abs() < 1e-15));
}

#[test]
fn conv_same_padding_lengths() {
    let f = Tensor::new(vec![1, 1, 5], vec![1.0; 5]).unwrap();
    let k = param(&[1, 1, 1, 3], vec![1.0; 3]);
    let y = conv_seq_forward(&f, &k, None, 1, Padding::Same).unwrap();
    assert_eq!(y.data(), &[2.0, 3.0, 3.0, 3.0, 2.0]);
    let y2 = conv_seq_forward(&f, &k, None, 2, Padding::Same).unwrap();
    assert_eq!(y2.shape(), &[1, 1, 3]);
}

#[test]
fn conv_kernel_too_large_is_dimension_error() {
    let f = Tensor::new(vec![1, 1, 2], vec![1.0, 2.0]).unwrap();
    let k = param(&[1, 1, 1, 3], vec![1.0; 3]);
    assert!(matches!(conv_seq_forward(&f, &k, None, 1, Padding::Valid), Err(Error::Dimension { .. })));
    let tall = param(&[1, 1, 2, 1], vec![1.0; 2]);
    assert!(matches!(conv_seq_forward(&f, &tall, None, 1, Padding::Same), Err(Error::Dimension { .. })));
}

fn conv_gradcheck(stride: usize, padding: Padding, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h, len, c_out, kw) = (2, 1, 8, 3, 3);
    let nf = c * h * len;
    let nk = c_out * c * h * kw;
    let point = random_vec(&mut rng, nf + nk + c_out);
    let unpack = |p: &[Real]| {
        (
            Tensor::new(vec![c, h, len], p[..nf].to_vec()).unwrap(),
            param(&[c_out, c, h, kw], p[nf..nf + nk].to_vec()),
            param(&[c_out], p[nf + nk..].to_vec()),
        )
    };
    let (f, mut k, mut b) = unpack(&point);
    let y = conv_seq_forward(&f, &k, Some(&b), stride, padding).unwrap();
    let probe = random_vec(&mut rng, y.len());
    let grad_out = Tensor::new(y.shape().to_vec(), probe.clone()).unwrap();
    let gf = conv_seq_backward(&f, &grad_out, &mut k, Some(&mut b), stride, padding).unwrap();
    let analytic: Vec<Real> = gf.data().iter().chain(k.grad.data()).chain(b.grad.data()).copied().collect();
    let report = GradientCheck::with_tolerance(1e-5).run(
        |p| {
            let (f, k, b) = unpack(p);
            dot(conv_seq_forward(&f, &k, Some(&b), stride, padding).unwrap().data(), &probe)
        },
        &point,
        &analytic,
    );
    assert!(report.passed(), "max rel error {}", report.max_rel_error);
}

#[test]
fn conv_gradients_match_finite_differences() {
    conv_gradcheck(1, Padding::Same, 21);
    conv_gradcheck(1, Padding::Valid, 22);
    conv_gradcheck(2, Padding::Same, 23);
}

#[test]
fn maxpool_examples() {
    let f = Tensor::new(vec![1, 1, 4], vec![1.0, 3.0, 2.0, 2.0]).unwrap();
    let p = maxpool_seq(&f, 2, 2).unwrap();
    assert_eq!(p.output.data(), &[3.0, 2.0]);
    assert_eq!(p.argmax, vec![Some(1), Some(2)]);

    let short = Tensor::new(vec![1, 1, 1], vec![5.0]).unwrap();
    let p = maxpool_seq(&short, 2, 2).unwrap();
    assert_eq!(p.output.data(), &[5.0]);

    // The zero pad wins against a negative value and absorbs no gradient.
    let neg = Tensor::new(vec![1, 1, 1], vec![-5.0]).unwrap();
    let p = maxpool_seq(&neg, 2, 2).unwrap();
    assert_eq!(p.output.data(), &[0.0]);
    let g = maxpool_backward(&[1, 1, 1], &p, &Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap()).unwrap();
    assert_eq!(g.data(), &[0.0]);
}

#[test]
fn maxpool_backward_routes_to_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let f = Tensor::new(vec![3, 1, 10], random_vec(&mut rng, 30)).unwrap();
    let p = maxpool_seq(&f, 2, 2).unwrap();
    let g = Tensor::new(p.output.shape().to_vec(), random_vec(&mut rng, p.output.len())).unwrap();
    let gx = maxpool_backward(f.shape(), &p, &g).unwrap();
    for (go, idx) in g.data().iter().zip(&p.argmax) {
        assert_eq!(gx.data()[idx.unwrap()], *go);
    }
    let nonzero = gx.data().iter().filter(|v| **v != 0.0).count();
    assert_eq!(nonzero, p.output.len());
}

#[test]
fn l2norm_layer_examples() {
    let w = param(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
    let b = param(&[2], vec![0.0, 0.0]);
    let e = l2norm_layer_forward(&Tensor::vector(vec![3.0, 4.0]), &w, &b).unwrap();
    assert!((e.data()[0] - 0.6).abs() < 1e-15);
    assert!((e.data()[1] - 0.8).abs() < 1e-15);

    let err = l2norm_layer_forward(&Tensor::vector(vec![0.0, 0.0]), &w, &b).unwrap_err();
    assert!(err.to_string().contains("degenerate normalization input"));
}

#[test]
fn l2norm_layer_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (n, m) = (3, 5);
    let point = random_vec(&mut rng, m + n * m + n);
    let probe = random_vec(&mut rng, n);
    let unpack = |p: &[Real]| {
        (
            Tensor::vector(p[..m].to_vec()),
            param(&[n, m], p[m..m + n * m].to_vec()),
            param(&[n], p[m + n * m..].to_vec()),
        )
    };
    let (x, mut w, mut b) = unpack(&point);
    let gx = l2norm_layer_backward(&x, &Tensor::vector(probe.clone()), &mut w, &mut b).unwrap();
    let analytic: Vec<Real> = gx.data().iter().chain(w.grad.data()).chain(b.grad.data()).copied().collect();
    let report = GradientCheck::with_tolerance(1e-5).run(
        |p| {
            let (x, w, b) = unpack(p);
            dot(l2norm_layer_forward(&x, &w, &b).unwrap().data(), &probe)
        },
        &point,
        &analytic,
    );
    assert!(report.passed(), "max rel error {}", report.max_rel_error);
}

proptest! {
    #[test]
    fn l2norm_output_is_unit(
        x in prop::collection::vec(-10.0..10.0f64, 4),
        w in prop::collection::vec(-3.0..3.0f64, 12),
        b in prop::collection::vec(-1.0..1.0f64, 3),
    ) {
        let w = param(&[3, 4], w.into_iter().map(|v| v as Real).collect());
        let b = param(&[3], b.into_iter().map(|v| v as Real).collect());
        let x = Tensor::vector(x.into_iter().map(|v| v as Real).collect());
        if let Ok(e) = l2norm_layer_forward(&x, &w, &b) {
            prop_assert!((e.l2_norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn maxpool_backward_conserves_gradient_mass(
        len in 1usize..20,
        c in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Positive inputs so no pad ever wins.
        let data: Vec<Real> = (0..c * len).map(|_| rng.gen_range(0.1..1.0)).collect();
        let f = Tensor::new(vec![c, 1, len], data).unwrap();
        let p = maxpool_seq(&f, 2, 2).unwrap();
        let g: Vec<Real> = (0..p.output.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let total: Real = g.iter().sum();
        let gx = maxpool_backward(f.shape(), &p, &Tensor::new(p.output.shape().to_vec(), g).unwrap()).unwrap();
        let total_x: Real = gx.data().iter().sum();
        prop_assert!((total - total_x).abs() < 1e-12);
        prop_assert_eq!(p.output.shape()[2], (len.max(2) - 2) / 2 + 1);
    }

    #[test]
    fn delta_kernel_identity_on_any_input(data in prop::collection::vec(-5.0..5.0f64, 1..30)) {
        let len = data.len();
        let f = Tensor::new(vec![1, 1, len], data.iter().map(|v| *v as Real).collect()).unwrap();
        let k = param(&[1, 1, 1, 1], vec![1.0]);
        let y = conv_seq_forward(&f, &k, None, 1, Padding::Same).unwrap();
        prop_assert_eq!(y.data(), f.data());
    }
}
