//! Finite-difference checks for every tape primitive plus tape-level properties.

use std::sync::Arc;

use hcmgnn::numerics::{grad_check, GradCheckConfig, Matrix, NumericsError, Segments, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type R = Result<Tensor, NumericsError>;

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn check(f: impl Fn(&mut Tape, &[Tensor]) -> R, inputs: &[Matrix]) {
    let cfg = GradCheckConfig { h: 1e-6, tol: 1e-5, ..Default::default() };
    let r = grad_check(f, inputs, cfg).unwrap();
    assert!(r.passed, "{r:?}");
    assert!(r.checked > 0);
}

/// Weighted sum against a fixed random matrix so every output entry matters.
fn project(t: &mut Tape, y: Tensor, seed: u64) -> R {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = t.constant(rand_matrix(&mut rng, y.rows(), y.cols()));
    let p = t.hadamard(y, w)?;
    Ok(t.sum(p))
}

#[test]
fn primitive_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = rand_matrix(&mut rng, 3, 4);
    let b = rand_matrix(&mut rng, 4, 2);
    let c = rand_matrix(&mut rng, 3, 4);
    let row = rand_matrix(&mut rng, 1, 4);
    let s = rand_matrix(&mut rng, 1, 1);

    check(|t, x| { let y = t.matmul(x[0], x[1])?; project(t, y, 1) }, &[a.clone(), b.clone()]);
    check(|t, x| { let y = t.transpose(x[0]); project(t, y, 2) }, &[a.clone()]);
    check(|t, x| { let y = t.add(x[0], x[1])?; project(t, y, 3) }, &[a.clone(), c.clone()]);
    check(|t, x| { let y = t.sub(x[0], x[1])?; project(t, y, 4) }, &[a.clone(), c.clone()]);
    check(|t, x| { let y = t.hadamard(x[0], x[1])?; project(t, y, 5) }, &[a.clone(), c.clone()]);
    check(|t, x| { let y = t.scale(x[0], -2.5); project(t, y, 6) }, &[a.clone()]);
    check(|t, x| { let y = t.add_row(x[0], x[1])?; project(t, y, 7) }, &[a.clone(), row.clone()]);
    check(|t, x| { let y = t.mul_row(x[0], x[1])?; project(t, y, 8) }, &[a.clone(), row.clone()]);
    check(|t, x| { let y = t.scale_by(x[0], x[1])?; project(t, y, 9) }, &[a.clone(), s.clone()]);
    check(|t, x| { let y = t.concat_cols(&[x[0], x[1], x[0]])?; project(t, y, 10) }, &[a.clone(), c.clone()]);
    check(|t, x| { let y = t.slice_cols(x[0], 1, 3)?; project(t, y, 11) }, &[a.clone()]);
    let idx = Arc::new(vec![2, 0, 2, 1]);
    check(|t, x| { let y = t.gather_rows(x[0], &idx)?; project(t, y, 12) }, &[a.clone()]);
    check(|t, x| { let y = t.row_softmax(x[0])?; project(t, y, 13) }, &[a.clone()]);
    let seg = Arc::new(Segments::from_sorted_keys(&[0, 0, 3], 4).unwrap());
    check(|t, x| { let y = t.segment_softmax(x[0], &seg)?; project(t, y, 14) }, &[a.clone()]);
    check(|t, x| { let y = t.segment_mean(x[0], &seg)?; project(t, y, 15) }, &[a.clone()]);
    check(|t, x| { let y = t.mean_rows(x[0])?; project(t, y, 16) }, &[a.clone()]);
    let rows = Arc::new(vec![1, 1, 0]);
    let w = rand_matrix(&mut rng, 3, 1);
    check(
        |t, x| { let y = t.segment_weighted_sum(x[0], &rows, x[1], &seg)?; project(t, y, 17) },
        &[a.clone(), w],
    );
    check(|t, x| { let y = t.leaky_relu(x[0], 0.01); project(t, y, 18) }, &[a.clone()]);
    check(|t, x| { let y = t.elu(x[0]); project(t, y, 19) }, &[a.clone()]);
    check(|t, x| { let y = t.tanh(x[0]); project(t, y, 20) }, &[a.clone()]);
    check(|t, x| { let y = t.sigmoid(x[0]); project(t, y, 21) }, &[a.clone()]);
    check(|t, x| Ok(t.sq_sum(x[0])), &[a.clone()]);
    check(|t, x| Ok(t.sum(x[0])), &[a.clone()]);

    // Three positions over two node tables, with a repeated table.
    let h2 = rand_matrix(&mut rng, 2, 4);
    let r1 = rand_matrix(&mut rng, 1, 4);
    let r2 = rand_matrix(&mut rng, 1, 4);
    let inst = Arc::new(vec![0, 1, 2, 2, 0, 1, 1, 1, 0]);
    check(
        |t, x| { let y = t.path_encode(&[x[0], x[1], x[0]], &[x[2], x[3]], &inst)?; project(t, y, 22) },
        &[a.clone(), h2, r1, r2],
    );
}

/// Three dense layers with mixed activations and a softmax head.
fn composite(t: &mut Tape, x: &[Tensor]) -> R {
    let h1 = t.matmul(x[0], x[1])?;
    let h1 = t.add_row(h1, x[2])?;
    let h1 = t.tanh(h1);
    let h2 = t.matmul(h1, x[3])?;
    let h2 = t.elu(h2);
    let h3 = t.matmul(h2, x[4])?;
    let h3 = t.row_softmax(h3)?;
    let s = t.sigmoid(h3);
    Ok(t.sq_sum(s))
}

#[test]
fn random_three_layer_composite() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let inputs = vec![
            rand_matrix(&mut rng, 4, 5),
            rand_matrix(&mut rng, 5, 6),
            rand_matrix(&mut rng, 1, 6),
            rand_matrix(&mut rng, 6, 3),
            rand_matrix(&mut rng, 3, 3),
        ];
        let cfg = GradCheckConfig { h: 1e-6, tol: 1e-5, ..Default::default() };
        let r = grad_check(composite, &inputs, cfg).unwrap();
        assert!(r.passed, "seed {seed}: {r:?}");
    }
}

#[test]
fn backward_is_linear_in_summed_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = rand_matrix(&mut rng, 3, 3);
    let f = |t: &mut Tape, x: Tensor| -> R {
        let y = t.tanh(x);
        let y = t.matmul(y, x)?;
        Ok(t.sq_sum(y))
    };
    let g = |t: &mut Tape, x: Tensor| -> R {
        let y = t.sigmoid(x);
        let y = t.row_softmax(y)?;
        project(t, y, 77)
    };
    let grad_of = |which: u8| {
        let mut t = Tape::new();
        let x = t.param(x0.clone());
        let loss = match which {
            0 => f(&mut t, x).unwrap(),
            1 => g(&mut t, x).unwrap(),
            _ => {
                let a = f(&mut t, x).unwrap();
                let b = g(&mut t, x).unwrap();
                t.add(a, b).unwrap()
            }
        };
        t.backward(loss).unwrap();
        t.grad(x).unwrap().clone()
    };
    let (gf, gg, gs) = (grad_of(0), grad_of(1), grad_of(2));
    for i in 0..gs.data().len() {
        assert!((gs.data()[i] - gf.data()[i] - gg.data()[i]).abs() < 1e-12);
    }
}

#[test]
fn every_reachable_param_gets_a_gradient() {
    let mut t = Tape::new();
    let a = t.param(Matrix::filled(2, 2, 0.5));
    let b = t.param(Matrix::filled(2, 2, -0.5));
    let unused = t.param(Matrix::filled(1, 1, 1.0));
    let c = t.constant(Matrix::identity(2));
    let y = t.matmul(a, b).unwrap();
    let y = t.hadamard(y, c).unwrap();
    let loss = t.sum(y);
    t.backward(loss).unwrap();
    assert!(t.grad(a).is_some() && t.grad(b).is_some() && t.grad(y).is_some());
    assert!(t.grad(unused).is_none());
    assert!(t.grad(c).is_none());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in prop::collection::vec(-50.0f64..50.0, 1..40), cols in 1usize..6) {
        let rows = vals.len() / cols;
        prop_assume!(rows > 0);
        let m = Matrix::from_vec(rows, cols, vals[..rows * cols].to_vec()).unwrap();
        let mut t = Tape::new();
        let x = t.constant(m.clone());
        let y = t.row_softmax(x).unwrap();
        for r in 0..rows {
            let row = t.value(y).row(r);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        // bit-identical on re-evaluation
        let mut t2 = Tape::new();
        let x2 = t2.constant(m);
        let y2 = t2.row_softmax(x2).unwrap();
        prop_assert_eq!(t.value(y), t2.value(y2));
    }

    #[test]
    fn segment_softmax_groups_are_distributions(keys in prop::collection::vec(0usize..6, 1..30)) {
        let mut keys = keys;
        keys.sort_unstable();
        let n = keys.len();
        let seg = Arc::new(Segments::from_sorted_keys(&keys, 6).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let mut t = Tape::new();
        let x = t.constant(rand_matrix(&mut rng, n, 2));
        let y = t.segment_softmax(x, &seg).unwrap();
        for (_, range) in seg.iter() {
            for c in 0..2 {
                let s: f64 = range.clone().map(|r| t.value(y).get(r, c)).sum();
                prop_assert!((s - 1.0).abs() <= 1e-9);
            }
        }
    }
}

