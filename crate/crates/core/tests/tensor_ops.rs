use molfrag::tensor::{grad_check, Graph, ParamStore, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Store with parameters `p0..` of the given shapes.
fn store(shapes: &[(usize, usize)], seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for (i, &(r, c)) in shapes.iter().enumerate() {
        s.add(format!("p{i}"), random(&mut rng, r, c));
    }
    s
}

/// Reduces any tensor to a scalar with a fixed random weighting so every
/// output coordinate matters.
fn weigh(g: &mut Graph<'_>, y: Var, seed: u64) -> Result<Var, TensorError> {
    let (r, c) = g.shape(y);
    let w = random(&mut ChaCha8Rng::seed_from_u64(seed), r, c);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn assert_grads(shapes: &[(usize, usize)], f: impl Fn(&mut Graph<'_>, &[Var]) -> Result<Var, TensorError>) {
    let s = store(shapes, 7);
    let report = grad_check(&s, |g| {
        let vars: Vec<Var> = (0..shapes.len()).map(|i| g.param(i)).collect();
        let y = f(g, &vars)?;
        if g.shape(y) == (1, 1) {
            Ok(y)
        } else {
            weigh(g, y, 99)
        }
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-6, "{:?}", report.per_param);
}

#[test]
fn quadratic_exact() {
    let s = store(&[(3, 4)], 1);
    let report = grad_check(&s, |g| {
        let x = g.param(0);
        let sq = g.mul(x, x)?;
        Ok(g.sum(sq))
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-7);
    assert_eq!(report.coordinates, 12);
}

#[test]
fn arithmetic_ops() {
    assert_grads(&[(3, 4), (4, 2)], |g, v| g.matmul(v[0], v[1]));
    assert_grads(&[(3, 4), (5, 4)], |g, v| g.matmul_nt(v[0], v[1]));
    assert_grads(&[(3, 4), (3, 4)], |g, v| {
        let a = g.add(v[0], v[1])?;
        let b = g.sub(a, v[1])?;
        let c = g.mul(b, v[1])?;
        Ok(g.scale(c, 0.7))
    });
    assert_grads(&[(3, 4), (1, 4)], |g, v| g.add_row(v[0], v[1]));
    assert_grads(&[(3, 4), (1, 1)], |g, v| g.mul_scalar(v[0], v[1]));
    assert_grads(&[(3, 4), (3, 1)], |g, v| g.mul_col(v[0], v[1]));
    assert_grads(&[(3, 4)], |g, v| {
        g.mul_const(
            v[0],
            Tensor::from_vec(3, 4, (0..12).map(|i| (i % 3) as f64).collect()).unwrap(),
        )
    });
}

#[test]
fn nonlinearities() {
    assert_grads(&[(3, 4)], |g, v| Ok(g.sigmoid(v[0])));
    assert_grads(&[(3, 4)], |g, v| {
        let x = g.scale(v[0], 3.0);
        Ok(g.gelu(x))
    });
    assert_grads(&[(3, 5)], |g, v| g.softmax_rows(v[0], None));
    assert_grads(&[(3, 5)], |g, v| {
        g.softmax_rows(v[0], Some(&[true, false, true, true, false]))
    });
    assert_grads(&[(3, 6), (1, 6), (1, 6)], |g, v| g.layer_norm(v[0], v[1], v[2]));
}

#[test]
fn indexing_ops() {
    assert_grads(&[(5, 3)], |g, v| g.rows(v[0], &[4, 0, 4, 2]));
    assert_grads(&[(2, 3), (2, 2)], |g, v| g.concat_cols(&[v[0], v[1]]));
    assert_grads(&[(2, 3), (1, 3)], |g, v| g.concat_rows(&[v[0], v[1]]));
    assert_grads(&[(3, 5)], |g, v| g.slice_cols(v[0], 1, 3));
    assert_grads(&[(5, 3)], |g, v| g.segment_sum(v[0], &[0, 2, 0, 1, 2], 3));
    assert_grads(&[(5, 1)], |g, v| g.segment_softmax(v[0], &[0, 1, 0, 1, 1], 2));
    assert_grads(&[(3, 2), (3, 2)], |g, v| g.where_rows(&[true, false, true], v[0], v[1]));
    let idx = [Some(0), None, Some(2), Some(1), Some(1), None, Some(0), Some(2), None];
    assert_grads(&[(3, 2)], |g, v| g.bias_gather(v[0], 1, &idx, 3));
}

#[test]
fn losses() {
    assert_grads(&[(4, 5)], |g, v| g.cross_entropy(v[0], &[1, 0, 4, 1], None));
    assert_grads(&[(4, 5)], |g, v| {
        g.cross_entropy(v[0], &[1, 0, 4, 1], Some(&[1.0, 2.0, 0.5, 1.0, 3.0]))
    });
    let targets = Tensor::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
    let valid = [true, true, false, true, true, true];
    assert_grads(&[(3, 2)], |g, v| {
        g.bce_with_logits(v[0], &targets, &valid, Some(&[3.0, 0.5]))
    });
    assert_grads(&[(3, 2)], |g, v| g.mse(v[0], &targets, &valid));
    assert_grads(&[(3, 2)], |g, v| Ok(g.mean(v[0])));
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    let x = g.constant(Tensor::full(2, 4, 3.3));
    let y = g.softmax_rows(x, None).unwrap();
    assert!(g.value(y).data.iter().all(|&p| (p - 0.25).abs() < 1e-15));
    let y = g.softmax_rows(x, Some(&[true, false, true, false])).unwrap();
    assert_eq!(g.value(y).row(0), &[0.5, 0.0, 0.5, 0.0]);
    for i in 0..2 {
        assert!((g.value(y).row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn extreme_logits_stay_finite() {
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    let x = g.input(Tensor::from_vec(1, 3, vec![1000.0, -1000.0, 999.0]).unwrap());
    let y = g.softmax_rows(x, None).unwrap();
    assert!(g.value(y).is_finite());
    let l = g.cross_entropy(x, &[1], None).unwrap();
    assert!(g.value(l).is_finite());
    let b = g
        .bce_with_logits(
            x,
            &Tensor::from_vec(1, 3, vec![1.0, 0.0, 1.0]).unwrap(),
            &[true; 3],
            None,
        )
        .unwrap();
    assert!(g.value(b).is_finite());
    assert!(g.backward(l).of(x).unwrap().is_finite());
}

#[test]
fn layernorm_of_constant_is_zero() {
    let mut s = ParamStore::new();
    let gamma = s.add("g", Tensor::full(1, 4, 1.0));
    let beta = s.add("b", Tensor::zeros(1, 4));
    let mut g = Graph::new(&s);
    let x = g.constant(Tensor::full(2, 4, 5.0));
    let (gv, bv) = (g.param(gamma), g.param(beta));
    let y = g.layer_norm(x, gv, bv).unwrap();
    assert!(g.value(y).data.iter().all(|&v| v == 0.0));
}

#[test]
fn unused_embedding_row_gets_exact_zero() {
    let s = store(&[(4, 3)], 3);
    let mut g = Graph::new(&s);
    let t = g.param(0);
    let e = g.rows(t, &[0, 2, 2]).unwrap();
    let l = weigh(&mut g, e, 5).unwrap();
    let grads = g.backward(l).params;
    let gt = grads.get(0).unwrap();
    assert!(gt.row(1).iter().all(|&x| x == 0.0));
    assert!(gt.row(3).iter().all(|&x| x == 0.0));
    assert!(gt.row(2).iter().any(|&x| x != 0.0));
}

#[test]
fn frozen_params_receive_nothing() {
    let s = store(&[(2, 2), (2, 2)], 4);
    let trainable = [true, false];
    let mut g = Graph::with_trainable(&s, &trainable);
    let (a, b) = (g.param(0), g.param(1));
    let y = g.matmul(a, b).unwrap();
    let l = g.sum(y);
    let grads = g.backward(l).params;
    assert!(grads.get(0).is_some());
    assert!(grads.get(1).is_none());
}

#[test]
fn shape_errors() {
    let s = store(&[(2, 3), (2, 3)], 2);
    let mut g = Graph::new(&s);
    let (a, b) = (g.param(0), g.param(1));
    assert!(matches!(g.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
    assert!(matches!(g.rows(a, &[5]), Err(TensorError::IndexOutOfRange { .. })));
}
