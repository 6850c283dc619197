use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Wraps an op under test into a deterministic weighted-sum scalar loss and
/// compares recorded gradients of every input against central differences.
fn check_op_gradients<F>(inputs: &[Tensor], op: F) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, TensorError>,
{
    let build = |g: &mut Graph, ids: &[NodeId]| {
        let out = op(g, ids)?;
        let shape = g.value(out).shape().to_vec();
        let weights: Vec<f64> = (0..g.value(out).len())
            .map(|i| ((i as f64 + 1.0) * 0.7).sin() + 0.2)
            .collect();
        let w = g.constant(Tensor::new(shape, weights)?);
        let prod = g.mul(out, w)?;
        Ok(g.sum_all(prod))
    };
    finite_diff_check(build, inputs, 1e-5).unwrap()
}

// Independent straight-loop convolution, organized output-element-first.
fn naive_conv(
    input: &[f64],
    n: usize,
    d_in: usize,
    kernel: &[f64],
    k: usize,
    d_out: usize,
    bias: &[f64],
) -> Vec<f64> {
    let half = (k / 2) as isize;
    let mut out = vec![0.0; n * d_out];
    for j in 0..n {
        for o in 0..d_out {
            let mut acc = bias[o];
            for t in 0..k {
                let src = j as isize + t as isize - half;
                if src < 0 || src >= n as isize {
                    continue;
                }
                for c in 0..d_in {
                    acc += input[src as usize * d_in + c] * kernel[(t * d_in + c) * d_out + o];
                }
            }
            out[j * d_out + o] = acc;
        }
    }
    out
}

fn naive_matmul(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        for k in 0..r {
            let mut acc = 0.0;
            for j in 0..q {
                acc += a[i * q + j] * b[j * r + k];
            }
            out[i * r + k] = acc;
        }
    }
    out
}

fn naive_softmax(row: &[f64]) -> Vec<f64> {
    let sum: f64 = row.iter().map(|v| v.exp()).sum();
    row.iter().map(|v| v.exp() / sum).collect()
}

// tanh via its exponential definition, for cross-checking the library call.
fn reference_tanh(x: f64) -> f64 {
    let e = (2.0 * x).exp();
    (e - 1.0) / (e + 1.0)
}

#[test]
fn conv_identity_kernel() {
    let mut g = Graph::new();
    let input = g.constant(Tensor::matrix(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let kernel = g.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
    let bias = g.constant(Tensor::row(vec![0.0]));
    let out = g.conv1d_same(input, kernel, bias).unwrap();
    assert_eq!(g.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(g.value(out).shape(), &[4, 1]);
}

#[test]
fn conv_center_tap_delta_kernel() {
    let mut g = Graph::new();
    let input = g.constant(Tensor::matrix(5, 1, vec![2.0, -1.0, 0.5, 3.0, -2.0]).unwrap());
    let kernel = g.constant(Tensor::new(vec![3, 1, 1], vec![0.0, 1.0, 0.0]).unwrap());
    let bias = g.constant(Tensor::row(vec![0.0]));
    let out = g.conv1d_same(input, kernel, bias).unwrap();
    assert_eq!(g.value(out).data(), &[2.0, -1.0, 0.5, 3.0, -2.0]);
}

#[test]
fn conv_matches_naive_loop_oracle() {
    let mut r = rng(11);
    for _ in 0..50 {
        let n = r.gen_range(1..9);
        let k = 2 * r.gen_range(0..3) + 1;
        let d_in = r.gen_range(1..4);
        let d_out = r.gen_range(1..4);
        let input = random_tensor(&mut r, vec![n, d_in]);
        let kernel = random_tensor(&mut r, vec![k, d_in, d_out]);
        let bias = random_tensor(&mut r, vec![1, d_out]);
        let expected = naive_conv(input.data(), n, d_in, kernel.data(), k, d_out, bias.data());

        let mut g = Graph::new();
        let i = g.constant(input);
        let kn = g.constant(kernel);
        let b = g.constant(bias);
        let out = g.conv1d_same(i, kn, b).unwrap();
        for (a, e) in g.value(out).data().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12, "conv mismatch: {a} vs {e}");
        }
    }
}

#[test]
fn conv_rejects_even_kernel() {
    let mut g = Graph::new();
    let input = g.constant(Tensor::matrix(4, 1, vec![0.0; 4]).unwrap());
    let kernel = g.constant(Tensor::new(vec![2, 1, 1], vec![0.0; 2]).unwrap());
    let bias = g.constant(Tensor::row(vec![0.0]));
    assert_eq!(
        g.conv1d_same(input, kernel, bias),
        Err(TensorError::EvenKernel(2))
    );
}

#[test]
fn elementwise_fixed_points() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(vec![0.0, -3.0, 3.0]));
    let s = g.sigmoid(x);
    assert_eq!(g.value(s).data()[0], 0.5);
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 3.0]);
}

#[test]
fn tanh_matches_exponential_reference() {
    let mut r = rng(12);
    let mut g = Graph::new();
    let values: Vec<f64> = (0..100).map(|_| r.gen_range(-5.0..5.0)).collect();
    let x = g.constant(Tensor::row(values.clone()));
    let y = g.tanh(x);
    for (out, v) in g.value(y).data().iter().zip(&values) {
        assert!((out - reference_tanh(*v)).abs() < 1e-12);
    }
}

#[test]
fn softmax_uniform_and_closed_form() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(vec![0.0, 0.0, 0.0]));
    let y = g.softmax(x).unwrap();
    for v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = g.constant(Tensor::row(vec![2.0f64.ln(), 0.0]));
    let y = g.softmax(x).unwrap();
    assert!((g.value(y).data()[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((g.value(y).data()[1] - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn softmax_matches_naive_oracle() {
    let mut r = rng(13);
    let values: Vec<f64> = (0..9).map(|_| r.gen_range(-4.0..4.0)).collect();
    let expected = naive_softmax(&values);
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(values));
    let y = g.softmax(x).unwrap();
    for (a, e) in g.value(y).data().iter().zip(&expected) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn matmul_identity_returns_operand() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::matrix(2, 2, vec![3.0, -1.0, 4.0, 2.5]).unwrap());
    let eye = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let out = g.matmul(a, eye).unwrap();
    assert_eq!(g.value(out).data(), g.value(a).data());
}

#[test]
fn matmul_matches_naive_oracle() {
    let mut r = rng(14);
    for _ in 0..50 {
        let (p, q, rr) = (r.gen_range(1..7), r.gen_range(1..7), r.gen_range(1..7));
        let a = random_tensor(&mut r, vec![p, q]);
        let b = random_tensor(&mut r, vec![q, rr]);
        let expected = naive_matmul(a.data(), b.data(), p, q, rr);
        let mut g = Graph::new();
        let na = g.constant(a);
        let nb = g.constant(b);
        let out = g.matmul(na, nb).unwrap();
        for (x, e) in g.value(out).data().iter().zip(&expected) {
            assert!((x - e).abs() < 1e-12);
        }
    }
}

#[test]
fn concat_rows_preserves_order() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::matrix(2, 3, (0..6).map(f64::from).collect()).unwrap());
    let b = g.constant(Tensor::matrix(4, 3, (6..18).map(f64::from).collect()).unwrap());
    let out = g.concat(0, &[a, b]).unwrap();
    assert_eq!(g.value(out).shape(), &[6, 3]);
    let expected: Vec<f64> = (0..18).map(f64::from).collect();
    assert_eq!(g.value(out).data(), expected.as_slice());
}

#[test]
fn concat_cols_interleaves_rows() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap());
    let b = g.constant(Tensor::matrix(2, 2, vec![10.0, 11.0, 30.0, 31.0]).unwrap());
    let out = g.concat(1, &[a, b]).unwrap();
    assert_eq!(g.value(out).shape(), &[2, 3]);
    assert_eq!(g.value(out).data(), &[1.0, 10.0, 11.0, 3.0, 30.0, 31.0]);
}

#[test]
fn backward_of_sum_is_ones() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::row(vec![1.0, 2.0, 3.0]), true);
    let s = g.sum_all(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_of_sigmoid_at_zero_is_quarter() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(0.0), true);
    let y = g.sigmoid(x);
    let s = g.sum_all(y);
    g.backward(s).unwrap();
    assert!((g.grad(x).unwrap().data()[0] - 0.25).abs() < 1e-15);
}

#[test]
fn shared_input_accumulates_sum_of_consumer_gradients() {
    // x feeds two consumers in one graph; gradient must equal the sum of
    // the gradients from two single-consumer graphs.
    let data = Tensor::row(vec![0.3, -0.7, 1.1]);

    let mut g = Graph::new();
    let x = g.leaf(data.clone(), true);
    let t = g.tanh(x);
    let s = g.sigmoid(x);
    let both = g.add(t, s).unwrap();
    let loss = g.sum_all(both);
    g.backward(loss).unwrap();
    let combined = g.grad(x).unwrap();

    let grad_of = |single: fn(&mut Graph, NodeId) -> NodeId| {
        let mut g = Graph::new();
        let x = g.leaf(data.clone(), true);
        let y = single(&mut g, x);
        let loss = g.sum_all(y);
        g.backward(loss).unwrap();
        g.grad(x).unwrap()
    };
    let gt = grad_of(|g, x| g.tanh(x));
    let gs = grad_of(|g, x| g.sigmoid(x));
    for i in 0..3 {
        let expected = gt.data()[i] + gs.data()[i];
        assert!((combined.data()[i] - expected).abs() < 1e-15);
    }
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::row(vec![1.0, 2.0]), true);
    assert_eq!(g.backward(x), Err(TensorError::NotScalar(vec![1, 2])));
}

#[test]
fn backward_rejects_foreign_node() {
    let mut g = Graph::new();
    assert_eq!(g.backward(NodeId(5)), Err(TensorError::DetachedTensor));
}

#[test]
fn finite_diff_of_constant_is_zero() {
    let err = finite_diff_check(
        |g, _ids| {
            let c = g.constant(Tensor::scalar(4.2));
            Ok(g.sum_all(c))
        },
        &[Tensor::row(vec![1.0, -2.0])],
        1e-5,
    )
    .unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn finite_diff_of_half_norm_squared() {
    // f = 0.5 * sum(theta^2), analytic gradient theta itself.
    let theta = Tensor::row(vec![0.4, -1.3, 2.2, 0.0]);
    let err = finite_diff_check(
        |g, ids| {
            let sq = g.mul(ids[0], ids[0])?;
            let s = g.sum_all(sq);
            Ok(g.scale(s, 0.5))
        },
        &[theta],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-9, "quadratic gradient error {err}");
}

#[test]
fn gradients_of_every_op_match_finite_differences() {
    let mut r = rng(15);

    // conv1d_same
    let err = check_op_gradients(
        &[
            random_tensor(&mut r, vec![6, 3]),
            random_tensor(&mut r, vec![3, 3, 2]),
            random_tensor(&mut r, vec![1, 2]),
        ],
        |g, ids| g.conv1d_same(ids[0], ids[1], ids[2]),
    );
    assert!(err < 1e-4, "conv gradient error {err}");

    // matmul
    let err = check_op_gradients(
        &[
            random_tensor(&mut r, vec![4, 3]),
            random_tensor(&mut r, vec![3, 5]),
        ],
        |g, ids| g.matmul(ids[0], ids[1]),
    );
    assert!(err < 1e-4, "matmul gradient error {err}");

    // softmax
    let err = check_op_gradients(&[random_tensor(&mut r, vec![3, 4])], |g, ids| {
        g.softmax(ids[0])
    });
    assert!(err < 1e-4, "softmax gradient error {err}");

    // tanh / sigmoid
    let err = check_op_gradients(&[random_tensor(&mut r, vec![2, 5])], |g, ids| {
        Ok(g.tanh(ids[0]))
    });
    assert!(err < 1e-4, "tanh gradient error {err}");
    let err = check_op_gradients(&[random_tensor(&mut r, vec![2, 5])], |g, ids| {
        Ok(g.sigmoid(ids[0]))
    });
    assert!(err < 1e-4, "sigmoid gradient error {err}");

    // relu, inputs kept away from the kink at zero
    let relu_in = Tensor::matrix(
        2,
        4,
        (0..8)
            .map(|i| if i % 2 == 0 { 0.3 + i as f64 } else { -0.4 - i as f64 })
            .collect(),
    )
    .unwrap();
    let err = check_op_gradients(&[relu_in], |g, ids| Ok(g.relu(ids[0])));
    assert!(err < 1e-4, "relu gradient error {err}");

    // transpose, scale, add, mul, add_bias
    let err = check_op_gradients(&[random_tensor(&mut r, vec![3, 2])], |g, ids| {
        g.transpose(ids[0])
    });
    assert!(err < 1e-4, "transpose gradient error {err}");
    let err = check_op_gradients(&[random_tensor(&mut r, vec![2, 3])], |g, ids| {
        Ok(g.scale(ids[0], -1.7))
    });
    assert!(err < 1e-4, "scale gradient error {err}");
    let err = check_op_gradients(
        &[
            random_tensor(&mut r, vec![2, 3]),
            random_tensor(&mut r, vec![2, 3]),
        ],
        |g, ids| g.add(ids[0], ids[1]),
    );
    assert!(err < 1e-4, "add gradient error {err}");
    let err = check_op_gradients(
        &[
            random_tensor(&mut r, vec![2, 3]),
            random_tensor(&mut r, vec![2, 3]),
        ],
        |g, ids| g.mul(ids[0], ids[1]),
    );
    assert!(err < 1e-4, "mul gradient error {err}");
    let err = check_op_gradients(
        &[
            random_tensor(&mut r, vec![4, 3]),
            random_tensor(&mut r, vec![1, 3]),
        ],
        |g, ids| g.add_bias(ids[0], ids[1]),
    );
    assert!(err < 1e-4, "add_bias gradient error {err}");

    // concat on both axes
    let err = check_op_gradients(
        &[
            random_tensor(&mut r, vec![2, 3]),
            random_tensor(&mut r, vec![4, 3]),
        ],
        |g, ids| g.concat(0, ids),
    );
    assert!(err < 1e-4, "concat rows gradient error {err}");
    let err = check_op_gradients(
        &[
            random_tensor(&mut r, vec![3, 2]),
            random_tensor(&mut r, vec![3, 4]),
        ],
        |g, ids| g.concat(1, ids),
    );
    assert!(err < 1e-4, "concat cols gradient error {err}");

    // slice_rows, mean_rows
    let err = check_op_gradients(&[random_tensor(&mut r, vec![5, 3])], |g, ids| {
        g.slice_rows(ids[0], 1, 3)
    });
    assert!(err < 1e-4, "slice_rows gradient error {err}");
    let err = check_op_gradients(&[random_tensor(&mut r, vec![5, 3])], |g, ids| {
        g.mean_rows(ids[0])
    });
    assert!(err < 1e-4, "mean_rows gradient error {err}");

    // gather, including repeated and padding ids
    let err = check_op_gradients(&[random_tensor(&mut r, vec![6, 3])], |g, ids| {
        g.gather(ids[0], &[2, 0, 5, 2, 1])
    });
    assert!(err < 1e-4, "gather gradient error {err}");

    // binary cross-entropy against both targets
    for target in [0.0, 1.0] {
        let pred = Tensor::scalar(0.37);
        let err = finite_diff_check(
            |g, ids| g.binary_cross_entropy(ids[0], target),
            &[pred],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "bce gradient error {err} for target {target}");
    }
}

#[test]
fn gather_pad_rows_are_zero_and_frozen() {
    let mut g = Graph::new();
    let table = g.leaf(
        Tensor::matrix(3, 2, vec![9.0, 9.0, 1.0, 2.0, 3.0, 4.0]).unwrap(),
        true,
    );
    let out = g.gather(table, &[0, 2, 0]).unwrap();
    assert_eq!(g.value(out).data(), &[0.0, 0.0, 3.0, 4.0, 0.0, 0.0]);
    let s = g.sum_all(out);
    g.backward(s).unwrap();
    // padding row receives no gradient even though the table row is nonzero
    assert_eq!(g.grad(table).unwrap().data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
}

#[test]
fn bce_closed_forms() {
    let mut g = Graph::new();
    let p = g.constant(Tensor::scalar(0.5));
    let l = g.binary_cross_entropy(p, 1.0).unwrap();
    assert!((g.value(l).data()[0] - 2.0f64.ln()).abs() < 1e-15);

    let p = g.constant(Tensor::scalar(0.9));
    let l = g.binary_cross_entropy(p, 0.0).unwrap();
    assert!((g.value(l).data()[0] - (-(0.1f64).ln())).abs() < 1e-12);

    // clamped perfect prediction: loss effectively zero
    let p = g.constant(Tensor::scalar(1.0));
    let l = g.binary_cross_entropy(p, 1.0).unwrap();
    assert!(g.value(l).data()[0].abs() < 1e-11);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn conv_preserves_sequence_length(
        n in 1usize..16,
        half_k in 0usize..4,
        d_in in 1usize..4,
        d_out in 1usize..4,
        seed in 0u64..1_000_000,
    ) {
        let k = 2 * half_k + 1;
        let mut r = rng(seed);
        let input = random_tensor(&mut r, vec![n, d_in]);
        let kernel = random_tensor(&mut r, vec![k, d_in, d_out]);
        let bias = random_tensor(&mut r, vec![1, d_out]);
        let mut g = Graph::new();
        let i = g.constant(input);
        let kn = g.constant(kernel);
        let b = g.constant(bias);
        let out = g.conv1d_same(i, kn, b).unwrap();
        prop_assert_eq!(g.value(out).shape(), &[n, d_out]);
    }

    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        cols in 1usize..8,
        seed in 0u64..1_000_000,
    ) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, vec![rows, cols]);
        let mut g = Graph::new();
        let xi = g.constant(x);
        let y = g.softmax(xi).unwrap();
        for row in g.value(y).data().chunks(cols) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn softmax_is_shift_invariant(
        cols in 1usize..9,
        shift in -6.0f64..6.0,
        seed in 0u64..1_000_000,
    ) {
        let mut r = rng(seed);
        let base: Vec<f64> = (0..cols).map(|_| r.gen_range(-3.0..3.0)).collect();
        let shifted: Vec<f64> = base.iter().map(|v| v + shift).collect();
        let mut g = Graph::new();
        let a = g.constant(Tensor::row(base));
        let b = g.constant(Tensor::row(shifted));
        let ya = g.softmax(a).unwrap();
        let yb = g.softmax(b).unwrap();
        for (x, y) in g.value(ya).data().iter().zip(g.value(yb).data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn random_small_graphs_pass_gradient_check(
        n in 1usize..5,
        f in 1usize..4,
        seed in 0u64..1_000_000,
    ) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, vec![n, f]);
        let w = random_tensor(&mut r, vec![f, 3]);
        let err = finite_diff_check(
            |g, ids| {
                let h = g.matmul(ids[0], ids[1])?;
                let t = g.tanh(h);
                let sm = g.softmax(t)?;
                let m = g.mean_rows(sm)?;
                // weight the entries so the loss is not the constant 1
                let w = g.constant(Tensor::row(vec![0.3, -1.1, 0.7]));
                let prod = g.mul(m, w)?;
                Ok(g.sum_all(prod))
            },
            &[x, w],
            1e-5,
        ).unwrap();
        prop_assert!(err < 1e-4, "gradient error {}", err);
    }
}
