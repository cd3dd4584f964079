use proptest::prelude::*;

use super::*;

fn x_binding(t: &Tensor) -> Bindings<'_> {
    Bindings::new().with("x", t)
}

#[test]
fn evaluate_sigmoid_at_zero() {
    let mut g = Graph::new();
    let x = g.input("x");
    g.sigmoid(x);
    let t = Tensor::vector(vec![0.0]);
    assert_eq!(g.evaluate(&x_binding(&t)).unwrap().data(), &[0.5]);
}

#[test]
fn evaluate_clip01() {
    let mut g = Graph::new();
    let x = g.input("x");
    g.clip01(x);
    let t = Tensor::vector(vec![-0.2, 0.5, 1.3]);
    assert_eq!(g.evaluate(&x_binding(&t)).unwrap().data(), &[0.0, 0.5, 1.0]);
}

fn sum_of_squares() -> Graph {
    let mut g = Graph::new();
    let x = g.input("x");
    let sq = g.mul(x, x);
    g.sum(sq);
    g
}

#[test]
fn evaluate_and_gradient_of_sum_of_squares() {
    let g = sum_of_squares();
    let t = Tensor::vector(vec![3.0, 4.0]);
    assert_eq!(g.evaluate(&x_binding(&t)).unwrap().item(), 25.0);
    assert_eq!(g.gradient("x", &x_binding(&t)).unwrap().data(), &[6.0, 8.0]);
}

#[test]
fn gradient_of_sigmoid_at_zero() {
    let mut g = Graph::new();
    let x = g.input("x");
    let s = g.sigmoid(x);
    g.sum(s);
    let t = Tensor::vector(vec![0.0]);
    assert_eq!(g.gradient("x", &x_binding(&t)).unwrap().data(), &[0.25]);
}

#[test]
fn gradient_of_tanh_shift() {
    let mut g = Graph::new();
    let w = g.input("w");
    let p = g.input("p");
    let s = g.add(w, p);
    let t = g.tanh(s);
    g.sum(t);
    let zero = Tensor::vector(vec![0.0]);
    let b = Bindings::new().with("w", &zero).with("p", &zero);
    assert_eq!(g.gradient("p", &b).unwrap().data(), &[1.0]);
}

#[test]
fn non_scalar_root_is_rejected() {
    let mut g = Graph::new();
    let x = g.input("x");
    g.sigmoid(x);
    let t = Tensor::vector(vec![0.0, 1.0]);
    let err = g.gradient("x", &x_binding(&t)).unwrap_err();
    assert_eq!(err, TensorError::NonScalarRoot(vec![2]));
}

#[test]
fn atanh_domain_error() {
    let mut g = Graph::new();
    let x = g.input("x");
    let a = g.atanh(x);
    g.sum(a);
    let t = Tensor::vector(vec![0.2, 1.0]);
    assert!(matches!(
        g.gradient("x", &x_binding(&t)),
        Err(TensorError::Domain { op: "atanh", .. })
    ));
}

#[test]
fn unbound_leaf_is_named() {
    let g = sum_of_squares();
    assert_eq!(
        g.evaluate(&Bindings::new()).unwrap_err(),
        TensorError::UnboundLeaf("x".into())
    );
    let t = Tensor::vector(vec![1.0]);
    assert_eq!(
        g.gradient("y", &x_binding(&t)).unwrap_err(),
        TensorError::UnknownLeaf("y".into())
    );
}

#[test]
fn shape_mismatch_names_the_node() {
    let mut g = Graph::new();
    let a = g.input("a");
    let b = g.input("b");
    let sum = g.add(a, b);
    let ta = Tensor::vector(vec![1.0, 2.0]);
    let tb = Tensor::vector(vec![1.0, 2.0, 3.0]);
    let err = g
        .evaluate(&Bindings::new().with("a", &ta).with("b", &tb))
        .unwrap_err();
    match err {
        TensorError::ShapeMismatch { node, op, .. } => {
            assert_eq!(node, sum.index());
            assert_eq!(op, "add");
        }
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn scalar_broadcasts_both_ways() {
    let mut g = Graph::new();
    let x = g.input("x");
    let s = g.input("s");
    let left = g.mul(s, x);
    let right = g.sub(x, s);
    let both = g.add(left, right);
    g.sum(both);
    let tx = Tensor::vector(vec![1.0, 2.0, 3.0]);
    let ts = Tensor::scalar(2.0);
    let b = Bindings::new().with("x", &tx).with("s", &ts);
    // sum(2x + x - 2) = 3*6 - 6
    assert_eq!(g.evaluate(&b).unwrap().item(), 12.0);
    // d/ds sum(s*x - s) = sum(x) - 3
    assert_eq!(g.gradient("s", &b).unwrap().data(), &[3.0]);
    assert!(g.check_gradient("s", &b, 1e-5).unwrap() < 1e-8);
}

#[test]
fn matmul_matrix_vector_and_matrix_matrix() {
    let mut g = Graph::new();
    let a = g.input("a");
    let x = g.input("x");
    let y = g.matmul(a, x);
    let ta = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let tx = Tensor::vector(vec![1.0, 0.0, -1.0]);
    let b = Bindings::new().with("a", &ta).with("x", &tx);
    let eval = g.forward(&b).unwrap();
    assert_eq!(eval.value(y).data(), &[-2.0, -2.0]);

    let mut g2 = Graph::new();
    let a = g2.input("a");
    let m = g2.input("m");
    let y2 = g2.matmul(a, m);
    let tm = Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
    let eval = g2
        .forward(&Bindings::new().with("a", &ta).with("m", &tm))
        .unwrap();
    assert_eq!(eval.value(y2).shape(), &[2, 2]);
    assert_eq!(eval.value(y2).data(), &[4.0, 5.0, 10.0, 11.0]);
}

#[test]
fn check_gradient_sum_of_squares() {
    let g = sum_of_squares();
    let t = Tensor::vector(vec![1.0, 2.0]);
    assert!(g.check_gradient("x", &x_binding(&t), 1e-5).unwrap() < 1e-6);
}

#[test]
fn check_gradient_sigmoid_sum_random() {
    let mut g = Graph::new();
    let x = g.input("x");
    let s = g.sigmoid(x);
    g.sum(s);
    let t = Tensor::vector((0..10).map(|i| ((i as f64) * 1.37).sin() * 3.0).collect());
    assert!(g.check_gradient("x", &x_binding(&t), 1e-5).unwrap() < 1e-4);
}

#[test]
fn constant_root_has_zero_gradient() {
    let mut g = Graph::new();
    let _x = g.input("x");
    let c = g.constant(Tensor::vector(vec![1.0, 2.0]));
    g.sum(c);
    let t = Tensor::vector(vec![0.3, 0.4]);
    assert_eq!(g.gradient("x", &x_binding(&t)).unwrap().data(), &[0.0, 0.0]);
    assert_eq!(g.check_gradient("x", &x_binding(&t), 1e-5).unwrap(), 0.0);
}

#[test]
fn sum_last_axis_and_reshape() {
    let mut g = Graph::new();
    let x = g.input("x");
    let r = g.reshape(x, &[2, 2]);
    let rows = g.sum_last_axis(r);
    let w = g.constant(Tensor::vector(vec![1.0, 10.0]));
    let weighted = g.mul(rows, w);
    g.sum(weighted);
    let t = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]);
    let eval = g.forward(&x_binding(&t)).unwrap();
    assert_eq!(eval.value(rows).data(), &[3.0, 7.0]);
    assert_eq!(
        g.gradient("x", &x_binding(&t)).unwrap().data(),
        &[1.0, 1.0, 10.0, 10.0]
    );
}

#[test]
fn leaf_kinds_are_recorded() {
    let mut g = Graph::new();
    let w = g.param("w");
    let x = g.input("x");
    assert_eq!(g.leaf_kind(w), Some(LeafKind::Param));
    assert_eq!(g.leaf_kind(x), Some(LeafKind::Input));
    assert_eq!(g.input("x"), x);
}

/// Graph of `sum(c * op(x))` for a single primitive, with fixed weights `c`
/// so every output component contributes differently.
fn primitive_graph(name: &str, n: usize) -> Graph {
    let mut g = Graph::new();
    let x = g.input("x");
    let y = match name {
        "add" => {
            let k = g.constant(Tensor::vector((0..n).map(|i| i as f64 * 0.1).collect()));
            g.add(x, k)
        }
        "sub" => {
            let k = g.constant(Tensor::vector((0..n).map(|i| i as f64 * 0.1).collect()));
            g.sub(k, x)
        }
        "mul" => g.mul(x, x),
        "matmul" => {
            let a = g.constant(
                Tensor::matrix(3, n, (0..3 * n).map(|i| (i as f64 * 0.7).cos()).collect()).unwrap(),
            );
            g.matmul(a, x)
        }
        "matmul_rhs" => {
            let b = g.constant(Tensor::vector((0..3).map(|i| i as f64 - 1.0).collect()));
            let a = g.reshape(x, &[n / 3, 3]);
            g.matmul(a, b)
        }
        "sigmoid" => g.sigmoid(x),
        "tanh" => g.tanh(x),
        "atanh" => g.atanh(x),
        "relu" => g.relu(x),
        "softplus" => g.softplus(x),
        "clip01" => g.clip01(x),
        "sign" => g.sign(x),
        "mean" => g.mean(x),
        "l2_norm" => g.l2_norm(x),
        "sum_last_axis" => {
            let r = g.reshape(x, &[n / 3, 3]);
            g.sum_last_axis(r)
        }
        other => panic!("unknown primitive {other}"),
    };
    let width = match name {
        "matmul" => 3,
        "matmul_rhs" | "sum_last_axis" => n / 3,
        "mean" | "l2_norm" => 1,
        _ => n,
    };
    let weights = if width == 1 {
        Tensor::scalar(1.3)
    } else {
        Tensor::vector((0..width).map(|i| 1.0 + 0.5 * (i as f64).sin()).collect())
    };
    let w = g.constant(weights);
    let prod = g.mul(y, w);
    g.sum(prod);
    g
}

const PRIMITIVES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "matmul",
    "matmul_rhs",
    "sigmoid",
    "tanh",
    "atanh",
    "relu",
    "softplus",
    "clip01",
    "sign",
    "mean",
    "l2_norm",
    "sum_last_axis",
];

/// Keeps probes away from kinks (relu, clip01, sign) and the atanh poles.
fn in_domain(name: &str, v: f64) -> bool {
    match name {
        "atanh" => v.abs() < 1.0 - 1e-3,
        "relu" | "sign" => v.abs() > 1e-3,
        "clip01" => v.abs() > 1e-3 && (v - 1.0).abs() > 1e-3,
        _ => true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn primitive_gradients_match_finite_differences(
        idx in 0..PRIMITIVES.len(),
        raw in proptest::collection::vec(-0.99f64..0.99, 6),
    ) {
        let name = PRIMITIVES[idx];
        prop_assume!(raw.iter().all(|&v| in_domain(name, v)));
        let g = primitive_graph(name, raw.len());
        let t = Tensor::vector(raw);
        let err = g.check_gradient("x", &x_binding(&t), 1e-5).unwrap();
        prop_assert!(err < 1e-4, "{name}: relative error {err}");
    }

    #[test]
    fn evaluate_is_referentially_transparent(raw in proptest::collection::vec(-5.0f64..5.0, 1..12)) {
        let mut g = Graph::new();
        let x = g.input("x");
        let s = g.softplus(x);
        let t = g.tanh(s);
        g.l2_norm(t);
        let input = Tensor::vector(raw);
        let first = g.evaluate(&x_binding(&input)).unwrap();
        let second = g.evaluate(&x_binding(&input)).unwrap();
        prop_assert_eq!(first.item().to_bits(), second.item().to_bits());
    }

    #[test]
    fn clip_and_sign_ranges(raw in proptest::collection::vec(-1e6f64..1e6, 1..32)) {
        let mut g = Graph::new();
        let x = g.input("x");
        let c = g.clip01(x);
        let s = g.sign(x);
        let input = Tensor::vector(raw);
        let eval = g.forward(&x_binding(&input)).unwrap();
        prop_assert!(eval.value(c).data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(eval.value(s).data().iter().all(|v| [-1.0, 0.0, 1.0].contains(v)));
    }
}
