use std::borrow::Cow;

use super::graph::Op;
use super::{Tensor, TensorError};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `sign(0) == 0`.
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn mismatch(node: usize, op: &Op, detail: String) -> TensorError {
    TensorError::ShapeMismatch {
        node,
        op: op.name(),
        detail,
    }
}

fn binary(
    node: usize,
    op: &Op,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, TensorError> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::new(a.shape().to_vec(), data).expect("same shape"))
    } else if a.is_scalar() {
        let x = a.item();
        Ok(b.map(|y| f(x, y)))
    } else if b.is_scalar() {
        let y = b.item();
        Ok(a.map(|x| f(x, y)))
    } else {
        Err(mismatch(
            node,
            op,
            format!("operands {:?} and {:?}", a.shape(), b.shape()),
        ))
    }
}

fn matmul(node: usize, op: &Op, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.rank() != 2 || !(b.rank() == 1 || b.rank() == 2) || a.shape()[1] != b.shape()[0] {
        return Err(mismatch(
            node,
            op,
            format!("cannot multiply {:?} by {:?}", a.shape(), b.shape()),
        ));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = if b.rank() == 1 { 1 } else { b.shape()[1] };
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; m * n];
    if n == 1 {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &ad[i * k..(i + 1) * k];
            *o = row.iter().zip(bd).map(|(x, y)| x * y).sum();
        }
    } else {
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    let shape = if b.rank() == 1 { vec![m] } else { vec![m, n] };
    Ok(Tensor::new(shape, out).expect("matmul shape"))
}

pub(crate) fn forward(
    node: usize,
    op: &Op,
    values: &[Cow<'_, Tensor>],
) -> Result<Tensor, TensorError> {
    let v = |id: &super::NodeId| values[id.0].as_ref();
    match op {
        Op::Leaf { .. } | Op::Constant(_) => unreachable!("leaves are bound by the caller"),
        Op::Add(a, b) => binary(node, op, v(a), v(b), |x, y| x + y),
        Op::Sub(a, b) => binary(node, op, v(a), v(b), |x, y| x - y),
        Op::Mul(a, b) => binary(node, op, v(a), v(b), |x, y| x * y),
        Op::MatMul(a, b) => matmul(node, op, v(a), v(b)),
        Op::Sigmoid(a) => Ok(v(a).map(sigmoid)),
        Op::Tanh(a) => Ok(v(a).map(f64::tanh)),
        Op::Atanh(a) => {
            let t = v(a);
            if let Some(&bad) = t.data().iter().find(|x| !(x.abs() < 1.0)) {
                return Err(TensorError::Domain {
                    node,
                    op: op.name(),
                    value: bad,
                });
            }
            Ok(t.map(f64::atanh))
        }
        Op::Relu(a) => Ok(v(a).map(|x| x.max(0.0))),
        Op::Softplus(a) => Ok(v(a).map(softplus)),
        Op::Sum(a) => Ok(Tensor::scalar(v(a).data().iter().sum())),
        Op::Mean(a) => {
            let t = v(a);
            if t.is_empty() {
                return Err(mismatch(node, op, "mean of an empty tensor".into()));
            }
            Ok(Tensor::scalar(
                t.data().iter().sum::<f64>() / t.len() as f64,
            ))
        }
        Op::Clip01(a) => Ok(v(a).map(|x| x.clamp(0.0, 1.0))),
        Op::Sign(a) => Ok(v(a).map(sign)),
        Op::L2Norm(a) => Ok(Tensor::scalar(v(a).l2_norm())),
        Op::Reshape(a, shape) => {
            let t = v(a);
            t.clone().reshaped(shape.clone()).map_err(|_| {
                mismatch(
                    node,
                    op,
                    format!("cannot reshape {:?} into {:?}", t.shape(), shape),
                )
            })
        }
        Op::SumLastAxis(a) => {
            let t = v(a);
            let Some((&last, lead)) = t.shape().split_last() else {
                return Err(mismatch(node, op, "operand is rank 0".into()));
            };
            let data = if last == 0 {
                vec![0.0; lead.iter().product()]
            } else {
                t.data().chunks(last).map(|c| c.iter().sum()).collect()
            };
            Ok(Tensor::new(lead.to_vec(), data).expect("reduced shape"))
        }
    }
}

/// Reduces a broadcast gradient back to the operand's shape.
fn unbroadcast(grad: Tensor, operand: &Tensor) -> Tensor {
    if operand.is_scalar() && !grad.is_scalar() {
        Tensor::scalar(grad.data().iter().sum())
    } else {
        grad
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// Broadcast-aware elementwise product used by the `mul` backward rule.
fn times(g: &Tensor, other: &Tensor) -> Tensor {
    if other.is_scalar() {
        let s = other.item();
        g.map(|x| x * s)
    } else if g.is_scalar() {
        let s = g.item();
        other.map(|x| x * s)
    } else {
        zip_map(g, other, |x, y| x * y)
    }
}

/// Vector-Jacobian products for each operand flagged in `wanted`.
pub(crate) fn backward(
    op: &Op,
    values: &[Cow<'_, Tensor>],
    node: usize,
    upstream: &Tensor,
    wanted: &[bool],
) -> Vec<Option<Tensor>> {
    let v = |id: &super::NodeId| values[id.0].as_ref();
    let out = values[node].as_ref();
    let g = upstream;
    let unary = |f: &dyn Fn(f64, f64, f64) -> f64, a: &super::NodeId| -> Vec<Option<Tensor>> {
        let x = v(a);
        let data = x
            .data()
            .iter()
            .zip(out.data())
            .zip(g.data())
            .map(|((&xi, &yi), &gi)| f(xi, yi, gi))
            .collect();
        vec![Some(
            Tensor::new(x.shape().to_vec(), data).expect("unary shape"),
        )]
    };
    match op {
        Op::Leaf { .. } | Op::Constant(_) => Vec::new(),
        Op::Add(a, b) | Op::Sub(a, b) => {
            let negate = matches!(op, Op::Sub(..));
            let ga = wanted[0].then(|| unbroadcast(g.clone(), v(a)));
            let gb = wanted[1].then(|| {
                let gb = if negate { g.map(|x| -x) } else { g.clone() };
                unbroadcast(gb, v(b))
            });
            vec![ga, gb]
        }
        Op::Mul(a, b) => {
            let ga = wanted[0].then(|| unbroadcast(times(g, v(b)), v(a)));
            let gb = wanted[1].then(|| unbroadcast(times(g, v(a)), v(b)));
            vec![ga, gb]
        }
        Op::MatMul(a, b) => {
            let (at, bt) = (v(a), v(b));
            let (m, k) = (at.shape()[0], at.shape()[1]);
            let n = if bt.rank() == 1 { 1 } else { bt.shape()[1] };
            let gd = g.data();
            let ga = wanted[0].then(|| {
                // dA = G * B^T
                let mut d = vec![0.0; m * k];
                let bd = bt.data();
                for i in 0..m {
                    let drow = &mut d[i * k..(i + 1) * k];
                    for j in 0..n {
                        let gij = gd[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for (p, dv) in drow.iter_mut().enumerate() {
                            *dv += gij * bd[p * n + j];
                        }
                    }
                }
                Tensor::new(vec![m, k], d).expect("matmul grad a")
            });
            let gb = wanted[1].then(|| {
                // dB = A^T * G
                let mut d = vec![0.0; k * n];
                let ad = at.data();
                for i in 0..m {
                    let grow = &gd[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        let drow = &mut d[p * n..(p + 1) * n];
                        for (dv, gv) in drow.iter_mut().zip(grow) {
                            *dv += aip * gv;
                        }
                    }
                }
                Tensor::new(bt.shape().to_vec(), d).expect("matmul grad b")
            });
            vec![ga, gb]
        }
        Op::Sigmoid(a) => unary(&|_, y, gi| gi * y * (1.0 - y), a),
        Op::Tanh(a) => unary(&|_, y, gi| gi * (1.0 - y * y), a),
        Op::Atanh(a) => unary(&|x, _, gi| gi / (1.0 - x * x), a),
        Op::Relu(a) => unary(&|x, _, gi| if x > 0.0 { gi } else { 0.0 }, a),
        Op::Softplus(a) => unary(&|x, _, gi| gi * sigmoid(x), a),
        Op::Clip01(a) => unary(
            &|x, _, gi| if (0.0..=1.0).contains(&x) { gi } else { 0.0 },
            a,
        ),
        Op::Sign(a) => vec![Some(Tensor::zeros(v(a).shape()))],
        Op::Sum(a) => {
            let s = g.item();
            vec![Some(Tensor::filled(v(a).shape(), s))]
        }
        Op::Mean(a) => {
            let x = v(a);
            let s = g.item() / x.len() as f64;
            vec![Some(Tensor::filled(x.shape(), s))]
        }
        Op::L2Norm(a) => {
            let x = v(a);
            let norm = out.item();
            if norm == 0.0 {
                vec![Some(Tensor::zeros(x.shape()))]
            } else {
                let s = g.item() / norm;
                vec![Some(x.map(|xi| xi * s))]
            }
        }
        Op::Reshape(a, _) => {
            let shape = v(a).shape().to_vec();
            vec![Some(g.clone().reshaped(shape).expect("reshape grad"))]
        }
        Op::SumLastAxis(a) => {
            let x = v(a);
            let last = *x.shape().last().expect("rank >= 1");
            let mut d = Vec::with_capacity(x.len());
            for &gi in g.data() {
                d.extend(std::iter::repeat_n(gi, last));
            }
            vec![Some(Tensor::new(x.shape().to_vec(), d).expect("sum grad"))]
        }
    }
}
