use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::{Tensor, TensorError};

/// Operation kinds understood by the tape.
///
/// Matrices are `[rows, cols]`; "batch broadcast" means a `[cols]` or
/// `[1, cols]` right operand is repeated over the rows of the left one.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// `[m, k] x [k, n] -> [m, n]`
    Matmul,
    Transpose,
    /// Elementwise sum with batch broadcast of the second operand.
    Add,
    /// Elementwise difference with batch broadcast of the second operand.
    Sub,
    /// Elementwise product with batch broadcast of the second operand.
    Mul,
    /// `scale * x + shift`
    Affine {
        scale: f64,
        shift: f64,
    },
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    Sigmoid,
    Exp,
    Log,
    /// Softmax over the last axis.
    Softmax,
    LogSoftmax,
    /// Mean of all entries (scalar output).
    Mean,
    /// Sum of all entries (scalar output).
    Sum,
    /// Column means over the batch axis: `[m, n] -> [1, n]`.
    MeanRows,
    /// Row sums: `[m, n] -> [m, 1]`.
    SumCols,
    /// Sum of squares (scalar output).
    L2NormSq,
    /// Concatenation along the last axis.
    Concat,
    SliceCols {
        start: usize,
        end: usize,
    },
    /// Picks one column per row: `[m, n] -> [m, 1]`.
    Gather {
        indices: Vec<usize>,
    },
    /// Adds i.i.d. `N(0, std^2)` draws; constant under differentiation.
    GaussianNoise {
        std: f64,
    },
    /// `(V [o, i], g [o]) -> W` with rows `W_r = g_r V_r / |V_r|`.
    WeightNorm,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Matmul => "matmul",
            Op::Transpose => "transpose",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Affine { .. } => "affine",
            Op::Relu => "relu",
            Op::LeakyRelu { .. } => "leaky-relu",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Softmax => "softmax",
            Op::LogSoftmax => "log-softmax",
            Op::Mean => "reduce-mean",
            Op::Sum => "reduce-sum",
            Op::MeanRows => "mean-rows",
            Op::SumCols => "sum-cols",
            Op::L2NormSq => "l2-norm-squared",
            Op::Concat => "concat",
            Op::SliceCols { .. } => "slice-cols",
            Op::Gather { .. } => "gather",
            Op::GaussianNoise { .. } => "gaussian-noise",
            Op::WeightNorm => "weight-norm",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::Matmul | Op::Add | Op::Sub | Op::Mul | Op::WeightNorm => Some(2),
            Op::Concat => None,
            _ => Some(1),
        }
    }
}

/// Evaluates `op` on plain tensors. `rng` is only consulted by
/// [`Op::GaussianNoise`].
pub fn forward_op(
    op: &Op,
    inputs: &[&Tensor],
    rng: Option<&mut dyn RngCore>,
) -> Result<Tensor, TensorError> {
    check_arity(op, inputs)?;
    let x = inputs[0];
    let out = match op {
        Op::Matmul => matmul(x, inputs[1])?,
        Op::Transpose => transpose(x, op)?,
        Op::Add => broadcast_binary(op, x, inputs[1], |a, b| a + b)?,
        Op::Sub => broadcast_binary(op, x, inputs[1], |a, b| a - b)?,
        Op::Mul => broadcast_binary(op, x, inputs[1], |a, b| a * b)?,
        Op::Affine { scale, shift } => x.map(|v| scale * v + shift),
        Op::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
        Op::LeakyRelu { slope } => x.map(|v| if v > 0.0 { v } else { slope * v }),
        Op::Tanh => x.map(f64::tanh),
        Op::Sigmoid => x.map(sigmoid),
        Op::Exp => x.map(f64::exp),
        Op::Log => {
            if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0) {
                return Err(TensorError::Domain {
                    op: "log",
                    message: format!("non-positive argument {bad}"),
                });
            }
            x.map(f64::ln)
        }
        Op::Softmax => softmax_last(x, false),
        Op::LogSoftmax => softmax_last(x, true),
        Op::Mean => {
            let n = x.len().max(1) as f64;
            Tensor::scalar(x.data().iter().sum::<f64>() / n)
        }
        Op::Sum => Tensor::scalar(x.data().iter().sum()),
        Op::MeanRows => {
            let (m, n) = as_matrix(x, op)?;
            let mut out = vec![0.0; n];
            for row in x.row_iter() {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            let inv = 1.0 / m.max(1) as f64;
            out.iter_mut().for_each(|o| *o *= inv);
            Tensor::new([1, n], out)?
        }
        Op::SumCols => {
            let (m, _) = as_matrix(x, op)?;
            Tensor::new([m, 1], x.row_iter().map(|r| r.iter().sum()).collect())?
        }
        Op::L2NormSq => Tensor::scalar(x.data().iter().map(|v| v * v).sum()),
        Op::Concat => concat(inputs)?,
        Op::SliceCols { start, end } => {
            let (m, n) = as_matrix(x, op)?;
            if start >= end || *end > n {
                return Err(TensorError::BadShape {
                    op: "slice-cols",
                    shape: x.shape().to_vec(),
                });
            }
            let mut out = Vec::with_capacity(m * (end - start));
            for row in x.row_iter() {
                out.extend_from_slice(&row[*start..*end]);
            }
            Tensor::new([m, end - start], out)?
        }
        Op::Gather { indices } => {
            let (m, n) = as_matrix(x, op)?;
            if indices.len() != m || indices.iter().any(|&i| i >= n) {
                return Err(TensorError::ShapeMismatch {
                    op: "gather",
                    lhs: x.shape().to_vec(),
                    rhs: vec![indices.len()],
                });
            }
            Tensor::new(
                [m, 1],
                x.row_iter().zip(indices).map(|(r, &i)| r[i]).collect(),
            )?
        }
        Op::GaussianNoise { std } => {
            let rng = rng.ok_or(TensorError::MissingRng)?;
            if *std < 0.0 {
                return Err(TensorError::Domain {
                    op: "gaussian-noise",
                    message: format!("negative std {std}"),
                });
            }
            let mut out = x.clone();
            for v in out.data_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *v += std * e;
            }
            out
        }
        Op::WeightNorm => weight_norm(x, inputs[1])?,
    };
    Ok(out)
}

/// Vector-Jacobian products of `op` for the inputs flagged in `needs`.
pub(super) fn backward_op(
    op: &Op,
    inputs: &[&Tensor],
    output: &Tensor,
    grad: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    let x = inputs[0];
    let first = |f: &dyn Fn() -> Tensor| if needs[0] { Some(f()) } else { None };
    match op {
        Op::Matmul => {
            let b = inputs[1];
            let (m, k) = (x.rows(), x.cols());
            let n = b.cols();
            let ga = needs[0].then(|| {
                // G [m,n] x B^T [n,k]
                let mut out = vec![0.0; m * k];
                gemm(m, n, k, grad.data(), n, 1, b.data(), 1, n, &mut out);
                Tensor::new([m, k], out).expect("matmul grad shape")
            });
            let gb = needs[1].then(|| {
                // A^T [k,m] x G [m,n]
                let mut out = vec![0.0; k * n];
                gemm(k, m, n, x.data(), 1, k, grad.data(), n, 1, &mut out);
                Tensor::new([k, n], out).expect("matmul grad shape")
            });
            vec![ga, gb]
        }
        Op::Transpose => vec![first(&|| transpose(grad, op).expect("transpose grad"))],
        Op::Add | Op::Sub => {
            let sign = if matches!(op, Op::Sub) { -1.0 } else { 1.0 };
            let gb = needs[1].then(|| reduce_broadcast(grad, inputs[1]).map(|v| sign * v));
            vec![first(&|| grad.clone()), gb]
        }
        Op::Mul => {
            let b = inputs[1];
            let ga = needs[0]
                .then(|| broadcast_binary(op, grad, b, |g, bv| g * bv).expect("mul grad shape"));
            let gb = needs[1].then(|| {
                let full = zip_map(grad, x, |g, a| g * a);
                reduce_broadcast(&full, b)
            });
            vec![ga, gb]
        }
        Op::Affine { scale, .. } => vec![first(&|| grad.map(|g| g * scale))],
        Op::Relu => vec![first(&|| {
            zip_map(grad, x, |g, v| if v > 0.0 { g } else { 0.0 })
        })],
        Op::LeakyRelu { slope } => vec![first(&|| {
            zip_map(grad, x, |g, v| if v > 0.0 { g } else { slope * g })
        })],
        Op::Tanh => vec![first(&|| zip_map(grad, output, |g, y| g * (1.0 - y * y)))],
        Op::Sigmoid => vec![first(&|| zip_map(grad, output, |g, y| g * y * (1.0 - y)))],
        Op::Exp => vec![first(&|| zip_map(grad, output, |g, y| g * y))],
        Op::Log => vec![first(&|| zip_map(grad, x, |g, v| g / v))],
        Op::Softmax => vec![first(&|| {
            let c = output.cols();
            let mut out = vec![0.0; output.len()];
            for ((o, y), g) in out
                .chunks_mut(c)
                .zip(output.data().chunks(c))
                .zip(grad.data().chunks(c))
            {
                let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    o[j] = y[j] * (g[j] - dot);
                }
            }
            Tensor::new(output.shape().to_vec(), out).expect("softmax grad shape")
        })],
        Op::LogSoftmax => vec![first(&|| {
            let c = output.cols();
            let mut out = vec![0.0; output.len()];
            for ((o, y), g) in out
                .chunks_mut(c)
                .zip(output.data().chunks(c))
                .zip(grad.data().chunks(c))
            {
                let total: f64 = g.iter().sum();
                for j in 0..c {
                    o[j] = g[j] - y[j].exp() * total;
                }
            }
            Tensor::new(output.shape().to_vec(), out).expect("log-softmax grad shape")
        })],
        Op::Mean => {
            let g = grad.item() / x.len().max(1) as f64;
            vec![first(&|| Tensor::filled(x.shape().to_vec(), g))]
        }
        Op::Sum => vec![first(&|| Tensor::filled(x.shape().to_vec(), grad.item()))],
        Op::MeanRows => vec![first(&|| {
            let inv = 1.0 / x.rows().max(1) as f64;
            let mut out = Vec::with_capacity(x.len());
            for _ in 0..x.rows() {
                out.extend(grad.data().iter().map(|g| g * inv));
            }
            Tensor::new(x.shape().to_vec(), out).expect("mean-rows grad shape")
        })],
        Op::SumCols => vec![first(&|| {
            let c = x.cols();
            let mut out = Vec::with_capacity(x.len());
            for &g in grad.data() {
                out.extend(std::iter::repeat_n(g, c));
            }
            Tensor::new(x.shape().to_vec(), out).expect("sum-cols grad shape")
        })],
        Op::L2NormSq => {
            let g = grad.item();
            vec![first(&|| x.map(|v| 2.0 * g * v))]
        }
        Op::Concat => {
            let rows = grad.rows();
            let total = grad.cols();
            let mut offset = 0;
            inputs
                .iter()
                .zip(needs)
                .map(|(inp, &need)| {
                    let w = inp.cols();
                    let piece = need.then(|| {
                        let mut out = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            let base = r * total + offset;
                            out.extend_from_slice(&grad.data()[base..base + w]);
                        }
                        Tensor::new(inp.shape().to_vec(), out).expect("concat grad shape")
                    });
                    offset += w;
                    piece
                })
                .collect()
        }
        Op::SliceCols { start, end } => vec![first(&|| {
            let n = x.cols();
            let w = end - start;
            let mut out = vec![0.0; x.len()];
            for (r, g) in grad.data().chunks(w).enumerate() {
                out[r * n + start..r * n + end].copy_from_slice(g);
            }
            Tensor::new(x.shape().to_vec(), out).expect("slice grad shape")
        })],
        Op::Gather { indices } => vec![first(&|| {
            let n = x.cols();
            let mut out = vec![0.0; x.len()];
            for (r, (&i, &g)) in indices.iter().zip(grad.data()).enumerate() {
                out[r * n + i] = g;
            }
            Tensor::new(x.shape().to_vec(), out).expect("gather grad shape")
        })],
        Op::GaussianNoise { .. } => vec![first(&|| grad.clone())],
        Op::WeightNorm => weight_norm_backward(x, inputs[1], grad, needs),
    }
}

fn check_arity(op: &Op, inputs: &[&Tensor]) -> Result<(), TensorError> {
    match op.arity() {
        Some(n) if n != inputs.len() => Err(TensorError::Arity {
            op: op.name(),
            expected: n,
            actual: inputs.len(),
        }),
        None if inputs.is_empty() => Err(TensorError::Arity {
            op: op.name(),
            expected: 1,
            actual: 0,
        }),
        _ => Ok(()),
    }
}

fn as_matrix(x: &Tensor, op: &Op) -> Result<(usize, usize), TensorError> {
    if x.ndim() != 2 {
        return Err(TensorError::BadShape {
            op: op.name(),
            shape: x.shape().to_vec(),
        });
    }
    Ok((x.rows(), x.cols()))
}

pub(super) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `c = a * b` for strided row-major views; `c` is `[m, n]` contiguous.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
) {
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the asserts above keep every strided access of `a`, `b` and
    // `c` in bounds, and `c` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), k, 1, b.data(), n, 1, &mut out);
    Tensor::new([m, n], out)
}

fn transpose(x: &Tensor, op: &Op) -> Result<Tensor, TensorError> {
    let (m, n) = as_matrix(x, op)?;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x.data()[i * n + j];
        }
    }
    Tensor::new([n, m], out)
}

/// Whether `b` broadcasts over the leading axis of `a`.
fn is_row_broadcast(a: &Tensor, b: &Tensor) -> bool {
    a.ndim() == 2
        && ((b.ndim() == 1 && b.shape()[0] == a.cols())
            || (b.ndim() == 2 && b.rows() == 1 && b.cols() == a.cols()))
}

fn broadcast_binary(
    op: &Op,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, TensorError> {
    if a.shape() == b.shape() {
        return Ok(zip_map(a, b, f));
    }
    if is_row_broadcast(a, b) {
        let c = a.cols();
        let mut out = Vec::with_capacity(a.len());
        for row in a.row_iter() {
            out.extend(row.iter().zip(b.data()).map(|(&x, &y)| f(x, y)));
        }
        debug_assert_eq!(out.len(), a.rows() * c);
        return Tensor::new(a.shape().to_vec(), out);
    }
    Err(TensorError::ShapeMismatch {
        op: op.name(),
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.len(), b.len());
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map shape")
}

/// Sums a full-shape gradient back down to the (possibly broadcast) shape of `target`.
fn reduce_broadcast(grad: &Tensor, target: &Tensor) -> Tensor {
    if grad.shape() == target.shape() {
        return grad.clone();
    }
    let mut out = vec![0.0; target.len()];
    for row in grad.row_iter() {
        for (o, g) in out.iter_mut().zip(row) {
            *o += g;
        }
    }
    Tensor::new(target.shape().to_vec(), out).expect("broadcast grad shape")
}

fn softmax_last(x: &Tensor, log: bool) -> Tensor {
    let c = x.cols().max(1);
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        if log {
            let lse = max + sum.ln();
            out.extend(row.iter().map(|v| v - lse));
        } else {
            out.extend(row.iter().map(|v| (v - max).exp() / sum));
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("softmax shape")
}

fn concat(inputs: &[&Tensor]) -> Result<Tensor, TensorError> {
    let first = inputs[0];
    let rows = first.rows();
    let mut cols = 0;
    for t in inputs {
        if t.ndim() != first.ndim() || t.ndim() > 2 || t.rows() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        cols += t.cols();
    }
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for t in inputs {
            out.extend_from_slice(t.row(r));
        }
    }
    let shape = if first.ndim() == 1 {
        vec![cols]
    } else {
        vec![rows, cols]
    };
    Tensor::new(shape, out)
}

fn weight_norm(v: &Tensor, g: &Tensor) -> Result<Tensor, TensorError> {
    if v.ndim() != 2 || g.len() != v.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "weight-norm",
            lhs: v.shape().to_vec(),
            rhs: g.shape().to_vec(),
        });
    }
    let mut out = Vec::with_capacity(v.len());
    for (r, row) in v.row_iter().enumerate() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(TensorError::Domain {
                op: "weight-norm",
                message: format!("direction row {r} has zero norm"),
            });
        }
        let s = g.data()[r] / norm;
        out.extend(row.iter().map(|x| s * x));
    }
    Tensor::new(v.shape().to_vec(), out)
}

fn weight_norm_backward(
    v: &Tensor,
    g: &Tensor,
    grad: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    let cols = v.cols();
    let mut gv = needs[0].then(|| vec![0.0; v.len()]);
    let mut gg = needs[1].then(|| vec![0.0; g.len()]);
    for (r, (row, grow)) in v.row_iter().zip(grad.row_iter()).enumerate() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        let dot: f64 = row.iter().zip(grow).map(|(a, b)| a * b).sum();
        if let Some(gg) = gg.as_mut() {
            gg[r] = dot / norm;
        }
        if let Some(gv) = gv.as_mut() {
            let s = g.data()[r] / norm;
            let proj = dot / (norm * norm);
            for j in 0..cols {
                gv[r * cols + j] = s * (grow[j] - proj * row[j]);
            }
        }
    }
    vec![
        gv.map(|d| Tensor::new(v.shape().to_vec(), d).expect("weight-norm grad")),
        gg.map(|d| Tensor::new(g.shape().to_vec(), d).expect("weight-norm grad")),
    ]
}
