use std::sync::atomic::{AtomicU64, Ordering};

use rand::RngCore;

use super::ops::{backward_op, forward_op, Op};
use super::{Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

struct Node {
    value: Tensor,
    op: Option<Op>,
    inputs: Vec<usize>,
    requires_grad: bool,
}

/// Append-only record of a computation. Nodes are pushed in evaluation
/// order, so the node list is already a topological order.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a leaf whose gradient is wanted.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, None, Vec::new(), true)
    }

    /// Registers a leaf treated as a constant by [`Tape::backward`].
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, None, Vec::new(), false)
    }

    pub fn value(&self, var: Var) -> Result<&Tensor, TensorError> {
        self.check(var)?;
        Ok(&self.nodes[var.index].value)
    }

    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        self.apply_with(op, inputs, None)
    }

    fn apply_with(
        &mut self,
        op: Op,
        inputs: &[Var],
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var, TensorError> {
        for &v in inputs {
            self.check(v)?;
        }
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.index].value).collect();
        let out = forward_op(&op, &values, rng)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.index].requires_grad);
        let idx = inputs.iter().map(|v| v.index).collect();
        Ok(self.push(out, Some(op), idx, requires_grad))
    }

    pub fn gaussian_noise(
        &mut self,
        x: Var,
        std: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Var, TensorError> {
        self.apply_with(Op::GaussianNoise { std }, &[x], Some(rng))
    }

    /// Reverse sweep from a scalar `output`. Gradients of fan-out nodes
    /// accumulate additively; nodes that do not depend on any param are skipped.
    pub fn backward(&self, output: Var) -> Result<Gradients, TensorError> {
        self.check(output)?;
        let out = &self.nodes[output.index];
        if out.value.len() != 1 {
            return Err(TensorError::NonScalarOutput(out.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.index + 1];
        grads[output.index] = Some(Tensor::filled(out.value.shape().to_vec(), 1.0));

        for i in (0..=output.index).rev() {
            let node = &self.nodes[i];
            let Some(op) = node.op.as_ref() else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&j| self.nodes[j].requires_grad)
                .collect();
            let local = backward_op(op, &inputs, &node.value, &g, &needs);
            for (&j, gi) in node.inputs.iter().zip(local) {
                let Some(gi) = gi else { continue };
                match grads[j].as_mut() {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(gi.data())
                        .for_each(|(a, b)| *a += b),
                    None => grads[j] = Some(gi),
                }
            }
            grads[i] = Some(g);
        }

        // Only leaves keep their gradient; interior values are dropped.
        for (i, g) in grads.iter_mut().enumerate() {
            let node = &self.nodes[i];
            if node.op.is_some() || !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn push(
        &mut self,
        value: Tensor,
        op: Option<Op>,
        inputs: Vec<usize>,
        requires_grad: bool,
    ) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, var: Var) -> Result<(), TensorError> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(TensorError::DetachedNode { index: var.index });
        }
        Ok(())
    }
}

macro_rules! unary {
    ($($name:ident => $op:expr),* $(,)?) => {
        impl Tape {
            $(
                pub fn $name(&mut self, x: Var) -> Result<Var, TensorError> {
                    self.apply($op, &[x])
                }
            )*
        }
    };
}

unary! {
    transpose => Op::Transpose,
    relu => Op::Relu,
    tanh => Op::Tanh,
    sigmoid => Op::Sigmoid,
    exp => Op::Exp,
    log => Op::Log,
    softmax => Op::Softmax,
    log_softmax => Op::LogSoftmax,
    mean => Op::Mean,
    sum => Op::Sum,
    mean_rows => Op::MeanRows,
    sum_cols => Op::SumCols,
    l2_norm_sq => Op::L2NormSq,
}

impl Tape {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(Op::Matmul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var, TensorError> {
        self.apply(Op::Affine { scale, shift }, &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, TensorError> {
        self.apply(Op::LeakyRelu { slope }, &[x])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        self.apply(Op::SliceCols { start, end }, &[x])
    }

    pub fn gather(&mut self, x: Var, indices: Vec<usize>) -> Result<Var, TensorError> {
        self.apply(Op::Gather { indices }, &[x])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        self.apply(Op::Concat, parts)
    }

    pub fn weight_norm(&mut self, direction: Var, gain: Var) -> Result<Var, TensorError> {
        self.apply(Op::WeightNorm, &[direction, gain])
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a param leaf; `None` for constants and interior nodes.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    /// Gradient for a param leaf, zero-filled when the output did not depend on it.
    pub fn get_or_zeros(&self, tape: &Tape, var: Var) -> Result<Tensor, TensorError> {
        match self.get(var) {
            Some(g) => Ok(g.clone()),
            None => Ok(Tensor::zeros(tape.value(var)?.shape().to_vec())),
        }
    }
}
