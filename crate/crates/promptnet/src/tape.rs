//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Operations
//! append a node holding the result tensor plus whatever the backward kernel
//! needs, and return a [`Var`] handle. [`Tape::backward`] seeds a scalar loss
//! node and replays the records in reverse topological order (which is just
//! reverse insertion order), accumulating gradients additively across
//! fan-out. Values routed through [`Tape::detach`] receive gradient but
//! propagate none upstream.
//!
//! Tapes are single-owner and never shared between threads; repeated passes
//! over identical inputs produce bitwise-identical values and gradients.

use crate::ops::{self, GroupNormStats, OpError};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Record {
    Leaf,
    Detach,
    Conv3d { input: Var, weight: Var, bias: Var, stride: usize, padding: usize },
    GroupNorm { input: Var, gamma: Var, beta: Var, groups: usize, stats: GroupNormStats },
    Gelu { input: Var },
    Linear { input: Var, weight: Var, bias: Var },
    GlobalAvgPool { input: Var },
    SoftmaxCrossEntropy { logits: Var, labels: Tensor, probs: Tensor },
    L1Mean { a: Var, b: Var },
    RowL1Mean { a: Var, b: Var },
    Add { a: Var, b: Var },
    ConcatCols { a: Var, b: Var },
    Scale { input: Var, factor: f64 },
    ScaleRows { input: Var, coeffs: Tensor },
    Mean { input: Var },
    Sum { input: Var },
}

struct Node {
    value: Tensor,
    record: Record,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. the node, if any gradient reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of the loss w.r.t. the node, zeros when none reached it.
    pub fn grad_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

/// Recorded computation graph for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, record: Record) -> Var {
        self.nodes.push(Node { value, record });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input or parameter value on the tape.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Record::Leaf)
    }

    /// Value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Copies a value into a stop-gradient node: it can be consumed
    /// downstream but contributes nothing to upstream gradients.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.push(value, Record::Detach)
    }

    /// Zero-padded 3D cross-correlation (no kernel flip).
    pub fn conv3d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, OpError> {
        let value = ops::conv3d_forward(
            self.value(input),
            self.value(weight),
            self.value(bias),
            stride,
            padding,
        )?;
        Ok(self.push(value, Record::Conv3d { input, weight, bias, stride, padding }))
    }

    pub fn group_norm(
        &mut self,
        input: Var,
        groups: usize,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, OpError> {
        let (value, stats) = ops::group_norm_forward(
            self.value(input),
            groups,
            self.value(gamma),
            self.value(beta),
            eps,
        )?;
        Ok(self.push(value, Record::GroupNorm { input, gamma, beta, groups, stats }))
    }

    pub fn gelu(&mut self, input: Var) -> Var {
        let value = ops::gelu_forward(self.value(input));
        self.push(value, Record::Gelu { input })
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, OpError> {
        let value =
            ops::linear_forward(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(value, Record::Linear { input, weight, bias }))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var, OpError> {
        let value = ops::global_avg_pool_forward(self.value(input))?;
        Ok(self.push(value, Record::GlobalAvgPool { input }))
    }

    /// Numerically stable softmax plus mean negative log-likelihood.
    /// Returns the scalar loss node and the probability rows; the
    /// probabilities are plain values, not tape nodes, so every use of them
    /// is stop-gradient by construction.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &Tensor,
    ) -> Result<(Var, Tensor), OpError> {
        let (loss, probs) = ops::softmax_cross_entropy_forward(self.value(logits), labels)?;
        let var = self.push(
            loss,
            Record::SoftmaxCrossEntropy {
                logits,
                labels: labels.clone(),
                probs: probs.clone(),
            },
        );
        Ok((var, probs))
    }

    /// Mean absolute difference over all elements (scalar).
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var, OpError> {
        let value = ops::l1_mean_forward(self.value(a), self.value(b))?;
        Ok(self.push(value, Record::L1Mean { a, b }))
    }

    /// Per-row mean absolute difference: [N,d] x [N,d] -> [N].
    pub fn row_l1_mean(&mut self, a: Var, b: Var) -> Result<Var, OpError> {
        let value = ops::row_l1_mean_forward(self.value(a), self.value(b))?;
        Ok(self.push(value, Record::RowL1Mean { a, b }))
    }

    /// Elementwise sum of two same-shape nodes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, OpError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(OpError::AxisMismatch {
                op: "add",
                axis: "shape",
                left: ta.numel(),
                right: tb.numel(),
            });
        }
        let mut value = ta.clone();
        for (x, y) in value.data_mut().iter_mut().zip(tb.data()) {
            *x += y;
        }
        Ok(self.push(value, Record::Add { a, b }))
    }

    /// Concatenates two rank-2 nodes along the column axis.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, OpError> {
        let (na, ca) = self.value(a).dims2().map_err(|_| OpError::RankMismatch {
            op: "concat_cols",
            expected: 2,
            got: self.value(a).rank(),
        })?;
        let (nb, cb) = self.value(b).dims2().map_err(|_| OpError::RankMismatch {
            op: "concat_cols",
            expected: 2,
            got: self.value(b).rank(),
        })?;
        if na != nb {
            return Err(OpError::AxisMismatch {
                op: "concat_cols",
                axis: "rows",
                left: na,
                right: nb,
            });
        }
        let mut data = Vec::with_capacity(na * (ca + cb));
        for row in 0..na {
            data.extend_from_slice(&self.value(a).data()[row * ca..(row + 1) * ca]);
            data.extend_from_slice(&self.value(b).data()[row * cb..(row + 1) * cb]);
        }
        let value = Tensor::from_vec(&[na, ca + cb], data).expect("concat shape");
        Ok(self.push(value, Record::ConcatCols { a, b }))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let mut value = self.value(input).clone();
        for x in value.data_mut() {
            *x *= factor;
        }
        self.push(value, Record::Scale { input, factor })
    }

    /// Elementwise product of a rank-1 node with a constant coefficient
    /// vector of the same length. The coefficients are not differentiated.
    pub fn scale_rows(&mut self, input: Var, coeffs: &Tensor) -> Result<Var, OpError> {
        if self.value(input).shape() != coeffs.shape() {
            return Err(OpError::AxisMismatch {
                op: "scale_rows",
                axis: "rows",
                left: self.value(input).numel(),
                right: coeffs.numel(),
            });
        }
        let mut value = self.value(input).clone();
        for (x, c) in value.data_mut().iter_mut().zip(coeffs.data()) {
            *x *= c;
        }
        Ok(self.push(value, Record::ScaleRows { input, coeffs: coeffs.clone() }))
    }

    /// Mean over all elements (scalar).
    pub fn mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let mut sum = 0.0;
        for v in t.data() {
            sum += v;
        }
        let value = Tensor::scalar(sum / t.numel() as f64);
        self.push(value, Record::Mean { input })
    }

    /// Sum over all elements (scalar).
    pub fn sum(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let mut sum = 0.0;
        for v in t.data() {
            sum += v;
        }
        let value = Tensor::scalar(sum);
        self.push(value, Record::Sum { input })
    }

    /// Reverse sweep from a scalar loss node. Gradients accumulate
    /// additively where a node fans out into several consumers.
    pub fn backward(&self, loss: Var) -> Result<Gradients, OpError> {
        if self.value(loss).numel() != 1 {
            return Err(OpError::NonScalarLoss { numel: self.value(loss).numel() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(grad) = grads[idx].clone() else { continue };
            match &self.nodes[idx].record {
                Record::Leaf | Record::Detach => {}
                Record::Conv3d { input, weight, bias, stride, padding } => {
                    let (di, dw, db) = ops::conv3d_backward(
                        self.value(*input),
                        self.value(*weight),
                        &grad,
                        *stride,
                        *padding,
                    );
                    accumulate(&mut grads[input.0], di);
                    accumulate(&mut grads[weight.0], dw);
                    accumulate(&mut grads[bias.0], db);
                }
                Record::GroupNorm { input, gamma, beta, groups, stats } => {
                    let (di, dg, db) = ops::group_norm_backward(
                        self.value(*input),
                        *groups,
                        self.value(*gamma),
                        stats,
                        &grad,
                    );
                    accumulate(&mut grads[input.0], di);
                    accumulate(&mut grads[gamma.0], dg);
                    accumulate(&mut grads[beta.0], db);
                }
                Record::Gelu { input } => {
                    let di = ops::gelu_backward(self.value(*input), &grad);
                    accumulate(&mut grads[input.0], di);
                }
                Record::Linear { input, weight, bias } => {
                    let (di, dw, db) =
                        ops::linear_backward(self.value(*input), self.value(*weight), &grad);
                    accumulate(&mut grads[input.0], di);
                    accumulate(&mut grads[weight.0], dw);
                    accumulate(&mut grads[bias.0], db);
                }
                Record::GlobalAvgPool { input } => {
                    let di =
                        ops::global_avg_pool_backward(self.value(*input).shape(), &grad);
                    accumulate(&mut grads[input.0], di);
                }
                Record::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let di = ops::softmax_cross_entropy_backward(probs, labels, grad.item());
                    accumulate(&mut grads[logits.0], di);
                }
                Record::L1Mean { a, b } => {
                    let da = ops::l1_mean_backward(self.value(*a), self.value(*b), grad.item());
                    let mut db = da.clone();
                    for v in db.data_mut() {
                        *v = -*v;
                    }
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Record::RowL1Mean { a, b } => {
                    let da = ops::row_l1_mean_backward(self.value(*a), self.value(*b), &grad);
                    let mut db = da.clone();
                    for v in db.data_mut() {
                        *v = -*v;
                    }
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Record::Add { a, b } => {
                    accumulate(&mut grads[a.0], grad.clone());
                    accumulate(&mut grads[b.0], grad);
                }
                Record::ConcatCols { a, b } => {
                    let (n, ca) = self.value(*a).dims2().expect("concat operand");
                    let (_, cb) = self.value(*b).dims2().expect("concat operand");
                    let mut da = Tensor::zeros(&[n, ca]);
                    let mut db = Tensor::zeros(&[n, cb]);
                    let g = grad.data();
                    for row in 0..n {
                        let base = row * (ca + cb);
                        da.data_mut()[row * ca..(row + 1) * ca]
                            .copy_from_slice(&g[base..base + ca]);
                        db.data_mut()[row * cb..(row + 1) * cb]
                            .copy_from_slice(&g[base + ca..base + ca + cb]);
                    }
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Record::Scale { input, factor } => {
                    let mut di = grad.clone();
                    for v in di.data_mut() {
                        *v *= factor;
                    }
                    accumulate(&mut grads[input.0], di);
                }
                Record::ScaleRows { input, coeffs } => {
                    let mut di = grad.clone();
                    for (v, c) in di.data_mut().iter_mut().zip(coeffs.data()) {
                        *v *= c;
                    }
                    accumulate(&mut grads[input.0], di);
                }
                Record::Mean { input } => {
                    let t = self.value(*input);
                    let di = Tensor::filled(t.shape(), grad.item() / t.numel() as f64);
                    accumulate(&mut grads[input.0], di);
                }
                Record::Sum { input } => {
                    let t = self.value(*input);
                    let di = Tensor::filled(t.shape(), grad.item());
                    accumulate(&mut grads[input.0], di);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(t) => {
            debug_assert_eq!(t.shape(), delta.shape());
            for (a, b) in t.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        None => *slot = Some(delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_backward_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.grad(x).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn tie_subgradient_through_detach_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap());
        let frozen = tape.detach(x);
        let loss = tape.l1_mean(x, frozen).unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.grad(x).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn detach_blocks_gradient_flow() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let stopped = tape.detach(x);
        let loss = tape.sum(stopped);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.grad(x).is_none());
        assert_eq!(grads.grad_or_zeros(x, &[2]).data(), &[0.0, 0.0]);
    }

    #[test]
    fn fan_out_accumulates_additively() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap());
        let doubled = tape.scale(x, 2.0);
        let tripled = tape.scale(x, 3.0);
        let combined = tape.add(doubled, tripled).unwrap();
        let loss = tape.sum(combined);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.grad(x).unwrap().data(), &[5.0, 5.0]);
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let build = |tape: &mut Tape| {
            let x = tape.leaf(Tensor::from_vec(&[2], vec![0.3, -0.7]).unwrap());
            let y = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 0.25]).unwrap());
            let l1 = tape.l1_mean(x, y).unwrap();
            let s = tape.sum(x);
            (x, l1, s)
        };

        // Combined loss.
        let mut tape = Tape::new();
        let (x, l1, s) = build(&mut tape);
        let total = tape.add(l1, s).unwrap();
        let combined = tape.backward(total).unwrap();

        // Individual losses on fresh tapes.
        let mut tape_a = Tape::new();
        let (xa, l1a, _) = build(&mut tape_a);
        let ga = tape_a.backward(l1a).unwrap();
        let mut tape_b = Tape::new();
        let (xb, _, sb) = build(&mut tape_b);
        let gb = tape_b.backward(sb).unwrap();

        let expect: Vec<f64> = ga
            .grad(xa)
            .unwrap()
            .data()
            .iter()
            .zip(gb.grad(xb).unwrap().data())
            .map(|(a, b)| a + b)
            .collect();
        assert_eq!(combined.grad(x).unwrap().data(), &expect[..]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        match tape.backward(x) {
            Err(OpError::NonScalarLoss { numel: 2 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn repeated_passes_are_bitwise_identical() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(
                Tensor::from_vec(&[1, 2], vec![0.123456789, -0.987654321]).unwrap(),
            );
            let w = tape.leaf(
                Tensor::from_vec(&[2, 2], vec![0.5, -0.25, 0.125, 0.75]).unwrap(),
            );
            let b = tape.leaf(Tensor::from_vec(&[2], vec![0.1, -0.2]).unwrap());
            let y = tape.linear(x, w, b).unwrap();
            let a = tape.gelu(y);
            let loss = tape.mean(a);
            let grads = tape.backward(loss).unwrap();
            (
                tape.value(loss).item(),
                grads.grad(w).unwrap().data().to_vec(),
            )
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
