//! Tensor-level reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and enough
//! information to push an adjoint back to its inputs. [`Tape::grad`] replays
//! the nodes in reverse order and then clears the tape, invalidating all
//! previously issued [`Var`] handles.

use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    tape: u64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    Tanh(usize),
    Sum(usize),
    WeightedAbsPow {
        input: usize,
        weights: Vec<f64>,
        p: f64,
    },
    /// Scalar-valued function of `input` whose gradient was computed eagerly.
    External {
        input: usize,
        grad: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients returned by [`Tape::grad`], in the order leaves were requested.
#[derive(Clone, Debug)]
pub struct Gradients {
    leaves: Vec<Var>,
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.leaves
            .iter()
            .position(|v| *v == leaf)
            .map(|i| &self.grads[i])
    }

    pub fn into_vec(self) -> Vec<Tensor> {
        self.grads
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Tensor)> {
        self.leaves.iter().zip(&self.grads)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: fresh_id(),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            index: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape == self.id && v.index < self.nodes.len() {
            Ok(v.index)
        } else {
            Err(Error::UnknownVariable(v.index))
        }
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.index(v)?].value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let out = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        Ok(self.push(out, Op::MatMul(ia, ib)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let out = self.nodes[ia].value.transpose()?;
        Ok(self.push(out, Op::Transpose(ia)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let out = self.nodes[ia].value.add(&self.nodes[ib].value)?;
        Ok(self.push(out, Op::Add(ia, ib)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let out = self.nodes[ia].value.sub(&self.nodes[ib].value)?;
        Ok(self.push(out, Op::Sub(ia, ib)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let out = self.nodes[ia].value.mul(&self.nodes[ib].value)?;
        Ok(self.push(out, Op::Mul(ia, ib)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ia = self.index(a)?;
        let out = self.nodes[ia].value.scale(s);
        Ok(self.push(out, Op::Scale(ia, s)))
    }

    /// `a + 1·row` where `row` is `[1, n]` and `a` is `[m, n]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ia, ir) = (self.index(a)?, self.index(row)?);
        let out = self.nodes[ia].value.add_row(&self.nodes[ir].value)?;
        Ok(self.push(out, Op::AddRow(ia, ir)))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let out = self.nodes[ia].value.tanh();
        Ok(self.push(out, Op::Tanh(ia)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let out = Tensor::scalar(self.nodes[ia].value.sum());
        Ok(self.push(out, Op::Sum(ia)))
    }

    /// `Σ_{r,c} w_c |a_rc|^p` for an `[m, n]` matrix and `n` column weights.
    pub fn weighted_abs_pow_sum(&mut self, a: Var, weights: &[f64], p: f64) -> Result<Var> {
        let ia = self.index(a)?;
        let value = &self.nodes[ia].value;
        if weights.len() != value.cols() {
            return Err(Error::DimensionMismatch {
                op: "weighted_abs_pow_sum",
                left: value.shape().to_vec(),
                right: vec![weights.len()],
            });
        }
        if p < 1.0 {
            return Err(Error::invalid(format!("power must be >= 1, got {p}")));
        }
        let out = Tensor::scalar(weighted_abs_pow(value, weights, p));
        Ok(self.push(
            out,
            Op::WeightedAbsPow {
                input: ia,
                weights: weights.to_vec(),
                p,
            },
        ))
    }

    /// Records a scalar function of `input` with a precomputed gradient.
    pub fn external_scalar(&mut self, input: Var, value: f64, grad: Tensor) -> Result<Var> {
        let ia = self.index(input)?;
        let shape = self.nodes[ia].value.shape();
        if grad.shape() != shape {
            return Err(Error::DimensionMismatch {
                op: "external_scalar",
                left: shape.to_vec(),
                right: grad.shape().to_vec(),
            });
        }
        Ok(self.push(Tensor::scalar(value), Op::External { input: ia, grad }))
    }

    /// Reverse sweep from the scalar `loss`. Clears the tape.
    pub fn grad(&mut self, loss: Var, leaves: &[Var]) -> Result<Gradients> {
        let il = self.index(loss)?;
        let leaf_idx: Vec<usize> = leaves
            .iter()
            .map(|v| self.index(*v))
            .collect::<Result<_>>()?;
        if !self.nodes[il].value.is_scalar() {
            return Err(Error::NotScalar(self.nodes[il].value.shape().to_vec()));
        }

        let mut adj: Vec<Option<Tensor>> = (0..=il).map(|_| None).collect();
        adj[il] = Some(Tensor::full(self.nodes[il].value.shape(), 1.0));

        fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
            match slot {
                Some(t) => t.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for i in (0..=il).rev() {
            // inputs of node i always have smaller indices
            let (lower, upper) = adj.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::MatMul(a, b) => {
                    let va = &self.nodes[*a].value;
                    let vb = &self.nodes[*b].value;
                    let ga = g.matmul(&vb.transpose()?)?;
                    let gb = va.transpose()?.matmul(g)?;
                    accumulate(&mut lower[*a], ga);
                    accumulate(&mut lower[*b], gb);
                }
                Op::Transpose(a) => accumulate(&mut lower[*a], g.transpose()?),
                Op::Add(a, b) => {
                    accumulate(&mut lower[*a], g.clone());
                    accumulate(&mut lower[*b], g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut lower[*a], g.clone());
                    accumulate(&mut lower[*b], g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let ga = g.mul(&self.nodes[*b].value)?;
                    let gb = g.mul(&self.nodes[*a].value)?;
                    accumulate(&mut lower[*a], ga);
                    accumulate(&mut lower[*b], gb);
                }
                Op::Scale(a, s) => accumulate(&mut lower[*a], g.scale(*s)),
                Op::AddRow(a, r) => {
                    let shape = self.nodes[*r].value.shape().to_vec();
                    accumulate(&mut lower[*r], g.sum_rows()?.reshaped(&shape));
                    accumulate(&mut lower[*a], g.clone());
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for (gv, yv) in ga.data_mut().iter_mut().zip(y.data()) {
                        *gv *= 1.0 - yv * yv;
                    }
                    accumulate(&mut lower[*a], ga);
                }
                Op::Sum(a) => {
                    let s = g.item()?;
                    accumulate(
                        &mut lower[*a],
                        Tensor::full(self.nodes[*a].value.shape(), s),
                    );
                }
                Op::WeightedAbsPow { input, weights, p } => {
                    let s = g.item()?;
                    let x = &self.nodes[*input].value;
                    let cols = x.cols();
                    let mut gx = Tensor::zeros(x.shape());
                    for (k, (o, v)) in gx.data_mut().iter_mut().zip(x.data()).enumerate() {
                        *o = s * weights[k % cols] * abs_pow_derivative(*v, *p);
                    }
                    accumulate(&mut lower[*input], gx);
                }
                Op::External { input, grad } => {
                    let s = g.item()?;
                    accumulate(&mut lower[*input], grad.scale(s));
                }
            }
        }

        let grads = leaf_idx
            .iter()
            .map(|&i| {
                adj.get(i)
                    .and_then(|a| a.clone())
                    .unwrap_or_else(|| Tensor::zeros(self.nodes[i].value.shape()))
            })
            .collect();
        let out = Gradients {
            leaves: leaves.to_vec(),
            grads,
        };
        self.clear();
        Ok(out)
    }

    /// Drops all nodes; previously issued handles become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.id = fresh_id();
    }
}

pub(crate) fn weighted_abs_pow(x: &Tensor, weights: &[f64], p: f64) -> f64 {
    let cols = x.cols();
    let mut total = 0.0;
    for row in x.data().chunks(cols) {
        for (v, w) in row.iter().zip(weights) {
            total += w * abs_pow(*v, p);
        }
    }
    total
}

#[inline]
pub(crate) fn abs_pow(v: f64, p: f64) -> f64 {
    if p == 2.0 {
        v * v
    } else if p == 1.0 {
        v.abs()
    } else {
        v.abs().powf(p)
    }
}

#[inline]
fn abs_pow_derivative(v: f64, p: f64) -> f64 {
    if p == 2.0 {
        2.0 * v
    } else if v == 0.0 {
        0.0
    } else if p == 1.0 {
        v.signum()
    } else {
        p * v.abs().powf(p - 1.0) * v.signum()
    }
}
