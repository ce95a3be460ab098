use super::conv;
use super::ops::{self, BinaryOp, UnaryOp};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Differentiable operation with a hand-written vector-Jacobian product.
///
/// The forward value is computed by the caller and handed to
/// [`Graph::custom`]; implementors keep whatever they need for the backward
/// pass inside `self`.
pub trait Function {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input (same shape as that input), or `None`
    /// for inputs that do not depend on the op's differentiable path.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &Tensor,
    ) -> Result<Vec<Option<Tensor>>>;
}

pub(crate) enum Op {
    Leaf,
    Unary(UnaryOp),
    Binary(BinaryOp),
    Sum { axes: Vec<usize> },
    Mean { axes: Vec<usize> },
    Narrow { start: usize, len: usize },
    Concat,
    Diff { axis: usize },
    Reshape,
    Conv2d,
    Upsample2x,
    Custom(Box<dyn Function>),
}

struct Node {
    value: Tensor,
    op: Op,
    inputs: Vec<usize>,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Reverse-mode tape. Nodes are appended in execution order; `backward`
/// walks them in exact reverse order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and saved intermediate.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.nodes.shrink_to_fit();
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, Vec::new(), true)
    }

    /// Detached leaf; never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, Vec::new(), false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a trainable leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: Vec<usize>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, inputs.iter().map(|v| v.0).collect(), rg)
    }

    pub fn unary(&mut self, kind: UnaryOp, a: Var) -> Var {
        let out = ops::unary_forward(kind, self.value(a));
        self.derived(out, Op::Unary(kind), &[a])
    }

    pub fn binary(&mut self, kind: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let out = ops::binary_forward(kind, self.value(a), self.value(b))?;
        Ok(self.derived(out, Op::Binary(kind), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn sq_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::SqDiff, a, b)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Abs, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn reciprocal(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Reciprocal, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(UnaryOp::Clamp { lo, hi }, a)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(UnaryOp::LeakyRelu(slope), a)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(UnaryOp::Scale(k), a)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(UnaryOp::AddScalar(k), a)
    }

    /// Sum over `axes`, or over everything when `axes` is `None`.
    pub fn sum(&mut self, a: Var, axes: Option<&[usize]>) -> Result<Var> {
        let axes = ops::normalize_axes(self.shape(a), axes)?;
        let out = ops::reduce_sum(self.value(a), &axes);
        Ok(self.derived(out, Op::Sum { axes }, &[a]))
    }

    pub fn mean(&mut self, a: Var, axes: Option<&[usize]>) -> Result<Var> {
        let axes = ops::normalize_axes(self.shape(a), axes)?;
        let mut out = ops::reduce_sum(self.value(a), &axes);
        let n = ops::reduced_count(self.shape(a), &axes) as f64;
        out.data_mut().iter_mut().for_each(|x| *x /= n);
        Ok(self.derived(out, Op::Mean { axes }, &[a]))
    }

    /// Slice `len` entries along the leading axis.
    pub fn narrow(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = ops::narrow_forward(self.value(a), start, len)?;
        Ok(self.derived(out, Op::Narrow { start, len }, &[a]))
    }

    /// Concatenate along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat_forward(&vals)?;
        Ok(self.derived(out, Op::Concat, parts))
    }

    /// Forward difference `a[i+1] - a[i]` along `axis`.
    pub fn diff(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = ops::diff_forward(self.value(a), axis)?;
        Ok(self.derived(out, Op::Diff { axis }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.derived(out, Op::Reshape, &[a]))
    }

    /// Same-size 2-D cross-correlation, `[Cin,H,W] * [Cout,Cin,k,k] + [Cout]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let out = conv::conv2d_forward(self.value(input), self.value(kernel), self.value(bias))?;
        Ok(self.derived(out, Op::Conv2d, &[input, kernel, bias]))
    }

    /// Bilinear ×2 upsampling, half-pixel centers.
    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        let out = conv::upsample2x_forward(self.value(input))?;
        Ok(self.derived(out, Op::Upsample2x, &[input]))
    }

    pub fn custom(&mut self, f: Box<dyn Function>, inputs: &[Var], output: Tensor) -> Var {
        self.derived(output, Op::Custom(f), inputs)
    }

    /// Accumulates d`loss`/d`leaf` into every trainable leaf reachable from
    /// `loss`. Repeated calls add up.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(root.value.shape().to_vec(), 1.0));

        for id in (0..=loss.0).rev() {
            let Some(g_out) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[id] = Some(g_out);
                continue;
            }
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let in_grads = backward_node(&node.op, &inputs, &node.value, &g_out)?;
            for (&src, g) in node.inputs.iter().zip(in_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[src].requires_grad {
                    continue;
                }
                match &mut grads[src] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        for (id, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let node = &mut self.nodes[id];
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

fn backward_node(
    op: &Op,
    inputs: &[&Tensor],
    output: &Tensor,
    g: &Tensor,
) -> Result<Vec<Option<Tensor>>> {
    Ok(match op {
        Op::Leaf => Vec::new(),
        Op::Unary(kind) => vec![Some(ops::unary_backward(*kind, inputs[0], output, g))],
        Op::Binary(kind) => {
            let (ga, gb) = ops::binary_backward(*kind, inputs[0], inputs[1], g);
            vec![Some(ga), Some(gb)]
        }
        Op::Sum { axes } => vec![Some(ops::reduce_backward(inputs[0].shape(), axes, g, 1.0))],
        Op::Mean { axes } => {
            let n = ops::reduced_count(inputs[0].shape(), axes) as f64;
            vec![Some(ops::reduce_backward(inputs[0].shape(), axes, g, 1.0 / n))]
        }
        Op::Narrow { start, len } => vec![Some(ops::narrow_backward(inputs[0], *start, *len, g))],
        Op::Concat => ops::concat_backward(inputs, g).into_iter().map(Some).collect(),
        Op::Diff { axis } => vec![Some(ops::diff_backward(inputs[0].shape(), *axis, g))],
        Op::Reshape => vec![Some(g.clone().reshape(inputs[0].shape().to_vec())?)],
        Op::Conv2d => {
            let (gi, gk, gb) = conv::conv2d_backward(inputs[0], inputs[1], g);
            vec![Some(gi), Some(gk), Some(gb)]
        }
        Op::Upsample2x => vec![Some(conv::upsample2x_backward(inputs[0].shape(), g))],
        Op::Custom(f) => {
            let out = f.backward(inputs, output, g)?;
            if out.len() != inputs.len() {
                return Err(Error::invalid(format!(
                    "custom op {} returned {} gradients for {} inputs",
                    f.name(),
                    out.len(),
                    inputs.len()
                )));
            }
            out
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 12.0);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let c = g.constant(Tensor::from_vec(vec![5.0, 7.0]));
        let y = g.mul(x, c).unwrap();
        let s = g.sum(y, None).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[5.0, 7.0]);
        assert!(g.grad(c).is_none());
        assert!(!g.requires_grad(c));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn shared_subexpression_sums_paths() {
        // y = x*x + x  => dy/dx = 2x + 1
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let sq = g.mul(x, x).unwrap();
        let y = g.add(sq, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 5.0);
    }

    #[test]
    fn clear_releases_nodes() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(vec![100]));
        let _ = g.exp(x);
        assert_eq!(g.len(), 2);
        g.clear();
        assert!(g.is_empty());
    }
}
