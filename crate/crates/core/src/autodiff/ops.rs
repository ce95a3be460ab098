//! Forward and backward kernels for the built-in tensor ops.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Abs,
    Exp,
    Reciprocal,
    Sigmoid,
    Clamp { lo: f64, hi: f64 },
    LeakyRelu(f64),
    Scale(f64),
    AddScalar(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    SqDiff,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn unary_forward(kind: UnaryOp, a: &Tensor) -> Tensor {
    match kind {
        UnaryOp::Abs => a.map(f64::abs),
        UnaryOp::Exp => a.map(f64::exp),
        UnaryOp::Reciprocal => a.map(|x| 1.0 / x),
        UnaryOp::Sigmoid => a.map(sigmoid),
        UnaryOp::Clamp { lo, hi } => a.map(|x| x.clamp(lo, hi)),
        UnaryOp::LeakyRelu(s) => a.map(|x| if x > 0.0 { x } else { s * x }),
        UnaryOp::Scale(k) => a.map(|x| k * x),
        UnaryOp::AddScalar(k) => a.map(|x| x + k),
    }
}

pub(crate) fn unary_backward(kind: UnaryOp, a: &Tensor, out: &Tensor, g: &Tensor) -> Tensor {
    let mut r = g.clone();
    let ad = a.data();
    let od = out.data();
    for (i, gi) in r.data_mut().iter_mut().enumerate() {
        let x = ad[i];
        let d = match kind {
            UnaryOp::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnaryOp::Exp => od[i],
            UnaryOp::Reciprocal => -od[i] * od[i],
            UnaryOp::Sigmoid => od[i] * (1.0 - od[i]),
            UnaryOp::Clamp { lo, hi } => {
                if x > lo && x < hi {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryOp::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            UnaryOp::Scale(k) => k,
            UnaryOp::AddScalar(_) => 1.0,
        };
        *gi *= d;
    }
    r
}

/// Broadcast rule: equal shapes, or either side holds a single element.
fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.numel() == 1 {
        Ok(a.shape().to_vec())
    } else if a.numel() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn op_name(kind: BinaryOp) -> &'static str {
    match kind {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
        BinaryOp::SqDiff => "sq_diff",
    }
}

#[inline]
fn bin(kind: BinaryOp, x: f64, y: f64) -> f64 {
    match kind {
        BinaryOp::Add => x + y,
        BinaryOp::Sub => x - y,
        BinaryOp::Mul => x * y,
        BinaryOp::Div => x / y,
        BinaryOp::SqDiff => (x - y) * (x - y),
    }
}

pub(crate) fn binary_forward(kind: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape = broadcast_shape(op_name(kind), a, b)?;
    let n: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let (sa, sb) = (ad.len() > 1 || n == 1, bd.len() > 1 || n == 1);
    let data = (0..n)
        .map(|i| {
            let x = if sa { ad[i] } else { ad[0] };
            let y = if sb { bd[i] } else { bd[0] };
            bin(kind, x, y)
        })
        .collect();
    Tensor::new(shape, data)
}

pub(crate) fn binary_backward(kind: BinaryOp, a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let n = g.numel();
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let a_full = ad.len() == n;
    let b_full = bd.len() == n;
    let mut ga = Tensor::zeros(a.shape().to_vec());
    let mut gb = Tensor::zeros(b.shape().to_vec());
    {
        let gad = ga.data_mut();
        for i in 0..n {
            let x = if a_full { ad[i] } else { ad[0] };
            let y = if b_full { bd[i] } else { bd[0] };
            let (dx, _) = partials(kind, x, y);
            gad[if a_full { i } else { 0 }] += gd[i] * dx;
        }
    }
    {
        let gbd = gb.data_mut();
        for i in 0..n {
            let x = if a_full { ad[i] } else { ad[0] };
            let y = if b_full { bd[i] } else { bd[0] };
            let (_, dy) = partials(kind, x, y);
            gbd[if b_full { i } else { 0 }] += gd[i] * dy;
        }
    }
    (ga, gb)
}

#[inline]
fn partials(kind: BinaryOp, x: f64, y: f64) -> (f64, f64) {
    match kind {
        BinaryOp::Add => (1.0, 1.0),
        BinaryOp::Sub => (1.0, -1.0),
        BinaryOp::Mul => (y, x),
        BinaryOp::Div => (1.0 / y, -x / (y * y)),
        BinaryOp::SqDiff => (2.0 * (x - y), -2.0 * (x - y)),
    }
}

pub(crate) fn normalize_axes(shape: &[usize], axes: Option<&[usize]>) -> Result<Vec<usize>> {
    match axes {
        None => Ok((0..shape.len()).collect()),
        Some(ax) => {
            let mut v = ax.to_vec();
            v.sort_unstable();
            v.dedup();
            if let Some(&bad) = v.iter().find(|&&a| a >= shape.len()) {
                return Err(Error::invalid(format!(
                    "reduction axis {bad} out of range for shape {shape:?}"
                )));
            }
            Ok(v)
        }
    }
}

pub(crate) fn reduced_count(shape: &[usize], axes: &[usize]) -> usize {
    axes.iter().map(|&a| shape[a]).product()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Maps every flat input index to its flat index in the reduced output.
fn reduce_index_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &d)| d)
        .collect();
    let in_strides = strides(shape);
    let out_strides = strides(&out_shape);
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    for flat in 0..n {
        let mut o = 0;
        let mut k = 0;
        for (ax, &st) in in_strides.iter().enumerate() {
            let idx = (flat / st) % shape[ax];
            if !axes.contains(&ax) {
                o += idx * out_strides[k];
                k += 1;
            }
        }
        map.push(o);
    }
    (out_shape, map)
}

pub(crate) fn reduce_sum(a: &Tensor, axes: &[usize]) -> Tensor {
    if axes.len() == a.ndim() {
        return Tensor::scalar(a.sum());
    }
    let (out_shape, map) = reduce_index_map(a.shape(), axes);
    let mut out = Tensor::zeros(out_shape);
    let od = out.data_mut();
    for (i, &x) in a.data().iter().enumerate() {
        od[map[i]] += x;
    }
    out
}

pub(crate) fn reduce_backward(in_shape: &[usize], axes: &[usize], g: &Tensor, k: f64) -> Tensor {
    if axes.len() == in_shape.len() {
        return Tensor::full(in_shape.to_vec(), g.item() * k);
    }
    let (_, map) = reduce_index_map(in_shape, axes);
    let gd = g.data();
    Tensor::new(in_shape.to_vec(), map.iter().map(|&o| gd[o] * k).collect())
        .expect("reduce backward shape")
}

fn leading_block(t: &Tensor) -> usize {
    t.shape().iter().skip(1).product()
}

pub(crate) fn narrow_forward(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let lead = *a.shape().first().ok_or_else(|| Error::invalid("narrow on a scalar"))?;
    if start + len > lead {
        return Err(Error::invalid(format!(
            "narrow {start}..{} out of range for leading dim {lead}",
            start + len
        )));
    }
    let block = leading_block(a);
    let mut shape = a.shape().to_vec();
    shape[0] = len;
    Tensor::new(shape, a.data()[start * block..(start + len) * block].to_vec())
}

pub(crate) fn narrow_backward(a: &Tensor, start: usize, len: usize, g: &Tensor) -> Tensor {
    let block = leading_block(a);
    let mut r = Tensor::zeros(a.shape().to_vec());
    r.data_mut()[start * block..(start + len) * block].copy_from_slice(g.data());
    r
}

pub(crate) fn concat_forward(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
    if first.ndim() == 0 {
        return Err(Error::invalid("concat of scalars"));
    }
    let tail = &first.shape()[1..];
    let mut lead = 0;
    let mut data = Vec::new();
    for p in parts {
        if p.ndim() == 0 || &p.shape()[1..] != tail {
            return Err(Error::Shape {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        lead += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    let mut shape = first.shape().to_vec();
    shape[0] = lead;
    Tensor::new(shape, data)
}

pub(crate) fn concat_backward(parts: &[&Tensor], g: &Tensor) -> Vec<Tensor> {
    let mut off = 0;
    parts
        .iter()
        .map(|p| {
            let n = p.numel();
            let t = Tensor::new(p.shape().to_vec(), g.data()[off..off + n].to_vec())
                .expect("concat backward shape");
            off += n;
            t
        })
        .collect()
}

pub(crate) fn diff_forward(a: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = a.shape();
    if axis >= shape.len() || shape[axis] < 2 {
        return Err(Error::invalid(format!(
            "diff along axis {axis} needs extent >= 2, shape {shape:?}"
        )));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let mut out_shape = shape.to_vec();
    out_shape[axis] = n - 1;
    let d = a.data();
    let mut data = Vec::with_capacity(outer * (n - 1) * inner);
    for o in 0..outer {
        for i in 0..n - 1 {
            let base0 = (o * n + i) * inner;
            let base1 = base0 + inner;
            for k in 0..inner {
                data.push(d[base1 + k] - d[base0 + k]);
            }
        }
    }
    Tensor::new(out_shape, data)
}

pub(crate) fn diff_backward(in_shape: &[usize], axis: usize, g: &Tensor) -> Tensor {
    let outer: usize = in_shape[..axis].iter().product();
    let inner: usize = in_shape[axis + 1..].iter().product();
    let n = in_shape[axis];
    let mut r = Tensor::zeros(in_shape.to_vec());
    let rd = r.data_mut();
    let gd = g.data();
    for o in 0..outer {
        for i in 0..n - 1 {
            let gb = (o * (n - 1) + i) * inner;
            let base0 = (o * n + i) * inner;
            let base1 = base0 + inner;
            for k in 0..inner {
                rd[base1 + k] += gd[gb + k];
                rd[base0 + k] -= gd[gb + k];
            }
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::super::Graph;
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn add_values() {
        let r = binary_forward(BinaryOp::Add, &t(&[1.0, 2.0]), &t(&[3.0, 4.0])).unwrap();
        assert_eq!(r.data(), &[4.0, 6.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![3, 2]);
        let err = binary_forward(BinaryOp::Mul, &a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
    }

    #[test]
    fn scalar_broadcast_gradient_sums() {
        let mut g = Graph::new();
        let a = g.param(t(&[1.0, 2.0, 3.0]));
        let s = g.param(Tensor::scalar(2.0));
        let y = g.mul(a, s).unwrap();
        let l = g.sum(y, None).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(s).unwrap().item(), 6.0);
        assert_eq!(g.grad(a).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn abs_gradient_sign() {
        let r = unary_backward(UnaryOp::Abs, &t(&[-2.0]), &t(&[2.0]), &t(&[1.0]));
        assert_eq!(r.data(), &[-1.0]);
    }

    #[test]
    fn clamp_saturated_gradient_is_zero() {
        let k = UnaryOp::Clamp { lo: 0.0, hi: 1.0 };
        let out = unary_forward(k, &t(&[2.0]));
        assert_eq!(out.data(), &[1.0]);
        let r = unary_backward(k, &t(&[2.0]), &out, &t(&[1.0]));
        assert_eq!(r.data(), &[0.0]);
    }

    #[test]
    fn sum_and_mean() {
        assert_eq!(reduce_sum(&t(&[1.0, 2.0, 3.0]), &[0]).item(), 6.0);
        let mut g = Graph::new();
        let x = g.param(t(&[1.0, 2.0, 3.0, 4.0]));
        let m = g.mean(x, None).unwrap();
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn channel_sum_of_one_hot_selects() {
        // [C=2, H=1, W=3]; mask picks channel 1 for pixel 0, channel 0 otherwise.
        let vals = Tensor::new(vec![2, 1, 3], vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0]).unwrap();
        let mask = Tensor::new(vec![2, 1, 3], vec![0.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let prod = binary_forward(BinaryOp::Mul, &vals, &mask).unwrap();
        let s = reduce_sum(&prod, &[0]);
        assert_eq!(s.shape(), &[1, 3]);
        assert_eq!(s.data(), &[10.0, 2.0, 3.0]);
    }

    #[test]
    fn bad_axis_rejected() {
        assert!(normalize_axes(&[2, 2], Some(&[2])).is_err());
    }

    #[test]
    fn reduce_middle_axis() {
        let a = Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap();
        let s = reduce_sum(&a, &[1]);
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.data(), &[6.0, 9.0, 24.0, 27.0]);
    }

    #[test]
    fn diff_roundtrip_shape() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 4.0, 9.0, 0.0, 0.0, 1.0]).unwrap();
        let d0 = diff_forward(&a, 0).unwrap();
        assert_eq!(d0.data(), &[-1.0, -4.0, -8.0]);
        let d1 = diff_forward(&a, 1).unwrap();
        assert_eq!(d1.data(), &[3.0, 5.0, 0.0, 1.0]);
    }
}
