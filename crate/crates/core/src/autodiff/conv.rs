//! Convolution (im2col + GEMM) and bilinear upsampling.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::par;

struct ConvDims {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
}

fn conv_dims(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<ConvDims> {
    let (is, ks) = (input.shape(), kernel.shape());
    if is.len() != 3 || ks.len() != 4 {
        return Err(Error::Shape {
            op: "conv2d",
            lhs: is.to_vec(),
            rhs: ks.to_vec(),
        });
    }
    if ks[1] != is[0] || ks[2] != ks[3] || ks[2] % 2 == 0 {
        return Err(Error::Shape {
            op: "conv2d",
            lhs: is.to_vec(),
            rhs: ks.to_vec(),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [ks[0]] {
            return Err(Error::Shape {
                op: "conv2d bias",
                lhs: ks.to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
    }
    Ok(ConvDims {
        cin: is[0],
        cout: ks[0],
        h: is[1],
        w: is[2],
        k: ks[2],
    })
}

/// Unfolds `[Cin,H,W]` into `[Cin*k*k, H*W]` with zero padding `(k-1)/2`.
fn im2col(input: &[f64], d: &ConvDims) -> Vec<f64> {
    let hw = d.h * d.w;
    let kk = d.k * d.k;
    let pad = (d.k / 2) as isize;
    let mut cols = vec![0.0; d.cin * kk * hw];
    par::for_each_chunk_mut(&mut cols, kk * hw, |ci, block| {
        let src = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = &mut block[(ky * d.k + kx) * hw..(ky * d.k + kx + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..d.h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= d.h as isize {
                        continue;
                    }
                    let srow = &src[sy as usize * d.w..(sy as usize + 1) * d.w];
                    let drow = &mut row[y * d.w..(y + 1) * d.w];
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (d.w as isize - dx).min(d.w as isize).max(0) as usize;
                    for x in x0..x1 {
                        drow[x] = srow[(x as isize + dx) as usize];
                    }
                }
            }
        }
    });
    cols
}

/// Adjoint of [`im2col`].
fn col2im(cols: &[f64], d: &ConvDims) -> Vec<f64> {
    let hw = d.h * d.w;
    let kk = d.k * d.k;
    let pad = (d.k / 2) as isize;
    let mut out = vec![0.0; d.cin * hw];
    par::for_each_chunk_mut(&mut out, hw, |ci, dst| {
        let block = &cols[ci * kk * hw..(ci + 1) * kk * hw];
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = &block[(ky * d.k + kx) * hw..(ky * d.k + kx + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..d.h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= d.h as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (d.w as isize - dx).min(d.w as isize).max(0) as usize;
                    let srow = &row[y * d.w..(y + 1) * d.w];
                    let drow = &mut dst[sy as usize * d.w..(sy as usize + 1) * d.w];
                    for x in x0..x1 {
                        drow[(x as isize + dx) as usize] += srow[x];
                    }
                }
            }
        }
    });
    out
}

/// `c[m,n] = a[m,k] * b[k,n]` with explicit strides, overwriting `c`.
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
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(0.0);
        return;
    }
    // SAFETY: the slices cover every index implied by the dimensions and strides
    // passed here (checked by the callers' shape validation), and `c` does not
    // alias `a` or `b`.
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

pub(crate) fn conv2d_forward(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = conv_dims(input, kernel, Some(bias))?;
    let hw = d.h * d.w;
    let ckk = d.cin * d.k * d.k;
    let cols = im2col(input.data(), &d);
    let mut out = vec![0.0; d.cout * hw];
    gemm(d.cout, ckk, hw, kernel.data(), ckk, 1, &cols, hw, 1, &mut out);
    for (co, row) in out.chunks_mut(hw).enumerate() {
        let b = bias.data()[co];
        row.iter_mut().for_each(|x| *x += b);
    }
    Tensor::new(vec![d.cout, d.h, d.w], out)
}

pub(crate) fn conv2d_backward(input: &Tensor, kernel: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let d = conv_dims(input, kernel, None).expect("validated in forward");
    let hw = d.h * d.w;
    let ckk = d.cin * d.k * d.k;
    let cols = im2col(input.data(), &d);
    let gd = g.data();

    let mut gk = vec![0.0; d.cout * ckk];
    // gK = gOut [cout,hw] * cols^T [hw,ckk]
    gemm(d.cout, hw, ckk, gd, hw, 1, &cols, 1, hw, &mut gk);

    let mut gcols = vec![0.0; ckk * hw];
    // gcols = K^T [ckk,cout] * gOut [cout,hw]
    gemm(ckk, d.cout, hw, kernel.data(), 1, ckk, gd, hw, 1, &mut gcols);
    let gi = col2im(&gcols, &d);

    let gb: Vec<f64> = gd.chunks(hw).map(|r| r.iter().sum()).collect();
    (
        Tensor::new(input.shape().to_vec(), gi).expect("shape"),
        Tensor::new(kernel.shape().to_vec(), gk).expect("shape"),
        Tensor::new(vec![d.cout], gb).expect("shape"),
    )
}

/// Source taps for output index `o` of a ×2 upsample over `n` samples.
#[inline]
fn taps(o: usize, n: usize) -> (usize, usize, f64) {
    let src = ((o as f64 + 0.5) * 0.5 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, src - i0 as f64)
}

pub(crate) fn upsample2x_forward(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if s.len() != 3 || s[1] == 0 || s[2] == 0 {
        return Err(Error::invalid(format!(
            "upsample2x expects [C,H,W] with H,W >= 1, got {s:?}"
        )));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let (oh, ow) = (2 * h, 2 * w);
    let xt: Vec<_> = (0..ow).map(|x| taps(x, w)).collect();
    let yt: Vec<_> = (0..oh).map(|y| taps(y, h)).collect();
    let src = input.data();
    let mut out = vec![0.0; c * oh * ow];
    par::for_each_chunk_mut(&mut out, oh * ow, |ch, dst| {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for (y, &(y0, y1, ly)) in yt.iter().enumerate() {
            for (x, &(x0, x1, lx)) in xt.iter().enumerate() {
                let top = plane[y0 * w + x0] * (1.0 - lx) + plane[y0 * w + x1] * lx;
                let bot = plane[y1 * w + x0] * (1.0 - lx) + plane[y1 * w + x1] * lx;
                dst[y * ow + x] = top * (1.0 - ly) + bot * ly;
            }
        }
    });
    Tensor::new(vec![c, oh, ow], out)
}

pub(crate) fn upsample2x_backward(in_shape: &[usize], g: &Tensor) -> Tensor {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (2 * h, 2 * w);
    let xt: Vec<_> = (0..ow).map(|x| taps(x, w)).collect();
    let yt: Vec<_> = (0..oh).map(|y| taps(y, h)).collect();
    let gd = g.data();
    let mut out = vec![0.0; c * h * w];
    par::for_each_chunk_mut(&mut out, h * w, |ch, dst| {
        let gp = &gd[ch * oh * ow..(ch + 1) * oh * ow];
        for (y, &(y0, y1, ly)) in yt.iter().enumerate() {
            for (x, &(x0, x1, lx)) in xt.iter().enumerate() {
                let v = gp[y * ow + x];
                dst[y0 * w + x0] += v * (1.0 - ly) * (1.0 - lx);
                dst[y0 * w + x1] += v * (1.0 - ly) * lx;
                dst[y1 * w + x0] += v * ly * (1.0 - lx);
                dst[y1 * w + x1] += v * ly * lx;
            }
        }
    });
    Tensor::new(in_shape.to_vec(), out).expect("shape")
}
