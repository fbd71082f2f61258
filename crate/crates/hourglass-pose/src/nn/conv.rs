//! The three convolution primitives, via im2col and one GEMM each.
//!
//! Layouts: activations `(B, C, H, W)`, conv weights `(Cout, Cin, K, K)`,
//! column matrices `(Cin*K*K, B*OH*OW)` with column index
//! `b*OH*OW + oy*OW + ox`. Kernels are square, stride and padding are equal
//! on both axes.

use crate::{Error, Result};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView4, s};

/// Output side of a standard convolution: floor((n + 2p - k)/s) + 1.
pub fn conv_out_side(input: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride < 1 || k < 1 {
        return Err(Error::contract("kernel and stride must be >= 1"));
    }
    let padded = input + 2 * padding;
    if padded < k {
        return Err(Error::contract(format!(
            "kernel {k} exceeds padded input {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Unfolds `x` into the column matrix. Out-of-bounds taps read as zero.
pub fn im2col(x: &ArrayView4<f64>, k: usize, stride: usize, padding: usize) -> Result<Array2<f64>> {
    let (b, c, h, w) = x.dim();
    let oh = conv_out_side(h, k, stride, padding)?;
    let ow = conv_out_side(w, k, stride, padding)?;
    let mut cols = Array2::<f64>::zeros((c * k * k, b * oh * ow));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let mut row_view = cols.row_mut(row);
                let rv = row_view.as_slice_mut().expect("row is contiguous");
                for bi in 0..b {
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let base = (bi * oh + oy) * ow;
                        if stride == 1 {
                            let shift = kx as isize - padding as isize;
                            let ox_lo = (-shift).max(0) as usize;
                            let ox_hi = ((w as isize - shift).min(ow as isize)).max(0) as usize;
                            if ox_hi > ox_lo {
                                let src_lo = (ox_lo as isize + shift) as usize;
                                let src_hi = (ox_hi as isize + shift) as usize;
                                let src = x.slice(s![bi, ci, iy, src_lo..src_hi]);
                                rv[base + ox_lo..base + ox_hi]
                                    .copy_from_slice(src.as_slice().expect("contiguous"));
                            }
                        } else {
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix >= 0 && ix < w as isize {
                                    rv[base + ox] = x[[bi, ci, iy, ix as usize]];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(cols)
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto an image grid.
fn col2im_add(
    cols: &Array2<f64>,
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<Array4<f64>> {
    let oh = conv_out_side(h, k, stride, padding)?;
    let ow = conv_out_side(w, k, stride, padding)?;
    let mut gx = Array4::<f64>::zeros((b, c, h, w));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let row_view = cols.row(row);
                let rv = row_view.as_slice().expect("row is contiguous");
                for bi in 0..b {
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let base = (bi * oh + oy) * ow;
                        if stride == 1 {
                            let shift = kx as isize - padding as isize;
                            let ox_lo = (-shift).max(0) as usize;
                            let ox_hi = ((w as isize - shift).min(ow as isize)).max(0) as usize;
                            if ox_hi > ox_lo {
                                let dst_lo = (ox_lo as isize + shift) as usize;
                                let dst_hi = (ox_hi as isize + shift) as usize;
                                let mut dst = gx.slice_mut(s![bi, ci, iy, dst_lo..dst_hi]);
                                let dst = dst.as_slice_mut().expect("contiguous");
                                for (d, v) in dst.iter_mut().zip(&rv[base + ox_lo..base + ox_hi]) {
                                    *d += v;
                                }
                            }
                        } else {
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix >= 0 && ix < w as isize {
                                    gx[[bi, ci, iy, ix as usize]] += rv[base + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// `(B, C, OH, OW)` to the GEMM layout `(C, B*OH*OW)`.
fn to_mat(x: &ArrayView4<f64>) -> Array2<f64> {
    let (b, c, oh, ow) = x.dim();
    let p = oh * ow;
    let mut m = Array2::<f64>::zeros((c, b * p));
    for ci in 0..c {
        let mut row_view = m.row_mut(ci);
        let rv = row_view.as_slice_mut().expect("contiguous");
        for bi in 0..b {
            let src = x.slice(s![bi, ci, .., ..]);
            let src = src.to_slice().expect("contiguous");
            rv[bi * p..(bi + 1) * p].copy_from_slice(src);
        }
    }
    m
}

/// Inverse of [`to_mat`].
fn from_mat(m: &Array2<f64>, b: usize, oh: usize, ow: usize) -> Array4<f64> {
    let c = m.dim().0;
    let p = oh * ow;
    let mut x = Array4::<f64>::zeros((b, c, oh, ow));
    for ci in 0..c {
        let row_view = m.row(ci);
        let rv = row_view.as_slice().expect("contiguous");
        for bi in 0..b {
            let dst = x.slice_mut(s![bi, ci, .., ..]);
            let dst = dst.into_slice().expect("contiguous");
            dst.copy_from_slice(&rv[bi * p..(bi + 1) * p]);
        }
    }
    x
}

fn weight_mat(w: &ArrayView4<f64>) -> Array2<f64> {
    let (co, ci, k, _) = w.dim();
    let flat = w.to_shape((co, ci * k * k)).expect("weight is standard layout");
    flat.to_owned()
}

/// Forward convolution. `x (B,Cin,H,W)`, `w (Cout,Cin,K,K)` -> `(B,Cout,OH,OW)`.
pub fn conv2d(
    x: &ArrayView4<f64>,
    w: &ArrayView4<f64>,
    bias: Option<&Array1<f64>>,
    stride: usize,
    padding: usize,
) -> Result<Array4<f64>> {
    let (b, cin, h, win) = x.dim();
    let (cout, wcin, k, k2) = w.dim();
    if k != k2 || wcin != cin {
        return Err(Error::contract(format!(
            "conv weight {cout}x{wcin}x{k}x{k2} does not match input channels {cin}"
        )));
    }
    let oh = conv_out_side(h, k, stride, padding)?;
    let ow = conv_out_side(win, k, stride, padding)?;
    let cols = im2col(x, k, stride, padding)?;
    let wm = weight_mat(w);
    let mut out_mat = Array2::<f64>::zeros((cout, b * oh * ow));
    general_mat_mul(1.0, &wm, &cols, 0.0, &mut out_mat);
    let mut y = from_mat(&out_mat, b, oh, ow);
    if let Some(bias) = bias {
        for bi in 0..b {
            for co in 0..cout {
                let add = bias[co];
                y.slice_mut(s![bi, co, .., ..]).mapv_inplace(|v| v + add);
            }
        }
    }
    Ok(y)
}

/// Gradient of a convolution with respect to its input.
pub fn conv2d_backward_data(
    gy: &ArrayView4<f64>,
    w: &ArrayView4<f64>,
    stride: usize,
    padding: usize,
    input_hw: (usize, usize),
) -> Result<Array4<f64>> {
    let (b, cout, oh, ow) = gy.dim();
    let (wcout, cin, k, _) = w.dim();
    if wcout != cout {
        return Err(Error::contract("grad channels do not match weight"));
    }
    let (h, win) = input_hw;
    if conv_out_side(h, k, stride, padding)? != oh || conv_out_side(win, k, stride, padding)? != ow
    {
        return Err(Error::contract("grad spatial size does not match geometry"));
    }
    let gy_mat = to_mat(gy);
    let wm = weight_mat(w);
    let mut gcols = Array2::<f64>::zeros((cin * k * k, b * oh * ow));
    general_mat_mul(1.0, &wm.t(), &gy_mat, 0.0, &mut gcols);
    col2im_add(&gcols, b, cin, h, win, k, stride, padding)
}

/// Gradient of a convolution with respect to its weight (and bias).
pub fn conv2d_backward_weight(
    gy: &ArrayView4<f64>,
    x: &ArrayView4<f64>,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<(Array4<f64>, Array1<f64>)> {
    let (b, cout, oh, ow) = gy.dim();
    let (xb, cin, h, win) = x.dim();
    if xb != b {
        return Err(Error::contract("batch mismatch in weight gradient"));
    }
    if conv_out_side(h, k, stride, padding)? != oh || conv_out_side(win, k, stride, padding)? != ow
    {
        return Err(Error::contract("grad spatial size does not match geometry"));
    }
    let cols = im2col(x, k, stride, padding)?;
    let gy_mat = to_mat(gy);
    let mut gw_mat = Array2::<f64>::zeros((cout, cin * k * k));
    general_mat_mul(1.0, &gy_mat, &cols.t(), 0.0, &mut gw_mat);
    let gw = gw_mat
        .into_shape_with_order((cout, cin, k, k))
        .expect("shape product unchanged");
    let mut gb = Array1::<f64>::zeros(cout);
    for co in 0..cout {
        gb[co] = gy.slice(s![.., co, .., ..]).sum();
    }
    Ok((gw, gb))
}
