//! Raw numeric kernels shared by the forward and backward passes.

use crate::tensor::{strides_of, Tensor};

/// `c = a·b + beta·c` for logical shapes `a: m×k`, `b: k×n`, `c: m×n`.
///
/// `ta`/`tb` mean the operand is stored transposed (row-major `k×m` / `n×k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Numpy-style broadcast of two shapes (right aligned).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside the broadcast shape `out` (0 on broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides_of(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 && out[i] != 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

/// Visit every index of `out`, yielding the flat offsets into the two inputs.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n: usize = out.iter().product();
    let r = out.len();
    let mut idx = vec![0usize; r];
    let (mut ia, mut ib) = (0usize, 0usize);
    for flat in 0..n {
        f(flat, ia, ib);
        for d in (0..r).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn broadcast_binary(
    a: &Tensor,
    b: &Tensor,
    out_shape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Tensor {
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<f64> = if a.shape() == b.shape() {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else if a.shape() == out_shape && is_suffix(b.shape(), out_shape) {
        let m = bd.len();
        ad.chunks(m)
            .flat_map(|row| row.iter().zip(bd).map(|(&x, &y)| f(x, y)))
            .collect()
    } else if b.shape() == out_shape && is_suffix(a.shape(), out_shape) {
        let m = ad.len();
        bd.chunks(m)
            .flat_map(|row| ad.iter().zip(row).map(|(&x, &y)| f(x, y)))
            .collect()
    } else {
        let sa = broadcast_strides(a.shape(), out_shape);
        let sb = broadcast_strides(b.shape(), out_shape);
        let mut data = vec![0.0; out_shape.iter().product()];
        for_each_broadcast(out_shape, &sa, &sb, |o, ia, ib| data[o] = f(ad[ia], bd[ib]));
        data
    };
    Tensor::from_parts(out_shape.to_vec(), data)
}

/// Sum `grad` (broadcast shape) down to `target` shape.
pub(crate) fn reduce_to(grad: &Tensor, target: &[usize]) -> Tensor {
    if grad.shape() == target {
        return grad.clone();
    }
    let mut out = vec![0.0; target.iter().product()];
    if is_suffix(target, grad.shape()) {
        let m = out.len();
        for row in grad.data().chunks(m) {
            for (o, &g) in out.iter_mut().zip(row) {
                *o += g;
            }
        }
    } else {
        let st = broadcast_strides(target, grad.shape());
        let zeros = vec![0; grad.rank()];
        let gd = grad.data();
        for_each_broadcast(grad.shape(), &st, &zeros, |o, it, _| out[it] += gd[o]);
    }
    Tensor::from_parts(target.to_vec(), out)
}

pub(crate) fn permute(x: &Tensor, axes: &[usize]) -> Tensor {
    let in_strides = x.strides();
    let out_shape: Vec<usize> = axes.iter().map(|&a| x.shape()[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let zeros = vec![0; axes.len()];
    let xd = x.data();
    let mut data = vec![0.0; x.numel()];
    for_each_broadcast(&out_shape, &src_strides, &zeros, |o, i, _| data[o] = xd[i]);
    Tensor::from_parts(out_shape, data)
}

pub(crate) fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

pub(crate) fn softmax_last(x: &Tensor) -> Tensor {
    let n = *x.shape().last().unwrap();
    let mut data = x.data().to_vec();
    for row in data.chunks_mut(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Returns normalized output and the per-row reciprocal standard deviation.
pub(crate) fn layer_norm_last(x: &Tensor, eps: f64) -> (Tensor, Vec<f64>) {
    let n = *x.shape().last().unwrap();
    let mut data = x.data().to_vec();
    let mut rstds = Vec::with_capacity(data.len() / n);
    for row in data.chunks_mut(n) {
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * rstd;
        }
        rstds.push(rstd);
    }
    (Tensor::from_parts(x.shape().to_vec(), data), rstds)
}

pub(crate) const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Geometry of a 2D (transposed) convolution over `[B, C, H, W]` tensors.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

/// Strided valid convolution. `w` is `[c_out, c_in, kh, kw]`.
pub(crate) fn conv2d(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut y = vec![0.0; g.batch * g.c_out * g.ho * g.wo];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let ybase = (b * g.c_out + co) * g.ho * g.wo;
            for ci in 0..g.c_in {
                let xbase = (b * g.c_in + ci) * g.h * g.w;
                let wbase = (co * g.c_in + ci) * g.kh * g.kw;
                for p in 0..g.kh {
                    for q in 0..g.kw {
                        let wv = w[wbase + p * g.kw + q];
                        for i in 0..g.ho {
                            let xrow = xbase + (i * g.stride + p) * g.w + q;
                            let yrow = ybase + i * g.wo;
                            for j in 0..g.wo {
                                y[yrow + j] += wv * x[xrow + j * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Gradients of [`conv2d`] w.r.t. input and kernel.
pub(crate) fn conv2d_backward(x: &[f64], w: &[f64], gy: &[f64], g: &ConvGeom) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let ybase = (b * g.c_out + co) * g.ho * g.wo;
            for ci in 0..g.c_in {
                let xbase = (b * g.c_in + ci) * g.h * g.w;
                let wbase = (co * g.c_in + ci) * g.kh * g.kw;
                for p in 0..g.kh {
                    for q in 0..g.kw {
                        let wv = w[wbase + p * g.kw + q];
                        let mut acc = 0.0;
                        for i in 0..g.ho {
                            let xrow = xbase + (i * g.stride + p) * g.w + q;
                            let yrow = ybase + i * g.wo;
                            for j in 0..g.wo {
                                let gv = gy[yrow + j];
                                acc += gv * x[xrow + j * g.stride];
                                gx[xrow + j * g.stride] += gv * wv;
                            }
                        }
                        gw[wbase + p * g.kw + q] += acc;
                    }
                }
            }
        }
    }
    (gx, gw)
}

/// Transposed convolution, the adjoint of [`conv2d`]. `w` is `[c_in, c_out, kh, kw]`
/// and the output size is `(h - 1) * stride + kh`.
pub(crate) fn conv_transpose2d(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut y = vec![0.0; g.batch * g.c_out * g.ho * g.wo];
    for b in 0..g.batch {
        for ci in 0..g.c_in {
            let xbase = (b * g.c_in + ci) * g.h * g.w;
            for co in 0..g.c_out {
                let ybase = (b * g.c_out + co) * g.ho * g.wo;
                let wbase = (ci * g.c_out + co) * g.kh * g.kw;
                for p in 0..g.kh {
                    for q in 0..g.kw {
                        let wv = w[wbase + p * g.kw + q];
                        for i in 0..g.h {
                            let xrow = xbase + i * g.w;
                            let yrow = ybase + (i * g.stride + p) * g.wo + q;
                            for j in 0..g.w {
                                y[yrow + j * g.stride] += wv * x[xrow + j];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

pub(crate) fn conv_transpose2d_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    for b in 0..g.batch {
        for ci in 0..g.c_in {
            let xbase = (b * g.c_in + ci) * g.h * g.w;
            for co in 0..g.c_out {
                let ybase = (b * g.c_out + co) * g.ho * g.wo;
                let wbase = (ci * g.c_out + co) * g.kh * g.kw;
                for p in 0..g.kh {
                    for q in 0..g.kw {
                        let wv = w[wbase + p * g.kw + q];
                        let mut acc = 0.0;
                        for i in 0..g.h {
                            let xrow = xbase + i * g.w;
                            let yrow = ybase + (i * g.stride + p) * g.wo + q;
                            for j in 0..g.w {
                                let gv = gy[yrow + j * g.stride];
                                acc += gv * x[xrow + j];
                                gx[xrow + j] += gv * wv;
                            }
                        }
                        gw[wbase + p * g.kw + q] += acc;
                    }
                }
            }
        }
    }
    (gx, gw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 0.0);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with the same kernel.
        let g = ConvGeom {
            batch: 1,
            c_in: 2,
            c_out: 3,
            h: 6,
            w: 6,
            kh: 2,
            kw: 2,
            stride: 2,
            ho: 3,
            wo: 3,
        };
        let x: Vec<f64> = (0..72).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..24).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let y: Vec<f64> = (0..27).map(|i| ((i * 5) % 9) as f64 - 4.0).collect();
        let cx = conv2d(&x, &w, &g);
        let gt = ConvGeom {
            c_in: 3,
            c_out: 2,
            h: 3,
            w: 3,
            ho: 6,
            wo: 6,
            ..g
        };
        // conv weight [co=3, ci=2] is laid out exactly like a transposed weight [ci=3, co=2].
        let ty = conv_transpose2d(&y, &w, &gt);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&ty).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
