//! Dense row-major f64 tensors and the pure forward kernels the model needs.
//!
//! Kernels here are plain functions over immutable inputs; the autodiff layer
//! in [`crate::tape`] wraps them with backward rules. Shapes are validated at
//! every entry point and failures name both shapes.

use crate::{Error, Result};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidArgument {
                op: "Tensor::new",
                msg: format!("shape {:?} holds {} elems, got {}", shape, n, data.len()),
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: Arc::new(vec![0.0; n]),
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: Arc::new(vec![v; n]),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: Arc::new(vec![v]),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn elems(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data, new shape. Fails unless element counts agree.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same("add", a, b)?;
    let data = a.data.iter().zip(b.data.iter()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape.clone(), data)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same("sub", a, b)?;
    let data = a.data.iter().zip(b.data.iter()).map(|(x, y)| x - y).collect();
    Tensor::new(a.shape.clone(), data)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same("mul", a, b)?;
    let data = a.data.iter().zip(b.data.iter()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape.clone(), data)
}

pub fn scale(a: &Tensor, s: f64) -> Tensor {
    a.map(|v| v * s)
}

pub fn sum_all(a: &Tensor) -> f64 {
    a.data.iter().sum()
}

/// `a [m,k] x b [k,n] -> [m,n]`, plain ikj loop order.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// General axis permutation: `out[idx] = in[idx ∘ axes]`.
pub fn permute(a: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let rank = a.shape.len();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&ax| ax >= rank || std::mem::replace(&mut seen[ax], true)) {
        return Err(Error::InvalidArgument {
            op: "permute",
            msg: format!("axes {:?} invalid for rank {}", axes, rank),
        });
    }
    let out_shape: Vec<usize> = axes.iter().map(|&ax| a.shape[ax]).collect();
    // strides of input, mapped through the permutation
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * a.shape[i + 1];
    }
    let mapped: Vec<usize> = axes.iter().map(|&ax| in_strides[ax]).collect();
    let n = a.elems();
    let mut out = vec![0.0; n];
    let ad = a.data();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for slot in out.iter_mut() {
        *slot = ad[src];
        // odometer increment over the output shape
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += mapped[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= mapped[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, out)
}

pub fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; axes.len()];
    for (i, &ax) in axes.iter().enumerate() {
        inv[ax] = i;
    }
    inv
}

/// Zero-pads the bottom/right spatial edges of a `[B,C,H,W]` tensor.
pub fn pad_bottom_right(x: &Tensor, ph: usize, pw: usize) -> Result<Tensor> {
    let [b, c, h, w] = dims4(x, "pad_bottom_right")?;
    let (nh, nw) = (h + ph, w + pw);
    let mut out = vec![0.0; b * c * nh * nw];
    let xd = x.data();
    for bc in 0..b * c {
        for i in 0..h {
            let src = (bc * h + i) * w;
            let dst = (bc * nh + i) * nw;
            out[dst..dst + w].copy_from_slice(&xd[src..src + w]);
        }
    }
    Tensor::new(vec![b, c, nh, nw], out)
}

/// Keeps the top-left `h x w` region of a `[B,C,H,W]` tensor.
pub fn crop_bottom_right(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let [b, c, fh, fw] = dims4(x, "crop_bottom_right")?;
    if h > fh || w > fw {
        return Err(Error::InvalidArgument {
            op: "crop_bottom_right",
            msg: format!("target {}x{} exceeds {}x{}", h, w, fh, fw),
        });
    }
    let mut out = vec![0.0; b * c * h * w];
    let xd = x.data();
    for bc in 0..b * c {
        for i in 0..h {
            let src = (bc * fh + i) * fw;
            let dst = (bc * h + i) * w;
            out[dst..dst + w].copy_from_slice(&xd[src..src + w]);
        }
    }
    Tensor::new(vec![b, c, h, w], out)
}

fn dims4(x: &Tensor, op: &'static str) -> Result<[usize; 4]> {
    match x.shape() {
        &[b, c, h, w] => Ok([b, c, h, w]),
        s => Err(Error::InvalidArgument {
            op,
            msg: format!("expected rank-4 [B,C,H,W], got {:?}", s),
        }),
    }
}

/// Cyclic roll of both spatial axes of `[B,C,H,W]` by `-s` (or `+s` when
/// `inverse`). Value-preserving bijection.
pub fn roll2d(x: &Tensor, s: usize, inverse: bool) -> Result<Tensor> {
    let [b, c, h, w] = dims4(x, "roll2d")?;
    if s >= h.min(w) {
        return Err(Error::InvalidArgument {
            op: "roll2d",
            msg: format!("shift {} out of range for {}x{}", s, h, w),
        });
    }
    // out[i][j] = in[(i + sh) mod h][(j + sw) mod w] for a roll by -s
    let (sh, sw) = if inverse { (h - s, w - s) } else { (s, s) };
    let mut out = vec![0.0; x.elems()];
    let xd = x.data();
    for bc in 0..b * c {
        let base = bc * h * w;
        for i in 0..h {
            let si = (i + sh) % h;
            for j in 0..w {
                let sj = (j + sw) % w;
                out[base + i * w + j] = xd[base + si * w + sj];
            }
        }
    }
    Tensor::new(vec![b, c, h, w], out)
}

/// `out[s,i,c] = in[s,perm[i],c]` for `[S,L,C]` input.
pub fn gather_mid(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let (s, l, c) = match x.shape() {
        &[s, l, c] => (s, l, c),
        sh => {
            return Err(Error::InvalidArgument {
                op: "gather_mid",
                msg: format!("expected rank-3 [S,L,C], got {:?}", sh),
            })
        }
    };
    if perm.len() != l {
        return Err(Error::InvalidArgument {
            op: "gather_mid",
            msg: format!("perm length {} vs sequence length {}", perm.len(), l),
        });
    }
    let mut out = vec![0.0; x.elems()];
    let xd = x.data();
    for si in 0..s {
        for (i, &p) in perm.iter().enumerate() {
            let dst = (si * l + i) * c;
            let src = (si * l + p) * c;
            out[dst..dst + c].copy_from_slice(&xd[src..src + c]);
        }
    }
    Tensor::new(vec![s, l, c], out)
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softplus_scalar(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

pub fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v * sigmoid_scalar(v))
}

pub fn softplus(x: &Tensor) -> Tensor {
    x.map(softplus_scalar)
}

/// Layer norm over the last axis, then affine. `gamma`/`beta` are `[C]`.
pub fn layer_norm_last(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument {
            op: "layer_norm",
            msg: format!("eps must be positive, got {}", eps),
        });
    }
    let c = *x.shape().last().ok_or(Error::InvalidArgument {
        op: "layer_norm",
        msg: "rank-0 input".into(),
    })?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::ShapeMismatch {
            op: "layer_norm",
            lhs: x.shape.clone(),
            rhs: gamma.shape.clone(),
        });
    }
    let rows = x.elems() / c;
    let mut out = vec![0.0; x.elems()];
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    for r in 0..rows {
        let row = &xd[r * c..(r + 1) * c];
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..c {
            out[r * c + j] = (row[j] - mean) * inv * gd[j] + bd[j];
        }
    }
    Tensor::new(x.shape.clone(), out)
}

/// Depthwise 3x3 convolution with zero padding 1 and stride 1.
/// Channel c of the output depends only on channel c of the input.
pub fn dwconv3x3(x: &Tensor, k: &Tensor) -> Result<Tensor> {
    let [b, c, h, w] = dims4(x, "dwconv3x3")?;
    if k.shape() != [c, 3, 3] {
        return Err(Error::ShapeMismatch {
            op: "dwconv3x3",
            lhs: x.shape.clone(),
            rhs: k.shape.clone(),
        });
    }
    let mut out = vec![0.0; x.elems()];
    let xd = x.data();
    let kd = k.data();
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * h * w;
            let kern = &kd[ci * 9..ci * 9 + 9];
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for di in 0..3usize {
                        let ii = i as isize + di as isize - 1;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for dj in 0..3usize {
                            let jj = j as isize + dj as isize - 1;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            acc += kern[di * 3 + dj] * xd[base + ii as usize * w + jj as usize];
                        }
                    }
                    out[base + i * w + j] = acc;
                }
            }
        }
    }
    Tensor::new(vec![b, c, h, w], out)
}

/// Full convolution `[B,Ci,H,W] * [Co,Ci,kh,kw] + bias[Co]`, stride 1,
/// symmetric zero padding `pad`.
pub fn conv2d(x: &Tensor, wgt: &Tensor, bias: &Tensor, pad: usize) -> Result<Tensor> {
    let [b, ci, h, w] = dims4(x, "conv2d")?;
    let (co, wci, kh, kw) = match wgt.shape() {
        &[co, wci, kh, kw] => (co, wci, kh, kw),
        s => {
            return Err(Error::InvalidArgument {
                op: "conv2d",
                msg: format!("expected rank-4 weight, got {:?}", s),
            })
        }
    };
    if wci != ci || bias.shape() != [co] {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape.clone(),
            rhs: wgt.shape.clone(),
        });
    }
    let oh = h + 2 * pad + 1 - kh;
    let ow = w + 2 * pad + 1 - kw;
    let mut out = vec![0.0; b * co * oh * ow];
    let xd = x.data();
    let wd = wgt.data();
    let bd = bias.data();
    for bi in 0..b {
        for o in 0..co {
            let obase = (bi * co + o) * oh * ow;
            out[obase..obase + oh * ow].fill(bd[o]);
            for c in 0..ci {
                let ibase = (bi * ci + c) * h * w;
                let kbase = (o * ci + c) * kh * kw;
                for ki in 0..kh {
                    for kj in 0..kw {
                        let kv = wd[kbase + ki * kw + kj];
                        if kv == 0.0 {
                            continue;
                        }
                        // output rows where the kernel tap stays in bounds
                        for i in 0..oh {
                            let ii = i as isize + ki as isize - pad as isize;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            let irow = ibase + ii as usize * w;
                            let orow = obase + i * ow;
                            for j in 0..ow {
                                let jj = j as isize + kj as isize - pad as isize;
                                if jj < 0 || jj >= w as isize {
                                    continue;
                                }
                                out[orow + j] += kv * xd[irow + jj as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, co, oh, ow], out)
}

/// Bilinear interpolation weights for one output coordinate under the
/// half-pixel (align_corners = false) convention.
pub fn bilinear_taps(out_i: usize, out_n: usize, in_n: usize) -> (usize, usize, f64) {
    let scale = in_n as f64 / out_n as f64;
    let src = ((out_i as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(in_n - 1);
    let i1 = (i0 + 1).min(in_n - 1);
    let frac = src - i0 as f64;
    (i0, i1, frac)
}

/// Bilinear resize of `[B,C,h,w]` to `[B,C,H,W]`, align_corners = false.
pub fn bilinear_resize(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let [b, c, h, w] = dims4(x, "bilinear_resize")?;
    if oh < 1 || ow < 1 {
        return Err(Error::InvalidArgument {
            op: "bilinear_resize",
            msg: format!("target {}x{} invalid", oh, ow),
        });
    }
    if oh == h && ow == w {
        return Ok(x.clone());
    }
    let rows: Vec<(usize, usize, f64)> = (0..oh).map(|i| bilinear_taps(i, oh, h)).collect();
    let cols: Vec<(usize, usize, f64)> = (0..ow).map(|j| bilinear_taps(j, ow, w)).collect();
    let mut out = vec![0.0; b * c * oh * ow];
    let xd = x.data();
    for bc in 0..b * c {
        let ibase = bc * h * w;
        let obase = bc * oh * ow;
        for (i, &(i0, i1, fi)) in rows.iter().enumerate() {
            for (j, &(j0, j1, fj)) in cols.iter().enumerate() {
                let v00 = xd[ibase + i0 * w + j0];
                let v01 = xd[ibase + i0 * w + j1];
                let v10 = xd[ibase + i1 * w + j0];
                let v11 = xd[ibase + i1 * w + j1];
                let top = v00 + (v01 - v00) * fj;
                let bot = v10 + (v11 - v10) * fj;
                out[obase + i * ow + j] = top + (bot - top) * fi;
            }
        }
    }
    Tensor::new(vec![b, c, oh, ow], out)
}

/// Bin edges for adaptive average pooling: bin i covers
/// `[floor(i*n/s), ceil((i+1)*n/s))`.
pub fn adaptive_bins(s: usize, n: usize) -> Vec<(usize, usize)> {
    (0..s)
        .map(|i| {
            let lo = i * n / s;
            let hi = ((i + 1) * n + s - 1) / s;
            (lo, hi.min(n))
        })
        .collect()
}

/// Adaptive average pooling of `[B,C,h,w]` down to `[B,C,s,s]`.
pub fn adaptive_avg_pool(x: &Tensor, s: usize) -> Result<Tensor> {
    let [b, c, h, w] = dims4(x, "adaptive_avg_pool")?;
    if s < 1 || s > h || s > w {
        return Err(Error::InvalidArgument {
            op: "adaptive_avg_pool",
            msg: format!("scale {} invalid for {}x{}", s, h, w),
        });
    }
    let rbins = adaptive_bins(s, h);
    let cbins = adaptive_bins(s, w);
    let mut out = vec![0.0; b * c * s * s];
    let xd = x.data();
    for bc in 0..b * c {
        let ibase = bc * h * w;
        let obase = bc * s * s;
        for (oi, &(r0, r1)) in rbins.iter().enumerate() {
            for (oj, &(c0, c1)) in cbins.iter().enumerate() {
                let mut acc = 0.0;
                for i in r0..r1 {
                    for j in c0..c1 {
                        acc += xd[ibase + i * w + j];
                    }
                }
                out[obase + oi * s + oj] = acc / ((r1 - r0) * (c1 - c0)) as f64;
            }
        }
    }
    Tensor::new(vec![b, c, s, s], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_basic() {
        let y = add(&t(&[2], &[1.0, 2.0]), &t(&[2], &[3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0]);
    }

    #[test]
    fn add_shape_mismatch_names_both() {
        let e = add(&t(&[2], &[1.0, 2.0]), &t(&[3], &[0.0; 3])).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{}", msg);
    }

    #[test]
    fn matmul_identity() {
        let eye = t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let x = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(matmul(&eye, &x).unwrap(), x);
    }

    #[test]
    fn permute_transpose() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = permute(&x, &[1, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let back = permute(&y, &inverse_axes(&[1, 0])).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn silu_values() {
        let y = silu(&t(&[3], &[0.0, 1.0, 50.0]));
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((y.data()[2] - 50.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_constant_input() {
        let x = t(&[2, 4], &[3.0; 8]);
        let y = layer_norm_last(&x, &Tensor::full(&[4], 1.0), &Tensor::zeros(&[4]), 1e-5).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn layer_norm_gamma_zero_gives_beta() {
        let x = t(&[1, 3], &[0.3, -2.0, 5.5]);
        let beta = t(&[3], &[1.0, 2.0, 3.0]);
        let y = layer_norm_last(&x, &Tensor::zeros(&[3]), &beta, 1e-5).unwrap();
        assert_eq!(y.data(), beta.data());
    }

    #[test]
    fn layer_norm_statistics() {
        let mut rng = crate::rng::Rng::new(7);
        let x = rng.normal_tensor(&[2, 8], 1.0);
        let y = layer_norm_last(&x, &Tensor::full(&[8], 1.0), &Tensor::zeros(&[8]), 1e-12).unwrap();
        for r in 0..2 {
            let row = &y.data()[r * 8..(r + 1) * 8];
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() <= 1e-10, "mean {}", mean);
            assert!((var - 1.0).abs() <= 1e-6, "var {}", var);
        }
    }

    #[test]
    fn layer_norm_rejects_bad_eps() {
        let x = t(&[1, 2], &[1.0, 2.0]);
        assert!(layer_norm_last(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), 0.0).is_err());
    }

    #[test]
    fn dwconv_delta_kernel_is_identity() {
        let mut rng = crate::rng::Rng::new(1);
        let x = rng.normal_tensor(&[2, 3, 5, 5], 1.0);
        let mut k = vec![0.0; 3 * 9];
        for c in 0..3 {
            k[c * 9 + 4] = 1.0;
        }
        let y = dwconv3x3(&x, &t(&[3, 3, 3], &k)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dwconv_ones_counts_neighbors() {
        let x = Tensor::full(&[1, 1, 5, 5], 1.0);
        let k = Tensor::full(&[1, 3, 3], 1.0);
        let y = dwconv3x3(&x, &k).unwrap();
        assert_eq!(y.data()[2 * 5 + 2], 9.0); // interior
        assert_eq!(y.data()[0], 4.0); // corner
    }

    #[test]
    fn dwconv_rejects_channel_mismatch() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let k = Tensor::zeros(&[3, 3, 3]);
        assert!(dwconv3x3(&x, &k).is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let mut rng = crate::rng::Rng::new(3);
        let x = rng.normal_tensor(&[1, 2, 5, 7], 1.0);
        assert_eq!(bilinear_resize(&x, 5, 7).unwrap(), x);
        let c = Tensor::full(&[1, 1, 3, 3], 7.0);
        let y = bilinear_resize(&c, 9, 5).unwrap();
        assert!(y.data().iter().all(|&v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn resize_2x2_to_4x4_hand_values() {
        let x = t(&[1, 1, 2, 2], &[0.0, 1.0, 2.0, 3.0]);
        let y = bilinear_resize(&x, 4, 4).unwrap();
        // corners clamp to the source corners under half-pixel mapping
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[3], 1.0);
        assert_eq!(y.data()[12], 2.0);
        assert_eq!(y.data()[15], 3.0);
        // interior: src coord for out index 1 is 0.25 -> 0.75*v0 + 0.25*v1
        let v = y.data()[1 * 4 + 1];
        let expect = 0.75 * (0.75 * 0.0 + 0.25 * 1.0) + 0.25 * (0.75 * 2.0 + 0.25 * 3.0);
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn resize_rejects_zero_target() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(bilinear_resize(&x, 0, 2).is_err());
    }

    #[test]
    fn adaptive_pool_full_reduce() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 6.0]);
        let y = adaptive_avg_pool(&x, 1).unwrap();
        assert_eq!(y.data(), &[3.0]);
    }

    #[test]
    fn conv1x1_is_channel_matmul() {
        let x = t(&[1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[1, 2, 1, 1], &[10.0, 100.0]);
        let y = conv2d(&x, &w, &Tensor::zeros(&[1]), 0).unwrap();
        assert_eq!(y.data(), &[310.0, 420.0]);
    }
}
