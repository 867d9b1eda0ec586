//! Reverse-mode autodiff over a recorded op tape.
//!
//! Every op validates shapes up front, delegates the forward to
//! [`crate::tensor`], and records a backward closure producing one gradient
//! tensor per parent. [`Tape::backward`] walks the nodes in reverse creation
//! order (a topological order by construction) and accumulates gradients.

use crate::tensor::{self, Tensor};
use crate::{Error, Result};

pub type BackFn =
    Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor> + Send + Sync>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    back: Option<BackFn>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, vec![], None)
    }

    fn push(&mut self, value: Tensor, parents: Vec<usize>, back: Option<BackFn>) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { value, parents, back });
        self.grads.push(None);
        Var { id }
    }

    /// Records a custom differentiable node. `back(dout, parent_values, value)`
    /// must return one gradient per parent, in parent order.
    pub fn push_node(&mut self, value: Tensor, parents: &[Var], back: BackFn) -> Var {
        self.push(value, parents.iter().map(|v| v.id).collect(), Some(back))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.id].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.id].as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Seeds `d(root) = 1` and accumulates gradients into every reachable
    /// node. `root` must be scalar.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.id].value.elems() != 1 {
            return Err(Error::InvalidArgument {
                op: "backward",
                msg: format!("root must be scalar, got {:?}", self.nodes[root.id].value.shape()),
            });
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[root.id] = Some(Tensor::full(self.nodes[root.id].value.shape(), 1.0));
        for id in (0..=root.id).rev() {
            let Some(dout) = self.grads[id].clone() else { continue };
            let Some(back) = self.nodes[id].back.as_ref() else { continue };
            let parents = self.nodes[id].parents.clone();
            let pvals: Vec<&Tensor> = parents.iter().map(|&p| &self.nodes[p].value).collect();
            let pgrads = back(&dout, &pvals, &self.nodes[id].value);
            debug_assert_eq!(pgrads.len(), parents.len());
            for (p, g) in parents.into_iter().zip(pgrads) {
                debug_assert_eq!(g.shape(), self.nodes[p].value.shape());
                self.grads[p] = Some(match self.grads[p].take() {
                    None => g,
                    Some(acc) => tensor::add(&acc, &g)?,
                });
            }
        }
        Ok(())
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push_node(v, &[a, b], Box::new(|d, _, _| vec![d.clone(), d.clone()])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.push_node(
            v,
            &[a, b],
            Box::new(|d, p, _| {
                vec![
                    tensor::mul(d, p[1]).expect("shape checked"),
                    tensor::mul(d, p[0]).expect("shape checked"),
                ]
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = tensor::scale(self.value(a), s);
        self.push_node(v, &[a], Box::new(move |d, _, _| vec![tensor::scale(d, s)]))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = tensor::silu(self.value(a));
        self.push_node(
            v,
            &[a],
            Box::new(|d, p, _| {
                let g = p[0].map(|x| {
                    let s = tensor::sigmoid_scalar(x);
                    s + x * s * (1.0 - s)
                });
                vec![tensor::mul(d, &g).expect("same shape")]
            }),
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push_node(
            v,
            &[a],
            Box::new(|d, _, out| vec![tensor::mul(d, out).expect("same shape")]),
        )
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = tensor::softplus(self.value(a));
        self.push_node(
            v,
            &[a],
            Box::new(|d, p, _| {
                let g = p[0].map(tensor::sigmoid_scalar);
                vec![tensor::mul(d, &g).expect("same shape")]
            }),
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(tensor::sum_all(self.value(a)));
        self.push_node(
            v,
            &[a],
            Box::new(|d, p, _| vec![Tensor::full(p[0].shape(), d.item())]),
        )
    }

    // ---- linear algebra / layout ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push_node(
            v,
            &[a, b],
            Box::new(|d, p, _| {
                let bt = tensor::permute(p[1], &[1, 0]).expect("rank 2");
                let at = tensor::permute(p[0], &[1, 0]).expect("rank 2");
                vec![
                    tensor::matmul(d, &bt).expect("shapes conform"),
                    tensor::matmul(&at, d).expect("shapes conform"),
                ]
            }),
        ))
    }

    /// `x [rows.., C] + bias [C]` broadcast over rows.
    pub fn add_bias_last(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = *self.value(x).shape().last().unwrap_or(&0);
        if self.value(bias).shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "add_bias_last",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(bias).shape().to_vec(),
            });
        }
        let xt = self.value(x);
        let bd = self.value(bias).data();
        let mut out = xt.data().to_vec();
        for (i, o) in out.iter_mut().enumerate() {
            *o += bd[i % c];
        }
        let v = Tensor::new(xt.shape().to_vec(), out)?;
        Ok(self.push_node(
            v,
            &[x, bias],
            Box::new(move |d, _, _| {
                let mut db = vec![0.0; c];
                for (i, &g) in d.data().iter().enumerate() {
                    db[i % c] += g;
                }
                vec![d.clone(), Tensor::new(vec![c], db).expect("length c")]
            }),
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push_node(
            v,
            &[a],
            Box::new(|d, p, _| vec![d.reshape(p[0].shape()).expect("same count")]),
        ))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let v = tensor::permute(self.value(a), axes)?;
        let inv = tensor::inverse_axes(axes);
        Ok(self.push_node(
            v,
            &[a],
            Box::new(move |d, _, _| vec![tensor::permute(d, &inv).expect("valid axes")]),
        ))
    }

    pub fn pad_bottom_right(&mut self, a: Var, ph: usize, pw: usize) -> Result<Var> {
        let v = tensor::pad_bottom_right(self.value(a), ph, pw)?;
        let (h, w) = (self.value(a).shape()[2], self.value(a).shape()[3]);
        Ok(self.push_node(
            v,
            &[a],
            Box::new(move |d, _, _| vec![tensor::crop_bottom_right(d, h, w).expect("fits")]),
        ))
    }

    pub fn crop_bottom_right(&mut self, a: Var, h: usize, w: usize) -> Result<Var> {
        let v = tensor::crop_bottom_right(self.value(a), h, w)?;
        let (fh, fw) = (self.value(a).shape()[2], self.value(a).shape()[3]);
        Ok(self.push_node(
            v,
            &[a],
            Box::new(move |d, _, _| {
                vec![tensor::pad_bottom_right(d, fh - h, fw - w).expect("fits")]
            }),
        ))
    }

    pub fn roll2d(&mut self, a: Var, s: usize, inverse: bool) -> Result<Var> {
        if s == 0 {
            return self.reshape(a, &self.value(a).shape().to_vec());
        }
        let v = tensor::roll2d(self.value(a), s, inverse)?;
        Ok(self.push_node(
            v,
            &[a],
            Box::new(move |d, _, _| vec![tensor::roll2d(d, s, !inverse).expect("in range")]),
        ))
    }

    pub fn gather_mid(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let v = tensor::gather_mid(self.value(a), perm)?;
        let inv = crate::scan::invert_perm(perm);
        Ok(self.push_node(
            v,
            &[a],
            Box::new(move |d, _, _| vec![tensor::gather_mid(d, &inv).expect("bijection")]),
        ))
    }

    /// Crops the rectangle `rect` out of `[B,C,H,W]`.
    pub fn slice_rect(&mut self, a: Var, rect: crate::scan::Rect) -> Result<Var> {
        let (b, c, h, w) = match self.value(a).shape() {
            &[b, c, h, w] => (b, c, h, w),
            s => {
                return Err(Error::InvalidArgument {
                    op: "slice_rect",
                    msg: format!("expected rank-4, got {:?}", s),
                })
            }
        };
        if rect.i1 > h || rect.j1 > w || rect.i0 >= rect.i1 || rect.j0 >= rect.j1 {
            return Err(Error::InvalidArgument {
                op: "slice_rect",
                msg: format!("rect {:?} out of bounds for {}x{}", rect, h, w),
            });
        }
        let (rh, rw) = (rect.height(), rect.width());
        let xd = self.value(a).data();
        let mut out = vec![0.0; b * c * rh * rw];
        for bc in 0..b * c {
            for i in 0..rh {
                let src = (bc * h + rect.i0 + i) * w + rect.j0;
                let dst = (bc * rh + i) * rw;
                out[dst..dst + rw].copy_from_slice(&xd[src..src + rw]);
            }
        }
        let v = Tensor::new(vec![b, c, rh, rw], out)?;
        Ok(self.push_node(
            v,
            &[a],
            Box::new(move |d, p, _| {
                let mut dx = vec![0.0; p[0].elems()];
                let dd = d.data();
                for bc in 0..b * c {
                    for i in 0..rh {
                        let dst = (bc * h + rect.i0 + i) * w + rect.j0;
                        let src = (bc * rh + i) * rw;
                        dx[dst..dst + rw].copy_from_slice(&dd[src..src + rw]);
                    }
                }
                vec![Tensor::new(p[0].shape().to_vec(), dx).expect("same count")]
            }),
        ))
    }

    /// Places `[B,C,rh,rw]` into a zero `[B,C,H,W]` map at `(i0, j0)`.
    pub fn place_rect(&mut self, a: Var, h: usize, w: usize, i0: usize, j0: usize) -> Result<Var> {
        let (b, c, rh, rw) = match self.value(a).shape() {
            &[b, c, rh, rw] => (b, c, rh, rw),
            s => {
                return Err(Error::InvalidArgument {
                    op: "place_rect",
                    msg: format!("expected rank-4, got {:?}", s),
                })
            }
        };
        if i0 + rh > h || j0 + rw > w {
            return Err(Error::InvalidArgument {
                op: "place_rect",
                msg: format!("region {}x{} at ({},{}) exceeds {}x{}", rh, rw, i0, j0, h, w),
            });
        }
        let xd = self.value(a).data();
        let mut out = vec![0.0; b * c * h * w];
        for bc in 0..b * c {
            for i in 0..rh {
                let src = (bc * rh + i) * rw;
                let dst = (bc * h + i0 + i) * w + j0;
                out[dst..dst + rw].copy_from_slice(&xd[src..src + rw]);
            }
        }
        let v = Tensor::new(vec![b, c, h, w], out)?;
        Ok(self.push_node(
            v,
            &[a],
            Box::new(move |d, p, _| {
                let mut dx = vec![0.0; p[0].elems()];
                let dd = d.data();
                for bc in 0..b * c {
                    for i in 0..rh {
                        let dst = (bc * rh + i) * rw;
                        let src = (bc * h + i0 + i) * w + j0;
                        dx[dst..dst + rw].copy_from_slice(&dd[src..src + rw]);
                    }
                }
                vec![Tensor::new(p[0].shape().to_vec(), dx).expect("same count")]
            }),
        ))
    }

    /// Concatenates `[B,Ci,H,W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument {
                op: "concat_channels",
                msg: "no inputs".into(),
            });
        }
        let (b, h, w) = match self.value(parts[0]).shape() {
            &[b, _, h, w] => (b, h, w),
            s => {
                return Err(Error::InvalidArgument {
                    op: "concat_channels",
                    msg: format!("expected rank-4, got {:?}", s),
                })
            }
        };
        let mut chans = Vec::with_capacity(parts.len());
        for &p in parts {
            match self.value(p).shape() {
                &[pb, pc, ph, pw] if pb == b && ph == h && pw == w => chans.push(pc),
                s => {
                    return Err(Error::ShapeMismatch {
                        op: "concat_channels",
                        lhs: self.value(parts[0]).shape().to_vec(),
                        rhs: s.to_vec(),
                    })
                }
            }
        }
        let total: usize = chans.iter().sum();
        let plane = h * w;
        let mut out = vec![0.0; b * total * plane];
        for bi in 0..b {
            let mut off = 0usize;
            for (&p, &pc) in parts.iter().zip(&chans) {
                let src = &self.value(p).data()[bi * pc * plane..(bi + 1) * pc * plane];
                let dst = (bi * total + off) * plane;
                out[dst..dst + pc * plane].copy_from_slice(src);
                off += pc;
            }
        }
        let v = Tensor::new(vec![b, total, h, w], out)?;
        let chans_b = chans.clone();
        Ok(self.push_node(
            v,
            parts,
            Box::new(move |d, p, _| {
                let dd = d.data();
                let mut grads = Vec::with_capacity(p.len());
                let mut off = 0usize;
                for (i, &pc) in chans_b.iter().enumerate() {
                    let mut g = vec![0.0; p[i].elems()];
                    for bi in 0..b {
                        let src = (bi * total + off) * plane;
                        let dst = bi * pc * plane;
                        g[dst..dst + pc * plane].copy_from_slice(&dd[src..src + pc * plane]);
                    }
                    grads.push(Tensor::new(p[i].shape().to_vec(), g).expect("sized"));
                    off += pc;
                }
                grads
            }),
        ))
    }

    // ---- normalization and convolutions ----

    /// Layer norm over the last axis with affine parameters.
    pub fn layer_norm_last(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let v = tensor::layer_norm_last(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push_node(
            v,
            &[x, gamma, beta],
            Box::new(move |d, p, _| {
                let (xt, gt) = (p[0], p[1]);
                let c = *xt.shape().last().unwrap();
                let rows = xt.elems() / c;
                let (xd, gd, dd) = (xt.data(), gt.data(), d.data());
                let mut dx = vec![0.0; xt.elems()];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for r in 0..rows {
                    let row = &xd[r * c..(r + 1) * c];
                    let drow = &dd[r * c..(r + 1) * c];
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                    let mut g_mean = 0.0;
                    let mut gx_mean = 0.0;
                    for j in 0..c {
                        let g = drow[j] * gd[j];
                        g_mean += g;
                        gx_mean += g * xhat[j];
                        dgamma[j] += drow[j] * xhat[j];
                        dbeta[j] += drow[j];
                    }
                    g_mean /= c as f64;
                    gx_mean /= c as f64;
                    for j in 0..c {
                        let g = drow[j] * gd[j];
                        dx[r * c + j] = inv * (g - g_mean - xhat[j] * gx_mean);
                    }
                }
                vec![
                    Tensor::new(xt.shape().to_vec(), dx).expect("same count"),
                    Tensor::new(vec![c], dgamma).expect("length c"),
                    Tensor::new(vec![c], dbeta).expect("length c"),
                ]
            }),
        ))
    }

    /// Layer norm over the channel axis of `[B,C,H,W]` (norm per position).
    pub fn layer_norm_chw(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let nhwc = self.permute(x, &[0, 2, 3, 1])?;
        let normed = self.layer_norm_last(nhwc, gamma, beta, eps)?;
        self.permute(normed, &[0, 3, 1, 2])
    }

    pub fn dwconv3x3(&mut self, x: Var, k: Var) -> Result<Var> {
        let v = tensor::dwconv3x3(self.value(x), self.value(k))?;
        Ok(self.push_node(
            v,
            &[x, k],
            Box::new(|d, p, _| {
                let (xt, kt) = (p[0], p[1]);
                let (b, c, h, w) = (xt.shape()[0], xt.shape()[1], xt.shape()[2], xt.shape()[3]);
                let (xd, kd, dd) = (xt.data(), kt.data(), d.data());
                let mut dx = vec![0.0; xt.elems()];
                let mut dk = vec![0.0; kt.elems()];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * h * w;
                        let kern = &kd[ci * 9..ci * 9 + 9];
                        for i in 0..h as isize {
                            for j in 0..w as isize {
                                let g = dd[base + i as usize * w + j as usize];
                                if g == 0.0 {
                                    continue;
                                }
                                for di in 0..3isize {
                                    let ii = i + di - 1;
                                    if ii < 0 || ii >= h as isize {
                                        continue;
                                    }
                                    for dj in 0..3isize {
                                        let jj = j + dj - 1;
                                        if jj < 0 || jj >= w as isize {
                                            continue;
                                        }
                                        let src = base + ii as usize * w + jj as usize;
                                        dx[src] += g * kern[(di * 3 + dj) as usize];
                                        dk[ci * 9 + (di * 3 + dj) as usize] += g * xd[src];
                                    }
                                }
                            }
                        }
                    }
                }
                vec![
                    Tensor::new(xt.shape().to_vec(), dx).expect("same count"),
                    Tensor::new(kt.shape().to_vec(), dk).expect("same count"),
                ]
            }),
        ))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, bias: Var, pad: usize) -> Result<Var> {
        let v = tensor::conv2d(self.value(x), self.value(w), self.value(bias), pad)?;
        Ok(self.push_node(
            v,
            &[x, w, bias],
            Box::new(move |d, p, out| {
                let (xt, wt) = (p[0], p[1]);
                let (b, ci, h, wd_) = (xt.shape()[0], xt.shape()[1], xt.shape()[2], xt.shape()[3]);
                let (co, kh, kw) = (wt.shape()[0], wt.shape()[2], wt.shape()[3]);
                let (oh, ow) = (out.shape()[2], out.shape()[3]);
                let (xd, wd, dd) = (xt.data(), wt.data(), d.data());
                let mut dx = vec![0.0; xt.elems()];
                let mut dw = vec![0.0; wt.elems()];
                let mut db = vec![0.0; co];
                for bi in 0..b {
                    for o in 0..co {
                        let obase = (bi * co + o) * oh * ow;
                        for i in 0..oh {
                            for j in 0..ow {
                                let g = dd[obase + i * ow + j];
                                if g == 0.0 {
                                    continue;
                                }
                                db[o] += g;
                                for c in 0..ci {
                                    let ibase = (bi * ci + c) * h * wd_;
                                    let kbase = (o * ci + c) * kh * kw;
                                    for ki in 0..kh {
                                        let ii = i as isize + ki as isize - pad as isize;
                                        if ii < 0 || ii >= h as isize {
                                            continue;
                                        }
                                        for kj in 0..kw {
                                            let jj = j as isize + kj as isize - pad as isize;
                                            if jj < 0 || jj >= wd_ as isize {
                                                continue;
                                            }
                                            let src = ibase + ii as usize * wd_ + jj as usize;
                                            dx[src] += g * wd[kbase + ki * kw + kj];
                                            dw[kbase + ki * kw + kj] += g * xd[src];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                vec![
                    Tensor::new(xt.shape().to_vec(), dx).expect("same count"),
                    Tensor::new(wt.shape().to_vec(), dw).expect("same count"),
                    Tensor::new(vec![co], db).expect("length co"),
                ]
            }),
        ))
    }

    pub fn bilinear_resize(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (h, w) = (self.value(x).shape()[2], self.value(x).shape()[3]);
        let v = tensor::bilinear_resize(self.value(x), oh, ow)?;
        if oh == h && ow == w {
            return Ok(self.push_node(v, &[x], Box::new(|d, _, _| vec![d.clone()])));
        }
        Ok(self.push_node(
            v,
            &[x],
            Box::new(move |d, p, _| {
                let xt = p[0];
                let (b, c) = (xt.shape()[0], xt.shape()[1]);
                let rows: Vec<(usize, usize, f64)> =
                    (0..oh).map(|i| tensor::bilinear_taps(i, oh, h)).collect();
                let cols: Vec<(usize, usize, f64)> =
                    (0..ow).map(|j| tensor::bilinear_taps(j, ow, w)).collect();
                let dd = d.data();
                let mut dx = vec![0.0; xt.elems()];
                for bc in 0..b * c {
                    let obase = bc * oh * ow;
                    let ibase = bc * h * w;
                    for (i, &(i0, i1, fi)) in rows.iter().enumerate() {
                        for (j, &(j0, j1, fj)) in cols.iter().enumerate() {
                            let g = dd[obase + i * ow + j];
                            dx[ibase + i0 * w + j0] += g * (1.0 - fi) * (1.0 - fj);
                            dx[ibase + i0 * w + j1] += g * (1.0 - fi) * fj;
                            dx[ibase + i1 * w + j0] += g * fi * (1.0 - fj);
                            dx[ibase + i1 * w + j1] += g * fi * fj;
                        }
                    }
                }
                vec![Tensor::new(xt.shape().to_vec(), dx).expect("same count")]
            }),
        ))
    }

    pub fn adaptive_avg_pool(&mut self, x: Var, s: usize) -> Result<Var> {
        let v = tensor::adaptive_avg_pool(self.value(x), s)?;
        Ok(self.push_node(
            v,
            &[x],
            Box::new(move |d, p, _| {
                let xt = p[0];
                let (b, c, h, w) = (xt.shape()[0], xt.shape()[1], xt.shape()[2], xt.shape()[3]);
                let rbins = tensor::adaptive_bins(s, h);
                let cbins = tensor::adaptive_bins(s, w);
                let dd = d.data();
                let mut dx = vec![0.0; xt.elems()];
                for bc in 0..b * c {
                    let obase = bc * s * s;
                    let ibase = bc * h * w;
                    for (oi, &(r0, r1)) in rbins.iter().enumerate() {
                        for (oj, &(c0, c1)) in cbins.iter().enumerate() {
                            let g = dd[obase + oi * s + oj] / ((r1 - r0) * (c1 - c0)) as f64;
                            for i in r0..r1 {
                                for j in c0..c1 {
                                    dx[ibase + i * w + j] += g;
                                }
                            }
                        }
                    }
                }
                vec![Tensor::new(xt.shape().to_vec(), dx).expect("same count")]
            }),
        ))
    }
}

/// Named parameter tensors with stable ids; owns the trainable state.
#[derive(Default)]
pub struct ParamBank {
    names: Vec<String>,
    values: Vec<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PId(usize);

impl ParamBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> PId {
        self.names.push(name.into());
        self.values.push(value);
        PId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: PId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: PId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn set_value(&mut self, id: PId, t: Tensor) {
        debug_assert_eq!(t.shape(), self.values[id.0].shape());
        self.values[id.0] = t;
    }

    pub fn ids(&self) -> impl Iterator<Item = PId> {
        (0..self.values.len()).map(PId)
    }

    pub fn entries(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.values.iter().cloned()).collect()
    }

    pub fn load_entries(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        if entries.len() != self.names.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} parameters, model has {}",
                entries.len(),
                self.names.len()
            )));
        }
        for (i, (name, t)) in entries.iter().enumerate() {
            if *name != self.names[i] || t.shape() != self.values[i].shape() {
                return Err(Error::Config(format!(
                    "checkpoint entry {} ({} {:?}) does not match model parameter {} {:?}",
                    i,
                    name,
                    t.shape(),
                    self.names[i],
                    self.values[i].shape()
                )));
            }
            self.values[i] = t.clone();
        }
        Ok(())
    }
}

/// One forward/backward pass: a tape plus one leaf per bank parameter.
pub struct Session {
    pub tape: Tape,
    param_vars: Vec<Var>,
}

impl Session {
    pub fn new(bank: &ParamBank) -> Self {
        let mut tape = Tape::new();
        let param_vars = bank.values.iter().map(|t| tape.leaf(t.clone())).collect();
        Self { tape, param_vars }
    }

    /// Builds a session on an existing tape (parameters become fresh leaves
    /// appended to it); used when the tape is owned by a checking harness.
    pub fn with_tape(mut tape: Tape, bank: &ParamBank) -> Self {
        let param_vars = bank.values.iter().map(|t| tape.leaf(t.clone())).collect();
        Self { tape, param_vars }
    }

    pub fn p(&self, id: PId) -> Var {
        self.param_vars[id.0]
    }

    /// Gradient of a parameter after `backward`; zeros if it was unused.
    pub fn param_grad(&self, bank: &ParamBank, id: PId) -> Tensor {
        match self.tape.grad(self.param_vars[id.0]) {
            Some(g) => g.clone(),
            None => Tensor::zeros(bank.value(id).shape()),
        }
    }
}
