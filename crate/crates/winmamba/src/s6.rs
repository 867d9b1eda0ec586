//! Selective state-space (S6) sequence transform: input-dependent
//! discretization, sequential recurrence, work-efficient associative parallel
//! scan, and a hand-written backward pass with state recomputation.
//!
//! Recurrence per channel d and state n:
//!   Abar[t] = exp(delta[t,d] * A[d,n])        (zero-order hold)
//!   Bbar[t] = delta[t,d] * B[t,n]             (Euler)
//!   h[t] = Abar[t] * h[t-1] + Bbar[t] * x[t,d]
//!   y[t,d] = sum_n C[t,n] * h[t,d,n] + D_skip[d] * x[t,d]

use crate::rng::Rng;
use crate::tape::{ParamBank, PId, Session, Tape, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
pub struct S6Config {
    /// Channels per token.
    pub d_inner: usize,
    /// State size per channel.
    pub d_state: usize,
    /// Softplus-initialization range for the delta bias.
    pub dt_min: f64,
    pub dt_max: f64,
}

impl S6Config {
    pub fn new(d_inner: usize, d_state: usize) -> Self {
        Self {
            d_inner,
            d_state,
            dt_min: 1e-3,
            dt_max: 1e-1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_inner < 1 || self.d_state < 1 || self.dt_min <= 0.0 || self.dt_min >= self.dt_max {
            return Err(Error::InvalidArgument {
                op: "S6Config",
                msg: format!("{:?}", self),
            });
        }
        Ok(())
    }
}

/// One selective-scan invocation: per-timestep sequences plus static params.
#[derive(Debug, Clone)]
pub struct S6Inputs {
    /// `[L, D]` token sequence.
    pub x: Tensor,
    /// `[L, D]` positive step sizes.
    pub delta: Tensor,
    /// `[L, N]`.
    pub bseq: Tensor,
    /// `[L, N]`.
    pub cseq: Tensor,
    /// `[D, N]`, strictly negative for stability.
    pub a: Tensor,
    /// `[D]` skip connection.
    pub d_skip: Tensor,
}

impl S6Inputs {
    pub fn dims(&self) -> Result<(usize, usize, usize)> {
        let (l, d) = match self.x.shape() {
            &[l, d] => (l, d),
            s => {
                return Err(Error::InvalidArgument {
                    op: "S6Inputs",
                    msg: format!("x must be [L,D], got {:?}", s),
                })
            }
        };
        if l == 0 {
            return Err(Error::InvalidArgument {
                op: "S6Inputs",
                msg: "length-0 sequence rejected".into(),
            });
        }
        let n = match self.bseq.shape() {
            &[bl, n] if bl == l => n,
            s => {
                return Err(Error::ShapeMismatch {
                    op: "S6Inputs",
                    lhs: self.x.shape().to_vec(),
                    rhs: s.to_vec(),
                })
            }
        };
        for (t, shape) in [
            (&self.delta, vec![l, d]),
            (&self.cseq, vec![l, n]),
            (&self.a, vec![d, n]),
            (&self.d_skip, vec![d]),
        ] {
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "S6Inputs",
                    lhs: t.shape().to_vec(),
                    rhs: shape,
                });
            }
        }
        if self.delta.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidArgument {
                op: "S6Inputs",
                msg: "delta must be strictly positive".into(),
            });
        }
        Ok((l, d, n))
    }
}

/// ZOH for A, Euler for B: `Abar = exp(delta*A)`, `Bbar = delta*B`.
pub fn discretize(delta: &Tensor, a: &Tensor, bseq: &Tensor) -> Result<(Tensor, Tensor)> {
    let (l, d) = match delta.shape() {
        &[l, d] => (l, d),
        s => {
            return Err(Error::InvalidArgument {
                op: "discretize",
                msg: format!("delta must be [L,D], got {:?}", s),
            })
        }
    };
    let n = a.shape()[1];
    if a.shape() != [d, n] || bseq.shape() != [l, n] {
        return Err(Error::ShapeMismatch {
            op: "discretize",
            lhs: a.shape().to_vec(),
            rhs: bseq.shape().to_vec(),
        });
    }
    if delta.data().iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidArgument {
            op: "discretize",
            msg: "delta must be strictly positive".into(),
        });
    }
    let (dd, ad, bd) = (delta.data(), a.data(), bseq.data());
    let mut abar = vec![0.0; l * d * n];
    let mut bbar = vec![0.0; l * d * n];
    for t in 0..l {
        for di in 0..d {
            let dt = dd[t * d + di];
            for ni in 0..n {
                abar[(t * d + di) * n + ni] = (dt * ad[di * n + ni]).exp();
                bbar[(t * d + di) * n + ni] = dt * bd[t * n + ni];
            }
        }
    }
    Ok((
        Tensor::new(vec![l, d, n], abar)?,
        Tensor::new(vec![l, d, n], bbar)?,
    ))
}

/// Raw sequential recurrence on slices. `y` must hold `l*d` elements; `h_out`,
/// when given, receives all states `[L,D,N]`.
fn seq_kernel(
    x: &[f64],
    delta: &[f64],
    b: &[f64],
    c: &[f64],
    a: &[f64],
    d_skip: &[f64],
    l: usize,
    d: usize,
    n: usize,
    y: &mut [f64],
    mut h_out: Option<&mut [f64]>,
) {
    let mut h = vec![0.0; d * n];
    for t in 0..l {
        let bt = &b[t * n..(t + 1) * n];
        let ct = &c[t * n..(t + 1) * n];
        for di in 0..d {
            let dt = delta[t * d + di];
            let xv = x[t * d + di];
            let hrow = &mut h[di * n..(di + 1) * n];
            let arow = &a[di * n..(di + 1) * n];
            let mut acc = 0.0;
            for ni in 0..n {
                let hv = (dt * arow[ni]).exp() * hrow[ni] + dt * bt[ni] * xv;
                hrow[ni] = hv;
                acc += ct[ni] * hv;
            }
            y[t * d + di] = acc + d_skip[di] * xv;
        }
        if let Some(buf) = h_out.as_deref_mut() {
            buf[t * d * n..(t + 1) * d * n].copy_from_slice(&h);
        }
    }
}

pub fn s6_sequential(inp: &S6Inputs) -> Result<Tensor> {
    let (l, d, n) = inp.dims()?;
    let mut y = vec![0.0; l * d];
    seq_kernel(
        inp.x.data(),
        inp.delta.data(),
        inp.bseq.data(),
        inp.cseq.data(),
        inp.a.data(),
        inp.d_skip.data(),
        l,
        d,
        n,
        &mut y,
        None,
    );
    Tensor::new(vec![l, d], y)
}

/// Combine for the scan monoid: `(a1,b1) then (a2,b2) -> (a1*a2, a2*b1 + b2)`.
#[inline]
fn comb(l: (f64, f64), r: (f64, f64)) -> (f64, f64) {
    (l.0 * r.0, r.0 * l.1 + r.1)
}

/// Work-efficient (Blelloch) inclusive scan of the recurrence monoid, in
/// place over `(a, b)` pairs of arbitrary length.
pub fn blelloch_inclusive(av: &mut Vec<f64>, bv: &mut Vec<f64>) {
    let l = av.len();
    debug_assert_eq!(bv.len(), l);
    if l <= 1 {
        return;
    }
    let p = l.next_power_of_two();
    // identity element (1, 0) pads the tail
    av.resize(p, 1.0);
    bv.resize(p, 0.0);
    let leaf_a = av.clone();
    let leaf_b = bv.clone();
    // up-sweep
    let mut stride = 2usize;
    while stride <= p {
        let half = stride / 2;
        let mut i = stride - 1;
        while i < p {
            let m = comb((av[i - half], bv[i - half]), (av[i], bv[i]));
            av[i] = m.0;
            bv[i] = m.1;
            i += stride;
        }
        stride *= 2;
    }
    // down-sweep producing the exclusive scan
    av[p - 1] = 1.0;
    bv[p - 1] = 0.0;
    stride = p;
    while stride >= 2 {
        let half = stride / 2;
        let mut i = stride - 1;
        while i < p {
            let left = (av[i - half], bv[i - half]);
            av[i - half] = av[i];
            bv[i - half] = bv[i];
            let m = comb((av[i], bv[i]), left);
            av[i] = m.0;
            bv[i] = m.1;
            i += stride;
        }
        stride /= 2;
    }
    // inclusive[i] = exclusive[i] then leaf[i]
    for i in 0..l {
        let m = comb((av[i], bv[i]), (leaf_a[i], leaf_b[i]));
        av[i] = m.0;
        bv[i] = m.1;
    }
    av.truncate(l);
    bv.truncate(l);
}

/// Same value contract as [`s6_sequential`], computed with the associative
/// parallel scan over the time axis per (channel, state) pair.
pub fn s6_parallel_scan(inp: &S6Inputs) -> Result<Tensor> {
    let (l, d, n) = inp.dims()?;
    let (xd, dd, bd, cd, ad, sd) = (
        inp.x.data(),
        inp.delta.data(),
        inp.bseq.data(),
        inp.cseq.data(),
        inp.a.data(),
        inp.d_skip.data(),
    );
    let mut y = vec![0.0; l * d];
    for di in 0..d {
        let mut col = vec![0.0; l];
        for ni in 0..n {
            let av_coef = ad[di * n + ni];
            let mut a_seq = Vec::with_capacity(l);
            let mut b_seq = Vec::with_capacity(l);
            for t in 0..l {
                let dt = dd[t * d + di];
                a_seq.push((dt * av_coef).exp());
                b_seq.push(dt * bd[t * n + ni] * xd[t * d + di]);
            }
            blelloch_inclusive(&mut a_seq, &mut b_seq);
            for t in 0..l {
                col[t] += cd[t * n + ni] * b_seq[t];
            }
        }
        for t in 0..l {
            y[t * d + di] = col[t] + sd[di] * xd[t * d + di];
        }
    }
    Tensor::new(vec![l, d], y)
}

#[derive(Debug, Clone)]
pub struct S6Grads {
    pub dx: Tensor,
    pub ddelta: Tensor,
    pub dbseq: Tensor,
    pub dcseq: Tensor,
    pub da: Tensor,
    pub dd_skip: Tensor,
}

/// Backward through the sequential recurrence. The forward states are
/// recomputed here rather than saved by the forward pass.
pub fn s6_backward(inp: &S6Inputs, dy: &Tensor) -> Result<S6Grads> {
    let (l, d, n) = inp.dims()?;
    if dy.shape() != [l, d] {
        return Err(Error::ShapeMismatch {
            op: "s6_backward",
            lhs: dy.shape().to_vec(),
            rhs: vec![l, d],
        });
    }
    let (xd, dd, bd, cd, ad, sd) = (
        inp.x.data(),
        inp.delta.data(),
        inp.bseq.data(),
        inp.cseq.data(),
        inp.a.data(),
        inp.d_skip.data(),
    );
    let dyd = dy.data();
    let mut y = vec![0.0; l * d];
    let mut h_all = vec![0.0; l * d * n];
    seq_kernel(xd, dd, bd, cd, ad, sd, l, d, n, &mut y, Some(&mut h_all));

    let mut dx = vec![0.0; l * d];
    let mut ddelta = vec![0.0; l * d];
    let mut dbseq = vec![0.0; l * n];
    let mut dcseq = vec![0.0; l * n];
    let mut da = vec![0.0; d * n];
    let mut dd_skip = vec![0.0; d];
    let mut dh = vec![0.0; d * n];
    for t in (0..l).rev() {
        let bt = &bd[t * n..(t + 1) * n];
        let ct = &cd[t * n..(t + 1) * n];
        let ht = &h_all[t * d * n..(t + 1) * d * n];
        for di in 0..d {
            let g = dyd[t * d + di];
            let xv = xd[t * d + di];
            let dt = dd[t * d + di];
            dd_skip[di] += g * xv;
            let mut dxv = g * sd[di];
            let mut ddt = 0.0;
            let arow = &ad[di * n..(di + 1) * n];
            let hrow = &ht[di * n..(di + 1) * n];
            let dhrow = &mut dh[di * n..(di + 1) * n];
            for ni in 0..n {
                // full dL/dh_t for this (d, n)
                let dhv = dhrow[ni] + g * ct[ni];
                dcseq[t * n + ni] += g * hrow[ni];
                let abar = (dt * arow[ni]).exp();
                let h_prev = if t > 0 {
                    h_all[((t - 1) * d + di) * n + ni]
                } else {
                    0.0
                };
                let d_abar = dhv * h_prev;
                let d_bbar = dhv * xv;
                ddt += d_abar * arow[ni] * abar + d_bbar * bt[ni];
                da[di * n + ni] += d_abar * dt * abar;
                dbseq[t * n + ni] += d_bbar * dt;
                dxv += dhv * dt * bt[ni];
                // dL/dh_{t-1}
                dhrow[ni] = dhv * abar;
            }
            dx[t * d + di] = dxv;
            ddelta[t * d + di] = ddt;
        }
    }
    Ok(S6Grads {
        dx: Tensor::new(vec![l, d], dx)?,
        ddelta: Tensor::new(vec![l, d], ddelta)?,
        dbseq: Tensor::new(vec![l, n], dbseq)?,
        dcseq: Tensor::new(vec![l, n], dcseq)?,
        da: Tensor::new(vec![d, n], da)?,
        dd_skip: Tensor::new(vec![d], dd_skip)?,
    })
}

fn batch_dims(x: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match (x.shape(), b.shape()) {
        (&[s, l, d], &[s2, l2, n]) if s == s2 && l == l2 => Ok((s, l, d, n)),
        _ => Err(Error::ShapeMismatch {
            op: "s6_batch",
            lhs: x.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }),
    }
}

fn seq_inputs(
    x: &Tensor,
    delta: &Tensor,
    b: &Tensor,
    c: &Tensor,
    a: &Tensor,
    d_skip: &Tensor,
    si: usize,
    l: usize,
    d: usize,
    n: usize,
) -> S6Inputs {
    let take = |t: &Tensor, width: usize| {
        Tensor::new(
            vec![l, width],
            t.data()[si * l * width..(si + 1) * l * width].to_vec(),
        )
        .expect("slice sized")
    };
    S6Inputs {
        x: take(x, d),
        delta: take(delta, d),
        bseq: take(b, n),
        cseq: take(c, n),
        a: a.clone(),
        d_skip: d_skip.clone(),
    }
}

/// Batched forward over independent sequences `[S,L,D]`; sequences run in
/// parallel, each written to its own output slice.
pub fn s6_forward_batch(
    x: &Tensor,
    delta: &Tensor,
    b: &Tensor,
    c: &Tensor,
    a: &Tensor,
    d_skip: &Tensor,
    parallel_scan: bool,
) -> Result<Tensor> {
    let (s, l, d, n) = batch_dims(x, b)?;
    if delta.data().iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidArgument {
            op: "s6_forward_batch",
            msg: "delta must be strictly positive".into(),
        });
    }
    let mut y = vec![0.0; s * l * d];
    let chunk = l * d;
    y.par_chunks_mut(chunk).enumerate().for_each(|(si, out)| {
        if parallel_scan {
            let inp = seq_inputs(x, delta, b, c, a, d_skip, si, l, d, n);
            let yt = s6_parallel_scan(&inp).expect("validated");
            out.copy_from_slice(yt.data());
        } else {
            seq_kernel(
                &x.data()[si * l * d..(si + 1) * l * d],
                &delta.data()[si * l * d..(si + 1) * l * d],
                &b.data()[si * l * n..(si + 1) * l * n],
                &c.data()[si * l * n..(si + 1) * l * n],
                a.data(),
                d_skip.data(),
                l,
                d,
                n,
                out,
                None,
            );
        }
    });
    Tensor::new(vec![s, l, d], y)
}

/// Records a batched S6 node on the tape. `x`/`delta` are `[S,L,D]`,
/// `b`/`c` are `[S,L,N]`, `a` is `[D,N]`, `d_skip` is `[D]`.
pub fn s6_op(
    tape: &mut Tape,
    x: Var,
    delta: Var,
    b: Var,
    c: Var,
    a: Var,
    d_skip: Var,
    parallel_scan: bool,
) -> Result<Var> {
    let y = s6_forward_batch(
        tape.value(x),
        tape.value(delta),
        tape.value(b),
        tape.value(c),
        tape.value(a),
        tape.value(d_skip),
        parallel_scan,
    )?;
    Ok(tape.push_node(
        y,
        &[x, delta, b, c, a, d_skip],
        Box::new(|dout, p, _| {
            let (x, delta, b, c, a, d_skip) = (p[0], p[1], p[2], p[3], p[4], p[5]);
            let (s, l, d, n) = batch_dims(x, b).expect("checked in forward");
            let per_seq: Vec<S6Grads> = (0..s)
                .into_par_iter()
                .map(|si| {
                    let inp = seq_inputs(x, delta, b, c, a, d_skip, si, l, d, n);
                    let dy = Tensor::new(
                        vec![l, d],
                        dout.data()[si * l * d..(si + 1) * l * d].to_vec(),
                    )
                    .expect("slice sized");
                    s6_backward(&inp, &dy).expect("validated in forward")
                })
                .collect();
            let mut dx = Vec::with_capacity(s * l * d);
            let mut ddelta = Vec::with_capacity(s * l * d);
            let mut db = Vec::with_capacity(s * l * n);
            let mut dc = Vec::with_capacity(s * l * n);
            let mut da = vec![0.0; d * n];
            let mut dd_skip = vec![0.0; d];
            // fixed-order reduction keeps results thread-count independent
            for g in &per_seq {
                dx.extend_from_slice(g.dx.data());
                ddelta.extend_from_slice(g.ddelta.data());
                db.extend_from_slice(g.dbseq.data());
                dc.extend_from_slice(g.dcseq.data());
                for (acc, &v) in da.iter_mut().zip(g.da.data()) {
                    *acc += v;
                }
                for (acc, &v) in dd_skip.iter_mut().zip(g.dd_skip.data()) {
                    *acc += v;
                }
            }
            vec![
                Tensor::new(vec![s, l, d], dx).expect("sized"),
                Tensor::new(vec![s, l, d], ddelta).expect("sized"),
                Tensor::new(vec![s, l, n], db).expect("sized"),
                Tensor::new(vec![s, l, n], dc).expect("sized"),
                Tensor::new(vec![d, n], da).expect("sized"),
                Tensor::new(vec![d], dd_skip).expect("sized"),
            ]
        }),
    ))
}

/// One direction's selective-scan parameters: the three input-dependent
/// projections, the delta bias, and the static A / skip terms.
#[derive(Debug, Clone)]
pub struct S6Params {
    pub cfg: S6Config,
    pub w_delta: PId,
    pub b_delta: PId,
    pub w_b: PId,
    pub w_c: PId,
    pub a_log: PId,
    pub d_skip: PId,
}

impl S6Params {
    pub fn init(bank: &mut ParamBank, prefix: &str, cfg: S6Config, rng: &mut Rng) -> Self {
        let (d, n) = (cfg.d_inner, cfg.d_state);
        let std = 1.0 / (d as f64).sqrt();
        let w_delta = bank.add(format!("{prefix}.w_delta"), rng.normal_tensor(&[d, d], std));
        // bias placed so softplus(bias) lands in [dt_min, dt_max]
        let bias: Vec<f64> = (0..d)
            .map(|_| {
                let dt = (rng.uniform_range(cfg.dt_min.ln(), cfg.dt_max.ln())).exp();
                (dt.exp_m1()).ln()
            })
            .collect();
        let b_delta = bank.add(
            format!("{prefix}.b_delta"),
            Tensor::new(vec![d], bias).expect("length d"),
        );
        let w_b = bank.add(format!("{prefix}.w_b"), rng.normal_tensor(&[d, n], std));
        let w_c = bank.add(format!("{prefix}.w_c"), rng.normal_tensor(&[d, n], std));
        // S4D-real: A[d,n] = -(n+1), stored as a_log
        let a_init: Vec<f64> = (0..d * n).map(|i| (((i % n) + 1) as f64).ln()).collect();
        let a_log = bank.add(
            format!("{prefix}.a_log"),
            Tensor::new(vec![d, n], a_init).expect("sized"),
        );
        let d_skip = bank.add(format!("{prefix}.d_skip"), Tensor::full(&[d], 1.0));
        Self {
            cfg,
            w_delta,
            b_delta,
            w_b,
            w_c,
            a_log,
            d_skip,
        }
    }

    /// Projection + scan for a batch of sequences `[S,L,D]`.
    pub fn forward(&self, s: &mut Session, x: Var, parallel_scan: bool) -> Result<Var> {
        let (sq, l, d) = match s.tape.value(x).shape() {
            &[sq, l, d] => (sq, l, d),
            sh => {
                return Err(Error::InvalidArgument {
                    op: "S6Params::forward",
                    msg: format!("expected [S,L,D], got {:?}", sh),
                })
            }
        };
        let n = self.cfg.d_state;
        let flat = s.tape.reshape(x, &[sq * l, d])?;
        let (w_delta, b_delta) = (s.p(self.w_delta), s.p(self.b_delta));
        let (w_b, w_c) = (s.p(self.w_b), s.p(self.w_c));
        let pre = s.tape.matmul(flat, w_delta)?;
        let pre = s.tape.add_bias_last(pre, b_delta)?;
        let soft = s.tape.softplus(pre);
        let delta = s.tape.reshape(soft, &[sq, l, d])?;
        let bproj = s.tape.matmul(flat, w_b)?;
        let bproj = s.tape.reshape(bproj, &[sq, l, n])?;
        let cproj = s.tape.matmul(flat, w_c)?;
        let cproj = s.tape.reshape(cproj, &[sq, l, n])?;
        let a_log = s.p(self.a_log);
        let a_exp = s.tape.exp(a_log);
        let a = s.tape.scale(a_exp, -1.0);
        let d_skip = s.p(self.d_skip);
        s6_op(&mut s.tape, x, delta, bproj, cproj, a, d_skip, parallel_scan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::softplus_scalar;

    fn random_inputs(rng: &mut Rng, l: usize, d: usize, n: usize) -> S6Inputs {
        let a = rng.uniform_tensor(&[d, n], 0.2, 3.0).map(|v| -v);
        S6Inputs {
            x: rng.normal_tensor(&[l, d], 1.0),
            delta: rng.uniform_tensor(&[l, d], 1e-3, 0.3),
            bseq: rng.normal_tensor(&[l, n], 1.0),
            cseq: rng.normal_tensor(&[l, n], 1.0),
            a,
            d_skip: rng.normal_tensor(&[d], 1.0),
        }
    }

    #[test]
    fn discretize_closed_forms() {
        // A = -1, delta = ln 2 -> Abar = 0.5; Bbar scales linearly in delta
        let delta = Tensor::new(vec![1, 1], vec![2.0f64.ln()]).unwrap();
        let a = Tensor::new(vec![1, 1], vec![-1.0]).unwrap();
        let b = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        let (abar, bbar) = discretize(&delta, &a, &b).unwrap();
        assert!((abar.data()[0] - 0.5).abs() < 1e-15);
        assert!((bbar.data()[0] - 3.0 * 2.0f64.ln()).abs() < 1e-15);

        let (_, bbar2) = discretize(&Tensor::new(vec![1, 1], vec![2.0 * 2.0f64.ln()]).unwrap(), &a, &b).unwrap();
        assert!((bbar2.data()[0] - 2.0 * bbar.data()[0]).abs() < 1e-15);
    }

    #[test]
    fn discretize_small_delta_limit() {
        let delta = Tensor::new(vec![1, 1], vec![1e-12]).unwrap();
        let a = Tensor::new(vec![1, 1], vec![-2.0]).unwrap();
        let b = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let (abar, bbar) = discretize(&delta, &a, &b).unwrap();
        assert!((abar.data()[0] - 1.0).abs() < 1e-10);
        assert!(bbar.data()[0].abs() < 1e-10);
    }

    #[test]
    fn discretize_rejects_nonpositive_delta() {
        let delta = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
        let a = Tensor::new(vec![1, 1], vec![-1.0]).unwrap();
        let b = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        assert!(discretize(&delta, &a, &b).is_err());
    }

    #[test]
    fn zero_c_reduces_to_skip() {
        let mut rng = Rng::new(1);
        let mut inp = random_inputs(&mut rng, 5, 3, 4);
        inp.cseq = Tensor::zeros(&[5, 4]);
        let y = s6_sequential(&inp).unwrap();
        for t in 0..5 {
            for d in 0..3 {
                let expect = inp.d_skip.data()[d] * inp.x.data()[t * 3 + d];
                assert!((y.data()[t * 3 + d] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_step_closed_form() {
        let mut rng = Rng::new(2);
        let inp = random_inputs(&mut rng, 1, 2, 3);
        let y = s6_sequential(&inp).unwrap();
        for d in 0..2 {
            let dt = inp.delta.data()[d];
            let xv = inp.x.data()[d];
            let mut expect = inp.d_skip.data()[d] * xv;
            for n in 0..3 {
                expect += inp.cseq.data()[n] * dt * inp.bseq.data()[n] * xv;
            }
            assert!((y.data()[d] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn sequential_matches_naive_unroll() {
        // independent high-precision unroll with explicit Abar/Bbar tensors
        let mut rng = Rng::new(3);
        let inp = random_inputs(&mut rng, 3, 2, 4);
        let (abar, bbar) = discretize(&inp.delta, &inp.a, &inp.bseq).unwrap();
        let (l, d, n) = (3, 2, 4);
        let mut h = vec![0.0f64; d * n];
        let mut expect = vec![0.0f64; l * d];
        for t in 0..l {
            for di in 0..d {
                let mut acc = 0.0;
                for ni in 0..n {
                    let idx = (t * d + di) * n + ni;
                    h[di * n + ni] =
                        abar.data()[idx] * h[di * n + ni] + bbar.data()[idx] * inp.x.data()[t * d + di];
                    acc += inp.cseq.data()[t * n + ni] * h[di * n + ni];
                }
                expect[t * d + di] = acc + inp.d_skip.data()[di] * inp.x.data()[t * d + di];
            }
        }
        let y = s6_sequential(&inp).unwrap();
        for i in 0..l * d {
            let rel = (y.data()[i] - expect[i]).abs() / expect[i].abs().max(1.0);
            assert!(rel <= 1e-12, "rel {}", rel);
        }
    }

    #[test]
    fn parallel_scan_degenerate_cases() {
        let mut rng = Rng::new(4);
        let inp = random_inputs(&mut rng, 1, 2, 3);
        assert_eq!(s6_parallel_scan(&inp).unwrap(), s6_sequential(&inp).unwrap());
    }

    #[test]
    fn scan_with_unit_a_is_prefix_sum() {
        // Abar == 1 when delta*A -> 0; drive A tiny so the scan reduces to
        // prefix sums of Bbar*x up to rounding
        let mut rng = Rng::new(5);
        let mut inp = random_inputs(&mut rng, 9, 1, 1);
        inp.a = Tensor::new(vec![1, 1], vec![-1e-300]).unwrap();
        let y = s6_parallel_scan(&inp).unwrap();
        let mut prefix = 0.0;
        for t in 0..9 {
            prefix += inp.delta.data()[t] * inp.bseq.data()[t] * inp.x.data()[t];
            let expect = inp.cseq.data()[t] * prefix + inp.d_skip.data()[0] * inp.x.data()[t];
            assert!((y.data()[t] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn parallel_matches_sequential_fuzz() {
        let mut rng = Rng::new(6);
        for trial in 0..60 {
            let l = 2 + rng.below(256);
            let inp = random_inputs(&mut rng, l, 2, 3);
            let a = s6_sequential(&inp).unwrap();
            let b = s6_parallel_scan(&inp).unwrap();
            for i in 0..a.elems() {
                assert!(
                    (a.data()[i] - b.data()[i]).abs() <= 1e-10,
                    "trial {} L {} idx {}",
                    trial,
                    l,
                    i
                );
            }
        }
    }

    #[test]
    fn superposition_in_x() {
        let mut rng = Rng::new(7);
        let base = random_inputs(&mut rng, 17, 2, 3);
        let x2 = rng.normal_tensor(&[17, 2], 1.0);
        let (alpha, beta) = (0.7, -1.3);
        let mut lhs_inp = base.clone();
        lhs_inp.x = Tensor::new(
            vec![17, 2],
            base.x
                .data()
                .iter()
                .zip(x2.data())
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        )
        .unwrap();
        let lhs = s6_sequential(&lhs_inp).unwrap();
        let y1 = s6_sequential(&base).unwrap();
        let mut rhs_inp = base.clone();
        rhs_inp.x = x2;
        let y2 = s6_sequential(&rhs_inp).unwrap();
        for i in 0..lhs.elems() {
            let expect = alpha * y1.data()[i] + beta * y2.data()[i];
            assert!((lhs.data()[i] - expect).abs() <= 1e-10);
        }
    }

    #[test]
    fn stability_long_sequence() {
        let mut rng = Rng::new(8);
        let l = 10_000;
        let inp = random_inputs(&mut rng, l, 1, 2);
        let y = s6_sequential(&inp).unwrap();
        assert!(y.is_finite());
        // geometric-series bound on |h|
        let a_max = inp.a.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let max_abar = inp
            .delta
            .data()
            .iter()
            .map(|&dt| (dt * a_max).exp())
            .fold(0.0f64, f64::max);
        assert!(max_abar < 1.0);
        let mut max_drive = 0.0f64;
        for t in 0..l {
            for ni in 0..2 {
                max_drive = max_drive
                    .max((inp.delta.data()[t] * inp.bseq.data()[t * 2 + ni] * inp.x.data()[t]).abs());
            }
        }
        let bound = max_drive / (1.0 - max_abar);
        // recompute states to check the bound directly
        let mut ybuf = vec![0.0; l];
        let mut h_all = vec![0.0; l * 2];
        seq_kernel(
            inp.x.data(),
            inp.delta.data(),
            inp.bseq.data(),
            inp.cseq.data(),
            inp.a.data(),
            inp.d_skip.data(),
            l,
            1,
            2,
            &mut ybuf,
            Some(&mut h_all),
        );
        assert!(h_all.iter().all(|h| h.abs() <= bound + 1e-9));
    }

    #[test]
    fn rejects_empty_sequence() {
        let inp = S6Inputs {
            x: Tensor::zeros(&[0, 2]),
            delta: Tensor::zeros(&[0, 2]),
            bseq: Tensor::zeros(&[0, 3]),
            cseq: Tensor::zeros(&[0, 3]),
            a: Tensor::full(&[2, 3], -1.0),
            d_skip: Tensor::zeros(&[2]),
        };
        assert!(s6_sequential(&inp).is_err());
    }

    #[test]
    fn backward_zero_dy_gives_zero_grads() {
        let mut rng = Rng::new(9);
        let inp = random_inputs(&mut rng, 6, 2, 3);
        let g = s6_backward(&inp, &Tensor::zeros(&[6, 2])).unwrap();
        assert!(g.dx.data().iter().all(|&v| v == 0.0));
        assert!(g.da.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_skip_only_path() {
        let mut rng = Rng::new(10);
        let mut inp = random_inputs(&mut rng, 4, 2, 3);
        inp.cseq = Tensor::zeros(&[4, 3]);
        let dy = rng.normal_tensor(&[4, 2], 1.0);
        let g = s6_backward(&inp, &dy).unwrap();
        for t in 0..4 {
            for d in 0..2 {
                let expect = dy.data()[t * 2 + d] * inp.d_skip.data()[d];
                assert!((g.dx.data()[t * 2 + d] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softplus_positive_everywhere() {
        let mut rng = Rng::new(11);
        for _ in 0..10_000 {
            assert!(softplus_scalar(rng.normal() * 10.0) > 0.0);
        }
    }
}
