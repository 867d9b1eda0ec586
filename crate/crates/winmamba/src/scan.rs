//! Spatial-order machinery: window partition/merge, cyclic shift, the four
//! directional scan orders, and (de)serialization of 2-D regions into 1-D
//! sequences.
//!
//! Everything here is a value-preserving bijection with an exact inverse; the
//! property tests fuzz the roundtrips bit-exactly.

use crate::tensor::{self, Tensor};
use crate::{Error, Result};

/// Geometry of a non-overlapping window partition after padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGrid {
    /// Feature-map dims post-padding.
    pub h: usize,
    pub w: usize,
    /// Window side length.
    pub win: usize,
    /// Zero padding added bottom/right to reach divisibility.
    pub pad_h: usize,
    pub pad_w: usize,
}

impl WindowGrid {
    pub fn windows_per_image(&self) -> usize {
        (self.h / self.win) * (self.w / self.win)
    }

    pub fn orig_h(&self) -> usize {
        self.h - self.pad_h
    }

    pub fn orig_w(&self) -> usize {
        self.w - self.pad_w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Left-to-right, row-major.
    LR,
    /// Right-to-left, reversed row-major.
    RL,
    /// Top-to-bottom, column-major.
    TB,
    /// Bottom-to-top, reversed column-major.
    BT,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::LR, Direction::RL, Direction::TB, Direction::BT];

    pub fn name(self) -> &'static str {
        match self {
            Direction::LR => "lr",
            Direction::RL => "rl",
            Direction::TB => "tb",
            Direction::BT => "bt",
        }
    }
}

/// A bijective visit order over the `h*w` cells of a rectangle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanOrder {
    pub direction: Direction,
    /// `perm[k]` is the row-major cell index visited at step `k`.
    pub perm: Vec<usize>,
}

pub fn scan_order(h: usize, w: usize, direction: Direction) -> ScanOrder {
    let mut perm: Vec<usize> = match direction {
        Direction::LR | Direction::RL => (0..h * w).collect(),
        Direction::TB | Direction::BT => {
            let mut p = Vec::with_capacity(h * w);
            for j in 0..w {
                for i in 0..h {
                    p.push(i * w + j);
                }
            }
            p
        }
    };
    if matches!(direction, Direction::RL | Direction::BT) {
        perm.reverse();
    }
    ScanOrder { direction, perm }
}

pub fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

/// Zero-pads `[B,C,H,W]` bottom/right to the next multiples of `win`.
pub fn pad_to_multiple(f: &Tensor, win: usize) -> Result<(Tensor, WindowGrid)> {
    if win < 1 {
        return Err(Error::InvalidArgument {
            op: "pad_to_multiple",
            msg: "window size must be >= 1".into(),
        });
    }
    let (h, w) = spatial_dims(f)?;
    let pad_h = (win - h % win) % win;
    let pad_w = (win - w % win) % win;
    let grid = WindowGrid {
        h: h + pad_h,
        w: w + pad_w,
        win,
        pad_h,
        pad_w,
    };
    let padded = if pad_h == 0 && pad_w == 0 {
        f.clone()
    } else {
        tensor::pad_bottom_right(f, pad_h, pad_w)?
    };
    Ok((padded, grid))
}

fn spatial_dims(f: &Tensor) -> Result<(usize, usize)> {
    match f.shape() {
        &[_, _, h, w] => Ok((h, w)),
        s => Err(Error::InvalidArgument {
            op: "scan",
            msg: format!("expected rank-4 [B,C,H,W], got {:?}", s),
        }),
    }
}

/// `[B,C,H,W] -> [(B*N),C,win,win]`, windows row-major over (i, j).
pub fn window_partition(f: &Tensor, grid: &WindowGrid) -> Result<Tensor> {
    let (b, c, h, w) = match f.shape() {
        &[b, c, h, w] => (b, c, h, w),
        s => {
            return Err(Error::InvalidArgument {
                op: "window_partition",
                msg: format!("expected rank-4, got {:?}", s),
            })
        }
    };
    if h != grid.h || w != grid.w || h % grid.win != 0 || w % grid.win != 0 {
        return Err(Error::InvalidArgument {
            op: "window_partition",
            msg: format!("grid {:?} inconsistent with map {}x{}", grid, h, w),
        });
    }
    let k = grid.win;
    // [B,C,Hw,k,Ww,k] -> [B,Hw,Ww,C,k,k] -> [(B*N),C,k,k]
    let r = f.reshape(&[b, c, h / k, k, w / k, k])?;
    let p = tensor::permute(&r, &[0, 2, 4, 1, 3, 5])?;
    p.reshape(&[b * grid.windows_per_image(), c, k, k])
}

/// Exact inverse of [`window_partition`].
pub fn window_merge(windows: &Tensor, grid: &WindowGrid) -> Result<Tensor> {
    let (bn, c, kh, kw) = match windows.shape() {
        &[bn, c, kh, kw] => (bn, c, kh, kw),
        s => {
            return Err(Error::InvalidArgument {
                op: "window_merge",
                msg: format!("expected rank-4, got {:?}", s),
            })
        }
    };
    let n = grid.windows_per_image();
    if kh != grid.win || kw != grid.win || bn % n != 0 {
        return Err(Error::InvalidArgument {
            op: "window_merge",
            msg: format!("window count {} not divisible by N={} (grid {:?})", bn, n, grid),
        });
    }
    let b = bn / n;
    let k = grid.win;
    let r = windows.reshape(&[b, grid.h / k, grid.w / k, c, k, k])?;
    let p = tensor::permute(&r, &[0, 3, 1, 4, 2, 5])?;
    p.reshape(&[b, c, grid.h, grid.w])
}

/// Cyclic roll of both spatial axes by `-s` (`+s` when `inverse`).
pub fn cyclic_shift(f: &Tensor, s: usize, inverse: bool) -> Result<Tensor> {
    if s == 0 {
        return Ok(f.clone());
    }
    tensor::roll2d(f, s, inverse)
}

/// Four directional sequences of a region batch: `[S,C,h,w] -> 4 x [S,L,C]`.
pub fn serialize_4d(region: &Tensor) -> Result<[Tensor; 4]> {
    let (s, c, h, w) = match region.shape() {
        &[s, c, h, w] => (s, c, h, w),
        sh => {
            return Err(Error::InvalidArgument {
                op: "serialize_4d",
                msg: format!("expected rank-4, got {:?}", sh),
            })
        }
    };
    let tokens = tensor::permute(&region.reshape(&[s, c, h * w])?, &[0, 2, 1])?;
    let mut out = Vec::with_capacity(4);
    for dir in Direction::ALL {
        let order = scan_order(h, w, dir);
        out.push(tensor::gather_mid(&tokens, &order.perm)?);
    }
    Ok([out.remove(0), out.remove(0), out.remove(0), out.remove(0)])
}

/// Inverse-permutes four `[S,L,C]` directional outputs back to spatial layout
/// and sums them elementwise: returns `[S,C,h,w]`.
pub fn deserialize_and_merge(outs: &[Tensor; 4], h: usize, w: usize) -> Result<Tensor> {
    let (s, l, c) = match outs[0].shape() {
        &[s, l, c] => (s, l, c),
        sh => {
            return Err(Error::InvalidArgument {
                op: "deserialize_and_merge",
                msg: format!("expected rank-3, got {:?}", sh),
            })
        }
    };
    if l != h * w {
        return Err(Error::InvalidArgument {
            op: "deserialize_and_merge",
            msg: format!("sequence length {} vs region {}x{}", l, h, w),
        });
    }
    let mut acc: Option<Tensor> = None;
    for (out, dir) in outs.iter().zip(Direction::ALL) {
        if out.shape() != outs[0].shape() {
            return Err(Error::ShapeMismatch {
                op: "deserialize_and_merge",
                lhs: outs[0].shape().to_vec(),
                rhs: out.shape().to_vec(),
            });
        }
        let order = scan_order(h, w, dir);
        let spatial = tensor::gather_mid(out, &invert_perm(&order.perm))?;
        acc = Some(match acc {
            None => spatial,
            Some(a) => tensor::add(&a, &spatial)?,
        });
    }
    let summed = acc.expect("four directions");
    tensor::permute(&summed, &[0, 2, 1])?.reshape(&[s, c, h, w])
}

/// A rectangle in feature-map coordinates, rows `i0..i1`, cols `j0..j1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl Rect {
    pub fn height(&self) -> usize {
        self.i1 - self.i0
    }

    pub fn width(&self) -> usize {
        self.j1 - self.j0
    }
}

/// Boundary-shift partitioning: the window grid is offset by `s` without any
/// roll, so edge windows have side lengths in {s, win, win - s}. The rects
/// tile the map exactly.
pub fn shift_partition_rects(h: usize, w: usize, win: usize, s: usize) -> Vec<Rect> {
    let cuts = |n: usize| -> Vec<(usize, usize)> {
        let mut edges = vec![0usize];
        let mut x = if s % win == 0 || s >= n { win.min(n) } else { (win - s).min(n) };
        while x < n {
            edges.push(x);
            x += win;
        }
        edges.push(n);
        edges.windows(2).map(|e| (e[0], e[1])).collect()
    };
    let rows = cuts(h);
    let cols = cuts(w);
    let mut rects = Vec::with_capacity(rows.len() * cols.len());
    for &(i0, i1) in &rows {
        for &(j0, j1) in &cols {
            rects.push(Rect { i0, i1, j0, j1 });
        }
    }
    rects
}
