//! Procedurally generated segmentation scenes: colored rectangles and disks
//! on a textured background, with per-pixel class labels.

use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const CLASS_BACKGROUND: usize = 0;
pub const CLASS_RECTANGLE: usize = 1;
pub const CLASS_DISK: usize = 2;
pub const NUM_CLASSES: usize = 3;

/// One image `[3,H,W]` with a per-pixel label map `[H*W]`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor,
    pub labels: Vec<usize>,
}

const BASE_COLORS: [[f64; 3]; 3] = [
    [0.15, 0.17, 0.20], // background
    [0.80, 0.30, 0.25], // rectangles
    [0.25, 0.45, 0.85], // disks
];

const NOISE_STD: f64 = 0.05;

/// Deterministic scene generator: 1-3 rectangles and 1-3 disks, sizes in
/// `[min(H,W)/16, min(H,W)/4]`, later shapes overwrite earlier ones.
pub fn synth_sample(h: usize, w: usize, rng: &mut Rng) -> Result<Sample> {
    synth_sample_with_noise(h, w, NOISE_STD, rng)
}

/// As `synth_sample` but with explicit noise amplitude; zero gives a
/// piecewise-constant image per class region.
pub fn synth_sample_with_noise(h: usize, w: usize, noise_std: f64, rng: &mut Rng) -> Result<Sample> {
    if h < 16 || w < 16 {
        return Err(Error::InvalidArgument {
            op: "synth_sample",
            msg: format!("image {}x{} too small, need at least 16x16", h, w),
        });
    }
    let side = h.min(w);
    let (r_min, r_max) = (side / 16, side / 4);
    let mut labels = vec![CLASS_BACKGROUND; h * w];

    enum Shape {
        Rect { i0: usize, i1: usize, j0: usize, j1: usize },
        Disk { ci: f64, cj: f64, r: f64 },
    }
    let mut shapes = Vec::new();
    let n_rect = 1 + rng.below(3);
    for _ in 0..n_rect {
        let half = r_min + rng.below(r_max - r_min + 1);
        let ci = rng.below(h);
        let cj = rng.below(w);
        shapes.push((
            CLASS_RECTANGLE,
            Shape::Rect {
                i0: ci.saturating_sub(half),
                i1: (ci + half + 1).min(h),
                j0: cj.saturating_sub(half),
                j1: (cj + half + 1).min(w),
            },
        ));
    }
    let n_disk = 1 + rng.below(3);
    for _ in 0..n_disk {
        let r = (r_min + rng.below(r_max - r_min + 1)) as f64;
        let ci = rng.below(h) as f64;
        let cj = rng.below(w) as f64;
        shapes.push((CLASS_DISK, Shape::Disk { ci, cj, r }));
    }

    for (class, shape) in &shapes {
        match shape {
            Shape::Rect { i0, i1, j0, j1 } => {
                for i in *i0..*i1 {
                    for j in *j0..*j1 {
                        labels[i * w + j] = *class;
                    }
                }
            }
            Shape::Disk { ci, cj, r } => {
                for i in 0..h {
                    for j in 0..w {
                        let (di, dj) = (i as f64 - ci, j as f64 - cj);
                        if di * di + dj * dj <= r * r {
                            labels[i * w + j] = *class;
                        }
                    }
                }
            }
        }
    }

    let mut image = vec![0.0; 3 * h * w];
    for (idx, &class) in labels.iter().enumerate() {
        for c in 0..3 {
            image[c * h * w + idx] = BASE_COLORS[class][c] + noise_std * rng.normal();
        }
    }
    Ok(Sample {
        image: Tensor::new(vec![3, h, w], image)?,
        labels,
    })
}

/// A batch of images `[B,3,H,W]` with flattened labels `[B*H*W]`.
pub fn synth_batch(batch: usize, h: usize, w: usize, rng: &mut Rng) -> Result<(Tensor, Vec<usize>)> {
    let mut data = Vec::with_capacity(batch * 3 * h * w);
    let mut labels = Vec::with_capacity(batch * h * w);
    for _ in 0..batch {
        let s = synth_sample(h, w, rng)?;
        data.extend_from_slice(s.image.data());
        labels.extend_from_slice(&s.labels);
    }
    Ok((Tensor::new(vec![batch, 3, h, w], data)?, labels))
}
