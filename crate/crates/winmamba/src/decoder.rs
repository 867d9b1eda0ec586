//! Segmentation head: pyramid pooling over the deepest map, a lightweight
//! top-down feature pyramid over all four stages, and a per-pixel classifier
//! upsampled back to the input resolution.

use crate::blocks::{Encoder, ModelConfig};
use crate::rng::Rng;
use crate::tape::{ParamBank, PId, Session, Var};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct DecoderConfig {
    /// Shared pyramid channel width.
    pub fpn_dim: usize,
    /// Pooling grid sizes for the pyramid pooling module; scales larger than
    /// the deepest map's short side are dropped at forward time.
    pub ppm_scales: Vec<usize>,
    pub num_classes: usize,
}

impl DecoderConfig {
    pub fn for_model(cfg: &ModelConfig) -> Self {
        Self {
            fpn_dim: cfg.base_dim * 4,
            ppm_scales: vec![1, 2, 3, 6],
            num_classes: cfg.num_classes,
        }
    }
}

/// 1x1 or 3x3 convolution with bias.
#[derive(Debug, Clone)]
struct Conv {
    w: PId,
    b: PId,
    pad: usize,
}

impl Conv {
    fn init(
        bank: &mut ParamBank,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        rng: &mut Rng,
    ) -> Self {
        let std = 1.0 / ((c_in * k * k) as f64).sqrt();
        Self {
            w: bank.add(format!("{name}.w"), rng.normal_tensor(&[c_out, c_in, k, k], std)),
            b: bank.add(format!("{name}.b"), crate::tensor::Tensor::zeros(&[c_out])),
            pad: k / 2,
        }
    }

    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (w, b) = (s.p(self.w), s.p(self.b));
        s.tape.conv2d(x, w, b, self.pad)
    }
}

/// Pyramid pooling: adaptive-pool the deepest map to each grid size, project
/// to the shared width, resize back, concatenate with the input, fuse.
struct Ppm {
    branches: Vec<(usize, Conv)>,
    fuse: Conv,
}

impl Ppm {
    fn init(bank: &mut ParamBank, name: &str, c_in: usize, dim: usize, scales: &[usize], rng: &mut Rng) -> Self {
        let branches = scales
            .iter()
            .map(|&sc| (sc, Conv::init(bank, &format!("{name}.scale{sc}"), c_in, dim, 1, rng)))
            .collect();
        let fuse = Conv::init(
            bank,
            &format!("{name}.fuse"),
            c_in + scales.len() * dim,
            dim,
            1,
            rng,
        );
        Self { branches, fuse }
    }

    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (h, w) = {
            let sh = s.tape.value(x).shape();
            (sh[2], sh[3])
        };
        let short = h.min(w);
        let mut parts = vec![x];
        let mut zero_pads = Vec::new();
        for (sc, conv) in &self.branches {
            if *sc > short {
                // keep the fuse conv's input width fixed: dropped scales
                // contribute a zero map (their weights see no gradient)
                zero_pads.push(conv);
                continue;
            }
            let pooled = s.tape.adaptive_avg_pool(x, *sc)?;
            let proj = conv.forward(s, pooled)?;
            let up = s.tape.bilinear_resize(proj, h, w)?;
            parts.push(up);
        }
        for conv in zero_pads {
            let c_out = s.tape.value(s.p(conv.w)).shape()[0];
            parts.push(s.tape.leaf(crate::tensor::Tensor::zeros(&[
                s.tape.value(x).shape()[0],
                c_out,
                h,
                w,
            ])));
        }
        let cat = s.tape.concat_channels(&parts)?;
        self.fuse.forward(s, cat)
    }
}

/// Full segmentation model: encoder plus decoder head.
pub struct SegModel {
    pub encoder: Encoder,
    ppm: Ppm,
    laterals: Vec<Conv>,
    smooths: Vec<Conv>,
    fpn_fuse: Conv,
    classifier: Conv,
    pub dec_cfg: DecoderConfig,
}

impl SegModel {
    pub fn init(bank: &mut ParamBank, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let encoder = Encoder::init(bank, cfg, rng)?;
        let dec_cfg = DecoderConfig::for_model(cfg);
        let dims: Vec<usize> = (0..4).map(|i| cfg.base_dim << i).collect();
        let ppm = Ppm::init(
            bank,
            "dec.ppm",
            dims[3],
            dec_cfg.fpn_dim,
            &dec_cfg.ppm_scales,
            rng,
        );
        let laterals = (0..3)
            .map(|i| Conv::init(bank, &format!("dec.lateral{i}"), dims[i], dec_cfg.fpn_dim, 1, rng))
            .collect();
        let smooths = (0..4)
            .map(|i| Conv::init(bank, &format!("dec.smooth{i}"), dec_cfg.fpn_dim, dec_cfg.fpn_dim, 3, rng))
            .collect();
        let fpn_fuse = Conv::init(bank, "dec.fuse", 4 * dec_cfg.fpn_dim, dec_cfg.fpn_dim, 1, rng);
        let classifier = Conv::init(bank, "dec.classifier", dec_cfg.fpn_dim, dec_cfg.num_classes, 1, rng);
        Ok(Self {
            encoder,
            ppm,
            laterals,
            smooths,
            fpn_fuse,
            classifier,
            dec_cfg,
        })
    }

    /// `[B,3,H,W] -> [B,K,H,W]` logits at input resolution.
    pub fn forward(&self, s: &mut Session, img: Var) -> Result<Var> {
        let [_, _, ih, iw] = match s.tape.value(img).shape() {
            &[b, c, h, w] => [b, c, h, w],
            sh => {
                return Err(Error::InvalidArgument {
                    op: "seg_forward",
                    msg: format!("expected [B,3,H,W] image, got {:?}", sh),
                })
            }
        };
        let maps = self.encoder.forward(s, img)?;

        // top of the pyramid: pooled context over the deepest map, then
        // top-down lateral merges (built deepest-first, reversed after)
        let mut tops = vec![self.ppm.forward(s, maps[3])?];
        for i in (0..3).rev() {
            let lat = self.laterals[i].forward(s, maps[i])?;
            let (h, w) = {
                let sh = s.tape.value(lat).shape();
                (sh[2], sh[3])
            };
            let up = s.tape.bilinear_resize(*tops.last().unwrap(), h, w)?;
            tops.push(s.tape.add(lat, up)?);
        }
        tops.reverse();

        // per-level smoothing, then gather everything at 1/4 scale
        let (h0, w0) = {
            let sh = s.tape.value(tops[0]).shape();
            (sh[2], sh[3])
        };
        let mut levels = Vec::with_capacity(4);
        for i in 0..4 {
            let sm = self.smooths[i].forward(s, tops[i])?;
            levels.push(s.tape.bilinear_resize(sm, h0, w0)?);
        }
        let cat = s.tape.concat_channels(&levels)?;
        let fused = self.fpn_fuse.forward(s, cat)?;
        let logits = self.classifier.forward(s, fused)?;
        s.tape.bilinear_resize(logits, ih, iw)
    }
}
