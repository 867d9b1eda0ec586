//! Encoder building blocks: patch embedding, patch merging, the windowed /
//! shifted / global four-directional S6 mixer, and the four-stage pipeline.
//!
//! A block is `F + out_proj(norm2(ss2d(silu(dwconv(in_a(norm1(F)))))) *
//! silu(in_b(norm1(F))))` with the scan flavor chosen per stage. The shifted
//! variant is literally roll -> windowed scan -> inverse roll, which the
//! shift-equivalence tests pin down bit-exactly.

use crate::rng::Rng;
use crate::s6::{S6Config, S6Params};
use crate::scan::{self, Direction};
use crate::tape::{ParamBank, PId, Session, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanMode {
    Local,
    Global,
}

/// How shifted blocks realize the window offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftMode {
    /// Roll the map by (-s,-s), partition uniformly, inverse-roll after.
    CyclicRoll,
    /// Offset the partition grid by s without rolling; edge windows have
    /// variable size and the scan runs on variable-length sequences.
    BoundaryShift,
}

#[derive(Debug, Clone, Copy)]
pub struct StageConfig {
    pub depth: usize,
    pub dim: usize,
    pub scan_mode: ScanMode,
    pub window: usize,
    pub shift: usize,
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub base_dim: usize,
    pub depths: [usize; 4],
    pub scan_modes: [ScanMode; 4],
    pub window: usize,
    pub shift: usize,
    pub num_classes: usize,
    pub d_state: usize,
    pub shift_mode: ShiftMode,
    /// in_proj expansion ratio (d_inner = expansion * dim).
    pub expansion: usize,
}

impl ModelConfig {
    pub fn toy(num_classes: usize) -> Self {
        Self {
            base_dim: 16,
            depths: [2, 2, 2, 2],
            scan_modes: [ScanMode::Local, ScanMode::Local, ScanMode::Global, ScanMode::Global],
            window: 14,
            shift: 7,
            num_classes,
            d_state: 8,
            shift_mode: ShiftMode::CyclicRoll,
            expansion: 2,
        }
    }

    /// Tiny everything, for end-to-end gradient checks.
    pub fn micro(num_classes: usize) -> Self {
        Self {
            base_dim: 4,
            depths: [2, 2, 2, 2],
            d_state: 2,
            ..Self::toy(num_classes)
        }
    }

    pub fn stage(&self, i: usize) -> StageConfig {
        // an all-local pipeline shrinks the deepest stage's window so it
        // still tiles the smallest maps
        let all_local = self.scan_modes.iter().all(|&m| m == ScanMode::Local);
        let window = if i == 3 && all_local {
            self.window.min(7)
        } else {
            self.window
        };
        StageConfig {
            depth: self.depths[i],
            dim: self.base_dim << i,
            scan_mode: self.scan_modes[i],
            window,
            shift: self.shift.min(window.saturating_sub(1)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shift == 0 || self.shift >= self.window {
            return Err(Error::InvalidArgument {
                op: "ModelConfig",
                msg: format!("shift {} must satisfy 0 < s < w = {}", self.shift, self.window),
            });
        }
        for (i, (&depth, &mode)) in self.depths.iter().zip(&self.scan_modes).enumerate() {
            if mode == ScanMode::Local && depth % 2 != 0 {
                return Err(Error::InvalidArgument {
                    op: "ModelConfig",
                    msg: format!("local stage {} must have even depth, got {}", i, depth),
                });
            }
            if depth == 0 {
                return Err(Error::InvalidArgument {
                    op: "ModelConfig",
                    msg: format!("stage {} has zero depth", i),
                });
            }
        }
        if self.base_dim == 0 || self.num_classes == 0 || self.d_state == 0 || self.expansion == 0 {
            return Err(Error::InvalidArgument {
                op: "ModelConfig",
                msg: "base_dim, num_classes, d_state, expansion must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Dense layer `[rows, in] -> [rows, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: PId,
    pub b: PId,
}

impl Linear {
    pub fn init(bank: &mut ParamBank, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let std = 1.0 / (fan_in as f64).sqrt();
        Self {
            w: bank.add(format!("{name}.w"), rng.normal_tensor(&[fan_in, fan_out], std)),
            b: bank.add(format!("{name}.b"), crate::tensor::Tensor::zeros(&[fan_out])),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (w, b) = (s.p(self.w), s.p(self.b));
        let y = s.tape.matmul(x, w)?;
        s.tape.add_bias_last(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: PId,
    pub beta: PId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn init(bank: &mut ParamBank, name: &str, dim: usize) -> Self {
        Self {
            gamma: bank.add(format!("{name}.gamma"), crate::tensor::Tensor::full(&[dim], 1.0)),
            beta: bank.add(format!("{name}.beta"), crate::tensor::Tensor::zeros(&[dim])),
            eps: 1e-5,
        }
    }

    pub fn forward_last(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (g, b) = (s.p(self.gamma), s.p(self.beta));
        s.tape.layer_norm_last(x, g, b, self.eps)
    }

    pub fn forward_chw(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (g, b) = (s.p(self.gamma), s.p(self.beta));
        s.tape.layer_norm_chw(x, g, b, self.eps)
    }
}

fn dims4(s: &Session, x: Var, op: &'static str) -> Result<[usize; 4]> {
    match s.tape.value(x).shape() {
        &[b, c, h, w] => Ok([b, c, h, w]),
        sh => Err(Error::InvalidArgument {
            op,
            msg: format!("expected rank-4 [B,C,H,W], got {:?}", sh),
        }),
    }
}

/// `[B,C,h,w] -> ([B*h*w, C], b, h, w)` token layout for dense layers.
fn to_tokens(s: &mut Session, x: Var) -> Result<(Var, usize, usize, usize, usize)> {
    let [b, c, h, w] = dims4(s, x, "to_tokens")?;
    let p = s.tape.permute(x, &[0, 2, 3, 1])?;
    let t = s.tape.reshape(p, &[b * h * w, c])?;
    Ok((t, b, h, w, c))
}

fn from_tokens(s: &mut Session, t: Var, b: usize, h: usize, w: usize, c: usize) -> Result<Var> {
    let r = s.tape.reshape(t, &[b, h, w, c])?;
    s.tape.permute(r, &[0, 3, 1, 2])
}

/// 4x4 non-overlapping patches, linear projection to C, layer norm.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub norm: LayerNorm,
}

impl PatchEmbed {
    pub fn init(bank: &mut ParamBank, name: &str, in_chans: usize, dim: usize, rng: &mut Rng) -> Self {
        Self {
            proj: Linear::init(bank, &format!("{name}.proj"), in_chans * 16, dim, rng),
            norm: LayerNorm::init(bank, &format!("{name}.norm"), dim),
        }
    }

    pub fn forward(&self, s: &mut Session, img: Var) -> Result<Var> {
        let [b, c, h, w] = dims4(s, img, "patch_embed")?;
        let (ph, pw) = ((4 - h % 4) % 4, (4 - w % 4) % 4);
        let img = if ph > 0 || pw > 0 {
            s.tape.pad_bottom_right(img, ph, pw)?
        } else {
            img
        };
        let (hh, ww) = ((h + ph) / 4, (w + pw) / 4);
        let r = s.tape.reshape(img, &[b, c, hh, 4, ww, 4])?;
        let p = s.tape.permute(r, &[0, 2, 4, 1, 3, 5])?;
        let flat = s.tape.reshape(p, &[b * hh * ww, c * 16])?;
        let proj = self.proj.forward(s, flat)?;
        let normed = self.norm.forward_last(s, proj)?;
        let dim = s.tape.value(normed).shape()[1];
        from_tokens(s, normed, b, hh, ww, dim)
    }
}

/// 2x2 neighborhoods concatenated to 4C, normalized, reduced to 2C.
#[derive(Debug, Clone)]
pub struct PatchMerging {
    pub norm: LayerNorm,
    pub reduce: Linear,
}

impl PatchMerging {
    pub fn init(bank: &mut ParamBank, name: &str, dim: usize, rng: &mut Rng) -> Self {
        Self {
            norm: LayerNorm::init(bank, &format!("{name}.norm"), 4 * dim),
            reduce: Linear::init(bank, &format!("{name}.reduce"), 4 * dim, 2 * dim, rng),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let [b, c, h, w] = dims4(s, x, "patch_merging")?;
        let (ph, pw) = (h % 2, w % 2);
        let x = if ph > 0 || pw > 0 {
            s.tape.pad_bottom_right(x, ph, pw)?
        } else {
            x
        };
        let (h2, w2) = ((h + ph) / 2, (w + pw) / 2);
        let r = s.tape.reshape(x, &[b, c, h2, 2, w2, 2])?;
        let p = s.tape.permute(r, &[0, 2, 4, 3, 5, 1])?;
        let flat = s.tape.reshape(p, &[b * h2 * w2, 4 * c])?;
        let n = self.norm.forward_last(s, flat)?;
        let red = self.reduce.forward(s, n)?;
        from_tokens(s, red, b, h2, w2, 2 * c)
    }
}

/// Four-directional selective scan over 2-D regions, one parameter set per
/// direction.
#[derive(Debug, Clone)]
pub struct Ss2d {
    pub dirs: [S6Params; 4],
}

impl Ss2d {
    pub fn init(bank: &mut ParamBank, name: &str, d_inner: usize, d_state: usize, rng: &mut Rng) -> Self {
        let cfg = S6Config::new(d_inner, d_state);
        let dirs = Direction::ALL
            .map(|d| S6Params::init(bank, &format!("{name}.{}", d.name()), cfg, rng));
        Self { dirs }
    }

    /// Serializes a region batch `[S,D,rh,rw]` in all four directions, runs
    /// S6 on each, inverse-permutes and sums.
    pub fn four_direction_s6(&self, s: &mut Session, region: Var) -> Result<Var> {
        let [sq, d, rh, rw] = dims4(s, region, "four_direction_s6")?;
        let l = rh * rw;
        let flat = s.tape.reshape(region, &[sq, d, l])?;
        let tokens = s.tape.permute(flat, &[0, 2, 1])?;
        let mut acc: Option<Var> = None;
        for (params, dir) in self.dirs.iter().zip(Direction::ALL) {
            let order = scan_order_cached(rh, rw, dir);
            let xg = s.tape.gather_mid(tokens, &order)?;
            let y = params.forward(s, xg, false)?;
            let back = s.tape.gather_mid(y, &scan::invert_perm(&order))?;
            acc = Some(match acc {
                None => back,
                Some(a) => s.tape.add(a, back)?,
            });
        }
        let summed = acc.expect("four directions");
        let sp = s.tape.permute(summed, &[0, 2, 1])?;
        s.tape.reshape(sp, &[sq, d, rh, rw])
    }

    /// Global four-directional scan of the whole map, no partitioning.
    pub fn forward_global(&self, s: &mut Session, x: Var) -> Result<Var> {
        self.four_direction_s6(s, x)
    }

    /// Windowed four-directional scan. `shifted` selects the even-block
    /// variant realized per `shift_mode`. The effective window is clamped to
    /// the map so small maps degrade to a single whole-map window.
    pub fn forward_local(
        &self,
        s: &mut Session,
        x: Var,
        window: usize,
        shifted: bool,
        shift: usize,
        shift_mode: ShiftMode,
    ) -> Result<Var> {
        let [b, d, h, w] = dims4(s, x, "ss2d_local")?;
        let win = window.min(h).min(w).max(1);
        let s_eff = if win > 1 { shift.min(win - 1) } else { 0 };
        if !shifted || s_eff == 0 {
            return self.windowed(s, x, b, d, h, w, win);
        }
        match shift_mode {
            ShiftMode::CyclicRoll => {
                let rolled = s.tape.roll2d(x, s_eff, false)?;
                let y = self.windowed(s, rolled, b, d, h, w, win)?;
                s.tape.roll2d(y, s_eff, true)
            }
            ShiftMode::BoundaryShift => {
                let mut acc: Option<Var> = None;
                for rect in scan::shift_partition_rects(h, w, win, s_eff) {
                    let xr = s.tape.slice_rect(x, rect)?;
                    let yr = self.four_direction_s6(s, xr)?;
                    let placed = s.tape.place_rect(yr, h, w, rect.i0, rect.j0)?;
                    acc = Some(match acc {
                        None => placed,
                        Some(a) => s.tape.add(a, placed)?,
                    });
                }
                Ok(acc.expect("at least one window"))
            }
        }
    }

    fn windowed(
        &self,
        s: &mut Session,
        x: Var,
        b: usize,
        d: usize,
        h: usize,
        w: usize,
        win: usize,
    ) -> Result<Var> {
        let (ph, pw) = ((win - h % win) % win, (win - w % win) % win);
        let x = if ph > 0 || pw > 0 {
            s.tape.pad_bottom_right(x, ph, pw)?
        } else {
            x
        };
        let (hp, wp) = (h + ph, w + pw);
        let (nh, nw) = (hp / win, wp / win);
        let r = s.tape.reshape(x, &[b, d, nh, win, nw, win])?;
        let p = s.tape.permute(r, &[0, 2, 4, 1, 3, 5])?;
        let windows = s.tape.reshape(p, &[b * nh * nw, d, win, win])?;
        let y = self.four_direction_s6(s, windows)?;
        let r = s.tape.reshape(y, &[b, nh, nw, d, win, win])?;
        let p = s.tape.permute(r, &[0, 3, 1, 4, 2, 5])?;
        let merged = s.tape.reshape(p, &[b, d, hp, wp])?;
        if ph > 0 || pw > 0 {
            s.tape.crop_bottom_right(merged, h, w)
        } else {
            Ok(merged)
        }
    }
}

fn scan_order_cached(h: usize, w: usize, dir: Direction) -> Vec<usize> {
    scan::scan_order(h, w, dir).perm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockMode {
    Windowed,
    ShiftedWindow,
    Global,
}

/// Residual mixer block wrapping normalization, expansion, depthwise local
/// mixing, the directional scan + S6 core, gating, and projection.
#[derive(Debug, Clone)]
pub struct VssBlock {
    pub norm1: LayerNorm,
    pub in_proj_a: Linear,
    pub in_proj_b: Linear,
    pub dw_kernel: PId,
    pub ss2d: Ss2d,
    pub norm2: LayerNorm,
    pub out_proj: Linear,
    pub window: usize,
    pub shift: usize,
    pub shift_mode: ShiftMode,
}

impl VssBlock {
    pub fn init(
        bank: &mut ParamBank,
        name: &str,
        dim: usize,
        window: usize,
        shift: usize,
        cfg: &ModelConfig,
        rng: &mut Rng,
    ) -> Self {
        let d_inner = cfg.expansion * dim;
        // near-identity local mixing at init: delta kernel plus noise
        let mut kdata = vec![0.0; d_inner * 9];
        for c in 0..d_inner {
            for t in 0..9 {
                kdata[c * 9 + t] = if t == 4 { 1.0 } else { 0.0 } + 0.02 * rng.normal();
            }
        }
        Self {
            norm1: LayerNorm::init(bank, &format!("{name}.norm1"), dim),
            in_proj_a: Linear::init(bank, &format!("{name}.in_a"), dim, d_inner, rng),
            in_proj_b: Linear::init(bank, &format!("{name}.in_b"), dim, d_inner, rng),
            dw_kernel: bank.add(
                format!("{name}.dwconv"),
                crate::tensor::Tensor::new(vec![d_inner, 3, 3], kdata).expect("sized"),
            ),
            ss2d: Ss2d::init(bank, &format!("{name}.ss2d"), d_inner, cfg.d_state, rng),
            norm2: LayerNorm::init(bank, &format!("{name}.norm2"), d_inner),
            out_proj: Linear::init(bank, &format!("{name}.out"), d_inner, dim, rng),
            window,
            shift,
            shift_mode: cfg.shift_mode,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var, mode: BlockMode) -> Result<Var> {
        let n1 = self.norm1.forward_chw(s, x)?;
        let (tok, b, h, w, _) = to_tokens(s, n1)?;
        let a = self.in_proj_a.forward(s, tok)?;
        let d_inner = s.tape.value(a).shape()[1];
        let a = from_tokens(s, a, b, h, w, d_inner)?;
        let k = s.p(self.dw_kernel);
        let a = s.tape.dwconv3x3(a, k)?;
        let a = s.tape.silu(a);
        let y = match mode {
            BlockMode::Global => self.ss2d.forward_global(s, a)?,
            BlockMode::Windowed => {
                self.ss2d
                    .forward_local(s, a, self.window, false, self.shift, self.shift_mode)?
            }
            BlockMode::ShiftedWindow => {
                self.ss2d
                    .forward_local(s, a, self.window, true, self.shift, self.shift_mode)?
            }
        };
        let y = self.norm2.forward_chw(s, y)?;
        let gate = self.in_proj_b.forward(s, tok)?;
        let gate = s.tape.silu(gate);
        let gate = from_tokens(s, gate, b, h, w, d_inner)?;
        let z = s.tape.mul(y, gate)?;
        let (ztok, zb, zh, zw, _) = to_tokens(s, z)?;
        let out = self.out_proj.forward(s, ztok)?;
        let dim = s.tape.value(out).shape()[1];
        let out = from_tokens(s, out, zb, zh, zw, dim)?;
        s.tape.add(x, out)
    }
}

struct Stage {
    blocks: Vec<(VssBlock, BlockMode)>,
    merge: Option<PatchMerging>,
}

/// Patch embed + four stages; local stages alternate windowed and shifted
/// blocks, global stages scan the whole map.
pub struct Encoder {
    patch_embed: PatchEmbed,
    stages: Vec<Stage>,
    pub cfg: ModelConfig,
}

impl Encoder {
    pub fn init(bank: &mut ParamBank, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let patch_embed = PatchEmbed::init(bank, "enc.embed", 3, cfg.base_dim, rng);
        let mut stages = Vec::with_capacity(4);
        for si in 0..4 {
            let sc = cfg.stage(si);
            let mut blocks = Vec::with_capacity(sc.depth);
            for bi in 0..sc.depth {
                let mode = match sc.scan_mode {
                    ScanMode::Global => BlockMode::Global,
                    // odd-numbered blocks (1st, 3rd, ...) window, the rest shift
                    ScanMode::Local if bi % 2 == 0 => BlockMode::Windowed,
                    ScanMode::Local => BlockMode::ShiftedWindow,
                };
                let block = VssBlock::init(
                    bank,
                    &format!("enc.stage{si}.block{bi}"),
                    sc.dim,
                    sc.window,
                    sc.shift,
                    cfg,
                    rng,
                );
                blocks.push((block, mode));
            }
            let merge = if si < 3 {
                Some(PatchMerging::init(bank, &format!("enc.stage{si}.merge"), sc.dim, rng))
            } else {
                None
            };
            stages.push(Stage { blocks, merge });
        }
        Ok(Self {
            patch_embed,
            stages,
            cfg: cfg.clone(),
        })
    }

    /// Returns the four per-stage feature maps (before each downsampling).
    pub fn forward(&self, s: &mut Session, img: Var) -> Result<Vec<Var>> {
        let mut x = self.patch_embed.forward(s, img)?;
        let mut maps = Vec::with_capacity(4);
        for stage in &self.stages {
            for (block, mode) in &stage.blocks {
                x = block.forward(s, x, *mode)?;
            }
            maps.push(x);
            if let Some(m) = &stage.merge {
                x = m.forward(s, x)?;
            }
        }
        Ok(maps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn session_with(bank: &ParamBank) -> Session {
        Session::new(bank)
    }

    #[test]
    fn patch_embed_shapes_and_zero_input() {
        let mut bank = ParamBank::new();
        let mut rng = Rng::new(1);
        let pe = PatchEmbed::init(&mut bank, "pe", 3, 8, &mut rng);
        let mut s = session_with(&bank);
        let img = s.tape.leaf(Tensor::zeros(&[2, 3, 16, 16]));
        let y = pe.forward(&mut s, img).unwrap();
        assert_eq!(s.tape.value(y).shape(), &[2, 8, 4, 4]);
        // zero image, zero bias: projection output is zero pre-norm, and the
        // norm of a constant row is beta = 0
        assert!(s.tape.value(y).data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn patch_merging_shape() {
        let mut bank = ParamBank::new();
        let mut rng = Rng::new(2);
        let pm = PatchMerging::init(&mut bank, "pm", 8, &mut rng);
        let mut s = session_with(&bank);
        let x = s.tape.leaf(rng.normal_tensor(&[1, 8, 56, 56], 1.0));
        let y = pm.forward(&mut s, x).unwrap();
        assert_eq!(s.tape.value(y).shape(), &[1, 16, 28, 28]);
    }

    #[test]
    fn shift_equivalence_is_bit_exact() {
        let mut bank = ParamBank::new();
        let mut rng = Rng::new(3);
        let ss = Ss2d::init(&mut bank, "ss", 4, 3, &mut rng);
        for trial in 0..5 {
            let mut r = Rng::new(100 + trial);
            let x0 = r.normal_tensor(&[2, 4, 9, 9], 1.0);
            let mut s = session_with(&bank);
            let x = s.tape.leaf(x0.clone());
            let sw = ss
                .forward_local(&mut s, x, 4, true, 2, ShiftMode::CyclicRoll)
                .unwrap();
            let sw_val = s.tape.value(sw).clone();

            let mut s2 = session_with(&bank);
            let x2 = s2.tape.leaf(x0);
            let rolled = s2.tape.roll2d(x2, 2, false).unwrap();
            let w = ss
                .forward_local(&mut s2, rolled, 4, false, 2, ShiftMode::CyclicRoll)
                .unwrap();
            let unrolled = s2.tape.roll2d(w, 2, true).unwrap();
            assert_eq!(&sw_val, s2.tape.value(unrolled), "trial {}", trial);
        }
    }

    #[test]
    fn single_window_collapses_to_global() {
        let mut bank = ParamBank::new();
        let mut rng = Rng::new(4);
        let ss = Ss2d::init(&mut bank, "ss", 4, 3, &mut rng);
        let x0 = rng.normal_tensor(&[1, 4, 6, 6], 1.0);
        let mut s = session_with(&bank);
        let x = s.tape.leaf(x0.clone());
        let local = ss
            .forward_local(&mut s, x, 6, false, 3, ShiftMode::CyclicRoll)
            .unwrap();
        let local_val = s.tape.value(local).clone();
        let mut s2 = session_with(&bank);
        let x2 = s2.tape.leaf(x0);
        let global = ss.forward_global(&mut s2, x2).unwrap();
        assert_eq!(&local_val, s2.tape.value(global));
    }

    #[test]
    fn oversized_window_collapses_to_global_too() {
        // effective window clamps to the map, so window 14 on a 5x5 map is a
        // single whole-map window
        let mut bank = ParamBank::new();
        let mut rng = Rng::new(5);
        let ss = Ss2d::init(&mut bank, "ss", 2, 2, &mut rng);
        let x0 = rng.normal_tensor(&[1, 2, 5, 5], 1.0);
        let mut s = session_with(&bank);
        let x = s.tape.leaf(x0.clone());
        let local = ss
            .forward_local(&mut s, x, 14, false, 7, ShiftMode::CyclicRoll)
            .unwrap();
        let local_val = s.tape.value(local).clone();
        let mut s2 = session_with(&bank);
        let x2 = s2.tape.leaf(x0);
        let global = ss.forward_global(&mut s2, x2).unwrap();
        assert_eq!(&local_val, s2.tape.value(global));
    }

    #[test]
    fn boundary_shift_mode_preserves_shape() {
        let mut bank = ParamBank::new();
        let mut rng = Rng::new(6);
        let ss = Ss2d::init(&mut bank, "ss", 3, 2, &mut rng);
        let mut s = session_with(&bank);
        let x = s.tape.leaf(rng.normal_tensor(&[2, 3, 10, 7], 1.0));
        let y = ss
            .forward_local(&mut s, x, 4, true, 2, ShiftMode::BoundaryShift)
            .unwrap();
        assert_eq!(s.tape.value(y).shape(), &[2, 3, 10, 7]);
        assert!(s.tape.value(y).is_finite());
    }

    #[test]
    fn zero_out_proj_makes_block_identity() {
        let cfg = ModelConfig::micro(3);
        let mut bank = ParamBank::new();
        let mut rng = Rng::new(7);
        let block = VssBlock::init(&mut bank, "blk", 4, cfg.window, cfg.shift, &cfg, &mut rng);
        bank.set_value(block.out_proj.w, Tensor::zeros(&[8, 4]));
        bank.set_value(block.out_proj.b, Tensor::zeros(&[4]));
        let x0 = rng.normal_tensor(&[1, 4, 8, 8], 1.0);
        for mode in [BlockMode::Windowed, BlockMode::ShiftedWindow, BlockMode::Global] {
            let mut s = session_with(&bank);
            let x = s.tape.leaf(x0.clone());
            let y = block.forward(&mut s, x, mode).unwrap();
            assert_eq!(s.tape.value(y), &x0);
        }
    }

    #[test]
    fn block_preserves_shape_all_modes() {
        let cfg = ModelConfig::micro(3);
        let mut bank = ParamBank::new();
        let mut rng = Rng::new(8);
        let block = VssBlock::init(&mut bank, "blk", 4, cfg.window, cfg.shift, &cfg, &mut rng);
        for mode in [BlockMode::Windowed, BlockMode::ShiftedWindow, BlockMode::Global] {
            let mut s = session_with(&bank);
            let x = s.tape.leaf(rng.normal_tensor(&[2, 4, 7, 9], 1.0));
            let y = block.forward(&mut s, x, mode).unwrap();
            assert_eq!(s.tape.value(y).shape(), &[2, 4, 7, 9]);
        }
    }

    #[test]
    fn encoder_stage_shape_ladder() {
        let cfg = ModelConfig::toy(3);
        let mut bank = ParamBank::new();
        let mut rng = Rng::new(9);
        let enc = Encoder::init(&mut bank, &cfg, &mut rng).unwrap();
        let mut s = session_with(&bank);
        let img = s.tape.leaf(rng.normal_tensor(&[1, 3, 64, 64], 0.5));
        let maps = enc.forward(&mut s, img).unwrap();
        let shapes: Vec<Vec<usize>> =
            maps.iter().map(|&m| s.tape.value(m).shape().to_vec()).collect();
        assert_eq!(
            shapes,
            vec![
                vec![1, 16, 16, 16],
                vec![1, 32, 8, 8],
                vec![1, 64, 4, 4],
                vec![1, 128, 2, 2]
            ]
        );
    }

    #[test]
    fn encoder_rejects_odd_local_depth() {
        let mut cfg = ModelConfig::toy(3);
        cfg.depths[0] = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn encoder_deterministic_across_runs() {
        let cfg = ModelConfig::micro(3);
        let mut out = Vec::new();
        for _ in 0..2 {
            let mut bank = ParamBank::new();
            let mut rng = Rng::new(10);
            let enc = Encoder::init(&mut bank, &cfg, &mut rng).unwrap();
            let mut s = session_with(&bank);
            let img = s.tape.leaf(Rng::new(11).normal_tensor(&[1, 3, 32, 32], 0.5));
            let maps = enc.forward(&mut s, img).unwrap();
            out.push(s.tape.value(maps[3]).clone());
        }
        assert_eq!(out[0], out[1]);
    }
}
