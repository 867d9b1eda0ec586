//! Scanning-throughput benchmark: global four-directional S6 over the whole
//! map, sequentially, against windowed four-directional S6 with a parallel
//! map over windows. Reports tokens/second and the windowed/global speedup.

use std::time::Instant;

use rayon::prelude::*;

use crate::rng::Rng;
use crate::scan::{self, Direction};
use crate::Result;

/// Minimal float abstraction so the same kernels serve the 64-bit default
/// and the reduced-precision mode.
pub trait Real: Copy + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn zero() -> Self;
    fn exp(self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn add(self, o: Self) -> Self;
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self { v }
    fn zero() -> Self { 0.0 }
    fn exp(self) -> Self { f64::exp(self) }
    fn mul(self, o: Self) -> Self { self * o }
    fn add(self, o: Self) -> Self { self + o }
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self { v as f32 }
    fn zero() -> Self { 0.0 }
    fn exp(self) -> Self { f32::exp(self) }
    fn mul(self, o: Self) -> Self { self * o }
    fn add(self, o: Self) -> Self { self + o }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F64,
    F32,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Feature-map height and width.
    pub h: usize,
    pub w: usize,
    pub window: usize,
    pub d_inner: usize,
    pub d_state: usize,
    pub trials: usize,
    pub warmup: usize,
    pub precision: Precision,
}

impl BenchConfig {
    pub fn stage1_like(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            window: 14,
            d_inner: 16,
            d_state: 8,
            trials: 5,
            warmup: 2,
            precision: Precision::F64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub h: usize,
    pub w: usize,
    pub window: usize,
    /// Tokens scanned per direction by each path (windowed includes padding).
    pub tokens_global: usize,
    pub tokens_windowed: usize,
    pub global_median_s: f64,
    pub global_iqr_s: f64,
    pub windowed_median_s: f64,
    pub windowed_iqr_s: f64,
    pub global_tokens_per_s: f64,
    pub windowed_tokens_per_s: f64,
    /// windowed throughput / global throughput.
    pub speedup: f64,
}

pub fn csv_header() -> &'static str {
    "h,w,window,tokens_global,tokens_windowed,global_s,global_iqr_s,windowed_s,windowed_iqr_s,global_tok_per_s,windowed_tok_per_s,speedup"
}

impl BenchResult {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.0},{:.0},{:.3}",
            self.h,
            self.w,
            self.window,
            self.tokens_global,
            self.tokens_windowed,
            self.global_median_s,
            self.global_iqr_s,
            self.windowed_median_s,
            self.windowed_iqr_s,
            self.global_tokens_per_s,
            self.windowed_tokens_per_s,
            self.speedup
        )
    }
}

/// Fixed-seed S6 inputs laid out per map position (row-major), shared by
/// both paths so they scan identical data.
struct MapInputs<T> {
    /// `[H*W, D]`
    x: Vec<T>,
    /// `[H*W, D]`, strictly positive
    delta: Vec<T>,
    /// `[H*W, N]`
    bseq: Vec<T>,
    /// `[H*W, N]`
    cseq: Vec<T>,
    /// `[D, N]`, strictly negative
    a: Vec<T>,
    /// `[D]`
    d_skip: Vec<T>,
}

fn make_inputs<T: Real>(hw: usize, d: usize, n: usize, rng: &mut Rng) -> MapInputs<T> {
    let g = |rng: &mut Rng| T::from_f64(rng.normal());
    MapInputs {
        x: (0..hw * d).map(|_| g(rng)).collect(),
        delta: (0..hw * d)
            .map(|_| T::from_f64(0.01 + 0.05 * rng.uniform()))
            .collect(),
        bseq: (0..hw * n).map(|_| g(rng)).collect(),
        cseq: (0..hw * n).map(|_| g(rng)).collect(),
        a: (0..d * n).map(|_| T::from_f64(-0.1 - rng.uniform())).collect(),
        d_skip: (0..d).map(|_| g(rng)).collect(),
    }
}

/// Sequential selective-scan over one serialized sequence. `idx` maps scan
/// position to map position; `usize::MAX` marks padding (zero token).
fn scan_sequence<T: Real>(inp: &MapInputs<T>, idx: &[usize], d: usize, n: usize, out: &mut [T]) {
    let mut h = vec![T::zero(); d * n];
    for (t, &pos) in idx.iter().enumerate() {
        if pos == usize::MAX {
            // padded token: x = 0, delta arbitrary-positive; state decays
            for di in 0..d {
                for ni in 0..n {
                    let abar = inp.a[di * n + ni].mul(T::from_f64(0.02)).exp();
                    h[di * n + ni] = h[di * n + ni].mul(abar);
                }
                out[t * d + di] = T::zero();
            }
            continue;
        }
        for di in 0..d {
            let (x, dt) = (inp.x[pos * d + di], inp.delta[pos * d + di]);
            let mut y = T::zero();
            for ni in 0..n {
                let a = inp.a[di * n + ni];
                let abar = a.mul(dt).exp();
                let bbar = dt.mul(inp.bseq[pos * n + ni]);
                let hv = h[di * n + ni].mul(abar).add(bbar.mul(x));
                h[di * n + ni] = hv;
                y = y.add(inp.cseq[pos * n + ni].mul(hv));
            }
            out[t * d + di] = y.add(inp.d_skip[di].mul(x));
        }
    }
}

/// Token index orders for the four directions over an index grid. `grid`
/// holds map positions row-major (or `usize::MAX` padding).
fn direction_orders(grid: &[usize], gh: usize, gw: usize) -> [Vec<usize>; 4] {
    Direction::ALL.map(|dir| {
        scan::scan_order(gh, gw, dir)
            .perm
            .iter()
            .map(|&p| grid[p])
            .collect()
    })
}

/// Map-position grids for each window of the padded partition.
fn window_grids(h: usize, w: usize, win: usize) -> Vec<Vec<usize>> {
    let (hp, wp) = (h.div_ceil(win) * win, w.div_ceil(win) * win);
    let (nh, nw) = (hp / win, wp / win);
    let mut grids = Vec::with_capacity(nh * nw);
    for wi in 0..nh {
        for wj in 0..nw {
            let mut g = Vec::with_capacity(win * win);
            for i in 0..win {
                for j in 0..win {
                    let (mi, mj) = (wi * win + i, wj * win + j);
                    g.push(if mi < h && mj < w { mi * w + mj } else { usize::MAX });
                }
            }
            grids.push(g);
        }
    }
    grids
}

fn median_iqr(times: &mut [f64]) -> (f64, f64) {
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = times.len();
    let med = times[n / 2];
    let iqr = times[(3 * n) / 4] - times[n / 4];
    (med, iqr)
}

fn run_typed<T: Real>(cfg: &BenchConfig, rng: &mut Rng) -> BenchResult {
    let (h, w, d, n) = (cfg.h, cfg.w, cfg.d_inner, cfg.d_state);
    let hw = h * w;
    let inp = make_inputs::<T>(hw, d, n, rng);

    // full-map grid: identity positions
    let full_grid: Vec<usize> = (0..hw).collect();
    let global_orders = direction_orders(&full_grid, h, w);

    let win = cfg.window.min(h).min(w).max(1);
    let grids = window_grids(h, w, win);
    let window_orders: Vec<[Vec<usize>; 4]> =
        grids.iter().map(|g| direction_orders(g, win, win)).collect();
    let tokens_windowed = grids.len() * win * win;

    // one flattened job list: every (window, direction) pair is a sequence
    let jobs: Vec<&Vec<usize>> = window_orders
        .iter()
        .flat_map(|dirs| dirs.iter())
        .collect();

    let time_global = || {
        let mut out = vec![T::zero(); hw * d];
        let start = Instant::now();
        for order in &global_orders {
            scan_sequence(&inp, order, d, n, &mut out);
        }
        start.elapsed().as_secs_f64()
    };
    let time_windowed = || {
        let start = Instant::now();
        let _outs: Vec<Vec<T>> = jobs
            .par_iter()
            .map(|order| {
                let mut out = vec![T::zero(); order.len() * d];
                scan_sequence(&inp, order, d, n, &mut out);
                out
            })
            .collect();
        start.elapsed().as_secs_f64()
    };

    for _ in 0..cfg.warmup {
        time_global();
        time_windowed();
    }
    let mut gt: Vec<f64> = (0..cfg.trials).map(|_| time_global()).collect();
    let mut wt: Vec<f64> = (0..cfg.trials).map(|_| time_windowed()).collect();
    let (gm, giqr) = median_iqr(&mut gt);
    let (wm, wiqr) = median_iqr(&mut wt);

    let global_tps = (4 * hw) as f64 / gm;
    let windowed_tps = (4 * tokens_windowed) as f64 / wm;
    BenchResult {
        h,
        w,
        window: win,
        tokens_global: hw,
        tokens_windowed,
        global_median_s: gm,
        global_iqr_s: giqr,
        windowed_median_s: wm,
        windowed_iqr_s: wiqr,
        global_tokens_per_s: global_tps,
        windowed_tokens_per_s: windowed_tps,
        speedup: windowed_tps / global_tps,
    }
}

pub fn run_bench(cfg: &BenchConfig, rng: &mut Rng) -> Result<BenchResult> {
    Ok(match cfg.precision {
        Precision::F64 => run_typed::<f64>(cfg, rng),
        Precision::F32 => run_typed::<f32>(cfg, rng),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_grid_covers_map_with_padding() {
        let grids = window_grids(5, 5, 4);
        assert_eq!(grids.len(), 4);
        let mut seen = vec![false; 25];
        let mut pad = 0;
        for g in &grids {
            assert_eq!(g.len(), 16);
            for &p in g {
                if p == usize::MAX {
                    pad += 1;
                } else {
                    assert!(!seen[p]);
                    seen[p] = true;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(pad, 64 - 25);
    }

    #[test]
    fn bench_kernel_matches_reference_s6() {
        // the benchmark's stripped-down kernel must agree with the real one
        let (l, d, n) = (9, 3, 2);
        let mut rng = Rng::new(33);
        let inp = make_inputs::<f64>(l, d, n, &mut rng);
        let idx: Vec<usize> = (0..l).collect();
        let mut out = vec![0.0; l * d];
        scan_sequence(&inp, &idx, d, n, &mut out);

        let t = |v: &[f64], sh: &[usize]| {
            crate::tensor::Tensor::new(sh.to_vec(), v.to_vec()).unwrap()
        };
        let reference = crate::s6::s6_sequential(&crate::s6::S6Inputs {
            x: t(&inp.x, &[l, d]),
            delta: t(&inp.delta, &[l, d]),
            bseq: t(&inp.bseq, &[l, n]),
            cseq: t(&inp.cseq, &[l, n]),
            a: t(&inp.a, &[d, n]),
            d_skip: t(&inp.d_skip, &[d]),
        })
        .unwrap();
        for (a, b) in out.iter().zip(reference.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn small_bench_runs_and_reports_tokens() {
        let mut cfg = BenchConfig::stage1_like(16, 16);
        cfg.trials = 3;
        cfg.warmup = 1;
        cfg.d_inner = 4;
        cfg.d_state = 2;
        let r = run_bench(&cfg, &mut Rng::new(1)).unwrap();
        assert_eq!(r.tokens_global, 256);
        // 16x16 with window 14 pads to 28x28
        assert_eq!(r.tokens_windowed, 4 * 14 * 14);
        assert!(r.global_tokens_per_s > 0.0 && r.windowed_tokens_per_s > 0.0);
    }

    #[test]
    fn doubling_resolution_quadruples_tokens() {
        let mut a = BenchConfig::stage1_like(28, 28);
        a.trials = 1;
        a.warmup = 0;
        a.d_inner = 2;
        a.d_state = 2;
        let mut b = a.clone();
        b.h = 56;
        b.w = 56;
        let ra = run_bench(&a, &mut Rng::new(2)).unwrap();
        let rb = run_bench(&b, &mut Rng::new(2)).unwrap();
        assert_eq!(rb.tokens_global, 4 * ra.tokens_global);
        assert_eq!(rb.tokens_windowed, 4 * ra.tokens_windowed);
    }

    #[test]
    fn f32_mode_runs() {
        let mut cfg = BenchConfig::stage1_like(16, 16);
        cfg.trials = 1;
        cfg.warmup = 0;
        cfg.d_inner = 2;
        cfg.d_state = 2;
        cfg.precision = Precision::F32;
        let r = run_bench(&cfg, &mut Rng::new(3)).unwrap();
        assert!(r.speedup.is_finite());
    }
}
