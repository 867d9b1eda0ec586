//! Command-line front end: self-tests, gradient checks, scan-order dumps,
//! throughput benchmarks, and the toy training / evaluation / ablation
//! harness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use winmamba::bench::{self, Precision};
use winmamba::blocks::{ModelConfig, ShiftMode, Ss2d};
use winmamba::config::{echo_config, parse_config, RunConfig};
use winmamba::data;
use winmamba::decoder::SegModel;
use winmamba::gradcheck::{grad_check, grad_check_sampled, scalarize, DEFAULT_STEP};
use winmamba::io::Dtype;
use winmamba::metrics::ConfusionMatrix;
use winmamba::rng::Rng;
use winmamba::s6::{s6_op, s6_parallel_scan, s6_sequential, S6Inputs};
use winmamba::scan::{self, Direction};
use winmamba::tape::{ParamBank, Session};
use winmamba::tensor::Tensor;
use winmamba::train::{argmax_predictions, evaluate, train_loop, ablation_run};
use winmamba::{Error, Result};

#[derive(Parser)]
#[command(name = "winmamba", about = "Windowed and global four-directional selective-scan segmentation engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key = value config file; unknown keys are fatal.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Prec::F64)]
    precision: Prec,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Prec {
    F64,
    F32,
}

#[derive(Subcommand)]
enum Command {
    /// Run the invariant property suites; nonzero exit on any failure.
    Selftest {
        /// Corrupt one scan index to demonstrate the bijectivity check fires.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Finite-difference gradient verification.
    Gradcheck {
        /// op | block | model | all
        #[arg(long, default_value = "all")]
        scope: String,
    },
    /// Dump per-window per-direction scan orders as CSV.
    ScanDump {
        #[arg(long, default_value_t = 28)]
        height: usize,
        #[arg(long, default_value_t = 28)]
        width: usize,
        #[arg(long, default_value_t = 14)]
        window: usize,
        #[arg(long, default_value_t = 7)]
        shift: usize,
        /// Use the shifted (rolled) partition.
        #[arg(long)]
        shifted: bool,
    },
    /// Windowed-parallel vs global-sequential scanning throughput.
    Bench,
    /// Train the toy segmentation model.
    Train,
    /// Evaluate a saved checkpoint.
    Eval,
    /// Stage-mode and window-geometry ablation table.
    Ablate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = winmamba::with_threads(cli.threads, || run(&cli));
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("{}: {}", path.display(), e))
            })?;
            parse_config(&text, cli.seed)
        }
        None => Ok(RunConfig::default_with_seed(cli.seed)),
    }
}

fn write_out(dir: Option<&PathBuf>, name: &str, contents: &str) -> Result<()> {
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
        std::fs::write(d.join(name), contents)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Selftest { inject_fault } => cmd_selftest(cli.seed, *inject_fault),
        Command::Gradcheck { scope } => cmd_gradcheck(scope, cli.seed),
        Command::ScanDump { height, width, window, shift, shifted } => {
            cmd_scan_dump(cli, *height, *width, *window, *shift, *shifted)
        }
        Command::Bench => cmd_bench(cli),
        Command::Train => cmd_train(cli),
        Command::Eval => cmd_eval(cli),
        Command::Ablate => cmd_ablate(cli),
    }
}

// ---- selftest ----

fn report(name: &str, seed: u64, r: std::result::Result<(), String>, failures: &mut usize) {
    match r {
        Ok(()) => println!("PASS {name}"),
        Err(msg) => {
            println!("FAIL {name} (seed {seed}): {msg}");
            *failures += 1;
        }
    }
}

fn check_bijection(perm: &[usize]) -> std::result::Result<(), String> {
    let mut seen = vec![false; perm.len()];
    for (pos, &p) in perm.iter().enumerate() {
        if p >= perm.len() || seen[p] {
            return Err(format!("scan index {} at position {} breaks bijectivity", p, pos));
        }
        seen[p] = true;
    }
    Ok(())
}

fn cmd_selftest(seed: u64, inject_fault: bool) -> Result<ExitCode> {
    let mut failures = 0usize;

    // scan-order bijectivity (optionally with an injected fault)
    let biject = (|| {
        for (h, w) in [(1, 1), (3, 5), (7, 7), (14, 14)] {
            for dir in Direction::ALL {
                let mut perm = scan::scan_order(h, w, dir).perm;
                if inject_fault && h == 7 && dir == Direction::LR {
                    perm[0] = perm[1]; // the injected fault: duplicate index
                }
                check_bijection(&perm).map_err(|m| format!("{}x{} {}: {}", h, w, dir.name(), m))?;
            }
        }
        Ok(())
    })();
    report("scan-order-bijectivity", seed, biject, &mut failures);

    // partition/shift/serialize roundtrips over fuzzed shapes
    let roundtrip = (|| {
        let mut rng = Rng::new(seed);
        for trial in 0..100 {
            let h = 1 + rng.below(24);
            let w = 1 + rng.below(24);
            let win = 1 + rng.below(12);
            let f = rng.normal_tensor(&[2, 3, h, w], 1.0);
            let (padded, grid) = scan::pad_to_multiple(&f, win).map_err(|e| e.to_string())?;
            let parts = scan::window_partition(&padded, &grid).map_err(|e| e.to_string())?;
            let merged = scan::window_merge(&parts, &grid).map_err(|e| e.to_string())?;
            if merged != padded {
                return Err(format!("partition/merge roundtrip failed at trial {trial} ({h}x{w} win {win})"));
            }
            let s = rng.below(h.min(w));
            let shifted = scan::cyclic_shift(&f, s, false).map_err(|e| e.to_string())?;
            let back = scan::cyclic_shift(&shifted, s, true).map_err(|e| e.to_string())?;
            if back != f {
                return Err(format!("cyclic shift roundtrip failed at trial {trial}"));
            }
        }
        Ok(())
    })();
    report("scan-roundtrips", seed, roundtrip, &mut failures);

    // shifted-window path == inverse_roll(windowed(roll))
    let shift_eq = (|| {
        let mut bank = ParamBank::new();
        let mut rng = Rng::new(seed ^ 1);
        let ss = Ss2d::init(&mut bank, "ss", 3, 2, &mut rng);
        for trial in 0..20 {
            let x0 = rng.normal_tensor(&[1, 3, 9, 9], 1.0);
            let mut s1 = Session::new(&bank);
            let x = s1.tape.leaf(x0.clone());
            let sw = ss
                .forward_local(&mut s1, x, 4, true, 2, ShiftMode::CyclicRoll)
                .map_err(|e| e.to_string())?;
            let mut s2 = Session::new(&bank);
            let x2 = s2.tape.leaf(x0);
            let r = s2.tape.roll2d(x2, 2, false).map_err(|e| e.to_string())?;
            let wv = ss
                .forward_local(&mut s2, r, 4, false, 2, ShiftMode::CyclicRoll)
                .map_err(|e| e.to_string())?;
            let u = s2.tape.roll2d(wv, 2, true).map_err(|e| e.to_string())?;
            if s1.tape.value(sw) != s2.tape.value(u) {
                return Err(format!("shift equivalence broke at trial {trial}"));
            }
        }
        Ok(())
    })();
    report("shift-equivalence", seed, shift_eq, &mut failures);

    // parallel scan vs sequential recurrence
    let par_seq = (|| {
        let mut rng = Rng::new(seed ^ 2);
        for trial in 0..50 {
            let l = 1 + rng.below(257);
            let inp = random_s6_inputs(l, 3, 2, &mut rng);
            let a = s6_sequential(&inp).map_err(|e| e.to_string())?;
            let b = s6_parallel_scan(&inp).map_err(|e| e.to_string())?;
            let max = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            if max > 1e-10 {
                return Err(format!("trial {trial} (L={l}): parallel-sequential gap {max:.3e}"));
            }
        }
        Ok(())
    })();
    report("parallel-equals-sequential", seed, par_seq, &mut failures);

    // linearity in x with frozen (delta, B, C, A, D)
    let superpos = (|| {
        let mut rng = Rng::new(seed ^ 3);
        for trial in 0..20 {
            let l = 2 + rng.below(60);
            let base = random_s6_inputs(l, 3, 2, &mut rng);
            let x2 = rng.normal_tensor(&[l, 3], 1.0);
            let with_x = |x: Tensor| S6Inputs { x, ..base.clone() };
            let y1 = s6_sequential(&base).map_err(|e| e.to_string())?;
            let y2 = s6_sequential(&with_x(x2.clone())).map_err(|e| e.to_string())?;
            let xs = winmamba::tensor::add(&base.x, &x2).map_err(|e| e.to_string())?;
            let ys = s6_sequential(&with_x(xs)).map_err(|e| e.to_string())?;
            let sum = winmamba::tensor::add(&y1, &y2).map_err(|e| e.to_string())?;
            let max = ys
                .data()
                .iter()
                .zip(sum.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            if max > 1e-10 {
                return Err(format!("trial {trial}: superposition gap {max:.3e}"));
            }
        }
        Ok(())
    })();
    report("superposition", seed, superpos, &mut failures);

    // confusion-matrix identities
    let miou = (|| {
        let mut cm = ConfusionMatrix::new(3);
        cm.update(&[0, 1, 2], &[0, 1, 2]).map_err(|e| e.to_string())?;
        if cm.miou() != 1.0 {
            return Err("perfect prediction not 1.0".into());
        }
        let mut a = ConfusionMatrix::new(2);
        a.update(&[0, 0, 1, 1], &[0, 1, 1, 1]).map_err(|e| e.to_string())?;
        let mut b = ConfusionMatrix::new(2);
        // same data with class ids swapped in both truth and prediction
        b.update(&[1, 1, 0, 0], &[1, 0, 0, 0]).map_err(|e| e.to_string())?;
        if (a.miou() - b.miou()).abs() > 1e-15 {
            return Err("class-permutation invariance broke".into());
        }
        Ok(())
    })();
    report("miou-identities", seed, miou, &mut failures);

    if failures == 0 {
        println!("selftest: all properties passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("selftest: {failures} propert{} failed", if failures == 1 { "y" } else { "ies" });
        Ok(ExitCode::FAILURE)
    }
}

fn random_s6_inputs(l: usize, d: usize, n: usize, rng: &mut Rng) -> S6Inputs {
    S6Inputs {
        x: rng.normal_tensor(&[l, d], 1.0),
        delta: rng.uniform_tensor(&[l, d], 0.001, 0.1),
        bseq: rng.normal_tensor(&[l, n], 1.0),
        cseq: rng.normal_tensor(&[l, n], 1.0),
        a: rng.uniform_tensor(&[d, n], -2.0, -0.05),
        d_skip: rng.normal_tensor(&[d], 1.0),
    }
}

// ---- gradcheck ----

fn cmd_gradcheck(scope: &str, seed: u64) -> Result<ExitCode> {
    let tol = 1e-4;
    let mut rows: Vec<(String, f64)> = Vec::new();
    let mut rng = Rng::new(seed);

    if scope == "op" || scope == "all" {
        let x = rng.normal_tensor(&[3, 4], 1.0);
        let y = rng.normal_tensor(&[4, 2], 1.0);
        rows.push((
            "matmul".into(),
            grad_check(
                "matmul",
                &|t, v| {
                    let m = t.matmul(v[0], v[1])?;
                    scalarize(t, m, 7)
                },
                &[x.clone(), y],
                DEFAULT_STEP,
            )?,
        ));
        rows.push((
            "silu".into(),
            grad_check(
                "silu",
                &|t, v| {
                    let s = t.silu(v[0]);
                    scalarize(t, s, 7)
                },
                &[x.clone()],
                DEFAULT_STEP,
            )?,
        ));
        let g = rng.normal_tensor(&[4], 0.2);
        let b = rng.normal_tensor(&[4], 0.2);
        rows.push((
            "layer_norm".into(),
            grad_check(
                "layer_norm",
                &|t, v| {
                    let n = t.layer_norm_last(v[0], v[1], v[2], 1e-5)?;
                    scalarize(t, n, 7)
                },
                &[x.clone(), g, b],
                DEFAULT_STEP,
            )?,
        ));
        let img = rng.normal_tensor(&[1, 2, 5, 5], 1.0);
        let k = rng.normal_tensor(&[2, 3, 3], 0.5);
        rows.push((
            "dwconv3x3".into(),
            grad_check(
                "dwconv3x3",
                &|t, v| {
                    let c = t.dwconv3x3(v[0], v[1])?;
                    scalarize(t, c, 7)
                },
                &[img.clone(), k],
                DEFAULT_STEP,
            )?,
        ));
        let w = rng.normal_tensor(&[3, 2, 1, 1], 0.5);
        let cb = rng.normal_tensor(&[3], 0.5);
        rows.push((
            "conv2d".into(),
            grad_check(
                "conv2d",
                &|t, v| {
                    let c = t.conv2d(v[0], v[1], v[2], 0)?;
                    scalarize(t, c, 7)
                },
                &[img.clone(), w, cb],
                DEFAULT_STEP,
            )?,
        ));
        rows.push((
            "bilinear_resize".into(),
            grad_check(
                "bilinear_resize",
                &|t, v| {
                    let r = t.bilinear_resize(v[0], 9, 7)?;
                    scalarize(t, r, 7)
                },
                &[img],
                DEFAULT_STEP,
            )?,
        ));
        let (l, d, n) = (6, 2, 2);
        let inp = random_s6_inputs(l, d, n, &mut rng);
        rows.push((
            "s6_kernel".into(),
            grad_check(
                "s6_kernel",
                &|t, v| {
                    let y = s6_op(t, v[0], v[1], v[2], v[3], v[4], v[5], false)?;
                    scalarize(t, y, 7)
                },
                &[
                    reshape_batch(&inp.x, l, d),
                    reshape_batch(&inp.delta, l, d),
                    reshape_batch(&inp.bseq, l, n),
                    reshape_batch(&inp.cseq, l, n),
                    inp.a.clone(),
                    inp.d_skip.clone(),
                ],
                DEFAULT_STEP,
            )?,
        ));
    }

    if scope == "block" || scope == "all" {
        rows.push(("vss_block".into(), block_gradcheck(seed)?));
    }
    if scope == "model" || scope == "all" {
        rows.push(("micro_model".into(), model_gradcheck(seed)?));
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument {
            op: "gradcheck",
            msg: format!("unknown scope `{}`; use op|block|model|all", scope),
        });
    }

    println!("{:<16} {:>12}", "check", "max rel err");
    let mut worst = 0.0f64;
    for (name, err) in &rows {
        println!("{:<16} {:>12.3e}", name, err);
        worst = worst.max(*err);
    }
    if worst > tol {
        println!("gradcheck FAILED: max rel err {worst:.3e} > {tol:.0e}");
        Ok(ExitCode::FAILURE)
    } else {
        println!("gradcheck passed (tolerance {tol:.0e})");
        Ok(ExitCode::SUCCESS)
    }
}

fn reshape_batch(t: &Tensor, l: usize, d: usize) -> Tensor {
    t.reshape(&[1, l, d]).expect("size preserved")
}

fn block_gradcheck(seed: u64) -> Result<f64> {
    use winmamba::blocks::{BlockMode, VssBlock};
    let cfg = ModelConfig::micro(3);
    let mut bank = ParamBank::new();
    let mut rng = Rng::new(seed);
    let block = VssBlock::init(&mut bank, "blk", 4, 4, 2, &cfg, &mut rng);
    let x0 = rng.normal_tensor(&[1, 4, 8, 8], 1.0);
    // check wrt the input; parameters are exercised by the model scope
    grad_check_sampled(
        "vss_block",
        &|t, v| {
            let mut s = Session::with_tape(std::mem::take(t), &bank);
            let out = block
                .forward(&mut s, v[0], BlockMode::ShiftedWindow)
                .and_then(|y| scalarize(&mut s.tape, y, 11));
            *t = s.tape;
            out
        },
        &[x0],
        DEFAULT_STEP,
        48,
        seed,
    )
}

fn model_gradcheck(seed: u64) -> Result<f64> {
    let cfg = ModelConfig::micro(3);
    let mut bank = ParamBank::new();
    let mut rng = Rng::new(seed);
    let model = SegModel::init(&mut bank, &cfg, &mut rng)?;
    let img = rng.normal_tensor(&[1, 3, 32, 32], 0.5);
    grad_check_sampled(
        "micro_model",
        &|t, v| {
            let mut s = Session::with_tape(std::mem::take(t), &bank);
            let out = model
                .forward(&mut s, v[0])
                .and_then(|y| scalarize(&mut s.tape, y, 13));
            *t = s.tape;
            out
        },
        &[img],
        DEFAULT_STEP,
        24,
        seed,
    )
}

// ---- scan-dump ----

fn cmd_scan_dump(
    cli: &Cli,
    h: usize,
    w: usize,
    window: usize,
    shift: usize,
    shifted: bool,
) -> Result<ExitCode> {
    let win = window.min(h).min(w).max(1);
    let s_eff = if shifted && win > 1 { shift.min(win - 1) } else { 0 };
    let (hp, wp) = (h.div_ceil(win) * win, w.div_ceil(win) * win);
    let (nh, nw) = (hp / win, wp / win);
    let mut csv = String::from("window,direction,indices\n");
    for wi in 0..nh {
        for wj in 0..nw {
            for dir in Direction::ALL {
                let order = scan::scan_order(win, win, dir);
                // map window-local positions to (rolled) map coordinates
                let idx: Vec<String> = order
                    .perm
                    .iter()
                    .map(|&p| {
                        let (li, lj) = (p / win, p % win);
                        let (mi, mj) = (wi * win + li, wj * win + lj);
                        // the shifted partition reads from the rolled map
                        let (si, sj) = ((mi + s_eff) % hp, (mj + s_eff) % wp);
                        format!("{}", si * wp + sj)
                    })
                    .collect();
                csv.push_str(&format!(
                    "{},{},{}\n",
                    wi * nw + wj,
                    dir.name(),
                    idx.join(" ")
                ));
            }
        }
    }
    print!("{csv}");
    write_out(cli.out.as_ref(), "scan_orders.csv", &csv)?;
    Ok(ExitCode::SUCCESS)
}

// ---- bench ----

fn cmd_bench(cli: &Cli) -> Result<ExitCode> {
    let cfg = load_config(cli)?;
    let precision = match cli.precision {
        Prec::F64 => Precision::F64,
        Prec::F32 => Precision::F32,
    };
    let mut csv = String::from(bench::csv_header());
    csv.push('\n');
    let mut ok = true;
    for &side in &cfg.bench_resolutions {
        let bc = cfg.bench_config(side, precision);
        let r = bench::run_bench(&bc, &mut Rng::new(cli.seed))?;
        println!(
            "{}x{} window {}: global {:.0} tok/s, windowed {:.0} tok/s, speedup {:.3}",
            r.h, r.w, r.window, r.global_tokens_per_s, r.windowed_tokens_per_s, r.speedup
        );
        // the parallel-over-windows path must not regress at scale
        if cli.threads >= 4 && side >= 256 && r.speedup < 1.0 {
            println!("  REGRESSION: speedup {:.3} < 1.0 with {} threads", r.speedup, cli.threads);
            ok = false;
        }
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_out(cli.out.as_ref(), "bench.csv", &csv)?;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

// ---- train / eval / ablate ----

fn write_predictions(
    dir: &Path,
    model: &SegModel,
    bank: &ParamBank,
    cfg: &winmamba::train::TrainConfig,
) -> Result<()> {
    let mut rng = Rng::new(cfg.seed).stream(0xE7A1);
    let (img, _) = data::synth_batch(cfg.batch, cfg.image_size, cfg.image_size, &mut rng)?;
    let mut s = Session::new(bank);
    let x = s.tape.leaf(img);
    let logits = model.forward(&mut s, x)?;
    let pred = argmax_predictions(s.tape.value(logits));
    let pred_t = Tensor::new(
        vec![cfg.batch, cfg.image_size, cfg.image_size],
        pred.iter().map(|&p| p as f64).collect(),
    )?;
    winmamba::io::save_tensor(&dir.join("predictions.swmt"), &pred_t, Dtype::U8)?;
    winmamba::io::save_tensor(&dir.join("logits.swmt"), s.tape.value(logits), Dtype::F64)?;
    Ok(())
}

fn cmd_train(cli: &Cli) -> Result<ExitCode> {
    if cli.precision == Prec::F32 {
        return Err(Error::Config("training runs at f64; --precision f32 applies to bench".into()));
    }
    let cfg = load_config(cli)?;
    write_out(cli.out.as_ref(), "effective_config.txt", &echo_config(&cfg))?;
    let result = train_loop(&cfg.train, cli.out.as_deref())?;
    println!(
        "trained {} steps; best mIoU {:.4}, final mIoU {:.4}",
        result.steps_run, result.best_miou, result.final_miou
    );
    if let Some(dir) = cli.out.as_ref() {
        let mut bank = ParamBank::new();
        let mut rng = Rng::new(cfg.train.seed);
        let model = SegModel::init(&mut bank, &cfg.train.model, &mut rng)?;
        let entries = winmamba::io::load_checkpoint(&dir.join("best.ckpt"))?;
        bank.load_entries(&entries)?;
        write_predictions(dir, &model, &bank, &cfg.train)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(cli: &Cli) -> Result<ExitCode> {
    let cfg = load_config(cli)?;
    let dir = cli.out.as_ref().ok_or_else(|| {
        Error::Config("eval needs --out DIR containing best.ckpt".into())
    })?;
    let mut bank = ParamBank::new();
    let mut rng = Rng::new(cfg.train.seed);
    let model = SegModel::init(&mut bank, &cfg.train.model, &mut rng)?;
    let entries = winmamba::io::load_checkpoint(&dir.join("best.ckpt"))?;
    bank.load_entries(&entries)?;
    let miou = evaluate(&model, &bank, &cfg.train)?;
    println!("eval mIoU {:.6}", miou);
    write_predictions(dir, &model, &bank, &cfg.train)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablate(cli: &Cli) -> Result<ExitCode> {
    let cfg = load_config(cli)?;
    let (_, csv) = ablation_run(&cfg.train)?;
    print!("{csv}");
    println!("# reference full-scale mIoU for the local/global configuration:");
    println!("# LoveDA 54.76, Potsdam 87.05 — annotations only, not reproduced at toy scale");
    write_out(cli.out.as_ref(), "ablation.csv", &csv)?;
    Ok(ExitCode::SUCCESS)
}
