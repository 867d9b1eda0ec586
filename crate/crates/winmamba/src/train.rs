//! Cross-entropy loss, AdamW, the toy training loop, and the ablation runner.

use std::io::Write as _;
use std::path::Path;

use crate::blocks::{ModelConfig, ScanMode};
use crate::data;
use crate::decoder::SegModel;
use crate::metrics::{ConfusionMatrix, MetricRecord, IGNORE_CLASS};
use crate::rng::Rng;
use crate::tape::{ParamBank, Session, Tape, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Mean negative log-softmax over non-ignored pixels. `logits` is `[B,K,H,W]`,
/// `labels` is row-major `[B*H*W]` with `IGNORE_CLASS` pixels skipped.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (b, k, h, w) = match tape.value(logits).shape() {
        &[b, k, h, w] => (b, k, h, w),
        sh => {
            return Err(Error::InvalidArgument {
                op: "cross_entropy",
                msg: format!("expected [B,K,H,W] logits, got {:?}", sh),
            })
        }
    };
    let hw = h * w;
    if labels.len() != b * hw {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: vec![b, h, w],
            rhs: vec![labels.len()],
        });
    }
    for &l in labels {
        if l != IGNORE_CLASS && l >= k {
            return Err(Error::InvalidArgument {
                op: "cross_entropy",
                msg: format!("label {} out of range for K={}", l, k),
            });
        }
    }
    let scored = labels.iter().filter(|&&l| l != IGNORE_CLASS).count();
    if scored == 0 {
        return Err(Error::InvalidArgument {
            op: "cross_entropy",
            msg: "all pixels ignored".into(),
        });
    }

    let z = tape.value(logits);
    let zd = z.data();
    let pix = |bi: usize, ki: usize, idx: usize| zd[bi * k * hw + ki * hw + idx];
    let mut total = 0.0;
    for bi in 0..b {
        for idx in 0..hw {
            let t = labels[bi * hw + idx];
            if t == IGNORE_CLASS {
                continue;
            }
            let m = (0..k).map(|ki| pix(bi, ki, idx)).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..k).map(|ki| (pix(bi, ki, idx) - m).exp()).sum::<f64>().ln();
            total += lse - pix(bi, t, idx);
        }
    }
    let value = Tensor::scalar(total / scored as f64);

    let labels = labels.to_vec();
    Ok(tape.push_node(
        value,
        &[logits],
        Box::new(move |dout, pvals, _| {
            let d = dout.item() / scored as f64;
            let zd = pvals[0].data();
            let mut g = vec![0.0; zd.len()];
            for bi in 0..b {
                for idx in 0..hw {
                    let t = labels[bi * hw + idx];
                    if t == IGNORE_CLASS {
                        continue;
                    }
                    let base = bi * k * hw;
                    let m = (0..k)
                        .map(|ki| zd[base + ki * hw + idx])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = (0..k).map(|ki| (zd[base + ki * hw + idx] - m).exp()).sum();
                    for ki in 0..k {
                        let p = (zd[base + ki * hw + idx] - m).exp() / denom;
                        g[base + ki * hw + idx] += d * (p - if ki == t { 1.0 } else { 0.0 });
                    }
                }
            }
            vec![Tensor::new(pvals[0].shape().to_vec(), g).expect("sized")]
        }),
    ))
}

/// Per-pixel argmax over the class axis of `[B,K,H,W]` logits.
pub fn argmax_predictions(logits: &Tensor) -> Vec<usize> {
    let (b, k, h, w) = (
        logits.shape()[0],
        logits.shape()[1],
        logits.shape()[2],
        logits.shape()[3],
    );
    let hw = h * w;
    let d = logits.data();
    let mut out = Vec::with_capacity(b * hw);
    for bi in 0..b {
        for idx in 0..hw {
            let mut best = 0;
            let mut bv = f64::NEG_INFINITY;
            for ki in 0..k {
                let v = d[bi * k * hw + ki * hw + idx];
                if v > bv {
                    bv = v;
                    best = ki;
                }
            }
            out.push(best);
        }
    }
    out
}

/// AdamW with decoupled weight decay, one moment pair per parameter tensor.
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: usize,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(lr: f64, bank: &ParamBank) -> Result<Self> {
        if lr <= 0.0 {
            return Err(Error::InvalidArgument {
                op: "adamw",
                msg: format!("lr must be positive, got {}", lr),
            });
        }
        let moments: Vec<Tensor> = bank
            .ids()
            .map(|id| Tensor::zeros(bank.value(id).shape()))
            .collect();
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            step: 0,
            m: moments.clone(),
            v: moments,
        })
    }

    pub fn step(&mut self, bank: &mut ParamBank, grads: &[Tensor]) -> Result<()> {
        let ids: Vec<_> = bank.ids().collect();
        if grads.len() != ids.len() {
            return Err(Error::InvalidArgument {
                op: "adamw",
                msg: format!("expected {} grads, got {}", ids.len(), grads.len()),
            });
        }
        self.step += 1;
        let (bc1, bc2) = (
            1.0 - self.beta1.powi(self.step as i32),
            1.0 - self.beta2.powi(self.step as i32),
        );
        for (i, id) in ids.into_iter().enumerate() {
            let g = grads[i].data();
            let p_old = bank.value(id).clone();
            let mut p: Vec<f64> = p_old.data().to_vec();
            let mut m: Vec<f64> = self.m[i].data().to_vec();
            let mut v: Vec<f64> = self.v[i].data().to_vec();
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] = p[j] * (1.0 - self.lr * self.weight_decay)
                    - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            self.m[i] = Tensor::new(p_old.shape().to_vec(), m)?;
            self.v[i] = Tensor::new(p_old.shape().to_vec(), v)?;
            bank.set_value(id, Tensor::new(p_old.shape().to_vec(), p)?);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub image_size: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub eval_every: usize,
    pub eval_batches: usize,
    pub seed: u64,
    /// Stop early once validation mIoU reaches this value.
    pub target_miou: Option<f64>,
}

impl TrainConfig {
    pub fn toy(seed: u64) -> Self {
        Self {
            model: ModelConfig::toy(data::NUM_CLASSES),
            image_size: 64,
            batch: 8,
            steps: 500,
            lr: 3e-4,
            eval_every: 25,
            eval_batches: 2,
            seed,
            target_miou: None,
        }
    }
}

pub struct TrainResult {
    pub bank: ParamBank,
    pub records: Vec<MetricRecord>,
    pub best_miou: f64,
    pub final_miou: f64,
    pub steps_run: usize,
}

/// Validation mIoU of `model` on `eval_batches` fixed batches.
pub fn evaluate(
    model: &SegModel,
    bank: &ParamBank,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut cm = ConfusionMatrix::new(cfg.model.num_classes);
    // fixed stream disjoint from the training stream
    let mut rng = Rng::new(cfg.seed).stream(0xE7A1);
    for _ in 0..cfg.eval_batches {
        let (img, labels) = data::synth_batch(cfg.batch, cfg.image_size, cfg.image_size, &mut rng)?;
        let mut s = Session::new(bank);
        let x = s.tape.leaf(img);
        let logits = model.forward(&mut s, x)?;
        let pred = argmax_predictions(s.tape.value(logits));
        cm.update(&labels, &pred)?;
    }
    Ok(cm.miou())
}

/// Deterministic toy training run. Writes newline-delimited metric records
/// and the best checkpoint under `out` when given.
pub fn train_loop(cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainResult> {
    cfg.model.validate()?;
    let mut bank = ParamBank::new();
    let mut init_rng = Rng::new(cfg.seed);
    let model = SegModel::init(&mut bank, &cfg.model, &mut init_rng)?;

    let mut opt = AdamW::new(cfg.lr, &bank)?;
    let mut records = Vec::new();
    let mut best_miou = f64::NEG_INFINITY;
    let mut best_entries: Option<Vec<(String, Tensor)>> = None;
    let mut metrics_file = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(std::fs::File::create(dir.join("metrics.jsonl"))?)
        }
        None => None,
    };

    let record = |rec: MetricRecord,
                      file: &mut Option<std::fs::File>,
                      records: &mut Vec<MetricRecord>|
     -> Result<()> {
        if let Some(f) = file {
            let line = serde_json::to_string(&rec).map_err(|e| Error::Config(e.to_string()))?;
            writeln!(f, "{line}")?;
        }
        records.push(rec);
        Ok(())
    };

    let initial_miou = evaluate(&model, &bank, cfg)?;
    record(
        MetricRecord { step: 0, loss: f64::NAN, miou: Some(initial_miou) },
        &mut metrics_file,
        &mut records,
    )?;
    if initial_miou > best_miou {
        best_miou = initial_miou;
        best_entries = Some(bank.entries());
    }

    let mut data_rng = Rng::new(cfg.seed).stream(0x7EA1);
    let mut steps_run = 0;
    let mut final_miou = initial_miou;
    for step in 1..=cfg.steps {
        let (img, labels) =
            data::synth_batch(cfg.batch, cfg.image_size, cfg.image_size, &mut data_rng)?;
        let mut s = Session::new(&bank);
        let x = s.tape.leaf(img);
        let logits = model.forward(&mut s, x)?;
        let loss = cross_entropy(&mut s.tape, logits, &labels)?;
        let loss_val = s.tape.value(loss).item();
        if !loss_val.is_finite() {
            return Err(Error::InvalidArgument {
                op: "train_loop",
                msg: format!("non-finite loss at step {}", step),
            });
        }
        s.tape.backward(loss)?;
        let grads: Vec<Tensor> = bank.ids().map(|id| s.param_grad(&bank, id)).collect();
        opt.step(&mut bank, &grads)?;
        steps_run = step;

        let eval_now = cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == cfg.steps);
        let miou = if eval_now {
            let m = evaluate(&model, &bank, cfg)?;
            final_miou = m;
            if m > best_miou {
                best_miou = m;
                best_entries = Some(bank.entries());
            }
            Some(m)
        } else {
            None
        };
        record(
            MetricRecord { step, loss: loss_val, miou },
            &mut metrics_file,
            &mut records,
        )?;
        if let (Some(target), Some(m)) = (cfg.target_miou, miou) {
            if m >= target {
                break;
            }
        }
    }

    if let (Some(dir), Some(entries)) = (out, best_entries.as_ref()) {
        crate::io::save_checkpoint(&dir.join("best.ckpt"), entries)?;
    }
    // leave the bank at the best parameters so eval-after-train matches
    if let Some(entries) = best_entries {
        bank.load_entries(&entries)?;
    }
    Ok(TrainResult { bank, records, best_miou, final_miou, steps_run })
}

/// One ablation table row: stage-mode pair and window geometry.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub stage12: ScanMode,
    pub stage34: ScanMode,
    pub window: usize,
    pub shift: usize,
    pub miou: f64,
}

fn mode_name(m: ScanMode) -> &'static str {
    match m {
        ScanMode::Local => "local",
        ScanMode::Global => "global",
    }
}

/// Runs the stage-mode rows (global/global, local/local, local/global) and
/// the window-geometry rows ((14,7), (7,3)) with a shared seed, returning
/// CSV with header `stage12,stage34,w,s,miou`.
pub fn ablation_run(base: &TrainConfig) -> Result<(Vec<AblationRow>, String)> {
    let configs: [(ScanMode, ScanMode, usize, usize); 5] = [
        (ScanMode::Global, ScanMode::Global, 14, 7),
        (ScanMode::Local, ScanMode::Local, 14, 7),
        (ScanMode::Local, ScanMode::Global, 14, 7),
        (ScanMode::Local, ScanMode::Global, 14, 7),
        (ScanMode::Local, ScanMode::Global, 7, 3),
    ];
    let mut rows = Vec::new();
    for (s12, s34, w, s) in configs {
        let mut cfg = base.clone();
        cfg.model.scan_modes = [s12, s12, s34, s34];
        cfg.model.window = w;
        cfg.model.shift = s;
        let result = train_loop(&cfg, None)?;
        rows.push(AblationRow {
            stage12: s12,
            stage34: s34,
            window: w,
            shift: s,
            miou: result.best_miou,
        });
    }
    let mut csv = String::from("stage12,stage34,w,s,miou\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{:.4}\n",
            mode_name(r.stage12),
            mode_name(r.stage34),
            r.window,
            r.shift,
            r.miou
        ));
    }
    Ok((rows, csv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_loss_is_ln_k() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(&[1, 3, 2, 2]));
        let labels = vec![0, 1, 2, 0];
        let loss = cross_entropy(&mut tape, logits, &labels).unwrap();
        assert!((tape.value(loss).item() - 3.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_loss_near_zero() {
        let mut data = vec![0.0; 2 * 1 * 1];
        data[0] = 50.0; // class 0 at the single pixel
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::new(vec![1, 2, 1, 1], data).unwrap());
        let loss = cross_entropy(&mut tape, logits, &[0]).unwrap();
        assert!(tape.value(loss).item() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(&[1, 3, 1, 1]));
        assert!(cross_entropy(&mut tape, logits, &[3]).is_err());
        let logits2 = tape.leaf(Tensor::zeros(&[1, 3, 1, 1]));
        assert!(cross_entropy(&mut tape, logits2, &[IGNORE_CLASS]).is_err());
    }

    #[test]
    fn cross_entropy_ignores_marked_pixels() {
        let mut tape = Tape::new();
        let mut data = vec![0.0; 3 * 2];
        data[0] = 10.0; // pixel 0 favors class 0
        let logits = tape.leaf(Tensor::new(vec![1, 3, 1, 2], data).unwrap());
        // second pixel ignored: loss is just the first pixel's
        let loss = cross_entropy(&mut tape, logits, &[0, IGNORE_CLASS]).unwrap();
        assert!(tape.value(loss).item() < 1e-4);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = Rng::new(41);
        let labels = vec![0, 2, 1, 1, 0, 2];
        let x0 = rng.normal_tensor(&[2, 3, 1, 3], 1.0);
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let loss = cross_entropy(&mut tape, x, &labels).unwrap();
        tape.backward(loss).unwrap();
        let analytic = tape.grad(x).unwrap().clone();
        let f = |t: &Tensor| {
            let mut tp = Tape::new();
            let v = tp.leaf(t.clone());
            let l = cross_entropy(&mut tp, v, &labels).unwrap();
            tp.value(l).item()
        };
        let h = 1e-6;
        for i in 0..x0.elems() {
            let mut plus = x0.data().to_vec();
            plus[i] += h;
            let mut minus = x0.data().to_vec();
            minus[i] -= h;
            let num = (f(&Tensor::new(x0.shape().to_vec(), plus).unwrap())
                - f(&Tensor::new(x0.shape().to_vec(), minus).unwrap()))
                / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-8);
            assert!(rel < 1e-5, "coord {}: analytic {} numeric {}", i, a, num);
        }
    }

    #[test]
    fn adamw_zero_grad_zero_decay_is_identity() {
        let mut bank = ParamBank::new();
        let p = bank.add("p", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let mut opt = AdamW::new(0.1, &bank).unwrap();
        opt.weight_decay = 0.0;
        opt.step(&mut bank, &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(bank.value(p).data(), &[1.0, -2.0]);
    }

    #[test]
    fn adamw_decay_only_scales_params() {
        let mut bank = ParamBank::new();
        let p = bank.add("p", Tensor::new(vec![1], vec![2.0]).unwrap());
        let mut opt = AdamW::new(0.1, &bank).unwrap();
        opt.step(&mut bank, &[Tensor::zeros(&[1])]).unwrap();
        // zero grad: only decoupled decay acts, p <- p * (1 - lr*wd)
        let expect = 2.0 * (1.0 - 0.1 * 0.01);
        assert!((bank.value(p).data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn adamw_single_step_matches_hand_computation() {
        let mut bank = ParamBank::new();
        let p = bank.add("p", Tensor::new(vec![1], vec![1.0]).unwrap());
        let mut opt = AdamW::new(0.01, &bank).unwrap();
        let g = 0.5;
        opt.step(&mut bank, &[Tensor::new(vec![1], vec![g]).unwrap()]).unwrap();
        // t=1: m=(1-b1)g, v=(1-b2)g^2; m_hat=g, v_hat=g^2
        // p = 1*(1-lr*wd) - lr*g/(|g|+eps)
        let expect = 1.0 * (1.0 - 0.01 * 0.01) - 0.01 * g / (g.abs() + 1e-8);
        assert!((bank.value(p).data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn adamw_rejects_nonpositive_lr() {
        let bank = ParamBank::new();
        assert!(AdamW::new(0.0, &bank).is_err());
        assert!(AdamW::new(-1.0, &bank).is_err());
    }

    #[test]
    fn zero_steps_returns_initial_eval_only() {
        let mut cfg = TrainConfig::toy(3);
        cfg.model = ModelConfig::micro(data::NUM_CLASSES);
        cfg.image_size = 32;
        cfg.batch = 1;
        cfg.steps = 0;
        cfg.eval_batches = 1;
        let r = train_loop(&cfg, None).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.records[0].step, 0);
        assert!(r.records[0].miou.is_some());
    }

    #[test]
    fn loss_decreases_over_a_few_steps() {
        let mut cfg = TrainConfig::toy(0);
        cfg.model = ModelConfig::micro(data::NUM_CLASSES);
        cfg.image_size = 32;
        cfg.batch = 2;
        cfg.steps = 30;
        cfg.lr = 1e-3;
        cfg.eval_every = 0;
        cfg.eval_batches = 1;
        let r = train_loop(&cfg, None).unwrap();
        let first = r.records.iter().find(|m| m.loss.is_finite()).unwrap().loss;
        let last = r.records.last().unwrap().loss;
        assert!(last < first, "loss did not decrease: {} -> {}", first, last);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut cfg = TrainConfig::toy(7);
            cfg.model = ModelConfig::micro(data::NUM_CLASSES);
            cfg.image_size = 32;
            cfg.batch = 1;
            cfg.steps = 3;
            cfg.eval_every = 0;
            cfg.eval_batches = 1;
            train_loop(&cfg, None)
                .unwrap()
                .records
                .iter()
                .map(|m| m.loss.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_reload_reproduces_miou() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = TrainConfig::toy(11);
        cfg.model = ModelConfig::micro(data::NUM_CLASSES);
        cfg.image_size = 32;
        cfg.batch = 1;
        cfg.steps = 2;
        cfg.eval_every = 1;
        cfg.eval_batches = 1;
        let r = train_loop(&cfg, Some(dir.path())).unwrap();

        let entries = crate::io::load_checkpoint(&dir.path().join("best.ckpt")).unwrap();
        let mut bank = ParamBank::new();
        let mut rng = Rng::new(cfg.seed);
        let model = SegModel::init(&mut bank, &cfg.model, &mut rng).unwrap();
        bank.load_entries(&entries).unwrap();
        let m = evaluate(&model, &bank, &cfg).unwrap();
        assert_eq!(m.to_bits(), r.best_miou.to_bits());
    }
}
