//! Flat `key = value` run configuration. `#` starts a comment; unknown keys
//! are a hard error so typos never pass silently.

use crate::bench::{BenchConfig, Precision};
use crate::blocks::{ScanMode, ShiftMode};
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub bench_resolutions: Vec<usize>,
    pub bench_trials: usize,
    pub bench_warmup: usize,
    pub bench_d_inner: usize,
    pub bench_d_state: usize,
}

impl RunConfig {
    pub fn default_with_seed(seed: u64) -> Self {
        let b = BenchConfig::stage1_like(256, 256);
        Self {
            train: TrainConfig::toy(seed),
            bench_resolutions: vec![64, 128, 256],
            bench_trials: b.trials,
            bench_warmup: b.warmup,
            bench_d_inner: b.d_inner,
            bench_d_state: b.d_state,
        }
    }

    pub fn bench_config(&self, side: usize, precision: Precision) -> BenchConfig {
        BenchConfig {
            h: side,
            w: side,
            window: self.train.model.window,
            d_inner: self.bench_d_inner,
            d_state: self.bench_d_state,
            trials: self.bench_trials,
            warmup: self.bench_warmup,
            precision,
        }
    }
}

fn bad(line_no: usize, msg: impl Into<String>) -> Error {
    Error::Config(format!("line {}: {}", line_no, msg.into()))
}

fn parse_num<T: std::str::FromStr>(line_no: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| bad(line_no, format!("invalid value `{}` for key `{}`", v, key)))
}

fn parse_list(line_no: usize, key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|p| parse_num(line_no, key, p.trim()))
        .collect()
}

fn parse_mode(line_no: usize, v: &str) -> Result<ScanMode> {
    match v {
        "local" => Ok(ScanMode::Local),
        "global" => Ok(ScanMode::Global),
        _ => Err(bad(line_no, format!("scan mode must be local|global, got `{}`", v))),
    }
}

/// Parses config text over the seeded defaults.
pub fn parse_config(text: &str, seed: u64) -> Result<RunConfig> {
    let mut cfg = RunConfig::default_with_seed(seed);
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(line_no, format!("expected `key = value`, got `{}`", line)))?;
        let (key, v) = (key.trim(), value.trim());
        if v.is_empty() {
            return Err(bad(line_no, format!("missing value for key `{}`", key)));
        }
        let t = &mut cfg.train;
        let m = &mut t.model;
        match key {
            "image_size" => t.image_size = parse_num(line_no, key, v)?,
            "batch" => t.batch = parse_num(line_no, key, v)?,
            "steps" => t.steps = parse_num(line_no, key, v)?,
            "lr" => t.lr = parse_num(line_no, key, v)?,
            "eval_every" => t.eval_every = parse_num(line_no, key, v)?,
            "eval_batches" => t.eval_batches = parse_num(line_no, key, v)?,
            "target_miou" => t.target_miou = Some(parse_num(line_no, key, v)?),
            "base_dim" => m.base_dim = parse_num(line_no, key, v)?,
            "depths" => {
                let d = parse_list(line_no, key, v)?;
                m.depths = d
                    .try_into()
                    .map_err(|_| bad(line_no, "depths needs exactly 4 entries"))?;
            }
            "scan_modes" => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                if parts.len() != 4 {
                    return Err(bad(line_no, "scan_modes needs exactly 4 entries"));
                }
                for (slot, p) in m.scan_modes.iter_mut().zip(parts) {
                    *slot = parse_mode(line_no, p)?;
                }
            }
            "window" => m.window = parse_num(line_no, key, v)?,
            "shift" => m.shift = parse_num(line_no, key, v)?,
            "num_classes" => m.num_classes = parse_num(line_no, key, v)?,
            "d_state" => m.d_state = parse_num(line_no, key, v)?,
            "expansion" => m.expansion = parse_num(line_no, key, v)?,
            "shift_mode" => {
                m.shift_mode = match v {
                    "cyclic" => ShiftMode::CyclicRoll,
                    "boundary" => ShiftMode::BoundaryShift,
                    _ => {
                        return Err(bad(
                            line_no,
                            format!("shift_mode must be cyclic|boundary, got `{}`", v),
                        ))
                    }
                }
            }
            "bench_resolutions" => cfg.bench_resolutions = parse_list(line_no, key, v)?,
            "bench_trials" => cfg.bench_trials = parse_num(line_no, key, v)?,
            "bench_warmup" => cfg.bench_warmup = parse_num(line_no, key, v)?,
            "bench_d_inner" => cfg.bench_d_inner = parse_num(line_no, key, v)?,
            "bench_d_state" => cfg.bench_d_state = parse_num(line_no, key, v)?,
            _ => return Err(bad(line_no, format!("unknown key `{}`", key))),
        }
    }
    cfg.train.model.validate()?;
    Ok(cfg)
}

fn mode_str(m: ScanMode) -> &'static str {
    match m {
        ScanMode::Local => "local",
        ScanMode::Global => "global",
    }
}

/// Serializes the effective configuration back to the file format.
pub fn echo_config(cfg: &RunConfig) -> String {
    let t = &cfg.train;
    let m = &t.model;
    let modes: Vec<&str> = m.scan_modes.iter().map(|&x| mode_str(x)).collect();
    let depths: Vec<String> = m.depths.iter().map(|d| d.to_string()).collect();
    let res: Vec<String> = cfg.bench_resolutions.iter().map(|r| r.to_string()).collect();
    let mut out = String::new();
    let mut kv = |k: &str, v: String| out.push_str(&format!("{} = {}\n", k, v));
    kv("image_size", t.image_size.to_string());
    kv("batch", t.batch.to_string());
    kv("steps", t.steps.to_string());
    kv("lr", format!("{}", t.lr));
    kv("eval_every", t.eval_every.to_string());
    kv("eval_batches", t.eval_batches.to_string());
    if let Some(tm) = t.target_miou {
        kv("target_miou", format!("{}", tm));
    }
    kv("base_dim", m.base_dim.to_string());
    kv("depths", depths.join(","));
    kv("scan_modes", modes.join(","));
    kv("window", m.window.to_string());
    kv("shift", m.shift.to_string());
    kv("num_classes", m.num_classes.to_string());
    kv("d_state", m.d_state.to_string());
    kv("expansion", m.expansion.to_string());
    kv(
        "shift_mode",
        match m.shift_mode {
            ShiftMode::CyclicRoll => "cyclic",
            ShiftMode::BoundaryShift => "boundary",
        }
        .to_string(),
    );
    kv("bench_resolutions", res.join(","));
    kv("bench_trials", cfg.bench_trials.to_string());
    kv("bench_warmup", cfg.bench_warmup.to_string());
    kv("bench_d_inner", cfg.bench_d_inner.to_string());
    kv("bench_d_state", cfg.bench_d_state.to_string());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_echo() {
        let cfg = RunConfig::default_with_seed(3);
        let text = echo_config(&cfg);
        let re = parse_config(&text, 3).unwrap();
        assert_eq!(echo_config(&re), text);
    }

    #[test]
    fn parses_overrides_and_comments() {
        let text = "# toy run\nsteps = 10\nlr = 0.001 # larger\nscan_modes = local, local, local, local\nwindow = 7\nshift = 3\n";
        let cfg = parse_config(text, 0).unwrap();
        assert_eq!(cfg.train.steps, 10);
        assert_eq!(cfg.train.lr, 0.001);
        assert_eq!(cfg.train.model.window, 7);
        assert!(cfg.train.model.scan_modes.iter().all(|&m| m == ScanMode::Local));
    }

    #[test]
    fn unknown_key_is_fatal_and_named() {
        let err = parse_config("stepz = 10\n", 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("stepz"), "message was: {}", msg);
        assert!(msg.contains("line 1"));
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(parse_config("steps\n", 0).is_err());
        assert!(parse_config("steps = ten\n", 0).is_err());
        assert!(parse_config("depths = 2,2\n", 0).is_err());
        assert!(parse_config("steps =\n", 0).is_err());
    }

    #[test]
    fn invalid_model_geometry_rejected() {
        // shift >= window fails model validation after parsing
        assert!(parse_config("window = 4\nshift = 4\n", 0).is_err());
    }
}
