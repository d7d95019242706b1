#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Hourly CSV with `channels` noisy sinusoids of different periods.
pub fn synthetic_csv(dir: &Path, rows: usize, channels: usize) -> PathBuf {
    let mut text = String::from("date");
    for c in 0..channels {
        write!(text, ",c{c}").unwrap();
    }
    text.push('\n');
    for r in 0..rows {
        text.push_str(&timestamp(r));
        for c in 0..channels {
            let period = 12.0 + 5.0 * c as f64;
            let v = (2.0 * std::f64::consts::PI * r as f64 / period).sin() * (1.0 + c as f64)
                + 0.05 * (((r * 7919 + c * 104_729) % 1000) as f64 / 1000.0 - 0.5)
                + 0.002 * r as f64;
            write!(text, ",{v}").unwrap();
        }
        text.push('\n');
    }
    let path = dir.join(format!("synthetic_{channels}ch.csv"));
    std::fs::write(&path, text).unwrap();
    path
}

/// `2020-01-01 00:00:00` plus `r` hours.
fn timestamp(r: usize) -> String {
    let (day, hour) = (r / 24, r % 24);
    let (month, dom) = month_day(day);
    format!("2020-{month:02}-{dom:02} {hour:02}:00:00")
}

fn month_day(mut day: usize) -> (usize, usize) {
    let lens = [31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    for (m, len) in lens.iter().enumerate() {
        if day < *len {
            return (m + 1, day + 1);
        }
        day -= len;
    }
    panic!("synthetic data limited to one year");
}

/// Small, fast configuration for CLI tests.
pub fn tiny_run_config(data: &Path, out: &Path) -> String {
    format!(
        "data.name = synth
data.path = {}
data.split = ratio
model.lookback = 24
model.horizon = 8
model.patch_len = 8
model.stride = 4
model.d_model = 8
model.blocks = 1
model.bottleneck = 16
train.max_epochs = 2
train.patience = 2
train.lr = 1e-3
train.batch_size = 64
run.horizons = 8
run.seeds = 2021
run.out_dir = {}
",
        data.display(),
        out.display()
    )
}
