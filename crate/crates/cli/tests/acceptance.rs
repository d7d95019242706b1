//! Acceptance criteria, one status line each.
//!
//! Criteria 4-7 train on the real benchmark CSVs and only run when
//! `HAKAN_DATA_DIR` points at a directory holding `ETTh1.csv`, `ETTh2.csv`
//! and `national_illness.csv`. Build with `--release` for those.
//! Pass criterion numbers as arguments to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use hakan::checkpoint::{read_checkpoint, write_checkpoint};
use hakan::config::RunConfig;
use hakan::model::{
    make_patches, model_param_count, revin_denormalize, revin_normalize, HaKanModel, ModelConfig,
};
use hakan::poly::{hypergeometric_oracle, BasisKind, HahnBasis};
use hakan::{LayerMode, Tensor};
use hakan_cli::{cmd_gradcheck, cmd_sweep, cmd_train, GradArgs, SweepAxis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Status {
    Pass(String),
    Fail(String),
    /// Failure of a directional check that calls for investigation only.
    SoftFail(String),
    NotRun(String),
}

struct Criterion {
    id: u32,
    name: &'static str,
    run: fn() -> Status,
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, name: "polynomial correctness", run: polynomial_correctness },
    Criterion { id: 2, name: "gradient correctness", run: gradient_correctness },
    Criterion { id: 3, name: "parameter-count slope", run: parameter_count },
    Criterion { id: 4, name: "ETTh2 L=96 T=96 reproduction", run: etth2_reproduction },
    Criterion { id: 5, name: "ETTh1 seed robustness", run: etth1_seed_robustness },
    Criterion { id: 6, name: "Illness reproduction", run: illness_reproduction },
    Criterion { id: 7, name: "component ablation direction", run: ablation_direction },
    Criterion { id: 8, name: "pipeline invariants", run: pipeline_invariants },
];

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for c in CRITERIA.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let start = Instant::now();
        let status = catch_unwind(AssertUnwindSafe(c.run))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Status::Fail(format!("panicked: {msg}"))
            });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match status {
            Status::Pass(d) => ("PASS", d),
            Status::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Status::SoftFail(d) => ("FAIL (soft)", d),
            Status::NotRun(d) => ("NOT RUN", d),
        };
        println!("criterion {} [{}]: {tag} ({detail}; {secs:.2}s)", c.id, c.name);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn verdict(ok: bool, detail: String) -> Status {
    if ok {
        Status::Pass(detail)
    } else {
        Status::Fail(detail)
    }
}

fn within(elapsed: Duration, limit: f64) -> bool {
    elapsed.as_secs_f64() < limit
}

fn hahn_weight(a: f64, b: f64, n: usize, x: usize) -> f64 {
    let binom = |top: f64, k: usize| {
        (1..=k)
            .map(|i| (top - k as f64 + i as f64) / i as f64)
            .product::<f64>()
    };
    binom(a + x as f64, x) * binom(b + (n - x) as f64, n - x)
}

fn polynomial_correctness() -> Status {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for &a in &[0.5, 1.0, 2.0] {
        for &b in &[0.5, 1.0, 2.0] {
            for &n in &[5usize, 7, 10] {
                let h = HahnBasis::new(a, b, n, 5).unwrap();
                for x in 0..=n {
                    for (r, v) in h.eval_all(x as f64).iter().enumerate() {
                        let o = hypergeometric_oracle(&h, r, x as f64).unwrap();
                        worst = worst.max((v - o).abs());
                    }
                }
            }
        }
    }
    let h = HahnBasis::new(1.0, 1.0, 7, 3).unwrap();
    let vals: Vec<Vec<f64>> = (0..=7).map(|x| h.eval_all(x as f64)).collect();
    let mut worst_inner = 0.0f64;
    for r in 0..=3 {
        for s in 0..=3 {
            if r != s {
                let ip: f64 = (0..=7).map(|x| hahn_weight(1.0, 1.0, 7, x) * vals[x][r] * vals[x][s]).sum();
                worst_inner = worst_inner.max(ip.abs());
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 1e-10 && worst_inner < 1e-8 && within(elapsed, 1.0),
        format!("oracle deviation {worst:.2e} < 1e-10, orthogonality residual {worst_inner:.2e} < 1e-8"),
    )
}

fn gradient_correctness() -> Status {
    let start = Instant::now();
    let args = GradArgs {
        mode: "both".into(),
        tolerance: None,
        basis: "hahn".into(),
        seed: 0,
        corrupt_backward: false,
    };
    let outcomes = match cmd_gradcheck(&args, &mut std::io::sink()) {
        Ok(o) => o,
        Err(e) => return Status::Fail(e.to_string()),
    };
    let worst = |m: LayerMode| outcomes.iter().find(|o| o.mode == m).unwrap().worst;
    let (k, l) = (worst(LayerMode::Kan), worst(LayerMode::Linear));
    verdict(
        k < 1e-4 && l < 1e-6 && within(start.elapsed(), 30.0),
        format!("kan worst {k:.2e} < 1e-4, linear worst {l:.2e} < 1e-6"),
    )
}

fn parameter_count() -> Status {
    let horizons = [96usize, 192, 336, 720];
    let reported = [(1usize, 635_000.0), (3, 767_000.0), (5, 899_000.0)];
    let avg_total = |blocks: usize| -> f64 {
        horizons
            .iter()
            .map(|&t| {
                let cfg = ModelConfig { blocks, horizon: t, lookback: 96, ..ModelConfig::default() };
                model_param_count(&cfg).unwrap() as f64
            })
            .sum::<f64>()
            / horizons.len() as f64
    };
    let at96 = |blocks: usize| {
        model_param_count(&ModelConfig { blocks, ..ModelConfig::default() }).unwrap()
    };
    let slope_a = (at96(3) - at96(1)) / 2;
    let slope_b = (at96(5) - at96(3)) / 2;
    let exact_steps = (at96(3) - at96(1)) == 2 * 66_112 && (at96(5) - at96(3)) == 2 * 66_112;
    let mut ok = exact_steps;
    let mut parts = vec![format!("per-block slope {slope_a}/{slope_b} (want 66112)")];
    for (r, paper) in reported {
        let total = avg_total(r);
        let rel = total / paper - 1.0;
        let good = rel.abs() <= 0.10;
        ok &= good;
        parts.push(format!(
            "R={r} mean total {total:.0} vs {:.0}K: {:+.2}%{}",
            paper / 1000.0,
            rel * 100.0,
            if good { "" } else { " outside ±10%" }
        ));
    }
    verdict(ok, parts.join(", "))
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os("HAKAN_DATA_DIR").map(PathBuf::from)
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Run config for one shipped config file on a dataset from `HAKAN_DATA_DIR`.
fn benchmark_config(cfg_file: &str, csv: &str, horizon: usize, seeds: &[u64], out: &Path) -> Result<RunConfig, Status> {
    let Some(dir) = data_dir() else {
        return Err(Status::NotRun("set HAKAN_DATA_DIR to the benchmark CSV directory".into()));
    };
    let path = dir.join(csv);
    if !path.is_file() {
        return Err(Status::Fail(format!("{} is missing", path.display())));
    }
    let mut cfg = RunConfig::load(&configs_dir().join(cfg_file)).map_err(|e| Status::Fail(e.to_string()))?;
    cfg.data.path = path;
    cfg.horizons = vec![horizon];
    cfg.model.horizon = horizon;
    cfg.seeds = seeds.to_vec();
    cfg.out_dir = out.to_path_buf();
    Ok(cfg)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

const SEEDS: [u64; 3] = [2021, 2022, 2023];

fn train_seeds(cfg_file: &str, csv: &str, horizon: usize) -> Result<(Vec<f64>, Vec<f64>), Status> {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = benchmark_config(cfg_file, csv, horizon, &SEEDS, tmp.path())?;
    let runs = cmd_train(&cfg, &mut std::io::sink()).map_err(|e| Status::Fail(format!("{e:#}")))?;
    Ok((
        runs.iter().map(|r| r.record.mse).collect(),
        runs.iter().map(|r| r.record.mae).collect(),
    ))
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join("/")
}

fn etth2_reproduction() -> Status {
    let (mse, mae) = match train_seeds("etth2_l96.cfg", "ETTh2.csv", 96) {
        Ok(v) => v,
        Err(s) => return s,
    };
    let (m, _) = mean_std(&mse);
    let (a, _) = mean_std(&mae);
    verdict(
        (m - 0.277).abs() <= 0.02 && (a - 0.332).abs() <= 0.02,
        format!("mean MSE {m:.4} (seeds {}) vs 0.277 ± 0.02, mean MAE {a:.4} vs 0.332 ± 0.02", fmt_list(&mse)),
    )
}

fn etth1_seed_robustness() -> Status {
    let (mse, _) = match train_seeds("etth1.cfg", "ETTh1.csv", 96) {
        Ok(v) => v,
        Err(s) => return s,
    };
    let (m, sd) = mean_std(&mse);
    verdict(
        (m - 0.3663).abs() <= 0.02 && sd < 0.01,
        format!("MSE {m:.4} ± {sd:.4} (seeds {}) vs 0.3663 ± 0.02, std < 0.01", fmt_list(&mse)),
    )
}

fn illness_reproduction() -> Status {
    let (mse, _) = match train_seeds("illness.cfg", "national_illness.csv", 24) {
        Ok(v) => v,
        Err(s) => return s,
    };
    let (m, _) = mean_std(&mse);
    verdict(
        (m - 1.183).abs() <= 0.20,
        format!("mean MSE {m:.4} (seeds {}) vs 1.183 ± 0.20", fmt_list(&mse)),
    )
}

fn ablation_direction() -> Status {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = match benchmark_config("etth2_l96.cfg", "ETTh2.csv", 96, &[2021], tmp.path()) {
        Ok(c) => c,
        Err(s) => return s,
    };
    let values: Vec<String> = ["both", "intra-only", "inter-only"].map(String::from).to_vec();
    let rows = match cmd_sweep(SweepAxis::Components, &values, &cfg, &mut std::io::sink()) {
        Ok(r) => r,
        Err(e) => return Status::Fail(format!("{e:#}")),
    };
    let detail = rows
        .iter()
        .map(|r| format!("{} {:.4}", r.value, r.mse))
        .collect::<Vec<_>>()
        .join(", ");
    if rows[0].mse <= rows[1].mse && rows[0].mse <= rows[2].mse {
        Status::Pass(format!("test MSE {detail}"))
    } else {
        Status::SoftFail(format!("full model not best: {detail}"))
    }
}

fn random_series(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let scale = rng.random_range(0.01..100.0);
    let shift = rng.random_range(-1e3..1e3);
    (0..len).map(|_| shift + scale * rng.random_range(-1.0..1.0)).collect()
}

fn pipeline_invariants() -> Status {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();

    let mut revin_worst = 0.0f64;
    for _ in 0..200 {
        let len = rng.random_range(1..200);
        let x = random_series(&mut rng, len);
        let (z, st) = revin_normalize(&x, 1e-5);
        for (a, b) in revin_denormalize(&z, &st).iter().zip(&x) {
            revin_worst = revin_worst.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    if revin_worst >= 1e-9 {
        failures.push(format!("RevIN round trip {revin_worst:.1e}"));
    }

    let mut patch_ok = true;
    for l in 1..=48 {
        let x: Vec<f64> = (0..l).map(|v| v as f64).collect();
        for p in 1..=l {
            for s in 1..=10 {
                let t = make_patches(&x, p, s).unwrap();
                let n = (l - p) / s + 2;
                patch_ok &= t.shape() == [n, p];
                patch_ok &= (0..n * p).all(|i| t.data()[i] == ((i / p) * s + i % p).min(l - 1) as f64);
            }
        }
    }
    if !patch_ok {
        failures.push("patch enumeration".into());
    }

    let kinds = BasisKind::ALL;
    for i in 0..100u64 {
        let lookback = rng.random_range(2..48);
        let patch_len = rng.random_range(1..=lookback);
        let hahn_n = rng.random_range(1..8);
        let cfg = ModelConfig {
            lookback,
            horizon: rng.random_range(1..24),
            patch_len,
            stride: rng.random_range(1..=patch_len + 2),
            d_model: rng.random_range(1..8),
            blocks: rng.random_range(0..4),
            bottleneck: rng.random_range(1..16),
            basis: kinds[rng.random_range(0..kinds.len())],
            hahn_n,
            degree: rng.random_range(0..=hahn_n.min(4)),
            mode: if rng.random_bool(0.8) { LayerMode::Kan } else { LayerMode::Linear },
            intra: rng.random_bool(0.8),
            inter: rng.random_bool(0.8),
            ..ModelConfig::default()
        };
        let model = HaKanModel::new(&cfg, i).unwrap();
        let trace = model.shape_trace(&random_series(&mut rng, lookback)).unwrap();
        let n = cfg.num_patches();
        let mut want = vec![vec![n, cfg.patch_len]];
        want.extend(std::iter::repeat(vec![n, cfg.d_model]).take(cfg.blocks + 1));
        want.extend([vec![n * cfg.d_model], vec![cfg.bottleneck], vec![cfg.horizon]]);
        if trace != want {
            failures.push(format!("shape trace for {cfg:?}"));
            break;
        }
    }

    let cfg = ModelConfig {
        lookback: 48,
        horizon: 12,
        patch_len: 8,
        stride: 4,
        d_model: 16,
        blocks: 2,
        bottleneck: 24,
        channels: 3,
        ..ModelConfig::default()
    };
    let x = random_series(&mut rng, 48);
    let mean = x.iter().sum::<f64>() / 48.0;
    let zero = HaKanModel::zeros(&cfg).unwrap().forward(&x).unwrap();
    if zero.iter().any(|v| (v - mean).abs() > 1e-9 * mean.abs().max(1.0)) {
        failures.push("zero model is not the window mean".into());
    }

    let model = HaKanModel::new(&cfg, 5).unwrap();
    let cols: Vec<Vec<f64>> = (0..3).map(|_| random_series(&mut rng, 48)).collect();
    let window = Tensor::from_fn(&[48, 3], |i| cols[i % 3][i / 3]);
    let joint = model.forecast(&window).unwrap();
    let independent = cols.iter().enumerate().all(|(c, col)| {
        model
            .forward(col)
            .unwrap()
            .iter()
            .enumerate()
            .all(|(t, v)| v.to_bits() == joint.data()[t * 3 + c].to_bits())
    });
    if !independent {
        failures.push("channel independence".into());
    }

    let mut buf = Vec::new();
    write_checkpoint(&model, &mut buf).unwrap();
    let back = read_checkpoint(buf.as_slice()).unwrap();
    let exact = model
        .named_params()
        .iter()
        .zip(back.named_params())
        .all(|((na, a), (nb, b))| {
            na == &nb && a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
    if !exact || back.config() != model.config() {
        failures.push("checkpoint round trip".into());
    }

    let elapsed = start.elapsed();
    if !within(elapsed, 60.0) {
        failures.push(format!("took {:.1}s", elapsed.as_secs_f64()));
    }
    if failures.is_empty() {
        Status::Pass(format!(
            "RevIN {revin_worst:.1e}, patching, 100-config shape fuzz, zero model, channel independence, checkpoint"
        ))
    } else {
        Status::Fail(failures.join("; "))
    }
}
