//! Loss, metrics, Adam, early stopping, the training loop, finite-difference
//! gradient checking and report aggregation.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{PreparedData, Segment};
use crate::error::{Error, Result};
use crate::model::{HaKanModel, ModelConfig};
use crate::tensor::{Tape, Tensor};

fn check_same(pred: &Tensor, truth: &Tensor) -> Result<()> {
    if pred.shape() != truth.shape() {
        return Err(Error::Dimension(format!(
            "prediction {:?} and truth {:?} differ in shape",
            pred.shape(),
            truth.shape()
        )));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn mse_loss(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    check_same(pred, truth)?;
    let n = pred.len().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Mean absolute error over all elements.
pub fn mae_metric(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    check_same(pred, truth)?;
    let n = pred.len().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments shaped like `sizes`.
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_model(lr: f64, model: &HaKanModel) -> Self {
        let sizes: Vec<usize> = model.named_params().iter().map(|(_, t)| t.len()).collect();
        AdamState::new(lr, &sizes)
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Option<&[f64]>],
    state: &mut AdamState,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam_step got {} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let g = g.ok_or_else(|| Error::Contract(format!("parameter {i} has no gradient")))?;
        if g.len() != p.len() || state.m[i].len() != p.len() {
            return Err(Error::Contract(format!("parameter {i} gradient length mismatch")));
        }
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].unwrap();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            *w -= state.lr * mh / (vh.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Patience-based stopping on a loss to minimize.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records the loss of `epoch` (1-based); returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSpec {
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip; off when `None`.
    pub clip_norm: Option<f64>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            max_epochs: 100,
            patience: 10,
            lr: 1e-4,
            batch_size: 32,
            seed: 2021,
            clip_norm: None,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patience > self.max_epochs {
            return Err(Error::Config("train.patience exceeds train.max_epochs".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("train.clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Test-split result of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub dataset: String,
    pub horizon: usize,
    pub seed: u64,
    pub mse: f64,
    pub mae: f64,
    pub epochs: usize,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "dataset,horizon,seed,mse,mae,epochs,seconds";

impl MetricRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.dataset, self.horizon, self.seed, self.mse, self.mae, self.epochs, self.seconds
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        let bad = || Error::Config(format!("malformed metrics row: {line}"));
        if f.len() != 7 {
            return Err(bad());
        }
        Ok(MetricRecord {
            dataset: f[0].to_string(),
            horizon: f[1].parse().map_err(|_| bad())?,
            seed: f[2].parse().map_err(|_| bad())?,
            mse: f[3].parse().map_err(|_| bad())?,
            mae: f[4].parse().map_err(|_| bad())?,
            epochs: f[5].parse().map_err(|_| bad())?,
            seconds: f[6].parse().map_err(|_| bad())?,
        })
    }
}

/// Per-epoch losses and the final record.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub record: MetricRecord,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

const EVAL_CHUNK: usize = 512;

/// Test-style MSE and MAE of `model` over every window of `segment`.
pub fn evaluate(model: &HaKanModel, data: &PreparedData, segment: &Segment) -> Result<(f64, f64)> {
    let samples = data.samples(segment);
    if samples.is_empty() {
        return Err(Error::Config("evaluation segment yields no windows".into()));
    }
    let (mut se, mut ae, mut count) = (0.0, 0.0, 0usize);
    for chunk in samples.chunks(EVAL_CHUNK) {
        let inputs: Vec<&[f64]> = chunk.iter().map(|&(c, o)| data.input(c, o)).collect();
        let preds = model.predict_batch(&inputs)?;
        for (pred, &(c, o)) in preds.iter().zip(chunk) {
            for (p, t) in pred.iter().zip(data.target(c, o)) {
                se += (p - t) * (p - t);
                ae += (p - t).abs();
                count += 1;
            }
        }
    }
    Ok((se / count as f64, ae / count as f64))
}

fn clip_gradients(grads: &mut [Vec<f64>], max_norm: f64) {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
}

/// Minibatch Adam over shuffled (window, channel) pairs with early stopping on
/// validation MSE. `model` ends holding the best-validation parameters.
pub fn train(model: &mut HaKanModel, data: &PreparedData, spec: &TrainSpec) -> Result<TrainOutcome> {
    spec.validate()?;
    let started = Instant::now();
    let mut samples = data.samples(&data.splits.train);
    if samples.is_empty() || data.samples(&data.splits.val).is_empty() {
        return Err(Error::Config("train or validation split yields no windows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut adam = AdamState::for_model(spec.lr, model);
    let mut stopper = EarlyStopping::new(spec.patience);
    let mut best = model.clone();
    let (mut train_hist, mut val_hist) = (Vec::new(), Vec::new());
    let t = data.horizon;

    for epoch in 1..=spec.max_epochs {
        samples.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in samples.chunks(spec.batch_size) {
            let inputs: Vec<&[f64]> = batch.iter().map(|&(c, o)| data.input(c, o)).collect();
            let mut target = Vec::with_capacity(batch.len() * t);
            for &(c, o) in batch {
                target.extend_from_slice(data.target(c, o));
            }
            let target = Tensor::new(vec![batch.len(), t], target)?;

            let mut tape = Tape::new();
            let params = model.register(&mut tape, true);
            let pred = model.forward_on(&mut tape, &params, &inputs, None)?;
            let loss = tape.mse(pred, &target)?;
            tape.backward(loss)?;
            epoch_loss += tape.value(loss).item()? * batch.len() as f64;

            let mut grads: Vec<Vec<f64>> = params
                .0
                .iter()
                .map(|&v| {
                    tape.grad(v)
                        .map(<[f64]>::to_vec)
                        .ok_or_else(|| Error::Contract("parameter received no gradient".into()))
                })
                .collect::<Result<_>>()?;
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite("backward"));
            }
            if let Some(c) = spec.clip_norm {
                clip_gradients(&mut grads, c);
            }
            let grad_refs: Vec<Option<&[f64]>> = grads.iter().map(|g| Some(g.as_slice())).collect();
            adam_step(&mut model.params_mut(), &grad_refs, &mut adam)?;
        }
        let train_loss = epoch_loss / samples.len() as f64;
        let (val_mse, _) = evaluate(model, data, &data.splits.val)?;
        if !val_mse.is_finite() {
            return Err(Error::NonFinite("validation loss"));
        }
        train_hist.push(train_loss);
        val_hist.push(val_mse);
        let improved = stopper.observe(epoch, val_mse);
        log::info!(
            "epoch {epoch}: train {train_loss:.6} val {val_mse:.6}{}",
            if improved { " *" } else { "" }
        );
        if improved {
            best = model.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }

    *model = best;
    let (mse, mae) = evaluate(model, data, &data.splits.test)?;
    Ok(TrainOutcome {
        record: MetricRecord {
            dataset: data.name.clone(),
            horizon: t,
            seed: spec.seed,
            mse,
            mae,
            epochs: train_hist.len(),
            seconds: started.elapsed().as_secs_f64(),
        },
        train_loss: train_hist,
        val_loss: val_hist,
        best_epoch: stopper.best_epoch(),
    })
}

/// Configuration used by the gradient check: `L=8, T=4, P=4, S=2, D=3,
/// R=1, H=5, d=2`.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        lookback: 8,
        horizon: 4,
        channels: 1,
        patch_len: 4,
        stride: 2,
        d_model: 3,
        blocks: 1,
        bottleneck: 5,
        degree: 2,
        ..ModelConfig::default()
    }
}

/// Worst error found per parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub groups: Vec<(String, f64)>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.groups.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.worst() < tolerance
    }
}

/// Random inputs and targets for gradient checking.
pub fn grad_check_batch(config: &ModelConfig, batch: usize, seed: u64) -> (Vec<Vec<f64>>, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let inputs = (0..batch).map(|_| draw(config.lookback)).collect();
    let target = Tensor::new(vec![batch, config.horizon], draw(batch * config.horizon))
        .expect("consistent shape");
    (inputs, target)
}

fn batch_loss(model: &HaKanModel, inputs: &[&[f64]], target: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape, false);
    let pred = model.forward_on(&mut tape, &params, inputs, None)?;
    let loss = tape.mse(pred, target)?;
    tape.value(loss).item()
}

/// Tape gradients of the batch MSE for every parameter, in named order.
/// `fault` scales the basis jacobian in backward to exercise the checker.
pub fn tape_gradients(
    model: &HaKanModel,
    inputs: &[&[f64]],
    target: &Tensor,
    fault: Option<f64>,
) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    if let Some(s) = fault {
        tape.inject_expand_fault(s);
    }
    let params = model.register(&mut tape, true);
    let pred = model.forward_on(&mut tape, &params, inputs, None)?;
    let loss = tape.mse(pred, target)?;
    tape.backward(loss)?;
    params
        .0
        .iter()
        .map(|&v| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::Contract("parameter received no gradient".into()))
        })
        .collect()
}

/// Compares tape gradients with central differences (step `1e-5`) for every
/// parameter scalar. The error of one scalar is `|a - n| / max(1, |a|, |n|)`.
pub fn grad_check(
    model: &HaKanModel,
    inputs: &[Vec<f64>],
    target: &Tensor,
    fault: Option<f64>,
) -> Result<GradReport> {
    const H: f64 = 1e-5;
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let analytic = tape_gradients(model, &refs, target, fault)?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let mut probe = model.clone();
    let mut groups = Vec::new();
    for (pi, name) in names.iter().enumerate() {
        let mut worst = 0.0f64;
        for j in 0..analytic[pi].len() {
            let orig = probe.params_mut()[pi].data()[j];
            probe.params_mut()[pi].data_mut()[j] = orig + H;
            let up = batch_loss(&probe, &refs, target)?;
            probe.params_mut()[pi].data_mut()[j] = orig - H;
            let down = batch_loss(&probe, &refs, target)?;
            probe.params_mut()[pi].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[pi][j];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
        groups.push((name.clone(), worst));
    }
    Ok(GradReport { groups })
}

/// Mean and sample standard deviation of one (dataset, horizon) over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedSummary {
    pub dataset: String,
    pub horizon: usize,
    pub runs: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    /// Per dataset: mean over horizons of the per-horizon seed means.
    pub per_dataset: Vec<(String, f64, f64)>,
    /// Mean of the per-dataset averages.
    pub overall: (f64, f64),
    pub seeds: Vec<SeedSummary>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate_report(records: &[MetricRecord]) -> Report {
    let mut cells: BTreeMap<(String, usize), Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.dataset.clone(), r.horizon)).or_default().push(r);
    }
    let seeds: Vec<SeedSummary> = cells
        .iter()
        .map(|((dataset, horizon), rs)| {
            let (mse_mean, mse_std) = mean_std(&rs.iter().map(|r| r.mse).collect::<Vec<_>>());
            let (mae_mean, mae_std) = mean_std(&rs.iter().map(|r| r.mae).collect::<Vec<_>>());
            SeedSummary {
                dataset: dataset.clone(),
                horizon: *horizon,
                runs: rs.len(),
                mse_mean,
                mse_std,
                mae_mean,
                mae_std,
            }
        })
        .collect();
    let mut by_dataset: BTreeMap<&str, Vec<&SeedSummary>> = BTreeMap::new();
    for s in &seeds {
        by_dataset.entry(s.dataset.as_str()).or_default().push(s);
    }
    let per_dataset: Vec<(String, f64, f64)> = by_dataset
        .iter()
        .map(|(d, ss)| {
            let n = ss.len() as f64;
            (
                d.to_string(),
                ss.iter().map(|s| s.mse_mean).sum::<f64>() / n,
                ss.iter().map(|s| s.mae_mean).sum::<f64>() / n,
            )
        })
        .collect();
    let overall = if per_dataset.is_empty() {
        (0.0, 0.0)
    } else {
        let n = per_dataset.len() as f64;
        (
            per_dataset.iter().map(|d| d.1).sum::<f64>() / n,
            per_dataset.iter().map(|d| d.2).sum::<f64>() / n,
        )
    };
    Report { per_dataset, overall, seeds }
}
