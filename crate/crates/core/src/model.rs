//! The channel-independent forecaster.
//!
//! One backbone is shared by every channel. For a look-back series `x` of
//! length `L` it computes
//!
//! ```text
//! z       = revin(x)                          (per-window z-score)
//! X_p     = patches(z)                        [N, P],  N = (L - P) / S + 2
//! X_d     = X_p · W_p + W_pos                 [N, D]
//! X_k     = inter(intra(X_k)ᵀ)ᵀ + X_k         R times
//! x_f     = flatten(X_k)                      [N·D]
//! x̂       = W_up · (W_down · x_f)             [T]
//! output  = denormalize(x̂)
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::kan::{KanLayer, LayerMode};
use crate::poly::{Basis, BasisKind};
use crate::tensor::{Tape, Tensor, Var};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Look-back length `L`.
    pub lookback: usize,
    /// Forecast horizon `T`.
    pub horizon: usize,
    /// Channel count `M` of the data the model was built for (0 = unset).
    pub channels: usize,
    pub patch_len: usize,
    pub stride: usize,
    /// Embedding width `D`.
    pub d_model: usize,
    /// Number of blocks `R`.
    pub blocks: usize,
    /// Bottleneck width `H`.
    pub bottleneck: usize,
    pub basis: BasisKind,
    pub hahn_a: f64,
    pub hahn_b: f64,
    pub hahn_n: usize,
    /// Polynomial degree `d` (grid size for the B-spline basis).
    pub degree: usize,
    pub mode: LayerMode,
    pub intra: bool,
    pub inter: bool,
    pub revin_eps: f64,
    /// Variance scale of the coefficient initialization.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lookback: 96,
            horizon: 96,
            channels: 0,
            patch_len: 16,
            stride: 8,
            d_model: 128,
            blocks: 5,
            bottleneck: 336,
            basis: BasisKind::Hahn,
            hahn_a: 1.0,
            hahn_b: 1.0,
            hahn_n: 7,
            degree: 3,
            mode: LayerMode::Kan,
            intra: true,
            inter: true,
            revin_eps: 1e-5,
            init_scale: 1.0,
        }
    }
}

impl ModelConfig {
    /// `N = ⌊(L - P) / S⌋ + 2`.
    pub fn num_patches(&self) -> usize {
        (self.lookback - self.patch_len) / self.stride + 2
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("patch_len", self.patch_len),
            ("stride", self.stride),
            ("d_model", self.d_model),
            ("bottleneck", self.bottleneck),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.patch_len > self.lookback {
            return Err(Error::Config(format!(
                "patch length {} exceeds look-back {}",
                self.patch_len, self.lookback
            )));
        }
        if !(self.revin_eps >= 0.0) || !(self.init_scale > 0.0) {
            return Err(Error::Config("revin_eps must be >= 0 and init_scale > 0".into()));
        }
        self.build_basis()?;
        Ok(())
    }

    pub fn build_basis(&self) -> Result<Basis> {
        Basis::build(self.basis, self.hahn_a, self.hahn_b, self.hahn_n, self.degree)
    }

    /// Coefficients per edge: basis width in KAN mode, 1 in linear mode.
    pub fn edge_width(&self) -> Result<usize> {
        Ok(match self.mode {
            LayerMode::Kan => self.build_basis()?.width(),
            LayerMode::Linear => 1,
        })
    }
}

/// Named parameter counts, in checkpoint order.
pub fn param_breakdown(config: &ModelConfig) -> Result<Vec<(String, usize)>> {
    config.validate()?;
    let (p, d, n, h, t) = (
        config.patch_len,
        config.d_model,
        config.num_patches(),
        config.bottleneck,
        config.horizon,
    );
    let k = config.edge_width()?;
    let mut parts = vec![("w_p".to_string(), p * d), ("w_pos".to_string(), n * d)];
    for i in 0..config.blocks {
        if config.intra {
            parts.push((format!("block.{i}.intra.gamma"), d * d * k));
        }
        if config.inter {
            parts.push((format!("block.{i}.inter.gamma"), n * n * k));
        }
    }
    parts.push(("w_down".to_string(), h * n * d));
    parts.push(("w_up".to_string(), t * h));
    Ok(parts)
}

/// `P·D + N·D + R·(D² + N²)·(d+1) + H·N·D + T·H` with both layers enabled.
pub fn model_param_count(config: &ModelConfig) -> Result<usize> {
    Ok(param_breakdown(config)?.iter().map(|(_, c)| c).sum())
}

/// Statistics needed to undo per-window normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RevInState {
    pub mean: f64,
    pub std: f64,
    pub eps: f64,
}

impl RevInState {
    fn scale(&self) -> f64 {
        self.std + self.eps
    }
}

/// `(x - mean) / (std + eps)` with population statistics over the window.
pub fn revin_normalize(x: &[f64], eps: f64) -> (Vec<f64>, RevInState) {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let state = RevInState {
        mean,
        std: var.sqrt(),
        eps,
    };
    let scale = state.scale();
    let out = x
        .iter()
        .map(|v| if scale > 0.0 { (v - mean) / scale } else { 0.0 })
        .collect();
    (out, state)
}

pub fn revin_denormalize(pred: &[f64], state: &RevInState) -> Vec<f64> {
    pred.iter().map(|v| v * state.scale() + state.mean).collect()
}

/// Overlapping patches of length `patch_len` every `stride` steps; indices
/// past the end repeat the final value. Always yields `⌊(L-P)/S⌋ + 2` rows.
pub fn make_patches(x: &[f64], patch_len: usize, stride: usize) -> Result<Tensor> {
    let l = x.len();
    if patch_len == 0 || stride == 0 {
        return Err(Error::Config("patch length and stride must be positive".into()));
    }
    if patch_len > l {
        return Err(Error::Config(format!(
            "patch length {patch_len} exceeds series length {l}"
        )));
    }
    let n = (l - patch_len) / stride + 2;
    let last = x[l - 1];
    let mut data = Vec::with_capacity(n * patch_len);
    for j in 0..n {
        let start = j * stride;
        data.extend((start..start + patch_len).map(|i| if i < l { x[i] } else { last }));
    }
    Tensor::new(vec![n, patch_len], data)
}

/// Columns of an `[L, M]` tensor as `M` separate series.
pub fn split_channels(x: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (l, m) = match x.shape() {
        &[l, m] => (l, m),
        other => {
            return Err(Error::Rank {
                expected: 2,
                got: other.to_vec(),
            })
        }
    };
    Ok((0..m)
        .map(|c| (0..l).map(|t| x.data()[t * m + c]).collect())
        .collect())
}

/// Inverse of [`split_channels`]: series become columns.
pub fn combine_channels(series: &[Vec<f64>]) -> Result<Tensor> {
    let m = series.len();
    let t = series.first().map_or(0, |s| s.len());
    if series.iter().any(|s| s.len() != t) {
        return Err(Error::Dimension("channels differ in length".into()));
    }
    Tensor::new(vec![t, m], (0..t * m).map(|i| series[i % m][i / m]).collect())
}

/// `patches · W_p + W_pos`.
pub fn embed(patches: &Tensor, w_p: &Tensor, w_pos: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(patches.clone());
    let wp = tape.constant(w_p.clone());
    let pos = tape.constant(w_pos.clone());
    let e = tape.matmul(x, wp)?;
    let n = tape.shape(e)[0];
    let d = tape.shape(e)[1];
    let e3 = tape.reshape(e, &[1, n, d])?;
    let out = tape.add_broadcast(e3, pos)?;
    let out = tape.reshape(out, &[n, d])?;
    Ok(tape.value(out).clone())
}

/// Feature-mixing (`D → D`) then patch-mixing (`N → N`) layer with a residual.
/// A disabled layer acts as the identity map.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub intra: Option<KanLayer>,
    pub inter: Option<KanLayer>,
}

impl Block {
    /// `x: [batch·N, D]` → `[batch·N, D]`.
    fn forward_on(
        &self,
        tape: &mut Tape,
        x: Var,
        batch: usize,
        n: usize,
        d: usize,
        intra_w: Option<Var>,
        inter_w: Option<Var>,
    ) -> Result<Var> {
        let y = match (&self.intra, intra_w) {
            (Some(layer), Some(w)) => layer.forward_on(tape, x, w)?,
            _ => x,
        };
        let z = match (&self.inter, inter_w) {
            (Some(layer), Some(w)) => {
                let y3 = tape.reshape(y, &[batch, n, d])?;
                let yt = tape.swap_last2(y3)?;
                let yt = tape.reshape(yt, &[batch * d, n])?;
                let zt = layer.forward_on(tape, yt, w)?;
                let zt = tape.reshape(zt, &[batch, d, n])?;
                let z = tape.swap_last2(zt)?;
                tape.reshape(z, &[batch * n, d])?
            }
            _ => y,
        };
        tape.add(z, x)
    }

    /// Tape-free block evaluation on one embedded sequence `[N, D]`.
    pub fn forward(&self, x_d: &Tensor) -> Result<Tensor> {
        let (n, d) = match x_d.shape() {
            &[n, d] => (n, d),
            other => {
                return Err(Error::Rank {
                    expected: 2,
                    got: other.to_vec(),
                })
            }
        };
        let mut tape = Tape::new();
        let x = tape.constant(x_d.clone());
        let iw = self.intra.as_ref().map(|l| tape.constant(l.weights().clone()));
        let ew = self.inter.as_ref().map(|l| tape.constant(l.weights().clone()));
        let out = self.forward_on(&mut tape, x, 1, n, d, iw, ew)?;
        Ok(tape.value(out).clone())
    }
}

/// Leaf handles of every parameter on a tape, in [`HaKanModel::named_params`] order.
#[derive(Clone, Debug)]
pub struct ParamVars(pub Vec<Var>);

#[derive(Clone, Debug, PartialEq)]
pub struct HaKanModel {
    config: ModelConfig,
    w_p: Tensor,
    w_pos: Tensor,
    blocks: Vec<Block>,
    w_down: Tensor,
    w_up: Tensor,
}

fn uniform_tensor<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    let dist = Uniform::new(-bound, bound).expect("positive bound");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

impl HaKanModel {
    /// Model with every parameter zero.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let basis = config.build_basis()?;
        let (p, d, n, h, t) = (
            config.patch_len,
            config.d_model,
            config.num_patches(),
            config.bottleneck,
            config.horizon,
        );
        let blocks = (0..config.blocks)
            .map(|_| Block {
                intra: config
                    .intra
                    .then(|| KanLayer::zeros(d, d, basis.clone(), config.mode)),
                inter: config
                    .inter
                    .then(|| KanLayer::zeros(n, n, basis.clone(), config.mode)),
            })
            .collect();
        Ok(HaKanModel {
            config: config.clone(),
            w_p: Tensor::zeros(&[p, d]),
            w_pos: Tensor::zeros(&[n, d]),
            blocks,
            w_down: Tensor::zeros(&[h, n * d]),
            w_up: Tensor::zeros(&[t, h]),
        })
    }

    /// Randomly initialized model, fully determined by `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = HaKanModel::zeros(config)?;
        let basis = config.build_basis()?;
        let (p, d, n, h, t) = (
            config.patch_len,
            config.d_model,
            config.num_patches(),
            config.bottleneck,
            config.horizon,
        );
        model.w_p = uniform_tensor(&[p, d], (1.0 / p as f64).sqrt(), &mut rng);
        model.w_pos = uniform_tensor(&[n, d], 0.02, &mut rng);
        for block in &mut model.blocks {
            if block.intra.is_some() {
                block.intra = Some(KanLayer::init(
                    d,
                    d,
                    basis.clone(),
                    config.mode,
                    config.init_scale,
                    &mut rng,
                ));
            }
            if block.inter.is_some() {
                block.inter = Some(KanLayer::init(
                    n,
                    n,
                    basis.clone(),
                    config.mode,
                    config.init_scale,
                    &mut rng,
                ));
            }
        }
        model.w_down = uniform_tensor(&[h, n * d], (1.0 / (n * d) as f64).sqrt(), &mut rng);
        model.w_up = uniform_tensor(&[t, h], (1.0 / h as f64).sqrt(), &mut rng);
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    /// Sets the recorded channel count without touching any parameter.
    pub fn set_channels(&mut self, m: usize) {
        self.config.channels = m;
    }

    /// Every parameter with its checkpoint key.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("w_p".to_string(), &self.w_p), ("w_pos".to_string(), &self.w_pos)];
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(l) = &b.intra {
                out.push((format!("block.{i}.intra.gamma"), l.weights()));
            }
            if let Some(l) = &b.inter {
                out.push((format!("block.{i}.inter.gamma"), l.weights()));
            }
        }
        out.push(("w_down".to_string(), &self.w_down));
        out.push(("w_up".to_string(), &self.w_up));
        out
    }

    /// Mutable parameters in the same order as [`Self::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.w_p, &mut self.w_pos];
        for b in &mut self.blocks {
            if let Some(l) = &mut b.intra {
                out.push(l.weights_mut());
            }
            if let Some(l) = &mut b.inter {
                out.push(l.weights_mut());
            }
        }
        out.push(&mut self.w_down);
        out.push(&mut self.w_up);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Replaces the named parameter; the shape must match.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let idx = self
            .named_params()
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        let slot = self.params_mut().into_iter().nth(idx).unwrap();
        if slot.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` expects shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    /// Registers all parameters on `tape` as trainable (or constant) leaves.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        ParamVars(
            self.named_params()
                .into_iter()
                .map(|(_, t)| {
                    if trainable {
                        tape.param(t.clone())
                    } else {
                        tape.constant(t.clone())
                    }
                })
                .collect(),
        )
    }

    /// Normalizes each series and stacks its patches into `[batch·N, P]`.
    pub fn prepare(&self, series: &[&[f64]]) -> Result<(Tensor, Vec<RevInState>)> {
        let cfg = &self.config;
        let (n, p) = (cfg.num_patches(), cfg.patch_len);
        let mut data = Vec::with_capacity(series.len() * n * p);
        let mut states = Vec::with_capacity(series.len());
        for s in series {
            if s.len() != cfg.lookback {
                return Err(Error::Dimension(format!(
                    "expected look-back window of {}, got {}",
                    cfg.lookback,
                    s.len()
                )));
            }
            let (z, st) = revin_normalize(s, cfg.revin_eps);
            let patches = make_patches(&z, p, cfg.stride)?;
            data.extend_from_slice(patches.data());
            states.push(st);
        }
        if series.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        Ok((Tensor::new(vec![series.len() * n, p], data)?, states))
    }

    /// Records the forward pass for a batch of look-back series and returns
    /// the denormalized `[batch, T]` forecast. `trace`, when given, receives
    /// the per-series shape of every stage.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        params: &ParamVars,
        series: &[&[f64]],
        mut trace: Option<&mut Vec<Vec<usize>>>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let (n, d, h, t) = (cfg.num_patches(), cfg.d_model, cfg.bottleneck, cfg.horizon);
        let batch = series.len();
        let (patches, states) = self.prepare(series)?;
        let mut record = |tape: &Tape, v: Var, expect: &[usize]| -> Result<()> {
            let got = tape.shape(v);
            let per: Vec<usize> = if got.len() == 2 && got[0] == batch * expect[0] && expect.len() == 2 {
                vec![got[0] / batch, got[1]]
            } else if got.len() == 2 && got[0] == batch {
                vec![got[1]]
            } else {
                got.to_vec()
            };
            if per != expect {
                return Err(Error::Contract(format!(
                    "internal shape invariant: expected {expect:?} per series, got {got:?}"
                )));
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(per);
            }
            Ok(())
        };

        let mut pv = params.0.iter().copied();
        let w_p = pv.next().unwrap();
        let w_pos = pv.next().unwrap();

        let x = tape.constant(patches);
        record(tape, x, &[n, cfg.patch_len])?;
        let e = tape.matmul(x, w_p)?;
        let e = tape.reshape(e, &[batch, n, d])?;
        let e = tape.add_broadcast(e, w_pos)?;
        let mut xk = tape.reshape(e, &[batch * n, d])?;
        record(tape, xk, &[n, d])?;

        for block in &self.blocks {
            let iw = block.intra.as_ref().map(|_| pv.next().unwrap());
            let ew = block.inter.as_ref().map(|_| pv.next().unwrap());
            xk = block.forward_on(tape, xk, batch, n, d, iw, ew)?;
            record(tape, xk, &[n, d])?;
        }

        let w_down = pv.next().unwrap();
        let w_up = pv.next().unwrap();
        let xf = tape.reshape(xk, &[batch, n * d])?;
        record(tape, xf, &[n * d])?;
        let hid = tape.matmul_nt(xf, w_down)?;
        record(tape, hid, &[h])?;
        let out = tape.matmul_nt(hid, w_up)?;
        record(tape, out, &[t])?;

        let scale: Vec<f64> = states.iter().map(|s| s.std + s.eps).collect();
        let shift: Vec<f64> = states.iter().map(|s| s.mean).collect();
        tape.row_affine(out, &scale, &shift)
    }

    /// Tape-free forecasts for a batch of look-back series.
    pub fn predict_batch(&self, series: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let params = self.register(&mut tape, false);
        let out = self.forward_on(&mut tape, &params, series, None)?;
        let t = self.config.horizon;
        Ok(tape.value(out).data().chunks_exact(t).map(|c| c.to_vec()).collect())
    }

    /// Forecast one univariate series of length `L`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_batch(&[x])?.pop().unwrap())
    }

    /// Per-series stage shapes for one forward pass.
    pub fn shape_trace(&self, x: &[f64]) -> Result<Vec<Vec<usize>>> {
        let mut tape = Tape::new();
        let params = self.register(&mut tape, false);
        let mut trace = Vec::new();
        self.forward_on(&mut tape, &params, &[x], Some(&mut trace))?;
        Ok(trace)
    }

    /// `[L, M]` look-back window to `[T, M]` forecast, one channel at a time
    /// through the shared backbone.
    pub fn forecast(&self, window: &Tensor) -> Result<Tensor> {
        let series = split_channels(window)?;
        let refs: Vec<&[f64]> = series.iter().map(|s| s.as_slice()).collect();
        combine_channels(&self.predict_batch(&refs)?)
    }
}
