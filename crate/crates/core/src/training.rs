//! Two-stage training: context-restoration pretraining followed by
//! multi-task fine-tuning.
//!
//! Each step samples a batch with replacement. All randomness (batch
//! indices, patch locations, transform labels, latent noise) is drawn from
//! generators derived from `(seed, stage, step, slot)`, and per-sample
//! gradients are reduced in slot order. A run is therefore a pure function
//! of `(seed, config, data)` regardless of the thread count, and a run
//! resumed from a checkpoint replays exactly the remaining steps.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::datamodel::SliceImage;
use crate::error::{Error, Result};
use crate::geoxform::{apply_transform, patch_swap, sample_random_class, TransformClass};
use crate::losses::{
    l_geo, l_geo_grad, l_kl, l_kl_grad, l_multitask, l_pretrain, mse, mse_grad, LossBreakdown,
    LossComponents,
};
use crate::network::{backward, forward_trace, sample_noise, Heads, ModelParams, OutputGrads};
use crate::optim::{step_in_place, OptimizerHyper, OptimizerState};
use crate::seeding::{derive_seed, derived_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Pretrain,
    Multitask,
}

impl Stage {
    fn tag(self) -> u64 {
        match self {
            Stage::Pretrain => 0x5052_4554,
            Stage::Multitask => 0x4d54_4c4b,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Multitask => "multitask",
        })
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "multitask" => Ok(Stage::Multitask),
            other => Err(format!("unknown stage {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub batch_size: usize,
    /// Total step budget; a resumed run stops when the step counter reaches it.
    pub steps: u64,
    pub optimizer: OptimizerHyper,
    /// Weight of the reconstruction term in the multi-task loss.
    pub epsilon: f64,
    pub beta_kl: f64,
    pub seed: u64,
    /// Invoke the checkpoint callback every this many steps (0 = never).
    pub checkpoint_interval: u64,
    pub input_side: usize,
    /// Multi-task stage only: keep the geometric head fixed, drop the
    /// geometric loss and train on untransformed slices (plain VAE arm).
    pub freeze_geo: bool,
    /// Worker threads for per-sample gradient evaluation.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Pretrain,
            batch_size: 16,
            steps: 1000,
            optimizer: OptimizerHyper::default(),
            epsilon: 1.0,
            beta_kl: 0.1,
            seed: 0,
            checkpoint_interval: 0,
            input_side: crate::datamodel::DEFAULT_SIDE,
            freeze_geo: false,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(self.beta_kl >= 0.0 && self.beta_kl.is_finite()) {
            return bad(format!("beta_kl must be >= 0, got {}", self.beta_kl));
        }
        if self.threads == 0 {
            return bad("threads must be >= 1".into());
        }
        self.optimizer.validate()
    }

    fn trains_geo(&self) -> bool {
        self.stage == Stage::Multitask && !self.freeze_geo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub step: u64,
    pub loss: LossBreakdown,
    /// Seconds since the start of the run; excluded from reproducibility checks.
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss.l_total).collect()
    }

    /// Mean of `field` over the last `window` records.
    pub fn tail_mean(&self, window: usize, field: impl Fn(&LossBreakdown) -> f64) -> Option<f64> {
        let n = self.records.len();
        if n == 0 || window == 0 {
            return None;
        }
        let tail = &self.records[n.saturating_sub(window)..];
        Some(tail.iter().map(|r| field(&r.loss)).sum::<f64>() / tail.len() as f64)
    }

    pub fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("step\tl_cr\tl_geo\tl_rec\tl_kl\tl_total\twall_time\n");
        for r in &self.records {
            let l = &r.loss;
            s.push_str(&format!(
                "{}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.3}\n",
                r.step, l.l_cr, l.l_geo, l.l_rec, l.l_kl, l.l_total, r.wall_time
            ));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_tsv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub step: u64,
}

impl TrainState {
    /// Fresh optimizer state at step 0.
    pub fn new(params: ModelParams) -> Self {
        let n = params.len();
        Self {
            params,
            optimizer: OptimizerState::new(n),
            step: 0,
        }
    }
}

struct SampleResult {
    l_main: f64,
    l_geo: f64,
    l_kl: f64,
    grad: Vec<f64>,
}

fn sample_step(
    params: &ModelParams,
    x: &SliceImage,
    config: &TrainConfig,
    inv_batch: f64,
    rng: &mut impl Rng,
) -> Result<SampleResult> {
    let latent = params.config().latent_dim;
    let mut grad = vec![0.0; params.len()];
    match config.stage {
        Stage::Pretrain => {
            let (corrupted, _) = patch_swap(x, rng)?;
            let eps = sample_noise(rng, latent);
            let tr = forward_trace(params, corrupted.pixels(), Some(eps), Heads::Vae)?;
            let l_cr = mse(x.pixels(), tr.reconstruction())?;
            let d_recon = mse_grad(x.pixels(), tr.reconstruction(), inv_batch);
            let (d_mu, d_lv) = l_kl_grad(&tr.mu, &tr.log_var, config.beta_kl * inv_batch);
            let grads = OutputGrads {
                d_recon: Some(&d_recon),
                d_mu: Some(&d_mu),
                d_log_var: Some(&d_lv),
                d_logits: None,
            };
            backward(params, &tr, &grads, &mut grad);
            Ok(SampleResult {
                l_main: l_cr,
                l_geo: 0.0,
                l_kl: l_kl(&tr.mu, &tr.log_var),
                grad,
            })
        }
        Stage::Multitask => {
            let with_geo = config.trains_geo();
            let class = if with_geo {
                sample_random_class(rng)
            } else {
                TransformClass::IDENTITY
            };
            let xt = apply_transform(x, class);
            let eps = sample_noise(rng, latent);
            let heads = if with_geo { Heads::Full } else { Heads::Vae };
            let tr = forward_trace(params, xt.pixels(), Some(eps), heads)?;
            let l_rec = mse(xt.pixels(), tr.reconstruction())?;
            let d_recon = mse_grad(xt.pixels(), tr.reconstruction(), config.epsilon * inv_batch);
            let (d_mu, d_lv) = l_kl_grad(&tr.mu, &tr.log_var, config.beta_kl * inv_batch);
            let (geo, d_logits) = if with_geo {
                (
                    l_geo(&tr.logits, class.index())?,
                    Some(l_geo_grad(&tr.logits, class.index(), inv_batch)),
                )
            } else {
                (0.0, None)
            };
            let grads = OutputGrads {
                d_recon: Some(&d_recon),
                d_mu: Some(&d_mu),
                d_log_var: Some(&d_lv),
                d_logits: d_logits.as_deref(),
            };
            backward(params, &tr, &grads, &mut grad);
            Ok(SampleResult {
                l_main: l_rec,
                l_geo: geo,
                l_kl: l_kl(&tr.mu, &tr.log_var),
                grad,
            })
        }
    }
}

/// Loss and summed gradient of one batch at the given step.
fn batch_gradient(
    params: &ModelParams,
    data: &[SliceImage],
    config: &TrainConfig,
    step: u64,
    pool: Option<&rayon::ThreadPool>,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let b = config.batch_size;
    let tag = config.stage.tag();
    let mut pick = derived_rng(config.seed, &[tag, step, u64::MAX]);
    let indices: Vec<usize> = (0..b).map(|_| pick.random_range(0..data.len())).collect();
    let inv_batch = 1.0 / b as f64;
    let run = |slot: usize| {
        let mut rng = derived_rng(config.seed, &[tag, step, slot as u64]);
        sample_step(params, &data[indices[slot]], config, inv_batch, &mut rng)
    };

    let mut grad = vec![0.0; params.len()];
    let (mut main, mut geo, mut kl) = (0.0, 0.0, 0.0);
    let mut absorb = |r: SampleResult| {
        main += r.l_main;
        geo += r.l_geo;
        kl += r.l_kl;
        grad.iter_mut().zip(&r.grad).for_each(|(a, g)| *a += g);
    };
    match pool {
        Some(pool) if config.threads > 1 => {
            let slots: Vec<usize> = (0..b).collect();
            for chunk in slots.chunks(config.threads) {
                let results: Vec<Result<SampleResult>> =
                    pool.install(|| chunk.par_iter().map(|&s| run(s)).collect());
                for r in results {
                    absorb(r?);
                }
            }
        }
        _ => {
            for slot in 0..b {
                absorb(run(slot)?);
            }
        }
    }
    let (main, geo, kl) = (main * inv_batch, geo * inv_batch, kl * inv_batch);
    let loss = match config.stage {
        Stage::Pretrain => l_pretrain(main, kl, config.beta_kl)?,
        Stage::Multitask if config.trains_geo() => l_multitask(
            LossComponents {
                l_geo: geo,
                l_rec: main,
                l_kl: kl,
            },
            config.epsilon,
            config.beta_kl,
        )?,
        Stage::Multitask => {
            let mut l = l_multitask(
                LossComponents {
                    l_geo: 0.0,
                    l_rec: main,
                    l_kl: kl,
                },
                config.epsilon,
                config.beta_kl,
            )?;
            l.l_geo = 0.0;
            l
        }
    };
    Ok((loss, grad))
}

/// Batch loss and its gradient w.r.t. every parameter for the batch drawn
/// at `step`. The draw (slices, transforms, patches, noise) depends only on
/// `config.seed` and `step`, so repeated calls see the same batch.
pub fn batch_loss_and_gradient(
    params: &ModelParams,
    data: &[SliceImage],
    config: &TrainConfig,
    step: u64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    batch_gradient(params, data, config, step, None)
}

/// Runs `config.stage` until the step counter reaches `config.steps`,
/// calling `on_checkpoint` every `checkpoint_interval` steps.
pub fn run_stage(
    mut state: TrainState,
    data: &[SliceImage],
    config: &TrainConfig,
    on_checkpoint: &mut dyn FnMut(&TrainState) -> Result<()>,
) -> Result<(TrainState, TrainLog)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    if state.params.config().input_side != config.input_side {
        return Err(Error::InvalidConfig(format!(
            "model input side {} differs from configured input side {}",
            state.params.config().input_side,
            config.input_side
        )));
    }
    if let Some(bad) = data.iter().find(|s| s.side() != config.input_side) {
        return Err(Error::ShapeMismatch {
            expected: format!("{0}x{0} slices", config.input_side),
            actual: format!("{0}x{0}", bad.side()),
        });
    }
    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let frozen = (!config.trains_geo()).then(|| state.params.layout().geo_head());

    let start = Instant::now();
    let mut log = TrainLog::default();
    while state.step < config.steps {
        let (loss, grad) = batch_gradient(&state.params, data, config, state.step, pool.as_ref())?;
        step_in_place(
            state.params.values_mut(),
            &grad,
            &mut state.optimizer,
            &config.optimizer,
            frozen.clone(),
        )?;
        log.records.push(TrainRecord {
            step: state.step,
            loss,
            wall_time: start.elapsed().as_secs_f64(),
        });
        state.step += 1;
        if config.checkpoint_interval > 0 && state.step % config.checkpoint_interval == 0 {
            on_checkpoint(&state)?;
        }
        if state.step % 50 == 0 {
            log::debug!("{} step {}: total {:.5}", config.stage, state.step, loss.l_total);
        }
    }
    Ok((state, log))
}

/// Context-restoration pretraining: reconstruct each slice from a
/// patch-swapped copy. The geometric head is never updated.
pub fn pretrain(state: TrainState, data: &[SliceImage], config: &TrainConfig) -> Result<(TrainState, TrainLog)> {
    let config = TrainConfig {
        stage: Stage::Pretrain,
        ..config.clone()
    };
    run_stage(state, data, &config, &mut |_| Ok(()))
}

/// Multi-task fine-tuning: predict a random transform of each slice and
/// reconstruct the transformed slice, updating all parameters jointly.
pub fn train_multitask(
    state: TrainState,
    data: &[SliceImage],
    config: &TrainConfig,
) -> Result<(TrainState, TrainLog)> {
    let config = TrainConfig {
        stage: Stage::Multitask,
        ..config.clone()
    };
    run_stage(state, data, &config, &mut |_| Ok(()))
}

/// Parses `GEOSCORE_THREADS`; unset or invalid means 1.
pub fn threads_from_env() -> usize {
    std::env::var("GEOSCORE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Seed under which a stage's step-`step` batch is drawn (exposed for
/// diagnostics).
pub fn step_seed(seed: u64, stage: Stage, step: u64) -> u64 {
    derive_seed(seed, &[stage.tag(), step, u64::MAX])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, NetworkConfig};

    fn blobs(n: usize, side: usize) -> Vec<SliceImage> {
        (0..n)
            .map(|k| {
                let c = side as f64 / 2.0;
                let px = (0..side * side)
                    .map(|i| {
                        let (r, col) = ((i / side) as f64, (i % side) as f64);
                        let d = ((r - c).powi(2) + (col - c - k as f64 * 0.3).powi(2)).sqrt();
                        if d < side as f64 * 0.4 {
                            0.5 + 0.3 * (r / side as f64)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                SliceImage::new(side, px).unwrap()
            })
            .collect()
    }

    fn cfg(stage: Stage, steps: u64) -> TrainConfig {
        TrainConfig {
            stage,
            batch_size: 4,
            steps,
            input_side: 16,
            seed: 21,
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_is_a_noop() {
        let params = init_params(1, &NetworkConfig::tiny()).unwrap();
        let (state, log) = pretrain(TrainState::new(params.clone()), &blobs(4, 16), &cfg(Stage::Pretrain, 0)).unwrap();
        assert_eq!(state.params, params);
        assert!(log.records.is_empty());
    }

    #[test]
    fn empty_data_is_rejected() {
        let params = init_params(1, &NetworkConfig::tiny()).unwrap();
        assert!(matches!(
            pretrain(TrainState::new(params), &[], &cfg(Stage::Pretrain, 3)),
            Err(Error::EmptyTrainSplit)
        ));
    }

    #[test]
    fn zero_epsilon_is_rejected() {
        let params = init_params(1, &NetworkConfig::tiny()).unwrap();
        let mut c = cfg(Stage::Multitask, 3);
        c.epsilon = 0.0;
        assert!(matches!(
            train_multitask(TrainState::new(params), &blobs(4, 16), &c),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn pretraining_leaves_geo_head_untouched() {
        let params = init_params(1, &NetworkConfig::tiny()).unwrap();
        let geo = params.layout().geo_head();
        let (state, _) = pretrain(TrainState::new(params.clone()), &blobs(4, 16), &cfg(Stage::Pretrain, 5)).unwrap();
        assert_eq!(state.params.values()[geo.clone()], params.values()[geo]);
        assert_ne!(state.params.values(), params.values());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let params = init_params(1, &NetworkConfig::tiny()).unwrap();
        let data = blobs(6, 16);
        let one = train_multitask(TrainState::new(params.clone()), &data, &cfg(Stage::Multitask, 4)).unwrap();
        let mut c = cfg(Stage::Multitask, 4);
        c.threads = 3;
        let three = train_multitask(TrainState::new(params), &data, &c).unwrap();
        assert_eq!(one.0.params, three.0.params);
        assert_eq!(one.1.totals(), three.1.totals());
    }

    #[test]
    fn log_tsv_has_one_row_per_step() {
        let params = init_params(1, &NetworkConfig::tiny()).unwrap();
        let (_, log) = train_multitask(TrainState::new(params), &blobs(4, 16), &cfg(Stage::Multitask, 3)).unwrap();
        let tsv = log.to_tsv();
        assert_eq!(tsv.lines().count(), 4);
        assert!(tsv.starts_with("step\tl_cr\tl_geo\tl_rec\tl_kl\tl_total"));
    }
}
