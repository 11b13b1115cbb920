//! Flat `key = value` run configuration shared by every subcommand.

use std::fmt::Write as _;
use std::path::Path;

use geoscore::evaluation::ScoringSettings;
use geoscore::optim::{OptimizerHyper, OptimizerKind};
use geoscore::scoring::{GeoScoreMode, DEFAULT_ALPHA, DEFAULT_DSC_QUANTILE, DEFAULT_LAMBDA};
use geoscore::synthdata::{LesionKind, PhantomConfig};
use geoscore::{NetworkConfig, SplitSpec, Stage, TrainConfig};

/// Every key the config file understands, in echo order.
pub const KEYS: &[&str] = &[
    "seed",
    "side",
    "filters",
    "latent_dim",
    "batch_size",
    "steps",
    "optimizer",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "epsilon",
    "beta_kl",
    "checkpoint_interval",
    "freeze_geo",
    "lambda",
    "alpha",
    "geo_score",
    "dsc_quantile",
    "train",
    "validation",
    "test_normal",
    "test_abnormal",
    "lesion_kinds",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub side: usize,
    pub filters: Vec<usize>,
    pub latent_dim: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub optimizer: OptimizerHyper,
    pub epsilon: f64,
    pub beta_kl: f64,
    pub checkpoint_interval: u64,
    pub freeze_geo: bool,
    pub lambda: f64,
    pub alpha: f64,
    pub geo_score: GeoScoreMode,
    pub dsc_quantile: f64,
    pub splits: SplitSpec,
    pub lesion_kinds: Vec<LesionKind>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetworkConfig::default();
        let train = TrainConfig::default();
        Self {
            seed: train.seed,
            side: net.input_side,
            filters: net.filters,
            latent_dim: net.latent_dim,
            batch_size: train.batch_size,
            steps: train.steps,
            optimizer: train.optimizer,
            epsilon: train.epsilon,
            beta_kl: train.beta_kl,
            checkpoint_interval: train.checkpoint_interval,
            freeze_geo: train.freeze_geo,
            lambda: DEFAULT_LAMBDA,
            alpha: DEFAULT_ALPHA,
            geo_score: GeoScoreMode::MeanProb,
            dsc_quantile: DEFAULT_DSC_QUANTILE,
            splits: SplitSpec::default(),
            lesion_kinds: LesionKind::ALL.to_vec(),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("invalid value {value:?} for {key}: {e}"))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|v| num(key, v.trim()))
        .collect()
}

fn lesion(value: &str) -> Result<LesionKind, String> {
    LesionKind::ALL
        .into_iter()
        .find(|k| k.to_string() == value)
        .ok_or_else(|| format!("unknown lesion kind {value:?}"))
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key from its textual value. Errors name the offending key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let value = value.trim();
        match key {
            "seed" => self.seed = num(key, value)?,
            "side" => self.side = num(key, value)?,
            "filters" => self.filters = list(key, value)?,
            "latent_dim" => self.latent_dim = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "optimizer" => {
                self.optimizer.kind = match value {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    other => return Err(format!("unknown optimizer {other:?}")),
                }
            }
            "lr" => self.optimizer.lr = num(key, value)?,
            "beta1" => self.optimizer.beta1 = num(key, value)?,
            "beta2" => self.optimizer.beta2 = num(key, value)?,
            "adam_eps" => self.optimizer.eps = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "beta_kl" => self.beta_kl = num(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = num(key, value)?,
            "freeze_geo" => self.freeze_geo = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "geo_score" => self.geo_score = value.parse()?,
            "dsc_quantile" => self.dsc_quantile = num(key, value)?,
            "train" => self.splits.train = num(key, value)?,
            "validation" => self.splits.validation = num(key, value)?,
            "test_normal" => self.splits.test_normal = num(key, value)?,
            "test_abnormal" => self.splits.test_abnormal = num(key, value)?,
            "lesion_kinds" => {
                self.lesion_kinds = value.split(',').map(|v| lesion(v.trim())).collect::<Result<_, _>>()?
            }
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value, got {raw:?}", i + 1))?;
            self.set(k.trim(), v).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        self.apply_text(&text)
            .map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn get(&self, key: &str) -> String {
        match key {
            "seed" => self.seed.to_string(),
            "side" => self.side.to_string(),
            "filters" => join(&self.filters),
            "latent_dim" => self.latent_dim.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "steps" => self.steps.to_string(),
            "optimizer" => match self.optimizer.kind {
                OptimizerKind::Adam => "adam".into(),
                OptimizerKind::Sgd => "sgd".into(),
            },
            "lr" => self.optimizer.lr.to_string(),
            "beta1" => self.optimizer.beta1.to_string(),
            "beta2" => self.optimizer.beta2.to_string(),
            "adam_eps" => self.optimizer.eps.to_string(),
            "epsilon" => self.epsilon.to_string(),
            "beta_kl" => self.beta_kl.to_string(),
            "checkpoint_interval" => self.checkpoint_interval.to_string(),
            "freeze_geo" => self.freeze_geo.to_string(),
            "lambda" => self.lambda.to_string(),
            "alpha" => self.alpha.to_string(),
            "geo_score" => self.geo_score.to_string(),
            "dsc_quantile" => self.dsc_quantile.to_string(),
            "train" => self.splits.train.to_string(),
            "validation" => self.splits.validation.to_string(),
            "test_normal" => self.splits.test_normal.to_string(),
            "test_abnormal" => self.splits.test_abnormal.to_string(),
            "lesion_kinds" => join(&self.lesion_kinds),
            other => unreachable!("unknown key {other}"),
        }
    }

    /// The effective configuration in the same format `apply_text` reads.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k));
        }
        s
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            input_side: self.side,
            filters: self.filters.clone(),
            latent_dim: self.latent_dim,
            num_classes: geoscore::geoxform::NUM_CLASSES,
        }
    }

    pub fn phantom(&self) -> PhantomConfig {
        PhantomConfig {
            side: self.side,
            splits: self.splits.clone(),
            lesion_kinds: self.lesion_kinds.clone(),
            seed: self.seed,
            ..PhantomConfig::default()
        }
    }

    pub fn train(&self, stage: Stage, threads: usize) -> TrainConfig {
        TrainConfig {
            stage,
            batch_size: self.batch_size,
            steps: self.steps,
            optimizer: self.optimizer,
            epsilon: self.epsilon,
            beta_kl: self.beta_kl,
            seed: self.seed,
            checkpoint_interval: self.checkpoint_interval,
            input_side: self.side,
            freeze_geo: self.freeze_geo,
            threads,
        }
    }

    pub fn scoring(&self, threads: usize) -> ScoringSettings {
        ScoringSettings {
            alpha: self.alpha,
            lambda: self.lambda,
            geo_mode: self.geo_score,
            dsc_quantile: self.dsc_quantile,
            threads,
        }
    }

    /// Validates every consumed value before any command has side effects.
    pub fn validate(&self) -> geoscore::Result<()> {
        self.network().validate()?;
        self.phantom().validate()?;
        self.train(Stage::Pretrain, 1).validate()?;
        let bad = |m: String| Err(geoscore::Error::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.dsc_quantile > 0.0 && self.dsc_quantile < 1.0) {
            return bad(format!("dsc_quantile must lie in (0, 1), got {}", self.dsc_quantile));
        }
        Ok(())
    }
}
