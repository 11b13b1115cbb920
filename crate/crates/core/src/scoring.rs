//! Per-slice anomaly scores.
//!
//! * `s_r = α · mean((x − f(x))²)` from a deterministic (`z = μ`) pass.
//! * `s_g` runs the geometric head on all 20 transformed copies of the
//!   slice and measures how badly it recognizes the transform that was
//!   applied: `1 − mean_k p_k(k)` by default, or the mean negative
//!   log-likelihood.
//! * Both channels are min-max normalized against validation normals,
//!   clamped to `[0, 1]`, and blended as `(1 − λ)·s_g + λ·s_r`.

use std::fmt;
use std::str::FromStr;

use crate::datamodel::{AnomalyMask, Label, SliceImage};
use crate::error::{Error, Result};
use crate::geoxform::{enumerate_classes, transform_grid};
use crate::losses::{log_softmax, mse};
use crate::network::{geo_logits, reconstruct, ModelParams};

/// Default blend weight between the geometric and reconstruction channels.
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_DSC_QUANTILE: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GeoScoreMode {
    /// `1 − mean_k p_k`, in `[0, 1]`.
    #[default]
    MeanProb,
    /// `mean_k −ln p_k`, in `[0, ∞)`.
    Nll,
}

impl fmt::Display for GeoScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeoScoreMode::MeanProb => "meanprob",
            GeoScoreMode::Nll => "nll",
        })
    }
}

impl FromStr for GeoScoreMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "meanprob" => Ok(GeoScoreMode::MeanProb),
            "nll" => Ok(GeoScoreMode::Nll),
            other => Err(format!("unknown geo score mode {other:?} (meanprob|nll)")),
        }
    }
}

/// Returns `(s_r, residual_map)` where the map holds per-pixel squared error.
pub fn score_reconstruction(params: &ModelParams, x: &SliceImage, alpha: f64) -> Result<(f64, Vec<f64>)> {
    let recon = reconstruct(params, x.pixels())?;
    let residual: Vec<f64> = x
        .pixels()
        .iter()
        .zip(&recon)
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    let s_r = alpha * mse(x.pixels(), &recon)?;
    Ok((s_r, residual))
}

/// Combines per-class correct-label log-probabilities into `s_g`.
pub fn geo_score_from_log_probs(correct_log_probs: &[f64], mode: GeoScoreMode) -> f64 {
    let k = correct_log_probs.len() as f64;
    match mode {
        GeoScoreMode::MeanProb => 1.0 - correct_log_probs.iter().map(|lp| lp.exp()).sum::<f64>() / k,
        GeoScoreMode::Nll => -correct_log_probs.iter().sum::<f64>() / k,
    }
}

/// `1 − (1/K) Σ_k p_k` for probabilities of the correct transform.
pub fn geo_score_from_probs(correct_probs: &[f64]) -> f64 {
    1.0 - correct_probs.iter().sum::<f64>() / correct_probs.len() as f64
}

pub fn score_geometric(params: &ModelParams, x: &SliceImage, mode: GeoScoreMode) -> Result<f64> {
    let mut correct = Vec::with_capacity(crate::geoxform::NUM_CLASSES);
    for class in enumerate_classes() {
        let xt = transform_grid(x.pixels(), x.side(), class);
        let logits = geo_logits(params, &xt)?;
        correct.push(log_softmax(&logits)[class.index()]);
    }
    Ok(geo_score_from_log_probs(&correct, mode))
}

/// `(1 − λ)·s_g + λ·s_r`.
pub fn combined_score(s_g_norm: f64, s_r_norm: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok((1.0 - lambda) * s_g_norm + lambda * s_r_norm)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

/// Min-max ranges of both channels on validation normals plus the blend
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub s_g_min: f64,
    pub s_g_max: f64,
    pub s_r_min: f64,
    pub s_r_max: f64,
    pub alpha: f64,
    pub lambda: f64,
}

fn normalize(v: f64, min: f64, max: f64) -> f64 {
    if max > min {
        ((v - min) / (max - min)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

impl Calibration {
    /// `scores` are `(s_g, s_r)` pairs from the validation split.
    pub fn fit(scores: &[(f64, f64)], alpha: f64, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if !(alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be > 0, got {alpha}")));
        }
        if scores.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "calibration needs >= 2 validation scores, got {}",
                scores.len()
            )));
        }
        let range = |f: fn(&(f64, f64)) -> f64| {
            scores
                .iter()
                .map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let (s_g_min, s_g_max) = range(|p| p.0);
        let (s_r_min, s_r_max) = range(|p| p.1);
        if s_g_max == s_g_min {
            log::warn!("geometric score is constant on validation ({s_g_min}); channel maps to 0");
        }
        if s_r_max == s_r_min {
            log::warn!("reconstruction score is constant on validation ({s_r_min}); channel maps to 0");
        }
        Ok(Self {
            s_g_min,
            s_g_max,
            s_r_min,
            s_r_max,
            alpha,
            lambda,
        })
    }

    pub fn normalize_geo(&self, s_g: f64) -> f64 {
        normalize(s_g, self.s_g_min, self.s_g_max)
    }

    pub fn normalize_rec(&self, s_r: f64) -> f64 {
        normalize(s_r, self.s_r_min, self.s_r_max)
    }

    /// Returns `(s_g_norm, s_r_norm, combined)`.
    pub fn apply(&self, s_g: f64, s_r: f64) -> (f64, f64, f64) {
        let g = self.normalize_geo(s_g);
        let r = self.normalize_rec(s_r);
        (g, r, (1.0 - self.lambda) * g + self.lambda * r)
    }
}

/// Pixels whose residual exceeds `threshold`.
pub fn segment_anomaly(residual_map: &[f64], side: usize, threshold: f64) -> Result<AnomalyMask> {
    if threshold < 0.0 || threshold.is_nan() {
        return Err(Error::InvalidConfig(format!("threshold must be >= 0, got {threshold}")));
    }
    AnomalyMask::new(side, residual_map.iter().map(|&r| r > threshold).collect())
}

/// Linear-interpolated `q`-quantile of every pixel residual in `maps`.
pub fn residual_threshold<'a>(maps: impl IntoIterator<Item = &'a [f64]>, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidConfig(format!("quantile must lie in [0, 1], got {q}")));
    }
    let mut all: Vec<f64> = maps.into_iter().flatten().copied().collect();
    if all.is_empty() {
        return Err(Error::InvalidConfig("no residuals to threshold".into()));
    }
    all.sort_by(f64::total_cmp);
    let pos = q * (all.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(all[lo] + (all[hi] - all[lo]) * (pos - lo as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub slice_id: String,
    pub label: Label,
    pub s_g: f64,
    pub s_r: f64,
    pub s_g_norm: f64,
    pub s_r_norm: f64,
    pub combined: f64,
}

pub fn scores_to_tsv(records: &[ScoreRecord]) -> String {
    let mut s = String::from("slice_id\tlabel\ts_g\ts_r\ts_g_norm\ts_r_norm\tcombined\n");
    for r in records {
        s.push_str(&format!(
            "{}\t{}\t{:.9e}\t{:.9e}\t{:.9}\t{:.9}\t{:.9}\n",
            r.slice_id, r.label, r.s_g, r.s_r, r.s_g_norm, r.s_r_norm, r.combined
        ));
    }
    s
}
