//! Scores validation and test slices, calibrates on validation normals and
//! produces one row of the comparison table.

use rayon::prelude::*;

use crate::datamodel::{load_mask, load_slice, AnomalyMask, DatasetManifest, Label, SliceImage, Split};
use crate::error::{Error, Result};
use crate::metrics::{aupr, auroc, dsc, summarize, LabeledScores, ReportRow};
use crate::network::ModelParams;
use crate::scoring::{
    residual_threshold, score_geometric, score_reconstruction, segment_anomaly, Calibration,
    GeoScoreMode, ScoreRecord, DEFAULT_ALPHA, DEFAULT_DSC_QUANTILE, DEFAULT_LAMBDA,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringSettings {
    pub alpha: f64,
    pub lambda: f64,
    pub geo_mode: GeoScoreMode,
    pub dsc_quantile: f64,
    pub threads: usize,
}

impl Default for ScoringSettings {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            lambda: DEFAULT_LAMBDA,
            geo_mode: GeoScoreMode::MeanProb,
            dsc_quantile: DEFAULT_DSC_QUANTILE,
            threads: 1,
        }
    }
}

/// Raw channel scores of one slice plus its residual map.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceScore {
    pub s_g: f64,
    pub s_r: f64,
    pub residual: Vec<f64>,
}

pub fn score_slice(params: &ModelParams, x: &SliceImage, settings: &ScoringSettings) -> Result<SliceScore> {
    let (s_r, residual) = score_reconstruction(params, x, settings.alpha)?;
    let s_g = score_geometric(params, x, settings.geo_mode)?;
    Ok(SliceScore { s_g, s_r, residual })
}

/// Scores slices in input order, in parallel when `settings.threads > 1`.
pub fn score_many(params: &ModelParams, xs: &[SliceImage], settings: &ScoringSettings) -> Result<Vec<SliceScore>> {
    if settings.threads <= 1 {
        return xs.iter().map(|x| score_slice(params, x, settings)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| xs.par_iter().map(|x| score_slice(params, x, settings)).collect())
}

#[derive(Debug, Clone)]
pub struct TestSlice {
    pub id: String,
    pub image: SliceImage,
    pub label: Label,
    pub mask: Option<AnomalyMask>,
}

/// Loads the test split with masks, using manifest image paths as ids.
pub fn load_test_slices(manifest: &DatasetManifest) -> Result<Vec<TestSlice>> {
    manifest
        .split(Split::Test)
        .map(|e| {
            let image = load_slice(&manifest.resolve(&e.image_path))?;
            let mask = match &e.mask_path {
                Some(m) => {
                    let mask = load_mask(&manifest.resolve(m))?;
                    if mask.side() != image.side() {
                        return Err(Error::ShapeMismatch {
                            expected: format!("{0}x{0} mask", image.side()),
                            actual: format!("{0}x{0}", mask.side()),
                        });
                    }
                    Some(mask)
                }
                None => None,
            };
            Ok(TestSlice {
                id: e.image_path.clone(),
                image,
                label: e.label,
                mask,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub row: ReportRow,
    pub records: Vec<ScoreRecord>,
    pub calibration: Calibration,
    pub dsc_threshold: f64,
    /// Per-slice DSC over abnormal test slices, in test order.
    pub dsc_values: Vec<f64>,
    /// AUROC of each raw channel on its own, for diagnostics.
    pub auroc_geo: f64,
    pub auroc_rec: f64,
}

/// Calibrates on `validation` scores and evaluates `test` scores. The two
/// score lists must follow the order of their slices.
pub fn evaluate_scores(
    method: &str,
    validation: &[SliceScore],
    test: &[TestSlice],
    test_scores: &[SliceScore],
    settings: &ScoringSettings,
) -> Result<Evaluation> {
    if test.len() != test_scores.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} test scores", test.len()),
            actual: format!("{}", test_scores.len()),
        });
    }
    let pairs: Vec<(f64, f64)> = validation.iter().map(|s| (s.s_g, s.s_r)).collect();
    let calibration = Calibration::fit(&pairs, settings.alpha, settings.lambda)?;

    let records: Vec<ScoreRecord> = test
        .iter()
        .zip(test_scores)
        .map(|(t, s)| {
            let (g, r, c) = calibration.apply(s.s_g, s.s_r);
            ScoreRecord {
                slice_id: t.id.clone(),
                label: t.label,
                s_g: s.s_g,
                s_r: s.s_r,
                s_g_norm: g,
                s_r_norm: r,
                combined: c,
            }
        })
        .collect();
    let labels: Vec<bool> = records.iter().map(|r| r.label == Label::Abnormal).collect();
    let combined = LabeledScores::new(records.iter().map(|r| r.combined).collect(), labels.clone())?;
    let geo_only = LabeledScores::new(records.iter().map(|r| r.s_g).collect(), labels.clone())?;
    let rec_only = LabeledScores::new(records.iter().map(|r| r.s_r).collect(), labels)?;

    let dsc_threshold = residual_threshold(
        validation.iter().map(|s| s.residual.as_slice()),
        settings.dsc_quantile,
    )?;
    let mut dsc_values = Vec::new();
    for (t, s) in test.iter().zip(test_scores) {
        if let (Label::Abnormal, Some(truth)) = (t.label, &t.mask) {
            let pred = segment_anomaly(&s.residual, t.image.side(), dsc_threshold)?;
            dsc_values.push(dsc(&pred, truth)?);
        }
    }
    let (dsc_mean, dsc_std) = if dsc_values.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        summarize(&dsc_values)?
    };

    Ok(Evaluation {
        row: ReportRow {
            method: method.to_string(),
            auroc: auroc(&combined)?,
            aupr: aupr(&combined)?,
            dsc_mean,
            dsc_std,
        },
        records,
        calibration,
        dsc_threshold,
        dsc_values,
        auroc_geo: auroc(&geo_only)?,
        auroc_rec: auroc(&rec_only)?,
    })
}

/// Scores both splits and evaluates.
pub fn evaluate(
    method: &str,
    params: &ModelParams,
    validation: &[SliceImage],
    test: &[TestSlice],
    settings: &ScoringSettings,
) -> Result<Evaluation> {
    let val_scores = score_many(params, validation, settings)?;
    let test_images: Vec<SliceImage> = test.iter().map(|t| t.image.clone()).collect();
    let test_scores = score_many(params, &test_images, settings)?;
    evaluate_scores(method, &val_scores, test, &test_scores, settings)
}
