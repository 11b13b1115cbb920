//! Slice-level detection metrics (AUROC, AUPR) and pixel-level overlap (DSC).

use std::fmt;

use crate::datamodel::AnomalyMask;
use crate::error::{Error, Result};

/// Scores with binary labels (`true` = abnormal, the positive class).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", scores.len()),
                actual: format!("{}", labels.len()),
            });
        }
        if scores.is_empty() {
            return Err(Error::MetricUndefined("no scores".into()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::MetricUndefined("NaN score".into()));
        }
        Ok(Self { scores, labels })
    }

    /// Labels given as 0 (normal) / 1 (abnormal).
    pub fn from_binary(scores: Vec<f64>, labels: &[u8]) -> Result<Self> {
        Self::new(scores, labels.iter().map(|&l| l != 0).collect())
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn negatives(&self) -> usize {
        self.labels.len() - self.positives()
    }

    /// Cumulative (tp, fp) after each group of tied scores, highest first.
    fn descending_sweep(&self) -> Vec<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut points = Vec::new();
        let (mut tp, mut fp) = (0, 0);
        for (i, &idx) in order.iter().enumerate() {
            if self.labels[idx] {
                tp += 1;
            } else {
                fp += 1;
            }
            let last_of_group = order
                .get(i + 1)
                .is_none_or(|&next| self.scores[next] != self.scores[idx]);
            if last_of_group {
                points.push((tp, fp));
            }
        }
        points
    }
}

/// Area under the ROC curve by threshold sweep with trapezoids; tied
/// positive/negative pairs count one half.
pub fn auroc(ls: &LabeledScores) -> Result<f64> {
    let (p, n) = (ls.positives(), ls.negatives());
    if p == 0 || n == 0 {
        return Err(Error::MetricUndefined(
            "AUROC needs at least one normal and one abnormal score".into(),
        ));
    }
    let mut area = 0.0;
    let (mut tp_prev, mut fp_prev) = (0usize, 0usize);
    for (tp, fp) in ls.descending_sweep() {
        area += (fp - fp_prev) as f64 * (tp + tp_prev) as f64 / 2.0;
        tp_prev = tp;
        fp_prev = fp;
    }
    Ok(area / (p as f64 * n as f64))
}

/// Step-wise area under the precision-recall curve: the sum of
/// precision × Δrecall over descending distinct thresholds.
pub fn aupr(ls: &LabeledScores) -> Result<f64> {
    let p = ls.positives();
    if p == 0 {
        return Err(Error::MetricUndefined("AUPR needs at least one abnormal score".into()));
    }
    let mut area = 0.0;
    let mut tp_prev = 0usize;
    for (tp, fp) in ls.descending_sweep() {
        if tp > tp_prev {
            area += (tp as f64 / (tp + fp) as f64) * ((tp - tp_prev) as f64 / p as f64);
        }
        tp_prev = tp;
    }
    Ok(area)
}

/// Dice similarity `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dsc(pred: &AnomalyMask, truth: &AnomalyMask) -> Result<f64> {
    if pred.side() != truth.side() {
        return Err(Error::ShapeMismatch {
            expected: format!("{0}x{0} mask", truth.side()),
            actual: format!("{0}x{0}", pred.side()),
        });
    }
    let inter = pred
        .bits()
        .iter()
        .zip(truth.bits())
        .filter(|(a, b)| **a && **b)
        .count();
    let total = pred.popcount() + truth.popcount();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Mean and population standard deviation.
pub fn summarize(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::MetricUndefined("cannot summarize an empty list".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub auroc: f64,
    pub aupr: f64,
    pub dsc_mean: f64,
    pub dsc_std: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .rows
            .iter()
            .map(|r| r.method.len())
            .max()
            .unwrap_or(0)
            .max("method".len());
        writeln!(f, "| {:<width$} | AUROC | AUPR  | DSC           |", "method")?;
        writeln!(f, "|-{}-|-------|-------|---------------|", "-".repeat(width))?;
        for r in &self.rows {
            writeln!(
                f,
                "| {:<width$} | {:.3} | {:.3} | {:.3} ± {:.3} |",
                r.method, r.auroc, r.aupr, r.dsc_mean, r.dsc_std
            )?;
        }
        Ok(())
    }
}

impl EvalReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("method\tauroc\taupr\tdsc_mean\tdsc_std\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                r.method, r.auroc, r.aupr, r.dsc_mean, r.dsc_std
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ls(scores: &[f64], labels: &[u8]) -> LabeledScores {
        LabeledScores::from_binary(scores.to_vec(), labels).unwrap()
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&ls(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1])).unwrap(), 0.75);
        assert_eq!(auroc(&ls(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1])).unwrap(), 1.0);
        assert_eq!(auroc(&ls(&[0.3; 5], &[0, 1, 0, 1, 1])).unwrap(), 0.5);
        assert!(auroc(&ls(&[0.3, 0.4], &[1, 1])).is_err());
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&ls(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1])).unwrap(), 1.0);
        assert_eq!(aupr(&ls(&[0.9, 0.8, 0.7, 0.1], &[0, 0, 0, 1])).unwrap(), 0.25);
        let v = aupr(&ls(&[0.9, 0.8, 0.7], &[1, 0, 1])).unwrap();
        assert!((v - 5.0 / 6.0).abs() < 1e-15);
        assert!(aupr(&ls(&[0.1, 0.2], &[0, 0])).is_err());
    }

    #[test]
    fn dsc_examples() {
        let m = |bits: &[u8]| AnomalyMask::new(2, bits.iter().map(|&b| b != 0).collect()).unwrap();
        assert_eq!(dsc(&m(&[1, 1, 0, 0]), &m(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(dsc(&m(&[1, 1, 0, 0]), &m(&[0, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(dsc(&m(&[1, 1, 1, 1]), &m(&[1, 1, 0, 0])).unwrap(), 2.0 * 2.0 / 6.0);
        assert_eq!(dsc(&m(&[0, 0, 0, 0]), &m(&[0, 0, 0, 0])).unwrap(), 1.0);
        assert!(dsc(&m(&[0; 4]), &AnomalyMask::empty(4)).is_err());
    }

    #[test]
    fn summary_examples() {
        assert_eq!(summarize(&[0.5, 0.5]).unwrap(), (0.5, 0.0));
        assert_eq!(summarize(&[0.0, 1.0]).unwrap(), (0.5, 0.5));
        let (m, s) = summarize(&[0.1, 0.2, 0.3]).unwrap();
        assert!((m - 0.2).abs() < 1e-15);
        assert!((s - (2.0f64 / 300.0).sqrt()).abs() < 1e-15);
        assert!((s - 0.0816).abs() < 1e-4);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn nan_scores_are_rejected() {
        assert!(LabeledScores::new(vec![f64::NAN, 0.2], vec![true, false]).is_err());
    }

    #[test]
    fn report_renders_all_columns() {
        let report = EvalReport {
            rows: vec![ReportRow {
                method: "multi-task".into(),
                auroc: 0.9,
                aupr: 0.8,
                dsc_mean: 0.4,
                dsc_std: 0.1,
            }],
        };
        let text = report.to_string();
        assert!(text.contains("AUROC") && text.contains("AUPR") && text.contains("DSC"));
        assert!(text.contains("0.400 ± 0.100"));
    }
}
