use rand::Rng;
use rand_chacha::ChaCha8Rng;

use geoscore::metrics::{aupr, auroc, LabeledScores};

/// Mann–Whitney over all (positive, negative) pairs; ties count one half.
pub fn auroc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Precision at every distinct threshold `score >= t`, weighted by the
/// recall gained when moving to it from the next-higher threshold.
pub fn aupr_thresholds(scores: &[f64], labels: &[bool]) -> f64 {
    let p = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for t in thresholds {
        let (mut tp, mut fp) = (0.0, 0.0);
        for (s, &l) in scores.iter().zip(labels) {
            if *s >= t {
                if l {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let recall = tp / p;
        area += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    area
}

/// Random instance with both classes present. `levels` bounds the number of
/// distinct score values, so small values force heavy ties.
pub fn instance(rng: &mut ChaCha8Rng, levels: Option<u32>) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=200);
    let prevalence = rng.random_range(0.05..0.95);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(prevalence)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = (0..n)
        .map(|_| match levels {
            Some(k) => f64::from(rng.random_range(0..k)) / f64::from(k),
            None => rng.random_range(-3.0..3.0),
        })
        .collect();
    (scores, labels)
}

/// Largest deviation of `(auroc, aupr)` from their oracles over `count`
/// instances, every other one tie-heavy with 2..=6 distinct scores.
pub fn worst_deviation(rng: &mut ChaCha8Rng, count: usize) -> (f64, f64) {
    let (mut worst_roc, mut worst_pr) = (0.0f64, 0.0f64);
    for i in 0..count {
        let levels = (i % 2 == 0).then(|| rng.random_range(2..=6));
        let (scores, labels) = instance(rng, levels);
        let ls = LabeledScores::new(scores.clone(), labels.clone()).unwrap();
        worst_roc = worst_roc.max((auroc(&ls).unwrap() - auroc_pairs(&scores, &labels)).abs());
        worst_pr = worst_pr.max((aupr(&ls).unwrap() - aupr_thresholds(&scores, &labels)).abs());
    }
    (worst_roc, worst_pr)
}
