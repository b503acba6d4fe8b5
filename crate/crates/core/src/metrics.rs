//! AUROC, point-adjusted F1 and threshold sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{IcadError, Result};

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(IcadError::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(IcadError::Numeric(format!("non-finite score {s}")));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(IcadError::Data(format!("label {l} is not binary")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(IcadError::UndefinedMetric(format!(
            "labels contain a single class ({pos} anomalies, {neg} normals)"
        )));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve via the rank-sum statistic with average ranks
/// for ties.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Inside every maximal run of label 1, mark all positions if any is
/// predicted. Predictions outside runs are kept.
pub fn point_adjust(preds: &[u8], labels: &[u8]) -> Result<Vec<u8>> {
    if preds.len() != labels.len() {
        return Err(IcadError::Shape(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut out = preds.to_vec();
    let mut i = 0;
    while i < labels.len() {
        if labels[i] != 1 {
            i += 1;
            continue;
        }
        let start = i;
        while i < labels.len() && labels[i] == 1 {
            i += 1;
        }
        if preds[start..i].contains(&1) {
            out[start..i].fill(1);
        }
    }
    Ok(out)
}

/// F1 of binary predictions; zero when there are no true positives.
pub fn f1_score(preds: &[u8], labels: &[u8]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Threshold `𝕀(score ≥ threshold)`, point-adjust, then F1.
pub fn f1_point_adjusted(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check_inputs(scores, labels)?;
    let preds: Vec<u8> = scores.iter().map(|&s| (s >= threshold) as u8).collect();
    Ok(f1_score(&point_adjust(&preds, labels)?, labels))
}

/// Best point-adjusted F1 over every distinct score used as threshold.
/// Ties go to the lowest threshold.
pub fn best_f1_sweep(scores: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    check_inputs(scores, labels)?;
    let mut cands = scores.to_vec();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let mut best = (f64::NEG_INFINITY, cands[0]);
    for &t in &cands {
        let f = f1_point_adjusted(scores, labels, t)?;
        if f > best.0 {
            best = (f, t);
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Auroc,
    F1Pa,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Auroc => "auroc",
            MetricKind::F1Pa => "f1_pa",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = IcadError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "auroc" | "auc" => Ok(MetricKind::Auroc),
            "f1_pa" | "f1pa" | "f1" => Ok(MetricKind::F1Pa),
            other => Err(IcadError::Config(format!(
                "unknown metric {other:?} (expected auroc or f1_pa)"
            ))),
        }
    }
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        let xs: Vec<f64> = xs.into_iter().collect();
        let n = xs.len();
        if n == 0 {
            return Summary {
                mean: 0.0,
                std: 0.0,
                count: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        Summary {
            mean,
            std: var.sqrt(),
            count: n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_id: String,
    pub metric: MetricKind,
    pub value: f64,
    /// Threshold chosen by the F1 sweep.
    pub threshold: Option<f64>,
    pub normal_scores: Summary,
    pub anomaly_scores: Summary,
    pub n_samples: usize,
    pub k: usize,
}

impl EvalReport {
    pub fn from_scores(dataset_id: &str, metric: MetricKind, scores: &[f64], labels: &[u8], k: usize) -> Result<Self> {
        let (value, threshold) = match metric {
            MetricKind::Auroc => (auroc(scores, labels)?, None),
            MetricKind::F1Pa => {
                let (f, t) = best_f1_sweep(scores, labels)?;
                (f, Some(t))
            }
        };
        let pick = |want: u8| Summary::of(scores.iter().zip(labels).filter(|(_, &l)| l == want).map(|(&s, _)| s));
        Ok(EvalReport {
            dataset_id: dataset_id.to_string(),
            metric,
            value,
            threshold,
            normal_scores: pick(0),
            anomaly_scores: pick(1),
            n_samples: scores.len(),
            k,
        })
    }
}

/// Equal-width histogram of scores in `[0, 1]`: `(lower edge, normals,
/// anomalies)` per bin.
pub fn score_histogram(scores: &[f64], labels: &[u8], bins: usize) -> Vec<(f64, usize, usize)> {
    let bins = bins.max(1);
    let mut out: Vec<(f64, usize, usize)> = (0..bins).map(|b| (b as f64 / bins as f64, 0, 0)).collect();
    for (&s, &l) in scores.iter().zip(labels) {
        let b = ((s.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        if l == 1 {
            out[b].2 += 1;
        } else {
            out[b].1 += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.9], &[1, 0]).unwrap(), 0.0);
        assert!(matches!(
            auroc(&[0.1, 0.2], &[0, 0]),
            Err(IcadError::UndefinedMetric(_))
        ));
        assert!(matches!(auroc(&[0.1], &[0, 1]), Err(IcadError::Shape(_))));
    }

    #[test]
    fn point_adjust_examples() {
        assert_eq!(
            point_adjust(&[0, 0, 1, 0, 0], &[0, 1, 1, 1, 0]).unwrap(),
            vec![0, 1, 1, 1, 0]
        );
        assert_eq!(point_adjust(&[1, 0, 1], &[0, 0, 0]).unwrap(), vec![1, 0, 1]);
        assert_eq!(point_adjust(&[1, 0, 0, 0], &[1, 1, 0, 1]).unwrap(), vec![1, 1, 0, 0]);
    }

    #[test]
    fn f1_examples() {
        let s = [0.9, 0.8, 0.1, 0.2];
        let l = [1, 1, 0, 0];
        assert_eq!(f1_point_adjusted(&s, &l, 0.5).unwrap(), 1.0);
        assert_eq!(f1_point_adjusted(&s, &l, 0.95).unwrap(), 0.0);
        assert_eq!(best_f1_sweep(&s, &l).unwrap(), (1.0, 0.8));
        // all equal: the only candidate predicts everything positive
        let (f, t) = best_f1_sweep(&[0.3; 4], &l).unwrap();
        assert_eq!(t, 0.3);
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn histogram_counts() {
        let h = score_histogram(&[0.0, 0.49, 0.5, 1.0], &[0, 0, 1, 1], 2);
        assert_eq!(h, vec![(0.0, 2, 0), (0.5, 0, 2)]);
    }

    proptest! {
        #[test]
        fn auroc_monotone_invariant(
            pairs in prop::collection::vec((0.0f64..1.0, 0u8..2), 2..60)
        ) {
            let (s, l): (Vec<f64>, Vec<u8>) = pairs.into_iter().unzip();
            prop_assume!(l.contains(&0) && l.contains(&1));
            let a = auroc(&s, &l).unwrap();
            let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            prop_assert_eq!(a, auroc(&t, &l).unwrap());
        }

        #[test]
        fn point_adjust_properties(
            pairs in prop::collection::vec((0u8..2, 0u8..2), 0..60),
            extra in 0usize..60
        ) {
            let (p, l): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let a = point_adjust(&p, &l).unwrap();
            prop_assert_eq!(&point_adjust(&a, &l).unwrap(), &a);
            if !p.is_empty() {
                let mut q = p.clone();
                q[extra % p.len()] = 1;
                let b = point_adjust(&q, &l).unwrap();
                prop_assert!(a.iter().zip(&b).all(|(x, y)| x <= y));
            }
            prop_assert!(f1_score(&a, &l) >= f1_score(&p, &l));
        }
    }
}
