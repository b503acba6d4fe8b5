//! Dataset-level evaluation: frozen references, test scoring, K sweeps.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{EvalReport, MetricKind};
use crate::model::IcadModel;
use crate::real::Real;
use crate::sample::{DatasetHandle, Modality};
use crate::scorer::{frozen_reference_set, score_batch, DiscrepancyScore};

/// F1 with point adjustment for time series, AUROC otherwise.
pub fn default_metric(m: Modality) -> MetricKind {
    match m {
        Modality::TimeSeries => MetricKind::F1Pa,
        Modality::Tabular | Modality::Log => MetricKind::Auroc,
    }
}

/// Scores of every test sample against `K` frozen train normals.
pub fn score_test_split<F: Real>(
    model: &IcadModel<F>,
    handle: &DatasetHandle,
    k: usize,
    ref_seed: u64,
) -> Result<Vec<DiscrepancyScore>> {
    let refs = frozen_reference_set(handle, k, ref_seed)?;
    score_batch(model, &refs, &handle.test)
}

/// Evaluate one dataset. An explicit metric that differs from the
/// modality default is honoured with a warning.
pub fn evaluate<F: Real>(
    model: &IcadModel<F>,
    handle: &DatasetHandle,
    k: usize,
    ref_seed: u64,
    metric: Option<MetricKind>,
) -> Result<EvalReport> {
    let natural = default_metric(handle.modality);
    let metric = metric.unwrap_or(natural);
    if metric != natural {
        log::warn!(
            "{}: using {} on {} data (default is {})",
            handle.dataset_id,
            metric.name(),
            handle.modality,
            natural.name()
        );
    }
    let scores: Vec<f64> = score_test_split(model, handle, k, ref_seed)?
        .into_iter()
        .map(|s| s.value)
        .collect();
    EvalReport::from_scores(&handle.dataset_id, metric, &scores, &handle.test_labels(), k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    /// Mean metric over the evaluated datasets.
    pub mean: f64,
    pub reports: Vec<EvalReport>,
}

/// Evaluate the same model at each reference size. With a fixed seed the
/// reference sets are nested across sizes.
pub fn sweep_k<F: Real>(
    model: &IcadModel<F>,
    handles: &[DatasetHandle],
    ks: &[usize],
    ref_seed: u64,
    metric: Option<MetricKind>,
) -> Result<Vec<SweepRow>> {
    ks.iter()
        .map(|&k| {
            let reports = handles
                .iter()
                .map(|h| evaluate(model, h, k, ref_seed, metric))
                .collect::<Result<Vec<_>>>()?;
            let mean = reports.iter().map(|r| r.value).sum::<f64>() / reports.len().max(1) as f64;
            Ok(SweepRow { k, mean, reports })
        })
        .collect()
}
