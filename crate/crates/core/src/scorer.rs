//! Discrepancy scoring against a frozen reference set.

use ndarray::ArrayView1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IcadError, Result};
use crate::model::{check_same_modality, IcadModel};
use crate::real::Real;
use crate::sample::{DatasetHandle, Sample};
use crate::trainer::{cosine, ReferenceSet};

/// `δ ∈ [0, 1]` of one target against one reference set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyScore {
    pub value: f64,
    pub sample_index: usize,
    pub reference_id: String,
}

/// `(1 − cos(h_r, h_x)) / 2`, clamped to `[0, 1]` against rounding.
pub fn discrepancy<F: Real>(h_r: ArrayView1<'_, F>, h_x: ArrayView1<'_, F>) -> Result<f64> {
    let c = cosine(h_r, h_x)?.as_f64();
    Ok(((1.0 - c) / 2.0).clamp(0.0, 1.0))
}

/// Identifier of a reference set: dataset plus member indices.
pub fn reference_id(refs: &ReferenceSet) -> String {
    let idx: Vec<String> = refs.samples.iter().map(|s| s.index.to_string()).collect();
    format!("{}[{}]", refs.dataset_id, idx.join(","))
}

/// Score one sample through the full inference sequence and flag it when
/// `δ ≥ threshold`.
pub fn detect<F: Real>(
    model: &IcadModel<F>,
    refs: &ReferenceSet,
    x: &Sample,
    threshold: f64,
) -> Result<(bool, DiscrepancyScore)> {
    check_same_modality(&refs.samples, x)?;
    let reps = model.representations(&refs.samples, x)?;
    let value = discrepancy(reps.h_ref.view(), reps.h_target.view())?;
    Ok((
        value >= threshold,
        DiscrepancyScore {
            value,
            sample_index: x.index,
            reference_id: reference_id(refs),
        },
    ))
}

/// Scores in input order. The reference prefix runs once and its cached
/// keys and values are reused for every target.
pub fn score_batch<F: Real>(
    model: &IcadModel<F>,
    refs: &ReferenceSet,
    samples: &[Sample],
) -> Result<Vec<DiscrepancyScore>> {
    let Some(first) = refs.samples.first() else {
        return Err(IcadError::Contract("reference set is empty".into()));
    };
    for s in samples {
        check_same_modality(std::slice::from_ref(first), s)?;
    }
    let state = model.reference_state(&refs.samples)?;
    let rid = reference_id(refs);
    samples
        .iter()
        .map(|s| {
            let h_x = model.target_representation(&state, s)?;
            Ok(DiscrepancyScore {
                value: discrepancy(state.last.view(), h_x.view())?,
                sample_index: s.index,
                reference_id: rid.clone(),
            })
        })
        .collect()
}

/// `k` train normals drawn by a seeded shuffle. For a fixed seed the sets
/// are nested: the set for `k` is a prefix of the set for `k + 1`.
pub fn frozen_reference_set(handle: &DatasetHandle, k: usize, seed: u64) -> Result<ReferenceSet> {
    let n = handle.train_normals.len();
    if k == 0 || k > n {
        return Err(IcadError::Contract(format!(
            "dataset {} has {n} train normals, cannot draw K={k} references",
            handle.dataset_id
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ReferenceSet::new(order[..k].iter().map(|&i| handle.train_normals[i].clone()).collect())
}
