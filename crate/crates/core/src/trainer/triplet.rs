use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IcadError, Result};
use crate::sample::{DatasetHandle, Modality, Payload, Sample};

use super::scheduler::SamplingScheduler;

/// Fraction of tabular features or log ids replaced by fallback negatives.
pub const FALLBACK_FRACTION: f64 = 0.3;
/// Spike height of time-series fallback negatives, in train-split σ.
pub const FALLBACK_SPIKE_SIGMA: f64 = 6.0;

/// `K` normal samples of one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub dataset_id: String,
    pub samples: Vec<Sample>,
}

impl ReferenceSet {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| IcadError::Contract("reference set needs at least one sample".into()))?;
        let dataset_id = first.dataset_id.clone();
        for s in &samples {
            if s.dataset_id != dataset_id {
                return Err(IcadError::Contract(format!(
                    "reference set mixes datasets {dataset_id} and {}",
                    s.dataset_id
                )));
            }
            if s.label != 0 {
                return Err(IcadError::Contract(format!(
                    "reference sample {} of {dataset_id} is anomalous",
                    s.index
                )));
            }
        }
        Ok(ReferenceSet { dataset_id, samples })
    }

    pub fn k(&self) -> usize {
        self.samples.len()
    }

    pub fn modality(&self) -> Modality {
        self.samples[0].modality()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    /// Normal sample from another dataset of the same modality.
    Simple,
    /// Anomaly of the source dataset, real or synthesised.
    Hard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub refs: ReferenceSet,
    pub positive: Sample,
    pub negative: Sample,
    pub negative_kind: NegativeKind,
    /// True when the hard negative was synthesised from a normal sample.
    pub synthetic_negative: bool,
}

impl Triplet {
    pub fn modality(&self) -> Modality {
        self.positive.modality()
    }

    /// `dataset:index` labels of every member, for diagnostics.
    pub fn ids(&self) -> String {
        let refs: Vec<String> = self.refs.samples.iter().map(|s| s.index.to_string()).collect();
        format!(
            "refs={}[{}] pos={}:{} neg={}:{}{}",
            self.refs.dataset_id,
            refs.join(","),
            self.positive.dataset_id,
            self.positive.index,
            self.negative.dataset_id,
            self.negative.index,
            if self.synthetic_negative { "(perturbed)" } else { "" }
        )
    }
}

/// Checks every triplet invariant; `Err` names the first violation.
pub fn validate_triplet(t: &Triplet, k: usize) -> std::result::Result<(), String> {
    let src = &t.refs.dataset_id;
    if t.refs.samples.len() != k {
        return Err(format!("expected {k} references, found {}", t.refs.samples.len()));
    }
    let modality = t.positive.modality();
    for r in &t.refs.samples {
        if &r.dataset_id != src {
            return Err(format!("reference from {} in a set of {src}", r.dataset_id));
        }
        if r.label != 0 {
            return Err(format!("reference {} is anomalous", r.index));
        }
        if r.modality() != modality {
            return Err("reference modality differs from the positive".into());
        }
    }
    let mut seen: Vec<usize> = t.refs.samples.iter().map(|r| r.index).collect();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err("duplicate reference".into());
    }
    if &t.positive.dataset_id != src {
        return Err(format!(
            "positive from {} but references from {src}",
            t.positive.dataset_id
        ));
    }
    if t.positive.label != 0 {
        return Err("positive is anomalous".into());
    }
    if seen.binary_search(&t.positive.index).is_ok() {
        return Err(format!("positive {} is also a reference", t.positive.index));
    }
    if t.negative.modality() != modality {
        return Err("negative modality differs".into());
    }
    match t.negative_kind {
        NegativeKind::Simple => {
            if &t.negative.dataset_id == src {
                return Err("simple negative from the source dataset".into());
            }
            if t.negative.label != 0 {
                return Err("simple negative is anomalous".into());
            }
        }
        NegativeKind::Hard => {
            if &t.negative.dataset_id != src {
                return Err(format!("hard negative from {}", t.negative.dataset_id));
            }
            if t.negative.label != 1 {
                return Err("hard negative is labelled normal".into());
            }
        }
    }
    Ok(())
}

/// Sampling knobs that do not depend on the model.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletSpec {
    pub k: usize,
    /// `(simple, hard)` weights.
    pub simple_hard_ratio: (f64, f64),
    /// Size of the template inventory used by log fallbacks.
    pub log_vocab: usize,
}

impl TripletSpec {
    pub fn simple_probability(&self) -> f64 {
        let (s, h) = self.simple_hard_ratio;
        s / (s + h)
    }
}

/// One triplet from `datasets[index]`.
pub fn triplet_from<R: Rng + ?Sized>(
    datasets: &[DatasetHandle],
    index: usize,
    spec: &TripletSpec,
    rng: &mut R,
) -> Result<Triplet> {
    let src = &datasets[index];
    let n = src.train_normals.len();
    if spec.k == 0 || n < spec.k + 1 {
        return Err(IcadError::Contract(format!(
            "dataset {} has {n} train normals; K={} needs at least {}",
            src.dataset_id,
            spec.k,
            spec.k + 1
        )));
    }
    let picked = sample_indices(rng, n, spec.k + 1).into_vec();
    let refs = picked[..spec.k].iter().map(|&i| src.train_normals[i].clone()).collect();
    let positive = src.train_normals[picked[spec.k]].clone();

    let others: Vec<usize> = (0..datasets.len())
        .filter(|&j| {
            j != index
                && datasets[j].modality == src.modality
                && datasets[j].dataset_id != src.dataset_id
                && !datasets[j].train_normals.is_empty()
        })
        .collect();
    let want_simple = rng.random_bool(spec.simple_probability());
    let (negative, negative_kind, synthetic_negative) = if want_simple && !others.is_empty() {
        let other = &datasets[others[rng.random_range(0..others.len())]];
        let s = other.train_normals[rng.random_range(0..other.train_normals.len())].clone();
        (s, NegativeKind::Simple, false)
    } else if !src.train_anomalies.is_empty() {
        let s = src.train_anomalies[rng.random_range(0..src.train_anomalies.len())].clone();
        (s, NegativeKind::Hard, false)
    } else {
        let base = &src.train_normals[rng.random_range(0..n)];
        let s = perturb(base, src, spec.log_vocab, rng)?;
        (s, NegativeKind::Hard, true)
    };
    Ok(Triplet {
        refs: ReferenceSet::new(refs)?,
        positive,
        negative,
        negative_kind,
        synthetic_negative,
    })
}

/// Draw a dataset with the scheduler, then a triplet from it.
pub fn sample_triplet<R: Rng + ?Sized>(
    scheduler: &SamplingScheduler,
    datasets: &[DatasetHandle],
    spec: &TripletSpec,
    rng: &mut R,
) -> Result<Triplet> {
    let i = scheduler.draw(rng);
    triplet_from(datasets, i, spec, rng)
}

fn count_of(len: usize) -> usize {
    ((len as f64 * FALLBACK_FRACTION).round() as usize).clamp(1, len)
}

/// Synthetic hard negative derived from a normal sample of `src`.
pub fn perturb<R: Rng + ?Sized>(base: &Sample, src: &DatasetHandle, log_vocab: usize, rng: &mut R) -> Result<Sample> {
    let payload = match &base.payload {
        Payload::Patch(x) => {
            let mut x = x.clone();
            let (rows, cols) = x.dim();
            let t = rng.random_range(0..rows);
            let c = rng.random_range(0..cols);
            let sigma = match src.channel_std.get(c) {
                Some(&s) if s > 0.0 => s,
                _ => 1.0,
            };
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            x[(t, c)] += sign * FALLBACK_SPIKE_SIGMA * sigma;
            Payload::Patch(x)
        }
        Payload::Row(row) => {
            let mut out = row.clone();
            let donors: Vec<&Sample> = src.train_normals.iter().filter(|s| s.index != base.index).collect();
            if let Some(donor) = (!donors.is_empty()).then(|| donors[rng.random_range(0..donors.len())]) {
                let Payload::Row(other) = &donor.payload else {
                    return Err(IcadError::Contract(format!(
                        "dataset {} mixes payloads",
                        src.dataset_id
                    )));
                };
                for f in sample_indices(rng, row.len(), count_of(row.len())) {
                    out[f] = other[f];
                }
            }
            Payload::Row(out)
        }
        Payload::Window(ids) => {
            if log_vocab == 0 {
                return Err(IcadError::Contract("log fallback needs a non-empty inventory".into()));
            }
            let mut out = ids.clone();
            for i in sample_indices(rng, ids.len(), count_of(ids.len())) {
                out[i] = rng.random_range(0..log_vocab as u32);
            }
            Payload::Window(out)
        }
    };
    Ok(Sample {
        payload,
        label: 1,
        dataset_id: base.dataset_id.clone(),
        index: base.index,
    })
}
