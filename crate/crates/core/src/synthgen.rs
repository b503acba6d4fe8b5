//! Seeded synthetic tasks for every modality.
//!
//! Each generator is a pure function of its [`SynthSpec`]. Distinct task ids
//! draw distinct base patterns, so normals of one task are meaningful
//! negatives for another task of the same modality.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{IcadError, Result};
use crate::ingest::{
    prepare_log, prepare_table, prepare_time_series, write_labels, write_numeric_rows, Manifest, PrepSpec, RawLog,
    RawTable, RawTimeSeries, SplitSpec,
};
use crate::log_miner::{MinerConfig, Template, TemplateMiner, WILDCARD};
use crate::metrics::auroc;
use crate::sample::{DatasetHandle, Modality, Payload, Sample};
use crate::scorer::frozen_reference_set;

/// Spike height in standard deviations of the clean channel.
pub const SPIKE_SIGMA: f64 = 6.0;
/// Level-shift height in standard deviations of the clean channel.
pub const SHIFT_SIGMA: f64 = 3.0;
/// Templates in the shared log catalog.
pub const CATALOG_SIZE: usize = 40;
/// Templates visited by one log task's chain.
pub const TASK_TEMPLATES: usize = 8;
/// Task inventories are drawn from the first `TEMPLATE_POOL` catalog ids.
pub const TEMPLATE_POOL: usize = 12;
/// Lines replaced in each anomalous log window.
pub const LOG_INJECTIONS: usize = 3;
/// File name of the shared catalog written next to log tasks.
pub const CATALOG_FILE: &str = "catalog.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Time series: 2 to 6 points at ±6σ on one channel.
    Spike,
    /// Time series: 3 to p/2 points shifted by ±3σ on one channel.
    LevelShift,
    /// Tabular: uniform over the inflated bounding box of the clusters.
    BoxUniform,
    /// Tabular: half the features replaced by another cluster's values.
    MeanSwap,
    /// Log: lines replaced by catalog templates outside the task.
    OutOfInventory,
    /// Log: lines replaced by task templates that break the chain.
    BadTransition,
    /// Even mix of the two kinds of the modality.
    Mixed,
}

impl AnomalyKind {
    pub fn fits(self, m: Modality) -> bool {
        use AnomalyKind::*;
        matches!(
            (self, m),
            (Mixed, _)
                | (Spike | LevelShift, Modality::TimeSeries)
                | (BoxUniform | MeanSwap, Modality::Tabular)
                | (OutOfInventory | BadTransition, Modality::Log)
        )
    }

    /// Concrete kind for one injected anomaly.
    fn resolve<R: Rng + ?Sized>(self, m: Modality, rng: &mut R) -> AnomalyKind {
        if self != AnomalyKind::Mixed {
            return self;
        }
        let first = rng.random_bool(0.5);
        match (m, first) {
            (Modality::TimeSeries, true) => AnomalyKind::Spike,
            (Modality::TimeSeries, false) => AnomalyKind::LevelShift,
            (Modality::Tabular, true) => AnomalyKind::BoxUniform,
            (Modality::Tabular, false) => AnomalyKind::MeanSwap,
            (Modality::Log, true) => AnomalyKind::OutOfInventory,
            (Modality::Log, false) => AnomalyKind::BadTransition,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub modality: Modality,
    pub task_id: usize,
    pub seed: u64,
    /// Series length, row count or line count.
    pub size: usize,
    /// Channels for time series, raw features for tables; unused for logs.
    pub width: usize,
    /// Fraction of anomalous points, rows or windows.
    pub anomaly_rate: f64,
    pub anomaly_kind: AnomalyKind,
    pub train_frac: f64,
    /// When false, anomalies are only placed in the test split.
    pub train_anomalies: bool,
    /// Patch length (stride equals it).
    pub patch_len: usize,
    pub f_prime: usize,
    pub window: usize,
}

impl SynthSpec {
    pub fn new(modality: Modality, task_id: usize, seed: u64) -> Self {
        let (size, width, anomaly_rate, anomaly_kind) = match modality {
            Modality::TimeSeries => (4000, 2, 0.05, AnomalyKind::Mixed),
            Modality::Tabular => (1000, 8 + task_id % 5, 0.1, AnomalyKind::BoxUniform),
            Modality::Log => (4000, 0, 0.1, AnomalyKind::Mixed),
        };
        SynthSpec {
            modality,
            task_id,
            seed,
            size,
            width,
            anomaly_rate,
            anomaly_kind,
            train_frac: 0.5,
            train_anomalies: true,
            patch_len: 16,
            f_prime: 16,
            window: 16,
        }
    }

    pub fn dataset_id(&self) -> String {
        format!("synth-{}-{}", self.modality.name(), self.task_id)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(IcadError::Config(m));
        if !(self.anomaly_rate > 0.0 && self.anomaly_rate < 0.5) {
            return bad(format!("anomaly_rate must lie in (0, 0.5), got {}", self.anomaly_rate));
        }
        if !self.anomaly_kind.fits(self.modality) {
            return bad(format!(
                "{:?} anomalies do not apply to {}",
                self.anomaly_kind, self.modality
            ));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return bad(format!("train_frac must lie in (0, 1), got {}", self.train_frac));
        }
        match self.modality {
            Modality::TimeSeries => {
                if self.width == 0 || self.patch_len < 6 || self.size < 4 * self.patch_len {
                    return bad("time series need width >= 1, patch_len >= 6 and size >= 4 patches".into());
                }
            }
            Modality::Tabular => {
                if self.width < 2 || self.f_prime == 0 || self.size < 20 {
                    return bad("tables need width >= 2, F_prime >= 1 and at least 20 rows".into());
                }
            }
            Modality::Log => {
                if self.window < 3 || self.size < 4 * self.window {
                    return bad("logs need window >= 3 and at least 4 windows".into());
                }
            }
        }
        Ok(())
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let m = Modality::ALL.iter().position(|&m| m == self.modality).unwrap_or(0) as u64;
        rng.set_stream(((self.task_id as u64) << 2) | m);
        rng
    }
}

/// `tasks` specs per modality with task ids `0..tasks`.
pub fn suite(seed: u64, tasks: usize) -> Vec<SynthSpec> {
    Modality::ALL
        .iter()
        .flat_map(|&m| (0..tasks).map(move |t| SynthSpec::new(m, t, seed)))
        .collect()
}

/// First index eligible for anomalies: zero, or the start of the test split.
fn anomaly_start(spec: &SynthSpec, units: usize, unit_len: usize) -> usize {
    if spec.train_anomalies {
        0
    } else {
        ((units as f64 * spec.train_frac).floor() as usize) * unit_len
    }
}

// ---------------------------------------------------------------- time series

/// Per-channel parameters of the clean signal.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelShape {
    /// Whole cycles of the fast component per patch.
    pub cycles: usize,
    pub amplitude: f64,
    pub phase: f64,
    /// Period of the slow component, in points.
    pub slow_period: usize,
    pub slow_amplitude: f64,
    pub slow_phase: f64,
    pub noise: f64,
}

/// Fast-component cycles per patch for each channel.
///
/// Channel `c` takes bit `c` of the task id; higher bits shift every
/// channel together. Distinct task ids give distinct sets, and tasks
/// `0..2^width` only use one or two cycles per channel.
pub fn base_cycles(task_id: usize, width: usize) -> Vec<usize> {
    let high = task_id.checked_shr(width as u32).unwrap_or(0);
    (0..width)
        .map(|c| 1 + (task_id.checked_shr(c as u32).unwrap_or(0) & 1) + 2 * high)
        .collect()
}

pub fn channel_shapes(spec: &SynthSpec) -> Vec<ChannelShape> {
    let mut rng = spec.rng();
    base_cycles(spec.task_id, spec.width)
        .into_iter()
        .map(|cycles| {
            let amplitude = rng.random_range(0.5..2.0);
            ChannelShape {
                cycles,
                amplitude,
                phase: rng.random_range(0.0..TAU),
                slow_period: spec.patch_len * rng.random_range(4..=8),
                slow_amplitude: amplitude * rng.random_range(0.3..0.6),
                slow_phase: rng.random_range(0.0..TAU),
                noise: 0.05 * amplitude,
            }
        })
        .collect()
}

fn time_raw(spec: &SynthSpec) -> RawTimeSeries {
    let shapes = channel_shapes(spec);
    let mut rng = spec.rng();
    // decorrelate from the shape draws
    rng.set_word_pos(1 << 20);
    let (len, p) = (spec.size, spec.patch_len);
    let mut clean = Array2::<f64>::zeros((len, spec.width));
    for (c, sh) in shapes.iter().enumerate() {
        for t in 0..len {
            let fast = sh.amplitude * (TAU * (sh.cycles * t) as f64 / p as f64 + sh.phase).sin();
            let slow = sh.slow_amplitude * (TAU * t as f64 / sh.slow_period as f64 + sh.slow_phase).sin();
            clean[(t, c)] = fast + slow;
        }
    }
    let sigma: Vec<f64> = clean.columns().into_iter().map(|col| col.std(0.0)).collect();
    let mut values = clean;
    for (c, sh) in shapes.iter().enumerate() {
        let noise = Normal::new(0.0, sh.noise).expect("positive noise");
        for t in 0..len {
            values[(t, c)] += noise.sample(&mut rng);
        }
    }

    let n_patches = (len - p) / p + 1;
    let start = anomaly_start(spec, n_patches, p);
    let target = (spec.anomaly_rate * (len - start) as f64).round() as usize;
    let mut labels = vec![0u8; len];
    let mut labelled = 0;
    let mut attempts = 0;
    while labelled < target && attempts < 100 * len {
        attempts += 1;
        let kind = spec.anomaly_kind.resolve(Modality::TimeSeries, &mut rng);
        let width = match kind {
            AnomalyKind::Spike => rng.random_range(2..=6),
            _ => rng.random_range(3..=(p / 2).max(3)),
        };
        if start + width + 1 >= len {
            break;
        }
        let at = rng.random_range(start..len - width);
        // keep one clean point between events
        let lo = at.saturating_sub(1);
        let hi = (at + width + 1).min(len);
        if labels[lo..hi].contains(&1) {
            continue;
        }
        let c = rng.random_range(0..spec.width);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let height = match kind {
            AnomalyKind::Spike => SPIKE_SIGMA,
            _ => SHIFT_SIGMA,
        } * sigma[c].max(1e-9);
        for t in at..at + width {
            values[(t, c)] += sign * height;
            labels[t] = 1;
        }
        labelled += width;
    }
    RawTimeSeries {
        values,
        point_labels: Some(labels),
    }
}

pub fn gen_time_task(spec: &SynthSpec) -> Result<DatasetHandle> {
    Ok(generate(spec)?.handle)
}

// -------------------------------------------------------------------- tabular

/// Cluster centres and spreads of one tabular task.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    pub centers: Vec<Vec<f64>>,
    pub std: Vec<f64>,
}

impl ClusterModel {
    pub fn mean(&self) -> Vec<f64> {
        let f = self.centers[0].len();
        (0..f)
            .map(|j| self.centers.iter().map(|c| c[j]).sum::<f64>() / self.centers.len() as f64)
            .collect()
    }

    pub fn max_std(&self) -> f64 {
        self.std.iter().copied().fold(0.0, f64::max)
    }
}

pub fn cluster_model(spec: &SynthSpec) -> ClusterModel {
    let mut rng = spec.rng();
    let n = 2 + spec.task_id % 2;
    let centers = (0..n)
        .map(|_| (0..spec.width).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let std = (0..n).map(|_| 0.5 * rng.random_range(0.8..1.2)).collect();
    ClusterModel { centers, std }
}

fn table_raw(spec: &SynthSpec) -> RawTable {
    let model = cluster_model(spec);
    let mut rng = spec.rng();
    rng.set_word_pos(1 << 20);
    let f = spec.width;
    let k = model.centers.len();
    let draw = |c: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let n = Normal::new(0.0, model.std[c]).expect("positive std");
        model.centers[c].iter().map(|m| m + n.sample(rng)).collect()
    };
    let mut rows: Vec<Vec<f64>> = (0..spec.size).map(|_| draw(rng.random_range(0..k), &mut rng)).collect();

    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..f)
        .map(|j| {
            let vals = model.centers.iter().zip(&model.std);
            let lo = vals.clone().map(|(c, s)| c[j] - 3.0 * s).fold(f64::INFINITY, f64::min);
            let hi = vals.map(|(c, s)| c[j] + 3.0 * s).fold(f64::NEG_INFINITY, f64::max);
            let pad = 0.5 * (hi - lo);
            (lo - pad, hi + pad)
        })
        .unzip();

    let start = anomaly_start(spec, spec.size, 1);
    let eligible = spec.size - start;
    let count = ((spec.anomaly_rate * eligible as f64).round() as usize).clamp(1, eligible);
    let mut labels = vec![0u8; spec.size];
    let mut picked = sample_indices(&mut rng, eligible, count).into_vec();
    picked.sort_unstable();
    for i in picked {
        let i = start + i;
        labels[i] = 1;
        rows[i] = match spec.anomaly_kind.resolve(Modality::Tabular, &mut rng) {
            AnomalyKind::BoxUniform => (0..f).map(|j| rng.random_range(lo[j]..hi[j])).collect(),
            _ => {
                let a = rng.random_range(0..k);
                let b = (a + rng.random_range(1..k)) % k;
                let mut row = draw(a, &mut rng);
                let other = draw(b, &mut rng);
                for j in sample_indices(&mut rng, f, f / 2) {
                    row[j] = other[j];
                }
                row
            }
        };
    }
    RawTable {
        rows,
        row_labels: Some(labels),
    }
}

pub fn gen_tab_task(spec: &SynthSpec) -> Result<DatasetHandle> {
    Ok(generate(spec)?.handle)
}

// ------------------------------------------------------------------------ log

const COMPONENTS: [&str; 8] = ["kernel", "dfs", "net", "auth", "sched", "disk", "cache", "rpc"];
const ACTIONS: [&str; 5] = ["start", "stop", "read", "write", "retry"];
const OBJECTS: [&str; 5] = ["block", "session", "request", "job", "volume"];
const TAILS: [&str; 3] = ["ok", "from node", "after timeout on host"];

/// Shared template catalog; template `i` has id `i`.
pub fn template_catalog() -> Vec<Template> {
    (0..CATALOG_SIZE)
        .map(|i| {
            let mut tokens = vec![
                COMPONENTS[i % COMPONENTS.len()].to_string(),
                ACTIONS[i / COMPONENTS.len()].to_string(),
                OBJECTS[(i * 3) % OBJECTS.len()].to_string(),
                WILDCARD.to_string(),
            ];
            tokens.extend(TAILS[i % TAILS.len()].split(' ').map(str::to_string));
            if i % 2 == 1 {
                tokens.push(WILDCARD.to_string());
            }
            Template {
                id: i as u32,
                tokens,
                count: 0,
            }
        })
        .collect()
}

/// Task-specific Markov chain over catalog ids: one cycle through the
/// task's templates that occasionally skips a step.
#[derive(Clone, Debug, PartialEq)]
pub struct LogChain {
    pub states: Vec<u32>,
    /// `(successor, probability)` per state, indexed like `states`.
    pub next: Vec<Vec<(usize, f64)>>,
}

impl LogChain {
    pub fn allows(&self, from: u32, to: u32) -> bool {
        let Some(i) = self.states.iter().position(|&s| s == from) else {
            return false;
        };
        self.next[i].iter().any(|&(j, _)| self.states[j] == to)
    }

    /// All bigrams of `ids` follow the chain.
    pub fn accepts(&self, ids: &[u32]) -> bool {
        ids.windows(2).all(|w| self.allows(w[0], w[1]))
    }

    pub fn inventory(&self) -> BTreeSet<u32> {
        self.states.iter().copied().collect()
    }
}

pub fn log_chain(spec: &SynthSpec) -> LogChain {
    let mut rng = spec.rng();
    let states: Vec<u32> = sample_indices(&mut rng, TEMPLATE_POOL, TASK_TEMPLATES)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    let n = TASK_TEMPLATES;
    let next = (0..n).map(|i| vec![((i + 1) % n, 0.85), ((i + 2) % n, 0.15)]).collect();
    LogChain { states, next }
}

fn render(template: &Template, rng: &mut ChaCha8Rng) -> String {
    template
        .tokens
        .iter()
        .map(|t| {
            if t == WILDCARD {
                rng.random_range(0..100_000u32).to_string()
            } else {
                t.clone()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn log_raw(spec: &SynthSpec) -> RawLog {
    let chain = log_chain(spec);
    let catalog = template_catalog();
    let mut rng = spec.rng();
    rng.set_word_pos(1 << 20);
    let n = spec.size;
    let mut state = rng.random_range(0..chain.states.len());
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        ids.push(chain.states[state]);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(j, p) in &chain.next[state] {
            acc += p;
            if u < acc {
                state = j;
                break;
            }
        }
    }

    let w = spec.window;
    let windows = n / w;
    let start = anomaly_start(spec, windows, 1);
    let eligible = windows - start;
    let count = ((spec.anomaly_rate * eligible as f64).round() as usize).clamp(1, eligible);
    let inventory = chain.inventory();
    let outside: Vec<u32> = (0..CATALOG_SIZE as u32).filter(|i| !inventory.contains(i)).collect();
    let mut labels = vec![0u8; n];
    for win in sample_indices(&mut rng, eligible, count) {
        let base = (start + win) * w;
        let mut slots = sample_indices(&mut rng, w - 1, LOG_INJECTIONS.min(w - 1)).into_vec();
        slots.sort_unstable();
        for j in slots.into_iter().map(|s| base + 1 + s) {
            let prev = ids[j - 1];
            ids[j] = match spec.anomaly_kind.resolve(Modality::Log, &mut rng) {
                AnomalyKind::OutOfInventory => outside[rng.random_range(0..outside.len())],
                _ => {
                    let bad: Vec<u32> = chain
                        .states
                        .iter()
                        .copied()
                        .filter(|&s| s != prev && !chain.allows(prev, s))
                        .collect();
                    bad[rng.random_range(0..bad.len())]
                }
            };
            labels[j] = 1;
        }
    }
    let lines = ids.iter().map(|&i| render(&catalog[i as usize], &mut rng)).collect();
    RawLog {
        lines,
        line_labels: Some(labels),
    }
}

pub fn gen_log_task(spec: &SynthSpec) -> Result<DatasetHandle> {
    Ok(generate(spec)?.handle)
}

// ----------------------------------------------------------------- assembled

#[derive(Clone, Debug, PartialEq)]
pub enum RawTask {
    TimeSeries(RawTimeSeries),
    Tabular(RawTable),
    Log(RawLog),
}

/// Raw data plus its prepared handle.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTask {
    pub spec: SynthSpec,
    pub raw: RawTask,
    pub handle: DatasetHandle,
}

pub fn catalog_miner() -> TemplateMiner {
    TemplateMiner::from_inventory(MinerConfig::default(), template_catalog()).expect("catalog ids are dense")
}

pub fn generate(spec: &SynthSpec) -> Result<SynthTask> {
    spec.validate()?;
    let id = spec.dataset_id();
    let (raw, handle) = match spec.modality {
        Modality::TimeSeries => {
            let raw = time_raw(spec);
            let h = prepare_time_series(&id, &raw, spec.patch_len, spec.patch_len, spec.train_frac)?;
            (RawTask::TimeSeries(raw), h)
        }
        Modality::Tabular => {
            let raw = table_raw(spec);
            let h = prepare_table(&id, &raw, spec.f_prime, spec.train_frac)?;
            (RawTask::Tabular(raw), h)
        }
        Modality::Log => {
            let raw = log_raw(spec);
            let h = prepare_log(&id, &raw, &mut catalog_miner(), spec.window, spec.train_frac)?;
            (RawTask::Log(raw), h)
        }
    };
    Ok(SynthTask {
        spec: spec.clone(),
        raw,
        handle,
    })
}

/// Write data, labels and manifest under `dir` in the formats the loader
/// reads. Log tasks share `catalog.jsonl`. Returns the manifest path.
pub fn write_task(task: &SynthTask, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| IcadError::io(dir, e))?;
    let spec = &task.spec;
    let id = spec.dataset_id();
    let label_file = format!("{id}.labels");
    let (data_file, labels, prep, inventory) = match &task.raw {
        RawTask::TimeSeries(raw) => {
            let file = format!("{id}.csv");
            write_numeric_rows(&dir.join(&file), raw.values.rows().into_iter().map(|r| r.to_vec()))?;
            let prep = PrepSpec {
                p: Some(spec.patch_len),
                stride: Some(spec.patch_len),
                ..PrepSpec::default()
            };
            (file, raw.point_labels.clone(), prep, None)
        }
        RawTask::Tabular(raw) => {
            let file = format!("{id}.csv");
            write_numeric_rows(&dir.join(&file), raw.rows.iter().cloned())?;
            let prep = PrepSpec {
                f_prime: Some(spec.f_prime),
                ..PrepSpec::default()
            };
            (file, raw.row_labels.clone(), prep, None)
        }
        RawTask::Log(raw) => {
            let file = format!("{id}.log");
            let mut text = raw.lines.join("\n");
            text.push('\n');
            let path = dir.join(&file);
            std::fs::write(&path, text).map_err(|e| IcadError::io(&path, e))?;
            catalog_miner().save_inventory(&dir.join(CATALOG_FILE))?;
            let prep = PrepSpec {
                w: Some(spec.window),
                ..PrepSpec::default()
            };
            (file, raw.line_labels.clone(), prep, Some(PathBuf::from(CATALOG_FILE)))
        }
    };
    if let Some(l) = &labels {
        write_labels(&dir.join(&label_file), l)?;
    }
    let manifest = Manifest {
        dataset_id: id.clone(),
        modality: spec.modality,
        data_path: PathBuf::from(data_file),
        label_path: labels.map(|_| PathBuf::from(label_file)),
        inventory_path: inventory,
        split: SplitSpec {
            train_frac: spec.train_frac,
        },
        prep,
    };
    let path = dir.join(format!("{id}.toml"));
    manifest.write(&path)?;
    Ok(path)
}

// ------------------------------------------------------------------ baseline

/// Feature vector used by the distance baseline: raw patch values, the
/// scaled row, or unigram plus bigram template counts.
pub fn raw_features(sample: &Sample) -> HashMap<usize, f64> {
    match &sample.payload {
        Payload::Patch(x) => x.iter().copied().enumerate().collect(),
        Payload::Row(r) => r.iter().copied().enumerate().collect(),
        Payload::Window(ids) => {
            let mut h = HashMap::new();
            let stride = CATALOG_SIZE.max(ids.iter().map(|&i| i as usize + 1).max().unwrap_or(0));
            for &i in ids {
                *h.entry(i as usize).or_insert(0.0) += 1.0;
            }
            for b in ids.windows(2) {
                *h.entry(stride * (1 + b[0] as usize) + b[1] as usize).or_insert(0.0) += 1.0;
            }
            h
        }
    }
}

fn distance(a: &HashMap<usize, f64>, b: &HashMap<usize, f64>) -> f64 {
    let mut s = 0.0;
    for (k, va) in a {
        let d = va - b.get(k).copied().unwrap_or(0.0);
        s += d * d;
    }
    for (k, vb) in b {
        if !a.contains_key(k) {
            s += vb * vb;
        }
    }
    s.sqrt()
}

/// AUROC of the mean distance to `k` frozen references, over the test split.
pub fn nn_baseline_auroc(handle: &DatasetHandle, k: usize, ref_seed: u64) -> Result<f64> {
    let refs = frozen_reference_set(handle, k, ref_seed)?;
    let ref_feats: Vec<_> = refs.samples.iter().map(raw_features).collect();
    let scores: Vec<f64> = handle
        .test
        .iter()
        .map(|s| {
            let f = raw_features(s);
            ref_feats.iter().map(|r| distance(&f, r)).sum::<f64>() / ref_feats.len() as f64
        })
        .collect();
    auroc(&scores, &handle.test_labels())
}
