use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IcadError, Result};
use crate::sample::{DatasetHandle, Modality};

/// Default effective-size floor for time-series datasets, in time points.
pub const DEFAULT_TS_SIZE_FLOOR: usize = 2500;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Only datasets of one modality are drawn.
    TaskSpecific(Modality),
    /// Modality uniformly over those present, then dataset by size.
    #[default]
    Universal,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScheduleEntry {
    pub dataset_id: String,
    pub modality: Modality,
    pub size_points: usize,
}

impl ScheduleEntry {
    pub fn of(handle: &DatasetHandle) -> Self {
        ScheduleEntry {
            dataset_id: handle.dataset_id.clone(),
            modality: handle.modality,
            size_points: handle.size_points,
        }
    }
}

/// Draws dataset indices with `p_i ∝ N′_i` inside a modality, where
/// `N′_i = max(N_i, floor)` for time series and `N_i` otherwise.
#[derive(Clone, Debug)]
pub struct SamplingScheduler {
    entries: Vec<ScheduleEntry>,
    mode: ScheduleMode,
    ts_size_floor: usize,
    /// Drawable modalities in `Modality::ALL` order.
    modalities: Vec<Modality>,
    /// Per modality: entry indices and their normalised weights.
    groups: Vec<(Vec<usize>, Vec<f64>)>,
}

impl SamplingScheduler {
    pub fn new(entries: Vec<ScheduleEntry>, mode: ScheduleMode, ts_size_floor: usize) -> Result<Self> {
        let mut modalities = Vec::new();
        let mut groups = Vec::new();
        for m in Modality::ALL {
            if let ScheduleMode::TaskSpecific(only) = mode {
                if only != m {
                    continue;
                }
            }
            let idx: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].modality == m).collect();
            if idx.is_empty() {
                continue;
            }
            let sizes: Vec<f64> = idx
                .iter()
                .map(|&i| effective_size(&entries[i], ts_size_floor) as f64)
                .collect();
            let total: f64 = sizes.iter().sum();
            if total <= 0.0 {
                return Err(IcadError::Contract(format!("all {m} datasets have size zero")));
            }
            modalities.push(m);
            groups.push((idx, sizes.iter().map(|s| s / total).collect()));
        }
        if modalities.is_empty() {
            return Err(IcadError::Contract(match mode {
                ScheduleMode::TaskSpecific(m) => format!("no eligible {m} datasets"),
                ScheduleMode::Universal => "no eligible datasets".into(),
            }));
        }
        Ok(SamplingScheduler {
            entries,
            mode,
            ts_size_floor,
            modalities,
            groups,
        })
    }

    pub fn from_handles(handles: &[DatasetHandle], mode: ScheduleMode, ts_size_floor: usize) -> Result<Self> {
        Self::new(handles.iter().map(ScheduleEntry::of).collect(), mode, ts_size_floor)
    }

    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }

    pub fn mode(&self) -> ScheduleMode {
        self.mode
    }

    pub fn ts_size_floor(&self) -> usize {
        self.ts_size_floor
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    /// Probability of drawing each modality.
    pub fn modality_probabilities(&self) -> Vec<(Modality, f64)> {
        let p = 1.0 / self.modalities.len() as f64;
        self.modalities.iter().map(|&m| (m, p)).collect()
    }

    /// Marginal probability of drawing each entry; zero outside the mode.
    pub fn dataset_probabilities(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.entries.len()];
        let pm = 1.0 / self.modalities.len() as f64;
        for (idx, w) in &self.groups {
            for (&i, &p) in idx.iter().zip(w) {
                out[i] = pm * p;
            }
        }
        out
    }

    /// Index of the group for `m`, if that modality is drawable.
    fn group_of(&self, m: Modality) -> Option<usize> {
        self.modalities.iter().position(|&x| x == m)
    }

    pub fn draw_modality<R: Rng + ?Sized>(&self, rng: &mut R) -> Modality {
        self.modalities[rng.random_range(0..self.modalities.len())]
    }

    /// Dataset index within a modality, proportional to effective size.
    pub fn draw_dataset_of<R: Rng + ?Sized>(&self, modality: Modality, rng: &mut R) -> Result<usize> {
        let g = self
            .group_of(modality)
            .ok_or_else(|| IcadError::Contract(format!("modality {modality} is not scheduled")))?;
        let (idx, w) = &self.groups[g];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (&i, &p) in idx.iter().zip(w) {
            acc += p;
            if u < acc {
                return Ok(i);
            }
        }
        Ok(*idx.last().expect("groups are non-empty"))
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let m = self.draw_modality(rng);
        self.draw_dataset_of(m, rng).expect("drawn modality is scheduled")
    }
}

pub fn effective_size(entry: &ScheduleEntry, ts_size_floor: usize) -> usize {
    match entry.modality {
        Modality::TimeSeries => entry.size_points.max(ts_size_floor),
        _ => entry.size_points,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn entry(id: &str, m: Modality, n: usize) -> ScheduleEntry {
        ScheduleEntry {
            dataset_id: id.into(),
            modality: m,
            size_points: n,
        }
    }

    fn registry() -> Vec<ScheduleEntry> {
        vec![
            entry("ts-a", Modality::TimeSeries, 1000),
            entry("ts-b", Modality::TimeSeries, 9000),
            entry("tab-a", Modality::Tabular, 300),
            entry("tab-b", Modality::Tabular, 100),
            entry("log-a", Modality::Log, 50),
        ]
    }

    #[test]
    fn universal_probabilities() {
        let s = SamplingScheduler::new(registry(), ScheduleMode::Universal, 2500).unwrap();
        let p = s.dataset_probabilities();
        let third = 1.0 / 3.0;
        // time series floor lifts 1000 to 2500
        let expect = [
            third * 2500.0 / 11500.0,
            third * 9000.0 / 11500.0,
            third * 0.75,
            third * 0.25,
            third,
        ];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn task_specific_probabilities() {
        let s = SamplingScheduler::new(registry(), ScheduleMode::TaskSpecific(Modality::Tabular), 2500).unwrap();
        assert_eq!(s.dataset_probabilities(), vec![0.0, 0.0, 0.75, 0.25, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!(matches!(s.draw(&mut rng), 2 | 3));
        }
    }

    #[test]
    fn empty_registry_is_rejected() {
        assert!(SamplingScheduler::new(vec![], ScheduleMode::Universal, 0).is_err());
        assert!(SamplingScheduler::new(registry(), ScheduleMode::TaskSpecific(Modality::Log), 0).is_ok());
        let only_tab = vec![entry("t", Modality::Tabular, 3)];
        assert!(SamplingScheduler::new(only_tab, ScheduleMode::TaskSpecific(Modality::Log), 0).is_err());
    }

    #[test]
    fn empirical_frequencies() {
        let s = SamplingScheduler::new(registry(), ScheduleMode::Universal, 2500).unwrap();
        let p = s.dataset_probabilities();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 50_000;
        let mut counts = vec![0usize; p.len()];
        for _ in 0..n {
            counts[s.draw(&mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(&p) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn mode_parses_from_toml() {
        #[derive(Deserialize)]
        struct W {
            mode: ScheduleMode,
        }
        let w: W = toml::from_str("mode = \"universal\"").unwrap();
        assert_eq!(w.mode, ScheduleMode::Universal);
        let w: W = toml::from_str("mode = { task_specific = \"log\" }").unwrap();
        assert_eq!(w.mode, ScheduleMode::TaskSpecific(Modality::Log));
    }
}
