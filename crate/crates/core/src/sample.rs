use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    TimeSeries,
    Tabular,
    Log,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::TimeSeries, Modality::Tabular, Modality::Log];

    pub fn name(self) -> &'static str {
        match self {
            Modality::TimeSeries => "time_series",
            Modality::Tabular => "tabular",
            Modality::Log => "log",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "time_series" | "time" | "timeseries" => Ok(Modality::TimeSeries),
            "tabular" | "tab" => Ok(Modality::Tabular),
            "log" | "logs" => Ok(Modality::Log),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

/// Prepared content of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    /// `p × d_raw` time-series patch.
    Patch(Array2<f64>),
    /// Fixed-width (`F′`) tabular row.
    Row(Vec<f64>),
    /// `w` consecutive template ids.
    Window(Vec<u32>),
}

impl Payload {
    pub fn modality(&self) -> Modality {
        match self {
            Payload::Patch(_) => Modality::TimeSeries,
            Payload::Row(_) => Modality::Tabular,
            Payload::Window(_) => Modality::Log,
        }
    }
}

/// The unit of detection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub payload: Payload,
    /// 0 = normal, 1 = anomalous.
    pub label: u8,
    pub dataset_id: String,
    /// Position of the sample in its dataset's source order.
    pub index: usize,
}

impl Sample {
    pub fn modality(&self) -> Modality {
        self.payload.modality()
    }

    pub fn is_anomaly(&self) -> bool {
        self.label == 1
    }
}

/// Per-feature min–max constants fitted on the train split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &v)| match (self.min.get(j), self.max.get(j)) {
                (Some(&lo), Some(&hi)) if hi > lo => (v - lo) / (hi - lo),
                (Some(&lo), Some(_)) => v - lo,
                _ => v,
            })
            .collect()
    }
}

/// A fully prepared dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHandle {
    pub dataset_id: String,
    pub modality: Modality,
    pub train_normals: Vec<Sample>,
    pub train_anomalies: Vec<Sample>,
    /// Test samples in source order.
    pub test: Vec<Sample>,
    /// Size used by the sampling scheduler: time points for series,
    /// samples otherwise.
    pub size_points: usize,
    /// Train-split standard deviation per channel (time series only).
    #[serde(default)]
    pub channel_std: Vec<f64>,
    /// Train-split scaling constants (tabular only).
    #[serde(default)]
    pub scaling: Option<MinMax>,
}

impl DatasetHandle {
    pub fn test_labels(&self) -> Vec<u8> {
        self.test.iter().map(|s| s.label).collect()
    }
}
