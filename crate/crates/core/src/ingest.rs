//! Raw data loading and the three sample-preparation pipelines.

use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{IcadError, Result};
use crate::log_miner::{read_inventory, MinerConfig, TemplateMiner};
use crate::sample::{DatasetHandle, MinMax, Modality, Payload, Sample};

#[derive(Clone, Debug, PartialEq)]
pub struct RawTimeSeries {
    /// `L × d_raw`.
    pub values: Array2<f64>,
    pub point_labels: Option<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub rows: Vec<Vec<f64>>,
    pub row_labels: Option<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawLog {
    pub lines: Vec<String>,
    pub line_labels: Option<Vec<u8>>,
}

fn check_finite(values: impl IntoIterator<Item = f64>, what: &str) -> Result<()> {
    for (i, v) in values.into_iter().enumerate() {
        if !v.is_finite() {
            return Err(IcadError::Data(format!("{what}: non-finite value at position {i}")));
        }
    }
    Ok(())
}

fn any_set(labels: Option<&[u8]>, range: std::ops::Range<usize>) -> u8 {
    labels.map_or(0, |l| u8::from(l[range].contains(&1)))
}

/// Cut a series into patches of `p` rows every `stride` rows. The trailing
/// remainder shorter than `p` is dropped. A patch is anomalous iff it covers
/// at least one anomalous point.
pub fn patch_time_series(raw: &RawTimeSeries, p: usize, stride: usize, dataset_id: &str) -> Result<Vec<Sample>> {
    let (len, _) = raw.values.dim();
    if p == 0 || stride == 0 {
        return Err(IcadError::Config("patch length and stride must be >= 1".into()));
    }
    if p > len {
        return Err(IcadError::EmptyInput(format!(
            "patch length {p} exceeds series length {len}"
        )));
    }
    if let Some(labels) = &raw.point_labels {
        if labels.len() != len {
            return Err(IcadError::Data(format!(
                "{} point labels for {len} time points",
                labels.len()
            )));
        }
    }
    check_finite(raw.values.iter().copied(), "time series")?;
    let n = (len - p) / stride + 1;
    Ok((0..n)
        .map(|i| {
            let start = i * stride;
            Sample {
                payload: Payload::Patch(raw.values.slice(s![start..start + p, ..]).to_owned()),
                label: any_set(raw.point_labels.as_deref(), start..start + p),
                dataset_id: dataset_id.to_string(),
                index: i,
            }
        })
        .collect())
}

/// Zero-pad or truncate a row to exactly `width` features.
pub fn pad_truncate_row(row: &[f64], width: usize) -> Vec<f64> {
    let mut out: Vec<f64> = row.iter().copied().take(width).collect();
    out.resize(width, 0.0);
    out
}

/// Non-overlapping windows of `w` template ids; the remainder is dropped.
pub fn window_logs(
    template_ids: &[u32],
    line_labels: Option<&[u8]>,
    w: usize,
    dataset_id: &str,
) -> Result<Vec<Sample>> {
    if w == 0 {
        return Err(IcadError::Config("window size must be >= 1".into()));
    }
    if let Some(labels) = line_labels {
        if labels.len() != template_ids.len() {
            return Err(IcadError::Data(format!(
                "{} line labels for {} lines",
                labels.len(),
                template_ids.len()
            )));
        }
    }
    Ok(template_ids
        .chunks_exact(w)
        .enumerate()
        .map(|(i, chunk)| Sample {
            payload: Payload::Window(chunk.to_vec()),
            label: any_set(line_labels, i * w..(i + 1) * w),
            dataset_id: dataset_id.to_string(),
            index: i,
        })
        .collect())
}

fn split_count(n: usize, train_frac: f64) -> usize {
    ((n as f64) * train_frac).floor() as usize
}

fn assemble(
    dataset_id: &str,
    modality: Modality,
    samples: Vec<Sample>,
    n_train: usize,
    size_points: usize,
) -> DatasetHandle {
    let mut train_normals = Vec::new();
    let mut train_anomalies = Vec::new();
    let mut test = Vec::new();
    for (i, s) in samples.into_iter().enumerate() {
        if i >= n_train {
            test.push(s);
        } else if s.is_anomaly() {
            train_anomalies.push(s);
        } else {
            train_normals.push(s);
        }
    }
    DatasetHandle {
        dataset_id: dataset_id.to_string(),
        modality,
        train_normals,
        train_anomalies,
        test,
        size_points,
        channel_std: Vec::new(),
        scaling: None,
    }
}

fn check_frac(train_frac: f64) -> Result<()> {
    if train_frac > 0.0 && train_frac < 1.0 {
        Ok(())
    } else {
        Err(IcadError::Config(format!(
            "train_frac must lie in (0, 1), got {train_frac}"
        )))
    }
}

/// Patch a series and split patches in time order into train and test.
pub fn prepare_time_series(
    dataset_id: &str,
    raw: &RawTimeSeries,
    p: usize,
    stride: usize,
    train_frac: f64,
) -> Result<DatasetHandle> {
    check_frac(train_frac)?;
    let patches = patch_time_series(raw, p, stride, dataset_id)?;
    let n_train = split_count(patches.len(), train_frac);
    let train_points = if n_train == 0 { 0 } else { (n_train - 1) * stride + p };
    let train_values = raw.values.slice(s![..train_points.max(1), ..]);
    let channel_std = train_values.columns().into_iter().map(|c| c.std(0.0)).collect();
    let mut handle = assemble(dataset_id, Modality::TimeSeries, patches, n_train, train_points);
    handle.channel_std = channel_std;
    Ok(handle)
}

/// Fit per-feature min–max constants on the train rows.
pub fn fit_min_max(rows: &[Vec<f64>]) -> MinMax {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut min = vec![f64::INFINITY; width];
    let mut max = vec![f64::NEG_INFINITY; width];
    for row in rows {
        for (j, &v) in row.iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    MinMax { min, max }
}

/// Scale rows with train-split min–max constants, then pad/truncate to `f_prime`.
pub fn prepare_table(dataset_id: &str, raw: &RawTable, f_prime: usize, train_frac: f64) -> Result<DatasetHandle> {
    check_frac(train_frac)?;
    if f_prime == 0 {
        return Err(IcadError::Config("F_prime must be >= 1".into()));
    }
    if let Some(labels) = &raw.row_labels {
        if labels.len() != raw.rows.len() {
            return Err(IcadError::Data(format!(
                "{} row labels for {} rows",
                labels.len(),
                raw.rows.len()
            )));
        }
    }
    for (i, row) in raw.rows.iter().enumerate() {
        if row.is_empty() {
            return Err(IcadError::Data(format!("row {i} has no features")));
        }
        check_finite(row.iter().copied(), &format!("row {i}"))?;
    }
    if raw.rows.is_empty() {
        return Err(IcadError::EmptyInput("table has no rows".into()));
    }
    let n_train = split_count(raw.rows.len(), train_frac);
    let scaling = fit_min_max(&raw.rows[..n_train.max(1)]);
    let samples = raw
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| Sample {
            payload: Payload::Row(pad_truncate_row(&scaling.apply(row), f_prime)),
            label: raw.row_labels.as_ref().map_or(0, |l| l[i]),
            dataset_id: dataset_id.to_string(),
            index: i,
        })
        .collect();
    let mut handle = assemble(dataset_id, Modality::Tabular, samples, n_train, n_train);
    handle.scaling = Some(scaling);
    Ok(handle)
}

/// Window an already-mined id sequence and split windows into train/test.
pub fn prepare_log_ids(
    dataset_id: &str,
    ids: &[u32],
    line_labels: Option<&[u8]>,
    w: usize,
    train_frac: f64,
) -> Result<DatasetHandle> {
    check_frac(train_frac)?;
    let windows = window_logs(ids, line_labels, w, dataset_id)?;
    let n_train = split_count(windows.len(), train_frac);
    Ok(assemble(dataset_id, Modality::Log, windows, n_train, n_train))
}

/// Mine templates for every line, then window.
pub fn prepare_log(
    dataset_id: &str,
    raw: &RawLog,
    miner: &mut TemplateMiner,
    w: usize,
    train_frac: f64,
) -> Result<DatasetHandle> {
    let ids = miner.parse_lines(&raw.lines);
    prepare_log_ids(dataset_id, &ids, raw.line_labels.as_deref(), w, train_frac)
}

// ---------------------------------------------------------------------------
// Manifests

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_frac: 0.5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(
        default,
        rename = "F_prime",
        alias = "f_prime",
        skip_serializing_if = "Option::is_none"
    )]
    pub f_prime: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<usize>,
}

/// On-disk dataset description. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dataset_id: String,
    pub modality: Modality,
    pub data_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_path: Option<PathBuf>,
    /// Log datasets only: template inventory to start mining from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inventory_path: Option<PathBuf>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub prep: PrepSpec,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IcadError::io(path, e))?;
        toml::from_str(&text).map_err(|e| IcadError::Data(format!("{}: bad manifest: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).expect("manifest serialises");
        std::fs::write(path, text).map_err(|e| IcadError::io(path, e))
    }

    fn need(value: Option<usize>, key: &str, id: &str) -> Result<usize> {
        value.ok_or_else(|| IcadError::Data(format!("manifest `{id}` needs prep.{key}")))
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| IcadError::io(path, e))
}

fn split_fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|f| !f.is_empty())
}

/// Delimited numeric text, one row per line. Rows may differ in width.
pub fn read_numeric_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            split_fields(line)
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| IcadError::Data(format!("{}:{}: `{f}`: {e}", path.display(), n + 1)))
                })
                .collect()
        })
        .collect()
}

/// One 0/1 label per line.
pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| match l.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(IcadError::Data(format!(
                "{}:{}: label must be 0 or 1, got `{other}`",
                path.display(),
                n + 1
            ))),
        })
        .collect()
}

/// Whitespace/comma separated template ids.
pub fn read_template_ids(path: &Path) -> Result<Vec<u32>> {
    let text = read_text(path)?;
    split_fields(&text)
        .map(|f| {
            f.parse::<u32>()
                .map_err(|e| IcadError::Data(format!("{}: bad template id `{f}`: {e}", path.display())))
        })
        .collect()
}

pub fn write_numeric_rows(path: &Path, rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| IcadError::io(path, e))
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = String::with_capacity(labels.len() * 2);
    for l in labels {
        out.push_str(if *l == 1 { "1\n" } else { "0\n" });
    }
    std::fs::write(path, out).map_err(|e| IcadError::io(path, e))
}

/// Load and prepare a dataset described by a manifest. Log datasets are
/// mined with a fresh miner (seeded from `inventory_path` when given).
pub fn load_dataset(manifest_path: &Path) -> Result<DatasetHandle> {
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut miner = match (&manifest.modality, &manifest.inventory_path) {
        (Modality::Log, Some(inv)) => {
            TemplateMiner::from_inventory(MinerConfig::default(), read_inventory(&resolve(base, inv))?)?
        }
        _ => TemplateMiner::default(),
    };
    load_with_miner(&manifest, base, &mut miner)
}

/// Like [`load_dataset`] but mines log lines into a caller-owned miner so
/// several log datasets share one inventory.
pub fn load_dataset_with_miner(manifest_path: &Path, miner: &mut TemplateMiner) -> Result<DatasetHandle> {
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    load_with_miner(&manifest, base, miner)
}

fn load_with_miner(manifest: &Manifest, base: &Path, miner: &mut TemplateMiner) -> Result<DatasetHandle> {
    let id = manifest.dataset_id.as_str();
    let data_path = resolve(base, &manifest.data_path);
    let labels = manifest
        .label_path
        .as_ref()
        .map(|p| read_labels(&resolve(base, p)))
        .transpose()?;
    let frac = manifest.split.train_frac;
    match manifest.modality {
        Modality::TimeSeries => {
            let rows = read_numeric_rows(&data_path)?;
            let width = rows.first().map_or(0, Vec::len);
            if width == 0 {
                return Err(IcadError::EmptyInput(format!("{}: no data", data_path.display())));
            }
            if let Some(bad) = rows.iter().position(|r| r.len() != width) {
                return Err(IcadError::Data(format!(
                    "{}: row {} has {} channels, expected {width}",
                    data_path.display(),
                    bad + 1,
                    rows[bad].len()
                )));
            }
            let values = Array2::from_shape_vec((rows.len(), width), rows.concat()).expect("rectangular rows");
            let p = Manifest::need(manifest.prep.p, "p", id)?;
            let stride = manifest.prep.stride.unwrap_or(p);
            prepare_time_series(
                id,
                &RawTimeSeries {
                    values,
                    point_labels: labels,
                },
                p,
                stride,
                frac,
            )
        }
        Modality::Tabular => {
            let rows = read_numeric_rows(&data_path)?;
            let f_prime = Manifest::need(manifest.prep.f_prime, "F_prime", id)?;
            prepare_table(
                id,
                &RawTable {
                    rows,
                    row_labels: labels,
                },
                f_prime,
                frac,
            )
        }
        Modality::Log => {
            let w = Manifest::need(manifest.prep.w, "w", id)?;
            let text = read_text(&data_path)?;
            let lines: Vec<String> = text.lines().map(str::to_string).collect();
            prepare_log(
                id,
                &RawLog {
                    lines,
                    line_labels: labels,
                },
                miner,
                w,
                frac,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(len: usize, ch: usize) -> Array2<f64> {
        Array2::from_shape_fn((len, ch), |(i, j)| (i * ch + j) as f64)
    }

    #[test]
    fn patch_counts_and_shapes() {
        let raw = RawTimeSeries {
            values: series(10, 2),
            point_labels: None,
        };
        let patches = patch_time_series(&raw, 5, 5, "d").unwrap();
        assert_eq!(patches.len(), 2);
        for p in &patches {
            match &p.payload {
                Payload::Patch(m) => assert_eq!(m.dim(), (5, 2)),
                _ => panic!("expected a patch"),
            }
            assert_eq!(p.label, 0);
        }
    }

    #[test]
    fn patch_label_is_any_anomalous_point() {
        let raw = RawTimeSeries {
            values: series(10, 1),
            point_labels: Some(vec![0, 0, 0, 1, 0, 0, 0, 0, 0, 0]),
        };
        let labels: Vec<u8> = patch_time_series(&raw, 5, 5, "d")
            .unwrap()
            .iter()
            .map(|s| s.label)
            .collect();
        assert_eq!(labels, vec![1, 0]);
    }

    #[test]
    fn patch_longer_than_series_is_an_error() {
        let raw = RawTimeSeries {
            values: series(4, 1),
            point_labels: None,
        };
        assert!(matches!(
            patch_time_series(&raw, 5, 5, "d"),
            Err(IcadError::EmptyInput(_))
        ));
    }

    #[test]
    fn patch_rejects_non_finite_values() {
        let mut values = series(6, 1);
        values[[2, 0]] = f64::NAN;
        let raw = RawTimeSeries {
            values,
            point_labels: None,
        };
        assert!(matches!(patch_time_series(&raw, 3, 3, "d"), Err(IcadError::Data(_))));
    }

    #[test]
    fn overlapping_patches() {
        let raw = RawTimeSeries {
            values: series(10, 1),
            point_labels: None,
        };
        assert_eq!(patch_time_series(&raw, 4, 2, "d").unwrap().len(), 4);
    }

    #[test]
    fn pad_and_truncate() {
        assert_eq!(pad_truncate_row(&[1.0, 2.0, 3.0], 5), vec![1.0, 2.0, 3.0, 0.0, 0.0]);
        assert_eq!(
            pad_truncate_row(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 5),
            vec![1.0, 2.0, 3.0, 4.0, 5.0]
        );
        assert_eq!(pad_truncate_row(&[7.0], 1), vec![7.0]);
    }

    #[test]
    fn windows_and_labels() {
        let ids: Vec<u32> = (0..10).collect();
        assert_eq!(window_logs(&ids, None, 5, "d").unwrap().len(), 2);
        let ids = [3, 3, 7, 3, 3, 3];
        let labels = [0, 0, 1, 0, 0, 0];
        let w = window_logs(&ids, Some(&labels), 3, "d").unwrap();
        assert_eq!(w[0].payload, Payload::Window(vec![3, 3, 7]));
        assert_eq!(w[1].payload, Payload::Window(vec![3, 3, 3]));
        assert_eq!(w.iter().map(|s| s.label).collect::<Vec<_>>(), vec![1, 0]);
        assert!(window_logs(&[1, 2], None, 5, "d").unwrap().is_empty());
    }

    #[test]
    fn table_split_and_scaling() {
        let rows = vec![vec![0.0, 10.0], vec![2.0, 20.0], vec![1.0], vec![4.0, 5.0, 6.0]];
        let raw = RawTable {
            rows,
            row_labels: Some(vec![0, 1, 0, 0]),
        };
        let h = prepare_table("t", &raw, 3, 0.5).unwrap();
        assert_eq!(h.train_normals.len(), 1);
        assert_eq!(h.train_anomalies.len(), 1);
        assert_eq!(h.test.len(), 2);
        assert_eq!(h.train_normals[0].payload, Payload::Row(vec![0.0, 0.0, 0.0]));
        assert_eq!(h.train_anomalies[0].payload, Payload::Row(vec![1.0, 1.0, 0.0]));
        // feature 2 never seen in train: left as is
        assert_eq!(h.test[1].payload, Payload::Row(vec![2.0, -0.5, 6.0]));
    }

    #[test]
    fn negative_template_id_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ids.txt");
        std::fs::write(&path, "1 2 -1 4").unwrap();
        assert!(matches!(read_template_ids(&path), Err(IcadError::Data(_))));
    }

    #[test]
    fn manifest_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<Vec<f64>> = (0..1000).map(|i| vec![i as f64, (i as f64).sin()]).collect();
        write_numeric_rows(&dir.path().join("s.csv"), values).unwrap();
        let manifest = Manifest {
            dataset_id: "s".into(),
            modality: Modality::TimeSeries,
            data_path: "s.csv".into(),
            label_path: None,
            inventory_path: None,
            split: SplitSpec { train_frac: 0.5 },
            prep: PrepSpec {
                p: Some(100),
                stride: Some(100),
                ..PrepSpec::default()
            },
        };
        let mpath = dir.path().join("s.toml");
        manifest.write(&mpath).unwrap();
        let h = load_dataset(&mpath).unwrap();
        assert_eq!(h.train_normals.len() + h.test.len(), 10);
        assert_eq!(h.test.len(), 5);
        assert_eq!(load_dataset(&mpath).unwrap(), h);
    }

    #[test]
    fn tabular_manifest_populates_train_anomalies() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 1.0]).collect();
        write_numeric_rows(&dir.path().join("t.csv"), rows).unwrap();
        let labels: Vec<u8> = (0..20).map(|i| u8::from(i % 4 == 0)).collect();
        write_labels(&dir.path().join("t.labels"), &labels).unwrap();
        let text = "dataset_id = \"t\"\nmodality = \"tabular\"\ndata_path = \"t.csv\"\nlabel_path = \"t.labels\"\n[split]\ntrain_frac = 0.5\n[prep]\nF_prime = 4\n";
        std::fs::write(dir.path().join("t.toml"), text).unwrap();
        let h = load_dataset(&dir.path().join("t.toml")).unwrap();
        assert_eq!(h.train_anomalies.len(), 3);
        assert!(h.train_anomalies.iter().all(|s| s.label == 1));
        assert!(h.train_normals.iter().all(|s| s.label == 0));
    }

    #[test]
    fn missing_files_and_bad_lengths() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(&dir.path().join("nope.toml")),
            Err(IcadError::Io { .. })
        ));
        let text = "dataset_id = \"t\"\nmodality = \"tabular\"\ndata_path = \"absent.csv\"\n[prep]\nF_prime = 4\n";
        std::fs::write(dir.path().join("m.toml"), text).unwrap();
        assert!(matches!(
            load_dataset(&dir.path().join("m.toml")),
            Err(IcadError::Io { .. })
        ));

        write_numeric_rows(&dir.path().join("t.csv"), vec![vec![1.0], vec![2.0]]).unwrap();
        write_labels(&dir.path().join("t.labels"), &[0]).unwrap();
        let text = "dataset_id = \"t\"\nmodality = \"tabular\"\ndata_path = \"t.csv\"\nlabel_path = \"t.labels\"\n[prep]\nF_prime = 4\n";
        std::fs::write(dir.path().join("m2.toml"), text).unwrap();
        assert!(matches!(
            load_dataset(&dir.path().join("m2.toml")),
            Err(IcadError::Data(_))
        ));

        let text = "dataset_id = \"t\"\nmodality = \"tabular\"\ndata_path = \"t.csv\"\nbogus = 1\n";
        std::fs::write(dir.path().join("m3.toml"), text).unwrap();
        assert!(matches!(
            load_dataset(&dir.path().join("m3.toml")),
            Err(IcadError::Data(_))
        ));
    }

    proptest! {
        #[test]
        fn non_overlapping_patches_reconstruct_prefix(len in 1usize..80, ch in 1usize..4, p in 1usize..20) {
            prop_assume!(p <= len);
            let values = Array2::from_shape_fn((len, ch), |(i, j)| (i * 7 + j) as f64 * 0.5);
            let raw = RawTimeSeries { values: values.clone(), point_labels: None };
            let patches = patch_time_series(&raw, p, p, "d").unwrap();
            let n = patches.len();
            prop_assert_eq!(n, len / p);
            let mut rows = Vec::new();
            for s in &patches {
                if let Payload::Patch(m) = &s.payload {
                    rows.extend(m.iter().copied());
                }
            }
            prop_assert_eq!(rows, values.slice(s![..n * p, ..]).iter().copied().collect::<Vec<_>>());
        }

        #[test]
        fn pad_truncate_is_idempotent(row in proptest::collection::vec(-1e3f64..1e3, 1..30), width in 1usize..30) {
            let once = pad_truncate_row(&row, width);
            prop_assert_eq!(once.len(), width);
            prop_assert_eq!(pad_truncate_row(&once, width), once);
        }

        #[test]
        fn windows_fit_inside_sequence(ids in proptest::collection::vec(0u32..50, 0..200), w in 1usize..20) {
            let labels: Vec<u8> = ids.iter().map(|&i| u8::from(i % 7 == 0)).collect();
            let windows = window_logs(&ids, Some(&labels), w, "d").unwrap();
            prop_assert!(windows.len() * w <= ids.len());
            for s in &windows {
                match &s.payload {
                    Payload::Window(v) => prop_assert_eq!(v.len(), w),
                    _ => prop_assert!(false),
                }
            }
            let again = window_logs(&ids, Some(&labels), w, "d").unwrap();
            prop_assert_eq!(windows, again);
        }
    }
}
