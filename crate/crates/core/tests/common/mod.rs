//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use icad_core::nn::Params;
use icad_core::trainer::{triplet_loss, NegativeKind, Objective, ReferenceSet, Triplet};
use icad_core::{IcadModel, LossForm, Modality, ModelConfig, Payload, Sample, TrainLayout};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ------------------------------------------------------------------ oracles

/// Fraction of (anomaly, normal) pairs ranked correctly, ties counting half.
pub fn auroc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
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

/// Point-adjusted F1 counted from an explicit confusion matrix.
pub fn f1_pa_oracle(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    let n = scores.len();
    let mut pred: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    // segment id per anomalous point
    let mut seg = vec![usize::MAX; n];
    let mut next = 0;
    for i in 0..n {
        if labels[i] == 1 {
            seg[i] = if i > 0 && labels[i - 1] == 1 { seg[i - 1] } else { next };
            if i == 0 || labels[i - 1] != 1 {
                next += 1;
            }
        }
    }
    let hit: Vec<bool> = (0..next).map(|g| (0..n).any(|i| seg[i] == g && pred[i])).collect();
    for i in 0..n {
        if seg[i] != usize::MAX && hit[seg[i]] {
            pred[i] = true;
        }
    }
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for i in 0..n {
        match (pred[i], labels[i] == 1) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        return 0.0;
    }
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fn_);
    2.0 * precision * recall / (precision + recall)
}

/// Best point-adjusted F1 over a dense grid that includes every score and
/// the midpoints between neighbours.
pub fn sweep_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let mut grid = s.clone();
    grid.extend(s.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    grid.push(s[0] - 1.0);
    grid.push(s[s.len() - 1] + 1.0);
    grid.iter()
        .map(|&t| f1_pa_oracle(scores, labels, t))
        .fold(0.0, f64::max)
}

/// Random scores with frequent ties and labels with both classes, laid out
/// in short anomalous runs.
pub fn random_metric_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(2..=200);
    let levels = rng.random_range(2..=n.max(3));
    let scores: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
        .collect();
    let mut labels = vec![0u8; n];
    let mut i = 0;
    while i < n {
        if rng.random_bool(0.15) {
            let run = rng.random_range(1..=5).min(n - i);
            labels[i..i + run].fill(1);
            i += run;
        }
        i += 1;
    }
    if labels.iter().all(|&l| l == 0) {
        labels[rng.random_range(0..n)] = 1;
    }
    if labels.iter().all(|&l| l == 1) {
        labels[0] = 0;
    }
    (scores, labels)
}

// ------------------------------------------------------------------- models

/// Small architecture for structural and gradient tests.
pub fn tiny_config(layers: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        layers,
        mlp_ratio: 2,
        prompt_len: 3,
        max_seq_len: 96,
        patch_len: 6,
        channels: 2,
        conv_layers: 1,
        f_prime: 5,
        tab_hidden: Some(12),
        log_vocab: 7,
        log_window: 4,
        log_layers: 1,
        ..ModelConfig::default()
    }
}

pub fn random_sample(
    modality: Modality,
    cfg: &ModelConfig,
    dataset: &str,
    index: usize,
    rng: &mut ChaCha8Rng,
) -> Sample {
    let payload = match modality {
        Modality::TimeSeries => Payload::Patch(Array2::from_shape_fn((cfg.patch_len, cfg.channels), |_| {
            rng.random_range(-2.0..2.0)
        })),
        Modality::Tabular => Payload::Row((0..cfg.f_prime).map(|_| rng.random_range(0.0..1.0)).collect()),
        // one id past the vocabulary exercises the rare bucket
        Modality::Log => Payload::Window(
            (0..cfg.log_window)
                .map(|_| rng.random_range(0..=cfg.log_vocab as u32))
                .collect(),
        ),
    };
    Sample {
        payload,
        label: 0,
        dataset_id: dataset.to_string(),
        index,
    }
}

pub fn random_refs(modality: Modality, cfg: &ModelConfig, k: usize, rng: &mut ChaCha8Rng) -> ReferenceSet {
    let samples = (0..k).map(|i| random_sample(modality, cfg, "d0", i, rng)).collect();
    ReferenceSet::new(samples).unwrap()
}

pub fn random_triplet(modality: Modality, cfg: &ModelConfig, k: usize, rng: &mut ChaCha8Rng) -> Triplet {
    let refs = random_refs(modality, cfg, k, rng);
    let positive = random_sample(modality, cfg, "d0", k, rng);
    let mut negative = random_sample(modality, cfg, "d0", k + 1, rng);
    negative.label = 1;
    Triplet {
        refs,
        positive,
        negative,
        negative_kind: NegativeKind::Hard,
        synthetic_negative: false,
    }
}

// --------------------------------------------------------- gradient checking

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
/// Relative errors use `max(|analytic|, |numeric|, GRAD_FLOOR)` as denominator.
pub const GRAD_FLOOR: f64 = 1e-6;
/// Coordinates checked per configuration when the model is larger.
const GRAD_COORDS: usize = 1500;

#[derive(Debug)]
pub struct GradCheck {
    pub label: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Central finite differences against the analytic gradient of one random
/// triplet loss at 64-bit. Configurations rotate over the three modalities
/// and both training layouts.
pub fn gradient_check(case: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
    let modality = Modality::ALL[case as usize % 3];
    let layout = if case.is_multiple_of(2) {
        TrainLayout::Packed
    } else {
        TrainLayout::Literal
    };
    let mut cfg = tiny_config(rng.random_range(1..=2));
    cfg.conv_layers = rng.random_range(1..=2);
    cfg.log_layers = rng.random_range(0..=1);
    if rng.random_bool(0.5) {
        cfg.positions = icad_core::PositionScheme::Sequential;
    }
    let k = rng.random_range(1..=3);
    let mut model = IcadModel::<f64>::new(cfg.clone(), case).unwrap();
    // move norm gains and biases off their initial values
    let mut flat = model.flatten();
    for v in flat.iter_mut() {
        *v += rng.random_range(-0.05..0.05);
    }
    model.assign_flat(&flat);
    let t = random_triplet(modality, &cfg, k, &mut rng);
    // any margin above 2 keeps the hinge active
    let objective = Objective {
        alpha: 2.5,
        form: LossForm::Corrected,
        layout,
    };
    let mut grad = model.zeros_like();
    triplet_loss(&model, &t, &objective, Some(&mut grad)).unwrap();
    let analytic = grad.flatten();

    let mut names = Vec::with_capacity(flat.len());
    model.visit("", &mut |name, _, vals| {
        names.extend((0..vals.len()).map(|i| format!("{name}[{i}]")))
    });
    let mut coords: Vec<usize> = (0..flat.len()).collect();
    if coords.len() > GRAD_COORDS {
        coords.shuffle(&mut rng);
        coords.truncate(GRAD_COORDS);
    }
    let mut probe = model.clone();
    let mut max_rel_err: f64 = 0.0;
    let mut worst = String::new();
    for &i in &coords {
        let mut at = |delta: f64| {
            let mut f = flat.clone();
            f[i] += delta;
            probe.assign_flat(&f);
            triplet_loss(&probe, &t, &objective, None).unwrap()
        };
        let numeric = (at(GRAD_STEP) - at(-GRAD_STEP)) / (2.0 * GRAD_STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = format!("{} analytic {a:.3e} numeric {numeric:.3e}", names[i]);
        }
    }
    GradCheck {
        label: format!(
            "{modality} {layout:?} {:?} layers={} conv={} log_layers={} K={k}",
            cfg.positions, cfg.layers, cfg.conv_layers, cfg.log_layers
        ),
        checked: coords.len(),
        max_rel_err,
        worst,
    }
}

// -------------------------------------------------------------- log corpus

/// Designed template texts of the golden corpus, in first-appearance order
/// for the canonical line order.
pub const GOLDEN_TEMPLATES: [&str; 8] = [
    "Received block <*> of size <*> from <*>",
    "Deleting block <*> file <*>",
    "connection from <*> closed",
    "login ok for user <*>",
    "disk full on <*>",
    "job <*> started with priority <*>",
    "job <*> finished",
    "shutdown complete",
];

const USERS: [&str; 5] = ["alice", "bob", "carol", "dave", "erin"];
const DEVICES: [&str; 5] = ["/dev/sda1", "/dev/sdb2", "/dev/nvme0", "/mnt/data", "/var/log"];

fn golden_line(template: usize, variant: usize, rng: Option<&mut ChaCha8Rng>) -> String {
    let (a, b, c) = match rng {
        Some(r) => (
            r.random_range(0..100_000u32),
            r.random_range(1..4096u32),
            r.random_range(0..256u32),
        ),
        None => (variant as u32 * 7 + 1, variant as u32 * 64 + 8, variant as u32 + 2),
    };
    match template {
        0 => format!("Received block blk_{a} of size {b} from 10.0.{c}.{}", variant + 1),
        1 => format!("Deleting block blk_{a} file /data/{b}"),
        2 => format!("connection from 192.168.{c}.{} closed", variant + 3),
        3 => format!("login ok for user {}", USERS[variant % USERS.len()]),
        4 => format!("disk full on {}", DEVICES[variant % DEVICES.len()]),
        5 => format!("job {a} started with priority {}", c % 8),
        6 => format!("job {a} finished"),
        7 => "shutdown complete".to_string(),
        _ => unreachable!(),
    }
}

/// 40 lines, five per designed template. With `rng`, the line order is
/// shuffled and parameter values are redrawn. Returns the lines and the
/// designed template index of each line.
pub fn golden_corpus(mut rng: Option<&mut ChaCha8Rng>) -> (Vec<String>, Vec<usize>) {
    let mut slots: Vec<(usize, usize)> = (0..5).flat_map(|v| (0..8).map(move |t| (t, v))).collect();
    if let Some(r) = rng.as_deref_mut() {
        slots.shuffle(r);
    }
    let lines = slots
        .iter()
        .map(|&(t, v)| golden_line(t, v, rng.as_deref_mut()))
        .collect();
    (lines, slots.iter().map(|&(t, _)| t).collect())
}

// ---------------------------------------------------------- synthetic suite

/// Architecture matching the synthetic generator defaults, kept small.
pub fn synth_model_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        heads: 2,
        layers: 1,
        mlp_ratio: 2,
        prompt_len: 4,
        log_vocab: icad_core::synthgen::CATALOG_SIZE,
        log_layers: 1,
        ..ModelConfig::default()
    }
}

/// Generated tasks `0..tasks` of every modality with reduced sizes.
pub fn small_suite(seed: u64, tasks: usize) -> Vec<icad_core::DatasetHandle> {
    icad_core::synthgen::suite(seed, tasks)
        .into_iter()
        .map(|mut spec| {
            spec.size = match spec.modality {
                Modality::Tabular => 300,
                _ => 1600,
            };
            icad_core::synthgen::generate(&spec).unwrap().handle
        })
        .collect()
}
