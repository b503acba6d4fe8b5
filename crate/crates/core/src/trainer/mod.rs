//! Contrastive training: triplet construction, scheduling, the margin loss
//! and the optimisation loop.

mod checkpoint;
mod loss;
mod optim;
mod scheduler;
mod triplet;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, RngState, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use loss::{ccl_loss, ccl_loss_grad, cosine, LossForm, LossGrad};
pub use optim::{clip_global_norm, Adam};
pub use scheduler::{effective_size, SamplingScheduler, ScheduleEntry, ScheduleMode, DEFAULT_TS_SIZE_FLOOR};
pub use triplet::{
    perturb, sample_triplet, triplet_from, validate_triplet, NegativeKind, ReferenceSet, Triplet, TripletSpec,
    FALLBACK_FRACTION, FALLBACK_SPIKE_SIGMA,
};

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{assemble_packed_train_sequence, assemble_train_sequence, extract_representations, TrainLayout};
use crate::config::ModelConfig;
use crate::error::{IcadError, Result};
use crate::log_miner::Template;
use crate::model::IcadModel;
use crate::nn::Params;
use crate::real::Real;
use crate::sample::{DatasetHandle, Modality};

/// Per-modality batch sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchSizes {
    pub time_series: usize,
    pub tabular: usize,
    pub log: usize,
}

impl Default for BatchSizes {
    fn default() -> Self {
        BatchSizes {
            time_series: 64,
            tabular: 256,
            log: 32,
        }
    }
}

impl BatchSizes {
    pub fn for_modality(&self, m: Modality) -> usize {
        match m {
            Modality::TimeSeries => self.time_series,
            Modality::Tabular => self.tabular,
            Modality::Log => self.log,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Reference-set size.
    pub k: usize,
    /// Margin of the contrastive hinge.
    pub alpha: f64,
    /// `[simple, hard]` negative weights.
    pub simple_hard_ratio: [f64; 2],
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    pub batch: BatchSizes,
    pub seed: u64,
    pub mode: ScheduleMode,
    /// Effective-size floor for time-series datasets in the scheduler.
    pub ts_size_floor: usize,
    pub loss_form: LossForm,
    pub layout: TrainLayout,
    /// Global-norm clip; zero disables clipping.
    pub grad_clip: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 5,
            alpha: 0.5,
            simple_hard_ratio: [8.0, 2.0],
            epochs: 5,
            steps_per_epoch: 1000,
            learning_rate: 1e-5,
            batch: BatchSizes::default(),
            seed: 0,
            mode: ScheduleMode::Universal,
            ts_size_floor: DEFAULT_TS_SIZE_FLOOR,
            loss_form: LossForm::Corrected,
            layout: TrainLayout::Packed,
            grad_clip: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(IcadError::Config(m));
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !self.simple_hard_ratio.iter().all(|w| w.is_finite() && *w > 0.0) {
            return bad(format!(
                "simple_hard_ratio weights must be > 0, got {:?}",
                self.simple_hard_ratio
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        let b = &self.batch;
        if b.time_series == 0 || b.tabular == 0 || b.log == 0 {
            return bad("batch sizes must be >= 1".into());
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be >= 0".into());
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2) && self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be > 0".into());
        }
        Ok(())
    }

    pub fn triplet_spec(&self, log_vocab: usize) -> TripletSpec {
        TripletSpec {
            k: self.k,
            simple_hard_ratio: (self.simple_hard_ratio[0], self.simple_hard_ratio[1]),
            log_vocab,
        }
    }

    pub fn objective(&self) -> Objective {
        Objective {
            alpha: self.alpha,
            form: self.loss_form,
            layout: self.layout,
        }
    }

    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.steps_per_epoch) as u64
    }
}

/// What a training step minimises.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub alpha: f64,
    pub form: LossForm,
    pub layout: TrainLayout,
}

impl Default for Objective {
    fn default() -> Self {
        TrainConfig::default().objective()
    }
}

/// Loss of one triplet. With `grad`, also accumulates `dL/dθ` into it.
pub fn triplet_loss<F: Real>(
    model: &IcadModel<F>,
    t: &Triplet,
    objective: &Objective,
    grad: Option<&mut IcadModel<F>>,
) -> Result<F> {
    let enc = &model.encoder;
    let mut caches = Vec::with_capacity(t.refs.k() + 2);
    let mut blocks = Vec::with_capacity(t.refs.k() + 2);
    for s in t.refs.samples.iter().chain([&t.positive, &t.negative]) {
        let (e, c) = enc.forward(s)?;
        blocks.push(e.vectors);
        caches.push(c);
    }
    let k = t.refs.k();
    let ref_views: Vec<_> = blocks[..k].iter().map(|b| b.view()).collect();
    let e_ref = ndarray::concatenate(ndarray::Axis(0), &ref_views).map_err(|e| IcadError::Shape(e.to_string()))?;
    let bb = &model.backbone;
    let (seq, anchors, hidden) = match objective.layout {
        TrainLayout::Literal => {
            let (seq, anchors) = assemble_train_sequence(
                bb.prompt.view(),
                e_ref.view(),
                blocks[k].view(),
                Some(blocks[k + 1].view()),
                &bb.tokens,
            )?;
            (seq, anchors, None)
        }
        TrainLayout::Packed => {
            let (seq, anchors, span) = assemble_packed_train_sequence(
                bb.prompt.view(),
                e_ref.view(),
                blocks[k].view(),
                blocks[k + 1].view(),
                &bb.tokens,
            )?;
            (seq, anchors, Some(span))
        }
    };
    let (hidden_states, cache) = bb.forward_anchored(seq.view(), anchors, hidden)?;
    let reps = extract_representations(hidden_states.view(), anchors)?;
    let h_neg = reps.h_negative.as_ref().expect("training anchors include the negative");
    let g = ccl_loss_grad(
        reps.h_ref.view(),
        reps.h_target.view(),
        h_neg.view(),
        objective.alpha,
        objective.form,
    )?;
    let Some(grad) = grad else {
        return Ok(g.loss);
    };
    if !g.is_active() {
        return Ok(g.loss);
    }

    let neg_anchor = anchors.negative.expect("training anchors include the negative");
    let mut dh = Array2::<F>::zeros(hidden_states.raw_dim());
    dh.row_mut(anchors.reference).assign(&g.d_ref);
    dh.row_mut(anchors.target).assign(&g.d_pos);
    dh.row_mut(neg_anchor).assign(&g.d_neg);
    let dseq = bb.backward(&cache, dh.view(), &mut grad.backbone);

    let lp = bb.prompt.nrows();
    grad.backbone.prompt += &dseq.slice(s![..lp, ..]);
    grad.backbone.tokens.reference += &dseq.row(anchors.reference);
    grad.backbone.tokens.target += &dseq.row(anchors.target);
    match objective.layout {
        TrainLayout::Literal => grad.backbone.tokens.negative += &dseq.row(neg_anchor),
        TrainLayout::Packed => grad.backbone.tokens.target += &dseq.row(neg_anchor),
    }
    let mut row = lp;
    for (i, (b, c)) in blocks.iter().zip(&caches).enumerate() {
        if i == k || i == k + 1 {
            // skip the special token preceding this block
            row += 1;
        }
        let n = b.nrows();
        enc.backward(c, dseq.slice(s![row..row + n, ..]), &mut grad.encoder);
        row += n;
    }
    Ok(g.loss)
}

/// Statistics of one epoch of training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub min_loss: f64,
    pub max_loss: f64,
    /// Mean step loss per modality drawn during the epoch.
    pub modality_loss: BTreeMap<String, f64>,
    pub mean_grad_norm: f64,
}

#[derive(Default)]
struct EpochAcc {
    losses: Vec<f64>,
    grad_norms: Vec<f64>,
    by_modality: BTreeMap<String, (f64, usize)>,
}

impl EpochAcc {
    fn finish(&self, epoch: usize) -> EpochStats {
        let n = self.losses.len().max(1) as f64;
        EpochStats {
            epoch,
            steps: self.losses.len(),
            mean_loss: self.losses.iter().sum::<f64>() / n,
            min_loss: self.losses.iter().copied().fold(f64::INFINITY, f64::min),
            max_loss: self.losses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            modality_loss: self
                .by_modality
                .iter()
                .map(|(k, (s, c))| (k.clone(), s / *c as f64))
                .collect(),
            mean_grad_norm: self.grad_norms.iter().sum::<f64>() / n,
        }
    }
}

/// Result of one optimisation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub grad_norm: f64,
}

/// Training state: model, optimizer moments, rng and step counter.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: IcadModel<f32>,
    pub config: TrainConfig,
    pub optimizer: Adam,
    pub inventory: Option<Vec<Template>>,
    rng: ChaCha8Rng,
    step: u64,
}

/// Stream of the sampling rng; model initialisation uses stream 0.
const SAMPLER_STREAM: u64 = 1;

impl Trainer {
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = IcadModel::new(model_config, config.seed)?;
        let optimizer = Adam::new(
            model.num_params(),
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(SAMPLER_STREAM);
        Ok(Trainer {
            model,
            config,
            optimizer,
            inventory: None,
            rng,
            step: 0,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.train_config.validate()?;
        let model = ckpt.model()?;
        let n = model.num_params();
        if ckpt.adam_m.len() != n || ckpt.adam_v.len() != n {
            return Err(IcadError::Shape(format!(
                "checkpoint holds {} parameters but {}/{} optimizer moments",
                n,
                ckpt.adam_m.len(),
                ckpt.adam_v.len()
            )));
        }
        let tc = &ckpt.train_config;
        let mut optimizer = Adam::new(n, tc.adam_beta1, tc.adam_beta2, tc.adam_eps);
        optimizer.m.clone_from(&ckpt.adam_m);
        optimizer.v.clone_from(&ckpt.adam_v);
        optimizer.t = ckpt.adam_t;
        Ok(Trainer {
            model,
            config: ckpt.train_config.clone(),
            optimizer,
            inventory: ckpt.inventory.clone(),
            rng: ckpt.rng.restore(),
            step: ckpt.step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            &self.model,
            &self.config,
            &self.optimizer,
            RngState::capture(&self.rng),
            self.step,
            self.inventory.clone(),
        )
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    fn log_vocab(&self) -> usize {
        match &self.inventory {
            Some(inv) if !inv.is_empty() => inv.len(),
            _ => self.model.config.log_vocab,
        }
    }

    /// One Adam update on the mean loss of `batch`.
    pub fn train_step(&mut self, batch: &[Triplet]) -> Result<StepOutcome> {
        if batch.is_empty() {
            return Err(IcadError::Contract("empty batch".into()));
        }
        let modality = batch[0].modality();
        if let Some(t) = batch.iter().find(|t| t.modality() != modality) {
            return Err(IcadError::Contract(format!(
                "batch mixes {modality} with {}",
                t.modality()
            )));
        }
        let objective = self.config.objective();
        let mut grad = self.model.zeros_like();
        let mut total = 0.0f64;
        for t in batch {
            let loss = triplet_loss(&self.model, t, &objective, Some(&mut grad)).map_err(|e| match e {
                IcadError::Numeric(m) => {
                    log::error!("non-finite values on triplet {}: {m}", t.ids());
                    IcadError::Numeric(format!("{m} (triplet {})", t.ids()))
                }
                other => other,
            })?;
            if !loss.is_finite() {
                log::error!("non-finite loss {loss} on triplet {}", t.ids());
                return Err(IcadError::Numeric(format!("loss is {loss} on triplet {}", t.ids())));
            }
            total += loss as f64;
        }
        let mut g = grad.flatten();
        let scale = 1.0 / batch.len() as f32;
        g.iter_mut().for_each(|v| *v *= scale);
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(IcadError::Numeric(format!("non-finite gradient at flat index {i}")));
        }
        let grad_norm = clip_global_norm(&mut g, self.config.grad_clip);
        let mut p = self.model.flatten();
        self.optimizer.step(&mut p, &g, self.config.learning_rate)?;
        self.model.assign_flat(&p);
        self.step += 1;
        Ok(StepOutcome {
            loss: total / batch.len() as f64,
            grad_norm,
        })
    }

    /// Draw a modality, then one batch of triplets of that modality.
    pub fn sample_batch(&mut self, scheduler: &SamplingScheduler, datasets: &[DatasetHandle]) -> Result<Vec<Triplet>> {
        let spec = self.config.triplet_spec(self.log_vocab());
        let m = scheduler.draw_modality(&mut self.rng);
        let n = self.config.batch.for_modality(m);
        (0..n)
            .map(|_| {
                let i = scheduler.draw_dataset_of(m, &mut self.rng)?;
                triplet_from(datasets, i, &spec, &mut self.rng)
            })
            .collect()
    }

    /// Datasets with at least `K + 1` train normals; others are dropped with
    /// a warning.
    pub fn eligible(&self, datasets: &[DatasetHandle]) -> Vec<DatasetHandle> {
        let need = self.config.k + 1;
        let keep: Vec<DatasetHandle> = datasets
            .iter()
            .filter(|d| {
                let ok = d.train_normals.len() >= need;
                if !ok {
                    log::warn!(
                        "excluding {}: {} train normals, K={} needs {need}",
                        d.dataset_id,
                        d.train_normals.len(),
                        self.config.k
                    );
                }
                ok
            })
            .cloned()
            .collect();
        for m in Modality::ALL {
            if keep.iter().filter(|d| d.modality == m).count() == 1 {
                log::warn!("only one {m} dataset: simple negatives replaced by hard negatives");
            }
        }
        keep
    }

    /// Train until `epochs × steps_per_epoch` steps have run, resuming from
    /// the current step. One JSON line per finished epoch goes to `log`.
    pub fn fit(&mut self, datasets: &[DatasetHandle], mut log: Option<&mut dyn Write>) -> Result<Vec<EpochStats>> {
        let total = self.config.total_steps();
        if self.step >= total {
            return Ok(Vec::new());
        }
        let eligible = self.eligible(datasets);
        if eligible.is_empty() {
            return Err(IcadError::Contract("no dataset has enough train normals".into()));
        }
        let scheduler = SamplingScheduler::from_handles(&eligible, self.config.mode, self.config.ts_size_floor)?;
        let spe = self.config.steps_per_epoch as u64;
        let mut stats = Vec::new();
        let mut acc = EpochAcc::default();
        while self.step < total {
            let epoch = (self.step / spe) as usize;
            let batch = self.sample_batch(&scheduler, &eligible)?;
            let m = batch[0].modality().name().to_string();
            let out = self.train_step(&batch)?;
            acc.losses.push(out.loss);
            acc.grad_norms.push(out.grad_norm);
            let e = acc.by_modality.entry(m).or_insert((0.0, 0));
            e.0 += out.loss;
            e.1 += 1;
            if self.step.is_multiple_of(spe) {
                let s = acc.finish(epoch);
                log::info!("epoch {epoch}: mean loss {:.5} over {} steps", s.mean_loss, s.steps);
                if let Some(w) = log.as_deref_mut() {
                    let line = serde_json::to_string(&s).expect("stats serialize");
                    writeln!(w, "{line}").map_err(|e| IcadError::io("<train log>", e))?;
                }
                stats.push(s);
                acc = EpochAcc::default();
            }
        }
        Ok(stats)
    }
}
