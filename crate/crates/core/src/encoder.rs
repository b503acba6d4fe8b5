//! Modality-aware encoders projecting every sample type into `d_model`.
//!
//! | modality    | branch                                   | rows out |
//! |-------------|------------------------------------------|----------|
//! | time series | instance norm → kernel-3 convolution(s)  | `p`      |
//! | tabular     | two-layer perceptron                     | `1`      |
//! | log         | template embedding → bidirectional stack | `w`      |

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{IcadError, Result};
use crate::nn::{gelu, gelu_backward, instance_norm, join, randn, Conv1d, Linear, Params, Stack, StackCache};
use crate::real::Real;
use crate::sample::{Modality, Payload, Sample};

/// `N × d_model` sequence emitted by an encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSequence<F> {
    pub vectors: Array2<F>,
    pub modality: Modality,
}

impl<F: Real> EmbeddingSequence<F> {
    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeEncoder<F> {
    pub convs: Vec<Conv1d<F>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabEncoder<F> {
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEncoder<F> {
    /// `(log_vocab + 1) × d_model`; the last row is the rare bucket.
    pub table: Array2<F>,
    /// `log_window × d_model` learned positions.
    pub positions: Array2<F>,
    pub stack: Stack<F>,
}

impl<F: Real> LogEncoder<F> {
    pub fn vocab(&self) -> usize {
        self.table.nrows() - 1
    }

    pub fn rare_bucket(&self) -> usize {
        self.vocab()
    }

    pub fn row_for(&self, id: u32) -> usize {
        (id as usize).min(self.rare_bucket())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModalityEncoder<F> {
    pub time: TimeEncoder<F>,
    pub tab: TabEncoder<F>,
    pub log: LogEncoder<F>,
    patch_len: usize,
    channels: usize,
    f_prime: usize,
    log_window: usize,
    eps: f64,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub enum EncoderCache<F> {
    Time {
        /// im2col buffer of each convolution.
        cols: Vec<Array2<F>>,
        /// Pre-activation output of every convolution except the last.
        pre: Vec<Array2<F>>,
    },
    Tab {
        x: Array2<F>,
        pre: Array2<F>,
        hidden: Array2<F>,
    },
    Log {
        rows: Vec<usize>,
        stack: StackCache<F>,
    },
}

impl<F: Real> ModalityEncoder<F> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let convs = (0..cfg.conv_layers)
            .map(|i| Conv1d::new(if i == 0 { cfg.channels } else { d }, d, rng))
            .collect();
        ModalityEncoder {
            time: TimeEncoder { convs },
            tab: TabEncoder {
                fc1: Linear::new(cfg.f_prime, cfg.tab_hidden(), rng),
                fc2: Linear::new(cfg.tab_hidden(), d, rng),
            },
            log: LogEncoder {
                table: randn((cfg.log_vocab + 1, d), 1.0, rng),
                positions: randn((cfg.log_window, d), 0.1, rng),
                stack: Stack::new(d, cfg.log_layers, cfg.heads, cfg.mlp_ratio, false, rng),
            },
            patch_len: cfg.patch_len,
            channels: cfg.channels,
            f_prime: cfg.f_prime,
            log_window: cfg.log_window,
            eps: cfg.instance_norm_eps,
        }
    }

    /// Number of rows the encoder emits for one sample of `modality`.
    pub fn rows_for(&self, modality: Modality) -> usize {
        match modality {
            Modality::TimeSeries => self.patch_len,
            Modality::Tabular => 1,
            Modality::Log => self.log_window,
        }
    }

    pub fn encode(&self, sample: &Sample) -> Result<EmbeddingSequence<F>> {
        self.forward(sample).map(|(e, _)| e)
    }

    pub fn forward(&self, sample: &Sample) -> Result<(EmbeddingSequence<F>, EncoderCache<F>)> {
        let (vectors, cache) = match &sample.payload {
            Payload::Patch(m) => self.forward_time(m.view())?,
            Payload::Row(r) => self.forward_tab(r)?,
            Payload::Window(ids) => self.forward_log(ids)?,
        };
        Ok((
            EmbeddingSequence {
                vectors,
                modality: sample.modality(),
            },
            cache,
        ))
    }

    /// Instance-normalised patch, before any convolution.
    pub fn normalize_patch(&self, patch: ArrayView2<'_, f64>) -> Array2<F> {
        instance_norm(patch.mapv(F::from_f64).view(), self.eps)
    }

    fn forward_time(&self, patch: ArrayView2<'_, f64>) -> Result<(Array2<F>, EncoderCache<F>)> {
        if patch.dim() != (self.patch_len, self.channels) {
            return Err(IcadError::Shape(format!(
                "time-series patch is {:?}, encoder expects ({}, {})",
                patch.dim(),
                self.patch_len,
                self.channels
            )));
        }
        let mut h = self.normalize_patch(patch);
        let mut cols = Vec::with_capacity(self.time.convs.len());
        let mut pre = Vec::new();
        for (i, conv) in self.time.convs.iter().enumerate() {
            let (y, c) = conv.forward(h.view());
            cols.push(c);
            if i + 1 < self.time.convs.len() {
                h = gelu(y.view());
                pre.push(y);
            } else {
                h = y;
            }
        }
        Ok((h, EncoderCache::Time { cols, pre }))
    }

    fn forward_tab(&self, row: &[f64]) -> Result<(Array2<F>, EncoderCache<F>)> {
        if row.len() != self.f_prime {
            return Err(IcadError::Shape(format!(
                "tabular row has {} features, encoder expects {}",
                row.len(),
                self.f_prime
            )));
        }
        let x = Array2::from_shape_fn((1, row.len()), |(_, j)| F::from_f64(row[j]));
        let pre = self.tab.fc1.forward(x.view());
        let hidden = gelu(pre.view());
        let y = self.tab.fc2.forward(hidden.view());
        Ok((y, EncoderCache::Tab { x, pre, hidden }))
    }

    fn forward_log(&self, ids: &[u32]) -> Result<(Array2<F>, EncoderCache<F>)> {
        if ids.len() != self.log_window {
            return Err(IcadError::Shape(format!(
                "log window has {} ids, encoder expects {}",
                ids.len(),
                self.log_window
            )));
        }
        let rows: Vec<usize> = ids.iter().map(|&id| self.log.row_for(id)).collect();
        let mut x = self.log.table.select(Axis(0), &rows);
        x += &self.log.positions;
        let (y, stack) = self.log.stack.forward_train(x.view(), None);
        Ok((y, EncoderCache::Log { rows, stack }))
    }

    /// Accumulate parameter gradients for one encoded sample.
    pub fn backward(&self, cache: &EncoderCache<F>, dy: ArrayView2<'_, F>, grad: &mut Self) {
        match cache {
            EncoderCache::Time { cols, pre } => {
                let mut d = dy.to_owned();
                for (i, conv) in self.time.convs.iter().enumerate().rev() {
                    let dx = conv.backward(&cols[i], d.view(), &mut grad.time.convs[i]);
                    if i > 0 {
                        d = gelu_backward(pre[i - 1].view(), dx.view());
                    }
                }
            }
            EncoderCache::Tab { x, pre, hidden } => {
                let dh = self.tab.fc2.backward(hidden.view(), dy, &mut grad.tab.fc2);
                let dpre = gelu_backward(pre.view(), dh.view());
                self.tab.fc1.backward(x.view(), dpre.view(), &mut grad.tab.fc1);
            }
            EncoderCache::Log { rows, stack } => {
                let dx = self.log.stack.backward(stack, dy, &mut grad.log.stack);
                grad.log.positions += &dx;
                for (r, &row) in rows.iter().enumerate() {
                    let mut dst = grad.log.table.row_mut(row);
                    dst += &dx.row(r);
                }
            }
        }
    }

    /// Encode each reference and concatenate in selection order.
    pub fn encode_reference_set(&self, refs: &[Sample]) -> Result<EmbeddingSequence<F>> {
        let first = refs
            .first()
            .ok_or_else(|| IcadError::Contract("reference set is empty".into()))?;
        let modality = first.modality();
        if let Some(bad) = refs
            .iter()
            .find(|s| s.modality() != modality || s.dataset_id != first.dataset_id)
        {
            return Err(IcadError::Contract(format!(
                "reference set mixes {}/{} with {}/{}",
                first.dataset_id,
                modality,
                bad.dataset_id,
                bad.modality()
            )));
        }
        let parts = refs
            .iter()
            .map(|s| self.encode(s).map(|e| e.vectors))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Ok(EmbeddingSequence {
            vectors: concatenate(Axis(0), &views).expect("encoders share d_model"),
            modality,
        })
    }
}

impl<F: Real> Params<F> for ModalityEncoder<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        self.time.convs.visit(&join(prefix, "time.convs"), f);
        self.tab.fc1.visit(&join(prefix, "tab.fc1"), f);
        self.tab.fc2.visit(&join(prefix, "tab.fc2"), f);
        self.log.table.visit(&join(prefix, "log.table"), f);
        self.log.positions.visit(&join(prefix, "log.positions"), f);
        self.log.stack.visit(&join(prefix, "log.stack"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [F])) {
        self.time.convs.visit_mut(&join(prefix, "time.convs"), f);
        self.tab.fc1.visit_mut(&join(prefix, "tab.fc1"), f);
        self.tab.fc2.visit_mut(&join(prefix, "tab.fc2"), f);
        self.log.table.visit_mut(&join(prefix, "log.table"), f);
        self.log.positions.visit_mut(&join(prefix, "log.positions"), f);
        self.log.stack.visit_mut(&join(prefix, "log.stack"), f);
    }
}
