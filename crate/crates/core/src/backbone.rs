//! Prompt-guided representation module.
//!
//! Sequences are assembled as
//!
//! ```text
//! inference: [prompt; refs; REF_TOK; target; TGT_TOK]
//! training:  [prompt; refs; REF_TOK; positive; TGT_TOK; negative; NEG_TOK]
//! packed:    [prompt; refs; REF_TOK; positive; TGT_TOK; negative; TGT_TOK]
//! ```
//!
//! and run through a causal transformer. The final hidden states at the
//! special-token positions are the pooled representations. Because
//! attention is causal, `h_R` only depends on the prefix up to `REF_TOK`.
//!
//! In the packed layout the negative block cannot see the positive block
//! and reuses its position ids, so `h_neg` equals the inference-time
//! `h_x` of the negative sample.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, PositionScheme};
use crate::error::{IcadError, Result};
use crate::nn::{join, randn, HiddenSpan, Params, Stack, StackCache};
use crate::real::Real;

/// Instruction used to prime a pretrained language backbone. Toy mode
/// replaces its tokenisation with learned vectors.
pub const INSTRUCTION_PROMPT: &str =
    "Determine if the sample exhibits any significant discrepancies or anomalies by comparing it to the reference set.";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PromptSource {
    LearnedVectors(usize),
    TokenizedText(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptBlock<F> {
    pub embeddings: Array2<F>,
    pub source: PromptSource,
}

/// Learnable `[REF_TOK]`, `[TGT_TOK]` and `[NEG_TOK]` embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecialTokens<F> {
    pub reference: Array1<F>,
    pub target: Array1<F>,
    pub negative: Array1<F>,
}

impl<F: Real> Params<F> for SpecialTokens<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        self.reference.visit(&join(prefix, "ref_tok"), f);
        self.target.visit(&join(prefix, "tgt_tok"), f);
        self.negative.visit(&join(prefix, "neg_tok"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [F])) {
        self.reference.visit_mut(&join(prefix, "ref_tok"), f);
        self.target.visit_mut(&join(prefix, "tgt_tok"), f);
        self.negative.visit_mut(&join(prefix, "neg_tok"), f);
    }
}

/// Row indices of the special tokens inside an assembled sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Anchors {
    pub reference: usize,
    pub target: usize,
    pub negative: Option<usize>,
}

/// Pooled vectors read at the anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationPair<F> {
    pub h_ref: Array1<F>,
    pub h_target: Array1<F>,
    pub h_negative: Option<Array1<F>>,
}

/// Anything that maps an `T × d_model` sequence to `T × d_model` hidden
/// states while respecting causality can stand in for the toy backbone.
pub trait SequenceModel<F: Real> {
    fn hidden_states(&self, sequence: ArrayView2<'_, F>) -> Result<Array2<F>>;
}

fn check_width<F: Real>(d: usize, parts: &[(&str, ArrayView2<'_, F>)]) -> Result<()> {
    for (name, p) in parts {
        if p.ncols() != d {
            return Err(IcadError::Shape(format!(
                "{name} block has width {}, expected {d}",
                p.ncols()
            )));
        }
    }
    Ok(())
}

fn as_row<F: Real>(v: &Array1<F>) -> ArrayView2<'_, F> {
    v.view().insert_axis(Axis(0))
}

/// `[prompt; refs; REF_TOK; target; TGT_TOK]`.
pub fn assemble_inference_sequence<F: Real>(
    prompt: ArrayView2<'_, F>,
    refs: ArrayView2<'_, F>,
    target: ArrayView2<'_, F>,
    tokens: &SpecialTokens<F>,
) -> Result<(Array2<F>, Anchors)> {
    let d = prompt.ncols();
    check_width(d, &[("reference", refs), ("target", target)])?;
    check_width(d, &[("special token", as_row(&tokens.reference))])?;
    if refs.nrows() == 0 {
        return Err(IcadError::Contract("reference block is empty".into()));
    }
    if target.nrows() == 0 {
        return Err(IcadError::Contract("target block is empty".into()));
    }
    let seq = concatenate(
        Axis(0),
        &[prompt, refs, as_row(&tokens.reference), target, as_row(&tokens.target)],
    )
    .expect("widths checked");
    let reference = prompt.nrows() + refs.nrows();
    let anchors = Anchors {
        reference,
        target: reference + target.nrows() + 1,
        negative: None,
    };
    Ok((seq, anchors))
}

/// `[prompt; refs; REF_TOK; positive; TGT_TOK; negative; NEG_TOK]`.
pub fn assemble_train_sequence<F: Real>(
    prompt: ArrayView2<'_, F>,
    refs: ArrayView2<'_, F>,
    positive: ArrayView2<'_, F>,
    negative: Option<ArrayView2<'_, F>>,
    tokens: &SpecialTokens<F>,
) -> Result<(Array2<F>, Anchors)> {
    let negative = negative.ok_or_else(|| IcadError::Contract("training sequence needs a negative block".into()))?;
    check_width(prompt.ncols(), &[("negative", negative)])?;
    if negative.nrows() == 0 {
        return Err(IcadError::Contract("negative block is empty".into()));
    }
    let (head, mut anchors) = assemble_inference_sequence(prompt, refs, positive, tokens)?;
    let seq = concatenate(Axis(0), &[head.view(), negative, as_row(&tokens.negative)]).expect("widths checked");
    anchors.negative = Some(seq.nrows() - 1);
    Ok((seq, anchors))
}

/// `[prompt; refs; REF_TOK; positive; TGT_TOK; negative; TGT_TOK]` plus
/// the span the negative continuation must not attend to.
pub fn assemble_packed_train_sequence<F: Real>(
    prompt: ArrayView2<'_, F>,
    refs: ArrayView2<'_, F>,
    positive: ArrayView2<'_, F>,
    negative: ArrayView2<'_, F>,
    tokens: &SpecialTokens<F>,
) -> Result<(Array2<F>, Anchors, HiddenSpan)> {
    check_width(prompt.ncols(), &[("negative", negative)])?;
    if negative.nrows() == 0 {
        return Err(IcadError::Contract("negative block is empty".into()));
    }
    let (head, mut anchors) = assemble_inference_sequence(prompt, refs, positive, tokens)?;
    let span = HiddenSpan {
        start: anchors.reference + 1,
        end: head.nrows(),
    };
    let seq = concatenate(Axis(0), &[head.view(), negative, as_row(&tokens.target)]).expect("widths checked");
    anchors.negative = Some(seq.nrows() - 1);
    Ok((seq, anchors, span))
}

/// How the negative sample enters a training sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainLayout {
    /// Negative appended after the positive, anchored by `NEG_TOK`.
    Literal,
    /// Negative masked from the positive, sharing its positions and `TGT_TOK`.
    #[default]
    Packed,
}

/// Read the hidden states at the anchor rows.
pub fn extract_representations<F: Real>(hidden: ArrayView2<'_, F>, anchors: Anchors) -> Result<RepresentationPair<F>> {
    let len = hidden.nrows();
    let pick = |pos: usize| -> Result<Array1<F>> {
        if pos < len {
            Ok(hidden.row(pos).to_owned())
        } else {
            Err(IcadError::Contract(format!(
                "anchor {pos} outside a sequence of length {len}"
            )))
        }
    };
    Ok(RepresentationPair {
        h_ref: pick(anchors.reference)?,
        h_target: pick(anchors.target)?,
        h_negative: anchors.negative.map(pick).transpose()?,
    })
}

/// Toy causal transformer backbone with learned prompt, special tokens and
/// absolute positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone<F> {
    pub prompt: Array2<F>,
    pub tokens: SpecialTokens<F>,
    pub positions: Array2<F>,
    pub scheme: PositionScheme,
    pub stack: Stack<F>,
}

pub struct BackboneCache<F> {
    ids: Vec<usize>,
    stack: StackCache<F>,
}

/// Key/value state after running a prefix through the backbone.
#[derive(Clone, Debug)]
pub struct PrefixState<F> {
    kv: Vec<Vec<F>>,
    len: usize,
    next_id: usize,
    /// Hidden state of the prefix's last row.
    pub last: Array1<F>,
}

impl<F: Real> PrefixState<F> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl<F: Real> Backbone<F> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        Backbone {
            prompt: randn((cfg.prompt_len, d), 1.0, rng),
            tokens: SpecialTokens {
                reference: randn(d, 1.0, rng),
                target: randn(d, 1.0, rng),
                negative: randn(d, 1.0, rng),
            },
            positions: randn((cfg.max_seq_len, d), 0.1, rng),
            scheme: cfg.positions,
            stack: Stack::new(d, cfg.layers, cfg.heads, cfg.mlp_ratio, true, rng),
        }
    }

    pub fn d_model(&self) -> usize {
        self.prompt.ncols()
    }

    pub fn prompt_block(&self) -> PromptBlock<F> {
        PromptBlock {
            embeddings: self.prompt.clone(),
            source: PromptSource::LearnedVectors(self.prompt.nrows()),
        }
    }

    pub fn max_len(&self) -> usize {
        self.positions.nrows()
    }

    /// Position ids for a sequence assembled with `anchors`, where rows
    /// after `hidden` are placed as if it were absent.
    ///
    /// Under [`PositionScheme::PerSample`] every sample block takes ids
    /// `L..L+n` and the special tokens take `L+n`, `L+n+1` and `L+n+2`.
    pub fn sequence_positions(&self, len: usize, anchors: Anchors, hidden: Option<HiddenSpan>) -> Result<Vec<usize>> {
        let lp = self.prompt.nrows();
        let (r, t) = (anchors.reference, anchors.target);
        if r < lp || t <= r || t >= len {
            return Err(IcadError::Contract(format!(
                "anchors {anchors:?} do not fit a sequence of length {len} with a {lp}-row prompt"
            )));
        }
        let n = t - r - 1;
        let skipped = |i: usize| match hidden {
            Some(h) if i >= h.end => h.end - h.start,
            _ => 0,
        };
        if self.scheme == PositionScheme::Sequential {
            return Ok((0..len).map(|i| i - skipped(i)).collect());
        }
        if !(r - lp).is_multiple_of(n) {
            return Err(IcadError::Shape(format!(
                "reference block of {} rows is not a whole number of {n}-row samples",
                r - lp
            )));
        }
        Ok((0..len)
            .map(|i| {
                let j = i - skipped(i);
                if j < lp {
                    j
                } else if j < r {
                    lp + (j - lp) % n
                } else if j == r {
                    lp + n
                } else if j < t {
                    lp + (j - r - 1)
                } else if j == t {
                    lp + n + 1
                } else if j - t - 1 < n {
                    lp + (j - t - 1)
                } else {
                    lp + n + 2
                }
            })
            .collect())
    }

    fn check_input(&self, seq: ArrayView2<'_, F>, ids: &[usize]) -> Result<()> {
        if seq.ncols() != self.d_model() {
            return Err(IcadError::Shape(format!(
                "sequence width {} != d_model {}",
                seq.ncols(),
                self.d_model()
            )));
        }
        debug_assert_eq!(seq.nrows(), ids.len());
        if let Some(&top) = ids.iter().max() {
            if top >= self.max_len() && self.stack.depth() > 0 {
                return Err(IcadError::Shape(format!(
                    "position {top} exceeds the position table ({})",
                    self.max_len()
                )));
            }
        }
        Ok(())
    }

    fn with_positions(&self, seq: ArrayView2<'_, F>, ids: &[usize]) -> Array2<F> {
        let mut x = seq.to_owned();
        for (mut row, &id) in x.rows_mut().into_iter().zip(ids) {
            row += &self.positions.row(id);
        }
        x
    }

    /// Final-layer hidden states for a whole sequence with ids `0..T`.
    pub fn forward(&self, seq: ArrayView2<'_, F>) -> Result<Array2<F>> {
        self.forward_train(seq).map(|(h, _)| h)
    }

    /// Forward pass keeping every activation needed by [`Backbone::backward`].
    pub fn forward_train(&self, seq: ArrayView2<'_, F>) -> Result<(Array2<F>, BackboneCache<F>)> {
        let ids: Vec<usize> = (0..seq.nrows()).collect();
        self.forward_with(seq, ids, None)
    }

    /// Forward pass over an assembled sequence, positioned by the configured
    /// scheme. Rows after `hidden` cannot attend to it.
    pub fn forward_anchored(
        &self,
        seq: ArrayView2<'_, F>,
        anchors: Anchors,
        hidden: Option<HiddenSpan>,
    ) -> Result<(Array2<F>, BackboneCache<F>)> {
        let ids = self.sequence_positions(seq.nrows(), anchors, hidden)?;
        self.forward_with(seq, ids, hidden)
    }

    fn forward_with(
        &self,
        seq: ArrayView2<'_, F>,
        ids: Vec<usize>,
        hidden: Option<HiddenSpan>,
    ) -> Result<(Array2<F>, BackboneCache<F>)> {
        self.check_input(seq, &ids)?;
        if let Some(h) = hidden {
            if h.start > h.end || h.end > seq.nrows() {
                return Err(IcadError::Contract(format!(
                    "hidden span {}..{} outside a sequence of length {}",
                    h.start,
                    h.end,
                    seq.nrows()
                )));
            }
        }
        if self.stack.depth() == 0 {
            let (h, stack) = self.stack.forward_train(seq, hidden);
            return Ok((h, BackboneCache { ids, stack }));
        }
        let x = self.with_positions(seq, &ids);
        let (h, stack) = self.stack.forward_train(x.view(), hidden);
        check_finite(h.view())?;
        Ok((h, BackboneCache { ids, stack }))
    }

    /// Returns `dL/dseq`; position gradients are accumulated into `grad`.
    pub fn backward(&self, cache: &BackboneCache<F>, dh: ArrayView2<'_, F>, grad: &mut Self) -> Array2<F> {
        let dx = self.stack.backward(&cache.stack, dh, &mut grad.stack);
        if self.stack.depth() > 0 {
            for (row, &id) in dx.rows().into_iter().zip(&cache.ids) {
                let mut dpos = grad.positions.row_mut(id);
                dpos += &row;
            }
        }
        dx
    }

    /// Run a prefix incrementally with ids `0..T`, keeping key/value projections.
    pub fn begin(&self, prefix: ArrayView2<'_, F>) -> Result<PrefixState<F>> {
        let ids: Vec<usize> = (0..prefix.nrows()).collect();
        self.begin_with(prefix, &ids)
    }

    fn begin_with(&self, prefix: ArrayView2<'_, F>, ids: &[usize]) -> Result<PrefixState<F>> {
        let mut state = PrefixState {
            kv: vec![Vec::new(); self.stack.depth()],
            len: 0,
            next_id: 0,
            last: Array1::zeros(self.d_model()),
        };
        self.extend_with(&mut state, prefix, ids)?;
        Ok(state)
    }

    /// Continue `state` with more rows and return their hidden states.
    pub fn extend(&self, state: &mut PrefixState<F>, rows: ArrayView2<'_, F>) -> Result<Array2<F>> {
        let ids: Vec<usize> = (state.next_id..state.next_id + rows.nrows()).collect();
        self.extend_with(state, rows, &ids)
    }

    fn extend_with(&self, state: &mut PrefixState<F>, rows: ArrayView2<'_, F>, ids: &[usize]) -> Result<Array2<F>> {
        self.check_input(rows, ids)?;
        if rows.nrows() == 0 {
            return Err(IcadError::Contract("cannot extend with zero rows".into()));
        }
        let h = if self.stack.depth() == 0 {
            rows.to_owned()
        } else {
            let x = self.with_positions(rows, ids);
            let h = self.stack.forward_incremental(x.view(), &mut state.kv);
            check_finite(h.view())?;
            h
        };
        state.len += rows.nrows();
        state.next_id = ids[ids.len() - 1] + 1;
        state.last = h.row(h.nrows() - 1).to_owned();
        Ok(h)
    }

    /// `[prompt; refs; REF_TOK]` for an encoded reference block made of
    /// `sample_len`-row samples; `state.last` is `h_R`.
    pub fn reference_state(&self, refs: ArrayView2<'_, F>, sample_len: usize) -> Result<PrefixState<F>> {
        check_width(self.d_model(), &[("reference", refs)])?;
        if refs.nrows() == 0 {
            return Err(IcadError::Contract("reference block is empty".into()));
        }
        if sample_len == 0 || !refs.nrows().is_multiple_of(sample_len) {
            return Err(IcadError::Shape(format!(
                "reference block of {} rows is not a whole number of {sample_len}-row samples",
                refs.nrows()
            )));
        }
        let prefix =
            concatenate(Axis(0), &[self.prompt.view(), refs, as_row(&self.tokens.reference)]).expect("widths checked");
        let anchors = Anchors {
            reference: prefix.nrows() - 1,
            target: prefix.nrows() + sample_len,
            negative: None,
        };
        let ids = self.sequence_positions(prefix.nrows() + sample_len + 1, anchors, None)?;
        self.begin_with(prefix.view(), &ids[..prefix.nrows()])
    }

    /// `h_x` for one target, continuing a cached reference prefix.
    pub fn target_representation(&self, prefix: &PrefixState<F>, target: ArrayView2<'_, F>) -> Result<Array1<F>> {
        check_width(self.d_model(), &[("target", target)])?;
        if target.nrows() == 0 {
            return Err(IcadError::Contract("target block is empty".into()));
        }
        let mut state = prefix.clone();
        let rows = concatenate(Axis(0), &[target, as_row(&self.tokens.target)]).expect("widths checked");
        let anchors = Anchors {
            reference: prefix.len - 1,
            target: prefix.len + target.nrows(),
            negative: None,
        };
        let ids = self.sequence_positions(prefix.len + rows.nrows(), anchors, None)?;
        self.extend_with(&mut state, rows.view(), &ids[prefix.len..])?;
        Ok(state.last)
    }
}

impl<F: Real> SequenceModel<F> for Backbone<F> {
    fn hidden_states(&self, sequence: ArrayView2<'_, F>) -> Result<Array2<F>> {
        self.forward(sequence)
    }
}

fn check_finite<F: Real>(h: ArrayView2<'_, F>) -> Result<()> {
    if let Some((idx, v)) = h.indexed_iter().find(|(_, v)| !v.is_finite()) {
        let bad = h.iter().filter(|v| !v.is_finite()).count();
        return Err(IcadError::Numeric(format!(
            "non-finite hidden state {v} at row {} col {} ({bad} of {} entries non-finite)",
            idx.0,
            idx.1,
            h.len()
        )));
    }
    Ok(())
}

impl<F: Real> Params<F> for Backbone<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        self.prompt.visit(&join(prefix, "prompt"), f);
        self.tokens.visit(prefix, f);
        self.positions.visit(&join(prefix, "positions"), f);
        self.stack.visit(&join(prefix, "stack"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [F])) {
        self.prompt.visit_mut(&join(prefix, "prompt"), f);
        self.tokens.visit_mut(prefix, f);
        self.positions.visit_mut(&join(prefix, "positions"), f);
        self.stack.visit_mut(&join(prefix, "stack"), f);
    }
}
