use std::ops::Range;

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::{join, Linear, Params};
use crate::real::{lit, Real};

/// Multi-head self-attention with a fused `d → 3d` query/key/value map.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention<F> {
    pub qkv: Linear<F>,
    pub out: Linear<F>,
    pub heads: usize,
    pub causal: bool,
}

impl<F: Real> Attention<F> {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, causal: bool, rng: &mut R) -> Self {
        assert!(
            heads > 0 && dim.is_multiple_of(heads),
            "d_model must be divisible by heads"
        );
        Attention {
            qkv: Linear::new(dim, 3 * dim, rng),
            out: Linear::new(dim, dim, rng),
            heads,
            causal,
        }
    }

    pub fn dim(&self) -> usize {
        self.out.fan_out()
    }
}

impl<F: Real> Params<F> for Attention<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        self.qkv.visit(&join(prefix, "qkv"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [F])) {
        self.qkv.visit_mut(&join(prefix, "qkv"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// Rows at or after `end` cannot see keys in `start..end`.
///
/// Lets two continuations of a shared prefix be packed into one causal
/// sequence: the second continuation attends exactly as if the first one
/// were absent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HiddenSpan {
    pub start: usize,
    pub end: usize,
}

/// Keys visible to query row `i`, as at most two ascending ranges.
pub fn visible_keys(i: usize, rows: usize, causal: bool, hidden: Option<HiddenSpan>) -> [Range<usize>; 2] {
    let last = if causal { i + 1 } else { rows };
    match hidden {
        Some(h) if i >= h.end && h.start < h.end => [0..h.start.min(last), h.end.min(last)..last],
        _ => [0..last, last..last],
    }
}

/// Attention output for query row `i` over the keys in `keys`.
///
/// `qkv` is a row-major `rows × 3d` buffer. `probs` receives the
/// `heads × n_keys` attention weights in key order; `out` receives the
/// `d`-wide context. Both the full-sequence and the incremental (cached
/// prefix) paths go through this function, which keeps them bit-identical.
pub fn attend_row<F: Real>(
    qkv: &[F],
    dim: usize,
    heads: usize,
    i: usize,
    keys: &[Range<usize>; 2],
    probs: &mut [F],
    out: &mut [F],
) {
    let dh = dim / heads;
    let stride = 3 * dim;
    let n_keys = keys[0].len() + keys[1].len();
    let scale: F = lit(1.0 / (dh as f64).sqrt());
    out.fill(F::zero());
    for h in 0..heads {
        let q = &qkv[i * stride + h * dh..i * stride + (h + 1) * dh];
        let p = &mut probs[h * n_keys..(h + 1) * n_keys];
        let mut max = F::neg_infinity();
        for (pj, j) in p.iter_mut().zip(keys[0].clone().chain(keys[1].clone())) {
            let k = &qkv[j * stride + dim + h * dh..j * stride + dim + (h + 1) * dh];
            let s = q.iter().zip(k).fold(F::zero(), |a, (&x, &y)| a + x * y) * scale;
            *pj = s;
            if s > max {
                max = s;
            }
        }
        let mut sum = F::zero();
        for pj in p.iter_mut() {
            *pj = (*pj - max).exp();
            sum += *pj;
        }
        let o = &mut out[h * dh..(h + 1) * dh];
        for (pj, j) in p.iter_mut().zip(keys[0].clone().chain(keys[1].clone())) {
            *pj /= sum;
            let v = &qkv[j * stride + 2 * dim + h * dh..j * stride + 2 * dim + (h + 1) * dh];
            for (oc, &vc) in o.iter_mut().zip(v) {
                *oc += *pj * vc;
            }
        }
    }
}

/// Context rows `start..rows` of `qkv` under the mask given by `causal`
/// and `hidden`. Returns the context (`(rows - start) × d`) and the
/// attention weights (`heads × rows` per query, zero where masked) for
/// backward.
pub fn attention_forward<F: Real>(
    qkv: &[F],
    rows: usize,
    start: usize,
    dim: usize,
    heads: usize,
    causal: bool,
    hidden: Option<HiddenSpan>,
) -> (Array2<F>, Vec<F>) {
    let mut ctx = Array2::zeros((rows - start, dim));
    let mut probs = vec![F::zero(); (rows - start) * heads * rows];
    let mut scratch = vec![F::zero(); heads * rows];
    for i in start..rows {
        let keys = visible_keys(i, rows, causal, hidden);
        let n_keys = keys[0].len() + keys[1].len();
        let row_out = ctx.row_mut(i - start).into_slice().expect("standard layout");
        attend_row(qkv, dim, heads, i, &keys, &mut scratch[..heads * n_keys], row_out);
        let base = (i - start) * heads * rows;
        for h in 0..heads {
            let src = &scratch[h * n_keys..(h + 1) * n_keys];
            for (&p, j) in src.iter().zip(keys[0].clone().chain(keys[1].clone())) {
                probs[base + h * rows + j] = p;
            }
        }
    }
    (ctx, probs)
}

/// Backward of [`attention_forward`] over a full sequence (`start = 0`).
/// Returns `dL/dqkv` in the same `rows × 3d` layout.
pub fn attention_backward<F: Real>(
    qkv: &[F],
    probs: &[F],
    dctx: ArrayView2<'_, F>,
    dim: usize,
    heads: usize,
    causal: bool,
    hidden: Option<HiddenSpan>,
) -> Array2<F> {
    let rows = dctx.nrows();
    let dh = dim / heads;
    let stride = 3 * dim;
    let scale: F = lit(1.0 / (dh as f64).sqrt());
    let mut dqkv = Array2::<F>::zeros((rows, stride));
    let g = dqkv.as_slice_mut().expect("standard layout");
    let dctx = dctx.as_standard_layout();
    let dc = dctx.as_slice().expect("standard layout");
    let mut dp = vec![F::zero(); rows];
    for i in 0..rows {
        let keys = visible_keys(i, rows, causal, hidden);
        let key_iter = || keys[0].clone().chain(keys[1].clone());
        for h in 0..heads {
            let p = &probs[i * heads * rows + h * rows..i * heads * rows + (h + 1) * rows];
            let dout = &dc[i * dim + h * dh..i * dim + (h + 1) * dh];
            let mut weighted = F::zero();
            for j in key_iter() {
                let v = &qkv[j * stride + 2 * dim + h * dh..j * stride + 2 * dim + (h + 1) * dh];
                let d = dout.iter().zip(v).fold(F::zero(), |a, (&x, &y)| a + x * y);
                dp[j] = d;
                weighted += p[j] * d;
                let dv = &mut g[j * stride + 2 * dim + h * dh..j * stride + 2 * dim + (h + 1) * dh];
                for (a, &b) in dv.iter_mut().zip(dout) {
                    *a += p[j] * b;
                }
            }
            let qi = i * stride + h * dh;
            for j in key_iter() {
                let ds = p[j] * (dp[j] - weighted) * scale;
                if ds == F::zero() {
                    continue;
                }
                let kj = j * stride + dim + h * dh;
                for c in 0..dh {
                    g[qi + c] += ds * qkv[kj + c];
                    g[kj + c] += ds * qkv[qi + c];
                }
            }
        }
    }
    dqkv
}
