use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::{Linear, Params};
use crate::real::Real;

/// Kernel-3, same-padded 1-D convolution over the row (time) axis.
///
/// Implemented as an im2col expansion followed by a [`Linear`] map, so the
/// weight is laid out as `(3 · in_channels) × out_channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d<F> {
    pub proj: Linear<F>,
}

impl<F: Real> Conv1d<F> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        Conv1d {
            proj: Linear::new(3 * in_ch, out_ch, rng),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.proj.fan_in() / 3
    }

    /// Returns the output and the im2col buffer needed for backward.
    pub fn forward(&self, x: ArrayView2<'_, F>) -> (Array2<F>, Array2<F>) {
        let cols = im2col3(x);
        let y = self.proj.forward(cols.view());
        (y, cols)
    }

    pub fn backward(&self, cols: &Array2<F>, dy: ArrayView2<'_, F>, grad: &mut Self) -> Array2<F> {
        let dcols = self.proj.backward(cols.view(), dy, &mut grad.proj);
        col2im3(dcols.view(), self.in_channels())
    }
}

impl<F: Real> Params<F> for Conv1d<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        self.proj.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [F])) {
        self.proj.visit_mut(prefix, f);
    }
}

/// Row `t` of the result is `[x[t-1], x[t], x[t+1]]` with zero padding.
pub fn im2col3<F: Real>(x: ArrayView2<'_, F>) -> Array2<F> {
    let (len, ch) = x.dim();
    let mut cols = Array2::zeros((len, 3 * ch));
    for t in 0..len {
        for (slot, src) in [t.checked_sub(1), Some(t), (t + 1 < len).then_some(t + 1)]
            .into_iter()
            .enumerate()
        {
            if let Some(s) = src {
                cols.row_mut(t)
                    .slice_mut(ndarray::s![slot * ch..(slot + 1) * ch])
                    .assign(&x.row(s));
            }
        }
    }
    cols
}

/// Adjoint of [`im2col3`].
pub fn col2im3<F: Real>(dcols: ArrayView2<'_, F>, ch: usize) -> Array2<F> {
    let len = dcols.nrows();
    let mut dx = Array2::zeros((len, ch));
    for t in 0..len {
        for (slot, src) in [t.checked_sub(1), Some(t), (t + 1 < len).then_some(t + 1)]
            .into_iter()
            .enumerate()
        {
            if let Some(s) = src {
                let mut row = dx.row_mut(s);
                row += &dcols.row(t).slice(ndarray::s![slot * ch..(slot + 1) * ch]);
            }
        }
    }
    dx
}
