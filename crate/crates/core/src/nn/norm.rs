use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{join, Params};
use crate::real::{lit, Real};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

#[derive(Clone, Debug)]
pub struct LnCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

impl<F: Real> LayerNorm<F> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, F>) -> (Array2<F>, LnCache<F>) {
        let (rows, dim) = x.dim();
        let n: F = lit(dim as f64);
        let eps: F = lit(LN_EPS);
        let mut xhat = Array2::zeros((rows, dim));
        let mut rstd = Array1::zeros(rows);
        for (r, (row, mut out)) in x.outer_iter().zip(xhat.outer_iter_mut()).enumerate() {
            let mean = row.iter().fold(F::zero(), |a, &v| a + v) / n;
            let var = row.iter().fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
            let s = F::one() / (var + eps).sqrt();
            rstd[r] = s;
            for (o, &v) in out.iter_mut().zip(row.iter()) {
                *o = (v - mean) * s;
            }
        }
        let mut y = &xhat * &self.gamma;
        y += &self.beta;
        (y, LnCache { xhat, rstd })
    }

    pub fn backward(&self, cache: &LnCache<F>, dy: ArrayView2<'_, F>, grad: &mut Self) -> Array2<F> {
        let dim = dy.ncols();
        let n: F = lit(dim as f64);
        grad.gamma += &(&dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let dxhat = &dy * &self.gamma;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (r, mut out) in dx.outer_iter_mut().enumerate() {
            let g = dxhat.row(r);
            let xh = cache.xhat.row(r);
            let mean_g = g.iter().fold(F::zero(), |a, &v| a + v) / n;
            let mean_gx = g.iter().zip(xh.iter()).fold(F::zero(), |a, (&u, &v)| a + u * v) / n;
            let s = cache.rstd[r];
            for ((o, &gv), &xv) in out.iter_mut().zip(g.iter()).zip(xh.iter()) {
                *o = s * (gv - mean_g - xv * mean_gx);
            }
        }
        dx
    }
}

impl<F: Real> Params<F> for LayerNorm<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        self.gamma.visit(&join(prefix, "gamma"), f);
        self.beta.visit(&join(prefix, "beta"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [F])) {
        self.gamma.visit_mut(&join(prefix, "gamma"), f);
        self.beta.visit_mut(&join(prefix, "beta"), f);
    }
}

/// Per-channel (column) normalisation over the time axis of one patch.
///
/// A constant channel maps to zeros; `eps` keeps the division finite.
pub fn instance_norm<F: Real>(x: ArrayView2<'_, F>, eps: f64) -> Array2<F> {
    let rows = x.nrows();
    let n: F = lit(rows as f64);
    let eps: F = lit(eps);
    let mut out = x.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let mean = col.iter().fold(F::zero(), |a, &v| a + v) / n;
        let var = col.iter().fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
        let s = F::one() / (var + eps).sqrt();
        col.mapv_inplace(|v| (v - mean) * s);
    }
    out
}
