//! Layers with explicit forward caches and hand-written backward passes.
//!
//! Every layer is generic over [`Real`] so the same code trains at `f32` and
//! is gradient-checked at `f64`. A gradient accumulator is simply another
//! instance of the layer type (see [`Params::zeros_like`]).

mod activation;
mod attention;
mod conv;
mod linear;
mod norm;
mod transformer;

pub use activation::{gelu, gelu_backward};
pub use attention::{attend_row, attention_backward, attention_forward, visible_keys, Attention, HiddenSpan};
pub use conv::{col2im3, im2col3, Conv1d};
pub use linear::Linear;
pub use norm::{instance_norm, LayerNorm, LnCache, LN_EPS};
pub use transformer::{Block, BlockCache, Stack, StackCache};

use ndarray::{Array, Dimension};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::real::Real;

/// Walks every learnable tensor in a fixed, deterministic order.
pub trait Params<F: Real> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [F]));

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut out = self.clone();
        out.visit_mut("", &mut |_, _, data| data.fill(F::zero()));
        out
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, data| n += data.len());
        n
    }

    /// Concatenate every tensor into one flat buffer in visit order.
    fn flatten(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit("", &mut |_, _, data| out.extend_from_slice(data));
        out
    }

    /// Inverse of [`Params::flatten`]. Panics if `flat` has the wrong length.
    fn assign_flat(&mut self, flat: &[F]) {
        let mut offset = 0;
        self.visit_mut("", &mut |_, _, data| {
            data.copy_from_slice(&flat[offset..offset + data.len()]);
            offset += data.len();
        });
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    /// `self += other` element-wise; both must share a layout.
    fn add_assign_params(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let flat = other.flatten();
        let mut offset = 0;
        self.visit_mut("", &mut |_, _, data| {
            for (d, s) in data.iter_mut().zip(&flat[offset..]) {
                *d += *s;
            }
            offset += data.len();
        });
    }
}

impl<F: Real, D: Dimension> Params<F> for Array<F, D> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        f(
            prefix,
            self.shape(),
            self.as_slice().expect("parameters are kept in standard layout"),
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [F])) {
        let shape = self.shape().to_vec();
        f(
            prefix,
            &shape,
            self.as_slice_mut().expect("parameters are kept in standard layout"),
        );
    }
}

impl<F: Real, P: Params<F>> Params<F> for Vec<P> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&format!("{prefix}.{i}"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [F])) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&format!("{prefix}.{i}"), f);
        }
    }
}

/// Gaussian initialisation with the given standard deviation.
pub fn randn<F: Real, D: Dimension, Sh, R>(shape: Sh, std: f64, rng: &mut R) -> Array<F, D>
where
    Sh: ndarray::ShapeBuilder<Dim = D>,
    R: Rng + ?Sized,
{
    Array::from_shape_simple_fn(shape, || {
        let z: f64 = StandardNormal.sample(rng);
        F::from_f64(z * std)
    })
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
