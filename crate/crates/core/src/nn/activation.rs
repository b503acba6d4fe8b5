use ndarray::{Array2, ArrayView2, Zip};

use crate::real::{lit, Real};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu<F: Real>(x: ArrayView2<'_, F>) -> Array2<F> {
    let c: F = lit(GELU_C);
    let k: F = lit(GELU_K);
    let half: F = lit(0.5);
    x.mapv(|v| half * v * (F::one() + (c * (v + k * v * v * v)).tanh()))
}

/// Gradient of [`gelu`] w.r.t. its input, given the pre-activation `x`.
pub fn gelu_backward<F: Real>(x: ArrayView2<'_, F>, dy: ArrayView2<'_, F>) -> Array2<F> {
    let c: F = lit(GELU_C);
    let k: F = lit(GELU_K);
    let half: F = lit(0.5);
    let three: F = lit(3.0);
    let mut out = Array2::zeros(x.raw_dim());
    Zip::from(&mut out).and(x).and(dy).for_each(|o, &v, &g| {
        let t = (c * (v + k * v * v * v)).tanh();
        let d = half * (F::one() + t) + half * v * (F::one() - t * t) * c * (F::one() + three * k * v * v);
        *o = g * d;
    });
    out
}
