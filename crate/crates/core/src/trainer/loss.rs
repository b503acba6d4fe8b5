use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{IcadError, Result};
use crate::real::Real;

/// Which side of the margin the positive sits on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    /// `max(s(h_R, h_neg) − s(h_R, h_pos) + α, 0)`: pulls the positive
    /// towards the references and pushes the negative away.
    #[default]
    Corrected,
    /// `max(s(h_R, h_pos) − s(h_R, h_neg) + α, 0)`. Minimising it rewards
    /// the opposite ordering; kept for comparison only.
    AsPrinted,
}

pub fn cosine<F: Real>(a: ArrayView1<'_, F>, b: ArrayView1<'_, F>) -> Result<F> {
    Ok(cosine_parts(a, b)?.0)
}

/// `(cos, |a|, |b|)`; a zero or non-finite norm is a numeric error.
fn cosine_parts<F: Real>(a: ArrayView1<'_, F>, b: ArrayView1<'_, F>) -> Result<(F, F, F)> {
    if a.len() != b.len() {
        return Err(IcadError::Shape(format!(
            "cannot compare vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    for n in [na, nb] {
        if !(n > F::zero() && n.is_finite()) {
            return Err(IcadError::Numeric(format!("cosine undefined for a vector of norm {n}")));
        }
    }
    let c = a.dot(&b) / (na * nb);
    if !c.is_finite() {
        return Err(IcadError::Numeric(format!("cosine similarity is {c}")));
    }
    Ok((c, na, nb))
}

/// `d cos(a, b) / da` and `/ db`.
fn cosine_grad<F: Real>(a: ArrayView1<'_, F>, b: ArrayView1<'_, F>) -> Result<(F, Array1<F>, Array1<F>)> {
    let (c, na, nb) = cosine_parts(a, b)?;
    let da = &b / (na * nb) - &a * (c / (na * na));
    let db = &a / (na * nb) - &b * (c / (nb * nb));
    Ok((c, da, db))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(IcadError::Config(format!(
            "margin must be finite and positive, got {alpha}"
        )));
    }
    Ok(())
}

/// Contrastive hinge on cosine similarities to `h_r`.
pub fn ccl_loss<F: Real>(
    h_r: ArrayView1<'_, F>,
    h_pos: ArrayView1<'_, F>,
    h_neg: ArrayView1<'_, F>,
    alpha: f64,
    form: LossForm,
) -> Result<F> {
    check_alpha(alpha)?;
    let s_pos = cosine(h_r, h_pos)?;
    let s_neg = cosine(h_r, h_neg)?;
    let gap = match form {
        LossForm::Corrected => s_neg - s_pos,
        LossForm::AsPrinted => s_pos - s_neg,
    };
    Ok((gap + F::from_f64(alpha)).max(F::zero()))
}

/// Gradients of the loss with respect to its three inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<F> {
    pub loss: F,
    pub d_ref: Array1<F>,
    pub d_pos: Array1<F>,
    pub d_neg: Array1<F>,
}

impl<F: Real> LossGrad<F> {
    pub fn is_active(&self) -> bool {
        self.loss > F::zero()
    }
}

pub fn ccl_loss_grad<F: Real>(
    h_r: ArrayView1<'_, F>,
    h_pos: ArrayView1<'_, F>,
    h_neg: ArrayView1<'_, F>,
    alpha: f64,
    form: LossForm,
) -> Result<LossGrad<F>> {
    check_alpha(alpha)?;
    let (s_pos, dr_pos, dpos) = cosine_grad(h_r, h_pos)?;
    let (s_neg, dr_neg, dneg) = cosine_grad(h_r, h_neg)?;
    let sign = match form {
        LossForm::Corrected => F::one(),
        LossForm::AsPrinted => -F::one(),
    };
    let raw = sign * (s_neg - s_pos) + F::from_f64(alpha);
    let d = h_r.len();
    if raw <= F::zero() {
        return Ok(LossGrad {
            loss: F::zero(),
            d_ref: Array1::zeros(d),
            d_pos: Array1::zeros(d),
            d_neg: Array1::zeros(d),
        });
    }
    Ok(LossGrad {
        loss: raw,
        d_ref: (dr_neg - dr_pos) * sign,
        d_pos: dpos * -sign,
        d_neg: dneg * sign,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn unit(angle: f64) -> Array1<f64> {
        array![angle.cos(), angle.sin()]
    }

    #[test]
    fn hinge_examples() {
        let r = unit(0.0);
        // cos(pos) = 0.9, cos(neg) = 0.1.
        let pos = array![0.9, (1.0f64 - 0.81).sqrt()];
        let neg = array![0.1, (1.0f64 - 0.01).sqrt()];
        let l = ccl_loss(r.view(), pos.view(), neg.view(), 0.5, LossForm::Corrected).unwrap();
        assert!(l.abs() < 1e-12);
        let l = ccl_loss(r.view(), neg.view(), pos.view(), 0.5, LossForm::Corrected).unwrap();
        assert!((l - 1.3).abs() < 1e-12);
        let l = ccl_loss(r.view(), pos.view(), neg.view(), 0.5, LossForm::AsPrinted).unwrap();
        assert!((l - 1.3).abs() < 1e-12);
    }

    #[test]
    fn spec_values() {
        let r = unit(0.3);
        // s_pos = s_neg
        let l = ccl_loss(r.view(), unit(1.0).view(), unit(-0.4).view(), 0.5, LossForm::Corrected).unwrap();
        assert!((l - 0.5).abs() < 1e-12);
        // s_pos = 1, s_neg = -1
        let l = ccl_loss(
            r.view(),
            (&r * 2.0).view(),
            (&r * -1.0).view(),
            0.5,
            LossForm::Corrected,
        )
        .unwrap();
        assert_eq!(l, 0.0);
        // s_pos = 0.2, s_neg = 0.9
        let e = array![1.0, 0.0];
        let pos = array![0.2, (1.0f64 - 0.04).sqrt()];
        let neg = array![0.9, (1.0f64 - 0.81).sqrt()];
        let l = ccl_loss(e.view(), pos.view(), neg.view(), 0.5, LossForm::Corrected).unwrap();
        assert!((l - 1.2).abs() < 1e-12);
    }

    #[test]
    fn zero_vector_is_numeric_error() {
        let z = Array1::<f64>::zeros(3);
        let x = array![1.0, 2.0, 3.0];
        assert!(matches!(
            ccl_loss(x.view(), z.view(), x.view(), 0.5, LossForm::Corrected),
            Err(IcadError::Numeric(_))
        ));
        assert!(matches!(
            ccl_loss_grad(z.view(), x.view(), x.view(), 0.5, LossForm::Corrected),
            Err(IcadError::Numeric(_))
        ));
    }

    /// Gradient descent on free `h_pos`, `h_neg` around a fixed `h_r`.
    #[test]
    fn minimiser_separates_positive_and_negative() {
        let r = unit(0.0);
        let mut p = unit(2.0);
        let mut n = unit(-0.5);
        // Margin 2 keeps the hinge active until both cosines saturate.
        for _ in 0..5000 {
            let g = ccl_loss_grad(r.view(), p.view(), n.view(), 2.0, LossForm::Corrected).unwrap();
            p = &p - &(&g.d_pos * 0.05);
            n = &n - &(&g.d_neg * 0.05);
        }
        let sp = cosine(r.view(), p.view()).unwrap();
        let sn = cosine(r.view(), n.view()).unwrap();
        assert!(sp > 0.999, "s_pos = {sp}");
        assert!(sn < -0.999, "s_neg = {sn}");
    }

    #[test]
    fn rejects_bad_margin_and_shapes() {
        let x = array![1.0, 0.0];
        assert!(matches!(
            ccl_loss(x.view(), x.view(), x.view(), -1.0, LossForm::Corrected),
            Err(IcadError::Config(_))
        ));
        assert!(ccl_loss(x.view(), x.view(), x.view(), 0.0, LossForm::Corrected).is_err());
        let y = array![1.0, 0.0, 0.0];
        assert!(matches!(
            ccl_loss(x.view(), y.view(), x.view(), 0.5, LossForm::Corrected),
            Err(IcadError::Shape(_))
        ));
    }

    fn vec3() -> impl Strategy<Value = Array1<f64>> {
        prop::collection::vec(-3.0f64..3.0, 3).prop_map(Array1::from)
    }

    proptest! {
        #[test]
        fn loss_bounds(r in vec3(), p in vec3(), n in vec3(), alpha in 0.01f64..2.0) {
            for form in [LossForm::Corrected, LossForm::AsPrinted] {
                let l = ccl_loss(r.view(), p.view(), n.view(), alpha, form).unwrap();
                prop_assert!(l >= 0.0);
                prop_assert!(l <= alpha + 2.0 + 1e-12);
            }
        }

        #[test]
        fn scale_invariant(r in vec3(), p in vec3(), n in vec3(), c in 0.1f64..10.0) {
            prop_assume!(r.dot(&r) > 1e-3 && p.dot(&p) > 1e-3 && n.dot(&n) > 1e-3);
            let a = ccl_loss(r.view(), p.view(), n.view(), 0.5, LossForm::Corrected).unwrap();
            let b = ccl_loss((&r * c).view(), (&p * c).view(), (&n * c).view(), 0.5, LossForm::Corrected).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn gradient_matches_finite_differences(r in vec3(), p in vec3(), n in vec3()) {
            prop_assume!(r.dot(&r) > 0.1 && p.dot(&p) > 0.1 && n.dot(&n) > 0.1);
            let alpha = 3.0;
            let g = ccl_loss_grad(r.view(), p.view(), n.view(), alpha, LossForm::Corrected).unwrap();
            let f = |r: &Array1<f64>, p: &Array1<f64>, n: &Array1<f64>| {
                ccl_loss(r.view(), p.view(), n.view(), alpha, LossForm::Corrected).unwrap()
            };
            let h = 1e-6;
            for i in 0..3 {
                let mut rp = r.clone();
                rp[i] += h;
                let mut rm = r.clone();
                rm[i] -= h;
                let num = (f(&rp, &p, &n) - f(&rm, &p, &n)) / (2.0 * h);
                prop_assert!((num - g.d_ref[i]).abs() < 1e-5 * (1.0 + num.abs()));
                let mut pp = p.clone();
                pp[i] += h;
                let mut pm = p.clone();
                pm[i] -= h;
                let num = (f(&r, &pp, &n) - f(&r, &pm, &n)) / (2.0 * h);
                prop_assert!((num - g.d_pos[i]).abs() < 1e-5 * (1.0 + num.abs()));
                let mut np = n.clone();
                np[i] += h;
                let mut nm = n.clone();
                nm[i] -= h;
                let num = (f(&r, &p, &np) - f(&r, &p, &nm)) / (2.0 * h);
                prop_assert!((num - g.d_neg[i]).abs() < 1e-5 * (1.0 + num.abs()));
            }
        }
    }
}
