use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_norm(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Alignment between the full-model and sub-model gradients on the
/// sub-model's coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    /// `⟨g_full, g_sub⟩ / ‖g_sub‖²`, possibly negative or above one.
    pub raw: f64,
    /// `min(1, raw)`.
    pub alpha: f64,
    /// `alpha` clamped to `[0, 1]`, the factor used for stepsizes.
    pub clamped: f64,
}

/// `None` when the sub-model gradient vanishes (the ratio is undefined).
pub fn alignment_alpha(full_restricted: &[f64], sub_restricted: &[f64]) -> Result<Option<Alignment>> {
    if full_restricted.len() != sub_restricted.len() {
        return Err(Error::ShapeMismatch(format!(
            "restricted gradients have lengths {} and {}",
            full_restricted.len(),
            sub_restricted.len()
        )));
    }
    let den = sq_norm(sub_restricted);
    if den == 0.0 {
        return Ok(None);
    }
    let raw = dot(full_restricted, sub_restricted) / den;
    let alpha = raw.min(1.0);
    Ok(Some(Alignment {
        raw,
        alpha,
        clamped: alpha.max(0.0),
    }))
}

/// `‖g_full‖ / (α·‖g_sub‖)`; `None` when `α ≤ 0` or the denominator
/// vanishes.
pub fn norm_discrepancy(full_all: &[f64], sub_restricted: &[f64], alpha: f64) -> Option<f64> {
    if alpha <= 0.0 {
        return None;
    }
    let den = alpha * sq_norm(sub_restricted).sqrt();
    if den == 0.0 || !den.is_finite() {
        return None;
    }
    Some(sq_norm(full_all).sqrt() / den)
}

/// One diagnostics measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticSample {
    pub round: usize,
    pub stage: usize,
    /// `None` when the sub-model gradient vanished.
    pub alignment: Option<Alignment>,
    pub q: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DescentCheck {
    Checked {
        residual: f64,
        tolerance: f64,
        holds: bool,
    },
    /// The stepsize exceeds `1/L`, where the bound is not claimed.
    NotApplicable,
}

/// Takes one restricted step `x⁺ = x − α·γ·g_sub` on `coords` and compares
/// `f(x⁺)` with the guaranteed decrease `f(x) − (γ/2)·α²·‖g_sub‖²`.
///
/// `alpha` is clamped to `[0, 1]` before use. The residual is
/// `f(x⁺) − bound`; the check passes when it is at most
/// `1e-10·max(1, |f(x)|)`.
pub fn descent_check<F: Fn(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    coords: &[usize],
    sub_grad: &[f64],
    alpha: f64,
    gamma: f64,
    lipschitz: f64,
) -> Result<DescentCheck> {
    if coords.len() != sub_grad.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} coordinates for a gradient of length {}",
            coords.len(),
            sub_grad.len()
        )));
    }
    if let Some(&c) = coords.iter().find(|&&c| c >= x.len()) {
        return Err(Error::InvalidArgument(format!(
            "coordinate {c} outside the parameter vector"
        )));
    }
    if !(gamma > 0.0 && lipschitz > 0.0) {
        return Err(Error::InvalidArgument(
            "stepsize and smoothness must be positive".into(),
        ));
    }
    if gamma * lipschitz > 1.0 {
        return Ok(DescentCheck::NotApplicable);
    }
    let a = alpha.clamp(0.0, 1.0);
    let fx = f(x);
    let mut next = x.to_vec();
    for (&c, &g) in coords.iter().zip(sub_grad) {
        next[c] -= a * gamma * g;
    }
    let bound = fx - 0.5 * gamma * a * a * sq_norm(sub_grad);
    let residual = f(&next) - bound;
    let tolerance = 1e-10 * fx.abs().max(1.0);
    Ok(DescentCheck::Checked {
        residual,
        tolerance,
        holds: residual <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_examples() {
        let g = [1.0, -2.0, 0.5];
        assert_eq!(alignment_alpha(&g, &g).unwrap().unwrap().alpha, 1.0);
        let a = alignment_alpha(&[0.0, 1.0], &[1.0, 0.0]).unwrap().unwrap();
        assert_eq!(a.alpha, 0.0);
        let doubled: Vec<f64> = g.iter().map(|v| 2.0 * v).collect();
        let a = alignment_alpha(&doubled, &g).unwrap().unwrap();
        assert_eq!((a.raw, a.alpha), (2.0, 1.0));
        let a = alignment_alpha(&[-1.0], &[1.0]).unwrap().unwrap();
        assert_eq!((a.alpha, a.clamped), (-1.0, 0.0));
        assert_eq!(alignment_alpha(&[1.0], &[0.0]).unwrap(), None);
        assert!(alignment_alpha(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn q_examples() {
        assert_eq!(norm_discrepancy(&[3.0, 4.0], &[3.0, 4.0], 1.0), Some(1.0));
        // ‖g_full‖ = 10, α·‖g_sub‖ = 0.5·10.
        assert_eq!(norm_discrepancy(&[6.0, 8.0], &[6.0, 8.0], 0.5), Some(2.0));
        assert_eq!(norm_discrepancy(&[1.0], &[1.0], 0.0), None);
        assert_eq!(norm_discrepancy(&[1.0], &[0.0], 1.0), None);
    }

    #[test]
    fn quadratic_step_to_minimum() {
        let lambda = 4.0;
        let f = |x: &[f64]| 0.5 * lambda * x[0] * x[0];
        let x = [1.5];
        let g = [lambda * x[0]];
        match descent_check(f, &x, &[0], &g, 1.0, 1.0 / lambda, lambda).unwrap() {
            DescentCheck::Checked { residual, holds, .. } => {
                assert!(holds);
                assert!(residual.abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stationary_point_has_zero_residual() {
        let f = |x: &[f64]| x[0] * x[0] + 1.0;
        match descent_check(f, &[0.0], &[0], &[0.0], 1.0, 0.1, 2.0).unwrap() {
            DescentCheck::Checked { residual, .. } => assert_eq!(residual, 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn large_step_not_applicable() {
        let f = |x: &[f64]| x[0] * x[0];
        assert_eq!(
            descent_check(f, &[1.0], &[0], &[2.0], 1.0, 1.0, 2.0).unwrap(),
            DescentCheck::NotApplicable
        );
    }
}
