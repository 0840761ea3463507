//! Small polynomial helpers for building realizations from zeros and poles.

use nalgebra::Complex;

use crate::error::{Error, Result};

/// Expands `prod (z - r_i)` into monic real coefficients, constant term
/// first. Complex roots must come in conjugate pairs; the imaginary residue
/// left by rounding is checked against the coefficient magnitude.
pub fn real_coefficients_from_roots(roots: &[Complex<f64>]) -> Result<Vec<f64>> {
    let mut coeffs: Vec<Complex<f64>> = vec![Complex::new(1.0, 0.0)];
    for root in roots {
        // Multiply by (z - root).
        let mut next = vec![Complex::new(0.0, 0.0); coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i + 1] += c;
            next[i] -= c * root;
        }
        coeffs = next;
    }
    let scale = coeffs.iter().map(|c| c.norm()).fold(1.0, f64::max);
    let mut real = Vec::with_capacity(coeffs.len());
    for c in &coeffs {
        if c.im.abs() > 1e-9 * scale {
            return Err(Error::Numerical {
                context: "polynomial from roots",
                detail: format!(
                    "roots are not closed under conjugation (imaginary residue {:.3e})",
                    c.im
                ),
            });
        }
        real.push(c.re);
    }
    Ok(real)
}

/// Evaluates a polynomial with constant-first coefficients at a complex
/// point.
pub fn eval(coeffs: &[f64], z: Complex<f64>) -> Complex<f64> {
    let mut acc = Complex::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        acc = acc * z + c;
    }
    acc
}
