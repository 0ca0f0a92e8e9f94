//! Principal spectral quantities of `L = K - hI`.
//!
//! `Λ = sup Re σ(K - hI)` is computed either densely (real Schur form) or by
//! power iteration on the entrywise-nonnegative shift `L + sI`. Certificates
//! come from Collatz–Wielandt ratios and, for symmetric kernels, from the
//! weighted Rayleigh quotient.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::kernel::{Kernel, NonlocalOperator};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dense,
    Power,
    #[default]
    Auto,
    Rayleigh,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Method::Dense),
            "power" => Ok(Method::Power),
            "auto" => Ok(Method::Auto),
            "rayleigh" => Ok(Method::Rayleigh),
            other => Err(Error::invalid(format!("unknown spectral method `{other}`"))),
        }
    }
}

/// A value of `-h` together with the measure of the nodes where it is taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeValue {
    pub value: f64,
    pub measure: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralReport {
    pub lambda: f64,
    /// Sup-normalized eigenvector, when one was computed.
    pub eigenfunction: Option<Vec<f64>>,
    pub is_principal: bool,
    pub essential_range: Vec<RangeValue>,
    pub method: Method,
    /// `‖Aφ - Λφ‖_∞` for the reported eigenfunction.
    pub residual: Option<f64>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CwBounds {
    pub lower: f64,
    pub upper: f64,
    pub test_function: Vec<f64>,
}

const POWER_CAP: usize = 100_000;
const AUTO_POWER_CAP: usize = 20_000;
const PRINCIPAL_FLOOR: f64 = 1e-12;
const RANGE_TOL: f64 = 1e-12;

/// Compute `Λ` with the requested method.
pub fn principal_value(op: &NonlocalOperator, method: Method) -> Result<SpectralReport> {
    let a = op.amat();
    let shift = op.h().max() + 1.0;
    let (lambda, vector, iterations, used) = match method {
        Method::Dense => {
            let (l, v) = dense_pair(op)?;
            (l, v, None, Method::Dense)
        }
        Method::Power => {
            let p = linalg::shifted_power(a, shift, POWER_CAP);
            if !p.converged {
                return Err(Error::NonConvergence(format!(
                    "power iteration did not converge in {POWER_CAP} iterations"
                )));
            }
            (p.value, p.vector, Some(p.iterations), Method::Power)
        }
        Method::Auto => {
            let p = linalg::shifted_power(a, shift, AUTO_POWER_CAP);
            if p.converged {
                (p.value, p.vector, Some(p.iterations), Method::Power)
            } else {
                let (l, v) = dense_pair(op)?;
                (l, v, None, Method::Dense)
            }
        }
        Method::Rayleigh => return rayleigh_lambda(op.kernel(), op.h()),
    };
    Ok(finish(op, lambda, vector, used, iterations))
}

fn dense_pair(op: &NonlocalOperator) -> Result<(f64, DVector<f64>)> {
    if op.kernel().is_symmetric() {
        let (s, sw) = symmetrized(op.kernel(), op.h());
        let (lambda, v) = linalg::symmetric_top(&s);
        return Ok((lambda, DVector::from_iterator(sw.len(), v.iter().zip(&sw).map(|(x, r)| x / r))));
    }
    let a = op.amat();
    let lambda = linalg::spectral_abscissa(a)?;
    let v = linalg::inverse_iteration(a, lambda)?;
    Ok((lambda, v))
}

fn finish(
    op: &NonlocalOperator,
    lambda: f64,
    vector: DVector<f64>,
    method: Method,
    iterations: Option<usize>,
) -> SpectralReport {
    let vector = linalg::sup_normalize(vector);
    let residual = (op.amat() * &vector - &vector * lambda).amax();
    let is_principal = vector.iter().all(|&v| v > PRINCIPAL_FLOOR);
    SpectralReport {
        lambda,
        eigenfunction: Some(vector.as_slice().to_vec()),
        is_principal,
        essential_range: essential_range(op.h(), op.weights(), RANGE_TOL).unwrap_or_default(),
        method,
        residual: Some(residual),
        iterations,
    }
}

/// `Λ(K + diag(coef))`, the principal value with `coef` acting as a reaction coefficient.
pub fn lambda_k_plus(kernel: &Kernel, coef: &DVector<f64>, method: Method) -> Result<f64> {
    let op = NonlocalOperator::k_plus(kernel, coef)?;
    Ok(principal_value(&op, method)?.lambda)
}

/// Collatz–Wielandt ratios `(Aφ)_i / φ_i` for a positive test function.
pub fn cw_bounds(op: &NonlocalOperator, phi: &DVector<f64>) -> Result<CwBounds> {
    check_len(op.len(), phi.len())?;
    if let Some(i) = phi.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::invalid(format!("test function must be positive; entry {i} is {}", phi[i])));
    }
    let aphi = op.amat() * phi;
    let (lower, upper) = aphi
        .iter()
        .zip(phi.iter())
        .map(|(a, p)| a / p)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
    Ok(CwBounds { lower, upper, test_function: phi.as_slice().to_vec() })
}

/// Distinct values of `-h` (clustered within `tol`) with their measures.
pub fn essential_range(h: &DVector<f64>, weights: &[f64], tol: f64) -> Result<Vec<RangeValue>> {
    check_len(h.len(), weights.len())?;
    if !(tol > 0.0) {
        return Err(Error::invalid("clustering tolerance must be positive"));
    }
    let mut pairs: Vec<(f64, f64)> = h.iter().zip(weights).map(|(v, w)| (-v, *w)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<RangeValue> = Vec::new();
    // (representative, weight of representative value, last value seen)
    let mut current: Option<(RangeValue, f64, f64)> = None;
    for (v, w) in pairs {
        match current.as_mut() {
            Some((cluster, best_w, last)) if v - *last <= tol => {
                cluster.measure += w;
                if v == cluster.value {
                    *best_w += w;
                } else if w > *best_w {
                    cluster.value = v;
                    *best_w = w;
                }
                *last = v;
            }
            _ => {
                if let Some((c, _, _)) = current.take() {
                    out.push(c);
                }
                current = Some((RangeValue { value: v, measure: w }, w, v));
            }
        }
    }
    if let Some((c, _, _)) = current {
        out.push(c);
    }
    Ok(out)
}

/// `Λ` for symmetric kernels as the top eigenvalue of the weight-symmetrized
/// matrix `W^{1/2} (J W - H) W^{-1/2}`.
pub fn rayleigh_lambda(kernel: &Kernel, h: &DVector<f64>) -> Result<SpectralReport> {
    if !kernel.is_symmetric() {
        return Err(Error::NotSymmetric);
    }
    check_len(kernel.len(), h.len())?;
    let n = kernel.len();
    let (s, sw) = symmetrized(kernel, h);
    let (lambda, v) = linalg::symmetric_top(&s);
    let phi = DVector::from_iterator(n, v.iter().zip(&sw).map(|(x, r)| x / r));
    let op = NonlocalOperator::new(kernel.clone(), h.clone())?;
    Ok(finish(&op, lambda, phi, Method::Rayleigh, None))
}

/// `W^{1/2} J W^{1/2} - H`, similar to the operator matrix when `J` is symmetric.
fn symmetrized(kernel: &Kernel, h: &DVector<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let sw: Vec<f64> = kernel.weights().iter().map(|w| w.sqrt()).collect();
    let n = kernel.len();
    let j = kernel.jmat();
    let mut s = DMatrix::from_fn(n, n, |a, b| 0.5 * (j[(a, b)] + j[(b, a)]) * sw[a] * sw[b]);
    for i in 0..n {
        s[(i, i)] -= h[i];
    }
    (s, sw)
}

/// Rayleigh form `E(φ) = -½ ΣΣ w_i w_j J_ij (φ_j - φ_i)² - Σ w_i (h_i - h0_i) φ_i²`.
pub fn spectral_energy(kernel: &Kernel, h: &DVector<f64>, phi: &DVector<f64>) -> Result<f64> {
    if !kernel.is_symmetric() {
        return Err(Error::NotSymmetric);
    }
    check_len(kernel.len(), h.len())?;
    check_len(kernel.len(), phi.len())?;
    let w = kernel.weights();
    let j = kernel.jmat();
    let h0 = kernel.h0();
    let n = kernel.len();
    let mut jump = 0.0;
    for a in 0..n {
        let mut row = 0.0;
        for b in 0..n {
            let d = phi[b] - phi[a];
            row += w[b] * j[(a, b)] * d * d;
        }
        jump += w[a] * row;
    }
    let potential: f64 = (0..n).map(|i| w[i] * (h[i] - h0[i]) * phi[i] * phi[i]).sum();
    Ok(-0.5 * jump - potential)
}

/// Weighted L² norm `(Σ w_i φ_i²)^{1/2}`.
pub fn weighted_norm(weights: &[f64], phi: &DVector<f64>) -> f64 {
    weights.iter().zip(phi.iter()).map(|(w, p)| w * p * p).sum::<f64>().sqrt()
}

/// Predicted sign of `Λ` attached to a criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Positive,
    Negative,
    Zero,
    /// `Λ > -inf h`, hence principal.
    AboveMinusInfH,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub holds: bool,
    /// Quantity the criterion is decided on (mass, δ, gap, ...).
    pub value: f64,
    pub prediction: Prediction,
    /// Whether the computed `Λ` agrees; `None` when the criterion does not hold.
    pub consistent: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub m: f64,
    pub lambda: f64,
    pub computed_sign: i8,
    pub criteria: Vec<Criterion>,
    /// `Σ w_i / (h_i - m + ε)` for decreasing ε; a growing sequence hints at a
    /// non-integrable `1/(h - m)` in the continuum.
    pub harmonic_proxy: Vec<(f64, f64)>,
}

/// Evaluate the sign criteria for `Λ` and pair each with the computed sign.
pub fn sign_criteria(op: &NonlocalOperator) -> Result<CriteriaReport> {
    let lambda = principal_value(op, Method::Auto)?.lambda;
    let h = op.h();
    let h0 = op.h0();
    let w = op.weights();
    let n = op.len();
    let scale = 1.0 + h.amax() + h0.amax();
    let zero_tol = 1e-10 * scale;
    let computed_sign = if lambda > zero_tol {
        1
    } else if lambda < -zero_tol {
        -1
    } else {
        0
    };
    let m = h.min();
    let agrees = |p: Prediction| match p {
        Prediction::Positive => computed_sign > 0,
        Prediction::Negative => computed_sign < 0,
        Prediction::Zero => computed_sign == 0,
        Prediction::AboveMinusInfH => lambda > -m + zero_tol,
    };
    let mut criteria = Vec::new();
    let mut push = |name: &str, holds: bool, value: f64, prediction: Prediction| {
        criteria.push(Criterion {
            name: name.to_string(),
            holds,
            value,
            prediction,
            consistent: holds.then(|| agrees(prediction)),
        });
    };

    push("m_negative", m < 0.0, m, Prediction::Positive);
    let mass_at_min: f64 = (0..n).filter(|&i| (h[i] - m).abs() <= 1e-12).map(|i| w[i]).sum();
    push("mass_at_min", mass_at_min > 0.0, mass_at_min, Prediction::AboveMinusInfH);
    let osc = h.max() - m;
    push("oscillation_criterion", osc < h0.min(), osc, Prediction::AboveMinusInfH);
    let delta = (h0 - h).min();
    push("h_plus_delta_below_h0", delta > 0.0, delta, Prediction::Positive);
    let gap = (h - h0).amax();
    let equal = gap <= 1e-12 * scale;
    push("h_equals_h0", equal, gap, Prediction::Zero);
    let excess = h - h0;
    let below = !equal && excess.min() >= -1e-12 * scale && excess.max() > 1e-12 * scale;
    push("h0_strictly_below_h", below, excess.max(), Prediction::Negative);
    let mean_gap: f64 = (0..n).map(|i| w[i] * (h0[i] - h[i])).sum();
    push(
        "symmetric_mean_criterion",
        op.kernel().is_symmetric() && mean_gap > 1e-12 * scale,
        mean_gap,
        Prediction::Positive,
    );

    let harmonic_proxy = [1e-2, 1e-4, 1e-6, 1e-8]
        .iter()
        .map(|&eps| (eps, (0..n).map(|i| w[i] / (h[i] - m + eps)).sum()))
        .collect();

    Ok(CriteriaReport { m, lambda, computed_sign, criteria, harmonic_proxy })
}

/// Coefficient `H = h - a` on the masked nodes, `h` elsewhere, for the operator `K + diag(H)`.
pub fn shifted_potential(h: &DVector<f64>, mask: &[bool], a: f64) -> Result<DVector<f64>> {
    check_len(h.len(), mask.len())?;
    if !mask.iter().any(|&m| m) {
        return Err(Error::invalid("shift mask is empty"));
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::invalid(format!("shift amplitude must be positive, got {a}")));
    }
    Ok(DVector::from_fn(h.len(), |i, _| if mask[i] { h[i] - a } else { h[i] }))
}

/// `sup h0 + Λ(h, Ω') + Λ(h, ω') - a`, where `ω'` is the masked set,
/// `Ω'` its complement and `Λ(h, S)` is the principal value of `K_S + h` on `S`.
pub fn shift_bound_rhs(kernel: &Kernel, h: &DVector<f64>, mask: &[bool], a: f64) -> Result<f64> {
    check_len(kernel.len(), h.len())?;
    check_len(kernel.len(), mask.len())?;
    let inside = mask.iter().filter(|&&m| m).count();
    if inside == 0 || inside == mask.len() {
        return Err(Error::invalid("shift mask must split the domain into two nonempty parts"));
    }
    let complement: Vec<bool> = mask.iter().map(|m| !m).collect();
    let part = |sel: &[bool]| -> Result<f64> {
        let sub = kernel.restrict(sel)?;
        let coef = DVector::from_iterator(sub.len(), (0..h.len()).filter(|&i| sel[i]).map(|i| h[i]));
        lambda_k_plus(&sub, &coef, Method::Dense)
    };
    Ok(kernel.h0().max() + part(&complement)? + part(mask)? - a)
}
