//! The nonlocal operator `K` and the full linear operator `L = K - hI`.
//!
//! Quadrature weights are folded into the matrix as a right factor
//! `diag(w)`, so all operators act on raw nodal values.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::space::MeasureSpace;

/// Law `J(x, y) = law(d(x, y))` used to fill the kernel matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum KernelLaw {
    Constant { c: f64 },
    /// `height` when `d < radius`, zero otherwise.
    Tophat { radius: f64, height: f64 },
    /// `scale * exp(-d^2 / (2 sigma^2))`.
    Gaussian { sigma: f64, scale: f64 },
    /// Explicit `n x n` matrix, row-major.
    Table { values: Vec<f64> },
}

/// `J > j0` whenever `d(x, y) < radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositivityCertificate {
    pub radius: f64,
    pub j0: f64,
}

#[derive(Debug, Clone)]
pub struct Kernel {
    space: Arc<MeasureSpace>,
    jmat: DMatrix<f64>,
    symmetric: bool,
    positivity: Option<PositivityCertificate>,
}

const SYMMETRY_TOL: f64 = 1e-12;

impl Kernel {
    pub fn assemble(space: Arc<MeasureSpace>, law: &KernelLaw) -> Result<Self> {
        let n = space.len();
        let d = space.distances();
        let (jmat, positivity) = match *law {
            KernelLaw::Constant { c } => {
                require_nonneg("constant kernel value", c)?;
                let cert = (c > 0.0).then(|| PositivityCertificate {
                    radius: 2.0 * space.diameter() + 1.0,
                    j0: 0.5 * c,
                });
                (DMatrix::from_element(n, n, c), cert)
            }
            KernelLaw::Tophat { radius, height } => {
                require_nonneg("tophat radius", radius)?;
                require_nonneg("tophat height", height)?;
                let m = DMatrix::from_fn(n, n, |i, j| if d[(i, j)] < radius { height } else { 0.0 });
                let cert = (radius > 0.0 && height > 0.0)
                    .then_some(PositivityCertificate { radius, j0: 0.5 * height });
                (m, cert)
            }
            KernelLaw::Gaussian { sigma, scale } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::invalid(format!("gaussian width must be positive, got {sigma}")));
                }
                require_nonneg("gaussian scale", scale)?;
                let m = DMatrix::from_fn(n, n, |i, j| {
                    let r = d[(i, j)] / sigma;
                    scale * (-0.5 * r * r).exp()
                });
                // J(d) > scale * e^{-1/2} on d < sigma
                let cert = (scale > 0.0).then(|| PositivityCertificate {
                    radius: sigma,
                    j0: 0.5 * scale * (-0.5f64).exp(),
                });
                (m, cert)
            }
            KernelLaw::Table { ref values } => {
                check_len(n * n, values.len())?;
                if let Some(k) = values.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(Error::invalid(format!(
                        "kernel table entry ({}, {}) is {} but must be nonnegative",
                        k / n,
                        k % n,
                        values[k]
                    )));
                }
                (DMatrix::from_row_slice(n, n, values), None)
            }
        };
        Self::from_parts(space, jmat, positivity)
    }

    /// Kernel from an explicit matrix; used for tables and restrictions.
    pub fn from_matrix(space: Arc<MeasureSpace>, jmat: DMatrix<f64>) -> Result<Self> {
        Self::from_parts(space, jmat, None)
    }

    fn from_parts(
        space: Arc<MeasureSpace>,
        jmat: DMatrix<f64>,
        positivity: Option<PositivityCertificate>,
    ) -> Result<Self> {
        let n = space.len();
        if jmat.nrows() != n || jmat.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: jmat.nrows() });
        }
        if jmat.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("kernel entries must be nonnegative and finite"));
        }
        let symmetric = (0..n).all(|i| (0..i).all(|j| (jmat[(i, j)] - jmat[(j, i)]).abs() <= SYMMETRY_TOL));
        let kernel = Self { space, jmat, symmetric, positivity };
        debug_assert!(kernel.positivity_holds());
        Ok(kernel)
    }

    /// Validate the positivity certificate entrywise.
    pub fn positivity_holds(&self) -> bool {
        let Some(cert) = self.positivity else { return true };
        let n = self.len();
        (0..n).all(|i| {
            (0..n).all(|j| self.space.distance(i, j) >= cert.radius || self.jmat[(i, j)] > cert.j0)
        })
    }

    pub fn space(&self) -> &Arc<MeasureSpace> {
        &self.space
    }

    pub fn jmat(&self) -> &DMatrix<f64> {
        &self.jmat
    }

    pub fn weights(&self) -> &[f64] {
        self.space.weights()
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn positivity(&self) -> Option<PositivityCertificate> {
        self.positivity
    }

    /// `jmat * diag(w)`, the matrix of `K` acting on nodal values.
    pub fn weighted(&self) -> DMatrix<f64> {
        let w = self.weights();
        let mut m = self.jmat.clone();
        for (j, mut col) in m.column_iter_mut().enumerate() {
            col *= w[j];
        }
        m
    }

    /// `(Ku)_i = Σ_j J_ij w_j u_j`.
    pub fn apply(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.len(), u.len())?;
        let wu = DVector::from_iterator(u.len(), u.iter().zip(self.weights()).map(|(x, w)| x * w));
        Ok(&self.jmat * wu)
    }

    /// `h0(x) = ∫ J(x, y) dy`.
    pub fn h0(&self) -> DVector<f64> {
        self.apply(&DVector::from_element(self.len(), 1.0)).expect("length matches by construction")
    }

    /// Kernel of the sub-space selected by `mask`.
    pub fn restrict(&self, mask: &[bool]) -> Result<Kernel> {
        let sub = Arc::new(self.space.restrict(mask)?);
        let idx: Vec<usize> = (0..self.len()).filter(|&i| mask[i]).collect();
        let jmat = DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.jmat[(idx[a], idx[b])]);
        Self::from_parts(sub, jmat, self.positivity)
    }
}

/// Matrix realization of `L = K - hI`.
#[derive(Debug, Clone)]
pub struct NonlocalOperator {
    kernel: Kernel,
    h: DVector<f64>,
    h0: DVector<f64>,
    kw: DMatrix<f64>,
    amat: DMatrix<f64>,
}

impl NonlocalOperator {
    pub fn new(kernel: Kernel, h: DVector<f64>) -> Result<Self> {
        check_len(kernel.len(), h.len())?;
        if let Some(i) = h.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("potential at node {i} is not finite")));
        }
        let kw = kernel.weighted();
        let mut amat = kw.clone();
        for i in 0..h.len() {
            amat[(i, i)] -= h[i];
        }
        let h0 = kernel.h0();
        let row_sums = amat.column_sum();
        let scale = 1.0 + h0.amax() + h.amax();
        for i in 0..h.len() {
            let expect = h0[i] - h[i];
            if (row_sums[i] - expect).abs() > 1e-12 * scale {
                return Err(Error::NonConvergence(format!(
                    "row sum check failed at node {i}: {} vs {expect}",
                    row_sums[i]
                )));
            }
        }
        Ok(Self { kernel, h, h0, kw, amat })
    }

    /// Operator with potential `h = h0 + offset`.
    pub fn with_h0_offset(kernel: Kernel, offset: f64) -> Result<Self> {
        let h = kernel.h0().add_scalar(offset);
        Self::new(kernel, h)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn space(&self) -> &Arc<MeasureSpace> {
        self.kernel.space()
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn h0(&self) -> &DVector<f64> {
        &self.h0
    }

    /// `jmat * diag(w)`; entrywise nonnegative.
    pub fn kw(&self) -> &DMatrix<f64> {
        &self.kw
    }

    /// `jmat * diag(w) - diag(h)`.
    pub fn amat(&self) -> &DMatrix<f64> {
        &self.amat
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        self.kernel.weights()
    }

    pub fn apply(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.len(), u.len())?;
        Ok(&self.amat * u)
    }

    /// Same kernel, different potential.
    pub fn with_potential(&self, h: DVector<f64>) -> Result<Self> {
        Self::new(self.kernel.clone(), h)
    }

    /// Operator `K + diag(coef)`, i.e. potential `-coef`.
    pub fn k_plus(kernel: &Kernel, coef: &DVector<f64>) -> Result<Self> {
        Self::new(kernel.clone(), -coef)
    }
}

fn require_nonneg(what: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} must be nonnegative, got {v}")))
    }
}
