//! Dense linear algebra kernels: matrix exponential, refined linear solves,
//! shifted power iteration and dense spectral abscissa.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

// [13/13] Padé coefficients for exp.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Infinity-norm (max absolute row sum).
pub fn norm_inf(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a [13/13] Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::invalid("expm needs a square matrix"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("expm of a non-finite matrix"));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let nrm = norm1(a);
    let squarings = if nrm > THETA13 { (nrm / THETA13).log2().ceil() as i32 } else { 0 };
    let scaled = a * 2f64.powi(-squarings);

    let b = &PADE13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &scaled * (u_inner + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let v_inner = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_inner + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let lu = q.lu();
    let mut r = lu
        .solve(&p)
        .ok_or_else(|| Error::Singular("Padé denominator in expm".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

/// `(e^{M t}, ∫_0^t e^{M s} ds)` from one exponential of the block matrix
/// `[[M, I], [0, 0]] * t`.
pub fn expm_with_integral(m: &DMatrix<f64>, t: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(&(m * t));
    for i in 0..n {
        big[(i, n + i)] = t;
    }
    let e = expm(&big)?;
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, n)).into_owned()))
}

/// Solve `a x = b` by LU with one step of iterative refinement.
pub fn solve_refined(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    let mut x = lu.solve(b).ok_or_else(|| Error::Singular("LU factorization".into()))?;
    let r = b - a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("solution is not finite".into()));
    }
    Ok(x)
}

/// Outcome of a shifted power iteration.
#[derive(Debug, Clone)]
pub struct PowerResult {
    pub value: f64,
    pub vector: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration on `a + shift·I`, which the caller guarantees is
/// entrywise nonnegative. Returns the top eigenvalue of `a` with its
/// sup-normalized eigenvector.
pub fn shifted_power(a: &DMatrix<f64>, shift: f64, max_iter: usize) -> PowerResult {
    let n = a.nrows();
    let mut b = a.clone();
    for i in 0..n {
        b[(i, i)] += shift;
    }
    let scale = norm_inf(&b).max(1.0);
    let mut x = DVector::from_element(n, 1.0);
    let mut bx = &b * &x;
    let mut prev = f64::NAN;
    for it in 1..=max_iter {
        let mu = x.dot(&bx) / x.dot(&x);
        let residual = (&bx - &x * mu).amax() / x.amax();
        if (mu - prev).abs() <= 1e-12 * mu.abs().max(1.0) && residual <= 1e-11 * scale {
            return PowerResult { value: mu - shift, vector: sup_normalize(x), iterations: it, converged: true };
        }
        prev = mu;
        let norm = bx.amax();
        if norm == 0.0 || !norm.is_finite() {
            break;
        }
        x = bx / norm;
        bx = &b * &x;
    }
    let mu = x.dot(&bx) / x.dot(&x);
    PowerResult { value: mu - shift, vector: sup_normalize(x), iterations: max_iter, converged: false }
}

/// Largest real part over all eigenvalues, by real Schur decomposition.
/// The QR sweep is retried with looser deflation tolerances before giving up.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64> {
    let cap = (200 * a.nrows()).max(10_000);
    for eps in [1e-14, 1e-12, 1e-10] {
        if let Some(schur) = Schur::try_new(a.clone(), eps, cap) {
            return Ok(schur
                .complex_eigenvalues()
                .iter()
                .map(|z| z.re)
                .fold(f64::NEG_INFINITY, f64::max));
        }
    }
    Err(Error::NonConvergence("Schur decomposition".into()))
}

/// Eigenvector of `a` for the (real) eigenvalue `lambda` by inverse iteration.
pub fn inverse_iteration(a: &DMatrix<f64>, lambda: f64) -> Result<DVector<f64>> {
    let n = a.nrows();
    let scale = norm_inf(a).max(1.0);
    for k in 0..6 {
        let delta = scale * 1e-10 * 10f64.powi(k);
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] -= lambda + delta;
        }
        let lu = m.lu();
        let mut x = DVector::from_element(n, 1.0);
        let mut ok = true;
        for _ in 0..4 {
            match lu.solve(&x) {
                Some(y) if y.iter().all(|v| v.is_finite()) && y.amax() > 0.0 => x = sup_normalize(y),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(x);
        }
    }
    Err(Error::Singular("inverse iteration".into()))
}

/// Top eigenpair of a symmetric matrix.
pub fn symmetric_top(a: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let (k, &value) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .expect("non-empty matrix");
    (value, eig.eigenvectors.column(k).into_owned())
}

/// Scale so the entry of largest magnitude is `+1`.
pub fn sup_normalize(mut x: DVector<f64>) -> DVector<f64> {
    let (k, _) = x.iter().enumerate().fold((0, 0.0), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
    let pivot = x[k];
    if pivot != 0.0 {
        x /= pivot;
    }
    x
}
