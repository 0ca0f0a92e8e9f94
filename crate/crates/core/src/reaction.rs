//! Nonlinearities `f(x, s)` with Lipschitz, sign-condition and growth metadata.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub type ScalarFn = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

/// Classification of a reaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReactionKind {
    GloballyLipschitz,
    LocallyLipschitz,
    Logistic,
    CubicBistable,
    Custom,
}

/// `f(x, s) = g(x) + n(x) s - m(x) |s|^{ρ-1} s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticReaction {
    pub g: DVector<f64>,
    pub n: DVector<f64>,
    pub m: DVector<f64>,
    pub rho: f64,
}

impl LogisticReaction {
    pub fn new(g: DVector<f64>, n: DVector<f64>, m: DVector<f64>, rho: f64) -> Result<Self> {
        check_len(g.len(), n.len())?;
        check_len(g.len(), m.len())?;
        if !(rho > 1.0 && rho.is_finite()) {
            return Err(Error::invalid(format!("logistic exponent must exceed 1, got {rho}")));
        }
        if let Some(i) = m.iter().position(|&v| !(v >= 0.0)) {
            return Err(Error::invalid(format!("logistic saturation m must be nonnegative (node {i})")));
        }
        if g.iter().chain(n.iter()).chain(m.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("logistic coefficients must be finite"));
        }
        Ok(Self { g, n, m, rho })
    }

    /// Constant coefficients on `len` nodes.
    pub fn uniform(len: usize, g: f64, n: f64, m: f64, rho: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(len, g),
            DVector::from_element(len, n),
            DVector::from_element(len, m),
            rho,
        )
    }
}

#[derive(Clone)]
pub struct CustomLaw {
    pub name: String,
    pub f: ScalarFn,
    pub df: Option<ScalarFn>,
    /// Declared global Lipschitz constant, if the law has one.
    pub lipschitz: Option<f64>,
}

impl fmt::Debug for CustomLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomLaw").field("name", &self.name).field("lipschitz", &self.lipschitz).finish()
    }
}

#[derive(Debug, Clone)]
pub enum Law {
    /// `g(x) + a(x) s`.
    Affine { offset: DVector<f64>, slope: DVector<f64> },
    Logistic(LogisticReaction),
    /// `Σ_k c_k s^k`, the same at every node.
    Polynomial { coeffs: Vec<f64> },
    Custom(CustomLaw),
}

/// A reaction term, optionally shifted by a per-node source and truncated
/// by clamping its argument to `[-k, k]`.
#[derive(Debug, Clone)]
pub struct Reaction {
    law: Law,
    source: Option<DVector<f64>>,
    clamp: Option<f64>,
}

impl Reaction {
    pub fn zero() -> Self {
        Self::polynomial(vec![0.0])
    }

    pub fn affine(offset: DVector<f64>, slope: DVector<f64>) -> Result<Self> {
        check_len(offset.len(), slope.len())?;
        if offset.iter().chain(slope.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("affine coefficients must be finite"));
        }
        Ok(Self::from_law(Law::Affine { offset, slope }))
    }

    /// Constant `f(x, s) = d(x)`.
    pub fn constant(d: DVector<f64>) -> Result<Self> {
        let n = d.len();
        Self::affine(d, DVector::zeros(n))
    }

    pub fn logistic(l: LogisticReaction) -> Self {
        Self::from_law(Law::Logistic(l))
    }

    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        Self::from_law(Law::Polynomial { coeffs })
    }

    pub fn custom(name: impl Into<String>, f: ScalarFn, df: Option<ScalarFn>, lipschitz: Option<f64>) -> Self {
        Self::from_law(Law::Custom(CustomLaw { name: name.into(), f, df, lipschitz }))
    }

    fn from_law(law: Law) -> Self {
        Self { law, source: None, clamp: None }
    }

    pub fn law(&self) -> &Law {
        &self.law
    }

    pub fn as_logistic(&self) -> Option<&LogisticReaction> {
        match &self.law {
            Law::Logistic(l) => Some(l),
            _ => None,
        }
    }

    /// The law as `g + n s - m |s|^{ρ-1} s`, including cubics `c0 + c1 s + c3 s³`
    /// with `c3 < 0` (as ρ = 3).
    pub fn logistic_form(&self, len: usize) -> Option<Cow<'_, LogisticReaction>> {
        match &self.law {
            Law::Logistic(l) => Some(Cow::Borrowed(l)),
            Law::Polynomial { coeffs } if coeffs.len() == 4 && coeffs[2] == 0.0 && coeffs[3] < 0.0 => {
                LogisticReaction::uniform(len, coeffs[0], coeffs[1], -coeffs[3], 3.0).ok().map(Cow::Owned)
            }
            _ => None,
        }
    }

    pub fn truncation(&self) -> Option<f64> {
        self.clamp
    }

    /// `f + d` for a nonnegative (or arbitrary) per-node source `d`.
    pub fn with_source(&self, d: DVector<f64>) -> Result<Self> {
        if let Some(n) = self.node_count() {
            check_len(n, d.len())?;
        }
        let source = match &self.source {
            Some(s) => {
                check_len(s.len(), d.len())?;
                s + d
            }
            None => d,
        };
        Ok(Self { law: self.law.clone(), source: Some(source), clamp: self.clamp })
    }

    /// Number of nodes the coefficients are defined on, if fixed.
    pub fn node_count(&self) -> Option<usize> {
        let from_law = match &self.law {
            Law::Affine { offset, .. } => Some(offset.len()),
            Law::Logistic(l) => Some(l.g.len()),
            Law::Polynomial { .. } | Law::Custom(_) => None,
        };
        from_law.or_else(|| self.source.as_ref().map(|s| s.len()))
    }

    pub fn check_nodes(&self, n: usize) -> Result<()> {
        match self.node_count() {
            Some(m) => check_len(n, m),
            None => Ok(()),
        }
    }

    pub fn kind(&self) -> ReactionKind {
        if self.clamp.is_some() {
            return ReactionKind::GloballyLipschitz;
        }
        match &self.law {
            Law::Affine { .. } => ReactionKind::GloballyLipschitz,
            Law::Logistic(_) => ReactionKind::Logistic,
            Law::Polynomial { coeffs } => {
                let deg = coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0);
                match deg {
                    0 | 1 => ReactionKind::GloballyLipschitz,
                    3 if coeffs[3] < 0.0 => ReactionKind::CubicBistable,
                    _ => ReactionKind::LocallyLipschitz,
                }
            }
            Law::Custom(c) if c.lipschitz.is_some() => ReactionKind::GloballyLipschitz,
            Law::Custom(_) => ReactionKind::Custom,
        }
    }

    fn raw(&self, i: usize, s: f64) -> f64 {
        let base = match &self.law {
            Law::Affine { offset, slope } => offset[i] + slope[i] * s,
            Law::Logistic(l) => l.g[i] + l.n[i] * s - l.m[i] * s.abs().powf(l.rho - 1.0) * s,
            Law::Polynomial { coeffs } => horner(coeffs, s),
            Law::Custom(c) => (c.f)(i, s),
        };
        base + self.source.as_ref().map_or(0.0, |d| d[i])
    }

    fn raw_ds(&self, i: usize, s: f64) -> f64 {
        match &self.law {
            Law::Affine { slope, .. } => slope[i],
            Law::Logistic(l) => l.n[i] - l.rho * l.m[i] * s.abs().powf(l.rho - 1.0),
            Law::Polynomial { coeffs } => {
                let d: Vec<f64> = coeffs.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect();
                horner(&d, s)
            }
            Law::Custom(c) => match &c.df {
                Some(df) => df(i, s),
                None => {
                    let h = 1e-6 * (1.0 + s.abs());
                    ((c.f)(i, s + h) - (c.f)(i, s - h)) / (2.0 * h)
                }
            },
        }
    }

    fn raw_primitive(&self, i: usize, s: f64) -> f64 {
        let base = match &self.law {
            Law::Affine { offset, slope } => offset[i] * s + 0.5 * slope[i] * s * s,
            Law::Logistic(l) => {
                l.g[i] * s + 0.5 * l.n[i] * s * s - l.m[i] * s.abs().powf(l.rho + 1.0) / (l.rho + 1.0)
            }
            Law::Polynomial { coeffs } => {
                let p: Vec<f64> = std::iter::once(0.0)
                    .chain(coeffs.iter().enumerate().map(|(k, c)| c / (k as f64 + 1.0)))
                    .collect();
                horner(&p, s)
            }
            Law::Custom(c) => {
                let f = |r: f64| (c.f)(i, r);
                adaptive_simpson(&f, 0.0, s, 1e-10)
            }
        };
        base + self.source.as_ref().map_or(0.0, |d| d[i] * s)
    }

    fn clamped(&self, s: f64) -> f64 {
        match self.clamp {
            Some(k) => s.clamp(-k, k),
            None => s,
        }
    }

    /// `f(x_i, s)`.
    pub fn eval(&self, i: usize, s: f64) -> f64 {
        self.raw(i, self.clamped(s))
    }

    /// `∂f/∂s (x_i, s)`; zero outside the truncation window.
    pub fn eval_ds(&self, i: usize, s: f64) -> f64 {
        match self.clamp {
            Some(k) if s.abs() > k => 0.0,
            _ => self.raw_ds(i, s),
        }
    }

    /// `F(x_i, s) = ∫_0^s f(x_i, r) dr`.
    pub fn primitive(&self, i: usize, s: f64) -> f64 {
        let c = self.clamped(s);
        let inner = self.raw_primitive(i, c);
        if c == s {
            inner
        } else {
            inner + self.raw(i, c) * (s - c)
        }
    }

    /// Nemytskii lift `u ↦ f(·, u(·))`.
    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| self.eval(i, u[i]))
    }

    pub fn apply_ds(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| self.eval_ds(i, u[i]))
    }

    /// `g(x_i) = f(x_i, 0)`.
    pub fn g0(&self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |i, _| self.eval(i, 0.0))
    }

    /// Upper bound for `|∂f/∂s|` over `|s| ≤ k` and all nodes.
    pub fn lip_on(&self, n: usize, k: f64) -> f64 {
        let k = match self.clamp {
            Some(c) => k.min(c),
            None => k,
        }
        .abs();
        match &self.law {
            Law::Affine { slope, .. } => slope.amax(),
            Law::Logistic(l) => (0..l.g.len())
                .map(|i| l.n[i].abs() + l.rho * l.m[i] * k.powf(l.rho - 1.0))
                .fold(0.0, f64::max),
            Law::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(p, c)| p as f64 * c.abs() * k.powi(p as i32 - 1))
                .sum(),
            Law::Custom(c) => {
                if let Some(l) = c.lipschitz {
                    return l;
                }
                let sampled = (0..n)
                    .flat_map(|i| linspace(-k, k, 2049).map(move |s| (i, s)))
                    .map(|(i, s)| self.raw_ds(i, s).abs())
                    .fold(0.0, f64::max);
                sampled * (1.0 + 1e-6)
            }
        }
    }

    /// [`Reaction::lip_on`] when it is available in closed form.
    pub(crate) fn lip_closed_form(&self, n: usize, k: f64) -> Option<f64> {
        match &self.law {
            Law::Custom(c) if c.lipschitz.is_none() => None,
            _ => Some(self.lip_on(n, k)),
        }
    }

    /// Global Lipschitz constant, when one exists.
    pub fn global_lipschitz(&self, n: usize) -> Option<f64> {
        if let Some(k) = self.clamp {
            return Some(self.lip_on(n, k));
        }
        match &self.law {
            Law::Affine { slope, .. } => Some(slope.amax()),
            Law::Polynomial { coeffs } if self.kind() == ReactionKind::GloballyLipschitz => {
                Some(coeffs.get(1).copied().unwrap_or(0.0).abs())
            }
            Law::Custom(c) => c.lipschitz,
            _ => None,
        }
    }

    pub fn is_globally_lipschitz(&self, n: usize) -> bool {
        self.global_lipschitz(n).is_some()
    }

    /// `f_k(x, u) = f(x, clamp(u, -k, k))`.
    pub fn truncate(&self, k: f64) -> Result<Self> {
        if !(k > 0.0) || k.is_nan() {
            return Err(Error::invalid(format!("truncation level must be positive, got {k}")));
        }
        let clamp = Some(self.clamp.map_or(k, |c| c.min(k)));
        Ok(Self { law: self.law.clone(), source: self.source.clone(), clamp })
    }

    /// Shift `β = max(0, -inf ∂f/∂s) + 1` over `[-k, k]` (512 samples), making
    /// `f + βs` increasing there.
    pub fn monotone_shift(&self, n: usize, k: f64) -> f64 {
        let inf = (0..n)
            .flat_map(|i| linspace(-k, k, 512).map(move |s| (i, s)))
            .map(|(i, s)| self.eval_ds(i, s))
            .fold(f64::INFINITY, f64::min);
        (-inf).max(0.0) + 1.0
    }
}

fn horner(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
}

pub(crate) fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = if n > 1 { (b - a) / (n - 1) as f64 } else { 0.0 };
    (0..n).map(move |i| if i + 1 == n { b } else { a + i as f64 * step })
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 50)
}

/// Strategy used to derive structure bounds `f(x, s) s ≤ C(x) s² + D(x) |s|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum BoundStrategy {
    Plain,
    /// Logistic only: trade `A s²` against the saturation via Young's inequality.
    YoungShift { a: f64 },
    /// Young shift on the masked region, plain bounds elsewhere.
    Partitioned { a: f64, mask: Vec<bool> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureBounds {
    #[serde(with = "crate::serde_vec::dvec")]
    pub c: DVector<f64>,
    #[serde(with = "crate::serde_vec::dvec")]
    pub d: DVector<f64>,
    pub strategy: BoundStrategy,
    /// ε used in Young's inequality, when applicable.
    pub epsilon: Option<f64>,
}

/// Constant `C_ε` with `ab ≤ ε a^ρ + C_ε b^{ρ'}` for all `a, b ≥ 0`.
pub fn young_constant(epsilon: f64, rho: f64) -> f64 {
    let rho_p = rho / (rho - 1.0);
    (epsilon * rho).powf(-rho_p / rho) / rho_p
}

/// Structure bounds for `f` on `n` nodes, validated on a logarithmic s-grid.
pub fn structure_bounds(f: &Reaction, n: usize, strategy: &BoundStrategy) -> Result<StructureBounds> {
    f.check_nodes(n)?;
    let g_abs = f.g0(n).abs();
    let (c, d, epsilon) = match strategy {
        BoundStrategy::Plain => match (f.logistic_form(n), &f.law) {
            (Some(l), _) if f.clamp.is_none() => (l.n.clone(), g_abs, None),
            (_, Law::Affine { slope, .. }) if f.clamp.is_none() => (slope.clone(), g_abs, None),
            (_, Law::Polynomial { coeffs }) if f.clamp.is_none() && f.kind() == ReactionKind::GloballyLipschitz => {
                (DVector::from_element(n, coeffs.get(1).copied().unwrap_or(0.0)), g_abs, None)
            }
            _ => match f.global_lipschitz(n) {
                Some(l0) => (DVector::from_element(n, l0), g_abs, None),
                None => {
                    return Err(Error::invalid(
                        "no plain structure bound: reaction is neither logistic nor globally Lipschitz",
                    ))
                }
            },
        },
        BoundStrategy::YoungShift { a } => {
            let l = young_target(f, n)?;
            young_bounds(&l, &g_abs, *a, &vec![true; n])?
        }
        BoundStrategy::Partitioned { a, mask } => {
            check_len(n, mask.len())?;
            let l = young_target(f, n)?;
            young_bounds(&l, &g_abs, *a, mask)?
        }
    };
    let grid = log_grid(1e-6, 1e6, 20);
    if let Some((i, s)) = sign_condition_violation(f, &c, &d, &grid) {
        return Err(Error::SignCondition(format!(
            "f(x,s)s <= C s^2 + D|s| fails at node {i}, s = {s:e}"
        )));
    }
    Ok(StructureBounds { c, d, strategy: strategy.clone(), epsilon })
}

fn young_target(f: &Reaction, n: usize) -> Result<Cow<'_, LogisticReaction>> {
    match (f.logistic_form(n), f.clamp) {
        (Some(l), None) => Ok(l),
        _ => Err(Error::invalid("Young-shifted bounds need an untruncated logistic reaction")),
    }
}

fn young_bounds(
    l: &LogisticReaction,
    g_abs: &DVector<f64>,
    a: f64,
    mask: &[bool],
) -> Result<(DVector<f64>, DVector<f64>, Option<f64>)> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::invalid(format!("Young shift needs A > 0, got {a}")));
    }
    check_len(l.g.len(), mask.len())?;
    let m0 = (0..mask.len()).filter(|&i| mask[i]).map(|i| l.m[i]).fold(f64::INFINITY, f64::min);
    if !(m0 > 0.0 && m0.is_finite()) {
        return Err(Error::invalid("Young shift needs m >= m0 > 0 on the shifted region"));
    }
    let eps = 0.5 * m0;
    let extra = young_constant(eps, l.rho) * a.powf(l.rho / (l.rho - 1.0));
    let n = mask.len();
    let c = DVector::from_fn(n, |i, _| if mask[i] { l.n[i] - a } else { l.n[i] });
    let d = DVector::from_fn(n, |i, _| if mask[i] { g_abs[i] + extra } else { g_abs[i] });
    Ok((c, d, Some(eps)))
}

/// Symmetric logarithmic grid `±10^e` for `e` in `[log10 lo, log10 hi]`, plus zero.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    let count = ((b - a) * per_decade as f64).ceil() as usize + 1;
    let mut grid = vec![0.0];
    for e in linspace(a, b, count) {
        let s = 10f64.powf(e);
        grid.push(s);
        grid.push(-s);
    }
    grid.sort_by(f64::total_cmp);
    grid
}

fn sign_condition_violation(f: &Reaction, c: &DVector<f64>, d: &DVector<f64>, grid: &[f64]) -> Option<(usize, f64)> {
    for i in 0..c.len() {
        for &s in grid {
            let lhs = f.eval(i, s) * s;
            let rhs = c[i] * s * s + d[i] * s.abs();
            let slack = 1e-9 * (lhs.abs() + (c[i] * s * s).abs() + (d[i] * s).abs());
            if !(lhs <= rhs + slack) {
                return Some((i, s));
            }
        }
    }
    None
}

/// Whether `f(x_i, s) s ≤ c s² + d |s|` at every node and every grid point.
pub fn check_sign_condition(f: &Reaction, n: usize, c: f64, d: f64, grid: &[f64]) -> Result<bool> {
    if !(d >= 0.0) {
        return Err(Error::invalid("sign condition needs d >= 0"));
    }
    f.check_nodes(n)?;
    let cv = DVector::from_element(n, c);
    let dv = DVector::from_element(n, d);
    Ok(sign_condition_violation(f, &cv, &dv, grid).is_none())
}

/// Per-node version of [`check_sign_condition`].
pub fn check_structure_bounds(f: &Reaction, bounds: &StructureBounds, grid: &[f64]) -> bool {
    sign_condition_violation(f, &bounds.c, &bounds.d, grid).is_none()
}

/// Whether `f(x_i, s)/s` strictly decreases along the positive increasing grid at every node.
pub fn f_over_s_decreasing(f: &Reaction, n: usize, grid: &[f64]) -> Result<bool> {
    if grid.is_empty() || grid[0] <= 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("grid must be strictly positive and increasing"));
    }
    f.check_nodes(n)?;
    Ok((0..n).all(|i| {
        grid.windows(2).all(|w| {
            let (a, b) = (f.eval(i, w[0]) / w[0], f.eval(i, w[1]) / w[1]);
            a - b > 8.0 * f64::EPSILON * (a.abs() + b.abs())
        })
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthReport {
    /// `sup_s ∂f/∂s` per node on the grid.
    pub beta: Vec<f64>,
    /// Smallest `C` with `|∂f/∂s| ≤ C (1 + |s|^{ρ-1})` on the grid.
    pub growth_c: f64,
    /// `∂f/∂s` grows without bound along the grid tail.
    pub beta_unbounded: bool,
    /// `|∂f/∂s| / (1 + |s|^{ρ-1})` grows without bound along the grid tail.
    pub growth_unbounded: bool,
    pub violation: bool,
}

/// Fit the constants of the growth hypotheses `∂f/∂s ≤ β` and
/// `|∂f/∂s| ≤ C (1 + |s|^{ρ-1})` on a grid and flag unbounded tails.
pub fn growth_hypotheses_check(f: &Reaction, n: usize, rho: f64, grid: &[f64]) -> Result<GrowthReport> {
    if !(rho > 1.0) {
        return Err(Error::invalid("growth check needs rho > 1"));
    }
    if grid.is_empty() {
        return Err(Error::invalid("empty grid"));
    }
    f.check_nodes(n)?;
    let smax = grid.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let inner: Vec<f64> = grid.iter().copied().filter(|s| s.abs() <= 0.1 * smax).collect();
    let sup_on = |pts: &[f64], q: &dyn Fn(usize, f64) -> f64| -> f64 {
        (0..n).flat_map(|i| pts.iter().map(move |&s| (i, s))).map(|(i, s)| q(i, s)).fold(f64::NEG_INFINITY, f64::max)
    };
    let beta: Vec<f64> = (0..n)
        .map(|i| grid.iter().map(|&s| f.eval_ds(i, s)).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let ratio = |i: usize, s: f64| f.eval_ds(i, s).abs() / (1.0 + s.abs().powf(rho - 1.0));
    let slope = |i: usize, s: f64| f.eval_ds(i, s);
    let growth_c = sup_on(grid, &ratio);
    let grows = |full: f64, inner_v: f64| !full.is_finite() || (!inner.is_empty() && full > inner_v + 1e-3 * (1.0 + inner_v.abs()));
    let beta_full = beta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let beta_unbounded = grows(beta_full, sup_on(&inner, &slope));
    let growth_unbounded = grows(growth_c, sup_on(&inner, &ratio));
    Ok(GrowthReport { beta, growth_c, beta_unbounded, growth_unbounded, violation: beta_unbounded || growth_unbounded })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic() -> Reaction {
        Reaction::polynomial(vec![0.0, 0.0, 0.0, 1.0])
    }

    fn logistic(n: usize) -> Reaction {
        Reaction::logistic(LogisticReaction::uniform(n, 0.0, 2.0, 1.0, 3.0).unwrap())
    }

    #[test]
    fn truncation_by_clamping() {
        let f = cubic().truncate(2.0).unwrap();
        assert_eq!(f.eval(0, 1.0), 1.0);
        assert_eq!(f.eval(0, 3.0), 8.0);
        assert_eq!(f.eval(0, -5.0), -8.0);
        assert_eq!(f.kind(), ReactionKind::GloballyLipschitz);
        assert_eq!(f.global_lipschitz(1), Some(12.0));
        assert!(cubic().truncate(0.0).is_err());
        assert!(cubic().truncate(-1.0).is_err());
    }

    #[test]
    fn truncated_primitive_is_continuous() {
        let f = cubic().truncate(2.0).unwrap();
        assert!((f.primitive(0, 2.0) - 4.0).abs() < 1e-14);
        assert!((f.primitive(0, 3.0) - (4.0 + 8.0)).abs() < 1e-14);
        assert!((f.primitive(0, -3.0) - (4.0 + 8.0)).abs() < 1e-14);
    }

    #[test]
    fn custom_primitive_by_quadrature() {
        let f = Reaction::custom("exp", Arc::new(|_, s: f64| s.exp()), None, None);
        assert!((f.primitive(0, 1.3) - (1.3f64.exp() - 1.0)).abs() < 1e-9);
        assert!((f.eval_ds(0, 0.7) - 0.7f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn logistic_eval_and_primitive() {
        let l = LogisticReaction::uniform(2, 0.5, 2.0, 1.0, 3.0).unwrap();
        let f = Reaction::logistic(l);
        assert!((f.eval(0, -2.0) - (0.5 - 4.0 + 8.0)).abs() < 1e-14);
        assert!((f.primitive(1, 2.0) - (1.0 + 4.0 - 4.0)).abs() < 1e-14);
        assert_eq!(f.g0(2).as_slice(), &[0.5, 0.5]);
        assert!(LogisticReaction::uniform(2, 0.0, 1.0, -1.0, 3.0).is_err());
        assert!(LogisticReaction::uniform(2, 0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn lip_on_dominates_sampled_derivative() {
        for f in [logistic(3), cubic(), Reaction::polynomial(vec![0.5, 0.0, -1.0])] {
            for k in [0.5, 2.0, 7.0] {
                let lip = f.lip_on(3, k);
                let sampled = (0..3)
                    .flat_map(|i| linspace(-k, k, 512).map(move |s| (i, s)))
                    .map(|(i, s)| f.eval_ds(i, s).abs())
                    .fold(0.0, f64::max);
                assert!(lip >= sampled, "k={k} lip={lip} sampled={sampled}");
            }
        }
    }

    #[test]
    fn plain_bounds() {
        let b = structure_bounds(&logistic(4), 4, &BoundStrategy::Plain).unwrap();
        assert!(b.c.iter().all(|&v| v == 2.0));
        assert!(b.d.iter().all(|&v| v == 0.0));

        let g = DVector::from_vec(vec![0.3, -0.2]);
        let f = Reaction::custom("sin", Arc::new(|_, s: f64| 0.7 * s.sin()), None, Some(0.7))
            .with_source(g.clone())
            .unwrap();
        let b = structure_bounds(&f, 2, &BoundStrategy::Plain).unwrap();
        assert!(b.c.iter().all(|&v| v == 0.7));
        assert_eq!(b.d, g.abs());

        assert!(structure_bounds(&cubic(), 2, &BoundStrategy::Plain).is_err());
    }

    #[test]
    fn young_shift_constant_matches_grid_maximum() {
        let b = structure_bounds(&logistic(3), 3, &BoundStrategy::YoungShift { a: 3.0 }).unwrap();
        assert!(b.c.iter().all(|&v| v == -1.0));
        // oracle: max_s (3 s - 0.5 s^3) on a dense grid
        let best = linspace(0.0, 5.0, 2_000_001).map(|s| 3.0 * s - 0.5 * s * s * s).fold(f64::MIN, f64::max);
        assert!((b.d[0] - best).abs() < 1e-9, "{} vs {best}", b.d[0]);
        assert_eq!(b.epsilon, Some(0.5));
    }

    #[test]
    fn partitioned_bounds() {
        let n = 4;
        let l = LogisticReaction::new(
            DVector::from_element(n, 0.1),
            DVector::from_element(n, 1.0),
            DVector::from_vec(vec![0.0, 0.0, 2.0, 2.0]),
            2.0,
        )
        .unwrap();
        let f = Reaction::logistic(l);
        let mask = vec![false, false, true, true];
        let b = structure_bounds(&f, n, &BoundStrategy::Partitioned { a: 5.0, mask }).unwrap();
        assert_eq!(b.c.as_slice(), &[1.0, 1.0, -4.0, -4.0]);
        assert!(b.d[0] == 0.1 && b.d[2] > 0.1);
        assert!(structure_bounds(&f, n, &BoundStrategy::YoungShift { a: 5.0 }).is_err());
    }

    #[test]
    fn sign_condition_examples() {
        let grid = log_grid(1e-6, 1e6, 10);
        let neg_cubic = Reaction::polynomial(vec![0.0, 0.0, 0.0, -1.0]);
        assert!(check_sign_condition(&neg_cubic, 1, 0.0, 0.0, &grid).unwrap());
        assert!(!check_sign_condition(&cubic(), 1, 1e3, 1e3, &grid).unwrap());
        assert!(check_sign_condition(&logistic(2), 2, 2.0, 0.0, &grid).unwrap());
        assert!(check_sign_condition(&logistic(2), 2, 2.0, -1.0, &grid).is_err());
    }

    #[test]
    fn f_over_s_examples() {
        let grid: Vec<f64> = linspace(0.01, 10.0, 400).collect();
        assert!(f_over_s_decreasing(&logistic(3), 3, &grid).unwrap());
        assert!(!f_over_s_decreasing(&Reaction::polynomial(vec![0.0, 1.0]), 1, &grid).unwrap());
        let n = 4;
        let half = LogisticReaction::new(
            DVector::zeros(n),
            DVector::from_element(n, 1.0),
            DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]),
            3.0,
        )
        .unwrap();
        assert!(!f_over_s_decreasing(&Reaction::logistic(half), n, &grid).unwrap());
        assert!(f_over_s_decreasing(&logistic(1), 1, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn growth_examples() {
        let grid = log_grid(1e-3, 1e3, 40);
        let r = growth_hypotheses_check(&logistic(2), 2, 3.0, &grid).unwrap();
        assert!(r.beta.iter().all(|&b| (b - 2.0).abs() < 1e-12));
        // oracle: sup over a dense grid of |2 - 3 s^2| / (1 + s^2)
        let oracle = grid.iter().map(|&s| (2.0 - 3.0 * s * s).abs() / (1.0 + s * s)).fold(0.0, f64::max);
        assert!((r.growth_c - oracle).abs() < 1e-12 && (r.growth_c - 3.0).abs() < 1e-5);
        assert!(!r.violation);

        let e = Reaction::custom("exp", Arc::new(|_, s: f64| s.exp()), Some(Arc::new(|_, s: f64| s.exp())), None);
        assert!(growth_hypotheses_check(&e, 1, 3.0, &grid).unwrap().violation);

        let r = growth_hypotheses_check(&Reaction::polynomial(vec![0.0, 1.0, 0.0, -1.0]), 1, 3.0, &grid).unwrap();
        assert!((r.beta[0] - 1.0).abs() < 1e-12);
        assert!(!r.violation);
    }

    #[test]
    fn monotone_shift_makes_increasing() {
        let f = logistic(1);
        let beta = f.monotone_shift(1, 3.0);
        assert!((beta - 26.0).abs() < 1e-9);
        let pts: Vec<f64> = linspace(-3.0, 3.0, 1000).collect();
        assert!(pts.windows(2).all(|w| f.eval(0, w[1]) + beta * w[1] > f.eval(0, w[0]) + beta * w[0]));
    }
}
