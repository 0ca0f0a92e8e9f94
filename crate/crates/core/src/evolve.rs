//! Time integration: linear semigroup, order-preserving and RK4 schemes,
//! Picard iteration, supersolution bounds, envelope and energy diagnostics.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::equilibria::solve_phi;
use crate::error::{check_len, Error, Result};
use crate::kernel::NonlocalOperator;
use crate::linalg::{expm, expm_with_integral, norm_inf};
use crate::reaction::{self, BoundStrategy, Reaction};
use crate::spectral::{self, Method};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Explicit Euler on the shifted splitting; preserves order when
    /// `dt · max(h + β) ≤ 1`.
    EulerOp,
    Rk4,
    /// Exponential Euler: exact linear propagation, frozen nonlinearity.
    VcfExactLinear,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::EulerOp => "euler_op",
            Scheme::Rk4 => "rk4",
            Scheme::VcfExactLinear => "vcf_exact_linear",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler_op" => Ok(Scheme::EulerOp),
            "rk4" => Ok(Scheme::Rk4),
            "vcf_exact_linear" => Ok(Scheme::VcfExactLinear),
            other => Err(Error::invalid(format!("unknown scheme `{other}`"))),
        }
    }
}

fn default_threshold() -> f64 {
    1e9
}

fn default_record() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub t_end: f64,
    /// Monotone shift; derived from the reaction when absent.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_threshold")]
    pub blowup_threshold: f64,
    /// Store every `record_every`-th step (the final state is always stored).
    #[serde(default = "default_record")]
    pub record_every: usize,
}

impl IntegratorConfig {
    pub fn new(scheme: Scheme, dt: f64, t_end: f64) -> Result<Self> {
        let c = Self { scheme, dt, t_end, beta: None, blowup_threshold: 1e9, record_every: 1 };
        c.validate()?;
        Ok(c)
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every.max(1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::invalid(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(self.blowup_threshold > 0.0) {
            return Err(Error::invalid("blowup threshold must be positive"));
        }
        if let Some(b) = self.beta {
            if !b.is_finite() {
                return Err(Error::invalid("beta must be finite"));
            }
        }
        Ok(())
    }

    /// Enforce `dt · max_i (h_i + β) ≤ 1` for the order-preserving scheme.
    pub fn check_monotone_step(&self, h: &DVector<f64>, beta: f64) -> Result<()> {
        if self.scheme != Scheme::EulerOp {
            return Ok(());
        }
        let top = h.max() + beta;
        if self.dt * top > 1.0 + 1e-12 {
            return Err(Error::invalid(format!(
                "euler_op needs dt * max(h + beta) <= 1; dt = {} but max(h + beta) = {top} (dt <= {})",
                self.dt,
                1.0 / top
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Blowup {
    /// Time of the step at which the threshold was crossed.
    pub time: f64,
    pub last_finite_time: f64,
    #[serde(deserialize_with = "crate::serde_vec::null_as_infinity")]
    pub norm: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub beta: Option<f64>,
    pub truncation: Option<f64>,
    pub blowup: Option<Blowup>,
    /// Empirical `M` in `‖u(t)‖ ≤ M e^{λt} ‖u0‖`, when fitted.
    pub growth_m: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    #[serde(with = "crate::serde_vec::vec_dvec")]
    pub states: Vec<DVector<f64>>,
    pub scheme: Scheme,
    pub dt: f64,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least the initial state")
    }

    pub fn blew_up(&self) -> bool {
        self.meta.blowup.is_some()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Fit the smallest `M` with `‖u(t)‖∞ ≤ M e^{λt} ‖u0‖∞` over the stored states.
    pub fn fit_growth_constant(&mut self, lambda: f64) -> Option<f64> {
        let n0 = self.states.first()?.amax();
        if n0 == 0.0 {
            return None;
        }
        let m = self
            .times
            .iter()
            .zip(&self.states)
            .map(|(&t, u)| u.amax() / ((lambda * t).exp() * n0))
            .fold(0.0, f64::max);
        self.meta.growth_m = Some(m);
        Some(m)
    }
}

/// `e^{amat·t} u0`; valid for negative `t` as well.
pub fn linear_semigroup_apply(op: &NonlocalOperator, t: f64, u0: &DVector<f64>) -> Result<DVector<f64>> {
    if !t.is_finite() {
        return Err(Error::invalid("semigroup time must be finite"));
    }
    check_len(op.len(), u0.len())?;
    if t == 0.0 {
        return Ok(u0.clone());
    }
    Ok(expm(&(op.amat() * t))? * u0)
}

/// Supersolution `ż = c z + d`, `z(0) = m0`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SupersolutionOde {
    pub c: f64,
    pub d: f64,
    pub m0: f64,
    pub t_end: f64,
    /// `sup_{[0, t_end]} z`, used as truncation level.
    pub level: f64,
}

impl SupersolutionOde {
    pub fn z(&self, t: f64) -> f64 {
        let ct = self.c * t;
        // d (e^{ct} - 1)/c written to stay accurate as c → 0
        let growth = if ct == 0.0 { t } else { t * ct.exp_m1() / ct };
        self.m0 * ct.exp() + self.d * growth
    }
}

pub fn supersolution_ode(c: f64, d: f64, m0: f64, t_end: f64) -> Result<SupersolutionOde> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::invalid("supersolution horizon must be positive"));
    }
    if ![c, d, m0].iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("supersolution coefficients must be finite"));
    }
    let mut ode = SupersolutionOde { c, d, m0, t_end, level: 0.0 };
    // z is exponential-affine, hence monotone: its sup sits at an endpoint
    ode.level = ode.z(0.0).max(ode.z(t_end));
    Ok(ode)
}

/// Automatic truncation for a locally Lipschitz reaction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truncation {
    pub level: f64,
    pub c: f64,
    pub d: f64,
    pub strategy: BoundStrategy,
}

/// Truncation level from the supersolution bound over `[0, t_end]`, or `None`
/// when `f` is globally Lipschitz or admits no structure bound.
pub fn truncation_level(
    op: &NonlocalOperator,
    f: &Reaction,
    u0: &DVector<f64>,
    t_end: f64,
) -> Result<Option<Truncation>> {
    let n = op.len();
    check_len(n, u0.len())?;
    f.check_nodes(n)?;
    if f.is_globally_lipschitz(n) {
        return Ok(None);
    }
    let drift: DVector<f64> = op.h0() - op.h();
    let strategy = match f.logistic_form(n) {
        Some(l) if l.m.min() > 0.0 && f.truncation().is_none() => {
            let a = (&l.n + &drift).max().max(0.0) + 1.0;
            BoundStrategy::YoungShift { a }
        }
        _ => BoundStrategy::Plain,
    };
    let bounds = match reaction::structure_bounds(f, n, &strategy) {
        Ok(b) => b,
        Err(_) => return Ok(None),
    };
    let c = (&bounds.c + &drift).max();
    let d = bounds.d.max();
    let ode = supersolution_ode(c, d, u0.amax(), t_end)?;
    Ok(Some(Truncation { level: ode.level, c, d, strategy }))
}

/// Half-width of the window on which the monotone shift is sampled when no
/// truncation applies.
fn shift_window(u0: &DVector<f64>) -> f64 {
    2.0 * u0.amax().max(1.0)
}

/// Integrate `u_t = amat·u + f(u)`.
pub fn evolve_nonlinear(
    op: &NonlocalOperator,
    f: &Reaction,
    u0: &DVector<f64>,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    config.validate()?;
    let n = op.len();
    check_len(n, u0.len())?;
    f.check_nodes(n)?;
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial state must be finite"));
    }

    let trunc = truncation_level(op, f, u0, config.t_end)?;
    let (f, k) = match &trunc {
        Some(t) => (f.truncate(t.level)?, Some(t.level)),
        None => (f.clone(), f.truncation()),
    };
    let beta = match config.scheme {
        Scheme::Rk4 => None,
        _ => Some(config.beta.unwrap_or_else(|| f.monotone_shift(n, k.unwrap_or_else(|| shift_window(u0))))),
    };
    if let Some(b) = beta {
        config.check_monotone_step(op.h(), b)?;
    }

    let mut stepper = Stepper::new(op, &f, config.scheme, beta.unwrap_or(0.0), config.dt, u0)?;
    let steps = (config.t_end / config.dt - 1e-9).ceil().max(1.0) as usize;
    let mut times = vec![0.0];
    let mut states = vec![u0.clone()];
    let mut meta = TrajectoryMeta { beta, truncation: k, ..Default::default() };
    let mut u = u0.clone();
    let mut t = 0.0;
    for m in 1..=steps {
        let t_next = if m == steps { config.t_end } else { m as f64 * config.dt };
        let next = stepper.step(&u, t_next - t)?;
        let norm = next.amax();
        let finite = next.iter().all(|v| v.is_finite());
        if !finite || norm > config.blowup_threshold {
            meta.blowup = Some(Blowup { time: t_next, last_finite_time: if finite { t_next } else { t }, norm });
            if finite {
                times.push(t_next);
                states.push(next);
            } else if *times.last().unwrap() != t {
                times.push(t);
                states.push(u);
            }
            break;
        }
        u = next;
        t = t_next;
        if m % config.record_every == 0 || m == steps {
            times.push(t);
            states.push(u.clone());
        }
    }
    Ok(Trajectory { times, states, scheme: config.scheme, dt: config.dt, meta })
}

const RK4_REACTION_STEP: f64 = 0.02;

struct Stepper<'a> {
    op: &'a NonlocalOperator,
    f: &'a Reaction,
    scheme: Scheme,
    beta: f64,
    /// `(step, e^{(A-β)step}, ∫_0^{step} e^{(A-β)s} ds)` for the exponential scheme.
    exp_cache: Option<(f64, DMatrix<f64>, DMatrix<f64>)>,
    /// `|f'|` bound at the initial state.
    lip_ref: f64,
}

impl<'a> Stepper<'a> {
    fn new(op: &'a NonlocalOperator, f: &'a Reaction, scheme: Scheme, beta: f64, dt: f64, u0: &DVector<f64>) -> Result<Self> {
        let lip_ref = f.lip_closed_form(u0.len(), u0.amax()).unwrap_or(0.0);
        let mut s = Self { op, f, scheme, beta, exp_cache: None, lip_ref };
        if scheme == Scheme::VcfExactLinear {
            s.exp_cache = Some(s.propagators(dt)?);
        }
        Ok(s)
    }

    fn propagators(&self, dt: f64) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
        let n = self.op.len();
        let shifted = self.op.amat() - DMatrix::<f64>::identity(n, n) * self.beta;
        let (e, i) = expm_with_integral(&shifted, dt)?;
        Ok((dt, e, i))
    }

    fn rhs(&self, u: &DVector<f64>) -> DVector<f64> {
        self.op.amat() * u + self.f.apply(u)
    }

    fn rk4(&self, u: &DVector<f64>, dt: f64) -> DVector<f64> {
        let k1 = self.rhs(u);
        let k2 = self.rhs(&(u + &k1 * (0.5 * dt)));
        let k3 = self.rhs(&(u + &k2 * (0.5 * dt)));
        let k4 = self.rhs(&(u + &k3 * dt));
        u + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
    }

    fn step(&mut self, u: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
        Ok(match self.scheme {
            Scheme::EulerOp => euler_op_step(self.op, self.f, self.beta, dt, u),
            Scheme::Rk4 => {
                // substeps keep dt·|f'| at its initial level as the state grows (e.g. towards a blow-up)
                let lip = self.f.lip_closed_form(u.len(), u.amax()).unwrap_or(0.0);
                let reference = self.lip_ref.max(RK4_REACTION_STEP / dt);
                let subs = (lip / reference).ceil().clamp(1.0, 1e6) as usize;
                let h = dt / subs as f64;
                let mut v = u.clone();
                for _ in 0..subs {
                    v = self.rk4(&v, h);
                }
                v
            }
            Scheme::VcfExactLinear => {
                let cached = matches!(&self.exp_cache, Some((h, _, _)) if (*h - dt).abs() <= 1e-14 * dt);
                if !cached {
                    self.exp_cache = Some(self.propagators(dt)?);
                }
                let (_, e, i) = self.exp_cache.as_ref().unwrap();
                let g = self.f.apply(u) + u * self.beta;
                e * u + i * g
            }
        })
    }
}

/// One order-preserving step
/// `u_i ← (1 - dt(h_i + β)) u_i + dt (K u)_i + dt (f(x_i, u_i) + β u_i)`.
pub fn euler_op_step(op: &NonlocalOperator, f: &Reaction, beta: f64, dt: f64, u: &DVector<f64>) -> DVector<f64> {
    // the nonnegative parts are kept apart so rounding cannot break monotonicity
    let ku = op.kw() * u;
    let h = op.h();
    DVector::from_fn(u.len(), |i, _| {
        (1.0 - dt * (h[i] + beta)) * u[i] + dt * ku[i] + dt * (f.eval(i, u[i]) + beta * u[i])
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PicardReport {
    pub trajectory: Trajectory,
    /// Sup-distance between successive iterates over the mesh.
    pub distances: Vec<f64>,
    /// Contraction factor `Lip(f + β·) ∫_0^τ ‖e^{(L-β)s}‖∞ ds`.
    pub q: f64,
    pub beta: f64,
    pub lipschitz: f64,
}

const PICARD_MESH: usize = 64;

/// Quadrature weights for `∫_0^{s_j}` on the uniform nodes `s_0..s_j`.
fn cumulative_weights(j: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; j + 1];
    let simpson = |w: &mut [f64], from: usize, to: usize| {
        for a in (from..to).step_by(2) {
            w[a] += h / 3.0;
            w[a + 1] += 4.0 * h / 3.0;
            w[a + 2] += h / 3.0;
        }
    };
    match j {
        0 => {}
        1 => {
            w[0] = 0.5 * h;
            w[1] = 0.5 * h;
        }
        _ if j.is_multiple_of(2) => simpson(&mut w, 0, j),
        _ => {
            simpson(&mut w, 0, j - 3);
            for (o, c) in [1.0, 3.0, 3.0, 1.0].iter().enumerate() {
                w[j - 3 + o] += 3.0 * h / 8.0 * c;
            }
        }
    }
    w
}

/// Picard iteration for the shifted variation-of-constants formula on `[0, tau]`.
pub fn picard_solve(
    op: &NonlocalOperator,
    f: &Reaction,
    u0: &DVector<f64>,
    tau: f64,
    iters: usize,
) -> Result<PicardReport> {
    let n = op.len();
    check_len(n, u0.len())?;
    f.check_nodes(n)?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid("tau must be positive"));
    }
    let global = f
        .global_lipschitz(n)
        .ok_or_else(|| Error::invalid("Picard iteration needs a globally Lipschitz reaction"))?;
    let (inf_ds, sup_ds) = match f.truncation() {
        Some(k) => derivative_range(f, n, k),
        None => (-global, global),
    };
    // f + βs is nondecreasing with Lipschitz constant β + sup ∂f/∂s
    let beta = (-inf_ds).max(0.0);
    let lip = beta + sup_ds.max(0.0);

    let h = tau / PICARD_MESH as f64;
    let shifted = op.amat() - DMatrix::<f64>::identity(n, n) * beta;
    let e1 = expm(&(&shifted * h))?;
    let mut props = vec![DMatrix::<f64>::identity(n, n)];
    for j in 1..=PICARD_MESH {
        let next = &props[j - 1] * &e1;
        props.push(next);
    }
    let norms: Vec<f64> = props.iter().map(norm_inf).collect();
    // the norm decays like a convex exponential, so the trapezoid sum overestimates
    let integral: f64 = norms.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
    let q = lip * integral;
    if q >= 1.0 {
        return Err(Error::invalid(format!("tau = {tau} too large: contraction factor q = {q:.4} >= 1")));
    }

    let free: Vec<DVector<f64>> = props.iter().map(|p| p * u0).collect();
    let lin1 = expm(&(op.amat() * h))?;
    let mut iterate = vec![u0.clone()];
    for j in 1..=PICARD_MESH {
        let next = &lin1 * &iterate[j - 1];
        iterate.push(next);
    }
    let weights: Vec<Vec<f64>> = (0..=PICARD_MESH).map(|j| cumulative_weights(j, h)).collect();

    let mut distances = Vec::with_capacity(iters);
    for _ in 0..iters {
        let g: Vec<DVector<f64>> = iterate.iter().map(|u| f.apply(u) + u * beta).collect();
        let next: Vec<DVector<f64>> = (0..=PICARD_MESH)
            .map(|j| {
                let mut acc = free[j].clone();
                for (k, &wk) in weights[j].iter().enumerate() {
                    if wk != 0.0 {
                        acc += (&props[j - k] * &g[k]) * wk;
                    }
                }
                acc
            })
            .collect();
        let dist = next.iter().zip(&iterate).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
        let scale = next.iter().map(|u| u.amax()).fold(1.0, f64::max);
        if let Some(&prev) = distances.last() {
            if dist > prev && prev > 1e-13 * scale {
                return Err(Error::NonConvergence(format!(
                    "Picard distances increased ({prev:e} -> {dist:e})"
                )));
            }
        }
        distances.push(dist);
        iterate = next;
    }

    let times = (0..=PICARD_MESH).map(|j| if j == PICARD_MESH { tau } else { j as f64 * h }).collect();
    let trajectory = Trajectory {
        times,
        states: iterate,
        scheme: Scheme::VcfExactLinear,
        dt: h,
        meta: TrajectoryMeta { beta: Some(beta), truncation: f.truncation(), ..Default::default() },
    };
    Ok(PicardReport { trajectory, distances, q, beta, lipschitz: lip })
}

fn derivative_range(f: &Reaction, n: usize, k: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        for s in reaction::linspace(-k, k, 4097) {
            let d = f.eval_ds(i, s);
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    (lo, hi)
}

/// Envelope operator with `U_t = KU - hU + C U + D`: the potential becomes `h - C`.
pub fn envelope_operator(op: &NonlocalOperator, c: &DVector<f64>) -> Result<NonlocalOperator> {
    check_len(op.len(), c.len())?;
    op.with_potential(op.h() - c)
}

/// `U(t) = Φ + e^{(K - h_C) t}(|u0| - Φ)` at the requested times.
pub fn envelope_u(
    op_c: &NonlocalOperator,
    d: &DVector<f64>,
    u0: &DVector<f64>,
    times: &[f64],
) -> Result<Vec<DVector<f64>>> {
    check_len(op_c.len(), u0.len())?;
    let coef = -op_c.h();
    let phi = solve_phi(op_c.kernel(), &coef, d)?;
    let start = u0.abs() - &phi;
    times
        .iter()
        .map(|&t| {
            if t < 0.0 {
                return Err(Error::invalid("envelope times must be nonnegative"));
            }
            Ok(&phi + linear_semigroup_apply(op_c, t, &start)?)
        })
        .collect()
}

/// Lyapunov functional `E(u) = -½ ⟨amat·u, u⟩_w - Σ_i w_i F(x_i, u_i)`, which
/// equals `¼ ΣΣ w_i w_j J_ij (u_j - u_i)² + ½ Σ w_i (h_i - h0_i) u_i² - Σ w_i F(x_i, u_i)`.
pub fn lyapunov_energy(op: &NonlocalOperator, f: &Reaction, u: &DVector<f64>) -> Result<f64> {
    if !op.kernel().is_symmetric() {
        return Err(Error::NotSymmetric);
    }
    check_len(op.len(), u.len())?;
    f.check_nodes(op.len())?;
    let w = op.weights();
    let w = DVector::from_column_slice(w);
    let au = op.amat() * u;
    let quad: f64 = (0..u.len()).map(|i| w[i] * u[i] * au[i]).sum();
    let pot: f64 = (0..u.len()).map(|i| w[i] * f.primitive(i, u[i])).sum();
    Ok(-0.5 * quad - pot)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KaplanReport {
    /// Principal value of the kernel part alone.
    pub lambda: f64,
    pub h_sup: f64,
    pub times: Vec<f64>,
    /// `z(t) = Σ w_i u_i(t) φ_i` with `Σ w_i φ_i = 1`.
    pub z: Vec<f64>,
    /// Solution of `ż = (Λ - ‖h‖∞) z + z^ρ` from `z(0)`; infinite past blow-up.
    pub comparison: Vec<f64>,
    pub comparison_blowup: Option<f64>,
    /// `z(t_m) ≥ comparison(t_m)` up to a relative tolerance of 1e-6.
    pub dominates: bool,
}

/// Projection witness of finite-time blow-up for `u_t = Ku - hu + u^ρ`.
pub fn kaplan_witness(op: &NonlocalOperator, rho: f64, trajectory: &Trajectory) -> Result<KaplanReport> {
    let kernel = op.kernel();
    if !kernel.is_symmetric() {
        return Err(Error::NotSymmetric);
    }
    if !(rho > 1.0) {
        return Err(Error::invalid("Kaplan witness needs rho > 1"));
    }
    let n = op.len();
    let bare = NonlocalOperator::new(kernel.clone(), DVector::zeros(n))?;
    let report = spectral::principal_value(&bare, Method::Auto)?;
    let phi = DVector::from_vec(report.eigenfunction.clone().unwrap_or_default());
    if phi.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Spectral("principal eigenfunction is not positive".into()));
    }
    let w = DVector::from_column_slice(op.weights());
    let phi = &phi / w.dot(&phi);
    let wphi = w.component_mul(&phi);

    let h_sup = op.h().amax();
    let a = report.lambda - h_sup;
    let z: Vec<f64> = trajectory.states.iter().map(|u| wphi.dot(u)).collect();
    let z0 = z.first().copied().unwrap_or(0.0);
    let (comparison, blowup): (Vec<f64>, Option<f64>) = if z0 > 0.0 {
        let y0 = z0.powf(1.0 - rho);
        let blow = {
            let arg = 1.0 + a * y0;
            if a == 0.0 {
                Some(y0 / (rho - 1.0))
            } else if arg > 0.0 && arg.ln() / ((rho - 1.0) * a) > 0.0 {
                Some(arg.ln() / ((rho - 1.0) * a))
            } else {
                None
            }
        };
        let comp = trajectory
            .times
            .iter()
            .map(|&t| {
                let y = if a == 0.0 {
                    y0 - (rho - 1.0) * t
                } else {
                    (y0 + 1.0 / a) * (-(rho - 1.0) * a * t).exp() - 1.0 / a
                };
                if y > 0.0 {
                    y.powf(-1.0 / (rho - 1.0))
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        (comp, blow)
    } else {
        (vec![0.0; z.len()], None)
    };
    let dominates = z
        .iter()
        .zip(&comparison)
        .filter(|(_, c)| c.is_finite())
        .all(|(&zi, &ci)| zi >= ci - 1e-6 * ci.abs().max(1.0));
    Ok(KaplanReport {
        lambda: report.lambda,
        h_sup,
        times: trajectory.times.clone(),
        z,
        comparison,
        comparison_blowup: blowup,
        dominates,
    })
}

/// Shortcut: sup-distance between two states.
pub fn sup_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

/// `e^{amat·t} u0` at each time.
pub fn linear_flow(op: &NonlocalOperator, u0: &DVector<f64>, times: &[f64]) -> Result<Vec<DVector<f64>>> {
    times.iter().map(|&t| linear_semigroup_apply(op, t, u0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{Kernel, KernelLaw};
    use crate::reaction::LogisticReaction;
    use crate::space::{MeasureSpace, QuadratureRule};
    use std::sync::Arc;

    fn constant_kernel(n: usize) -> Kernel {
        let space = Arc::new(MeasureSpace::interval(0.0, 1.0, n, QuadratureRule::Midpoint).unwrap());
        Kernel::assemble(space, &KernelLaw::Constant { c: 1.0 }).unwrap()
    }

    fn logistic(n: usize) -> Reaction {
        Reaction::logistic(LogisticReaction::uniform(n, 0.0, 2.0, 1.0, 3.0).unwrap())
    }

    #[test]
    fn semigroup_examples() {
        let n = 16;
        let k = constant_kernel(n);
        let op = NonlocalOperator::with_h0_offset(k.clone(), 0.0).unwrap();
        let c = DVector::from_element(n, 2.5);
        assert_eq!(linear_semigroup_apply(&op, 0.0, &c).unwrap(), c);
        for t in [0.5, 3.0, -2.0] {
            assert!((linear_semigroup_apply(&op, t, &c).unwrap() - &c).amax() < 1e-12);
        }
        let zero = Kernel::assemble(k.space().clone(), &KernelLaw::Constant { c: 0.0 }).unwrap();
        let op = NonlocalOperator::new(zero, DVector::from_element(n, 1.0)).unwrap();
        let u = linear_semigroup_apply(&op, 1.0, &DVector::from_element(n, 1.0)).unwrap();
        assert!(u.iter().all(|v| (v - (-1f64).exp()).abs() < 1e-15));
        assert!(linear_semigroup_apply(&op, f64::NAN, &u).is_err());
    }

    #[test]
    fn supersolution_closed_forms() {
        let z = supersolution_ode(1.0, 1.0, 1.0, 2.0).unwrap();
        for t in [0.0, 0.3, 1.7] {
            assert!((z.z(t) - (2.0 * f64::exp(t) - 1.0)).abs() < 1e-13);
            let dz = (z.z(t + 1e-6) - z.z(t - 1e-6)) / 2e-6;
            assert!((dz - z.z(t) - 1.0).abs() < 1e-6);
        }
        assert!((z.level - (2.0 * 2f64.exp() - 1.0)).abs() < 1e-12);
        let z = supersolution_ode(0.0, 2.0, 0.0, 1.0).unwrap();
        assert_eq!(z.z(0.75), 1.5);
        let z = supersolution_ode(-1.0, 1.0, 5.0, 3.0).unwrap();
        assert!((z.z(2.0) - (4.0 * (-2f64).exp() + 1.0)).abs() < 1e-14);
        assert_eq!(z.level, 5.0);
        assert!(supersolution_ode(1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn zero_reaction_matches_semigroup() {
        let n = 24;
        let k = constant_kernel(n);
        let h = DVector::from_fn(n, |i, _| 0.5 + (i as f64 / n as f64));
        let op = NonlocalOperator::new(k, h).unwrap();
        let u0 = DVector::from_fn(n, |i, _| (i as f64 * 0.3).sin());
        let cfg = IntegratorConfig::new(Scheme::Rk4, 1e-3, 1.0).unwrap().with_record_every(100);
        let tr = evolve_nonlinear(&op, &Reaction::zero(), &u0, &cfg).unwrap();
        assert_eq!(tr.times.len(), 11);
        for (t, u) in tr.times.iter().zip(&tr.states) {
            let exact = linear_semigroup_apply(&op, *t, &u0).unwrap();
            assert!((u - exact).amax() < 1e-6);
        }
    }

    #[test]
    fn logistic_constant_solution_tends_to_sqrt3() {
        let n = 16;
        let op = NonlocalOperator::new(constant_kernel(n), DVector::zeros(n)).unwrap();
        let u0 = DVector::from_element(n, 0.1);
        let cfg = IntegratorConfig::new(Scheme::EulerOp, 0.01, 20.0).unwrap();
        let tr = evolve_nonlinear(&op, &logistic(n), &u0, &cfg).unwrap();
        assert!(tr.meta.truncation.unwrap() > 3f64.sqrt());
        assert!(tr.last().iter().all(|v| (v - 3f64.sqrt()).abs() < 1e-4));
        let cfg = IntegratorConfig::new(Scheme::Rk4, 0.01, 20.0).unwrap();
        let tr = evolve_nonlinear(&op, &logistic(n), &u0, &cfg).unwrap();
        assert!(tr.last().iter().all(|v| (v - 3f64.sqrt()).abs() < 1e-4));
    }

    #[test]
    fn cubic_blows_up() {
        let n = 8;
        let op = NonlocalOperator::new(constant_kernel(n), DVector::zeros(n)).unwrap();
        let cubic = Reaction::polynomial(vec![0.0, 0.0, 0.0, 1.0]);
        let cfg = IntegratorConfig::new(Scheme::Rk4, 1e-5, 1.0).unwrap();
        let tr = evolve_nonlinear(&op, &cubic, &DVector::from_element(n, 10.0), &cfg).unwrap();
        let b = tr.meta.blowup.as_ref().expect("blow-up flagged");
        assert!(b.time < 0.1);
        assert_eq!(*tr.times.last().unwrap(), b.last_finite_time);
        assert!(tr.states.iter().all(|u| u.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn euler_dt_bound_enforced() {
        let n = 8;
        let op = NonlocalOperator::new(constant_kernel(n), DVector::from_element(n, 2.0)).unwrap();
        let cfg = IntegratorConfig::new(Scheme::EulerOp, 0.5, 1.0).unwrap().with_beta(1.0);
        let err = evolve_nonlinear(&op, &Reaction::zero(), &DVector::zeros(n), &cfg).unwrap_err();
        assert!(err.is_precondition());
        assert!(IntegratorConfig::new(Scheme::EulerOp, 0.0, 1.0).is_err());
    }

    #[test]
    fn schemes_agree() {
        let n = 16;
        let k = constant_kernel(n);
        let op = NonlocalOperator::new(k, DVector::from_fn(n, |i, _| (i % 3) as f64 * 0.2)).unwrap();
        let f = Reaction::custom("sin", Arc::new(|_, s: f64| 0.5 * s.sin() + 0.1), None, Some(0.5));
        let u0 = DVector::from_fn(n, |i, _| 0.2 + 0.05 * i as f64);
        let run = |s| {
            let cfg = IntegratorConfig::new(s, 1e-3, 1.0).unwrap();
            evolve_nonlinear(&op, &f, &u0, &cfg).unwrap().last().clone()
        };
        let (e, r, v) = (run(Scheme::EulerOp), run(Scheme::Rk4), run(Scheme::VcfExactLinear));
        assert!((&e - &r).amax() < 1e-2);
        assert!((&v - &r).amax() < 1e-2);
        // first order: halving dt halves the gap
        let cfg = IntegratorConfig::new(Scheme::EulerOp, 5e-4, 1.0).unwrap();
        let e2 = evolve_nonlinear(&op, &f, &u0, &cfg).unwrap().last().clone();
        let ratio = (&e - &r).amax() / (&e2 - &r).amax();
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn quadrature_weights_integrate_cubics() {
        let h = 0.1;
        for j in 1..9 {
            let w = cumulative_weights(j, h);
            let exact = (j as f64 * h).powi(if j == 1 { 2 } else { 4 }) / if j == 1 { 2.0 } else { 4.0 };
            let p = if j == 1 { 1 } else { 3 };
            let approx: f64 = w.iter().enumerate().map(|(k, wk)| wk * (k as f64 * h).powi(p)).sum();
            assert!((approx - exact).abs() < 1e-15, "j={j}");
        }
    }

    #[test]
    fn picard_zero_reaction_is_exact_at_once() {
        let n = 12;
        let op = NonlocalOperator::new(constant_kernel(n), DVector::from_element(n, 0.3)).unwrap();
        let u0 = DVector::from_fn(n, |i, _| i as f64 / n as f64);
        let rep = picard_solve(&op, &Reaction::zero(), &u0, 0.05, 3).unwrap();
        assert!(rep.distances.iter().all(|&d| d < 1e-12), "{:?}", rep.distances);
    }

    #[test]
    fn picard_affine_matches_closed_form() {
        let n = 12;
        let op = NonlocalOperator::new(constant_kernel(n), DVector::from_fn(n, |i, _| 0.1 * i as f64)).unwrap();
        let d = DVector::from_fn(n, |i, _| 1.0 + (i % 2) as f64);
        let f = Reaction::constant(d.clone()).unwrap();
        let u0 = DVector::from_element(n, 0.5);
        let tau = 0.05;
        let rep = picard_solve(&op, &f, &u0, tau, 12).unwrap();
        for (t, u) in rep.trajectory.times.iter().zip(&rep.trajectory.states) {
            let (e, i) = expm_with_integral(op.amat(), *t).unwrap();
            assert!((u - (e * &u0 + i * &d)).amax() < 1e-8);
        }
    }

    #[test]
    fn picard_truncated_logistic_contracts() {
        let n = 12;
        let op = NonlocalOperator::new(constant_kernel(n), DVector::zeros(n)).unwrap();
        let f = logistic(n).truncate(3.0).unwrap();
        let u0 = DVector::from_fn(n, |i, _| 0.5 + 0.1 * i as f64);
        let rep = picard_solve(&op, &f, &u0, 0.05, 15).unwrap();
        assert!(rep.q < 1.0);
        let d = &rep.distances;
        for w in d.windows(2).filter(|w| w[0] > 1e-12) {
            assert!(w[1] <= rep.q * w[0], "{} > {} * {}", w[1], rep.q, w[0]);
        }
        let cfg = IntegratorConfig::new(Scheme::Rk4, 0.05 / 640.0, 0.05).unwrap();
        let tr = evolve_nonlinear(&op, &f, &u0, &cfg).unwrap();
        assert!((tr.last() - rep.trajectory.last()).amax() < 1e-6);
        assert!(picard_solve(&op, &f, &u0, 1.0, 3).unwrap_err().is_precondition());
    }

    #[test]
    fn envelope_examples() {
        let n = 10;
        let k = constant_kernel(n);
        let op = NonlocalOperator::new(k.clone(), DVector::zeros(n)).unwrap();
        let op_c = envelope_operator(&op, &DVector::from_element(n, -2.0)).unwrap();
        let d = DVector::from_element(n, 1.0);
        let times = [0.0, 0.5, 2.0, 40.0];
        let ones = DVector::from_element(n, 1.0);
        for u in envelope_u(&op_c, &d, &ones, &times).unwrap() {
            assert!((u - &ones).amax() < 1e-12);
        }
        let three = DVector::from_element(n, 3.0);
        let env = envelope_u(&op_c, &d, &three, &times).unwrap();
        // constants: U' = U - 2U + 1 gives U = 1 + 2 e^{-t}
        for (t, u) in times.iter().zip(&env) {
            assert!(u.iter().all(|v| (v - (1.0 + 2.0 * (-t).exp())).abs() < 1e-12));
        }
        let env = envelope_u(&op_c, &d, &DVector::zeros(n), &times).unwrap();
        assert!(env.iter().all(|u| u.min() >= -1e-10));
        assert!((env[3].clone() - ones).amax() < 1e-12);
        let bad = envelope_operator(&op, &DVector::from_element(n, 0.5)).unwrap();
        assert!(envelope_u(&bad, &d, &three, &times).is_err());
    }

    #[test]
    fn lyapunov_values_and_decay() {
        let n = 16;
        let k = constant_kernel(n);
        let op = NonlocalOperator::new(k, DVector::zeros(n)).unwrap();
        let lin = Reaction::polynomial(vec![0.0, -1.0]);
        // constants have no jump part; ½(h - h0)c² = -c²/2 cancels -F = c²/2
        let c = DVector::from_element(n, 1.7);
        assert!(lyapunov_energy(&op, &lin, &c).unwrap().abs() < 1e-13);
        assert_eq!(lyapunov_energy(&op, &lin, &DVector::zeros(n)).unwrap(), 0.0);

        let u0 = DVector::from_fn(n, |i, _| 0.2 + 1.5 * ((i as f64) * 0.7).sin().abs());
        let cfg = IntegratorConfig::new(Scheme::Rk4, 1e-2, 5.0).unwrap();
        let f = logistic(n);
        let tr = evolve_nonlinear(&op, &f, &u0, &cfg).unwrap();
        let e: Vec<f64> = tr.states.iter().map(|u| lyapunov_energy(&op, &f, u).unwrap()).collect();
        assert!(e.windows(2).all(|w| w[1] <= w[0] + 1e-8));
    }

    #[test]
    fn kaplan_examples() {
        let n = 8;
        let op = NonlocalOperator::new(constant_kernel(n), DVector::zeros(n)).unwrap();
        let cfg = IntegratorConfig::new(Scheme::Rk4, 1e-3, 1.0).unwrap();
        let tr = evolve_nonlinear(&op, &Reaction::zero(), &DVector::from_element(n, 1.0), &cfg).unwrap();
        let rep = kaplan_witness(&op, 3.0, &tr).unwrap();
        assert!((rep.lambda - 1.0).abs() < 1e-12);
        assert!((rep.z.last().unwrap() - 1f64.exp()).abs() < 1e-9);

        let tr = evolve_nonlinear(&op, &Reaction::zero(), &DVector::zeros(n), &cfg).unwrap();
        assert!(kaplan_witness(&op, 3.0, &tr).unwrap().z.iter().all(|&z| z == 0.0));
    }
}
