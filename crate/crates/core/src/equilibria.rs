//! Stationary solutions: envelope equilibrium, extremal equilibria by monotone
//! iteration, minimal nonnegative and positive equilibria, Newton refinement,
//! uniqueness experiments and piecewise-constant equilibria.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::evolve::{euler_op_step, evolve_nonlinear, IntegratorConfig, Scheme};
use crate::kernel::{Kernel, KernelLaw, NonlocalOperator};
use crate::linalg::{norm_inf, solve_refined};
use crate::reaction::{self, BoundStrategy, Reaction, StructureBounds};
use crate::space::MeasureSpace;
use crate::spectral::{self, Method};

/// Solve `(jmat·diag(w) + diag(c)) Φ = -d`, the stationary envelope equation.
pub fn solve_phi(kernel: &Kernel, c: &DVector<f64>, d: &DVector<f64>) -> Result<DVector<f64>> {
    let n = kernel.len();
    check_len(n, c.len())?;
    check_len(n, d.len())?;
    if d.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::invalid("envelope source D must be nonnegative"));
    }
    let op = NonlocalOperator::k_plus(kernel, c)?;
    let lambda = spectral::principal_value(&op, Method::Auto)?.lambda;
    if lambda >= 0.0 {
        return Err(Error::Spectral(format!("envelope needs Λ(K + C) < 0, got {lambda}")));
    }
    if d.iter().all(|&v| v == 0.0) {
        return Ok(DVector::zeros(n));
    }
    let a = -op.amat();
    let phi = solve_refined(&a, d)?;
    let residual = (&a * &phi - d).amax();
    let scale = 1.0 + norm_inf(&a) * phi.amax() + d.amax();
    if residual > 1e-12 * scale {
        return Err(Error::Singular(format!("envelope solve residual {residual:e}")));
    }
    Ok(phi)
}

/// Structure bounds chosen so that the envelope operator is decaying.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvelopeBounds {
    pub bounds: StructureBounds,
    /// `C - h`, the coefficient of the envelope operator `K + diag(C - h)`.
    #[serde(with = "crate::serde_vec::dvec")]
    pub coef: DVector<f64>,
    #[serde(with = "crate::serde_vec::dvec")]
    pub d: DVector<f64>,
    pub lambda: f64,
}

impl EnvelopeBounds {
    pub fn phi(&self, kernel: &Kernel) -> Result<DVector<f64>> {
        solve_phi(kernel, &self.coef, &self.d)
    }
}

/// Envelope bounds for `op` and `f` with the given strategy.
pub fn envelope_bounds_with(op: &NonlocalOperator, f: &Reaction, strategy: &BoundStrategy) -> Result<EnvelopeBounds> {
    let bounds = reaction::structure_bounds(f, op.len(), strategy)?;
    let coef = &bounds.c - op.h();
    let lambda = spectral::lambda_k_plus(op.kernel(), &coef, Method::Auto)?;
    Ok(EnvelopeBounds { d: bounds.d.clone(), bounds, coef, lambda })
}

/// Plain bounds when they already give a decaying envelope, otherwise a
/// Young shift large enough to make every row sum negative.
pub fn envelope_bounds(op: &NonlocalOperator, f: &Reaction) -> Result<EnvelopeBounds> {
    if let Ok(b) = envelope_bounds_with(op, f, &BoundStrategy::Plain) {
        if b.lambda < 0.0 {
            return Ok(b);
        }
    }
    if let Some(l) = f.logistic_form(op.len()) {
        if l.m.min() > 0.0 {
            let drift = op.h0() - op.h();
            let a = (&l.n + drift).max().max(0.0) + 1.0;
            let b = envelope_bounds_with(op, f, &BoundStrategy::YoungShift { a })?;
            if b.lambda < 0.0 {
                return Ok(b);
            }
        }
    }
    Err(Error::Spectral("no structure bounds give a decaying envelope (Λ(K + C - h) < 0)".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCriterion {
    SupNorm,
    WeightedL2,
    Trivial,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotoneLimit {
    #[serde(with = "crate::serde_vec::dvec")]
    pub state: DVector<f64>,
    pub residual: f64,
    pub blocks: usize,
    pub block_length: f64,
    pub criterion: StopCriterion,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Down,
    Up,
}

const BLOCK_CAP: usize = 10_000;
const L2_AFTER: usize = 100;
const MAX_BLOCK_LENGTH: f64 = 1024.0;

/// Stationary residual `‖amat·u + f(u)‖∞`.
pub fn stationary_residual(op: &NonlocalOperator, f: &Reaction, u: &DVector<f64>) -> f64 {
    (op.amat() * u + f.apply(u)).amax()
}

fn weighted_l2(w: &[f64], v: &DVector<f64>) -> f64 {
    w.iter().zip(v.iter()).map(|(w, x)| w * x * x).sum::<f64>().sqrt()
}

/// Iterate the order-preserving flow from `start` in blocks until the block
/// endpoints stop moving; the orbit must be monotone in `dir`.
fn monotone_orbit(
    op: &NonlocalOperator,
    f: &Reaction,
    start: &DVector<f64>,
    dir: Direction,
    window: f64,
    tol: f64,
) -> Result<(DVector<f64>, usize, f64, StopCriterion)> {
    let n = op.len();
    let beta = f.monotone_shift(n, window);
    let top = (op.h().max() + beta).max(1.0);
    let slack = |u: &DVector<f64>| 1e-12 * (1.0 + u.amax());
    let ordered = |next: &DVector<f64>, prev: &DVector<f64>| {
        let s = slack(prev);
        match dir {
            Direction::Down => next.iter().zip(prev.iter()).all(|(a, b)| *a <= b + s),
            Direction::Up => next.iter().zip(prev.iter()).all(|(a, b)| *a >= b - s),
        }
    };
    let run_block = |u: &DVector<f64>, t: f64| {
        let steps = (t * top).ceil() as usize;
        let dt = t / steps as f64;
        let mut u = u.clone();
        for _ in 0..steps {
            u = euler_op_step(op, f, beta, dt, &u);
        }
        u
    };

    let mut t_block = 1.0;
    let mut next = run_block(start, t_block);
    while !ordered(&next, start) {
        t_block *= 2.0;
        if t_block > MAX_BLOCK_LENGTH {
            return Err(Error::Monotonicity(format!(
                "first block is not monotone for any block length up to {MAX_BLOCK_LENGTH}"
            )));
        }
        next = run_block(start, t_block);
    }
    let mut prev = start.clone();
    let w = op.weights();
    for block in 1..=BLOCK_CAP {
        if block > 1
            && !ordered(&next, &prev) {
                return Err(Error::Monotonicity(format!("orbit lost monotonicity at block {block}")));
            }
        let diff = &next - &prev;
        if diff.amax() <= tol {
            return Ok((next, block, t_block, StopCriterion::SupNorm));
        }
        if block >= L2_AFTER && weighted_l2(w, &diff) <= tol {
            return Ok((next, block, t_block, StopCriterion::WeightedL2));
        }
        prev = next;
        next = run_block(&prev, t_block);
    }
    Err(Error::NonConvergence(format!("monotone iteration exceeded {BLOCK_CAP} blocks")))
}

/// Newton refinement result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewtonResult {
    #[serde(with = "crate::serde_vec::dvec")]
    pub state: DVector<f64>,
    pub steps: usize,
    pub residual: f64,
}

/// Damped Newton on `R(u) = amat·u + f(u)`.
pub fn newton_refine(op: &NonlocalOperator, f: &Reaction, guess: &DVector<f64>, tol: f64) -> Result<NewtonResult> {
    let n = op.len();
    check_len(n, guess.len())?;
    f.check_nodes(n)?;
    let resid = |u: &DVector<f64>| op.amat() * u + f.apply(u);
    let mut u = guess.clone();
    let mut r = resid(&u);
    let mut rn = r.amax();
    for step in 0..=50 {
        if rn <= tol {
            return Ok(NewtonResult { state: u, steps: step, residual: rn });
        }
        if step == 50 {
            break;
        }
        let mut jac: DMatrix<f64> = op.amat().clone();
        let ds = f.apply_ds(&u);
        for i in 0..n {
            jac[(i, i)] += ds[i];
        }
        let delta = solve_refined(&jac, &(-&r)).map_err(|_| Error::Singular("Newton Jacobian".into()))?;
        let mut damping = 1.0;
        loop {
            let trial = &u + &delta * damping;
            let tr = resid(&trial);
            let tn = tr.amax();
            if tn < rn || (tn <= tol) {
                u = trial;
                r = tr;
                rn = tn;
                break;
            }
            damping *= 0.5;
            if damping < 1e-10 {
                // no descent left: accept if already at rounding level
                let floor = 1e-14 * (1.0 + norm_inf(op.amat())) * (1.0 + u.amax());
                if rn <= tol.max(floor) {
                    return Ok(NewtonResult { state: u, steps: step, residual: rn });
                }
                return Err(Error::NonConvergence(format!("Newton stalled at residual {rn:e}")));
            }
        }
    }
    Err(Error::NonConvergence(format!("Newton did not reach {tol:e} in 50 steps (residual {rn:e})")))
}

const REFINE_TOL: f64 = 1e-10;

/// Polish a monotone limit with Newton, keeping the limit when Newton wanders off.
fn polish(op: &NonlocalOperator, f: &Reaction, limit: &DVector<f64>) -> (DVector<f64>, f64, usize) {
    let base = stationary_residual(op, f, limit);
    match newton_refine(op, f, limit, REFINE_TOL) {
        Ok(r) if (&r.state - limit).amax() <= 1e-3 * (1.0 + limit.amax()) && r.residual <= base => {
            (r.state, r.residual, r.steps)
        }
        _ => (limit.clone(), base, 0),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumSet {
    #[serde(with = "crate::serde_vec::dvec")]
    pub phi: DVector<f64>,
    #[serde(with = "crate::serde_vec::dvec")]
    pub phi_m: DVector<f64>,
    #[serde(rename = "phi_M")]
    #[serde(with = "crate::serde_vec::dvec")]
    pub phi_big_m: DVector<f64>,
    #[serde(with = "crate::serde_vec::opt_dvec")]
    pub phi_m_plus: Option<DVector<f64>>,
    pub residuals: EquilibriumResiduals,
    pub iterations: EquilibriumIterations,
    pub epsilon: f64,
    pub envelope: EnvelopeBounds,
    pub criterion_down: StopCriterion,
    pub criterion_up: StopCriterion,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumResiduals {
    pub phi: f64,
    pub phi_m: f64,
    #[serde(rename = "phi_M")]
    pub phi_big_m: f64,
    pub phi_m_plus: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumIterations {
    pub down_blocks: usize,
    pub up_blocks: usize,
    pub block_length_down: f64,
    pub block_length_up: f64,
    pub newton_down: usize,
    pub newton_up: usize,
}

/// Extremal equilibria `φ_m ≤ φ_M` as limits of the monotone orbits from `∓(Φ + ε)`.
pub fn extremal_equilibria(
    op: &NonlocalOperator,
    f: &Reaction,
    epsilon: Option<f64>,
    tol: f64,
) -> Result<EquilibriumSet> {
    let envelope = envelope_bounds(op, f)?;
    extremal_equilibria_with(op, f, envelope, epsilon, tol)
}

/// As [`extremal_equilibria`] with explicitly chosen envelope bounds.
pub fn extremal_equilibria_with(
    op: &NonlocalOperator,
    f: &Reaction,
    envelope: EnvelopeBounds,
    epsilon: Option<f64>,
    tol: f64,
) -> Result<EquilibriumSet> {
    let n = op.len();
    f.check_nodes(n)?;
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let phi = envelope.phi(op.kernel())?;
    let eps = epsilon.unwrap_or(1e-3 * (1.0 + phi.amax()));
    if !(eps > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let window = 2.0 * (phi.amax() + eps);
    let fk = if f.is_globally_lipschitz(n) { f.clone() } else { f.truncate(window)? };
    let top = phi.add_scalar(eps);
    let bottom = -&top;
    let (down, up) = rayon::join(
        || monotone_orbit(op, &fk, &top, Direction::Down, window, tol),
        || monotone_orbit(op, &fk, &bottom, Direction::Up, window, tol),
    );
    let (down, db, dt_len, dcrit) = down?;
    let (up, ub, ut_len, ucrit) = up?;
    let (phi_big_m, rm_big, newton_down) = polish(op, f, &down);
    let (phi_m, rm, newton_up) = polish(op, f, &up);

    let g0 = f.g0(n);
    let phi_m_plus = if g0.min() >= 0.0 {
        Some(minimal_nonnegative_equilibrium(op, f, tol)?)
    } else {
        None
    };
    let phi_resid = (NonlocalOperator::k_plus(op.kernel(), &envelope.coef)?.amat() * &phi + &envelope.d).amax();
    Ok(EquilibriumSet {
        residuals: EquilibriumResiduals {
            phi: phi_resid,
            phi_m: rm,
            phi_big_m: rm_big,
            phi_m_plus: phi_m_plus.as_ref().map(|p| p.residual),
        },
        iterations: EquilibriumIterations {
            down_blocks: db,
            up_blocks: ub,
            block_length_down: dt_len,
            block_length_up: ut_len,
            newton_down,
            newton_up,
        },
        phi,
        phi_m,
        phi_big_m,
        phi_m_plus: phi_m_plus.map(|p| p.state),
        epsilon: eps,
        envelope,
        criterion_down: dcrit,
        criterion_up: ucrit,
    })
}

/// Smallest `M = 2^j ≥ floor` with `(h0 - h) M + f(x, M) ≤ 0` at every node, so
/// the constant `M` is a supersolution.
pub fn constant_supersolution(op: &NonlocalOperator, f: &Reaction, floor: f64) -> Result<f64> {
    let drift = op.h0() - op.h();
    let mut m = 1.0f64;
    while m < floor {
        m *= 2.0;
    }
    for _ in 0..64 {
        if (0..op.len()).all(|i| drift[i] * m + f.eval(i, m) <= 0.0) {
            return Ok(m);
        }
        m *= 2.0;
    }
    Err(Error::invalid("no constant supersolution found; the orbit from 0 may be unbounded"))
}

fn upward_limit(
    op: &NonlocalOperator,
    f: &Reaction,
    start: &DVector<f64>,
    ceiling: f64,
    tol: f64,
) -> Result<MonotoneLimit> {
    let n = op.len();
    let window = 2.0 * ceiling;
    let fk = if f.is_globally_lipschitz(n) { f.clone() } else { f.truncate(window)? };
    let (limit, blocks, t_block, criterion) = monotone_orbit(op, &fk, start, Direction::Up, window, tol)?;
    let (state, residual, newton_steps) = polish(op, f, &limit);
    Ok(MonotoneLimit { state, residual, blocks, block_length: t_block, criterion, newton_steps })
}

/// Minimal nonnegative equilibrium: limit of the non-decreasing orbit from 0.
pub fn minimal_nonnegative_equilibrium(op: &NonlocalOperator, f: &Reaction, tol: f64) -> Result<MonotoneLimit> {
    let n = op.len();
    f.check_nodes(n)?;
    let g0 = f.g0(n);
    if g0.min() < 0.0 {
        return Err(Error::invalid("minimal nonnegative equilibrium needs f(x, 0) >= 0"));
    }
    if g0.iter().all(|&v| v == 0.0) {
        return Ok(MonotoneLimit {
            state: DVector::zeros(n),
            residual: 0.0,
            blocks: 0,
            block_length: 0.0,
            criterion: StopCriterion::Trivial,
            newton_steps: 0,
        });
    }
    let ceiling = constant_supersolution(op, f, 1.0)?;
    upward_limit(op, f, &DVector::zeros(n), ceiling, tol)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PositiveEquilibrium {
    pub limit: MonotoneLimit,
    /// `Λ(K - h + M)`.
    pub lambda: f64,
    pub gamma: f64,
    /// Largest sup-distance between the limits started from `γφ̃, γφ̃/2, γφ̃/4, γφ̃/8`.
    pub refinement_gap: f64,
    pub refinements_agree: bool,
}

/// Minimal positive equilibrium from the subsolution `γ φ̃`, where `φ̃` is the
/// principal eigenfunction of `K - h + M`. `None` when `Λ(K - h + M) ≤ 0`.
pub fn minimal_positive_equilibrium(
    op: &NonlocalOperator,
    f: &Reaction,
    m_lower: &DVector<f64>,
    s0: f64,
    tol: f64,
) -> Result<Option<PositiveEquilibrium>> {
    let n = op.len();
    check_len(n, m_lower.len())?;
    f.check_nodes(n)?;
    if !(s0 > 0.0) {
        return Err(Error::invalid("s0 must be positive"));
    }
    if f.g0(n).amax() > 1e-14 {
        return Err(Error::invalid("minimal positive equilibrium needs f(x, 0) = 0"));
    }
    for i in 0..n {
        for s in reaction::linspace(0.0, s0, 257) {
            if f.eval(i, s) < m_lower[i] * s - 1e-12 * (1.0 + s) {
                return Err(Error::SignCondition(format!("f(x, s) >= M(x) s fails at node {i}, s = {s}")));
            }
        }
    }
    let op_m = op.with_potential(op.h() - m_lower)?;
    let rep = spectral::principal_value(&op_m, Method::Auto)?;
    if rep.lambda <= 0.0 {
        return Ok(None);
    }
    let phi = DVector::from_vec(rep.eigenfunction.clone().unwrap_or_default());
    if phi.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Spectral("principal eigenfunction of K - h + M is not positive".into()));
    }
    let gamma = 0.5 * s0.min(s0 / phi.max());
    let ceiling = constant_supersolution(op, f, s0)?;
    let starts: Vec<f64> = (0..4).map(|k| gamma / f64::powi(2.0, k)).collect();
    let limits: Vec<MonotoneLimit> = starts
        .par_iter()
        .map(|&g| upward_limit(op, f, &(&phi * g), ceiling, tol))
        .collect::<Result<_>>()?;
    let first = &limits[0].state;
    if first.min() <= 0.0 {
        return Err(Error::NonConvergence("limit from the positive subsolution is not positive".into()));
    }
    let gap = limits[1..].iter().map(|l| (&l.state - first).amax()).fold(0.0, f64::max);
    let mut limits = limits;
    Ok(Some(PositiveEquilibrium {
        limit: limits.swap_remove(0),
        lambda: rep.lambda,
        gamma,
        refinement_gap: gap,
        refinements_agree: gap <= 10.0 * tol.max(REFINE_TOL),
    }))
}

/// Real roots of `λu³ + (|Ω| - λ)u - A = 0` in increasing order.
pub fn piecewise_roots(omega_measure: f64, lambda: f64, a_level: f64) -> Result<[f64; 3]> {
    if !(lambda > 0.0) || !(omega_measure > 0.0) {
        return Err(Error::invalid("piecewise family needs λ > 0 and |Ω| > 0"));
    }
    let p = (omega_measure - lambda) / lambda;
    let q = -a_level / lambda;
    if 4.0 * p * p * p + 27.0 * q * q >= 0.0 {
        return Err(Error::invalid(format!(
            "|Ω|u - f(u) = A has fewer than three distinct real roots (λ = {lambda}, A = {a_level})"
        )));
    }
    let r = 2.0 * (-p / 3.0).sqrt();
    let theta = ((3.0 * q / (2.0 * p)) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0).acos() / 3.0;
    let mut roots = [0.0; 3];
    for (k, root) in roots.iter_mut().enumerate() {
        let mut u = r * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos();
        for _ in 0..3 {
            let g = u * u * u + p * u + q;
            let dg = 3.0 * u * u + p;
            if dg != 0.0 {
                u -= g / dg;
            }
        }
        *root = u;
    }
    roots.sort_by(f64::total_cmp);
    Ok(roots)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiecewiseEquilibrium {
    pub values: [f64; 3],
    pub measures: [f64; 3],
    pub a_level: f64,
    pub lambda: f64,
    pub assignment: Vec<usize>,
    #[serde(with = "crate::serde_vec::dvec")]
    pub state: DVector<f64>,
    pub residual: f64,
}

/// The cubic reaction `λu(1 - u²)` of the piecewise family.
pub fn bistable_cubic(lambda: f64) -> Reaction {
    Reaction::polynomial(vec![0.0, lambda, 0.0, -lambda])
}

/// Piecewise-constant equilibrium of `∫(u(y) - u(x))dy + λu(1 - u²) = 0` taking
/// the `k`-th root of `|Ω|u - f(u) = A` on the nodes assigned to part `k`.
pub fn piecewise_constant_family(
    space: Arc<MeasureSpace>,
    lambda: f64,
    a_level: f64,
    assignment: &[usize],
) -> Result<PiecewiseEquilibrium> {
    let n = space.len();
    check_len(n, assignment.len())?;
    if let Some(i) = assignment.iter().position(|&k| k > 2) {
        return Err(Error::invalid(format!("node {i} assigned to part {} (parts are 0, 1, 2)", assignment[i])));
    }
    let omega = space.total_measure();
    let values = piecewise_roots(omega, lambda, a_level)?;
    let mut measures = [0.0; 3];
    for (i, &k) in assignment.iter().enumerate() {
        measures[k] += space.weights()[i];
    }
    let total: f64 = values.iter().zip(&measures).map(|(u, m)| u * m).sum();
    if (total - a_level).abs() > 1e-12 * a_level.abs().max(1.0) {
        return Err(Error::invalid(format!(
            "measure constraint violated: Σ u_k |Ω_k| = {total} but A = {a_level}"
        )));
    }
    let kernel = Kernel::assemble(space, &KernelLaw::Constant { c: 1.0 })?;
    let op = NonlocalOperator::with_h0_offset(kernel, 0.0)?;
    let state = DVector::from_iterator(n, assignment.iter().map(|&k| values[k]));
    let residual = stationary_residual(&op, &bistable_cubic(lambda), &state);
    if residual > 1e-12 {
        return Err(Error::NonConvergence(format!("piecewise equilibrium residual {residual:e}")));
    }
    Ok(PiecewiseEquilibrium { values, measures, a_level, lambda, assignment: assignment.to_vec(), state, residual })
}

/// Random node assignment with `counts[k]` nodes in part `k`.
pub fn random_assignment(counts: [usize; 3], seed: u64) -> Vec<usize> {
    let mut a: Vec<usize> = (0..3).flat_map(|k| std::iter::repeat_n(k, counts[k])).collect();
    a.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    a
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub distance: f64,
    pub trivial: bool,
    pub blew_up: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniquenessReport {
    #[serde(rename = "phi_M")]
    #[serde(with = "crate::serde_vec::dvec")]
    pub phi_big_m: DVector<f64>,
    pub trials: Vec<TrialOutcome>,
    pub tol: f64,
    pub all_agree: bool,
    /// `f(x, s)/s` strictly decreasing on the check grid.
    pub hypothesis_met: bool,
    pub sign_ok: bool,
}

/// Evolve each trial and measure its distance from `φ_M` at `t_end`.
pub fn uniqueness_experiment(
    op: &NonlocalOperator,
    f: &Reaction,
    trials: &[DVector<f64>],
    t_end: f64,
    tol: f64,
) -> Result<UniquenessReport> {
    let n = op.len();
    if !op.kernel().is_symmetric() {
        return Err(Error::NotSymmetric);
    }
    for t in trials {
        check_len(n, t.len())?;
    }
    let grid: Vec<f64> = reaction::linspace(1e-3, 10.0, 400).collect();
    let hypothesis_met = reaction::f_over_s_decreasing(f, n, &grid)?;
    let g0 = f.g0(n);
    let sign_ok = g0.min() >= 0.0;
    let set = extremal_equilibria(op, f, None, 1e-10)?;
    let phi_big_m = set.phi_big_m;

    let reach = trials.iter().map(|t| t.amax()).fold(phi_big_m.amax(), f64::max) + 1.0;
    let stiff = norm_inf(op.amat()) + f.lip_on(n, reach);
    let dt = (1.0 / stiff).min(0.02);
    let cfg = IntegratorConfig::new(Scheme::Rk4, dt, t_end)?.with_record_every(usize::MAX);
    let outcomes: Vec<TrialOutcome> = trials
        .par_iter()
        .map(|u0| {
            let tr = evolve_nonlinear(op, f, u0, &cfg)?;
            let trivial = u0.iter().all(|&v| v == 0.0) && g0.iter().all(|&v| v == 0.0);
            Ok(TrialOutcome { distance: (tr.last() - &phi_big_m).amax(), trivial, blew_up: tr.blew_up() })
        })
        .collect::<Result<_>>()?;
    let all_agree = outcomes.iter().filter(|o| !o.trivial).all(|o| o.distance <= tol && !o.blew_up);
    Ok(UniquenessReport { phi_big_m, trials: outcomes, tol, all_agree, hypothesis_met, sign_ok })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expm;
    use crate::reaction::LogisticReaction;
    use crate::space::QuadratureRule;

    fn interval(n: usize) -> Arc<MeasureSpace> {
        Arc::new(MeasureSpace::interval(0.0, 1.0, n, QuadratureRule::Midpoint).unwrap())
    }

    fn constant_kernel(n: usize) -> Kernel {
        Kernel::assemble(interval(n), &KernelLaw::Constant { c: 1.0 }).unwrap()
    }

    fn logistic(n: usize, g: f64) -> Reaction {
        Reaction::logistic(LogisticReaction::uniform(n, g, 2.0, 1.0, 3.0).unwrap())
    }

    fn sqrt3() -> f64 {
        3f64.sqrt()
    }

    #[test]
    fn phi_examples() {
        let n = 12;
        let k = constant_kernel(n);
        let c = DVector::from_element(n, -2.0);
        let phi = solve_phi(&k, &c, &DVector::from_element(n, 1.0)).unwrap();
        assert!(phi.iter().all(|v| (v - 1.0).abs() < 1e-13));
        assert_eq!(solve_phi(&k, &c, &DVector::zeros(n)).unwrap(), DVector::zeros(n));
        let err = solve_phi(&k, &DVector::from_element(n, -0.5), &DVector::from_element(n, 1.0)).unwrap_err();
        assert!(err.is_precondition());
    }

    #[test]
    fn phi_matches_semigroup_integral() {
        let n = 10;
        let space = interval(n);
        let k = Kernel::assemble(space, &KernelLaw::Gaussian { sigma: 0.2, scale: 1.5 }).unwrap();
        let c = DVector::from_fn(n, |i, _| -1.5 - 0.3 * ((i * 7) % 4) as f64);
        let d = DVector::from_fn(n, |i, _| ((i * 5) % 3) as f64 * 0.4);
        let phi = solve_phi(&k, &c, &d).unwrap();
        // oracle: ∫_0^T e^{(K+C)s} d ds by composite Simpson on the exact exponential
        let op = NonlocalOperator::k_plus(&k, &c).unwrap();
        let (t_max, m) = (40.0, 4000);
        let h = t_max / m as f64;
        let step = expm(&(op.amat() * h)).unwrap();
        let mut acc = DVector::zeros(n);
        let mut term = d.clone();
        for j in 0..=m {
            let w = if j == 0 || j == m { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
            acc += &term * (w * h / 3.0);
            term = &step * term;
        }
        assert!((&acc - &phi).amax() < 1e-8, "{}", (&acc - &phi).amax());
        assert!(phi.min() > 0.0);
    }

    #[test]
    fn newton_examples() {
        let n = 8;
        let op = NonlocalOperator::new(constant_kernel(n), DVector::zeros(n)).unwrap();
        let f = logistic(n, 0.0);
        let r = newton_refine(&op, &f, &DVector::from_element(n, 1.7), 1e-13).unwrap();
        assert!(r.state.iter().all(|v| (v - sqrt3()).abs() < 1e-12));
        let again = newton_refine(&op, &f, &r.state, 1e-13).unwrap();
        assert!(again.steps <= 1);
        let z = newton_refine(&op, &f, &DVector::zeros(n), 1e-13).unwrap();
        assert_eq!(z.steps, 0);
        assert_eq!(z.state, DVector::zeros(n));
    }

    #[test]
    fn extremal_logistic() {
        let n = 16;
        let op = NonlocalOperator::new(constant_kernel(n), DVector::zeros(n)).unwrap();
        let set = extremal_equilibria(&op, &logistic(n, 0.0), None, 1e-9).unwrap();
        assert!(set.phi_big_m.iter().all(|v| (v - sqrt3()).abs() < 1e-6));
        assert!(set.phi_m.iter().all(|v| (v + sqrt3()).abs() < 1e-6));
        assert!(set.residuals.phi_m < 1e-8 && set.residuals.phi_big_m < 1e-8);
        assert!(set.phi_big_m.iter().zip(set.phi.iter()).all(|(a, p)| a.abs() <= p + 1e-8));
        assert_eq!(set.phi_m_plus.unwrap(), DVector::zeros(n));
    }

    #[test]
    fn extremal_linear_and_affine() {
        let n = 12;
        let k = constant_kernel(n);
        let op = NonlocalOperator::new(k.clone(), DVector::from_element(n, 1.5)).unwrap();
        let set = extremal_equilibria(&op, &Reaction::zero(), None, 1e-10).unwrap();
        assert!(set.phi_m.amax() < 1e-8 && set.phi_big_m.amax() < 1e-8);

        let op = NonlocalOperator::with_h0_offset(k, 0.0).unwrap();
        let f = Reaction::polynomial(vec![1.0, -1.0]);
        let set = extremal_equilibria(&op, &f, None, 1e-10).unwrap();
        for u in [&set.phi_m, &set.phi_big_m, set.phi_m_plus.as_ref().unwrap()] {
            assert!(u.iter().all(|v| (v - 1.0).abs() < 1e-8));
        }
    }

    #[test]
    fn minimal_nonnegative_examples() {
        let n = 10;
        let k = constant_kernel(n);
        let op = NonlocalOperator::new(k.clone(), DVector::zeros(n)).unwrap();
        let r = minimal_nonnegative_equilibrium(&op, &logistic(n, 0.0), 1e-10).unwrap();
        assert_eq!(r.blocks, 0);
        assert_eq!(r.state, DVector::zeros(n));
        let f = Reaction::polynomial(vec![0.5, 0.0, -1.0]);
        let r = minimal_nonnegative_equilibrium(&op, &f, 1e-10).unwrap();
        let root = (1.0 + sqrt3()) / 2.0;
        assert!(r.state.iter().all(|v| (v - root).abs() < 1e-9));
        let op = NonlocalOperator::with_h0_offset(k, 0.0).unwrap();
        let r = minimal_nonnegative_equilibrium(&op, &Reaction::polynomial(vec![1.0, -1.0]), 1e-10).unwrap();
        assert!(r.state.iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert!(minimal_nonnegative_equilibrium(&op, &Reaction::polynomial(vec![-1.0, -1.0]), 1e-10).is_err());
    }

    #[test]
    fn minimal_positive_examples() {
        let n = 10;
        let k = constant_kernel(n);
        let op = NonlocalOperator::new(k.clone(), DVector::zeros(n)).unwrap();
        let m = DVector::from_element(n, 1.9);
        let r = minimal_positive_equilibrium(&op, &logistic(n, 0.0), &m, 0.3, 1e-10).unwrap().unwrap();
        assert!(r.limit.state.iter().all(|v| (v - sqrt3()).abs() < 1e-9));
        assert!(r.refinements_agree);

        let decay = Reaction::logistic(LogisticReaction::uniform(n, 0.0, -1.0, 1.0, 3.0).unwrap());
        let m = DVector::from_element(n, -1.1);
        assert!(minimal_positive_equilibrium(&op, &decay, &m, 0.3, 1e-10).unwrap().is_none());

        let op = NonlocalOperator::with_h0_offset(k, 0.0).unwrap();
        let f = Reaction::polynomial(vec![0.0, 1.0, -1.0]);
        let m = DVector::from_element(n, 0.9);
        let r = minimal_positive_equilibrium(&op, &f, &m, 0.1, 1e-10).unwrap().unwrap();
        assert!(r.limit.state.iter().all(|v| (v - 1.0).abs() < 1e-9));
        // f(s) >= 0.95 s fails beyond s = 0.05
        assert!(minimal_positive_equilibrium(&op, &f, &DVector::from_element(n, 0.95), 0.1, 1e-10).is_err());
    }

    #[test]
    fn piecewise_examples() {
        let roots = piecewise_roots(1.0, 4.0, 0.0).unwrap();
        let h = sqrt3() / 2.0;
        assert!((roots[0] + h).abs() < 1e-15 && roots[1].abs() < 1e-15 && (roots[2] - h).abs() < 1e-15);
        let space = interval(20);
        for counts in [[8, 4, 8], [5, 10, 5]] {
            for seed in 0..3 {
                let a = random_assignment(counts, seed);
                let p = piecewise_constant_family(space.clone(), 4.0, 0.0, &a).unwrap();
                assert!(p.residual <= 1e-12);
                assert!((p.measures.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        let bad = random_assignment([10, 4, 6], 0);
        assert!(piecewise_constant_family(space.clone(), 4.0, 0.0, &bad).is_err());
        assert!(piecewise_roots(1.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn uniqueness_logistic() {
        let n = 12;
        let op = NonlocalOperator::new(constant_kernel(n), DVector::zeros(n)).unwrap();
        let trials: Vec<_> = [0.1, 1.0, 5.0, 0.0].iter().map(|&c| DVector::from_element(n, c)).collect();
        let r = uniqueness_experiment(&op, &logistic(n, 0.0), &trials, 30.0, 1e-4).unwrap();
        assert!(r.hypothesis_met && r.all_agree);
        assert!(r.trials[3].trivial && r.trials[3].distance > 1.0);
    }
}
