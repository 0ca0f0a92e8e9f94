//! Seeded property suites for the comparison, maximum-principle,
//! supersolution and asymptotic-envelope properties.
//!
//! Systems are drawn by [`SystemSampler`]; trial `i` of a run with seed `s`
//! uses ChaCha stream `i` of seed `s`, so any failure reproduces from
//! `(s, i)` alone.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::equilibria::{envelope_bounds, EnvelopeBounds};
use crate::error::{Error, Result};
use crate::evolve::{self, euler_op_step, supersolution_ode, IntegratorConfig, Scheme};
use crate::kernel::{Kernel, KernelLaw, NonlocalOperator};
use crate::linalg::{expm, norm_inf};
use crate::reaction::{self, BoundStrategy, LogisticReaction, Reaction};
use crate::space::{MeasureSpace, QuadratureRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Comparison,
    MaximumPrinciple,
    Supersolution,
    Asymptotic,
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Comparison => "comparison",
            Suite::MaximumPrinciple => "maximum_principle",
            Suite::Supersolution => "supersolution",
            Suite::Asymptotic => "asymptotic",
        })
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "comparison" => Ok(Suite::Comparison),
            "maximum_principle" | "maximum" | "max" => Ok(Suite::MaximumPrinciple),
            "supersolution" => Ok(Suite::Supersolution),
            "asymptotic" => Ok(Suite::Asymptotic),
            other => Err(Error::invalid(format!("unknown suite `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureDetail {
    pub trial: usize,
    pub system: String,
    pub check: String,
    pub time: f64,
    pub node: usize,
    pub violation: f64,
}

/// A hypothesis-violating run that the check must flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlOutcome {
    pub name: String,
    pub detected: bool,
    pub violation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: Suite,
    pub trials: usize,
    pub failures: usize,
    pub worst_violation: f64,
    pub seed: u64,
    pub tolerance: f64,
    pub details: Vec<FailureDetail>,
    pub controls: Vec<ControlOutcome>,
    pub notes: serde_json::Value,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.controls.iter().all(|c| c.detected)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReactionFamily {
    Sigmoid,
    Logistic,
    Cubic,
}

/// A randomly drawn system.
#[derive(Debug, Clone)]
pub struct SampledSystem {
    pub index: usize,
    pub op: NonlocalOperator,
    pub f: Reaction,
    pub family: ReactionFamily,
    pub description: String,
    /// Positivity radius when the kernel is certified positive on it and the
    /// space is connected at that radius.
    pub strong_radius: Option<f64>,
}

/// Random systems on `[0, 1]`: sizes from `sizes`; constant, tophat or gaussian
/// kernels; `h` a smooth plus step mixture; sigmoid, logistic or cubic reactions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSampler {
    pub sizes: Vec<usize>,
    /// Draw only reactions with `f(x, 0) ≥ 0`.
    pub nonnegative_source: bool,
}

impl Default for SystemSampler {
    fn default() -> Self {
        Self { sizes: vec![32, 64, 128], nonnegative_source: false }
    }
}

pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl SystemSampler {
    pub fn with_sizes(mut self, sizes: Vec<usize>) -> Self {
        self.sizes = sizes;
        self
    }

    pub fn nonnegative(mut self) -> Self {
        self.nonnegative_source = true;
        self
    }

    pub fn sample(&self, seed: u64, index: usize) -> Result<SampledSystem> {
        self.sample_stream(seed, index, index as u64)
    }

    fn sample_stream(&self, seed: u64, index: usize, stream: u64) -> Result<SampledSystem> {
        if self.sizes.is_empty() {
            return Err(Error::invalid("sampler needs at least one size"));
        }
        let mut rng = trial_rng(seed, stream);
        let n = self.sizes[rng.gen_range(0..self.sizes.len())];
        let space = Arc::new(MeasureSpace::interval(0.0, 1.0, n, QuadratureRule::Midpoint)?);
        let law = match rng.gen_range(0..3) {
            0 => KernelLaw::Constant { c: rng.gen_range(0.5..2.0) },
            1 => KernelLaw::Tophat { radius: rng.gen_range(0.15..0.4), height: rng.gen_range(0.5..3.0) },
            _ => KernelLaw::Gaussian { sigma: rng.gen_range(0.08..0.3), scale: rng.gen_range(0.5..3.0) },
        };
        let kernel = Kernel::assemble(space.clone(), &law)?;

        let (a0, a1, a2) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..0.5), rng.gen_range(0.0..1.0));
        let (freq, phase, x0) = (rng.gen_range(1..4) as f64, rng.gen_range(0.0..6.3), rng.gen_range(0.2..0.8));
        let h = DVector::from_fn(n, |i, _| {
            let x = space.position(i);
            a0 + a1 * (2.0 * std::f64::consts::PI * freq * x + phase).sin() + if x > x0 { a2 } else { 0.0 }
        });
        let op = NonlocalOperator::new(kernel.clone(), h)?;

        let g_scale = rng.gen_range(0.0..0.5);
        let g_shift = if self.nonnegative_source { 0.0 } else { rng.gen_range(-0.5..0.0) };
        let g_phase = rng.gen_range(0.0..6.3);
        let g = DVector::from_fn(n, |i, _| {
            let x = space.position(i);
            g_shift + g_scale * (1.0 + (3.0 * x + g_phase).sin()) * 0.5
        });
        let (family, f) = match rng.gen_range(0..3) {
            0 => {
                let a: f64 = rng.gen_range(0.2..2.0);
                let tanh = Reaction::custom(
                    "sigmoid",
                    Arc::new(move |_, s: f64| a * s.tanh()),
                    Some(Arc::new(move |_, s: f64| a / s.cosh().powi(2))),
                    Some(a),
                );
                (ReactionFamily::Sigmoid, tanh.with_source(g)?)
            }
            1 => {
                let nn = rng.gen_range(-1.0..2.0);
                let m = rng.gen_range(0.5..2.0);
                let rho = if rng.gen_bool(0.5) { 2.0 } else { 3.0 };
                let l = LogisticReaction::new(g, DVector::from_element(n, nn), DVector::from_element(n, m), rho)?;
                (ReactionFamily::Logistic, Reaction::logistic(l))
            }
            _ => {
                // λ s (1 - s²) written in logistic form with ρ = 3
                let lam = rng.gen_range(0.5..4.0);
                let l = LogisticReaction::new(g, DVector::from_element(n, lam), DVector::from_element(n, lam), 3.0)?;
                (ReactionFamily::Cubic, Reaction::logistic(l))
            }
        };
        let strong_radius = kernel
            .positivity()
            .filter(|_| kernel.positivity_holds())
            .and_then(|c| space.is_r_connected(c.radius).ok().filter(|cc| cc.connected).map(|_| c.radius));
        let description = format!("n={n} kernel={law:?} family={family:?} (seed {seed}, stream {stream})");
        Ok(SampledSystem { index, op, f, family, description, strong_radius })
    }

    /// First draw (over retry streams) whose reaction admits a decaying envelope.
    pub fn sample_with_envelope(&self, seed: u64, index: usize) -> Result<(SampledSystem, EnvelopeBounds)> {
        for attempt in 0..64u64 {
            let stream = index as u64 + attempt * (1 << 32);
            let sys = self.sample_stream(seed, index, stream)?;
            if let Ok(env) = envelope_bounds(&sys.op, &sys.f) {
                return Ok((sys, env));
            }
        }
        Err(Error::invalid("sampler found no system with a decaying envelope"))
    }
}

/// Euler-op run with an explicit truncation level and shift; stores every step.
struct EulerRun {
    states: Vec<DVector<f64>>,
    dt: f64,
}

fn monotone_setup(op: &NonlocalOperator, fs: &[&Reaction], level: f64) -> Result<(Vec<Reaction>, f64, f64)> {
    let n = op.len();
    let truncated: Vec<Reaction> = fs.iter().map(|f| f.truncate(level)).collect::<Result<_>>()?;
    let beta = truncated.iter().map(|f| f.monotone_shift(n, level)).fold(1.0, f64::max);
    let dt = (1.0 / (op.h().max() + beta)).min(0.01);
    Ok((truncated, beta, dt))
}

fn euler_run(op: &NonlocalOperator, f: &Reaction, beta: f64, dt: f64, u0: &DVector<f64>, steps: usize) -> EulerRun {
    let mut states = Vec::with_capacity(steps + 1);
    states.push(u0.clone());
    for m in 0..steps {
        let next = euler_op_step(op, f, beta, dt, &states[m]);
        states.push(next);
    }
    EulerRun { states, dt }
}

fn random_state(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-amp..amp))
}

/// Nonnegative profile supported on a random subinterval (at least one node).
fn random_bump(rng: &mut ChaCha8Rng, space: &MeasureSpace, amp: f64) -> DVector<f64> {
    let n = space.len();
    let len = rng.gen_range(0.1..0.5);
    let start = rng.gen_range(0.0..1.0 - len);
    let center = rng.gen_range(0..n);
    DVector::from_fn(n, |i, _| {
        let x = space.position(i);
        if (x >= start && x <= start + len) || i == center {
            amp * rng.gen_range(0.1..1.0)
        } else {
            0.0
        }
    })
}

#[derive(Default)]
struct TrialResult {
    details: Vec<FailureDetail>,
    worst: f64,
    strong_checked: bool,
    min_gap: Option<f64>,
    unresolved: usize,
    fitted_m: Option<f64>,
}

impl TrialResult {
    fn record(&mut self, sys: &SampledSystem, check: &str, time: f64, node: usize, violation: f64, tol: f64) {
        self.worst = self.worst.max(violation);
        if violation > tol {
            self.details.push(FailureDetail {
                trial: sys.index,
                system: sys.description.clone(),
                check: check.into(),
                time,
                node,
                violation,
            });
        }
    }
}

const EXACT_TOL: f64 = 1e-12;
const RK4_TOL: f64 = 1e-8;
const ORDER_HORIZON: f64 = 0.5;

/// Steps after which node `i` is reached: data sources act at step 0, source
/// terms of the reaction from step 1.
fn hop_counts(sys: &SampledSystem, data: &DVector<f64>, source: &DVector<f64>) -> Option<Vec<usize>> {
    let r = sys.strong_radius?;
    let space = sys.op.space();
    let from = |v: &DVector<f64>| {
        let idx: Vec<usize> = (0..v.len()).filter(|&i| v[i] > 0.0).collect();
        space.hop_distances(&idx, r)
    };
    let (a, b) = (from(data), from(source));
    a.into_iter()
        .zip(b)
        .map(|(x, y)| match (x, y.map(|y| y + 1)) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        })
        .collect()
}

fn comparison_trial(sampler: &SystemSampler, seed: u64, index: usize) -> Result<TrialResult> {
    let sys = sampler.sample(seed, index)?;
    let n = sys.op.len();
    let mut rng = trial_rng(seed ^ 0x9e37_79b9_7f4a_7c15, index as u64);
    let space = sys.op.space().clone();
    let lower = random_state(&mut rng, n, 1.5);
    let gap = random_bump(&mut rng, &space, 1.0);
    let bump = if rng.gen_bool(0.5) { random_bump(&mut rng, &space, 0.5) } else { DVector::zeros(n) };
    let upper = &lower + &gap;
    let f1 = sys.f.clone();
    let f0 = f1.with_source(bump.clone())?;

    let level = [&f0, &f1]
        .iter()
        .map(|f| evolve::truncation_level(&sys.op, f, &upper.abs().sup(&lower.abs()), ORDER_HORIZON))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .map(|t| t.map_or(10.0 * (1.0 + upper.amax().max(lower.amax())), |t| t.level))
        .fold(0.0, f64::max);
    let (fs, beta, dt) = monotone_setup(&sys.op, &[&f0, &f1], level)?;
    let steps = (ORDER_HORIZON / dt).ceil() as usize;
    let hi = euler_run(&sys.op, &fs[0], beta, dt, &upper, steps);
    let lo = euler_run(&sys.op, &fs[1], beta, dt, &lower, steps);

    let mut res = TrialResult::default();
    for (m, (u, v)) in hi.states.iter().zip(&lo.states).enumerate() {
        let t = m as f64 * hi.dt;
        for i in 0..n {
            let scale = 1.0 + u[i].abs().max(v[i].abs());
            res.record(&sys, "weak", t, i, (v[i] - u[i]) / scale, EXACT_TOL);
        }
    }

    // strict/strong: compare against the exactly computed lower bound ŵ of the gap,
    // ŵ' = (1 - dt(h + β - ½)) ŵ + dt K ŵ + dt·bump, valid because f + βs has slope ≥ 1
    if let Some(hops) = hop_counts(&sys, &gap, &bump) {
        res.strong_checked = true;
        let h = sys.op.h();
        let mut w = gap.clone();
        let mut min_gap = f64::INFINITY;
        for m in 0..=steps {
            let (u, v) = (&hi.states[m], &lo.states[m]);
            let t = m as f64 * dt;
            for i in 0..n {
                if m < hops[i] {
                    continue;
                }
                if !(w[i] > 0.0) {
                    res.record(&sys, "spreading", t, i, 1.0, 0.0);
                    continue;
                }
                let scale = 1.0 + u[i].abs().max(v[i].abs());
                let d = u[i] - v[i];
                if w[i] > 1e-10 * scale {
                    min_gap = min_gap.min(d);
                    if !(d > 0.0) {
                        res.record(&sys, "strict", t, i, 1.0 - d / w[i], 0.0);
                    }
                    res.record(&sys, "gap_bound", t, i, (w[i] - d) / scale, EXACT_TOL);
                } else {
                    res.unresolved += 1;
                }
            }
            let kw = sys.op.kw() * &w;
            w = DVector::from_fn(n, |i, _| (1.0 - dt * (h[i] + beta - 0.5)) * w[i] + dt * kw[i] + dt * bump[i]);
        }
        res.min_gap = Some(min_gap);
    }
    Ok(res)
}

fn maximum_trial(sampler: &SystemSampler, seed: u64, index: usize) -> Result<TrialResult> {
    let sys = sampler.sample(seed, index)?;
    let n = sys.op.len();
    let mut rng = trial_rng(seed ^ 0x51_7cc1_b727_220a, index as u64);
    let u0 = if rng.gen_bool(0.5) {
        let mut e = DVector::zeros(n);
        e[rng.gen_range(0..n)] = rng.gen_range(0.1..2.0);
        e
    } else {
        random_bump(&mut rng, sys.op.space(), 2.0)
    };
    let level = evolve::truncation_level(&sys.op, &sys.f, &u0, ORDER_HORIZON)?
        .map_or(10.0 * (1.0 + u0.amax()), |t| t.level);
    let (fs, beta, dt) = monotone_setup(&sys.op, &[&sys.f], level)?;
    let steps = (ORDER_HORIZON / dt).ceil() as usize;
    let run = euler_run(&sys.op, &fs[0], beta, dt, &u0, steps);
    let mut res = TrialResult::default();
    for (m, u) in run.states.iter().enumerate() {
        for i in 0..n {
            res.record(&sys, "weak", m as f64 * dt, i, -u[i], EXACT_TOL);
        }
    }
    let g0 = sys.f.g0(n);
    if let Some(hops) = hop_counts(&sys, &u0, &g0) {
        res.strong_checked = true;
        let mut min_val = f64::INFINITY;
        for (m, u) in run.states.iter().enumerate() {
            for i in (0..n).filter(|&i| m >= hops[i]) {
                min_val = min_val.min(u[i]);
                if !(u[i] > 0.0) {
                    res.record(&sys, "strong", m as f64 * dt, i, 1.0, 0.0);
                }
            }
        }
        res.min_gap = Some(min_val);
    }
    Ok(res)
}

fn supersolution_trial(sampler: &SystemSampler, seed: u64, index: usize) -> Result<TrialResult> {
    let sys = sampler.sample(seed, index)?;
    let n = sys.op.len();
    let mut rng = trial_rng(seed ^ 0x2545_f491_4f6c_dd1d, index as u64);
    let amp = rng.gen_range(0.1..3.0);
    let u0 = random_state(&mut rng, n, amp);
    let bounds = reaction::structure_bounds(&sys.f, n, &BoundStrategy::Plain)?;
    let drift = sys.op.h0() - sys.op.h();
    let c = (&bounds.c + drift).max();
    let d = bounds.d.max();
    let t_end = 1.0;
    let z = supersolution_ode(c, d, u0.amax(), t_end)?;
    let (fs, beta, dt) = monotone_setup(&sys.op, &[&sys.f], z.level * 1.01 + 1e-9)?;
    let steps = (t_end / dt).ceil() as usize;
    let run = euler_run(&sys.op, &fs[0], beta, dt, &u0, steps);
    let mut res = TrialResult::default();
    for (m, u) in run.states.iter().enumerate() {
        let t = m as f64 * dt;
        let zt = z.z(t.min(t_end));
        let (node, top) = u.iter().enumerate().fold((0, 0.0), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        res.record(&sys, "dominance", t, node, (top - zt) / (1.0 + zt.abs()), EXACT_TOL);
    }
    Ok(res)
}

fn asymptotic_trial(sampler: &SystemSampler, seed: u64, index: usize) -> Result<TrialResult> {
    let (sys, env) = sampler.sample_with_envelope(seed, index)?;
    let n = sys.op.len();
    let op = &sys.op;
    let phi = env.phi(op.kernel())?;
    let mut rng = trial_rng(seed ^ 0x94d0_49bb_1331_11eb, index as u64);
    let mut res = TrialResult::default();

    // (a) invariance of [-Φ, Φ] under the order-preserving scheme
    let inside = DVector::from_fn(n, |i, _| phi[i] * rng.gen_range(-1.0..1.0));
    let level = 2.0 * (phi.amax() + 1.0);
    let (fs, beta, dt) = monotone_setup(op, &[&sys.f], level)?;
    let steps = (2.0 / dt).ceil() as usize;
    let run = euler_run(op, &fs[0], beta, dt, &inside, steps);
    for (m, u) in run.states.iter().enumerate() {
        for i in 0..n {
            res.record(&sys, "invariance", m as f64 * dt, i, u[i].abs() - phi[i], RK4_TOL);
        }
    }

    // (b) envelope U(t) along an rk4 run from generic data
    let amp = rng.gen_range(1.0..3.0);
    let u0 = DVector::from_fn(n, |i, _| (phi[i] + 0.2) * amp * rng.gen_range(-1.0..1.0));
    let t_end = 2.0;
    let reach = u0.amax().max(phi.amax()) + 1.0;
    let stiff = norm_inf(op.amat()) + sys.f.lip_on(n, reach);
    let records = 100;
    let dt = (t_end / records as f64).min(0.02 / stiff);
    let per_record = ((t_end / records as f64) / dt).ceil() as usize;
    let dt = t_end / (records * per_record) as f64;
    let cfg = IntegratorConfig::new(Scheme::Rk4, dt, t_end)?.with_record_every(per_record);
    let tr = evolve::evolve_nonlinear(op, &sys.f, &u0, &cfg)?;
    let op_c = NonlocalOperator::k_plus(op.kernel(), &env.coef)?;
    let step = expm(&(op_c.amat() * (t_end / records as f64)))?;
    let mut excess0 = u0.abs() - &phi;
    let rate = env.lambda.abs() / 2.0;
    let mut fitted: f64 = 0.0;
    for (k, (t, u)) in tr.times.iter().zip(&tr.states).enumerate() {
        if k > 0 {
            excess0 = &step * excess0;
        }
        let envelope = &phi + &excess0;
        for i in 0..n {
            res.record(&sys, "envelope", *t, i, u[i].abs() - envelope[i], RK4_TOL);
        }
        let over = (u.abs() - &phi).map(|v| v.max(0.0)).amax();
        fitted = fitted.max(over * (rate * t).exp());
    }
    res.fitted_m = Some(fitted);
    Ok(res)
}

fn comparison_control(seed: u64) -> Result<ControlOutcome> {
    // reversed reaction ordering: f0 = f1 - 1 with equal data must break u ≥ v
    let sampler = SystemSampler::default().with_sizes(vec![32]);
    let sys = sampler.sample(seed, usize::MAX >> 1)?;
    let n = sys.op.len();
    let u0 = DVector::from_element(n, 0.5);
    let f0 = sys.f.with_source(DVector::from_element(n, -1.0))?;
    let (fs, beta, dt) = monotone_setup(&sys.op, &[&f0, &sys.f], 20.0)?;
    let steps = (ORDER_HORIZON / dt).ceil() as usize;
    let a = euler_run(&sys.op, &fs[0], beta, dt, &u0, steps);
    let b = euler_run(&sys.op, &fs[1], beta, dt, &u0, steps);
    let worst = a.states.iter().zip(&b.states).map(|(u, v)| (v - u).max()).fold(0.0, f64::max);
    Ok(ControlOutcome { name: "reversed_reaction_order".into(), detected: worst > EXACT_TOL, violation: worst })
}

fn maximum_control(seed: u64) -> Result<ControlOutcome> {
    // f(x, 0) = -1 violates the hypothesis and must produce negative values
    let sampler = SystemSampler::default().with_sizes(vec![32]).nonnegative();
    let sys = sampler.sample(seed, usize::MAX >> 1)?;
    let n = sys.op.len();
    let f = sys.f.with_source(DVector::from_element(n, -1.0))?;
    let (fs, beta, dt) = monotone_setup(&sys.op, &[&f], 20.0)?;
    let run = euler_run(&sys.op, &fs[0], beta, dt, &DVector::zeros(n), (ORDER_HORIZON / dt).ceil() as usize);
    let worst = run.states.iter().map(|u| -u.min()).fold(0.0, f64::max);
    Ok(ControlOutcome { name: "negative_source".into(), detected: worst > EXACT_TOL, violation: worst })
}

fn supersolution_control(seed: u64) -> Result<ControlOutcome> {
    // a supersolution built from an understated growth rate must be overtaken
    let sampler = SystemSampler::default().with_sizes(vec![32]);
    let sys = sampler.sample(seed, usize::MAX >> 1)?;
    let n = sys.op.len();
    let f = Reaction::affine(DVector::from_element(n, 1.0), DVector::from_element(n, 2.0))?;
    let drift = sys.op.h0() - sys.op.h();
    let c = drift.max() + 2.0 - 1.0;
    let z = supersolution_ode(c, 0.0, 1.0, 1.0)?;
    let (fs, beta, dt) = monotone_setup(&sys.op, &[&f], 1e3)?;
    let u0 = DVector::from_element(n, 1.0);
    let run = euler_run(&sys.op, &fs[0], beta, dt, &u0, (1.0 / dt).ceil() as usize);
    let worst = run
        .states
        .iter()
        .enumerate()
        .map(|(m, u)| u.amax() - z.z((m as f64 * dt).min(1.0)))
        .fold(0.0, f64::max);
    Ok(ControlOutcome { name: "understated_growth".into(), detected: worst > EXACT_TOL, violation: worst })
}

fn asymptotic_control(seed: u64) -> Result<ControlOutcome> {
    // data outside [-Φ, Φ] must leave the invariance check violated at t = 0
    let sampler = SystemSampler::default().with_sizes(vec![32]);
    let (sys, env) = sampler.sample_with_envelope(seed, usize::MAX >> 1)?;
    let phi = env.phi(sys.op.kernel())?;
    let u0 = &phi * 2.0 + DVector::from_element(phi.len(), 0.1);
    let worst = (u0.abs() - &phi).max();
    Ok(ControlOutcome { name: "data_outside_envelope".into(), detected: worst > RK4_TOL, violation: worst })
}

/// Run `trials` seeded trials of a suite; trials execute concurrently and are
/// merged by index.
pub fn run_suite(suite: Suite, sampler: &SystemSampler, trials: usize, seed: u64) -> Result<PropertyReport> {
    let sampler = match suite {
        Suite::MaximumPrinciple => sampler.clone().nonnegative(),
        _ => sampler.clone(),
    };
    let trial = |i: usize| -> Result<TrialResult> {
        match suite {
            Suite::Comparison => comparison_trial(&sampler, seed, i),
            Suite::MaximumPrinciple => maximum_trial(&sampler, seed, i),
            Suite::Supersolution => supersolution_trial(&sampler, seed, i),
            Suite::Asymptotic => asymptotic_trial(&sampler, seed, i),
        }
    };
    let results: Vec<TrialResult> = (0..trials).into_par_iter().map(trial).collect::<Result<_>>()?;
    let control = match suite {
        Suite::Comparison => comparison_control(seed)?,
        Suite::MaximumPrinciple => maximum_control(seed)?,
        Suite::Supersolution => supersolution_control(seed)?,
        Suite::Asymptotic => asymptotic_control(seed)?,
    };
    let tolerance = match suite {
        Suite::Asymptotic => RK4_TOL,
        _ => EXACT_TOL,
    };
    let strong: Vec<f64> = results.iter().filter_map(|r| r.min_gap).collect();
    let notes = json!({
        "sampler": sampler,
        "strong_checked": results.iter().filter(|r| r.strong_checked).count(),
        "strong_min_gap": strong.iter().copied().fold(f64::INFINITY, f64::min).min(f64::MAX),
        "unresolved_gap_checks": results.iter().map(|r| r.unresolved).sum::<usize>(),
        "fitted_decay_m": results.iter().filter_map(|r| r.fitted_m).fold(0.0, f64::max),
    });
    let details: Vec<FailureDetail> = results.iter().flat_map(|r| r.details.iter().cloned()).collect();
    let failing_trials = results.iter().filter(|r| !r.details.is_empty()).count();
    Ok(PropertyReport {
        property: suite,
        trials,
        failures: failing_trials,
        worst_violation: results.iter().map(|r| r.worst).fold(0.0, f64::max),
        seed,
        tolerance,
        details,
        controls: vec![control],
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_system(n: usize, h: f64) -> SampledSystem {
        let space = Arc::new(MeasureSpace::interval(0.0, 1.0, n, QuadratureRule::Midpoint).unwrap());
        let k = Kernel::assemble(space, &KernelLaw::Constant { c: 1.0 }).unwrap();
        SampledSystem {
            index: 0,
            op: NonlocalOperator::new(k, DVector::from_element(n, h)).unwrap(),
            f: Reaction::zero(),
            family: ReactionFamily::Sigmoid,
            description: "constant".into(),
            strong_radius: Some(3.0),
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let s = SystemSampler::default();
        let a = s.sample(7, 3).unwrap();
        let b = s.sample(7, 3).unwrap();
        assert_eq!(a.description, b.description);
        assert_eq!(a.op.amat(), b.op.amat());
        let c = s.sample(8, 3).unwrap();
        assert!(a.op.len() != c.op.len() || a.op.amat() != c.op.amat());
    }

    #[test]
    fn linear_gap_of_constants() {
        // u0 ≡ 1 vs u1 ≡ 0 with f ≡ 0: the gap is the scalar flow e^{Λt}
        let sys = constant_system(16, 0.5);
        let n = 16;
        let (fs, beta, dt) = monotone_setup(&sys.op, &[&sys.f], 10.0).unwrap();
        let up = euler_run(&sys.op, &fs[0], beta, dt, &DVector::from_element(n, 1.0), 100);
        let lo = euler_run(&sys.op, &fs[0], beta, dt, &DVector::zeros(n), 100);
        for (m, (u, v)) in up.states.iter().zip(&lo.states).enumerate() {
            let t = m as f64 * dt;
            assert!(v.iter().all(|&x| x == 0.0));
            // Euler of ġ = 0.5 g
            let expected = (1.0 + 0.5 * dt).powi(m as i32);
            assert!(u.iter().all(|x| (x - expected).abs() < 1e-12 * expected), "t={t}");
            assert!((expected - (0.5 * t).exp()).abs() < 0.01 * expected);
        }
        let same = euler_run(&sys.op, &fs[0], beta, dt, &DVector::from_element(n, 1.0), 100);
        assert!(same.states.iter().zip(&up.states).all(|(a, b)| a == b));
    }

    #[test]
    fn zero_stays_zero() {
        let sys = constant_system(8, 1.0);
        let f = Reaction::polynomial(vec![0.0, 1.0, 0.0, -1.0]);
        let (fs, beta, dt) = monotone_setup(&sys.op, &[&f], 4.0).unwrap();
        let run = euler_run(&sys.op, &fs[0], beta, dt, &DVector::zeros(8), 200);
        assert!(run.states.iter().all(|u| u.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn single_bump_spreads_along_hops() {
        let space = Arc::new(MeasureSpace::interval(0.0, 1.0, 40, QuadratureRule::Midpoint).unwrap());
        let k = Kernel::assemble(space.clone(), &KernelLaw::Tophat { radius: 0.2, height: 1.0 }).unwrap();
        let op = NonlocalOperator::new(k, DVector::from_element(40, 0.3)).unwrap();
        let f = Reaction::zero();
        let mut u0 = DVector::zeros(40);
        u0[0] = 1.0;
        let (fs, beta, dt) = monotone_setup(&op, &[&f], 4.0).unwrap();
        let run = euler_run(&op, &fs[0], beta, dt, &u0, 20);
        let hops = space.hop_distances(&[0], 0.2);
        for (m, u) in run.states.iter().enumerate() {
            for i in 0..40 {
                let reached = hops[i].unwrap() <= m;
                assert_eq!(u[i] > 0.0, reached, "m={m} i={i}");
            }
        }
    }

    #[test]
    fn supersolution_with_equality() {
        // f(u) = C u + D, h = h0, constant data: z is the exact solution
        let n = 8;
        let space = Arc::new(MeasureSpace::interval(0.0, 1.0, n, QuadratureRule::Midpoint).unwrap());
        let k = Kernel::assemble(space, &KernelLaw::Constant { c: 1.0 }).unwrap();
        let op = NonlocalOperator::with_h0_offset(k, 0.0).unwrap();
        let f = Reaction::affine(DVector::from_element(n, 0.4), DVector::from_element(n, -0.7)).unwrap();
        let z = supersolution_ode(-0.7, 0.4, 2.0, 1.0).unwrap();
        let cfg = IntegratorConfig::new(Scheme::Rk4, 1e-3, 1.0).unwrap();
        let tr = evolve::evolve_nonlinear(&op, &f, &DVector::from_element(n, 2.0), &cfg).unwrap();
        for (t, u) in tr.times.iter().zip(&tr.states) {
            assert!(u.iter().all(|v| (v - z.z(*t)).abs() < 1e-12));
        }
    }

    #[test]
    fn suites_pass_on_small_runs() {
        let sampler = SystemSampler::default().with_sizes(vec![32]);
        for suite in [Suite::Comparison, Suite::MaximumPrinciple, Suite::Supersolution, Suite::Asymptotic] {
            let r = run_suite(suite, &sampler, 6, 11).unwrap();
            assert!(r.passed(), "{suite}: {}", r.to_json());
            let again = run_suite(suite, &sampler, 6, 11).unwrap();
            assert_eq!(r.worst_violation, again.worst_violation);
        }
    }
}
