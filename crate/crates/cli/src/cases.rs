//! Bundled case studies. Each case accepts `key=value` overrides for the
//! parameters listed in its table.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DVector;
use nonlocal_core::equilibria::{
    self, bistable_cubic, extremal_equilibria, piecewise_constant_family, stationary_residual, uniqueness_experiment,
};
use nonlocal_core::evolve::{self, evolve_nonlinear, kaplan_witness, IntegratorConfig, Scheme};
use nonlocal_core::reaction::{LogisticReaction, Reaction};
use nonlocal_core::spectral::{self, Method};
use nonlocal_core::{Kernel, KernelLaw, MeasureSpace, NonlocalOperator, QuadratureRule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::output::{envelope, OutputDir};

pub const CASES: [&str; 5] = ["logistic-sub", "logistic-super", "bistable", "blowup", "shift"];

fn defaults(case: &str) -> Option<&'static [(&'static str, f64)]> {
    Some(match case {
        "logistic-sub" => &[("nodes", 64.0), ("n", -0.5), ("m", 1.0), ("rho", 3.0), ("g", 0.2), ("trials", 8.0), ("t_end", 40.0)],
        "logistic-super" => &[("nodes", 64.0), ("n", 2.0), ("m", 1.0), ("rho", 3.0), ("trials", 8.0), ("t_end", 30.0)],
        "bistable" => &[("nodes", 40.0), ("lambda", 4.0), ("a_level", 0.0)],
        "blowup" => &[("nodes", 32.0), ("u0", 10.0), ("rho", 3.0), ("dt", 1e-6), ("t_end", 0.1)],
        "shift" => &[("nodes", 512.0)],
        _ => return None,
    })
}

/// Case parameters: defaults merged with `key=value` overrides.
#[derive(Debug, Clone)]
pub struct Params(BTreeMap<String, f64>);

impl Params {
    pub fn new(case: &str, overrides: &[String]) -> Result<Self, CliError> {
        let table = defaults(case)
            .ok_or_else(|| CliError::Config(format!("unknown case `{case}` (known: {})", CASES.join(", "))))?;
        let mut map: BTreeMap<String, f64> = table.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set {o}: expected key=value")))?;
            let k = k.trim();
            if !map.contains_key(k) {
                let known: Vec<&str> = map.keys().map(String::as_str).collect();
                return Err(CliError::Config(format!("--set {k}: not a parameter of `{case}` (known: {})", known.join(", "))));
            }
            let v: f64 = v.trim().parse().map_err(|_| CliError::Config(format!("--set {k}: `{v}` is not a number")))?;
            map.insert(k.to_string(), v);
        }
        let p = Self(map);
        if p.get("nodes") < 1.0 || p.get("nodes").fract() != 0.0 {
            return Err(CliError::Config("--set nodes: must be a positive integer".into()));
        }
        Ok(p)
    }

    fn get(&self, k: &str) -> f64 {
        self.0[k]
    }

    fn count(&self, k: &str) -> usize {
        self.get(k).max(0.0) as usize
    }

    pub fn as_json(&self) -> Value {
        json!(self.0)
    }
}

fn unit_interval(n: usize) -> Result<Arc<MeasureSpace>, CliError> {
    Ok(Arc::new(MeasureSpace::interval(0.0, 1.0, n, QuadratureRule::Midpoint)?))
}

fn constant_kernel(n: usize) -> Result<Kernel, CliError> {
    Ok(Kernel::assemble(unit_interval(n)?, &KernelLaw::Constant { c: 1.0 })?)
}

pub fn run(case: &str, params: &Params, seed: u64, out: &OutputDir) -> Result<Value, CliError> {
    let body = match case {
        "logistic-sub" => logistic_sub(params, seed, out)?,
        "logistic-super" => logistic_super(params, seed, out)?,
        "bistable" => bistable(params, out)?,
        "blowup" => blowup(params, out)?,
        "shift" => shift(params, out)?,
        other => return Err(CliError::Config(format!("unknown case `{other}`"))),
    };
    let env = envelope(&format!("case {case}"), seed, json!({ "params": params.as_json(), "outcome": body }))?;
    out.json(&format!("case_{}.json", case.replace('-', "_")), &env)?;
    Ok(env)
}

fn random_trials(n: usize, count: usize, amp: f64, nonnegative: bool, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = if nonnegative { 0.0 } else { -amp };
    (0..count).map(|_| DVector::from_fn(n, |_, _| rng.gen_range(lo..=amp))).collect()
}

/// `Λ(n) < 0`: every trajectory ends up between the extremal equilibria.
fn logistic_sub(p: &Params, seed: u64, out: &OutputDir) -> Result<Value, CliError> {
    let n = p.count("nodes");
    let kernel = constant_kernel(n)?;
    let space = kernel.space().clone();
    let op = NonlocalOperator::with_h0_offset(kernel.clone(), 0.0)?;
    let g = DVector::from_fn(n, |i, _| p.get("g") * (2.0 * std::f64::consts::PI * space.position(i)).cos());
    let l = LogisticReaction::new(
        g,
        DVector::from_element(n, p.get("n")),
        DVector::from_element(n, p.get("m")),
        p.get("rho"),
    )?;
    let f = Reaction::logistic(l);
    let lambda_n = spectral::lambda_k_plus(&kernel, &(DVector::from_element(n, p.get("n")) - op.h()), Method::Auto)?;
    let set = extremal_equilibria(&op, &f, None, 1e-10)?;
    let t_end = p.get("t_end");
    let cfg = IntegratorConfig::new(Scheme::Rk4, 0.01, t_end)?.with_record_every(usize::MAX);
    let mut trials = vec![];
    for u0 in random_trials(n, p.count("trials"), 3.0, false, seed) {
        let tr = evolve_nonlinear(&op, &f, &u0, &cfg)?;
        let u = tr.last();
        let outside = (u - &set.phi_big_m).max().max((&set.phi_m - u).max()).max(0.0);
        trials.push(json!({ "initial_sup": u0.amax(), "outside_sandwich": outside, "distance_to_phi_max": evolve::sup_distance(u, &set.phi_big_m) }));
    }
    out.profile("logistic_sub_phi_min.csv", &space, &set.phi_m)?;
    out.profile("logistic_sub_phi_max.csv", &space, &set.phi_big_m)?;
    Ok(json!({
        "lambda_n": lambda_n,
        "equilibrium_gap": (&set.phi_big_m - &set.phi_m).amax(),
        "residuals": set.residuals,
        "trials": trials,
    }))
}

/// `Λ(n) > 0`, `m > 0`: convergence to the unique positive equilibrium.
fn logistic_super(p: &Params, seed: u64, out: &OutputDir) -> Result<Value, CliError> {
    let n = p.count("nodes");
    let kernel = constant_kernel(n)?;
    let space = kernel.space().clone();
    let op = NonlocalOperator::new(kernel.clone(), DVector::zeros(n))?;
    let l = LogisticReaction::uniform(n, 0.0, p.get("n"), p.get("m"), p.get("rho"))?;
    let f = Reaction::logistic(l);
    let lambda_n = spectral::lambda_k_plus(&kernel, &DVector::from_element(n, p.get("n")), Method::Auto)?;
    let mut trials = random_trials(n, p.count("trials"), 5.0, true, seed);
    trials.push(DVector::from_element(n, 0.1));
    let report = uniqueness_experiment(&op, &f, &trials, p.get("t_end"), 1e-4)?;
    let path = out.profile("logistic_super_equilibrium.csv", &space, &report.phi_big_m)?;
    Ok(json!({
        "lambda_n": lambda_n,
        "equilibrium_value": report.phi_big_m.mean(),
        "equilibrium_spread": report.phi_big_m.max() - report.phi_big_m.min(),
        "residual": stationary_residual(&op, &f, &report.phi_big_m),
        "uniqueness": report,
        "file": path.display().to_string(),
    }))
}

/// Three piecewise-constant equilibria of the cubic with distinct node assignments.
fn bistable(p: &Params, out: &OutputDir) -> Result<Value, CliError> {
    let n = p.count("nodes");
    let space = unit_interval(n)?;
    let split = |fractions: [f64; 3]| -> Vec<usize> {
        let a = (fractions[0] * n as f64).round() as usize;
        let b = (fractions[1] * n as f64).round() as usize;
        (0..n).map(|i| if i < a { 0 } else if i < a + b { 1 } else { 2 }).collect()
    };
    let first = split([0.4, 0.2, 0.4]);
    let second = split([0.25, 0.5, 0.25]);
    // same measures as the first, two nodes of part 0 traded with two of part 2
    let mut third = first.clone();
    if n >= 4 && first[0] == 0 && first[1] == 0 && first[n - 1] == 2 && first[n - 2] == 2 {
        third.swap(0, n - 1);
        third.swap(1, n - 2);
    }
    let (lambda, a_level) = (p.get("lambda"), p.get("a_level"));
    let family: Vec<_> = [first, second, third]
        .iter()
        .map(|asg| piecewise_constant_family(space.clone(), lambda, a_level, asg))
        .collect::<Result<_, _>>()?;
    let w = DVector::from_column_slice(space.weights());
    let mut distances = vec![];
    for i in 0..3 {
        for j in i + 1..3 {
            let l1 = w.dot(&(&family[i].state - &family[j].state).abs());
            distances.push(json!({ "pair": [i, j], "l1": l1 }));
        }
    }
    let op = NonlocalOperator::with_h0_offset(Kernel::assemble(space.clone(), &KernelLaw::Constant { c: 1.0 })?, 0.0)?;
    let f = bistable_cubic(lambda);
    let mut members = vec![];
    for (k, e) in family.iter().enumerate() {
        let path = out.profile(&format!("bistable_{k}.csv"), &space, &e.state)?;
        members.push(json!({
            "values": e.values,
            "measures": e.measures,
            "residual": stationary_residual(&op, &f, &e.state),
            "file": path.display().to_string(),
        }));
    }
    let coincide: f64 = (0..n)
        .filter(|&i| family[0].state[i] == family[2].state[i])
        .map(|i| space.weights()[i])
        .sum();
    Ok(json!({
        "roots": equilibria::piecewise_roots(space.total_measure(), lambda, a_level)?,
        "equilibria": members,
        "pairwise_l1": distances,
        "coincidence_measure_0_2": coincide,
    }))
}

/// `f(u) = u^rho` from a large constant: finite-time blow-up and its witness.
fn blowup(p: &Params, out: &OutputDir) -> Result<Value, CliError> {
    let n = p.count("nodes");
    let rho = p.get("rho");
    let op = NonlocalOperator::new(constant_kernel(n)?, DVector::zeros(n))?;
    let f = if rho == 3.0 {
        Reaction::polynomial(vec![0.0, 0.0, 0.0, 1.0])
    } else {
        Reaction::custom("power", Arc::new(move |_, s: f64| s.abs().powf(rho - 1.0) * s), None, None)
    };
    let cfg = IntegratorConfig::new(Scheme::Rk4, p.get("dt"), p.get("t_end"))?.with_record_every(10);
    let tr = evolve_nonlinear(&op, &f, &DVector::from_element(n, p.get("u0")), &cfg)?;
    let k = kaplan_witness(&op, rho, &tr)?;
    let rows: Vec<Vec<f64>> = k
        .times
        .iter()
        .zip(&k.z)
        .zip(&k.comparison)
        .map(|((t, z), c)| vec![*t, *z, *c])
        .collect();
    let path = out.table("blowup_witness.csv", &["t", "z", "comparison"], &rows)?;
    Ok(json!({
        "blowup": tr.meta.blowup,
        "comparison_blowup": k.comparison_blowup,
        "witness_dominates": k.dominates,
        "lambda": k.lambda,
        "file": path.display().to_string(),
    }))
}

/// Step potential `H = -A` on the right half: `Λ(H)` against the closed form
/// and the shift bound.
fn shift(p: &Params, out: &OutputDir) -> Result<Value, CliError> {
    let n = p.count("nodes");
    let kernel = constant_kernel(n)?;
    let mask: Vec<bool> = (0..n).map(|i| kernel.space().position(i) > 0.5).collect();
    let mut rows = vec![];
    let mut table = vec![];
    for a in [1.0, 3.0, 10.0, 100.0] {
        let coef = spectral::shifted_potential(&DVector::zeros(n), &mask, a)?;
        let lambda = spectral::lambda_k_plus(&kernel, &coef, Method::Auto)?;
        let rhs = spectral::shift_bound_rhs(&kernel, &DVector::zeros(n), &mask, a)?;
        let closed = (-(a - 1.0) + (a * a + 1.0f64).sqrt()) / 2.0;
        rows.push(vec![a, lambda, rhs, closed]);
        table.push(json!({ "A": a, "lambda": lambda, "shift_bound_rhs": rhs, "closed_form": closed, "lambda_le_rhs": lambda <= rhs }));
    }
    let path = out.table("shift.csv", &["A", "lambda", "rhs", "closed_form"], &rows)?;
    Ok(json!({ "table": table, "file": path.display().to_string() }))
}
