//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line to
//! stderr (outside the harness capture) and then asserts.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use nonlocal_core::equilibria::{
    self, extremal_equilibria, newton_refine, piecewise_constant_family, stationary_residual,
};
use nonlocal_core::evolve::{self, evolve_nonlinear, kaplan_witness, lyapunov_energy, IntegratorConfig, Scheme};
use nonlocal_core::reaction::{self, LogisticReaction, Reaction};
use nonlocal_core::spectral::{self, cw_bounds, principal_value, rayleigh_lambda, Method};
use nonlocal_core::verify::{run_suite, trial_rng, Suite, SystemSampler};
use nonlocal_core::{Kernel, KernelLaw, MeasureSpace, NonlocalOperator, QuadratureRule};
use rand::Rng;

fn report(id: usize, name: &str, pass: bool, detail: String) {
    let line = format!("acceptance {id:>2} {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn interval(n: usize) -> Arc<MeasureSpace> {
    Arc::new(MeasureSpace::interval(0.0, 1.0, n, QuadratureRule::Midpoint).unwrap())
}

fn constant_op(n: usize, h: DVector<f64>) -> NonlocalOperator {
    let k = Kernel::assemble(interval(n), &KernelLaw::Constant { c: 1.0 }).unwrap();
    NonlocalOperator::new(k, h).unwrap()
}

fn logistic(n: usize, g: f64, nn: f64, m: f64, rho: f64) -> Reaction {
    Reaction::logistic(
        LogisticReaction::new(
            DVector::from_element(n, g),
            DVector::from_element(n, nn),
            DVector::from_element(n, m),
            rho,
        )
        .unwrap(),
    )
}

/// λ_max of the weight-symmetrized matrix, computed independently of the library.
fn symmetric_oracle(kernel: &Kernel, h: &DVector<f64>) -> f64 {
    let s: Vec<f64> = kernel.weights().iter().map(|w| w.sqrt()).collect();
    let n = kernel.len();
    let m = DMatrix::from_fn(n, n, |i, j| s[i] * kernel.jmat()[(i, j)] * s[j] - if i == j { h[i] } else { 0.0 });
    SymmetricEigen::new(m).eigenvalues.max()
}

fn positive_grid() -> Vec<f64> {
    reaction::log_grid(1e-6, 1e6, 20).into_iter().filter(|&s| s > 0.0).collect()
}

#[test]
fn c01_threshold_eigenvalue() {
    let n = 128;
    let mut worst_lambda: f64 = 0.0;
    let mut worst_shape: f64 = 0.0;
    for law in [KernelLaw::Constant { c: 1.0 }, KernelLaw::Gaussian { sigma: 0.2, scale: 1.0 }] {
        let k = Kernel::assemble(interval(n), &law).unwrap();
        let op = NonlocalOperator::with_h0_offset(k, 0.0).unwrap();
        let r = principal_value(&op, Method::Auto).unwrap();
        let phi = r.eigenfunction.unwrap();
        let (lo, hi) = phi.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        worst_lambda = worst_lambda.max(r.lambda.abs());
        worst_shape = worst_shape.max((hi - lo) / hi.abs());
    }
    let pass = worst_lambda <= 1e-10 && worst_shape <= 1e-8;
    report(1, "threshold eigenvalue", pass, format!("max |Λ| = {worst_lambda:.2e}, eigenfunction spread {worst_shape:.2e}"));
    assert!(pass);
}

#[test]
fn c02_collatz_wielandt_sandwich() {
    let sampler = SystemSampler::default();
    let mut violations = 0;
    let mut checks = 0;
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let sys = sampler.sample(202, i).unwrap();
        // every other system gets a nonsymmetric kernel
        let op = if i % 2 == 1 {
            let mut rng = trial_rng(203, i as u64);
            let n = sys.op.len();
            let j = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.1..2.0));
            let k = Kernel::from_matrix(sys.op.space().clone(), j).unwrap();
            NonlocalOperator::new(k, sys.op.h().clone()).unwrap()
        } else {
            sys.op.clone()
        };
        let lambda = principal_value(&op, Method::Auto).unwrap().lambda;
        let mut rng = trial_rng(204, i as u64);
        for _ in 0..100 {
            let phi = DVector::from_fn(op.len(), |_, _| rng.gen_range(0.05..2.0));
            let b = cw_bounds(&op, &phi).unwrap();
            checks += 1;
            let v = (b.lower - lambda).max(lambda - b.upper);
            worst = worst.max(v);
            if v > 1e-9 {
                violations += 1;
            }
        }
    }
    let pass = violations == 0;
    report(2, "Collatz-Wielandt sandwich", pass, format!("{violations}/{checks} violations, worst excess {worst:.2e}"));
    assert!(pass);
}

#[test]
fn c03_symmetric_agreement() {
    let sampler = SystemSampler::default();
    let mut worst: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for i in 0..20 {
        let sys = sampler.sample(303, i).unwrap();
        let ray = rayleigh_lambda(sys.op.kernel(), sys.op.h()).unwrap().lambda;
        let pv = principal_value(&sys.op, Method::Auto).unwrap().lambda;
        let power = principal_value(&sys.op, Method::Power).unwrap().lambda;
        let oracle = symmetric_oracle(sys.op.kernel(), sys.op.h());
        worst = worst.max((ray - pv).abs()).max((power - pv).abs());
        worst_oracle = worst_oracle.max((pv - oracle).abs());
    }
    let pass = worst <= 1e-9 && worst_oracle <= 1e-9;
    report(3, "symmetric agreement", pass, format!("max |rayleigh - principal| = {worst:.2e}, vs oracle {worst_oracle:.2e}"));
    assert!(pass);
}

#[test]
fn c04_step_potential_closed_form() {
    let n = 512;
    let k = Kernel::assemble(interval(n), &KernelLaw::Constant { c: 1.0 }).unwrap();
    let mask: Vec<bool> = (0..n).map(|i| (i as f64 + 0.5) / n as f64 > 0.5).collect();
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    let mut rhs_ok = true;
    for a in [1.0, 3.0, 10.0, 100.0] {
        let coef = spectral::shifted_potential(&DVector::zeros(n), &mask, a).unwrap();
        let lam = spectral::lambda_k_plus(&k, &coef, Method::Auto).unwrap();
        let closed = (-(a - 1.0) + (a * a + 1.0f64).sqrt()) / 2.0;
        let rhs = spectral::shift_bound_rhs(&k, &DVector::zeros(n), &mask, a).unwrap();
        rhs_ok &= (rhs - (2.0 - a)).abs() <= 1e-9;
        worst = worst.max((lam - closed).abs());
        rows.push(format!("A={a}: Λ={lam:.9} rhs={rhs:.3}"));
    }
    let pass = worst <= 1e-9 && rhs_ok;
    report(4, "step-potential closed form", pass, format!("max error {worst:.2e}; {}", rows.join(", ")));
    assert!(pass);
}

#[test]
fn c05_comparison_and_maximum_principle() {
    let sampler = SystemSampler::default();
    let cmp = run_suite(Suite::Comparison, &sampler, 50, 5).unwrap();
    let max = run_suite(Suite::MaximumPrinciple, &sampler, 50, 5).unwrap();
    let gap = |r: &nonlocal_core::verify::PropertyReport| r.notes["strong_min_gap"].as_f64().unwrap_or(f64::NAN);
    let strong = |r: &nonlocal_core::verify::PropertyReport| r.notes["strong_checked"].as_u64().unwrap_or(0);
    let pass = cmp.passed()
        && max.passed()
        && cmp.worst_violation <= 1e-12
        && max.worst_violation <= 1e-12
        && strong(&cmp) > 0
        && strong(&max) > 0
        && gap(&cmp) > 0.0
        && gap(&max) > 0.0;
    report(
        5,
        "comparison and maximum principle",
        pass,
        format!(
            "comparison {}/{} failures, worst {:.1e}, strong on {} min gap {:.2e}; maximum {}/{} failures, worst {:.1e}, strong on {} min value {:.2e}",
            cmp.failures,
            cmp.trials,
            cmp.worst_violation,
            strong(&cmp),
            gap(&cmp),
            max.failures,
            max.trials,
            max.worst_violation,
            strong(&max),
            gap(&max)
        ),
    );
    if !pass {
        eprintln!("{}\n{}", cmp.to_json(), max.to_json());
    }
    assert!(pass);
}

#[test]
fn c06_logistic_global_stability() {
    let n = 64;
    let op = constant_op(n, DVector::zeros(n));
    let f = logistic(n, 0.0, 2.0, 1.0, 3.0);
    let root = 3f64.sqrt();
    let set = extremal_equilibria(&op, &f, None, 1e-12).unwrap();
    let eq_err = set.phi_big_m.iter().map(|v| (v - root).abs()).fold(0.0, f64::max);
    let mut dists = Vec::new();
    for c in [0.1, 1.0, 5.0] {
        let cfg = IntegratorConfig::new(Scheme::Rk4, 1e-3, 30.0).unwrap().with_record_every(1000);
        let tr = evolve_nonlinear(&op, &f, &DVector::from_element(n, c), &cfg).unwrap();
        let t_last = *tr.times.last().unwrap();
        assert!((t_last - 30.0).abs() < 1e-9);
        dists.push(tr.last().iter().map(|v| (v - root).abs()).fold(0.0, f64::max));
    }
    let decreasing = reaction::f_over_s_decreasing(&f, n, &positive_grid()).unwrap();
    let pass = eq_err <= 1e-6 && dists.iter().all(|&d| d <= 1e-4) && decreasing;
    report(6, "logistic global stability", pass, format!("|φ_M - √3| = {eq_err:.2e}, distances at t=30 {dists:?}, f/s decreasing {decreasing}"));
    assert!(pass);
}

#[test]
fn c07_discontinuous_equilibria() {
    let n = 40;
    let space = interval(n);
    let contiguous = |m: [usize; 3]| -> Vec<usize> { (0..3).flat_map(|k| std::iter::repeat_n(k, m[k])).collect() };
    let a = contiguous([16, 8, 16]);
    let b = contiguous([10, 20, 10]);
    // perturbed placement of the first: two nodes of part 0 trade places with two of part 2
    let mut c = a.clone();
    c.swap(0, 39);
    c.swap(1, 38);
    let shuffled = equilibria::random_assignment([16, 8, 16], 7);
    let fam: Vec<_> = [&a, &b, &c, &shuffled]
        .iter()
        .map(|asg| piecewise_constant_family(space.clone(), 4.0, 0.0, asg).unwrap())
        .collect();
    let op = constant_op(n, DVector::from_element(n, 1.0));
    let f = equilibria::bistable_cubic(4.0);
    let residuals: Vec<f64> = fam.iter().map(|e| stationary_residual(&op, &f, &e.state)).collect();
    let coincide: f64 = (0..n).filter(|&i| fam[0].state[i] == fam[2].state[i]).map(|i| space.weights()[i]).sum();
    let distinct = fam[0].state != fam[1].state && fam[0].state != fam[2].state && fam[1].state != fam[2].state;
    let measures_ok = (fam[0].measures[0] - 0.4).abs() < 1e-12
        && (fam[0].measures[1] - 0.2).abs() < 1e-12
        && (fam[1].measures[1] - 0.5).abs() < 1e-12;
    let pass = residuals.iter().all(|&r| r <= 1e-12) && coincide >= 0.3 && distinct && measures_ok;
    report(7, "discontinuous equilibria", pass, format!("residuals {residuals:?}, coincidence measure {coincide:.2}"));
    assert!(pass);
}

#[test]
fn c08_blowup() {
    let n = 32;
    let op = constant_op(n, DVector::zeros(n));
    let f = Reaction::polynomial(vec![0.0, 0.0, 0.0, 1.0]);
    let cfg = IntegratorConfig::new(Scheme::Rk4, 1e-6, 0.1).unwrap().with_record_every(10);
    let tr = evolve_nonlinear(&op, &f, &DVector::from_element(n, 10.0), &cfg).unwrap();
    let blow = tr.meta.blowup.as_ref().map(|b| b.time);
    let k = kaplan_witness(&op, 3.0, &tr).unwrap();
    let exact = 0.5 * (1.0f64 + 0.01).ln();
    let pass = blow.is_some_and(|t| t < 0.1) && k.dominates;
    report(
        8,
        "blow-up",
        pass,
        format!("flagged at {blow:?} (scalar blow-up {exact:.6}), comparison blow-up {:?}, witness dominates {}", k.comparison_blowup, k.dominates),
    );
    assert!(pass);
}

#[test]
fn c09_envelope_and_invariance() {
    let r = run_suite(Suite::Asymptotic, &SystemSampler::default(), 20, 9).unwrap();
    let pass = r.passed() && r.worst_violation <= 1e-8;
    report(
        9,
        "envelope and invariance",
        pass,
        format!("{}/{} failures, worst excess {:.2e}, fitted M {}", r.failures, r.trials, r.worst_violation, r.notes["fitted_decay_m"]),
    );
    if !pass {
        eprintln!("{}", r.to_json());
    }
    assert!(pass);
}

fn bistable_system(n: usize) -> (NonlocalOperator, Reaction) {
    let space = interval(n);
    let k = Kernel::assemble(space.clone(), &KernelLaw::Tophat { radius: 0.2, height: 1.0 }).unwrap();
    let op = NonlocalOperator::with_h0_offset(k, 0.0).unwrap();
    let g = DVector::from_fn(n, |i, _| 0.1 * (2.0 * std::f64::consts::PI * space.position(i)).sin());
    let f = Reaction::polynomial(vec![0.0, 1.0, 0.0, -1.0]).with_source(g).unwrap();
    (op, f)
}

#[test]
fn c10_extremal_sandwich_and_one_sided_stability() {
    let n = 64;
    let mut cases = vec![bistable_system(n)];
    cases.push((constant_op(n, DVector::zeros(n)), logistic(n, 0.0, 2.0, 1.0, 3.0)));
    let mut found = 0;
    let mut worst_out: f64 = 0.0;
    let mut worst_return: f64 = 0.0;
    for (ci, (op, f)) in cases.iter().enumerate() {
        let set = extremal_equilibria(op, f, None, 1e-12).unwrap();
        let mut rng = trial_rng(1010, ci as u64);
        for _ in 0..40 {
            let guess = DVector::from_fn(n, |_, _| rng.gen_range(-2.5..2.5));
            if let Ok(r) = newton_refine(op, f, &guess, 1e-10) {
                if r.residual <= 1e-10 {
                    found += 1;
                    let out = (&r.state - &set.phi_big_m).max().max((&set.phi_m - &r.state).max());
                    worst_out = worst_out.max(out);
                }
            }
        }
        let cfg = IntegratorConfig::new(Scheme::Rk4, 2e-3, 30.0).unwrap().with_record_every(15000);
        let above = evolve_nonlinear(op, f, &set.phi_big_m.add_scalar(0.5), &cfg).unwrap();
        let below = evolve_nonlinear(op, f, &set.phi_m.add_scalar(-0.5), &cfg).unwrap();
        worst_return = worst_return
            .max(evolve::sup_distance(above.last(), &set.phi_big_m))
            .max(evolve::sup_distance(below.last(), &set.phi_m));
    }
    let pass = found > 0 && worst_out <= 1e-8 && worst_return <= 1e-5;
    report(
        10,
        "extremal sandwich and one-sided stability",
        pass,
        format!("{found} Newton equilibria, worst excursion {worst_out:.2e}, worst return distance at t=30 {worst_return:.2e}"),
    );
    assert!(pass);
}

#[test]
fn c11_lyapunov_descent() {
    let n = 64;
    let space = interval(n);
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut steps = 0;
    let laws = [
        KernelLaw::Tophat { radius: 0.25, height: 2.0 },
        KernelLaw::Gaussian { sigma: 0.15, scale: 1.5 },
        KernelLaw::Constant { c: 1.0 },
    ];
    for (li, law) in laws.iter().enumerate() {
        let k = Kernel::assemble(space.clone(), law).unwrap();
        let mut rng = trial_rng(1111, li as u64);
        let h = DVector::from_fn(n, |i, _| 0.5 + 0.3 * (3.0 * space.position(i)).cos());
        let op = NonlocalOperator::new(k, h).unwrap();
        for rho in [2.0, 3.0] {
            let f = Reaction::logistic(
                LogisticReaction::new(
                    DVector::from_fn(n, |_, _| rng.gen_range(-0.2..0.2)),
                    DVector::from_element(n, 1.5),
                    DVector::from_element(n, 1.0),
                    rho,
                )
                .unwrap(),
            );
            let u0 = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
            let cfg = IntegratorConfig::new(Scheme::Rk4, 5e-3, 10.0).unwrap();
            let tr = evolve_nonlinear(&op, &f, &u0, &cfg).unwrap();
            let e: Vec<f64> = tr.states.iter().map(|u| lyapunov_energy(&op, &f, u).unwrap()).collect();
            for w in e.windows(2) {
                worst = worst.max(w[1] - w[0]);
                steps += 1;
            }
        }
    }
    let pass = worst <= 1e-8;
    report(11, "Lyapunov descent", pass, format!("{steps} steps, largest increase {worst:.2e}"));
    assert!(pass);
}
