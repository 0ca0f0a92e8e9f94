use std::path::Path;

use nalgebra::DVector;
use nonlocal_core::equilibria::extremal_equilibria;
use nonlocal_core::evolve::{evolve_nonlinear, lyapunov_energy};
use nonlocal_core::spectral::{principal_value, sign_criteria};
use nonlocal_core::verify::{run_suite, Suite, SystemSampler};
use serde_json::{json, Value};

use crate::config::Experiment;
use crate::error::CliError;
use crate::output::{envelope, write_profile, OutputDir};

pub fn spectrum(exp: &Experiment, out: &OutputDir, eigenfunction: Option<&Path>) -> Result<Value, CliError> {
    let report = principal_value(&exp.op, exp.method)?;
    let criteria = sign_criteria(&exp.op).ok();
    let mut files = vec![];
    if let Some(path) = eigenfunction {
        let phi = report
            .eigenfunction
            .clone()
            .ok_or_else(|| CliError::Failed("no principal eigenfunction to emit".into()))?;
        write_profile(path, &exp.space, &DVector::from_vec(phi))?;
        files.push(path.display().to_string());
    }
    let h0 = exp.op.h0();
    let body = json!({
        "report": report,
        "nodes": exp.op.len(),
        "symmetric": exp.op.kernel().is_symmetric(),
        "h0_range": [h0.min(), h0.max()],
        "criteria": criteria,
        "files": files,
    });
    let env = envelope("spectrum", exp.config.seed, body)?;
    out.json("spectrum.json", &env)?;
    Ok(env)
}

pub fn evolve(exp: &Experiment, out: &OutputDir) -> Result<Value, CliError> {
    let mut tr = evolve_nonlinear(&exp.op, &exp.reaction, &exp.initial, &exp.integrator)?;
    let lambda = principal_value(&exp.op, exp.method).ok().map(|r| r.lambda);
    let growth = lambda.and_then(|l| tr.fit_growth_constant(l));
    let energy = if exp.op.kernel().is_symmetric() {
        let first = lyapunov_energy(&exp.op, &exp.reaction, &tr.states[0]).ok();
        let last = lyapunov_energy(&exp.op, &exp.reaction, tr.last()).ok();
        Some(json!({ "initial": first, "final": last }))
    } else {
        None
    };
    let traj = out.trajectory("trajectory.csv", &tr)?;
    let fin = out.profile("final.csv", &exp.space, tr.last())?;
    let body = json!({
        "scheme": tr.scheme,
        "dt": tr.dt,
        "records": tr.len(),
        "t_final": tr.times.last(),
        "final_sup_norm": tr.last().amax(),
        "blowup": tr.meta.blowup,
        "beta": tr.meta.beta,
        "truncation": tr.meta.truncation,
        "lambda": lambda,
        "growth_constant": growth,
        "energy": energy,
        "files": [traj.display().to_string(), fin.display().to_string()],
    });
    let env = envelope("evolve", exp.config.seed, body)?;
    out.json("evolve.json", &env)?;
    Ok(env)
}

pub fn equilibria(exp: &Experiment, out: &OutputDir) -> Result<Value, CliError> {
    let cfg = &exp.config.equilibria;
    let set = extremal_equilibria(&exp.op, &exp.reaction, cfg.epsilon, cfg.tol)?;
    let mut files = vec![
        out.profile("phi.csv", &exp.space, &set.phi)?,
        out.profile("phi_min.csv", &exp.space, &set.phi_m)?,
        out.profile("phi_max.csv", &exp.space, &set.phi_big_m)?,
    ];
    if let Some(p) = &set.phi_m_plus {
        files.push(out.profile("phi_min_nonnegative.csv", &exp.space, p)?);
    }
    let body = json!({
        "equilibria": set,
        "gap": (&set.phi_big_m - &set.phi_m).amax(),
        "files": files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>(),
    });
    let env = envelope("equilibria", exp.config.seed, body)?;
    out.json("equilibria.json", &env)?;
    Ok(env)
}

pub fn parse_suites(name: &str) -> Result<Vec<Suite>, CliError> {
    if name == "all" {
        return Ok(vec![Suite::Comparison, Suite::MaximumPrinciple, Suite::Supersolution, Suite::Asymptotic]);
    }
    name.parse::<Suite>().map(|s| vec![s]).map_err(|e| CliError::Config(format!("--suite: {e}")))
}

/// Runs the suites; the envelope is returned together with the overall verdict.
pub fn verify(suites: &[Suite], trials: usize, seed: u64, sizes: Option<Vec<usize>>, out: &OutputDir) -> Result<(Value, bool), CliError> {
    let mut sampler = SystemSampler::default();
    if let Some(s) = sizes {
        sampler = sampler.with_sizes(s);
    }
    let mut reports = vec![];
    for &suite in suites {
        reports.push(run_suite(suite, &sampler, trials, seed)?);
    }
    let passed = reports.iter().all(|r| r.passed());
    let body = json!({
        "passed": passed,
        "reports": reports,
    });
    let env = envelope("verify", seed, body)?;
    out.json("verify.json", &env)?;
    Ok((env, passed))
}
