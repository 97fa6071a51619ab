//! WebAssembly bindings for the browser demo in `www/`.
//!
//! The plain functions return `adadelay::Result` so they can be tested on
//! the host; the `#[wasm_bindgen]` wrappers turn errors into JS exceptions.

use adadelay::delay::{delay_stats, DelayModelSpec};
use adadelay::engine::{run, EngineConfig, Problem};
use adadelay::experiment::{simulator_workers, SimulatorConfig};
use adadelay::problems::make_synthetic;
use adadelay::simulator::{simulate, ServiceDist, SimOptions};
use adadelay::stepsize::{PolicyKind, PolicySpec};
use adadelay::{Error, Result};
use wasm_bindgen::prelude::*;

/// Policies in the order used by [`convergence_curves`].
pub const POLICIES: [&str; 4] = ["adadelay", "adadelay_coord", "async_adagrad", "adaptive_revision"];

/// Points per curve returned by [`convergence_curves`].
pub const CURVE_POINTS: u64 = 100;

fn policy_kind(name: &str) -> Result<PolicyKind> {
    Ok(match name {
        "adadelay" => PolicyKind::AdaDelay { c: 1.0, beta: 0.5 },
        "adadelay_coord" => PolicyKind::AdaDelayCoord { bounds: None },
        "async_adagrad" => PolicyKind::AsyncAdaGrad,
        "adaptive_revision" => PolicyKind::AdaptiveRevision,
        other => return Err(Error::Unsupported(format!("unknown policy `{other}`"))),
    })
}

fn demo_problem() -> Result<Problem> {
    Ok(Problem::from(&make_synthetic(10, 1.0, 3.0, 0)?))
}

/// Delay counts indexed by delay value from one simulated parameter server
/// with exponential read and service times.
pub fn simulated_delay_histogram(
    workers: usize,
    read_mean: f64,
    service_mean: f64,
    straggler_fraction: f64,
    straggler_factor: f64,
    steps: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    let read_time = if read_mean == 0.0 {
        ServiceDist::Deterministic { value: 0.0 }
    } else {
        ServiceDist::Exponential { mean: read_mean }
    };
    let sim = SimulatorConfig {
        workers,
        read_time,
        service_time: ServiceDist::Exponential { mean: service_mean },
        straggler_fraction,
        straggler_factors: vec![straggler_factor],
        early_fraction: 0.05,
    };
    let specs = simulator_workers(&sim, 1, seed)?;
    let policy = PolicySpec {
        kind: PolicyKind::AdaDelay { c: 1.0, beta: 0.5 },
        lipschitz: 1.0,
        alpha0: 1.0,
    };
    let cfg = EngineConfig::new(steps, seed, policy, DelayModelSpec::Induced);
    let out = simulate(&specs, &demo_problem()?, &cfg, &SimOptions::default())?;
    let stats = delay_stats(&out.run.record.taus(), 0.05)?;
    let max = stats.histogram.keys().next_back().copied().unwrap_or(0);
    let mut counts = vec![0.0; max as usize + 1];
    for (&d, &c) in &stats.histogram {
        counts[d as usize] = c as f64;
    }
    Ok(counts)
}

fn gap_curve(kind: PolicyKind, alpha0: f64, tau_bar: u64, steps: u64, seed: u64) -> Result<Vec<f64>> {
    let policy = PolicySpec {
        kind,
        lipschitz: 1.0,
        alpha0,
    };
    let mut cfg = EngineConfig::new(steps, seed, policy, DelayModelSpec::Uniform { tau_bar });
    cfg.gap_every = (steps / CURVE_POINTS).max(1);
    let out = run(&demo_problem()?, &cfg)?;
    Ok(out.record.rows.iter().filter_map(|r| r.f_gap).collect())
}

/// Suboptimality curves of all four policies on a 10-dimensional noisy
/// quadratic under uniform delays, concatenated in [`POLICIES`] order.
pub fn policy_gap_curves(tau_bar: u64, steps: u64, alpha0: f64, seed: u64) -> Result<Vec<f64>> {
    let mut all = Vec::new();
    for name in POLICIES {
        all.extend(gap_curve(policy_kind(name)?, alpha0, tau_bar, steps, seed)?);
    }
    Ok(all)
}

/// Per-step delay followed by per-step step size `alpha0 / (L + eta)`,
/// as two concatenated halves.
pub fn policy_step_trace(policy: &str, tau_bar: u64, steps: u64, seed: u64) -> Result<Vec<f64>> {
    let spec = PolicySpec {
        kind: policy_kind(policy)?,
        lipschitz: 1.0,
        alpha0: 1.0,
    };
    let cfg = EngineConfig::new(steps, seed, spec, DelayModelSpec::Uniform { tau_bar });
    let rows = run(&demo_problem()?, &cfg)?.record.rows;
    let mut out: Vec<f64> = rows.iter().map(|r| r.tau as f64).collect();
    out.extend(rows.iter().map(|r| r.alpha));
    Ok(out)
}

fn js(err: Error) -> JsError {
    JsError::new(&err.to_string())
}

#[wasm_bindgen]
pub fn delay_histogram(
    workers: usize,
    read_mean: f64,
    service_mean: f64,
    straggler_fraction: f64,
    straggler_factor: f64,
    steps: u32,
    seed: u32,
) -> std::result::Result<Vec<f64>, JsError> {
    simulated_delay_histogram(
        workers,
        read_mean,
        service_mean,
        straggler_fraction,
        straggler_factor,
        steps.into(),
        seed.into(),
    )
    .map_err(js)
}

#[wasm_bindgen]
pub fn convergence_curves(tau_bar: u32, steps: u32, alpha0: f64, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
    policy_gap_curves(tau_bar.into(), steps.into(), alpha0, seed.into()).map_err(js)
}

#[wasm_bindgen]
pub fn step_size_trace(policy: &str, tau_bar: u32, steps: u32, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
    policy_step_trace(policy, tau_bar.into(), steps.into(), seed.into()).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_demo_policy_name_resolves() {
        for name in POLICIES {
            assert_eq!(policy_kind(name).unwrap().name(), name);
        }
        assert!(policy_kind("sgd").is_err());
    }

    #[test]
    fn demo_problem_has_ten_coordinates() {
        assert_eq!(demo_problem().unwrap().dim(), 10);
    }
}
