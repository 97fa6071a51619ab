//! Residuals of the gap decomposition, closed-form bounds, and empirical
//! checks of those bounds over many seeded runs.
//!
//! With `alpha = 1/(L + eta)` the per-step gap splits as
//!
//! ```text
//! f(x(t+1)) - f* <= Δ(t) + Γ(t) + ζ(t) + Σ(t)
//! Δ(t) = (||x* - x(t)||² - ||x* - x(t+1)||²) / (2 alpha)
//! Γ(t) = <∇f(x(t)) - ∇f(x(t-τ)), x(t+1) - x*>
//! ζ(t) = <∇f(x(t-τ)) - g, x(t) - x*>          (zero mean)
//! Σ(t) = ||∇f(x(t-τ)) - g||² / (2 eta)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::delay::DelayModelSpec;
use crate::engine::{Problem, Trajectory};
use crate::error::{Error, Result};
use crate::problems::Objective;
use crate::types::{ProblemConstants, RunRecord};
use crate::vector::{dist_sq, dot};

/// Minimum number of seeds for [`check_lemma_bounds`].
pub const MIN_SEEDS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub t: u64,
    pub delta: f64,
    pub gamma: f64,
    pub sigma_term: f64,
    /// Cross term `<∇f(x(t-τ)) - g, x(t) - x*>`.
    pub zeta: f64,
    /// `eta(t) - eta(t-1)`; undefined at `t = 1`.
    pub z_t: Option<f64>,
    /// `||x(t) - x*||²`.
    pub r_t: f64,
    /// `f(x(t+1)) - f*`.
    pub gap: f64,
}

fn require_unit_alpha0(record: &RunRecord) -> Result<()> {
    if record.alpha0 != 1.0 {
        return Err(Error::Unsupported(format!(
            "residuals assume alpha = 1/(L + eta); run has alpha0 = {}",
            record.alpha0
        )));
    }
    Ok(())
}

fn require_complete(record: &RunRecord, trajectory: &Trajectory, dim: usize) -> Result<()> {
    let n = record.rows.len();
    if trajectory.iterates.len() != n + 1 || trajectory.gradients.len() != n {
        return Err(Error::invalid(
            "trajectory",
            format!(
                "{} rows need {} iterates and {} gradients, got {} and {}",
                n,
                n + 1,
                n,
                trajectory.iterates.len(),
                trajectory.gradients.len()
            ),
        ));
    }
    if let Some(x) = trajectory.iterates.iter().find(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch { left: x.len(), right: dim });
    }
    Ok(())
}

/// Residual rows for `t = 1..=T`. Needs the full trajectory, the exact
/// gradient of the objective, `x*`, and a run with `alpha0 = 1`.
pub fn compute_residuals(
    record: &RunRecord,
    trajectory: &Trajectory,
    problem: &Problem,
) -> Result<Vec<ResidualRow>> {
    require_unit_alpha0(record)?;
    let x_star = problem
        .x_star
        .as_deref()
        .ok_or_else(|| Error::invalid("x_star", "residuals need a known minimizer"))?;
    let f_star = problem
        .f_star
        .ok_or_else(|| Error::invalid("f_star", "residuals need a known optimum"))?;
    require_complete(record, trajectory, problem.dim())?;
    let obj = &problem.objective;

    let mut out = Vec::with_capacity(record.rows.len());
    let mut prev_eta: Option<f64> = None;
    for (i, row) in record.rows.iter().enumerate() {
        let x_t = &trajectory.iterates[i];
        let x_next = &trajectory.iterates[i + 1];
        let lag_index = i.checked_sub(row.tau as usize).ok_or(Error::HistoryExceeded {
            lag: row.tau,
            capacity: i + 1,
        })?;
        let x_lag = &trajectory.iterates[lag_index];
        let g = &trajectory.gradients[i];
        let grad_t = obj.full_gradient(x_t);
        let grad_lag = obj.full_gradient(x_lag);

        let r_t = dist_sq(x_t, x_star);
        let r_next = dist_sq(x_next, x_star);
        let noise: Vec<f64> = grad_lag.iter().zip(g).map(|(a, b)| a - b).collect();
        let stale: Vec<f64> = grad_t.iter().zip(&grad_lag).map(|(a, b)| a - b).collect();
        let to_next: Vec<f64> = x_next.iter().zip(x_star).map(|(a, b)| a - b).collect();
        let to_t: Vec<f64> = x_t.iter().zip(x_star).map(|(a, b)| a - b).collect();

        out.push(ResidualRow {
            t: row.t,
            delta: (r_t - r_next) / (2.0 * row.alpha),
            gamma: dot(&stale, &to_next),
            sigma_term: dot(&noise, &noise) / (2.0 * row.eta),
            zeta: dot(&noise, &to_t),
            z_t: prev_eta.map(|p| row.eta - p),
            r_t,
            gap: obj.full_objective(x_next) - f_star,
        });
        prev_eta = Some(row.eta);
    }
    Ok(out)
}

/// Per-step check of the gap decomposition on a quadratic objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityRow {
    pub t: u64,
    /// `f(x(t+1)) - f*`.
    pub gap: f64,
    /// `Δ + <e_t, x(t+1) - x*> + (L - 1/alpha)/2 ||x(t) - x(t+1)||²`.
    pub first_line: f64,
    /// `Δ + Γ + ζ + Σ`.
    pub second_line: f64,
    /// Sum of the three nonnegative slacks dropped when passing from the gap
    /// to the first line: the convexity gap at `x(t)`, the descent-lemma gap,
    /// and the projection-inequality gap.
    pub slack: f64,
}

impl IdentityRow {
    /// `gap + slack` reproduces the first line up to rounding.
    pub fn identity_error(&self) -> f64 {
        (self.gap + self.slack - self.first_line).abs()
    }
}

/// Evaluate both lines of the per-step gap decomposition along a trajectory
/// of a quadratic objective, with every inequality slack computed exactly.
pub fn gap_identity(
    record: &RunRecord,
    trajectory: &Trajectory,
    problem: &Problem,
    lipschitz: f64,
) -> Result<Vec<IdentityRow>> {
    let Objective::Quadratic(q) = &problem.objective else {
        return Err(Error::Unsupported("the exact decomposition needs a quadratic objective".into()));
    };
    let residuals = compute_residuals(record, trajectory, problem)?;
    let x_star = problem.x_star.as_deref().expect("checked by compute_residuals");
    let h = &q.curvature;
    let quad = |v: &[f64]| v.iter().zip(h).map(|(vi, hi)| hi * vi * vi).sum::<f64>();

    let mut out = Vec::with_capacity(residuals.len());
    for (i, (row, res)) in record.rows.iter().zip(&residuals).enumerate() {
        let x_t = &trajectory.iterates[i];
        let x_next = &trajectory.iterates[i + 1];
        let g = &trajectory.gradients[i];
        let alpha = row.alpha;
        let grad_t = problem.objective.full_gradient(x_t);
        let e: Vec<f64> = grad_t.iter().zip(g).map(|(a, b)| a - b).collect();
        let d: Vec<f64> = x_next.iter().zip(x_t).map(|(a, b)| a - b).collect();
        let to_next: Vec<f64> = x_next.iter().zip(x_star).map(|(a, b)| a - b).collect();
        let to_t: Vec<f64> = x_t.iter().zip(x_star).map(|(a, b)| a - b).collect();
        let d2 = dot(&d, &d);

        let first_line = res.delta + dot(&e, &to_next) + 0.5 * (lipschitz - 1.0 / alpha) * d2;
        let convexity = 0.5 * quad(&to_t);
        let descent = 0.5 * lipschitz * d2 - 0.5 * quad(&d);
        // -(1/alpha) <x(t) - alpha g - x(t+1), x* - x(t+1)>
        let projection: f64 = -x_t
            .iter()
            .zip(g)
            .zip(x_next)
            .zip(x_star)
            .map(|(((xt, gi), xn), xs)| (xt - alpha * gi - xn) * (xs - xn))
            .sum::<f64>()
            / alpha;
        out.push(IdentityRow {
            t: row.t,
            gap: res.gap,
            first_line,
            second_line: res.delta + res.gamma + res.zeta + res.sigma_term,
            slack: convexity + descent + projection,
        });
    }
    Ok(out)
}

/// Closed-form bound terms. All logarithms are natural.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub constants: ProblemConstants,
    pub c: f64,
    pub steps: u64,
}

/// Constants of the uniform-delay rate `D1 √T/T + D2 log T/T + D3/T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformRateConstants {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

/// Constants of the scaled-delay rate
/// `D4 √T/T + D5 log(1 + c²(1-θ)T/L²)/T + D6/T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledRateConstants {
    pub d4: f64,
    pub d5: f64,
    pub d6: f64,
}

pub fn uniform_rate_constants(k: &ProblemConstants, c: f64, tau_bar: f64) -> UniformRateConstants {
    let (l, g, r, s) = (k.lipschitz, k.grad_bound, k.radius, k.sigma);
    UniformRateConstants {
        d1: 2f64.sqrt() * c * r * r * tau_bar + s * s / c,
        d2: l * g * g * (4.0 * tau_bar + 3.0) * (tau_bar + 1.0) / (6.0 * c * c),
        d3: 0.5 * (l + c) * r * r
            + tau_bar * g * r
            + l * g * g * tau_bar * (tau_bar + 1.0) * (2.0 * tau_bar + 1.0).powi(2) / (6.0 * (l * l + c * c)),
    }
}

pub fn scaled_rate_constants(
    k: &ProblemConstants,
    c: f64,
    tau_bar: f64,
    theta: f64,
    b: f64,
) -> ScaledRateConstants {
    let (l, g, r, s) = (k.lipschitz, k.grad_bound, k.radius, k.sigma);
    ScaledRateConstants {
        d4: c * r * r * (tau_bar + 1.0) / 2f64.sqrt() + s * s / c,
        d5: g * g * (b * b + tau_bar + 1.0) / (c * c * (1.0 - theta)),
        d6: 0.5 * (l + c) * r * r + g * r * (1.0 + std::f64::consts::PI.powi(2) * b * b / 6.0),
    }
}

/// Right-hand side of the expected regret bound
/// `E[Σ_{t=1}^T (f(x(t+1)) - f*)] <= ...` for `eta = c sqrt(t + tau)`.
pub fn theorem_bound(k: &ProblemConstants, model: &DelayModelSpec, c: f64, steps: u64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::invalid("c", "must be positive"));
    }
    if steps == 0 {
        return Err(Error::invalid("steps", "must be at least 1"));
    }
    let t_f = steps as f64;
    match model {
        DelayModelSpec::Uniform { tau_bar } => {
            let d = uniform_rate_constants(k, c, *tau_bar as f64);
            Ok(d.d1 * t_f.sqrt() + d.d2 * t_f.ln() + d.d3)
        }
        DelayModelSpec::Scaled { theta, tau_bar, b, .. } => {
            if *theta >= 1.0 || *theta <= 0.0 {
                return Err(Error::invalid("theta", format!("must lie in (0, 1), got {theta}")));
            }
            let (l, g, r, s) = (k.lipschitz, k.grad_bound, k.radius, k.sigma);
            let noise = s * s / c * t_f.sqrt();
            let delta = 0.5 * c * r * r * sum_delta_scaled(*tau_bar, steps);
            let cardinality = g * r * (1.0 + sum_tail(*b, steps));
            let drift = g * g * sum_drift(l, c, *tau_bar, *theta, *b, steps);
            Ok(noise + delta + cardinality + drift + 0.5 * r * r * (l + c))
        }
        other => Err(Error::Unsupported(format!(
            "no closed-form bound for delay model {other:?}"
        ))),
    }
}

/// `Σ_{t=2}^T (tau_bar + 1)/sqrt(2t - 1)`.
fn sum_delta_scaled(tau_bar: f64, steps: u64) -> f64 {
    (2..=steps).map(|t| (tau_bar + 1.0) / ((2 * t - 1) as f64).sqrt()).sum()
}

/// `Σ_{t=1}^{T-1} B²/(T - t)²`.
fn sum_tail(b: f64, steps: u64) -> f64 {
    (1..steps).map(|t| b * b / ((steps - t) as f64).powi(2)).sum()
}

/// `Σ_{t=1}^T (B² + 1 + tau_bar)/(L² + c²(1-θ)t)`.
fn sum_drift(l: f64, c: f64, tau_bar: f64, theta: f64, b: f64, steps: u64) -> f64 {
    (1..=steps)
        .map(|t| (b * b + 1.0 + tau_bar) / (l * l + c * c * (1.0 - theta) * t as f64))
        .sum()
}

/// Bound on `Σ E[Δ(t)]` under uniform delays.
pub fn delta_bound_uniform(k: &ProblemConstants, c: f64, tau_bar: f64, steps: u64) -> f64 {
    let r2 = k.radius * k.radius;
    0.5 * (k.lipschitz + c) * r2 + 2f64.sqrt() * c * r2 * tau_bar * (steps as f64).sqrt()
}

/// Bound on `Σ E[Δ(t)]` under scaled delays.
pub fn delta_bound_scaled(k: &ProblemConstants, c: f64, tau_bar: f64, steps: u64) -> f64 {
    let r2 = k.radius * k.radius;
    0.5 * r2 * (k.lipschitz + c) + 0.5 * c * r2 * sum_delta_scaled(tau_bar, steps)
}

/// Bound on `Σ E[Γ(t)]` under uniform delays.
pub fn gamma_bound_uniform(k: &ProblemConstants, c: f64, tau_bar: f64, steps: u64) -> f64 {
    let (l, g, r) = (k.lipschitz, k.grad_bound, k.radius);
    let c1 = g * g * tau_bar * (tau_bar + 1.0) * (2.0 * tau_bar + 1.0).powi(2) / (3.0 * (l * l + c * c));
    let c2 = g * g * (4.0 * tau_bar + 3.0) * (tau_bar + 1.0) / (3.0 * c * c);
    tau_bar * g * r + l * c1 / 2.0 + l * c2 / 2.0 * (steps as f64).ln()
}

/// Bound on `Σ E[Γ(t)]` under scaled delays, with the factor `L` on the
/// drift sum as in the per-term statement.
pub fn gamma_bound_scaled(k: &ProblemConstants, c: f64, tau_bar: f64, theta: f64, b: f64, steps: u64) -> f64 {
    let (l, g, r) = (k.lipschitz, k.grad_bound, k.radius);
    g * r * (1.0 + sum_tail(b, steps)) + l * g * g * sum_drift(l, c, tau_bar, theta, b, steps)
}

/// Bound on `Σ E[Σ(t)]` for `eta = c sqrt(t + tau)`, any delays.
pub fn sigma_bound(k: &ProblemConstants, c: f64, steps: u64) -> f64 {
    k.sigma * k.sigma / c * (steps as f64).sqrt()
}

/// Bound on `E[z_t⁺]` for `eta = c (t + tau)^beta`, `t >= 2`.
pub fn zplus_bound(k: &ProblemConstants, c: f64, beta: f64, tau_bar: f64, t: u64) -> f64 {
    c * k.radius * k.radius * beta * (tau_bar + 1.0) / ((t - 1) as f64).powf(1.0 - beta)
}

/// Sample mean and its standard error.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub name: String,
    pub empirical: f64,
    pub bound: f64,
    pub stderr: f64,
    /// `empirical <= bound + 3 stderr`.
    pub pass: bool,
}

impl LemmaCheck {
    fn new(name: impl Into<String>, samples: &[f64], bound: f64) -> Self {
        let (empirical, stderr) = mean_stderr(samples);
        LemmaCheck {
            name: name.into(),
            empirical,
            bound,
            stderr,
            pass: empirical <= bound + 3.0 * stderr,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub seeds: usize,
    pub steps: u64,
    pub checks: Vec<LemmaCheck>,
}

impl LemmaReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&LemmaCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Step-size family used to produce the residuals being checked.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetFamily {
    pub c: f64,
    pub beta: f64,
}

/// Compare Monte Carlo means of the residual sums with their closed-form
/// bounds. Each series holds the residual rows of one seed; all must have
/// the same length.
///
/// Checks applied: `delta_sum`, `gamma_sum` and `sigma_sum` when `beta =
/// 1/2` (under uniform or scaled delays), and term-wise `zplus` checks for
/// every `t >= 2` under scaled delays, reported as one `zplus` entry for the
/// worst `t` plus a `zplus_all` entry whose pass flag covers every `t`.
pub fn check_lemma_bounds(
    series: &[Vec<ResidualRow>],
    constants: Option<&ProblemConstants>,
    model: &DelayModelSpec,
    family: OffsetFamily,
) -> Result<LemmaReport> {
    let k = constants.ok_or_else(|| Error::invalid("constants", "bound checks need (L, G, R, sigma)"))?;
    if series.len() < MIN_SEEDS {
        return Err(Error::invalid(
            "series",
            format!("need at least {MIN_SEEDS} seeds, got {}", series.len()),
        ));
    }
    let steps = series[0].len();
    if steps == 0 || series.iter().any(|s| s.len() != steps) {
        return Err(Error::invalid("series", "all seeds need the same nonzero length"));
    }
    let t_steps = steps as u64;
    let sums = |f: &dyn Fn(&ResidualRow) -> f64| -> Vec<f64> {
        series.iter().map(|s| s.iter().map(f).sum()).collect()
    };
    let deltas = sums(&|r| r.delta);
    let gammas = sums(&|r| r.gamma);
    let sigmas = sums(&|r| r.sigma_term);
    let c = family.c;
    let sqrt_offsets = family.beta == 0.5;

    let mut checks = Vec::new();
    match model {
        DelayModelSpec::Uniform { tau_bar } => {
            let tb = *tau_bar as f64;
            if sqrt_offsets {
                checks.push(LemmaCheck::new("delta_sum", &deltas, delta_bound_uniform(k, c, tb, t_steps)));
                checks.push(LemmaCheck::new("gamma_sum", &gammas, gamma_bound_uniform(k, c, tb, t_steps)));
                checks.push(LemmaCheck::new("sigma_sum", &sigmas, sigma_bound(k, c, t_steps)));
            }
        }
        DelayModelSpec::Scaled { theta, tau_bar, b, .. } => {
            if sqrt_offsets {
                checks.push(LemmaCheck::new("delta_sum", &deltas, delta_bound_scaled(k, c, *tau_bar, t_steps)));
                checks.push(LemmaCheck::new(
                    "gamma_sum",
                    &gammas,
                    gamma_bound_scaled(k, c, *tau_bar, *theta, *b, t_steps),
                ));
                checks.push(LemmaCheck::new("sigma_sum", &sigmas, sigma_bound(k, c, t_steps)));
            }
            let mut worst: Option<LemmaCheck> = None;
            let mut all = true;
            for i in 1..steps {
                let zs: Vec<f64> = series
                    .iter()
                    .map(|s| s[i].z_t.expect("defined for t >= 2").max(0.0))
                    .collect();
                let t = series[0][i].t;
                let check = LemmaCheck::new(format!("zplus_t{t}"), &zs, zplus_bound(k, c, family.beta, *tau_bar, t));
                all &= check.pass;
                let margin = check.empirical - check.bound - 3.0 * check.stderr;
                if worst
                    .as_ref()
                    .is_none_or(|w| margin > w.empirical - w.bound - 3.0 * w.stderr)
                {
                    worst = Some(check);
                }
            }
            if let Some(mut w) = worst {
                w.name = "zplus".into();
                checks.push(LemmaCheck {
                    name: "zplus_all".into(),
                    pass: all,
                    ..w.clone()
                });
                checks.push(w);
            }
        }
        other => {
            return Err(Error::Unsupported(format!("no lemma bounds for delay model {other:?}")));
        }
    }
    Ok(LemmaReport {
        seeds: series.len(),
        steps: t_steps,
        checks,
    })
}

/// A mean gap at one horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub steps: u64,
    pub mean: f64,
    pub stderr: f64,
}

impl RatePoint {
    pub fn from_samples(steps: u64, gaps: &[f64]) -> Self {
        let (mean, stderr) = mean_stderr(gaps);
        RatePoint { steps, mean, stderr }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% percentile interval of the slope over parametric bootstrap
    /// replicates of the means.
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fit `log(mean gap) = a + slope · log T`. The interval resamples each mean
/// from `N(mean, stderr²)` (`replicates` times, seeded); nonpositive draws
/// are discarded from that replicate's fit.
pub fn fit_rate(points: &[RatePoint], replicates: usize, seed: u64) -> Result<RateFit> {
    let mut distinct: Vec<u64> = points.iter().map(|p| p.steps).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::invalid("points", format!("need 3 distinct horizons, got {}", distinct.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.mean > 0.0 && p.mean.is_finite())) {
        return Err(Error::invalid("points", format!("mean gap at T={} is not positive", p.steps)));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.steps as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean.ln()).collect();
    let (slope, intercept) = ols(&xs, &ys);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slopes = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        let mut bx = Vec::with_capacity(points.len());
        let mut by = Vec::with_capacity(points.len());
        for (p, x) in points.iter().zip(&xs) {
            let draw = if p.stderr > 0.0 {
                Normal::new(p.mean, p.stderr).expect("positive stderr").sample(&mut rng)
            } else {
                p.mean
            };
            if draw > 0.0 {
                bx.push(*x);
                by.push(draw.ln());
            }
        }
        if bx.len() >= 2 {
            slopes.push(ols(&bx, &by).0);
        }
    }
    let (ci_low, ci_high) = if slopes.is_empty() {
        (slope, slope)
    } else {
        slopes.sort_by(f64::total_cmp);
        let q = |p: f64| slopes[((p * (slopes.len() - 1) as f64).round()) as usize];
        (q(0.025), q(0.975))
    };
    Ok(RateFit {
        slope,
        intercept,
        ci_low,
        ci_high,
    })
}

/// One-sided sign-test p-value `P(X >= wins)` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test(wins: usize, n: usize) -> f64 {
    let mut p = 0.0;
    let mut coef = 1.0f64; // C(n, 0)
    for k in 0..=n {
        if k >= wins {
            p += coef;
        }
        coef = coef * (n - k) as f64 / (k + 1) as f64;
    }
    p / 2f64.powi(n as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::ScaledFamily;
    use crate::engine::{run, EngineConfig};
    use crate::problems::make_synthetic;
    use crate::stepsize::{PolicyKind, PolicySpec};

    fn constants(l: f64, g: f64, r: f64, s: f64) -> ProblemConstants {
        ProblemConstants::new(l, g, r, s).unwrap()
    }

    fn traced_run(sigma: f64, tau_bar: u64, steps: u64, seed: u64) -> (Problem, RunRecord, Trajectory) {
        let p = Problem::from(&make_synthetic(5, sigma, 2.0, 7).unwrap());
        let mut cfg = EngineConfig::new(
            steps,
            seed,
            PolicySpec {
                kind: PolicyKind::AdaDelay { c: 1.0, beta: 0.5 },
                lipschitz: 1.0,
                alpha0: 1.0,
            },
            DelayModelSpec::Uniform { tau_bar },
        );
        cfg.record_trajectory = true;
        let out = run(&p, &cfg).unwrap();
        (p, out.record, out.trajectory.unwrap())
    }

    #[test]
    fn no_delay_means_no_staleness() {
        let (p, rec, tr) = traced_run(1.0, 0, 100, 1);
        for r in compute_residuals(&rec, &tr, &p).unwrap() {
            assert_eq!(r.gamma, 0.0);
        }
    }

    #[test]
    fn noiseless_oracle_has_no_noise_term() {
        let (p, rec, tr) = traced_run(0.0, 3, 100, 1);
        for r in compute_residuals(&rec, &tr, &p).unwrap() {
            assert_eq!(r.sigma_term, 0.0);
            assert_eq!(r.zeta, 0.0);
        }
    }

    #[test]
    fn decomposition_holds_per_step_and_summed() {
        for seed in 0..5 {
            let (p, rec, tr) = traced_run(1.0, 4, 100, seed);
            let rows = gap_identity(&rec, &tr, &p, 1.0).unwrap();
            for row in &rows {
                let scale = row.first_line.abs().max(1.0);
                assert!(row.identity_error() <= 1e-8 * scale, "t={} err={}", row.t, row.identity_error());
                assert!(row.slack >= -1e-12);
                assert!(row.first_line <= row.second_line + 1e-10);
            }
            let gap: f64 = rows.iter().map(|r| r.gap).sum();
            let rhs: f64 = rows.iter().map(|r| r.second_line).sum();
            assert!(gap <= rhs);
        }
    }

    #[test]
    fn z_t_matches_logged_offsets() {
        let (p, rec, tr) = traced_run(1.0, 2, 50, 3);
        let res = compute_residuals(&rec, &tr, &p).unwrap();
        assert_eq!(res[0].z_t, None);
        for i in 1..res.len() {
            assert_eq!(res[i].z_t, Some(rec.rows[i].eta - rec.rows[i - 1].eta));
            assert!(res[i].sigma_term >= 0.0);
            assert!(res[i].r_t <= p.constants.unwrap().radius.powi(2));
        }
    }

    #[test]
    fn residuals_need_unit_alpha0_and_full_trajectory() {
        let (p, mut rec, mut tr) = traced_run(1.0, 2, 20, 3);
        tr.iterates.pop();
        assert!(compute_residuals(&rec, &tr, &p).is_err());
        let (_, _, tr) = traced_run(1.0, 2, 20, 3);
        rec.alpha0 = 0.5;
        assert!(matches!(compute_residuals(&rec, &tr, &p), Err(Error::Unsupported(_))));
    }

    #[test]
    fn theorem_bound_without_delay_or_noise() {
        let k = constants(2.0, 3.0, 1.5, 0.0);
        let b = theorem_bound(&k, &DelayModelSpec::Uniform { tau_bar: 0 }, 0.7, 1000).unwrap();
        let expected = 0.5 * (2.0 + 0.7) * 1.5 * 1.5 + 3.0 * 3.0 * 2.0 * 3.0 / (6.0 * 0.49) * 1000f64.ln();
        // Only the log term survives besides ½(L+c)R², since D2 does not vanish at tau_bar = 0.
        assert!((b - expected).abs() < 1e-9 * expected);
        let one = theorem_bound(&k, &DelayModelSpec::Uniform { tau_bar: 0 }, 0.7, 1).unwrap();
        assert!((one - 0.5 * 2.7 * 2.25).abs() < 1e-12);
    }

    #[test]
    fn theorem_bound_hand_evaluation() {
        let k = constants(1.0, 1.0, 1.0, 1.0);
        let got = theorem_bound(&k, &DelayModelSpec::Uniform { tau_bar: 1 }, 1.0, 100).unwrap();
        // Terms: (√2 + 1)·10, 7·2/6·ln 100, 1, 1, 1·2·9/(6·2).
        let hand = (2f64.sqrt() + 1.0) * 10.0 + 14.0 / 6.0 * 100f64.ln() + 1.0 + 1.0 + 18.0 / 12.0;
        assert!((got - hand).abs() < 1e-12 * hand, "{got} vs {hand}");
    }

    #[test]
    fn rate_constants_symbolic() {
        let k = constants(1.3, 0.8, 2.1, 0.6);
        let (c, tb) = (0.9, 3.0);
        let d = uniform_rate_constants(&k, c, tb);
        assert_eq!(d.d1, 2f64.sqrt() * c * 2.1 * 2.1 * tb + 0.36 / c);
        let t = 500u64;
        let full = theorem_bound(&k, &DelayModelSpec::Uniform { tau_bar: 3 }, c, t).unwrap();
        let from_d = d.d1 * (t as f64).sqrt() + d.d2 * (t as f64).ln() + d.d3;
        assert!((full - from_d).abs() < 1e-12 * full);

        let s = scaled_rate_constants(&k, c, tb, 0.4, 5.0);
        assert!((s.d5 - 0.64 * (25.0 + tb + 1.0) / (c * c * 0.6)).abs() < 1e-12);
    }

    #[test]
    fn scaled_theorem_bound() {
        let k = constants(1.0, 1.0, 1.0, 1.0);
        let m = |theta: f64| DelayModelSpec::Scaled {
            theta,
            tau_bar: 1.0,
            b: 2.0,
            family: ScaledFamily::ZeroInflatedGeometric,
        };
        assert!(theorem_bound(&k, &m(1.0), 1.0, 10).is_err());
        let got = theorem_bound(&k, &m(0.5), 1.0, 3).unwrap();
        let hand = 3f64.sqrt()
            + 0.5 * (2.0 / 3f64.sqrt() + 2.0 / 5f64.sqrt())
            + (1.0 + 4.0 / 4.0 + 4.0 / 1.0)
            + (6.0 / 1.5 + 6.0 / 2.0 + 6.0 / 2.5)
            + 1.0;
        assert!((got - hand).abs() < 1e-12, "{got} vs {hand}");
        assert!(theorem_bound(&k, &DelayModelSpec::Induced, 1.0, 3).is_err());
    }

    #[test]
    fn rate_fits() {
        let pts: Vec<RatePoint> = [10u64, 100, 1000, 10000]
            .iter()
            .map(|&t| RatePoint {
                steps: t,
                mean: (t as f64).powf(-0.5),
                stderr: 0.0,
            })
            .collect();
        let fit = fit_rate(&pts, 100, 0).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-9);
        let pts: Vec<RatePoint> = [10u64, 100, 1000]
            .iter()
            .map(|&t| RatePoint {
                steps: t,
                mean: 3.0 / t as f64,
                stderr: 0.01 / t as f64,
            })
            .collect();
        let fit = fit_rate(&pts, 500, 1).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!(fit.ci_low <= fit.slope && fit.slope <= fit.ci_high);
        assert!(fit_rate(&pts[..2], 10, 0).is_err());
    }

    #[test]
    fn sign_test_values() {
        // C(21,15) + ... + C(21,21) = 82160.
        assert!((sign_test(15, 21) - 82160.0 / 2f64.powi(21)).abs() < 1e-15);
        assert_eq!(sign_test(0, 10), 1.0);
        assert!((sign_test(10, 10) - 1.0 / 1024.0).abs() < 1e-18);
    }

    #[test]
    fn lemma_checks_need_enough_seeds_and_constants() {
        let (p, rec, tr) = traced_run(1.0, 1, 20, 0);
        let rows = compute_residuals(&rec, &tr, &p).unwrap();
        let fam = OffsetFamily { c: 1.0, beta: 0.5 };
        let model = DelayModelSpec::Uniform { tau_bar: 1 };
        assert!(check_lemma_bounds(std::slice::from_ref(&rows), p.constants.as_ref(), &model, fam).is_err());
        let many = vec![rows; MIN_SEEDS];
        assert!(check_lemma_bounds(&many, None, &model, fam).is_err());
        let report = check_lemma_bounds(&many, p.constants.as_ref(), &model, fam).unwrap();
        assert_eq!(report.checks.len(), 3);
        assert!(report.to_json().unwrap().contains("\"delta_sum\""));
    }
}
