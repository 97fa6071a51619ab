//! Flat `key = value` experiment configuration.
//!
//! One key per line; `#` starts a comment; list values are comma separated.
//! Unknown keys, duplicate keys and keys that do not apply to the chosen
//! problem or delay kind are rejected.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `name` | `experiment` | subdirectory of `output_dir` |
//! | `output_dir` | `runs` | output root (overridden by `ADADELAY_OUTPUT_ROOT`) |
//! | `problem` | `quadratic` | `quadratic`, `logistic` or `libsvm` |
//! | `dim`, `sigma`, `radius`, `problem_seed` | `10`, `1`, `3`, `0` | quadratic instance |
//! | `placement` | `interior` | `interior` (with `x_star_norm`, default 1) or `boundary` (with `offset`, default 1) |
//! | `examples`, `features`, `nnz_per_row`, `zipf_exponent`, `weight_scale`, `problem_seed` | `10000`, `1000`, `20`, `0.8`, `1`, `0` | planted sparse logistic data |
//! | `test_examples` | `0` | held-out logistic examples used for AUC |
//! | `train_path`, `test_path`, `index_base` | none, none, `0` | libsvm files |
//! | `l2` | `0` | ridge weight for data problems |
//! | `policies` | `adadelay` | any of `adadelay`, `adadelay_coord`, `async_adagrad`, `adaptive_revision` |
//! | `c`, `beta` | `1`, `0.5` | scalar AdaDelay offset `c (t + tau)^beta` |
//! | `coord_bounds` | none | `m1, m2, warmup` clamp for `adadelay_coord` |
//! | `lipschitz` | `1` | the `L` in `alpha0 / (L + eta)` |
//! | `alpha0` | `1e-4, 3e-4, ..., 1` | grid searched per policy |
//! | `delay` | `uniform` | `uniform`, `scaled`, `gaussian`, `trace` or `simulator` |
//! | `tau_bar` | `0` | uniform and scaled mean delay |
//! | `theta`, `b` | required | scaled model |
//! | `mean`, `std`, `cap` | required | truncated Gaussian model |
//! | `trace_path` | required | trace replay |
//! | `workers`, `read_mean`, `service`, `service_mean`, `service_sigma` | `8`, `0`, `exponential`, `1`, none | simulator |
//! | `straggler_fraction`, `straggler_factors`, `early_fraction` | `0`, `1`, `0.05` | simulator |
//! | `steps` | required | horizons `T` |
//! | `seeds`, `master_seed` | `1`, `0` | run seeds derived from the master seed |
//! | `batch_size` | `1` | minibatch size |
//! | `parallelism` | `0` | worker threads, `0` for all cores |
//! | `select_by` | `gap` | best-alpha0 criterion: `gap` or `auc` |
//! | `diagnostics` | `false` | residual and bound report (quadratic, uniform or scaled delays) |
//! | `write_runs` | `true` | write one record per run |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::delay::{DelayModelSpec, ScaledFamily};
use crate::error::{Error, Result};
use crate::problems::{IndexBase, Placement, SparseLogisticSpec};
use crate::simulator::ServiceDist;
use crate::stepsize::{CoordBounds, PolicyKind};

/// Environment variable that replaces `output_dir`.
pub const OUTPUT_ROOT_ENV: &str = "ADADELAY_OUTPUT_ROOT";

/// Half-decade grid over `[1e-4, 1]`.
pub const DEFAULT_ALPHA0_GRID: [f64; 9] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    Quadratic {
        dim: usize,
        sigma: f64,
        radius: f64,
        placement: Placement,
        seed: u64,
    },
    Logistic {
        spec: SparseLogisticSpec,
        test_examples: usize,
        l2: f64,
    },
    Libsvm {
        train: PathBuf,
        test: Option<PathBuf>,
        base: IndexBase,
        l2: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatorConfig {
    pub workers: usize,
    pub read_time: ServiceDist,
    pub service_time: ServiceDist,
    pub straggler_fraction: f64,
    pub straggler_factors: Vec<f64>,
    pub early_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayConfig {
    Uniform { tau_bar: u64 },
    Scaled { theta: f64, tau_bar: f64, b: f64 },
    Gaussian { mean: f64, std: f64, cap: u64 },
    Trace { path: PathBuf },
    Simulator(SimulatorConfig),
}

impl DelayConfig {
    /// The sampled delay model, reading the trace file if needed. `None`
    /// for the simulator.
    pub fn model(&self) -> Result<Option<DelayModelSpec>> {
        Ok(Some(match self {
            DelayConfig::Uniform { tau_bar } => DelayModelSpec::Uniform { tau_bar: *tau_bar },
            DelayConfig::Scaled { theta, tau_bar, b } => DelayModelSpec::Scaled {
                theta: *theta,
                tau_bar: *tau_bar,
                b: *b,
                family: ScaledFamily::ZeroInflatedGeometric,
            },
            DelayConfig::Gaussian { mean, std, cap } => DelayModelSpec::TruncatedGaussian {
                mean: *mean,
                std: *std,
                cap: *cap,
            },
            DelayConfig::Trace { path } => DelayModelSpec::Trace {
                delays: crate::delay::replay_trace(path)?,
            },
            DelayConfig::Simulator(_) => return Ok(None),
        }))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    Gap,
    Auc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub problem: ProblemConfig,
    pub policies: Vec<PolicyKind>,
    pub lipschitz: f64,
    pub alpha0: Vec<f64>,
    pub delay: DelayConfig,
    pub steps: Vec<u64>,
    pub seeds: usize,
    pub master_seed: u64,
    pub batch_size: usize,
    pub parallelism: usize,
    pub select_by: Selection,
    pub diagnostics: bool,
    pub write_runs: bool,
}

struct Entry {
    line: usize,
    value: String,
}

/// Parsed `key = value` pairs that remember which keys were consumed.
struct KeyValues {
    entries: BTreeMap<String, Entry>,
    used: BTreeSet<String>,
}

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

impl KeyValues {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(line, format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(config_err("", format!("line {}: empty key", i + 1)));
            }
            let entry = Entry {
                line: i + 1,
                value: value.trim().to_string(),
            };
            if let Some(prev) = entries.insert(key.clone(), entry) {
                return Err(config_err(&key, format!("duplicate key (first on line {})", prev.line)));
            }
        }
        Ok(Self {
            entries,
            used: BTreeSet::new(),
        })
    }

    fn raw(&mut self, key: &str) -> Option<&str> {
        let e = self.entries.get(key)?;
        self.used.insert(key.to_string());
        Some(e.value.as_str())
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| config_err(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    fn get_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(key)?.ok_or_else(|| config_err(key, "required"))
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        let v = v.to_string();
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| config_err(key, format!("cannot parse `{s}`: {e}"))))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn finish(self) -> Result<()> {
        match self.entries.iter().find(|(k, _)| !self.used.contains(*k)) {
            Some((k, e)) => Err(config_err(k, format!("line {}: unknown or inapplicable key", e.line))),
            None => Ok(()),
        }
    }
}

fn parse_policy(name: &str, c: f64, beta: f64, bounds: Option<CoordBounds>) -> Result<PolicyKind> {
    Ok(match name {
        "adadelay" => PolicyKind::AdaDelay { c, beta },
        "adadelay_coord" => PolicyKind::AdaDelayCoord { bounds },
        "async_adagrad" => PolicyKind::AsyncAdaGrad,
        "adaptive_revision" => PolicyKind::AdaptiveRevision,
        other => return Err(config_err("policies", format!("unknown policy `{other}`"))),
    })
}

fn parse_service(kv: &mut KeyValues) -> Result<ServiceDist> {
    let kind = kv.get_or("service", "exponential".to_string())?;
    let mean: f64 = kv.get_or("service_mean", 1.0)?;
    Ok(match kind.as_str() {
        "exponential" => ServiceDist::Exponential { mean },
        "deterministic" => ServiceDist::Deterministic { value: mean },
        "lognormal" => {
            let sigma: f64 = kv.require("service_sigma")?;
            // Parameterized by its mean: mu = ln(mean) - sigma²/2.
            ServiceDist::LogNormal {
                mu: mean.ln() - 0.5 * sigma * sigma,
                sigma,
            }
        }
        other => return Err(config_err("service", format!("unknown distribution `{other}`"))),
    })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let name = kv.get_or("name", "experiment".to_string())?;
        let output_dir: PathBuf = kv.get_or("output_dir", PathBuf::from("runs"))?;

        let problem_kind = kv.get_or("problem", "quadratic".to_string())?;
        let problem = match problem_kind.as_str() {
            "quadratic" => {
                let placement = match kv.get_or("placement", "interior".to_string())?.as_str() {
                    "interior" => Placement::Interior {
                        x_star_norm: kv.get_or("x_star_norm", 1.0)?,
                    },
                    "boundary" => Placement::Boundary {
                        offset: kv.get_or("offset", 1.0)?,
                    },
                    other => return Err(config_err("placement", format!("unknown placement `{other}`"))),
                };
                ProblemConfig::Quadratic {
                    dim: kv.get_or("dim", 10)?,
                    sigma: kv.get_or("sigma", 1.0)?,
                    radius: kv.get_or("radius", 3.0)?,
                    placement,
                    seed: kv.get_or("problem_seed", 0)?,
                }
            }
            "logistic" => {
                let d = SparseLogisticSpec::default();
                ProblemConfig::Logistic {
                    spec: SparseLogisticSpec {
                        examples: kv.get_or("examples", d.examples)?,
                        features: kv.get_or("features", d.features)?,
                        nnz_per_row: kv.get_or("nnz_per_row", d.nnz_per_row)?,
                        zipf_exponent: kv.get_or("zipf_exponent", d.zipf_exponent)?,
                        weight_scale: kv.get_or("weight_scale", d.weight_scale)?,
                        seed: kv.get_or("problem_seed", 0)?,
                    },
                    test_examples: kv.get_or("test_examples", 0)?,
                    l2: kv.get_or("l2", 0.0)?,
                }
            }
            "libsvm" => ProblemConfig::Libsvm {
                train: kv.require("train_path")?,
                test: kv.get("test_path")?,
                base: match kv.get_or("index_base", 0u8)? {
                    0 => IndexBase::Zero,
                    1 => IndexBase::One,
                    other => return Err(config_err("index_base", format!("must be 0 or 1, got {other}"))),
                },
                l2: kv.get_or("l2", 0.0)?,
            },
            other => return Err(config_err("problem", format!("unknown problem `{other}`"))),
        };

        let c: f64 = kv.get_or("c", 1.0)?;
        let beta: f64 = kv.get_or("beta", 0.5)?;
        let bounds = match kv.list::<f64>("coord_bounds")? {
            None => None,
            Some(v) if v.len() == 3 && v[2] >= 0.0 && v[2].fract() == 0.0 => Some(CoordBounds {
                m1: v[0],
                m2: v[1],
                warmup: v[2] as u64,
            }),
            Some(_) => return Err(config_err("coord_bounds", "expected `m1, m2, warmup`")),
        };
        let names = kv.list::<String>("policies")?.unwrap_or_else(|| vec!["adadelay".into()]);
        let policies = names
            .iter()
            .map(|n| parse_policy(n, c, beta, bounds))
            .collect::<Result<Vec<_>>>()?;

        let delay_kind = kv.get_or("delay", "uniform".to_string())?;
        let delay = match delay_kind.as_str() {
            "uniform" => DelayConfig::Uniform {
                tau_bar: kv.get_or("tau_bar", 0)?,
            },
            "scaled" => DelayConfig::Scaled {
                theta: kv.require("theta")?,
                tau_bar: kv.get_or("tau_bar", 0.0)?,
                b: kv.require("b")?,
            },
            "gaussian" => DelayConfig::Gaussian {
                mean: kv.require("mean")?,
                std: kv.require("std")?,
                cap: kv.require("cap")?,
            },
            "trace" => DelayConfig::Trace {
                path: kv.require("trace_path")?,
            },
            "simulator" => {
                let read_mean: f64 = kv.get_or("read_mean", 0.0)?;
                DelayConfig::Simulator(SimulatorConfig {
                    workers: kv.get_or("workers", 8)?,
                    read_time: if read_mean == 0.0 {
                        ServiceDist::Deterministic { value: 0.0 }
                    } else {
                        ServiceDist::Exponential { mean: read_mean }
                    },
                    service_time: parse_service(&mut kv)?,
                    straggler_fraction: kv.get_or("straggler_fraction", 0.0)?,
                    straggler_factors: kv.list("straggler_factors")?.unwrap_or_else(|| vec![1.0]),
                    early_fraction: kv.get_or("early_fraction", 0.05)?,
                })
            }
            other => return Err(config_err("delay", format!("unknown delay kind `{other}`"))),
        };

        let select_by = match kv.get_or("select_by", "gap".to_string())?.as_str() {
            "gap" => Selection::Gap,
            "auc" => Selection::Auc,
            other => return Err(config_err("select_by", format!("expected `gap` or `auc`, got `{other}`"))),
        };
        let cfg = ExperimentConfig {
            name,
            output_dir,
            problem,
            policies,
            lipschitz: kv.get_or("lipschitz", 1.0)?,
            alpha0: kv.list("alpha0")?.unwrap_or_else(|| DEFAULT_ALPHA0_GRID.to_vec()),
            delay,
            steps: kv.list("steps")?.ok_or_else(|| config_err("steps", "required"))?,
            seeds: kv.get_or("seeds", 1)?,
            master_seed: kv.get_or("master_seed", 0)?,
            batch_size: kv.get_or("batch_size", 1)?,
            parallelism: kv.get_or("parallelism", 0)?,
            select_by,
            diagnostics: kv.get_or("diagnostics", false)?,
            write_runs: kv.get_or("write_runs", true)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Check ranges and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(config_err("name", "must be a nonempty single path component"));
        }
        if self.policies.is_empty() {
            return Err(config_err("policies", "at least one policy"));
        }
        if self.alpha0.is_empty() || self.alpha0.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(config_err("alpha0", "nonempty list of positive values"));
        }
        let mut sorted = self.alpha0.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if sorted.len() != self.alpha0.len() {
            return Err(config_err("alpha0", "values must be distinct"));
        }
        if self.steps.is_empty() || self.steps.contains(&0) {
            return Err(config_err("steps", "nonempty list of positive horizons"));
        }
        let distinct: BTreeSet<u64> = self.steps.iter().copied().collect();
        if distinct.len() != self.steps.len() {
            return Err(config_err("steps", "horizons must be distinct"));
        }
        if self.seeds == 0 {
            return Err(config_err("seeds", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size", "must be at least 1"));
        }
        if !(self.lipschitz.is_finite() && self.lipschitz > 0.0) {
            return Err(config_err("lipschitz", "must be positive"));
        }
        let names: BTreeSet<&str> = self.policies.iter().map(|p| p.name()).collect();
        if names.len() != self.policies.len() {
            return Err(config_err("policies", "each policy may appear once"));
        }
        for p in &self.policies {
            crate::stepsize::PolicySpec {
                kind: *p,
                lipschitz: self.lipschitz,
                alpha0: 1.0,
            }
            .validate()
            .map_err(|e| config_err("policies", e.to_string()))?;
        }
        let must_exist = |key: &str, p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(config_err(key, format!("file {} does not exist", p.display())))
            }
        };
        match &self.problem {
            ProblemConfig::Libsvm { train, test, .. } => {
                must_exist("train_path", train)?;
                if let Some(t) = test {
                    must_exist("test_path", t)?;
                }
            }
            ProblemConfig::Quadratic { dim, .. } if *dim == 0 => return Err(config_err("dim", "must be positive")),
            _ => {}
        }
        match &self.delay {
            DelayConfig::Trace { path } => must_exist("trace_path", path)?,
            DelayConfig::Simulator(s) => {
                if s.workers == 0 {
                    return Err(config_err("workers", "must be positive"));
                }
                if !(s.early_fraction > 0.0 && s.early_fraction <= 1.0) {
                    return Err(config_err("early_fraction", "must lie in (0, 1]"));
                }
            }
            other => {
                if let Some(model) = other.model()? {
                    model.validate().map_err(|e| config_err("delay", e.to_string()))?;
                }
            }
        }
        if self.select_by == Selection::Auc && !self.has_test_set() {
            return Err(config_err("select_by", "`auc` needs a labeled test set"));
        }
        Ok(())
    }

    pub fn has_test_set(&self) -> bool {
        match &self.problem {
            ProblemConfig::Logistic { test_examples, .. } => *test_examples > 0,
            ProblemConfig::Libsvm { test, .. } => test.is_some(),
            ProblemConfig::Quadratic { .. } => false,
        }
    }

    /// `output_dir/name`, with `output_dir` replaced by the environment
    /// override when set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output_dir.clone());
        root.join(&self.name)
    }

    /// Canonical text form; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut out: Vec<(&str, String)> = vec![
            ("name", self.name.clone()),
            ("output_dir", self.output_dir.display().to_string()),
        ];
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        match &self.problem {
            ProblemConfig::Quadratic {
                dim,
                sigma,
                radius,
                placement,
                seed,
            } => {
                out.push(("problem", "quadratic".into()));
                out.push(("dim", dim.to_string()));
                out.push(("sigma", sigma.to_string()));
                out.push(("radius", radius.to_string()));
                match placement {
                    Placement::Interior { x_star_norm } => {
                        out.push(("placement", "interior".into()));
                        out.push(("x_star_norm", x_star_norm.to_string()));
                    }
                    Placement::Boundary { offset } => {
                        out.push(("placement", "boundary".into()));
                        out.push(("offset", offset.to_string()));
                    }
                }
                out.push(("problem_seed", seed.to_string()));
            }
            ProblemConfig::Logistic { spec, test_examples, l2 } => {
                out.push(("problem", "logistic".into()));
                out.push(("examples", spec.examples.to_string()));
                out.push(("features", spec.features.to_string()));
                out.push(("nnz_per_row", spec.nnz_per_row.to_string()));
                out.push(("zipf_exponent", spec.zipf_exponent.to_string()));
                out.push(("weight_scale", spec.weight_scale.to_string()));
                out.push(("problem_seed", spec.seed.to_string()));
                out.push(("test_examples", test_examples.to_string()));
                out.push(("l2", l2.to_string()));
            }
            ProblemConfig::Libsvm { train, test, base, l2 } => {
                out.push(("problem", "libsvm".into()));
                out.push(("train_path", train.display().to_string()));
                if let Some(t) = test {
                    out.push(("test_path", t.display().to_string()));
                }
                out.push(("index_base", if *base == IndexBase::One { "1" } else { "0" }.into()));
                out.push(("l2", l2.to_string()));
            }
        }
        out.push((
            "policies",
            self.policies.iter().map(|p| p.name()).collect::<Vec<_>>().join(", "),
        ));
        // Scalar offset parameters and clamp bounds are shared by every
        // policy entry of the same kind.
        let (mut c, mut beta, mut bounds) = (1.0, 0.5, None);
        for p in &self.policies {
            match p {
                PolicyKind::AdaDelay { c: pc, beta: pb } => {
                    c = *pc;
                    beta = *pb;
                }
                PolicyKind::AdaDelayCoord { bounds: b } => bounds = *b,
                _ => {}
            }
        }
        out.push(("c", c.to_string()));
        out.push(("beta", beta.to_string()));
        if let Some(b) = bounds {
            out.push(("coord_bounds", format!("{}, {}, {}", b.m1, b.m2, b.warmup)));
        }
        out.push(("lipschitz", self.lipschitz.to_string()));
        out.push(("alpha0", join(&self.alpha0)));
        match &self.delay {
            DelayConfig::Uniform { tau_bar } => {
                out.push(("delay", "uniform".into()));
                out.push(("tau_bar", tau_bar.to_string()));
            }
            DelayConfig::Scaled { theta, tau_bar, b } => {
                out.push(("delay", "scaled".into()));
                out.push(("theta", theta.to_string()));
                out.push(("tau_bar", tau_bar.to_string()));
                out.push(("b", b.to_string()));
            }
            DelayConfig::Gaussian { mean, std, cap } => {
                out.push(("delay", "gaussian".into()));
                out.push(("mean", mean.to_string()));
                out.push(("std", std.to_string()));
                out.push(("cap", cap.to_string()));
            }
            DelayConfig::Trace { path } => {
                out.push(("delay", "trace".into()));
                out.push(("trace_path", path.display().to_string()));
            }
            DelayConfig::Simulator(s) => {
                out.push(("delay", "simulator".into()));
                out.push(("workers", s.workers.to_string()));
                out.push(("read_mean", s.read_time.mean().to_string()));
                match s.service_time {
                    ServiceDist::Exponential { mean } => {
                        out.push(("service", "exponential".into()));
                        out.push(("service_mean", mean.to_string()));
                    }
                    ServiceDist::Deterministic { value } => {
                        out.push(("service", "deterministic".into()));
                        out.push(("service_mean", value.to_string()));
                    }
                    ServiceDist::LogNormal { sigma, .. } => {
                        out.push(("service", "lognormal".into()));
                        out.push(("service_mean", s.service_time.mean().to_string()));
                        out.push(("service_sigma", sigma.to_string()));
                    }
                }
                out.push(("straggler_fraction", s.straggler_fraction.to_string()));
                out.push(("straggler_factors", join(&s.straggler_factors)));
                out.push(("early_fraction", s.early_fraction.to_string()));
            }
        }
        out.push(("steps", self.steps.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(", ")));
        out.push(("seeds", self.seeds.to_string()));
        out.push(("master_seed", self.master_seed.to_string()));
        out.push(("batch_size", self.batch_size.to_string()));
        out.push(("parallelism", self.parallelism.to_string()));
        out.push((
            "select_by",
            match self.select_by {
                Selection::Gap => "gap",
                Selection::Auc => "auc",
            }
            .into(),
        ));
        out.push(("diagnostics", self.diagnostics.to_string()));
        out.push(("write_runs", self.write_runs.to_string()));
        let mut text = String::new();
        for (k, v) in out {
            text.push_str(k);
            text.push_str(" = ");
            text.push_str(&v);
            text.push('\n');
        }
        text
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "steps = 10\n";

    #[test]
    fn defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.steps, vec![10]);
        assert_eq!(c.seeds, 1);
        assert_eq!(c.alpha0, DEFAULT_ALPHA0_GRID.to_vec());
        assert_eq!(c.policies, vec![PolicyKind::AdaDelay { c: 1.0, beta: 0.5 }]);
        assert_eq!(c.delay, DelayConfig::Uniform { tau_bar: 0 });
    }

    #[test]
    fn round_trip_of_every_variant() {
        let texts = [
            "name = a\nsteps = 10, 100\nalpha0 = 0.0001, 0.3\npolicies = adadelay, adadelay_coord, async_adagrad, adaptive_revision\ncoord_bounds = 0.1, 10, 5\nbeta = 0.25\nc = 0.7\n",
            "problem = quadratic\nplacement = boundary\noffset = 0.5\ndelay = scaled\ntheta = 0.5\ntau_bar = 2\nb = 4\nsteps = 5\n",
            "problem = logistic\nexamples = 100\nfeatures = 20\nnnz_per_row = 3\ntest_examples = 10\nselect_by = auc\ndelay = simulator\nworkers = 4\nservice = lognormal\nservice_sigma = 0.5\nstraggler_fraction = 0.5\nstraggler_factors = 1, 4\nsteps = 5\n",
            "delay = gaussian\nmean = 3\nstd = 1\ncap = 9\nsteps = 5\nseeds = 3\nmaster_seed = 99\nparallelism = 2\ndiagnostics = true\nwrite_runs = false\n",
        ];
        for t in texts {
            let c = ExperimentConfig::parse(t).unwrap();
            let again = ExperimentConfig::parse(&c.to_text()).unwrap();
            assert_eq!(c, again, "{}", c.to_text());
            assert_eq!(c.to_text(), again.to_text());
        }
    }

    #[test]
    fn comments_and_whitespace() {
        let c = ExperimentConfig::parse("# header\n  steps =  10 , 20 # trailing\n\n").unwrap();
        assert_eq!(c.steps, vec![10, 20]);
    }

    #[test]
    fn rejects_bad_input() {
        let bad = [
            "",
            "steps = 0",
            "steps = 10, 10",
            "steps = 10\nsteps = 20",
            "steps = 10\nbogus = 1",
            "steps = 10\ntheta = 0.5",
            "steps = 10\npolicies = sgd",
            "steps = 10\nalpha0 = -1",
            "steps = ten",
            "just text",
            "steps = 10\ndelay = trace\ntrace_path = /nonexistent/trace.txt",
            "steps = 10\nproblem = libsvm\ntrain_path = /nonexistent/train.svm",
            "steps = 10\nselect_by = auc",
            "steps = 10\ndelay = scaled\ntheta = 1.5\nb = 3\ntau_bar = 1",
        ];
        for t in bad {
            assert!(
                matches!(ExperimentConfig::parse(t), Err(Error::Config { .. })),
                "accepted: {t:?}"
            );
        }
    }

    #[test]
    fn output_dir_override() {
        let c = ExperimentConfig::parse("name = x\noutput_dir = base\nsteps = 1").unwrap();
        // The variable is process-global; only read it here.
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            None => assert_eq!(c.resolved_output_dir(), PathBuf::from("base/x")),
            Some(root) => assert_eq!(c.resolved_output_dir(), PathBuf::from(root).join("x")),
        }
    }
}
