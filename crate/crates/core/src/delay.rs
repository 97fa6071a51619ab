//! Stochastic delay processes, trace files and delay statistics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DelaySample, TimeIndex};

/// Distribution family used by the scaled model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaledFamily {
    /// Zero with probability `1 - w`, otherwise geometric on `{0, 1, ...}`
    /// with mean `mu`, where `mu = (B²/tau_bar - 1)/2` and `w = tau_bar/mu`.
    /// Requires `B² >= tau_bar + 2 tau_bar²`.
    #[default]
    ZeroInflatedGeometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayModelSpec {
    /// Uniform on `{0, ..., 2 tau_bar}`.
    Uniform { tau_bar: u64 },
    /// Delays bounded by `tau < theta t` with first moment `tau_bar` and
    /// second moment `b²`. The untruncated distribution has exactly these
    /// moments; truncation only matters while `theta t` is small.
    Scaled {
        theta: f64,
        tau_bar: f64,
        b: f64,
        #[serde(default)]
        family: ScaledFamily,
    },
    /// Rounded Gaussian restricted by rejection to `[0, min(cap, t - 1)]`.
    TruncatedGaussian { mean: f64, std: f64, cap: u64 },
    /// Replay of a recorded sequence; wraps around when exhausted.
    Trace { delays: Vec<u64> },
    /// Delays are produced by the simulator's event schedule.
    Induced,
}

impl DelayModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DelayModelSpec::Uniform { .. } | DelayModelSpec::Induced => Ok(()),
            DelayModelSpec::Scaled { theta, tau_bar, b, .. } => {
                if !(*theta > 0.0 && *theta < 1.0) {
                    return Err(Error::invalid("theta", format!("must lie in (0, 1), got {theta}")));
                }
                if !(tau_bar.is_finite() && *tau_bar >= 0.0) {
                    return Err(Error::invalid("tau_bar", "must be finite and nonnegative"));
                }
                if !b.is_finite() || b * b < tau_bar + 2.0 * tau_bar * tau_bar {
                    return Err(Error::invalid(
                        "b",
                        format!("B² = {} is below tau_bar + 2 tau_bar² = {}", b * b, tau_bar + 2.0 * tau_bar * tau_bar),
                    ));
                }
                Ok(())
            }
            DelayModelSpec::TruncatedGaussian { mean, std, .. } => {
                if !(mean.is_finite() && std.is_finite() && *std > 0.0) {
                    return Err(Error::invalid("std", "must be positive and finite"));
                }
                Ok(())
            }
            DelayModelSpec::Trace { delays } => {
                if delays.is_empty() {
                    return Err(Error::Empty("delay trace"));
                }
                Ok(())
            }
        }
    }

    /// Largest delay the model can produce at any `t`, if bounded.
    pub fn max_delay(&self) -> Option<u64> {
        match self {
            DelayModelSpec::Uniform { tau_bar } => Some(2 * tau_bar),
            DelayModelSpec::TruncatedGaussian { cap, .. } => Some(*cap),
            DelayModelSpec::Trace { delays } => delays.iter().copied().max(),
            DelayModelSpec::Scaled { .. } | DelayModelSpec::Induced => None,
        }
    }

    /// Mean delay `tau_bar` for the models that define one.
    pub fn tau_bar(&self) -> Option<f64> {
        match self {
            DelayModelSpec::Uniform { tau_bar } => Some(*tau_bar as f64),
            DelayModelSpec::Scaled { tau_bar, .. } => Some(*tau_bar),
            _ => None,
        }
    }
}

/// Draw one delay for apply time `t`. The second value reports whether the
/// draw had to be clamped to the available history.
pub fn sample_delay(
    model: &DelayModelSpec,
    t: TimeIndex,
    position: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(DelaySample, bool)> {
    let limit = t.get() - 1;
    let (tau, clamped) = match model {
        DelayModelSpec::Uniform { tau_bar } => {
            let hi = 2 * tau_bar;
            let top = hi.min(limit);
            (rng.random_range(0..=top), hi > limit)
        }
        DelayModelSpec::Scaled { theta, tau_bar, b, family } => {
            let ScaledFamily::ZeroInflatedGeometric = family;
            // Largest integer strictly below theta t.
            let m = ((theta * t.get() as f64).ceil() as u64).saturating_sub(1).min(limit);
            (sample_zig(*tau_bar, *b, m, rng), false)
        }
        DelayModelSpec::TruncatedGaussian { mean, std, cap } => {
            let top = (*cap).min(limit);
            let normal = Normal::new(*mean, *std).map_err(|e| Error::invalid("std", e.to_string()))?;
            let mut drawn = None;
            for _ in 0..10_000 {
                let z = normal.sample(rng).round();
                if z >= 0.0 && z <= top as f64 {
                    drawn = Some(z as u64);
                    break;
                }
            }
            match drawn {
                Some(v) => (v, false),
                // Essentially no mass on the allowed range: fall back to the
                // nearest endpoint and report it as a clamp.
                None => ((mean.round().max(0.0) as u64).min(top), true),
            }
        }
        DelayModelSpec::Trace { delays } => {
            if delays.is_empty() {
                return Err(Error::Empty("delay trace"));
            }
            let raw = delays[position % delays.len()];
            (raw.min(limit), raw > limit)
        }
        DelayModelSpec::Induced => {
            return Err(Error::Unsupported(
                "induced delays come from the simulator and cannot be sampled".into(),
            ))
        }
    };
    Ok((DelaySample::at(t, tau)?, clamped))
}

/// Zero-inflated geometric draw truncated to `{0, ..., m}` by exact inversion.
fn sample_zig(tau_bar: f64, b: f64, m: u64, rng: &mut ChaCha8Rng) -> u64 {
    if tau_bar <= 0.0 || m == 0 {
        return 0;
    }
    let mu = (b * b / tau_bar - 1.0) / 2.0;
    let w = tau_bar / mu;
    if rng.random::<f64>() >= w {
        return 0;
    }
    // P(X >= k) = q^k with q = mu/(1+mu); X = floor(ln U / ln q) for U in (0, 1].
    // Restricting U to (q^(m+1), 1] restricts X to {0, ..., m}.
    let q = mu / (1.0 + mu);
    let tail = q.powf(m as f64 + 1.0);
    let u = 1.0 - rng.random::<f64>() * (1.0 - tail);
    let x = (u.ln() / q.ln()).floor();
    if x.is_finite() && x >= 0.0 {
        (x as u64).min(m)
    } else {
        0
    }
}

/// A delay stream with its own RNG and clamp counter.
#[derive(Clone, Debug)]
pub struct DelayProcess {
    model: DelayModelSpec,
    rng: ChaCha8Rng,
    position: usize,
    clamps: u64,
}

impl DelayProcess {
    pub fn new(model: DelayModelSpec, rng: ChaCha8Rng) -> Result<Self> {
        model.validate()?;
        Ok(Self {
            model,
            rng,
            position: 0,
            clamps: 0,
        })
    }

    pub fn model(&self) -> &DelayModelSpec {
        &self.model
    }

    pub fn sample(&mut self, t: TimeIndex) -> Result<DelaySample> {
        let (sample, clamped) = sample_delay(&self.model, t, self.position, &mut self.rng)?;
        self.position += 1;
        self.clamps += clamped as u64;
        Ok(sample)
    }

    pub fn clamp_count(&self) -> u64 {
        self.clamps
    }
}

/// Read a trace file: one nonnegative integer per line. Blank lines are
/// skipped.
pub fn replay_trace(path: impl AsRef<Path>) -> Result<Vec<u64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        let v: u64 = tok.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: format!("`{tok}` is not a nonnegative integer"),
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Write delays one per line, newline-terminated.
pub fn write_trace(path: impl AsRef<Path>, delays: &[u64]) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for d in delays {
        writeln!(out, "{d}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayStats {
    pub histogram: BTreeMap<u64, u64>,
    pub count: u64,
    pub mean: f64,
    pub second_moment: f64,
    /// Draws clamped to the available history by the producing process.
    pub clamped: u64,
    /// Through-origin least-squares slope of `tau_t` on `t` over the early
    /// phase. `None` when the early phase is empty.
    pub theta_hat: Option<f64>,
    pub early_fraction: f64,
}

impl DelayStats {
    pub fn variance(&self) -> f64 {
        self.second_moment - self.mean * self.mean
    }

    /// Most frequent delay; ties go to the smaller value.
    pub fn mode(&self) -> Option<u64> {
        let mut best: Option<(u64, u64)> = None;
        for (&d, &c) in &self.histogram {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((d, c));
            }
        }
        best.map(|(d, _)| d)
    }
}

/// Statistics of a delay sequence whose `i`-th entry was applied at `t = i+1`.
pub fn delay_stats(samples: &[u64], early_fraction: f64) -> Result<DelayStats> {
    if samples.is_empty() {
        return Err(Error::Empty("delay samples"));
    }
    if !(early_fraction > 0.0 && early_fraction <= 1.0) {
        return Err(Error::invalid("early_fraction", "must lie in (0, 1]"));
    }
    let mut histogram = BTreeMap::new();
    let (mut s1, mut s2) = (0.0, 0.0);
    for &d in samples {
        *histogram.entry(d).or_insert(0) += 1;
        s1 += d as f64;
        s2 += (d as f64) * (d as f64);
    }
    let n = samples.len() as f64;
    let early = ((early_fraction * n).ceil() as usize).min(samples.len());
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &d) in samples[..early].iter().enumerate() {
        let t = (i + 1) as f64;
        num += t * d as f64;
        den += t * t;
    }
    Ok(DelayStats {
        histogram,
        count: samples.len() as u64,
        mean: s1 / n,
        second_moment: s2 / n,
        clamped: 0,
        theta_hat: (early > 0).then(|| num / den),
        early_fraction,
    })
}
