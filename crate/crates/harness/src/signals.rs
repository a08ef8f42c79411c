//! Excitation signals for identification and validation.

use anyhow::{bail, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Linear-frequency sweep `center + amplitude sin(2 pi phi(t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Chirp {
    /// Initial frequency (1/min).
    pub f0: f64,
    /// Final frequency (1/min).
    pub f1: f64,
    /// m³/min.
    pub amplitude: f64,
    /// m³/min.
    pub center: f64,
    pub n_samples: usize,
}

impl Default for Chirp {
    fn default() -> Self {
        Self { f0: 1e-6, f1: 0.3, amplitude: 1.0, center: 1.0, n_samples: 40_000 }
    }
}

/// Piecewise-constant steps with uniform levels and uniform hold times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Prbs {
    pub u_lo: f64,
    pub u_hi: f64,
    /// Shortest hold (min).
    pub min_hold: f64,
    /// Longest hold (min).
    pub max_hold: f64,
    pub n_samples: usize,
}

impl Default for Prbs {
    fn default() -> Self {
        Self { u_lo: 0.0, u_hi: 2.0, min_hold: 0.5, max_hold: 5.0, n_samples: 4_000 }
    }
}

/// Constant base flow with a one-sample pulse every `period` minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImpulseTrain {
    pub base: f64,
    pub magnitude: f64,
    /// min.
    pub period: f64,
    pub n_samples: usize,
}

impl Default for ImpulseTrain {
    fn default() -> Self {
        Self { base: 1.0, magnitude: 1.0, period: 10.0, n_samples: 400 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constant {
    pub value: f64,
    pub n_samples: usize,
}

impl Default for Constant {
    fn default() -> Self {
        Self { value: 1.0, n_samples: 400 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalSpec {
    Chirp(Chirp),
    PrbsSteps(Prbs),
    ImpulseTrain(ImpulseTrain),
    Constant(Constant),
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self::Chirp(Chirp::default())
    }
}

impl SignalSpec {
    pub fn default_validation() -> Self {
        Self::PrbsSteps(Prbs::default())
    }

    pub fn n_samples(&self) -> usize {
        match self {
            Self::Chirp(c) => c.n_samples,
            Self::PrbsSteps(p) => p.n_samples,
            Self::ImpulseTrain(i) => i.n_samples,
            Self::Constant(c) => c.n_samples,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Chirp(c) => {
                if !(c.f0 < c.f1) {
                    bail!("chirp needs f0 < f1, got {} and {}", c.f0, c.f1);
                }
            }
            Self::PrbsSteps(p) => {
                if !(p.u_lo <= p.u_hi) || !(p.min_hold > 0.0 && p.min_hold <= p.max_hold) {
                    bail!("prbs needs u_lo <= u_hi and 0 < min_hold <= max_hold");
                }
            }
            Self::ImpulseTrain(i) => {
                if !(i.period > 0.0) {
                    bail!("impulse period must be > 0");
                }
            }
            Self::Constant(_) => {}
        }
        if self.n_samples() == 0 {
            bail!("signal needs at least one sample");
        }
        Ok(())
    }
}

/// Samples the signal at `tau_s` and clips it into `[u_min, u_max]`.
pub fn gen_signal(spec: &SignalSpec, tau_s: f64, u_bounds: (f64, f64), seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    let (lo, hi) = u_bounds;
    let raw: Vec<f64> = match spec {
        SignalSpec::Chirp(c) => {
            let total = c.n_samples as f64 * tau_s;
            (0..c.n_samples)
                .map(|k| {
                    let t = k as f64 * tau_s;
                    let phase = c.f0 * t + (c.f1 - c.f0) * t * t / (2.0 * total);
                    c.center + c.amplitude * (2.0 * std::f64::consts::PI * phase).sin()
                })
                .collect()
        }
        SignalSpec::PrbsSteps(p) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let min_len = ((p.min_hold / tau_s).round() as usize).max(1);
            let max_len = ((p.max_hold / tau_s).round() as usize).max(min_len);
            let mut out = Vec::with_capacity(p.n_samples);
            while out.len() < p.n_samples {
                let level = if p.u_lo < p.u_hi { rng.random_range(p.u_lo..=p.u_hi) } else { p.u_lo };
                let hold = rng.random_range(min_len..=max_len);
                let take = hold.min(p.n_samples - out.len());
                out.extend(std::iter::repeat_n(level, take));
            }
            out
        }
        SignalSpec::ImpulseTrain(i) => {
            let every = ((i.period / tau_s).round() as usize).max(1);
            (0..i.n_samples).map(|k| if k % every == 0 { i.base + i.magnitude } else { i.base }).collect()
        }
        SignalSpec::Constant(c) => vec![c.value; c.n_samples],
    };
    Ok(raw.into_iter().map(|u| u.clamp(lo, hi)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const U: (f64, f64) = (1e-6, 2.0);

    #[test]
    fn reference_chirp() {
        let u = gen_signal(&SignalSpec::default(), 0.25, U, 0).unwrap();
        assert_eq!(u.len(), 40_000);
        assert!(u.iter().all(|&v| v > 0.0 && v <= 2.0));
        assert_eq!(u[0], 1.0);
        // independent evaluation of the swept phase at a late sample
        let k = 39_000usize;
        let t = k as f64 * 0.25;
        let phi = 1e-6 * t + (0.3 - 1e-6) * t * t / (2.0 * 10_000.0);
        let want = (1.0 + (2.0 * std::f64::consts::PI * phi).sin()).clamp(U.0, U.1);
        assert!((u[k] - want).abs() < 1e-12);
    }

    #[test]
    fn zero_amplitude_chirp_is_constant() {
        let spec = SignalSpec::Chirp(Chirp { amplitude: 0.0, n_samples: 100, ..Chirp::default() });
        let u = gen_signal(&spec, 0.25, U, 0).unwrap();
        assert!(u.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn chirp_needs_increasing_frequency() {
        let spec = SignalSpec::Chirp(Chirp { f0: 0.3, f1: 0.1, ..Chirp::default() });
        assert!(gen_signal(&spec, 0.25, U, 0).is_err());
    }

    #[test]
    fn prbs_holds_and_levels() {
        let u = gen_signal(&SignalSpec::default_validation(), 0.25, U, 7).unwrap();
        assert_eq!(u.len(), 4_000);
        // run lengths of all but the truncated last run lie in 2..=20 samples;
        // neighbouring holds can draw equal levels only with probability zero
        let mut runs = Vec::new();
        let mut len = 1;
        for w in u.windows(2) {
            if w[0] == w[1] {
                len += 1;
            } else {
                runs.push(len);
                len = 1;
            }
        }
        assert!(runs.len() > 100);
        assert!(runs.iter().all(|&r| (2..=20).contains(&r)), "{runs:?}");
        assert!(u.iter().all(|&v| (U.0..=U.1).contains(&v)));
        assert_eq!(u, gen_signal(&SignalSpec::default_validation(), 0.25, U, 7).unwrap());
        assert_ne!(u, gen_signal(&SignalSpec::default_validation(), 0.25, U, 8).unwrap());
    }

    #[test]
    fn impulse_train_period() {
        let spec = SignalSpec::ImpulseTrain(ImpulseTrain { n_samples: 100, ..ImpulseTrain::default() });
        let u = gen_signal(&spec, 0.25, U, 0).unwrap();
        let pulses: Vec<usize> = (0..100).filter(|&k| u[k] == 2.0).collect();
        assert_eq!(pulses, vec![0, 40, 80]);
    }
}
