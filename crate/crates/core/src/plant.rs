//! Continuously stirred tank reactor with the consecutive reactions A → B → C.
//!
//! The reactor is the ground truth for every experiment. Controllers built on
//! the cost oracle never call into this module; only the experiment harness
//! does, to advance the true state and to produce (noisy) cost measurements.
//!
//! Dynamics, with feed flow `u` as the manipulated input:
//!
//! ```text
//! dcA/dt = u/V (cA0 - cA) - k1 cA
//! dcB/dt = -u/V cB + k1 cA - k2 cB        (MinusCb, standard outflow)
//! dcB/dt = -u/V cA + k1 cA - k2 cB        (MinusCaAsPrinted)
//! ```
//!
//! The economic stage cost is `u (cA0 - alpha cB)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlantError {
    #[error("non-finite {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },
    #[error("negative flow rate {0}")]
    NegativeInput(f64),
    #[error("invalid plant parameters: {0}")]
    InvalidParams(String),
}

/// Which outflow term appears in the B balance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutflowVariant {
    /// `-(u/V) cB`: the outflow carries B out of the tank.
    #[default]
    MinusCb,
    /// `-(u/V) cA`: the term exactly as it appears in the printed model.
    MinusCaAsPrinted,
}

impl std::str::FromStr for OutflowVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "minus_cB" | "minus_cb" => Ok(Self::MinusCb),
            "minus_cA_as_printed" | "minus_ca_as_printed" => Ok(Self::MinusCaAsPrinted),
            other => Err(format!("unknown outflow variant '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantParams {
    /// A → B rate constant (1/min).
    pub k1: f64,
    /// B → C rate constant (1/min).
    pub k2: f64,
    /// Tank volume (m³).
    pub volume: f64,
    /// Feed concentration of A (kmol/m³).
    pub ca0: f64,
    /// Product value weight in the stage cost.
    pub alpha: f64,
    /// Sampling time (min).
    pub tau_s: f64,
    /// Smallest admissible flow (m³/min). The open bound `u > 0` is closed at a small epsilon.
    pub u_min: f64,
    /// Largest admissible flow (m³/min).
    pub u_max: f64,
    /// Standard deviation of the measurement noise relative to the measured value.
    pub noise_std_frac: f64,
    pub outflow: OutflowVariant,
    /// RK4 substeps per sampling interval.
    pub substeps: usize,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            k1: 1.0,
            k2: 0.05,
            volume: 1.0,
            ca0: 1.0,
            alpha: 4.0,
            tau_s: 0.25,
            u_min: 1e-6,
            u_max: 2.0,
            noise_std_frac: 0.02,
            outflow: OutflowVariant::MinusCb,
            substeps: 8,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            ("k1", self.k1),
            ("k2", self.k2),
            ("volume", self.volume),
            ("ca0", self.ca0),
            ("tau_s", self.tau_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PlantError::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.u_min >= 0.0 && self.u_min < self.u_max && self.u_max.is_finite()) {
            return Err(PlantError::InvalidParams(format!(
                "input bounds must satisfy 0 <= u_min < u_max, got [{}, {}]",
                self.u_min, self.u_max
            )));
        }
        if !(self.noise_std_frac >= 0.0 && self.noise_std_frac.is_finite()) {
            return Err(PlantError::InvalidParams(format!(
                "noise_std_frac must be >= 0, got {}",
                self.noise_std_frac
            )));
        }
        if !self.alpha.is_finite() {
            return Err(PlantError::InvalidParams("alpha must be finite".into()));
        }
        if self.substeps == 0 {
            return Err(PlantError::InvalidParams("substeps must be >= 1".into()));
        }
        Ok(())
    }

    /// Clamps `u` into the admissible input set.
    pub fn clamp_input(&self, u: f64) -> f64 {
        u.clamp(self.u_min, self.u_max)
    }
}

/// True concentrations (kmol/m³). Hidden from every oracle-based controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub ca: f64,
    pub cb: f64,
}

impl PlantState {
    pub fn new(ca: f64, cb: f64) -> Self {
        Self { ca, cb }
    }

    fn check(&self) -> Result<(), PlantError> {
        if !self.ca.is_finite() {
            return Err(PlantError::NonFinite { what: "cA", value: self.ca });
        }
        if !self.cb.is_finite() {
            return Err(PlantError::NonFinite { what: "cB", value: self.cb });
        }
        Ok(())
    }
}

fn derivative(s: PlantState, u: f64, p: &PlantParams) -> (f64, f64) {
    let dilution = u / p.volume;
    let dca = dilution * (p.ca0 - s.ca) - p.k1 * s.ca;
    let outflow = match p.outflow {
        OutflowVariant::MinusCb => s.cb,
        OutflowVariant::MinusCaAsPrinted => s.ca,
    };
    let dcb = -dilution * outflow + p.k1 * s.ca - p.k2 * s.cb;
    (dca, dcb)
}

/// Fixed-step RK4 over one sampling interval split into `substeps` pieces,
/// with no clipping and no validation.
///
/// The right-hand side is affine in the state for fixed `u`, and so is this map.
pub fn integrate(state: PlantState, u: f64, params: &PlantParams) -> PlantState {
    integrate_with(state, u, params, params.substeps)
}

pub(crate) fn integrate_with(
    state: PlantState,
    u: f64,
    params: &PlantParams,
    substeps: usize,
) -> PlantState {
    let h = params.tau_s / substeps as f64;
    let mut s = state;
    for _ in 0..substeps {
        let (a1, b1) = derivative(s, u, params);
        let s2 = PlantState::new(s.ca + 0.5 * h * a1, s.cb + 0.5 * h * b1);
        let (a2, b2) = derivative(s2, u, params);
        let s3 = PlantState::new(s.ca + 0.5 * h * a2, s.cb + 0.5 * h * b2);
        let (a3, b3) = derivative(s3, u, params);
        let s4 = PlantState::new(s.ca + h * a3, s.cb + h * b3);
        let (a4, b4) = derivative(s4, u, params);
        s = PlantState::new(
            s.ca + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
            s.cb + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4),
        );
    }
    s
}

/// Advances the reactor by one sampling period under constant flow `u`.
///
/// Concentrations that come out negative are clipped to zero.
pub fn step(state: PlantState, u: f64, params: &PlantParams) -> Result<PlantState, PlantError> {
    state.check()?;
    if !u.is_finite() {
        return Err(PlantError::NonFinite { what: "input", value: u });
    }
    if u < 0.0 {
        return Err(PlantError::NegativeInput(u));
    }
    let next = integrate(state, u, params);
    next.check()?;
    Ok(PlantState::new(next.ca.max(0.0), next.cb.max(0.0)))
}

/// Noise-free economic stage cost `u (cA0 - alpha cB)` in $/min.
pub fn stage_cost(state: PlantState, u: f64, params: &PlantParams) -> Result<f64, PlantError> {
    state.check()?;
    if !u.is_finite() {
        return Err(PlantError::NonFinite { what: "input", value: u });
    }
    Ok(u * (params.ca0 - params.alpha * state.cb))
}

/// Adds zero-mean Gaussian noise with standard deviation `noise_std_frac · |true_cost|`.
pub fn measure_cost<R: Rng + ?Sized>(true_cost: f64, rng: &mut R, params: &PlantParams) -> f64 {
    let sigma = params.noise_std_frac * true_cost.abs();
    if sigma == 0.0 || !sigma.is_finite() {
        return true_cost;
    }
    // sigma > 0 and finite, so construction cannot fail
    let normal = Normal::new(0.0, sigma).expect("valid noise law");
    true_cost + normal.sample(rng)
}

/// Algebraic equilibrium reached under constant flow `u`.
///
/// Returns `None` when no finite equilibrium exists (zero total outflow of B).
pub fn steady_state(u: f64, params: &PlantParams) -> Option<PlantState> {
    let v = params.volume;
    let ca = u * params.ca0 / (u + params.k1 * v);
    let cb = match params.outflow {
        OutflowVariant::MinusCb => params.k1 * ca * v / (u + params.k2 * v),
        OutflowVariant::MinusCaAsPrinted => ca * (params.k1 - u / v) / params.k2,
    };
    let s = PlantState::new(ca, cb);
    (s.ca.is_finite() && s.cb.is_finite()).then_some(s)
}

/// Stage cost at the equilibrium for flow `u`.
pub fn steady_cost(u: f64, params: &PlantParams) -> Option<f64> {
    steady_state(u, params).map(|s| u * (params.ca0 - params.alpha * s.cb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Matrix exponential of the u = 0 system: dcA = -k1 cA, dcB = k1 cA - k2 cB.
    fn linear_reference(t: f64, p: &PlantParams) -> PlantState {
        let ca = (-p.k1 * t).exp();
        let cb = p.k1 / (p.k2 - p.k1) * ((-p.k1 * t).exp() - (-p.k2 * t).exp());
        PlantState::new(ca, cb)
    }

    #[test]
    fn zero_flow_matches_matrix_exponential() {
        let p = PlantParams::default();
        let next = step(PlantState::new(1.0, 0.0), 1e-12, &p).unwrap();
        let reference = linear_reference(p.tau_s, &p);
        assert_abs_diff_eq!(next.ca, (-0.25f64).exp(), epsilon = 1e-6);
        assert_abs_diff_eq!(next.ca, reference.ca, epsilon = 1e-6);
        assert_abs_diff_eq!(next.cb, reference.cb, epsilon = 1e-6);
    }

    #[test]
    fn unit_flow_converges_to_algebraic_equilibrium() {
        let p = PlantParams::default();
        let mut s = PlantState::new(0.0, 0.0);
        for _ in 0..2000 {
            s = step(s, 1.0, &p).unwrap();
        }
        assert_abs_diff_eq!(s.ca, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(s.cb, 0.5 / 1.05, epsilon = 1e-9);
        assert_abs_diff_eq!(s.cb, 0.47619, epsilon = 1e-5);
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let params = PlantParams::default();
        for &u in &[0.05, 0.5, 1.043, 1.9] {
            let xs = steady_state(u, &params).unwrap();
            let next = step(xs, u, &params).unwrap();
            assert_abs_diff_eq!(next.ca, xs.ca, epsilon = 1e-12);
            assert_abs_diff_eq!(next.cb, xs.cb, epsilon = 1e-12);
        }
    }

    #[test]
    fn stage_cost_examples() {
        let p = PlantParams::default();
        assert_eq!(stage_cost(PlantState::new(0.3, 0.0), 1.0, &p).unwrap(), 1.0);
        let c = stage_cost(PlantState::new(0.5, 0.5 / 1.05), 1.0, &p).unwrap();
        assert_abs_diff_eq!(c, -0.904_761_904_761_904_7, epsilon = 1e-12);
        assert_abs_diff_eq!(c, -0.90476, epsilon = 1e-5);
        assert_eq!(stage_cost(PlantState::new(0.7, 0.9), 0.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let p = PlantParams::default();
        assert!(matches!(
            step(PlantState::new(f64::NAN, 0.0), 1.0, &p),
            Err(PlantError::NonFinite { what: "cA", .. })
        ));
        assert!(step(PlantState::new(0.0, 0.0), f64::INFINITY, &p).is_err());
        assert!(step(PlantState::new(0.0, 0.0), -0.1, &p).is_err());
        assert!(stage_cost(PlantState::new(0.0, f64::NAN), 1.0, &p).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = PlantParams::default();
        assert!(p.validate().is_ok());
        p.k1 = 0.0;
        assert!(p.validate().is_err());
        let p = PlantParams { u_min: 2.0, ..PlantParams::default() };
        assert!(p.validate().is_err());
        let p = PlantParams { noise_std_frac: -0.1, ..PlantParams::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn noiseless_measurement_is_identity() {
        let p = PlantParams { noise_std_frac: 0.0, ..PlantParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(measure_cost(-0.9, &mut rng, &p), -0.9);
    }

    #[test]
    fn noise_law_has_relative_std() {
        let p = PlantParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| measure_cost(-0.9, &mut rng, &p)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        assert!((std - 0.018).abs() <= 0.05 * 0.018, "std {std}");
        assert!((mean + 0.9).abs() < 1e-3);
    }

    #[test]
    fn measurement_is_reproducible() {
        let p = PlantParams::default();
        let a = measure_cost(-0.9, &mut ChaCha8Rng::seed_from_u64(5), &p);
        let b = measure_cost(-0.9, &mut ChaCha8Rng::seed_from_u64(5), &p);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn rk4_matches_fine_reference_over_input_range() {
        let p = PlantParams::default();
        for i in 1..=40 {
            let u = 2.0 * i as f64 / 40.0;
            for &(ca, cb) in &[(0.0, 0.0), (1.0, 0.0), (0.3, 0.8), (1.0, 1.0)] {
                let s = PlantState::new(ca, cb);
                let coarse = integrate(s, u, &p);
                let fine = integrate_with(s, u, &p, 100);
                assert!((coarse.ca - fine.ca).abs() <= 1e-6);
                assert!((coarse.cb - fine.cb).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn constant_input_reaches_closed_form_equilibrium() {
        let p = PlantParams::default();
        for &u in &[1e-3, 0.2, 1.0, 2.0] {
            let mut s = PlantState::new(0.4, 0.9);
            for _ in 0..2000 {
                s = step(s, u, &p).unwrap();
            }
            let xs = steady_state(u, &p).unwrap();
            assert!((s.ca - xs.ca).abs() <= 1e-6 && (s.cb - xs.cb).abs() <= 1e-6, "u={u}");
        }
    }

    #[test]
    fn cost_is_affine_in_cb_and_linear_in_u() {
        let p = PlantParams::default();
        let x = |cb| PlantState::new(0.2, cb);
        let c0 = stage_cost(x(0.0), 0.7, &p).unwrap();
        let c1 = stage_cost(x(0.25), 0.7, &p).unwrap();
        let c2 = stage_cost(x(0.5), 0.7, &p).unwrap();
        assert_abs_diff_eq!(c2 - c1, c1 - c0, epsilon = 1e-15);
        let d1 = stage_cost(x(0.3), 0.5, &p).unwrap();
        let d2 = stage_cost(x(0.3), 1.0, &p).unwrap();
        assert_abs_diff_eq!(d2, 2.0 * d1, epsilon = 1e-15);
    }

    #[test]
    fn printed_variant_is_selectable() {
        let p = PlantParams { outflow: OutflowVariant::MinusCaAsPrinted, ..Default::default() };
        let xs = steady_state(0.5, &p).unwrap();
        assert_abs_diff_eq!(xs.cb, xs.ca * 0.5 / 0.05, epsilon = 1e-12);
        let next = step(xs, 0.5, &p).unwrap();
        assert_abs_diff_eq!(next.cb, xs.cb, epsilon = 1e-10);
        assert_eq!("minus_cA_as_printed".parse::<OutflowVariant>(), Ok(OutflowVariant::MinusCaAsPrinted));
    }
}
