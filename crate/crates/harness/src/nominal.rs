//! Exact oracle of the noise-free reactor.
//!
//! From two past costs and inputs the product concentrations follow directly,
//! `cB = (cA0 - l/u) / alpha`. One step of the sampled dynamics is affine in
//! the state for a fixed input, so the unmeasured `cA(k-2)` solves a scalar
//! linear equation, after which the state is propagated to time `k`. This is
//! the limit of an oracle that interpolates every point it is asked about,
//! and serves as the perfect oracle of the nominal experiments.

use empc_core::narx::{CostPredictor, PredictError, RegressorState};
use empc_core::plant::{integrate, PlantParams, PlantState};

#[derive(Debug, Clone)]
pub struct NominalOracle {
    pub params: PlantParams,
}

impl NominalOracle {
    pub fn new(params: PlantParams) -> Self {
        Self { params }
    }

    /// Reconstructed state `x(k)` behind the regressor `z(k)`.
    pub fn state(&self, z: &RegressorState) -> Result<PlantState, PredictError> {
        let p = &self.params;
        let (l, u) = (z.past_costs(), z.past_inputs());
        if l.len() < 2 || u.len() < 2 {
            return Err(PredictError::Other("needs n_a >= 2 and n_b >= 2".into()));
        }
        if p.alpha == 0.0 || u[0] <= 0.0 || u[1] <= 0.0 {
            return Err(PredictError::Other("product concentration is unobservable".into()));
        }
        let cb1 = (p.ca0 - l[0] / u[0]) / p.alpha;
        let cb2 = (p.ca0 - l[1] / u[1]) / p.alpha;
        // cB(k-1) = g0 + g_a cA(k-2) + g_b cB(k-2)
        let f = |ca, cb| integrate(PlantState::new(ca, cb), u[1], p);
        let base = f(0.0, 0.0);
        let ga = f(1.0, 0.0).cb - base.cb;
        let gb = f(0.0, 1.0).cb - base.cb;
        if ga.abs() < 1e-14 {
            return Err(PredictError::Other("feed concentration is unobservable".into()));
        }
        let ca2 = (cb1 - base.cb - gb * cb2) / ga;
        let x1 = f(ca2, cb2);
        Ok(integrate(x1, u[0], p))
    }
}

impl CostPredictor for NominalOracle {
    fn predict(&self, z: &RegressorState, u: &[f64]) -> Result<f64, PredictError> {
        let x = self.state(z)?;
        Ok(u[0] * (self.params.ca0 - self.params.alpha * x.cb))
    }
}
