//! Regressor state of the cost oracle and the state-space prediction model built on it.
//!
//! The regressor at time `k` holds the last `n_a` measured costs and the last
//! `n_b` inputs, newest first:
//!
//! ```text
//! z(k) = (l(k-1), ..., l(k-n_a), u(k-1), ..., u(k-n_b))
//! ```
//!
//! Flattening is always costs-then-inputs, newest first within each block. A
//! query to the oracle appends the current input, so `q = (z, u)` has
//! `n_a + m·n_b + m` coordinates. Distance metrics in [`crate::oracle`] rely on
//! this order.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NarxError {
    #[error("invalid regressor structure: {0}")]
    InvalidSpec(String),
    #[error("regressor dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite regressor entry")]
    NonFinite,
    #[error("input sequence is empty or not a multiple of the input dimension")]
    BadInputSequence,
    #[error("history too short: need {needed} samples, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("oracle failed at prediction step {step}: {source}")]
    Oracle {
        step: usize,
        #[source]
        source: PredictError,
    },
    #[error("cost evaluation failed at history index {index}: {message}")]
    Cost { index: usize, message: String },
}

/// Failure of a single oracle evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error("oracle dataset is empty")]
    EmptyDataset,
    #[error("query dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("{0}")]
    Other(String),
}

/// Memory horizons of the NARX structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RegressorSpec {
    /// Number of past costs.
    pub n_a: usize,
    /// Number of past inputs.
    pub n_b: usize,
    /// Input dimension.
    pub m: usize,
}

impl Default for RegressorSpec {
    fn default() -> Self {
        Self { n_a: 3, n_b: 2, m: 1 }
    }
}

impl RegressorSpec {
    pub fn new(n_a: usize, n_b: usize, m: usize) -> Result<Self, NarxError> {
        if n_a == 0 || n_b == 0 || m == 0 {
            return Err(NarxError::InvalidSpec(format!(
                "n_a, n_b and m must all be >= 1 (got n_a={n_a}, n_b={n_b}, m={m})"
            )));
        }
        Ok(Self { n_a, n_b, m })
    }

    /// Single-input structure.
    pub fn siso(n_a: usize, n_b: usize) -> Result<Self, NarxError> {
        Self::new(n_a, n_b, 1)
    }

    /// Dimension of `z`, `n_a + m·n_b`.
    pub fn state_dim(&self) -> usize {
        self.n_a + self.m * self.n_b
    }

    /// Dimension of an oracle query `(z, u)`.
    pub fn query_dim(&self) -> usize {
        self.state_dim() + self.m
    }

    /// Samples of history needed to fill a regressor, `max(n_a, n_b)`.
    pub fn memory(&self) -> usize {
        self.n_a.max(self.n_b)
    }
}

/// Oracle state `z(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorState {
    spec: RegressorSpec,
    past_costs: Vec<f64>,
    past_inputs: Vec<f64>,
}

impl RegressorState {
    pub fn new(
        spec: RegressorSpec,
        past_costs: Vec<f64>,
        past_inputs: Vec<f64>,
    ) -> Result<Self, NarxError> {
        if past_costs.len() != spec.n_a {
            return Err(NarxError::Dimension { expected: spec.n_a, got: past_costs.len() });
        }
        if past_inputs.len() != spec.m * spec.n_b {
            return Err(NarxError::Dimension {
                expected: spec.m * spec.n_b,
                got: past_inputs.len(),
            });
        }
        if past_costs.iter().chain(&past_inputs).any(|v| !v.is_finite()) {
            return Err(NarxError::NonFinite);
        }
        Ok(Self { spec, past_costs, past_inputs })
    }

    /// Steady regressor `(l, ..., l, u, ..., u)`.
    pub fn steady(spec: RegressorSpec, cost: f64, u: &[f64]) -> Self {
        debug_assert_eq!(u.len(), spec.m);
        let past_inputs = (0..spec.n_b).flat_map(|_| u.iter().copied()).collect();
        Self { spec, past_costs: vec![cost; spec.n_a], past_inputs }
    }

    /// Rebuilds a regressor from its flattened form.
    pub fn from_flat(spec: RegressorSpec, flat: &[f64]) -> Result<Self, NarxError> {
        if flat.len() != spec.state_dim() {
            return Err(NarxError::Dimension { expected: spec.state_dim(), got: flat.len() });
        }
        Self::new(spec, flat[..spec.n_a].to_vec(), flat[spec.n_a..].to_vec())
    }

    pub fn spec(&self) -> RegressorSpec {
        self.spec
    }

    /// `l(k-1), ..., l(k-n_a)`.
    pub fn past_costs(&self) -> &[f64] {
        &self.past_costs
    }

    /// `u(k-1), ..., u(k-n_b)`, each block of length `m`.
    pub fn past_inputs(&self) -> &[f64] {
        &self.past_inputs
    }

    /// Flattened `z`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.spec.state_dim());
        v.extend_from_slice(&self.past_costs);
        v.extend_from_slice(&self.past_inputs);
        v
    }

    /// Writes the query vector `(z, u)` into `buf`, replacing its contents.
    pub fn write_query(&self, u: &[f64], buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend_from_slice(&self.past_costs);
        buf.extend_from_slice(&self.past_inputs);
        buf.extend_from_slice(u);
    }

    pub fn query(&self, u: &[f64]) -> Vec<f64> {
        let mut buf = Vec::with_capacity(self.spec.query_dim());
        self.write_query(u, &mut buf);
        buf
    }

    /// One step of the prediction model: pushes `lhat` and `u` in as the newest entries.
    pub fn shift(&self, u: &[f64], lhat: f64) -> Self {
        let mut next = self.clone();
        next.shift_in_place(u, lhat);
        next
    }

    pub fn shift_in_place(&mut self, u: &[f64], lhat: f64) {
        debug_assert_eq!(u.len(), self.spec.m);
        self.past_costs.rotate_right(1);
        self.past_costs[0] = lhat;
        let m = self.spec.m;
        self.past_inputs.rotate_right(m);
        self.past_inputs[..m].copy_from_slice(u);
    }
}

/// Anything that maps `(z, u)` to a predicted cost.
pub trait CostPredictor {
    fn predict(&self, z: &RegressorState, u: &[f64]) -> Result<f64, PredictError>;
}

impl<T: CostPredictor + ?Sized> CostPredictor for &T {
    fn predict(&self, z: &RegressorState, u: &[f64]) -> Result<f64, PredictError> {
        (**self).predict(z, u)
    }
}

/// Adapter turning an infallible closure into a [`CostPredictor`].
pub struct FnPredictor<F>(pub F);

impl<F: Fn(&RegressorState, &[f64]) -> f64> CostPredictor for FnPredictor<F> {
    fn predict(&self, z: &RegressorState, u: &[f64]) -> Result<f64, PredictError> {
        Ok((self.0)(z, u))
    }
}

/// Predicted regressors, costs and applied inputs over a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedTrajectory {
    /// `z(0|k) ... z(Np|k)`.
    pub states: Vec<RegressorState>,
    /// `l(0|k) ... l(Np-1|k)`.
    pub costs: Vec<f64>,
    /// Flattened input sequence, `m` values per step.
    pub inputs: Vec<f64>,
}

impl PredictedTrajectory {
    pub fn horizon(&self) -> usize {
        self.costs.len()
    }

    pub fn terminal(&self) -> &RegressorState {
        self.states.last().expect("trajectory always holds z(0|k)")
    }
}

/// Iterates the prediction model from `z0` under the flattened input sequence `inputs`.
pub fn rollout<P: CostPredictor + ?Sized>(
    z0: &RegressorState,
    inputs: &[f64],
    oracle: &P,
) -> Result<PredictedTrajectory, NarxError> {
    let m = z0.spec.m;
    if inputs.is_empty() || inputs.len() % m != 0 {
        return Err(NarxError::BadInputSequence);
    }
    let steps = inputs.len() / m;
    let mut states = Vec::with_capacity(steps + 1);
    let mut costs = Vec::with_capacity(steps);
    states.push(z0.clone());
    for (j, u) in inputs.chunks_exact(m).enumerate() {
        let z = &states[j];
        let lhat = oracle
            .predict(z, u)
            .map_err(|source| NarxError::Oracle { step: j, source })?;
        let next = z.shift(u, lhat);
        costs.push(lhat);
        states.push(next);
    }
    Ok(PredictedTrajectory { states, costs, inputs: inputs.to_vec() })
}

/// Regressor consistent with a plant trajectory.
///
/// `states[i]` and `inputs[i·m..(i+1)·m]` are the state and input at time
/// `k - h + i`, where `h = states.len()`; the returned regressor is `z(k)`.
pub fn consistent_state<X, E, F>(
    states: &[X],
    inputs: &[f64],
    spec: RegressorSpec,
    mut cost_fn: F,
) -> Result<RegressorState, NarxError>
where
    F: FnMut(&X, &[f64]) -> Result<f64, E>,
    E: std::fmt::Display,
{
    let h = states.len();
    if inputs.len() != h * spec.m {
        return Err(NarxError::Dimension { expected: h * spec.m, got: inputs.len() });
    }
    if h < spec.memory() {
        return Err(NarxError::InsufficientHistory { needed: spec.memory(), got: h });
    }
    let m = spec.m;
    let mut costs = Vec::with_capacity(spec.n_a);
    for back in 1..=spec.n_a {
        let i = h - back;
        let c = cost_fn(&states[i], &inputs[i * m..(i + 1) * m])
            .map_err(|e| NarxError::Cost { index: i, message: e.to_string() })?;
        costs.push(c);
    }
    let mut past_inputs = Vec::with_capacity(m * spec.n_b);
    for back in 1..=spec.n_b {
        let i = h - back;
        past_inputs.extend_from_slice(&inputs[i * m..(i + 1) * m]);
    }
    RegressorState::new(spec, costs, past_inputs)
}
