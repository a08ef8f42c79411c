//! Open-loop simulation of the reactor and assembly of oracle datasets.

use anyhow::{bail, Result};
use empc_core::narx::{RegressorSpec, RegressorState};
use empc_core::oracle::{Dataset, Sample, SampleTag};
use empc_core::plant::{measure_cost, stage_cost, step, PlantParams, PlantState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Derives an independent seed for stream `stream`, item `index`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.set_word_pos(2 * index as u128);
    rng.random()
}

/// Open-loop trajectory: `states[k]` is the state at which `inputs[k]` is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub states: Vec<PlantState>,
    pub inputs: Vec<f64>,
    pub true_costs: Vec<f64>,
    pub measured_costs: Vec<f64>,
    /// State after the last input.
    pub final_state: PlantState,
}

impl SimRecord {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Simulates `inputs` from `x0`; costs are measured with noise drawn from `rng`.
pub fn simulate<R: Rng + ?Sized>(x0: PlantState, inputs: &[f64], params: &PlantParams, rng: &mut R) -> Result<SimRecord> {
    let n = inputs.len();
    let mut rec = SimRecord {
        states: Vec::with_capacity(n),
        inputs: inputs.to_vec(),
        true_costs: Vec::with_capacity(n),
        measured_costs: Vec::with_capacity(n),
        final_state: x0,
    };
    let mut x = x0;
    for &u in inputs {
        let l = stage_cost(x, u, params)?;
        rec.states.push(x);
        rec.true_costs.push(l);
        rec.measured_costs.push(measure_cost(l, rng, params));
        x = step(x, u, params)?;
    }
    rec.final_state = x;
    Ok(rec)
}

/// Regressor `z(k)` from a cost and input history.
pub fn regressor_at(costs: &[f64], inputs: &[f64], k: usize, spec: RegressorSpec) -> Result<RegressorState> {
    if k < spec.memory() || k > costs.len() || k > inputs.len() {
        bail!("no full history at time {k}");
    }
    let past_costs = (1..=spec.n_a).map(|b| costs[k - b]).collect();
    let past_inputs = (1..=spec.n_b).map(|b| inputs[k - b]).collect();
    Ok(RegressorState::new(spec, past_costs, past_inputs)?)
}

/// One sample per time index with full history, using the measured costs
/// for both the regressor and the label.
pub fn build_dataset(rec: &SimRecord, spec: RegressorSpec, experiment: u32) -> Result<Dataset> {
    if rec.len() <= spec.memory() {
        bail!("need more than {} inputs, got {}", spec.memory(), rec.len());
    }
    let mut d = Dataset::new(spec);
    for k in spec.memory()..rec.len() {
        let z = regressor_at(&rec.measured_costs, &rec.inputs, k, spec)?;
        d.push(Sample::new(z, vec![rec.inputs[k]], rec.measured_costs[k], SampleTag { experiment, time: k }))?;
    }
    Ok(d)
}

/// Simulates `inputs` from the equilibrium of the first input and builds the dataset.
pub fn generate_dataset(
    inputs: &[f64],
    params: &PlantParams,
    spec: RegressorSpec,
    noise_seed: u64,
    experiment: u32,
) -> Result<(Dataset, SimRecord)> {
    let Some(&u0) = inputs.first() else { bail!("empty input sequence") };
    let x0 = empc_core::plant::steady_state(u0, params).unwrap_or(PlantState::new(0.0, 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let rec = simulate(x0, inputs, params, &mut rng)?;
    let d = build_dataset(&rec, spec, experiment)?;
    Ok((d, rec))
}

/// Random start of a closed-loop run: concentrations uniform in `[0, 1]²`
/// followed by a random input warm-up filling the regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub index: usize,
    pub warmup: SimRecord,
    /// State at the first controlled step.
    pub x0: PlantState,
    /// Regressor built from measured warm-up costs.
    pub z0: RegressorState,
    /// Regressor built from true warm-up costs.
    pub z0_true: RegressorState,
    /// Seed for the measurement noise of the run started here.
    pub noise_seed: u64,
}

pub fn initial_conditions(n: usize, seed: u64, params: &PlantParams, spec: RegressorSpec) -> Result<Vec<InitialCondition>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = spec.memory();
    (0..n)
        .map(|index| {
            let x = PlantState::new(rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
            let inputs: Vec<f64> = (0..h).map(|_| rng.random_range(params.u_min..=params.u_max)).collect();
            let noise_seed = derive_seed(seed, 1, index as u64);
            initial_condition_from(index, x, &inputs, params, spec, noise_seed)
        })
        .collect()
}

/// Initial condition after applying `inputs` from `x`.
pub fn initial_condition_from(
    index: usize,
    x: PlantState,
    inputs: &[f64],
    params: &PlantParams,
    spec: RegressorSpec,
    noise_seed: u64,
) -> Result<InitialCondition> {
    let mut noise = ChaCha8Rng::seed_from_u64(derive_seed(noise_seed, 2, 0));
    let warmup = simulate(x, inputs, params, &mut noise)?;
    let k = inputs.len();
    let z0 = regressor_at(&warmup.measured_costs, inputs, k, spec)?;
    let z0_true = regressor_at(&warmup.true_costs, inputs, k, spec)?;
    Ok(InitialCondition { index, x0: warmup.final_state, warmup, z0, z0_true, noise_seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use empc_core::plant::steady_state;

    fn spec() -> RegressorSpec {
        RegressorSpec::siso(3, 2).unwrap()
    }

    #[test]
    fn sample_count_and_layout() {
        let p = PlantParams::default();
        let inputs: Vec<f64> = (0..50).map(|k| 0.5 + 0.02 * k as f64).collect();
        let (d, rec) = generate_dataset(&inputs, &p, spec(), 3, 0).unwrap();
        assert_eq!(d.len(), 47);
        let s = &d.samples()[10];
        let k = s.tag.time;
        assert_eq!(k, 13);
        assert_eq!(s.z.past_costs(), &[rec.measured_costs[12], rec.measured_costs[11], rec.measured_costs[10]]);
        assert_eq!(s.z.past_inputs(), &[inputs[12], inputs[11]]);
        assert_eq!(s.u, vec![inputs[13]]);
        assert_eq!(s.cost, rec.measured_costs[13]);
    }

    #[test]
    fn noise_free_constant_input_gives_steady_labels() {
        let p = PlantParams { noise_std_frac: 0.0, ..PlantParams::default() };
        let u_s = 1.0424;
        let x_s = steady_state(u_s, &p).unwrap();
        let l_s = u_s * (1.0 - 4.0 * x_s.cb);
        let (d, _) = generate_dataset(&vec![u_s; 200], &p, spec(), 0, 0).unwrap();
        assert!(d.samples().iter().all(|s| (s.cost - l_s).abs() < 1e-12));
    }

    #[test]
    fn deterministic_per_seed() {
        let p = PlantParams::default();
        let inputs: Vec<f64> = (0..300).map(|k| 1.0 + (k as f64 * 0.1).sin()).collect();
        let a = generate_dataset(&inputs, &p, spec(), 9, 0).unwrap().0;
        let b = generate_dataset(&inputs, &p, spec(), 9, 0).unwrap().0;
        let c = generate_dataset(&inputs, &p, spec(), 10, 0).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn too_short_history_rejected() {
        let p = PlantParams::default();
        assert!(generate_dataset(&[1.0, 1.0, 1.0], &p, spec(), 0, 0).is_err());
    }

    #[test]
    fn initial_conditions_are_reproducible_and_in_range() {
        let p = PlantParams::default();
        let a = initial_conditions(20, 5, &p, spec()).unwrap();
        assert_eq!(a, initial_conditions(20, 5, &p, spec()).unwrap());
        for ic in &a {
            let x = ic.warmup.states[0];
            assert!((0.0..=1.0).contains(&x.ca) && (0.0..=1.0).contains(&x.cb));
            assert_eq!(ic.warmup.len(), 3);
            assert_eq!(ic.z0_true.past_costs()[0], ic.warmup.true_costs[2]);
            assert_eq!(ic.z0.past_inputs(), &[ic.warmup.inputs[2], ic.warmup.inputs[1]]);
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let s: Vec<u64> = (0..100).map(|i| derive_seed(1, 0, i)).collect();
        let mut u = s.clone();
        u.sort();
        u.dedup();
        assert_eq!(u.len(), 100);
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 1, 0));
    }
}
