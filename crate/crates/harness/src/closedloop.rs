//! Receding-horizon simulation of the reactor under the model-based and the
//! oracle-based controllers.

use std::time::Instant;

use anyhow::{bail, Result};
use empc_core::empc::{shifted_plan, solve_model_terminal_eq, Controller, EmpcConfig};
use empc_core::narx::CostPredictor;
use empc_core::plant::{measure_cost, stage_cost, step, PlantParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::sim::{derive_seed, InitialCondition};

/// One sampling period of a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub k: usize,
    pub u: f64,
    pub l_true: f64,
    pub l_measured: f64,
    /// State at which `u` is applied.
    pub ca: f64,
    pub cb: f64,
    /// Optimal value of the controller's problem.
    pub v_opt: f64,
    pub feasible: bool,
    /// Wall-clock solve time (s), when recorded.
    pub solve_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub rows: Vec<RunRow>,
    /// Steps at which the shifted previous plan replaced an infeasible solve.
    pub fallbacks: usize,
}

impl RunLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Mean of `|l - l_s|` over the last `tail` steps.
    pub fn tail_band(&self, ell_s: f64, tail: usize) -> f64 {
        let t = tail.min(self.rows.len()).max(1);
        let rows = &self.rows[self.rows.len().saturating_sub(t)..];
        rows.iter().map(|r| (r.l_true - ell_s).abs()).sum::<f64>() / rows.len().max(1) as f64
    }

    pub fn mean_cost(&self) -> f64 {
        perf_index(self) / self.rows.len().max(1) as f64
    }

    pub fn inputs_within(&self, lo: f64, hi: f64) -> bool {
        self.rows.iter().all(|r| r.u >= lo && r.u <= hi)
    }
}

/// Performance index: the sum of true stage costs.
pub fn perf_index(log: &RunLog) -> f64 {
    log.rows.iter().map(|r| r.l_true).sum()
}

fn timer(record: bool) -> Option<Instant> {
    record.then(Instant::now)
}

fn elapsed(t: Option<Instant>) -> Option<f64> {
    t.map(|t| t.elapsed().as_secs_f64())
}

/// Oracle-based closed loop from `ic`; the controller sees measured costs only.
pub fn run_oracle_loop<P: CostPredictor + ?Sized>(
    oracle: &P,
    cfg: &EmpcConfig,
    ic: &InitialCondition,
    params: &PlantParams,
    steps: usize,
    record_timing: bool,
) -> Result<RunLog> {
    let z0 = if params.noise_std_frac == 0.0 { ic.z0_true.clone() } else { ic.z0.clone() };
    let mut ctrl = Controller::new(cfg.clone(), z0)?;
    let mut noise = ChaCha8Rng::seed_from_u64(derive_seed(ic.noise_seed, 3, 0));
    let mut x = ic.x0;
    let mut log = RunLog::default();
    for k in 0..steps {
        let t = timer(record_timing);
        let out = ctrl.decide(oracle)?;
        let solve_time = elapsed(t);
        let u = params.clamp_input(out.u);
        let l_true = stage_cost(x, u, params)?;
        let l_measured = measure_cost(l_true, &mut noise, params);
        log.rows.push(RunRow {
            k,
            u,
            l_true,
            l_measured,
            ca: x.ca,
            cb: x.cb,
            v_opt: out.decision.cost_opt,
            feasible: out.decision.feasible,
            solve_time,
        });
        x = step(x, u, params)?;
        ctrl.observe(u, l_measured);
    }
    log.fallbacks = ctrl.fallbacks();
    Ok(log)
}

/// Model-based state-feedback closed loop from `ic` with the same noise
/// stream as [`run_oracle_loop`] (noise only affects the logged measurement).
pub fn run_model_loop(
    cfg: &EmpcConfig,
    ic: &InitialCondition,
    params: &PlantParams,
    steps: usize,
    record_timing: bool,
) -> Result<RunLog> {
    let Some(_) = cfg.target.x_s else { bail!("model controller needs the plant equilibrium") };
    let mut noise = ChaCha8Rng::seed_from_u64(derive_seed(ic.noise_seed, 3, 0));
    let mut x = ic.x0;
    let mut plan: Option<Vec<f64>> = None;
    let mut log = RunLog::default();
    for k in 0..steps {
        let warm = plan.as_ref().map(|p| shifted_plan(p, cfg.target.u_s));
        let t = timer(record_timing);
        let d = solve_model_terminal_eq(x, cfg, params, warm.as_deref())?;
        let solve_time = elapsed(t);
        let u = if d.feasible || warm.is_none() {
            plan = Some(d.inputs.clone());
            d.u0
        } else {
            log.fallbacks += 1;
            let held = warm.expect("checked above");
            let u = held[0];
            plan = Some(held);
            u
        };
        let u = params.clamp_input(u);
        let l_true = stage_cost(x, u, params)?;
        let l_measured = measure_cost(l_true, &mut noise, params);
        log.rows.push(RunRow {
            k,
            u,
            l_true,
            l_measured,
            ca: x.ca,
            cb: x.cb,
            v_opt: d.cost_opt,
            feasible: d.feasible,
            solve_time,
        });
        x = step(x, u, params)?;
    }
    Ok(log)
}
