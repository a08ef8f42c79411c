//! The reactor experiments: identification, validation, steady-state
//! comparison, ideal estimation, closed-loop comparison, online learning,
//! structure selection and the terminal-ingredient diagnostics.

use std::collections::{HashMap, HashSet};

use anyhow::{Context, Result};
use empc_core::empc::{
    solve_model_terminal_eq_logged, solve_oracle, synth_terminal, EmpcConfig, ModelTerminal, TerminalIngredients,
    Variant,
};
use empc_core::narx::{CostPredictor, PredictError, RegressorSpec, RegressorState};
use empc_core::oracle::{validate, Dataset, ErrorBound, FitOptions, LipschitzModel, Sample, SampleTag};
use empc_core::plant::{integrate, PlantParams};
use empc_core::sstarget::{solve_ss_oracle_seeded, sweep_model, OracleSteadyOptions, SteadyTarget};
use rayon::prelude::*;

use crate::closedloop::{perf_index, run_model_loop, run_oracle_loop, RunLog};
use crate::config::ExperimentConfig;
use crate::signals::gen_signal;
use crate::sim::{derive_seed, generate_dataset, initial_conditions, InitialCondition, SimRecord};

// seed streams
const STREAM_TRAIN_NOISE: u64 = 10;
const STREAM_VALIDATION: u64 = 11;
const STREAM_INIT: u64 = 12;
const STREAM_IDEAL: u64 = 13;
const STREAM_ONLINE: u64 = 14;
const STREAM_DESIGN: u64 = 15;

/// Resolved configuration shared by all experiments.
#[derive(Debug, Clone)]
pub struct Setup {
    pub cfg: ExperimentConfig,
    pub params: PlantParams,
    pub spec: RegressorSpec,
    /// Model-based optimal equilibrium.
    pub target: SteadyTarget,
}

impl Setup {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.plant.params()?;
        let spec = cfg.regressor.spec()?;
        let target = sweep_model(&params, cfg.empc.steady_grid, spec)?;
        Ok(Self { cfg, params, spec, target })
    }

    pub fn seed(&self) -> u64 {
        self.cfg.seed()
    }

    /// Plant parameters with the measurement noise switched off.
    pub fn nominal_params(&self) -> PlantParams {
        PlantParams { noise_std_frac: 0.0, ..self.params.clone() }
    }

    pub fn u_bounds(&self) -> (f64, f64) {
        (self.params.u_min, self.params.u_max)
    }

    /// State-feedback terminal-equality controller.
    pub fn model_cfg(&self) -> EmpcConfig {
        let mut c = EmpcConfig::terminal_eq(
            Variant::ModelTerminalEq,
            self.cfg.empc.horizon,
            self.target.clone(),
            self.params.u_min,
            self.params.u_max,
        );
        c.solver = self.cfg.empc.solver(self.seed());
        c.feasibility_tol = self.cfg.empc.feasibility_tol;
        c
    }

    /// Oracle terminal-equality controller steering to `target`.
    pub fn oracle_eq_cfg(&self, target: &SteadyTarget) -> EmpcConfig {
        let mut c = EmpcConfig::terminal_eq(
            Variant::OracleTerminalEq,
            self.cfg.empc.horizon,
            target.clone(),
            self.params.u_min,
            self.params.u_max,
        );
        c.solver = self.cfg.empc.solver(self.seed());
        c.feasibility_tol = self.cfg.empc.feasibility_tol;
        c
    }

    /// Terminal-ingredient controller with prediction horizon `np`.
    pub fn oracle_ti_cfg(&self, target: &SteadyTarget, ing: &TerminalIngredients, np: usize) -> EmpcConfig {
        let mut c = EmpcConfig::terminal_ingredients(
            self.cfg.empc.horizon,
            np,
            target.clone(),
            ing.clone(),
            self.params.u_min,
            self.params.u_max,
        );
        c.solver = self.cfg.empc.solver(self.seed());
        c.feasibility_tol = self.cfg.empc.feasibility_tol;
        c
    }

    /// Closed-loop controller selected by `empc.variant`.
    pub fn oracle_cfg<P: CostPredictor + ?Sized>(&self, oracle: &P, target: &SteadyTarget) -> Result<EmpcConfig> {
        let variant = self.cfg.empc.variant()?;
        let mut c = match variant {
            Variant::OracleTerminalEq => return Ok(self.oracle_eq_cfg(target)),
            Variant::OracleTerminalIngredients => {
                let ing = self.terminal_ingredients(oracle, target)?;
                return Ok(self.oracle_ti_cfg(target, &ing, self.cfg.empc.prediction_horizon));
            }
            Variant::OracleLinearTerminal => {
                let eta = empc_core::empc::estimate_eta(oracle, target, 1e-4)?;
                EmpcConfig::linear_terminal(self.cfg.empc.horizon, target.clone(), Some(eta), self.params.u_min, self.params.u_max)
            }
            Variant::OracleNoTerminal => {
                EmpcConfig::linear_terminal(self.cfg.empc.horizon, target.clone(), None, self.params.u_min, self.params.u_max)
            }
            Variant::ModelTerminalEq => anyhow::bail!("closed-loop oracle runs need an oracle variant"),
        };
        c.solver = self.cfg.empc.solver(self.seed());
        c.feasibility_tol = self.cfg.empc.feasibility_tol;
        Ok(c)
    }

    pub fn terminal_ingredients<P: CostPredictor + ?Sized>(
        &self,
        oracle: &P,
        target: &SteadyTarget,
    ) -> Result<TerminalIngredients> {
        let design = self.cfg.empc.design(derive_seed(self.seed(), STREAM_DESIGN, 0));
        Ok(synth_terminal(oracle, target, self.u_bounds(), &design)?)
    }

    /// The fixed set of random closed-loop starts.
    pub fn initial_conditions(&self, n: usize, params: &PlantParams) -> Result<Vec<InitialCondition>> {
        initial_conditions(n, derive_seed(self.seed(), STREAM_INIT, 0), params, self.spec)
    }

    pub fn steps(&self) -> usize {
        self.cfg.steps()
    }
}

/// Identification data and the oracle fitted to it.
#[derive(Debug, Clone)]
pub struct Trained {
    /// Full dataset (before striding).
    pub dataset: Dataset,
    pub record: SimRecord,
    pub model: LipschitzModel,
}

/// Noisy identification experiment on `cfg.signal`.
pub fn identification_data(setup: &Setup) -> Result<(Dataset, SimRecord)> {
    let seed = setup.seed();
    let inputs = gen_signal(&setup.cfg.signal, setup.params.tau_s, setup.u_bounds(), seed)?;
    generate_dataset(&inputs, &setup.params, setup.spec, derive_seed(seed, STREAM_TRAIN_NOISE, 0), 0)
}

/// Fits the oracle on the identification data at the given stride.
pub fn fit_oracle(setup: &Setup, dataset: &Dataset, stride: usize) -> Result<LipschitzModel> {
    let opts = FitOptions { stride, ..setup.cfg.oracle.fit_options(setup.seed()) };
    Ok(LipschitzModel::fit(dataset, &opts)?)
}

pub fn train(setup: &Setup, stride: usize) -> Result<Trained> {
    let (dataset, record) = identification_data(setup)?;
    let model = fit_oracle(setup, &dataset, stride)?;
    Ok(Trained { dataset, record, model })
}

/// Noise-free holdout experiment on `cfg.validation_signal`.
pub fn validation_data(setup: &Setup) -> Result<Dataset> {
    let seed = derive_seed(setup.seed(), STREAM_VALIDATION, 0);
    let inputs = gen_signal(&setup.cfg.validation_signal, setup.params.tau_s, setup.u_bounds(), seed)?;
    Ok(generate_dataset(&inputs, &setup.nominal_params(), setup.spec, seed, 1)?.0)
}

#[derive(Debug, Clone)]
pub struct Validation {
    pub holdout: Dataset,
    pub bound: ErrorBound,
}

impl Validation {
    /// The 90% quantile of the absolute residuals.
    pub fn mu90(&self) -> f64 {
        self.bound.quantile(0.9).unwrap_or(self.bound.mu)
    }
}

pub fn validate_oracle(setup: &Setup, model: &LipschitzModel) -> Result<Validation> {
    let holdout = validation_data(setup)?;
    let bound = validate(model, &holdout)?;
    Ok(Validation { holdout, bound })
}

/// Mean label of the `k` samples whose inputs (current and past) stay
/// closest to `u`, i.e. the measured steady cost near `u`.
pub fn steady_cost_estimate(data: &Dataset, u: f64, k: usize) -> Option<f64> {
    let spread = |s: &Sample| {
        s.z.past_inputs().iter().chain(&s.u).map(|v| (v - u).abs()).fold(0.0, f64::max)
    };
    let mut scored: Vec<(f64, f64)> = data.samples().iter().map(|s| (spread(s), s.cost)).collect();
    if scored.is_empty() {
        return None;
    }
    let k = k.clamp(1, scored.len());
    scored.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
    Some(scored[..k].iter().map(|p| p.1).sum::<f64>() / k as f64)
}

/// Oracle-based optimal equilibrium. The fixed-point search at each input
/// starts from the measured steady cost near that input.
pub fn oracle_target(setup: &Setup, model: &LipschitzModel) -> Result<SteadyTarget> {
    let data = model.dataset();
    let opts = OracleSteadyOptions::default();
    let start = |u: f64| steady_cost_estimate(data, u, 5).unwrap_or(0.0);
    Ok(solve_ss_oracle_seeded(model, setup.spec, setup.u_bounds(), start, &opts)?.target)
}

// ---------------------------------------------------------------------------
// ideal estimation

/// Oracle used by the one-step comparison.
pub enum IdealOracle<'a> {
    /// [`CaptureOracle`] over everything the model-based solver evaluated.
    Capture { lipschitz: f64 },
    /// A fixed oracle, e.g. the chirp-trained one (negative control).
    Fixed(&'a LipschitzModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdealTrial {
    pub index: usize,
    pub u0_model: f64,
    pub u0_oracle: f64,
    pub delta: f64,
    pub valid: bool,
    /// Captured samples (0 for a fixed oracle).
    pub samples: usize,
    pub error: Option<String>,
}

/// Samples seen along the predictions of every input sequence in `visited`,
/// each extended with the terminal input `u_s` up to `np` steps.
pub fn capture_dataset(
    z0: &RegressorState,
    x0: empc_core::plant::PlantState,
    visited: &[Vec<f64>],
    np: usize,
    u_s: f64,
    params: &PlantParams,
) -> Result<Dataset> {
    let spec = z0.spec();
    let mut d = Dataset::new(spec);
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    for (i, v) in visited.iter().enumerate() {
        let mut z = z0.clone();
        let mut x = x0;
        for j in 0..np {
            let u = v.get(j).copied().unwrap_or(u_s);
            let l = u * (params.ca0 - params.alpha * x.cb);
            if seen.insert(bits(&z.query(&[u]))) {
                d.push(Sample::new(z.clone(), vec![u], l, SampleTag { experiment: i as u32, time: j }))?;
            }
            z.shift_in_place(&[u], l);
            x = integrate(x, u, params);
        }
    }
    Ok(d)
}

/// Oracle that returns the recorded cost at every captured query and the
/// Lipschitz interpolant elsewhere.
///
/// Where the input is near zero the cost carries almost no information about
/// the state, so distinct states can produce queries closer than any finite
/// constant separates. The table keeps such points exact.
pub struct CaptureOracle {
    table: HashMap<Vec<u64>, f64>,
    model: LipschitzModel,
}

impl CaptureOracle {
    pub fn new(data: &Dataset, lipschitz: f64) -> Result<Self> {
        let model = LipschitzModel::fit(data, &FitOptions::with_lipschitz(lipschitz))?;
        let table = data.samples().iter().map(|s| (bits(&s.query()), s.cost)).collect();
        Ok(Self { table, model })
    }
}

fn bits(q: &[f64]) -> Vec<u64> {
    q.iter().map(|v| v.to_bits()).collect()
}

impl CostPredictor for CaptureOracle {
    fn predict(&self, z: &RegressorState, u: &[f64]) -> std::result::Result<f64, PredictError> {
        match self.table.get(&bits(&z.query(u))) {
            Some(&y) => Ok(y),
            None => self.model.predict(z, u),
        }
    }
}

fn ideal_trial(setup: &Setup, ic: &InitialCondition, oracle: &IdealOracle<'_>) -> Result<IdealTrial> {
    let params = setup.nominal_params();
    // same residuals as the oracle controller, so both solvers walk the same path
    let model_cfg = EmpcConfig { model_terminal: ModelTerminal::Cost, ..setup.model_cfg() };
    let oracle_cfg = setup.oracle_eq_cfg(&setup.target);
    let capture = matches!(oracle, IdealOracle::Capture { .. });
    let (dm, visited) = solve_model_terminal_eq_logged(ic.x0, &model_cfg, &params, None, capture)?;
    let (d_oracle, samples) = match oracle {
        IdealOracle::Capture { lipschitz } => {
            let data = capture_dataset(
                &ic.z0_true,
                ic.x0,
                &visited,
                oracle_cfg.prediction_horizon,
                setup.target.u_s,
                &params,
            )?;
            let oracle = CaptureOracle::new(&data, *lipschitz)?;
            (solve_oracle(&ic.z0_true, &oracle_cfg, &oracle, None)?, data.len())
        }
        IdealOracle::Fixed(model) => (solve_oracle(&ic.z0_true, &oracle_cfg, *model, None)?, 0),
    };
    Ok(IdealTrial {
        index: ic.index,
        u0_model: dm.u0,
        u0_oracle: d_oracle.u0,
        delta: (dm.u0 - d_oracle.u0).abs(),
        valid: dm.converged && d_oracle.converged,
        samples,
        error: None,
    })
}

/// One-step comparison of the model-based and the oracle-based terminal
/// equality controllers from `n_trials` random starts.
pub fn run_ideal_estimation(setup: &Setup, n_trials: usize, oracle: &IdealOracle<'_>) -> Result<Vec<IdealTrial>> {
    let params = setup.nominal_params();
    let ics = initial_conditions(n_trials, derive_seed(setup.seed(), STREAM_IDEAL, 0), &params, setup.spec)?;
    Ok(ics
        .par_iter()
        .map(|ic| {
            ideal_trial(setup, ic, oracle).unwrap_or_else(|e| IdealTrial {
                index: ic.index,
                u0_model: f64::NAN,
                u0_oracle: f64::NAN,
                delta: f64::NAN,
                valid: false,
                samples: 0,
                error: Some(format!("{e:#}")),
            })
        })
        .collect())
}

// ---------------------------------------------------------------------------
// closed loop

#[derive(Debug, Clone)]
pub struct RunPair {
    pub index: usize,
    pub oracle: RunLog,
    pub ideal: Option<RunLog>,
}

impl RunPair {
    pub fn phi_oracle(&self) -> f64 {
        perf_index(&self.oracle)
    }

    pub fn phi_ideal(&self) -> Option<f64> {
        self.ideal.as_ref().map(perf_index)
    }

    /// `(phi_oracle - phi_ideal) / |phi_ideal|`.
    pub fn relative_gap(&self) -> Option<f64> {
        self.phi_ideal().map(|pi| (self.phi_oracle() - pi) / pi.abs())
    }
}

/// Outcome of one closed-loop start; failures are kept, not propagated.
pub type RunOutcome = (usize, std::result::Result<RunPair, String>);

/// Oracle-based (and optionally model-based) closed loops from every start in `ics`.
pub fn run_closedloop<P: CostPredictor + Sync + ?Sized>(
    setup: &Setup,
    oracle: &P,
    oracle_cfg: &EmpcConfig,
    ics: &[InitialCondition],
    params: &PlantParams,
    with_ideal: bool,
) -> Vec<RunOutcome> {
    let steps = setup.steps();
    let timing = setup.cfg.record_timing;
    let model_cfg = setup.model_cfg();
    ics.par_iter()
        .map(|ic| {
            let run = || -> Result<RunPair> {
                let o = run_oracle_loop(oracle, oracle_cfg, ic, params, steps, timing)
                    .with_context(|| format!("oracle run {}", ic.index))?;
                let ideal = if with_ideal {
                    Some(run_model_loop(&model_cfg, ic, params, steps, timing).with_context(|| format!("model run {}", ic.index))?)
                } else {
                    None
                };
                Ok(RunPair { index: ic.index, oracle: o, ideal })
            };
            (ic.index, run().map_err(|e| format!("{e:#}")))
        })
        .collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

// ---------------------------------------------------------------------------
// online learning

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineRow {
    pub iteration: usize,
    pub phi_oracle: f64,
    pub phi_ideal: f64,
    /// Oracle dataset size after this iteration's update.
    pub dataset_size: usize,
}

#[derive(Debug, Clone)]
pub struct OnlineReport {
    pub rows: Vec<OnlineRow>,
    pub oracle_log: RunLog,
    pub ideal_log: RunLog,
    pub model: LipschitzModel,
}

/// Periodic resets to a fixed state; after each window the transient's
/// samples are appended to the oracle (when `update` is set).
pub fn run_online_learning(
    setup: &Setup,
    initial: LipschitzModel,
    target: &SteadyTarget,
    iterations: usize,
    update: bool,
) -> Result<OnlineReport> {
    let params = &setup.params;
    let window = setup.cfg.window();
    let ic = initial_conditions(1, derive_seed(setup.seed(), STREAM_ONLINE, 0), params, setup.spec)?.remove(0);
    let x_reset = ic.x0;
    let mut model = initial;
    let ctrl_cfg = setup.oracle_cfg(&model, target)?;
    let mut ctrl = empc_core::empc::Controller::new(ctrl_cfg, ic.z0.clone())?;
    let model_cfg = setup.model_cfg();

    let mut rows = Vec::with_capacity(iterations);
    let mut oracle_log = RunLog::default();
    let mut ideal_log = RunLog::default();
    let mut noise = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(derive_seed(ic.noise_seed, 3, 0));
    let mut ideal_plan: Option<Vec<f64>> = None;
    for it in 0..iterations {
        // oracle controller; the reset is invisible to it
        let mut x = x_reset;
        let mut samples = Vec::with_capacity(window);
        let mut phi = 0.0;
        for j in 0..window {
            let k = it * window + j;
            let z = ctrl.regressor().clone();
            let out = ctrl.decide(&model)?;
            let u = params.clamp_input(out.u);
            let l_true = empc_core::plant::stage_cost(x, u, params)?;
            let l_meas = empc_core::plant::measure_cost(l_true, &mut noise, params);
            phi += l_true;
            oracle_log.rows.push(crate::closedloop::RunRow {
                k,
                u,
                l_true,
                l_measured: l_meas,
                ca: x.ca,
                cb: x.cb,
                v_opt: out.decision.cost_opt,
                feasible: out.decision.feasible,
                solve_time: None,
            });
            samples.push(Sample::new(z, vec![u], l_meas, SampleTag { experiment: it as u32 + 1, time: k }));
            x = empc_core::plant::step(x, u, params)?;
            ctrl.observe(u, l_meas);
        }
        if update {
            model = model.add_samples(&samples)?;
        }

        // state-feedback baseline over the same window
        let mut xi = x_reset;
        let mut phi_ideal = 0.0;
        for j in 0..window {
            let warm = ideal_plan.as_ref().map(|p| empc_core::empc::shifted_plan(p, model_cfg.target.u_s));
            let d = empc_core::empc::solve_model_terminal_eq(xi, &model_cfg, params, warm.as_deref())?;
            let u = if d.feasible || warm.is_none() {
                ideal_plan = Some(d.inputs.clone());
                d.u0
            } else {
                let held = warm.expect("checked above");
                let u = held[0];
                ideal_plan = Some(held);
                u
            };
            let u = params.clamp_input(u);
            let l_true = empc_core::plant::stage_cost(xi, u, params)?;
            phi_ideal += l_true;
            ideal_log.rows.push(crate::closedloop::RunRow {
                k: it * window + j,
                u,
                l_true,
                l_measured: l_true,
                ca: xi.ca,
                cb: xi.cb,
                v_opt: d.cost_opt,
                feasible: d.feasible,
                solve_time: None,
            });
            xi = empc_core::plant::step(xi, u, params)?;
        }
        rows.push(OnlineRow { iteration: it, phi_oracle: phi, phi_ideal, dataset_size: model.len() });
    }
    oracle_log.fallbacks = ctrl.fallbacks();
    Ok(OnlineReport { rows, oracle_log, ideal_log, model })
}

// ---------------------------------------------------------------------------
// structure selection

#[derive(Debug, Clone, PartialEq)]
pub struct CvCandidate {
    pub n_a: usize,
    pub n_b: usize,
    /// Requested constant; `None` means estimated.
    pub requested: Option<f64>,
    /// Constant actually used.
    pub lipschitz: f64,
    /// Largest absolute validation residual.
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub candidates: Vec<CvCandidate>,
    pub best: CvCandidate,
}

/// Grid search over `(n_a, n_b, L)` minimizing the validation max-residual.
///
/// `build` returns the training and validation datasets for a structure.
/// Residuals within `1e-9` of the best count as ties, which go to the smaller
/// `n_a + n_b`, then the smaller `L`, then the smaller `n_a`.
pub fn cross_validate<F>(
    build: F,
    n_a: &[usize],
    n_b: &[usize],
    lipschitz: &[Option<f64>],
    base: &FitOptions,
) -> Result<CvReport>
where
    F: Fn(RegressorSpec) -> Result<(Dataset, Dataset)>,
{
    let mut candidates = Vec::new();
    for &na in n_a {
        for &nb in n_b {
            let spec = RegressorSpec::siso(na, nb)?;
            let (train, valid) = build(spec)?;
            for &l in lipschitz {
                let opts = FitOptions { lipschitz: l, ..base.clone() };
                let model = LipschitzModel::fit(&train, &opts)?;
                let mu = validate(&model, &valid)?.mu;
                candidates.push(CvCandidate { n_a: na, n_b: nb, requested: l, lipschitz: model.lipschitz(), mu });
            }
        }
    }
    let best_mu = candidates
        .iter()
        .map(|c| c.mu)
        .fold(f64::INFINITY, f64::min);
    let tie = 1e-9 * (1.0 + best_mu.abs());
    let best = candidates
        .iter()
        .filter(|c| c.mu <= best_mu + tie)
        .min_by(|a, b| {
            (a.n_a + a.n_b)
                .cmp(&(b.n_a + b.n_b))
                .then(a.lipschitz.total_cmp(&b.lipschitz))
                .then(a.n_a.cmp(&b.n_a))
        })
        .cloned()
        .context("empty cross-validation grid")?;
    Ok(CvReport { candidates, best })
}

/// Cross-validation on the identification and validation experiments of `setup`.
pub fn cross_validate_reactor(setup: &Setup) -> Result<CvReport> {
    let cv = &setup.cfg.cv;
    let seed = setup.seed();
    let train_inputs = gen_signal(&setup.cfg.signal, setup.params.tau_s, setup.u_bounds(), seed)?;
    let vseed = derive_seed(seed, STREAM_VALIDATION, 0);
    let valid_inputs = gen_signal(&setup.cfg.validation_signal, setup.params.tau_s, setup.u_bounds(), vseed)?;
    let nominal = setup.nominal_params();
    let stride = cv.stride.max(1);
    let build = |spec: RegressorSpec| -> Result<(Dataset, Dataset)> {
        let (t, _) = generate_dataset(&train_inputs, &setup.params, spec, derive_seed(seed, STREAM_TRAIN_NOISE, 0), 0)?;
        let (v, _) = generate_dataset(&valid_inputs, &nominal, spec, vseed, 1)?;
        Ok((t.subsample(stride), v.subsample(stride)))
    };
    let ls: Vec<Option<f64>> = cv.lipschitz.iter().map(|&l| (l > 0.0).then_some(l)).collect();
    cross_validate(build, &cv.n_a, &cv.n_b, &ls, &setup.cfg.oracle.fit_options(seed))
}

// ---------------------------------------------------------------------------
// terminal-ingredient diagnostics

/// Number of starts in `ics` from which the terminal-ingredient problem is
/// feasible, for each prediction horizon in `horizons` (ascending). Each
/// horizon is warm-started with the previous horizon's solution.
pub fn feasibility_counts<P: CostPredictor + Sync + ?Sized>(
    setup: &Setup,
    oracle: &P,
    target: &SteadyTarget,
    ing: &TerminalIngredients,
    ics: &[InitialCondition],
    horizons: &[usize],
) -> Result<Vec<(usize, usize)>> {
    let cfgs: Vec<EmpcConfig> = horizons.iter().map(|&np| setup.oracle_ti_cfg(target, ing, np)).collect();
    let per_ic: Vec<Vec<bool>> = ics
        .par_iter()
        .map(|ic| -> Result<Vec<bool>> {
            let mut warm: Option<Vec<f64>> = None;
            let mut out = Vec::with_capacity(cfgs.len());
            for cfg in &cfgs {
                let d = solve_oracle(&ic.z0_true, cfg, oracle, warm.as_deref())?;
                out.push(d.feasible);
                if d.feasible || warm.is_none() {
                    warm = Some(d.inputs.clone());
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(horizons
        .iter()
        .enumerate()
        .map(|(i, &np)| (np, per_ic.iter().filter(|f| f[i]).count()))
        .collect())
}

/// Successive differences of the optimal value along a run.
pub fn value_differences(log: &RunLog) -> Vec<f64> {
    log.rows.windows(2).map(|w| w[1].v_opt - w[0].v_opt).collect()
}
