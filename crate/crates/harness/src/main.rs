use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use empc_core::oracle::validate;
use empc_core::sstarget::equilibrium_curve;
use empc_harness::config::ExperimentConfig;
use empc_harness::experiments::{
    cross_validate_reactor, fit_oracle, identification_data, median, oracle_target, run_closedloop,
    run_ideal_estimation, run_online_learning, validation_data, IdealOracle, Setup,
};
use empc_harness::output::{fmt, read_dataset, write_dataset, write_equilibrium_curve, write_runlog, write_runlogs, write_table, write_validation};

#[derive(Parser)]
#[command(name = "empc", version, about = "Cost-only economic MPC experiments on a CSTR")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults reproduce the reference study.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the configured seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the identification experiment and write dataset.csv.
    Datagen,
    /// Fit the oracle (from dataset.csv when present) and report its constant.
    Train,
    /// Residuals of the oracle on the noise-free holdout; writes validation.csv.
    Validate,
    /// Optimal equilibrium from the model and from the oracle; writes equilibrium_curve.csv.
    Ssopt,
    /// One-step comparison of model-based and oracle-based controllers; writes ideal_trials.csv.
    CompareIdeal {
        /// Number of random starts (default from the config).
        #[arg(long)]
        trials: Option<usize>,
        /// Use the trained oracle instead of the capture oracle.
        #[arg(long)]
        no_capture: bool,
    },
    /// Closed-loop comparison; writes closedloop_<seed>.csv and phi_summary.csv.
    Run {
        /// Number of random initial conditions (default from the config).
        #[arg(long)]
        n_init: Option<usize>,
    },
    /// Periodic resets with data updates; writes online_phi.csv.
    Online {
        /// Number of impulse windows (default from the config).
        #[arg(long)]
        iterations: Option<usize>,
        /// Keep the oracle fixed.
        #[arg(long)]
        no_update: bool,
    },
    /// Grid search over regressor orders and Lipschitz constants; writes cv.csv.
    Cv,
    /// Print the effective configuration as TOML.
    Config,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli.common)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global()?;
    }
    if let Cmd::Config = cli.cmd {
        print!("{}", cfg.to_toml_string()?);
        return Ok(());
    }
    let seeds = cfg.seeds.clone();
    for seed in seeds {
        let mut c = cfg.clone();
        c.seeds = vec![seed];
        run_command(&cli.cmd, Setup::new(c)?)?;
    }
    Ok(())
}

fn out_path(setup: &Setup, name: &str) -> PathBuf {
    setup.cfg.output_dir.join(name)
}

/// Training data from `dataset.csv` in the output directory, or freshly simulated.
fn training_data(setup: &Setup) -> Result<empc_core::oracle::Dataset> {
    let p = out_path(setup, "dataset.csv");
    if p.exists() {
        let d = read_dataset(&p, setup.spec)?;
        eprintln!("loaded {} samples from {}", d.len(), p.display());
        return Ok(d);
    }
    Ok(identification_data(setup)?.0)
}

fn run_command(cmd: &Cmd, setup: Setup) -> Result<()> {
    let seed = setup.seed();
    match cmd {
        Cmd::Config => unreachable!("handled before"),
        Cmd::Datagen => {
            let (d, _) = identification_data(&setup)?;
            let p = out_path(&setup, "dataset.csv");
            write_dataset(&p, &d)?;
            println!("seed {seed}: {} samples -> {}", d.len(), p.display());
        }
        Cmd::Train => {
            let d = training_data(&setup)?;
            let m = fit_oracle(&setup, &d, setup.cfg.oracle.stride)?;
            println!(
                "seed {seed}: {} samples (stride {}), L = {} ({}), {} conflicting duplicates",
                m.len(),
                setup.cfg.oracle.stride,
                m.lipschitz(),
                if m.lipschitz_estimated() { "estimated" } else { "fixed" },
                m.inconsistencies()
            );
        }
        Cmd::Validate => {
            let d = training_data(&setup)?;
            let m = fit_oracle(&setup, &d, setup.cfg.oracle.stride)?;
            let holdout = validation_data(&setup)?;
            let b = validate(&m, &holdout)?;
            let p = out_path(&setup, "validation.csv");
            write_validation(&p, &holdout, &b.predictions)?;
            let q: Vec<String> = b.residual_quantiles.iter().map(|(l, v)| format!("q{:.0}={v:.6}", l * 100.0)).collect();
            println!("seed {seed}: max residual {:.6}, {} -> {}", b.mu, q.join(" "), p.display());
        }
        Cmd::Ssopt => {
            let t = &setup.target;
            println!("model:  u_s = {:.6} m3/min, l_s = {:.6} $/min", t.u_s, t.ell_s);
            let d = training_data(&setup)?;
            let m = fit_oracle(&setup, &d, setup.cfg.oracle.stride)?;
            let o = oracle_target(&setup, &m)?;
            println!("oracle: u_s = {:.6} m3/min, l_s = {:.6} $/min", o.u_s, o.ell_s);
            let p = out_path(&setup, "equilibrium_curve.csv");
            write_equilibrium_curve(&p, &equilibrium_curve(&setup.params, 401))?;
            println!("curve -> {}", p.display());
        }
        Cmd::CompareIdeal { trials, no_capture } => {
            let n = trials.unwrap_or(setup.cfg.ideal.n_trials);
            let trained;
            let oracle = if *no_capture {
                trained = fit_oracle(&setup, &training_data(&setup)?, setup.cfg.oracle.stride)?;
                IdealOracle::Fixed(&trained)
            } else {
                IdealOracle::Capture { lipschitz: setup.cfg.ideal.lipschitz }
            };
            let res = run_ideal_estimation(&setup, n, &oracle)?;
            let rows: Vec<Vec<String>> = res
                .iter()
                .map(|t| {
                    vec![
                        t.index.to_string(),
                        fmt(t.u0_model),
                        fmt(t.u0_oracle),
                        fmt(t.delta),
                        (t.valid as u8).to_string(),
                        t.samples.to_string(),
                        t.error.clone().unwrap_or_default(),
                    ]
                })
                .collect();
            let p = out_path(&setup, "ideal_trials.csv");
            write_table(
                &p,
                "trial, first input of the model-based and oracle-based controllers (m3/min), |difference|, both converged (0/1), captured samples, error",
                &["trial", "u0_model", "u0_oracle", "delta", "valid", "samples", "error"],
                &rows,
            )?;
            let valid: Vec<f64> = res.iter().filter(|t| t.valid).map(|t| t.delta).collect();
            let max = valid.iter().copied().fold(0.0, f64::max);
            println!("seed {seed}: {} of {} trials valid, max |du0| = {max:.3e} -> {}", valid.len(), res.len(), p.display());
        }
        Cmd::Run { n_init } => {
            let n = n_init.unwrap_or(setup.cfg.closedloop.n_init);
            let d = training_data(&setup)?;
            let m = fit_oracle(&setup, &d, setup.cfg.oracle.stride)?;
            let target = oracle_target(&setup, &m)?;
            let ocfg = setup.oracle_cfg(&m, &target)?;
            let ics = setup.initial_conditions(n, &setup.params)?;
            let runs = run_closedloop(&setup, &m, &ocfg, &ics, &setup.params, true);
            write_closedloop(&setup, &runs)?;
        }
        Cmd::Online { iterations, no_update } => {
            let d = training_data(&setup)?;
            let m = fit_oracle(&setup, &d, setup.cfg.oracle.stride)?;
            let target = oracle_target(&setup, &m)?;
            let n = iterations.unwrap_or(setup.cfg.online.iterations);
            let update = setup.cfg.online.update && !no_update;
            let rep = run_online_learning(&setup, m, &target, n, update)?;
            let rows: Vec<Vec<String>> = rep
                .rows
                .iter()
                .map(|r| vec![r.iteration.to_string(), fmt(r.phi_oracle), fmt(r.phi_ideal), r.dataset_size.to_string()])
                .collect();
            let p = out_path(&setup, "online_phi.csv");
            write_table(
                &p,
                "iteration, Phi over the window for the oracle and the state-feedback controller ($), oracle dataset size after the update",
                &["iteration", "phi_oracle", "phi_ideal", "dataset_size"],
                &rows,
            )?;
            write_runlog(&out_path(&setup, &format!("online_oracle_{seed}.csv")), &rep.oracle_log)?;
            write_runlog(&out_path(&setup, &format!("online_ideal_{seed}.csv")), &rep.ideal_log)?;
            println!("seed {seed}: {} iterations -> {}", rep.rows.len(), p.display());
        }
        Cmd::Cv => {
            let rep = cross_validate_reactor(&setup)?;
            let rows: Vec<Vec<String>> = rep
                .candidates
                .iter()
                .map(|c| {
                    vec![
                        c.n_a.to_string(),
                        c.n_b.to_string(),
                        c.requested.map(fmt).unwrap_or_else(|| "estimated".into()),
                        fmt(c.lipschitz),
                        fmt(c.mu),
                    ]
                })
                .collect();
            let p = out_path(&setup, "cv.csv");
            write_table(&p, "n_a, n_b, requested L, L used, max validation residual", &["n_a", "n_b", "requested", "lipschitz", "mu"], &rows)?;
            let b = &rep.best;
            println!("seed {seed}: best n_a = {}, n_b = {}, L = {}, residual {:.6} -> {}", b.n_a, b.n_b, b.lipschitz, b.mu, p.display());
        }
    }
    Ok(())
}

fn write_closedloop(setup: &Setup, runs: &[empc_harness::experiments::RunOutcome]) -> Result<()> {
    let seed = setup.seed();
    let dir = &setup.cfg.output_dir;
    let ell_s = setup.target.ell_s;
    let tail = setup.cfg.closedloop.tail;
    let mut summary = Vec::new();
    let mut gaps = Vec::new();
    let mut failures = 0;
    let path = dir.join(format!("closedloop_{seed}.csv"));
    let mut logs = Vec::new();
    for (index, r) in runs {
        match r {
            Ok(pair) => {
                logs.push((*index, "oracle", &pair.oracle));
                if let Some(ideal) = &pair.ideal {
                    logs.push((*index, "ideal", ideal));
                }
                let gap = pair.relative_gap();
                if let Some(g) = gap {
                    gaps.push(g);
                }
                summary.push(vec![
                    index.to_string(),
                    fmt(pair.phi_oracle()),
                    pair.phi_ideal().map(fmt).unwrap_or_default(),
                    gap.map(fmt).unwrap_or_default(),
                    fmt(pair.oracle.tail_band(ell_s, tail)),
                    pair.oracle.fallbacks.to_string(),
                    String::new(),
                ]);
            }
            Err(e) => {
                failures += 1;
                eprintln!("run {index} failed: {e}");
                summary.push(vec![index.to_string(), String::new(), String::new(), String::new(), String::new(), String::new(), e.clone()]);
            }
        }
    }
    write_runlogs(&path, &logs)?;
    let sp = dir.join("phi_summary.csv");
    write_table(
        &sp,
        "run, Phi of the oracle and the state-feedback controller ($), relative gap, tail mean |l - l_s|, fallbacks, error",
        &["run", "phi_oracle", "phi_ideal", "relative_gap", "tail_band", "fallbacks", "error"],
        &summary,
    )?;
    match median(&gaps) {
        Some(m) => println!("seed {seed}: {} runs, {failures} failed, median relative gap {m:.4} -> {}", runs.len(), sp.display()),
        None => bail!("every closed-loop run failed"),
    }
    Ok(())
}
