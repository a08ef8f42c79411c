//! Economically optimal equilibrium, from the plant model and from the oracle.
//!
//! The model-based target is a one-dimensional search over the algebraic
//! equilibrium manifold. The oracle-based target minimizes `l` subject to the
//! steady regressor being a fixed point of the oracle,
//! `l = O((l, ..., l, u, ..., u), u)`, which is solved by nesting a scalar
//! root search for `l` inside a search over `u`.

use thiserror::Error;

use crate::narx::{CostPredictor, RegressorSpec, RegressorState};
use crate::plant::{steady_cost, steady_state, PlantParams, PlantState};

#[derive(Debug, Error, PartialEq)]
pub enum SteadyError {
    #[error("grid needs at least {min} points, got {got}")]
    GridTooSmall { min: usize, got: usize },
    #[error("invalid input interval [{0}, {1}]")]
    InvalidBounds(f64, f64),
    #[error("only single-input structures are supported (m = {0})")]
    MultiInput(usize),
    #[error("no fixed point of the oracle was found at any grid input")]
    NoFixedPoint,
}

/// Optimal equilibrium `(u_s, l_s)` together with its steady regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyTarget {
    pub u_s: f64,
    pub ell_s: f64,
    /// Plant equilibrium, known only for model-based targets.
    pub x_s: Option<PlantState>,
    pub z_s: RegressorState,
}

impl SteadyTarget {
    pub fn new(u_s: f64, ell_s: f64, x_s: Option<PlantState>, spec: RegressorSpec) -> Self {
        Self { u_s, ell_s, x_s, z_s: RegressorState::steady(spec, ell_s, &[u_s]) }
    }

    /// Target from the plant equilibrium at `u`.
    pub fn from_model(u: f64, params: &PlantParams, spec: RegressorSpec) -> Option<Self> {
        let x = steady_state(u, params)?;
        let ell = steady_cost(u, params)?;
        Some(Self::new(u, ell, Some(x), spec))
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimization of `f` on `[a, b]`.
fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Grid scan plus golden refinement around the best grid point. Returns the
/// smallest `u` among equal minima on the grid; the refinement is kept only
/// if strictly better.
fn scan_and_refine<F: FnMut(f64) -> Option<f64>>(mut f: F, lo: f64, hi: f64, n: usize, tol: f64) -> Option<(f64, f64)> {
    let us = grid(lo, hi, n);
    let vals: Vec<Option<f64>> = us.iter().map(|&u| f(u)).collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in vals.iter().enumerate() {
        if let Some(v) = v {
            if best.map_or(true, |(_, b)| *v < b) {
                best = Some((i, *v));
            }
        }
    }
    let (i, v) = best?;
    let a = us[i.saturating_sub(1)];
    let b = us[(i + 1).min(n - 1)];
    let (ur, vr) = golden_section(|u| f(u).unwrap_or(f64::INFINITY), a, b, tol);
    if vr < v {
        Some((ur, vr))
    } else {
        Some((us[i], v))
    }
}

/// Brute-force search over plant equilibria on `[u_min, u_max]`.
pub fn sweep_model(params: &PlantParams, grid_n: usize, spec: RegressorSpec) -> Result<SteadyTarget, SteadyError> {
    if grid_n < 100 {
        return Err(SteadyError::GridTooSmall { min: 100, got: grid_n });
    }
    let (u, _) = scan_and_refine(|u| steady_cost(u, params), params.u_min, params.u_max, grid_n, 1e-10)
        .ok_or(SteadyError::InvalidBounds(params.u_min, params.u_max))?;
    SteadyTarget::from_model(u, params, spec).ok_or(SteadyError::InvalidBounds(params.u_min, params.u_max))
}

/// `(u, l_ss(u))` on `n` evenly spaced inputs.
pub fn equilibrium_curve(params: &PlantParams, n: usize) -> Vec<(f64, f64)> {
    grid(params.u_min, params.u_max, n.max(2))
        .into_iter()
        .filter_map(|u| steady_cost(u, params).map(|l| (u, l)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSteadyOptions {
    pub grid_n: usize,
    pub damping: f64,
    pub max_iter: usize,
    /// Tolerance on `|l - O(z(l, u), u)|`.
    pub tol: f64,
}

impl Default for OracleSteadyOptions {
    fn default() -> Self {
        Self { grid_n: 200, damping: 0.5, max_iter: 200, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSteadyReport {
    pub target: SteadyTarget,
    /// Grid inputs at which no fixed point was found.
    pub skipped: Vec<f64>,
}

/// Cost `l` with `l = O(z_s(l, u), u)`, or `None`.
pub fn oracle_fixed_point<P: CostPredictor + ?Sized>(
    oracle: &P,
    spec: RegressorSpec,
    u: f64,
    start: f64,
    opts: &OracleSteadyOptions,
) -> Option<f64> {
    let g = |l: f64| -> Option<f64> {
        let z = RegressorState::steady(spec, l, &[u]);
        oracle.predict(&z, &[u]).ok().filter(|v| v.is_finite()).map(|v| v - l)
    };
    let mut l = start;
    for _ in 0..opts.max_iter {
        let r = g(l)?;
        if r.abs() <= opts.tol {
            return Some(l);
        }
        l += opts.damping * r;
    }
    // damping cycles or diverges: bisection on the residual, in the smallest
    // bracket around the start that shows a sign change
    let mut width = 1e-3 * (1.0 + start.abs());
    let (mut a, mut b) = (start - width, start + width);
    let (mut ga, mut gb) = (g(a)?, g(b)?);
    let mut expansions = 0;
    while ga.signum() == gb.signum() && ga != 0.0 && gb != 0.0 {
        expansions += 1;
        if expansions > 60 {
            return None;
        }
        width *= 2.0;
        a = start - width;
        b = start + width;
        ga = g(a)?;
        gb = g(b)?;
    }
    if ga == 0.0 {
        return Some(a);
    }
    if gb == 0.0 {
        return Some(b);
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let gm = g(m)?;
        if gm.abs() <= opts.tol || (b - a) <= 1e-14 * (1.0 + m.abs()) {
            return Some(m);
        }
        if gm.signum() == ga.signum() {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Oracle-based optimal equilibrium over `u in [u_lo, u_hi]`.
///
/// `start` seeds each inner fixed-point search (a typical cost level, e.g.
/// the mean of the training costs).
pub fn solve_ss_oracle<P: CostPredictor + ?Sized>(
    oracle: &P,
    spec: RegressorSpec,
    u_bounds: (f64, f64),
    start: f64,
    opts: &OracleSteadyOptions,
) -> Result<OracleSteadyReport, SteadyError> {
    solve_ss_oracle_seeded(oracle, spec, u_bounds, |_| start, opts)
}

/// As [`solve_ss_oracle`], with an input-dependent seed for the inner search.
///
/// A learned oracle can have several fixed points at one input, some of them
/// far from any data; seeding near the measured steady cost at `u` selects
/// the one the data supports.
pub fn solve_ss_oracle_seeded<P, S>(
    oracle: &P,
    spec: RegressorSpec,
    u_bounds: (f64, f64),
    start: S,
    opts: &OracleSteadyOptions,
) -> Result<OracleSteadyReport, SteadyError>
where
    P: CostPredictor + ?Sized,
    S: Fn(f64) -> f64,
{
    if spec.m != 1 {
        return Err(SteadyError::MultiInput(spec.m));
    }
    let (lo, hi) = u_bounds;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(SteadyError::InvalidBounds(lo, hi));
    }
    if opts.grid_n < 2 {
        return Err(SteadyError::GridTooSmall { min: 2, got: opts.grid_n });
    }
    let mut skipped = Vec::new();
    for u in grid(lo, hi, opts.grid_n) {
        if oracle_fixed_point(oracle, spec, u, start(u), opts).is_none() {
            skipped.push(u);
        }
    }
    let (u_s, ell_s) = scan_and_refine(
        |u| oracle_fixed_point(oracle, spec, u, start(u), opts),
        lo,
        hi,
        opts.grid_n,
        1e-9,
    )
    .ok_or(SteadyError::NoFixedPoint)?;
    Ok(OracleSteadyReport { target: SteadyTarget::new(u_s, ell_s, None, spec), skipped })
}
