//! Box-constrained minimization with quadratic-penalty equality constraints.
//!
//! All controllers share this backend. The inner solver is a projected BFGS
//! method on the penalized merit `f(x) + mu * |r(x)|^2`, with central
//! finite-difference gradients and an Armijo search along the projected path.
//! An outer loop raises `mu` tenfold until the equality residual is small or
//! has stopped shrinking, and the whole procedure is repeated from a handful
//! of starting points.

use std::cell::Cell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("bounds have mismatched lengths ({lower} vs {upper})")]
    BoundsLength { lower: usize, upper: usize },
    #[error("lower bound exceeds upper bound at coordinate {0}")]
    EmptyBox(usize),
    #[error("start point has length {got}, expected {expected}")]
    StartLength { expected: usize, got: usize },
    #[error("tolerance must be positive")]
    Tolerance,
}

/// Objective and equality constraints, evaluated together.
pub trait Objective {
    /// Returns `f(x)` and fills `residuals` with the equality residuals
    /// `r(x)` (left empty when there are none). Non-finite values act as an
    /// infinite barrier.
    fn eval(&self, x: &[f64], residuals: &mut Vec<f64>) -> f64;
}

impl<T: Objective + ?Sized> Objective for &T {
    fn eval(&self, x: &[f64], residuals: &mut Vec<f64>) -> f64 {
        (**self).eval(x, residuals)
    }
}

/// Unconstrained objective from a closure.
pub struct Unconstrained<F>(pub F);

impl<F: Fn(&[f64]) -> f64> Objective for Unconstrained<F> {
    fn eval(&self, x: &[f64], residuals: &mut Vec<f64>) -> f64 {
        residuals.clear();
        (self.0)(x)
    }
}

/// Objective and equality residuals from two closures.
pub struct Constrained<F, G>(pub F, pub G);

impl<F, G> Objective for Constrained<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut Vec<f64>),
{
    fn eval(&self, x: &[f64], residuals: &mut Vec<f64>) -> f64 {
        residuals.clear();
        (self.1)(x, residuals);
        (self.0)(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpProblem {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Initial penalty weight on the squared equality residual.
    pub penalty_weight: f64,
    /// Stationarity tolerance on the projected merit gradient, relative to
    /// `1 + |merit|`.
    pub tol: f64,
    /// Iteration cap of each inner solve.
    pub max_iter: usize,
    pub seed: u64,
    /// Caller-supplied starting points, tried first and in order.
    pub starts: Vec<Vec<f64>>,
    /// Number of deterministic starts: `starts` in order, then the box
    /// midpoint, capped at this count.
    pub n_starts: usize,
    /// Extra seeded uniform starts tried after the deterministic ones.
    pub random_starts: usize,
    /// Penalty rounds (each multiplies the weight by 10).
    pub max_penalty_rounds: usize,
}

impl NlpProblem {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            lower,
            upper,
            penalty_weight: 100.0,
            tol: 1e-6,
            max_iter: 200,
            seed: 0,
            starts: Vec::new(),
            n_starts: 3,
            random_starts: 0,
            max_penalty_rounds: 6,
        }
    }

    /// Same scalar box on every coordinate.
    pub fn uniform_box(n: usize, lo: f64, hi: f64) -> Self {
        Self::new(vec![lo; n], vec![hi; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn with_starts(mut self, starts: Vec<Vec<f64>>) -> Self {
        self.starts = starts;
        self
    }

    /// Residual level at which the equality constraints count as satisfied.
    pub fn feasibility_threshold(&self) -> f64 {
        10.0 * self.tol
    }

    fn check(&self) -> Result<(), SolverError> {
        if self.lower.len() != self.upper.len() {
            return Err(SolverError::BoundsLength { lower: self.lower.len(), upper: self.upper.len() });
        }
        if let Some(i) = (0..self.lower.len()).find(|&i| !(self.lower[i] <= self.upper[i])) {
            return Err(SolverError::EmptyBox(i));
        }
        if !(self.tol > 0.0) {
            return Err(SolverError::Tolerance);
        }
        for s in &self.starts {
            if s.len() != self.dim() {
                return Err(SolverError::StartLength { expected: self.dim(), got: s.len() });
            }
        }
        Ok(())
    }

    fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub x_opt: Vec<f64>,
    /// Objective value at `x_opt`, without the penalty term.
    pub f_opt: f64,
    /// Infinity norm of the equality residual at `x_opt`.
    pub eq_residual_norm: f64,
    /// Inner iterations summed over penalty rounds of the selected start.
    pub iterations: usize,
    /// `false` when an inner solve hit `max_iter`.
    pub converged: bool,
    /// Objective evaluations over all starts.
    pub evaluations: usize,
    /// Index of the start that produced `x_opt`.
    pub start_index: usize,
}

impl SolveResult {
    pub fn feasible(&self, problem: &NlpProblem) -> bool {
        self.eq_residual_norm <= problem.feasibility_threshold()
    }
}

struct Merit<'a, O: ?Sized> {
    obj: &'a O,
    mu: f64,
    evals: &'a Cell<usize>,
    buf: std::cell::RefCell<Vec<f64>>,
}

impl<O: Objective + ?Sized> Merit<'_, O> {
    /// Returns (merit, objective, residual inf-norm).
    fn eval_full(&self, x: &[f64]) -> (f64, f64, f64) {
        self.evals.set(self.evals.get() + 1);
        let mut r = self.buf.borrow_mut();
        r.clear();
        let f = self.obj.eval(x, &mut r);
        let sq: f64 = r.iter().map(|v| v * v).sum();
        let inf = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let merit = f + self.mu * sq;
        if merit.is_finite() && inf.is_finite() {
            (merit, f, inf)
        } else {
            (f64::INFINITY, f64::INFINITY, f64::INFINITY)
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.eval_full(x).0
    }
}

/// Central finite differences, one-sided where the box is hit.
fn gradient<O: Objective + ?Sized>(m: &Merit<'_, O>, p: &NlpProblem, x: &[f64], fx: f64, g: &mut [f64]) {
    let mut xt = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        let up_ok = x[i] + h <= p.upper[i];
        let down_ok = x[i] - h >= p.lower[i];
        let fp = up_ok.then(|| {
            xt[i] = x[i] + h;
            m.value(&xt)
        });
        let fm = down_ok.then(|| {
            xt[i] = x[i] - h;
            m.value(&xt)
        });
        let fin = |v: Option<f64>| v.filter(|v| v.is_finite());
        g[i] = match (fin(fp), fin(fm)) {
            (Some(a), Some(b)) => (a - b) / (2.0 * h),
            (Some(a), None) => (a - fx) / h,
            (None, Some(b)) => (fx - b) / h,
            (None, None) => 0.0,
        };
        if !g[i].is_finite() {
            g[i] = 0.0;
        }
        xt[i] = x[i];
    }
}

struct InnerOutcome {
    x: Vec<f64>,
    iterations: usize,
    hit_cap: bool,
}

fn projected_bfgs<O: Objective + ?Sized>(m: &Merit<'_, O>, p: &NlpProblem, x0: &[f64]) -> InnerOutcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    p.project(&mut x);
    let mut fx = m.value(&x);
    let mut g = vec![0.0; n];
    gradient(m, p, &x, fx, &mut g);
    let width = p
        .lower
        .iter()
        .zip(&p.upper)
        .map(|(l, u)| u - l)
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let mut h = identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut stall = 0;
    while iterations < p.max_iter {
        let pg = projected_gradient_norm(p, &x, &g);
        if pg <= p.tol * (1.0 + fx.abs()) {
            return InnerOutcome { x, iterations, hit_cap: false };
        }
        // Coordinates within `eps` of a bound the gradient pushes into are
        // moved onto it; otherwise BFGS steps keep bouncing off the bound.
        let eps = pg.min(1e-4 * width);
        let mut snapped = x.clone();
        for i in 0..n {
            if g[i] > 0.0 && x[i] > p.lower[i] && x[i] - p.lower[i] <= eps {
                snapped[i] = p.lower[i];
            } else if g[i] < 0.0 && x[i] < p.upper[i] && p.upper[i] - x[i] <= eps {
                snapped[i] = p.upper[i];
            }
        }
        if snapped != x {
            let fs = m.value(&snapped);
            if fs <= fx {
                iterations += 1;
                x = snapped;
                fx = fs;
                gradient(m, p, &x, fx, &mut g);
                continue;
            }
        }
        // `h` is kept across active-set changes and only its free block is
        // used; resetting on every change stalls near a bound
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let at_lo = x[i] <= p.lower[i] && g[i] > 0.0;
                let at_hi = x[i] >= p.upper[i] && g[i] < 0.0;
                !(at_lo || at_hi)
            })
            .collect();
        let mut d = vec![0.0; n];
        for i in 0..n {
            if free[i] {
                d[i] = -(0..n).filter(|&j| free[j]).map(|j| h[i * n + j] * g[j]).sum::<f64>();
            }
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h = identity(n);
            fresh = true;
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                return InnerOutcome { x, iterations, hit_cap: false };
            }
        }
        let dmax = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut t = if fresh { (0.1 * width / dmax).min(1.0) } else { 1.0 };
        let trial = |t: f64| {
            let mut xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            p.project(&mut xt);
            let decrease: f64 = g.iter().zip(xt.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
            let ft = m.value(&xt);
            (ft <= fx + 1e-4 * decrease && ft.is_finite()).then_some((xt, ft))
        };
        let mut accepted = None;
        for k in 0..50 {
            if let Some(hit) = trial(t) {
                accepted = Some(hit);
                if k == 0 {
                    // a full step that succeeds may be far too short when the
                    // curvature estimate is polluted by difference noise
                    for _ in 0..30 {
                        match trial(2.0 * t) {
                            Some(next) if next.1 < accepted.as_ref().map_or(f64::INFINITY, |a| a.1) => {
                                t *= 2.0;
                                accepted = Some(next);
                            }
                            _ => break,
                        }
                    }
                }
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        let Some((xn, fnew)) = accepted else {
            // no progress along a descent direction: stationary to FD accuracy
            if fresh {
                return InnerOutcome { x, iterations, hit_cap: false };
            }
            h = identity(n);
            fresh = true;
            continue;
        };
        let mut gn = vec![0.0; n];
        gradient(m, p, &xn, fnew, &mut gn);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        // curvature pairs live in the free subspace; gradient changes of
        // clamped coordinates would corrupt the free block of `h`
        let y: Vec<f64> = (0..n).map(|i| if free[i] { gn[i] - g[i] } else { 0.0 }).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        if sy > 1e-12 * (ss * yy).sqrt() && sy > 0.0 {
            if fresh {
                let scale = sy / yy;
                h.iter_mut().for_each(|v| *v *= scale);
            }
            bfgs_update(&mut h, &s, &y, sy);
            fresh = false;
        }
        let progress = fx - fnew;
        let smax = s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if progress <= 1e-15 * (1.0 + fx.abs()) && smax <= 1e-12 * (1.0 + width) {
            stall += 1;
        } else {
            stall = 0;
        }
        x = xn;
        fx = fnew;
        g = gn;
        if stall >= 3 {
            return InnerOutcome { x, iterations, hit_cap: false };
        }
    }
    let done = projected_gradient_norm(p, &x, &g) <= p.tol * (1.0 + fx.abs());
    InnerOutcome { x, iterations, hit_cap: !done }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn projected_gradient_norm(p: &NlpProblem, x: &[f64], g: &[f64]) -> f64 {
    (0..x.len())
        .map(|i| (x[i] - (x[i] - g[i]).clamp(p.lower[i], p.upper[i])).abs())
        .fold(0.0f64, f64::max)
}

/// Inverse-Hessian BFGS update `H <- (I - r s y') H (I - r y s') + r s s'`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let r = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -r * (hy[i] * s[j] + s[i] * hy[j]) + (r * r * yhy + r) * s[i] * s[j];
        }
    }
}

fn start_points(p: &NlpProblem) -> Vec<Vec<f64>> {
    let n = p.dim();
    let mut starts: Vec<Vec<f64>> = Vec::new();
    let push = |mut s: Vec<f64>, starts: &mut Vec<Vec<f64>>| {
        p.project(&mut s);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if !starts.iter().any(|t| bits(t) == bits(&s)) {
            starts.push(s);
        }
    };
    for s in &p.starts {
        if starts.len() >= p.n_starts.max(1) {
            break;
        }
        push(s.clone(), &mut starts);
    }
    if starts.len() < p.n_starts.max(1) {
        let mid: Vec<f64> = p.lower.iter().zip(&p.upper).map(|(l, u)| 0.5 * (l + u)).collect();
        push(mid, &mut starts);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let wanted = starts.len() + p.random_starts;
    let mut guard = 0;
    while starts.len() < wanted && guard < 100 {
        let s: Vec<f64> = (0..n)
            .map(|i| {
                if p.upper[i] > p.lower[i] {
                    rng.random_range(p.lower[i]..p.upper[i])
                } else {
                    p.lower[i]
                }
            })
            .collect();
        push(s, &mut starts);
        guard += 1;
    }
    starts
}

struct StartOutcome {
    x: Vec<f64>,
    f: f64,
    residual: f64,
    iterations: usize,
    converged: bool,
}

fn solve_from<O: Objective + ?Sized>(obj: &O, p: &NlpProblem, x0: &[f64], evals: &Cell<usize>) -> StartOutcome {
    let mut mu = p.penalty_weight.max(0.0);
    let mut x = x0.to_vec();
    let mut iterations = 0;
    let mut converged = false;
    let rounds = p.max_penalty_rounds.max(1);
    let mut stalls = 0;
    let mut out = None;
    for round in 0..rounds {
        let merit = Merit { obj, mu, evals, buf: Default::default() };
        let inner = projected_bfgs(&merit, p, &x);
        iterations += inner.iterations;
        // earlier rounds only warm-start the next one
        converged = !inner.hit_cap;
        x = inner.x;
        let (_, f, res) = merit.eval_full(&x);
        let prev = out.map(|(_, prev): (f64, f64)| prev);
        out = Some((f, res));
        // a residual that no longer shrinks signals an infeasible or locally
        // infeasible problem, once it happens twice in a row
        stalls = if prev.is_some_and(|prev| res > 0.9 * prev) { stalls + 1 } else { 0 };
        let stagnant = stalls >= 2;
        if res <= p.feasibility_threshold() || stagnant || round + 1 == rounds {
            break;
        }
        mu = if mu > 0.0 { mu * 10.0 } else { 1.0 };
    }
    let (f, residual) = out.expect("at least one round");
    StartOutcome { x, f, residual, iterations, converged }
}

/// Minimizes `obj` over the box of `problem`. Deterministic for a given problem.
pub fn minimize<O: Objective + ?Sized>(obj: &O, problem: &NlpProblem) -> Result<SolveResult, SolverError> {
    problem.check()?;
    let evals = Cell::new(0);
    let thresh = problem.feasibility_threshold();
    let mut best: Option<(usize, StartOutcome)> = None;
    for (i, x0) in start_points(problem).iter().enumerate() {
        let cand = solve_from(obj, problem, x0, &evals);
        let better = match &best {
            None => true,
            Some((_, b)) => {
                let cf = cand.residual <= thresh;
                let bf = b.residual <= thresh;
                match (cf, bf) {
                    (true, false) => true,
                    (false, true) => false,
                    (true, true) => cand.f < b.f,
                    (false, false) => cand.residual < b.residual || (cand.residual == b.residual && cand.f < b.f),
                }
            }
        };
        if better {
            best = Some((i, cand));
        }
    }
    let (start_index, b) = best.expect("at least one start");
    Ok(SolveResult {
        x_opt: b.x,
        f_opt: b.f,
        eq_residual_norm: b.residual,
        iterations: b.iterations,
        converged: b.converged,
        evaluations: evals.get(),
        start_index,
    })
}
