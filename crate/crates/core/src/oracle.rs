//! Cost oracle learned by Lipschitz interpolation ("kinky inference").
//!
//! Given samples `(q_i, y_i)` with `q = (z, u)` flattened per [`crate::narx`],
//! a Lipschitz constant `L` and the weighted max-norm
//! `d(q, q') = max_j w_j |q_j - q'_j|`, the prediction at `q` is the midpoint
//! of the tightest Lipschitz envelope:
//!
//! ```text
//! upper(q) = min_i (y_i + L d(q, q_i))
//! lower(q) = max_i (y_i - L d(q, q_i))
//! f(q)     = upper(q) / 2 + lower(q) / 2
//! ```
//!
//! Noise-free training points are reproduced exactly and the predictor is
//! `L`-Lipschitz under `d`.
//!
//! Evaluation walks a k-d tree over the data and skips subtrees that cannot
//! tighten either envelope. The result is bitwise identical to the exhaustive
//! scan.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kdtree::{weighted_max_norm, KdTree};
use crate::narx::{CostPredictor, PredictError, RegressorSpec, RegressorState};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample does not match the dataset structure: {0}")]
    Dimension(String),
    #[error("non-finite sample entry")]
    NonFinite,
    #[error("invalid oracle configuration: {0}")]
    InvalidConfig(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed dataset file: {0}")]
    Format(String),
}

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct SampleTag {
    pub experiment: u32,
    pub time: usize,
}

/// One observation `(z(k), u(k)) -> l(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub z: RegressorState,
    pub u: Vec<f64>,
    pub cost: f64,
    pub tag: SampleTag,
}

impl Sample {
    pub fn new(z: RegressorState, u: Vec<f64>, cost: f64, tag: SampleTag) -> Self {
        Self { z, u, cost, tag }
    }

    pub fn query(&self) -> Vec<f64> {
        self.z.query(&self.u)
    }
}

/// Append-only collection of samples sharing one regressor structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    spec: RegressorSpec,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(spec: RegressorSpec) -> Self {
        Self { spec, samples: Vec::new() }
    }

    pub fn spec(&self) -> RegressorSpec {
        self.spec
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: Sample) -> Result<(), OracleError> {
        if sample.z.spec() != self.spec {
            return Err(OracleError::Dimension(format!(
                "regressor structure {:?} differs from {:?}",
                sample.z.spec(),
                self.spec
            )));
        }
        if sample.u.len() != self.spec.m {
            return Err(OracleError::Dimension(format!(
                "input has {} entries, expected {}",
                sample.u.len(),
                self.spec.m
            )));
        }
        if !sample.cost.is_finite() || sample.u.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::NonFinite);
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn extend<I: IntoIterator<Item = Sample>>(&mut self, samples: I) -> Result<(), OracleError> {
        for s in samples {
            self.push(s)?;
        }
        Ok(())
    }

    /// Keeps every `stride`-th sample, starting with the first.
    pub fn subsample(&self, stride: usize) -> Dataset {
        let stride = stride.max(1);
        Dataset {
            spec: self.spec,
            samples: self.samples.iter().step_by(stride).cloned().collect(),
        }
    }

    /// Column names: past costs, past inputs, current input, current cost.
    pub fn csv_header(spec: RegressorSpec) -> Vec<String> {
        let input_name = |lag: &str, c: usize| {
            if spec.m == 1 {
                format!("u_{lag}")
            } else {
                format!("u{c}_{lag}")
            }
        };
        let mut cols: Vec<String> = (1..=spec.n_a).map(|i| format!("l_k-{i}")).collect();
        for i in 1..=spec.n_b {
            for c in 0..spec.m {
                cols.push(input_name(&format!("k-{i}"), c));
            }
        }
        for c in 0..spec.m {
            cols.push(input_name("k", c));
        }
        cols.push("l_k".to_string());
        cols
    }

    /// Writes one row per sample with 17 significant digits per value.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), OracleError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::csv_header(self.spec))?;
        let mut row = Vec::with_capacity(self.spec.query_dim() + 1);
        for s in &self.samples {
            row.clear();
            row.extend(s.query().into_iter().map(format_value));
            row.push(format_value(s.cost));
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads a file produced by [`Dataset::write_csv`]. Tags become `(0, row index)`.
    pub fn read_csv<R: Read>(reader: R, spec: RegressorSpec) -> Result<Dataset, OracleError> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != Self::csv_header(spec) {
            return Err(OracleError::Format(format!(
                "header {:?} does not match structure {:?}",
                header, spec
            )));
        }
        let mut data = Dataset::new(spec);
        let width = spec.query_dim() + 1;
        for (row, record) in r.records().enumerate() {
            let record = record?;
            if record.len() != width {
                return Err(OracleError::Format(format!("row {row} has {} fields", record.len())));
            }
            let vals = record
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| OracleError::Format(format!("row {row}: {e}")))?;
            let nz = spec.state_dim();
            let z = RegressorState::from_flat(spec, &vals[..nz])
                .map_err(|e| OracleError::Format(format!("row {row}: {e}")))?;
            let u = vals[nz..nz + spec.m].to_vec();
            let tag = SampleTag { experiment: 0, time: row };
            data.push(Sample::new(z, u, vals[width - 1], tag))?;
        }
        Ok(data)
    }
}

/// Decimal rendering with 17 significant digits (round-trips every `f64`).
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// How to build a [`LipschitzModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Fixed Lipschitz constant; estimated from the data when `None`.
    pub lipschitz: Option<f64>,
    /// Per-coordinate metric weights (length `n_z + m`); all ones when `None`.
    pub weights: Option<Vec<f64>>,
    /// Inflation applied to the largest observed difference quotient.
    pub safety_factor: f64,
    /// Keep every `stride`-th sample of the training set.
    pub stride: usize,
    /// Upper limit on the number of sample pairs examined when estimating `L`.
    pub max_pairs: usize,
    /// Seed for the pair subsample.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lipschitz: None,
            weights: None,
            safety_factor: 1.5,
            stride: 1,
            max_pairs: 200_000,
            seed: 0,
        }
    }
}

impl FitOptions {
    pub fn with_lipschitz(l: f64) -> Self {
        Self { lipschitz: Some(l), ..Self::default() }
    }
}

const LIPSCHITZ_FLOOR: f64 = 1e-12;

/// The learned oracle.
#[derive(Debug, Clone)]
pub struct LipschitzModel {
    dataset: Dataset,
    lipschitz: f64,
    estimated: bool,
    safety_factor: f64,
    weights: Vec<f64>,
    inconsistencies: usize,
    dim: usize,
    tree: KdTree,
}

impl LipschitzModel {
    /// Builds the interpolant from `data`.
    pub fn fit(data: &Dataset, opts: &FitOptions) -> Result<Self, OracleError> {
        let data = data.subsample(opts.stride);
        if data.is_empty() {
            return Err(OracleError::EmptyDataset);
        }
        let dim = data.spec.query_dim();
        let weights = match &opts.weights {
            Some(w) => {
                if w.len() != dim || w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(OracleError::InvalidConfig(format!(
                        "weights must be {dim} positive values"
                    )));
                }
                w.clone()
            }
            None => vec![1.0; dim],
        };
        if !(opts.safety_factor.is_finite() && opts.safety_factor >= 1.0) {
            return Err(OracleError::InvalidConfig("safety factor must be >= 1".into()));
        }
        let queries: Vec<f64> = data.samples.iter().flat_map(Sample::query).collect();
        let ys: Vec<f64> = data.samples.iter().map(|s| s.cost).collect();
        let (lipschitz, estimated) = match opts.lipschitz {
            Some(l) if l.is_finite() && l > 0.0 => (l, false),
            Some(l) => {
                return Err(OracleError::InvalidConfig(format!("Lipschitz constant must be > 0, got {l}")))
            }
            None => {
                let q = max_quotient_sampled(&queries, &ys, dim, &weights, opts.max_pairs, opts.seed);
                let l = match q {
                    Some(q) => (opts.safety_factor * q).max(LIPSCHITZ_FLOOR),
                    None => 1.0,
                };
                (l, true)
            }
        };
        let tree = KdTree::build(&queries, &ys, dim, &weights);
        let mut model = Self {
            dataset: Dataset::new(data.spec),
            lipschitz,
            estimated,
            safety_factor: opts.safety_factor,
            weights,
            inconsistencies: 0,
            dim,
            tree,
        };
        model.inconsistencies = count_conflicts(&queries, &ys, dim);
        model.dataset = data;
        Ok(model)
    }

    /// Appends samples and returns the updated model.
    ///
    /// With an estimated constant, `L` is raised to cover every new pair
    /// (new-vs-existing and new-vs-new), so it never decreases. A fixed
    /// constant stays fixed, and the result predicts exactly like a batch fit
    /// on the concatenated data.
    pub fn add_samples(&self, new: &[Sample]) -> Result<Self, OracleError> {
        let mut model = self.clone();
        let spec = model.dataset.spec;
        let mut new_queries = Vec::with_capacity(new.len() * model.dim);
        for s in new {
            model.dataset.push(s.clone())?;
            new_queries.extend(s.query());
        }
        if model.estimated {
            let mut best = 0.0f64;
            for (a, qa) in new_queries.chunks_exact(model.dim).enumerate() {
                let ya = new[a].cost;
                for (qb, &yb) in model.tree.points().chunks_exact(model.dim).zip(model.tree.values()) {
                    best = best.max(quotient(qa, ya, qb, yb, &model.weights));
                }
                for (b, qb) in new_queries.chunks_exact(model.dim).enumerate().take(a) {
                    best = best.max(quotient(qa, ya, qb, new[b].cost, &model.weights));
                }
            }
            model.lipschitz = model.lipschitz.max(model.safety_factor * best);
        }
        let mut points = model.tree.points().to_vec();
        let mut values = model.tree.values().to_vec();
        let mut seen = conflict_map(&points, &values, model.dim);
        points.extend_from_slice(&new_queries);
        values.extend(new.iter().map(|s| s.cost));
        model.tree = KdTree::build(&points, &values, model.dim, &model.weights);
        for (q, s) in new_queries.chunks_exact(model.dim).zip(new) {
            let bits: Vec<u64> = q.iter().map(|v| v.to_bits()).collect();
            match seen.get(&bits) {
                Some(&y) if y != s.cost => model.inconsistencies += 1,
                Some(_) => {}
                None => {
                    seen.insert(bits, s.cost);
                }
            }
        }
        debug_assert_eq!(model.dataset.spec, spec);
        Ok(model)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Whether `L` was estimated from data (as opposed to fixed by the caller).
    pub fn lipschitz_estimated(&self) -> bool {
        self.estimated
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn spec(&self) -> RegressorSpec {
        self.dataset.spec
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.len() == 0
    }

    /// Number of samples whose query duplicates an earlier one with a different cost.
    pub fn inconsistencies(&self) -> usize {
        self.inconsistencies
    }

    /// Weighted max-norm distance.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        weighted_max_norm(a, b, &self.weights)
    }

    /// Prediction at a flattened query vector.
    pub fn predict_query(&self, q: &[f64]) -> Result<f64, PredictError> {
        let (lo, up) = self.envelope(q)?;
        Ok(0.5 * up + 0.5 * lo)
    }

    /// Lower and upper Lipschitz envelopes at `q`.
    pub fn envelope(&self, q: &[f64]) -> Result<(f64, f64), PredictError> {
        if self.tree.len() == 0 {
            return Err(PredictError::EmptyDataset);
        }
        if q.len() != self.dim {
            return Err(PredictError::Dimension { expected: self.dim, got: q.len() });
        }
        Ok(self.tree.envelope(q, self.lipschitz))
    }

    /// Reference prediction by exhaustive scan over every sample.
    pub fn predict_exhaustive(&self, q: &[f64]) -> Result<f64, PredictError> {
        if self.tree.len() == 0 {
            return Err(PredictError::EmptyDataset);
        }
        if q.len() != self.dim {
            return Err(PredictError::Dimension { expected: self.dim, got: q.len() });
        }
        let mut up = f64::INFINITY;
        let mut low = f64::NEG_INFINITY;
        for (p, &y) in self.tree.points().chunks_exact(self.dim).zip(self.tree.values()) {
            let d = weighted_max_norm(q, p, &self.weights);
            up = up.min(y + self.lipschitz * d);
            low = low.max(y - self.lipschitz * d);
        }
        Ok(0.5 * up + 0.5 * low)
    }

    pub fn predict(&self, z: &RegressorState, u: &[f64]) -> Result<f64, PredictError> {
        if z.spec() != self.dataset.spec {
            return Err(PredictError::Dimension {
                expected: self.dataset.spec.state_dim(),
                got: z.spec().state_dim(),
            });
        }
        let mut q = Vec::with_capacity(self.dim);
        z.write_query(u, &mut q);
        self.predict_query(&q)
    }
}

impl CostPredictor for LipschitzModel {
    fn predict(&self, z: &RegressorState, u: &[f64]) -> Result<f64, PredictError> {
        LipschitzModel::predict(self, z, u)
    }
}

fn quotient(qa: &[f64], ya: f64, qb: &[f64], yb: f64, w: &[f64]) -> f64 {
    let d = weighted_max_norm(qa, qb, w);
    if d > 0.0 {
        (ya - yb).abs() / d
    } else {
        0.0
    }
}

/// Largest difference quotient over all pairs, or over `max_pairs` pairs
/// (every consecutive pair plus uniformly drawn ones) for large sets.
fn max_quotient_sampled(
    queries: &[f64],
    ys: &[f64],
    dim: usize,
    w: &[f64],
    max_pairs: usize,
    seed: u64,
) -> Option<f64> {
    let n = ys.len();
    if n < 2 {
        return None;
    }
    let row = |i: usize| &queries[i * dim..(i + 1) * dim];
    let mut best: Option<f64> = None;
    let mut consider = |i: usize, j: usize| {
        let d = weighted_max_norm(row(i), row(j), w);
        if d > 0.0 {
            let q = (ys[i] - ys[j]).abs() / d;
            best = Some(best.map_or(q, |b: f64| b.max(q)));
        }
    };
    let total = n * (n - 1) / 2;
    if total <= max_pairs {
        for i in 0..n {
            for j in 0..i {
                consider(i, j);
            }
        }
    } else {
        for i in 1..n {
            consider(i - 1, i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..max_pairs.saturating_sub(n - 1) {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i != j {
                consider(i, j);
            }
        }
    }
    best
}

/// Coordinate with the widest weighted spread; the scan prunes along it.
fn conflict_map(queries: &[f64], ys: &[f64], dim: usize) -> HashMap<Vec<u64>, f64> {
    let mut seen = HashMap::with_capacity(ys.len());
    for (q, &y) in queries.chunks_exact(dim).zip(ys) {
        seen.entry(q.iter().map(|v| v.to_bits()).collect()).or_insert(y);
    }
    seen
}

fn count_conflicts(queries: &[f64], ys: &[f64], dim: usize) -> usize {
    let mut seen: HashMap<Vec<u64>, f64> = HashMap::with_capacity(ys.len());
    let mut conflicts = 0;
    for (q, &y) in queries.chunks_exact(dim).zip(ys) {
        let bits: Vec<u64> = q.iter().map(|v| v.to_bits()).collect();
        match seen.get(&bits) {
            Some(&prev) if prev != y => conflicts += 1,
            Some(_) => {}
            None => {
                seen.insert(bits, y);
            }
        }
    }
    conflicts
}

/// Empirical estimation-error summary on held-out data.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBound {
    /// Largest absolute residual.
    pub mu: f64,
    /// `(level, |residual| quantile)` for levels 0.5, 0.9 and 0.99.
    pub residual_quantiles: Vec<(f64, f64)>,
    /// Signed residuals `measured - predicted`, in holdout order.
    pub residuals: Vec<f64>,
    /// Predictions, in holdout order.
    pub predictions: Vec<f64>,
}

impl ErrorBound {
    /// Absolute-residual quantile at `level`, if it was computed.
    pub fn quantile(&self, level: f64) -> Option<f64> {
        self.residual_quantiles
            .iter()
            .find(|(l, _)| (*l - level).abs() < 1e-12)
            .map(|&(_, q)| q)
    }
}

/// Nearest-rank quantile of already sorted values.
pub fn nearest_rank(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    let rank = ((level * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Residuals of `model` on `holdout`.
pub fn validate(model: &LipschitzModel, holdout: &Dataset) -> Result<ErrorBound, OracleError> {
    if holdout.is_empty() {
        return Err(OracleError::EmptyDataset);
    }
    let mut residuals = Vec::with_capacity(holdout.len());
    let mut predictions = Vec::with_capacity(holdout.len());
    for s in holdout.samples() {
        let p = model
            .predict(&s.z, &s.u)
            .map_err(|e| OracleError::Dimension(e.to_string()))?;
        predictions.push(p);
        residuals.push(s.cost - p);
    }
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let mu = *abs.last().expect("non-empty");
    let residual_quantiles = [0.5, 0.9, 0.99]
        .iter()
        .map(|&l| (l, nearest_rank(&abs, l)))
        .collect();
    Ok(ErrorBound { mu, residual_quantiles, residuals, predictions })
}
