//! Synthetic ensembles, recovery sweeps and a node-wise baseline.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{empirical_covariance, CovarianceMatrix};
use crate::error::{Error, Result};
use crate::mrf::{exact_observed_covariance, gibbs_sample, IsingParams, LabelMatrix, SourceGraph};
use crate::rpca::{self, SolverConfig};
use crate::structure::{
    compare_structures, select_threshold, threshold_edges, RecoveredStructure, ThresholdStrategy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleKind {
    Ssb,
    Sbd,
}

impl FromStr for EnsembleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssb" => Ok(EnsembleKind::Ssb),
            "sbd" => Ok(EnsembleKind::Sbd),
            other => Err(Error::Parse(format!("unknown ensemble kind '{other}' (expected ssb or sbd)"))),
        }
    }
}

/// Cliques occupy consecutive source indices starting at 0, in the order
/// given; sources past the last clique are singletons. `seed` is carried for
/// downstream sampling and does not affect the generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub m: usize,
    pub clique_sizes: Vec<usize>,
    pub strong_param: f64,
    pub weak_param: f64,
    pub accuracy_param: f64,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidParameter("m must be at least 1".into()));
        }
        let total: usize = self.clique_sizes.iter().sum();
        if total > self.m {
            return Err(Error::InvalidParameter(format!(
                "clique sizes sum to {total}, more than m = {}",
                self.m
            )));
        }
        if self.clique_sizes.contains(&0) {
            return Err(Error::InvalidParameter("clique sizes must be positive".into()));
        }
        if !(self.weak_param > 0.0 && self.strong_param > self.weak_param && self.strong_param.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need strong_param > weak_param > 0, got strong = {}, weak = {}",
                self.strong_param, self.weak_param
            )));
        }
        if !self.accuracy_param.is_finite() {
            return Err(Error::InvalidParameter("accuracy_param must be finite".into()));
        }
        Ok(())
    }

    fn cliques(&self) -> Vec<Vec<usize>> {
        let mut start = 0;
        self.clique_sizes
            .iter()
            .map(|&k| {
                let c: Vec<usize> = (start..start + k).collect();
                start += k;
                c
            })
            .collect()
    }
}

fn build_instance(
    spec: &EnsembleSpec,
    weight: impl Fn(usize, (usize, usize)) -> f64,
) -> Result<(SourceGraph, IsingParams)> {
    let cliques = spec.cliques();
    let graph = SourceGraph::from_cliques(spec.m, &cliques)?;
    let mut params = IsingParams::zeros(&graph);
    for (ci, clique) in cliques.iter().enumerate() {
        for (a, &i) in clique.iter().enumerate() {
            for &j in &clique[a + 1..] {
                params.theta_edge.insert((i, j), weight(ci, (i, j)));
            }
        }
    }
    params.theta_y_node = vec![spec.accuracy_param; spec.m];
    params.validate(&graph)?;
    Ok((graph, params))
}

/// One dominant clique (the first) at `strong_param`, all other clique edges
/// at `weak_param`.
pub fn generate_ssb_instance(spec: &EnsembleSpec) -> Result<(SourceGraph, IsingParams)> {
    spec.validate()?;
    if spec.kind != EnsembleKind::Ssb {
        return Err(Error::InvalidParameter("spec kind must be ssb".into()));
    }
    if spec.clique_sizes.is_empty() {
        return Err(Error::InvalidParameter("SSB instances need a dominant clique".into()));
    }
    build_instance(spec, |ci, _| if ci == 0 { spec.strong_param } else { spec.weak_param })
}

/// In every clique the lowest-indexed pair is strong and the rest weak.
pub fn generate_sbd_instance(spec: &EnsembleSpec) -> Result<(SourceGraph, IsingParams)> {
    spec.validate()?;
    if spec.kind != EnsembleKind::Sbd {
        return Err(Error::InvalidParameter("spec kind must be sbd".into()));
    }
    if spec.clique_sizes.len() < 2 {
        return Err(Error::InvalidParameter("SBD instances need at least 2 cliques".into()));
    }
    let firsts: Vec<(usize, usize)> = spec
        .cliques()
        .iter()
        .filter(|c| c.len() >= 2)
        .map(|c| (c[0], c[1]))
        .collect();
    build_instance(spec, |_, e| if firsts.contains(&e) { spec.strong_param } else { spec.weak_param })
}

pub fn generate_instance(spec: &EnsembleSpec) -> Result<(SourceGraph, IsingParams)> {
    match spec.kind {
        EnsembleKind::Ssb => generate_ssb_instance(spec),
        EnsembleKind::Sbd => generate_sbd_instance(spec),
    }
}

// ---------------------------------------------------------------------------
// Baseline

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub l1_weight: f64,
    pub threshold: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            l1_weight: 0.05,
            threshold: 0.1,
            max_iters: 500,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFit {
    pub structure: RecoveredStructure,
    /// Weight matrix: row i holds the regression of source i on the others.
    pub weights: DMatrix<f64>,
    pub converged: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ℓ1-penalized logistic regression of source `target` on the other sources,
/// with P(λ_i = y | x) = σ(2y(b + wᵀx)). Returns (weights, converged).
fn fit_node(labels: &LabelMatrix, target: usize, config: &BaselineConfig) -> (Vec<f64>, bool) {
    let (m, n) = (labels.m(), labels.n());
    let nf = n as f64;
    let y: Vec<f64> = (0..n).map(|p| labels.get(target, p) as f64).collect();
    let x: Vec<Vec<f64>> = (0..m)
        .map(|j| (0..n).map(|p| labels.get(j, p) as f64).collect())
        .collect();
    let mut w = vec![0.0; m];
    // The unpenalized intercept lives implicitly in u.
    let mut u = vec![0.0; n];
    // d²/du² log(1 + exp(−2yu)) ≤ 1, and every feature is ±1, so a unit
    // curvature bound makes each coordinate step a majorize-minimize step.
    let grad = |u: &[f64], feature: Option<&[f64]>| -> f64 {
        let mut g = 0.0;
        for p in 0..n {
            let xp = feature.map_or(1.0, |f| f[p]);
            g += -2.0 * y[p] * xp * sigmoid(-2.0 * y[p] * u[p]);
        }
        g / nf
    };
    for _ in 0..config.max_iters {
        let mut max_change = 0.0f64;
        let step = -grad(&u, None);
        if step != 0.0 {
            u.iter_mut().for_each(|v| *v += step);
            max_change = max_change.max(step.abs());
        }
        for j in 0..m {
            if j == target {
                continue;
            }
            let g = grad(&u, Some(&x[j]));
            let z = w[j] - g;
            let new = z.signum() * (z.abs() - config.l1_weight).max(0.0);
            let delta = new - w[j];
            if delta != 0.0 {
                w[j] = new;
                for p in 0..n {
                    u[p] += delta * x[j][p];
                }
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < config.tol {
            return (w, true);
        }
    }
    (w, false)
}

pub fn baseline_fit(labels: &LabelMatrix, config: &BaselineConfig) -> Result<BaselineFit> {
    if labels.n() < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            got: labels.n(),
        });
    }
    if !(config.l1_weight >= 0.0) {
        return Err(Error::InvalidParameter("l1_weight must be non-negative".into()));
    }
    if config.threshold < 0.0 || config.threshold.is_nan() {
        return Err(Error::NegativeThreshold(config.threshold));
    }
    let m = labels.m();
    let fits: Vec<(Vec<f64>, bool)> = (0..m).map(|i| fit_node(labels, i, config)).collect();
    let converged = fits.iter().all(|f| f.1);
    if !converged {
        log::warn!("baseline regression did not converge in {} iterations", config.max_iters);
    }
    let weights = DMatrix::from_fn(m, m, |i, j| fits[i].0[j]);
    let scores = DMatrix::from_fn(m, m, |i, j| weights[(i, j)].abs().max(weights[(j, i)].abs()));
    let structure = threshold_edges(&scores, config.threshold)?;
    Ok(BaselineFit {
        structure,
        weights,
        converged,
    })
}

/// Node-wise ℓ1 logistic regressions on the observed sources only, combined
/// with an OR rule.
pub fn baseline_pseudolikelihood(
    labels: &LabelMatrix,
    l1_weight: f64,
    threshold: f64,
) -> Result<RecoveredStructure> {
    let config = BaselineConfig {
        l1_weight,
        threshold,
        ..BaselineConfig::default()
    };
    Ok(baseline_fit(labels, &config)?.structure)
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rpca,
    Baseline,
}

impl Method {
    fn tag(self) -> u64 {
        match self {
            Method::Rpca => 1,
            Method::Baseline => 2,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Rpca => "rpca",
            Method::Baseline => "baseline",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rpca" => Ok(Method::Rpca),
            "baseline" => Ok(Method::Baseline),
            other => Err(Error::Parse(format!("unknown method '{other}' (expected rpca or baseline)"))),
        }
    }
}

/// λ_n used for a sample of size n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaSchedule {
    /// The solver's own `lambda_n` at every n.
    Fixed,
    /// λ_n = scale · √(ln m / n).
    SqrtLogOverN { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub solver: SolverConfig,
    pub lambda_schedule: LambdaSchedule,
    pub threshold: ThresholdStrategy,
    pub baseline: BaselineConfig,
    pub burn_in: usize,
    pub thin: usize,
    pub master_seed: u64,
    /// Feed rpca the exact Σ_O instead of sampled labels.
    pub exact_cov: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            n_grid: vec![10, 30, 100, 300, 1000],
            trials: 20,
            methods: vec![Method::Rpca, Method::Baseline],
            solver: SolverConfig::default(),
            lambda_schedule: LambdaSchedule::Fixed,
            threshold: ThresholdStrategy::LargestGap,
            baseline: BaselineConfig::default(),
            burn_in: 500,
            thin: 5,
            master_seed: 0,
            exact_cov: false,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if self.n_grid.contains(&0) {
            return Err(Error::InvalidParameter("n_grid entries must be positive".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("n_grid must be strictly ascending".into()));
        }
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thin must be at least 1".into()));
        }
        if let LambdaSchedule::SqrtLogOverN { scale } = self.lambda_schedule {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::InvalidParameter(format!("lambda scale must be positive, got {scale}")));
            }
        }
        self.solver.validate()
    }

    pub fn lambda_for(&self, m: usize, n: usize) -> f64 {
        match self.lambda_schedule {
            LambdaSchedule::Fixed => self.solver.lambda_n,
            LambdaSchedule::SqrtLogOverN { scale } => {
                scale * ((m.max(2) as f64).ln() / n as f64).sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub n: usize,
    pub trials: usize,
    pub successes: usize,
    pub success_fraction: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: Method,
    pub n: usize,
    pub trial: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub rows: Vec<SweepRow>,
    pub failures: Vec<CellFailure>,
    pub config: SweepConfig,
}

impl SweepResult {
    pub fn row(&self, method: Method, n: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.method == method && r.n == n)
    }

    pub fn success_curve(&self, method: Method) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.success_fraction)
            .collect()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Per-cell sampling seed; a pure function of its arguments.
pub fn cell_seed(master_seed: u64, method: Method, n: usize, trial: usize) -> u64 {
    [method.tag(), n as u64, trial as u64]
        .iter()
        .fold(splitmix64(master_seed), |h, &v| splitmix64(h ^ v))
}

/// Full rpca pipeline on a covariance: solve, pick a threshold, read edges.
pub fn rpca_structure(
    sigma: &CovarianceMatrix,
    solver: &SolverConfig,
    threshold: ThresholdStrategy,
) -> Result<RecoveredStructure> {
    let result = rpca::solve(sigma, solver)?;
    let t = select_threshold(&result.s_hat, threshold)?;
    threshold_edges(&result.s_hat, t)
}

struct CellOutcome {
    method: Method,
    n: usize,
    trial: usize,
    outcome: std::result::Result<(bool, f64, f64), String>,
}

fn run_cell(
    graph: &SourceGraph,
    params: &IsingParams,
    exact: Option<&CovarianceMatrix>,
    config: &SweepConfig,
    method: Method,
    n: usize,
    trial: usize,
) -> Result<(bool, f64, f64)> {
    let seed = cell_seed(config.master_seed, method, n, trial);
    let sample = || gibbs_sample(graph, params, n, config.burn_in, config.thin, seed);
    let estimate = match method {
        Method::Rpca => {
            let solver = SolverConfig {
                lambda_n: config.lambda_for(graph.m(), n),
                ..config.solver
            };
            let sigma = match exact {
                Some(s) => s.clone(),
                None => empirical_covariance(&sample()?)?.0,
            };
            rpca_structure(&sigma, &solver, config.threshold)?
        }
        Method::Baseline => {
            if exact.is_some() {
                return Err(Error::InvalidParameter("the baseline needs sampled labels".into()));
            }
            baseline_fit(&sample()?, &config.baseline)?.structure
        }
    };
    let metrics = compare_structures(graph, &estimate)?;
    Ok((metrics.exact_match, metrics.edge_precision, metrics.edge_recall))
}

/// Runs every (method, n, trial) cell in parallel. Cell errors count as
/// failures and are reported in `failures`; they never abort the sweep.
pub fn run_recovery_sweep(
    graph: &SourceGraph,
    params: &IsingParams,
    config: &SweepConfig,
) -> Result<SweepResult> {
    config.validate()?;
    params.validate(graph)?;
    let exact = if config.exact_cov {
        Some(CovarianceMatrix::new(exact_observed_covariance(graph, params)?)?)
    } else {
        None
    };
    let mut methods = config.methods.clone();
    methods.sort();
    methods.dedup();

    let cells: Vec<(Method, usize, usize)> = methods
        .iter()
        .flat_map(|&meth| {
            config
                .n_grid
                .iter()
                .flat_map(move |&n| (0..config.trials).map(move |t| (meth, n, t)))
        })
        .collect();
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|&(method, n, trial)| CellOutcome {
            method,
            n,
            trial,
            outcome: run_cell(graph, params, exact.as_ref(), config, method, n, trial)
                .map_err(|e| e.to_string()),
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &method in &methods {
        for &n in &config.n_grid {
            let (mut successes, mut precision, mut recall) = (0usize, 0.0, 0.0);
            for cell in outcomes.iter().filter(|c| c.method == method && c.n == n) {
                match &cell.outcome {
                    Ok((hit, p, r)) => {
                        successes += usize::from(*hit);
                        precision += p;
                        recall += r;
                    }
                    Err(reason) => {
                        log::warn!("{method} n={n} trial={}: {reason}", cell.trial);
                        failures.push(CellFailure {
                            method,
                            n,
                            trial: cell.trial,
                            reason: reason.clone(),
                        });
                    }
                }
            }
            let t = config.trials as f64;
            rows.push(SweepRow {
                method,
                n,
                trials: config.trials,
                successes,
                success_fraction: successes as f64 / t,
                mean_precision: precision / t,
                mean_recall: recall / t,
            });
        }
    }
    Ok(SweepResult {
        n_grid: config.n_grid.clone(),
        trials: config.trials,
        rows,
        failures,
        config: config.clone(),
    })
}

// ---------------------------------------------------------------------------
// Export

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl FromStr for ExportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(Error::Parse(format!("unknown format '{other}' (expected csv or json)"))),
        }
    }
}

/// One line of the CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub method: Method,
    pub n: usize,
    pub trials: usize,
    pub success_fraction: f64,
}

pub fn export_results(result: &SweepResult, path: &Path, format: ExportFormat) -> Result<()> {
    match format {
        ExportFormat::Json => {
            let w = BufWriter::new(File::create(path)?);
            serde_json::to_writer_pretty(w, result)?;
        }
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
            w.write_record(["method", "n", "trials", "success_fraction"])?;
            for r in &result.rows {
                w.serialize(CsvRow {
                    method: r.method,
                    n: r.n,
                    trials: r.trials,
                    success_fraction: r.success_fraction,
                })?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn load_results_json(path: &Path) -> Result<SweepResult> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn load_results_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["method", "n", "trials", "success_fraction"] {
        return Err(Error::Parse(format!("unexpected CSV header {headers:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
