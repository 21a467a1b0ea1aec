//! Command-line interface.
//!
//! Every command accepts `--config FILE`, a flat TOML file of `key = value`
//! pairs. Keys are the long flag names of the chosen command (underscores and
//! hyphens are interchangeable); flags given on the command line win.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{
    self, ConditionConstants, EffectiveRankBound, IdentifiabilityReport, InstanceIdentifiability,
    LowerBoundReport, MuEstimate, RateCondition, RateEstimate, SpectralInputs, SupportPattern,
    Transversality, UniversalConstants,
};
use crate::covariance::{effective_rank, empirical_covariance, CovarianceMatrix};
use crate::error::{Error, Result};
use crate::experiments::{
    self, BaselineConfig, EnsembleKind, EnsembleSpec, ExportFormat, LambdaSchedule, Method,
    SweepConfig,
};
use crate::io;
use crate::linalg;
use crate::mrf::{self, IsingParams, SourceGraph, MAX_ENUMERATION_SOURCES};
use crate::rpca::{self, SolverConfig, StepPolicy};
use crate::structure::{self, ThresholdStrategy};

#[derive(Debug, Parser)]
#[command(name = "wsstruct", version, about = "Learn dependency structure among weak supervision sources")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Flat TOML file with `key = value` defaults for the command's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample labels from a synthetic ensemble and write the ground truth.
    Simulate(SimulateArgs),
    /// Recover the dependency graph from labels or a covariance.
    Learn(LearnArgs),
    /// Identifiability, condition checks, sample-size rates and lower bound.
    Diagnose(DiagnoseArgs),
    /// Recovery-probability sweep over sample sizes.
    Sweep(SweepArgs),
    /// Exact covariance and block decomposition of a small model.
    Oracle(OracleArgs),
}

fn parse_kind(s: &str) -> std::result::Result<EnsembleKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EnsembleArgs {
    /// Ensemble family: ssb or sbd.
    #[arg(long, default_value = "ssb", value_parser = parse_kind)]
    pub kind: EnsembleKind,
    /// Number of sources.
    #[arg(long, default_value_t = 20)]
    pub m: usize,
    /// Clique sizes, comma separated; the first is the dominant one for ssb.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    pub cliques: Vec<usize>,
    /// Strong edge parameter.
    #[arg(long, default_value_t = 1.0)]
    pub strong: f64,
    /// Weak edge parameter.
    #[arg(long, default_value_t = 0.2)]
    pub weak: f64,
    /// Source accuracy parameter θ_{Y,i}.
    #[arg(long, default_value_t = 0.5)]
    pub accuracy: f64,
}

impl EnsembleArgs {
    fn spec(&self, seed: u64) -> EnsembleSpec {
        EnsembleSpec {
            kind: self.kind,
            m: self.m,
            clique_sizes: self.cliques.clone(),
            strong_param: self.strong,
            weak_param: self.weak,
            accuracy_param: self.accuracy,
            seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SamplingArgs {
    /// Gibbs sweeps discarded before sampling.
    #[arg(long, default_value_t = 500)]
    pub burn_in: usize,
    /// Gibbs sweeps between kept samples.
    #[arg(long, default_value_t = 5)]
    pub thin: usize,
    /// Seed for all randomness in this invocation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    /// Number of samples.
    #[arg(long)]
    pub n: usize,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Directory for labels.csv, graph.json and params.json.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    /// Regularization weight λ_n.
    #[arg(long, default_value_t = 0.05)]
    pub lambda: f64,
    /// Relative weight γ of the ℓ1 penalty.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 20_000)]
    pub max_iters: usize,
    /// Stopping tolerance on the KKT residual.
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    /// Fixed step size; backtracking from 1/‖Σ‖ when omitted.
    #[arg(long)]
    pub step: Option<f64>,
    /// Backtracking shrink factor.
    #[arg(long, default_value_t = 0.5)]
    pub shrink: f64,
    /// Smallest eigenvalue allowed for S − L.
    #[arg(long, default_value_t = 1e-6)]
    pub pd_floor: f64,
}

impl SolverArgs {
    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            lambda_n: self.lambda,
            gamma: self.gamma,
            max_iters: self.max_iters,
            tol: self.tol,
            step_policy: match self.step {
                Some(eta) => StepPolicy::Fixed { eta },
                None => StepPolicy::Backtracking {
                    shrink: self.shrink,
                    eta0: None,
                },
            },
            pd_floor: self.pd_floor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    LargestGap,
    Fixed,
    ExpectedEdges,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ThresholdArgs {
    /// How the edge threshold T is chosen.
    #[arg(long, value_enum, default_value = "largest-gap")]
    pub threshold_strategy: StrategyKind,
    /// T for the fixed strategy.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// k for the expected-edges strategy.
    #[arg(long)]
    pub expected_edges: Option<usize>,
}

impl ThresholdArgs {
    pub fn strategy(&self) -> Result<ThresholdStrategy> {
        match self.threshold_strategy {
            StrategyKind::LargestGap => Ok(ThresholdStrategy::LargestGap),
            StrategyKind::Fixed => self
                .threshold
                .map(ThresholdStrategy::Fixed)
                .ok_or_else(|| Error::InvalidParameter("--threshold-strategy fixed needs --threshold".into())),
            StrategyKind::ExpectedEdges => self.expected_edges.map(ThresholdStrategy::ExpectedEdges).ok_or_else(|| {
                Error::InvalidParameter("--threshold-strategy expected-edges needs --expected-edges".into())
            }),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LearnArgs {
    /// Label CSV (`m,n` line, then n rows of m votes).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Read labels from {0, 1} instead of {-1, 1}.
    #[arg(long)]
    pub zero_one: bool,
    /// Precomputed covariance (.json or CSV).
    #[arg(long)]
    pub from_cov: Option<PathBuf>,
    /// Use the exact covariance of --graph/--params.
    #[arg(long)]
    pub exact_cov: bool,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Ground-truth graph to score against (defaults to --graph).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    /// Directory for structure.json and decomposition.json.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DiagnoseArgs {
    /// Graph JSON for enumeration-backed diagnostics.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Params JSON for enumeration-backed diagnostics.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Maximum degree (scalar mode).
    #[arg(long)]
    pub d: Option<usize>,
    /// Number of sources (scalar mode).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub a_min: Option<f64>,
    #[arg(long)]
    pub a_max: Option<f64>,
    #[arg(long)]
    pub c_min: Option<f64>,
    #[arg(long)]
    pub c_max: Option<f64>,
    /// Effective rank of Σ_O (scalar mode).
    #[arg(long)]
    pub r_e: Option<f64>,
    /// Number of source clusters (scalar mode).
    #[arg(long)]
    pub s: Option<usize>,
    /// Transversality constants; override the Monte Carlo estimates.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub delta_t: Option<f64>,
    /// Spectral inputs (scalar mode).
    #[arg(long)]
    pub psi_1: Option<f64>,
    #[arg(long)]
    pub psi_m: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub k_o_min: Option<f64>,
    #[arg(long, default_value_t = 0.25)]
    pub nu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    /// Constant c in the SSB check r_e ≤ c·d.
    #[arg(long, default_value_t = 3.0)]
    pub c_ssb: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c4: f64,
    /// Edge strength θ for the lower bound.
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    /// Error probability δ for the lower bound.
    #[arg(long, default_value_t = 0.5)]
    pub delta: f64,
    /// Enables Monte Carlo estimates; without it the report is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value = "diagnostics.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    /// Sweep a given instance instead of generating one.
    #[arg(long, requires = "params")]
    pub graph: Option<PathBuf>,
    #[arg(long, requires = "graph")]
    pub params: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "10,30,100,300,1000")]
    pub n_grid: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, value_delimiter = ',', default_value = "rpca,baseline", value_parser = parse_method)]
    pub methods: Vec<Method>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Use λ_n = scale·√(ln m / n) instead of a fixed --lambda.
    #[arg(long)]
    pub lambda_scale: Option<f64>,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[arg(long, default_value_t = 0.05)]
    pub baseline_l1: f64,
    #[arg(long, default_value_t = 0.1)]
    pub baseline_threshold: f64,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Give rpca the exact covariance instead of samples.
    #[arg(long)]
    pub exact_cov: bool,
    /// Output file; .json writes the full result, anything else CSV.
    #[arg(long, default_value = "sweep.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OracleArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    /// Σ_O as CSV (.json for the `{"m","values"}` form).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON with the full covariance and its block decomposition.
    #[arg(long)]
    pub decomposition_out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Config-file injection

fn toml_value_to_arg(key: &str, value: &toml::Value) -> Result<Option<String>> {
    Ok(Some(match value {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(true) => return Ok(None),
        toml::Value::Array(items) => items
            .iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(s.clone()),
                toml::Value::Integer(i) => Ok(i.to_string()),
                toml::Value::Float(f) => Ok(f.to_string()),
                _ => Err(Error::Parse(format!("config key '{key}': unsupported array element"))),
            })
            .collect::<Result<Vec<_>>>()?
            .join(","),
        _ => return Err(Error::Parse(format!("config key '{key}' must be a scalar or flat array"))),
    }))
}

/// Turns a flat TOML document into `--key value` arguments.
pub fn config_to_args(text: &str) -> Result<Vec<String>> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Parse(format!("config file: {e}")))?;
    let mut out = Vec::new();
    for (key, value) in &table {
        if key == "config" {
            return Err(Error::Parse("config files cannot nest --config".into()));
        }
        let flag = format!("--{}", key.replace('_', "-"));
        if let toml::Value::Boolean(false) = value {
            continue;
        }
        out.push(flag);
        if let Some(v) = toml_value_to_arg(key, value)? {
            out.push(v);
        }
    }
    Ok(out)
}

/// Removes `--config FILE` from argv and splices the file's arguments in
/// right after the subcommand, ahead of the explicit flags.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config: Option<PathBuf> = None;
    let mut iter = args.into_iter();
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            let path = iter
                .next()
                .ok_or_else(|| Error::Parse("--config needs a file".into()))?;
            config = Some(PathBuf::from(path));
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let injected = config_to_args(&fs::read_to_string(&path)?)?;
    let sub = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 1)
        .ok_or_else(|| Error::Parse("--config given without a command".into()))?;
    let mut out: Vec<OsString> = rest[..=sub].to_vec();
    out.extend(injected.into_iter().map(OsString::from));
    out.extend(rest[sub + 1..].iter().cloned());
    Ok(out)
}

// ---------------------------------------------------------------------------
// Commands

#[derive(Serialize)]
struct Snapshot<'a, T: Serialize> {
    command: &'a str,
    args: &'a T,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    if args.n == 0 {
        return Err(Error::InvalidParameter("--n must be at least 1".into()));
    }
    let spec = args.ensemble.spec(args.sampling.seed);
    let (graph, params) = experiments::generate_instance(&spec)?;
    let labels = mrf::gibbs_sample(
        &graph,
        &params,
        args.n,
        args.sampling.burn_in,
        args.sampling.thin,
        args.sampling.seed,
    )?;
    ensure_dir(&args.out_dir)?;
    io::write_labels(&args.out_dir.join("labels.csv"), &labels)?;
    io::write_json(&args.out_dir.join("graph.json"), &graph)?;
    io::write_json(&args.out_dir.join("params.json"), &params)?;
    println!(
        "m={} n={} s={} d={}",
        graph.m(),
        labels.n(),
        graph.cluster_count(),
        graph.max_degree()
    );
    Ok(())
}

fn learn_covariance(args: &LearnArgs) -> Result<CovarianceMatrix> {
    let sources = [args.labels.is_some(), args.from_cov.is_some(), args.exact_cov]
        .iter()
        .filter(|&&b| b)
        .count();
    if sources != 1 {
        return Err(Error::InvalidParameter(
            "give exactly one of --labels, --from-cov, --exact-cov".into(),
        ));
    }
    if let Some(p) = &args.labels {
        return Ok(empirical_covariance(&io::read_labels(p, args.zero_one)?)?.0);
    }
    if let Some(p) = &args.from_cov {
        return io::read_covariance(p);
    }
    let (Some(g), Some(p)) = (&args.graph, &args.params) else {
        return Err(Error::InvalidParameter("--exact-cov needs --graph and --params".into()));
    };
    let graph: SourceGraph = io::read_json(g)?;
    let params: IsingParams = io::read_json(p)?;
    CovarianceMatrix::new(mrf::exact_observed_covariance(&graph, &params)?)
}

pub fn cmd_learn(args: &LearnArgs) -> Result<()> {
    let strategy = args.threshold.strategy()?;
    let solver = args.solver.config();
    solver.validate()?;
    let sigma = learn_covariance(args)?;
    let truth_path = args.truth.as_ref().or(args.graph.as_ref());
    let truth: Option<SourceGraph> = truth_path.map(|p| io::read_json(p)).transpose()?;
    let snapshot = Snapshot {
        command: "learn",
        args,
    };
    ensure_dir(&args.out_dir)?;
    let decomposition_path = args.out_dir.join("decomposition.json");

    let result = match rpca::solve(&sigma, &solver) {
        Ok(r) => r,
        Err(e) => {
            io::write_json(
                &decomposition_path,
                &serde_json::json!({ "error": e.to_string(), "config": snapshot }),
            )?;
            return Err(e);
        }
    };
    io::write_json(
        &decomposition_path,
        &serde_json::json!({ "decomposition": result, "config": snapshot }),
    )?;
    let t = structure::select_threshold(&result.s_hat, strategy)?;
    let recovered = structure::threshold_edges(&result.s_hat, t)?;
    let metrics = truth
        .as_ref()
        .map(|g| structure::compare_structures(g, &recovered))
        .transpose()?;
    io::write_json(
        &args.out_dir.join("structure.json"),
        &serde_json::json!({ "structure": recovered, "metrics": metrics, "config": snapshot }),
    )?;
    let mut line = format!(
        "edges={} threshold={t} iterations={} converged={}",
        recovered.edges.len(),
        result.iterations,
        result.converged
    );
    if let Some(m) = &metrics {
        line.push_str(&format!(" exact_match={}", m.exact_match));
    }
    println!("{line}");
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SbdCheck {
    pub holds: bool,
    pub r_e_limit: f64,
    pub s_limit: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SsbCheck {
    pub holds: bool,
    pub c: f64,
    pub r_e_limit: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub mode: &'static str,
    pub m: usize,
    pub d: Option<usize>,
    pub s: Option<usize>,
    pub r_e: Option<f64>,
    pub identifiability: Option<IdentifiabilityReport>,
    pub instance_identifiability: Option<InstanceIdentifiability>,
    pub sbd: Option<SbdCheck>,
    pub ssb: Option<SsbCheck>,
    pub mu: Option<MuEstimate>,
    pub transversality: Option<Transversality>,
    pub constants: Option<ConditionConstants>,
    pub irrepresentable: Option<bool>,
    pub rates: Vec<RateEstimate>,
    pub effective_rank_bound: Option<EffectiveRankBound>,
    pub lower_bound: LowerBoundReport,
    pub notes: Vec<String>,
}

struct InstanceFacts {
    m: usize,
    d: usize,
    s: usize,
    r_e: f64,
    identifiability: Option<IdentifiabilityReport>,
    instance: Option<InstanceIdentifiability>,
    spectral: Option<SpectralInputs>,
    transversality: Option<Transversality>,
    mu: Option<MuEstimate>,
    er_bound: Option<EffectiveRankBound>,
}

fn instance_facts(args: &DiagnoseArgs, notes: &mut Vec<String>) -> Result<InstanceFacts> {
    let (Some(gp), Some(pp)) = (&args.graph, &args.params) else {
        unreachable!("checked by caller")
    };
    let graph: SourceGraph = io::read_json(gp)?;
    let params: IsingParams = io::read_json(pp)?;
    if graph.m() > MAX_ENUMERATION_SOURCES {
        return Err(Error::InvalidParameter(format!(
            "m = {} exceeds the enumeration budget of {MAX_ENUMERATION_SOURCES}; \
             pass scalar inputs instead: --m --d --a-min --a-max --c-min --c-max \
             (plus --r-e and --s for the condition checks)",
            graph.m()
        )));
    }
    let full = mrf::exact_covariance(&graph, &params)?;
    let truth = mrf::ground_truth_decomposition(&full)?;
    let m = graph.m();
    let sigma_o = CovarianceMatrix::new(full.view((0, 0), (m, m)).into_owned())?;
    let eig = sigma_o.psd_eigenvalues()?;
    let spectral = SpectralInputs {
        psi_1: eig.max(),
        psi_m: eig.min(),
        sigma: truth.z.norm_squared(),
        k_o_min: analysis::k_o_min(&truth.k_o),
    };
    let instance = analysis::instance_identifiability(&graph, &full, &truth)?;
    let (transversality, mu) = match args.seed {
        Some(seed) => {
            let support = SupportPattern::from_graph(&graph, true);
            let t = analysis::transversality_constants(&sigma_o, &support, &truth.z, args.trials, seed)?;
            let mu = analysis::mu_estimate(&SupportPattern::from_graph(&graph, false), args.trials, seed);
            (Some(t), Some(mu))
        }
        None => {
            notes.push("no --seed: Monte Carlo transversality and μ estimates skipped".into());
            (None, None)
        }
    };
    Ok(InstanceFacts {
        m,
        d: graph.max_degree(),
        s: graph.cluster_count(),
        r_e: effective_rank(&sigma_o)?,
        identifiability: instance.formula.clone(),
        instance: Some(instance),
        spectral: Some(spectral),
        transversality,
        mu,
        er_bound: Some(analysis::effective_rank_bound(sigma_o.values(), &truth)?),
    })
}

fn scalar_facts(args: &DiagnoseArgs, notes: &mut Vec<String>) -> Result<InstanceFacts> {
    let m = args.m.ok_or_else(|| {
        Error::InvalidParameter(
            "diagnose needs either --graph and --params or scalar inputs starting with --m".into(),
        )
    })?;
    let identifiability = match (args.d, args.a_min, args.a_max, args.c_min, args.c_max) {
        (Some(d), Some(a0), Some(a1), Some(c0), Some(c1)) => Some(analysis::lemma1_bound(d, m, a0, a1, c0, c1)?),
        _ => {
            notes.push("identifiability needs --d --a-min --a-max --c-min --c-max".into());
            None
        }
    };
    let spectral = match (args.psi_1, args.psi_m, args.sigma, args.k_o_min) {
        (Some(psi_1), Some(psi_m), Some(sigma), Some(k_o_min)) => Some(SpectralInputs {
            psi_1,
            psi_m,
            sigma,
            k_o_min,
        }),
        _ => None,
    };
    Ok(InstanceFacts {
        m,
        d: args.d.unwrap_or(0),
        s: args.s.unwrap_or(0),
        r_e: args.r_e.unwrap_or(f64::NAN),
        identifiability,
        instance: None,
        spectral,
        transversality: None,
        mu: None,
        er_bound: None,
    })
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<DiagnosticsReport> {
    let mut notes = Vec::new();
    let lower_bound = analysis::lower_bound(args.m.unwrap_or(2).max(2), args.theta, args.delta)?;
    let instance_mode = match (&args.graph, &args.params) {
        (Some(_), Some(_)) => true,
        (None, None) => false,
        _ => return Err(Error::InvalidParameter("--graph and --params go together".into())),
    };
    let facts = if instance_mode {
        instance_facts(args, &mut notes)?
    } else {
        scalar_facts(args, &mut notes)?
    };
    let lower_bound = if facts.m != lower_bound.m {
        analysis::lower_bound(facts.m.max(2), args.theta, args.delta)?
    } else {
        lower_bound
    };
    let have_r_e = facts.r_e.is_finite();
    let have_s = instance_mode || args.s.is_some();
    let have_d = instance_mode || args.d.is_some();
    let d_eff = facts.d.max(1);

    let sbd = if have_r_e && have_s && facts.m > 1 {
        let (r_e_limit, s_limit) = analysis::sbd_thresholds(facts.m, args.tau)?;
        Some(SbdCheck {
            holds: analysis::check_sbd(facts.r_e, facts.s, facts.m, args.tau)?,
            r_e_limit,
            s_limit,
        })
    } else {
        notes.push("SBD check needs r_e and s".into());
        None
    };
    let ssb = if have_r_e && have_d {
        Some(SsbCheck {
            holds: analysis::check_ssb(facts.r_e, d_eff, args.c_ssb)?,
            c: args.c_ssb,
            r_e_limit: args.c_ssb * d_eff as f64,
        })
    } else {
        notes.push("SSB check needs r_e and d".into());
        None
    };

    let alpha = args.alpha.or(facts.transversality.map(|t| t.alpha));
    let beta = args.beta.or(facts.transversality.map(|t| t.beta));
    let delta_t = args.delta_t.or(facts.transversality.map(|t| t.delta)).unwrap_or(0.0);
    let universal = UniversalConstants {
        c1: args.c1,
        c2: args.c2,
        c4: args.c4,
    };
    let constants = match (alpha, beta, facts.spectral) {
        (Some(a), Some(b), Some(sp)) if have_d => Some(ConditionConstants::new(a, b, delta_t, args.nu, d_eff, sp, universal)?),
        _ => {
            notes.push("rates need α and β (--seed or --alpha/--beta) plus spectral inputs".into());
            None
        }
    };
    let mut rates = Vec::new();
    if let Some(k) = &constants {
        for cond in [RateCondition::Sbd, RateCondition::Ssb] {
            rates.push(analysis::sample_complexity(cond, k, d_eff, facts.m, args.tau)?);
        }
    }
    Ok(DiagnosticsReport {
        mode: if instance_mode { "instance" } else { "scalars" },
        m: facts.m,
        d: have_d.then_some(facts.d),
        s: have_s.then_some(facts.s),
        r_e: have_r_e.then_some(facts.r_e),
        identifiability: facts.identifiability,
        instance_identifiability: facts.instance,
        sbd,
        ssb,
        mu: facts.mu,
        transversality: facts.transversality,
        irrepresentable: constants.as_ref().map(|k| k.irrepresentable()),
        constants,
        rates,
        effective_rank_bound: facts.er_bound,
        lower_bound,
        notes,
    })
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<()> {
    let report = diagnose(args)?;
    io::write_json(
        &args.out,
        &serde_json::json!({ "report": report, "config": Snapshot { command: "diagnose", args } }),
    )?;
    let ident = report
        .instance_identifiability
        .as_ref()
        .map(|i| i.identifiable)
        .or(report.identifiability.as_ref().map(|i| i.identifiable));
    println!(
        "m={} identifiable={} sbd={} ssb={} n_delta={:.4}",
        report.m,
        fmt_opt(ident),
        fmt_opt(report.sbd.as_ref().map(|c| c.holds)),
        fmt_opt(report.ssb.as_ref().map(|c| c.holds)),
        report.lower_bound.n_delta
    );
    Ok(())
}

fn fmt_opt(v: Option<bool>) -> String {
    v.map_or_else(|| "n/a".to_string(), |b| b.to_string())
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let (graph, params) = match (&args.graph, &args.params) {
        (Some(g), Some(p)) => (io::read_json::<SourceGraph>(g)?, io::read_json::<IsingParams>(p)?),
        _ => experiments::generate_instance(&args.ensemble.spec(args.sampling.seed))?,
    };
    let config = SweepConfig {
        n_grid: args.n_grid.clone(),
        trials: args.trials,
        methods: args.methods.clone(),
        solver: args.solver.config(),
        lambda_schedule: match args.lambda_scale {
            Some(scale) => LambdaSchedule::SqrtLogOverN { scale },
            None => LambdaSchedule::Fixed,
        },
        threshold: args.threshold.strategy()?,
        baseline: BaselineConfig {
            l1_weight: args.baseline_l1,
            threshold: args.baseline_threshold,
            ..BaselineConfig::default()
        },
        burn_in: args.sampling.burn_in,
        thin: args.sampling.thin,
        master_seed: args.sampling.seed,
        exact_cov: args.exact_cov,
    };
    let result = experiments::run_recovery_sweep(&graph, &params, &config)?;
    let is_json = args
        .out
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let format = if is_json { ExportFormat::Json } else { ExportFormat::Csv };
    experiments::export_results(&result, &args.out, format)?;
    for row in &result.rows {
        println!(
            "{} n={} success={:.3} ({}/{})",
            row.method, row.n, row.success_fraction, row.successes, row.trials
        );
    }
    if !result.failures.is_empty() {
        println!("{} cell(s) failed; see log output for reasons", result.failures.len());
    }
    Ok(())
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let graph: SourceGraph = io::read_json(&args.graph)?;
    let params: IsingParams = io::read_json(&args.params)?;
    let full = mrf::exact_covariance(&graph, &params)?;
    let m = graph.m();
    let sigma_o = full.view((0, 0), (m, m)).into_owned();
    if args.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        io::write_json(&args.out, &CovarianceMatrix::new(sigma_o.clone())?)?;
    } else {
        io::write_covariance_csv(&args.out, &sigma_o)?;
    }
    if let Some(p) = &args.decomposition_out {
        let truth = mrf::ground_truth_decomposition(&full)?;
        io::write_json(
            p,
            &serde_json::json!({
                "covariance": linalg::serde_matrix::to_rows(&full),
                "decomposition": truth,
            }),
        )?;
    }
    println!("m={m} wrote {}", args.out.display());
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Learn(a) => cmd_learn(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Oracle(a) => cmd_oracle(a),
    }
}

/// Parses argv (with config expansion), runs the command and returns the
/// process exit code.
pub fn run(args: impl IntoIterator<Item = impl Into<OsString>>) -> i32 {
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn config_flattens_to_flags() {
        let args = config_to_args("n = 10\nzero_one = true\ncliques = [3, 2]\nexact_cov = false\nkind = \"ssb\"\n").unwrap();
        assert_eq!(args, vec!["--cliques", "3,2", "--kind", "ssb", "--n", "10", "--zero-one"]);
        assert!(config_to_args("[section]\nx = 1\n").is_err());
    }

    #[test]
    fn config_injected_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        fs::write(&cfg, "n = 5\nseed = 3\n").unwrap();
        let out = expand_config(os(&["wsstruct", "--config", cfg.to_str().unwrap(), "simulate", "--n", "9"])).unwrap();
        assert_eq!(out, os(&["wsstruct", "simulate", "--n", "5", "--seed", "3", "--n", "9"]));
        let cli = Cli::try_parse_from(out).unwrap();
        match cli.command {
            Command::Simulate(a) => assert_eq!((a.n, a.sampling.seed), (9, 3)),
            _ => panic!("wrong command"),
        }
    }

    #[test]
    fn threshold_args_validated() {
        let t = ThresholdArgs {
            threshold_strategy: StrategyKind::Fixed,
            threshold: None,
            expected_edges: None,
        };
        assert!(t.strategy().is_err());
    }

    #[test]
    fn scalar_diagnose_without_instance() {
        let cli = Cli::try_parse_from([
            "wsstruct", "diagnose", "--m", "41", "--d", "1", "--a-min", "1", "--a-max", "1", "--c-min", "1",
            "--c-max", "1",
        ])
        .unwrap();
        let Command::Diagnose(a) = cli.command else { panic!() };
        let r = diagnose(&a).unwrap();
        assert!(r.identifiability.unwrap().identifiable);
        assert!(r.rates.is_empty() && r.sbd.is_none());
    }
}
