//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary
//! (`harness = false`) so the lines come out in order; exits non-zero if any
//! criterion fails.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wsstruct::analysis::{
    dominance, effective_rank_bound, instance_identifiability, lower_bound, moment_formulas, unsupervised_separation,
};
use wsstruct::covariance::{effective_rank, empirical_covariance, CovarianceMatrix};
use wsstruct::experiments::{
    generate_ssb_instance, run_recovery_sweep, BaselineConfig, EnsembleKind, EnsembleSpec,
    LambdaSchedule, Method, SweepConfig,
};
use wsstruct::mrf::{
    exact_covariance, exact_joint, gibbs_sample, ground_truth_decomposition, IsingParams, SourceGraph,
};
use wsstruct::rpca::{self, loss_gradient, prox_l1, prox_nuclear_psd, SolverConfig};
use wsstruct::structure::{compare_structures, ThresholdStrategy};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn observed(full: &DMatrix<f64>) -> DMatrix<f64> {
    let m = full.nrows() - 1;
    full.view((0, 0), (m, m)).into_owned()
}

// ---------------------------------------------------------------------------

fn noiseless_instances() -> Vec<(SourceGraph, IsingParams)> {
    let specs: [(usize, &[&[usize]], f64, f64); 10] = [
        (6, &[&[0, 1]], 0.8, 0.4),
        (7, &[&[0, 1], &[2, 3]], 0.9, 0.5),
        (8, &[&[0, 1], &[2, 3]], 1.0, 0.4),
        (9, &[&[0, 1], &[3, 4]], 0.8, 0.3),
        (10, &[&[0, 1], &[2, 3], &[4, 5]], 1.0, 0.5),
        (11, &[&[1, 2], &[5, 6]], 1.2, 0.6),
        (12, &[&[0, 1], &[2, 3], &[6, 7]], 0.9, 0.35),
        (12, &[&[0, 1], &[5, 6]], 1.0, 0.5),
        (13, &[&[0, 1], &[4, 5], &[8, 9]], 1.1, 0.45),
        (14, &[&[0, 1], &[2, 3], &[4, 5], &[6, 7]], 0.8, 0.3),
    ];
    specs
        .iter()
        .map(|&(m, cliques, edge, acc)| {
            let cliques: Vec<Vec<usize>> = cliques.iter().map(|c| c.to_vec()).collect();
            let g = SourceGraph::from_cliques(m, &cliques).unwrap();
            let p = IsingParams::uniform(&g, edge, acc);
            (g, p)
        })
        .collect()
}

/// Exact recovery from the exact covariance on identifiable instances.
///
/// Identifiability is certified per instance by max(d, 1) · 2‖z̄‖_∞ < 1. The
/// closed-form bound with accuracy/correlation ratios substituted cannot drop
/// below 1 for m ≤ 14 (it needs m ≥ 40.96 d² r²), so it is reported only.
fn criterion_1() -> Outcome {
    let lambdas = [0.001, 0.01, 0.05];
    let gammas = [0.1, 0.3, 1.0];
    let mut failures = Vec::new();
    let mut worst_formula = 0.0f64;
    for (idx, (g, p)) in noiseless_instances().iter().enumerate() {
        let full = exact_covariance(g, p).unwrap();
        let truth = ground_truth_decomposition(&full).unwrap();
        let ident = instance_identifiability(g, &full, &truth).unwrap();
        if let Some(f) = &ident.formula {
            worst_formula = worst_formula.max(f.product_bound);
        }
        if !ident.identifiable {
            failures.push(format!("#{idx} not certified ({:.3})", ident.instance_product));
            continue;
        }
        let sigma = CovarianceMatrix::new(observed(&full)).unwrap();
        let strategies = [
            ThresholdStrategy::LargestGap,
            ThresholdStrategy::Fixed(0.05),
            ThresholdStrategy::ExpectedEdges(g.edges().len()),
        ];
        let mut hit = false;
        'grid: for &lambda_n in &lambdas {
            for &gamma in &gammas {
                let config = SolverConfig {
                    lambda_n,
                    gamma,
                    ..SolverConfig::default()
                };
                let Ok(result) = rpca::solve(&sigma, &config) else { continue };
                for &s in &strategies {
                    let t = wsstruct::structure::select_threshold(&result.s_hat, s).unwrap();
                    let est = wsstruct::structure::threshold_edges(&result.s_hat, t).unwrap();
                    if compare_structures(g, &est).unwrap().exact_match {
                        hit = true;
                        break 'grid;
                    }
                }
            }
        }
        if !hit {
            failures.push(format!("#{idx} no exact cell"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "10 instances certified and recovered; closed-form product bound (reported only) up to {worst_formula:.1}{}",
            if failures.is_empty() { String::new() } else { format!("; failures: {failures:?}") }
        ),
    )
}

fn random_instance(rng: &mut ChaCha8Rng) -> (SourceGraph, IsingParams) {
    let m = rng.random_range(3..=10);
    let mut cliques = Vec::new();
    let mut next = 0;
    while next < m {
        let size = rng.random_range(1..=3).min(m - next);
        cliques.push((next..next + size).collect::<Vec<_>>());
        next += size;
    }
    let g = SourceGraph::from_cliques(m, &cliques).unwrap();
    let mut p = IsingParams::zeros(&g);
    for v in p.theta_edge.values_mut() {
        let mag = rng.random_range(0.1..1.0);
        *v = if rng.random::<bool>() { mag } else { -mag };
    }
    for i in 0..m {
        p.theta_node[i] = rng.random_range(-0.3..0.3);
        p.theta_y_node[i] = rng.random_range(0.2..1.0);
    }
    p.theta_y = rng.random_range(-0.3..0.3);
    (g, p)
}

fn random_instances() -> Vec<(SourceGraph, IsingParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..100).map(|_| random_instance(&mut rng)).collect()
}

fn criterion_2(instances: &[(SourceGraph, IsingParams)]) -> Outcome {
    let mut worst = 0.0f64;
    for (g, p) in instances {
        let full = exact_covariance(g, p).unwrap();
        let t = ground_truth_decomposition(&full).unwrap();
        let inv = wsstruct::linalg::sym_inverse(&observed(&full)).unwrap();
        let err = (&inv - (&t.k_o - &t.z * t.z.transpose())).amax();
        worst = worst.max(err);
    }
    outcome(worst < 1e-8, format!("max |Σ_O⁻¹ − (K_O − zzᵀ)| = {worst:.2e} over 100 instances"))
}

fn criterion_3(instances: &[(SourceGraph, IsingParams)]) -> Outcome {
    let (mut worst_zero, mut weakest_edge) = (0.0f64, f64::INFINITY);
    for (g, p) in instances {
        let t = ground_truth_decomposition(&exact_covariance(g, p).unwrap()).unwrap();
        for i in 0..g.m() {
            for j in (i + 1)..g.m() {
                let v = t.k_o[(i, j)].abs();
                if g.has_edge(i, j) {
                    weakest_edge = weakest_edge.min(v);
                } else {
                    worst_zero = worst_zero.max(v);
                }
            }
        }
    }
    outcome(
        worst_zero < 1e-8 && weakest_edge > 1e-4,
        format!("max |K_O| at non-edges {worst_zero:.2e}, min |K_O| at edges {weakest_edge:.2e}"),
    )
}

fn symmetric_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| (a - b) * (a / b).ln()).sum()
}

fn criterion_4() -> Outcome {
    let mut worst_moment = 0.0f64;
    let mut worst_identity = 0.0f64;
    for theta in [0.1, 0.5, 1.0, 2.0] {
        // Moments: s, t joined directly and through Y, versus only through Y.
        let g_st = SourceGraph::new(2, [(0, 1)]).unwrap();
        let g_uv = SourceGraph::empty(2);
        let enum_st = exact_joint(&g_st, &IsingParams::uniform(&g_st, theta, theta)).unwrap().moments().1[(0, 1)];
        let enum_uv = exact_joint(&g_uv, &IsingParams::uniform(&g_uv, theta, theta)).unwrap().moments().1[(0, 1)];
        let (e_st, e_uv) = moment_formulas(theta);
        worst_moment = worst_moment.max((e_st - enum_st).abs()).max((e_uv - enum_uv).abs());

        // Symmetric KL between two four-source models that differ only in
        // which pair carries the extra edge.
        let g_a = SourceGraph::new(4, [(0, 1)]).unwrap();
        let g_b = SourceGraph::new(4, [(2, 3)]).unwrap();
        let p_a = exact_joint(&g_a, &IsingParams::uniform(&g_a, theta, theta)).unwrap();
        let p_b = exact_joint(&g_b, &IsingParams::uniform(&g_b, theta, theta)).unwrap();
        let kl = symmetric_kl(p_a.probabilities(), p_b.probabilities());
        worst_identity = worst_identity.max((kl - 2.0 * theta * unsupervised_separation(theta)).abs());
    }
    outcome(
        worst_moment < 1e-10 && worst_identity < 1e-12,
        format!("moment error {worst_moment:.1e}, symmetric-KL identity error {worst_identity:.1e}"),
    )
}

fn criterion_5() -> Outcome {
    let m = 10;
    let small = lower_bound(m, 1e-3, 0.5).unwrap();
    let mut ordered = true;
    for k in 0..=40 {
        let theta = 1e-3 * (3.0f64 / 1e-3).powf(k as f64 / 40.0);
        let r = lower_bound(m, theta, 0.5).unwrap();
        ordered &= r.n_max_unsupervised > r.n_supervised;
    }
    outcome(
        small.relative_cost <= 2.01 && ordered,
        format!(
            "relative_cost(1e-3) = {:.4}; n_unsup > n_sup on 41-point grid: {ordered}",
            small.relative_cost
        ),
    )
}

fn criterion_6(instances: &[(SourceGraph, IsingParams)]) -> Outcome {
    let mut all_hold = true;
    for (g, p) in instances {
        let full = exact_covariance(g, p).unwrap();
        let t = ground_truth_decomposition(&full).unwrap();
        all_hold &= effective_rank_bound(&observed(&full), &t).unwrap().holds;
    }
    // Dominant-clique constructions: the first clique is the dominant one.
    let mut dominant = 0;
    let mut within = 0;
    let mut worst_ratio = 0.0f64;
    let mut skipped = 0;
    // Trace and latent-weight dominance need the first clique to cover at
    // least half of the sources.
    for m in [6usize, 8, 10, 12] {
        for size in (m / 2)..=m {
            for (strong, extra) in [(0.5, false), (1.0, false), (1.0, true), (1.5, true)] {
                let mut clique_sizes = vec![size];
                if extra && m - size >= 2 {
                    clique_sizes.push(2);
                }
                let spec = EnsembleSpec {
                    kind: EnsembleKind::Ssb,
                    m,
                    clique_sizes,
                    strong_param: strong,
                    weak_param: 0.2,
                    accuracy_param: 0.4,
                    seed: 0,
                };
                let (g, p) = generate_ssb_instance(&spec).unwrap();
                let full = exact_covariance(&g, &p).unwrap();
                // Near-deterministic cliques make Σ numerically singular.
                let Ok(t) = ground_truth_decomposition(&full) else {
                    skipped += 1;
                    continue;
                };
                if !dominance(&g, &t, 0).unwrap().all() {
                    continue;
                }
                dominant += 1;
                let re = effective_rank(&CovarianceMatrix::new(observed(&full)).unwrap()).unwrap();
                let d = g.max_degree();
                worst_ratio = worst_ratio.max(re / d as f64);
                within += usize::from(re <= 3.0 * d as f64);
            }
        }
    }
    outcome(
        all_hold && dominant > 0 && within == dominant,
        format!(
            "r_e bound holds on all 100: {all_hold}; dominant-clique instances {dominant}, r_e ≤ 3d on {within} (max r_e/d {worst_ratio:.2}); {skipped} singular constructions skipped"
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let spd = |rng: &mut ChaCha8Rng, m: usize| {
        let b = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        &b * b.transpose() + DMatrix::identity(m, m) * 0.2
    };

    // Monotone descent with backtracking.
    let mut max_rise = f64::NEG_INFINITY;
    for _ in 0..5 {
        let sigma = CovarianceMatrix::new(spd(&mut rng, 6)).unwrap();
        let config = SolverConfig {
            lambda_n: 0.05,
            gamma: 0.5,
            max_iters: 2000,
            ..SolverConfig::default()
        };
        let r = rpca::solve(&sigma, &config).unwrap();
        for w in r.objective_trace.windows(2) {
            max_rise = max_rise.max(w[1] - w[0]);
        }
    }
    let descent = max_rise <= 1e-9;

    // Prox operators against brute-force grid search on 2×2 symmetric inputs.
    let h = 0.01;
    let fine: Vec<f64> = (-300..=300).map(|k| k as f64 * h).collect();
    let coarse_h = 0.02;
    let coarse: Vec<f64> = (-150..=150).map(|k| k as f64 * coarse_h).collect();
    let (mut l1_err, mut nuc_err, mut nuc_gap) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for _ in 0..3 {
        let (a, b, c) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let x = DMatrix::from_row_slice(2, 2, &[a, b, b, c]);
        let t = rng.random_range(0.1..1.0);

        // ℓ1 over all four entries; the two off-diagonal copies move together.
        let best_1d = |target: f64| {
            fine.iter()
                .copied()
                .min_by(|&u, &v| {
                    let f = |y: f64| 0.5 * (y - target).powi(2) + t * y.abs();
                    f(u).total_cmp(&f(v))
                })
                .unwrap()
        };
        let oracle = DMatrix::from_row_slice(2, 2, &[best_1d(a), best_1d(b), best_1d(b), best_1d(c)]);
        l1_err = l1_err.max((prox_l1(&x, t).unwrap() - oracle).amax());

        // Trace penalty over the PSD cone, Y = [[p, q], [q, r]].
        let f = |p: f64, q: f64, r: f64| {
            0.5 * ((p - a).powi(2) + 2.0 * (q - b).powi(2) + (r - c).powi(2)) + t * (p + r)
        };
        let mut best = (f64::INFINITY, [0.0; 3]);
        for &p in coarse.iter().filter(|&&p| p >= 0.0) {
            for &r in coarse.iter().filter(|&&r| r >= 0.0) {
                for &q in &coarse {
                    if q * q <= p * r {
                        let v = f(p, q, r);
                        if v < best.0 {
                            best = (v, [p, q, r]);
                        }
                    }
                }
            }
        }
        let ours = prox_nuclear_psd(&x, t).unwrap();
        let (p, q, r) = (ours[(0, 0)], ours[(0, 1)], ours[(1, 1)]);
        nuc_gap = nuc_gap.max(f(p, q, r) - best.0);
        let [bp, bq, br] = best.1;
        nuc_err = nuc_err.max((p - bp).abs()).max((q - bq).abs()).max((r - br).abs());
    }
    // Grid minimizers sit within a grid cell (plus slack for the PSD
    // boundary) of the true prox, and the true prox is never worse.
    let prox_ok = l1_err <= h / 2.0 + 1e-12 && nuc_gap <= 1e-12 && nuc_err <= 2.0 * coarse_h;

    // Analytic gradient against central differences on 5×5 inputs.
    let mut grad_rel = 0.0f64;
    for _ in 0..3 {
        let sigma = spd(&mut rng, 5);
        let b = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let m = (&b + b.transpose()) * 0.5;
        let sig = CovarianceMatrix::new(sigma.clone()).unwrap();
        let g = loss_gradient(&m, &sigma);
        let zero = DMatrix::zeros(5, 5);
        let eps = 1e-5;
        for i in 0..5 {
            for j in 0..5 {
                let mut e = DMatrix::zeros(5, 5);
                e[(i, j)] = eps;
                let fp = rpca::loss(&(&m + &e), &zero, &sig).unwrap();
                let fm = rpca::loss(&(&m - &e), &zero, &sig).unwrap();
                let fd = (fp - fm) / (2.0 * eps);
                grad_rel = grad_rel.max((fd - g[(i, j)]).abs() / g[(i, j)].abs().max(1.0));
            }
        }
    }
    let grad_ok = grad_rel <= 1e-6;
    outcome(
        descent && prox_ok && grad_ok,
        format!(
            "max objective rise {max_rise:.1e}; prox_l1 grid error {l1_err:.1e}; PSD prox grid error {nuc_err:.1e}, value gap {nuc_gap:.1e}; gradient rel. error {grad_rel:.1e}"
        ),
    )
}

/// Sweep configuration for the desk-scale trend criterion; also shipped as
/// configs/desk_ssb.toml.
fn desk_sweep() -> (EnsembleSpec, SweepConfig) {
    let spec = EnsembleSpec {
        kind: EnsembleKind::Ssb,
        m: 20,
        clique_sizes: vec![4, 2, 2],
        strong_param: 0.6,
        weak_param: 0.4,
        accuracy_param: 0.4,
        seed: 1,
    };
    let config = SweepConfig {
        n_grid: vec![10, 30, 100, 300, 1000],
        trials: 20,
        methods: vec![Method::Rpca, Method::Baseline],
        solver: SolverConfig {
            gamma: 0.3,
            max_iters: 3000,
            tol: 1e-6,
            ..SolverConfig::default()
        },
        lambda_schedule: LambdaSchedule::SqrtLogOverN { scale: 9.0 },
        threshold: ThresholdStrategy::Fixed(0.05),
        baseline: BaselineConfig {
            l1_weight: 0.1,
            threshold: 0.2,
            ..BaselineConfig::default()
        },
        burn_in: 500,
        thin: 5,
        master_seed: 1,
        exact_cov: false,
    };
    (spec, config)
}

fn criterion_8() -> Outcome {
    let (spec, config) = desk_sweep();
    let (g, p) = generate_ssb_instance(&spec).unwrap();
    let r = run_recovery_sweep(&g, &p, &config).unwrap();
    let rpca_curve = r.success_curve(Method::Rpca);
    let base_curve = r.success_curve(Method::Baseline);
    let top = *rpca_curve.last().unwrap();
    let dominates = config
        .n_grid
        .iter()
        .enumerate()
        .filter(|&(_, &n)| n >= 100)
        .all(|(k, _)| rpca_curve[k] >= base_curve[k]);
    let inversions = rpca_curve.windows(2).filter(|w| w[1] < w[0]).count();
    outcome(
        top >= 0.9 && dominates && inversions <= 1,
        format!("rpca {rpca_curve:?}, baseline {base_curve:?}, inversions {inversions}"),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for k in 0..5u64 {
        let m = 3 + (k as usize % 4);
        let cliques = vec![vec![0, 1], (2..m.min(5)).collect::<Vec<_>>()];
        let g = SourceGraph::from_cliques(m, &cliques).unwrap();
        let mut p = IsingParams::zeros(&g);
        for v in p.theta_edge.values_mut() {
            *v = rng.random_range(0.2..0.8);
        }
        for i in 0..m {
            p.theta_node[i] = rng.random_range(-0.2..0.2);
            p.theta_y_node[i] = rng.random_range(0.3..1.0);
        }
        let exact = exact_joint(&g, &p).unwrap().moments().1;
        let labels = gibbs_sample(&g, &p, 100_000, 1000, 5, 100 + k).unwrap();
        let n = labels.n() as f64;
        for i in 0..m {
            for j in (i + 1)..m {
                let emp: f64 = labels
                    .columns()
                    .map(|c| (c[i] as f64) * (c[j] as f64))
                    .sum::<f64>()
                    / n;
                worst = worst.max((emp - exact[(i, j)]).abs());
            }
        }
        // Also exercise the covariance path on the same samples.
        let _ = empirical_covariance(&labels).unwrap();
    }
    outcome(worst <= 0.02, format!("max pairwise moment error {worst:.4} over 5 instances"))
}

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    let instances = random_instances();
    let mut failed = 0;
    let criteria: Vec<(&str, Check)> = vec![
        ("1 noiseless exact recovery", Box::new(criterion_1)),
        ("2 block-inverse identity", Box::new(|| criterion_2(&instances))),
        ("3 graph-structured K_O", Box::new(|| criterion_3(&instances))),
        ("4 moment formulas", Box::new(criterion_4)),
        ("5 lower-bound relative cost", Box::new(criterion_5)),
        ("6 effective-rank bound", Box::new(|| criterion_6(&instances))),
        ("7 solver correctness", Box::new(criterion_7)),
        ("8 desk-scale recovery trend", Box::new(criterion_8)),
        ("9 Gibbs fidelity", Box::new(criterion_9)),
    ];
    for (name, run) in &criteria {
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("criterion {name}: {status} [{:.1}s] {}", start.elapsed().as_secs_f64(), o.detail);
    }
    println!("criterion 10 real-data F1: N/A (datasets and downstream models unavailable; no check depends on them)");
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
