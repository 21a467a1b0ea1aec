//! Executable diagnostics: identifiability, transversality, effective-rank
//! conditions, sample-size calculators and the information-theoretic lower
//! bound.
//!
//! Rate calculators depend on universal constants (c₁, c₂, c₄) that have no
//! published numeric values; they default to 1 and every rate output is only
//! meaningful up to those constants. Logarithms are natural throughout.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::{effective_rank, CovarianceMatrix};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mrf::{GroundTruth, SourceGraph};

/// Entries of K_O below this magnitude are treated as structural zeros.
pub const STRUCTURAL_ZERO: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Identifiability

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub d: usize,
    pub m: usize,
    pub a_min: f64,
    pub a_max: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub mu_bound: f64,
    pub xi_bound: f64,
    pub product_bound: f64,
    pub identifiable: bool,
    pub m_min: f64,
}

/// Closed-form transversality bound
/// μ·ξ ≤ (6.4 d / √m)(c_max/c_min)(a_max/a_min), with μ ≤ d.
pub fn lemma1_bound(
    d: usize,
    m: usize,
    a_min: f64,
    a_max: f64,
    c_min: f64,
    c_max: f64,
) -> Result<IdentifiabilityReport> {
    if d < 1 || m < 2 {
        return Err(Error::InvalidParameter(format!("need d >= 1 and m >= 2, got d = {d}, m = {m}")));
    }
    for (name, v) in [("a_min", a_min), ("a_max", a_max), ("c_min", c_min), ("c_max", c_max)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    if a_min > a_max || c_min > c_max {
        return Err(Error::InvalidParameter("extremes out of order".into()));
    }
    let ratio = (c_max / c_min) * (a_max / a_min);
    let mu_bound = d as f64;
    let xi_bound = 6.4 / (m as f64).sqrt() * ratio;
    let product_bound = mu_bound * xi_bound;
    Ok(IdentifiabilityReport {
        d,
        m,
        a_min,
        a_max,
        c_min,
        c_max,
        mu_bound,
        xi_bound,
        product_bound,
        identifiable: product_bound < 1.0,
        m_min: 40.96 * (d * d) as f64 * ratio * ratio,
    })
}

/// Identifiability of a concrete instance.
///
/// `instance_product` is max(d, 1) · 2‖z̄‖_∞: the degree bound on μ times the
/// rank-one tangent-space bound on ξ, before the accuracy/correlation
/// ratios are substituted. `formula` is the closed-form bound with the
/// extremes taken as magnitudes of Σ_OS (accuracies) and Σ_O (correlations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceIdentifiability {
    pub d: usize,
    pub m: usize,
    pub mu_bound: f64,
    pub xi_bound: f64,
    pub instance_product: f64,
    pub identifiable: bool,
    pub formula: Option<IdentifiabilityReport>,
}

pub fn instance_identifiability(
    graph: &SourceGraph,
    sigma_full: &DMatrix<f64>,
    truth: &GroundTruth,
) -> Result<InstanceIdentifiability> {
    let m = graph.m();
    if sigma_full.nrows() != m + 1 {
        return Err(Error::ShapeMismatch("covariance does not match the graph".into()));
    }
    let d = graph.max_degree();
    let mu_bound = d.max(1) as f64;
    let xi_bound = xi_estimate(&truth.z)?;
    let instance_product = mu_bound * xi_bound;

    let accuracies: Vec<f64> = (0..m).map(|i| sigma_full[(i, m)].abs()).collect();
    let correlations: Vec<f64> = (0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| sigma_full[(i, j)].abs())
        .collect();
    let extremes = |v: &[f64]| {
        v.iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)))
    };
    let (a_min, a_max) = extremes(&accuracies);
    let (c_min, c_max) = extremes(&correlations);
    let formula = lemma1_bound(d.max(1), m, a_min, a_max, c_min, c_max).ok();

    Ok(InstanceIdentifiability {
        d,
        m,
        mu_bound,
        xi_bound,
        instance_product,
        identifiable: instance_product < 1.0,
        formula,
    })
}

/// 2‖z‖_∞ / ‖z‖₂: the spread bound on ξ for the rank-one tangent space of zzᵀ.
pub fn xi_estimate(z: &DVector<f64>) -> Result<f64> {
    let norm = z.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::InvalidParameter("z must be a nonzero finite vector".into()));
    }
    Ok(2.0 * z.amax() / norm)
}

// ---------------------------------------------------------------------------
// Support patterns and μ

/// Symmetric sparsity pattern, optionally including the diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportPattern {
    pub m: usize,
    pub off_diagonal: BTreeSet<(usize, usize)>,
    pub diagonal: bool,
}

impl SupportPattern {
    pub fn from_graph(graph: &SourceGraph, diagonal: bool) -> Self {
        SupportPattern {
            m: graph.m(),
            off_diagonal: graph.edges().clone(),
            diagonal,
        }
    }

    /// Off-diagonal entries of `k` above [`STRUCTURAL_ZERO`].
    pub fn from_matrix(k: &DMatrix<f64>, diagonal: bool) -> Self {
        let m = k.nrows();
        let off_diagonal = (0..m)
            .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
            .filter(|&(i, j)| k[(i, j)].abs() > STRUCTURAL_ZERO)
            .collect();
        SupportPattern {
            m,
            off_diagonal,
            diagonal,
        }
    }

    pub fn full(m: usize) -> Self {
        SupportPattern {
            m,
            off_diagonal: (0..m)
                .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
                .collect(),
            diagonal: true,
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        if i == j {
            self.diagonal
        } else {
            self.off_diagonal.contains(&(i.min(j), i.max(j)))
        }
    }

    /// Largest number of off-diagonal entries in any row.
    pub fn max_row_degree(&self) -> usize {
        let mut deg = vec![0usize; self.m];
        for &(i, j) in &self.off_diagonal {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg.into_iter().max().unwrap_or(0)
    }

    fn mask(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.m, |i, j| if self.contains(i, j) { a[(i, j)] } else { 0.0 })
    }

    fn mask_complement(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.m, |i, j| if self.contains(i, j) { 0.0 } else { a[(i, j)] })
    }

    fn random_element(&self, rng: &mut impl Rng, signs: bool) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.m, self.m);
        for i in 0..self.m {
            for j in i..self.m {
                if self.contains(i, j) {
                    let v = if signs {
                        if rng.random::<bool>() { 1.0 } else { -1.0 }
                    } else {
                        rng.random_range(-1.0..1.0)
                    };
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
        }
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuEstimate {
    /// Degree bound max(d, 1); not guaranteed to dominate μ for patterns
    /// that include the diagonal.
    pub upper: f64,
    /// Largest spectral norm among the sampled unit-∞-norm sign matrices.
    pub monte_carlo_lower: f64,
}

/// μ(Ω) = max ‖N‖ over N supported on the pattern with ‖N‖_∞ = 1.
///
/// The first draw is the all-plus sign matrix; the remaining `trials − 1`
/// are uniform random symmetric sign patterns.
pub fn mu_estimate(support: &SupportPattern, trials: usize, seed: u64) -> MuEstimate {
    if support.off_diagonal.is_empty() {
        return MuEstimate {
            upper: 1.0,
            monte_carlo_lower: 1.0,
        };
    }
    let upper = support.max_row_degree().max(1) as f64;
    let ones = DMatrix::from_element(support.m, support.m, 1.0);
    let mut best = linalg::sym_spectral_norm(&support.mask(&ones));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 1..trials {
        let n = support.random_element(&mut rng, true);
        best = best.max(linalg::sym_spectral_norm(&n));
    }
    MuEstimate {
        upper,
        monte_carlo_lower: best,
    }
}

fn tangent_projection(zbar: &DVector<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let p = zbar * zbar.transpose();
    &p * a + a * &p - &p * a * &p
}

fn random_tangent(zbar: &DVector<f64>, rng: &mut impl Rng) -> DMatrix<f64> {
    let x = DVector::from_fn(zbar.len(), |_, _| rng.random_range(-1.0..1.0));
    zbar * x.transpose() + &x * zbar.transpose()
}

/// Monte Carlo lower estimate of ξ(T(zzᵀ)) = max ‖N‖_∞ over N ∈ T, ‖N‖ ≤ 1.
pub fn xi_monte_carlo_lower(z: &DVector<f64>, trials: usize, seed: u64) -> Result<f64> {
    xi_estimate(z)?;
    let zbar = z / z.norm();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    // z̄ z̄ᵀ itself lies in T and has unit spectral norm.
    best = best.max((&zbar * zbar.transpose()).amax());
    for _ in 0..trials {
        let n = random_tangent(&zbar, &mut rng);
        let s = linalg::sym_spectral_norm(&n);
        if s > 0.0 {
            best = best.max(n.amax() / s);
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Transversality constants

/// Monte Carlo estimates of the h_Σ transversality quantities over Ω and T,
/// where h_Σ(M) = ½(ΣM + MΣ). α's are sample minima, β's and δ's sample
/// maxima, so they are estimates, not certified values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transversality {
    pub alpha_omega: f64,
    pub delta_omega: f64,
    pub alpha_t: f64,
    pub delta_t: f64,
    pub beta_t: f64,
    pub beta_omega: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub trials: usize,
    pub seed: u64,
}

fn h_map(sigma: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let sm = sigma * m;
    (&sm + sm.transpose()) * 0.5
}

pub fn transversality_constants(
    sigma_o: &CovarianceMatrix,
    support: &SupportPattern,
    z: &DVector<f64>,
    trials: usize,
    seed: u64,
) -> Result<Transversality> {
    let m = sigma_o.m();
    if support.m != m || z.len() != m {
        return Err(Error::ShapeMismatch("support, z and covariance disagree on m".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    xi_estimate(z)?;
    let sigma = sigma_o.values();
    let zbar = z / z.norm();

    let mut omega_rng = ChaCha8Rng::seed_from_u64(seed);
    omega_rng.set_stream(0);
    let mut t_rng = ChaCha8Rng::seed_from_u64(seed);
    t_rng.set_stream(1);

    let (mut alpha_omega, mut delta_omega, mut beta_omega) = (f64::INFINITY, 0.0f64, 0.0f64);
    let (mut alpha_t, mut delta_t, mut beta_t) = (f64::INFINITY, 0.0f64, 0.0f64);
    for _ in 0..trials {
        let mo = support.random_element(&mut omega_rng, false);
        let (inf, spec) = (mo.amax(), linalg::sym_spectral_norm(&mo));
        if inf > 0.0 && spec > 0.0 {
            let h = h_map(sigma, &mo);
            alpha_omega = alpha_omega.min(support.mask(&h).amax() / inf);
            delta_omega = delta_omega.max(support.mask_complement(&h).amax() / inf);
            beta_omega = beta_omega.max(linalg::sym_spectral_norm(&h) / spec);
        }

        let mt = random_tangent(&zbar, &mut t_rng);
        let (inf, spec) = (mt.amax(), linalg::sym_spectral_norm(&mt));
        if inf > 0.0 && spec > 0.0 {
            let h = h_map(sigma, &mt);
            let pt = tangent_projection(&zbar, &h);
            alpha_t = alpha_t.min(linalg::sym_spectral_norm(&pt) / spec);
            delta_t = delta_t.max(linalg::sym_spectral_norm(&(&h - &pt)) / spec);
            beta_t = beta_t.max(h.amax() / inf);
        }
    }
    if !alpha_omega.is_finite() || !alpha_t.is_finite() {
        return Err(Error::NumericalFailure("no usable Monte Carlo samples".into()));
    }
    Ok(Transversality {
        alpha_omega,
        delta_omega,
        alpha_t,
        delta_t,
        beta_t,
        beta_omega,
        alpha: alpha_omega.min(alpha_t),
        beta: beta_t.max(beta_omega),
        delta: delta_omega.max(delta_t),
        trials,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Condition constants and effective-rank conditions

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionConstants {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub nu: f64,
    pub gamma: f64,
    pub psi_1: f64,
    pub psi_m: f64,
    pub sigma: f64,
    pub k_o_min: f64,
    pub c1: f64,
    pub c2: f64,
    pub c4: f64,
}

/// Inputs to [`ConditionConstants::new`] other than α, β, δ and d.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralInputs {
    pub psi_1: f64,
    pub psi_m: f64,
    pub sigma: f64,
    pub k_o_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniversalConstants {
    pub c1: f64,
    pub c2: f64,
    pub c4: f64,
}

impl Default for UniversalConstants {
    fn default() -> Self {
        UniversalConstants {
            c1: 1.0,
            c2: 1.0,
            c4: 1.0,
        }
    }
}

pub fn gamma_for(nu: f64, alpha: f64, beta: f64, d: usize) -> f64 {
    nu * alpha / (2.0 * d as f64 * beta * (2.0 - nu))
}

impl ConditionConstants {
    /// Builds the constants and sets γ = να / (2dβ(2−ν)).
    pub fn new(
        alpha: f64,
        beta: f64,
        delta: f64,
        nu: f64,
        d: usize,
        spectral: SpectralInputs,
        universal: UniversalConstants,
    ) -> Result<Self> {
        check_nu(nu)?;
        if d == 0 {
            return Err(Error::InvalidParameter("d must be at least 1".into()));
        }
        let positives = [
            ("alpha", alpha),
            ("beta", beta),
            ("psi_1", spectral.psi_1),
            ("psi_m", spectral.psi_m),
            ("sigma", spectral.sigma),
            ("k_o_min", spectral.k_o_min),
            ("c1", universal.c1),
            ("c2", universal.c2),
            ("c4", universal.c4),
        ];
        for (name, v) in positives {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if spectral.psi_1 < spectral.psi_m {
            return Err(Error::InvalidParameter("psi_1 must be >= psi_m".into()));
        }
        Ok(ConditionConstants {
            alpha,
            beta,
            delta,
            nu,
            gamma: gamma_for(nu, alpha, beta, d),
            psi_1: spectral.psi_1,
            psi_m: spectral.psi_m,
            sigma: spectral.sigma,
            k_o_min: spectral.k_o_min,
            c1: universal.c1,
            c2: universal.c2,
            c4: universal.c4,
        })
    }

    /// δ/α < 1 − 2ν.
    pub fn irrepresentable(&self) -> bool {
        self.delta / self.alpha < 1.0 - 2.0 * self.nu
    }

    /// Right-hand side of μξ ≤ ½(να / ((2−ν)β))².
    pub fn transversality_budget(&self) -> f64 {
        0.5 * (self.nu * self.alpha / ((2.0 - self.nu) * self.beta)).powi(2)
    }
}

fn check_nu(nu: f64) -> Result<()> {
    if !(nu > 0.0 && nu < 0.5) {
        return Err(Error::InvalidParameter(format!("nu must lie in (0, 1/2), got {nu}")));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidParameter(format!("tau must lie in (0, 1], got {tau}")));
    }
    Ok(())
}

/// Thresholds of the source-block-decay condition: (r_e limit, s limit).
pub fn sbd_thresholds(m: usize, tau: f64) -> Result<(f64, f64)> {
    check_tau(tau)?;
    if m <= 1 {
        return Err(Error::InvalidParameter(format!("SBD needs m > 1, got {m}")));
    }
    let mf = m as f64;
    let l = (1.0 + tau) * mf.ln();
    let re_limit = mf.powf(tau) / l;
    let s_limit = mf.powf(tau / (2.0 - tau)) / l.powf(2.0 / (2.0 - tau));
    Ok((re_limit, s_limit))
}

pub fn check_sbd(r_e: f64, s: usize, m: usize, tau: f64) -> Result<bool> {
    let (re_limit, s_limit) = sbd_thresholds(m, tau)?;
    Ok(r_e <= re_limit && s as f64 <= s_limit)
}

pub fn check_ssb(r_e: f64, d: usize, c: f64) -> Result<bool> {
    if !(c > 0.0) || d < 1 {
        return Err(Error::InvalidParameter(format!("need c > 0 and d >= 1, got c = {c}, d = {d}")));
    }
    Ok(r_e <= c * d as f64)
}

// ---------------------------------------------------------------------------
// Sample complexity

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RateCondition {
    Sbd,
    Ssb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub condition: RateCondition,
    pub tau: f64,
    pub rho: f64,
    pub n_required: f64,
    pub lambda_n: f64,
    pub success_probability: f64,
}

pub fn sample_complexity(
    condition: RateCondition,
    k: &ConditionConstants,
    d: usize,
    m: usize,
    tau: f64,
) -> Result<RateEstimate> {
    check_nu(k.nu)?;
    check_tau(tau)?;
    if m < 2 || d < 1 {
        return Err(Error::InvalidParameter(format!("need m >= 2 and d >= 1, got m = {m}, d = {d}")));
    }
    let (mf, df) = (m as f64, d as f64);
    let nu = k.nu;
    let inv_gamma = (1.0f64).max(1.0 / k.gamma);
    let worst = (k.gamma / k.k_o_min).max(1.0 / k.sigma).max(1.0 / k.psi_m);
    let core = 6.0 * k.c2 * k.beta * (3.0 - 2.0 * nu) * (2.0 - nu) * k.psi_1
        / (nu * k.alpha * k.alpha * k.psi_m)
        * worst;
    let (rho, n_required, lambda_n) = match condition {
        RateCondition::Sbd => {
            let rho = core * core;
            let n = rho * df * df * mf.powf(tau);
            let lambda = inv_gamma * (3.0 - 2.0 * nu) * k.c1 * k.psi_1 * mf.powf(tau).sqrt()
                / (k.psi_m * n.sqrt());
            (rho, n, lambda)
        }
        RateCondition::Ssb => {
            let rho = core * k.c4;
            let n = rho * (1.0 + tau) * df * df * mf.ln();
            let lambda = inv_gamma * (3.0 - 2.0 * nu) * k.c4 * k.c2 * k.psi_1 * df
                * (1.0 + tau)
                * mf.ln()
                / (k.psi_m * n);
            (rho, n, lambda)
        }
    };
    Ok(RateEstimate {
        condition,
        tau,
        rho,
        n_required,
        lambda_n,
        success_probability: 1.0 - mf.powf(-tau),
    })
}

// ---------------------------------------------------------------------------
// Lower bound

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub m: usize,
    pub theta: f64,
    pub delta: f64,
    pub n_max_unsupervised: f64,
    pub n_supervised: f64,
    pub n_delta: f64,
    pub relative_cost: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
}

/// Pairwise moments E[λ_s λ_t] under the one-extra-edge graph and under the
/// graph where s and t only connect through the latent label, all edge
/// weights θ.
pub fn moment_formulas(theta: f64) -> (f64, f64) {
    let e_st = ((3.0 * theta).exp() - (-theta).exp()) / ((3.0 * theta).exp() + 3.0 * (-theta).exp());
    let e_uv = theta.tanh().powi(2);
    (e_st, e_uv)
}

/// 1 − 4/(e^{4θ}+3) − tanh²θ, evaluated without cancellation for small θ.
pub fn unsupervised_separation(theta: f64) -> f64 {
    let x = (4.0 * theta).exp_m1();
    let e_st = if x.is_finite() { x / (x + 4.0) } else { 1.0 };
    let t = theta.tanh();
    e_st - t * t
}

pub fn lower_bound(m: usize, theta: f64, delta: f64) -> Result<LowerBoundReport> {
    if theta == 0.0 {
        return Err(Error::DivisionByZero("theta = 0 makes the bound undefined".into()));
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::InvalidParameter(format!("theta must be positive, got {theta}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    if m < 2 {
        return Err(Error::InvalidParameter(format!("need m >= 2, got {m}")));
    }
    let unsup_den = 2.0 * theta * unsupervised_separation(theta);
    let sup_den = 2.0 * theta * theta.tanh();
    let relative_cost = sup_den / unsup_den;
    if m == 2 {
        return Ok(LowerBoundReport {
            m,
            theta,
            delta,
            n_max_unsupervised: 0.0,
            n_supervised: 0.0,
            n_delta: 0.0,
            relative_cost,
            warning: Some("degenerate ensemble: a single candidate edge gives log(1) = 0".into()),
        });
    }
    let mf = m as f64;
    let numer = (1.0 - delta) * (mf * (mf - 1.0) / 2.0).ln();
    let n_max_unsupervised = numer / unsup_den;
    let n_supervised = numer / sup_den;
    Ok(LowerBoundReport {
        m,
        theta,
        delta,
        n_max_unsupervised,
        n_supervised,
        n_delta: n_max_unsupervised - n_supervised,
        relative_cost,
        warning: None,
    })
}

// ---------------------------------------------------------------------------
// Effective-rank structure

/// Terms of r_e(Σ_O) ≤ r_e(K_O⁻¹) + ‖v‖² / ‖K_O⁻¹‖.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveRankBound {
    pub r_e_sigma: f64,
    pub r_e_k_inv: f64,
    pub v_term: f64,
    pub bound: f64,
    pub holds: bool,
}

pub fn effective_rank_bound(sigma_o: &DMatrix<f64>, truth: &GroundTruth) -> Result<EffectiveRankBound> {
    let r_e_sigma = effective_rank(&CovarianceMatrix::new(linalg::symmetrize(sigma_o))?)?;
    let k_inv = linalg::sym_inverse(&truth.k_o).ok_or(Error::SingularMatrix {
        min_eigenvalue: linalg::sym_eigen(&truth.k_o).0.min(),
    })?;
    let k_inv_cov = CovarianceMatrix::new(linalg::symmetrize(&k_inv))?;
    let r_e_k_inv = effective_rank(&k_inv_cov)?;
    let v_term = truth.v.norm_squared() / k_inv_cov.spectral_norm();
    let bound = r_e_k_inv + v_term;
    Ok(EffectiveRankBound {
        r_e_sigma,
        r_e_k_inv,
        v_term,
        bound,
        holds: r_e_sigma <= bound * (1.0 + 1e-12),
    })
}

/// The three dominant-clique properties on the blocks C_j of K_O⁻¹:
/// tr(C_i) ≥ Σ_{j≠i} tr(C_j), λ_max(C_i) ≥ λ_max(C_j), and
/// ‖K_OS‖² ≤ 2‖(K_OS)_{C_i}‖².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub dominant_cluster: Vec<usize>,
    pub trace_dominant: bool,
    pub spectrum_dominant: bool,
    pub latent_weight_dominant: bool,
}

impl DominanceReport {
    pub fn all(&self) -> bool {
        self.trace_dominant && self.spectrum_dominant && self.latent_weight_dominant
    }
}

pub fn dominance(graph: &SourceGraph, truth: &GroundTruth, dominant: usize) -> Result<DominanceReport> {
    let clusters = graph.clusters();
    let idx = clusters
        .iter()
        .position(|c| c.contains(&dominant))
        .ok_or_else(|| Error::InvalidParameter(format!("source {dominant} not in graph")))?;
    let k_inv = linalg::sym_inverse(&truth.k_o).ok_or(Error::SingularMatrix {
        min_eigenvalue: linalg::sym_eigen(&truth.k_o).0.min(),
    })?;
    let block = |c: &[usize]| DMatrix::from_fn(c.len(), c.len(), |a, b| k_inv[(c[a], c[b])]);
    let traces: Vec<f64> = clusters.iter().map(|c| block(c).trace()).collect();
    let tops: Vec<f64> = clusters
        .iter()
        .map(|c| linalg::sym_eigen(&block(c)).0.max())
        .collect();
    let others: f64 = traces.iter().enumerate().filter(|&(j, _)| j != idx).map(|(_, t)| t).sum();
    let dom = &clusters[idx];
    let sub: f64 = dom.iter().map(|&i| truth.k_os[i].powi(2)).sum();
    Ok(DominanceReport {
        dominant_cluster: dom.clone(),
        trace_dominant: traces[idx] >= others,
        spectrum_dominant: tops.iter().all(|&t| tops[idx] >= t),
        latent_weight_dominant: truth.k_os.norm_squared() <= 2.0 * sub,
    })
}

/// Smallest K_O entry magnitude above [`STRUCTURAL_ZERO`].
pub fn k_o_min(k_o: &DMatrix<f64>) -> f64 {
    k_o.iter()
        .map(|v| v.abs())
        .filter(|&v| v > STRUCTURAL_ZERO)
        .fold(f64::INFINITY, f64::min)
}
