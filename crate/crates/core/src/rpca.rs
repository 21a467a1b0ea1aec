//! Sparse plus low-rank decomposition of the observed inverse covariance.
//!
//! Solves
//!
//! ```text
//! minimize   L(S − L, Σ) + λ (γ ‖S‖₁ + ‖L‖_*)
//! subject to S − L ≻ 0,  L ⪰ 0
//! ```
//!
//! with the quadratic loss `L(M, Σ) = ½ tr(M Σ M) − tr(M)`, whose minimizer
//! over M is Σ⁻¹. The solver alternates proximal-gradient steps on S and L:
//! each block sees the same smooth gradient `½(ΣM + MΣ) − I` (with opposite
//! signs), so both blocks share the Lipschitz constant ‖Σ‖. The strict cone
//! constraint is enforced as `S − L ⪰ pd_floor · I`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceMatrix;
use crate::error::{Error, Result};
use crate::linalg;

/// Consecutive objective increases tolerated before reporting divergence.
const DIVERGENCE_PATIENCE: usize = 10;
/// Per-step slack in the monotone descent check.
const DESCENT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepPolicy {
    Fixed { eta: f64 },
    /// Halve-on-failure backtracking; `eta0 = None` starts from 1/‖Σ‖.
    Backtracking { shrink: f64, eta0: Option<f64> },
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy::Backtracking {
            shrink: 0.5,
            eta0: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda_n: f64,
    pub gamma: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub step_policy: StepPolicy,
    pub pd_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda_n: 0.05,
            gamma: 1.0,
            max_iters: 20_000,
            tol: 1e-7,
            step_policy: StepPolicy::default(),
            pd_floor: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lambda_n", self.lambda_n)?;
        positive("gamma", self.gamma)?;
        positive("tol", self.tol)?;
        positive("pd_floor", self.pd_floor)?;
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        match self.step_policy {
            StepPolicy::Fixed { eta } => positive("eta", eta)?,
            StepPolicy::Backtracking { shrink, eta0 } => {
                if !(shrink > 0.0 && shrink < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "backtracking shrink must lie in (0, 1), got {shrink}"
                    )));
                }
                if let Some(e) = eta0 {
                    positive("eta0", e)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionResult {
    #[serde(with = "linalg::serde_matrix")]
    pub s_hat: DMatrix<f64>,
    #[serde(with = "linalg::serde_matrix")]
    pub l_hat: DMatrix<f64>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_kkt_residual: f64,
}

fn check_shapes(s: &DMatrix<f64>, l: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<()> {
    let m = sigma.nrows();
    for (name, a) in [("S", s), ("L", l)] {
        if a.nrows() != m || a.ncols() != m {
            return Err(Error::ShapeMismatch(format!(
                "{name} is {} x {}, covariance is {m} x {m}",
                a.nrows(),
                a.ncols()
            )));
        }
    }
    Ok(())
}

fn loss_m(m: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
    0.5 * (m * sigma).component_mul(&m.transpose()).sum() - m.trace()
}

/// ½ tr((S−L) Σ (S−L)) − tr(S−L).
pub fn loss(s: &DMatrix<f64>, l: &DMatrix<f64>, sigma: &CovarianceMatrix) -> Result<f64> {
    check_shapes(s, l, sigma.values())?;
    Ok(loss_m(&(s - l), sigma.values()))
}

/// Gradient of the loss with respect to M = S − L: ½(ΣM + MΣ) − I.
pub fn loss_gradient(m: &DMatrix<f64>, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let sm = sigma * m;
    let n = m.nrows();
    (&sm + sm.transpose()) * 0.5 - DMatrix::identity(n, n)
}

/// Full penalized objective.
pub fn objective(
    s: &DMatrix<f64>,
    l: &DMatrix<f64>,
    sigma: &CovarianceMatrix,
    config: &SolverConfig,
) -> Result<f64> {
    let f = loss(s, l, sigma)?;
    let l1: f64 = s.iter().map(|v| v.abs()).sum();
    Ok(f + config.lambda_n * (config.gamma * l1 + nuclear_norm(l)))
}

fn nuclear_norm(l: &DMatrix<f64>) -> f64 {
    let (vals, _) = linalg::sym_eigen(l);
    vals.iter().map(|v| v.abs()).sum()
}

/// Entrywise soft threshold, diagonal included.
pub fn prox_l1(x: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if t < 0.0 {
        return Err(Error::NegativeThreshold(t));
    }
    Ok(x.map(|v| v.signum() * (v.abs() - t).max(0.0)))
}

/// Eigenvalue shrink-and-clip: the prox of t‖·‖_* restricted to the PSD cone.
pub fn prox_nuclear_psd(x: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if t < 0.0 {
        return Err(Error::NegativeThreshold(t));
    }
    Ok(linalg::spectral_map(x, |v| (v - t).max(0.0)))
}

/// Worst violation of the first-order optimality conditions.
///
/// The S part is the entrywise distance of −∇ from λγ·∂‖S‖₁. The L part is
/// measured in the eigenbasis of L: on its range the gradient must equal λI,
/// the cross block must vanish, and on the null space it must stay below λI.
pub fn kkt_residual(
    s: &DMatrix<f64>,
    l: &DMatrix<f64>,
    sigma: &CovarianceMatrix,
    config: &SolverConfig,
) -> Result<f64> {
    check_shapes(s, l, sigma.values())?;
    let g = loss_gradient(&(s - l), sigma.values());
    let thresh = config.lambda_n * config.gamma;
    let mut r_s = 0.0f64;
    for (sv, gv) in s.iter().zip(g.iter()) {
        let r = if *sv != 0.0 {
            (gv + thresh * sv.signum()).abs()
        } else {
            (gv.abs() - thresh).max(0.0)
        };
        r_s = r_s.max(r);
    }

    let m = l.nrows();
    let (vals, q) = linalg::sym_eigen(l);
    let rank_tol = 1e-10 * vals.max().abs().max(1.0);
    let range: Vec<usize> = (0..m).filter(|&k| vals[k] > rank_tol).collect();
    let null: Vec<usize> = (0..m).filter(|&k| vals[k] <= rank_tol).collect();
    let b = q.transpose() * &g * &q;
    let lam = config.lambda_n;
    let sub = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| b[(rows[i], cols[j])])
    };
    let mut r_l = 0.0f64;
    if !range.is_empty() {
        let rr = sub(&range, &range) - DMatrix::identity(range.len(), range.len()) * lam;
        r_l = r_l.max(linalg::sym_spectral_norm(&rr));
        if !null.is_empty() {
            r_l = r_l.max(linalg::spectral_norm(&sub(&range, &null)));
        }
    }
    if !null.is_empty() {
        let (nv, _) = linalg::sym_eigen(&sub(&null, &null));
        r_l = r_l.max((nv.max() - lam).max(0.0));
    }
    Ok(r_s.max(r_l))
}

/// Runs the alternating proximal-gradient solver.
pub fn solve(sigma: &CovarianceMatrix, config: &SolverConfig) -> Result<DecompositionResult> {
    config.validate()?;
    let sig = sigma.values();
    let m = sigma.m();
    if m == 0 {
        return Err(Error::ShapeMismatch("empty covariance".into()));
    }
    let sigma_norm = sigma.spectral_norm();
    let (mut eta, shrink, backtrack) = match config.step_policy {
        StepPolicy::Fixed { eta } => (eta, 1.0, false),
        StepPolicy::Backtracking { shrink, eta0 } => {
            let start = match eta0 {
                Some(e) => e,
                None if sigma_norm > 0.0 => 1.0 / sigma_norm,
                None => 1.0,
            };
            (start, shrink, true)
        }
    };
    let lam = config.lambda_n;
    let floor = config.pd_floor;

    let mut s = DMatrix::from_fn(m, m, |i, j| {
        if i != j {
            0.0
        } else if sig[(i, i)] > 0.0 {
            1.0 / sig[(i, i)] + floor
        } else {
            1.0 + floor
        }
    });
    let mut l = DMatrix::<f64>::zeros(m, m);
    let mut f_cur = objective(&s, &l, sigma, config)?;
    let mut trace = vec![f_cur];
    let mut increases = 0usize;
    let mut converged = false;
    let mut kkt = kkt_residual(&s, &l, sigma, config)?;
    let mut iterations = 0;

    while iterations < config.max_iters {
        iterations += 1;

        // S block
        let smooth = loss_m(&(&s - &l), sig);
        let g = loss_gradient(&(&s - &l), sig);
        let s_new = loop {
            let cand = prox_l1(&(&s - &g * eta), eta * lam * config.gamma)?;
            if !backtrack || sufficient_decrease(&cand, &s, &g, smooth, eta, |x| loss_m(&(x - &l), sig)) {
                break cand;
            }
            eta *= shrink;
            check_step(eta)?;
        };
        s = s_new;

        // L block; the gradient in L is −∇
        let smooth = loss_m(&(&s - &l), sig);
        let g = -loss_gradient(&(&s - &l), sig);
        let l_new = loop {
            let cand = prox_nuclear_psd(&(&l - &g * eta), eta * lam)?;
            if !backtrack || sufficient_decrease(&cand, &l, &g, smooth, eta, |x| loss_m(&(&s - x), sig)) {
                break cand;
            }
            eta *= shrink;
            check_step(eta)?;
        };
        l = l_new;

        enforce_floor(&mut s, &l, floor);

        if s.iter().chain(l.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "non-finite iterate at iteration {iterations}"
            )));
        }
        let f_new = objective(&s, &l, sigma, config)?;
        if !f_new.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "non-finite objective at iteration {iterations}"
            )));
        }
        if f_new > f_cur + DESCENT_SLACK {
            increases += 1;
            if increases >= DIVERGENCE_PATIENCE {
                return Err(Error::Divergence {
                    iterations: increases,
                });
            }
        } else {
            increases = 0;
        }
        f_cur = f_new;
        trace.push(f_new);

        kkt = kkt_residual(&s, &l, sigma, config)?;
        if kkt < config.tol {
            converged = true;
            break;
        }
    }

    Ok(DecompositionResult {
        s_hat: s,
        l_hat: l,
        objective_trace: trace,
        iterations,
        converged,
        final_kkt_residual: kkt,
    })
}

fn check_step(eta: f64) -> Result<()> {
    if eta < 1e-16 {
        return Err(Error::NumericalFailure("step size underflow in backtracking".into()));
    }
    Ok(())
}

// f(x⁺) ≤ f(x) + ⟨g, x⁺ − x⟩ + ‖x⁺ − x‖²/(2η)
fn sufficient_decrease(
    cand: &DMatrix<f64>,
    cur: &DMatrix<f64>,
    grad: &DMatrix<f64>,
    f_cur: f64,
    eta: f64,
    f: impl Fn(&DMatrix<f64>) -> f64,
) -> bool {
    let d = cand - cur;
    let bound = f_cur + grad.component_mul(&d).sum() + d.norm_squared() / (2.0 * eta);
    f(cand) <= bound + 1e-12 * f_cur.abs().max(1.0)
}

// Lifts eigenvalues of S − L below the floor; the correction goes to S.
fn enforce_floor(s: &mut DMatrix<f64>, l: &DMatrix<f64>, floor: f64) {
    let m_mat = &*s - l;
    let (vals, q) = linalg::sym_eigen(&m_mat);
    if vals.min() >= floor {
        return;
    }
    let lift = vals.map(|v| (floor - v).max(0.0));
    let mut corr = &q * DMatrix::from_diagonal(&lift) * q.transpose();
    linalg::symmetrize_in_place(&mut corr);
    *s += corr;
}
