//! Binary Markov random field over weak supervision sources and a latent label.
//!
//! Variables are spins in {-1, +1}. The latent label `y` is implicitly
//! connected to every source; source-source dependencies are the edges of a
//! [`SourceGraph`]. The density is
//!
//! ```text
//! f(λ, y) ∝ exp( Σ θ_i λ_i + Σ_{(i,j)∈E} θ_ij λ_i λ_j + θ_Y y + Σ θ_{Y,i} y λ_i )
//! ```
//!
//! Small models (m ≤ [`MAX_ENUMERATION_SOURCES`]) can be solved exactly by
//! enumerating all 2^(m+1) states; that path is the ground-truth oracle for
//! the rest of the crate. Larger models are sampled with a seeded Gibbs chain.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Largest source count accepted by the enumeration oracle.
pub const MAX_ENUMERATION_SOURCES: usize = 20;

/// Dependency graph among `m` sources. The latent label is not stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct SourceGraph {
    m: usize,
    edges: BTreeSet<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    m: usize,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<GraphRepr> for SourceGraph {
    type Error = Error;

    fn try_from(repr: GraphRepr) -> Result<Self> {
        SourceGraph::new(repr.m, repr.edges.into_iter().map(|[i, j]| (i, j)))
    }
}

impl From<SourceGraph> for GraphRepr {
    fn from(g: SourceGraph) -> Self {
        GraphRepr {
            m: g.m,
            edges: g.edges.iter().map(|&(i, j)| [i, j]).collect(),
        }
    }
}

impl SourceGraph {
    /// Builds a graph; pairs are normalized so that `i < j`.
    pub fn new(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at {a}")));
            }
            if a >= m || b >= m {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) out of range for m = {m}"
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(SourceGraph { m, edges: set })
    }

    pub fn empty(m: usize) -> Self {
        SourceGraph {
            m,
            edges: BTreeSet::new(),
        }
    }

    /// Disjoint cliques laid out over consecutive source indices.
    pub fn from_cliques(m: usize, cliques: &[Vec<usize>]) -> Result<Self> {
        let mut seen = vec![false; m];
        let mut edges = Vec::new();
        for clique in cliques {
            for &v in clique {
                if v >= m {
                    return Err(Error::InvalidGraph(format!("vertex {v} out of range")));
                }
                if seen[v] {
                    return Err(Error::InvalidGraph(format!("vertex {v} in two cliques")));
                }
                seen[v] = true;
            }
            for (a, &i) in clique.iter().enumerate() {
                for &j in &clique[a + 1..] {
                    edges.push((i, j));
                }
            }
        }
        SourceGraph::new(m, edges)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.m];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Maximum source degree, counting source-source edges only.
    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    /// Connected components of the source-only graph, each sorted ascending.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let adj = self.neighbors();
        let mut label = vec![usize::MAX; self.m];
        let mut out = Vec::new();
        for start in 0..self.m {
            if label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut stack = vec![start];
            let mut members = Vec::new();
            label[start] = id;
            while let Some(v) = stack.pop() {
                members.push(v);
                for &w in &adj[v] {
                    if label[w] == usize::MAX {
                        label[w] = id;
                        stack.push(w);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters().len()
    }

    /// True when every connected component is a clique.
    pub fn is_disjoint_cliques(&self) -> bool {
        self.clusters().iter().all(|c| {
            c.iter()
                .enumerate()
                .all(|(a, &i)| c[a + 1..].iter().all(|&j| self.has_edge(i, j)))
        })
    }
}

/// Canonical parameters of the density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct IsingParams {
    pub theta_node: Vec<f64>,
    pub theta_edge: BTreeMap<(usize, usize), f64>,
    pub theta_y: f64,
    pub theta_y_node: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    theta_node: Vec<f64>,
    theta_edge: Vec<(usize, usize, f64)>,
    theta_y: f64,
    theta_y_node: Vec<f64>,
}

impl TryFrom<ParamsRepr> for IsingParams {
    type Error = Error;

    fn try_from(r: ParamsRepr) -> Result<Self> {
        let mut theta_edge = BTreeMap::new();
        for (i, j, v) in r.theta_edge {
            if i == j {
                return Err(Error::InvalidParameter(format!("edge parameter on ({i}, {i})")));
            }
            theta_edge.insert((i.min(j), i.max(j)), v);
        }
        let p = IsingParams {
            theta_node: r.theta_node,
            theta_edge,
            theta_y: r.theta_y,
            theta_y_node: r.theta_y_node,
        };
        if !p.all_finite() {
            return Err(Error::InvalidParameter("non-finite parameter".into()));
        }
        Ok(p)
    }
}

impl From<IsingParams> for ParamsRepr {
    fn from(p: IsingParams) -> Self {
        ParamsRepr {
            theta_node: p.theta_node,
            theta_edge: p.theta_edge.into_iter().map(|((i, j), v)| (i, j, v)).collect(),
            theta_y: p.theta_y,
            theta_y_node: p.theta_y_node,
        }
    }
}

impl IsingParams {
    /// All-zero parameters with an edge entry for every edge of `graph`.
    pub fn zeros(graph: &SourceGraph) -> Self {
        IsingParams {
            theta_node: vec![0.0; graph.m()],
            theta_edge: graph.edges().iter().map(|&e| (e, 0.0)).collect(),
            theta_y: 0.0,
            theta_y_node: vec![0.0; graph.m()],
        }
    }

    /// Edge-only model: every source-source edge and every source-label link
    /// shares the same weights; node biases are zero.
    pub fn uniform(graph: &SourceGraph, edge: f64, accuracy: f64) -> Self {
        IsingParams {
            theta_node: vec![0.0; graph.m()],
            theta_edge: graph.edges().iter().map(|&e| (e, edge)).collect(),
            theta_y: 0.0,
            theta_y_node: vec![accuracy; graph.m()],
        }
    }

    fn all_finite(&self) -> bool {
        self.theta_node.iter().all(|v| v.is_finite())
            && self.theta_edge.values().all(|v| v.is_finite())
            && self.theta_y.is_finite()
            && self.theta_y_node.iter().all(|v| v.is_finite())
    }

    /// Checks the parameters against `graph`.
    pub fn validate(&self, graph: &SourceGraph) -> Result<()> {
        let m = graph.m();
        if self.theta_node.len() != m || self.theta_y_node.len() != m {
            return Err(Error::InvalidParameter(format!(
                "parameter vectors must have length {m}"
            )));
        }
        if self.theta_edge.len() != graph.edges().len()
            || !self.theta_edge.keys().all(|&(i, j)| graph.has_edge(i, j))
        {
            return Err(Error::InvalidParameter(
                "edge parameters do not match the graph edges".into(),
            ));
        }
        if !self.all_finite() {
            return Err(Error::InvalidParameter("non-finite parameter".into()));
        }
        Ok(())
    }

    fn exponent(&self, spins: &[f64]) -> f64 {
        let m = self.theta_node.len();
        let y = spins[m];
        let mut e = self.theta_y * y;
        for i in 0..m {
            e += (self.theta_node[i] + self.theta_y_node[i] * y) * spins[i];
        }
        for (&(i, j), &t) in &self.theta_edge {
            e += t * spins[i] * spins[j];
        }
        e
    }
}

/// m × n matrix of votes in {-1, +1}; column j holds the votes on point j.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    m: usize,
    n: usize,
    // column-major: values[j * m + i]
    values: Vec<i8>,
}

impl LabelMatrix {
    /// `columns` holds n vote vectors of length m.
    pub fn from_columns(m: usize, columns: &[Vec<i8>]) -> Result<Self> {
        let mut values = Vec::with_capacity(m * columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != m {
                return Err(Error::ShapeMismatch(format!(
                    "column {j} has {} entries, expected {m}",
                    col.len()
                )));
            }
            values.extend_from_slice(col);
        }
        LabelMatrix::from_column_major(m, columns.len(), values)
    }

    pub fn from_column_major(m: usize, n: usize, values: Vec<i8>) -> Result<Self> {
        if values.len() != m * n {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {m} x {n} label matrix",
                values.len()
            )));
        }
        for (k, &v) in values.iter().enumerate() {
            if v != 1 && v != -1 {
                return Err(Error::InvalidLabel {
                    source_index: k % m.max(1),
                    point: k / m.max(1),
                    value: v as i64,
                });
            }
        }
        Ok(LabelMatrix { m, n, values })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, source: usize, point: usize) -> i8 {
        self.values[point * self.m + source]
    }

    pub fn column(&self, point: usize) -> &[i8] {
        &self.values[point * self.m..(point + 1) * self.m]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[i8]> {
        self.values.chunks(self.m.max(1)).take(self.n)
    }
}

/// Exact joint table over (λ_1, ..., λ_m, y).
///
/// Index bit k (k < m) is source k, bit m is y; a set bit means +1.
#[derive(Debug, Clone)]
pub struct JointDistribution {
    m: usize,
    probabilities: Vec<f64>,
}

impl JointDistribution {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn spin(index: usize, var: usize) -> f64 {
        if index >> var & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn probability(&self, assignment: &[i8]) -> Result<f64> {
        check_assignment(assignment, self.m + 1)?;
        let idx = assignment
            .iter()
            .enumerate()
            .fold(0usize, |acc, (k, &s)| if s == 1 { acc | 1 << k } else { acc });
        Ok(self.probabilities[idx])
    }

    /// Means and second moments E[x_a x_b] over all m + 1 variables.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.m + 1;
        let mut mean = DVector::zeros(p);
        let mut second = DMatrix::zeros(p, p);
        let mut spins = vec![0.0; p];
        for (idx, &prob) in self.probabilities.iter().enumerate() {
            if prob == 0.0 {
                continue;
            }
            for (k, s) in spins.iter_mut().enumerate() {
                *s = Self::spin(idx, k);
            }
            for a in 0..p {
                mean[a] += prob * spins[a];
                let pa = prob * spins[a];
                for b in (a + 1)..p {
                    second[(a, b)] += pa * spins[b];
                }
            }
        }
        for a in 0..p {
            second[(a, a)] = 1.0;
            for b in (a + 1)..p {
                second[(b, a)] = second[(a, b)];
            }
        }
        (mean, second)
    }

    /// Marginal over sources only (y summed out), indexed by the low m bits.
    pub fn source_marginal(&self) -> Vec<f64> {
        let half = 1usize << self.m;
        (0..half)
            .map(|idx| self.probabilities[idx] + self.probabilities[idx | half])
            .collect()
    }
}

fn check_assignment(assignment: &[i8], len: usize) -> Result<()> {
    if assignment.len() != len {
        return Err(Error::ShapeMismatch(format!(
            "assignment has length {}, expected {len}",
            assignment.len()
        )));
    }
    for (index, &v) in assignment.iter().enumerate() {
        if v != 1 && v != -1 {
            return Err(Error::InvalidAssignment {
                index,
                value: v as i64,
            });
        }
    }
    Ok(())
}

/// exp of the model exponent at `assignment` (sources first, y last).
pub fn unnormalized_density(
    graph: &SourceGraph,
    params: &IsingParams,
    assignment: &[i8],
) -> Result<f64> {
    params.validate(graph)?;
    check_assignment(assignment, graph.m() + 1)?;
    let spins: Vec<f64> = assignment.iter().map(|&s| s as f64).collect();
    let exponent = params.exponent(&spins);
    let value = exponent.exp();
    if !value.is_finite() || value == 0.0 {
        return Err(Error::Saturation { exponent });
    }
    Ok(value)
}

pub fn exact_joint(graph: &SourceGraph, params: &IsingParams) -> Result<JointDistribution> {
    params.validate(graph)?;
    let m = graph.m();
    if m > MAX_ENUMERATION_SOURCES {
        return Err(Error::EnumerationTooLarge {
            m,
            max: MAX_ENUMERATION_SOURCES,
        });
    }
    let states = 1usize << (m + 1);
    let mut spins = vec![0.0; m + 1];
    let mut log_w = Vec::with_capacity(states);
    for idx in 0..states {
        for (k, s) in spins.iter_mut().enumerate() {
            *s = JointDistribution::spin(idx, k);
        }
        log_w.push(params.exponent(&spins));
    }
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probabilities: Vec<f64> = log_w.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = probabilities.iter().sum();
    for p in &mut probabilities {
        *p /= z;
    }
    Ok(JointDistribution { m, probabilities })
}

/// Full (m+1) × (m+1) covariance of (λ_1, ..., λ_m, y); y is the last row.
pub fn exact_covariance(graph: &SourceGraph, params: &IsingParams) -> Result<DMatrix<f64>> {
    let joint = exact_joint(graph, params)?;
    let (mean, second) = joint.moments();
    Ok(second - &mean * mean.transpose())
}

/// Observed-source block Σ_O of [`exact_covariance`].
pub fn exact_observed_covariance(
    graph: &SourceGraph,
    params: &IsingParams,
) -> Result<DMatrix<f64>> {
    let full = exact_covariance(graph, params)?;
    let m = graph.m();
    Ok(full.view((0, 0), (m, m)).into_owned())
}

/// Block-inverse view of a full covariance with the latent label last.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    /// K = Σ⁻¹.
    #[serde(with = "linalg::serde_matrix")]
    pub precision: DMatrix<f64>,
    /// Observed block K_O.
    #[serde(with = "linalg::serde_matrix")]
    pub k_o: DMatrix<f64>,
    /// Latent column K_OS.
    #[serde(with = "linalg::serde_vector")]
    pub k_os: DVector<f64>,
    /// Rank-one factor with Σ_O⁻¹ = K_O − z zᵀ.
    #[serde(with = "linalg::serde_vector")]
    pub z: DVector<f64>,
    /// c = (Σ_S − Σ_OSᵀ Σ_O⁻¹ Σ_OS)⁻¹.
    pub c: f64,
    /// v with Σ_O = K_O⁻¹ + v vᵀ.
    #[serde(with = "linalg::serde_vector")]
    pub v: DVector<f64>,
    /// Σ_O⁻¹.
    #[serde(with = "linalg::serde_matrix")]
    pub sigma_o_inv: DMatrix<f64>,
}

pub fn ground_truth_decomposition(sigma: &DMatrix<f64>) -> Result<GroundTruth> {
    let p = sigma.nrows();
    if p < 2 || sigma.ncols() != p {
        return Err(Error::ShapeMismatch(format!(
            "expected a square covariance with at least 2 rows, got {} x {}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let min_eig = sigma.clone().symmetric_eigenvalues().min();
    if min_eig <= 1e-10 {
        return Err(Error::SingularCovariance {
            min_eigenvalue: min_eig,
        });
    }
    let m = p - 1;
    let sigma_o = sigma.view((0, 0), (m, m)).into_owned();
    let sigma_os = sigma.view((0, m), (m, 1)).column(0).into_owned();
    let sigma_s = sigma[(m, m)];

    let sigma_o_inv = linalg::sym_inverse(&sigma_o)
        .ok_or(Error::SingularCovariance {
            min_eigenvalue: sigma_o.clone().symmetric_eigenvalues().min(),
        })?;
    let w = &sigma_o_inv * &sigma_os;
    let schur = sigma_s - sigma_os.dot(&w);
    if schur <= 0.0 {
        return Err(Error::NonPsdSchur { value: schur });
    }
    let c = 1.0 / schur;
    let z = w * c.sqrt();

    let precision = linalg::sym_inverse(sigma).ok_or(Error::SingularCovariance {
        min_eigenvalue: min_eig,
    })?;
    let k_o = precision.view((0, 0), (m, m)).into_owned();
    let k_os = precision.view((0, m), (m, 1)).column(0).into_owned();

    // K_S − K_OSᵀ K_O⁻¹ K_OS = 1 / Σ_S, hence v = √Σ_S · K_O⁻¹ K_OS.
    let k_o_inv = linalg::sym_inverse(&k_o).ok_or(Error::SingularCovariance {
        min_eigenvalue: min_eig,
    })?;
    let v = (&k_o_inv * &k_os) * sigma_s.sqrt();

    Ok(GroundTruth {
        precision,
        k_o,
        k_os,
        z,
        c,
        v,
        sigma_o_inv,
    })
}

/// Seeded Gibbs sampler with a fixed sequential sweep over (λ_1, ..., λ_m, y).
///
/// `burn_in` counts full sweeps; one sample is kept every `thin` sweeps. The
/// latent label is discarded from the output.
pub fn gibbs_sample(
    graph: &SourceGraph,
    params: &IsingParams,
    n: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
) -> Result<LabelMatrix> {
    params.validate(graph)?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if thin == 0 {
        return Err(Error::InvalidParameter("thin must be at least 1".into()));
    }
    let m = graph.m();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for (&(i, j), &t) in &params.theta_edge {
        adj[i].push((j, t));
        adj[j].push((i, t));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state: Vec<f64> = (0..=m)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();

    let sweep = |state: &mut Vec<f64>, rng: &mut ChaCha8Rng| {
        for i in 0..m {
            let mut field = params.theta_node[i] + params.theta_y_node[i] * state[m];
            for &(j, t) in &adj[i] {
                field += t * state[j];
            }
            state[i] = draw_spin(field, rng);
        }
        let mut field = params.theta_y;
        for i in 0..m {
            field += params.theta_y_node[i] * state[i];
        }
        state[m] = draw_spin(field, rng);
    };

    for _ in 0..burn_in {
        sweep(&mut state, &mut rng);
    }
    let mut values = Vec::with_capacity(n * m);
    for _ in 0..n {
        for _ in 0..thin {
            sweep(&mut state, &mut rng);
        }
        values.extend(state[..m].iter().map(|&s| s as i8));
    }
    LabelMatrix::from_column_major(m, n, values)
}

// P(x = +1 | field) = 1 / (1 + exp(-2 field)).
fn draw_spin(field: f64, rng: &mut impl Rng) -> f64 {
    let p = 1.0 / (1.0 + (-2.0 * field).exp());
    if rng.random::<f64>() < p {
        1.0
    } else {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_clique(m: usize) -> (SourceGraph, IsingParams) {
        let g = SourceGraph::from_cliques(m, &[vec![0, 1]]).unwrap();
        let p = IsingParams::uniform(&g, 0.8, 0.5);
        (g, p)
    }

    #[test]
    fn graph_rejects_self_loops_and_out_of_range() {
        assert!(SourceGraph::new(3, [(1, 1)]).is_err());
        assert!(SourceGraph::new(3, [(0, 3)]).is_err());
        let g = SourceGraph::new(4, [(2, 0), (0, 2), (1, 3)]).unwrap();
        assert_eq!(g.edges().len(), 2);
        assert!(g.has_edge(0, 2));
    }

    #[test]
    fn degree_and_clusters() {
        let g = SourceGraph::from_cliques(7, &[vec![0, 1, 2], vec![4, 5]]).unwrap();
        assert_eq!(g.max_degree(), 2);
        assert_eq!(g.cluster_count(), 4);
        assert!(g.is_disjoint_cliques());
        let path = SourceGraph::new(3, [(0, 1), (1, 2)]).unwrap();
        assert!(!path.is_disjoint_cliques());
    }

    #[test]
    fn graph_json_round_trip() {
        let g = SourceGraph::from_cliques(5, &[vec![0, 1, 2]]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"m":5,"edges":[[0,1],[0,2],[1,2]]}"#);
        let back: SourceGraph = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<SourceGraph>(r#"{"m":2,"edges":[[0,2]]}"#).is_err());
    }

    #[test]
    fn params_json_round_trip() {
        let (g, p) = two_clique(3);
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains(r#""theta_edge":[[0,1,0.8]]"#));
        let back: IsingParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        back.validate(&g).unwrap();
    }

    #[test]
    fn density_zero_params_is_one() {
        let g = SourceGraph::empty(3);
        let p = IsingParams::zeros(&g);
        assert_eq!(unnormalized_density(&g, &p, &[1, -1, 1, -1]).unwrap(), 1.0);
    }

    #[test]
    fn density_single_accuracy() {
        let g = SourceGraph::empty(1);
        let mut p = IsingParams::zeros(&g);
        p.theta_y_node[0] = 0.7;
        let d = unnormalized_density(&g, &p, &[1, 1]).unwrap();
        assert_abs_diff_eq!(d, 0.7f64.exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(d, 2.01375, epsilon = 1e-5);
    }

    #[test]
    fn density_edge_only_is_flip_symmetric() {
        let g = SourceGraph::from_cliques(3, &[vec![0, 1, 2]]).unwrap();
        let mut p = IsingParams::uniform(&g, 0.3, -0.4);
        p.theta_edge.insert((0, 2), -1.1);
        for idx in 0..16usize {
            let a: Vec<i8> = (0..4).map(|k| JointDistribution::spin(idx, k) as i8).collect();
            let b: Vec<i8> = a.iter().map(|&s| -s).collect();
            assert_abs_diff_eq!(
                unnormalized_density(&g, &p, &a).unwrap(),
                unnormalized_density(&g, &p, &b).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn density_errors() {
        let g = SourceGraph::empty(1);
        let mut p = IsingParams::zeros(&g);
        assert!(matches!(
            unnormalized_density(&g, &p, &[1, 0]),
            Err(Error::InvalidAssignment { index: 1, value: 0 })
        ));
        p.theta_y = 1000.0;
        match unnormalized_density(&g, &p, &[1, 1]) {
            Err(Error::Saturation { exponent }) => assert_eq!(exponent, 1000.0),
            other => panic!("expected saturation, got {other:?}"),
        }
    }

    #[test]
    fn joint_uniform_for_zero_params() {
        let g = SourceGraph::empty(1);
        let j = exact_joint(&g, &IsingParams::zeros(&g)).unwrap();
        for &p in j.probabilities() {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn joint_single_accuracy_closed_form() {
        let theta: f64 = 0.9;
        let g = SourceGraph::empty(1);
        let mut p = IsingParams::zeros(&g);
        p.theta_y_node[0] = theta;
        let j = exact_joint(&g, &p).unwrap();
        let agree = theta.exp() / (2.0 * (theta.exp() + (-theta).exp()));
        assert_abs_diff_eq!(j.probability(&[1, 1]).unwrap(), agree, epsilon = 1e-15);
        assert_abs_diff_eq!(j.probability(&[-1, -1]).unwrap(), agree, epsilon = 1e-15);
        assert_abs_diff_eq!(j.probability(&[1, -1]).unwrap(), 0.5 - agree, epsilon = 1e-15);
    }

    #[test]
    fn joint_budget() {
        let g = SourceGraph::empty(21);
        assert!(matches!(
            exact_joint(&g, &IsingParams::zeros(&g)),
            Err(Error::EnumerationTooLarge { m: 21, .. })
        ));
    }

    #[test]
    fn joint_normalized_and_flip_invariant() {
        let g = SourceGraph::from_cliques(5, &[vec![0, 1, 2], vec![3, 4]]).unwrap();
        let mut p = IsingParams::uniform(&g, 0.6, 0.4);
        p.theta_y_node[3] = -0.2;
        let j = exact_joint(&g, &p).unwrap();
        let total: f64 = j.probabilities().iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        let full = (1usize << 6) - 1;
        for idx in 0..=full {
            assert_abs_diff_eq!(
                j.probabilities()[idx],
                j.probabilities()[full ^ idx],
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn covariance_identity_for_independent_uniform() {
        let g = SourceGraph::empty(3);
        let s = exact_covariance(&g, &IsingParams::zeros(&g)).unwrap();
        assert_abs_diff_eq!(s, DMatrix::identity(4, 4), epsilon = 1e-14);
    }

    #[test]
    fn covariance_lower_bound_graphs() {
        let theta: f64 = 0.7;
        let gst = SourceGraph::new(2, [(0, 1)]).unwrap();
        let s = exact_covariance(&gst, &IsingParams::uniform(&gst, theta, theta)).unwrap();
        let e_st = ((3.0 * theta).exp() - (-theta).exp()) / ((3.0 * theta).exp() + 3.0 * (-theta).exp());
        assert_abs_diff_eq!(s[(0, 1)], e_st, epsilon = 1e-14);

        let guv = SourceGraph::empty(2);
        let s = exact_covariance(&guv, &IsingParams::uniform(&guv, theta, theta)).unwrap();
        assert_abs_diff_eq!(s[(0, 1)], theta.tanh().powi(2), epsilon = 1e-14);
        assert!(s.diagonal().iter().all(|&v| v <= 1.0 + 1e-15));
    }

    #[test]
    fn block_identity_and_graph_structure() {
        let (g, p) = two_clique(4);
        let sigma = exact_covariance(&g, &p).unwrap();
        let gt = ground_truth_decomposition(&sigma).unwrap();
        let diff = &gt.sigma_o_inv - (&gt.k_o - &gt.z * gt.z.transpose());
        assert!(diff.amax() < 1e-8);
        for i in 0..4 {
            for j in (i + 1)..4 {
                if g.has_edge(i, j) {
                    assert!(gt.k_o[(i, j)].abs() > 1e-4);
                } else {
                    assert!(gt.k_o[(i, j)].abs() < 1e-8, "K_O[{i},{j}] = {}", gt.k_o[(i, j)]);
                }
            }
        }
        assert!(gt.c > 0.0);
        let sigma_o = sigma.view((0, 0), (4, 4)).into_owned();
        let k_o_inv = crate::linalg::sym_inverse(&gt.k_o).unwrap();
        assert!((sigma_o - (k_o_inv + &gt.v * gt.v.transpose())).amax() < 1e-10);
    }

    #[test]
    fn independent_model_k_o_is_diagonal() {
        let g = SourceGraph::empty(4);
        let sigma = exact_covariance(&g, &IsingParams::uniform(&g, 0.0, 0.6)).unwrap();
        let gt = ground_truth_decomposition(&sigma).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(gt.k_o[(i, j)].abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn decomposition_rejects_singular() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            ground_truth_decomposition(&s),
            Err(Error::SingularCovariance { .. })
        ));
    }

    #[test]
    fn gibbs_is_deterministic_in_seed() {
        let (g, p) = two_clique(4);
        let a = gibbs_sample(&g, &p, 200, 10, 2, 42).unwrap();
        let b = gibbs_sample(&g, &p, 200, 10, 2, 42).unwrap();
        let c = gibbs_sample(&g, &p, 200, 10, 2, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!((a.m(), a.n()), (4, 200));
    }

    #[test]
    fn gibbs_rejects_bad_arguments() {
        let (g, p) = two_clique(3);
        assert!(gibbs_sample(&g, &p, 0, 1, 1, 0).is_err());
        assert!(gibbs_sample(&g, &p, 10, 1, 0, 0).is_err());
    }

    #[test]
    fn gibbs_uniform_means() {
        let g = SourceGraph::empty(3);
        let labels = gibbs_sample(&g, &IsingParams::zeros(&g), 100_000, 10, 1, 5).unwrap();
        for i in 0..3 {
            let mean: f64 =
                labels.columns().map(|c| c[i] as f64).sum::<f64>() / labels.n() as f64;
            assert!(mean.abs() < 0.02, "source {i} mean {mean}");
        }
    }

    #[test]
    fn gibbs_matches_enumeration_for_accuracy_model() {
        let g = SourceGraph::empty(3);
        let p = IsingParams::uniform(&g, 0.0, 1.0);
        let (_, second) = exact_joint(&g, &p).unwrap().moments();
        let labels = gibbs_sample(&g, &p, 100_000, 1000, 5, 11).unwrap();
        for i in 0..3 {
            for j in (i + 1)..3 {
                let emp: f64 = labels
                    .columns()
                    .map(|c| (c[i] * c[j]) as f64)
                    .sum::<f64>()
                    / labels.n() as f64;
                assert!((emp - second[(i, j)]).abs() < 0.02);
            }
        }
    }

    #[test]
    fn label_matrix_validation() {
        assert!(LabelMatrix::from_columns(2, &[vec![1, 0]]).is_err());
        assert!(LabelMatrix::from_columns(2, &[vec![1]]).is_err());
        let l = LabelMatrix::from_columns(2, &[vec![1, -1], vec![-1, -1]]).unwrap();
        assert_eq!(l.get(0, 1), -1);
        assert_eq!(l.column(0), &[1, -1]);
    }
}
