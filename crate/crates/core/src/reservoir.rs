//! Reservoir construction: the six topology classes, spectral-radius scaling
//! of the adjacency matrix and the sparse random input matrix.
//!
//! Adjacency convention: `A[(i, j)]` is the weight of the link `j -> i`, so the
//! in-degree of node `i` is the number of nonzeros in row `i`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datapipe::Normalizer;
use crate::error::{Error, Result};

/// Maximum redraws of the input matrix when a column comes out all-zero.
pub const MAX_INPUT_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Topology {
    /// Random digraph in which every node has exactly `k` in-links.
    ER,
    /// In-degree one everywhere, weakly connected, exactly one cycle.
    CycleIncluded,
    /// Rooted tree: in-degree one except the root.
    Tree,
    /// One directed cycle through all nodes.
    SingleCycle,
    /// One directed path through all nodes.
    SingleLine,
    /// Reservoir of unconnected nodes.
    RUN,
}

impl Topology {
    pub const ALL: [Topology; 6] = [
        Topology::ER,
        Topology::CycleIncluded,
        Topology::Tree,
        Topology::SingleCycle,
        Topology::SingleLine,
        Topology::RUN,
    ];

    /// In-degree imposed by the topology, `None` when `k` is free (ER).
    pub fn fixed_degree(&self) -> Option<usize> {
        match self {
            Topology::ER => None,
            Topology::RUN => Some(0),
            _ => Some(1),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Topology::ER => "ER",
            Topology::CycleIncluded => "cycle_included",
            Topology::Tree => "tree",
            Topology::SingleCycle => "single_cycle",
            Topology::SingleLine => "single_line",
            Topology::RUN => "RUN",
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Topology {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "er" => Ok(Topology::ER),
            "cycle_included" | "cycle" => Ok(Topology::CycleIncluded),
            "tree" | "single_tree" => Ok(Topology::Tree),
            "single_cycle" => Ok(Topology::SingleCycle),
            "single_line" | "line" => Ok(Topology::SingleLine),
            "run" => Ok(Topology::RUN),
            other => Err(Error::InvalidArgument(format!("unknown topology `{other}`"))),
        }
    }
}

/// The optimization variables of one reservoir computer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Target spectral radius of the adjacency matrix.
    pub rho: f64,
    /// Probability that an input-matrix entry is nonzero.
    pub p_in: f64,
    /// Input weight magnitude, interpreted according to `InputScaling`.
    pub rho_in: f64,
    /// Leakage rate.
    pub beta: f64,
    /// log10 of the ridge parameter.
    pub log10_mu: f64,
    /// In-degree.
    pub k: usize,
}

impl HyperParams {
    pub fn mu(&self) -> f64 {
        10f64.powf(self.log10_mu)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rho >= 0.0
            && (0.0..=1.0).contains(&self.p_in)
            && self.rho_in >= 0.0
            && self.beta > 0.0
            && self.beta <= 1.0
            && self.log10_mu.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "hyperparameters out of domain: {self:?}"
            )))
        }
    }
}

/// How the adjacency matrix was brought to its target magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyScaling {
    /// Largest eigenvalue magnitude set to rho.
    SpectralRadius,
    /// Nilpotent matrix: largest singular value set to rho instead.
    SingularValue,
    /// rho = 0 or no links.
    Zero,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_degree(kind: Topology, n: usize, k: usize) -> Result<()> {
    let ok = match kind.fixed_degree() {
        Some(fixed) => k == fixed,
        None => k >= 1 && k < n,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InconsistentDegree {
            kind: kind.to_string(),
            k,
        })
    }
}

/// Unscaled weighted adjacency with standard-normal link weights.
pub fn build_adjacency(kind: Topology, n: usize, k: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("reservoir size must be >= 2, got {n}")));
    }
    check_degree(kind, n, k)?;
    let mut rng = rng_for(seed, 1);
    let mut links: Vec<(usize, usize)> = Vec::new(); // (target, source)
    match kind {
        Topology::RUN => {}
        Topology::ER => {
            for target in 0..n {
                for s in index::sample(&mut rng, n - 1, k) {
                    let source = if s >= target { s + 1 } else { s };
                    links.push((target, source));
                }
            }
        }
        Topology::CycleIncluded => {
            let parent = connected_functional_graph(n, &mut rng);
            links.extend(parent.iter().enumerate().map(|(t, &s)| (t, s)));
        }
        Topology::Tree => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for j in 1..n {
                let source = order[rng.random_range(0..j)];
                links.push((order[j], source));
            }
        }
        Topology::SingleCycle | Topology::SingleLine => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let count = if kind == Topology::SingleCycle { n } else { n - 1 };
            for j in 0..count {
                links.push((order[(j + 1) % n], order[j]));
            }
        }
    }
    let mut a = DMatrix::zeros(n, n);
    for (target, source) in links {
        a[(target, source)] = rng.sample::<f64, _>(StandardNormal);
    }
    Ok(a)
}

/// Each node receives one link from a uniformly chosen other node; components
/// are merged by redirecting one cycle node per extra component.
fn connected_functional_graph(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n)
        .map(|i| {
            let s = rng.random_range(0..n - 1);
            if s >= i {
                s + 1
            } else {
                s
            }
        })
        .collect();
    loop {
        let comp = components(&parent);
        let n_comp = comp.iter().max().map_or(0, |m| m + 1);
        if n_comp <= 1 {
            return parent;
        }
        // Break the cycle of component 1 and hang it onto another component.
        let on_cycle = cycle_node(&parent, comp.iter().position(|&c| c == 1).unwrap());
        let outside: Vec<usize> = (0..n).filter(|&v| comp[v] != 1).collect();
        parent[on_cycle] = outside[rng.random_range(0..outside.len())];
    }
}

fn cycle_node(parent: &[usize], start: usize) -> usize {
    // Following parents from any node ends on the component's cycle.
    let mut v = start;
    for _ in 0..parent.len() {
        v = parent[v];
    }
    v
}

fn components(parent: &[usize]) -> Vec<usize> {
    let n = parent.len();
    let mut root: Vec<usize> = (0..n).collect();
    fn find(root: &mut [usize], mut v: usize) -> usize {
        while root[v] != v {
            root[v] = root[root[v]];
            v = root[v];
        }
        v
    }
    for (v, &p) in parent.iter().enumerate() {
        let (a, b) = (find(&mut root, v), find(&mut root, p));
        if a != b {
            root[a] = b;
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    (0..n)
        .map(|v| {
            let r = find(&mut root, v);
            if label[r] == usize::MAX {
                label[r] = next;
                next += 1;
            }
            label[r]
        })
        .collect()
}

/// Spectral radius computed per strongly connected component: acyclic parts
/// contribute exact zeros, simple cycles have closed-form eigenvalues and only
/// the remaining components go through a dense eigenvalue solver.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut g = DiGraph::<(), ()>::with_capacity(n, 0);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if a[(i, j)] != 0.0 {
                g.add_edge(nodes[j], nodes[i], ());
            }
        }
    }
    let mut radius: f64 = 0.0;
    for scc in tarjan_scc(&g) {
        let idx: Vec<usize> = scc.iter().map(|v| v.index()).collect();
        if idx.len() == 1 {
            radius = radius.max(a[(idx[0], idx[0])].abs());
            continue;
        }
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| a[(idx[r], idx[c])]);
        let simple_cycle = (0..sub.nrows()).all(|r| sub.row(r).iter().filter(|v| **v != 0.0).count() == 1);
        let rho = if simple_cycle {
            let log_prod: f64 = sub.iter().filter(|v| **v != 0.0).map(|v| v.abs().ln()).sum();
            (log_prod / sub.nrows() as f64).exp()
        } else {
            sub.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
        };
        radius = radius.max(rho);
    }
    radius
}

pub fn largest_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    m.singular_values().max()
}

/// Rescale `a` so its spectral radius equals `rho`. Nilpotent matrices are
/// scaled by their largest singular value instead.
pub fn scale_to_spectral_radius(a: &DMatrix<f64>, rho: f64) -> (DMatrix<f64>, AdjacencyScaling) {
    let n = a.nrows();
    if rho == 0.0 || a.iter().all(|v| *v == 0.0) {
        return (DMatrix::zeros(n, a.ncols()), AdjacencyScaling::Zero);
    }
    let radius = spectral_radius(a);
    if radius > 0.0 {
        (a * (rho / radius), AdjacencyScaling::SpectralRadius)
    } else {
        let sv = largest_singular_value(a);
        (a * (rho / sv), AdjacencyScaling::SingularValue)
    }
}

/// How `rho_in` sets the magnitude of the input matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputScaling {
    /// Nonzero weights are `rho_in * N(0, 1)`; every node sees an O(rho_in) drive.
    #[default]
    Entrywise,
    /// Whole matrix rescaled to largest singular value `rho_in`.
    SingularValue,
}

impl fmt::Display for InputScaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputScaling::Entrywise => "entrywise",
            InputScaling::SingularValue => "singular_value",
        })
    }
}

impl FromStr for InputScaling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "entrywise" => Ok(InputScaling::Entrywise),
            "singular_value" | "sv" => Ok(InputScaling::SingularValue),
            other => Err(Error::InvalidArgument(format!("unknown input scaling `{other}`"))),
        }
    }
}

/// `D_r x d` input matrix with Bernoulli(p_in) support and standard-normal
/// weights, brought to magnitude `rho_in` according to `scaling`.
pub fn build_input_matrix(
    d: usize,
    n: usize,
    p_in: f64,
    rho_in: f64,
    scaling: InputScaling,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if d == 0 || n == 0 || !(0.0..=1.0).contains(&p_in) || !(rho_in >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "input matrix needs d, D_r >= 1, p_in in [0,1], rho_in >= 0 (d={d}, D_r={n}, p_in={p_in}, rho_in={rho_in})"
        )));
    }
    if rho_in == 0.0 {
        return Ok(DMatrix::zeros(n, d));
    }
    if p_in == 0.0 {
        return Err(Error::InfeasibleInputMatrix("p_in = 0 with rho_in > 0".into()));
    }
    let mut rng = rng_for(seed, 2);
    for _ in 0..MAX_INPUT_REDRAWS {
        let mut w = DMatrix::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                if rng.random::<f64>() < p_in {
                    w[(i, j)] = rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        let full_columns = w.column_iter().all(|c| c.iter().any(|v| *v != 0.0));
        if full_columns {
            return Ok(match scaling {
                InputScaling::Entrywise => w * rho_in,
                InputScaling::SingularValue => {
                    let sv = largest_singular_value(&w);
                    w * (rho_in / sv)
                }
            });
        }
    }
    Err(Error::InfeasibleInputMatrix(format!(
        "an input column stayed empty after {MAX_INPUT_REDRAWS} draws (p_in = {p_in})"
    )))
}

/// Row-compressed copy of the adjacency for the state update.
#[derive(Debug, Clone, Default)]
pub(crate) struct SparseRows {
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRows {
    fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut s = SparseRows {
            indptr: vec![0],
            ..Default::default()
        };
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                let v = a[(i, j)];
                if v != 0.0 {
                    s.indices.push(j);
                    s.values.push(v);
                }
            }
            s.indptr.push(s.indices.len());
        }
        s
    }

    #[inline]
    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&j, w)| w * x[j])
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct Reservoir {
    pub kind: Topology,
    pub params: HyperParams,
    pub seed: u64,
    pub scaling: AdjacencyScaling,
    pub input_scaling: InputScaling,
    pub adjacency: DMatrix<f64>,
    pub w_in: DMatrix<f64>,
    pub w_out: Option<DMatrix<f64>>,
    /// Data transform the reservoir was trained under, if known.
    pub normalizer: Option<Normalizer>,
    pub(crate) sparse: SparseRows,
    pub(crate) w_in_rows: Vec<f64>,
    pub(crate) w_out_rows: Vec<f64>,
}

impl Reservoir {
    /// Realize a reservoir of `size` nodes for `input_dim`-dimensional data.
    /// The in-degree is taken from the topology when it is fixed.
    pub fn build(kind: Topology, size: usize, input_dim: usize, params: HyperParams, seed: u64) -> Result<Self> {
        Self::build_scaled(kind, size, input_dim, params, InputScaling::default(), seed)
    }

    pub fn build_scaled(
        kind: Topology,
        size: usize,
        input_dim: usize,
        params: HyperParams,
        input_scaling: InputScaling,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        let k = kind.fixed_degree().unwrap_or(params.k);
        let params = HyperParams { k, ..params };
        let raw = build_adjacency(kind, size, k, seed)?;
        let (adjacency, scaling) = scale_to_spectral_radius(&raw, params.rho);
        let w_in = build_input_matrix(input_dim, size, params.p_in, params.rho_in, input_scaling, seed)?;
        let mut res = Reservoir::from_parts(kind, params, seed, scaling, adjacency, w_in, None, None);
        res.input_scaling = input_scaling;
        Ok(res)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        kind: Topology,
        params: HyperParams,
        seed: u64,
        scaling: AdjacencyScaling,
        adjacency: DMatrix<f64>,
        w_in: DMatrix<f64>,
        w_out: Option<DMatrix<f64>>,
        normalizer: Option<Normalizer>,
    ) -> Self {
        let sparse = SparseRows::from_dense(&adjacency);
        let w_in_rows = row_major(&w_in);
        let w_out_rows = w_out.as_ref().map(row_major).unwrap_or_default();
        Reservoir {
            kind,
            params,
            seed,
            scaling,
            input_scaling: InputScaling::default(),
            adjacency,
            w_in,
            w_out,
            normalizer,
            sparse,
            w_in_rows,
            w_out_rows,
        }
    }

    pub fn size(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn beta(&self) -> f64 {
        self.params.beta
    }

    /// Number of nodes passed through linearly by the readout transform.
    pub fn linear_nodes(&self) -> usize {
        self.size() / 2
    }

    pub fn set_readout(&mut self, w_out: DMatrix<f64>) {
        self.w_out_rows = row_major(&w_out);
        self.w_out = Some(w_out);
    }

    pub fn is_trained(&self) -> bool {
        self.w_out.is_some()
    }

    /// Write `reservoir.json` (metadata) and row-major CSV matrix payloads.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let meta = ReservoirMeta {
            kind: self.kind,
            size: self.size(),
            input_dim: self.input_dim(),
            params: self.params,
            seed: self.seed,
            scaling: self.scaling,
            input_scaling: self.input_scaling,
            linear_nodes: self.linear_nodes(),
            trained: self.is_trained(),
            normalizer: self.normalizer.clone(),
        };
        let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        fs::write(dir.join("reservoir.json"), json)?;
        write_matrix_csv(&dir.join("adjacency.csv"), &self.adjacency)?;
        write_matrix_csv(&dir.join("w_in.csv"), &self.w_in)?;
        if let Some(w) = &self.w_out {
            write_matrix_csv(&dir.join("w_out.csv"), w)?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("reservoir.json"))?;
        let meta: ReservoirMeta = crate::bench::parse_json(&text)?;
        let adjacency = read_matrix_csv(&dir.join("adjacency.csv"))?;
        let w_in = read_matrix_csv(&dir.join("w_in.csv"))?;
        let w_out = if meta.trained {
            Some(read_matrix_csv(&dir.join("w_out.csv"))?)
        } else {
            None
        };
        if adjacency.nrows() != meta.size || w_in.shape() != (meta.size, meta.input_dim) {
            return Err(Error::LengthMismatch("matrix payloads disagree with metadata".into()));
        }
        let mut res = Reservoir::from_parts(
            meta.kind,
            meta.params,
            meta.seed,
            meta.scaling,
            adjacency,
            w_in,
            w_out,
            meta.normalizer,
        );
        res.input_scaling = meta.input_scaling;
        Ok(res)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReservoirMeta {
    kind: Topology,
    size: usize,
    input_dim: usize,
    params: HyperParams,
    seed: u64,
    scaling: AdjacencyScaling,
    #[serde(default)]
    input_scaling: InputScaling,
    linear_nodes: usize,
    trained: bool,
    normalizer: Option<Normalizer>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::with_capacity(m.len() * 24);
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidArgument(format!("{}: line {}: {e}", path.display(), n + 1)))?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::LengthMismatch(format!("{}: ragged rows", path.display())));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.into_iter().flatten(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use petgraph::visit::EdgeRef;

    fn in_degrees(a: &DMatrix<f64>) -> Vec<usize> {
        a.row_iter().map(|r| r.iter().filter(|v| **v != 0.0).count()).collect()
    }

    fn out_degrees(a: &DMatrix<f64>) -> Vec<usize> {
        a.column_iter()
            .map(|c| c.iter().filter(|v| **v != 0.0).count())
            .collect()
    }

    fn graph(a: &DMatrix<f64>) -> DiGraph<(), ()> {
        let n = a.nrows();
        let mut g = DiGraph::new();
        let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
        for i in 0..n {
            for j in 0..n {
                if a[(i, j)] != 0.0 {
                    g.add_edge(nodes[j], nodes[i], ());
                }
            }
        }
        g
    }

    fn weakly_connected(a: &DMatrix<f64>) -> bool {
        let g = graph(a);
        let mut und = petgraph::graph::UnGraph::<(), ()>::new_undirected();
        let nodes: Vec<_> = g.node_indices().map(|_| und.add_node(())).collect();
        for e in g.edge_references() {
            und.add_edge(nodes[e.source().index()], nodes[e.target().index()], ());
        }
        petgraph::algo::connected_components(&und) == 1
    }

    fn cycle_count(a: &DMatrix<f64>) -> usize {
        tarjan_scc(&graph(a)).iter().filter(|c| c.len() > 1).count()
    }

    #[test]
    fn run_is_zero() {
        let a = build_adjacency(Topology::RUN, 50, 0, 1).unwrap();
        assert!(a.iter().all(|v| *v == 0.0));
        assert!(build_adjacency(Topology::RUN, 50, 1, 1).is_err());
    }

    #[test]
    fn single_cycle_structure() {
        let a = build_adjacency(Topology::SingleCycle, 100, 1, 4).unwrap();
        assert_eq!(a.iter().filter(|v| **v != 0.0).count(), 100);
        assert!(in_degrees(&a).iter().all(|&d| d == 1));
        assert!(out_degrees(&a).iter().all(|&d| d == 1));
        let sccs = tarjan_scc(&graph(&a));
        assert_eq!(sccs.len(), 1);
        assert_eq!(sccs[0].len(), 100);
    }

    #[test]
    fn er_has_exact_in_degree() {
        for seed in 0..30 {
            let a = build_adjacency(Topology::ER, 100, 2, seed).unwrap();
            assert_eq!(a.iter().filter(|v| **v != 0.0).count(), 200);
            assert!(in_degrees(&a).iter().all(|&d| d == 2));
            assert!((0..100).all(|i| a[(i, i)] == 0.0));
        }
    }

    #[test]
    fn cycle_included_has_one_cycle_and_is_connected() {
        for seed in 0..30 {
            let a = build_adjacency(Topology::CycleIncluded, 60, 1, seed).unwrap();
            assert!(in_degrees(&a).iter().all(|&d| d == 1));
            assert!(weakly_connected(&a), "seed {seed}");
            assert_eq!(cycle_count(&a), 1, "seed {seed}");
            assert!((0..60).all(|i| a[(i, i)] == 0.0));
        }
    }

    #[test]
    fn tree_and_line_are_acyclic_and_connected() {
        for seed in 0..20 {
            for kind in [Topology::Tree, Topology::SingleLine] {
                let a = build_adjacency(kind, 40, 1, seed).unwrap();
                let deg = in_degrees(&a);
                assert_eq!(deg.iter().filter(|&&d| d == 0).count(), 1);
                assert_eq!(deg.iter().filter(|&&d| d == 1).count(), 39);
                assert!(weakly_connected(&a));
                assert_eq!(cycle_count(&a), 0);
                if kind == Topology::SingleLine {
                    assert!(out_degrees(&a).iter().all(|&d| d <= 1));
                }
                // Nilpotent: A^n vanishes structurally.
                let mut p = a.map(|v| (v != 0.0) as u8 as f64);
                let s = p.clone();
                for _ in 1..40 {
                    p = &p * &s;
                }
                assert!(p.iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn inconsistent_degree_rejected() {
        assert!(matches!(
            build_adjacency(Topology::Tree, 10, 2, 0),
            Err(Error::InconsistentDegree { .. })
        ));
        assert!(build_adjacency(Topology::ER, 10, 0, 0).is_err());
    }

    #[test]
    fn adjacency_is_deterministic() {
        for kind in Topology::ALL {
            let k = kind.fixed_degree().unwrap_or(3);
            let a = build_adjacency(kind, 30, k, 77).unwrap();
            let b = build_adjacency(kind, 30, k, 77).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn scaling_simple_cases() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0]));
        let (s, how) = scale_to_spectral_radius(&d, 0.5);
        assert_eq!(how, AdjacencyScaling::SpectralRadius);
        assert!((s[(0, 0)] - 0.5).abs() < 1e-15 && (s[(1, 1)] - 0.25).abs() < 1e-15);
        let (z, how) = scale_to_spectral_radius(&d, 0.0);
        assert_eq!(how, AdjacencyScaling::Zero);
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn nilpotent_scaling_uses_singular_value() {
        let a = build_adjacency(Topology::Tree, 50, 1, 3).unwrap();
        let (s, how) = scale_to_spectral_radius(&a, 0.7);
        assert_eq!(how, AdjacencyScaling::SingularValue);
        assert!((largest_singular_value(&s) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn scaling_is_idempotent() {
        for kind in [
            Topology::ER,
            Topology::CycleIncluded,
            Topology::SingleCycle,
            Topology::SingleLine,
        ] {
            let k = kind.fixed_degree().unwrap_or(3);
            let a = build_adjacency(kind, 80, k, 12).unwrap();
            let (once, _) = scale_to_spectral_radius(&a, 0.9);
            let (twice, _) = scale_to_spectral_radius(&once, 0.9);
            let rel = (&once - &twice).norm() / once.norm();
            assert!(rel < 1e-12, "{kind}: {rel}");
        }
    }

    #[test]
    fn input_matrix_contract() {
        let sv = InputScaling::SingularValue;
        let w = build_input_matrix(3, 100, 1.0, 0.3, sv, 5).unwrap();
        assert!(w.iter().all(|v| *v != 0.0));
        assert!((largest_singular_value(&w) - 0.3).abs() < 1e-12);
        // Same draw, scaled entrywise.
        let e = build_input_matrix(3, 100, 1.0, 0.3, InputScaling::Entrywise, 5).unwrap();
        let ratio = e[(0, 0)] / w[(0, 0)];
        assert!((&w * ratio - &e).amax() < 1e-12);
        let sparse = build_input_matrix(3, 100, 0.02, 0.5, sv, 5).unwrap();
        assert!(sparse.column_iter().all(|c| c.iter().any(|v| *v != 0.0)));
        assert!(build_input_matrix(3, 100, 0.3, 0.0, sv, 5)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        assert!(matches!(
            build_input_matrix(3, 100, 0.0, 0.3, sv, 5),
            Err(Error::InfeasibleInputMatrix(_))
        ));
        // Redraw limit: one node and a tiny probability cannot fill all columns.
        assert!(matches!(
            build_input_matrix(3, 1, 1e-9, 0.3, sv, 5),
            Err(Error::InfeasibleInputMatrix(_))
        ));
    }

    #[test]
    fn save_and_load_round_trip() {
        let params = HyperParams {
            rho: 0.8,
            p_in: 0.5,
            rho_in: 0.4,
            beta: 0.3,
            log10_mu: -4.0,
            k: 2,
        };
        let mut res = Reservoir::build_scaled(Topology::ER, 20, 3, params, InputScaling::SingularValue, 9).unwrap();
        res.set_readout(DMatrix::from_fn(3, 20, |i, j| (i as f64 + 1.0) / (j as f64 + 3.0)));
        let dir = tempfile::tempdir().unwrap();
        res.save_dir(dir.path()).unwrap();
        let back = Reservoir::load_dir(dir.path()).unwrap();
        assert_eq!(back.params, res.params);
        assert_eq!(back.adjacency, res.adjacency);
        assert_eq!(back.w_in, res.w_in);
        assert_eq!(back.w_out, res.w_out);
        assert_eq!(back.scaling, res.scaling);
        assert_eq!(back.input_scaling, InputScaling::SingularValue);
    }
}
