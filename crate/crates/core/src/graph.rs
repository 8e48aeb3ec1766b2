//! Graph propagation: APPNP and its subhomogeneous tanh variants with
//! columnwise normalization.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::activations::{Activation, SubhomCertificate};
use crate::error::{Error, Result};
use crate::metric::normalize_columns;
use crate::numerics::{Matrix, PNorm, Sampler};
use crate::operators::OperatorNode;
use crate::solver::{solve, solve_with, FixedPointReport, SolverConfig};

/// Shift applied to `tanh` in the nonlinear variants.
pub const GRAPH_SHIFT: f64 = 1.2;

/// Undirected graph without self-loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    n: usize,
    /// Sorted pairs with `u < v`.
    edges: Vec<(usize, usize)>,
    #[serde(default)]
    features: Option<Matrix>,
}

impl Graph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Dimension("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Range(format!("edge ({u}, {v}) out of range for n = {n}")));
            }
            if u == v {
                return Err(Error::Parameter(format!("self-loop at node {u}")));
            }
            set.insert((u.min(v), u.max(v)));
        }
        Ok(Graph { n, edges: set.into_iter().collect(), features: None })
    }

    pub fn with_features(mut self, x: Matrix) -> Result<Self> {
        if x.rows() != self.n {
            return Err(Error::Dimension(format!("features have {} rows, graph has {} nodes", x.rows(), self.n)));
        }
        self.features = Some(x);
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> Option<&Matrix> {
        self.features.as_ref()
    }

    /// Degrees in `A` (without the added self-loop).
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }
}

/// Parses whitespace-separated pairs, one edge per line, `#` starting a comment.
pub fn parse_edge_list<R: Read>(mut r: R, n: usize) -> Result<Graph> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(Error::Parse { line, message: format!("expected two node indices, got {:?}", body) });
        }
        let parse = |t: &str| {
            t.parse::<usize>().map_err(|_| Error::Parse { line, message: format!("bad node index {t:?}") })
        };
        let (u, v) = (parse(toks[0])?, parse(toks[1])?);
        if u >= n || v >= n {
            return Err(Error::Range(format!("line {line}: node index {} >= n = {n}", u.max(v))));
        }
        if u == v {
            return Err(Error::Parse { line, message: format!("self-loop at node {u}") });
        }
        edges.push((u, v));
    }
    Graph::new(n, edges)
}

pub fn load_edge_list(path: &Path, n: usize) -> Result<Graph> {
    parse_edge_list(std::fs::File::open(path)?, n)
}

pub fn write_edge_list<W: Write>(mut w: W, g: &Graph) -> Result<()> {
    for &(u, v) in &g.edges {
        writeln!(w, "{u} {v}")?;
    }
    Ok(())
}

/// `G(n, p)` random graph.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("edge probability must lie in [0,1], got {p}")));
    }
    let mut s = Sampler::new(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if s.bernoulli(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::new(n, edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjacencyMode {
    /// `D̃⁻¹ Ã`.
    #[default]
    RowStochastic,
    /// `D̃^{-1/2} Ã D̃^{-1/2}`.
    Symmetric,
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn scale(&self, s: f64) -> CsrMatrix {
        CsrMatrix { values: self.values.iter().map(|v| v * s).collect(), ..self.clone() }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                m.set(i, j, v);
            }
        }
        m
    }

    /// `self · B` with `B` given as row-major data of shape `n_cols × c`.
    fn matmat_slice(&self, b: &[f64], c: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows * c];
        for i in 0..self.n_rows {
            let dst = &mut out[i * c..(i + 1) * c];
            for (j, v) in self.row(i) {
                for (d, s) in dst.iter_mut().zip(&b[j * c..(j + 1) * c]) {
                    *d += v * s;
                }
            }
        }
        out
    }

    pub fn matmat(&self, b: &Matrix) -> Result<Matrix> {
        if b.rows() != self.n_cols {
            return Err(Error::Dimension(format!("sparse {}x{} times {}x{}", self.n_rows, self.n_cols, b.rows(), b.cols())));
        }
        Matrix::new(self.n_rows, b.cols(), self.matmat_slice(b.as_slice(), b.cols()))
    }
}

/// Normalized shifted adjacency `Ã = A + I` in sparse form.
pub fn normalized_adjacency_sparse(g: &Graph, mode: AdjacencyMode) -> CsrMatrix {
    let n = g.n;
    let mut nbrs: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for &(u, v) in &g.edges {
        nbrs[u].push(v);
        nbrs[v].push(u);
    }
    let deg: Vec<f64> = nbrs.iter().map(|r| r.len() as f64).collect();
    let mut indptr = vec![0];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (i, row) in nbrs.iter_mut().enumerate() {
        row.sort_unstable();
        for &j in row.iter() {
            indices.push(j);
            values.push(match mode {
                AdjacencyMode::RowStochastic => 1.0 / deg[i],
                AdjacencyMode::Symmetric => 1.0 / (deg[i] * deg[j]).sqrt(),
            });
        }
        indptr.push(indices.len());
    }
    CsrMatrix { n_rows: n, n_cols: n, indptr, indices, values }
}

pub fn normalized_adjacency(g: &Graph, mode: AdjacencyMode) -> Matrix {
    normalized_adjacency_sparse(g, mode).to_dense()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `Z = (1−α) Ã Z + α f`, no normalization.
    Linear,
    /// `Z = norm(tanh((1−α) Ã Z) + α f + 1.2)`.
    TanhOutside,
    /// `Z = norm(tanh((1−α) Ã Z + α f) + 1.2)`.
    TanhInside,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphPropagationConfig {
    /// Teleport coefficient in `(0, 1)`.
    pub alpha: f64,
    pub variant: Variant,
    #[serde(default)]
    pub adjacency_mode: AdjacencyMode,
    /// `f_θ(X)`, shape `n × c`, entrywise nonnegative.
    pub injection: Matrix,
    /// `max_iter` doubles as a hard step cap `K`.
    #[serde(default)]
    pub solver: SolverConfig,
}

/// Assembled propagation map for one graph and config.
#[derive(Debug, Clone)]
pub struct Propagation {
    adjacency: CsrMatrix,
    alpha: f64,
    variant: Variant,
    injection: Matrix,
    certificate: Option<SubhomCertificate>,
}

fn check_config(g: &Graph, cfg: &GraphPropagationConfig, allow_unit_alpha: bool) -> Result<()> {
    let ok = cfg.alpha > 0.0 && (cfg.alpha < 1.0 || (allow_unit_alpha && cfg.alpha == 1.0));
    if !ok {
        return Err(Error::Parameter(format!("teleport coefficient must lie in (0,1), got {}", cfg.alpha)));
    }
    if cfg.injection.rows() != g.n || cfg.injection.cols() == 0 {
        return Err(Error::Dimension(format!(
            "injection is {}x{}, graph has {} nodes",
            cfg.injection.rows(),
            cfg.injection.cols(),
            g.n
        )));
    }
    if !cfg.injection.is_nonnegative() {
        return Err(Error::UncertifiedLayer {
            detail: "injection has negative entries".into(),
            required: "a nonnegative injection".into(),
        });
    }
    Ok(())
}

impl Propagation {
    pub fn new(g: &Graph, cfg: &GraphPropagationConfig) -> Result<Self> {
        Self::build(g, cfg, false)
    }

    fn build(g: &Graph, cfg: &GraphPropagationConfig, allow_unit_alpha: bool) -> Result<Self> {
        check_config(g, cfg, allow_unit_alpha)?;
        let mut p = Propagation {
            adjacency: normalized_adjacency_sparse(g, cfg.adjacency_mode),
            alpha: cfg.alpha,
            variant: cfg.variant,
            injection: cfg.injection.clone(),
            certificate: None,
        };
        if cfg.variant != Variant::Linear {
            let template = p.column_template(vec![0.0; g.n])?;
            let cert = template.subhom_certificate().map_err(|e| Error::UncertifiedLayer {
                detail: e.to_string(),
                required: "a certifiable composition".into(),
            })?;
            if !(cert.positive_jacobian && cert.mu < 1.0) && cert.mu >= 0.5 {
                return Err(Error::UncertifiedLayer {
                    detail: format!("degree mu = {}", cert.mu),
                    required: "mu < 1 with a nonnegative Jacobian".into(),
                });
            }
            p.certificate = Some(cert);
        }
        Ok(p)
    }

    /// Certificate of every column map; `None` for the linear variant.
    pub fn certificate(&self) -> Option<SubhomCertificate> {
        self.certificate
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.injection.rows(), self.injection.cols())
    }

    fn column_template(&self, shift: Vec<f64>) -> Result<OperatorNode> {
        let lin = OperatorNode::linear(self.adjacency.to_dense().scale(1.0 - self.alpha));
        let act = OperatorNode::entrywise(Activation::ShiftedTanh { alpha: GRAPH_SHIFT })?;
        let t = OperatorNode::translation(shift)?;
        match self.variant {
            Variant::Linear => OperatorNode::chain(vec![t, lin]),
            Variant::TanhOutside => OperatorNode::chain(vec![t, act, lin]),
            Variant::TanhInside => OperatorNode::chain(vec![act, t, lin]),
        }
    }

    /// Unnormalized map acting on column `j` of the state.
    pub fn column_operator(&self, j: usize) -> Result<OperatorNode> {
        if j >= self.injection.cols() {
            return Err(Error::Range(format!("column {j} of {}", self.injection.cols())));
        }
        let shift = self.injection.column(j).iter().map(|v| self.alpha * v).collect();
        self.column_template(shift)
    }

    /// Unnormalized `F(Z)` on the row-major state.
    pub fn unnormalized(&self, z: &[f64]) -> Result<Vec<f64>> {
        let (n, c) = self.dims();
        if z.len() != n * c {
            return Err(Error::Dimension(format!("state has {} entries, expected {}", z.len(), n * c)));
        }
        let mut u = self.adjacency.matmat_slice(z, c);
        let beta = 1.0 - self.alpha;
        let f = self.injection.as_slice();
        for (k, v) in u.iter_mut().enumerate() {
            let af = self.alpha * f[k];
            *v = match self.variant {
                Variant::Linear => beta * *v + af,
                Variant::TanhOutside => (beta * *v).tanh() + af + GRAPH_SHIFT,
                Variant::TanhInside => (beta * *v + af).tanh() + GRAPH_SHIFT,
            };
        }
        Ok(u)
    }

    /// The iterated map: `F` for the linear variant, `F` then columnwise ∞-normalization otherwise.
    pub fn map(&self, z: &[f64]) -> Result<Vec<f64>> {
        let u = self.unnormalized(z)?;
        if self.variant == Variant::Linear {
            return Ok(u);
        }
        let (n, c) = self.dims();
        Ok(normalize_columns(&Matrix::new(n, c, u)?, PNorm::Infinity)?.into_vec())
    }

    fn solve(&self, cfg: &SolverConfig) -> Result<(Matrix, FixedPointReport)> {
        let (n, c) = self.dims();
        let g = |z: &[f64]| self.map(z);
        let report = match self.variant {
            Variant::Linear => solve_with(g, self.injection.as_slice(), cfg, false)?,
            _ => solve(g, &vec![1.0; n * c], cfg)?,
        };
        Ok((Matrix::new(n, c, report.z_star.clone())?, report))
    }
}

/// Solves the propagation fixed point. The linear variant starts from `f`,
/// the nonlinear ones from the all-ones state.
pub fn propagate(g: &Graph, cfg: &GraphPropagationConfig) -> Result<(Matrix, FixedPointReport)> {
    Propagation::new(g, cfg)?.solve(&cfg.solver)
}

/// Same as [`propagate`] but also accepts `α = 1` (teleport only).
#[cfg(test)]
pub(crate) fn propagate_unchecked_alpha(g: &Graph, cfg: &GraphPropagationConfig) -> Result<(Matrix, FixedPointReport)> {
    Propagation::build(g, cfg, true)?.solve(&cfg.solver)
}

/// Rowwise softmax.
pub fn softmax_readout(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for i in 0..z.rows() {
        let row = z.row(i);
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for (j, v) in e.into_iter().enumerate() {
            out.set(i, j, v / s);
        }
    }
    out
}

/// Uniform `[0, 1)` injection, a stand-in for a fixed network output.
pub fn random_injection(n: usize, c: usize, seed: u64) -> Matrix {
    let mut s = Sampler::new(seed);
    Matrix::from_fn(n, c, |_, _| s.uniform01())
}

/// Reads a numeric matrix with a header row. A leading `node` column, as
/// written by [`write_matrix_csv`], is skipped.
pub fn read_matrix_csv<R: Read>(r: R) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?;
    let skip = usize::from(headers.get(0) == Some("node"));
    let cols = headers.len() - skip;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let row = rec
            .iter()
            .skip(skip)
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse { line, message: format!("bad number {s:?}") })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != cols {
            return Err(Error::Parse { line, message: format!("expected {cols} fields, got {}", row.len()) });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData("matrix CSV has no rows".into()));
    }
    Matrix::from_rows(&rows)
}

pub fn load_matrix_csv(path: &Path) -> Result<Matrix> {
    read_matrix_csv(std::fs::File::open(path)?)
}

/// Writes `node,c0,c1,...` rows.
pub fn write_matrix_csv<W: Write>(w: W, m: &Matrix) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["node".to_string()];
    header.extend((0..m.cols()).map(|j| format!("c{j}")));
    wtr.write_record(&header)?;
    for i in 0..m.rows() {
        let mut rec = vec![i.to_string()];
        rec.extend(m.row(i).iter().map(|v| format!("{v:e}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
