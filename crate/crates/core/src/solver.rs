//! Fixed-point iteration (Picard and safeguarded Anderson), rate estimation
//! and the multi-start uniqueness probe.
//!
//! Residuals are relative Frobenius norms `‖G(z) − z‖ / ‖G(z)‖`, so for Picard
//! the residual at step k is `‖z_{k+1} − z_k‖ / ‖z_{k+1}‖`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::numerics::{pnorm, relative_residual, solve_dense, Matrix, PNorm, Sampler};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Method {
    Picard,
    /// Type-II Anderson mixing over the last `memory` residual differences.
    Anderson { memory: usize, damping: f64 },
}

impl Method {
    pub fn anderson() -> Self {
        Method::Anderson { memory: 5, damping: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub method: Method,
    pub tol: f64,
    pub max_iter: usize,
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { method: Method::Picard, tol: 1e-3, max_iter: 500, record_trace: true }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        SolverConfig { tol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Parameter(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Parameter("max_iter must be positive".into()));
        }
        if let Method::Anderson { memory, damping } = self.method {
            if memory == 0 {
                return Err(Error::Parameter("anderson memory must be >= 1".into()));
            }
            if !(damping > 0.0 && damping <= 1.0) {
                return Err(Error::Parameter(format!("anderson damping must lie in (0,1], got {damping}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub z_star: Vec<f64>,
    /// Number of map evaluations.
    pub iterations: usize,
    /// One residual per iteration; empty when tracing is off.
    pub residual_trace: Vec<f64>,
    pub final_residual: f64,
    pub estimated_rate: Option<f64>,
    pub converged: bool,
}

/// Solves `z = G(z)` from a strictly positive start, keeping iterates in the cone.
pub fn solve<G>(g: G, z0: &[f64], cfg: &SolverConfig) -> Result<FixedPointReport>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    solve_with(g, z0, cfg, true)
}

/// Core loop. With `positive = false` iterates only need to be finite.
pub(crate) fn solve_with<G>(mut g: G, z0: &[f64], cfg: &SolverConfig, positive: bool) -> Result<FixedPointReport>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    if z0.is_empty() {
        return Err(Error::Dimension("empty starting point".into()));
    }
    check_iterate(z0, 0, positive)?;
    let mut x = z0.to_vec();
    let mut trace = Vec::new();
    let mut anderson = match cfg.method {
        Method::Anderson { memory, damping } => Some(AndersonState::new(memory, damping)),
        Method::Picard => None,
    };
    let mut last = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut z_star = x.clone();
    for k in 1..=cfg.max_iter {
        let gx = g(&x)?;
        if gx.len() != x.len() {
            return Err(Error::Dimension(format!("map changed length {} -> {}", x.len(), gx.len())));
        }
        check_iterate(&gx, k, positive)?;
        let r = relative_residual(&gx, &x)?;
        iterations = k;
        last = r;
        if cfg.record_trace {
            trace.push(r);
        }
        if r <= cfg.tol {
            converged = true;
            z_star = gx;
            break;
        }
        x = match anderson.as_mut() {
            Some(state) => state.next(&x, gx, positive),
            None => gx,
        };
        z_star.clone_from(&x);
    }
    let estimated_rate = if trace.len() >= 5 { rate_estimate(&trace).ok() } else { None };
    Ok(FixedPointReport { z_star, iterations, residual_trace: trace, final_residual: last, estimated_rate, converged })
}

fn check_iterate(z: &[f64], k: usize, positive: bool) -> Result<()> {
    if let Some(v) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::Divergence { iteration: k, detail: format!("non-finite entry {v}") });
    }
    if positive {
        if let Some((i, v)) = z.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::ConeViolation(format!("iterate {k} has entry {v} at index {i}")));
        }
    }
    Ok(())
}

struct AndersonState {
    memory: usize,
    damping: f64,
    prev: Option<(Vec<f64>, Vec<f64>)>,
    df: Vec<Vec<f64>>,
    dg: Vec<Vec<f64>>,
}

impl AndersonState {
    fn new(memory: usize, damping: f64) -> Self {
        AndersonState { memory, damping, prev: None, df: Vec::new(), dg: Vec::new() }
    }

    /// Mixed next iterate; falls back to the plain step when the mix is not
    /// safely positive.
    fn next(&mut self, x: &[f64], gx: Vec<f64>, positive: bool) -> Vec<f64> {
        let f: Vec<f64> = gx.iter().zip(x).map(|(a, b)| a - b).collect();
        if let Some((pf, pg)) = self.prev.take() {
            self.df.push(f.iter().zip(&pf).map(|(a, b)| a - b).collect());
            self.dg.push(gx.iter().zip(&pg).map(|(a, b)| a - b).collect());
            if self.df.len() > self.memory {
                self.df.remove(0);
                self.dg.remove(0);
            }
        }
        self.prev = Some((f.clone(), gx.clone()));
        let m = self.df.len();
        if m == 0 {
            return self.damped(x, &gx, &f);
        }
        let gram = Matrix::from_fn(m, m, |i, j| dot(&self.df[i], &self.df[j]));
        let scale = (0..m).map(|i| gram.get(i, i)).fold(0.0, f64::max);
        if !(scale > 0.0) {
            return self.damped(x, &gx, &f);
        }
        let ridge = Matrix::from_fn(m, m, |i, j| gram.get(i, j) + if i == j { 1e-10 * scale } else { 0.0 });
        let rhs: Vec<f64> = self.df.iter().map(|d| dot(d, &f)).collect();
        let gamma = match solve_dense(&ridge, &rhs) {
            Ok(g) => g,
            Err(_) => return gx,
        };
        let b = self.damping;
        let mixed: Vec<f64> = (0..x.len())
            .map(|i| {
                let mut v = x[i] + b * f[i];
                for (j, gj) in gamma.iter().enumerate() {
                    let dfi = self.df[j][i];
                    let dxi = self.dg[j][i] - dfi;
                    v -= gj * (dxi + b * dfi);
                }
                v
            })
            .collect();
        let safe = mixed.iter().all(|v| v.is_finite() && (!positive || *v > 1e-12));
        if safe {
            mixed
        } else {
            gx
        }
    }

    fn damped(&self, x: &[f64], gx: &[f64], f: &[f64]) -> Vec<f64> {
        if self.damping == 1.0 {
            gx.to_vec()
        } else {
            x.iter().zip(f).map(|(a, b)| a + self.damping * b).collect()
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-step contraction factor: `exp` of the least-squares slope of
/// `ln r_k` over the last half of the trace. A zero residual in that window
/// means exact convergence and yields 0.
pub fn rate_estimate(trace: &[f64]) -> Result<f64> {
    if trace.len() < 5 {
        return Err(Error::InsufficientData(format!("rate estimate needs >= 5 residuals, got {}", trace.len())));
    }
    if let Some(v) = trace.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Parameter(format!("residuals must be finite and nonnegative, got {v}")));
    }
    let start = trace.len() / 2;
    let window = &trace[start..];
    if window.contains(&0.0) {
        return Ok(0.0);
    }
    let n = window.len() as f64;
    let ks: Vec<f64> = (0..window.len()).map(|k| (start + k) as f64).collect();
    let ls: Vec<f64> = window.iter().map(|r| r.ln()).collect();
    let km = ks.iter().sum::<f64>() / n;
    let lm = ls.iter().sum::<f64>() / n;
    let sxy: f64 = ks.iter().zip(&ls).map(|(k, l)| (k - km) * (l - lm)).sum();
    let sxx: f64 = ks.iter().map(|k| (k - km) * (k - km)).sum();
    Ok((sxy / sxx).exp())
}

/// Writes `k,residual` rows, `k` starting at 1.
pub fn write_trace_csv<W: Write>(w: W, report: &FixedPointReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["k", "residual"])?;
    for (k, r) in report.residual_trace.iter().enumerate() {
        out.write_record([(k + 1).to_string(), r.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Agreement threshold of [`uniqueness_probe`] in the ∞-norm.
pub const UNIQUENESS_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub n_starts: usize,
    pub max_pairwise_distance: f64,
    pub threshold: f64,
    pub passed: bool,
    pub iterations: Vec<usize>,
    pub estimated_rates: Vec<Option<f64>>,
    pub fixed_points: Vec<Vec<f64>>,
}

/// Solves from `n_starts` log-uniform starts in `[1e-3, 1e3]^dim` and
/// compares the fixed points.
pub fn uniqueness_probe<G>(g: &G, dim: usize, n_starts: usize, seed: u64, cfg: &SolverConfig) -> Result<UniquenessReport>
where
    G: Fn(&[f64]) -> Result<Vec<f64>> + Sync + ?Sized,
{
    if n_starts < 2 {
        return Err(Error::Parameter("uniqueness probe needs at least 2 starts".into()));
    }
    if dim == 0 {
        return Err(Error::Dimension("uniqueness probe with zero dimension".into()));
    }
    let reports = (0..n_starts)
        .into_par_iter()
        .map(|i| {
            let mut s = Sampler::stream(seed, i as u64);
            let z0: Vec<f64> = (0..dim).map(|_| s.log_uniform(1e-3, 1e3)).collect();
            let r = solve(g, &z0, cfg).map_err(|e| Error::ProbeFailure { start: i, detail: e.to_string() })?;
            if !r.converged {
                return Err(Error::ProbeFailure {
                    start: i,
                    detail: format!("not converged after {} iterations (residual {})", r.iterations, r.final_residual),
                });
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut max_d = 0.0_f64;
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            let diff: Vec<f64> = reports[i].z_star.iter().zip(&reports[j].z_star).map(|(a, b)| a - b).collect();
            max_d = max_d.max(pnorm(&diff, PNorm::Infinity)?);
        }
    }
    Ok(UniquenessReport {
        n_starts,
        max_pairwise_distance: max_d,
        threshold: UNIQUENESS_THRESHOLD,
        passed: max_d < UNIQUENESS_THRESHOLD,
        iterations: reports.iter().map(|r| r.iterations).collect(),
        estimated_rates: reports.iter().map(|r| r.estimated_rate).collect(),
        fixed_points: reports.into_iter().map(|r| r.z_star).collect(),
    })
}
