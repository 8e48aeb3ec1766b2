//! Thompson metric, slice normalization `z / φ(z)`, and the empirical
//! contraction probe.
//!
//! `φ` is a p-norm. For `p = ∞` it is order preserving only in the non-strict
//! sense; the Lipschitz argument needs just positivity and 1-homogeneity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{pnorm, Matrix, PNorm, Sampler};

/// `δ(x, y) = max_i |ln x_i − ln y_i|` on strictly positive data.
pub fn thompson_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("distance between lengths {} and {}", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::Dimension("distance between empty vectors".into()));
    }
    let mut d = 0.0_f64;
    for (i, (&a, &b)) in x.iter().zip(y).enumerate() {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::ConeViolation(format!("entry {i} is not positive ({a}, {b})")));
        }
        d = d.max((a.ln() - b.ln()).abs());
    }
    Ok(d)
}

/// Matrix form: the max over entries, equal to the max over column distances.
pub fn thompson_distance_matrix(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::Dimension("distance between matrices of unequal shape".into()));
    }
    thompson_distance(x.as_slice(), y.as_slice())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    #[default]
    Global,
    Columnwise,
}

/// The normalizing functional and its scope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub p: PNorm,
    #[serde(default)]
    pub scope: Scope,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        NormalizationSpec { p: PNorm::Infinity, scope: Scope::Global }
    }
}

fn check_positive(z: &[f64], what: &str) -> Result<()> {
    if let Some((i, v)) = z.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::ConeViolation(format!("{what} entry {i} is {v}")));
    }
    Ok(())
}

/// `z / φ(z)` for strictly positive `z`.
pub fn normalize(z: &[f64], p: PNorm) -> Result<Vec<f64>> {
    check_positive(z, "vector")?;
    let phi = pnorm(z, p)?;
    Ok(z.iter().map(|v| v / phi).collect())
}

/// Normalizes every column to unit p-norm.
pub fn normalize_columns(z: &Matrix, p: PNorm) -> Result<Matrix> {
    let mut out = z.clone();
    for j in 0..z.cols() {
        let col = z.column(j);
        if let Some((i, v)) = col.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::ConeViolation(format!("column {j} has entry {v} at row {i}")));
        }
        let phi = pnorm(&col, p)?;
        for (i, v) in col.iter().enumerate() {
            out.set(i, j, v / phi);
        }
    }
    Ok(out)
}

/// Gradient of `φ` at `y`. For `p = ∞` the max-index selection takes the
/// lowest index among ties.
pub fn pnorm_gradient(y: &[f64], p: PNorm) -> Result<Vec<f64>> {
    let phi = pnorm(y, p)?;
    if phi == 0.0 {
        return Err(Error::DegenerateIterate("gradient of a norm at zero".into()));
    }
    Ok(match p {
        PNorm::Infinity => {
            let mut k = 0;
            for (i, v) in y.iter().enumerate() {
                if v.abs() > y[k].abs() {
                    k = i;
                }
            }
            let mut g = vec![0.0; y.len()];
            g[k] = y[k].signum();
            g
        }
        PNorm::Finite(p) => y.iter().map(|v| v.signum() * (v.abs() / phi).powf(p - 1.0)).collect(),
    })
}

/// Vector-Jacobian product `(∂ normalize / ∂y)ᵀ c` at `y`.
pub fn normalize_vjp(y: &[f64], p: PNorm, c: &[f64]) -> Result<Vec<f64>> {
    if y.len() != c.len() {
        return Err(Error::Dimension("cotangent length mismatch".into()));
    }
    let phi = pnorm(y, p)?;
    let g = pnorm_gradient(y, p)?;
    let yc: f64 = y.iter().zip(c).map(|(a, b)| a * b).sum();
    Ok(c.iter().zip(&g).map(|(ci, gi)| ci / phi - gi * yc / (phi * phi)).collect())
}

/// Jacobian of `y ↦ y / φ(y)`.
pub fn normalize_jacobian(y: &[f64], p: PNorm) -> Result<Matrix> {
    let n = y.len();
    let phi = pnorm(y, p)?;
    let g = pnorm_gradient(y, p)?;
    Ok(Matrix::from_fn(n, n, |i, j| {
        let d = if i == j { 1.0 / phi } else { 0.0 };
        d - y[i] * g[j] / (phi * phi)
    }))
}

/// Sampling plan for [`contraction_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub dim: usize,
    pub pairs: usize,
    pub seed: u64,
    /// Log-uniform sampling range `[lo, hi]` per coordinate.
    #[serde(default = "default_range")]
    pub range: (f64, f64),
}

fn default_range() -> (f64, f64) {
    (1e-3, 1e3)
}

impl ProbeSpec {
    pub fn new(dim: usize, pairs: usize, seed: u64) -> Self {
        ProbeSpec { dim, pairs, seed, range: default_range() }
    }

    pub fn with_range(self, lo: f64, hi: f64) -> Self {
        ProbeSpec { range: (lo, hi), ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    Mu,
    TwoMu,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionProbeReport {
    /// Pairs that entered the ratio statistics.
    pub pair_count: usize,
    /// Pairs dropped because `δ(x, y) < 1e-12`.
    pub excluded: usize,
    pub max_ratio: f64,
    pub mean_ratio: f64,
    pub bound_kind: BoundKind,
    pub bound: f64,
    pub passed: bool,
}

/// Pairs closer than this are not probed.
pub const PAIR_EXCLUSION: f64 = 1e-12;

fn probe_pair(spec: &ProbeSpec, i: usize) -> (Vec<f64>, Vec<f64>) {
    let mut s = Sampler::stream(spec.seed, i as u64);
    let (lo, hi) = spec.range;
    let x: Vec<f64> = (0..spec.dim).map(|_| s.log_uniform(lo, hi)).collect();
    let y = if i < spec.pairs / 2 {
        (0..spec.dim).map(|_| s.log_uniform(lo, hi)).collect()
    } else {
        x.iter().map(|v| v * (1e-3 * s.normal()).exp()).collect()
    };
    (x, y)
}

/// Empirical ratios `δ(G(x), G(y)) / δ(x, y)` against the certified bound
/// (`μ` with a nonnegative Jacobian, `2μ` otherwise).
///
/// The first half of the pairs are independent log-uniform draws over `spec.range`, the second
/// half are perturbations `y = x·exp(ε)` with `ε ~ N(0, 1e-6)`.
pub fn contraction_probe<G>(g: &G, spec: &ProbeSpec, mu: f64, positive_jacobian: bool) -> Result<ContractionProbeReport>
where
    G: Fn(&[f64]) -> Result<Vec<f64>> + Sync + ?Sized,
{
    if spec.dim == 0 || spec.pairs == 0 {
        return Err(Error::Parameter("probe needs positive dim and pair count".into()));
    }
    let (lo, hi) = spec.range;
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::Parameter(format!("probe range must satisfy 0 < lo < hi, got [{lo}, {hi}]")));
    }
    let ratios = (0..spec.pairs)
        .into_par_iter()
        .map(|i| {
            let (x, y) = probe_pair(spec, i);
            let d_in = thompson_distance(&x, &y)?;
            if d_in < PAIR_EXCLUSION {
                return Ok(None);
            }
            let (gx, gy) = (g(&x)?, g(&y)?);
            let d_out = thompson_distance(&gx, &gy).map_err(|e| {
                Error::ConeViolation(format!("G left the cone on pair {i} (x = {x:?}): {e}"))
            })?;
            Ok(Some(d_out / d_in))
        })
        .collect::<Result<Vec<_>>>()?;
    let kept: Vec<f64> = ratios.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::InsufficientData("every probe pair was excluded".into()));
    }
    let max_ratio = kept.iter().copied().fold(0.0, f64::max);
    let mean_ratio = kept.iter().sum::<f64>() / kept.len() as f64;
    let (bound_kind, bound) = if positive_jacobian { (BoundKind::Mu, mu) } else { (BoundKind::TwoMu, 2.0 * mu) };
    Ok(ContractionProbeReport {
        pair_count: kept.len(),
        excluded: spec.pairs - kept.len(),
        max_ratio,
        mean_ratio,
        bound_kind,
        bound,
        passed: max_ratio <= bound + 1e-6,
    })
}
