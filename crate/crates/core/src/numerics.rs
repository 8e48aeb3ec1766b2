//! Dense linear algebra and deterministic randomness.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`. Matrices are row-major.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;

use crate::error::{Error, Result};

/// Exponent of a p-norm. `Infinity` is its own variant rather than a float sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PNorm {
    Finite(f64),
    Infinity,
}

impl PNorm {
    /// Validates `p >= 1`.
    pub fn new(p: f64) -> Result<Self> {
        if p.is_infinite() && p > 0.0 {
            return Ok(PNorm::Infinity);
        }
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::Parameter(format!("p-norm exponent must be >= 1, got {p}")));
        }
        Ok(PNorm::Finite(p))
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PNorm::Infinity => Ok(()),
            PNorm::Finite(p) => PNorm::new(p).map(|_| ()),
        }
    }
}

impl fmt::Display for PNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PNorm::Finite(p) => write!(f, "{p}"),
            PNorm::Infinity => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for PNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(PNorm::Infinity);
        }
        let p: f64 = t
            .parse()
            .map_err(|_| Error::Parameter(format!("cannot parse p-norm exponent '{s}'")))?;
        PNorm::new(p)
    }
}

impl Serialize for PNorm {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PNorm::Finite(p) => s.serialize_f64(*p),
            PNorm::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for PNorm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Num(p) => PNorm::new(p),
            Raw::Str(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// p-norm of a nonempty slice.
pub fn pnorm(v: &[f64], p: PNorm) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Dimension("p-norm of an empty vector".into()));
    }
    p.validate()?;
    Ok(match p {
        PNorm::Infinity => v.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
        PNorm::Finite(1.0) => v.iter().map(|x| x.abs()).sum(),
        PNorm::Finite(2.0) => {
            // scaled to avoid overflow on large entries
            let m = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            if m == 0.0 {
                0.0
            } else {
                m * v.iter().map(|x| (x / m) * (x / m)).sum::<f64>().sqrt()
            }
        }
        PNorm::Finite(p) => {
            let m = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            if m == 0.0 {
                0.0
            } else {
                m * v.iter().map(|x| (x.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
            }
        }
    })
}

/// ‖a − b‖_F / ‖a‖_F for equally shaped data.
pub fn relative_residual(z_next: &[f64], z: &[f64]) -> Result<f64> {
    if z_next.len() != z.len() {
        return Err(Error::Dimension(format!(
            "residual of shapes {} and {}",
            z_next.len(),
            z.len()
        )));
    }
    if z_next.is_empty() {
        return Err(Error::Dimension("residual of empty iterates".into()));
    }
    let denom = pnorm(z_next, PNorm::Finite(2.0))?;
    if denom == 0.0 {
        return Err(Error::DegenerateIterate("next iterate is identically zero".into()));
    }
    let diff: Vec<f64> = z_next.iter().zip(z).map(|(a, b)| a - b).collect();
    Ok(pnorm(&diff, PNorm::Finite(2.0))? / denom)
}

/// Dense row-major matrix with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;
    fn try_from(r: RawMatrix) -> Result<Self> {
        Matrix::new(r.rows, r.cols, r.data)
    }
}

impl From<Matrix> for RawMatrix {
    fn from(m: Matrix) -> Self {
        RawMatrix { rows: m.rows, cols: m.cols, data: m.data }
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!("matrix shape {rows}x{cols} has a zero dimension")));
        }
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "matrix shape {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parameter("matrix entries must be finite".into()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "zero matrix dimension");
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "zero matrix dimension");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Matrix::new(r, c, rows.concat())
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        let c = cols.len();
        let r = cols.first().map_or(0, |col| col.len());
        if cols.iter().any(|col| col.len() != r) {
            return Err(Error::Dimension("ragged columns".into()));
        }
        if r == 0 || c == 0 {
            return Err(Error::Dimension("empty column set".into()));
        }
        Matrix::new(r, c, (0..r * c).map(|k| cols[k % c][k / c]).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// In-place builder access.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols).map(|j| self.column(j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn abs(&self) -> Matrix {
        self.map(f64::abs)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|x| x * s)
    }

    pub fn frobenius_norm(&self) -> f64 {
        pnorm(&self.data, PNorm::Finite(2.0)).unwrap_or(0.0)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&x| x >= 0.0)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Dimension(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Computes Aᵀv.
    pub fn tmatvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::Dimension(format!(
                "transpose of {}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension("matrix difference of unequal shapes".into()));
        }
        Matrix::new(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        )
    }
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_dense(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(Error::Dimension(format!(
            "linear solve with {}x{} matrix and rhs of length {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    let mut m = a.as_slice().to_vec();
    let mut x = b.to_vec();
    let scale = m.iter().fold(0.0_f64, |s, v| s.max(v.abs())).max(f64::MIN_POSITIVE);
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| m[i * n + k].abs().total_cmp(&m[j * n + k].abs()))
            .unwrap_or(k);
        if m[piv * n + k].abs() <= 1e-14 * scale {
            return Err(Error::IllConditioned("singular matrix in dense solve".into()));
        }
        if piv != k {
            for j in 0..n {
                m.swap(k * n + j, piv * n + j);
            }
            x.swap(k, piv);
        }
        let d = m[k * n + k];
        for i in k + 1..n {
            let f = m[i * n + k] / d;
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                m[i * n + j] -= f * m[k * n + j];
            }
            x[i] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| m[k * n + j] * x[j]).sum();
        x[k] = (x[k] - s) / m[k * n + k];
    }
    Ok(x)
}

/// Distribution for [`random_fill`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distribution {
    Uniform01,
    StandardNormal,
}

/// Seed plus distribution. Generator: ChaCha8 seeded through `seed_from_u64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub distribution: Distribution,
}

impl RngSpec {
    pub fn uniform(seed: u64) -> Self {
        RngSpec { seed, distribution: Distribution::Uniform01 }
    }

    pub fn normal(seed: u64) -> Self {
        RngSpec { seed, distribution: Distribution::StandardNormal }
    }
}

/// Fills a `rows x cols` matrix from the spec.
pub fn random_fill(rows: usize, cols: usize, spec: RngSpec) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!("random fill of shape {rows}x{cols}")));
    }
    let mut s = Sampler::new(spec.seed);
    let data = (0..rows * cols)
        .map(|_| match spec.distribution {
            Distribution::Uniform01 => s.uniform01(),
            Distribution::StandardNormal => s.normal(),
        })
        .collect();
    Matrix::new(rows, cols, data)
}

/// Vector counterpart of [`random_fill`].
pub fn random_vector(len: usize, spec: RngSpec) -> Result<Vec<f64>> {
    Ok(random_fill(len, 1, spec)?.into_vec())
}

/// SplitMix64 finalizer.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE5_E4B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives an independent seed for stream `index` of `seed`.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Thin wrapper over a seeded ChaCha8 stream.
#[derive(Debug, Clone)]
pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Sampler { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Sampler for stream `index` of `seed`.
    pub fn stream(seed: u64, index: u64) -> Self {
        Sampler::new(sub_seed(seed, index))
    }

    pub fn uniform01(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform01()
    }

    pub fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        (lo.ln() + (hi.ln() - lo.ln()) * self.uniform01()).exp()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform01() < p
    }
}
