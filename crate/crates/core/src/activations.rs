//! Subhomogeneous activation functions with Clarke-derivative selections and
//! degree certificates.
//!
//! Configuration strings: `sigmoid`, `softplus{beta=2}`, `tanh`,
//! `shifted-tanh{alpha=1.603}`, `hardtanh{alpha1=0.5,alpha2=2}`, `relu`,
//! `leaky-relu{slope=0.1}`, `approxmax`, and `<base>^<alpha>` for the
//! power-scaled form, e.g. `tanh^0.99`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Certified shifted-tanh tiers as `(minimum shift, degree)`, checked in order.
///
/// Each degree is an upper bound of `sup_z |z| sech²(z) / (tanh z + shift)` at
/// the tier's minimum shift; the bound decreases as the shift grows.
pub const SHIFTED_TANH_TIERS: [(f64, f64); 3] = [(1.603, 0.4993), (1.2034, 0.99), (1.2, 0.9992)];

#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    Sigmoid,
    Softplus { beta: f64 },
    Tanh,
    ShiftedTanh { alpha: f64 },
    HardTanh { alpha1: f64, alpha2: f64 },
    Relu,
    LeakyRelu { slope: f64 },
    Approxmax,
    /// `base(z)^exponent`.
    Power { base: Box<Activation>, exponent: f64 },
}

/// Domain tag attached to a certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    PositiveOrthantOpen,
    PositiveOrthantClosed,
    AllReals,
}

impl Domain {
    /// Whether `self ⊇ other`.
    pub fn contains(self, other: Domain) -> bool {
        self.rank() >= other.rank()
    }

    fn rank(self) -> u8 {
        match self {
            Domain::PositiveOrthantOpen => 0,
            Domain::PositiveOrthantClosed => 1,
            Domain::AllReals => 2,
        }
    }

    pub fn allows(self, z: f64) -> bool {
        match self {
            Domain::PositiveOrthantOpen => z > 0.0,
            Domain::PositiveOrthantClosed => z >= 0.0,
            Domain::AllReals => z.is_finite(),
        }
    }
}

/// Degree `mu`, domain and flags for a subhomogeneous map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubhomCertificate {
    pub mu: f64,
    pub domain: Domain,
    pub differentiable: bool,
    /// Jacobian entrywise nonnegative on the positive orthant. This is the
    /// sign condition under which the sharper `mu` Lipschitz bound holds.
    pub positive_jacobian: bool,
}

impl SubhomCertificate {
    /// Contraction factor in the Thompson metric after normalization.
    pub fn contraction_bound(&self) -> f64 {
        if self.positive_jacobian {
            self.mu
        } else {
            2.0 * self.mu
        }
    }
}

fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn sech2(z: f64) -> f64 {
    let t = z.tanh();
    1.0 - t * t
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::Softplus { beta } if !(beta > 0.0 && beta.is_finite()) => {
                Err(Error::Parameter(format!("softplus beta must be > 0, got {beta}")))
            }
            Activation::HardTanh { alpha1, alpha2 }
                if !(alpha1 > 0.0 && alpha1 < alpha2 && alpha2.is_finite()) =>
            {
                Err(Error::Parameter(format!(
                    "hardtanh needs 0 < alpha1 < alpha2 < inf, got ({alpha1}, {alpha2})"
                )))
            }
            Activation::LeakyRelu { slope } if !(slope > 0.0 && slope < 1.0) => {
                Err(Error::Parameter(format!("leaky-relu slope must lie in (0,1), got {slope}")))
            }
            Activation::ShiftedTanh { alpha } if !alpha.is_finite() => {
                Err(Error::Parameter("shifted-tanh alpha must be finite".into()))
            }
            Activation::Power { ref base, exponent } => {
                if !(exponent > 0.0 && exponent <= 1.0) {
                    return Err(Error::Parameter(format!(
                        "power exponent must lie in (0,1], got {exponent}"
                    )));
                }
                base.validate()
            }
            _ => Ok(()),
        }
    }

    /// True for kinds that act on a whole vector (log-sum-exp and its powers).
    pub fn is_vector(&self) -> bool {
        match self {
            Activation::Approxmax => true,
            Activation::Power { base, .. } => base.is_vector(),
            _ => false,
        }
    }

    /// True when `act_eval(self, z) >= 0` for every real z.
    pub fn is_nonnegative_valued(&self) -> bool {
        match *self {
            Activation::Sigmoid | Activation::Softplus { .. } | Activation::Relu => true,
            Activation::HardTanh { alpha1, .. } => alpha1 >= 0.0,
            Activation::ShiftedTanh { alpha } => alpha >= 1.0,
            Activation::Power { ref base, .. } => base.is_nonnegative_valued(),
            _ => false,
        }
    }
}

/// Scalar value. `approxmax` on a scalar reduces to the identity.
pub fn act_eval(a: &Activation, z: f64) -> f64 {
    match *a {
        Activation::Sigmoid => stable_sigmoid(z),
        Activation::Softplus { beta } => {
            let t = beta * z;
            (t.max(0.0) + (-t.abs()).exp().ln_1p()) / beta
        }
        Activation::Tanh => z.tanh(),
        Activation::ShiftedTanh { alpha } => z.tanh() + alpha,
        Activation::HardTanh { alpha1, alpha2 } => z.clamp(alpha1, alpha2),
        Activation::Relu => z.max(0.0),
        Activation::LeakyRelu { slope } => {
            if z > 0.0 {
                z
            } else {
                slope * z
            }
        }
        Activation::Approxmax => z,
        Activation::Power { ref base, exponent } => act_eval(base, z).powf(exponent),
    }
}

/// One element of the Clarke generalized derivative.
///
/// Kink selections: `relu'(0) = 0`, `hardtanh'` at either breakpoint is 1,
/// `leaky-relu'(0) = slope`.
pub fn act_derivative(a: &Activation, z: f64) -> f64 {
    match *a {
        Activation::Sigmoid => {
            let s = stable_sigmoid(z);
            s * (1.0 - s)
        }
        Activation::Softplus { beta } => stable_sigmoid(beta * z),
        Activation::Tanh | Activation::ShiftedTanh { .. } => sech2(z),
        Activation::HardTanh { alpha1, alpha2 } => {
            if (alpha1..=alpha2).contains(&z) {
                1.0
            } else {
                0.0
            }
        }
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::LeakyRelu { slope } => {
            if z > 0.0 {
                1.0
            } else {
                slope
            }
        }
        Activation::Approxmax => 1.0,
        Activation::Power { ref base, exponent } => {
            let b = act_eval(base, z);
            let db = act_derivative(base, z);
            if db == 0.0 {
                0.0
            } else {
                exponent * b.powf(exponent - 1.0) * db
            }
        }
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    m + z.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Entrywise application, or the one-element log-sum-exp for vector kinds.
pub fn act_eval_vec(a: &Activation, z: &[f64]) -> Result<Vec<f64>> {
    if !a.is_vector() {
        return Ok(z.iter().map(|&v| act_eval(a, v)).collect());
    }
    if z.is_empty() {
        return Err(Error::Dimension("approxmax of an empty vector".into()));
    }
    Ok(vec![vector_value(a, z)])
}

fn vector_value(a: &Activation, z: &[f64]) -> f64 {
    match a {
        Activation::Power { base, exponent } => vector_value(base, z).powf(*exponent),
        _ => log_sum_exp(z),
    }
}

/// Gradient row of a vector kind (softmax for `approxmax`).
pub fn act_gradient_vec(a: &Activation, z: &[f64]) -> Result<Vec<f64>> {
    if !a.is_vector() {
        return Err(Error::Parameter(format!("{a} is entrywise; use act_derivative")));
    }
    if z.is_empty() {
        return Err(Error::Dimension("approxmax of an empty vector".into()));
    }
    Ok(vector_gradient(a, z))
}

fn vector_gradient(a: &Activation, z: &[f64]) -> Vec<f64> {
    match a {
        Activation::Power { base, exponent } => {
            let v = vector_value(base, z);
            let s = exponent * v.powf(exponent - 1.0);
            vector_gradient(base, z).into_iter().map(|g| s * g).collect()
        }
        _ => {
            let m = z.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let e: Vec<f64> = z.iter().map(|&x| (x - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|x| x / s).collect()
        }
    }
}

/// The catalog certificate for `a`.
pub fn certificate(a: &Activation) -> Result<SubhomCertificate> {
    a.validate()?;
    let cert = |mu, domain, differentiable, positive_jacobian| SubhomCertificate {
        mu,
        domain,
        differentiable,
        positive_jacobian,
    };
    Ok(match *a {
        Activation::Sigmoid => cert(1.0, Domain::PositiveOrthantClosed, true, true),
        Activation::Softplus { .. } => cert(1.0, Domain::PositiveOrthantClosed, true, true),
        Activation::Tanh => cert(1.0, Domain::PositiveOrthantOpen, true, true),
        Activation::ShiftedTanh { alpha } => {
            let mu = SHIFTED_TANH_TIERS
                .iter()
                .find(|(min_alpha, _)| alpha >= *min_alpha)
                .map(|&(_, mu)| mu)
                .ok_or_else(|| Error::NoCertificate {
                    node: a.to_string(),
                    reason: format!(
                        "shift {alpha} is below the smallest certified shift {}",
                        SHIFTED_TANH_TIERS[SHIFTED_TANH_TIERS.len() - 1].0
                    ),
                })?;
            cert(mu, Domain::AllReals, true, true)
        }
        Activation::HardTanh { .. } => cert(1.0, Domain::AllReals, false, false),
        Activation::Relu => cert(1.0, Domain::PositiveOrthantOpen, false, false),
        Activation::LeakyRelu { .. } => cert(1.0, Domain::PositiveOrthantOpen, false, false),
        Activation::Approxmax => cert(1.0, Domain::PositiveOrthantClosed, true, true),
        Activation::Power { ref base, exponent } => {
            let b = certificate(base)?;
            SubhomCertificate { mu: exponent * b.mu, ..b }
        }
    })
}

/// The eight catalog entries with their customary parameters.
pub fn table_catalog() -> Vec<(&'static str, Activation)> {
    vec![
        ("sigmoid", Activation::Sigmoid),
        ("softplus", Activation::Softplus { beta: 1.0 }),
        ("tanh", Activation::Tanh),
        ("tanh+1.2", Activation::ShiftedTanh { alpha: 1.2 }),
        ("tanh+1.603", Activation::ShiftedTanh { alpha: 1.603 }),
        ("hardtanh", Activation::HardTanh { alpha1: 0.5, alpha2: 2.0 }),
        ("relu", Activation::Relu),
        ("approxmax", Activation::Approxmax),
    ]
}

/// Wraps `a` as `a(z)^alpha`.
pub fn power_scale(a: &Activation, alpha: f64) -> Result<Activation> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("power exponent must lie in (0,1], got {alpha}")));
    }
    let base = certificate(a)?;
    if let Activation::ShiftedTanh { alpha: shift } = a {
        if *shift < 1.0 {
            return Err(Error::Parameter(format!("{a} is not positive on {:?}", base.domain)));
        }
    }
    if alpha == 1.0 {
        return Ok(a.clone());
    }
    Ok(Activation::Power { base: Box::new(a.clone()), exponent: alpha })
}

/// Grid estimate of `sup_z |z σ'(z)| / σ(z)` over a domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DegreeEstimate {
    /// Maximum over the grid.
    pub grid_sup: f64,
    /// Grid point attaining it.
    pub argmax: f64,
    /// Golden-section refinement of the maximum around `argmax`.
    pub refined_sup: f64,
}

/// Number of grid points used by [`estimate_degree`].
pub const DEGREE_GRID_POINTS: usize = 10_000;

fn degree_ratio(a: &Activation, z: f64) -> f64 {
    (z * act_derivative(a, z)).abs() / act_eval(a, z).max(1e-300)
}

/// Numerical degree estimate; diagnostic only, certificates never consult it.
///
/// The grid is log-spaced in `|z|` over `[1e-6, 1e2]`; on `AllReals` half the
/// points mirror to negative `z`.
pub fn estimate_degree(a: &Activation, domain: Domain) -> Result<DegreeEstimate> {
    a.validate()?;
    if a.is_vector() {
        return Err(Error::Parameter("degree estimator is scalar-only".into()));
    }
    let (lo, hi) = (1e-6_f64.ln(), 1e2_f64.ln());
    let per_side = if domain == Domain::AllReals { DEGREE_GRID_POINTS / 2 } else { DEGREE_GRID_POINTS };
    let mut grid: Vec<f64> = (0..per_side)
        .map(|i| (lo + (hi - lo) * i as f64 / (per_side - 1) as f64).exp())
        .collect();
    if domain == Domain::AllReals {
        let neg: Vec<f64> = grid.iter().rev().map(|z| -z).collect();
        grid = neg.into_iter().chain(grid).collect();
    }
    let (mut best, mut idx) = (f64::NEG_INFINITY, 0);
    for (i, &z) in grid.iter().enumerate() {
        let r = degree_ratio(a, z);
        if r > best {
            best = r;
            idx = i;
        }
    }
    let left = grid[idx.saturating_sub(1)];
    let right = grid[(idx + 1).min(grid.len() - 1)];
    let refined = golden_max(|z| degree_ratio(a, z), left, right).max(best);
    Ok(DegreeEstimate { grid_sup: best, argmax: grid[idx], refined_sup: refined })
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if (b - a).abs() < 1e-15 * (1.0 + a.abs()) {
            break;
        }
    }
    fc.max(fd)
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Sigmoid => write!(f, "sigmoid"),
            Activation::Softplus { beta } => write!(f, "softplus{{beta={beta}}}"),
            Activation::Tanh => write!(f, "tanh"),
            Activation::ShiftedTanh { alpha } => write!(f, "shifted-tanh{{alpha={alpha}}}"),
            Activation::HardTanh { alpha1, alpha2 } => {
                write!(f, "hardtanh{{alpha1={alpha1},alpha2={alpha2}}}")
            }
            Activation::Relu => write!(f, "relu"),
            Activation::LeakyRelu { slope } => write!(f, "leaky-relu{{slope={slope}}}"),
            Activation::Approxmax => write!(f, "approxmax"),
            Activation::Power { base, exponent } => write!(f, "{base}^{exponent}"),
        }
    }
}

fn parse_params(body: &str, allowed: &[&str]) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for part in body.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Parameter(format!("expected key=value, got '{part}'")))?;
        let k = k.trim();
        if !allowed.contains(&k) {
            return Err(Error::Parameter(format!("unknown activation parameter '{k}'")));
        }
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Parameter(format!("bad value for '{k}': '{v}'")))?;
        out.push((k.to_string(), v));
    }
    Ok(out)
}

fn param(params: &[(String, f64)], key: &str, default: Option<f64>) -> Result<f64> {
    params
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| *v)
        .or(default)
        .ok_or_else(|| Error::Parameter(format!("missing activation parameter '{key}'")))
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(pos) = s.rfind('^') {
            if !s[pos..].contains('}') {
                let base: Activation = s[..pos].parse()?;
                let exponent: f64 = s[pos + 1..]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parameter(format!("bad power exponent in '{s}'")))?;
                let a = Activation::Power { base: Box::new(base), exponent };
                a.validate()?;
                return Ok(a);
            }
        }
        let (name, body) = match s.find('{') {
            Some(i) => {
                let body = s[i + 1..]
                    .strip_suffix('}')
                    .ok_or_else(|| Error::Parameter(format!("unterminated parameters in '{s}'")))?;
                (&s[..i], body)
            }
            None => (s, ""),
        };
        let a = match name.trim() {
            "sigmoid" => {
                parse_params(body, &[])?;
                Activation::Sigmoid
            }
            "softplus" => {
                let p = parse_params(body, &["beta"])?;
                Activation::Softplus { beta: param(&p, "beta", Some(1.0))? }
            }
            "tanh" => {
                parse_params(body, &[])?;
                Activation::Tanh
            }
            "shifted-tanh" => {
                let p = parse_params(body, &["alpha"])?;
                Activation::ShiftedTanh { alpha: param(&p, "alpha", None)? }
            }
            "hardtanh" => {
                let p = parse_params(body, &["alpha1", "alpha2"])?;
                Activation::HardTanh {
                    alpha1: param(&p, "alpha1", None)?,
                    alpha2: param(&p, "alpha2", None)?,
                }
            }
            "relu" => {
                parse_params(body, &[])?;
                Activation::Relu
            }
            "leaky-relu" => {
                let p = parse_params(body, &["slope"])?;
                Activation::LeakyRelu { slope: param(&p, "slope", None)? }
            }
            "approxmax" => {
                parse_params(body, &[])?;
                Activation::Approxmax
            }
            other => return Err(Error::Parameter(format!("unknown activation '{other}'"))),
        };
        a.validate()?;
        Ok(a)
    }
}

impl Serialize for Activation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Activation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(alpha: f64) -> Activation {
        Activation::ShiftedTanh { alpha }
    }

    #[test]
    fn eval_examples() {
        assert_eq!(act_eval(&Activation::Sigmoid, 0.0), 0.5);
        let ht = Activation::HardTanh { alpha1: 0.5, alpha2: 2.0 };
        assert_eq!(act_eval(&ht, 3.0), 2.0);
        assert_eq!(act_eval(&ht, 0.1), 0.5);
        assert_eq!(act_eval(&st(1.603), 0.0), 1.603);
        let sp = Activation::Softplus { beta: 1.0 };
        assert!((act_eval(&sp, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(act_eval(&sp, 1000.0), 1000.0);
        assert!(act_eval(&sp, -1000.0) >= 0.0);
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(act_derivative(&Activation::Sigmoid, 0.0), 0.25);
        assert_eq!(act_derivative(&Activation::Relu, -1.0), 0.0);
        assert_eq!(act_derivative(&Activation::Relu, 0.0), 0.0);
        let ht = Activation::HardTanh { alpha1: 0.5, alpha2: 2.0 };
        assert_eq!(act_derivative(&ht, 1.0), 1.0);
        assert_eq!(act_derivative(&ht, 0.5), 1.0);
        assert_eq!(act_derivative(&ht, 2.0), 1.0);
        assert_eq!(act_derivative(&ht, 2.5), 0.0);
        let lk = Activation::LeakyRelu { slope: 0.1 };
        assert_eq!(act_derivative(&lk, 0.0), 0.1);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let smooth = [
            Activation::Sigmoid,
            Activation::Softplus { beta: 2.0 },
            Activation::Tanh,
            st(1.603),
            Activation::Power { base: Box::new(Activation::Sigmoid), exponent: 0.5 },
        ];
        let h = 1e-6;
        for a in &smooth {
            for &z in &[0.3, 1.7, 4.0] {
                let fd = (act_eval(a, z + h) - act_eval(a, z - h)) / (2.0 * h);
                let an = act_derivative(a, z);
                assert!((fd - an).abs() < 1e-7 * (1.0 + an.abs()), "{a} at {z}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn vector_examples() {
        assert_eq!(act_eval_vec(&Activation::Tanh, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let v = act_eval_vec(&Activation::Approxmax, &[0.0, 0.0]).unwrap();
        assert!((v[0] - 2f64.ln()).abs() < 1e-15);
        let g = act_gradient_vec(&Activation::Approxmax, &[0.3, -2.0, 5.0]).unwrap();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(act_eval_vec(&Activation::Approxmax, &[]).is_err());
    }

    #[test]
    fn certificate_examples() {
        let c = certificate(&st(1.603)).unwrap();
        assert_eq!(c.domain, Domain::AllReals);
        assert!(c.mu < 0.5);
        assert_eq!(certificate(&st(1.25)).unwrap().mu, 0.99);
        assert!(certificate(&st(1.2)).unwrap().mu < 1.0);
        assert!(matches!(certificate(&st(1.19)), Err(Error::NoCertificate { .. })));
        let s = certificate(&Activation::Sigmoid).unwrap();
        assert_eq!((s.mu, s.domain), (1.0, Domain::PositiveOrthantClosed));
        let t = certificate(&Activation::Tanh).unwrap();
        assert_eq!(t.domain, Domain::PositiveOrthantOpen);
        let h = certificate(&Activation::HardTanh { alpha1: 0.5, alpha2: 2.0 }).unwrap();
        assert!(!h.differentiable && !h.positive_jacobian);
    }

    #[test]
    fn shifted_tanh_tiers_cover_true_degree() {
        for &(alpha, mu) in &SHIFTED_TANH_TIERS {
            let est = estimate_degree(&st(alpha), Domain::AllReals).unwrap();
            assert!(est.refined_sup <= mu, "tier {alpha}: {} > {mu}", est.refined_sup);
        }
    }

    #[test]
    fn power_scale_examples() {
        let p = power_scale(&Activation::Tanh, 0.99).unwrap();
        assert!((certificate(&p).unwrap().mu - 0.99).abs() < 1e-15);
        assert_eq!(power_scale(&Activation::Sigmoid, 1.0).unwrap(), Activation::Sigmoid);
        let half = power_scale(&Activation::Sigmoid, 0.5).unwrap();
        assert_eq!(certificate(&half).unwrap().mu, 0.5);
        assert!(power_scale(&Activation::Tanh, 0.0).is_err());
        assert!(power_scale(&Activation::Tanh, 1.5).is_err());
    }

    #[test]
    fn parse_roundtrip() {
        for s in [
            "sigmoid",
            "softplus{beta=2}",
            "tanh",
            "shifted-tanh{alpha=1.603}",
            "hardtanh{alpha1=0.5,alpha2=2}",
            "relu",
            "leaky-relu{slope=0.1}",
            "approxmax",
            "tanh^0.99",
            "shifted-tanh{alpha=1.2}^0.5",
        ] {
            let a: Activation = s.parse().unwrap();
            assert_eq!(a.to_string(), s);
        }
        assert_eq!("softplus".parse::<Activation>().unwrap(), Activation::Softplus { beta: 1.0 });
        assert!("hardtanh{alpha1=2,alpha2=1}".parse::<Activation>().is_err());
        assert!("leaky-relu{slope=1.5}".parse::<Activation>().is_err());
        assert!("softplus{beta=-1}".parse::<Activation>().is_err());
        assert!("swish".parse::<Activation>().is_err());
        assert!("tanh{alpha=1}".parse::<Activation>().is_err());
    }

    #[test]
    fn degree_estimate_monotone_in_shift() {
        let mus: Vec<f64> = [1.21, 1.4, 1.603, 2.0]
            .iter()
            .map(|&a| estimate_degree(&st(a), Domain::AllReals).unwrap().refined_sup)
            .collect();
        assert!(mus.windows(2).all(|w| w[0] > w[1]), "{mus:?}");
    }
}
