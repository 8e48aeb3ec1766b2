//! Operator trees `F = σ1 ∘ T ∘ σ2 ∘ L`, their analytic Jacobians, the
//! composition calculus for subhomogeneity degrees, and sampling verifiers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::activations::{
    act_derivative, act_eval, act_eval_vec, act_gradient_vec, certificate, Activation, Domain,
    SubhomCertificate,
};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Sampler};

/// Relative tolerance of the verifiers.
pub const VERIFY_TOLERANCE: f64 = 1e-8;

/// Serialized form of a node: `{"kind": "...", ...parameters}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NodeKind {
    Linear { matrix: Matrix },
    /// Applies `|W|` entrywise.
    AbsLinear { matrix: Matrix },
    Translation { shift: Vec<f64> },
    Entrywise { activation: Activation },
    VectorActivation { activation: Activation },
    Power { exponent: f64 },
    Compose { outer: Box<OperatorNode>, inner: Box<OperatorNode> },
}

/// Immutable operator tree node.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "NodeKind", into = "NodeKind")]
pub struct OperatorNode {
    kind: NodeKind,
    cert: OnceLock<Certificate>,
}

impl From<OperatorNode> for NodeKind {
    fn from(n: OperatorNode) -> Self {
        n.kind
    }
}

impl TryFrom<NodeKind> for OperatorNode {
    type Error = Error;
    fn try_from(kind: NodeKind) -> Result<Self> {
        match kind {
            NodeKind::Linear { matrix } => Ok(OperatorNode::linear(matrix)),
            NodeKind::AbsLinear { matrix } => Ok(OperatorNode::abs_linear(matrix)),
            NodeKind::Translation { shift } => OperatorNode::translation(shift),
            NodeKind::Entrywise { activation } => OperatorNode::entrywise(activation),
            NodeKind::VectorActivation { activation } => OperatorNode::vector_activation(activation),
            NodeKind::Power { exponent } => OperatorNode::power(exponent),
            NodeKind::Compose { outer, inner } => OperatorNode::compose(*outer, *inner),
        }
    }
}

/// Result of the degree calculus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Certificate {
    /// Pure h-homogeneous map; no subhomogeneity degree applies.
    Homogeneous { degree: f64 },
    Subhomogeneous(SubhomCertificate),
}

impl Certificate {
    pub fn subhom(&self) -> Option<SubhomCertificate> {
        match self {
            Certificate::Subhomogeneous(c) => Some(*c),
            Certificate::Homogeneous { .. } => None,
        }
    }
}

impl OperatorNode {
    fn from_kind(kind: NodeKind) -> Self {
        OperatorNode { kind, cert: OnceLock::new() }
    }

    pub fn linear(matrix: Matrix) -> Self {
        Self::from_kind(NodeKind::Linear { matrix })
    }

    pub fn abs_linear(matrix: Matrix) -> Self {
        Self::from_kind(NodeKind::AbsLinear { matrix })
    }

    pub fn translation(shift: Vec<f64>) -> Result<Self> {
        if shift.is_empty() || shift.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("translation needs a nonempty finite vector".into()));
        }
        Ok(Self::from_kind(NodeKind::Translation { shift }))
    }

    pub fn entrywise(activation: Activation) -> Result<Self> {
        activation.validate()?;
        if activation.is_vector() {
            return Err(Error::Parameter(format!(
                "{activation} is a vector activation; use vector_activation"
            )));
        }
        Ok(Self::from_kind(NodeKind::Entrywise { activation }))
    }

    pub fn vector_activation(activation: Activation) -> Result<Self> {
        activation.validate()?;
        if !activation.is_vector() {
            return Err(Error::Parameter(format!("{activation} acts entrywise; use entrywise")));
        }
        Ok(Self::from_kind(NodeKind::VectorActivation { activation }))
    }

    pub fn power(exponent: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent <= 1.0) {
            return Err(Error::Parameter(format!("power exponent must lie in (0,1], got {exponent}")));
        }
        Ok(Self::from_kind(NodeKind::Power { exponent }))
    }

    /// `outer ∘ inner`, checking that shapes agree.
    pub fn compose(outer: OperatorNode, inner: OperatorNode) -> Result<Self> {
        if let (Some(o), Some(i)) = (outer.input_dim(), inner.output_dim()) {
            if o != i {
                return Err(Error::Dimension(format!(
                    "cannot compose {} (input {o}) after {} (output {i})",
                    outer.label(),
                    inner.label()
                )));
            }
        }
        Ok(Self::from_kind(NodeKind::Compose { outer: Box::new(outer), inner: Box::new(inner) }))
    }

    /// Composes nodes listed outermost first.
    pub fn chain(nodes: Vec<OperatorNode>) -> Result<Self> {
        let mut it = nodes.into_iter().rev();
        let mut acc = it.next().ok_or_else(|| Error::Parameter("empty operator chain".into()))?;
        for outer in it {
            acc = OperatorNode::compose(outer, acc)?;
        }
        Ok(acc)
    }

    pub fn kind(&self) -> &NodeKind {
        &self.kind
    }

    /// Short description used in error messages.
    pub fn label(&self) -> String {
        match &self.kind {
            NodeKind::Linear { matrix } => format!("linear({}x{})", matrix.rows(), matrix.cols()),
            NodeKind::AbsLinear { matrix } => {
                format!("abs-linear({}x{})", matrix.rows(), matrix.cols())
            }
            NodeKind::Translation { shift } => format!("translation({})", shift.len()),
            NodeKind::Entrywise { activation } => format!("entrywise({activation})"),
            NodeKind::VectorActivation { activation } => format!("vector-activation({activation})"),
            NodeKind::Power { exponent } => format!("power({exponent})"),
            NodeKind::Compose { outer, inner } => format!("{} ∘ {}", outer.label(), inner.label()),
        }
    }

    fn preserves_dim(&self) -> bool {
        match &self.kind {
            NodeKind::Entrywise { .. } | NodeKind::Power { .. } | NodeKind::Translation { .. } => true,
            NodeKind::Linear { matrix } | NodeKind::AbsLinear { matrix } => {
                matrix.rows() == matrix.cols()
            }
            NodeKind::VectorActivation { .. } => false,
            NodeKind::Compose { outer, inner } => outer.preserves_dim() && inner.preserves_dim(),
        }
    }

    /// Required input length, if fixed.
    pub fn input_dim(&self) -> Option<usize> {
        match &self.kind {
            NodeKind::Linear { matrix } | NodeKind::AbsLinear { matrix } => Some(matrix.cols()),
            NodeKind::Translation { shift } => Some(shift.len()),
            NodeKind::Entrywise { .. } | NodeKind::VectorActivation { .. } | NodeKind::Power { .. } => {
                None
            }
            NodeKind::Compose { outer, inner } => inner.input_dim().or_else(|| {
                if inner.preserves_dim() {
                    outer.input_dim()
                } else {
                    None
                }
            }),
        }
    }

    /// Output length, if fixed independently of the input.
    pub fn output_dim(&self) -> Option<usize> {
        match &self.kind {
            NodeKind::Linear { matrix } | NodeKind::AbsLinear { matrix } => Some(matrix.rows()),
            NodeKind::Translation { shift } => Some(shift.len()),
            NodeKind::VectorActivation { .. } => Some(1),
            NodeKind::Entrywise { .. } | NodeKind::Power { .. } => None,
            NodeKind::Compose { outer, inner } => outer.output_dim().or_else(|| {
                if outer.preserves_dim() {
                    inner.output_dim()
                } else {
                    None
                }
            }),
        }
    }

    /// Evaluates the tree bottom-up.
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        let out = match &self.kind {
            NodeKind::Linear { matrix } => matrix.matvec(z)?,
            NodeKind::AbsLinear { matrix } => abs_matvec(matrix, z)?,
            NodeKind::Translation { shift } => {
                check_len(self, shift.len(), z.len())?;
                z.iter().zip(shift).map(|(a, b)| a + b).collect()
            }
            NodeKind::Entrywise { activation } => z.iter().map(|&v| act_eval(activation, v)).collect(),
            NodeKind::VectorActivation { activation } => act_eval_vec(activation, z)?,
            NodeKind::Power { exponent } => {
                if let Some(v) = z.iter().find(|v| **v < 0.0) {
                    return Err(Error::DomainViolation(format!(
                        "{} applied to negative entry {v}",
                        self.label()
                    )));
                }
                z.iter().map(|v| v.powf(*exponent)).collect()
            }
            NodeKind::Compose { outer, inner } => return outer.apply(&inner.apply(z)?),
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainViolation(format!("{} produced a non-finite value", self.label())));
        }
        Ok(out)
    }

    /// Analytic Jacobian element (Clarke selections at kinks).
    pub fn jacobian(&self, z: &[f64]) -> Result<Matrix> {
        let n = z.len();
        if n == 0 {
            return Err(Error::Dimension("jacobian at an empty point".into()));
        }
        Ok(match &self.kind {
            NodeKind::Linear { matrix } => {
                check_len(self, matrix.cols(), n)?;
                matrix.clone()
            }
            NodeKind::AbsLinear { matrix } => {
                check_len(self, matrix.cols(), n)?;
                matrix.abs()
            }
            NodeKind::Translation { shift } => {
                check_len(self, shift.len(), n)?;
                Matrix::identity(n)
            }
            NodeKind::Entrywise { activation } => diag(z.iter().map(|&v| act_derivative(activation, v))),
            NodeKind::VectorActivation { activation } => {
                Matrix::new(1, n, act_gradient_vec(activation, z)?)?
            }
            NodeKind::Power { exponent } => {
                let d: Vec<f64> = z.iter().map(|&v| exponent * v.powf(exponent - 1.0)).collect();
                if d.iter().any(|v| !v.is_finite()) {
                    return Err(Error::DomainViolation(format!(
                        "{} is not differentiable at a nonpositive entry",
                        self.label()
                    )));
                }
                diag(d.into_iter())
            }
            NodeKind::Compose { outer, inner } => {
                let u = inner.apply(z)?;
                outer.jacobian(&u)?.matmul(&inner.jacobian(z)?)?
            }
        })
    }

    fn flatten<'a>(&'a self, out: &mut Vec<&'a OperatorNode>) {
        match &self.kind {
            NodeKind::Compose { outer, inner } => {
                inner.flatten(out);
                outer.flatten(out);
            }
            _ => out.push(self),
        }
    }

    /// Certificate for the tree on the open positive orthant.
    ///
    /// Stages are processed innermost first. Linear stages stay homogeneous;
    /// an activation after a homogeneous stage contributes its catalog degree;
    /// a strongly subhomogeneous activation or a power after a positive
    /// subhomogeneous stage multiplies degrees; nonnegative translations and
    /// nonnegative linear maps keep the degree.
    pub fn certified_degree(&self) -> Result<Certificate> {
        if let Some(c) = self.cert.get() {
            return Ok(*c);
        }
        let c = self.compute_certificate()?;
        let _ = self.cert.set(c);
        Ok(c)
    }

    /// Like [`certified_degree`](Self::certified_degree) but requires a degree.
    pub fn subhom_certificate(&self) -> Result<SubhomCertificate> {
        match self.certified_degree()? {
            Certificate::Subhomogeneous(c) => Ok(c),
            Certificate::Homogeneous { degree } => Err(Error::NoCertificate {
                node: self.label(),
                reason: format!("operator is {degree}-homogeneous; no subhomogeneity degree"),
            }),
        }
    }

    fn compute_certificate(&self) -> Result<Certificate> {
        let mut stages = Vec::new();
        self.flatten(&mut stages);
        let mut state = Stage::Homogeneous { h: 1.0, sign: Sign::Positive, nonneg_jac: true, diff: true };
        for (idx, node) in stages.iter().enumerate() {
            let refuse = |reason: String| Error::NoCertificate {
                node: format!("stage {idx} ({})", node.label()),
                reason,
            };
            state = match (&node.kind, state) {
                (NodeKind::Linear { matrix }, s) => linear_stage(matrix, false, s).map_err(refuse)?,
                (NodeKind::AbsLinear { matrix }, s) => linear_stage(matrix, true, s).map_err(refuse)?,
                (NodeKind::Translation { shift }, s) => {
                    if let Some(v) = shift.iter().find(|v| **v < 0.0) {
                        return Err(refuse(format!("translation has negative entry {v}")));
                    }
                    let all_pos = shift.iter().all(|v| *v > 0.0);
                    match s {
                        Stage::Homogeneous { sign: Sign::Signed, .. } => {
                            return Err(refuse(
                                "translation of a sign-indefinite linear map; use abs-linear or a nonnegative matrix"
                                    .into(),
                            ))
                        }
                        Stage::Homogeneous { h, sign, nonneg_jac, diff } => Stage::Subhomogeneous {
                            mu: h,
                            positive: sign == Sign::Positive || all_pos,
                            nonneg_jac,
                            diff,
                        },
                        Stage::Subhomogeneous { mu, positive, nonneg_jac, diff } => {
                            Stage::Subhomogeneous { mu, positive: positive || all_pos, nonneg_jac, diff }
                        }
                    }
                }
                (NodeKind::Entrywise { activation } | NodeKind::VectorActivation { activation }, s) => {
                    let c = certificate(activation).map_err(|e| refuse(e.to_string()))?;
                    activation_stage(&c, s).map_err(refuse)?
                }
                (NodeKind::Power { exponent }, s) => match s {
                    Stage::Homogeneous { h, sign: Sign::Positive, nonneg_jac, diff } => {
                        Stage::Subhomogeneous { mu: exponent * h, positive: true, nonneg_jac, diff }
                    }
                    Stage::Subhomogeneous { mu, positive: true, nonneg_jac, diff } => {
                        Stage::Subhomogeneous { mu: exponent * mu, positive: true, nonneg_jac, diff }
                    }
                    _ => return Err(refuse("power of a map that may vanish or change sign".into())),
                },
                (NodeKind::Compose { .. }, _) => unreachable!("flattened"),
            };
        }
        match state {
            Stage::Homogeneous { h, .. } => Ok(Certificate::Homogeneous { degree: h }),
            Stage::Subhomogeneous { positive: false, .. } => Err(Error::NoCertificate {
                node: self.label(),
                reason: "output is not guaranteed positive on the positive orthant".into(),
            }),
            Stage::Subhomogeneous { mu, nonneg_jac, diff, .. } => {
                Ok(Certificate::Subhomogeneous(SubhomCertificate {
                    mu,
                    domain: Domain::PositiveOrthantOpen,
                    differentiable: diff,
                    positive_jacobian: nonneg_jac && diff,
                }))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Sign {
    Signed,
    Nonneg,
    Positive,
}

#[derive(Debug, Clone, Copy)]
enum Stage {
    Homogeneous { h: f64, sign: Sign, nonneg_jac: bool, diff: bool },
    Subhomogeneous { mu: f64, positive: bool, nonneg_jac: bool, diff: bool },
}

fn rows_have_positive_entry(m: &Matrix, abs: bool) -> bool {
    (0..m.rows()).all(|i| m.row(i).iter().any(|&v| if abs { v != 0.0 } else { v > 0.0 }))
}

fn linear_stage(m: &Matrix, abs: bool, s: Stage) -> std::result::Result<Stage, String> {
    let nonneg = abs || m.is_nonnegative();
    let rows_pos = rows_have_positive_entry(m, abs);
    Ok(match s {
        Stage::Homogeneous { h, sign, nonneg_jac, diff } => {
            let sign = match (nonneg, sign) {
                (false, _) | (true, Sign::Signed) => Sign::Signed,
                (true, Sign::Positive) if rows_pos => Sign::Positive,
                (true, _) => Sign::Nonneg,
            };
            Stage::Homogeneous { h, sign, nonneg_jac: nonneg_jac && nonneg, diff }
        }
        Stage::Subhomogeneous { mu, positive, nonneg_jac, diff } => {
            if !nonneg {
                return Err("sign-indefinite linear map after a nonlinear stage".into());
            }
            Stage::Subhomogeneous { mu, positive: positive && rows_pos, nonneg_jac, diff }
        }
    })
}

fn activation_stage(c: &SubhomCertificate, s: Stage) -> std::result::Result<Stage, String> {
    match s {
        Stage::Homogeneous { h, sign, nonneg_jac, diff } => {
            let image = match sign {
                Sign::Signed => Domain::AllReals,
                Sign::Nonneg => Domain::PositiveOrthantClosed,
                Sign::Positive => Domain::PositiveOrthantOpen,
            };
            if !c.domain.contains(image) {
                return Err(format!(
                    "activation certified on {:?} but its input ranges over {:?}",
                    c.domain, image
                ));
            }
            Ok(Stage::Subhomogeneous {
                mu: h * c.mu,
                positive: true,
                nonneg_jac: nonneg_jac && c.positive_jacobian,
                diff: diff && c.differentiable,
            })
        }
        Stage::Subhomogeneous { mu, positive, nonneg_jac, diff } => {
            if !positive {
                return Err("outer activation needs a positive input".into());
            }
            Ok(Stage::Subhomogeneous {
                mu: mu * c.mu,
                positive: true,
                nonneg_jac: nonneg_jac && c.positive_jacobian,
                diff: diff && c.differentiable,
            })
        }
    }
}

fn check_len(node: &OperatorNode, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension(format!(
            "{} expects length {expected}, got {got}",
            node.label()
        )));
    }
    Ok(())
}

fn abs_matvec(m: &Matrix, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != m.cols() {
        return Err(Error::Dimension(format!(
            "{}x{} matrix times vector of length {}",
            m.rows(),
            m.cols(),
            z.len()
        )));
    }
    Ok((0..m.rows()).map(|i| m.row(i).iter().zip(z).map(|(a, b)| a.abs() * b).sum()).collect())
}

fn diag(d: impl ExactSizeIterator<Item = f64>) -> Matrix {
    let n = d.len();
    let mut m = Matrix::zeros(n, n);
    for (i, v) in d.enumerate() {
        m.set(i, i, v);
    }
    m
}

/// A map with an analytic Jacobian element, as consumed by the verifiers.
pub trait DifferentiableMap: Sync {
    fn eval(&self, z: &[f64]) -> Result<Vec<f64>>;
    fn jacobian(&self, z: &[f64]) -> Result<Matrix>;
}

impl DifferentiableMap for OperatorNode {
    fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.apply(z)
    }
    fn jacobian(&self, z: &[f64]) -> Result<Matrix> {
        OperatorNode::jacobian(self, z)
    }
}

/// The 1-homogeneous map `(x, y) ↦ [x²y/(x²+y²), 0]`: plainly 1-subhomogeneous
/// by Euler's identity, but not strongly so.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuotientMap;

impl DifferentiableMap for QuotientMap {
    fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        let [x, y] = pair(z)?;
        Ok(vec![x * x * y / (x * x + y * y), 0.0])
    }

    fn jacobian(&self, z: &[f64]) -> Result<Matrix> {
        let [x, y] = pair(z)?;
        let s = x * x + y * y;
        Matrix::new(2, 2, vec![2.0 * x * y.powi(3) / (s * s), x * x * (x * x - y * y) / (s * s), 0.0, 0.0])
    }
}

fn pair(z: &[f64]) -> Result<[f64; 2]> {
    match z {
        [x, y] if x * x + y * y > 0.0 => Ok([*x, *y]),
        [_, _] => Err(Error::DomainViolation("quotient map undefined at the origin".into())),
        _ => Err(Error::Dimension(format!("quotient map takes 2 entries, got {}", z.len()))),
    }
}

/// Which inequality to check: `|Mz| ≤ μF` or `|M||z| ≤ μF`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strength {
    Plain,
    Strong,
}

/// Where verifier samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SampleDomain {
    /// Log-uniform over `[1e-3, 1e3]` per coordinate.
    PositiveOrthant,
    /// Uniform over `[lo, hi]` per coordinate.
    Interval { lo: f64, hi: f64 },
}

impl SampleDomain {
    /// Default sampling region for a certificate domain.
    pub fn for_domain(d: Domain) -> Self {
        match d {
            Domain::AllReals => SampleDomain::Interval { lo: -20.0, hi: 20.0 },
            _ => SampleDomain::PositiveOrthant,
        }
    }

    fn draw(&self, s: &mut Sampler, dim: usize) -> Vec<f64> {
        (0..dim)
            .map(|_| match *self {
                SampleDomain::PositiveOrthant => s.log_uniform(1e-3, 1e3),
                SampleDomain::Interval { lo, hi } => s.uniform(lo, hi),
            })
            .collect()
    }

    fn strictly_positive(&self) -> bool {
        match *self {
            SampleDomain::PositiveOrthant => true,
            SampleDomain::Interval { lo, .. } => lo > 0.0,
        }
    }
}

/// Sampling plan: sample `i` uses stream `i` of `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub domain: SampleDomain,
    pub dim: usize,
    pub count: usize,
    pub seed: u64,
}

impl SampleSpec {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.count == 0 {
            return Err(Error::Parameter("sampling needs positive dim and count".into()));
        }
        if let SampleDomain::Interval { lo, hi } = self.domain {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::Parameter(format!("bad sampling interval [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.domain.draw(&mut Sampler::stream(self.seed, i as u64), self.dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub samples_tested: usize,
    /// Largest `(lhs − rhs) / (1 + |rhs|)` over samples and entries.
    pub max_violation: f64,
    pub worst_point: Vec<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Outcome of a single-point check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointCheck {
    /// `|Mz|` or `|M||z|`.
    pub lhs: Vec<f64>,
    /// `F(z)`.
    pub value: Vec<f64>,
    pub violation: f64,
    pub passed: bool,
}

fn subhom_lhs(j: &Matrix, z: &[f64], strength: Strength) -> Result<Vec<f64>> {
    Ok(match strength {
        Strength::Plain => j.matvec(z)?.into_iter().map(f64::abs).collect(),
        Strength::Strong => {
            let az: Vec<f64> = z.iter().map(|v| v.abs()).collect();
            j.abs().matvec(&az)?
        }
    })
}

fn violation(lhs: &[f64], rhs: &[f64]) -> f64 {
    lhs.iter()
        .zip(rhs)
        .map(|(l, r)| (l - r) / (1.0 + r.abs()))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Checks the subhomogeneity inequality at one point. Does not require `F(z) > 0`.
pub fn check_subhom_at<F: DifferentiableMap + ?Sized>(
    f: &F,
    z: &[f64],
    mu: f64,
    strength: Strength,
) -> Result<PointCheck> {
    let value = f.eval(z)?;
    let lhs = subhom_lhs(&f.jacobian(z)?, z, strength)?;
    let rhs: Vec<f64> = value.iter().map(|v| mu * v).collect();
    let v = violation(&lhs, &rhs);
    Ok(PointCheck { lhs, value, violation: v, passed: v <= VERIFY_TOLERANCE })
}

fn worst(results: Vec<(f64, Vec<f64>)>) -> (f64, Vec<f64>) {
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for (v, z) in results {
        if v > best.0 {
            best = (v, z);
        }
    }
    best
}

/// Samples `z` and checks `|M z| ≤ μ F(z)` (or its strong form) entrywise.
pub fn verify_subhom<F: DifferentiableMap + ?Sized>(
    f: &F,
    mu: f64,
    spec: &SampleSpec,
    strength: Strength,
) -> Result<VerificationReport> {
    spec.validate()?;
    let results = (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let z = spec.point(i);
            let value = f.eval(&z)?;
            if let Some(v) = value.iter().find(|v| **v <= 0.0) {
                return Err(Error::DomainViolation(format!(
                    "F(z) has nonpositive entry {v} at z = {z:?}"
                )));
            }
            let lhs = subhom_lhs(&f.jacobian(&z)?, &z, strength)?;
            let rhs: Vec<f64> = value.iter().map(|v| mu * v).collect();
            Ok((violation(&lhs, &rhs), z))
        })
        .collect::<Result<Vec<_>>>()?;
    let (max_violation, worst_point) = worst(results);
    Ok(VerificationReport {
        samples_tested: spec.count,
        max_violation,
        worst_point,
        tolerance: VERIFY_TOLERANCE,
        passed: max_violation <= VERIFY_TOLERANCE,
    })
}

/// Checks `F(λz) ≤ λ^μ F(z)` over sampled `z > 0` and every `λ` in the grid.
pub fn verify_scaling<F: DifferentiableMap + ?Sized>(
    f: &F,
    mu: f64,
    spec: &SampleSpec,
    lambdas: &[f64],
) -> Result<VerificationReport> {
    spec.validate()?;
    if lambdas.is_empty() {
        return Err(Error::Parameter("empty scaling grid".into()));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 1.0 && l.is_finite())) {
        return Err(Error::Parameter(format!("scaling factors must be >= 1, got {l}")));
    }
    if !spec.domain.strictly_positive() {
        return Err(Error::Parameter("scaling check samples must be strictly positive".into()));
    }
    let results = (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let z = spec.point(i);
            let fz = f.eval(&z)?;
            let mut worst_here = f64::NEG_INFINITY;
            for &l in lambdas {
                let zl: Vec<f64> = z.iter().map(|v| l * v).collect();
                let lhs = f.eval(&zl)?;
                let rhs: Vec<f64> = fz.iter().map(|v| l.powf(mu) * v).collect();
                worst_here = worst_here.max(violation(&lhs, &rhs));
            }
            Ok((worst_here, z))
        })
        .collect::<Result<Vec<_>>>()?;
    let (max_violation, worst_point) = worst(results);
    Ok(VerificationReport {
        samples_tested: spec.count,
        max_violation,
        worst_point,
        tolerance: VERIFY_TOLERANCE,
        passed: max_violation <= VERIFY_TOLERANCE,
    })
}
