//! SubDEQ layers `z = norm_φ(σ1(σ2(W z) + f(x)))` with `f(x) = a(Ux + b)`,
//! equilibrium solves, implicit gradients and a toy classifier trainer.

use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

use crate::activations::{act_derivative, act_eval, Activation, SubhomCertificate};
use crate::error::{Error, Result};
use crate::metric::{normalize, normalize_columns, normalize_vjp, NormalizationSpec};
use crate::numerics::{pnorm, Matrix, PNorm, Sampler};
use crate::operators::OperatorNode;
use crate::solver::{solve, FixedPointReport, SolverConfig};

/// One-layer injection `f(x) = a(Ux + b)`; `a` must be nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub u: Matrix,
    pub b: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeqLayerConfig {
    pub w: Matrix,
    pub injection: Injection,
    /// Outer activation; `None` is the identity.
    #[serde(default)]
    pub sigma1: Option<Activation>,
    /// Inner activation; `None` is the identity.
    #[serde(default)]
    pub sigma2: Option<Activation>,
    /// Constant added to the active `tanh`, turning it into `shifted-tanh`.
    #[serde(default)]
    pub shift: f64,
    #[serde(default)]
    pub normalization: NormalizationSpec,
    /// Use `|W|` in place of `W`.
    #[serde(default)]
    pub abs_weights: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Position {
    /// `F = σ2(Wz) + f(x)`.
    Inner,
    /// `F = σ1(Wz + f(x))`.
    Outer,
}

/// Ready-made layer families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerPreset {
    /// `norm(tanh(Wz) + f(x) + 1.603)` with unconstrained `W`.
    ShiftedTanh,
    /// `norm(tanh(|W|z + f(x)) + 1.2)`.
    PositiveShiftedTanh,
    /// `norm(tanh(|W|z + f(x))^0.99)`.
    PositivePowerTanh,
}

/// Random layer of a preset family, weights uniform in `±1/sqrt(fan_in)`,
/// ReLU injection.
pub fn preset_layer(preset: LayerPreset, n: usize, d: usize, p: PNorm, seed: u64) -> Result<DeqLayerConfig> {
    if n == 0 || d == 0 {
        return Err(Error::Dimension("layer needs positive n and d".into()));
    }
    let uniform = |rows: usize, cols: usize, stream: u64, fan_in: usize| {
        let mut s = Sampler::stream(seed, stream);
        let scale = 1.0 / (fan_in as f64).sqrt();
        Matrix::from_fn(rows, cols, |_, _| s.uniform(-scale, scale))
    };
    let w = uniform(n, n, 0, n);
    let u = uniform(n, d, 1, d);
    let b = uniform(n, 1, 2, d).into_vec();
    let injection = Injection { u, b, activation: Activation::Relu };
    let normalization = NormalizationSpec { p, ..Default::default() };
    let (sigma1, sigma2, shift, abs_weights) = match preset {
        LayerPreset::ShiftedTanh => (None, Some(Activation::Tanh), 1.603, false),
        LayerPreset::PositiveShiftedTanh => (Some(Activation::Tanh), None, 1.2, true),
        LayerPreset::PositivePowerTanh => (
            Some(Activation::Power { base: Box::new(Activation::Tanh), exponent: 0.99 }),
            None,
            0.0,
            true,
        ),
    };
    Ok(DeqLayerConfig { w, injection, sigma1, sigma2, shift, normalization, abs_weights })
}

/// Uniform `[0, 1)` input vector.
pub fn random_input(d: usize, seed: u64) -> Vec<f64> {
    let mut s = Sampler::new(seed);
    (0..d).map(|_| s.uniform01()).collect()
}

/// A certified layer.
#[derive(Debug, Clone)]
pub struct DeqLayer {
    cfg: DeqLayerConfig,
    activation: Activation,
    position: Position,
    weights: Matrix,
    certificate: SubhomCertificate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBundle {
    pub dw: Matrix,
    pub du: Matrix,
    pub db: Vec<f64>,
    pub dx: Vec<f64>,
}

fn uncertified(detail: String, required: &str) -> Error {
    Error::UncertifiedLayer { detail, required: required.to_string() }
}

/// Validates the config, certifies the assembled operator and checks the
/// uniqueness threshold (`μ < 1/2`, or `μ < 1` with a nonnegative Jacobian).
pub fn build_layer(cfg: &DeqLayerConfig) -> Result<DeqLayer> {
    let n = cfg.w.rows();
    if cfg.w.cols() != n {
        return Err(Error::Dimension(format!("W must be square, got {}x{}", n, cfg.w.cols())));
    }
    let inj = &cfg.injection;
    if inj.u.rows() != n || inj.b.len() != n {
        return Err(Error::Dimension(format!(
            "injection shapes U {}x{}, b {} do not match n = {n}",
            inj.u.rows(),
            inj.u.cols(),
            inj.b.len()
        )));
    }
    if inj.b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("injection bias must be finite".into()));
    }
    inj.activation.validate()?;
    if inj.activation.is_vector() || !inj.activation.is_nonnegative_valued() {
        return Err(uncertified(
            format!("injection activation {} can produce negative values", inj.activation),
            "a nonnegative injection",
        ));
    }
    cfg.normalization.p.validate()?;
    let (base, position) = match (&cfg.sigma1, &cfg.sigma2) {
        (Some(a), None) => (a.clone(), Position::Outer),
        (None, Some(a)) => (a.clone(), Position::Inner),
        _ => {
            return Err(Error::Parameter(
                "exactly one of sigma1 and sigma2 must be a non-identity activation".into(),
            ))
        }
    };
    if !(cfg.shift >= 0.0 && cfg.shift.is_finite()) {
        return Err(Error::Parameter(format!("shift must be a nonnegative real, got {}", cfg.shift)));
    }
    let activation = match (&base, cfg.shift) {
        (_, 0.0) => base.clone(),
        (Activation::Tanh, s) => Activation::ShiftedTanh { alpha: s },
        (other, _) => {
            return Err(Error::Parameter(format!("a shift is only defined for tanh, not {other}")));
        }
    };
    activation.validate()?;
    if activation.is_vector() {
        return Err(Error::Parameter("layer activations must act entrywise".into()));
    }
    let weights = if cfg.abs_weights { cfg.w.abs() } else { cfg.w.clone() };
    let layer = DeqLayer { cfg: cfg.clone(), activation, position, weights, certificate: dummy_cert() };
    let tree = layer.template_operator()?;
    let certificate = tree
        .subhom_certificate()
        .map_err(|e| uncertified(e.to_string(), "a certifiable composition"))?;
    let ok = certificate.mu < 0.5 || (certificate.positive_jacobian && certificate.mu < 1.0);
    if !ok {
        let required = if certificate.positive_jacobian {
            "mu < 1 with a nonnegative Jacobian"
        } else {
            "mu < 1/2 (contraction bound 2mu < 1)"
        };
        return Err(uncertified(
            format!("degree mu = {} gives contraction bound {}", certificate.mu, certificate.contraction_bound()),
            required,
        ));
    }
    Ok(DeqLayer { certificate, ..layer })
}

fn dummy_cert() -> SubhomCertificate {
    SubhomCertificate {
        mu: f64::NAN,
        domain: crate::activations::Domain::PositiveOrthantOpen,
        differentiable: false,
        positive_jacobian: false,
    }
}

impl DeqLayer {
    pub fn config(&self) -> &DeqLayerConfig {
        &self.cfg
    }

    pub fn certificate(&self) -> SubhomCertificate {
        self.certificate
    }

    /// Thompson contraction factor of the normalized map.
    pub fn contraction_bound(&self) -> f64 {
        self.certificate.contraction_bound()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.cfg.injection.u.cols()
    }

    pub fn position(&self) -> Position {
        self.position
    }

    /// The active activation after folding in the shift.
    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    /// Whether the certificate depends on the signs of `W`.
    pub fn certificate_depends_on_weights(&self) -> bool {
        self.position == Position::Outer && !self.cfg.abs_weights
    }

    fn weight_node(&self) -> OperatorNode {
        if self.cfg.abs_weights {
            OperatorNode::abs_linear(self.cfg.w.clone())
        } else {
            OperatorNode::linear(self.cfg.w.clone())
        }
    }

    fn tree_with(&self, f: Vec<f64>) -> Result<OperatorNode> {
        let act = OperatorNode::entrywise(self.activation.clone())?;
        let t = OperatorNode::translation(f)?;
        match self.position {
            Position::Inner => OperatorNode::chain(vec![t, act, self.weight_node()]),
            Position::Outer => OperatorNode::chain(vec![act, t, self.weight_node()]),
        }
    }

    /// Input-independent operator used for certification (zero injection).
    pub fn template_operator(&self) -> Result<OperatorNode> {
        self.tree_with(vec![0.0; self.hidden_dim()])
    }

    /// Unnormalized operator `F(·; x)`.
    pub fn operator(&self, x: &[f64]) -> Result<OperatorNode> {
        self.tree_with(self.injection(x)?)
    }

    pub fn injection(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.pre_injection(x)?.iter().map(|&v| act_eval(&self.cfg.injection.activation, v)).collect())
    }

    fn pre_injection(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("input must be finite".into()));
        }
        let ux = self.cfg.injection.u.matvec(x)?;
        Ok(ux.iter().zip(&self.cfg.injection.b).map(|(a, b)| a + b).collect())
    }

    fn unnormalized(&self, z: &[f64], f: &[f64]) -> Result<Vec<f64>> {
        let u = self.weights.matvec(z)?;
        let a = &self.activation;
        Ok(match self.position {
            Position::Inner => u.iter().zip(f).map(|(ui, fi)| act_eval(a, *ui) + fi).collect(),
            Position::Outer => u.iter().zip(f).map(|(ui, fi)| act_eval(a, ui + fi)).collect(),
        })
    }

    /// `G(z; x) = norm(F(z; x))` with the injection precomputed.
    pub fn map_with_injection<'a>(&'a self, f: &'a [f64]) -> impl Fn(&[f64]) -> Result<Vec<f64>> + Sync + 'a {
        move |z: &[f64]| normalize(&self.unnormalized(z, f)?, self.cfg.normalization.p)
    }

    /// Equilibrium from the all-ones start.
    pub fn forward(&self, x: &[f64], cfg: &SolverConfig) -> Result<FixedPointReport> {
        self.forward_from(x, &vec![1.0; self.hidden_dim()], cfg)
    }

    pub fn forward_from(&self, x: &[f64], z0: &[f64], cfg: &SolverConfig) -> Result<FixedPointReport> {
        if z0.len() != self.hidden_dim() {
            return Err(Error::Dimension(format!("start has length {}, layer width {}", z0.len(), self.hidden_dim())));
        }
        let f = self.injection(x)?;
        solve(self.map_with_injection(&f), z0, cfg)
    }

    /// Columns of `x` (d×B) are samples; the state is n×B with every column
    /// normalized. The returned report's `z_star` is the row-major state.
    pub fn forward_batch(&self, x: &Matrix, cfg: &SolverConfig) -> Result<(Matrix, FixedPointReport)> {
        if x.rows() != self.input_dim() {
            return Err(Error::Dimension(format!("batch rows {} != input dim {}", x.rows(), self.input_dim())));
        }
        let (n, bsz) = (self.hidden_dim(), x.cols());
        let mut f = self.cfg.injection.u.matmul(x)?;
        for i in 0..n {
            for j in 0..bsz {
                let v = f.get(i, j) + self.cfg.injection.b[i];
                f.set(i, j, act_eval(&self.cfg.injection.activation, v));
            }
        }
        let p = self.cfg.normalization.p;
        let g = |z: &[f64]| -> Result<Vec<f64>> {
            let zm = Matrix::new(n, bsz, z.to_vec())?;
            let mut u = self.weights.matmul(&zm)?;
            for i in 0..n {
                for j in 0..bsz {
                    let v = match self.position {
                        Position::Inner => act_eval(&self.activation, u.get(i, j)) + f.get(i, j),
                        Position::Outer => act_eval(&self.activation, u.get(i, j) + f.get(i, j)),
                    };
                    u.set(i, j, v);
                }
            }
            Ok(normalize_columns(&u, p)?.into_vec())
        };
        let report = solve(g, &vec![1.0; n * bsz], cfg)?;
        let z = Matrix::new(n, bsz, report.z_star.clone())?;
        Ok((z, report))
    }

    /// Implicit gradient of `⟨upstream, z*⟩` with respect to `W`, `U`, `b`, `x`.
    ///
    /// Solves `(I − J)ᵀ w = upstream` with a Neumann series, `J = ∂G/∂z` at
    /// `z*`, giving up after `10 / (1 − bound)` terms.
    pub fn ift_gradient(&self, x: &[f64], z_star: &[f64], upstream: &[f64]) -> Result<GradientBundle> {
        if !self.certificate.differentiable {
            return Err(Error::Parameter(format!(
                "implicit gradients need a differentiable layer; {} is not",
                self.activation
            )));
        }
        let n = self.hidden_dim();
        if z_star.len() != n || upstream.len() != n {
            return Err(Error::Dimension("z_star and upstream must have the layer width".into()));
        }
        let d = self.input_dim();
        let v = self.pre_injection(x)?;
        let inj = &self.cfg.injection.activation;
        let f: Vec<f64> = v.iter().map(|&t| act_eval(inj, t)).collect();
        let da: Vec<f64> = v.iter().map(|&t| act_derivative(inj, t)).collect();
        let u = self.weights.matvec(z_star)?;
        let (y, d1, d2): (Vec<f64>, Vec<f64>, Vec<f64>) = match self.position {
            Position::Inner => (
                u.iter().zip(&f).map(|(ui, fi)| act_eval(&self.activation, *ui) + fi).collect(),
                vec![1.0; n],
                u.iter().map(|&ui| act_derivative(&self.activation, ui)).collect(),
            ),
            Position::Outer => {
                let pre: Vec<f64> = u.iter().zip(&f).map(|(a, b)| a + b).collect();
                (
                    pre.iter().map(|&t| act_eval(&self.activation, t)).collect(),
                    pre.iter().map(|&t| act_derivative(&self.activation, t)).collect(),
                    vec![1.0; n],
                )
            }
        };
        let p = self.cfg.normalization.p;
        let dd: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| a * b).collect();
        let jt = |w: &[f64]| -> Result<Vec<f64>> {
            let g = normalize_vjp(&y, p, w)?;
            let s: Vec<f64> = g.iter().zip(&dd).map(|(a, b)| a * b).collect();
            self.weights.tmatvec(&s)
        };
        let w = if upstream.iter().all(|v| *v == 0.0) {
            vec![0.0; n]
        } else {
            let limit = (10.0 / (1.0 - self.contraction_bound())).ceil() as usize;
            let mut w = upstream.to_vec();
            let mut term = upstream.to_vec();
            let mut done = false;
            for _ in 0..limit {
                term = jt(&term)?;
                for (a, b) in w.iter_mut().zip(&term) {
                    *a += b;
                }
                if pnorm(&term, PNorm::Infinity)? <= 1e-15 * pnorm(&w, PNorm::Infinity)? {
                    done = true;
                    break;
                }
            }
            if !done {
                return Err(Error::IllConditioned(format!("Neumann series did not converge in {limit} terms")));
            }
            w
        };
        let g = normalize_vjp(&y, p, &w)?;
        let gd: Vec<f64> = g.iter().zip(&dd).map(|(a, b)| a * b).collect();
        let mut dw = Matrix::from_fn(n, n, |i, j| gd[i] * z_star[j]);
        if self.cfg.abs_weights {
            dw = Matrix::from_fn(n, n, |i, j| dw.get(i, j) * self.cfg.w.get(i, j).signum());
        }
        let q: Vec<f64> = (0..n).map(|i| g[i] * d1[i] * da[i]).collect();
        let du = Matrix::from_fn(n, d, |i, j| q[i] * x[j]);
        let dx = self.cfg.injection.u.tmatvec(&q)?;
        Ok(GradientBundle { dw, du, db: q, dx })
    }
}

/// Labeled 2-D points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

/// `n` points, alternating between Gaussians at `(-1.5, -1.5)` and `(1.5, 1.5)`
/// with standard deviation 0.5.
pub fn two_gaussians(n: usize, seed: u64) -> Dataset {
    let mut s = Sampler::new(seed);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let c = if label == 0 { -1.5 } else { 1.5 };
        points.push([c + 0.5 * s.normal(), c + 0.5 * s.normal()]);
        labels.push(label);
    }
    Dataset { points, labels }
}

/// Reads `x1,x2,label` rows with a header.
pub fn read_dataset<R: Read>(r: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    let want = ["x1", "x2", "label"];
    if headers.len() != 3 || headers.iter().zip(want).any(|(h, w)| h != w) {
        return Err(Error::Parse { line: 1, message: format!("expected header x1,x2,label, got {headers:?}") });
    }
    let mut ds = Dataset { points: Vec::new(), labels: Vec::new() };
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse { line, message: format!("bad number in column {}", k + 1) })
        };
        let label: usize = rec
            .get(2)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse { line, message: "label must be a nonnegative integer".into() })?;
        ds.points.push([num(0)?, num(1)?]);
        ds.labels.push(label);
    }
    if ds.is_empty() {
        return Err(Error::InsufficientData("dataset has no rows".into()));
    }
    Ok(ds)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path)?)
}

/// Plain gradient descent on the full dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Loss before each update.
    pub losses: Vec<f64>,
    /// Loss after the last update.
    pub final_loss: f64,
    pub layer: DeqLayerConfig,
    pub readout: Matrix,
    pub readout_bias: Vec<f64>,
}

struct Readout {
    v: Matrix,
    c: Vec<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

struct Gradients {
    loss: f64,
    dw: Matrix,
    du: Matrix,
    db: Vec<f64>,
    dv: Matrix,
    dc: Vec<f64>,
}

fn loss_and_grad(layer: &DeqLayer, head: &Readout, data: &Dataset, solver: &SolverConfig) -> Result<Gradients> {
    let n = layer.hidden_dim();
    let k = head.c.len();
    let m = data.len() as f64;
    let mut g = Gradients {
        loss: 0.0,
        dw: Matrix::zeros(n, n),
        du: Matrix::zeros(n, 2),
        db: vec![0.0; n],
        dv: Matrix::zeros(k, n),
        dc: vec![0.0; k],
    };
    for (x, &label) in data.points.iter().zip(&data.labels) {
        let rep = layer.forward(x, solver)?;
        if !rep.converged {
            return Err(Error::Divergence { iteration: rep.iterations, detail: "forward pass did not converge".into() });
        }
        let z = &rep.z_star;
        let logits: Vec<f64> = head.v.matvec(z)?.iter().zip(&head.c).map(|(a, b)| a + b).collect();
        let prob = softmax(&logits);
        g.loss -= prob[label].max(1e-300).ln() / m;
        let dl: Vec<f64> = (0..k).map(|c| (prob[c] - if c == label { 1.0 } else { 0.0 }) / m).collect();
        for (c, &d) in dl.iter().enumerate() {
            g.dc[c] += d;
            for (j, &zj) in z.iter().enumerate().take(n) {
                g.dv.set(c, j, g.dv.get(c, j) + d * zj);
            }
        }
        let upstream = head.v.tmatvec(&dl)?;
        let b = layer.ift_gradient(x, z, &upstream)?;
        g.dw = add(&g.dw, &b.dw)?;
        g.du = add(&g.du, &b.du)?;
        for (a, v) in g.db.iter_mut().zip(&b.db) {
            *a += v;
        }
    }
    Ok(g)
}

fn add(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.sub(&b.scale(-1.0))
}

fn step(a: &Matrix, g: &Matrix, lr: f64) -> Result<Matrix> {
    a.sub(&g.scale(lr))
}

/// Trains the layer and a linear softmax readout with full-batch gradient
/// descent on mean cross-entropy. The readout is initialized from `seed`.
pub fn train_toy(
    data: &Dataset,
    cfg: &DeqLayerConfig,
    opt: &Sgd,
    solver: &SolverConfig,
    seed: u64,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::InsufficientData("empty dataset".into()));
    }
    if !(opt.lr >= 0.0 && opt.lr.is_finite()) {
        return Err(Error::Parameter(format!("learning rate must be finite and >= 0, got {}", opt.lr)));
    }
    let mut layer = build_layer(cfg)?;
    if layer.input_dim() != 2 {
        return Err(Error::Dimension(format!("toy layer must take 2-D inputs, got {}", layer.input_dim())));
    }
    let n = layer.hidden_dim();
    let k = data.classes().max(2);
    let mut s = Sampler::stream(seed, 7);
    let scale = 1.0 / (n as f64).sqrt();
    let mut head = Readout { v: Matrix::from_fn(k, n, |_, _| s.uniform(-scale, scale)), c: vec![0.0; k] };
    let mut losses = Vec::with_capacity(opt.steps);
    for t in 0..opt.steps {
        let g = loss_and_grad(&layer, &head, data, solver)
            .map_err(|e| Error::TrainingFailure { step: t, detail: e.to_string() })?;
        if !g.loss.is_finite() {
            return Err(Error::TrainingFailure { step: t, detail: format!("loss is {}", g.loss) });
        }
        losses.push(g.loss);
        let mut next = layer.config().clone();
        next.w = step(&next.w, &g.dw, opt.lr)?;
        next.injection.u = step(&next.injection.u, &g.du, opt.lr)?;
        for (b, d) in next.injection.b.iter_mut().zip(&g.db) {
            *b -= opt.lr * d;
        }
        head.v = step(&head.v, &g.dv, opt.lr)?;
        for (c, d) in head.c.iter_mut().zip(&g.dc) {
            *c -= opt.lr * d;
        }
        layer = if layer.certificate_depends_on_weights() {
            build_layer(&next).map_err(|e| Error::TrainingFailure { step: t, detail: e.to_string() })?
        } else {
            DeqLayer { cfg: next, weights: Matrix::zeros(1, 1), ..layer }.rebuilt()
        };
    }
    let final_loss = loss_and_grad(&layer, &head, data, solver)
        .map_err(|e| Error::TrainingFailure { step: opt.steps, detail: e.to_string() })?
        .loss;
    if !final_loss.is_finite() {
        return Err(Error::TrainingFailure { step: opt.steps, detail: format!("loss is {final_loss}") });
    }
    Ok(TrainReport { losses, final_loss, layer: layer.cfg, readout: head.v, readout_bias: head.c })
}

impl DeqLayer {
    /// Refreshes the cached effective weights after a config update that keeps
    /// the certificate.
    fn rebuilt(self) -> Self {
        let weights = if self.cfg.abs_weights { self.cfg.w.abs() } else { self.cfg.w.clone() };
        DeqLayer { weights, ..self }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(preset: LayerPreset, n: usize, d: usize, p: PNorm) -> DeqLayer {
        build_layer(&preset_layer(preset, n, d, p, 42).unwrap()).unwrap()
    }

    #[test]
    fn presets_certify() {
        let a = layer(LayerPreset::ShiftedTanh, 6, 3, PNorm::Infinity);
        assert!(a.certificate().mu < 0.5 && !a.certificate().positive_jacobian);
        let b = layer(LayerPreset::PositivePowerTanh, 6, 3, PNorm::Infinity);
        assert!((b.certificate().mu - 0.99).abs() < 1e-15 && b.certificate().positive_jacobian);
        let c = layer(LayerPreset::PositiveShiftedTanh, 6, 3, PNorm::Infinity);
        assert!(c.certificate().mu < 1.0 && c.certificate().positive_jacobian);
    }

    #[test]
    fn shift_1_2_with_general_weights_is_rejected() {
        let mut cfg = preset_layer(LayerPreset::ShiftedTanh, 5, 2, PNorm::Infinity, 1).unwrap();
        cfg.shift = 1.2;
        match build_layer(&cfg) {
            Err(Error::UncertifiedLayer { detail, required }) => {
                assert!(detail.contains("mu = 0.99"), "{detail}");
                assert!(required.contains("1/2"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_invariants() {
        let base = preset_layer(LayerPreset::ShiftedTanh, 4, 2, PNorm::Infinity, 1).unwrap();
        let mut both = base.clone();
        both.sigma1 = Some(Activation::Tanh);
        assert!(matches!(build_layer(&both), Err(Error::Parameter(_))));
        let mut neg = base.clone();
        neg.injection.activation = Activation::Tanh;
        assert!(matches!(build_layer(&neg), Err(Error::UncertifiedLayer { .. })));
        let mut shifted = base.clone();
        shifted.sigma2 = Some(Activation::Sigmoid);
        assert!(matches!(build_layer(&shifted), Err(Error::Parameter(_))));
        let mut outer_signed = base;
        outer_signed.sigma2 = None;
        outer_signed.sigma1 = Some(Activation::Tanh);
        assert!(matches!(build_layer(&outer_signed), Err(Error::UncertifiedLayer { .. })));
    }

    #[test]
    fn direct_evaluation_matches_operator_tree() {
        for preset in [LayerPreset::ShiftedTanh, LayerPreset::PositiveShiftedTanh, LayerPreset::PositivePowerTanh] {
            let l = layer(preset, 5, 3, PNorm::Finite(2.0));
            let x = random_input(3, 5);
            let f = l.injection(&x).unwrap();
            let z = [0.3, 0.9, 0.1, 0.5, 0.7];
            let tree = l.operator(&x).unwrap().apply(&z).unwrap();
            let direct = l.unnormalized(&z, &f).unwrap();
            for (a, b) in tree.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_weights_give_constant_equilibrium() {
        let mut cfg = preset_layer(LayerPreset::ShiftedTanh, 4, 2, PNorm::Infinity, 3).unwrap();
        cfg.w = Matrix::zeros(4, 4);
        cfg.injection.b = vec![0.0; 4];
        let l = build_layer(&cfg).unwrap();
        let r = l.forward(&[0.0, 0.0], &SolverConfig::default()).unwrap();
        assert!(r.converged && r.iterations <= 2);
        assert!(r.z_star.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn zero_upstream_gives_zero_bundle() {
        let l = layer(LayerPreset::ShiftedTanh, 4, 3, PNorm::Infinity);
        let x = random_input(3, 1);
        let r = l.forward(&x, &SolverConfig::with_tol(1e-10)).unwrap();
        let g = l.ift_gradient(&x, &r.z_star, &[0.0; 4]).unwrap();
        assert!(g.dw.as_slice().iter().chain(g.du.as_slice()).chain(&g.db).chain(&g.dx).all(|v| *v == 0.0));
    }

    #[test]
    fn nonsmooth_layers_refuse_gradients() {
        let mut cfg = preset_layer(LayerPreset::PositiveShiftedTanh, 4, 2, PNorm::Infinity, 3).unwrap();
        cfg.shift = 0.0;
        cfg.sigma1 = Some(Activation::HardTanh { alpha1: 0.5, alpha2: 2.0 });
        let l = build_layer(&cfg);
        // hardtanh has mu = 1 and no positive-Jacobian flag, so it cannot pass the threshold
        assert!(matches!(l, Err(Error::UncertifiedLayer { .. })));
    }

    #[test]
    fn batch_columns_match_single_solves() {
        let l = layer(LayerPreset::ShiftedTanh, 6, 3, PNorm::Finite(10.0));
        let xs: Vec<Vec<f64>> = (0..4).map(|i| random_input(3, 100 + i)).collect();
        let xm = Matrix::from_columns(&xs).unwrap();
        let cfg = SolverConfig::with_tol(1e-12);
        let (z, rep) = l.forward_batch(&xm, &cfg).unwrap();
        assert!(rep.converged);
        for (j, x) in xs.iter().enumerate() {
            let single = l.forward(x, &cfg).unwrap().z_star;
            for (a, b) in z.column(j).iter().zip(&single) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dataset_csv() {
        let ds = read_dataset("x1,x2,label\n0.5,1,0\n-2,3e-1,1\n".as_bytes()).unwrap();
        assert_eq!(ds.points, vec![[0.5, 1.0], [-2.0, 0.3]]);
        assert_eq!(ds.labels, vec![0, 1]);
        assert!(matches!(read_dataset("a,b,c\n1,2,0\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(read_dataset("x1,x2,label\n1,2,0\n1,x,0\n".as_bytes()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let ds = two_gaussians(20, 1);
        let cfg = preset_layer(LayerPreset::ShiftedTanh, 4, 2, PNorm::Infinity, 2).unwrap();
        let r = train_toy(&ds, &cfg, &Sgd { lr: 0.0, steps: 3 }, &SolverConfig::with_tol(1e-10), 5).unwrap();
        assert!(r.losses.iter().all(|l| *l == r.losses[0]));
        assert_eq!(r.final_loss, r.losses[0]);
    }

    #[test]
    fn layer_config_json_roundtrip() {
        let cfg = preset_layer(LayerPreset::PositivePowerTanh, 3, 2, PNorm::Finite(10.0), 9).unwrap();
        let s = serde_json::to_string(&cfg).unwrap();
        assert!(s.contains("tanh^0.99"));
        let back: DeqLayerConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
    }
}
