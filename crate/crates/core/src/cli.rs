//! Command-line experiment runner.
//!
//! Every command reads an optional JSON config (`--config`), lets `--seed`
//! override the config seed, and writes a schema-versioned JSON report plus
//! CSV tables into `--out`. Exit codes: 0 when every check passes, 1 when a
//! mathematical check fails, 2 for usage or configuration errors.

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::activations::{certificate, table_catalog, Activation};
use crate::deq::{
    build_layer, load_dataset, preset_layer, random_input, train_toy, two_gaussians, DeqLayerConfig, LayerPreset, Sgd,
};
use crate::error::{Error, Result};
use crate::graph::{
    erdos_renyi, load_edge_list, load_matrix_csv, normalized_adjacency, propagate, random_injection, write_matrix_csv,
    AdjacencyMode, Graph, GraphPropagationConfig, Propagation, Variant,
};
use crate::metric::{contraction_probe, ContractionProbeReport, ProbeSpec};
use crate::numerics::{solve_dense, sub_seed, Matrix, PNorm, Sampler};
use crate::operators::{
    check_subhom_at, verify_scaling, verify_subhom, DifferentiableMap, OperatorNode, PointCheck, QuotientMap,
    SampleDomain, SampleSpec, Strength, VerificationReport,
};
use crate::solver::{rate_estimate, uniqueness_probe, write_trace_csv, Method, SolverConfig, UniquenessReport};

/// Version of every JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "subdeq", version, about = "Subhomogeneous deep equilibrium experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Verify subhomogeneity certificates by sampling.
    Certify(CommonArgs),
    /// Residual traces of forward passes for several p-norms.
    Converge(CommonArgs),
    /// Empirical Thompson contraction ratios.
    Contract(CommonArgs),
    /// Multi-start uniqueness and rate check.
    Unique(CommonArgs),
    /// Implicit gradients against central finite differences.
    Gradcheck(CommonArgs),
    /// Toy two-class training run.
    Train(CommonArgs),
    /// Graph propagation.
    Graph(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON config file; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "subdeq-out")]
    pub out: PathBuf,
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                2
            } else {
                0
            }
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let (name, outcome) = match &cli.command {
        Command::Certify(a) => ("certify", dispatch(a, cmd_certify)),
        Command::Converge(a) => ("converge", dispatch(a, cmd_converge)),
        Command::Contract(a) => ("contract", dispatch(a, cmd_contract)),
        Command::Unique(a) => ("unique", dispatch(a, cmd_unique)),
        Command::Gradcheck(a) => ("gradcheck", dispatch(a, cmd_gradcheck)),
        Command::Train(a) => ("train", dispatch(a, cmd_train)),
        Command::Graph(a) => ("graph", dispatch(a, cmd_graph)),
    };
    match outcome {
        Ok(true) => {
            println!("{name}: pass");
            0
        }
        Ok(false) => {
            println!("{name}: FAIL");
            1
        }
        Err(e) => {
            eprintln!("{name}: error: {e}");
            exit_code(&e)
        }
    }
}

/// 2 for configuration problems, 1 for failed mathematical checks.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_)
        | Error::Parse { .. }
        | Error::Parameter(_)
        | Error::Dimension(_)
        | Error::Range(_)
        | Error::InsufficientData(_) => 2,
        _ => 1,
    }
}

fn is_check_failure(e: &Error) -> bool {
    exit_code(e) == 1
}

/// Seed plus command-specific fields.
trait Seeded {
    fn seed_mut(&mut self) -> &mut u64;
}

fn dispatch<C, F>(args: &CommonArgs, f: F) -> Result<bool>
where
    C: DeserializeOwned + Default + Seeded,
    F: FnOnce(&C, &Path) -> Result<bool>,
{
    let mut cfg: C = match &args.config {
        Some(p) => serde_json::from_reader(std::io::BufReader::new(File::open(p)?))?,
        None => C::default(),
    };
    if let Some(s) = args.seed {
        *cfg.seed_mut() = s;
    }
    std::fs::create_dir_all(&args.out)?;
    f(&cfg, &args.out)
}

#[derive(Serialize)]
struct Report<'a, C: Serialize, R: Serialize> {
    schema_version: u32,
    command: &'a str,
    seed: u64,
    config: &'a C,
    passed: bool,
    result: R,
}

fn write_report<C: Serialize, R: Serialize>(
    out: &Path,
    command: &str,
    seed: u64,
    config: &C,
    passed: bool,
    result: R,
) -> Result<()> {
    let report = Report { schema_version: SCHEMA_VERSION, command, seed, config, passed, result };
    let mut w = BufWriter::new(File::create(out.join(format!("{command}.json")))?);
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn csv_writer(out: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(out.join(name))?)))
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

// ---------------------------------------------------------------- certify

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CertifyTarget {
    Activation { activation: Activation },
    Operator { operator: OperatorNode },
    /// `[x²y/(x²+y²), 0]`, homogeneous of degree 1 but not strongly subhomogeneous.
    QuotientMap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyItem {
    pub name: String,
    pub target: CertifyTarget,
    /// Degree to test; defaults to the certified degree (1 for the quotient map).
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default = "plain")]
    pub strength: Strength,
    /// Sampling region; defaults to the certificate domain.
    #[serde(default)]
    pub domain: Option<SampleDomain>,
    /// Check these points instead of sampling.
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
}

fn plain() -> Strength {
    Strength::Plain
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyConfig {
    pub seed: u64,
    pub samples: usize,
    /// Dimension used for activation targets.
    pub dim: usize,
    pub scaling_lambdas: Vec<f64>,
    /// Items to check; the activation catalog when omitted.
    pub items: Option<Vec<CertifyItem>>,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig { seed: 0, samples: 10_000, dim: 4, scaling_lambdas: vec![1.5, 2.0, 10.0, 100.0], items: None }
    }
}

impl Seeded for CertifyConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
}

#[derive(Debug, Serialize)]
struct CertifyItemResult {
    name: String,
    mu: f64,
    strength: Strength,
    passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    subhom: Option<VerificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scaling: Option<VerificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    points: Option<Vec<PointCheck>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn catalog_items() -> Vec<CertifyItem> {
    table_catalog()
        .into_iter()
        .map(|(name, activation)| CertifyItem {
            name: name.to_string(),
            target: CertifyTarget::Activation { activation },
            mu: None,
            strength: Strength::Plain,
            domain: None,
            points: None,
        })
        .collect()
}

fn certify_item(cfg: &CertifyConfig, item: &CertifyItem, seed: u64) -> Result<CertifyItemResult> {
    let (map, cert_mu, cert_domain): (Box<dyn DifferentiableMap>, Option<f64>, SampleDomain) = match &item.target {
        CertifyTarget::Activation { activation } => {
            let c = certificate(activation)?;
            let node = if activation.is_vector() {
                OperatorNode::vector_activation(activation.clone())?
            } else {
                OperatorNode::entrywise(activation.clone())?
            };
            (Box::new(node), Some(c.mu), SampleDomain::for_domain(c.domain))
        }
        CertifyTarget::Operator { operator } => {
            let c = operator.subhom_certificate()?;
            (Box::new(operator.clone()), Some(c.mu), SampleDomain::for_domain(c.domain))
        }
        CertifyTarget::QuotientMap => (Box::new(QuotientMap), Some(1.0), SampleDomain::PositiveOrthant),
    };
    let mu = item.mu.or(cert_mu).unwrap_or(1.0);
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Parameter(format!("item {}: mu must be positive", item.name)));
    }
    let dim = match (&item.target, item.points.as_ref().and_then(|p| p.first())) {
        (CertifyTarget::QuotientMap, _) => 2,
        (_, Some(p)) => p.len(),
        (CertifyTarget::Operator { operator }, None) => operator
            .input_dim()
            .ok_or_else(|| Error::Parameter(format!("item {}: operator has no fixed input dimension", item.name)))?,
        (CertifyTarget::Activation { .. }, None) => cfg.dim,
    };
    let mut result = CertifyItemResult {
        name: item.name.clone(),
        mu,
        strength: item.strength,
        passed: false,
        subhom: None,
        scaling: None,
        points: None,
        error: None,
    };
    if let Some(points) = &item.points {
        let checks = points
            .iter()
            .map(|z| check_subhom_at(map.as_ref(), z, mu, item.strength))
            .collect::<Result<Vec<_>>>()?;
        result.passed = checks.iter().all(|c| c.passed);
        result.points = Some(checks);
        return Ok(result);
    }
    let domain = item.domain.unwrap_or(cert_domain);
    let spec = SampleSpec { domain, dim, count: cfg.samples, seed };
    let sub = verify_subhom(map.as_ref(), mu, &spec, item.strength)?;
    let pos = SampleSpec { domain: SampleDomain::PositiveOrthant, seed: sub_seed(seed, 1), ..spec };
    let sc = verify_scaling(map.as_ref(), mu, &pos, &cfg.scaling_lambdas)?;
    result.passed = sub.passed && sc.passed;
    result.subhom = Some(sub);
    result.scaling = Some(sc);
    Ok(result)
}

fn cmd_certify(cfg: &CertifyConfig, out: &Path) -> Result<bool> {
    let items = cfg.items.clone().unwrap_or_else(catalog_items);
    if items.is_empty() {
        return Err(Error::Parameter("no items to certify".into()));
    }
    let results = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| match certify_item(cfg, item, sub_seed(cfg.seed, i as u64)) {
            Err(e) if is_check_failure(&e) => Ok(CertifyItemResult {
                name: item.name.clone(),
                mu: item.mu.unwrap_or(f64::NAN),
                strength: item.strength,
                passed: false,
                subhom: None,
                scaling: None,
                points: None,
                error: Some(e.to_string()),
            }),
            other => other,
        })
        .collect::<Result<Vec<_>>>()?;
    let passed = results.iter().all(|r| r.passed);
    let mut w = csv_writer(out, "certify.csv")?;
    w.write_record(["item", "mu", "strength", "max_violation", "scaling_violation", "passed"])?;
    for r in &results {
        let max_v = match (&r.subhom, &r.points) {
            (Some(s), _) => s.max_violation,
            (None, Some(p)) => p.iter().map(|c| c.violation).fold(f64::NEG_INFINITY, f64::max),
            _ => f64::NAN,
        };
        let sc = r.scaling.as_ref().map_or(f64::NAN, |s| s.max_violation);
        let strength = match r.strength {
            Strength::Plain => "plain",
            Strength::Strong => "strong",
        };
        w.write_record([r.name.clone(), fmt(r.mu), strength.into(), fmt(max_v), fmt(sc), r.passed.to_string()])?;
    }
    w.flush()?;
    write_report(out, "certify", cfg.seed, cfg, passed, &results)?;
    Ok(passed)
}

// ---------------------------------------------------------------- converge

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeConfig {
    pub seed: u64,
    pub preset: LayerPreset,
    pub n: usize,
    pub d: usize,
    pub batch: usize,
    pub p_values: Vec<PNorm>,
    /// Replaces the preset's tanh shift.
    pub shift: Option<f64>,
    pub solver: SolverConfig,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        ConvergeConfig {
            seed: 0,
            preset: LayerPreset::ShiftedTanh,
            n: 150,
            d: 400,
            batch: 128,
            p_values: vec![PNorm::Finite(1.0), PNorm::Finite(10.0), PNorm::Infinity],
            shift: None,
            solver: SolverConfig::default(),
        }
    }
}

impl Seeded for ConvergeConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
}

#[derive(Debug, Serialize)]
struct TraceSummary {
    variant: String,
    iterations: usize,
    converged: bool,
    final_residual: f64,
    estimated_rate: Option<f64>,
    contraction_bound: f64,
}

fn random_batch(d: usize, b: usize, seed: u64) -> Matrix {
    let mut s = Sampler::new(seed);
    Matrix::from_fn(d, b, |_, _| s.uniform01())
}

fn cmd_converge(cfg: &ConvergeConfig, out: &Path) -> Result<bool> {
    if cfg.p_values.is_empty() || cfg.batch == 0 {
        return Err(Error::Parameter("converge needs p values and a positive batch".into()));
    }
    let x = random_batch(cfg.d, cfg.batch, sub_seed(cfg.seed, 1));
    let runs = cfg
        .p_values
        .par_iter()
        .map(|&p| {
            let variant = format!("p={p}");
            let mut lc = preset_layer(cfg.preset, cfg.n, cfg.d, p, sub_seed(cfg.seed, 0))?;
            if let Some(shift) = cfg.shift {
                lc.shift = shift;
            }
            let layer = build_layer(&lc).map_err(|e| match e {
                Error::UncertifiedLayer { detail, required } => {
                    Error::UncertifiedLayer { detail: format!("{} layer {variant}: {detail}", preset_name(cfg.preset)), required }
                }
                other => other,
            })?;
            let (_, rep) = layer.forward_batch(&x, &cfg.solver)?;
            Ok((variant, layer.contraction_bound(), rep))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv_writer(out, "converge.csv")?;
    w.write_record(["variant", "k", "residual"])?;
    let mut summaries = Vec::new();
    for (variant, bound, rep) in &runs {
        for (k, r) in rep.residual_trace.iter().enumerate() {
            w.write_record([variant.clone(), (k + 1).to_string(), fmt(*r)])?;
        }
        summaries.push(TraceSummary {
            variant: variant.clone(),
            iterations: rep.iterations,
            converged: rep.converged,
            final_residual: rep.final_residual,
            estimated_rate: rep.estimated_rate,
            contraction_bound: *bound,
        });
    }
    w.flush()?;
    let passed = summaries.iter().all(|s| s.converged);
    write_report(out, "converge", cfg.seed, cfg, passed, &summaries)?;
    Ok(passed)
}

// ---------------------------------------------------------------- contract

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContractConfig {
    pub seed: u64,
    pub presets: Vec<LayerPreset>,
    pub n: usize,
    pub d: usize,
    pub p: PNorm,
    pub pairs: usize,
    /// Log-uniform sampling range of probe points.
    pub range: (f64, f64),
}

impl Default for ContractConfig {
    fn default() -> Self {
        ContractConfig {
            seed: 0,
            presets: vec![LayerPreset::ShiftedTanh, LayerPreset::PositivePowerTanh],
            n: 150,
            d: 400,
            p: PNorm::Infinity,
            pairs: 1000,
            range: (1e-3, 1e3),
        }
    }
}

impl Seeded for ContractConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
}

#[derive(Debug, Serialize)]
struct ContractResult {
    preset: LayerPreset,
    mu: f64,
    report: ContractionProbeReport,
}

fn preset_name(p: LayerPreset) -> String {
    serde_json::to_value(p).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn cmd_contract(cfg: &ContractConfig, out: &Path) -> Result<bool> {
    if cfg.presets.is_empty() {
        return Err(Error::Parameter("no presets to probe".into()));
    }
    let results = cfg
        .presets
        .iter()
        .enumerate()
        .map(|(i, &preset)| {
            let layer = build_layer(&preset_layer(preset, cfg.n, cfg.d, cfg.p, sub_seed(cfg.seed, 0))?)?;
            let x = random_input(cfg.d, sub_seed(cfg.seed, 1));
            let f = layer.injection(&x)?;
            let g = layer.map_with_injection(&f);
            let c = layer.certificate();
            let spec = ProbeSpec::new(cfg.n, cfg.pairs, sub_seed(cfg.seed, 2 + i as u64))
                .with_range(cfg.range.0, cfg.range.1);
            let report = contraction_probe(&g, &spec, c.mu, c.positive_jacobian)?;
            Ok(ContractResult { preset, mu: c.mu, report })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv_writer(out, "contract.csv")?;
    w.write_record(["preset", "pairs", "excluded", "max_ratio", "mean_ratio", "bound", "passed"])?;
    for r in &results {
        let p = &r.report;
        w.write_record([
            preset_name(r.preset),
            p.pair_count.to_string(),
            p.excluded.to_string(),
            fmt(p.max_ratio),
            fmt(p.mean_ratio),
            fmt(p.bound),
            p.passed.to_string(),
        ])?;
    }
    w.flush()?;
    let passed = results.iter().all(|r| r.report.passed);
    write_report(out, "contract", cfg.seed, cfg, passed, &results)?;
    Ok(passed)
}

// ---------------------------------------------------------------- unique

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniqueConfig {
    pub seed: u64,
    pub preset: LayerPreset,
    pub n: usize,
    pub d: usize,
    pub p: PNorm,
    pub starts: usize,
    /// Solver used for the multi-start comparison.
    pub probe_solver: SolverConfig,
    /// Allowed excess of the estimated rate over the contraction bound.
    pub rate_slack: f64,
    /// The all-ones Picard run must reach `step_tol` within `max_steps`.
    pub step_tol: f64,
    pub max_steps: usize,
}

impl Default for UniqueConfig {
    fn default() -> Self {
        UniqueConfig {
            seed: 0,
            preset: LayerPreset::ShiftedTanh,
            n: 150,
            d: 400,
            p: PNorm::Infinity,
            starts: 10,
            probe_solver: SolverConfig::with_tol(1e-12),
            rate_slack: 0.02,
            step_tol: 1e-3,
            max_steps: 20,
        }
    }
}

impl Seeded for UniqueConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
}

#[derive(Debug, Serialize)]
struct UniqueResult {
    mu: f64,
    contraction_bound: f64,
    max_pairwise_distance: f64,
    threshold: f64,
    probe_passed: bool,
    max_rate: Option<f64>,
    rate_passed: bool,
    steps_to_tol: usize,
    steps_passed: bool,
}

fn cmd_unique(cfg: &UniqueConfig, out: &Path) -> Result<bool> {
    let layer = build_layer(&preset_layer(cfg.preset, cfg.n, cfg.d, cfg.p, sub_seed(cfg.seed, 0))?)?;
    let x = random_input(cfg.d, sub_seed(cfg.seed, 1));
    let f = layer.injection(&x)?;
    let g = layer.map_with_injection(&f);
    let probe: UniquenessReport = uniqueness_probe(&g, cfg.n, cfg.starts, sub_seed(cfg.seed, 2), &cfg.probe_solver)?;
    let steps = layer.forward(
        &x,
        &SolverConfig { method: Method::Picard, tol: cfg.step_tol, max_iter: cfg.max_steps.max(1), record_trace: true },
    )?;
    let bound = layer.contraction_bound();
    let max_rate = probe.estimated_rates.iter().flatten().copied().reduce(f64::max);
    let rate_passed = max_rate.is_none_or(|r| r <= bound + cfg.rate_slack);
    let mut w = csv_writer(out, "unique.csv")?;
    w.write_record(["start", "iterations", "estimated_rate"])?;
    for (i, (it, rate)) in probe.iterations.iter().zip(&probe.estimated_rates).enumerate() {
        w.write_record([i.to_string(), it.to_string(), rate.map_or_else(String::new, fmt)])?;
    }
    w.flush()?;
    let result = UniqueResult {
        mu: layer.certificate().mu,
        contraction_bound: bound,
        max_pairwise_distance: probe.max_pairwise_distance,
        threshold: probe.threshold,
        probe_passed: probe.passed,
        max_rate,
        rate_passed,
        steps_to_tol: steps.iterations,
        steps_passed: steps.converged,
    };
    let passed = result.probe_passed && result.rate_passed && result.steps_passed;
    write_report(out, "unique", cfg.seed, cfg, passed, &result)?;
    Ok(passed)
}

// ---------------------------------------------------------------- gradcheck

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub preset: LayerPreset,
    pub n: usize,
    pub d: usize,
    pub p: PNorm,
    /// Coordinates checked per parameter block.
    pub coords: usize,
    pub eps: f64,
    /// Equilibrium tolerance for every solve.
    pub tol: f64,
    pub threshold: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            preset: LayerPreset::ShiftedTanh,
            n: 30,
            d: 10,
            p: PNorm::Infinity,
            coords: 20,
            eps: 1e-5,
            tol: 1e-10,
            threshold: 1e-4,
        }
    }
}

impl Seeded for GradcheckConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Block {
    W,
    U,
    B,
    X,
}

#[derive(Debug, Serialize)]
struct GradEntry {
    block: Block,
    index: usize,
    implicit: f64,
    finite_difference: f64,
    relative_error: f64,
}

/// Relative error with an absolute floor so near-zero coordinates do not blow up.
fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn objective(cfg: &DeqLayerConfig, x: &[f64], c: &[f64], solver: &SolverConfig) -> Result<f64> {
    let rep = build_layer(cfg)?.forward(x, solver)?;
    if !rep.converged {
        return Err(Error::Divergence { iteration: rep.iterations, detail: "finite-difference solve".into() });
    }
    Ok(rep.z_star.iter().zip(c).map(|(a, b)| a * b).sum())
}

fn cmd_gradcheck(cfg: &GradcheckConfig, out: &Path) -> Result<bool> {
    if !(cfg.eps > 0.0) || cfg.coords == 0 {
        return Err(Error::Parameter("gradcheck needs eps > 0 and coords > 0".into()));
    }
    let layer_cfg = preset_layer(cfg.preset, cfg.n, cfg.d, cfg.p, sub_seed(cfg.seed, 0))?;
    let layer = build_layer(&layer_cfg)?;
    let x = random_input(cfg.d, sub_seed(cfg.seed, 1));
    let mut s = Sampler::stream(cfg.seed, 3);
    let c: Vec<f64> = (0..cfg.n).map(|_| s.normal()).collect();
    let solver = SolverConfig { max_iter: 10_000, ..SolverConfig::with_tol(cfg.tol) };
    let rep = layer.forward(&x, &solver)?;
    let grads = layer.ift_gradient(&x, &rep.z_star, &c)?;
    let (n, d) = (cfg.n, cfg.d);
    let mut picks = Vec::new();
    for (block, size) in [(Block::W, n * n), (Block::U, n * d), (Block::B, n), (Block::X, d)] {
        for _ in 0..cfg.coords {
            picks.push((block, (s.uniform01() * size as f64) as usize % size));
        }
    }
    let entries = picks
        .par_iter()
        .map(|&(block, idx)| {
            let eval = |h: f64| -> Result<f64> {
                let mut lc = layer_cfg.clone();
                let mut xx = x.clone();
                match block {
                    Block::W => lc.w.set(idx / n, idx % n, lc.w.get(idx / n, idx % n) + h),
                    Block::U => lc.injection.u.set(idx / d, idx % d, lc.injection.u.get(idx / d, idx % d) + h),
                    Block::B => lc.injection.b[idx] += h,
                    Block::X => xx[idx] += h,
                }
                objective(&lc, &xx, &c, &solver)
            };
            let fd = (eval(cfg.eps)? - eval(-cfg.eps)?) / (2.0 * cfg.eps);
            let implicit = match block {
                Block::W => grads.dw.as_slice()[idx],
                Block::U => grads.du.as_slice()[idx],
                Block::B => grads.db[idx],
                Block::X => grads.dx[idx],
            };
            Ok(GradEntry { block, index: idx, implicit, finite_difference: fd, relative_error: relative_error(implicit, fd) })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_err = entries.iter().map(|e| e.relative_error).fold(0.0, f64::max);
    let mut w = csv_writer(out, "gradcheck.csv")?;
    w.write_record(["block", "index", "implicit", "finite_difference", "relative_error"])?;
    for e in &entries {
        let b = match e.block {
            Block::W => "w",
            Block::U => "u",
            Block::B => "b",
            Block::X => "x",
        };
        w.write_record([b.to_string(), e.index.to_string(), fmt(e.implicit), fmt(e.finite_difference), fmt(e.relative_error)])?;
    }
    w.flush()?;
    let passed = max_err < cfg.threshold;
    #[derive(Serialize)]
    struct R<'a> {
        max_relative_error: f64,
        threshold: f64,
        entries: &'a [GradEntry],
    }
    write_report(out, "gradcheck", cfg.seed, cfg, passed, R { max_relative_error: max_err, threshold: cfg.threshold, entries: &entries })?;
    Ok(passed)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    /// CSV with `x1,x2,label`; two Gaussians are generated when omitted.
    pub data: Option<PathBuf>,
    pub n_points: usize,
    pub preset: LayerPreset,
    pub hidden: usize,
    pub p: PNorm,
    pub lr: f64,
    pub steps: usize,
    pub tol: f64,
    /// Pass when `final_loss ≤ target_ratio · initial_loss`.
    pub target_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            data: None,
            n_points: 200,
            preset: LayerPreset::ShiftedTanh,
            hidden: 16,
            p: PNorm::Infinity,
            lr: 0.05,
            steps: 200,
            tol: 1e-8,
            target_ratio: 0.5,
        }
    }
}

impl Seeded for TrainConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
}

fn cmd_train(cfg: &TrainConfig, out: &Path) -> Result<bool> {
    let data = match &cfg.data {
        Some(p) => load_dataset(p)?,
        None => two_gaussians(cfg.n_points, sub_seed(cfg.seed, 1)),
    };
    let layer = preset_layer(cfg.preset, cfg.hidden, 2, cfg.p, sub_seed(cfg.seed, 0))?;
    let solver = SolverConfig { max_iter: 10_000, ..SolverConfig::with_tol(cfg.tol) };
    let report = train_toy(&data, &layer, &Sgd { lr: cfg.lr, steps: cfg.steps }, &solver, sub_seed(cfg.seed, 2))?;
    let mut w = csv_writer(out, "train.csv")?;
    w.write_record(["step", "loss"])?;
    for (k, l) in report.losses.iter().chain(std::iter::once(&report.final_loss)).enumerate() {
        w.write_record([k.to_string(), fmt(*l)])?;
    }
    w.flush()?;
    let initial = report.losses.first().copied().unwrap_or(report.final_loss);
    let passed = report.final_loss <= cfg.target_ratio * initial;
    #[derive(Serialize)]
    struct R<'a> {
        initial_loss: f64,
        final_loss: f64,
        layer: &'a DeqLayerConfig,
        readout: &'a Matrix,
        readout_bias: &'a [f64],
    }
    let result = R {
        initial_loss: initial,
        final_loss: report.final_loss,
        layer: &report.layer,
        readout: &report.readout,
        readout_bias: &report.readout_bias,
    };
    write_report(out, "train", cfg.seed, cfg, passed, result)?;
    Ok(passed)
}

// ---------------------------------------------------------------- graph

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub seed: u64,
    /// Edge-list file; an Erdős–Rényi graph is generated when omitted.
    pub edges: Option<PathBuf>,
    pub nodes: usize,
    pub edge_prob: f64,
    /// Injection CSV (`n × c`); uniform random when omitted.
    pub injection: Option<PathBuf>,
    pub channels: usize,
    pub alpha: f64,
    pub variant: Variant,
    pub adjacency_mode: AdjacencyMode,
    pub solver: SolverConfig,
    /// Starts for the uniqueness probe of nonlinear variants.
    pub starts: usize,
    /// Agreement tolerance of the linear variant against the dense resolvent.
    pub oracle_tol: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            seed: 0,
            edges: None,
            nodes: 100,
            edge_prob: 0.05,
            injection: None,
            channels: 3,
            alpha: 0.1,
            variant: Variant::TanhOutside,
            adjacency_mode: AdjacencyMode::RowStochastic,
            solver: SolverConfig::with_tol(1e-10),
            starts: 5,
            oracle_tol: 1e-8,
        }
    }
}

impl Seeded for GraphConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
}

#[derive(Debug, Serialize)]
struct GraphResult {
    nodes: usize,
    edges: usize,
    iterations: usize,
    converged: bool,
    estimated_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    resolvent_max_abs_diff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    uniqueness_max_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mu: Option<f64>,
}

/// `α (I − (1−α) Ã)⁻¹ f`, one dense solve per column.
pub fn resolvent(g: &Graph, mode: AdjacencyMode, alpha: f64, f: &Matrix) -> Result<Matrix> {
    let a = normalized_adjacency(g, mode);
    let n = g.node_count();
    let m = Matrix::identity(n).sub(&a.scale(1.0 - alpha))?;
    let cols = f
        .columns()
        .iter()
        .map(|col| solve_dense(&m, &col.iter().map(|v| alpha * v).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_columns(&cols)
}

fn cmd_graph(cfg: &GraphConfig, out: &Path) -> Result<bool> {
    let g = match &cfg.edges {
        Some(p) => load_edge_list(p, cfg.nodes)?,
        None => erdos_renyi(cfg.nodes, cfg.edge_prob, sub_seed(cfg.seed, 0))?,
    };
    let injection = match &cfg.injection {
        Some(p) => load_matrix_csv(p)?,
        None => random_injection(g.node_count(), cfg.channels, sub_seed(cfg.seed, 1)),
    };
    let pcfg = GraphPropagationConfig {
        alpha: cfg.alpha,
        variant: cfg.variant,
        adjacency_mode: cfg.adjacency_mode,
        injection: injection.clone(),
        solver: cfg.solver,
    };
    let (z, rep) = propagate(&g, &pcfg)?;
    let mut result = GraphResult {
        nodes: g.node_count(),
        edges: g.edges().len(),
        iterations: rep.iterations,
        converged: rep.converged,
        estimated_rate: rep.estimated_rate.or_else(|| rate_estimate(&rep.residual_trace).ok()),
        resolvent_max_abs_diff: None,
        uniqueness_max_distance: None,
        mu: None,
    };
    let mut passed = rep.converged;
    if cfg.variant == Variant::Linear {
        let exact = resolvent(&g, cfg.adjacency_mode, cfg.alpha, &injection)?;
        let diff = z.sub(&exact)?.as_slice().iter().fold(0.0f64, |a, b| a.max(b.abs()));
        passed &= diff <= cfg.oracle_tol;
        result.resolvent_max_abs_diff = Some(diff);
    } else {
        let prop = Propagation::new(&g, &pcfg)?;
        result.mu = prop.certificate().map(|c| c.mu);
        let (n, c) = prop.dims();
        let probe = uniqueness_probe(&|v: &[f64]| prop.map(v), n * c, cfg.starts, sub_seed(cfg.seed, 2), &cfg.solver)?;
        passed &= probe.passed;
        result.uniqueness_max_distance = Some(probe.max_pairwise_distance);
    }
    write_matrix_csv(BufWriter::new(File::create(out.join("graph_equilibrium.csv"))?), &z)?;
    write_trace_csv(BufWriter::new(File::create(out.join("graph_trace.csv"))?), &rep)?;
    write_report(out, "graph", cfg.seed, cfg, passed, &result)?;
    Ok(passed)
}
