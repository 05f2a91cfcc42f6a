//! Command-line front end.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::estimator::{
    convergence_sweep, estimate, term_estimate, ConvergenceTable, EstimateConfig, EstimateReport,
    EstimatorError, Pruning, SamplingMode,
};
use crate::kernels::{EulerKernel, Kernel, KernelError, ModelSpec, NvKernel, PdmpKernel};
use crate::models::{KernelKind, ModelRegistry};
use crate::trees::{
    forest_of, parse_rational, scheme_forest, scheme_tree, ForestTerm, NeveuWord, Rational,
    SchemeOrderParams, TreeError,
};

#[derive(Parser, Debug)]
#[command(
    name = "randgrid",
    version,
    about = "High-order weak approximation with random-grid corrections"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the scheme tree and its forest with coefficients and costs.
    Trees(TreesArgs),
    /// Estimate E[f(X_T)] at order nu.
    Estimate(EstimateArgs),
    /// Sweep nu and n against the model reference and fit slopes.
    Convergence(ConvergenceArgs),
    /// Per-term standard deviations of the weighted corrections.
    VarianceTable(VarianceArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PruneArg {
    None,
    Ode,
    ConstSigma,
}

impl From<PruneArg> for Pruning {
    fn from(p: PruneArg) -> Self {
        match p {
            PruneArg::None => Pruning::None,
            PruneArg::Ode => Pruning::Ode,
            PruneArg::ConstSigma => Pruning::ConstSigma,
        }
    }
}

fn rational_arg(s: &str) -> Result<Rational, String> {
    match parse_rational(s) {
        Some(r) if r > Rational::from(0) => Ok(r),
        _ => Err(format!(
            "expected a positive rational like 1 or 3/2, got {s:?}"
        )),
    }
}

#[derive(Args, Debug)]
pub struct TreesArgs {
    #[arg(long)]
    pub nu: u32,
    #[arg(long, default_value = "1", value_parser = rational_arg)]
    pub alpha: Rational,
    /// Refinement factor used for coefficients and costs.
    #[arg(long, default_value_t = 5)]
    pub n: u32,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub model: String,
    /// Override the model's default kernel (euler, nv, pdmp).
    #[arg(long)]
    pub kernel: Option<KernelKind>,
    #[arg(long, default_value = "1", value_parser = rational_arg)]
    pub alpha: Rational,
    /// Target 95% half-width per term.
    #[arg(long, conflicts_with_all = ["samples", "exhaustive"])]
    pub eps: Option<f64>,
    /// Fixed number of samples per term.
    #[arg(long, conflicts_with = "exhaustive")]
    pub samples: Option<u64>,
    /// Average over every labeling (noise-free kernels only).
    #[arg(long)]
    pub exhaustive: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub pilot: u64,
    #[arg(long, value_enum, default_value_t = PruneArg::None)]
    pub prune: PruneArg,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    fn mode(&self) -> Result<SamplingMode, String> {
        match (self.eps, self.samples, self.exhaustive) {
            (Some(eps), None, false) if eps > 0.0 => Ok(SamplingMode::TargetEps {
                eps,
                pilot: self.pilot,
            }),
            (Some(_), _, _) => Err("--eps must be positive".into()),
            (None, Some(samples), false) => Ok(SamplingMode::FixedN { samples }),
            (None, None, true) => Ok(SamplingMode::Exhaustive),
            _ => Err("one of --eps, --samples or --exhaustive is required".into()),
        }
    }
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub nu: u32,
    #[arg(long)]
    pub n: u32,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated orders.
    #[arg(long, value_delimiter = ',', required = true)]
    pub nu: Vec<u32>,
    /// Comma-separated refinement factors.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<u32>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct VarianceArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub kernel: Option<KernelKind>,
    #[arg(long)]
    pub nu: u32,
    #[arg(long)]
    pub n: u32,
    #[arg(long, default_value = "1", value_parser = rational_arg)]
    pub alpha: Rational,
    /// Samples per term.
    #[arg(long, default_value_t = 100_000)]
    pub pilot: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Tree(_) => 1,
            _ => 2,
        }
    }
}

/// Run with the given arguments; returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = write!(stderr, "{}", e.render());
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn emit(text: &str, out: &Option<PathBuf>, stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Trees(a) => cmd_trees(&a, stdout),
        Command::Estimate(a) => {
            let text = in_pool(a.run.workers, || cmd_estimate(&a))?;
            emit(&text, &a.run.out, stdout)
        }
        Command::Convergence(a) => {
            let text = in_pool(a.run.workers, || cmd_convergence(&a))?;
            emit(&text, &a.run.out, stdout)
        }
        Command::VarianceTable(a) => {
            let text = in_pool(a.workers, || cmd_variance_table(&a))?;
            emit(&text, &a.out, stdout)
        }
    }
}

fn in_pool<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    match workers {
        None => f(),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(f),
    }
}

#[derive(Serialize)]
struct TreesJson<'a> {
    nu: u32,
    alpha: String,
    n: u32,
    scheme_tree: String,
    forest: &'a [ForestTerm],
}

pub fn cmd_trees(a: &TreesArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let tree = scheme_tree(a.nu, 0, a.alpha)?;
    let forest = scheme_forest(a.nu, a.alpha)?;
    let text = match a.format {
        Format::Json => to_json(&TreesJson {
            nu: a.nu,
            alpha: a.alpha.to_string(),
            n: a.n,
            scheme_tree: tree.canonical(),
            forest: &forest,
        }),
        Format::Csv => {
            let mut s = String::from("tree,coefficient,leaf_depth_sum,flat_cost,flat_cost_per_n\n");
            for t in &forest {
                s.push_str(&format!(
                    "\"{}\",{},{},{},{}\n",
                    t.tree,
                    coefficient_text(t, a.n),
                    t.leaf_depth_sum,
                    t.flat_cost(a.n.max(2)),
                    t.flat_cost_per_n
                ));
            }
            s
        }
        Format::Text => {
            let mut s = format!("scheme tree (nu={}, alpha={}):\n", a.nu, a.alpha);
            s.push_str(&tree.render_ascii());
            s.push_str(&format!("\nforest: {} trees (n={})\n", forest.len(), a.n));
            s.push_str(&format!(
                "{:<32} {:>14} {:>6} {:>10}\n",
                "tree", "c(A)", "sum|u|", "cost"
            ));
            for t in &forest {
                s.push_str(&format!(
                    "{:<32} {:>14} {:>6} {:>10}\n",
                    t.tree.canonical(),
                    coefficient_text(t, a.n),
                    t.leaf_depth_sum,
                    format!("{}n", t.flat_cost_per_n)
                ));
            }
            s
        }
    };
    emit(&text, &a.out, stdout)
}

fn coefficient_text(t: &ForestTerm, n: u32) -> String {
    t.coefficient(n)
        .map(|c| c.to_string())
        .unwrap_or_else(|_| "-".to_string())
}

fn lookup(model: &str, kernel: Option<KernelKind>) -> Result<(ModelSpec, KernelKind), CliError> {
    let reg = ModelRegistry::default();
    let m = reg.get(model).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown model {model:?}; known: {}",
            reg.ids().join(", ")
        ))
    })?;
    Ok((m.spec.clone(), kernel.unwrap_or(m.default_kernel)))
}

/// Call `$body` with `$k` bound to the concrete kernel for `$kind`.
macro_rules! with_kernel {
    ($kind:expr, $spec:expr, |$k:ident| $body:expr) => {{
        let spec = Arc::new($spec.clone());
        match $kind {
            KernelKind::Euler => {
                let $k = EulerKernel::new(spec);
                $body
            }
            KernelKind::Nv => {
                let $k = NvKernel::new(spec)?;
                $body
            }
            KernelKind::Pdmp => {
                let $k = PdmpKernel::new(spec)?;
                $body
            }
        }
    }};
}

fn run_config(run: &RunArgs, nu: u32, n: u32) -> Result<EstimateConfig, CliError> {
    let params = SchemeOrderParams {
        nu,
        alpha: run.alpha,
        beta: 0,
        n,
    };
    params
        .validate()
        .map_err(|e| CliError::Usage(format!("nu={nu}, n={n}: {e}")))?;
    Ok(EstimateConfig {
        nu,
        n,
        alpha: run.alpha,
        mode: run.mode().map_err(CliError::Usage)?,
        seed: run.seed,
        pruning: run.prune.into(),
    })
}

pub fn cmd_estimate(a: &EstimateArgs) -> Result<String, CliError> {
    let (spec, kind) = lookup(&a.run.model, a.run.kernel)?;
    let cfg = run_config(&a.run, a.nu, a.n)?;
    let report: EstimateReport = with_kernel!(kind, spec, |k| estimate(&spec, &k, &cfg)?);
    eprintln!(
        "estimate {} nu={} n={}: {} terms in {:.3}s",
        report.model,
        report.nu,
        report.n,
        report.terms.len(),
        report.elapsed_secs
    );
    Ok(match a.format {
        Format::Json => to_json(&json!({
            "value": report.value,
            "ci_half_width": report.ci_half_width,
            "nu": report.nu,
            "n": report.n,
            "alpha": report.alpha,
            "model": report.model,
            "kernel": report.kernel,
            "mode": report.mode,
            "seed": report.seed,
            "pruning_a": report.pruning_a,
            "reference": spec.reference,
            "terms": report.terms,
            "pruned": report.pruned,
        })),
        Format::Csv => {
            let mut s = String::from("tree,coefficient,mean,std,samples,ci_half_width\n");
            for t in &report.terms {
                s.push_str(&format!(
                    "\"{}\",{},{:.17e},{:.6e},{},{:.6e}\n",
                    t.tree, t.coefficient, t.mean, t.std, t.samples, t.ci_half_width
                ));
            }
            s
        }
        Format::Text => {
            let mut s = format!(
                "{} nu={} n={} kernel={} seed={}\nestimate {:.10} ± {:.3e}\n",
                report.model,
                report.nu,
                report.n,
                report.kernel,
                report.seed,
                report.value,
                report.ci_half_width
            );
            if let Some(r) = &spec.reference {
                s.push_str(&format!(
                    "reference {:.10} (error {:.3e})\n",
                    r.value,
                    (report.value - r.value).abs()
                ));
            }
            s
        }
    })
}

pub fn cmd_convergence(a: &ConvergenceArgs) -> Result<String, CliError> {
    let (spec, kind) = lookup(&a.run.model, a.run.kernel)?;
    if a.n.len() < 2 {
        return Err(CliError::Usage(
            "convergence needs at least two n values".into(),
        ));
    }
    let reference = spec
        .reference
        .as_ref()
        .map(|r| r.value)
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::Usage(format!("model {} has no reference value", spec.id)))?;
    let min_nu = *a.nu.iter().min().unwrap_or(&1);
    let base = run_config(&a.run, min_nu, *a.n.iter().max().unwrap_or(&2))?;
    let started = Instant::now();
    let table: ConvergenceTable = with_kernel!(kind, spec, |k| convergence_sweep(
        &spec, &k, &a.nu, &a.n, &base, reference
    )?);
    eprintln!(
        "convergence {}: {} rows in {:.3}s",
        table.model,
        table.rows.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(match a.format {
        Format::Csv => table.to_csv(),
        Format::Json | Format::Text => to_json(&json!({
            "model": table.model,
            "kernel": kind.to_string(),
            "seed": a.run.seed,
            "mode": base.mode,
            "alpha": base.alpha.to_string(),
            "pruning_a": base.pruning.exponent().to_string(),
            "rows": table.rows,
            "slope_per_nu": table.slopes.iter().map(|(nu, s)| json!({"nu": nu, "slope": s})).collect::<Vec<_>>(),
        })),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct VarianceRow {
    pub tree: String,
    pub std: f64,
    pub mean: f64,
    pub min_nu: Option<u32>,
}

/// Smallest order whose forest contains each tree, up to `nu`.
fn min_orders(nu: u32, alpha: Rational) -> Result<Vec<(Vec<NeveuWord>, u32)>, TreeError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for v in 1..=nu {
        for t in forest_of(&scheme_tree(v, 0, alpha)?) {
            let key = t.order_key();
            if seen.insert(key.clone()) {
                out.push((key, v));
            }
        }
    }
    Ok(out)
}

pub fn variance_table<K: Kernel>(
    spec: &ModelSpec,
    kernel: &K,
    nu: u32,
    n: u32,
    alpha: Rational,
    samples: u64,
    seed: u64,
) -> Result<Vec<VarianceRow>, CliError> {
    SchemeOrderParams {
        nu,
        alpha,
        beta: 0,
        n,
    }
    .validate()?;
    let orders = min_orders(nu, alpha)?;
    let mut rows = Vec::new();
    for (idx, term) in scheme_forest(nu, alpha)?.iter().enumerate() {
        let s = term_estimate(spec, kernel, term, idx as u64, n, seed, 0..samples)?;
        let key = term.tree.order_key();
        rows.push(VarianceRow {
            tree: term.tree.canonical(),
            std: s.variance().sqrt(),
            mean: s.mean(),
            min_nu: orders.iter().find(|(k, _)| *k == key).map(|(_, v)| *v),
        });
    }
    Ok(rows)
}

pub fn cmd_variance_table(a: &VarianceArgs) -> Result<String, CliError> {
    let (spec, kind) = lookup(&a.model, a.kernel)?;
    let rows = with_kernel!(kind, spec, |k| variance_table(
        &spec, &k, a.nu, a.n, a.alpha, a.pilot, a.seed
    )?);
    Ok(match a.format {
        Format::Json => to_json(&json!({
            "model": spec.id,
            "kernel": kind.to_string(),
            "nu": a.nu,
            "n": a.n,
            "alpha": a.alpha.to_string(),
            "samples": a.pilot,
            "seed": a.seed,
            "rows": rows,
        })),
        Format::Csv => {
            let mut s = String::from("tree,std,mean,min_nu\n");
            for r in &rows {
                s.push_str(&format!(
                    "\"{}\",{:.6e},{:.6e},{}\n",
                    r.tree,
                    r.std,
                    r.mean,
                    r.min_nu.map(|v| v.to_string()).unwrap_or_default()
                ));
            }
            s
        }
        Format::Text => {
            let mut s = format!("{:<32} {:>12} {:>6}\n", "tree", "std", "min nu");
            for r in &rows {
                s.push_str(&format!(
                    "{:<32} {:>12.3e} {:>6}\n",
                    r.tree,
                    r.std,
                    r.min_nu.map(|v| v.to_string()).unwrap_or_default()
                ));
            }
            s
        }
    })
}
