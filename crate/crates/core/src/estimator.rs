//! Signed branching evaluation of the correction terms and assembly of the
//! order-`ν` estimate.
//!
//! One draw of a correction term advances every pruned-grid scheme of a tree
//! at once: plain steps are applied to all live states with a shared noise,
//! and each leaf doubles the set into a refined copy (sign kept) and a
//! coarse copy (sign flipped) driven by the aggregate of the same noises.

use std::collections::BTreeSet;
use std::ops::Range;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::kernels::{level_step, run_on_grid, Kernel, KernelError, ModelSpec, State};
use crate::random_grids::{
    combinations, grid, pruned_grid, sample_order_stats, GridError, LabeledTree,
};
use crate::rng::stream;
use crate::trees::{
    partition_forest, scheme_forest, ForestTerm, NeveuWord, Rational, SchemeOrderParams, Tree,
    TreeError,
};

/// Samples per work unit; fixed so results do not depend on the thread count.
pub const CHUNK: u64 = 4096;

/// 97.5% standard normal quantile.
pub const Z95: f64 = 1.96;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("kernel failure in term {term}: {source}")]
    Kernel {
        term: String,
        #[source]
        source: KernelError,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl EstimatorError {
    fn in_term(term: &Tree) -> impl Fn(KernelError) -> EstimatorError + '_ {
        move |source| EstimatorError::Kernel {
            term: term.canonical(),
            source,
        }
    }
}

/// States with `±1` weights, stored flat.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedStateSet {
    dim: usize,
    states: Vec<f64>,
    signs: Vec<i8>,
}

impl WeightedStateSet {
    pub fn single(x0: &[f64]) -> Self {
        WeightedStateSet {
            dim: x0.len(),
            states: x0.to_vec(),
            signs: vec![1],
        }
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn sign(&self, j: usize) -> i8 {
        self.signs[j]
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn push(&mut self, x: &[f64], sign: i8) {
        assert_eq!(x.len(), self.dim);
        self.states.extend_from_slice(x);
        self.signs.push(sign);
    }

    /// `Σ_j ε_j f(x_j)`
    pub fn signed_sum(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        (0..self.len())
            .map(|j| self.signs[j] as f64 * f(self.state(j)))
            .sum()
    }

    fn step_all<K: Kernel>(
        &mut self,
        kernel: &K,
        delta: f64,
        z: &K::Noise,
        range: Range<usize>,
    ) -> Result<(), KernelError> {
        let d = self.dim;
        for j in range {
            kernel.step(delta, z, &mut self.states[j * d..(j + 1) * d])?;
        }
        Ok(())
    }

    /// Append a copy of every entry with the sign flipped.
    fn double(&mut self) {
        let len = self.len();
        self.states.extend_from_within(..len * self.dim);
        for j in 0..len {
            let s = self.signs[j];
            self.signs.push(-s);
        }
    }
}

/// Source of the order statistics and the step noises of one draw.
pub trait Draws<K: Kernel> {
    fn kappa(&mut self, r: usize, n: u32) -> Result<Vec<u32>, GridError>;
    /// `count` noises for consecutive sub-steps of `delta / count`.
    fn noises(&mut self, kernel: &K, delta: f64, count: usize) -> Vec<K::Noise>;
}

/// Everything drawn from a generator.
pub struct RngDraws<'a, R: ?Sized>(pub &'a mut R);

impl<K: Kernel, R: Rng + ?Sized> Draws<K> for RngDraws<'_, R> {
    fn kappa(&mut self, r: usize, n: u32) -> Result<Vec<u32>, GridError> {
        sample_order_stats(r, n, self.0)
    }

    fn noises(&mut self, kernel: &K, delta: f64, count: usize) -> Vec<K::Noise> {
        kernel.sample_fine(delta, count, self.0)
    }
}

/// Labels replayed from a preorder list; noises from a generator.
pub struct ReplayDraws<'a, R: ?Sized> {
    labels: std::slice::Iter<'a, Vec<u32>>,
    rng: &'a mut R,
}

impl<'a, R: ?Sized> ReplayDraws<'a, R> {
    pub fn new(labels: &'a [Vec<u32>], rng: &'a mut R) -> Self {
        ReplayDraws {
            labels: labels.iter(),
            rng,
        }
    }
}

impl<K: Kernel, R: Rng + ?Sized> Draws<K> for ReplayDraws<'_, R> {
    fn kappa(&mut self, r: usize, n: u32) -> Result<Vec<u32>, GridError> {
        let k = self
            .labels
            .next()
            .ok_or(GridError::BadLabel(NeveuWord::root()))?;
        if k.len() != r || k.iter().any(|&v| v >= n) {
            return Err(GridError::BadLabel(NeveuWord::root()));
        }
        Ok(k.clone())
    }

    fn noises(&mut self, kernel: &K, delta: f64, count: usize) -> Vec<K::Noise> {
        kernel.sample_fine(delta, count, self.rng)
    }
}

/// Records labels in preorder and noises in time order.
pub struct TracingDraws<'a, R: ?Sized, N> {
    inner: RngDraws<'a, R>,
    pub labels: Vec<Vec<u32>>,
    pub noises: Vec<N>,
}

impl<'a, R: ?Sized, N> TracingDraws<'a, R, N> {
    pub fn new(rng: &'a mut R) -> Self {
        TracingDraws {
            inner: RngDraws(rng),
            labels: Vec::new(),
            noises: Vec::new(),
        }
    }
}

impl<K: Kernel, R: Rng + ?Sized> Draws<K> for TracingDraws<'_, R, K::Noise> {
    fn kappa(&mut self, r: usize, n: u32) -> Result<Vec<u32>, GridError> {
        let k = <RngDraws<'_, R> as Draws<K>>::kappa(&mut self.inner, r, n)?;
        self.labels.push(k.clone());
        Ok(k)
    }

    fn noises(&mut self, kernel: &K, delta: f64, count: usize) -> Vec<K::Noise> {
        let z = self.inner.noises(kernel, delta, count);
        self.noises.extend(z.iter().cloned());
        z
    }
}

/// One draw of `Γ^A` at level `l`: `2^{#leaves}` coupled states.
///
/// Entry `j` corresponds to pruning the set of leaves whose position in
/// lexicographic order is a set bit of `j`; its sign is `(−1)^{popcount j}`.
pub fn gamma_sample<K: Kernel, D: Draws<K>>(
    kernel: &K,
    tree: &Tree,
    n: u32,
    l: u32,
    horizon: f64,
    x0: &[f64],
    draws: &mut D,
) -> Result<WeightedStateSet, EstimatorError> {
    if n < 2 {
        return Err(TreeError::RefinementTooSmall(n).into());
    }
    let branching = tree.max_branching() as u32;
    if branching > n {
        return Err(TreeError::BranchingExceedsN { n, branching }.into());
    }
    let steps: Vec<f64> = (0..=tree.depth() as u32 + 1)
        .map(|p| level_step(horizon, n, l + p))
        .collect();
    let mut set = WeightedStateSet::single(x0);
    branch(kernel, tree, n, 0, &steps, &mut set, draws).map_err(|e| match e {
        BranchError::Kernel(k) => EstimatorError::in_term(tree)(k),
        BranchError::Grid(g) => g.into(),
    })?;
    Ok(set)
}

enum BranchError {
    Kernel(KernelError),
    Grid(GridError),
}

impl From<KernelError> for BranchError {
    fn from(e: KernelError) -> Self {
        BranchError::Kernel(e)
    }
}

fn branch<K: Kernel, D: Draws<K>>(
    kernel: &K,
    tree: &Tree,
    n: u32,
    p: usize,
    steps: &[f64],
    set: &mut WeightedStateSet,
    draws: &mut D,
) -> Result<(), BranchError> {
    let h = steps[p];
    let sub = steps[p + 1];
    if tree.is_leaf() {
        let fines = draws.noises(kernel, h, n as usize);
        let coarse = kernel.aggregate(&fines);
        let len = set.len();
        set.double();
        set.step_all(kernel, h, &coarse, len..2 * len)?;
        for z in &fines {
            set.step_all(kernel, sub, z, 0..len)?;
        }
        return Ok(());
    }
    let kappa = draws
        .kappa(tree.num_children(), n)
        .map_err(BranchError::Grid)?;
    let mut next = 0u32;
    for (child, &k) in tree.children().iter().zip(&kappa) {
        plain_steps(kernel, k - next, sub, set, draws)?;
        branch(kernel, child, n, p + 1, steps, set, draws)?;
        next = k + 1;
    }
    plain_steps(kernel, n - next, sub, set, draws)
}

fn plain_steps<K: Kernel, D: Draws<K>>(
    kernel: &K,
    count: u32,
    delta: f64,
    set: &mut WeightedStateSet,
    draws: &mut D,
) -> Result<(), BranchError> {
    let len = set.len();
    for _ in 0..count {
        let z = draws.noises(kernel, delta, 1);
        set.step_all(kernel, delta, &z[0], 0..len)?;
    }
    Ok(())
}

/// Direct evaluation over explicit pruned grids; the reference for
/// [`gamma_sample`]. `finest_noises` drive the steps of the full grid.
pub fn gamma_oracle<K: Kernel>(
    kernel: &K,
    lt: &LabeledTree,
    horizon: f64,
    x0: &[f64],
    finest_noises: &[K::Noise],
) -> Result<WeightedStateSet, EstimatorError> {
    let tree = lt.tree();
    let leaves = tree.leaves();
    let full = grid(lt, 0);
    let mut out = WeightedStateSet {
        dim: x0.len(),
        states: Vec::new(),
        signs: Vec::new(),
    };
    for mask in 0u64..(1u64 << leaves.len()) {
        let lambda: BTreeSet<NeveuWord> = leaves
            .iter()
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 1)
            .map(|(_, w)| w.clone())
            .collect();
        let g = pruned_grid(lt, &lambda, 0)?;
        let x = run_on_grid(kernel, &g, &full, finest_noises, x0, horizon)
            .map_err(EstimatorError::in_term(&tree))?;
        let sign = if mask.count_ones() % 2 == 0 { 1 } else { -1 };
        out.push(&x, sign);
    }
    Ok(out)
}

/// Running mean and variance (Welford), mergeable.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let total = self.count + other.count;
        let d = other.mean - self.mean;
        let w = other.count as f64 / total as f64;
        self.mean += d * w;
        self.m2 += other.m2 + d * d * self.count as f64 * w;
        self.count = total;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; 0 with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn ci_half_width(&self) -> f64 {
        if self.count == 0 {
            return f64::INFINITY;
        }
        Z95 * (self.variance() / self.count as f64).sqrt()
    }
}

/// Accumulate `f(i)` for `i` in `range`, chunked at absolute multiples of
/// [`CHUNK`] and merged in index order.
pub fn accumulate<F>(range: Range<u64>, f: F) -> Result<RunningStats, EstimatorError>
where
    F: Fn(u64) -> Result<f64, EstimatorError> + Sync,
{
    if range.is_empty() {
        return Ok(RunningStats::default());
    }
    let first = range.start / CHUNK;
    let last = (range.end - 1) / CHUNK;
    let parts: Vec<Result<RunningStats, EstimatorError>> = (first..=last)
        .into_par_iter()
        .map(|c| {
            let lo = (c * CHUNK).max(range.start);
            let hi = ((c + 1) * CHUNK).min(range.end);
            let mut s = RunningStats::default();
            for i in lo..hi {
                s.push(f(i)?);
            }
            Ok(s)
        })
        .collect();
    let mut total = RunningStats::default();
    for p in parts {
        total.merge(&p?);
    }
    Ok(total)
}

/// `N_A = max(pilot, ⌈1.96² V / ε²⌉)`.
pub fn allocate_samples(variance: f64, eps: f64, pilot: u64) -> u64 {
    let raw = Z95 * Z95 * variance / (eps * eps);
    if !raw.is_finite() {
        return u64::MAX;
    }
    // values within rounding noise of an integer are not pushed up a unit
    let near = raw.round();
    let need = if (raw - near).abs() <= 1e-9 * near.max(1.0) {
        near
    } else {
        raw.ceil()
    };
    (need as u64).max(pilot)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Pilot run, then enough samples for a per-term half-width `eps`.
    TargetEps {
        eps: f64,
        pilot: u64,
    },
    FixedN {
        samples: u64,
    },
    /// Average over every labeling; only for noise-free kernels.
    Exhaustive,
}

/// Which terms to drop as unable to contribute at the requested order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pruning {
    None,
    ConstSigma,
    Ode,
}

impl Pruning {
    pub fn exponent(self) -> Rational {
        match self {
            Pruning::None => Rational::from(1),
            Pruning::ConstSigma => Rational::new(3, 2),
            Pruning::Ode => Rational::from(2),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EstimateConfig {
    pub nu: u32,
    pub n: u32,
    pub alpha: Rational,
    pub mode: SamplingMode,
    pub seed: u64,
    pub pruning: Pruning,
}

impl EstimateConfig {
    pub fn new(nu: u32, n: u32, mode: SamplingMode, seed: u64) -> Self {
        EstimateConfig {
            nu,
            n,
            alpha: Rational::from(1),
            mode,
            seed,
            pruning: Pruning::None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TermStats {
    pub tree: Tree,
    /// Exact `c(A)` in decimal.
    pub coefficient: String,
    pub mean: f64,
    pub std: f64,
    pub samples: u64,
    pub ci_half_width: f64,
    #[serde(skip)]
    pub variance: f64,
}

impl TermStats {
    fn from_stats(tree: Tree, coefficient: String, s: &RunningStats, exact: bool) -> Self {
        TermStats {
            tree,
            coefficient,
            mean: s.mean(),
            std: s.variance().sqrt(),
            samples: s.count(),
            ci_half_width: if exact { 0.0 } else { s.ci_half_width() },
            variance: s.variance(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateReport {
    pub value: f64,
    pub ci_half_width: f64,
    pub nu: u32,
    pub n: u32,
    pub alpha: String,
    pub model: String,
    pub kernel: String,
    pub mode: SamplingMode,
    pub seed: u64,
    pub pruning_a: String,
    pub terms: Vec<TermStats>,
    pub pruned: Vec<Tree>,
    /// Wall-clock time; kept out of the serialized report so runs stay byte-identical.
    #[serde(skip)]
    pub elapsed_secs: f64,
}

/// Term 0 (the single-node tree) is the plain `n`-step scheme; every other
/// term is `c(A) Σ_j ε_j f(x_j)` for one draw of `Γ^A_0`.
fn sample_term<K: Kernel>(
    model: &ModelSpec,
    kernel: &K,
    term: &ForestTerm,
    weight: f64,
    n: u32,
    rng: &mut impl Rng,
) -> Result<f64, EstimatorError> {
    if term.is_base() {
        let mut x = model.x0.clone();
        let delta = level_step(model.horizon, n, 1);
        for z in kernel.sample_fine(model.horizon, n as usize, rng) {
            kernel
                .step(delta, &z, &mut x)
                .map_err(EstimatorError::in_term(&term.tree))?;
        }
        return Ok((model.payoff)(&x));
    }
    let set = gamma_sample(
        kernel,
        &term.tree,
        n,
        0,
        model.horizon,
        &model.x0,
        &mut RngDraws(rng),
    )?;
    Ok(weight * set.signed_sum(|x| (model.payoff)(x)))
}

/// Monte Carlo statistics of one term over samples `range`.
pub fn term_estimate<K: Kernel>(
    model: &ModelSpec,
    kernel: &K,
    term: &ForestTerm,
    term_index: u64,
    n: u32,
    seed: u64,
    range: Range<u64>,
) -> Result<RunningStats, EstimatorError> {
    let weight = term.weight(n)?;
    accumulate(range, |i| {
        let mut rng = stream(seed, term_index, i);
        sample_term(model, kernel, term, weight, n, &mut rng)
    })
}

/// Statistics of the plain `n`-step scheme.
pub fn base_term_estimate<K: Kernel>(
    model: &ModelSpec,
    kernel: &K,
    n: u32,
    seed: u64,
    samples: u64,
) -> Result<RunningStats, EstimatorError> {
    term_estimate(
        model,
        kernel,
        &ForestTerm::new(Tree::leaf()),
        0,
        n,
        seed,
        0..samples,
    )
}

/// Exact expectation of a term for a noise-free kernel: the average over
/// all `c(A)` labelings.
pub fn exhaustive_term<K: Kernel>(
    model: &ModelSpec,
    kernel: &K,
    term: &ForestTerm,
    n: u32,
) -> Result<RunningStats, EstimatorError> {
    if !kernel.is_deterministic() {
        return Err(EstimatorError::Config(format!(
            "exhaustive mode needs a noise-free kernel, {} is random",
            kernel.name()
        )));
    }
    let mut rng = stream(0, 0, 0);
    if term.is_base() {
        let mut s = RunningStats::default();
        s.push(sample_term(model, kernel, term, 1.0, n, &mut rng)?);
        return Ok(s);
    }
    let weight = term.weight(n)?;
    let radices: Vec<Vec<Vec<u32>>> = term
        .branching
        .iter()
        .filter(|&&j| j > 0)
        .map(|&j| combinations(n, j as usize))
        .collect();
    let total: u64 = radices.iter().map(|r| r.len() as u64).product();
    accumulate(0..total, |mut idx| {
        let labels: Vec<Vec<u32>> = radices
            .iter()
            .map(|opts| {
                let k = (idx % opts.len() as u64) as usize;
                idx /= opts.len() as u64;
                opts[k].clone()
            })
            .collect();
        let mut rng = stream(0, 0, 0);
        let set = gamma_sample(
            kernel,
            &term.tree,
            n,
            0,
            model.horizon,
            &model.x0,
            &mut ReplayDraws::new(&labels, &mut rng),
        )?;
        Ok(weight * set.signed_sum(|x| (model.payoff)(x)))
    })
}

/// Order-`ν` estimate of `E[f(X_T)]`.
pub fn estimate<K: Kernel>(
    model: &ModelSpec,
    kernel: &K,
    cfg: &EstimateConfig,
) -> Result<EstimateReport, EstimatorError> {
    SchemeOrderParams {
        nu: cfg.nu,
        alpha: cfg.alpha,
        beta: 0,
        n: cfg.n,
    }
    .validate()?;
    match cfg.mode {
        SamplingMode::TargetEps { eps, pilot } if eps.is_nan() || eps <= 0.0 || pilot < 2 => {
            return Err(EstimatorError::Config(
                "target mode needs eps > 0 and a pilot of at least 2 samples".into(),
            ))
        }
        SamplingMode::FixedN { samples } if samples < 2 => {
            return Err(EstimatorError::Config(
                "need at least 2 samples per term".into(),
            ))
        }
        _ => {}
    }
    let forest = scheme_forest(cfg.nu, cfg.alpha)?;
    let a = cfg.pruning.exponent();
    let dropped: BTreeSet<Vec<NeveuWord>> = partition_forest(forest.clone(), cfg.nu, a)
        .1
        .iter()
        .map(|t| t.tree.order_key())
        .collect();
    let started = Instant::now();
    let mut terms = Vec::new();
    let mut pruned = Vec::new();
    let (mut value, mut var_ci) = (0.0, 0.0);
    for (idx, term) in forest.iter().enumerate() {
        if dropped.contains(&term.tree.order_key()) {
            pruned.push(term.tree.clone());
            continue;
        }
        let coefficient = if term.is_base() {
            "1".to_string()
        } else {
            term.coefficient(cfg.n)?.to_string()
        };
        let idx = idx as u64;
        let stats = match cfg.mode {
            SamplingMode::FixedN { samples } => {
                term_estimate(model, kernel, term, idx, cfg.n, cfg.seed, 0..samples)?
            }
            SamplingMode::TargetEps { eps, pilot } => {
                let mut s = term_estimate(model, kernel, term, idx, cfg.n, cfg.seed, 0..pilot)?;
                let need = allocate_samples(s.variance(), eps, pilot);
                if need > pilot {
                    let more =
                        term_estimate(model, kernel, term, idx, cfg.n, cfg.seed, pilot..need)?;
                    s.merge(&more);
                }
                s
            }
            SamplingMode::Exhaustive => exhaustive_term(model, kernel, term, cfg.n)?,
        };
        let ts = TermStats::from_stats(
            term.tree.clone(),
            coefficient,
            &stats,
            cfg.mode == SamplingMode::Exhaustive,
        );
        value += ts.mean;
        var_ci += ts.ci_half_width * ts.ci_half_width;
        terms.push(ts);
    }
    Ok(EstimateReport {
        value,
        ci_half_width: var_ci.sqrt(),
        nu: cfg.nu,
        n: cfg.n,
        alpha: cfg.alpha.to_string(),
        model: model.id.clone(),
        kernel: kernel.name().to_string(),
        mode: cfg.mode,
        seed: cfg.seed,
        pruning_a: a.to_string(),
        terms,
        pruned,
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub nu: u32,
    pub n: u32,
    pub estimate: f64,
    pub ci_half_width: f64,
    pub abs_error: f64,
    pub reference: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceTable {
    pub model: String,
    pub rows: Vec<ConvergenceRow>,
    /// `(ν, fitted slope)`; `None` when fewer than two rows are usable.
    pub slopes: Vec<(u32, Option<f64>)>,
}

pub const CSV_HEADER: &str = "nu,n,estimate,ci_half_width,abs_error,reference";

impl ConvergenceTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.17e},{:.6e},{:.6e},{:.17e}\n",
                r.nu, r.n, r.estimate, r.ci_half_width, r.abs_error, r.reference
            ));
        }
        out
    }

    pub fn slope(&self, nu: u32) -> Option<f64> {
        self.slopes
            .iter()
            .find(|(v, _)| *v == nu)
            .and_then(|(_, s)| *s)
    }
}

/// Least-squares slope of `log|err|` against `log(1/n)` over rows whose
/// error is nonzero and at least three half-widths.
pub fn fit_slope(rows: &[(u32, f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(_, err, ci)| *err > 0.0 && *err >= 3.0 * ci)
        .map(|&(n, err, _)| (-(n as f64).ln(), err.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Estimates over a `ν × n` grid of settings against `reference`.
/// Settings with `n` below the minimum refinement for `ν` are skipped.
pub fn convergence_sweep<K: Kernel>(
    model: &ModelSpec,
    kernel: &K,
    nus: &[u32],
    ns: &[u32],
    base: &EstimateConfig,
    reference: f64,
) -> Result<ConvergenceTable, EstimatorError> {
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &nu in nus {
        let mut pts = Vec::new();
        for &n in ns {
            let cfg = EstimateConfig {
                nu,
                n,
                ..base.clone()
            };
            let p = SchemeOrderParams {
                nu,
                alpha: cfg.alpha,
                beta: 0,
                n,
            };
            if p.validate().is_err() {
                continue;
            }
            let r = estimate(model, kernel, &cfg)?;
            let err = (r.value - reference).abs();
            pts.push((n, err, r.ci_half_width));
            rows.push(ConvergenceRow {
                nu,
                n,
                estimate: r.value,
                ci_half_width: r.ci_half_width,
                abs_error: err,
                reference,
            });
        }
        slopes.push((nu, fit_slope(&pts)));
    }
    Ok(ConvergenceTable {
        model: model.id.clone(),
        rows,
        slopes,
    })
}

/// Plain `n`-step scheme from `x0`; used by tests and smoke checks.
pub fn plain_scheme<K: Kernel, R: Rng + ?Sized>(
    kernel: &K,
    horizon: f64,
    n: u32,
    x0: &[f64],
    rng: &mut R,
) -> Result<State, KernelError> {
    let mut x = x0.to_vec();
    let delta = level_step(horizon, n, 1);
    for z in kernel.sample_fine(horizon, n as usize, rng) {
        kernel.step(delta, &z, &mut x)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::EulerKernel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn logistic() -> ModelSpec {
        ModelSpec::ode(
            "logistic",
            vec![0.4],
            1.0,
            Arc::new(|x, out| out[0] = 0.1 * (1.0 - x[0] * x[0])),
            Arc::new(|x| x[0]),
        )
    }

    #[test]
    fn single_node_draw() {
        let m = logistic();
        let k = EulerKernel::new(Arc::new(m.clone()));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = gamma_sample(
            &k,
            &Tree::leaf(),
            10,
            0,
            1.0,
            &[0.4],
            &mut RngDraws(&mut rng),
        )
        .unwrap();
        assert_eq!(set.signs(), &[1, -1]);
        let mut x = 0.4f64;
        for _ in 0..10 {
            x += 0.1 * 0.1 * (1.0 - x * x);
        }
        assert!((set.state(0)[0] - x).abs() < 1e-15);
        assert!((set.state(1)[0] - 0.484).abs() < 1e-15);
    }

    #[test]
    fn signs_follow_leaf_parity() {
        let m = logistic();
        let k = EulerKernel::new(Arc::new(m));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Tree = "{∅,1,11,2}".parse().unwrap();
        let set = gamma_sample(&k, &a, 3, 0, 1.0, &[0.4], &mut RngDraws(&mut rng)).unwrap();
        // bit 0 = leaf 11, bit 1 = leaf 2
        assert_eq!(set.signs(), &[1, -1, -1, 1]);
    }

    #[test]
    fn rejects_bad_refinement() {
        let k = EulerKernel::new(Arc::new(logistic()));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Tree = "{∅,1,2,3}".parse().unwrap();
        assert!(gamma_sample(&k, &a, 2, 0, 1.0, &[0.4], &mut RngDraws(&mut rng)).is_err());
        assert!(gamma_sample(
            &k,
            &Tree::leaf(),
            1,
            0,
            1.0,
            &[0.4],
            &mut RngDraws(&mut rng)
        )
        .is_err());
    }

    #[test]
    fn allocation_rule() {
        assert_eq!(allocate_samples(0.0, 1e-3, 1000), 1000);
        assert_eq!(allocate_samples(1e-3, 2e-4, 1000), 96040);
        let eps: f64 = 1e-3;
        let v = eps * eps * 1000.0 / (Z95 * Z95);
        assert_eq!(allocate_samples(v, eps, 1000), 1000);
    }

    #[test]
    fn running_stats_merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.01).collect();
        let mut all = RunningStats::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = RunningStats::default();
        let mut b = RunningStats::default();
        xs[..313].iter().for_each(|&x| a.push(x));
        xs[313..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert_eq!(a.count(), 1000);
        assert!((a.mean() - all.mean()).abs() < 1e-12);
        assert!((a.variance() - all.variance()).abs() < 1e-12);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let rows: Vec<(u32, f64, f64)> = [2u32, 4, 8, 16]
            .iter()
            .map(|&n| (n, 3.0 * (n as f64).powi(-2), 0.0))
            .collect();
        assert!((fit_slope(&rows).unwrap() - 2.0).abs() < 1e-9);
        assert_eq!(fit_slope(&rows[..1]), None);
        let noisy = [(2, 1e-3, 1e-3), (4, 1e-4, 0.0), (8, 1e-5, 0.0)];
        assert!((fit_slope(&noisy).unwrap() - 10f64.ln() / 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn nu_one_is_base_term_only() {
        let m = logistic();
        let k = EulerKernel::new(Arc::new(m.clone()));
        let cfg = EstimateConfig::new(1, 10, SamplingMode::FixedN { samples: 4 }, 1);
        let r = estimate(&m, &k, &cfg).unwrap();
        assert_eq!(r.terms.len(), 1);
        assert_eq!(r.ci_half_width, 0.0);
    }

    #[test]
    fn exhaustive_requires_deterministic_kernel() {
        let mut m = logistic();
        m.diffusion = vec![Arc::new(|x, o| o[0] = 0.1 * x[0])];
        let k = EulerKernel::new(Arc::new(m.clone()));
        let cfg = EstimateConfig::new(2, 4, SamplingMode::Exhaustive, 1);
        assert!(matches!(
            estimate(&m, &k, &cfg),
            Err(EstimatorError::Config(_))
        ));
    }
}
