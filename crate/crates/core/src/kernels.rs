//! One-step kernels `Θ(δ, Z, x)` with a shared-noise contract.
//!
//! A kernel samples the noises of `n` fine sub-steps, aggregates them into
//! the noise of the enclosing coarse step, and applies a step as a pure
//! function of `(δ, Z, x)`. All randomness lives in the noise values.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::Serialize;
use smallvec::SmallVec;
use thiserror::Error;

use crate::random_grids::Grid;

pub type State = Vec<f64>;

/// `x ↦ v(x)`, written into the output slice.
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// In-place exact flow `x ← exp(t V) x`.
pub type Flow = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Jump displacement `c(z, x)`, written into the output slice.
pub type JumpMap = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type MarkSampler = Arc<dyn Fn(&mut dyn rand::RngCore) -> f64 + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("jump rate {rate} exceeds the bound {bound} at state {state:?}")]
    RateBoundViolated {
        rate: f64,
        bound: f64,
        state: Vec<f64>,
    },
    #[error("grid does not align with the reference grid at tick {0}")]
    Misaligned(u128),
    #[error("expected {expected} noises, got {got}")]
    NoiseCount { expected: usize, got: usize },
    #[error("model {model} lacks {what} required by the {kernel} kernel")]
    MissingCallback {
        model: String,
        kernel: &'static str,
        what: &'static str,
    },
    #[error("non-finite state {0:?}")]
    NonFinite(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    ClosedForm,
    HighOrderRun {
        nu: u32,
        n: u32,
        eps: f64,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Reference {
    pub value: f64,
    /// 95% half-width; `None` for closed forms.
    pub ci_half_width: Option<f64>,
    pub provenance: Provenance,
}

/// Piecewise deterministic jump data.
#[derive(Clone)]
pub struct JumpSpec {
    pub jump: JumpMap,
    pub rate: ScalarFn,
    /// `Λ̄`: must dominate the rate on every visited state.
    pub rate_bound: f64,
    /// `ν(E)`
    pub mark_mass: f64,
    /// Draws from `ν / ν(E)`.
    pub mark_sampler: MarkSampler,
}

/// A Markov model: dynamics, start point, horizon and payoff.
#[derive(Clone)]
pub struct ModelSpec {
    pub id: String,
    pub dim: usize,
    pub drift: VectorField,
    /// Columns `σ_j`; empty for an ODE.
    pub diffusion: Vec<VectorField>,
    /// Stratonovich drift for the splitting scheme.
    pub strat_drift: Option<VectorField>,
    /// Exact flow of the Stratonovich drift.
    pub strat_drift_flow: Option<Flow>,
    /// Exact flows of the diffusion columns, one per column.
    pub diffusion_flows: Option<Vec<Flow>>,
    pub jumps: Option<JumpSpec>,
    pub x0: State,
    pub horizon: f64,
    pub payoff: ScalarFn,
    pub reference: Option<Reference>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("brownian_dim", &self.diffusion.len())
            .field("has_jumps", &self.jumps.is_some())
            .field("x0", &self.x0)
            .field("horizon", &self.horizon)
            .field("reference", &self.reference)
            .finish()
    }
}

impl ModelSpec {
    /// An autonomous ODE `dX = b(X) dt`.
    pub fn ode(id: &str, x0: State, horizon: f64, drift: VectorField, payoff: ScalarFn) -> Self {
        ModelSpec {
            id: id.to_string(),
            dim: x0.len(),
            drift,
            diffusion: Vec::new(),
            strat_drift: None,
            strat_drift_flow: None,
            diffusion_flows: None,
            jumps: None,
            x0,
            horizon,
            payoff,
            reference: None,
        }
    }

    pub fn brownian_dim(&self) -> usize {
        self.diffusion.len()
    }
}

/// `h_p = T / n^p`. Every code path computes step sizes through this
/// function so that coupled evaluations see bit-identical deltas.
pub fn level_step(horizon: f64, n: u32, p: u32) -> f64 {
    horizon / (n as f64).powi(p as i32)
}

pub trait Kernel: Send + Sync {
    type Noise: Clone + Send + Sync + fmt::Debug;

    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    /// True when the noise carries no randomness at all.
    fn is_deterministic(&self) -> bool {
        false
    }

    /// `n` independent noises for sub-steps of size `delta / n`.
    fn sample_fine<R: Rng + ?Sized>(&self, delta: f64, n: usize, rng: &mut R) -> Vec<Self::Noise>;

    /// Noise of the coarse step covering `fines`.
    fn aggregate(&self, fines: &[Self::Noise]) -> Self::Noise;

    /// In-place step of size `delta`.
    fn step(&self, delta: f64, z: &Self::Noise, x: &mut [f64]) -> Result<(), KernelError>;

    fn apply(&self, delta: f64, z: &Self::Noise, x: &[f64]) -> Result<State, KernelError> {
        let mut y = x.to_vec();
        self.step(delta, z, &mut y)?;
        Ok(y)
    }
}

type Buf = SmallVec<[f64; 4]>;

fn zeros(d: usize) -> Buf {
    SmallVec::from_elem(0.0, d)
}

/// Euler scheme; with no diffusion columns it is the explicit Euler ODE
/// scheme and its noise is empty.
#[derive(Clone, Debug)]
pub struct EulerKernel {
    model: Arc<ModelSpec>,
}

impl EulerKernel {
    pub fn new(model: Arc<ModelSpec>) -> Self {
        EulerKernel { model }
    }
}

/// Brownian increments of one step.
pub type GaussNoise = SmallVec<[f64; 2]>;

impl Kernel for EulerKernel {
    type Noise = GaussNoise;

    fn name(&self) -> &'static str {
        if self.model.diffusion.is_empty() {
            "ode-euler"
        } else {
            "euler"
        }
    }

    fn dim(&self) -> usize {
        self.model.dim
    }

    fn is_deterministic(&self) -> bool {
        self.model.diffusion.is_empty()
    }

    fn sample_fine<R: Rng + ?Sized>(&self, delta: f64, n: usize, rng: &mut R) -> Vec<GaussNoise> {
        let m = self.model.brownian_dim();
        let sd = (delta / n as f64).sqrt();
        (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }

    fn aggregate(&self, fines: &[GaussNoise]) -> GaussNoise {
        let m = self.model.brownian_dim();
        let mut out: GaussNoise = SmallVec::from_elem(0.0, m);
        for z in fines {
            for (o, v) in out.iter_mut().zip(z) {
                *o += v;
            }
        }
        out
    }

    fn step(&self, delta: f64, z: &GaussNoise, x: &mut [f64]) -> Result<(), KernelError> {
        let d = x.len();
        let mut inc = zeros(d);
        (self.model.drift)(x, &mut inc);
        for v in inc.iter_mut() {
            *v *= delta;
        }
        if !self.model.diffusion.is_empty() {
            let mut col = zeros(d);
            for (sigma, dw) in self.model.diffusion.iter().zip(z) {
                sigma(x, &mut col);
                for (i, c) in col.iter().enumerate() {
                    inc[i] += c * dw;
                }
            }
        }
        for (xi, v) in x.iter_mut().zip(&inc) {
            *xi += v;
        }
        Ok(())
    }
}

/// Ninomiya–Victoir splitting noise: Brownian increments and a direction bit.
#[derive(Clone, Debug, PartialEq)]
pub struct NvNoise {
    pub dw: GaussNoise,
    pub rho: bool,
}

/// Ninomiya–Victoir splitting with exact flows when the model provides them
/// and a classical Runge–Kutta fallback otherwise.
#[derive(Clone, Debug)]
pub struct NvKernel {
    model: Arc<ModelSpec>,
    rk_substeps: u32,
}

impl NvKernel {
    pub fn new(model: Arc<ModelSpec>) -> Result<Self, KernelError> {
        if model.strat_drift.is_none() && model.strat_drift_flow.is_none() {
            return Err(KernelError::MissingCallback {
                model: model.id.clone(),
                kernel: "nv",
                what: "a Stratonovich drift",
            });
        }
        Ok(NvKernel {
            model,
            rk_substeps: 4,
        })
    }

    pub fn with_rk_substeps(mut self, k: u32) -> Self {
        self.rk_substeps = k.max(1);
        self
    }

    fn drift_flow(&self, t: f64, x: &mut [f64]) {
        match (&self.model.strat_drift_flow, &self.model.strat_drift) {
            (Some(flow), _) => flow(t, x),
            (None, Some(v)) => rk4_flow(v, t, x, self.rk_substeps),
            (None, None) => unreachable!("checked at construction"),
        }
    }

    fn column_flow(&self, j: usize, t: f64, x: &mut [f64]) {
        match &self.model.diffusion_flows {
            Some(flows) => flows[j](t, x),
            None => rk4_flow(&self.model.diffusion[j], t, x, self.rk_substeps),
        }
    }
}

/// Integrate `y' = v(y)` over `[0, t]` with `substeps` classical RK4 steps.
pub fn rk4_flow(v: &VectorField, t: f64, x: &mut [f64], substeps: u32) {
    let d = x.len();
    let h = t / substeps as f64;
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (zeros(d), zeros(d), zeros(d), zeros(d), zeros(d));
    for _ in 0..substeps {
        v(x, &mut k1);
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        v(&tmp, &mut k2);
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        v(&tmp, &mut k3);
        for i in 0..d {
            tmp[i] = x[i] + h * k3[i];
        }
        v(&tmp, &mut k4);
        for i in 0..d {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

impl Kernel for NvKernel {
    type Noise = NvNoise;

    fn name(&self) -> &'static str {
        "nv"
    }

    fn dim(&self) -> usize {
        self.model.dim
    }

    fn sample_fine<R: Rng + ?Sized>(&self, delta: f64, n: usize, rng: &mut R) -> Vec<NvNoise> {
        let m = self.model.brownian_dim();
        let sd = (delta / n as f64).sqrt();
        (0..n)
            .map(|_| NvNoise {
                dw: (0..m)
                    .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
                rho: rng.random::<bool>(),
            })
            .collect()
    }

    fn aggregate(&self, fines: &[NvNoise]) -> NvNoise {
        let m = self.model.brownian_dim();
        let mut dw: GaussNoise = SmallVec::from_elem(0.0, m);
        for z in fines {
            for (o, v) in dw.iter_mut().zip(&z.dw) {
                *o += v;
            }
        }
        NvNoise {
            dw,
            rho: fines.first().map(|z| z.rho).unwrap_or(false),
        }
    }

    fn step(&self, delta: f64, z: &NvNoise, x: &mut [f64]) -> Result<(), KernelError> {
        let m = self.model.brownian_dim();
        self.drift_flow(0.5 * delta, x);
        if z.rho {
            for j in (0..m).rev() {
                self.column_flow(j, z.dw[j], x);
            }
        } else {
            for j in 0..m {
                self.column_flow(j, z.dw[j], x);
            }
        }
        self.drift_flow(0.5 * delta, x);
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(KernelError::NonFinite(x.to_vec()))
        }
    }
}

/// A proposed jump: time inside the step, mark, acceptance uniform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: f64,
    pub u: f64,
}

/// Proposed jumps of one step, in time order.
#[derive(Clone, Debug, PartialEq)]
pub struct PdmpNoise {
    pub duration: f64,
    pub events: SmallVec<[JumpEvent; 2]>,
}

/// Drift step followed by thinned jumps at the post-drift point.
#[derive(Clone, Debug)]
pub struct PdmpKernel {
    model: Arc<ModelSpec>,
}

impl PdmpKernel {
    pub fn new(model: Arc<ModelSpec>) -> Result<Self, KernelError> {
        if model.jumps.is_none() {
            return Err(KernelError::MissingCallback {
                model: model.id.clone(),
                kernel: "pdmp",
                what: "jump data",
            });
        }
        Ok(PdmpKernel { model })
    }

    fn jumps(&self) -> &JumpSpec {
        self.model.jumps.as_ref().expect("checked at construction")
    }
}

impl Kernel for PdmpKernel {
    type Noise = PdmpNoise;

    fn name(&self) -> &'static str {
        "pdmp"
    }

    fn dim(&self) -> usize {
        self.model.dim
    }

    fn sample_fine<R: Rng + ?Sized>(
        &self,
        delta: f64,
        n: usize,
        mut rng: &mut R,
    ) -> Vec<PdmpNoise> {
        let js = self.jumps();
        let intensity = js.mark_mass * js.rate_bound * delta;
        let count = if intensity > 0.0 {
            Poisson::new(intensity)
                .expect("positive intensity")
                .sample(&mut rng) as usize
        } else {
            0
        };
        let mut times: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * delta).collect();
        times.sort_by(f64::total_cmp);
        let sub = delta / n as f64;
        let mut out: Vec<PdmpNoise> = (0..n)
            .map(|_| PdmpNoise {
                duration: sub,
                events: SmallVec::new(),
            })
            .collect();
        for t in times {
            let k = ((t / sub) as usize).min(n - 1);
            let mark = (js.mark_sampler)(&mut rng);
            let u = rng.random::<f64>();
            out[k].events.push(JumpEvent {
                time: t - k as f64 * sub,
                mark,
                u,
            });
        }
        out
    }

    fn aggregate(&self, fines: &[PdmpNoise]) -> PdmpNoise {
        let mut offset = 0.0;
        let mut events = SmallVec::new();
        for z in fines {
            events.extend(z.events.iter().map(|e| JumpEvent {
                time: e.time + offset,
                ..*e
            }));
            offset += z.duration;
        }
        PdmpNoise {
            duration: offset,
            events,
        }
    }

    fn step(&self, delta: f64, z: &PdmpNoise, x: &mut [f64]) -> Result<(), KernelError> {
        let js = self.jumps();
        let d = x.len();
        let mut buf = zeros(d);
        (self.model.drift)(x, &mut buf);
        for (xi, b) in x.iter_mut().zip(&buf) {
            *xi += b * delta;
        }
        for e in &z.events {
            let rate = (js.rate)(x);
            if rate > js.rate_bound || rate < 0.0 || !rate.is_finite() {
                return Err(KernelError::RateBoundViolated {
                    rate,
                    bound: js.rate_bound,
                    state: x.to_vec(),
                });
            }
            if e.u <= rate / js.rate_bound {
                (js.jump)(e.mark, x, &mut buf);
                for (xi, c) in x.iter_mut().zip(&buf) {
                    *xi += c;
                }
            }
        }
        Ok(())
    }
}

/// Compose `kernel` along `grid`, each step driven by the aggregate of the
/// `finest_noises` it covers on `reference` (a refinement of `grid`).
pub fn run_on_grid<K: Kernel>(
    kernel: &K,
    grid: &Grid,
    reference: &Grid,
    finest_noises: &[K::Noise],
    x0: &[f64],
    horizon: f64,
) -> Result<State, KernelError> {
    if finest_noises.len() != reference.num_steps() {
        return Err(KernelError::NoiseCount {
            expected: reference.num_steps(),
            got: finest_noises.len(),
        });
    }
    let d = grid.finest().max(reference.finest());
    let coarse = grid.refined_to(d);
    let fine = reference.refined_to(d);
    let levels = grid.step_levels().ok_or(KernelError::Misaligned(0))?;
    let mut x = x0.to_vec();
    let mut j = 0usize;
    for (k, w) in coarse.ticks().windows(2).enumerate() {
        if fine.ticks().get(j) != Some(&w[0]) {
            return Err(KernelError::Misaligned(w[0]));
        }
        let start = j;
        while fine.ticks().get(j + 1).is_some_and(|&t| t <= w[1]) {
            j += 1;
        }
        if fine.ticks()[j] != w[1] || j == start {
            return Err(KernelError::Misaligned(w[1]));
        }
        let delta = level_step(horizon, grid.n(), grid.level() + levels[k]);
        if j - start == 1 {
            kernel.step(delta, &finest_noises[start], &mut x)?;
        } else {
            let z = kernel.aggregate(&finest_noises[start..j]);
            kernel.step(delta, &z, &mut x)?;
        }
    }
    Ok(x)
}
