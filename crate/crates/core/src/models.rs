//! Built-in benchmark problems.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::kernels::{JumpSpec, ModelSpec, Provenance, Reference};

/// Kernel families a model can be run with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    Euler,
    Nv,
    Pdmp,
}

impl FromStr for KernelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euler" => Ok(KernelKind::Euler),
            "nv" => Ok(KernelKind::Nv),
            "pdmp" => Ok(KernelKind::Pdmp),
            other => Err(format!("unknown kernel {other:?} (euler, nv, pdmp)")),
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Euler => "euler",
            KernelKind::Nv => "nv",
            KernelKind::Pdmp => "pdmp",
        })
    }
}

#[derive(Clone, Debug)]
pub struct BuiltinModel {
    pub id: &'static str,
    pub spec: ModelSpec,
    pub default_kernel: KernelKind,
}

impl BuiltinModel {
    pub fn reference(&self) -> Option<&Reference> {
        self.spec.reference.as_ref()
    }
}

fn closed_form(value: f64) -> Option<Reference> {
    Some(Reference {
        value,
        ci_half_width: None,
        provenance: Provenance::ClosedForm,
    })
}

/// `dX = c (1 − X²) dt`, `f(x) = x`, `T = 1`.
pub fn ode_logistic_with(coef: f64, x0: f64) -> ModelSpec {
    let mut m = ModelSpec::ode(
        "ode-logistic",
        vec![x0],
        1.0,
        Arc::new(move |x, out| out[0] = coef * (1.0 - x[0] * x[0])),
        Arc::new(|x| x[0]),
    );
    m.reference = closed_form((x0.atanh() + coef * m.horizon).tanh());
    m
}

pub fn ode_logistic() -> BuiltinModel {
    BuiltinModel {
        id: "ode-logistic",
        spec: ode_logistic_with(0.1, 0.4),
        default_kernel: KernelKind::Euler,
    }
}

/// `dX = k (θ − X) dt`, `f(x) = x`, `T = 1`.
pub fn ode_linear(k: f64, theta: f64, x0: f64) -> ModelSpec {
    let mut m = ModelSpec::ode(
        "ode-linear",
        vec![x0],
        1.0,
        Arc::new(move |x, out| out[0] = k * (theta - x[0])),
        Arc::new(|x| x[0]),
    );
    m.reference = closed_form(theta + (x0 - theta) * (-k * m.horizon).exp());
    m
}

/// Frozen order-5 reference for the quadratic-drift SDE, see README.
pub const SDE_REFERENCE: f64 = 0.252_383_361_638_173_9;
pub const SDE_REFERENCE_CI: f64 = 7.49e-5;
pub const SDE_REFERENCE_EPS: f64 = 2e-5;
pub const SDE_REFERENCE_SEED: u64 = 20_240_501;

/// Frozen order-5 reference for the TCP process, see README.
/// Run with a pilot of 10^6 samples per term: smaller pilots underestimate
/// the heavy-tailed correction terms.
pub const PDMP_REFERENCE: f64 = 1.258_600_402_453_857;
pub const PDMP_REFERENCE_CI: f64 = 8.91e-4;
pub const PDMP_REFERENCE_EPS: f64 = 2e-4;
pub const PDMP_REFERENCE_SEED: u64 = 20_240_502;

/// `dX = −k X² dt + σ X dW`, `f(x) = x²`, `T = 1`, with exact
/// splitting flows for the Stratonovich form.
pub fn sde_quadratic_with(k: f64, sigma: f64, x0: f64) -> ModelSpec {
    let mut m = ModelSpec::ode(
        "sde-quadratic",
        vec![x0],
        1.0,
        Arc::new(move |x, out| out[0] = -k * x[0] * x[0]),
        Arc::new(|x| x[0] * x[0]),
    );
    let a = 0.5 * sigma * sigma;
    m.diffusion = vec![Arc::new(move |x, out| out[0] = sigma * x[0])];
    m.strat_drift = Some(Arc::new(move |x, out| out[0] = -k * x[0] * x[0] - a * x[0]));
    m.strat_drift_flow = Some(Arc::new(move |t, x| {
        let x0 = x[0];
        x[0] = if a == 0.0 {
            x0 / (1.0 + k * x0 * t)
        } else {
            let e = (-a * t).exp();
            a * x0 * e / (a + k * x0 * (1.0 - e))
        };
    }));
    m.diffusion_flows = Some(vec![Arc::new(move |t, x| x[0] *= (sigma * t).exp())]);
    m.reference = if sigma == 0.0 {
        let y = x0 / (1.0 + k * x0 * m.horizon);
        closed_form(y * y)
    } else if (k, sigma, x0) == (1.0, 0.2, 1.0) {
        Some(Reference {
            value: SDE_REFERENCE,
            ci_half_width: Some(SDE_REFERENCE_CI),
            provenance: Provenance::HighOrderRun {
                nu: 5,
                n: 5,
                eps: SDE_REFERENCE_EPS,
                seed: SDE_REFERENCE_SEED,
            },
        })
    } else {
        None
    };
    m
}

pub fn sde_quadratic() -> BuiltinModel {
    BuiltinModel {
        id: "sde-quadratic",
        spec: sde_quadratic_with(1.0, 0.2, 1.0),
        default_kernel: KernelKind::Euler,
    }
}

/// TCP window size: unit drift, halving at rate `x`, `f(x) = x`, `T = 1`.
pub fn pdmp_tcp_with(x0: f64) -> ModelSpec {
    let mut m = ModelSpec::ode(
        "pdmp-tcp",
        vec![x0],
        1.0,
        Arc::new(|_, out| out[0] = 1.0),
        Arc::new(|x| x[0]),
    );
    m.jumps = Some(JumpSpec {
        jump: Arc::new(|_, x, out| out[0] = -0.5 * x[0]),
        rate: Arc::new(|x| x[0]),
        rate_bound: x0 * std::f64::consts::E,
        mark_mass: 1.0,
        mark_sampler: Arc::new(|_| 0.0),
    });
    if x0 == 1.0 {
        m.reference = Some(Reference {
            value: PDMP_REFERENCE,
            ci_half_width: Some(PDMP_REFERENCE_CI),
            provenance: Provenance::HighOrderRun {
                nu: 5,
                n: 5,
                eps: PDMP_REFERENCE_EPS,
                seed: PDMP_REFERENCE_SEED,
            },
        });
    }
    m
}

pub fn pdmp_tcp() -> BuiltinModel {
    BuiltinModel {
        id: "pdmp-tcp",
        spec: pdmp_tcp_with(1.0),
        default_kernel: KernelKind::Pdmp,
    }
}

/// Lookup of models by id; user models can be added.
#[derive(Clone, Debug)]
pub struct ModelRegistry {
    models: Vec<BuiltinModel>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        ModelRegistry {
            models: vec![ode_logistic(), sde_quadratic(), pdmp_tcp()],
        }
    }
}

impl ModelRegistry {
    pub fn register(&mut self, model: BuiltinModel) {
        self.models.retain(|m| m.id != model.id);
        self.models.push(model);
    }

    pub fn get(&self, id: &str) -> Option<&BuiltinModel> {
        self.models.iter().find(|m| m.id == id)
    }

    pub fn ids(&self) -> Vec<&'static str> {
        self.models.iter().map(|m| m.id).collect()
    }
}
