//! Concrete gradient-flow problems: two scalar ODE energies, the periodic
//! heat equation, Allen-Cahn in one and two dimensions, and Cahn-Hilliard
//! with the H^-1 metric, plus the semi-implicit reference scheme used to
//! manufacture reference solutions for the 2D studies.

pub mod allen_cahn;
pub mod cahn_hilliard;
pub mod grid;
pub mod heat;
pub mod ode;
pub mod reference;
pub mod well;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowProblem, ProxOptions, ProxReport, State};

pub use allen_cahn::{AllenCahn1d, AllenCahn2d};
pub use cahn_hilliard::CahnHilliard2d;
pub use grid::{DirichletGrid1d, PeriodicGrid1d, PeriodicGrid2d};
pub use heat::HeatProblem;
pub use ode::{CoshOde, NonsmoothOde};
pub use reference::{semi_implicit_reference, SemiImplicitKind};
pub use well::DoubleWell;

/// Problem selection plus grid parameters, as read from CLI/JSON configs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProblemSpec {
    pub problem: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridSpec {
    pub n: usize,
}

impl ProblemSpec {
    pub fn named(problem: &str) -> Self {
        Self {
            problem: problem.to_string(),
            grid: None,
        }
    }

    pub fn with_n(problem: &str, n: usize) -> Self {
        Self {
            problem: problem.to_string(),
            grid: Some(GridSpec { n }),
        }
    }
}

/// A constructed problem, dispatching [`FlowProblem`] to the concrete type
/// (so per-problem prox overrides are preserved behind the enum).
pub enum Problem {
    Cosh(CoshOde),
    Nonsmooth(NonsmoothOde),
    Heat(HeatProblem),
    AllenCahn1d(AllenCahn1d),
    AllenCahn2d(AllenCahn2d),
    CahnHilliard2d(CahnHilliard2d),
}

pub const PROBLEM_NAMES: [&str; 6] = [
    "cosh_ode",
    "nonsmooth_ode",
    "heat",
    "allen_cahn_1d",
    "allen_cahn_2d",
    "cahn_hilliard_2d",
];

macro_rules! dispatch {
    ($self:expr, $inner:pat => $body:expr) => {
        match $self {
            Problem::Cosh($inner) => $body,
            Problem::Nonsmooth($inner) => $body,
            Problem::Heat($inner) => $body,
            Problem::AllenCahn1d($inner) => $body,
            Problem::AllenCahn2d($inner) => $body,
            Problem::CahnHilliard2d($inner) => $body,
        }
    };
}

impl Problem {
    pub fn from_spec(spec: &ProblemSpec) -> Result<Self> {
        let n = spec.grid.as_ref().map(|g| g.n);
        Self::by_name(&spec.problem, n)
    }

    pub fn by_name(name: &str, n: Option<usize>) -> Result<Self> {
        Ok(match name {
            "cosh_ode" => Problem::Cosh(CoshOde::new()),
            "nonsmooth_ode" => Problem::Nonsmooth(NonsmoothOde::new()),
            "heat" => Problem::Heat(HeatProblem::new(n.unwrap_or(256))?),
            "allen_cahn_1d" => Problem::AllenCahn1d(AllenCahn1d::new(n.unwrap_or(2048))),
            "allen_cahn_2d" => Problem::AllenCahn2d(AllenCahn2d::new(n.unwrap_or(256))?),
            "cahn_hilliard_2d" => Problem::CahnHilliard2d(CahnHilliard2d::new(n.unwrap_or(256))?),
            other => return Err(Error::UnknownProblem(other.to_string())),
        })
    }

    /// Final time used by the published experiments for this problem.
    pub fn default_t_final(&self) -> f64 {
        match self {
            Problem::Cosh(_) | Problem::Nonsmooth(_) => 2.0,
            Problem::Heat(_) => 0.125,
            Problem::AllenCahn1d(_) => 5.0,
            Problem::AllenCahn2d(_) | Problem::CahnHilliard2d(_) => 20.0,
        }
    }

    /// Whether the problem exposes an exact solution.
    pub fn has_exact_solution(&self) -> bool {
        dispatch!(self, p => p.exact_solution(0.0).is_some())
    }

    /// Semi-implicit reference run (2D problems only).
    pub fn semi_implicit(&self, u0: &State, k: f64, n_steps: usize) -> Result<State> {
        match self {
            Problem::AllenCahn2d(p) => semi_implicit_reference(
                p,
                p.grid(),
                |u| p.well().derivative(u),
                SemiImplicitKind::AllenCahn,
                u0,
                k,
                n_steps,
            ),
            Problem::CahnHilliard2d(p) => semi_implicit_reference(
                p,
                p.grid(),
                |u| p.well().derivative(u),
                SemiImplicitKind::CahnHilliard,
                u0,
                k,
                n_steps,
            ),
            _ => Err(Error::Config(format!(
                "problem '{}' has no semi-implicit reference scheme",
                self.name()
            ))),
        }
    }

    /// Grid metadata for state export: `(dimension, n, half_width)`.
    pub fn layout(&self) -> (usize, usize, f64) {
        match self {
            Problem::Cosh(_) | Problem::Nonsmooth(_) => (0, 1, 0.0),
            Problem::Heat(p) => (1, p.grid().n(), p.grid().half_width()),
            Problem::AllenCahn1d(p) => (1, p.grid().n(), 10.0),
            Problem::AllenCahn2d(p) => (2, p.grid().n(), p.grid().half_width()),
            Problem::CahnHilliard2d(p) => (2, p.grid().n(), p.grid().half_width()),
        }
    }
}

impl FlowProblem for Problem {
    fn name(&self) -> &str {
        dispatch!(self, p => p.name())
    }

    fn dof(&self) -> usize {
        dispatch!(self, p => p.dof())
    }

    fn energy(&self, u: &State) -> f64 {
        dispatch!(self, p => p.energy(u))
    }

    fn gradient(&self, u: &State) -> State {
        dispatch!(self, p => p.gradient(u))
    }

    fn inner(&self, a: &State, b: &State) -> f64 {
        dispatch!(self, p => p.inner(a, b))
    }

    fn hessian_action(&self, u: &State, v: &State) -> State {
        dispatch!(self, p => p.hessian_action(u, v))
    }

    fn precondition(&self, w: f64, u: &State, r: &State) -> State {
        dispatch!(self, p => p.precondition(w, u, r))
    }

    fn prox(
        &self,
        weight: f64,
        anchor: &State,
        guess: &State,
        opts: &ProxOptions,
    ) -> Result<(State, ProxReport)> {
        dispatch!(self, p => p.prox(weight, anchor, guess, opts))
    }

    fn initial_state(&self) -> State {
        dispatch!(self, p => p.initial_state())
    }

    fn exact_solution(&self, t: f64) -> Option<State> {
        dispatch!(self, p => p.exact_solution(t))
    }

    fn check_step(&self, step: usize, u_new: &State, u_prev: &State) -> Result<()> {
        dispatch!(self, p => p.check_step(step, u_new, u_prev))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_published_problem_constructs() {
        for name in PROBLEM_NAMES {
            let p = Problem::by_name(name, Some(16)).or_else(|_| Problem::by_name(name, None));
            assert!(p.is_ok(), "{name}");
        }
    }

    #[test]
    fn unknown_problem_is_an_error() {
        assert!(matches!(
            Problem::by_name("wave_equation", None),
            Err(Error::UnknownProblem(_))
        ));
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = ProblemSpec::with_n("heat", 128);
        let text = serde_json::to_string(&spec).unwrap();
        let back: ProblemSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
