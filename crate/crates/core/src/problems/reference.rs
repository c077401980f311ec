//! Second-order semi-implicit multistep reference scheme for the 2D
//! phase-field problems, used to manufacture high-accuracy reference
//! solutions. The implicit part is constant-coefficient and solved exactly
//! in Fourier space:
//!
//! Allen-Cahn:    (3/2 + k |xi|^2) u^{n+1} = 2 u^n - 1/2 u^{n-1} - k q^
//! Cahn-Hilliard: (3/2 + k |xi|^4) u^{n+1} = 2 u^n - 1/2 u^{n-1} - k |xi|^2 q^
//!
//! with the extrapolated nonlinearity `q = 2 W'(u^n) - W'(u^{n-1})`.
//! The second starting value `u^1` is bootstrapped with the certified
//! second-order multi-stage scheme run at `k/100`.

use rustfft::num_complex::Complex;

use crate::coefficients::GammaMatrix;
use crate::error::Result;
use crate::flow::{integrate, FlowProblem, ProxOptions, State};
use crate::problems::grid::PeriodicGrid2d;

type Cplx = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemiImplicitKind {
    AllenCahn,
    CahnHilliard,
}

/// Run the reference scheme for `n_steps` steps of size `k` from `u0`.
///
/// `problem` supplies the bootstrap integrator for `u^1` and the potential.
pub fn semi_implicit_reference<P: FlowProblem>(
    problem: &P,
    grid: &PeriodicGrid2d,
    wprime: impl Fn(f64) -> f64,
    kind: SemiImplicitKind,
    u0: &State,
    k: f64,
    n_steps: usize,
) -> Result<State> {
    if n_steps == 0 {
        return Ok(u0.clone());
    }
    let scheme = GammaMatrix::builtin("second_order_a")
        .expect("builtin")
        .to_float();
    let bootstrap = integrate(problem, &scheme, u0, k / 100.0, 100, &ProxOptions::default())?;
    let mut prev = u0.clone();
    let mut curr = bootstrap.final_state;

    for _ in 1..n_steps {
        let next = semi_implicit_step(grid, &wprime, kind, k, &curr, &prev);
        prev = curr;
        curr = next;
    }
    Ok(curr)
}

/// One multistep update `(u^n, u^{n-1}) -> u^{n+1}`.
pub fn semi_implicit_step(
    grid: &PeriodicGrid2d,
    wprime: impl Fn(f64) -> f64,
    kind: SemiImplicitKind,
    k: f64,
    curr: &State,
    prev: &State,
) -> State {
    let q = State::from_iter(
        curr.iter()
            .zip(prev.iter())
            .map(|(&a, &b)| 2.0 * wprime(a) - wprime(b)),
    );
    let q_hat = grid.forward(&q);
    let curr_hat = grid.forward(curr);
    let prev_hat = grid.forward(prev);
    let mut next_hat: Vec<Cplx> = Vec::with_capacity(curr_hat.len());
    for idx in 0..curr_hat.len() {
        let sym = grid.sym_lap(idx);
        let (implicit, nonlin) = match kind {
            SemiImplicitKind::AllenCahn => (sym, 1.0),
            SemiImplicitKind::CahnHilliard => (sym * sym, sym),
        };
        let rhs = 2.0 * curr_hat[idx] - 0.5 * prev_hat[idx] - k * nonlin * q_hat[idx];
        next_hat.push(rhs / (1.5 + k * implicit));
    }
    grid.inverse(next_hat)
}

/// Scalar recurrence of the same scheme on a single linear mode (`W' = 0`).
pub fn semi_implicit_linear_mode(
    kind: SemiImplicitKind,
    sym: f64,
    k: f64,
    a0: f64,
    a1: f64,
    n_steps: usize,
) -> f64 {
    let implicit = match kind {
        SemiImplicitKind::AllenCahn => sym,
        SemiImplicitKind::CahnHilliard => sym * sym,
    };
    let (mut prev, mut curr) = (a0, a1);
    for _ in 1..n_steps {
        let next = (2.0 * curr - 0.5 * prev) / (1.5 + k * implicit);
        prev = curr;
        curr = next;
    }
    curr
}
