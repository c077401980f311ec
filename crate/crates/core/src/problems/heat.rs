//! One-dimensional heat equation `u_t = u_xx` on the periodic interval
//! `[-1, 1)`: the L2 gradient flow of the Dirichlet energy
//! `E(u) = 1/2 int u_x^2`. Every stage solve is diagonal in Fourier space
//! and therefore exact.

use crate::error::Result;
use crate::flow::{FlowProblem, ProxOptions, ProxReport, State};
use crate::problems::grid::PeriodicGrid1d;

#[derive(Clone)]
pub struct HeatProblem {
    grid: PeriodicGrid1d,
}

impl HeatProblem {
    pub fn new(n: usize) -> Result<Self> {
        Ok(Self {
            grid: PeriodicGrid1d::new(n, 1.0)?,
        })
    }

    pub fn grid(&self) -> &PeriodicGrid1d {
        &self.grid
    }

    /// The full multi-stage step acts mode-by-mode: stage m maps the modal
    /// amplitudes by `(S_m + k |xi|^2) a_m = sum_i gamma[m][i] a_i`. Used as
    /// the oracle for the generic stepper.
    pub fn modal_step(rows: &[Vec<f64>], lambda: f64, k: f64, a0: f64) -> f64 {
        let mut amps = vec![a0];
        for row in rows {
            let s: f64 = row.iter().sum();
            let rhs: f64 = row.iter().zip(&amps).map(|(g, a)| g * a).sum();
            amps.push(rhs / (s + k * lambda));
        }
        *amps.last().unwrap()
    }
}

impl FlowProblem for HeatProblem {
    fn name(&self) -> &str {
        "heat"
    }

    fn dof(&self) -> usize {
        self.grid.n()
    }

    fn energy(&self, u: &State) -> f64 {
        let n = self.grid.n() as f64;
        let coeffs = self.grid.forward(u);
        let weight = self.grid.spacing() / n;
        0.5 * weight
            * coeffs
                .iter()
                .zip(self.grid.xi())
                .map(|(c, xi)| xi * xi * c.norm_sqr())
                .sum::<f64>()
    }

    fn gradient(&self, u: &State) -> State {
        let mut coeffs = self.grid.forward(u);
        for (c, xi) in coeffs.iter_mut().zip(self.grid.xi()) {
            *c *= xi * xi;
        }
        self.grid.inverse(coeffs)
    }

    fn inner(&self, a: &State, b: &State) -> f64 {
        self.grid.spacing() * a.dot(b)
    }

    fn hessian_action(&self, _u: &State, v: &State) -> State {
        self.gradient(v)
    }

    fn precondition(&self, w: f64, _u: &State, r: &State) -> State {
        let mut coeffs = self.grid.forward(r);
        for (c, xi) in coeffs.iter_mut().zip(self.grid.xi()) {
            *c /= w + xi * xi;
        }
        self.grid.inverse(coeffs)
    }

    /// Exact per-mode solve: `u_hat = w a_hat / (w + |xi|^2)`.
    fn prox(
        &self,
        weight: f64,
        anchor: &State,
        _guess: &State,
        _opts: &ProxOptions,
    ) -> Result<(State, ProxReport)> {
        let mut coeffs = self.grid.forward(anchor);
        for (c, xi) in coeffs.iter_mut().zip(self.grid.xi()) {
            *c *= weight / (weight + xi * xi);
        }
        let u = self.grid.inverse(coeffs);
        Ok((
            u,
            ProxReport {
                newton_iterations: 0,
                residual: 0.0,
                tolerance: 0.0,
            },
        ))
    }

    fn initial_state(&self) -> State {
        State::from_iter(
            self.grid
                .points()
                .iter()
                .map(|x| (std::f64::consts::PI * x).sin()),
        )
    }

    fn exact_solution(&self, t: f64) -> Option<State> {
        let pi = std::f64::consts::PI;
        let decay = (-pi * pi * t).exp();
        Some(State::from_iter(
            self.grid.points().iter().map(|x| (pi * x).sin() * decay),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::GammaMatrix;
    use crate::flow::{integrate, step, ProxOptions};

    #[test]
    fn prox_satisfies_stage_equation_exactly() {
        let p = HeatProblem::new(64).unwrap();
        let anchor = p.initial_state();
        let w = 3.7;
        let (u, _) = p.prox(w, &anchor, &anchor, &ProxOptions::default()).unwrap();
        let res = &(&u - &anchor) * w + &p.gradient(&u);
        assert!(p.norm(&res) < 1e-12 * (1.0 + p.norm(&p.gradient(&anchor))));
    }

    #[test]
    fn constant_initial_data_is_invariant() {
        let p = HeatProblem::new(32).unwrap();
        let scheme = GammaMatrix::builtin("third_order").unwrap().to_float();
        let u0 = State::from_elem(32, 0.7);
        let out = integrate(&p, &scheme, &u0, 10.0, 3, &ProxOptions::default()).unwrap();
        for v in out.final_state.iter() {
            assert!((v - 0.7).abs() < 1e-13);
        }
    }

    #[test]
    fn multi_stage_step_matches_modal_recurrence() {
        let p = HeatProblem::new(64).unwrap();
        let scheme = GammaMatrix::builtin("second_order_a").unwrap().to_float();
        let u0 = p.initial_state();
        let k = 0.01;
        let (u1, _) = step(&p, &scheme, &u0, k, &ProxOptions::default()).unwrap();
        // initial data is the single mode xi = pi
        let lambda = std::f64::consts::PI.powi(2);
        let amp = HeatProblem::modal_step(&scheme.rows, lambda, k, 1.0);
        let expect = State::from_iter(
            p.grid()
                .points()
                .iter()
                .map(|x| (std::f64::consts::PI * x).sin() * amp),
        );
        let diff = p.norm(&(&u1 - &expect));
        assert!(diff < 1e-13, "modal mismatch {diff}");
    }
}
