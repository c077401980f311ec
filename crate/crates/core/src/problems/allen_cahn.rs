//! Allen-Cahn flows: `u_t = lap(u) - W'(u)`, the L2 gradient flow of
//! `E(u) = int 1/2 |grad u|^2 + W(u)`.

use crate::error::{Error, Result};
use crate::flow::{FlowProblem, ProxOptions, ProxReport, State};
use crate::problems::grid::{DirichletGrid1d, PeriodicGrid2d};
use crate::problems::well::DoubleWell;

/// One-dimensional Allen-Cahn on `[-10, 10]` with Dirichlet values ±1,
/// the unequal-depth well, and the traveling-wave initial condition
/// `tanh(4x + 20)`. Stage solves use damped Newton with direct tridiagonal
/// elimination.
#[derive(Debug, Clone)]
pub struct AllenCahn1d {
    grid: DirichletGrid1d,
    well: DoubleWell,
}

impl AllenCahn1d {
    pub fn new(n: usize) -> Self {
        Self {
            grid: DirichletGrid1d::new(n, 10.0, -1.0, 1.0),
            well: DoubleWell::Unequal,
        }
    }

    pub fn grid(&self) -> &DirichletGrid1d {
        &self.grid
    }

    /// Front position: linear interpolation of the zero crossing.
    pub fn front_position(&self, u: &State) -> Option<f64> {
        let x = self.grid.points();
        for j in 0..u.len() - 1 {
            if u[j] <= 0.0 && u[j + 1] > 0.0 {
                let t = -u[j] / (u[j + 1] - u[j]);
                return Some(x[j] + t * (x[j + 1] - x[j]));
            }
        }
        None
    }

    fn objective(&self, weight: f64, anchor: &State, u: &State) -> f64 {
        let d = u - anchor;
        self.energy(u) + 0.5 * weight * self.inner(&d, &d)
    }
}

impl FlowProblem for AllenCahn1d {
    fn name(&self) -> &str {
        "allen_cahn_1d"
    }

    fn dof(&self) -> usize {
        self.grid.n()
    }

    fn energy(&self, u: &State) -> f64 {
        let h = self.grid.spacing();
        let (bl, br) = self.grid.boundary();
        let n = u.len();
        let mut grad_sq = ((u[0] - bl) / h).powi(2) + ((br - u[n - 1]) / h).powi(2);
        for j in 0..n - 1 {
            grad_sq += ((u[j + 1] - u[j]) / h).powi(2);
        }
        let well: f64 = u.iter().map(|&v| self.well.value(v)).sum();
        (0.5 * grad_sq + well) * h
    }

    fn gradient(&self, u: &State) -> State {
        let mut g = self.grid.neg_laplacian(u);
        for (gj, &uj) in g.iter_mut().zip(u.iter()) {
            *gj += self.well.derivative(uj);
        }
        g
    }

    fn inner(&self, a: &State, b: &State) -> f64 {
        self.grid.spacing() * a.dot(b)
    }

    fn hessian_action(&self, u: &State, v: &State) -> State {
        let mut hv = self.grid.neg_laplacian_homogeneous(v);
        for ((out, &vj), &uj) in hv.iter_mut().zip(v.iter()).zip(u.iter()) {
            *out += self.well.second_derivative(uj) * vj;
        }
        hv
    }

    fn prox(
        &self,
        weight: f64,
        anchor: &State,
        guess: &State,
        opts: &ProxOptions,
    ) -> Result<(State, ProxReport)> {
        let h2 = self.grid.spacing().powi(2);
        let grad_anchor = self.gradient(anchor);
        let scale = weight * self.norm(anchor) + self.norm(&grad_anchor) + 1.0;
        let tol = opts.tol_res * scale;

        let mut u = guess.clone();
        let mut f_u = self.objective(weight, anchor, &u);
        let mut stalls = 0;

        for iter in 0..opts.max_newton {
            let residual = &(&u - anchor) * weight + &self.gradient(&u);
            let res_norm = self.norm(&residual);
            if !res_norm.is_finite() {
                return Err(Error::NonFinite {
                    context: "allen_cahn_1d prox residual".into(),
                });
            }
            if res_norm <= tol {
                return Ok((
                    u,
                    ProxReport {
                        newton_iterations: iter,
                        residual: res_norm,
                        tolerance: tol,
                    },
                ));
            }

            // J = w I + (-lap_h + W''(u)): tridiagonal, diagonally dominant
            // at these resolutions; solve directly.
            let diag: Vec<f64> = u
                .iter()
                .map(|&uj| weight + 2.0 / h2 + self.well.second_derivative(uj))
                .collect();
            let rhs: Vec<f64> = residual.iter().map(|r| -r).collect();
            let direction = State::from_vec(solve_tridiagonal(&diag, -1.0 / h2, &rhs));
            let mut slope = self.inner(&residual, &direction);
            let dir = if slope < 0.0 { direction } else {
                slope = -res_norm * res_norm;
                residual.mapv(|x| -x)
            };

            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial = &u + &(&dir * t);
                let f_trial = self.objective(weight, anchor, &trial);
                if f_trial.is_finite() && f_trial <= f_u + 1e-4 * t * slope + 1e-15 * f_u.abs() {
                    if t * self.norm(&dir) <= f64::EPSILON * (1.0 + self.norm(&u)) {
                        stalls += 1;
                    } else {
                        stalls = 0;
                    }
                    u = trial;
                    f_u = f_trial;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                stalls += 1;
            }
            if stalls >= 3 {
                return Err(Error::ProxNoConvergence {
                    stage: 0,
                    iterations: iter + 1,
                    residual: res_norm,
                    tolerance: tol,
                });
            }
        }

        let residual = &(&u - anchor) * weight + &self.gradient(&u);
        let res_norm = self.norm(&residual);
        if res_norm <= tol {
            Ok((
                u,
                ProxReport {
                    newton_iterations: opts.max_newton,
                    residual: res_norm,
                    tolerance: tol,
                },
            ))
        } else {
            Err(Error::ProxNoConvergence {
                stage: 0,
                iterations: opts.max_newton,
                residual: res_norm,
                tolerance: tol,
            })
        }
    }

    fn initial_state(&self) -> State {
        State::from_iter(self.grid.points().iter().map(|x| (4.0 * x + 20.0).tanh()))
    }

    fn exact_solution(&self, t: f64) -> Option<State> {
        Some(State::from_iter(
            self.grid
                .points()
                .iter()
                .map(|x| (4.0 * x + 20.0 - 8.0 * t).tanh()),
        ))
    }
}

/// Thomas algorithm for a constant-off-diagonal tridiagonal system.
fn solve_tridiagonal(diag: &[f64], off: f64, rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = off / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - off * c[i - 1];
        c[i] = off / m;
        d[i] = (rhs[i] - off * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

impl DirichletGrid1d {
    /// `-lap_h v` with zero ghost values (Jacobian of the inhomogeneous one).
    pub fn neg_laplacian_homogeneous(&self, v: &State) -> State {
        let h2 = self.spacing().powi(2);
        let n = v.len();
        State::from_shape_fn(n, |j| {
            let left = if j == 0 { 0.0 } else { v[j - 1] };
            let right = if j + 1 == n { 0.0 } else { v[j + 1] };
            -(left - 2.0 * v[j] + right) / h2
        })
    }
}

/// Two-dimensional Allen-Cahn on the periodic square `[-10, 10)^2` with the
/// equal-depth well and a radial interface as initial data. Spectral
/// Laplacian; stage solves use the default Newton-CG with a spectral
/// constant-coefficient preconditioner.
#[derive(Clone)]
pub struct AllenCahn2d {
    grid: PeriodicGrid2d,
    well: DoubleWell,
    precond_shift: f64,
}

impl AllenCahn2d {
    pub fn new(n: usize) -> Result<Self> {
        Ok(Self {
            grid: PeriodicGrid2d::new(n, 10.0)?,
            well: DoubleWell::Equal,
            // W'' in [-1, 2] on the phase interval; shifting by 2 keeps the
            // preconditioned spectrum in a tight positive band.
            precond_shift: 2.0,
        })
    }

    pub fn grid(&self) -> &PeriodicGrid2d {
        &self.grid
    }

    pub fn well(&self) -> DoubleWell {
        self.well
    }
}

impl FlowProblem for AllenCahn2d {
    fn name(&self) -> &str {
        "allen_cahn_2d"
    }

    fn dof(&self) -> usize {
        self.grid.points()
    }

    fn energy(&self, u: &State) -> f64 {
        let h2 = self.grid.spacing().powi(2);
        let p = self.grid.points() as f64;
        let coeffs = self.grid.forward(u);
        let mut grad_sq = 0.0;
        for (idx, c) in coeffs.iter().enumerate() {
            grad_sq += self.grid.sym_lap(idx) * c.norm_sqr();
        }
        let well: f64 = u.iter().map(|&v| self.well.value(v)).sum();
        0.5 * h2 / p * grad_sq + h2 * well
    }

    fn gradient(&self, u: &State) -> State {
        let mut coeffs = self.grid.forward(u);
        for (idx, c) in coeffs.iter_mut().enumerate() {
            *c *= self.grid.sym_lap(idx);
        }
        let mut g = self.grid.inverse(coeffs);
        for (gj, &uj) in g.iter_mut().zip(u.iter()) {
            *gj += self.well.derivative(uj);
        }
        g
    }

    fn inner(&self, a: &State, b: &State) -> f64 {
        self.grid.spacing().powi(2) * a.dot(b)
    }

    fn hessian_action(&self, u: &State, v: &State) -> State {
        let mut coeffs = self.grid.forward(v);
        for (idx, c) in coeffs.iter_mut().enumerate() {
            *c *= self.grid.sym_lap(idx);
        }
        let mut hv = self.grid.inverse(coeffs);
        for ((out, &vj), &uj) in hv.iter_mut().zip(v.iter()).zip(u.iter()) {
            *out += self.well.second_derivative(uj) * vj;
        }
        hv
    }

    fn precondition(&self, w: f64, _u: &State, r: &State) -> State {
        let mut coeffs = self.grid.forward(r);
        for (idx, c) in coeffs.iter_mut().enumerate() {
            *c /= w + self.grid.sym_lap(idx) + self.precond_shift;
        }
        self.grid.inverse(coeffs)
    }

    fn initial_state(&self) -> State {
        self.grid
            .sample(|x, y| 1.0 / (1.0 + (-(7.5 - (x * x + y * y).sqrt())).exp()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::GammaMatrix;
    use crate::flow::{integrate, ProxOptions};

    #[test]
    fn traveling_wave_initial_data_matches_boundaries() {
        let p = AllenCahn1d::new(256);
        let u0 = p.initial_state();
        assert!((u0[0] + 1.0).abs() < 1e-10);
        assert!((u0[u0.len() - 1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn constant_phases_have_zero_reaction_term() {
        // W'(±1) = 0 for the unequal well, so away from the boundary cells a
        // constant ±1 state is stationary.
        let p = AllenCahn1d::new(128);
        for c in [-1.0, 1.0] {
            let u = State::from_elem(128, c);
            let g = p.gradient(&u);
            for v in g.iter().skip(2).take(124) {
                assert!(v.abs() < 1e-10, "interior gradient {v} for constant {c}");
            }
        }
    }

    #[test]
    fn prox_solves_stage_equation() {
        let p = AllenCahn1d::new(128);
        let anchor = p.initial_state();
        let (u, rep) = p
            .prox(8.0, &anchor, &anchor, &ProxOptions::default())
            .unwrap();
        let res = &(&u - &anchor) * 8.0 + &p.gradient(&u);
        assert!(p.norm(&res) <= rep.tolerance);
    }

    #[test]
    fn front_moves_right() {
        let p = AllenCahn1d::new(512);
        let scheme = GammaMatrix::builtin("second_order_a").unwrap().to_float();
        let u0 = p.initial_state();
        let x0 = p.front_position(&u0).unwrap();
        let out = integrate(&p, &scheme, &u0, 0.05, 20, &ProxOptions::default()).unwrap();
        let x1 = p.front_position(&out.final_state).unwrap();
        assert!(out.energy_monotone());
        // speed 2: after t=1 the front has moved by about 2
        assert!((x1 - x0 - 2.0).abs() < 0.1, "front moved {}", x1 - x0);
    }

    #[test]
    fn radial_symmetry_is_preserved() {
        let p = AllenCahn2d::new(32).unwrap();
        let scheme = GammaMatrix::builtin("second_order_a").unwrap().to_float();
        let u0 = p.initial_state();
        let out = integrate(&p, &scheme, &u0, 0.5, 2, &ProxOptions::default()).unwrap();
        let u = &out.final_state;
        let n = 32;
        // mirror symmetry in both axes maps grid index j -> (n - j) mod n
        for i in 0..n {
            for j in 0..n {
                let mi = (n - i) % n;
                let mj = (n - j) % n;
                let a = u[i * n + j];
                assert!((a - u[mi * n + j]).abs() < 1e-9);
                assert!((a - u[i * n + mj]).abs() < 1e-9);
            }
        }
    }
}
