//! Two-dimensional Cahn-Hilliard flow: the H^-1 gradient flow of the same
//! phase-field energy as Allen-Cahn. The inner product lives on the
//! zero-mean subspace; the mean is a conserved invariant and is checked
//! after every step.

use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::flow::{FlowProblem, ProxOptions, ProxReport, State};
use crate::problems::grid::PeriodicGrid2d;
use crate::problems::well::DoubleWell;

type Cplx = Complex<f64>;

#[derive(Clone)]
pub struct CahnHilliard2d {
    grid: PeriodicGrid2d,
    well: DoubleWell,
    precond_shift: f64,
    mass_tol: f64,
}

impl CahnHilliard2d {
    pub fn new(n: usize) -> Result<Self> {
        Ok(Self {
            grid: PeriodicGrid2d::new(n, 10.0)?,
            well: DoubleWell::Equal,
            precond_shift: 2.0,
            mass_tol: 1e-10,
        })
    }

    pub fn grid(&self) -> &PeriodicGrid2d {
        &self.grid
    }

    pub fn well(&self) -> DoubleWell {
        self.well
    }

    /// Discrete mass `sum(u) dx`.
    pub fn mass(&self, u: &State) -> f64 {
        self.grid.spacing().powi(2) * u.sum()
    }

    /// Coefficients of the chemical potential `-lap u + W'(u)`.
    fn chemical_potential_hat(&self, u: &State) -> Vec<Cplx> {
        let u_hat = self.grid.forward(u);
        let mut mu_hat = u_hat.clone();
        for (idx, c) in mu_hat.iter_mut().enumerate() {
            *c *= self.grid.sym_lap(idx);
        }
        let wp = State::from_iter(u.iter().map(|&v| self.well.derivative(v)));
        let wp_hat = self.grid.forward(&wp);
        for (m, w) in mu_hat.iter_mut().zip(&wp_hat) {
            *m += w;
        }
        mu_hat
    }

    fn hminus1_inner_hat(&self, a_hat: &[Cplx], b_hat: &[Cplx]) -> f64 {
        let h2 = self.grid.spacing().powi(2);
        let p = self.grid.points() as f64;
        let mut acc = 0.0;
        for idx in 1..a_hat.len() {
            let sym = self.grid.sym_lap(idx);
            if sym > 0.0 {
                acc += (a_hat[idx] * b_hat[idx].conj()).re / sym;
            }
        }
        h2 / p * acc
    }
}

impl FlowProblem for CahnHilliard2d {
    fn name(&self) -> &str {
        "cahn_hilliard_2d"
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

    /// Metric gradient `-lap(-lap u + W'(u))`; zero-mean by construction.
    fn gradient(&self, u: &State) -> State {
        let mut mu_hat = self.chemical_potential_hat(u);
        for (idx, c) in mu_hat.iter_mut().enumerate() {
            *c *= self.grid.sym_lap(idx);
        }
        self.grid.inverse(mu_hat)
    }

    /// H^-1 inner product on the zero-mean parts.
    fn inner(&self, a: &State, b: &State) -> f64 {
        let a_hat = self.grid.forward(a);
        let b_hat = self.grid.forward(b);
        self.hminus1_inner_hat(&a_hat, &b_hat)
    }

    fn hessian_action(&self, u: &State, v: &State) -> State {
        let mut v_hat = self.grid.forward(v);
        for (idx, c) in v_hat.iter_mut().enumerate() {
            *c *= self.grid.sym_lap(idx);
        }
        let mut av = self.grid.inverse(v_hat);
        for ((out, &vj), &uj) in av.iter_mut().zip(v.iter()).zip(u.iter()) {
            *out += self.well.second_derivative(uj) * vj;
        }
        let mut av_hat = self.grid.forward(&av);
        for (idx, c) in av_hat.iter_mut().enumerate() {
            *c *= self.grid.sym_lap(idx);
        }
        self.grid.inverse(av_hat)
    }

    fn precondition(&self, w: f64, _u: &State, r: &State) -> State {
        let mut coeffs = self.grid.forward(r);
        for (idx, c) in coeffs.iter_mut().enumerate() {
            let sym = self.grid.sym_lap(idx);
            if idx == 0 {
                *c = Cplx::new(0.0, 0.0);
            } else {
                *c /= w + sym * sym + self.precond_shift * sym;
            }
        }
        self.grid.inverse(coeffs)
    }

    /// Newton-CG carried out on Fourier coefficients, so the H^-1 inner
    /// products and the constant-coefficient preconditioner are pointwise in
    /// frequency; only the `W''(u) v` product goes through physical space.
    fn prox(
        &self,
        weight: f64,
        anchor: &State,
        guess: &State,
        opts: &ProxOptions,
    ) -> Result<(State, ProxReport)> {
        let grid = &self.grid;
        let n_modes = grid.points();
        let anchor_hat = grid.forward(anchor);
        let grad_anchor_hat = {
            let mut mu_hat = self.chemical_potential_hat(anchor);
            for (idx, c) in mu_hat.iter_mut().enumerate() {
                *c *= grid.sym_lap(idx);
            }
            mu_hat
        };
        let norm_hat = |a: &[Cplx]| self.hminus1_inner_hat(a, a).max(0.0).sqrt();
        let scale = weight * norm_hat(&anchor_hat) + norm_hat(&grad_anchor_hat) + 1.0;
        let tol = opts.tol_res * scale;

        // objective F(u) = E(u) + w/2 ||u - a||^2 given (u, u_hat)
        let objective = |u: &State, u_hat: &[Cplx]| -> f64 {
            let h2 = grid.spacing().powi(2);
            let p = n_modes as f64;
            let mut grad_sq = 0.0;
            for (idx, c) in u_hat.iter().enumerate() {
                grad_sq += grid.sym_lap(idx) * c.norm_sqr();
            }
            let well: f64 = u.iter().map(|&v| self.well.value(v)).sum();
            let diff: Vec<Cplx> = u_hat
                .iter()
                .zip(&anchor_hat)
                .map(|(x, a)| x - a)
                .collect();
            0.5 * h2 / p * grad_sq + h2 * well + 0.5 * weight * self.hminus1_inner_hat(&diff, &diff)
        };

        let residual_hat = |u: &State, u_hat: &[Cplx]| -> Vec<Cplx> {
            // w (u - a) + |xi|^2 (|xi|^2 u + W'(u))^
            let wp = State::from_iter(u.iter().map(|&v| self.well.derivative(v)));
            let wp_hat = grid.forward(&wp);
            (0..n_modes)
                .map(|idx| {
                    let sym = grid.sym_lap(idx);
                    weight * (u_hat[idx] - anchor_hat[idx]) + sym * (sym * u_hat[idx] + wp_hat[idx])
                })
                .collect()
        };

        let mut u = guess.clone();
        let mut u_hat = grid.forward(&u);
        // The limiter is only defined when means agree; the stage anchors all
        // carry the conserved mass, so pin the mean exactly.
        u_hat[0] = anchor_hat[0];
        u = grid.inverse(u_hat.clone());
        let mut f_u = objective(&u, &u_hat);
        let mut stalls = 0;

        for iter in 0..opts.max_newton {
            let r_hat = residual_hat(&u, &u_hat);
            let res_norm = norm_hat(&r_hat);
            if !res_norm.is_finite() {
                return Err(Error::NonFinite {
                    context: "cahn_hilliard prox residual".into(),
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

            let wpp = State::from_iter(u.iter().map(|&v| self.well.second_derivative(v)));
            let d_hat = self.pcg_hat(weight, &wpp, &r_hat, opts);
            let mut slope = self.hminus1_inner_hat(&r_hat, &d_hat);
            let dir_hat = if slope < 0.0 {
                d_hat
            } else {
                slope = -res_norm * res_norm;
                r_hat.iter().map(|c| -c).collect()
            };

            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial_hat: Vec<Cplx> = u_hat
                    .iter()
                    .zip(&dir_hat)
                    .map(|(x, d)| x + d * t)
                    .collect();
                let trial = grid.inverse(trial_hat.clone());
                let f_trial = objective(&trial, &trial_hat);
                if f_trial.is_finite() && f_trial <= f_u + 1e-4 * t * slope + 1e-15 * f_u.abs() {
                    let step_sq = self.hminus1_inner_hat(&dir_hat, &dir_hat);
                    if t * step_sq.sqrt() <= f64::EPSILON * (1.0 + norm_hat(&u_hat)) {
                        stalls += 1;
                    } else {
                        stalls = 0;
                    }
                    u = trial;
                    u_hat = trial_hat;
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

        let r_hat = residual_hat(&u, &u_hat);
        let res_norm = norm_hat(&r_hat);
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
        self.grid
            .sample(|x, y| 1.0 / (1.0 + (-(5.0 - (x * x + 2.0 * y * y).sqrt())).exp()))
    }

    fn check_step(&self, step: usize, u_new: &State, u_prev: &State) -> Result<()> {
        let m_new = self.mass(u_new);
        let m_prev = self.mass(u_prev);
        let drift = (m_new - m_prev).abs() / (1.0 + m_prev.abs());
        if drift > self.mass_tol {
            return Err(Error::MassDrift { step, drift });
        }
        Ok(())
    }
}

impl CahnHilliard2d {
    /// PCG on `(w I + H) d = -r` in the H^-1 inner product, with all
    /// constant-coefficient work done on coefficients. `H v` is
    /// `|xi|^2 (|xi|^2 v + (W''(u) v)^)`.
    fn pcg_hat(&self, weight: f64, wpp: &State, r_hat: &[Cplx], opts: &ProxOptions) -> Vec<Cplx> {
        let grid = &self.grid;
        let n = r_hat.len();
        let apply = |v_hat: &[Cplx]| -> Vec<Cplx> {
            let mut tmp = v_hat.to_vec();
            let v = grid.inverse(tmp.clone());
            let wv = State::from_iter(v.iter().zip(wpp.iter()).map(|(a, b)| a * b));
            let wv_hat = grid.forward(&wv);
            for idx in 0..n {
                let sym = grid.sym_lap(idx);
                tmp[idx] = weight * v_hat[idx] + sym * (sym * v_hat[idx] + wv_hat[idx]);
            }
            tmp[0] = Cplx::new(0.0, 0.0);
            tmp
        };
        let precond = |r: &[Cplx]| -> Vec<Cplx> {
            (0..n)
                .map(|idx| {
                    let sym = grid.sym_lap(idx);
                    if idx == 0 {
                        Cplx::new(0.0, 0.0)
                    } else {
                        r[idx] / (weight + sym * sym + self.precond_shift * sym)
                    }
                })
                .collect()
        };

        let b: Vec<Cplx> = r_hat.iter().map(|c| -c).collect();
        let b_norm = self.hminus1_inner_hat(&b, &b).max(0.0).sqrt();
        if b_norm == 0.0 {
            return b;
        }
        let tol = opts.tol_lin * b_norm;
        let mut x = vec![Cplx::new(0.0, 0.0); n];
        let mut r = b;
        let mut z = precond(&r);
        let mut p = z.clone();
        let mut rz = self.hminus1_inner_hat(&r, &z);

        for _ in 0..opts.max_cg {
            let ap = apply(&p);
            let pap = self.hminus1_inner_hat(&p, &ap);
            if !(pap > 0.0) || !pap.is_finite() {
                if x.iter().all(|c| c.norm_sqr() == 0.0) {
                    return z;
                }
                return x;
            }
            let alpha = rz / pap;
            for idx in 0..n {
                x[idx] += alpha * p[idx];
                r[idx] -= alpha * ap[idx];
            }
            if self.hminus1_inner_hat(&r, &r).max(0.0).sqrt() <= tol {
                break;
            }
            z = precond(&r);
            let rz_next = self.hminus1_inner_hat(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for idx in 0..n {
                p[idx] = z[idx] + beta * p[idx];
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::GammaMatrix;
    use crate::flow::{integrate, ProxOptions};

    #[test]
    fn constant_state_is_fixed_point_and_conserves_mass() {
        let p = CahnHilliard2d::new(16).unwrap();
        let scheme = GammaMatrix::builtin("second_order_a").unwrap().to_float();
        let u0 = State::from_elem(256, 0.4);
        let m0 = p.mass(&u0);
        let out = integrate(&p, &scheme, &u0, 1.0, 3, &ProxOptions::default()).unwrap();
        for v in out.final_state.iter() {
            assert!((v - 0.4).abs() < 1e-12);
        }
        assert!((p.mass(&out.final_state) - m0).abs() < 1e-12 * (1.0 + m0.abs()));
    }

    #[test]
    fn gradient_is_zero_mean() {
        let p = CahnHilliard2d::new(32).unwrap();
        let u = p.initial_state();
        let g = p.gradient(&u);
        assert!(g.sum().abs() < 1e-9 * g.len() as f64);
    }

    #[test]
    fn mass_conserved_over_steps() {
        let p = CahnHilliard2d::new(32).unwrap();
        let scheme = GammaMatrix::builtin("second_order_a").unwrap().to_float();
        let u0 = p.initial_state();
        let m0 = p.mass(&u0);
        let out = integrate(&p, &scheme, &u0, 0.25, 4, &ProxOptions::default()).unwrap();
        let drift = (p.mass(&out.final_state) - m0).abs() / (1.0 + m0.abs());
        assert!(drift < 1e-10, "mass drift {drift}");
        assert!(out.energy_monotone());
    }

    #[test]
    fn prox_residual_meets_tolerance() {
        let p = CahnHilliard2d::new(32).unwrap();
        let anchor = p.initial_state();
        let opts = ProxOptions::default();
        let (u, rep) = p.prox(2.0, &anchor, &anchor, &opts).unwrap();
        let res = &(&u - &anchor) * 2.0 + &p.gradient(&u);
        assert!(p.norm(&res) <= rep.tolerance * 1.01);
    }
}
