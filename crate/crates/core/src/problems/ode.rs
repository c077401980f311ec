//! Scalar ODE flows: the smooth `cosh` energy and a piecewise-linear
//! nonsmooth energy with a closed-form proximal map.

use ndarray::array;

use crate::error::Result;
use crate::flow::{FlowProblem, ProxOptions, ProxReport, State};

/// `u' = -sinh(u)`, gradient flow of `E(u) = cosh(u)` on the real line.
///
/// The proximal solve is a safeguarded scalar Newton iteration on the
/// strictly increasing residual `w (u - a) + sinh(u)`.
#[derive(Debug, Clone)]
pub struct CoshOde {
    initial: f64,
}

impl CoshOde {
    pub fn new() -> Self {
        Self { initial: -2.0 }
    }
}

impl Default for CoshOde {
    fn default() -> Self {
        Self::new()
    }
}

impl FlowProblem for CoshOde {
    fn name(&self) -> &str {
        "cosh_ode"
    }

    fn dof(&self) -> usize {
        1
    }

    fn energy(&self, u: &State) -> f64 {
        u[0].cosh()
    }

    fn gradient(&self, u: &State) -> State {
        array![u[0].sinh()]
    }

    fn inner(&self, a: &State, b: &State) -> f64 {
        a[0] * b[0]
    }

    fn hessian_action(&self, u: &State, v: &State) -> State {
        array![u[0].cosh() * v[0]]
    }

    fn prox(
        &self,
        weight: f64,
        anchor: &State,
        guess: &State,
        opts: &ProxOptions,
    ) -> Result<(State, ProxReport)> {
        let a = anchor[0];
        let tol = opts.tol_res * (weight * a.abs() + a.sinh().abs() + 1.0);
        let (root, iters) = scalar_prox_newton(|u| weight * (u - a) + u.sinh(), |u| weight + u.cosh(), guess[0], a);
        let residual = (weight * (root - a) + root.sinh()).abs();
        debug_assert!(residual <= tol.max(1e-300), "cosh prox residual {residual} > {tol}");
        Ok((
            array![root],
            ProxReport {
                newton_iterations: iters,
                residual,
                tolerance: tol,
            },
        ))
    }

    fn initial_state(&self) -> State {
        array![self.initial]
    }

    /// `u(t) = -2 acoth(e^t coth 1)` for `u(0) = -2`.
    fn exact_solution(&self, t: f64) -> Option<State> {
        Some(array![-2.0 * ((1.0f64).tanh() * (-t).exp()).atanh()])
    }
}

/// Newton with bisection safeguard for a strictly increasing scalar residual.
/// Returns the root to machine precision and the iteration count.
fn scalar_prox_newton(
    f: impl Fn(f64) -> f64,
    fp: impl Fn(f64) -> f64,
    guess: f64,
    anchor: f64,
) -> (f64, usize) {
    // Bracket the root around the anchor; f is increasing with f(-inf) < 0.
    let mut lo = anchor.min(guess) - 1.0;
    let mut hi = anchor.max(guess) + 1.0;
    let mut width = 1.0;
    while f(lo) > 0.0 {
        lo -= width;
        width *= 2.0;
    }
    width = 1.0;
    while f(hi) < 0.0 {
        hi += width;
        width *= 2.0;
    }
    let mut u = guess.clamp(lo, hi);
    let mut iters = 0;
    for _ in 0..100 {
        iters += 1;
        let r = f(u);
        if r == 0.0 {
            return (u, iters);
        }
        if r > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let step = -r / fp(u);
        let mut next = u + step;
        if !(lo..=hi).contains(&next) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= f64::EPSILON * u.abs().max(1.0) {
            return (next, iters);
        }
        u = next;
    }
    (u, iters)
}

/// Gradient flow of the piecewise-linear energy
/// `E(u) = |u|/2` for `|u| < 1`, `|u - 1| + 1/2` for `|u| >= 1`.
///
/// The proximal map is evaluated in closed form: each linear piece's interior
/// stationary point plus the breakpoints are candidates, and the global
/// minimizer among them is returned. The gradient is the a.e. slope and is
/// used only for diagnostics.
#[derive(Debug, Clone)]
pub struct NonsmoothOde {
    initial: f64,
}

impl NonsmoothOde {
    pub fn new() -> Self {
        Self { initial: 2.0 }
    }

    pub fn energy_scalar(u: f64) -> f64 {
        if u.abs() < 1.0 {
            0.5 * u.abs()
        } else {
            (u - 1.0).abs() + 0.5
        }
    }

    /// Closed-form prox: minimize `E(u) + w/2 (u - a)^2` by case analysis.
    pub fn prox_scalar(weight: f64, anchor: f64) -> f64 {
        let mut best = (f64::INFINITY, anchor);
        let mut consider = |u: f64| {
            let value = Self::energy_scalar(u) + 0.5 * weight * (u - anchor) * (u - anchor);
            if value < best.0 {
                best = (value, u);
            }
        };
        // Interior stationary points u = a - slope / w, valid only inside
        // their segment; kinks and the jump point are always candidates.
        let candidates = [
            (anchor + 1.0 / weight, f64::NEG_INFINITY, -1.0), // slope -1 on u <= -1
            (anchor + 0.5 / weight, -1.0, 0.0),               // slope -1/2 on (-1, 0)
            (anchor - 0.5 / weight, 0.0, 1.0),                // slope +1/2 on (0, 1)
            (anchor - 1.0 / weight, 1.0, f64::INFINITY),      // slope +1 on u >= 1
        ];
        for (u, lo, hi) in candidates {
            if u > lo && u < hi {
                consider(u);
            }
        }
        consider(0.0);
        consider(1.0);
        consider(-1.0);
        best.1
    }
}

impl Default for NonsmoothOde {
    fn default() -> Self {
        Self::new()
    }
}

impl FlowProblem for NonsmoothOde {
    fn name(&self) -> &str {
        "nonsmooth_ode"
    }

    fn dof(&self) -> usize {
        1
    }

    fn energy(&self, u: &State) -> f64 {
        Self::energy_scalar(u[0])
    }

    fn gradient(&self, u: &State) -> State {
        let x = u[0];
        let slope = if x.abs() < 1.0 {
            0.5 * x.signum()
        } else {
            (x - 1.0).signum()
        };
        array![slope]
    }

    fn inner(&self, a: &State, b: &State) -> f64 {
        a[0] * b[0]
    }

    fn prox(
        &self,
        weight: f64,
        anchor: &State,
        _guess: &State,
        _opts: &ProxOptions,
    ) -> Result<(State, ProxReport)> {
        let u = Self::prox_scalar(weight, anchor[0]);
        Ok((
            array![u],
            ProxReport {
                newton_iterations: 0,
                residual: 0.0,
                tolerance: 0.0,
            },
        ))
    }

    fn initial_state(&self) -> State {
        array![self.initial]
    }

    /// Exact flow from `u(0) = 2`: slides down slope 1 to the kink at 1,
    /// then slope 1/2 to the rest point at 0.
    fn exact_solution(&self, t: f64) -> Option<State> {
        let u = if t <= 1.0 {
            2.0 - t
        } else if t <= 3.0 {
            1.0 - 0.5 * (t - 1.0)
        } else {
            0.0
        };
        Some(array![u])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::default_prox;

    #[test]
    fn cosh_exact_solution_matches_initial_condition() {
        let p = CoshOde::new();
        let u0 = p.exact_solution(0.0).unwrap();
        assert!((u0[0] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn cosh_prox_matches_bisection_oracle() {
        let p = CoshOde::new();
        let opts = ProxOptions::default();
        let cases = [(8.0, -2.0), (0.5, 1.3), (100.0, 0.2), (1e-3, -4.0)];
        for (w, a) in cases {
            let (u, _) = p.prox(w, &array![a], &array![a], &opts).unwrap();
            let oracle = bisect(|x| w * (x - a) + x.sinh());
            assert!((u[0] - oracle).abs() < 1e-12, "w={w} a={a}");
        }
    }

    #[test]
    fn cosh_default_prox_agrees_with_override() {
        // The generic Newton-CG path solves the same scalar equation.
        let p = CoshOde::new();
        let opts = ProxOptions::default();
        let (fast, _) = p.prox(8.0, &array![-2.0], &array![-2.0], &opts).unwrap();
        let (generic, _) = default_prox(&p, 8.0, &array![-2.0], &array![-2.0], &opts).unwrap();
        assert!((fast[0] - generic[0]).abs() < 1e-10);
    }

    fn bisect(f: impl Fn(f64) -> f64) -> f64 {
        let (mut lo, mut hi) = (-60.0, 60.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn nonsmooth_prox_at_kinks() {
        // anchor 0 stays at the kink
        assert_eq!(NonsmoothOde::prox_scalar(3.0, 0.0), 0.0);
        // large weight, anchor 2: soft shift toward 1 with unit slope: u = 2 - k
        for k in [0.1, 0.5, 0.9] {
            let u = NonsmoothOde::prox_scalar(1.0 / k, 2.0);
            assert!((u - (2.0 - k)).abs() < 1e-14, "k={k}");
        }
        // small weight from anchor 2 crosses the kink and lands on it
        let u = NonsmoothOde::prox_scalar(1.0 / 1.5, 2.0);
        assert!((u - 1.0).abs() < 1e-14);
    }

    #[test]
    fn nonsmooth_prox_is_global_minimizer_on_dense_scan() {
        for &(w, a) in &[(0.7, 1.8), (2.0, -0.6), (0.25, 3.0), (5.0, 0.4), (0.4, -2.5)] {
            let u = NonsmoothOde::prox_scalar(w, a);
            let fu = NonsmoothOde::energy_scalar(u) + 0.5 * w * (u - a) * (u - a);
            let mut scan_best = f64::INFINITY;
            for i in -8000..=8000 {
                let x = i as f64 * 1e-3;
                let fx = NonsmoothOde::energy_scalar(x) + 0.5 * w * (x - a) * (x - a);
                scan_best = scan_best.min(fx);
            }
            assert!(fu <= scan_best + 1e-9, "w={w} a={a}: {fu} vs {scan_best}");
        }
    }

    #[test]
    fn nonsmooth_exact_solution_profile() {
        let p = NonsmoothOde::new();
        assert_eq!(p.exact_solution(0.0).unwrap()[0], 2.0);
        assert_eq!(p.exact_solution(1.0).unwrap()[0], 1.0);
        assert_eq!(p.exact_solution(2.0).unwrap()[0], 0.5);
        assert_eq!(p.exact_solution(3.0).unwrap()[0], 0.0);
        assert_eq!(p.exact_solution(10.0).unwrap()[0], 0.0);
    }
}
