//! Generic multi-stage stepper over an abstract inner-product space.
//!
//! A time step runs the stages
//! `U_m = argmin_u E(u) + sum_{i<m} gamma[m][i]/(2k) ||u - U_i||^2`
//! with `U_0 = u_n` and `u_{n+1} = U_M`. Each stage collapses its anchors
//! into a single movement limiter and calls the problem's proximal solve,
//! warm-started at the previous stage.
//!
//! The default proximal solver is a damped Newton iteration with matrix-free
//! Hessian actions and a preconditioned conjugate-gradient inner solve. Line
//! searches accept only steps that decrease the stage objective, so each
//! stage output satisfies `F_m(U_m) <= F_m(U_{m-1})`; that descent chain is
//! exactly what the stability argument needs, so certified schemes dissipate
//! energy even when a stage stops at a local stationary point.

use ndarray::Array1;

use crate::coefficients::FloatScheme;
use crate::error::{Error, Result};

pub type State = Array1<f64>;

/// Tolerances and budgets for the stage solves.
#[derive(Debug, Clone)]
pub struct ProxOptions {
    /// Relative Euler-Lagrange residual target.
    pub tol_res: f64,
    /// Relative tolerance of the inner linear (CG) solves.
    pub tol_lin: f64,
    pub max_newton: usize,
    /// Cap on CG iterations per Newton step.
    pub max_cg: usize,
}

impl Default for ProxOptions {
    fn default() -> Self {
        Self {
            tol_res: 1e-12,
            tol_lin: 1e-10,
            max_newton: 50,
            max_cg: 400,
        }
    }
}

/// Iteration counts and final residual of one proximal solve.
#[derive(Debug, Clone, Default)]
pub struct ProxReport {
    pub newton_iterations: usize,
    pub residual: f64,
    pub tolerance: f64,
}

/// Capability bundle for a gradient flow: energy, metric gradient, inner
/// product and a proximal solve `argmin_u E(u) + (w/2) ||u - anchor||^2`.
///
/// `gradient` must be the Riesz representative of `dE` with respect to
/// `inner`, so that `d/ds E(u + s v)|_0 = inner(gradient(u), v)`.
pub trait FlowProblem {
    fn name(&self) -> &str;
    fn dof(&self) -> usize;
    fn energy(&self, u: &State) -> f64;
    fn gradient(&self, u: &State) -> State;
    fn inner(&self, a: &State, b: &State) -> f64;

    fn norm(&self, a: &State) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }

    /// Directional derivative of `gradient` at `u` along `v` (metric Hessian
    /// action). The default is a centered finite difference; problems with a
    /// cheap exact action should override it.
    fn hessian_action(&self, u: &State, v: &State) -> State {
        let vn = self.norm(v);
        if vn == 0.0 {
            return State::zeros(u.len());
        }
        let h = 1e-6 * (1.0 + self.norm(u)) / vn;
        let up = u + &(v * h);
        let um = u - &(v * h);
        (self.gradient(&up) - self.gradient(&um)) / (2.0 * h)
    }

    /// Approximate inverse of `w I + Hessian` applied to `r`, used to
    /// precondition the inner CG solve. Identity by default.
    fn precondition(&self, _w: f64, _u: &State, r: &State) -> State {
        r.clone()
    }

    /// Proximal solve. Problems with closed-form or specialized solvers
    /// override this; the default is damped Newton-CG.
    fn prox(
        &self,
        weight: f64,
        anchor: &State,
        guess: &State,
        opts: &ProxOptions,
    ) -> Result<(State, ProxReport)>
    where
        Self: Sized,
    {
        default_prox(self, weight, anchor, guess, opts)
    }

    /// Canonical initial state of the experiment this problem models.
    fn initial_state(&self) -> State;

    /// Exact solution at time `t`, for problems that have one.
    fn exact_solution(&self, _t: f64) -> Option<State> {
        None
    }

    /// Per-step invariant hook (e.g. conserved mass). Called after every
    /// completed step with the new and previous states.
    fn check_step(&self, _step: usize, _u_new: &State, _u_prev: &State) -> Result<()> {
        Ok(())
    }
}

pub fn require_finite(u: &State, context: &str) -> Result<()> {
    if u.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context.to_string(),
        })
    }
}

/// Collapse multiple movement limiters into one.
///
/// `weights[i]` multiplies `||u - anchors[i]||^2 / 2`; the collapsed problem
/// uses `combined_weight = sum(weights)` and the weighted mean anchor, and
/// differs from the original objective only by a constant in `u`.
pub fn collapse_anchors(weights: &[f64], anchors: &[&State]) -> Result<(f64, State)> {
    assert_eq!(weights.len(), anchors.len());
    assert!(!weights.is_empty());
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NonCoercive {
            stage: 0,
            weight: total,
        });
    }
    let mut combined = State::zeros(anchors[0].len());
    for (w, a) in weights.iter().zip(anchors) {
        combined.scaled_add(w / total, a);
    }
    Ok((total, combined))
}

/// One stage solve: collapse the anchors of row `m`, then prox with weight
/// `S_m / k`, warm-started at `guess` (the previous stage).
pub fn stage_solve<P: FlowProblem>(
    problem: &P,
    scheme: &FloatScheme,
    stage: usize,
    k: f64,
    states: &[State],
    opts: &ProxOptions,
) -> Result<(State, ProxReport)> {
    let row = &scheme.rows[stage - 1];
    let weights: Vec<f64> = row.iter().map(|g| g / k).collect();
    let anchors: Vec<&State> = states[..stage].iter().collect();
    let (weight, anchor) = collapse_anchors(&weights, &anchors).map_err(|e| match e {
        Error::NonCoercive { weight, .. } => Error::NonCoercive { stage, weight },
        other => other,
    })?;
    let guess = &states[stage - 1];
    let (u, report) = problem
        .prox(weight, &anchor, guess, opts)
        .map_err(|e| match e {
            Error::ProxNoConvergence {
                iterations,
                residual,
                tolerance,
                ..
            } => Error::ProxNoConvergence {
                stage,
                iterations,
                residual,
                tolerance,
            },
            other => other,
        })?;
    require_finite(&u, &format!("stage {stage} output"))?;
    Ok((u, report))
}

/// Per-step record: stage states, their energies, and solver effort.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub stage_states: Vec<State>,
    pub stage_energies: Vec<f64>,
    pub stage_residuals: Vec<f64>,
    pub prox_iterations: Vec<usize>,
    pub energy_decrease_ok: bool,
}

/// Advance one full step of the scheme; returns `u_{n+1}` and the trace.
pub fn step<P: FlowProblem>(
    problem: &P,
    scheme: &FloatScheme,
    u_n: &State,
    k: f64,
    opts: &ProxOptions,
) -> Result<(State, StepTrace)> {
    if !(k > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {k}")));
    }
    require_finite(u_n, "step input")?;
    let stages = scheme.stages();
    let mut states = Vec::with_capacity(stages + 1);
    states.push(u_n.clone());
    let mut energies = vec![problem.energy(u_n)];
    let mut residuals = Vec::with_capacity(stages);
    let mut iterations = Vec::with_capacity(stages);

    for m in 1..=stages {
        let (u, report) = stage_solve(problem, scheme, m, k, &states, opts)?;
        energies.push(problem.energy(&u));
        residuals.push(report.residual);
        iterations.push(report.newton_iterations);
        states.push(u);
    }

    let e0 = energies[0];
    let e_final = *energies.last().unwrap();
    let tol_mono = 1e-10 * (1.0 + e0.abs());
    let u_next = states.last().unwrap().clone();
    let trace = StepTrace {
        stage_states: states,
        stage_energies: energies,
        stage_residuals: residuals,
        prox_iterations: iterations,
        energy_decrease_ok: e_final <= e0 + tol_mono,
    };
    Ok((u_next, trace))
}

/// Result of a full integration: final state, per-step energies, and any
/// energy-monotonicity violations (step index, increase).
#[derive(Debug, Clone)]
pub struct IntegrationResult {
    pub final_state: State,
    /// Energies `E(u_n)` for `n = 0..=n_steps`.
    pub energies: Vec<f64>,
    pub monotone_violations: Vec<(usize, f64)>,
    pub monotone_tolerance: f64,
    pub total_newton_iterations: usize,
}

impl IntegrationResult {
    pub fn energy_monotone(&self) -> bool {
        self.monotone_violations.is_empty()
    }
}

/// Integrate `n_steps` steps of size `k`, recording energies and checking
/// monotonicity against `tol_mono = 1e-10 (1 + |E(u_0)|)`.
pub fn integrate<P: FlowProblem>(
    problem: &P,
    scheme: &FloatScheme,
    u_0: &State,
    k: f64,
    n_steps: usize,
    opts: &ProxOptions,
) -> Result<IntegrationResult> {
    integrate_observed(problem, scheme, u_0, k, n_steps, opts, |_, _, _| {})
}

/// [`integrate`] with a per-step observer `(step_index, time, state)`.
/// The observer also sees the initial state as step 0.
pub fn integrate_observed<P, F>(
    problem: &P,
    scheme: &FloatScheme,
    u_0: &State,
    k: f64,
    n_steps: usize,
    opts: &ProxOptions,
    mut observe: F,
) -> Result<IntegrationResult>
where
    P: FlowProblem,
    F: FnMut(usize, f64, &State),
{
    if n_steps == 0 {
        return Err(Error::Config("n_steps must be at least 1".into()));
    }
    require_finite(u_0, "initial state")?;
    let e0 = problem.energy(u_0);
    let tol_mono = 1e-10 * (1.0 + e0.abs());
    let mut energies = Vec::with_capacity(n_steps + 1);
    energies.push(e0);
    let mut violations = Vec::new();
    let mut u = u_0.clone();
    let mut newton_total = 0;
    observe(0, 0.0, &u);

    for n in 0..n_steps {
        let (next, trace) = step(problem, scheme, &u, k, opts)?;
        newton_total += trace.prox_iterations.iter().sum::<usize>();
        let e_prev = *energies.last().unwrap();
        let e_next = *trace.stage_energies.last().unwrap();
        if e_next > e_prev + tol_mono {
            violations.push((n + 1, e_next - e_prev));
        }
        problem.check_step(n + 1, &next, &u)?;
        u = next;
        energies.push(e_next);
        observe(n + 1, (n + 1) as f64 * k, &u);
    }

    Ok(IntegrationResult {
        final_state: u,
        energies,
        monotone_violations: violations,
        monotone_tolerance: tol_mono,
        total_newton_iterations: newton_total,
    })
}

/// Damped Newton with matrix-free Hessian actions and preconditioned CG.
///
/// Solves the stationarity equation `R(u) = w (u - anchor) + gradient(u) = 0`
/// of the objective `F(u) = E(u) + (w/2) ||u - anchor||^2`. Steps must pass
/// an Armijo test on `F`, falling back to the steepest-descent direction when
/// the Newton direction is unusable, so the iterates never leave the sublevel
/// set of the warm start.
pub fn default_prox<P: FlowProblem + ?Sized>(
    problem: &P,
    weight: f64,
    anchor: &State,
    guess: &State,
    opts: &ProxOptions,
) -> Result<(State, ProxReport)> {
    assert!(weight > 0.0, "prox weight must be positive");
    let grad_anchor = problem.gradient(anchor);
    let scale = weight * problem.norm(anchor) + problem.norm(&grad_anchor) + 1.0;
    let tol = opts.tol_res * scale;

    let objective = |u: &State| -> f64 {
        let d = u - anchor;
        problem.energy(u) + 0.5 * weight * problem.inner(&d, &d)
    };

    let mut u = guess.clone();
    let mut f_u = objective(&u);
    let mut stalls = 0;

    for iter in 0..opts.max_newton {
        let residual = &(&u - anchor) * weight + &problem.gradient(&u);
        let res_norm = problem.norm(&residual);
        if !res_norm.is_finite() {
            return Err(Error::NonFinite {
                context: "prox residual".into(),
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

        let mut direction = pcg(problem, weight, &u, &residual, opts);
        let mut slope = problem.inner(&residual, &direction);
        if !(slope < 0.0) || !direction.iter().all(|x| x.is_finite()) {
            direction = problem.precondition(weight, &u, &residual).mapv(|x| -x);
            slope = problem.inner(&residual, &direction);
            if !(slope < 0.0) {
                direction = residual.mapv(|x| -x);
                slope = -res_norm * res_norm;
            }
        }

        // Armijo backtracking on F; tiny slack absorbs roundoff near minima.
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &u + &(&direction * t);
            let f_trial = objective(&trial);
            if f_trial.is_finite() && f_trial <= f_u + 1e-4 * t * slope + 1e-15 * f_u.abs() {
                let step_norm = t * problem.norm(&direction);
                if step_norm <= f64::EPSILON * (1.0 + problem.norm(&u)) {
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

    let residual = &(&u - anchor) * weight + &problem.gradient(&u);
    let res_norm = problem.norm(&residual);
    if res_norm <= tol {
        return Ok((
            u,
            ProxReport {
                newton_iterations: opts.max_newton,
                residual: res_norm,
                tolerance: tol,
            },
        ));
    }
    Err(Error::ProxNoConvergence {
        stage: 0,
        iterations: opts.max_newton,
        residual: res_norm,
        tolerance: tol,
    })
}

/// Preconditioned CG on `(w I + H(u)) d = -residual` in the problem's inner
/// product. Truncated on negative curvature (returns the best descent
/// direction found so far, or the preconditioned steepest descent direction
/// on the first iteration).
fn pcg<P: FlowProblem + ?Sized>(
    problem: &P,
    weight: f64,
    u: &State,
    residual: &State,
    opts: &ProxOptions,
) -> State {
    let b = residual.mapv(|x| -x);
    let b_norm = problem.norm(&b);
    if b_norm == 0.0 {
        return b;
    }
    let tol = opts.tol_lin * b_norm;
    let mut x = State::zeros(b.len());
    let mut r = b.clone();
    let mut z = problem.precondition(weight, u, &r);
    let mut p = z.clone();
    let mut rz = problem.inner(&r, &z);

    for _ in 0..opts.max_cg {
        let ap = &p * weight + &problem.hessian_action(u, &p);
        let pap = problem.inner(&p, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            // Negative curvature: stop with the progress made so far.
            if problem.norm(&x) == 0.0 {
                return z;
            }
            return x;
        }
        let alpha = rz / pap;
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        if problem.norm(&r) <= tol {
            break;
        }
        z = problem.precondition(weight, u, &r);
        let rz_next = problem.inner(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        p = &z + &(&p * beta);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::GammaMatrix;
    use ndarray::array;

    /// E(u) = 1/2 sum q_i u_i^2 under the Euclidean inner product.
    struct Quadratic {
        q: Vec<f64>,
    }

    impl FlowProblem for Quadratic {
        fn name(&self) -> &str {
            "quadratic"
        }
        fn dof(&self) -> usize {
            self.q.len()
        }
        fn energy(&self, u: &State) -> f64 {
            0.5 * u.iter().zip(&self.q).map(|(x, q)| q * x * x).sum::<f64>()
        }
        fn gradient(&self, u: &State) -> State {
            State::from_iter(u.iter().zip(&self.q).map(|(x, q)| q * x))
        }
        fn inner(&self, a: &State, b: &State) -> f64 {
            a.dot(b)
        }
        fn hessian_action(&self, _u: &State, v: &State) -> State {
            State::from_iter(v.iter().zip(&self.q).map(|(x, q)| q * x))
        }
        fn initial_state(&self) -> State {
            State::from_elem(self.q.len(), 1.0)
        }
    }

    #[test]
    fn collapse_single_anchor() {
        let a = array![1.0, 2.0];
        let (w, anchor) = collapse_anchors(&[4.0], &[&a]).unwrap();
        assert_eq!(w, 4.0);
        assert_eq!(anchor, a);
    }

    #[test]
    fn collapse_second_row_of_second_order_a() {
        // weights (-2/k, 6/k) with k=1 -> weight 4, anchor (-2 U0 + 6 U1)/4
        let u0 = array![1.0];
        let u1 = array![3.0];
        let (w, anchor) = collapse_anchors(&[-2.0, 6.0], &[&u0, &u1]).unwrap();
        assert!((w - 4.0).abs() < 1e-15);
        assert!((anchor[0] - (-2.0 + 18.0) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn collapse_rejects_nonpositive_total() {
        let u0 = array![1.0];
        let u1 = array![2.0];
        assert!(matches!(
            collapse_anchors(&[-3.0, 1.0], &[&u0, &u1]),
            Err(Error::NonCoercive { .. })
        ));
    }

    #[test]
    fn quadratic_prox_matches_exact_solve() {
        // argmin 1/2 q u^2 + w/2 (u-a)^2 = w a / (w + q)
        let p = Quadratic { q: vec![2.0, 0.5, 1.0] };
        let anchor = array![1.0, -2.0, 0.5];
        let guess = State::zeros(3);
        let (u, report) = default_prox(&p, 3.0, &anchor, &guess, &ProxOptions::default()).unwrap();
        for i in 0..3 {
            let exact = 3.0 * anchor[i] / (3.0 + p.q[i]);
            assert!((u[i] - exact).abs() < 1e-10, "component {i}");
        }
        assert!(report.newton_iterations <= 3);
    }

    #[test]
    fn backward_euler_step_reduces_to_single_prox() {
        let p = Quadratic { q: vec![1.0] };
        let scheme = GammaMatrix::builtin("backward_euler").unwrap().to_float();
        let u0 = array![1.0];
        let k = 1.0;
        let (u1, trace) = step(&p, &scheme, &u0, k, &ProxOptions::default()).unwrap();
        // (1 + k) u = u0 => u = 1/2
        assert!((u1[0] - 0.5).abs() < 1e-12);
        assert!(trace.energy_decrease_ok);
        let (direct, _) = p
            .prox(1.0 / k, &u0, &u0, &ProxOptions::default())
            .unwrap();
        assert!((u1[0] - direct[0]).abs() < 1e-15);
    }

    #[test]
    fn second_order_a_step_matches_linear_recurrence() {
        // For E(u) = u^2/2 each stage solves u = sum(gamma U_i) / (S_m + k).
        let p = Quadratic { q: vec![1.0] };
        let g = GammaMatrix::builtin("second_order_a").unwrap();
        let scheme = g.to_float();
        let k = 0.37;
        let u0 = 1.3;
        let s1 = 5.0 * u0 / (5.0 + k);
        let s2 = (-2.0 * u0 + 6.0 * s1) / (4.0 + k);
        let s3 = (-2.0 * u0 + (3.0 / 14.0) * s1 + (44.0 / 7.0) * s2) / (4.5 + k);
        let (u1, _) = step(&p, &scheme, &array![u0], k, &ProxOptions::default()).unwrap();
        assert!((u1[0] - s3).abs() < 1e-12, "got {} want {}", u1[0], s3);
    }

    #[test]
    fn zero_gradient_fixed_point() {
        let p = Quadratic { q: vec![1.0, 1.0] };
        let scheme = GammaMatrix::builtin("second_order_a").unwrap().to_float();
        let u0 = State::zeros(2);
        let out = integrate(&p, &scheme, &u0, 0.5, 8, &ProxOptions::default()).unwrap();
        assert!(out.final_state.iter().all(|x| x.abs() < 1e-14));
        assert!(out.energy_monotone());
    }

    #[test]
    fn multi_anchor_equals_collapsed_for_quadratic() {
        // closed-form multi-anchor argmin: (sum g_i U_i / k) / (q + sum g_i / k)
        let p = Quadratic { q: vec![0.8] };
        let k = 0.25;
        let u0 = array![1.0];
        let u1 = array![-0.4];
        let gammas = [-2.0, 6.0];
        let direct =
            (gammas[0] * u0[0] + gammas[1] * u1[0]) / k / (p.q[0] + (gammas[0] + gammas[1]) / k);
        let weights: Vec<f64> = gammas.iter().map(|g| g / k).collect();
        let (w, anchor) = collapse_anchors(&weights, &[&u0, &u1]).unwrap();
        let (u, _) = default_prox(&p, w, &anchor, &u1, &ProxOptions::default()).unwrap();
        assert!((u[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn nan_input_rejected() {
        let p = Quadratic { q: vec![1.0] };
        let scheme = GammaMatrix::builtin("backward_euler").unwrap().to_float();
        let u0 = array![f64::NAN];
        assert!(matches!(
            step(&p, &scheme, &u0, 1.0, &ProxOptions::default()),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn integrate_rejects_zero_steps() {
        let p = Quadratic { q: vec![1.0] };
        let scheme = GammaMatrix::builtin("backward_euler").unwrap().to_float();
        assert!(integrate(&p, &scheme, &array![1.0], 0.1, 0, &ProxOptions::default()).is_err());
    }
}
