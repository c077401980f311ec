//! Spatial grids: periodic spectral grids (FFT based) and a fixed-boundary
//! finite-difference line.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::flow::State;

pub type Cplx = Complex<f64>;

/// Uniform periodic grid on `[-L, L)` with `n` points and spectral
/// wavenumbers `xi_m = pi m / L`, `m in [-n/2, n/2)`.
#[derive(Clone)]
pub struct PeriodicGrid1d {
    n: usize,
    half_width: f64,
    xi: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl PeriodicGrid1d {
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if !n.is_power_of_two() {
            return Err(Error::Config(format!("grid size must be a power of two, got {n}")));
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let xi = wavenumbers(n, half_width);
        Ok(Self { n, half_width, xi, fft, ifft })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Grid spacing `2L/n`.
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.n).map(|j| -self.half_width + j as f64 * h).collect()
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn forward(&self, u: &State) -> Vec<Cplx> {
        let mut buf: Vec<Cplx> = u.iter().map(|&x| Cplx::new(x, 0.0)).collect();
        let mut scratch = vec![Cplx::default(); self.fft.get_inplace_scratch_len()];
        self.fft.process_with_scratch(&mut buf, &mut scratch);
        buf
    }

    /// Inverse transform with 1/n normalization; returns the real part.
    pub fn inverse(&self, mut coeffs: Vec<Cplx>) -> State {
        let mut scratch = vec![Cplx::default(); self.ifft.get_inplace_scratch_len()];
        self.ifft.process_with_scratch(&mut coeffs, &mut scratch);
        let scale = 1.0 / self.n as f64;
        State::from_iter(coeffs.iter().map(|c| c.re * scale))
    }
}

/// Uniform periodic grid on `[-L, L)^2`, `n` points per axis, row-major
/// storage (`u[i * n + j]` at `y_i, x_j`).
#[derive(Clone)]
pub struct PeriodicGrid2d {
    n: usize,
    half_width: f64,
    xi: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl PeriodicGrid2d {
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if !n.is_power_of_two() {
            return Err(Error::Config(format!("grid size must be a power of two, got {n}")));
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let xi = wavenumbers(n, half_width);
        Ok(Self { n, half_width, xi, fft, ifft })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn points(&self) -> usize {
        self.n * self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    /// Evaluate `f(x, y)` on the grid, row-major.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> State {
        let h = self.spacing();
        let mut out = Vec::with_capacity(self.points());
        for i in 0..self.n {
            let y = -self.half_width + i as f64 * h;
            for j in 0..self.n {
                let x = -self.half_width + j as f64 * h;
                out.push(f(x, y));
            }
        }
        State::from_vec(out)
    }

    /// Laplacian symbol `|xi|^2` at flat index `i * n + j`.
    pub fn sym_lap(&self, idx: usize) -> f64 {
        let xi_y = self.xi[idx / self.n];
        let xi_x = self.xi[idx % self.n];
        xi_x * xi_x + xi_y * xi_y
    }

    pub fn forward(&self, u: &State) -> Vec<Cplx> {
        let mut buf: Vec<Cplx> = u.iter().map(|&x| Cplx::new(x, 0.0)).collect();
        self.transform(&mut buf, &self.fft);
        buf
    }

    pub fn inverse(&self, mut coeffs: Vec<Cplx>) -> State {
        self.transform(&mut coeffs, &self.ifft);
        let scale = 1.0 / self.points() as f64;
        State::from_iter(coeffs.iter().map(|c| c.re * scale))
    }

    fn transform(&self, buf: &mut [Cplx], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let mut scratch = vec![Cplx::default(); plan.get_inplace_scratch_len()];
        for row in buf.chunks_exact_mut(n) {
            plan.process_with_scratch(row, &mut scratch);
        }
        transpose_square(buf, n);
        for row in buf.chunks_exact_mut(n) {
            plan.process_with_scratch(row, &mut scratch);
        }
        transpose_square(buf, n);
    }
}

fn transpose_square(buf: &mut [Cplx], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

fn wavenumbers(n: usize, half_width: f64) -> Vec<f64> {
    let base = std::f64::consts::PI / half_width;
    (0..n)
        .map(|m| {
            let freq = if m < n / 2 { m as isize } else { m as isize - n as isize };
            base * freq as f64
        })
        .collect()
}

/// Interior points of `[-a, a]` with fixed boundary values and a
/// second-order central-difference Laplacian.
#[derive(Debug, Clone)]
pub struct DirichletGrid1d {
    n: usize,
    half_width: f64,
    left_value: f64,
    right_value: f64,
}

impl DirichletGrid1d {
    pub fn new(n: usize, half_width: f64, left_value: f64, right_value: f64) -> Self {
        Self { n, half_width, left_value, right_value }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Spacing between nodes including the boundary nodes.
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n + 1) as f64
    }

    pub fn boundary(&self) -> (f64, f64) {
        (self.left_value, self.right_value)
    }

    /// Interior node coordinates.
    pub fn points(&self) -> Vec<f64> {
        let h = self.spacing();
        (1..=self.n).map(|j| -self.half_width + j as f64 * h).collect()
    }

    /// `-Laplacian_h u + 0`, with boundary values as ghost nodes.
    pub fn neg_laplacian(&self, u: &State) -> State {
        let h2 = self.spacing().powi(2);
        let n = self.n;
        State::from_shape_fn(n, |j| {
            let left = if j == 0 { self.left_value } else { u[j - 1] };
            let right = if j + 1 == n { self.right_value } else { u[j + 1] };
            -(left - 2.0 * u[j] + right) / h2
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_1d_round_trip() {
        let g = PeriodicGrid1d::new(64, 1.0).unwrap();
        let u = State::from_iter(g.points().iter().map(|x| (3.0 * x).sin() + 0.5 * x.cos()));
        let back = g.inverse(g.forward(&u));
        let err = (&u - &back).iter().map(|e| e.abs()).fold(0.0, f64::max);
        let scale = u.iter().map(|e| e.abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12 * scale.max(1.0), "round trip error {err}");
    }

    #[test]
    fn periodic_2d_round_trip() {
        let g = PeriodicGrid2d::new(32, 10.0).unwrap();
        let u = g.sample(|x, y| (0.3 * x).sin() * (0.2 * y).cos() + 0.1);
        let back = g.inverse(g.forward(&u));
        let err = (&u - &back).iter().map(|e| e.abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12, "round trip error {err}");
    }

    #[test]
    fn spectral_derivative_of_single_mode() {
        // u = sin(pi x) on [-1, 1): -u'' = pi^2 u exactly.
        let g = PeriodicGrid1d::new(32, 1.0).unwrap();
        let u = State::from_iter(g.points().iter().map(|x| (std::f64::consts::PI * x).sin()));
        let mut c = g.forward(&u);
        for (m, v) in c.iter_mut().enumerate() {
            *v *= g.xi()[m] * g.xi()[m];
        }
        let lap = g.inverse(c);
        let pi2 = std::f64::consts::PI.powi(2);
        for (a, b) in lap.iter().zip(u.iter()) {
            assert!((a - pi2 * b).abs() < 1e-10);
        }
    }

    #[test]
    fn power_of_two_required() {
        assert!(PeriodicGrid1d::new(100, 1.0).is_err());
        assert!(PeriodicGrid2d::new(48, 1.0).is_err());
    }

    #[test]
    fn dirichlet_laplacian_of_linear_profile_vanishes() {
        // The linear interpolant of the boundary data is harmonic.
        let g = DirichletGrid1d::new(31, 10.0, -1.0, 1.0);
        let u = State::from_iter(g.points().iter().map(|x| x / 10.0));
        let lap = g.neg_laplacian(&u);
        for v in lap.iter() {
            assert!(v.abs() < 1e-12);
        }
    }
}
