//! Double-well potentials used by the phase-field problems.

/// Quartic double wells: `Unequal` has wells of different depth at ±1,
/// `Equal` is `u^2 (1-u)^2` with equal-depth wells at 0 and 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoubleWell {
    Unequal,
    Equal,
}

impl DoubleWell {
    pub fn value(&self, u: f64) -> f64 {
        match self {
            // 8u - 16u^2 - (8/3)u^3 + 8u^4
            DoubleWell::Unequal => 8.0 * u - 16.0 * u * u - (8.0 / 3.0) * u.powi(3) + 8.0 * u.powi(4),
            DoubleWell::Equal => {
                let v = u * (1.0 - u);
                v * v
            }
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match self {
            DoubleWell::Unequal => 8.0 - 32.0 * u - 8.0 * u * u + 32.0 * u.powi(3),
            DoubleWell::Equal => 2.0 * u - 6.0 * u * u + 4.0 * u.powi(3),
        }
    }

    pub fn second_derivative(&self, u: f64) -> f64 {
        match self {
            DoubleWell::Unequal => -32.0 - 16.0 * u + 96.0 * u * u,
            DoubleWell::Equal => 2.0 - 12.0 * u + 12.0 * u * u,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_consistent_with_value() {
        let h = 1e-6;
        for well in [DoubleWell::Unequal, DoubleWell::Equal] {
            for i in -20..=20 {
                let u = i as f64 * 0.1;
                let fd = (well.value(u + h) - well.value(u - h)) / (2.0 * h);
                assert!(
                    (fd - well.derivative(u)).abs() < 1e-5 * (1.0 + well.derivative(u).abs()),
                    "{well:?} at {u}"
                );
                let fd2 = (well.derivative(u + h) - well.derivative(u - h)) / (2.0 * h);
                assert!((fd2 - well.second_derivative(u)).abs() < 1e-4 * (1.0 + fd2.abs()));
            }
        }
    }

    #[test]
    fn unequal_well_is_stationary_at_plus_minus_one() {
        // W'(u) = 8 (u-1)(4u-1)(u+1) vanishes at u = ±1 exactly.
        assert_eq!(DoubleWell::Unequal.derivative(1.0), 0.0);
        assert_eq!(DoubleWell::Unequal.derivative(-1.0), 0.0);
    }

    #[test]
    fn equal_well_minima_at_zero_and_one() {
        assert_eq!(DoubleWell::Equal.derivative(0.0), 0.0);
        assert_eq!(DoubleWell::Equal.derivative(1.0), 0.0);
        assert!(DoubleWell::Equal.second_derivative(0.0) > 0.0);
        assert!(DoubleWell::Equal.second_derivative(1.0) > 0.0);
    }
}
