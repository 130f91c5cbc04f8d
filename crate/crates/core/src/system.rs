//! Control-affine systems with quadratic running cost.
//!
//! `ẋ = f1(x) + f2(x)·u`, running cost `q(x) + uᵀRu`. States are two-dimensional
//! and the control is scalar, which is what the value network supports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value_net::CostToGo;
use crate::State;

/// Positive-definite control weight `R` (1×1), inverted once at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlWeight {
    r: f64,
    r_inv: f64,
}

impl ControlWeight {
    pub fn new(r: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::ControlWeightNotPositive(r));
        }
        Ok(Self { r, r_inv: 1.0 / r })
    }

    pub fn value(&self) -> f64 {
        self.r
    }

    pub fn inverse(&self) -> f64 {
        self.r_inv
    }
}

pub trait AffineSystem: Sync {
    /// `f1(x)`
    fn drift(&self, x: &State) -> State;
    /// `f2(x)`, an n×1 column.
    fn input_gain(&self, x: &State) -> State;
    /// `q(x)`, nonnegative with `q(0) = 0`.
    fn state_cost(&self, x: &State) -> f64;
    fn control_weight(&self) -> ControlWeight;

    fn dynamics(&self, x: &State, u: f64) -> State {
        let f1 = self.drift(x);
        let f2 = self.input_gain(x);
        [f1[0] + f2[0] * u, f1[1] + f2[1] * u]
    }

    fn running_cost(&self, x: &State, u: f64) -> f64 {
        self.state_cost(x) + self.control_weight().value() * u * u
    }

    /// Minimizer of the Hamiltonian: `u = -½ R⁻¹ f2(x)ᵀ λ`.
    fn control_from_costate(&self, x: &State, costate: &State) -> f64 {
        let f2 = self.input_gain(x);
        -0.5 * self.control_weight().inverse() * (f2[0] * costate[0] + f2[1] * costate[1])
    }

    fn hamiltonian(&self, x: &State, u: f64, costate: &State) -> f64 {
        let f = self.dynamics(x, u);
        self.running_cost(x, u) + costate[0] * f[0] + costate[1] * f[1]
    }

    /// Steady-state HJB left-hand side with the minimizing control substituted.
    fn hjb_residual(&self, x: &State, costate: &State) -> f64 {
        let u = self.control_from_costate(x, costate);
        self.hamiltonian(x, u, costate)
    }
}

/// Closed-form optimal value, costate and control of a system.
pub trait AnalyticSolution {
    fn analytic_value(&self, x: &State) -> f64;
    fn analytic_costate(&self, x: &State) -> State;
    fn analytic_control(&self, x: &State) -> f64;
}

/// Exposes a system's analytical solution through the [`CostToGo`] interface so it
/// can stand in for a trained network.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticCostToGo<S>(pub S);

impl<S: AnalyticSolution + Sync> CostToGo for AnalyticCostToGo<S> {
    fn value_and_costate(&self, x: &State) -> (f64, State) {
        (self.0.analytic_value(x), self.0.analytic_costate(x))
    }
}

/// Two-state benchmark with known optimal cost-to-go `½x1² + x2²`.
///
/// `b(x) = cos(2x1) + 2`, `f1 = [-x1 + x2, -½(x1 + x2(1 - b²))]`, `f2 = [0, b]ᵀ`,
/// `q(x) = x1² + x2²`, `R = 1`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dierks;

impl Dierks {
    pub fn b(x: &State) -> f64 {
        (2.0 * x[0]).cos() + 2.0
    }
}

impl AffineSystem for Dierks {
    fn drift(&self, x: &State) -> State {
        let b = Self::b(x);
        [-x[0] + x[1], -0.5 * (x[0] + x[1] * (1.0 - b * b))]
    }

    fn input_gain(&self, x: &State) -> State {
        [0.0, Self::b(x)]
    }

    fn state_cost(&self, x: &State) -> f64 {
        x[0] * x[0] + x[1] * x[1]
    }

    fn control_weight(&self) -> ControlWeight {
        ControlWeight { r: 1.0, r_inv: 1.0 }
    }
}

impl AnalyticSolution for Dierks {
    fn analytic_value(&self, x: &State) -> f64 {
        0.5 * x[0] * x[0] + x[1] * x[1]
    }

    fn analytic_costate(&self, x: &State) -> State {
        [x[0], 2.0 * x[1]]
    }

    fn analytic_control(&self, x: &State) -> f64 {
        self.control_from_costate(x, &self.analytic_costate(x))
    }
}

/// Axis-aligned box sampled by a uniform mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: State,
    pub upper: State,
    pub resolution: usize,
}

impl Default for Domain {
    fn default() -> Self {
        Self {
            lower: [-10.0, -10.0],
            upper: [10.0, 10.0],
            resolution: 500,
        }
    }
}

impl Domain {
    pub fn new(lower: State, upper: State, resolution: usize) -> Result<Self> {
        let d = Self {
            lower,
            upper,
            resolution,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn square(half_width: f64, resolution: usize) -> Result<Self> {
        Self::new([-half_width; 2], [half_width; 2], resolution)
    }

    pub fn validate(&self) -> Result<()> {
        for axis in 0..2 {
            let (lo, hi) = (self.lower[axis], self.upper[axis]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidDomain(format!(
                    "axis {axis}: lower {lo} must be below upper {hi}"
                )));
            }
        }
        if self.resolution < 2 {
            return Err(Error::InvalidDomain(format!(
                "resolution {} is below 2",
                self.resolution
            )));
        }
        Ok(())
    }

    /// Mesh coordinates along one axis; the end points are exactly `lower` and `upper`.
    pub fn axis(&self, axis: usize) -> Vec<f64> {
        let n = self.resolution;
        let (lo, hi) = (self.lower[axis], self.upper[axis]);
        let step = (hi - lo) / (n - 1) as f64;
        (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + i as f64 * step
                }
            })
            .collect()
    }

    pub fn contains(&self, x: &State) -> bool {
        (0..2).all(|a| x[a] >= self.lower[a] && x[a] <= self.upper[a])
    }
}
