//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use hjb_core::dataset::GridRecord;
use hjb_core::system::{AnalyticSolution, Dierks};
use hjb_core::value_net::{InitScheme, NetworkParams, PARAM_COUNT};
use hjb_core::State;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_params(rng: &mut ChaCha8Rng) -> NetworkParams {
    let mut p = NetworkParams::init(rng.random(), InitScheme::GlorotUniform);
    for v in p.iter_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    p
}

pub fn random_state(rng: &mut ChaCha8Rng, half: f64) -> State {
    [rng.random_range(-half..half), rng.random_range(-half..half)]
}

pub fn record(x: State) -> GridRecord {
    let lam = Dierks.analytic_costate(&x);
    GridRecord {
        x1: x[0],
        x2: x[1],
        value: Dierks.analytic_value(&x),
        lambda1: lam[0],
        lambda2: lam[1],
        control: Dierks.analytic_control(&x),
        is_boundary: false,
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn rel_err(exact: &[f64], approx: &[f64]) -> f64 {
    let diff: Vec<f64> = exact.iter().zip(approx).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(approx).max(1e-12)
}

/// Central differences of a scalar function of the parameter vector.
pub fn fd_param_grad(p: &NetworkParams, f: impl Fn(&NetworkParams) -> f64) -> Vec<f64> {
    let base = p.to_vec();
    (0..PARAM_COUNT)
        .map(|i| {
            let h = 1e-6 * base[i].abs().max(1.0);
            let mut up = base.clone();
            let mut dn = base.clone();
            up[i] += h;
            dn[i] -= h;
            let fu = f(&NetworkParams::from_slice(&up).unwrap());
            let fd = f(&NetworkParams::from_slice(&dn).unwrap());
            (fu - fd) / (2.0 * h)
        })
        .collect()
}

/// Residual of the steady-state HJB equation for the Dierks system, written
/// out from its closed-form dynamics.
pub fn dierks_residual(x: State, lam: State) -> f64 {
    let b = (2.0 * x[0]).cos() + 2.0;
    let f1 = [-x[0] + x[1], -0.5 * (x[0] + x[1] * (1.0 - b * b))];
    let u = -0.5 * b * lam[1];
    x[0] * x[0] + x[1] * x[1] + u * u + lam[0] * f1[0] + lam[1] * (f1[1] + b * u)
}

/// Gaussian fit and densities computed through a Cholesky factor.
pub fn oracle_densities(states: &[State]) -> Vec<f64> {
    let n = states.len() as f64;
    let m1 = states.iter().map(|x| x[0]).sum::<f64>() / n;
    let m2 = states.iter().map(|x| x[1]).sum::<f64>() / n;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for x in states {
        a += (x[0] - m1).powi(2);
        b += (x[0] - m1) * (x[1] - m2);
        c += (x[1] - m2).powi(2);
    }
    let (a, b, c) = (a / (n - 1.0), b / (n - 1.0), c / (n - 1.0));
    let l11 = a.sqrt();
    let l21 = b / l11;
    let l22 = (c - l21 * l21).sqrt();
    states
        .iter()
        .map(|x| {
            let y1 = (x[0] - m1) / l11;
            let y2 = (x[1] - m2 - l21 * y1) / l22;
            (-0.5 * (y1 * y1 + y2 * y2)).exp() / (2.0 * std::f64::consts::PI * l11 * l22)
        })
        .collect()
}

/// 19 states within 0.05 of the origin (centre plus rings of 6 and 12) and
/// one state at [100, 100], inserted at `slot`.
pub fn planted(slot: usize) -> Vec<State> {
    let mut v: Vec<State> = vec![[0.0, 0.0]];
    for k in 0..6 {
        let t = std::f64::consts::TAU * k as f64 / 6.0;
        v.push([0.025 * t.cos(), 0.025 * t.sin()]);
    }
    for k in 0..12 {
        let t = std::f64::consts::TAU * k as f64 / 12.0 + 0.1;
        v.push([0.05 * t.cos(), 0.05 * t.sin()]);
    }
    v.insert(slot, [100.0, 100.0]);
    v
}
