//! Explicit integrators: adaptive Tsitouras 5(4) and forward Euler.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::AffineSystem;
use crate::State;

/// Tsitouras (2011) 5(4) tableau. The last stage is evaluated at the new
/// point, so it doubles as the first stage of the next step.
pub mod tsit5 {
    pub const C: [f64; 7] = [0.0, 0.161, 0.327, 0.9, 0.980_025_540_904_509_7, 1.0, 1.0];

    pub const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.161, 0.0, 0.0, 0.0, 0.0, 0.0],
        [-0.008_480_655_492_356_989, 0.335_480_655_492_357, 0.0, 0.0, 0.0, 0.0],
        [2.897_153_057_105_493, -6.359_448_489_975_075, 4.362_295_432_869_581_5, 0.0, 0.0, 0.0],
        [
            5.325_864_828_439_257,
            -11.748_883_564_062_828,
            7.495_539_342_889_836_5,
            -0.092_495_066_361_755_25,
            0.0,
            0.0,
        ],
        [
            5.861_455_442_946_42,
            -12.920_969_317_847_11,
            8.159_367_898_576_159,
            -0.071_584_973_281_401,
            -0.028_269_050_394_068_383,
            0.0,
        ],
        [
            0.096_460_766_818_065_23,
            0.01,
            0.479_889_650_414_499_6,
            1.379_008_574_103_742,
            -3.290_069_515_436_081,
            2.324_710_524_099_774,
        ],
    ];

    /// Fifth-order weights (equal to the last row of `A`, zero on stage 7).
    pub const B: [f64; 7] = [
        0.096_460_766_818_065_23,
        0.01,
        0.479_889_650_414_499_6,
        1.379_008_574_103_742,
        -3.290_069_515_436_081,
        2.324_710_524_099_774,
        0.0,
    ];

    /// Difference between the fifth- and fourth-order weights.
    pub const B_ERR: [f64; 7] = [
        -0.001_780_011_052_225_777_14,
        -0.000_816_434_459_656_746_9,
        0.007_880_878_010_261_995,
        -0.144_711_007_173_262_9,
        0.582_357_165_452_555_2,
        -0.458_082_105_929_186_97,
        1.0 / 66.0,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// `None` picks `1e-4 · (tf - t0)`.
    pub initial_step: Option<f64>,
    pub max_steps: usize,
    pub safety_factor: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-7,
            atol: 1e-6,
            initial_step: None,
            max_steps: 1_000_000,
            safety_factor: 0.9,
        }
    }
}

impl IntegratorConfig {
    fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidConfig("rtol and atol must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be positive".into()));
        }
        if !(self.safety_factor > 0.0 && self.safety_factor <= 1.0) {
            return Err(Error::InvalidConfig("safety_factor must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Accepted points of an integration, optionally with the applied control.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<const N: usize = 2> {
    pub times: Vec<f64>,
    pub states: Vec<[f64; N]>,
    pub controls: Option<Vec<f64>>,
}

impl<const N: usize> Trajectory<N> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&[f64; N]> {
        self.states.last()
    }
}

impl Trajectory<2> {
    /// Writes `t,x1,x2[,u]` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        match &self.controls {
            Some(u) => {
                w.write_record(["t", "x1", "x2", "u"])?;
                for ((t, x), u) in self.times.iter().zip(&self.states).zip(u) {
                    w.serialize((t, x[0], x[1], u))?;
                }
            }
            None => {
                w.write_record(["t", "x1", "x2"])?;
                for (t, x) in self.times.iter().zip(&self.states) {
                    w.serialize((t, x[0], x[1]))?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, coeffs: &[f64], k: &[[f64; N]]) -> [f64; N] {
    let mut out = *y;
    for (c, ki) in coeffs.iter().zip(k) {
        if *c != 0.0 {
            for d in 0..N {
                out[d] += h * c * ki[d];
            }
        }
    }
    out
}

/// Adaptive Tsit5 on an autonomous field. Every accepted step is recorded.
pub fn tsit5_integrate<const N: usize, F>(
    mut f: F,
    x0: [f64; N],
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<Trajectory<N>>
where
    F: FnMut(&[f64; N]) -> [f64; N],
{
    cfg.validate()?;
    let (t0, tf) = t_span;
    if !(tf > t0) {
        return Err(Error::InvalidConfig(format!("tf {tf} must exceed t0 {t0}")));
    }
    use tsit5::{A, B, B_ERR, C};
    let _ = C;

    let mut t = t0;
    let mut y = x0;
    let mut h = cfg.initial_step.unwrap_or(1e-4 * (tf - t0)).min(tf - t0);
    let mut times = vec![t0];
    let mut states = vec![x0];
    let mut k = [[0.0; N]; 7];
    k[0] = f(&y);
    let mut steps = 0usize;

    while t < tf {
        if steps >= cfg.max_steps {
            return Err(Error::MaxSteps {
                max_steps: cfg.max_steps,
                t,
            });
        }
        steps += 1;
        let last = t + h >= tf;
        if last {
            h = tf - t;
        }
        if h <= f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t });
        }

        for s in 1..7 {
            let ys = axpy(&y, h, &A[s][..s], &k[..s]);
            k[s] = f(&ys);
        }
        let y_new = axpy(&y, h, &B[..6], &k[..6]);
        let k_new = f(&y_new);
        let mut err_norm = 0.0f64;
        for d in 0..N {
            let mut e = 0.0;
            for s in 0..6 {
                e += B_ERR[s] * k[s][d];
            }
            e += B_ERR[6] * k_new[d];
            e *= h;
            let scale = cfg.atol + cfg.rtol * y[d].abs().max(y_new[d].abs());
            err_norm = err_norm.max((e / scale).abs());
        }
        if !err_norm.is_finite() {
            h *= 0.2;
            continue;
        }

        let factor = if err_norm == 0.0 {
            5.0
        } else {
            (cfg.safety_factor * err_norm.powf(-0.2)).clamp(0.2, 5.0)
        };
        if err_norm <= 1.0 {
            t = if last { tf } else { t + h };
            y = y_new;
            k[0] = k_new;
            times.push(t);
            states.push(y);
        }
        h *= factor;
    }

    Ok(Trajectory {
        times,
        states,
        controls: None,
    })
}

/// `x + dt · (f1(x) + f2(x) u)`
pub fn euler_step<S: AffineSystem + ?Sized>(sys: &S, x: &State, u: f64, dt: f64) -> State {
    let f = sys.dynamics(x, u);
    [x[0] + dt * f[0], x[1] + dt * f[1]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{AnalyticSolution, Dierks};

    #[test]
    fn tableau_row_sums_match_nodes() {
        for s in 0..7 {
            let sum: f64 = tsit5::A[s].iter().sum();
            assert!((sum - tsit5::C[s]).abs() < 1e-14, "row {s}: {sum}");
        }
    }

    // Order conditions up to order 5 for the propagated weights and order 4
    // for the embedded ones, computed from the tableau.
    #[test]
    fn order_conditions() {
        let a = |i: usize, j: usize| if j < 6 { tsit5::A[i][j] } else { 0.0 };
        let c = tsit5::C;
        let check = |b: &[f64; 7], order: usize| {
            let dot = |v: &dyn Fn(usize) -> f64| (0..7).map(|i| b[i] * v(i)).sum::<f64>();
            let ac = |i: usize| (0..7).map(|j| a(i, j) * c[j]).sum::<f64>();
            let ac2 = |i: usize| (0..7).map(|j| a(i, j) * c[j] * c[j]).sum::<f64>();
            let aac = |i: usize| (0..7).map(|j| a(i, j) * ac(j)).sum::<f64>();
            let mut conds: Vec<(f64, f64)> = vec![
                (dot(&|_| 1.0), 1.0),
                (dot(&|i| c[i]), 0.5),
                (dot(&|i| c[i] * c[i]), 1.0 / 3.0),
                (dot(&ac), 1.0 / 6.0),
                (dot(&|i| c[i].powi(3)), 0.25),
                (dot(&|i| c[i] * ac(i)), 1.0 / 8.0),
                (dot(&ac2), 1.0 / 12.0),
                (dot(&aac), 1.0 / 24.0),
            ];
            if order >= 5 {
                conds.push((dot(&|i| c[i].powi(4)), 0.2));
                conds.push((dot(&|i| c[i] * c[i] * ac(i)), 0.1));
                conds.push((dot(&|i| ac(i) * ac(i)), 1.0 / 20.0));
                conds.push((dot(&|i| c[i] * ac2(i)), 1.0 / 15.0));
                conds.push((dot(&|i| c[i] * aac(i)), 1.0 / 30.0));
            }
            for (k, (got, want)) in conds.iter().enumerate() {
                assert!((got - want).abs() < 1e-12, "order {order} condition {k}: {got} vs {want}");
            }
        };
        check(&tsit5::B, 5);
        let mut embedded = [0.0; 7];
        for i in 0..7 {
            embedded[i] = tsit5::B[i] - tsit5::B_ERR[i];
        }
        check(&embedded, 4);
    }

    #[test]
    fn exponential_decay() {
        let traj = tsit5_integrate(|x: &[f64; 1]| [-x[0]], [1.0], (0.0, 1.0), &Default::default())
            .unwrap();
        let end = traj.last_state().unwrap()[0];
        assert!((end - (-1.0f64).exp()).abs() < 1e-6, "{end}");
        assert_eq!(*traj.times.last().unwrap(), 1.0);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn zero_field_is_constant() {
        let traj =
            tsit5_integrate(|_: &[f64; 2]| [0.0, 0.0], [3.0, -2.0], (0.0, 10.0), &Default::default())
                .unwrap();
        assert!(traj.states.iter().all(|s| *s == [3.0, -2.0]));
        assert!(traj.len() < 20);
    }

    #[test]
    fn tighter_tolerance_reduces_error() {
        let mut errors = Vec::new();
        for tol in [1e-5, 1e-7, 1e-9] {
            let cfg = IntegratorConfig {
                rtol: tol,
                atol: tol,
                ..Default::default()
            };
            let traj = tsit5_integrate(|x: &[f64; 1]| [-x[0]], [1.0], (0.0, 1.0), &cfg).unwrap();
            errors.push((traj.last_state().unwrap()[0] - (-1.0f64).exp()).abs());
        }
        assert!(errors[1] < errors[0] && errors[2] < errors[1], "{errors:?}");
    }

    #[test]
    fn step_limit_is_reported() {
        let cfg = IntegratorConfig {
            max_steps: 3,
            ..Default::default()
        };
        let err = tsit5_integrate(|x: &[f64; 1]| [-x[0]], [1.0], (0.0, 100.0), &cfg).unwrap_err();
        assert!(matches!(err, Error::MaxSteps { max_steps: 3, .. }));
    }

    #[test]
    fn rejects_empty_span() {
        assert!(tsit5_integrate(|x: &[f64; 1]| *x, [1.0], (1.0, 1.0), &Default::default()).is_err());
    }

    #[test]
    fn euler_examples() {
        let s = Dierks;
        let x = euler_step(&s, &[1.0, 0.0], 0.0, 0.01);
        assert!((x[0] - 0.99).abs() < 1e-15 && (x[1] + 0.005).abs() < 1e-15);
        assert_eq!(euler_step(&s, &[0.0, 0.0], 0.0, 0.5), [0.0, 0.0]);

        // x2 = 0 with x1 = 0 and u = 0 is an equilibrium; for x = [c, c] the first
        // component is stationary and u cancels the second.
        let c = 0.7;
        let x = [c, c];
        let f1 = s.drift(&x);
        let u = -f1[1] / Dierks::b(&x);
        let next = euler_step(&s, &x, u, 0.1);
        assert!((next[0] - c).abs() < 1e-15 && (next[1] - c).abs() < 1e-15);

        let x0 = [2.0, -1.0];
        let d1 = euler_step(&s, &x0, 0.3, 1e-3);
        let d2 = euler_step(&s, &x0, 0.3, 1e-4);
        let n = |v: State| ((v[0] - x0[0]).powi(2) + (v[1] - x0[1]).powi(2)).sqrt();
        assert!((n(d1) / n(d2) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn analytic_closed_loop_keeps_hamiltonian_zero() {
        let s = Dierks;
        let traj = tsit5_integrate(
            |x: &State| s.dynamics(x, s.analytic_control(x)),
            [-10.0, -10.0],
            (0.0, 5.0),
            &Default::default(),
        )
        .unwrap();
        for x in &traj.states {
            let h = s.hamiltonian(x, s.analytic_control(x), &s.analytic_costate(x));
            assert!(h.abs() < 1e-6);
        }
    }
}
