//! Warm-start MSE loss and the HJB physics-informed loss, with exact
//! parameter gradients.

use serde::{Deserialize, Serialize};

use crate::dataset::GridRecord;
use crate::error::{Error, Result};
use crate::system::AffineSystem;
use crate::value_net::{NetworkParams, Sensitivities};
use crate::State;

/// How the control inside the HJB residual is differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlGradient {
    /// `û = û(∇ₓĴ(θ))` is differentiated along with everything else.
    #[default]
    Full,
    /// `û` is held constant within a step.
    Frozen,
}

/// `(1/n) Σ (Ĵ(x_k) - J*(x_k))²` and its gradient.
pub fn mse_loss_and_grad(params: &NetworkParams, batch: &[GridRecord]) -> (f64, NetworkParams) {
    let mut grads = NetworkParams::zeros();
    if batch.is_empty() {
        return (0.0, grads);
    }
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for rec in batch {
        let tape = params.forward(&rec.state());
        let diff = tape.value - rec.value;
        loss += diff * diff;
        let sens = Sensitivities {
            value: 2.0 * diff / n,
            costate: [0.0, 0.0],
        };
        params.backward(&tape, &sens, &mut grads);
    }
    (loss / n, grads)
}

/// Residual `r` and `dr/dλ` at one point for a given costate.
pub fn residual_and_costate_sensitivity<S: AffineSystem + ?Sized>(
    sys: &S,
    x: &State,
    costate: &State,
    mode: ControlGradient,
) -> (f64, State) {
    let f1 = sys.drift(x);
    let f2 = sys.input_gain(x);
    let r_w = sys.control_weight();
    let u = sys.control_from_costate(x, costate);
    let flow = [f1[0] + f2[0] * u, f1[1] + f2[1] * u];
    let residual =
        sys.state_cost(x) + r_w.value() * u * u + costate[0] * flow[0] + costate[1] * flow[1];
    let mut d = flow;
    if mode == ControlGradient::Full {
        // ∂r/∂u · ∂u/∂λ, with ∂u/∂λ = -½ R⁻¹ f2
        let dr_du = 2.0 * r_w.value() * u + f2[0] * costate[0] + f2[1] * costate[1];
        let scale = -0.5 * r_w.inverse() * dr_du;
        d[0] += scale * f2[0];
        d[1] += scale * f2[1];
    }
    (residual, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    /// `Σ_b (Ĵ - J*)²` over the boundary batch.
    pub boundary: f64,
    /// Unweighted `Σ r²` over the mixed batch.
    pub residual: f64,
    /// `boundary + α · residual`
    pub total: f64,
}

/// HJB loss `Σ_b (Ĵ(x_b) - J*(x_b))² + α Σ_k r(x_k)²` and its gradient.
pub fn hjb_loss_and_grad<S: AffineSystem + ?Sized>(
    params: &NetworkParams,
    mixed: &[GridRecord],
    boundary: &[GridRecord],
    sys: &S,
    alpha: f64,
    mode: ControlGradient,
) -> Result<(LossComponents, NetworkParams)> {
    let mut grads = NetworkParams::zeros();
    let mut parts = LossComponents::default();

    for rec in boundary {
        let x = rec.state();
        let tape = params.forward(&x);
        let diff = tape.value - rec.value;
        if !diff.is_finite() {
            return Err(non_finite("boundary", &x));
        }
        parts.boundary += diff * diff;
        let sens = Sensitivities {
            value: 2.0 * diff,
            costate: [0.0, 0.0],
        };
        params.backward(&tape, &sens, &mut grads);
    }

    for rec in mixed {
        let x = rec.state();
        let tape = params.forward(&x);
        let lam = params.costate(&tape);
        let (r, dr) = residual_and_costate_sensitivity(sys, &x, &lam, mode);
        if !r.is_finite() {
            return Err(non_finite("residual", &x));
        }
        parts.residual += r * r;
        if alpha != 0.0 {
            let c = 2.0 * alpha * r;
            let sens = Sensitivities {
                value: 0.0,
                costate: [c * dr[0], c * dr[1]],
            };
            params.backward(&tape, &sens, &mut grads);
        }
    }

    parts.total = parts.boundary + alpha * parts.residual;
    Ok((parts, grads))
}

fn non_finite(term: &str, x: &State) -> Error {
    Error::Diverged {
        epoch: 0,
        detail: format!("non-finite {term} loss at sample x = [{}, {}]", x[0], x[1]),
        history: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::Dierks;

    fn rec(x: State, value: f64) -> GridRecord {
        GridRecord {
            x1: x[0],
            x2: x[1],
            value,
            lambda1: 0.0,
            lambda2: 0.0,
            control: 0.0,
            is_boundary: false,
        }
    }

    #[test]
    fn zero_network_mse() {
        let (loss, _) = mse_loss_and_grad(&NetworkParams::zeros(), &[rec([10.0, 10.0], 150.0)]);
        assert_eq!(loss, 22_500.0);
    }

    #[test]
    fn exact_labels_give_zero_loss() {
        let mut p = NetworkParams::zeros();
        p.b3 = 4.0;
        let batch = [rec([1.0, 2.0], 4.0), rec([-3.0, 0.5], 4.0)];
        let (loss, grads) = mse_loss_and_grad(&p, &batch);
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn zero_network_residual_is_state_cost() {
        let alpha = 0.7;
        let (parts, _) = hjb_loss_and_grad(
            &NetworkParams::zeros(),
            &[rec([1.0, 0.0], 0.5)],
            &[],
            &Dierks,
            alpha,
            ControlGradient::Full,
        )
        .unwrap();
        assert_eq!(parts.residual, 1.0);
        assert_eq!(parts.total - parts.boundary, alpha * 1.0);
    }

    #[test]
    fn analytic_costate_zeroes_residual_and_sensitivity_agrees() {
        let sys = Dierks;
        for x in [[1.0, 2.0], [-4.0, 7.5], [9.9, -9.9]] {
            let lam = [x[0], 2.0 * x[1]];
            let (r, d_full) = residual_and_costate_sensitivity(&sys, &x, &lam, ControlGradient::Full);
            let (_, d_frozen) =
                residual_and_costate_sensitivity(&sys, &x, &lam, ControlGradient::Frozen);
            assert!(r.abs() < 1e-9);
            for a in 0..2 {
                assert!((d_full[a] - d_frozen[a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn residual_sensitivity_matches_finite_difference_in_costate() {
        let sys = Dierks;
        let x = [0.8, -1.7];
        let lam = [0.3, 1.1];
        let (_, d) = residual_and_costate_sensitivity(&sys, &x, &lam, ControlGradient::Full);
        let h = 1e-6;
        for a in 0..2 {
            let mut lp = lam;
            let mut lm = lam;
            lp[a] += h;
            lm[a] -= h;
            let fd = (sys.hjb_residual(&x, &lp) - sys.hjb_residual(&x, &lm)) / (2.0 * h);
            assert!((fd - d[a]).abs() < 1e-6, "{fd} vs {}", d[a]);
        }
    }

    #[test]
    fn alpha_zero_drops_residual_gradient() {
        use crate::value_net::InitScheme;
        let p = NetworkParams::init(3, InitScheme::GlorotUniform);
        let (parts, grads) = hjb_loss_and_grad(
            &p,
            &[rec([1.0, 1.0], 0.0)],
            &[],
            &Dierks,
            0.0,
            ControlGradient::Full,
        )
        .unwrap();
        assert!(parts.residual > 0.0);
        assert_eq!(parts.total, 0.0);
        assert!(grads.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn non_finite_loss_names_sample() {
        let mut p = NetworkParams::zeros();
        p.b3 = f64::INFINITY;
        let err = hjb_loss_and_grad(
            &p,
            &[],
            &[rec([2.0, 3.0], 1.0)],
            &Dierks,
            1.0,
            ControlGradient::Full,
        )
        .unwrap_err();
        assert!(err.to_string().contains("x = [2, 3]"), "{err}");
    }
}
