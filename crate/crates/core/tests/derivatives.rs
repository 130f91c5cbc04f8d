//! Exact network derivatives against central finite differences.

mod common;

use common::*;
use hjb_core::dataset::GridRecord;
use hjb_core::system::{AffineSystem, Dierks};
use hjb_core::training::{hjb_loss_and_grad, mse_loss_and_grad, ControlGradient};
use hjb_core::value_net::{NetworkParams, Sensitivities};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn costate_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = random_params(&mut rng);
        let x = random_state(&mut rng, 10.0);
        let lam = p.costate(&p.forward(&x));
        let h = 1e-5;
        let fd: Vec<f64> = (0..2)
            .map(|k| {
                let mut a = x;
                let mut b = x;
                a[k] += h;
                b[k] -= h;
                (p.value(&a) - p.value(&b)) / (2.0 * h)
            })
            .collect();
        worst = worst.max(rel_err(&lam, &fd));
    }
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = random_params(&mut rng);
        let x = random_state(&mut rng, 5.0);
        let sens = Sensitivities {
            value: rng.random_range(-2.0..2.0),
            costate: [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
        };
        let mut g = NetworkParams::zeros();
        p.backward(&p.forward(&x), &sens, &mut g);
        let fd = fd_param_grad(&p, |q| {
            let tape = q.forward(&x);
            let lam = q.costate(&tape);
            sens.value * tape.value + sens.costate[0] * lam[0] + sens.costate[1] * lam[1]
        });
        worst = worst.max(rel_err(&g.to_vec(), &fd));
    }
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn mse_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let p = random_params(&mut rng);
        let batch: Vec<GridRecord> = (0..6).map(|_| record(random_state(&mut rng, 3.0))).collect();
        let (_, g) = mse_loss_and_grad(&p, &batch);
        let fd = fd_param_grad(&p, |q| {
            batch.iter().map(|r| (q.value(&r.state()) - r.value).powi(2)).sum::<f64>() / batch.len() as f64
        });
        worst = worst.max(rel_err(&g.to_vec(), &fd));
    }
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn hjb_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let p = random_params(&mut rng);
        let mixed: Vec<GridRecord> = (0..5).map(|_| record(random_state(&mut rng, 3.0))).collect();
        let boundary: Vec<GridRecord> = (0..4).map(|_| record(random_state(&mut rng, 3.0))).collect();
        let alpha = [1.0, 0.3, 2.5][case % 3];
        let (_, g) = hjb_loss_and_grad(&p, &mixed, &boundary, &Dierks, alpha, ControlGradient::Full).unwrap();
        let fd = fd_param_grad(&p, |q| {
            let b: f64 = boundary.iter().map(|r| (q.value(&r.state()) - r.value).powi(2)).sum();
            let h: f64 = mixed
                .iter()
                .map(|r| dierks_residual(r.state(), q.costate(&q.forward(&r.state()))).powi(2))
                .sum();
            b + alpha * h
        });
        worst = worst.max(rel_err(&g.to_vec(), &fd));
    }
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn frozen_control_gradient_agrees_with_full() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..10 {
        let p = random_params(&mut rng);
        let mixed: Vec<GridRecord> = (0..5).map(|_| record(random_state(&mut rng, 3.0))).collect();
        let (a, ga) = hjb_loss_and_grad(&p, &mixed, &[], &Dierks, 1.0, ControlGradient::Full).unwrap();
        let (b, gb) = hjb_loss_and_grad(&p, &mixed, &[], &Dierks, 1.0, ControlGradient::Frozen).unwrap();
        assert_eq!(a, b);
        assert!(rel_err(&ga.to_vec(), &gb.to_vec()) < 1e-12);
    }
}

#[test]
fn library_residual_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..200 {
        let x = random_state(&mut rng, 10.0);
        let lam = random_state(&mut rng, 20.0);
        let r = Dierks.hjb_residual(&x, &lam);
        assert!((r - dierks_residual(x, lam)).abs() <= 1e-12 * r.abs().max(1.0));
    }
}
