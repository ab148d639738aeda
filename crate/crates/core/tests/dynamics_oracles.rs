//! Integrator checks against closed forms, matrix exponentials and refinement.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsefault::dynamics::{
    lorenz_classical, lorenz_grid, lorenz_linearized, lorenz_model, residual, simulate, DynamicModel, FnField,
    LorenzCoupling, LorenzField, VectorField,
};
use sparsefault::signals::{pq_norm, ChannelKind, Signal, TimeGrid};

fn random_linear(seed: u64, n: usize) -> DynamicModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            -rng.gen_range(0.5..2.0)
        } else if rng.gen_bool(0.4) {
            rng.gen_range(-1.0..1.0)
        } else {
            0.0
        }
    });
    let x0 = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DynamicModel::linear(a, x0, vec![0, n - 1], (0..n).collect()).unwrap()
}

fn smooth_input(seed: u64, grid: &TimeGrid, nodes: Vec<usize>) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coef: Vec<(f64, f64)> = nodes.iter().map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.5..3.0))).collect();
    Signal::from_fn(grid.clone(), ChannelKind::Input, nodes, |c, t| coef[c].0 * (coef[c].1 * t).sin()).unwrap()
}

#[test]
fn closed_linear_matches_matrix_exponential() {
    for seed in 0..10 {
        let model = random_linear(seed, 5);
        let a = model.field().state_matrix().unwrap().clone();
        let x0 = DVector::from_column_slice(model.initial_state());
        let horizon = 1.5;
        let tr = simulate(&model, None, &TimeGrid::new(horizon, 300).unwrap()).unwrap();
        let exact = (a * horizon).exp() * x0;
        let got = DVector::from_column_slice(tr.state(300));
        assert!((got - &exact).norm() <= 1e-6 * exact.norm());
    }
}

#[test]
fn constant_input_matches_variation_of_constants() {
    let model = random_linear(42, 4);
    let a = model.field().state_matrix().unwrap().clone();
    let grid = TimeGrid::new(2.0, 400).unwrap();
    let u = DVector::from_vec(vec![0.5, -1.0, 0.25, 2.0]);
    let w = Signal::from_fn(grid.clone(), ChannelKind::Input, (0..4).collect(), |c, _| u[c]).unwrap();
    let tr = simulate(&model, Some(&w), &grid).unwrap();
    let e = (&a * 2.0).exp();
    let x0 = DVector::from_column_slice(model.initial_state());
    let n = a.nrows();
    let exact = &e * x0 + a.clone().try_inverse().unwrap() * (e - DMatrix::identity(n, n)) * u;
    let got = DVector::from_column_slice(tr.state(400));
    assert!((got - &exact).norm() <= 1e-6 * exact.norm());
}

fn terminal_error(model: &DynamicModel, horizon: f64, steps: usize, reference: &[f64]) -> f64 {
    let tr = simulate(model, None, &TimeGrid::new(horizon, steps).unwrap()).unwrap();
    tr.state(steps).iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn fourth_order_convergence() {
    let models = [random_linear(7, 4), lorenz_classical(28.0, 10.0, 8.0 / 3.0)];
    for (model, horizon, base) in [(&models[0], 3.0, 20), (&models[1], 0.5, 100)] {
        let fine = base * 16;
        let reference = simulate(model, None, &TimeGrid::new(horizon, fine).unwrap()).unwrap();
        let reference = reference.state(fine).to_vec();
        let coarse = terminal_error(model, horizon, base, &reference);
        let half = terminal_error(model, horizon, base * 2, &reference);
        let ratio = coarse / half;
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn linear_simulation_superposes() {
    for seed in 10..15 {
        let model = random_linear(seed, 5);
        let grid = TimeGrid::new(2.0, 200).unwrap();
        let other_x0: Vec<f64> = model.initial_state().iter().map(|v| 0.3 - v).collect();
        let other = model.with_initial_state(other_x0.clone()).unwrap();
        let both_x0: Vec<f64> = model.initial_state().iter().zip(&other_x0).map(|(a, b)| a + b).collect();
        let both = model.with_initial_state(both_x0).unwrap();
        let wa = smooth_input(seed, &grid, vec![0, 2]);
        let wb = smooth_input(seed + 100, &grid, vec![0, 2]);
        let sum = wa.add_scaled(1.0, &wb).unwrap();
        let ya = simulate(&model, Some(&wa), &grid).unwrap().outputs;
        let yb = simulate(&other, Some(&wb), &grid).unwrap().outputs;
        let yab = simulate(&both, Some(&sum), &grid).unwrap().outputs;
        let diff = yab.add_scaled(-1.0, &ya).unwrap().add_scaled(-1.0, &yb).unwrap();
        assert!(pq_norm(&diff, 2.0, 2.0).unwrap() <= 1e-8 * pq_norm(&yab, 2.0, 2.0).unwrap());
    }
}

#[test]
fn residuals_vanish_on_closed_data_and_superpose() {
    let model = random_linear(3, 5);
    let grid = TimeGrid::new(2.0, 200).unwrap();
    let closed = simulate(&model, None, &grid).unwrap().outputs;
    let r0 = residual(&model, &closed).unwrap();
    assert_eq!(pq_norm(&r0, 2.0, 2.0).unwrap(), 0.0);
    assert_eq!(r0.kind(), ChannelKind::Residual);

    let wa = smooth_input(1, &grid, vec![1]);
    let wb = smooth_input(2, &grid, vec![3]);
    let ra = residual(&model, &simulate(&model, Some(&wa), &grid).unwrap().outputs).unwrap();
    let rb = residual(&model, &simulate(&model, Some(&wb), &grid).unwrap().outputs).unwrap();
    let sum = Signal::from_fn(grid.clone(), ChannelKind::Input, vec![1, 3], |c, k| {
        let s = if c == 0 { &wa } else { &wb };
        s.channel(0)[(k / grid.step()).round() as usize]
    })
    .unwrap();
    let rab = residual(&model, &simulate(&model, Some(&sum), &grid).unwrap().outputs).unwrap();
    assert!(pq_norm(&ra, 2.0, 2.0).unwrap() > 0.0);
    let diff = rab.add_scaled(-1.0, &ra).unwrap().add_scaled(-1.0, &rb).unwrap();
    assert!(pq_norm(&diff, 2.0, 2.0).unwrap() <= 1e-8 * pq_norm(&rab, 2.0, 2.0).unwrap());

    let wrong = Signal::zeros(grid, ChannelKind::Output, vec![1]);
    assert!(residual(&model, &wrong).is_err());
}

#[test]
fn classical_lorenz_stays_bounded_and_refines() {
    let model = lorenz_classical(28.0, 10.0, 8.0 / 3.0);
    let coarse = simulate(&model, None, &TimeGrid::new(5.0, 5000).unwrap()).unwrap();
    let fine = simulate(&model, None, &TimeGrid::new(5.0, 10000).unwrap()).unwrap();
    let peak = coarse.states.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(peak < 100.0);
    for k in 0..=5000 {
        for i in 0..3 {
            assert!((coarse.states[k][i] - fine.states[2 * k][i]).abs() <= 1e-4);
        }
    }
}

/// Driving the linearised model with the dropped products sampled on the true
/// trajectory reproduces the true trajectory, up to interpolation error. The
/// linear part has an eigenvalue near +11.8, so that error is amplified fast;
/// a short horizon keeps it visible as second-order convergence.
#[test]
fn dropped_terms_are_the_model_error() {
    let truth = lorenz_model(28.0, 10.0, 8.0 / 3.0);
    let lin = lorenz_linearized();
    let field = LorenzField {
        rho: 28.0,
        sigma: 10.0,
        beta_param: 8.0 / 3.0,
        coupling: LorenzCoupling::Xy,
        linearized: false,
    };
    let mut errors = Vec::new();
    for steps in [200, 400, 800] {
        let grid = TimeGrid::new(0.5, steps).unwrap();
        let tr = simulate(&truth, None, &grid).unwrap();
        let w_star = Signal::new(
            grid.clone(),
            ChannelKind::Input,
            vec![0, 1, 2],
            (0..3)
                .map(|i| tr.states.iter().map(|x| field.dropped_terms(x)[i]).collect())
                .collect(),
        )
        .unwrap();
        assert!(w_star.channel(0).iter().all(|&v| v == 0.0));
        let y = simulate(&lin, Some(&w_star), &grid).unwrap().outputs;
        let diff = y.add_scaled(-1.0, &tr.outputs).unwrap();
        errors.push(pq_norm(&diff, 2.0, 2.0).unwrap() / pq_norm(&tr.outputs, 2.0, 2.0).unwrap());
    }
    assert!(errors[0] / errors[1] > 3.0 && errors[1] / errors[2] > 3.0, "{errors:?}");
    assert!(errors[2] < 1e-3, "{errors:?}");
}

#[test]
fn finite_difference_jacobian_fallback() {
    let field = FnField::new(2, |x, out| {
        out[0] = x[0].sin() * x[1];
        out[1] = x[0] * x[0] - x[1];
    });
    let x = [0.4, -1.2];
    let j = field.jacobian(&x);
    let exact = DMatrix::from_row_slice(2, 2, &[x[0].cos() * x[1], x[0].sin(), 2.0 * x[0], -1.0]);
    assert!((j - exact).abs().max() < 1e-8);
    let model = DynamicModel::new(Arc::new(field), vec![0.1, 0.2], vec![0], vec![1]).unwrap();
    assert!(simulate(&model, None, &lorenz_grid()).is_ok());
}
