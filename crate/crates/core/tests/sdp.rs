mod common;

use common::{certainty_equivalence_error, check_random_sdp, control_instance, rng};
use mixlqc::control::{control_step, recover_control};
use mixlqc::horizon::{assemble_cost, build_horizon};
use mixlqc::model::NoiseModel;
use mixlqc::sdp::{build_sdp, solve_sdp, SdpInstance};
use mixlqc::{CostSpec, MixedBelief, SolverOptions, SystemModel};
use nalgebra::{DMatrix, DVector};

#[test]
fn solutions_are_certified_and_bound_sampled_costs() {
    for seed in 0..50 {
        let horizon = 1 + (seed as usize % 3);
        let c = check_random_sdp(seed, horizon, 10_000);
        assert!(c.certificate >= -1e-6, "seed {seed}: certificate {:e}", c.certificate);
        assert!(c.excess <= 1e-6, "seed {seed}: sampled objective exceeds ρ by {:e}", c.excess);
        assert!(
            c.cost_excess <= 1e-6 * (1.0 + c.rho.abs()),
            "seed {seed}: sampled cost exceeds bound by {:e}",
            c.cost_excess
        );
    }
}

#[test]
fn enlarging_the_estimation_set_never_lowers_rho() {
    let opts = SolverOptions::default();
    for seed in 0..20 {
        let mut r = rng(300 + seed);
        let inst = control_instance(1 + seed as usize % 3, &mut r);
        let hm = build_horizon(&inst.model, inst.belief.step, inst.cost.horizon).unwrap();
        let hc = assemble_cost(&hm, &inst.cost, &inst.belief, &inst.noise).unwrap();
        let small = solve_sdp(&build_sdp(&hc, &inst.belief, &inst.noise).unwrap(), &opts).unwrap();
        let mut wide = inst.belief.clone();
        wide.shape *= 4.0;
        let large = solve_sdp(&build_sdp(&hc, &wide, &inst.noise).unwrap(), &opts).unwrap();
        assert!(
            large.rho >= small.rho - 1e-6 * small.rho.abs(),
            "seed {seed}: {} < {}",
            large.rho,
            small.rho
        );
    }
}

#[test]
fn vanishing_sets_approach_the_riccati_control() {
    for seed in 0..20 {
        let errors: Vec<f64> = [1e-2, 1e-4, 1e-6]
            .iter()
            .map(|&eps| certainty_equivalence_error(seed, eps))
            .collect();
        assert!(errors[2] <= 1e-4, "seed {seed}: errors {errors:?}");
        assert!(errors[1] <= errors[0] && errors[2] <= errors[1].max(1e-7), "seed {seed}: {errors:?}");
    }
}

#[test]
fn scaling_the_cost_keeps_the_control_and_scales_rho() {
    let opts = SolverOptions::default();
    for seed in 0..10 {
        let mut r = rng(700 + seed);
        let inst = control_instance(1 + seed as usize % 3, &mut r);
        let solve = |cost: &CostSpec| {
            let hm = build_horizon(&inst.model, inst.belief.step, cost.horizon).unwrap();
            let hc = assemble_cost(&hm, cost, &inst.belief, &inst.noise).unwrap();
            let sol = solve_sdp(&build_sdp(&hc, &inst.belief, &inst.noise).unwrap(), &opts).unwrap();
            (recover_control(&sol, &hc, 1).unwrap(), sol)
        };
        let (u1, s1) = solve(&inst.cost);
        for lambda in [0.5, 2.0] {
            let scaled = CostSpec::new(&inst.cost.q * lambda, &inst.cost.r * lambda, inst.cost.horizon).unwrap();
            let (u, s) = solve(&scaled);
            assert!((&u - &u1).norm() <= 1e-4 * (1.0 + u1.norm()), "seed {seed} λ {lambda}: {u} vs {u1}");
            assert!((s.rho - lambda * s1.rho).abs() <= 1e-5 * lambda * s1.rho.abs());
            // y lives in ℬ^{1/2} coordinates, so it scales with √λ.
            assert!((&s.y - &s1.y * lambda.sqrt()).norm() <= 1e-4 * (1.0 + s.y.norm()));
        }
    }
}

#[test]
fn zero_optimum_terminates() {
    // min_y max_{|η| ≤ 1} y² + 2yη has value 0 at y = 0; the W coordinate is inert.
    let inst = SdpInstance::new(
        DVector::zeros(2),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::zeros(2, 2),
        &DMatrix::identity(1, 1),
        &DMatrix::identity(1, 1),
        0.0,
    )
    .unwrap();
    let sol = solve_sdp(&inst, &SolverOptions::default()).unwrap();
    let worst = |y: f64| (-1000..=1000).map(|i| y * y + 2.0 * y * (i as f64 / 1000.0)).fold(f64::MIN, f64::max);
    assert!(sol.rho >= worst(sol.y[0]) - 1e-9);
    assert!(sol.rho.abs() <= 1e-6 && sol.y[0].abs() <= 1e-3, "ρ {} y {}", sol.rho, sol.y[0]);
    assert!(sol.min_eig_certificate >= -1e-8);
}

#[test]
fn scalar_last_step_matches_grid_search() {
    // x⁺ = x + u + w, cost x⁺² + u², x = x̂ + e, |e| ≤ 1, |w| ≤ 0.5.
    let model = SystemModel::new(
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1),
    )
    .unwrap();
    let noise = NoiseModel::new(
        DMatrix::zeros(1, 1),
        DMatrix::identity(1, 1),
        DMatrix::from_element(1, 1, 0.25),
        DMatrix::identity(1, 1),
    )
    .unwrap();
    let cost = CostSpec::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1), 1).unwrap();
    for xhat in [-3.0, 0.4, 2.0] {
        let belief = MixedBelief::new(DVector::from_element(1, xhat), DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        let (u, _) = control_step(&belief, &model, &noise, &cost, 1, &SolverOptions::default()).unwrap();
        let worst = |u: f64| {
            [-1.5f64, 1.5]
                .iter()
                .map(|d| (xhat + d + u).powi(2) + u * u)
                .fold(f64::MIN, f64::max)
        };
        let grid_u = (-40_000..=40_000)
            .map(|i| i as f64 * 1e-4)
            .min_by(|a, b| worst(*a).partial_cmp(&worst(*b)).unwrap())
            .unwrap();
        assert!((u[0] - grid_u).abs() <= 1e-3, "x̂ {xhat}: u {} vs grid {grid_u}", u[0]);
    }
}
