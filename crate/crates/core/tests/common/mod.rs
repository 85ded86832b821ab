//! Oracles and random instance generators shared by the integration tests.
#![allow(dead_code)]

use mixlqc::filter::MixedBelief;
use mixlqc::model::{LinearSystem, NoiseModel, SystemModel};
use mixlqc::{CostSpec, Ellipsoid, SamplingScheme};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

pub fn gaussian_vector(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| -> f64 { rng.sample(StandardNormal) })
}

/// `G Gᵀ` with `G` having `rank` columns, entries in `[-scale, scale]`.
pub fn random_psd(n: usize, rank: usize, scale: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = uniform_matrix(n, rank, scale, rng);
    let m = &g * g.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn random_spd(n: usize, scale: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    random_psd(n, n, scale, rng) + DMatrix::identity(n, n) * (0.1 * scale * scale)
}

/// Symmetric square root by eigen decomposition. Eigenvalues below `1e-12·max`
/// are roundoff of a singular matrix and map to zero.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let cutoff = 1e-12 * eig.eigenvalues.amax();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| if l > cutoff { l.sqrt() } else { 0.0 }));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// A point of `E(0, shape)`: on the boundary if `boundary`, else uniform radius in the interior.
pub fn point_in(shape: &DMatrix<f64>, boundary: bool, rng: &mut impl Rng) -> DVector<f64> {
    let n = shape.nrows();
    let mut dir = gaussian_vector(n, rng);
    dir /= dir.norm();
    let radius = if boundary {
        1.0
    } else {
        rng.random::<f64>().powf(1.0 / n as f64)
    };
    sqrt_psd(shape) * dir * radius
}

/// `xᵀ M⁺ x` through an eigen decomposition; `None` if `x` leaves the range of `M`.
pub fn ellipsoid_form(shape: &DMatrix<f64>, x: &DVector<f64>) -> Option<f64> {
    let eig = shape.clone().symmetric_eigen();
    let cutoff = 1e-12 * eig.eigenvalues.amax().max(1e-300);
    let c = eig.eigenvectors.transpose() * x;
    let mut form = 0.0;
    for (l, ci) in eig.eigenvalues.iter().zip(c.iter()) {
        if *l > cutoff {
            form += ci * ci / l;
        } else if ci.abs() > 1e-9 * (1.0 + x.amax()) {
            return None;
        }
    }
    Some(form)
}

/// Textbook Kalman filter, Joseph-form covariance update.
pub struct Kalman {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
    pub k: usize,
}

impl Kalman {
    pub fn step(
        &mut self,
        model: &impl LinearSystem,
        pw: &DMatrix<f64>,
        pv: &DMatrix<f64>,
        u: &DVector<f64>,
        z: &DVector<f64>,
    ) {
        let a = model.a(self.k);
        let x = &a * &self.x + model.b(self.k) * u;
        let p = &a * &self.p * a.transpose() + pw;
        self.k += 1;
        let h = model.h(self.k);
        let s = &h * &p * h.transpose() + pv;
        let gain = &p * h.transpose() * s.try_inverse().expect("innovation covariance");
        let n = x.len();
        let t = DMatrix::identity(n, n) - &gain * &h;
        self.x = &x + &gain * (z - &h * &x);
        self.p = &t * p * t.transpose() + &gain * pv * gain.transpose();
    }
}

/// First control of the finite-horizon LQ problem
/// `min Σ_{t=k}^{k+N-1} x_{t+1}ᵀQx_{t+1} + u_tᵀRu_t` from `x`, by backward Riccati recursion.
pub fn riccati_first_control(
    model: &impl LinearSystem,
    k: usize,
    horizon: usize,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x: &DVector<f64>,
) -> DVector<f64> {
    let mut s = q.clone();
    let mut first = None;
    for t in (k..k + horizon).rev() {
        let a = model.a(t);
        let b = model.b(t);
        let bts = b.transpose() * &s;
        let gain = (r + &bts * &b).try_inverse().expect("Riccati inverse") * &bts * &a;
        if t == k {
            first = Some(-(&gain * x));
        }
        let closed = &a - &b * &gain;
        s = q + closed.transpose() * &s * &closed + gain.transpose() * r * &gain;
    }
    first.expect("horizon at least one")
}

/// Random stable-ish two-state, one-input, one-output setup for control tests.
pub struct ControlInstance {
    pub model: SystemModel,
    pub noise: NoiseModel,
    pub cost: CostSpec,
    pub belief: MixedBelief,
}

pub fn control_instance(horizon: usize, rng: &mut impl Rng) -> ControlInstance {
    let n = 2;
    let a0 = uniform_matrix(n, n, 0.8, rng);
    let b = uniform_matrix(n, 1, 1.0, rng) + DMatrix::from_element(n, 1, 0.2);
    let h = uniform_matrix(1, n, 1.0, rng);
    let model = SystemModel::new(a0, b, h)
        .unwrap()
        .with_sinusoidal_modulation(0.1 * rng.random::<f64>());
    let noise = NoiseModel::new(
        random_psd(n, n, 0.5, rng),
        DMatrix::from_element(1, 1, 0.3),
        random_spd(n, 1.0, rng),
        DMatrix::from_element(1, 1, 0.5),
    )
    .unwrap();
    let cost = CostSpec::new(
        random_psd(n, n, 1.0, rng) + DMatrix::identity(n, n) * 0.1,
        DMatrix::from_element(1, 1, 0.2 + rng.random::<f64>()),
        horizon,
    )
    .unwrap();
    let belief = MixedBelief::new(
        uniform_matrix(n, 1, 3.0, rng).column(0).into_owned(),
        random_psd(n, n, 0.7, rng),
        random_spd(n, 1.0, rng),
    )
    .unwrap()
    .at_step(rng.random_range(0..20));
    ControlInstance {
        model,
        noise,
        cost,
        belief,
    }
}

/// Runs the mixed filter with shapes `1e-12·I` next to a textbook Kalman filter
/// on one simulated episode of the default system. Returns the largest center
/// difference and the number of gain fallbacks.
pub fn kalman_reduction_episode(seed: u64, steps: usize) -> (f64, usize) {
    use mixlqc::filter::mixed_step;
    use mixlqc::{ExperimentConfig, FilterOptions};

    let cfg = ExperimentConfig::default();
    let model = cfg.model.clone();
    let tiny = 1e-12;
    let noise = NoiseModel::new(
        cfg.noise.pw.clone(),
        cfg.noise.pv.clone(),
        DMatrix::identity(2, 2) * tiny,
        DMatrix::identity(1, 1) * tiny,
    )
    .unwrap()
    .with_schemes(SamplingScheme::NonSymmetric90_10, SamplingScheme::UniformBall);
    let mut belief = MixedBelief::new(
        cfg.prior.center.clone(),
        cfg.prior.covariance.clone(),
        DMatrix::identity(2, 2) * tiny,
    )
    .unwrap();
    let mut reference = Kalman {
        x: belief.center.clone(),
        p: belief.covariance.clone(),
        k: 0,
    };

    let mut r = rng(seed);
    let pw = sqrt_psd(&noise.pw);
    let pv = sqrt_psd(&noise.pv);
    let ew = Ellipsoid::centered(noise.mw.clone()).unwrap();
    let ev = Ellipsoid::centered(noise.mv.clone()).unwrap();
    let mut x = &belief.center + sqrt_psd(&belief.covariance) * gaussian_vector(2, &mut r);
    let opts = FilterOptions::default();
    let mut worst: f64 = 0.0;
    let mut fallbacks = 0;
    for k in 0..steps {
        let u = DVector::from_element(1, (k as f64 * 0.3).sin());
        let w = &pw * gaussian_vector(2, &mut r) + ew.sample(noise.scheme_w, &mut r);
        x = model.a(k) * &x + model.b(k) * &u + w;
        let v = &pv * gaussian_vector(1, &mut r) + ev.sample(noise.scheme_v, &mut r);
        let z = model.h(k + 1) * &x + v;
        let (next, report) = mixed_step(&belief, &model, &noise, &u, &z, &opts).unwrap();
        fallbacks += usize::from(report.fallback);
        belief = next;
        reference.step(&model, &noise.pw, &noise.pv, &u, &z);
        worst = worst.max((&belief.center - &reference.x).amax());
    }
    (worst, fallbacks)
}

/// Pure set-membership episode (all covariances zero) of the default system
/// with a random control input. Returns the number of steps at which the true
/// state left `E(center, shape)` (checked with an eigen-decomposition oracle).
pub fn bounded_episode_violations(seed: u64, steps: usize) -> usize {
    use mixlqc::filter::mixed_step;
    use mixlqc::{ExperimentConfig, FilterOptions};

    let cfg = ExperimentConfig::default();
    let model = cfg.model.clone();
    let noise = cfg.noise.bounded_only();
    let mut belief = cfg.prior.without_covariance();
    let mut r = rng(seed);
    let e0 = Ellipsoid::centered(belief.shape.clone()).unwrap();
    let ew = Ellipsoid::centered(noise.mw.clone()).unwrap();
    let ev = Ellipsoid::centered(noise.mv.clone()).unwrap();
    let mut x = &belief.center + e0.sample(SamplingScheme::UniformBall, &mut r);
    let opts = FilterOptions::default();
    let mut violations = 0;
    for k in 0..steps {
        let u = uniform_matrix(1, 1, 2.0, &mut r).column(0).into_owned();
        x = model.a(k) * &x + model.b(k) * &u + ew.sample(noise.scheme_w, &mut r);
        let z = model.h(k + 1) * &x + ev.sample(noise.scheme_v, &mut r);
        belief = mixed_step(&belief, &model, &noise, &u, &z, &opts).unwrap().0;
        match ellipsoid_form(&belief.shape, &(&x - &belief.center)) {
            Some(f) if f <= 1.0 + 1e-9 => {}
            _ => violations += 1,
        }
    }
    violations
}

/// Outcome of one random min-max instance checked from scratch.
pub struct SdpCheck {
    /// Smallest eigenvalue of the LMI block matrix rebuilt from the cost coefficients.
    pub certificate: f64,
    /// Largest `objective(y, η) - ρ` over the sampled η (≤ 0 when ρ bounds the samples).
    pub excess: f64,
    /// Largest `E[J](U, η) - cost_bound` over the same samples.
    pub cost_excess: f64,
    pub rho: f64,
}

/// Solves a random instance with two states and horizon `horizon` and checks the
/// returned `(y, ρ, τ1, τ2)` against an independently assembled LMI and against
/// `samples` uncertainty draws (half on the boundary of both sets, half inside).
pub fn check_random_sdp(seed: u64, horizon: usize, samples: usize) -> SdpCheck {
    use mixlqc::control::stacked_control;
    use mixlqc::horizon::{assemble_cost, build_horizon};
    use mixlqc::sdp::{build_sdp, solve_sdp};
    use mixlqc::SolverOptions;

    let mut r = rng(seed);
    let inst = control_instance(horizon, &mut r);
    let n = 2;
    let hm = build_horizon(&inst.model, inst.belief.step, horizon).unwrap();
    let hc = assemble_cost(&hm, &inst.cost, &inst.belief, &inst.noise).unwrap();
    let sdp = build_sdp(&hc, &inst.belief, &inst.noise).unwrap();
    let sol = solve_sdp(&sdp, &SolverOptions::default()).unwrap();

    // Independent assembly.
    let bb_inv = hc.bb.clone().try_inverse().unwrap();
    let bb_inv_sqrt = sqrt_psd(&bb_inv);
    let h = &hc.c_hat - hc.dd.transpose() * (&bb_inv * &hc.b_hat);
    let f = &bb_inv_sqrt * &hc.dd;
    let d = (horizon + 1) * n;
    let mut shape_w = DMatrix::zeros(horizon * n, horizon * n);
    for i in 0..horizon {
        shape_w.view_mut((i * n, i * n), (n, n)).copy_from(&inst.noise.mw);
    }
    let mut m1 = DMatrix::zeros(d, d);
    m1.view_mut((0, 0), (n, n))
        .copy_from(&inst.belief.shape.clone().try_inverse().unwrap());
    let mut m2 = DMatrix::zeros(d, d);
    m2.view_mut((n, n), (horizon * n, horizon * n))
        .copy_from(&shape_w.clone().try_inverse().unwrap());
    let g = -&hc.cc + &m1 * sol.tau1 + &m2 * sol.tau2 + f.transpose() * &f;
    let p = f.nrows();
    let mut block = DMatrix::zeros(p + 1 + d, p + 1 + d);
    block.view_mut((0, 0), (p, p)).fill_with_identity();
    block.view_mut((0, p), (p, 1)).copy_from(&sol.y);
    block.view_mut((p, 0), (1, p)).copy_from(&sol.y.transpose());
    block.view_mut((0, p + 1), (p, d)).copy_from(&f);
    block.view_mut((p + 1, 0), (d, p)).copy_from(&f.transpose());
    block[(p, p)] = sol.rho - sol.tau1 - sol.tau2;
    block.view_mut((p, p + 1), (1, d)).copy_from(&(-h.transpose()));
    block.view_mut((p + 1, p), (d, 1)).copy_from(&(-&h));
    block.view_mut((p + 1, p + 1), (d, d)).copy_from(&g);
    let block = (&block + block.transpose()) * 0.5;
    let certificate = block.symmetric_eigen().eigenvalues.min();

    let u = stacked_control(&sol.y, &hc).unwrap();
    let offset = hc.center.dot(&(&hc.aa * &hc.center)) - hc.b_hat.dot(&(&bb_inv * &hc.b_hat)) + hc.constant;
    let cost_bound = sol.rho + offset;
    let mut excess = f64::NEG_INFINITY;
    let mut cost_excess = f64::NEG_INFINITY;
    for i in 0..samples {
        let boundary = i % 2 == 0;
        let mut eta = DVector::zeros(d);
        eta.rows_mut(0, n).copy_from(&point_in(&inst.belief.shape, boundary, &mut r));
        eta.rows_mut(n, horizon * n).copy_from(&point_in(&shape_w, boundary, &mut r));
        let obj = sol.y.dot(&sol.y) + 2.0 * h.dot(&eta) + 2.0 * sol.y.dot(&(&f * &eta)) + eta.dot(&(&hc.cc * &eta));
        excess = excess.max(obj - sol.rho);
        cost_excess = cost_excess.max(hc.expected_cost(&u, &eta) - cost_bound);
    }
    SdpCheck {
        certificate,
        excess,
        cost_excess,
        rho: sol.rho,
    }
}

/// Relative difference between the first min-max control and the finite-horizon
/// Riccati control on the estimate, with all bounded sets shrunk to `radius`
/// (shape `radius²·I`).
pub fn certainty_equivalence_error(seed: u64, radius: f64) -> f64 {
    use mixlqc::control::control_step;
    use mixlqc::SolverOptions;

    let mut r = rng(seed);
    let horizon = 1 + (seed as usize % 5);
    let mut inst = control_instance(horizon, &mut r);
    let tiny = radius * radius;
    inst.noise = NoiseModel::new(
        inst.noise.pw.clone(),
        inst.noise.pv.clone(),
        DMatrix::identity(2, 2) * tiny,
        DMatrix::identity(1, 1) * tiny,
    )
    .unwrap();
    inst.belief.shape = DMatrix::identity(2, 2) * tiny;
    let (u, _) = control_step(
        &inst.belief,
        &inst.model,
        &inst.noise,
        &inst.cost,
        horizon,
        &SolverOptions::default(),
    )
    .unwrap();
    let reference = riccati_first_control(
        &inst.model,
        inst.belief.step,
        horizon,
        &inst.cost.q,
        &inst.cost.r,
        &inst.belief.center,
    );
    (&u - &reference).norm() / reference.norm()
}

pub struct FilterState {
    pub model: SystemModel,
    pub noise: NoiseModel,
    pub pred: MixedBelief,
}

/// Random predicted belief with `m` measurements; either part of the noise may vanish.
pub fn random_filter_state(seed: u64, n: usize, m: usize) -> FilterState {
    let mut r = rng(seed);
    let part = |dim: usize, r: &mut ChaCha8Rng| {
        if r.random::<f64>() < 0.1 {
            DMatrix::zeros(dim, dim)
        } else {
            random_psd(dim, r.random_range(1..=dim), 1.5, r)
        }
    };
    let pw = part(n, &mut r);
    let pv = part(m, &mut r) + DMatrix::identity(m, m) * 0.05;
    let mw = part(n, &mut r);
    let mv = part(m, &mut r) + DMatrix::identity(m, m) * 0.05;
    let p = part(n, &mut r);
    let shape = part(n, &mut r);
    let model = SystemModel::new(
        uniform_matrix(n, n, 1.0, &mut r),
        uniform_matrix(n, 1, 1.0, &mut r),
        uniform_matrix(m, n, 1.0, &mut r),
    )
    .unwrap();
    FilterState {
        model,
        noise: NoiseModel::new(pw, pv, mw, mv).unwrap(),
        pred: MixedBelief::new(uniform_matrix(n, 1, 5.0, &mut r).column(0).into_owned(), p, shape)
            .unwrap()
            .at_step(r.random_range(1..50)),
    }
}

/// `tr P_{k|k} + tr M_{k|k}` with the Minkowski parameter chosen optimally for `gamma`.
pub fn joint_estimation_cost(s: &FilterState, gamma: &DMatrix<f64>) -> f64 {
    let h = s.model.h(s.pred.step);
    let n = s.pred.dim();
    let t = DMatrix::identity(n, n) - gamma * &h;
    let cov = &t * &s.pred.covariance * t.transpose() + gamma * &s.noise.pv * gamma.transpose();
    let a = (&t * &s.pred.shape * t.transpose()).trace();
    let b = (gamma * &s.noise.mv * gamma.transpose()).trace();
    cov.trace() + (a.max(0.0).sqrt() + b.max(0.0).sqrt()).powi(2)
}
