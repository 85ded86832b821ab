//! The min-max control LMI and a small dedicated interior-point solver for it.
//!
//! For decision variables `(y, ρ, τ1, τ2)` the constraint is
//!
//! ```text
//! ⎡ I    y           F ⎤
//! ⎢ yᵀ   ρ - τ1 - τ2  -hᵀ⎥ ⪰ 0,   G = -𝒞 + τ1 M¹ + τ2 M² + FᵀF
//! ⎣ Fᵀ   -h          G ⎦
//! ```
//!
//! Taking Schur complements, the smallest feasible ρ for fixed `(y, τ)` is
//! `τ1 + τ2 + yᵀy + gᵀL⁻¹g` with `g = h + Fᵀy` and `L = G - FᵀF ≻ 0`, and
//! minimizing over `y` gives `y = -F G⁻¹ h` and `ρ = τ1 + τ2 + hᵀG⁻¹h`. What
//! remains is a convex problem in `(τ1, τ2)` over `{L(τ) ≻ 0}`, solved here
//! with a log-det barrier and damped Newton steps. The solver works in the
//! coordinates `η = S ξ`, `S² = blockdiag(M_e, M_W)`, where both multiplier
//! matrices become coordinate projections.

use alloc::boxed::Box;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{check_dim, Error, Result};
use crate::filter::MixedBelief;
use crate::horizon::HorizonCost;
use crate::linalg::{block_diag, min_eigenvalue, spd_inverse, sym_inv_sqrt, sym_sqrt, symmetrize};
use crate::model::NoiseModel;

/// Relative regularization added to singular shape matrices before inversion.
pub const SHAPE_REGULARIZATION: f64 = 1e-10;

/// Returns `M` unchanged if it is comfortably nonsingular, otherwise
/// `M + ε I` with `ε = 1e-10 · tr M` (or `1e-10` for a zero matrix).
pub fn regularize_shape(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let tr = m.trace();
    let eps = if tr > 0.0 {
        SHAPE_REGULARIZATION * tr
    } else {
        SHAPE_REGULARIZATION
    };
    if n > 0 && min_eigenvalue(m) <= eps {
        symmetrize(&(m + DMatrix::identity(n, n) * eps))
    } else {
        symmetrize(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpInstance {
    /// `h = ĉ - 𝒟ᵀℬ⁻¹b̂`.
    pub h: DVector<f64>,
    /// `F = ℬ^{-1/2}𝒟`.
    pub f: DMatrix<f64>,
    /// `blockdiag(M_e⁻¹, 0)`.
    pub m1: DMatrix<f64>,
    /// `blockdiag(0, M_W⁻¹)`.
    pub m2: DMatrix<f64>,
    pub cc: DMatrix<f64>,
    pub constant: f64,
    /// Length of the leading (estimation error) block of η.
    pub e_dim: usize,
    scale: DMatrix<f64>,
}

impl SdpInstance {
    /// Builds an instance from its coefficient blocks and the two (possibly
    /// singular) shape matrices bounding `e` and `W`.
    pub fn new(
        h: DVector<f64>,
        f: DMatrix<f64>,
        cc: DMatrix<f64>,
        shape_e: &DMatrix<f64>,
        shape_w: &DMatrix<f64>,
        constant: f64,
    ) -> Result<Self> {
        let e_dim = shape_e.nrows();
        let d = e_dim + shape_w.nrows();
        check_dim("h length", d, h.len())?;
        check_dim("F columns", d, f.ncols())?;
        check_dim("C rows", d, cc.nrows())?;
        check_dim("C columns", d, cc.ncols())?;
        let reg_e = regularize_shape(shape_e);
        let reg_w = regularize_shape(shape_w);
        let inv_e = spd_inverse("regularized estimation shape", &reg_e)?;
        let inv_w = spd_inverse("regularized noise shape", &reg_w)?;
        let zero_e = DMatrix::zeros(e_dim, e_dim);
        let zero_w = DMatrix::zeros(shape_w.nrows(), shape_w.nrows());
        Ok(Self {
            h,
            f,
            m1: block_diag(&[&inv_e, &zero_w]),
            m2: block_diag(&[&zero_e, &inv_w]),
            cc: symmetrize(&cc),
            constant,
            e_dim,
            scale: block_diag(&[&sym_sqrt(&reg_e), &sym_sqrt(&reg_w)]),
        })
    }

    pub fn uncertainty_len(&self) -> usize {
        self.h.len()
    }

    pub fn control_len(&self) -> usize {
        self.f.nrows()
    }

    /// `G(τ) = -𝒞 + τ1 M¹ + τ2 M² + FᵀF`.
    pub fn g_matrix(&self, tau1: f64, tau2: f64) -> DMatrix<f64> {
        -&self.cc + &self.m1 * tau1 + &self.m2 * tau2 + self.f.transpose() * &self.f
    }

    /// The full block matrix of the LMI at a candidate point.
    pub fn block_matrix(&self, y: &DVector<f64>, rho: f64, tau1: f64, tau2: f64) -> DMatrix<f64> {
        let p = self.control_len();
        let d = self.uncertainty_len();
        let size = p + 1 + d;
        let mut k = DMatrix::zeros(size, size);
        k.view_mut((0, 0), (p, p)).fill_with_identity();
        k.view_mut((0, p), (p, 1)).copy_from(y);
        k.view_mut((p, 0), (1, p)).copy_from(&y.transpose());
        k.view_mut((0, p + 1), (p, d)).copy_from(&self.f);
        k.view_mut((p + 1, 0), (d, p)).copy_from(&self.f.transpose());
        k[(p, p)] = rho - tau1 - tau2;
        k.view_mut((p, p + 1), (1, d)).copy_from(&(-self.h.transpose()));
        k.view_mut((p + 1, p), (d, 1)).copy_from(&(-&self.h));
        k.view_mut((p + 1, p + 1), (d, d))
            .copy_from(&self.g_matrix(tau1, tau2));
        k
    }

    /// Smallest eigenvalue of the block matrix, assembled from scratch.
    pub fn certificate(&self, y: &DVector<f64>, rho: f64, tau1: f64, tau2: f64) -> f64 {
        min_eigenvalue(&self.block_matrix(y, rho, tau1, tau2))
    }

    /// The quadratic `yᵀy + 2hᵀη + 2yᵀFη + ηᵀ𝒞η` whose worst case ρ bounds.
    pub fn worst_case_objective(&self, y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
        y.dot(y) + 2.0 * self.h.dot(eta) + 2.0 * y.dot(&(&self.f * eta)) + eta.dot(&(&self.cc * eta))
    }
}

/// Builds the LMI data from the expected-cost coefficients, the current belief
/// (for `M_e`) and the process noise shape (stacked over the horizon for `M_W`).
pub fn build_sdp(hc: &HorizonCost, belief: &MixedBelief, noise: &NoiseModel) -> Result<SdpInstance> {
    let bb_inv = spd_inverse("control weight ℬ", &hc.bb)?;
    let bb_inv_sqrt = sym_inv_sqrt(&hc.bb)?;
    let h = &hc.c_hat - hc.dd.transpose() * (&bb_inv * &hc.b_hat);
    let f = bb_inv_sqrt * &hc.dd;
    let blocks: alloc::vec::Vec<&DMatrix<f64>> = (0..hc.horizon).map(|_| &noise.mw).collect();
    let shape_w = block_diag(&blocks);
    SdpInstance::new(h, f, hc.cc.clone(), &belief.shape, &shape_w, hc.constant)
}

const MAX_CENTERING_STEPS: usize = 50;
/// Fraction of the data magnitude below which ρ counts as zero for the gap test.
const ZERO_OPTIMUM_SCALE: f64 = 1e-9;
/// Newton decrement (relative to μ) below which a point counts as centered.
const CENTERING_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Required lower bound on the certificate (smallest eigenvalue of the block matrix).
    pub feasibility_tol: f64,
    /// Relative optimality gap on ρ.
    pub objective_tol: f64,
    /// Newton iteration budget.
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            objective_tol: 1e-6,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub y: DVector<f64>,
    pub rho: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub min_eig_certificate: f64,
    pub iterations: usize,
    /// Barrier bound on `ρ - ρ*`.
    pub gap: f64,
}

/// Problem data in scaled coordinates.
struct Scaled {
    h: DVector<f64>,
    f: DMatrix<f64>,
    ftf: DMatrix<f64>,
    cc: DMatrix<f64>,
    e_dim: usize,
}

struct Point {
    tau: Vector2<f64>,
    phi: f64,
    log_det_l: f64,
    grad_phi: Vector2<f64>,
    hess_phi: Matrix2<f64>,
    grad_barrier: Vector2<f64>,
    hess_barrier: Matrix2<f64>,
    v: DVector<f64>,
}

impl Scaled {
    fn dim(&self) -> usize {
        self.h.len()
    }

    fn l_matrix(&self, tau: &Vector2<f64>) -> DMatrix<f64> {
        let mut l = -&self.cc;
        for i in 0..self.dim() {
            l[(i, i)] += if i < self.e_dim { tau[0] } else { tau[1] };
        }
        l
    }

    fn block_of(&self, i: usize) -> core::ops::Range<usize> {
        if i == 0 {
            0..self.e_dim
        } else {
            self.e_dim..self.dim()
        }
    }

    fn evaluate(&self, tau: Vector2<f64>) -> Option<Point> {
        let l = self.l_matrix(&tau);
        let chol_l = l.clone().cholesky()?;
        let g = l + &self.ftf;
        let chol_g = g.cholesky()?;
        let v = chol_g.solve(&self.h);
        let phi = tau[0] + tau[1] + self.h.dot(&v);
        let log_det_l = 2.0 * chol_l.l().diagonal().iter().map(|x| libm::log(*x)).sum::<f64>();
        let l_inv = chol_l.inverse();
        let g_inv = chol_g.inverse();

        let mut masked = [DVector::zeros(self.dim()), DVector::zeros(self.dim())];
        for (i, m) in masked.iter_mut().enumerate() {
            for a in self.block_of(i) {
                m[a] = v[a];
            }
        }
        let mut grad_phi = Vector2::zeros();
        let mut hess_phi = Matrix2::zeros();
        let mut grad_barrier = Vector2::zeros();
        let mut hess_barrier = Matrix2::zeros();
        for i in 0..2 {
            grad_phi[i] = 1.0 - masked[i].norm_squared();
            grad_barrier[i] = -self.block_of(i).map(|a| l_inv[(a, a)]).sum::<f64>();
            for j in 0..2 {
                hess_phi[(i, j)] = 2.0 * masked[i].dot(&(&g_inv * &masked[j]));
                let mut s = 0.0;
                for a in self.block_of(i) {
                    for b in self.block_of(j) {
                        s += l_inv[(a, b)] * l_inv[(a, b)];
                    }
                }
                hess_barrier[(i, j)] = s;
            }
        }
        Some(Point {
            tau,
            phi,
            log_det_l,
            grad_phi,
            hess_phi,
            grad_barrier,
            hess_barrier,
            v,
        })
    }
}

fn barrier_value(p: &Point, mu: f64) -> f64 {
    p.phi - mu * p.log_det_l
}

/// Minimizes ρ subject to the LMI. The returned certificate is recomputed from
/// the original-coordinate block matrix.
pub fn solve_sdp(inst: &SdpInstance, opts: &SolverOptions) -> Result<SdpSolution> {
    let s = &inst.scale;
    let f = &inst.f * s;
    let scaled = Scaled {
        h: s * &inst.h,
        ftf: symmetrize(&(f.transpose() * &f)),
        f,
        cc: symmetrize(&(s * &inst.cc * s)),
        e_dim: inst.e_dim,
    };
    let d = scaled.dim() as f64;
    let lambda_max = crate::linalg::max_eigenvalue(&scaled.cc).max(0.0);
    let magnitude = lambda_max
        .max(scaled.h.norm())
        .max(crate::linalg::max_eigenvalue(&scaled.ftf))
        .max(1e-150);
    let start = lambda_max + magnitude;
    let mut point = scaled
        .evaluate(Vector2::new(start, start))
        .ok_or(Error::Infeasible("no multipliers make the uncertainty block definite"))?;

    let mut mu = point.phi.abs().max(magnitude) / d;
    let mut iterations = 0;
    let converged = loop {
        // centering
        for _ in 0..MAX_CENTERING_STEPS {
            let grad = point.grad_phi + point.grad_barrier * mu;
            let hess = point.hess_phi + point.hess_barrier * mu;
            let step = match hess.try_inverse() {
                Some(inv) => -(inv * grad),
                None => -grad,
            };
            let decrement = -grad.dot(&step);
            if !(decrement > 0.0) || decrement / mu <= CENTERING_TOL {
                break;
            }
            iterations += 1;
            if iterations > opts.max_iterations {
                break;
            }
            let current = barrier_value(&point, mu);
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                if let Some(candidate) = scaled.evaluate(point.tau + step * t) {
                    if barrier_value(&candidate, mu) <= current - 0.25 * t * decrement {
                        accepted = Some(candidate);
                        break;
                    }
                }
                t *= 0.5;
            }
            match accepted {
                Some(c) => point = c,
                None => break,
            }
        }
        if iterations > opts.max_iterations {
            break false;
        }
        // relative gap, with a floor tied to the data scale for optima at zero
        if mu * d <= opts.objective_tol * point.phi.abs().max(ZERO_OPTIMUM_SCALE * magnitude) || mu < 1e-300 {
            break true;
        }
        mu *= 0.1;
    };

    let solution = finish(inst, &scaled, &point, mu * d, iterations, opts);
    if converged {
        Ok(solution)
    } else {
        Err(Error::SolverNoConvergence {
            iterations,
            gap: mu * d,
            best_rho: solution.rho,
            best: Box::new(solution),
        })
    }
}

fn finish(
    inst: &SdpInstance,
    scaled: &Scaled,
    point: &Point,
    gap: f64,
    iterations: usize,
    opts: &SolverOptions,
) -> SdpSolution {
    let tau = point.tau;
    let y = -(&scaled.f * &point.v);
    let g = &scaled.h + scaled.f.transpose() * &y;
    let l = scaled.l_matrix(&tau);
    let schur = l
        .cholesky()
        .map(|c| g.dot(&c.solve(&g)))
        .unwrap_or(point.phi - tau[0] - tau[1] - y.dot(&y));
    let exact = tau[0] + tau[1] + y.dot(&y) + schur;
    let mut rho = exact + 1e-12 * (exact.abs() + tau[0] + tau[1]);
    let mut certificate = inst.certificate(&y, rho, tau[0], tau[1]);
    for _ in 0..4 {
        if certificate >= -opts.feasibility_tol {
            break;
        }
        rho += 10.0 * certificate.abs();
        certificate = inst.certificate(&y, rho, tau[0], tau[1]);
    }
    SdpSolution {
        y,
        rho,
        tau1: tau[0],
        tau2: tau[1],
        min_eig_certificate: certificate,
        iterations,
        gap,
    }
}
