//! Recursive estimator combining a Kalman covariance recursion with an
//! ellipsoidal set-membership recursion through one shared gain, plus the
//! pure Kalman and pure set-membership specializations.

use nalgebra::{DMatrix, DVector};

use crate::ellipsoid::{Ellipsoid, MinkowskiWeights};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{check_psd, pinv_psd, psd_factor, symmetrize};
use crate::model::{LinearSystem, NoiseModel};

/// State estimate with a stochastic and a bounded error description around one
/// center: `x - center = e_s + e_b`, `e_s ~ N(0, covariance)`, `e_b ∈ E(0, shape)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBelief {
    pub center: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub shape: DMatrix<f64>,
    pub step: usize,
}

impl MixedBelief {
    pub fn new(center: DVector<f64>, covariance: DMatrix<f64>, shape: DMatrix<f64>) -> Result<Self> {
        let n = center.len();
        check_dim("belief covariance", n, covariance.nrows())?;
        check_dim("belief shape", n, shape.nrows())?;
        check_psd("belief covariance", &covariance)?;
        check_psd("belief shape", &shape)?;
        Ok(Self {
            center,
            covariance: symmetrize(&covariance),
            shape: symmetrize(&shape),
            step: 0,
        })
    }

    pub fn at_step(mut self, step: usize) -> Self {
        self.step = step;
        self
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Bounded-error set around the center.
    pub fn shape_ellipsoid(&self) -> Ellipsoid {
        Ellipsoid::from_parts(self.center.clone(), symmetrize(&self.shape))
    }

    /// `tr P + tr M`.
    pub fn estimation_cost(&self) -> f64 {
        self.covariance.trace() + self.shape.trace()
    }

    /// Drops the bounded part.
    pub fn without_shape(&self) -> Self {
        let n = self.dim();
        Self {
            shape: DMatrix::zeros(n, n),
            ..self.clone()
        }
    }

    /// Drops the stochastic part.
    pub fn without_covariance(&self) -> Self {
        let n = self.dim();
        Self {
            covariance: DMatrix::zeros(n, n),
            ..self.clone()
        }
    }
}

/// Which expression is used for the update-step Minkowski parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QkFormula {
    /// `q = sqrt(tr((I - ΓH) M (I - ΓH)ᵀ) / tr(Γ M^v Γᵀ))`, the trace-optimal
    /// parameter for the two summands of the updated shape.
    #[default]
    Corrected,
    /// `q = sqrt(tr((I - Γ) M (I - Γ)ᵀ) / tr(Γ M^w Γᵀ))`, kept for comparison; only defined
    /// when the measurement and state dimensions agree.
    Literal,
}

impl QkFormula {
    pub fn name(self) -> &'static str {
        match self {
            QkFormula::Corrected => "corrected",
            QkFormula::Literal => "paper_literal",
        }
    }
}

impl core::str::FromStr for QkFormula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corrected" => Ok(QkFormula::Corrected),
            "paper_literal" => Ok(QkFormula::Literal),
            other => Err(Error::InvalidArgument(alloc::format!(
                "unknown qk formula `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOptions {
    pub qk_formula: QkFormula,
    /// Stop when `‖Γ_i - Γ_{i-1}‖_F` falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            qk_formula: QkFormula::Corrected,
            tolerance: 1e-10,
            max_iterations: 100,
        }
    }
}

/// Result of the coupled gain / q computation.
#[derive(Debug, Clone, PartialEq)]
pub struct GainReport {
    pub gamma: DMatrix<f64>,
    /// Shape-update weights `(1/q + 1, q + 1)` or a degenerate pair.
    pub weights: MinkowskiWeights,
    pub iterations: usize,
    pub residual: f64,
    /// The fixed point failed and the initial q was used instead.
    pub fallback: bool,
}

impl GainReport {
    /// The update-step parameter q, `None` when one of the sets vanished.
    pub fn q(&self) -> Option<f64> {
        self.weights.parameter()
    }
}

/// Time update. `belief` is at step k-1; the result is the prediction for step k.
pub fn predict<S: LinearSystem + ?Sized>(
    belief: &MixedBelief,
    model: &S,
    noise: &NoiseModel,
    u: &DVector<f64>,
) -> Result<MixedBelief> {
    check_dim("belief dimension", model.state_dim(), belief.dim())?;
    check_dim("control dimension", model.input_dim(), u.len())?;
    noise.check_against(model)?;
    let k = belief.step;
    let a = model.a(k);
    let b = model.b(k);

    let center = &a * &belief.center + b * u;
    let covariance = symmetrize(&(&a * &belief.covariance * a.transpose() + &noise.pw));
    let propagated = symmetrize(&(&a * &belief.shape * a.transpose()));
    let weights = MinkowskiWeights::trace_optimal(propagated.trace(), noise.mw.trace());
    let shape = weights.combine(&propagated, &noise.mw);

    Ok(MixedBelief {
        center,
        covariance,
        shape,
        step: k + 1,
    })
}

/// Bound on |ln q| during the gain iteration.
const LOG_Q_LIMIT: f64 = 30.0;

struct GainTerms {
    h: DMatrix<f64>,
    p_ht: DMatrix<f64>,
    h_p_ht: DMatrix<f64>,
    /// Factors `(L, H L)` of `P`, `M`, `P^v`, `M^v` (`L Lᵀ` = the matrix); the
    /// last two are `(0, L)`.
    roots: [(DMatrix<f64>, DMatrix<f64>); 4],
    identity: DMatrix<f64>,
}

impl GainTerms {
    fn new(pred: &MixedBelief, h: DMatrix<f64>, noise: &NoiseModel) -> Self {
        let p_ht = &pred.covariance * h.transpose();
        let h_p_ht = &h * &p_ht;
        let n = pred.dim();
        let state_root = |m: &DMatrix<f64>| {
            let l = psd_factor(m);
            let hl = &h * &l;
            (l, hl)
        };
        let output_root = |m: &DMatrix<f64>| {
            let l = psd_factor(m);
            (DMatrix::zeros(n, l.ncols()), l)
        };
        let roots = [
            state_root(&pred.covariance),
            state_root(&pred.shape),
            output_root(&noise.pv),
            output_root(&noise.mv),
        ];
        Self {
            h,
            p_ht,
            h_p_ht,
            roots,
            identity: DMatrix::identity(n, n),
        }
    }

    /// Minimizer of `V(Γ)` for fixed shape-update weights.
    ///
    /// `V` is `‖B - Γ A‖_F²` with `A = [H L_P, √w₁ H L_M, L_Pv, √w₂ L_Mv]` and
    /// `B = [L_P, √w₁ L_M, 0, 0]`, solved by QR on `Aᵀ`. The normal equations
    /// would square the conditioning, which is about `1/q` when `M` is
    /// rank-deficient.
    fn gain_for(&self, w: MinkowskiWeights) -> DMatrix<f64> {
        let m = self.h.nrows();
        let n = self.identity.nrows();
        let scale = [1.0, libm::sqrt(w.first), 1.0, libm::sqrt(w.second)];
        // Heaviest rows first keeps Householder QR stable under large weights.
        let mut order = [0, 1, 2, 3];
        order.sort_by(|&i, &j| scale[j].total_cmp(&scale[i]));
        let rows: usize = self.roots.iter().map(|(l, _)| l.ncols()).sum();
        let mut at = DMatrix::zeros(rows, m);
        let mut bt = DMatrix::zeros(rows, n);
        let mut r0 = 0;
        for i in order {
            let (l, hl) = &self.roots[i];
            let k = l.ncols();
            at.view_mut((r0, 0), (k, m)).copy_from(&(hl.transpose() * scale[i]));
            bt.view_mut((r0, 0), (k, n)).copy_from(&(l.transpose() * scale[i]));
            r0 += k;
        }
        let qr = at.clone().qr();
        let r = qr.r();
        if rows >= m && r.diagonal().iter().all(|d| d.abs() > 1e-14 * r.amax()) {
            if let Some(gt) = r.solve_upper_triangular(&(qr.q().transpose() * &bt)) {
                return gt.transpose();
            }
        }
        // Singular innovation: minimum-norm solution of the normal equations.
        let innovation = symmetrize(&(at.transpose() * &at));
        bt.transpose() * &at * pinv_psd(&innovation, 1e-14)
    }

}

fn trace_of_congruence(t: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    (t * m * t.transpose()).trace()
}

fn q_weights(
    terms: &GainTerms,
    gamma: &DMatrix<f64>,
    pred: &MixedBelief,
    noise: &NoiseModel,
    formula: QkFormula,
) -> Result<MinkowskiWeights> {
    let (num, den) = match formula {
        QkFormula::Corrected => {
            let (l_m, hl_m) = &terms.roots[1];
            (
                (l_m - gamma * hl_m).norm_squared(),
                (gamma * &terms.roots[3].1).norm_squared(),
            )
        }
        QkFormula::Literal => {
            check_dim("literal q formula needs m == n", gamma.nrows(), gamma.ncols())?;
            (
                trace_of_congruence(&(&terms.identity - gamma), &pred.shape),
                trace_of_congruence(gamma, &noise.mw),
            )
        }
    };
    Ok(MinkowskiWeights::trace_optimal(num, den))
}

fn initial_weights(
    terms: &GainTerms,
    pred: &MixedBelief,
    noise: &NoiseModel,
    formula: QkFormula,
) -> Result<MinkowskiWeights> {
    let innovation = symmetrize(&(&terms.h_p_ht + &noise.pv));
    let weights = match innovation.cholesky() {
        Some(c) => {
            let kalman = &terms.p_ht * c.inverse();
            q_weights(terms, &kalman, pred, noise, formula)?
        }
        None => MinkowskiWeights::from_parameter(1.0),
    };
    // A vanished Kalman-gain term (e.g. zero predicted covariance) says nothing
    // about the optimum when both sets are present.
    Ok(if weights.parameter().is_some() {
        weights
    } else {
        MinkowskiWeights::from_parameter(1.0)
    })
}

/// Solves the coupled gain / q equations by fixed-point iteration.
///
/// `pred` is the predicted belief at step k. Returns
/// [`Error::GainNoConvergence`] with the last iterate if the iteration does not
/// settle within `opts.max_iterations`.
pub fn gain<S: LinearSystem + ?Sized>(
    pred: &MixedBelief,
    model: &S,
    noise: &NoiseModel,
    opts: &FilterOptions,
) -> Result<GainReport> {
    check_dim("belief dimension", model.state_dim(), pred.dim())?;
    noise.check_against(model)?;
    let terms = GainTerms::new(pred, model.h(pred.step), noise);

    let trace_m = pred.shape.trace();
    let trace_mv = noise.mv.trace();
    let fixed = if trace_mv <= crate::ellipsoid::degeneracy_threshold(trace_m) {
        Some(MinkowskiWeights::FIRST_ONLY)
    } else if trace_m <= crate::ellipsoid::degeneracy_threshold(trace_mv) {
        Some(MinkowskiWeights::SECOND_ONLY)
    } else {
        None
    };
    if let Some(weights) = fixed {
        return Ok(GainReport {
            gamma: terms.gain_for(weights),
            weights,
            iterations: 0,
            residual: 0.0,
            fallback: false,
        });
    }

    let start = initial_weights(&terms, pred, noise, opts.qk_formula)?;
    let q0 = start.parameter().unwrap_or(1.0);

    // Safeguarded secant iteration on s = ln q for the residual
    // r(s) = ln q(Γ(e^s)) - s. r > 0 means q should grow. The optimum can sit
    // where one update term vanishes (q -> 0 or q -> ∞), so s is kept in a
    // wide box and a pinned iterate converges there.
    let mut s = libm::log(q0).clamp(-LOG_Q_LIMIT, LOG_Q_LIMIT);
    let mut below = -LOG_Q_LIMIT;
    let mut above = LOG_Q_LIMIT;
    let mut previous: Option<(f64, f64)> = None;
    let mut gamma_prev: Option<DMatrix<f64>> = None;
    let mut residual = f64::INFINITY;
    let mut last = (terms.gain_for(start), start);
    for iteration in 1..=opts.max_iterations {
        let weights = MinkowskiWeights::from_parameter(libm::exp(s));
        let gamma = terms.gain_for(weights);
        if let Some(prev) = &gamma_prev {
            residual = (&gamma - prev).norm();
            if residual <= opts.tolerance {
                return Ok(GainReport {
                    gamma,
                    weights,
                    iterations: iteration,
                    residual,
                    fallback: false,
                });
            }
        }
        let implied = q_weights(&terms, &gamma, pred, noise, opts.qk_formula)?;
        let target = match implied.parameter() {
            Some(q) => libm::log(q),
            None if implied == MinkowskiWeights::SECOND_ONLY => -LOG_Q_LIMIT,
            None => LOG_Q_LIMIT,
        };
        let r = target - s;
        if r > 0.0 {
            below = below.max(s);
        } else if r < 0.0 {
            above = above.min(s);
        }
        let mut next = s + r;
        if let Some((s_old, r_old)) = previous {
            let slope = (r - r_old) / (s - s_old);
            if slope.is_finite() && slope != 0.0 {
                next = s - r / slope;
            }
        }
        if !(next > below && next < above) || !next.is_finite() {
            next = if r > 0.0 && above >= LOG_Q_LIMIT {
                (s + r).min(LOG_Q_LIMIT)
            } else if r < 0.0 && below <= -LOG_Q_LIMIT {
                (s + r).max(-LOG_Q_LIMIT)
            } else {
                0.5 * (below + above)
            };
        }
        previous = Some((s, r));
        gamma_prev = Some(gamma.clone());
        last = (gamma, weights);
        s = next.clamp(-LOG_Q_LIMIT, LOG_Q_LIMIT);
    }
    Err(Error::GainNoConvergence {
        q: last.1.parameter().unwrap_or(f64::NAN),
        gamma: last.0,
        iterations: opts.max_iterations,
        residual,
    })
}

/// `V = tr P_{k|k} + tr M_{k|k}` for a given gain and shape-update weights.
pub fn estimation_cost(
    pred: &MixedBelief,
    h: &DMatrix<f64>,
    noise: &NoiseModel,
    gamma: &DMatrix<f64>,
    weights: MinkowskiWeights,
) -> f64 {
    let (covariance, shape) = updated_matrices(pred, h, noise, gamma, weights);
    covariance.trace() + shape.trace()
}

/// Updated `(P_{k|k}, M_{k|k})` for any gain, optimal or not. The covariance
/// uses the Joseph form, so it stays PSD for every `gamma`.
pub fn updated_matrices(
    pred: &MixedBelief,
    h: &DMatrix<f64>,
    noise: &NoiseModel,
    gamma: &DMatrix<f64>,
    weights: MinkowskiWeights,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = pred.dim();
    let t = DMatrix::identity(n, n) - gamma * h;
    let gt = gamma.transpose();
    let covariance = symmetrize(&(&t * &pred.covariance * t.transpose() + gamma * &noise.pv * &gt));
    // Summands as Gram matrices of square-root factors: PSD by construction,
    // with traces matching the ones the q rule balances. Forming `T M Tᵀ`
    // directly leaves roundoff that a weight of 1/q ~ 1e13 would blow up.
    let gram = |f: DMatrix<f64>| &f * f.transpose();
    let shape = weights.combine(
        &gram(&t * psd_factor(&pred.shape)),
        &gram(gamma * psd_factor(&noise.mv)),
    );
    (covariance, shape)
}

/// Measurement update of a predicted belief with `z`.
///
/// If the gain fixed point fails, the gain for the initial q is used, a warning
/// is logged and the report is flagged with `fallback`.
pub fn update<S: LinearSystem + ?Sized>(
    pred: &MixedBelief,
    z: &DVector<f64>,
    model: &S,
    noise: &NoiseModel,
    opts: &FilterOptions,
) -> Result<(MixedBelief, GainReport)> {
    check_dim("measurement dimension", model.output_dim(), z.len())?;
    let report = match gain(pred, model, noise, opts) {
        Ok(r) => r,
        Err(Error::GainNoConvergence {
            iterations,
            residual,
            ..
        }) => {
            log::warn!(
                "gain fixed point did not converge at step {} ({} iterations, residual {:e}); using initial q",
                pred.step,
                iterations,
                residual
            );
            let terms = GainTerms::new(pred, model.h(pred.step), noise);
            let weights = initial_weights(&terms, pred, noise, opts.qk_formula)?;
            GainReport {
                gamma: terms.gain_for(weights),
                weights,
                iterations,
                residual,
                fallback: true,
            }
        }
        Err(e) => return Err(e),
    };
    let h = model.h(pred.step);
    let innovation = z - &h * &pred.center;
    let center = &pred.center + &report.gamma * innovation;
    let (covariance, shape) = updated_matrices(pred, &h, noise, &report.gamma, report.weights);
    Ok((
        MixedBelief {
            center,
            covariance,
            shape,
            step: pred.step,
        },
        report,
    ))
}

/// Predict with `u`, then update with `z`.
pub fn mixed_step<S: LinearSystem + ?Sized>(
    belief: &MixedBelief,
    model: &S,
    noise: &NoiseModel,
    u: &DVector<f64>,
    z: &DVector<f64>,
    opts: &FilterOptions,
) -> Result<(MixedBelief, GainReport)> {
    let pred = predict(belief, model, noise, u)?;
    update(&pred, z, model, noise, opts)
}

/// Standard Kalman filter step: the covariances of `noise` are taken as the
/// full noise description and all bounded sets are ignored.
pub fn kalman_step<S: LinearSystem + ?Sized>(
    belief: &MixedBelief,
    model: &S,
    noise: &NoiseModel,
    u: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<MixedBelief> {
    let noise = noise.stochastic_only();
    let belief = belief.without_shape();
    mixed_step(&belief, model, &noise, u, z, &FilterOptions::default()).map(|(b, _)| b)
}

/// Ellipsoidal set-membership step: the recursion with all covariances set to zero.
pub fn esm_step<S: LinearSystem + ?Sized>(
    belief: &MixedBelief,
    model: &S,
    noise: &NoiseModel,
    u: &DVector<f64>,
    z: &DVector<f64>,
    opts: &FilterOptions,
) -> Result<(MixedBelief, GainReport)> {
    let noise = noise.bounded_only();
    let belief = belief.without_covariance();
    mixed_step(&belief, model, &noise, u, z, opts)
}
