//! Stacked horizon matrices and the expected receding-horizon cost.
//!
//! Over a horizon of N steps starting at k, the state after step t is
//!
//! ```text
//! x_{t+1} = Ã_t x_k + B̃_t U_k + C_t W_k
//! ```
//!
//! with `U_k = [u_k; …; u_{k+N-1}]`, `W_k = [w_k; …; w_{k+N-1}]` and
//! `Ã_t = A_t A_{t-1} ⋯ A_k` (later steps multiply on the left).

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::filter::MixedBelief;
use crate::linalg::{check_psd, min_eigenvalue, symmetrize};
use crate::model::{LinearSystem, NoiseModel};

/// Stage costs `Q` (on `x_{t+1}`) and `R` (on `u_t`) and the receding horizon length.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub horizon: usize,
}

impl CostSpec {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, horizon: usize) -> Result<Self> {
        check_psd("state cost q", &q)?;
        if !r.is_square() || min_eigenvalue(&r) <= 0.0 {
            return Err(Error::NotPositiveDefinite { what: "control cost r" });
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        Ok(Self {
            q: symmetrize(&q),
            r: symmetrize(&r),
            horizon,
        })
    }

    /// Same weights, different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Self {
        Self {
            horizon,
            ..self.clone()
        }
    }
}

/// Per-step stacked propagation matrices for `t = k, …, k + N - 1`
/// (index `i = t - k`).
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonMatrices {
    pub start: usize,
    pub horizon: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    /// `Ã_t`, n×n.
    pub a_tilde: Vec<DMatrix<f64>>,
    /// `B̃_t`, n×(N·r).
    pub b_tilde: Vec<DMatrix<f64>>,
    /// `C_t`, n×(N·n).
    pub c_plain: Vec<DMatrix<f64>>,
    /// `C̃_t = [Ã_t  C_t]`, n×((N+1)·n).
    pub c_tilde: Vec<DMatrix<f64>>,
}

impl HorizonMatrices {
    /// Length of `U_k`.
    pub fn control_len(&self) -> usize {
        self.horizon * self.input_dim
    }

    /// Length of `η = [e_k; W_k]`.
    pub fn uncertainty_len(&self) -> usize {
        (self.horizon + 1) * self.state_dim
    }

    /// `x_{t+1}` from the stacked form, with `t = start + i`.
    pub fn propagate(
        &self,
        i: usize,
        x: &DVector<f64>,
        controls: &DVector<f64>,
        disturbances: &DVector<f64>,
    ) -> DVector<f64> {
        &self.a_tilde[i] * x + &self.b_tilde[i] * controls + &self.c_plain[i] * disturbances
    }
}

pub fn build_horizon<S: LinearSystem + ?Sized>(
    model: &S,
    k: usize,
    horizon: usize,
) -> Result<HorizonMatrices> {
    if horizon < 1 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let n = model.state_dim();
    let r = model.input_dim();
    let mut a_tilde = Vec::with_capacity(horizon);
    let mut b_tilde = Vec::with_capacity(horizon);
    let mut c_plain = Vec::with_capacity(horizon);
    let mut c_tilde = Vec::with_capacity(horizon);

    let mut a_acc = DMatrix::<f64>::identity(n, n);
    let mut b_acc = DMatrix::<f64>::zeros(n, horizon * r);
    let mut c_acc = DMatrix::<f64>::zeros(n, horizon * n);
    for i in 0..horizon {
        let t = k + i;
        let a = model.a(t);
        a_acc = &a * &a_acc;
        b_acc = &a * &b_acc;
        b_acc.view_mut((0, i * r), (n, r)).copy_from(&model.b(t));
        c_acc = &a * &c_acc;
        c_acc
            .view_mut((0, i * n), (n, n))
            .copy_from(&DMatrix::<f64>::identity(n, n));

        let mut ct = DMatrix::zeros(n, (horizon + 1) * n);
        ct.view_mut((0, 0), (n, n)).copy_from(&a_acc);
        ct.view_mut((0, n), (n, horizon * n)).copy_from(&c_acc);

        a_tilde.push(a_acc.clone());
        b_tilde.push(b_acc.clone());
        c_plain.push(c_acc.clone());
        c_tilde.push(ct);
    }
    Ok(HorizonMatrices {
        start: k,
        horizon,
        state_dim: n,
        input_dim: r,
        a_tilde,
        b_tilde,
        c_plain,
        c_tilde,
    })
}

/// Coefficients of the expected horizon cost
///
/// ```text
/// E[J_k] = x̂ᵀ𝒜x̂ + Uᵀℬ U + ηᵀ𝒞η + 2b̂ᵀU + 2Uᵀ𝒟η + 2ĉᵀη + const
/// ```
///
/// where `η = [e_b; W_b]` collects the bounded uncertainties.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonCost {
    pub aa: DMatrix<f64>,
    pub bb: DMatrix<f64>,
    pub cc: DMatrix<f64>,
    pub dd: DMatrix<f64>,
    pub b_hat: DVector<f64>,
    pub c_hat: DVector<f64>,
    /// Trace terms contributed by the stochastic uncertainty.
    pub constant: f64,
    /// The estimate `x̂_k` the linear terms were built from.
    pub center: DVector<f64>,
    pub input_dim: usize,
    pub state_dim: usize,
    pub horizon: usize,
}

impl HorizonCost {
    /// Part of the cost that no choice of `U` or `η` changes once `U` is
    /// written as `ℬ^{-1/2} y - ℬ⁻¹ b̂`: `x̂ᵀ𝒜x̂ - b̂ᵀℬ⁻¹b̂ + const`.
    pub fn offset(&self) -> Result<f64> {
        let bb_inv = crate::linalg::spd_inverse("control weight ℬ", &self.bb)?;
        Ok(self.center.dot(&(&self.aa * &self.center)) - self.b_hat.dot(&(bb_inv * &self.b_hat))
            + self.constant)
    }

    pub fn expected_cost(&self, controls: &DVector<f64>, eta: &DVector<f64>) -> f64 {
        self.center.dot(&(&self.aa * &self.center))
            + controls.dot(&(&self.bb * controls))
            + eta.dot(&(&self.cc * eta))
            + 2.0 * self.b_hat.dot(controls)
            + 2.0 * controls.dot(&(&self.dd * eta))
            + 2.0 * self.c_hat.dot(eta)
            + self.constant
    }
}

pub fn assemble_cost(
    hm: &HorizonMatrices,
    cost: &CostSpec,
    belief: &MixedBelief,
    noise: &NoiseModel,
) -> Result<HorizonCost> {
    let n = hm.state_dim;
    let r = hm.input_dim;
    let big_n = hm.horizon;
    check_dim("belief dimension", n, belief.dim())?;
    check_dim("state cost dimension", n, cost.q.nrows())?;
    check_dim("control cost dimension", r, cost.r.nrows())?;
    check_dim("process noise dimension", n, noise.pw.nrows())?;

    let ul = hm.control_len();
    let el = hm.uncertainty_len();
    let mut aa = DMatrix::zeros(n, n);
    let mut bb = DMatrix::zeros(ul, ul);
    let mut cc = DMatrix::zeros(el, el);
    let mut dd = DMatrix::zeros(ul, el);
    let mut b_lin = DMatrix::zeros(ul, n);
    let mut c_lin = DMatrix::zeros(el, n);
    let mut constant = 0.0;

    let mut pw_stack = DMatrix::zeros(big_n * n, big_n * n);
    for i in 0..big_n {
        pw_stack.view_mut((i * n, i * n), (n, n)).copy_from(&noise.pw);
    }

    let q = &cost.q;
    for i in 0..big_n {
        let at = &hm.a_tilde[i];
        let bt = &hm.b_tilde[i];
        let ct = &hm.c_tilde[i];
        let cp = &hm.c_plain[i];
        let q_at = q * at;
        let q_bt = q * bt;
        let q_ct = q * ct;
        aa += at.transpose() * &q_at;
        bb += bt.transpose() * &q_bt;
        cc += ct.transpose() * &q_ct;
        dd += bt.transpose() * &q_ct;
        b_lin += bt.transpose() * &q_at;
        c_lin += ct.transpose() * &q_at;
        constant += (at.transpose() * &q_at * &belief.covariance).trace();
        constant += (cp.transpose() * q * cp * &pw_stack).trace();
    }
    for i in 0..big_n {
        let mut block = bb.view_mut((i * r, i * r), (r, r));
        block += &cost.r;
    }

    Ok(HorizonCost {
        aa: symmetrize(&aa),
        bb: symmetrize(&bb),
        cc: symmetrize(&cc),
        dd,
        b_hat: b_lin * &belief.center,
        c_hat: c_lin * &belief.center,
        constant,
        center: belief.center.clone(),
        input_dim: r,
        state_dim: n,
        horizon: big_n,
    })
}
