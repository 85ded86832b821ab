//! Receding-horizon min-max control law.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::filter::MixedBelief;
use crate::horizon::{assemble_cost, build_horizon, CostSpec, HorizonCost};
use crate::linalg::{spd_inverse, sym_inv_sqrt};
use crate::model::{LinearSystem, NoiseModel};
use crate::sdp::{build_sdp, solve_sdp, SdpSolution, SolverOptions};

/// Full stacked control `U = ℬ^{-1/2} y - ℬ⁻¹ b̂`.
pub fn stacked_control(y: &DVector<f64>, hc: &HorizonCost) -> Result<DVector<f64>> {
    let bb_inv = spd_inverse("control weight ℬ", &hc.bb)?;
    let bb_inv_sqrt = sym_inv_sqrt(&hc.bb)?;
    Ok(bb_inv_sqrt * y - bb_inv * &hc.b_hat)
}

/// First `r_dim` entries of the stacked control.
pub fn recover_control(sol: &SdpSolution, hc: &HorizonCost, r_dim: usize) -> Result<DVector<f64>> {
    let u = stacked_control(&sol.y, hc)?;
    Ok(u.rows(0, r_dim).into_owned())
}

/// Control ignoring the bounded uncertainty, `-ℬ⁻¹ b̂` (first block).
pub fn certainty_equivalent_control(hc: &HorizonCost) -> Result<DVector<f64>> {
    let bb_inv = spd_inverse("control weight ℬ", &hc.bb)?;
    Ok((-(bb_inv * &hc.b_hat)).rows(0, hc.input_dim).into_owned())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDiagnostics {
    pub horizon: usize,
    pub rho: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub iterations: usize,
    pub certificate: f64,
    /// Stochastic trace terms of the expected cost.
    pub constant: f64,
    /// Upper bound on the expected horizon cost over all bounded
    /// uncertainties, `ρ + x̂ᵀ𝒜x̂ - b̂ᵀℬ⁻¹b̂ + const`.
    pub cost_bound: f64,
}

/// One receding-horizon decision at `belief.step`. The horizon is the shorter
/// of `cost.horizon` and `remaining`.
pub fn control_step<S: LinearSystem + ?Sized>(
    belief: &MixedBelief,
    model: &S,
    noise: &NoiseModel,
    cost: &CostSpec,
    remaining: usize,
    opts: &SolverOptions,
) -> Result<(DVector<f64>, ControlDiagnostics)> {
    let horizon = cost.horizon.min(remaining);
    if horizon == 0 {
        return Err(Error::InvalidArgument("no steps remaining".into()));
    }
    let hm = build_horizon(model, belief.step, horizon)?;
    let hc = assemble_cost(&hm, cost, belief, noise)?;
    let inst = build_sdp(&hc, belief, noise)?;
    let sol = solve_sdp(&inst, opts)?;
    let u = recover_control(&sol, &hc, model.input_dim())?;
    Ok((
        u,
        ControlDiagnostics {
            horizon,
            rho: sol.rho,
            tau1: sol.tau1,
            tau2: sol.tau2,
            iterations: sol.iterations,
            certificate: sol.min_eig_certificate,
            constant: hc.constant,
            cost_bound: sol.rho + hc.offset()?,
        },
    ))
}

/// Outcome of [`control_step_or_fallback`].
#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub u: DVector<f64>,
    pub diagnostics: Option<ControlDiagnostics>,
    pub fallback: bool,
}

/// Like [`control_step`], but on a solver failure logs a warning and returns
/// the certainty-equivalent control.
pub fn control_step_or_fallback<S: LinearSystem + ?Sized>(
    belief: &MixedBelief,
    model: &S,
    noise: &NoiseModel,
    cost: &CostSpec,
    remaining: usize,
    opts: &SolverOptions,
) -> Result<ControlDecision> {
    match control_step(belief, model, noise, cost, remaining, opts) {
        Ok((u, d)) => Ok(ControlDecision {
            u,
            diagnostics: Some(d),
            fallback: false,
        }),
        Err(e @ (Error::SolverNoConvergence { .. } | Error::Infeasible(_))) => {
            log::warn!("min-max solve failed at step {}: {e}; using certainty-equivalent control", belief.step);
            let horizon = cost.horizon.min(remaining);
            let hm = build_horizon(model, belief.step, horizon)?;
            let hc = assemble_cost(&hm, cost, belief, noise)?;
            Ok(ControlDecision {
                u: certainty_equivalent_control(&hc)?,
                diagnostics: None,
                fallback: true,
            })
        }
        Err(e) => Err(e),
    }
}
