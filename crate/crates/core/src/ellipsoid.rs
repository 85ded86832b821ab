//! Ellipsoid algebra: membership, affine images, trace-optimal Minkowski outer
//! bounds, volume and sampling.
//!
//! An ellipsoid `E(c, M) = { x : (x - c)ᵀ M⁺ (x - c) ≤ 1, x - c ∈ range(M) }`.
//! Flat (rank-deficient) shapes are allowed; the pseudoinverse convention makes
//! membership well defined for them.

use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{check_psd, symmetrize, sym_sqrt};

/// Relative factor of the degeneracy threshold `ε_deg = 1e-12 · (1 + tr other)`.
pub const DEGENERACY_FACTOR: f64 = 1e-12;

/// Threshold below which a trace is considered vanished, given the trace of the
/// other summand.
pub fn degeneracy_threshold(other_trace: f64) -> f64 {
    DEGENERACY_FACTOR * (1.0 + other_trace.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    center: DVector<f64>,
    shape: DMatrix<f64>,
}

impl Ellipsoid {
    /// Builds an ellipsoid, rejecting non-symmetric or indefinite shapes.
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>) -> Result<Self> {
        check_dim("ellipsoid shape rows", center.len(), shape.nrows())?;
        check_psd("ellipsoid shape", &shape)?;
        Ok(Self {
            center,
            shape: symmetrize(&shape),
        })
    }

    /// Skips validation; callers guarantee a symmetric PSD shape of matching size.
    pub(crate) fn from_parts(center: DVector<f64>, shape: DMatrix<f64>) -> Self {
        Self { center, shape }
    }

    /// Zero-centered ellipsoid.
    pub fn centered(shape: DMatrix<f64>) -> Result<Self> {
        Self::new(DVector::zeros(shape.nrows()), shape)
    }

    pub fn unit_ball(n: usize) -> Self {
        Self {
            center: DVector::zeros(n),
            shape: DMatrix::identity(n, n),
        }
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Membership test with tolerance. For flat shapes the offset must also lie
    /// in the range of the shape matrix (within `tol`).
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        check_dim("contains point", self.dim(), x.len())?;
        if tol < 0.0 {
            return Err(Error::InvalidArgument("negative membership tolerance".into()));
        }
        let d = x - &self.center;
        if self.dim() == 0 {
            return Ok(true);
        }
        let eig = self.shape.clone().symmetric_eigen();
        let cutoff = 1e-12 * eig.eigenvalues.amax();
        let coords = eig.eigenvectors.transpose() * &d;
        let mut form = 0.0;
        let mut off_range = 0.0;
        for (l, c) in eig.eigenvalues.iter().zip(coords.iter()) {
            if *l > cutoff && *l > 0.0 {
                form += c * c / l;
            } else {
                off_range += c * c;
            }
        }
        let range_tol = tol.max(1e-12 * (1.0 + self.center.amax()));
        Ok(form <= 1.0 + tol && libm::sqrt(off_range) <= range_tol)
    }

    /// Image under `x ↦ a x + offset`.
    pub fn affine_image(&self, a: &DMatrix<f64>, offset: &DVector<f64>) -> Result<Self> {
        check_dim("affine map columns", self.dim(), a.ncols())?;
        check_dim("affine offset", a.nrows(), offset.len())?;
        Ok(Self {
            center: a * &self.center + offset,
            shape: symmetrize(&(a * &self.shape * a.transpose())),
        })
    }

    /// Volume `κ_n · sqrt(det M)`; zero for flat shapes.
    pub fn volume(&self) -> f64 {
        let det = self.shape.determinant();
        if det <= 0.0 {
            0.0
        } else {
            unit_ball_volume(self.dim()) * libm::sqrt(det)
        }
    }

    /// Draws one point of the ellipsoid using `scheme`.
    pub fn sample<R: Rng + ?Sized>(&self, scheme: SamplingScheme, rng: &mut R) -> DVector<f64> {
        let n = self.dim();
        let normalized = match scheme {
            SamplingScheme::UniformBall => uniform_ball(n, rng),
            SamplingScheme::NonSymmetric90_10 => non_symmetric_90_10(n, rng),
        };
        &self.center + sym_sqrt(&self.shape) * normalized
    }
}

/// How a bounded noise is drawn from its ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SamplingScheme {
    /// Uniform over the solid ellipsoid.
    #[default]
    UniformBall,
    /// Each normalized coordinate is uniform on (0, 1) with probability 0.9 and
    /// uniform on (-1, 0) otherwise; the vector is pulled back radially into the
    /// unit ball and mapped through the symmetric square root of the shape.
    NonSymmetric90_10,
}

impl SamplingScheme {
    pub fn name(self) -> &'static str {
        match self {
            SamplingScheme::UniformBall => "uniform_ball",
            SamplingScheme::NonSymmetric90_10 => "non_symmetric_90_10",
        }
    }
}

impl core::str::FromStr for SamplingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_ball" => Ok(SamplingScheme::UniformBall),
            "non_symmetric_90_10" => Ok(SamplingScheme::NonSymmetric90_10),
            other => Err(Error::InvalidArgument(alloc::format!(
                "unknown sampling scheme `{other}`"
            ))),
        }
    }
}

fn uniform_ball<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    if n == 0 {
        return DVector::zeros(0);
    }
    loop {
        let dir = DVector::from_fn(n, |_, _| -> f64 { StandardNormal.sample(rng) });
        let norm = dir.norm();
        if norm > 1e-300 {
            let radius = libm::pow(rng.random::<f64>(), 1.0 / n as f64);
            return dir * (radius / norm);
        }
    }
}

fn non_symmetric_90_10<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    let mut v = DVector::from_fn(n, |_, _| {
        let positive = rng.random::<f64>() < 0.9;
        let mag = rng.random::<f64>();
        if positive {
            mag
        } else {
            -mag
        }
    });
    let norm = v.norm();
    if norm > 1.0 {
        v /= norm;
    }
    v
}

/// Volume of the n-dimensional unit ball.
pub fn unit_ball_volume(n: usize) -> f64 {
    // κ_0 = 1, κ_1 = 2, κ_n = κ_{n-2} · 2π / n
    let mut even = 1.0;
    let mut odd = 2.0;
    for k in 2..=n {
        if k % 2 == 0 {
            even *= 2.0 * PI / k as f64;
        } else {
            odd *= 2.0 * PI / k as f64;
        }
    }
    if n % 2 == 0 {
        even
    } else {
        odd
    }
}

fn check_pair(m1: &DMatrix<f64>, m2: &DMatrix<f64>) -> Result<()> {
    check_dim("minkowski operand rows", m1.nrows(), m2.nrows())?;
    check_dim("minkowski operand cols", m1.ncols(), m2.ncols())?;
    Ok(())
}

/// `(1/p + 1) m1 + (p + 1) m2`, an outer bound of `E(0, m1) ⊕ E(0, m2)` for any `p > 0`.
pub fn minkowski_outer(m1: &DMatrix<f64>, m2: &DMatrix<f64>, p: f64) -> Result<DMatrix<f64>> {
    check_pair(m1, m2)?;
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(alloc::format!(
            "Minkowski parameter must be positive and finite, got {p}"
        )));
    }
    Ok(symmetrize(&(m1 * (1.0 / p + 1.0) + m2 * (p + 1.0))))
}

/// `sqrt(tr m1 / tr m2)`, the minimizer of `tr(minkowski_outer(m1, m2, p))`.
pub fn trace_optimal_p(m1: &DMatrix<f64>, m2: &DMatrix<f64>) -> Result<f64> {
    check_pair(m1, m2)?;
    let t1 = m1.trace();
    let t2 = m2.trace();
    let threshold = degeneracy_threshold(t1);
    if t2 <= threshold {
        return Err(Error::DegenerateDenominator {
            trace: t2,
            threshold,
        });
    }
    Ok(libm::sqrt(t1.max(0.0) / t2))
}

/// Coefficients of the two summands in a Minkowski outer bound,
/// `first · m1 + second · m2`.
///
/// The degenerate cases encode the limits of the parametrized bound when one of
/// the two sets has vanished: `(1, 0)` keeps only `m1`, `(0, 1)` only `m2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinkowskiWeights {
    pub first: f64,
    pub second: f64,
}

impl MinkowskiWeights {
    pub const FIRST_ONLY: Self = Self {
        first: 1.0,
        second: 0.0,
    };
    pub const SECOND_ONLY: Self = Self {
        first: 0.0,
        second: 1.0,
    };

    /// Weights `(1/p + 1, p + 1)`.
    pub fn from_parameter(p: f64) -> Self {
        Self {
            first: 1.0 / p + 1.0,
            second: p + 1.0,
        }
    }

    /// Trace-optimal weights from the traces of the two summands, applying the
    /// degeneracy policy when either trace falls below `ε_deg`.
    pub fn trace_optimal(trace_first: f64, trace_second: f64) -> Self {
        if trace_second <= degeneracy_threshold(trace_first) {
            Self::FIRST_ONLY
        } else if trace_first <= degeneracy_threshold(trace_second) {
            Self::SECOND_ONLY
        } else {
            Self::from_parameter(libm::sqrt(trace_first / trace_second))
        }
    }

    /// The Minkowski parameter, `None` in the degenerate cases.
    pub fn parameter(&self) -> Option<f64> {
        if self.first == 0.0 || self.second == 0.0 {
            None
        } else {
            Some(self.second - 1.0)
        }
    }

    pub fn combine(&self, m1: &DMatrix<f64>, m2: &DMatrix<f64>) -> DMatrix<f64> {
        symmetrize(&(m1 * self.first + m2 * self.second))
    }
}

/// Trace-optimal outer bound of `E(0, m1) ⊕ E(0, m2)` with the degeneracy policy applied.
pub fn minkowski_outer_trace_optimal(
    m1: &DMatrix<f64>,
    m2: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, MinkowskiWeights)> {
    check_pair(m1, m2)?;
    let weights = MinkowskiWeights::trace_optimal(m1.trace(), m2.trace());
    Ok((weights.combine(m1, m2), weights))
}
