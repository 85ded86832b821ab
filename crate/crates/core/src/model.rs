//! System dynamics and noise descriptions.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::ellipsoid::SamplingScheme;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{check_psd, symmetrize};

/// Time-indexed linear system `x_{k+1} = A_k x_k + B_k u_k + w_k`, `z_k = H_k x_k + v_k`.
pub trait LinearSystem {
    /// State dimension n.
    fn state_dim(&self) -> usize;
    /// Control dimension r.
    fn input_dim(&self) -> usize;
    /// Measurement dimension m.
    fn output_dim(&self) -> usize;
    fn a(&self, k: usize) -> DMatrix<f64>;
    fn b(&self, k: usize) -> DMatrix<f64>;
    fn h(&self, k: usize) -> DMatrix<f64>;
}

/// Constant `B`, `H` and a state matrix `A_k = (1 + amplitude · sin k) · A₀`.
///
/// With `amplitude = 0` the system is time invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a0: DMatrix<f64>,
    b: DMatrix<f64>,
    h: DMatrix<f64>,
    amplitude: f64,
}

impl SystemModel {
    pub fn new(a0: DMatrix<f64>, b: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        let n = a0.nrows();
        check_dim("A columns", n, a0.ncols())?;
        check_dim("B rows", n, b.nrows())?;
        check_dim("H columns", n, h.ncols())?;
        if n == 0 || b.ncols() == 0 || h.nrows() == 0 {
            return Err(Error::InvalidArgument("system dimensions must be positive".into()));
        }
        Ok(Self {
            a0,
            b,
            h,
            amplitude: 0.0,
        })
    }

    pub fn with_sinusoidal_modulation(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn base_a(&self) -> &DMatrix<f64> {
        &self.a0
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }
}

impl LinearSystem for SystemModel {
    fn state_dim(&self) -> usize {
        self.a0.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn output_dim(&self) -> usize {
        self.h.nrows()
    }

    fn a(&self, k: usize) -> DMatrix<f64> {
        if self.amplitude == 0.0 {
            self.a0.clone()
        } else {
            &self.a0 * (1.0 + self.amplitude * libm::sin(k as f64))
        }
    }

    fn b(&self, _k: usize) -> DMatrix<f64> {
        self.b.clone()
    }

    fn h(&self, _k: usize) -> DMatrix<f64> {
        self.h.clone()
    }
}

/// Explicit per-step matrices; queries past the end repeat the last entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    h: Vec<DMatrix<f64>>,
}

impl SequenceModel {
    pub fn new(a: Vec<DMatrix<f64>>, b: Vec<DMatrix<f64>>, h: Vec<DMatrix<f64>>) -> Result<Self> {
        if a.is_empty() || b.is_empty() || h.is_empty() {
            return Err(Error::InvalidArgument("empty matrix sequence".into()));
        }
        let n = a[0].nrows();
        let r = b[0].ncols();
        let m = h[0].nrows();
        for ak in &a {
            check_dim("A rows", n, ak.nrows())?;
            check_dim("A columns", n, ak.ncols())?;
        }
        for bk in &b {
            check_dim("B rows", n, bk.nrows())?;
            check_dim("B columns", r, bk.ncols())?;
        }
        for hk in &h {
            check_dim("H rows", m, hk.nrows())?;
            check_dim("H columns", n, hk.ncols())?;
        }
        Ok(Self { a, b, h })
    }
}

fn at(seq: &[DMatrix<f64>], k: usize) -> DMatrix<f64> {
    seq[k.min(seq.len() - 1)].clone()
}

impl LinearSystem for SequenceModel {
    fn state_dim(&self) -> usize {
        self.a[0].nrows()
    }

    fn input_dim(&self) -> usize {
        self.b[0].ncols()
    }

    fn output_dim(&self) -> usize {
        self.h[0].nrows()
    }

    fn a(&self, k: usize) -> DMatrix<f64> {
        at(&self.a, k)
    }

    fn b(&self, k: usize) -> DMatrix<f64> {
        at(&self.b, k)
    }

    fn h(&self, k: usize) -> DMatrix<f64> {
        at(&self.h, k)
    }
}

/// Mixed noise description: Gaussian covariances plus ellipsoidal bounds for the
/// process (`w`) and measurement (`v`) noise. Time invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Process noise covariance `P^w`.
    pub pw: DMatrix<f64>,
    /// Measurement noise covariance `P^v`.
    pub pv: DMatrix<f64>,
    /// Process noise shape `M^w`.
    pub mw: DMatrix<f64>,
    /// Measurement noise shape `M^v`.
    pub mv: DMatrix<f64>,
    pub scheme_w: SamplingScheme,
    pub scheme_v: SamplingScheme,
}

impl NoiseModel {
    pub fn new(
        pw: DMatrix<f64>,
        pv: DMatrix<f64>,
        mw: DMatrix<f64>,
        mv: DMatrix<f64>,
    ) -> Result<Self> {
        check_psd("pw", &pw)?;
        check_psd("pv", &pv)?;
        check_psd("mw", &mw)?;
        check_psd("mv", &mv)?;
        check_dim("mw dimension", pw.nrows(), mw.nrows())?;
        check_dim("mv dimension", pv.nrows(), mv.nrows())?;
        Ok(Self {
            pw: symmetrize(&pw),
            pv: symmetrize(&pv),
            mw: symmetrize(&mw),
            mv: symmetrize(&mv),
            scheme_w: SamplingScheme::UniformBall,
            scheme_v: SamplingScheme::UniformBall,
        })
    }

    pub fn with_schemes(mut self, scheme_w: SamplingScheme, scheme_v: SamplingScheme) -> Self {
        self.scheme_w = scheme_w;
        self.scheme_v = scheme_v;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.pw.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.pv.nrows()
    }

    /// Same bounded sets, Gaussian part removed.
    pub fn bounded_only(&self) -> Self {
        Self {
            pw: DMatrix::zeros(self.pw.nrows(), self.pw.ncols()),
            pv: DMatrix::zeros(self.pv.nrows(), self.pv.ncols()),
            ..self.clone()
        }
    }

    /// Same covariances, bounded sets removed.
    pub fn stochastic_only(&self) -> Self {
        Self {
            mw: DMatrix::zeros(self.mw.nrows(), self.mw.ncols()),
            mv: DMatrix::zeros(self.mv.nrows(), self.mv.ncols()),
            ..self.clone()
        }
    }

    pub(crate) fn check_against<S: LinearSystem + ?Sized>(&self, model: &S) -> Result<()> {
        check_dim("process noise dimension", model.state_dim(), self.state_dim())?;
        check_dim("measurement noise dimension", model.output_dim(), self.output_dim())?;
        Ok(())
    }
}
