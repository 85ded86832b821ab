//! Monte Carlo experiments: noise realizations, episodes for each
//! estimator/controller combination, and the aggregate error metrics.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::control::control_step_or_fallback;
use crate::ellipsoid::{minkowski_outer_trace_optimal, Ellipsoid, SamplingScheme};
use crate::error::{check_dim, Error, Result};
use crate::filter::{esm_step, kalman_step, mixed_step, FilterOptions, MixedBelief};
use crate::horizon::CostSpec;
use crate::linalg::{check_psd, sym_sqrt};
use crate::model::{LinearSystem, NoiseModel, SystemModel};
use crate::sdp::SolverOptions;
use crate::stats::chi_squared_quantile;

/// Fraction of failed episodes above which a benchmark counts as failed.
pub const FAILURE_BUDGET: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    Kalman,
    SetMembership,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Kf,
    Esm,
    Mix,
    Rckf,
    Rcesm,
    Rcmix,
}

impl Method {
    pub const ESTIMATION: [Method; 3] = [Method::Kf, Method::Esm, Method::Mix];
    pub const CONTROL: [Method; 3] = [Method::Rckf, Method::Rcesm, Method::Rcmix];

    pub fn name(self) -> &'static str {
        match self {
            Method::Kf => "KF",
            Method::Esm => "ESM",
            Method::Mix => "MIX",
            Method::Rckf => "RCKF",
            Method::Rcesm => "RCESM",
            Method::Rcmix => "RCMIX",
        }
    }

    pub fn estimator(self) -> Estimator {
        match self {
            Method::Kf | Method::Rckf => Estimator::Kalman,
            Method::Esm | Method::Rcesm => Estimator::SetMembership,
            Method::Mix | Method::Rcmix => Estimator::Mixed,
        }
    }

    pub fn closed_loop(self) -> bool {
        matches!(self, Method::Rckf | Method::Rcesm | Method::Rcmix)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Method::ESTIMATION, Method::CONTROL]
            .concat()
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: SystemModel,
    pub noise: NoiseModel,
    /// `x̂₀`, `P₀`, `M₀`.
    pub prior: MixedBelief,
    /// `Q`, `R` and the receding horizon length.
    pub cost: CostSpec,
    /// Episode length `N_total`.
    pub steps: usize,
    pub runs: usize,
    pub seed: u64,
    /// Confidence level of the Gaussian ellipsoids used for reporting and for
    /// the set-membership view of Gaussian noise.
    pub confidence: f64,
    pub filter: FilterOptions,
    pub solver: SolverOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let m = |r: usize, c: usize, v: &[f64]| DMatrix::from_row_slice(r, c, v);
        let model = SystemModel::new(
            m(2, 2, &[0.6, 0.7, 0.25, 0.5]),
            m(2, 1, &[1.0, 0.3]),
            m(1, 2, &[0.2, 1.0]),
        )
        .expect("default model")
        .with_sinusoidal_modulation(0.1);
        let noise = NoiseModel::new(
            DMatrix::identity(2, 2) * 0.25,
            m(1, 1, &[0.25]),
            m(2, 2, &[5.0, 2.0, 2.0, 5.0]),
            m(1, 1, &[5.0]),
        )
        .expect("default noise")
        .with_schemes(SamplingScheme::NonSymmetric90_10, SamplingScheme::UniformBall);
        let prior = MixedBelief::new(
            DVector::from_row_slice(&[60.0, -45.0]),
            DMatrix::identity(2, 2) * 100.0,
            DMatrix::identity(2, 2) * 400.0,
        )
        .expect("default prior");
        let cost = CostSpec::new(m(2, 2, &[10.0, 0.0, 0.0, 1.0]), m(1, 1, &[1.0]), 5).expect("default cost");
        Self {
            model,
            noise,
            prior,
            cost,
            steps: 100,
            runs: 50,
            seed: 0,
            confidence: 0.95,
            filter: FilterOptions::default(),
            solver: SolverOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.model.state_dim();
        check_dim("noise state dimension", n, self.noise.state_dim())?;
        check_dim("noise output dimension", self.model.output_dim(), self.noise.output_dim())?;
        check_dim("prior dimension", n, self.prior.dim())?;
        check_dim("q dimension", n, self.cost.q.nrows())?;
        check_dim("r dimension", self.model.input_dim(), self.cost.r.nrows())?;
        check_psd("p0", &self.prior.covariance)?;
        check_psd("m0", &self.prior.shape)?;
        if self.runs == 0 {
            return Err(Error::InvalidArgument("runs must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidArgument("confidence must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Chi-squared scaling of a Gaussian with `dof` dimensions at `self.confidence`.
    pub fn confidence_scale(&self, dof: usize) -> Result<f64> {
        chi_squared_quantile(self.confidence, dof)
    }
}

/// Seed of episode `episode` under `master`; every method uses the same one.
pub fn episode_seed(master: u64, episode: usize) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(master ^ splitmix(episode as u64))
}

/// True initial state and all noise draws of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub x0: DVector<f64>,
    /// `w_0 … w_{N-1}`.
    pub w: Vec<DVector<f64>>,
    /// `v_0 … v_N`; `v_0` is drawn but unused.
    pub v: Vec<DVector<f64>>,
}

fn gaussian(cov_sqrt: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n = cov_sqrt.nrows();
    let z = DVector::from_fn(n, |_, _| -> f64 { StandardNormal.sample(rng) });
    cov_sqrt * z
}

fn bounded(set: &Ellipsoid, scheme: SamplingScheme, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let x = set.sample(scheme, rng);
    debug_assert!(set.contains(&x, 1e-9).unwrap_or(false), "bounded noise sample outside its set");
    x
}

pub fn realize(cfg: &ExperimentConfig, seed: u64) -> NoiseRealization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = &cfg.noise;
    let p0 = sym_sqrt(&cfg.prior.covariance);
    let pw = sym_sqrt(&noise.pw);
    let pv = sym_sqrt(&noise.pv);
    let e0 = Ellipsoid::from_parts(DVector::zeros(cfg.prior.dim()), cfg.prior.shape.clone());
    let ew = Ellipsoid::from_parts(DVector::zeros(noise.state_dim()), noise.mw.clone());
    let ev = Ellipsoid::from_parts(DVector::zeros(noise.output_dim()), noise.mv.clone());

    let x0 = &cfg.prior.center + gaussian(&p0, &mut rng) + bounded(&e0, SamplingScheme::UniformBall, &mut rng);
    let mut w = Vec::with_capacity(cfg.steps);
    let mut v = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..=cfg.steps {
        w.push(gaussian(&pw, &mut rng) + bounded(&ew, noise.scheme_w, &mut rng));
        v.push(gaussian(&pv, &mut rng) + bounded(&ev, noise.scheme_v, &mut rng));
    }
    w.truncate(cfg.steps);
    NoiseRealization { x0, w, v }
}

/// The noise model and prior an estimator (and its controller) works with.
///
/// The Kalman view replaces each bounded term by the covariance of a uniform
/// draw from its ellipsoid, `M / (d + 2)`, and drops the sets. The
/// set-membership view replaces each Gaussian term by its confidence
/// ellipsoid and drops the covariances. The mixed view is the model itself.
pub fn estimator_view(cfg: &ExperimentConfig, estimator: Estimator) -> Result<(NoiseModel, MixedBelief)> {
    let noise = &cfg.noise;
    let n = noise.state_dim();
    let m = noise.output_dim();
    match estimator {
        Estimator::Mixed => Ok((noise.clone(), cfg.prior.clone())),
        Estimator::Kalman => {
            let uniform = |shape: &DMatrix<f64>, d: usize| shape / (d as f64 + 2.0);
            let view = NoiseModel::new(
                &noise.pw + uniform(&noise.mw, n),
                &noise.pv + uniform(&noise.mv, m),
                DMatrix::zeros(n, n),
                DMatrix::zeros(m, m),
            )?
            .with_schemes(noise.scheme_w, noise.scheme_v);
            let prior = MixedBelief::new(
                cfg.prior.center.clone(),
                &cfg.prior.covariance + uniform(&cfg.prior.shape, n),
                DMatrix::zeros(n, n),
            )?
            .at_step(cfg.prior.step);
            Ok((view, prior))
        }
        Estimator::SetMembership => {
            let cn = cfg.confidence_scale(n)?;
            let cm = cfg.confidence_scale(m)?;
            let view = NoiseModel::new(
                DMatrix::zeros(n, n),
                DMatrix::zeros(m, m),
                minkowski_outer_trace_optimal(&noise.mw, &(&noise.pw * cn))?.0,
                minkowski_outer_trace_optimal(&noise.mv, &(&noise.pv * cm))?.0,
            )?
            .with_schemes(noise.scheme_w, noise.scheme_v);
            let prior = MixedBelief::new(
                cfg.prior.center.clone(),
                DMatrix::zeros(n, n),
                minkowski_outer_trace_optimal(&cfg.prior.shape, &(&cfg.prior.covariance * cn))?.0,
            )?
            .at_step(cfg.prior.step);
            Ok((view, prior))
        }
    }
}

/// Per-step record of one episode. Vectors indexed by step have `N + 1`
/// entries, controls have `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub method: Method,
    pub episode: usize,
    pub seed: u64,
    pub states: Vec<DVector<f64>>,
    /// `None` at step 0, where no measurement is taken.
    pub measurements: Vec<Option<DVector<f64>>>,
    pub centers: Vec<DVector<f64>>,
    pub trace_p: Vec<f64>,
    pub trace_m: Vec<f64>,
    /// Trace of the reported uncertainty set: the confidence ellipsoid of the
    /// covariance for the Kalman filter, the shape ellipsoid otherwise.
    pub set_trace: Vec<f64>,
    pub set_volume: Vec<f64>,
    pub controls: Vec<DVector<f64>>,
    /// `x_kᵀ Q x_k + u_{k-1}ᵀ R u_{k-1}` (0 at step 0).
    pub stage_cost: Vec<f64>,
    pub gain_fallbacks: usize,
    pub control_fallbacks: usize,
}

impl EpisodeResult {
    pub fn failed(&self) -> bool {
        self.gain_fallbacks + self.control_fallbacks > 0
    }

    pub fn steps(&self) -> usize {
        self.controls.len()
    }
}

fn reported_set(estimator: Estimator, belief: &MixedBelief, scale: f64) -> (f64, f64) {
    let n = belief.dim();
    match estimator {
        Estimator::Kalman => {
            let shape = &belief.covariance * scale;
            let volume = Ellipsoid::from_parts(DVector::zeros(n), shape.clone()).volume();
            (shape.trace(), volume)
        }
        _ => {
            let volume = Ellipsoid::from_parts(DVector::zeros(n), belief.shape.clone()).volume();
            (belief.shape.trace(), volume)
        }
    }
}

/// Runs one episode of `method` on the noise realization drawn from `seed`.
pub fn simulate_episode(cfg: &ExperimentConfig, method: Method, episode: usize, seed: u64) -> Result<EpisodeResult> {
    cfg.validate()?;
    let noise_draws = realize(cfg, seed);
    simulate_with(cfg, method, episode, seed, &noise_draws)
}

/// As [`simulate_episode`] with a given noise realization.
pub fn simulate_with(
    cfg: &ExperimentConfig,
    method: Method,
    episode: usize,
    seed: u64,
    draws: &NoiseRealization,
) -> Result<EpisodeResult> {
    let model = &cfg.model;
    let estimator = method.estimator();
    let (view, mut belief) = estimator_view(cfg, estimator)?;
    let scale = cfg.confidence_scale(model.state_dim())?;
    let steps = cfg.steps;
    let r = model.input_dim();

    let mut out = EpisodeResult {
        method,
        episode,
        seed,
        states: Vec::with_capacity(steps + 1),
        measurements: Vec::with_capacity(steps + 1),
        centers: Vec::with_capacity(steps + 1),
        trace_p: Vec::with_capacity(steps + 1),
        trace_m: Vec::with_capacity(steps + 1),
        set_trace: Vec::with_capacity(steps + 1),
        set_volume: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps),
        stage_cost: Vec::with_capacity(steps + 1),
        gain_fallbacks: 0,
        control_fallbacks: 0,
    };
    let record = |out: &mut EpisodeResult, belief: &MixedBelief| {
        let (t, v) = reported_set(estimator, belief, scale);
        out.centers.push(belief.center.clone());
        out.trace_p.push(belief.covariance.trace());
        out.trace_m.push(belief.shape.trace());
        out.set_trace.push(t);
        out.set_volume.push(v);
    };

    let mut x = draws.x0.clone();
    out.states.push(x.clone());
    out.measurements.push(None);
    out.stage_cost.push(0.0);
    record(&mut out, &belief);

    for k in 0..steps {
        let u = if method.closed_loop() {
            let d = control_step_or_fallback(&belief, model, &view, &cfg.cost, steps - k, &cfg.solver)?;
            if d.fallback {
                out.control_fallbacks += 1;
            }
            d.u
        } else {
            DVector::zeros(r)
        };
        x = model.a(k) * &x + model.b(k) * &u + &draws.w[k];
        let z = model.h(k + 1) * &x + &draws.v[k + 1];

        belief = match estimator {
            Estimator::Kalman => kalman_step(&belief, model, &view, &u, &z)?,
            Estimator::SetMembership => {
                let (b, report) = esm_step(&belief, model, &view, &u, &z, &cfg.filter)?;
                out.gain_fallbacks += usize::from(report.fallback);
                b
            }
            Estimator::Mixed => {
                let (b, report) = mixed_step(&belief, model, &view, &u, &z, &cfg.filter)?;
                out.gain_fallbacks += usize::from(report.fallback);
                b
            }
        };

        let cost = x.dot(&(&cfg.cost.q * &x)) + u.dot(&(&cfg.cost.r * &u));
        out.states.push(x.clone());
        out.measurements.push(Some(z));
        out.controls.push(u);
        out.stage_cost.push(cost);
        record(&mut out, &belief);
    }
    Ok(out)
}

/// Mean absolute, mean squared and root mean squared error of a list of scalars.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorStats {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub count: usize,
}

impl ErrorStats {
    pub fn from_errors<I: IntoIterator<Item = f64>>(errors: I) -> Self {
        let (mut abs, mut sq, mut count) = (0.0, 0.0, 0usize);
        for e in errors {
            abs += e.abs();
            sq += e * e;
            count += 1;
        }
        if count == 0 {
            return Self::default();
        }
        let mse = sq / count as f64;
        Self {
            mae: abs / count as f64,
            mse,
            rmse: libm::sqrt(mse),
            count,
        }
    }
}

/// Errors of one episode: estimation error `x_k - x̂_k` for steps `1..=N`
/// (open loop) or the state itself for steps `0..=N` (closed loop, zero
/// reference).
pub fn episode_errors(result: &EpisodeResult) -> Vec<f64> {
    if result.method.closed_loop() {
        result.states.iter().flat_map(|x| x.iter().copied()).collect()
    } else {
        result
            .states
            .iter()
            .zip(&result.centers)
            .skip(1)
            .flat_map(|(x, c)| (x - c).iter().copied().collect::<Vec<_>>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodMetrics {
    pub method: Method,
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    /// Final-step volume of the reported set, averaged over episodes.
    pub volume: f64,
    /// Final-step trace of the reported set, averaged over episodes.
    pub trace: f64,
    /// Standard deviation of the per-episode MAE.
    pub mae_sd: f64,
    pub runs: usize,
    pub failed_episodes: usize,
}

impl MethodMetrics {
    pub fn failure_rate(&self) -> f64 {
        self.failed_episodes as f64 / self.runs as f64
    }

    pub fn over_failure_budget(&self) -> bool {
        self.failure_rate() > FAILURE_BUDGET
    }
}

/// Aggregates episodes of a single method. The result does not depend on the
/// order of `results`.
pub fn compute_metrics(results: &[EpisodeResult]) -> Result<MethodMetrics> {
    let first = results
        .first()
        .ok_or_else(|| Error::InvalidArgument("no episodes to aggregate".into()))?;
    let method = first.method;
    if results.iter().any(|r| r.method != method) {
        return Err(Error::InvalidArgument("episodes of different methods".into()));
    }
    let mut sorted: Vec<&EpisodeResult> = results.iter().collect();
    sorted.sort_by_key(|r| (r.episode, r.seed));

    let errors = sorted.iter().flat_map(|r| episode_errors(r));
    let stats = ErrorStats::from_errors(errors);
    let runs = sorted.len();
    let mean = |f: &dyn Fn(&EpisodeResult) -> f64| sorted.iter().map(|r| f(r)).sum::<f64>() / runs as f64;
    let volume = mean(&|r| r.set_volume.last().copied().unwrap_or(0.0));
    let trace = mean(&|r| r.set_trace.last().copied().unwrap_or(0.0));
    let episode_mae: Vec<f64> = sorted
        .iter()
        .map(|r| ErrorStats::from_errors(episode_errors(r)).mae)
        .collect();
    let mae_mean = episode_mae.iter().sum::<f64>() / runs as f64;
    let mae_sd = if runs > 1 {
        libm::sqrt(episode_mae.iter().map(|m| (m - mae_mean) * (m - mae_mean)).sum::<f64>() / (runs - 1) as f64)
    } else {
        0.0
    };
    Ok(MethodMetrics {
        method,
        mae: stats.mae,
        mse: stats.mse,
        rmse: stats.rmse,
        volume,
        trace,
        mae_sd,
        runs,
        failed_episodes: sorted.iter().filter(|r| r.failed()).count(),
    })
}

/// Spread of the true state across episodes at one step and coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeRow {
    pub step: usize,
    pub coordinate: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// Per-step min/max/mean of each state coordinate across episodes.
pub fn envelope(results: &[EpisodeResult]) -> Vec<EnvelopeRow> {
    let mut sorted: Vec<&EpisodeResult> = results.iter().collect();
    sorted.sort_by_key(|r| (r.episode, r.seed));
    let Some(first) = sorted.first() else {
        return Vec::new();
    };
    let steps = sorted.iter().map(|r| r.states.len()).min().unwrap_or(0);
    let n = first.states[0].len();
    let mut rows = Vec::with_capacity(steps * n);
    for step in 0..steps {
        for coordinate in 0..n {
            let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
            for r in &sorted {
                let v = r.states[step][coordinate];
                lo = lo.min(v);
                hi = hi.max(v);
                sum += v;
            }
            rows.push(EnvelopeRow {
                step,
                coordinate,
                min: lo,
                max: hi,
                mean: sum / sorted.len() as f64,
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub metrics: MethodMetrics,
    pub episodes: Vec<EpisodeResult>,
}

/// Runs `cfg.runs` episodes of each method sequentially on common random
/// numbers.
pub fn run_benchmark(cfg: &ExperimentConfig, methods: &[Method]) -> Result<Vec<MethodRun>> {
    cfg.validate()?;
    let draws: Vec<(u64, NoiseRealization)> = (0..cfg.runs)
        .map(|e| {
            let seed = episode_seed(cfg.seed, e);
            (seed, realize(cfg, seed))
        })
        .collect();
    methods
        .iter()
        .map(|&method| {
            let episodes = draws
                .iter()
                .enumerate()
                .map(|(e, (seed, d))| simulate_with(cfg, method, e, *seed, d))
                .collect::<Result<Vec<_>>>()?;
            Ok(MethodRun {
                metrics: compute_metrics(&episodes)?,
                episodes,
            })
        })
        .collect()
}
