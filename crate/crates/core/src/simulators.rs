//! Exact-distribution generators for the diffusion regimes, and composition
//! of multi-regime scenarios with known change points.
//!
//! All generators are pure functions of their parameters and the supplied
//! random stream. Brownian, drifted Brownian and Ornstein–Uhlenbeck paths use
//! exact Gaussian transitions; fractional Brownian motion uses the
//! Durbin–Levinson (Hosking) recursion on the exact increment covariance.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{seeded_rng, StreamRng};
use crate::statistics::DiffusionLabel;
use crate::trajectory::{TimeGrid, Trajectory};
use crate::{Error, Result, DEFAULT_SEED};

/// Longest fractional Brownian path generated by the exact method.
pub const FBM_MAX_STEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeKind {
    Brownian,
    BrownianDrift,
    OrnsteinUhlenbeck,
    FractionalBrownian,
}

/// Parameters of one diffusion regime. Only the fields relevant to `kind`
/// are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub kind: RegimeKind,
    pub sigma: f64,
    /// Drift norm (`BrownianDrift`).
    #[serde(default)]
    pub v: f64,
    /// Restoring force (`OrnsteinUhlenbeck`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Equilibrium point (`OrnsteinUhlenbeck`); `None` means "where the
    /// segment starts".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    /// Hurst exponent (`FractionalBrownian`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hurst: Option<f64>,
}

impl RegimeSpec {
    pub fn brownian(sigma: f64) -> Self {
        Self {
            kind: RegimeKind::Brownian,
            sigma,
            v: 0.0,
            lambda: None,
            theta: None,
            hurst: None,
        }
    }

    pub fn brownian_drift(sigma: f64, v: f64) -> Self {
        Self {
            kind: RegimeKind::BrownianDrift,
            v,
            ..Self::brownian(sigma)
        }
    }

    pub fn ornstein_uhlenbeck(sigma: f64, lambda: f64, theta: Option<Vec<f64>>) -> Self {
        Self {
            kind: RegimeKind::OrnsteinUhlenbeck,
            lambda: Some(lambda),
            theta,
            ..Self::brownian(sigma)
        }
    }

    pub fn fractional(sigma: f64, hurst: f64) -> Self {
        Self {
            kind: RegimeKind::FractionalBrownian,
            hurst: Some(hurst),
            ..Self::brownian(sigma)
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        check_sigma(self.sigma)?;
        match self.kind {
            RegimeKind::Brownian => Ok(()),
            RegimeKind::BrownianDrift => check_drift(self.v),
            RegimeKind::OrnsteinUhlenbeck => {
                check_lambda(self.lambda_value()?)?;
                if let Some(theta) = &self.theta {
                    if theta.len() != dim || theta.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidParam(format!(
                            "equilibrium point must have {dim} finite coordinates"
                        )));
                    }
                }
                Ok(())
            }
            RegimeKind::FractionalBrownian => check_hurst(self.hurst_value()?),
        }
    }

    fn lambda_value(&self) -> Result<f64> {
        self.lambda
            .ok_or_else(|| Error::InvalidParam("OrnsteinUhlenbeck regime needs lambda".into()))
    }

    fn hurst_value(&self) -> Result<f64> {
        self.hurst
            .ok_or_else(|| Error::InvalidParam("FractionalBrownian regime needs hurst".into()))
    }

    /// Diffusion type generated by this regime.
    pub fn diffusion_type(&self) -> DiffusionLabel {
        match self.kind {
            RegimeKind::Brownian => DiffusionLabel::Brownian,
            RegimeKind::BrownianDrift if self.v > 0.0 => DiffusionLabel::Superdiffusive,
            RegimeKind::BrownianDrift => DiffusionLabel::Brownian,
            RegimeKind::OrnsteinUhlenbeck => DiffusionLabel::Subdiffusive,
            RegimeKind::FractionalBrownian => match self.hurst {
                Some(h) if h < 0.5 => DiffusionLabel::Subdiffusive,
                Some(h) if h > 0.5 => DiffusionLabel::Superdiffusive,
                _ => DiffusionLabel::Brownian,
            },
        }
    }
}

fn default_delta() -> f64 {
    1.0
}

fn default_dim() -> usize {
    2
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

/// A trajectory made of consecutive regimes separated by known change points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    /// Total number of steps.
    pub n: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Grid indices where the regime changes, strictly increasing in `(0, n)`.
    #[serde(default)]
    pub change_points: Vec<usize>,
    pub regimes: Vec<RegimeSpec>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Initial position; the origin when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
}

impl ScenarioSpec {
    /// Brownian / drifted Brownian with drift norm `v` / Brownian on 300 unit
    /// steps, switching at 100 and 175, with unit diffusion coefficient.
    pub fn scenario1(v: f64, seed: u64) -> Self {
        Self {
            n: 300,
            delta: 1.0,
            dim: 2,
            change_points: vec![100, 175],
            regimes: vec![
                RegimeSpec::brownian(1.0),
                RegimeSpec::brownian_drift(1.0, v),
                RegimeSpec::brownian(1.0),
            ],
            seed,
            start: None,
        }
    }

    /// Brownian / Ornstein–Uhlenbeck with restoring force `lambda` anchored
    /// at the position reached at index 100 / Brownian.
    pub fn scenario2(lambda: f64, seed: u64) -> Self {
        Self {
            regimes: vec![
                RegimeSpec::brownian(1.0),
                RegimeSpec::ornstein_uhlenbeck(1.0, lambda, None),
                RegimeSpec::brownian(1.0),
            ],
            ..Self::scenario1(0.0, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dim == 2 || self.dim == 3) {
            return Err(Error::InvalidParam(format!(
                "dimension must be 2 or 3, got {}",
                self.dim
            )));
        }
        TimeGrid::new(0.0, self.delta, self.n)?;
        if self.regimes.len() != self.change_points.len() + 1 {
            return Err(Error::InvalidParam(format!(
                "{} change points need {} regimes, got {}",
                self.change_points.len(),
                self.change_points.len() + 1,
                self.regimes.len()
            )));
        }
        let mut prev = 0;
        for &cp in &self.change_points {
            if cp <= prev || cp >= self.n {
                return Err(Error::InvalidParam(format!(
                    "change points must be strictly increasing inside (0, {}), got {:?}",
                    self.n, self.change_points
                )));
            }
            prev = cp;
        }
        for regime in &self.regimes {
            regime.validate(self.dim)?;
        }
        for pair in self.regimes.windows(2) {
            if pair[0].diffusion_type() == pair[1].diffusion_type() {
                return Err(Error::InvalidParam(format!(
                    "adjacent regimes share the diffusion type {:?}",
                    pair[0].diffusion_type()
                )));
            }
        }
        if let Some(start) = &self.start {
            if start.len() != self.dim || start.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParam(format!(
                    "start point must have {} finite coordinates",
                    self.dim
                )));
            }
        }
        Ok(())
    }

    /// Diffusion type of each regime, in order.
    pub fn labels(&self) -> Vec<DiffusionLabel> {
        self.regimes
            .iter()
            .map(RegimeSpec::diffusion_type)
            .collect()
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "sigma must be positive, got {sigma}"
        )))
    }
}

fn check_drift(v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "drift norm must be non-negative, got {v}"
        )))
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "lambda must be positive, got {lambda}"
        )))
    }
}

fn check_hurst(h: f64) -> Result<()> {
    if h > 0.0 && h < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "hurst must lie in (0, 1), got {h}"
        )))
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Appends `n_steps` Brownian-with-drift points after the last point in
/// `coords`. `drift_per_coord` is added to every coordinate at every step.
fn extend_drifted<R: Rng + ?Sized>(
    coords: &mut Vec<f64>,
    dim: usize,
    n_steps: usize,
    delta: f64,
    sigma: f64,
    drift_per_coord: f64,
    rng: &mut R,
) {
    let scale = sigma * delta.sqrt();
    let drift_step = drift_per_coord * delta;
    for _ in 0..n_steps {
        let last = coords.len() - dim;
        for d in 0..dim {
            let x = coords[last + d] + (drift_step + scale * normal(rng));
            coords.push(x);
        }
    }
}

/// Autoregression coefficient and innovation standard deviation of the exact
/// Ornstein–Uhlenbeck transition over one step.
pub fn ou_transition(lambda: f64, sigma: f64, delta: f64) -> (f64, f64) {
    let decay = (-lambda * delta).exp();
    // 1 - exp(-2λΔ), accurate for small λΔ.
    let one_minus = -(-2.0 * lambda * delta).exp_m1();
    (decay, sigma * (one_minus / (2.0 * lambda)).sqrt())
}

#[allow(clippy::too_many_arguments)]
fn extend_ou<R: Rng + ?Sized>(
    coords: &mut Vec<f64>,
    dim: usize,
    n_steps: usize,
    delta: f64,
    sigma: f64,
    lambda: f64,
    theta: &[f64],
    rng: &mut R,
) {
    let (decay, sd) = ou_transition(lambda, sigma, delta);
    for _ in 0..n_steps {
        let last = coords.len() - dim;
        for d in 0..dim {
            let x = theta[d] + (coords[last + d] - theta[d]) * decay + sd * normal(rng);
            coords.push(x);
        }
    }
}

/// Autocovariance of unit-variance fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(hurst: f64, k: usize) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

fn extend_fbm<R: Rng + ?Sized>(
    coords: &mut Vec<f64>,
    dim: usize,
    n_steps: usize,
    delta: f64,
    sigma: f64,
    hurst: f64,
    rng: &mut R,
) {
    if n_steps == 0 {
        return;
    }
    let acov: Vec<f64> = (0..n_steps).map(|k| fgn_autocovariance(hurst, k)).collect();
    // noise[d][i]: unit-variance fGn for coordinate d.
    let mut noise = vec![Vec::with_capacity(n_steps); dim];
    let mut phi = vec![0.0; n_steps];
    let mut prev = vec![0.0; n_steps];
    let mut var = acov[0];
    for series in noise.iter_mut() {
        series.push(normal(rng));
    }
    for i in 1..n_steps {
        let mut num = acov[i];
        for j in 1..i {
            num -= phi[j] * acov[i - j];
        }
        let kappa = num / var;
        prev[1..i].copy_from_slice(&phi[1..i]);
        for j in 1..i {
            phi[j] = prev[j] - kappa * prev[i - j];
        }
        phi[i] = kappa;
        var *= 1.0 - kappa * kappa;
        let sd = var.sqrt();
        for series in noise.iter_mut() {
            let mut mean = 0.0;
            for j in 1..=i {
                mean += phi[j] * series[i - j];
            }
            series.push(mean + sd * normal(rng));
        }
    }
    let scale = sigma * delta.powf(hurst);
    for i in 0..n_steps {
        let last = coords.len() - dim;
        for (d, series) in noise.iter().enumerate() {
            let x = coords[last + d] + scale * series[i];
            coords.push(x);
        }
    }
}

/// Appends one regime of `n_steps` steps. Returns an error for invalid
/// parameters; the equilibrium of an unanchored OU regime is the last point.
fn extend_regime<R: Rng + ?Sized>(
    coords: &mut Vec<f64>,
    dim: usize,
    n_steps: usize,
    delta: f64,
    regime: &RegimeSpec,
    rng: &mut R,
) -> Result<()> {
    regime.validate(dim)?;
    match regime.kind {
        RegimeKind::Brownian => extend_drifted(coords, dim, n_steps, delta, regime.sigma, 0.0, rng),
        RegimeKind::BrownianDrift => {
            let per_coord = regime.v / (dim as f64).sqrt();
            extend_drifted(coords, dim, n_steps, delta, regime.sigma, per_coord, rng)
        }
        RegimeKind::OrnsteinUhlenbeck => {
            let theta = match &regime.theta {
                Some(t) => t.clone(),
                None => coords[coords.len() - dim..].to_vec(),
            };
            extend_ou(
                coords,
                dim,
                n_steps,
                delta,
                regime.sigma,
                regime.lambda_value()?,
                &theta,
                rng,
            )
        }
        RegimeKind::FractionalBrownian => {
            if n_steps > FBM_MAX_STEPS {
                return Err(Error::SizeLimit {
                    requested: n_steps,
                    limit: FBM_MAX_STEPS,
                });
            }
            extend_fbm(
                coords,
                dim,
                n_steps,
                delta,
                regime.sigma,
                regime.hurst_value()?,
                rng,
            )
        }
    }
    Ok(())
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "dimension must be 2 or 3, got {dim}"
        )))
    }
}

fn generate<R: Rng + ?Sized>(
    grid: &TimeGrid,
    dim: usize,
    start: Vec<f64>,
    regime: &RegimeSpec,
    rng: &mut R,
) -> Result<Trajectory> {
    check_dim(dim)?;
    let mut coords = Vec::with_capacity(grid.n_points() * dim);
    coords.extend(start);
    extend_regime(&mut coords, dim, grid.n_steps(), grid.delta(), regime, rng)?;
    Trajectory::new(*grid, dim, coords)
}

/// Brownian motion `σB_t` started at the origin.
pub fn gen_brownian<R: Rng + ?Sized>(
    grid: &TimeGrid,
    dim: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    generate(grid, dim, vec![0.0; dim], &RegimeSpec::brownian(sigma), rng)
}

/// Brownian motion with constant drift of norm `v` along the diagonal.
pub fn gen_brownian_drift<R: Rng + ?Sized>(
    grid: &TimeGrid,
    dim: usize,
    sigma: f64,
    v: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    generate(
        grid,
        dim,
        vec![0.0; dim],
        &RegimeSpec::brownian_drift(sigma, v),
        rng,
    )
}

/// Ornstein–Uhlenbeck process with equilibrium `theta`, started at `start`
/// (or at `theta` when `start` is `None`).
pub fn gen_ou<R: Rng + ?Sized>(
    grid: &TimeGrid,
    sigma: f64,
    lambda: f64,
    theta: &[f64],
    start: Option<&[f64]>,
    rng: &mut R,
) -> Result<Trajectory> {
    let dim = theta.len();
    check_dim(dim)?;
    let regime = RegimeSpec::ornstein_uhlenbeck(sigma, lambda, Some(theta.to_vec()));
    let start = start.unwrap_or(theta).to_vec();
    if start.len() != dim {
        return Err(Error::InvalidParam(
            "start and theta dimensions differ".into(),
        ));
    }
    generate(grid, dim, start, &regime, rng)
}

/// Fractional Brownian motion with Hurst exponent `hurst`, scaled by `sigma`.
pub fn gen_fbm<R: Rng + ?Sized>(
    grid: &TimeGrid,
    dim: usize,
    sigma: f64,
    hurst: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    generate(
        grid,
        dim,
        vec![0.0; dim],
        &RegimeSpec::fractional(sigma, hurst),
        rng,
    )
}

/// Simulates `spec` with its own seed. Returns the trajectory and the change
/// points actually used.
pub fn compose_scenario(spec: &ScenarioSpec) -> Result<(Trajectory, Vec<usize>)> {
    compose_scenario_with(spec, &mut seeded_rng(spec.seed))
}

/// Simulates `spec` drawing from `rng`. Each regime continues from the last
/// position of the previous one.
pub fn compose_scenario_with(
    spec: &ScenarioSpec,
    rng: &mut StreamRng,
) -> Result<(Trajectory, Vec<usize>)> {
    spec.validate()?;
    let grid = TimeGrid::new(0.0, spec.delta, spec.n)?;
    let mut coords = Vec::with_capacity(grid.n_points() * spec.dim);
    match &spec.start {
        Some(s) => coords.extend_from_slice(s),
        None => coords.extend(std::iter::repeat_n(0.0, spec.dim)),
    }
    let mut bounds = Vec::with_capacity(spec.regimes.len() + 1);
    bounds.push(0);
    bounds.extend_from_slice(&spec.change_points);
    bounds.push(spec.n);
    for (regime, w) in spec.regimes.iter().zip(bounds.windows(2)) {
        extend_regime(&mut coords, spec.dim, w[1] - w[0], spec.delta, regime, rng)?;
    }
    let traj = Trajectory::new(grid, spec.dim, coords)?;
    Ok((traj, spec.change_points.clone()))
}
