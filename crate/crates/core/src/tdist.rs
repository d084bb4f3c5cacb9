//! Multivariate Student's-t with diagonal scale.
//!
//! Covers sampling from the standard t, the density, the coordinate-wise
//! standardization `y = (x - mu) / sigma` with its inverse and Jacobians, and
//! a numerical check that standardization maps `t(mu, Sigma, nu)` onto the
//! standard t: both through the change-of-variables density identity on a
//! grid and through KS tests on standardized draws.

use std::f64::consts::PI;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::ks::{ks_test, KsResult};
use crate::rng::Rng;
use crate::special::{incomplete_beta, ln_gamma};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TDistError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite input at coordinate {0}")]
    NonFinite(usize),
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
}

pub type Result<T, E = TDistError> = std::result::Result<T, E>;

/// Location `mu`, diagonal scale `sigma` (the diagonal of `Sigma^{1/2}`) and
/// degrees of freedom `nu`.
#[derive(Debug, Clone, PartialEq)]
pub struct TDistParams {
    mu: Vec<f64>,
    sigma: Vec<f64>,
    nu: f64,
}

impl TDistParams {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, nu: f64) -> Result<Self> {
        if mu.is_empty() {
            return Err(TDistError::InvalidParam("dimension must be at least 1".into()));
        }
        if mu.len() != sigma.len() {
            return Err(TDistError::Dimension {
                expected: mu.len(),
                got: sigma.len(),
            });
        }
        if let Some((i, s)) = sigma.iter().enumerate().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
            return Err(TDistError::InvalidParam(format!("sigma[{i}] = {s} must be positive")));
        }
        if let Some(i) = mu.iter().position(|m| !m.is_finite()) {
            return Err(TDistError::NonFinite(i));
        }
        check_nu(nu)?;
        Ok(TDistParams { mu, sigma, nu })
    }

    /// Standard t of dimension `p`: `mu = 0`, `sigma = 1`.
    pub fn standard(p: usize, nu: f64) -> Result<Self> {
        Self::new(vec![0.0; p], vec![1.0; p], nu)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Short hex digest of the parameter bytes, used to key report rows.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in self.mu.iter().chain(&self.sigma).chain(std::iter::once(&self.nu)) {
            h.update(v.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(TDistError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(TDistError::NonFinite(i));
        }
        Ok(())
    }

    /// Log density:
    /// `lnΓ((ν+p)/2) - lnΓ(ν/2) - (p/2) ln(νπ) - ln|Σ|^{1/2} - ((ν+p)/2) ln(1 + q/ν)`
    /// with `q = Σ ((x_i - μ_i)/σ_i)²`.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let q: f64 = x
            .iter()
            .zip(&self.mu)
            .zip(&self.sigma)
            .map(|((xv, m), s)| ((xv - m) / s).powi(2))
            .sum();
        let log_det_half: f64 = self.sigma.iter().map(|s| s.ln()).sum();
        Ok(log_norm_const(self.dim(), self.nu) - log_det_half - 0.5 * (self.nu + self.dim() as f64) * (q / self.nu).ln_1p())
    }

    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        self.log_pdf(x).map(f64::exp)
    }

    /// `y_i = (x_i - μ_i) / σ_i`.
    pub fn standardize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(x.iter()
            .zip(&self.mu)
            .zip(&self.sigma)
            .map(|((xv, m), s)| (xv - m) / s)
            .collect())
    }

    /// `x_i = σ_i y_i + μ_i`.
    pub fn unstandardize(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_point(y)?;
        Ok(y.iter()
            .zip(&self.mu)
            .zip(&self.sigma)
            .map(|((yv, m), s)| s * yv + m)
            .collect())
    }

    /// `(det D_x, det D_y) = (Π 1/σ_i, Π σ_i)`.
    pub fn jacobian_dets(&self) -> (f64, f64) {
        let det_dy: f64 = self.sigma.iter().product();
        let det_dx: f64 = self.sigma.iter().map(|s| 1.0 / s).product();
        (det_dx, det_dy)
    }

    /// `n` draws of `μ + σ ⊙ ε` with `ε` standard t.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        let mut eps = sample_standard_t(self.dim(), self.nu, n, rng)?;
        let p = self.dim();
        for row in eps.data_mut().chunks_mut(p) {
            for ((v, m), s) in row.iter_mut().zip(&self.mu).zip(&self.sigma) {
                *v = m + s * *v;
            }
        }
        Ok(eps)
    }
}

fn check_nu(nu: f64) -> Result<()> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(TDistError::InvalidParam(format!("nu = {nu} must be positive")));
    }
    Ok(())
}

fn log_norm_const(p: usize, nu: f64) -> f64 {
    let p = p as f64;
    ln_gamma(0.5 * (nu + p)) - ln_gamma(0.5 * nu) - 0.5 * p * (nu * PI).ln()
}

/// Density of the standard t of dimension `y.len()`.
pub fn standard_log_pdf(y: &[f64], nu: f64) -> f64 {
    let p = y.len() as f64;
    let q: f64 = y.iter().map(|v| v * v).sum();
    log_norm_const(y.len(), nu) - 0.5 * (nu + p) * (q / nu).ln_1p()
}

/// Largest integer `nu` for which the chi-square draw is an explicit sum of
/// squared normals; beyond it (and for fractional `nu`) `2·Gamma(nu/2)` is used.
pub const CHI_SQUARE_SUM_LIMIT: f64 = 64.0;

/// One chi-square variate with `nu` degrees of freedom.
pub fn sample_chi_square(nu: f64, rng: &mut Rng) -> f64 {
    if nu.fract() == 0.0 && nu <= CHI_SQUARE_SUM_LIMIT {
        (0..nu as usize).map(|_| rng.normal().powi(2)).sum()
    } else {
        2.0 * rng.gamma(0.5 * nu)
    }
}

/// `n × p` i.i.d. standard-t draws, each `z · sqrt(ν / χ²_ν)`.
pub fn sample_standard_t(p: usize, nu: f64, n: usize, rng: &mut Rng) -> Result<Tensor> {
    if p == 0 {
        return Err(TDistError::InvalidParam("p must be at least 1".into()));
    }
    if n == 0 {
        return Err(TDistError::InvalidParam("n must be at least 1".into()));
    }
    check_nu(nu)?;
    let mut data = Vec::with_capacity(n * p);
    for _ in 0..n * p {
        data.push(standard_t_variate(nu, rng));
    }
    Ok(Tensor::new([n, p], data).expect("shape matches"))
}

pub fn standard_t_variate(nu: f64, rng: &mut Rng) -> f64 {
    let z = rng.normal();
    let chi2 = loop {
        let c = sample_chi_square(nu, rng);
        if c > 0.0 {
            break c;
        }
    };
    z * (nu / chi2).sqrt()
}

/// CDF of the univariate standard t.
pub fn standard_t_cdf(x: f64, nu: f64) -> f64 {
    if x == 0.0 {
        return 0.5;
    }
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * incomplete_beta(nu / (nu + x * x), 0.5 * nu, 0.5);
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Knobs of [`verify_transform_theorem`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyConfig {
    pub samples: usize,
    pub density_tolerance: f64,
    pub ks_alpha: f64,
    /// Added to the change-of-variables side; nonzero only to prove the
    /// check can fail.
    pub density_perturbation: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            samples: 10_000,
            density_tolerance: 1e-9,
            ks_alpha: 1e-3,
            density_perturbation: 0.0,
        }
    }
}

pub const MIN_VERIFY_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityCheck {
    pub max_discrepancy: f64,
    /// Grid point at which the maximum was attained.
    pub worst_point: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateKs {
    pub coordinate: usize,
    pub ks: KsResult,
    pub alpha: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub params: TDistParams,
    pub digest: String,
    pub density: DensityCheck,
    pub sampling: Vec<CoordinateKs>,
}

impl TheoremReport {
    pub fn passed(&self) -> bool {
        self.density.pass && self.sampling.iter().all(|c| c.pass)
    }

    /// First failing coordinate of the sampling check, if any.
    pub fn failing_coordinate(&self) -> Option<usize> {
        self.sampling.iter().find(|c| !c.pass).map(|c| c.coordinate)
    }
}

/// Checks that standardization carries `t(μ, Σ, ν)` to the standard t.
///
/// Density: for every grid point `x`, compares `f_x(x)·|det D_y|` with the
/// standard density at `y = standardize(x)`. Sampling: draws
/// `samples` points from `t(μ, Σ, ν)`, standardizes them and KS-tests each
/// coordinate against the univariate standard-t CDF.
pub fn verify_transform_theorem(
    params: &TDistParams,
    grid: &[Vec<f64>],
    cfg: &VerifyConfig,
    rng: &mut Rng,
) -> Result<TheoremReport> {
    if cfg.samples < MIN_VERIFY_SAMPLES {
        return Err(TDistError::TooFewSamples {
            min: MIN_VERIFY_SAMPLES,
            got: cfg.samples,
        });
    }
    let (_, det_dy) = params.jacobian_dets();
    let mut max_discrepancy = 0.0f64;
    let mut worst_point = Vec::new();
    for x in grid {
        let through_x = params.pdf(x)? * det_dy.abs() + cfg.density_perturbation;
        let y = params.standardize(x)?;
        let direct = standard_log_pdf(&y, params.nu()).exp();
        let d = (through_x - direct).abs();
        if d > max_discrepancy || worst_point.is_empty() {
            max_discrepancy = max_discrepancy.max(d);
            worst_point = x.clone();
        }
    }
    let density = DensityCheck {
        max_discrepancy,
        worst_point,
        tolerance: cfg.density_tolerance,
        pass: max_discrepancy < cfg.density_tolerance,
    };

    let draws = params.sample(cfg.samples, rng)?;
    let p = params.dim();
    let mut columns = vec![Vec::with_capacity(cfg.samples); p];
    for row in draws.data().chunks(p) {
        let y = params.standardize(row)?;
        for (col, v) in columns.iter_mut().zip(y) {
            col.push(v);
        }
    }
    let nu = params.nu();
    let sampling = columns
        .iter()
        .enumerate()
        .map(|(coordinate, col)| {
            let ks = ks_test(col, |v| standard_t_cdf(v, nu));
            CoordinateKs {
                coordinate,
                ks,
                alpha: cfg.ks_alpha,
                pass: ks.p_value > cfg.ks_alpha,
            }
        })
        .collect();
    Ok(TheoremReport {
        digest: params.digest(),
        params: params.clone(),
        density,
        sampling,
    })
}

/// Cartesian grid `μ_i + σ_i·t` with `t` on `points` evenly spaced values in
/// `[-half_width, half_width]` per axis.
pub fn axis_grid(params: &TDistParams, points: usize, half_width: f64) -> Vec<Vec<f64>> {
    let offsets: Vec<f64> = if points <= 1 {
        vec![0.0]
    } else {
        (0..points)
            .map(|i| -half_width + 2.0 * half_width * i as f64 / (points - 1) as f64)
            .collect()
    };
    let p = params.dim();
    let total = offsets.len().pow(p as u32);
    let mut grid = Vec::with_capacity(total);
    let mut idx = vec![0usize; p];
    for _ in 0..total {
        grid.push(
            (0..p)
                .map(|d| params.mu[d] + params.sigma[d] * offsets[idx[d]])
                .collect(),
        );
        for d in 0..p {
            idx[d] += 1;
            if idx[d] < offsets.len() {
                break;
            }
            idx[d] = 0;
        }
    }
    grid
}

/// Degrees of freedom drawn by [`random_params`].
pub const SWEEP_NUS: [f64; 6] = [1.0, 2.0, 3.0, 5.0, 10.0, 30.0];

/// Random parameters: `p` in `1..=max_dim`, `σ` log-uniform in `[0.1, 10]`,
/// `μ` uniform in `[-10, 10]`, `ν` from [`SWEEP_NUS`].
pub fn random_params(rng: &mut Rng, max_dim: usize) -> TDistParams {
    let p = 1 + rng.below(max_dim.max(1));
    let mu = (0..p).map(|_| rng.uniform_range(-10.0, 10.0)).collect();
    let sigma = (0..p)
        .map(|_| 10f64.powf(rng.uniform_range(-1.0, 1.0)))
        .collect();
    let nu = SWEEP_NUS[rng.below(SWEEP_NUS.len())];
    TDistParams::new(mu, sigma, nu).expect("sampled parameters are valid")
}

pub const REPORT_HEADER: &str = "check,parameter_digest,statistic,threshold,pass";

/// CSV rows (no header) for one report: one density row, then one KS row per
/// coordinate.
pub fn report_csv_rows(report: &TheoremReport) -> String {
    let mut out = String::new();
    let d = &report.density;
    let _ = writeln!(
        out,
        "density,{},{:e},{:e},{}",
        report.digest, d.max_discrepancy, d.tolerance, d.pass
    );
    for c in &report.sampling {
        let _ = writeln!(
            out,
            "ks_coord_{},{},{:e},{:e},{}",
            c.coordinate, report.digest, c.ks.p_value, c.alpha, c.pass
        );
    }
    out
}

/// Sample variance of `xs` and its Monte-Carlo standard error estimated from
/// the same draws.
pub fn variance_with_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let var = sq.iter().sum::<f64>() / n;
    let var_of_sq = sq.iter().map(|s| (s - var).powi(2)).sum::<f64>() / (n - 1.0);
    (var, (var_of_sq / n).sqrt())
}
