//! Financial-model mathematics: coordinate transforms between asset prices
//! and the unit cube, payoffs, the closed-form geometric-average option
//! price, and synthesis of the discrete solution at given prices.

use crate::basis1d::Basis1D;
use crate::operator::{block_functions, PdeCoefficients};
use crate::sparsegrid::SparseIndexSet;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parameter file: {0}")]
    Params(String),
    #[error("invalid market parameters: {0}")]
    Invalid(String),
    #[error("expected {expected} coordinates, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("price point maps to z{axis} = {z:.6} outside the open unit cube; enlarge the domain")]
    OutsideDomain { axis: usize, z: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Put,
    Call,
}

/// Market data for an option on the geometric average of `d` assets.
///
/// The real-world drifts `mu` never enter risk-neutral pricing; they are
/// accepted in parameter files for completeness and otherwise ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketParams {
    pub d: usize,
    pub r: f64,
    pub sigma: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub strike: f64,
    #[serde(rename = "T")]
    pub maturity: f64,
    #[serde(default)]
    pub mu: Option<Vec<f64>>,
}

impl MarketParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let d = self.d;
        if d == 0 {
            return Err(ModelError::Invalid("d must be positive".to_string()));
        }
        if self.sigma.len() != d {
            return Err(ModelError::Invalid(format!(
                "sigma has {} entries, expected {d}",
                self.sigma.len()
            )));
        }
        if self.sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(ModelError::Invalid("volatilities must be positive".to_string()));
        }
        if !(self.strike > 0.0) {
            return Err(ModelError::Invalid("strike must be positive".to_string()));
        }
        if !(self.maturity > 0.0) {
            return Err(ModelError::Invalid("maturity must be positive".to_string()));
        }
        if self.rho.len() != d || self.rho.iter().any(|row| row.len() != d) {
            return Err(ModelError::Invalid(format!("rho must be {d}x{d}")));
        }
        for i in 0..d {
            if (self.rho[i][i] - 1.0).abs() > 1e-12 {
                return Err(ModelError::Invalid("rho must have unit diagonal".to_string()));
            }
            for j in 0..i {
                if (self.rho[i][j] - self.rho[j][i]).abs() > 1e-12 {
                    return Err(ModelError::Invalid("rho must be symmetric".to_string()));
                }
            }
        }
        // The covariance rho_ij sigma_i sigma_j must be positive definite.
        let q = DMatrix::from_fn(d, d, |i, j| self.rho[i][j] * self.sigma[i] * self.sigma[j]);
        if q.cholesky().is_none() {
            return Err(ModelError::Invalid(
                "covariance matrix is not positive definite".to_string(),
            ));
        }
        if let Some(mu) = &self.mu {
            if mu.len() != d {
                return Err(ModelError::Invalid(format!(
                    "mu has {} entries, expected {d}",
                    mu.len()
                )));
            }
        }
        Ok(())
    }
}

/// Truncated log-price box and the drift constants of the symmetrizing
/// change of variables x = y - b t with b_i = sigma_i^2 / 2 - r.
#[derive(Debug, Clone)]
pub struct DomainSpec {
    pub s_min: Vec<f64>,
    pub s_max: Vec<f64>,
    pub x_min: Vec<f64>,
    /// Side lengths d_i = ln(S_i^max / S_i^min).
    pub widths: Vec<f64>,
    pub drift: Vec<f64>,
}

impl DomainSpec {
    pub fn new(s_min: &[f64], s_max: &[f64], params: &MarketParams) -> Result<Self, ModelError> {
        if s_min.len() != params.d || s_max.len() != params.d {
            return Err(ModelError::Dimension {
                expected: params.d,
                got: s_min.len().min(s_max.len()),
            });
        }
        for i in 0..params.d {
            if !(s_min[i] > 0.0 && s_max[i] > s_min[i]) {
                return Err(ModelError::Invalid(format!(
                    "need 0 < S_min < S_max on axis {i}"
                )));
            }
        }
        let x_min: Vec<f64> = s_min.iter().map(|s| s.ln()).collect();
        let widths: Vec<f64> = s_min
            .iter()
            .zip(s_max)
            .map(|(lo, hi)| (hi / lo).ln())
            .collect();
        let drift = params
            .sigma
            .iter()
            .map(|s| s * s / 2.0 - params.r)
            .collect();
        Ok(Self {
            s_min: s_min.to_vec(),
            s_max: s_max.to_vec(),
            x_min,
            widths,
            drift,
        })
    }

    /// Maps a price vector at PDE time `t` into the unit cube.
    pub fn prices_to_cube(&self, s: &[f64], t: f64) -> Result<Vec<f64>, ModelError> {
        if s.len() != self.widths.len() {
            return Err(ModelError::Dimension {
                expected: self.widths.len(),
                got: s.len(),
            });
        }
        s.iter()
            .enumerate()
            .map(|(i, &si)| {
                let x = si.ln() - self.drift[i] * t;
                let z = (x - self.x_min[i]) / self.widths[i];
                if z <= 0.0 || z >= 1.0 {
                    Err(ModelError::OutsideDomain { axis: i, z })
                } else {
                    Ok(z)
                }
            })
            .collect()
    }

    /// Inverse of `prices_to_cube` at t = 0 (the payoff-side map).
    pub fn cube_to_prices(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, &zi)| (self.x_min[i] + self.widths[i] * zi).exp())
            .collect()
    }
}

/// On-disk experiment parameters. `s_min`/`s_max` are scalars applied to
/// every asset, matching the single truncation bound used in practice.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub d: usize,
    pub r: f64,
    pub sigma: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub strike: f64,
    #[serde(rename = "T")]
    pub maturity: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub option: OptionKind,
    #[serde(default)]
    pub mu: Option<Vec<f64>>,
}

/// Parses and validates a TOML parameter file. All fields except `mu` are
/// mandatory; unknown keys are rejected.
pub fn load_params(path: &Path) -> Result<(MarketParams, DomainSpec, OptionKind), ModelError> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::Params(e.to_string()))?;
    parse_params(&text)
}

pub fn parse_params(text: &str) -> Result<(MarketParams, DomainSpec, OptionKind), ModelError> {
    let file: ParamsFile = toml::from_str(text).map_err(|e| ModelError::Params(e.to_string()))?;
    let params = MarketParams {
        d: file.d,
        r: file.r,
        sigma: file.sigma,
        rho: file.rho,
        strike: file.strike,
        maturity: file.maturity,
        mu: file.mu,
    };
    params.validate()?;
    let domain = DomainSpec::new(
        &vec![file.s_min; params.d],
        &vec![file.s_max; params.d],
        &params,
    )?;
    Ok((params, domain, file.option))
}

/// Geometric average of the asset prices.
pub fn geometric_average(s: &[f64]) -> f64 {
    let d = s.len() as f64;
    (s.iter().map(|x| x.ln()).sum::<f64>() / d).exp()
}

/// Payoff as a function on the unit cube: z is mapped to prices through the
/// domain box and fed to the vanilla geometric-average payoff.
pub fn payoff_on_cube<'a>(
    kind: OptionKind,
    params: &'a MarketParams,
    domain: &'a DomainSpec,
) -> impl Fn(&[f64]) -> f64 + Sync + 'a {
    move |z: &[f64]| {
        let avg = geometric_average(&domain.cube_to_prices(z));
        match kind {
            OptionKind::Put => (params.strike - avg).max(0.0),
            OptionKind::Call => (avg - params.strike).max(0.0),
        }
    }
}

/// Effective volatility and dividend yield of the geometric average:
/// sigma^2 = (1/d^2) sum_ij rho_ij sigma_i sigma_j,
/// delta = (1/2d) sum_i sigma_i^2 - sigma^2 / 2.
pub fn effective_vol_and_div(params: &MarketParams) -> (f64, f64) {
    let d = params.d as f64;
    let mut var = 0.0;
    for i in 0..params.d {
        for j in 0..params.d {
            var += params.rho[i][j] * params.sigma[i] * params.sigma[j];
        }
    }
    var /= d * d;
    let delta = params.sigma.iter().map(|s| s * s).sum::<f64>() / (2.0 * d) - var / 2.0;
    (var.sqrt(), delta)
}

/// Standard normal distribution function via the complementary error
/// function; absolute error well below 1e-12 everywhere.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Closed-form price of a put or call on the geometric average at time to
/// maturity `t`. The geometric average is a lognormal asset with the
/// effective volatility and dividend yield, so the scalar Black-Scholes put
/// formula applies; the call follows from put-call parity.
pub fn analytic_price(kind: OptionKind, params: &MarketParams, s: &[f64], t: f64) -> f64 {
    let avg = geometric_average(s);
    let k = params.strike;
    let (sigma, delta) = effective_vol_and_div(params);
    let put = if t <= 0.0 {
        (k - avg).max(0.0)
    } else {
        let vol = sigma * t.sqrt();
        let d1 = ((avg / k).ln() + (params.r - delta + sigma * sigma / 2.0) * t) / vol;
        let d2 = d1 - vol;
        k * (-params.r * t).exp() * normal_cdf(-d2) - avg * (-delta * t).exp() * normal_cdf(-d1)
    };
    match kind {
        OptionKind::Put => put,
        OptionKind::Call => put + avg * (-delta * t).exp() - k * (-params.r * t).exp(),
    }
}

/// PDE coefficients on the unit cube: P_ij = rho_ij sigma_i sigma_j
/// / (2 d_i d_j) with the box side lengths d_i.
pub fn pde_coefficients(params: &MarketParams, domain: &DomainSpec, tau: f64) -> PdeCoefficients {
    let p = DMatrix::from_fn(params.d, params.d, |i, j| {
        params.rho[i][j] * params.sigma[i] * params.sigma[j]
            / (2.0 * domain.widths[i] * domain.widths[j])
    });
    PdeCoefficients {
        tau,
        r: params.r,
        p,
    }
}

/// Evaluates the discrete solution at asset prices `s` and PDE time `t` by
/// synthesizing the coefficient expansion at the mapped cube point. Only
/// basis functions whose support contains the point contribute.
pub fn evaluate_solution_at_prices(
    c: &[f64],
    set: &SparseIndexSet,
    basis: &Basis1D,
    domain: &DomainSpec,
    s: &[f64],
    t: f64,
) -> Result<f64, ModelError> {
    if c.len() != set.total_count {
        return Err(ModelError::Dimension {
            expected: set.total_count,
            got: c.len(),
        });
    }
    let z = domain.prices_to_cube(s, t)?;
    // Nonzero (index, value) pairs per axis and level.
    let nonzero: Vec<Vec<Vec<(usize, f64)>>> = (0..set.d)
        .map(|axis| {
            (0..=set.k)
                .map(|j| {
                    block_functions(basis, j, set.level0_width)
                        .iter()
                        .enumerate()
                        .filter_map(|(i, f)| {
                            let v = f.shape.evaluate(z[axis]);
                            (v != 0.0).then_some((i, v))
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut total = 0.0;
    for block in &set.blocks {
        let active: Vec<&[(usize, f64)]> = (0..set.d)
            .map(|axis| nonzero[axis][block.levels[axis] as usize].as_slice())
            .collect();
        if active.iter().any(|a| a.is_empty()) {
            continue;
        }
        let mut strides = vec![1usize; set.d];
        for axis in (0..set.d - 1).rev() {
            strides[axis] = strides[axis + 1] * block.dims[axis + 1];
        }
        // Odometer over the nonzero entries of each axis.
        let mut pos = vec![0usize; set.d];
        let mut done = false;
        while !done {
            let mut flat = block.offset;
            let mut prod = 1.0;
            for axis in 0..set.d {
                let (idx, val) = active[axis][pos[axis]];
                flat += idx * strides[axis];
                prod *= val;
            }
            total += c[flat] * prod;
            done = true;
            for axis in (0..set.d).rev() {
                pos[axis] += 1;
                if pos[axis] < active[axis].len() {
                    done = false;
                    break;
                }
                pos[axis] = 0;
            }
        }
    }
    Ok(total)
}
