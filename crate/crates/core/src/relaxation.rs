//! Spin-lattice relaxation: the phenomenological rate model
//!
//! ```text
//! 1/T1 = A_const + A_Raman T^7 + A_Orbach / (exp(dE / k_B T) - 1)
//! ```
//!
//! its weighted log-space fit, and the linewidth-to-rate conversion used for
//! indirect high-temperature points.

use nalgebra::{DMatrix, DVector, Matrix4};
use num_rational::Rational64;

use crate::constants::{GAMMA_E_MHZ_PER_MT, K_B_MEV_PER_K};
use crate::error::{check_temperature, invalid, Error, Result};
use crate::lsq::{self, LeastSquaresProblem, LmOptions};

pub const RAMAN_EXPONENT: i32 = 7;

pub const PARAMETER_NAMES: [&str; 4] = ["a_const", "a_raman", "a_orbach", "delta_e"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxationParams {
    /// Temperature-independent floor (s^-1).
    pub a_const: f64,
    /// Raman coefficient (s^-1 K^-7).
    pub a_raman: f64,
    /// Orbach prefactor (s^-1).
    pub a_orbach: f64,
    /// Orbach excited-level energy (meV).
    pub delta_e_mev: f64,
}

impl RelaxationParams {
    pub fn new(a_const: f64, a_raman: f64, a_orbach: f64, delta_e_mev: f64) -> Result<Self> {
        let p = Self {
            a_const,
            a_raman,
            a_orbach,
            delta_e_mev,
        };
        for (name, v) in PARAMETER_NAMES.iter().zip(p.to_array()) {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, "must be finite and >= 0"));
            }
        }
        if p.delta_e_mev <= 0.0 {
            return Err(invalid("delta_e", "must be positive"));
        }
        Ok(p)
    }

    /// Coefficients reported for SiV0: 0.036 s^-1, 5.0e-13 s^-1 K^-7,
    /// 1.5e5 s^-1 and 22 meV.
    pub fn siv0() -> Self {
        Self {
            a_const: 0.036,
            a_raman: 5.0e-13,
            a_orbach: 1.5e5,
            delta_e_mev: 22.0,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.a_const, self.a_raman, self.a_orbach, self.delta_e_mev]
    }

    fn from_array(a: [f64; 4]) -> Self {
        Self {
            a_const: a[0],
            a_raman: a[1],
            a_orbach: a[2],
            delta_e_mev: a[3],
        }
    }

    fn orbach_term(&self, t: f64) -> f64 {
        // exp_m1 overflows to +inf at low T, which sends the term to 0.
        self.a_orbach / (self.delta_e_mev / (K_B_MEV_PER_K * t)).exp_m1()
    }

    fn rate_unchecked(&self, t: f64) -> f64 {
        self.a_const + self.a_raman * t.powi(RAMAN_EXPONENT) + self.orbach_term(t)
    }

    // d rate / d ln(p_k) for each parameter.
    fn log_gradient(&self, t: f64) -> [f64; 4] {
        let x = self.delta_e_mev / (K_B_MEV_PER_K * t);
        // e^x / (e^x - 1)^2 written without overflow
        let bose_slope = 1.0 / (x.exp_m1() * -(-x).exp_m1());
        [
            self.a_const,
            self.a_raman * t.powi(RAMAN_EXPONENT),
            self.orbach_term(t),
            -self.a_orbach * x * bose_slope,
        ]
    }
}

impl Default for RelaxationParams {
    fn default() -> Self {
        Self::siv0()
    }
}

/// `1/T1` in s^-1.
pub fn relaxation_rate(params: &RelaxationParams, t: f64) -> Result<f64> {
    check_temperature(t)?;
    Ok(params.rate_unchecked(t))
}

pub fn t1_seconds(params: &RelaxationParams, t: f64) -> Result<f64> {
    Ok(1.0 / relaxation_rate(params, t)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum T1Source {
    Direct,
    Linewidth,
}

impl T1Source {
    pub fn as_str(self) -> &'static str {
        match self {
            T1Source::Direct => "direct",
            T1Source::Linewidth => "linewidth",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "direct" => Some(T1Source::Direct),
            "linewidth" => Some(T1Source::Linewidth),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct T1Point {
    pub temperature_k: f64,
    pub t1_s: f64,
    pub sigma_s: Option<f64>,
    pub source: T1Source,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct T1Dataset {
    rows: Vec<T1Point>,
}

impl T1Dataset {
    pub fn new(rows: Vec<T1Point>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if !(r.temperature_k.is_finite() && r.temperature_k > 0.0) {
                return Err(invalid("temperature_K", format!("row {}: must be positive", i + 1)));
            }
            if !(r.t1_s.is_finite() && r.t1_s > 0.0) {
                return Err(invalid("t1_s", format!("row {}: must be positive", i + 1)));
            }
            if let Some(s) = r.sigma_s {
                if !(s.is_finite() && s > 0.0) {
                    return Err(invalid("sigma_s", format!("row {}: must be positive", i + 1)));
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[T1Point] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Which parameters are held at their initial values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParameterMask {
    pub fixed: [bool; 4],
}

impl ParameterMask {
    pub fn all_free() -> Self {
        Self::default()
    }

    pub fn fixing(names: &[&str]) -> Result<Self> {
        let mut fixed = [false; 4];
        for name in names {
            let k = PARAMETER_NAMES
                .iter()
                .position(|p| p == name)
                .ok_or_else(|| invalid("fixed", format!("unknown parameter `{name}`")))?;
            fixed[k] = true;
        }
        Ok(Self { fixed })
    }

    fn free_indices(&self) -> Vec<usize> {
        (0..4).filter(|k| !self.fixed[*k]).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RelaxationFitOptions {
    /// Multiplier on the least-squares weight of linewidth-derived rows.
    pub linewidth_weight: f64,
    pub max_iterations: usize,
    pub step_tolerance: f64,
}

impl Default for RelaxationFitOptions {
    fn default() -> Self {
        Self {
            linewidth_weight: 0.5,
            max_iterations: 500,
            step_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelaxationFit {
    pub params: RelaxationParams,
    /// Covariance in the natural parameter units; fixed rows/columns are zero.
    pub covariance: Matrix4<f64>,
    /// `ln(model rate) - ln(1/T1)` per row, unweighted.
    pub log_residuals: Vec<f64>,
    /// Weighted sum of squared log residuals.
    pub chi_square: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl RelaxationFit {
    pub fn std_errors(&self) -> [f64; 4] {
        std::array::from_fn(|k| self.covariance[(k, k)].max(0.0).sqrt())
    }
}

struct LogRateProblem<'a> {
    rows: &'a [T1Point],
    weights: Vec<f64>,
    base: [f64; 4],
    free: Vec<usize>,
}

impl LogRateProblem<'_> {
    fn params_at(&self, x: &DVector<f64>) -> RelaxationParams {
        let mut a = self.base;
        for (j, &k) in self.free.iter().enumerate() {
            a[k] = x[j].exp();
        }
        RelaxationParams::from_array(a)
    }
}

impl LeastSquaresProblem for LogRateProblem<'_> {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = self.params_at(x);
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().zip(&self.weights).map(|(row, w)| {
                w * (p.rate_unchecked(row.temperature_k).ln() + row.t1_s.ln())
            }),
        )
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let p = self.params_at(x);
        let mut jac = DMatrix::zeros(self.rows.len(), self.free.len());
        for (i, (row, w)) in self.rows.iter().zip(&self.weights).enumerate() {
            let rate = p.rate_unchecked(row.temperature_k);
            let g = p.log_gradient(row.temperature_k);
            for (j, &k) in self.free.iter().enumerate() {
                jac[(i, j)] = w * g[k] / rate;
            }
        }
        jac
    }
}

// Smallest-to-largest eigenvalue ratio of J^T J (log coordinates) below which
// a combination is unidentifiable.
const IDENTIFIABILITY_FLOOR: f64 = 1e-14;

/// Weighted least squares on `ln(1/T1)`; free parameters are fitted in log
/// coordinates, which keeps them positive and makes the step test relative.
pub fn fit_relaxation(
    data: &T1Dataset,
    init: &RelaxationParams,
    mask: &ParameterMask,
    options: &RelaxationFitOptions,
) -> Result<RelaxationFit> {
    let free = mask.free_indices();
    if free.is_empty() {
        return Err(Error::Precondition("no free parameters".into()));
    }
    if data.len() < free.len() {
        return Err(Error::Precondition(format!(
            "need at least {} data rows for {} free parameters, got {}",
            free.len(),
            free.len(),
            data.len()
        )));
    }
    let temperature_dependent_free = free.iter().any(|&k| k > 0);
    if temperature_dependent_free {
        let (lo, hi) = data.rows().iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| {
            (lo.min(r.temperature_k), hi.max(r.temperature_k))
        });
        if hi < 10.0 * lo {
            return Err(Error::Precondition(format!(
                "temperatures must span at least one decade, got {lo}..{hi} K"
            )));
        }
    }
    let base = init.to_array();
    for &k in &free {
        if !(base[k] > 0.0) {
            return Err(invalid(PARAMETER_NAMES[k], "free parameters need a positive initial value"));
        }
    }
    if !(options.linewidth_weight > 0.0) {
        return Err(invalid("linewidth_weight", "must be positive"));
    }

    let weights = data
        .rows()
        .iter()
        .map(|r| {
            let sigma_ln = r.sigma_s.map_or(1.0, |s| s / r.t1_s);
            let mult = match r.source {
                T1Source::Direct => 1.0,
                T1Source::Linewidth => options.linewidth_weight,
            };
            mult.sqrt() / sigma_ln
        })
        .collect();
    let problem = LogRateProblem {
        rows: data.rows(),
        weights,
        base,
        free: free.clone(),
    };
    let x0 = DVector::from_iterator(free.len(), free.iter().map(|&k| base[k].ln()));
    let report = lsq::levenberg_marquardt(
        &problem,
        x0,
        &LmOptions {
            max_iterations: options.max_iterations,
            step_tolerance: options.step_tolerance,
            ..LmOptions::default()
        },
    );

    let id = lsq::relative_identifiability(&report.jacobian);
    if !(id.min_eigenvalue > IDENTIFIABILITY_FLOOR) {
        return Err(Error::Unidentifiable {
            combination: free
                .iter()
                .zip(id.direction.iter())
                .filter(|(_, w)| w.abs() > 1e-3)
                .map(|(&k, &w)| (PARAMETER_NAMES[k].to_string(), w))
                .collect(),
        });
    }

    let params = problem.params_at(&report.x);
    let m = data.len();
    let dof = m.saturating_sub(free.len());
    let chi_square = 2.0 * report.cost;
    let scale = if dof > 0 { chi_square / dof as f64 } else { 1.0 };
    let mut covariance = Matrix4::zeros();
    if let Some(inv) = lsq::inverse_normal_matrix(&report.jacobian) {
        let a = params.to_array();
        for (i, &ki) in free.iter().enumerate() {
            for (j, &kj) in free.iter().enumerate() {
                covariance[(ki, kj)] = scale * inv[(i, j)] * a[ki] * a[kj];
            }
        }
    }
    let log_residuals = data
        .rows()
        .iter()
        .map(|r| params.rate_unchecked(r.temperature_k).ln() + r.t1_s.ln())
        .collect();

    Ok(RelaxationFit {
        params,
        covariance,
        log_residuals,
        chi_square,
        iterations: report.iterations,
        converged: report.converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinewidthRate {
    /// Peak-to-peak linewidth converted to frequency (MHz), before offset.
    pub linewidth_mhz: f64,
    /// Offset-corrected width in s^-1, used as the `1/T1` estimate. Only
    /// meaningful in the `T2 <= 2 T1` limit.
    pub rate_per_s: f64,
}

impl LinewidthRate {
    /// `1 / rate`, the time constant matched to the calibration point.
    pub fn time_constant_s(&self) -> f64 {
        1.0 / self.rate_per_s
    }
}

pub fn linewidth_to_rate(linewidth_pp_mt: f64, offset_mhz: f64) -> Result<LinewidthRate> {
    if !(linewidth_pp_mt.is_finite() && linewidth_pp_mt > 0.0) {
        return Err(invalid("linewidth", "must be positive"));
    }
    if !offset_mhz.is_finite() {
        return Err(invalid("offset", "must be finite"));
    }
    let linewidth_mhz = linewidth_pp_mt * GAMMA_E_MHZ_PER_MT;
    let corrected = linewidth_mhz - offset_mhz;
    if !(corrected > 0.0) {
        return Err(Error::BelowCalibrationFloor {
            converted_mhz: linewidth_mhz,
            offset_mhz,
        });
    }
    Ok(LinewidthRate {
        linewidth_mhz,
        rate_per_s: corrected * 1e6,
    })
}

/// `28.025 MHz/mT` as an exact ratio.
pub fn gamma_e_exact() -> Rational64 {
    Rational64::new(28_025, 1_000)
}

/// Exact-arithmetic counterpart of [`linewidth_to_rate`]; returns the
/// corrected width in MHz.
pub fn linewidth_to_rate_exact(linewidth_pp_mt: Rational64, offset_mhz: Rational64) -> Result<Rational64> {
    let zero = Rational64::from_integer(0);
    if linewidth_pp_mt <= zero {
        return Err(invalid("linewidth", "must be positive"));
    }
    let converted = linewidth_pp_mt * gamma_e_exact();
    let corrected = converted - offset_mhz;
    if corrected <= zero {
        return Err(Error::BelowCalibrationFloor {
            converted_mhz: *converted.numer() as f64 / *converted.denom() as f64,
            offset_mhz: *offset_mhz.numer() as f64 / *offset_mhz.denom() as f64,
        });
    }
    Ok(corrected)
}
