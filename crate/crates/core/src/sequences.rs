//! Pulse-sequence decay models: echo-detected inversion recovery for T1 and
//! Hahn echo decay for T2, synthetic curves and decay-constant fits.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::lsq::{self, LeastSquaresProblem, LmOptions};

pub const MIN_FIT_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayKind {
    InversionRecovery,
    EchoDecay,
}

impl DecayKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DecayKind::InversionRecovery => "inversion-recovery",
            DecayKind::EchoDecay => "echo-decay",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "inversion-recovery" => Some(DecayKind::InversionRecovery),
            "echo-decay" => Some(DecayKind::EchoDecay),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayPoint {
    pub delay_s: f64,
    pub amplitude: f64,
    pub sigma: Option<f64>,
}

/// Echo-decay curves always hold the total evolution time `2 tau` as delay.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    kind: DecayKind,
    points: Vec<DecayPoint>,
    noise_seed: Option<u64>,
}

impl DecayCurve {
    pub fn new(kind: DecayKind, points: Vec<DecayPoint>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.delay_s.is_finite() && p.delay_s >= 0.0) {
                return Err(invalid("delay_s", format!("row {}: must be finite and >= 0", i + 1)));
            }
            if !p.amplitude.is_finite() {
                return Err(invalid("amplitude", format!("row {}: must be finite", i + 1)));
            }
            if let Some(s) = p.sigma {
                if !(s.is_finite() && s > 0.0) {
                    return Err(invalid("sigma", format!("row {}: must be positive", i + 1)));
                }
            }
        }
        if let Some(i) = points.windows(2).position(|w| w[1].delay_s <= w[0].delay_s) {
            return Err(invalid("delay_s", format!("row {}: delays must be strictly increasing", i + 2)));
        }
        Ok(Self {
            kind,
            points,
            noise_seed: None,
        })
    }

    /// Echo-decay curve given against the pulse spacing `tau`; delays are
    /// doubled on the way in.
    pub fn echo_from_pulse_spacing(points: Vec<DecayPoint>) -> Result<Self> {
        Self::new(
            DecayKind::EchoDecay,
            points
                .into_iter()
                .map(|p| DecayPoint {
                    delay_s: 2.0 * p.delay_s,
                    ..p
                })
                .collect(),
        )
    }

    pub fn kind(&self) -> DecayKind {
        self.kind
    }

    pub fn points(&self) -> &[DecayPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn noise_seed(&self) -> Option<u64> {
        self.noise_seed
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| DecayPoint {
                    delay_s: p.delay_s,
                    amplitude: factor * p.amplitude,
                    sigma: p.sigma.map(|s| factor.abs() * s),
                })
                .collect(),
            ..self.clone()
        }
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid("tau_grid", "must not be empty"));
    }
    Ok(())
}

/// `M(tau) = m_eq - (m_eq - m_init) exp(-tau / t1)`.
pub fn inversion_recovery(t1: f64, m_eq: f64, m_init: f64, tau: f64) -> f64 {
    m_eq - (m_eq - m_init) * (-tau / t1).exp()
}

pub fn simulate_inversion_recovery(t1: f64, m_eq: f64, m_init: f64, tau_grid: &[f64]) -> Result<DecayCurve> {
    if !(t1.is_finite() && t1 > 0.0) {
        return Err(invalid("t1", "must be positive"));
    }
    check_grid(tau_grid)?;
    DecayCurve::new(
        DecayKind::InversionRecovery,
        tau_grid
            .iter()
            .map(|&tau| DecayPoint {
                delay_s: tau,
                amplitude: inversion_recovery(t1, m_eq, m_init, tau),
                sigma: None,
            })
            .collect(),
    )
}

/// `tau_grid` holds pulse spacings; the curve is stored against `2 tau`.
pub fn simulate_echo_decay(t2: f64, s0: f64, tau_grid: &[f64]) -> Result<DecayCurve> {
    if !(t2.is_finite() && t2 > 0.0) {
        return Err(invalid("t2", "must be positive"));
    }
    check_grid(tau_grid)?;
    DecayCurve::new(
        DecayKind::EchoDecay,
        tau_grid
            .iter()
            .map(|&tau| DecayPoint {
                delay_s: 2.0 * tau,
                amplitude: s0 * (-2.0 * tau / t2).exp(),
                sigma: None,
            })
            .collect(),
    )
}

/// Adds Gaussian noise with standard deviation `fraction * max|amplitude|`
/// and records the seed and sigma on the returned curve.
pub fn add_gaussian_noise(curve: &DecayCurve, fraction: f64, seed: u64) -> Result<DecayCurve> {
    if !(fraction.is_finite() && fraction >= 0.0) {
        return Err(invalid("noise", "must be finite and >= 0"));
    }
    let scale = curve.points.iter().fold(0.0f64, |m, p| m.max(p.amplitude.abs()));
    let sigma = fraction * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let points = curve
        .points
        .iter()
        .map(|p| DecayPoint {
            delay_s: p.delay_s,
            amplitude: p.amplitude + sigma * normal.sample(&mut rng),
            sigma: (sigma > 0.0).then_some(sigma),
        })
        .collect();
    Ok(DecayCurve {
        kind: curve.kind,
        points,
        noise_seed: Some(seed),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct DecayFitOptions {
    /// Hold `m_eq` at this value (inversion recovery only).
    pub pinned_m_eq: Option<f64>,
    /// Fit a stretching exponent. Exploratory; off unless asked for.
    pub stretch: bool,
    pub max_iterations: usize,
}

impl Default for DecayFitOptions {
    fn default() -> Self {
        Self {
            pinned_m_eq: None,
            stretch: false,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecayFit {
    pub kind: DecayKind,
    pub time_constant_s: f64,
    /// Parameter names in covariance order; the time constant comes first.
    pub names: Vec<&'static str>,
    pub values: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub chi_square: f64,
    pub iterations: usize,
}

impl DecayFit {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| *n == name).map(|k| self.values[k])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| *n == name)
            .map(|k| self.covariance[(k, k)].max(0.0).sqrt())
    }

    pub fn time_constant_sigma_s(&self) -> f64 {
        self.covariance[(0, 0)].max(0.0).sqrt()
    }

    pub fn stretch(&self) -> Option<f64> {
        self.value("stretch")
    }
}

// Fit parameters, everything scaled to O(1): rate k = t_scale / t, amplitudes
// divided by the curve's amplitude scale.
struct DecayProblem {
    kind: DecayKind,
    xs: Vec<f64>,
    ys: Vec<f64>,
    ws: Vec<f64>,
    pinned_m_eq: Option<f64>,
    stretch: bool,
}

struct Unpacked {
    k: f64,
    amps: [f64; 2],
    beta: f64,
}

impl DecayProblem {
    fn n_amplitudes(&self) -> usize {
        match (self.kind, self.pinned_m_eq) {
            (DecayKind::InversionRecovery, None) => 2,
            _ => 1,
        }
    }

    fn unpack(&self, p: &DVector<f64>) -> Unpacked {
        let na = self.n_amplitudes();
        let mut amps = [0.0; 2];
        amps[..na].copy_from_slice(&p.as_slice()[1..1 + na]);
        Unpacked {
            k: p[0],
            amps,
            beta: if self.stretch { p[1 + na] } else { 1.0 },
        }
    }

    // Values of exp(-(k x)^beta), its k- and beta-derivatives.
    fn kernel(u: &Unpacked, x: f64) -> (f64, f64, f64) {
        if u.beta == 1.0 {
            let v = u.k * x;
            let e = (-v).exp();
            let de_db = if v > 0.0 { -v * v.ln() * e } else { 0.0 };
            return (e, -x * e, de_db);
        }
        let v = u.k * x;
        if v == 0.0 {
            return (1.0, 0.0, 0.0);
        }
        let vb = v.powf(u.beta);
        let e = (-vb).exp();
        (e, -u.beta * vb / u.k * e, -vb * v.ln() * e)
    }

    // Model value and gradient with respect to the packed parameters.
    fn eval(&self, u: &Unpacked, x: f64, grad: Option<&mut [f64]>) -> f64 {
        let (e, de_dk, de_db) = Self::kernel(u, x);
        let na = self.n_amplitudes();
        let (f, dk, db, damps): (f64, f64, f64, [f64; 2]) = match (self.kind, self.pinned_m_eq) {
            (DecayKind::InversionRecovery, None) => {
                let (meq, minit) = (u.amps[0], u.amps[1]);
                let d = meq - minit;
                (meq - d * e, -d * de_dk, -d * de_db, [1.0 - e, e])
            }
            (DecayKind::InversionRecovery, Some(meq)) => {
                let d = meq - u.amps[0];
                (meq - d * e, -d * de_dk, -d * de_db, [e, 0.0])
            }
            (DecayKind::EchoDecay, _) => {
                let s0 = u.amps[0];
                (s0 * e, s0 * de_dk, s0 * de_db, [e, 0.0])
            }
        };
        if let Some(g) = grad {
            g[0] = dk;
            g[1..1 + na].copy_from_slice(&damps[..na]);
            if self.stretch {
                g[1 + na] = db;
            }
        }
        f
    }

    fn n_params(&self) -> usize {
        1 + self.n_amplitudes() + usize::from(self.stretch)
    }

    // Linear amplitudes at fixed rate, for the starting-point scan.
    fn profile(&self, k: f64) -> Option<(f64, DVector<f64>)> {
        let na = self.n_amplitudes();
        let u = Unpacked {
            k,
            amps: [0.0; 2],
            beta: 1.0,
        };
        let m = self.xs.len();
        let mut a = DMatrix::zeros(m, na);
        let mut b = DVector::zeros(m);
        for i in 0..m {
            let (e, _, _) = Self::kernel(&u, self.xs[i]);
            let w = self.ws[i];
            match (self.kind, self.pinned_m_eq) {
                (DecayKind::InversionRecovery, None) => {
                    a[(i, 0)] = w * (1.0 - e);
                    a[(i, 1)] = w * e;
                    b[i] = w * self.ys[i];
                }
                (DecayKind::InversionRecovery, Some(meq)) => {
                    a[(i, 0)] = w * e;
                    b[i] = w * (self.ys[i] - meq * (1.0 - e));
                }
                (DecayKind::EchoDecay, _) => {
                    a[(i, 0)] = w * e;
                    b[i] = w * self.ys[i];
                }
            }
        }
        let svd = a.clone().svd(true, true);
        let sol = svd.solve(&b, 1e-12).ok()?;
        let cost = (a * &sol - b).norm_squared();
        cost.is_finite().then_some((cost, sol))
    }
}

impl LeastSquaresProblem for DecayProblem {
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        let u = self.unpack(p);
        DVector::from_iterator(
            self.xs.len(),
            (0..self.xs.len()).map(|i| self.ws[i] * (self.eval(&u, self.xs[i], None) - self.ys[i])),
        )
    }

    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        let u = self.unpack(p);
        let n = self.n_params();
        let mut jac = DMatrix::zeros(self.xs.len(), n);
        let mut g = vec![0.0; n];
        for i in 0..self.xs.len() {
            self.eval(&u, self.xs[i], Some(&mut g));
            for j in 0..n {
                jac[(i, j)] = self.ws[i] * g[j];
            }
        }
        jac
    }
}

/// Weighted least squares for the closed form matching the curve kind.
pub fn fit_decay(curve: &DecayCurve, options: &DecayFitOptions) -> Result<DecayFit> {
    let pts = curve.points();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::Precondition(format!(
            "need at least {MIN_FIT_POINTS} points, got {}",
            pts.len()
        )));
    }
    if options.pinned_m_eq.is_some() && curve.kind() != DecayKind::InversionRecovery {
        return Err(invalid("pinned_m_eq", "only applies to inversion recovery"));
    }
    let t_scale = pts.last().map(|p| p.delay_s).unwrap_or(0.0);
    let a_scale = pts.iter().fold(0.0f64, |m, p| m.max(p.amplitude.abs()));
    let (lo, hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.amplitude), hi.max(p.amplitude)));
    if !(t_scale > 0.0) || !(a_scale > 0.0) || hi - lo <= 1e-12 * a_scale {
        return Err(Error::DegenerateDecay);
    }

    let problem = DecayProblem {
        kind: curve.kind(),
        xs: pts.iter().map(|p| p.delay_s / t_scale).collect(),
        ys: pts.iter().map(|p| p.amplitude / a_scale).collect(),
        ws: pts.iter().map(|p| p.sigma.map_or(1.0, |s| a_scale / s)).collect(),
        pinned_m_eq: options.pinned_m_eq.map(|m| m / a_scale),
        stretch: options.stretch,
    };
    let x_min = problem.xs.iter().copied().find(|x| *x > 0.0).unwrap_or(1.0);
    let (k_lo, k_hi) = (1e-2, 10.0 / x_min);
    let n_scan = 200;
    let start = (0..n_scan)
        .map(|i| k_lo * (k_hi / k_lo).powf(i as f64 / (n_scan - 1) as f64))
        .filter_map(|k| problem.profile(k).map(|(c, a)| (c, k, a)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or(Error::DegenerateDecay)?;
    let na = problem.n_amplitudes();
    let mut x0 = DVector::zeros(problem.n_params());
    x0[0] = start.1;
    x0.rows_mut(1, na).copy_from(&start.2);
    if problem.stretch {
        x0[1 + na] = 1.0;
    }

    let report = lsq::levenberg_marquardt(
        &problem,
        x0,
        &LmOptions {
            max_iterations: options.max_iterations,
            step_tolerance: 1e-12,
            cost_floor: 1e-32,
        },
    );
    if !report.converged {
        return Err(Error::NonConvergence {
            iterations: report.iterations,
        });
    }
    let k = report.x[0];
    if k <= 0.0 {
        return Err(Error::NegativeTimeConstant(t_scale / k));
    }
    let u = problem.unpack(&report.x);
    let contrast = match (curve.kind(), problem.pinned_m_eq) {
        (DecayKind::InversionRecovery, None) => u.amps[0] - u.amps[1],
        (DecayKind::InversionRecovery, Some(meq)) => meq - u.amps[0],
        (DecayKind::EchoDecay, _) => u.amps[0],
    };
    if contrast.abs() <= 1e-9 {
        return Err(Error::DegenerateDecay);
    }
    let inv = lsq::inverse_normal_matrix(&report.jacobian).ok_or(Error::DegenerateDecay)?;

    let mut names = vec![match curve.kind() {
        DecayKind::InversionRecovery => "t1",
        DecayKind::EchoDecay => "t2",
    }];
    match (curve.kind(), problem.pinned_m_eq) {
        (DecayKind::InversionRecovery, None) => names.extend(["m_eq", "m_init"]),
        (DecayKind::InversionRecovery, Some(_)) => names.push("m_init"),
        (DecayKind::EchoDecay, _) => names.push("s0"),
    }
    if problem.stretch {
        names.push("stretch");
    }
    let n = names.len();
    // d(natural)/d(scaled) is diagonal.
    let mut d = DVector::from_element(n, a_scale);
    d[0] = -t_scale / (k * k);
    if problem.stretch {
        d[n - 1] = 1.0;
    }
    let mut values: Vec<f64> = (0..n).map(|j| report.x[j] * d[j]).collect();
    values[0] = t_scale / k;
    if problem.stretch {
        values[n - 1] = report.x[n - 1];
    }
    let chi_square = 2.0 * report.cost;
    let dof = pts.len() - n;
    let scale = if dof > 0 { chi_square / dof as f64 } else { 1.0 };
    let covariance = DMatrix::from_fn(n, n, |i, j| scale * inv[(i, j)] * d[i] * d[j]);

    Ok(DecayFit {
        kind: curve.kind(),
        time_constant_s: values[0],
        names,
        values,
        covariance,
        chi_square,
        iterations: report.iterations,
    })
}

/// `T2 <= 2 T1` allowing one combined standard deviation.
pub fn within_t2_limit(t2: f64, t2_sigma: f64, t1: f64, t1_sigma: f64) -> bool {
    t2 - 2.0 * t1 <= (t2_sigma * t2_sigma + 4.0 * t1_sigma * t1_sigma).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn closed_forms() {
        let c = simulate_inversion_recovery(18.0, 1.0, -0.8, &[0.0, 18.0, 1e6]).unwrap();
        let a: Vec<f64> = c.points().iter().map(|p| p.amplitude).collect();
        assert_eq!(a[0], -0.8);
        assert_relative_eq!(a[1], 1.0 - 1.8 / std::f64::consts::E, max_relative = 1e-15);
        assert_eq!(a[2], 1.0);

        let e = simulate_echo_decay(103e-6, 2.0, &[0.0, 51.5e-6]).unwrap();
        assert_eq!(e.points()[0].amplitude, 2.0);
        assert_eq!(e.points()[1].delay_s, 103e-6);
        assert_relative_eq!(e.points()[1].amplitude, 2.0 / std::f64::consts::E, max_relative = 1e-15);
        assert!(simulate_echo_decay(0.0, 1.0, &[1.0]).is_err());
    }

    #[test]
    fn curve_validation() {
        let p = |d| DecayPoint { delay_s: d, amplitude: 1.0, sigma: None };
        assert!(DecayCurve::new(DecayKind::EchoDecay, vec![p(0.0), p(0.0)]).is_err());
        assert!(DecayCurve::new(DecayKind::EchoDecay, vec![p(-1.0)]).is_err());
        let c = DecayCurve::echo_from_pulse_spacing(vec![p(1.0), p(2.0)]).unwrap();
        assert_eq!(c.points()[1].delay_s, 4.0);
    }

    #[test]
    fn noiseless_round_trips() {
        for t1 in [1e-6, 1e-3, 18.0, 100.0] {
            let c = simulate_inversion_recovery(t1, 1.0, -1.0, &linspace(0.0, 5.0 * t1, 40)).unwrap();
            let f = fit_decay(&c, &Default::default()).unwrap();
            assert_relative_eq!(f.time_constant_s, t1, max_relative = 1e-9);
            assert_relative_eq!(f.value("m_init").unwrap(), -1.0, max_relative = 1e-9);
        }
        for t2 in [1e-6, 2.0e-6, 103e-6, 1e-2] {
            let c = simulate_echo_decay(t2, 3.0, &linspace(0.0, 2.0 * t2, 30)).unwrap();
            let f = fit_decay(&c, &Default::default()).unwrap();
            assert_relative_eq!(f.time_constant_s, t2, max_relative = 1e-9);
            assert_relative_eq!(f.value("s0").unwrap(), 3.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn log_spaced_grid_and_pinned_equilibrium() {
        let grid: Vec<f64> = (0..30).map(|i| 0.1 * 1.3f64.powi(i)).collect();
        let c = simulate_inversion_recovery(18.0, 0.7, -0.2, &grid).unwrap();
        let opts = DecayFitOptions { pinned_m_eq: Some(0.7), ..Default::default() };
        let f = fit_decay(&c, &opts).unwrap();
        assert_relative_eq!(f.time_constant_s, 18.0, max_relative = 1e-9);
        assert_eq!(f.names, ["t1", "m_init"]);
        let wrong = DecayFitOptions { pinned_m_eq: Some(1.0), ..Default::default() };
        let g = fit_decay(&c, &wrong).unwrap();
        assert!((g.time_constant_s - 18.0).abs() > 0.1);
    }

    #[test]
    fn amplitude_rescaling_invariance() {
        let c = add_gaussian_noise(
            &simulate_inversion_recovery(18.0, 1.0, -1.0, &linspace(0.0, 90.0, 40)).unwrap(),
            0.02,
            7,
        )
        .unwrap();
        let a = fit_decay(&c, &Default::default()).unwrap();
        for s in [1e-6, -3.0, 1e4] {
            let b = fit_decay(&c.scaled(s), &Default::default()).unwrap();
            assert_relative_eq!(b.time_constant_s, a.time_constant_s, max_relative = 1e-8);
            assert_relative_eq!(b.time_constant_sigma_s(), a.time_constant_sigma_s(), max_relative = 1e-6);
        }
    }

    #[test]
    fn noise_is_seeded() {
        let c = simulate_echo_decay(2e-6, 1.0, &linspace(0.0, 4e-6, 20)).unwrap();
        let a = add_gaussian_noise(&c, 0.01, 42).unwrap();
        let b = add_gaussian_noise(&c, 0.01, 42).unwrap();
        let d = add_gaussian_noise(&c, 0.01, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
        assert_eq!(a.noise_seed(), Some(42));
        assert_eq!(a.points()[0].sigma, Some(0.01));
    }

    #[test]
    fn degenerate_and_negative() {
        let flat = DecayCurve::new(
            DecayKind::EchoDecay,
            (0..8).map(|i| DecayPoint { delay_s: i as f64, amplitude: 2.0, sigma: None }).collect(),
        )
        .unwrap();
        assert_eq!(fit_decay(&flat, &Default::default()).unwrap_err(), Error::DegenerateDecay);

        let growing = DecayCurve::new(
            DecayKind::EchoDecay,
            (0..8)
                .map(|i| DecayPoint { delay_s: i as f64, amplitude: (i as f64 / 5.0).exp(), sigma: None })
                .collect(),
        )
        .unwrap();
        match fit_decay(&growing, &Default::default()) {
            Err(Error::NegativeTimeConstant(t)) => assert_relative_eq!(t, -5.0, max_relative = 1e-6),
            other => panic!("expected negative time constant, got {other:?}"),
        }

        let short = simulate_echo_decay(1.0, 1.0, &[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(fit_decay(&short, &Default::default()), Err(Error::Precondition(_))));
    }

    #[test]
    fn stretch_is_opt_in() {
        let xs = linspace(0.0, 3.0, 40);
        let pts = xs
            .iter()
            .map(|&x| DecayPoint { delay_s: x, amplitude: (-(x / 1.2f64).powf(1.6)).exp(), sigma: None })
            .collect();
        let c = DecayCurve::new(DecayKind::EchoDecay, pts).unwrap();
        let plain = fit_decay(&c, &Default::default()).unwrap();
        assert!(plain.stretch().is_none());
        assert!(plain.chi_square > 1e-6);
        let f = fit_decay(&c, &DecayFitOptions { stretch: true, ..Default::default() }).unwrap();
        assert_relative_eq!(f.stretch().unwrap(), 1.6, max_relative = 1e-8);
        assert_relative_eq!(f.time_constant_s, 1.2, max_relative = 1e-8);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let c = add_gaussian_noise(&simulate_echo_decay(1.0, 1.0, &linspace(0.0, 2.0, 30)).unwrap(), 0.05, 1).unwrap();
        let opts = DecayFitOptions { max_iterations: 1, ..Default::default() };
        assert!(matches!(fit_decay(&c, &opts), Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn t2_limit_gate() {
        assert!(within_t2_limit(2.0e-6, 0.1e-6, 5.0e-6, 0.2e-6));
        assert!(within_t2_limit(10.5e-6, 0.4e-6, 5.0e-6, 0.2e-6));
        assert!(!within_t2_limit(12.0e-6, 0.1e-6, 5.0e-6, 0.2e-6));
    }
}
