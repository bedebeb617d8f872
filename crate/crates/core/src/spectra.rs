//! CW EPR first-derivative spectra and peak-to-peak linewidths.

use nalgebra::Vector3;

use crate::error::{invalid, Error, Result};
use crate::populations::{Condition, LevelPopulations};
use crate::spin::{self, FieldConfig, SpinSystem, Sublevel, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LineshapeKind {
    #[default]
    Lorentzian,
    Gaussian,
}

impl LineshapeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LineshapeKind::Lorentzian => "lorentzian",
            LineshapeKind::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lorentzian" => Some(LineshapeKind::Lorentzian),
            "gaussian" => Some(LineshapeKind::Gaussian),
            _ => None,
        }
    }
}

/// Unit-area absorption profile parametrized by the peak-to-peak width of
/// its derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lineshape {
    kind: LineshapeKind,
    width_pp_mt: f64,
}

impl Lineshape {
    pub fn new(kind: LineshapeKind, width_pp_mt: f64) -> Result<Self> {
        if !(width_pp_mt.is_finite() && width_pp_mt > 0.0) {
            return Err(invalid("width_pp", "must be positive"));
        }
        Ok(Self { kind, width_pp_mt })
    }

    pub fn lorentzian(width_pp_mt: f64) -> Result<Self> {
        Self::new(LineshapeKind::Lorentzian, width_pp_mt)
    }

    pub fn gaussian(width_pp_mt: f64) -> Result<Self> {
        Self::new(LineshapeKind::Gaussian, width_pp_mt)
    }

    pub fn kind(&self) -> LineshapeKind {
        self.kind
    }

    pub fn width_pp_mt(&self) -> f64 {
        self.width_pp_mt
    }

    pub fn absorption(&self, x: f64) -> f64 {
        match self.kind {
            LineshapeKind::Lorentzian => {
                let g = 0.5 * 3f64.sqrt() * self.width_pp_mt;
                g / (std::f64::consts::PI * (g * g + x * x))
            }
            LineshapeKind::Gaussian => {
                let s = 0.5 * self.width_pp_mt;
                (-0.5 * (x / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
            }
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self.kind {
            LineshapeKind::Lorentzian => {
                let g = 0.5 * 3f64.sqrt() * self.width_pp_mt;
                let q = g * g + x * x;
                -2.0 * g * x / (std::f64::consts::PI * q * q)
            }
            LineshapeKind::Gaussian => {
                let s = 0.5 * self.width_pp_mt;
                -x / (s * s) * self.absorption(x)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralLine {
    pub field_mt: f64,
    pub transition: Transition,
    /// Lower-minus-upper population of the transition at its field.
    pub population_difference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub fields_mt: Vec<f64>,
    pub signal: Vec<f64>,
    pub temperature_k: f64,
    pub frequency_mhz: f64,
    pub condition: Option<Condition>,
    pub lines: Vec<SpectralLine>,
    /// Set when no resonance falls inside the field grid.
    pub warning: Option<String>,
}

impl Spectrum {
    pub fn new(fields_mt: Vec<f64>, signal: Vec<f64>) -> Result<Self> {
        check_grid(&fields_mt)?;
        if signal.len() != fields_mt.len() {
            return Err(invalid("signal", "length must match the field grid"));
        }
        if signal.iter().any(|s| !s.is_finite()) {
            return Err(invalid("signal", "must be finite"));
        }
        Ok(Self {
            fields_mt,
            signal,
            temperature_k: f64::NAN,
            frequency_mhz: f64::NAN,
            condition: None,
            lines: Vec::new(),
            warning: None,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(invalid("field_grid", "needs at least two points"));
    }
    if grid.iter().any(|b| !b.is_finite()) {
        return Err(invalid("field_grid", "must be finite"));
    }
    if let Some(i) = grid.windows(2).position(|w| w[1] <= w[0]) {
        return Err(invalid("field_grid", format!("point {}: fields must be strictly increasing", i + 2)));
    }
    Ok(())
}

pub fn uniform_grid(lo_mt: f64, hi_mt: f64, step_mt: f64) -> Result<Vec<f64>> {
    if !(step_mt > 0.0 && hi_mt > lo_mt) {
        return Err(invalid("field_grid", "need lo < hi and a positive step"));
    }
    let n = ((hi_mt - lo_mt) / step_mt).round() as usize;
    Ok((0..=n).map(|i| lo_mt + i as f64 * step_mt).collect())
}

/// Sum of `eta * dA/dB` over the resonances inside the grid, where `A` is the
/// unit-area absorption and `eta` the lower-minus-upper population at each
/// resonance. Positive `eta` gives the absorptive phase.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_cw_spectrum(
    sys: &SpinSystem,
    populations: &LevelPopulations,
    shape: &Lineshape,
    microwave_mhz: f64,
    direction: &Vector3<f64>,
    field_grid: &[f64],
    t: f64,
) -> Result<Spectrum> {
    synthesize_from_weights(sys, populations.as_array(), shape, microwave_mhz, direction, field_grid, t)
}

/// As [`synthesize_cw_spectrum`] with unnormalized sublevel weights
/// `(+1, 0, -1)`; the result is linear in the weights.
pub fn synthesize_from_weights(
    sys: &SpinSystem,
    weights: [f64; 3],
    shape: &Lineshape,
    microwave_mhz: f64,
    direction: &Vector3<f64>,
    field_grid: &[f64],
    t: f64,
) -> Result<Spectrum> {
    check_grid(field_grid)?;
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(invalid("populations", "must be finite"));
    }
    let (lo, hi) = (field_grid[0], field_grid[field_grid.len() - 1]);
    let mut lines = Vec::new();
    for res in spin::resonance_fields(sys, microwave_mhz, direction, t)? {
        if res.field_mt < lo || res.field_mt > hi {
            continue;
        }
        let field = FieldConfig::new(res.field_mt, *direction)?;
        let levels = spin::labeled_levels(sys, &field, t)?;
        for &tr in &res.transitions {
            let other = match tr {
                Transition::ZeroPlus1 => Sublevel::Plus1,
                Transition::ZeroMinus1 => Sublevel::Minus1,
            };
            let (p0, po) = (weights[Sublevel::Zero.index()], weights[other.index()]);
            let eta = if levels.energy(Sublevel::Zero) < levels.energy(other) {
                p0 - po
            } else {
                po - p0
            };
            lines.push(SpectralLine {
                field_mt: res.field_mt,
                transition: tr,
                population_difference: eta,
            });
        }
    }
    let signal = field_grid
        .iter()
        .map(|&b| {
            lines
                .iter()
                .map(|l| l.population_difference * shape.derivative(b - l.field_mt))
                .sum()
        })
        .collect();
    let warning = lines
        .is_empty()
        .then(|| format!("no resonance between {lo} and {hi} mT at {microwave_mhz} MHz"));
    Ok(Spectrum {
        fields_mt: field_grid.to_vec(),
        signal,
        temperature_k: t,
        frequency_mhz: microwave_mhz,
        condition: None,
        lines,
        warning,
    })
}

/// Double integral of a derivative spectrum: trapezoidal first integral,
/// a straight baseline through its two end values removed, then a
/// trapezoidal second integral.
pub fn double_integral(fields_mt: &[f64], signal: &[f64]) -> f64 {
    let n = fields_mt.len().min(signal.len());
    if n < 2 {
        return 0.0;
    }
    let mut first = vec![0.0; n];
    for i in 1..n {
        first[i] = first[i - 1] + 0.5 * (fields_mt[i] - fields_mt[i - 1]) * (signal[i] + signal[i - 1]);
    }
    let (b0, span) = (fields_mt[0], fields_mt[n - 1] - fields_mt[0]);
    let slope = first[n - 1] / span;
    let corrected: Vec<f64> = (0..n).map(|i| first[i] - slope * (fields_mt[i] - b0)).collect();
    (1..n)
        .map(|i| 0.5 * (fields_mt[i] - fields_mt[i - 1]) * (corrected[i] + corrected[i - 1]))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinewidthOptions {
    /// Subtract the straight line through the window's end segments first.
    pub detrend: bool,
}

// Feature must exceed this many noise standard deviations.
const FEATURE_SNR: f64 = 10.0;

/// Separation between the derivative maximum and minimum inside the window,
/// each refined by a three-point quadratic.
pub fn peak_to_peak_linewidth(
    spectrum: &Spectrum,
    window_mt: (f64, f64),
    options: &LinewidthOptions,
) -> Result<f64> {
    let (lo, hi) = window_mt;
    if !(lo < hi) {
        return Err(invalid("window", "need lo < hi"));
    }
    let (xs, mut ys): (Vec<f64>, Vec<f64>) = spectrum
        .fields_mt
        .iter()
        .zip(&spectrum.signal)
        .filter(|(b, _)| **b >= lo && **b <= hi)
        .map(|(b, s)| (*b, *s))
        .unzip();
    let n = xs.len();
    if n < 7 {
        return Err(Error::Precondition(format!("window holds {n} points, need at least 7")));
    }
    if options.detrend {
        let k = (n / 20).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let (x0, y0) = (mean(&xs[..k]), mean(&ys[..k]));
        let (x1, y1) = (mean(&xs[n - k..]), mean(&ys[n - k..]));
        let slope = (y1 - y0) / (x1 - x0);
        for (y, x) in ys.iter_mut().zip(&xs) {
            *y -= y0 + slope * (x - x0);
        }
    }

    let sigma = noise_sigma(&ys);
    let amp = ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if !(amp > FEATURE_SNR * sigma) || amp == 0.0 {
        return Err(Error::NoFeature);
    }

    let lobes = find_lobes(&ys, (0.25 * amp).max(5.0 * sigma));
    match lobes.len() {
        0 | 1 => return Err(Error::NoFeature),
        2 if lobes[0].sign != lobes[1].sign => {}
        k => return Err(Error::MultipleFeatures((k / 2).max(2))),
    }
    let refine = |i: usize| -> f64 {
        if i == 0 || i + 1 >= n {
            return xs[i];
        }
        parabola_vertex([xs[i - 1], xs[i], xs[i + 1]], [ys[i - 1], ys[i], ys[i + 1]])
    };
    Ok((refine(lobes[0].extremum) - refine(lobes[1].extremum)).abs())
}

struct Lobe {
    sign: bool,
    extremum: usize,
}

// Runs above `threshold` in |y|, closed when |y| falls below half of it or
// the sign flips.
fn find_lobes(ys: &[f64], threshold: f64) -> Vec<Lobe> {
    let mut lobes: Vec<Lobe> = Vec::new();
    let mut open: Option<Lobe> = None;
    for (i, &y) in ys.iter().enumerate() {
        if let Some(lobe) = open.as_mut() {
            let same = (y > 0.0) == lobe.sign;
            if same && y.abs() >= 0.5 * threshold {
                if y.abs() > ys[lobe.extremum].abs() {
                    lobe.extremum = i;
                }
                continue;
            }
            lobes.push(open.take().expect("open lobe"));
        }
        if y.abs() >= threshold {
            open = Some(Lobe { sign: y > 0.0, extremum: i });
        }
    }
    lobes.extend(open);
    lobes
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// Robust noise level from the MAD of second differences, which are nearly
// blind to a smooth signal.
fn noise_sigma(ys: &[f64]) -> f64 {
    let d2: Vec<f64> = ys.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect();
    let m = median(d2.clone());
    let mad = median(d2.iter().map(|d| (d - m).abs()).collect());
    mad / (0.674_489_75 * 6f64.sqrt())
}

fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> f64 {
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let a = (d2 - d1) / (x[2] - x[0]);
    if a == 0.0 {
        return x[1];
    }
    let v = 0.5 * (x[0] + x[1]) - d1 / (2.0 * a);
    v.clamp(x[0], x[2])
}
