//! Ground-triplet population bookkeeping: Boltzmann populations, line
//! population differences, the saturation-free dark-intensity rescale, light
//! populations recovered from line intensities, and the polarization degree.
//!
//! Intensities are in arbitrary spectrometer units; only ratios matter. A
//! positive intensity is absorption, a negative one emission.

use crate::constants::H_OVER_K_B_K_PER_MHZ;
use crate::error::{check_temperature, invalid, Error, Result};
use crate::spin::Sublevel;

/// Allowed excursion outside [0, 1] for an individual population.
pub const POPULATION_TOLERANCE: f64 = 1e-9;

const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelPopulations {
    pub p_plus1: f64,
    pub p_zero: f64,
    pub p_minus1: f64,
}

impl LevelPopulations {
    pub fn new(p_plus1: f64, p_zero: f64, p_minus1: f64) -> Result<Self> {
        let p = Self {
            p_plus1,
            p_zero,
            p_minus1,
        };
        let arr = p.as_array();
        if arr
            .iter()
            .any(|x| !x.is_finite() || *x < -POPULATION_TOLERANCE || *x > 1.0 + POPULATION_TOLERANCE)
        {
            return Err(Error::InconsistentPopulations { populations: arr });
        }
        if (p.total() - 1.0).abs() > SUM_TOLERANCE {
            return Err(invalid(
                "populations",
                format!("must sum to 1, got {}", p.total()),
            ));
        }
        Ok(p)
    }

    /// Normalizes nonnegative weights to unit sum.
    pub fn from_weights(w_plus1: f64, w_zero: f64, w_minus1: f64) -> Result<Self> {
        let total = w_plus1 + w_zero + w_minus1;
        if !(total.is_finite() && total > 0.0) || w_plus1 < 0.0 || w_zero < 0.0 || w_minus1 < 0.0 {
            return Err(invalid("population weights", "must be nonnegative with positive sum"));
        }
        Self::new(w_plus1 / total, w_zero / total, w_minus1 / total)
    }

    pub fn uniform() -> Self {
        Self {
            p_plus1: 1.0 / 3.0,
            p_zero: 1.0 / 3.0,
            p_minus1: 1.0 / 3.0,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p_plus1, self.p_zero, self.p_minus1]
    }

    pub fn get(&self, s: Sublevel) -> f64 {
        self.as_array()[s.index()]
    }

    pub fn total(&self) -> f64 {
        self.p_plus1 + self.p_zero + self.p_minus1
    }
}

/// Population differences driving the two EPR lines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationDifferences {
    /// `p0 - p(+1)`, the low-field line.
    pub plus1_zero: f64,
    /// `p(-1) - p0`, the high-field line.
    pub zero_minus1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Dark,
    Light,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Dark => "dark",
            Condition::Light => "light",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionIntensities {
    /// Signed intensity of the `0 <-> +1` line.
    pub i_low: f64,
    /// Signed intensity of the `0 <-> -1` line.
    pub i_high: f64,
    pub condition: Condition,
    pub temperature_k: f64,
}

/// Boltzmann populations for level energies given as frequencies (MHz),
/// ordered `(+1, 0, -1)`.
pub fn thermal_populations(level_energies_mhz: [f64; 3], t: f64) -> Result<LevelPopulations> {
    check_temperature(t)?;
    if level_energies_mhz.iter().any(|e| !e.is_finite()) {
        return Err(invalid("level energies", "must be finite"));
    }
    let exponents = level_energies_mhz.map(|e| -e * H_OVER_K_B_K_PER_MHZ / t);
    let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w = exponents.map(|x| (x - max).exp());
    let z: f64 = w.iter().sum();
    Ok(LevelPopulations {
        p_plus1: w[0] / z,
        p_zero: w[1] / z,
        p_minus1: w[2] / z,
    })
}

pub fn population_differences(p: &LevelPopulations) -> PopulationDifferences {
    PopulationDifferences {
        plus1_zero: p.p_zero - p.p_plus1,
        zero_minus1: p.p_minus1 - p.p_zero,
    }
}

/// Dark intensity at temperature T extrapolated from a room-temperature
/// measurement: `I_T = I_RT * eta_T / eta_RT`.
pub fn unsaturated_dark_intensity(i_dark_rt: f64, eta_dark_t: f64, eta_dark_rt: f64) -> Result<f64> {
    if eta_dark_rt == 0.0 {
        return Err(Error::DivisionByZero("dark room-temperature population difference"));
    }
    Ok(i_dark_rt * eta_dark_t / eta_dark_rt)
}

/// Inverts the two line differences to populations, with `p(+1) + p0 + p(-1) = 1`.
pub fn populations_from_differences(d: &PopulationDifferences) -> [f64; 3] {
    let (a, b) = (d.plus1_zero, d.zero_minus1);
    [
        (1.0 - 2.0 * a - b) / 3.0,
        (1.0 + a - b) / 3.0,
        (1.0 + a + 2.0 * b) / 3.0,
    ]
}

fn checked_populations(raw: [f64; 3]) -> Result<LevelPopulations> {
    if raw
        .iter()
        .any(|x| !x.is_finite() || *x < -POPULATION_TOLERANCE || *x > 1.0 + POPULATION_TOLERANCE)
    {
        return Err(Error::InconsistentPopulations { populations: raw });
    }
    Ok(LevelPopulations {
        p_plus1: raw[0],
        p_zero: raw[1],
        p_minus1: raw[2],
    })
}

/// Light-condition population differences implied by the measured light
/// intensities and the room-temperature dark reference.
pub fn light_differences(
    i_light: &TransitionIntensities,
    i_dark_rt: &TransitionIntensities,
    eta_dark_rt: &PopulationDifferences,
) -> Result<PopulationDifferences> {
    if i_dark_rt.i_low == 0.0 || i_dark_rt.i_high == 0.0 {
        return Err(Error::DivisionByZero("dark reference intensity"));
    }
    Ok(PopulationDifferences {
        plus1_zero: eta_dark_rt.plus1_zero * i_light.i_low / i_dark_rt.i_low,
        zero_minus1: eta_dark_rt.zero_minus1 * i_light.i_high / i_dark_rt.i_high,
    })
}

/// Populations under illumination from the two line intensities.
///
/// Results more than [`POPULATION_TOLERANCE`] outside [0, 1] are rejected
/// rather than clamped.
pub fn populations_under_light(
    i_light: &TransitionIntensities,
    i_dark_rt: &TransitionIntensities,
    eta_dark_rt: &PopulationDifferences,
) -> Result<LevelPopulations> {
    let d = light_differences(i_light, i_dark_rt, eta_dark_rt)?;
    checked_populations(populations_from_differences(&d))
}

/// Forward model: the light intensities a given population set would produce
/// at temperature `t` against the dark reference.
pub fn light_intensities(
    p_light: &LevelPopulations,
    i_dark_rt: &TransitionIntensities,
    eta_dark_rt: &PopulationDifferences,
    t: f64,
) -> Result<TransitionIntensities> {
    if eta_dark_rt.plus1_zero == 0.0 || eta_dark_rt.zero_minus1 == 0.0 {
        return Err(Error::DivisionByZero("dark room-temperature population difference"));
    }
    let eta = population_differences(p_light);
    Ok(TransitionIntensities {
        i_low: i_dark_rt.i_low * eta.plus1_zero / eta_dark_rt.plus1_zero,
        i_high: i_dark_rt.i_high * eta.zero_minus1 / eta_dark_rt.zero_minus1,
        condition: Condition::Light,
        temperature_k: t,
    })
}

/// Degree of optical spin polarization in percent:
/// `100 * (p0_light - p0_dark) / (p(+1)_dark + p(-1)_dark)`.
///
/// The denominator is evaluated as `1 - p0_dark`, equal for normalized
/// populations, so a fully polarized light state gives exactly 100.
pub fn polarization_degree(p_light: &LevelPopulations, p_dark: &LevelPopulations) -> Result<f64> {
    let denom = 1.0 - p_dark.p_zero;
    if !(denom > 0.0) {
        return Err(Error::DegenerateDarkState);
    }
    Ok(100.0 * ((p_light.p_zero - p_dark.p_zero) / denom))
}

/// Estimates of `p0` under light from the line differences.
///
/// `both_lines` is the full three-level inversion. It coincides with the
/// least-squares estimate under the assumption `p(+1) = p(-1)`. The
/// single-line variants impose that same assumption on one line alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroPopulationEstimates {
    pub both_lines: f64,
    pub low_line: f64,
    pub high_line: f64,
}

pub fn zero_population_estimates(d: &PopulationDifferences) -> ZeroPopulationEstimates {
    ZeroPopulationEstimates {
        both_lines: populations_from_differences(d)[1],
        low_line: (1.0 + 2.0 * d.plus1_zero) / 3.0,
        high_line: (1.0 - 2.0 * d.zero_minus1) / 3.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{ROOM_TEMPERATURE_K, X_BAND_MHZ};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dark(i_low: f64, i_high: f64, t: f64) -> TransitionIntensities {
        TransitionIntensities {
            i_low,
            i_high,
            condition: Condition::Dark,
            temperature_k: t,
        }
    }

    #[test]
    fn infinite_temperature_is_uniform() {
        let p = thermal_populations([9750.0, 0.0, -3000.0], 1e9).unwrap();
        for x in p.as_array() {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-9);
        }
        let p = thermal_populations([5.0, 5.0, 5.0], 4.0).unwrap();
        assert_eq!(p.as_array(), [1.0 / 3.0; 3]);
        assert!(thermal_populations([0.0; 3], 0.0).is_err());
    }

    #[test]
    fn x_band_population_difference_at_room_temperature() {
        let p = thermal_populations([X_BAND_MHZ, 0.0, 0.0], ROOM_TEMPERATURE_K).unwrap();
        let eta = population_differences(&p).plus1_zero;
        // Oracle: exact two-exponential expression and its first-order limit.
        let a = X_BAND_MHZ * H_OVER_K_B_K_PER_MHZ / ROOM_TEMPERATURE_K;
        let exact = (1.0 - (-a).exp()) / (2.0 + (-a).exp());
        assert_abs_diff_eq!(eta, exact, epsilon = 1e-15);
        assert!((eta - a / 3.0).abs() / (a / 3.0) < 2.0 * a);
        assert!((eta - 5.3e-4).abs() < 0.1e-4);
    }

    #[test]
    fn difference_examples() {
        let d = population_differences(&LevelPopulations::uniform());
        assert_abs_diff_eq!(d.plus1_zero, 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(d.zero_minus1, 0.0, epsilon = 1e-16);
        let d = population_differences(&LevelPopulations::new(0.0, 1.0, 0.0).unwrap());
        assert_eq!((d.plus1_zero, d.zero_minus1), (1.0, -1.0));
    }

    #[test]
    fn thermal_high_field_pattern() {
        // Levels at a field between the lines: +1 highest, -1 lowest.
        let p = thermal_populations([9750.0, 0.0, -7750.0], ROOM_TEMPERATURE_K).unwrap();
        let d = population_differences(&p);
        assert!(d.plus1_zero > 0.0 && d.zero_minus1 > 0.0);
        assert!((d.plus1_zero - 5.3e-4).abs() < 0.1e-4);
    }

    #[test]
    fn dark_intensity_rescale() {
        assert_eq!(unsaturated_dark_intensity(1.0, 3e-4, 3e-4).unwrap(), 1.0);
        assert_eq!(unsaturated_dark_intensity(1.0, 6e-4, 3e-4).unwrap(), 2.0);
        assert!(matches!(
            unsaturated_dark_intensity(1.0, 1.0, 0.0),
            Err(Error::DivisionByZero(_))
        ));
        // 10 K against 292 K at a fixed 9750 MHz splitting.
        let eta = |t| {
            population_differences(&thermal_populations([X_BAND_MHZ, 0.0, 0.0], t).unwrap()).plus1_zero
        };
        let ratio = eta(10.0) / eta(ROOM_TEMPERATURE_K);
        let i = unsaturated_dark_intensity(0.8, eta(10.0), eta(ROOM_TEMPERATURE_K)).unwrap();
        assert_abs_diff_eq!(i, 0.8 * ratio, epsilon = 1e-12);
        assert!(ratio > 20.0 && ratio < 29.2);
    }

    #[test]
    fn no_pumping_recovers_thermal() {
        let energies = [9750.0, 0.0, -7750.0];
        let p_rt = thermal_populations(energies, ROOM_TEMPERATURE_K).unwrap();
        let p_t = thermal_populations(energies, 80.0).unwrap();
        let eta_rt = population_differences(&p_rt);
        let eta_t = population_differences(&p_t);
        let i_rt = dark(1.3, 0.9, ROOM_TEMPERATURE_K);
        let i_t = TransitionIntensities {
            i_low: unsaturated_dark_intensity(i_rt.i_low, eta_t.plus1_zero, eta_rt.plus1_zero).unwrap(),
            i_high: unsaturated_dark_intensity(i_rt.i_high, eta_t.zero_minus1, eta_rt.zero_minus1).unwrap(),
            condition: Condition::Light,
            temperature_k: 80.0,
        };
        let p = populations_under_light(&i_t, &i_rt, &eta_rt).unwrap();
        for (a, b) in p.as_array().iter().zip(p_t.as_array()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(polarization_degree(&p, &p_t).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn vanishing_differences_give_uniform() {
        let d = PopulationDifferences { plus1_zero: 0.0, zero_minus1: 0.0 };
        assert_eq!(populations_from_differences(&d), [1.0 / 3.0; 3]);
    }

    #[test]
    fn inconsistent_rows_are_flagged() {
        let i_rt = dark(1.0, 1.0, ROOM_TEMPERATURE_K);
        let eta = PopulationDifferences { plus1_zero: 5e-4, zero_minus1: 5e-4 };
        let light = TransitionIntensities { i_low: 5000.0, ..i_rt };
        assert!(matches!(
            populations_under_light(&light, &i_rt, &eta),
            Err(Error::InconsistentPopulations { .. })
        ));
        assert!(populations_under_light(&light, &dark(0.0, 1.0, 292.0), &eta).is_err());
    }

    #[test]
    fn polarization_degree_examples() {
        let dark = LevelPopulations::uniform();
        assert_eq!(polarization_degree(&dark, &dark).unwrap(), 0.0);
        let full = LevelPopulations::new(0.0, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(polarization_degree(&full, &dark).unwrap(), 100.0, epsilon = 1e-12);
        let light = LevelPopulations::new(0.3, 0.4, 0.3).unwrap();
        assert_abs_diff_eq!(polarization_degree(&light, &dark).unwrap(), 10.0, epsilon = 1e-12);
        assert!(matches!(
            polarization_degree(&light, &full),
            Err(Error::DegenerateDarkState)
        ));
    }

    #[test]
    fn enhanced_zero_population_sign_pattern() {
        let energies = [9750.0, 0.0, -7750.0];
        let p_rt = thermal_populations(energies, ROOM_TEMPERATURE_K).unwrap();
        let eta_rt = population_differences(&p_rt);
        let i_rt = dark(1.0, 1.0, ROOM_TEMPERATURE_K);
        let pumped = LevelPopulations::new(0.3, 0.4, 0.3).unwrap();
        let i = light_intensities(&pumped, &i_rt, &eta_rt, 10.0).unwrap();
        assert!(i.i_low > i_rt.i_low);
        assert!(i.i_high < 0.0);
    }

    #[test]
    fn single_line_estimates_agree_for_symmetric_pumping() {
        let p = LevelPopulations::new(0.25, 0.5, 0.25).unwrap();
        let est = zero_population_estimates(&population_differences(&p));
        assert_abs_diff_eq!(est.both_lines, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(est.low_line, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(est.high_line, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn constructor_validation() {
        assert!(LevelPopulations::new(0.5, 0.5, 0.1).is_err());
        assert!(LevelPopulations::new(-0.1, 0.6, 0.5).is_err());
        assert!(LevelPopulations::from_weights(1.0, 2.0, 1.0).unwrap().p_zero == 0.5);
    }

    fn populations() -> impl Strategy<Value = LevelPopulations> {
        (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0)
            .prop_filter("nonzero", |(a, b, c)| a + b + c > 1e-6)
            .prop_map(|(a, b, c)| LevelPopulations::from_weights(a, b, c).unwrap())
    }

    proptest! {
        #[test]
        fn light_round_trip(
            p in populations(),
            i_low in 0.1f64..10.0,
            i_high in 0.1f64..10.0,
            e_plus in 8000.0f64..12000.0,
            e_minus in -9000.0f64..-6000.0,
        ) {
            let p_rt = thermal_populations([e_plus, 0.0, e_minus], ROOM_TEMPERATURE_K).unwrap();
            let eta_rt = population_differences(&p_rt);
            let i_rt = dark(i_low, i_high, ROOM_TEMPERATURE_K);
            let i = light_intensities(&p, &i_rt, &eta_rt, 10.0).unwrap();
            let back = populations_under_light(&i, &i_rt, &eta_rt).unwrap();
            for (a, b) in back.as_array().iter().zip(p.as_array()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn polarization_scale_invariant(p in populations(), scale in 1e-3f64..1e3) {
            let p_rt = thermal_populations([9750.0, 0.0, -7750.0], ROOM_TEMPERATURE_K).unwrap();
            let p_t = thermal_populations([9750.0, 0.0, -7750.0], 10.0).unwrap();
            let eta_rt = population_differences(&p_rt);
            let i_rt = dark(1.0, 0.7, ROOM_TEMPERATURE_K);
            let i = light_intensities(&p, &i_rt, &eta_rt, 10.0).unwrap();
            let scaled_rt = dark(i_rt.i_low * scale, i_rt.i_high * scale, ROOM_TEMPERATURE_K);
            let scaled = TransitionIntensities { i_low: i.i_low * scale, i_high: i.i_high * scale, ..i };
            let a = polarization_degree(&populations_under_light(&i, &i_rt, &eta_rt).unwrap(), &p_t).unwrap();
            let b = polarization_degree(&populations_under_light(&scaled, &scaled_rt, &eta_rt).unwrap(), &p_t).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }

        #[test]
        fn thermal_shift_invariant(
            e in prop::array::uniform3(-20000.0f64..20000.0),
            shift in -1e5f64..1e5,
            t in 0.5f64..1000.0,
        ) {
            let a = thermal_populations(e, t).unwrap();
            let b = thermal_populations(e.map(|x| x + shift), t).unwrap();
            for (x, y) in a.as_array().iter().zip(b.as_array()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
