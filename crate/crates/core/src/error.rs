use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("temperature must be positive and finite, got {0} K")]
    NonPositiveTemperature(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error(
        "inconsistent input: implied populations ({:.6e}, {:.6e}, {:.6e}) fall outside [0, 1]",
        populations[0], populations[1], populations[2]
    )]
    InconsistentPopulations { populations: [f64; 3] },

    #[error("degenerate dark state: p(+1) + p(-1) is zero")]
    DegenerateDarkState,

    #[error("negative rate {value} s^-1 on edge {from} -> {to}")]
    NegativeRate { from: String, to: String, value: f64 },

    #[error("steady state is not unique: {} closed components {:?}", components.len(), components)]
    DegenerateNullspace { components: Vec<Vec<String>> },

    #[error("integration failed; largest stable step estimate {max_stable_step:.3e} s")]
    Integration { max_stable_step: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("unidentifiable parameter combination: {}", format_combination(combination))]
    Unidentifiable { combination: Vec<(String, f64)> },

    #[error("fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("degenerate decay: curve has no measurable amplitude change")]
    DegenerateDecay,

    #[error("fitted time constant is negative ({0:.6e} s)")]
    NegativeTimeConstant(f64),

    #[error("linewidth below calibration floor: {converted_mhz} MHz does not exceed offset {offset_mhz} MHz")]
    BelowCalibrationFloor { converted_mhz: f64, offset_mhz: f64 },

    #[error("no derivative feature found in window")]
    NoFeature,

    #[error("window contains {0} derivative features, expected exactly one")]
    MultipleFeatures(usize),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn format_combination(combination: &[(String, f64)]) -> String {
    combination
        .iter()
        .map(|(name, w)| format!("{w:+.3}*{name}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub(crate) fn check_temperature(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveTemperature(t))
    }
}

pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}
