//! Run configuration: flat `key = value` lines grouped under `[section]`
//! headers, `#` comments. Every key is checked against a fixed schema so a
//! typo fails loudly with its file and line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::error::CliError;

const SCHEMA: &[(&str, &[&str])] = &[
    ("system", &["zfs_model", "d_mhz", "g", "axis"]),
    (
        "experiment",
        &["frequency_mhz", "temperature_k", "field_direction", "reference_temperature_k", "field_mt"],
    ),
    ("resonance", &["frequencies_mhz", "temperatures_k", "orientation", "b_max_mt", "step_mt"]),
    (
        "fit-t1",
        &[
            "dataset",
            "a_const",
            "a_raman",
            "a_orbach",
            "delta_e_mev",
            "fixed",
            "linewidth_weight",
            "max_iterations",
            "curve_t_min_k",
            "curve_t_max_k",
            "curve_points",
        ],
    ),
    ("fit-decay", &["curve", "pinned_m_eq", "stretch", "max_iterations"]),
    ("polarization", &["intensities"]),
    (
        "pump-sweep",
        &[
            "scheme",
            "preset",
            "pump_min",
            "pump_max",
            "points_per_decade",
            "temperature_k",
            "spin_lattice",
            "below_zpl_pump",
        ],
    ),
    (
        "simulate",
        &[
            "kind",
            "t1_s",
            "m_eq",
            "m_init",
            "t2_s",
            "s0",
            "tau_max_s",
            "points",
            "noise",
            "populations",
            "linewidth_mt",
            "lineshape",
            "field_min_mt",
            "field_max_mt",
            "field_step_mt",
            "scheme",
            "preset",
            "pump",
            "t_max_s",
            "temperature_k",
            "temperature_min_k",
            "temperature_max_k",
            "dark_scale",
        ],
    ),
    ("linewidth", &["spectrum", "window_mt", "offset_mhz", "detrend"]),
];

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: String,
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    origin: Option<PathBuf>,
    entries: BTreeMap<(String, String), Entry>,
}

impl Config {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, Some(path))
    }

    pub fn parse(text: &str, origin: Option<&Path>) -> Result<Self, CliError> {
        let name = origin.map_or_else(|| "<config>".to_string(), |p| p.display().to_string());
        let mut section: Option<&'static (&'static str, &'static [&'static str])> = None;
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let title = rest
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::Parse(format!("{name}:{line}: unterminated section header")))?
                    .trim();
                section = Some(
                    SCHEMA
                        .iter()
                        .find(|(s, _)| *s == title)
                        .ok_or_else(|| CliError::Usage(format!("{name}:{line}: unknown section [{title}]")))?,
                );
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| CliError::Parse(format!("{name}:{line}: expected `key = value`")))?;
            let (key, value) = (key.trim(), value.trim());
            let (sec, keys) = section
                .ok_or_else(|| CliError::Usage(format!("{name}:{line}: key `{key}` outside any section")))?;
            if !keys.contains(&key) {
                return Err(CliError::Usage(format!("{name}:{line}: unknown key `{key}` in [{sec}]")));
            }
            let slot = (sec.to_string(), key.to_string());
            if let Some(prev) = entries.get(&slot) {
                let prev: &Entry = prev;
                return Err(CliError::Usage(format!(
                    "{name}:{line}: duplicate key `{key}` in [{sec}] (first set on line {})",
                    prev.line
                )));
            }
            entries.insert(
                slot,
                Entry {
                    line,
                    value: value.to_string(),
                },
            );
        }
        Ok(Self {
            origin: origin.map(Path::to_path_buf),
            entries,
        })
    }

    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        debug_assert!(
            SCHEMA.iter().any(|(s, ks)| *s == section && ks.contains(&key)),
            "unregistered key {section}.{key}"
        );
        self.entries.get(&(section.to_string(), key.to_string()))
    }

    fn location(&self, e: &Entry) -> String {
        let name = self
            .origin
            .as_ref()
            .map_or_else(|| "<config>".to_string(), |p| p.display().to_string());
        format!("{name}:{}", e.line)
    }

    fn bad(&self, e: &Entry, key: &str, why: &str) -> CliError {
        CliError::Usage(format!("{}: `{key}` = `{}`: {why}", self.location(e), e.value))
    }

    pub fn str(&self, section: &str, key: &str) -> Option<&str> {
        self.entry(section, key).map(|e| e.value.as_str())
    }

    /// All set entries, for the run report.
    pub fn values(&self) -> impl Iterator<Item = (String, &str)> {
        self.entries.iter().map(|((s, k), e)| (format!("{s}.{k}"), e.value.as_str()))
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<Option<f64>, CliError> {
        let Some(e) = self.entry(section, key) else { return Ok(None) };
        match e.value.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(self.bad(e, key, "expected a finite number")),
        }
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64, CliError> {
        Ok(self.f64(section, key)?.unwrap_or(default))
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize, CliError> {
        let Some(e) = self.entry(section, key) else { return Ok(default) };
        e.value
            .parse()
            .map_err(|_| self.bad(e, key, "expected a nonnegative integer"))
    }

    pub fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool, CliError> {
        let Some(e) = self.entry(section, key) else { return Ok(default) };
        match e.value.as_str() {
            "true" | "yes" | "on" | "1" => Ok(true),
            "false" | "no" | "off" | "0" => Ok(false),
            _ => Err(self.bad(e, key, "expected true or false")),
        }
    }

    pub fn list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        let Some(e) = self.entry(section, key) else { return Ok(None) };
        e.value
            .split(',')
            .map(|s| match s.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(self.bad(e, key, "expected a comma-separated list of numbers")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    pub fn vector(&self, section: &str, key: &str) -> Result<Option<Vector3<f64>>, CliError> {
        let Some(e) = self.entry(section, key) else { return Ok(None) };
        match self.list(section, key)?.as_deref() {
            Some([x, y, z]) => Ok(Some(Vector3::new(*x, *y, *z))),
            _ => Err(self.bad(e, key, "expected three comma-separated components")),
        }
    }

    pub fn words(&self, section: &str, key: &str) -> Vec<String> {
        self.str(section, key)
            .map(|v| v.split(',').map(|w| w.trim().to_string()).filter(|w| !w.is_empty()).collect())
            .unwrap_or_default()
    }

    /// Path value, resolved against the config file's directory.
    pub fn path(&self, section: &str, key: &str) -> Option<PathBuf> {
        let e = self.entry(section, key)?;
        let p = PathBuf::from(&e.value);
        Some(match (&self.origin, p.is_relative()) {
            (Some(origin), true) => origin.parent().map_or(p.clone(), |d| d.join(&p)),
            _ => p,
        })
    }

    /// Location of a key, for error messages about its value's meaning.
    pub fn describe(&self, section: &str, key: &str) -> String {
        self.entry(section, key)
            .map_or_else(|| format!("[{section}] {key}"), |e| format!("{} ([{section}] {key})", self.location(e)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_types() {
        let c = Config::parse(
            "# run\n[system]\nd_mhz = 1000\naxis = 0, 0, 1\n\n[resonance]\nfrequencies_mhz = 9500, 9750 # two\n[linewidth]\ndetrend = yes\n",
            None,
        )
        .unwrap();
        assert_eq!(c.f64("system", "d_mhz").unwrap(), Some(1000.0));
        assert_eq!(c.vector("system", "axis").unwrap(), Some(Vector3::z()));
        assert_eq!(c.list("resonance", "frequencies_mhz").unwrap(), Some(vec![9500.0, 9750.0]));
        assert!(c.bool_or("linewidth", "detrend", false).unwrap());
        assert_eq!(c.f64("system", "g").unwrap(), None);
    }

    #[test]
    fn rejects_unknown_keys_with_location() {
        let e = Config::parse("[system]\nd_mhx = 1\n", Some(Path::new("run.ini"))).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("run.ini:2"), "{e}");
        assert!(Config::parse("[nope]\n", None).is_err());
        assert!(Config::parse("d_mhz = 1\n", None).is_err());
        assert!(matches!(Config::parse("[system]\njunk\n", None), Err(CliError::Parse(_))));
        assert!(Config::parse("[system]\ng = 2\ng = 3\n", None).is_err());
    }

    #[test]
    fn bad_values_name_the_line() {
        let c = Config::parse("[system]\n\ng = two\n", Some(Path::new("a.ini"))).unwrap();
        let e = c.f64("system", "g").unwrap_err();
        assert!(e.to_string().contains("a.ini:3"), "{e}");
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let c = Config::parse("[fit-t1]\ndataset = t1.csv\n", Some(Path::new("/data/run/cfg.ini"))).unwrap();
        assert_eq!(c.path("fit-t1", "dataset").unwrap(), PathBuf::from("/data/run/t1.csv"));
    }
}
