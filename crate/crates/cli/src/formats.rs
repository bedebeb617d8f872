//! CSV dialect shared by every command: comma-separated, `.` decimals, `#`
//! comment lines (some carrying `# key: value` metadata), UTF-8, and a fixed
//! header per table kind.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use spinpol_core::populations::{Condition, TransitionIntensities};
use spinpol_core::relaxation::{T1Dataset, T1Point, T1Source};
use spinpol_core::sequences::{DecayCurve, DecayKind, DecayPoint};
use spinpol_core::spectra::Spectrum;
use spinpol_core::{Error, Result};

pub const DECAY_HEADER: &str = "delay_s,amplitude,sigma";
pub const SPECTRUM_HEADER: &str = "field_mT,signal";
pub const T1_HEADER: &str = "temperature_K,t1_s,sigma_s,source";
pub const INTENSITY_HEADER: &str = "condition,temperature_K,i_low_au,i_high_au";

/// Shortest round-trip representation; exponent form outside a readable range.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

struct Table {
    meta: BTreeMap<String, (usize, String)>,
    rows: Vec<(usize, Vec<String>)>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn read_table(text: &str, header: &str) -> Result<Table> {
    let mut meta = BTreeMap::new();
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(c) = line.strip_prefix('#') {
            if let Some((k, v)) = c.split_once(':') {
                meta.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
            }
            continue;
        }
        if !line.is_empty() {
            header_line = Some((i + 1, line.to_string()));
            break;
        }
    }
    let (hline, found) = header_line.ok_or_else(|| parse_err(1, format!("empty file; expected header `{header}`")))?;
    let normalized: String = found.split(',').map(str::trim).collect::<Vec<_>>().join(",");
    if normalized != header {
        return Err(parse_err(hline, format!("expected header `{header}`, found `{found}`")));
    }

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != width {
            return Err(parse_err(line, format!("expected {width} fields, found {}", rec.len())));
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table { meta, rows })
}

fn field(line: usize, name: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| parse_err(line, format!("`{name}`: `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("`{name}`: must be finite")));
    }
    Ok(v)
}

fn optional(line: usize, name: &str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        field(line, name, s).map(Some)
    }
}

// Attaches a row number to validation errors raised after parsing.
fn at_line(lines: &[usize], e: Error) -> Error {
    match e {
        Error::InvalidParameter { ref reason, .. } => {
            let row = reason
                .strip_prefix("row ")
                .and_then(|r| r.split(':').next())
                .and_then(|r| r.parse::<usize>().ok());
            match row.and_then(|r| lines.get(r - 1)) {
                Some(&l) => parse_err(l, e.to_string()),
                None => e,
            }
        }
        other => other,
    }
}

/// Echo abscissa convention recorded in decay CSV metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EchoAbscissa {
    TotalEvolution,
    PulseSpacing,
}

impl EchoAbscissa {
    pub fn as_str(self) -> &'static str {
        match self {
            EchoAbscissa::TotalEvolution => "2tau",
            EchoAbscissa::PulseSpacing => "tau",
        }
    }
}

pub struct DecayFile {
    pub curve: DecayCurve,
    /// Convention the file used; the curve itself is always against `2 tau`.
    pub abscissa: Option<EchoAbscissa>,
}

pub fn read_decay_csv(text: &str) -> Result<DecayFile> {
    let table = read_table(text, DECAY_HEADER)?;
    let (kline, kind) = table
        .meta
        .get("kind")
        .ok_or_else(|| parse_err(1, "missing `# kind:` header"))?;
    let kind = DecayKind::parse(kind).ok_or_else(|| parse_err(*kline, format!("unknown kind `{kind}`")))?;
    let abscissa = match table.meta.get("abscissa") {
        None => None,
        Some((_, v)) if v == "2tau" => Some(EchoAbscissa::TotalEvolution),
        Some((_, v)) if v == "tau" => Some(EchoAbscissa::PulseSpacing),
        Some((l, v)) => return Err(parse_err(*l, format!("abscissa must be `tau` or `2tau`, found `{v}`"))),
    };
    if kind == DecayKind::InversionRecovery && abscissa == Some(EchoAbscissa::PulseSpacing) {
        return Err(parse_err(table.meta["abscissa"].0, "abscissa applies to echo-decay curves only"));
    }
    let lines: Vec<usize> = table.rows.iter().map(|r| r.0).collect();
    let points = table
        .rows
        .iter()
        .map(|(l, r)| {
            Ok(DecayPoint {
                delay_s: field(*l, "delay_s", &r[0])?,
                amplitude: field(*l, "amplitude", &r[1])?,
                sigma: optional(*l, "sigma", &r[2])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let curve = if abscissa == Some(EchoAbscissa::PulseSpacing) {
        DecayCurve::echo_from_pulse_spacing(points)
    } else {
        DecayCurve::new(kind, points)
    }
    .map_err(|e| at_line(&lines, e))?;
    let abscissa = match kind {
        DecayKind::EchoDecay => Some(abscissa.unwrap_or(EchoAbscissa::TotalEvolution)),
        DecayKind::InversionRecovery => None,
    };
    Ok(DecayFile { curve, abscissa })
}

pub fn write_decay_csv(curve: &DecayCurve) -> String {
    let mut out = format!("# kind: {}\n", curve.kind().as_str());
    if curve.kind() == DecayKind::EchoDecay {
        out.push_str("# abscissa: 2tau\n");
    }
    if let Some(seed) = curve.noise_seed() {
        let _ = writeln!(out, "# noise_seed: {seed}");
    }
    out.push_str(DECAY_HEADER);
    out.push('\n');
    for p in curve.points() {
        let _ = writeln!(
            out,
            "{},{},{}",
            num(p.delay_s),
            num(p.amplitude),
            p.sigma.map(num).unwrap_or_default()
        );
    }
    out
}

pub fn read_spectrum_csv(text: &str) -> Result<Spectrum> {
    let table = read_table(text, SPECTRUM_HEADER)?;
    let mut fields = Vec::with_capacity(table.rows.len());
    let mut signal = Vec::with_capacity(table.rows.len());
    for (l, r) in &table.rows {
        let b = field(*l, "field_mT", &r[0])?;
        if let Some(&prev) = fields.last() {
            if b <= prev {
                return Err(parse_err(*l, "fields must be strictly increasing"));
            }
        }
        fields.push(b);
        signal.push(field(*l, "signal", &r[1])?);
    }
    if fields.len() < 2 {
        return Err(parse_err(table.rows.first().map_or(1, |r| r.0), "spectrum needs at least two rows"));
    }
    let mut s = Spectrum::new(fields, signal)?;
    let meta_num = |key: &str| -> Result<f64> {
        match table.meta.get(key) {
            Some((l, v)) => field(*l, key, v),
            None => Ok(f64::NAN),
        }
    };
    s.temperature_k = meta_num("temperature_K")?;
    s.frequency_mhz = meta_num("frequency_MHz")?;
    s.condition = match table.meta.get("condition").map(|(l, v)| (l, v.as_str())) {
        None => None,
        Some((_, "dark")) => Some(Condition::Dark),
        Some((_, "light")) => Some(Condition::Light),
        Some((_, "synthetic")) => None,
        Some((l, v)) => return Err(parse_err(*l, format!("unknown condition `{v}`"))),
    };
    Ok(s)
}

pub fn write_spectrum_csv(s: &Spectrum) -> String {
    let mut out = String::new();
    if s.temperature_k.is_finite() {
        let _ = writeln!(out, "# temperature_K: {}", num(s.temperature_k));
    }
    if s.frequency_mhz.is_finite() {
        let _ = writeln!(out, "# frequency_MHz: {}", num(s.frequency_mhz));
    }
    let _ = writeln!(out, "# condition: {}", s.condition.map_or("synthetic", Condition::as_str));
    for line in &s.lines {
        let _ = writeln!(
            out,
            "# line_{}: {} mT, eta {}",
            line.transition.label(),
            num(line.field_mt),
            num(line.population_difference)
        );
    }
    if let Some(w) = &s.warning {
        let _ = writeln!(out, "# warning: {w}");
    }
    out.push_str(SPECTRUM_HEADER);
    out.push('\n');
    for (b, y) in s.fields_mt.iter().zip(&s.signal) {
        let _ = writeln!(out, "{},{}", num(*b), num(*y));
    }
    out
}

pub fn read_t1_csv(text: &str) -> Result<T1Dataset> {
    let table = read_table(text, T1_HEADER)?;
    if table.rows.is_empty() {
        return Err(parse_err(1, "no data rows"));
    }
    let lines: Vec<usize> = table.rows.iter().map(|r| r.0).collect();
    let rows = table
        .rows
        .iter()
        .map(|(l, r)| {
            let source = if r[3].is_empty() {
                T1Source::Direct
            } else {
                T1Source::parse(&r[3])
                    .ok_or_else(|| parse_err(*l, format!("source must be `direct` or `linewidth`, found `{}`", r[3])))?
            };
            Ok(T1Point {
                temperature_k: field(*l, "temperature_K", &r[0])?,
                t1_s: field(*l, "t1_s", &r[1])?,
                sigma_s: optional(*l, "sigma_s", &r[2])?,
                source,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    T1Dataset::new(rows).map_err(|e| at_line(&lines, e))
}

pub fn write_t1_csv(data: &T1Dataset) -> String {
    let mut out = format!("{T1_HEADER}\n");
    for r in data.rows() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            num(r.temperature_k),
            num(r.t1_s),
            r.sigma_s.map(num).unwrap_or_default(),
            r.source.as_str()
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct IntensityTable {
    pub dark_reference: TransitionIntensities,
    /// Light rows with their source line numbers.
    pub light: Vec<(usize, TransitionIntensities)>,
}

pub fn read_intensities_csv(text: &str) -> Result<IntensityTable> {
    let table = read_table(text, INTENSITY_HEADER)?;
    let mut dark = None;
    let mut light = Vec::new();
    for (l, r) in &table.rows {
        let condition = match r[0].as_str() {
            "dark" => Condition::Dark,
            "light" => Condition::Light,
            other => return Err(parse_err(*l, format!("condition must be `dark` or `light`, found `{other}`"))),
        };
        let t = field(*l, "temperature_K", &r[1])?;
        if !(t > 0.0) {
            return Err(parse_err(*l, "temperature_K must be positive"));
        }
        let row = TransitionIntensities {
            i_low: field(*l, "i_low_au", &r[2])?,
            i_high: field(*l, "i_high_au", &r[3])?,
            condition,
            temperature_k: t,
        };
        match condition {
            Condition::Dark if dark.is_some() => {
                return Err(parse_err(*l, "more than one dark reference row"));
            }
            Condition::Dark => dark = Some(row),
            Condition::Light => light.push((*l, row)),
        }
    }
    let dark_reference = dark.ok_or_else(|| Error::Precondition("intensity file has no dark reference row".into()))?;
    Ok(IntensityTable { dark_reference, light })
}

pub fn write_intensities_csv(table: &IntensityTable) -> String {
    let mut out = format!("{INTENSITY_HEADER}\n");
    let rows = std::iter::once(&table.dark_reference).chain(table.light.iter().map(|(_, r)| r));
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.condition.as_str(),
            num(r.temperature_k),
            num(r.i_low),
            num(r.i_high)
        );
    }
    out
}
