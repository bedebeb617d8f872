//! Optical-pumping rate networks: level schemes as directed graphs of rate
//! constants, steady states, trajectories and predicted ground-state
//! polarization.
//!
//! Scheme files are line-oriented:
//!
//! ```text
//! # comment
//! state <name> [ground|excited|singlet|shelving|triplet] [ms=+1|0|-1]
//! rate <from> <to> <value> [s^-1] [pump]
//! ```
//!
//! A state with an `ms=` tag and no kind is a ground-triplet sublevel. Pumped
//! rates are multiplied by the dimensionless pump parameter `P`.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{invalid, Error, Result};
use crate::populations::{polarization_degree, LevelPopulations};
use crate::relaxation::{t1_seconds, RelaxationParams};
use crate::spin::Sublevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Ground,
    Excited,
    Singlet,
    Shelving,
    Triplet,
    Other,
}

impl StateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StateKind::Ground => "ground",
            StateKind::Excited => "excited",
            StateKind::Singlet => "singlet",
            StateKind::Shelving => "shelving",
            StateKind::Triplet => "triplet",
            StateKind::Other => "other",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "ground" => StateKind::Ground,
            "excited" => StateKind::Excited,
            "singlet" => StateKind::Singlet,
            "shelving" => StateKind::Shelving,
            "triplet" => StateKind::Triplet,
            "other" => StateKind::Other,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub name: String,
    pub kind: StateKind,
    pub spin: Option<Sublevel>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEdge {
    pub from: usize,
    pub to: usize,
    /// s^-1, or s^-1 per unit pump when `pumped`.
    pub rate: f64,
    pub pumped: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LevelScheme {
    states: Vec<State>,
    edges: Vec<RateEdge>,
    index: HashMap<String, usize>,
}

fn spin_tag(s: Sublevel) -> &'static str {
    match s {
        Sublevel::Plus1 => "ms=+1",
        Sublevel::Zero => "ms=0",
        Sublevel::Minus1 => "ms=-1",
    }
}

impl LevelScheme {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_state(&mut self, name: &str, kind: StateKind, spin: Option<Sublevel>) -> Result<usize> {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(invalid("state", format!("bad state name `{name}`")));
        }
        if self.index.contains_key(name) {
            return Err(invalid("state", format!("duplicate state `{name}`")));
        }
        if kind == StateKind::Ground && spin.is_none() {
            return Err(invalid("state", format!("ground state `{name}` needs an ms tag")));
        }
        if kind == StateKind::Ground && self.ground_index(spin.expect("checked")).is_some() {
            return Err(invalid("state", format!("second ground sublevel with {}", spin_tag(spin.expect("checked")))));
        }
        let k = self.states.len();
        self.states.push(State {
            name: name.to_string(),
            kind,
            spin,
        });
        self.index.insert(name.to_string(), k);
        Ok(k)
    }

    pub fn add_rate(&mut self, from: &str, to: &str, rate: f64, pumped: bool) -> Result<()> {
        let (f, t) = (self.require(from)?, self.require(to)?);
        if f == t {
            return Err(invalid("rate", format!("self-loop on `{from}`")));
        }
        if !rate.is_finite() {
            return Err(invalid("rate", format!("{from} -> {to}: must be finite")));
        }
        if rate < 0.0 {
            return Err(Error::NegativeRate {
                from: from.to_string(),
                to: to.to_string(),
                value: rate,
            });
        }
        self.edges.push(RateEdge {
            from: f,
            to: t,
            rate,
            pumped,
        });
        Ok(())
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| invalid("rate", format!("unknown state `{name}`")))
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn edges(&self) -> &[RateEdge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn ground_index(&self, s: Sublevel) -> Option<usize> {
        self.states
            .iter()
            .position(|st| st.kind == StateKind::Ground && st.spin == Some(s))
    }

    fn ground_indices(&self) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for s in Sublevel::ALL {
            out[s.index()] = self
                .ground_index(s)
                .ok_or_else(|| Error::Precondition(format!("scheme has no ground sublevel {}", spin_tag(s))))?;
        }
        Ok(out)
    }

    /// Adds symmetric spin-lattice edges `rate / 3` between every pair of
    /// ground sublevels, `rate` being `1/T1`.
    pub fn with_spin_lattice(mut self, rate_per_s: f64) -> Result<Self> {
        if !(rate_per_s.is_finite() && rate_per_s >= 0.0) {
            return Err(invalid("spin_lattice", "rate must be finite and >= 0"));
        }
        let g = self.ground_indices()?;
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    self.edges.push(RateEdge {
                        from: g[a],
                        to: g[b],
                        rate: rate_per_s / 3.0,
                        pumped: false,
                    });
                }
            }
        }
        Ok(self)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut scheme = Self::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("state") => {
                    let name = tok.next().ok_or_else(|| perr("state needs a name".into()))?;
                    let mut kind = None;
                    let mut spin = None;
                    for t in tok {
                        if let Some(v) = t.strip_prefix("ms=") {
                            spin = Some(match v {
                                "+1" | "1" => Sublevel::Plus1,
                                "0" => Sublevel::Zero,
                                "-1" => Sublevel::Minus1,
                                _ => return Err(perr(format!("bad ms value `{v}`"))),
                            });
                        } else if let Some(k) = StateKind::parse(t) {
                            kind = Some(k);
                        } else {
                            return Err(perr(format!("unknown state tag `{t}`")));
                        }
                    }
                    let kind = kind.unwrap_or(if spin.is_some() { StateKind::Ground } else { StateKind::Other });
                    scheme.add_state(name, kind, spin).map_err(|e| perr(e.to_string()))?;
                }
                Some("rate") => {
                    let from = tok.next().ok_or_else(|| perr("rate needs <from> <to> <value>".into()))?;
                    let to = tok.next().ok_or_else(|| perr("rate needs <from> <to> <value>".into()))?;
                    let value = tok.next().ok_or_else(|| perr("rate needs a value".into()))?;
                    let value: f64 = value.parse().map_err(|_| perr(format!("bad rate value `{value}`")))?;
                    let mut pumped = false;
                    for t in tok {
                        match t {
                            "pump" => pumped = true,
                            "s^-1" | "/s" => {}
                            _ => return Err(perr(format!("unknown rate flag `{t}`"))),
                        }
                    }
                    scheme.add_rate(from, to, value, pumped).map_err(|e| match e {
                        Error::NegativeRate { .. } => e,
                        other => perr(other.to_string()),
                    })?;
                }
                Some(other) => return Err(perr(format!("unknown directive `{other}`"))),
                None => {}
            }
        }
        Ok(scheme)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.states {
            let _ = write!(out, "state {} {}", s.name, s.kind.as_str());
            if let Some(m) = s.spin {
                let _ = write!(out, " {}", spin_tag(m));
            }
            out.push('\n');
        }
        for e in &self.edges {
            let _ = write!(
                out,
                "rate {} {} {:e} s^-1{}",
                self.states[e.from].name,
                self.states[e.to].name,
                e.rate,
                if e.pumped { " pump" } else { "" }
            );
            out.push('\n');
        }
        out
    }

    fn effective_rates(&self, pump: f64) -> Result<Vec<(usize, usize, f64)>> {
        if !(pump.is_finite() && pump >= 0.0) {
            return Err(invalid("pump", "must be finite and >= 0"));
        }
        Ok(self
            .edges
            .iter()
            .map(|e| (e.from, e.to, if e.pumped { e.rate * pump } else { e.rate }))
            .collect())
    }
}

/// `M[i][j]` is the rate `j -> i`; diagonals make columns sum to zero.
pub fn build_rate_matrix(scheme: &LevelScheme, pump: f64) -> Result<DMatrix<f64>> {
    let n = scheme.len();
    let mut m = DMatrix::zeros(n, n);
    for (from, to, r) in scheme.effective_rates(pump)? {
        m[(to, from)] += r;
    }
    for j in 0..n {
        // Sum the off-diagonals directly so the column closes exactly.
        let out: f64 = (0..n).filter(|&i| i != j).map(|i| m[(i, j)]).sum();
        m[(j, j)] = -out;
    }
    Ok(m)
}

pub fn steady_state(scheme: &LevelScheme, pump: f64) -> Result<DVector<f64>> {
    let n = scheme.len();
    if n == 0 {
        return Err(Error::Precondition("empty scheme".into()));
    }
    let rates = scheme.effective_rates(pump)?;
    let mut graph = DiGraph::<usize, ()>::new();
    let nodes: Vec<_> = (0..n).map(|k| graph.add_node(k)).collect();
    let mut q = DMatrix::zeros(n, n);
    for &(from, to, r) in &rates {
        if r > 0.0 {
            graph.update_edge(nodes[from], nodes[to], ());
            q[(from, to)] += r;
        }
    }
    let sccs = tarjan_scc(&graph);
    let mut component = vec![0; n];
    for (c, members) in sccs.iter().enumerate() {
        for v in members {
            component[graph[*v]] = c;
        }
    }
    let closed: Vec<&Vec<_>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, _)| !rates.iter().any(|&(f, t, r)| r > 0.0 && component[f] == *c && component[t] != *c))
        .map(|(_, m)| m)
        .collect();
    if closed.len() != 1 {
        let mut components: Vec<Vec<String>> = closed
            .iter()
            .map(|m| {
                let mut names: Vec<String> = m.iter().map(|v| scheme.states[graph[*v]].name.clone()).collect();
                names.sort();
                names
            })
            .collect();
        components.sort();
        return Err(Error::DegenerateNullspace { components });
    }
    let mut members: Vec<usize> = closed[0].iter().map(|v| graph[*v]).collect();
    members.sort_unstable();
    let sub = DMatrix::from_fn(members.len(), members.len(), |i, j| q[(members[i], members[j])]);
    let pi = gth_stationary(sub);
    let mut p = DVector::zeros(n);
    for (k, &s) in members.iter().enumerate() {
        p[s] = pi[k];
    }
    Ok(p)
}

// Grassmann-Taksar-Heyman elimination for an irreducible chain given by its
// off-diagonal rates `q[i][j]` (i -> j). Subtraction-free, so entries stay
// nonnegative.
fn gth_stationary(mut q: DMatrix<f64>) -> DVector<f64> {
    let n = q.nrows();
    for k in (1..n).rev() {
        let s: f64 = (0..k).map(|j| q[(k, j)]).sum();
        for i in 0..k {
            q[(i, k)] /= s;
        }
        for i in 0..k {
            let qik = q[(i, k)];
            if qik != 0.0 {
                for j in 0..k {
                    if i != j {
                        q[(i, j)] += qik * q[(k, j)];
                    }
                }
            }
        }
    }
    let mut pi = DVector::zeros(n);
    pi[0] = 1.0;
    for k in 1..n {
        pi[k] = (0..k).map(|i| pi[i] * q[(i, k)]).sum();
    }
    let total = pi.sum();
    pi / total
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times_s: Vec<f64>,
    /// One population vector per output time, in state order.
    pub populations: Vec<DVector<f64>>,
}

/// Propagates `dp/dt = M p` with the exact propagator `exp(M dt)` between
/// output times, so stiffness does not limit the step.
pub fn time_evolve(scheme: &LevelScheme, pump: f64, p0: &DVector<f64>, t_grid: &[f64]) -> Result<Trajectory> {
    let n = scheme.len();
    if p0.len() != n {
        return Err(invalid("p0", format!("expected {n} entries, got {}", p0.len())));
    }
    if p0.iter().any(|v| !v.is_finite() || *v < -1e-12) || (p0.sum() - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition("initial populations must be nonnegative and sum to 1".into()));
    }
    if t_grid.iter().any(|t| !t.is_finite() || *t < 0.0) || t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("t_grid", "times must be finite, >= 0 and nondecreasing"));
    }
    let m = build_rate_matrix(scheme, pump)?;
    let max_stable_step = {
        let d = m.diagonal().amax();
        if d > 0.0 { 2.0 / d } else { f64::INFINITY }
    };
    let mut cache: HashMap<u64, DMatrix<f64>> = HashMap::new();
    let mut p = p0.clone();
    let mut t_prev = 0.0;
    let mut populations = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let dt = t - t_prev;
        if dt > 0.0 {
            let prop = cache.entry(dt.to_bits()).or_insert_with(|| propagator(&m, dt));
            p = &*prop * &p;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integration { max_stable_step });
            }
        }
        t_prev = t;
        populations.push(p.clone());
    }
    Ok(Trajectory {
        times_s: t_grid.to_vec(),
        populations,
    })
}

// exp(M dt) by scaling and squaring. Each squared factor is projected back
// onto column-stochastic matrices, which the exact propagator always is; this
// keeps rounding from accumulating over the many squarings a stiff network
// needs at long times.
fn propagator(m: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let norm = m.column_iter().map(|c| c.abs().sum()).fold(0.0, f64::max) * dt;
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let mut p = (m * (dt / 2f64.powi(squarings))).exp();
    stochastic_projection(&mut p);
    for _ in 0..squarings {
        p = &p * &p;
        stochastic_projection(&mut p);
    }
    p
}

fn stochastic_projection(p: &mut DMatrix<f64>) {
    for mut col in p.column_iter_mut() {
        col.apply(|v| *v = v.max(0.0));
        let s = col.sum();
        if s > 0.0 {
            col /= s;
        }
    }
}

/// Ground-triplet populations renormalized to the triplet.
pub fn ground_populations(scheme: &LevelScheme, p: &DVector<f64>) -> Result<LevelPopulations> {
    let g = scheme.ground_indices()?;
    let w: [f64; 3] = std::array::from_fn(|k| p[g[k]].max(0.0));
    LevelPopulations::from_weights(w[0], w[1], w[2])
}

/// Predicted polarization (percent) at each pump value, relative to the
/// `P = 0` steady state.
pub fn polarization_vs_pump(scheme: &LevelScheme, pump_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if pump_grid.iter().any(|p| !p.is_finite() || *p < 0.0) || pump_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("pump_grid", "must be nonnegative and strictly ascending"));
    }
    let dark = ground_populations(scheme, &steady_state(scheme, 0.0)?)?;
    pump_grid
        .iter()
        .map(|&pump| {
            let light = ground_populations(scheme, &steady_state(scheme, pump)?)?;
            Ok((pump, polarization_degree(&light, &dark)?))
        })
        .collect()
}

/// Largest deviation of `y` from its least-squares line, relative to the
/// largest `|y|`.
pub fn linearity_deviation(series: &[(f64, f64)]) -> f64 {
    let n = series.len() as f64;
    if series.len() < 3 {
        return 0.0;
    }
    let mx = series.iter().map(|s| s.0).sum::<f64>() / n;
    let my = series.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = series.iter().map(|s| (s.0 - mx).powi(2)).sum();
    let sxy: f64 = series.iter().map(|s| (s.0 - mx) * (s.1 - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ymax = series.iter().fold(0.0f64, |m, s| m.max(s.1.abs()));
    series.iter().fold(0.0f64, |m, s| m.max((s.1 - a - b * s.0).abs())) / ymax
}

pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && per_decade > 0) {
        return Err(invalid("pump_grid", "need 0 < lo < hi"));
    }
    let decades = (hi / lo).log10();
    let n = (decades * per_decade as f64).round() as usize;
    Ok((0..=n)
        .map(|i| lo * 10f64.powf(decades * i as f64 / n.max(1) as f64))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemePreset {
    /// Spin-orbit coupling from the excited triplet into a singlet manifold.
    A,
    /// Intersystem crossing through a third triplet.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetOptions {
    /// Sets the ground spin-lattice rate through the relaxation model.
    pub temperature_k: f64,
    pub relaxation: RelaxationParams,
    /// Scheme A only: weak pumped edges from `GS+-1` into the upper singlet.
    pub below_zpl_pump: bool,
}

impl Default for PresetOptions {
    fn default() -> Self {
        Self {
            temperature_k: 10.0,
            relaxation: RelaxationParams::siv0(),
            below_zpl_pump: false,
        }
    }
}

const SPINS: [(&str, Sublevel); 3] = [("+1", Sublevel::Plus1), ("0", Sublevel::Zero), ("-1", Sublevel::Minus1)];

// Placeholder magnitudes (s^-1): the topology is the point, not the numbers.
const PUMP: f64 = 1e4;
const RADIATIVE: f64 = 1e8;

impl SchemePreset {
    pub fn id(self) -> &'static str {
        match self {
            SchemePreset::A => "scheme-A",
            SchemePreset::B => "scheme-B",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "scheme-A" | "A" | "a" => Some(SchemePreset::A),
            "scheme-B" | "B" | "b" => Some(SchemePreset::B),
            _ => None,
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            SchemePreset::A => {
                "excited triplet couples by spin-orbit interaction to an upper singlet, which decays \
                 to a lower shelving singlet and returns preferentially to ms=0"
            }
            SchemePreset::B => {
                "excited triplet crosses into a third triplet, which relaxes to the ground triplet \
                 or through a singlet returning preferentially to ms=0"
            }
        }
    }

    pub fn build(self, options: &PresetOptions) -> Result<LevelScheme> {
        let mut s = LevelScheme::new();
        for (tag, m) in SPINS {
            s.add_state(&format!("GS{tag}"), StateKind::Ground, Some(m))?;
        }
        for (tag, m) in SPINS {
            s.add_state(&format!("ES{tag}"), StateKind::Excited, Some(m))?;
        }
        for (tag, _) in SPINS {
            s.add_rate(&format!("GS{tag}"), &format!("ES{tag}"), PUMP, true)?;
            s.add_rate(&format!("ES{tag}"), &format!("GS{tag}"), RADIATIVE, false)?;
        }
        match self {
            SchemePreset::A => {
                s.add_state("S1", StateKind::Singlet, None)?;
                s.add_state("S0", StateKind::Shelving, None)?;
                for (tag, m) in SPINS {
                    let isc = if m == Sublevel::Zero { 1e6 } else { 5e6 };
                    s.add_rate(&format!("ES{tag}"), "S1", isc, false)?;
                    let back = if m == Sublevel::Zero { 1e6 } else { 2e5 };
                    s.add_rate("S0", &format!("GS{tag}"), back, false)?;
                }
                s.add_rate("S1", "S0", 1e7, false)?;
                if options.below_zpl_pump {
                    s.add_rate("GS+1", "S1", 10.0, true)?;
                    s.add_rate("GS-1", "S1", 10.0, true)?;
                }
            }
            SchemePreset::B => {
                for (tag, m) in SPINS {
                    s.add_state(&format!("T{tag}"), StateKind::Triplet, Some(m))?;
                }
                s.add_state("S", StateKind::Singlet, None)?;
                for (tag, m) in SPINS {
                    s.add_rate(&format!("GS{tag}"), &format!("T{tag}"), 1e3, true)?;
                    s.add_rate(&format!("ES{tag}"), &format!("T{tag}"), 1e7, false)?;
                    s.add_rate(&format!("T{tag}"), &format!("GS{tag}"), 1e6, false)?;
                    let isc = if m == Sublevel::Zero { 1e6 } else { 5e6 };
                    s.add_rate(&format!("T{tag}"), "S", isc, false)?;
                    let back = if m == Sublevel::Zero { 1e6 } else { 2e5 };
                    s.add_rate("S", &format!("GS{tag}"), back, false)?;
                }
            }
        }
        let t1 = t1_seconds(&options.relaxation, options.temperature_k)?;
        s.with_spin_lattice(1.0 / t1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_state(a: f64, b: f64) -> LevelScheme {
        LevelScheme::parse(&format!("state one\nstate two\nrate one two {a}\nrate two one {b}\n")).unwrap()
    }

    // Dense oracle: replace one balance equation by normalization.
    fn lu_steady_state(scheme: &LevelScheme, pump: f64) -> DVector<f64> {
        let mut m = build_rate_matrix(scheme, pump).unwrap();
        let n = m.nrows();
        for j in 0..n {
            m[(n - 1, j)] = 1.0;
        }
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        m.lu().solve(&rhs).unwrap()
    }

    fn symmetric_scheme() -> LevelScheme {
        let mut text = String::new();
        for m in ["+1", "0", "-1"] {
            text += &format!("state GS{m} ms={m}\nstate ES{m} excited ms={m}\n");
        }
        text += "state S singlet\n";
        for m in ["+1", "0", "-1"] {
            text += &format!("rate GS{m} ES{m} 1e4 pump\nrate ES{m} GS{m} 1e8\nrate ES{m} S 3e6\nrate S GS{m} 5e5\n");
        }
        LevelScheme::parse(&text).unwrap().with_spin_lattice(0.05).unwrap()
    }

    #[test]
    fn two_state_matrix_and_steady_state() {
        let s = two_state(2.0, 5.0);
        let m = build_rate_matrix(&s, 0.0).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[-2.0, 5.0, 2.0, -5.0]));
        let p = steady_state(&two_state(3.0, 3.0), 0.0).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn pump_edges_vanish_at_zero_pump() {
        let s = SchemePreset::A.build(&Default::default()).unwrap();
        let dark = build_rate_matrix(&s, 0.0).unwrap();
        let gs0 = s.index_of("GS0").unwrap();
        let es0 = s.index_of("ES0").unwrap();
        assert_eq!(dark[(es0, gs0)], 0.0);
        assert_eq!(build_rate_matrix(&s, 2.0).unwrap()[(es0, gs0)], 2e4);
    }

    #[test]
    fn presets_conserve_probability() {
        for preset in [SchemePreset::A, SchemePreset::B] {
            let s = preset.build(&PresetOptions { below_zpl_pump: true, ..Default::default() }).unwrap();
            for pump in [0.0, 1e-6, 1.0, 1e3] {
                let m = build_rate_matrix(&s, pump).unwrap();
                for j in 0..m.ncols() {
                    let scale = m[(j, j)].abs().max(1.0);
                    assert!(m.column(j).sum().abs() <= 1e-12 * scale);
                }
            }
        }
    }

    #[test]
    fn steady_state_matches_dense_solve() {
        for preset in [SchemePreset::A, SchemePreset::B] {
            let s = preset.build(&Default::default()).unwrap();
            for pump in [1e-6, 1e-2, 1.0, 1e2] {
                let p = steady_state(&s, pump).unwrap();
                let oracle = lu_steady_state(&s, pump);
                assert!((p.sum() - 1.0).abs() < 1e-12);
                assert!(p.iter().all(|v| *v >= -1e-12));
                for k in 0..p.len() {
                    assert!((p[k] - oracle[k]).abs() <= 1e-9 * oracle[k].abs().max(1e-12), "{preset:?} {pump} {k}");
                }
                let m = build_rate_matrix(&s, pump).unwrap();
                assert!((&m * &p).amax() < 1e-10 * m.amax().max(1.0));
            }
            let gs = ground_populations(&s, &steady_state(&s, 1.0).unwrap()).unwrap();
            assert!(gs.p_zero > gs.p_plus1);
            assert_relative_eq!(gs.p_plus1, gs.p_minus1, max_relative = 1e-9);
        }
    }

    #[test]
    fn disconnected_scheme_is_reported() {
        let s = LevelScheme::parse("state a\nstate b\nstate c\nstate d\nrate a b 1\nrate b a 1\nrate c d 1\nrate d c 2\n").unwrap();
        match steady_state(&s, 1.0) {
            Err(Error::DegenerateNullspace { components }) => {
                assert_eq!(components, vec![vec!["a".to_string(), "b".into()], vec!["c".into(), "d".into()]]);
            }
            other => panic!("expected degenerate nullspace, got {other:?}"),
        }
        // A transient state is fine: it simply empties.
        let t = LevelScheme::parse("state x\nstate a\nstate b\nrate x a 1\nrate a b 1\nrate b a 1\n").unwrap();
        let p = steady_state(&t, 0.0).unwrap();
        assert_eq!(p[0], 0.0);
        assert_relative_eq!(p[1], 0.5, max_relative = 1e-15);
    }

    #[test]
    fn symmetric_rates_give_no_polarization() {
        let s = symmetric_scheme();
        let series = polarization_vs_pump(&s, &[1e-3, 1.0, 1e3]).unwrap();
        assert!(series.iter().all(|(_, xi)| xi.abs() < 1e-10));
    }

    #[test]
    fn relabeling_spin_projection_preserves_polarization() {
        let s = SchemePreset::A.build(&Default::default()).unwrap();
        let swapped = LevelScheme::parse(
            &s.to_text()
                .replace("ms=+1", "ms=TMP")
                .replace("ms=-1", "ms=+1")
                .replace("ms=TMP", "ms=-1"),
        )
        .unwrap();
        let grid = [1e-7, 1e-5, 1e-3];
        let a = polarization_vs_pump(&s, &grid).unwrap();
        let b = polarization_vs_pump(&swapped, &grid).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x.1, y.1, max_relative = 1e-12);
        }
    }

    #[test]
    fn polarization_is_linear_then_saturates() {
        for preset in [SchemePreset::A, SchemePreset::B] {
            let s = preset.build(&Default::default()).unwrap();
            let grid = log_grid(1e-9, 1e3, 4).unwrap();
            let series = polarization_vs_pump(&s, &grid).unwrap();
            assert!(series.windows(2).all(|w| w[1].1 > w[0].1), "{preset:?} not monotone");
            let lowest: Vec<_> = series.iter().copied().filter(|(p, _)| *p <= 1e-8 * (1.0 + 1e-12)).collect();
            assert!(lowest.len() >= 4);
            assert!(linearity_deviation(&lowest) < 0.01);
            let last = series.last().unwrap().1;
            let prev = series[series.len() - 2].1;
            assert!(last <= 100.0 && (last - prev).abs() < 1e-3 * last);
        }
        let dark = polarization_vs_pump(&SchemePreset::A.build(&Default::default()).unwrap(), &[0.0]).unwrap();
        assert_eq!(dark[0].1, 0.0);
    }

    #[test]
    fn two_state_closed_form_evolution() {
        let s = two_state(1.0, 1.0);
        let times: Vec<f64> = (0..20).map(|i| 0.25 * i as f64).collect();
        let tr = time_evolve(&s, 0.0, &DVector::from_vec(vec![1.0, 0.0]), &times).unwrap();
        for (t, p) in tr.times_s.iter().zip(&tr.populations) {
            assert!((p[0] - 0.5 * (1.0 + (-2.0 * t).exp())).abs() < 1e-12);
        }
        let frozen = LevelScheme::parse("state a\nstate b\n").unwrap();
        let p0 = DVector::from_vec(vec![0.3, 0.7]);
        let tr = time_evolve(&frozen, 0.0, &p0, &[0.0, 1.0, 1e6]).unwrap();
        assert!(tr.populations.iter().all(|p| *p == p0));
    }

    #[test]
    fn trajectories_stay_physical_and_reach_steady_state() {
        let s = SchemePreset::A.build(&PresetOptions { temperature_k: 292.0, ..Default::default() }).unwrap();
        let n = s.len();
        let mut p0 = DVector::zeros(n);
        p0[s.index_of("GS+1").unwrap()] = 1.0;
        let times = [0.0, 1e-9, 1e-7, 1e-5, 1e-3, 1e-1, 1e1];
        let tr = time_evolve(&s, 1e2, &p0, &times).unwrap();
        for p in &tr.populations {
            assert!((p.sum() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|v| *v > -1e-9 && *v < 1.0 + 1e-9));
        }
        let ss = steady_state(&s, 1e2).unwrap();
        let last = tr.populations.last().unwrap();
        assert!((last - &ss).amax() < 1e-8);
    }

    #[test]
    fn parser_reports_problems() {
        assert!(matches!(LevelScheme::parse("state a\nfoo\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(LevelScheme::parse("state a\nstate b\nrate a b x\n"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(LevelScheme::parse("state a\nrate a zz 1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            LevelScheme::parse("state a\nstate b\nrate a b -1\n"),
            Err(Error::NegativeRate { value, .. }) if value == -1.0
        ));
        assert!(matches!(LevelScheme::parse("state a ms=2\n"), Err(Error::Parse { line: 1, .. })));
        let s = LevelScheme::parse("# x\nstate g ms=+1 # ground\nstate e excited\nrate g e 5 s^-1 pump\n").unwrap();
        assert_eq!(s.states()[0].kind, StateKind::Ground);
        assert!(s.edges()[0].pumped);
        assert_eq!(LevelScheme::parse(&s.to_text()).unwrap(), s);
    }
}
