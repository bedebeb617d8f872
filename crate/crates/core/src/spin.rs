//! S=1 spin Hamiltonian with axial, temperature-dependent zero-field
//! splitting, and EPR transition/resonance-field search.
//!
//! Matrices are written in the `m_s = {+1, 0, -1}` basis quantized along the
//! defect symmetry axis:
//!
//! ```text
//! H = D(T) [Sz'^2 - (2/3) I] + gamma (B . S)        (MHz)
//! ```

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use num_complex::Complex64;

use crate::constants::{GAMMA_E_MHZ_PER_MT, G_REFERENCE};
use crate::error::{check_temperature, invalid, Result};

pub type HermitianMatrix3 = Matrix3<Complex64>;

/// One of the three ground-triplet sublevels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sublevel {
    Plus1,
    Zero,
    Minus1,
}

impl Sublevel {
    pub const ALL: [Sublevel; 3] = [Sublevel::Plus1, Sublevel::Zero, Sublevel::Minus1];

    /// Row/column index in the `{+1, 0, -1}` basis.
    pub fn index(self) -> usize {
        match self {
            Sublevel::Plus1 => 0,
            Sublevel::Zero => 1,
            Sublevel::Minus1 => 2,
        }
    }

    pub fn projection(self) -> i8 {
        match self {
            Sublevel::Plus1 => 1,
            Sublevel::Zero => 0,
            Sublevel::Minus1 => -1,
        }
    }
}

/// The two allowed EPR transitions out of `m_s = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Transition {
    /// `m_s = 0 <-> +1`, the low-field line for D > 0.
    ZeroPlus1,
    /// `m_s = 0 <-> -1`, the high-field line for D > 0.
    ZeroMinus1,
}

impl Transition {
    pub const BOTH: [Transition; 2] = [Transition::ZeroPlus1, Transition::ZeroMinus1];

    pub fn label(self) -> &'static str {
        match self {
            Transition::ZeroPlus1 => "0<->+1",
            Transition::ZeroMinus1 => "0<->-1",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinOperatorSet {
    pub sx: HermitianMatrix3,
    pub sy: HermitianMatrix3,
    pub sz: HermitianMatrix3,
}

/// Standard S=1 operators (hbar = 1) in the `{+1, 0, -1}` basis.
pub fn spin_matrices() -> SpinOperatorSet {
    let r = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let i = Complex64::new(0.0, std::f64::consts::FRAC_1_SQRT_2);
    let z = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    SpinOperatorSet {
        sx: Matrix3::new(z, r, z, r, z, r, z, r, z),
        sy: Matrix3::new(z, -i, z, i, z, -i, z, i, z),
        sz: Matrix3::new(one, z, z, z, z, z, z, z, -one),
    }
}

/// A temperature range over which dD/dT is constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeSegment {
    pub t_low_k: f64,
    pub t_high_k: f64,
    pub slope_khz_per_k: f64,
}

/// Piecewise-linear D(T) anchored at a reference temperature. Outside every
/// segment the slope is zero, so D is clamped beyond the outermost bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ZfsModel {
    d_ref_mhz: f64,
    t_ref_k: f64,
    segments: Vec<SlopeSegment>,
}

impl ZfsModel {
    pub fn new(d_ref_mhz: f64, t_ref_k: f64, mut segments: Vec<SlopeSegment>) -> Result<Self> {
        if !d_ref_mhz.is_finite() {
            return Err(invalid("d_ref_mhz", "must be finite"));
        }
        check_temperature(t_ref_k)?;
        segments.sort_by(|a, b| a.t_low_k.total_cmp(&b.t_low_k));
        for s in &segments {
            if !(s.t_low_k >= 0.0 && s.t_high_k > s.t_low_k && s.slope_khz_per_k.is_finite()) {
                return Err(invalid(
                    "zfs segment",
                    format!("bad segment {}..{} K", s.t_low_k, s.t_high_k),
                ));
            }
        }
        for pair in segments.windows(2) {
            if pair[1].t_low_k < pair[0].t_high_k {
                return Err(invalid("zfs segment", "segments overlap"));
            }
        }
        Ok(Self {
            d_ref_mhz,
            t_ref_k,
            segments,
        })
    }

    /// Temperature-independent D.
    pub fn constant(d_mhz: f64) -> Self {
        Self {
            d_ref_mhz: d_mhz,
            t_ref_k: 300.0,
            segments: Vec::new(),
        }
    }

    /// D = +1000 MHz at 300 K; -337 kHz/K over 50-150 K and -202 kHz/K over
    /// 150-300 K; flat outside 50-300 K.
    pub fn siv0() -> Self {
        Self::new(
            1000.0,
            300.0,
            vec![
                SlopeSegment {
                    t_low_k: 50.0,
                    t_high_k: 150.0,
                    slope_khz_per_k: -337.0,
                },
                SlopeSegment {
                    t_low_k: 150.0,
                    t_high_k: 300.0,
                    slope_khz_per_k: -202.0,
                },
            ],
        )
        .expect("built-in ZFS model is valid")
    }

    pub fn d_ref_mhz(&self) -> f64 {
        self.d_ref_mhz
    }

    pub fn t_ref_k(&self) -> f64 {
        self.t_ref_k
    }

    pub fn segments(&self) -> &[SlopeSegment] {
        &self.segments
    }

    // Integral of dD/dT from 0 to t, in kHz.
    fn accumulated_khz(&self, t: f64) -> f64 {
        self.segments
            .iter()
            .map(|s| s.slope_khz_per_k * (t.clamp(s.t_low_k, s.t_high_k) - s.t_low_k))
            .sum()
    }

    pub fn at(&self, t: f64) -> Result<f64> {
        check_temperature(t)?;
        if t == self.t_ref_k {
            return Ok(self.d_ref_mhz);
        }
        let delta_khz = self.accumulated_khz(t) - self.accumulated_khz(self.t_ref_k);
        Ok(self.d_ref_mhz + delta_khz * 1e-3)
    }
}

impl Default for ZfsModel {
    fn default() -> Self {
        Self::siv0()
    }
}

pub fn zfs_at_temperature(model: &ZfsModel, t: f64) -> Result<f64> {
    model.at(t)
}

/// The four `<111>` directions, normalized.
pub fn orientations_111() -> [Vector3<f64>; 4] {
    let s = 1.0 / 3f64.sqrt();
    [
        Vector3::new(s, s, s),
        Vector3::new(s, -s, -s),
        Vector3::new(-s, s, -s),
        Vector3::new(-s, -s, s),
    ]
}

fn unit(v: Vector3<f64>, name: &str) -> Result<Vector3<f64>> {
    let n = v.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err(invalid(name, "direction must be a finite nonzero vector"));
    }
    Ok(v / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinSystem {
    pub zfs: ZfsModel,
    g: f64,
    axis: Vector3<f64>,
}

impl SpinSystem {
    pub fn new(zfs: ZfsModel, g: f64, axis: Vector3<f64>) -> Result<Self> {
        if !(g.is_finite() && g > 0.0) {
            return Err(invalid("g", "must be positive"));
        }
        Ok(Self {
            zfs,
            g,
            axis: unit(axis, "axis")?,
        })
    }

    /// SiV0 defaults: the built-in D(T) model, g = 2.0028, axis along [111].
    pub fn siv0() -> Self {
        Self {
            zfs: ZfsModel::siv0(),
            g: G_REFERENCE,
            axis: orientations_111()[0],
        }
    }

    pub fn with_axis(&self, axis: Vector3<f64>) -> Result<Self> {
        Self::new(self.zfs.clone(), self.g, axis)
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn axis(&self) -> Vector3<f64> {
        self.axis
    }

    /// MHz per mT, scaled so that g = 2.0028 gives 28.025 MHz/mT.
    pub fn gyromagnetic(&self) -> f64 {
        self.g * GAMMA_E_MHZ_PER_MT / G_REFERENCE
    }

    // Orthonormal (x', y', z') with z' along the defect axis.
    fn defect_frame(&self) -> [Vector3<f64>; 3] {
        let z = self.axis;
        let seed = if z.x.abs() <= z.y.abs() && z.x.abs() <= z.z.abs() {
            Vector3::x()
        } else if z.y.abs() <= z.z.abs() {
            Vector3::y()
        } else {
            Vector3::z()
        };
        let x = (seed - z * seed.dot(&z)).normalize();
        let y = z.cross(&x);
        [x, y, z]
    }
}

impl Default for SpinSystem {
    fn default() -> Self {
        Self::siv0()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldConfig {
    magnitude_mt: f64,
    direction: Vector3<f64>,
}

impl FieldConfig {
    pub fn new(magnitude_mt: f64, direction: Vector3<f64>) -> Result<Self> {
        if !(magnitude_mt.is_finite() && magnitude_mt >= 0.0) {
            return Err(invalid("field magnitude", "must be finite and >= 0"));
        }
        Ok(Self {
            magnitude_mt,
            direction: unit(direction, "field direction")?,
        })
    }

    pub fn magnitude_mt(&self) -> f64 {
        self.magnitude_mt
    }

    pub fn direction(&self) -> Vector3<f64> {
        self.direction
    }

    pub fn vector_mt(&self) -> Vector3<f64> {
        self.direction * self.magnitude_mt
    }

    /// Angle between the field and `axis`, in degrees.
    pub fn misalignment_deg(&self, axis: &Vector3<f64>) -> f64 {
        let c = self.direction.dot(&axis.normalize()).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    }
}

pub fn build_hamiltonian(sys: &SpinSystem, field: &FieldConfig, t: f64) -> Result<HermitianMatrix3> {
    let d = sys.zfs.at(t)?;
    let ops = spin_matrices();
    let [ex, ey, ez] = sys.defect_frame();
    let b = field.vector_mt();
    let gamma = sys.gyromagnetic();

    let identity = HermitianMatrix3::identity();
    let zfs = (ops.sz * ops.sz - identity * Complex64::new(2.0 / 3.0, 0.0)) * Complex64::new(d, 0.0);
    let zeeman = ops.sx * Complex64::new(gamma * b.dot(&ex), 0.0)
        + ops.sy * Complex64::new(gamma * b.dot(&ey), 0.0)
        + ops.sz * Complex64::new(gamma * b.dot(&ez), 0.0);
    Ok(zfs + zeeman)
}

/// Eigenlevels labeled `+1, 0, -1`.
///
/// With a field applied the label follows the spin projection on the field
/// direction (highest projection is `+1`), which is continuous in the field
/// for any orientation. At zero field the label is the dominant `m_s`
/// character along the defect axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLevels {
    /// Energies (MHz) indexed by [`Sublevel::index`].
    pub energies_mhz: [f64; 3],
    /// `weights[s][k]`: weight of the defect-frame state `s` in the
    /// eigenvector labeled `k`.
    pub weights: [[f64; 3]; 3],
    /// How cleanly the labels separate, from 0 (degenerate) to 1.
    pub label_confidence: f64,
}

impl LabeledLevels {
    pub fn energy(&self, s: Sublevel) -> f64 {
        self.energies_mhz[s.index()]
    }

    pub fn is_ambiguous(&self) -> bool {
        self.label_confidence < LABEL_CONFIDENCE_MIN
    }
}

/// Labelings less confident than this are flagged ambiguous.
pub const LABEL_CONFIDENCE_MIN: f64 = 0.5;

const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

pub fn labeled_levels(sys: &SpinSystem, field: &FieldConfig, t: f64) -> Result<LabeledLevels> {
    let h = build_hamiltonian(sys, field, t)?;
    let eig = SymmetricEigen::new(h);

    // raw[s][e]: weight of basis state s in eigenvector e
    let mut raw = [[0.0; 3]; 3];
    for (e, col) in eig.eigenvectors.column_iter().enumerate() {
        for s in 0..3 {
            raw[s][e] = col[s].norm_sqr();
        }
    }

    // perm[s] = eigenvector assigned to label s
    let (perm, label_confidence) = if field.magnitude_mt() > 0.0 {
        let [ex, ey, ez] = sys.defect_frame();
        let b = field.direction();
        let ops = spin_matrices();
        let proj = ops.sx * Complex64::new(b.dot(&ex), 0.0)
            + ops.sy * Complex64::new(b.dot(&ey), 0.0)
            + ops.sz * Complex64::new(b.dot(&ez), 0.0);
        let m: Vec<f64> = eig
            .eigenvectors
            .column_iter()
            .map(|v| (v.adjoint() * proj * v)[(0, 0)].re)
            .collect();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| m[b].total_cmp(&m[a]));
        let gap = (m[order[0]] - m[order[1]]).min(m[order[1]] - m[order[2]]);
        (order, gap.clamp(0.0, 1.0))
    } else {
        let p = *PERMUTATIONS
            .iter()
            .max_by(|a, b| {
                let score = |p: &[usize; 3]| (0..3).map(|s| raw[s][p[s]]).sum::<f64>();
                score(a).total_cmp(&score(b))
            })
            .expect("non-empty");
        let c = (0..3).map(|k| raw[k][p[k]]).fold(f64::INFINITY, f64::min);
        (p, c)
    };

    let mut energies_mhz = [0.0; 3];
    let mut weights = [[0.0; 3]; 3];
    for k in 0..3 {
        energies_mhz[k] = eig.eigenvalues[perm[k]];
        for s in 0..3 {
            weights[s][k] = raw[s][perm[k]];
        }
    }
    Ok(LabeledLevels {
        energies_mhz,
        weights,
        label_confidence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionFrequencies {
    pub zero_plus1_mhz: f64,
    pub zero_minus1_mhz: f64,
    /// Set when the states are too mixed for the `m_s` labels to be meaningful.
    pub ambiguous: bool,
    pub label_confidence: f64,
}

impl TransitionFrequencies {
    pub fn get(&self, t: Transition) -> f64 {
        match t {
            Transition::ZeroPlus1 => self.zero_plus1_mhz,
            Transition::ZeroMinus1 => self.zero_minus1_mhz,
        }
    }
}

impl From<&LabeledLevels> for TransitionFrequencies {
    fn from(levels: &LabeledLevels) -> Self {
        let e0 = levels.energy(Sublevel::Zero);
        TransitionFrequencies {
            zero_plus1_mhz: (levels.energy(Sublevel::Plus1) - e0).abs(),
            zero_minus1_mhz: (levels.energy(Sublevel::Minus1) - e0).abs(),
            ambiguous: levels.is_ambiguous(),
            label_confidence: levels.label_confidence,
        }
    }
}

pub fn transition_frequencies(
    sys: &SpinSystem,
    field: &FieldConfig,
    t: f64,
) -> Result<TransitionFrequencies> {
    Ok(TransitionFrequencies::from(&labeled_levels(sys, field, t)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonanceSearch {
    pub b_max_mt: f64,
    pub step_mt: f64,
    /// Frequency tolerance on the located root (MHz).
    pub tolerance_mhz: f64,
}

impl Default for ResonanceSearch {
    fn default() -> Self {
        Self {
            b_max_mt: 1200.0,
            step_mt: 0.1,
            tolerance_mhz: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resonance {
    pub field_mt: f64,
    /// Usually one transition; two when both lines coincide (D = 0).
    pub transitions: Vec<Transition>,
}

impl Resonance {
    pub fn has(&self, t: Transition) -> bool {
        self.transitions.contains(&t)
    }
}

// Fields closer than this are reported as a single multiply-labeled line.
const COINCIDENT_FIELD_MT: f64 = 1e-6;

/// All fields in `[0, b_max]` where a transition matches `microwave_mhz`,
/// using the default search grid.
pub fn resonance_fields(
    sys: &SpinSystem,
    microwave_mhz: f64,
    direction: &Vector3<f64>,
    t: f64,
) -> Result<Vec<Resonance>> {
    resonance_fields_with(sys, microwave_mhz, direction, t, &ResonanceSearch::default())
}

pub fn resonance_fields_with(
    sys: &SpinSystem,
    microwave_mhz: f64,
    direction: &Vector3<f64>,
    t: f64,
    search: &ResonanceSearch,
) -> Result<Vec<Resonance>> {
    if !(microwave_mhz.is_finite() && microwave_mhz > 0.0) {
        return Err(invalid("microwave frequency", "must be positive"));
    }
    if !(search.b_max_mt > 0.0 && search.step_mt > 0.0 && search.step_mt.is_finite()) {
        return Err(invalid("resonance search", "b_max and step must be positive"));
    }
    check_temperature(t)?;
    let direction = unit(*direction, "field direction")?;

    let mismatch = |b: f64, tr: Transition| -> Result<f64> {
        let field = FieldConfig::new(b, direction)?;
        Ok(transition_frequencies(sys, &field, t)?.get(tr) - microwave_mhz)
    };

    let n = (search.b_max_mt / search.step_mt).ceil() as usize;
    let grid: Vec<f64> = (0..=n)
        .map(|i| (i as f64 * search.step_mt).min(search.b_max_mt))
        .collect();
    let mut values: Vec<[f64; 2]> = Vec::with_capacity(grid.len());
    for &b in &grid {
        let f = transition_frequencies(sys, &FieldConfig::new(b, direction)?, t)?;
        values.push([f.zero_plus1_mhz - microwave_mhz, f.zero_minus1_mhz - microwave_mhz]);
    }

    let mut found: Vec<(f64, Transition)> = Vec::new();
    for (k, tr) in Transition::BOTH.into_iter().enumerate() {
        for i in 0..grid.len() {
            let gi = values[i][k];
            if gi == 0.0 {
                found.push((grid[i], tr));
                continue;
            }
            if i + 1 == grid.len() {
                break;
            }
            let gj = values[i + 1][k];
            if gj == 0.0 || gi.signum() == gj.signum() {
                continue;
            }
            let (root, residual) = bisect(|b| mismatch(b, tr), grid[i], grid[i + 1], gi)?;
            // A sign change without a small residual is a label jump, not a root.
            if residual.abs() <= search.tolerance_mhz {
                found.push((root, tr));
            }
        }
    }

    found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<Resonance> = Vec::new();
    for (b, tr) in found {
        match out.last_mut() {
            Some(last) if (last.field_mt - b).abs() < COINCIDENT_FIELD_MT => {
                if !last.has(tr) {
                    last.transitions.push(tr);
                }
            }
            _ => out.push(Resonance {
                field_mt: b,
                transitions: vec![tr],
            }),
        }
    }
    Ok(out)
}

fn bisect<F>(f: F, mut lo: f64, mut hi: f64, mut f_lo: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut best = (lo, f_lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid)?;
        if f_mid.abs() < best.1.abs() {
            best = (mid, f_mid);
        }
        if f_mid == 0.0 {
            return Ok((mid, 0.0));
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let f_hi = f(hi)?;
    if f_hi.abs() < best.1.abs() {
        best = (hi, f_hi);
    }
    Ok(best)
}

/// Level energies (MHz) at a field, for Boltzmann populations.
pub fn level_energies(sys: &SpinSystem, field: &FieldConfig, t: f64) -> Result<[f64; 3]> {
    Ok(labeled_levels(sys, field, t)?.energies_mhz)
}
