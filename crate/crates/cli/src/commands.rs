//! One function per CLI verb. Each reads its inputs, writes plot-ready CSV
//! into the output directory and returns the run report.

use std::fmt::Write as _;
use std::path::PathBuf;

use nalgebra::{DVector, Vector3};
use serde_json::{json, Value};

use spinpol_core::constants::{G_REFERENCE, ROOM_TEMPERATURE_K, X_BAND_MHZ};
use spinpol_core::photodynamics::{
    ground_populations, linearity_deviation, log_grid, steady_state, time_evolve, LevelScheme, PresetOptions,
    SchemePreset,
};
use spinpol_core::populations::{
    self, polarization_degree, population_differences, thermal_populations, zero_population_estimates, Condition,
    LevelPopulations,
};
use spinpol_core::relaxation::{
    self, fit_relaxation, linewidth_to_rate, relaxation_rate, ParameterMask, RelaxationFitOptions, RelaxationParams,
    T1Dataset, T1Point, T1Source, PARAMETER_NAMES,
};
use spinpol_core::sequences::{
    self, add_gaussian_noise, fit_decay, simulate_echo_decay, simulate_inversion_recovery, DecayFitOptions, DecayKind,
};
use spinpol_core::spectra::{self, Lineshape, LineshapeKind, LinewidthOptions};
use spinpol_core::spin::{self, orientations_111, FieldConfig, ResonanceSearch, SpinSystem, Transition, ZfsModel};

use crate::cli::{
    FitDecayArgs, FitT1Args, LinewidthArgs, PolarizationArgs, PumpSweepArgs, ResonanceArgs, SimulateArgs,
};
use crate::config::Config;
use crate::error::CliError;
use crate::formats::{self, num};
use crate::report::{OutDir, RunReport};

pub struct Context {
    pub config: Config,
    pub out: OutDir,
    pub seed: u64,
}

impl Context {
    fn report(&self, command: &str) -> RunReport {
        let mut r = RunReport::new(command, self.seed);
        for (k, v) in self.config.values() {
            r.param(&format!("config.{k}"), v);
        }
        r
    }
}

fn input_path(cli: &Option<PathBuf>, cfg: &Config, section: &str, key: &str, what: &str) -> Result<PathBuf, CliError> {
    cli.clone()
        .or_else(|| cfg.path(section, key))
        .ok_or_else(|| CliError::Usage(format!("{what} required: pass it as an argument or set [{section}] {key}")))
}

fn spin_system(cfg: &Config, d_override: Option<f64>) -> Result<SpinSystem, CliError> {
    let d = d_override.or(cfg.f64("system", "d_mhz")?);
    let zfs = match (cfg.str("system", "zfs_model").unwrap_or("siv0"), d) {
        (_, Some(d)) => ZfsModel::constant(d),
        ("siv0", None) => ZfsModel::siv0(),
        ("constant", None) => {
            return Err(CliError::Usage(format!(
                "{}: constant ZFS model needs [system] d_mhz",
                cfg.describe("system", "zfs_model")
            )))
        }
        (other, None) => {
            return Err(CliError::Usage(format!(
                "{}: unknown zfs_model `{other}` (siv0 or constant)",
                cfg.describe("system", "zfs_model")
            )))
        }
    };
    let g = cfg.f64_or("system", "g", G_REFERENCE)?;
    let axis = cfg.vector("system", "axis")?.unwrap_or_else(|| orientations_111()[0]);
    Ok(SpinSystem::new(zfs, g, axis)?)
}

fn field_direction(cfg: &Config, sys: &SpinSystem) -> Result<Vector3<f64>, CliError> {
    let d = cfg.vector("experiment", "field_direction")?.unwrap_or_else(|| sys.axis());
    if !(d.norm() > 0.0) {
        return Err(CliError::Usage(format!("{}: must be nonzero", cfg.describe("experiment", "field_direction"))));
    }
    Ok(d.normalize())
}

fn orientation_label(v: &Vector3<f64>) -> String {
    let c = |x: f64| if x < 0.0 { "-1" } else { "1" };
    format!("[{}{}{}]", c(v.x), c(v.y), c(v.z))
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn positive(cfg: &Config, section: &str, key: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("{}: must be positive", cfg.describe(section, key))))
    }
}

pub fn resonance(ctx: &Context, args: &ResonanceArgs) -> Result<RunReport, CliError> {
    let cfg = &ctx.config;
    let mut rep = ctx.report("resonance");
    let sys = spin_system(cfg, args.d_mhz)?;
    let dir = field_direction(cfg, &sys)?;
    let temps = match args.temperature_k {
        Some(t) => vec![t],
        None => match cfg.list("resonance", "temperatures_k")? {
            Some(v) => v,
            None => vec![cfg.f64_or("experiment", "temperature_k", 300.0)?],
        },
    };
    let freqs = match args.frequency_mhz {
        Some(f) => vec![f],
        None => match cfg.list("resonance", "frequencies_mhz")? {
            Some(v) => v,
            None => vec![cfg.f64_or("experiment", "frequency_mhz", X_BAND_MHZ)?],
        },
    };
    let orientation = args
        .orientation
        .clone()
        .or_else(|| cfg.str("resonance", "orientation").map(str::to_string))
        .unwrap_or_else(|| "aligned".into());
    let systems: Vec<(String, SpinSystem)> = match orientation.as_str() {
        "aligned" => vec![("aligned".into(), sys.clone())],
        "all111" => orientations_111()
            .iter()
            .map(|a| Ok((orientation_label(a), sys.with_axis(*a)?)))
            .collect::<Result<_, CliError>>()?,
        other => {
            return Err(CliError::Usage(format!("orientation must be `aligned` or `all111`, got `{other}`")));
        }
    };
    let defaults = ResonanceSearch::default();
    let search = ResonanceSearch {
        b_max_mt: cfg.f64_or("resonance", "b_max_mt", defaults.b_max_mt)?,
        step_mt: cfg.f64_or("resonance", "step_mt", defaults.step_mt)?,
        ..defaults
    };
    rep.param("g", sys.g());
    rep.param("orientation", orientation.as_str());
    rep.param("field_direction", vec![dir.x, dir.y, dir.z]);
    rep.param("b_max_mt", search.b_max_mt);
    rep.param("step_mt", search.step_mt);

    let mut csv = String::from(
        "temperature_K,frequency_MHz,orientation,misalignment_deg,d_MHz,b_low_mT,b_high_mT,transitions\n",
    );
    let mut rows = Vec::new();
    for &t in &temps {
        for &nu in &freqs {
            for (label, s) in &systems {
                let lines = spin::resonance_fields_with(s, nu, &dir, t, &search)?;
                let d = s.zfs.at(t)?;
                let mis = FieldConfig::new(1.0, dir)?.misalignment_deg(&s.axis());
                let names = lines
                    .iter()
                    .map(|r| r.transitions.iter().map(|t| t.label()).collect::<Vec<_>>().join("&"))
                    .collect::<Vec<_>>()
                    .join(";");
                let (lo, hi) = (lines.first().map(|r| r.field_mt), lines.last().map(|r| r.field_mt));
                if lines.is_empty() {
                    rep.warn(format!("no resonance at {nu} MHz, {t} K, orientation {label} below {} mT", search.b_max_mt));
                }
                let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{}",
                    num(t),
                    num(nu),
                    label,
                    num(mis),
                    num(d),
                    opt(lo),
                    opt(hi),
                    names
                );
                rows.push(json!({
                    "temperature_K": t,
                    "frequency_MHz": nu,
                    "orientation": label,
                    "d_MHz": d,
                    "lines": lines.iter().map(|r| json!({
                        "field_mT": r.field_mt,
                        "transitions": r.transitions.iter().map(|t| t.label()).collect::<Vec<_>>(),
                    })).collect::<Vec<_>>(),
                }));
            }
        }
    }
    ctx.out.write(&mut rep, "resonance.csv", &csv)?;
    rep.result("rows", rows);
    Ok(rep)
}

fn relaxation_init(cfg: &Config) -> Result<RelaxationParams, CliError> {
    let d = RelaxationParams::siv0();
    Ok(RelaxationParams {
        a_const: cfg.f64_or("fit-t1", "a_const", d.a_const)?,
        a_raman: cfg.f64_or("fit-t1", "a_raman", d.a_raman)?,
        a_orbach: cfg.f64_or("fit-t1", "a_orbach", d.a_orbach)?,
        delta_e_mev: cfg.f64_or("fit-t1", "delta_e_mev", d.delta_e_mev)?,
    })
}

fn params_json(p: &RelaxationParams) -> Value {
    json!({
        "a_const_per_s": p.a_const,
        "a_raman_per_s_K7": p.a_raman,
        "a_orbach_per_s": p.a_orbach,
        "delta_e_meV": p.delta_e_mev,
    })
}

pub fn fit_t1(ctx: &Context, args: &FitT1Args) -> Result<RunReport, CliError> {
    let cfg = &ctx.config;
    let mut rep = ctx.report("fit-t1");
    let path = input_path(&args.dataset, cfg, "fit-t1", "dataset", "T1 dataset")?;
    let text = rep.read_input(&path)?;
    let data = formats::read_t1_csv(&text).map_err(|e| CliError::in_file(&path, e))?;
    let init = relaxation_init(cfg)?;
    let mut fixed: Vec<String> = cfg.words("fit-t1", "fixed");
    fixed.extend(args.fix.iter().cloned());
    let names: Vec<&str> = fixed.iter().map(String::as_str).collect();
    let mask = ParameterMask::fixing(&names)?;
    let options = RelaxationFitOptions {
        linewidth_weight: cfg.f64_or("fit-t1", "linewidth_weight", 0.5)?,
        max_iterations: cfg.usize_or("fit-t1", "max_iterations", 500)?,
        ..Default::default()
    };
    rep.param("init", params_json(&init));
    rep.param("fixed", fixed.clone());
    rep.param("linewidth_weight", options.linewidth_weight);
    rep.param("rows", data.len());

    let fit = fit_relaxation(&data, &init, &mask, &options).map_err(|e| CliError::in_file(&path, e))?;

    let mut csv = String::from("temperature_K,t1_s,model_t1_s,log_residual_Np,source\n");
    for (r, res) in data.rows().iter().zip(&fit.log_residuals) {
        let model = 1.0 / relaxation_rate(&fit.params, r.temperature_k)?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            num(r.temperature_k),
            num(r.t1_s),
            num(model),
            num(*res),
            r.source.as_str()
        );
    }
    ctx.out.write(&mut rep, "fit-t1_residuals.csv", &csv)?;

    let (t_lo, t_hi) = data
        .rows()
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(r.temperature_k), b.max(r.temperature_k)));
    let t_lo = cfg.f64_or("fit-t1", "curve_t_min_k", t_lo)?;
    let t_hi = cfg.f64_or("fit-t1", "curve_t_max_k", t_hi)?;
    let n = cfg.usize_or("fit-t1", "curve_points", 200)?.max(2);
    let mut curve = String::from("temperature_K,rate_per_s,t1_s\n");
    for i in 0..n {
        let t = t_lo * (t_hi / t_lo).powf(i as f64 / (n - 1) as f64);
        let rate = relaxation_rate(&fit.params, t)?;
        let _ = writeln!(curve, "{},{},{}", num(t), num(rate), num(1.0 / rate));
    }
    ctx.out.write(&mut rep, "fit-t1_model.csv", &curve)?;

    let se = fit.std_errors();
    rep.result("params", params_json(&fit.params));
    rep.result(
        "std_errors",
        json!({
            "a_const_per_s": se[0],
            "a_raman_per_s_K7": se[1],
            "a_orbach_per_s": se[2],
            "delta_e_meV": se[3],
        }),
    );
    rep.result("parameter_order", PARAMETER_NAMES.to_vec());
    rep.result(
        "covariance",
        (0..4).map(|i| (0..4).map(|j| fit.covariance[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>(),
    );
    rep.result("chi_square", fit.chi_square);
    rep.result("iterations", fit.iterations);
    rep.result("converged", fit.converged);
    if !fit.converged {
        rep.failure = Some(format!(
            "fit did not converge after {} iterations; best iterate written",
            fit.iterations
        ));
    }
    Ok(rep)
}

pub fn fit_decay_cmd(ctx: &Context, args: &FitDecayArgs) -> Result<RunReport, CliError> {
    let cfg = &ctx.config;
    let mut rep = ctx.report("fit-decay");
    let path = input_path(&args.curve, cfg, "fit-decay", "curve", "decay curve")?;
    let text = rep.read_input(&path)?;
    let file = formats::read_decay_csv(&text).map_err(|e| CliError::in_file(&path, e))?;
    let options = DecayFitOptions {
        pinned_m_eq: args.pin_m_eq.or(cfg.f64("fit-decay", "pinned_m_eq")?),
        stretch: args.stretch || cfg.bool_or("fit-decay", "stretch", false)?,
        max_iterations: cfg.usize_or("fit-decay", "max_iterations", 500)?,
    };
    if options.stretch {
        rep.warn("stretched exponential enabled; exploratory fit only");
    }
    rep.param("kind", file.curve.kind().as_str());
    if let Some(a) = file.abscissa {
        rep.param("input_abscissa", a.as_str());
        rep.param("stored_abscissa", "2tau");
    }
    rep.param("pinned_m_eq", options.pinned_m_eq);
    rep.param("stretch", options.stretch);

    let fit = fit_decay(&file.curve, &options).map_err(|e| CliError::in_file(&path, e))?;
    let beta = fit.stretch().unwrap_or(1.0);
    let t = fit.time_constant_s;
    let kernel = |x: f64| (-(x / t).powf(beta)).exp();
    let model = |x: f64| match file.curve.kind() {
        DecayKind::InversionRecovery => {
            let meq = options.pinned_m_eq.or(fit.value("m_eq")).expect("m_eq known");
            let minit = fit.value("m_init").expect("m_init fitted");
            meq - (meq - minit) * kernel(x)
        }
        DecayKind::EchoDecay => fit.value("s0").expect("s0 fitted") * kernel(x),
    };
    let mut csv = String::from("delay_s,amplitude_au,model_au,residual_au\n");
    for p in file.curve.points() {
        let m = model(p.delay_s);
        let _ = writeln!(csv, "{},{},{},{}", num(p.delay_s), num(p.amplitude), num(m), num(p.amplitude - m));
    }
    ctx.out.write(&mut rep, "fit-decay_fit.csv", &csv)?;

    rep.result("time_constant_s", t);
    rep.result("time_constant_sigma_s", fit.time_constant_sigma_s());
    let mut values = serde_json::Map::new();
    let mut errors = serde_json::Map::new();
    for (k, name) in fit.names.iter().enumerate() {
        values.insert(name.to_string(), json!(fit.values[k]));
        errors.insert(name.to_string(), json!(fit.covariance[(k, k)].max(0.0).sqrt()));
    }
    rep.result("values", Value::Object(values));
    rep.result("std_errors", Value::Object(errors));
    rep.result("chi_square", fit.chi_square);
    rep.result("iterations", fit.iterations);
    Ok(rep)
}

pub fn polarization(ctx: &Context, args: &PolarizationArgs) -> Result<RunReport, CliError> {
    let cfg = &ctx.config;
    let mut rep = ctx.report("polarization");
    let path = input_path(&args.intensities, cfg, "polarization", "intensities", "intensity file")?;
    let text = rep.read_input(&path)?;
    let table = formats::read_intensities_csv(&text).map_err(|e| CliError::in_file(&path, e))?;
    let sys = spin_system(cfg, None)?;
    let dir = field_direction(cfg, &sys)?;
    let nu = cfg.f64_or("experiment", "frequency_mhz", X_BAND_MHZ)?;
    let t_rt = table.dark_reference.temperature_k;
    if let Some(r) = cfg.f64("experiment", "reference_temperature_k")? {
        if r != t_rt {
            return Err(CliError::Precondition(format!(
                "{} is {r} K but the dark reference row is at {t_rt} K",
                cfg.describe("experiment", "reference_temperature_k")
            )));
        }
    }
    let field_mt = match cfg.f64("experiment", "field_mt")? {
        Some(b) => b,
        None => spin::resonance_fields(&sys, nu, &dir, t_rt)?
            .iter()
            .find(|r| r.has(Transition::ZeroPlus1))
            .map(|r| r.field_mt)
            .ok_or_else(|| CliError::Precondition(format!("no 0<->+1 resonance at {nu} MHz; set [experiment] field_mt")))?,
    };
    let field = FieldConfig::new(field_mt, dir)?;
    let thermal = |t: f64| -> Result<LevelPopulations, CliError> {
        Ok(thermal_populations(spin::level_energies(&sys, &field, t)?, t)?)
    };
    let eta_rt = population_differences(&thermal(t_rt)?);
    rep.param("frequency_mhz", nu);
    rep.param("field_mt", field_mt);
    rep.param("reference_temperature_k", t_rt);
    rep.param("eta_dark_rt", vec![eta_rt.plus1_zero, eta_rt.zero_minus1]);

    let mut csv = String::from(
        "line,temperature_K,p_plus1_frac,p_zero_frac,p_minus1_frac,xi_percent,p_zero_low_line_frac,p_zero_high_line_frac,status\n",
    );
    let mut rows = Vec::new();
    let mut flagged = 0;
    for (line, light) in &table.light {
        let d = populations::light_differences(light, &table.dark_reference, &eta_rt)?;
        match populations::populations_under_light(light, &table.dark_reference, &eta_rt) {
            Ok(p) => {
                let dark = thermal(light.temperature_k)?;
                let xi = polarization_degree(&p, &dark)?;
                let est = zero_population_estimates(&d);
                let _ = writeln!(
                    csv,
                    "{line},{},{},{},{},{},{},{},ok",
                    num(light.temperature_k),
                    num(p.p_plus1),
                    num(p.p_zero),
                    num(p.p_minus1),
                    num(xi),
                    num(est.low_line),
                    num(est.high_line)
                );
                rows.push(json!({"line": line, "xi_percent": xi, "populations": p.as_array()}));
            }
            Err(e) => {
                flagged += 1;
                rep.warn(format!("{}:{line}: {e}", path.display()));
                let _ = writeln!(csv, "{line},{},,,,,,,inconsistent", num(light.temperature_k));
                rows.push(json!({"line": line, "status": "inconsistent"}));
            }
        }
    }
    ctx.out.write(&mut rep, "polarization.csv", &csv)?;
    rep.result("rows", rows);
    rep.result("flagged_rows", flagged);
    Ok(rep)
}

fn load_scheme(
    ctx: &Context,
    rep: &mut RunReport,
    section: &str,
    file: &Option<PathBuf>,
    preset: &Option<String>,
) -> Result<LevelScheme, CliError> {
    let cfg = &ctx.config;
    let file = file.clone().or_else(|| cfg.path(section, "scheme"));
    let preset = preset.clone().or_else(|| cfg.str(section, "preset").map(str::to_string));
    let temperature_k = cfg.f64_or(section, "temperature_k", PresetOptions::default().temperature_k)?;
    rep.param("temperature_k", temperature_k);
    match (file, preset) {
        (Some(_), Some(_)) => Err(CliError::Usage("give either a scheme file or a preset, not both".into())),
        (Some(path), None) => {
            let text = rep.read_input(&path)?;
            let scheme = LevelScheme::parse(&text).map_err(|e| CliError::in_file(&path, e))?;
            rep.param("scheme", path.display().to_string());
            let relax = if section == "pump-sweep" { cfg.bool_or(section, "spin_lattice", true)? } else { true };
            if relax {
                let t1 = relaxation::t1_seconds(&RelaxationParams::siv0(), temperature_k)?;
                rep.param("spin_lattice_rate_per_s", 1.0 / t1);
                Ok(scheme.with_spin_lattice(1.0 / t1).map_err(|e| CliError::in_file(&path, e))?)
            } else {
                Ok(scheme)
            }
        }
        (None, preset) => {
            let name = preset.unwrap_or_else(|| SchemePreset::A.id().to_string());
            let p = SchemePreset::parse(&name)
                .ok_or_else(|| CliError::Usage(format!("unknown preset `{name}` (scheme-A or scheme-B)")))?;
            let below = if section == "pump-sweep" { cfg.bool_or(section, "below_zpl_pump", false)? } else { false };
            rep.param("preset", p.id());
            rep.param("preset_description", p.description());
            Ok(p.build(&PresetOptions {
                temperature_k,
                below_zpl_pump: below,
                ..Default::default()
            })?)
        }
    }
}

pub fn pump_sweep(ctx: &Context, args: &PumpSweepArgs) -> Result<RunReport, CliError> {
    let cfg = &ctx.config;
    let mut rep = ctx.report("pump-sweep");
    let scheme = load_scheme(ctx, &mut rep, "pump-sweep", &args.scheme, &args.preset)?;
    let lo = args.pump_min.map_or_else(|| cfg.f64_or("pump-sweep", "pump_min", 1e-9), Ok)?;
    let hi = args.pump_max.map_or_else(|| cfg.f64_or("pump-sweep", "pump_max", 1e3), Ok)?;
    let per_decade = args
        .points_per_decade
        .map_or_else(|| cfg.usize_or("pump-sweep", "points_per_decade", 5), Ok)?;
    if !(lo > 0.0 && hi > lo) {
        return Err(CliError::Precondition(format!(
            "pump grid needs at least two points with 0 < pump_min < pump_max, got {lo}..{hi}"
        )));
    }
    let grid = log_grid(lo, hi, per_decade)?;
    if grid.len() < 2 {
        return Err(CliError::Precondition("pump grid needs at least two points".into()));
    }
    rep.param("pump_min", lo);
    rep.param("pump_max", hi);
    rep.param("points_per_decade", per_decade);

    let dark = ground_populations(&scheme, &steady_state(&scheme, 0.0)?)?;
    let mut csv = String::from("pump_rel,xi_percent,p_plus1_frac,p_zero_frac,p_minus1_frac\n");
    let mut series = Vec::with_capacity(grid.len());
    for &pump in &grid {
        let g = ground_populations(&scheme, &steady_state(&scheme, pump)?)?;
        let xi = polarization_degree(&g, &dark)?;
        series.push((pump, xi));
        let _ = writeln!(csv, "{},{},{},{},{}", num(pump), num(xi), num(g.p_plus1), num(g.p_zero), num(g.p_minus1));
    }
    ctx.out.write(&mut rep, "pump-sweep.csv", &csv)?;
    ctx.out.write(&mut rep, "pump-sweep_scheme.txt", &scheme.to_text())?;

    let lowest: Vec<(f64, f64)> = series.iter().copied().filter(|(p, _)| *p <= 10.0 * lo * (1.0 + 1e-9)).collect();
    let all_zero = series.iter().all(|(_, xi)| *xi == 0.0);
    let score = if all_zero { 0.0 } else { linearity_deviation(&lowest) };
    if lowest.len() < 3 {
        rep.warn("fewer than three points in the lowest pump decade; linearity score is not meaningful");
    } else if score >= 0.01 {
        rep.warn(format!("polarization deviates from linear by {:.2}% over the lowest decade", 100.0 * score));
    }
    rep.result("linearity_deviation_lowest_decade", score);
    rep.result("xi_percent_max_pump", series.last().map(|s| s.1).unwrap_or(0.0));
    Ok(rep)
}

fn decay_grid(cfg: &Config, tau_max: f64) -> Result<Vec<f64>, CliError> {
    let points = cfg.usize_or("simulate", "points", 60)?;
    if points < 2 {
        return Err(CliError::Usage(format!("{}: need at least 2 points", cfg.describe("simulate", "points"))));
    }
    Ok(linspace(0.0, tau_max, points))
}

pub fn simulate(ctx: &Context, args: &SimulateArgs) -> Result<RunReport, CliError> {
    let cfg = &ctx.config;
    let kind = args
        .kind
        .clone()
        .or_else(|| cfg.str("simulate", "kind").map(str::to_string))
        .unwrap_or_else(|| "inversion-recovery".into());
    let mut rep = ctx.report("simulate");
    rep.param("kind", kind.as_str());
    let noise = cfg.f64_or("simulate", "noise", 0.0)?;
    let noisy = |rep: &mut RunReport, c: sequences::DecayCurve| -> Result<sequences::DecayCurve, CliError> {
        if noise > 0.0 {
            rep.param("noise_fraction", noise);
            Ok(add_gaussian_noise(&c, noise, ctx.seed)?)
        } else {
            Ok(c)
        }
    };
    match kind.as_str() {
        "inversion-recovery" => {
            let t1 = positive(cfg, "simulate", "t1_s", cfg.f64_or("simulate", "t1_s", 18.0)?)?;
            let m_eq = cfg.f64_or("simulate", "m_eq", 1.0)?;
            let m_init = cfg.f64_or("simulate", "m_init", -1.0)?;
            let tau_max = cfg.f64_or("simulate", "tau_max_s", 5.0 * t1)?;
            rep.param("t1_s", t1);
            rep.param("m_eq", m_eq);
            rep.param("m_init", m_init);
            let c = simulate_inversion_recovery(t1, m_eq, m_init, &decay_grid(cfg, tau_max)?)?;
            let c = noisy(&mut rep, c)?;
            ctx.out.write(&mut rep, "simulate_inversion-recovery.csv", &formats::write_decay_csv(&c))?;
        }
        "echo-decay" => {
            let t2 = positive(cfg, "simulate", "t2_s", cfg.f64_or("simulate", "t2_s", 103e-6)?)?;
            let s0 = cfg.f64_or("simulate", "s0", 1.0)?;
            // tau here is the pulse spacing; the curve runs to 2 tau_max.
            let tau_max = cfg.f64_or("simulate", "tau_max_s", t2)?;
            rep.param("t2_s", t2);
            rep.param("s0", s0);
            rep.param("abscissa", "2tau");
            let c = simulate_echo_decay(t2, s0, &decay_grid(cfg, tau_max)?)?;
            let c = noisy(&mut rep, c)?;
            ctx.out.write(&mut rep, "simulate_echo-decay.csv", &formats::write_decay_csv(&c))?;
        }
        "t1-dataset" => simulate_t1_dataset(ctx, &mut rep)?,
        "intensities" => simulate_intensities(ctx, &mut rep)?,
        "spectrum" => simulate_spectrum(ctx, &mut rep)?,
        "trajectory" => simulate_trajectory(ctx, &mut rep, args)?,
        other => {
            return Err(CliError::Usage(format!(
                "unknown simulate kind `{other}` (inversion-recovery, echo-decay, t1-dataset, intensities, spectrum, trajectory)"
            )))
        }
    }
    Ok(rep)
}

fn simulate_t1_dataset(ctx: &Context, rep: &mut RunReport) -> Result<(), CliError> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let cfg = &ctx.config;
    let params = relaxation_init(cfg)?;
    let lo = positive(cfg, "simulate", "temperature_min_k", cfg.f64_or("simulate", "temperature_min_k", 11.0)?)?;
    let hi = cfg.f64_or("simulate", "temperature_max_k", 500.0)?;
    let n = cfg.usize_or("simulate", "points", 20)?;
    if !(hi > lo) || n < 2 {
        return Err(CliError::Usage("t1-dataset needs temperature_min_k < temperature_max_k and points >= 2".into()));
    }
    let noise = cfg.f64_or("simulate", "noise", 0.0)?;
    let normal = Normal::new(0.0, noise.max(0.0)).map_err(|e| CliError::Usage(format!("noise: {e}")))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let t = lo * (hi / lo).powf(i as f64 / (n - 1) as f64);
        let t1 = relaxation::t1_seconds(&params, t)?;
        let factor = if noise > 0.0 { (1.0 + normal.sample(&mut rng)).max(1e-3) } else { 1.0 };
        rows.push(T1Point {
            temperature_k: t,
            t1_s: t1 * factor,
            sigma_s: (noise > 0.0).then_some(noise * t1),
            source: T1Source::Direct,
        });
    }
    rep.param("params", params_json(&params));
    rep.param("noise_fraction", noise);
    ctx.out.write(rep, "simulate_t1-dataset.csv", &formats::write_t1_csv(&T1Dataset::new(rows)?))?;
    Ok(())
}

fn simulate_intensities(ctx: &Context, rep: &mut RunReport) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let sys = spin_system(cfg, None)?;
    let dir = field_direction(cfg, &sys)?;
    let nu = cfg.f64_or("experiment", "frequency_mhz", X_BAND_MHZ)?;
    let t_rt = cfg.f64_or("experiment", "reference_temperature_k", ROOM_TEMPERATURE_K)?;
    let t = match cfg.f64("simulate", "temperature_k")? {
        Some(t) => t,
        None => cfg.f64_or("experiment", "temperature_k", 10.0)?,
    };
    let field_mt = match cfg.f64("experiment", "field_mt")? {
        Some(b) => b,
        None => spin::resonance_fields(&sys, nu, &dir, t_rt)?
            .iter()
            .find(|r| r.has(Transition::ZeroPlus1))
            .map(|r| r.field_mt)
            .ok_or_else(|| CliError::Precondition(format!("no 0<->+1 resonance at {nu} MHz; set [experiment] field_mt")))?,
    };
    let field = FieldConfig::new(field_mt, dir)?;
    let eta_rt = population_differences(&thermal_populations(spin::level_energies(&sys, &field, t_rt)?, t_rt)?);
    let scale = cfg.f64_or("simulate", "dark_scale", 1000.0)?;
    let dark = populations::TransitionIntensities {
        i_low: scale * eta_rt.plus1_zero,
        i_high: scale * eta_rt.zero_minus1,
        condition: Condition::Dark,
        temperature_k: t_rt,
    };
    let pops = match cfg.list("simulate", "populations")? {
        Some(v) if v.len() == 3 => LevelPopulations::new(v[0], v[1], v[2])?,
        Some(_) => {
            return Err(CliError::Usage(format!(
                "{}: expected p(+1), p(0), p(-1)",
                cfg.describe("simulate", "populations")
            )))
        }
        None => LevelPopulations::new(0.3, 0.4, 0.3)?,
    };
    let light = populations::light_intensities(&pops, &dark, &eta_rt, t)?;
    rep.param("field_mt", field_mt);
    rep.param("populations", pops.as_array().to_vec());
    rep.param("dark_scale", scale);
    let table = formats::IntensityTable {
        dark_reference: dark,
        light: vec![(0, light)],
    };
    ctx.out.write(rep, "simulate_intensities.csv", &formats::write_intensities_csv(&table))?;
    Ok(())
}

fn simulate_spectrum(ctx: &Context, rep: &mut RunReport) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let sys = spin_system(cfg, None)?;
    let dir = field_direction(cfg, &sys)?;
    let nu = cfg.f64_or("experiment", "frequency_mhz", X_BAND_MHZ)?;
    let t = match cfg.f64("simulate", "temperature_k")? {
        Some(t) => t,
        None => cfg.f64_or("experiment", "temperature_k", ROOM_TEMPERATURE_K)?,
    };
    let lo = cfg.f64_or("simulate", "field_min_mt", 300.0)?;
    let hi = cfg.f64_or("simulate", "field_max_mt", 400.0)?;
    let step = cfg.f64_or("simulate", "field_step_mt", 0.01)?;
    let grid = spectra::uniform_grid(lo, hi, step)?;
    let kind_name = cfg.str("simulate", "lineshape").unwrap_or("lorentzian");
    let kind = LineshapeKind::parse(kind_name)
        .ok_or_else(|| CliError::Usage(format!("{}: lorentzian or gaussian", cfg.describe("simulate", "lineshape"))))?;
    let shape = Lineshape::new(kind, cfg.f64_or("simulate", "linewidth_mt", 0.2)?)?;
    let (pops, condition) = match cfg.list("simulate", "populations")? {
        Some(v) if v.len() == 3 => (LevelPopulations::new(v[0], v[1], v[2])?, Condition::Light),
        Some(_) => {
            return Err(CliError::Usage(format!(
                "{}: expected p(+1), p(0), p(-1)",
                cfg.describe("simulate", "populations")
            )))
        }
        None => {
            // Thermal populations at the grid centre.
            let centre = FieldConfig::new(0.5 * (lo + hi), dir)?;
            (thermal_populations(spin::level_energies(&sys, &centre, t)?, t)?, Condition::Dark)
        }
    };
    rep.param("temperature_k", t);
    rep.param("frequency_mhz", nu);
    rep.param("populations", pops.as_array().to_vec());
    rep.param("lineshape", kind.as_str());
    rep.param("linewidth_mt", shape.width_pp_mt());
    let mut s = spectra::synthesize_cw_spectrum(&sys, &pops, &shape, nu, &dir, &grid, t)?;
    s.condition = Some(condition);
    if let Some(w) = &s.warning {
        rep.warn(w.clone());
    }
    rep.result(
        "lines",
        s.lines
            .iter()
            .map(|l| {
                json!({
                    "transition": l.transition.label(),
                    "field_mT": l.field_mt,
                    "population_difference": l.population_difference,
                })
            })
            .collect::<Vec<_>>(),
    );
    ctx.out.write(rep, "simulate_spectrum.csv", &formats::write_spectrum_csv(&s))?;
    Ok(())
}

fn simulate_trajectory(ctx: &Context, rep: &mut RunReport, args: &SimulateArgs) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let scheme = load_scheme(ctx, rep, "simulate", &args.scheme, &args.preset)?;
    let pump = cfg.f64_or("simulate", "pump", 1.0)?;
    let t_max = positive(cfg, "simulate", "t_max_s", cfg.f64_or("simulate", "t_max_s", 1.0)?)?;
    let points = cfg.usize_or("simulate", "points", 60)?.max(2);
    let mut times = vec![0.0];
    times.extend(log_grid(t_max * 1e-9, t_max, points.div_ceil(9).max(1))?);
    let mut p0 = DVector::zeros(scheme.len());
    for s in spin::Sublevel::ALL {
        let k = scheme
            .ground_index(s)
            .ok_or_else(|| CliError::Precondition("scheme has no complete ground triplet".into()))?;
        p0[k] = 1.0 / 3.0;
    }
    let tr = time_evolve(&scheme, pump, &p0, &times)?;
    let mut csv = String::from("time_s");
    for s in scheme.states() {
        let _ = write!(csv, ",{}_frac", s.name);
    }
    csv.push('\n');
    for (t, p) in tr.times_s.iter().zip(&tr.populations) {
        csv.push_str(&num(*t));
        for v in p.iter() {
            let _ = write!(csv, ",{}", num(*v));
        }
        csv.push('\n');
    }
    rep.param("pump", pump);
    rep.param("t_max_s", t_max);
    let ss = steady_state(&scheme, pump)?;
    let last = tr.populations.last().expect("nonempty grid");
    rep.result("distance_to_steady_state", (last - &ss).amax());
    ctx.out.write(rep, "simulate_trajectory.csv", &csv)?;
    Ok(())
}

pub fn linewidth(ctx: &Context, args: &LinewidthArgs) -> Result<RunReport, CliError> {
    let cfg = &ctx.config;
    let mut rep = ctx.report("linewidth");
    let path = input_path(&args.spectrum, cfg, "linewidth", "spectrum", "spectrum file")?;
    let text = rep.read_input(&path)?;
    let spectrum = formats::read_spectrum_csv(&text).map_err(|e| CliError::in_file(&path, e))?;
    let window = match &args.window {
        Some(w) => {
            let v: Vec<f64> = w
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::Usage(format!("--window expects lo,hi in mT, got `{w}`")))?;
            v
        }
        None => cfg.list("linewidth", "window_mt")?.unwrap_or_else(|| {
            vec![spectrum.fields_mt[0], *spectrum.fields_mt.last().expect("nonempty")]
        }),
    };
    let [lo, hi] = window[..] else {
        return Err(CliError::Usage("window needs exactly two values, lo and hi".into()));
    };
    let offset = args.offset_mhz.map_or_else(|| cfg.f64_or("linewidth", "offset_mhz", 0.25), Ok)?;
    let detrend = args.detrend || cfg.bool_or("linewidth", "detrend", false)?;
    rep.param("window_mt", vec![lo, hi]);
    rep.param("offset_mhz", offset);
    rep.param("detrend", detrend);

    let w = spectra::peak_to_peak_linewidth(&spectrum, (lo, hi), &LinewidthOptions { detrend })
        .map_err(|e| CliError::in_file(&path, e))?;
    let rate = linewidth_to_rate(w, offset)?;
    rep.result("linewidth_pp_mT", w);
    rep.result("linewidth_MHz", rate.linewidth_mhz);
    rep.result("rate_per_s", rate.rate_per_s);
    rep.result("time_constant_s", rate.time_constant_s());
    rep.warn("rate is a 1/T1 estimate, valid only where T2 is limited by 2 T1");

    let mut csv = String::from("temperature_K,linewidth_pp_mT,linewidth_MHz,rate_per_s,time_constant_s\n");
    let t = spectrum.temperature_k;
    let t_field = if t.is_finite() { num(t) } else { String::new() };
    let _ = writeln!(
        csv,
        "{t_field},{},{},{},{}",
        num(w),
        num(rate.linewidth_mhz),
        num(rate.rate_per_s),
        num(rate.time_constant_s())
    );
    ctx.out.write(&mut rep, "linewidth.csv", &csv)?;
    if t.is_finite() && t > 0.0 {
        let row = T1Dataset::new(vec![T1Point {
            temperature_k: t,
            t1_s: rate.time_constant_s(),
            sigma_s: None,
            source: T1Source::Linewidth,
        }])?;
        ctx.out.write(&mut rep, "linewidth_t1.csv", &formats::write_t1_csv(&row))?;
    } else {
        rep.warn("spectrum has no temperature_K metadata; no T1 row written");
    }
    Ok(rep)
}
