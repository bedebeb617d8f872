//! Acceptance checks. One PASS/FAIL line per criterion; exits nonzero if
//! any criterion fails.

use std::time::{Duration, Instant};

use nalgebra::Vector3;
use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use spinpol_core::constants::{GAMMA_E_MHZ_PER_MT, ROOM_TEMPERATURE_K};
use spinpol_core::photodynamics::{
    ground_populations, linearity_deviation, log_grid, polarization_vs_pump, steady_state, LevelScheme, PresetOptions,
    SchemePreset, StateKind,
};
use spinpol_core::populations::{
    light_intensities, polarization_degree, population_differences, populations_under_light, thermal_populations,
    Condition, LevelPopulations, TransitionIntensities,
};
use spinpol_core::relaxation::{
    fit_relaxation, linewidth_to_rate, linewidth_to_rate_exact, t1_seconds, ParameterMask,
    RelaxationFitOptions, RelaxationParams, T1Dataset, T1Point, T1Source,
};
use spinpol_core::sequences::{
    add_gaussian_noise, fit_decay, simulate_echo_decay, simulate_inversion_recovery, DecayFitOptions,
};
use spinpol_core::spectra::{
    double_integral, peak_to_peak_linewidth, synthesize_cw_spectrum, uniform_grid, Lineshape, LinewidthOptions,
};
use spinpol_core::spin::{orientations_111, FieldConfig, Sublevel, SpinSystem, ZfsModel};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(id: u32, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let pass = out.pass && in_time;
    println!(
        "{} criterion {id} {name}: {} [{:.3} s, limit {} s]",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn c1_resonance() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let out = dir.path().to_str().expect("utf-8 path").to_string();
    let report = spinpol_cli::run_from([
        "spinpol",
        "--out-dir",
        &out,
        "resonance",
        "--d-mhz",
        "1000",
        "--frequency-mhz",
        "9750",
    ])
    .expect("resonance runs");
    let rows = &report.results["rows"];
    let line = rows[0]["lines"]
        .as_array()
        .expect("lines")
        .iter()
        .find(|l| l["transitions"].as_array().unwrap().iter().any(|t| t == "0<->+1"))
        .expect("0<->+1 line");
    let b = line["field_mT"].as_f64().unwrap();
    // Parallel field: the 0 <-> +1 splitting is D + gamma B exactly.
    let oracle = (9750.0 - 1000.0) / GAMMA_E_MHZ_PER_MT;
    let pass = (311.0..=316.0).contains(&b) && (b - oracle).abs() < 0.01;
    Outcome {
        pass,
        detail: format!("B = {b:.4} mT, oracle {oracle:.4} mT, |diff| = {:.2e} mT", (b - oracle).abs()),
    }
}

fn c2_t1_model() -> Outcome {
    let p = RelaxationParams::siv0();
    let t1 = t1_seconds(&p, 15.0).unwrap();
    let temps = log_grid(11.0, 500.0, 200).unwrap();
    let mut monotone = true;
    let mut prev = f64::INFINITY;
    for t in temps {
        let v = t1_seconds(&p, t).unwrap();
        monotone &= v < prev;
        prev = v;
    }
    Outcome {
        pass: (20.0..=30.0).contains(&t1) && monotone,
        detail: format!("T1(15 K) = {t1:.2} s, monotone over 11-500 K: {monotone}"),
    }
}

fn c3_fit_recovery() -> Outcome {
    let truth = RelaxationParams::siv0();
    let init = RelaxationParams::new(0.05, 1e-12, 5e4, 18.0).unwrap();
    let temps: Vec<f64> = (0..20).map(|i| 11.0 * (500.0f64 / 11.0).powf(i as f64 / 19.0)).collect();
    let noise = Normal::new(0.0, 0.05).unwrap();
    let trials = 50;
    let mut ok = 0;
    let mut failures = 0;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = temps
            .iter()
            .map(|&t| {
                let t1 = t1_seconds(&truth, t).unwrap() * (1.0 + noise.sample(&mut rng));
                T1Point {
                    temperature_k: t,
                    t1_s: t1,
                    sigma_s: None,
                    source: T1Source::Direct,
                }
            })
            .collect();
        let data = T1Dataset::new(rows).unwrap();
        match fit_relaxation(&data, &init, &ParameterMask::all_free(), &RelaxationFitOptions::default()) {
            Ok(fit) if (fit.params.delta_e_mev - 22.0).abs() <= 0.15 * 22.0 => ok += 1,
            Ok(_) => {}
            Err(_) => failures += 1,
        }
    }
    let frac = ok as f64 / trials as f64;
    Outcome {
        pass: frac >= 0.9,
        detail: format!("{ok}/{trials} trials within 15% of 22 meV ({failures} fit errors)"),
    }
}

fn c4_bookkeeping() -> Outcome {
    let sys = SpinSystem::new(ZfsModel::constant(1000.0), 2.0028, orientations_111()[0]).unwrap();
    let field = FieldConfig::new(312.2, sys.axis()).unwrap();
    let t_rt = ROOM_TEMPERATURE_K;
    let dark_rt = thermal_populations(spinpol_core::spin::level_energies(&sys, &field, t_rt).unwrap(), t_rt).unwrap();
    let eta_rt = population_differences(&dark_rt);
    let i_dark = TransitionIntensities {
        i_low: 1000.0 * eta_rt.plus1_zero,
        i_high: 1000.0 * eta_rt.zero_minus1,
        condition: Condition::Dark,
        temperature_k: t_rt,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let w: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let p = LevelPopulations::from_weights(w[0], w[1], w[2]).unwrap();
        let t = rng.random_range(2.0..300.0);
        let i_light = light_intensities(&p, &i_dark, &eta_rt, t).unwrap();
        let back = populations_under_light(&i_light, &i_dark, &eta_rt).unwrap();
        let dark_t = thermal_populations(spinpol_core::spin::level_energies(&sys, &field, t).unwrap(), t).unwrap();
        let xi = polarization_degree(&p, &dark_t).unwrap();
        let xi_back = polarization_degree(&back, &dark_t).unwrap();
        for (a, b) in p.as_array().iter().zip(back.as_array()) {
            worst = worst.max((a - b).abs());
        }
        worst = worst.max((xi - xi_back).abs() / 100.0);
    }
    let dark = thermal_populations([0.0, -1000.0, 0.0], 10.0).unwrap();
    let xi_zero = polarization_degree(&dark, &dark).unwrap();
    let xi_full = polarization_degree(&LevelPopulations::new(0.0, 1.0, 0.0).unwrap(), &dark).unwrap();
    let pass = worst <= 1e-12 && xi_zero == 0.0 && xi_full == 100.0;
    Outcome {
        pass,
        detail: format!("max round-trip error {worst:.2e} over 1000 cases; xi(dark) = {xi_zero}%, xi(p0=1) = {xi_full}%"),
    }
}

fn symmetric_scheme() -> LevelScheme {
    let mut s = LevelScheme::new();
    for (m, name) in [(Sublevel::Plus1, "+1"), (Sublevel::Zero, "0"), (Sublevel::Minus1, "-1")] {
        s.add_state(&format!("GS{name}"), StateKind::Ground, Some(m)).unwrap();
        s.add_state(&format!("ES{name}"), StateKind::Excited, Some(m)).unwrap();
    }
    s.add_state("S", StateKind::Shelving, None).unwrap();
    for name in ["+1", "0", "-1"] {
        s.add_rate(&format!("GS{name}"), &format!("ES{name}"), 1e4, true).unwrap();
        s.add_rate(&format!("ES{name}"), &format!("GS{name}"), 1e8, false).unwrap();
        s.add_rate(&format!("ES{name}"), "S", 1e6, false).unwrap();
        s.add_rate("S", &format!("GS{name}"), 1e6, false).unwrap();
    }
    s.with_spin_lattice(0.01).unwrap()
}

fn c5_photodynamics() -> Outcome {
    let grid = log_grid(1e-9, 1e3, 5).unwrap();
    let mut worst_sum = 0.0f64;
    let mut min_pop = f64::INFINITY;
    let mut worst_lin = 0.0f64;
    for preset in [SchemePreset::A, SchemePreset::B] {
        let scheme = preset.build(&PresetOptions::default()).unwrap();
        for &p in &grid {
            let ss = steady_state(&scheme, p).unwrap();
            worst_sum = worst_sum.max((ss.sum() - 1.0).abs());
            min_pop = min_pop.min(ss.min());
        }
        let series = polarization_vs_pump(&scheme, &grid).unwrap();
        let lowest: Vec<(f64, f64)> = series.into_iter().filter(|(p, _)| *p <= 1e-8 * (1.0 + 1e-9)).collect();
        worst_lin = worst_lin.max(linearity_deviation(&lowest));
    }
    let sym = symmetric_scheme();
    let dark = ground_populations(&sym, &steady_state(&sym, 0.0).unwrap()).unwrap();
    let mut worst_sym = 0.0f64;
    for &p in &grid {
        let g = ground_populations(&sym, &steady_state(&sym, p).unwrap()).unwrap();
        worst_sym = worst_sym.max(polarization_degree(&g, &dark).unwrap().abs());
    }
    let pass = min_pop >= 0.0 && worst_sum <= 1e-10 && worst_lin < 0.01 && worst_sym <= 1e-10;
    Outcome {
        pass,
        detail: format!(
            "min population {min_pop:.2e}, max |sum-1| {worst_sum:.2e}, lowest-decade nonlinearity {:.3e}%, symmetric |xi| {worst_sym:.2e}%",
            100.0 * worst_lin
        ),
    }
}

fn c6_sequences() -> Outcome {
    let opts = DecayFitOptions {
        pinned_m_eq: None,
        stretch: false,
        max_iterations: 500,
    };
    let ir_grid: Vec<f64> = (0..60).map(|i| i as f64 * 90.0 / 59.0).collect();
    let ir = simulate_inversion_recovery(18.0, 1.0, -1.0, &ir_grid).unwrap();
    let mut worst_clean = (fit_decay(&ir, &opts).unwrap().time_constant_s - 18.0).abs() / 18.0;
    for t2 in [2.0e-6, 103e-6] {
        let taus: Vec<f64> = (0..60).map(|i| i as f64 * 2.5 * t2 / 59.0).collect();
        let c = simulate_echo_decay(t2, 1.0, &taus).unwrap();
        worst_clean = worst_clean.max((fit_decay(&c, &opts).unwrap().time_constant_s - t2).abs() / t2);
    }

    let mut worst_bias = 0.0f64;
    let trials = 100;
    let echo_taus: Vec<f64> = (0..60).map(|i| i as f64 * 2.5 * 103e-6 / 59.0).collect();
    let echo = simulate_echo_decay(103e-6, 1.0, &echo_taus).unwrap();
    for (clean, truth) in [(&ir, 18.0), (&echo, 103e-6)] {
        let mut sum = 0.0;
        for seed in 0..trials {
            let noisy = add_gaussian_noise(clean, 0.01, seed).unwrap();
            sum += fit_decay(&noisy, &opts).unwrap().time_constant_s;
        }
        worst_bias = worst_bias.max((sum / trials as f64 - truth).abs() / truth);
    }
    Outcome {
        pass: worst_clean <= 1e-6 && worst_bias < 0.005,
        detail: format!(
            "noiseless max rel error {worst_clean:.2e}; 1% noise max |bias| {:.3}% over {trials} trials",
            100.0 * worst_bias
        ),
    }
}

fn c7_linewidth() -> Outcome {
    let pp = Rational64::new(506, 28_025);
    let corrected = linewidth_to_rate_exact(pp, Rational64::new(1, 4)).unwrap();
    let exact = corrected == Rational64::new(256, 1000);
    let float = linewidth_to_rate(506.0 / 28_025.0, 0.25).unwrap();
    let two_t1_us = 1e6 * float.time_constant_s();
    let pass = exact && (two_t1_us - 3.9).abs() < 0.01 && (float.rate_per_s / 256e3 - 1.0).abs() < 1e-12;
    Outcome {
        pass,
        detail: format!("corrected width = {corrected} MHz, 1/width = {two_t1_us:.4} us"),
    }
}

fn c8_spectrum() -> Outcome {
    let sys = SpinSystem::new(ZfsModel::constant(1000.0), 2.0028, orientations_111()[0]).unwrap();
    let dir: Vector3<f64> = sys.axis();
    let grid = uniform_grid(280.0, 420.0, 0.005).unwrap();
    let pops = LevelPopulations::new(0.0, 1.0, 0.0).unwrap();
    let shape = Lineshape::lorentzian(0.3).unwrap();
    let s = synthesize_cw_spectrum(&sys, &pops, &shape, 9750.0, &dir, &grid, 300.0).unwrap();
    // Equal half-widths around each line so both lose the same tail weight.
    let around = |centre: f64| {
        let lo = grid.iter().position(|&b| b >= centre - 25.0).unwrap();
        let hi = grid.iter().rposition(|&b| b <= centre + 25.0).unwrap();
        double_integral(&grid[lo..=hi], &s.signal[lo..=hi])
    };
    let (low, high) = (around(s.lines[0].field_mt), around(s.lines[1].field_mt));
    let opposite = low * high < 0.0;
    let mag_ratio = (low.abs() - high.abs()).abs() / low.abs().max(high.abs());

    let mut worst = 0.0f64;
    for &w in &[0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0] {
        for shape in [Lineshape::lorentzian(w).unwrap(), Lineshape::gaussian(w).unwrap()] {
            let step = w / 50.0;
            let g = uniform_grid(312.2 - 15.0 * w, 312.2 + 15.0 * w, step).unwrap();
            let one = LevelPopulations::new(0.0, 1.0, 0.0).unwrap();
            let sp = synthesize_cw_spectrum(&sys, &one, &shape, 9750.0, &dir, &g, 300.0).unwrap();
            let est = peak_to_peak_linewidth(&sp, (g[0], *g.last().unwrap()), &LinewidthOptions::default()).unwrap();
            worst = worst.max((est - w).abs() / w);
        }
    }
    Outcome {
        pass: opposite && mag_ratio <= 1e-3 && worst <= 0.01,
        detail: format!(
            "double integrals {low:.4e} / {high:.4e} (relative magnitude mismatch {mag_ratio:.2e}); pp width max rel error {:.3}%",
            100.0 * worst
        ),
    }
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        check(1, "resonance consistency", secs(1), c1_resonance),
        check(2, "T1 model reproduction", secs(1), c2_t1_model),
        check(3, "fit recovery", secs(30), c3_fit_recovery),
        check(4, "polarization bookkeeping", secs(5), c4_bookkeeping),
        check(5, "photodynamics properties", secs(10), c5_photodynamics),
        check(6, "sequence round-trips", secs(20), c6_sequences),
        check(7, "linewidth pipeline", secs(1), c7_linewidth),
        check(8, "spectrum phases", secs(5), c8_spectrum),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
