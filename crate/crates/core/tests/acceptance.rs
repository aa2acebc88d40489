//! Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

use std::time::{Duration, Instant};

use cumvol::analytic;
use cumvol::evolution::{
    evolve_y, evolve_z, steady_state_volatility, EvolutionConfig, Recursion, VolatilityReport,
    DEFAULT_STEADY_HORIZON,
};
use cumvol::montecarlo::{reversed_sum_identity, simulate, simulate_at, Variable};
use cumvol::NoiseModel;

/// `0.1^2 * ((2e^{0.2} + 1) / (1 - e^{0.4}) + 10)` to four digits.
const VAR_Z10_TARGET: f64 = 0.0300;

struct Outcome {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn steady(g: f64, sigma: f64) -> VolatilityReport {
    let noise = NoiseModel::gaussian(sigma).unwrap();
    let cfg = EvolutionConfig::with_default_grid(Recursion::Y, g, noise, DEFAULT_STEADY_HORIZON).unwrap();
    steady_state_volatility(&cfg).unwrap()
}

fn saddle_limit() -> Outcome {
    let start = Instant::now();
    let r = steady(0.1, 0.05);
    let elapsed = start.elapsed();
    let ratio = r.ratio.unwrap();
    Outcome {
        id: 1,
        title: "saddle-point limit at g=0.1, sigma_a=0.05",
        pass: (ratio - 1.0).abs() <= 0.02 && elapsed < Duration::from_secs(10),
        detail: format!("ratio {ratio:.6}, converged at t={}, {:.2?}", r.converged_at, elapsed),
    }
}

fn sweep_shape(reports: &mut Vec<(f64, VolatilityReport)>) -> Outcome {
    let start = Instant::now();
    for s2 in [0.01, 0.04, 0.16, 0.64, 1.0] {
        reports.push((s2, steady(0.1, f64::sqrt(s2))));
    }
    let elapsed = start.elapsed();
    let ratios: Vec<f64> = reports.iter().map(|(_, r)| r.ratio.unwrap()).collect();
    let near_one = (ratios[0] - 1.0).abs() <= 0.02;
    let interior_above = ratios[1..ratios.len() - 1].iter().any(|&r| r > 1.0);
    let last_below = *ratios.last().unwrap() < 1.0;
    let listed: Vec<String> = reports
        .iter()
        .map(|(s2, r)| format!("{s2}:{:.6}", r.ratio.unwrap()))
        .collect();
    Outcome {
        id: 2,
        title: "ratio shape over the sigma_a^2 sweep at g=0.1",
        pass: near_one && interior_above && last_below && elapsed < Duration::from_secs(120),
        detail: format!(
            "ratios [{}]; smallest~1 {near_one}, interior>1 {interior_above}, last<1 {last_below}, {:.2?}",
            listed.join(", "),
            elapsed
        ),
    }
}

fn fixed_point_variance() -> Outcome {
    let r = steady(0.2, 0.05);
    let target = 0.05f64.powi(2) / (0.4f64).exp_m1();
    let rel = r.y_variance / target - 1.0;
    Outcome {
        id: 3,
        title: "stationary y variance at g=0.2, sigma_a=0.05",
        pass: rel.abs() <= 0.02,
        detail: format!("Var(y) {:.6e} vs {target:.6e}, rel {rel:+.2e}", r.y_variance),
    }
}

fn width_identity() -> Outcome {
    let mut worst = 0.0f64;
    for g in [0.05, 0.1, 0.2, 0.5, 1.0] {
        for sigma in [0.01, 0.05, 0.3, 1.0] {
            let a = analytic::sigma_dz_via_fixed_point(g, sigma).unwrap();
            let b = analytic::sigma_dz_narrow(g, sigma).unwrap();
            worst = worst.max((a - b).abs() / b);
        }
    }
    Outcome {
        id: 4,
        title: "(e^g - 1) sigma_inf equals sqrt(tanh(g/2)) sigma_a",
        pass: worst <= 1e-10,
        detail: format!("max relative difference {worst:.2e}"),
    }
}

fn var_z10() -> Outcome {
    let noise = NoiseModel::gaussian(0.1).unwrap();
    let cfg = EvolutionConfig::with_default_grid(Recursion::Z, 0.2, noise, 10).unwrap();
    let trace = evolve_z(&cfg).unwrap();
    let var = trace.density(10).unwrap().variance();
    let rel = var / VAR_Z10_TARGET - 1.0;
    let linear = analytic::var_logz_linearized(0.2, 0.1, 10);
    Outcome {
        id: 5,
        title: "Var(z_10) at g=0.2, sigma_a=0.1 equals 0.0300",
        pass: rel.abs() <= 0.03,
        detail: format!(
            "engine {var:.6}, rel {rel:+.3}; first-order finite-t variance {linear:.6}"
        ),
    }
}

fn oracle_equivalence() -> Outcome {
    let cases = [
        ("gaussian", NoiseModel::gaussian(1.0).unwrap()),
        ("lorentzian", NoiseModel::lorentzian(1.0).unwrap()),
    ];
    let times = [1usize, 5, 20];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, noise) in cases {
        let start = Instant::now();
        let cfg = EvolutionConfig::with_default_grid(Recursion::Z, 0.2, noise.clone(), 20).unwrap();
        let trace = evolve_z(&cfg).unwrap();
        let ens = simulate_at(0.2, &noise, 20, 100_000, 20_240_601, &times).unwrap();
        let mut ks = Vec::new();
        for &t in &times {
            let d = cumvol::montecarlo::ks_against(
                &ens.sorted(t, Variable::Z).unwrap(),
                trace.density(t).unwrap(),
            );
            pass &= d < 0.01;
            ks.push(format!("t={t}:{d:.4}"));
        }
        let elapsed = start.elapsed();
        pass &= elapsed < Duration::from_secs(60);
        parts.push(format!("{name} [{}] {:.2?}", ks.join(" "), elapsed));
    }
    Outcome {
        id: 6,
        title: "KS distance between recursion and 1e5-path simulation below 0.01",
        pass,
        detail: parts.join("; "),
    }
}

fn reversed_sum() -> Outcome {
    let g_err = reversed_sum_identity(0.2, &NoiseModel::gaussian(1.0).unwrap(), 50, 1000, 7).unwrap();
    let l_err = reversed_sum_identity(0.2, &NoiseModel::lorentzian(1.0).unwrap(), 50, 1000, 7).unwrap();
    Outcome {
        id: 7,
        title: "per-path Y_t equals the reversed-time sum",
        pass: g_err <= 1e-10 && l_err <= 1e-10,
        detail: format!("max relative error gaussian {g_err:.2e}, lorentzian {l_err:.2e}"),
    }
}

fn invariants(sweep: &[(f64, VolatilityReport)]) -> Outcome {
    let mut failures = Vec::new();

    let noise = NoiseModel::gaussian(1.0).unwrap();
    let cfg = EvolutionConfig::with_default_grid(Recursion::Z, 0.2, noise.clone(), 30).unwrap();
    let z = evolve_z(&cfg).unwrap();
    let mut ycfg = EvolutionConfig::with_default_grid(Recursion::Y, 0.2, noise.clone(), 30).unwrap();
    ycfg.stop_on_convergence = false;
    let y = evolve_y(&ycfg).unwrap();
    let all = z.densities.iter().chain(&y.densities).chain(&y.dz_densities);
    let mut worst_mass = 0.0f64;
    for (_, p) in all {
        worst_mass = worst_mass.max((p.mass() - 1.0).abs());
        if p.values().iter().any(|v| !(*v >= 0.0)) {
            failures.push("negative density value");
        }
        if p.grid().x_min < 0.0 {
            failures.push("grid extends below 0");
        }
    }
    if worst_mass > 1e-6 {
        failures.push("mass off by more than 1e-6");
    }
    let ens = simulate(0.2, &noise, 30, 2000, 3).unwrap();
    for t in 1..=30 {
        if ens.values(t, Variable::Z).unwrap().iter().any(|&v| v < 0.0) {
            failures.push("simulated z below 0");
        }
        if ens.values(t, Variable::Dz).unwrap().iter().any(|&v| !(v > 0.0)) {
            failures.push("simulated dz at or below 0");
        }
    }

    let skewed = NoiseModel::tabulated(&[(-0.5, 0.2), (0.0, 1.0), (0.8, 0.1)]).unwrap();
    let mut my = EvolutionConfig::with_default_grid(Recursion::Y, 0.3, skewed.clone(), 12).unwrap();
    my.dz_grid = None;
    my.stop_on_convergence = false;
    let mz = EvolutionConfig {
        g: -0.3,
        noise: skewed.mirror(),
        ..my.clone()
    };
    let (ty, tz) = (evolve_y(&my).unwrap(), evolve_z(&mz).unwrap());
    let mut mirror_gap = 0.0f64;
    for ((_, a), (_, b)) in ty.densities.iter().zip(&tz.densities) {
        for (u, v) in a.values().iter().zip(b.values()) {
            mirror_gap = mirror_gap.max((u - v).abs());
        }
    }
    if ty.densities.len() != 12 || tz.densities.len() != 12 || mirror_gap > 1e-12 {
        failures.push("mirror identity broken");
    }

    let contraction = sweep.iter().all(|(s2, r)| r.variance < *s2);
    if !contraction {
        failures.push("Var(dz) not below sigma_a^2");
    }

    Outcome {
        id: 8,
        title: "invariant suite",
        pass: failures.is_empty(),
        detail: format!(
            "max |mass-1| {worst_mass:.1e}, mirror gap {mirror_gap:.1e}, contraction {contraction}{}",
            if failures.is_empty() {
                String::new()
            } else {
                format!(", failures: {}", failures.join("; "))
            }
        ),
    }
}

fn main() {
    let mut sweep = Vec::new();
    let mut outcomes = vec![saddle_limit(), sweep_shape(&mut sweep)];
    outcomes.extend([fixed_point_variance(), width_identity(), var_z10(), oracle_equivalence(), reversed_sum()]);
    outcomes.push(invariants(&sweep));

    let mut failed = 0;
    for o in &outcomes {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("{tag} criterion {}: {} ({})", o.id, o.title, o.detail);
    }
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
