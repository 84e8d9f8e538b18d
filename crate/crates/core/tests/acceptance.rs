//! End-to-end acceptance checks. Runs as a plain binary so that every
//! criterion prints its own PASS/FAIL line even under `cargo test`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use brwlab::analysis::{duality_check, fit_growth_rate, fit_box_half_width, predicted_growth_law, Regime};
use brwlab::model::{BrwModel, OffspringLaw, Site, WalkKernel};
use brwlab::moments::combinatorics::{composition_form, partition_form};
use brwlab::moments::{
    evolve_first_moment, evolve_higher_moments, first_moment_from_generating_function, integral_moment_oracle_all,
    Flavor, TimeGrid,
};
use brwlab::montecarlo::{jackknife_power_mean, run, InitialCondition, Observable, SimulationPlan};
use brwlab::ode::OdeOptions;
use brwlab::operators::{build_operator, critical_intensity, principal_eigenvalue, LatticeBox};
use brwlab::vaccination::{vaccinate, vaccinated_generating_function, vaccination_sweep, VaccinationParams};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn binary(dim: usize, beta: f64) -> BrwModel {
    BrwModel::new(WalkKernel::simple(dim, 1.0).unwrap(), OffspringLaw::binary(0.0, beta).unwrap()).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn duality() -> Outcome {
    let start = Instant::now();
    let lattice = LatticeBox::new(1, 40).unwrap();
    let grid = TimeGrid::uniform(5.0, 50).unwrap();
    let mut worst = 0.0f64;
    for beta in [0.5, 2.0] {
        let report = duality_check(&binary(1, beta), lattice, &grid, &OdeOptions::default()).map_err(|e| e.to_string())?;
        worst = worst.max(report.max_gap);
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-9 && elapsed < Duration::from_secs(10),
        format!("max gap {worst:.3e} (< 1e-9), {:.2} s (< 10 s)", elapsed.as_secs_f64()),
    )
}

fn ode_vs_monte_carlo() -> Outcome {
    let start = Instant::now();
    let model = binary(1, 0.5);
    let lattice = LatticeBox::new(1, 40).unwrap();
    let grid = TimeGrid::uniform(2.0, 2).unwrap();
    let fields = evolve_higher_moments(&model, lattice, Flavor::Total, 2, &grid, &OdeOptions::default())
        .map_err(|e| e.to_string())?;
    let origin = Site::origin(1);
    let plan = SimulationPlan::new(InitialCondition::Single(origin), 2.0, 100_000, 2024);
    let stats = run(&model, &plan).map_err(|e| e.to_string())?;
    let k = stats.times.len() - 1;
    let samples = stats.samples(Observable::Population, k).map_err(|e| e.to_string())?;
    let mut ok = stats.capped == 0;
    let mut detail = Vec::new();
    for n in 1..=2u32 {
        let exact = fields[n as usize - 1].value(grid.len() - 1, &origin).unwrap();
        let (mean, se) = jackknife_power_mean(&samples, n);
        let z = (mean - exact) / se;
        ok &= z.abs() < 3.0;
        detail.push(format!("M{n}: mc {mean:.5} ode {exact:.5} ({z:+.2} SE)"));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(120);
    check(ok, format!("{}, {:.1} s (< 120 s)", detail.join(", "), elapsed.as_secs_f64()))
}

fn cascade_vs_integral_oracle() -> Outcome {
    let model = binary(1, 0.5);
    let lattice = LatticeBox::new(1, 40).unwrap();
    let grid = TimeGrid::uniform(2.0, 400).unwrap();
    let opts = OdeOptions::default();
    let cascade = evolve_higher_moments(&model, lattice, Flavor::Total, 3, &grid, &opts).map_err(|e| e.to_string())?;
    let oracle = integral_moment_oracle_all(&model, lattice, Flavor::Total, 3, &grid, &opts).map_err(|e| e.to_string())?;
    let mut worst = [0.0f64; 2];
    for n in 2..=3 {
        for k in 0..grid.len() {
            for (a, b) in cascade[n - 1].slice(k).iter().zip(oracle[n - 1].slice(k)) {
                worst[n - 2] = worst[n - 2].max((a - b).abs() / a.abs().max(b.abs()));
            }
        }
    }
    check(
        worst.iter().all(|&w| w < 1e-4),
        format!("max relative error M2 {:.3e}, M3 {:.3e} (< 1e-4)", worst[0], worst[1]),
    )
}

fn supercritical_growth() -> Outcome {
    let model = binary(1, 2.0);
    let t_max = 30.0;
    let lattice = LatticeBox::new(1, fit_box_half_width(1.0, t_max, 1)).unwrap();
    let lambda0 = principal_eigenvalue(&build_operator(&model, lattice, true).unwrap()).map_err(|e| e.to_string())?;
    let grid = TimeGrid::uniform(t_max, 300).unwrap();
    let fields = evolve_higher_moments(&model, lattice, Flavor::Total, 2, &grid, &OdeOptions::default())
        .map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut detail = vec![format!("L = {}, lambda0 = {lambda0:.6}", lattice.half_width())];
    for n in 1..=2 {
        let form = predicted_growth_law(Regime::Supercritical, 1, n).unwrap().total;
        let fit = fit_growth_rate(grid.times(), &fields[n - 1].at_origin(), (10.0, 30.0), &form)
            .map_err(|e| e.to_string())?;
        let expected = form.expected_slope(lambda0);
        let rel = (fit.estimate - expected).abs() / expected;
        ok &= rel < 0.05;
        detail.push(format!("slope M{n} {:.6} vs {expected:.6} ({:.2}%)", fit.estimate, 100.0 * rel));
    }
    check(ok, detail.join(", "))
}

fn subcritical_local_decay() -> Outcome {
    let beta_c = critical_intensity(&binary(3, 0.0), &[10, 20]).map_err(|e| e.to_string())?.extrapolated;
    let model = binary(3, 0.5 * beta_c);
    let lattice = LatticeBox::new(3, 30).unwrap();
    let grid = TimeGrid::uniform(80.0, 160).unwrap();
    let origin = Site::origin(3);
    let flavor = Flavor::Local { target: origin };
    let m = evolve_first_moment(&model, lattice, flavor, &grid, &OdeOptions::default()).map_err(|e| e.to_string())?;
    let form = predicted_growth_law(Regime::Subcritical, 3, 1).unwrap().local;
    let fit = fit_growth_rate(grid.times(), &m.series(&origin).unwrap(), (20.0, 80.0), &form).map_err(|e| e.to_string())?;
    let expected = form.expected_slope(0.0);
    let rel = (fit.estimate - expected).abs() / expected.abs();
    check(
        rel < 0.15,
        format!(
            "beta_c ~ {beta_c:.5}, log-log slope {:.4} vs {expected} ({:.1}%, < 15%)",
            fit.estimate,
            100.0 * rel
        ),
    )
}

fn vaccination_closed_form() -> Outcome {
    let laws = [
        OffspringLaw::binary(1.0, 1.5).unwrap(),
        OffspringLaw::new(0.3, &[0.7, 0.4]).unwrap(),
        OffspringLaw::new(0.8, &[]).unwrap(),
    ];
    let mut worst = 0.0f64;
    for law in &laws {
        for alpha in [0.1, 0.5, 0.9, 1.0] {
            let params = VaccinationParams::new(alpha).unwrap();
            let direct = vaccinate(law, params).unwrap();
            for k in 0..100 {
                let u = k as f64 / 99.0;
                let closed = vaccinated_generating_function(law, params, u).unwrap();
                worst = worst.max((closed - direct.generating_function(u).unwrap()).abs());
            }
        }
    }
    check(worst < 1e-12, format!("max |closed - direct| {worst:.3e} (< 1e-12)"))
}

fn vaccination_control() -> Outcome {
    let reference = binary(3, 0.0);
    let beta_c = critical_intensity(&reference, &[10, 20]).map_err(|e| e.to_string())?.extrapolated;
    let model = binary(3, 1.5 * beta_c);
    let alphas: Vec<f64> = (0..20).map(|k| 1.0 - 0.05 * k as f64).collect();
    let sweep = vaccination_sweep(&model, LatticeBox::new(3, 20).unwrap(), &alphas).map_err(|e| e.to_string())?;
    let monotone = sweep.windows(2).all(|w| w[1].lambda0 <= w[0].lambda0 + 1e-12);
    let sign_change = sweep.first().unwrap().lambda0 > 0.0 && sweep.last().unwrap().lambda0 < 0.0;
    let crossing = sweep.windows(2).find(|w| w[0].lambda0 > 0.0 && w[1].lambda0 <= 0.0);
    let where_ = crossing.map_or("none".to_string(), |w| {
        format!("between alpha {:.2} and {:.2} (beta~ {:.4} -> {:.4})", w[0].alpha, w[1].alpha, w[0].beta_tilde, w[1].beta_tilde)
    });
    let below = crossing.is_some_and(|w| w[1].beta_tilde < beta_c);
    check(
        monotone && sign_change && below,
        format!("nonincreasing {monotone}, sign change {where_}, beta_c ~ {beta_c:.4}"),
    )
}

fn composition_identity() -> Outcome {
    let x: Vec<i128> = vec![2, 3, 5, 7, 11, 13];
    let mut checked = 0;
    for n in 2..=6 {
        for r in 2..=n {
            let (a, b) = (composition_form(n, r, &x), partition_form(n, r, &x));
            if a != b {
                return Err(format!("n = {n}, r = {r}: {a} != {b}"));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} (n, r) pairs equal exactly"))
}

fn extinction_consistency() -> Outcome {
    let model = binary(1, 0.5);
    let lattice = LatticeBox::new(1, 40).unwrap();
    let grid = TimeGrid::uniform(2.0, 20).unwrap();
    let opts = OdeOptions::default();
    let from_gf =
        first_moment_from_generating_function(&model, lattice, Flavor::Total, &grid, 1e-4, &opts).map_err(|e| e.to_string())?;
    let m1 = evolve_first_moment(&model, lattice, Flavor::Total, &grid, &opts).map_err(|e| e.to_string())?;
    let worst = (0..grid.len())
        .map(|k| max_abs_diff(from_gf.slice(k), m1.slice(k)))
        .fold(0.0, f64::max);
    check(worst < 1e-4, format!("max |-dF/dz - M1| {worst:.3e} (< 1e-4)"))
}

fn simulate(dir: &Path, config: &Path, threads: usize) -> Result<Vec<u8>, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_brwlab"))
        .arg("--threads")
        .arg(threads.to_string())
        .arg("--out")
        .arg(dir)
        .arg("simulate")
        .arg(config)
        .env_remove("BRWLAB_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    std::fs::read(dir.join("mc_moments.csv")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("run.cfg");
    std::fs::write(
        &config,
        "dimension = 2\nkernel.total_rate = 1\nlaw.b0 = 0.2\nlaw.b2 = 0.5\nlaw.b3 = 0.1\n\
         time.t_max = 3\ntime.steps = 6\nreplicas = 3000\nseed = 99\nsimulate.sites = 0,0; 1,0\nsimulate.orders = 4\n",
    )
    .map_err(|e| e.to_string())?;
    let runs = [(1, "a"), (1, "b"), (4, "c"), (4, "d")]
        .iter()
        .map(|&(threads, name)| simulate(&tmp.path().join(name), &config, threads))
        .collect::<Result<Vec<_>, _>>()?;
    let identical = runs.windows(2).all(|w| w[0] == w[1]);
    check(
        identical,
        format!("4 runs ({} bytes each) with --threads 1 and 4 byte-identical: {identical}", runs[0].len()),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("duality of forward and backward first moments", duality),
        ("ODE moments against Monte Carlo", ode_vs_monte_carlo),
        ("moment cascade against integral oracle", cascade_vs_integral_oracle),
        ("supercritical exponential growth", supercritical_growth),
        ("subcritical local decay in d = 3", subcritical_local_decay),
        ("vaccinated generating function closed form", vaccination_closed_form),
        ("vaccination sweep control", vaccination_control),
        ("composition identity", composition_identity),
        ("extinction generating function derivative", extinction_consistency),
        ("simulate determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let label = format!("{}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|p| *p == label || name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {label:>2} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failures += 1;
                println!("criterion {label:>2} FAIL  {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
