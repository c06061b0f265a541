//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use ctprice::dispatch::{solve_scenario, Dispatch};
use ctprice::market_model::Scenario;
use ctprice::pricing::{aggregate_hourly, marginal_units, price_formula};
use ctprice::qp_solver::SolverSettings;
use ctprice::trajectory::{Horizon, Mesh, Scheme, Trajectory};
use ctprice::verify::{
    cross_scheme_check, perturbation_check, refinement_study, PerturbationSpec, Reference,
    RefinementOptions,
};
use ctprice_validation::*;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn solve(s: &Scenario, scheme: Scheme, n: usize) -> Dispatch {
    solve_scenario(s, scheme, n, &SolverSettings::default()).expect("solve")
}

fn kkt_suite() -> Outcome {
    let settings = SolverSettings::default();
    let mut worst_gap: f64 = 0.0;
    let mut worst_comp: f64 = 0.0;
    let mut worst_time: f64 = 0.0;
    let mut failures = Vec::new();
    for seed in 0..20u64 {
        let k = 1 + (seed as usize % 5);
        let s = random_scenario(seed, k);
        let start = Instant::now();
        match solve_scenario(&s, Scheme::PiecewiseLinear, 100, &settings) {
            Ok(d) => {
                let secs = start.elapsed().as_secs_f64();
                let r = d.residuals();
                worst_gap = worst_gap.max(d.solution.relative_gap);
                worst_comp = worst_comp.max(r.complementarity);
                worst_time = worst_time.max(secs);
                if d.solution.relative_gap > 1e-8 || r.complementarity > 1e-7 || secs > 5.0 {
                    failures.push(seed);
                }
            }
            Err(e) => failures.push({
                eprintln!("seed {seed}: {e}");
                seed
            }),
        }
    }
    outcome(
        failures.is_empty(),
        format!("max rel gap {worst_gap:.1e}, max compl {worst_comp:.1e}, slowest {worst_time:.2}s, failing seeds {failures:?}"),
    )
}

fn analytic_dispatch() -> Outcome {
    let s = two_unit(1.0);
    let mut err: f64 = 0.0;
    for scheme in SCHEMES {
        let d = solve(&s, scheme, 10);
        err = err.max(
            d.lambda()
                .iter()
                .map(|l| (l - 2.0).abs())
                .fold(0.0, f64::max),
        );
        err = err.max(
            d.schedule.units[0]
                .power
                .node_values()
                .iter()
                .map(|x| (x - 2.0).abs())
                .fold(0.0, f64::max),
        );
        err = err.max(
            d.schedule.units[1]
                .power
                .node_values()
                .iter()
                .map(|x| (x - 1.0).abs())
                .fold(0.0, f64::max),
        );
    }
    // fine-grid oracle agrees with the closed form
    let oracle = solve(&s, Scheme::PiecewiseLinear, 100);
    let oracle_err = oracle
        .lambda()
        .iter()
        .map(|l| (l - 2.0).abs())
        .fold(0.0, f64::max);
    outcome(
        err <= 1e-6 && oracle_err <= 1e-6,
        format!("max error {err:.1e}, oracle error {oracle_err:.1e}"),
    )
}

fn marginal_identity() -> Outcome {
    let s = duck_three_units();
    let d = solve(&s, Scheme::PiecewiseLinear, 96);
    let marg = marginal_units(&d.multipliers, None);
    let mut worst: f64 = 0.0;
    let mut counted = 0;
    for (i, row) in marg.iter().enumerate() {
        let lambda = d.multipliers.lambda[i];
        for (k, &m) in row.iter().enumerate() {
            if m {
                let c = &s.units[k].cost;
                let x = d.schedule.units[k].power.node_values()[i];
                worst = worst.max((lambda - (c.a1 + 2.0 * c.a2 * x)).abs() / (1.0 + lambda.abs()));
                counted += 1;
            }
        }
    }
    let saturated = marg.iter().filter(|r| !r.iter().all(|&m| m)).count();
    outcome(worst <= 1e-5 && counted > 0, format!("max scaled gap {worst:.1e} over {counted} (node, unit) pairs, {saturated} nodes with a bound active"))
}

/// Nodes strictly inside the window where the cheap unit's up-ramp limit binds,
/// located on a grid ten times finer.
fn binding_window(s: &Scenario, n: usize) -> (f64, f64) {
    let fine = solve(s, Scheme::PiecewiseLinear, 10 * n);
    let m = &fine.multipliers;
    let tol = m.default_tolerance();
    let active: Vec<f64> = m.units[0]
        .gamma_hi
        .iter()
        .zip(&m.ramp_times)
        .filter(|(g, _)| **g > tol)
        .map(|(_, t)| *t)
        .collect();
    (active[0], *active.last().unwrap())
}

fn ramp_scarcity_decomposition() -> Outcome {
    let s = ramp_scarcity();
    let n = 400;
    let dt = 8.0 / n as f64;
    let (a, b) = binding_window(&s, n);
    let d = solve(&s, Scheme::PiecewiseLinear, n);
    let rep = price_formula(&s, &d.schedule, &d.multipliers).unwrap();
    let gamma_rate = d
        .multipliers
        .node_derivative(&d.multipliers.units[0].gamma_hi);
    let mut lam_err: f64 = 0.0;
    let mut id_err: f64 = 0.0;
    let mut rate_err: f64 = 0.0;
    for (i, &t) in rep.times.iter().enumerate() {
        if t > a + 2.0 * dt && t < b - 2.0 * dt {
            lam_err = lam_err.max((rep.lambda[i] - 2.0).abs());
            id_err = id_err.max((rep.units[0].identity[i] - rep.lambda[i]).abs());
            rate_err = rate_err.max((gamma_rate[i] + 1.0).abs());
        }
    }
    outcome(
        lam_err <= 1e-4 && id_err <= 5.0 * dt,
        format!("window [{a:.3}, {b:.3}], |lambda-2| {lam_err:.1e}, identity residual {id_err:.1e}, |dgamma/dt+1| {rate_err:.1e}"),
    )
}

fn theorem1() -> Outcome {
    let s = two_unit(1.0);
    let st = SolverSettings::default();
    let uni = perturbation_check(
        &s,
        &PerturbationSpec::uniform(1e-3),
        Scheme::PiecewiseLinear,
        400,
        &st,
    )
    .unwrap();
    let mesh = Mesh::uniform(Horizon::new(0.0, 1.0).unwrap(), 400).unwrap();
    let eta: Vec<f64> = mesh
        .nodes()
        .iter()
        .map(|t| (std::f64::consts::PI * t).sin())
        .collect();
    let eta = Trajectory::from_samples(&mesh, &eta, Scheme::CubicHermite).unwrap();
    let sine = perturbation_check(
        &s,
        &PerturbationSpec::custom(1e-3, eta),
        Scheme::PiecewiseLinear,
        400,
        &st,
    )
    .unwrap();
    outcome(
        uni.passed && sine.passed && sine.regime.is_none(),
        format!(
            "uniform lhs {:.6} rhs {:.6} rel {:.1e}; sine lhs {:.6} rhs {:.6} rel {:.1e}",
            uni.lhs.unwrap_or(f64::NAN),
            uni.rhs.unwrap_or(f64::NAN),
            uni.relative_error.unwrap_or(f64::NAN),
            sine.lhs.unwrap_or(f64::NAN),
            sine.rhs.unwrap_or(f64::NAN),
            sine.relative_error.unwrap_or(f64::NAN)
        ),
    )
}

fn theorem2() -> Outcome {
    let s = quadratic_ramp_bid();
    let exact = |t: f64| t * t - 2.0;
    let opts = RefinementOptions {
        scheme: Scheme::CubicHermite,
        interior_only: true,
        min_order: 1.0,
    };
    let rep = refinement_study(
        &s,
        &[50, 100, 200, 400],
        Reference::Exact {
            lambda: &exact,
            power: None,
        },
        opts,
        &SolverSettings::default(),
    )
    .unwrap();
    let errs: Vec<f64> = rep.levels.iter().map(|l| l.lambda_error.unwrap()).collect();
    let orders: Vec<f64> = rep.orders.iter().filter_map(|o| o.lambda_order).collect();
    let last = *errs.last().unwrap();
    outcome(
        rep.passed && orders.len() == 3 && last <= 5e-2,
        format!(
            "errors {}, orders {orders:.2?}",
            errs.iter()
                .map(|e| format!("{e:.2e}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

fn theorem3() -> Outcome {
    let s = linear_energy_bid();
    let d = solve(&s, Scheme::PiecewiseLinear, 400);
    let t = d.mesh().nodes();
    let stated = t
        .iter()
        .zip(d.lambda())
        .map(|(t, l)| (l - (4.0 - 0.1 * t)).abs())
        .fold(0.0, f64::max);
    let backward = t
        .iter()
        .zip(d.lambda())
        .map(|(t, l)| (l - (4.0 + 0.1 * (2.0 - t))).abs())
        .fold(0.0, f64::max);
    outcome(
        stated <= 5e-3,
        format!(
            "max |lambda - (4 - 0.1 t)| = {stated:.3e}; against 4 + 0.1 (t2 - t): {backward:.3e}"
        ),
    )
}

fn cross_scheme() -> Outcome {
    let rep =
        cross_scheme_check(&duck_three_units(), 200, 0.01, &SolverSettings::default()).unwrap();
    let c = rep.check("lambda_relative_difference").unwrap();
    outcome(
        rep.passed,
        format!(
            "max relative difference {:.2e}; {}",
            c.value,
            rep.notes.join("; ")
        ),
    )
}

fn invariance() -> Outcome {
    let settings = SolverSettings::with_tol(1e-10);
    let mut worst_shift: f64 = 0.0;
    let mut worst_x: f64 = 0.0;
    let mut worst_lambda: f64 = 0.0;
    for s in [duck_three_units(), random_scenario(3, 4)] {
        let base = solve_scenario(&s, Scheme::PiecewiseLinear, 96, &settings).unwrap();
        let shifted = s.map_costs(|c| ctprice::market_model::CostFunction {
            a0: c.a0 + 7.5,
            ..*c
        });
        let sh = solve_scenario(&shifted, Scheme::PiecewiseLinear, 96, &settings).unwrap();
        let scaled = solve_scenario(
            &s.map_costs(|c| c.scaled(3.0)),
            Scheme::PiecewiseLinear,
            96,
            &settings,
        )
        .unwrap();
        for k in 0..s.units.len() {
            let x0 = base.schedule.units[k].power.node_values();
            worst_shift =
                worst_shift.max(max_abs_diff(&x0, &sh.schedule.units[k].power.node_values()));
            worst_x = worst_x.max(max_abs_diff(
                &x0,
                &scaled.schedule.units[k].power.node_values(),
            ));
        }
        worst_shift = worst_shift.max(max_abs_diff(base.lambda(), sh.lambda()));
        for (a, b) in base.lambda().iter().zip(scaled.lambda()) {
            worst_lambda = worst_lambda.max((b - 3.0 * a).abs() / (3.0 * a).abs().max(1.0));
        }
    }
    outcome(
        worst_shift <= 1e-7 && worst_x <= 1e-6 && worst_lambda <= 1e-6,
        format!(
            "shift {worst_shift:.1e}, scaled x {worst_x:.1e}, scaled lambda rel {worst_lambda:.1e}"
        ),
    )
}

fn hourly() -> Outcome {
    let mut cases: Vec<(Scenario, Scheme, usize)> = vec![
        (two_unit(1.0), Scheme::PiecewiseLinear, 10),
        (two_unit(1.0), Scheme::CubicHermite, 10),
        (duck_three_units(), Scheme::PiecewiseLinear, 96),
        (duck_three_units(), Scheme::CubicHermite, 96),
        (ramp_scarcity(), Scheme::PiecewiseLinear, 400),
        (linear_energy_bid(), Scheme::PiecewiseLinear, 400),
    ];
    for seed in 0..20u64 {
        cases.push((
            random_scenario(seed, 1 + seed as usize % 5),
            Scheme::PiecewiseLinear,
            100,
        ));
    }
    let mut worst: f64 = 0.0;
    for (s, scheme, n) in &cases {
        let d = solve(s, *scheme, *n);
        let h = aggregate_hourly(&d.schedule).unwrap();
        worst = worst.max((h.total() - d.schedule.load.integral()).abs());
    }
    outcome(
        worst <= 1e-9,
        format!(
            "{} scenarios, max |sum - integral| {worst:.1e} MWh",
            cases.len()
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "KKT suite", kkt_suite),
        (2, "analytic dispatch", analytic_dispatch),
        (3, "marginal-unit price", marginal_identity),
        (
            4,
            "ramp-scarcity price decomposition",
            ramp_scarcity_decomposition,
        ),
        (5, "load-perturbation sensitivity", theorem1),
        (6, "ramp-bid price convergence", theorem2),
        (7, "energy-bid price", theorem3),
        (8, "cross-scheme agreement", cross_scheme),
        (9, "cost shift and scaling invariance", invariance),
        (10, "hourly aggregation", hourly),
    ];
    let mut failed = Vec::new();
    for (n, name, f) in criteria {
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let verdict = if out.passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {n:>2} {verdict} {name}: {} [{:.2}s]",
            out.detail,
            start.elapsed().as_secs_f64()
        );
        if !out.passed {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
