//! Browser bindings. Every export takes plain numbers or JSON text and
//! returns JSON text; the `*_json` functions hold the logic so they can be
//! exercised natively.

use ctprice::dispatch::solve_scenario;
use ctprice::market_model::{
    duck_curve_with, CostFunction, DuckParams, Scenario, SlackPolicy, Unit,
};
use ctprice::pricing::marginal_units;
use ctprice::qp_solver::SolverSettings;
use ctprice::trajectory::{Horizon, Mesh, Scheme, Trajectory};
use ctprice::verify::{refinement_study, Reference, RefinementOptions};
use ctprice::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn scheme(spline: bool) -> Scheme {
    if spline {
        Scheme::CubicHermite
    } else {
        Scheme::PiecewiseLinear
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Consistency(e.to_string()))
}

fn fleet() -> Vec<Unit> {
    vec![
        Unit::new("base", 20.0, 160.0, CostFunction::power(15.0, 0.02)).with_ramp(-40.0, 40.0),
        Unit::new("mid", 0.0, 120.0, CostFunction::power(25.0, 0.05)).with_ramp(-60.0, 60.0),
        Unit::new("peak", 0.0, 100.0, CostFunction::power(40.0, 0.2)),
    ]
}

#[derive(Serialize)]
struct UnitSeries {
    id: String,
    x: Vec<f64>,
    marginal: Vec<bool>,
}

#[derive(Serialize)]
struct DuckResult {
    t: Vec<f64>,
    y: Vec<f64>,
    lambda: Vec<f64>,
    units: Vec<UnitSeries>,
    objective: f64,
    iterations: usize,
}

/// Duck-curve day for a fixed three-unit fleet. `params` may omit any field.
pub fn solve_duck_json(params: &str, intervals: usize, spline: bool) -> Result<String> {
    let p: DuckParams = if params.trim().is_empty() {
        DuckParams::default()
    } else {
        serde_json::from_str(params).map_err(|e| Error::Schema(e.to_string()))?
    };
    let sch = scheme(spline);
    let load_mesh = Mesh::uniform(Horizon::new(0.0, 24.0)?, 24 * 12)?;
    let load = duck_curve_with(&p, &load_mesh, sch)?;
    let s = Scenario::new(load, fleet(), SlackPolicy::enabled(1000.0))?;
    let d = solve_scenario(&s, sch, intervals, &SolverSettings::default())?;
    let marg = marginal_units(&d.multipliers, None);
    let units = d
        .schedule
        .units
        .iter()
        .enumerate()
        .map(|(k, u)| UnitSeries {
            id: u.id.clone(),
            x: u.power.node_values(),
            marginal: marg.iter().map(|row| row[k]).collect(),
        })
        .collect();
    to_json(&DuckResult {
        t: d.mesh().nodes().to_vec(),
        y: d.schedule.load.node_values(),
        lambda: d.lambda().to_vec(),
        units,
        objective: d.schedule.objective,
        iterations: d.solution.iterations,
    })
}

#[derive(Serialize)]
struct ScarcityResult {
    t: Vec<f64>,
    y: Vec<f64>,
    lambda: Vec<f64>,
    cheap: Vec<f64>,
    expensive: Vec<f64>,
    ramp_t: Vec<f64>,
    gamma_hi: Vec<f64>,
}

/// Load steps up from 10 at `slope` MW/h starting at t = 1 while a cheap unit
/// (a1 = 1) is limited to `r_max` MW/h and an expensive one (a1 = 2) is not.
pub fn ramp_scarcity_json(r_max: f64, slope: f64, intervals: usize) -> Result<String> {
    if !(slope > 0.0) || !(r_max >= 0.0) {
        return Err(Error::Domain(format!(
            "need slope > 0 and r_max >= 0, got {slope} and {r_max}"
        )));
    }
    let h = Horizon::new(0.0, 8.0)?;
    let mesh = Mesh::from_nodes(h, vec![0.0, 1.0, 3.0, 8.0])?;
    let load =
        Trajectory::piecewise_linear(&mesh, &[10.0, 10.0, 10.0 + 2.0 * slope, 10.0 + 2.0 * slope])?;
    let s = Scenario::new(
        load,
        vec![
            Unit::new("cheap", 0.0, 1000.0, CostFunction::power(1.0, 0.0)).with_ramp(-r_max, r_max),
            Unit::new("expensive", 0.0, 1000.0, CostFunction::power(2.0, 0.0)),
        ],
        SlackPolicy::default(),
    )?;
    let d = solve_scenario(
        &s,
        Scheme::PiecewiseLinear,
        intervals,
        &SolverSettings::with_tol(1e-10),
    )?;
    let m = &d.multipliers;
    to_json(&ScarcityResult {
        t: m.times.clone(),
        y: d.schedule.load.node_values(),
        lambda: m.lambda.clone(),
        cheap: d.schedule.units[0].power.node_values(),
        expensive: d.schedule.units[1].power.node_values(),
        ramp_t: m.ramp_times.clone(),
        gamma_hi: m.units[0].gamma_hi.clone(),
    })
}

#[derive(Serialize)]
struct StudyRow {
    intervals: usize,
    error: f64,
    order: Option<f64>,
}

#[derive(Serialize)]
struct RampBidResult {
    t: Vec<f64>,
    exact: Vec<f64>,
    linear: Vec<f64>,
    spline: Vec<f64>,
    study: Vec<(String, Vec<StudyRow>)>,
}

/// `C = x^2/2 + r^2/2` serving `y = t^2` on [0, 1]; the exact price is
/// `t^2 - 2`. Returns both schemes on `intervals` and an error table over
/// three doublings.
pub fn ramp_bid_study_json(intervals: usize) -> Result<String> {
    let h = Horizon::new(0.0, 1.0)?;
    let mesh = Mesh::uniform(h, 256)?;
    let t = mesh.nodes().to_vec();
    let y: Vec<f64> = t.iter().map(|t| t * t).collect();
    let dy: Vec<f64> = t.iter().map(|t| 2.0 * t).collect();
    let cost = CostFunction {
        a2: 0.5,
        b2: 0.5,
        ..Default::default()
    };
    let s = Scenario::new(
        Trajectory::cubic_hermite(&mesh, &y, &dy)?,
        vec![Unit::new("u", -100.0, 100.0, cost)],
        SlackPolicy::default(),
    )?;
    let exact = |t: f64| t * t - 2.0;
    let st = SolverSettings::default();
    let pl = solve_scenario(&s, Scheme::PiecewiseLinear, intervals, &st)?;
    let ch = solve_scenario(&s, Scheme::CubicHermite, intervals, &st)?;
    let counts: Vec<usize> = (0..4).map(|k| intervals << k).collect();
    let mut study = Vec::new();
    for sch in [Scheme::PiecewiseLinear, Scheme::CubicHermite] {
        let opts = RefinementOptions {
            scheme: sch,
            interior_only: true,
            min_order: 0.0,
        };
        let rep = refinement_study(
            &s,
            &counts,
            Reference::Exact {
                lambda: &exact,
                power: None,
            },
            opts,
            &st,
        )?;
        let rows = rep
            .levels
            .iter()
            .enumerate()
            .map(|(i, l)| StudyRow {
                intervals: l.intervals,
                error: l.lambda_error.unwrap_or(f64::NAN),
                order: if i == 0 {
                    None
                } else {
                    rep.orders[i - 1].lambda_order
                },
            })
            .collect();
        study.push((format!("{sch:?}"), rows));
    }
    let tn = pl.mesh().nodes().to_vec();
    to_json(&RampBidResult {
        exact: tn.iter().map(|&t| exact(t)).collect(),
        t: tn,
        linear: pl.lambda().to_vec(),
        spline: ch.lambda().to_vec(),
        study,
    })
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn solve_duck(
    params: &str,
    intervals: u32,
    spline: bool,
) -> std::result::Result<String, JsError> {
    js(solve_duck_json(params, intervals as usize, spline))
}

#[wasm_bindgen]
pub fn ramp_scarcity(
    r_max: f64,
    slope: f64,
    intervals: u32,
) -> std::result::Result<String, JsError> {
    js(ramp_scarcity_json(r_max, slope, intervals as usize))
}

#[wasm_bindgen]
pub fn ramp_bid_study(intervals: u32) -> std::result::Result<String, JsError> {
    js(ramp_bid_study_json(intervals as usize))
}
