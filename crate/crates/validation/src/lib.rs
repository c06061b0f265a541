//! Reference scenarios shared by the test suites: closed-form cases, a
//! duck-curve day and a seeded random generator.

use ctprice::market_model::{duck_curve, CostFunction, DuckParams, Scenario, SlackPolicy, Unit};
use ctprice::trajectory::{Horizon, Mesh, Scheme, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn two_unit(t2: f64) -> Scenario {
    let mesh = Mesh::uniform(Horizon::new(0.0, t2).unwrap(), 2).unwrap();
    Scenario::new(
        Trajectory::constant(&mesh, 3.0),
        vec![
            Unit::new("half", 0.0, 10.0, CostFunction::power(0.0, 0.5)),
            Unit::new("full", 0.0, 10.0, CostFunction::power(0.0, 1.0)),
        ],
        SlackPolicy::default(),
    )
    .unwrap()
}

pub fn duck_load(p: &DuckParams) -> Trajectory {
    let mesh = Mesh::uniform(Horizon::new(0.0, 24.0).unwrap(), 24 * 60).unwrap();
    duck_curve(p, &mesh).unwrap()
}

/// Duck-curve day served by three plain-bid units; the base unit saturates at
/// its capacity around the evening peak.
pub fn duck_three_units() -> Scenario {
    Scenario::new(
        duck_load(&DuckParams::default()),
        vec![
            Unit::new("base", 20.0, 160.0, CostFunction::power(15.0, 0.02)),
            Unit::new("mid", 0.0, 120.0, CostFunction::power(25.0, 0.05)),
            Unit::new("peak", 0.0, 100.0, CostFunction::power(40.0, 0.2)),
        ],
        SlackPolicy::default(),
    )
    .unwrap()
}

/// Load flat at 10, rising at 3 MW/h on [1, 3], flat at 16 until t = 8.
pub fn ramp_scarcity() -> Scenario {
    let h = Horizon::new(0.0, 8.0).unwrap();
    let mesh = Mesh::from_nodes(h, vec![0.0, 1.0, 3.0, 8.0]).unwrap();
    let load = Trajectory::piecewise_linear(&mesh, &[10.0, 10.0, 16.0, 16.0]).unwrap();
    Scenario::new(
        load,
        vec![
            Unit::new("cheap", 0.0, 100.0, CostFunction::power(1.0, 0.0)).with_ramp(-1.0, 1.0),
            Unit::new("expensive", 0.0, 100.0, CostFunction::power(2.0, 0.0)),
        ],
        SlackPolicy::default(),
    )
    .unwrap()
}

/// `C = x^2/2 + xdot^2/2`, `y = t^2` on [0, 1].
pub fn quadratic_ramp_bid() -> Scenario {
    let mesh = Mesh::uniform(Horizon::new(0.0, 1.0).unwrap(), 64).unwrap();
    let t = mesh.nodes().to_vec();
    let y: Vec<f64> = t.iter().map(|t| t * t).collect();
    let dy: Vec<f64> = t.iter().map(|t| 2.0 * t).collect();
    let cost = CostFunction {
        a2: 0.5,
        b2: 0.5,
        ..Default::default()
    };
    Scenario::new(
        Trajectory::cubic_hermite(&mesh, &y, &dy).unwrap(),
        vec![Unit::new("u", -100.0, 100.0, cost)],
        SlackPolicy::default(),
    )
    .unwrap()
}

/// `C = x^2/2 + 0.1 z`, `y = 4` on [0, 2].
pub fn linear_energy_bid() -> Scenario {
    let mesh = Mesh::uniform(Horizon::new(0.0, 2.0).unwrap(), 2).unwrap();
    let cost = CostFunction {
        a2: 0.5,
        e1: 0.1,
        ..Default::default()
    };
    Scenario::new(
        Trajectory::constant(&mesh, 4.0),
        vec![Unit::new("u", 0.0, 100.0, cost)],
        SlackPolicy::default(),
    )
    .unwrap()
}

/// Random day-ahead scenario with `k` units. Unit 0 can always cover the load,
/// the others draw a bid class: plain, quadratic ramp bid, ramp limited,
/// energy bid with cap, or absolute ramp bid.
pub fn random_scenario(seed: u64, k: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = DuckParams {
        base: rng.gen_range(150.0..250.0),
        morning_peak: rng.gen_range(10.0..60.0),
        evening_peak: rng.gen_range(40.0..120.0),
        solar_depth: rng.gen_range(40.0..120.0),
        ..DuckParams::default()
    };
    let load = duck_load(&p);
    let peak = load.node_values().into_iter().fold(0.0, f64::max);
    let mut units = vec![Unit::new(
        "u0",
        0.0,
        1.1 * peak,
        CostFunction::power(rng.gen_range(30.0..50.0), rng.gen_range(0.01..0.1)),
    )];
    for i in 1..k {
        let id = format!("u{i}");
        let p_max = rng.gen_range(0.3..0.8) * peak;
        let mut cost = CostFunction::power(rng.gen_range(10.0..40.0), rng.gen_range(0.01..0.2));
        let unit = match rng.gen_range(0..5) {
            0 => Unit::new(id, 0.0, p_max, cost),
            1 => {
                cost.b2 = rng.gen_range(0.1..2.0);
                cost.b1 = rng.gen_range(-0.5..0.5);
                Unit::new(id, 0.0, p_max, cost)
            }
            2 => {
                let r = rng.gen_range(5.0..25.0);
                Unit::new(id, 0.0, p_max, cost).with_ramp(-r, r)
            }
            3 => {
                cost.e1 = rng.gen_range(0.0..0.02);
                cost.e2 = rng.gen_range(0.0..1e-5);
                Unit::new(id, 0.0, p_max, cost)
                    .with_energy_cap(rng.gen_range(0.3..0.9) * 24.0 * p_max)
            }
            _ => {
                cost.b_abs = rng.gen_range(0.5..3.0);
                Unit::new(id, 0.0, p_max, cost)
            }
        };
        units.push(unit);
    }
    let slack = if rng.gen_bool(0.3) {
        SlackPolicy::enabled(1000.0)
    } else {
        SlackPolicy::default()
    };
    Scenario::new(load, units, slack).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub const SCHEMES: [Scheme; 2] = [Scheme::PiecewiseLinear, Scheme::CubicHermite];
