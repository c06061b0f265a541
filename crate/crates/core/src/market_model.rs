//! Units, bids, load profiles, and scenario ingestion.

use serde::{Deserialize, Serialize};

use crate::error::{field_err, Error, Result};
use crate::trajectory::{Horizon, Mesh, Scheme, Trajectory};

/// Bid of one unit as a convex function of energy `z`, power `x`, and ramp `r`:
///
/// `C = a0 + a1 x + a2 x^2 + b1 r + b2 r^2 + b_abs |r| + e1 z + e2 z^2`  ($/h).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostFunction {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub b_abs: f64,
    pub e1: f64,
    pub e2: f64,
}

/// Partial derivatives `(dC/dz, dC/dx, dC/dr)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostGradient {
    pub dz: f64,
    pub dx: f64,
    pub dr: f64,
}

impl CostFunction {
    /// Plain power bid `a1 x + a2 x^2`.
    pub fn power(a1: f64, a2: f64) -> Self {
        CostFunction {
            a1,
            a2,
            ..Default::default()
        }
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        let all = [
            ("a0", self.a0),
            ("a1", self.a1),
            ("a2", self.a2),
            ("b1", self.b1),
            ("b2", self.b2),
            ("b_abs", self.b_abs),
            ("e1", self.e1),
            ("e2", self.e2),
        ];
        for (name, v) in all {
            if !v.is_finite() {
                return Err(field_err(format!("{prefix}.{name}"), "must be finite"));
            }
        }
        for (name, v) in [
            ("a2", self.a2),
            ("b2", self.b2),
            ("e2", self.e2),
            ("b_abs", self.b_abs),
        ] {
            if v < 0.0 {
                return Err(field_err(
                    format!("{prefix}.{name}"),
                    format!("{name} < 0 makes the bid nonconvex"),
                ));
            }
        }
        Ok(())
    }

    pub fn power_part(&self, x: f64) -> f64 {
        self.a1 * x + self.a2 * x * x
    }

    pub fn ramp_part(&self, r: f64) -> f64 {
        self.b1 * r + self.b2 * r * r + self.b_abs * r.abs()
    }

    pub fn energy_part(&self, z: f64) -> f64 {
        self.e1 * z + self.e2 * z * z
    }

    pub fn has_ramp_terms(&self) -> bool {
        self.b1 != 0.0 || self.b2 != 0.0 || self.b_abs != 0.0
    }

    pub fn has_energy_terms(&self) -> bool {
        self.e1 != 0.0 || self.e2 != 0.0
    }

    /// Cost rate in $/h.
    pub fn value(&self, z: f64, x: f64, r: f64) -> f64 {
        self.a0 + self.power_part(x) + self.ramp_part(r) + self.energy_part(z)
    }

    /// Gradient; fails at the kink of `b_abs |r|`.
    pub fn gradients(&self, z: f64, x: f64, r: f64) -> Result<CostGradient> {
        if self.b_abs > 0.0 && r == 0.0 {
            let (lo, hi) = self.ramp_subgradient(0.0);
            return Err(Error::Nondifferentiable {
                b_abs: self.b_abs,
                lo,
                hi,
            });
        }
        Ok(CostGradient {
            dz: self.e1 + 2.0 * self.e2 * z,
            dx: self.a1 + 2.0 * self.a2 * x,
            dr: self.b1 + 2.0 * self.b2 * r + self.b_abs * r.signum(),
        })
    }

    /// Subdifferential of the ramp part at `r`.
    pub fn ramp_subgradient(&self, r: f64) -> (f64, f64) {
        let smooth = self.b1 + 2.0 * self.b2 * r;
        if r > 0.0 {
            (smooth + self.b_abs, smooth + self.b_abs)
        } else if r < 0.0 {
            (smooth - self.b_abs, smooth - self.b_abs)
        } else {
            (smooth - self.b_abs, smooth + self.b_abs)
        }
    }

    /// Same bid with every coefficient multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        CostFunction {
            a0: self.a0 * alpha,
            a1: self.a1 * alpha,
            a2: self.a2 * alpha,
            b1: self.b1 * alpha,
            b2: self.b2 * alpha,
            b_abs: self.b_abs * alpha,
            e1: self.e1 * alpha,
            e2: self.e2 * alpha,
        }
    }
}

/// `cost_value` as a free function.
pub fn cost_value(c: &CostFunction, z: f64, x: f64, r: f64) -> f64 {
    c.value(z, x, r)
}

/// `cost_gradients` as a free function.
pub fn cost_gradients(c: &CostFunction, z: f64, x: f64, r: f64) -> Result<CostGradient> {
    c.gradients(z, x, r)
}

/// A committed generating unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Unit {
    pub id: String,
    pub p_min: f64,
    pub p_max: f64,
    pub r_min: f64,
    pub r_max: f64,
    #[serde(default)]
    pub z_max: Option<f64>,
    #[serde(default)]
    pub cost: CostFunction,
}

impl Unit {
    /// Unit with wide ramp limits and the given power range and bid.
    pub fn new(id: impl Into<String>, p_min: f64, p_max: f64, cost: CostFunction) -> Self {
        Unit {
            id: id.into(),
            p_min,
            p_max,
            r_min: -1e6,
            r_max: 1e6,
            z_max: None,
            cost,
        }
    }

    pub fn with_ramp(mut self, r_min: f64, r_max: f64) -> Self {
        self.r_min = r_min;
        self.r_max = r_max;
        self
    }

    pub fn with_energy_cap(mut self, z_max: f64) -> Self {
        self.z_max = Some(z_max);
        self
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        let p = format!("units[{index}]");
        if self.id.is_empty() {
            return Err(field_err(format!("{p}.id"), "must not be empty"));
        }
        if self.id.contains(',') {
            return Err(field_err(format!("{p}.id"), "must not contain ','"));
        }
        for (name, v) in [
            ("p_min", self.p_min),
            ("p_max", self.p_max),
            ("r_min", self.r_min),
            ("r_max", self.r_max),
        ] {
            if !v.is_finite() {
                return Err(field_err(format!("{p}.{name}"), "must be finite"));
            }
        }
        if self.p_min > self.p_max {
            return Err(field_err(format!("{p}.p_min"), "p_min > p_max"));
        }
        if self.r_min > self.r_max {
            return Err(field_err(format!("{p}.r_min"), "r_min > r_max"));
        }
        if self.r_min > 0.0 || self.r_max < 0.0 {
            return Err(field_err(
                format!("{p}.r_min"),
                "ramp limits must satisfy r_min <= 0 <= r_max (no constant trajectory is feasible otherwise)",
            ));
        }
        if let Some(z) = self.z_max {
            if !z.is_finite() || z < 0.0 {
                return Err(field_err(format!("{p}.z_max"), "must be finite and >= 0"));
            }
            if self.p_min < 0.0 {
                return Err(field_err(
                    format!("{p}.p_min"),
                    "energy cap requires p_min >= 0",
                ));
            }
        }
        self.cost.validate(&format!("{p}.cost"))
    }

    pub fn needs_energy(&self) -> bool {
        self.z_max.is_some() || self.cost.has_energy_terms()
    }
}

/// Always-available expensive generator that keeps inflexible demand feasible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlackPolicy {
    pub enabled: bool,
    #[serde(default = "default_slack_price")]
    pub price: f64,
}

fn default_slack_price() -> f64 {
    10_000.0
}

impl Default for SlackPolicy {
    fn default() -> Self {
        SlackPolicy {
            enabled: false,
            price: default_slack_price(),
        }
    }
}

impl SlackPolicy {
    pub fn enabled(price: f64) -> Self {
        SlackPolicy {
            enabled: true,
            price,
        }
    }
}

/// Synthetic net-load shape: base plus morning and evening bumps minus a midday solar well.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DuckParams {
    pub base: f64,
    pub morning_peak: f64,
    pub morning_center: f64,
    pub morning_width: f64,
    pub evening_peak: f64,
    pub evening_center: f64,
    pub evening_width: f64,
    pub solar_depth: f64,
    pub solar_center: f64,
    pub solar_width: f64,
}

impl Default for DuckParams {
    fn default() -> Self {
        DuckParams {
            base: 200.0,
            morning_peak: 40.0,
            morning_center: 7.5,
            morning_width: 1.5,
            evening_peak: 90.0,
            evening_center: 19.5,
            evening_width: 2.0,
            solar_depth: 110.0,
            solar_center: 13.0,
            solar_width: 2.5,
        }
    }
}

fn bump(t: f64, center: f64, width: f64) -> f64 {
    let u = (t - center) / width;
    (-0.5 * u * u).exp()
}

impl DuckParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("base", self.base),
            ("morning_peak", self.morning_peak),
            ("evening_peak", self.evening_peak),
            ("solar_depth", self.solar_depth),
            ("morning_center", self.morning_center),
            ("evening_center", self.evening_center),
            ("solar_center", self.solar_center),
        ];
        for (name, v) in all {
            if !v.is_finite() {
                return Err(field_err(format!("load.params.{name}"), "must be finite"));
            }
        }
        for (name, v) in all.iter().take(4) {
            if *v < 0.0 {
                return Err(field_err(format!("load.params.{name}"), "must be >= 0"));
            }
        }
        for (name, v) in [
            ("morning_width", self.morning_width),
            ("evening_width", self.evening_width),
            ("solar_width", self.solar_width),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(field_err(
                    format!("load.params.{name}"),
                    "width must be > 0",
                ));
            }
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        self.base
            + self.morning_peak * bump(t, self.morning_center, self.morning_width)
            + self.evening_peak * bump(t, self.evening_center, self.evening_width)
            - self.solar_depth * bump(t, self.solar_center, self.solar_width)
    }

    pub fn slope(&self, t: f64) -> f64 {
        let d = |amp: f64, c: f64, w: f64| -amp * (t - c) / (w * w) * bump(t, c, w);
        d(self.morning_peak, self.morning_center, self.morning_width)
            + d(self.evening_peak, self.evening_center, self.evening_width)
            - d(self.solar_depth, self.solar_center, self.solar_width)
    }
}

/// Duck curve sampled on `mesh` as a cubic Hermite trajectory with finite-difference slopes.
pub fn duck_curve(p: &DuckParams, mesh: &Mesh) -> Result<Trajectory> {
    duck_curve_with(p, mesh, Scheme::CubicHermite)
}

pub fn duck_curve_with(p: &DuckParams, mesh: &Mesh, scheme: Scheme) -> Result<Trajectory> {
    p.validate()?;
    let values: Vec<f64> = mesh.nodes().iter().map(|&t| p.value(t)).collect();
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| **v <= 0.0) {
        return Err(field_err(
            "load.params",
            format!(
                "duck curve is non-positive ({v}) at t = {}",
                mesh.nodes()[i]
            ),
        ));
    }
    Trajectory::from_samples(mesh, &values, scheme)
}

/// Complete dispatch problem input.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub horizon: Horizon,
    pub load: Trajectory,
    pub units: Vec<Unit>,
    pub slack: SlackPolicy,
}

impl Scenario {
    pub fn new(load: Trajectory, units: Vec<Unit>, slack: SlackPolicy) -> Result<Self> {
        let s = Scenario {
            horizon: load.horizon(),
            load,
            units,
            slack,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.units.is_empty() {
            return Err(field_err("units", "at least one unit is required"));
        }
        for (i, u) in self.units.iter().enumerate() {
            u.validate(i)?;
        }
        for (i, u) in self.units.iter().enumerate() {
            if self.units[..i].iter().any(|o| o.id == u.id) {
                return Err(field_err(
                    format!("units[{i}].id"),
                    format!("duplicate id `{}`", u.id),
                ));
            }
        }
        if self.slack.enabled && !(self.slack.price.is_finite() && self.slack.price >= 0.0) {
            return Err(field_err("slack.price", "must be finite and >= 0"));
        }
        if self.load.horizon() != self.horizon {
            return Err(field_err("load", "load is not defined on the horizon"));
        }
        Ok(())
    }

    pub fn unit_index(&self, id: &str) -> Option<usize> {
        self.units.iter().position(|u| u.id == id)
    }

    /// Same scenario with a different load profile.
    pub fn with_load(&self, load: Trajectory) -> Scenario {
        Scenario {
            horizon: load.horizon(),
            load,
            units: self.units.clone(),
            slack: self.slack,
        }
    }

    /// Same scenario with every bid mapped through `f`.
    pub fn map_costs(&self, f: impl Fn(&CostFunction) -> CostFunction) -> Scenario {
        let units = self
            .units
            .iter()
            .map(|u| Unit {
                cost: f(&u.cost),
                ..u.clone()
            })
            .collect();
        Scenario {
            units,
            ..self.clone()
        }
    }

    /// Serialize as scenario JSON with the load written as samples.
    pub fn to_json(&self) -> String {
        let doc = ScenarioDoc {
            horizon: self.horizon,
            load: LoadDoc::Samples {
                times: self.load.knots().to_vec(),
                values: self.load.node_values(),
            },
            units: self.units.clone(),
            slack: Some(self.slack),
        };
        serde_json::to_string_pretty(&doc).expect("scenario serializes")
    }
}

/// Scenario JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub horizon: Horizon,
    pub load: LoadDoc,
    pub units: Vec<Unit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack: Option<SlackPolicy>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadDoc {
    Samples { times: Vec<f64>, values: Vec<f64> },
    Duck { params: DuckParams },
}

/// Duck loads are sampled once per minute before interpolation.
pub const DUCK_SAMPLES_PER_HOUR: f64 = 60.0;

/// Parse and validate scenario JSON; the load is interpolated with `scheme`.
pub fn load_scenario(text: &[u8], scheme: Scheme) -> Result<Scenario> {
    let doc: ScenarioDoc =
        serde_json::from_slice(text).map_err(|e| Error::Schema(e.to_string()))?;
    scenario_from_doc(doc, scheme)
}

pub fn scenario_from_doc(doc: ScenarioDoc, scheme: Scheme) -> Result<Scenario> {
    let horizon = Horizon::new(doc.horizon.t1, doc.horizon.t2)
        .map_err(|e| field_err("horizon", e.to_string()))?;
    let load = match doc.load {
        LoadDoc::Samples { times, values } => {
            if times.len() != values.len() {
                return Err(Error::Schema(format!(
                    "load.times has {} entries but load.values has {}",
                    times.len(),
                    values.len()
                )));
            }
            if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                return Err(field_err("load.values", format!("non-finite sample {v}")));
            }
            let mesh = Mesh::from_nodes(horizon, times)
                .map_err(|e| field_err("load.times", e.to_string()))?;
            Trajectory::from_samples(&mesh, &values, scheme)?
        }
        LoadDoc::Duck { params } => {
            let intervals = (horizon.length() * DUCK_SAMPLES_PER_HOUR).ceil().max(2.0) as usize;
            let mesh = Mesh::uniform(horizon, intervals)?;
            duck_curve_with(&params, &mesh, scheme)?
        }
    };
    let scenario = Scenario {
        horizon,
        load,
        units: doc.units,
        slack: doc.slack.unwrap_or_default(),
    };
    scenario.validate()?;
    Ok(scenario)
}
