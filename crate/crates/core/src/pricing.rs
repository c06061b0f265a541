//! Multiplier recovery and price decomposition.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::market_model::{CostFunction, Scenario};
use crate::qp_solver::{QpSolution, SolveStatus};
use crate::trajectory::{Mesh, Scheme, Trajectory};
use crate::transcribe::{RowKind, Schedule, Transcription, UnitSchedule};

/// Continuous-time multiplier samples of one unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitMultipliers {
    pub id: String,
    /// at mesh nodes
    pub mu_hi: Vec<f64>,
    pub mu_lo: Vec<f64>,
    pub beta_hi: Vec<f64>,
    /// power-limit multipliers at interval midpoints (cubic Hermite only)
    pub mu_hi_mid: Option<Vec<f64>>,
    pub mu_lo_mid: Option<Vec<f64>>,
    /// at ramp points
    pub gamma_hi: Vec<f64>,
    pub gamma_lo: Vec<f64>,
    /// selected element of the `b_abs |r|` subdifferential, at ramp points
    pub abs_ramp_subgradient: Option<Vec<f64>>,
    /// raw duals of the energy links, one per interval
    pub energy_link: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplierTrajectories {
    pub scheme: Scheme,
    pub times: Vec<f64>,
    pub weights: Vec<f64>,
    pub ramp_times: Vec<f64>,
    pub ramp_weights: Vec<f64>,
    /// $/MWh at mesh nodes
    pub lambda: Vec<f64>,
    /// raw duals of the derivative balance rows (cubic Hermite only)
    pub balance_slope: Option<Vec<f64>>,
    pub units: Vec<UnitMultipliers>,
}

/// Map QP duals to multiplier samples. Refuses anything but an optimal solve.
pub fn recover_multipliers(sol: &QpSolution, tr: &Transcription) -> Result<MultiplierTrajectories> {
    if sol.status != SolveStatus::Optimal {
        return Err(Error::NotOptimal(format!("solver status {:?}", sol.status)));
    }
    let map = &tr.map;
    if sol.eq_duals.len() != map.eq.len() || sol.ineq_duals.len() != map.ineq.len() {
        return Err(Error::Domain(
            "solution does not match transcription".into(),
        ));
    }
    let nn = map.mesh.len();
    let np = map.ramp_times.len();
    let ni = map.mesh.intervals();
    let hermite = map.scheme == Scheme::CubicHermite;
    let mut lambda = vec![0.0; nn];
    let mut slope_duals = vec![0.0; nn];
    let mut units: Vec<UnitMultipliers> = map
        .unit_ids
        .iter()
        .enumerate()
        .map(|(k, id)| UnitMultipliers {
            id: id.clone(),
            mu_hi: vec![0.0; nn],
            mu_lo: vec![0.0; nn],
            beta_hi: vec![0.0; nn],
            mu_hi_mid: hermite.then(|| vec![0.0; ni]),
            mu_lo_mid: hermite.then(|| vec![0.0; ni]),
            gamma_hi: vec![0.0; np],
            gamma_lo: vec![0.0; np],
            abs_ramp_subgradient: map.layout.ramp_plus[k].as_ref().map(|_| vec![0.0; np]),
            energy_link: map.layout.energy[k].as_ref().map(|_| vec![0.0; ni]),
        })
        .collect();

    for (tag, &nu) in map.eq.iter().zip(&sol.eq_duals) {
        match tag.kind {
            RowKind::Balance => lambda[tag.index] = nu / tag.weight,
            RowKind::BalanceSlope => slope_duals[tag.index] = nu,
            RowKind::EnergyLink => {
                let k = tag.unit.expect("energy row has a unit");
                units[k].energy_link.as_mut().unwrap()[tag.index] = nu;
            }
            RowKind::RampSplit => {
                let k = tag.unit.expect("split row has a unit");
                units[k].abs_ramp_subgradient.as_mut().unwrap()[tag.index] = -nu / tag.weight;
            }
            _ => {}
        }
    }
    for (tag, &om) in map.ineq.iter().zip(&sol.ineq_duals) {
        let Some(k) = tag.unit else { continue };
        let v = om / tag.weight;
        let u = &mut units[k];
        match tag.kind {
            RowKind::PMax => u.mu_hi[tag.index] = v,
            RowKind::PMin => u.mu_lo[tag.index] = v,
            RowKind::PMaxMid => u.mu_hi_mid.as_mut().unwrap()[tag.index] = v,
            RowKind::PMinMid => u.mu_lo_mid.as_mut().unwrap()[tag.index] = v,
            RowKind::RMax => u.gamma_hi[tag.index] = v,
            RowKind::RMin => u.gamma_lo[tag.index] = v,
            RowKind::ZMax => u.beta_hi[tag.index] = v,
            _ => {}
        }
    }
    Ok(MultiplierTrajectories {
        scheme: map.scheme,
        times: map.mesh.nodes().to_vec(),
        weights: map.mesh.weights().to_vec(),
        ramp_times: map.ramp_times.clone(),
        ramp_weights: map.ramp_weights.clone(),
        lambda,
        balance_slope: if map.scheme == Scheme::CubicHermite {
            Some(slope_duals)
        } else {
            None
        },
        units,
    })
}

/// Balance-row prices `nu_i / w_i` without the rest of the multiplier map.
pub fn price_from_duals(sol: &QpSolution, tr: &Transcription) -> Result<Vec<f64>> {
    Ok(recover_multipliers(sol, tr)?.lambda)
}

impl MultiplierTrajectories {
    pub fn num_nodes(&self) -> usize {
        self.times.len()
    }

    /// Coefficients of the node time-derivative of a ramp-point quantity.
    ///
    /// Piecewise-linear: the staggered difference `(v_{i+1/2} - v_{i-1/2}) / w_i`
    /// with zeros outside the horizon, which is the exact adjoint of the
    /// interval-slope operator. Cubic Hermite: centered differences on the
    /// collocation grid, one-sided at the ends.
    pub fn derivative_stencil(&self, i: usize) -> Vec<(usize, f64)> {
        let n = self.num_nodes();
        match self.scheme {
            Scheme::PiecewiseLinear => {
                let w = self.weights[i];
                let mut s = Vec::with_capacity(2);
                if i > 0 {
                    s.push((i - 1, -1.0 / w));
                }
                if i + 1 < n {
                    s.push((i, 1.0 / w));
                }
                s
            }
            Scheme::CubicHermite => {
                let p = 2 * i;
                let tau = &self.ramp_times;
                let (a, b) = if i == 0 {
                    (p, p + 1)
                } else if i + 1 == n {
                    (p - 1, p)
                } else {
                    (p - 1, p + 1)
                };
                let dt = tau[b] - tau[a];
                vec![(a, -1.0 / dt), (b, 1.0 / dt)]
            }
        }
    }

    pub fn node_derivative(&self, ramp_values: &[f64]) -> Vec<f64> {
        (0..self.num_nodes())
            .map(|i| {
                self.derivative_stencil(i)
                    .into_iter()
                    .map(|(p, c)| c * ramp_values[p])
                    .sum()
            })
            .collect()
    }

    /// Ramp points adjacent to node `i`.
    pub fn adjacent_ramp_points(&self, i: usize) -> Vec<usize> {
        let n = self.num_nodes();
        match self.scheme {
            Scheme::PiecewiseLinear => {
                let mut v = Vec::with_capacity(2);
                if i > 0 {
                    v.push(i - 1);
                }
                if i + 1 < n {
                    v.push(i);
                }
                v
            }
            Scheme::CubicHermite => {
                let p = 2 * i;
                let lo = p.saturating_sub(1);
                let hi = (p + 1).min(self.ramp_times.len() - 1);
                (lo..=hi).collect()
            }
        }
    }

    /// Node view of a ramp-point quantity (average of adjacent samples for the
    /// piecewise-linear scheme, the knot sample for cubic Hermite).
    pub fn ramp_at_nodes(&self, ramp_values: &[f64]) -> Vec<f64> {
        (0..self.num_nodes())
            .map(|i| match self.scheme {
                Scheme::CubicHermite => ramp_values[2 * i],
                Scheme::PiecewiseLinear => {
                    let adj = self.adjacent_ramp_points(i);
                    adj.iter().map(|&p| ramp_values[p]).sum::<f64>() / adj.len() as f64
                }
            })
            .collect()
    }

    pub fn lambda_trajectory(&self, mesh: &Mesh) -> Result<Trajectory> {
        Trajectory::piecewise_linear(mesh, &self.lambda)
    }

    /// Co-state of the energy state at node `i`, from the link duals.
    fn energy_costate(&self, k: usize, i: usize) -> f64 {
        let Some(zeta) = &self.units[k].energy_link else {
            return 0.0;
        };
        let n = self.num_nodes();
        let mut acc = 0.0;
        if i > 0 {
            acc += (self.times[i] - self.times[i - 1]) * zeta[i - 1];
        }
        if i + 1 < n {
            acc += (self.times[i + 1] - self.times[i]) * zeta[i];
        }
        -acc / (2.0 * self.weights[i])
    }

    /// `1e-6 * (median active multiplier + 1)`.
    pub fn default_tolerance(&self) -> f64 {
        let mut active: Vec<f64> = self
            .units
            .iter()
            .flat_map(|u| {
                u.mu_hi
                    .iter()
                    .chain(&u.mu_lo)
                    .chain(&u.beta_hi)
                    .chain(&u.gamma_hi)
                    .chain(&u.gamma_lo)
            })
            .copied()
            .filter(|v| v.abs() > 1e-8)
            .map(f64::abs)
            .collect();
        if active.is_empty() {
            return 1e-6;
        }
        active.sort_by(f64::total_cmp);
        1e-6 * (active[active.len() / 2] + 1.0)
    }
}

/// `marginal[i][k]`: no power, ramp, or energy multiplier of unit `k` exceeds
/// `tol` at node `i` or its adjacent ramp points.
pub fn marginal_units(m: &MultiplierTrajectories, tol: Option<f64>) -> Vec<Vec<bool>> {
    let tol = tol.unwrap_or_else(|| m.default_tolerance());
    (0..m.num_nodes())
        .map(|i| {
            let adj = m.adjacent_ramp_points(i);
            // intervals touching node i
            let mids = i.saturating_sub(1)..(i + 1).min(m.num_nodes() - 1);
            m.units
                .iter()
                .map(|u| {
                    u.mu_hi[i].abs() <= tol
                        && u.mu_lo[i].abs() <= tol
                        && u.beta_hi[i].abs() <= tol
                        && adj
                            .iter()
                            .all(|&p| u.gamma_hi[p].abs() <= tol && u.gamma_lo[p].abs() <= tol)
                        && mids.clone().all(|j| {
                            let quiet = |v: &Option<Vec<f64>>| {
                                v.as_ref().is_none_or(|v| v[j].abs() <= tol)
                            };
                            quiet(&u.mu_hi_mid) && quiet(&u.mu_lo_mid)
                        })
                })
                .collect()
        })
        .collect()
}

fn power_gradient(c: &CostFunction, x: f64) -> f64 {
    c.a1 + 2.0 * c.a2 * x
}

fn energy_gradient(c: &CostFunction, z: f64) -> f64 {
    c.e1 + 2.0 * c.e2 * z
}

/// Ramp rates of a scheduled unit at the ramp points.
pub fn ramp_rates(u: &UnitSchedule, m: &MultiplierTrajectories) -> Result<Vec<f64>> {
    let x = u.power.node_values();
    match m.scheme {
        Scheme::PiecewiseLinear => Ok(x
            .windows(2)
            .zip(m.times.windows(2))
            .map(|(v, t)| (v[1] - v[0]) / (t[1] - t[0]))
            .collect()),
        Scheme::CubicHermite => {
            let d = u.power.node_slopes();
            let rate = u.power.derivative();
            m.ramp_times
                .iter()
                .enumerate()
                .map(|(p, &tp)| {
                    if p % 2 == 0 {
                        Ok(d[p / 2])
                    } else {
                        rate.eval(tp)
                    }
                })
                .collect()
        }
    }
}

/// Ramp-bid gradient at each ramp point; `None` where `b_abs > 0` and the rate
/// sits on the kink.
fn ramp_gradients(c: &CostFunction, rates: &[f64]) -> Vec<Option<f64>> {
    let scale = rates.iter().fold(1.0f64, |a, r| a.max(r.abs()));
    rates
        .iter()
        .map(|&r| {
            let smooth = c.b1 + 2.0 * c.b2 * r;
            if c.b_abs > 0.0 {
                if r.abs() <= 1e-7 * scale {
                    None
                } else {
                    Some(smooth + c.b_abs * r.signum())
                }
            } else {
                Some(smooth)
            }
        })
        .collect()
}

/// Trapezoid cumulative integral of node samples from the first node.
fn cumulative(times: &[f64], g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for i in 1..g.len() {
        out[i] = out[i - 1] + 0.5 * (times[i] - times[i - 1]) * (g[i] + g[i - 1]);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitPriceSeries {
    pub id: String,
    pub marginal: Vec<bool>,
    /// full decomposition including active multipliers; equals the dual price
    /// wherever the transcription is exact
    pub identity: Vec<f64>,
    /// bid-only formula with the energy term integrated forward from `t1`,
    /// defined where the unit is marginal and off any ramp kink
    pub forward_formula: Vec<Option<f64>>,
    /// bid-only formula with the energy term integrated backward from `t2`
    pub backward_formula: Vec<Option<f64>>,
    /// price interval where the ramp rate sits on an `|r|` kink
    pub kink_interval: Vec<Option<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceReport {
    pub times: Vec<f64>,
    pub lambda: Vec<f64>,
    pub units: Vec<UnitPriceSeries>,
    /// `max_i,k |lambda_i - identity_k(t_i)|`
    pub max_identity_residual: f64,
}

impl PriceReport {
    /// Largest gap between the dual price and a marginal unit's bid-only formula.
    pub fn max_formula_error(&self, backward: bool) -> Option<f64> {
        let mut worst: Option<f64> = None;
        for u in &self.units {
            let series = if backward {
                &u.backward_formula
            } else {
                &u.forward_formula
            };
            for (f, l) in series.iter().zip(&self.lambda) {
                if let Some(f) = f {
                    let e = (f - l).abs();
                    worst = Some(worst.map_or(e, |w: f64| w.max(e)));
                }
            }
        }
        worst
    }
}

/// Evaluate the price decomposition of every unit at every node.
pub fn price_formula(
    s: &Scenario,
    sched: &Schedule,
    m: &MultiplierTrajectories,
) -> Result<PriceReport> {
    check_shapes(s, sched, m)?;
    let marginal = marginal_units(m, None);
    let n = m.num_nodes();
    let mut units = Vec::with_capacity(s.units.len());
    let mut max_res: f64 = 0.0;
    for (k, (unit, us)) in s.units.iter().zip(&sched.units).enumerate() {
        let c = &unit.cost;
        let um = &m.units[k];
        let x = us.power.node_values();
        let rates = ramp_rates(us, m)?;
        let grads = ramp_gradients(c, &rates);
        // where the kink leaves the gradient undefined, use the subgradient the solver selected
        let cr_selected: Vec<f64> = grads
            .iter()
            .enumerate()
            .map(|(p, g)| match g {
                Some(v) => *v,
                None => {
                    c.b1 + 2.0 * c.b2 * rates[p]
                        + um.abs_ramp_subgradient.as_ref().map_or(0.0, |s| s[p])
                }
            })
            .collect();
        let z = us.energy.as_ref().map(|e| e.node_values());
        let cz: Vec<f64> = match &z {
            Some(z) => z.iter().map(|&v| energy_gradient(c, v)).collect(),
            None => vec![0.0; n],
        };
        let head = cumulative(&m.times, &cz);
        let total = *head.last().unwrap();

        let mut identity = Vec::with_capacity(n);
        let mut fwd = Vec::with_capacity(n);
        let mut bwd = Vec::with_capacity(n);
        let mut kinks = Vec::with_capacity(n);
        for i in 0..n {
            let stencil = m.derivative_stencil(i);
            let d_of = |v: &[f64]| stencil.iter().map(|&(p, a)| a * v[p]).sum::<f64>();
            let cx = power_gradient(c, x[i]);
            let energy_term = if um.energy_link.is_some() {
                m.energy_costate(k, i)
            } else {
                0.0
            };
            let id = cx + um.mu_hi[i] - um.mu_lo[i] - d_of(&um.gamma_hi) + d_of(&um.gamma_lo)
                - d_of(&cr_selected)
                + energy_term;
            max_res = max_res.max((id - m.lambda[i]).abs());
            identity.push(id);

            let kink_points: Vec<(usize, f64)> = stencil
                .iter()
                .copied()
                .filter(|&(p, _)| grads[p].is_none())
                .collect();
            let pure = cx - d_of(&cr_selected);
            if kink_points.is_empty() {
                kinks.push(None);
                if marginal[i][k] {
                    fwd.push(Some(pure - head[i]));
                    bwd.push(Some(pure + (total - head[i])));
                } else {
                    fwd.push(None);
                    bwd.push(None);
                }
            } else {
                // remove the selected subgradient at kink points, then span [-b_abs, b_abs]
                let sub = um.abs_ramp_subgradient.as_ref();
                let base = pure
                    + kink_points
                        .iter()
                        .map(|&(p, a)| a * sub.map_or(0.0, |s| s[p]))
                        .sum::<f64>();
                let width: f64 = kink_points.iter().map(|&(_, a)| a.abs() * c.b_abs).sum();
                let shift = total - head[i];
                kinks.push(Some((base - width + shift, base + width + shift)));
                fwd.push(None);
                bwd.push(None);
            }
        }
        units.push(UnitPriceSeries {
            id: unit.id.clone(),
            marginal: marginal.iter().map(|row| row[k]).collect(),
            identity,
            forward_formula: fwd,
            backward_formula: bwd,
            kink_interval: kinks,
        });
    }
    Ok(PriceReport {
        times: m.times.clone(),
        lambda: m.lambda.clone(),
        units,
        max_identity_residual: max_res,
    })
}

fn check_shapes(s: &Scenario, sched: &Schedule, m: &MultiplierTrajectories) -> Result<()> {
    if s.units.len() != sched.units.len() || s.units.len() != m.units.len() {
        return Err(Error::Domain(
            "scenario, schedule and multipliers disagree on unit count".into(),
        ));
    }
    if sched.mesh.nodes() != m.times.as_slice() || sched.scheme != m.scheme {
        return Err(Error::Domain(
            "schedule and multipliers were produced on different meshes".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElResidual {
    pub times: Vec<f64>,
    /// per unit, at nodes
    pub residual: Vec<Vec<f64>>,
    pub max_abs: f64,
    /// `d(gamma_hi - gamma_lo)/dt` at `t2` by a one-sided difference, per unit
    pub terminal_gamma_rate: Vec<f64>,
    /// `dC/dr + gamma_hi - gamma_lo` at the last ramp point, per unit
    pub terminal_momentum: Vec<f64>,
}

/// Stationarity residual of the optimal-control conditions, evaluated on the
/// schedule with the recovered multipliers. The energy term is integrated
/// backward from `t2` by the trapezoid rule.
pub fn euler_lagrange_residual(
    s: &Scenario,
    sched: &Schedule,
    m: &MultiplierTrajectories,
) -> Result<ElResidual> {
    check_shapes(s, sched, m)?;
    let n = m.num_nodes();
    let mut residual = Vec::with_capacity(s.units.len());
    let mut term_rate = Vec::with_capacity(s.units.len());
    let mut term_mom = Vec::with_capacity(s.units.len());
    let mut max_abs: f64 = 0.0;
    for (k, (unit, us)) in s.units.iter().zip(&sched.units).enumerate() {
        let c = &unit.cost;
        let um = &m.units[k];
        let x = us.power.node_values();
        let rates = ramp_rates(us, m)?;
        let grads = ramp_gradients(c, &rates);
        let momentum: Vec<f64> = grads
            .iter()
            .enumerate()
            .map(|(p, g)| {
                let cr = match g {
                    Some(v) => *v,
                    None => {
                        c.b1 + 2.0 * c.b2 * rates[p]
                            + um.abs_ramp_subgradient.as_ref().map_or(0.0, |s| s[p])
                    }
                };
                cr + um.gamma_hi[p] - um.gamma_lo[p]
            })
            .collect();
        let g: Vec<f64> = match &us.energy {
            Some(e) => e
                .node_values()
                .iter()
                .zip(&um.beta_hi)
                .map(|(&z, &b)| energy_gradient(c, z) + b)
                .collect(),
            None => vec![0.0; n],
        };
        let head = cumulative(&m.times, &g);
        let total = *head.last().unwrap();
        let dmom = m.node_derivative(&momentum);
        let r: Vec<f64> = (0..n)
            .map(|i| {
                power_gradient(c, x[i]) - m.lambda[i] + um.mu_hi[i] - um.mu_lo[i] - dmom[i]
                    + (total - head[i])
            })
            .collect();
        max_abs = r.iter().fold(max_abs, |a, v| a.max(v.abs()));
        residual.push(r);

        let np = m.ramp_times.len();
        let gap: Vec<f64> = um
            .gamma_hi
            .iter()
            .zip(&um.gamma_lo)
            .map(|(a, b)| a - b)
            .collect();
        term_rate.push(if np >= 2 {
            (gap[np - 1] - gap[np - 2]) / (m.ramp_times[np - 1] - m.ramp_times[np - 2])
        } else {
            0.0
        });
        term_mom.push(momentum[np - 1]);
    }
    Ok(ElResidual {
        times: m.times.clone(),
        residual,
        max_abs,
        terminal_gamma_rate: term_rate,
        terminal_momentum: term_mom,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HourlyEnergy {
    /// start of each hour
    pub hours: Vec<f64>,
    /// `(unit id, MWh per hour)`; an unserved-energy row labelled `slack` is
    /// appended when the scenario allows it
    pub rows: Vec<(String, Vec<f64>)>,
}

impl HourlyEnergy {
    pub fn total(&self) -> f64 {
        self.rows.iter().flat_map(|(_, v)| v).sum()
    }
}

/// Integrate each unit's power over whole hours.
pub fn aggregate_hourly(sched: &Schedule) -> Result<HourlyEnergy> {
    let h = sched.mesh.horizon();
    let len = h.length();
    let hours = len.round();
    if (len - hours).abs() > 1e-9 * len.max(1.0) || hours < 1.0 {
        return Err(Error::Refused(format!(
            "horizon length {len} h is not a whole number of hours"
        )));
    }
    let count = hours as usize;
    let starts: Vec<f64> = (0..count).map(|j| h.t1 + j as f64).collect();
    let bucket = |tr: &Trajectory| -> Result<Vec<f64>> {
        starts
            .iter()
            .map(|&a| tr.integrate(a, (a + 1.0).min(h.t2)))
            .collect()
    };
    let mut rows = Vec::with_capacity(sched.units.len() + 1);
    for u in &sched.units {
        rows.push((u.id.clone(), bucket(&u.power)?));
    }
    if let Some(sl) = &sched.slack {
        rows.push(("slack".to_string(), bucket(sl)?));
    }
    Ok(HourlyEnergy {
        hours: starts,
        rows,
    })
}
