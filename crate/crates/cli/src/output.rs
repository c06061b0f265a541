//! Deterministic text output: CSV with 17 significant digits and pretty JSON.

use std::fmt::Write;

use anyhow::Result;
use ctprice::dispatch::Dispatch;
use ctprice::market_model::Scenario;
use ctprice::pricing::{marginal_units, ElResidual, HourlyEnergy, PriceReport};
use ctprice::qp_solver::{KktResiduals, SolveStatus};
use ctprice::trajectory::Scheme;
use serde::Serialize;

fn num(out: &mut String, v: f64) {
    // -0 prints as 0 so reruns and platforms agree
    let v = if v == 0.0 { 0.0 } else { v };
    write!(out, "{v:.16e}").unwrap();
}

fn row(out: &mut String, values: &[f64]) {
    for (j, &v) in values.iter().enumerate() {
        if j > 0 {
            out.push(',');
        }
        num(out, v);
    }
    out.push('\n');
}

/// `t,y,lambda` then six columns per unit; multipliers within the marginal
/// tolerance are written as zeros.
pub fn trajectory_csv(s: &Scenario, d: &Dispatch) -> Result<String> {
    let m = &d.multipliers;
    let tol = m.default_tolerance();
    let active = |v: Vec<f64>| -> Vec<f64> {
        v.into_iter()
            .map(|x| if x.abs() <= tol { 0.0 } else { x })
            .collect()
    };
    let mut out = String::from("t,y,lambda");
    for u in &s.units {
        let id = &u.id;
        write!(
            out,
            ",x_{id},mu_hi_{id},mu_lo_{id},gamma_hi_{id},gamma_lo_{id},beta_{id}"
        )
        .unwrap();
    }
    out.push('\n');

    let y = d.schedule.load.node_values();
    let cols: Vec<[Vec<f64>; 6]> = d
        .schedule
        .units
        .iter()
        .zip(&m.units)
        .map(|(us, um)| {
            [
                us.power.node_values(),
                active(um.mu_hi.clone()),
                active(um.mu_lo.clone()),
                active(m.ramp_at_nodes(&um.gamma_hi)),
                active(m.ramp_at_nodes(&um.gamma_lo)),
                active(um.beta_hi.clone()),
            ]
        })
        .collect();
    let mut vals = Vec::with_capacity(3 + 6 * cols.len());
    for i in 0..m.times.len() {
        vals.clear();
        vals.extend([m.times[i], y[i], m.lambda[i]]);
        for c in &cols {
            vals.extend(c.iter().map(|v| v[i]));
        }
        row(&mut out, &vals);
    }
    Ok(out)
}

/// `hour` then one MWh column per unit, plus `slack` when enabled.
pub fn hourly_csv(h: &HourlyEnergy) -> String {
    let mut out = String::from("hour");
    for (id, _) in &h.rows {
        write!(out, ",{id}").unwrap();
    }
    out.push('\n');
    let mut vals = Vec::new();
    for (j, &t) in h.hours.iter().enumerate() {
        vals.clear();
        vals.push(t);
        vals.extend(h.rows.iter().map(|(_, r)| r[j]));
        row(&mut out, &vals);
    }
    out
}

#[derive(Serialize)]
struct SolveReport<'a> {
    scheme: Scheme,
    intervals: usize,
    status: SolveStatus,
    iterations: usize,
    relative_gap: f64,
    objective: f64,
    kkt: KktResiduals,
    /// unit ids with no active limit, per node
    marginal: Vec<Vec<&'a str>>,
    price: &'a PriceReport,
    euler_lagrange: &'a ElResidual,
}

pub fn solve_report(
    s: &Scenario,
    d: &Dispatch,
    price: &PriceReport,
    el: &ElResidual,
    intervals: usize,
) -> Result<String> {
    let marginal = marginal_units(&d.multipliers, None)
        .into_iter()
        .map(|row| {
            row.into_iter()
                .zip(&s.units)
                .filter(|(m, _)| *m)
                .map(|(_, u)| u.id.as_str())
                .collect()
        })
        .collect();
    json(&SolveReport {
        scheme: d.schedule.scheme,
        intervals,
        status: d.solution.status,
        iterations: d.solution.iterations,
        relative_gap: d.solution.relative_gap,
        objective: d.schedule.objective,
        kkt: d.residuals(),
        marginal,
        price,
        euler_lagrange: el,
    })
}

pub fn json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        let mut s = String::new();
        row(&mut s, &[2.0, -0.0, 0.1]);
        assert_eq!(
            s,
            "2.0000000000000000e0,0.0000000000000000e0,1.0000000000000001e-1\n"
        );
    }
}
