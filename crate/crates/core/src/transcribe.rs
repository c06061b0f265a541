//! Collocation transcription of a dispatch scenario into a convex QP.
//!
//! Every constraint row is tagged in a [`DualMap`] with the quadrature weight
//! of the time slot it enforces, so `dual / weight` is a sample of the
//! corresponding continuous-time multiplier.
//!
//! Piecewise-linear scheme: node powers `x_{k,i}`; ramps are interval slopes
//! living on interval midpoints with weight `dt_j`.
//!
//! Cubic Hermite scheme: node powers and node derivatives `(x_{k,i}, d_{k,i})`;
//! power and ramp bids are integrated with a 5-point Gauss-Lobatto rule per
//! interval, ramp limits are enforced at knots and interval midpoints (weighted
//! by Simpson's rule), and balance is imposed on node values and node
//! derivatives so the dispatched sum equals the load spline everywhere.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::market_model::Scenario;
use crate::qp_solver::{QpProblem, SparseMatrix};
use crate::trajectory::{lobatto_rule, Mesh, Scheme, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RowKind {
    /// `y_i - sum_k x_{k,i} - slack_i = 0`
    Balance,
    /// `y'_i - sum_k d_{k,i} = 0` (cubic Hermite only)
    BalanceSlope,
    /// `z_{k,0} = 0`
    EnergyInit,
    /// `z_{k,j+1} - z_{k,j} - int_j x_k = 0`
    EnergyLink,
    /// `r+ - r- - xdot = 0`
    RampSplit,
    PMax,
    PMin,
    /// power limits at interval midpoints (cubic Hermite only)
    PMaxMid,
    PMinMid,
    RMax,
    RMin,
    ZMax,
    SplitPlusNonneg,
    SplitMinusNonneg,
    SlackMin,
    SlackMax,
}

/// Identity of one constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RowTag {
    pub kind: RowKind,
    pub unit: Option<usize>,
    /// node index, interval index, or ramp-point index depending on `kind`
    pub index: usize,
    pub time: f64,
    pub weight: f64,
}

/// Variable indices of the transcribed problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub power: Vec<Vec<usize>>,
    pub slope: Option<Vec<Vec<usize>>>,
    pub energy: Vec<Option<Vec<usize>>>,
    pub ramp_plus: Vec<Option<Vec<usize>>>,
    pub ramp_minus: Vec<Option<Vec<usize>>>,
    pub slack: Option<Vec<usize>>,
    pub num_vars: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualMap {
    pub scheme: Scheme,
    pub mesh: Mesh,
    /// times and quadrature weights of the ramp points
    pub ramp_times: Vec<f64>,
    pub ramp_weights: Vec<f64>,
    pub eq: Vec<RowTag>,
    pub ineq: Vec<RowTag>,
    pub layout: Layout,
    pub unit_ids: Vec<String>,
}

impl DualMap {
    pub fn num_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn count(&self, kind: RowKind) -> usize {
        self.eq
            .iter()
            .chain(&self.ineq)
            .filter(|r| r.kind == kind)
            .count()
    }
}

/// A transcribed scenario.
#[derive(Debug, Clone)]
pub struct Transcription {
    pub problem: QpProblem,
    pub map: DualMap,
    /// load as represented on the solve mesh
    pub load: Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitSchedule {
    pub id: String,
    pub power: Trajectory,
    pub energy: Option<Trajectory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub scheme: Scheme,
    pub mesh: Mesh,
    pub units: Vec<UnitSchedule>,
    pub slack: Option<Trajectory>,
    pub load: Trajectory,
    /// total cost in $
    pub objective: f64,
}

type Form = Vec<(usize, f64)>;

/// Lobatto points per interval for cubic Hermite cost integrals; exact for
/// the degree-6 integrand of a quadratic bid on a cubic trajectory.
pub const COST_POINTS: usize = 5;

/// Hermite basis values and `d/du` at local coordinate `u`, ordered
/// `(v0, h*d0, v1, h*d1)`.
fn hermite_basis(u: f64) -> ([f64; 4], [f64; 4]) {
    let u2 = u * u;
    let u3 = u2 * u;
    (
        [
            2.0 * u3 - 3.0 * u2 + 1.0,
            u3 - 2.0 * u2 + u,
            -2.0 * u3 + 3.0 * u2,
            u3 - u2,
        ],
        [
            6.0 * u2 - 6.0 * u,
            3.0 * u2 - 4.0 * u + 1.0,
            -6.0 * u2 + 6.0 * u,
            3.0 * u2 - 2.0 * u,
        ],
    )
}

struct Builder {
    hess: Vec<(usize, usize, f64)>,
    linear: Vec<f64>,
    offset: f64,
    eq_rows: Vec<(Form, f64, RowTag)>,
    ineq_rows: Vec<(Form, f64, RowTag)>,
}

impl Builder {
    /// Adds `w * (lin * f + quad * f^2)` to the objective.
    fn add_cost(&mut self, f: &Form, w: f64, lin: f64, quad: f64) {
        if lin != 0.0 {
            for &(v, a) in f {
                self.linear[v] += w * lin * a;
            }
        }
        if quad != 0.0 {
            for &(v1, a1) in f {
                for &(v2, a2) in f {
                    self.hess.push((v1, v2, 2.0 * w * quad * a1 * a2));
                }
            }
        }
    }

    fn eq(&mut self, f: Form, rhs: f64, tag: RowTag) {
        self.eq_rows.push((f, rhs, tag));
    }

    fn le(&mut self, f: Form, rhs: f64, tag: RowTag) {
        self.ineq_rows.push((f, rhs, tag));
    }
}

fn neg(f: &Form) -> Form {
    f.iter().map(|&(v, a)| (v, -a)).collect()
}

fn tag(kind: RowKind, unit: Option<usize>, index: usize, time: f64, weight: f64) -> RowTag {
    RowTag {
        kind,
        unit,
        index,
        time,
        weight,
    }
}

/// Transcribe `s` on a uniform mesh with `intervals` intervals.
pub fn transcribe(s: &Scenario, scheme: Scheme, intervals: usize) -> Result<Transcription> {
    if intervals < 2 {
        return Err(Error::Transcription(format!(
            "need at least 2 intervals, got {intervals}"
        )));
    }
    s.validate()?;
    let mesh = Mesh::uniform(s.horizon, intervals)?;
    transcribe_on(s, scheme, &mesh)
}

/// Transcribe on an explicit mesh (cubic Hermite requires uniform spacing only
/// through its collocation rule, which is built per interval).
pub fn transcribe_on(s: &Scenario, scheme: Scheme, mesh: &Mesh) -> Result<Transcription> {
    if mesh.intervals() < 2 {
        return Err(Error::Transcription("need at least 2 intervals".into()));
    }
    let t = mesh.nodes();
    let nn = mesh.len();
    let ni = mesh.intervals();
    let w = mesh.weights();
    let y: Vec<f64> = t.iter().map(|&ti| s.load.eval(ti)).collect::<Result<_>>()?;
    let load_slope = s.load.derivative();
    let dy: Vec<f64> = t
        .iter()
        .map(|&ti| load_slope.eval(ti))
        .collect::<Result<_>>()?;

    let y_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y_min = y.iter().copied().fold(f64::INFINITY, f64::min);
    if !s.slack.enabled {
        let cap: f64 = s.units.iter().map(|u| u.p_max).sum();
        if cap < y_max {
            return Err(Error::Infeasible(format!(
                "total p_max {cap} < peak load {y_max} and slack is disabled"
            )));
        }
        let floor: f64 = s.units.iter().map(|u| u.p_min).sum();
        if floor > y_min {
            return Err(Error::Infeasible(format!(
                "total p_min {floor} > minimum load {y_min} and slack is disabled"
            )));
        }
    }

    // ramp points
    let (ramp_times, ramp_weights) = match scheme {
        Scheme::PiecewiseLinear => {
            let times = t.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
            let weights = t.windows(2).map(|p| p[1] - p[0]).collect();
            (times, weights)
        }
        Scheme::CubicHermite => {
            let mut times = Vec::with_capacity(2 * ni + 1);
            let mut weights = vec![0.0; 2 * ni + 1];
            for j in 0..ni {
                let h = t[j + 1] - t[j];
                times.push(t[j]);
                times.push(0.5 * (t[j] + t[j + 1]));
                weights[2 * j] += h / 6.0;
                weights[2 * j + 1] += 4.0 * h / 6.0;
                weights[2 * j + 2] += h / 6.0;
            }
            times.push(t[ni]);
            (times, weights)
        }
    };
    let np = ramp_times.len();

    // variable layout
    let mut next = 0usize;
    let mut alloc = |count: usize| {
        let v: Vec<usize> = (next..next + count).collect();
        next += count;
        v
    };
    let k_units = s.units.len();
    let mut power = Vec::new();
    let mut slope = Vec::new();
    let mut energy = Vec::new();
    let mut ramp_plus = Vec::new();
    let mut ramp_minus = Vec::new();
    for u in &s.units {
        power.push(alloc(nn));
        if scheme == Scheme::CubicHermite {
            slope.push(alloc(nn));
        }
        energy.push(if u.needs_energy() {
            Some(alloc(nn))
        } else {
            None
        });
        if u.cost.b_abs > 0.0 {
            ramp_plus.push(Some(alloc(np)));
            ramp_minus.push(Some(alloc(np)));
        } else {
            ramp_plus.push(None);
            ramp_minus.push(None);
        }
    }
    let slack = if s.slack.enabled {
        Some(alloc(nn))
    } else {
        None
    };
    let layout = Layout {
        power,
        slope: if scheme == Scheme::CubicHermite {
            Some(slope)
        } else {
            None
        },
        energy,
        ramp_plus,
        ramp_minus,
        slack,
        num_vars: next,
    };

    let mut b = Builder {
        hess: Vec::new(),
        linear: vec![0.0; layout.num_vars],
        offset: 0.0,
        eq_rows: Vec::new(),
        ineq_rows: Vec::new(),
    };

    // value and rate of unit k at ramp point p
    let rate_form = |k: usize, p: usize| -> Form {
        let x = &layout.power[k];
        match scheme {
            Scheme::PiecewiseLinear => {
                let h = t[p + 1] - t[p];
                vec![(x[p + 1], 1.0 / h), (x[p], -1.0 / h)]
            }
            Scheme::CubicHermite => {
                let d = &layout.slope.as_ref().unwrap()[k];
                if p % 2 == 0 {
                    vec![(d[p / 2], 1.0)]
                } else {
                    let j = p / 2;
                    let h = t[j + 1] - t[j];
                    vec![
                        (x[j + 1], 1.5 / h),
                        (x[j], -1.5 / h),
                        (d[j], -0.25),
                        (d[j + 1], -0.25),
                    ]
                }
            }
        }
    };
    // value and rate of unit k at local coordinate `u` of interval j
    let hermite_forms = |k: usize, j: usize, u: f64| -> (Form, Form) {
        let x = &layout.power[k];
        let d = &layout.slope.as_ref().unwrap()[k];
        let h = t[j + 1] - t[j];
        let (bv, br) = hermite_basis(u);
        let vars = [x[j], d[j], x[j + 1], d[j + 1]];
        let scale = [1.0, h, 1.0, h];
        let value = (0..4).map(|m| (vars[m], bv[m] * scale[m])).collect();
        let rate = (0..4).map(|m| (vars[m], br[m] * scale[m] / h)).collect();
        (value, rate)
    };
    let (cost_nodes, cost_weights) = lobatto_rule(COST_POINTS);

    for (k, u) in s.units.iter().enumerate() {
        let c = &u.cost;
        let x = &layout.power[k];
        b.offset += c.a0 * s.horizon.length();

        // power cost
        match scheme {
            Scheme::PiecewiseLinear => {
                for i in 0..nn {
                    b.add_cost(&vec![(x[i], 1.0)], w[i], c.a1, c.a2);
                }
            }
            Scheme::CubicHermite => {
                for j in 0..ni {
                    let h = t[j + 1] - t[j];
                    for (&q, &wq) in cost_nodes.iter().zip(&cost_weights) {
                        let (value, rate) = hermite_forms(k, j, 0.5 * (q + 1.0));
                        b.add_cost(&value, 0.5 * h * wq, c.a1, c.a2);
                        b.add_cost(&rate, 0.5 * h * wq, c.b1, c.b2);
                    }
                }
            }
        }
        // ramp limits (and the piecewise-linear ramp cost) at ramp points
        for p in 0..np {
            let f = rate_form(k, p);
            let wp = ramp_weights[p];
            if scheme == Scheme::PiecewiseLinear {
                b.add_cost(&f, wp, c.b1, c.b2);
            }
            b.le(
                f.clone(),
                u.r_max,
                tag(RowKind::RMax, Some(k), p, ramp_times[p], wp),
            );
            b.le(
                neg(&f),
                -u.r_min,
                tag(RowKind::RMin, Some(k), p, ramp_times[p], wp),
            );
            if let (Some(rp), Some(rm)) = (&layout.ramp_plus[k], &layout.ramp_minus[k]) {
                let mut split = vec![(rp[p], 1.0), (rm[p], -1.0)];
                split.extend(neg(&f));
                b.eq(
                    split,
                    0.0,
                    tag(RowKind::RampSplit, Some(k), p, ramp_times[p], wp),
                );
                b.add_cost(&vec![(rp[p], 1.0)], wp, c.b_abs, 0.0);
                b.add_cost(&vec![(rm[p], 1.0)], wp, c.b_abs, 0.0);
                b.le(
                    vec![(rp[p], -1.0)],
                    0.0,
                    tag(RowKind::SplitPlusNonneg, Some(k), p, ramp_times[p], wp),
                );
                b.le(
                    vec![(rm[p], -1.0)],
                    0.0,
                    tag(RowKind::SplitMinusNonneg, Some(k), p, ramp_times[p], wp),
                );
            }
        }
        // power limits: nodes (piecewise-linear) or knots and midpoints (cubic Hermite)
        match scheme {
            Scheme::PiecewiseLinear => {
                for i in 0..nn {
                    let f = vec![(x[i], 1.0)];
                    b.le(
                        f.clone(),
                        u.p_max,
                        tag(RowKind::PMax, Some(k), i, t[i], w[i]),
                    );
                    b.le(
                        neg(&f),
                        -u.p_min,
                        tag(RowKind::PMin, Some(k), i, t[i], w[i]),
                    );
                }
            }
            Scheme::CubicHermite => {
                for p in 0..np {
                    let wp = ramp_weights[p];
                    let tp = ramp_times[p];
                    let (f, hi, lo) = if p % 2 == 0 {
                        (vec![(x[p / 2], 1.0)], RowKind::PMax, RowKind::PMin)
                    } else {
                        (
                            hermite_forms(k, p / 2, 0.5).0,
                            RowKind::PMaxMid,
                            RowKind::PMinMid,
                        )
                    };
                    b.le(f.clone(), u.p_max, tag(hi, Some(k), p / 2, tp, wp));
                    b.le(neg(&f), -u.p_min, tag(lo, Some(k), p / 2, tp, wp));
                }
            }
        }
        // energy
        if let Some(z) = &layout.energy[k] {
            b.eq(
                vec![(z[0], 1.0)],
                0.0,
                tag(RowKind::EnergyInit, Some(k), 0, t[0], 1.0),
            );
            for j in 0..ni {
                let h = t[j + 1] - t[j];
                let mut f = vec![
                    (z[j + 1], 1.0),
                    (z[j], -1.0),
                    (x[j], -0.5 * h),
                    (x[j + 1], -0.5 * h),
                ];
                if let Some(d) = &layout.slope {
                    f.push((d[k][j], -h * h / 12.0));
                    f.push((d[k][j + 1], h * h / 12.0));
                }
                b.eq(f, 0.0, tag(RowKind::EnergyLink, Some(k), j, t[j], h));
            }
            for i in 0..nn {
                b.add_cost(&vec![(z[i], 1.0)], w[i], c.e1, c.e2);
                if let Some(zmax) = u.z_max {
                    b.le(
                        vec![(z[i], 1.0)],
                        zmax,
                        tag(RowKind::ZMax, Some(k), i, t[i], w[i]),
                    );
                }
            }
        }
    }

    if let Some(sl) = &layout.slack {
        let cap = y_max.max(1.0);
        for i in 0..nn {
            b.add_cost(&vec![(sl[i], 1.0)], w[i], s.slack.price, 0.0);
            b.le(
                vec![(sl[i], -1.0)],
                0.0,
                tag(RowKind::SlackMin, None, i, t[i], w[i]),
            );
            b.le(
                vec![(sl[i], 1.0)],
                cap,
                tag(RowKind::SlackMax, None, i, t[i], w[i]),
            );
        }
    }

    // balance: A u = b with A u - b = y - sum x
    for i in 0..nn {
        let mut f: Form = (0..k_units).map(|k| (layout.power[k][i], -1.0)).collect();
        if let Some(sl) = &layout.slack {
            f.push((sl[i], -1.0));
        }
        b.eq(f, -y[i], tag(RowKind::Balance, None, i, t[i], w[i]));
    }
    if let Some(d) = &layout.slope {
        for i in 0..nn {
            let f: Form = (0..k_units).map(|k| (d[k][i], -1.0)).collect();
            b.eq(f, -dy[i], tag(RowKind::BalanceSlope, None, i, t[i], w[i]));
        }
    }

    let n = layout.num_vars;
    let mut sym: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (r, c, v) in b.hess {
        *sym.entry((r, c)).or_insert(0.0) += v;
    }
    let hessian =
        SparseMatrix::from_triplets(n, n, sym.into_iter().map(|((r, c), v)| (r, c, v)).collect());
    let (eq_matrix, eq_rhs, eq_tags) = rows_to_matrix(b.eq_rows, n);
    let (ineq_matrix, ineq_rhs, ineq_tags) = rows_to_matrix(b.ineq_rows, n);

    let load = match scheme {
        Scheme::PiecewiseLinear => Trajectory::piecewise_linear(mesh, &y)?,
        Scheme::CubicHermite => Trajectory::cubic_hermite(mesh, &y, &dy)?,
    };
    Ok(Transcription {
        problem: QpProblem {
            hessian,
            linear: b.linear,
            eq_matrix,
            eq_rhs,
            ineq_matrix,
            ineq_rhs,
            offset: b.offset,
        },
        map: DualMap {
            scheme,
            mesh: mesh.clone(),
            ramp_times,
            ramp_weights,
            eq: eq_tags,
            ineq: ineq_tags,
            layout,
            unit_ids: s.units.iter().map(|u| u.id.clone()).collect(),
        },
        load,
    })
}

fn rows_to_matrix(
    rows: Vec<(Form, f64, RowTag)>,
    n: usize,
) -> (SparseMatrix, Vec<f64>, Vec<RowTag>) {
    let mut triplets = Vec::new();
    let mut rhs = Vec::with_capacity(rows.len());
    let mut tags = Vec::with_capacity(rows.len());
    for (r, (f, v, tg)) in rows.into_iter().enumerate() {
        triplets.extend(f.into_iter().map(|(c, a)| (r, c, a)));
        rhs.push(v);
        tags.push(tg);
    }
    (
        SparseMatrix::from_triplets(tags.len(), n, triplets),
        rhs,
        tags,
    )
}

impl Transcription {
    /// Assemble trajectories from a primal vector and re-derive the total cost
    /// from the bids by quadrature.
    pub fn recover_schedule(&self, primal: &[f64], s: &Scenario) -> Result<Schedule> {
        let map = &self.map;
        let lay = &map.layout;
        if primal.len() != lay.num_vars {
            return Err(Error::Domain(format!(
                "primal has {} entries, transcription has {} variables",
                primal.len(),
                lay.num_vars
            )));
        }
        let mesh = &map.mesh;
        let pick = |idx: &[usize]| idx.iter().map(|&v| primal[v]).collect::<Vec<f64>>();
        let mut units = Vec::with_capacity(s.units.len());
        for (k, u) in s.units.iter().enumerate() {
            let x = pick(&lay.power[k]);
            let power = match &lay.slope {
                None => Trajectory::piecewise_linear(mesh, &x)?,
                Some(d) => Trajectory::cubic_hermite(mesh, &x, &pick(&d[k]))?,
            };
            let energy = match &lay.energy[k] {
                None => None,
                Some(z) => {
                    let zv = pick(z);
                    Some(match map.scheme {
                        Scheme::PiecewiseLinear => Trajectory::piecewise_linear(mesh, &zv)?,
                        Scheme::CubicHermite => Trajectory::cubic_hermite(mesh, &zv, &x)?,
                    })
                }
            };
            units.push(UnitSchedule {
                id: u.id.clone(),
                power,
                energy,
            });
        }
        let slack = match &lay.slack {
            None => None,
            Some(sl) => Some(Trajectory::piecewise_linear(mesh, &pick(sl))?),
        };
        let (objective, split_excess) =
            self.independent_objective(primal, &units, slack.as_ref(), s)?;
        let qp_objective = self.problem.objective(primal);
        let mismatch = (qp_objective - objective - split_excess).abs();
        if mismatch > 1e-9 * objective.abs().max(1.0) {
            return Err(Error::Consistency(format!(
                "recomputed cost {objective} disagrees with QP objective {qp_objective}"
            )));
        }
        Ok(Schedule {
            scheme: map.scheme,
            mesh: mesh.clone(),
            units,
            slack,
            load: self.load.clone(),
            objective,
        })
    }

    /// Cost by quadrature of `cost_value`; also returns the amount by which the
    /// ramp split `r+ + r-` overstates `|r|`.
    fn independent_objective(
        &self,
        primal: &[f64],
        units: &[UnitSchedule],
        slack: Option<&Trajectory>,
        s: &Scenario,
    ) -> Result<(f64, f64)> {
        let map = &self.map;
        let mesh = &map.mesh;
        let mut total = 0.0;
        let mut excess = 0.0;
        for (k, (u, sch)) in s.units.iter().zip(units).enumerate() {
            let c = &u.cost;
            total += c.a0 * s.horizon.length();
            let rate = sch.power.derivative();
            match map.scheme {
                Scheme::PiecewiseLinear => {
                    total += mesh.quadrature(|t| c.power_part(sch.power.eval(t).unwrap()));
                }
                Scheme::CubicHermite => {
                    let fine = Mesh::gauss_lobatto(mesh.horizon(), mesh.intervals(), COST_POINTS)?;
                    total += fine.quadrature(|t| {
                        c.power_part(sch.power.eval(t).unwrap())
                            + c.ramp_part(rate.eval(t).unwrap())
                            - c.b_abs * rate.eval(t).unwrap().abs()
                    });
                }
            }
            for (p, (&tp, &wp)) in map.ramp_times.iter().zip(&map.ramp_weights).enumerate() {
                let r = if map.scheme == Scheme::CubicHermite && p % 2 == 0 {
                    sch.power.node_slopes()[p / 2]
                } else {
                    rate.eval(tp)?
                };
                total += wp
                    * match map.scheme {
                        Scheme::PiecewiseLinear => c.ramp_part(r),
                        Scheme::CubicHermite => c.b_abs * r.abs(),
                    };
                if let (Some(rp), Some(rm)) = (&map.layout.ramp_plus[k], &map.layout.ramp_minus[k])
                {
                    excess += wp * c.b_abs * (primal[rp[p]] + primal[rm[p]] - r.abs());
                }
            }
            if let Some(z) = &sch.energy {
                let zv = z.node_values();
                total += mesh
                    .integrate_samples(&zv.iter().map(|&v| c.energy_part(v)).collect::<Vec<_>>());
            }
        }
        if let Some(sl) = slack {
            total += s.slack.price * mesh.integrate_samples(&sl.node_values());
        }
        Ok((total, excess))
    }
}

/// Free-function form of [`Transcription::recover_schedule`].
pub fn recover_schedule(primal: &[f64], tr: &Transcription, s: &Scenario) -> Result<Schedule> {
    tr.recover_schedule(primal, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_model::{CostFunction, SlackPolicy, Unit};
    use crate::trajectory::Horizon;

    fn flat(y: f64, units: Vec<Unit>, slack: SlackPolicy) -> Scenario {
        let mesh = Mesh::uniform(Horizon::new(0.0, 1.0).unwrap(), 4).unwrap();
        Scenario::new(Trajectory::constant(&mesh, y), units, slack).unwrap()
    }

    #[test]
    fn row_counts_single_unit() {
        let s = flat(
            5.0,
            vec![Unit::new("g", 0.0, 10.0, CostFunction::power(1.0, 0.0))],
            SlackPolicy::default(),
        );
        let tr = transcribe(&s, Scheme::PiecewiseLinear, 2).unwrap();
        assert_eq!(tr.problem.num_vars(), 3);
        assert_eq!(tr.problem.num_eq(), 3);
        assert_eq!(tr.problem.num_ineq(), 10);
        assert_eq!(tr.map.count(RowKind::Balance), 3);
        assert_eq!(tr.map.count(RowKind::PMax) + tr.map.count(RowKind::PMin), 6);
        assert_eq!(tr.map.count(RowKind::RMax) + tr.map.count(RowKind::RMin), 4);
    }

    #[test]
    fn slack_adds_one_variable_per_node() {
        let units = vec![Unit::new("g", 0.0, 10.0, CostFunction::power(1.0, 0.0))];
        let base = transcribe(
            &flat(5.0, units.clone(), SlackPolicy::default()),
            Scheme::PiecewiseLinear,
            4,
        )
        .unwrap();
        let with = transcribe(
            &flat(5.0, units, SlackPolicy::enabled(100.0)),
            Scheme::PiecewiseLinear,
            4,
        )
        .unwrap();
        assert_eq!(with.problem.num_vars(), base.problem.num_vars() + 5);
        assert_eq!(with.map.count(RowKind::RMax), base.map.count(RowKind::RMax));
    }

    #[test]
    fn abs_ramp_bid_splits_ramp() {
        let c = CostFunction {
            a1: 1.0,
            b_abs: 0.5,
            ..Default::default()
        };
        let s = flat(
            5.0,
            vec![Unit::new("g", 0.0, 10.0, c)],
            SlackPolicy::default(),
        );
        let tr = transcribe(&s, Scheme::PiecewiseLinear, 4).unwrap();
        assert_eq!(tr.problem.num_vars(), 5 + 8);
        assert_eq!(tr.map.count(RowKind::RampSplit), 4);
    }

    #[test]
    fn rejects_too_few_intervals_and_short_capacity() {
        let s = flat(
            5.0,
            vec![Unit::new("g", 0.0, 10.0, CostFunction::power(1.0, 0.0))],
            SlackPolicy::default(),
        );
        assert!(matches!(
            transcribe(&s, Scheme::PiecewiseLinear, 1),
            Err(Error::Transcription(_))
        ));
        let short = flat(
            50.0,
            vec![Unit::new("g", 0.0, 10.0, CostFunction::power(1.0, 0.0))],
            SlackPolicy::default(),
        );
        assert!(matches!(
            transcribe(&short, Scheme::PiecewiseLinear, 4),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn balance_residual_of_feasible_primal() {
        let units = vec![
            Unit::new("a", 0.0, 10.0, CostFunction::power(0.0, 0.5)),
            Unit::new("b", 0.0, 10.0, CostFunction::power(0.0, 1.0)),
        ];
        let s = flat(3.0, units, SlackPolicy::default());
        for scheme in [Scheme::PiecewiseLinear, Scheme::CubicHermite] {
            let tr = transcribe(&s, scheme, 4).unwrap();
            let mut u = vec![0.0; tr.problem.num_vars()];
            for i in 0..5 {
                u[tr.map.layout.power[0][i]] = 2.0;
                u[tr.map.layout.power[1][i]] = 1.0;
            }
            let au = tr.problem.eq_matrix.mul_vec(&u);
            for (r, (a, b)) in au.iter().zip(&tr.problem.eq_rhs).enumerate() {
                if tr.map.eq[r].kind == RowKind::Balance
                    || tr.map.eq[r].kind == RowKind::BalanceSlope
                {
                    assert!((a - b).abs() <= 1e-10);
                }
            }
            let sched = tr.recover_schedule(&u, &s).unwrap();
            let qp_obj = tr.problem.objective(&u);
            assert!((sched.objective - qp_obj).abs() <= 1e-9 * qp_obj.abs().max(1.0));
            // 1/2*4 + 1 = 3 $/h over one hour
            assert!((sched.objective - 3.0).abs() < 1e-12);
        }
    }
}
