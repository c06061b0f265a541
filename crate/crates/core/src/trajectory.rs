//! Piecewise-polynomial signals over a finite horizon.
//!
//! Every trajectory is stored as one local cubic per mesh interval,
//! `p_j(s) = c0 + c1 s + c2 s^2 + c3 s^3` with `s = t - t_j`. Piecewise-linear,
//! cubic Hermite, and their derivatives (piecewise constant, piecewise
//! quadratic) are all special cases, so evaluation, differentiation, and
//! integration are exact for each of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discretization scheme for power and load trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// C0 piecewise-linear interpolation; derivatives live on interval midpoints.
    PiecewiseLinear,
    /// C1 cubic Hermite splines with node values and node derivatives.
    CubicHermite,
}

impl Scheme {
    pub fn label(self) -> &'static str {
        match self {
            Scheme::PiecewiseLinear => "uniform",
            Scheme::CubicHermite => "spline",
        }
    }
}

/// Operating horizon `[t1, t2]` in hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    pub t1: f64,
    pub t2: f64,
}

impl Horizon {
    pub fn new(t1: f64, t2: f64) -> Result<Self> {
        if !(t1.is_finite() && t2.is_finite()) || t2 <= t1 {
            return Err(Error::Domain(format!(
                "horizon requires t2 > t1, got [{t1}, {t2}]"
            )));
        }
        Ok(Horizon { t1, t2 })
    }

    pub fn length(&self) -> f64 {
        self.t2 - self.t1
    }

    fn slack(&self) -> f64 {
        1e-12 * self.length().max(1.0)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t1 - self.slack() && t <= self.t2 + self.slack()
    }
}

/// Nodes and quadrature weights over a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    horizon: Horizon,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Mesh {
    /// Uniform mesh with trapezoid weights.
    pub fn uniform(horizon: Horizon, intervals: usize) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::Domain("mesh needs at least one interval".into()));
        }
        let h = horizon.length() / intervals as f64;
        let mut nodes: Vec<f64> = (0..=intervals).map(|i| horizon.t1 + h * i as f64).collect();
        nodes[intervals] = horizon.t2;
        Self::from_nodes(horizon, nodes)
    }

    /// Arbitrary strictly increasing nodes with trapezoid weights.
    pub fn from_nodes(horizon: Horizon, nodes: Vec<f64>) -> Result<Self> {
        validate_nodes(&horizon, &nodes)?;
        let n = nodes.len();
        let mut weights = vec![0.0; n];
        for j in 0..n - 1 {
            let h = nodes[j + 1] - nodes[j];
            weights[j] += 0.5 * h;
            weights[j + 1] += 0.5 * h;
        }
        Ok(Mesh {
            horizon,
            nodes,
            weights,
        })
    }

    /// Composite Gauss-Lobatto rule with `points` nodes per uniform interval.
    /// Interval end points are shared, so the mesh has `intervals*(points-1)+1` nodes.
    pub fn gauss_lobatto(horizon: Horizon, intervals: usize, points: usize) -> Result<Self> {
        if intervals == 0 || points < 2 {
            return Err(Error::Domain(
                "Gauss-Lobatto mesh needs >= 1 interval and >= 2 points".into(),
            ));
        }
        let (ref_nodes, ref_weights) = lobatto_rule(points);
        let h = horizon.length() / intervals as f64;
        let total = intervals * (points - 1) + 1;
        let mut nodes = Vec::with_capacity(total);
        let mut weights = vec![0.0; total];
        for j in 0..intervals {
            let a = horizon.t1 + h * j as f64;
            for (q, (&xi, &wi)) in ref_nodes.iter().zip(&ref_weights).enumerate() {
                let idx = j * (points - 1) + q;
                if q > 0 || j == 0 {
                    nodes.push(a + 0.5 * h * (xi + 1.0));
                }
                weights[idx] += 0.5 * h * wi;
            }
        }
        nodes[0] = horizon.t1;
        nodes[total - 1] = horizon.t2;
        validate_nodes(&horizon, &nodes)?;
        Ok(Mesh {
            horizon,
            nodes,
            weights,
        })
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    /// `sum_i w_i f(t_i)`.
    pub fn quadrature(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }

    pub fn integrate_samples(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }
}

fn validate_nodes(horizon: &Horizon, nodes: &[f64]) -> Result<()> {
    if nodes.len() < 2 {
        return Err(Error::Domain("mesh needs at least two nodes".into()));
    }
    let tol = horizon.slack();
    if (nodes[0] - horizon.t1).abs() > tol || (nodes[nodes.len() - 1] - horizon.t2).abs() > tol {
        return Err(Error::Domain("mesh must start at t1 and end at t2".into()));
    }
    if nodes.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain(
            "mesh nodes must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Gauss-Lobatto nodes and weights on `[-1, 1]`.
pub fn lobatto_rule(points: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(points >= 2);
    let n = points - 1;
    let mut nodes = vec![0.0; points];
    let mut weights = vec![0.0; points];
    nodes[0] = -1.0;
    nodes[n] = 1.0;
    let end_w = 2.0 / (n as f64 * points as f64);
    weights[0] = end_w;
    weights[n] = end_w;
    for i in 1..n {
        // Interior nodes are the roots of P'_n; Chebyshev-Gauss-Lobatto start.
        let mut x = -(std::f64::consts::PI * i as f64 / n as f64).cos();
        for _ in 0..100 {
            let (_, dp, d2p) = legendre_with_derivs(n, x);
            let step = dp / d2p;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (p, _, _) = legendre_with_derivs(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / (n as f64 * points as f64 * p * p);
    }
    (nodes, weights)
}

fn legendre_with_derivs(n: usize, x: f64) -> (f64, f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let denom = 1.0 - x * x;
    let dp = nf * (p0 - x * p1) / denom;
    let d2p = (2.0 * x * dp - nf * (nf + 1.0) * p1) / denom;
    (p1, dp, d2p)
}

/// Shape of the per-interval polynomials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Piecewise constant, e.g. the derivative of a piecewise-linear signal.
    Step,
    Linear,
    /// Piecewise quadratic, e.g. the derivative of a cubic Hermite signal.
    Quadratic,
    Hermite,
}

/// Immutable piecewise-polynomial function of time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    horizon: Horizon,
    knots: Vec<f64>,
    coeffs: Vec<[f64; 4]>,
    shape: Shape,
}

impl Trajectory {
    pub fn constant(mesh: &Mesh, value: f64) -> Self {
        Self::piecewise_linear(mesh, &vec![value; mesh.len()]).expect("lengths match")
    }

    pub fn piecewise_linear(mesh: &Mesh, values: &[f64]) -> Result<Self> {
        check_len(mesh, values)?;
        let coeffs = mesh
            .nodes()
            .windows(2)
            .zip(values.windows(2))
            .map(|(t, v)| [v[0], (v[1] - v[0]) / (t[1] - t[0]), 0.0, 0.0])
            .collect();
        Ok(Self::raw(mesh, coeffs, Shape::Linear))
    }

    pub fn cubic_hermite(mesh: &Mesh, values: &[f64], slopes: &[f64]) -> Result<Self> {
        check_len(mesh, values)?;
        check_len(mesh, slopes)?;
        let t = mesh.nodes();
        let coeffs = (0..mesh.intervals())
            .map(|j| {
                hermite_coeffs(
                    t[j + 1] - t[j],
                    values[j],
                    values[j + 1],
                    slopes[j],
                    slopes[j + 1],
                )
            })
            .collect();
        Ok(Self::raw(mesh, coeffs, Shape::Hermite))
    }

    /// Piecewise-constant trajectory from one value per interval.
    pub fn step(mesh: &Mesh, interval_values: &[f64]) -> Result<Self> {
        if interval_values.len() != mesh.intervals() {
            return Err(Error::Schema(format!(
                "expected {} interval values, got {}",
                mesh.intervals(),
                interval_values.len()
            )));
        }
        let coeffs = interval_values
            .iter()
            .map(|&v| [v, 0.0, 0.0, 0.0])
            .collect();
        Ok(Self::raw(mesh, coeffs, Shape::Step))
    }

    /// Interpolating trajectory. Hermite slopes come from centered differences
    /// at interior nodes and one-sided differences at the ends.
    pub fn from_samples(mesh: &Mesh, values: &[f64], scheme: Scheme) -> Result<Self> {
        check_len(mesh, values)?;
        match scheme {
            Scheme::PiecewiseLinear => Self::piecewise_linear(mesh, values),
            Scheme::CubicHermite => {
                let slopes = finite_difference_slopes(mesh.nodes(), values);
                Self::cubic_hermite(mesh, values, &slopes)
            }
        }
    }

    fn raw(mesh: &Mesh, coeffs: Vec<[f64; 4]>, shape: Shape) -> Self {
        Trajectory {
            horizon: mesh.horizon(),
            knots: mesh.nodes().to_vec(),
            coeffs,
            shape,
        }
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn scheme(&self) -> Option<Scheme> {
        match self.shape {
            Shape::Linear => Some(Scheme::PiecewiseLinear),
            Shape::Hermite => Some(Scheme::CubicHermite),
            _ => None,
        }
    }

    pub fn segment_coeffs(&self) -> &[[f64; 4]] {
        &self.coeffs
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.coeffs.len();
        self.knots
            .partition_point(|&k| k <= t)
            .saturating_sub(1)
            .min(n - 1)
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        if !self.horizon.contains(t) {
            return Err(Error::Domain(format!(
                "t = {t} outside horizon [{}, {}]",
                self.horizon.t1, self.horizon.t2
            )));
        }
        let j = self.segment(t);
        Ok(poly(&self.coeffs[j], t - self.knots[j]))
    }

    /// Derivative evaluated from the right at `t` (from the left at `t2`).
    pub fn slope(&self, t: f64) -> Result<f64> {
        self.derivative().eval(t)
    }

    /// Values at the knots.
    pub fn node_values(&self) -> Vec<f64> {
        let n = self.coeffs.len();
        let mut out: Vec<f64> = self.coeffs.iter().map(|c| c[0]).collect();
        out.push(poly(&self.coeffs[n - 1], self.knots[n] - self.knots[n - 1]));
        out
    }

    /// Derivative at each knot, taken from the right except at the last knot.
    pub fn node_slopes(&self) -> Vec<f64> {
        let n = self.coeffs.len();
        let mut out: Vec<f64> = self.coeffs.iter().map(|c| c[1]).collect();
        out.push(dpoly(
            &self.coeffs[n - 1],
            self.knots[n] - self.knots[n - 1],
        ));
        out
    }

    /// Value at the midpoint of each interval.
    pub fn midpoint_values(&self) -> Vec<f64> {
        self.coeffs
            .iter()
            .zip(self.knots.windows(2))
            .map(|(c, t)| poly(c, 0.5 * (t[1] - t[0])))
            .collect()
    }

    /// Exact derivative. Linear becomes step, Hermite becomes quadratic.
    pub fn derivative(&self) -> Trajectory {
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| [c[1], 2.0 * c[2], 3.0 * c[3], 0.0])
            .collect();
        let shape = match self.shape {
            Shape::Step | Shape::Linear => Shape::Step,
            Shape::Quadratic => Shape::Linear,
            Shape::Hermite => Shape::Quadratic,
        };
        Trajectory {
            horizon: self.horizon,
            knots: self.knots.clone(),
            coeffs,
            shape,
        }
    }

    /// Exact integral over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64) -> Result<f64> {
        if b < a {
            return Err(Error::Domain(format!(
                "reversed integration bounds [{a}, {b}]"
            )));
        }
        if !self.horizon.contains(a) || !self.horizon.contains(b) {
            return Err(Error::Domain(format!(
                "integration bounds [{a}, {b}] outside horizon"
            )));
        }
        let (ja, jb) = (self.segment(a), self.segment(b));
        if ja == jb {
            let c = &self.coeffs[ja];
            let k = self.knots[ja];
            return Ok(ipoly(c, b - k) - ipoly(c, a - k));
        }
        let mut total = ipoly(&self.coeffs[ja], self.knots[ja + 1] - self.knots[ja])
            - ipoly(&self.coeffs[ja], a - self.knots[ja]);
        for j in ja + 1..jb {
            total += ipoly(&self.coeffs[j], self.knots[j + 1] - self.knots[j]);
        }
        total += ipoly(&self.coeffs[jb], b - self.knots[jb]);
        Ok(total)
    }

    pub fn integral(&self) -> f64 {
        self.coeffs
            .iter()
            .zip(self.knots.windows(2))
            .map(|(c, t)| ipoly(c, t[1] - t[0]))
            .sum()
    }

    /// Largest jump of the first derivative across interior knots.
    pub fn max_slope_jump(&self) -> f64 {
        (1..self.coeffs.len())
            .map(|j| {
                let left = dpoly(&self.coeffs[j - 1], self.knots[j] - self.knots[j - 1]);
                (left - self.coeffs[j][1]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest jump of the value across interior knots.
    pub fn max_value_jump(&self) -> f64 {
        (1..self.coeffs.len())
            .map(|j| {
                let left = poly(&self.coeffs[j - 1], self.knots[j] - self.knots[j - 1]);
                (left - self.coeffs[j][0]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Pointwise sum with another trajectory on the same knots.
    pub fn add(&self, other: &Trajectory) -> Result<Trajectory> {
        if self.knots != other.knots {
            return Err(Error::Domain(
                "trajectories live on different meshes".into(),
            ));
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]])
            .collect();
        let shape = if self.shape == Shape::Hermite || other.shape == Shape::Hermite {
            Shape::Hermite
        } else {
            self.shape.max_with(other.shape)
        };
        Ok(Trajectory {
            horizon: self.horizon,
            knots: self.knots.clone(),
            coeffs,
            shape,
        })
    }
}

impl Shape {
    fn rank(self) -> u8 {
        match self {
            Shape::Step => 0,
            Shape::Linear => 1,
            Shape::Quadratic => 2,
            Shape::Hermite => 3,
        }
    }

    fn max_with(self, other: Shape) -> Shape {
        if self.rank() >= other.rank() {
            self
        } else {
            other
        }
    }
}

fn check_len(mesh: &Mesh, values: &[f64]) -> Result<()> {
    if values.len() != mesh.len() {
        return Err(Error::Schema(format!(
            "expected {} samples (one per node), got {}",
            mesh.len(),
            values.len()
        )));
    }
    Ok(())
}

pub(crate) fn hermite_coeffs(h: f64, v0: f64, v1: f64, d0: f64, d1: f64) -> [f64; 4] {
    let delta = (v1 - v0) / h;
    [
        v0,
        d0,
        (3.0 * delta - 2.0 * d0 - d1) / h,
        (d0 + d1 - 2.0 * delta) / (h * h),
    ]
}

/// Centered differences inside, one-sided at both ends.
pub fn finite_difference_slopes(times: &[f64], values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let (a, b) = if i == 0 {
                (0, 1)
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            (values[b] - values[a]) / (times[b] - times[a])
        })
        .collect()
}

fn poly(c: &[f64; 4], s: f64) -> f64 {
    c[0] + s * (c[1] + s * (c[2] + s * c[3]))
}

fn dpoly(c: &[f64; 4], s: f64) -> f64 {
    c[1] + s * (2.0 * c[2] + s * 3.0 * c[3])
}

fn ipoly(c: &[f64; 4], s: f64) -> f64 {
    s * (c[0] + s * (c[1] / 2.0 + s * (c[2] / 3.0 + s * c[3] / 4.0)))
}
