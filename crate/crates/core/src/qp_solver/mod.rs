//! Primal-dual interior-point method for convex quadratic programs
//!
//! ```text
//! minimize    1/2 u'Hu + c'u + offset
//! subject to  A u = b        (duals nu)
//!             G u <= h       (duals omega >= 0)
//! ```
//!
//! with Lagrangian `L = 1/2 u'Hu + c'u + nu'(Au - b) + omega'(Gu - h)`, so
//! stationarity reads `Hu + c + A'nu + G'omega = 0`.
//!
//! Mehrotra predictor-corrector steps; each Newton system is the reduced KKT
//! matrix `[H + G'WG, A'; A, 0]` with a small diagonal regularization,
//! factored by an envelope LDL^T and polished with iterative refinement.

mod ldl;
mod sparse;

pub use ldl::{reverse_cuthill_mckee, Envelope, LdlFactor};
pub use sparse::{dot, norm_inf, SparseMatrix};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Symmetric PSD Hessian, stored in full (both triangles).
    pub hessian: SparseMatrix,
    pub linear: Vec<f64>,
    pub eq_matrix: SparseMatrix,
    pub eq_rhs: Vec<f64>,
    pub ineq_matrix: SparseMatrix,
    pub ineq_rhs: Vec<f64>,
    pub offset: f64,
}

impl QpProblem {
    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        0.5 * dot(u, &self.hessian.mul_vec(u)) + dot(&self.linear, u) + self.offset
    }

    /// Dimension and symmetry checks plus a PSD test by factoring `H + shift I`.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let dims_ok = self.hessian.rows() == n
            && self.hessian.cols() == n
            && self.eq_matrix.cols() == n
            && self.eq_matrix.rows() == self.eq_rhs.len()
            && self.ineq_matrix.cols() == n
            && self.ineq_matrix.rows() == self.ineq_rhs.len();
        if !dims_ok {
            return Err(Error::Domain("QP dimensions are inconsistent".into()));
        }
        let finite = self
            .linear
            .iter()
            .chain(&self.eq_rhs)
            .chain(&self.ineq_rhs)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("QP data contains non-finite values".into()));
        }
        if !self.hessian.is_symmetric(1e-12) {
            return Err(Error::Domain("Hessian is not symmetric".into()));
        }
        if n == 0 {
            return Ok(());
        }
        let scale = self
            .hessian
            .triplets()
            .fold(1.0f64, |m, (_, _, v)| m.max(v.abs()));
        let shift = 1e-10 * scale;
        let mut lower: Vec<(usize, usize, f64)> = self
            .hessian
            .triplets()
            .filter(|&(r, c, _)| r >= c)
            .collect();
        lower.extend((0..n).map(|i| (i, i, shift)));
        let pattern: Vec<(usize, usize)> = lower.iter().map(|t| (t.0, t.1)).collect();
        let env = Envelope::new(n, &pattern);
        let f = env.factor(&lower, &vec![1.0; n], 0.0);
        if f.perturbed > 0 || f.pivots().iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Domain("Hessian is not positive semidefinite".into()));
        }
        Ok(())
    }

    /// Same problem with `H` and `c` multiplied by `alpha`.
    pub fn with_scaled_cost(&self, alpha: f64) -> QpProblem {
        QpProblem {
            hessian: self.hessian.scaled(alpha),
            linear: self.linear.iter().map(|v| v * alpha).collect(),
            offset: self.offset * alpha,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterateLog {
    pub mu: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub complementarity: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub status: SolveStatus,
    pub primal: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    pub slacks: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    /// `s'omega` at the returned iterate.
    pub gap: f64,
    /// `gap / max(1, |objective|)`
    pub relative_gap: f64,
    pub iterations: usize,
    pub log: Vec<IterateLog>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// relative duality-gap tolerance
    pub tol: f64,
    pub max_iter: usize,
    pub regularization: f64,
    pub refinement_steps: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-8,
            max_iter: 100,
            regularization: 1e-10,
            refinement_steps: 3,
        }
    }
}

impl SolverSettings {
    pub fn with_tol(tol: f64) -> Self {
        SolverSettings {
            tol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_equality: f64,
    pub primal_inequality: f64,
    pub complementarity: f64,
    pub dual_negativity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        [
            self.stationarity,
            self.primal_equality,
            self.primal_inequality,
            self.complementarity,
            self.dual_negativity,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Exact KKT residual norms (infinity norm) of a candidate primal/dual point.
pub fn residuals(p: &QpProblem, s: &QpSolution) -> KktResiduals {
    let u = &s.primal;
    let mut rd = p.hessian.mul_vec(u);
    let at_nu = p.eq_matrix.tmul_vec(&s.eq_duals);
    let gt_om = p.ineq_matrix.tmul_vec(&s.ineq_duals);
    for i in 0..rd.len() {
        rd[i] += p.linear[i] + at_nu[i] + gt_om[i];
    }
    let au = p.eq_matrix.mul_vec(u);
    let gu = p.ineq_matrix.mul_vec(u);
    let primal_equality = au
        .iter()
        .zip(&p.eq_rhs)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let primal_inequality = gu
        .iter()
        .zip(&p.ineq_rhs)
        .fold(0.0f64, |m, (g, h)| m.max(g - h));
    let complementarity = gu
        .iter()
        .zip(&p.ineq_rhs)
        .zip(&s.ineq_duals)
        .fold(0.0f64, |m, ((g, h), w)| m.max((w * (h - g)).abs()));
    let dual_negativity = s.ineq_duals.iter().fold(0.0f64, |m, w| m.max(-w));
    KktResiduals {
        stationarity: norm_inf(&rd),
        primal_equality,
        primal_inequality: primal_inequality.max(0.0),
        complementarity,
        dual_negativity,
    }
}

struct Kkt<'a> {
    p: &'a QpProblem,
    env: Envelope,
    hess_lower: Vec<(usize, usize, f64)>,
    signs: Vec<f64>,
    reg: f64,
}

impl<'a> Kkt<'a> {
    fn new(p: &'a QpProblem, reg: f64) -> Self {
        let n = p.num_vars();
        let neq = p.num_eq();
        let hess_lower: Vec<_> = p.hessian.triplets().filter(|&(r, c, _)| r >= c).collect();
        let mut pattern: Vec<(usize, usize)> = hess_lower.iter().map(|t| (t.0, t.1)).collect();
        pattern.extend((0..n + neq).map(|i| (i, i)));
        for r in 0..p.num_ineq() {
            let cols: Vec<usize> = p.ineq_matrix.row(r).map(|(c, _)| c).collect();
            for (a, &ca) in cols.iter().enumerate() {
                for &cb in &cols[..=a] {
                    pattern.push((ca.max(cb), ca.min(cb)));
                }
            }
        }
        for (r, c, _) in p.eq_matrix.triplets() {
            pattern.push((n + r, c));
        }
        let mut signs = vec![1.0; n];
        signs.extend(std::iter::repeat_n(-1.0, neq));
        let env = Envelope::with_signs(n + neq, &pattern, &signs);
        Kkt {
            p,
            env,
            hess_lower,
            signs,
            reg,
        }
    }

    fn factor(&self, w: &[f64]) -> LdlFactor {
        let p = self.p;
        let n = p.num_vars();
        let neq = p.num_eq();
        let mut lower = self.hess_lower.clone();
        for i in 0..n {
            lower.push((i, i, self.reg));
        }
        for i in 0..neq {
            lower.push((n + i, n + i, -self.reg));
        }
        for (r, &wr) in w.iter().enumerate() {
            let row: Vec<(usize, f64)> = p.ineq_matrix.row(r).collect();
            for (a, &(ca, va)) in row.iter().enumerate() {
                for &(cb, vb) in &row[..=a] {
                    lower.push((ca.max(cb), ca.min(cb), wr * va * vb));
                }
            }
        }
        for (r, c, v) in p.eq_matrix.triplets() {
            lower.push((n + r, c, v));
        }
        self.env.factor(&lower, &self.signs, self.reg.max(1e-300))
    }

    /// Unregularized reduced KKT operator.
    fn apply(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let p = self.p;
        let n = p.num_vars();
        let (xu, xn) = x.split_at(n);
        let mut top = p.hessian.mul_vec(xu);
        let gx = p.ineq_matrix.mul_vec(xu);
        let wgx: Vec<f64> = gx.iter().zip(w).map(|(g, w)| g * w).collect();
        let gtw = p.ineq_matrix.tmul_vec(&wgx);
        let atn = p.eq_matrix.tmul_vec(xn);
        for i in 0..n {
            top[i] += gtw[i] + atn[i];
        }
        top.extend(p.eq_matrix.mul_vec(xu));
        top
    }

    fn solve(&self, f: &LdlFactor, w: &[f64], rhs: &[f64], steps: usize) -> Vec<f64> {
        let mut x = f.solve(rhs);
        for _ in 0..steps {
            let kx = self.apply(w, &x);
            let r: Vec<f64> = rhs.iter().zip(&kx).map(|(a, b)| a - b).collect();
            if norm_inf(&r) <= 1e-15 * (1.0 + norm_inf(rhs)) {
                break;
            }
            let dx = f.solve(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        x
    }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter().zip(dv).fold(
        1.0f64,
        |a, (&x, &d)| if d < 0.0 { a.min(-x / d) } else { a },
    )
}

/// Solve a convex QP. Only malformed input returns `Err`; non-optimal outcomes
/// are reported through `QpSolution::status`.
pub fn solve_qp(p: &QpProblem, settings: &SolverSettings) -> Result<QpSolution> {
    if !(settings.tol > 0.0) {
        return Err(Error::Domain("tolerance must be > 0".into()));
    }
    p.validate()?;
    let n = p.num_vars();
    let neq = p.num_eq();
    let m = p.num_ineq();
    let kkt = Kkt::new(p, settings.regularization);
    let steps = settings.refinement_steps;

    // Least-squares start: min 1/2 u'Hu + c'u + 1/2|Gu - h|^2 s.t. Au = b.
    let ones = vec![1.0; m];
    let f0 = kkt.factor(&ones);
    let mut rhs = p.ineq_matrix.tmul_vec(&p.ineq_rhs);
    for i in 0..n {
        rhs[i] -= p.linear[i];
    }
    rhs.extend_from_slice(&p.eq_rhs);
    let x0 = kkt.solve(&f0, &ones, &rhs, steps);
    let mut u = x0[..n].to_vec();
    let mut nu = x0[n..].to_vec();
    let gu = p.ineq_matrix.mul_vec(&u);
    let mut s: Vec<f64> = gu
        .iter()
        .zip(&p.ineq_rhs)
        .map(|(g, h)| (h - g).max(1.0))
        .collect();
    let mut omega = vec![1.0; m];

    let scale_p = 1.0 + norm_inf(&p.eq_rhs).max(norm_inf(&p.ineq_rhs));
    let scale_d = 1.0 + norm_inf(&p.linear);
    let mut log = Vec::new();
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;

    for iter in 0..=settings.max_iter {
        iterations = iter;
        // residuals
        let hu = p.hessian.mul_vec(&u);
        let at_nu = p.eq_matrix.tmul_vec(&nu);
        let gt_om = p.ineq_matrix.tmul_vec(&omega);
        let rd: Vec<f64> = (0..n)
            .map(|i| hu[i] + p.linear[i] + at_nu[i] + gt_om[i])
            .collect();
        let au = p.eq_matrix.mul_vec(&u);
        let rp: Vec<f64> = au.iter().zip(&p.eq_rhs).map(|(a, b)| a - b).collect();
        let gu = p.ineq_matrix.mul_vec(&u);
        let ri: Vec<f64> = (0..m).map(|i| gu[i] + s[i] - p.ineq_rhs[i]).collect();
        let comp = dot(&s, &omega);
        let mu = if m > 0 { comp / m as f64 } else { 0.0 };
        let pobj = 0.5 * dot(&u, &hu) + dot(&p.linear, &u) + p.offset;
        let dobj = -0.5 * dot(&u, &hu) - dot(&p.eq_rhs, &nu) - dot(&p.ineq_rhs, &omega) + p.offset;
        let pres = norm_inf(&rp).max(norm_inf(&ri));
        let dres = norm_inf(&rd);
        let obj_scale = pobj.abs().max(1.0);
        let max_comp = s.iter().zip(&omega).fold(0.0f64, |a, (x, y)| a.max(x * y));
        log.push(IterateLog {
            mu,
            primal_objective: pobj,
            dual_objective: dobj,
            complementarity: comp,
            primal_residual: pres,
            dual_residual: dres,
            step: 0.0,
        });

        let converged = pres <= settings.tol * scale_p
            && dres <= settings.tol * scale_d
            && comp <= settings.tol * obj_scale
            && (pobj - dobj).abs() <= settings.tol * obj_scale
            && max_comp <= 0.1 * settings.tol;
        if converged {
            status = SolveStatus::Optimal;
            break;
        }
        if iter > 20
            && pres > 1e-6 * scale_p
            && (dobj.abs() > 1e8 * scale_d.max(obj_scale) || dobj > 1e8)
        {
            status = SolveStatus::Infeasible;
            break;
        }
        if norm_inf(&u) > 1e12 {
            status = SolveStatus::Unbounded;
            break;
        }
        if iter == settings.max_iter {
            break;
        }

        let w: Vec<f64> = (0..m).map(|i| omega[i] / s[i]).collect();
        let f = kkt.factor(&w);
        let newton = |rc: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
            // (-rc + omega*ri)/s
            let t: Vec<f64> = (0..m).map(|i| (-rc[i] + omega[i] * ri[i]) / s[i]).collect();
            let gt = p.ineq_matrix.tmul_vec(&t);
            let mut rhs: Vec<f64> = (0..n).map(|i| -rd[i] - gt[i]).collect();
            rhs.extend(rp.iter().map(|v| -v));
            let x = kkt.solve(&f, &w, &rhs, steps);
            let du = x[..n].to_vec();
            let dnu = x[n..].to_vec();
            let gdu = p.ineq_matrix.mul_vec(&du);
            let ds: Vec<f64> = (0..m).map(|i| -ri[i] - gdu[i]).collect();
            let dom: Vec<f64> = (0..m).map(|i| (-rc[i] - omega[i] * ds[i]) / s[i]).collect();
            (du, dnu, ds, dom)
        };

        // predictor
        let rc_aff: Vec<f64> = (0..m).map(|i| s[i] * omega[i]).collect();
        let (du, dnu, ds, dom) = newton(&rc_aff);
        let alpha_aff = max_step(&s, &ds).min(max_step(&omega, &dom));
        let (du, dnu, ds, dom) = if m > 0 {
            let mu_aff = (0..m)
                .map(|i| (s[i] + alpha_aff * ds[i]) * (omega[i] + alpha_aff * dom[i]))
                .sum::<f64>()
                / m as f64;
            let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
            let rc: Vec<f64> = (0..m)
                .map(|i| s[i] * omega[i] + ds[i] * dom[i] - sigma * mu)
                .collect();
            newton(&rc)
        } else {
            (du, dnu, ds, dom)
        };
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&omega, &dom))).min(1.0);
        let alpha = if m == 0 { 1.0 } else { alpha };
        for i in 0..n {
            u[i] += alpha * du[i];
        }
        for i in 0..neq {
            nu[i] += alpha * dnu[i];
        }
        for i in 0..m {
            s[i] += alpha * ds[i];
            omega[i] += alpha * dom[i];
        }
        log.last_mut().unwrap().step = alpha;
    }

    let objective = p.objective(&u);
    let last = log.last().copied().expect("at least one iterate");
    let gap = dot(&s, &omega);
    Ok(QpSolution {
        status,
        primal: u,
        eq_duals: nu,
        ineq_duals: omega,
        slacks: s,
        objective,
        dual_objective: last.dual_objective,
        gap,
        relative_gap: gap / objective.abs().max(1.0),
        iterations,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn qp(
        h: Vec<Vec<f64>>,
        c: Vec<f64>,
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        g: Vec<Vec<f64>>,
        hv: Vec<f64>,
    ) -> QpProblem {
        let n = c.len();
        let mk = |rows: Vec<Vec<f64>>| {
            if rows.is_empty() {
                SparseMatrix::zeros(0, n)
            } else {
                SparseMatrix::from_dense(&rows)
            }
        };
        QpProblem {
            hessian: mk(h),
            linear: c,
            eq_matrix: mk(a),
            eq_rhs: b,
            ineq_matrix: mk(g),
            ineq_rhs: hv,
            offset: 0.0,
        }
    }

    #[test]
    fn equality_dual_sign() {
        let p = qp(
            vec![vec![1.0]],
            vec![0.0],
            vec![vec![1.0]],
            vec![1.0],
            vec![],
            vec![],
        );
        let s = solve_qp(&p, &SolverSettings::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(s.primal[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.eq_duals[0], -1.0, epsilon = 1e-9);
    }

    #[test]
    fn inequality_dual() {
        let p = qp(
            vec![vec![1.0]],
            vec![0.0],
            vec![],
            vec![],
            vec![vec![-1.0]],
            vec![-2.0],
        );
        let s = solve_qp(&p, &SolverSettings::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(s.primal[0], 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(s.ineq_duals[0], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn two_variable_balance() {
        // min 1/2 x1^2 + x2^2 s.t. x1 + x2 = 3
        let p = qp(
            vec![vec![1.0, 0.0], vec![0.0, 2.0]],
            vec![0.0, 0.0],
            vec![vec![1.0, 1.0]],
            vec![3.0],
            vec![],
            vec![],
        );
        let s = solve_qp(&p, &SolverSettings::default()).unwrap();
        assert_abs_diff_eq!(s.primal[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.primal[1], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.objective, 3.0, epsilon = 1e-9);
        let r = residuals(&p, &s);
        assert!(r.max() <= 1e-8, "{r:?}");
    }

    #[test]
    fn perturbed_primal_shows_in_stationarity() {
        let p = qp(
            vec![vec![1.0, 0.0], vec![0.0, 2.0]],
            vec![0.0, 0.0],
            vec![vec![1.0, 1.0]],
            vec![3.0],
            vec![],
            vec![],
        );
        let mut s = solve_qp(&p, &SolverSettings::default()).unwrap();
        s.primal[0] += 1e-3;
        assert!(residuals(&p, &s).stationarity >= 1e-4);
    }

    #[test]
    fn zero_problem() {
        let p = qp(vec![vec![0.0]], vec![0.0], vec![], vec![], vec![], vec![]);
        let s = solve_qp(&p, &SolverSettings::default()).unwrap();
        let r = residuals(&p, &s);
        assert_eq!(r.max(), 0.0);
    }

    #[test]
    fn infeasible_bounds() {
        // u <= 1 and u >= 2
        let p = qp(
            vec![vec![1.0]],
            vec![0.0],
            vec![],
            vec![],
            vec![vec![1.0], vec![-1.0]],
            vec![1.0, -2.0],
        );
        let s = solve_qp(&p, &SolverSettings::default()).unwrap();
        assert_ne!(s.status, SolveStatus::Optimal);
    }

    #[test]
    fn rejects_indefinite_hessian() {
        let p = qp(
            vec![vec![1.0, 0.0], vec![0.0, -1.0]],
            vec![0.0, 0.0],
            vec![],
            vec![],
            vec![],
            vec![],
        );
        assert!(solve_qp(&p, &SolverSettings::default()).is_err());
    }

    #[test]
    fn lp_with_box() {
        // min -u1 - 2u2, 0 <= u <= 1, u1 + u2 <= 1.5
        let p = qp(
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![-1.0, -2.0],
            vec![],
            vec![],
            vec![
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![-1.0, 0.0],
                vec![0.0, -1.0],
                vec![1.0, 1.0],
            ],
            vec![1.0, 1.0, 0.0, 0.0, 1.5],
        );
        let s = solve_qp(&p, &SolverSettings::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(s.primal[0], 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(s.primal[1], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(s.objective, -2.5, epsilon = 1e-7);
    }
}
