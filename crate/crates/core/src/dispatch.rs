//! One-call solve pipeline: transcribe, solve, recover schedule and multipliers.

use crate::error::{Error, Result};
use crate::market_model::Scenario;
use crate::pricing::{recover_multipliers, MultiplierTrajectories};
use crate::qp_solver::{
    residuals, solve_qp, KktResiduals, QpSolution, SolveStatus, SolverSettings,
};
use crate::trajectory::{Mesh, Scheme};
use crate::transcribe::{transcribe, transcribe_on, Schedule, Transcription};

#[derive(Debug, Clone)]
pub struct Dispatch {
    pub transcription: Transcription,
    pub solution: QpSolution,
    pub schedule: Schedule,
    pub multipliers: MultiplierTrajectories,
}

impl Dispatch {
    pub fn residuals(&self) -> KktResiduals {
        residuals(&self.transcription.problem, &self.solution)
    }

    pub fn lambda(&self) -> &[f64] {
        &self.multipliers.lambda
    }

    pub fn mesh(&self) -> &Mesh {
        &self.transcription.map.mesh
    }
}

pub fn solve_scenario(
    s: &Scenario,
    scheme: Scheme,
    intervals: usize,
    settings: &SolverSettings,
) -> Result<Dispatch> {
    finish(s, transcribe(s, scheme, intervals)?, settings)
}

pub fn solve_on_mesh(
    s: &Scenario,
    scheme: Scheme,
    mesh: &Mesh,
    settings: &SolverSettings,
) -> Result<Dispatch> {
    finish(s, transcribe_on(s, scheme, mesh)?, settings)
}

/// Solve an already transcribed problem.
pub fn finish(s: &Scenario, tr: Transcription, settings: &SolverSettings) -> Result<Dispatch> {
    let solution = solve_qp(&tr.problem, settings)?;
    if solution.status != SolveStatus::Optimal {
        return Err(Error::NotOptimal(format!(
            "solver stopped with status {:?} after {} iterations",
            solution.status, solution.iterations
        )));
    }
    let schedule = tr.recover_schedule(&solution.primal, s)?;
    let multipliers = recover_multipliers(&solution, &tr)?;
    Ok(Dispatch {
        transcription: tr,
        solution,
        schedule,
        multipliers,
    })
}
