use std::time::Instant;

use highs::{HighsModelStatus, HighsSolutionStatus, RowProblem};

use super::{
    MilpError, MilpModel, Relation, Sense, SolveOptions, SolveResult, SolveStats, SolveStatus,
    VarKind,
};

/// Environment variable naming the solver backend. Only `highs` is built in.
pub const SOLVER_ENV: &str = "RESTORE_SOLVER";

/// Build, run and read back one MILP. Implementations must not share
/// mutable state between calls so concurrent solves are safe.
pub trait SolverBackend: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, model: &MilpModel, options: &SolveOptions) -> Result<SolveResult, MilpError>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct HighsBackend;

impl SolverBackend for HighsBackend {
    fn name(&self) -> &str {
        "highs"
    }

    fn solve(&self, model: &MilpModel, options: &SolveOptions) -> Result<SolveResult, MilpError> {
        let start = Instant::now();
        let mut problem = RowProblem::new();
        let mut cols = Vec::with_capacity(model.num_vars());
        let objective = model.objective();
        let mut costs = vec![0.0; model.num_vars()];
        for (v, c) in &objective.terms {
            costs[v.0] += c;
        }
        for (i, var) in model.vars().iter().enumerate() {
            let col = match var.kind {
                VarKind::Continuous => problem.add_column(costs[i], var.lo..=var.hi),
                VarKind::Binary | VarKind::Integer => {
                    problem.add_integer_column(costs[i], var.lo..=var.hi)
                }
            };
            cols.push(col);
        }
        for c in model.constraints() {
            let factors: Vec<_> = c.expr.terms.iter().map(|(v, k)| (cols[v.0], *k)).collect();
            match c.rel {
                Relation::Le => problem.add_row(..=c.rhs, &factors),
                Relation::Ge => problem.add_row(c.rhs.., &factors),
                Relation::Eq => problem.add_row(c.rhs..=c.rhs, &factors),
            }
        }
        let sense = match model.sense() {
            Sense::Maximize => highs::Sense::Maximise,
            Sense::Minimize => highs::Sense::Minimise,
        };
        let mut highs_model = problem
            .try_optimise(sense)
            .map_err(|s| MilpError::Solver(format!("HiGHS rejected the model: {s:?}")))?;
        highs_model.make_quiet();
        highs_model.set_option("mip_rel_gap", options.mip_gap);
        highs_model.set_option("random_seed", options.random_seed as i32);
        highs_model.set_option("primal_feasibility_tolerance", 1e-9);
        highs_model.set_option("mip_feasibility_tolerance", 1e-9);
        if let Some(gap) = options.mip_abs_gap {
            highs_model.set_option("mip_abs_gap", gap);
        }
        if let Some(limit) = options.time_limit_s {
            highs_model.set_option("time_limit", limit);
        }
        if let Some(threads) = options.threads {
            highs_model.set_option("threads", threads as i32);
        }
        let solved = highs_model
            .try_solve()
            .map_err(|s| MilpError::Solver(format!("HiGHS run failed: {s:?}")))?;
        let raw_status = solved.status();
        // Info values are -1 when HiGHS stops before producing a solution.
        let has_incumbent = solved
            .int_info_value(c"primal_solution_status")
            .ok()
            .and_then(|v| HighsSolutionStatus::try_from(v as std::os::raw::c_int).ok())
            == Some(HighsSolutionStatus::Feasible);
        let status = match raw_status {
            HighsModelStatus::Optimal => SolveStatus::Optimal,
            HighsModelStatus::ModelEmpty => SolveStatus::Optimal,
            HighsModelStatus::Infeasible | HighsModelStatus::UnboundedOrInfeasible => {
                SolveStatus::Infeasible
            }
            HighsModelStatus::ReachedTimeLimit => SolveStatus::TimeLimit,
            _ => SolveStatus::Error,
        };
        let keep_values = match status {
            SolveStatus::Optimal => true,
            SolveStatus::TimeLimit => has_incumbent,
            _ => false,
        };
        let values = keep_values.then(|| {
            let mut vals = solved.get_solution().columns().to_vec();
            if vals.len() != model.num_vars() {
                vals = vec![0.0; model.num_vars()];
            }
            for (x, var) in vals.iter_mut().zip(model.vars()) {
                if var.kind != VarKind::Continuous {
                    *x = x.round();
                }
            }
            vals
        });
        let objective_value = values.as_ref().map(|v| objective.eval(v));
        let gap = solved.mip_gap();
        Ok(SolveResult {
            status,
            objective: objective_value,
            values,
            stats: SolveStats {
                backend: self.name().to_string(),
                wall_time_s: start.elapsed().as_secs_f64(),
                mip_gap: gap.is_finite().then_some(gap),
                detail: format!("{raw_status:?}"),
                num_vars: model.num_vars(),
                num_binaries: model.num_binaries(),
                num_constraints: model.constraints().len(),
            },
        })
    }
}

/// Backend chosen by `RESTORE_SOLVER` (default `highs`).
pub fn backend_from_env() -> Result<Box<dyn SolverBackend>, MilpError> {
    match std::env::var(SOLVER_ENV) {
        Err(_) => Ok(Box::new(HighsBackend)),
        Ok(name) if name.is_empty() || name.eq_ignore_ascii_case("highs") => {
            Ok(Box::new(HighsBackend))
        }
        Ok(other) => Err(MilpError::BackendUnavailable(other)),
    }
}

/// Solves with the configured backend.
pub fn solve(model: &MilpModel, options: &SolveOptions) -> Result<SolveResult, MilpError> {
    let backend = backend_from_env()?;
    let result = backend.solve(model, options)?;
    log::debug!(
        "{} solve: {:?} in {:.3}s ({} vars, {} binaries, {} rows)",
        result.stats.backend,
        result.status,
        result.stats.wall_time_s,
        result.stats.num_vars,
        result.stats.num_binaries,
        result.stats.num_constraints
    );
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::LinExpr;

    #[test]
    fn max_binary_is_one() {
        let mut m = MilpModel::new();
        let x = m.binary("x").unwrap();
        m.set_objective(Sense::Maximize, LinExpr::var(x));
        let r = HighsBackend.solve(&m, &SolveOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_eq!(r.objective, Some(1.0));
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let mut m = MilpModel::new();
        let x = m.binary("x").unwrap();
        m.constrain("lo", LinExpr::var(x), Relation::Ge, 1.0);
        m.constrain("hi", LinExpr::var(x), Relation::Le, 0.0);
        m.set_objective(Sense::Maximize, LinExpr::var(x));
        let r = HighsBackend.solve(&m, &SolveOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.values.is_none());
    }

    #[test]
    fn small_knapsack() {
        let mut m = MilpModel::new();
        let items = [(5.0, 4.0), (4.0, 3.0), (3.0, 2.0)];
        let mut obj = LinExpr::new();
        let mut weight = LinExpr::new();
        for (i, (value, w)) in items.iter().enumerate() {
            let x = m.binary(format!("x{i}")).unwrap();
            obj.add(x, *value);
            weight.add(x, *w);
        }
        m.constrain("cap", weight, Relation::Le, 5.0);
        m.set_objective(Sense::Maximize, obj);
        let r = HighsBackend.solve(&m, &SolveOptions::default()).unwrap();
        assert_eq!(r.objective, Some(7.0));
    }
}
