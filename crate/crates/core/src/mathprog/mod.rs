//! Linear and mixed-binary programs with a built-in solver.
//!
//! A [`Program`] is solved either by [`solve_lp`] (dense bounded-variable
//! primal simplex, two phases) or by [`solve_milp`] (depth-first
//! branch-and-bound over LP relaxations). [`export_mps`] and
//! [`import_solution`] let an external solver stand in for the built-in one.

mod bnb;
mod mps;
mod simplex;

use std::collections::{BTreeMap, HashMap};

pub use bnb::solve_milp_with;
pub use mps::{
    export_mps, import_solution, mps_names, parse_mps, solve_external, write_mps, MpsNames,
    SOLVER_ENV,
};

#[derive(Debug, thiserror::Error)]
pub enum ProgramError {
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("constraint `{constraint}` references undeclared variable #{index}")]
    UnknownVariable { constraint: String, index: usize },
    #[error("variable `{0}` has lower bound above upper bound")]
    EmptyDomain(String),
    #[error("program contains binary variables; use solve_milp")]
    NotAnLp,
    #[error("unknown variable name `{0}` in solution file")]
    UnknownName(String),
    #[error("malformed solution file line {line}: `{text}`")]
    MalformedSolution { line: usize, text: String },
    #[error("malformed MPS: {0}")]
    MalformedMps(String),
    #[error("imported solution violates `{name}` by {amount:.3e}")]
    InfeasibleImport { name: String, amount: f64 },
    #[error("external solver: {0}")]
    External(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, a)| a * x[v.0]).sum()
    }

    /// Amount by which `x` violates the constraint (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.activity(x);
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjSense {
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub sense: ObjSense,
    pub terms: Vec<(VarId, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    variables: Vec<Variable>,
    constraints: Vec<Constraint>,
    objective: Objective,
    names: HashMap<String, VarId>,
    priority: Vec<u32>,
}

impl Program {
    pub fn new(sense: ObjSense) -> Self {
        Program {
            variables: Vec::new(),
            constraints: Vec::new(),
            objective: Objective {
                sense,
                terms: Vec::new(),
            },
            names: HashMap::new(),
            priority: Vec::new(),
        }
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        kind: VarKind,
        lower: f64,
        upper: f64,
    ) -> Result<VarId, ProgramError> {
        let name = name.into();
        let (lower, upper) = match kind {
            VarKind::Binary => (0.0, 1.0),
            VarKind::Continuous => (lower, upper),
        };
        if lower > upper || lower.is_nan() || upper.is_nan() {
            return Err(ProgramError::EmptyDomain(name));
        }
        if self.names.contains_key(&name) {
            return Err(ProgramError::DuplicateVariable(name));
        }
        let id = VarId(self.variables.len());
        self.names.insert(name.clone(), id);
        self.variables.push(Variable {
            name,
            kind,
            lower,
            upper,
        });
        self.priority.push(0);
        Ok(id)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> Result<VarId, ProgramError> {
        self.add_var(name, VarKind::Binary, 0.0, 1.0)
    }

    pub fn add_continuous(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
    ) -> Result<VarId, ProgramError> {
        self.add_var(name, VarKind::Continuous, lower, upper)
    }

    /// Adds a constraint; repeated variables in `terms` are merged.
    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        relation: Relation,
        rhs: f64,
    ) -> Result<usize, ProgramError> {
        let name = name.into();
        let terms = self.merge_terms(&name, terms)?;
        self.constraints.push(Constraint {
            name,
            terms,
            relation,
            rhs,
        });
        Ok(self.constraints.len() - 1)
    }

    pub fn set_objective(&mut self, terms: Vec<(VarId, f64)>) -> Result<(), ProgramError> {
        self.objective.terms = self.merge_terms("objective", terms)?;
        Ok(())
    }

    fn merge_terms(
        &self,
        owner: &str,
        terms: Vec<(VarId, f64)>,
    ) -> Result<Vec<(VarId, f64)>, ProgramError> {
        let mut merged: BTreeMap<VarId, f64> = BTreeMap::new();
        for (v, a) in terms {
            if v.0 >= self.variables.len() {
                return Err(ProgramError::UnknownVariable {
                    constraint: owner.to_string(),
                    index: v.0,
                });
            }
            *merged.entry(v).or_insert(0.0) += a;
        }
        Ok(merged.into_iter().filter(|&(_, a)| a != 0.0).collect())
    }

    /// Branching hint: among fractional binaries, branch-and-bound picks the
    /// highest priority first. Default 0; does not change the program's meaning.
    pub fn set_branch_priority(&mut self, v: VarId, priority: u32) {
        self.priority[v.0] = priority;
    }

    pub fn branch_priority(&self, v: VarId) -> u32 {
        self.priority[v.0]
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn var(&self, name: &str) -> Option<VarId> {
        self.names.get(name).copied()
    }

    pub fn n_binaries(&self) -> usize {
        self.variables
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .count()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.terms.iter().map(|&(v, a)| a * x[v.0]).sum()
    }

    /// Largest bound or constraint violation of `x`, with the offending name.
    pub fn max_violation(&self, x: &[f64]) -> (f64, String) {
        let mut worst = (0.0, String::new());
        for (v, &xv) in self.variables.iter().zip(x) {
            let viol = (v.lower - xv).max(xv - v.upper).max(0.0);
            if viol > worst.0 {
                worst = (viol, v.name.clone());
            }
        }
        for c in &self.constraints {
            let viol = c.violation(x);
            if viol > worst.0 {
                worst = (viol, c.name.clone());
            }
        }
        worst
    }

    /// Feasible to `tol` in every constraint and bound, binaries within `tol` of {0, 1}.
    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        self.max_violation(x).0 <= tol
            && self
                .variables
                .iter()
                .zip(x)
                .filter(|(v, _)| v.kind == VarKind::Binary)
                .all(|(_, &xv)| (xv - xv.round()).abs() <= tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Iteration or node limit; `values` hold the incumbent if one exists.
    Limit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: SolveStatus,
    /// Indexed by [`VarId`]; empty when no feasible point is known.
    pub values: Vec<f64>,
    pub objective: f64,
    /// Best bound on the optimum in the objective's own sense.
    pub bound: f64,
    /// Absolute gap `|bound - objective|` (0 for a proven optimum).
    pub gap: f64,
    pub nodes: usize,
    pub iterations: usize,
    /// Row multipliers of an LP optimum, in the minimisation convention:
    /// `≥` rows carry non-negative, `≤` rows non-positive multipliers.
    pub duals: Option<Vec<f64>>,
    pub message: String,
}

impl Solution {
    pub fn has_values(&self) -> bool {
        !self.values.is_empty()
    }

    pub fn value(&self, p: &Program, name: &str) -> Option<f64> {
        p.var(name).and_then(|v| self.values.get(v.0).copied())
    }

    pub fn values_by_name(&self, p: &Program) -> BTreeMap<String, f64> {
        p.variables()
            .iter()
            .zip(&self.values)
            .map(|(v, &x)| (v.name.clone(), x))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub feasibility_tol: f64,
    pub integrality_tol: f64,
    pub pivot_tol: f64,
    pub optimality_tol: f64,
    pub gap_abs: f64,
    pub max_simplex_iterations: usize,
    pub node_limit: usize,
    /// Tighten bounds by row activity (rounding for binaries) at every
    /// branch-and-bound node before its relaxation is solved.
    pub propagate: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feasibility_tol: 1e-6,
            integrality_tol: 1e-6,
            pivot_tol: 1e-9,
            optimality_tol: 1e-9,
            gap_abs: 1e-6,
            max_simplex_iterations: 200_000,
            node_limit: 200_000,
            propagate: true,
        }
    }
}

pub fn solve_lp(p: &Program) -> Result<Solution, ProgramError> {
    solve_lp_with(p, &SolverOptions::default())
}

pub fn solve_lp_with(p: &Program, opts: &SolverOptions) -> Result<Solution, ProgramError> {
    if p.n_binaries() > 0 {
        return Err(ProgramError::NotAnLp);
    }
    let lower: Vec<f64> = p.variables.iter().map(|v| v.lower).collect();
    let upper: Vec<f64> = p.variables.iter().map(|v| v.upper).collect();
    let r = simplex::solve_bounded(p, &lower, &upper, opts);
    let objective = if r.status == SolveStatus::Optimal {
        p.objective_value(&r.x)
    } else {
        f64::NAN
    };
    Ok(Solution {
        status: r.status,
        values: if r.status == SolveStatus::Optimal { r.x } else { Vec::new() },
        objective,
        bound: objective,
        gap: 0.0,
        nodes: 0,
        iterations: r.iterations,
        duals: r.duals,
        message: r.message,
    })
}

pub fn solve_milp(p: &Program) -> Solution {
    solve_milp_with(p, &SolverOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_x_upper_three() {
        let mut p = Program::new(ObjSense::Max);
        let x = p.add_continuous("x", 0.0, f64::INFINITY).unwrap();
        p.add_constraint("c", vec![(x, 1.0)], Relation::Le, 3.0)
            .unwrap();
        p.set_objective(vec![(x, 1.0)]).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.values[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_pair() {
        let mut p = Program::new(ObjSense::Max);
        let x = p.add_continuous("x", f64::NEG_INFINITY, f64::INFINITY).unwrap();
        p.add_constraint("a", vec![(x, 1.0)], Relation::Le, 0.0)
            .unwrap();
        p.add_constraint("b", vec![(x, 1.0)], Relation::Ge, 1.0)
            .unwrap();
        p.set_objective(vec![(x, 1.0)]).unwrap();
        assert_eq!(solve_lp(&p).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let mut p = Program::new(ObjSense::Max);
        let x = p.add_continuous("x", 0.0, f64::INFINITY).unwrap();
        let y = p.add_continuous("y", 0.0, f64::INFINITY).unwrap();
        p.add_constraint("c", vec![(x, 1.0), (y, -1.0)], Relation::Le, 1.0)
            .unwrap();
        p.set_objective(vec![(x, 1.0)]).unwrap();
        assert_eq!(solve_lp(&p).unwrap().status, SolveStatus::Unbounded);
    }

    #[test]
    fn knapsack_picks_heavier_item() {
        let mut p = Program::new(ObjSense::Max);
        let x = p.add_binary("x").unwrap();
        let y = p.add_binary("y").unwrap();
        p.add_constraint("cap", vec![(x, 1.0), (y, 1.0)], Relation::Le, 1.0)
            .unwrap();
        p.set_objective(vec![(x, 3.0), (y, 2.0)]).unwrap();
        let s = solve_milp(&p);
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.values, vec![1.0, 0.0]);
        assert!((s.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn integral_relaxation_solved_at_root() {
        let mut p = Program::new(ObjSense::Max);
        let x = p.add_binary("x").unwrap();
        let y = p.add_binary("y").unwrap();
        p.add_constraint("cx", vec![(x, 1.0)], Relation::Le, 1.0)
            .unwrap();
        p.set_objective(vec![(x, 1.0), (y, 1.0)]).unwrap();
        let s = solve_milp(&p);
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.nodes, 1);
        assert!((s.objective - 2.0).abs() < 1e-9);
    }

    #[test]
    fn solve_lp_refuses_binaries() {
        let mut p = Program::new(ObjSense::Max);
        p.add_binary("x").unwrap();
        assert!(matches!(solve_lp(&p), Err(ProgramError::NotAnLp)));
    }

    #[test]
    fn builder_rejects_bad_input() {
        let mut p = Program::new(ObjSense::Min);
        p.add_continuous("x", 0.0, 1.0).unwrap();
        assert!(p.add_continuous("x", 0.0, 1.0).is_err());
        assert!(p.add_continuous("y", 2.0, 1.0).is_err());
        assert!(p
            .add_constraint("c", vec![(VarId(9), 1.0)], Relation::Le, 0.0)
            .is_err());
    }

    #[test]
    fn equality_with_free_and_fixed_variables() {
        // min |x - 2| style: x free, y fixed at 1, x + y = 4 → x = 3
        let mut p = Program::new(ObjSense::Min);
        let x = p.add_continuous("x", f64::NEG_INFINITY, f64::INFINITY).unwrap();
        let y = p.add_continuous("y", 1.0, 1.0).unwrap();
        let z = p.add_continuous("z", f64::NEG_INFINITY, 10.0).unwrap();
        p.add_constraint("e", vec![(x, 1.0), (y, 1.0)], Relation::Eq, 4.0)
            .unwrap();
        p.add_constraint("f", vec![(z, 1.0), (x, -1.0)], Relation::Ge, -1.0)
            .unwrap();
        p.set_objective(vec![(z, 1.0)]).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.values[0] - 3.0).abs() < 1e-9);
        assert!((s.values[1] - 1.0).abs() < 1e-12);
        assert!((s.values[2] - 2.0).abs() < 1e-9);
    }
}
