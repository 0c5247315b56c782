//! LP-based branch and bound over the binary variables.
//!
//! Nodes are explored depth first (deepest, then best bound, then most
//! recently created); the child matching the rounded LP value is created last
//! so it is explored first. Branching picks the most fractional binary among
//! those of highest branching priority, lowest index on ties.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{simplex, ObjSense, Program, Solution, SolveStatus, SolverOptions, VarId, VarKind, Relation};

struct Node {
    fixes: Vec<(usize, f64)>,
    /// Parent relaxation value, in maximisation terms.
    bound: f64,
    seq: usize,
}

impl Node {
    fn key(&self) -> (usize, f64, usize) {
        (self.fixes.len(), self.bound, self.seq)
    }
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        let (da, ba, sa) = self.key();
        let (db, bb, sb) = other.key();
        da.cmp(&db)
            .then(ba.total_cmp(&bb))
            .then(sa.cmp(&sb))
    }
}

pub fn solve_milp_with(p: &Program, opts: &SolverOptions) -> Solution {
    let sign = match p.objective().sense {
        ObjSense::Max => 1.0,
        ObjSense::Min => -1.0,
    };
    let base_lower: Vec<f64> = p.variables().iter().map(|v| v.lower).collect();
    let base_upper: Vec<f64> = p.variables().iter().map(|v| v.upper).collect();
    let binaries: Vec<usize> = p
        .variables()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Binary)
        .map(|(j, _)| j)
        .collect();
    let is_binary: Vec<bool> = p
        .variables()
        .iter()
        .map(|v| v.kind == VarKind::Binary)
        .collect();
    let prio: Vec<u32> = (0..p.variables().len())
        .map(|j| p.branch_priority(VarId(j)))
        .collect();

    let mut open = BinaryHeap::new();
    open.push(Node {
        fixes: Vec::new(),
        bound: f64::INFINITY,
        seq: 0,
    });
    let mut seq = 1;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut nodes = 0usize;
    let mut iterations = 0usize;
    let mut hit_limit = false;
    let mut message = String::new();

    while let Some(node) = open.pop() {
        if let Some((best, _)) = &incumbent {
            if node.bound <= best + opts.gap_abs {
                continue;
            }
        }
        if nodes >= opts.node_limit {
            open.push(node);
            hit_limit = true;
            message = format!("node limit {} reached", opts.node_limit);
            break;
        }
        nodes += 1;

        let mut lower = base_lower.clone();
        let mut upper = base_upper.clone();
        for &(j, v) in &node.fixes {
            lower[j] = v;
            upper[j] = v;
        }
        if opts.propagate && !propagate(p, &is_binary, &mut lower, &mut upper, opts) {
            continue;
        }
        let r = simplex::solve_bounded(p, &lower, &upper, opts);
        iterations += r.iterations;
        match r.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => continue,
            SolveStatus::Unbounded => {
                if node.fixes.is_empty() {
                    return Solution {
                        status: SolveStatus::Unbounded,
                        values: Vec::new(),
                        objective: f64::NAN,
                        bound: sign * f64::INFINITY,
                        gap: f64::INFINITY,
                        nodes,
                        iterations,
                        duals: None,
                        message: "relaxation unbounded".into(),
                    };
                }
                continue;
            }
            SolveStatus::Limit => {
                hit_limit = true;
                message = r.message;
                continue;
            }
        }
        let value = sign * p.objective_value(&r.x);
        if let Some((best, _)) = &incumbent {
            if value <= best + opts.gap_abs {
                continue;
            }
        }

        let branch = binaries
            .iter()
            .map(|&j| (j, r.x[j], (r.x[j] - r.x[j].round()).abs()))
            .filter(|&(_, _, frac)| frac > opts.integrality_tol)
            .fold(None::<(usize, f64, f64)>, |best, cand| match best {
                Some(b) if (prio[b.0], b.2) >= (prio[cand.0], cand.2) => Some(b),
                _ => Some(cand),
            });
        match branch {
            None => {
                let mut x = r.x;
                for &j in &binaries {
                    x[j] = x[j].round();
                }
                incumbent = Some((value, x));
            }
            Some((j, xj, _)) => {
                let preferred = if xj >= 0.5 { 1.0 } else { 0.0 };
                for v in [1.0 - preferred, preferred] {
                    let mut fixes = node.fixes.clone();
                    fixes.push((j, v));
                    open.push(Node {
                        fixes,
                        bound: value,
                        seq,
                    });
                    seq += 1;
                }
            }
        }
    }

    let open_bound = open
        .iter()
        .map(|n| n.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    match incumbent {
        Some((value, x)) => {
            let bound = if hit_limit { open_bound.max(value) } else { value };
            Solution {
                status: if hit_limit {
                    SolveStatus::Limit
                } else {
                    SolveStatus::Optimal
                },
                objective: sign * value,
                values: x,
                bound: sign * bound,
                gap: bound - value,
                nodes,
                iterations,
                duals: None,
                message,
            }
        }
        None => Solution {
            status: if hit_limit {
                SolveStatus::Limit
            } else {
                SolveStatus::Infeasible
            },
            values: Vec::new(),
            objective: f64::NAN,
            bound: sign * open_bound,
            gap: f64::INFINITY,
            nodes,
            iterations,
            duals: None,
            message: if hit_limit {
                message
            } else {
                "no integer-feasible point".into()
            },
        },
    }
}

/// Activity-based bound tightening to a fixpoint (or a pass limit). Binary
/// bounds are rounded, so a row can fix a binary the relaxation would leave
/// fractional. Returns false when some row cannot be satisfied.
fn propagate(
    p: &Program,
    is_binary: &[bool],
    lower: &mut [f64],
    upper: &mut [f64],
    opts: &SolverOptions,
) -> bool {
    const PASSES: usize = 50;
    const MIN_GAIN: f64 = 1e-6;
    let feas = opts.feasibility_tol;
    let mut dirty = true;
    for _ in 0..PASSES {
        if !dirty {
            break;
        }
        dirty = false;
        for c in p.constraints() {
            let dirs: &[f64] = match c.relation {
                Relation::Le => &[1.0],
                Relation::Ge => &[-1.0],
                Relation::Eq => &[1.0, -1.0],
            };
            for &sgn in dirs {
                // Σ (sgn·a) x ≤ sgn·b
                let b = sgn * c.rhs;
                let mut finite = 0.0;
                let mut n_inf = 0;
                let mut inf_at = 0;
                for &(v, a) in &c.terms {
                    if a == 0.0 {
                        continue;
                    }
                    let a = sgn * a;
                    let bound = if a > 0.0 { lower[v.0] } else { upper[v.0] };
                    if bound.is_infinite() {
                        n_inf += 1;
                        inf_at = v.0;
                    } else {
                        finite += a * bound;
                    }
                }
                if n_inf == 0 && finite > b + feas * (1.0 + b.abs()) {
                    return false;
                }
                if n_inf > 1 {
                    continue;
                }
                for &(v, a) in &c.terms {
                    let j = v.0;
                    if a == 0.0 {
                        continue;
                    }
                    let a = sgn * a;
                    let rest = if n_inf == 1 {
                        if j != inf_at {
                            continue;
                        }
                        finite
                    } else {
                        let own = if a > 0.0 { lower[j] } else { upper[j] };
                        finite - a * own
                    };
                    let limit = (b - rest) / a;
                    if a > 0.0 {
                        let new_u = if is_binary[j] {
                            if limit < 1.0 - opts.integrality_tol { 0.0 } else { continue }
                        } else {
                            limit + 1e-9 * (1.0 + limit.abs())
                        };
                        if new_u < upper[j] - MIN_GAIN {
                            upper[j] = new_u;
                            dirty = true;
                        }
                    } else {
                        let new_l = if is_binary[j] {
                            if limit > opts.integrality_tol { 1.0 } else { continue }
                        } else {
                            limit - 1e-9 * (1.0 + limit.abs())
                        };
                        if new_l > lower[j] + MIN_GAIN {
                            lower[j] = new_l;
                            dirty = true;
                        }
                    }
                    if lower[j] > upper[j] + feas {
                        return false;
                    }
                    if lower[j] > upper[j] {
                        let mid = 0.5 * (lower[j] + upper[j]);
                        lower[j] = mid;
                        upper[j] = mid;
                    }
                }
            }
        }
    }
    true
}
