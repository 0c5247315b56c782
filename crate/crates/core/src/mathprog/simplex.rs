//! Dense bounded-variable primal simplex.
//!
//! The program is brought to `min cᵀy, A y (=) b, 0 ≤ y ≤ u` by shifting or
//! mirroring every variable onto a zero lower bound (free variables are split,
//! fixed ones substituted out). Every row then receives one unit column, a
//! slack for `≤` rows and an artificial for `≥`/`=` rows, so the starting basis
//! is the identity and `B⁻¹` can always be read off the unit columns of the
//! tableau. Phase 1 minimises the artificial sum; phase 2 the real cost with
//! artificials pinned to zero. Pricing is Dantzig's largest reduced cost,
//! switching to Bland's smallest-index rule after a run of degenerate pivots.

use super::{ObjSense, Program, Relation, SolveStatus, SolverOptions};

const DEGENERATE_RUN: usize = 25;
const ZERO_STEP: f64 = 1e-12;

pub(super) struct LpOutcome {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub duals: Option<Vec<f64>>,
    pub iterations: usize,
    pub message: String,
}

impl LpOutcome {
    fn failed(status: SolveStatus, iterations: usize, message: impl Into<String>) -> Self {
        LpOutcome {
            status,
            x: Vec::new(),
            duals: None,
            iterations,
            message: message.into(),
        }
    }
}

#[derive(Clone, Copy)]
enum ColMap {
    Fixed(f64),
    /// x = offset + sign·y
    Shift { col: usize, offset: f64, sign: f64 },
    /// x = y⁺ − y⁻
    Split { pos: usize, neg: usize },
}

struct StdRow {
    orig: usize,
    coefs: Vec<(usize, f64)>,
    rel: Relation,
    rhs: f64,
    sign: f64,
}

enum Phase {
    Optimal,
    Unbounded,
    Limit,
}

struct Tableau {
    m: usize,
    n: usize,
    a: Vec<f64>,
    t: Vec<f64>,
    b: Vec<f64>,
    xb: Vec<f64>,
    basis: Vec<usize>,
    row_of: Vec<Option<usize>>,
    at_upper: Vec<bool>,
    ub: Vec<f64>,
    unit_col: Vec<usize>,
    iterations: usize,
}

impl Tableau {
    fn refresh_xb(&mut self) {
        let mut rhs = self.b.clone();
        for j in 0..self.n {
            if self.row_of[j].is_none() && self.at_upper[j] {
                let u = self.ub[j];
                for (i, r) in rhs.iter_mut().enumerate() {
                    *r -= self.a[i * self.n + j] * u;
                }
            }
        }
        for r in 0..self.m {
            let row = &self.t[r * self.n..(r + 1) * self.n];
            self.xb[r] = (0..self.m).map(|i| row[self.unit_col[i]] * rhs[i]).sum();
        }
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for r in 0..self.m {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                let row = &self.t[r * self.n..(r + 1) * self.n];
                for (dj, &tj) in d.iter_mut().zip(row) {
                    *dj -= cb * tj;
                }
            }
        }
        for &j in &self.basis {
            d[j] = 0.0;
        }
        d
    }

    fn pivot(&mut self, r: usize, j: usize, d: Option<&mut Vec<f64>>) {
        let n = self.n;
        let piv = self.t[r * n + j];
        let nz: Vec<usize> = {
            let row = &mut self.t[r * n..(r + 1) * n];
            for v in row.iter_mut() {
                *v /= piv;
            }
            row[j] = 1.0;
            (0..n).filter(|&k| row[k] != 0.0).collect()
        };
        let (before, rest) = self.t.split_at_mut(r * n);
        let (prow, after) = rest.split_at_mut(n);
        for row in before.chunks_mut(n).chain(after.chunks_mut(n)) {
            let f = row[j];
            if f != 0.0 {
                for &k in &nz {
                    row[k] -= f * prow[k];
                }
                row[j] = 0.0;
            }
        }
        if let Some(d) = d {
            let f = d[j];
            if f != 0.0 {
                for &k in &nz {
                    d[k] -= f * prow[k];
                }
                d[j] = 0.0;
            }
        }
        let leaving = self.basis[r];
        self.row_of[leaving] = None;
        self.basis[r] = j;
        self.row_of[j] = Some(r);
    }

    fn run(&mut self, cost: &[f64], opts: &SolverOptions) -> Phase {
        let n = self.n;
        let mut d = self.reduced_costs(cost);
        let mut degenerate_run = 0usize;
        loop {
            if self.iterations >= opts.max_simplex_iterations {
                return Phase::Limit;
            }
            let bland = degenerate_run >= DEGENERATE_RUN;

            let mut enter: Option<(usize, f64)> = None;
            for j in 0..n {
                if self.row_of[j].is_some() || self.ub[j] <= 0.0 {
                    continue;
                }
                let improving = if self.at_upper[j] {
                    d[j] > opts.optimality_tol
                } else {
                    d[j] < -opts.optimality_tol
                };
                if !improving {
                    continue;
                }
                if bland {
                    enter = Some((j, d[j].abs()));
                    break;
                }
                if enter.is_none_or(|(_, best)| d[j].abs() > best) {
                    enter = Some((j, d[j].abs()));
                }
            }
            let Some((j, _)) = enter else {
                return Phase::Optimal;
            };
            let dir = if self.at_upper[j] { -1.0 } else { 1.0 };

            // ratio test; None = entering variable flips to its other bound
            let mut theta = self.ub[j];
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.t[r * n + j];
                if a.abs() <= opts.pivot_tol {
                    continue;
                }
                let rate = dir * a;
                let lim = if rate > 0.0 {
                    self.xb[r] / rate
                } else {
                    let u = self.ub[self.basis[r]];
                    if u.is_infinite() {
                        continue;
                    }
                    (u - self.xb[r]) / -rate
                }
                .max(0.0);
                let better = match leave {
                    _ if lim < theta - ZERO_STEP => true,
                    Some((lr, la)) if lim <= theta + ZERO_STEP => {
                        if bland {
                            self.basis[r] < self.basis[lr]
                        } else {
                            a.abs() > la.abs()
                        }
                    }
                    _ => false,
                };
                if better {
                    theta = theta.min(lim);
                    leave = Some((r, a));
                }
            }
            if theta.is_infinite() {
                return Phase::Unbounded;
            }
            self.iterations += 1;
            if theta <= ZERO_STEP {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }

            for r in 0..self.m {
                let a = self.t[r * n + j];
                if a != 0.0 {
                    self.xb[r] -= theta * dir * a;
                }
            }
            match leave {
                None => self.at_upper[j] = !self.at_upper[j],
                Some((r, a)) => {
                    let leaving = self.basis[r];
                    let entering_value = if self.at_upper[j] { self.ub[j] } else { 0.0 } + dir * theta;
                    self.at_upper[leaving] = dir * a < 0.0;
                    self.pivot(r, j, Some(&mut d));
                    self.at_upper[j] = false;
                    self.xb[r] = entering_value;
                }
            }
        }
    }
}

pub(super) fn solve_bounded(
    p: &Program,
    lower: &[f64],
    upper: &[f64],
    opts: &SolverOptions,
) -> LpOutcome {
    let vars = p.variables();
    let mut maps = Vec::with_capacity(vars.len());
    let mut ub = Vec::new();
    for (j, v) in vars.iter().enumerate() {
        let (l, u) = (lower[j], upper[j]);
        if l > u + opts.feasibility_tol {
            return LpOutcome::failed(
                SolveStatus::Infeasible,
                0,
                format!("empty domain for `{}`", v.name),
            );
        }
        if l.is_finite() && u.is_finite() && u - l <= 1e-12 {
            maps.push(ColMap::Fixed(l));
        } else if l.is_finite() {
            maps.push(ColMap::Shift {
                col: ub.len(),
                offset: l,
                sign: 1.0,
            });
            ub.push(u - l);
        } else if u.is_finite() {
            maps.push(ColMap::Shift {
                col: ub.len(),
                offset: u,
                sign: -1.0,
            });
            ub.push(f64::INFINITY);
        } else {
            maps.push(ColMap::Split {
                pos: ub.len(),
                neg: ub.len() + 1,
            });
            ub.push(f64::INFINITY);
            ub.push(f64::INFINITY);
        }
    }
    let ns = ub.len();

    let sense = match p.objective().sense {
        ObjSense::Min => 1.0,
        ObjSense::Max => -1.0,
    };
    let mut cost_s = vec![0.0; ns];
    for &(v, a) in &p.objective().terms {
        let c = sense * a;
        match maps[v.0] {
            ColMap::Fixed(_) => {}
            ColMap::Shift { col, sign, .. } => cost_s[col] += c * sign,
            ColMap::Split { pos, neg } => {
                cost_s[pos] += c;
                cost_s[neg] -= c;
            }
        }
    }

    let mut rows = Vec::new();
    for (ci, c) in p.constraints().iter().enumerate() {
        let mut rhs = c.rhs;
        let mut coefs = Vec::with_capacity(c.terms.len());
        for &(v, a) in &c.terms {
            match maps[v.0] {
                ColMap::Fixed(x) => rhs -= a * x,
                ColMap::Shift { col, offset, sign } => {
                    rhs -= a * offset;
                    coefs.push((col, a * sign));
                }
                ColMap::Split { pos, neg } => {
                    coefs.push((pos, a));
                    coefs.push((neg, -a));
                }
            }
        }
        if coefs.is_empty() {
            let ok = match c.relation {
                Relation::Le => 0.0 <= rhs + opts.feasibility_tol,
                Relation::Ge => 0.0 >= rhs - opts.feasibility_tol,
                Relation::Eq => rhs.abs() <= opts.feasibility_tol,
            };
            if !ok {
                return LpOutcome::failed(
                    SolveStatus::Infeasible,
                    0,
                    format!("`{}` cannot hold with fixed variables", c.name),
                );
            }
            continue;
        }
        let (mut rel, mut sign) = (c.relation, 1.0);
        if rhs < 0.0 {
            rhs = -rhs;
            sign = -1.0;
            for (_, a) in coefs.iter_mut() {
                *a = -*a;
            }
            rel = match rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
        rows.push(StdRow {
            orig: ci,
            coefs,
            rel,
            rhs,
            sign,
        });
    }

    let m = rows.len();
    let n_ge = rows.iter().filter(|r| r.rel == Relation::Ge).count();
    let n = ns + m + n_ge;
    let mut a = vec![0.0; m * n];
    let mut is_artificial = vec![false; n];
    let mut unit_col = Vec::with_capacity(m);
    ub.resize(n, f64::INFINITY);
    let mut next_surplus = ns + m;
    for (i, row) in rows.iter().enumerate() {
        for &(col, v) in &row.coefs {
            a[i * n + col] += v;
        }
        let unit = ns + i;
        a[i * n + unit] = 1.0;
        unit_col.push(unit);
        match row.rel {
            Relation::Le => {}
            Relation::Ge => {
                a[i * n + next_surplus] = -1.0;
                next_surplus += 1;
                is_artificial[unit] = true;
            }
            Relation::Eq => is_artificial[unit] = true,
        }
    }

    let mut tab = Tableau {
        m,
        n,
        t: a.clone(),
        a,
        b: rows.iter().map(|r| r.rhs).collect(),
        xb: rows.iter().map(|r| r.rhs).collect(),
        basis: unit_col.clone(),
        row_of: vec![None; n],
        at_upper: vec![false; n],
        ub,
        unit_col,
        iterations: 0,
    };
    for (r, &j) in tab.basis.iter().enumerate() {
        tab.row_of[j] = Some(r);
    }

    if is_artificial.iter().any(|&x| x) {
        let cost1: Vec<f64> = is_artificial
            .iter()
            .map(|&x| if x { 1.0 } else { 0.0 })
            .collect();
        match tab.run(&cost1, opts) {
            Phase::Optimal => {}
            Phase::Limit => {
                return LpOutcome::failed(
                    SolveStatus::Limit,
                    tab.iterations,
                    "simplex iteration limit in phase 1",
                )
            }
            Phase::Unbounded => {
                return LpOutcome::failed(
                    SolveStatus::Limit,
                    tab.iterations,
                    "numerical breakdown: unbounded phase 1",
                )
            }
        }
        tab.refresh_xb();
        let infeas: f64 = (0..m)
            .filter(|&r| is_artificial[tab.basis[r]])
            .map(|r| tab.xb[r].max(0.0))
            .sum();
        if infeas > opts.feasibility_tol {
            return LpOutcome::failed(
                SolveStatus::Infeasible,
                tab.iterations,
                format!("phase 1 ended with infeasibility {infeas:.3e}"),
            );
        }
        // pivot zero-level artificials out where a usable column exists
        for r in 0..m {
            if !is_artificial[tab.basis[r]] {
                continue;
            }
            let cand = (0..n)
                .filter(|&j| !is_artificial[j] && tab.row_of[j].is_none())
                .max_by(|&x, &y| tab.t[r * n + x].abs().total_cmp(&tab.t[r * n + y].abs()));
            if let Some(j) = cand {
                if tab.t[r * n + j].abs() > 1e-7 {
                    let leaving = tab.basis[r];
                    tab.pivot(r, j, None);
                    tab.at_upper[leaving] = false;
                    tab.at_upper[j] = false;
                }
            }
        }
        for j in 0..n {
            if is_artificial[j] {
                tab.ub[j] = 0.0;
                tab.at_upper[j] = false;
            }
        }
        tab.refresh_xb();
    }

    let mut cost2 = cost_s;
    cost2.resize(n, 0.0);
    match tab.run(&cost2, opts) {
        Phase::Optimal => {}
        Phase::Unbounded => {
            return LpOutcome::failed(SolveStatus::Unbounded, tab.iterations, "objective unbounded")
        }
        Phase::Limit => {
            return LpOutcome::failed(SolveStatus::Limit, tab.iterations, "simplex iteration limit")
        }
    }
    tab.refresh_xb();

    let y: Vec<f64> = (0..n)
        .map(|j| match tab.row_of[j] {
            Some(r) => tab.xb[r],
            None if tab.at_upper[j] => tab.ub[j],
            None => 0.0,
        })
        .collect();
    let x: Vec<f64> = maps
        .iter()
        .map(|m| match *m {
            ColMap::Fixed(v) => v,
            ColMap::Shift { col, offset, sign } => offset + sign * y[col],
            ColMap::Split { pos, neg } => y[pos] - y[neg],
        })
        .collect();

    let mut duals = vec![0.0; p.constraints().len()];
    for (i, row) in rows.iter().enumerate() {
        let uc = tab.unit_col[i];
        let yi: f64 = (0..m).map(|r| cost2[tab.basis[r]] * tab.t[r * n + uc]).sum();
        duals[row.orig] = row.sign * yi;
    }

    LpOutcome {
        status: SolveStatus::Optimal,
        x,
        duals: Some(duals),
        iterations: tab.iterations,
        message: String::new(),
    }
}
