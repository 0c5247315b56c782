use eevc_core::mathprog::{
    parse_mps, solve_lp, solve_milp_with, write_mps, ObjSense, Program, Relation, SolveStatus,
    SolverOptions, VarId,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense copy of a program: rows `a·x (rel) b`, plus box bounds.
struct Dense {
    rows: Vec<(Vec<f64>, Relation, f64)>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    c: Vec<f64>,
    max: bool,
}

fn random_lp(rng: &mut ChaCha8Rng) -> (Program, Dense) {
    let n = rng.gen_range(2..=4);
    let m = rng.gen_range(1..=4);
    let max = rng.gen_bool(0.5);
    let mut p = Program::new(if max { ObjSense::Max } else { ObjSense::Min });
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut rows = Vec::new();
    for j in 0..n {
        let (l, u) = match rng.gen_range(0..4) {
            0 => (0.0, rng.gen_range(1..6) as f64),
            1 => (-(rng.gen_range(1..6) as f64), rng.gen_range(0..6) as f64),
            2 => {
                let v = rng.gen_range(-2..3) as f64;
                (v, v)
            }
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        };
        let v = p.add_continuous(format!("x{j}"), l, u).unwrap();
        if l.is_infinite() {
            // free column, boxed by explicit rows so the LP stays bounded
            p.add_constraint(format!("hi{j}"), vec![(v, 1.0)], Relation::Le, 4.0)
                .unwrap();
            p.add_constraint(format!("lo{j}"), vec![(v, 1.0)], Relation::Ge, -4.0)
                .unwrap();
            let mut a = vec![0.0; n];
            a[j] = 1.0;
            rows.push((a.clone(), Relation::Le, 4.0));
            rows.push((a, Relation::Ge, -4.0));
        }
        lower.push(l);
        upper.push(u);
    }
    for i in 0..m {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-3..=3) as f64).collect();
        let rel = match rng.gen_range(0..5) {
            0 => Relation::Eq,
            1 | 2 => Relation::Ge,
            _ => Relation::Le,
        };
        let b = rng.gen_range(-4..=6) as f64;
        let terms = a.iter().enumerate().map(|(j, &v)| (VarId(j), v)).collect();
        p.add_constraint(format!("r{i}"), terms, rel, b).unwrap();
        rows.push((a, rel, b));
    }
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-5..=5) as f64).collect();
    p.set_objective(c.iter().enumerate().map(|(j, &v)| (VarId(j), v)).collect())
        .unwrap();
    (
        p,
        Dense {
            rows,
            lower,
            upper,
            c,
            max,
        },
    )
}

fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-9 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for k in col..n {
                    a[r][k] -= f * a[col][k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn feasible(d: &Dense, x: &[f64]) -> bool {
    let tol = 1e-9;
    x.iter()
        .zip(d.lower.iter().zip(&d.upper))
        .all(|(&v, (&l, &u))| v >= l - tol && v <= u + tol)
        && d.rows.iter().all(|(a, rel, b)| {
            let act: f64 = a.iter().zip(x).map(|(a, x)| a * x).sum();
            match rel {
                Relation::Le => act <= b + tol,
                Relation::Ge => act >= b - tol,
                Relation::Eq => (act - b).abs() <= tol,
            }
        })
}

/// Best objective over all basic points: every choice of `n` tight
/// hyperplanes among rows and finite bounds.
fn vertex_oracle(d: &Dense) -> Option<f64> {
    let n = d.c.len();
    let mut planes: Vec<(Vec<f64>, f64)> = d.rows.iter().map(|(a, _, b)| (a.clone(), *b)).collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        for bound in [d.lower[j], d.upper[j]] {
            if bound.is_finite() {
                planes.push((e.clone(), bound));
            }
        }
    }
    let k = planes.len();
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let a = idx.iter().map(|&i| planes[i].0.clone()).collect();
        let b = idx.iter().map(|&i| planes[i].1).collect();
        if let Some(x) = gauss(a, b) {
            if feasible(d, &x) {
                let obj: f64 = d.c.iter().zip(&x).map(|(c, x)| c * x).sum();
                best = Some(match best {
                    None => obj,
                    Some(b) if d.max => b.max(obj),
                    Some(b) => b.min(obj),
                });
            }
        }
        // next combination
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < k - n + i {
                idx[i] += 1;
                for j in i + 1..n {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

#[test]
fn random_lps_match_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut optimal = 0;
    for case in 0..20 {
        let (p, d) = random_lp(&mut rng);
        let s = solve_lp(&p).unwrap();
        match vertex_oracle(&d) {
            Some(best) => {
                optimal += 1;
                assert_eq!(s.status, SolveStatus::Optimal, "case {case}");
                assert!(
                    (s.objective - best).abs() <= 1e-8 * (1.0 + best.abs()),
                    "case {case}: {} vs {best}",
                    s.objective
                );
                assert!(feasible(&d, &s.values), "case {case}");
            }
            None => assert_eq!(s.status, SolveStatus::Infeasible, "case {case}"),
        }
    }
    assert!(optimal >= 8, "too few feasible cases: {optimal}");
}

fn random_binary_program(rng: &mut ChaCha8Rng) -> Program {
    let n = rng.gen_range(4..=12);
    let mut p = Program::new(if rng.gen_bool(0.5) {
        ObjSense::Max
    } else {
        ObjSense::Min
    });
    let vars: Vec<VarId> = (0..n)
        .map(|j| p.add_binary(format!("b{j}")).unwrap())
        .collect();
    for i in 0..rng.gen_range(1..=5) {
        let mut terms = Vec::new();
        for &v in &vars {
            if rng.gen_bool(0.6) {
                terms.push((v, rng.gen_range(-4..=6) as f64));
            }
        }
        let rel = match rng.gen_range(0..6) {
            0 => Relation::Eq,
            1 | 2 => Relation::Ge,
            _ => Relation::Le,
        };
        let rhs = rng.gen_range(-2..=n) as f64;
        p.add_constraint(format!("r{i}"), terms, rel, rhs).unwrap();
    }
    p.set_objective(vars.iter().map(|&v| (v, rng.gen_range(-6..=6) as f64)).collect())
        .unwrap();
    p
}

fn enumerate(p: &Program) -> Option<f64> {
    let n = p.variables().len();
    let max = p.objective().sense == ObjSense::Max;
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << n) {
        let x: Vec<f64> = (0..n).map(|j| f64::from((mask >> j) & 1)).collect();
        if p.is_feasible(&x, 1e-9) {
            let v = p.objective_value(&x);
            best = Some(match best {
                None => v,
                Some(b) if max => b.max(v),
                Some(b) => b.min(v),
            });
        }
    }
    best
}

#[test]
fn binary_programs_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut solvable = 0;
    for case in 0..20 {
        let p = random_binary_program(&mut rng);
        let truth = enumerate(&p);
        solvable += usize::from(truth.is_some());
        for propagate in [true, false] {
            let opts = SolverOptions {
                propagate,
                ..SolverOptions::default()
            };
            let s = solve_milp_with(&p, &opts);
            match truth {
                Some(best) => {
                    assert_eq!(s.status, SolveStatus::Optimal, "case {case} propagate {propagate}");
                    assert!(
                        (s.objective - best).abs() <= 1e-6,
                        "case {case} propagate {propagate}: {} vs {best}",
                        s.objective
                    );
                    assert!(p.is_feasible(&s.values, 1e-6));
                    assert!(s.values.iter().all(|&v| v == 0.0 || v == 1.0));
                }
                None => assert_eq!(s.status, SolveStatus::Infeasible, "case {case}"),
            }
        }
    }
    assert!(solvable >= 8, "too few feasible cases: {solvable}");
}

#[test]
fn node_limit_reports_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = random_binary_program(&mut rng);
    let opts = SolverOptions {
        node_limit: 0,
        ..SolverOptions::default()
    };
    assert_eq!(solve_milp_with(&p, &opts).status, SolveStatus::Limit);
}

#[test]
fn random_programs_survive_mps() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let p = random_binary_program(&mut rng);
        let text = write_mps(&p);
        assert_eq!(parse_mps(&text).unwrap(), p);
    }
}
