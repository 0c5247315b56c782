//! Fixed-format MPS export, solution import and the external-solver hook.
//!
//! Names that do not fit the 8-character fields are replaced wholesale by
//! generated ones (`X0000001` for columns, `R0000001` for rows); the mapping is
//! written next to the model as `<path>.names`, one `kind short original`
//! line per entry.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use super::{
    ObjSense, Program, ProgramError, Relation, Solution, SolveStatus, VarId, VarKind, Variable,
};

/// Environment variable holding the external solver command template. The
/// placeholders `{mps}` and `{sol}` are replaced by the model and solution
/// paths; the command runs under `sh -c`.
pub const SOLVER_ENV: &str = "EEVC_SOLVER_CMD";

const OBJ_ROW: &str = "OBJ";

/// Names as they appear in the MPS file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MpsNames {
    pub columns: Vec<String>,
    pub rows: Vec<String>,
    /// True when generated names replace the program's own.
    pub mapped: bool,
}

fn fits(name: &str) -> bool {
    !name.is_empty() && name.len() <= 8 && !name.chars().any(char::is_whitespace)
}

pub fn mps_names(p: &Program) -> MpsNames {
    let cols: Vec<&str> = p.variables().iter().map(|v| v.name.as_str()).collect();
    let rows: Vec<&str> = p.constraints().iter().map(|c| c.name.as_str()).collect();
    let mut seen = HashSet::new();
    let rows_ok = rows
        .iter()
        .all(|r| fits(r) && *r != OBJ_ROW && seen.insert(*r));
    if cols.iter().all(|c| fits(c)) && rows_ok {
        return MpsNames {
            columns: cols.iter().map(|s| s.to_string()).collect(),
            rows: rows.iter().map(|s| s.to_string()).collect(),
            mapped: false,
        };
    }
    MpsNames {
        columns: (1..=cols.len()).map(|i| format!("X{i:07}")).collect(),
        rows: (1..=rows.len()).map(|i| format!("R{i:07}")).collect(),
        mapped: true,
    }
}

/// Shortest representation of `x` that fits a 12-character field.
fn num(x: f64) -> String {
    let plain = format!("{x}");
    if plain.len() <= 12 {
        return plain;
    }
    for prec in (0..=11).rev() {
        let s = format!("{x:.prec$e}");
        if s.len() <= 12 {
            return s;
        }
    }
    format!("{x:e}")
}

fn entry(out: &mut String, code: &str, a: &str, b: &str, value: Option<f64>) {
    let mut line = format!(" {code:<2} {a:<8}  {b:<8}");
    if let Some(v) = value {
        let _ = write!(line, "  {:>12}", num(v));
    }
    out.push_str(line.trim_end());
    out.push('\n');
}

/// Renders `p` as fixed-format MPS.
pub fn write_mps(p: &Program) -> String {
    let names = mps_names(p);
    let mut out = String::new();
    out.push_str("NAME          EEVC\n");
    out.push_str("OBJSENSE\n");
    out.push_str(match p.objective().sense {
        ObjSense::Max => "    MAX\n",
        ObjSense::Min => "    MIN\n",
    });
    out.push_str("ROWS\n");
    entry(&mut out, "N", OBJ_ROW, "", None);
    for (c, name) in p.constraints().iter().zip(&names.rows) {
        let code = match c.relation {
            Relation::Le => "L",
            Relation::Ge => "G",
            Relation::Eq => "E",
        };
        entry(&mut out, code, name, "", None);
    }

    let mut by_col: Vec<Vec<(&str, f64)>> = vec![Vec::new(); p.variables().len()];
    for &(v, a) in &p.objective().terms {
        by_col[v.0].push((OBJ_ROW, a));
    }
    for (c, name) in p.constraints().iter().zip(&names.rows) {
        for &(v, a) in &c.terms {
            by_col[v.0].push((name, a));
        }
    }
    out.push_str("COLUMNS\n");
    for (col, cname) in by_col.iter().zip(&names.columns) {
        if col.is_empty() {
            entry(&mut out, "", cname, OBJ_ROW, Some(0.0));
        }
        for &(row, a) in col {
            entry(&mut out, "", cname, row, Some(a));
        }
    }

    out.push_str("RHS\n");
    for (c, name) in p.constraints().iter().zip(&names.rows) {
        if c.rhs != 0.0 {
            entry(&mut out, "", "RHS", name, Some(c.rhs));
        }
    }

    out.push_str("BOUNDS\n");
    for (v, cname) in p.variables().iter().zip(&names.columns) {
        let (l, u) = (v.lower, v.upper);
        if v.kind == VarKind::Binary {
            entry(&mut out, "BV", "BND", cname, None);
        } else if l == u {
            entry(&mut out, "FX", "BND", cname, Some(l));
        } else if l == f64::NEG_INFINITY && u == f64::INFINITY {
            entry(&mut out, "FR", "BND", cname, None);
        } else {
            if l == f64::NEG_INFINITY {
                entry(&mut out, "MI", "BND", cname, None);
            } else if l != 0.0 {
                entry(&mut out, "LO", "BND", cname, Some(l));
            }
            if u != f64::INFINITY {
                entry(&mut out, "UP", "BND", cname, Some(u));
            }
        }
    }
    out.push_str("ENDATA\n");
    out
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".names");
    PathBuf::from(s)
}

/// Writes `p` to `path`, plus the `<path>.names` mapping when names had to be
/// shortened.
pub fn export_mps(p: &Program, path: &Path) -> Result<MpsNames, ProgramError> {
    let names = mps_names(p);
    std::fs::write(path, write_mps(p))?;
    let side = sidecar_path(path);
    if names.mapped {
        let mut text = String::new();
        for (short, v) in names.columns.iter().zip(p.variables()) {
            let _ = writeln!(text, "col {short} {}", v.name);
        }
        for (short, c) in names.rows.iter().zip(p.constraints()) {
            let _ = writeln!(text, "row {short} {}", c.name);
        }
        std::fs::write(side, text)?;
    } else if side.exists() {
        std::fs::remove_file(side)?;
    }
    Ok(names)
}

fn bad(msg: impl Into<String>) -> ProgramError {
    ProgramError::MalformedMps(msg.into())
}

fn parse_num(s: &str) -> Result<f64, ProgramError> {
    s.parse().map_err(|_| bad(format!("bad number `{s}`")))
}

/// Reads fixed-format MPS as produced by [`write_mps`]. Names are taken as
/// they appear in the file.
pub fn parse_mps(text: &str) -> Result<Program, ProgramError> {
    let mut section = "";
    let mut sense = ObjSense::Min;
    let mut obj_row: Option<String> = None;
    let mut rows: Vec<(String, Relation)> = Vec::new();
    let mut row_index: HashMap<String, usize> = HashMap::new();
    let mut cols: Vec<String> = Vec::new();
    let mut col_index: HashMap<String, usize> = HashMap::new();
    let mut obj: BTreeMap<usize, f64> = BTreeMap::new();
    let mut terms: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut bounds: Vec<(f64, f64, bool)> = Vec::new();

    for raw in text.lines() {
        if raw.trim().is_empty() || raw.starts_with('*') {
            continue;
        }
        let f: Vec<&str> = raw.split_whitespace().collect();
        if !raw.starts_with(' ') {
            section = match f[0] {
                "NAME" | "ROWS" | "COLUMNS" | "RHS" | "BOUNDS" | "RANGES" => f[0],
                "OBJSENSE" => {
                    if let Some(s) = f.get(1) {
                        sense = parse_sense(s)?;
                    }
                    "OBJSENSE"
                }
                "ENDATA" => break,
                other => return Err(bad(format!("unknown section `{other}`"))),
            };
            continue;
        }
        match section {
            "OBJSENSE" => sense = parse_sense(f[0])?,
            "ROWS" => {
                let [code, name] = f[..] else {
                    return Err(bad(format!("bad ROWS line `{raw}`")));
                };
                let rel = match code {
                    "N" => {
                        if obj_row.is_none() {
                            obj_row = Some(name.to_string());
                        }
                        continue;
                    }
                    "L" => Relation::Le,
                    "G" => Relation::Ge,
                    "E" => Relation::Eq,
                    _ => return Err(bad(format!("bad row type `{code}`"))),
                };
                row_index.insert(name.to_string(), rows.len());
                rows.push((name.to_string(), rel));
                terms.push(Vec::new());
                rhs.push(0.0);
            }
            "COLUMNS" => {
                if f.len() < 3 || f.len().is_multiple_of(2) {
                    return Err(bad(format!("bad COLUMNS line `{raw}`")));
                }
                if f.contains(&"'MARKER'") {
                    continue;
                }
                let j = *col_index.entry(f[0].to_string()).or_insert_with(|| {
                    cols.push(f[0].to_string());
                    bounds.push((0.0, f64::INFINITY, false));
                    cols.len() - 1
                });
                for pair in f[1..].chunks(2) {
                    let a = parse_num(pair[1])?;
                    if Some(pair[0]) == obj_row.as_deref() {
                        *obj.entry(j).or_insert(0.0) += a;
                    } else {
                        let &i = row_index
                            .get(pair[0])
                            .ok_or_else(|| bad(format!("unknown row `{}`", pair[0])))?;
                        terms[i].push((j, a));
                    }
                }
            }
            "RHS" => {
                if f.len() < 3 || f.len().is_multiple_of(2) {
                    return Err(bad(format!("bad RHS line `{raw}`")));
                }
                for pair in f[1..].chunks(2) {
                    let &i = row_index
                        .get(pair[0])
                        .ok_or_else(|| bad(format!("unknown row `{}`", pair[0])))?;
                    rhs[i] = parse_num(pair[1])?;
                }
            }
            "BOUNDS" => {
                if f.len() < 3 {
                    return Err(bad(format!("bad BOUNDS line `{raw}`")));
                }
                let &j = col_index
                    .get(f[2])
                    .ok_or_else(|| bad(format!("unknown column `{}`", f[2])))?;
                let value = f.get(3).map(|s| parse_num(s)).transpose()?;
                let need = || value.ok_or_else(|| bad(format!("missing bound value `{raw}`")));
                let b = &mut bounds[j];
                match f[0] {
                    "UP" => b.1 = need()?,
                    "LO" => b.0 = need()?,
                    "FX" => {
                        let v = need()?;
                        *b = (v, v, false);
                    }
                    "FR" => *b = (f64::NEG_INFINITY, f64::INFINITY, false),
                    "MI" => b.0 = f64::NEG_INFINITY,
                    "PL" => b.1 = f64::INFINITY,
                    "BV" => *b = (0.0, 1.0, true),
                    other => return Err(bad(format!("unsupported bound type `{other}`"))),
                }
            }
            "NAME" => {}
            s => return Err(bad(format!("unsupported section `{s}`"))),
        }
    }

    let mut p = Program::new(sense);
    for (name, &(l, u, binary)) in cols.iter().zip(&bounds) {
        let kind = if binary {
            VarKind::Binary
        } else {
            VarKind::Continuous
        };
        if l > u {
            return Err(bad(format!("empty bounds for `{name}`")));
        }
        let id = VarId(p.variables.len());
        p.names.insert(name.clone(), id);
        p.variables.push(Variable {
            name: name.clone(),
            kind,
            lower: l,
            upper: u,
        });
        p.priority.push(0);
    }
    for (i, (name, rel)) in rows.into_iter().enumerate() {
        let t = terms[i].iter().map(|&(j, a)| (VarId(j), a)).collect();
        p.add_constraint(name, t, rel, rhs[i])?;
    }
    p.set_objective(obj.into_iter().map(|(j, a)| (VarId(j), a)).collect())?;
    Ok(p)
}

fn parse_sense(s: &str) -> Result<ObjSense, ProgramError> {
    match s.to_ascii_uppercase().as_str() {
        "MAX" | "MAXIMIZE" => Ok(ObjSense::Max),
        "MIN" | "MINIMIZE" => Ok(ObjSense::Min),
        _ => Err(bad(format!("bad OBJSENSE `{s}`"))),
    }
}

/// Reads `name value` lines into a solution of `p`. Both original and MPS
/// names are accepted; variables not listed are taken as zero. The point must
/// be feasible to 1e-6.
pub fn import_solution(p: &Program, path: &Path) -> Result<Solution, ProgramError> {
    let text = std::fs::read_to_string(path)?;
    import_solution_str(p, &text)
}

pub(crate) fn import_solution_str(p: &Program, text: &str) -> Result<Solution, ProgramError> {
    let names = mps_names(p);
    let short: HashMap<&str, usize> = names
        .columns
        .iter()
        .enumerate()
        .map(|(j, s)| (s.as_str(), j))
        .collect();
    let mut x = vec![0.0; p.variables().len()];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let malformed = || ProgramError::MalformedSolution {
            line: i + 1,
            text: line.to_string(),
        };
        let [name, value] = f[..] else {
            return Err(malformed());
        };
        let value: f64 = value.parse().map_err(|_| malformed())?;
        if !value.is_finite() {
            return Err(malformed());
        }
        let j = p
            .var(name)
            .map(|v| v.0)
            .or_else(|| short.get(name).copied())
            .ok_or_else(|| ProgramError::UnknownName(name.to_string()))?;
        x[j] = value;
    }
    let (amount, name) = p.max_violation(&x);
    if amount > 1e-6 {
        return Err(ProgramError::InfeasibleImport { name, amount });
    }
    for (v, xv) in p.variables().iter().zip(x.iter_mut()) {
        if v.kind == VarKind::Binary {
            let r = xv.round();
            if (*xv - r).abs() > 1e-6 {
                return Err(ProgramError::InfeasibleImport {
                    name: v.name.clone(),
                    amount: (*xv - r).abs(),
                });
            }
            *xv = r;
        }
    }
    let objective = p.objective_value(&x);
    Ok(Solution {
        status: SolveStatus::Optimal,
        values: x,
        objective,
        bound: objective,
        gap: 0.0,
        nodes: 0,
        iterations: 0,
        duals: None,
        message: "imported".into(),
    })
}

/// Solves `p` with the command named by [`SOLVER_ENV`], using `workdir` for
/// the model and solution files.
pub fn solve_external(p: &Program, workdir: &Path) -> Result<Solution, ProgramError> {
    let template = std::env::var(SOLVER_ENV)
        .map_err(|_| ProgramError::External(format!("{SOLVER_ENV} is not set")))?;
    let mps = workdir.join("model.mps");
    let sol = workdir.join("model.sol");
    export_mps(p, &mps)?;
    if sol.exists() {
        std::fs::remove_file(&sol)?;
    }
    let cmd = template
        .replace("{mps}", &mps.to_string_lossy())
        .replace("{sol}", &sol.to_string_lossy());
    let status = Command::new("sh").arg("-c").arg(&cmd).status()?;
    if !status.success() {
        return Err(ProgramError::External(format!("`{cmd}` exited with {status}")));
    }
    if !sol.exists() {
        return Err(ProgramError::External(format!(
            "`{cmd}` wrote no solution file"
        )));
    }
    import_solution(p, &sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathprog::solve_lp;

    fn small() -> Program {
        let mut p = Program::new(ObjSense::Max);
        let x = p.add_continuous("x", 0.0, 4.0).unwrap();
        let y = p.add_continuous("y", -1.0, f64::INFINITY).unwrap();
        let b = p.add_binary("b").unwrap();
        p.add_constraint("c1", vec![(x, 1.0), (y, 2.0)], Relation::Le, 6.0)
            .unwrap();
        p.add_constraint("c2", vec![(x, 1.0), (b, -1.0)], Relation::Ge, -0.5)
            .unwrap();
        p.set_objective(vec![(x, 1.0), (y, 1.0), (b, 0.25)]).unwrap();
        p
    }

    #[test]
    fn fixed_columns() {
        let text = write_mps(&small());
        assert!(text.contains(" L  c1\n"));
        assert!(text.contains("    x         c1                   1\n"));
        assert!(text.contains(" BV BND       b\n"));
        assert!(text.contains(" LO BND       y                   -1\n"));
        assert!(text.starts_with("NAME          EEVC\nOBJSENSE\n    MAX\n"));
    }

    #[test]
    fn parse_round_trip() {
        let p = small();
        let q = parse_mps(&write_mps(&p)).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn long_names_are_mapped() {
        let mut p = Program::new(ObjSense::Min);
        let v = p.add_continuous("a_rather_long_name", 0.0, 1.0).unwrap();
        p.add_constraint("row", vec![(v, 1.0)], Relation::Ge, 0.5)
            .unwrap();
        p.set_objective(vec![(v, 1.0)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mps");
        let names = export_mps(&p, &path).unwrap();
        assert!(names.mapped);
        assert_eq!(names.columns, vec!["X0000001"]);
        let side = std::fs::read_to_string(dir.path().join("m.mps.names")).unwrap();
        assert_eq!(side, "col X0000001 a_rather_long_name\nrow R0000001 row\n");
        let s = import_solution_str(&p, "X0000001 0.5\n").unwrap();
        assert_eq!(s.objective, 0.5);
    }

    #[test]
    fn import_matches_builtin_objective() {
        let mut p = Program::new(ObjSense::Max);
        let x = p.add_continuous("x", 0.0, f64::INFINITY).unwrap();
        p.add_constraint("c", vec![(x, 1.0)], Relation::Le, 3.0)
            .unwrap();
        p.set_objective(vec![(x, 1.0)]).unwrap();
        let built = solve_lp(&p).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_mps(&p, &dir.path().join("m.mps")).unwrap();
        let sol = dir.path().join("m.sol");
        std::fs::write(&sol, "x 3\n").unwrap();
        let s = import_solution(&p, &sol).unwrap();
        assert!((s.objective - built.objective).abs() < 1e-12);
    }

    #[test]
    fn import_errors() {
        let p = small();
        assert!(matches!(
            import_solution_str(&p, "zz 1\n"),
            Err(ProgramError::UnknownName(_))
        ));
        assert!(matches!(
            import_solution_str(&p, "x one\n"),
            Err(ProgramError::MalformedSolution { line: 1, .. })
        ));
        assert!(matches!(
            import_solution_str(&p, "x 9\n"),
            Err(ProgramError::InfeasibleImport { .. })
        ));
    }

    #[test]
    fn twelve_char_numbers() {
        assert_eq!(num(1.0), "1");
        assert_eq!(num(-0.5), "-0.5");
        let s = num(1.0 / 192.0);
        assert!(s.len() <= 12, "{s}");
        assert!((s.parse::<f64>().unwrap() - 1.0 / 192.0).abs() < 1e-10);
    }
}
