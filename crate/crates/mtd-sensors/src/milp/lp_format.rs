//! CPLEX-LP text export, readable by mainstream external solvers.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::{MilpModel, Relation, VarKind};

/// Deterministically sanitizes names into the LP-format identifier alphabet,
/// de-duplicating with numeric suffixes.
fn sanitized_names(model: &MilpModel) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut out = Vec::with_capacity(model.vars.len());
    for v in &model.vars {
        let mut name: String = v
            .name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
            .collect();
        if name.is_empty() || name.chars().next().unwrap().is_ascii_digit() || name.starts_with('e') || name.starts_with('E') {
            name.insert(0, 'x');
        }
        let n = seen.entry(name.clone()).or_insert(0);
        if *n > 0 {
            name = format!("{name}_{n}");
        }
        *n += 1;
        out.push(name);
    }
    out
}

fn write_expr(out: &mut String, terms: impl Iterator<Item = (usize, f64)>, names: &[String]) {
    let mut first = true;
    for (var, coef) in terms {
        if coef == 0.0 {
            continue;
        }
        if first {
            if coef < 0.0 {
                out.push_str("- ");
            }
            first = false;
        } else {
            out.push_str(if coef < 0.0 { " - " } else { " + " });
        }
        let mag = coef.abs();
        if (mag - 1.0).abs() < f64::EPSILON {
            out.push_str(&names[var]);
        } else {
            out.push_str(&format!("{mag} {}", names[var]));
        }
    }
    if first {
        out.push('0');
    }
}

/// Renders the model in CPLEX-LP text format.
pub fn write_lp(model: &MilpModel) -> String {
    let names = sanitized_names(model);
    let mut out = String::new();
    out.push_str("Minimize\n obj: ");
    write_expr(&mut out, model.objective.iter().map(|(id, c)| (id.0, *c)), &names);
    out.push_str("\nSubject To\n");
    for (i, con) in model.constraints.iter().enumerate() {
        let label = if con.name.is_empty() { format!("c{i}") } else { con.name.clone() };
        out.push_str(&format!(" {label}: "));
        write_expr(&mut out, con.terms.iter().map(|(id, c)| (id.0, *c)), &names);
        let rel = match con.rel {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        };
        out.push_str(&format!(" {rel} {}\n", con.rhs));
    }
    out.push_str("Bounds\n");
    for (v, name) in model.vars.iter().zip(&names) {
        if v.kind == VarKind::Binary {
            continue;
        }
        match (v.lb.is_finite(), v.ub.is_finite()) {
            (true, true) => out.push_str(&format!(" {} <= {name} <= {}\n", v.lb, v.ub)),
            (true, false) => {
                if v.lb != 0.0 {
                    out.push_str(&format!(" {name} >= {}\n", v.lb));
                }
            }
            (false, true) => out.push_str(&format!(" -inf <= {name} <= {}\n", v.ub)),
            (false, false) => out.push_str(&format!(" {name} free\n")),
        }
    }
    let binaries = model.binaries();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for b in &binaries {
            out.push_str(&format!(" {}\n", names[b.0]));
        }
    }
    out.push_str("End\n");
    out
}

/// Writes the model to `path` in CPLEX-LP text format.
pub fn export_lp_file(model: &MilpModel, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(write_lp(model).as_bytes())
}
