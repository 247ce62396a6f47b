use std::fmt::Write;

use super::{MilpModel, Relation, Sense, VarKind};

/// Names usable in LP files: letters, digits and a few punctuation marks.
fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "_.!#$%&(),;?@{}~".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn col(model: &MilpModel, idx: usize) -> String {
    format!("x{idx}_{}", sanitize(&model.vars()[idx].name))
}

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

pub(super) fn write_lp(model: &MilpModel) -> String {
    let mut out = String::new();
    out.push_str(match model.sense() {
        Sense::Maximize => "Maximize\n",
        Sense::Minimize => "Minimize\n",
    });
    out.push_str(" obj:");
    let zero_term = if model.num_vars() > 0 {
        format!(" 0 {}", col(model, 0))
    } else {
        " 0".to_string()
    };
    if model.objective().terms.is_empty() {
        out.push_str(&zero_term);
    }
    for (v, c) in &model.objective().terms {
        let _ = write!(
            out,
            " {} {} {}",
            if *c < 0.0 { "-" } else { "+" },
            num(c.abs()),
            col(model, v.0)
        );
    }
    out.push_str("\nSubject To\n");
    for (i, c) in model.constraints().iter().enumerate() {
        let _ = write!(out, " c{i}_{}:", sanitize(&c.name));
        if c.expr.terms.is_empty() {
            out.push_str(&zero_term);
        }
        for (v, k) in &c.expr.terms {
            let _ = write!(
                out,
                " {} {} {}",
                if *k < 0.0 { "-" } else { "+" },
                num(k.abs()),
                col(model, v.0)
            );
        }
        let rel = match c.rel {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        };
        let _ = writeln!(out, " {rel} {}", num(c.rhs));
    }
    out.push_str("Bounds\n");
    for (i, v) in model.vars().iter().enumerate() {
        let _ = writeln!(out, " {} <= {} <= {}", num(v.lo), col(model, i), num(v.hi));
    }
    let ints: Vec<String> = (0..model.num_vars())
        .filter(|i| model.vars()[*i].kind != VarKind::Continuous)
        .map(|i| col(model, i))
        .collect();
    if !ints.is_empty() {
        out.push_str("General\n");
        for name in ints {
            let _ = writeln!(out, " {name}");
        }
    }
    out.push_str("End\n");
    out
}

#[cfg(test)]
mod tests {
    use crate::milp::{LinExpr, MilpModel, Relation, Sense};

    #[test]
    fn writes_sections() {
        let mut m = MilpModel::new();
        let x = m.binary("delta[e1]").unwrap();
        let y = m.continuous("P[e1,a]", -2.0, 2.0).unwrap();
        m.constrain("flow", LinExpr::var(y).with(x, -2.0), Relation::Le, 0.0);
        m.set_objective(Sense::Maximize, LinExpr::var(y));
        let lp = m.to_lp_string();
        assert!(lp.starts_with("Maximize"));
        assert!(lp.contains("Subject To"));
        assert!(lp.contains("x0_delta_e1_"));
        assert!(lp.contains("General"));
        assert!(lp.trim_end().ends_with("End"));
    }
}
